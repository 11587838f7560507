#include "lucf/metrics/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace lucf {

namespace {

void require_same_shape(const Mask& a, const Mask& b, const char* who) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument(std::string(who) + ": mask shapes " + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " and " + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + " differ");
  }
}

std::pair<double, double> overlap(const Mask& a, const Mask& b) {
  double inter = 0.0, total = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    inter += (a.values[i] && b.values[i]) ? 1.0 : 0.0;
    total += (a.values[i] ? 1.0 : 0.0) + (b.values[i] ? 1.0 : 0.0);
  }
  return {inter, total};
}

constexpr double kInf = std::numeric_limits<double>::infinity();

/// One-dimensional squared-distance transform of f sampled at i * step.
void edt_1d(const std::vector<double>& f, double step, std::vector<double>& out, std::vector<std::int64_t>& v,
            std::vector<double>& z) {
  const auto n = static_cast<std::int64_t>(f.size());
  std::int64_t k = -1;
  auto pos = [&](std::int64_t i) { return static_cast<double>(i) * step; };
  for (std::int64_t q = 0; q < n; ++q) {
    if (!std::isfinite(f[static_cast<std::size_t>(q)])) continue;
    while (k >= 0) {
      const std::int64_t p = v[static_cast<std::size_t>(k)];
      const double s = ((f[static_cast<std::size_t>(q)] + pos(q) * pos(q)) - (f[static_cast<std::size_t>(p)] + pos(p) * pos(p))) /
                       (2.0 * (pos(q) - pos(p)));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = k == 0 ? -kInf : [&] {
      const std::int64_t p = v[static_cast<std::size_t>(k - 1)];
      return ((f[static_cast<std::size_t>(q)] + pos(q) * pos(q)) - (f[static_cast<std::size_t>(p)] + pos(p) * pos(p))) /
             (2.0 * (pos(q) - pos(p)));
    }();
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }
  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (j < k && z[static_cast<std::size_t>(j + 1)] < pos(q)) ++j;
    const std::int64_t p = v[static_cast<std::size_t>(j)];
    const double d = pos(q) - pos(p);
    out[static_cast<std::size_t>(q)] = d * d + f[static_cast<std::size_t>(p)];
  }
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

std::int64_t Mask::count() const {
  std::int64_t n = 0;
  for (auto v : values) n += v ? 1 : 0;
  return n;
}

Mask class_mask(const LabelMap& labels, std::int64_t b, std::int32_t c) {
  Mask m(labels.height, labels.width);
  const auto off = static_cast<std::size_t>(b * labels.height * labels.width);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = labels.values[off + i] == c ? 1 : 0;
  return m;
}

double dsc(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt, "dsc");
  const auto [inter, total] = overlap(pred, gt);
  return total == 0.0 ? 1.0 : 2.0 * inter / total;
}

double iou(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt, "iou");
  const auto [inter, total] = overlap(pred, gt);
  const double uni = total - inter;
  return uni == 0.0 ? 1.0 : inter / uni;
}

std::vector<std::pair<std::int64_t, std::int64_t>> boundary_pixels(const Mask& m) {
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  for (std::int64_t y = 0; y < m.height; ++y)
    for (std::int64_t x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      bool edge = false;
      for (int dy = -1; dy <= 1 && !edge; ++dy)
        for (int dx = -1; dx <= 1 && !edge; ++dx) {
          const std::int64_t yy = y + dy, xx = x + dx;
          edge = yy < 0 || xx < 0 || yy >= m.height || xx >= m.width || !m.at(yy, xx);
        }
      if (edge) out.emplace_back(y, x);
    }
  return out;
}

std::vector<double> distance_transform(const Mask& sites, Spacing spacing) {
  const std::int64_t H = sites.height, W = sites.width;
  std::vector<double> grid(static_cast<std::size_t>(H * W));
  const std::int64_t n = std::max(H, W);
  std::vector<double> f, out;
  std::vector<std::int64_t> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n) + 1);
  f.resize(static_cast<std::size_t>(H));
  out.resize(static_cast<std::size_t>(H));
  for (std::int64_t x = 0; x < W; ++x) {
    for (std::int64_t y = 0; y < H; ++y) f[static_cast<std::size_t>(y)] = sites.at(y, x) ? 0.0 : kInf;
    edt_1d(f, spacing.y, out, v, z);
    for (std::int64_t y = 0; y < H; ++y) grid[static_cast<std::size_t>(y * W + x)] = out[static_cast<std::size_t>(y)];
  }
  f.resize(static_cast<std::size_t>(W));
  out.resize(static_cast<std::size_t>(W));
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) f[static_cast<std::size_t>(x)] = grid[static_cast<std::size_t>(y * W + x)];
    edt_1d(f, spacing.x, out, v, z);
    for (std::int64_t x = 0; x < W; ++x) grid[static_cast<std::size_t>(y * W + x)] = std::sqrt(out[static_cast<std::size_t>(x)]);
  }
  return grid;
}

double percentile_of(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile_of: no values");
  if (!(q > 0.0 && q <= 100.0)) throw std::invalid_argument("percentile must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return values[lo] + t * (values[hi] - values[lo]);
}

double hausdorff(const Mask& pred, const Mask& gt, double percentile, Spacing spacing) {
  require_same_shape(pred, gt, "hausdorff");
  if (!(percentile > 0.0 && percentile <= 100.0)) throw std::invalid_argument("hausdorff: percentile must be in (0, 100]");
  const auto bp = boundary_pixels(pred), bg = boundary_pixels(gt);
  if (bp.empty() && bg.empty()) return 0.0;
  if (bp.empty() || bg.empty()) {
    const double h = static_cast<double>(pred.height) * spacing.y, w = static_cast<double>(pred.width) * spacing.x;
    return std::sqrt(h * h + w * w);
  }
  auto directed = [&](const std::vector<std::pair<std::int64_t, std::int64_t>>& from,
                      const std::vector<std::pair<std::int64_t, std::int64_t>>& to) {
    Mask sites(pred.height, pred.width);
    for (const auto& [y, x] : to) sites.at(y, x) = 1;
    const auto dt = distance_transform(sites, spacing);
    std::vector<double> d;
    d.reserve(from.size());
    for (const auto& [y, x] : from) d.push_back(dt[static_cast<std::size_t>(y * pred.width + x)]);
    return percentile_of(std::move(d), percentile);
  };
  return std::max(directed(bp, bg), directed(bg, bp));
}

std::string MetricReport::hd_label() const {
  return "hd" + fmt(hd_percentile);
}

nlohmann::json MetricReport::summary_json() const {
  nlohmann::json flagged = nlohmann::json::array();
  for (const auto& r : rows)
    if (r.both_empty) flagged.push_back({{"case", r.case_index}, {"class", r.class_index}});
  return {{"num_cases", num_cases},
          {"num_classes", num_classes},
          {"hd_variant", hd_label()},
          {"background_excluded", true},
          {"per_class", {{"dsc", per_class_dsc}, {"iou", per_class_iou}, {hd_label(), per_class_hd}}},
          {"mean_dsc", mean_dsc},
          {"mean_iou", mean_iou},
          {"mean_" + hd_label(), mean_hd},
          {"both_empty", flagged}};
}

std::string MetricReport::csv() const {
  std::string s = "case,class,dsc,iou," + hd_label() + ",both_empty\n";
  for (const auto& r : rows) {
    s += std::to_string(r.case_index) + "," + std::to_string(r.class_index) + "," + fmt(r.dsc) + "," + fmt(r.iou) + "," +
         fmt(r.hd) + "," + (r.both_empty ? "1" : "0") + "\n";
  }
  return s;
}

void MetricReport::write(const std::filesystem::path& csv_path, const std::filesystem::path& json_path) const {
  std::ofstream c(csv_path, std::ios::binary);
  if (!c) throw std::runtime_error("cannot write " + csv_path.string());
  c << csv();
  std::ofstream j(json_path, std::ios::binary);
  if (!j) throw std::runtime_error("cannot write " + json_path.string());
  j << summary_json().dump(2) << "\n";
}

MetricReport evaluate(const LabelMap& pred, const LabelMap& gt, std::int64_t num_classes, double hd_percentile,
                      Spacing spacing) {
  if (pred.shape() != gt.shape()) {
    throw std::invalid_argument("evaluate: prediction " + shape_str(pred.shape()) + " and ground truth " +
                                shape_str(gt.shape()) + " differ");
  }
  if (num_classes < 2) throw std::invalid_argument("evaluate: need at least two classes");
  if (gt.batch == 0) throw std::invalid_argument("evaluate: no cases");
  pred.check_range(num_classes, "evaluate (prediction)");
  gt.check_range(num_classes, "evaluate (ground truth)");

  MetricReport rep;
  rep.num_classes = num_classes;
  rep.num_cases = gt.batch;
  rep.hd_percentile = hd_percentile;
  const auto C = static_cast<std::size_t>(num_classes);
  rep.per_class_dsc.assign(C, 0.0);
  rep.per_class_iou.assign(C, 0.0);
  rep.per_class_hd.assign(C, 0.0);
  for (std::int64_t b = 0; b < gt.batch; ++b) {
    for (std::int32_t c = 0; c < static_cast<std::int32_t>(num_classes); ++c) {
      const Mask p = class_mask(pred, b, c), g = class_mask(gt, b, c);
      CaseClassRow row;
      row.case_index = b;
      row.class_index = c;
      row.dsc = dsc(p, g);
      row.iou = iou(p, g);
      row.hd = hausdorff(p, g, hd_percentile, spacing);
      row.both_empty = p.count() == 0 && g.count() == 0;
      rep.rows.push_back(row);
    }
  }
  const double n = static_cast<double>(gt.batch);
  for (const auto& r : rep.rows) {
    const auto c = static_cast<std::size_t>(r.class_index);
    rep.per_class_dsc[c] += r.dsc / n;
    rep.per_class_iou[c] += r.iou / n;
    rep.per_class_hd[c] += r.hd / n;
  }
  for (std::size_t c = 1; c < C; ++c) {
    rep.mean_dsc += rep.per_class_dsc[c];
    rep.mean_iou += rep.per_class_iou[c];
    rep.mean_hd += rep.per_class_hd[c];
  }
  const double fg = static_cast<double>(C - 1);
  rep.mean_dsc /= fg;
  rep.mean_iou /= fg;
  rep.mean_hd /= fg;
  return rep;
}

}  // namespace lucf
