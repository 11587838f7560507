#include "lucf/loss/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lucf/tensor/ops.hpp"

namespace lucf {

void LossConfig::validate() const {
  if (!use_lovasz && !use_ohem && !use_dice && !use_ce) throw std::invalid_argument("LossConfig: no loss term enabled");
  if (!(hybrid_weight >= 0.0 && hybrid_weight <= 1.0)) throw std::invalid_argument("LossConfig: hybrid_weight must be in [0, 1]");
  if (!(ohem_threshold > 0.0 && ohem_threshold < 1.0)) throw std::invalid_argument("LossConfig: ohem_threshold must be in (0, 1)");
  if (!(ohem_min_kept_fraction > 0.0 && ohem_min_kept_fraction <= 1.0)) {
    throw std::invalid_argument("LossConfig: ohem_min_kept_fraction must be in (0, 1]");
  }
}

std::string LossConfig::terms() const {
  std::string s;
  auto push = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += name;
  };
  push(use_lovasz, "lovasz");
  push(use_dice, "dice");
  push(use_ohem, "ohem");
  push(use_ce, "ce");
  return s;
}

LossConfig loss_terms_from_string(const std::string& spec, LossConfig base) {
  base.use_lovasz = base.use_ohem = base.use_dice = base.use_ce = false;
  std::stringstream ss(spec);
  std::string term;
  while (std::getline(ss, term, '+')) {
    if (term == "lovasz") base.use_lovasz = true;
    else if (term == "ohem") base.use_ohem = true;
    else if (term == "dice") base.use_dice = true;
    else if (term == "ce") base.use_ce = true;
    else throw std::invalid_argument("unknown loss term \"" + term + "\" (expected lovasz, ohem, dice, ce)");
  }
  base.validate();
  return base;
}

nlohmann::json to_json(const LossConfig& c) {
  return {{"terms", c.terms()},
          {"hybrid_weight", c.hybrid_weight},
          {"ohem_threshold", c.ohem_threshold},
          {"ohem_min_kept_fraction", c.ohem_min_kept_fraction},
          {"lovasz_present_only", c.lovasz_present_only}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("loss config must be a JSON object");
  LossConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "terms") c = loss_terms_from_string(v.get<std::string>(), c);
    else if (key == "hybrid_weight") c.hybrid_weight = v.get<double>();
    else if (key == "ohem_threshold") c.ohem_threshold = v.get<double>();
    else if (key == "ohem_min_kept_fraction") c.ohem_min_kept_fraction = v.get<double>();
    else if (key == "lovasz_present_only") c.lovasz_present_only = v.get<bool>();
    else throw std::invalid_argument("loss config: unknown key \"" + key + "\"");
  }
  c.validate();
  return c;
}

namespace {

/// Flat NCHW index of the true-class entry of every pixel, in (b, y, x) order.
std::vector<std::int64_t> true_class_indices(const LabelMap& labels, std::int64_t classes) {
  const std::int64_t plane = labels.height * labels.width;
  std::vector<std::int64_t> idx(labels.values.size());
  for (std::int64_t b = 0; b < labels.batch; ++b)
    for (std::int64_t p = 0; p < plane; ++p) {
      const auto i = static_cast<std::size_t>(b * plane + p);
      idx[i] = (b * classes + labels.values[i]) * plane + p;
    }
  return idx;
}

/// Per-pixel CE as a rank-1 tensor, plus the true-class probabilities.
std::pair<Tensor, std::vector<double>> pixel_ce(const Tensor& logits, const LabelMap& labels, const char* who) {
  labels.check_matches(logits, who);
  if (labels.numel() == 0) throw std::invalid_argument(std::string(who) + ": empty batch");
  const auto idx = true_class_indices(labels, logits.dim(1));
  const Tensor pt = gather(softmax_channel(logits), idx);
  return {neg(log(pt, 1e-12)), pt.to_vector()};
}

Tensor class_plane(const Tensor& probs, std::int64_t c) { return reshape(slice(probs, 1, c, 1), {-1}); }

void require_simplex(const Tensor& probs, const char* who) {
  const std::int64_t B = probs.dim(0), C = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
  const auto v = probs.to_vector();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < plane; ++p) {
      double s = 0.0;
      for (std::int64_t c = 0; c < C; ++c) s += v[static_cast<std::size_t>((b * C + c) * plane + p)];
      if (std::abs(s - 1.0) > 1e-6) {
        throw std::invalid_argument(std::string(who) + ": probabilities of pixel " + std::to_string(b * plane + p) +
                                    " sum to " + std::to_string(s));
      }
    }
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const LabelMap& labels) { return mean(pixel_ce(logits, labels, "cross_entropy").first); }

Tensor dice_loss(const Tensor& probs, const LabelMap& labels, double eps) {
  labels.check_matches(probs, "dice_loss");
  const std::int64_t C = probs.dim(1);
  Tensor acc;
  for (std::int64_t c = 0; c < C; ++c) {
    std::vector<double> y(labels.values.size());
    double ysum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = labels.values[i] == c ? 1.0 : 0.0;
      ysum += y[i];
    }
    const Tensor p = class_plane(probs, c);
    const Tensor yt = Tensor::from_values({static_cast<std::int64_t>(y.size())}, y, probs.dtype());
    const Tensor num = add_scalar(mul_scalar(dot(p, yt), 2.0), eps);
    const Tensor den = add_scalar(sum(p), ysum + eps);
    const Tensor d = div(num, den);
    acc = acc.defined() ? add(acc, d) : d;
  }
  return add_scalar(mul_scalar(acc, -1.0 / static_cast<double>(C)), 1.0);
}

Tensor lovasz_class_loss(const Tensor& errors, std::span<const std::uint8_t> fg) {
  const auto n = errors.numel();
  if (static_cast<std::int64_t>(fg.size()) != n) throw std::invalid_argument("lovasz_class_loss: errors and foreground differ in length");
  const auto e = errors.to_vector();
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](std::int64_t a, std::int64_t b) {
    return e[static_cast<std::size_t>(a)] > e[static_cast<std::size_t>(b)];
  });
  double gts = 0.0;
  for (auto f : fg) gts += f;
  std::vector<double> g(static_cast<std::size_t>(n));
  double cum_fg = 0.0, cum_bg = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const bool f = fg[static_cast<std::size_t>(perm[k])] != 0;
    cum_fg += f ? 1.0 : 0.0;
    cum_bg += f ? 0.0 : 1.0;
    const double jac = 1.0 - (gts - cum_fg) / (gts + cum_bg);
    g[k] = jac - prev;
    prev = jac;
  }
  return dot(gather(reshape(errors, {-1}), perm), Tensor::from_values({n}, g, errors.dtype()));
}

double jaccard_loss_discrete(std::span<const std::uint8_t> wrong, std::span<const std::uint8_t> fg) {
  double m = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < wrong.size(); ++i) {
    m += wrong[i] ? 1.0 : 0.0;
    uni += (wrong[i] || fg[i]) ? 1.0 : 0.0;
  }
  return uni == 0.0 ? 0.0 : m / uni;
}

Tensor lovasz_softmax(const Tensor& probs, const LabelMap& labels, bool present_only) {
  labels.check_matches(probs, "lovasz_softmax");
  require_simplex(probs, "lovasz_softmax");
  const std::int64_t C = probs.dim(1), n = labels.numel();
  Tensor acc;
  int counted = 0;
  std::vector<std::uint8_t> fg(static_cast<std::size_t>(n));
  for (std::int64_t c = 0; c < C; ++c) {
    std::vector<double> sign(fg.size()), offset(fg.size());
    bool present = false;
    for (std::size_t i = 0; i < fg.size(); ++i) {
      fg[i] = labels.values[i] == c ? 1 : 0;
      present = present || fg[i];
      // error = fg ? 1 - p : p
      sign[i] = fg[i] ? -1.0 : 1.0;
      offset[i] = fg[i] ? 1.0 : 0.0;
    }
    if (present_only && !present) continue;
    const Tensor err = add(mul(class_plane(probs, c), Tensor::from_values({n}, sign, probs.dtype())),
                           Tensor::from_values({n}, offset, probs.dtype()));
    const Tensor l = lovasz_class_loss(err, fg);
    acc = acc.defined() ? add(acc, l) : l;
    ++counted;
  }
  if (counted == 0) return mul_scalar(sum(probs), 0.0);
  return mul_scalar(acc, 1.0 / counted);
}

OhemResult ohem_loss(const Tensor& logits, const LabelMap& labels, double threshold, double min_kept_fraction) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("ohem_loss: threshold must be in (0, 1)");
  if (!(min_kept_fraction > 0.0 && min_kept_fraction <= 1.0)) throw std::invalid_argument("ohem_loss: min_kept_fraction must be in (0, 1]");
  auto [ce, pt] = pixel_ce(logits, labels, "ohem_loss");
  const auto M = static_cast<std::int64_t>(pt.size());
  std::vector<std::int64_t> order(pt.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::int64_t a, std::int64_t b) { return pt[static_cast<std::size_t>(a)] < pt[static_cast<std::size_t>(b)]; });
  std::int64_t hard = 0;
  for (double p : pt) hard += p < threshold ? 1 : 0;
  const auto min_kept = static_cast<std::int64_t>(std::ceil(min_kept_fraction * static_cast<double>(M) - 1e-9));
  const std::int64_t K = std::min(M, std::max({hard, min_kept, std::int64_t{1}}));
  order.resize(static_cast<std::size_t>(K));
  std::sort(order.begin(), order.end());

  OhemResult r;
  const Tensor org = mean(ce);
  const Tensor re = mean(gather(ce, order));
  r.loss = add(org, re);
  r.org = org.item();
  r.re = re.item();
  r.kept = K;
  return r;
}

HybridResult hybrid_loss(const Tensor& logits, const LabelMap& labels, const LossConfig& cfg) {
  cfg.validate();
  labels.check_matches(logits, "hybrid_loss");
  HybridResult r;
  Tensor region, pixel;
  auto accumulate = [](Tensor& slot, const Tensor& t) { slot = slot.defined() ? add(slot, t) : t; };
  if (cfg.use_lovasz || cfg.use_dice) {
    const Tensor probs = softmax_channel(logits);
    if (cfg.use_lovasz) {
      const Tensor l = lovasz_softmax(probs, labels, cfg.lovasz_present_only);
      r.components.emplace_back("lovasz", l.item());
      accumulate(region, l);
    }
    if (cfg.use_dice) {
      const Tensor d = dice_loss(probs, labels);
      r.components.emplace_back("dice", d.item());
      accumulate(region, d);
    }
  }
  if (cfg.use_ohem) {
    const auto o = ohem_loss(logits, labels, cfg.ohem_threshold, cfg.ohem_min_kept_fraction);
    r.components.emplace_back("ohem_org", o.org);
    r.components.emplace_back("ohem_re", o.re);
    accumulate(pixel, o.loss);
  }
  if (cfg.use_ce) {
    const Tensor c = cross_entropy(logits, labels);
    r.components.emplace_back("ce", c.item());
    accumulate(pixel, c);
  }
  if (region.defined() && pixel.defined()) {
    r.loss = add(mul_scalar(region, cfg.hybrid_weight), mul_scalar(pixel, 1.0 - cfg.hybrid_weight));
  } else {
    r.loss = region.defined() ? region : pixel;
  }
  return r;
}

LossReport deep_supervision_loss(const ForwardOutputs& outputs, const LabelMap& labels, const LossConfig& cfg) {
  if (outputs.head_logits.empty()) throw std::invalid_argument("deep_supervision_loss: no heads");
  LossReport rep;
  for (const auto& head : outputs.head_logits) {
    if (head.rank() != 4 || head.dim(2) != labels.height || head.dim(3) != labels.width) {
      throw std::invalid_argument("deep_supervision_loss: head " + shape_str(head.shape()) + " is not at label resolution " +
                                  std::to_string(labels.height) + "x" + std::to_string(labels.width));
    }
    auto h = hybrid_loss(head, labels, cfg);
    const double v = h.loss.item();
    rep.per_head.push_back(v);
    rep.total += v;
    rep.graph = rep.graph.defined() ? add(rep.graph, h.loss) : h.loss;
    for (const auto& [name, value] : h.components) {
      auto it = std::find_if(rep.components.begin(), rep.components.end(), [&](const auto& kv) { return kv.first == name; });
      if (it == rep.components.end()) rep.components.emplace_back(name, value);
      else it->second += value;
    }
  }
  return rep;
}

}  // namespace lucf
