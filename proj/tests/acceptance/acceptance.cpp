#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "lucf/checks/gradcheck_suite.hpp"
#include "lucf/cli/commands.hpp"
#include "lucf/tensor/autograd.hpp"

using namespace lucf;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string printf_str(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("lucf_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto entries = run_gradcheck_suite();
  const double t = seconds_since(t0);
  double worst = 0.0, worst_lovasz = 0.0;
  std::string failed;
  for (const auto& e : entries) {
    (e.tol > 1e-4 ? worst_lovasz : worst) = std::max(e.tol > 1e-4 ? worst_lovasz : worst, e.report.max_rel_error);
    if (!e.report.passed) failed += " " + e.report.name;
  }
  std::cout << format_table(entries);
  return {all_passed(entries) && t < 120.0,
          printf_str("%zu checks, worst rel err %.2e (tol 1e-4), Lovasz-path %.2e (tol 1e-3), %.1f s%s%s", entries.size(), worst,
                     worst_lovasz, t, failed.empty() ? "" : ", failed:", failed.c_str())};
}

Outcome lovasz_oracle() {
  DefaultDTypeGuard f64(DType::f64);
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0.0;
  std::int64_t cases = 0;
  for (int n = 1; n <= 10; ++n) {
    // Every foreground pattern for small n, a random sample of them above.
    const std::uint32_t all = 1u << n;
    std::vector<std::uint32_t> fg_masks;
    if (n <= 6) {
      for (std::uint32_t f = 0; f < all; ++f) fg_masks.push_back(f);
    } else {
      fg_masks = {0u, all - 1};
      for (int k = 0; k < 6; ++k) fg_masks.push_back(static_cast<std::uint32_t>(rng.uniform_int(0, all - 1)));
    }
    for (auto fmask : fg_masks) {
      std::vector<std::uint8_t> fg(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) fg[static_cast<std::size_t>(i)] = (fmask >> i) & 1u;
      for (std::uint32_t mask = 0; mask < all; ++mask) {
        // Two-class probabilities in {0, 1}: the foreground channel is wrong exactly where mask is set.
        LabelMap labels(1, 1, n);
        std::vector<double> probs(static_cast<std::size_t>(2 * n));
        std::vector<std::uint8_t> wrong(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
          const auto u = static_cast<std::size_t>(i);
          labels.values[u] = fg[u];
          wrong[u] = (mask >> i) & 1u;
          const bool predict_fg = wrong[u] ? !fg[u] : fg[u];
          probs[u] = predict_fg ? 0.0 : 1.0;
          probs[static_cast<std::size_t>(n) + u] = predict_fg ? 1.0 : 0.0;
        }
        const auto p = Tensor::from_values({1, 2, 1, n}, probs);
        // Class 1 errors are the wrong set; class 0 sees the same set against the complement.
        std::vector<std::uint8_t> bg(fg.size());
        for (std::size_t i = 0; i < fg.size(); ++i) bg[i] = 1 - fg[i];
        const double want = 0.5 * (jaccard_loss_discrete(wrong, bg) + jaccard_loss_discrete(wrong, fg));
        worst = std::max(worst, std::abs(lovasz_softmax(p, labels).item() - want));
        std::vector<double> e(wrong.begin(), wrong.end());
        worst = std::max(worst, std::abs(lovasz_class_loss(Tensor::from_values({n}, e), fg).item() - jaccard_loss_discrete(wrong, fg)));
        ++cases;
      }
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-12 && t < 30.0, printf_str("%lld error/foreground pairs, n <= 10, max |diff| %.1e, %.1f s", static_cast<long long>(cases), worst, t)};
}

/// Logits giving probability p to `label` at `pixel` of a 2-class map.
void set_pixel(std::vector<double>& lg, std::int64_t plane, std::int64_t pixel, int label, double p) {
  const double l = std::log(p / (1.0 - p));
  lg[static_cast<std::size_t>(label * plane + pixel)] = l;
  lg[static_cast<std::size_t>((1 - label) * plane + pixel)] = 0.0;
}

Outcome ohem_fixture() {
  DefaultDTypeGuard f64(DType::f64);
  std::vector<double> lg(6);
  set_pixel(lg, 3, 0, 1, 0.9);
  set_pixel(lg, 3, 1, 1, 0.6);
  set_pixel(lg, 3, 2, 1, 0.4);
  const auto r = ohem_loss(Tensor::from_values({1, 2, 1, 3}, lg), LabelMap(1, 1, 3, {1, 1, 1}), 0.7, 1.0 / 3.0);
  const double v = r.loss.item();
  Rng rng(7);
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto c = rng.uniform_int(2, 5), h = rng.uniform_int(1, 6), w = rng.uniform_int(1, 6);
    auto logits = rand_uniform({1, c, h, w}, rng, -4, 4, DType::f64);
    LabelMap labels(1, h, w);
    for (auto& x : labels.values) x = static_cast<std::int32_t>(rng.uniform_int(0, c - 1));
    const auto o = ohem_loss(logits, labels, rng.uniform(0.05, 1.0), rng.uniform(0.0, 0.5));
    if (o.re < o.org - 1e-12) ++violations;
  }
  return {std::abs(v - 1.22438) <= 1e-4 && violations == 0,
          printf_str("l_OHEM = %.5f (org %.5f + re %.5f), l_re < l_org on %d of 1000 random fixtures", v, r.org, r.re, violations)};
}

Outcome residual_identity() {
  Rng rng(11);
  nn::BlockConfig bc;
  bc.channels = 16;
  bc.heads = 2;
  bc.sample_stride = 2;
  nn::LGBlock lg(bc, rng);
  const auto x = rand_uniform({2, 16, 16, 16}, rng, -1, 1);
  const bool identity = lg.forward(x).to_vector() == x.to_vector();

  ModelConfig mc = desk_preset();
  mc.base_width = 4;
  LucfNet net(mc, rng);
  for (const auto& p : net.parameters())
    for (auto& v : p.tensor->mutable_data<float>()) v = static_cast<float>(rng.uniform(-0.3, 0.3));
  const auto img = rand_uniform({2, 1, 64, 64}, rng, 0, 1);
  const auto out = net.forward(img);
  std::vector<float> manual(out.fused_logits.data<float>().size(), 0.0f);
  for (const auto& h : out.head_logits) {
    auto d = h.data<float>();
    for (std::size_t i = 0; i < manual.size(); ++i) manual[i] += d[i];
  }
  const auto fused = out.fused_logits.data<float>();
  const bool fused_ok = std::equal(fused.begin(), fused.end(), manual.begin());

  mc.fusion_depth = 1;
  Rng rng1(12);
  LucfNet one(mc, rng1);
  const auto o1 = one.forward(img);
  LabelMap labels(2, 64, 64);
  for (auto& v : labels.values) v = static_cast<std::int32_t>(rng.uniform_int(0, 3));
  const double ds = deep_supervision_loss(o1, labels, LossConfig{}).total;
  const double single = hybrid_loss(o1.fused_logits, labels, LossConfig{}).loss.item();
  const bool depth1 = o1.head_logits.size() == 1 && ds == single;
  return {identity && fused_ok && depth1,
          printf_str("lg_block identity %s, fused == sum of %zu heads %s, depth-1 loss %.9g vs single head %.9g", identity ? "exact" : "DIFFERS",
                     out.head_logits.size(), fused_ok ? "exact" : "DIFFERS", ds, single)};
}

Outcome shape_suite() {
  NoGradGuard no_grad;
  Rng rng(13);
  const auto mc = paper_preset();
  LucfNet net(mc, rng);
  net.eval();
  const auto out = net.forward(Tensor::zeros({1, 1, 224, 224}));
  bool ok = true;
  std::string extents;
  for (int s = 0; s < 4; ++s) {
    const auto& sh = net.encoder_shapes[static_cast<std::size_t>(s)];
    ok = ok && sh[2] == 224 >> (s + 1) && sh[3] == 224 >> (s + 1);
    extents += (s ? "," : "") + std::to_string(sh[2]);
  }
  bool heads_ok = out.head_logits.size() == 4;
  for (const auto& h : out.head_logits) heads_ok = heads_ok && h.shape() == Shape{1, mc.num_classes, 224, 224};

  nn::BlockConfig bc;
  bc.channels = 8;
  bc.heads = 2;
  bc.sample_stride = 4;
  nn::GlobalSparseAttention gsa(bc, rng);
  gsa.forward(rand_uniform({1, 8, 8, 8}, rng, -1, 1));
  const bool tokens_ok = gsa.last_token_count() == 4;
  return {ok && heads_ok && tokens_ok,
          printf_str("encoder extents %s for 224, %zu heads at [1,%lld,224,224] %s, r=4 on 8x8 uses %lld tokens", extents.c_str(),
                     out.head_logits.size(), static_cast<long long>(mc.num_classes), heads_ok ? "ok" : "WRONG",
                     static_cast<long long>(gsa.last_token_count()))};
}

Mask random_mask(std::int64_t h, std::int64_t w, Rng& rng) {
  Mask m(h, w);
  for (std::int64_t r = rng.uniform_int(0, 3); r > 0; --r) {
    const auto y0 = rng.uniform_int(0, h - 1), x0 = rng.uniform_int(0, w - 1);
    const auto y1 = std::min(h, y0 + rng.uniform_int(1, h / 2)), x1 = std::min(w, x0 + rng.uniform_int(1, w / 2));
    for (auto y = y0; y < y1; ++y)
      for (auto x = x0; x < x1; ++x) m.at(y, x) = 1;
  }
  for (auto& v : m.values)
    if (rng.bernoulli(0.01)) v = 1;
  return m;
}

/// Boundary = foreground pixel with a background (or off-grid) 8-neighbour.
std::vector<std::pair<int, int>> brute_boundary(const Mask& m) {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      bool edge = false;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int v = y + dy, u = x + dx;
          if (v < 0 || u < 0 || v >= m.height || u >= m.width || !m.at(v, u)) edge = true;
        }
      if (edge) out.emplace_back(y, x);
    }
  return out;
}

double brute_percentile(std::vector<double> d, double q) {
  std::sort(d.begin(), d.end());
  const double pos = q / 100.0 * static_cast<double>(d.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, d.size() - 1);
  return d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

double brute_hd(const Mask& a, const Mask& b, double q) {
  const auto pa = brute_boundary(a), pb = brute_boundary(b);
  if (pa.empty() && pb.empty()) return 0.0;
  if (pa.empty() || pb.empty()) return std::hypot(static_cast<double>(a.height), static_cast<double>(a.width));
  auto directed = [&](const auto& from, const auto& to) {
    std::vector<double> d;
    for (const auto& [y, x] : from) {
      double best = INFINITY;
      for (const auto& [v, u] : to) best = std::min(best, std::hypot(y - v, x - u));
      d.push_back(best);
    }
    return brute_percentile(d, q);
  };
  return std::max(directed(pa, pb), directed(pb, pa));
}

Outcome metric_oracles() {
  Rng rng(17);
  double worst = 0.0;
  int order_violations = 0;
  for (int t = 0; t < 200; ++t) {
    const auto a = random_mask(32, 32, rng), b = random_mask(32, 32, rng);
    double inter = 0, sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      inter += a.values[i] && b.values[i];
      sa += a.values[i];
      sb += b.values[i];
    }
    const double d = sa + sb == 0 ? 1.0 : 2 * inter / (sa + sb);
    const double j = sa + sb - inter == 0 ? 1.0 : inter / (sa + sb - inter);
    worst = std::max({worst, std::abs(dsc(a, b) - d), std::abs(iou(a, b) - j)});
    const double h95 = hausdorff(a, b, 95.0), h100 = hausdorff(a, b, 100.0);
    worst = std::max({worst, std::abs(h95 - brute_hd(a, b, 95.0)), std::abs(h100 - brute_hd(a, b, 100.0))});
    if (h95 > h100) ++order_violations;
  }
  Mask p(5, 5), g(5, 5);
  p.at(0, 0) = 1;
  g.at(3, 4) = 1;
  const double fixture = hausdorff(p, g);
  return {worst <= 1e-9 && order_violations == 0 && fixture == 5.0,
          printf_str("200 random 32x32 pairs, max |diff| %.1e, HD95 > HD100 in %d, (0,0)/(3,4) fixture %.1f", worst, order_violations, fixture)};
}

struct OverfitRun {
  std::vector<HistoryRow> history;
  double final_dsc = 0.0;
  std::int64_t first_pass_iter = -1;
  double seconds = 0.0;
};

OverfitRun overfit(int fusion_depth, bool track_dsc) {
  DatasetSpec ds;
  ds.num_samples = 8;
  ds.height = ds.width = 64;
  ds.num_classes = 4;
  ds.seed = 0;
  const auto data = gen_synthetic(ds).samples;
  ModelConfig mc = desk_preset();
  mc.fusion_depth = fusion_depth;
  Rng init(0, 1);
  LucfNet net(mc, init);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_iter = 500;
  tc.seed = 0;
  tc.loss = loss_terms_from_string("lovasz+ohem");
  Trainer trainer(net, data, tc);
  OverfitRun run;
  const auto t0 = Clock::now();
  run.history = trainer.run(-1, [&](const HistoryRow& r) {
    if (!track_dsc || (r.iter + 1) % 50 != 0) return;
    const double d = evaluate_run(net, data, 4).mean_dsc;
    std::cout << "    fusion " << fusion_depth << " iter " << r.iter + 1 << " loss " << r.total << " train DSC " << d << "\n";
    if (run.first_pass_iter < 0 && d >= 0.95) run.first_pass_iter = r.iter + 1;
  });
  run.seconds = seconds_since(t0);
  run.final_dsc = evaluate_run(net, data, 4).mean_dsc;
  return run;
}

/// First iteration at which the trailing 20-iteration mean of the per-head loss drops below `threshold`.
std::int64_t iterations_to(const std::vector<HistoryRow>& h, double threshold) {
  double acc = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    acc += h[i].total / static_cast<double>(h[i].per_head.size());
    if (i >= 20) acc -= h[i - 20].total / static_cast<double>(h[i - 20].per_head.size());
    if (i >= 19 && acc / 20.0 < threshold) return static_cast<std::int64_t>(i + 1);
  }
  return -1;
}

Outcome overfit_experiment() {
  const auto deep = overfit(4, true);
  const bool pass = deep.final_dsc >= 0.95 && deep.seconds < 600.0;
  const auto shallow = overfit(1, false);
  const double threshold = 0.5;
  const auto it4 = iterations_to(deep.history, threshold), it1 = iterations_to(shallow.history, threshold);
  std::cout << "    ablation (report only): per-head loss < " << threshold << " (20-iter mean) at iter " << it4 << " with fusion 4, "
            << it1 << " with fusion 1; final train DSC fusion 1 = " << shallow.final_dsc << "\n";
  const bool directional = it4 >= 0 && (it1 < 0 || it4 <= it1);
  return {pass, printf_str("fusion 4: train DSC %.4f after 500 iters (>= 0.95 first at iter %lld), %.0f s; ablation %s (fusion 4 at %lld, fusion 1 at %lld)",
                           deep.final_dsc, static_cast<long long>(deep.first_pass_iter), deep.seconds,
                           directional ? "trend holds" : "trend not observed", static_cast<long long>(it4), static_cast<long long>(it1))};
}

Outcome complexity() {
  struct Case {
    std::string name;
    ModelConfig cfg;
  };
  ModelConfig variant = desk_preset();
  variant.base_width = 8;
  variant.lg_enabled = false;
  variant.fusion_depth = 2;
  variant.num_classes = 3;
  variant.input_h = 96;
  variant.input_w = 64;
  ModelConfig layer = desk_preset();
  layer.base_width = 6;
  layer.local_norm = nn::NormKind::layer;
  layer.heads = {2, 2, 4, 4};
  std::vector<Case> cases{{"desk", desk_preset()}, {"no-lg/fusion-2", variant}, {"layer-norm", layer}};
  bool ok = true;
  std::string detail;
  for (auto& c : cases) {
    Rng rng(19);
    LucfNet net(c.cfg, rng);
    const auto p = param_count(c.cfg), pe = net.num_parameters();
    const auto f = flop_count(c.cfg, c.cfg.input_h, c.cfg.input_w), fm = measured_flop_count(net, c.cfg.input_h, c.cfg.input_w);
    ok = ok && p == pe && f == fm;
    detail += printf_str("%s %lld/%lld params, %lld/%lld flops; ", c.name.c_str(), static_cast<long long>(p), static_cast<long long>(pe),
                         static_cast<long long>(f), static_cast<long long>(fm));
  }
  const auto paper = cli::cmd_summary(paper_preset(), 224, 224, true, false);
  std::cout << cli::format_summary(paper);
  ok = ok && paper.contains("paper_reference");
  return {ok, detail + "paper preset printed with reference 6.93 M / 6.60 GFLOPs"};
}

Outcome determinism() {
  const auto root = scratch("determinism");
  cli::RunConfig cfg;
  cfg.seed = 5;
  cfg.data.num_samples = 6;
  cfg.data.height = cfg.data.width = 32;
  cfg.model.base_width = 4;
  cfg.train.batch_size = 2;
  cfg.train.max_iter = 12;
  cfg.propagate_seed();
  cli::cmd_synth(cfg, {root / "data", "png", false});
  std::ostringstream log;
  cli::TrainOptions a{root / "data", root / "a", {}, {}, -1, 0};
  cli::TrainOptions b = a;
  b.out = root / "b";
  cli::cmd_train(cfg, a, log);
  cli::cmd_train(cfg, b, log);
  cli::TrainOptions half = a;
  half.out = root / "c";
  half.stop_at = 5;
  cli::cmd_train(cfg, half, log);
  cli::TrainOptions rest = a;
  rest.out = root / "c";
  rest.resume = root / "c" / "checkpoint.ckpt";
  cli::cmd_train(cfg, rest, log);

  const auto ha = read_bytes(root / "a" / "history.csv"), ca = read_bytes(root / "a" / "checkpoint.ckpt");
  const bool repeat = ha == read_bytes(root / "b" / "history.csv") && ca == read_bytes(root / "b" / "checkpoint.ckpt");
  const bool resume = ha == read_bytes(root / "c" / "history.csv") && ca == read_bytes(root / "c" / "checkpoint.ckpt");
  const bool nonempty = std::count(ha.begin(), ha.end(), '\n') == 13;
  fs::remove_all(root);
  return {repeat && resume && nonempty,
          printf_str("two identical runs: history+checkpoint %s; stop at 5 + resume to 12: %s", repeat ? "byte-identical" : "DIFFER",
                     resume ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"gradient suite", gradient_suite},     {"lovasz oracle", lovasz_oracle},     {"ohem fixture", ohem_fixture},
      {"residual identity", residual_identity}, {"shape suite", shape_suite},     {"metric oracles", metric_oracles},
      {"overfit experiment", overfit_experiment}, {"complexity accounting", complexity}, {"determinism", determinism},
  };
  std::vector<std::string> lines;
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const auto line = printf_str("%s  %zu  %-22s %s [%.1f s]", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail.c_str(),
                                 seconds_since(t0));
    std::cout << line << std::endl;
    lines.push_back(line);
    failures += o.pass ? 0 : 1;
  }
  std::cout << "\n";
  for (const auto& l : lines) std::cout << l << "\n";
  std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
