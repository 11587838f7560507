#include "lucf/checks/gradcheck_suite.hpp"

#include <cstdio>
#include <functional>
#include <sstream>

#include "lucf/loss/losses.hpp"
#include "lucf/model/lucf_net.hpp"
#include "lucf/nn/blocks.hpp"
#include "lucf/tensor/ops.hpp"
#include "lucf/tensor/rng.hpp"

namespace lucf {

namespace {

using nn::BlockConfig;

Tensor rnd(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed, 0xC4EC);
  return rand_uniform(std::move(shape), rng, lo, hi, DType::f64);
}

Tensor weighted_sum(const Tensor& out, std::uint64_t seed) { return dot(out, rnd(out.shape(), seed ^ 0xABCDEFULL)); }

void randomize(nn::Module& m, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed, 17);
  for (const auto& p : m.parameters()) {
    const bool is_gamma = p.name.ends_with("gamma");
    for (auto& v : p.tensor->mutable_data<double>()) v = is_gamma ? rng.uniform(0.5, 1.5) : rng.uniform(-scale, scale);
  }
}

LabelMap random_labels(std::int64_t b, std::int64_t k, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  Rng rng(seed, 0x1AB);
  LabelMap l(b, h, w);
  for (auto& v : l.values) v = static_cast<std::int32_t>(rng.uniform_int(0, k - 1));
  return l;
}

BlockConfig small_block(int heads = 1, int stride = 1) {
  BlockConfig c;
  c.channels = 4;
  c.heads = heads;
  c.sample_stride = stride;
  c.mlp_ratio = 2.0;
  return c;
}

class Suite {
 public:
  explicit Suite(const SuiteOptions& o) : opt_(o) {}

  void op(const std::string& name, const ScalarFn& fn, std::vector<Tensor> inputs) { add("op", name, fn, std::move(inputs), opt_.tol); }

  void loss(const std::string& name, const ScalarFn& fn, std::vector<Tensor> inputs, double tol) {
    add("loss", name, fn, std::move(inputs), tol);
  }

  template <class F>
  void block(const std::string& name, nn::Module& m, const Tensor& x, F&& f) {
    std::vector<Tensor> inputs{x};
    for (const auto& p : m.parameters()) inputs.push_back(*p.tensor);
    add("block", name, [&](const std::vector<Tensor>& in) { return weighted_sum(f(in[0]), 99); }, std::move(inputs), opt_.tol);
  }

  std::uint64_t seed(std::uint64_t k) const { return opt_.seed * 1000 + k; }
  std::vector<SuiteEntry> entries;

 private:
  void add(const char* kind, const std::string& name, const ScalarFn& fn, std::vector<Tensor> inputs, double tol) {
    GradCheckOptions g;
    g.eps = opt_.eps;
    g.tol = tol;
    entries.push_back({kind, tol, grad_check(fn, inputs, g, name)});
  }

  SuiteOptions opt_;
};

void primitive_checks(Suite& s) {
  auto ws = [](const Tensor& t) { return weighted_sum(t, 1); };
  const Shape s4{2, 3, 4, 4};
  s.op("add", [&](auto& in) { return ws(add(in[0], in[1])); }, {rnd(s4, s.seed(1)), rnd(s4, s.seed(2))});
  s.op("sub", [&](auto& in) { return ws(sub(in[0], in[1])); }, {rnd(s4, s.seed(3)), rnd({1}, s.seed(4))});
  s.op("mul", [&](auto& in) { return ws(mul(in[0], in[1])); }, {rnd(s4, s.seed(5)), rnd(s4, s.seed(6))});
  s.op("div", [&](auto& in) { return ws(div(in[0], in[1])); }, {rnd(s4, s.seed(7)), rnd(s4, s.seed(8), 0.5, 2.0)});
  s.op("add_scalar", [&](auto& in) { return ws(add_scalar(in[0], 0.3)); }, {rnd(s4, s.seed(9))});
  s.op("mul_scalar", [&](auto& in) { return ws(mul_scalar(in[0], -1.7)); }, {rnd(s4, s.seed(10))});
  s.op("gelu", [&](auto& in) { return ws(gelu(in[0])); }, {rnd(s4, s.seed(11), -3, 3)});
  s.op("relu", [&](auto& in) { return ws(relu(in[0])); }, {rnd(s4, s.seed(12), -3, 3)});
  s.op("leaky_relu", [&](auto& in) { return ws(leaky_relu(in[0])); }, {rnd(s4, s.seed(13), -3, 3)});
  s.op("exp", [&](auto& in) { return ws(exp(in[0])); }, {rnd(s4, s.seed(14))});
  s.op("log", [&](auto& in) { return ws(log(in[0], 1e-12)); }, {rnd(s4, s.seed(15), 0.1, 2.0)});
  s.op("reshape", [&](auto& in) { return ws(reshape(in[0], {6, 16})); }, {rnd(s4, s.seed(16))});
  s.op("permute", [&](auto& in) { return ws(permute(in[0], {2, 0, 3, 1})); }, {rnd(s4, s.seed(17))});
  s.op("concat", [&](auto& in) { return ws(concat({in[0], in[1]}, 1)); }, {rnd(s4, s.seed(18)), rnd({2, 2, 4, 4}, s.seed(19))});
  s.op("slice", [&](auto& in) { return ws(slice(in[0], 1, 1, 2)); }, {rnd(s4, s.seed(20))});
  s.op("gather", [&](auto& in) {
    std::vector<std::int64_t> idx{3, 0, 5, 5, 1, 40};
    return ws(gather(in[0], idx));
  }, {rnd(s4, s.seed(21))});
  s.op("sum", [&](auto& in) { return sum(mul(in[0], in[0])); }, {rnd(s4, s.seed(22))});
  s.op("sum_axis", [&](auto& in) { return ws(sum(in[0], 2)); }, {rnd(s4, s.seed(23))});
  s.op("mean", [&](auto& in) { return mean(mul(in[0], in[0])); }, {rnd(s4, s.seed(24))});
  s.op("max", [&](auto& in) { return max(in[0]); }, {rnd(s4, s.seed(25))});
  s.op("dot", [&](auto& in) { return dot(in[0], in[1]); }, {rnd(s4, s.seed(26)), rnd(s4, s.seed(27))});
  s.op("softmax", [&](auto& in) { return ws(softmax(in[0], 1)); }, {rnd({5, 4}, s.seed(28), -3, 3)});
  s.op("softmax_channel", [&](auto& in) { return ws(softmax_channel(in[0])); }, {rnd(s4, s.seed(29), -3, 3)});
  s.op("matmul", [&](auto& in) { return ws(matmul(in[0], in[1])); }, {rnd({2, 3, 4}, s.seed(30)), rnd({2, 4, 5}, s.seed(31))});
  s.op("linear", [&](auto& in) { return ws(linear(in[0], in[1], in[2])); },
       {rnd({3, 5}, s.seed(32)), rnd({4, 5}, s.seed(33)), rnd({4}, s.seed(34))});
  s.op("conv2d", [&](auto& in) { return ws(conv2d(in[0], in[1], in[2], {.stride = 2, .padding = 1})); },
       {rnd({2, 3, 5, 6}, s.seed(35)), rnd({4, 3, 3, 3}, s.seed(36)), rnd({4}, s.seed(37))});
  s.op("conv2d_depthwise", [&](auto& in) { return ws(conv2d(in[0], in[1], {}, {.padding = 1, .groups = 3})); },
       {rnd({1, 3, 4, 5}, s.seed(38)), rnd({3, 1, 3, 3}, s.seed(39))});
  s.op("conv_transpose2d", [&](auto& in) { return ws(conv_transpose2d(in[0], in[1], in[2], 2)); },
       {rnd({1, 3, 2, 3}, s.seed(40)), rnd({3, 2, 2, 2}, s.seed(41)), rnd({2}, s.seed(42))});
  s.op("bilinear_resize", [&](auto& in) { return ws(bilinear_resize(in[0], 7, 5)); }, {rnd({1, 2, 3, 4}, s.seed(43))});
  s.op("window_sample", [&](auto& in) { return ws(window_sample(in[0], 2)); }, {rnd({1, 2, 4, 6}, s.seed(44))});
  s.op("batch_norm", [&](auto& in) {
    auto rm = Tensor::zeros({3}, DType::f64);
    auto rv = Tensor::ones({3}, DType::f64);
    return ws(batch_norm(in[0], in[1], in[2], rm, rv, true));
  }, {rnd({2, 3, 3, 3}, s.seed(45)), rnd({3}, s.seed(46), 0.5, 1.5), rnd({3}, s.seed(47))});
  s.op("layer_norm", [&](auto& in) { return ws(layer_norm(in[0], in[1], in[2])); },
       {rnd({4, 6}, s.seed(48)), rnd({6}, s.seed(49), 0.5, 1.5), rnd({6}, s.seed(50))});
}

void block_checks(Suite& s) {
  Rng rng(s.seed(100));
  for (auto kind : {nn::NormKind::batch, nn::NormKind::layer}) {
    auto cfg = small_block();
    cfg.norm_kind = kind;
    nn::LocalAggregation la(cfg, rng);
    randomize(la, s.seed(101));
    s.block(kind == nn::NormKind::batch ? "local_aggregation[bn]" : "local_aggregation[ln]", la, rnd({1, 4, 6, 6}, s.seed(102)),
            [&](const Tensor& x) { return la.forward(x); });
  }
  {
    nn::ConvMlp m(small_block(), rng);
    randomize(m, s.seed(103));
    s.block("cmlp", m, rnd({1, 4, 4, 4}, s.seed(104)), [&](const Tensor& x) { return m.forward(x); });
  }
  {
    auto cfg = small_block(2, 2);
    nn::GlobalSparseAttention gsa(cfg, rng);
    randomize(gsa, s.seed(105));
    s.block("sparse_attention", gsa, rnd({1, 4, 4, 4}, s.seed(106)), [&](const Tensor& y) { return gsa.forward(y); });
    nn::TransConvSpread spread(cfg, rng);
    randomize(spread, s.seed(107));
    const auto attended = rnd({1, 4, 2, 2}, s.seed(108));
    s.block("transconv_spread", spread, rnd({1, 4, 4, 4}, s.seed(109)), [&](const Tensor& y) { return spread.forward(attended, y); });
  }
  {
    nn::TokenMlp m(small_block(), rng);
    randomize(m, s.seed(110));
    s.block("token_mlp", m, rnd({1, 4, 3, 3}, s.seed(111)), [&](const Tensor& z) { return m.forward(z); });
  }
  {
    nn::LGBlock lg(small_block(2, 2), rng);
    randomize(lg, s.seed(112), 0.4);
    s.block("lg_block", lg, rnd({1, 4, 4, 4}, s.seed(113)), [&](const Tensor& x) { return lg.forward(x); });
  }
  {
    nn::EncoderStage st({2, 4, true, true}, small_block(2, 2), rng);
    randomize(st, s.seed(114));
    s.block("encoder_stage", st, rnd({2, 2, 8, 8}, s.seed(115)), [&](const Tensor& x) { return st.forward(x).out; });
  }
  {
    nn::DecoderStage d(4, rng);
    randomize(d, s.seed(116));
    const auto skip = rnd({1, 2, 6, 6}, s.seed(117));
    s.block("decoder_stage", d, rnd({1, 4, 3, 3}, s.seed(118)), [&](const Tensor& v) { return d.forward(v, skip); });
  }
  {
    CIEHead head(4, 3, rng);
    randomize(head, s.seed(119));
    s.block("cie_head", head, rnd({1, 4, 3, 3}, s.seed(120)), [&](const Tensor& f) { return head.forward(f, 6, 6); });
  }
}

void loss_checks(Suite& s, double tol, double lovasz_tol) {
  const auto labels = random_labels(1, 3, 3, 3, s.seed(200));
  const auto logits = rnd({1, 3, 3, 3}, s.seed(201), -2, 2);
  s.loss("cross_entropy", [&](auto& in) { return cross_entropy(in[0], labels); }, {logits}, tol);
  s.loss("dice", [&](auto& in) { return dice_loss(softmax_channel(in[0]), labels); }, {logits}, tol);
  s.loss("ohem", [&](auto& in) { return ohem_loss(in[0], labels, 0.7, 0.3).loss; }, {logits}, tol);
  s.loss("lovasz_softmax", [&](auto& in) { return lovasz_softmax(softmax_channel(in[0]), labels); }, {logits}, lovasz_tol);
  s.loss("hybrid[lovasz+ohem]", [&](auto& in) { return hybrid_loss(in[0], labels, LossConfig{}).loss; }, {logits}, lovasz_tol);
  s.loss("hybrid[ce+dice]", [&](auto& in) { return hybrid_loss(in[0], labels, loss_terms_from_string("ce+dice")).loss; }, {logits}, tol);
  s.loss("deep_supervision", [&](auto& in) {
    ForwardOutputs out;
    out.head_logits = {in[0], in[1]};
    return deep_supervision_loss(out, labels, LossConfig{}).graph;
  }, {logits, rnd({1, 3, 3, 3}, s.seed(202), -2, 2)}, lovasz_tol);
}

}  // namespace

std::vector<SuiteEntry> run_gradcheck_suite(const SuiteOptions& options) {
  DefaultDTypeGuard f64(DType::f64);
  Suite s(options);
  primitive_checks(s);
  block_checks(s);
  loss_checks(s, options.tol, options.lovasz_tol);
  return std::move(s.entries);
}

bool all_passed(const std::vector<SuiteEntry>& entries) {
  for (const auto& e : entries)
    if (!e.report.passed) return false;
  return !entries.empty();
}

nlohmann::json to_json(const std::vector<SuiteEntry>& entries) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& e : entries) {
    checks.push_back({{"name", e.report.name},
                      {"kind", e.kind},
                      {"passed", e.report.passed},
                      {"max_rel_error", e.report.max_rel_error},
                      {"max_abs_error", e.report.max_abs_error},
                      {"tolerance", e.tol},
                      {"worst_input", e.report.worst_input},
                      {"worst_index", e.report.worst_index}});
  }
  return {{"passed", all_passed(entries)}, {"checks", checks}};
}

std::string format_table(const std::vector<SuiteEntry>& entries) {
  std::ostringstream os;
  char line[160];
  for (const auto& e : entries) {
    std::snprintf(line, sizeof line, "%-4s %-5s %-24s max_rel_err %.3e (tol %.0e)\n", e.report.passed ? "ok" : "FAIL",
                  e.kind.c_str(), e.report.name.c_str(), e.report.max_rel_error, e.tol);
    os << line;
  }
  return os.str();
}

}  // namespace lucf
