#include <gtest/gtest.h>

#include <cmath>

#include "lucf/nn/blocks.hpp"
#include "lucf/tensor/grad_check.hpp"
#include "test_util.hpp"

using namespace lucf;
using namespace lucf::nn;
using lucf::testing::check_module;
using lucf::testing::max_abs_diff;
using lucf::testing::random_f64;
using lucf::testing::randomize;

namespace {

BlockConfig small_cfg(int stride = 2, int heads = 2) {
  BlockConfig c;
  c.channels = 4;
  c.heads = heads;
  c.sample_stride = stride;
  c.mlp_ratio = 2.0;
  return c;
}

void expect_pass(const CheckReport& r) {
  EXPECT_TRUE(r.passed) << r.name << " max rel " << r.max_rel_error << " at input " << r.worst_input << "[" << r.worst_index
                        << "] analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
}

}  // namespace

TEST(Module, RegistryOrderAndCounts) {
  DefaultDTypeGuard f64(DType::f64);
  Rng rng(1);
  Conv2d c(1, 8, 3, rng);
  EXPECT_EQ(c.num_parameters(), 80);
  auto params = c.parameters();
  ASSERT_EQ(params.size(), 2u);
  EXPECT_EQ(params[0].name, "weight");
  EXPECT_TRUE(params[0].decay);
  EXPECT_EQ(params[1].name, "bias");
  EXPECT_FALSE(params[1].decay);

  LGBlock lg(small_cfg(), rng);
  for (const auto& p : lg.parameters()) EXPECT_TRUE(p.tensor->requires_grad()) << p.name;
  EXPECT_EQ(lg.parameters().front().name, "local.pw1.weight");
}

TEST(Module, ConversionKeepsRegistry) {
  Rng rng(2);
  Linear l(3, 5, rng);
  EXPECT_EQ(l.weight.dtype(), DType::f32);
  l.to(DType::f64);
  EXPECT_EQ(l.weight.dtype(), DType::f64);
  EXPECT_EQ(l.parameters()[0].tensor->dtype(), DType::f64);
  EXPECT_TRUE(l.weight.requires_grad());
}

TEST(LocalAggregation, ZeroProjectionIsIdentityAndShapePreserving) {
  DefaultDTypeGuard f64(DType::f64);
  Rng rng(3);
  for (auto kind : {NormKind::batch, NormKind::layer}) {
    auto cfg = small_cfg();
    cfg.norm_kind = kind;
    LocalAggregation la(cfg, rng);
    for (std::int64_t hw : {3, 5, 8}) {
      auto x = random_f64({2, 4, hw, hw}, 4);
      auto y = la.forward(x);
      EXPECT_EQ(y.shape(), x.shape());
      EXPECT_EQ(y.to_vector(), x.to_vector());
    }
  }
  LocalAggregation la(small_cfg(), rng);
  EXPECT_THROW(la.forward(random_f64({1, 3, 8, 8}, 5)), std::invalid_argument);
}

TEST(LocalAggregation, GradCheck) {
  DefaultDTypeGuard f64(DType::f64);
  Rng rng(6);
  for (auto kind : {NormKind::batch, NormKind::layer}) {
    auto cfg = small_cfg();
    cfg.norm_kind = kind;
    LocalAggregation la(cfg, rng);
    randomize(la, 7);
    expect_pass(check_module(la, random_f64({1, 4, 8, 8}, 8), [&](const Tensor& x) { return la.forward(x); },
                             "local_aggregation"));
  }
}

TEST(ConvMlp, IdentityParamCountAndGradCheck) {
  DefaultDTypeGuard f64(DType::f64);
  Rng rng(9);
  for (double ratio : {2.0, 4.0}) {
    auto cfg = small_cfg();
    cfg.channels = 8;
    cfg.mlp_ratio = ratio;
    ConvMlp m(cfg, rng);
    const std::int64_t C = 8, rC = static_cast<std::int64_t>(ratio) * 8;
    EXPECT_EQ(m.num_parameters(), C * rC + rC + rC * C + C);
    auto x = random_f64({1, 8, 4, 4}, 10);
    EXPECT_EQ(m.forward(x).to_vector(), x.to_vector());
  }
  ConvMlp m(small_cfg(), rng);
  randomize(m, 11);
  expect_pass(check_module(m, random_f64({1, 4, 5, 5}, 12), [&](const Tensor& x) { return m.forward(x); }, "cmlp"));
}

TEST(GlobalSparseAttention, TokenCountAndOutputShape) {
  DefaultDTypeGuard f64(DType::f64);
  Rng rng(13);
  auto cfg = small_cfg(4, 2);
  GlobalSparseAttention gsa(cfg, rng);
  auto out = gsa.forward(random_f64({1, 4, 8, 8}, 14));
  EXPECT_EQ(gsa.last_token_count(), 4);
  EXPECT_EQ(out.shape(), (Shape{1, 4, 2, 2}));
  EXPECT_EQ(gsa.last_attention().shape(), (Shape{2, 4, 4}));
  EXPECT_THROW(gsa.forward(random_f64({1, 4, 6, 8}, 15)), std::invalid_argument);
}

TEST(GlobalSparseAttention, AttentionRowsAreDistributions) {
  DefaultDTypeGuard f64(DType::f64);
  Rng rng(16);
  GlobalSparseAttention gsa(small_cfg(2, 4), rng);
  randomize(gsa, 17, 1.0);
  gsa.forward(random_f64({2, 4, 8, 8}, 18));
  const auto& a = gsa.last_attention();
  const auto n = a.dim(2);
  auto v = a.to_vector();
  for (std::size_t row = 0; row < v.size() / static_cast<std::size_t>(n); ++row) {
    double s = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      const double p = v[row * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)];
      EXPECT_GE(p, 0.0);
      s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(GlobalSparseAttention, SingleTokenReturnsValueProjection) {
  DefaultDTypeGuard f64(DType::f64);
  Rng rng(19);
  auto cfg = small_cfg(4, 2);
  GlobalSparseAttention gsa(cfg, rng);
  randomize(gsa, 20, 1.0);
  auto y = random_f64({1, 4, 4, 4}, 21);
  auto out = gsa.forward(y);
  ASSERT_EQ(out.shape(), (Shape{1, 4, 1, 1}));
  // Independent evaluation: layer-norm the top-left pixel, then apply the value rows of qkv.
  std::vector<double> tok(4);
  for (int c = 0; c < 4; ++c) tok[static_cast<std::size_t>(c)] = y.value_at(c * 16);
  double m = 0.0, var = 0.0;
  for (double t : tok) m += t / 4.0;
  for (double t : tok) var += (t - m) * (t - m) / 4.0;
  auto w = gsa.qkv.weight.to_vector();
  auto b = gsa.qkv.bias.to_vector();
  auto g = gsa.norm.gamma.to_vector();
  auto be = gsa.norm.beta.to_vector();
  for (int o = 0; o < 4; ++o) {
    double v = b[static_cast<std::size_t>(8 + o)];
    for (int c = 0; c < 4; ++c) {
      const auto cs = static_cast<std::size_t>(c);
      const double n = (tok[cs] - m) / std::sqrt(var + 1e-5) * g[cs] + be[cs];
      v += w[static_cast<std::size_t>((8 + o) * 4 + c)] * n;
    }
    EXPECT_NEAR(out.value_at(o), v, 1e-12);
  }
}

TEST(GlobalSparseAttention, QuadraticTermShrinksByStrideToTheFourth) {
  Rng rng(22);
  auto quadratic = [&](int r) {
    auto cfg = small_cfg(r, 2);
    GlobalSparseAttention gsa(cfg, rng);
    auto y = Tensor::ones({1, 4, 16, 16});
    FlopCounterScope scope;
    gsa.forward(y);
    const std::int64_t n = gsa.last_token_count();
    return scope.flops() - 2 * n * 4 * 12;  // minus the token-linear qkv projection
  };
  const auto full = quadratic(1);
  EXPECT_EQ(full, quadratic(2) * 16);
  EXPECT_EQ(full, quadratic(4) * 256);
}

TEST(TransConvSpread, IdentityShapesAndErrors) {
  DefaultDTypeGuard f64(DType::f64);
  Rng rng(23);
  TransConvSpread s1(small_cfg(1), rng);
  auto y = random_f64({1, 4, 6, 6}, 24);
  EXPECT_EQ(s1.up.weight.shape(), (Shape{4, 4, 1, 1}));
  EXPECT_EQ(s1.forward(random_f64({1, 4, 6, 6}, 25), y).shape(), y.shape());

  TransConvSpread s2(small_cfg(2), rng);
  randomize(s2, 26);
  for (auto& v : s2.up.bias.mutable_data<double>()) v = 0.0;
  auto z = s2.forward(Tensor::zeros({1, 4, 3, 3}), y);
  EXPECT_EQ(z.to_vector(), y.to_vector());
  EXPECT_THROW(s2.forward(Tensor::zeros({1, 4, 2, 3}), y), std::invalid_argument);
}

TEST(TransConvSpread, GradCheckThroughAttentionPath) {
  DefaultDTypeGuard f64(DType::f64);
  Rng rng(27);
  auto cfg = small_cfg(2, 2);
  GlobalSparseAttention gsa(cfg, rng);
  TransConvSpread spread(cfg, rng);
  randomize(gsa, 28);
  randomize(spread, 29);
  struct Both : Module {
    Both(GlobalSparseAttention& a, TransConvSpread& s) {
      register_module("a", a);
      register_module("s", s);
    }
  } both(gsa, spread);
  expect_pass(check_module(both, random_f64({1, 4, 4, 4}, 30),
                           [&](const Tensor& y) { return spread.forward(gsa.forward(y), y); }, "attention+spread"));
}

TEST(TokenMlp, IdentityEquivalenceAndGradCheck) {
  DefaultDTypeGuard f64(DType::f64);
  Rng rng(31);
  auto cfg = small_cfg();
  TokenMlp mlp(cfg, rng);
  auto x = random_f64({2, 4, 5, 3}, 32);
  EXPECT_EQ(mlp.forward(x).to_vector(), x.to_vector());

  ConvMlp cm(cfg, rng);
  randomize(mlp, 33);
  // Same weights, viewed as 1x1 kernels.
  cm.fc1.weight = reshape(mlp.fc1.weight, cm.fc1.weight.shape());
  cm.fc1.bias = mlp.fc1.bias;
  cm.fc2.weight = reshape(mlp.fc2.weight, cm.fc2.weight.shape());
  cm.fc2.bias = mlp.fc2.bias;
  EXPECT_LT(max_abs_diff(mlp.forward(x).to_vector(), cm.forward(x).to_vector()), 1e-12);

  expect_pass(check_module(mlp, random_f64({1, 4, 3, 3}, 34), [&](const Tensor& z) { return mlp.forward(z); }, "mlp"));
}

TEST(LGBlock, ZeroWeightsAreIdentity) {
  Rng rng(35);
  BlockConfig cfg;
  cfg.channels = 16;
  cfg.heads = 2;
  cfg.sample_stride = 2;
  LGBlock lg(cfg, rng);
  auto x = rand_uniform({1, 16, 32, 32}, rng, -1, 1);
  auto y = lg.forward(x);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.to_vector(), x.to_vector());  // default init: every final projection is zero

  lg.zero_parameters();
  EXPECT_EQ(lg.forward(x).to_vector(), x.to_vector());
}

TEST(LGBlock, EndToEndGradCheck) {
  DefaultDTypeGuard f64(DType::f64);
  Rng rng(36);
  LGBlock lg(small_cfg(2, 2), rng);
  randomize(lg, 37, 0.4);
  expect_pass(check_module(lg, random_f64({1, 4, 4, 4}, 38), [&](const Tensor& x) { return lg.forward(x); }, "lg_block"));
}

TEST(EncoderStage, HalvesExtentAndStacks) {
  Rng rng(39);
  EncoderStage s1({1, 32, true, false}, BlockConfig{}, rng);
  auto o = s1.forward(Tensor::ones({1, 1, 224, 224}));
  EXPECT_EQ(o.out.shape(), (Shape{1, 32, 112, 112}));
  EXPECT_EQ(o.skip.shape(), (Shape{1, 16, 224, 224}));
  EXPECT_EQ(s1.lg, nullptr);
  EXPECT_THROW(s1.forward(Tensor::ones({1, 1, 15, 16})), std::invalid_argument);

  const int strides[] = {4, 2, 2, 1}, heads[] = {1, 2, 4, 8};
  std::int64_t in = 1, base = 4;
  std::vector<std::unique_ptr<EncoderStage>> stages;
  Tensor x = Tensor::ones({1, 1, 64, 64});
  for (int i = 0; i < 4; ++i) {
    BlockConfig b;
    b.heads = heads[i];
    b.sample_stride = strides[i];
    stages.push_back(std::make_unique<EncoderStage>(StageSpec{in, base << (i + 1), true, true}, b, rng));
    in = base << (i + 1);
    x = stages.back()->forward(x).out;
  }
  EXPECT_EQ(x.shape(), (Shape{1, 4 * 16, 4, 4}));
}

TEST(EncoderStage, GradCheckWithLG) {
  DefaultDTypeGuard f64(DType::f64);
  Rng rng(40);
  EncoderStage st({2, 4, true, true}, small_cfg(2, 2), rng);
  randomize(st, 41, 0.5);
  expect_pass(check_module(st, random_f64({2, 2, 8, 8}, 42), [&](const Tensor& x) { return st.forward(x).out; },
                           "encoder_stage"));
}

TEST(DecoderStage, ShapesZeroSkipAndGradCheck) {
  DefaultDTypeGuard f64(DType::f64);
  Rng rng(43);
  DecoderStage d(8, rng);
  auto x = random_f64({1, 8, 4, 4}, 44);
  auto y = d.forward(x, Tensor::zeros({1, 4, 8, 8}));
  EXPECT_EQ(y.shape(), (Shape{1, 4, 8, 8}));
  EXPECT_THROW(d.forward(x, Tensor::zeros({1, 4, 6, 8})), std::invalid_argument);
  EXPECT_THROW(d.forward(x, Tensor::zeros({1, 8, 8, 8})), std::invalid_argument);

  DecoderStage small(4, rng);
  randomize(small, 45);
  auto skip = random_f64({1, 2, 6, 6}, 46);
  expect_pass(check_module(small, random_f64({1, 4, 3, 3}, 47),
                           [&](const Tensor& v) { return small.forward(v, skip); }, "decoder_stage"));
}
