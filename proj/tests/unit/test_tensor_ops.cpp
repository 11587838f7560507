#include <gtest/gtest.h>

#include <sstream>

#include "lucf/tensor/autograd.hpp"
#include "lucf/tensor/grad_check.hpp"
#include "lucf/tensor/tensor_io.hpp"
#include "test_util.hpp"

using namespace lucf;
using lucf::testing::max_abs_diff;
using lucf::testing::naive_conv2d;
using lucf::testing::random_f64;
using lucf::testing::weighted_sum;

TEST(Conv2d, CenterOfOnesIsNine) {
  auto x = Tensor::ones({1, 1, 3, 3}, DType::f64);
  auto w = Tensor::ones({1, 1, 3, 3}, DType::f64);
  auto y = conv2d(x, w, {}, {.stride = 1, .padding = 1});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_DOUBLE_EQ(y.value_at(4), 9.0);
  EXPECT_DOUBLE_EQ(y.value_at(0), 4.0);
}

TEST(Conv2d, UnitPointwiseKernelIsIdentity) {
  auto x = random_f64({1, 1, 3, 3}, 1);
  auto y = conv2d(x, Tensor::ones({1, 1, 1, 1}, DType::f64));
  EXPECT_EQ(y.to_vector(), x.to_vector());
}

TEST(Conv2d, MatchesNaiveOracle) {
  auto x = random_f64({2, 4, 9, 9}, 2);
  auto w = random_f64({8, 4, 3, 3}, 3);
  auto b = random_f64({8}, 4);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      auto y = conv2d(x, w, b, {.stride = stride, .padding = pad});
      EXPECT_LT(max_abs_diff(y.to_vector(), naive_conv2d(x, w, b, stride, pad, 1)), 1e-12);
    }
  }
}

TEST(Conv2d, GroupedAndDepthwiseMatchOracleExactly) {
  auto x = random_f64({2, 6, 7, 7}, 5);
  auto dw = random_f64({6, 1, 3, 3}, 6);
  auto y = conv2d(x, dw, {}, {.padding = 1, .groups = 6});
  // Per-channel oracle: each channel convolved alone.
  for (int c = 0; c < 6; ++c) {
    auto xc = slice(x, 1, c, 1);
    auto wc = slice(dw, 0, c, 1);
    auto ref = naive_conv2d(xc, wc, {}, 1, 1, 1);
    auto got = slice(y, 1, c, 1).to_vector();
    EXPECT_LT(max_abs_diff(got, ref), 1e-12);
  }
  auto wg = random_f64({4, 3, 3, 3}, 7);
  auto yg = conv2d(x, wg, {}, {.padding = 1, .groups = 2});
  EXPECT_LT(max_abs_diff(yg.to_vector(), naive_conv2d(x, wg, {}, 1, 1, 2)), 1e-12);
}

TEST(Conv2d, RejectsBadGroupsAndShapes) {
  auto x = random_f64({1, 5, 4, 4}, 8);
  EXPECT_THROW(conv2d(x, random_f64({4, 2, 3, 3}, 9), {}, {.groups = 2}), std::invalid_argument);
  EXPECT_THROW(conv2d(x, random_f64({4, 4, 3, 3}, 9)), std::invalid_argument);
  EXPECT_THROW(conv2d(random_f64({5, 4, 4}, 1), random_f64({4, 5, 3, 3}, 9)), std::invalid_argument);
}

TEST(ConvTranspose2d, TilesEachInputIntoItsBlock) {
  auto x = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4}, DType::f64);
  auto y = conv_transpose2d(x, Tensor::ones({1, 1, 2, 2}, DType::f64), {}, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  const std::vector<double> expect{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(y.to_vector(), expect);
}

TEST(ConvTranspose2d, ZeroInputGivesBias) {
  auto y = conv_transpose2d(Tensor::zeros({2, 3, 2, 2}, DType::f64), random_f64({3, 2, 2, 2}, 1),
                            Tensor::from_values({2}, {0.5, -1.5}, DType::f64), 2);
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    const auto channel = (i / 16) % 2;
    EXPECT_DOUBLE_EQ(y.value_at(i), channel == 0 ? 0.5 : -1.5);
  }
}

TEST(ConvTranspose2d, EqualsInputGradientOfConv2d) {
  // conv_transpose2d(x, W) == d/dy <conv2d(y, W, stride=k), x>.
  const int k = 3;
  auto x = random_f64({2, 5, 3, 4}, 11);
  auto w = random_f64({5, 4, k, k}, 12);
  auto y = Tensor::zeros({2, 4, 3 * k, 4 * k}, DType::f64).set_requires_grad(true);
  auto l = dot(conv2d(y, w, {}, {.stride = k}), x);
  l.backward();
  auto t = conv_transpose2d(x, w, {}, k);
  EXPECT_LT(max_abs_diff(t.to_vector(), y.grad().to_vector()), 1e-12);
}

TEST(ConvTranspose2d, KernelMustEqualStride) {
  EXPECT_THROW(conv_transpose2d(random_f64({1, 2, 2, 2}, 1), random_f64({2, 2, 3, 3}, 2), {}, 2), std::invalid_argument);
}

TEST(BilinearResize, ConstantsAndIdentity) {
  auto c = Tensor::full({1, 2, 3, 5}, 0.7, DType::f64);
  for (auto v : bilinear_resize(c, 7, 2).to_vector()) EXPECT_NEAR(v, 0.7, 1e-15);
  auto x = random_f64({2, 3, 4, 6}, 3);
  EXPECT_EQ(bilinear_resize(x, 4, 6).to_vector(), x.to_vector());
}

TEST(BilinearResize, HalfPixelConventionHandValues) {
  auto x = Tensor::from_values({1, 1, 1, 2}, {0, 1}, DType::f64);
  auto y = bilinear_resize(x, 1, 4).to_vector();
  const std::vector<double> expect{0.0, 0.25, 0.75, 1.0};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(y[static_cast<std::size_t>(i)], expect[static_cast<std::size_t>(i)], 1e-15);
}

TEST(Softmax, HandValuesAndShiftInvariance) {
  auto s = softmax_channel(Tensor::zeros({1, 2, 1, 1}, DType::f64)).to_vector();
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  auto t = softmax_channel(Tensor::from_values({1, 3, 1, 1}, {1, 2, 3}, DType::f64)).to_vector();
  EXPECT_NEAR(t[0], 0.09003, 1e-5);
  EXPECT_NEAR(t[1], 0.24473, 1e-5);
  EXPECT_NEAR(t[2], 0.66524, 1e-5);

  auto x = random_f64({2, 4, 3, 3}, 4, -5, 5);
  auto shifted = x.clone();
  auto d = shifted.mutable_data<double>();
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t c = 0; c < 4; ++c)
      for (std::int64_t p = 0; p < 9; ++p) d[static_cast<std::size_t>((b * 4 + c) * 9 + p)] += 3.0 * static_cast<double>(p) - 7.0;
  EXPECT_LT(max_abs_diff(softmax_channel(x).to_vector(), softmax_channel(shifted).to_vector()), 1e-14);
}

TEST(Softmax, OutputIsSimplexPerPixel) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto y = softmax_channel(random_f64({2, 5, 4, 3}, seed, -30, 30)).to_vector();
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t p = 0; p < 12; ++p) {
        double s = 0.0;
        for (std::int64_t c = 0; c < 5; ++c) {
          const double v = y[static_cast<std::size_t>((b * 5 + c) * 12 + p)];
          EXPECT_GE(v, 0.0);
          EXPECT_LE(v, 1.0);
          s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
  }
}

TEST(Backward, SquareSumGivesTwoX) {
  auto x = random_f64({3, 4}, 5).set_requires_grad(true);
  sum(mul(x, x)).backward();
  auto g = x.grad().to_vector();
  auto v = x.to_vector();
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_DOUBLE_EQ(g[i], 2.0 * v[i]);
}

TEST(Backward, ConvMatchesFiniteDifferences) {
  auto x = random_f64({1, 2, 5, 5}, 6);
  auto w = random_f64({3, 2, 3, 3}, 7);
  auto r = grad_check([](const std::vector<Tensor>& in) { return sum(conv2d(in[0], in[1], {}, {.padding = 1})); }, {x, w},
                      {.eps = 1e-5, .tol = 1e-6});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Backward, DetachedTensorReceivesNoGrad) {
  auto x = random_f64({4}, 1).set_requires_grad(true);
  auto y = random_f64({4}, 2).set_requires_grad(true);
  sum(mul(x.detach(), y)).backward();
  EXPECT_FALSE(x.grad().defined());
  EXPECT_TRUE(y.grad().defined());
}

TEST(Backward, RejectsNonScalarRoot) {
  auto x = random_f64({4}, 1).set_requires_grad(true);
  EXPECT_THROW(mul(x, x).backward(), std::invalid_argument);
}

TEST(Backward, IsAdditive) {
  auto x = random_f64({2, 3, 6, 6}, 8).set_requires_grad(true);
  auto w = random_f64({4, 3, 3, 3}, 9).set_requires_grad(true);
  auto l1 = [&] { return weighted_sum(conv2d(x, w, {}, {.padding = 1}), 1); };
  auto l2 = [&] { return sum(gelu(conv2d(x, w))); };
  add(l1(), l2()).backward();
  auto joint_x = x.grad().to_vector();
  auto joint_w = w.grad().to_vector();
  x.zero_grad();
  w.zero_grad();
  l1().backward();
  auto gx1 = x.grad().to_vector();
  auto gw1 = w.grad().to_vector();
  x.zero_grad();
  w.zero_grad();
  l2().backward();
  auto gx2 = x.grad().to_vector();
  auto gw2 = w.grad().to_vector();
  for (std::size_t i = 0; i < joint_x.size(); ++i) EXPECT_NEAR(joint_x[i], gx1[i] + gx2[i], 1e-12);
  for (std::size_t i = 0; i < joint_w.size(); ++i) EXPECT_NEAR(joint_w[i], gw1[i] + gw2[i], 1e-12);
}

TEST(Backward, VisitsEachNodeOnceInTopologicalOrder) {
  auto x = random_f64({3}, 1).set_requires_grad(true);
  auto a = mul(x, x);
  auto b = add(a, a);
  auto c = sum(mul(b, a));
  auto order = topological_nodes(c);
  std::set<const Node*> unique;
  for (const auto& n : order) unique.insert(n.get());
  EXPECT_EQ(unique.size(), order.size());
  ASSERT_EQ(order.size(), 4u);
  EXPECT_EQ(order.back()->op, "sum");
  EXPECT_EQ(order.front()->op, "mul");
}

TEST(GradCheck, QuadraticFormPasses) {
  auto a = random_f64({4, 4}, 3);
  auto x = random_f64({4, 1}, 4);
  auto r = grad_check([](const std::vector<Tensor>& in) { return sum(mul(in[1], matmul(in[0], in[1]))); }, {a, x},
                      {.tol = 1e-7});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(GradCheck, CorruptedBackwardIsReportedWithIndex) {
  auto x = random_f64({2, 3, 4, 4}, 5);
  auto w = random_f64({2, 3, 3, 3}, 6);
  FaultInjectionGuard fault("conv2d");
  auto r = grad_check([](const std::vector<Tensor>& in) { return weighted_sum(conv2d(in[0], in[1]), 2); }, {x, w});
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 0.05);
  EXPECT_EQ(r.worst_input, 0u);
  EXPECT_GE(r.worst_index, 0);
}

TEST(GradCheck, RequiresDoubleInputs) {
  auto x = Tensor::ones({2}, DType::f32);
  EXPECT_THROW(grad_check([](const std::vector<Tensor>& in) { return sum(in[0]); }, {x}), std::invalid_argument);
}

// Every differentiable primitive against central differences on three shapes.
TEST(GradCheck, EveryPrimitiveOnRandomShapes) {
  struct Case {
    const char* name;
    std::function<Tensor(const std::vector<Tensor>&)> fn;
    std::function<std::vector<Tensor>(std::uint64_t, int)> make;
  };
  auto shape4 = [](int v) { return Shape{1 + v % 2, 2 + v, 3 + v, 4}; };
  std::vector<Case> cases{
      {"add", [](auto& in) { return weighted_sum(add(in[0], in[1]), 1); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s), random_f64(shape4(v), s + 1)}; }},
      {"sub_scalar_broadcast", [](auto& in) { return weighted_sum(sub(in[0], in[1]), 1); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s), random_f64({1}, s + 1)}; }},
      {"mul", [](auto& in) { return weighted_sum(mul(in[0], in[1]), 1); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s), random_f64(shape4(v), s + 1)}; }},
      {"div", [](auto& in) { return weighted_sum(div(in[0], in[1]), 1); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s), random_f64(shape4(v), s + 1, 0.5, 2.0)}; }},
      {"gelu", [](auto& in) { return weighted_sum(gelu(in[0]), 1); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s, -3, 3)}; }},
      {"relu", [](auto& in) { return weighted_sum(relu(in[0]), 1); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s, -3, 3)}; }},
      {"leaky_relu", [](auto& in) { return weighted_sum(leaky_relu(in[0]), 1); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s, -3, 3)}; }},
      {"log", [](auto& in) { return weighted_sum(log(in[0], 1e-12), 1); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s, 0.1, 2.0)}; }},
      {"exp", [](auto& in) { return weighted_sum(exp(in[0]), 1); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s)}; }},
      {"permute", [](auto& in) { return weighted_sum(permute(in[0], {2, 0, 3, 1}), 1); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s)}; }},
      {"concat_slice", [](auto& in) { return weighted_sum(slice(concat({in[0], in[1]}, 1), 1, 1, 3), 1); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s), random_f64(shape4(v), s + 1)}; }},
      {"sum_axis", [](auto& in) { return weighted_sum(sum(in[0], 2), 1); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s)}; }},
      {"max", [](auto& in) { return max(in[0]); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s)}; }},
      {"gather", [](auto& in) {
         std::vector<std::int64_t> idx{3, 0, 5, 5, 1};
         return weighted_sum(gather(in[0], idx), 1);
       },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s)}; }},
      {"softmax", [](auto& in) { return weighted_sum(softmax_channel(in[0]), 1); },
       [&](auto s, int v) { return std::vector{random_f64(shape4(v), s, -3, 3)}; }},
      {"matmul", [](auto& in) { return weighted_sum(matmul(in[0], in[1]), 1); },
       [&](auto s, int v) { return std::vector{random_f64({2, 3 + v, 4}, s), random_f64({2, 4, 2 + v}, s + 1)}; }},
      {"linear", [](auto& in) { return weighted_sum(linear(in[0], in[1], in[2]), 1); },
       [&](auto s, int v) {
         return std::vector{random_f64({3 + v, 5}, s), random_f64({4, 5}, s + 1), random_f64({4}, s + 2)};
       }},
      {"conv2d", [](auto& in) { return weighted_sum(conv2d(in[0], in[1], in[2], {.stride = 2, .padding = 1}), 1); },
       [&](auto s, int v) {
         return std::vector{random_f64({1 + v % 2, 3, 5 + v, 6}, s), random_f64({4, 3, 3, 3}, s + 1), random_f64({4}, s + 2)};
       }},
      {"conv2d_depthwise", [](auto& in) { return weighted_sum(conv2d(in[0], in[1], {}, {.padding = 1, .groups = 3}), 1); },
       [&](auto s, int v) { return std::vector{random_f64({1, 3, 4 + v, 5}, s), random_f64({3, 1, 3, 3}, s + 1)}; }},
      {"conv_transpose2d", [](auto& in) { return weighted_sum(conv_transpose2d(in[0], in[1], in[2], 2), 1); },
       [&](auto s, int v) {
         return std::vector{random_f64({1, 3, 2 + v, 3}, s), random_f64({3, 2, 2, 2}, s + 1), random_f64({2}, s + 2)};
       }},
      {"bilinear_resize", [](auto& in) { return weighted_sum(bilinear_resize(in[0], 7, 5), 1); },
       [&](auto s, int v) { return std::vector{random_f64({1, 2, 3 + v, 4}, s)}; }},
      {"window_sample", [](auto& in) { return weighted_sum(window_sample(in[0], 2), 1); },
       [&](auto s, int v) { return std::vector{random_f64({1, 2, 4, 2 * (1 + v)}, s)}; }},
      {"batch_norm", [](auto& in) {
         auto rm = Tensor::zeros({3}, DType::f64);
         auto rv = Tensor::ones({3}, DType::f64);
         return weighted_sum(batch_norm(in[0], in[1], in[2], rm, rv, true), 1);
       },
       [&](auto s, int v) {
         return std::vector{random_f64({2, 3, 3 + v, 3}, s), random_f64({3}, s + 1, 0.5, 1.5), random_f64({3}, s + 2)};
       }},
      {"layer_norm", [](auto& in) { return weighted_sum(layer_norm(in[0], in[1], in[2]), 1); },
       [&](auto s, int v) {
         return std::vector{random_f64({4 + v, 6}, s), random_f64({6}, s + 1, 0.5, 1.5), random_f64({6}, s + 2)};
       }},
  };
  for (const auto& c : cases) {
    for (int v = 0; v < 3; ++v) {
      auto r = grad_check(c.fn, c.make(100 + static_cast<std::uint64_t>(v) * 7, v), {.eps = 1e-5, .tol = 1e-4}, c.name);
      EXPECT_TRUE(r.passed) << c.name << " shape variant " << v << " max rel err " << r.max_rel_error << " at input "
                            << r.worst_input << "[" << r.worst_index << "] analytic " << r.worst_analytic << " numeric "
                            << r.worst_numeric;
    }
  }
}

TEST(TensorDump, HeaderLayoutAndRoundTrip) {
  auto t = random_f64({2, 3}, 1);
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 4 + 8 + 1 + 6 * 8);
  EXPECT_EQ(bytes.substr(0, 4), "LUCT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 3);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 1);
  auto back = read_tensor(ss);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(back.to_vector(), t.to_vector());

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_tensor(truncated), std::runtime_error);
}

TEST(Rng, CounterBasedAndReproducible) {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(42, 0, 5);
  Rng d(42);
  for (int i = 0; i < 5; ++i) d.next_u64();
  EXPECT_EQ(c.next_u64(), d.next_u64());
  EXPECT_NE(Rng(42).derive(1).next_u64(), Rng(42).derive(2).next_u64());
  double s = 0.0;
  Rng e(7);
  for (int i = 0; i < 20000; ++i) s += e.uniform();
  EXPECT_NEAR(s / 20000.0, 0.5, 0.01);
}

TEST(FiniteChecks, NonFiniteOutputIsAnError) {
  set_finite_checks(true);
  EXPECT_THROW(div(Tensor::ones({2}, DType::f64), Tensor::zeros({2}, DType::f64)), NonFiniteError);
  set_finite_checks(false);
}
