#include <algorithm>
#include <cmath>
#include <limits>

#include "kernels.hpp"

namespace lucf {

namespace {

thread_local FlopCounterScope* t_flop_scope = nullptr;

Tensor broadcast_along(const Tensor& g, const Shape& full, int axis) {
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= full[static_cast<std::size_t>(i)];
  const std::int64_t extent = full[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < full.size(); ++i) inner *= full[i];
  return dispatch(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto gd = g.data<T>();
    std::vector<T> v(static_cast<std::size_t>(shape_numel(full)));
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t e = 0; e < extent; ++e)
        std::copy_n(gd.begin() + o * inner, inner, v.begin() + (o * extent + e) * inner);
    return Tensor::from_buffer(full, std::move(v));
  });
}

struct MatmulDims {
  std::int64_t batch, m, n, k;
};

// Batched product of (optionally transposed) row-major operands without
// graph recording.
Tensor matmul_raw(const Tensor& a, const Tensor& b, bool ta, bool tb, MatmulDims d) {
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto ad = a.data<T>();
    auto bd = b.data<T>();
    std::vector<T> out(static_cast<std::size_t>(d.batch * d.m * d.n));
    for (std::int64_t i = 0; i < d.batch; ++i) {
      detail::gemm<T>(ta, tb, d.m, d.n, d.k, ad.data() + i * d.m * d.k, bd.data() + i * d.k * d.n,
                      out.data() + i * d.m * d.n, false);
    }
    Shape shape = a.rank() == 3 ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
    return Tensor::from_buffer(shape, std::move(out));
  });
}

}  // namespace

FlopCounterScope::FlopCounterScope() : previous_(t_flop_scope) { t_flop_scope = this; }
FlopCounterScope::~FlopCounterScope() { t_flop_scope = previous_; }
void FlopCounterScope::add(std::int64_t flops) {
  if (t_flop_scope != nullptr) t_flop_scope->flops_ += flops;
}

Tensor sum(const Tensor& x) {
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    double acc = 0.0;
    for (auto v : x.data<T>()) acc += static_cast<double>(v);
    return Tensor::from_buffer({1}, std::vector<T>{static_cast<T>(acc)});
  });
  return record(detail::checked(out, "sum"), "sum", {x}, [shape = x.shape()](const Tensor& g) -> std::vector<Tensor> {
    return {Tensor::full(shape, g.item(), g.dtype())};
  });
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  axis = detail::normalize_axis(axis, x.rank(), "sum");
  const Shape& shape = x.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  const std::int64_t extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
  Shape out_shape = shape;
  if (keepdim) {
    out_shape[static_cast<std::size_t>(axis)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + axis);
    if (out_shape.empty()) out_shape = {1};
  }
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    std::vector<T> v(static_cast<std::size_t>(outer * inner), T(0));
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t e = 0; e < extent; ++e)
        for (std::int64_t i = 0; i < inner; ++i) v[static_cast<std::size_t>(o * inner + i)] += in[static_cast<std::size_t>((o * extent + e) * inner + i)];
    return Tensor::from_buffer(out_shape, std::move(v));
  });
  return record(out, "sum_axis", {x}, [shape, axis](const Tensor& g) -> std::vector<Tensor> {
    return {broadcast_along(g, shape, axis)};
  });
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor max(const Tensor& x) {
  std::size_t arg = 0;
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    arg = static_cast<std::size_t>(std::max_element(in.begin(), in.end()) - in.begin());
    return Tensor::from_buffer({1}, std::vector<T>{in[arg]});
  });
  return record(out, "max", {x}, [arg, shape = x.shape()](const Tensor& g) -> std::vector<Tensor> {
    auto z = Tensor::zeros(shape, g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      z.mutable_data<T>()[arg] = g.data<T>()[0];
    });
    return {z};
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  detail::require_same_dtype(a, b, "dot");
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("dot: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    auto y = b.data<T>();
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * static_cast<double>(y[i]);
    return Tensor::from_buffer({1}, std::vector<T>{static_cast<T>(acc)});
  });
  return record(detail::checked(out, "dot"), "dot", {a, b}, [a, b](const Tensor& g) -> std::vector<Tensor> {
    const double s = g.item();
    Tensor ga, gb;
    if (a.requires_grad()) ga = mul_scalar(b.detach(), s);
    if (b.requires_grad()) gb = mul_scalar(a.detach(), s);
    return {ga, gb};
  });
}

Tensor softmax(const Tensor& x, int axis) {
  axis = detail::normalize_axis(axis, x.rank(), "softmax");
  const Shape& shape = x.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  const std::int64_t extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
  FlopCounterScope::add(3 * x.numel());

  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    std::vector<T> v(in.size());
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t base = o * extent * inner + i;
        T m = -std::numeric_limits<T>::infinity();
        for (std::int64_t e = 0; e < extent; ++e) m = std::max(m, in[static_cast<std::size_t>(base + e * inner)]);
        T total = 0;
        for (std::int64_t e = 0; e < extent; ++e) {
          const auto k = static_cast<std::size_t>(base + e * inner);
          v[k] = std::exp(in[k] - m);
          total += v[k];
        }
        for (std::int64_t e = 0; e < extent; ++e) v[static_cast<std::size_t>(base + e * inner)] /= total;
      }
    }
    return Tensor::from_buffer(shape, std::move(v));
  });
  out = detail::checked(out, "softmax");
  Tensor saved = out.detach();
  return record(out, "softmax", {x}, [saved, outer, extent, inner](const Tensor& g) -> std::vector<Tensor> {
    return {dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto y = saved.data<T>();
      auto gd = g.data<T>();
      std::vector<T> v(y.size());
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * extent * inner + i;
          T s = 0;
          for (std::int64_t e = 0; e < extent; ++e) {
            const auto k = static_cast<std::size_t>(base + e * inner);
            s += gd[k] * y[k];
          }
          for (std::int64_t e = 0; e < extent; ++e) {
            const auto k = static_cast<std::size_t>(base + e * inner);
            v[k] = y[k] * (gd[k] - s);
          }
        }
      }
      return Tensor::from_buffer(saved.shape(), std::move(v));
    })};
  });
}

Tensor softmax_channel(const Tensor& x) {
  detail::require_rank(x, 4, "softmax_channel", "input");
  return softmax(x, 1);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_same_dtype(a, b, "matmul");
  MatmulDims d{};
  if (a.rank() == 2 && b.rank() == 2) {
    d = {1, a.dim(0), b.dim(1), a.dim(1)};
    if (b.dim(0) != d.k) throw std::invalid_argument("matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  } else if (a.rank() == 3 && b.rank() == 3) {
    d = {a.dim(0), a.dim(1), b.dim(2), a.dim(2)};
    if (b.dim(0) != d.batch || b.dim(1) != d.k) {
      throw std::invalid_argument("matmul: batched shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
  } else {
    throw std::invalid_argument("matmul: expected rank-2 or rank-3 operands");
  }
  FlopCounterScope::add(2 * d.batch * d.m * d.n * d.k);
  Tensor out = detail::checked(matmul_raw(a, b, false, false, d), "matmul");
  return record(out, "matmul", {a, b}, [a, b, d](const Tensor& g) -> std::vector<Tensor> {
    Tensor ga, gb;
    // dA = G B^T (m x k), dB = A^T G (k x n).
    if (a.requires_grad()) ga = reshape(matmul_raw(g, b, false, true, {d.batch, d.m, d.k, d.n}), a.shape());
    if (b.requires_grad()) gb = reshape(matmul_raw(a, g, true, false, {d.batch, d.k, d.n, d.m}), b.shape());
    return {ga, gb};
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_rank(x, 2, "linear", "input");
  detail::require_rank(weight, 2, "linear", "weight");
  detail::require_same_dtype(x, weight, "linear");
  const std::int64_t n = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in) {
    throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f)) {
    throw std::invalid_argument("linear: bias must have shape [" + std::to_string(out_f) + "]");
  }
  FlopCounterScope::add(2 * n * in * out_f);
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> v(static_cast<std::size_t>(n * out_f));
    detail::gemm<T>(false, true, n, out_f, in, x.data<T>().data(), weight.data<T>().data(), v.data(), false);
    if (bias.defined()) {
      auto bd = bias.data<T>();
      for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < out_f; ++c) v[static_cast<std::size_t>(r * out_f + c)] += bd[static_cast<std::size_t>(c)];
    }
    return Tensor::from_buffer({n, out_f}, std::move(v));
  });
  out = detail::checked(out, "linear");
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record(out, "linear", inputs, [x, weight, has_bias = bias.defined(), n, in, out_f](const Tensor& g) -> std::vector<Tensor> {
    std::vector<Tensor> grads(has_bias ? 3 : 2);
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gd = g.data<T>();
      if (x.requires_grad()) {
        std::vector<T> gx(static_cast<std::size_t>(n * in));
        detail::gemm<T>(false, false, n, in, out_f, gd.data(), weight.data<T>().data(), gx.data(), false);
        grads[0] = Tensor::from_buffer(x.shape(), std::move(gx));
      }
      if (weight.requires_grad()) {
        std::vector<T> gw(static_cast<std::size_t>(out_f * in));
        detail::gemm<T>(true, false, out_f, in, n, gd.data(), x.data<T>().data(), gw.data(), false);
        grads[1] = Tensor::from_buffer(weight.shape(), std::move(gw));
      }
      if (has_bias) {
        std::vector<T> gb(static_cast<std::size_t>(out_f), T(0));
        for (std::int64_t r = 0; r < n; ++r)
          for (std::int64_t c = 0; c < out_f; ++c) gb[static_cast<std::size_t>(c)] += gd[static_cast<std::size_t>(r * out_f + c)];
        grads[2] = Tensor::from_buffer({out_f}, std::move(gb));
      }
    });
    return grads;
  });
}

}  // namespace lucf
