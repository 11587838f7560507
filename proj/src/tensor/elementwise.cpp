#include <algorithm>
#include <cmath>
#include <numbers>

#include "kernels.hpp"

namespace lucf {

using detail::checked;
using detail::reduce_to;

namespace {

enum class BinaryKind { add, sub, mul, div };

const char* binary_name(BinaryKind k) {
  switch (k) {
    case BinaryKind::add: return "add";
    case BinaryKind::sub: return "sub";
    case BinaryKind::mul: return "mul";
    case BinaryKind::div: return "div";
  }
  return "?";
}

Tensor binary_forward(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const char* name = binary_name(kind);
  detail::require_same_dtype(a, b, name);
  const auto na = a.numel();
  const auto nb = b.numel();
  if (a.shape() != b.shape() && na != 1 && nb != 1) {
    throw std::invalid_argument(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  const Shape out_shape = (na >= nb) ? a.shape() : b.shape();
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    auto y = b.data<T>();
    const auto n = static_cast<std::size_t>(shape_numel(out_shape));
    std::vector<T> out(n);
    const bool sa = na == 1 && n != 1;
    const bool sb = nb == 1 && n != 1;
    for (std::size_t i = 0; i < n; ++i) {
      const T u = sa ? x[0] : x[i];
      const T v = sb ? y[0] : y[i];
      switch (kind) {
        case BinaryKind::add: out[i] = u + v; break;
        case BinaryKind::sub: out[i] = u - v; break;
        case BinaryKind::mul: out[i] = u * v; break;
        case BinaryKind::div: out[i] = u / v; break;
      }
    }
    return Tensor::from_buffer(out_shape, std::move(out));
  });
}

template <class F, class G>
Tensor unary(const Tensor& x, const char* name, F&& forward, G&& derivative) {
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    std::vector<T> v(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) v[i] = static_cast<T>(forward(static_cast<double>(in[i])));
    return Tensor::from_buffer(x.shape(), std::move(v));
  });
  out = checked(std::move(out), name);
  return record(out, name, {x}, [x, derivative](const Tensor& g) -> std::vector<Tensor> {
    return {dispatch(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto in = x.data<T>();
      auto gd = g.data<T>();
      std::vector<T> v(in.size());
      for (std::size_t i = 0; i < in.size(); ++i) {
        v[i] = static_cast<T>(gd[i] * derivative(static_cast<double>(in[i])));
      }
      return Tensor::from_buffer(x.shape(), std::move(v));
    })};
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  auto out = checked(binary_forward(a, b, BinaryKind::add), "add");
  return record(out, "add", {a, b}, [sa = a.shape(), sb = b.shape()](const Tensor& g) -> std::vector<Tensor> {
    return {reduce_to(g, sa), reduce_to(g, sb)};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto out = checked(binary_forward(a, b, BinaryKind::sub), "sub");
  return record(out, "sub", {a, b}, [sa = a.shape(), sb = b.shape()](const Tensor& g) -> std::vector<Tensor> {
    return {reduce_to(g, sa), reduce_to(neg(g), sb)};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto out = checked(binary_forward(a, b, BinaryKind::mul), "mul");
  return record(out, "mul", {a, b}, [a, b](const Tensor& g) -> std::vector<Tensor> {
    Tensor ga, gb;
    if (a.requires_grad()) ga = reduce_to(mul(g, b.detach()), a.shape());
    if (b.requires_grad()) gb = reduce_to(mul(g, a.detach()), b.shape());
    return {ga, gb};
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  auto out = checked(binary_forward(a, b, BinaryKind::div), "div");
  return record(out, "div", {a, b}, [a, b](const Tensor& g) -> std::vector<Tensor> {
    Tensor ga, gb;
    const Tensor bd = b.detach();
    if (a.requires_grad()) ga = reduce_to(div(g, bd), a.shape());
    if (b.requires_grad()) gb = reduce_to(neg(div(mul(g, a.detach()), mul(bd, bd))), b.shape());
    return {ga, gb};
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = a.data<T>();
    std::vector<T> v(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) v[i] = in[i] + static_cast<T>(s);
    return Tensor::from_buffer(a.shape(), std::move(v));
  });
  return record(checked(out, "add_scalar"), "add_scalar", {a},
                [](const Tensor& g) -> std::vector<Tensor> { return {g}; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  Tensor out = dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = a.data<T>();
    std::vector<T> v(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) v[i] = in[i] * static_cast<T>(s);
    return Tensor::from_buffer(a.shape(), std::move(v));
  });
  return record(checked(out, "mul_scalar"), "mul_scalar", {a},
                [s](const Tensor& g) -> std::vector<Tensor> { return {mul_scalar(g, s)}; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, "leaky_relu", [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v) { return v > 0 ? 1.0 : slope; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt_2pi](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x, double floor) {
  return unary(
      x, "log", [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v) { return v > floor ? 1.0 / v : 0.0; });
}

}  // namespace lucf
