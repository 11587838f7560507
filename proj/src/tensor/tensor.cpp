#include "lucf/tensor/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

#include "lucf/tensor/autograd.hpp"

namespace lucf {

namespace {
std::atomic<DType> g_default_dtype{DType::f32};
std::atomic<bool> g_finite_checks{false};
}  // namespace

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e <= 0) throw std::invalid_argument("shape " + shape_str(shape) + " has a non-positive extent");
    n *= e;
  }
  return n;
}

DType default_dtype() { return g_default_dtype.load(); }
void set_default_dtype(DType dtype) { g_default_dtype.store(dtype); }

DefaultDTypeGuard::DefaultDTypeGuard(DType dtype) : previous_(default_dtype()) { set_default_dtype(dtype); }
DefaultDTypeGuard::~DefaultDTypeGuard() { set_default_dtype(previous_); }

bool finite_checks_enabled() { return g_finite_checks.load(); }
void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }

void Tensor::require_defined() const {
  if (!impl_) throw std::logic_error("operation on an undefined Tensor");
}

Tensor Tensor::empty(Shape shape, DType dtype) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  if (dtype == DType::f32) return from_buffer(std::move(shape), std::vector<float>(n));
  return from_buffer(std::move(shape), std::vector<double>(n));
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return empty(std::move(shape), dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  if (dtype == DType::f32) return from_buffer(std::move(shape), std::vector<float>(n, static_cast<float>(value)));
  return from_buffer(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  if (dtype == DType::f64) return from_buffer(std::move(shape), std::vector<double>(values.begin(), values.end()));
  std::vector<float> v(values.size());
  std::transform(values.begin(), values.end(), v.begin(), [](double x) { return static_cast<float>(x); });
  return from_buffer(std::move(shape), std::move(v));
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype);
}

const Shape& Tensor::shape() const {
  require_defined();
  return impl_->shape;
}

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::out_of_range("axis out of range for shape " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

DType Tensor::dtype() const {
  require_defined();
  return impl_->dtype;
}

double Tensor::value_at(std::int64_t i) const {
  return dispatch(dtype(), [&](auto tag) -> double {
    using T = decltype(tag);
    auto d = data<T>();
    if (i < 0 || i >= static_cast<std::int64_t>(d.size())) throw std::out_of_range("Tensor::value_at");
    return static_cast<double>(d[static_cast<std::size_t>(i)]);
  });
}

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("Tensor::item on tensor of shape " + shape_str(shape()));
  return value_at(0);
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  require_defined();
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::grad() const {
  require_defined();
  return Tensor(impl_->grad);
}

void Tensor::zero_grad() {
  require_defined();
  impl_->grad.reset();
}

const std::shared_ptr<Node>& Tensor::grad_fn() const {
  require_defined();
  return impl_->grad_fn;
}

Tensor Tensor::detach() const {
  require_defined();
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->storage = impl_->storage;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  require_defined();
  return dispatch(dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto d = data<T>();
    return from_buffer(shape(), std::vector<T>(d.begin(), d.end()));
  });
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return clone();
  auto v = to_vector();
  return from_values(shape(), v, target);
}

void Tensor::backward() const {
  require_defined();
  run_backward(*this);
}

}  // namespace lucf
