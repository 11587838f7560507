#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace lucf {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::int64_t>;

std::string to_string(DType dtype);
std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

/// Process-wide dtype used by factories when none is given. Training runs
/// in f32; gradient checks flip this to f64.
DType default_dtype();
void set_default_dtype(DType dtype);

class DefaultDTypeGuard {
 public:
  explicit DefaultDTypeGuard(DType dtype);
  ~DefaultDTypeGuard();
  DefaultDTypeGuard(const DefaultDTypeGuard&) = delete;
  DefaultDTypeGuard& operator=(const DefaultDTypeGuard&) = delete;

 private:
  DType previous_;
};

/// Thrown when an op produces NaN/Inf while finite checks are enabled.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

bool finite_checks_enabled();
void set_finite_checks(bool enabled);

class Tensor;
struct Node;

namespace detail {

struct Storage {
  std::variant<std::vector<float>, std::vector<double>> buffer;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  std::shared_ptr<Storage> storage;
  bool requires_grad = false;
  std::shared_ptr<TensorImpl> grad;
  std::shared_ptr<Node> grad_fn;
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share the underlying impl; the
/// data buffer is treated as immutable by every op, and only optimizers,
/// initializers and checkpoint loading write through mutable_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor empty(Shape shape, DType dtype = default_dtype());
  static Tensor zeros(Shape shape, DType dtype = default_dtype());
  static Tensor full(Shape shape, double value, DType dtype = default_dtype());
  static Tensor ones(Shape shape, DType dtype = default_dtype()) { return full(std::move(shape), 1.0, dtype); }
  static Tensor scalar(double value, DType dtype = default_dtype()) { return full({1}, value, dtype); }
  /// Values are converted to `dtype`.
  static Tensor from_values(Shape shape, std::span<const double> values, DType dtype = default_dtype());
  static Tensor from_values(Shape shape, std::initializer_list<double> values, DType dtype = default_dtype());
  template <class T>
  static Tensor from_buffer(Shape shape, std::vector<T> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t numel() const;
  DType dtype() const;

  template <class T>
  std::span<const T> data() const;
  template <class T>
  std::span<T> mutable_data();

  double item() const;
  double value_at(std::int64_t flat_index) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  /// Undefined until backward() reaches this leaf.
  Tensor grad() const;
  void zero_grad();
  const std::shared_ptr<Node>& grad_fn() const;

  /// Shares storage, drops history.
  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;

  /// Reverse-mode sweep from this scalar into every requires_grad leaf.
  void backward() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  void require_defined() const;
  std::shared_ptr<detail::TensorImpl> impl_;
};

template <class T>
Tensor Tensor::from_buffer(Shape shape, std::vector<T> values) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("from_buffer: shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = std::is_same_v<T, float> ? DType::f32 : DType::f64;
  impl->storage = std::make_shared<detail::Storage>();
  impl->storage->buffer = std::move(values);
  return Tensor(std::move(impl));
}

template <class T>
std::span<const T> Tensor::data() const {
  require_defined();
  auto* buf = std::get_if<std::vector<T>>(&impl_->storage->buffer);
  if (buf == nullptr) throw std::logic_error("Tensor::data: dtype mismatch, tensor is " + to_string(dtype()));
  return {buf->data(), buf->size()};
}

template <class T>
std::span<T> Tensor::mutable_data() {
  require_defined();
  auto* buf = std::get_if<std::vector<T>>(&impl_->storage->buffer);
  if (buf == nullptr) throw std::logic_error("Tensor::mutable_data: dtype mismatch, tensor is " + to_string(dtype()));
  return {buf->data(), buf->size()};
}

/// Calls `fn(T{})` with T = float or double according to `dtype`.
template <class Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
  if (dtype == DType::f32) return fn(float{});
  return fn(double{});
}

}  // namespace lucf
