#include <numeric>

#include "kernels.hpp"

namespace lucf {

namespace {

// (outer, axis, inner) factorization of a shape around `axis`.
struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t extent = 1;
  std::int64_t inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw std::invalid_argument("reshape: more than one inferred extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->dtype = x.dtype();
  impl->storage = x.impl()->storage;
  return record(Tensor(std::move(impl)), "reshape", {x}, [src = x.shape()](const Tensor& g) -> std::vector<Tensor> {
    return {reshape(g, src)};
  });
}

Tensor flatten(const Tensor& x) { return reshape(x, {x.numel()}); }

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
  const int r = x.rank();
  if (static_cast<int>(dims.size()) != r) throw std::invalid_argument("permute: wrong number of dims");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int d : dims) {
    if (d < 0 || d >= r || seen[static_cast<std::size_t>(d)]) throw std::invalid_argument("permute: invalid dims");
    seen[static_cast<std::size_t>(d)] = true;
  }
  const Shape& in_shape = x.shape();
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = in_shape[static_cast<std::size_t>(dims[static_cast<std::size_t>(i)])];

  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) {
    in_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(i) + 1] * in_shape[static_cast<std::size_t>(i) + 1];
  }
  // Stride in the input for each output axis.
  std::vector<std::int64_t> src_strides(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) src_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(dims[static_cast<std::size_t>(i)])];

  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    std::vector<T> v(in.size());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t src = 0;
    const auto last = static_cast<std::size_t>(r - 1);
    const std::int64_t last_extent = out_shape[last];
    const std::int64_t last_stride = src_strides[last];
    std::size_t o = 0;
    while (o < v.size()) {
      for (std::int64_t j = 0; j < last_extent; ++j) v[o++] = in[static_cast<std::size_t>(src + j * last_stride)];
      // Advance the multi-index over all but the last axis.
      int ax = r - 2;
      while (ax >= 0) {
        const auto a = static_cast<std::size_t>(ax);
        ++idx[a];
        src += src_strides[a];
        if (idx[a] < out_shape[a]) break;
        src -= src_strides[a] * out_shape[a];
        idx[a] = 0;
        --ax;
      }
      if (ax < 0) break;
    }
    return Tensor::from_buffer(out_shape, std::move(v));
  });
  std::vector<int> inverse(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) inverse[static_cast<std::size_t>(dims[static_cast<std::size_t>(i)])] = i;
  return record(out, "permute", {x}, [inverse](const Tensor& g) -> std::vector<Tensor> { return {permute(g, inverse)}; });
}

Tensor transpose(const Tensor& x, int a, int b) {
  const int r = x.rank();
  a = detail::normalize_axis(a, r, "transpose");
  b = detail::normalize_axis(b, r, "transpose");
  std::vector<int> dims(static_cast<std::size_t>(r));
  std::iota(dims.begin(), dims.end(), 0);
  std::swap(dims[static_cast<std::size_t>(a)], dims[static_cast<std::size_t>(b)]);
  return permute(x, dims);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const int r = parts[0].rank();
  axis = detail::normalize_axis(axis, r, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  std::vector<std::int64_t> extents;
  for (const auto& p : parts) {
    detail::require_same_dtype(parts[0], p, "concat");
    if (p.rank() != r) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != axis && p.shape()[static_cast<std::size_t>(i)] != parts[0].shape()[static_cast<std::size_t>(i)]) {
        throw std::invalid_argument("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                                    shape_str(p.shape()));
      }
    }
    extents.push_back(p.shape()[static_cast<std::size_t>(axis)]);
    out_shape[static_cast<std::size_t>(axis)] += extents.back();
  }
  const auto split = split_at(out_shape, axis);
  Tensor out = dispatch(parts[0].dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> v(static_cast<std::size_t>(shape_numel(out_shape)));
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto in = parts[k].template data<T>();
      const std::int64_t block = extents[k] * split.inner;
      for (std::int64_t o = 0; o < split.outer; ++o) {
        std::copy_n(in.begin() + o * block, block, v.begin() + o * split.extent * split.inner + offset);
      }
      offset += block;
    }
    return Tensor::from_buffer(out_shape, std::move(v));
  });
  return record(out, "concat", parts, [extents, axis](const Tensor& g) -> std::vector<Tensor> {
    std::vector<Tensor> grads;
    std::int64_t start = 0;
    for (auto e : extents) {
      grads.push_back(slice(g, axis, start, e));
      start += e;
    }
    return grads;
  });
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  axis = detail::normalize_axis(axis, x.rank(), "slice");
  const auto split = split_at(x.shape(), axis);
  if (start < 0 || length <= 0 || start + length > split.extent) {
    throw std::out_of_range("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                            ") outside extent " + std::to_string(split.extent));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    std::vector<T> v(static_cast<std::size_t>(shape_numel(out_shape)));
    const std::int64_t block = length * split.inner;
    for (std::int64_t o = 0; o < split.outer; ++o) {
      std::copy_n(in.begin() + (o * split.extent + start) * split.inner, block, v.begin() + o * block);
    }
    return Tensor::from_buffer(out_shape, std::move(v));
  });
  return record(out, "slice", {x}, [x_shape = x.shape(), axis, start, length, split](const Tensor& g) -> std::vector<Tensor> {
    return {dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gd = g.data<T>();
      std::vector<T> v(static_cast<std::size_t>(shape_numel(x_shape)), T(0));
      const std::int64_t block = length * split.inner;
      for (std::int64_t o = 0; o < split.outer; ++o) {
        std::copy_n(gd.begin() + o * block, block, v.begin() + (o * split.extent + start) * split.inner);
      }
      return Tensor::from_buffer(x_shape, std::move(v));
    })};
  });
}

Tensor gather(const Tensor& x, std::span<const std::int64_t> indices) {
  const auto n = x.numel();
  for (auto i : indices) {
    if (i < 0 || i >= n) throw std::out_of_range("gather: index " + std::to_string(i) + " out of range");
  }
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  if (idx.empty()) throw std::invalid_argument("gather: empty index list");
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    std::vector<T> v(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) v[k] = in[static_cast<std::size_t>(idx[k])];
    return Tensor::from_buffer({static_cast<std::int64_t>(idx.size())}, std::move(v));
  });
  return record(out, "gather", {x}, [idx, x_shape = x.shape()](const Tensor& g) -> std::vector<Tensor> {
    return {dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gd = g.data<T>();
      std::vector<T> v(static_cast<std::size_t>(shape_numel(x_shape)), T(0));
      for (std::size_t k = 0; k < idx.size(); ++k) v[static_cast<std::size_t>(idx[k])] += gd[k];
      return Tensor::from_buffer(x_shape, std::move(v));
    })};
  });
}

}  // namespace lucf
