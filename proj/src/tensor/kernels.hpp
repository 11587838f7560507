#pragma once

// Internal helpers shared by the op implementations.

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "lucf/tensor/autograd.hpp"
#include "lucf/tensor/ops.hpp"
#include "lucf/tensor/tensor.hpp"

namespace lucf::detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

/// C(MxN) (+)= op(A) * op(B), row-major, op = optional transpose.
template <class T>
void gemm(bool trans_a, bool trans_b, Eigen::Index m, Eigen::Index n, Eigen::Index k, const T* a, const T* b, T* c,
          bool accumulate) {
  MapMat<T> cm(c, m, n);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b) {
    cm.noalias() += ConstMapMat<T>(a, m, k) * ConstMapMat<T>(b, k, n);
  } else if (trans_a && !trans_b) {
    cm.noalias() += ConstMapMat<T>(a, k, m).transpose() * ConstMapMat<T>(b, k, n);
  } else if (!trans_a && trans_b) {
    cm.noalias() += ConstMapMat<T>(a, m, k) * ConstMapMat<T>(b, n, k).transpose();
  } else {
    cm.noalias() += ConstMapMat<T>(a, k, m).transpose() * ConstMapMat<T>(b, n, k).transpose();
  }
}

inline void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw std::invalid_argument(std::string(op) + ": dtype mismatch (" + to_string(a.dtype()) + " vs " +
                                to_string(b.dtype()) + ")");
  }
}

inline void require_rank(const Tensor& t, int rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                                ", got " + shape_str(t.shape()));
  }
}

/// Validates finiteness when finite checks are on; returns `t`.
inline Tensor checked(Tensor t, const char* op) {
  if (!finite_checks_enabled()) return t;
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (auto v : t.data<T>()) {
      if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + " produced a non-finite value");
    }
  });
  return t;
}

inline int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::out_of_range(std::string(op) + ": axis out of range");
  return axis;
}

/// Sums `g` down to `shape` when the forward op broadcast a single element.
inline Tensor reduce_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  return reshape(sum(g), shape);
}

}  // namespace lucf::detail
