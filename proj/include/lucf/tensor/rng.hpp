#pragma once

#include <cstdint>

#include "lucf/tensor/tensor.hpp"

namespace lucf {

/// Counter-based generator. The n-th draw (n = 0, 1, ...) of stream s under
/// seed k is
///
///   key   = mix64(k ^ mix64(s + 0x632BE59BD9B4E019))
///   value = mix64(key + (n + 1) * 0x9E3779B97F4A7C15)
///
/// where mix64 is the SplitMix64 finalizer. The full state is (seed, stream,
/// counter), so any position can be reconstructed exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0, std::uint64_t counter = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi], unbiased (rejection sampling).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller; consumes two draws per call.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent generator for a sub-stream (e.g. per sample or per layer).
  Rng derive(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix64(std::uint64_t x);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_;
};

Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, DType dtype = default_dtype());
Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi, DType dtype = default_dtype());

}  // namespace lucf
