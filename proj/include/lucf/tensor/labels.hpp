#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lucf/tensor/tensor.hpp"

namespace lucf {

/// Integer class map [B, H, W], row-major.
struct LabelMap {
  std::int64_t batch = 0, height = 0, width = 0;
  std::vector<std::int32_t> values;

  LabelMap() = default;
  LabelMap(std::int64_t b, std::int64_t h, std::int64_t w);
  LabelMap(std::int64_t b, std::int64_t h, std::int64_t w, std::vector<std::int32_t> v);

  std::int64_t numel() const { return batch * height * width; }
  Shape shape() const { return {batch, height, width}; }
  std::int32_t at(std::int64_t b, std::int64_t y, std::int64_t x) const {
    return values[static_cast<std::size_t>((b * height + y) * width + x)];
  }
  /// Throws std::invalid_argument if any value is outside [0, num_classes).
  void check_range(std::int64_t num_classes, const std::string& who) const;
  /// Requires logits/probs of shape [B, C, H, W] matching this map.
  void check_matches(const Tensor& nchw, const std::string& who) const;
};

/// Per-pixel argmax over dim 1 of an NCHW tensor; ties go to the lowest class.
LabelMap argmax_channels(const Tensor& nchw);

}  // namespace lucf
