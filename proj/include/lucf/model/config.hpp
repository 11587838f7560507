#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "json.hpp"
#include "lucf/nn/layers.hpp"

namespace lucf {

struct ModelConfig {
  std::int64_t in_channels = 1;
  std::int64_t num_classes = 4;
  std::int64_t base_width = 16;
  /// Encoder output widths. All zero means {2, 4, 8, 16} * base_width.
  std::array<std::int64_t, 4> stage_widths{0, 0, 0, 0};
  std::array<int, 4> sample_strides{4, 2, 2, 1};
  std::array<int, 4> heads{1, 2, 4, 8};
  double mlp_ratio = 4.0;
  nn::NormKind local_norm = nn::NormKind::batch;
  bool lg_enabled = true;
  int fusion_depth = 4;
  std::int64_t input_h = 64;
  std::int64_t input_w = 64;

  std::array<std::int64_t, 4> widths() const;
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  /// Checks an input extent against the four halvings and the per-stage strides.
  void validate_input(std::int64_t h, std::int64_t w) const;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Missing keys keep their defaults; unknown keys are an error.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// FNV-1a 64 over the canonical JSON dump.
std::uint64_t config_hash(const ModelConfig& cfg);

/// Small config for CPU experiments: 64x64 input, base width 16.
ModelConfig desk_preset();
/// Reconstruction of the published 224x224 model; widths are chosen to land
/// near its parameter budget and are not ground truth.
ModelConfig paper_preset();

}  // namespace lucf
