#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "lucf/model/config.hpp"
#include "lucf/nn/blocks.hpp"

namespace lucf {

struct ForwardOutputs {
  /// One entry per fused decoder layer, shallowest-resolution first. Each is
  /// [B, num_classes, H, W].
  std::vector<Tensor> head_logits;
  /// Sum of head_logits in list order.
  Tensor fused_logits;
};

/// 1x1 conv to class logits, then bilinear resize to the output size.
class CIEHead : public nn::Module {
 public:
  CIEHead(std::int64_t channels, std::int64_t num_classes, Rng& rng);
  Tensor forward(const Tensor& feat, std::int64_t out_h, std::int64_t out_w) const;

  nn::Conv2d proj;
};

class LucfNet : public nn::Module {
 public:
  LucfNet(const ModelConfig& cfg, Rng& rng);

  ForwardOutputs forward(const Tensor& x);
  /// Post-LG feature map of encoder stage 1..4, channel-averaged and
  /// min-max normalised per sample to [0, 1] (constant maps become 0.5).
  /// Returns [B, H / 2^stage, W / 2^stage].
  Tensor dump_features(const Tensor& x, int stage);

  const ModelConfig& config() const { return cfg_; }

  /// Shapes seen by the last forward, for inspection.
  std::array<Shape, 4> encoder_shapes;
  std::array<Shape, 4> decoder_shapes;

  std::array<std::unique_ptr<nn::EncoderStage>, 4> encoders;
  std::array<std::unique_ptr<nn::DecoderStage>, 4> decoders;
  /// heads[k] serves decoder (4 - fusion_depth + k).
  std::vector<std::unique_ptr<CIEHead>> heads;

 private:
  ModelConfig cfg_;
};

/// Closed-form parameter count.
std::int64_t param_count(const ModelConfig& cfg);

/// Closed-form FLOPs for one forward pass of a single image: 2 per
/// multiply-accumulate in convolutions, transposed convolutions, linear
/// layers and the two attention products (QK^T, AV), plus 3 per softmax
/// element. Norms, activations, resizing and additions are not counted.
std::int64_t flop_count(const ModelConfig& cfg, std::int64_t h, std::int64_t w);

/// The same quantity measured by running the network under a FlopCounterScope.
std::int64_t measured_flop_count(LucfNet& net, std::int64_t h, std::int64_t w);

}  // namespace lucf
