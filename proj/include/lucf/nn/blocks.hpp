#pragma once

#include <cstdint>
#include <memory>

#include "lucf/nn/layers.hpp"

namespace lucf::nn {

struct BlockConfig {
  std::int64_t channels = 16;
  int heads = 1;
  int sample_stride = 1;
  double mlp_ratio = 4.0;
  NormKind norm_kind = NormKind::batch;
  Activation activation = Activation::gelu;

  std::int64_t hidden() const;
  void validate() const;
};

/// x + pw(act(norm(dw3x3(act(norm(pw(x))))))). The last projection starts at zero.
class LocalAggregation : public Module {
 public:
  LocalAggregation(const BlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x);

  BlockConfig cfg;
  Conv2d pw1;
  Norm2d norm1;
  Conv2d dw;
  Norm2d norm2;
  Conv2d pw2;
};

/// x + conv1x1(act(conv1x1(x))), hidden width mlp_ratio * C.
class ConvMlp : public Module {
 public:
  ConvMlp(const BlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x);

  BlockConfig cfg;
  Conv2d fc1, fc2;
};

/// Multi-head self-attention over one token per r x r window (the top-left
/// pixel). Returns the attended tokens at [B, C, H/r, W/r].
class GlobalSparseAttention : public Module {
 public:
  GlobalSparseAttention(const BlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& y);

  /// Softmax weights of the last forward, [B*heads, N, N].
  const Tensor& last_attention() const { return last_attention_; }
  std::int64_t last_token_count() const { return last_tokens_; }

  BlockConfig cfg;
  LayerNorm norm;
  Linear qkv;

 private:
  Tensor last_attention_;
  std::int64_t last_tokens_ = 0;
};

/// z = convT_r(attended) + y.
class TransConvSpread : public Module {
 public:
  TransConvSpread(const BlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& attended, const Tensor& y);

  BlockConfig cfg;
  ConvTranspose2d up;
};

/// z + fc2(act(fc1(z))) applied to the channel vector at every site.
class TokenMlp : public Module {
 public:
  TokenMlp(const BlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& z);

  BlockConfig cfg;
  Linear fc1, fc2;
};

class LGBlock : public Module {
 public:
  LGBlock(const BlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x);

  BlockConfig cfg;
  LocalAggregation local;
  ConvMlp cmlp;
  GlobalSparseAttention attention;
  TransConvSpread spread;
  TokenMlp mlp;
};

struct StageSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 16;
  bool downsample = true;
  bool lg_enabled = true;
};

struct EncoderOutput {
  /// Pre-downsample features handed to the decoder, [B, out/2, H, W].
  Tensor skip;
  /// Stage output, [B, out, H/2, W/2].
  Tensor out;
};

/// Two 3x3 conv layers, stride-2 conv downsampling to out_channels, then the
/// LG block when enabled.
class EncoderStage : public Module {
 public:
  EncoderStage(const StageSpec& spec, const BlockConfig& block, Rng& rng);
  EncoderOutput forward(const Tensor& x);

  StageSpec spec;
  std::int64_t mid;
  ConvBnAct conv1, conv2, down;
  std::unique_ptr<LGBlock> lg;
};

/// Bilinear x2, concat with the skip, two 3x3 conv layers down to C/2.
class DecoderStage : public Module {
 public:
  DecoderStage(std::int64_t channels, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& skip);

  std::int64_t channels;
  ConvBnAct conv1, conv2;
};

}  // namespace lucf::nn
