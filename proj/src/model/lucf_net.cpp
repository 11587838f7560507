#include "lucf/model/lucf_net.hpp"

#include <iostream>
#include <stdexcept>
#include <string>

#include "lucf/tensor/autograd.hpp"

namespace lucf {

namespace {

nn::BlockConfig block_config(const ModelConfig& cfg, int i) {
  nn::BlockConfig b;
  b.channels = cfg.widths()[static_cast<std::size_t>(i)];
  b.heads = cfg.heads[static_cast<std::size_t>(i)];
  b.sample_stride = cfg.sample_strides[static_cast<std::size_t>(i)];
  b.mlp_ratio = cfg.mlp_ratio;
  b.norm_kind = cfg.local_norm;
  b.activation = nn::Activation::gelu;
  return b;
}

}  // namespace

CIEHead::CIEHead(std::int64_t channels, std::int64_t num_classes, Rng& rng) : proj(channels, num_classes, 1, rng) {
  register_module("proj", proj);
}

Tensor CIEHead::forward(const Tensor& feat, std::int64_t out_h, std::int64_t out_w) const {
  const Tensor logits = proj.forward(feat);
  if (logits.dim(2) == out_h && logits.dim(3) == out_w) return logits;
  if (out_h < logits.dim(2) || out_w < logits.dim(3)) {
    std::clog << "warning: cie_head downscales " << logits.dim(2) << "x" << logits.dim(3) << " to " << out_h << "x"
              << out_w << "\n";
  }
  return bilinear_resize(logits, out_h, out_w);
}

LucfNet::LucfNet(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto w = cfg_.widths();
  for (int i = 0; i < 4; ++i) {
    nn::StageSpec spec{i == 0 ? cfg_.in_channels : w[static_cast<std::size_t>(i - 1)], w[static_cast<std::size_t>(i)], true,
                       cfg_.lg_enabled};
    encoders[static_cast<std::size_t>(i)] = std::make_unique<nn::EncoderStage>(spec, block_config(cfg_, i), rng);
    register_module("encoder" + std::to_string(i + 1), *encoders[static_cast<std::size_t>(i)]);
  }
  for (int j = 0; j < 4; ++j) {
    decoders[static_cast<std::size_t>(j)] = std::make_unique<nn::DecoderStage>(w[static_cast<std::size_t>(3 - j)], rng);
    register_module("decoder" + std::to_string(j + 1), *decoders[static_cast<std::size_t>(j)]);
  }
  for (int j = 4 - cfg_.fusion_depth; j < 4; ++j) {
    heads.push_back(std::make_unique<CIEHead>(w[static_cast<std::size_t>(3 - j)] / 2, cfg_.num_classes, rng));
    register_module("head" + std::to_string(j + 1), *heads.back());
  }
}

ForwardOutputs LucfNet::forward(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels) {
    throw std::invalid_argument("LucfNet: expected [B," + std::to_string(cfg_.in_channels) + ",H,W] input, got " +
                                shape_str(x.shape()));
  }
  const std::int64_t H = x.dim(2), W = x.dim(3);
  cfg_.validate_input(H, W);

  std::array<Tensor, 4> skips;
  Tensor h = x;
  for (std::size_t i = 0; i < 4; ++i) {
    auto o = encoders[i]->forward(h);
    skips[i] = o.skip;
    h = o.out;
    encoder_shapes[i] = h.shape();
  }
  ForwardOutputs out;
  const int first_head = 4 - cfg_.fusion_depth;
  for (int j = 0; j < 4; ++j) {
    h = decoders[static_cast<std::size_t>(j)]->forward(h, skips[static_cast<std::size_t>(3 - j)]);
    decoder_shapes[static_cast<std::size_t>(j)] = h.shape();
    if (j >= first_head) out.head_logits.push_back(heads[static_cast<std::size_t>(j - first_head)]->forward(h, H, W));
  }
  out.fused_logits = out.head_logits[0];
  for (std::size_t k = 1; k < out.head_logits.size(); ++k) out.fused_logits = add(out.fused_logits, out.head_logits[k]);
  return out;
}

Tensor LucfNet::dump_features(const Tensor& x, int stage) {
  if (stage < 1 || stage > 4) throw std::invalid_argument("dump_features: stage must be in 1..4, got " + std::to_string(stage));
  cfg_.validate_input(x.dim(2), x.dim(3));
  NoGradGuard no_grad;
  Tensor h = x;
  for (int i = 0; i < stage; ++i) h = encoders[static_cast<std::size_t>(i)]->forward(h).out;

  const std::int64_t B = h.dim(0), C = h.dim(1), plane = h.dim(2) * h.dim(3);
  auto v = h.to_vector();
  std::vector<double> map(static_cast<std::size_t>(B * plane));
  for (std::int64_t b = 0; b < B; ++b) {
    double lo = 0.0, hi = 0.0;
    for (std::int64_t p = 0; p < plane; ++p) {
      double s = 0.0;
      for (std::int64_t c = 0; c < C; ++c) s += v[static_cast<std::size_t>((b * C + c) * plane + p)];
      const double m = s / static_cast<double>(C);
      map[static_cast<std::size_t>(b * plane + p)] = m;
      lo = p == 0 ? m : std::min(lo, m);
      hi = p == 0 ? m : std::max(hi, m);
    }
    for (std::int64_t p = 0; p < plane; ++p) {
      auto& m = map[static_cast<std::size_t>(b * plane + p)];
      m = hi > lo ? (m - lo) / (hi - lo) : 0.5;
    }
  }
  return Tensor::from_values({B, h.dim(2), h.dim(3)}, map, h.dtype());
}

namespace {

std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t k, bool bias) {
  return out * in * k * k + (bias ? out : 0);
}
std::int64_t conv_bn(std::int64_t in, std::int64_t out) { return conv_params(in, out, 3, false) + 2 * out; }

std::int64_t lg_params(const nn::BlockConfig& b) {
  const std::int64_t C = b.channels, hid = b.hidden(), r = b.sample_stride;
  const std::int64_t local = C * C + 2 * C + 9 * C + 2 * C + C * C + C;
  const std::int64_t mlp = C * hid + hid + hid * C + C;
  const std::int64_t attention = 2 * C + 3 * C * C + 3 * C;
  const std::int64_t spread = C * C * r * r + C;
  return local + mlp + attention + spread + mlp;
}

std::int64_t lg_flops(const nn::BlockConfig& b, std::int64_t P) {
  const std::int64_t C = b.channels, hid = b.hidden(), r = b.sample_stride;
  const std::int64_t N = P / (r * r);
  const std::int64_t local = 2 * C * C * P + 2 * 9 * C * P + 2 * C * C * P;
  const std::int64_t mlp = 4 * C * hid * P;
  const std::int64_t attention = 2 * N * C * 3 * C + 2 * N * N * C + 3 * b.heads * N * N + 2 * N * N * C;
  const std::int64_t spread = 2 * C * C * r * r * N;
  return local + mlp + attention + spread + mlp;
}

}  // namespace

std::int64_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const auto w = cfg.widths();
  std::int64_t n = 0;
  for (int i = 0; i < 4; ++i) {
    const std::int64_t in = i == 0 ? cfg.in_channels : w[static_cast<std::size_t>(i - 1)], out = w[static_cast<std::size_t>(i)];
    n += conv_bn(in, out / 2) + conv_bn(out / 2, out / 2) + conv_bn(out / 2, out);
    if (cfg.lg_enabled) n += lg_params(block_config(cfg, i));
  }
  for (int j = 0; j < 4; ++j) {
    const std::int64_t C = w[static_cast<std::size_t>(3 - j)];
    n += conv_bn(C + C / 2, C / 2) + conv_bn(C / 2, C / 2);
    if (j >= 4 - cfg.fusion_depth) n += conv_params(C / 2, cfg.num_classes, 1, true);
  }
  return n;
}

std::int64_t flop_count(const ModelConfig& cfg, std::int64_t H, std::int64_t W) {
  cfg.validate();
  cfg.validate_input(H, W);
  const auto w = cfg.widths();
  std::int64_t f = 0;
  for (int i = 0; i < 4; ++i) {
    const std::int64_t in = i == 0 ? cfg.in_channels : w[static_cast<std::size_t>(i - 1)], out = w[static_cast<std::size_t>(i)];
    const std::int64_t m = out / 2, P = (H >> i) * (W >> i), Q = P / 4;
    f += 2 * m * P * in * 9 + 2 * m * P * m * 9 + 2 * out * Q * m * 9;
    if (cfg.lg_enabled) f += lg_flops(block_config(cfg, i), Q);
  }
  for (int j = 0; j < 4; ++j) {
    const std::int64_t C = w[static_cast<std::size_t>(3 - j)];
    const std::int64_t P = (H >> (3 - j)) * (W >> (3 - j));
    f += 2 * (C / 2) * P * (C + C / 2) * 9 + 2 * (C / 2) * P * (C / 2) * 9;
    if (j >= 4 - cfg.fusion_depth) f += 2 * cfg.num_classes * (C / 2) * P;
  }
  return f;
}

std::int64_t measured_flop_count(LucfNet& net, std::int64_t h, std::int64_t w) {
  const bool was_training = net.training();
  net.eval();
  NoGradGuard no_grad;
  const Tensor x = Tensor::zeros({1, net.config().in_channels, h, w}, net.parameters().front().tensor->dtype());
  FlopCounterScope scope;
  net.forward(x);
  net.train(was_training);
  return scope.flops();
}

}  // namespace lucf
