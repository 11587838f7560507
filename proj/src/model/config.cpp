#include "lucf/model/config.hpp"

#include <stdexcept>
#include <string>

namespace lucf {

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& why) {
  throw std::invalid_argument("ModelConfig." + field + ": " + why);
}

}  // namespace

std::array<std::int64_t, 4> ModelConfig::widths() const {
  if (stage_widths == std::array<std::int64_t, 4>{0, 0, 0, 0}) {
    return {2 * base_width, 4 * base_width, 8 * base_width, 16 * base_width};
  }
  return stage_widths;
}

void ModelConfig::validate() const {
  if (in_channels < 1) bad("in_channels", "must be >= 1");
  if (num_classes < 2) bad("num_classes", "must be >= 2");
  if (base_width < 1) bad("base_width", "must be >= 1");
  const auto w = widths();
  for (int i = 0; i < 4; ++i) {
    const auto si = std::to_string(i);
    if (w[static_cast<std::size_t>(i)] < 2 || w[static_cast<std::size_t>(i)] % 2 != 0) bad("stage_widths", "entry " + si + " must be even and >= 2");
    if (i > 0 && w[static_cast<std::size_t>(i)] != 2 * w[static_cast<std::size_t>(i - 1)]) {
      bad("stage_widths", "each stage must double the previous width (entry " + si + ")");
    }
    if (sample_strides[static_cast<std::size_t>(i)] < 1) bad("sample_strides", "entry " + si + " must be >= 1");
    if (heads[static_cast<std::size_t>(i)] < 1 || w[static_cast<std::size_t>(i)] % heads[static_cast<std::size_t>(i)] != 0) {
      bad("heads", "entry " + si + " must divide stage width " + std::to_string(w[static_cast<std::size_t>(i)]));
    }
  }
  if (!(mlp_ratio > 0.0)) bad("mlp_ratio", "must be positive");
  if (fusion_depth < 1 || fusion_depth > 4) bad("fusion_depth", "must be in 1..4, got " + std::to_string(fusion_depth));
  validate_input(input_h, input_w);
}

void ModelConfig::validate_input(std::int64_t h, std::int64_t w) const {
  if (h < 16 || w < 16 || h % 16 != 0 || w % 16 != 0) {
    throw std::invalid_argument("input size " + std::to_string(h) + "x" + std::to_string(w) +
                                " is not divisible by 16");
  }
  if (!lg_enabled) return;
  for (int i = 0; i < 4; ++i) {
    const std::int64_t sh = h >> (i + 1), sw = w >> (i + 1);
    const int r = sample_strides[static_cast<std::size_t>(i)];
    if (sh % r != 0 || sw % r != 0) {
      throw std::invalid_argument("sample stride " + std::to_string(r) + " of stage " + std::to_string(i + 1) +
                                  " does not divide its " + std::to_string(sh) + "x" + std::to_string(sw) + " map");
    }
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"in_channels", c.in_channels},
      {"num_classes", c.num_classes},
      {"base_width", c.base_width},
      {"stage_widths", c.widths()},
      {"sample_strides", c.sample_strides},
      {"heads", c.heads},
      {"mlp_ratio", c.mlp_ratio},
      {"local_norm", c.local_norm == nn::NormKind::batch ? "batch" : "layer"},
      {"lg_enabled", c.lg_enabled},
      {"fusion_depth", c.fusion_depth},
      {"input_size", {c.input_h, c.input_w}},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  ModelConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "in_channels") c.in_channels = v.get<std::int64_t>();
    else if (key == "num_classes") c.num_classes = v.get<std::int64_t>();
    else if (key == "base_width") c.base_width = v.get<std::int64_t>();
    else if (key == "stage_widths") c.stage_widths = v.get<std::array<std::int64_t, 4>>();
    else if (key == "sample_strides") c.sample_strides = v.get<std::array<int, 4>>();
    else if (key == "heads") c.heads = v.get<std::array<int, 4>>();
    else if (key == "mlp_ratio") c.mlp_ratio = v.get<double>();
    else if (key == "local_norm") {
      const auto s = v.get<std::string>();
      if (s != "batch" && s != "layer") bad("local_norm", "expected \"batch\" or \"layer\", got \"" + s + "\"");
      c.local_norm = s == "batch" ? nn::NormKind::batch : nn::NormKind::layer;
    } else if (key == "lg_enabled") c.lg_enabled = v.get<bool>();
    else if (key == "fusion_depth") c.fusion_depth = v.get<int>();
    else if (key == "input_size") {
      const auto hw = v.get<std::array<std::int64_t, 2>>();
      c.input_h = hw[0];
      c.input_w = hw[1];
    } else {
      throw std::invalid_argument("model config: unknown key \"" + key + "\"");
    }
  }
  return c;
}

std::uint64_t config_hash(const ModelConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(cfg).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ModelConfig desk_preset() { return ModelConfig{}; }

ModelConfig paper_preset() {
  ModelConfig c;
  c.num_classes = 9;
  c.base_width = 22;
  c.input_h = 224;
  c.input_w = 224;
  return c;
}

}  // namespace lucf
