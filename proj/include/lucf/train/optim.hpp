#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "lucf/nn/module.hpp"

namespace lucf {

/// lr_base * (1 - iter / max_iter)^power. Throws if iter is outside [0, max_iter].
double lr_schedule(std::int64_t iter, std::int64_t max_iter, double lr_base, double power = 0.9);

struct OptimConfig {
  double lr_base = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double power = 0.9;

  void validate() const;
};

nlohmann::json to_json(const OptimConfig& cfg);
OptimConfig optim_config_from_json(const nlohmann::json& j);

struct OptimState {
  OptimConfig cfg;
  std::int64_t iter = 0;
  std::int64_t max_iter = 0;
  /// One per parameter in registry order; created on the first step.
  std::vector<Tensor> velocity;

  /// Learning rate for the next step.
  double lr() const { return lr_schedule(iter, max_iter, cfg.lr_base, cfg.power); }
};

/// v = momentum * v + grad + weight_decay * param (decay on flagged
/// parameters only), param -= lr * v, then iter += 1. Every gradient is
/// checked before anything is written.
void sgd_step(const std::vector<nn::ParamRef>& params, OptimState& state);

}  // namespace lucf
