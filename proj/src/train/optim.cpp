#include "lucf/train/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lucf {

double lr_schedule(std::int64_t iter, std::int64_t max_iter, double lr_base, double power) {
  if (max_iter < 1) throw std::invalid_argument("lr_schedule: max_iter must be >= 1, got " + std::to_string(max_iter));
  if (iter < 0 || iter > max_iter) {
    throw std::out_of_range("lr_schedule: iter " + std::to_string(iter) + " outside [0, " + std::to_string(max_iter) + "]");
  }
  return lr_base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

void OptimConfig::validate() const {
  if (!(lr_base >= 0.0) || !std::isfinite(lr_base)) throw std::invalid_argument("optimizer: lr_base must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("optimizer: momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("optimizer: weight_decay must be >= 0");
  if (!(power > 0.0)) throw std::invalid_argument("optimizer: power must be positive");
}

nlohmann::json to_json(const OptimConfig& cfg) {
  return {{"lr_base", cfg.lr_base}, {"momentum", cfg.momentum}, {"weight_decay", cfg.weight_decay}, {"power", cfg.power}};
}

OptimConfig optim_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("optimizer config must be a JSON object");
  OptimConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "lr_base") c.lr_base = v.get<double>();
    else if (key == "momentum") c.momentum = v.get<double>();
    else if (key == "weight_decay") c.weight_decay = v.get<double>();
    else if (key == "power") c.power = v.get<double>();
    else throw std::invalid_argument("optimizer config: unknown key \"" + key + "\"");
  }
  c.validate();
  return c;
}

void sgd_step(const std::vector<nn::ParamRef>& params, OptimState& state) {
  for (const auto& p : params) {
    const Tensor g = p.tensor->grad();
    if (!g.defined()) throw std::invalid_argument("sgd_step: parameter " + p.name + " has no gradient");
    if (g.shape() != p.tensor->shape() || g.dtype() != p.tensor->dtype()) {
      throw std::invalid_argument("sgd_step: gradient of " + p.name + " does not match the parameter");
    }
  }
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.push_back(Tensor::zeros(p.tensor->shape(), p.tensor->dtype()));
  }
  if (state.velocity.size() != params.size()) {
    throw std::invalid_argument("sgd_step: " + std::to_string(state.velocity.size()) + " velocity buffers for " +
                                std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.velocity[i].shape() != params[i].tensor->shape() || state.velocity[i].dtype() != params[i].tensor->dtype()) {
      throw std::invalid_argument("sgd_step: velocity of " + params[i].name + " has shape " +
                                  shape_str(state.velocity[i].shape()) + ", parameter has " +
                                  shape_str(params[i].tensor->shape()));
    }
  }

  const double lr = state.lr();
  const double m = state.cfg.momentum;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& param = *params[i].tensor;
    const double wd = params[i].decay ? state.cfg.weight_decay : 0.0;
    const Tensor g = param.grad();
    dispatch(param.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pv = param.template mutable_data<T>();
      auto vv = state.velocity[i].template mutable_data<T>();
      auto gv = g.template data<T>();
      for (std::size_t k = 0; k < pv.size(); ++k) {
        vv[k] = static_cast<T>(m) * vv[k] + gv[k] + static_cast<T>(wd) * pv[k];
        pv[k] -= static_cast<T>(lr) * vv[k];
      }
    });
  }
  ++state.iter;
}

}  // namespace lucf
