#include "lucf/nn/module.hpp"

#include <cmath>

namespace lucf::nn {

void Module::register_parameter(std::string name, Tensor& t, bool decay) {
  t.set_requires_grad(true);
  params_.push_back({std::move(name), &t, decay});
}

void Module::register_buffer(std::string name, Tensor& t) { buffers_.push_back({std::move(name), &t}); }

void Module::register_module(std::string name, Module& m) { children_.push_back({std::move(name), &m}); }

void Module::collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& bufs) {
  for (const auto& p : params_) params.push_back({prefix + p.name, p.tensor, p.decay});
  for (const auto& b : buffers_) bufs.push_back({prefix + b.name, b.tensor});
  for (const auto& c : children_) c.module->collect(prefix + c.name + ".", params, bufs);
}

std::vector<ParamRef> Module::parameters() {
  std::vector<ParamRef> params;
  std::vector<BufferRef> bufs;
  collect("", params, bufs);
  return params;
}

std::vector<BufferRef> Module::buffers() {
  std::vector<ParamRef> params;
  std::vector<BufferRef> bufs;
  collect("", params, bufs);
  return bufs;
}

std::int64_t Module::num_parameters() {
  std::int64_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->numel();
  return n;
}

void Module::train(bool on) {
  training_ = on;
  for (const auto& c : children_) c.module->train(on);
}

void Module::to(DType dtype) {
  for (const auto& p : parameters()) {
    *p.tensor = p.tensor->to(dtype);
    p.tensor->set_requires_grad(true);
  }
  for (const auto& b : buffers()) *b.tensor = b.tensor->to(dtype);
}

void Module::zero_grad() {
  for (const auto& p : parameters()) p.tensor->zero_grad();
}

void Module::zero_parameters() {
  for (const auto& p : parameters()) {
    dispatch(p.tensor->dtype(), [&](auto tag) {
      using T = decltype(tag);
      for (auto& v : p.tensor->template mutable_data<T>()) v = T(0);
    });
  }
}

void kaiming_normal(Tensor& weight, std::int64_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  const bool rg = weight.requires_grad();
  weight = randn(weight.shape(), rng, stddev, weight.dtype());
  weight.set_requires_grad(rg);
}

}  // namespace lucf::nn
