#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lucf/tensor/rng.hpp"
#include "lucf/tensor/tensor.hpp"

namespace lucf::nn {

struct ParamRef {
  std::string name;
  Tensor* tensor;
  /// Whether weight decay applies (conv/linear weights only).
  bool decay;
};

struct BufferRef {
  std::string name;
  Tensor* tensor;
};

/// Parameter registry shared by every layer. Parameters and buffers are
/// data members of the concrete module, registered by address, so modules
/// are neither copyable nor movable. Enumeration order is registration order
/// and is what the optimizer and checkpoints rely on.
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  std::vector<ParamRef> parameters();
  std::vector<BufferRef> buffers();
  std::int64_t num_parameters();

  void train(bool on = true);
  void eval() { train(false); }
  bool training() const { return training_; }

  /// Converts every parameter and buffer in place.
  void to(DType dtype);
  void zero_grad();
  /// Sets every parameter (not buffer) to zero.
  void zero_parameters();

 protected:
  void register_parameter(std::string name, Tensor& t, bool decay);
  void register_buffer(std::string name, Tensor& t);
  void register_module(std::string name, Module& m);

 private:
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& bufs);

  struct Child {
    std::string name;
    Module* module;
  };
  std::vector<ParamRef> params_;
  std::vector<BufferRef> buffers_;
  std::vector<Child> children_;
  bool training_ = true;
};

/// Kaiming-normal fan-in initialisation: N(0, 2 / fan_in).
void kaiming_normal(Tensor& weight, std::int64_t fan_in, Rng& rng);

}  // namespace lucf::nn
