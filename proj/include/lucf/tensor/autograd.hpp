#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lucf/tensor/tensor.hpp"

namespace lucf {

/// Maps the gradient of a node's output to one gradient per recorded input.
/// An undefined Tensor in the result means "no contribution".
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_output)>;

/// One recorded operation. Nodes link to their inputs; together they form
/// the graph that backward() walks in reverse topological order.
struct Node {
  std::string op;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

bool grad_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Attaches history to `output` when grad mode is on and any input
/// requires grad. Returns `output` for chaining.
Tensor record(Tensor output, std::string op, std::vector<Tensor> inputs, BackwardFn backward);

/// Runs reverse-mode accumulation from a scalar root.
void run_backward(const Tensor& root);

/// Topologically ordered nodes reachable from `root` (inputs before users).
std::vector<std::shared_ptr<Node>> topological_nodes(const Tensor& root);

/// Negative-control hook: when set, the first input gradient produced by
/// every node whose op name equals `op` is scaled by (1 + 0.1). Empty
/// string clears the fault.
void inject_backward_fault(const std::string& op);
const std::string& injected_backward_fault();

class FaultInjectionGuard {
 public:
  explicit FaultInjectionGuard(const std::string& op);
  ~FaultInjectionGuard();
  FaultInjectionGuard(const FaultInjectionGuard&) = delete;
  FaultInjectionGuard& operator=(const FaultInjectionGuard&) = delete;

 private:
  std::string previous_;
};

}  // namespace lucf
