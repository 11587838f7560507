#include "lucf/tensor/autograd.hpp"

#include <mutex>
#include <unordered_map>
#include <unordered_set>

#include "lucf/tensor/ops.hpp"

namespace lucf {

namespace {

thread_local bool t_grad_enabled = true;

std::mutex g_fault_mutex;
std::string g_fault_op;

std::string current_fault() {
  std::lock_guard lock(g_fault_mutex);
  return g_fault_op;
}

Tensor accumulate(const Tensor& existing, const Tensor& incoming) {
  if (!existing.defined()) return incoming;
  return add(existing, incoming);
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void inject_backward_fault(const std::string& op) {
  std::lock_guard lock(g_fault_mutex);
  g_fault_op = op;
}

const std::string& injected_backward_fault() {
  static thread_local std::string copy;
  copy = current_fault();
  return copy;
}

FaultInjectionGuard::FaultInjectionGuard(const std::string& op) : previous_(current_fault()) {
  inject_backward_fault(op);
}
FaultInjectionGuard::~FaultInjectionGuard() { inject_backward_fault(previous_); }

Tensor record(Tensor output, std::string op, std::vector<Tensor> inputs, BackwardFn backward) {
  if (!t_grad_enabled) return output;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return output;
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  output.impl()->requires_grad = true;
  output.impl()->grad_fn = std::move(node);
  return output;
}

std::vector<std::shared_ptr<Node>> topological_nodes(const Tensor& root) {
  std::vector<std::shared_ptr<Node>> order;
  if (!root.grad_fn()) return order;
  std::unordered_set<const Node*> visited;
  // Iterative post-order DFS: (node, next input index).
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(root.grad_fn(), 0);
  visited.insert(root.grad_fn().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const auto& in = node->inputs[next++];
      const auto& fn = in.impl()->grad_fn;
      if (fn && visited.insert(fn.get()).second) stack.emplace_back(fn, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  return order;
}

void run_backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw std::invalid_argument("backward requires a scalar output, got shape " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) throw std::logic_error("backward on a tensor that does not require grad");

  NoGradGuard no_grad;
  const std::string fault = current_fault();

  auto seed = Tensor::ones(root.shape(), root.dtype());
  if (!root.grad_fn()) {
    root.impl()->grad = accumulate(Tensor(root.impl()->grad), seed).impl_ptr();
    return;
  }

  // Outputs are identified through their node; map node -> output grad.
  std::unordered_map<const Node*, Tensor> node_grads;
  node_grads[root.grad_fn().get()] = seed;

  auto order = topological_nodes(root);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& node = *it;
    auto found = node_grads.find(node.get());
    if (found == node_grads.end()) continue;
    Tensor grad_out = found->second;
    node_grads.erase(found);

    auto grads = node->backward(grad_out);
    if (grads.size() != node->inputs.size()) {
      throw std::logic_error("backward of '" + node->op + "' returned the wrong number of gradients");
    }
    if (!fault.empty() && fault == node->op) {
      for (auto& g : grads) {
        if (g.defined()) {
          g = mul_scalar(g, 1.1);
          break;
        }
      }
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const auto& in = node->inputs[i];
      const auto& g = grads[i];
      if (!g.defined() || !in.requires_grad()) continue;
      if (g.shape() != in.shape()) {
        throw std::logic_error("backward of '" + node->op + "' produced gradient " + shape_str(g.shape()) +
                               " for input " + shape_str(in.shape()));
      }
      if (const auto& fn = in.impl()->grad_fn) {
        auto& slot = node_grads[fn.get()];
        slot = accumulate(slot, g);
      } else {
        in.impl()->grad = accumulate(Tensor(in.impl()->grad), g).impl_ptr();
      }
    }
  }
}

}  // namespace lucf
