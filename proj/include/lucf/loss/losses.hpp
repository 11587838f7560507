#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lucf/model/lucf_net.hpp"
#include "lucf/tensor/labels.hpp"

namespace lucf {

/// Loss terms fall into two slots. The region slot holds Lovasz and/or
/// Dice, the pixel slot OHEM and/or CE (several terms in one slot are
/// summed). With both slots populated the loss is
///   w * region + (1 - w) * pixel,   w = hybrid_weight;
/// with one slot populated, that slot is the loss.
struct LossConfig {
  double hybrid_weight = 0.5;
  double ohem_threshold = 0.7;
  double ohem_min_kept_fraction = 1.0 / 16.0;
  bool use_lovasz = true;
  bool use_ohem = true;
  bool use_dice = false;
  bool use_ce = false;
  /// Average the Lovasz term over classes present in the labels instead of all classes.
  bool lovasz_present_only = false;

  void validate() const;
  /// Canonical "+"-joined term list, e.g. "lovasz+ohem".
  std::string terms() const;
};

/// Parses "lovasz+ohem", "ce+dice", "ce", ... (order-insensitive).
LossConfig loss_terms_from_string(const std::string& spec, LossConfig base = {});
nlohmann::json to_json(const LossConfig& cfg);
LossConfig loss_config_from_json(const nlohmann::json& j);

/// Named scalar contributions in evaluation order.
using Components = std::vector<std::pair<std::string, double>>;

/// Mean over pixels of -log(max(softmax(logits)[true class], 1e-12)).
Tensor cross_entropy(const Tensor& logits, const LabelMap& labels);

/// 1 - mean_c (2 sum p*y + eps) / (sum p + sum y + eps).
Tensor dice_loss(const Tensor& probs, const LabelMap& labels, double eps = 1e-5);

/// Lovasz extension of the Jaccard loss for one class. `errors` is a
/// rank-1 tensor of per-pixel errors, `foreground` the class indicator.
/// Errors are sorted descending (ties by ascending index); the permutation
/// is treated as constant.
Tensor lovasz_class_loss(const Tensor& errors, std::span<const std::uint8_t> foreground);

/// Discrete Jaccard loss |M| / |G u M| of the prediction G xor M, where M is
/// the set of wrong pixels (0 when both are empty).
double jaccard_loss_discrete(std::span<const std::uint8_t> wrong, std::span<const std::uint8_t> foreground);

/// Mean over classes of lovasz_class_loss with errors |[y == c] - p_c|.
Tensor lovasz_softmax(const Tensor& probs, const LabelMap& labels, bool present_only = false);

struct OhemResult {
  Tensor loss;
  double org = 0.0;
  double re = 0.0;
  std::int64_t kept = 0;
};

/// org = mean pixel CE; hard set = pixels whose true-class probability is
/// below `threshold`, grown to ceil(min_kept_fraction * M) lowest-confidence
/// pixels; re = mean CE over the hard set; loss = org + re.
OhemResult ohem_loss(const Tensor& logits, const LabelMap& labels, double threshold, double min_kept_fraction);

struct HybridResult {
  Tensor loss;
  Components components;
};

HybridResult hybrid_loss(const Tensor& logits, const LabelMap& labels, const LossConfig& cfg);

struct LossReport {
  double total = 0.0;
  std::vector<double> per_head;
  /// Summed over heads.
  Components components;
  /// Differentiable total for backward().
  Tensor graph;
};

/// Unweighted sum of hybrid_loss over every head, all at label resolution.
LossReport deep_supervision_loss(const ForwardOutputs& outputs, const LabelMap& labels, const LossConfig& cfg);

}  // namespace lucf
