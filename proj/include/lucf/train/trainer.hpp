#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lucf/data/dataset.hpp"
#include "lucf/loss/losses.hpp"
#include "lucf/metrics/metrics.hpp"
#include "lucf/train/checkpoint.hpp"
#include "lucf/train/optim.hpp"

namespace lucf {

struct TrainConfig {
  std::int64_t batch_size = 4;
  std::int64_t max_iter = 500;
  std::uint64_t seed = 0;
  bool augment = true;
  OptimConfig optim;
  LossConfig loss;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Iterations needed to see every sample `epochs` times.
std::int64_t iterations_for_epochs(std::int64_t num_samples, std::int64_t batch_size, std::int64_t epochs);

/// Dataset indices of batch `iter`. Sample order is a fresh permutation per
/// epoch, so batches are a pure function of (seed, iter).
std::vector<std::int64_t> batch_indices(std::int64_t num_samples, std::int64_t batch_size, std::uint64_t seed, std::int64_t iter);

/// Augmentation seed for the sample at global stream position `position`.
std::uint64_t augment_seed(std::uint64_t seed, std::int64_t position);

/// Stacks samples into an NCHW image batch and a label map.
std::pair<Tensor, LabelMap> make_batch(const std::vector<SegSample>& samples);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HistoryRow {
  std::int64_t iter = 0;
  double lr = 0.0;
  double total = 0.0;
  std::vector<double> per_head;
  Components components;
};

/// Columns: iter, lr, total, head1..headK, then the loss components.
std::string history_csv(const std::vector<HistoryRow>& rows);
void write_history(const std::filesystem::path& path, const std::vector<HistoryRow>& rows);

class Trainer {
 public:
  Trainer(LucfNet& net, std::vector<SegSample> data, TrainConfig cfg);

  /// augment -> forward -> deep supervision loss -> backward -> SGD.
  HistoryRow step();
  /// Steps until iter() == until (max_iter when negative).
  std::vector<HistoryRow> run(std::int64_t until = -1, const std::function<void(const HistoryRow&)>& on_step = {});

  std::int64_t iter() const { return optim_.iter; }
  const TrainConfig& config() const { return cfg_; }
  OptimState& optim() { return optim_; }
  const std::vector<HistoryRow>& history() const { return history_; }
  /// Position of the data-order generator at the current iteration.
  Rng data_rng() const;

  void save(const std::filesystem::path& path);
  /// Loads parameters, buffers and optimizer state; training continues
  /// from the stored iteration.
  void resume(const std::filesystem::path& path);

 private:
  LucfNet& net_;
  std::vector<SegSample> data_;
  TrainConfig cfg_;
  OptimState optim_;
  std::vector<HistoryRow> history_;
};

/// Argmax of the fused logits per pixel, then metrics::evaluate. Runs in
/// eval mode without augmentation and restores the previous mode.
MetricReport evaluate_run(LucfNet& net, const std::vector<SegSample>& data, std::int64_t batch_size = 4,
                          double hd_percentile = 95.0);

}  // namespace lucf
