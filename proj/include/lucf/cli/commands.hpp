#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lucf/checks/gradcheck_suite.hpp"
#include "lucf/train/trainer.hpp"

namespace lucf::cli {

/// Bad flag combinations or config values; maps to exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Every setting a command reads. One seed drives data generation, model
/// initialisation, batch order and augmentation.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model = desk_preset();
  DatasetSpec data;
  TrainConfig train;
  /// "hd95" or "hd100".
  std::string metrics = "hd95";
  std::int64_t eval_batch_size = 4;

  /// Copies the seed into the data and train sections.
  void propagate_seed();
  double hd_percentile() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Sections: seed, model, data, train, eval {metrics, batch_size}. Unknown keys are a UsageError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Fills model input channels, class count and extent from a sample.
void fit_model_to(ModelConfig& model, const SegSample& sample);

struct SynthOptions {
  std::filesystem::path out;
  std::string format = "png";
  bool force = false;
};

/// Generates cfg.data into out/ (images/, labels/, manifest.json, run_config.json).
Manifest cmd_synth(const RunConfig& cfg, const SynthOptions& opt);

struct TrainOptions {
  std::filesystem::path data;
  std::filesystem::path out;
  /// One run per hybrid weight, each under out/grid/hw_<w>/.
  std::vector<double> grid;
  std::filesystem::path resume;
  /// Stop (and checkpoint) at this iteration instead of max_iter.
  std::int64_t stop_at = -1;
  std::int64_t log_every = 50;
};

/// Writes checkpoint.ckpt, history.csv and run_config.json per run. A
/// resumed run keeps the history rows that precede the checkpoint.
/// Throws TrainingDiverged after writing the partial history.
void cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& log);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path out;
};

/// Writes metrics.csv and metrics.json.
MetricReport cmd_eval(const RunConfig& cfg, const EvalOptions& opt);

std::vector<SuiteEntry> cmd_gradcheck(std::uint64_t seed, const std::string& inject_fault = {});

/// Parameter and FLOP counts for one image of size h x w.
nlohmann::json cmd_summary(const ModelConfig& model, std::int64_t h, std::int64_t w, bool paper_reference, bool measure);
std::string format_summary(const nlohmann::json& summary);

struct DumpOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path image;
  std::filesystem::path out;
};

/// stage1.pgm .. stage4.pgm at 1/2 .. 1/16 of the input extent.
std::vector<std::filesystem::path> cmd_dump_features(const RunConfig& cfg, const DumpOptions& opt);

}  // namespace lucf::cli
