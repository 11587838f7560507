#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "json.hpp"
#include "lucf/model/lucf_net.hpp"
#include "lucf/train/optim.hpp"

namespace lucf {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable, truncated or malformed container.
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// A stored tensor is missing, unexpected, or has the wrong shape or dtype.
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// The stored config hash does not match the stored config or the target model.
class CheckpointHashError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct CheckpointMeta {
  ModelConfig config;
  std::uint64_t config_hash = 0;
  std::int64_t iter = 0;
  std::int64_t max_iter = 0;
  OptimConfig optim;
  bool has_optimizer = false;
  /// Position of the data-order generator (seed, stream, counter).
  Rng rng;
  /// Free-form training settings, stored verbatim.
  nlohmann::json train = nlohmann::json::object();
};

/// Container layout:
///   "LUCFCKPT" | u64 header length | JSON header | raw little-endian buffers
/// The header holds the config, its hash, progress counters, optimizer
/// settings, the RNG position and a directory of {name, dtype, shape,
/// offset, bytes} for parameters, buffers and velocities. The file is
/// written to a temporary sibling and renamed into place.
void save_checkpoint(const std::filesystem::path& path, LucfNet& net, const OptimState* optim, const Rng& rng,
                     const nlohmann::json& train = nlohmann::json::object());

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// Validates the whole file before touching `net` or `optim`.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, LucfNet& net, OptimState* optim = nullptr);

}  // namespace lucf
