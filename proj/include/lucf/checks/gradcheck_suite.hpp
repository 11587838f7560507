#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "lucf/tensor/grad_check.hpp"

namespace lucf {

struct SuiteOptions {
  std::uint64_t seed = 1;
  double eps = 1e-5;
  double tol = 1e-4;
  /// The Lovasz sort is piecewise; checks use inputs with distinct errors.
  double lovasz_tol = 1e-3;
};

struct SuiteEntry {
  /// "op", "block" or "loss".
  std::string kind;
  double tol = 0.0;
  CheckReport report;
};

/// Finite-difference checks in f64 over every differentiable primitive,
/// every network block and every loss, on small random inputs.
std::vector<SuiteEntry> run_gradcheck_suite(const SuiteOptions& options = {});

bool all_passed(const std::vector<SuiteEntry>& entries);
nlohmann::json to_json(const std::vector<SuiteEntry>& entries);
/// One line per check: status, kind, name, max relative error, tolerance.
std::string format_table(const std::vector<SuiteEntry>& entries);

}  // namespace lucf
