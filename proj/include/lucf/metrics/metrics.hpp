#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lucf/tensor/labels.hpp"

namespace lucf {

/// Binary grid, row-major.
struct Mask {
  std::int64_t height = 0, width = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(std::int64_t h, std::int64_t w) : height(h), width(w), values(static_cast<std::size_t>(h * w), 0) {}
  std::uint8_t at(std::int64_t y, std::int64_t x) const { return values[static_cast<std::size_t>(y * width + x)]; }
  std::uint8_t& at(std::int64_t y, std::int64_t x) { return values[static_cast<std::size_t>(y * width + x)]; }
  std::int64_t count() const;
};

/// Binary mask of class `c` in case `b` of a label map.
Mask class_mask(const LabelMap& labels, std::int64_t b, std::int32_t c);

struct Spacing {
  double y = 1.0;
  double x = 1.0;
};

/// 2|P n G| / (|P| + |G|); 1 when both are empty.
double dsc(const Mask& pred, const Mask& gt);
/// |P n G| / |P u G|; 1 when both are empty.
double iou(const Mask& pred, const Mask& gt);

/// Foreground pixels with at least one 8-neighbour that is background or
/// outside the grid, as (y, x).
std::vector<std::pair<std::int64_t, std::int64_t>> boundary_pixels(const Mask& m);

/// Exact Euclidean distance from every pixel to the nearest `true` site of
/// `sites`, scaled by `spacing` (separable lower-envelope transform).
/// Pixels are +inf when there are no sites.
std::vector<double> distance_transform(const Mask& sites, Spacing spacing = {});

/// Symmetric Hausdorff statistic over boundary pixels. The directed
/// distances from each boundary to the other are reduced by the given
/// percentile (linear interpolation between order statistics) and the
/// larger direction is returned; percentile 100 is the classic Hausdorff
/// distance. One empty mask gives the image diagonal, both empty give 0.
double hausdorff(const Mask& pred, const Mask& gt, double percentile = 100.0, Spacing spacing = {});

/// Linear-interpolation percentile of unsorted values, q in (0, 100].
double percentile_of(std::vector<double> values, double q);

struct CaseClassRow {
  std::int64_t case_index = 0;
  std::int32_t class_index = 0;
  double dsc = 0.0, iou = 0.0, hd = 0.0;
  /// Class absent from both prediction and ground truth.
  bool both_empty = false;
};

struct MetricReport {
  std::int64_t num_classes = 0;
  std::int64_t num_cases = 0;
  double hd_percentile = 100.0;
  /// Indexed by class (background included); each is the mean over cases.
  std::vector<double> per_class_dsc, per_class_hd, per_class_iou;
  /// Means over classes 1..num_classes-1.
  double mean_dsc = 0.0, mean_hd = 0.0, mean_iou = 0.0;
  std::vector<CaseClassRow> rows;

  /// "hd100" or "hd95" etc.
  std::string hd_label() const;
  nlohmann::json summary_json() const;
  std::string csv() const;
  void write(const std::filesystem::path& csv_path, const std::filesystem::path& json_path) const;
};

MetricReport evaluate(const LabelMap& pred, const LabelMap& gt, std::int64_t num_classes, double hd_percentile = 100.0,
                      Spacing spacing = {});

}  // namespace lucf
