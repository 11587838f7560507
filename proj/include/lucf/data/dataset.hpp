#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lucf/tensor/labels.hpp"
#include "lucf/tensor/tensor.hpp"

namespace lucf {

enum class ShapeFamily { ellipses, polygons, nested };

std::string to_string(ShapeFamily f);
ShapeFamily shape_family_from_string(const std::string& s);

struct DatasetSpec {
  std::int64_t num_samples = 100;
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t num_classes = 4;
  std::int64_t channels = 1;
  ShapeFamily family = ShapeFamily::nested;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const DatasetSpec& s);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

struct SegSample {
  /// [C, H, W], values in [0, 1].
  Tensor image;
  /// [1, H, W].
  LabelMap label;
  std::int64_t num_classes = 0;
  std::string id;

  std::int64_t height() const { return label.height; }
  std::int64_t width() const { return label.width; }
  /// Image and label extents agree and labels are in range.
  void validate() const;
};

struct GeneratedDataset {
  std::vector<SegSample> samples;
  /// Pixel count per class over all samples, maintained while painting.
  std::vector<std::int64_t> class_histogram;
};

/// Intensity of class `c` in an image of `num_classes` classes before noise.
double class_intensity(std::int64_t c, std::int64_t num_classes);

/// Sample i is a pure function of (spec, i).
GeneratedDataset gen_synthetic(const DatasetSpec& spec);

std::vector<std::int64_t> class_histogram(const std::vector<SegSample>& samples, std::int64_t num_classes);

/// Geometric primitives applied identically to image and label.
SegSample flip(const SegSample& s, bool vertical);
/// Rotation by k * 90 degrees counter-clockwise.
SegSample rotate90(const SegSample& s, int k);

/// Horizontal and vertical flips with p = 0.5 each, then a rotation by a
/// uniformly drawn multiple of 90 degrees (0 or 180 for non-square samples).
SegSample augment(const SegSample& s, std::uint64_t seed);

/// 8-bit grayscale raster.
struct Gray8 {
  std::int64_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;
};

/// PGM (P5, maxval <= 255) or PNG (8-bit grayscale), chosen by file content.
Gray8 read_gray8(const std::filesystem::path& path);
/// Format chosen by extension: .pgm or .png.
void write_gray8(const std::filesystem::path& path, const Gray8& img);

/// Image pixels map to v / 255; label pixels are class indices.
SegSample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
                      std::int64_t num_classes, std::string id = {});
void save_mask(const LabelMap& mask, const std::filesystem::path& path);
LabelMap load_mask(const std::filesystem::path& path);
/// First channel, quantised as round(255 v).
void save_image(const Tensor& image, const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::string image;
  std::string label;
};

struct Manifest {
  std::int64_t num_classes = 0;
  std::int64_t height = 0, width = 0;
  nlohmann::json spec;
  std::vector<ManifestEntry> entries;
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);

/// Writes images/ and labels/ (PGM or PNG per `format`) and manifest.json.
Manifest write_dataset(const std::filesystem::path& dir, const GeneratedDataset& data, const DatasetSpec& spec,
                       const std::string& format = "png");
std::vector<SegSample> load_dataset(const std::filesystem::path& dir);

struct SplitIndices {
  std::vector<std::int64_t> train, val, test;
};

/// Shuffled partition of 0..n-1 with sizes round(f0 n), round(f1 n) and the
/// remainder. Errors if any part is empty or the fractions do not sum to 1.
SplitIndices split(std::int64_t n, std::array<double, 3> fractions, std::uint64_t seed);

}  // namespace lucf
