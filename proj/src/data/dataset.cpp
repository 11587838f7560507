#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "lucf/data/dataset.hpp"
#include "lucf/tensor/rng.hpp"

namespace lucf {

nlohmann::json to_json(const Manifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& e : m.entries) samples.push_back({{"id", e.id}, {"image", e.image}, {"label", e.label}});
  return {{"num_classes", m.num_classes}, {"size", {m.height, m.width}}, {"spec", m.spec}, {"samples", samples}};
}

Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.num_classes = j.at("num_classes").get<std::int64_t>();
    const auto hw = j.at("size").get<std::array<std::int64_t, 2>>();
    m.height = hw[0];
    m.width = hw[1];
    m.spec = j.value("spec", nlohmann::json::object());
    for (const auto& s : j.at("samples")) {
      m.entries.push_back({s.at("id").get<std::string>(), s.at("image").get<std::string>(), s.at("label").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

Manifest write_dataset(const std::filesystem::path& dir, const GeneratedDataset& data, const DatasetSpec& spec,
                       const std::string& format) {
  if (format != "png" && format != "pgm") throw std::invalid_argument("write_dataset: format must be png or pgm");
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "labels");
  Manifest m;
  m.num_classes = spec.num_classes;
  m.height = spec.height;
  m.width = spec.width;
  m.spec = to_json(spec);
  for (const auto& s : data.samples) {
    ManifestEntry e{s.id, "images/" + s.id + "." + format, "labels/" + s.id + "." + format};
    save_image(s.image, dir / e.image);
    save_mask(s.label, dir / e.label);
    m.entries.push_back(std::move(e));
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << to_json(m).dump(2) << "\n";
  return m;
}

std::vector<SegSample> load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("malformed manifest: " + std::string(e.what()));
  }
  const Manifest m = manifest_from_json(j);
  std::vector<SegSample> out;
  for (const auto& e : m.entries) {
    out.push_back(load_sample(dir / e.image, dir / e.label, m.num_classes, e.id));
    if (out.back().height() != m.height || out.back().width() != m.width) {
      throw std::invalid_argument("sample " + e.id + " does not have the manifest size");
    }
  }
  return out;
}

SplitIndices split(std::int64_t n, std::array<double, 3> f, std::uint64_t seed) {
  for (double v : f)
    if (!(v >= 0.0)) throw std::invalid_argument("split: fractions must be non-negative");
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");
  const auto n_train = static_cast<std::int64_t>(std::llround(f[0] * static_cast<double>(n)));
  const auto n_val = static_cast<std::int64_t>(std::llround(f[1] * static_cast<double>(n)));
  const std::int64_t n_test = n - n_train - n_val;
  if (n_train < 1 || n_val < 1 || n_test < 1) {
    throw std::invalid_argument("split: partition sizes " + std::to_string(n_train) + "/" + std::to_string(n_val) + "/" +
                                std::to_string(n_test) + " leave a part empty");
  }
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed, 0x5917);
  for (std::int64_t i = n - 1; i > 0; --i) std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  SplitIndices s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  return s;
}

}  // namespace lucf
