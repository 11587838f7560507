#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "lucf/data/dataset.hpp"
#include "lucf/tensor/rng.hpp"

namespace lucf {

std::string to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::ellipses: return "ellipses";
    case ShapeFamily::polygons: return "polygons";
    case ShapeFamily::nested: return "nested";
  }
  return "?";
}

ShapeFamily shape_family_from_string(const std::string& s) {
  if (s == "ellipses") return ShapeFamily::ellipses;
  if (s == "polygons") return ShapeFamily::polygons;
  if (s == "nested") return ShapeFamily::nested;
  throw std::invalid_argument("unknown shape family \"" + s + "\" (expected ellipses, polygons, nested)");
}

void DatasetSpec::validate() const {
  if (num_samples < 1) throw std::invalid_argument("DatasetSpec: num_samples must be >= 1");
  if (height < 16 || width < 16 || height % 16 != 0 || width % 16 != 0) {
    throw std::invalid_argument("DatasetSpec: size " + std::to_string(height) + "x" + std::to_string(width) +
                                " is not divisible by 16");
  }
  if (num_classes < 2 || num_classes > 256) throw std::invalid_argument("DatasetSpec: num_classes must be in 2..256");
  if (channels < 1) throw std::invalid_argument("DatasetSpec: channels must be >= 1");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("DatasetSpec: noise_sigma must be >= 0");
}

nlohmann::json to_json(const DatasetSpec& s) {
  return {{"num_samples", s.num_samples}, {"size", {s.height, s.width}},  {"num_classes", s.num_classes},
          {"channels", s.channels},       {"family", to_string(s.family)}, {"noise_sigma", s.noise_sigma},
          {"seed", s.seed}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("dataset spec must be a JSON object");
  DatasetSpec s;
  for (const auto& [key, v] : j.items()) {
    if (key == "num_samples") s.num_samples = v.get<std::int64_t>();
    else if (key == "size") {
      const auto hw = v.get<std::array<std::int64_t, 2>>();
      s.height = hw[0];
      s.width = hw[1];
    } else if (key == "num_classes") s.num_classes = v.get<std::int64_t>();
    else if (key == "channels") s.channels = v.get<std::int64_t>();
    else if (key == "family") s.family = shape_family_from_string(v.get<std::string>());
    else if (key == "noise_sigma") s.noise_sigma = v.get<double>();
    else if (key == "seed") s.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("dataset spec: unknown key \"" + key + "\"");
  }
  return s;
}

double class_intensity(std::int64_t c, std::int64_t num_classes) {
  return 0.1 + 0.8 * static_cast<double>(c) / static_cast<double>(num_classes - 1);
}

namespace {

class Canvas {
 public:
  Canvas(std::int64_t h, std::int64_t w, std::vector<std::int64_t>& hist)
      : h_(h), w_(w), labels_(static_cast<std::size_t>(h * w), 0), hist_(hist) {
    hist_[0] += h * w;
  }

  template <class Inside>
  void paint(std::int32_t c, Inside inside) {
    for (std::int64_t y = 0; y < h_; ++y)
      for (std::int64_t x = 0; x < w_; ++x) {
        if (!inside(static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5)) continue;
        auto& l = labels_[static_cast<std::size_t>(y * w_ + x)];
        --hist_[static_cast<std::size_t>(l)];
        ++hist_[static_cast<std::size_t>(c)];
        l = c;
      }
  }

  std::vector<std::int32_t>& labels() { return labels_; }

 private:
  std::int64_t h_, w_;
  std::vector<std::int32_t> labels_;
  std::vector<std::int64_t>& hist_;
};

struct Ellipse {
  double cy, cx, ry, rx, theta;
  bool operator()(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
    return u * u + v * v <= 1.0;
  }
};

struct Polygon {
  std::vector<double> ys, xs;
  bool operator()(double y, double x) const {
    bool in = false;
    const std::size_t n = ys.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      if ((ys[i] > y) != (ys[j] > y) && x < (xs[j] - xs[i]) * (y - ys[i]) / (ys[j] - ys[i]) + xs[i]) in = !in;
    }
    return in;
  }
};

Ellipse random_ellipse(Rng& rng, double cy, double cx, double rmin, double rmax) {
  return {cy, cx, rng.uniform(rmin, rmax), rng.uniform(rmin, rmax), rng.uniform(0.0, std::numbers::pi)};
}

Polygon random_polygon(Rng& rng, double cy, double cx, double rmin, double rmax) {
  const auto n = rng.uniform_int(3, 7);
  std::vector<double> angles(static_cast<std::size_t>(n));
  for (auto& a : angles) a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::sort(angles.begin(), angles.end());
  Polygon p;
  for (double a : angles) {
    const double r = rng.uniform(rmin, rmax);
    p.ys.push_back(cy + r * std::sin(a));
    p.xs.push_back(cx + r * std::cos(a));
  }
  return p;
}

SegSample make_sample(const DatasetSpec& spec, std::int64_t index, std::vector<std::int64_t>& hist) {
  Rng rng(spec.seed, static_cast<std::uint64_t>(index) + 1);
  const double H = static_cast<double>(spec.height), W = static_cast<double>(spec.width), m = std::min(H, W);
  Canvas canvas(spec.height, spec.width, hist);
  auto centre = [&](double margin) { return std::pair{rng.uniform(margin, 1.0 - margin) * H, rng.uniform(margin, 1.0 - margin) * W}; };

  for (std::int32_t c = 1; c < static_cast<std::int32_t>(spec.num_classes); ++c) {
    switch (spec.family) {
      case ShapeFamily::ellipses: {
        const auto [cy, cx] = centre(0.2);
        canvas.paint(c, random_ellipse(rng, cy, cx, 0.08 * m, 0.25 * m));
        break;
      }
      case ShapeFamily::polygons: {
        const auto [cy, cx] = centre(0.2);
        canvas.paint(c, random_polygon(rng, cy, cx, 0.1 * m, 0.25 * m));
        break;
      }
      case ShapeFamily::nested: {
        // Large organ, a structure inside it, then small ones anywhere.
        if (c == 1) {
          const auto [cy, cx] = centre(0.4);
          canvas.paint(c, random_ellipse(rng, cy, cx, 0.25 * m, 0.4 * m));
        } else if (c == 2) {
          const auto [cy, cx] = centre(0.4);
          canvas.paint(c, random_ellipse(rng, cy, cx, 0.08 * m, 0.14 * m));
        } else if (c % 2 == 1) {
          const auto [cy, cx] = centre(0.15);
          canvas.paint(c, random_polygon(rng, cy, cx, 0.05 * m, 0.12 * m));
        } else {
          const auto [cy, cx] = centre(0.15);
          canvas.paint(c, random_ellipse(rng, cy, cx, 0.05 * m, 0.1 * m));
        }
        break;
      }
    }
  }

  SegSample s;
  s.num_classes = spec.num_classes;
  char id[32];
  std::snprintf(id, sizeof id, "case_%04lld", static_cast<long long>(index));
  s.id = id;
  s.label = LabelMap(1, spec.height, spec.width, std::move(canvas.labels()));
  const std::int64_t plane = spec.height * spec.width;
  std::vector<float> img(static_cast<std::size_t>(spec.channels * plane));
  for (std::int64_t ch = 0; ch < spec.channels; ++ch)
    for (std::int64_t p = 0; p < plane; ++p) {
      double v = class_intensity(s.label.values[static_cast<std::size_t>(p)], spec.num_classes);
      if (spec.noise_sigma > 0.0) v = std::clamp(v + spec.noise_sigma * rng.normal(), 0.0, 1.0);
      img[static_cast<std::size_t>(ch * plane + p)] = static_cast<float>(v);
    }
  s.image = Tensor::from_buffer({spec.channels, spec.height, spec.width}, std::move(img));
  return s;
}

}  // namespace

GeneratedDataset gen_synthetic(const DatasetSpec& spec) {
  spec.validate();
  GeneratedDataset d;
  d.class_histogram.assign(static_cast<std::size_t>(spec.num_classes), 0);
  for (std::int64_t i = 0; i < spec.num_samples; ++i) d.samples.push_back(make_sample(spec, i, d.class_histogram));
  return d;
}

std::vector<std::int64_t> class_histogram(const std::vector<SegSample>& samples, std::int64_t num_classes) {
  std::vector<std::int64_t> h(static_cast<std::size_t>(num_classes), 0);
  for (const auto& s : samples)
    for (auto v : s.label.values) {
      if (v < 0 || v >= num_classes) throw std::invalid_argument("class_histogram: label out of range");
      ++h[static_cast<std::size_t>(v)];
    }
  return h;
}

void SegSample::validate() const {
  if (image.rank() != 3 || label.batch != 1 || image.dim(1) != label.height || image.dim(2) != label.width) {
    throw std::invalid_argument("sample " + id + ": image " + shape_str(image.shape()) + " does not match label " +
                                shape_str(label.shape()));
  }
  label.check_range(num_classes, "sample " + id);
}

}  // namespace lucf
