#include "lucf/tensor/labels.hpp"

#include <stdexcept>

namespace lucf {

LabelMap::LabelMap(std::int64_t b, std::int64_t h, std::int64_t w)
    : batch(b), height(h), width(w), values(static_cast<std::size_t>(b * h * w), 0) {}

LabelMap::LabelMap(std::int64_t b, std::int64_t h, std::int64_t w, std::vector<std::int32_t> v)
    : batch(b), height(h), width(w), values(std::move(v)) {
  if (static_cast<std::int64_t>(values.size()) != b * h * w) {
    throw std::invalid_argument("LabelMap: " + std::to_string(values.size()) + " values for shape " +
                                shape_str({b, h, w}));
  }
}

void LabelMap::check_range(std::int64_t num_classes, const std::string& who) const {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < 0 || values[i] >= num_classes) {
      throw std::invalid_argument(who + ": label " + std::to_string(values[i]) + " at pixel " + std::to_string(i) +
                                  " is outside 0.." + std::to_string(num_classes - 1));
    }
  }
}

void LabelMap::check_matches(const Tensor& t, const std::string& who) const {
  if (t.rank() != 4 || t.dim(0) != batch || t.dim(2) != height || t.dim(3) != width) {
    throw std::invalid_argument(who + ": prediction " + shape_str(t.shape()) + " does not match labels " +
                                shape_str(shape()));
  }
  check_range(t.dim(1), who);
}

LabelMap argmax_channels(const Tensor& t) {
  if (t.rank() != 4) throw std::invalid_argument("argmax_channels: expected NCHW, got " + shape_str(t.shape()));
  const std::int64_t B = t.dim(0), C = t.dim(1), plane = t.dim(2) * t.dim(3);
  LabelMap out(B, t.dim(2), t.dim(3));
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t p = 0; p < plane; ++p) {
        std::int32_t best = 0;
        T bv = d[static_cast<std::size_t>(b * C * plane + p)];
        for (std::int64_t c = 1; c < C; ++c) {
          const T v = d[static_cast<std::size_t>((b * C + c) * plane + p)];
          if (v > bv) {
            bv = v;
            best = static_cast<std::int32_t>(c);
          }
        }
        out.values[static_cast<std::size_t>(b * plane + p)] = best;
      }
  });
  return out;
}

}  // namespace lucf
