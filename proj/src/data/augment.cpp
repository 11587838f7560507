#include <stdexcept>

#include "lucf/data/dataset.hpp"
#include "lucf/tensor/rng.hpp"

namespace lucf {

namespace {

/// Applies out[c][y'][x'] = in[c][src(y', x')] to every plane.
template <class T, class Src>
std::vector<T> remap(std::span<const T> in, std::int64_t planes, std::int64_t h, std::int64_t w, std::int64_t oh,
                     std::int64_t ow, Src src) {
  std::vector<T> out(in.size());
  for (std::int64_t c = 0; c < planes; ++c)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x) {
        const auto [sy, sx] = src(y, x);
        out[static_cast<std::size_t>((c * oh + y) * ow + x)] = in[static_cast<std::size_t>((c * h + sy) * w + sx)];
      }
  return out;
}

template <class Src>
SegSample transform(const SegSample& s, std::int64_t oh, std::int64_t ow, Src src) {
  const std::int64_t h = s.height(), w = s.width();
  SegSample out;
  out.id = s.id;
  out.num_classes = s.num_classes;
  const std::int64_t C = s.image.dim(0);
  out.image = dispatch(s.image.dtype(), [&](auto tag) {
    using T = decltype(tag);
    return Tensor::from_buffer({C, oh, ow}, remap<T>(s.image.data<T>(), C, h, w, oh, ow, src));
  });
  out.label = LabelMap(1, oh, ow,
                       remap<std::int32_t>(std::span<const std::int32_t>(s.label.values), 1, h, w, oh, ow, src));
  return out;
}

}  // namespace

SegSample flip(const SegSample& s, bool vertical) {
  const std::int64_t h = s.height(), w = s.width();
  if (vertical) return transform(s, h, w, [&](std::int64_t y, std::int64_t x) { return std::pair{h - 1 - y, x}; });
  return transform(s, h, w, [&](std::int64_t y, std::int64_t x) { return std::pair{y, w - 1 - x}; });
}

SegSample rotate90(const SegSample& s, int k) {
  k = ((k % 4) + 4) % 4;
  const std::int64_t h = s.height(), w = s.width();
  switch (k) {
    case 1: return transform(s, w, h, [&](std::int64_t y, std::int64_t x) { return std::pair{x, w - 1 - y}; });
    case 2: return transform(s, h, w, [&](std::int64_t y, std::int64_t x) { return std::pair{h - 1 - y, w - 1 - x}; });
    case 3: return transform(s, w, h, [&](std::int64_t y, std::int64_t x) { return std::pair{h - 1 - x, y}; });
    default: return transform(s, h, w, [](std::int64_t y, std::int64_t x) { return std::pair{y, x}; });
  }
}

SegSample augment(const SegSample& s, std::uint64_t seed) {
  Rng rng(seed, 0xA0C);
  const bool fh = rng.bernoulli(0.5);
  const bool fv = rng.bernoulli(0.5);
  const int k = s.height() == s.width() ? static_cast<int>(rng.uniform_int(0, 3)) : 2 * static_cast<int>(rng.uniform_int(0, 1));
  SegSample out = fh ? flip(s, false) : s;
  if (fv) out = flip(out, true);
  return k == 0 ? out : rotate90(out, k);
}

}  // namespace lucf
