#include <algorithm>
#include <cmath>

#include "kernels.hpp"

namespace lucf {

namespace {

struct ConvGeometry {
  std::int64_t batch, cin, h, w, cout, kh, kw, ho, wo, cin_g, cout_g;
  int stride, padding, groups;

  std::int64_t col_rows() const { return cin_g * kh * kw; }
  std::int64_t col_cols() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

template <class T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.ho * g.wo;
        const T* plane = in + c * g.h * g.w;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ki;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.wo, T(0));
            continue;
          }
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + kj;
            dst[ox] = (ix >= 0 && ix < g.w) ? plane[iy * g.w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* in) {
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.ho * g.wo;
        T* plane = in + c * g.h * g.w;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + kj;
            if (ix >= 0 && ix < g.w) plane[iy * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, const Conv2dOptions& opt) {
  detail::require_rank(input, 4, "conv2d", "input");
  detail::require_rank(weight, 4, "conv2d", "weight");
  detail::require_same_dtype(input, weight, "conv2d");
  if (opt.groups < 1 || opt.stride < 1 || opt.padding < 0) throw std::invalid_argument("conv2d: invalid options");
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = opt.stride;
  g.padding = opt.padding;
  g.groups = opt.groups;
  if (g.cin % opt.groups != 0) {
    throw std::invalid_argument("conv2d: groups=" + std::to_string(opt.groups) + " does not divide Cin=" + std::to_string(g.cin));
  }
  if (g.cout % opt.groups != 0) {
    throw std::invalid_argument("conv2d: groups=" + std::to_string(opt.groups) + " does not divide Cout=" + std::to_string(g.cout));
  }
  g.cin_g = g.cin / opt.groups;
  g.cout_g = g.cout / opt.groups;
  if (weight.dim(1) != g.cin_g) {
    throw std::invalid_argument("conv2d: weight " + shape_str(weight.shape()) + " expects " +
                                std::to_string(weight.dim(1) * opt.groups) + " input channels, input is " +
                                shape_str(input.shape()));
  }
  const std::int64_t hp = g.h + 2 * g.padding - g.kh;
  const std::int64_t wp = g.w + 2 * g.padding - g.kw;
  if (hp < 0 || wp < 0) {
    throw std::invalid_argument("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " + shape_str(input.shape()));
  }
  g.ho = hp / g.stride + 1;
  g.wo = wp / g.stride + 1;
  return g;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
  const ConvGeometry g = conv_geometry(input, weight, opt);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw std::invalid_argument("conv2d: bias must have shape [" + std::to_string(g.cout) + "]");
  }
  FlopCounterScope::add(2 * g.batch * g.cout * g.ho * g.wo * g.cin_g * g.kh * g.kw);

  Tensor out = dispatch(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = input.data<T>();
    auto wd = weight.data<T>();
    std::vector<T> v(static_cast<std::size_t>(g.batch * g.cout * g.ho * g.wo));
    std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
    for (std::int64_t b = 0; b < g.batch; ++b) {
      for (int grp = 0; grp < g.groups; ++grp) {
        const T* src = in.data() + (b * g.cin + grp * g.cin_g) * g.h * g.w;
        const T* cm = src;
        if (!g.pointwise()) {
          im2col(src, g, col.data());
          cm = col.data();
        }
        detail::gemm<T>(false, false, g.cout_g, g.col_cols(), g.col_rows(), wd.data() + grp * g.cout_g * g.col_rows(), cm,
                        v.data() + (b * g.cout + grp * g.cout_g) * g.ho * g.wo, false);
      }
      if (bias.defined()) {
        auto bd = bias.data<T>();
        for (std::int64_t c = 0; c < g.cout; ++c) {
          T* plane = v.data() + (b * g.cout + c) * g.ho * g.wo;
          for (std::int64_t i = 0; i < g.ho * g.wo; ++i) plane[i] += bd[static_cast<std::size_t>(c)];
        }
      }
    }
    return Tensor::from_buffer({g.batch, g.cout, g.ho, g.wo}, std::move(v));
  });
  out = detail::checked(out, "conv2d");

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record(out, "conv2d", inputs, [input, weight, has_bias = bias.defined(), g](const Tensor& grad) -> std::vector<Tensor> {
    std::vector<Tensor> grads(has_bias ? 3 : 2);
    dispatch(grad.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gd = grad.data<T>();
      auto in = input.data<T>();
      auto wd = weight.data<T>();
      const bool need_x = input.requires_grad();
      const bool need_w = weight.requires_grad();
      std::vector<T> gx(need_x ? in.size() : 0, T(0));
      std::vector<T> gw(need_w ? wd.size() : 0, T(0));
      std::vector<T> col(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
      for (std::int64_t b = 0; b < g.batch; ++b) {
        for (int grp = 0; grp < g.groups; ++grp) {
          const T* go = gd.data() + (b * g.cout + grp * g.cout_g) * g.ho * g.wo;
          const T* wg = wd.data() + grp * g.cout_g * g.col_rows();
          const T* src = in.data() + (b * g.cin + grp * g.cin_g) * g.h * g.w;
          if (need_w) {
            const T* cm = src;
            if (!g.pointwise()) {
              im2col(src, g, col.data());
              cm = col.data();
            }
            detail::gemm<T>(false, true, g.cout_g, g.col_rows(), g.col_cols(), go, cm, gw.data() + grp * g.cout_g * g.col_rows(), true);
          }
          if (need_x) {
            T* dst = gx.data() + (b * g.cin + grp * g.cin_g) * g.h * g.w;
            if (g.pointwise()) {
              detail::gemm<T>(true, false, g.col_rows(), g.col_cols(), g.cout_g, wg, go, dst, true);
            } else {
              detail::gemm<T>(true, false, g.col_rows(), g.col_cols(), g.cout_g, wg, go, col.data(), false);
              col2im_add(col.data(), g, dst);
            }
          }
        }
      }
      if (need_x) grads[0] = Tensor::from_buffer(input.shape(), std::move(gx));
      if (need_w) grads[1] = Tensor::from_buffer(weight.shape(), std::move(gw));
      if (has_bias) {
        std::vector<T> gb(static_cast<std::size_t>(g.cout), T(0));
        for (std::int64_t b = 0; b < g.batch; ++b)
          for (std::int64_t c = 0; c < g.cout; ++c) {
            const T* plane = gd.data() + (b * g.cout + c) * g.ho * g.wo;
            T s = 0;
            for (std::int64_t i = 0; i < g.ho * g.wo; ++i) s += plane[i];
            gb[static_cast<std::size_t>(c)] += s;
          }
        grads[2] = Tensor::from_buffer({g.cout}, std::move(gb));
      }
    });
    return grads;
  });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride) {
  detail::require_rank(input, 4, "conv_transpose2d", "input");
  detail::require_rank(weight, 4, "conv_transpose2d", "weight");
  detail::require_same_dtype(input, weight, "conv_transpose2d");
  if (stride < 1) throw std::invalid_argument("conv_transpose2d: stride must be >= 1");
  if (weight.dim(2) != stride || weight.dim(3) != stride) {
    throw std::invalid_argument("conv_transpose2d: kernel " + std::to_string(weight.dim(2)) + "x" + std::to_string(weight.dim(3)) +
                                " must equal stride " + std::to_string(stride));
  }
  const std::int64_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (weight.dim(0) != cin) {
    throw std::invalid_argument("conv_transpose2d: weight " + shape_str(weight.shape()) + " does not match input " + shape_str(input.shape()));
  }
  const std::int64_t cout = weight.dim(1), k = stride, kk = k * k, hw = h * w;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw std::invalid_argument("conv_transpose2d: bias must have shape [" + std::to_string(cout) + "]");
  }
  const std::int64_t oh = h * k, ow = w * k;
  FlopCounterScope::add(2 * batch * cin * cout * kk * hw);

  Tensor out = dispatch(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = input.data<T>();
    auto wd = weight.data<T>();
    std::vector<T> v(static_cast<std::size_t>(batch * cout * oh * ow));
    std::vector<T> y(static_cast<std::size_t>(cout * kk * hw));
    for (std::int64_t b = 0; b < batch; ++b) {
      detail::gemm<T>(true, false, cout * kk, hw, cin, wd.data(), in.data() + b * cin * hw, y.data(), false);
      for (std::int64_t co = 0; co < cout; ++co) {
        const T bv = bias.defined() ? bias.data<T>()[static_cast<std::size_t>(co)] : T(0);
        T* plane = v.data() + (b * cout + co) * oh * ow;
        for (std::int64_t ki = 0; ki < k; ++ki)
          for (std::int64_t kj = 0; kj < k; ++kj) {
            const T* row = y.data() + ((co * k + ki) * k + kj) * hw;
            for (std::int64_t i = 0; i < h; ++i)
              for (std::int64_t j = 0; j < w; ++j) plane[(i * k + ki) * ow + j * k + kj] = row[i * w + j] + bv;
          }
      }
    }
    return Tensor::from_buffer({batch, cout, oh, ow}, std::move(v));
  });
  out = detail::checked(out, "conv_transpose2d");

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record(out, "conv_transpose2d", inputs,
                [input, weight, has_bias = bias.defined(), batch, cin, cout, h, w, k](const Tensor& grad) -> std::vector<Tensor> {
                  std::vector<Tensor> grads(has_bias ? 3 : 2);
                  const std::int64_t kk = k * k, hw = h * w, oh = h * k, ow = w * k;
                  dispatch(grad.dtype(), [&](auto tag) {
                    using T = decltype(tag);
                    auto gd = grad.data<T>();
                    auto in = input.data<T>();
                    auto wd = weight.data<T>();
                    std::vector<T> gy(static_cast<std::size_t>(cout * kk * hw));
                    std::vector<T> gx(input.requires_grad() ? in.size() : 0);
                    std::vector<T> gw(weight.requires_grad() ? wd.size() : 0, T(0));
                    std::vector<T> gb(static_cast<std::size_t>(cout), T(0));
                    for (std::int64_t b = 0; b < batch; ++b) {
                      for (std::int64_t co = 0; co < cout; ++co) {
                        const T* plane = gd.data() + (b * cout + co) * oh * ow;
                        for (std::int64_t ki = 0; ki < k; ++ki)
                          for (std::int64_t kj = 0; kj < k; ++kj) {
                            T* row = gy.data() + ((co * k + ki) * k + kj) * hw;
                            for (std::int64_t i = 0; i < h; ++i)
                              for (std::int64_t j = 0; j < w; ++j) row[i * w + j] = plane[(i * k + ki) * ow + j * k + kj];
                          }
                        T s = 0;
                        for (std::int64_t i = 0; i < oh * ow; ++i) s += plane[i];
                        gb[static_cast<std::size_t>(co)] += s;
                      }
                      if (input.requires_grad()) {
                        detail::gemm<T>(false, false, cin, hw, cout * kk, wd.data(), gy.data(), gx.data() + b * cin * hw, false);
                      }
                      if (weight.requires_grad()) {
                        detail::gemm<T>(false, true, cin, cout * kk, hw, in.data() + b * cin * hw, gy.data(), gw.data(), true);
                      }
                    }
                    if (input.requires_grad()) grads[0] = Tensor::from_buffer(input.shape(), std::move(gx));
                    if (weight.requires_grad()) grads[1] = Tensor::from_buffer(weight.shape(), std::move(gw));
                    if (has_bias) grads[2] = Tensor::from_buffer({cout}, std::move(gb));
                  });
                  return grads;
                });
}

namespace {

struct ResizeTap {
  std::int64_t lo, hi;
  double frac;
};

std::vector<ResizeTap> resize_taps(std::int64_t in, std::int64_t out) {
  std::vector<ResizeTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(src));
    taps[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& input, std::int64_t out_h, std::int64_t out_w) {
  detail::require_rank(input, 4, "bilinear_resize", "input");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_resize: output extents must be >= 1");
  const std::int64_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const auto ty = resize_taps(h, out_h);
  const auto tx = resize_taps(w, out_w);
  Tensor out = dispatch(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = input.data<T>();
    std::vector<T> v(static_cast<std::size_t>(planes * out_h * out_w));
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* src = in.data() + p * h * w;
      T* dst = v.data() + p * out_h * out_w;
      for (std::int64_t i = 0; i < out_h; ++i) {
        const auto& a = ty[static_cast<std::size_t>(i)];
        const T fy = static_cast<T>(a.frac);
        for (std::int64_t j = 0; j < out_w; ++j) {
          const auto& b = tx[static_cast<std::size_t>(j)];
          const T fx = static_cast<T>(b.frac);
          const T top = src[a.lo * w + b.lo] * (T(1) - fx) + src[a.lo * w + b.hi] * fx;
          const T bot = src[a.hi * w + b.lo] * (T(1) - fx) + src[a.hi * w + b.hi] * fx;
          dst[i * out_w + j] = top * (T(1) - fy) + bot * fy;
        }
      }
    }
    return Tensor::from_buffer({input.dim(0), input.dim(1), out_h, out_w}, std::move(v));
  });
  return record(out, "bilinear_resize", {input}, [in_shape = input.shape(), ty, tx, planes, h, w, out_h, out_w](const Tensor& grad) -> std::vector<Tensor> {
    return {dispatch(grad.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gd = grad.data<T>();
      std::vector<T> gx(static_cast<std::size_t>(planes * h * w), T(0));
      for (std::int64_t p = 0; p < planes; ++p) {
        const T* go = gd.data() + p * out_h * out_w;
        T* dst = gx.data() + p * h * w;
        for (std::int64_t i = 0; i < out_h; ++i) {
          const auto& a = ty[static_cast<std::size_t>(i)];
          const T fy = static_cast<T>(a.frac);
          for (std::int64_t j = 0; j < out_w; ++j) {
            const auto& b = tx[static_cast<std::size_t>(j)];
            const T fx = static_cast<T>(b.frac);
            const T gv = go[i * out_w + j];
            dst[a.lo * w + b.lo] += gv * (T(1) - fy) * (T(1) - fx);
            dst[a.lo * w + b.hi] += gv * (T(1) - fy) * fx;
            dst[a.hi * w + b.lo] += gv * fy * (T(1) - fx);
            dst[a.hi * w + b.hi] += gv * fy * fx;
          }
        }
      }
      return Tensor::from_buffer(in_shape, std::move(gx));
    })};
  });
}

Tensor window_sample(const Tensor& input, int stride) {
  detail::require_rank(input, 4, "window_sample", "input");
  const std::int64_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  if (stride < 1 || h % stride != 0 || w % stride != 0) {
    throw std::invalid_argument("window_sample: stride " + std::to_string(stride) + " does not divide " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  const std::int64_t oh = h / stride, ow = w / stride;
  Tensor out = dispatch(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = input.data<T>();
    std::vector<T> v(static_cast<std::size_t>(planes * oh * ow));
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) v[static_cast<std::size_t>((p * oh + i) * ow + j)] = in[static_cast<std::size_t>((p * h + i * stride) * w + j * stride)];
    return Tensor::from_buffer({input.dim(0), input.dim(1), oh, ow}, std::move(v));
  });
  return record(out, "window_sample", {input}, [in_shape = input.shape(), planes, h, w, oh, ow, stride](const Tensor& grad) -> std::vector<Tensor> {
    return {dispatch(grad.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gd = grad.data<T>();
      std::vector<T> gx(static_cast<std::size_t>(planes * h * w), T(0));
      for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t i = 0; i < oh; ++i)
          for (std::int64_t j = 0; j < ow; ++j) gx[static_cast<std::size_t>((p * h + i * stride) * w + j * stride)] = gd[static_cast<std::size_t>((p * oh + i) * ow + j)];
      return Tensor::from_buffer(in_shape, std::move(gx));
    })};
  });
}

}  // namespace lucf
