#include <cmath>

#include "kernels.hpp"

namespace lucf {

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean, Tensor& running_var,
                  bool training, double momentum, double eps) {
  detail::require_rank(x, 4, "batch_norm", "input");
  const std::int64_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->numel() != channels) {
      throw std::invalid_argument("batch_norm: per-channel tensor " + shape_str(t->shape()) + " does not match " +
                                  std::to_string(channels) + " channels");
    }
    detail::require_same_dtype(x, *t, "batch_norm");
  }
  const std::int64_t count = batch * plane;
  if (training && count < 2) throw std::invalid_argument("batch_norm: training mode needs more than one value per channel");

  // Per-channel statistics used for this forward pass.
  std::vector<double> mu(static_cast<std::size_t>(channels)), inv_std(static_cast<std::size_t>(channels));
  Tensor xhat_t;
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto gd = gamma.data<T>();
    auto bd = beta.data<T>();
    auto rm = running_mean.mutable_data<T>();
    auto rv = running_var.mutable_data<T>();
    for (std::int64_t c = 0; c < channels; ++c) {
      const auto cs = static_cast<std::size_t>(c);
      if (training) {
        double s = 0.0;
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* p = in.data() + (b * channels + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) s += static_cast<double>(p[i]);
        }
        const double m = s / static_cast<double>(count);
        double ss = 0.0;
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* p = in.data() + (b * channels + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            const double d = static_cast<double>(p[i]) - m;
            ss += d * d;
          }
        }
        const double var = ss / static_cast<double>(count);
        mu[cs] = m;
        inv_std[cs] = 1.0 / std::sqrt(var + eps);
        const double unbiased = ss / static_cast<double>(count - 1);
        rm[cs] = static_cast<T>((1.0 - momentum) * static_cast<double>(rm[cs]) + momentum * m);
        rv[cs] = static_cast<T>((1.0 - momentum) * static_cast<double>(rv[cs]) + momentum * unbiased);
      } else {
        mu[cs] = static_cast<double>(rm[cs]);
        inv_std[cs] = 1.0 / std::sqrt(static_cast<double>(rv[cs]) + eps);
      }
    }
    std::vector<T> xhat(in.size()), v(in.size());
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t c = 0; c < channels; ++c) {
        const auto cs = static_cast<std::size_t>(c);
        const T m = static_cast<T>(mu[cs]);
        const T is = static_cast<T>(inv_std[cs]);
        const std::int64_t off = (b * channels + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const auto k = static_cast<std::size_t>(off + i);
          xhat[k] = (in[k] - m) * is;
          v[k] = gd[cs] * xhat[k] + bd[cs];
        }
      }
    xhat_t = Tensor::from_buffer(x.shape(), std::move(xhat));
    return Tensor::from_buffer(x.shape(), std::move(v));
  });
  out = detail::checked(out, "batch_norm");

  return record(out, "batch_norm", {x, gamma, beta},
                [x, gamma, xhat_t, inv_std, training, batch, channels, plane](const Tensor& grad) -> std::vector<Tensor> {
                  std::vector<Tensor> grads(3);
                  dispatch(grad.dtype(), [&](auto tag) {
                    using T = decltype(tag);
                    auto gd = grad.data<T>();
                    auto xh = xhat_t.data<T>();
                    auto gam = gamma.data<T>();
                    std::vector<T> gg(static_cast<std::size_t>(channels)), gb(static_cast<std::size_t>(channels));
                    std::vector<T> gx(gd.size());
                    const double count = static_cast<double>(batch * plane);
                    for (std::int64_t c = 0; c < channels; ++c) {
                      const auto cs = static_cast<std::size_t>(c);
                      double sg = 0.0, sgx = 0.0;
                      for (std::int64_t b = 0; b < batch; ++b) {
                        const std::int64_t off = (b * channels + c) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) {
                          const auto k = static_cast<std::size_t>(off + i);
                          sg += static_cast<double>(gd[k]);
                          sgx += static_cast<double>(gd[k]) * static_cast<double>(xh[k]);
                        }
                      }
                      gg[cs] = static_cast<T>(sgx);
                      gb[cs] = static_cast<T>(sg);
                      const double scale = static_cast<double>(gam[cs]) * inv_std[cs];
                      const double mg = sg / count, mgx = sgx / count;
                      for (std::int64_t b = 0; b < batch; ++b) {
                        const std::int64_t off = (b * channels + c) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) {
                          const auto k = static_cast<std::size_t>(off + i);
                          const double g = static_cast<double>(gd[k]);
                          gx[k] = static_cast<T>(training ? scale * (g - mg - static_cast<double>(xh[k]) * mgx) : scale * g);
                        }
                      }
                    }
                    if (x.requires_grad()) grads[0] = Tensor::from_buffer(x.shape(), std::move(gx));
                    grads[1] = Tensor::from_buffer(gamma.shape(), std::move(gg));
                    grads[2] = Tensor::from_buffer(gamma.shape(), std::move(gb));
                  });
                  return grads;
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::int64_t dim = x.dim(-1);
  const std::int64_t rows = x.numel() / dim;
  if (gamma.numel() != dim || beta.numel() != dim) {
    throw std::invalid_argument("layer_norm: affine parameters must have " + std::to_string(dim) + " elements");
  }
  detail::require_same_dtype(x, gamma, "layer_norm");
  detail::require_same_dtype(x, beta, "layer_norm");
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  Tensor xhat_t;
  Tensor out = dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto gd = gamma.data<T>();
    auto bd = beta.data<T>();
    std::vector<T> xhat(in.size()), v(in.size());
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* p = in.data() + r * dim;
      double s = 0.0;
      for (std::int64_t i = 0; i < dim; ++i) s += static_cast<double>(p[i]);
      const double m = s / static_cast<double>(dim);
      double ss = 0.0;
      for (std::int64_t i = 0; i < dim; ++i) {
        const double d = static_cast<double>(p[i]) - m;
        ss += d * d;
      }
      const double is = 1.0 / std::sqrt(ss / static_cast<double>(dim) + eps);
      inv_std[static_cast<std::size_t>(r)] = is;
      for (std::int64_t i = 0; i < dim; ++i) {
        const auto k = static_cast<std::size_t>(r * dim + i);
        xhat[k] = static_cast<T>((static_cast<double>(p[i]) - m) * is);
        v[k] = gd[static_cast<std::size_t>(i)] * xhat[k] + bd[static_cast<std::size_t>(i)];
      }
    }
    xhat_t = Tensor::from_buffer(x.shape(), std::move(xhat));
    return Tensor::from_buffer(x.shape(), std::move(v));
  });
  out = detail::checked(out, "layer_norm");
  return record(out, "layer_norm", {x, gamma, beta}, [x, gamma, xhat_t, inv_std, rows, dim](const Tensor& grad) -> std::vector<Tensor> {
    std::vector<Tensor> grads(3);
    dispatch(grad.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto gd = grad.data<T>();
      auto xh = xhat_t.data<T>();
      auto gam = gamma.data<T>();
      std::vector<T> gx(gd.size());
      std::vector<double> gg(static_cast<std::size_t>(dim), 0.0), gb(static_cast<std::size_t>(dim), 0.0);
      for (std::int64_t r = 0; r < rows; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::int64_t i = 0; i < dim; ++i) {
          const auto k = static_cast<std::size_t>(r * dim + i);
          const double gh = static_cast<double>(gd[k]) * static_cast<double>(gam[static_cast<std::size_t>(i)]);
          s1 += gh;
          s2 += gh * static_cast<double>(xh[k]);
          gg[static_cast<std::size_t>(i)] += static_cast<double>(gd[k]) * static_cast<double>(xh[k]);
          gb[static_cast<std::size_t>(i)] += static_cast<double>(gd[k]);
        }
        const double is = inv_std[static_cast<std::size_t>(r)];
        const double n = static_cast<double>(dim);
        for (std::int64_t i = 0; i < dim; ++i) {
          const auto k = static_cast<std::size_t>(r * dim + i);
          const double gh = static_cast<double>(gd[k]) * static_cast<double>(gam[static_cast<std::size_t>(i)]);
          gx[k] = static_cast<T>(is * (gh - s1 / n - static_cast<double>(xh[k]) * s2 / n));
        }
      }
      if (x.requires_grad()) grads[0] = Tensor::from_buffer(x.shape(), std::move(gx));
      std::vector<T> ggt(gg.begin(), gg.end()), gbt(gb.begin(), gb.end());
      grads[1] = Tensor::from_buffer(gamma.shape(), std::move(ggt));
      grads[2] = Tensor::from_buffer(gamma.shape(), std::move(gbt));
    });
    return grads;
  });
}

}  // namespace lucf
