#pragma once

#include <algorithm>
#include <cstddef>
#include <tuple>
#include <utility>
#include <vector>

#include "inett/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace inett {

// Forward kernels and their adjoints. Images are H x W x C row-major with the
// channel axis last; kernels are f1 x f2 x Cin x Cout. All convolutions are
// direct-loop cross-correlations.

inline void check_image(const Tensor& t, const char* what) {
  if (t.ndim() != 3)
    throw DimensionError(std::string(what) + ": expected rank-3 image, got " + t.shape_str());
}

inline Tensor zero_pad(const Tensor& in, const PadSpec& pad) {
  check_image(in, "zero_pad");
  const std::size_t H = in.dim(0), W = in.dim(1), C = in.dim(2);
  Tensor out({H + pad.height(), W + pad.width(), C});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < C; ++c)
        out.at3(i + pad.top, j + pad.left, c) = in.at3(i, j, c);
  return out;
}

inline Tensor zero_pad_adjoint(const Tensor& grad_out, const PadSpec& pad,
                               std::size_t H, std::size_t W) {
  const std::size_t C = grad_out.dim(2);
  Tensor g({H, W, C});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < C; ++c)
        g.at3(i, j, c) = grad_out.at3(i + pad.top, j + pad.left, c);
  return g;
}

struct ConvDims {
  std::size_t H, W, Cin, f1, f2, Cout, Hout, Wout;
};

inline ConvDims conv2d_dims(const Tensor& in, const Tensor& kernel,
                            const PadSpec& pad, std::size_t stride) {
  check_image(in, "conv2d");
  if (kernel.ndim() != 4)
    throw DimensionError("conv2d: kernel must be f1 x f2 x Cin x Cout, got " +
                         kernel.shape_str());
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvDims d;
  d.H = in.dim(0); d.W = in.dim(1); d.Cin = in.dim(2);
  d.f1 = kernel.dim(0); d.f2 = kernel.dim(1); d.Cout = kernel.dim(3);
  if (kernel.dim(2) != d.Cin)
    throw DimensionError("conv2d: kernel channel-in " + std::to_string(kernel.dim(2)) +
                         " != input channels " + std::to_string(d.Cin));
  const std::size_t Hp = d.H + pad.height(), Wp = d.W + pad.width();
  if (Hp < d.f1 || Wp < d.f2)
    throw DimensionError("conv2d: padded dims smaller than kernel");
  if ((Hp - d.f1) % stride != 0 || (Wp - d.f2) % stride != 0)
    throw DimensionError("conv2d: non-integral output size");
  d.Hout = (Hp - d.f1) / stride + 1;
  d.Wout = (Wp - d.f2) / stride + 1;
  return d;
}

inline Tensor conv2d(const Tensor& in, const Tensor& kernel, const PadSpec& pad,
                     std::size_t stride = 1) {
  const ConvDims d = conv2d_dims(in, kernel, pad, stride);
  Tensor out({d.Hout, d.Wout, d.Cout});
  const long pt = static_cast<long>(pad.top), pl = static_cast<long>(pad.left);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long i = 0; i < static_cast<long>(d.Hout); ++i) {
    for (std::size_t j = 0; j < d.Wout; ++j)
      for (std::size_t a = 0; a < d.f1; ++a) {
        const long y = static_cast<long>(i * stride + a) - pt;
        if (y < 0 || y >= static_cast<long>(d.H)) continue;
        for (std::size_t b = 0; b < d.f2; ++b) {
          const long x = static_cast<long>(j * stride + b) - pl;
          if (x < 0 || x >= static_cast<long>(d.W)) continue;
          for (std::size_t ci = 0; ci < d.Cin; ++ci) {
            const double v = in.at3(static_cast<std::size_t>(y),
                                    static_cast<std::size_t>(x), ci);
            for (std::size_t co = 0; co < d.Cout; ++co)
              out.at3(static_cast<std::size_t>(i), j, co) += v * kernel.at4(a, b, ci, co);
          }
        }
      }
  }
  return out;
}

inline Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& in,
                                const Tensor& kernel, const PadSpec& pad,
                                std::size_t stride) {
  const ConvDims d = conv2d_dims(in, kernel, pad, stride);
  Tensor g({d.H, d.W, d.Cin});
  const long pt = static_cast<long>(pad.top), pl = static_cast<long>(pad.left);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long ci = 0; ci < static_cast<long>(d.Cin); ++ci) {
    for (std::size_t i = 0; i < d.Hout; ++i)
      for (std::size_t a = 0; a < d.f1; ++a) {
        const long y = static_cast<long>(i * stride + a) - pt;
        if (y < 0 || y >= static_cast<long>(d.H)) continue;
        for (std::size_t j = 0; j < d.Wout; ++j)
          for (std::size_t b = 0; b < d.f2; ++b) {
            const long x = static_cast<long>(j * stride + b) - pl;
            if (x < 0 || x >= static_cast<long>(d.W)) continue;
            double s = 0.0;
            for (std::size_t co = 0; co < d.Cout; ++co)
              s += grad_out.at3(i, j, co) *
                   kernel.at4(a, b, static_cast<std::size_t>(ci), co);
            g.at3(static_cast<std::size_t>(y), static_cast<std::size_t>(x),
                  static_cast<std::size_t>(ci)) += s;
          }
      }
  }
  return g;
}

inline Tensor conv2d_grad_kernel(const Tensor& grad_out, const Tensor& in,
                                 const Tensor& kernel, const PadSpec& pad,
                                 std::size_t stride) {
  const ConvDims d = conv2d_dims(in, kernel, pad, stride);
  Tensor g({d.f1, d.f2, d.Cin, d.Cout});
  const long pt = static_cast<long>(pad.top), pl = static_cast<long>(pad.left);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long co = 0; co < static_cast<long>(d.Cout); ++co) {
    for (std::size_t i = 0; i < d.Hout; ++i)
      for (std::size_t j = 0; j < d.Wout; ++j) {
        const double go = grad_out.at3(i, j, static_cast<std::size_t>(co));
        if (go == 0.0) continue;
        for (std::size_t a = 0; a < d.f1; ++a) {
          const long y = static_cast<long>(i * stride + a) - pt;
          if (y < 0 || y >= static_cast<long>(d.H)) continue;
          for (std::size_t b = 0; b < d.f2; ++b) {
            const long x = static_cast<long>(j * stride + b) - pl;
            if (x < 0 || x >= static_cast<long>(d.W)) continue;
            for (std::size_t ci = 0; ci < d.Cin; ++ci)
              g.at4(a, b, ci, static_cast<std::size_t>(co)) +=
                  go * in.at3(static_cast<std::size_t>(y),
                              static_cast<std::size_t>(x), ci);
          }
        }
      }
  }
  return g;
}

inline Tensor relu(const Tensor& in) {
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::max(0.0, in[i]);
  return out;
}

// Subgradient convention: derivative 0 at the kink.
inline Tensor relu_adjoint(const Tensor& grad_out, const Tensor& in) {
  Tensor g(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) g[i] = in[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

inline Tensor maxpool2(const Tensor& in, std::vector<std::size_t>* argmax = nullptr) {
  check_image(in, "maxpool2");
  const std::size_t H = in.dim(0), W = in.dim(1), C = in.dim(2);
  if (H % 2 != 0 || W % 2 != 0)
    throw DimensionError("maxpool2: odd spatial dims " + in.shape_str());
  Tensor out({H / 2, W / 2, C});
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t i = 0; i < H / 2; ++i)
    for (std::size_t j = 0; j < W / 2; ++j)
      for (std::size_t c = 0; c < C; ++c) {
        double best = in.at3(2 * i, 2 * j, c);
        std::size_t best_idx = (2 * i * W + 2 * j) * C + c;
        // ties broken by first index in row-major order
        const std::size_t ys[2] = {2 * i, 2 * i + 1};
        const std::size_t xs[2] = {2 * j, 2 * j + 1};
        for (std::size_t yy : ys)
          for (std::size_t xx : xs) {
            const double v = in.at3(yy, xx, c);
            if (v > best) {
              best = v;
              best_idx = (yy * W + xx) * C + c;
            }
          }
        out.at3(i, j, c) = best;
        if (argmax) (*argmax)[(i * (W / 2) + j) * C + c] = best_idx;
      }
  return out;
}

inline Tensor maxpool2_adjoint(const Tensor& grad_out, const Tensor& in,
                               const std::vector<std::size_t>& argmax) {
  Tensor g(in.shape());
  for (std::size_t k = 0; k < grad_out.size(); ++k) g[argmax[k]] += grad_out[k];
  return g;
}

inline Tensor upsample_nn(const Tensor& in) {
  check_image(in, "upsample_nn");
  const std::size_t H = in.dim(0), W = in.dim(1), C = in.dim(2);
  Tensor out({2 * H, 2 * W, C});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < C; ++c) {
        const double v = in.at3(i, j, c);
        out.at3(2 * i, 2 * j, c) = v;
        out.at3(2 * i, 2 * j + 1, c) = v;
        out.at3(2 * i + 1, 2 * j, c) = v;
        out.at3(2 * i + 1, 2 * j + 1, c) = v;
      }
  return out;
}

inline Tensor upsample_nn_adjoint(const Tensor& grad_out, std::size_t H, std::size_t W) {
  const std::size_t C = grad_out.dim(2);
  Tensor g({H, W, C});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < C; ++c)
        g.at3(i, j, c) = grad_out.at3(2 * i, 2 * j, c) + grad_out.at3(2 * i, 2 * j + 1, c) +
                         grad_out.at3(2 * i + 1, 2 * j, c) +
                         grad_out.at3(2 * i + 1, 2 * j + 1, c);
  return g;
}

/// Channel concatenation C(z, x): z's channels first, then x's.
inline Tensor concat_channels(const Tensor& z, const Tensor& x) {
  check_image(z, "concat");
  check_image(x, "concat");
  if (z.dim(0) != x.dim(0) || z.dim(1) != x.dim(1))
    throw DimensionError("concat: spatial mismatch " + z.shape_str() + " vs " +
                         x.shape_str());
  const std::size_t H = z.dim(0), W = z.dim(1), Cz = z.dim(2), Cx = x.dim(2);
  Tensor out({H, W, Cz + Cx});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      for (std::size_t c = 0; c < Cz; ++c) out.at3(i, j, c) = z.at3(i, j, c);
      for (std::size_t c = 0; c < Cx; ++c) out.at3(i, j, Cz + c) = x.at3(i, j, c);
    }
  return out;
}

inline std::pair<Tensor, Tensor> concat_channels_adjoint(const Tensor& grad_out,
                                                         std::size_t Cz, std::size_t Cx) {
  const std::size_t H = grad_out.dim(0), W = grad_out.dim(1);
  Tensor gz({H, W, Cz}), gx({H, W, Cx});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      for (std::size_t c = 0; c < Cz; ++c) gz.at3(i, j, c) = grad_out.at3(i, j, c);
      for (std::size_t c = 0; c < Cx; ++c) gx.at3(i, j, c) = grad_out.at3(i, j, Cz + c);
    }
  return {gz, gx};
}

/// Flat-vector concatenation (z first, x second).
inline Tensor concat_flat(const Tensor& z, const Tensor& x) {
  std::vector<double> d(z.size() + x.size());
  std::copy(z.data(), z.data() + z.size(), d.begin());
  std::copy(x.data(), x.data() + x.size(), d.begin() + static_cast<long>(z.size()));
  return Tensor({z.size() + x.size()}, std::move(d));
}

// ---- per-channel batch statistics ----

struct ChannelStats {
  Tensor mean;  // shape {C}
  Tensor var;   // shape {C}, biased (divide by count)
};

inline ChannelStats channel_stats(const std::vector<const Tensor*>& batch) {
  if (batch.empty()) throw Error("channel_stats: empty batch");
  const std::size_t C = batch[0]->dim(2);
  ChannelStats st{Tensor({C}), Tensor({C})};
  std::size_t count = 0;
  for (const Tensor* t : batch) {
    check_image(*t, "channel_stats");
    if (t->dim(2) != C) throw DimensionError("channel_stats: channel mismatch");
    count += t->dim(0) * t->dim(1);
    for (std::size_t i = 0; i < t->dim(0); ++i)
      for (std::size_t j = 0; j < t->dim(1); ++j)
        for (std::size_t c = 0; c < C; ++c) st.mean[c] += t->at3(i, j, c);
  }
  for (std::size_t c = 0; c < C; ++c) st.mean[c] /= static_cast<double>(count);
  for (const Tensor* t : batch)
    for (std::size_t i = 0; i < t->dim(0); ++i)
      for (std::size_t j = 0; j < t->dim(1); ++j)
        for (std::size_t c = 0; c < C; ++c) {
          const double d = t->at3(i, j, c) - st.mean[c];
          st.var[c] += d * d;
        }
  for (std::size_t c = 0; c < C; ++c) st.var[c] /= static_cast<double>(count);
  return st;
}

/// Frozen-statistics batch normalization: an affine map per channel.
inline Tensor batchnorm_infer(const Tensor& u, const Tensor& gamma, const Tensor& beta,
                              const Tensor& pop_mean, const Tensor& pop_var, double eps) {
  check_image(u, "batchnorm_infer");
  const std::size_t C = u.dim(2);
  if (gamma.size() != C || beta.size() != C || pop_mean.size() != C || pop_var.size() != C)
    throw DimensionError("batchnorm_infer: per-channel parameter size mismatch");
  Tensor out(u.shape());
  for (std::size_t i = 0; i < u.dim(0); ++i)
    for (std::size_t j = 0; j < u.dim(1); ++j)
      for (std::size_t c = 0; c < C; ++c)
        out.at3(i, j, c) = beta[c] + gamma[c] * (u.at3(i, j, c) - pop_mean[c]) /
                                         std::sqrt(pop_var[c] + eps);
  return out;
}

/// Batch-mode batch normalization over a mini-batch; returns the normalized
/// batch plus the statistics used.
inline std::tuple<std::vector<Tensor>, Tensor, Tensor> batchnorm_train(
    const std::vector<Tensor>& batch, const Tensor& gamma, const Tensor& beta,
    double eps) {
  if (batch.empty()) throw Error("batchnorm_train: empty batch");
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(batch.size());
  for (const Tensor& t : batch) ptrs.push_back(&t);
  ChannelStats st = channel_stats(ptrs);
  std::vector<Tensor> out;
  out.reserve(batch.size());
  for (const Tensor& t : batch)
    out.push_back(batchnorm_infer(t, gamma, beta, st.mean, st.var, eps));
  return {std::move(out), std::move(st.mean), std::move(st.var)};
}

}  // namespace inett
