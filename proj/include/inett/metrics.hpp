#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "inett/tensor.hpp"

namespace inett {

inline double mse(const Tensor& x, const Tensor& ref) {
  if (!x.same_shape(ref)) throw DimensionError("mse: shape mismatch");
  return norm2_sq(x - ref) / static_cast<double>(x.size());
}

/// Peak is the reference dynamic range max(ref) - min(ref); a perfect match
/// returns +infinity.
inline double psnr(const Tensor& x, const Tensor& ref) {
  const double e = mse(x, ref);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  double lo = ref[0], hi = ref[0];
  for (std::size_t i = 0; i < ref.size(); ++i) {
    lo = std::min(lo, ref[i]);
    hi = std::max(hi, ref[i]);
  }
  const double peak = hi - lo;
  if (peak == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / e);
}

namespace detail_metrics {

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size * size);
  const double c = static_cast<double>(size - 1) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      const double di = static_cast<double>(i) - c, dj = static_cast<double>(j) - c;
      w[i * size + j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      sum += w[i * size + j];
    }
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace detail_metrics

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  bool symmetric_range = false;  // default: range anchored to the reference
};

/// Mean structural similarity over all fully-interior Gaussian windows.
inline double ssim(const Tensor& x, const Tensor& ref, const SsimOptions& opt = {}) {
  if (!x.same_shape(ref)) throw DimensionError("ssim: shape mismatch");
  if (x.ndim() != 2 && !(x.ndim() == 3 && x.dim(2) == 1))
    throw DimensionError("ssim: expected a single-channel image");
  const std::size_t h = x.dim(0), w = x.dim(1);
  if (h < opt.window || w < opt.window)
    throw DimensionError("ssim: image " + x.shape_str() + " smaller than the " +
                         std::to_string(opt.window) + "x" + std::to_string(opt.window) +
                         " window");
  double lo = ref[0], hi = ref[0];
  for (std::size_t i = 0; i < ref.size(); ++i) {
    lo = std::min(lo, ref[i]);
    hi = std::max(hi, ref[i]);
  }
  if (opt.symmetric_range)
    for (std::size_t i = 0; i < x.size(); ++i) {
      lo = std::min(lo, x[i]);
      hi = std::max(hi, x[i]);
    }
  const double L = hi > lo ? hi - lo : 1.0;
  const double c1 = (opt.k1 * L) * (opt.k1 * L);
  const double c2 = (opt.k2 * L) * (opt.k2 * L);

  const std::vector<double> win = detail_metrics::gaussian_window(opt.window, opt.sigma);
  const double* xd = x.data();
  const double* rd = ref.data();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + opt.window <= h; ++i)
    for (std::size_t j = 0; j + opt.window <= w; ++j) {
      double mx = 0, mr = 0, sxx = 0, srr = 0, sxr = 0;
      for (std::size_t a = 0; a < opt.window; ++a)
        for (std::size_t b = 0; b < opt.window; ++b) {
          const double wt = win[a * opt.window + b];
          const double xv = xd[(i + a) * w + (j + b)];
          const double rv = rd[(i + a) * w + (j + b)];
          mx += wt * xv;
          mr += wt * rv;
          sxx += wt * xv * xv;
          srr += wt * rv * rv;
          sxr += wt * xv * rv;
        }
      const double vx = sxx - mx * mx;
      const double vr = srr - mr * mr;
      const double cov = sxr - mx * mr;
      total += ((2.0 * mx * mr + c1) * (2.0 * cov + c2)) /
               ((mx * mx + mr * mr + c1) * (vx + vr + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

}  // namespace inett
