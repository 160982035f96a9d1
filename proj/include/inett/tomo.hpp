#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "inett/rng.hpp"
#include "inett/tensor.hpp"

namespace inett {

/// Parallel-beam 2D projection matrix stored row-wise as sparse
/// (pixel index, intersection length) pairs. Pixel size 1, image centered at
/// the origin, detector line through the origin spanning the image diagonal,
/// view angles uniform on [0, pi).
class ProjectionOperator {
 public:
  ProjectionOperator(std::size_t n, std::size_t n_det, std::size_t n_views)
      : n_(n), n_det_(n_det), n_views_(n_views) {}

  std::size_t image_dim() const { return n_; }
  std::size_t n_pixels() const { return n_ * n_; }
  std::size_t n_detectors() const { return n_det_; }
  std::size_t n_views() const { return n_views_; }
  std::size_t n_rays() const { return n_det_ * n_views_; }

  const std::vector<std::pair<std::uint32_t, double>>& row(std::size_t i) const {
    return rows_[i];
  }
  double row_norm_sq(std::size_t i) const { return row_norm_sq_[i]; }

  void set_rows(std::vector<std::vector<std::pair<std::uint32_t, double>>> rows) {
    rows_ = std::move(rows);
    row_norm_sq_.assign(rows_.size(), 0.0);
    for (std::size_t i = 0; i < rows_.size(); ++i)
      for (const auto& [j, a] : rows_[i]) row_norm_sq_[i] += a * a;
  }

 private:
  std::size_t n_, n_det_, n_views_;
  std::vector<std::vector<std::pair<std::uint32_t, double>>> rows_;
  std::vector<double> row_norm_sq_;
};

struct Sinogram {
  Tensor data;          // n_detectors x n_views
  double delta = -1.0;  // recorded noise norm bound; negative = unknown

  bool delta_known() const { return delta >= 0.0; }
};

namespace detail_tomo {

/// Exact ray-grid intersection lengths (Siddon-style traversal) for the line
/// through (s cos phi, s sin phi) with direction (-sin phi, cos phi) over the
/// unit-spaced grid [-n/2, n/2]^2. Pixel (iy from the bottom, ix from the
/// left) maps to flat image index (n-1-iy)*n + ix (row 0 at the top).
inline std::vector<std::pair<std::uint32_t, double>> trace_ray(std::size_t n, double s,
                                                               double phi) {
  const double half = static_cast<double>(n) / 2.0;
  const double px = s * std::cos(phi), py = s * std::sin(phi);
  const double dx = -std::sin(phi), dy = std::cos(phi);
  const double inf = 1e300;

  double tmin = -inf, tmax = inf;
  auto clip = [&](double p0, double d, double lo, double hi) {
    if (std::abs(d) < 1e-14) return p0 >= lo && p0 <= hi;
    double t0 = (lo - p0) / d, t1 = (hi - p0) / d;
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    return true;
  };
  if (!clip(px, dx, -half, half) || !clip(py, dy, -half, half) || tmin >= tmax)
    return {};

  std::vector<std::pair<std::uint32_t, double>> out;
  double t = tmin;
  // cell of the entry point, nudged inside
  const double eps = 1e-9;
  auto cell_of = [&](double c) {
    long i = static_cast<long>(std::floor(c + half));
    if (i < 0) i = 0;
    if (i >= static_cast<long>(n)) i = static_cast<long>(n) - 1;
    return i;
  };
  long ix = cell_of(px + (t + eps) * dx);
  long iy = cell_of(py + (t + eps) * dy);
  const long step_x = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
  const long step_y = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
  auto next_crossing = [&](double p0, double d, long i, long step) {
    if (step == 0) return inf;
    const double boundary = -half + static_cast<double>(step > 0 ? i + 1 : i);
    return (boundary - p0) / d;
  };
  while (t < tmax - 1e-12) {
    const double tx = next_crossing(px, dx, ix, step_x);
    const double ty = next_crossing(py, dy, iy, step_y);
    const double tnext = std::min(std::min(tx, ty), tmax);
    const double len = tnext - t;
    if (len > 0 && ix >= 0 && iy >= 0 && ix < static_cast<long>(n) &&
        iy < static_cast<long>(n)) {
      const std::uint32_t flat = static_cast<std::uint32_t>(
          (static_cast<long>(n) - 1 - iy) * static_cast<long>(n) + ix);
      out.emplace_back(flat, len);
    }
    if (tnext >= tmax) break;
    if (tx <= ty)
      ix += step_x;
    else
      iy += step_y;
    t = tnext;
  }
  return out;
}

}  // namespace detail_tomo

/// Discretized Radon transform: one row per (view, detector) pair, detectors
/// centered and spanning the image diagonal.
inline ProjectionOperator build_projector(std::size_t n, std::size_t n_det,
                                          std::size_t n_views) {
  if (n < 1 || n_det < 1 || n_views < 1)
    throw Error("build_projector: n, n_det, n_views must be >= 1");
  ProjectionOperator op(n, n_det, n_views);
  const double diag = static_cast<double>(n) * std::sqrt(2.0);
  const double spacing = diag / static_cast<double>(n_det);
  std::vector<std::vector<std::pair<std::uint32_t, double>>> rows;
  rows.reserve(n_det * n_views);
  for (std::size_t v = 0; v < n_views; ++v) {
    const double phi = 3.14159265358979323846 * static_cast<double>(v) /
                       static_cast<double>(n_views);
    for (std::size_t k = 0; k < n_det; ++k) {
      const double s = -diag / 2.0 + (static_cast<double>(k) + 0.5) * spacing;
      rows.push_back(detail_tomo::trace_ray(n, s, phi));
    }
  }
  op.set_rows(std::move(rows));
  return op;
}

inline void check_image_dims(const ProjectionOperator& op, const Tensor& x) {
  if (!((x.ndim() == 3 && x.dim(0) == op.image_dim() && x.dim(1) == op.image_dim() &&
         x.dim(2) == 1) ||
        (x.ndim() == 2 && x.dim(0) == op.image_dim() && x.dim(1) == op.image_dim())))
    throw DimensionError("projector: image shape " + x.shape_str() + " does not match n=" +
                         std::to_string(op.image_dim()));
}

inline Sinogram apply(const ProjectionOperator& op, const Tensor& x) {
  check_image_dims(op, x);
  Sinogram y{Tensor({op.n_detectors(), op.n_views()})};
  const double* xd = x.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long i = 0; i < static_cast<long>(op.n_rays()); ++i) {
    double s = 0.0;
    for (const auto& [j, a] : op.row(static_cast<std::size_t>(i))) s += a * xd[j];
    const std::size_t view = static_cast<std::size_t>(i) / op.n_detectors();
    const std::size_t det = static_cast<std::size_t>(i) % op.n_detectors();
    y.data[det * op.n_views() + view] = s;
  }
  return y;
}

inline Tensor apply_adjoint(const ProjectionOperator& op, const Sinogram& y) {
  if (y.data.dim(0) != op.n_detectors() || y.data.dim(1) != op.n_views())
    throw DimensionError("projector adjoint: sinogram shape mismatch");
  Tensor x({op.image_dim(), op.image_dim(), 1});
  for (std::size_t i = 0; i < op.n_rays(); ++i) {
    const std::size_t view = i / op.n_detectors();
    const std::size_t det = i % op.n_detectors();
    const double yi = y.data[det * op.n_views() + view];
    if (yi == 0.0) continue;
    for (const auto& [j, a] : op.row(i)) x[j] += a * yi;
  }
  return x;
}

/// Normalized data norm ||y||_Y = ||y||_2 / sqrt(M).
inline double norm_Y(const ProjectionOperator& op, const Tensor& y) {
  return norm2(y) / std::sqrt(static_cast<double>(op.n_rays()));
}

inline double norm_Y(const ProjectionOperator& op, const Sinogram& y) {
  return norm_Y(op, y.data);
}

/// Relative Gaussian noise y_i (1 + level g_i); records the exact noise norm
/// as delta (simulation privilege).
inline Sinogram add_noise(const Sinogram& y_clean, double level, std::uint64_t seed,
                          std::size_t M) {
  if (level < 0.0) throw Error("add_noise: level must be >= 0");
  Rng rng(seed);
  Sinogram out{y_clean.data};
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = y_clean.data[i] * (1.0 + level * rng.normal());
  out.delta = norm2(out.data - y_clean.data) / std::sqrt(static_cast<double>(M));
  return out;
}

inline Sinogram add_noise(const ProjectionOperator& op, const Sinogram& y_clean,
                          double level, std::uint64_t seed) {
  return add_noise(y_clean, level, seed, op.n_rays());
}

/// One full Kaczmarz sweep, rows in order i = 1..M. Zero rows are skipped.
inline Tensor art_sweep(const ProjectionOperator& op, const Sinogram& y, Tensor x) {
  check_image_dims(op, x);
  double* xd = x.data();
  for (std::size_t i = 0; i < op.n_rays(); ++i) {
    const double nsq = op.row_norm_sq(i);
    if (nsq == 0.0) continue;
    const std::size_t view = i / op.n_detectors();
    const std::size_t det = i % op.n_detectors();
    const double yi = y.data[det * op.n_views() + view];
    double ax = 0.0;
    for (const auto& [j, a] : op.row(i)) ax += a * xd[j];
    const double c = (yi - ax) / nsq;
    for (const auto& [j, a] : op.row(i)) xd[j] += c * a;
  }
  return x;
}

/// ART pseudo-inverse: `rounds` sweeps from the flat start x0 = 1/N.
inline Tensor pseudo_inverse(const ProjectionOperator& op, const Sinogram& y,
                             std::size_t rounds = 5) {
  Tensor x({op.image_dim(), op.image_dim(), 1},
           1.0 / static_cast<double>(op.n_pixels()));
  for (std::size_t r = 0; r < rounds; ++r) x = art_sweep(op, y, std::move(x));
  return x;
}

}  // namespace inett
