#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "inett/network.hpp"
#include "inett/tomo.hpp"

namespace inett {

struct NumericalError : Error {
  using Error::Error;
};

/// Bregman distance B^R_xi(x, xhat) = R(x) - R(xhat) - <xi, x - xhat>.
inline double bregman(const Regularizer& R, const Tensor& x, const Tensor& xhat,
                      const Tensor& xi) {
  if (!x.same_shape(xhat) || !x.same_shape(xi))
    throw DimensionError("bregman: shape mismatch");
  return R.evaluate(x) - R.evaluate(xhat) - dot(xi, x - xhat);
}

/// Duality map J_2 on (R^M, ||.||_2 / sqrt(M)): J_2(y) = y / M.
inline Tensor duality_J2(const Tensor& y, std::size_t M) {
  Tensor out = y;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= static_cast<double>(M);
  return out;
}

struct InnerGDConfig {
  double step = 1.0;
  std::size_t max_iters = 200;
  double grad_tol = 1e-6;  // relative: ||g|| <= tol (1 + ||x||)
  std::size_t max_halvings = 60;
};

enum class SolveStatus { Converged, MaxIterations };

struct HistoryRow {
  std::size_t n = 0;
  double alpha = 0.0;
  double residual_Y = 0.0;
  double R_value = 0.0;
  std::size_t inner_iters = 0;
  double bregman_step = 0.0;
};

struct SolveResult {
  Tensor x;
  SolveStatus status = SolveStatus::MaxIterations;
  std::size_t n_iters = 0;
  double residual_Y = 0.0;
  std::vector<HistoryRow> history;
};

namespace detail_solve {

inline Tensor grad_data_term(const ProjectionOperator& op, const Tensor& x,
                             const Tensor& y) {
  Sinogram fx = apply(op, x);
  Sinogram r{fx.data - y};
  Tensor g = apply_adjoint(op, r);
  const double inv_m = 1.0 / static_cast<double>(op.n_rays());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= inv_m;
  return g;
}

inline double data_term(const ProjectionOperator& op, const Tensor& x, const Tensor& y) {
  Sinogram fx = apply(op, x);
  return 0.5 * norm2_sq(fx.data - y) / static_cast<double>(op.n_rays());
}

/// Gradient descent with a fixed step halved whenever the objective would
/// increase. Stops at relative gradient stationarity.
inline std::pair<Tensor, std::size_t> descend(
    Tensor x, const std::function<double(const Tensor&)>& objective,
    const std::function<Tensor(const Tensor&)>& gradient, const InnerGDConfig& cfg) {
  double s = cfg.step;
  double fx = objective(x);
  std::size_t k = 0;
  for (; k < cfg.max_iters; ++k) {
    Tensor g = gradient(x);
    if (norm2(g) <= cfg.grad_tol * (1.0 + norm2(x))) break;
    std::size_t halvings = 0;
    for (;;) {
      Tensor trial = x - g * s;
      const double ft = objective(trial);
      if (ft <= fx) {
        x = std::move(trial);
        fx = ft;
        break;
      }
      if (++halvings > cfg.max_halvings)
        throw NumericalError("inner gradient descent diverged at step " +
                             std::to_string(k + 1));
      s *= 0.5;
    }
  }
  return {std::move(x), k};
}

}  // namespace detail_solve

/// One outer iteration: minimize (1/2M)||Fx - y||_2^2 + alpha B^R_xi(x, xhat)
/// by warm-started gradient descent, then the exact subgradient update
/// xi' = xi - (1/alpha)(1/M) F^T (F x_n - y).
inline std::pair<Tensor, Tensor> inett_step(const ProjectionOperator& op,
                                            const Regularizer& R, const Tensor& y,
                                            const Tensor& xhat, const Tensor& xi,
                                            double alpha, const InnerGDConfig& cfg,
                                            std::size_t* inner_iters = nullptr) {
  auto objective = [&](const Tensor& x) {
    return detail_solve::data_term(op, x, y) +
           alpha * (R.evaluate(x) - dot(xi, x - xhat));
  };
  auto gradient = [&](const Tensor& x) {
    Tensor g = detail_solve::grad_data_term(op, x, y);
    Tensor rg = R.subgrad(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += alpha * (rg[i] - xi[i]);
    return g;
  };
  auto [xn, iters] = detail_solve::descend(xhat, objective, gradient, cfg);
  if (inner_iters) *inner_iters = iters;
  Tensor step = detail_solve::grad_data_term(op, xn, y);
  Tensor xi_new = xi;
  for (std::size_t i = 0; i < xi_new.size(); ++i) xi_new[i] -= step[i] / alpha;
  return {std::move(xn), std::move(xi_new)};
}

struct InettConfig {
  double tau = 1.01;
  std::size_t n_max = 30;
  InnerGDConfig inner;
};

/// Iterated Tikhonov with the learned regularizer: alpha_n = 2^{-n}, flat
/// start x_0 = 1/N, xi_0 a subgradient of R at x_0, stopped by the
/// discrepancy principle ||F x_n - y||_Y <= tau delta.
inline SolveResult inett_solve(const ProjectionOperator& op, const Regularizer& R,
                               const Sinogram& y, double delta, const InettConfig& cfg) {
  if (cfg.tau <= 1.0) throw Error("inett: tau must be > 1");
  if (delta < 0.0) throw Error("inett: delta must be >= 0");
  SolveResult res;
  res.x = Tensor({op.image_dim(), op.image_dim(), 1},
                 1.0 / static_cast<double>(op.n_pixels()));
  Tensor xi = R.subgrad(res.x);
  res.residual_Y = norm_Y(op, apply(op, res.x).data - y.data);
  if (res.residual_Y <= cfg.tau * delta) {
    res.status = SolveStatus::Converged;
    return res;
  }
  for (std::size_t n = 1; n <= cfg.n_max; ++n) {
    const double alpha = std::pow(2.0, -static_cast<double>(n));
    std::size_t inner = 0;
    Tensor prev = res.x;
    auto [xn, xi_new] = inett_step(op, R, y.data, res.x, xi, alpha, cfg.inner, &inner);
    res.x = std::move(xn);
    const double breg = bregman(R, res.x, prev, xi);
    xi = std::move(xi_new);
    res.n_iters = n;
    res.residual_Y = norm_Y(op, apply(op, res.x).data - y.data);
    res.history.push_back({n, alpha, res.residual_Y, R.evaluate(res.x), inner, breg});
    if (res.residual_Y <= cfg.tau * delta) {
      res.status = SolveStatus::Converged;
      return res;
    }
  }
  res.status = SolveStatus::MaxIterations;
  return res;
}

struct NettConfig {
  double alpha = 0.01;
  InnerGDConfig inner;
};

/// Fixed-alpha variational baseline: gradient descent on
/// (1/2M)||Fx - y||_2^2 + alpha ||Phi(x)||_2^2 from the flat start.
inline SolveResult nett_solve(const ProjectionOperator& op, const NetworkSpec& net,
                              const ParamSet& params, const Sinogram& y,
                              const NettConfig& cfg) {
  if (cfg.alpha <= 0.0) throw Error("nett: alpha must be positive");
  auto penalty = [&](const Tensor& x) { return norm2_sq(forward(net, params, x)); };
  auto penalty_grad = [&](const Tensor& x) {
    GradTape tape;
    ValueId xid, outid;
    forward(net, params, x, Mode::Infer, &tape, &xid, &outid);
    return tape.grad_of(tape.sum_pow(outid, 2.0), xid);
  };
  auto objective = [&](const Tensor& x) {
    return detail_solve::data_term(op, x, y.data) + cfg.alpha * penalty(x);
  };
  auto gradient = [&](const Tensor& x) {
    Tensor g = detail_solve::grad_data_term(op, x, y.data);
    Tensor pg = penalty_grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg.alpha * pg[i];
    return g;
  };
  Tensor x0({op.image_dim(), op.image_dim(), 1},
            1.0 / static_cast<double>(op.n_pixels()));
  SolveResult res;
  auto [x, iters] = detail_solve::descend(std::move(x0), objective, gradient, cfg.inner);
  res.x = std::move(x);
  res.n_iters = iters;
  res.status = iters < cfg.inner.max_iters ? SolveStatus::Converged
                                           : SolveStatus::MaxIterations;
  res.residual_Y = norm_Y(op, apply(op, res.x).data - y.data);
  return res;
}

struct SitConfig {
  double tau = 1.01;
  std::size_t n_max = 30;
  double cg_tol = 1e-10;
};

/// Classical iterated Tikhonov: x_n = x_{n-1} - (F^T F + hat_alpha_n I)^{-1}
/// F^T (F x_{n-1} - y), hat_alpha_n = 2 M alpha_n, each solve by CG. Same
/// start, schedule and stopping rule as the learned iteration.
inline SolveResult sit_solve(const ProjectionOperator& op, const Sinogram& y,
                             double delta, const SitConfig& cfg) {
  if (cfg.tau <= 1.0) throw Error("sit: tau must be > 1");
  if (delta < 0.0) throw Error("sit: delta must be >= 0");
  const std::size_t N = op.n_pixels();
  auto normal_op = [&](const Tensor& v, double shift) {
    Sinogram fv = apply(op, v);
    Tensor out = apply_adjoint(op, fv);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += shift * v[i];
    return out;
  };
  auto cg_solve = [&](const Tensor& rhs, double shift) {
    Tensor v(rhs.shape());
    Tensor r = rhs;
    Tensor p = r;
    double rs = norm2_sq(r);
    const double target = cfg.cg_tol * cfg.cg_tol * norm2_sq(rhs);
    const std::size_t limit = 10 * N;
    for (std::size_t it = 0; it < limit; ++it) {
      if (rs <= target) return v;
      Tensor ap = normal_op(p, shift);
      const double denom = dot(p, ap);
      if (denom <= 0.0)
        throw NumericalError("sit: CG breakdown at iteration " + std::to_string(it + 1));
      const double gamma = rs / denom;
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += gamma * p[i];
      for (std::size_t i = 0; i < r.size(); ++i) r[i] -= gamma * ap[i];
      const double rs_new = norm2_sq(r);
      const double beta = rs_new / rs;
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
      rs = rs_new;
    }
    if (rs > target)
      throw NumericalError("sit: CG failed to reach tolerance in " +
                           std::to_string(limit) + " iterations");
    return v;
  };

  SolveResult res;
  res.x = Tensor({op.image_dim(), op.image_dim(), 1}, 1.0 / static_cast<double>(N));
  res.residual_Y = norm_Y(op, apply(op, res.x).data - y.data);
  if (res.residual_Y <= cfg.tau * delta) {
    res.status = SolveStatus::Converged;
    return res;
  }
  for (std::size_t n = 1; n <= cfg.n_max; ++n) {
    const double alpha = std::pow(2.0, -static_cast<double>(n));
    const double shift = 2.0 * static_cast<double>(op.n_rays()) * alpha;
    Sinogram fx = apply(op, res.x);
    Tensor rhs = apply_adjoint(op, Sinogram{fx.data - y.data});
    Tensor update = cg_solve(rhs, shift);
    res.x -= update;
    res.n_iters = n;
    res.residual_Y = norm_Y(op, apply(op, res.x).data - y.data);
    res.history.push_back({n, alpha, res.residual_Y, 0.0, 0, 0.0});
    if (res.residual_Y <= cfg.tau * delta) {
      res.status = SolveStatus::Converged;
      return res;
    }
  }
  res.status = SolveStatus::MaxIterations;
  return res;
}

/// ART baseline wrapped in the common result type.
inline SolveResult art_solve(const ProjectionOperator& op, const Sinogram& y,
                             std::size_t rounds = 5) {
  SolveResult res;
  res.x = pseudo_inverse(op, y, rounds);
  res.n_iters = rounds;
  res.status = SolveStatus::Converged;
  res.residual_Y = norm_Y(op, apply(op, res.x).data - y.data);
  return res;
}

}  // namespace inett
