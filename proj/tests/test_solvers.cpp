#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "inett/phantom.hpp"
#include "inett/solvers.hpp"

using namespace inett;

namespace {

// Phi(x) = 0 via a frozen 1x1 zero conv, so R(x) = a ||x||_2^2 exactly
Regularizer quadratic_regularizer(std::size_t n, double a) {
  NetworkSpec net;
  net.input_shape = {n, n, 1};
  LayerSpec conv;
  conv.kind = LayerKind::Conv;
  conv.kernel = "Kz";
  net.layers = {conv};
  ParamSet params;
  params.values["Kz"] = Tensor({1, 1, 1, 1});
  params.frozen.insert("Kz");
  return make_uniformly_convex(net, params, a);
}

NetworkSpec identity_net(std::size_t n) {
  NetworkSpec net;
  net.input_shape = {n, n, 1};
  LayerSpec id;
  id.kind = LayerKind::Identity;
  net.layers = {id};
  return net;
}

// sinogram values reordered by ray index (view-major)
std::vector<double> ray_order(const ProjectionOperator& op, const Tensor& sino) {
  std::vector<double> y(op.n_rays());
  for (std::size_t i = 0; i < op.n_rays(); ++i)
    y[i] = sino[(i % op.n_detectors()) * op.n_views() + i / op.n_detectors()];
  return y;
}

std::vector<double> gauss_solve(std::vector<std::vector<double>> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
    std::swap(A[col], A[piv]);
    std::swap(b[col], b[piv]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = A[r][col] / A[col][col];
      for (std::size_t c = col; c < n; ++c) A[r][c] -= f * A[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t ri = n; ri-- > 0;) {
    double s = b[ri];
    for (std::size_t c = ri + 1; c < n; ++c) s -= A[ri][c] * x[c];
    x[ri] = s / A[ri][ri];
  }
  return x;
}

}  // namespace

TEST_CASE("bregman distance of the quadratic regularizer") {
  Regularizer R = quadratic_regularizer(4, 0.5);
  Rng rng(1);
  Tensor x({4, 4, 1}), xhat({4, 4, 1});
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    xhat[i] = rng.normal();
  }
  Tensor xi = R.subgrad(xhat);
  for (std::size_t i = 0; i < xi.size(); ++i) REQUIRE(std::abs(xi[i] - xhat[i]) < 1e-14);
  const double b = bregman(R, x, xhat, xi);
  REQUIRE(std::abs(b - 0.5 * norm2_sq(x - xhat)) < 1e-12);
  REQUIRE(bregman(R, xhat, xhat, xi) == 0.0);
  REQUIRE_THROWS_AS(bregman(R, Tensor({2, 2, 1}), xhat, xi), DimensionError);
}

TEST_CASE("duality map identities") {
  Rng rng(2);
  Tensor y({8, 4});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();
  const std::size_t M = 32;
  Tensor jy = duality_J2(y, M);
  const double ny = norm2(y) / std::sqrt(static_cast<double>(M));
  REQUIRE(std::abs(dot(jy, y) - ny * ny) < 1e-12);
  // dual norm sqrt(M) ||.||_2 of J_2 y equals ||y||_Y
  REQUIRE(std::abs(std::sqrt(static_cast<double>(M)) * norm2(jy) - ny) < 1e-12);
}

TEST_CASE("scalar inner problem has the closed-form minimizer") {
  // one ray, one pixel: minimize (1/2)(f x - y)^2 + alpha (a x^2 - xi (x - xhat))
  ProjectionOperator op(1, 1, 1);
  const double f = 1.7;
  op.set_rows({{{0, f}}});
  const double a = 0.4, alpha = 0.25, yval = 2.0, xhat_val = 0.3;
  Regularizer R = quadratic_regularizer(1, a);
  Tensor y({1, 1}, {yval});
  Tensor xhat({1, 1, 1}, {xhat_val});
  Tensor xi = R.subgrad(xhat);  // 2 a xhat
  InnerGDConfig cfg;
  cfg.max_iters = 5000;
  cfg.grad_tol = 1e-12;
  std::size_t inner = 0;
  auto [xn, xi_new] = inett_step(op, R, y, xhat, xi, alpha, cfg, &inner);
  const double want = (f * yval + alpha * 2.0 * a * xhat_val) / (f * f + 2.0 * a * alpha);
  REQUIRE(std::abs(xn[0] - want) < 1e-8);
  // exact subgradient update
  const double want_xi = xi[0] - f * (f * xn[0] - yval) / alpha;
  REQUIRE(std::abs(xi_new[0] - want_xi) < 1e-12);
  REQUIRE(inner >= 1);
}

TEST_CASE("inner step returns an approximate stationary point") {
  const std::size_t n = 8;
  ProjectionOperator op = build_projector(n, 12, 6);
  Regularizer R = quadratic_regularizer(n, 1e-3);
  Tensor xstar = random_phantom(n, 3, 5, 3);
  Tensor y = apply(op, xstar).data;
  Tensor xhat({n, n, 1}, 1.0 / 64.0);
  Tensor xi = R.subgrad(xhat);
  const double alpha = 0.5;
  InnerGDConfig cfg;
  cfg.max_iters = 5000;
  cfg.grad_tol = 1e-10;
  auto [xn, xi_new] = inett_step(op, R, y, xhat, xi, alpha, cfg);
  // optimality transfers the inner gradient into the subgradient update:
  // xi_new is (up to the inner tolerance) a subgradient of R at x_n
  Tensor rg = R.subgrad(xn);
  REQUIRE(norm2(xi_new - rg) / (1.0 + norm2(rg)) < 1e-6);
}

TEST_CASE("inett solve honors the discrepancy principle") {
  const std::size_t n = 8;
  ProjectionOperator op = build_projector(n, 12, 6);
  Regularizer R = quadratic_regularizer(n, 1e-3);
  Tensor xstar = random_phantom(n, 3, 5, 4);
  Sinogram y = add_noise(op, apply(op, xstar), 0.05, 17);
  InettConfig cfg;
  cfg.inner.max_iters = 500;
  SolveResult res = inett_solve(op, R, y, y.delta, cfg);
  REQUIRE(res.status == SolveStatus::Converged);
  REQUIRE(res.residual_Y <= cfg.tau * y.delta);
  REQUIRE(res.history.size() == res.n_iters);
  for (std::size_t k = 0; k < res.history.size(); ++k) {
    const HistoryRow& row = res.history[k];
    REQUIRE(row.n == k + 1);
    REQUIRE(row.alpha == std::pow(2.0, -static_cast<double>(k + 1)));
    REQUIRE(row.bregman_step >= -1e-9);
    if (k + 1 < res.history.size()) REQUIRE(row.residual_Y > cfg.tau * y.delta);
  }
  REQUIRE(res.history.back().residual_Y == res.residual_Y);

  InettConfig bad = cfg;
  bad.tau = 1.0;
  REQUIRE_THROWS_AS(inett_solve(op, R, y, y.delta, bad), Error);
  REQUIRE_THROWS_AS(inett_solve(op, R, y, -1.0, cfg), Error);
}

TEST_CASE("inett with exact data hits the iteration cap") {
  const std::size_t n = 8;
  ProjectionOperator op = build_projector(n, 12, 6);
  Regularizer R = quadratic_regularizer(n, 1e-3);
  Sinogram y = apply(op, random_phantom(n, 3, 5, 5));
  InettConfig cfg;
  cfg.n_max = 3;
  cfg.inner.max_iters = 100;
  SolveResult res = inett_solve(op, R, y, 0.0, cfg);
  REQUIRE(res.status == SolveStatus::MaxIterations);
  REQUIRE(res.n_iters == 3);
}

TEST_CASE("one sit step matches the dense regularized solve") {
  const std::size_t n = 6, N = 36;
  ProjectionOperator op = build_projector(n, 8, 6);
  Tensor xstar = random_phantom(n, 2, 4, 6);
  Sinogram y = apply(op, xstar);

  SitConfig cfg;
  cfg.n_max = 1;
  SolveResult res = sit_solve(op, y, 0.0, cfg);
  REQUIRE(res.status == SolveStatus::MaxIterations);

  // dense oracle: x1 = x0 - (F^T F + 2 M alpha I)^{-1} F^T (F x0 - y)
  std::vector<std::vector<double>> A(N, std::vector<double>(N, 0.0));
  for (std::size_t i = 0; i < op.n_rays(); ++i)
    for (const auto& [j1, a1] : op.row(i))
      for (const auto& [j2, a2] : op.row(i)) A[j1][j2] += a1 * a2;
  const double shift = 2.0 * static_cast<double>(op.n_rays()) * 0.5;
  for (std::size_t j = 0; j < N; ++j) A[j][j] += shift;

  Tensor x0({n, n, 1}, 1.0 / static_cast<double>(N));
  std::vector<double> resid = ray_order(op, apply(op, x0).data - y.data);
  std::vector<double> rhs(N, 0.0);
  for (std::size_t i = 0; i < op.n_rays(); ++i)
    for (const auto& [j, a] : op.row(i)) rhs[j] += a * resid[i];
  std::vector<double> update = gauss_solve(A, rhs);
  for (std::size_t j = 0; j < N; ++j)
    REQUIRE(std::abs(res.x[j] - (x0[j] - update[j])) < 1e-8);
}

TEST_CASE("sit solve stops by the discrepancy principle") {
  const std::size_t n = 8;
  ProjectionOperator op = build_projector(n, 12, 6);
  Tensor xstar = random_phantom(n, 3, 5, 7);
  Sinogram y = add_noise(op, apply(op, xstar), 0.05, 23);
  SitConfig cfg;
  SolveResult res = sit_solve(op, y, y.delta, cfg);
  REQUIRE(res.status == SolveStatus::Converged);
  REQUIRE(res.residual_Y <= cfg.tau * y.delta);
  for (std::size_t k = 0; k + 1 < res.history.size(); ++k)
    REQUIRE(res.history[k].residual_Y > cfg.tau * y.delta);

  SitConfig bad = cfg;
  bad.tau = 0.9;
  REQUIRE_THROWS_AS(sit_solve(op, y, y.delta, bad), Error);
}

TEST_CASE("nett baseline matches the dense tikhonov solve") {
  const std::size_t n = 4, N = 16;
  ProjectionOperator op = build_projector(n, 6, 4);
  Tensor xstar = random_phantom(n, 2, 3, 8);
  Sinogram y = apply(op, xstar);
  NetworkSpec net = identity_net(n);  // penalty ||x||_2^2
  ParamSet params;
  NettConfig cfg;
  cfg.alpha = 0.05;
  cfg.inner.max_iters = 50000;
  cfg.inner.grad_tol = 1e-8;
  SolveResult res = nett_solve(op, net, params, y, cfg);
  REQUIRE(res.status == SolveStatus::Converged);

  // (F^T F / M + 2 alpha I) x = F^T y / M
  const double M = static_cast<double>(op.n_rays());
  std::vector<std::vector<double>> A(N, std::vector<double>(N, 0.0));
  for (std::size_t i = 0; i < op.n_rays(); ++i)
    for (const auto& [j1, a1] : op.row(i))
      for (const auto& [j2, a2] : op.row(i)) A[j1][j2] += a1 * a2 / M;
  for (std::size_t j = 0; j < N; ++j) A[j][j] += 2.0 * cfg.alpha;
  std::vector<double> yr = ray_order(op, y.data);
  std::vector<double> rhs(N, 0.0);
  for (std::size_t i = 0; i < op.n_rays(); ++i)
    for (const auto& [j, a] : op.row(i)) rhs[j] += a * yr[i] / M;
  std::vector<double> want = gauss_solve(A, rhs);
  for (std::size_t j = 0; j < N; ++j) REQUIRE(std::abs(res.x[j] - want[j]) < 1e-5);

  NettConfig bad = cfg;
  bad.alpha = 0.0;
  REQUIRE_THROWS_AS(nett_solve(op, net, params, y, bad), Error);
}

TEST_CASE("art solver wraps the pseudo inverse") {
  const std::size_t n = 8;
  ProjectionOperator op = build_projector(n, 12, 6);
  Sinogram y = apply(op, random_phantom(n, 3, 5, 9));
  SolveResult res = art_solve(op, y);
  Tensor want = pseudo_inverse(op, y);
  REQUIRE(res.status == SolveStatus::Converged);
  REQUIRE(res.n_iters == 5);
  for (std::size_t i = 0; i < want.size(); ++i) REQUIRE(res.x[i] == want[i]);
}
