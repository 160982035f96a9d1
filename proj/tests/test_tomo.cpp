#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "inett/phantom.hpp"
#include "inett/tomo.hpp"

using namespace inett;

namespace {

Tensor random_image(std::size_t n, Rng& rng) {
  Tensor t({n, n, 1});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("axis-aligned ray crosses each pixel with length 1") {
  // vertical line x = -1.5 through a 4x4 unit grid centered at the origin
  auto row = detail_tomo::trace_ray(4, -1.5, 0.0);
  REQUIRE(row.size() == 4);
  double total = 0.0;
  for (const auto& [j, len] : row) {
    REQUIRE(std::abs(len - 1.0) < 1e-9);
    REQUIRE(j % 4 == 0);  // all in the leftmost column
    total += len;
  }
  REQUIRE(std::abs(total - 4.0) < 1e-9);

  // horizontal line y = 0.5 (phi = pi/2)
  auto hrow = detail_tomo::trace_ray(4, 0.5, 3.14159265358979323846 / 2.0);
  REQUIRE(hrow.size() == 4);
  for (const auto& [j, len] : hrow) REQUIRE(std::abs(len - 1.0) < 1e-9);
}

TEST_CASE("ray missing the grid yields an empty row") {
  auto row = detail_tomo::trace_ray(4, 10.0, 0.3);
  REQUIRE(row.empty());
}

TEST_CASE("projector row count and row support bounds") {
  ProjectionOperator op = build_projector(64, 64, 30);
  REQUIRE(op.n_rays() == 1920);
  for (std::size_t i = 0; i < op.n_rays(); ++i) {
    REQUIRE(op.row(i).size() <= 2 * 64);
    for (const auto& [j, a] : op.row(i)) {
      REQUIRE(a >= 0.0);
      REQUIRE(j < 64 * 64);
    }
  }
}

TEST_CASE("apply of zero and of nonnegative images") {
  ProjectionOperator op = build_projector(8, 8, 4);
  Sinogram y0 = apply(op, Tensor({8, 8, 1}));
  for (std::size_t i = 0; i < y0.data.size(); ++i) REQUIRE(y0.data[i] == 0.0);
  Rng rng(1);
  Sinogram y = apply(op, random_image(8, rng));
  for (std::size_t i = 0; i < y.data.size(); ++i) REQUIRE(y.data[i] >= 0.0);
}

TEST_CASE("adjoint identity holds to 1e-10") {
  ProjectionOperator op = build_projector(8, 10, 6);
  Rng rng(2);
  Tensor x = random_image(8, rng);
  Tensor y({10, 6});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();
  Sinogram fx = apply(op, x);
  Tensor fty = apply_adjoint(op, Sinogram{y});
  REQUIRE(std::abs(dot(fx.data, y) - dot(x, fty)) < 1e-10);
}

TEST_CASE("apply matches the dense materialized operator") {
  ProjectionOperator op = build_projector(8, 8, 5);
  Rng rng(3);
  Tensor x = random_image(8, rng);
  Sinogram y = apply(op, x);
  for (std::size_t i = 0; i < op.n_rays(); ++i) {
    double s = 0.0;
    for (const auto& [j, a] : op.row(i)) s += a * x[j];
    const std::size_t view = i / op.n_detectors();
    const std::size_t det = i % op.n_detectors();
    REQUIRE(std::abs(y.data[det * op.n_views() + view] - s) < 1e-12);
  }
  REQUIRE_THROWS_AS(apply(op, Tensor({7, 7, 1})), DimensionError);
}

TEST_CASE("centered disk sinogram matches the analytic chord length") {
  const std::size_t n = 64;
  const double R = 20.0;
  Tensor disk({n, n, 1});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      // pixel centers in the grid coordinates of the projector: [-n/2, n/2]
      const double x = static_cast<double>(c) + 0.5 - static_cast<double>(n) / 2.0;
      const double y = static_cast<double>(n) / 2.0 - 0.5 - static_cast<double>(r);
      if (x * x + y * y <= R * R) disk.at3(r, c, 0) = 1.0;
    }
  ProjectionOperator op = build_projector(n, 64, 30);
  Sinogram sino = apply(op, disk);
  const double diag = static_cast<double>(n) * std::sqrt(2.0);
  const double spacing = diag / 64.0;
  double err_sq = 0.0, ref_sq = 0.0;
  for (std::size_t v = 0; v < 30; ++v)
    for (std::size_t k = 0; k < 64; ++k) {
      const double s = -diag / 2.0 + (static_cast<double>(k) + 0.5) * spacing;
      const double chord = s * s < R * R ? 2.0 * std::sqrt(R * R - s * s) : 0.0;
      const double got = sino.data[k * 30 + v];
      err_sq += (got - chord) * (got - chord);
      ref_sq += chord * chord;
    }
  REQUIRE(std::sqrt(err_sq / ref_sq) < 0.02);
}

TEST_CASE("mass consistency for an axis-aligned view") {
  const std::size_t n = 16;
  Rng rng(4);
  Tensor x = random_image(n, rng);
  // fine detector pitch so the quadrature sum resolves the line integrals
  const std::size_t n_det = 1024;
  ProjectionOperator op = build_projector(n, n_det, 1);  // single view phi = 0
  Sinogram y = apply(op, x);
  const double spacing = static_cast<double>(n) * std::sqrt(2.0) / n_det;
  double col = 0.0, mass = 0.0;
  for (std::size_t k = 0; k < n_det; ++k) col += y.data[k * 1 + 0];
  for (std::size_t i = 0; i < x.size(); ++i) mass += x[i];
  REQUIRE(std::abs(col * spacing - mass) / mass < 0.01);
}

TEST_CASE("normalized data norm") {
  ProjectionOperator op = build_projector(8, 8, 4);  // M = 32
  Tensor ones({8, 4}, 1.0);
  REQUIRE(std::abs(norm_Y(op, ones) - 1.0) < 1e-12);
  Rng rng(5);
  Tensor y({8, 4});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();
  REQUIRE(std::abs(norm_Y(op, y * 3.0) - 3.0 * norm_Y(op, y)) < 1e-12);
  REQUIRE(std::abs(norm_Y(op, y) - norm2(y) / std::sqrt(32.0)) < 1e-14);
}

TEST_CASE("noise model records delta exactly") {
  ProjectionOperator op = build_projector(16, 16, 8);
  Rng rng(6);
  Sinogram y = apply(op, random_image(16, rng));
  Sinogram clean = add_noise(op, y, 0.0, 99);
  REQUIRE(clean.delta == 0.0);
  for (std::size_t i = 0; i < y.data.size(); ++i) REQUIRE(clean.data[i] == y.data[i]);

  Sinogram noisy = add_noise(op, y, 0.05, 100);
  REQUIRE(noisy.delta > 0.0);
  REQUIRE(std::abs(noisy.delta - norm_Y(op, noisy.data - y.data)) < 1e-15);
  REQUIRE_THROWS_AS(add_noise(op, y, -0.1, 1), Error);
}

TEST_CASE("relative noise has roughly the requested level") {
  ProjectionOperator op = build_projector(32, 64, 60);  // M = 3840
  Tensor x({32, 32, 1}, 1.0);
  Sinogram y = apply(op, x);
  Sinogram noisy = add_noise(op, y, 0.05, 7);
  double sum_sq = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    if (y.data[i] < 1.0) continue;  // skip rays barely touching the image
    const double rel = (noisy.data[i] - y.data[i]) / y.data[i];
    sum_sq += rel * rel;
    ++count;
  }
  const double stdev = std::sqrt(sum_sq / static_cast<double>(count));
  REQUIRE(std::abs(stdev - 0.05) / 0.05 < 0.10);
}

TEST_CASE("one kaczmarz update solves a single equation") {
  ProjectionOperator op(2, 1, 1);
  op.set_rows({{{0, 1.0}, {1, 2.0}}});  // a = (1,2,0,0) on a 2x2 image
  Sinogram y{Tensor({1, 1}, {5.0})};
  Tensor x0({2, 2, 1}, {1.0, 1.0, 0.0, 0.0});
  Tensor x1 = art_sweep(op, y, x0);
  double ax = x1[0] * 1.0 + x1[1] * 2.0;
  REQUIRE(std::abs(ax - 5.0) < 1e-12);
}

TEST_CASE("kaczmarz converges on a consistent overdetermined system") {
  const std::size_t n = 16;
  ProjectionOperator op = build_projector(n, 24, 12);  // M = 288 > N = 256
  Rng rng(8);
  Tensor xstar = random_image(n, rng);
  Sinogram y = apply(op, xstar);
  Tensor x({n, n, 1}, 1.0 / 256.0);
  double prev_err = norm2(x - xstar);
  const double res0 = norm_Y(op, apply(op, x).data - y.data);
  for (int sweep = 0; sweep < 200; ++sweep) {
    x = art_sweep(op, y, std::move(x));
    const double err = norm2(x - xstar);
    REQUIRE(err <= prev_err + 1e-12);  // orthogonal projections never move away
    prev_err = err;
  }
  // the residual drops by an order of magnitude well before full convergence
  REQUIRE(norm_Y(op, apply(op, x).data - y.data) < 0.1 * res0);
}

TEST_CASE("pseudo_inverse runs five sweeps from the flat start") {
  const std::size_t n = 8;
  ProjectionOperator op = build_projector(n, 12, 6);
  Rng rng(9);
  Tensor xstar = random_image(n, rng);
  Sinogram y = apply(op, xstar);
  Tensor via_api = pseudo_inverse(op, y);
  Tensor manual({n, n, 1}, 1.0 / 64.0);
  for (int i = 0; i < 5; ++i) manual = art_sweep(op, y, std::move(manual));
  for (std::size_t i = 0; i < manual.size(); ++i) REQUIRE(via_api[i] == manual[i]);
}
