#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "inett/metrics.hpp"
#include "inett/phantom.hpp"
#include "inett/rng.hpp"

using namespace inett;

TEST_CASE("mse basics and loop oracle") {
  Tensor a({2, 2, 1}, {1.0, 2.0, 3.0, 4.0});
  REQUIRE(mse(a, a) == 0.0);
  Tensor b({2, 2, 1}, {1.0, 2.0, 3.0, 6.0});
  REQUIRE(std::abs(mse(a, b) - 1.0) < 1e-15);

  Rng rng(1);
  Tensor x({8, 8, 1}), y({8, 8, 1});
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    y[i] = rng.normal();
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
  REQUIRE(std::abs(mse(x, y) - acc / 64.0) < 1e-14);

  REQUIRE_THROWS_AS(mse(a, Tensor({3, 3, 1})), DimensionError);
}

TEST_CASE("psnr closed forms") {
  // reference range 1, uniform error 0.1 -> mse 0.01 -> 20 dB
  Tensor ref({4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) ref[i] = static_cast<double>(i % 2);
  Tensor x = ref;
  for (std::size_t i = 0; i < 16; ++i) x[i] += 0.1;
  REQUIRE(std::abs(psnr(x, ref) - 20.0) < 1e-12);

  // joint rescaling leaves psnr unchanged (peak and error scale together)
  Tensor ref2 = ref * 3.0, x2 = x * 3.0;
  REQUIRE(std::abs(psnr(x2, ref2) - psnr(x, ref)) < 1e-12);

  REQUIRE(std::isinf(psnr(ref, ref)));
  REQUIRE(psnr(ref, ref) > 0.0);
  Tensor flat({4, 4, 1}, 0.5);
  REQUIRE(psnr(x, flat) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("psnr decreases along a noise ladder") {
  Tensor ref = random_phantom(32, 3, 6, 2);
  Rng rng(3);
  Tensor noise({32, 32, 1});
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
  double prev = std::numeric_limits<double>::infinity();
  for (double level : {0.01, 0.02, 0.05, 0.1}) {
    const double p = psnr(ref + noise * level, ref);
    REQUIRE(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim of identical images is 1") {
  Tensor img = random_phantom(32, 3, 6, 4);
  REQUIRE(std::abs(ssim(img, img) - 1.0) < 1e-12);
  Tensor flat({16, 16, 1}, 0.3);
  REQUIRE(std::abs(ssim(flat, flat) - 1.0) < 1e-12);
}

TEST_CASE("ssim drops for degraded images") {
  Tensor ref = random_phantom(32, 3, 6, 5);
  Rng rng(6);
  Tensor noisy = ref;
  for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] += 0.2 * rng.normal();
  const double s = ssim(noisy, ref);
  REQUIRE(s < 0.9);
  REQUIRE(s > -1.0);
  REQUIRE(s <= 1.0);
}

TEST_CASE("symmetric-range ssim is symmetric in its arguments") {
  Tensor a = random_phantom(24, 3, 6, 7);
  Rng rng(8);
  Tensor b = a;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += 0.1 * rng.normal();
  SsimOptions opt;
  opt.symmetric_range = true;
  REQUIRE(std::abs(ssim(a, b, opt) - ssim(b, a, opt)) < 1e-14);
}

TEST_CASE("symmetric-range ssim is invariant under joint scaling") {
  Tensor a = random_phantom(24, 3, 6, 9);
  Rng rng(10);
  Tensor b = a;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += 0.05 * rng.normal();
  SsimOptions opt;
  opt.symmetric_range = true;
  REQUIRE(std::abs(ssim(a * 4.0, b * 4.0, opt) - ssim(a, b, opt)) < 1e-10);
}

TEST_CASE("ssim rejects images smaller than the window") {
  Tensor tiny({8, 8, 1}, 0.1);
  REQUIRE_THROWS_AS(ssim(tiny, tiny), DimensionError);
  SsimOptions opt;
  opt.window = 7;
  REQUIRE_NOTHROW(ssim(tiny, tiny, opt));
}

TEST_CASE("gaussian window normalizes and peaks in the center") {
  auto w = detail_metrics::gaussian_window(11, 1.5);
  double sum = 0.0;
  for (double v : w) sum += v;
  REQUIRE(std::abs(sum - 1.0) < 1e-12);
  for (double v : w) REQUIRE(w[5 * 11 + 5] >= v);
  // symmetric
  REQUIRE(w[0] == w[10 * 11 + 10]);
  REQUIRE(w[5 * 11 + 0] == w[5 * 11 + 10]);
}
