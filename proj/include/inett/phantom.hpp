#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "inett/rng.hpp"
#include "inett/tensor.hpp"

namespace inett {

/// One additive ellipse in [-1,1]^2 coordinates.
struct EllipseSpec {
  double cx = 0.0, cy = 0.0;
  double ra = 0.1, rb = 0.1;
  double angle = 0.0;
  double value = 1.0;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    return (u * u) / (ra * ra) + (v * v) / (rb * rb) <= 1.0;
  }
};

/// Pixel membership by pixel-center test; intensities of overlapping ellipses
/// add, then the image is clipped at 0 and rescaled to max 1.
inline Tensor rasterize(const std::vector<EllipseSpec>& ellipses, std::size_t n) {
  Tensor img({n, n, 1});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
      const double y = 1.0 - (static_cast<double>(r) + 0.5) / static_cast<double>(n) * 2.0;
      double v = 0.0;
      for (const EllipseSpec& e : ellipses)
        if (e.contains(x, y)) v += e.value;
      img.at3(r, c, 0) = std::max(0.0, v);
    }
  double mx = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) mx = std::max(mx, img[i]);
  if (mx > 0.0)
    for (std::size_t i = 0; i < img.size(); ++i) img[i] /= mx;
  return img;
}

/// Draw parameters: centers uniform in the disk of radius 0.6, semi-axes
/// uniform [0.05, 0.4], rotation uniform [0, pi), intensity uniform [0.2, 1].
inline std::vector<EllipseSpec> random_ellipses(std::size_t k, Rng& rng) {
  std::vector<EllipseSpec> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    EllipseSpec e;
    // rejection sampling inside the disk of radius 0.6
    for (;;) {
      e.cx = rng.uniform(-0.6, 0.6);
      e.cy = rng.uniform(-0.6, 0.6);
      if (e.cx * e.cx + e.cy * e.cy <= 0.36) break;
    }
    e.ra = rng.uniform(0.05, 0.4);
    e.rb = rng.uniform(0.05, 0.4);
    e.angle = rng.uniform(0.0, 3.14159265358979323846);
    e.value = rng.uniform(0.2, 1.0);
    out.push_back(e);
  }
  return out;
}

inline Tensor random_phantom(std::size_t n, std::size_t k_min, std::size_t k_max,
                             std::uint64_t seed) {
  if (n < 1) throw Error("random_phantom: n must be >= 1");
  Rng rng(seed);
  const std::size_t k =
      k_max >= k_min ? static_cast<std::size_t>(rng.uniform_int(k_min, k_max)) : k_min;
  return rasterize(random_ellipses(k, rng), n);
}

// ---- binary PGM (P5) ----

inline void save_pgm(const std::string& path, const Tensor& img) {
  if (img.ndim() != 3 || img.dim(2) != 1)
    throw DimensionError("save_pgm: expected H x W x 1 image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  double lo = img[0], hi = img[0];
  for (std::size_t i = 0; i < img.size(); ++i) {
    lo = std::min(lo, img[i]);
    hi = std::max(hi, img[i]);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  os << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
  for (std::size_t i = 0; i < img.size(); ++i) {
    const int v = static_cast<int>(std::lround((img[i] - lo) / span * 255.0));
    os.put(static_cast<char>(std::clamp(v, 0, 255)));
  }
}

inline Tensor load_pgm(std::istream& is) {
  std::string magic;
  is >> magic;
  if (magic != "P5")
    throw ParseError("bad PGM magic at byte offset 0 (expected 'P5', got '" + magic + "')");
  auto next_token = [&is]() {
    // skip whitespace and '#' comments
    for (;;) {
      int c = is.peek();
      if (c == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(c)) {
        is.get();
      } else {
        break;
      }
    }
    long v;
    if (!(is >> v) || v < 0) throw ParseError("bad PGM header value near byte offset " +
                                              std::to_string(is.tellg()));
    return static_cast<std::size_t>(v);
  };
  const std::size_t w = next_token();
  const std::size_t h = next_token();
  const std::size_t maxval = next_token();
  if (maxval == 0 || maxval > 255) throw ParseError("unsupported PGM maxval");
  is.get();  // single whitespace before payload
  Tensor img({h, w, 1});
  for (std::size_t i = 0; i < img.size(); ++i) {
    const int c = is.get();
    if (c < 0) throw ParseError("truncated PGM payload at byte offset " +
                                std::to_string(is.tellg()));
    img[i] = static_cast<double>(c) / static_cast<double>(maxval);
  }
  return img;
}

/// Loads NIMG or 8-bit binary PGM, dispatching on the magic bytes. PGM pixel
/// values are scaled to [0,1].
inline Tensor load_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open: " + path);
  char magic[2] = {0, 0};
  is.read(magic, 2);
  is.seekg(0);
  if (magic[0] == 'N' && magic[1] == 'I') return read_nimg(is);
  if (magic[0] == 'P' && magic[1] == '5') return load_pgm(is);
  throw ParseError("unrecognized image magic at byte offset 0 in " + path +
                   " (expected 'NIMG' or 'P5')");
}

}  // namespace inett
