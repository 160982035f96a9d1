#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace inett {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

/// Dense row-major tensor of 64-bit floats. Images are H x W x C,
/// kernels f1 x f2 x Cin x Cout, flat vectors are rank-1.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)),
        data_(checked_size(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_size(shape_))
      throw DimensionError("tensor data length does not match shape");
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // H x W x C indexing
  double& at3(std::size_t i, std::size_t j, std::size_t c) {
    return data_[(i * shape_[1] + j) * shape_[2] + c];
  }
  double at3(std::size_t i, std::size_t j, std::size_t c) const {
    return data_[(i * shape_[1] + j) * shape_[2] + c];
  }
  // f1 x f2 x Cin x Cout indexing
  double& at4(std::size_t a, std::size_t b, std::size_t ci, std::size_t co) {
    return data_[((a * shape_[1] + b) * shape_[2] + ci) * shape_[3] + co];
  }
  double at4(std::size_t a, std::size_t b, std::size_t ci, std::size_t co) const {
    return data_[((a * shape_[1] + b) * shape_[2] + ci) * shape_[3] + co];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double c) {
    for (double& v : data_) v *= c;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double c) { return a *= c; }
  friend Tensor operator*(double c, Tensor a) { return a *= c; }

  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("zero tensor dimension");
      n *= d;
    }
    return n;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i)
      os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
  }

 private:
  void require_same_shape(const Tensor& o, const char* what) const {
    if (!same_shape(o))
      throw DimensionError(std::string("shape mismatch in ") + what + ": " +
                           shape_str() + " vs " + o.shape_str());
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline double dot(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw DimensionError("dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2_sq(const Tensor& a) { return dot(a, a); }

inline double norm2(const Tensor& a) { return std::sqrt(norm2_sq(a)); }

/// Per-edge nonnegative pad widths.
struct PadSpec {
  std::size_t top = 0, bottom = 0, left = 0, right = 0;

  static PadSpec uniform(std::size_t p) { return {p, p, p, p}; }
  std::size_t height() const { return top + bottom; }
  std::size_t width() const { return left + right; }
};

// ---- NIMG binary format ----
// magic "NIMG", u8 version=1, u8 ndims, ndims x u32 dims (LE), f64 data row-major.

namespace detail {
inline void put_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void put_f64le(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline double get_f64le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}
}  // namespace detail

inline void write_nimg(std::ostream& os, const Tensor& t) {
  os.write("NIMG", 4);
  os.put(static_cast<char>(1));
  os.put(static_cast<char>(t.ndim()));
  for (std::size_t d : t.shape()) detail::put_u32le(os, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < t.size(); ++i) detail::put_f64le(os, t[i]);
}

inline Tensor read_nimg(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "NIMG", 4) != 0)
    throw ParseError("bad NIMG magic at byte offset 0 (expected 'NIMG')");
  int version = is.get();
  if (version != 1)
    throw ParseError("unsupported NIMG version " + std::to_string(version) +
                     " at byte offset 4");
  int ndims = is.get();
  if (ndims <= 0 || ndims > 8)
    throw ParseError("bad NIMG ndims at byte offset 5");
  std::vector<std::size_t> shape(static_cast<std::size_t>(ndims));
  for (auto& d : shape) d = detail::get_u32le(is);
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = detail::get_f64le(is);
  if (!is) throw ParseError("truncated NIMG payload");
  return t;
}

inline void save_nimg(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  write_nimg(os, t);
}

inline Tensor load_nimg(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open: " + path);
  return read_nimg(is);
}

}  // namespace inett
