// Dense N-dimensional tensors with separate real/imaginary planes.
//
// A Tensor<T> is real when its imaginary plane is empty and complex
// otherwise. Both planes always share the same shape. Keeping the planes
// separate (rather than interleaving scalars) lets complex convolutions be
// expressed as four real convolutions and lets real-valued network stages
// ignore the imaginary plane entirely.

#pragma once

#include <algorithm>
#include <complex>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mimorx {

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> re;
  std::vector<T> im;  // empty for real tensors

  Tensor() = default;

  bool is_complex() const { return !im.empty(); }
  int64_t numel() const { return shape_numel(shape); }
  int rank() const { return static_cast<int>(shape.size()); }

  int dim(int i) const {
    if (i < 0 || i >= rank()) throw ShapeError("dim index out of range");
    return shape[static_cast<size_t>(i)];
  }

  static Tensor real(Shape s) {
    Tensor t;
    t.shape = std::move(s);
    t.re.assign(static_cast<size_t>(t.numel()), T(0));
    return t;
  }

  static Tensor complex(Shape s) {
    Tensor t;
    t.shape = std::move(s);
    t.re.assign(static_cast<size_t>(t.numel()), T(0));
    t.im.assign(static_cast<size_t>(t.numel()), T(0));
    return t;
  }

  static Tensor like(const Tensor& other) {
    return other.is_complex() ? complex(other.shape) : real(other.shape);
  }

  static Tensor scalar(T v) {
    Tensor t = real({});
    t.re[0] = v;
    return t;
  }

  std::complex<T> cval(int64_t i) const {
    return {re[static_cast<size_t>(i)], im.empty() ? T(0) : im[static_cast<size_t>(i)]};
  }

  void set(int64_t i, std::complex<T> v) {
    re[static_cast<size_t>(i)] = v.real();
    if (!im.empty()) im[static_cast<size_t>(i)] = v.imag();
    else if (v.imag() != T(0)) throw ShapeError("imaginary write to real tensor");
  }

  void fill(T r, T i = T(0)) {
    std::fill(re.begin(), re.end(), r);
    if (!im.empty()) std::fill(im.begin(), im.end(), i);
  }

  bool all_finite() const {
    auto ok = [](const std::vector<T>& v) {
      return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
    };
    return ok(re) && ok(im);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.re.assign(re.begin(), re.end());
    out.im.assign(im.begin(), im.end());
    return out;
  }
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

// Row-major offset helpers for the grid layouts used throughout:
// activations are [F, S, C] with the channel index contiguous.
inline int64_t offset3(const Shape& s, int i, int j, int c) {
  return (static_cast<int64_t>(i) * s[1] + j) * s[2] + c;
}

inline int64_t offset4(const Shape& s, int i, int j, int a, int b) {
  return ((static_cast<int64_t>(i) * s[1] + j) * s[2] + a) * s[3] + b;
}

}  // namespace mimorx
