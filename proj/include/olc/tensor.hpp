#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace olc {

using Rng = std::mt19937_64;

inline void check_arg(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

inline void check_state(bool ok, const std::string& msg) {
  if (!ok) throw std::runtime_error(msg);
}

// Dense H x W x C grid, row-major with the channel index fastest.
// Flat index: (y * w + x) * c + ch.
template <typename S>
struct Tensor {
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
  using MatrixRM =
      Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  int h = 0, w = 0, c = 0;
  Array data;

  Tensor() = default;
  Tensor(int h_, int w_, int c_)
      : h(h_), w(w_), c(c_), data(Array::Zero(std::int64_t(h_) * w_ * c_)) {
    check_arg(h_ >= 0 && w_ >= 0 && c_ >= 0, "Tensor: negative dimension");
  }

  static Tensor zeros(int h, int w, int c) { return Tensor(h, w, c); }

  static Tensor full(int h, int w, int c, S value) {
    Tensor t(h, w, c);
    t.data.setConstant(value);
    return t;
  }

  static Tensor scalar(S value) { return full(1, 1, 1, value); }

  template <typename Rng>
  static Tensor uniform(int h, int w, int c, Rng& rng, S lo, S hi) {
    Tensor t(h, w, c);
    std::uniform_real_distribution<double> d{double(lo), double(hi)};
    for (std::int64_t i = 0; i < t.size(); ++i) t.data[i] = S(d(rng));
    return t;
  }

  template <typename Rng>
  static Tensor gaussian(int h, int w, int c, Rng& rng, S mean, S stddev) {
    Tensor t(h, w, c);
    std::normal_distribution<double> d{double(mean), double(stddev)};
    for (std::int64_t i = 0; i < t.size(); ++i) t.data[i] = S(d(rng));
    return t;
  }

  std::int64_t size() const { return data.size(); }
  bool empty() const { return data.size() == 0; }

  bool same_shape(const Tensor& o) const {
    return h == o.h && w == o.w && c == o.c;
  }

  std::string shape_str() const {
    return std::to_string(h) + "x" + std::to_string(w) + "x" +
           std::to_string(c);
  }

  std::int64_t index(int y, int x, int ch) const {
    return (std::int64_t(y) * w + x) * c + ch;
  }

  S& at(int y, int x, int ch) { return data[index(y, x, ch)]; }
  S at(int y, int x, int ch) const { return data[index(y, x, ch)]; }

  // Pixels-as-rows view: (h*w) x c, row-major. Shares storage.
  Eigen::Map<MatrixRM> mat() {
    return Eigen::Map<MatrixRM>(data.data(), std::int64_t(h) * w, c);
  }
  Eigen::Map<const MatrixRM> mat() const {
    return Eigen::Map<const MatrixRM>(data.data(), std::int64_t(h) * w, c);
  }

  bool all_finite() const { return data.isFinite().all(); }

  S min_value() const { return data.size() ? data.minCoeff() : S(0); }
  S max_value() const { return data.size() ? data.maxCoeff() : S(0); }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.h = h;
    out.w = w;
    out.c = c;
    out.data = data.template cast<T>();
    return out;
  }
};

template <typename S>
Tensor<S> zeros_like(const Tensor<S>& t) {
  return Tensor<S>(t.h, t.w, t.c);
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b,
                      const std::string& who) {
  check_arg(a.same_shape(b),
            who + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace olc
