#pragma once

#include <array>
#include <cmath>
#include <limits>

#include "olc/tensor.hpp"

// Non-learned image math: exposure normalization, triangle-weight fusion,
// mu-law tone mapping and fidelity metrics. Everything here is a pure
// function on immutable arrays.

namespace olc {

template <typename S>
struct LdrFrame {
  Tensor<S> pixels;    // H x W x 3, values in [0,1]
  S exposure_time = S(1);
  int exposure_stop = 0;

  void validate() const {
    check_arg(pixels.c == 3, "LdrFrame: expected 3 channels");
    check_arg(exposure_time > S(0), "LdrFrame: exposure time must be > 0");
    check_arg(pixels.min_value() >= S(0) && pixels.max_value() <= S(1),
              "LdrFrame: pixel values must lie in [0,1]");
  }
};

template <typename S>
struct HdrImage {
  Tensor<S> pixels;    // H x W x 3, linear radiance, >= 0

  void validate() const {
    check_arg(pixels.all_finite(), "HdrImage: non-finite values");
    check_arg(pixels.min_value() >= S(0), "HdrImage: negative radiance");
  }

  S peak() const { return pixels.max_value(); }

  void normalize_peak() {
    const S p = peak();
    if (p > S(0)) pixels.data /= p;
  }
};

template <typename S>
struct TriangleWeights {
  Tensor<S> alpha1, alpha2, alpha3;  // H x W x 1 each, values in [0,1]
};

template <typename S>
struct ToneMapParams {
  S mu = S(5000);
};

// Triangle basis over reference intensity, breakpoints at 0.5.
template <typename S>
S lambda1(S x) { return std::max(S(0), S(1) - S(2) * x); }
template <typename S>
S lambda2(S x) { return S(1) - std::abs(S(2) * x - S(1)); }
template <typename S>
S lambda3(S x) { return std::max(S(0), S(2) * x - S(1)); }

// pixels^gamma / t: maps an LDR frame into the linear HDR domain.
template <typename S>
HdrImage<S> gamma_normalize(const LdrFrame<S>& frame, S gamma = S(2.2)) {
  check_arg(gamma > S(0), "gamma_normalize: gamma must be positive");
  check_arg(frame.exposure_time > S(0),
            "gamma_normalize: exposure time must be positive");
  frame.validate();
  HdrImage<S> out;
  out.pixels = frame.pixels;
  out.pixels.data = out.pixels.data.pow(gamma) / frame.exposure_time;
  return out;
}

// Per-pixel weights from the reference frame. The RGB mean drives all three
// channels so weight boundaries do not introduce chroma shifts.
template <typename S>
TriangleWeights<S> triangle_weights(const LdrFrame<S>& reference) {
  reference.validate();
  const auto& p = reference.pixels;
  TriangleWeights<S> w;
  w.alpha1 = Tensor<S>(p.h, p.w, 1);
  w.alpha2 = Tensor<S>(p.h, p.w, 1);
  w.alpha3 = Tensor<S>(p.h, p.w, 1);
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x) {
      const S m = (p.at(y, x, 0) + p.at(y, x, 1) + p.at(y, x, 2)) / S(3);
      w.alpha1.at(y, x, 0) = S(1) - lambda1(m);
      w.alpha2.at(y, x, 0) = lambda2(m);
      w.alpha3.at(y, x, 0) = S(1) - lambda3(m);
    }
  return w;
}

// Weighted mean of gamma-normalized frames; weights come from the middle
// frame. With unclipped re-exposures of one radiance map this is exact.
template <typename S>
HdrImage<S> fuse_exposures(const std::array<LdrFrame<S>, 3>& frames,
                           S gamma = S(2.2)) {
  for (const auto& f : frames) f.validate();
  check_arg(frames[0].pixels.same_shape(frames[1].pixels) &&
                frames[1].pixels.same_shape(frames[2].pixels),
            "fuse_exposures: frame shape mismatch");
  check_arg(frames[0].exposure_time != frames[1].exposure_time &&
                frames[1].exposure_time != frames[2].exposure_time,
            "fuse_exposures: exposure times must be distinct");

  const TriangleWeights<S> w = triangle_weights(frames[1]);
  std::array<HdrImage<S>, 3> norm;
  for (int i = 0; i < 3; ++i) norm[i] = gamma_normalize(frames[i], gamma);

  const auto& p = frames[0].pixels;
  HdrImage<S> out;
  out.pixels = Tensor<S>(p.h, p.w, 3);
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x) {
      const S a1 = w.alpha1.at(y, x, 0);
      const S a2 = w.alpha2.at(y, x, 0);
      const S a3 = w.alpha3.at(y, x, 0);
      const S denom = a1 + a2 + a3;
      check_state(denom > S(0), "fuse_exposures: zero weight sum");
      for (int ch = 0; ch < 3; ++ch)
        out.pixels.at(y, x, ch) = (a1 * norm[0].pixels.at(y, x, ch) +
                                   a2 * norm[1].pixels.at(y, x, ch) +
                                   a3 * norm[2].pixels.at(y, x, ch)) /
                                  denom;
    }
  return out;
}

// mu-law tone map on [0,1]: log(1 + mu*h) / log(1 + mu).
template <typename S>
Tensor<S> tonemap(const Tensor<S>& h, const ToneMapParams<S>& params = {}) {
  check_arg(params.mu > S(0), "tonemap: mu must be positive");
  check_arg(h.size() == 0 || h.min_value() >= S(0),
            "tonemap: negative input");
  Tensor<S> out = h;
  const S denom = S(std::log1p(double(params.mu)));
  out.data = (S(1) + params.mu * out.data).log() / denom;
  return out;
}

template <typename S>
Tensor<S> tonemap(const HdrImage<S>& h, const ToneMapParams<S>& params = {}) {
  return tonemap(h.pixels, params);
}

// 10*log10(peak^2 / MSE); identical inputs give +infinity.
template <typename S>
S psnr(const Tensor<S>& a, const Tensor<S>& b, S peak = S(1)) {
  check_same_shape(a, b, "psnr");
  check_arg(peak > S(0), "psnr: peak must be positive");
  const S mse = S((a.data - b.data).square().sum() / double(a.size()));
  if (mse == S(0)) return std::numeric_limits<S>::infinity();
  return S(10) * std::log10(peak * peak / mse);
}

namespace detail {

// Separable 11x11 Gaussian (sigma 1.5), valid region only.
template <typename S>
Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> gaussian_filter_valid(
    const Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>& img, int radius,
    S sigma) {
  const int k = 2 * radius + 1;
  Eigen::Array<S, Eigen::Dynamic, 1> kernel(k);
  for (int i = 0; i < k; ++i) {
    const S d = S(i - radius);
    kernel[i] = std::exp(-(d * d) / (S(2) * sigma * sigma));
  }
  kernel /= kernel.sum();

  const int h = int(img.rows()), w = int(img.cols());
  check_arg(h >= k && w >= k, "ssim: image smaller than filter window");
  Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> tmp(h, w - k + 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + k <= w; ++x) {
      S acc = S(0);
      for (int i = 0; i < k; ++i) acc += img(y, x + i) * kernel[i];
      tmp(y, x) = acc;
    }
  Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> out(h - k + 1, w - k + 1);
  for (int y = 0; y + k <= h; ++y)
    for (int x = 0; x < tmp.cols(); ++x) {
      S acc = S(0);
      for (int i = 0; i < k; ++i) acc += tmp(y + i, x) * kernel[i];
      out(y, x) = acc;
    }
  return out;
}

template <typename S>
Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> channel_plane(
    const Tensor<S>& t, int ch) {
  Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> out(t.h, t.w);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x) out(y, x) = t.at(y, x, ch);
  return out;
}

}  // namespace detail

// Mean SSIM with the standard 11x11 / sigma 1.5 Gaussian window and
// stabilizers C1=(0.01L)^2, C2=(0.03L)^2 at L=1; channels averaged.
template <typename S>
S ssim(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "ssim");
  const S c1 = S(0.01) * S(0.01);
  const S c2 = S(0.03) * S(0.03);
  const int radius = 5;
  const S sigma = S(1.5);

  using Plane = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;
  S total = S(0);
  for (int ch = 0; ch < a.c; ++ch) {
    const Plane pa = detail::channel_plane(a, ch);
    const Plane pb = detail::channel_plane(b, ch);
    const Plane mu_a = detail::gaussian_filter_valid(pa, radius, sigma);
    const Plane mu_b = detail::gaussian_filter_valid(pb, radius, sigma);
    const Plane sa =
        detail::gaussian_filter_valid<S>((pa * pa).eval(), radius, sigma) -
        mu_a * mu_a;
    const Plane sb =
        detail::gaussian_filter_valid<S>((pb * pb).eval(), radius, sigma) -
        mu_b * mu_b;
    const Plane sab =
        detail::gaussian_filter_valid<S>((pa * pb).eval(), radius, sigma) -
        mu_a * mu_b;
    const Plane num = (S(2) * mu_a * mu_b + c1) * (S(2) * sab + c2);
    const Plane den = (mu_a * mu_a + mu_b * mu_b + c1) * (sa + sb + c2);
    total += (num / den).mean();
  }
  return total / S(a.c);
}

// Tone-mapped metric variants used for PSNR-mu / SSIM-mu reporting.
template <typename S>
S psnr_mu(const Tensor<S>& a, const Tensor<S>& b, S mu = S(5000)) {
  ToneMapParams<S> p{mu};
  Tensor<S> ca = a, cb = b;
  ca.data = ca.data.max(S(0)).min(S(1));
  cb.data = cb.data.max(S(0)).min(S(1));
  return psnr(tonemap(ca, p), tonemap(cb, p), S(1));
}

template <typename S>
S ssim_mu(const Tensor<S>& a, const Tensor<S>& b, S mu = S(5000)) {
  ToneMapParams<S> p{mu};
  Tensor<S> ca = a, cb = b;
  ca.data = ca.data.max(S(0)).min(S(1));
  cb.data = cb.data.max(S(0)).min(S(1));
  return ssim(tonemap(ca, p), tonemap(cb, p));
}

}  // namespace olc
