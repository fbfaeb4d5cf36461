#pragma once

#include <cmath>

#include "olc/ops.hpp"

// Spatial ops: dense convolution (im2col + GEMM), deformable convolution
// with bilinear sampling, nearest upsampling and global average pooling.

namespace olc {

namespace detail {

template <typename S>
inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <typename S>
void im2col(const Tensor<S>& x, int k, int stride, int pad,
            typename Tensor<S>::MatrixRM& col) {
  const int ho = conv_out_dim<S>(x.h, k, stride, pad);
  const int wo = conv_out_dim<S>(x.w, k, stride, pad);
  col.setZero(std::int64_t(ho) * wo, std::int64_t(k) * k * x.c);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      const std::int64_t row = std::int64_t(oy) * wo + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= x.h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= x.w) continue;
          const std::int64_t cbase = (std::int64_t(ky) * k + kx) * x.c;
          for (int ci = 0; ci < x.c; ++ci)
            col(row, cbase + ci) = x.at(iy, ix, ci);
        }
      }
    }
}

template <typename S>
void col2im_add(const typename Tensor<S>::MatrixRM& col, int k, int stride,
                int pad, Tensor<S>& gx) {
  const int ho = conv_out_dim<S>(gx.h, k, stride, pad);
  const int wo = conv_out_dim<S>(gx.w, k, stride, pad);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      const std::int64_t row = std::int64_t(oy) * wo + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= gx.h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= gx.w) continue;
          const std::int64_t cbase = (std::int64_t(ky) * k + kx) * gx.c;
          for (int ci = 0; ci < gx.c; ++ci)
            gx.at(iy, ix, ci) += col(row, cbase + ci);
        }
      }
    }
}

// Zero outside the image, matching the usual deformable-conv convention.
template <typename S>
S bilinear_sample(const Tensor<S>& x, int ch, S py, S px) {
  if (py <= S(-1) || py >= S(x.h) || px <= S(-1) || px >= S(x.w)) return S(0);
  const int y0 = int(std::floor(py));
  const int x0 = int(std::floor(px));
  const int y1 = y0 + 1, x1 = x0 + 1;
  const S ly = py - S(y0), lx = px - S(x0);
  const S hy = S(1) - ly, hx = S(1) - lx;
  S v00 = 0, v01 = 0, v10 = 0, v11 = 0;
  if (y0 >= 0 && x0 >= 0) v00 = x.at(y0, x0, ch);
  if (y0 >= 0 && x1 < x.w) v01 = x.at(y0, x1, ch);
  if (y1 < x.h && x0 >= 0) v10 = x.at(y1, x0, ch);
  if (y1 < x.h && x1 < x.w) v11 = x.at(y1, x1, ch);
  return hy * hx * v00 + hy * lx * v01 + ly * hx * v10 + ly * lx * v11;
}

template <typename S>
void bilinear_scatter(Tensor<S>& gx, int ch, S py, S px, S g) {
  if (py <= S(-1) || py >= S(gx.h) || px <= S(-1) || px >= S(gx.w)) return;
  const int y0 = int(std::floor(py));
  const int x0 = int(std::floor(px));
  const int y1 = y0 + 1, x1 = x0 + 1;
  const S ly = py - S(y0), lx = px - S(x0);
  const S hy = S(1) - ly, hx = S(1) - lx;
  if (y0 >= 0 && x0 >= 0) gx.at(y0, x0, ch) += g * hy * hx;
  if (y0 >= 0 && x1 < gx.w) gx.at(y0, x1, ch) += g * hy * lx;
  if (y1 < gx.h && x0 >= 0) gx.at(y1, x0, ch) += g * ly * hx;
  if (y1 < gx.h && x1 < gx.w) gx.at(y1, x1, ch) += g * ly * lx;
}

// d(sample)/d(coordinate) for one direction, values outside treated as zero.
template <typename S>
S bilinear_coord_grad(const Tensor<S>& x, int ch, S py, S px, bool y_dir) {
  if (py <= S(-1) || py >= S(x.h) || px <= S(-1) || px >= S(x.w)) return S(0);
  const int y0 = int(std::floor(py));
  const int x0 = int(std::floor(px));
  const int y1 = y0 + 1, x1 = x0 + 1;
  S v00 = 0, v01 = 0, v10 = 0, v11 = 0;
  if (y0 >= 0 && x0 >= 0) v00 = x.at(y0, x0, ch);
  if (y0 >= 0 && x1 < x.w) v01 = x.at(y0, x1, ch);
  if (y1 < x.h && x0 >= 0) v10 = x.at(y1, x0, ch);
  if (y1 < x.h && x1 < x.w) v11 = x.at(y1, x1, ch);
  if (y_dir) {
    const S lx = px - S(x0);
    return lx * (v11 - v01) + (S(1) - lx) * (v10 - v00);
  }
  const S ly = py - S(y0);
  return ly * (v11 - v10) + (S(1) - ly) * (v01 - v00);
}

template <typename S>
void deform_im2col(const Tensor<S>& x, const Tensor<S>& off, int groups,
                   typename Tensor<S>::MatrixRM& col) {
  const int k = 3;
  const int cpg = x.c / groups;
  col.resize(std::int64_t(x.h) * x.w, std::int64_t(k) * k * x.c);
  for (int oy = 0; oy < x.h; ++oy)
    for (int ox = 0; ox < x.w; ++ox) {
      const std::int64_t row = std::int64_t(oy) * x.w + ox;
      for (int kk = 0; kk < k * k; ++kk) {
        const int ky = kk / k, kx = kk % k;
        for (int g = 0; g < groups; ++g) {
          const S dy = off.at(oy, ox, (g * k * k + kk) * 2 + 0);
          const S dx = off.at(oy, ox, (g * k * k + kk) * 2 + 1);
          const S py = S(oy + ky - 1) + dy;
          const S px = S(ox + kx - 1) + dx;
          for (int ci = g * cpg; ci < (g + 1) * cpg; ++ci)
            col(row, std::int64_t(kk) * x.c + ci) =
                bilinear_sample(x, ci, py, px);
        }
      }
    }
}

}  // namespace detail

// Dense square convolution. Weight layout (k,k,cin*cout) maps to the
// (k*k*cin) x cout GEMM operand; bias is (1,1,cout).
template <typename S>
Var conv2d(Tape<S>& t, Var x, Var w, Var b, int cin, int cout, int k,
           int stride, int pad) {
  const auto& X = t.val(x);
  const auto& W = t.val(w);
  check_arg(X.c == cin, "conv2d: input channel mismatch");
  check_arg(W.h == k && W.w == k && W.c == cin * cout,
            "conv2d: weight shape mismatch");
  check_arg(t.val(b).c == cout, "conv2d: bias shape mismatch");
  const int ho = detail::conv_out_dim<S>(X.h, k, stride, pad);
  const int wo = detail::conv_out_dim<S>(X.w, k, stride, pad);
  check_arg(ho > 0 && wo > 0, "conv2d: input smaller than kernel");

  using M = typename Tensor<S>::MatrixRM;
  M col;
  detail::im2col(X, k, stride, pad, col);
  Eigen::Map<const M> wm(W.data.data(), std::int64_t(k) * k * cin, cout);
  Tensor<S> out(ho, wo, cout);
  out.mat().noalias() = col * wm;
  out.mat().rowwise() += t.val(b).mat().row(0);

  Var o = t.push(std::move(out), any_grad(t, {x, w, b}));
  if (t.needs_grad(o)) {
    int xi = x.i, wi = w.i, bi = b.i, oi = o.i;
    t.set_back(o, [xi, wi, bi, oi, cin, cout, k, stride, pad](Tape<S>& tp) {
      const auto& g = tp.grad(Var{oi});
      const auto& X2 = tp.val(Var{xi});
      const auto& W2 = tp.val(Var{wi});
      Eigen::Map<const M> gm(g.data.data(), std::int64_t(g.h) * g.w, cout);
      if (tp.needs_grad(Var{bi})) {
        auto& gb = tp.grad(Var{bi});
        gb.mat().row(0) += gm.colwise().sum();
      }
      if (tp.needs_grad(Var{wi})) {
        M col2;
        detail::im2col(X2, k, stride, pad, col2);
        auto& gw = tp.grad(Var{wi});
        Eigen::Map<M> gwm(gw.data.data(), std::int64_t(k) * k * cin, cout);
        gwm.noalias() += col2.transpose() * gm;
      }
      if (tp.needs_grad(Var{xi})) {
        Eigen::Map<const M> wm2(W2.data.data(), std::int64_t(k) * k * cin,
                                cout);
        M gcol = gm * wm2.transpose();
        detail::col2im_add<S>(gcol, k, stride, pad, tp.grad(Var{xi}));
      }
    });
  }
  return o;
}

// 3x3 stride-1 deformable convolution. `offsets` carries per-position
// (dy,dx) pairs per offset group and kernel tap: channel layout
// ((g*9 + tap)*2 + {0:dy, 1:dx}).
template <typename S>
Var deform_conv2d(Tape<S>& t, Var x, Var offsets, Var w, Var b, int cin,
                  int cout, int groups) {
  const int k = 3;
  const auto& X = t.val(x);
  const auto& O = t.val(offsets);
  const auto& W = t.val(w);
  check_arg(X.c == cin, "deform_conv2d: input channel mismatch");
  check_arg(groups > 0 && cin % groups == 0,
            "deform_conv2d: channels not divisible by offset groups");
  check_arg(O.h == X.h && O.w == X.w && O.c == groups * k * k * 2,
            "deform_conv2d: offset shape mismatch");
  check_arg(W.h == k && W.w == k && W.c == cin * cout,
            "deform_conv2d: weight shape mismatch");
  check_arg(t.val(b).c == cout, "deform_conv2d: bias shape mismatch");

  using M = typename Tensor<S>::MatrixRM;
  M col;
  detail::deform_im2col(X, O, groups, col);
  Eigen::Map<const M> wm(W.data.data(), std::int64_t(k) * k * cin, cout);
  Tensor<S> out(X.h, X.w, cout);
  out.mat().noalias() = col * wm;
  out.mat().rowwise() += t.val(b).mat().row(0);

  Var o = t.push(std::move(out), any_grad(t, {x, offsets, w, b}));
  if (t.needs_grad(o)) {
    int xi = x.i, fi = offsets.i, wi = w.i, bi = b.i, oi = o.i;
    t.set_back(o, [xi, fi, wi, bi, oi, cin, cout, groups](Tape<S>& tp) {
      const int kk2 = 9;
      const auto& g = tp.grad(Var{oi});
      const auto& X2 = tp.val(Var{xi});
      const auto& O2 = tp.val(Var{fi});
      const auto& W2 = tp.val(Var{wi});
      const int cpg = cin / groups;
      Eigen::Map<const M> gm(g.data.data(), std::int64_t(g.h) * g.w, cout);
      if (tp.needs_grad(Var{bi}))
        tp.grad(Var{bi}).mat().row(0) += gm.colwise().sum();
      if (tp.needs_grad(Var{wi})) {
        M col2;
        detail::deform_im2col(X2, O2, groups, col2);
        auto& gw = tp.grad(Var{wi});
        Eigen::Map<M> gwm(gw.data.data(), std::int64_t(3) * 3 * cin, cout);
        gwm.noalias() += col2.transpose() * gm;
      }
      const bool need_x = tp.needs_grad(Var{xi});
      const bool need_off = tp.needs_grad(Var{fi});
      if (!need_x && !need_off) return;
      Eigen::Map<const M> wm2(W2.data.data(), std::int64_t(3) * 3 * cin, cout);
      M gcol = gm * wm2.transpose();
      for (int oy = 0; oy < X2.h; ++oy)
        for (int ox = 0; ox < X2.w; ++ox) {
          const std::int64_t row = std::int64_t(oy) * X2.w + ox;
          for (int tap = 0; tap < kk2; ++tap) {
            const int ky = tap / 3, kx = tap % 3;
            for (int grp = 0; grp < groups; ++grp) {
              const S dy = O2.at(oy, ox, (grp * kk2 + tap) * 2 + 0);
              const S dx = O2.at(oy, ox, (grp * kk2 + tap) * 2 + 1);
              const S py = S(oy + ky - 1) + dy;
              const S px = S(ox + kx - 1) + dx;
              S gy = S(0), gx_acc = S(0);
              for (int ci = grp * cpg; ci < (grp + 1) * cpg; ++ci) {
                const S gc = gcol(row, std::int64_t(tap) * cin + ci);
                if (gc == S(0)) continue;
                if (need_x)
                  detail::bilinear_scatter(tp.grad(Var{xi}), ci, py, px, gc);
                if (need_off) {
                  gy += gc *
                        detail::bilinear_coord_grad(X2, ci, py, px, true);
                  gx_acc += gc *
                            detail::bilinear_coord_grad(X2, ci, py, px, false);
                }
              }
              if (need_off) {
                auto& go = tp.grad(Var{fi});
                go.at(oy, ox, (grp * kk2 + tap) * 2 + 0) += gy;
                go.at(oy, ox, (grp * kk2 + tap) * 2 + 1) += gx_acc;
              }
            }
          }
        }
    });
  }
  return o;
}

template <typename S>
Var upsample_nearest(Tape<S>& t, Var x, int factor) {
  check_arg(factor >= 1, "upsample_nearest: factor must be >= 1");
  const auto& X = t.val(x);
  Tensor<S> out(X.h * factor, X.w * factor, X.c);
  for (int y = 0; y < out.h; ++y)
    for (int xx = 0; xx < out.w; ++xx)
      for (int ch = 0; ch < out.c; ++ch)
        out.at(y, xx, ch) = X.at(y / factor, xx / factor, ch);
  Var o = t.push(std::move(out), t.needs_grad(x));
  if (t.needs_grad(o)) {
    int xi = x.i, oi = o.i;
    t.set_back(o, [xi, oi, factor](Tape<S>& tp) {
      const auto& g = tp.grad(Var{oi});
      auto& gx = tp.grad(Var{xi});
      for (int y = 0; y < g.h; ++y)
        for (int xx = 0; xx < g.w; ++xx)
          for (int ch = 0; ch < g.c; ++ch)
            gx.at(y / factor, xx / factor, ch) += g.at(y, xx, ch);
    });
  }
  return o;
}

template <typename S>
Var global_avg_pool(Tape<S>& t, Var x) {
  const auto& X = t.val(x);
  Tensor<S> out(1, 1, X.c);
  out.mat().row(0) = X.mat().colwise().mean();
  Var o = t.push(std::move(out), t.needs_grad(x));
  if (t.needs_grad(o)) {
    int xi = x.i, oi = o.i;
    t.set_back(o, [xi, oi](Tape<S>& tp) {
      const auto& g = tp.grad(Var{oi});
      auto& gx = tp.grad(Var{xi});
      const S inv = S(1) / S(std::int64_t(gx.h) * gx.w);
      gx.mat().rowwise() += (g.mat().row(0) * inv).eval();
    });
  }
  return o;
}

}  // namespace olc
