#pragma once

#include <cmath>
#include <initializer_list>
#include <vector>

#include "olc/tape.hpp"

// Elementwise, reduction and shape ops on the tape. Every op returns a new
// node; backward closures capture node indices and whatever small state the
// gradient needs.

namespace olc {

template <typename S>
inline bool any_grad(Tape<S>& t, std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (t.needs_grad(v)) return true;
  return false;
}

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  check_same_shape(A, B, "add");
  Tensor<S> out = A;
  out.data += B.data;
  Var o = t.push(std::move(out), any_grad(t, {a, b}));
  if (t.needs_grad(o)) {
    int ai = a.i, bi = b.i, oi = o.i;
    t.set_back(o, [ai, bi, oi](Tape<S>& tp) {
      const auto& g = tp.grad(Var{oi});
      if (tp.needs_grad(Var{ai})) tp.grad(Var{ai}).data += g.data;
      if (tp.needs_grad(Var{bi})) tp.grad(Var{bi}).data += g.data;
    });
  }
  return o;
}

template <typename S>
Var sub(Tape<S>& t, Var a, Var b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  check_same_shape(A, B, "sub");
  Tensor<S> out = A;
  out.data -= B.data;
  Var o = t.push(std::move(out), any_grad(t, {a, b}));
  if (t.needs_grad(o)) {
    int ai = a.i, bi = b.i, oi = o.i;
    t.set_back(o, [ai, bi, oi](Tape<S>& tp) {
      const auto& g = tp.grad(Var{oi});
      if (tp.needs_grad(Var{ai})) tp.grad(Var{ai}).data += g.data;
      if (tp.needs_grad(Var{bi})) tp.grad(Var{bi}).data -= g.data;
    });
  }
  return o;
}

template <typename S>
Var mul(Tape<S>& t, Var a, Var b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  check_same_shape(A, B, "mul");
  Tensor<S> out = A;
  out.data *= B.data;
  Var o = t.push(std::move(out), any_grad(t, {a, b}));
  if (t.needs_grad(o)) {
    int ai = a.i, bi = b.i, oi = o.i;
    t.set_back(o, [ai, bi, oi](Tape<S>& tp) {
      const auto& g = tp.grad(Var{oi});
      if (tp.needs_grad(Var{ai}))
        tp.grad(Var{ai}).data += g.data * tp.val(Var{bi}).data;
      if (tp.needs_grad(Var{bi}))
        tp.grad(Var{bi}).data += g.data * tp.val(Var{ai}).data;
    });
  }
  return o;
}

template <typename S>
Var scale(Tape<S>& t, Var a, S k) {
  Tensor<S> out = t.val(a);
  out.data *= k;
  Var o = t.push(std::move(out), t.needs_grad(a));
  if (t.needs_grad(o)) {
    int ai = a.i, oi = o.i;
    t.set_back(o, [ai, oi, k](Tape<S>& tp) {
      tp.grad(Var{ai}).data += tp.grad(Var{oi}).data * k;
    });
  }
  return o;
}

template <typename S>
Var add_const(Tape<S>& t, Var a, S k) {
  Tensor<S> out = t.val(a);
  out.data += k;
  Var o = t.push(std::move(out), t.needs_grad(a));
  if (t.needs_grad(o)) {
    int ai = a.i, oi = o.i;
    t.set_back(o, [ai, oi](Tape<S>& tp) {
      tp.grad(Var{ai}).data += tp.grad(Var{oi}).data;
    });
  }
  return o;
}

template <typename S>
Var relu(Tape<S>& t, Var a) {
  Tensor<S> out = t.val(a);
  out.data = out.data.max(S(0));
  Var o = t.push(std::move(out), t.needs_grad(a));
  if (t.needs_grad(o)) {
    int ai = a.i, oi = o.i;
    t.set_back(o, [ai, oi](Tape<S>& tp) {
      const auto& x = tp.val(Var{ai});
      tp.grad(Var{ai}).data +=
          tp.grad(Var{oi}).data * (x.data > S(0)).template cast<S>();
    });
  }
  return o;
}

template <typename S>
Var leaky_relu(Tape<S>& t, Var a, S slope) {
  const auto& A = t.val(a);
  Tensor<S> out = A;
  out.data = (A.data > S(0)).select(A.data, A.data * slope);
  Var o = t.push(std::move(out), t.needs_grad(a));
  if (t.needs_grad(o)) {
    int ai = a.i, oi = o.i;
    t.set_back(o, [ai, oi, slope](Tape<S>& tp) {
      const auto& x = tp.val(Var{ai});
      const auto& g = tp.grad(Var{oi});
      tp.grad(Var{ai}).data +=
          (x.data > S(0)).select(g.data, g.data * slope);
    });
  }
  return o;
}

template <typename S>
Var sigmoid(Tape<S>& t, Var a) {
  Tensor<S> out = t.val(a);
  out.data = S(1) / (S(1) + (-out.data).exp());
  Var o = t.push(std::move(out), t.needs_grad(a));
  if (t.needs_grad(o)) {
    int ai = a.i, oi = o.i;
    t.set_back(o, [ai, oi](Tape<S>& tp) {
      const auto& y = tp.val(Var{oi});
      tp.grad(Var{ai}).data +=
          tp.grad(Var{oi}).data * y.data * (S(1) - y.data);
    });
  }
  return o;
}

template <typename S>
Var silu(Tape<S>& t, Var a) {
  const auto& A = t.val(a);
  Tensor<S> out = A;
  auto sig = (S(1) / (S(1) + (-A.data).exp())).eval();
  out.data = A.data * sig;
  Var o = t.push(std::move(out), t.needs_grad(a));
  if (t.needs_grad(o)) {
    int ai = a.i, oi = o.i;
    t.set_back(o, [ai, oi](Tape<S>& tp) {
      const auto& x = tp.val(Var{ai});
      auto s = (S(1) / (S(1) + (-x.data).exp())).eval();
      tp.grad(Var{ai}).data +=
          tp.grad(Var{oi}).data * (s + x.data * s * (S(1) - s));
    });
  }
  return o;
}

// Clamp to [0,1]; gradient passes only strictly inside the interval.
template <typename S>
Var clamp01(Tape<S>& t, Var a) {
  Tensor<S> out = t.val(a);
  out.data = out.data.max(S(0)).min(S(1));
  Var o = t.push(std::move(out), t.needs_grad(a));
  if (t.needs_grad(o)) {
    int ai = a.i, oi = o.i;
    t.set_back(o, [ai, oi](Tape<S>& tp) {
      const auto& x = tp.val(Var{ai});
      auto inside = (x.data > S(0) && x.data < S(1)).template cast<S>();
      tp.grad(Var{ai}).data += tp.grad(Var{oi}).data * inside;
    });
  }
  return o;
}

template <typename S>
Var abs_op(Tape<S>& t, Var a) {
  Tensor<S> out = t.val(a);
  out.data = out.data.abs();
  Var o = t.push(std::move(out), t.needs_grad(a));
  if (t.needs_grad(o)) {
    int ai = a.i, oi = o.i;
    t.set_back(o, [ai, oi](Tape<S>& tp) {
      const auto& x = tp.val(Var{ai});
      auto sgn = (x.data > S(0)).template cast<S>() -
                 (x.data < S(0)).template cast<S>();
      tp.grad(Var{ai}).data += tp.grad(Var{oi}).data * sgn;
    });
  }
  return o;
}

// mu-law compression, elementwise: log(1 + mu*x) / log(1 + mu).
template <typename S>
Var mu_compress(Tape<S>& t, Var a, S mu) {
  check_arg(mu > S(0), "mu_compress: mu must be positive");
  const S denom = std::log1p(double(mu));
  Tensor<S> out = t.val(a);
  out.data = (S(1) + mu * out.data).log() / S(denom);
  Var o = t.push(std::move(out), t.needs_grad(a));
  if (t.needs_grad(o)) {
    int ai = a.i, oi = o.i;
    t.set_back(o, [ai, oi, mu, denom](Tape<S>& tp) {
      const auto& x = tp.val(Var{ai});
      tp.grad(Var{ai}).data += tp.grad(Var{oi}).data * mu /
                               ((S(1) + mu * x.data) * S(denom));
    });
  }
  return o;
}

template <typename S>
Var sum_all(Tape<S>& t, Var a) {
  Tensor<S> out = Tensor<S>::scalar(t.val(a).data.sum());
  Var o = t.push(std::move(out), t.needs_grad(a));
  if (t.needs_grad(o)) {
    int ai = a.i, oi = o.i;
    t.set_back(o, [ai, oi](Tape<S>& tp) {
      tp.grad(Var{ai}).data += tp.grad(Var{oi}).data[0];
    });
  }
  return o;
}

template <typename S>
Var mean_all(Tape<S>& t, Var a) {
  const S n = S(t.val(a).size());
  return scale(t, sum_all(t, a), S(1) / n);
}

template <typename S>
Var stop_gradient(Tape<S>& t, Var a) {
  return t.push(t.val(a), false);
}

// Forward is `quantized`, bit-exact; gradient passes untouched to `encoded`.
template <typename S>
Var straight_through(Tape<S>& t, Var encoded, Var quantized) {
  check_same_shape(t.val(encoded), t.val(quantized), "straight_through");
  Var o = t.push(t.val(quantized), t.needs_grad(encoded));
  if (t.needs_grad(o)) {
    int ai = encoded.i, oi = o.i;
    t.set_back(o, [ai, oi](Tape<S>& tp) {
      tp.grad(Var{ai}).data += tp.grad(Var{oi}).data;
    });
  }
  return o;
}

template <typename S>
Var concat_c(Tape<S>& t, Var a, Var b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  check_arg(A.h == B.h && A.w == B.w, "concat_c: spatial shape mismatch");
  Tensor<S> out(A.h, A.w, A.c + B.c);
  for (int y = 0; y < A.h; ++y)
    for (int x = 0; x < A.w; ++x) {
      for (int ch = 0; ch < A.c; ++ch) out.at(y, x, ch) = A.at(y, x, ch);
      for (int ch = 0; ch < B.c; ++ch) out.at(y, x, A.c + ch) = B.at(y, x, ch);
    }
  const int ca = A.c, cb = B.c;
  Var o = t.push(std::move(out), any_grad(t, {a, b}));
  if (t.needs_grad(o)) {
    int ai = a.i, bi = b.i, oi = o.i;
    t.set_back(o, [ai, bi, oi, ca, cb](Tape<S>& tp) {
      const auto& g = tp.grad(Var{oi});
      if (tp.needs_grad(Var{ai})) {
        auto& ga = tp.grad(Var{ai});
        for (int y = 0; y < g.h; ++y)
          for (int x = 0; x < g.w; ++x)
            for (int ch = 0; ch < ca; ++ch)
              ga.at(y, x, ch) += g.at(y, x, ch);
      }
      if (tp.needs_grad(Var{bi})) {
        auto& gb = tp.grad(Var{bi});
        for (int y = 0; y < g.h; ++y)
          for (int x = 0; x < g.w; ++x)
            for (int ch = 0; ch < cb; ++ch)
              gb.at(y, x, ch) += g.at(y, x, ca + ch);
      }
    });
  }
  return o;
}

template <typename S>
Var concat_c(Tape<S>& t, const std::vector<Var>& vs) {
  check_arg(!vs.empty(), "concat_c: empty input list");
  Var acc = vs[0];
  for (std::size_t i = 1; i < vs.size(); ++i) acc = concat_c(t, acc, vs[i]);
  return acc;
}

template <typename S>
Var slice_c(Tape<S>& t, Var a, int first, int count) {
  const auto& A = t.val(a);
  check_arg(first >= 0 && count > 0 && first + count <= A.c,
            "slice_c: channel range out of bounds");
  Tensor<S> out(A.h, A.w, count);
  for (int y = 0; y < A.h; ++y)
    for (int x = 0; x < A.w; ++x)
      for (int ch = 0; ch < count; ++ch)
        out.at(y, x, ch) = A.at(y, x, first + ch);
  Var o = t.push(std::move(out), t.needs_grad(a));
  if (t.needs_grad(o)) {
    int ai = a.i, oi = o.i;
    t.set_back(o, [ai, oi, first, count](Tape<S>& tp) {
      const auto& g = tp.grad(Var{oi});
      auto& ga = tp.grad(Var{ai});
      for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
          for (int ch = 0; ch < count; ++ch)
            ga.at(y, x, first + ch) += g.at(y, x, ch);
    });
  }
  return o;
}

// Multiply (h,w,c) by a per-channel vector (1,1,c).
template <typename S>
Var broadcast_mul(Tape<S>& t, Var x, Var v) {
  const auto& X = t.val(x);
  const auto& V = t.val(v);
  check_arg(V.h == 1 && V.w == 1 && V.c == X.c,
            "broadcast_mul: expected (1,1,c) scale vector");
  Tensor<S> out = X;
  for (int y = 0; y < X.h; ++y)
    for (int xx = 0; xx < X.w; ++xx)
      for (int ch = 0; ch < X.c; ++ch) out.at(y, xx, ch) *= V.data[ch];
  Var o = t.push(std::move(out), any_grad(t, {x, v}));
  if (t.needs_grad(o)) {
    int xi = x.i, vi = v.i, oi = o.i;
    t.set_back(o, [xi, vi, oi](Tape<S>& tp) {
      const auto& g = tp.grad(Var{oi});
      const auto& X2 = tp.val(Var{xi});
      const auto& V2 = tp.val(Var{vi});
      if (tp.needs_grad(Var{xi})) {
        auto& gx = tp.grad(Var{xi});
        for (int y = 0; y < g.h; ++y)
          for (int xx = 0; xx < g.w; ++xx)
            for (int ch = 0; ch < g.c; ++ch)
              gx.at(y, xx, ch) += g.at(y, xx, ch) * V2.data[ch];
      }
      if (tp.needs_grad(Var{vi})) {
        auto& gv = tp.grad(Var{vi});
        for (int y = 0; y < g.h; ++y)
          for (int xx = 0; xx < g.w; ++xx)
            for (int ch = 0; ch < g.c; ++ch)
              gv.data[ch] += g.at(y, xx, ch) * X2.at(y, xx, ch);
      }
    });
  }
  return o;
}

// Channel-wise softmax across a stack of (1,1,c) logit vectors.
template <typename S>
std::vector<Var> softmax_stack(Tape<S>& t, const std::vector<Var>& logits) {
  const int n = int(logits.size());
  check_arg(n >= 2, "softmax_stack: need at least two inputs");
  const int c = t.val(logits[0]).c;
  for (Var v : logits)
    check_arg(t.val(v).h == 1 && t.val(v).w == 1 && t.val(v).c == c,
              "softmax_stack: inputs must be (1,1,c) with equal c");

  // Stable softmax per channel.
  std::vector<Tensor<S>> outs(n, Tensor<S>(1, 1, c));
  for (int ch = 0; ch < c; ++ch) {
    S m = t.val(logits[0]).data[ch];
    for (int i = 1; i < n; ++i) m = std::max(m, t.val(logits[i]).data[ch]);
    S z = S(0);
    for (int i = 0; i < n; ++i) {
      S e = std::exp(t.val(logits[i]).data[ch] - m);
      outs[i].data[ch] = e;
      z += e;
    }
    for (int i = 0; i < n; ++i) outs[i].data[ch] /= z;
  }

  bool ng = false;
  for (Var v : logits) ng = ng || t.needs_grad(v);
  std::vector<Var> result(n);
  for (int i = 0; i < n; ++i) result[i] = t.push(std::move(outs[i]), ng);
  if (ng) {
    std::vector<int> in_idx(n), out_idx(n);
    for (int i = 0; i < n; ++i) {
      in_idx[i] = logits[i].i;
      out_idx[i] = result[i].i;
    }
    // One closure per output row; each consumes only its own grad but the
    // jacobian couples all rows, so each adds its contribution everywhere.
    for (int i = 0; i < n; ++i) {
      t.set_back(result[i], [i, n, c, in_idx, out_idx](Tape<S>& tp) {
        const auto& gi = tp.grad(Var{out_idx[i]});
        const auto& yi = tp.val(Var{out_idx[i]});
        for (int ch = 0; ch < c; ++ch) {
          const S g = gi.data[ch];
          const S vi = yi.data[ch];
          for (int j = 0; j < n; ++j) {
            if (!tp.needs_grad(Var{in_idx[j]})) continue;
            const S vj = tp.val(Var{out_idx[j]}).data[ch];
            const S jac = (i == j) ? vi * (S(1) - vi) : -vi * vj;
            tp.grad(Var{in_idx[j]}).data[ch] += g * jac;
          }
        }
      });
    }
  }
  return result;
}

// Rows of `codes` (K,1,n_z) gathered by flat per-position indices into an
// (h,w,n_z) grid. Backward scatter-adds into the selected rows only.
template <typename S>
Var gather_rows(Tape<S>& t, Var codes, const std::vector<int>& indices, int h,
                int w) {
  const auto& C = t.val(codes);
  check_arg(C.w == 1, "gather_rows: codes must be (K,1,n_z)");
  check_arg(int(indices.size()) == h * w, "gather_rows: index count mismatch");
  const int nz = C.c;
  const int K = C.h;
  Tensor<S> out(h, w, nz);
  for (int j = 0; j < h * w; ++j) {
    const int k = indices[j];
    check_arg(k >= 0 && k < K, "gather_rows: index out of range");
    out.data.segment(std::int64_t(j) * nz, nz) =
        C.data.segment(std::int64_t(k) * nz, nz);
  }
  Var o = t.push(std::move(out), t.needs_grad(codes));
  if (t.needs_grad(o)) {
    int ci = codes.i, oi = o.i;
    std::vector<int> idx = indices;
    t.set_back(o, [ci, oi, idx, nz](Tape<S>& tp) {
      const auto& g = tp.grad(Var{oi});
      auto& gc = tp.grad(Var{ci});
      for (std::size_t j = 0; j < idx.size(); ++j)
        gc.data.segment(std::int64_t(idx[j]) * nz, nz) +=
            g.data.segment(std::int64_t(j) * nz, nz);
    });
  }
  return o;
}

// Group normalization over (h, w, channels-in-group) statistics.
template <typename S>
Var group_norm(Tape<S>& t, Var x, Var gamma, Var beta, int groups,
               S eps = S(1e-5)) {
  const auto& X = t.val(x);
  check_arg(groups > 0 && X.c % groups == 0,
            "group_norm: channel count not divisible by groups");
  const auto& G = t.val(gamma);
  const auto& B = t.val(beta);
  check_arg(G.h == 1 && G.w == 1 && G.c == X.c, "group_norm: bad gamma shape");
  check_arg(B.h == 1 && B.w == 1 && B.c == X.c, "group_norm: bad beta shape");

  const int cg = X.c / groups;
  const std::int64_t n = std::int64_t(X.h) * X.w * cg;
  Tensor<S> xhat(X.h, X.w, X.c);
  std::vector<S> inv_std(groups);
  for (int g = 0; g < groups; ++g) {
    S mean = S(0);
    for (int y = 0; y < X.h; ++y)
      for (int xx = 0; xx < X.w; ++xx)
        for (int ch = 0; ch < cg; ++ch) mean += X.at(y, xx, g * cg + ch);
    mean /= S(n);
    S var = S(0);
    for (int y = 0; y < X.h; ++y)
      for (int xx = 0; xx < X.w; ++xx)
        for (int ch = 0; ch < cg; ++ch) {
          const S d = X.at(y, xx, g * cg + ch) - mean;
          var += d * d;
        }
    var /= S(n);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std[g] = is;
    for (int y = 0; y < X.h; ++y)
      for (int xx = 0; xx < X.w; ++xx)
        for (int ch = 0; ch < cg; ++ch)
          xhat.at(y, xx, g * cg + ch) =
              (X.at(y, xx, g * cg + ch) - mean) * is;
  }
  Tensor<S> out(X.h, X.w, X.c);
  for (int y = 0; y < X.h; ++y)
    for (int xx = 0; xx < X.w; ++xx)
      for (int ch = 0; ch < X.c; ++ch)
        out.at(y, xx, ch) = xhat.at(y, xx, ch) * G.data[ch] + B.data[ch];

  Var o = t.push(std::move(out), any_grad(t, {x, gamma, beta}));
  if (t.needs_grad(o)) {
    int xi = x.i, gi = gamma.i, bi = beta.i, oi = o.i;
    Tensor<S> xh = xhat;
    std::vector<S> istd = inv_std;
    t.set_back(o, [xi, gi, bi, oi, xh, istd, groups, cg, n](Tape<S>& tp) {
      const auto& g = tp.grad(Var{oi});
      const auto& gam = tp.val(Var{gi});
      if (tp.needs_grad(Var{gi})) {
        auto& gg = tp.grad(Var{gi});
        for (int y = 0; y < g.h; ++y)
          for (int xx = 0; xx < g.w; ++xx)
            for (int ch = 0; ch < g.c; ++ch)
              gg.data[ch] += g.at(y, xx, ch) * xh.at(y, xx, ch);
      }
      if (tp.needs_grad(Var{bi})) {
        auto& gb = tp.grad(Var{bi});
        for (int y = 0; y < g.h; ++y)
          for (int xx = 0; xx < g.w; ++xx)
            for (int ch = 0; ch < g.c; ++ch) gb.data[ch] += g.at(y, xx, ch);
      }
      if (tp.needs_grad(Var{xi})) {
        auto& gx = tp.grad(Var{xi});
        for (int grp = 0; grp < groups; ++grp) {
          S sum_d = S(0), sum_dx = S(0);
          for (int y = 0; y < g.h; ++y)
            for (int xx = 0; xx < g.w; ++xx)
              for (int ch = 0; ch < cg; ++ch) {
                const int cc = grp * cg + ch;
                const S dxh = g.at(y, xx, cc) * gam.data[cc];
                sum_d += dxh;
                sum_dx += dxh * xh.at(y, xx, cc);
              }
          const S mean_d = sum_d / S(n);
          const S mean_dx = sum_dx / S(n);
          for (int y = 0; y < g.h; ++y)
            for (int xx = 0; xx < g.w; ++xx)
              for (int ch = 0; ch < cg; ++ch) {
                const int cc = grp * cg + ch;
                const S dxh = g.at(y, xx, cc) * gam.data[cc];
                gx.at(y, xx, cc) +=
                    istd[grp] * (dxh - mean_d - xh.at(y, xx, cc) * mean_dx);
              }
        }
      }
    });
  }
  return o;
}

// Convenience reductions.
template <typename S>
Var l1_mean(Tape<S>& t, Var a, Var b) {
  return mean_all(t, abs_op(t, sub(t, a, b)));
}

template <typename S>
Var mse_mean(Tape<S>& t, Var a, Var b) {
  Var d = sub(t, a, b);
  return mean_all(t, mul(t, d, d));
}

}  // namespace olc
