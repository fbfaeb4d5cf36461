#pragma once

#include <optional>

#include "olc/autoencoder.hpp"

// Step 2: dual-decoder HDR reconstruction. Per-frame encoders with parallel
// alignment of the non-reference frames, frame-selective merging at every
// scale, a frozen VQ decoder supplying learned HDR features, and a fidelity
// decoder that fuses them through residual-affine blocks.

namespace olc {

struct CheckpointMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Six input channels per frame: the LDR pixels and their HDR-domain map.
template <typename S>
Tensor<S> build_frame_input(const LdrFrame<S>& frame, S gamma = S(2.2)) {
  frame.validate();
  const Tensor<S>& ldr = frame.pixels;
  Tensor<S> mapped = gamma_normalize(frame, gamma).pixels;
  Tensor<S> out(ldr.h, ldr.w, 6);
  for (int y = 0; y < ldr.h; ++y)
    for (int x = 0; x < ldr.w; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = ldr.at(y, x, c);
      for (int c = 0; c < 3; ++c) out.at(y, x, 3 + c) = mapped.at(y, x, c);
    }
  return out;
}

template <typename S>
std::array<Tensor<S>, 3> build_inputs(const ExposureStack<S>& stack,
                                      S gamma = S(2.2)) {
  stack.validate();
  return {build_frame_input(stack.frames[0], gamma),
          build_frame_input(stack.frames[1], gamma),
          build_frame_input(stack.frames[2], gamma)};
}

// Parallel alignment: an offset module with 3x3/5x5 branches fused by a
// channelwise selective gate drives a deformable-conv branch and a spatial
// attention branch; their concatenation is fused back to the frame width.
template <typename S>
struct PaUnit {
  int c = 0, offset_groups = 1;
  Conv2dLayer<S> branch3, branch5;
  Conv2dLayer<S> gate_squeeze, gate3, gate5;
  Conv2dLayer<S> offset_conv, attention_conv, deform, fuse;

  PaUnit() = default;
  PaUnit(int c_, int groups, Rng& rng) : c(c_) {
    offset_groups = std::min(groups, c);
    while (c % offset_groups != 0) --offset_groups;
    branch3 = Conv2dLayer<S>(2 * c, c, 3, 1, 1);
    branch3.init_he(rng);
    branch5 = Conv2dLayer<S>(2 * c, c, 5, 1, 2);
    branch5.init_he(rng);
    gate_squeeze = Conv2dLayer<S>(c, c, 1, 1, 0);
    gate_squeeze.init_he(rng);
    gate3 = Conv2dLayer<S>(c, c, 1, 1, 0);
    gate3.init_he(rng);
    gate5 = Conv2dLayer<S>(c, c, 1, 1, 0);
    gate5.init_he(rng);
    offset_conv = Conv2dLayer<S>(c, offset_groups * 9 * 2, 3, 1, 1);
    offset_conv.init_zero();  // starts as an ordinary conv
    attention_conv = Conv2dLayer<S>(c, c, 3, 1, 1);
    attention_conv.init_he(rng);
    deform = Conv2dLayer<S>(c, c, 3, 1, 1);
    deform.init_he(rng);
    fuse = Conv2dLayer<S>(2 * c, c, 3, 1, 1);
    fuse.init_he(rng);
  }

  Var operator()(Tape<S>& t, Var f_nr, Var f_ref) {
    check_same_shape(t.val(f_nr), t.val(f_ref), "PaUnit");
    Var cat = concat_c(t, f_nr, f_ref);
    Var v3 = silu(t, branch3(t, cat));
    Var v5 = silu(t, branch5(t, cat));
    Var g = silu(t, gate_squeeze(t, global_avg_pool(t, add(t, v3, v5))));
    auto w = softmax_stack(t, {gate3(t, g), gate5(t, g)});
    Var f_o = add(t, broadcast_mul(t, v3, w[0]), broadcast_mul(t, v5, w[1]));
    Var offsets = offset_conv(t, f_o);
    Var f_d = deform_conv2d(t, f_nr, offsets, t.param(deform.w),
                            t.param(deform.b), c, c, offset_groups);
    Var mask = sigmoid(t, attention_conv(t, f_o));
    Var f_s = mul(t, f_nr, mask);
    return fuse(t, concat_c(t, f_d, f_s));
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    branch3.register_params(reg, prefix + ".branch3");
    branch5.register_params(reg, prefix + ".branch5");
    gate_squeeze.register_params(reg, prefix + ".gate_squeeze");
    gate3.register_params(reg, prefix + ".gate3");
    gate5.register_params(reg, prefix + ".gate5");
    offset_conv.register_params(reg, prefix + ".offset_conv");
    attention_conv.register_params(reg, prefix + ".attention_conv");
    deform.register_params(reg, prefix + ".deform");
    fuse.register_params(reg, prefix + ".fuse");
  }
};

// Frame-selective merging: summed features -> GAP -> squeeze -> per-frame
// heads -> across-frame channelwise softmax -> weighted sum.
template <typename S>
struct FsmUnit {
  int c = 0;
  Conv2dLayer<S> squeeze;
  std::array<Conv2dLayer<S>, 3> heads;

  FsmUnit() = default;
  FsmUnit(int c_, Rng& rng) : c(c_) {
    squeeze = Conv2dLayer<S>(c, c, 1, 1, 0);
    squeeze.init_he(rng);
    for (auto& h : heads) {
      h = Conv2dLayer<S>(c, c, 1, 1, 0);
      h.init_he(rng);
    }
  }

  std::array<Var, 3> attention(Tape<S>& t, Var f1, Var f2, Var f3) {
    Var sum = add(t, f1, add(t, f2, f3));
    Var v = silu(t, squeeze(t, global_avg_pool(t, sum)));
    auto w = softmax_stack(t, {heads[0](t, v), heads[1](t, v), heads[2](t, v)});
    return {w[0], w[1], w[2]};
  }

  Var operator()(Tape<S>& t, Var f1, Var f2, Var f3) {
    auto w = attention(t, f1, f2, f3);
    return add(t, broadcast_mul(t, f1, w[0]),
               add(t, broadcast_mul(t, f2, w[1]),
                   broadcast_mul(t, f3, w[2])));
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    squeeze.register_params(reg, prefix + ".squeeze");
    heads[0].register_params(reg, prefix + ".head1");
    heads[1].register_params(reg, prefix + ".head2");
    heads[2].register_params(reg, prefix + ".head3");
  }
};

enum class MergeMode { fsm, sum, concat };

inline MergeMode parse_merge_mode(const std::string& name) {
  if (name == "fsm") return MergeMode::fsm;
  if (name == "sum") return MergeMode::sum;
  if (name == "concat") return MergeMode::concat;
  throw std::invalid_argument("unknown merge mode: " + name);
}

template <typename S>
struct MergeUnit {
  MergeMode mode = MergeMode::sum;
  int c = 0;
  FsmUnit<S> fsm;
  Conv2dLayer<S> cat;

  MergeUnit() = default;
  MergeUnit(MergeMode mode_, int c_, Rng& rng) : mode(mode_), c(c_) {
    if (mode == MergeMode::fsm) fsm = FsmUnit<S>(c, rng);
    if (mode == MergeMode::concat) {
      cat = Conv2dLayer<S>(3 * c, c, 1, 1, 0);
      cat.init_he(rng);
    }
  }

  Var operator()(Tape<S>& t, Var f1, Var f2, Var f3) {
    switch (mode) {
      case MergeMode::fsm:
        return fsm(t, f1, f2, f3);
      case MergeMode::sum:
        return add(t, f1, add(t, f2, f3));
      case MergeMode::concat:
        return cat(t, concat_c(t, std::vector<Var>{f1, f2, f3}));
    }
    throw std::logic_error("MergeUnit: bad mode");
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    if (mode == MergeMode::fsm) fsm.register_params(reg, prefix + ".fsm");
    if (mode == MergeMode::concat) cat.register_params(reg, prefix + ".cat");
  }
};

// Residual fusing: the context (merged frames and/or VQ features) emits
// per-position affine parameters; F' = (gamma .* F + beta) + F. The last
// conv starts at zero, so the unit is the identity at initialization.
template <typename S>
struct RfUnit {
  int c = 0, c_ctx = 0;
  Conv2dLayer<S> conv1, conv2;

  RfUnit() = default;
  RfUnit(int c_, int c_ctx_, Rng& rng) : c(c_), c_ctx(c_ctx_) {
    conv1 = Conv2dLayer<S>(c_ctx, c, 3, 1, 1);
    conv1.init_he(rng);
    conv2 = Conv2dLayer<S>(c, 2 * c, 3, 1, 1);
    conv2.init_zero();
  }

  Var operator()(Tape<S>& t, Var f, Var ctx) {
    Var gb = conv2(t, silu(t, conv1(t, ctx)));
    Var gamma_rf = slice_c(t, gb, 0, c);
    Var beta_rf = slice_c(t, gb, c, c);
    return add(t, add(t, mul(t, gamma_rf, f), beta_rf), f);
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    conv1.register_params(reg, prefix + ".conv1");
    conv2.register_params(reg, prefix + ".conv2");
  }
};

// Applies per-position affine fusing directly; used by the identity tests
// and by the RF unit above.
template <typename S>
Var residual_fuse_apply(Tape<S>& t, Var f, Var gamma_rf, Var beta_rf) {
  return add(t, add(t, mul(t, gamma_rf, f), beta_rf), f);
}

// Decoder-stage context injection: residual fusing when enabled, otherwise
// an additive zero-initialized 1x1 projection of the context.
template <typename S>
struct FuseStage {
  bool active = false, rf = true;
  RfUnit<S> unit;
  Conv2dLayer<S> additive;

  FuseStage() = default;
  FuseStage(int c, int c_ctx, bool use_rf, Rng& rng)
      : active(c_ctx > 0), rf(use_rf) {
    if (!active) return;
    if (rf) {
      unit = RfUnit<S>(c, c_ctx, rng);
    } else {
      additive = Conv2dLayer<S>(c_ctx, c, 1, 1, 0);
      additive.init_zero();
    }
  }

  Var operator()(Tape<S>& t, Var f, std::optional<Var> ctx) {
    if (!active || !ctx) return f;
    if (rf) return unit(t, f, *ctx);
    return add(t, f, additive(t, *ctx));
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    if (!active) return;
    if (rf)
      unit.register_params(reg, prefix + ".rf");
    else
      additive.register_params(reg, prefix + ".add");
  }
};

template <typename S>
struct FrameEncoder {
  int c = 0;
  ResBlock<S> rb0, rb1, rb2, rb3;
  Conv2dLayer<S> d1, d2, d3;

  struct Feats {
    Var full, half, quarter, eighth;  // widths C, 2C, 4C, 8C
  };

  FrameEncoder() = default;
  FrameEncoder(int c_, Rng& rng) : c(c_) {
    rb0 = ResBlock<S>(c, c, rng);
    d1 = Conv2dLayer<S>(c, 2 * c, 3, 2, 1);
    d1.init_he(rng);
    rb1 = ResBlock<S>(2 * c, 2 * c, rng);
    d2 = Conv2dLayer<S>(2 * c, 4 * c, 3, 2, 1);
    d2.init_he(rng);
    rb2 = ResBlock<S>(4 * c, 4 * c, rng);
    d3 = Conv2dLayer<S>(4 * c, 8 * c, 3, 2, 1);
    d3.init_he(rng);
    rb3 = ResBlock<S>(8 * c, 8 * c, rng);
  }

  Feats operator()(Tape<S>& t, Var f) {
    Feats out;
    out.full = rb0(t, f);
    out.half = rb1(t, d1(t, out.full));
    out.quarter = rb2(t, d2(t, out.half));
    out.eighth = rb3(t, d3(t, out.quarter));
    return out;
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    rb0.register_params(reg, prefix + ".rb0");
    d1.register_params(reg, prefix + ".d1");
    rb1.register_params(reg, prefix + ".rb1");
    d2.register_params(reg, prefix + ".d2");
    rb2.register_params(reg, prefix + ".rb2");
    d3.register_params(reg, prefix + ".d3");
    rb3.register_params(reg, prefix + ".rb3");
  }
};

struct HdrModelFlags {
  bool use_pa = true;
  MergeMode merge = MergeMode::fsm;
  bool use_skip_context = true;
  bool use_dvq = true;
  bool use_rf = true;
  bool shared_encoders = false;
  int offset_groups = 8;
};

inline HdrModelFlags flags_from_config(const HdrTrainConfig& cfg) {
  HdrModelFlags f;
  f.use_pa = cfg.use_pa;
  f.merge = parse_merge_mode(cfg.merge);
  f.use_skip_context = cfg.use_skip_context;
  f.use_dvq = cfg.use_dvq;
  f.use_rf = cfg.use_rf;
  f.shared_encoders = cfg.shared_encoders;
  f.offset_groups = cfg.offset_groups;
  return f;
}

template <typename S>
struct HdrForward {
  Var h_hat;                   // predicted HDR in [0,1]
  Var z_vq;                    // pre-quantization latent (when D_VQ active)
  std::vector<int> z_indices;  // full-codebook indices
  int zm_h = 0, zm_w = 0, zvq_h = 0, zvq_w = 0;
};

// The full dual-decoder model. Frozen pieces (VQ decoder, codebook and the
// encoder used for ground-truth latents) come from a step-1 checkpoint and
// are never updated here.
template <typename S>
struct HdrModel {
  HdrModelFlags flags;
  int c = 0;       // base width
  int vq_base = 0;
  int n_z = 0;

  std::array<Conv2dLayer<S>, 3> stems;
  PaUnit<S> pa1, pa3;
  Conv2dLayer<S> pre1, pre2, pre3;
  std::vector<FrameEncoder<S>> encoders;  // size 1 when shared

  MergeUnit<S> merge_zm, merge_zvq;
  MergeUnit<S> merge_u1, merge_u2, merge_u4;
  GroupNormLayer<S> zvq_norm;
  Conv2dLayer<S> zvq_head;

  ResBlock<S> df_rb4, df_rb2, df_rb1;
  FuseStage<S> fuse4, fuse2, fuse1;
  Conv2dLayer<S> up42, up21;
  GroupNormLayer<S> out_norm;
  Conv2dLayer<S> out_conv;
  Conv2dLayer<S> proj_vq4, proj_vq2, proj_vq1;  // 1x1 taps -> stage widths

  // Frozen step-1 components.
  VqEncoder<S> gt_encoder;
  VqDecoder<S> vq_decoder;
  OverlappedCodebook<S> codebook;

  HdrModel() = default;
  HdrModel(const HdrModelFlags& flags_, int base, int vq_base_, int n_z_,
           int K, Rng& rng)
      : flags(flags_), c(base), vq_base(vq_base_), n_z(n_z_) {
    for (auto& s : stems) {
      s = Conv2dLayer<S>(6, c, 3, 1, 1);
      s.init_he(rng);
    }
    if (flags.use_pa) {
      pa1 = PaUnit<S>(c, flags.offset_groups, rng);
      pa3 = PaUnit<S>(c, flags.offset_groups, rng);
    } else {
      pre1 = Conv2dLayer<S>(c, c, 3, 1, 1);
      pre1.init_he(rng);
      pre3 = Conv2dLayer<S>(c, c, 3, 1, 1);
      pre3.init_he(rng);
    }
    pre2 = Conv2dLayer<S>(c, c, 3, 1, 1);
    pre2.init_he(rng);

    const int n_enc = flags.shared_encoders ? 1 : 3;
    for (int i = 0; i < n_enc; ++i) encoders.emplace_back(c, rng);

    merge_zm = MergeUnit<S>(flags.merge, 4 * c, rng);
    if (flags.use_skip_context) {
      merge_u1 = MergeUnit<S>(flags.merge, c, rng);
      merge_u2 = MergeUnit<S>(flags.merge, 2 * c, rng);
      merge_u4 = MergeUnit<S>(flags.merge, 4 * c, rng);
    }
    if (flags.use_dvq) {
      merge_zvq = MergeUnit<S>(flags.merge, 8 * c, rng);
      zvq_norm = GroupNormLayer<S>(8 * c);
      zvq_head = Conv2dLayer<S>(8 * c, n_z, 3, 1, 1);
      zvq_head.init_he(rng);
      gt_encoder = VqEncoder<S>(vq_base, n_z, rng);
      vq_decoder = VqDecoder<S>(vq_base, n_z, rng);
      codebook = OverlappedCodebook<S>(K, n_z, 0);
      proj_vq4 = Conv2dLayer<S>(8 * vq_base, 4 * c, 1, 1, 0);
      proj_vq4.init_he(rng);
      proj_vq2 = Conv2dLayer<S>(4 * vq_base, 2 * c, 1, 1, 0);
      proj_vq2.init_he(rng);
      proj_vq1 = Conv2dLayer<S>(2 * vq_base, c, 1, 1, 0);
      proj_vq1.init_he(rng);
    }

    const int ctx4 = (flags.use_skip_context ? 4 * c : 0) +
                     (flags.use_dvq ? 4 * c : 0);
    const int ctx2 = (flags.use_skip_context ? 2 * c : 0) +
                     (flags.use_dvq ? 2 * c : 0);
    const int ctx1 =
        (flags.use_skip_context ? c : 0) + (flags.use_dvq ? c : 0);
    df_rb4 = ResBlock<S>(4 * c, 4 * c, rng);
    fuse4 = FuseStage<S>(4 * c, ctx4, flags.use_rf, rng);
    up42 = Conv2dLayer<S>(4 * c, 2 * c, 3, 1, 1);
    up42.init_he(rng);
    df_rb2 = ResBlock<S>(2 * c, 2 * c, rng);
    fuse2 = FuseStage<S>(2 * c, ctx2, flags.use_rf, rng);
    up21 = Conv2dLayer<S>(2 * c, c, 3, 1, 1);
    up21.init_he(rng);
    df_rb1 = ResBlock<S>(c, c, rng);
    fuse1 = FuseStage<S>(c, ctx1, flags.use_rf, rng);
    out_norm = GroupNormLayer<S>(c);
    out_conv = Conv2dLayer<S>(c, 3, 3, 1, 1);
    out_conv.init_he(rng);
  }

  void freeze_vq_parts() {
    if (!flags.use_dvq) return;
    ParamRegistry<S> reg;
    gt_encoder.register_params(reg, "e");
    vq_decoder.register_params(reg, "d");
    reg.add("cb", codebook.codes);
    reg.freeze_all();
  }

  ParamRegistry<S> trainable_params() {
    ParamRegistry<S> reg;
    for (int i = 0; i < 3; ++i)
      stems[std::size_t(i)].register_params(
          reg, "stem" + std::to_string(i + 1));
    if (flags.use_pa) {
      pa1.register_params(reg, "pa1");
      pa3.register_params(reg, "pa3");
    } else {
      pre1.register_params(reg, "pre1");
      pre3.register_params(reg, "pre3");
    }
    pre2.register_params(reg, "pre2");
    for (std::size_t i = 0; i < encoders.size(); ++i)
      encoders[i].register_params(reg, "enc" + std::to_string(i + 1));
    merge_zm.register_params(reg, "merge_zm");
    if (flags.use_skip_context) {
      merge_u1.register_params(reg, "merge_u1");
      merge_u2.register_params(reg, "merge_u2");
      merge_u4.register_params(reg, "merge_u4");
    }
    if (flags.use_dvq) {
      merge_zvq.register_params(reg, "merge_zvq");
      zvq_norm.register_params(reg, "zvq_norm");
      zvq_head.register_params(reg, "zvq_head");
      proj_vq4.register_params(reg, "proj_vq4");
      proj_vq2.register_params(reg, "proj_vq2");
      proj_vq1.register_params(reg, "proj_vq1");
    }
    df_rb4.register_params(reg, "df_rb4");
    fuse4.register_params(reg, "fuse4");
    up42.register_params(reg, "up42");
    df_rb2.register_params(reg, "df_rb2");
    fuse2.register_params(reg, "fuse2");
    up21.register_params(reg, "up21");
    df_rb1.register_params(reg, "df_rb1");
    fuse1.register_params(reg, "fuse1");
    out_norm.register_params(reg, "out_norm");
    out_conv.register_params(reg, "out_conv");
    return reg;
  }

  ParamRegistry<S> frozen_params() {
    ParamRegistry<S> reg;
    if (flags.use_dvq) {
      gt_encoder.register_params(reg, "frozen.encoder");
      vq_decoder.register_params(reg, "frozen.decoder");
      reg.add("frozen.codebook.codes", codebook.codes);
    }
    return reg;
  }

  HdrForward<S> forward(Tape<S>& t, const std::array<Tensor<S>, 3>& inputs) {
    check_arg(inputs[0].h % 8 == 0 && inputs[0].w % 8 == 0,
              "HdrModel: input dims must be divisible by 8");
    for (const auto& in : inputs)
      check_arg(in.c == 6, "HdrModel: expected 6-channel frame inputs");

    std::array<Var, 3> f;
    for (int i = 0; i < 3; ++i)
      f[std::size_t(i)] =
          stems[std::size_t(i)](t, t.leaf(inputs[std::size_t(i)], false));

    Var a1 = flags.use_pa ? pa1(t, f[0], f[1]) : pre1(t, f[0]);
    Var a2 = pre2(t, f[1]);
    Var a3 = flags.use_pa ? pa3(t, f[2], f[1]) : pre3(t, f[2]);

    auto enc = [&](int i, Var x) {
      return encoders[flags.shared_encoders ? 0 : std::size_t(i)](t, x);
    };
    auto e1 = enc(0, a1);
    auto e2 = enc(1, a2);
    auto e3 = enc(2, a3);

    HdrForward<S> out;
    Var z_m = merge_zm(t, e1.quarter, e2.quarter, e3.quarter);
    out.zm_h = t.val(z_m).h;
    out.zm_w = t.val(z_m).w;

    std::optional<Var> u1, u2, u4;
    if (flags.use_skip_context) {
      u4 = merge_u4(t, e1.quarter, e2.quarter, e3.quarter);
      u2 = merge_u2(t, e1.half, e2.half, e3.half);
      u1 = merge_u1(t, e1.full, e2.full, e3.full);
    }

    std::optional<Var> vq4, vq2, vq1;
    if (flags.use_dvq) {
      Var m8 = merge_zvq(t, e1.eighth, e2.eighth, e3.eighth);
      out.z_vq = zvq_head(t, silu(t, zvq_norm(t, m8)));
      out.zvq_h = t.val(out.z_vq).h;
      out.zvq_w = t.val(out.z_vq).w;
      out.z_indices = nearest_code_indices(
          t.val(out.z_vq), codebook, SegmentRange{0, codebook.K});
      Var gathered = gather_rows(t, t.param(codebook.codes), out.z_indices,
                                 out.zvq_h, out.zvq_w);
      Var z_q = straight_through(t, out.z_vq, gathered);
      auto taps = vq_decoder.features(t, z_q);
      vq4 = proj_vq4(t, upsample_nearest(t, taps.eighth, 2));
      vq2 = proj_vq2(t, upsample_nearest(t, taps.quarter, 2));
      vq1 = proj_vq1(t, upsample_nearest(t, taps.half, 2));
    }

    auto ctx = [&](std::optional<Var> u, std::optional<Var> vq)
        -> std::optional<Var> {
      if (u && vq) return concat_c(t, *u, *vq);
      if (u) return u;
      if (vq) return vq;
      return std::nullopt;
    };

    Var x = df_rb4(t, z_m);
    x = fuse4(t, x, ctx(u4, vq4));
    x = df_rb2(t, up42(t, upsample_nearest(t, x, 2)));
    x = fuse2(t, x, ctx(u2, vq2));
    x = df_rb1(t, up21(t, upsample_nearest(t, x, 2)));
    x = fuse1(t, x, ctx(u1, vq1));
    out.h_hat = sigmoid(t, out_conv(t, silu(t, out_norm(t, x))));
    return out;
  }

  // Ground-truth latent: the frozen step-1 encoder's output quantized
  // against the full codebook. Pure value computation, no gradients.
  Tensor<S> ground_truth_latent(const HdrImage<S>& hdr) {
    check_state(flags.use_dvq, "ground_truth_latent: D_VQ branch disabled");
    Tape<S> t;
    Var z = gt_encoder(t, t.leaf(hdr.pixels, false));
    return quantize(t.val(z), codebook, {4}).quantized;
  }
};

template <typename S>
struct HdrLossVars {
  Var rec, per, map, total;
};

template <typename S>
HdrLossVars<S> hdr_losses(Tape<S>& t, Var h_hat, const Tensor<S>& target,
                          Var z_vq, const Tensor<S>* z_gt,
                          PerceptualExtractor<S>& phi, S mu, S lambda_per,
                          S lambda_map) {
  HdrLossVars<S> L;
  Var tm_gt = mu_compress(t, clamp01(t, t.leaf(target, false)), mu);
  Var tm_hat = mu_compress(t, clamp01(t, h_hat), mu);
  L.rec = l1_mean(t, tm_gt, tm_hat);
  L.per = phi.distance(t, tm_gt, tm_hat);
  L.total = add(t, L.rec, scale(t, L.per, lambda_per));
  if (z_vq.valid() && z_gt) {
    L.map = mse_mean(t, z_vq, t.leaf(*z_gt, false));
    L.total = add(t, L.total, scale(t, L.map, lambda_map));
  }
  return L;
}

// ---- Checkpoints ------------------------------------------------------------

template <typename S>
void save_hdr_checkpoint(const std::filesystem::path& dir, HdrModel<S>& model,
                         PerceptualExtractor<S>& phi,
                         CheckpointManifest manifest) {
  CheckpointWriter writer(dir);
  ParamRegistry<S> reg = model.trainable_params();
  reg.merge(model.frozen_params(), "");
  phi.register_params(reg, "phi");
  WeightStore::from_registry(reg).save(writer.staging_dir() / "weights.bin");
  if (model.flags.use_dvq)
    save_codebook(model.codebook, writer.staging_dir() / "codebook.f32",
                  writer.staging_dir() / "codebook.manifest");
  manifest.kind = "hdr";
  write_manifest(writer.staging_dir(), manifest);
  writer.commit();
}

template <typename S>
struct HdrBundle {
  HdrModel<S> model;
  PerceptualExtractor<S> phi;
  CheckpointManifest manifest;
  HdrTrainConfig cfg;
};

template <typename S>
HdrBundle<S> load_hdr_checkpoint(const std::filesystem::path& dir) {
  HdrBundle<S> bundle;
  bundle.manifest = read_manifest(dir);
  if (bundle.manifest.kind != "hdr")
    throw CheckpointMismatch("checkpoint at " + dir.string() +
                             " is not a step-2 checkpoint");
  const auto& cj = bundle.manifest.config;
  if (!cj.contains("hdr") || !cj.contains("olc_arch"))
    throw CheckpointMismatch("step-2 manifest is missing config echoes");
  bundle.cfg =
      parse_run_config(nlohmann::json{{"hdr", cj.at("hdr")}}).hdr.value();
  const auto& arch = cj.at("olc_arch");
  Rng rng(0);
  bundle.model = HdrModel<S>(
      flags_from_config(bundle.cfg), bundle.cfg.base_width,
      arch.value("base_width", 0), arch.value("code_dim", 0),
      arch.value("codebook_size", 4), rng);
  bundle.phi = PerceptualExtractor<S>(0);

  ParamRegistry<S> reg = bundle.model.trainable_params();
  reg.merge(bundle.model.frozen_params(), "");
  bundle.phi.register_params(reg, "phi");
  try {
    WeightStore::load(dir / "weights.bin").apply_to(reg);
  } catch (const std::runtime_error& e) {
    throw CheckpointMismatch(e.what());
  }
  if (bundle.model.flags.use_dvq)
    bundle.model.codebook = load_codebook<S>(dir / "codebook.f32",
                                             dir / "codebook.manifest");
  bundle.model.freeze_vq_parts();
  bundle.phi.freeze();
  return bundle;
}

// ---- Training ----------------------------------------------------------------

struct HdrStepStats {
  std::int64_t step = 0;
  double rec = 0, per = 0, map = 0, total = 0;
};

template <typename S>
struct HdrTrainResult {
  HdrModel<S> model;
  PerceptualExtractor<S> phi;
  std::vector<double> loss_curve;
  double final_psnr_mu = 0.0;
  std::int64_t steps_run = 0;
};

// Full-image prediction; inputs larger than `tile` are processed in tiles
// with 32-pixel overlap and linear blending.
template <typename S>
Tensor<S> infer_hdr(HdrModel<S>& model, const ExposureStack<S>& stack,
                    S gamma = S(2.2), int tile = 256, int overlap = 32) {
  const int h = stack.frames[0].pixels.h, w = stack.frames[0].pixels.w;
  check_arg(h % 8 == 0 && w % 8 == 0,
            "infer_hdr: input dims must be divisible by 8");
  auto inputs = build_inputs(stack, gamma);
  if (h <= tile && w <= tile) {
    Tape<S> t;
    return t.val(model.forward(t, inputs).h_hat);
  }

  check_arg(tile % 8 == 0 && overlap % 8 == 0 && overlap < tile,
            "infer_hdr: tile and overlap must be multiples of 8");
  const int step = tile - overlap;
  auto starts = [&](int extent) {
    std::vector<int> s;
    for (int p = 0;; p += step) {
      if (p + tile >= extent) {
        s.push_back(extent - tile);
        break;
      }
      s.push_back(p);
    }
    return s;
  };
  Tensor<S> num(h, w, 3);
  Tensor<S> den(h, w, 1);
  const S ramp_w = S(overlap + 1);
  for (int y0 : starts(h))
    for (int x0 : starts(w)) {
      std::array<Tensor<S>, 3> tile_in;
      for (int i = 0; i < 3; ++i)
        tile_in[std::size_t(i)] =
            detail::crop(inputs[std::size_t(i)], y0, x0, tile);
      Tape<S> t;
      Tensor<S> pred = t.val(model.forward(t, tile_in).h_hat);
      for (int y = 0; y < tile; ++y)
        for (int x = 0; x < tile; ++x) {
          const S wy = std::min({S(1), S(y + 1) / ramp_w,
                                 S(tile - y) / ramp_w});
          const S wx = std::min({S(1), S(x + 1) / ramp_w,
                                 S(tile - x) / ramp_w});
          const S wgt = wy * wx;
          den.at(y0 + y, x0 + x, 0) += wgt;
          for (int ch = 0; ch < 3; ++ch)
            num.at(y0 + y, x0 + x, ch) += wgt * pred.at(y, x, ch);
        }
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        num.at(y, x, ch) /= den.at(y, x, 0);
  return num;
}

template <typename S>
double hdr_psnr_mu(HdrModel<S>& model, const std::vector<Scene<S>>& scenes,
                   S mu, S gamma) {
  double acc = 0.0;
  int n = 0;
  for (const auto& scene : scenes) {
    if (!scene.ground_truth) continue;
    HdrImage<S> gt = *scene.ground_truth;
    gt.normalize_peak();
    Tensor<S> pred = infer_hdr(model, scene.stack, gamma);
    acc += double(psnr_mu(pred, gt.pixels, mu));
    ++n;
  }
  return n ? acc / n : 0.0;
}

// Step-2 training. The step-1 bundle supplies the frozen encoder, decoder,
// codebook and the perceptual extractor; only the HDR network trains.
template <typename S>
HdrTrainResult<S> train_hdr(
    const HdrTrainConfig& cfg, const std::vector<Scene<S>>& scenes,
    OlcBundle<S>& step1, std::uint64_t seed,
    const std::filesystem::path& out_dir = {},
    const nlohmann::json& config_echo = nlohmann::json::object(),
    const std::function<void(const HdrStepStats&)>& on_step = nullptr,
    std::int64_t eval_interval = 0,
    const std::function<bool(HdrModel<S>&, std::int64_t)>& periodic_eval =
        nullptr) {
  auto pool = detail::build_patch_pool(scenes, cfg.patch_size,
                                       cfg.patch_stride);

  Rng rng(seed);
  HdrTrainResult<S> result;
  result.model = HdrModel<S>(flags_from_config(cfg), cfg.base_width,
                             step1.cfg.base_width, step1.cfg.code_dim,
                             step1.cfg.codebook_size, rng);
  if (result.model.flags.use_dvq) {
    // Copy the pre-trained pieces and freeze them.
    ParamRegistry<S> dst;
    result.model.gt_encoder.register_params(dst, "encoder");
    result.model.vq_decoder.register_params(dst, "decoder");
    ParamRegistry<S> src;
    step1.model.encoder.register_params(src, "encoder");
    step1.model.decoder.register_params(src, "decoder");
    check_state(src.items.size() == dst.items.size(),
                "train_hdr: step-1 architecture mismatch");
    for (std::size_t i = 0; i < src.items.size(); ++i) {
      if (!src.items[i].second->value.same_shape(dst.items[i].second->value))
        throw CheckpointMismatch(
            "train_hdr: step-1 checkpoint has incompatible shapes (wrong "
            "n_z or base width)");
      dst.items[i].second->value = src.items[i].second->value;
      dst.items[i].second->grad = zeros_like(dst.items[i].second->value);
    }
    result.model.codebook = step1.model.codebook;
    result.model.freeze_vq_parts();
  }
  result.phi = step1.phi;
  result.phi.freeze();

  ParamRegistry<S> reg = result.model.trainable_params();
  Adam<S> opt(S(cfg.lr));
  opt.attach(reg);

  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);

  auto write_ckpt = [&](std::int64_t step, const std::string& name,
                        double psnr_val) {
    if (out_dir.empty()) return;
    CheckpointManifest man;
    man.step = step;
    man.seed = seed;
    man.config = config_echo;
    if (!man.config.contains("hdr")) man.config["hdr"] = to_json(cfg);
    man.config["olc_arch"] = {{"base_width", step1.cfg.base_width},
                              {"code_dim", step1.cfg.code_dim},
                              {"codebook_size", step1.cfg.codebook_size}};
    man.metrics = {{"loss", result.loss_curve.empty()
                                ? 0.0
                                : result.loss_curve.back()}};
    if (psnr_val > 0) man.metrics["train_psnr_mu"] = psnr_val;
    save_hdr_checkpoint(out_dir / name, result.model, result.phi, man);
  };

  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    opt.zero_grad();
    Tape<S> t;
    Var total{};
    HdrStepStats stats;
    stats.step = step;
    for (int b = 0; b < cfg.batch_size; ++b) {
      Scene<S> patch = augment(pool[pick(rng)], rng);
      auto inputs = build_inputs(patch.stack, S(cfg.gamma));
      auto fwd = result.model.forward(t, inputs);
      std::optional<Tensor<S>> z_gt;
      if (result.model.flags.use_dvq)
        z_gt = result.model.ground_truth_latent(*patch.ground_truth);
      auto L = hdr_losses(t, fwd.h_hat, patch.ground_truth->pixels, fwd.z_vq,
                          z_gt ? &*z_gt : nullptr, result.phi, S(cfg.mu),
                          S(cfg.lambda_per), S(cfg.lambda_map));
      total = total.valid() ? add(t, total, L.total) : L.total;
      stats.rec += double(t.val(L.rec).data[0]);
      stats.per += double(t.val(L.per).data[0]);
      if (L.map.valid()) stats.map += double(t.val(L.map).data[0]);
    }
    total = scale(t, total, S(1) / S(cfg.batch_size));
    const double total_val = double(t.val(total).data[0]);
    if (!std::isfinite(total_val))
      throw std::runtime_error("train_hdr: non-finite loss at step " +
                               std::to_string(step) + " (rec=" +
                               std::to_string(stats.rec) + ", per=" +
                               std::to_string(stats.per) + ", map=" +
                               std::to_string(stats.map) + ")");
    t.backward(total);
    opt.step();

    stats.rec /= cfg.batch_size;
    stats.per /= cfg.batch_size;
    stats.map /= cfg.batch_size;
    stats.total = total_val;
    result.loss_curve.push_back(total_val);
    result.steps_run = step;
    if (on_step) on_step(stats);
    if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 &&
        step != cfg.steps)
      write_ckpt(step, "checkpoint-" + std::to_string(step), 0.0);
    if (periodic_eval && eval_interval > 0 && step % eval_interval == 0 &&
        periodic_eval(result.model, step))
      break;
  }

  result.final_psnr_mu =
      hdr_psnr_mu(result.model, scenes, S(cfg.mu), S(cfg.gamma));
  write_ckpt(result.steps_run, "checkpoint", result.final_psnr_mu);
  return result;
}

}  // namespace olc
