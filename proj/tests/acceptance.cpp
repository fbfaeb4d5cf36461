// Acceptance suite: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion. Exit status is the number of failures.
// An optional list of criterion numbers on the command line restricts the
// run (e.g. `olchdr_acceptance 1 4 8`).

#include <chrono>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "grad_check.hpp"
#include "olc/hdrnet.hpp"
#include "olc/report.hpp"

using namespace olc;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 2) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(prec) << v;
  return ss.str();
}

std::vector<Scene<float>> synth_set(int count, int size, int motion_px,
                                    double saturation, std::uint64_t seed0) {
  SynthConfig cfg;
  cfg.count = count;
  cfg.size = size;
  cfg.motion_px = motion_px;
  cfg.saturation_fraction = saturation;
  std::vector<Scene<float>> scenes;
  for (int i = 0; i < count; ++i)
    scenes.push_back(synth_scene<float>(cfg, seed0 + std::uint64_t(i)));
  return scenes;
}

OlcTrainConfig overfit_olc_config() {
  OlcTrainConfig cfg;
  cfg.codebook_size = 64;
  cfg.code_dim = 8;
  cfg.base_width = 16;
  cfg.disc_width = 16;
  cfg.patch_size = 32;
  cfg.patch_stride = 32;
  cfg.batch_size = 4;
  cfg.steps = 5000;
  cfg.lr_generator = 5e-4;
  cfg.lambda_per = 0.05;
  cfg.lambda_adv = 0.0;
  return cfg;
}

HdrTrainConfig overfit_hdr_config() {
  HdrTrainConfig cfg;
  cfg.base_width = 8;
  cfg.patch_size = 32;
  cfg.patch_stride = 32;
  cfg.batch_size = 2;
  cfg.steps = 10000;
  return cfg;
}

// ---- 1: codebook window algebra + membership --------------------------------

Outcome criterion1() {
  const auto t0 = Clock::now();
  for (int K : {8, 64, 1024}) {
    const int alpha = K / 4;
    std::array<SegmentRange, 4> r;
    for (int eta = 1; eta <= 4; ++eta)
      r[std::size_t(eta - 1)] = segment_range({eta}, K);
    auto overlap = [](SegmentRange a, SegmentRange b) {
      return std::max(0, std::min(a.end, b.end) - std::max(a.begin, b.begin));
    };
    for (int eta = 1; eta <= 3; ++eta)
      if (r[std::size_t(eta - 1)].size() != K / 2)
        return {false, "window size != K/2 at K=" + std::to_string(K)};
    if (overlap(r[0], r[1]) != alpha || overlap(r[1], r[2]) != alpha)
      return {false, "adjacent overlap != K/4 at K=" + std::to_string(K)};
    if (overlap(r[0], r[2]) != 0)
      return {false, "short/long windows intersect at K=" + std::to_string(K)};
    std::vector<bool> covered(std::size_t(K), false);
    for (int eta = 1; eta <= 3; ++eta)
      for (int k = r[std::size_t(eta - 1)].begin;
           k < r[std::size_t(eta - 1)].end; ++k)
        covered[std::size_t(k)] = true;
    for (bool b : covered)
      if (!b) return {false, "LDR windows do not cover the codebook"};
    if (r[3].begin != 0 || r[3].end != K)
      return {false, "HDR window is not the full book"};
  }

  // 1000 random quantizations per eta respect membership; the full-window
  // nearest distance never exceeds any partial window's.
  Rng rng(101);
  OverlappedCodebook<float> cb(64, 6, 11);
  auto dist2 = [&](const Tensor<float>& f, int j, int k) {
    float d = 0;
    for (int c = 0; c < 6; ++c) {
      const float diff = f.data[j * 6 + c] - cb.matrix()(k, c);
      d += diff * diff;
    }
    return d;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor<float> feats = Tensor<float>::uniform(2, 2, 6, rng, -0.3f, 0.3f);
    const int eta = 1 + trial % 4;
    const auto range = segment_range({eta}, cb.K);
    auto res = quantize(feats, cb, {eta});
    auto full = quantize(feats, cb, {4});
    for (std::size_t j = 0; j < res.indices.size(); ++j) {
      if (!range.contains(res.indices[j]))
        return {false, "index escaped its segment window"};
      if (dist2(feats, int(j), full.indices[j]) >
          dist2(feats, int(j), res.indices[j]) + 1e-12f)
        return {false, "full-window distance exceeded a partial window"};
    }
  }
  const double dt = seconds_since(t0);
  if (dt >= 60.0) return {false, "runtime " + fmt(dt) + "s >= 60s"};
  return {true, "K in {8,64,1024}; 1000 quantizations; " + fmt(dt, 1) + "s"};
}

// ---- 2: brute-force oracle equivalence ---------------------------------------

Outcome criterion2() {
  Rng rng(202);
  int checked = 0;
  for (int K : {16, 64}) {
    OverlappedCodebook<double> cb(K, 5, 77 + std::uint64_t(K));
    Tensor<double> feats =
        Tensor<double>::uniform(25, 20, 5, rng, -0.2, 0.2);  // 500 queries
    for (int eta = 1; eta <= 4; ++eta) {
      const auto range = segment_range({eta}, K);
      auto fast = quantize(feats, cb, {eta});
      const auto cm = cb.matrix();
      for (int j = 0; j < 500; ++j) {
        double best = std::numeric_limits<double>::max();
        int best_k = -1;
        for (int k = range.begin; k < range.end; ++k) {
          double d = 0;
          for (int c = 0; c < 5; ++c) {
            const double diff = feats.data[j * 5 + c] - cm(k, c);
            d += diff * diff;
          }
          if (d < best) {
            best = d;
            best_k = k;
          }
        }
        if (fast.indices[std::size_t(j)] != best_k)
          return {false, "mismatch vs exhaustive search at query " +
                             std::to_string(j)};
        ++checked;
      }
    }
  }
  return {true, std::to_string(checked) + " queries, exact index agreement"};
}

// ---- 3: gradient suite --------------------------------------------------------

Outcome criterion3() {
  const auto t0 = Clock::now();
  using T = Tensor<double>;
  std::string fail;
  auto expect = [&](const olc::testing::GradCheckResult& r,
                    const std::string& what) {
    if (!r.ok() && fail.empty())
      fail = what + " (max_abs_diff=" + fmt(r.max_abs_diff, 8) + ")";
  };

  // Straight-through: analytic gradient w.r.t. the encoder output equals
  // the FD gradient of the same loss taken at the quantized value.
  {
    Rng rng(31);
    T zbar = T::uniform(4, 4, 3, rng, -1, 1);
    T zhat = T::uniform(4, 4, 3, rng, -1, 1);
    Tape<double> t;
    Var vb = t.leaf(zbar, true);
    Var st = straight_through(t, vb, t.leaf(zhat, false));
    t.backward(mean_all(t, mul(t, st, silu(t, st))));
    expect(olc::testing::compare_grad_fd(
               [](const T& p) {
                 Tape<double> t2;
                 Var v = t2.leaf(p, true);
                 return t2.val(mean_all(t2, mul(t2, v, silu(t2, v)))).data[0];
               },
               zhat, t.grad(vb)),
           "straight-through estimator");
  }

  // VQ loss routing on gathered codes.
  {
    Rng rng(32);
    T codes = T::uniform(8, 1, 3, rng, -0.5, 0.5);
    T feats = T::uniform(4, 4, 3, rng, -0.5, 0.5);
    std::vector<int> idx;
    for (int j = 0; j < 16; ++j) idx.push_back((j * 5) % 8);
    const double beta = 0.25;
    Tape<double> t;
    Var vc = t.leaf(codes, true);
    Var vf = t.leaf(feats, true);
    auto L = vq_loss(t, vf, gather_rows(t, vc, idx, 4, 4), beta);
    t.backward(L.total);
    Tape<double> tv;
    const T zhat_val = tv.val(gather_rows(tv, tv.leaf(codes, false), idx, 4, 4));
    expect(olc::testing::compare_grad_fd(
               [&](const T& p) {
                 Tape<double> tt;
                 Var zh = gather_rows(tt, tt.leaf(p, true), idx, 4, 4);
                 return tt.val(mse_mean(tt, tt.leaf(feats, false), zh))
                     .data[0];
               },
               codes, t.grad(vc)),
           "vq codebook-term routing");
    expect(olc::testing::compare_grad_fd(
               [&](const T& p) {
                 Tape<double> tt;
                 Var f2 = tt.leaf(p, true);
                 return beta * tt.val(mse_mean(tt, tt.leaf(zhat_val, false),
                                               f2))
                                   .data[0];
               },
               feats, t.grad(vf)),
           "vq commitment-term routing");
  }

  // Reconstruction + perceptual losses in the tone-mapped domain, 16x16.
  // Both are L1-based, so the evaluation point must sit away from every
  // |.| kink; the margin is verified before differencing.
  {
    PerceptualExtractor<double> phi(9);
    const double h_fd = 1e-6;
    T target, xh;
    bool found = false;
    for (std::uint64_t seed = 33; seed < 33 + 20 && !found; ++seed) {
      Rng rng(seed);
      T cand_target = T::uniform(16, 16, 3, rng, 0.1, 0.9);
      T cand_xh = T::uniform(16, 16, 3, rng, 0.1, 0.9);
      Tape<double> t;
      Var tm_t =
          mu_compress(t, clamp01(t, t.leaf(cand_target, false)), 5000.0);
      Var tm_h = mu_compress(t, clamp01(t, t.leaf(cand_xh, false)), 5000.0);
      double margin = (t.val(tm_t).data - t.val(tm_h).data).abs().minCoeff();
      auto ft = phi.features(t, tm_t);
      auto fh = phi.features(t, tm_h);
      for (int l = 0; l < 3; ++l) {
        const auto diff =
            (t.val(ft[std::size_t(l)]).data - t.val(fh[std::size_t(l)]).data)
                .abs();
        for (std::int64_t i = 0; i < diff.size(); ++i)
          if (diff[i] > 0.0) margin = std::min(margin, diff[i]);
      }
      if (margin > 20.0 * h_fd) {
        target = std::move(cand_target);
        xh = std::move(cand_xh);
        found = true;
      }
    }
    if (!found)
      return {false, "no generic FD evaluation point away from L1 kinks"};
    auto loss = [&](const T& p) {
      Tape<double> t;
      Var x_hat = t.leaf(p, true);
      Var tm_t = mu_compress(t, clamp01(t, t.leaf(target, false)), 5000.0);
      Var tm_h = mu_compress(t, clamp01(t, x_hat), 5000.0);
      Var l = add(t, l1_mean(t, tm_t, tm_h),
                  scale(t, phi.distance(t, tm_t, tm_h), 0.1));
      t.backward(l);
      return std::pair{t.val(l).data[0], t.grad(x_hat)};
    };
    auto [v0, g] = loss(xh);
    (void)v0;
    expect(olc::testing::compare_grad_fd(
               [&](const T& p) { return loss(p).first; }, xh, g, 1e-4, 1e-7,
               h_fd),
           "rec+perceptual loss");
  }

  // Mapping loss.
  {
    Rng rng(34);
    T z_gt = T::uniform(4, 4, 8, rng, -0.5, 0.5);
    T z_vq = T::uniform(4, 4, 8, rng, -0.5, 0.5);
    auto loss = [&](const T& p) {
      Tape<double> t;
      Var v = t.leaf(p, true);
      Var l = mse_mean(t, v, t.leaf(z_gt, false));
      t.backward(l);
      return std::pair{t.val(l).data[0], t.grad(v)};
    };
    auto [v0, g] = loss(z_vq);
    (void)v0;
    expect(olc::testing::compare_grad_fd(
               [&](const T& p) { return loss(p).first; }, z_vq, g),
           "mapping loss");
  }

  // RF block gradients, both at the zero-initialized state and after
  // perturbing the affine head.
  {
    Rng rng(35);
    for (bool perturb : {false, true}) {
      RfUnit<double> rf(4, 8, rng);
      if (perturb) {
        Rng r2(36);
        rf.conv2.init_he(r2, 0.2);
      }
      T f = T::uniform(8, 8, 4, rng, -1, 1);
      T ctx = T::uniform(8, 8, 8, rng, -1, 1);
      auto loss = [&](const T& p) {
        Tape<double> t;
        Var v = t.leaf(p, true);
        Var o = rf(t, v, t.leaf(ctx, false));
        Var l = mean_all(t, mul(t, o, silu(t, o)));
        t.backward(l);
        return std::pair{t.val(l).data[0], t.grad(v)};
      };
      auto [v0, g] = loss(f);
      (void)v0;
      expect(olc::testing::compare_grad_fd(
                 [&](const T& p) { return loss(p).first; }, f, g),
             perturb ? "RF block (perturbed head)" : "RF block (zero head)");
    }
  }

  const double dt = seconds_since(t0);
  if (!fail.empty()) return {false, fail};
  if (dt >= 300.0) return {false, "runtime " + fmt(dt) + "s >= 5 min"};
  return {true, "ST, VQ routing, rec/per, mapping, RF vs FD; " +
                    fmt(dt, 1) + "s"};
}

// ---- 4: radiometry exactness ---------------------------------------------------

Outcome criterion4() {
  Rng rng(404);
  const double gamma = 2.2;
  const std::array<double, 3> times = {0.25, 1.0, 4.0};
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<double> radiance =
        Tensor<double>::uniform(16, 16, 3, rng, 1e-5, 0.999 / times[2]);
    std::array<LdrFrame<double>, 3> frames;
    for (int i = 0; i < 3; ++i) {
      frames[std::size_t(i)].exposure_time = times[std::size_t(i)];
      frames[std::size_t(i)].pixels = radiance;
      for (std::int64_t j = 0; j < radiance.size(); ++j)
        frames[std::size_t(i)].pixels.data[j] = std::min(
            1.0, std::pow(radiance.data[j] * times[std::size_t(i)],
                          1.0 / gamma));
    }
    auto fused = fuse_exposures(frames, gamma);
    const double rel = ((fused.pixels.data - radiance.data).abs() /
                        radiance.data.max(1e-12))
                           .maxCoeff();
    if (rel > 1e-6)
      return {false, "fusion relative error " + fmt(rel, 9) + " > 1e-6"};
  }

  ToneMapParams<double> p;
  if (tonemap(Tensor<double>::scalar(0.0), p).data[0] != 0.0)
    return {false, "tonemap(0) != 0"};
  if (tonemap(Tensor<double>::scalar(1.0), p).data[0] != 1.0)
    return {false, "tonemap(1) != 1"};
  double prev = -1.0;
  for (int i = 0; i <= 10000; ++i) {
    const double x = double(i) / 10000.0;
    const double y = tonemap(Tensor<double>::scalar(x), p).data[0];
    if (y <= prev) return {false, "tonemap not strictly increasing"};
    prev = y;
  }
  return {true, "100 fusions <= 1e-6; tonemap monotone, exact endpoints"};
}

// ---- 5: step-1 overfit ---------------------------------------------------------

Outcome criterion5() {
  const auto t0 = Clock::now();
  auto scenes = synth_set(16, 32, 0, 0.1, 7);
  OlcTrainConfig cfg = overfit_olc_config();
  double best = 0.0;
  std::int64_t reached_at = 0;
  auto result = train_olc<float>(
      cfg, scenes, 7, {}, {}, nullptr, 500,
      [&](OlcVqgan<float>& model, std::int64_t step) {
        const double p =
            reconstruction_psnr_mu(model, scenes, float(cfg.mu),
                                   float(cfg.gamma));
        best = std::max(best, p);
        if (p >= 30.0) {
          reached_at = step;
          return true;
        }
        return false;
      });
  if (reached_at == 0) {
    best = std::max(best, result.final_psnr_mu);
    reached_at = result.steps_run;
  }
  const double dt = seconds_since(t0);
  if (best < 30.0)
    return {false, "train PSNR-mu " + fmt(best) + " dB < 30 dB at step " +
                       std::to_string(result.steps_run)};
  if (dt >= 1800.0) return {false, "runtime " + fmt(dt) + "s >= 30 min"};
  return {true, fmt(best) + " dB at step " + std::to_string(reached_at) +
                    "; " + fmt(dt / 60.0, 1) + " min"};
}

// ---- 6: step-2 overfit and the PA ablation margin ------------------------------

Outcome criterion6() {
  // (a) aligned frames: >= 35 dB within 10k steps.
  auto aligned = synth_set(8, 32, 0, 0.1, 11);
  HdrTrainConfig cfg = overfit_hdr_config();
  OlcTrainConfig s1cfg = overfit_olc_config();
  s1cfg.steps = 2500;
  auto s1 = train_olc<float>(s1cfg, aligned, 11);
  OlcBundle<float> bundle;
  bundle.model = std::move(s1.model);
  bundle.phi = std::move(s1.phi);
  bundle.cfg = s1cfg;

  double best = 0.0;
  std::int64_t reached_at = 0;
  auto result = train_hdr<float>(
      cfg, aligned, bundle, 11, {}, {}, nullptr, 500,
      [&](HdrModel<float>& model, std::int64_t step) {
        const double p = hdr_psnr_mu(model, aligned, float(cfg.mu),
                                     float(cfg.gamma));
        best = std::max(best, p);
        if (p >= 35.0) {
          reached_at = step;
          return true;
        }
        return false;
      });
  if (reached_at == 0) {
    best = std::max(best, result.final_psnr_mu);
    reached_at = result.steps_run;
  }
  if (best < 35.0)
    return {false, "aligned overfit " + fmt(best) + " dB < 35 dB at step " +
                       std::to_string(result.steps_run)};

  // (b) 2-pixel motion: PA-enabled beats PA-ablated by >= 1 dB (median of 3
  // training seeds on a fixed misaligned dataset).
  auto moved = synth_set(8, 32, 2, 0.1, 21);
  HdrTrainConfig mcfg = overfit_hdr_config();
  mcfg.steps = 2000;
  std::vector<double> deltas;
  std::string per_seed;
  for (std::uint64_t seed : {31ull, 32ull, 33ull}) {
    HdrTrainConfig on = mcfg;
    on.use_pa = true;
    HdrTrainConfig off = mcfg;
    off.use_pa = false;
    auto r_on = train_hdr<float>(on, moved, bundle, seed);
    auto r_off = train_hdr<float>(off, moved, bundle, seed);
    deltas.push_back(r_on.final_psnr_mu - r_off.final_psnr_mu);
    per_seed += " " + fmt(r_on.final_psnr_mu, 1) + "/" +
                fmt(r_off.final_psnr_mu, 1);
  }
  std::sort(deltas.begin(), deltas.end());
  const double median = deltas[1];
  if (median < 1.0)
    return {false, "PA median margin " + fmt(median) + " dB < 1 dB (on/off:" +
                       per_seed + ")"};
  return {true, "aligned " + fmt(best) + " dB at step " +
                    std::to_string(reached_at) + "; PA margin " +
                    fmt(median) + " dB (on/off:" + per_seed + ")"};
}

// ---- 7: OLC vs vanilla codebook usage -----------------------------------------

Outcome criterion7() {
  auto train_scenes = synth_set(16, 32, 0, 0.1, 7);
  auto heldout = synth_set(8, 32, 0, 0.1, 900);
  OlcTrainConfig cfg = overfit_olc_config();
  cfg.steps = 1500;

  std::vector<int> used_olc, used_vanilla;
  for (std::uint64_t seed : {51ull, 52ull, 53ull}) {
    for (bool vanilla : {false, true}) {
      OlcTrainConfig c = cfg;
      c.vanilla_codebook = vanilla;
      auto r = train_olc<float>(c, train_scenes, seed);
      std::vector<Tensor<float>> inputs;
      for (const auto& scene : heldout) {
        HdrImage<float> gt = *scene.ground_truth;
        gt.normalize_peak();
        inputs.push_back(sample_input(scene.stack, gt, {4}));
      }
      auto hist = codebook_usage(r.model, inputs, {4});
      std::int64_t total = 0;
      for (auto h : hist) total += h;
      const std::int64_t expected = std::int64_t(heldout.size()) * 4 * 4;
      if (total != expected)
        return {false, "histogram sum " + std::to_string(total) +
                           " != latent positions " +
                           std::to_string(expected)};
      (vanilla ? used_vanilla : used_olc)
          .push_back(used_code_count(hist));
    }
  }
  auto median3 = [](std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v[1];
  };
  const int mo = median3(used_olc), mv = median3(used_vanilla);
  std::string detail = "used codes olc={";
  for (int u : used_olc) detail += std::to_string(u) + ",";
  detail += "} vanilla={";
  for (int u : used_vanilla) detail += std::to_string(u) + ",";
  detail += "}";
  if (mo < mv)
    return {false, "median OLC usage " + std::to_string(mo) +
                       " < vanilla " + std::to_string(mv) + "; " + detail};
  return {true, detail + "; medians " + std::to_string(mo) +
                    " >= " + std::to_string(mv)};
}

// ---- 8: freeze and determinism contracts ---------------------------------------

Outcome criterion8() {
  auto scenes = synth_set(4, 32, 0, 0.1, 61);
  OlcTrainConfig s1cfg = overfit_olc_config();
  s1cfg.steps = 100;
  auto a = train_olc<float>(s1cfg, scenes, 13);
  auto b = train_olc<float>(s1cfg, scenes, 13);
  if (a.loss_curve != b.loss_curve)
    return {false, "step-1 loss curves differ across identical seeds"};

  OlcBundle<float> bundle;
  bundle.model = std::move(a.model);
  bundle.phi = std::move(a.phi);
  bundle.cfg = s1cfg;

  ParamRegistry<float> pre;
  bundle.model.encoder.register_params(pre, "frozen.encoder");
  bundle.model.decoder.register_params(pre, "frozen.decoder");
  pre.add("frozen.codebook.codes", bundle.model.codebook.codes);
  const std::uint64_t hash_before = param_checksum(pre);

  HdrTrainConfig cfg = overfit_hdr_config();
  cfg.steps = 100;
  auto h1 = train_hdr<float>(cfg, scenes, bundle, 13);
  auto h2 = train_hdr<float>(cfg, scenes, bundle, 13);
  if (h1.loss_curve != h2.loss_curve)
    return {false, "step-2 loss curves differ across identical seeds"};

  auto frozen = h1.model.frozen_params();
  const std::uint64_t hash_after = param_checksum(frozen);
  if (hash_before != hash_after)
    return {false, "frozen-parameter hash changed during step-2 training"};
  return {true, "100-step bit-identical curves; frozen hash 0x" +
                    [&] {
                      std::ostringstream ss;
                      ss << std::hex << hash_after;
                      return ss.str();
                    }() + " stable"};
}

// ---- 9: end-to-end pipeline -----------------------------------------------------

Outcome criterion9() {
  const auto t0 = Clock::now();
  const fs::path out = fs::temp_directory_path() / "olc_acceptance_e2e";
  fs::remove_all(out);
  const std::string script =
      std::string(OLCHDR_SOURCE_DIR) + "/scripts/toy_pipeline.sh";
  const std::string cmd = "bash " + script + " " + out.string() + " " +
                          std::string(OLCHDR_CLI_PATH) + " > " +
                          (out / "pipeline.log").string() + " 2>&1";
  fs::create_directories(out);
  const int rc = std::system(cmd.c_str());
  if (rc != 0) return {false, "pipeline script failed; see " +
                                  (out / "pipeline.log").string()};

  // The inference product must be a readable Radiance image of scene size.
  auto pred = io::read_radiance_hdr(out / "scene_0000.hdr");
  if (pred.h != 32 || pred.w != 32 || !pred.all_finite())
    return {false, "inference output malformed"};
  if (!fs::exists(out / "scene_0000.preview.ppm"))
    return {false, "tone-mapped preview missing"};

  // The report must parse line-by-line with the documented schema.
  std::ifstream rep(out / "report.jsonl");
  if (!rep.good()) return {false, "metrics report missing"};
  std::string line;
  int scene_lines = 0;
  bool aggregate = false;
  double mean_psnr = 0;
  while (std::getline(rep, line)) {
    auto j = nlohmann::json::parse(line);
    if (j.value("schema", "") != std::string(kEvalSchema))
      return {false, "report schema tag mismatch"};
    if (j.contains("aggregate")) {
      aggregate = true;
      mean_psnr = j["mean_psnr_mu"].get<double>();
    } else {
      ++scene_lines;
    }
  }
  if (scene_lines != 8 || !aggregate)
    return {false, "report incomplete: " + std::to_string(scene_lines) +
                       " scene lines"};
  const double dt = seconds_since(t0);
  if (dt >= 3600.0) return {false, "runtime " + fmt(dt) + "s >= 1 h"};
  return {true, "synth->olc->hdr->infer->eval in " + fmt(dt / 60.0, 1) +
                    " min; mean PSNR-mu " + fmt(mean_psnr, 1) + " dB over " +
                    std::to_string(scene_lines) + " scenes"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> filter;
  for (int i = 1; i < argc; ++i) filter.insert(std::atoi(argv[i]));

  struct Entry {
    int id;
    const char* title;
    Outcome (*run)();
  };
  const Entry entries[] = {
      {1, "codebook window algebra and membership", criterion1},
      {2, "quantize matches exhaustive search exactly", criterion2},
      {3, "gradient suite vs central finite differences", criterion3},
      {4, "radiometry exactness and tone-map identities", criterion4},
      {5, "step-1 overfit reaches 30 dB PSNR-mu", criterion5},
      {6, "step-2 overfit 35 dB and PA margin >= 1 dB", criterion6},
      {7, "OLC code usage >= vanilla on held-out HDR", criterion7},
      {8, "freeze and fixed-seed determinism contracts", criterion8},
      {9, "end-to-end pipeline produces HDR and report", criterion9},
  };

  int failures = 0;
  for (const auto& e : entries) {
    if (!filter.empty() && !filter.count(e.id)) continue;
    Outcome out;
    try {
      out = e.run();
    } catch (const std::exception& ex) {
      out = {false, std::string("exception: ") + ex.what()};
    }
    std::cout << (out.pass ? "[PASS]" : "[FAIL]") << " criterion " << e.id
              << ": " << e.title << " -- " << out.detail << std::endl;
    if (!out.pass) ++failures;
  }
  return failures;
}
