#pragma once

#include <functional>
#include <optional>

#include "olc/checkpoint.hpp"
#include "olc/codebook.hpp"
#include "olc/datasets.hpp"
#include "olc/nn.hpp"

// Step 1: the VQGAN trained with the overlapped codebook on
// exposure-class-sampled LDR/HDR inputs.

namespace olc {

// Encoder: 3-downsample residual stack, widths base*{1,2,4,8}, output n_z
// channels at 1/8 spatial resolution.
template <typename S>
struct VqEncoder {
  int base = 0, n_z = 0;
  Conv2dLayer<S> stem;
  ResBlock<S> rb0, rb1, rb2, rb3;
  Conv2dLayer<S> down1, down2, down3;
  GroupNormLayer<S> out_norm;
  Conv2dLayer<S> out_conv;

  VqEncoder() = default;
  VqEncoder(int base_, int n_z_, Rng& rng) : base(base_), n_z(n_z_) {
    stem = Conv2dLayer<S>(3, base, 3, 1, 1);
    stem.init_he(rng);
    rb0 = ResBlock<S>(base, base, rng);
    down1 = Conv2dLayer<S>(base, 2 * base, 3, 2, 1);
    down1.init_he(rng);
    rb1 = ResBlock<S>(2 * base, 2 * base, rng);
    down2 = Conv2dLayer<S>(2 * base, 4 * base, 3, 2, 1);
    down2.init_he(rng);
    rb2 = ResBlock<S>(4 * base, 4 * base, rng);
    down3 = Conv2dLayer<S>(4 * base, 8 * base, 3, 2, 1);
    down3.init_he(rng);
    rb3 = ResBlock<S>(8 * base, 8 * base, rng);
    out_norm = GroupNormLayer<S>(8 * base);
    out_conv = Conv2dLayer<S>(8 * base, n_z, 3, 1, 1);
    out_conv.init_he(rng);
  }

  Var operator()(Tape<S>& t, Var x) {
    const auto& X = t.val(x);
    check_arg(X.h % 8 == 0 && X.w % 8 == 0,
              "VqEncoder: input dims must be divisible by 8");
    Var h = rb0(t, stem(t, x));
    h = rb1(t, down1(t, h));
    h = rb2(t, down2(t, h));
    h = rb3(t, down3(t, h));
    return out_conv(t, silu(t, out_norm(t, h)));
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    stem.register_params(reg, prefix + ".stem");
    rb0.register_params(reg, prefix + ".rb0");
    down1.register_params(reg, prefix + ".down1");
    rb1.register_params(reg, prefix + ".rb1");
    down2.register_params(reg, prefix + ".down2");
    rb2.register_params(reg, prefix + ".rb2");
    down3.register_params(reg, prefix + ".down3");
    rb3.register_params(reg, prefix + ".rb3");
    out_norm.register_params(reg, prefix + ".out_norm");
    out_conv.register_params(reg, prefix + ".out_conv");
  }
};

// Mirrored decoder. Intermediate features at 1/8, 1/4 and 1/2 scale are
// exposed for the HDR network's residual fusing stages.
template <typename S>
struct VqDecoder {
  int base = 0, n_z = 0;
  Conv2dLayer<S> stem;
  ResBlock<S> rb3, rb2, rb1, rb0;
  Conv2dLayer<S> up32, up21, up10;
  GroupNormLayer<S> out_norm;
  Conv2dLayer<S> out_conv;

  struct Taps {
    Var eighth, quarter, half;  // widths 8C, 4C, 2C
  };

  VqDecoder() = default;
  VqDecoder(int base_, int n_z_, Rng& rng) : base(base_), n_z(n_z_) {
    stem = Conv2dLayer<S>(n_z, 8 * base, 3, 1, 1);
    stem.init_he(rng);
    rb3 = ResBlock<S>(8 * base, 8 * base, rng);
    up32 = Conv2dLayer<S>(8 * base, 4 * base, 3, 1, 1);
    up32.init_he(rng);
    rb2 = ResBlock<S>(4 * base, 4 * base, rng);
    up21 = Conv2dLayer<S>(4 * base, 2 * base, 3, 1, 1);
    up21.init_he(rng);
    rb1 = ResBlock<S>(2 * base, 2 * base, rng);
    up10 = Conv2dLayer<S>(2 * base, base, 3, 1, 1);
    up10.init_he(rng);
    rb0 = ResBlock<S>(base, base, rng);
    out_norm = GroupNormLayer<S>(base);
    out_conv = Conv2dLayer<S>(base, 3, 3, 1, 1);
    out_conv.init_he(rng);
  }

  // Features through the 1/2-scale tap; skips the full-resolution stage.
  Taps features(Tape<S>& t, Var z) {
    Taps taps;
    Var h = rb3(t, stem(t, z));
    taps.eighth = h;
    h = rb2(t, up32(t, upsample_nearest(t, h, 2)));
    taps.quarter = h;
    h = rb1(t, up21(t, upsample_nearest(t, h, 2)));
    taps.half = h;
    return taps;
  }

  Var operator()(Tape<S>& t, Var z, Taps* out_taps = nullptr) {
    Taps taps = features(t, z);
    if (out_taps) *out_taps = taps;
    Var h = rb0(t, up10(t, upsample_nearest(t, taps.half, 2)));
    return sigmoid(t, out_conv(t, silu(t, out_norm(t, h))));
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    stem.register_params(reg, prefix + ".stem");
    rb3.register_params(reg, prefix + ".rb3");
    up32.register_params(reg, prefix + ".up32");
    rb2.register_params(reg, prefix + ".rb2");
    up21.register_params(reg, prefix + ".up21");
    rb1.register_params(reg, prefix + ".rb1");
    up10.register_params(reg, prefix + ".up10");
    rb0.register_params(reg, prefix + ".rb0");
    out_norm.register_params(reg, prefix + ".out_norm");
    out_conv.register_params(reg, prefix + ".out_conv");
  }
};

// Patch-level score map; receptive field 31px, below the training patch.
template <typename S>
struct PatchDiscriminator {
  int base = 0;
  Conv2dLayer<S> c1, c2, c3, out;

  PatchDiscriminator() = default;
  PatchDiscriminator(int base_, Rng& rng) : base(base_) {
    c1 = Conv2dLayer<S>(3, base, 3, 2, 1);
    c1.init_he(rng);
    c2 = Conv2dLayer<S>(base, 2 * base, 3, 2, 1);
    c2.init_he(rng);
    c3 = Conv2dLayer<S>(2 * base, 4 * base, 3, 2, 1);
    c3.init_he(rng);
    out = Conv2dLayer<S>(4 * base, 1, 3, 1, 1);
    out.init_he(rng);
  }

  static constexpr int receptive_field() { return 31; }

  Var operator()(Tape<S>& t, Var x) {
    Var h = leaky_relu(t, c1(t, x), S(0.2));
    h = leaky_relu(t, c2(t, h), S(0.2));
    h = leaky_relu(t, c3(t, h), S(0.2));
    return out(t, h);
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    c1.register_params(reg, prefix + ".c1");
    c2.register_params(reg, prefix + ".c2");
    c3.register_params(reg, prefix + ".c3");
    out.register_params(reg, prefix + ".out");
  }
};

// Fixed multi-layer feature map. The default is a frozen random stack so no
// external weights are required; real pre-trained weights can be plugged in
// through a checkpoint tensor file.
template <typename S>
struct PerceptualExtractor {
  Conv2dLayer<S> c1, c2, c3;

  PerceptualExtractor() = default;
  explicit PerceptualExtractor(std::uint64_t seed) {
    Rng rng(seed);
    c1 = Conv2dLayer<S>(3, 8, 3, 1, 1);
    c1.init_he(rng);
    c2 = Conv2dLayer<S>(8, 16, 3, 2, 1);
    c2.init_he(rng);
    c3 = Conv2dLayer<S>(16, 32, 3, 2, 1);
    c3.init_he(rng);
    freeze();
  }

  void freeze() {
    ParamRegistry<S> reg;
    register_params(reg, "phi");
    reg.freeze_all();
  }

  std::array<Var, 3> features(Tape<S>& t, Var x) {
    Var f1 = relu(t, c1(t, x));
    Var f2 = relu(t, c2(t, f1));
    Var f3 = relu(t, c3(t, f2));
    return {f1, f2, f3};
  }

  Var distance(Tape<S>& t, Var a, Var b) {
    auto fa = features(t, a);
    auto fb = features(t, b);
    Var d = l1_mean(t, fa[0], fb[0]);
    d = add(t, d, l1_mean(t, fa[1], fb[1]));
    return add(t, d, l1_mean(t, fa[2], fb[2]));
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    c1.register_params(reg, prefix + ".c1");
    c2.register_params(reg, prefix + ".c2");
    c3.register_params(reg, prefix + ".c3");
  }
};

// eta-sampled network input: gamma-normalized LDR frame for classes 1..3,
// the HDR image (already peak-normalized upstream) for class 4.
template <typename S>
Tensor<S> sample_input(const ExposureStack<S>& stack, const HdrImage<S>& hdr,
                       InputClass eta, S gamma = S(2.2)) {
  eta.validate();
  if (eta.eta == 4) return hdr.pixels;
  return gamma_normalize(stack.frames[std::size_t(eta.eta - 1)], gamma)
      .pixels;
}

template <typename Generator>
InputClass sample_eta(Generator& rng) {
  std::uniform_int_distribution<int> d(1, 4);
  return {d(rng)};
}

// Generator bundle: encoder, decoder and the overlapped codebook. The
// vanilla flag forces the full window for every class (ablation mode).
template <typename S>
struct OlcVqgan {
  VqEncoder<S> encoder;
  VqDecoder<S> decoder;
  OverlappedCodebook<S> codebook;
  bool vanilla = false;

  OlcVqgan() = default;
  OlcVqgan(int base, int n_z, int K, Rng& rng, std::uint64_t codebook_seed)
      : encoder(base, n_z, rng),
        decoder(base, n_z, rng),
        codebook(K, n_z, codebook_seed) {}

  SegmentRange window(InputClass eta) const {
    eta.validate();
    return vanilla ? SegmentRange{0, codebook.K}
                   : segment_range(eta, codebook.K);
  }

  struct Forward {
    Var x_hat, zbar, zhat;
    std::vector<int> indices;
  };

  Forward forward(Tape<S>& t, const Tensor<S>& input, InputClass eta) {
    Forward f;
    f.zbar = encoder(t, t.leaf(input, false));
    f.indices = nearest_code_indices(t.val(f.zbar), codebook, window(eta));
    f.zhat = gather_rows(t, t.param(codebook.codes), f.indices,
                         t.val(f.zbar).h, t.val(f.zbar).w);
    Var st = straight_through(t, f.zbar, f.zhat);
    f.x_hat = decoder(t, st);
    return f;
  }

  Tensor<S> reconstruct(const Tensor<S>& input, InputClass eta) {
    Tape<S> t;
    return t.val(forward(t, input, eta).x_hat);
  }

  // Nearest-code indices of the encoded input, for usage statistics.
  std::vector<int> encode_indices(const Tensor<S>& input, InputClass eta) {
    Tape<S> t;
    Var z = encoder(t, t.leaf(input, false));
    return nearest_code_indices(t.val(z), codebook, window(eta));
  }

  void register_params(ParamRegistry<S>& reg) {
    encoder.register_params(reg, "encoder");
    decoder.register_params(reg, "decoder");
    reg.add("codebook.codes", codebook.codes);
  }
};

template <typename S>
struct OlcLossVars {
  Var rec, per, vq_codebook, vq_commit, vq_total, adv, total;
  bool has_adv = false;
};

// Reconstruction and perceptual terms live in the tone-mapped domain; both
// sides are clamped to [0,1] before the mu-law map.
template <typename S>
OlcLossVars<S> olc_losses(Tape<S>& t, const Tensor<S>& target, Var x_hat,
                          Var zbar, Var zhat, PerceptualExtractor<S>& phi,
                          PatchDiscriminator<S>* disc,
                          const OlcTrainConfig& cfg, bool adv_active) {
  OlcLossVars<S> L;
  Var x_leaf = t.leaf(target, false);
  Var tm_x = mu_compress(t, clamp01(t, x_leaf), S(cfg.mu));
  Var tm_hat = mu_compress(t, clamp01(t, x_hat), S(cfg.mu));
  L.rec = l1_mean(t, tm_x, tm_hat);
  L.per = phi.distance(t, tm_x, tm_hat);
  auto vq = vq_loss(t, zbar, zhat, S(cfg.beta_commit));
  L.vq_codebook = vq.codebook_loss;
  L.vq_commit = vq.commitment_loss;
  L.vq_total = vq.total;
  L.total = add(t, scale(t, L.rec, S(cfg.lambda_rec)),
                add(t, scale(t, L.per, S(cfg.lambda_per)),
                    scale(t, L.vq_total, S(cfg.lambda_vq))));
  if (disc && adv_active && cfg.lambda_adv > 0.0) {
    L.adv = scale(t, mean_all(t, (*disc)(t, x_hat)), S(-1));
    L.total = add(t, L.total, scale(t, L.adv, S(cfg.lambda_adv)));
    L.has_adv = true;
  }
  return L;
}

// Hinge objective for the discriminator on a real/fake pair.
template <typename S>
Var hinge_disc_loss(Tape<S>& t, PatchDiscriminator<S>& disc,
                    const Tensor<S>& real, const Tensor<S>& fake) {
  Var dr = disc(t, t.leaf(real, false));
  Var df = disc(t, t.leaf(fake, false));
  Var one_minus = add_const(t, scale(t, dr, S(-1)), S(1));
  Var one_plus = add_const(t, df, S(1));
  return add(t, mean_all(t, relu(t, one_minus)),
             mean_all(t, relu(t, one_plus)));
}

struct OlcStepStats {
  std::int64_t step = 0;
  int eta = 0;
  double rec = 0, per = 0, vq = 0, adv = 0, total = 0, disc = 0;
};

template <typename S>
struct OlcTrainResult {
  OlcVqgan<S> model;
  PatchDiscriminator<S> disc;
  PerceptualExtractor<S> phi;
  std::vector<double> loss_curve;
  double final_psnr_mu = 0.0;
  std::int64_t steps_run = 0;
};

namespace detail {

// Scenes with peak-normalized ground truth, cut into training patches.
template <typename S>
std::vector<Scene<S>> build_patch_pool(const std::vector<Scene<S>>& scenes,
                                       int patch, int stride) {
  std::vector<Scene<S>> pool;
  for (const auto& scene : scenes) {
    check_arg(scene.ground_truth.has_value(),
              "training requires ground-truth HDR for every scene");
    Scene<S> norm = scene;
    norm.ground_truth->normalize_peak();
    for (auto& p : patchify(norm, patch, stride)) pool.push_back(std::move(p));
  }
  check_arg(!pool.empty(), "training pool is empty");
  return pool;
}

template <typename S>
std::string fmt_loss(const OlcLossVars<S>& L, Tape<S>& t) {
  std::string s = "rec=" + std::to_string(double(t.val(L.rec).data[0])) +
                  " per=" + std::to_string(double(t.val(L.per).data[0])) +
                  " vq=" + std::to_string(double(t.val(L.vq_total).data[0]));
  if (L.has_adv)
    s += " adv=" + std::to_string(double(t.val(L.adv).data[0]));
  return s;
}

}  // namespace detail

// Mean PSNR-mu of full-codebook (eta=4) reconstructions over scenes.
template <typename S>
double reconstruction_psnr_mu(OlcVqgan<S>& model,
                              const std::vector<Scene<S>>& scenes, S mu,
                              S gamma) {
  double acc = 0.0;
  int n = 0;
  for (const auto& scene : scenes) {
    if (!scene.ground_truth) continue;
    HdrImage<S> gt = *scene.ground_truth;
    gt.normalize_peak();
    Tensor<S> x = sample_input(scene.stack, gt, {4}, gamma);
    Tensor<S> x_hat = model.reconstruct(x, {4});
    acc += double(psnr_mu(x, x_hat, mu));
    ++n;
  }
  return n ? acc / n : 0.0;
}

template <typename S>
void save_olc_checkpoint(const std::filesystem::path& dir,
                         OlcVqgan<S>& model, PatchDiscriminator<S>& disc,
                         PerceptualExtractor<S>& phi,
                         CheckpointManifest manifest) {
  CheckpointWriter writer(dir);
  ParamRegistry<S> reg;
  model.register_params(reg);
  disc.register_params(reg, "disc");
  phi.register_params(reg, "phi");
  WeightStore::from_registry(reg).save(writer.staging_dir() / "weights.bin");
  save_codebook(model.codebook, writer.staging_dir() / "codebook.f32",
                writer.staging_dir() / "codebook.manifest");
  manifest.kind = "olc";
  write_manifest(writer.staging_dir(), manifest);
  writer.commit();
}

template <typename S>
struct OlcBundle {
  OlcVqgan<S> model;
  PatchDiscriminator<S> disc;
  PerceptualExtractor<S> phi;
  CheckpointManifest manifest;
  OlcTrainConfig cfg;
};

template <typename S>
OlcBundle<S> load_olc_checkpoint(const std::filesystem::path& dir) {
  OlcBundle<S> bundle;
  bundle.manifest = read_manifest(dir);
  check_state(bundle.manifest.kind == "olc",
              "checkpoint at " + dir.string() + " is not a step-1 checkpoint");
  const auto& cfg_json = bundle.manifest.config;
  check_state(cfg_json.contains("olc"),
              "step-1 manifest is missing the olc config echo");
  bundle.cfg = parse_run_config(
                   nlohmann::json{{"olc", cfg_json.at("olc")}})
                   .olc.value();
  Rng rng(0);
  bundle.model = OlcVqgan<S>(bundle.cfg.base_width, bundle.cfg.code_dim,
                             bundle.cfg.codebook_size, rng, 0);
  bundle.model.vanilla = bundle.cfg.vanilla_codebook;
  bundle.disc = PatchDiscriminator<S>(bundle.cfg.disc_width, rng);
  bundle.phi = PerceptualExtractor<S>(bundle.cfg.perceptual_seed);

  ParamRegistry<S> reg;
  bundle.model.register_params(reg);
  bundle.disc.register_params(reg, "disc");
  bundle.phi.register_params(reg, "phi");
  WeightStore::load(dir / "weights.bin").apply_to(reg);
  bundle.model.codebook = load_codebook<S>(dir / "codebook.f32",
                                           dir / "codebook.manifest");
  bundle.phi.freeze();
  return bundle;
}

// Step-1 training loop. One Adam instance drives encoder+decoder+codebook,
// a second one the discriminator; eta is drawn per sample. The optional
// periodic_eval hook runs every eval_interval steps (model is read-only
// there); returning true stops training early.
template <typename S>
OlcTrainResult<S> train_olc(
    const OlcTrainConfig& cfg, const std::vector<Scene<S>>& scenes,
    std::uint64_t seed, const std::filesystem::path& out_dir = {},
    const nlohmann::json& config_echo = nlohmann::json::object(),
    const std::function<void(const OlcStepStats&)>& on_step = nullptr,
    std::int64_t eval_interval = 0,
    const std::function<bool(OlcVqgan<S>&, std::int64_t)>& periodic_eval =
        nullptr) {
  auto pool = detail::build_patch_pool(scenes, cfg.patch_size,
                                       cfg.patch_stride);

  Rng rng(seed);
  OlcTrainResult<S> result;
  result.model = OlcVqgan<S>(cfg.base_width, cfg.code_dim, cfg.codebook_size,
                             rng, seed ^ 0x9e3779b97f4a7c15ull);
  result.model.vanilla = cfg.vanilla_codebook;
  result.disc = PatchDiscriminator<S>(cfg.disc_width, rng);
  result.phi = PerceptualExtractor<S>(cfg.perceptual_seed);
  if (!cfg.perceptual_weights.empty()) {
    ParamRegistry<S> phi_reg;
    result.phi.register_params(phi_reg, "phi");
    WeightStore::load(cfg.perceptual_weights).apply_to(phi_reg);
    result.phi.freeze();
  }

  ParamRegistry<S> gen_reg;
  result.model.register_params(gen_reg);
  ParamRegistry<S> disc_reg;
  result.disc.register_params(disc_reg, "disc");

  Adam<S> opt_gen(S(cfg.lr_generator));
  opt_gen.attach(gen_reg);
  Adam<S> opt_disc(S(cfg.lr_discriminator));
  opt_disc.attach(disc_reg);

  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  const bool use_adv = cfg.lambda_adv > 0.0;

  auto checkpoint = [&](std::int64_t step) {
    if (out_dir.empty()) return;
    CheckpointManifest man;
    man.step = step;
    man.seed = seed;
    man.config = config_echo.is_object() && config_echo.empty()
                     ? nlohmann::json{{"olc", to_json(cfg)}}
                     : config_echo;
    if (!man.config.contains("olc")) man.config["olc"] = to_json(cfg);
    man.metrics = {{"loss", result.loss_curve.empty()
                                ? 0.0
                                : result.loss_curve.back()}};
    save_olc_checkpoint(out_dir / ("checkpoint-" + std::to_string(step)),
                        result.model, result.disc, result.phi, man);
  };

  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    const bool adv_active = use_adv && step > cfg.adv_warmup_steps;

    // Draw the batch up front so the sampling stream is independent of the
    // loss evaluation order.
    struct Item {
      Scene<S> patch;
      InputClass eta;
    };
    std::vector<Item> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      Item item{pool[pick(rng)], sample_eta(rng)};
      item.patch = augment(item.patch, rng);
      batch.push_back(std::move(item));
    }

    opt_gen.zero_grad();
    opt_disc.zero_grad();
    Tape<S> t;
    Var total{};
    OlcStepStats stats;
    stats.step = step;
    std::vector<Tensor<S>> fakes, reals;
    for (const auto& item : batch) {
      Tensor<S> x = sample_input(item.patch.stack, *item.patch.ground_truth,
                                 item.eta, S(cfg.gamma));
      typename OlcVqgan<S>::Forward fwd;
      try {
        fwd = result.model.forward(t, x, item.eta);
      } catch (const std::invalid_argument& e) {
        if (std::string(e.what()).find("non-finite") == std::string::npos)
          throw;
        throw std::runtime_error(
            "train_olc: non-finite loss at step " + std::to_string(step) +
            " (eta=" + std::to_string(item.eta.eta) + ", " + e.what() + ")");
      }
      auto L = olc_losses(t, x, fwd.x_hat, fwd.zbar, fwd.zhat, result.phi,
                          adv_active ? &result.disc : nullptr, cfg,
                          adv_active);
      total = total.valid() ? add(t, total, L.total) : L.total;
      stats.eta = item.eta.eta;
      stats.rec += double(t.val(L.rec).data[0]);
      stats.per += double(t.val(L.per).data[0]);
      stats.vq += double(t.val(L.vq_total).data[0]);
      if (L.has_adv) stats.adv += double(t.val(L.adv).data[0]);
      if (adv_active) {
        Tensor<S> clamped = x;
        clamped.data = clamped.data.max(S(0)).min(S(1));
        reals.push_back(std::move(clamped));
        fakes.push_back(t.val(fwd.x_hat));
      }
    }
    total = scale(t, total, S(1) / S(cfg.batch_size));
    const double total_val = double(t.val(total).data[0]);
    if (!std::isfinite(total_val)) {
      throw std::runtime_error(
          "train_olc: non-finite loss at step " + std::to_string(step) +
          " (eta=" + std::to_string(stats.eta) + ", rec=" +
          std::to_string(stats.rec) + ", per=" + std::to_string(stats.per) +
          ", vq=" + std::to_string(stats.vq) + ", adv=" +
          std::to_string(stats.adv) + ")");
    }
    t.backward(total);
    opt_gen.step();

    if (adv_active) {
      opt_disc.zero_grad();
      Tape<S> td;
      Var dl{};
      for (std::size_t i = 0; i < fakes.size(); ++i) {
        Var one = hinge_disc_loss(td, result.disc, reals[i], fakes[i]);
        dl = dl.valid() ? add(td, dl, one) : one;
      }
      dl = scale(td, dl, S(1) / S(fakes.size()));
      td.backward(dl);
      opt_disc.step();
      stats.disc = double(td.val(dl).data[0]);
    }

    stats.rec /= cfg.batch_size;
    stats.per /= cfg.batch_size;
    stats.vq /= cfg.batch_size;
    stats.adv /= cfg.batch_size;
    stats.total = total_val;
    result.loss_curve.push_back(total_val);
    result.steps_run = step;
    if (on_step) on_step(stats);
    if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 &&
        step != cfg.steps)
      checkpoint(step);
    if (periodic_eval && eval_interval > 0 && step % eval_interval == 0 &&
        periodic_eval(result.model, step))
      break;
  }

  result.final_psnr_mu =
      reconstruction_psnr_mu(result.model, scenes, S(cfg.mu), S(cfg.gamma));
  if (!out_dir.empty()) {
    CheckpointManifest man;
    man.step = result.steps_run;
    man.seed = seed;
    man.config = config_echo.is_object() && config_echo.empty()
                     ? nlohmann::json{{"olc", to_json(cfg)}}
                     : config_echo;
    if (!man.config.contains("olc")) man.config["olc"] = to_json(cfg);
    man.metrics = {{"loss", result.loss_curve.empty()
                                ? 0.0
                                : result.loss_curve.back()},
                   {"train_psnr_mu", result.final_psnr_mu}};
    save_olc_checkpoint(out_dir / "checkpoint", result.model, result.disc,
                        result.phi, man);
  }
  return result;
}

// Usage statistics for the codebook-diversity comparison: histogram of code
// indices selected when reconstructing the given inputs under `eta`.
template <typename S>
std::vector<std::int64_t> codebook_usage(OlcVqgan<S>& model,
                                         const std::vector<Tensor<S>>& inputs,
                                         InputClass eta) {
  std::vector<std::vector<int>> all;
  for (const auto& x : inputs) all.push_back(model.encode_indices(x, eta));
  return usage_histogram(all, model.codebook.K);
}

}  // namespace olc
