#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "grad_check.hpp"
#include "olc/autoencoder.hpp"

using namespace olc;
namespace fs = std::filesystem;

namespace {

using T = Tensor<double>;

OlcTrainConfig tiny_cfg() {
  OlcTrainConfig cfg;
  cfg.codebook_size = 16;
  cfg.code_dim = 4;
  cfg.base_width = 8;
  cfg.disc_width = 8;
  cfg.patch_size = 16;
  cfg.patch_stride = 16;
  cfg.batch_size = 2;
  cfg.steps = 10;
  cfg.lambda_adv = 0.0;
  return cfg;
}

std::vector<Scene<float>> tiny_scenes(int n, int size = 16,
                                      std::uint64_t seed0 = 100) {
  SynthConfig sc;
  sc.size = size;
  sc.saturation_fraction = 0.1;
  std::vector<Scene<float>> scenes;
  for (int i = 0; i < n; ++i)
    scenes.push_back(synth_scene<float>(sc, seed0 + std::uint64_t(i)));
  return scenes;
}

}  // namespace

TEST_CASE("sample_input: eta semantics") {
  auto scene = synth_scene<double>(
      [] {
        SynthConfig c;
        c.size = 16;
        return c;
      }(),
      3);
  HdrImage<double> hdr = *scene.ground_truth;
  hdr.normalize_peak();

  // eta = 4 returns the HDR image unchanged.
  T x4 = sample_input(scene.stack, hdr, {4});
  CHECK((x4.data - hdr.pixels.data).abs().maxCoeff() == 0.0);

  // eta = 2 with flat pixels 0.5, t = 1: 0.5^2.2 everywhere.
  ExposureStack<double> stack = scene.stack;
  stack.frames[1].pixels = T::full(16, 16, 3, 0.5);
  stack.frames[1].exposure_time = 1.0;
  T x2 = sample_input(stack, hdr, {2});
  CHECK(x2.data[0] == doctest::Approx(0.21763764082403103).epsilon(1e-9));

  CHECK_THROWS_AS(sample_input(stack, hdr, {5}), std::invalid_argument);
}

TEST_CASE("eta sampling is uniform over the four classes") {
  Rng rng(2024);
  std::array<int, 5> counts{};
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[std::size_t(sample_eta(rng).eta)];
  for (int eta = 1; eta <= 4; ++eta) {
    const double freq = double(counts[std::size_t(eta)]) / n;
    CHECK(freq >= 0.24);
    CHECK(freq <= 0.26);
  }
}

TEST_CASE("reconstruct: shape contracts and latent grid") {
  Rng rng(7);
  OlcVqgan<float> model(8, 4, 16, rng, 1);
  Tensor<float> x = Tensor<float>::uniform(32, 24, 3, rng, 0.0f, 1.0f);
  Tape<float> t;
  auto fwd = model.forward(t, x, {4});
  CHECK(t.val(fwd.x_hat).h == 32);
  CHECK(t.val(fwd.x_hat).w == 24);
  CHECK(t.val(fwd.x_hat).c == 3);
  CHECK(t.val(fwd.zbar).h == 4);
  CHECK(t.val(fwd.zbar).w == 3);
  CHECK(t.val(fwd.zbar).c == 4);
  CHECK(int(fwd.indices.size()) == 4 * 3);

  Tensor<float> bad = Tensor<float>::uniform(30, 24, 3, rng, 0.0f, 1.0f);
  CHECK_THROWS_AS(model.reconstruct(bad, {4}), std::invalid_argument);
}

TEST_CASE("forward quantization respects the eta window") {
  Rng rng(11);
  OlcVqgan<float> model(8, 4, 16, rng, 2);
  Tensor<float> x = Tensor<float>::uniform(16, 16, 3, rng, 0.0f, 1.0f);
  for (int eta = 1; eta <= 4; ++eta) {
    auto range = segment_range({eta}, 16);
    Tape<float> t;
    auto fwd = model.forward(t, x, {eta});
    for (int k : fwd.indices) {
      CHECK(k >= range.begin);
      CHECK(k < range.end);
    }
  }
  // Vanilla mode forces the full window for every class.
  model.vanilla = true;
  CHECK(model.window({1}).begin == 0);
  CHECK(model.window({1}).end == 16);
}

TEST_CASE("olc_losses: zero at identity, endpoint value, rec symmetry") {
  OlcTrainConfig cfg = tiny_cfg();
  PerceptualExtractor<double> phi(5);
  Rng rng(13);
  T x = T::uniform(8, 8, 3, rng, 0.05, 0.95);
  T z = T::uniform(2, 2, 4, rng, -0.5, 0.5);
  {
    Tape<double> t;
    Var x_hat = t.leaf(x, false);
    Var zb = t.leaf(z, false);
    auto L = olc_losses<double>(t, x, x_hat, zb, zb, phi, nullptr, cfg, false);
    CHECK(t.val(L.rec).data[0] == 0.0);
    CHECK(t.val(L.per).data[0] == 0.0);
    CHECK(t.val(L.vq_total).data[0] == 0.0);
  }
  {
    // X = 0, X_hat = 1: tone-map endpoints give rec = 1 exactly.
    Tape<double> t;
    T zero = T::zeros(8, 8, 3);
    Var ones = t.leaf(T::full(8, 8, 3, 1.0), false);
    Var zb = t.leaf(z, false);
    auto L = olc_losses<double>(t, zero, ones, zb, zb, phi, nullptr, cfg, false);
    CHECK(t.val(L.rec).data[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  {
    // rec(X, X_hat) == rec(X_hat, X), bit-exact.
    Rng rng2(17);
    T a = T::uniform(8, 8, 3, rng2, 0.0, 1.0);
    T b = T::uniform(8, 8, 3, rng2, 0.0, 1.0);
    Tape<double> t;
    auto zl = t.leaf(z, false);
    auto L1 = olc_losses<double>(t, a, t.leaf(b, false), zl, zl, phi, nullptr, cfg,
                         false);
    auto L2 = olc_losses<double>(t, b, t.leaf(a, false), zl, zl, phi, nullptr, cfg,
                         false);
    CHECK(t.val(L1.rec).data[0] == t.val(L2.rec).data[0]);
  }
}

TEST_CASE("loss gradients match finite differences (rec/per/adv path)") {
  OlcTrainConfig cfg = tiny_cfg();
  cfg.lambda_adv = 0.1;
  PerceptualExtractor<double> phi(5);
  Rng rng(19);
  PatchDiscriminator<double> disc(4, rng);
  T target = T::uniform(8, 8, 3, rng, 0.1, 0.9);
  T xh = T::uniform(8, 8, 3, rng, 0.1, 0.9);
  T z = T::uniform(2, 2, 4, rng, -0.5, 0.5);

  auto run = [&](const T& xin) {
    Tape<double> t;
    Var x_hat = t.leaf(xin, true);
    Var zb = t.leaf(z, false);
    auto L = olc_losses(t, target, x_hat, zb, zb, phi, &disc, cfg, true);
    t.backward(L.total);
    return std::pair{t.val(L.total).data[0], t.grad(x_hat)};
  };
  auto [l0, g] = run(xh);
  (void)l0;
  olc::testing::require_grad_close(
      [&](const T& p) { return run(p).first; }, xh, g);
}

TEST_CASE("single optimizer step on vq-only loss freezes out-of-window rows") {
  Rng rng(23);
  OlcVqgan<double> model(8, 4, 16, rng, 3);
  ParamRegistry<double> reg;
  model.register_params(reg);

  T x = T::uniform(16, 16, 3, rng, 0.0, 1.0);
  for (int eta = 1; eta <= 3; ++eta) {
    // Fresh optimizer state: the claim is about a single step.
    Adam<double> opt(1e-3);
    opt.attach(reg);
    const auto before = model.codebook.codes.value;
    const auto range = segment_range({eta}, model.codebook.K);
    opt.zero_grad();
    Tape<double> t;
    auto fwd = model.forward(t, x, {eta});
    auto L = vq_loss(t, fwd.zbar, fwd.zhat, 0.25);
    t.backward(L.total);
    opt.step();
    for (int k = 0; k < model.codebook.K; ++k) {
      const bool changed =
          (model.codebook.codes.value.data.segment(k * 4, 4) -
           before.data.segment(k * 4, 4))
              .abs()
              .maxCoeff() > 0.0;
      if (!range.contains(k)) {
        CAPTURE(eta);
        CAPTURE(k);
        CHECK(!changed);
      }
    }
  }
}

TEST_CASE("generator and discriminator parameters are disjoint") {
  Rng rng(29);
  OlcVqgan<double> model(8, 4, 16, rng, 4);
  PatchDiscriminator<double> disc(8, rng);
  ParamRegistry<double> gen_reg, disc_reg;
  model.register_params(gen_reg);
  disc.register_params(disc_reg, "disc");
  for (auto& [gn, gp] : gen_reg.items)
    for (auto& [dn, dp] : disc_reg.items) CHECK(gp != dp);

  Adam<double> opt_gen(1e-3), opt_disc(1e-3);
  opt_gen.attach(gen_reg);
  opt_disc.attach(disc_reg);

  const auto disc_sum_before = param_checksum(disc_reg);
  T x = T::uniform(16, 16, 3, rng, 0.0, 1.0);
  Tape<double> t;
  auto fwd = model.forward(t, x, {4});
  Var adv = scale(t, mean_all(t, disc(t, fwd.x_hat)), -1.0);
  t.backward(adv);
  opt_gen.step();
  CHECK(param_checksum(disc_reg) == disc_sum_before);

  const auto gen_sum = param_checksum(gen_reg);
  opt_disc.zero_grad();
  Tape<double> td;
  Var dl = hinge_disc_loss(td, disc, x, t.val(fwd.x_hat));
  td.backward(dl);
  opt_disc.step();
  CHECK(param_checksum(gen_reg) == gen_sum);
  CHECK(param_checksum(disc_reg) != disc_sum_before);
}

TEST_CASE("train_olc: fixed seed gives bit-identical loss curves") {
  auto scenes = tiny_scenes(2);
  OlcTrainConfig cfg = tiny_cfg();
  cfg.steps = 25;
  auto r1 = train_olc<float>(cfg, scenes, 42);
  auto r2 = train_olc<float>(cfg, scenes, 42);
  REQUIRE(r1.loss_curve.size() == r2.loss_curve.size());
  for (std::size_t i = 0; i < r1.loss_curve.size(); ++i)
    CHECK(r1.loss_curve[i] == r2.loss_curve[i]);
  auto r3 = train_olc<float>(cfg, scenes, 43);
  CHECK(r1.loss_curve.back() != r3.loss_curve.back());
}

TEST_CASE("train_olc: vanilla-codebook mode runs under the same harness") {
  auto scenes = tiny_scenes(2);
  OlcTrainConfig cfg = tiny_cfg();
  cfg.steps = 8;
  cfg.vanilla_codebook = true;
  auto r = train_olc<float>(cfg, scenes, 1);
  CHECK(r.steps_run == 8);
  CHECK(r.model.vanilla);
}

TEST_CASE("train_olc: adversarial phase trains the discriminator") {
  auto scenes = tiny_scenes(2);
  OlcTrainConfig cfg = tiny_cfg();
  cfg.steps = 6;
  cfg.lambda_adv = 0.1;
  cfg.adv_warmup_steps = 3;
  double last_disc = 0.0;
  auto r = train_olc<float>(cfg, scenes, 7, {}, {},
                            [&](const OlcStepStats& s) {
                              if (s.step > 3) last_disc = s.disc;
                            });
  (void)r;
  CHECK(last_disc != 0.0);
}

TEST_CASE("train_olc aborts with diagnostics on non-finite loss") {
  auto scenes = tiny_scenes(1);
  OlcTrainConfig cfg = tiny_cfg();
  cfg.steps = 3;
  // Overflows the float total while all features stay finite.
  cfg.lambda_vq = 1e38;
  CHECK_THROWS_WITH_AS(train_olc<float>(cfg, scenes, 3),
                       doctest::Contains("non-finite"), std::runtime_error);

  // A learning rate large enough to blow up the weights also lands on the
  // diagnostic abort once features go non-finite.
  OlcTrainConfig cfg2 = tiny_cfg();
  cfg2.steps = 50;
  cfg2.lr_generator = 1e8;
  CHECK_THROWS_WITH_AS(train_olc<float>(cfg2, scenes, 3),
                       doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("checkpoint round-trip restores the generator exactly") {
  const fs::path dir = fs::temp_directory_path() / "olc_ckpt_roundtrip";
  fs::remove_all(dir);
  auto scenes = tiny_scenes(2);
  OlcTrainConfig cfg = tiny_cfg();
  cfg.steps = 5;
  auto r = train_olc<float>(cfg, scenes, 11, dir, {{"olc", to_json(cfg)}});
  REQUIRE(fs::exists(dir / "checkpoint" / "weights.bin"));
  REQUIRE(fs::exists(dir / "checkpoint" / "codebook.f32"));
  REQUIRE(fs::exists(dir / "checkpoint" / "manifest.json"));

  auto bundle = load_olc_checkpoint<float>(dir / "checkpoint");
  ParamRegistry<float> a, b;
  r.model.register_params(a);
  bundle.model.register_params(b);
  REQUIRE(a.items.size() == b.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i)
    CHECK((a.items[i].second->value.data - b.items[i].second->value.data)
              .abs()
              .maxCoeff() == 0.0f);

  // Reconstructions agree bit-exactly.
  HdrImage<float> gt = *scenes[0].ground_truth;
  gt.normalize_peak();
  Tensor<float> x = sample_input(scenes[0].stack, gt, {4});
  auto y1 = r.model.reconstruct(x, {4});
  auto y2 = bundle.model.reconstruct(x, {4});
  CHECK((y1.data - y2.data).abs().maxCoeff() == 0.0f);
  fs::remove_all(dir);
}

TEST_CASE("usage histograms from encode_indices stay in range and conserve") {
  Rng rng(31);
  OlcVqgan<float> model(8, 4, 16, rng, 5);
  std::vector<Tensor<float>> inputs;
  for (int i = 0; i < 6; ++i)
    inputs.push_back(Tensor<float>::uniform(16, 16, 3, rng, 0.0f, 1.0f));
  auto hist = codebook_usage(model, inputs, {4});
  std::int64_t total = 0;
  for (auto c : hist) total += c;
  CHECK(total == 6 * 2 * 2);
  CHECK(used_code_count(hist) >= 1);
}
