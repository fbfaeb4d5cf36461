// Command-line driver: data synthesis, both training stages, inference,
// evaluation and codebook inspection. Exit codes: 0 success, 2 invalid
// configuration (with the offending field path), 3 checkpoint/architecture
// mismatch, 1 anything else.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "olc/hdrnet.hpp"
#include "olc/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOpts {
  std::optional<std::uint64_t> seed;
  std::string device = "cpu";
  bool quiet = false;
};

void write_resolved_config(const fs::path& dir, const olc::RunConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream f(dir / "config.resolved.json");
  olc::check_state(f.good(), "cannot write resolved config in " +
                                 dir.string());
  f << olc::to_json(cfg).dump(2) << "\n";
}

olc::RunConfig load_config(const std::string& path, const GlobalOpts& g) {
  olc::RunConfig cfg = olc::load_run_config(path);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.device.empty()) cfg.device = g.device;
  if (cfg.device != "cpu")
    throw olc::ConfigError("config.device", "only 'cpu' is supported");
  return cfg;
}

std::vector<olc::Scene<float>> load_dataset(const fs::path& root) {
  std::vector<olc::Scene<float>> scenes;
  for (const auto& dir : olc::list_scene_dirs(root))
    scenes.push_back(olc::load_scene<float>(dir));
  olc::check_state(!scenes.empty(),
                   "no scenes found under " + root.string());
  return scenes;
}

int cmd_synth_data(const std::string& config_path, const fs::path& out,
                   const GlobalOpts& g) {
  olc::RunConfig cfg = load_config(config_path, g);
  if (!cfg.synth)
    throw olc::ConfigError("config.synth", "required by synth-data");
  fs::create_directories(out);
  for (int i = 0; i < cfg.synth->count; ++i) {
    auto scene =
        olc::synth_scene<float>(*cfg.synth, cfg.seed + std::uint64_t(i));
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d", i);
    olc::write_scene(out / name, scene);
    if (!g.quiet) std::cout << "wrote " << (out / name).string() << "\n";
  }
  write_resolved_config(out, cfg);
  return 0;
}

int cmd_train_olc(const std::string& config_path, const GlobalOpts& g) {
  olc::RunConfig cfg = load_config(config_path, g);
  if (!cfg.olc) throw olc::ConfigError("config.olc", "required by train-olc");
  if (cfg.train_data.empty())
    throw olc::ConfigError("config.train_data", "required by train-olc");
  if (cfg.out_dir.empty())
    throw olc::ConfigError("config.out_dir", "required by train-olc");
  auto scenes = load_dataset(cfg.train_data);
  write_resolved_config(cfg.out_dir, cfg);
  const std::int64_t print_every =
      std::max<std::int64_t>(1, cfg.olc->steps / 20);
  auto result = olc::train_olc<float>(
      *cfg.olc, scenes, cfg.seed, cfg.out_dir, olc::to_json(cfg),
      [&](const olc::OlcStepStats& s) {
        if (!g.quiet && s.step % print_every == 0)
          std::cout << "step " << s.step << " total=" << s.total
                    << " rec=" << s.rec << " per=" << s.per
                    << " vq=" << s.vq << " adv=" << s.adv
                    << " disc=" << s.disc << "\n";
      });
  if (!g.quiet)
    std::cout << "finished " << result.steps_run
              << " steps; train PSNR-mu=" << result.final_psnr_mu << " dB\n"
              << "checkpoint: " << (fs::path(cfg.out_dir) / "checkpoint")
              << "\n";
  return 0;
}

int cmd_train_hdr(const std::string& config_path, const fs::path& step1,
                  const GlobalOpts& g) {
  olc::RunConfig cfg = load_config(config_path, g);
  if (!cfg.hdr) throw olc::ConfigError("config.hdr", "required by train-hdr");
  if (cfg.train_data.empty())
    throw olc::ConfigError("config.train_data", "required by train-hdr");
  if (cfg.out_dir.empty())
    throw olc::ConfigError("config.out_dir", "required by train-hdr");
  auto step1_bundle = olc::load_olc_checkpoint<float>(step1);
  auto scenes = load_dataset(cfg.train_data);
  write_resolved_config(cfg.out_dir, cfg);
  const std::int64_t print_every =
      std::max<std::int64_t>(1, cfg.hdr->steps / 20);
  auto result = olc::train_hdr<float>(
      *cfg.hdr, scenes, step1_bundle, cfg.seed, cfg.out_dir,
      olc::to_json(cfg), [&](const olc::HdrStepStats& s) {
        if (!g.quiet && s.step % print_every == 0)
          std::cout << "step " << s.step << " total=" << s.total
                    << " rec=" << s.rec << " per=" << s.per
                    << " map=" << s.map << "\n";
      });
  if (!g.quiet)
    std::cout << "finished " << result.steps_run
              << " steps; train PSNR-mu=" << result.final_psnr_mu << " dB\n"
              << "checkpoint: " << (fs::path(cfg.out_dir) / "checkpoint")
              << "\n";
  return 0;
}

int cmd_infer(const fs::path& ckpt, const fs::path& scene_dir,
              const fs::path& out, const GlobalOpts& g) {
  auto bundle = olc::load_hdr_checkpoint<float>(ckpt);
  auto scene = olc::load_scene<float>(scene_dir);
  olc::Tensor<float> pred = olc::infer_hdr(bundle.model, scene.stack,
                                      float(bundle.cfg.gamma));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  olc::io::write_radiance_hdr(out, pred);
  fs::path preview = out;
  preview.replace_extension(".preview.ppm");
  olc::ToneMapParams<float> tm{float(bundle.cfg.mu)};
  olc::Tensor<float> clamped = pred;
  clamped.data = clamped.data.max(0.0f).min(1.0f);
  olc::io::write_ppm8(preview, olc::tonemap(clamped, tm));
  if (!g.quiet)
    std::cout << "wrote " << out.string() << " and " << preview.string()
              << "\n";
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data,
             const fs::path& report, const GlobalOpts& g) {
  auto bundle = olc::load_hdr_checkpoint<float>(ckpt);
  const auto dirs = olc::list_scene_dirs(data);
  olc::check_state(!dirs.empty(), "no scenes found under " + data.string());

  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  std::ofstream f(report);
  olc::check_state(f.good(), "cannot write report " + report.string());

  const float mu = float(bundle.cfg.mu);
  olc::ToneMapParams<float> tm{mu};
  double sum_pm = 0, sum_pl = 0, sum_sm = 0, sum_sl = 0;
  int n = 0;
  for (const auto& dir : dirs) {
    auto scene = olc::load_scene<float>(dir);
    if (!scene.ground_truth) {
      if (!g.quiet)
        std::cout << "skipping " << dir.filename().string()
                  << " (no ground truth)\n";
      continue;
    }
    olc::HdrImage<float> gt = *scene.ground_truth;
    gt.normalize_peak();
    olc::Tensor<float> pred = olc::infer_hdr(bundle.model, scene.stack,
                                        float(bundle.cfg.gamma));
    const double psnr_l = olc::psnr(pred, gt.pixels, 1.0f);
    const double psnr_m = olc::psnr_mu(pred, gt.pixels, mu);
    const double ssim_l = olc::ssim(pred, gt.pixels);
    olc::Tensor<float> cp = pred, cg = gt.pixels;
    cp.data = cp.data.max(0.0f).min(1.0f);
    cg.data = cg.data.max(0.0f).min(1.0f);
    const double ssim_m = olc::ssim(olc::tonemap(cp, tm), olc::tonemap(cg, tm));
    f << olc::eval_report_line(scene.stack.scene_id, psnr_m, psnr_l, ssim_m,
                               ssim_l)
             .dump()
      << "\n";
    sum_pm += std::isinf(psnr_m) ? 0 : psnr_m;
    sum_pl += std::isinf(psnr_l) ? 0 : psnr_l;
    sum_sm += ssim_m;
    sum_sl += ssim_l;
    ++n;
  }
  olc::check_state(n > 0, "no scenes with ground truth under " +
                              data.string());
  f << olc::eval_report_aggregate(n, sum_pm / n, sum_pl / n, sum_sm / n,
                                  sum_sl / n)
           .dump()
    << "\n";
  if (!g.quiet)
    std::cout << "evaluated " << n << " scenes; mean PSNR-mu="
              << (sum_pm / n) << " dB -> " << report.string() << "\n";
  return 0;
}

int cmd_inspect_codebook(const fs::path& ckpt, const fs::path& data,
                         const fs::path& out, const GlobalOpts& g) {
  auto bundle = olc::load_olc_checkpoint<float>(ckpt);
  auto scenes = load_dataset(data);

  json doc = {{"schema", "olchdr-codebook/1"},
              {"K", bundle.model.codebook.K},
              {"n_z", bundle.model.codebook.n_z},
              {"alpha", bundle.model.codebook.alpha()},
              {"vanilla_mode", bundle.model.vanilla}};
  std::int64_t positions = 0;
  for (int eta = 1; eta <= 4; ++eta) {
    std::vector<olc::Tensor<float>> inputs;
    for (const auto& scene : scenes) {
      olc::check_state(scene.ground_truth.has_value(),
                       "inspect-codebook requires ground-truth HDR");
      olc::HdrImage<float> gt = *scene.ground_truth;
      gt.normalize_peak();
      inputs.push_back(olc::sample_input(scene.stack, gt, {eta},
                                         float(bundle.cfg.gamma)));
    }
    auto hist = olc::codebook_usage(bundle.model, inputs, {eta});
    std::int64_t total = 0;
    for (auto c : hist) total += c;
    positions = total;
    const std::string key =
        (eta == 4) ? "full" : ("eta_" + std::to_string(eta));
    doc[key] = {{"histogram", hist},
                {"used_code_count", olc::used_code_count(hist)},
                {"positions", total}};
  }
  doc["positions_per_class"] = positions;

  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out);
  olc::check_state(f.good(), "cannot write " + out.string());
  f << doc.dump(2) << "\n";
  if (!g.quiet)
    std::cout << "codebook usage written to " << out.string() << " (full: "
              << doc["full"]["used_code_count"] << "/"
              << bundle.model.codebook.K << " codes)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Overlapped-codebook HDR: two-step training, inference and "
               "evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  std::uint64_t seed_flag = 0;
  auto* seed_opt = app.add_option("--seed", seed_flag,
                                  "Override the config seed");
  app.add_option("--device", g.device, "Compute device (cpu)");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  std::string config_path;
  std::string out_path, ckpt_path, scene_path, data_path, report_path,
      step1_path;

  auto* synth = app.add_subcommand("synth-data",
                                   "Generate a synthetic scene directory");
  synth->add_option("--config", config_path, "Run config (JSON)")->required();
  synth->add_option("--out", out_path, "Output dataset directory")
      ->required();

  auto* tolc = app.add_subcommand("train-olc", "Step 1: train the VQGAN");
  tolc->add_option("--config", config_path, "Run config (JSON)")->required();

  auto* thdr = app.add_subcommand("train-hdr",
                                  "Step 2: train the HDR network");
  thdr->add_option("--config", config_path, "Run config (JSON)")->required();
  thdr->add_option("--step1", step1_path, "Step-1 checkpoint directory")
      ->required();

  auto* infer = app.add_subcommand("infer", "Reconstruct one scene");
  infer->add_option("--ckpt", ckpt_path, "Step-2 checkpoint")->required();
  infer->add_option("--scene", scene_path, "Scene directory")->required();
  infer->add_option("--out", out_path, "Output .hdr path")->required();

  auto* eval = app.add_subcommand("eval", "Metrics over a dataset");
  eval->add_option("--ckpt", ckpt_path, "Step-2 checkpoint")->required();
  eval->add_option("--data", data_path, "Dataset directory")->required();
  eval->add_option("--report", report_path, "Report path (JSON lines)")
      ->required();

  auto* inspect = app.add_subcommand("inspect-codebook",
                                     "Codebook usage histograms");
  inspect->add_option("--ckpt", ckpt_path, "Step-1 checkpoint")->required();
  inspect->add_option("--data", data_path, "Dataset directory")->required();
  inspect->add_option("--out", out_path, "Output JSON path")->required();

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed_flag;

  try {
    if (synth->parsed()) return cmd_synth_data(config_path, out_path, g);
    if (tolc->parsed()) return cmd_train_olc(config_path, g);
    if (thdr->parsed()) return cmd_train_hdr(config_path, step1_path, g);
    if (infer->parsed())
      return cmd_infer(ckpt_path, scene_path, out_path, g);
    if (eval->parsed()) return cmd_eval(ckpt_path, data_path, report_path, g);
    if (inspect->parsed())
      return cmd_inspect_codebook(ckpt_path, data_path, out_path, g);
  } catch (const olc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const olc::CheckpointMismatch& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
