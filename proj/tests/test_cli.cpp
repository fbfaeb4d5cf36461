#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "olc/image_io.hpp"
#include "olc/report.hpp"
#include "olc/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kCli = OLCHDR_CLI_PATH;

struct Sandbox {
  fs::path dir;
  explicit Sandbox(const std::string& name) {
    dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Sandbox() { fs::remove_all(dir); }
};

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = kCli.string() + " " + args + " > " + log.string() +
                          " 2> " + log.string() + ".err";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream f(p);
  f << j.dump(2);
}

json tiny_config(const fs::path& root) {
  return json{
      {"seed", 5},
      {"out_dir", (root / "olc_run").string()},
      {"train_data", (root / "data").string()},
      {"synth",
       {{"count", 4},
        {"size", 16},
        {"stops", {-2, 0, 2}},
        {"motion_px", 0},
        {"saturation_fraction", 0.1},
        {"noise_level", 0.0}}},
      {"olc",
       {{"codebook_size", 16},
        {"code_dim", 4},
        {"base_width", 8},
        {"disc_width", 8},
        {"patch_size", 16},
        {"patch_stride", 16},
        {"batch_size", 2},
        {"steps", 6},
        {"lambda_adv", 0.0}}},
      {"hdr",
       {{"base_width", 4},
        {"patch_size", 16},
        {"patch_stride", 16},
        {"batch_size", 1},
        {"steps", 4},
        {"offset_groups", 4}}}};
}

}  // namespace

TEST_CASE("report schema: field set, golden line, inf sentinel") {
  json line = olc::eval_report_line("s1", 41.25, 39.5, 0.99, 0.98);
  const std::vector<std::string> keys = {"schema",      "scene",
                                         "psnr_mu",     "psnr_linear",
                                         "ssim_mu",     "ssim_linear"};
  CHECK(line.size() == keys.size());
  for (const auto& k : keys) CHECK(line.contains(k));
  CHECK(line["schema"] == "olchdr-eval/1");
  CHECK(line.dump() ==
        R"({"psnr_linear":39.5,"psnr_mu":41.25,"scene":"s1","schema":"olchdr-eval/1","ssim_linear":0.98,"ssim_mu":0.99})");

  json inf_line = olc::eval_report_line(
      "same", std::numeric_limits<double>::infinity(),
      std::numeric_limits<double>::infinity(), 1.0, 1.0);
  CHECK(inf_line["psnr_mu"] == "inf");
  CHECK(inf_line["psnr_linear"] == "inf");

  json agg = olc::eval_report_aggregate(3, 30.0, 28.0, 0.9, 0.8);
  CHECK(agg["aggregate"] == true);
  CHECK(agg["scenes"] == 3);
}

TEST_CASE("invalid configs exit 2 with the offending field path") {
  Sandbox sb("olc_cli_badcfg");
  json cfg = tiny_config(sb.dir);
  cfg["bogus_key"] = 1;
  write_json(sb.dir / "bad.json", cfg);
  const int rc = run_cli("train-olc --config " + (sb.dir / "bad.json").string(),
                         sb.dir / "log1");
  CHECK(rc == 2);
  CHECK(slurp(sb.dir / "log1.err").find("config.bogus_key") !=
        std::string::npos);

  json cfg2 = tiny_config(sb.dir);
  cfg2["olc"]["codebook_size"] = 10;  // not divisible by 4
  write_json(sb.dir / "bad2.json", cfg2);
  CHECK(run_cli("train-olc --config " + (sb.dir / "bad2.json").string(),
                sb.dir / "log2") == 2);

  json cfg3 = tiny_config(sb.dir);
  cfg3["device"] = "cuda";
  write_json(sb.dir / "bad3.json", cfg3);
  CHECK(run_cli("train-olc --config " + (sb.dir / "bad3.json").string(),
                sb.dir / "log3") == 2);
}

TEST_CASE("full pipeline: synth, train both stages, infer, eval, inspect") {
  Sandbox sb("olc_cli_pipeline");
  write_json(sb.dir / "cfg.json", tiny_config(sb.dir));
  const std::string cfg = (sb.dir / "cfg.json").string();

  // synth-data
  CHECK(run_cli("synth-data --config " + cfg + " --out " +
                    (sb.dir / "data").string() + " --quiet",
                sb.dir / "synth.log") == 0);
  CHECK(fs::exists(sb.dir / "data" / "scene_0000" / "input_1.tif"));
  CHECK(fs::exists(sb.dir / "data" / "scene_0003" / "gt.hdr"));
  CHECK(fs::exists(sb.dir / "data" / "config.resolved.json"));
  {
    std::ifstream f(sb.dir / "data" / "config.resolved.json");
    json resolved = json::parse(f);
    CHECK(resolved["seed"] == 5);
    CHECK(resolved["synth"]["count"] == 4);
  }

  // train-olc
  CHECK(run_cli("train-olc --config " + cfg + " --quiet",
                sb.dir / "tolc.log") == 0);
  const fs::path olc_ckpt = sb.dir / "olc_run" / "checkpoint";
  CHECK(fs::exists(olc_ckpt / "weights.bin"));
  CHECK(fs::exists(olc_ckpt / "codebook.f32"));
  CHECK(fs::exists(olc_ckpt / "codebook.manifest"));
  CHECK(fs::exists(sb.dir / "olc_run" / "config.resolved.json"));

  // inspect-codebook: histogram conservation per class
  CHECK(run_cli("inspect-codebook --ckpt " + olc_ckpt.string() + " --data " +
                    (sb.dir / "data").string() + " --out " +
                    (sb.dir / "usage.json").string() + " --quiet",
                sb.dir / "inspect.log") == 0);
  {
    std::ifstream f(sb.dir / "usage.json");
    json usage = json::parse(f);
    CHECK(usage["schema"] == "olchdr-codebook/1");
    CHECK(usage["K"] == 16);
    CHECK(usage["alpha"] == 4);
    // 4 scenes, 16x16 -> 2x2 latent positions each.
    for (const char* key : {"full", "eta_1", "eta_2", "eta_3"}) {
      std::int64_t total = 0;
      for (const auto& c : usage[key]["histogram"])
        total += c.get<std::int64_t>();
      CHECK(total == 4 * 2 * 2);
      CHECK(usage[key]["positions"] == total);
      CHECK(usage[key]["used_code_count"].get<int>() <= 16);
      CHECK(usage[key]["used_code_count"].get<int>() >= 1);
    }
  }

  // train-hdr (reconfigure out_dir so the two stages do not collide)
  json cfg_hdr = tiny_config(sb.dir);
  cfg_hdr["out_dir"] = (sb.dir / "hdr_run").string();
  write_json(sb.dir / "cfg_hdr.json", cfg_hdr);
  CHECK(run_cli("train-hdr --config " + (sb.dir / "cfg_hdr.json").string() +
                    " --step1 " + olc_ckpt.string() + " --quiet",
                sb.dir / "thdr.log") == 0);
  const fs::path hdr_ckpt = sb.dir / "hdr_run" / "checkpoint";
  CHECK(fs::exists(hdr_ckpt / "weights.bin"));

  // infer
  CHECK(run_cli("infer --ckpt " + hdr_ckpt.string() + " --scene " +
                    (sb.dir / "data" / "scene_0000").string() + " --out " +
                    (sb.dir / "pred.hdr").string() + " --quiet",
                sb.dir / "infer.log") == 0);
  CHECK(fs::exists(sb.dir / "pred.hdr"));
  CHECK(fs::exists(sb.dir / "pred.preview.ppm"));
  auto pred = olc::io::read_radiance_hdr(sb.dir / "pred.hdr");
  CHECK(pred.h == 16);
  CHECK(pred.w == 16);
  CHECK(pred.all_finite());

  // eval: line-oriented report with stable schema
  CHECK(run_cli("eval --ckpt " + hdr_ckpt.string() + " --data " +
                    (sb.dir / "data").string() + " --report " +
                    (sb.dir / "report.jsonl").string() + " --quiet",
                sb.dir / "eval.log") == 0);
  std::ifstream rep(sb.dir / "report.jsonl");
  std::string line;
  int scene_lines = 0;
  bool saw_aggregate = false;
  while (std::getline(rep, line)) {
    json j = json::parse(line);
    CHECK(j["schema"] == "olchdr-eval/1");
    if (j.contains("aggregate")) {
      saw_aggregate = true;
      CHECK(j["scenes"] == 4);
      CHECK(j.contains("mean_psnr_mu"));
      CHECK(j.contains("mean_ssim_linear"));
    } else {
      ++scene_lines;
      for (const char* k :
           {"scene", "psnr_mu", "psnr_linear", "ssim_mu", "ssim_linear"})
        CHECK(j.contains(k));
    }
  }
  CHECK(scene_lines == 4);
  CHECK(saw_aggregate);

  // wrong checkpoint kind: exit 3
  CHECK(run_cli("infer --ckpt " + olc_ckpt.string() + " --scene " +
                    (sb.dir / "data" / "scene_0000").string() + " --out " +
                    (sb.dir / "x.hdr").string(),
                sb.dir / "wrongkind.log") == 3);
  CHECK(run_cli("train-hdr --config " + (sb.dir / "cfg_hdr.json").string() +
                    " --step1 " + hdr_ckpt.string(),
                sb.dir / "wrongkind2.log") != 0);

  // missing scene directory: nonzero with a one-line cause
  const int rc = run_cli("infer --ckpt " + hdr_ckpt.string() + " --scene " +
                             (sb.dir / "nope").string() + " --out " +
                             (sb.dir / "y.hdr").string(),
                         sb.dir / "missing.log");
  CHECK(rc == 1);
  CHECK(!slurp(sb.dir / "missing.log.err").empty());
}

TEST_CASE("--seed flag overrides the config seed") {
  Sandbox sb("olc_cli_seed");
  json cfg = tiny_config(sb.dir);
  cfg["synth"]["count"] = 1;
  write_json(sb.dir / "cfg.json", cfg);
  const std::string base = (sb.dir / "cfg.json").string();
  CHECK(run_cli("synth-data --config " + base + " --out " +
                    (sb.dir / "d1").string() + " --quiet",
                sb.dir / "s1.log") == 0);
  CHECK(run_cli("--seed 99 synth-data --config " + base + " --out " +
                    (sb.dir / "d2").string() + " --quiet",
                sb.dir / "s2.log") == 0);
  {
    std::ifstream f(sb.dir / "d2" / "config.resolved.json");
    json resolved = json::parse(f);
    CHECK(resolved["seed"] == 99);
  }
  // Different seeds produce different pixel data.
  auto a = olc::io::read_tiff(sb.dir / "d1" / "scene_0000" / "input_2.tif");
  auto b = olc::io::read_tiff(sb.dir / "d2" / "scene_0000" / "input_2.tif");
  CHECK((a.data - b.data).abs().maxCoeff() > 0.0f);
}

TEST_CASE("eval renders the +inf sentinel as \"inf\" when images match") {
  // The sentinel path end-to-end is exercised at the report layer; the
  // metric itself is covered in the radiometry suite. Here: a report built
  // from equal images carries the string form.
  json line = olc::eval_report_line(
      "equal", std::numeric_limits<double>::infinity(), 55.0, 1.0, 1.0);
  CHECK(line["psnr_mu"].is_string());
  CHECK(line["psnr_mu"] == "inf");
  CHECK(line["psnr_linear"].is_number());
}
