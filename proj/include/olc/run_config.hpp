#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

// Declarative run configuration shared by every CLI subcommand. Parsing is
// strict: unknown keys are rejected with their full field path, and each run
// writes the fully-resolved document next to its outputs.

namespace olc {

struct ConfigError : std::runtime_error {
  std::string field_path;
  ConfigError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), field_path(std::move(path)) {}
};

struct SynthConfig {
  int count = 16;
  int size = 64;
  std::array<int, 3> stops = {-2, 0, 2};
  int motion_px = 0;
  double saturation_fraction = 0.1;
  double noise_level = 0.0;
};

struct OlcTrainConfig {
  int codebook_size = 64;       // K
  int code_dim = 8;             // n_z
  int base_width = 16;          // encoder/decoder channel base
  int disc_width = 16;
  int patch_size = 32;
  int patch_stride = 16;
  int batch_size = 4;
  std::int64_t steps = 5000;
  double lr_generator = 1e-4;
  double lr_discriminator = 4e-4;
  double beta_commit = 0.25;
  double mu = 5000.0;
  double gamma = 2.2;
  double lambda_rec = 1.0;
  double lambda_per = 0.1;
  double lambda_vq = 1.0;
  double lambda_adv = 0.1;
  std::int64_t adv_warmup_steps = 1000;
  bool vanilla_codebook = false;
  std::int64_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::uint64_t perceptual_seed = 7;
  std::string perceptual_weights;        // optional weights.bin to plug in
};

struct HdrTrainConfig {
  int base_width = 8;
  int patch_size = 32;
  int patch_stride = 16;
  int batch_size = 4;
  std::int64_t steps = 10000;
  double lr = 1e-4;
  double lambda_per = 0.1;
  double lambda_map = 0.5;
  double mu = 5000.0;
  double gamma = 2.2;
  bool use_pa = true;
  std::string merge = "fsm";  // fsm | sum | concat
  bool use_skip_context = true;
  bool use_dvq = true;
  bool use_rf = true;
  bool shared_encoders = false;
  int offset_groups = 8;
  std::int64_t checkpoint_interval = 0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string device = "cpu";
  std::string out_dir;
  std::string train_data;
  std::optional<SynthConfig> synth;
  std::optional<OlcTrainConfig> olc;
  std::optional<HdrTrainConfig> hdr;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);
nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const SynthConfig& cfg);
nlohmann::json to_json(const OlcTrainConfig& cfg);
nlohmann::json to_json(const HdrTrainConfig& cfg);

}  // namespace olc
