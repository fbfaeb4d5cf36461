#include "olc/run_config.hpp"

#include <fstream>
#include <set>

namespace olc {

namespace {

using nlohmann::json;

// Field-by-field reader that rejects unknown keys and reports full paths.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  ~StrictObject() = default;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key, "invalid value type");
    }
  }

  bool has(const char* key) {
    return j_.find(key) != j_.end();
  }

  const json& child(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key()))
        throw ConfigError(path_ + "." + it.key(), "unknown key");
    }
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

SynthConfig parse_synth(const json& j, const std::string& path) {
  SynthConfig cfg;
  StrictObject o(j, path);
  o.get("count", cfg.count);
  o.get("size", cfg.size);
  o.get("stops", cfg.stops);
  o.get("motion_px", cfg.motion_px);
  o.get("saturation_fraction", cfg.saturation_fraction);
  o.get("noise_level", cfg.noise_level);
  o.finish();
  if (cfg.count <= 0) throw ConfigError(path + ".count", "must be positive");
  if (cfg.size <= 0 || cfg.size % 8 != 0)
    throw ConfigError(path + ".size", "must be positive and divisible by 8");
  if (!(cfg.stops[0] < cfg.stops[1] && cfg.stops[1] < cfg.stops[2]))
    throw ConfigError(path + ".stops", "must be strictly increasing");
  if (cfg.motion_px < 0)
    throw ConfigError(path + ".motion_px", "must be non-negative");
  if (cfg.saturation_fraction < 0.0 || cfg.saturation_fraction > 0.9)
    throw ConfigError(path + ".saturation_fraction", "must lie in [0, 0.9]");
  if (cfg.noise_level < 0.0)
    throw ConfigError(path + ".noise_level", "must be non-negative");
  return cfg;
}

OlcTrainConfig parse_olc(const json& j, const std::string& path) {
  OlcTrainConfig cfg;
  StrictObject o(j, path);
  o.get("codebook_size", cfg.codebook_size);
  o.get("code_dim", cfg.code_dim);
  o.get("base_width", cfg.base_width);
  o.get("disc_width", cfg.disc_width);
  o.get("patch_size", cfg.patch_size);
  o.get("patch_stride", cfg.patch_stride);
  o.get("batch_size", cfg.batch_size);
  o.get("steps", cfg.steps);
  o.get("lr_generator", cfg.lr_generator);
  o.get("lr_discriminator", cfg.lr_discriminator);
  o.get("beta_commit", cfg.beta_commit);
  o.get("mu", cfg.mu);
  o.get("gamma", cfg.gamma);
  o.get("lambda_rec", cfg.lambda_rec);
  o.get("lambda_per", cfg.lambda_per);
  o.get("lambda_vq", cfg.lambda_vq);
  o.get("lambda_adv", cfg.lambda_adv);
  o.get("adv_warmup_steps", cfg.adv_warmup_steps);
  o.get("vanilla_codebook", cfg.vanilla_codebook);
  o.get("checkpoint_interval", cfg.checkpoint_interval);
  o.get("perceptual_seed", cfg.perceptual_seed);
  o.get("perceptual_weights", cfg.perceptual_weights);
  o.finish();
  if (cfg.codebook_size <= 0 || cfg.codebook_size % 4 != 0)
    throw ConfigError(path + ".codebook_size", "must be divisible by 4");
  if (cfg.code_dim <= 0) throw ConfigError(path + ".code_dim", "must be > 0");
  if (cfg.base_width <= 0)
    throw ConfigError(path + ".base_width", "must be > 0");
  if (cfg.patch_size <= 0 || cfg.patch_size % 8 != 0)
    throw ConfigError(path + ".patch_size",
                      "must be positive and divisible by 8");
  if (cfg.patch_stride <= 0)
    throw ConfigError(path + ".patch_stride", "must be > 0");
  if (cfg.batch_size <= 0)
    throw ConfigError(path + ".batch_size", "must be > 0");
  if (cfg.steps < 0) throw ConfigError(path + ".steps", "must be >= 0");
  if (cfg.lr_generator <= 0.0 || cfg.lr_discriminator <= 0.0)
    throw ConfigError(path + ".lr_generator", "learning rates must be > 0");
  if (cfg.beta_commit < 0.0)
    throw ConfigError(path + ".beta_commit", "must be >= 0");
  if (cfg.mu <= 0.0) throw ConfigError(path + ".mu", "must be > 0");
  if (cfg.gamma <= 0.0) throw ConfigError(path + ".gamma", "must be > 0");
  if (cfg.lambda_rec < 0.0 || cfg.lambda_per < 0.0 || cfg.lambda_vq < 0.0 ||
      cfg.lambda_adv < 0.0)
    throw ConfigError(path + ".lambda_rec", "loss weights must be >= 0");
  return cfg;
}

HdrTrainConfig parse_hdr(const json& j, const std::string& path) {
  HdrTrainConfig cfg;
  StrictObject o(j, path);
  o.get("base_width", cfg.base_width);
  o.get("patch_size", cfg.patch_size);
  o.get("patch_stride", cfg.patch_stride);
  o.get("batch_size", cfg.batch_size);
  o.get("steps", cfg.steps);
  o.get("lr", cfg.lr);
  o.get("lambda_per", cfg.lambda_per);
  o.get("lambda_map", cfg.lambda_map);
  o.get("mu", cfg.mu);
  o.get("gamma", cfg.gamma);
  o.get("use_pa", cfg.use_pa);
  o.get("merge", cfg.merge);
  o.get("use_skip_context", cfg.use_skip_context);
  o.get("use_dvq", cfg.use_dvq);
  o.get("use_rf", cfg.use_rf);
  o.get("shared_encoders", cfg.shared_encoders);
  o.get("offset_groups", cfg.offset_groups);
  o.get("checkpoint_interval", cfg.checkpoint_interval);
  o.finish();
  if (cfg.base_width <= 0)
    throw ConfigError(path + ".base_width", "must be > 0");
  if (cfg.patch_size <= 0 || cfg.patch_size % 8 != 0)
    throw ConfigError(path + ".patch_size",
                      "must be positive and divisible by 8");
  if (cfg.patch_stride <= 0)
    throw ConfigError(path + ".patch_stride", "must be > 0");
  if (cfg.batch_size <= 0)
    throw ConfigError(path + ".batch_size", "must be > 0");
  if (cfg.steps < 0) throw ConfigError(path + ".steps", "must be >= 0");
  if (cfg.lr <= 0.0) throw ConfigError(path + ".lr", "must be > 0");
  if (cfg.lambda_per < 0.0 || cfg.lambda_map < 0.0)
    throw ConfigError(path + ".lambda_per", "loss weights must be >= 0");
  if (cfg.mu <= 0.0) throw ConfigError(path + ".mu", "must be > 0");
  if (cfg.gamma <= 0.0) throw ConfigError(path + ".gamma", "must be > 0");
  if (cfg.merge != "fsm" && cfg.merge != "sum" && cfg.merge != "concat")
    throw ConfigError(path + ".merge", "must be one of fsm|sum|concat");
  if (cfg.offset_groups <= 0)
    throw ConfigError(path + ".offset_groups", "must be > 0");
  return cfg;
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  RunConfig cfg;
  StrictObject o(doc, "config");
  o.get("seed", cfg.seed);
  o.get("device", cfg.device);
  o.get("out_dir", cfg.out_dir);
  o.get("train_data", cfg.train_data);
  if (o.has("synth")) cfg.synth = parse_synth(o.child("synth"), "config.synth");
  if (o.has("olc")) cfg.olc = parse_olc(o.child("olc"), "config.olc");
  if (o.has("hdr")) cfg.hdr = parse_hdr(o.child("hdr"), "config.hdr");
  o.finish();
  if (cfg.device != "cpu")
    throw ConfigError("config.device", "only 'cpu' is supported");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f.good())
    throw ConfigError("config", "cannot open file " + path);
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  return parse_run_config(doc);
}

json to_json(const SynthConfig& cfg) {
  return json{{"count", cfg.count},
              {"size", cfg.size},
              {"stops", cfg.stops},
              {"motion_px", cfg.motion_px},
              {"saturation_fraction", cfg.saturation_fraction},
              {"noise_level", cfg.noise_level}};
}

json to_json(const OlcTrainConfig& cfg) {
  return json{{"codebook_size", cfg.codebook_size},
              {"code_dim", cfg.code_dim},
              {"base_width", cfg.base_width},
              {"disc_width", cfg.disc_width},
              {"patch_size", cfg.patch_size},
              {"patch_stride", cfg.patch_stride},
              {"batch_size", cfg.batch_size},
              {"steps", cfg.steps},
              {"lr_generator", cfg.lr_generator},
              {"lr_discriminator", cfg.lr_discriminator},
              {"beta_commit", cfg.beta_commit},
              {"mu", cfg.mu},
              {"gamma", cfg.gamma},
              {"lambda_rec", cfg.lambda_rec},
              {"lambda_per", cfg.lambda_per},
              {"lambda_vq", cfg.lambda_vq},
              {"lambda_adv", cfg.lambda_adv},
              {"adv_warmup_steps", cfg.adv_warmup_steps},
              {"vanilla_codebook", cfg.vanilla_codebook},
              {"checkpoint_interval", cfg.checkpoint_interval},
              {"perceptual_seed", cfg.perceptual_seed},
              {"perceptual_weights", cfg.perceptual_weights}};
}

json to_json(const HdrTrainConfig& cfg) {
  return json{{"base_width", cfg.base_width},
              {"patch_size", cfg.patch_size},
              {"patch_stride", cfg.patch_stride},
              {"batch_size", cfg.batch_size},
              {"steps", cfg.steps},
              {"lr", cfg.lr},
              {"lambda_per", cfg.lambda_per},
              {"lambda_map", cfg.lambda_map},
              {"mu", cfg.mu},
              {"gamma", cfg.gamma},
              {"use_pa", cfg.use_pa},
              {"merge", cfg.merge},
              {"use_skip_context", cfg.use_skip_context},
              {"use_dvq", cfg.use_dvq},
              {"use_rf", cfg.use_rf},
              {"shared_encoders", cfg.shared_encoders},
              {"offset_groups", cfg.offset_groups},
              {"checkpoint_interval", cfg.checkpoint_interval}};
}

json to_json(const RunConfig& cfg) {
  json j{{"seed", cfg.seed},
         {"device", cfg.device},
         {"out_dir", cfg.out_dir},
         {"train_data", cfg.train_data}};
  if (cfg.synth) j["synth"] = to_json(*cfg.synth);
  if (cfg.olc) j["olc"] = to_json(*cfg.olc);
  if (cfg.hdr) j["hdr"] = to_json(*cfg.hdr);
  return j;
}

}  // namespace olc
