#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "olc/nn.hpp"

// Checkpoint directories: manifest.json (config echo, step, seed, metrics),
// weights.bin (named float32 tensors), codebook.f32 + codebook.manifest.
// Directories are written to a temp sibling and renamed into place.

namespace olc {

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

class WeightStore {
 public:
  void put(const std::string& name, Tensor<float> value);
  const Tensor<float>& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t size() const { return order_.size(); }

  void save(const std::filesystem::path& path) const;
  static WeightStore load(const std::filesystem::path& path);

  template <typename S>
  static WeightStore from_registry(const ParamRegistry<S>& reg) {
    WeightStore ws;
    for (auto& [name, p] : reg.items)
      ws.put(name, p->value.template cast<float>());
    return ws;
  }

  // Strict: every registered parameter must be present with matching shape.
  template <typename S>
  void apply_to(ParamRegistry<S>& reg) const {
    for (auto& [name, p] : reg.items) {
      check_state(contains(name), "checkpoint: missing tensor " + name);
      const Tensor<float>& t = get(name);
      check_state(t.h == p->value.h && t.w == p->value.w && t.c == p->value.c,
                  "checkpoint: shape mismatch for " + name + " (" +
                      t.shape_str() + " vs " + p->value.shape_str() + ")");
      p->value = t.template cast<S>();
      p->grad = zeros_like(p->value);
    }
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor<float>> tensors_;
};

struct CheckpointManifest {
  int format_version = 1;
  std::string kind;  // "olc" or "hdr"
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json metrics = nlohmann::json::object();
};

// Stages the directory contents through a temp sibling, then renames.
class CheckpointWriter {
 public:
  explicit CheckpointWriter(const std::filesystem::path& target);
  ~CheckpointWriter();
  CheckpointWriter(const CheckpointWriter&) = delete;

  const std::filesystem::path& staging_dir() const { return staging_; }
  void commit();

 private:
  std::filesystem::path target_, staging_;
  bool committed_ = false;
};

void write_manifest(const std::filesystem::path& dir,
                    const CheckpointManifest& man);
CheckpointManifest read_manifest(const std::filesystem::path& dir);

}  // namespace olc
