#include "olc/checkpoint.hpp"

#include <fstream>
#include <random>

namespace olc {

namespace {

constexpr std::uint32_t kWeightsMagic = 0x4f4c4357;  // "WCLO" little-endian

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  check_state(f.good(), "weights: truncated file");
  return v;
}

}  // namespace

void WeightStore::put(const std::string& name, Tensor<float> value) {
  check_arg(!contains(name), "WeightStore: duplicate tensor " + name);
  order_.push_back(name);
  tensors_.emplace(name, std::move(value));
}

const Tensor<float>& WeightStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  check_state(it != tensors_.end(), "WeightStore: no tensor named " + name);
  return it->second;
}

bool WeightStore::contains(const std::string& name) const {
  return tensors_.count(name) > 0;
}

void WeightStore::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  check_state(f.good(), "weights: cannot open " + path.string());
  write_pod<std::uint32_t>(f, kWeightsMagic);
  write_pod<std::uint32_t>(f, 1);  // format version
  write_pod<std::uint32_t>(f, std::uint32_t(order_.size()));
  for (const auto& name : order_) {
    const Tensor<float>& t = tensors_.at(name);
    write_pod<std::uint32_t>(f, std::uint32_t(name.size()));
    f.write(name.data(), std::streamsize(name.size()));
    write_pod<std::int32_t>(f, t.h);
    write_pod<std::int32_t>(f, t.w);
    write_pod<std::int32_t>(f, t.c);
    f.write(reinterpret_cast<const char*>(t.data.data()),
            std::streamsize(t.size() * sizeof(float)));
  }
  check_state(f.good(), "weights: write failed for " + path.string());
}

WeightStore WeightStore::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  check_state(f.good(), "weights: cannot open " + path.string());
  check_state(read_pod<std::uint32_t>(f) == kWeightsMagic,
              "weights: bad magic in " + path.string());
  check_state(read_pod<std::uint32_t>(f) == 1,
              "weights: unsupported format version");
  const std::uint32_t count = read_pod<std::uint32_t>(f);
  WeightStore ws;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_pod<std::uint32_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), std::streamsize(name_len));
    const std::int32_t h = read_pod<std::int32_t>(f);
    const std::int32_t w = read_pod<std::int32_t>(f);
    const std::int32_t c = read_pod<std::int32_t>(f);
    check_state(h >= 0 && w >= 0 && c >= 0, "weights: bad tensor shape");
    Tensor<float> t(h, w, c);
    f.read(reinterpret_cast<char*>(t.data.data()),
           std::streamsize(t.size() * sizeof(float)));
    check_state(f.good(), "weights: truncated tensor " + name);
    ws.put(name, std::move(t));
  }
  return ws;
}

CheckpointWriter::CheckpointWriter(const std::filesystem::path& target)
    : target_(target) {
  std::random_device rd;
  staging_ = target;
  staging_ += ".staging-" + std::to_string(rd());
  std::filesystem::create_directories(staging_);
}

CheckpointWriter::~CheckpointWriter() {
  if (!committed_) {
    std::error_code ec;
    std::filesystem::remove_all(staging_, ec);
  }
}

void CheckpointWriter::commit() {
  std::filesystem::remove_all(target_);
  std::filesystem::rename(staging_, target_);
  committed_ = true;
}

void write_manifest(const std::filesystem::path& dir,
                    const CheckpointManifest& man) {
  nlohmann::json j;
  j["format_version"] = man.format_version;
  j["kind"] = man.kind;
  j["step"] = man.step;
  j["seed"] = man.seed;
  j["config"] = man.config;
  j["metrics"] = man.metrics;
  std::ofstream f(dir / "manifest.json");
  check_state(f.good(), "manifest: cannot open " + (dir / "manifest.json").string());
  f << j.dump(2) << "\n";
}

CheckpointManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  check_state(f.good(),
              "manifest: cannot open " + (dir / "manifest.json").string());
  nlohmann::json j = nlohmann::json::parse(f);
  CheckpointManifest man;
  man.format_version = j.value("format_version", 0);
  check_state(man.format_version == 1,
              "manifest: unsupported format version");
  man.kind = j.value("kind", "");
  man.step = j.value("step", std::int64_t(0));
  man.seed = j.value("seed", std::uint64_t(0));
  man.config = j.value("config", nlohmann::json::object());
  man.metrics = j.value("metrics", nlohmann::json::object());
  return man;
}

}  // namespace olc
