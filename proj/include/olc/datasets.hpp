#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "olc/image_io.hpp"
#include "olc/radiometry.hpp"
#include "olc/run_config.hpp"

// Scene ingestion (Kalantari-style directory layout), synthetic
// exposure-bracket generation, congruent patch extraction and dihedral
// augmentation.
//
// Scene directory layout:
//   {scene}/input_1.tif input_2.tif input_3.tif exposure.txt [gt.hdr]
// exposure.txt holds three ASCII log2 stops, one per line.

namespace olc {

template <typename S>
struct ExposureStack {
  std::array<LdrFrame<S>, 3> frames;  // ordered short -> mid -> long
  int reference_index = 2;            // 1-based; the middle frame
  std::string scene_id;

  void validate() const {
    for (const auto& f : frames) f.validate();
    check_arg(frames[0].exposure_time < frames[1].exposure_time &&
                  frames[1].exposure_time < frames[2].exposure_time,
              "ExposureStack: exposure times must be strictly increasing");
    check_arg(frames[0].pixels.same_shape(frames[1].pixels) &&
                  frames[1].pixels.same_shape(frames[2].pixels),
              "ExposureStack: frame shape mismatch");
  }

  const LdrFrame<S>& reference() const { return frames[1]; }
};

template <typename S>
struct Scene {
  ExposureStack<S> stack;
  std::optional<HdrImage<S>> ground_truth;
};

namespace detail {

template <typename S>
Tensor<S> shift_replicate(const Tensor<S>& src, int dy, int dx) {
  Tensor<S> out(src.h, src.w, src.c);
  for (int y = 0; y < src.h; ++y) {
    const int sy = std::clamp(y + dy, 0, src.h - 1);
    for (int x = 0; x < src.w; ++x) {
      const int sx = std::clamp(x + dx, 0, src.w - 1);
      for (int c = 0; c < src.c; ++c) out.at(y, x, c) = src.at(sy, sx, c);
    }
  }
  return out;
}

// Smooth positive field: random Gaussian blobs over a low-frequency base.
template <typename S>
Tensor<S> blob_field(int size, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<S> field(size, size, 3);
  const int blobs = 6 + int(u(rng) * 6);
  struct Blob {
    double cx, cy, sx, sy, amp, rgb[3];
  };
  std::vector<Blob> bs;
  for (int i = 0; i < blobs; ++i) {
    Blob b;
    b.cx = u(rng) * size;
    b.cy = u(rng) * size;
    b.sx = size * (0.05 + 0.2 * u(rng));
    b.sy = size * (0.05 + 0.2 * u(rng));
    b.amp = 0.3 + 1.7 * u(rng);
    for (int c = 0; c < 3; ++c) b.rgb[c] = 0.4 + 0.6 * u(rng);
    bs.push_back(b);
  }
  const double fx = 1.0 + 2.0 * u(rng), fy = 1.0 + 2.0 * u(rng);
  const double phase = u(rng) * 6.283185307179586;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double base =
          0.08 + 0.05 * (1.0 + std::sin(fx * 6.2831853 * x / size +
                                        fy * 6.2831853 * y / size + phase));
      for (int c = 0; c < 3; ++c) {
        double v = base;
        for (const auto& b : bs) {
          const double dx = (x - b.cx) / b.sx;
          const double dy = (y - b.cy) / b.sy;
          v += b.amp * b.rgb[c] * std::exp(-(dx * dx + dy * dy));
        }
        field.at(y, x, c) = S(v);
      }
    }
  field.data /= field.data.maxCoeff();
  return field;
}

}  // namespace detail

// Deterministic synthetic scene. The stored ground truth is exactly the
// radiance map the frames were rendered from (aligned to the reference).
// With a positive saturation target the map is remapped so its peak is 1 and
// the target fraction of pixels clips in the long exposure; with a zero
// target the map is scaled below the clipping point of the longest exposure.
template <typename S>
Scene<S> synth_scene(const SynthConfig& cfg, std::uint64_t seed) {
  const S gamma = S(2.2);
  Rng rng(seed);
  Tensor<S> field = detail::blob_field<S>(cfg.size, rng);

  const S t_max = S(std::pow(2.0, double(cfg.stops[2])));
  const S clip_point = S(1) / t_max;
  Tensor<S> radiance = field;
  if (cfg.saturation_fraction > 0.0) {
    // Monotone power remap placing the (1-f) quantile at the clip point.
    std::vector<S> sorted(radiance.data.data(),
                          radiance.data.data() + radiance.size());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t qi = std::size_t(
        double(sorted.size() - 1) * (1.0 - cfg.saturation_fraction));
    const S q = std::clamp(sorted[qi], S(1e-4), S(0.9999));
    const S expo = S(std::log(double(clip_point)) / std::log(double(q)));
    radiance.data = radiance.data.max(S(0)).pow(expo);
  } else {
    radiance.data *= clip_point * S(0.999);
  }

  Scene<S> scene;
  scene.stack.scene_id = "synth-" + std::to_string(seed);
  std::uniform_int_distribution<int> motion(-cfg.motion_px, cfg.motion_px);
  std::normal_distribution<double> noise(0.0, cfg.noise_level);
  for (int i = 0; i < 3; ++i) {
    const int stop = cfg.stops[std::size_t(i)];
    const S t = S(std::pow(2.0, double(stop)));
    Tensor<S> source = radiance;
    if (i != 1 && cfg.motion_px > 0)
      source = detail::shift_replicate(radiance, motion(rng), motion(rng));
    LdrFrame<S> frame;
    frame.exposure_time = t;
    frame.exposure_stop = stop;
    frame.pixels = Tensor<S>(cfg.size, cfg.size, 3);
    for (std::int64_t j = 0; j < source.size(); ++j) {
      double v = std::pow(double(source.data[j] * t), 1.0 / double(gamma));
      if (cfg.noise_level > 0.0) v += noise(rng);
      frame.pixels.data[j] = S(std::clamp(v, 0.0, 1.0));
    }
    scene.stack.frames[std::size_t(i)] = std::move(frame);
  }
  scene.ground_truth = HdrImage<S>{radiance};
  return scene;
}

// ---- Directory I/O --------------------------------------------------------

inline std::array<double, 3> read_exposure_stops(
    const std::filesystem::path& path) {
  std::ifstream f(path);
  check_state(f.good(), "load_scene: cannot open " + path.string());
  std::array<double, 3> stops{};
  for (int i = 0; i < 3; ++i) {
    std::string tok;
    check_state(bool(f >> tok),
                "load_scene: exposure file needs three stops: " +
                    path.string());
    // Tolerate the U+2212 minus sign some tools emit.
    if (tok.size() >= 3 && (unsigned char)tok[0] == 0xe2 &&
        (unsigned char)tok[1] == 0x88 && (unsigned char)tok[2] == 0x92)
      tok = "-" + tok.substr(3);
    try {
      stops[std::size_t(i)] = std::stod(tok);
    } catch (const std::exception&) {
      throw std::runtime_error("load_scene: bad exposure value '" + tok +
                               "' in " + path.string());
    }
  }
  return stops;
}

template <typename S>
Scene<S> load_scene(const std::filesystem::path& dir) {
  check_state(std::filesystem::is_directory(dir),
              "load_scene: not a directory: " + dir.string());
  const auto stops = read_exposure_stops(dir / "exposure.txt");
  check_state(stops[0] < stops[1] && stops[1] < stops[2],
              "load_scene: exposure stops must be strictly increasing in " +
                  dir.string());

  Scene<S> scene;
  scene.stack.scene_id = dir.filename().string();
  struct Entry {
    double stop;
    Tensor<float> pixels;
  };
  std::array<Entry, 3> entries;
  for (int i = 0; i < 3; ++i) {
    const auto path = dir / ("input_" + std::to_string(i + 1) + ".tif");
    check_state(std::filesystem::exists(path),
                "load_scene: missing " + path.string());
    entries[std::size_t(i)] = {stops[std::size_t(i)], io::read_tiff(path)};
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.stop < b.stop; });
  for (int i = 0; i < 3; ++i) {
    auto& e = entries[std::size_t(i)];
    LdrFrame<S> frame;
    frame.pixels = e.pixels.template cast<S>();
    frame.exposure_stop = int(std::lround(e.stop));
    frame.exposure_time = S(std::pow(2.0, e.stop));
    scene.stack.frames[std::size_t(i)] = std::move(frame);
  }
  check_state(scene.stack.frames[0].pixels.same_shape(
                  scene.stack.frames[1].pixels) &&
                  scene.stack.frames[1].pixels.same_shape(
                      scene.stack.frames[2].pixels),
              "load_scene: frame dimensions differ in " + dir.string());

  const auto gt_path = dir / "gt.hdr";
  if (std::filesystem::exists(gt_path)) {
    HdrImage<S> gt;
    gt.pixels = io::read_radiance_hdr(gt_path).template cast<S>();
    check_state(gt.pixels.h == scene.stack.frames[0].pixels.h &&
                    gt.pixels.w == scene.stack.frames[0].pixels.w,
                "load_scene: ground-truth dimensions differ in " +
                    dir.string());
    scene.ground_truth = std::move(gt);
  }
  return scene;
}

template <typename S>
void write_scene(const std::filesystem::path& dir, const Scene<S>& scene) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < 3; ++i) {
    const auto& frame = scene.stack.frames[std::size_t(i)];
    io::write_tiff16(dir / ("input_" + std::to_string(i + 1) + ".tif"),
                     frame.pixels.template cast<float>());
  }
  std::ofstream f(dir / "exposure.txt");
  check_state(f.good(), "write_scene: cannot open exposure.txt");
  for (int i = 0; i < 3; ++i)
    f << scene.stack.frames[std::size_t(i)].exposure_stop << "\n";
  if (scene.ground_truth)
    io::write_radiance_hdr(dir / "gt.hdr",
                           scene.ground_truth->pixels.template cast<float>());
}

// Lists scene subdirectories (those containing exposure.txt), sorted.
inline std::vector<std::filesystem::path> list_scene_dirs(
    const std::filesystem::path& root) {
  check_state(std::filesystem::is_directory(root),
              "dataset root is not a directory: " + root.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory() &&
        std::filesystem::exists(e.path() / "exposure.txt"))
      dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

// ---- Patches and augmentation ----------------------------------------------

namespace detail {

template <typename S>
Tensor<S> crop(const Tensor<S>& src, int y0, int x0, int size) {
  Tensor<S> out(size, size, src.c);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < src.c; ++c)
        out.at(y, x, c) = src.at(y0 + y, x0 + x, c);
  return out;
}

// The eight dihedral transforms of the square, indexed 0..7:
// rot by 0/90/180/270, then the same four after a horizontal flip.
template <typename S>
Tensor<S> dihedral(const Tensor<S>& src, int which) {
  check_arg(which >= 0 && which < 8, "dihedral: index out of range");
  const bool flip = which >= 4;
  const int rot = which % 4;
  const bool swap = (rot % 2) == 1;
  Tensor<S> out(swap ? src.w : src.h, swap ? src.h : src.w, src.c);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      int sx = flip ? (src.w - 1 - x) : x;
      int oy = 0, ox = 0;
      switch (rot) {
        case 0: oy = y; ox = sx; break;
        case 1: oy = sx; ox = src.h - 1 - y; break;
        case 2: oy = src.h - 1 - y; ox = src.w - 1 - sx; break;
        case 3: oy = src.w - 1 - sx; ox = y; break;
      }
      for (int c = 0; c < src.c; ++c) out.at(oy, ox, c) = src.at(y, x, c);
    }
  return out;
}

}  // namespace detail

// Congruent crops across all three frames and the ground truth.
template <typename S>
std::vector<Scene<S>> patchify(const Scene<S>& scene, int size = 256,
                               int stride = 64) {
  const auto& px = scene.stack.frames[0].pixels;
  check_arg(size > 0 && stride > 0, "patchify: bad size/stride");
  check_arg(px.h >= size && px.w >= size,
            "patchify: scene smaller than patch size");
  std::vector<Scene<S>> out;
  for (int y0 = 0; y0 + size <= px.h; y0 += stride)
    for (int x0 = 0; x0 + size <= px.w; x0 += stride) {
      Scene<S> patch;
      patch.stack.scene_id = scene.stack.scene_id + "@" + std::to_string(y0) +
                             "," + std::to_string(x0);
      for (int i = 0; i < 3; ++i) {
        auto& f = patch.stack.frames[std::size_t(i)];
        const auto& src = scene.stack.frames[std::size_t(i)];
        f.pixels = detail::crop(src.pixels, y0, x0, size);
        f.exposure_time = src.exposure_time;
        f.exposure_stop = src.exposure_stop;
      }
      if (scene.ground_truth)
        patch.ground_truth = HdrImage<S>{
            detail::crop(scene.ground_truth->pixels, y0, x0, size)};
      out.push_back(std::move(patch));
    }
  return out;
}

// One of the eight dihedral transforms, identical across the stack and GT.
template <typename S>
Scene<S> augment(const Scene<S>& example, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, 7);
  const int which = pick(rng);
  Scene<S> out;
  out.stack.scene_id = example.stack.scene_id;
  for (int i = 0; i < 3; ++i) {
    auto& f = out.stack.frames[std::size_t(i)];
    const auto& src = example.stack.frames[std::size_t(i)];
    f.pixels = detail::dihedral(src.pixels, which);
    f.exposure_time = src.exposure_time;
    f.exposure_stop = src.exposure_stop;
  }
  if (example.ground_truth)
    out.ground_truth =
        HdrImage<S>{detail::dihedral(example.ground_truth->pixels, which)};
  return out;
}

}  // namespace olc
