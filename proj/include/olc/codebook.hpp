#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <tuple>
#include <vector>

#include "olc/ops.hpp"

// Overlapped codebook: per-exposure-class segment windows over a shared
// code matrix, exhaustive nearest-neighbor quantization, the VQ loss pair
// and usage statistics.

namespace olc {

// 1..3 select the short/mid/long LDR windows, 4 the full HDR window.
struct InputClass {
  int eta = 4;

  void validate() const {
    check_arg(eta >= 1 && eta <= 4, "InputClass: eta must lie in {1,2,3,4}");
  }
};

struct SegmentRange {
  int begin = 0, end = 0;  // half-open [begin, end)

  int size() const { return end - begin; }
  bool contains(int k) const { return k >= begin && k < end; }
};

// LDR class i gets the half-width window [(i-1)*K/4, (i+1)*K/4); adjacent
// windows share K/4 codes and their union covers the whole book, which the
// HDR class (eta=4) uses directly.
inline SegmentRange segment_range(InputClass eta, int K) {
  eta.validate();
  check_arg(K > 0 && K % 4 == 0, "segment_range: K must be divisible by 4");
  const int alpha = K / 4;
  if (eta.eta == 4) return {0, K};
  return {(eta.eta - 1) * alpha, (eta.eta + 1) * alpha};
}

template <typename S>
struct QuantizationResult {
  Tensor<S> quantized;          // h x w x n_z
  std::vector<int> indices;     // h*w entries into [0, K)
  S codebook_loss = S(0);       // ||sg[z] - zq||^2, mean reduced
  S commitment_loss = S(0);     // ||sg[zq] - z||^2, mean reduced
};

template <typename S>
struct OverlappedCodebook {
  Param<S> codes;  // (K, 1, n_z); row k is code vector k
  int K = 0;
  int n_z = 0;
  std::uint64_t seed = 0;

  OverlappedCodebook() = default;
  OverlappedCodebook(int K_, int n_z_, std::uint64_t seed_)
      : K(K_), n_z(n_z_), seed(seed_) {
    check_arg(K > 0 && K % 4 == 0, "OverlappedCodebook: K divisible by 4");
    check_arg(n_z > 0, "OverlappedCodebook: n_z must be positive");
    Rng rng(seed);
    codes = Param<S>(
        Tensor<S>::uniform(K, 1, n_z, rng, S(-1) / S(K), S(1) / S(K)));
  }

  int alpha() const { return K / 4; }

  Eigen::Map<const typename Tensor<S>::MatrixRM> matrix() const {
    return Eigen::Map<const typename Tensor<S>::MatrixRM>(
        codes.value.data.data(), K, n_z);
  }
};

// Exhaustive nearest-neighbor indices inside `range`; ties break toward the
// lowest index. Exact search is cheap at the codebook sizes used here.
template <typename S>
std::vector<int> nearest_code_indices(const Tensor<S>& features,
                                      const OverlappedCodebook<S>& cb,
                                      SegmentRange range) {
  check_arg(features.c == cb.n_z, "quantize: feature depth != n_z");
  check_arg(features.all_finite(), "quantize: non-finite feature values");
  check_arg(range.begin >= 0 && range.end <= cb.K && range.size() > 0,
            "quantize: bad segment range");
  const auto cm = cb.matrix();
  const int positions = features.h * features.w;
  std::vector<int> idx(positions);
  for (int j = 0; j < positions; ++j) {
    const auto z = features.data.segment(std::int64_t(j) * cb.n_z, cb.n_z);
    S best = std::numeric_limits<S>::max();
    int best_k = range.begin;
    for (int k = range.begin; k < range.end; ++k) {
      S d = S(0);
      for (int c = 0; c < cb.n_z; ++c) {
        const S diff = z[c] - cm(k, c);
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        best_k = k;
      }
    }
    idx[j] = best_k;
  }
  return idx;
}

// Value-level quantization: nearest codes plus the Eq-style loss pair with
// mean reduction over positions and channels.
template <typename S>
QuantizationResult<S> quantize(const Tensor<S>& features,
                               const OverlappedCodebook<S>& cb,
                               InputClass eta) {
  const SegmentRange range = segment_range(eta, cb.K);
  QuantizationResult<S> out;
  out.indices = nearest_code_indices(features, cb, range);
  out.quantized = Tensor<S>(features.h, features.w, cb.n_z);
  const auto cm = cb.matrix();
  for (std::size_t j = 0; j < out.indices.size(); ++j)
    for (int c = 0; c < cb.n_z; ++c)
      out.quantized.data[std::int64_t(j) * cb.n_z + c] =
          cm(out.indices[j], c);
  const S mse =
      S((features.data - out.quantized.data).square().sum() /
        double(features.size()));
  out.codebook_loss = mse;
  out.commitment_loss = mse;
  return out;
}

// Tape-level VQ loss (mean reduction). The first term routes gradient to the
// code rows only, the second to the encoder only.
template <typename S>
struct VqLossVars {
  Var codebook_loss, commitment_loss, total;
};

template <typename S>
VqLossVars<S> vq_loss(Tape<S>& t, Var encoded, Var quantized, S beta) {
  check_arg(beta >= S(0), "vq_loss: beta must be >= 0");
  check_same_shape(t.val(encoded), t.val(quantized), "vq_loss");
  Var cb = mse_mean(t, stop_gradient(t, encoded), quantized);
  Var commit = mse_mean(t, stop_gradient(t, quantized), encoded);
  Var total = add(t, cb, scale(t, commit, beta));
  return {cb, commit, total};
}

inline std::vector<std::int64_t> usage_histogram(
    const std::vector<std::vector<int>>& index_arrays, int K) {
  check_arg(K > 0, "usage_histogram: K must be positive");
  std::vector<std::int64_t> counts(std::size_t(K), 0);
  for (const auto& arr : index_arrays)
    for (int k : arr) {
      check_arg(k >= 0 && k < K, "usage_histogram: index out of range");
      ++counts[std::size_t(k)];
    }
  return counts;
}

inline int used_code_count(const std::vector<std::int64_t>& histogram) {
  int used = 0;
  for (auto c : histogram)
    if (c >= 1) ++used;
  return used;
}

// On-disk format: raw little-endian float32 row-major K x n_z blob plus a
// key=value sidecar manifest.
template <typename S>
void save_codebook(const OverlappedCodebook<S>& cb,
                   const std::filesystem::path& blob_path,
                   const std::filesystem::path& manifest_path) {
  std::ofstream blob(blob_path, std::ios::binary);
  check_state(blob.good(), "save_codebook: cannot open " + blob_path.string());
  for (std::int64_t i = 0; i < cb.codes.value.size(); ++i) {
    const float v = float(cb.codes.value.data[i]);
    blob.write(reinterpret_cast<const char*>(&v), sizeof(float));
  }
  check_state(blob.good(), "save_codebook: write failed");
  std::ofstream man(manifest_path);
  check_state(man.good(),
              "save_codebook: cannot open " + manifest_path.string());
  man << "K=" << cb.K << "\n"
      << "n_z=" << cb.n_z << "\n"
      << "alpha=" << cb.alpha() << "\n"
      << "seed=" << cb.seed << "\n";
}

template <typename S>
OverlappedCodebook<S> load_codebook(const std::filesystem::path& blob_path,
                                    const std::filesystem::path& manifest_path) {
  std::ifstream man(manifest_path);
  check_state(man.good(),
              "load_codebook: cannot open " + manifest_path.string());
  int K = -1, n_z = -1, alpha = -1;
  std::uint64_t seed = 0;
  std::string line;
  while (std::getline(man, line)) {
    const auto pos = line.find('=');
    if (pos == std::string::npos) continue;
    const std::string key = line.substr(0, pos);
    const std::string value = line.substr(pos + 1);
    if (key == "K") K = std::stoi(value);
    else if (key == "n_z") n_z = std::stoi(value);
    else if (key == "alpha") alpha = std::stoi(value);
    else if (key == "seed") seed = std::stoull(value);
  }
  check_state(K > 0 && n_z > 0, "load_codebook: manifest missing K or n_z");
  check_state(alpha == K / 4, "load_codebook: manifest alpha != K/4");

  OverlappedCodebook<S> cb;
  cb.K = K;
  cb.n_z = n_z;
  cb.seed = seed;
  cb.codes = Param<S>(Tensor<S>(K, 1, n_z));
  std::ifstream blob(blob_path, std::ios::binary);
  check_state(blob.good(), "load_codebook: cannot open " + blob_path.string());
  for (std::int64_t i = 0; i < cb.codes.value.size(); ++i) {
    float v = 0;
    blob.read(reinterpret_cast<char*>(&v), sizeof(float));
    check_state(blob.good(), "load_codebook: blob truncated");
    cb.codes.value.data[i] = S(v);
  }
  return cb;
}

}  // namespace olc
