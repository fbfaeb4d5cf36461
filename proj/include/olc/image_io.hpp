#pragma once

#include <filesystem>

#include "olc/tensor.hpp"

// Minimal codecs for the scene directory layout: uncompressed 16-bit TIFF
// for LDR frames, Radiance RGBE (.hdr) for radiance maps, binary PPM for
// 8-bit previews. Readers accept both byte orders and 8/16-bit TIFF strips;
// anything fancier (compression, planar layouts) is rejected with a clear
// error.

namespace olc::io {

// Values clamped to [0,1] and quantized to 16-bit.
void write_tiff16(const std::filesystem::path& path,
                  const Tensor<float>& image);

// Normalizes by the container bit depth; grayscale is replicated to RGB,
// alpha is dropped.
Tensor<float> read_tiff(const std::filesystem::path& path);

void write_radiance_hdr(const std::filesystem::path& path,
                        const Tensor<float>& image);

Tensor<float> read_radiance_hdr(const std::filesystem::path& path);

void write_ppm8(const std::filesystem::path& path, const Tensor<float>& image);

}  // namespace olc::io
