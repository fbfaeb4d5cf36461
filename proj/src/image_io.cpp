#include "olc/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace olc::io {

namespace {

void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) fail("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

// ---- TIFF ----------------------------------------------------------------

struct TiffCursor {
  const std::vector<unsigned char>* bytes;
  bool little;

  std::uint16_t u16(std::size_t off) const {
    if (off + 2 > bytes->size()) fail("tiff: truncated file");
    const auto* b = bytes->data() + off;
    return little ? std::uint16_t(b[0] | (b[1] << 8))
                  : std::uint16_t((b[0] << 8) | b[1]);
  }
  std::uint32_t u32(std::size_t off) const {
    if (off + 4 > bytes->size()) fail("tiff: truncated file");
    const auto* b = bytes->data() + off;
    return little ? (std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                     (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24))
                  : ((std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
                     (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]));
  }
};

struct TiffEntry {
  std::uint16_t tag = 0, type = 0;
  std::uint32_t count = 0;
  std::size_t value_off = 0;  // offset of the 4-byte value field itself
};

std::uint32_t entry_scalar(const TiffCursor& c, const TiffEntry& e,
                           std::uint32_t idx = 0) {
  const std::size_t elem = (e.type == 3) ? 2 : 4;  // SHORT or LONG
  if (e.type != 3 && e.type != 4) fail("tiff: unsupported field type");
  std::size_t base = e.value_off;
  if (elem * e.count > 4) base = c.u32(e.value_off);
  const std::size_t off = base + idx * elem;
  return (e.type == 3) ? c.u16(off) : c.u32(off);
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 24) & 0xff);
}

void put_entry(std::vector<unsigned char>& out, std::uint16_t tag,
               std::uint16_t type, std::uint32_t count, std::uint32_t value) {
  put_u16(out, tag);
  put_u16(out, type);
  put_u32(out, count);
  if (type == 3 && count == 1) {
    put_u16(out, std::uint16_t(value));
    put_u16(out, 0);
  } else {
    put_u32(out, value);
  }
}

}  // namespace

void write_tiff16(const std::filesystem::path& path,
                  const Tensor<float>& image) {
  check_arg(image.c == 3, "write_tiff16: expected 3 channels");
  const std::uint32_t w = std::uint32_t(image.w);
  const std::uint32_t h = std::uint32_t(image.h);
  const std::uint32_t byte_count = h * w * 3 * 2;

  // Header(8) + entry count(2) + 10 entries(120) + next-IFD(4) = 134,
  // then the BitsPerSample triple(6), then pixel data at 140.
  const std::uint32_t bps_off = 134;
  const std::uint32_t data_off = 140;

  std::vector<unsigned char> out;
  out.reserve(data_off + byte_count);
  out.push_back('I');
  out.push_back('I');
  put_u16(out, 42);
  put_u32(out, 8);
  put_u16(out, 10);
  put_entry(out, 256, 4, 1, w);               // ImageWidth
  put_entry(out, 257, 4, 1, h);               // ImageLength
  put_entry(out, 258, 3, 3, bps_off);         // BitsPerSample
  put_entry(out, 259, 3, 1, 1);               // Compression: none
  put_entry(out, 262, 3, 1, 2);               // Photometric: RGB
  put_entry(out, 273, 4, 1, data_off);        // StripOffsets
  put_entry(out, 277, 3, 1, 3);               // SamplesPerPixel
  put_entry(out, 278, 4, 1, h);               // RowsPerStrip
  put_entry(out, 279, 4, 1, byte_count);      // StripByteCounts
  put_entry(out, 284, 3, 1, 1);               // PlanarConfiguration: chunky
  put_u32(out, 0);       // next IFD
  put_u16(out, 16);      // BitsPerSample triple at bps_off
  put_u16(out, 16);
  put_u16(out, 16);

  for (std::int64_t i = 0; i < image.size(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, image.data[i]));
    const std::uint16_t q = std::uint16_t(std::lround(v * 65535.0f));
    put_u16(out, q);
  }

  std::ofstream f(path, std::ios::binary);
  if (!f.good()) fail("write_tiff16: cannot open " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()),
          std::streamsize(out.size()));
  if (!f.good()) fail("write_tiff16: write failed for " + path.string());
}

Tensor<float> read_tiff(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  if (bytes.size() < 8) fail("tiff: file too small: " + path.string());
  TiffCursor c{&bytes, true};
  if (bytes[0] == 'I' && bytes[1] == 'I')
    c.little = true;
  else if (bytes[0] == 'M' && bytes[1] == 'M')
    c.little = false;
  else
    fail("tiff: bad byte-order mark: " + path.string());
  if (c.u16(2) != 42) fail("tiff: bad magic: " + path.string());

  const std::size_t ifd = c.u32(4);
  const std::uint16_t n = c.u16(ifd);
  std::vector<TiffEntry> entries;
  for (std::uint16_t i = 0; i < n; ++i) {
    const std::size_t off = ifd + 2 + std::size_t(i) * 12;
    TiffEntry e;
    e.tag = c.u16(off);
    e.type = c.u16(off + 2);
    e.count = c.u32(off + 4);
    e.value_off = off + 8;
    entries.push_back(e);
  }
  auto find = [&](std::uint16_t tag) -> const TiffEntry* {
    for (const auto& e : entries)
      if (e.tag == tag) return &e;
    return nullptr;
  };
  auto require = [&](std::uint16_t tag, const char* name) -> const TiffEntry& {
    const TiffEntry* e = find(tag);
    if (!e) fail(std::string("tiff: missing tag ") + name);
    return *e;
  };

  const std::uint32_t w = entry_scalar(c, require(256, "ImageWidth"));
  const std::uint32_t h = entry_scalar(c, require(257, "ImageLength"));
  const TiffEntry& bps_e = require(258, "BitsPerSample");
  const std::uint32_t bps = entry_scalar(c, bps_e, 0);
  for (std::uint32_t i = 1; i < bps_e.count; ++i)
    if (entry_scalar(c, bps_e, i) != bps)
      fail("tiff: mixed bits-per-sample not supported");
  if (bps != 8 && bps != 16) fail("tiff: only 8/16-bit samples supported");
  if (const TiffEntry* e = find(259))
    if (entry_scalar(c, *e) != 1) fail("tiff: compressed files not supported");
  if (const TiffEntry* e = find(284))
    if (entry_scalar(c, *e) != 1) fail("tiff: planar layout not supported");
  std::uint32_t spp = 1;
  if (const TiffEntry* e = find(277)) spp = entry_scalar(c, *e);
  if (spp < 1 || spp > 4) fail("tiff: unsupported samples-per-pixel");

  const TiffEntry& offsets = require(273, "StripOffsets");
  const TiffEntry& counts = require(279, "StripByteCounts");
  if (offsets.count != counts.count) fail("tiff: strip table mismatch");

  const std::size_t total = std::size_t(w) * h * spp;
  std::vector<std::uint32_t> raw(total);
  std::size_t filled = 0;
  for (std::uint32_t s = 0; s < offsets.count; ++s) {
    std::size_t off = entry_scalar(c, offsets, s);
    const std::size_t len = entry_scalar(c, counts, s);
    const std::size_t elem = bps / 8;
    for (std::size_t i = 0; i + elem <= len && filled < total; i += elem) {
      raw[filled++] = (bps == 16) ? c.u16(off + i) : bytes.at(off + i);
    }
  }
  if (filled != total) fail("tiff: pixel data truncated");

  const float scale = (bps == 16) ? 65535.0f : 255.0f;
  Tensor<float> img(int(h), int(w), 3);
  for (std::size_t p = 0; p < std::size_t(w) * h; ++p) {
    float rgb[3];
    if (spp == 1) {
      rgb[0] = rgb[1] = rgb[2] = float(raw[p]) / scale;
    } else {
      for (int ch = 0; ch < 3; ++ch)
        rgb[ch] = float(raw[p * spp + std::size_t(std::min<std::uint32_t>(
                            ch, spp - 1))]) /
                  scale;
    }
    for (int ch = 0; ch < 3; ++ch) img.data[p * 3 + ch] = rgb[ch];
  }
  return img;
}

// ---- Radiance RGBE --------------------------------------------------------

namespace {

void float_to_rgbe(float r, float g, float b, unsigned char out[4]) {
  const float v = std::max(r, std::max(g, b));
  if (v < 1e-32f) {
    out[0] = out[1] = out[2] = out[3] = 0;
    return;
  }
  int e = 0;
  const float m = std::frexp(v, &e);
  const float scale = m * 256.0f / v;
  out[0] = (unsigned char)(std::min(255.0f, r * scale));
  out[1] = (unsigned char)(std::min(255.0f, g * scale));
  out[2] = (unsigned char)(std::min(255.0f, b * scale));
  out[3] = (unsigned char)(e + 128);
}

void rgbe_to_float(const unsigned char in[4], float* r, float* g, float* b) {
  if (in[3] == 0) {
    *r = *g = *b = 0.0f;
    return;
  }
  const float scale = std::ldexp(1.0f, int(in[3]) - (128 + 8));
  *r = (float(in[0]) + 0.5f) * scale;
  *g = (float(in[1]) + 0.5f) * scale;
  *b = (float(in[2]) + 0.5f) * scale;
}

void write_rle_component(std::vector<unsigned char>& out,
                         const std::vector<unsigned char>& line) {
  const int n = int(line.size());
  int i = 0;
  while (i < n) {
    // Find the next run of >= 4 identical bytes.
    int run_start = i;
    int run_len = 0;
    while (run_start < n) {
      run_len = 1;
      while (run_start + run_len < n && run_len < 127 &&
             line[run_start + run_len] == line[run_start])
        ++run_len;
      if (run_len >= 4) break;
      run_start += run_len;
    }
    if (run_start >= n || run_len < 4) run_start = n;
    // Literal bytes up to the run.
    int lit = run_start - i;
    while (lit > 0) {
      const int chunk = std::min(lit, 128);
      out.push_back((unsigned char)chunk);
      for (int j = 0; j < chunk; ++j) out.push_back(line[i + j]);
      i += chunk;
      lit -= chunk;
    }
    if (run_start < n) {
      out.push_back((unsigned char)(128 + run_len));
      out.push_back(line[run_start]);
      i = run_start + run_len;
    }
  }
}

}  // namespace

void write_radiance_hdr(const std::filesystem::path& path,
                        const Tensor<float>& image) {
  check_arg(image.c == 3, "write_radiance_hdr: expected 3 channels");
  std::ofstream f(path, std::ios::binary);
  if (!f.good()) fail("write_radiance_hdr: cannot open " + path.string());
  f << "#?RADIANCE\n";
  f << "FORMAT=32-bit_rle_rgbe\n\n";
  f << "-Y " << image.h << " +X " << image.w << "\n";

  const bool rle = image.w >= 8 && image.w <= 0x7fff;
  std::vector<unsigned char> scan;
  for (int y = 0; y < image.h; ++y) {
    std::vector<std::vector<unsigned char>> comps(
        4, std::vector<unsigned char>(std::size_t(image.w)));
    for (int x = 0; x < image.w; ++x) {
      unsigned char rgbe[4];
      float_to_rgbe(std::max(0.0f, image.at(y, x, 0)),
                    std::max(0.0f, image.at(y, x, 1)),
                    std::max(0.0f, image.at(y, x, 2)), rgbe);
      for (int k = 0; k < 4; ++k) comps[k][std::size_t(x)] = rgbe[k];
    }
    scan.clear();
    if (rle) {
      scan.push_back(2);
      scan.push_back(2);
      scan.push_back((unsigned char)(image.w >> 8));
      scan.push_back((unsigned char)(image.w & 0xff));
      for (int k = 0; k < 4; ++k) write_rle_component(scan, comps[k]);
    } else {
      for (int x = 0; x < image.w; ++x)
        for (int k = 0; k < 4; ++k) scan.push_back(comps[k][std::size_t(x)]);
    }
    f.write(reinterpret_cast<const char*>(scan.data()),
            std::streamsize(scan.size()));
  }
  if (!f.good()) fail("write_radiance_hdr: write failed");
}

Tensor<float> read_radiance_hdr(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    std::string line;
    while (pos < bytes.size() && bytes[pos] != '\n')
      line.push_back(char(bytes[pos++]));
    if (pos < bytes.size()) ++pos;
    return line;
  };

  std::string magic = next_line();
  if (magic.rfind("#?", 0) != 0)
    fail("radiance: bad magic in " + path.string());
  bool format_ok = false;
  std::string line;
  while (pos < bytes.size()) {
    line = next_line();
    if (line.empty()) break;
    if (line.rfind("FORMAT=", 0) == 0) {
      if (line != "FORMAT=32-bit_rle_rgbe")
        fail("radiance: unsupported format: " + line);
      format_ok = true;
    }
  }
  if (!format_ok) fail("radiance: missing FORMAT line");
  line = next_line();
  int h = 0, w = 0;
  if (std::sscanf(line.c_str(), "-Y %d +X %d", &h, &w) != 2)
    fail("radiance: unsupported resolution line: " + line);
  if (h <= 0 || w <= 0) fail("radiance: bad dimensions");

  Tensor<float> img(h, w, 3);
  std::vector<unsigned char> row(std::size_t(w) * 4);
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) fail("radiance: truncated pixel data");
  };
  for (int y = 0; y < h; ++y) {
    need(4);
    const unsigned char b0 = bytes[pos], b1 = bytes[pos + 1],
                        b2 = bytes[pos + 2], b3 = bytes[pos + 3];
    const bool new_rle = (b0 == 2 && b1 == 2 && ((b2 << 8) | b3) == w);
    if (new_rle) {
      pos += 4;
      for (int k = 0; k < 4; ++k) {
        int x = 0;
        while (x < w) {
          need(1);
          const int code = bytes[pos++];
          if (code > 128) {
            need(1);
            const unsigned char v = bytes[pos++];
            const int len = code - 128;
            if (x + len > w) fail("radiance: RLE run overflow");
            for (int j = 0; j < len; ++j) row[std::size_t(x++) * 4 + k] = v;
          } else {
            const int len = code;
            if (len == 0 || x + len > w) fail("radiance: bad RLE literal");
            need(std::size_t(len));
            for (int j = 0; j < len; ++j)
              row[std::size_t(x++) * 4 + k] = bytes[pos++];
          }
        }
      }
    } else {
      // Flat scanline (optionally with the old-style repeat marker).
      int x = 0;
      while (x < w) {
        need(4);
        const unsigned char r = bytes[pos], g = bytes[pos + 1],
                            b = bytes[pos + 2], e = bytes[pos + 3];
        pos += 4;
        if (r == 1 && g == 1 && b == 1) {
          if (x == 0) fail("radiance: repeat marker at line start");
          const int count = int(e);
          if (x + count > w) fail("radiance: repeat overflow");
          for (int j = 0; j < count; ++j, ++x)
            std::memcpy(&row[std::size_t(x) * 4], &row[std::size_t(x - 1) * 4],
                        4);
        } else {
          row[std::size_t(x) * 4 + 0] = r;
          row[std::size_t(x) * 4 + 1] = g;
          row[std::size_t(x) * 4 + 2] = b;
          row[std::size_t(x) * 4 + 3] = e;
          ++x;
        }
      }
    }
    for (int x = 0; x < w; ++x) {
      float r, g, b;
      rgbe_to_float(&row[std::size_t(x) * 4], &r, &g, &b);
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  }
  return img;
}

void write_ppm8(const std::filesystem::path& path,
                const Tensor<float>& image) {
  check_arg(image.c == 3, "write_ppm8: expected 3 channels");
  std::ofstream f(path, std::ios::binary);
  if (!f.good()) fail("write_ppm8: cannot open " + path.string());
  f << "P6\n" << image.w << " " << image.h << "\n255\n";
  for (std::int64_t i = 0; i < image.size(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, image.data[i]));
    const unsigned char q = (unsigned char)std::lround(v * 255.0f);
    f.write(reinterpret_cast<const char*>(&q), 1);
  }
  if (!f.good()) fail("write_ppm8: write failed");
}

}  // namespace olc::io
