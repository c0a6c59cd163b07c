// Copyright (c) the UQDM Codec Project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef UQDM_DATA_HPP_
#define UQDM_DATA_HPP_

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "uqdm/common.hpp"
#include "uqdm/denoiser.hpp"
#include "uqdm/grid.hpp"
#include "uqdm/rng.hpp"
#include "uqdm/schedule.hpp"
#include "uqdm/sha256.hpp"

namespace uqdm {

// ---------------------------------------------------------------------------
// Toy swirl source
// ---------------------------------------------------------------------------

// 2-D spiral: theta ~ U[0, 3pi), r = 0.15 + 0.85 theta / (3pi), plus N(0,
// 0.01^2) noise, scaled by 1/1.05 and clamped into [-1, 1]^2. Deterministic
// per seed via the counter RNG.
inline Mat swirl(int n, uint64_t seed) {
  if (n < 1) throw DomainError("swirl: n must be >= 1");
  uint64_t s = derive_stream(seed, kStreamSwirl);
  Mat out(2, n);
  for (int i = 0; i < n; ++i) {
    double theta = 3.0 * kPi * u01(s, 0, i);
    double r = 0.15 + 0.85 * theta / (3.0 * kPi);
    double x = r * std::cos(theta) + 0.01 * gaussian(s, 1, 2 * i);
    double y = r * std::sin(theta) + 0.01 * gaussian(s, 1, 2 * i + 1);
    out(0, i) = std::clamp(x / 1.05, -1.0, 1.0);
    out(1, i) = std::clamp(y / 1.05, -1.0, 1.0);
  }
  return out;
}

// Snaps continuous data to the mid-rise grid; idempotent on gridded data.
inline IndexMat quantize_to_grid(const Mat& x, int V) {
  if (V < 2) throw DomainError("quantize_to_grid: V must be >= 2");
  GridSpec grid{V};
  return grid.indices_of(x);
}

// ---------------------------------------------------------------------------
// Little-endian byte packing
// ---------------------------------------------------------------------------

struct ByteWriter {
  std::vector<uint8_t> bytes;

  void put_u8(uint8_t v) { bytes.push_back(v); }
  void put_u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void put_u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void put_u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void put_f64(double v) { put_u64(std::bit_cast<uint64_t>(v)); }
  void put_raw(const uint8_t* data, size_t n) { bytes.insert(bytes.end(), data, data + n); }
};

struct ByteReader {
  const uint8_t* data;
  size_t size;
  size_t pos = 0;

  ByteReader(const uint8_t* d, size_t s) : data(d), size(s) {}
  explicit ByteReader(const std::vector<uint8_t>& v) : data(v.data()), size(v.size()) {}

  void need(size_t n) const {
    if (pos + n > size) {
      throw FormatError("unexpected end of data at byte " + std::to_string(pos));
    }
  }
  uint8_t get_u8() { need(1); return data[pos++]; }
  uint16_t get_u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(data[pos]) | (static_cast<uint16_t>(data[pos + 1]) << 8);
    pos += 2;
    return v;
  }
  uint32_t get_u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t get_u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double get_f64() { return std::bit_cast<double>(get_u64()); }
  void get_raw(uint8_t* out, size_t n) {
    need(n);
    std::memcpy(out, data + pos, n);
    pos += n;
  }
};

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path);
}

// ---------------------------------------------------------------------------
// PGM (P5) / PPM (P6), maxval 255 only
// ---------------------------------------------------------------------------

struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 = gray, 3 = rgb
  std::vector<uint8_t> pixels;  // row-major, interleaved channels
};

namespace detail {

inline void skip_pnm_space(ByteReader* r) {
  while (r->pos < r->size) {
    uint8_t c = r->data[r->pos];
    if (c == '#') {
      while (r->pos < r->size && r->data[r->pos] != '\n') ++r->pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++r->pos;
    } else {
      break;
    }
  }
}

inline int read_pnm_int(ByteReader* r) {
  skip_pnm_space(r);
  if (r->pos >= r->size || r->data[r->pos] < '0' || r->data[r->pos] > '9') {
    throw FormatError("expected integer in image header at byte " + std::to_string(r->pos));
  }
  long v = 0;
  while (r->pos < r->size && r->data[r->pos] >= '0' && r->data[r->pos] <= '9') {
    v = v * 10 + (r->data[r->pos] - '0');
    if (v > 1 << 24) throw FormatError("image header value too large at byte " +
                                       std::to_string(r->pos));
    ++r->pos;
  }
  return static_cast<int>(v);
}

}  // namespace detail

inline Image decode_image(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("not a binary PGM/PPM file (expected P5 or P6 at byte 0)");
  }
  Image img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  r.pos = 2;
  img.width = detail::read_pnm_int(&r);
  img.height = detail::read_pnm_int(&r);
  int maxval = detail::read_pnm_int(&r);
  if (maxval != 255) {
    throw FormatError("unsupported maxval " + std::to_string(maxval) + " (only 255)");
  }
  if (img.width < 1 || img.height < 1) throw FormatError("empty image dimensions");
  // Exactly one whitespace byte separates the header from the raster.
  if (r.pos >= r.size) throw FormatError("missing raster at byte " + std::to_string(r.pos));
  ++r.pos;
  size_t n = static_cast<size_t>(img.width) * img.height * img.channels;
  img.pixels.resize(n);
  if (r.pos + n > r.size) {
    throw FormatError("truncated pixel data at byte " + std::to_string(r.size) + " (need " +
                      std::to_string(r.pos + n) + " bytes)");
  }
  std::memcpy(img.pixels.data(), r.data + r.pos, n);
  return img;
}

inline Image load_image(const std::string& path) { return decode_image(read_file(path)); }

inline std::vector<uint8_t> encode_image(const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw DomainError("encode_image: channels must be 1 or 3");
  }
  std::string header = (img.channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width) +
                       " " + std::to_string(img.height) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline void save_image(const std::string& path, const Image& img) {
  write_file(path, encode_image(img));
}

// ---------------------------------------------------------------------------
// Gridded 2-D point sets (text, canonical form: "UQPT <n> <V>" + index rows)
// ---------------------------------------------------------------------------

struct PointSet {
  int V = 256;
  IndexMat indices;  // 2 x n
};

inline std::vector<uint8_t> encode_points(const PointSet& ps) {
  std::string s = "UQPT " + std::to_string(ps.indices.cols()) + " " + std::to_string(ps.V) + "\n";
  for (Eigen::Index i = 0; i < ps.indices.cols(); ++i) {
    s += std::to_string(ps.indices(0, i)) + " " + std::to_string(ps.indices(1, i)) + "\n";
  }
  return std::vector<uint8_t>(s.begin(), s.end());
}

inline PointSet decode_points(const std::vector<uint8_t>& bytes) {
  std::string s(bytes.begin(), bytes.end());
  if (s.rfind("UQPT ", 0) != 0) throw FormatError("not a UQPT point file (bad magic)");
  size_t pos = 5;
  auto next_int = [&](long lo, long hi) {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\n' || s[pos] == '\r')) ++pos;
    size_t start = pos;
    while (pos < s.size() && (std::isdigit(static_cast<unsigned char>(s[pos])) || s[pos] == '-'))
      ++pos;
    if (start == pos) throw FormatError("expected integer at byte " + std::to_string(start));
    long v = std::stol(s.substr(start, pos - start));
    if (v < lo || v > hi) throw FormatError("value out of range at byte " + std::to_string(start));
    return v;
  };
  long n = next_int(1, 1 << 26);
  long V = next_int(2, 1 << 20);
  PointSet ps;
  ps.V = static_cast<int>(V);
  ps.indices.resize(2, n);
  for (long i = 0; i < n; ++i) {
    ps.indices(0, i) = static_cast<int32_t>(next_int(0, V - 1));
    ps.indices(1, i) = static_cast<int32_t>(next_int(0, V - 1));
  }
  return ps;
}

inline PointSet load_points(const std::string& path) { return decode_points(read_file(path)); }
inline void save_points(const std::string& path, const PointSet& ps) {
  write_file(path, encode_points(ps));
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "UQDMCKPT", version, schedule, layer shapes, f64 weights
// ---------------------------------------------------------------------------

inline constexpr uint16_t kCheckpointVersion = 1;

inline std::vector<uint8_t> encode_checkpoint(const Model& m) {
  ByteWriter w;
  const char magic[8] = {'U', 'Q', 'D', 'M', 'C', 'K', 'P', 'T'};
  w.put_raw(reinterpret_cast<const uint8_t*>(magic), 8);
  w.put_u16(kCheckpointVersion);
  w.put_u8(m.schedule.learnable() ? 1 : 0);
  w.put_u8(m.config.learned_variance ? 1 : 0);
  w.put_u32(static_cast<uint32_t>(m.schedule.T()));
  w.put_f64(m.schedule.gamma_min());
  w.put_f64(m.schedule.gamma_max());
  w.put_u32(static_cast<uint32_t>(m.config.data_dim));
  w.put_u32(static_cast<uint32_t>(m.config.hidden.size()));
  for (int h : m.config.hidden) w.put_u32(static_cast<uint32_t>(h));
  w.put_u32(static_cast<uint32_t>(m.config.fourier_bands.size()));
  for (int b : m.config.fourier_bands) w.put_u32(static_cast<uint32_t>(b));
  w.put_u32(static_cast<uint32_t>(m.config.time_embed_dim));
  w.put_f64(m.config.var_logit_clamp);
  w.put_u32(static_cast<uint32_t>(m.params.layers()));
  for (int l = 0; l < m.params.layers(); ++l) {
    w.put_u32(static_cast<uint32_t>(m.params.W[l].rows()));
    w.put_u32(static_cast<uint32_t>(m.params.W[l].cols()));
  }
  for (int l = 0; l < m.params.layers(); ++l) {
    const Mat& W = m.params.W[l];
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      for (Eigen::Index j = 0; j < W.cols(); ++j) w.put_f64(W(i, j));
    }
    for (Eigen::Index i = 0; i < m.params.b[l].size(); ++i) w.put_f64(m.params.b[l](i));
  }
  return std::move(w.bytes);
}

inline Model decode_checkpoint(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  char magic[8];
  r.get_raw(reinterpret_cast<uint8_t*>(magic), 8);
  if (std::memcmp(magic, "UQDMCKPT", 8) != 0) {
    throw FormatError("not a UQDM checkpoint (bad magic)");
  }
  uint16_t version = r.get_u16();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  bool learnable = r.get_u8() != 0;
  bool learned_variance = r.get_u8() != 0;
  int T = static_cast<int>(r.get_u32());
  double gmin = r.get_f64();
  double gmax = r.get_f64();
  DenoiserConfig cfg;
  cfg.learned_variance = learned_variance;
  cfg.data_dim = static_cast<int>(r.get_u32());
  cfg.hidden.resize(r.get_u32());
  for (auto& h : cfg.hidden) h = static_cast<int>(r.get_u32());
  cfg.fourier_bands.resize(r.get_u32());
  for (auto& b : cfg.fourier_bands) b = static_cast<int>(r.get_u32());
  cfg.time_embed_dim = static_cast<int>(r.get_u32());
  cfg.var_logit_clamp = r.get_f64();
  uint32_t layers = r.get_u32();
  auto dims = cfg.layer_dims();
  if (layers != dims.size() - 1) {
    throw FormatError("checkpoint layer count disagrees with the configuration");
  }
  MlpParams params;
  std::vector<std::pair<uint32_t, uint32_t>> shapes(layers);
  for (auto& sh : shapes) {
    sh.first = r.get_u32();
    sh.second = r.get_u32();
  }
  for (uint32_t l = 0; l < layers; ++l) {
    if (shapes[l].first != static_cast<uint32_t>(dims[l + 1]) ||
        shapes[l].second != static_cast<uint32_t>(dims[l])) {
      throw FormatError("checkpoint layer " + std::to_string(l) + " has shape " +
                        std::to_string(shapes[l].first) + "x" + std::to_string(shapes[l].second) +
                        ", expected " + std::to_string(dims[l + 1]) + "x" + std::to_string(dims[l]));
    }
    Mat W(shapes[l].first, shapes[l].second);
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = r.get_f64();
    }
    Eigen::VectorXd b(shapes[l].first);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = r.get_f64();
    params.W.push_back(std::move(W));
    params.b.push_back(std::move(b));
  }
  return Model{NoiseSchedule(gmin, gmax, T, learnable), cfg, std::move(params)};
}

struct LoadedModel {
  Model model;
  Digest256 digest;
};

inline LoadedModel load_checkpoint_file(const std::string& path) {
  auto bytes = read_file(path);
  return LoadedModel{decode_checkpoint(bytes), sha256(bytes)};
}

inline Digest256 save_checkpoint_file(const std::string& path, const Model& m) {
  auto bytes = encode_checkpoint(m);
  write_file(path, bytes);
  return sha256(bytes);
}

}  // namespace uqdm

#endif  // UQDM_DATA_HPP_
