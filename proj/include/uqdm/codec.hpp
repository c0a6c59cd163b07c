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

#ifndef UQDM_CODEC_HPP_
#define UQDM_CODEC_HPP_

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uqdm/common.hpp"
#include "uqdm/data.hpp"
#include "uqdm/diffusion.hpp"
#include "uqdm/rans.hpp"
#include "uqdm/reconstruct.hpp"
#include "uqdm/uq.hpp"

namespace uqdm {

enum class DataKind : uint8_t { kPoints2D = 0, kImageGray = 1, kImageRgb = 2 };

// The unit the codec operates on: N elements of model dimension D sharing a
// single bitstream (a batch of 2-D points, or one flattened image).
struct DataTensor {
  DataKind kind = DataKind::kPoints2D;
  int width = 0;
  int height = 0;
  int channels = 1;
  GridSpec grid{256};
  IndexMat indices;  // D x N grid levels

  Eigen::Index dim() const { return indices.rows(); }
  Eigen::Index elements() const { return indices.cols(); }
  Mat values() const { return grid.values_of(indices); }
};

inline DataTensor tensor_from_image(const Image& img) {
  DataTensor t;
  t.kind = img.channels == 1 ? DataKind::kImageGray : DataKind::kImageRgb;
  t.width = img.width;
  t.height = img.height;
  t.channels = img.channels;
  t.grid = GridSpec{256};
  t.indices.resize(static_cast<Eigen::Index>(img.pixels.size()), 1);
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    t.indices(static_cast<Eigen::Index>(i), 0) = img.pixels[i];
  }
  return t;
}

inline Image image_from_tensor(const DataTensor& t) {
  if (t.kind == DataKind::kPoints2D) throw DomainError("not an image tensor");
  if (t.grid.V != 256) throw DomainError("images require the 256-level grid");
  Image img;
  img.width = t.width;
  img.height = t.height;
  img.channels = t.channels;
  img.pixels.resize(static_cast<size_t>(t.indices.rows()));
  for (Eigen::Index i = 0; i < t.indices.rows(); ++i) {
    img.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(t.indices(i, 0));
  }
  return img;
}

inline DataTensor tensor_from_points(const PointSet& ps) {
  DataTensor t;
  t.kind = DataKind::kPoints2D;
  t.grid = GridSpec{ps.V};
  t.indices = ps.indices;
  return t;
}

inline PointSet points_from_tensor(const DataTensor& t) {
  if (t.kind != DataKind::kPoints2D) throw DomainError("not a point tensor");
  return PointSet{t.grid.V, t.indices};
}

// ---------------------------------------------------------------------------
// Bitstream header
// ---------------------------------------------------------------------------

inline constexpr uint16_t kStreamVersion = 1;
inline constexpr uint8_t kFlagLearnedVariance = 0x01;

struct BitstreamHeader {
  uint16_t version = kStreamVersion;
  DataKind kind = DataKind::kPoints2D;
  uint8_t flags = 0;
  ReconMode recon_default = ReconMode::kDenoise;
  uint32_t width = 0, height = 0, channels = 1, elements = 0;
  uint32_t V = 256;
  uint32_t T = 0;
  double gamma_min = 0.0, gamma_max = 0.0;
  uint64_t seed = 0;
  Digest256 digest{};

  Eigen::Index dim() const {
    return kind == DataKind::kPoints2D
               ? 2
               : static_cast<Eigen::Index>(width) * height * channels;
  }
};

inline constexpr size_t kHeaderBytes = 4 + 2 + 1 + 1 + 1 + 1 + 4 * 4 + 4 + 4 + 8 + 8 + 8 + 32;

inline void write_header(const BitstreamHeader& h, ByteWriter* w) {
  const char magic[4] = {'U', 'Q', 'D', 'M'};
  w->put_raw(reinterpret_cast<const uint8_t*>(magic), 4);
  w->put_u16(h.version);
  w->put_u8(static_cast<uint8_t>(h.kind));
  w->put_u8(h.flags);
  w->put_u8(static_cast<uint8_t>(h.recon_default));
  w->put_u8(0);  // reserved
  w->put_u32(h.width);
  w->put_u32(h.height);
  w->put_u32(h.channels);
  w->put_u32(h.elements);
  w->put_u32(h.V);
  w->put_u32(h.T);
  w->put_f64(h.gamma_min);
  w->put_f64(h.gamma_max);
  w->put_u64(h.seed);
  w->put_raw(h.digest.data(), h.digest.size());
}

inline BitstreamHeader read_header(ByteReader* r) {
  char magic[4];
  r->get_raw(reinterpret_cast<uint8_t*>(magic), 4);
  if (std::memcmp(magic, "UQDM", 4) != 0) throw FormatError("not a UQDM stream (bad magic)");
  BitstreamHeader h;
  h.version = r->get_u16();
  if (h.version != kStreamVersion) {
    throw FormatError("unsupported stream version " + std::to_string(h.version));
  }
  uint8_t kind = r->get_u8();
  if (kind > 2) throw FormatError("unknown data kind " + std::to_string(kind));
  h.kind = static_cast<DataKind>(kind);
  h.flags = r->get_u8();
  uint8_t recon = r->get_u8();
  if (recon > 2) throw FormatError("unknown reconstruction mode " + std::to_string(recon));
  h.recon_default = static_cast<ReconMode>(recon);
  r->get_u8();  // reserved
  h.width = r->get_u32();
  h.height = r->get_u32();
  h.channels = r->get_u32();
  h.elements = r->get_u32();
  h.V = r->get_u32();
  h.T = r->get_u32();
  h.gamma_min = r->get_f64();
  h.gamma_max = r->get_f64();
  h.seed = r->get_u64();
  r->get_raw(h.digest.data(), h.digest.size());
  return h;
}

// ---------------------------------------------------------------------------
// Coding-density parameter rounding (normative)
// ---------------------------------------------------------------------------

// Both coder sides snap mu/delta and log2(scale) to the 2^-16 grid before
// building tables, so byte-identical tables only require byte-identical
// weights, not bit-reproducible transcendental libraries across builds.
inline double round_q16(double v) { return std::nearbyint(v * 65536.0) / 65536.0; }

inline void rounded_density_params(double mean, double scale, double delta, double* mu_r,
                                   double* scale_r) {
  *mu_r = delta * round_q16(mean / delta);
  *scale_r = std::exp2(round_q16(std::log2(scale)));
}

// Per-coordinate CDF table for one diffusion step, built in parallel batches
// (learned variances mean every coordinate has its own table).
inline std::vector<QuantizedCdf> build_step_cdfs(const ReverseDensity& den, uint64_t seed,
                                                 int t, int threads) {
  const Eigen::Index D = den.mean.rows(), N = den.mean.cols();
  std::vector<QuantizedCdf> cdfs(static_cast<size_t>(D) * N);
  std::exception_ptr error;
  parallel_for(cdfs.size(), threads, [&](size_t lo, size_t hi) {
    try {
      for (size_t f = lo; f < hi; ++f) {
        Eigen::Index n = static_cast<Eigen::Index>(f) / D;
        Eigen::Index r = static_cast<Eigen::Index>(f) % D;
        double mu_r, scale_r;
        rounded_density_params(den.mean(r, n), den.scale(r, n), den.delta, &mu_r, &scale_r);
        cdfs[f] = build_cdf(mu_r, scale_r, den.delta,
                            dither(seed, static_cast<uint64_t>(t), f));
      }
    } catch (...) {
      error = std::current_exception();
    }
  });
  if (error) std::rethrow_exception(error);
  return cdfs;
}

// Categorical tables for the lossless tail.
inline std::vector<QuantizedCdf> build_tail_cdfs(const Model& m, const Mat& z0,
                                                 const GridSpec& grid, int threads) {
  auto as0 = m.schedule.alpha_sigma(0);
  const Eigen::Index D = z0.rows(), N = z0.cols();
  const int V = grid.V;
  std::vector<QuantizedCdf> cdfs(static_cast<size_t>(D) * N);
  std::exception_ptr error;
  parallel_for(cdfs.size(), threads, [&](size_t lo, size_t hi) {
    try {
      std::vector<double> p(V);
      for (size_t f = lo; f < hi; ++f) {
        Eigen::Index n = static_cast<Eigen::Index>(f) / D;
        Eigen::Index r = static_cast<Eigen::Index>(f) % D;
        double z = z0(r, n);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < V; ++j) {
          double d = z - as0.alpha * grid.value(j);
          p[j] = -d * d / (2.0 * as0.sigma2);
          mx = std::max(mx, p[j]);
        }
        double norm = 0.0;
        for (int j = 0; j < V; ++j) norm += (p[j] = std::exp(p[j] - mx));
        for (int j = 0; j < V; ++j) p[j] /= norm;
        cdfs[f] = build_categorical_cdf(p);
      }
    } catch (...) {
      error = std::current_exception();
    }
  });
  if (error) std::rethrow_exception(error);
  return cdfs;
}

// ---------------------------------------------------------------------------
// compress / decompress
// ---------------------------------------------------------------------------

struct CodecOptions {
  int threads = 1;
  ReconMode recon_default = ReconMode::kDenoise;
};

// Algorithm 1. z_T comes from the shared seed; each step quantizes
// mu_Q = b z_t + c x with the coordinate dither and entropy-codes the lattice
// index under the reverse density built from x_hat (never from x); the tail
// codes x itself under the categorical at the decoded z_0.
inline std::vector<uint8_t> compress(const DataTensor& x, const Model& m,
                                     const Digest256& weights_digest, uint64_t seed,
                                     const CodecOptions& opts = {}) {
  if (x.dim() != m.config.data_dim) {
    throw DomainError("compress: tensor dimension " + std::to_string(x.dim()) +
                      " does not match the model's " + std::to_string(m.config.data_dim));
  }
  const int T = m.schedule.T();
  BitstreamHeader h;
  h.kind = x.kind;
  h.flags = m.config.learned_variance ? kFlagLearnedVariance : 0;
  h.recon_default = opts.recon_default;
  h.width = static_cast<uint32_t>(x.width);
  h.height = static_cast<uint32_t>(x.height);
  h.channels = static_cast<uint32_t>(x.channels);
  h.elements = static_cast<uint32_t>(x.elements());
  h.V = static_cast<uint32_t>(x.grid.V);
  h.T = static_cast<uint32_t>(T);
  h.gamma_min = m.schedule.gamma_min();
  h.gamma_max = m.schedule.gamma_max();
  h.seed = seed;
  h.digest = weights_digest;

  ByteWriter w;
  write_header(h, &w);
  const Eigen::Index D = x.dim(), N = x.elements();
  if (D * N == 0) return std::move(w.bytes);

  Mat values = x.values();
  Mat z = draw_prior_latent(seed, D, N);
  auto emit_chunk = [&w](std::vector<uint8_t> chunk) {
    w.put_u32(static_cast<uint32_t>(chunk.size()));
    w.put_raw(chunk.data(), chunk.size());
  };

  for (int t = T; t >= 1; --t) {
    ReverseDensity den = reverse_density(m, z, t, &values);
    std::vector<QuantizedCdf> cdfs = build_step_cdfs(den, seed, t, opts.threads);
    RansEncoder enc;
    for (Eigen::Index n = 0; n < N; ++n) {
      for (Eigen::Index r = 0; r < D; ++r) {
        uint64_t f = flat_index(D, r, n);
        double u = dither(seed, static_cast<uint64_t>(t), f);
        int64_t k = uq_quantize(den.mu_q(r, n), den.delta, u);
        enc.put_symbol(cdfs[f], k);
        z(r, n) = uq_reconstruct(k, den.delta, u);
      }
    }
    emit_chunk(enc.finish());
  }

  std::vector<QuantizedCdf> tail = build_tail_cdfs(m, z, x.grid, opts.threads);
  RansEncoder enc;
  for (Eigen::Index n = 0; n < N; ++n) {
    for (Eigen::Index r = 0; r < D; ++r) {
      enc.put_symbol(tail[flat_index(D, r, n)], x.indices(r, n));
    }
  }
  emit_chunk(enc.finish());
  return std::move(w.bytes);
}

struct DecodeResult {
  DataTensor data;
  bool lossy = false;
  int t_reached = 0;          // latent level the decoder stopped at
  int chunks_decoded = 0;
  uint64_t payload_bits = 0;  // bits of the chunks actually consumed
  Mat latent;                 // z at t_reached
  Mat recon_values;           // continuous reconstruction (lossy path)
};

struct ChunkView {
  size_t offset;
  size_t size;
};

// Splits the post-header bytes into complete chunks; a trailing partial
// chunk (truncated mid-transfer) is ignored.
inline std::vector<ChunkView> scan_chunks(const std::vector<uint8_t>& stream, size_t pos) {
  std::vector<ChunkView> chunks;
  while (pos + 4 <= stream.size()) {
    uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(stream[pos + i]) << (8 * i);
    if (pos + 4 + len > stream.size()) break;
    chunks.push_back({pos + 4, len});
    pos += 4 + static_cast<size_t>(len);
  }
  return chunks;
}

inline BitstreamHeader inspect_header(const std::vector<uint8_t>& stream) {
  ByteReader r(stream);
  if (stream.size() < kHeaderBytes) throw DecodeError("stream shorter than its header");
  return read_header(&r);
}

// Algorithm 2. Decodes every complete chunk (optionally stopping once z_t is
// in hand for t = stop_at); a full stream reproduces x exactly, otherwise the
// requested lossy reconstruction is returned.
inline DecodeResult decompress(const std::vector<uint8_t>& stream, const Model& m,
                               const Digest256& weights_digest,
                               std::optional<int> stop_at = std::nullopt,
                               std::optional<ReconMode> recon_mode = std::nullopt,
                               const CodecOptions& opts = {}) {
  BitstreamHeader h = inspect_header(stream);
  if (h.digest != weights_digest) {
    throw DigestMismatchError(
        "stream was produced under different weights (digest mismatch); refusing to decode");
  }
  if (static_cast<int>(h.T) != m.schedule.T() ||
      h.dim() != m.config.data_dim) {
    throw DigestMismatchError("stream header disagrees with the loaded model");
  }
  const int T = static_cast<int>(h.T);
  const Eigen::Index D = h.dim(), N = h.elements;
  if (stop_at && (*stop_at < 0 || *stop_at > T)) {
    throw DomainError("stop_at must lie in [0, T]");
  }

  DecodeResult out;
  out.data.kind = h.kind;
  out.data.width = static_cast<int>(h.width);
  out.data.height = static_cast<int>(h.height);
  out.data.channels = static_cast<int>(h.channels);
  out.data.grid = GridSpec{static_cast<int>(h.V)};
  if (D * N == 0) {
    out.data.indices.resize(D, N);
    out.t_reached = T;
    return out;
  }

  std::vector<ChunkView> chunks = scan_chunks(stream, kHeaderBytes);
  Mat z = draw_prior_latent(h.seed, D, N);
  int t = T;  // z currently holds z_t
  int want_t = stop_at.value_or(0);
  size_t ci = 0;
  for (; t > want_t && ci < chunks.size() && ci < static_cast<size_t>(T); ++ci) {
    ReverseDensity den = reverse_density(m, z, t);
    std::vector<QuantizedCdf> cdfs = build_step_cdfs(den, h.seed, t, opts.threads);
    RansDecoder dec(stream.data() + chunks[ci].offset, chunks[ci].size);
    for (Eigen::Index n = 0; n < N; ++n) {
      for (Eigen::Index r = 0; r < D; ++r) {
        uint64_t f = flat_index(D, r, n);
        int64_t k = dec.decode_symbol(cdfs[f]);
        z(r, n) = uq_reconstruct(k, den.delta, dither(h.seed, static_cast<uint64_t>(t), f));
      }
    }
    dec.finish();
    out.payload_bits += 8 * (chunks[ci].size + 4);
    --t;
  }
  out.t_reached = t;
  out.chunks_decoded = static_cast<int>(ci);
  out.latent = z;

  bool full = (t == 0) && !stop_at && ci < chunks.size();
  if (full) {
    std::vector<QuantizedCdf> tail = build_tail_cdfs(m, z, out.data.grid, opts.threads);
    RansDecoder dec(stream.data() + chunks[ci].offset, chunks[ci].size);
    out.data.indices.resize(D, N);
    for (Eigen::Index n = 0; n < N; ++n) {
      for (Eigen::Index r = 0; r < D; ++r) {
        int64_t j = dec.decode_symbol(tail[flat_index(D, r, n)]);
        if (j < 0 || j >= out.data.grid.V) throw DecodeError("tail symbol off the grid");
        out.data.indices(r, n) = static_cast<int32_t>(j);
      }
    }
    dec.finish();
    out.payload_bits += 8 * (chunks[ci].size + 4);
    out.lossy = false;
    return out;
  }

  ReconMode mode = recon_mode.value_or(h.recon_default);
  out.recon_values = reconstruct(m, z, t, mode, out.data.grid, h.seed);
  out.data.indices = out.data.grid.indices_of(out.recon_values);
  out.lossy = true;
  return out;
}

// Exact chunk sizes in bits; header accounted separately.
struct RateProfile {
  uint64_t header_bits = 0;
  std::vector<uint64_t> chunk_bits;  // includes the 4-byte length prefix

  uint64_t payload_bits() const {
    uint64_t s = 0;
    for (uint64_t b : chunk_bits) s += b;
    return s;
  }
  uint64_t total_bits() const { return header_bits + payload_bits(); }
};

inline RateProfile rate_profile(const std::vector<uint8_t>& stream) {
  RateProfile rp;
  inspect_header(stream);
  rp.header_bits = 8 * kHeaderBytes;
  for (const ChunkView& c : scan_chunks(stream, kHeaderBytes)) {
    rp.chunk_bits.push_back(8 * (c.size + 4));
  }
  return rp;
}

}  // namespace uqdm

#endif  // UQDM_CODEC_HPP_
