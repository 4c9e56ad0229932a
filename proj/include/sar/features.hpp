// Copyright 2026 The sarkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SAR_FEATURES_HPP
#define SAR_FEATURES_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sar/audio.hpp"
#include "sar/error.hpp"

namespace sar::features {

/// Dense row-major float matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0F) : rows(r), cols(c), values(r * c, fill) {}

  float& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct StftConfig {
  std::size_t frame_len = 512;  // power of two
  std::size_t hop = 160;
};

struct MelConfig {
  std::size_t n_mels = 128;
  double f_lo = 0.0;
  double f_hi = 8000.0;
};

struct ComplexSpectrogram {
  std::size_t n_bins = 0;
  std::size_t n_frames = 0;
  std::vector<std::complex<double>> values;  // [n_bins x n_frames]

  std::complex<double> at(std::size_t bin, std::size_t frame) const {
    return values[bin * n_frames + frame];
  }
};

struct MelSpectrogram {
  Matrix values;  // [n_mels x n_frames] natural-log energies
  double frame_rate = 0.0;

  std::size_t n_mels() const { return values.rows; }
  std::size_t n_frames() const { return values.cols; }
};

struct MfccMatrix {
  Matrix values;  // [n_mfcc x n_frames]
};

/// Single-channel network input [1 x height x width].
struct ModelInput {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;
  std::optional<int> label_id;
};

inline constexpr double kLogFloor = 1e-10;

// ---------------------------------------------------------------------------
// Spectral analysis

/// In-place iterative radix-2 FFT. Size must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (!std::has_single_bit(n)) fail(ErrorKind::InvalidArgument, "fft size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w(std::cos(ang * k), std::sin(ang * k));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

inline std::size_t frame_count(std::size_t n_samples, const StftConfig& cfg) {
  return 1 + (n_samples - cfg.frame_len + cfg.hop - 1) / cfg.hop;
}

/// Hann-windowed short-time Fourier transform. Frame t starts at sample
/// t*hop; frames continue until the clip is covered, the last one zero-padded.
inline ComplexSpectrogram stft(const audio::AudioClip& clip, const StftConfig& cfg) {
  if (cfg.hop == 0 || cfg.hop > cfg.frame_len || !std::has_single_bit(cfg.frame_len)) {
    fail(ErrorKind::InvalidArgument, "invalid STFT configuration");
  }
  if (clip.samples.size() < cfg.frame_len) {
    fail(ErrorKind::ClipTooShort, std::to_string(clip.samples.size()) + " samples < frame length " +
                                      std::to_string(cfg.frame_len));
  }
  const auto window = hann_window(cfg.frame_len);
  ComplexSpectrogram out;
  out.n_bins = cfg.frame_len / 2 + 1;
  out.n_frames = frame_count(clip.samples.size(), cfg);
  out.values.resize(out.n_bins * out.n_frames);
  std::vector<std::complex<double>> buf(cfg.frame_len);
  for (std::size_t t = 0; t < out.n_frames; ++t) {
    const std::size_t start = t * cfg.hop;
    for (std::size_t i = 0; i < cfg.frame_len; ++i) {
      const std::size_t at = start + i;
      const double s = at < clip.samples.size() ? clip.samples[at] : 0.0;
      buf[i] = s * window[i];
    }
    fft(buf);
    for (std::size_t b = 0; b < out.n_bins; ++b) out.values[b * out.n_frames + t] = buf[b];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mel scale

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Centre frequencies of the filters: n_mels points strictly inside
/// [f_lo, f_hi], equally spaced in mel.
inline std::vector<double> mel_centers(std::size_t n_mels, double f_lo, double f_hi) {
  const double lo = hz_to_mel(f_lo), hi = hz_to_mel(f_hi);
  std::vector<double> c(n_mels);
  for (std::size_t m = 0; m < n_mels; ++m) {
    c[m] = mel_to_hz(lo + (hi - lo) * static_cast<double>(m + 1) / static_cast<double>(n_mels + 1));
  }
  return c;
}

/// Triangular filterbank [n_mels x n_bins]. A filter narrower than the bin
/// spacing that would otherwise catch no bin falls back to linear
/// interpolation of its centre onto the two neighbouring bins, so every row
/// has positive mass.
inline Matrix mel_filterbank(std::size_t n_bins, std::size_t n_mels, double rate, double f_lo,
                             double f_hi) {
  if (!(f_lo >= 0.0 && f_lo < f_hi && f_hi <= rate / 2.0) || n_mels == 0 || n_bins < 2) {
    fail(ErrorKind::InvalidBand, "band [" + std::to_string(f_lo) + ", " + std::to_string(f_hi) +
                                     "] Hz at rate " + std::to_string(rate));
  }
  const double lo = hz_to_mel(f_lo), hi = hz_to_mel(f_hi);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  const double bin_hz = rate / (2.0 * static_cast<double>(n_bins - 1));
  Matrix fb(n_mels, n_bins);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    double row_sum = 0.0;
    for (std::size_t b = 0; b < n_bins; ++b) {
      const double f = static_cast<double>(b) * bin_hz;
      double w = 0.0;
      if (f > left && f <= centre) {
        w = (f - left) / (centre - left);
      } else if (f > centre && f < right) {
        w = (right - f) / (right - centre);
      }
      fb(m, b) = static_cast<float>(w);
      row_sum += w;
    }
    if (row_sum <= 0.0) {
      const double pos = centre / bin_hz;
      const auto b0 = std::min(static_cast<std::size_t>(pos), n_bins - 2);
      const double frac = pos - static_cast<double>(b0);
      fb(m, b0) = static_cast<float>(1.0 - frac);
      fb(m, b0 + 1) = static_cast<float>(frac);
    }
  }
  return fb;
}

/// ln(filterbank * |stft|^2 + 1e-10).
inline MelSpectrogram log_mel(const audio::AudioClip& clip, const StftConfig& stft_cfg,
                              const MelConfig& mel_cfg) {
  const auto spec = stft(clip, stft_cfg);
  const auto fb = mel_filterbank(spec.n_bins, mel_cfg.n_mels, clip.sample_rate, mel_cfg.f_lo,
                                 mel_cfg.f_hi);
  std::vector<double> power(spec.values.size());
  for (std::size_t i = 0; i < power.size(); ++i) power[i] = std::norm(spec.values[i]);

  MelSpectrogram out;
  out.frame_rate = static_cast<double>(clip.sample_rate) / static_cast<double>(stft_cfg.hop);
  out.values = Matrix(mel_cfg.n_mels, spec.n_frames);
  for (std::size_t m = 0; m < mel_cfg.n_mels; ++m) {
    for (std::size_t t = 0; t < spec.n_frames; ++t) {
      double e = 0.0;
      for (std::size_t b = 0; b < spec.n_bins; ++b) {
        const float w = fb(m, b);
        if (w != 0.0F) e += w * power[b * spec.n_frames + t];
      }
      out.values(m, t) = static_cast<float>(std::log(e + kLogFloor));
    }
  }
  return out;
}

/// Orthonormal DCT-II of every log-mel column, first n_mfcc coefficients.
inline MfccMatrix mfcc(const MelSpectrogram& mel, std::size_t n_mfcc) {
  const std::size_t n = mel.n_mels();
  if (n_mfcc > n) {
    fail(ErrorKind::TooManyCoefficients,
         std::to_string(n_mfcc) + " coefficients from " + std::to_string(n) + " mel bands");
  }
  std::vector<double> basis(n_mfcc * n);
  for (std::size_t k = 0; k < n_mfcc; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      basis[k * n + i] = scale * std::cos(std::numbers::pi * static_cast<double>(k) *
                                          (2.0 * static_cast<double>(i) + 1.0) /
                                          (2.0 * static_cast<double>(n)));
    }
  }
  MfccMatrix out{Matrix(n_mfcc, mel.n_frames())};
  for (std::size_t t = 0; t < mel.n_frames(); ++t) {
    for (std::size_t k = 0; k < n_mfcc; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += basis[k * n + i] * mel.values(i, t);
      out.values(k, t) = static_cast<float>(acc);
    }
  }
  return out;
}

/// Standardizes the whole utterance to zero mean and unit variance (sigma
/// floored at 1e-6), then bilinearly resizes to height x width with corner
/// samples aligned.
inline ModelInput to_model_input(const MelSpectrogram& mel, std::size_t height, std::size_t width) {
  const Matrix& src = mel.values;
  if (src.values.empty() || height == 0 || width == 0) {
    fail(ErrorKind::InvalidArgument, "empty spectrogram or target size");
  }
  // Moments about the first value so a constant input maps to exact zeros.
  const double pivot = src.values.front();
  double mean = 0.0;
  for (float v : src.values) mean += v - pivot;
  mean /= static_cast<double>(src.values.size());
  double var = 0.0;
  for (float v : src.values) var += (v - pivot - mean) * (v - pivot - mean);
  const double sigma = std::max(std::sqrt(var / static_cast<double>(src.values.size())), 1e-6);

  std::vector<double> z(src.values.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (src.values[i] - pivot - mean) / sigma;

  ModelInput out;
  out.height = height;
  out.width = width;
  out.values.resize(height * width);
  auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
    return n_out == 1 ? 0.0
                      : static_cast<double>(i) * static_cast<double>(n_in - 1) /
                            static_cast<double>(n_out - 1);
  };
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = coord(y, height, src.rows);
    const auto y0 = std::min(static_cast<std::size_t>(sy), src.rows - 1);
    const std::size_t y1 = std::min(y0 + 1, src.rows - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = coord(x, width, src.cols);
      const auto x0 = std::min(static_cast<std::size_t>(sx), src.cols - 1);
      const std::size_t x1 = std::min(x0 + 1, src.cols - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = z[y0 * src.cols + x0] * (1.0 - fx) + z[y0 * src.cols + x1] * fx;
      const double bot = z[y1 * src.cols + x0] * (1.0 - fx) + z[y1 * src.cols + x1] * fx;
      out.values[y * width + x] = static_cast<float>(top * (1.0 - fy) + bot * fy);
    }
  }
  return out;
}

/// Full front end: resample to the canonical rate, log-mel, MFCC, model input.
struct FeatureConfig {
  int sample_rate = audio::kCanonicalRate;
  StftConfig stft;
  MelConfig mel;
  std::size_t n_mfcc = 40;
  std::size_t input_height = 224;
  std::size_t input_width = 224;
};

struct ExtractedFeatures {
  MelSpectrogram mel;
  MfccMatrix mfcc;
  ModelInput input;
};

inline ExtractedFeatures extract(const audio::AudioClip& clip, const FeatureConfig& cfg) {
  const auto canonical = audio::resample(clip, cfg.sample_rate);
  ExtractedFeatures out;
  out.mel = log_mel(canonical, cfg.stft, cfg.mel);
  out.mfcc = mfcc(out.mel, cfg.n_mfcc);
  out.input = to_model_input(out.mel, cfg.input_height, cfg.input_width);
  return out;
}

// ---------------------------------------------------------------------------
// Feature cache records: u32 id length, id bytes, i32 label (-1 = none),
// u32 height, u32 width, then height*width little-endian float32 values.

namespace detail {
template <class U>
void put_le(std::ofstream& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}
inline std::uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) fail(ErrorKind::MissingFeatures, "truncated cache record");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace detail

struct CacheRecord {
  std::string utterance_id;
  ModelInput input;
};

inline void write_cache_record(const std::filesystem::path& path, const std::string& utterance_id,
                               std::optional<int> label_id, std::size_t height, std::size_t width,
                               std::span<const float> values) {
  if (values.size() != height * width) fail(ErrorKind::InvalidArgument, "cache record size mismatch");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write '" + tmp.string() + "'");
    detail::put_le(out, static_cast<std::uint32_t>(utterance_id.size()));
    out.write(utterance_id.data(), static_cast<std::streamsize>(utterance_id.size()));
    detail::put_le(out, static_cast<std::uint32_t>(label_id.value_or(-1)));
    detail::put_le(out, static_cast<std::uint32_t>(height));
    detail::put_le(out, static_cast<std::uint32_t>(width));
    for (float v : values) detail::put_le(out, std::bit_cast<std::uint32_t>(v));
    if (!out) fail(ErrorKind::Io, "short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline void write_cache_record(const std::filesystem::path& path, const std::string& utterance_id,
                               const ModelInput& input) {
  write_cache_record(path, utterance_id, input.label_id, input.height, input.width, input.values);
}

inline CacheRecord read_cache_record(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingFeatures, "no cache record at '" + path.string() + "'");
  CacheRecord rec;
  const std::uint32_t id_len = detail::get_u32(in);
  if (id_len > (1U << 16)) fail(ErrorKind::MissingFeatures, "corrupt cache record '" + path.string() + "'");
  rec.utterance_id.resize(id_len);
  if (!in.read(rec.utterance_id.data(), id_len)) fail(ErrorKind::MissingFeatures, "truncated cache record");
  const auto label = static_cast<std::int32_t>(detail::get_u32(in));
  if (label >= 0) rec.input.label_id = label;
  rec.input.height = detail::get_u32(in);
  rec.input.width = detail::get_u32(in);
  rec.input.values.resize(rec.input.height * rec.input.width);
  for (auto& v : rec.input.values) v = std::bit_cast<float>(detail::get_u32(in));
  return rec;
}

}  // namespace sar::features

#endif  // SAR_FEATURES_HPP
