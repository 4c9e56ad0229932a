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

#ifndef SAR_AUDIO_HPP
#define SAR_AUDIO_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sar/error.hpp"

namespace sar::audio {

inline constexpr int kCanonicalRate = 16000;

struct AudioClip {
  std::vector<float> samples;  // mono, each in [-1, 1]
  int sample_rate = 0;
  std::string source_path;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class WavEncoding { Pcm16, Float32 };

namespace detail {

inline std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

inline std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
  return std::memcmp(b.data() + at, tag, 4) == 0;
}

}  // namespace detail

/// Decodes a little-endian RIFF/WAVE buffer holding 16-bit PCM or 32-bit IEEE
/// float with one or two channels. Stereo is averaged to mono.
inline AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::string source_path = {}) {
  using detail::read_u16;
  using detail::read_u32;
  if (bytes.size() < 12 || !detail::tag_is(bytes, 0, "RIFF") || !detail::tag_is(bytes, 8, "WAVE")) {
    fail(ErrorKind::MalformedContainer, "missing RIFF/WAVE magic in '" + source_path + "'");
  }
  if (read_u32(bytes, 4) + 8ULL > bytes.size()) {
    fail(ErrorKind::MalformedContainer, "RIFF size exceeds buffer in '" + source_path + "'");
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  std::size_t at = 12;
  while (at + 8 <= bytes.size()) {
    const std::uint32_t size = read_u32(bytes, at + 4);
    const std::size_t body = at + 8;
    if (body + size > bytes.size()) {
      fail(ErrorKind::MalformedContainer, "chunk overruns buffer in '" + source_path + "'");
    }
    if (detail::tag_is(bytes, at, "fmt ")) {
      if (size < 16) fail(ErrorKind::MalformedContainer, "fmt chunk too small");
      format = read_u16(bytes, body);
      channels = read_u16(bytes, body + 2);
      rate = read_u32(bytes, body + 4);
      block_align = read_u16(bytes, body + 12);
      bits = read_u16(bytes, body + 14);
      if (format == 0xFFFE) {
        if (size < 40) fail(ErrorKind::MalformedContainer, "extensible fmt chunk too small");
        format = read_u16(bytes, body + 24);  // sub-format GUID leads with the tag
      }
      have_fmt = true;
    } else if (detail::tag_is(bytes, at, "data")) {
      data = bytes.subspan(body, size);
      have_data = true;
    }
    at = body + size + (size & 1U);
  }
  if (!have_fmt || !have_data) {
    fail(ErrorKind::MalformedContainer, "missing fmt or data chunk in '" + source_path + "'");
  }
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    fail(ErrorKind::UnsupportedEncoding, "format tag " + std::to_string(format) + " with " +
                                             std::to_string(bits) + " bits");
  }
  if (channels != 1 && channels != 2) {
    fail(ErrorKind::UnsupportedEncoding, std::to_string(channels) + " channels");
  }
  if (rate == 0) fail(ErrorKind::MalformedContainer, "zero sample rate");
  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  if (block_align != frame_bytes) fail(ErrorKind::MalformedContainer, "inconsistent block align");
  const std::size_t frames = data.size() / frame_bytes;
  if (frames == 0) fail(ErrorKind::EmptyAudio, "no sample frames in '" + source_path + "'");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.source_path = std::move(source_path);
  clip.samples.resize(frames);
  auto sample_at = [&](std::size_t i) -> float {
    if (pcm16) {
      return static_cast<float>(static_cast<std::int16_t>(read_u16(data, i * 2))) / 32768.0F;
    }
    const float v = std::bit_cast<float>(read_u32(data, i * 4));
    return std::isfinite(v) ? std::clamp(v, -1.0F, 1.0F) : 0.0F;
  };
  for (std::size_t f = 0; f < frames; ++f) {
    if (channels == 1) {
      clip.samples[f] = sample_at(f);
    } else {
      clip.samples[f] = 0.5F * (sample_at(2 * f) + sample_at(2 * f + 1));
    }
  }
  return clip;
}

/// Encodes interleaved samples (frames * channels values) as a RIFF/WAVE buffer.
inline std::vector<std::uint8_t> encode_wav(std::span<const float> interleaved, int sample_rate,
                                            int channels = 1,
                                            WavEncoding encoding = WavEncoding::Pcm16) {
  const std::uint16_t bits = encoding == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(interleaved.size() * (bits / 8));
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32(out, 16);
  detail::put_u16(out, encoding == WavEncoding::Pcm16 ? 1 : 3);
  detail::put_u16(out, static_cast<std::uint16_t>(channels));
  detail::put_u32(out, static_cast<std::uint32_t>(sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(sample_rate * channels * (bits / 8)));
  detail::put_u16(out, static_cast<std::uint16_t>(channels * (bits / 8)));
  detail::put_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(out, data_bytes);
  for (float s : interleaved) {
    if (encoding == WavEncoding::Pcm16) {
      const long q = std::lround(std::clamp(s, -1.0F, 1.0F) * 32768.0F);
      detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(
                               std::clamp(q, -32768L, 32767L))));
    } else {
      detail::put_u32(out, std::bit_cast<std::uint32_t>(s));
    }
  }
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "short write to '" + path.string() + "'");
}

inline AudioClip load_wav(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_wav(bytes, path.string());
}

/// Band-limited rate conversion. Each output sample is a normalized
/// Hann-windowed sinc interpolation over 16 taps at the lower of the two
/// rates; the cutoff sits at the lower Nyquist frequency.
inline AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) fail(ErrorKind::InvalidArgument, "target rate must be positive");
  if (clip.sample_rate <= 0) fail(ErrorKind::InvalidArgument, "source rate must be positive");
  if (target_rate == clip.sample_rate) return clip;

  constexpr double kHalfTaps = 8.0;
  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  const double cutoff = std::min(1.0, ratio);
  const double half_width = kHalfTaps / cutoff;
  const auto in_len = static_cast<std::ptrdiff_t>(clip.samples.size());
  const auto out_len =
      static_cast<std::size_t>(std::llround(static_cast<double>(clip.samples.size()) * ratio));

  AudioClip out;
  out.sample_rate = target_rate;
  out.source_path = clip.source_path;
  out.samples.resize(out_len);
  for (std::size_t n = 0; n < out_len; ++n) {
    const double t = static_cast<double>(n) / ratio;
    const auto lo = static_cast<std::ptrdiff_t>(std::floor(t - half_width)) + 1;
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(t + half_width));
    double acc = 0.0, norm = 0.0;
    for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(lo, 0); k <= std::min(hi, in_len - 1); ++k) {
      const double d = t - static_cast<double>(k);
      const double x = std::numbers::pi * cutoff * d;
      const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(x) / x;
      const double window = 0.5 * (1.0 + std::cos(std::numbers::pi * d / half_width));
      const double w = sinc * window;
      acc += w * clip.samples[static_cast<std::size_t>(k)];
      norm += w;
    }
    const double v = norm != 0.0 ? acc / norm : 0.0;
    out.samples[n] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return out;
}

}  // namespace sar::audio

#endif  // SAR_AUDIO_HPP
