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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "oracles.hpp"
#include "sar/features.hpp"

namespace sar::features {
namespace {

audio::AudioClip sine_clip(double hz, std::size_t n, double amp = 0.5, int rate = 16000) {
  audio::AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate));
  }
  return c;
}

audio::AudioClip noise_clip(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  audio::AudioClip c;
  c.sample_rate = 16000;
  c.samples.resize(n);
  for (auto& v : c.samples) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  return c;
}

TEST(Fft, MatchesDirectDft) {
  Rng rng(1);
  std::vector<double> x(64);
  for (auto& v : x) v = rng.normal();
  std::vector<std::complex<double>> a(x.begin(), x.end());
  fft(a);
  const auto ref = oracle::dft(x);
  for (std::size_t k = 0; k < 64; ++k) EXPECT_LT(std::abs(a[k] - ref[k]), 1e-9);
}

TEST(Stft, ShapeAndFrameCount) {
  const auto s = stft(noise_clip(8000, 1), StftConfig{});
  EXPECT_EQ(s.n_bins, 257U);
  // Frames start every 160 samples until the clip is covered.
  EXPECT_EQ(s.n_frames, 1 + (8000 - 512 + 159) / 160);
}

TEST(Stft, SilenceIsZero) {
  audio::AudioClip c{std::vector<float>(2000, 0.0F), 16000, ""};
  for (const auto& v : stft(c, StftConfig{}).values) EXPECT_EQ(std::abs(v), 0.0);
}

TEST(Stft, OneKilohertzPeaksAtBin32) {
  const auto s = stft(sine_clip(1000, 4000), StftConfig{});
  for (std::size_t t = 0; t + 1 < s.n_frames; ++t) {  // final frame is zero-padded
    std::size_t best = 0;
    for (std::size_t b = 1; b < s.n_bins; ++b) {
      if (std::abs(s.at(b, t)) > std::abs(s.at(best, t))) best = b;
    }
    EXPECT_EQ(best, 32U) << "frame " << t;
  }
}

TEST(Stft, ParsevalPerFrame) {
  const auto clip = noise_clip(3000, 2);
  const StftConfig cfg;
  const auto s = stft(clip, cfg);
  const std::size_t n = cfg.frame_len;
  for (std::size_t t = 0; t < s.n_frames; ++t) {
    double time_energy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t at = t * cfg.hop + i;
      const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n)));
      const double v = at < clip.samples.size() ? clip.samples[at] * w : 0.0;
      time_energy += v * v;
    }
    double spec_energy = std::norm(s.at(0, t)) + std::norm(s.at(n / 2, t));
    for (std::size_t b = 1; b < n / 2; ++b) spec_energy += 2.0 * std::norm(s.at(b, t));
    EXPECT_NEAR(spec_energy / static_cast<double>(n), time_energy, 1e-3 * time_energy);
  }
}

TEST(Stft, ClipTooShort) {
  try {
    stft(noise_clip(100, 3), StftConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ClipTooShort);
  }
}

TEST(MelScale, Anchors) {
  EXPECT_NEAR(hz_to_mel(1000.0), 1000.0, 0.1);
  EXPECT_EQ(hz_to_mel(0.0), 0.0);
  EXPECT_NEAR(mel_to_hz(hz_to_mel(3210.0)), 3210.0, 1e-9);
}

TEST(MelFilterbank, RowsPositiveColumnsBoundedUnimodal) {
  for (auto [lo, hi] : {std::pair{0.0, 8000.0}, std::pair{300.0, 4000.0}, std::pair{50.0, 7600.0}}) {
    const auto fb = mel_filterbank(257, 40, 16000, lo, hi);
    for (std::size_t m = 0; m < 40; ++m) {
      double sum = 0.0;
      int direction_changes = 0;
      bool rising = true;
      for (std::size_t b = 0; b < 257; ++b) {
        sum += fb(m, b);
        if (b > 0 && rising && fb(m, b) < fb(m, b - 1)) {
          rising = false;
          ++direction_changes;
        } else if (b > 0 && !rising && fb(m, b) > fb(m, b - 1)) {
          ++direction_changes;
        }
      }
      EXPECT_GT(sum, 0.0) << "row " << m;
      EXPECT_LE(direction_changes, 1) << "row " << m;
    }
    for (std::size_t b = 0; b < 257; ++b) {
      double col = 0.0;
      for (std::size_t m = 0; m < 40; ++m) col += fb(m, b);
      EXPECT_LE(col, 2.0);
    }
  }
}

TEST(MelFilterbank, PeaksStrictlyIncreaseAndEveryRowHasMassAt128Bands) {
  const auto fb = mel_filterbank(257, 128, 16000, 0, 8000);
  double prev_peak = -1.0;
  for (std::size_t m = 0; m < 128; ++m) {
    double sum = 0.0, weighted = 0.0;
    for (std::size_t b = 0; b < 257; ++b) {
      sum += fb(m, b);
      weighted += fb(m, b) * static_cast<double>(b);
    }
    ASSERT_GT(sum, 0.0) << "row " << m;
    // Narrow low bands can share a bin, so realized centroids only need to
    // be non-decreasing; the design centres below increase strictly.
    EXPECT_GE(weighted / sum, prev_peak) << "row " << m;
    prev_peak = weighted / sum;
  }
  const auto c = mel_centers(128, 0, 8000);
  for (std::size_t m = 1; m < c.size(); ++m) EXPECT_GT(c[m], c[m - 1]);
}

TEST(MelFilterbank, InvalidBand) {
  for (auto [lo, hi] : {std::pair{500.0, 400.0}, std::pair{-1.0, 400.0}, std::pair{0.0, 9000.0}}) {
    try {
      mel_filterbank(257, 40, 16000, lo, hi);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidBand);
    }
  }
}

TEST(LogMel, SilenceIsLogFloor) {
  audio::AudioClip c{std::vector<float>(2000, 0.0F), 16000, ""};
  const auto m = log_mel(c, StftConfig{}, MelConfig{});
  EXPECT_EQ(m.n_mels(), 128U);
  EXPECT_DOUBLE_EQ(m.frame_rate, 100.0);
  for (float v : m.values.values) EXPECT_FLOAT_EQ(v, static_cast<float>(std::log(kLogFloor)));
}

TEST(LogMel, OneKilohertzLandsInItsBand) {
  const MelConfig cfg{40, 0, 8000};
  // Band whose triangle weighs 1 kHz the most, from the mel formula alone.
  const double lo = 0.0, hi = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
  std::size_t expected = 0;
  double best = -1.0;
  for (std::size_t m = 0; m < 40; ++m) {
    auto hz = [&](double k) { return 700.0 * (std::pow(10.0, (lo + (hi - lo) * k / 41.0) / 2595.0) - 1.0); };
    const double l = hz(m), c = hz(m + 1.0), r = hz(m + 2.0);
    const double w = 1000.0 <= c ? (1000.0 - l) / (c - l) : (r - 1000.0) / (r - c);
    if (w > best) {
      best = w;
      expected = m;
    }
  }
  const auto mel = log_mel(sine_clip(1000, 4000), StftConfig{}, cfg);
  for (std::size_t t = 0; t + 1 < mel.n_frames(); ++t) {
    std::size_t arg = 0;
    for (std::size_t m = 1; m < 40; ++m) {
      if (mel.values(m, t) > mel.values(arg, t)) arg = m;
    }
    EXPECT_EQ(arg, expected) << "frame " << t;
  }
}

TEST(LogMel, DoublingAmplitudeAddsLnFour) {
  const auto a = log_mel(sine_clip(700, 3000, 0.2), StftConfig{}, MelConfig{});
  const auto b = log_mel(sine_clip(700, 3000, 0.4), StftConfig{}, MelConfig{});
  for (std::size_t i = 0; i < a.values.values.size(); ++i) {
    if (a.values.values[i] < -10.0F) continue;  // near the floor
    EXPECT_NEAR(b.values.values[i] - a.values.values[i], std::log(4.0), 1e-3);
  }
}

TEST(LogMel, ShiftEquivariantInTime) {
  const auto clip = noise_clip(4000, 4);
  audio::AudioClip shifted = clip;
  const std::size_t k = 3;
  shifted.samples.insert(shifted.samples.begin(), k * 160, 0.0F);
  const auto a = log_mel(clip, StftConfig{}, MelConfig{});
  const auto b = log_mel(shifted, StftConfig{}, MelConfig{});
  ASSERT_EQ(b.n_frames(), a.n_frames() + k);
  for (std::size_t m = 0; m < a.n_mels(); ++m) {
    for (std::size_t t = 0; t + 1 < a.n_frames(); ++t) EXPECT_NEAR(b.values(m, t + k), a.values(m, t), 1e-6);
  }
}

MelSpectrogram column(const std::vector<float>& v) {
  MelSpectrogram m;
  m.values = Matrix(v.size(), 1);
  m.values.values = v;
  return m;
}

TEST(Mfcc, ConstantColumn) {
  const auto out = mfcc(column(std::vector<float>(32, 2.5F)), 13);
  EXPECT_NEAR(out.values(0, 0), 2.5 * std::sqrt(32.0), 1e-5);
  for (std::size_t k = 1; k < 13; ++k) EXPECT_NEAR(out.values(k, 0), 0.0, 1e-6);
}

TEST(Mfcc, FullSetInvertsByTranspose) {
  Rng rng(5);
  std::vector<float> v(24);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  const auto out = mfcc(column(v), 24);
  // Orthonormal DCT-II: inverse is the transpose (DCT-III), evaluated here
  // from the closed-form basis.
  for (std::size_t i = 0; i < 24; ++i) {
    double r = 0.0;
    for (std::size_t k = 0; k < 24; ++k) {
      const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / 24.0);
      r += scale * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * i + 1.0) / 48.0) * out.values(k, 0);
    }
    EXPECT_NEAR(r, v[i], 1e-5);
  }
}

TEST(Mfcc, AlternatingColumnConcentratesInHighestCoefficient) {
  std::vector<float> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = i % 2 == 0 ? 1.0F : -1.0F;
  const auto out = mfcc(column(v), 16);
  std::size_t best = 0;
  for (std::size_t k = 1; k < 16; ++k) {
    if (std::abs(out.values(k, 0)) > std::abs(out.values(best, 0))) best = k;
  }
  EXPECT_EQ(best, 15U);
}

TEST(Mfcc, TooManyCoefficients) {
  try {
    mfcc(column(std::vector<float>(8, 0.0F)), 9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooManyCoefficients);
  }
}

TEST(ModelInputTest, IdentityForStandardizedSameSize) {
  Rng rng(6);
  std::vector<double> raw(12 * 10);
  for (auto& v : raw) v = rng.normal();
  double mean = 0, var = 0;
  for (double v : raw) mean += v;
  mean /= raw.size();
  for (double v : raw) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / raw.size());
  MelSpectrogram m;
  m.values = Matrix(12, 10);
  for (std::size_t i = 0; i < raw.size(); ++i) m.values.values[i] = static_cast<float>((raw[i] - mean) / sd);
  const auto in = to_model_input(m, 12, 10);
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(in.values[i], m.values.values[i], 1e-6);
}

TEST(ModelInputTest, ConstantBecomesZero) {
  MelSpectrogram m;
  m.values = Matrix(128, 50, -7.3F);
  const auto in = to_model_input(m, 224, 224);
  for (float v : in.values) EXPECT_EQ(v, 0.0F);
}

TEST(ModelInputTest, CornersPreservedAndStandardized) {
  Rng rng(7);
  MelSpectrogram m;
  m.values = Matrix(128, 300);
  for (auto& v : m.values.values) v = static_cast<float>(3.0 * rng.normal() - 4.0);
  double mean = 0, var = 0;
  for (float v : m.values.values) mean += v;
  mean /= m.values.values.size();
  for (float v : m.values.values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / m.values.values.size());
  const auto in = to_model_input(m, 224, 224);
  ASSERT_EQ(in.values.size(), 224U * 224U);
  auto z = [&](std::size_t r, std::size_t c) { return (m.values(r, c) - mean) / sd; };
  EXPECT_NEAR(in.values[0], z(0, 0), 1e-5);
  EXPECT_NEAR(in.values[223], z(0, 299), 1e-5);
  EXPECT_NEAR(in.values[223 * 224], z(127, 0), 1e-5);
  EXPECT_NEAR(in.values[224 * 224 - 1], z(127, 299), 1e-5);
}

TEST(Extract, DeterministicAndFinite) {
  FeatureConfig cfg;
  cfg.input_height = cfg.input_width = 64;
  const auto clip = noise_clip(8000, 8);
  const auto a = extract(clip, cfg);
  const auto b = extract(clip, cfg);
  EXPECT_EQ(a.mel.values.values, b.mel.values.values);
  EXPECT_EQ(a.mfcc.values.values, b.mfcc.values.values);
  EXPECT_EQ(a.input.values, b.input.values);
  EXPECT_EQ(a.mfcc.values.rows, 40U);
  for (float v : a.input.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(Extract, ResamplesToCanonicalRate) {
  FeatureConfig cfg;
  cfg.input_height = cfg.input_width = 32;
  const auto out = extract(sine_clip(440, 22050, 0.5, 44100), cfg);
  EXPECT_EQ(out.mel.n_frames(), frame_count(8000, cfg.stft));
}

TEST(Cache, RecordRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "sar_cache_test";
  std::filesystem::remove_all(dir);
  ModelInput in{3, 4, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, -12.5F}, 2};
  write_cache_record(dir / "a.feat", "utt_a", in);
  const auto rec = read_cache_record(dir / "a.feat");
  EXPECT_EQ(rec.utterance_id, "utt_a");
  EXPECT_EQ(rec.input.height, 3U);
  EXPECT_EQ(rec.input.width, 4U);
  EXPECT_EQ(rec.input.values, in.values);
  ASSERT_TRUE(rec.input.label_id.has_value());
  EXPECT_EQ(*rec.input.label_id, 2);

  in.label_id.reset();
  write_cache_record(dir / "b.feat", "utt_b", in);
  EXPECT_FALSE(read_cache_record(dir / "b.feat").input.label_id.has_value());
  EXPECT_THROW(read_cache_record(dir / "missing.feat"), Error);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace sar::features
