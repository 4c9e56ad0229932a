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

#ifndef SAR_SYNTH_HPP
#define SAR_SYNTH_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "sar/audio.hpp"
#include "sar/datakit.hpp"
#include "sar/error.hpp"
#include "sar/random.hpp"

// Synthetic stand-in corpora. Each class is a spectro-temporal pattern
// around a random base frequency, so classes differ in shape rather than in
// absolute pitch and a frequency-shifted corpus poses the same task.

namespace sar::synth {

inline constexpr std::array<std::string_view, 7> kClassNames{
    "tone", "rise", "fall", "pulse", "noiseband", "dyad", "vibrato"};

struct SynthConfig {
  int sample_rate = audio::kCanonicalRate;
  double duration = 0.5;         // seconds
  double f0_lo = 200.0;          // base-frequency range, Hz
  double f0_hi = 600.0;
  double noise = 0.05;           // white-noise amplitude
  std::size_t n_classes = 4;
  std::string corpus = "synth";
};

/// One clip of class `label` (index into kClassNames).
inline audio::AudioClip make_clip(std::size_t label, const SynthConfig& cfg, Rng& rng) {
  if (label >= kClassNames.size()) fail(ErrorKind::InvalidArgument, "synthetic class out of range");
  const auto n = static_cast<std::size_t>(std::llround(cfg.duration * cfg.sample_rate));
  const double sr = cfg.sample_rate;
  const double f0 = rng.uniform(cfg.f0_lo, cfg.f0_hi);
  const double amp = rng.uniform(0.3, 0.7);
  const double phase0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double rate = rng.uniform(5.0, 9.0);  // modulation rate for pulse / vibrato
  const double sweep = rng.uniform(1.6, 2.0);
  constexpr double tau = 2.0 * std::numbers::pi;

  std::vector<double> partial_f, partial_p;
  if (label == 4) {
    for (int i = 0; i < 24; ++i) {
      partial_f.push_back(f0 * rng.uniform(0.85, 1.15));
      partial_p.push_back(rng.uniform(0.0, tau));
    }
  }

  audio::AudioClip clip;
  clip.sample_rate = cfg.sample_rate;
  clip.samples.resize(n);
  double phase = phase0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double u = t / cfg.duration;  // 0..1 through the clip
    double v = 0.0;
    switch (label) {
      case 0:  // steady harmonic tone
        v = std::sin(tau * f0 * t + phase0) + 0.5 * std::sin(2 * tau * f0 * t) +
            0.25 * std::sin(3 * tau * f0 * t);
        v /= 1.75;
        break;
      case 1:    // exponential up-sweep
      case 2: {  // exponential down-sweep
        const double ratio = label == 1 ? std::pow(sweep, u) : std::pow(sweep, 1.0 - u);
        phase += tau * f0 * ratio / sr;
        v = std::sin(phase);
        break;
      }
      case 3:  // gated tone
        v = std::sin(tau * f0 * t + phase0) * (std::sin(tau * rate * t) > 0.0 ? 1.0 : 0.0);
        break;
      case 4:  // narrow noise band
        for (std::size_t p = 0; p < partial_f.size(); ++p) v += std::sin(tau * partial_f[p] * t + partial_p[p]);
        v /= std::sqrt(static_cast<double>(partial_f.size()) * 2.0);
        break;
      case 5:  // fifth interval
        v = 0.5 * (std::sin(tau * f0 * t + phase0) + std::sin(tau * 1.5 * f0 * t));
        break;
      case 6:  // vibrato
        phase += tau * f0 * (1.0 + 0.06 * std::sin(tau * rate * t)) / sr;
        v = std::sin(phase);
        break;
      default:
        break;
    }
    const double edge = std::min({1.0, u * 20.0, (1.0 - u) * 20.0});  // 25 ms fades
    const double s = amp * edge * v + cfg.noise * rng.uniform(-1.0, 1.0);
    clip.samples[i] = static_cast<float>(std::clamp(s, -1.0, 1.0));
  }
  return clip;
}

struct LabelledClip {
  std::string id;
  std::string label;
  audio::AudioClip clip;
};

/// `count` clips with balanced labels (item i has class i mod n_classes).
inline std::vector<LabelledClip> make_corpus(std::size_t count, const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.n_classes < 2 || cfg.n_classes > kClassNames.size()) {
    fail(ErrorKind::InvalidArgument, "synthetic corpora support 2..7 classes");
  }
  std::vector<LabelledClip> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, i));
    const std::size_t label = i % cfg.n_classes;
    char id[64];
    std::snprintf(id, sizeof id, "%s_%05zu", cfg.corpus.c_str(), i);
    out.push_back({id, std::string(kClassNames[label]), make_clip(label, cfg, rng)});
  }
  return out;
}

/// Writes the corpus as 16-bit WAV files plus `manifest.csv` under `dir`.
inline data::Manifest write_corpus(const std::filesystem::path& dir, std::size_t count,
                                   const SynthConfig& cfg, std::uint64_t seed) {
  std::filesystem::create_directories(dir / "wav");
  data::Manifest m;
  m.source = dir / "manifest.csv";
  std::size_t i = 0;
  for (auto& item : make_corpus(count, cfg, seed)) {
    const auto rel = std::filesystem::path("wav") / (item.id + ".wav");
    audio::write_file(dir / rel, audio::encode_wav(item.clip.samples, item.clip.sample_rate));
    m.entries.push_back({item.id, dir / rel, item.label, "spk" + std::to_string(i++ % 4), cfg.corpus});
  }
  data::write_manifest(m, m.source);
  return m;
}

}  // namespace sar::synth

#endif  // SAR_SYNTH_HPP
