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

// In-memory synthetic corpora and the reduced model configuration shared by
// the trainer, CLI and acceptance suites.

#ifndef SAR_TESTS_FIXTURES_HPP
#define SAR_TESTS_FIXTURES_HPP

#include <string>
#include <vector>

#include "sar/features.hpp"
#include "sar/model.hpp"
#include "sar/synth.hpp"
#include "sar/trainer.hpp"

namespace sar::fixtures {

/// Widths / 8 on a 64x64 input.
inline model::ModelSpec reduced_spec(std::size_t classes = 4) {
  model::ModelSpec s;
  s.width_divisor = 8;
  s.input_height = s.input_width = 64;
  s.n_classes = classes;
  return s;
}

inline features::FeatureConfig reduced_features() {
  features::FeatureConfig f;
  f.input_height = f.input_width = 64;
  return f;
}

struct Corpus {
  train::FeatureStore store;
  std::vector<std::string> ids;
  std::vector<std::string> labels;  // class names, index = class id
};

/// Synthesizes `count` clips and extracts their model inputs. Class ids are
/// the generator's class indices.
inline Corpus synthetic_corpus(std::size_t count, const synth::SynthConfig& cfg, std::uint64_t seed) {
  Corpus c;
  for (std::size_t k = 0; k < cfg.n_classes; ++k) c.labels.emplace_back(synth::kClassNames[k]);
  const auto fcfg = reduced_features();
  for (auto& item : synth::make_corpus(count, cfg, seed)) {
    auto input = features::extract(item.clip, fcfg).input;
    for (std::size_t k = 0; k < c.labels.size(); ++k) {
      if (c.labels[k] == item.label) input.label_id = static_cast<int>(k);
    }
    c.store.insert(item.id, std::move(input));
    c.ids.push_back(item.id);
  }
  return c;
}

}  // namespace sar::fixtures

#endif  // SAR_TESTS_FIXTURES_HPP
