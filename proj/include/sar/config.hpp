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

#ifndef SAR_CONFIG_HPP
#define SAR_CONFIG_HPP

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sar/error.hpp"
#include "sar/features.hpp"
#include "sar/model.hpp"
#include "sar/trainer.hpp"

namespace sar::config {

/// Bad command line or config file; maps to exit status 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string format_number(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// Keys holding filesystem paths; made absolute when set.
inline bool is_path_key(std::string_view key) {
  return key == "manifest" || key == "test_manifest" || key == "cache" || key == "source";
}

/// Flat key=value settings. Every known key always has a value, so a written
/// snapshot fully determines a run.
class RunConfig {
 public:
  RunConfig() {
    const features::FeatureConfig f;
    const model::ModelSpec m;
    const train::TrainConfig t;
    using detail::format_number;
    values_ = {
        {"manifest", ""},
        {"test_manifest", ""},
        {"cache", ""},
        {"source", ""},
        {"split_ratio", "0.8"},
        {"speaker_disjoint", "false"},
        {"seed", std::to_string(t.seed)},
        {"sample_rate", std::to_string(f.sample_rate)},
        {"frame_len", std::to_string(f.stft.frame_len)},
        {"hop", std::to_string(f.stft.hop)},
        {"n_mels", std::to_string(f.mel.n_mels)},
        {"f_lo", format_number(f.mel.f_lo)},
        {"f_hi", format_number(f.mel.f_hi)},
        {"n_mfcc", std::to_string(f.n_mfcc)},
        {"input_height", std::to_string(f.input_height)},
        {"input_width", std::to_string(f.input_width)},
        {"stem", std::string(model::to_string(m.stem))},
        {"width_divisor", std::to_string(m.width_divisor)},
        {"dropout_p", format_number(m.dropout_p)},
        {"optimizer", std::string(train::to_string(t.optimizer))},
        {"learning_rate", format_number(t.learning_rate)},
        {"epochs", std::to_string(t.epochs)},
        {"batch_size", std::to_string(t.batch_size)},
        {"freeze_epochs", std::to_string(t.freeze_phase_epochs)},
        {"momentum", format_number(t.momentum)},
    };
  }

  bool known(const std::string& key) const { return values_.count(key) > 0; }

  /// Relative paths are taken against `base`.
  void set(const std::string& key, const std::string& value, const std::filesystem::path& base = {}) {
    if (!known(key)) throw UsageError("unknown config key '" + key + "'");
    if (is_path_key(key) && !value.empty()) {
      auto p = std::filesystem::path(value);
      if (p.is_relative()) p = (base.empty() ? std::filesystem::current_path() : base) / p;
      values_[key] = p.lexically_normal().string();
    } else {
      values_[key] = value;
    }
  }

  /// Parses one "key=value" assignment.
  void assign(std::string_view text, const std::filesystem::path& base = {}) {
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw UsageError("expected key=value, got '" + std::string(text) + "'");
    set(detail::trim(text.substr(0, eq)), detail::trim(text.substr(eq + 1)), base);
  }

  /// Reads a key=value file; '#' starts a comment line.
  void merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file '" + path.string() + "'");
    const auto base = std::filesystem::absolute(path).parent_path();
    std::string line;
    while (std::getline(in, line)) {
      const auto t = detail::trim(line);
      if (t.empty() || t.front() == '#') continue;
      assign(t, base);
    }
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
    return it->second;
  }

  const std::string& require(const std::string& key) const {
    const auto& v = get(key);
    if (v.empty()) throw UsageError("missing required setting '" + key + "'");
    return v;
  }

  double number(const std::string& key) const {
    const auto& v = get(key);
    double out = 0.0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
      throw UsageError("setting '" + key + "' is not a number: '" + v + "'");
    }
    return out;
  }

  long long integer(const std::string& key) const {
    const auto& v = get(key);
    long long out = 0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
      throw UsageError("setting '" + key + "' is not an integer: '" + v + "'");
    }
    return out;
  }

  std::size_t count(const std::string& key) const {
    const auto v = integer(key);
    if (v < 0) throw UsageError("setting '" + key + "' must be nonnegative");
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UsageError("setting '" + key + "' is not a boolean: '" + v + "'");
  }

  features::FeatureConfig feature_config() const {
    features::FeatureConfig f;
    f.sample_rate = static_cast<int>(integer("sample_rate"));
    f.stft.frame_len = count("frame_len");
    f.stft.hop = count("hop");
    f.mel.n_mels = count("n_mels");
    f.mel.f_lo = number("f_lo");
    f.mel.f_hi = number("f_hi");
    f.n_mfcc = count("n_mfcc");
    f.input_height = count("input_height");
    f.input_width = count("input_width");
    return f;
  }

  /// Model spec without the class count, which comes from the data.
  model::ModelSpec model_spec() const {
    model::ModelSpec s;
    try {
      s.stem = model::parse_stem(get("stem"));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    s.width_divisor = count("width_divisor");
    s.input_height = count("input_height");
    s.input_width = count("input_width");
    s.dropout_p = number("dropout_p");
    return s;
  }

  train::TrainConfig train_config() const {
    train::TrainConfig t;
    try {
      t.optimizer = train::parse_optimizer(get("optimizer"));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    t.learning_rate = number("learning_rate");
    t.epochs = static_cast<int>(integer("epochs"));
    t.batch_size = count("batch_size");
    t.seed = static_cast<std::uint64_t>(integer("seed"));
    t.freeze_phase_epochs = static_cast<int>(integer("freeze_epochs"));
    t.momentum = number("momentum");
    try {
      t.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return t;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace sar::config

#endif  // SAR_CONFIG_HPP
