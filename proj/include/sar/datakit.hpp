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

#ifndef SAR_DATAKIT_HPP
#define SAR_DATAKIT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "sar/error.hpp"
#include "sar/random.hpp"

namespace sar::data {

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;
  std::string label;
  std::string speaker;
  std::string corpus;
};

struct Manifest {
  std::filesystem::path source;
  std::vector<ManifestEntry> entries;

  const ManifestEntry& at(const std::string& id) const {
    for (const auto& e : entries) {
      if (e.id == id) return e;
    }
    fail(ErrorKind::InvalidArgument, "no manifest entry '" + id + "'");
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.id);
    return out;
  }
};

/// Splits one CSV record. Fields may be double-quoted; "" inside quotes is a
/// literal quote.
inline std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += (c == '"') ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

/// Reads an `id,path,label,speaker,corpus` CSV (any column order, extra
/// columns ignored). Relative paths resolve against the manifest directory.
inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open manifest '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::EmptyManifest, "'" + path.string() + "' has no header");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = parse_csv_line(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  for (const char* need : {"id", "path", "label", "speaker", "corpus"}) {
    if (!column.count(need)) {
      fail(ErrorKind::MissingColumn, "manifest '" + path.string() + "' lacks column '" + need + "'");
    }
  }
  Manifest m;
  m.source = path;
  const auto base = path.parent_path();
  std::unordered_set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = parse_csv_line(line);
    auto get = [&](const char* col) -> const std::string& {
      const std::size_t i = column.at(col);
      if (i >= f.size()) {
        fail(ErrorKind::MissingColumn, "line " + std::to_string(line_no) + " lacks '" + col + "'");
      }
      return f[i];
    };
    ManifestEntry e{get("id"), get("path"), get("label"), get("speaker"), get("corpus")};
    if (e.path.is_relative()) e.path = base / e.path;
    if (!seen.insert(e.id).second) fail(ErrorKind::DuplicateId, "duplicate utterance id '" + e.id + "'");
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) fail(ErrorKind::EmptyManifest, "'" + path.string() + "' has no entries");
  return m;
}

/// Writes a manifest with paths relative to its own directory when possible.
inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write manifest '" + path.string() + "'");
  out << "id,path,label,speaker,corpus\n";
  const auto base = path.parent_path();
  for (const auto& e : m.entries) {
    const auto p = std::filesystem::relative(std::filesystem::absolute(e.path),
                                             std::filesystem::absolute(base.empty() ? "." : base));
    out << csv_field(e.id) << ',' << csv_field(p.generic_string()) << ',' << csv_field(e.label) << ','
        << csv_field(e.speaker) << ',' << csv_field(e.corpus) << '\n';
  }
}

/// Ordered label -> class index mapping.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.size() < 2) fail(ErrorKind::InvalidArgument, "a label map needs at least 2 classes");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (!index_.emplace(labels_[i], static_cast<int>(i)).second) {
        fail(ErrorKind::InvalidArgument, "duplicate label '" + labels_[i] + "'");
      }
    }
  }

  /// Sorted distinct labels of a manifest.
  static LabelMap from_manifest(const Manifest& m) {
    std::set<std::string> distinct;
    for (const auto& e : m.entries) distinct.insert(e.label);
    return LabelMap(std::vector<std::string>(distinct.begin(), distinct.end()));
  }

  int index(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) fail(ErrorKind::InvalidArgument, "label '" + label + "' not in label map");
    return it->second;
  }
  bool contains(const std::string& label) const { return index_.count(label) > 0; }
  const std::string& label(std::size_t i) const { return labels_.at(i); }
  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> index_;
};

struct SplitPlan {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  double ratio = 0.8;
  bool speaker_disjoint = false;
  std::vector<std::string> warnings;  // ClassTooSmall reports

  nlohmann::json to_json() const {
    return {{"seed", seed},          {"ratio", ratio}, {"speaker_disjoint", speaker_disjoint},
            {"train", train},        {"test", test},   {"warnings", warnings}};
  }
};

/// Seeded train/test split, stratified by label. Each label contributes
/// floor(ratio * n) items to train, and the remaining train slots (up to
/// round(ratio * total)) go to the labels with the largest fractional parts,
/// so every label is within one item of the ratio. Labels with fewer than
/// two items go entirely to train and are reported as ClassTooSmall.
///
/// With `speaker_disjoint`, whole speakers are assigned instead, in seeded
/// order, until the train share reaches the ratio.
inline SplitPlan split(const Manifest& m, double ratio, std::uint64_t seed,
                       bool speaker_disjoint = false) {
  if (!(ratio > 0.0 && ratio < 1.0)) fail(ErrorKind::InvalidArgument, "split ratio must be in (0, 1)");
  SplitPlan plan;
  plan.seed = seed;
  plan.ratio = ratio;
  plan.speaker_disjoint = speaker_disjoint;
  Rng rng(seed);

  if (speaker_disjoint) {
    std::map<std::string, std::vector<std::string>> by_speaker;
    for (const auto& e : m.entries) by_speaker[e.speaker].push_back(e.id);
    std::vector<std::string> speakers;
    for (const auto& [s, _] : by_speaker) speakers.push_back(s);
    rng.shuffle(speakers);
    const auto target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(m.entries.size())));
    for (const auto& s : speakers) {
      auto& dst = plan.train.size() < target ? plan.train : plan.test;
      dst.insert(dst.end(), by_speaker[s].begin(), by_speaker[s].end());
    }
    return plan;
  }

  std::map<std::string, std::vector<std::string>> by_label;
  for (const auto& e : m.entries) by_label[e.label].push_back(e.id);

  struct Share {
    std::string label;
    std::size_t take;
    double frac;
  };
  std::vector<Share> shares;
  std::size_t stratifiable = 0;
  for (auto& [label, ids] : by_label) {
    rng.shuffle(ids);
    if (ids.size() < 2) {
      plan.warnings.push_back("ClassTooSmall: label '" + label + "' has " + std::to_string(ids.size()) +
                              " item(s); assigned to train");
      continue;
    }
    const double exact = ratio * static_cast<double>(ids.size());
    shares.push_back({label, static_cast<std::size_t>(std::floor(exact)), exact - std::floor(exact)});
    stratifiable += ids.size();
  }
  std::size_t taken = 0;
  for (const auto& s : shares) taken += s.take;
  const auto target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(stratifiable)));
  std::vector<std::size_t> order(shares.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return shares[a].frac > shares[b].frac; });
  for (std::size_t i = 0; taken < target && i < order.size(); ++i, ++taken) ++shares[order[i]].take;

  for (const auto& [label, ids] : by_label) {
    std::size_t take = ids.size();
    for (const auto& s : shares) {
      if (s.label == label) take = s.take;
    }
    plan.train.insert(plan.train.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take));
    plan.test.insert(plan.test.end(), ids.begin() + static_cast<std::ptrdiff_t>(take), ids.end());
  }
  return plan;
}

/// Mini-batches for one epoch. With `shuffle`, the order is a seeded
/// permutation that also depends on the epoch index.
inline std::vector<std::vector<std::string>> batches(const std::vector<std::string>& ids,
                                                     std::size_t batch_size, bool shuffle,
                                                     std::uint64_t seed, std::uint64_t epoch = 0) {
  if (batch_size == 0) fail(ErrorKind::InvalidArgument, "batch size must be >= 1");
  std::vector<std::string> order = ids;
  if (shuffle) {
    Rng rng(mix_seed(seed, epoch));
    rng.shuffle(order);
  }
  std::vector<std::vector<std::string>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace sar::data

#endif  // SAR_DATAKIT_HPP
