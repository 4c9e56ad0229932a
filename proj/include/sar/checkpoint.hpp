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

#ifndef SAR_CHECKPOINT_HPP
#define SAR_CHECKPOINT_HPP

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "sar/audio.hpp"
#include "sar/error.hpp"
#include "sar/model.hpp"

// Checkpoint file layout:
//   "SARCKPT1"                    8 bytes
//   header length                 u64 little-endian
//   JSON header                   UTF-8 (spec, labels, metadata, tensor directory)
//   payload                       little-endian float32 tensors, back to back
//   CRC32 of payload              u32 little-endian

namespace sar::checkpoint {

inline constexpr char kMagic[] = "SARCKPT1";
inline constexpr int kFormatVersion = 1;

struct TrainingMeta {
  int epochs = 0;
  std::uint64_t seed = 0;
  std::string source_corpus;

  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

struct NamedArray {
  std::string name;
  nd::Shape shape;
  std::vector<float> values;
  bool buffer = false;  // running statistic rather than a parameter

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
  int format_version = kFormatVersion;
  model::ModelSpec spec;
  std::vector<std::string> labels;
  TrainingMeta meta;
  std::vector<NamedArray> tensors;

  const NamedArray* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

inline nlohmann::json spec_to_json(const model::ModelSpec& s) {
  return {{"stem", std::string(model::to_string(s.stem))},
          {"stage_blocks", model::kStageBlocks},
          {"stage_widths", model::kStageWidths},
          {"width_divisor", s.width_divisor},
          {"in_channels", s.in_channels},
          {"input_height", s.input_height},
          {"input_width", s.input_width},
          {"n_classes", s.n_classes},
          {"dropout_p", s.dropout_p}};
}

inline model::ModelSpec spec_from_json(const nlohmann::json& j) {
  model::ModelSpec s;
  s.stem = model::parse_stem(j.at("stem").get<std::string>());
  s.width_divisor = j.at("width_divisor").get<std::size_t>();
  s.in_channels = j.at("in_channels").get<std::size_t>();
  s.input_height = j.at("input_height").get<std::size_t>();
  s.input_width = j.at("input_width").get<std::size_t>();
  s.n_classes = j.at("n_classes").get<std::size_t>();
  s.dropout_p = j.at("dropout_p").get<double>();
  return s;
}

inline Checkpoint capture(model::Model& m, const TrainingMeta& meta = {}) {
  Checkpoint ck;
  ck.spec = m.spec();
  ck.labels = m.labels();
  ck.meta = meta;
  for (const auto& p : m.parameters()) {
    ck.tensors.push_back({p.name, p.tensor.shape(),
                          std::vector<float>(p.tensor.data().begin(), p.tensor.data().end()), false});
  }
  for (auto& [name, buf] : m.buffers()) ck.tensors.push_back({name, {buf->size()}, *buf, true});
  return ck;
}

inline std::vector<std::uint8_t> serialize(const Checkpoint& ck) {
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ck.tensors) {
    dir.push_back({{"name", t.name},
                   {"shape", t.shape},
                   {"offset", offset},
                   {"kind", t.buffer ? "buffer" : "param"}});
    offset += t.values.size() * 4;
  }
  const nlohmann::json header = {{"format_version", ck.format_version},
                                 {"spec", spec_to_json(ck.spec)},
                                 {"labels", ck.labels},
                                 {"meta",
                                  {{"epochs", ck.meta.epochs},
                                   {"seed", ck.meta.seed},
                                   {"source_corpus", ck.meta.source_corpus}}},
                                 {"payload_bytes", offset},
                                 {"tensors", dir}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(text.size() >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload_start = out.size();
  for (const auto& t : ck.tensors) {
    for (float v : t.values) {
      const auto u = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
  }
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, out.data() + payload_start, static_cast<uInt>(out.size() - payload_start)));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  return out;
}

inline Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  auto corrupt = [](const std::string& why) { fail(ErrorKind::CorruptCheckpoint, why); };
  if (bytes.size() < 16) corrupt("file too short");
  if (std::memcmp(bytes.data(), kMagic, 7) != 0) corrupt("bad magic");
  if (bytes[7] != kMagic[7]) {
    fail(ErrorKind::VersionMismatch, "container version '" + std::string(1, static_cast<char>(bytes[7])) + "'");
  }
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  if (header_len > bytes.size() - 16) corrupt("header length exceeds file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("unreadable header: ") + e.what());
  }

  Checkpoint ck;
  try {
    ck.format_version = header.at("format_version").get<int>();
    if (ck.format_version != kFormatVersion) {
      fail(ErrorKind::VersionMismatch, "format version " + std::to_string(ck.format_version));
    }
    ck.spec = spec_from_json(header.at("spec"));
    ck.labels = header.at("labels").get<std::vector<std::string>>();
    const auto& meta = header.at("meta");
    ck.meta.epochs = meta.at("epochs").get<int>();
    ck.meta.seed = meta.at("seed").get<std::uint64_t>();
    ck.meta.source_corpus = meta.at("source_corpus").get<std::string>();

    const std::size_t payload_start = 16 + header_len;
    const auto payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    if (payload_bytes + 4 != bytes.size() - payload_start) corrupt("payload size mismatch (truncated?)");
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) {
      stored |= static_cast<std::uint32_t>(bytes[payload_start + payload_bytes + i]) << (8 * i);
    }
    const auto actual = static_cast<std::uint32_t>(
        crc32(0L, bytes.data() + payload_start, static_cast<uInt>(payload_bytes)));
    if (stored != actual) corrupt("payload checksum mismatch");

    for (const auto& entry : header.at("tensors")) {
      NamedArray t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<nd::Shape>();
      t.buffer = entry.at("kind").get<std::string>() == "buffer";
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const std::size_t count = nd::numel(t.shape);
      if (offset + count * 4 > payload_bytes) corrupt("tensor '" + t.name + "' overruns payload");
      t.values.resize(count);
      const std::uint8_t* p = bytes.data() + payload_start + offset;
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t u = static_cast<std::uint32_t>(p[4 * i]) |
                                (static_cast<std::uint32_t>(p[4 * i + 1]) << 8) |
                                (static_cast<std::uint32_t>(p[4 * i + 2]) << 16) |
                                (static_cast<std::uint32_t>(p[4 * i + 3]) << 24);
        t.values[i] = std::bit_cast<float>(u);
      }
      for (const auto& prior : ck.tensors) {
        if (prior.name == t.name) corrupt("duplicate tensor '" + t.name + "'");
      }
      ck.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("malformed header: ") + e.what());
  }
  return ck;
}

inline void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize(ck);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  audio::write_file(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return deserialize(audio::read_file(path));
}

inline void save_checkpoint(model::Model& m, const std::filesystem::path& path,
                            const TrainingMeta& meta = {}) {
  write_checkpoint(capture(m, meta), path);
}

/// Outcome of copying checkpoint tensors into an existing model.
struct LoadReport {
  std::vector<std::string> loaded;
  bool head_skipped = false;
  std::vector<std::string> messages;
};

/// Copies every tensor of `ck` into `m` by name. The classifier is skipped
/// (and reported as HeadSkipped) when its shape differs; any other missing
/// or mismatched tensor is an IncompatibleSpec error.
inline LoadReport load_into(model::Model& m, const Checkpoint& ck) {
  if (!m.spec().same_backbone(ck.spec)) {
    fail(ErrorKind::IncompatibleSpec, "checkpoint backbone (stem " +
                                          std::string(model::to_string(ck.spec.stem)) + ", width /" +
                                          std::to_string(ck.spec.width_divisor) +
                                          ") differs from the model's");
  }
  LoadReport report;
  for (auto p : m.parameters()) {
    const NamedArray* src = ck.find(p.name);
    const bool head = p.group == model::kHeadGroup;
    if (!src || src->shape != p.tensor.shape()) {
      if (head) {
        report.head_skipped = true;
        continue;
      }
      fail(ErrorKind::IncompatibleSpec, "tensor '" + p.name + "' missing or reshaped in checkpoint");
    }
    std::copy(src->values.begin(), src->values.end(), p.tensor.data().begin());
    report.loaded.push_back(p.name);
  }
  for (auto& [name, buf] : m.buffers()) {
    const NamedArray* src = ck.find(name);
    if (!src || src->values.size() != buf->size()) {
      fail(ErrorKind::IncompatibleSpec, "buffer '" + name + "' missing or resized in checkpoint");
    }
    *buf = src->values;
    report.loaded.push_back(name);
  }
  if (report.head_skipped) {
    report.messages.push_back("HeadSkipped: checkpoint head has " + std::to_string(ck.spec.n_classes) +
                              " classes, model head has " + std::to_string(m.spec().n_classes));
  } else {
    m.set_labels(ck.labels);
  }
  return report;
}

/// Rebuilds the exact model stored in `ck`.
inline model::Model instantiate(const Checkpoint& ck) {
  model::Model m(ck.spec, 0);
  const auto report = load_into(m, ck);
  if (report.head_skipped) fail(ErrorKind::CorruptCheckpoint, "head tensors inconsistent with spec");
  m.set_labels(ck.labels);
  return m;
}

inline model::Model load_checkpoint(const std::filesystem::path& path) {
  return instantiate(read_checkpoint(path));
}

}  // namespace sar::checkpoint

#endif  // SAR_CHECKPOINT_HPP
