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

// The `sar` command line: extract, train, transfer, eval, report and synth.
// Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.

#ifndef SAR_CLI_HPP
#define SAR_CLI_HPP

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sar/audio.hpp"
#include "sar/checkpoint.hpp"
#include "sar/config.hpp"
#include "sar/datakit.hpp"
#include "sar/features.hpp"
#include "sar/synth.hpp"
#include "sar/trainer.hpp"

namespace sar::cli {

namespace fs = std::filesystem;
using config::RunConfig;
using config::UsageError;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Run-directory artifact names.
inline constexpr const char* kConfigFile = "config.txt";
inline constexpr const char* kFinalCkpt = "final.ckpt";
inline constexpr const char* kBestCkpt = "best.ckpt";
inline constexpr const char* kHistory = "history.csv";
inline constexpr const char* kConfusion = "confusion.csv";
inline constexpr const char* kSplit = "split.json";
inline constexpr const char* kSummary = "summary.json";
inline constexpr const char* kFailed = "FAILED";

struct Options {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
  bool force = false;
  std::vector<std::string> settings;  // --set key=value
  std::string manifest, test_manifest, cache, source;
  // eval
  std::string checkpoint;
  // report
  std::vector<std::string> runs;
  // synth
  std::size_t count = 40;
  std::size_t classes = 4;
  double f0_lo = synth::SynthConfig{}.f0_lo;
  double f0_hi = synth::SynthConfig{}.f0_hi;
  double duration = synth::SynthConfig{}.duration;
  std::string corpus = "synth";
};

/// Config file, then --set assignments, then the dedicated flags.
inline RunConfig resolve(const Options& o) {
  RunConfig cfg;
  if (!o.config_file.empty()) cfg.merge_file(o.config_file);
  for (const auto& s : o.settings) cfg.assign(s);
  if (!o.manifest.empty()) cfg.set("manifest", o.manifest);
  if (!o.test_manifest.empty()) cfg.set("test_manifest", o.test_manifest);
  if (!o.cache.empty()) cfg.set("cache", o.cache);
  if (!o.source.empty()) cfg.set("source", o.source);
  if (o.seed) cfg.set("seed", std::to_string(*o.seed));
  return cfg;
}

inline std::string corpus_name(const data::Manifest& m) {
  if (!m.entries.empty() && !m.entries.front().corpus.empty()) return m.entries.front().corpus;
  return m.source.stem().string();
}

inline std::string shortest(double v) { return config::detail::format_number(v); }

// ---------------------------------------------------------------------------
// extract

inline int cmd_extract(const Options& o, std::ostream& out, std::ostream& err) {
  const auto cfg = resolve(o);
  const auto manifest = data::load_manifest(cfg.require("manifest"));
  const fs::path cache = cfg.require("cache");
  const auto fcfg = cfg.feature_config();
  fs::create_directories(cache);

  std::atomic<std::size_t> next{0}, extracted{0}, skipped{0};
  std::mutex mu;
  std::vector<std::string> failures;
  auto work = [&] {
    for (std::size_t i = next++; i < manifest.entries.size(); i = next++) {
      const auto& e = manifest.entries[i];
      const auto path = cache / (e.id + ".feat");
      if (!o.force && fs::exists(path)) {
        ++skipped;
        continue;
      }
      try {
        const auto clip = audio::load_wav(e.path);
        features::write_cache_record(path, e.id, features::extract(clip, fcfg).input);
        ++extracted;
      } catch (const std::exception& ex) {
        std::lock_guard lock(mu);
        failures.push_back(e.id + ": " + ex.what());
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(o.jobs, 1, std::max<std::size_t>(1, manifest.entries.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(work);
    work();
  }
  std::sort(failures.begin(), failures.end());
  for (const auto& f : failures) err << "failed " << f << '\n';
  out << extracted.load() << " extracted, " << skipped.load() << " skipped, " << failures.size() << " failed\n";
  return failures.empty() ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// train / transfer

struct Prepared {
  data::Manifest manifest;
  data::LabelMap labels;
  train::FeatureStore store;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  nlohmann::json split;
};

inline Prepared prepare(const RunConfig& cfg, std::ostream& err) {
  Prepared p;
  p.manifest = data::load_manifest(cfg.require("manifest"));
  p.labels = data::LabelMap::from_manifest(p.manifest);
  const fs::path cache = cfg.require("cache");
  p.store = train::FeatureStore::load(cache, p.manifest, p.labels);
  if (const auto& tm = cfg.get("test_manifest"); !tm.empty()) {
    const auto test = data::load_manifest(tm);
    for (const auto& e : p.manifest.entries) p.train_ids.push_back(e.id);
    for (const auto& e : test.entries) p.test_ids.push_back(e.id);
    auto test_store = train::FeatureStore::load(cache, test, p.labels);
    for (const auto& id : p.test_ids) p.store.insert(id, test_store.at(id));
    p.split = {{"test_manifest", tm}, {"train", p.train_ids}, {"test", p.test_ids}};
  } else {
    auto plan = data::split(p.manifest, cfg.number("split_ratio"), static_cast<std::uint64_t>(cfg.integer("seed")),
                            cfg.flag("speaker_disjoint"));
    for (const auto& w : plan.warnings) err << "warning: " << w << '\n';
    p.train_ids = plan.train;
    p.test_ids = plan.test;
    p.split = plan.to_json();
  }
  const auto& probe = p.store.at(p.train_ids.front());
  const auto spec = cfg.model_spec();
  if (probe.height != spec.input_height || probe.width != spec.input_width) {
    fail(ErrorKind::InvalidArgument, "cached inputs are " + std::to_string(probe.height) + "x" +
                                         std::to_string(probe.width) + " but input_height x input_width is " +
                                         std::to_string(spec.input_height) + "x" +
                                         std::to_string(spec.input_width));
  }
  return p;
}

/// Creates the run directory with its config snapshot, runs `body`, and
/// leaves a FAILED sentinel behind if it throws.
template <class F>
void with_run_dir(const fs::path& dir, const RunConfig& cfg, bool force, F&& body) {
  if (fs::exists(dir / kConfigFile) && !force) {
    throw UsageError("run directory '" + dir.string() + "' already holds a run (use --force)");
  }
  fs::create_directories(dir);
  for (const char* name : {kFailed, kFinalCkpt, kBestCkpt, kHistory, kConfusion, kSplit, kSummary}) {
    fs::remove(dir / name);
  }
  cfg.write(dir / kConfigFile);
  try {
    body();
  } catch (const std::exception& e) {
    std::ofstream(dir / kFailed) << e.what() << '\n';
    throw;
  }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

/// Writes checkpoints, history, confusion, split and summary for a finished
/// session and prints a one-line result.
inline void write_run(const fs::path& dir, const std::string& command, model::Model& m, const Prepared& p,
                      const train::TrainResult& r, const train::TrainConfig& tcfg, const std::string& source,
                      const nlohmann::json& extra, std::ostream& out) {
  const auto corpus = corpus_name(p.manifest);
  const checkpoint::TrainingMeta meta{tcfg.epochs, tcfg.seed, corpus};
  checkpoint::save_checkpoint(m, dir / kFinalCkpt, meta);
  if (r.best_state) {
    auto best = m.clone();
    model::restore(best, *r.best_state);
    checkpoint::save_checkpoint(best, dir / kBestCkpt, meta);
  } else {
    fs::copy_file(dir / kFinalCkpt, dir / kBestCkpt, fs::copy_options::overwrite_existing);
  }
  train::write_history_csv(r.history, dir / kHistory);
  write_json(dir / kSplit, p.split);

  nlohmann::json summary = {{"command", command}, {"source", source},  {"target", corpus},
                            {"labels", m.labels()}, {"epochs", tcfg.epochs}, {"seed", tcfg.seed}};
  if (!p.test_ids.empty()) {
    const auto cm = train::evaluate(m, p.store, p.test_ids, tcfg.batch_size);
    train::write_confusion_csv(cm, m.labels(), dir / kConfusion);
    summary["uar"] = train::uar(cm);
    summary["best_uar"] = r.best_uar;
    summary["best_epoch"] = r.best_epoch;
    out << command << ": uar " << std::fixed << std::setprecision(4) << train::uar(cm) << " (best "
        << r.best_uar << " at epoch " << r.best_epoch << ")" << std::defaultfloat << '\n';
  } else {
    out << command << ": no test set, confusion not written\n";
  }
  summary.update(extra);
  write_json(dir / kSummary, summary);
}

inline fs::path require_out(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  return o.out;
}

inline int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const auto cfg = resolve(o);
  const auto dir = require_out(o);
  auto spec = cfg.model_spec();
  const auto tcfg = cfg.train_config();
  with_run_dir(dir, cfg, o.force, [&] {
    const auto p = prepare(cfg, err);
    spec.n_classes = p.labels.size();
    model::Model m(spec, tcfg.seed);
    m.set_labels(p.labels.labels());
    const auto r = train::train(m, p.store, p.train_ids, p.test_ids, tcfg);
    write_run(dir, "train", m, p, r, tcfg, "", nlohmann::json::object(), out);
  });
  return kExitOk;
}

inline int cmd_transfer(const Options& o, std::ostream& out, std::ostream& err) {
  const auto cfg = resolve(o);
  const auto dir = require_out(o);
  auto spec = cfg.model_spec();
  const auto tcfg = cfg.train_config();
  // Read the source before anything is written so a bad checkpoint leaves no run directory.
  const auto source = checkpoint::read_checkpoint(cfg.require("source"));
  with_run_dir(dir, cfg, o.force, [&] {
    const auto p = prepare(cfg, err);
    auto t = train::transfer_train(source, spec, p.store, p.train_ids, p.test_ids, tcfg, p.labels.labels());
    for (const auto& msg : t.load_report.messages) err << msg << '\n';
    const nlohmann::json extra = {{"head_skipped", t.load_report.head_skipped},
                                  {"load_messages", t.load_report.messages},
                                  {"freeze_epochs", t.training.history.count("freeze")},
                                  {"finetune_epochs", t.training.history.count("finetune")}};
    write_run(dir, "transfer", t.model, p, t.training, tcfg, source.meta.source_corpus, extra, out);
  });
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

inline int cmd_eval(const Options& o, std::ostream& out, std::ostream&) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const auto cfg = resolve(o);
  auto m = checkpoint::load_checkpoint(o.checkpoint);
  const auto manifest = data::load_manifest(cfg.require("manifest"));
  const data::LabelMap labels(m.labels());
  const auto store = train::FeatureStore::load(cfg.require("cache"), manifest, labels);
  std::vector<std::string> ids;
  for (const auto& e : manifest.entries) ids.push_back(e.id);
  const auto cm = train::evaluate(m, store, ids);
  out << std::fixed << std::setprecision(4);
  for (std::size_t k = 0; k < cm.classes; ++k) {
    const auto n = cm.row_sum(k);
    out << "recall " << labels.label(k) << ' ';
    if (n == 0) {
      out << "n/a\n";
    } else {
      out << static_cast<double>(cm.at(k, k)) / static_cast<double>(n) << '\n';
    }
  }
  out << "uar " << train::uar(cm) << std::defaultfloat << '\n';
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    train::write_confusion_csv(cm, labels.labels(), fs::path(o.out) / kConfusion);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report

struct ReportRow {
  std::string run;
  std::string source;
  std::string target;
  double uar = 0.0;
};

inline ReportRow read_run(const fs::path& dir) {
  const auto summary_path = dir / kSummary;
  const auto confusion_path = dir / kConfusion;
  if (!fs::exists(summary_path) || !fs::exists(confusion_path)) {
    fail(ErrorKind::MalformedRunDir, "'" + dir.string() + "' lacks " + kSummary + " or " + kConfusion);
  }
  if (fs::exists(dir / kFailed)) fail(ErrorKind::MalformedRunDir, "'" + dir.string() + "' is a failed run");
  ReportRow row;
  row.run = fs::path(dir).lexically_normal().filename().string();
  if (row.run.empty()) row.run = fs::path(dir).lexically_normal().parent_path().filename().string();
  try {
    std::ifstream in(summary_path);
    const auto j = nlohmann::json::parse(in);
    row.source = j.at("source").get<std::string>();
    row.target = j.at("target").get<std::string>();
    row.uar = train::uar(train::read_confusion_csv(confusion_path).first);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorKind::MalformedRunDir, "'" + dir.string() + "': " + e.what());
  }
  if (row.source.empty()) row.source = "-";
  return row;
}

inline std::string format_table(const std::vector<ReportRow>& rows) {
  std::vector<std::array<std::string, 4>> cells{{"run", "source", "target", "uar"}};
  for (const auto& r : rows) cells.push_back({r.run, r.source, r.target, shortest(r.uar)});
  std::array<std::size_t, 4> width{};
  for (const auto& c : cells)
    for (std::size_t i = 0; i < 4; ++i) width[i] = std::max(width[i], c[i].size());
  std::ostringstream s;
  for (const auto& c : cells) {
    for (std::size_t i = 0; i < 4; ++i) {
      s << c[i];
      if (i < 3) s << std::string(width[i] - c[i].size() + 2, ' ');
    }
    s << '\n';
  }
  return s.str();
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Bar chart of UAR (percent) per run.
inline std::string format_svg(const std::vector<ReportRow>& rows) {
  const int bar = 48, gap = 24, left = 48, top = 20, plot_h = 200, bottom = 60;
  const int width = left + static_cast<int>(rows.size()) * (bar + gap) + gap;
  const int height = top + plot_h + bottom;
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  s << "  <line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << width << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  for (int pct = 0; pct <= 100; pct += 25) {
    const double y = top + plot_h * (1.0 - pct / 100.0);
    s << "  <text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" font-size=\"10\" text-anchor=\"end\">" << pct
      << "</text>\n";
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double x = left + gap + static_cast<double>(i) * (bar + gap);
    const double h = plot_h * std::clamp(rows[i].uar, 0.0, 1.0);
    s << "  <rect class=\"bar\" data-run=\"" << xml_escape(rows[i].run) << "\" x=\"" << x << "\" y=\""
      << top + plot_h - h << "\" width=\"" << bar << "\" height=\"" << h << "\" fill=\"steelblue\"/>\n";
    s << "  <text x=\"" << x + bar / 2.0 << "\" y=\"" << top + plot_h - h - 4
      << "\" font-size=\"10\" text-anchor=\"middle\">" << 100.0 * rows[i].uar << "</text>\n";
    s << "  <text x=\"" << x + bar / 2.0 << "\" y=\"" << top + plot_h + 16
      << "\" font-size=\"10\" text-anchor=\"middle\">" << xml_escape(rows[i].run) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline int cmd_report(const Options& o, std::ostream& out, std::ostream&) {
  if (o.runs.empty()) throw UsageError("report needs at least one run directory");
  std::vector<ReportRow> rows;
  for (const auto& dir : o.runs) rows.push_back(read_run(dir));
  const auto table = format_table(rows);
  out << table;
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream(fs::path(o.out) / "report.txt") << table;
    std::ofstream(fs::path(o.out) / "report.svg") << format_svg(rows);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth

inline int cmd_synth(const Options& o, std::ostream& out, std::ostream&) {
  const auto dir = require_out(o);
  synth::SynthConfig sc;
  sc.n_classes = o.classes;
  sc.f0_lo = o.f0_lo;
  sc.f0_hi = o.f0_hi;
  sc.duration = o.duration;
  sc.corpus = o.corpus;
  const auto m = synth::write_corpus(dir, o.count, sc, o.seed.value_or(0));
  out << m.entries.size() << " clips written to " << m.source.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Parses `argv` and runs one subcommand.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Speech affect recognition toolkit", "sar"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", o.config_file, "key=value config file");
  app.add_option("--seed", o.seed, "Random seed (overrides the config)");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--jobs", o.jobs, "Parallel workers for extract")->check(CLI::PositiveNumber);
  app.add_flag("--force", o.force, "Recompute or overwrite existing outputs");
  app.add_option("--set", o.settings, "Config override key=value (repeatable)");

  auto data_flags = [&](CLI::App* sub) {
    sub->add_option("--manifest", o.manifest, "Corpus manifest CSV");
    sub->add_option("--cache", o.cache, "Feature cache directory");
  };
  auto* extract = app.add_subcommand("extract", "Extract model inputs for every manifest entry");
  data_flags(extract);
  auto* train_cmd = app.add_subcommand("train", "Train a model from scratch");
  data_flags(train_cmd);
  train_cmd->add_option("--test-manifest", o.test_manifest, "Held-out manifest instead of a split");
  auto* transfer = app.add_subcommand("transfer", "Fine-tune a source checkpoint on a target corpus");
  data_flags(transfer);
  transfer->add_option("--test-manifest", o.test_manifest, "Held-out manifest instead of a split");
  transfer->add_option("--source", o.source, "Source checkpoint");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  data_flags(eval);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate");
  auto* report = app.add_subcommand("report", "Compare run directories");
  report->add_option("runs", o.runs, "Run directories");
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic corpus (WAV files and manifest)");
  synth_cmd->add_option("--count", o.count, "Number of clips");
  synth_cmd->add_option("--classes", o.classes, "Number of classes (2..7)");
  synth_cmd->add_option("--f0-lo", o.f0_lo, "Lowest base frequency, Hz");
  synth_cmd->add_option("--f0-hi", o.f0_hi, "Highest base frequency, Hz");
  synth_cmd->add_option("--duration", o.duration, "Clip length, seconds");
  synth_cmd->add_option("--corpus", o.corpus, "Corpus name and id prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  try {
    if (extract->parsed()) return cmd_extract(o, out, err);
    if (train_cmd->parsed()) return cmd_train(o, out, err);
    if (transfer->parsed()) return cmd_transfer(o, out, err);
    if (eval->parsed()) return cmd_eval(o, out, err);
    if (report->parsed()) return cmd_report(o, out, err);
    return cmd_synth(o, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace sar::cli

#endif  // SAR_CLI_HPP
