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

#ifndef SAR_TRAINER_HPP
#define SAR_TRAINER_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sar/checkpoint.hpp"
#include "sar/datakit.hpp"
#include "sar/error.hpp"
#include "sar/features.hpp"
#include "sar/model.hpp"
#include "sar/nd/ops.hpp"

namespace sar::train {

using model::Model;
using nd::Mode;
using nd::Tensor;

// ---------------------------------------------------------------------------
// Features in memory

/// Model inputs keyed by utterance id, with class indices attached.
class FeatureStore {
 public:
  void insert(const std::string& id, features::ModelInput input) { items_[id] = std::move(input); }

  bool contains(const std::string& id) const { return items_.count(id) > 0; }
  std::size_t size() const { return items_.size(); }

  const features::ModelInput& at(const std::string& id) const {
    auto it = items_.find(id);
    if (it == items_.end()) fail(ErrorKind::MissingFeatures, "no features for utterance '" + id + "'");
    return it->second;
  }

  /// Loads `<cache_dir>/<id>.feat` for every manifest entry; labels come from
  /// the manifest resolved through `labels`.
  static FeatureStore load(const std::filesystem::path& cache_dir, const data::Manifest& m,
                           const data::LabelMap& labels) {
    FeatureStore store;
    for (const auto& e : m.entries) {
      const auto path = cache_dir / (e.id + ".feat");
      if (!std::filesystem::exists(path)) {
        fail(ErrorKind::MissingFeatures, "no cache record for '" + e.id + "' at " + path.string());
      }
      auto rec = features::read_cache_record(path);
      rec.input.label_id = labels.index(e.label);
      store.insert(e.id, std::move(rec.input));
    }
    return store;
  }

  void require(const std::vector<std::string>& ids) const {
    for (const auto& id : ids) at(id);
  }

 private:
  std::unordered_map<std::string, features::ModelInput> items_;
};

struct Batch {
  Tensor inputs;             // [N, 1, H, W]
  std::vector<int> targets;  // [N]
};

inline Batch make_batch(const FeatureStore& store, const std::vector<std::string>& ids) {
  if (ids.empty()) fail(ErrorKind::InvalidArgument, "empty batch");
  const auto& first = store.at(ids.front());
  const std::size_t h = first.height, w = first.width;
  std::vector<float> values;
  values.reserve(ids.size() * h * w);
  Batch b;
  for (const auto& id : ids) {
    const auto& in = store.at(id);
    if (in.height != h || in.width != w) {
      fail(ErrorKind::ShapeMismatch, "utterance '" + id + "' has a different input size");
    }
    values.insert(values.end(), in.values.begin(), in.values.end());
    b.targets.push_back(in.label_id.value_or(-1));
  }
  b.inputs = Tensor(nd::Shape{ids.size(), 1, h, w}, std::move(values));
  return b;
}

// ---------------------------------------------------------------------------
// Metrics

/// counts[true][predicted].
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t k = 0) : classes(k), counts(k * k, 0) {}

  std::uint64_t& at(std::size_t truth, std::size_t predicted) { return counts[truth * classes + predicted]; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const {
    return counts[truth * classes + predicted];
  }
  std::uint64_t row_sum(std::size_t truth) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < classes; ++j) s += at(truth, j);
    return s;
  }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Unweighted average recall: the mean over classes of per-class recall. A
/// class with no true instances makes the metric undefined (EmptyClass).
inline double uar(const ConfusionMatrix& cm) {
  if (cm.classes == 0) fail(ErrorKind::EmptyClass, "confusion matrix has no classes");
  double total = 0.0;
  for (std::size_t k = 0; k < cm.classes; ++k) {
    const std::uint64_t n = cm.row_sum(k);
    if (n == 0) fail(ErrorKind::EmptyClass, "class " + std::to_string(k) + " has no test items");
    total += static_cast<double>(cm.at(k, k)) / static_cast<double>(n);
  }
  return total / static_cast<double>(cm.classes);
}

inline double accuracy(const ConfusionMatrix& cm) {
  std::uint64_t diag = 0;
  for (std::size_t k = 0; k < cm.classes; ++k) diag += cm.at(k, k);
  return cm.total() ? static_cast<double>(diag) / static_cast<double>(cm.total()) : 0.0;
}

/// Header row `true\pred,<labels...>`, then one row per true class.
inline void write_confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& labels,
                                const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << "true\\pred";
  for (std::size_t j = 0; j < cm.classes; ++j) out << ',' << data::csv_field(labels.at(j));
  out << '\n';
  for (std::size_t i = 0; i < cm.classes; ++i) {
    out << data::csv_field(labels.at(i));
    for (std::size_t j = 0; j < cm.classes; ++j) out << ',' << cm.at(i, j);
    out << '\n';
  }
}

inline std::pair<ConfusionMatrix, std::vector<std::string>> read_confusion_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::MalformedRunDir, "empty confusion file");
  auto header = data::parse_csv_line(line);
  if (header.size() < 3) fail(ErrorKind::MalformedRunDir, "confusion header too short");
  std::vector<std::string> labels(header.begin() + 1, header.end());
  ConfusionMatrix cm(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!std::getline(in, line)) fail(ErrorKind::MalformedRunDir, "confusion file truncated");
    auto f = data::parse_csv_line(line);
    if (f.size() != labels.size() + 1) fail(ErrorKind::MalformedRunDir, "ragged confusion row");
    for (std::size_t j = 0; j < labels.size(); ++j) {
      try {
        cm.at(i, j) = std::stoull(f[j + 1]);
      } catch (const std::exception&) {
        fail(ErrorKind::MalformedRunDir, "non-numeric confusion count '" + f[j + 1] + "'");
      }
    }
  }
  return {cm, labels};
}

/// Index of the largest value; ties go to the lowest index.
inline std::size_t argmax(const float* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

/// Eval-mode confusion matrix over `ids`.
inline ConfusionMatrix evaluate(Model& m, const FeatureStore& store, const std::vector<std::string>& ids,
                                std::size_t batch_size = 25) {
  if (ids.empty()) fail(ErrorKind::InvalidArgument, "evaluate needs at least one utterance");
  store.require(ids);
  nd::NoGradGuard no_grad;
  const std::size_t k = m.spec().n_classes;
  ConfusionMatrix cm(k);
  for (const auto& chunk : data::batches(ids, batch_size, false, 0)) {
    auto batch = make_batch(store, chunk);
    auto logits = m.forward(batch.inputs, Mode::Eval);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const int t = batch.targets[i];
      if (t < 0 || static_cast<std::size_t>(t) >= k) {
        fail(ErrorKind::TargetOutOfRange, "utterance '" + chunk[i] + "' has no valid class");
      }
      cm.at(static_cast<std::size_t>(t), argmax(logits.data().data() + i * k, k)) += 1;
    }
  }
  return cm;
}

// ---------------------------------------------------------------------------
// Optimization

enum class OptimizerKind { Adam, Sgd };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }
inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  fail(ErrorKind::InvalidArgument, "unknown optimizer '" + std::string(s) + "'");
}

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 100;
  std::size_t batch_size = 25;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  int freeze_phase_epochs = 10;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      fail(ErrorKind::InvalidArgument, "learning rate must be finite and >= 0");
    }
    if (epochs < 1) fail(ErrorKind::InvalidArgument, "epochs must be >= 1");
    if (batch_size < 1) fail(ErrorKind::InvalidArgument, "batch size must be >= 1");
    if (freeze_phase_epochs < 0) fail(ErrorKind::InvalidArgument, "freeze_phase_epochs must be >= 0");
  }
};

/// Adam or SGD with momentum over the parameters that currently require a
/// gradient. State is keyed by parameter name.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(const std::vector<nd::Parameter<float>>& params) {
    ++steps_;
    const double lr = cfg_.learning_rate;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (auto p : params) {
      if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
      auto values = p.tensor.data();
      auto grad = p.tensor.grad();
      auto& st = state_[p.name];
      if (st.first.size() != values.size()) {
        st.first.assign(values.size(), 0.0F);
        st.second.assign(values.size(), 0.0F);
      }
      if (cfg_.optimizer == OptimizerKind::Adam) {
        for (std::size_t i = 0; i < values.size(); ++i) {
          const double g = grad[i];
          st.first[i] = static_cast<float>(cfg_.beta1 * st.first[i] + (1.0 - cfg_.beta1) * g);
          st.second[i] = static_cast<float>(cfg_.beta2 * st.second[i] + (1.0 - cfg_.beta2) * g * g);
          const double mhat = st.first[i] / bc1;
          const double vhat = st.second[i] / bc2;
          values[i] = static_cast<float>(values[i] - lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
        }
      } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
          st.first[i] = static_cast<float>(cfg_.momentum * st.first[i] + grad[i]);
          values[i] = static_cast<float>(values[i] - lr * st.first[i]);
        }
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::uint64_t steps_ = 0;
  std::unordered_map<std::string, std::pair<std::vector<float>, std::vector<float>>> state_;
};

struct EpochRecord {
  int epoch = 0;  // 1-based, global across phases
  std::string phase;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double test_uar = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  std::size_t count(const std::string& phase) const {
    std::size_t n = 0;
    for (const auto& e : epochs) n += e.phase == phase;
    return n;
  }
};

inline void write_history_csv(const TrainHistory& h, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << "epoch,phase,loss,train_acc,test_uar,seconds\n" << std::setprecision(9);
  for (const auto& e : h.epochs) {
    out << e.epoch << ',' << e.phase << ',' << e.loss << ',' << e.train_accuracy << ',';
    if (std::isnan(e.test_uar)) {
      out << "nan";
    } else {
      out << e.test_uar;
    }
    out << ',' << std::setprecision(4) << e.seconds << std::setprecision(9) << '\n';
  }
}

/// Per-step observer; receives the global step index and the batch loss.
using StepHook = std::function<void(std::uint64_t step, double loss)>;

struct TrainResult {
  TrainHistory history;
  std::optional<model::ModelState<float>> best_state;
  double best_uar = std::numeric_limits<double>::quiet_NaN();
  int best_epoch = 0;
};

/// Mutable state shared by consecutive training phases of one session.
struct Session {
  Model& model;
  const FeatureStore& store;
  const std::vector<std::string>& train_ids;
  const std::vector<std::string>& test_ids;
  TrainConfig cfg;
  TrainResult result;
  std::uint64_t step = 0;
  int epoch = 0;
  StepHook on_step;
};

namespace detail {

inline void check_test_classes(const Model& m, const FeatureStore& store,
                               const std::vector<std::string>& test_ids) {
  if (test_ids.empty()) return;
  std::vector<bool> present(m.spec().n_classes, false);
  for (const auto& id : test_ids) {
    const int t = store.at(id).label_id.value_or(-1);
    if (t >= 0 && static_cast<std::size_t>(t) < present.size()) present[static_cast<std::size_t>(t)] = true;
  }
  for (std::size_t k = 0; k < present.size(); ++k) {
    if (!present[k]) {
      fail(ErrorKind::EmptyClass, "class " + std::to_string(k) + " is absent from the test set");
    }
  }
}

}  // namespace detail

/// Runs `epochs` epochs of mini-batch training, tagging each record with
/// `phase`. Batches and dropout masks are derived from the session seed and
/// global epoch/step counters, so the trajectory is fully reproducible.
inline void run_phase(Session& s, int epochs, const std::string& phase) {
  Optimizer opt(s.cfg);
  const std::size_t k = s.model.spec().n_classes;
  for (int e = 0; e < epochs; ++e) {
    ++s.epoch;
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (const auto& ids : data::batches(s.train_ids, s.cfg.batch_size, true, s.cfg.seed,
                                         static_cast<std::uint64_t>(s.epoch))) {
      auto batch = make_batch(s.store, ids);
      s.model.zero_grad();
      auto logits = s.model.forward(batch.inputs, Mode::Train, mix_seed(s.cfg.seed, 0x5eed0000ULL + s.step));
      auto ce = nd::softmax_cross_entropy(logits, std::span<const int>(batch.targets));
      const double loss = ce.loss.item();
      if (!std::isfinite(loss)) {
        std::string which;
        for (const auto& id : ids) which += (which.empty() ? "" : ",") + id;
        fail(ErrorKind::NonFiniteLoss, "epoch " + std::to_string(s.epoch) + " step " +
                                           std::to_string(s.step) + " batch [" + which + "]");
      }
      nd::backward(ce.loss);
      opt.step(s.model.parameters());
      if (s.on_step) s.on_step(s.step, loss);
      ++s.step;
      loss_sum += loss * static_cast<double>(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        correct += argmax(logits.data().data() + i * k, k) == static_cast<std::size_t>(batch.targets[i]);
      }
      seen += ids.size();
    }
    EpochRecord rec;
    rec.epoch = s.epoch;
    rec.phase = phase;
    rec.loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    if (!s.test_ids.empty()) {
      rec.test_uar = uar(evaluate(s.model, s.store, s.test_ids, s.cfg.batch_size));
      if (!s.result.best_state || rec.test_uar > s.result.best_uar) {
        s.result.best_uar = rec.test_uar;
        s.result.best_epoch = s.epoch;
        s.result.best_state = model::snapshot(s.model);
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    s.result.history.epochs.push_back(rec);
  }
  s.model.zero_grad();
}

/// Trains every unfrozen parameter for cfg.epochs epochs.
inline TrainResult train(Model& m, const FeatureStore& store, const std::vector<std::string>& train_ids,
                         const std::vector<std::string>& test_ids, const TrainConfig& cfg,
                         StepHook on_step = {}) {
  cfg.validate();
  if (train_ids.empty()) fail(ErrorKind::InvalidArgument, "training set is empty");
  store.require(train_ids);
  store.require(test_ids);
  detail::check_test_classes(m, store, test_ids);
  Session s{m, store, train_ids, test_ids, cfg, {}, 0, 0, std::move(on_step)};
  run_phase(s, cfg.epochs, "train");
  return std::move(s.result);
}

struct TransferResult {
  Model model;
  TrainResult training;
  checkpoint::LoadReport load_report;
};

/// Source-to-target transfer: load the source backbone into a `target`
/// model with a fresh head for `target_labels`, train only the head for
/// cfg.freeze_phase_epochs ("freeze"), then unfreeze and train everything for
/// the remaining epochs ("finetune"). The target backbone must match the
/// source's (IncompatibleSpec otherwise).
inline TransferResult transfer_train(const checkpoint::Checkpoint& source, model::ModelSpec target,
                                     const FeatureStore& store, const std::vector<std::string>& train_ids,
                                     const std::vector<std::string>& test_ids, const TrainConfig& cfg,
                                     const std::vector<std::string>& target_labels,
                                     StepHook on_step = {}) {
  cfg.validate();
  if (train_ids.empty()) fail(ErrorKind::InvalidArgument, "training set is empty");
  store.require(train_ids);
  store.require(test_ids);
  target.n_classes = target_labels.size();
  Model m(target, cfg.seed);
  auto report = checkpoint::load_into(m, source);
  m.replace_head(target_labels.size(), mix_seed(cfg.seed, 0x4ead), target_labels);
  detail::check_test_classes(m, store, test_ids);

  Session s{m, store, train_ids, test_ids, cfg, {}, 0, 0, std::move(on_step)};
  const int head_epochs = std::min(cfg.freeze_phase_epochs, cfg.epochs);
  if (head_epochs > 0) {
    m.freeze(model::FreezeSelector::all_but_head());
    run_phase(s, head_epochs, "freeze");
    m.unfreeze();
  }
  if (cfg.epochs - head_epochs > 0) run_phase(s, cfg.epochs - head_epochs, "finetune");
  TrainResult result = std::move(s.result);
  return {std::move(m), std::move(result), std::move(report)};
}

/// Transfer into the source architecture, sized for the cached inputs.
inline TransferResult transfer_train(const checkpoint::Checkpoint& source, const FeatureStore& store,
                                     const std::vector<std::string>& train_ids,
                                     const std::vector<std::string>& test_ids, const TrainConfig& cfg,
                                     const std::vector<std::string>& target_labels,
                                     StepHook on_step = {}) {
  if (train_ids.empty()) fail(ErrorKind::InvalidArgument, "training set is empty");
  auto spec = source.spec;
  const auto& probe = store.at(train_ids.front());
  spec.input_height = probe.height;
  spec.input_width = probe.width;
  return transfer_train(source, spec, store, train_ids, test_ids, cfg, target_labels, std::move(on_step));
}

}  // namespace sar::train

#endif  // SAR_TRAINER_HPP
