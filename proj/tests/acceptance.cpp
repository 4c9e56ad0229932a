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

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance [criterion...]   (default: all ten)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sar/checkpoint.hpp"
#include "sar/features.hpp"
#include "sar/model.hpp"
#include "sar/trainer.hpp"

namespace sar {
namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;  // 0: no runtime limit
  std::function<Verdict()> run;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Verdict flop_count() {
  model::ModelSpec s;
  s.in_channels = 3;
  s.n_classes = 1000;
  const double macs = model::count_flops(s);
  return {std::abs(macs - 3.6e9) <= 0.1 * 3.6e9, fmt("%.4g multiply-adds, target 3.6e9 +/- 10%%", macs)};
}

Verdict shape_chain() {
  model::ModelSpec s;
  s.stem = model::StemVariant::Table1;
  model::Model m(s, 0);
  Rng rng(1);
  auto x = oracle::random_tensor<float>({1, 1, 224, 224}, rng, 1.0, false);
  model::ForwardTrace trace;
  nd::NoGradGuard ng;
  m.forward(x, nd::Mode::Eval, 0, &trace);
  std::vector<std::size_t> sizes{trace.stem[2]};
  for (const auto& st : trace.stages) sizes.push_back(st[2]);
  bool square = trace.stem[2] == trace.stem[3];
  for (const auto& st : trace.stages) square = square && st[2] == st[3];
  const std::vector<std::size_t> want{112, 56, 28, 14, 7};
  std::string got;
  for (auto v : sizes) got += (got.empty() ? "" : ",") + std::to_string(v);
  return {square && sizes == want, "output sizes " + got};
}

Verdict gradient_suite() {
  double worst = 0.0;
  std::string worst_case;
  std::set<std::string> names;
  int checks = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& c : gradcheck::catalogue(seed)) {
      const auto r = gradcheck::check(c, seed);
      names.insert(c.name);
      ++checks;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_case = c.name + " seed " + std::to_string(seed);
      }
    }
  }
  return {worst < 1e-3 && names.count("residual_block") > 0,
          fmt("%zu ops x 20 seeds (%d checks), worst rel err %.2e (%s)", names.size(), checks, worst,
              worst_case.c_str())};
}

Verdict residual_identity() {
  std::vector<model::ResidualBlock<float>> stack;
  for (int i = 0; i < 16; ++i) {
    stack.emplace_back("b" + std::to_string(i), "g", 8, 8, 1, i);
    for (auto* u : {&stack.back().branch1, &stack.back().branch2}) {
      std::fill(u->weight.data().begin(), u->weight.data().end(), 0.0F);
    }
  }
  Rng rng(5);
  auto x = oracle::random_tensor<float>({2, 8, 6, 6}, rng, 1.0, false);
  nd::NoGradGuard ng;
  // Mixed-sign input through one block: relu of the input.
  auto y = stack.front().forward(x, nd::Mode::Eval);
  std::size_t relu_mismatch = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) relu_mismatch += y.data()[i] != std::max(0.0F, x.data()[i]);
  // Nonnegative input through all sixteen: unchanged.
  for (auto& v : x.data()) v = std::abs(v);
  nd::Tensor h = x;
  for (auto& b : stack) h = b.forward(h, nd::Mode::Eval);
  const bool exact = std::memcmp(h.data().data(), x.data().data(), x.numel() * sizeof(float)) == 0;
  return {relu_mismatch == 0 && exact,
          fmt("single block relu mismatches %zu; 16-block stack bit-exact: %s", relu_mismatch, exact ? "yes" : "no")};
}

Verdict uar_oracle() {
  Rng rng(1);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    train::ConfusionMatrix cm(2 + rng.below(6));
    for (auto& c : cm.counts) c = rng.below(50);
    for (std::size_t k = 0; k < cm.classes; ++k) cm.at(k, k) += 1;
    std::vector<std::vector<std::uint64_t>> rows(cm.classes, std::vector<std::uint64_t>(cm.classes));
    for (std::size_t r = 0; r < cm.classes; ++r)
      for (std::size_t c = 0; c < cm.classes; ++c) rows[r][c] = cm.at(r, c);
    worst = std::max(worst, std::abs(train::uar(cm) - oracle::mean_recall(rows)));
  }
  return {worst <= 1e-12, fmt("1000 matrices, max |diff| %.1e", worst)};
}

Verdict overfit() {
  int reached = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto corpus = fixtures::synthetic_corpus(20, synth::SynthConfig{}, 7 + seed);
    model::Model m(fixtures::reduced_spec(), seed);
    train::TrainConfig cfg;
    cfg.learning_rate = 1e-4;
    cfg.epochs = 200;
    cfg.batch_size = 20;  // one step per epoch
    cfg.seed = seed;
    const auto r = train::train(m, corpus.store, corpus.ids, {}, cfg);
    int first = 0;
    for (const auto& e : r.history.epochs) {
      if (e.train_accuracy == 1.0) {
        first = e.epoch;
        break;
      }
    }
    const double eval_acc = train::accuracy(train::evaluate(m, corpus.store, corpus.ids));
    const bool ok = first > 0 && eval_acc == 1.0;
    reached += ok;
    per_seed += fmt(" s%llu:%s", static_cast<unsigned long long>(seed), ok ? std::to_string(first).c_str() : "no");
  }
  return {reached >= 4, fmt("%d/5 seeds at 100%% (step first reached:%s)", reached, per_seed.c_str())};
}

Verdict transfer_gain() {
  synth::SynthConfig src;
  src.corpus = "src";
  synth::SynthConfig tgt = src;
  tgt.corpus = "tgt";
  tgt.f0_lo = 1200.0;
  tgt.f0_hi = 2400.0;
  synth::SynthConfig held = tgt;
  held.corpus = "tgttest";
  auto S = fixtures::synthetic_corpus(2000, src, 100);
  auto T = fixtures::synthetic_corpus(40, tgt, 200);
  auto H = fixtures::synthetic_corpus(200, held, 300);
  for (const auto& id : H.ids) T.store.insert(id, H.store.at(id));

  bool all_ok = true;
  std::string detail;
  for (auto opt : {train::OptimizerKind::Adam, train::OptimizerKind::Sgd}) {
    std::vector<double> xfer, scratch;
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      train::TrainConfig sc;
      sc.optimizer = opt;
      sc.learning_rate = 1e-4;
      sc.epochs = 4;
      sc.batch_size = 25;
      sc.seed = seed;
      model::Model source(fixtures::reduced_spec(), seed);
      train::train(source, S.store, S.ids, {}, sc);
      const auto ck = checkpoint::capture(source);

      train::TrainConfig tc = sc;
      tc.epochs = 30;
      tc.freeze_phase_epochs = 10;
      tc.batch_size = 10;
      auto t = train::transfer_train(ck, T.store, T.ids, {}, tc, T.labels);
      xfer.push_back(train::uar(train::evaluate(t.model, T.store, H.ids)));

      model::Model fresh(fixtures::reduced_spec(), seed + 1000);
      train::train(fresh, T.store, T.ids, {}, tc);
      scratch.push_back(train::uar(train::evaluate(fresh, T.store, H.ids)));
      wins += xfer.back() > scratch.back();
      std::printf("      %s seed %llu: transfer %.3f scratch %.3f\n", std::string(train::to_string(opt)).c_str(),
                  static_cast<unsigned long long>(seed), xfer.back(), scratch.back());
      std::fflush(stdout);
    }
    const bool ok = median(xfer) >= median(scratch) && wins >= 3;
    all_ok = all_ok && ok;
    detail += fmt("%s%s median %.3f vs %.3f, %d/5 wins", detail.empty() ? "" : "; ",
                  std::string(train::to_string(opt)).c_str(), median(xfer), median(scratch), wins);
  }
  return {all_ok, detail};
}

Verdict determinism() {
  auto corpus = fixtures::synthetic_corpus(24, synth::SynthConfig{}, 11);
  std::vector<std::vector<std::uint8_t>> bytes;
  for (int run = 0; run < 2; ++run) {
    model::Model m(fixtures::reduced_spec(), 5);
    train::TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 5;
    train::train(m, corpus.store, corpus.ids, {}, cfg);
    bytes.push_back(checkpoint::serialize(checkpoint::capture(m, {2, 5, "synth"})));
  }
  const bool same = bytes[0] == bytes[1];

  // Freeze phase only: every backbone tensor (parameters and running
  // statistics) keeps its bytes, the head moves.
  model::Model source(fixtures::reduced_spec(), 9);
  const auto ck = checkpoint::capture(source);
  train::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.freeze_phase_epochs = 2;
  cfg.batch_size = 8;
  auto t = train::transfer_train(ck, corpus.store, corpus.ids, {}, cfg, corpus.labels);
  const auto after = checkpoint::capture(t.model);
  std::size_t backbone_changed = 0, head_changed = 0;
  for (const auto& a : after.tensors) {
    const auto* b = ck.find(a.name);
    const bool differs = b == nullptr || std::memcmp(a.values.data(), b->values.data(),
                                                     a.values.size() * sizeof(float)) != 0;
    if (a.name.starts_with("head")) {
      head_changed += differs;
    } else {
      backbone_changed += differs;
    }
  }
  return {same && backbone_changed == 0 && head_changed > 0,
          fmt("repeat runs byte-identical: %s; after freeze phase %zu backbone tensors changed, %zu head tensors "
              "changed",
              same ? "yes" : "no", backbone_changed, head_changed)};
}

Verdict checkpoint_round_trip() {
  model::Model m(fixtures::reduced_spec(), 3);
  m.set_labels({"a", "b", "c", "d"});
  Rng rng(1);
  auto x = oracle::random_tensor<float>({2, 1, 64, 64}, rng, 1.0, false);
  m.forward(x, nd::Mode::Train, 1);  // nontrivial running statistics
  const auto bytes = checkpoint::serialize(checkpoint::capture(m, {3, 1, "synth"}));
  auto back = checkpoint::instantiate(checkpoint::deserialize(bytes));
  const bool exact = model::snapshot(back) == model::snapshot(m) &&
                     checkpoint::serialize(checkpoint::capture(back, {3, 1, "synth"})) == bytes;

  auto rejected = [](std::vector<std::uint8_t> b) {
    try {
      checkpoint::deserialize(b);
    } catch (const Error& e) {
      return e.kind() == ErrorKind::CorruptCheckpoint;
    }
    return false;
  };
  int caught = 0, tried = 0;
  for (std::size_t at : {bytes.size() - 100, bytes.size() / 2, std::size_t{20}}) {
    auto b = bytes;
    b[at] ^= 0x04;
    caught += rejected(b);
    ++tried;
  }
  for (std::size_t cut : {std::size_t{1}, std::size_t{1000}}) {
    caught += rejected({bytes.begin(), bytes.end() - static_cast<long>(cut)});
    ++tried;
  }
  return {exact && caught == tried,
          fmt("round trip bit-exact: %s; %d/%d corrupted files rejected", exact ? "yes" : "no", caught, tried)};
}

Verdict dsp_anchors() {
  const double mel = features::hz_to_mel(1000.0);

  const features::StftConfig cfg;  // 512 / 160 at 16 kHz
  audio::AudioClip tone{std::vector<float>(4000), 16000, ""};
  for (std::size_t i = 0; i < tone.samples.size(); ++i) {
    tone.samples[i] = static_cast<float>(0.5 * std::sin(2.0 * std::numbers::pi * 1000.0 * static_cast<double>(i) / 16000.0));
  }
  const auto s = features::stft(tone, cfg);
  std::size_t off_bin = 0;
  for (std::size_t t = 0; t + 1 < s.n_frames; ++t) {
    std::size_t best = 0;
    for (std::size_t b = 1; b < s.n_bins; ++b) {
      if (std::abs(s.at(b, t)) > std::abs(s.at(best, t))) best = b;
    }
    off_bin += best != 32;
  }

  Rng rng(2);
  audio::AudioClip noise{std::vector<float>(3000), 16000, ""};
  for (auto& v : noise.samples) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  const auto n_spec = features::stft(noise, cfg);
  const std::size_t n = cfg.frame_len;
  double worst = 0.0;
  for (std::size_t t = 0; t < n_spec.n_frames; ++t) {
    double time_energy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t at = t * cfg.hop + i;
      const double w =
          0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n)));
      const double v = at < noise.samples.size() ? noise.samples[at] * w : 0.0;
      time_energy += v * v;
    }
    double spec_energy = std::norm(n_spec.at(0, t)) + std::norm(n_spec.at(n / 2, t));
    for (std::size_t b = 1; b < n / 2; ++b) spec_energy += 2.0 * std::norm(n_spec.at(b, t));
    worst = std::max(worst, std::abs(spec_energy / static_cast<double>(n) - time_energy) / time_energy);
  }
  return {std::abs(mel - 1000.0) <= 0.1 && off_bin == 0 && worst <= 1e-3,
          fmt("mel(1000) = %.4f; frames off bin 32: %zu; Parseval worst rel err %.1e", mel, off_bin, worst)};
}

}  // namespace
}  // namespace sar

int main(int argc, char** argv) {
  using namespace sar;
  const std::vector<Criterion> all{
      {1, "FLOP count", 1.0, flop_count},
      {2, "Shape chain", 10.0, shape_chain},
      {3, "Gradient suite", 120.0, gradient_suite},
      {4, "Residual identity", 0.0, residual_identity},
      {5, "UAR oracle", 0.0, uar_oracle},
      {6, "Overfit sanity", 300.0, overfit},
      {7, "Transfer gain", 1800.0, transfer_gain},
      {8, "Determinism", 0.0, determinism},
      {9, "Checkpoint round-trip", 0.0, checkpoint_round_trip},
      {10, "DSP anchors", 0.0, dsp_anchors},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto start = Clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    bool pass = v.pass;
    std::string timing = fmt("%.2f s", secs);
    if (c.budget_s > 0.0) {
      timing += fmt(" (limit %.0f s)", c.budget_s);
      pass = pass && secs < c.budget_s;
    }
    std::printf("%s %2d %s: %s [%s]\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), v.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
    failed += !pass;
  }
  return failed == 0 ? 0 : 1;
}
