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

#ifndef SAR_MODEL_HPP
#define SAR_MODEL_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sar/error.hpp"
#include "sar/nd/ops.hpp"
#include "sar/nd/tensor.hpp"
#include "sar/random.hpp"

namespace sar::model {

using nd::Mode;
using nd::Shape;

/// Stem topology. `Standard` is conv7x7/2 + maxpool3x3/2 with a stride-1
/// first stage; `Table1` drops the maxpool and enters every stage with
/// stride 2. Both give 224 -> 112 -> 56 -> 28 -> 14 -> 7.
enum class StemVariant { Standard, Table1 };

inline std::string_view to_string(StemVariant v) {
  return v == StemVariant::Standard ? "standard" : "table1";
}

inline StemVariant parse_stem(std::string_view s) {
  if (s == "standard") return StemVariant::Standard;
  if (s == "table1") return StemVariant::Table1;
  fail(ErrorKind::InvalidArgument, "unknown stem variant '" + std::string(s) + "'");
}

inline constexpr std::array<std::size_t, 4> kStageBlocks{3, 4, 6, 3};
inline constexpr std::array<std::size_t, 4> kStageWidths{64, 128, 256, 512};
inline constexpr std::size_t kStemKernel = 7;

struct ModelSpec {
  StemVariant stem = StemVariant::Standard;
  /// Divides every width (stem and stages); 1 is the full network.
  std::size_t width_divisor = 1;
  std::size_t in_channels = 1;
  std::size_t input_height = 224;
  std::size_t input_width = 224;
  std::size_t n_classes = 4;
  double dropout_p = 0.1;

  std::size_t stage_width(std::size_t stage) const { return kStageWidths[stage] / width_divisor; }
  std::size_t stem_width() const { return kStageWidths[0] / width_divisor; }
  std::size_t feature_dim() const { return stage_width(3); }
  std::size_t stage_stride(std::size_t stage) const {
    return (stage == 0 && stem == StemVariant::Standard) ? 1 : 2;
  }

  void validate() const {
    if (n_classes < 2) fail(ErrorKind::InvalidArgument, "n_classes must be >= 2");
    if (width_divisor == 0 || kStageWidths[0] % width_divisor != 0) {
      fail(ErrorKind::InvalidArgument, "width divisor must divide 64");
    }
    if (in_channels == 0) fail(ErrorKind::InvalidArgument, "in_channels must be >= 1");
    if (input_height < 32 || input_width < 32) {
      fail(ErrorKind::InvalidArgument, "input must be at least 32x32");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
      fail(ErrorKind::InvalidArgument, "dropout_p must be in [0, 1)");
    }
  }

  bool same_backbone(const ModelSpec& o) const {
    return stem == o.stem && width_divisor == o.width_divisor && in_channels == o.in_channels;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

namespace detail {

inline std::uint64_t name_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
  return h;
}

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/// He-uniform (fan-in) initializer; each tensor has its own stream keyed by
/// its name so initialization does not depend on construction order.
template <class T>
nd::BasicTensor<T> he_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed,
                              std::string_view name) {
  Rng rng(mix_seed(seed, name_hash(name)));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  nd::BasicTensor<T> t(std::move(shape), true);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace detail

/// Convolution (no bias) followed by batch normalization. A frozen unit (its
/// gamma excluded from gradients) normalizes with running statistics and
/// leaves them untouched.
template <class T>
struct ConvBn {
  std::string prefix;
  std::string conv_name;
  std::string bn_name;
  std::string group;
  std::size_t stride = 1;
  std::size_t pad = 0;
  nd::BasicTensor<T> weight;
  nd::BasicTensor<T> gamma;
  nd::BasicTensor<T> beta;
  nd::BatchNormState<T> stats;

  ConvBn() = default;
  ConvBn(std::string prefix_, std::string conv, std::string bn, std::string group_,
         std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t pad_,
         std::uint64_t seed)
      : prefix(std::move(prefix_)),
        conv_name(std::move(conv)),
        bn_name(std::move(bn)),
        group(std::move(group_)),
        stride(stride_),
        pad(pad_),
        weight(detail::he_uniform<T>(Shape{out, in, k, k}, in * k * k, seed,
                                     prefix + "." + conv_name + ".weight")),
        gamma(nd::BasicTensor<T>::full(Shape{out}, T(1), true)),
        beta(nd::BasicTensor<T>(Shape{out}, true)),
        stats(out) {}

  bool frozen() const { return !gamma.requires_grad(); }

  nd::BasicTensor<T> forward(const nd::BasicTensor<T>& x, Mode mode) {
    auto y = nd::conv2d(x, weight, stride, pad);
    const bool freeze_stats = frozen();
    return nd::batchnorm2d(y, gamma, beta, stats, freeze_stats ? Mode::Eval : mode, !freeze_stats);
  }

  void collect(std::vector<nd::Parameter<T>>& out) const {
    out.push_back({prefix + "." + conv_name + ".weight", group, weight});
    out.push_back({prefix + "." + bn_name + ".weight", group, gamma});
    out.push_back({prefix + "." + bn_name + ".bias", group, beta});
  }

  void collect_buffers(std::vector<std::pair<std::string, std::vector<T>*>>& out) {
    out.emplace_back(prefix + "." + bn_name + ".running_mean", &stats.running_mean);
    out.emplace_back(prefix + "." + bn_name + ".running_var", &stats.running_var);
  }
};

/// Basic two-convolution residual unit: relu(f(a) + shortcut(a)) with
/// f = conv3x3 -> bn -> relu -> conv3x3 -> bn. The shortcut is the identity
/// unless the block changes resolution or width, in which case it is a
/// 1x1 convolution + bn projection.
template <class T>
struct ResidualBlock {
  std::size_t in_width = 0;
  std::size_t out_width = 0;
  std::size_t stride = 1;
  ConvBn<T> branch1;
  ConvBn<T> branch2;
  std::optional<ConvBn<T>> projection;

  ResidualBlock() = default;
  ResidualBlock(const std::string& prefix, const std::string& group, std::size_t in,
                std::size_t out, std::size_t stride_, std::uint64_t seed)
      : in_width(in),
        out_width(out),
        stride(stride_),
        branch1(prefix, "conv1", "bn1", group, in, out, 3, stride_, 1, seed),
        branch2(prefix, "conv2", "bn2", group, out, out, 3, 1, 1, seed) {
    if (stride_ != 1 || in != out) {
      projection.emplace(prefix + ".proj", "conv", "bn", group, in, out, 1, stride_, 0, seed);
    }
  }

  nd::BasicTensor<T> forward(const nd::BasicTensor<T>& x, Mode mode) {
    if (x.rank() != 4 || x.dim(1) != in_width) {
      fail(ErrorKind::ShapeMismatch, "block expects " + std::to_string(in_width) +
                                         " channels, got " + nd::to_string(x.shape()));
    }
    auto h = nd::relu(branch1.forward(x, mode));
    h = branch2.forward(h, mode);
    auto shortcut = projection ? projection->forward(x, mode) : x;
    return nd::relu(nd::add(h, shortcut));
  }

  void collect(std::vector<nd::Parameter<T>>& out) const {
    branch1.collect(out);
    branch2.collect(out);
    if (projection) projection->collect(out);
  }

  void collect_buffers(std::vector<std::pair<std::string, std::vector<T>*>>& out) {
    branch1.collect_buffers(out);
    branch2.collect_buffers(out);
    if (projection) projection->collect_buffers(out);
  }
};

/// Shapes observed at the stage boundaries of one forward pass.
struct ForwardTrace {
  Shape stem;                 // after the 7x7 convolution
  Shape stem_pooled;          // after the maxpool (standard stem only)
  std::vector<Shape> stages;  // outputs of the four stages
  Shape pooled;               // after global average pooling
  Shape logits;
};

/// Freeze selection: everything except the classifier, or the stem (stage
/// 0) plus stages 1..k.
struct FreezeSelector {
  enum class Kind { AllButHead, StagesUpTo } kind = Kind::AllButHead;
  int max_stage = 4;

  static FreezeSelector all_but_head() { return {}; }
  static FreezeSelector stages_up_to(int k) { return {Kind::StagesUpTo, k}; }
  static FreezeSelector parse(std::string_view s) {
    if (s == "all_but_head") return all_but_head();
    constexpr std::string_view kPrefix = "stages<=";
    if (s.starts_with(kPrefix)) {
      const std::string rest(s.substr(kPrefix.size()));
      if (!rest.empty() && rest.find_first_not_of("0123456789") == std::string::npos) {
        return stages_up_to(std::stoi(rest));
      }
    }
    fail(ErrorKind::UnknownGroup, "unknown freeze selector '" + std::string(s) + "'");
  }
};

inline std::string stage_group(std::size_t stage) {
  return stage == 0 ? "stem" : "stage" + std::to_string(stage);
}
inline constexpr std::string_view kHeadGroup = "head";

/// ResNet34 over single- or multi-channel spectrogram images.
template <class T>
class ResNet {
 public:
  ResNet(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    stem_ = ConvBn<T>("stem", "conv", "bn", "stem", spec_.in_channels, spec_.stem_width(),
                      kStemKernel, 2, 3, seed);
    std::size_t in = spec_.stem_width();
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t out = spec_.stage_width(s);
      std::vector<ResidualBlock<T>> blocks;
      for (std::size_t b = 0; b < kStageBlocks[s]; ++b) {
        const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
        blocks.emplace_back(prefix, stage_group(s + 1), b == 0 ? in : out, out,
                            b == 0 ? spec_.stage_stride(s) : 1, seed);
      }
      stages_.push_back(std::move(blocks));
      in = out;
    }
    reset_head(spec_.n_classes, seed);
  }

  ResNet(ResNet&&) noexcept = default;
  ResNet& operator=(ResNet&&) noexcept = default;
  ResNet(const ResNet&) = delete;
  ResNet& operator=(const ResNet&) = delete;

  const ModelSpec& spec() const { return spec_; }
  const std::vector<std::string>& labels() const { return labels_; }
  void set_labels(std::vector<std::string> labels) { labels_ = std::move(labels); }

  /// Logits [N, n_classes] for input [N, C, H, W]. `dropout_seed` keys the
  /// train-mode dropout mask.
  nd::BasicTensor<T> forward(const nd::BasicTensor<T>& x, Mode mode,
                             std::uint64_t dropout_seed = 0, ForwardTrace* trace = nullptr) {
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
      fail(ErrorKind::ShapeMismatch, "model expects [N," + std::to_string(spec_.in_channels) +
                                         ",H,W], got " + nd::to_string(x.shape()));
    }
    auto h = nd::relu(stem_.forward(x, mode));
    if (trace) trace->stem = h.shape();
    if (spec_.stem == StemVariant::Standard) {
      h = nd::maxpool2d(h, 3, 2, 1);
      if (trace) trace->stem_pooled = h.shape();
    }
    for (auto& stage : stages_) {
      for (auto& block : stage) h = block.forward(h, mode);
      if (trace) trace->stages.push_back(h.shape());
    }
    h = nd::global_avg_pool(h);
    if (trace) trace->pooled = h.shape();
    h = nd::reshape(h, Shape{h.dim(0), h.dim(1)});
    h = nd::dropout(h, spec_.dropout_p, mode, dropout_seed);
    auto logits = nd::linear(h, head_weight_, head_bias_);
    if (trace) trace->logits = logits.shape();
    return logits;
  }

  std::vector<nd::Parameter<T>> parameters() const {
    std::vector<nd::Parameter<T>> out;
    stem_.collect(out);
    for (const auto& stage : stages_) {
      for (const auto& block : stage) block.collect(out);
    }
    out.push_back({"head.weight", std::string(kHeadGroup), head_weight_});
    out.push_back({"head.bias", std::string(kHeadGroup), head_bias_});
    return out;
  }

  /// Batch-norm running statistics by name.
  std::vector<std::pair<std::string, std::vector<T>*>> buffers() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    stem_.collect_buffers(out);
    for (auto& stage : stages_) {
      for (auto& block : stage) block.collect_buffers(out);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  ResidualBlock<T>& block(std::size_t stage, std::size_t index) { return stages_.at(stage).at(index); }
  std::size_t stage_size(std::size_t stage) const { return stages_.at(stage).size(); }

  void freeze(const FreezeSelector& sel) {
    std::vector<std::string> groups;
    if (sel.kind == FreezeSelector::Kind::AllButHead) {
      for (std::size_t s = 0; s <= 4; ++s) groups.push_back(stage_group(s));
    } else {
      if (sel.max_stage < 0 || sel.max_stage > 4) {
        fail(ErrorKind::UnknownGroup, "no stage " + std::to_string(sel.max_stage));
      }
      for (int s = 0; s <= sel.max_stage; ++s) groups.push_back(stage_group(static_cast<std::size_t>(s)));
    }
    freeze_groups(groups);
  }

  void freeze_groups(const std::vector<std::string>& groups) {
    const auto params = parameters();
    for (const auto& g : groups) {
      bool known = false;
      for (const auto& p : params) known = known || p.group == g;
      if (!known) fail(ErrorKind::UnknownGroup, "no parameter group '" + g + "'");
    }
    for (auto p : params) {
      for (const auto& g : groups) {
        if (p.group == g) p.tensor.set_requires_grad(false);
      }
    }
  }

  void unfreeze() {
    for (auto p : parameters()) p.tensor.set_requires_grad(true);
  }

  /// Installs a freshly initialized classifier for `n_classes`; the backbone
  /// is untouched.
  void replace_head(std::size_t n_classes, std::uint64_t seed,
                    std::vector<std::string> labels = {}) {
    if (n_classes < 2) fail(ErrorKind::InvalidArgument, "n_classes must be >= 2");
    spec_.n_classes = n_classes;
    reset_head(n_classes, seed);
    labels_ = std::move(labels);
  }

  void zero_grad() {
    for (auto p : parameters()) p.tensor.zero_grad();
  }

  /// Deep copy with identical values and freeze flags.
  ResNet clone() const {
    ResNet copy(spec_, 0);
    copy.labels_ = labels_;
    auto src = parameters();
    auto dst = copy.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.data().begin());
      dst[i].tensor.set_requires_grad(src[i].tensor.requires_grad());
    }
    auto sb = const_cast<ResNet*>(this)->buffers();
    auto db = copy.buffers();
    for (std::size_t i = 0; i < sb.size(); ++i) *db[i].second = *sb[i].second;
    return copy;
  }

 private:
  void reset_head(std::size_t n_classes, std::uint64_t seed) {
    const std::size_t d = spec_.feature_dim();
    head_weight_ = detail::he_uniform<T>(Shape{n_classes, d}, d, seed, "head.weight");
    head_bias_ = nd::BasicTensor<T>(Shape{n_classes}, true);
  }

  ModelSpec spec_;
  std::vector<std::string> labels_;
  ConvBn<T> stem_;
  std::vector<std::vector<ResidualBlock<T>>> stages_;
  nd::BasicTensor<T> head_weight_;
  nd::BasicTensor<T> head_bias_;
};

using Model = ResNet<float>;

/// Named copy of every parameter and running statistic.
template <class T>
struct ModelState {
  std::vector<std::pair<std::string, std::vector<T>>> tensors;

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

template <class T>
ModelState<T> snapshot(ResNet<T>& model) {
  ModelState<T> s;
  for (const auto& p : model.parameters()) {
    s.tensors.emplace_back(p.name, std::vector<T>(p.tensor.data().begin(), p.tensor.data().end()));
  }
  for (auto& [name, buf] : model.buffers()) s.tensors.emplace_back(name, *buf);
  return s;
}

template <class T>
void restore(ResNet<T>& model, const ModelState<T>& state) {
  std::size_t i = 0;
  for (auto p : model.parameters()) {
    const auto& [name, values] = state.tensors.at(i++);
    if (name != p.name || values.size() != p.tensor.numel()) {
      fail(ErrorKind::IncompatibleSpec, "state does not match parameter '" + p.name + "'");
    }
    std::copy(values.begin(), values.end(), p.tensor.data().begin());
  }
  for (auto& [name, buf] : model.buffers()) {
    const auto& [sname, values] = state.tensors.at(i++);
    if (sname != name || values.size() != buf->size()) {
      fail(ErrorKind::IncompatibleSpec, "state does not match buffer '" + name + "'");
    }
    *buf = values;
  }
}

// ---------------------------------------------------------------------------
// Analytic accounting

struct LayerCost {
  std::string name;
  double macs = 0.0;  // multiply-adds

  double flops() const { return 2.0 * macs; }
};

/// Multiply-adds of every convolution, including projection shortcuts, and
/// the classifier. Pooling, normalization and activations are not counted.
inline std::vector<LayerCost> layer_flops(const ModelSpec& spec) {
  std::vector<LayerCost> out;
  auto conv = [&](const std::string& name, std::size_t k, std::size_t cin, std::size_t cout,
                  std::size_t ho, std::size_t wo) {
    out.push_back({name, static_cast<double>(k * k * cin * cout * ho * wo)});
  };
  std::size_t h = detail::conv_out(spec.input_height, kStemKernel, 2, 3);
  std::size_t w = detail::conv_out(spec.input_width, kStemKernel, 2, 3);
  conv("stem.conv", kStemKernel, spec.in_channels, spec.stem_width(), h, w);
  if (spec.stem == StemVariant::Standard) {
    h = detail::conv_out(h, 3, 2, 1);
    w = detail::conv_out(w, 3, 2, 1);
  }
  std::size_t in = spec.stem_width();
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t out_w = spec.stage_width(s);
    for (std::size_t b = 0; b < kStageBlocks[s]; ++b) {
      const std::size_t stride = b == 0 ? spec.stage_stride(s) : 1;
      const std::size_t cin = b == 0 ? in : out_w;
      const std::size_t ho = detail::conv_out(h, 3, stride, 1);
      const std::size_t wo = detail::conv_out(w, 3, stride, 1);
      const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      conv(prefix + ".conv1", 3, cin, out_w, ho, wo);
      conv(prefix + ".conv2", 3, out_w, out_w, ho, wo);
      if (stride != 1 || cin != out_w) conv(prefix + ".proj.conv", 1, cin, out_w, ho, wo);
      h = ho;
      w = wo;
    }
    in = out_w;
  }
  out.push_back({"head", static_cast<double>(spec.feature_dim() * spec.n_classes)});
  return out;
}

/// Total multiply-adds of one forward pass on a single input.
inline double count_flops(const ModelSpec& spec) {
  double total = 0.0;
  for (const auto& l : layer_flops(spec)) total += l.macs;
  return total;
}

/// Trainable parameter count (conv weights, bn affine pairs, classifier).
inline std::size_t count_parameters(const ModelSpec& spec) {
  std::size_t n = kStemKernel * kStemKernel * spec.in_channels * spec.stem_width() +
                  2 * spec.stem_width();
  std::size_t in = spec.stem_width();
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t out = spec.stage_width(s);
    for (std::size_t b = 0; b < kStageBlocks[s]; ++b) {
      const std::size_t cin = b == 0 ? in : out;
      const std::size_t stride = b == 0 ? spec.stage_stride(s) : 1;
      n += 9 * cin * out + 2 * out + 9 * out * out + 2 * out;
      if (stride != 1 || cin != out) n += cin * out + 2 * out;
    }
    in = out;
  }
  return n + spec.feature_dim() * spec.n_classes + spec.n_classes;
}

}  // namespace sar::model

#endif  // SAR_MODEL_HPP
