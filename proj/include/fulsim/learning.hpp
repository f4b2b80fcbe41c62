#pragma once

// Deterministic supervised-learning substrate: synthetic Gaussian class
// blobs, a softmax classifier with optional tanh hidden layers, and plain
// mini-batch SGD. Everything is binary64 and single-threaded so that the
// same inputs always produce the same bits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fulsim/errors.hpp"
#include "fulsim/rng.hpp"

namespace fulsim {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    detail::require(data_.size() == rows_ * cols_, "matrix data size does not match shape");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  void append_row(std::span<const double> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    detail::require(values.size() == cols_, "row width does not match matrix");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Labelled samples. Row i of `features` belongs to `labels[i]` and
/// `sample_ids[i]`.
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::int64_t> sample_ids;
  int num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dims() const noexcept { return features.cols(); }
  bool empty() const noexcept { return labels.empty(); }

  void validate() const {
    detail::require(num_classes > 0, "dataset needs a positive class count");
    detail::require(features.rows() == labels.size() && labels.size() == sample_ids.size(),
                    "dataset features/labels/sample_ids lengths differ");
    for (int y : labels) {
      detail::require(y >= 0 && y < num_classes, "dataset label out of range");
    }
    for (double v : features.data()) {
      detail::require(std::isfinite(v), "dataset contains a non-finite feature");
    }
    std::vector<std::int64_t> ids = sample_ids;
    std::sort(ids.begin(), ids.end());
    detail::require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(),
                    "dataset sample ids are not unique");
  }

  /// Rows at `indices`, in that order.
  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.num_classes = num_classes;
    out.features = Matrix(0, dims());
    for (std::size_t i : indices) {
      detail::require(i < size(), "subset index out of range");
      out.features.append_row(features.row(i));
      out.labels.push_back(labels[i]);
      out.sample_ids.push_back(sample_ids[i]);
    }
    return out;
  }

  std::ptrdiff_t index_of(std::int64_t sample_id) const {
    auto it = std::find(sample_ids.begin(), sample_ids.end(), sample_id);
    return it == sample_ids.end() ? -1 : std::distance(sample_ids.begin(), it);
  }

  bool operator==(const Dataset&) const = default;
};

/// Stacks datasets with equal width and class count.
inline Dataset concat(std::span<const Dataset> parts) {
  Dataset out;
  detail::require(!parts.empty(), "concat of zero datasets");
  out.num_classes = parts.front().num_classes;
  out.features = Matrix(0, parts.front().dims());
  for (const auto& d : parts) {
    detail::require(d.dims() == out.dims() && d.num_classes == out.num_classes,
                    "concat of incompatible datasets");
    for (std::size_t i = 0; i < d.size(); ++i) {
      out.features.append_row(d.features.row(i));
      out.labels.push_back(d.labels[i]);
      out.sample_ids.push_back(d.sample_ids[i]);
    }
  }
  return out;
}

/// Deterministically moves round(fraction * n) rows into a holdout split.
/// Returns {train, holdout}.
inline std::pair<Dataset, Dataset> split_holdout(const Dataset& data, double fraction,
                                                 std::uint64_t seed) {
  detail::require(fraction >= 0.0 && fraction < 1.0, "holdout fraction must be in [0, 1)");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, seed_tag::kHoldout));
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_hold = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> keep(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());
  std::sort(hold.begin(), hold.end());
  std::sort(keep.begin(), keep.end());
  return {data.subset(keep), data.subset(hold)};
}

// ---------------------------------------------------------------------------
// Model

/// Layer widths: input, hidden..., output.
using Arch = std::vector<std::size_t>;

inline void validate_arch(const Arch& arch) {
  detail::require(arch.size() >= 2, "architecture needs at least an input and an output layer");
  for (auto d : arch) detail::require(d > 0, "architecture dims must be positive");
  detail::require(arch.back() >= 2, "architecture needs at least two output classes");
}

/// Σ over layers of fan_in·fan_out + fan_out.
inline std::size_t param_count(const Arch& arch) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) n += arch[l] * arch[l + 1] + arch[l + 1];
  return n;
}

/// Architecture plus flat coefficients. Layer l stores its weight matrix
/// (fan_in x fan_out, row-major) followed by its fan_out biases.
struct ModelParams {
  Arch arch;
  std::vector<double> coefficients;

  std::size_t input_dim() const { return arch.front(); }
  std::size_t num_classes() const { return arch.back(); }
  std::size_t num_layers() const { return arch.size() - 1; }

  void validate() const {
    validate_arch(arch);
    detail::require(coefficients.size() == param_count(arch),
                    "coefficient count does not match architecture");
    for (double c : coefficients) detail::require(std::isfinite(c), "non-finite coefficient");
  }

  bool operator==(const ModelParams&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 1;
  double learning_rate = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  // A zero learning rate is accepted and turns training into a no-op.
  void validate() const {
    detail::require(epochs >= 1, "epochs must be >= 1");
    detail::require(std::isfinite(learning_rate) && learning_rate >= 0.0,
                    "learning rate must be finite and non-negative");
    detail::require(batch_size >= 1, "batch size must be >= 1");
  }
};

struct EvalMetrics {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

inline ModelParams init_params(const Arch& arch, std::uint64_t seed) {
  validate_arch(arch);
  ModelParams p{arch, std::vector<double>(param_count(arch), 0.0)};
  Rng rng(derive_seed(seed, seed_tag::kInit));
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(arch[l]));
    const std::size_t nw = arch[l] * arch[l + 1];
    for (std::size_t k = 0; k < nw; ++k) p.coefficients[off + k] = scale * rng.normal();
    off += nw;
    for (std::size_t k = 0; k < arch[l + 1]; ++k) p.coefficients[off + k] = scale * rng.normal();
    off += arch[l + 1];
  }
  return p;
}

namespace detail {

inline constexpr double kProbFloor = 1e-12;

struct LayerView {
  std::size_t fan_in;
  std::size_t fan_out;
  std::size_t weight_offset;
  std::size_t bias_offset;
};

inline std::vector<LayerView> layer_views(const Arch& arch) {
  std::vector<LayerView> out;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    out.push_back({arch[l], arch[l + 1], off, off + arch[l] * arch[l + 1]});
    off += arch[l] * arch[l + 1] + arch[l + 1];
  }
  return out;
}

/// Activations of one sample: acts[0] is the input, acts[L] the logits.
inline void forward_sample(const ModelParams& p, const std::vector<LayerView>& layers,
                           std::span<const double> x, std::vector<std::vector<double>>& acts) {
  acts.resize(layers.size() + 1);
  acts[0].assign(x.begin(), x.end());
  const auto& c = p.coefficients;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    auto& out = acts[l + 1];
    out.assign(c.begin() + static_cast<std::ptrdiff_t>(L.bias_offset),
               c.begin() + static_cast<std::ptrdiff_t>(L.bias_offset + L.fan_out));
    const auto& in = acts[l];
    for (std::size_t i = 0; i < L.fan_in; ++i) {
      const double a = in[i];
      const double* w = c.data() + L.weight_offset + i * L.fan_out;
      for (std::size_t j = 0; j < L.fan_out; ++j) out[j] += a * w[j];
    }
    if (l + 1 < layers.size()) {
      for (auto& v : out) v = std::tanh(v);
    }
  }
}

/// In-place softmax of logits; returns log-sum-exp shift for log-probs.
inline double softmax_inplace(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (auto& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (auto& v : z) v /= s;
  return m + std::log(s);
}

inline double sample_loss(double logit_y, double lse) {
  const double logp = logit_y - lse;
  return -std::max(logp, std::log(kProbFloor));
}

inline void check_input(const ModelParams& p, std::size_t dims) {
  p.validate();
  detail::require(dims == p.input_dim(), "feature dim does not match model input dim");
}

}  // namespace detail

/// Row-wise class probabilities.
inline Matrix predict_proba(const ModelParams& params, const Matrix& features) {
  detail::check_input(params, features.cols());
  const auto layers = detail::layer_views(params.arch);
  Matrix out(features.rows(), params.num_classes());
  std::vector<std::vector<double>> acts;
  for (std::size_t r = 0; r < features.rows(); ++r) {
    detail::forward_sample(params, layers, features.row(r), acts);
    auto& z = acts.back();
    detail::softmax_inplace(z);
    std::copy(z.begin(), z.end(), out.row(r).begin());
  }
  return out;
}

/// Penultimate-layer activations; the raw features for softmax regression.
inline Matrix hidden_representation(const ModelParams& params, const Matrix& features) {
  detail::check_input(params, features.cols());
  if (params.num_layers() == 1) return features;
  const auto layers = detail::layer_views(params.arch);
  const std::size_t width = params.arch[params.arch.size() - 2];
  Matrix out(features.rows(), width);
  std::vector<std::vector<double>> acts;
  for (std::size_t r = 0; r < features.rows(); ++r) {
    detail::forward_sample(params, layers, features.row(r), acts);
    const auto& h = acts[acts.size() - 2];
    std::copy(h.begin(), h.end(), out.row(r).begin());
  }
  return out;
}

inline std::vector<int> predict_labels(const ModelParams& params, const Matrix& features) {
  const Matrix probs = predict_proba(params, features);
  std::vector<int> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

/// Cross-entropy of every sample, probability clamped at 1e-12.
inline std::vector<double> per_sample_losses(const ModelParams& params, const Dataset& data) {
  detail::check_input(params, data.dims());
  const auto layers = detail::layer_views(params.arch);
  std::vector<double> out(data.size());
  std::vector<std::vector<double>> acts;
  for (std::size_t r = 0; r < data.size(); ++r) {
    detail::forward_sample(params, layers, data.features.row(r), acts);
    auto z = acts.back();
    const double logit_y = z[static_cast<std::size_t>(data.labels[r])];
    const double lse = detail::softmax_inplace(z);
    out[r] = detail::sample_loss(logit_y, lse);
  }
  return out;
}

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

namespace detail {

inline LossAndGrad loss_and_grad_rows(const ModelParams& p, const std::vector<LayerView>& layers,
                                      const Dataset& data, std::span<const std::size_t> rows) {
  LossAndGrad out{0.0, std::vector<double>(p.coefficients.size(), 0.0)};
  std::vector<std::vector<double>> acts;
  std::vector<double> delta, prev;
  const auto& c = p.coefficients;
  for (std::size_t r : rows) {
    forward_sample(p, layers, data.features.row(r), acts);
    auto& z = acts.back();
    const auto y = static_cast<std::size_t>(data.labels[r]);
    const double logit_y = z[y];
    const double lse = softmax_inplace(z);
    out.loss += sample_loss(logit_y, lse);
    delta = z;
    delta[y] -= 1.0;
    for (std::size_t l = layers.size(); l-- > 0;) {
      const auto& L = layers[l];
      const auto& in = acts[l];
      for (std::size_t i = 0; i < L.fan_in; ++i) {
        double* g = out.grad.data() + L.weight_offset + i * L.fan_out;
        for (std::size_t j = 0; j < L.fan_out; ++j) g[j] += in[i] * delta[j];
      }
      for (std::size_t j = 0; j < L.fan_out; ++j) out.grad[L.bias_offset + j] += delta[j];
      if (l == 0) break;
      prev.assign(L.fan_in, 0.0);
      for (std::size_t i = 0; i < L.fan_in; ++i) {
        const double* w = c.data() + L.weight_offset + i * L.fan_out;
        double s = 0.0;
        for (std::size_t j = 0; j < L.fan_out; ++j) s += w[j] * delta[j];
        prev[i] = s * (1.0 - in[i] * in[i]);
      }
      delta.swap(prev);
    }
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  out.loss *= inv;
  for (auto& g : out.grad) g *= inv;
  return out;
}

}  // namespace detail

/// Mean cross-entropy over `batch` and its gradient w.r.t. the coefficients.
inline LossAndGrad loss_and_grad(const ModelParams& params, const Dataset& batch) {
  detail::require(!batch.empty(), "loss_and_grad on an empty batch");
  detail::check_input(params, batch.dims());
  std::vector<std::size_t> rows(batch.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return detail::loss_and_grad_rows(params, detail::layer_views(params.arch), batch, rows);
}

inline EvalMetrics evaluate(const ModelParams& params, const Dataset& data) {
  detail::require(!data.empty(), "evaluate on an empty dataset");
  detail::check_input(params, data.dims());
  const auto layers = detail::layer_views(params.arch);
  std::vector<std::vector<double>> acts;
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    detail::forward_sample(params, layers, data.features.row(r), acts);
    auto z = acts.back();
    const auto y = static_cast<std::size_t>(data.labels[r]);
    const auto argmax = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    if (argmax == y) ++correct;
    const double logit_y = z[y];
    loss += detail::sample_loss(logit_y, detail::softmax_inplace(z));
  }
  const auto n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, loss / n};
}

struct TrainTrace {
  ModelParams params;
  /// Mean training loss on the full dataset after each epoch.
  std::vector<double> epoch_losses;
};

namespace detail {

template <typename OnEpoch>
ModelParams train_impl(ModelParams params, const Dataset& data, const TrainConfig& cfg,
                       OnEpoch&& on_epoch) {
  detail::require(!data.empty(), "train on an empty dataset");
  cfg.validate();
  detail::check_input(params, data.dims());
  const auto layers = layer_views(params.arch);
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, seed_tag::kShuffle, epoch));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const auto step = loss_and_grad_rows(params, layers, data,
                                           std::span<const std::size_t>(order).subspan(start, len));
      for (std::size_t k = 0; k < params.coefficients.size(); ++k) {
        params.coefficients[k] -= cfg.learning_rate * step.grad[k];
      }
    }
    on_epoch(params);
  }
  return params;
}

}  // namespace detail

/// Mini-batch SGD. Batch order for epoch e is a permutation seeded by
/// (cfg.seed, e).
inline ModelParams train(ModelParams params, const Dataset& data, const TrainConfig& cfg) {
  return detail::train_impl(std::move(params), data, cfg, [](const ModelParams&) {});
}

inline TrainTrace train_traced(ModelParams params, const Dataset& data, const TrainConfig& cfg) {
  TrainTrace trace;
  trace.params = detail::train_impl(std::move(params), data, cfg, [&](const ModelParams& p) {
    trace.epoch_losses.push_back(evaluate(p, data).mean_loss);
  });
  return trace;
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class LabelSkew {
  kNone,      // every client holds all classes, balanced
  kDisjoint,  // client k holds only class k mod num_classes
};

struct SyntheticSpec {
  std::size_t num_clients = 10;
  std::size_t num_classes = 2;
  std::size_t num_features = 10;
  std::size_t samples_per_client = 1000;
  double class_mean_separation = 6.0;
  double noise_std = 1.0;
  double heterogeneity_shift = 0.0;
  LabelSkew label_skew = LabelSkew::kNone;

  void validate() const {
    detail::require(num_clients > 0 && samples_per_client > 0, "synthetic counts must be positive");
    detail::require(num_classes >= 2, "synthetic data needs at least two classes");
    detail::require(num_features >= num_classes, "need at least as many features as classes");
    detail::require(noise_std > 0.0 && std::isfinite(noise_std), "noise_std must be positive");
    detail::require(class_mean_separation >= 0.0 && std::isfinite(class_mean_separation),
                    "class separation must be finite and non-negative");
    detail::require(heterogeneity_shift >= 0.0 && std::isfinite(heterogeneity_shift),
                    "heterogeneity shift must be finite and non-negative");
  }
};

/// Per-client Gaussian blobs. Class c is centred on (sep/sqrt 2)·e_c so any
/// two anchors are `class_mean_separation` apart; client k adds its own
/// shift vector heterogeneity_shift·N(0, I) to every class mean.
inline std::vector<Dataset> make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const double anchor = spec.class_mean_separation / std::sqrt(2.0);
  std::vector<Dataset> clients;
  clients.reserve(spec.num_clients);
  for (std::size_t k = 0; k < spec.num_clients; ++k) {
    Rng rng(derive_seed(seed, seed_tag::kData, k));
    std::vector<double> shift(spec.num_features);
    for (auto& s : shift) s = spec.heterogeneity_shift * rng.normal();
    Dataset d;
    d.num_classes = static_cast<int>(spec.num_classes);
    d.features = Matrix(spec.samples_per_client, spec.num_features);
    for (std::size_t i = 0; i < spec.samples_per_client; ++i) {
      const std::size_t label = spec.label_skew == LabelSkew::kDisjoint ? k % spec.num_classes
                                                                        : i % spec.num_classes;
      auto row = d.features.row(i);
      for (std::size_t f = 0; f < spec.num_features; ++f) {
        const double mean = (f == label ? anchor : 0.0) + shift[f];
        row[f] = mean + spec.noise_std * rng.normal();
      }
      d.labels.push_back(static_cast<int>(label));
      d.sample_ids.push_back(static_cast<std::int64_t>(k * spec.samples_per_client + i));
    }
    clients.push_back(std::move(d));
  }
  return clients;
}

}  // namespace fulsim
