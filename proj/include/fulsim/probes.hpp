#pragma once

// Active-testing probes: feature-space backdoor triggers, a loss-threshold
// membership-inference attack, and brute-force leave-one-out influence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "fulsim/errors.hpp"
#include "fulsim/learning.hpp"
#include "fulsim/rng.hpp"

namespace fulsim {

struct TriggerSpec {
  std::vector<std::size_t> trigger_indices;
  std::vector<double> trigger_values;
  int target_label = 0;
  double poison_fraction = 0.5;

  void validate(std::size_t dims, int num_classes) const {
    detail::require(!trigger_indices.empty(), "trigger needs at least one coordinate");
    detail::require(trigger_indices.size() == trigger_values.size(),
                    "trigger indices and values differ in length");
    for (auto i : trigger_indices) detail::require(i < dims, "trigger index out of range");
    for (double v : trigger_values) detail::require(std::isfinite(v), "trigger value not finite");
    detail::require(target_label >= 0 && target_label < num_classes, "trigger target label out of range");
    detail::require(poison_fraction > 0.0 && poison_fraction <= 1.0, "poison fraction must be in (0, 1]");
  }
};

inline void stamp_trigger(std::span<double> row, const TriggerSpec& trigger) {
  for (std::size_t k = 0; k < trigger.trigger_indices.size(); ++k) {
    row[trigger.trigger_indices[k]] = trigger.trigger_values[k];
  }
}

/// Stamps the trigger on round(poison_fraction·n) seed-selected samples and
/// relabels them to the target label. Other rows are untouched.
inline Dataset inject_backdoor(const Dataset& dataset, const TriggerSpec& trigger, std::uint64_t seed) {
  trigger.validate(dataset.dims(), dataset.num_classes);
  Dataset out = dataset;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, seed_tag::kPoison));
  rng.shuffle(std::span<std::size_t>(order));
  const auto count = static_cast<std::size_t>(
      std::llround(trigger.poison_fraction * static_cast<double>(dataset.size())));
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = order[k];
    stamp_trigger(out.features.row(i), trigger);
    out.labels[i] = trigger.target_label;
  }
  return out;
}

/// Fraction of triggered non-target-label samples classified as the target.
inline double backdoor_success_rate(const ModelParams& params, const Dataset& clean_test,
                                    const TriggerSpec& trigger) {
  trigger.validate(clean_test.dims(), clean_test.num_classes);
  Matrix triggered(0, clean_test.dims());
  for (std::size_t i = 0; i < clean_test.size(); ++i) {
    if (clean_test.labels[i] == trigger.target_label) continue;
    std::vector<double> row(clean_test.features.row(i).begin(), clean_test.features.row(i).end());
    stamp_trigger(row, trigger);
    triggered.append_row(row);
  }
  if (triggered.rows() == 0) throw InvalidArgument("no samples outside the trigger target label");
  const auto predicted = predict_labels(params, triggered);
  const auto hits = std::count(predicted.begin(), predicted.end(), trigger.target_label);
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

struct MiaResult {
  double attack_accuracy = 0.0;
  double auc = 0.0;
  double threshold = 0.0;
};

/// Threshold attack on precomputed per-sample losses. Predicts "member" iff
/// loss <= mean member loss; reports balanced accuracy and the probability
/// that a random member loss is below a random non-member loss (ties 1/2).
inline MiaResult mia_from_losses(std::span<const double> member_losses,
                                 std::span<const double> nonmember_losses) {
  detail::require(!member_losses.empty() && !nonmember_losses.empty(), "MIA needs both sets non-empty");
  MiaResult r;
  r.threshold = std::accumulate(member_losses.begin(), member_losses.end(), 0.0) /
                static_cast<double>(member_losses.size());
  const auto tp = std::count_if(member_losses.begin(), member_losses.end(),
                                [&](double l) { return l <= r.threshold; });
  const auto tn = std::count_if(nonmember_losses.begin(), nonmember_losses.end(),
                                [&](double l) { return l > r.threshold; });
  r.attack_accuracy = 0.5 * (static_cast<double>(tp) / static_cast<double>(member_losses.size()) +
                             static_cast<double>(tn) / static_cast<double>(nonmember_losses.size()));

  std::vector<double> sorted(nonmember_losses.begin(), nonmember_losses.end());
  std::sort(sorted.begin(), sorted.end());
  double wins = 0.0;
  for (double m : member_losses) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), m);
    const auto hi = std::upper_bound(lo, sorted.end(), m);
    wins += static_cast<double>(sorted.end() - hi) + 0.5 * static_cast<double>(hi - lo);
  }
  r.auc = wins / (static_cast<double>(member_losses.size()) * static_cast<double>(sorted.size()));
  return r;
}

inline MiaResult mia_loss_threshold(const ModelParams& params, const Dataset& members,
                                    const Dataset& nonmembers) {
  detail::require(!members.empty() && !nonmembers.empty(), "MIA needs both sets non-empty");
  detail::require(members.dims() == nonmembers.dims(), "MIA sets differ in feature dim");
  const auto ml = per_sample_losses(params, members);
  const auto nl = per_sample_losses(params, nonmembers);
  return mia_from_losses(ml, nl);
}

/// Centralized training job used as the leave-one-out oracle.
struct LooSetup {
  Arch arch;
  std::uint64_t init_seed = 0;
  Dataset data;
  TrainConfig config;
};

inline double mean_loss(const ModelParams& params, const Dataset& probe) {
  return evaluate(params, probe).mean_loss;
}

/// Mean probe loss of the model trained without `sample_id` minus that of
/// the model trained with it, same initialization and schedule.
inline double loo_influence(const LooSetup& setup, std::int64_t sample_id, const Dataset& probe_set) {
  const auto pos = setup.data.index_of(sample_id);
  if (pos < 0) throw NotFound("sample id " + std::to_string(sample_id) + " not in training data");
  detail::require(setup.data.size() >= 2, "leave-one-out needs at least two samples");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < setup.data.size(); ++i) {
    if (static_cast<std::ptrdiff_t>(i) != pos) keep.push_back(i);
  }
  const ModelParams init = init_params(setup.arch, setup.init_seed);
  const ModelParams with = train(init, setup.data, setup.config);
  const ModelParams without = train(init, setup.data.subset(keep), setup.config);
  return mean_loss(without, probe_set) - mean_loss(with, probe_set);
}

}  // namespace fulsim
