#pragma once

// Unlearning lifecycle: request state machine, simulated consensus, the
// exact retrain benchmark, gradient-ascent unlearning with recovery rounds,
// and rollback of revoked requests from the checkpoint store.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fulsim/digest.hpp"
#include "fulsim/errors.hpp"
#include "fulsim/federation.hpp"
#include "fulsim/learning.hpp"
#include "fulsim/ledger.hpp"

namespace fulsim {

/// Simulated duration of each phase of one request.
struct PhaseTimings {
  double consensus = 0.0;
  double execution = 0.0;
  double aggregation = 0.0;
  double verification = 0.0;

  double total() const { return consensus + execution + aggregation + verification; }

  void validate() const {
    for (double v : {consensus, execution, aggregation, verification}) {
      detail::require(std::isfinite(v) && v >= 0.0, "phase timings must be finite and >= 0");
    }
  }

  bool operator==(const PhaseTimings&) const = default;
};

enum class UnlearnMode { kExactRetrain, kGradientAscent };

inline std::string_view to_string(UnlearnMode m) {
  return m == UnlearnMode::kExactRetrain ? "exact_retrain" : "gradient_ascent";
}

inline std::optional<UnlearnMode> parse_unlearn_mode(std::string_view s) {
  if (s == "exact_retrain") return UnlearnMode::kExactRetrain;
  if (s == "gradient_ascent") return UnlearnMode::kGradientAscent;
  return std::nullopt;
}

enum class RequestStatus { kPending, kConsensusReached, kExecuted, kVerified, kRevoked, kRestored };

inline std::string_view to_string(RequestStatus s) {
  switch (s) {
    case RequestStatus::kPending: return "pending";
    case RequestStatus::kConsensusReached: return "consensus_reached";
    case RequestStatus::kExecuted: return "executed";
    case RequestStatus::kVerified: return "verified";
    case RequestStatus::kRevoked: return "revoked";
    case RequestStatus::kRestored: return "restored";
  }
  return "?";
}

inline bool is_legal_transition(RequestStatus from, RequestStatus to) {
  using S = RequestStatus;
  switch (from) {
    case S::kPending: return to == S::kConsensusReached;
    case S::kConsensusReached: return to == S::kExecuted;
    case S::kExecuted: return to == S::kVerified || to == S::kRevoked;
    case S::kVerified: return to == S::kRevoked;
    case S::kRevoked: return to == S::kRestored;
    case S::kRestored: return false;
  }
  return false;
}

/// GDPR's "within one month" expressed in simulated days.
inline constexpr double kDefaultDeadlineDays = 30.0;

inline double default_deadline(double time_units_per_day) {
  detail::require(time_units_per_day > 0.0, "time units per day must be positive");
  return kDefaultDeadlineDays * time_units_per_day;
}

struct UnlearningRequest {
  int request_id = 0;
  std::vector<int> target_client_ids;
  /// Sample-level request when non-empty: only these samples of the target
  /// clients are forgotten, the rest of those clients stay in training.
  std::vector<std::int64_t> target_sample_ids;
  double submitted_at = 0.0;
  double deadline = default_deadline(86400.0);
  UnlearnMode mode = UnlearnMode::kExactRetrain;
  RequestStatus status = RequestStatus::kPending;

  bool sample_level() const { return !target_sample_ids.empty(); }

  void advance(RequestStatus next) {
    if (!is_legal_transition(status, next)) {
      throw StateError("request " + std::to_string(request_id) + ": illegal transition " +
                       std::string(to_string(status)) + " -> " + std::string(to_string(next)));
    }
    status = next;
  }
};

struct UnlearnConfig {
  std::size_t ascent_steps = 20;
  double ascent_lr = 0.5;
  double grad_clip_norm = 1.0;
  std::size_t recovery_rounds = 2;
  /// Local training used by the recovery rounds.
  TrainConfig retrain;

  void validate() const {
    detail::require(std::isfinite(ascent_lr) && ascent_lr > 0.0, "ascent_lr must be positive");
    detail::require(grad_clip_norm > 0.0, "grad_clip_norm must be positive");
    retrain.validate();
  }
};

struct UnlearningOutcome {
  ModelParams unlearned_params;
  std::string pre_unlearning_digest;
  std::string post_unlearning_digest;
  PhaseTimings timings;
  std::string algorithm_id;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------

struct ExecutionPlan {
  std::string executor = "service_provider";
  std::string algorithm_id;
};

struct ConsensusResult {
  ExecutionPlan plan;
  double consensus_time = 0.0;
};

/// The server executes and the algorithm is the one the request asked for.
/// Costs one broadcast plus one acknowledgement per client.
inline ConsensusResult consensus_phase(UnlearningRequest& request, const FederationState& state,
                                       const CostModel& cost_model) {
  if (request.status != RequestStatus::kPending) {
    throw StateError("request " + std::to_string(request.request_id) + " is not pending");
  }
  cost_model.validate();
  ConsensusResult out;
  out.plan.algorithm_id = std::string(to_string(request.mode));
  out.consensus_time =
      2.0 * static_cast<double>(state.clients.size()) * cost_model.time_per_consensus_message;
  request.advance(RequestStatus::kConsensusReached);
  return out;
}

/// Target data and retained clients for a request against the registry.
struct TargetSplit {
  Dataset target_data;
  std::vector<ClientState> retained;
};

inline TargetSplit split_targets(const FederationState& state, const UnlearningRequest& request) {
  detail::require(!request.target_client_ids.empty(), "request has no target clients");
  const std::set<int> targets(request.target_client_ids.begin(), request.target_client_ids.end());
  for (int id : targets) {
    if (!state.has_client(id)) throw NotFound("request targets unknown client " + std::to_string(id));
  }
  std::set<std::int64_t> wanted(request.target_sample_ids.begin(), request.target_sample_ids.end());
  std::vector<Dataset> target_parts;
  TargetSplit out;
  for (const auto& c : state.clients) {
    if (!targets.count(c.client_id)) {
      out.retained.push_back(c);
      out.retained.back().is_target = false;
      out.retained.back().is_remaining = true;
      continue;
    }
    if (!request.sample_level()) {
      target_parts.push_back(*c.dataset);
      continue;
    }
    std::vector<std::size_t> forget, keep;
    for (std::size_t i = 0; i < c.dataset->size(); ++i) {
      if (wanted.erase(c.dataset->sample_ids[i])) {
        forget.push_back(i);
      } else {
        keep.push_back(i);
      }
    }
    if (!forget.empty()) target_parts.push_back(c.dataset->subset(forget));
    if (!keep.empty()) {
      ClientState rest = c;
      rest.dataset = std::make_shared<const Dataset>(c.dataset->subset(keep));
      rest.sample_count = keep.size();
      rest.is_target = true;
      rest.is_remaining = false;
      out.retained.push_back(std::move(rest));
    }
  }
  if (!wanted.empty()) {
    throw NotFound("request names sample id " + std::to_string(*wanted.begin()) +
                   " not held by its target clients");
  }
  detail::require(!target_parts.empty(), "request selects no target data");
  out.target_data = concat(target_parts);
  return out;
}

namespace detail {

inline void accumulate_round_costs(const FederationState& trained, std::size_t from_round,
                                   PhaseTimings& t) {
  for (const auto& cp : trained.round_checkpoints) {
    if (cp.round_index <= from_round) continue;
    t.execution += cp.compute_time;
    t.aggregation += cp.aggregation_time;
  }
}

}  // namespace detail

/// Exact unlearning: re-initialize from the schedule seed and repeat the
/// whole federated schedule on the retained clients only.
inline UnlearningOutcome retrain_from_scratch(const ModelParams& pre_params,
                                              std::vector<ClientState> retained_clients,
                                              const Arch& arch, const FederatedSchedule& schedule,
                                              const CostModel& cost_model) {
  if (retained_clients.empty()) throw InvalidArgument("retrain needs at least one retained client");
  const auto trained = train_from_scratch(std::move(retained_clients), arch, schedule, cost_model);
  UnlearningOutcome out;
  out.unlearned_params = trained.global_params;
  out.pre_unlearning_digest = params_digest(pre_params);
  out.post_unlearning_digest = params_digest(out.unlearned_params);
  detail::accumulate_round_costs(trained, 0, out.timings);
  out.algorithm_id = std::string(to_string(UnlearnMode::kExactRetrain));
  out.seed = schedule.local.seed;
  return out;
}

/// Approximate unlearning: clipped gradient ascent on the target loss, then
/// `recovery_rounds` FedAvg rounds on the retained clients.
inline UnlearningOutcome gradient_ascent_unlearn(const ModelParams& pre_params,
                                                 const Dataset& target_data,
                                                 const std::vector<ClientState>& retained_clients,
                                                 const UnlearnConfig& config,
                                                 const CostModel& cost_model) {
  if (target_data.empty()) throw InvalidArgument("gradient ascent needs target data");
  config.validate();
  cost_model.validate();
  ModelParams params = pre_params;
  for (std::size_t step = 0; step < config.ascent_steps; ++step) {
    const auto lg = loss_and_grad(params, target_data);
    double norm_sq = 0.0;
    for (double g : lg.grad) norm_sq += g * g;
    const double norm = std::sqrt(norm_sq);
    const double scale = norm > config.grad_clip_norm ? config.grad_clip_norm / norm : 1.0;
    for (std::size_t k = 0; k < params.coefficients.size(); ++k) {
      params.coefficients[k] += config.ascent_lr * scale * lg.grad[k];
    }
  }
  UnlearningOutcome out;
  out.timings.execution = static_cast<double>(config.ascent_steps) *
                          static_cast<double>(target_data.size()) *
                          cost_model.time_per_local_epoch_per_sample;
  if (config.recovery_rounds > 0) {
    detail::require(!retained_clients.empty(), "recovery rounds need retained clients");
    FederatedSchedule recovery{config.retrain, config.recovery_rounds, 1.0};
    recovery.local.seed = derive_seed(config.retrain.seed, seed_tag::kRecovery);
    auto state = make_federation(retained_clients, params);
    state = train_federation(std::move(state), recovery, cost_model);
    detail::accumulate_round_costs(state, 0, out.timings);
    params = std::move(state.global_params);
  }
  out.unlearned_params = std::move(params);
  out.pre_unlearning_digest = params_digest(pre_params);
  out.post_unlearning_digest = params_digest(out.unlearned_params);
  out.algorithm_id = std::string(to_string(UnlearnMode::kGradientAscent));
  out.seed = config.retrain.seed;
  return out;
}

struct RestoreResult {
  ModelParams restored_params;
  double restoration_time = 0.0;
};

/// Rolls a revoked request back to its pre-unlearning snapshot. A missing or
/// corrupted snapshot is a ReversibilityError; the request is then left in
/// the revoked state.
inline RestoreResult revoke_and_restore(UnlearningRequest& request, const CheckpointStore& store,
                                        const std::string& pre_unlearning_digest,
                                        const CostModel& cost_model) {
  if (request.status != RequestStatus::kExecuted && request.status != RequestStatus::kVerified) {
    throw StateError("request " + std::to_string(request.request_id) +
                     " cannot be revoked from state " + std::string(to_string(request.status)));
  }
  request.advance(RequestStatus::kRevoked);
  RestoreResult out;
  try {
    out.restored_params = store.load(pre_unlearning_digest);
  } catch (const NotFound&) {
    throw ReversibilityError("pre-unlearning checkpoint " + pre_unlearning_digest + " is missing");
  } catch (const IntegrityError& e) {
    throw ReversibilityError(std::string("pre-unlearning checkpoint unusable: ") + e.what());
  }
  if (params_digest(out.restored_params) != pre_unlearning_digest) {
    throw ReversibilityError("restored model does not match the pre-unlearning digest");
  }
  out.restoration_time = cost_model.time_per_aggregation;
  request.advance(RequestStatus::kRestored);
  return out;
}

}  // namespace fulsim
