#pragma once

// Federated training on a single simulated timeline: client registry,
// local SGD updates sent as deltas, FedAvg aggregation, a per-round
// checkpoint, and a clock advanced by a cost model.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fulsim/digest.hpp"
#include "fulsim/errors.hpp"
#include "fulsim/learning.hpp"
#include "fulsim/rng.hpp"

namespace fulsim {

/// Simulated durations. Units are arbitrary but shared by every field.
struct CostModel {
  double time_per_local_epoch_per_sample = 0.001;
  double time_per_aggregation = 1.0;
  double time_per_consensus_message = 0.05;
  double time_per_proof = 5.0;
  double time_per_metric_eval = 0.5;

  void validate() const {
    for (double v : {time_per_local_epoch_per_sample, time_per_aggregation,
                     time_per_consensus_message, time_per_proof, time_per_metric_eval}) {
      detail::require(std::isfinite(v) && v >= 0.0, "cost model entries must be finite and >= 0");
    }
  }
};

struct ClientState {
  int client_id = 0;
  std::shared_ptr<const Dataset> dataset;
  /// Fixed held-out split used for exclusivity measurements; may be null.
  std::shared_ptr<const Dataset> test_split;
  std::size_t sample_count = 0;
  bool is_target = false;
  bool is_remaining = true;
};

inline ClientState make_client(int id, Dataset train, Dataset test = {}) {
  train.validate();
  ClientState c;
  c.client_id = id;
  c.sample_count = train.size();
  c.dataset = std::make_shared<const Dataset>(std::move(train));
  if (!test.empty()) c.test_split = std::make_shared<const Dataset>(std::move(test));
  return c;
}

struct RoundCheckpoint {
  std::size_t round_index = 0;
  std::string digest;
  ModelParams params;
  double compute_time = 0.0;      // slowest participant
  double aggregation_time = 0.0;
};

struct FederationState {
  std::size_t round_index = 0;
  ModelParams global_params;
  std::vector<ClientState> clients;  // ascending client_id
  double clock = 0.0;
  std::vector<RoundCheckpoint> round_checkpoints;

  const ClientState& client(int id) const {
    auto it = std::find_if(clients.begin(), clients.end(),
                           [id](const ClientState& c) { return c.client_id == id; });
    if (it == clients.end()) throw NotFound("unknown client id " + std::to_string(id));
    return *it;
  }

  bool has_client(int id) const {
    return std::any_of(clients.begin(), clients.end(),
                       [id](const ClientState& c) { return c.client_id == id; });
  }

  std::vector<int> client_ids() const {
    std::vector<int> ids;
    for (const auto& c : clients) ids.push_back(c.client_id);
    return ids;
  }
};

inline FederationState make_federation(std::vector<ClientState> clients, ModelParams initial) {
  initial.validate();
  std::sort(clients.begin(), clients.end(),
            [](const ClientState& a, const ClientState& b) { return a.client_id < b.client_id; });
  for (std::size_t i = 1; i < clients.size(); ++i) {
    detail::require(clients[i - 1].client_id != clients[i].client_id, "duplicate client id");
  }
  FederationState s;
  s.global_params = std::move(initial);
  s.clients = std::move(clients);
  return s;
}

struct LocalUpdate {
  std::vector<double> delta;
  double cost = 0.0;
};

/// Trains a copy of the global model on the client's data and returns
/// trained − global together with epochs·samples·rate simulated time.
inline LocalUpdate local_update(const ClientState& client, const ModelParams& global_params,
                                const TrainConfig& config, const CostModel& cost_model) {
  detail::require(client.dataset && !client.dataset->empty(), "local update on an empty client");
  const ModelParams trained = train(global_params, *client.dataset, config);
  LocalUpdate out;
  out.delta.resize(trained.coefficients.size());
  for (std::size_t k = 0; k < out.delta.size(); ++k) {
    out.delta[k] = trained.coefficients[k] - global_params.coefficients[k];
  }
  out.cost = static_cast<double>(config.epochs) * static_cast<double>(client.dataset->size()) *
             cost_model.time_per_local_epoch_per_sample;
  return out;
}

/// Weighted mean of the updates, weights normalized to sum to one.
inline std::vector<double> fedavg(std::span<const std::vector<double>> updates,
                                  std::span<const double> weights) {
  detail::require(!updates.empty(), "fedavg of zero updates");
  detail::require(updates.size() == weights.size(), "fedavg needs one weight per update");
  const std::size_t n = updates.front().size();
  double total = 0.0;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    detail::require(updates[i].size() == n, "fedavg update shapes differ");
    detail::require(std::isfinite(weights[i]) && weights[i] > 0.0, "fedavg weights must be positive");
    total += weights[i];
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const double w = weights[i] / total;
    for (std::size_t k = 0; k < n; ++k) out[k] += w * updates[i][k];
  }
  return out;
}

/// Per-client local training config for one round.
inline TrainConfig local_config_for(const TrainConfig& base, std::size_t round, int client_id) {
  TrainConfig c = base;
  c.seed = derive_seed(base.seed, seed_tag::kLocal, round, static_cast<std::uint64_t>(client_id));
  return c;
}

/// One FedAvg round over `participant_ids`. Clients run in parallel on the
/// simulated clock, so the round costs the slowest client plus one
/// aggregation.
inline FederationState run_round(FederationState state, std::span<const int> participant_ids,
                                 const TrainConfig& config, const CostModel& cost_model) {
  detail::require(!participant_ids.empty(), "round needs at least one participant");
  config.validate();
  cost_model.validate();
  std::vector<int> ids(participant_ids.begin(), participant_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  std::vector<std::vector<double>> updates;
  std::vector<double> weights;
  double slowest = 0.0;
  for (int id : ids) {
    const ClientState& client = state.client(id);
    auto u = local_update(client, state.global_params,
                          local_config_for(config, state.round_index, id), cost_model);
    slowest = std::max(slowest, u.cost);
    updates.push_back(std::move(u.delta));
    weights.push_back(static_cast<double>(client.sample_count));
  }
  const auto avg = fedavg(updates, weights);
  for (std::size_t k = 0; k < avg.size(); ++k) state.global_params.coefficients[k] += avg[k];

  state.round_index += 1;
  state.clock += slowest + cost_model.time_per_aggregation;
  state.round_checkpoints.push_back({state.round_index, params_digest(state.global_params),
                                     state.global_params, slowest, cost_model.time_per_aggregation});
  return state;
}

struct FederatedSchedule {
  TrainConfig local;
  std::size_t rounds = 20;
  double participation_fraction = 1.0;

  void validate() const {
    local.validate();
    detail::require(rounds >= 1, "federated schedule needs at least one round");
    detail::require(participation_fraction > 0.0 && participation_fraction <= 1.0,
                    "participation fraction must be in (0, 1]");
  }
};

/// Participants of the state's next round under the schedule's sampling knob.
inline std::vector<int> round_participants(const FederationState& state,
                                           const FederatedSchedule& schedule) {
  std::vector<int> ids = state.client_ids();
  if (schedule.participation_fraction >= 1.0) return ids;
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(schedule.participation_fraction * static_cast<double>(ids.size()))));
  Rng rng(derive_seed(schedule.local.seed, seed_tag::kSample, state.round_index));
  rng.shuffle(std::span<int>(ids));
  ids.resize(std::min(k, ids.size()));
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline FederationState train_federation(FederationState state, const FederatedSchedule& schedule,
                                        const CostModel& cost_model) {
  schedule.validate();
  detail::require(!state.clients.empty(), "federation has no clients");
  for (std::size_t r = 0; r < schedule.rounds; ++r) {
    const auto ids = round_participants(state, schedule);
    state = run_round(std::move(state), ids, schedule.local, cost_model);
  }
  return state;
}

/// Fresh model initialized from the schedule seed, then trained on `clients`.
inline FederationState train_from_scratch(std::vector<ClientState> clients, const Arch& arch,
                                          const FederatedSchedule& schedule,
                                          const CostModel& cost_model) {
  auto state = make_federation(std::move(clients), init_params(arch, schedule.local.seed));
  return train_federation(std::move(state), schedule, cost_model);
}

}  // namespace fulsim
