#pragma once

// Execution proofs: a commitment to (algorithm, input digests, seed, output
// digest) that a verifier checks by deterministic re-execution.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fulsim/digest.hpp"
#include "fulsim/errors.hpp"
#include "fulsim/federation.hpp"
#include "fulsim/ledger.hpp"
#include "fulsim/unlearning.hpp"

namespace fulsim {

/// Everything besides data and the starting model that determines the
/// output of an unlearning algorithm.
struct ReplayConfig {
  Arch arch;
  FederatedSchedule schedule;
  UnlearnConfig unlearn;
  CostModel cost_model;
};

struct ProofInputs {
  ModelParams pre_params;
  Dataset target_data;
  std::vector<ClientState> retained;
  ReplayConfig config;
};

struct InputDigests {
  std::string pre_params;
  std::string target_data;
  std::string retained_data;
  std::string config;

  bool operator==(const InputDigests&) const = default;
};

struct ExecutionProof {
  std::string algorithm_id;
  InputDigests input_digests;
  std::uint64_t seed = 0;
  std::string output_digest;

  bool operator==(const ExecutionProof&) const = default;
};

inline std::string retained_digest(const std::vector<ClientState>& clients) {
  ByteWriter w;
  w.u64(clients.size());
  for (const auto& c : clients) {
    w.i64(c.client_id);
    append_dataset(w, *c.dataset);
  }
  return digest(w.bytes());
}

/// Seeds are excluded: the proof carries the seed on its own.
inline std::string config_digest(const ReplayConfig& c) {
  nlohmann::json j;
  j["arch"] = c.arch;
  j["schedule"] = {{"epochs", c.schedule.local.epochs},
                   {"learning_rate", c.schedule.local.learning_rate},
                   {"batch_size", c.schedule.local.batch_size},
                   {"rounds", c.schedule.rounds},
                   {"participation_fraction", c.schedule.participation_fraction}};
  j["unlearn"] = {{"ascent_steps", c.unlearn.ascent_steps},
                  {"ascent_lr", c.unlearn.ascent_lr},
                  {"grad_clip_norm", c.unlearn.grad_clip_norm},
                  {"recovery_rounds", c.unlearn.recovery_rounds},
                  {"epochs", c.unlearn.retrain.epochs},
                  {"learning_rate", c.unlearn.retrain.learning_rate},
                  {"batch_size", c.unlearn.retrain.batch_size}};
  return digest(j.dump());
}

inline InputDigests digest_inputs(const ProofInputs& in) {
  return {params_digest(in.pre_params), dataset_digest(in.target_data),
          retained_digest(in.retained), config_digest(in.config)};
}

using UnlearningAlgorithm = std::function<ModelParams(const ProofInputs&, std::uint64_t seed)>;

/// Algorithms a verifier knows how to replay, keyed by algorithm_id.
inline const std::map<std::string, UnlearningAlgorithm>& algorithm_registry() {
  static const std::map<std::string, UnlearningAlgorithm> registry = {
      {std::string(to_string(UnlearnMode::kExactRetrain)),
       [](const ProofInputs& in, std::uint64_t seed) {
         FederatedSchedule schedule = in.config.schedule;
         schedule.local.seed = seed;
         return retrain_from_scratch(in.pre_params, in.retained, in.config.arch, schedule,
                                     in.config.cost_model)
             .unlearned_params;
       }},
      {std::string(to_string(UnlearnMode::kGradientAscent)),
       [](const ProofInputs& in, std::uint64_t seed) {
         UnlearnConfig cfg = in.config.unlearn;
         cfg.retrain.seed = seed;
         return gradient_ascent_unlearn(in.pre_params, in.target_data, in.retained, cfg,
                                        in.config.cost_model)
             .unlearned_params;
       }},
  };
  return registry;
}

inline void validate_proof(const ExecutionProof& p) {
  if (!algorithm_registry().count(p.algorithm_id)) {
    throw InvalidArgument("proof names unregistered algorithm '" + p.algorithm_id + "'");
  }
  for (const auto* d : {&p.input_digests.pre_params, &p.input_digests.target_data,
                        &p.input_digests.retained_data, &p.input_digests.config, &p.output_digest}) {
    if (!is_digest_hex(*d)) throw InvalidArgument("proof digest '" + *d + "' is not 64 lowercase hex");
  }
}

inline Payload proof_payload(const ExecutionProof& p) {
  return {{"algorithm_id", p.algorithm_id},
          {"input.pre_params", p.input_digests.pre_params},
          {"input.target_data", p.input_digests.target_data},
          {"input.retained_data", p.input_digests.retained_data},
          {"input.config", p.input_digests.config},
          {"seed", std::to_string(p.seed)},
          {"output_digest", p.output_digest}};
}

inline ExecutionProof proof_from_payload(const Payload& payload) {
  auto field = [&](const char* key) -> const std::string& {
    auto it = payload.find(key);
    if (it == payload.end()) throw InvalidArgument(std::string("proof payload lacks ") + key);
    return it->second;
  };
  ExecutionProof p;
  p.algorithm_id = field("algorithm_id");
  p.input_digests = {field("input.pre_params"), field("input.target_data"),
                     field("input.retained_data"), field("input.config")};
  const auto& seed = field("seed");
  std::size_t used = 0;
  try {
    p.seed = std::stoull(seed, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != seed.size()) throw InvalidArgument("proof seed is not an integer");
  p.output_digest = field("output_digest");
  validate_proof(p);
  return p;
}

/// Appends a ProofRecorded entry. `context` (e.g. request_id) is merged into
/// the payload alongside the proof fields.
inline const LedgerEntry& record_proof(Ledger& ledger, const ExecutionProof& proof,
                                       double sim_timestamp, Payload context = {}) {
  validate_proof(proof);
  Payload payload = proof_payload(proof);
  payload.merge(context);
  return ledger.append(EventType::kProofRecorded, std::move(payload), sim_timestamp);
}

enum class ReplayReason { kNone, kInputMismatch, kOutputMismatch };

struct ReplayVerdict {
  bool accepted = false;
  ReplayReason reason = ReplayReason::kNone;
  std::string detail;
};

/// Accepted iff the supplied inputs hash to the committed digests and
/// re-running the algorithm with the committed seed reproduces the output
/// digest. Throws NotFound for an unregistered algorithm.
inline ReplayVerdict verify_proof_by_replay(const ExecutionProof& proof,
                                            const ProofInputs& replay_inputs) {
  const auto& registry = algorithm_registry();
  auto it = registry.find(proof.algorithm_id);
  if (it == registry.end()) throw NotFound("unregistered algorithm '" + proof.algorithm_id + "'");
  const InputDigests actual = digest_inputs(replay_inputs);
  if (actual.pre_params != proof.input_digests.pre_params) {
    return {false, ReplayReason::kInputMismatch, "pre_params"};
  }
  if (actual.target_data != proof.input_digests.target_data) {
    return {false, ReplayReason::kInputMismatch, "target_data"};
  }
  if (actual.retained_data != proof.input_digests.retained_data) {
    return {false, ReplayReason::kInputMismatch, "retained_data"};
  }
  if (actual.config != proof.input_digests.config) {
    return {false, ReplayReason::kInputMismatch, "config"};
  }
  const std::string replayed = params_digest(it->second(replay_inputs, proof.seed));
  if (replayed != proof.output_digest) {
    return {false, ReplayReason::kOutputMismatch, "replayed output " + replayed};
  }
  return {true, ReplayReason::kNone, {}};
}

}  // namespace fulsim
