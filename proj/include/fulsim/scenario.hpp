#pragma once

// End-to-end orchestration: train the federation, then for each request run
// consensus → execute → aggregate → prove → verify, writing the ledger,
// checkpoints, and per-request reports. The whole artifact set is a pure
// function of the config.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fulsim/config.hpp"
#include "fulsim/digest.hpp"
#include "fulsim/errors.hpp"
#include "fulsim/federation.hpp"
#include "fulsim/learning.hpp"
#include "fulsim/ledger.hpp"
#include "fulsim/metrics.hpp"
#include "fulsim/probes.hpp"
#include "fulsim/proof.hpp"
#include "fulsim/unlearning.hpp"

namespace fulsim {

namespace fs = std::filesystem;

struct RequestRecord {
  VerificationReport report;
  RequestStatus final_status = RequestStatus::kPending;
  std::string report_path;  // relative to the output directory
  std::vector<std::string> findings;
};

struct RunSummary {
  std::string scenario;
  std::vector<RequestRecord> requests;
  std::string trained_model_digest;
  std::string final_model_digest;
  std::string ledger_head;
  double elapsed_simulated_time = 0.0;
  double throughput = 0.0;
  double wall_clock_seconds = 0.0;  // never written to disk

  bool all_pass() const {
    return std::all_of(requests.begin(), requests.end(),
                       [](const RequestRecord& r) { return r.report.all_pass(); });
  }
};

/// Output layout under the run directory.
struct OutputPaths {
  fs::path root;
  fs::path ledger() const { return root / "ledger.jsonl"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path reports() const { return root / "reports"; }
  fs::path summary_csv() const { return root / "summary.csv"; }
  fs::path summary_json() const { return root / "summary.json"; }
  static std::string report_name(int request_id) {
    return "reports/request_" + std::to_string(request_id) + ".json";
  }
};

/// Clients, holdouts, and probe data materialized from a config.
struct ScenarioData {
  std::vector<ClientState> clients;  // training splits (poisoned where configured)
  std::map<int, Dataset> holdouts;   // clean held-out split per client
  Dataset global_test;               // concatenation of all holdouts
};

inline ScenarioData build_scenario_data(const ScenarioConfig& cfg) {
  ScenarioData out;
  auto raw = make_synthetic(cfg.data, cfg.data_seed());
  std::vector<Dataset> holds;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const int id = static_cast<int>(k);
    auto [train_split, holdout] = split_holdout(raw[k], cfg.holdout_fraction, derive_seed(cfg.holdout_seed(), k));
    if (cfg.backdoor && std::count(cfg.backdoor->client_ids.begin(), cfg.backdoor->client_ids.end(), id)) {
      train_split = inject_backdoor(train_split, cfg.backdoor->trigger, derive_seed(cfg.poison_seed(), k));
    }
    holds.push_back(holdout);
    out.holdouts.emplace(id, holdout);
    out.clients.push_back(make_client(id, std::move(train_split), std::move(holdout)));
  }
  out.global_test = concat(holds);
  return out;
}

namespace detail {

inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string join_ids(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? "," : "") + std::to_string(ids[i]);
  return s;
}

/// Rotates the first digit of the request's `deadline` payload value in its
/// RequestSubmitted line. The line stays well-formed; only the hash breaks.
inline void tamper_ledger_file(const fs::path& path, int request_id) {
  std::string text = read_text_file(path);
  const std::string marker = "\"request_id\":\"" + std::to_string(request_id) + "\"";
  std::size_t line_start = 0;
  while (line_start < text.size()) {
    const auto nl = text.find('\n', line_start);
    const std::string_view line(text.data() + line_start, nl - line_start);
    if (line.find("RequestSubmitted") != std::string_view::npos && line.find(marker) != std::string_view::npos) {
      const auto key = line.find("\"deadline\":\"");
      if (key != std::string_view::npos) {
        char& c = text[line_start + key + 12];
        if (c >= '0' && c <= '9') c = static_cast<char>('0' + (c - '0' + 1) % 10);
        std::ofstream(path, std::ios::binary | std::ios::trunc) << text;
        return;
      }
    }
    line_start = nl + 1;
  }
  throw Error("tamper_ledger: no RequestSubmitted entry for request " + std::to_string(request_id));
}

inline void add_prefixed(MetricMap& m, const std::string& prefix, const MetricMap& src) {
  for (const auto& [k, v] : src) m[prefix + k] = v;
}

}  // namespace detail

/// Runs the scenario, writing all artifacts under `output_dir`.
inline RunSummary run_scenario(const ScenarioConfig& cfg, const fs::path& output_dir) {
  const auto wall_start = std::chrono::steady_clock::now();
  const OutputPaths out{output_dir};
  fs::create_directories(out.root);
  fs::remove_all(out.checkpoints());
  fs::remove_all(out.reports());
  fs::create_directories(out.reports());

  const Arch arch = cfg.arch();
  const CostModel& cost = cfg.cost_model;
  ScenarioData data = build_scenario_data(cfg);
  Ledger ledger(out.ledger());
  CheckpointStore store(out.checkpoints());

  // Steps 1-2: federated training; every round snapshot goes off-chain.
  FederationState state = make_federation(data.clients, init_params(arch, cfg.training.local.seed));
  state = train_federation(std::move(state), cfg.training, cost);
  for (const auto& cp : state.round_checkpoints) store.store(cp.params);

  RunSummary summary;
  summary.scenario = cfg.name;
  summary.trained_model_digest = params_digest(state.global_params);
  std::optional<double> first_submission;
  double last_completion = 0.0;
  std::size_t completed = 0;

  for (const auto& rc : cfg.requests) {
    RequestRecord record;
    const std::string rid = std::to_string(rc.request_id);
    const UnlearnConfig ucfg = rc.unlearning.value_or(cfg.unlearning);

    UnlearningRequest req;
    req.request_id = rc.request_id;
    req.target_client_ids = rc.target_clients;
    req.target_sample_ids = rc.target_sample_ids;
    req.mode = rc.mode;
    req.deadline = rc.deadline_days * cfg.time_units_per_day;
    req.submitted_at = std::max(state.clock, rc.submitted_at.value_or(state.clock));
    state.clock = req.submitted_at;
    if (!first_submission) first_submission = req.submitted_at;

    try {
      ledger.append(EventType::kRequestSubmitted,
                    {{"request_id", rid},
                     {"target_clients", detail::join_ids(rc.target_clients)},
                     {"target_samples", std::to_string(rc.target_sample_ids.size())},
                     {"mode", std::string(to_string(rc.mode))},
                     {"deadline", detail::fmt_num(req.deadline)}},
                    state.clock);

      // Consensus.
      PhaseTimings timings;
      const auto consensus = consensus_phase(req, state, cost);
      timings.consensus = consensus.consensus_time;
      state.clock += timings.consensus;
      ledger.append(EventType::kConsensusReached,
                    {{"request_id", rid},
                     {"executor", consensus.plan.executor},
                     {"algorithm_id", consensus.plan.algorithm_id},
                     {"consensus_time", detail::fmt_num(timings.consensus)}},
                    state.clock);

      // Execution.
      const ModelParams pre = state.global_params;
      const std::string pre_digest = store.store(pre);
      const TargetSplit split = split_targets(state, req);
      UnlearningOutcome outcome =
          rc.mode == UnlearnMode::kExactRetrain
              ? retrain_from_scratch(pre, split.retained, arch, cfg.training, cost)
              : gradient_ascent_unlearn(pre, split.target_data, split.retained, ucfg, cost);
      if (cfg.faults.skip_unlearning) {
        // The provider claims the work but ships the pre-unlearning model.
        outcome.unlearned_params = pre;
        outcome.post_unlearning_digest = pre_digest;
      }
      const ModelParams& post = outcome.unlearned_params;
      store.store(post);
      timings.execution = outcome.timings.execution;
      state.clock += timings.execution;
      req.advance(RequestStatus::kExecuted);
      ledger.append(EventType::kUnlearningExecuted,
                    {{"request_id", rid},
                     {"algorithm_id", outcome.algorithm_id},
                     {"pre_model_digest", pre_digest},
                     {"post_model_digest", outcome.post_unlearning_digest},
                     {"execution_time", detail::fmt_num(timings.execution)}},
                    state.clock);

      // Aggregation: recovery-round aggregations plus publishing the model.
      timings.aggregation = outcome.timings.aggregation + cost.time_per_aggregation;
      state.clock += timings.aggregation;
      const std::vector<ClientState> clients_before = state.clients;
      state.global_params = post;
      state.clients = split.retained;
      ledger.append(EventType::kAggregated,
                    {{"request_id", rid},
                     {"global_model_digest", outcome.post_unlearning_digest},
                     {"aggregation_time", detail::fmt_num(timings.aggregation)}},
                    state.clock);

      // Proof commitment.
      const ReplayConfig replay_cfg{arch, cfg.training, ucfg, cost};
      const ProofInputs inputs{pre, split.target_data, split.retained, replay_cfg};
      ExecutionProof proof{outcome.algorithm_id, digest_inputs(inputs), outcome.seed,
                           outcome.post_unlearning_digest};
      record_proof(ledger, proof, state.clock, {{"request_id", rid}});

      if (cfg.faults.drop_checkpoint) store.erase(pre_digest);
      if (cfg.faults.tamper_ledger) detail::tamper_ledger_file(out.ledger(), rc.request_id);

      // Verification. Each verifier replays the proof independently.
      std::vector<bool> accepted;
      for (std::size_t v = 0; v < cfg.verifiers; ++v) {
        const auto verdict = verify_proof_by_replay(proof, inputs);
        accepted.push_back(verdict.accepted);
        if (!verdict.accepted && v == 0) record.findings.push_back("proof rejected: " + verdict.detail);
      }
      const auto audit = audit_score(read_text_file(out.ledger()), EventSchema::before_verification(), store);
      for (const auto& f : audit.findings) record.findings.push_back("audit: " + f);

      const auto benchmark = retrain_from_scratch(pre, split.retained, arch, cfg.training, cost);
      store.store(benchmark.unlearned_params);

      std::map<Goal, MetricMap> metrics;

      MetricMap& comp = metrics[Goal::kCompleteness];
      const auto pd = performance_delta(pre, post, split.target_data);
      comp["target_accuracy_delta"] = pd.accuracy_delta;
      comp["target_loss_delta"] = pd.loss_delta;
      const auto ri_post = residual_influence(post, benchmark.unlearned_params, split.target_data);
      const auto ri_pre = residual_influence(pre, benchmark.unlearned_params, split.target_data);
      comp["param_cosine_distance"] = ri_post.param_cosine_distance;
      comp["output_kl"] = ri_post.output_kl;
      comp["cka_similarity"] = ri_post.cka_similarity;
      comp["pre_output_kl"] = ri_pre.output_kl;
      if (cfg.backdoor) {
        const auto& trig = cfg.backdoor->trigger;
        comp["backdoor_success_pre"] = backdoor_success_rate(pre, data.global_test, trig);
        comp["backdoor_success"] = backdoor_success_rate(post, data.global_test, trig);
        comp["backdoor_success_benchmark"] =
            backdoor_success_rate(benchmark.unlearned_params, data.global_test, trig);
        comp["backdoor_drop"] = comp["backdoor_success_pre"] - comp["backdoor_success"];
      }
      if (cfg.mia) {
        std::vector<Dataset> nonmember_parts;
        for (int id : rc.target_clients) nonmember_parts.push_back(data.holdouts.at(id));
        const Dataset nonmembers = concat(nonmember_parts);
        const auto mia_pre = mia_loss_threshold(pre, split.target_data, nonmembers);
        const auto mia_post = mia_loss_threshold(post, split.target_data, nonmembers);
        const auto mia_bench = mia_loss_threshold(benchmark.unlearned_params, split.target_data, nonmembers);
        comp["mia_auc_pre"] = mia_pre.auc;
        comp["mia_auc"] = mia_post.auc;
        comp["mia_auc_benchmark"] = mia_bench.auc;
        comp["mia_attack_accuracy"] = mia_post.attack_accuracy;
        comp["mia_auc_deviation"] = std::abs(mia_post.auc - 0.5);
      }

      MetricMap& corr = metrics[Goal::kCorrectness];
      corr["pvsr"] = pvsr(accepted);
      corr["proofs_total"] = static_cast<double>(accepted.size());
      corr["proofs_accepted"] = static_cast<double>(std::count(accepted.begin(), accepted.end(), true));
      corr["audit_score"] = audit.score;
      corr["audit_chain_valid"] = audit.chain_valid;
      corr["audit_schema_valid"] = audit.schema_valid;
      corr["audit_checkpoints_valid"] = audit.checkpoints_valid;

      MetricMap& excl = metrics[Goal::kExclusivity];
      std::vector<ClientState> remaining;
      for (const auto& c : split.retained) {
        if (c.is_remaining) remaining.push_back(c);
      }
      if (!remaining.empty()) {
        const auto up_pre = probe_updates(remaining, pre, cfg.training.local, cost);
        const auto up_post = probe_updates(remaining, post, cfg.training.local, cost);
        const auto stab = exclusivity_stability(pre, post, remaining, up_pre, up_post);
        double max_acc = 0.0, sum_acc = 0.0, min_cos = 1.0, max_w = 0.0;
        for (const auto& s : stab) {
          const std::string p = "client_" + std::to_string(s.client_id) + ".";
          excl[p + "accuracy_delta"] = s.accuracy_delta;
          excl[p + "update_cosine"] = s.update_cosine;
          excl[p + "behavior_wasserstein"] = s.behavior_wasserstein;
          max_acc = std::max(max_acc, std::abs(s.accuracy_delta));
          sum_acc += std::abs(s.accuracy_delta);
          min_cos = std::min(min_cos, s.update_cosine);
          max_w = std::max(max_w, s.behavior_wasserstein);
        }
        excl["max_abs_accuracy_delta"] = max_acc;
        excl["mean_abs_accuracy_delta"] = sum_acc / static_cast<double>(stab.size());
        excl["min_update_cosine"] = min_cos;
        excl["max_behavior_wasserstein"] = max_w;
      }
      excl["remaining_clients"] = static_cast<double>(remaining.size());

      // Reversibility drill: roll back from the store without committing.
      MetricMap& rev = metrics[Goal::kReversibility];
      try {
        const ModelParams restored = store.load(pre_digest);
        const auto rm = reversibility_metrics(restored, pre, pre_digest, data.global_test,
                                              cost.time_per_aggregation);
        rev["performance_consistency"] = rm.performance_consistency;
        rev["restoration_latency"] = rm.restoration_latency;
        rev["state_integrity"] = rm.state_integrity;
        rev["restoration_failed"] = 0.0;
      } catch (const Error& e) {
        record.findings.push_back(std::string("restoration drill failed: ") + e.what());
        rev["performance_consistency"] = std::abs(evaluate(post, data.global_test).accuracy -
                                                  evaluate(pre, data.global_test).accuracy);
        rev["restoration_latency"] = 0.0;
        rev["state_integrity"] = 0.0;
        rev["restoration_failed"] = 1.0;
      }
      rev["retrain_execution_time"] = benchmark.timings.execution;
      rev["restoration_latency_ratio"] =
          benchmark.timings.execution > 0.0 ? rev["restoration_latency"] / benchmark.timings.execution : 0.0;

      std::size_t metric_evals = 0;
      for (const auto& [g, m] : metrics) metric_evals += m.size();
      timings.verification = cost.time_per_proof * static_cast<double>(cfg.verifiers) +
                             cost.time_per_metric_eval * static_cast<double>(metric_evals);
      state.clock += timings.verification;

      MetricMap& time = metrics[Goal::kTimeliness];
      const auto lat = latency_breakdown(timings);
      time["consensus_time"] = lat.consensus;
      time["execution_time"] = lat.execution;
      time["aggregation_time"] = lat.aggregation;
      time["verification_time"] = lat.verification;
      time["total_latency"] = lat.total;
      time["deadline"] = req.deadline;
      time["deadline_adherence"] = deadline_adherence(lat.total, req.deadline, cfg.adherence_mode);
      ++completed;
      last_completion = state.clock;
      time["throughput"] = throughput(completed, std::max(state.clock - *first_submission, 1e-12));

      record.report = assemble_report(rc.request_id, std::string(to_string(rc.mode)), metrics,
                                      cfg.thresholds, state.clock,
                                      {{"ledger_head", ledger.head_hash()},
                                       {"pre_model", pre_digest},
                                       {"post_model", outcome.post_unlearning_digest},
                                       {"benchmark_model", benchmark.post_unlearning_digest}});
      std::string verdicts;
      for (const auto& g : record.report.goals) {
        verdicts += (verdicts.empty() ? "" : ";") + std::string(to_string(g.goal)) + "=" +
                    std::string(to_string(g.verdict));
      }
      ledger.append(EventType::kVerificationCompleted,
                    {{"request_id", rid},
                     {"report_digest", digest(report_to_json(record.report).dump())},
                     {"verdicts", verdicts}},
                    state.clock);
      req.advance(RequestStatus::kVerified);

      if (rc.revoke) {
        try {
          const auto restored = revoke_and_restore(req, store, pre_digest, cost);
          ledger.append(EventType::kRequestRevoked, {{"request_id", rid}}, state.clock);
          state.clock += restored.restoration_time;
          state.global_params = restored.restored_params;
          state.clients = clients_before;
          ledger.append(EventType::kRestored,
                        {{"request_id", rid},
                         {"restored_model_digest", params_digest(restored.restored_params)},
                         {"restoration_time", detail::fmt_num(restored.restoration_time)}},
                        state.clock);
        } catch (const ReversibilityError& e) {
          ledger.append(EventType::kRequestRevoked, {{"request_id", rid}, {"error", e.what()}}, state.clock);
          record.findings.push_back(std::string("revocation failed: ") + e.what());
        }
      }
    } catch (const Error& e) {
      throw Error("request " + rid + ": " + e.what());
    }
    record.final_status = req.status;
    record.report_path = OutputPaths::report_name(rc.request_id);
    summary.requests.push_back(std::move(record));
  }

  summary.final_model_digest = params_digest(state.global_params);
  summary.ledger_head = ledger.head_hash();
  summary.elapsed_simulated_time = state.clock;
  if (first_submission && last_completion > *first_submission) {
    summary.throughput = throughput(completed, last_completion - *first_submission);
  }
  summary.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return summary;
}

// ---------------------------------------------------------------------------
// Report files

inline nlohmann::json summary_to_json(const RunSummary& s) {
  nlohmann::json reqs = nlohmann::json::array();
  for (const auto& r : s.requests) {
    nlohmann::json verdicts = nlohmann::json::object();
    for (const auto& g : r.report.goals) verdicts[std::string(to_string(g.goal))] = std::string(to_string(g.verdict));
    reqs.push_back({{"request_id", r.report.request_id},
                    {"mode", r.report.mode},
                    {"report", r.report_path},
                    {"status", std::string(to_string(r.final_status))},
                    {"verdicts", verdicts},
                    {"findings", r.findings}});
  }
  return {{"scenario", s.scenario},
          {"requests", reqs},
          {"trained_model_digest", s.trained_model_digest},
          {"final_model_digest", s.final_model_digest},
          {"ledger_head", s.ledger_head},
          {"elapsed_simulated_time", round_sig6(s.elapsed_simulated_time)},
          {"throughput", round_sig6(s.throughput)}};
}

/// CSV header; one row per request × goal follows.
inline constexpr const char* kSummaryCsvHeader = "request_id,mode,goal,verdict,threshold_set_id,failed_bounds,metrics";

inline std::string summary_csv(const RunSummary& s) {
  std::string csv = std::string(kSummaryCsvHeader) + "\n";
  for (const auto& r : s.requests) {
    for (const auto& g : r.report.goals) {
      std::string failed, metrics;
      for (const auto& f : g.failed_bounds) failed += (failed.empty() ? "" : ";") + f;
      for (const auto& [k, v] : g.metrics) metrics += (metrics.empty() ? "" : ";") + k + "=" + detail::fmt_num(v);
      csv += std::to_string(r.report.request_id) + "," + r.report.mode + "," + std::string(to_string(g.goal)) + "," +
             std::string(to_string(g.verdict)) + "," + g.threshold_set_id + ",\"" + failed + "\",\"" + metrics +
             "\"\n";
    }
  }
  return csv;
}

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

/// Per-request JSON reports, summary.json and summary.csv.
inline void emit_reports(const RunSummary& summary, const fs::path& output_dir) {
  const OutputPaths out{output_dir};
  fs::create_directories(out.reports());
  for (const auto& r : summary.requests) {
    write_file(out.root / r.report_path, report_to_json(r.report).dump(2) + "\n");
  }
  write_file(out.summary_json(), summary_to_json(summary).dump(2) + "\n");
  write_file(out.summary_csv(), summary_csv(summary));
}

inline VerificationReport read_report(const fs::path& path) {
  const auto j = nlohmann::json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw InvalidArgument("report " + path.string() + " is not valid JSON");
  return report_from_json(j);
}

// ---------------------------------------------------------------------------
// Independent auditor

struct LedgerAuditOutcome {
  int exit_code = 0;
  AuditResult audit;
  std::size_t entries = 0;
  std::vector<std::string> findings;
};

/// Checks a ledger file and checkpoint directory as a third party would.
/// Exit code 0 when the chain verifies and the audit score is 1, else 1.
inline LedgerAuditOutcome verify_ledger_cmd(const fs::path& ledger_path, const fs::path& checkpoints_dir) {
  if (!fs::exists(ledger_path)) throw NotFound("ledger " + ledger_path.string() + " does not exist");
  if (!fs::is_directory(checkpoints_dir)) {
    throw NotFound("checkpoint directory " + checkpoints_dir.string() + " does not exist");
  }
  const std::string text = read_text_file(ledger_path);
  const CheckpointStore store(checkpoints_dir);
  LedgerAuditOutcome out;
  out.audit = audit_score(text, EventSchema::complete(), store);
  out.entries = parse_ledger(text).line_count;
  out.findings = out.audit.findings;
  out.exit_code = (out.audit.chain_valid && out.audit.score == 1.0) ? 0 : 1;
  return out;
}

}  // namespace fulsim
