#pragma once

// Verification metrics for the five goals (completeness, timeliness,
// correctness, exclusivity, reversibility), the distance primitives they
// rest on, and threshold-based report assembly.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fulsim/digest.hpp"
#include "fulsim/errors.hpp"
#include "fulsim/federation.hpp"
#include "fulsim/learning.hpp"
#include "fulsim/ledger.hpp"
#include "fulsim/unlearning.hpp"

namespace fulsim {

// ---------------------------------------------------------------------------
// Primitives

inline constexpr double kNormalizationTol = 1e-9;

/// KL(p ‖ q) = Σ p·ln(p/q); q is floored at 1e-12, p = 0 terms vanish.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  detail::require(p.size() == q.size(), "kl_divergence length mismatch");
  detail::require(!p.empty(), "kl_divergence of empty distributions");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    detail::require(p[i] >= 0.0 && q[i] >= 0.0, "kl_divergence needs non-negative inputs");
    sp += p[i];
    sq += q[i];
  }
  detail::require(std::abs(sp - 1.0) <= kNormalizationTol && std::abs(sq - 1.0) <= kNormalizationTol,
                  "kl_divergence inputs must sum to 1");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
  }
  return std::max(kl, 0.0);
}

/// 1-D earth mover's distance between two empirical distributions.
inline double wasserstein_1d(std::span<const double> a, std::span<const double> b) {
  detail::require(!a.empty() && !b.empty(), "wasserstein_1d of an empty sample");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  if (sa.size() == sb.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < sa.size(); ++i) s += std::abs(sa[i] - sb[i]);
    return s / static_cast<double>(sa.size());
  }
  // ∫ |F_a(x) − F_b(x)| dx over the merged breakpoints.
  std::vector<double> xs;
  xs.reserve(sa.size() + sb.size());
  std::merge(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(xs));
  double area = 0.0;
  std::size_t ia = 0, ib = 0;
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    while (ia < sa.size() && sa[ia] <= xs[k]) ++ia;
    while (ib < sb.size() && sb[ib] <= xs[k]) ++ib;
    const double fa = static_cast<double>(ia) / static_cast<double>(sa.size());
    const double fb = static_cast<double>(ib) / static_cast<double>(sb.size());
    area += std::abs(fa - fb) * (xs[k + 1] - xs[k]);
  }
  return area;
}

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  detail::require(u.size() == v.size(), "cosine_similarity length mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  detail::require(nu > 0.0 && nv > 0.0, "cosine_similarity of a zero vector");
  if (std::equal(u.begin(), u.end(), v.begin())) return 1.0;
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

namespace detail {

inline Matrix center_columns(const Matrix& x) {
  Matrix c = x;
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) mean += x(i, j);
    mean /= static_cast<double>(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) c(i, j) -= mean;
  }
  return c;
}

/// ‖Aᵀ B‖²_F
inline double cross_frobenius_sq(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t p = 0; p < a.cols(); ++p) {
    for (std::size_t q = 0; q < b.cols(); ++q) {
      double d = 0.0;
      for (std::size_t i = 0; i < a.rows(); ++i) d += a(i, p) * b(i, q);
      s += d * d;
    }
  }
  return s;
}

}  // namespace detail

/// Linear centered kernel alignment of two representations of the same rows.
inline double linear_cka(const Matrix& x, const Matrix& y) {
  detail::require(x.rows() == y.rows(), "linear_cka row counts differ");
  detail::require(x.rows() >= 2, "linear_cka needs at least two rows");
  const Matrix xc = detail::center_columns(x);
  const Matrix yc = detail::center_columns(y);
  const double xx = detail::cross_frobenius_sq(xc, xc);
  const double yy = detail::cross_frobenius_sq(yc, yc);
  detail::require(xx > 0.0 && yy > 0.0, "linear_cka of a constant representation");
  if (xc == yc) return 1.0;
  const double xy = detail::cross_frobenius_sq(xc, yc);
  return std::clamp(xy / (std::sqrt(xx) * std::sqrt(yy)), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Completeness

struct PerformanceDelta {
  double accuracy_delta = 0.0;  // post − pre
  double loss_delta = 0.0;      // post − pre; > 0 is consistent with forgetting
};

inline PerformanceDelta performance_delta(const ModelParams& pre_params, const ModelParams& post_params,
                                          const Dataset& target_data) {
  detail::require(!target_data.empty(), "performance_delta on empty data");
  const auto pre = evaluate(pre_params, target_data);
  const auto post = evaluate(post_params, target_data);
  return {post.accuracy - pre.accuracy, post.mean_loss - pre.mean_loss};
}

struct ResidualInfluence {
  double param_cosine_distance = 0.0;
  double output_kl = 0.0;
  double cka_similarity = 1.0;
};

/// Distance of an unlearned model to the retrain benchmark. output_kl is the
/// mean per-sample KL(benchmark ‖ unlearned).
inline ResidualInfluence residual_influence(const ModelParams& unlearned, const ModelParams& benchmark,
                                            const Dataset& probe_data) {
  detail::require(unlearned.arch == benchmark.arch, "residual_influence architecture mismatch");
  detail::require(!probe_data.empty(), "residual_influence needs probe data");
  ResidualInfluence r;
  r.param_cosine_distance = unlearned == benchmark
                                ? 0.0
                                : 1.0 - cosine_similarity(unlearned.coefficients, benchmark.coefficients);
  const Matrix pu = predict_proba(unlearned, probe_data.features);
  const Matrix pb = predict_proba(benchmark, probe_data.features);
  double kl = 0.0;
  for (std::size_t i = 0; i < pu.rows(); ++i) kl += kl_divergence(pb.row(i), pu.row(i));
  r.output_kl = kl / static_cast<double>(pu.rows());
  r.cka_similarity = linear_cka(hidden_representation(unlearned, probe_data.features),
                                hidden_representation(benchmark, probe_data.features));
  return r;
}

// ---------------------------------------------------------------------------
// Timeliness

struct LatencyBreakdown {
  double consensus = 0.0;
  double execution = 0.0;
  double aggregation = 0.0;
  double verification = 0.0;
  double total = 0.0;
};

inline LatencyBreakdown latency_breakdown(const PhaseTimings& t) {
  t.validate();
  return {t.consensus, t.execution, t.aggregation, t.verification, t.total()};
}

inline double throughput(std::size_t completed_count, double window) {
  detail::require(std::isfinite(window) && window > 0.0, "throughput window must be positive");
  return static_cast<double>(completed_count) / window;
}

enum class AdherenceMode { kBinary, kProportional };

inline std::optional<AdherenceMode> parse_adherence_mode(std::string_view s) {
  if (s == "binary") return AdherenceMode::kBinary;
  if (s == "proportional") return AdherenceMode::kProportional;
  return std::nullopt;
}

inline double deadline_adherence(double total_latency, double deadline, AdherenceMode mode) {
  detail::require(deadline > 0.0 && std::isfinite(deadline), "deadline must be positive");
  detail::require(total_latency >= 0.0, "latency must be non-negative");
  if (total_latency <= deadline) return 1.0;
  return mode == AdherenceMode::kBinary ? 0.0 : std::min(1.0, deadline / total_latency);
}

// ---------------------------------------------------------------------------
// Correctness

/// Proof verification success rate: accepted / total.
inline double pvsr(const std::vector<bool>& accepted) {
  detail::require(!accepted.empty(), "PVSR is undefined without proofs");
  const auto n = std::count(accepted.begin(), accepted.end(), true);
  return static_cast<double>(n) / static_cast<double>(accepted.size());
}

/// Lifecycle every request must show: `required` in order, optionally
/// followed by a prefix of `optional_tail`.
struct EventSchema {
  std::vector<EventType> required;
  std::vector<EventType> optional_tail;

  /// Schema for a request that has not been verified yet.
  static EventSchema before_verification() {
    using E = EventType;
    return {{E::kRequestSubmitted, E::kConsensusReached, E::kUnlearningExecuted, E::kAggregated,
             E::kProofRecorded},
            {E::kVerificationCompleted, E::kRequestRevoked, E::kRestored}};
  }

  /// Schema for a completed run.
  static EventSchema complete() {
    using E = EventType;
    return {{E::kRequestSubmitted, E::kConsensusReached, E::kUnlearningExecuted, E::kAggregated,
             E::kProofRecorded, E::kVerificationCompleted},
            {E::kRequestRevoked, E::kRestored}};
  }

  bool matches(std::span<const EventType> events) const {
    if (events.size() < required.size()) return false;
    if (!std::equal(required.begin(), required.end(), events.begin())) return false;
    const auto rest = events.subspan(required.size());
    if (rest.size() > optional_tail.size()) return false;
    return std::equal(rest.begin(), rest.end(), optional_tail.begin());
  }
};

struct AuditResult {
  bool chain_valid = false;
  bool schema_valid = false;
  bool checkpoints_valid = false;
  double score = 0.0;
  ChainStatus chain;
  std::vector<std::string> findings;
};

/// Unweighted mean of three indicators: the hash chain verifies, every
/// request's events follow the schema, and every model digest referenced by
/// the ledger resolves to an intact checkpoint.
inline AuditResult audit_score(std::string_view ledger_text, const EventSchema& schema,
                               const CheckpointStore& store) {
  const auto parsed = parse_ledger(ledger_text);
  if (parsed.line_count > 0 && parsed.entries.empty()) {
    throw InvalidArgument("ledger is unparseable");
  }
  AuditResult r;
  r.chain = verify_chain(ledger_text);
  r.chain_valid = r.chain.valid;
  if (!r.chain_valid) {
    r.findings.push_back("chain broken at entry " + std::to_string(r.chain.broken_at) + ": " +
                         r.chain.reason);
  }

  std::map<std::string, std::vector<EventType>> per_request;
  for (const auto& e : parsed.entries) {
    auto it = e.payload.find("request_id");
    if (it == e.payload.end()) {
      r.findings.push_back("entry " + std::to_string(e.index) + " carries no request_id");
      per_request["<none>"].push_back(e.event_type);
      continue;
    }
    per_request[it->second].push_back(e.event_type);
  }
  r.schema_valid = !per_request.empty();
  if (per_request.empty()) r.findings.push_back("ledger records no requests");
  for (const auto& [id, events] : per_request) {
    if (!schema.matches(events)) {
      r.schema_valid = false;
      r.findings.push_back("request " + id + " lifecycle does not follow the event schema");
    }
  }

  r.checkpoints_valid = true;
  std::set<std::string> seen;
  for (const auto& e : parsed.entries) {
    for (const auto& [k, v] : e.payload) {
      if (!model_reference_keys().count(k) || !seen.insert(v).second) continue;
      if (!store.verify(v)) {
        r.checkpoints_valid = false;
        r.findings.push_back("model digest " + v + " (" + k + ") not resolvable in checkpoint store");
      }
    }
  }
  r.score = (static_cast<double>(r.chain_valid) + static_cast<double>(r.schema_valid) +
             static_cast<double>(r.checkpoints_valid)) / 3.0;
  return r;
}

// ---------------------------------------------------------------------------
// Exclusivity

struct ClientStability {
  int client_id = 0;
  double accuracy_delta = 0.0;  // post − pre on the client's fixed test split
  double loss_delta = 0.0;
  double update_cosine = 1.0;
  double behavior_wasserstein = 0.0;
};

/// Local updates each client would send from `global`, with a fixed seed per
/// client so that two global models are compared under identical local work.
inline std::map<int, std::vector<double>> probe_updates(const std::vector<ClientState>& clients,
                                                        const ModelParams& global,
                                                        const TrainConfig& config,
                                                        const CostModel& cost_model) {
  std::map<int, std::vector<double>> out;
  for (const auto& c : clients) {
    out[c.client_id] = local_update(c, global, local_config_for(config, 0, c.client_id), cost_model).delta;
  }
  return out;
}

inline std::vector<double> max_class_probability(const ModelParams& params, const Matrix& features) {
  const Matrix p = predict_proba(params, features);
  std::vector<double> out(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const auto row = p.row(i);
    out[i] = *std::max_element(row.begin(), row.end());
  }
  return out;
}

inline std::vector<ClientStability> exclusivity_stability(
    const ModelParams& pre_params, const ModelParams& post_params,
    const std::vector<ClientState>& remaining_clients,
    const std::map<int, std::vector<double>>& last_updates_pre,
    const std::map<int, std::vector<double>>& last_updates_post) {
  std::vector<ClientStability> out;
  for (const auto& c : remaining_clients) {
    detail::require(c.test_split && !c.test_split->empty(),
                    "client " + std::to_string(c.client_id) + " has no fixed test split");
    auto up = last_updates_pre.find(c.client_id);
    auto uq = last_updates_post.find(c.client_id);
    detail::require(up != last_updates_pre.end() && uq != last_updates_post.end(),
                    "missing recorded updates for client " + std::to_string(c.client_id));
    ClientStability s;
    s.client_id = c.client_id;
    const auto pre = evaluate(pre_params, *c.test_split);
    const auto post = evaluate(post_params, *c.test_split);
    s.accuracy_delta = post.accuracy - pre.accuracy;
    s.loss_delta = post.mean_loss - pre.mean_loss;
    s.update_cosine = up->second == uq->second ? 1.0 : cosine_similarity(up->second, uq->second);
    s.behavior_wasserstein = wasserstein_1d(max_class_probability(pre_params, c.dataset->features),
                                            max_class_probability(post_params, c.dataset->features));
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reversibility

struct ReversibilityMetrics {
  double performance_consistency = 0.0;
  double restoration_latency = 0.0;
  bool state_integrity = false;
};

inline ReversibilityMetrics reversibility_metrics(const ModelParams& restored_params,
                                                  const ModelParams& pre_unlearning_params,
                                                  const std::string& pre_unlearning_digest,
                                                  const Dataset& test_set, double restoration_time) {
  ReversibilityMetrics m;
  m.performance_consistency = std::abs(evaluate(restored_params, test_set).accuracy -
                                       evaluate(pre_unlearning_params, test_set).accuracy);
  m.restoration_latency = restoration_time;
  m.state_integrity = params_digest(restored_params) == pre_unlearning_digest;
  return m;
}

// ---------------------------------------------------------------------------
// Thresholds and reports

enum class Goal { kCompleteness, kTimeliness, kCorrectness, kExclusivity, kReversibility };

inline constexpr std::array<Goal, 5> kAllGoals = {Goal::kCompleteness, Goal::kTimeliness,
                                                  Goal::kCorrectness, Goal::kExclusivity,
                                                  Goal::kReversibility};

inline std::string_view to_string(Goal g) {
  static constexpr std::array<std::string_view, 5> kNames = {
      "completeness", "timeliness", "correctness", "exclusivity", "reversibility"};
  return kNames[static_cast<std::size_t>(g)];
}

inline std::optional<Goal> parse_goal(std::string_view s) {
  for (Goal g : kAllGoals) {
    if (to_string(g) == s) return g;
  }
  return std::nullopt;
}

enum class Verdict { kPass, kFail };

inline std::string_view to_string(Verdict v) { return v == Verdict::kPass ? "pass" : "fail"; }

struct Bound {
  enum class Kind { kMax, kMin };
  std::string metric;
  Kind kind = Kind::kMax;
  double value = 0.0;

  bool satisfied_by(double x) const { return kind == Kind::kMax ? x <= value : x >= value; }
  bool operator==(const Bound&) const = default;
};

/// Named per-goal bounds. These are conventions of this tool, not values
/// with any external authority.
struct Thresholds {
  std::string id = "default-v1";
  std::map<Goal, std::vector<Bound>> bounds;

  static Thresholds defaults() {
    using K = Bound::Kind;
    Thresholds t;
    t.bounds[Goal::kCompleteness] = {{"output_kl", K::kMax, 0.1}};
    t.bounds[Goal::kTimeliness] = {{"deadline_adherence", K::kMin, 1.0}};
    t.bounds[Goal::kCorrectness] = {{"pvsr", K::kMin, 1.0}, {"audit_score", K::kMin, 1.0}};
    t.bounds[Goal::kExclusivity] = {{"max_abs_accuracy_delta", K::kMax, 0.05}};
    t.bounds[Goal::kReversibility] = {{"state_integrity", K::kMin, 1.0},
                                      {"performance_consistency", K::kMax, 0.0}};
    return t;
  }

  void validate() const {
    for (const auto& [goal, list] : bounds) {
      for (const auto& b : list) {
        detail::require(std::isfinite(b.value), "threshold " + b.metric + " is not finite");
      }
    }
  }
};

using MetricMap = std::map<std::string, double>;

struct GoalReport {
  Goal goal = Goal::kCompleteness;
  MetricMap metrics;
  Verdict verdict = Verdict::kFail;
  std::string threshold_set_id;
  std::vector<std::string> failed_bounds;

  bool operator==(const GoalReport&) const = default;
};

struct VerificationReport {
  int request_id = 0;
  std::string mode;
  std::vector<GoalReport> goals;  // one per Goal, in kAllGoals order
  double produced_at = 0.0;
  std::map<std::string, std::string> artifact_digests;

  const GoalReport& goal(Goal g) const { return goals.at(static_cast<std::size_t>(g)); }
  bool all_pass() const {
    return std::all_of(goals.begin(), goals.end(),
                       [](const GoalReport& r) { return r.verdict == Verdict::kPass; });
  }
  bool operator==(const VerificationReport&) const = default;
};

/// Rounds to 6 significant digits, the precision of every emitted number.
inline double round_sig6(double x) {
  if (x == 0.0 || !std::isfinite(x)) return x;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return std::strtod(buf, nullptr);
}

/// Verdicts come from the unrounded metrics; stored metrics are rounded to 6
/// significant digits. A bound whose metric is absent fails.
inline VerificationReport assemble_report(int request_id, std::string mode,
                                          const std::map<Goal, MetricMap>& inputs,
                                          const Thresholds& thresholds, double produced_at,
                                          std::map<std::string, std::string> artifact_digests = {}) {
  thresholds.validate();
  VerificationReport rep;
  rep.request_id = request_id;
  rep.mode = std::move(mode);
  rep.produced_at = round_sig6(produced_at);
  rep.artifact_digests = std::move(artifact_digests);
  for (Goal g : kAllGoals) {
    auto it = inputs.find(g);
    if (it == inputs.end()) {
      throw InvalidArgument("missing metric inputs for goal " + std::string(to_string(g)));
    }
    GoalReport gr;
    gr.goal = g;
    gr.threshold_set_id = thresholds.id;
    for (const auto& [name, value] : it->second) {
      detail::require(std::isfinite(value), "metric " + name + " is not finite");
      gr.metrics[name] = round_sig6(value);
    }
    auto bt = thresholds.bounds.find(g);
    if (bt != thresholds.bounds.end()) {
      for (const auto& b : bt->second) {
        auto m = it->second.find(b.metric);
        if (m == it->second.end()) {
          gr.failed_bounds.push_back(b.metric + " (missing)");
        } else if (!b.satisfied_by(m->second)) {
          gr.failed_bounds.push_back(b.metric);
        }
      }
    }
    gr.verdict = gr.failed_bounds.empty() ? Verdict::kPass : Verdict::kFail;
    rep.goals.push_back(std::move(gr));
  }
  return rep;
}

inline nlohmann::json report_to_json(const VerificationReport& r) {
  nlohmann::json goals = nlohmann::json::object();
  for (const auto& g : r.goals) {
    goals[std::string(to_string(g.goal))] = {{"verdict", std::string(to_string(g.verdict))},
                                             {"metrics", g.metrics},
                                             {"failed_bounds", g.failed_bounds},
                                             {"threshold_set_id", g.threshold_set_id}};
  }
  return {{"request_id", r.request_id},
          {"mode", r.mode},
          {"produced_at", r.produced_at},
          {"artifact_digests", r.artifact_digests},
          {"goals", goals}};
}

inline VerificationReport report_from_json(const nlohmann::json& j) {
  VerificationReport r;
  r.request_id = j.at("request_id").get<int>();
  r.mode = j.at("mode").get<std::string>();
  r.produced_at = j.at("produced_at").get<double>();
  r.artifact_digests = j.at("artifact_digests").get<std::map<std::string, std::string>>();
  for (Goal g : kAllGoals) {
    const auto& gj = j.at("goals").at(std::string(to_string(g)));
    GoalReport gr;
    gr.goal = g;
    gr.verdict = gj.at("verdict").get<std::string>() == "pass" ? Verdict::kPass : Verdict::kFail;
    gr.metrics = gj.at("metrics").get<MetricMap>();
    gr.failed_bounds = gj.at("failed_bounds").get<std::vector<std::string>>();
    gr.threshold_set_id = gj.at("threshold_set_id").get<std::string>();
    r.goals.push_back(std::move(gr));
  }
  return r;
}

}  // namespace fulsim
