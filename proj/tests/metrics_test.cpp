#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "fulsim/metrics.hpp"
#include "test_support.hpp"

namespace fulsim {
namespace {

using testing::random_dataset;
using testing::random_params;
using testing::TempDir;

std::vector<double> random_simplex(std::mt19937_64& gen, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& v : p) s += (v = e(gen));
  for (auto& v : p) v /= s;
  return p;
}

// ---------------------------------------------------------------------------
// KL

TEST(Kl, ReferenceValues) {
  const std::vector<double> p = {0.5, 0.5}, q = {0.25, 0.75};
  // 0.5 ln 2 + 0.5 ln(2/3)
  EXPECT_NEAR(kl_divergence(p, q), 0.143841, 1e-6);
  EXPECT_NEAR(kl_divergence(p, q), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-15);
  const std::vector<double> one_hot = {1.0, 0.0};
  EXPECT_NEAR(kl_divergence(one_hot, p), std::log(2.0), 1e-15);
  EXPECT_EQ(kl_divergence(p, p), 0.0);
}

TEST(Kl, ZeroQIsFloored) {
  const std::vector<double> p = {0.5, 0.5}, q = {1.0, 0.0};
  EXPECT_NEAR(kl_divergence(p, q), 0.5 * std::log(0.5) + 0.5 * std::log(0.5 / 1e-12), 1e-9);
}

TEST(Kl, Errors) {
  const std::vector<double> p = {0.5, 0.5}, three = {0.2, 0.3, 0.5}, unnorm = {0.5, 0.6}, neg = {1.5, -0.5};
  EXPECT_THROW(kl_divergence(p, three), InvalidArgument);
  EXPECT_THROW(kl_divergence(p, unnorm), InvalidArgument);
  EXPECT_THROW(kl_divergence(neg, p), InvalidArgument);
}

TEST(Kl, GibbsInequality) {
  std::mt19937_64 gen(1);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + t % 6;
    const auto p = random_simplex(gen, n), q = random_simplex(gen, n);
    EXPECT_GE(kl_divergence(p, q), 0.0);
    EXPECT_EQ(kl_divergence(p, p), 0.0);
  }
}

// ---------------------------------------------------------------------------
// Wasserstein

TEST(Wasserstein, ReferenceValues) {
  const std::vector<double> a = {0, 1}, b = {0, 3}, z = {0}, o = {1};
  EXPECT_EQ(wasserstein_1d(a, b), 1.0);
  EXPECT_EQ(wasserstein_1d(a, a), 0.0);
  EXPECT_EQ(wasserstein_1d(z, o), 1.0);
  // Unequal sizes: {0} vs {0, 2}: CDF gap 1/2 over [0, 2) → 1.
  const std::vector<double> c = {0, 2};
  EXPECT_DOUBLE_EQ(wasserstein_1d(z, c), 1.0);
  const std::vector<double> none;
  EXPECT_THROW(wasserstein_1d(none, a), InvalidArgument);
}

TEST(Wasserstein, UnequalSizesMatchReplication) {
  // Replicating every sample k times leaves the empirical distribution, and
  // so the distance, unchanged.
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(3 + t % 4), b(2 + t % 5);
    for (auto& v : a) v = n(gen);
    for (auto& v : b) v = n(gen);
    std::vector<double> a2, b2;
    for (double v : a) a2.insert(a2.end(), b.size(), v);
    for (double v : b) b2.insert(b2.end(), a.size(), v);
    EXPECT_NEAR(wasserstein_1d(a, b), wasserstein_1d(a2, b2), 1e-9);
  }
}

TEST(Wasserstein, SymmetricAndTriangle) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> a(1 + t % 5), b(1 + t % 7), c(1 + t % 3);
    for (auto* v : {&a, &b, &c}) {
      for (auto& x : *v) x = n(gen);
    }
    EXPECT_NEAR(wasserstein_1d(a, b), wasserstein_1d(b, a), 1e-9);
    EXPECT_LE(wasserstein_1d(a, c), wasserstein_1d(a, b) + wasserstein_1d(b, c) + 1e-9);
    EXPECT_GE(wasserstein_1d(a, b), 0.0);
  }
}

// ---------------------------------------------------------------------------
// Cosine

TEST(Cosine, ReferenceValues) {
  const std::vector<double> u = {1, 1}, v = {1, 0}, w = {0, 1}, zero = {0, 0};
  EXPECT_NEAR(cosine_similarity(u, v), 0.707107, 1e-6);
  EXPECT_EQ(cosine_similarity(v, w), 0.0);
  EXPECT_EQ(cosine_similarity(u, u), 1.0);
  EXPECT_THROW(cosine_similarity(u, zero), InvalidArgument);
  const std::vector<double> three = {1, 2, 3};
  EXPECT_THROW(cosine_similarity(u, three), InvalidArgument);
}

TEST(Cosine, IdentityExactForRandomVectors) {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> u(1 + t % 30);
    for (auto& x : u) x = n(gen);
    EXPECT_EQ(cosine_similarity(u, u), 1.0);
  }
}

// ---------------------------------------------------------------------------
// CKA

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (auto& v : m.data()) v = n(gen);
  return m;
}

TEST(Cka, IdentityAndScaleInvariance) {
  const auto x = random_matrix(50, 4, 1);
  EXPECT_EQ(linear_cka(x, x), 1.0);
  Matrix twice = x;
  for (auto& v : twice.data()) v *= 2.0;
  EXPECT_NEAR(linear_cka(x, twice), 1.0, 1e-12);
  Matrix shifted = x;
  for (auto& v : shifted.data()) v += 3.0;
  EXPECT_NEAR(linear_cka(x, shifted), 1.0, 1e-12);
}

TEST(Cka, IndependentDataLow) {
  EXPECT_LT(linear_cka(random_matrix(100, 5, 2), random_matrix(100, 5, 3)), 0.2);
}

TEST(Cka, HandComputed) {
  // X = [1,2,3]ᵀ, Y = [1,0,2]ᵀ centred: x = [-1,0,1], y = [0,-1,1].
  // ‖xᵀy‖² = 1, ‖xᵀx‖_F = 2, ‖yᵀy‖_F = 2 → 1 / 4.
  Matrix x(3, 1, std::vector<double>{1, 2, 3}), y(3, 1, std::vector<double>{1, 0, 2});
  EXPECT_NEAR(linear_cka(x, y), 0.25, 1e-15);
}

TEST(Cka, Errors) {
  EXPECT_THROW(linear_cka(random_matrix(1, 3, 1), random_matrix(1, 3, 2)), InvalidArgument);
  EXPECT_THROW(linear_cka(random_matrix(5, 3, 1), random_matrix(6, 3, 2)), InvalidArgument);
  EXPECT_THROW(linear_cka(Matrix(5, 3, 1.0), random_matrix(5, 3, 2)), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Completeness

TEST(PerformanceDelta, IdentityAndError) {
  const auto p = random_params({4, 2}, 1);
  const auto d = random_dataset(30, 4, 2, 1);
  const auto r = performance_delta(p, p, d);
  EXPECT_EQ(r.accuracy_delta, 0.0);
  EXPECT_EQ(r.loss_delta, 0.0);
  Dataset empty;
  empty.num_classes = 2;
  empty.features = Matrix(0, 4);
  EXPECT_THROW(performance_delta(p, p, empty), InvalidArgument);
}

TEST(ResidualInfluence, IdentityAndArchMismatch) {
  const auto p = random_params({4, 3, 2}, 1);
  const auto d = random_dataset(30, 4, 2, 1);
  const auto r = residual_influence(p, p, d);
  EXPECT_EQ(r.param_cosine_distance, 0.0);
  EXPECT_EQ(r.output_kl, 0.0);
  EXPECT_EQ(r.cka_similarity, 1.0);
  EXPECT_THROW(residual_influence(p, random_params({4, 2}, 1), d), InvalidArgument);
}

TEST(ResidualInfluence, OutputKlIsMeanPerSampleKl) {
  const auto a = random_params({3, 2}, 1), b = random_params({3, 2}, 2);
  const auto d = random_dataset(10, 3, 2, 1);
  double expect = 0.0;
  for (std::size_t r = 0; r < d.size(); ++r) {
    const std::vector<double> x(d.features.row(r).begin(), d.features.row(r).end());
    const auto pa = testing::naive_softmax(testing::naive_logits(a, x));
    const auto pb = testing::naive_softmax(testing::naive_logits(b, x));
    for (std::size_t k = 0; k < 2; ++k) expect += pb[k] * std::log(pb[k] / pa[k]);
  }
  EXPECT_NEAR(residual_influence(a, b, d).output_kl, expect / 10.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Timeliness

TEST(Latency, ReferenceSums) {
  EXPECT_EQ(latency_breakdown({0, 0, 0, 0}).total, 0.0);
  EXPECT_EQ(latency_breakdown({20, 500, 5, 75}).total, 600.0);
  EXPECT_THROW(latency_breakdown({0, -1, 0, 0}), InvalidArgument);
}

TEST(Latency, TotalExactlyComponentSum) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 1e6);
  for (int t = 0; t < 1000; ++t) {
    const PhaseTimings p{u(gen), u(gen), u(gen), u(gen)};
    const auto l = latency_breakdown(p);
    EXPECT_EQ(l.total, ((p.consensus + p.execution) + p.aggregation) + p.verification);
    EXPECT_EQ(l.consensus, p.consensus);
    EXPECT_EQ(l.verification, p.verification);
  }
}

TEST(Throughput, Values) {
  EXPECT_EQ(throughput(10, 5.0), 2.0);
  EXPECT_EQ(throughput(0, 5.0), 0.0);
  EXPECT_THROW(throughput(1, 0.0), InvalidArgument);
}

TEST(Adherence, Modes) {
  using M = AdherenceMode;
  EXPECT_EQ(deadline_adherence(5, 10, M::kBinary), 1.0);
  EXPECT_EQ(deadline_adherence(10, 10, M::kProportional), 1.0);
  EXPECT_EQ(deadline_adherence(11, 10, M::kBinary), 0.0);
  EXPECT_EQ(deadline_adherence(20, 10, M::kProportional), 0.5);
  EXPECT_THROW(deadline_adherence(1, 0, M::kBinary), InvalidArgument);
  EXPECT_THROW(deadline_adherence(1, -3, M::kProportional), InvalidArgument);
  EXPECT_EQ(parse_adherence_mode("proportional"), M::kProportional);
  EXPECT_FALSE(parse_adherence_mode("soft").has_value());
}

// ---------------------------------------------------------------------------
// Correctness

TEST(Pvsr, Ratios) {
  EXPECT_EQ(pvsr({true, true, true}), 1.0);
  EXPECT_EQ(pvsr({true, false, true, true}), 0.75);
  EXPECT_EQ(pvsr({false}), 0.0);
  EXPECT_THROW(pvsr({}), InvalidArgument);
}

TEST(EventSchema, Matching) {
  using E = EventType;
  const auto s = EventSchema::complete();
  const std::vector<E> base = {E::kRequestSubmitted, E::kConsensusReached, E::kUnlearningExecuted,
                               E::kAggregated,       E::kProofRecorded,    E::kVerificationCompleted};
  EXPECT_TRUE(s.matches(base));
  auto revoked = base;
  revoked.push_back(E::kRequestRevoked);
  EXPECT_TRUE(s.matches(revoked));
  revoked.push_back(E::kRestored);
  EXPECT_TRUE(s.matches(revoked));
  auto restored_only = base;
  restored_only.push_back(E::kRestored);
  EXPECT_FALSE(s.matches(restored_only));
  auto swapped = base;
  std::swap(swapped[2], swapped[3]);
  EXPECT_FALSE(s.matches(swapped));
  EXPECT_FALSE(s.matches(std::vector<E>(base.begin(), base.end() - 1)));
  EXPECT_TRUE(EventSchema::before_verification().matches(std::vector<E>(base.begin(), base.end() - 1)));
}

/// One complete request lifecycle referencing two stored checkpoints.
struct AuditFixture {
  TempDir dir{"audit"};
  CheckpointStore store{dir.path()};
  std::string text;
  std::string pre_key;

  AuditFixture() {
    pre_key = store.store(random_params({3, 2}, 1));
    const auto post_key = store.store(random_params({3, 2}, 2));
    Ledger l;
    const Payload id = {{"request_id", "1"}};
    l.append(EventType::kRequestSubmitted, id, 0);
    l.append(EventType::kConsensusReached, id, 1);
    Payload exec = id;
    exec["pre_model_digest"] = pre_key;
    exec["post_model_digest"] = post_key;
    l.append(EventType::kUnlearningExecuted, exec, 2);
    l.append(EventType::kAggregated, id, 3);
    l.append(EventType::kProofRecorded, id, 4);
    l.append(EventType::kVerificationCompleted, id, 5);
    text = l.serialize();
  }
};

TEST(Audit, HonestLedgerScoresOne) {
  AuditFixture f;
  const auto r = audit_score(f.text, EventSchema::complete(), f.store);
  EXPECT_EQ(r.score, 1.0);
  EXPECT_TRUE(r.findings.empty());
}

TEST(Audit, FlippedByteDropsChainComponent) {
  AuditFixture f;
  auto t = f.text;
  const auto pos = t.find("\"request_id\":\"1\"") + 14;
  t[pos] = '7';
  const auto r = audit_score(t, EventSchema::complete(), f.store);
  EXPECT_FALSE(r.chain_valid);
  EXPECT_LE(r.score, 2.0 / 3.0);
}

TEST(Audit, MissingCheckpointDropsComponent) {
  AuditFixture f;
  f.store.erase(f.pre_key);
  const auto r = audit_score(f.text, EventSchema::complete(), f.store);
  EXPECT_FALSE(r.checkpoints_valid);
  EXPECT_TRUE(r.chain_valid);
  EXPECT_NEAR(r.score, 2.0 / 3.0, 1e-15);
}

TEST(Audit, SchemaViolationAndUnparseable) {
  AuditFixture f;
  const auto r = audit_score(f.text, EventSchema{{EventType::kRequestRevoked}, {}}, f.store);
  EXPECT_FALSE(r.schema_valid);
  EXPECT_THROW(audit_score("garbage\n", EventSchema::complete(), f.store), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Exclusivity

TEST(Exclusivity, IdentityGivesZeroDeltas) {
  std::vector<ClientState> clients;
  for (int k = 0; k < 3; ++k) {
    clients.push_back(make_client(k, random_dataset(30, 4, 2, k + 1, 100 * k), random_dataset(10, 4, 2, k + 9)));
  }
  const auto p = random_params({4, 2}, 3);
  const auto ups = probe_updates(clients, p, TrainConfig{1, 0.1, 8, 1}, {});
  const auto s = exclusivity_stability(p, p, clients, ups, ups);
  ASSERT_EQ(s.size(), 3u);
  for (const auto& c : s) {
    EXPECT_EQ(c.accuracy_delta, 0.0);
    EXPECT_EQ(c.loss_delta, 0.0);
    EXPECT_EQ(c.update_cosine, 1.0);
    EXPECT_EQ(c.behavior_wasserstein, 0.0);
  }
}

TEST(Exclusivity, MissingInputsRejected) {
  auto c = make_client(0, random_dataset(30, 4, 2, 1), random_dataset(10, 4, 2, 2));
  const auto p = random_params({4, 2}, 3);
  EXPECT_THROW(exclusivity_stability(p, p, {c}, {}, {}), InvalidArgument);
  auto no_test = make_client(1, random_dataset(30, 4, 2, 1));
  const std::map<int, std::vector<double>> ups = {{1, {1.0}}};
  EXPECT_THROW(exclusivity_stability(p, p, {no_test}, ups, ups), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Reversibility

TEST(Reversibility, RestoreAndWrongCheckpoint) {
  const auto pre = random_params({4, 2}, 1);
  const auto d = random_dataset(30, 4, 2, 1);
  const auto ok = reversibility_metrics(pre, pre, params_digest(pre), d, 1.0);
  EXPECT_TRUE(ok.state_integrity);
  EXPECT_EQ(ok.performance_consistency, 0.0);
  EXPECT_EQ(ok.restoration_latency, 1.0);
  const auto wrong = reversibility_metrics(random_params({4, 2}, 2), pre, params_digest(pre), d, 1.0);
  EXPECT_FALSE(wrong.state_integrity);
}

// ---------------------------------------------------------------------------
// Reports

std::map<Goal, MetricMap> ideal_inputs() {
  return {{Goal::kCompleteness, {{"output_kl", 0.0}}},
          {Goal::kTimeliness, {{"deadline_adherence", 1.0}}},
          {Goal::kCorrectness, {{"pvsr", 1.0}, {"audit_score", 1.0}}},
          {Goal::kExclusivity, {{"max_abs_accuracy_delta", 0.0}}},
          {Goal::kReversibility, {{"state_integrity", 1.0}, {"performance_consistency", 0.0}}}};
}

TEST(Report, IdealMetricsPassEverything) {
  const auto r = assemble_report(1, "exact_retrain", ideal_inputs(), Thresholds::defaults(), 10.0);
  ASSERT_EQ(r.goals.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(r.goals[i].goal, kAllGoals[i]);
    EXPECT_EQ(r.goals[i].verdict, Verdict::kPass);
  }
  EXPECT_TRUE(r.all_pass());
}

TEST(Report, ThresholdRuleAndMissingMetric) {
  auto in = ideal_inputs();
  in[Goal::kCorrectness]["pvsr"] = 0.75;
  auto r = assemble_report(1, "m", in, Thresholds::defaults(), 0);
  EXPECT_EQ(r.goal(Goal::kCorrectness).verdict, Verdict::kFail);
  EXPECT_EQ(r.goal(Goal::kCorrectness).failed_bounds, std::vector<std::string>{"pvsr"});
  EXPECT_EQ(r.goal(Goal::kCompleteness).verdict, Verdict::kPass);

  in = ideal_inputs();
  in[Goal::kTimeliness].clear();
  r = assemble_report(1, "m", in, Thresholds::defaults(), 0);
  EXPECT_EQ(r.goal(Goal::kTimeliness).verdict, Verdict::kFail);

  in = ideal_inputs();
  in.erase(Goal::kExclusivity);
  EXPECT_THROW(assemble_report(1, "m", in, Thresholds::defaults(), 0), InvalidArgument);

  in = ideal_inputs();
  in[Goal::kCompleteness]["output_kl"] = std::nan("");
  EXPECT_THROW(assemble_report(1, "m", in, Thresholds::defaults(), 0), InvalidArgument);
}

TEST(Report, PureAndJsonRoundTrip) {
  auto in = ideal_inputs();
  in[Goal::kCompleteness]["output_kl"] = 0.0123456789;
  const auto a = assemble_report(3, "gradient_ascent", in, Thresholds::defaults(), 12.5, {{"ledger", "ab"}});
  const auto b = assemble_report(3, "gradient_ascent", in, Thresholds::defaults(), 12.5, {{"ledger", "ab"}});
  EXPECT_EQ(a, b);
  EXPECT_EQ(report_to_json(a).dump(), report_to_json(b).dump());
  EXPECT_EQ(a.goal(Goal::kCompleteness).metrics.at("output_kl"), 0.0123457);
  EXPECT_EQ(report_from_json(nlohmann::json::parse(report_to_json(a).dump())), a);
}

TEST(Report, VerdictsMonotoneInMetrics) {
  // Moving any bounded metric toward its ideal never turns a pass into a fail.
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto th = Thresholds::defaults();
  for (int t = 0; t < 500; ++t) {
    std::map<Goal, MetricMap> in;
    for (const auto& [goal, bounds] : th.bounds) {
      for (const auto& b : bounds) in[goal][b.metric] = b.value + (u(gen) - 0.5) * 0.2;
    }
    const auto before = assemble_report(1, "m", in, th, 0);
    auto improved = in;
    for (const auto& [goal, bounds] : th.bounds) {
      for (const auto& b : bounds) {
        const double step = u(gen) * 0.1;
        improved[goal][b.metric] += b.kind == Bound::Kind::kMax ? -step : step;
      }
    }
    const auto after = assemble_report(1, "m", improved, th, 0);
    for (Goal g : kAllGoals) {
      if (before.goal(g).verdict == Verdict::kPass) EXPECT_EQ(after.goal(g).verdict, Verdict::kPass);
    }
  }
}

TEST(Report, RoundSig6) {
  EXPECT_EQ(round_sig6(0.0), 0.0);
  EXPECT_EQ(round_sig6(1234567.0), 1234570.0);
  EXPECT_EQ(round_sig6(-0.000123456789), -0.000123457);
}

}  // namespace
}  // namespace fulsim
