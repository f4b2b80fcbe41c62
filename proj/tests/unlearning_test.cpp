#include <gtest/gtest.h>

#include <fstream>

#include "fulsim/unlearning.hpp"
#include "test_support.hpp"

namespace fulsim {
namespace {

using testing::random_dataset;
using testing::TempDir;

std::vector<ClientState> clients_for(int n) {
  std::vector<ClientState> out;
  for (int k = 0; k < n; ++k) {
    out.push_back(make_client(k, random_dataset(40, 4, 2, static_cast<std::uint64_t>(k) + 3, 100 * k)));
  }
  return out;
}

const FederatedSchedule kSchedule{TrainConfig{1, 0.1, 8, 21}, 3, 1.0};

// ---------------------------------------------------------------------------
// Request state machine

TEST(RequestStatus, LegalPathAndRejections) {
  using S = RequestStatus;
  UnlearningRequest r;
  r.request_id = 4;
  EXPECT_THROW(r.advance(S::kExecuted), StateError);
  r.advance(S::kConsensusReached);
  EXPECT_THROW(r.advance(S::kVerified), StateError);
  r.advance(S::kExecuted);
  r.advance(S::kVerified);
  EXPECT_THROW(r.advance(S::kRestored), StateError);
  r.advance(S::kRevoked);
  r.advance(S::kRestored);
  EXPECT_EQ(r.status, S::kRestored);
}

TEST(RequestStatus, ExhaustiveTransitionTable) {
  using S = RequestStatus;
  const std::vector<S> all = {S::kPending, S::kConsensusReached, S::kExecuted,
                              S::kVerified, S::kRevoked, S::kRestored};
  const std::set<std::pair<S, S>> legal = {{S::kPending, S::kConsensusReached},
                                           {S::kConsensusReached, S::kExecuted},
                                           {S::kExecuted, S::kVerified},
                                           {S::kExecuted, S::kRevoked},
                                           {S::kVerified, S::kRevoked},
                                           {S::kRevoked, S::kRestored}};
  for (S from : all) {
    for (S to : all) {
      EXPECT_EQ(is_legal_transition(from, to), legal.count({from, to}) == 1)
          << to_string(from) << " -> " << to_string(to);
    }
  }
}

TEST(Deadline, DefaultIsThirtyDays) {
  EXPECT_EQ(kDefaultDeadlineDays, 30.0);
  EXPECT_EQ(default_deadline(86400.0), 30.0 * 86400.0);
  EXPECT_EQ(default_deadline(1.0), 30.0);
  EXPECT_THROW(default_deadline(0.0), InvalidArgument);
  EXPECT_EQ(UnlearningRequest{}.deadline, 2592000.0);
}

TEST(PhaseTimings, TotalIsExactSum) {
  const PhaseTimings t{20, 500, 5, 75};
  EXPECT_EQ(t.total(), 600.0);
  EXPECT_EQ(PhaseTimings{}.total(), 0.0);
  EXPECT_THROW((PhaseTimings{-1, 0, 0, 0}.validate()), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Consensus

TEST(Consensus, TimeFormulaAndPlan) {
  auto state = make_federation(clients_for(10), init_params({4, 2}, 0));
  CostModel unit;
  unit.time_per_consensus_message = 1.0;
  UnlearningRequest r;
  r.mode = UnlearnMode::kGradientAscent;
  const auto c = consensus_phase(r, state, unit);
  EXPECT_EQ(c.consensus_time, 20.0);
  EXPECT_EQ(c.plan.executor, "service_provider");
  EXPECT_EQ(c.plan.algorithm_id, "gradient_ascent");
  EXPECT_EQ(r.status, RequestStatus::kConsensusReached);
}

TEST(Consensus, RejectsNonPendingRequest) {
  auto state = make_federation(clients_for(2), init_params({4, 2}, 0));
  UnlearningRequest r;
  r.status = RequestStatus::kExecuted;
  EXPECT_THROW(consensus_phase(r, state, {}), StateError);
}

// ---------------------------------------------------------------------------
// Target selection

TEST(SplitTargets, ClientLevel) {
  auto state = make_federation(clients_for(4), init_params({4, 2}, 0));
  UnlearningRequest r;
  r.target_client_ids = {2, 0};
  const auto s = split_targets(state, r);
  EXPECT_EQ(s.target_data.size(), 80u);
  ASSERT_EQ(s.retained.size(), 2u);
  EXPECT_EQ(s.retained[0].client_id, 1);
  EXPECT_EQ(s.retained[1].client_id, 3);
  for (const auto& c : s.retained) EXPECT_FALSE(c.is_target && c.is_remaining);

  r.target_client_ids = {99};
  EXPECT_THROW(split_targets(state, r), NotFound);
  r.target_client_ids = {};
  EXPECT_THROW(split_targets(state, r), InvalidArgument);
}

TEST(SplitTargets, SampleLevel) {
  auto state = make_federation(clients_for(3), init_params({4, 2}, 0));
  UnlearningRequest r;
  r.target_client_ids = {1};
  r.target_sample_ids = {100, 105, 139};
  const auto s = split_targets(state, r);
  EXPECT_EQ(s.target_data.sample_ids, (std::vector<std::int64_t>{100, 105, 139}));
  ASSERT_EQ(s.retained.size(), 3u);
  const auto& rest = s.retained[1];
  EXPECT_EQ(rest.client_id, 1);
  EXPECT_EQ(rest.sample_count, 37u);
  EXPECT_EQ(rest.dataset->index_of(105), -1);
  EXPECT_TRUE(rest.is_target);
  EXPECT_FALSE(rest.is_remaining);

  r.target_sample_ids = {5};  // held by client 0, not the target client
  EXPECT_THROW(split_targets(state, r), NotFound);
}

// ---------------------------------------------------------------------------
// Exact retrain

TEST(Retrain, RetainingEverythingReproducesTraining) {
  const auto clients = clients_for(4);
  const auto original = train_from_scratch(clients, {4, 2}, kSchedule, {});
  const auto out = retrain_from_scratch(original.global_params, clients, {4, 2}, kSchedule, {});
  EXPECT_EQ(out.post_unlearning_digest, params_digest(original.global_params));
  EXPECT_EQ(out.pre_unlearning_digest, out.post_unlearning_digest);
}

TEST(Retrain, DeterministicWithNonNegativeTimings) {
  const auto clients = clients_for(4);
  const auto pre = train_from_scratch(clients, {4, 2}, kSchedule, {}).global_params;
  const std::vector<ClientState> retained(clients.begin() + 1, clients.end());
  const auto a = retrain_from_scratch(pre, retained, {4, 2}, kSchedule, {});
  const auto b = retrain_from_scratch(pre, retained, {4, 2}, kSchedule, {});
  EXPECT_EQ(a.post_unlearning_digest, b.post_unlearning_digest);
  EXPECT_EQ(a.timings, b.timings);
  EXPECT_NE(a.post_unlearning_digest, a.pre_unlearning_digest);
  // 3 rounds × (1 epoch × 40 samples × 0.001) compute, 3 × 1.0 aggregation.
  EXPECT_NEAR(a.timings.execution, 3 * 0.04, 1e-12);
  EXPECT_EQ(a.timings.aggregation, 3.0);
  EXPECT_EQ(a.algorithm_id, "exact_retrain");
}

TEST(Retrain, EmptyRetainedSetRejected) {
  EXPECT_THROW(retrain_from_scratch(init_params({4, 2}, 0), {}, {4, 2}, kSchedule, {}), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Gradient ascent

TEST(GradientAscent, NoStepsNoRecoveryIsIdentity) {
  const auto clients = clients_for(3);
  const auto pre = train_from_scratch(clients, {4, 2}, kSchedule, {}).global_params;
  UnlearnConfig cfg;
  cfg.ascent_steps = 0;
  cfg.recovery_rounds = 0;
  const auto out = gradient_ascent_unlearn(pre, *clients[0].dataset, {clients[1], clients[2]}, cfg, {});
  EXPECT_EQ(out.unlearned_params, pre);
  EXPECT_EQ(out.timings, PhaseTimings{});
}

TEST(GradientAscent, RaisesTargetLossAndRespectsClip) {
  const auto clients = clients_for(3);
  const auto pre = train_from_scratch(clients, {4, 2}, kSchedule, {}).global_params;
  UnlearnConfig cfg;
  cfg.ascent_steps = 5;
  cfg.ascent_lr = 0.2;
  cfg.grad_clip_norm = 0.5;
  cfg.recovery_rounds = 0;
  const auto& target = *clients[0].dataset;
  const auto out = gradient_ascent_unlearn(pre, target, {}, cfg, {});
  EXPECT_GT(evaluate(out.unlearned_params, target).mean_loss, evaluate(pre, target).mean_loss);
  double moved = 0.0;
  for (std::size_t k = 0; k < pre.coefficients.size(); ++k) {
    const double d = out.unlearned_params.coefficients[k] - pre.coefficients[k];
    moved += d * d;
  }
  // Each clipped step moves at most lr · clip.
  EXPECT_LE(std::sqrt(moved), 5 * 0.2 * 0.5 + 1e-12);
  EXPECT_NEAR(out.timings.execution, 5 * 40 * 0.001, 1e-12);
}

TEST(GradientAscent, Errors) {
  const auto clients = clients_for(2);
  const auto pre = init_params({4, 2}, 0);
  Dataset empty;
  empty.num_classes = 2;
  empty.features = Matrix(0, 4);
  EXPECT_THROW(gradient_ascent_unlearn(pre, empty, clients, {}, {}), InvalidArgument);
  UnlearnConfig cfg;
  EXPECT_THROW(gradient_ascent_unlearn(pre, *clients[0].dataset, {}, cfg, {}), InvalidArgument);
  cfg.grad_clip_norm = 0.0;
  EXPECT_THROW(gradient_ascent_unlearn(pre, *clients[0].dataset, clients, cfg, {}), InvalidArgument);
}

TEST(GradientAscent, Deterministic) {
  const auto clients = clients_for(3);
  const auto pre = train_from_scratch(clients, {4, 2}, kSchedule, {}).global_params;
  UnlearnConfig cfg;
  cfg.retrain = TrainConfig{1, 0.1, 8, 5};
  const std::vector<ClientState> retained = {clients[1], clients[2]};
  EXPECT_EQ(gradient_ascent_unlearn(pre, *clients[0].dataset, retained, cfg, {}).post_unlearning_digest,
            gradient_ascent_unlearn(pre, *clients[0].dataset, retained, cfg, {}).post_unlearning_digest);
}

// ---------------------------------------------------------------------------
// Revoke and restore

UnlearningRequest executed_request() {
  UnlearningRequest r;
  r.request_id = 9;
  r.advance(RequestStatus::kConsensusReached);
  r.advance(RequestStatus::kExecuted);
  return r;
}

TEST(Restore, RestoresPreUnlearningSnapshot) {
  TempDir dir("restore");
  CheckpointStore store(dir.path());
  const auto pre = init_params({4, 3, 2}, 5);
  const auto key = store.store(pre);
  auto r = executed_request();
  CostModel cost;
  cost.time_per_aggregation = 2.5;
  const auto out = revoke_and_restore(r, store, key, cost);
  EXPECT_EQ(params_digest(out.restored_params), key);
  EXPECT_EQ(out.restored_params, pre);
  EXPECT_EQ(out.restoration_time, 2.5);
  EXPECT_EQ(r.status, RequestStatus::kRestored);
}

TEST(Restore, MissingCheckpointIsReversibilityFailure) {
  CheckpointStore store;
  const auto key = store.store(init_params({4, 2}, 5));
  store.erase(key);
  auto r = executed_request();
  EXPECT_THROW(revoke_and_restore(r, store, key, {}), ReversibilityError);
  EXPECT_EQ(r.status, RequestStatus::kRevoked);
}

TEST(Restore, CorruptCheckpointIsReversibilityFailure) {
  TempDir dir("restore_corrupt");
  CheckpointStore store(dir.path());
  const auto key = store.store(init_params({4, 2}, 5));
  {
    std::fstream f(dir.path() / key, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(30);
    f.put('\x01');
  }
  auto r = executed_request();
  EXPECT_THROW(revoke_and_restore(r, store, key, {}), ReversibilityError);
}

TEST(Restore, RequiresExecutedOrVerified) {
  CheckpointStore store;
  const auto key = store.store(init_params({4, 2}, 5));
  UnlearningRequest pending;
  EXPECT_THROW(revoke_and_restore(pending, store, key, {}), StateError);
  auto verified = executed_request();
  verified.advance(RequestStatus::kVerified);
  EXPECT_NO_THROW(revoke_and_restore(verified, store, key, {}));
}

}  // namespace
}  // namespace fulsim
