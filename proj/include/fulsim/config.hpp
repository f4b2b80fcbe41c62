#pragma once

// Scenario configuration: a JSON document with a strict schema. Parsing
// collects every problem (unknown keys, wrong types, failed invariants)
// before reporting them together.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fulsim/errors.hpp"
#include "fulsim/federation.hpp"
#include "fulsim/ledger.hpp"
#include "fulsim/learning.hpp"
#include "fulsim/metrics.hpp"
#include "fulsim/probes.hpp"
#include "fulsim/rng.hpp"
#include "fulsim/unlearning.hpp"

namespace fulsim {

struct BackdoorProbeConfig {
  std::vector<int> client_ids;
  TriggerSpec trigger;
};

struct RequestConfig {
  int request_id = 0;
  std::vector<int> target_clients;
  std::vector<std::int64_t> target_sample_ids;
  UnlearnMode mode = UnlearnMode::kExactRetrain;
  std::optional<double> submitted_at;
  double deadline_days = kDefaultDeadlineDays;
  bool revoke = false;
  std::optional<UnlearnConfig> unlearning;  // per-request override
};

struct FaultConfig {
  bool skip_unlearning = false;
  bool tamper_ledger = false;
  bool drop_checkpoint = false;
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::uint64_t master_seed = 0;
  SyntheticSpec data;
  double holdout_fraction = 0.2;
  std::vector<std::size_t> hidden_layers;
  FederatedSchedule training;  // seed derived from master_seed
  CostModel cost_model;
  UnlearnConfig unlearning;    // seed derived from master_seed
  std::vector<RequestConfig> requests;
  std::optional<BackdoorProbeConfig> backdoor;
  bool mia = true;
  std::size_t verifiers = 3;
  Thresholds thresholds = Thresholds::defaults();
  AdherenceMode adherence_mode = AdherenceMode::kBinary;
  double time_units_per_day = 86400.0;
  FaultConfig faults;
  std::string output_dir;

  Arch arch() const {
    Arch a{data.num_features};
    a.insert(a.end(), hidden_layers.begin(), hidden_layers.end());
    a.push_back(data.num_classes);
    return a;
  }

  /// Every stream seed is derived from the master seed.
  std::uint64_t data_seed() const { return derive_seed(master_seed, seed_tag::kData); }
  std::uint64_t holdout_seed() const { return derive_seed(master_seed, seed_tag::kHoldout); }
  std::uint64_t poison_seed() const { return derive_seed(master_seed, seed_tag::kPoison); }
  std::uint64_t training_seed() const { return derive_seed(master_seed, seed_tag::kLocal); }
  std::uint64_t unlearning_seed() const { return derive_seed(master_seed, seed_tag::kRecovery); }

  /// Re-derives the seeds embedded in sub-configs; call after changing
  /// master_seed.
  void apply_seeds() {
    training.local.seed = training_seed();
    unlearning.retrain.seed = unlearning_seed();
    for (auto& r : requests) {
      if (r.unlearning) r.unlearning->retrain.seed = unlearning_seed();
    }
  }
};

namespace detail {

/// Walks a JSON tree, recording every schema violation with its path.
class ConfigReader {
 public:
  std::vector<std::string> errors;

  bool object(const nlohmann::json& j, const std::string& path, const std::set<std::string>& allowed) {
    if (!j.is_object()) {
      errors.push_back(path + ": expected an object");
      return false;
    }
    for (const auto& [k, v] : j.items()) {
      if (!allowed.count(k)) errors.push_back(path + ": unknown key '" + k + "'");
    }
    return true;
  }

  template <typename T>
  void get(const nlohmann::json& j, const std::string& path, const char* key, T& out) {
    if (!j.is_object() || !j.contains(key)) return;
    read(j.at(key), path + "." + key, out);
  }

  template <typename T>
  void require(const nlohmann::json& j, const std::string& path, const char* key, T& out) {
    if (!j.is_object() || !j.contains(key)) {
      errors.push_back(path + ": missing required key '" + key + "'");
      return;
    }
    read(j.at(key), path + "." + key, out);
  }

  void check(bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  }

  template <typename T>
  void read(const nlohmann::json& v, const std::string& path, T& out) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return type_error(path, "a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) return type_error(path, "a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return type_error(path, "a number");
      out = v.get<T>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) return type_error(path, "a non-negative integer");
      out = v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) return type_error(path, "an integer");
      out = v.get<T>();
    } else if constexpr (requires { typename T::value_type; out.push_back(typename T::value_type{}); }) {
      if (!v.is_array()) return type_error(path, "an array");
      out.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        typename T::value_type item{};
        read(v[i], path + "[" + std::to_string(i) + "]", item);
        out.push_back(item);
      }
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

 private:
  void type_error(const std::string& path, const char* expected) {
    errors.push_back(path + ": expected " + expected);
  }
};

inline void read_train(ConfigReader& r, const nlohmann::json& j, const std::string& path,
                       TrainConfig& t, std::set<std::string> extra = {}) {
  extra.insert({"epochs", "learning_rate", "batch_size"});
  if (!r.object(j, path, extra)) return;
  r.get(j, path, "epochs", t.epochs);
  r.get(j, path, "learning_rate", t.learning_rate);
  r.get(j, path, "batch_size", t.batch_size);
}

inline void read_unlearning(ConfigReader& r, const nlohmann::json& j, const std::string& path,
                            UnlearnConfig& u) {
  if (!r.object(j, path, {"ascent_steps", "ascent_lr", "grad_clip_norm", "recovery_rounds", "recovery_training"})) {
    return;
  }
  r.get(j, path, "ascent_steps", u.ascent_steps);
  r.get(j, path, "ascent_lr", u.ascent_lr);
  r.get(j, path, "grad_clip_norm", u.grad_clip_norm);
  r.get(j, path, "recovery_rounds", u.recovery_rounds);
  if (j.contains("recovery_training")) {
    read_train(r, j.at("recovery_training"), path + ".recovery_training", u.retrain);
  }
}

inline void read_thresholds(ConfigReader& r, const nlohmann::json& j, Thresholds& t) {
  std::set<std::string> allowed = {"id"};
  for (Goal g : kAllGoals) allowed.insert(std::string(to_string(g)));
  if (!r.object(j, "thresholds", allowed)) return;
  r.get(j, "thresholds", "id", t.id);
  for (Goal g : kAllGoals) {
    const std::string gname(to_string(g));
    if (!j.contains(gname)) continue;
    const std::string gpath = "thresholds." + gname;
    const auto& gj = j.at(gname);
    if (!gj.is_object()) {
      r.errors.push_back(gpath + ": expected an object");
      continue;
    }
    std::vector<Bound> bounds;
    for (const auto& [metric, spec] : gj.items()) {
      const std::string mpath = gpath + "." + metric;
      if (!r.object(spec, mpath, {"max", "min"})) continue;
      for (const char* kind : {"max", "min"}) {
        if (!spec.contains(kind)) continue;
        Bound b{metric, std::string(kind) == "max" ? Bound::Kind::kMax : Bound::Kind::kMin, 0.0};
        r.read(spec.at(kind), mpath + "." + kind, b.value);
        bounds.push_back(b);
      }
      if (spec.is_object() && spec.empty()) r.errors.push_back(mpath + ": needs 'max' or 'min'");
    }
    t.bounds[g] = std::move(bounds);
  }
}

}  // namespace detail

/// Validates a parsed JSON document. Throws ConfigError listing every problem.
inline ScenarioConfig parse_config_json(const nlohmann::json& j) {
  detail::ConfigReader r;
  ScenarioConfig c;
  r.object(j, "config", {"name", "master_seed", "data", "model", "training", "cost_model", "unlearning",
                         "requests", "probes", "thresholds", "timeliness", "verification", "faults",
                         "output"});
  r.get(j, "config", "name", c.name);
  r.require(j, "config", "master_seed", c.master_seed);

  if (j.contains("data")) {
    const auto& d = j.at("data");
    if (r.object(d, "data", {"num_clients", "num_classes", "num_features", "samples_per_client",
                             "class_mean_separation", "noise_std", "heterogeneity_shift", "label_skew",
                             "holdout_fraction"})) {
      r.get(d, "data", "num_clients", c.data.num_clients);
      r.get(d, "data", "num_classes", c.data.num_classes);
      r.get(d, "data", "num_features", c.data.num_features);
      r.get(d, "data", "samples_per_client", c.data.samples_per_client);
      r.get(d, "data", "class_mean_separation", c.data.class_mean_separation);
      r.get(d, "data", "noise_std", c.data.noise_std);
      r.get(d, "data", "heterogeneity_shift", c.data.heterogeneity_shift);
      r.get(d, "data", "holdout_fraction", c.holdout_fraction);
      std::string skew = "none";
      r.get(d, "data", "label_skew", skew);
      if (skew == "disjoint") {
        c.data.label_skew = LabelSkew::kDisjoint;
      } else if (skew != "none") {
        r.errors.push_back("data.label_skew: expected 'none' or 'disjoint'");
      }
    }
  }
  if (j.contains("model") && r.object(j.at("model"), "model", {"hidden_layers"})) {
    r.get(j.at("model"), "model", "hidden_layers", c.hidden_layers);
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    detail::read_train(r, t, "training", c.training.local, {"rounds", "participation_fraction"});
    r.get(t, "training", "rounds", c.training.rounds);
    r.get(t, "training", "participation_fraction", c.training.participation_fraction);
  }
  if (j.contains("cost_model")) {
    const auto& m = j.at("cost_model");
    if (r.object(m, "cost_model", {"time_per_local_epoch_per_sample", "time_per_aggregation",
                                   "time_per_consensus_message", "time_per_proof",
                                   "time_per_metric_eval"})) {
      r.get(m, "cost_model", "time_per_local_epoch_per_sample", c.cost_model.time_per_local_epoch_per_sample);
      r.get(m, "cost_model", "time_per_aggregation", c.cost_model.time_per_aggregation);
      r.get(m, "cost_model", "time_per_consensus_message", c.cost_model.time_per_consensus_message);
      r.get(m, "cost_model", "time_per_proof", c.cost_model.time_per_proof);
      r.get(m, "cost_model", "time_per_metric_eval", c.cost_model.time_per_metric_eval);
    }
  }
  if (j.contains("unlearning")) detail::read_unlearning(r, j.at("unlearning"), "unlearning", c.unlearning);

  if (j.contains("requests")) {
    const auto& reqs = j.at("requests");
    if (!reqs.is_array()) {
      r.errors.push_back("requests: expected an array");
    } else {
      for (std::size_t i = 0; i < reqs.size(); ++i) {
        const std::string p = "requests[" + std::to_string(i) + "]";
        const auto& rj = reqs[i];
        RequestConfig rc;
        rc.request_id = static_cast<int>(i + 1);
        if (!r.object(rj, p, {"request_id", "target_clients", "target_sample_ids", "mode", "submitted_at",
                              "deadline_days", "revoke", "unlearning"})) {
          continue;
        }
        r.get(rj, p, "request_id", rc.request_id);
        r.require(rj, p, "target_clients", rc.target_clients);
        r.get(rj, p, "target_sample_ids", rc.target_sample_ids);
        std::string mode = "exact_retrain";
        r.get(rj, p, "mode", mode);
        if (auto m = parse_unlearn_mode(mode)) {
          rc.mode = *m;
        } else {
          r.errors.push_back(p + ".mode: expected 'exact_retrain' or 'gradient_ascent'");
        }
        if (rj.contains("submitted_at")) {
          double t = 0.0;
          r.read(rj.at("submitted_at"), p + ".submitted_at", t);
          rc.submitted_at = t;
        }
        r.get(rj, p, "deadline_days", rc.deadline_days);
        r.get(rj, p, "revoke", rc.revoke);
        if (rj.contains("unlearning")) {
          UnlearnConfig u = c.unlearning;
          detail::read_unlearning(r, rj.at("unlearning"), p + ".unlearning", u);
          rc.unlearning = u;
        }
        c.requests.push_back(std::move(rc));
      }
    }
  }

  if (j.contains("probes")) {
    const auto& pj = j.at("probes");
    if (r.object(pj, "probes", {"backdoor", "mia"})) {
      r.get(pj, "probes", "mia", c.mia);
      if (pj.contains("backdoor")) {
        const auto& bj = pj.at("backdoor");
        BackdoorProbeConfig b;
        if (r.object(bj, "probes.backdoor", {"client_ids", "trigger_indices", "trigger_values",
                                             "target_label", "poison_fraction"})) {
          r.require(bj, "probes.backdoor", "client_ids", b.client_ids);
          r.require(bj, "probes.backdoor", "trigger_indices", b.trigger.trigger_indices);
          r.require(bj, "probes.backdoor", "trigger_values", b.trigger.trigger_values);
          r.get(bj, "probes.backdoor", "target_label", b.trigger.target_label);
          r.get(bj, "probes.backdoor", "poison_fraction", b.trigger.poison_fraction);
          c.backdoor = std::move(b);
        }
      }
    }
  }
  if (j.contains("thresholds")) detail::read_thresholds(r, j.at("thresholds"), c.thresholds);
  if (j.contains("timeliness")) {
    const auto& tj = j.at("timeliness");
    if (r.object(tj, "timeliness", {"adherence_mode", "time_units_per_day"})) {
      std::string mode = "binary";
      r.get(tj, "timeliness", "adherence_mode", mode);
      if (auto m = parse_adherence_mode(mode)) {
        c.adherence_mode = *m;
      } else {
        r.errors.push_back("timeliness.adherence_mode: expected 'binary' or 'proportional'");
      }
      r.get(tj, "timeliness", "time_units_per_day", c.time_units_per_day);
    }
  }
  if (j.contains("verification") && r.object(j.at("verification"), "verification", {"verifiers"})) {
    r.get(j.at("verification"), "verification", "verifiers", c.verifiers);
  }
  if (j.contains("faults")) {
    const auto& fj = j.at("faults");
    if (r.object(fj, "faults", {"skip_unlearning", "tamper_ledger", "drop_checkpoint"})) {
      r.get(fj, "faults", "skip_unlearning", c.faults.skip_unlearning);
      r.get(fj, "faults", "tamper_ledger", c.faults.tamper_ledger);
      r.get(fj, "faults", "drop_checkpoint", c.faults.drop_checkpoint);
    }
  }
  if (j.contains("output") && r.object(j.at("output"), "output", {"dir"})) {
    r.get(j.at("output"), "output", "dir", c.output_dir);
  }

  // Semantic validation. Each check is independent so all failures surface.
  auto guarded = [&](auto&& fn) {
    try {
      fn();
    } catch (const InvalidArgument& e) {
      r.errors.push_back(e.what());
    }
  };
  guarded([&] { c.data.validate(); });
  guarded([&] { c.training.validate(); });
  guarded([&] { c.cost_model.validate(); });
  guarded([&] { c.unlearning.validate(); });
  guarded([&] { c.thresholds.validate(); });
  for (auto h : c.hidden_layers) r.check(h > 0, "model.hidden_layers: widths must be positive");
  r.check(c.holdout_fraction > 0.0 && c.holdout_fraction < 1.0, "data.holdout_fraction must be in (0, 1)");
  r.check(c.time_units_per_day > 0.0, "timeliness.time_units_per_day must be positive");
  r.check(c.verifiers >= 1, "verification.verifiers must be >= 1");
  r.check(!c.requests.empty(), "requests: at least one unlearning request is required");
  const auto n_clients = static_cast<int>(c.data.num_clients);
  std::set<int> request_ids;
  for (const auto& rc : c.requests) {
    const std::string p = "request " + std::to_string(rc.request_id);
    r.check(request_ids.insert(rc.request_id).second, p + ": duplicate request_id");
    r.check(!rc.target_clients.empty(), p + ": target_clients must not be empty");
    for (int id : rc.target_clients) {
      r.check(id >= 0 && id < n_clients, p + ": target client id " + std::to_string(id) +
                                             " does not exist (" + std::to_string(n_clients) + " clients)");
    }
    r.check(rc.deadline_days > 0.0, p + ": deadline_days must be positive");
    if (rc.unlearning) guarded([&] { rc.unlearning->validate(); });
  }
  if (c.backdoor) {
    for (int id : c.backdoor->client_ids) {
      r.check(id >= 0 && id < n_clients, "probes.backdoor: client id " + std::to_string(id) + " does not exist");
    }
    guarded([&] {
      c.backdoor->trigger.validate(c.data.num_features, static_cast<int>(c.data.num_classes));
    });
  }

  if (!r.errors.empty()) {
    std::string msg = "invalid scenario config:";
    for (const auto& e : r.errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  c.apply_seeds();
  return c;
}

inline ScenarioConfig parse_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const NotFound&) {
    throw ConfigError("config file " + path.string() + " does not exist or is unreadable");
  }
  const auto j = nlohmann::json::parse(text, nullptr, false, /*ignore_comments=*/true);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return parse_config_json(j);
}

}  // namespace fulsim
