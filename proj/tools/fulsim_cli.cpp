// Command-line front end: run a scenario, audit a ledger, or print a report.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fulsim/config.hpp"
#include "fulsim/scenario.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerificationFailed = 1;
constexpr int kExitUsage = 2;

void print_report_table(const fulsim::VerificationReport& r) {
  std::printf("request %d (%s)\n", r.request_id, r.mode.c_str());
  for (const auto& g : r.goals) {
    std::printf("  %-14s %-4s", std::string(fulsim::to_string(g.goal)).c_str(),
                std::string(fulsim::to_string(g.verdict)).c_str());
    if (!g.failed_bounds.empty()) {
      std::printf("  failed:");
      for (const auto& f : g.failed_bounds) std::printf(" %s", f.c_str());
    }
    std::printf("\n");
  }
}

int cmd_run(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  fulsim::ScenarioConfig cfg = fulsim::parse_config(config_path);
  if (seed) {
    cfg.master_seed = *seed;
    cfg.apply_seeds();
  }
  std::filesystem::path dir = out_dir.empty() ? std::filesystem::path(cfg.output_dir) : std::filesystem::path(out_dir);
  if (dir.empty()) throw fulsim::ConfigError("no output directory given (argument or output.dir)");
  const auto summary = fulsim::run_scenario(cfg, dir);
  fulsim::emit_reports(summary, dir);
  for (const auto& r : summary.requests) {
    print_report_table(r.report);
    for (const auto& f : r.findings) std::printf("  finding: %s\n", f.c_str());
  }
  std::printf("final model %s\nledger head %s\nsimulated time %.6g, wall clock %.2fs\n",
              summary.final_model_digest.c_str(), summary.ledger_head.c_str(),
              summary.elapsed_simulated_time, summary.wall_clock_seconds);
  return summary.all_pass() ? kExitOk : kExitVerificationFailed;
}

int cmd_verify_ledger(const std::string& ledger, const std::string& checkpoints) {
  const auto out = fulsim::verify_ledger_cmd(ledger, checkpoints);
  std::printf("entries: %zu\n", out.entries);
  if (out.audit.chain_valid) {
    std::printf("chain: valid\n");
  } else {
    std::printf("chain: broken at entry %zu (%s)\n", out.audit.chain.broken_at, out.audit.chain.reason.c_str());
  }
  std::printf("schema: %s\ncheckpoints: %s\naudit score: %.6g\n", out.audit.schema_valid ? "ok" : "FAIL",
              out.audit.checkpoints_valid ? "ok" : "FAIL", out.audit.score);
  for (const auto& f : out.findings) std::printf("finding: %s\n", f.c_str());
  return out.exit_code == 0 ? kExitOk : kExitVerificationFailed;
}

int cmd_report(const std::string& summary_path) {
  const auto summary = nlohmann::json::parse(fulsim::read_text_file(summary_path), nullptr, false);
  if (summary.is_discarded()) throw fulsim::InvalidArgument(summary_path + " is not valid JSON");
  const auto root = std::filesystem::path(summary_path).parent_path();
  bool all_pass = true;
  std::printf("scenario %s\n", summary.at("scenario").get<std::string>().c_str());
  for (const auto& r : summary.at("requests")) {
    const auto report = fulsim::read_report(root / r.at("report").get<std::string>());
    print_report_table(report);
    all_pass = all_pass && report.all_pass();
  }
  std::printf("final model %s\n", summary.at("final_model_digest").get<std::string>().c_str());
  return all_pass ? kExitOk : kExitVerificationFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated unlearning simulator and verification harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Train, unlearn, and verify a scenario");
  run->add_option("config", config_path, "Scenario config (JSON)")->required();
  run->add_option("output_dir", out_dir, "Output directory (defaults to output.dir in the config)");
  run->add_option("--seed", seed, "Override the master seed");

  std::string ledger_path, checkpoints_dir;
  auto* verify = app.add_subcommand("verify-ledger", "Audit a ledger and its checkpoint store");
  verify->add_option("ledger", ledger_path, "Ledger file (one entry per line)")->required();
  verify->add_option("checkpoints", checkpoints_dir, "Checkpoint directory")->required();

  std::string summary_path;
  auto* report = app.add_subcommand("report", "Print the verdicts of a finished run");
  report->add_option("summary", summary_path, "summary.json written by 'run'")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir, seed);
    if (*verify) return cmd_verify_ledger(ledger_path, checkpoints_dir);
    if (*report) return cmd_report(summary_path);
  } catch (const fulsim::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  } catch (const fulsim::NotFound& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
