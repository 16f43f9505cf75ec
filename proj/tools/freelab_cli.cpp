#include <CLI11.hpp>

#include <iostream>

#include "freelab/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"freelab: GUE control experiments"};
  app.require_subcommand(1);

  freelab::RunOptions run;
  std::uint64_t seed = 0;
  std::string out_dir;
  auto* run_cmd = app.add_subcommand("run", "run the experiments listed in a JSON config");
  run_cmd->add_option("--config", run.config_path, "experiment config (JSON)")->required();
  auto* seed_opt = run_cmd->add_option("--seed", seed, "master seed, overrides the config");
  auto* out_opt = run_cmd->add_option("--out-dir", out_dir, "output directory");
  run_cmd->add_option("--threads", run.threads, "worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--format", run.format, "table format")->check(CLI::IsMember({"csv", "json"}));

  std::string acc_dir;
  auto* acc_cmd = app.add_subcommand("acceptance", "run the acceptance suite");
  auto* acc_out = acc_cmd->add_option("--out-dir", acc_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*run_cmd) {
    if (*seed_opt) run.seed = seed;
    if (*out_opt) run.out_dir = out_dir;
    return freelab::run_command(run);
  }
  std::optional<std::string> dir;
  if (*acc_out) dir = acc_dir;
  return freelab::acceptance_command(dir);
}
