#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ftnn/experiment.hpp"

// Exit codes: 0 success, 1 domain/config/data errors (reported as JSON on
// stderr), 2 unexpected internal failures.
int main(int argc, char** argv) {
  CLI::App app{"Communication-efficient fine-tuning simulator with a differential-privacy auditor"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "experiment config (JSON)")->required();
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--seed", seed, "override the config's run seed");
    sub->add_option("--threads", threads, "override the config's thread count");
  };

  CLI::App* pre = app.add_subcommand("pretrain", "train and checkpoint the base model");
  CLI::App* fin = app.add_subcommand("finetune", "run the distributed fine-tuning rounds");
  CLI::App* dpa =
      app.add_subcommand("dp-audit", "estimate (epsilon, delta) over adjacent user sets");
  CLI::App* com = app.add_subcommand("comm-report", "account the protocol's upload volume");
  for (CLI::App* sub : {pre, fin, dpa, com}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    nlohmann::json err;
    err["error"] = {{"kind", "Usage"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return e.get_exit_code();
  }

  ftnn::Command cmd = ftnn::Command::pretrain;
  if (fin->parsed()) cmd = ftnn::Command::finetune;
  if (dpa->parsed()) cmd = ftnn::Command::dp_audit;
  if (com->parsed()) cmd = ftnn::Command::comm_report;

  try {
    const nlohmann::json summary = ftnn::run_command(cmd, config, out, seed, threads);
    std::cout << summary.dump(2) << "\n";
    return 0;
  } catch (const ftnn::Error& e) {
    nlohmann::json err;
    err["error"] = {{"kind", e.kind_name()}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = {{"kind", "Internal"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 2;
  }
}
