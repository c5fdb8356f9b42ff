#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dcasr/error.hpp"
#include "dcasr/eval/pipeline.hpp"

using namespace dcasr;

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual augmentation pipeline for session-based recommendation"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;
  const eval::Stage stages[] = {eval::Stage::simulate_log, eval::Stage::train_diffusion, eval::Stage::train_scm,
                                eval::Stage::augment,      eval::Stage::train_sr,        eval::Stage::eval_offline,
                                eval::Stage::eval_online,  eval::Stage::run_all};
  for (auto s : stages) {
    auto* sub = app.add_subcommand(eval::stage_name(s));
    sub->add_option("--config", config_path, "experiment config (JSON)");
    sub->add_option("--seed", seed, "global seed, overrides the config");
    sub->add_option("--out", out, "output directory, overrides the config");
    sub->add_flag("--quiet", quiet, "no progress lines on stderr");
  }
  CLI11_PARSE(app, argc, argv);
  try {
    const auto* sub = app.get_subcommands().front();
    auto cfg = config_path.empty() ? eval::parse_config(nlohmann::json::object()) : eval::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out = *out;
    const auto report = eval::run_stage(cfg, eval::parse_stage(sub->get_name()), quiet ? nullptr : &std::cerr);
    std::cout << "wrote report-" << sub->get_name() << ".json to " << cfg.out << " (fingerprint "
              << report.at("fingerprint").get<std::string>() << ")\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
