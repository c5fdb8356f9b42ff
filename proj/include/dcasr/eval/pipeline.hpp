#pragma once

#include <filesystem>
#include <ostream>
#include <string>

#include "dcasr/eval/config.hpp"
#include "dcasr/eval/metrics.hpp"
#include "dcasr/sim/simulator.hpp"
#include "json.hpp"

namespace dcasr::eval {

enum class Stage { simulate_log, train_diffusion, train_scm, augment, train_sr, eval_offline, eval_online, run_all };

std::string stage_name(Stage s);
Stage parse_stage(const std::string& name);

// Runs one stage (or all of them) against config.out. Each stage reads its
// inputs from the output directory, writes its artifacts there together with
// report-<stage>.json/.txt, and returns the JSON report. Missing upstream
// artifacts raise DependencyError naming the stage to run first.
nlohmann::json run_stage(const ExperimentConfig& config, Stage stage, std::ostream* log = nullptr);

// Stage seed derived from the global seed.
std::uint64_t stage_seed(std::uint64_t seed, Stage stage);

sim::WorldConfig world_config(const SimulatorSection& s);

// SR agent for online evaluation: top-K for the click history, excluding
// clicked items; a random slate while the history is empty.
sim::Agent sr_agent(const sr::SrModel& model, std::size_t slate_size);

nlohmann::json offline_json(const OfflineReport& r);
nlohmann::json online_json(const sim::OnlineMetrics& m);

}  // namespace dcasr::eval
