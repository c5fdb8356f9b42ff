#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcasr/data/dataset.hpp"
#include "dcasr/data/types.hpp"
#include "dcasr/diffusion/diffusion.hpp"
#include "dcasr/scm/scm.hpp"
#include "dcasr/sr/model.hpp"

namespace dcasr::augment {

using data::ItemId;

enum class ConfounderMode { per_session, per_step };
enum class SlateMode { nearest_to_one_sample, independent_samples };

struct AugmentConfig {
  std::size_t attempts = 0;  // N
  double guidance = 2.0;     // w
  std::size_t slate_size = 3;
  std::size_t min_length = 2;
  ConfounderMode confounder = ConfounderMode::per_session;
  SlateMode slate_mode = SlateMode::nearest_to_one_sample;
  std::uint64_t seed = 0;
};

struct CounterfactualStep {
  std::size_t step = 0;  // index into the source interaction
  std::vector<ItemId> slate;
  std::vector<std::uint8_t> response;
};

struct CounterfactualSession {
  std::int64_t user = 0;
  std::size_t attempt = 0;
  std::size_t source = 0;        // index into O
  std::size_t first_click = 0;   // d'
  std::vector<ItemId> items;     // s_c
  std::vector<CounterfactualStep> steps;
};

struct AugmentStats {
  std::size_t attempts = 0;
  std::size_t skipped_no_click = 0;
  std::size_t discarded_short = 0;
  std::size_t kept = 0;
};

struct AugmentResult {
  std::vector<CounterfactualSession> sessions;
  AugmentStats stats;
};

AugmentResult synthesize_counterfactuals(const std::vector<data::SlateInteraction>& observed,
                                         const diffusion::DiffusionModel& diffusion_model,
                                         const scm::ScmModel& scm_model, const AugmentConfig& config);

// Empty when the session satisfies every provenance invariant against O;
// otherwise one message per violation.
std::vector<std::string> check_provenance(const CounterfactualSession& session,
                                          const std::vector<data::SlateInteraction>& observed);

std::vector<data::ClickSession> counterfactual_click_sessions(const std::vector<CounterfactualSession>& sessions,
                                                              std::int64_t first_id = 0);

// train_sr on O's click sessions followed by the counterfactual sequences.
sr::SrModel retrain_with_counterfactuals(const std::vector<data::ClickSession>& observed,
                                         const std::vector<CounterfactualSession>& counterfactuals,
                                         const std::vector<data::ClickSession>& valid, const sr::SrConfig& config,
                                         const sr::TrainConfig& train_config, std::uint64_t seed,
                                         sr::TrainReport* report = nullptr);

// Mean popularity of the counterfactual items (first, observed item excluded).
double mean_generated_popularity(const std::vector<CounterfactualSession>& sessions, const data::PopularityTable& pop);

void write_counterfactuals(const std::filesystem::path& path, const std::vector<CounterfactualSession>& sessions);
std::vector<CounterfactualSession> read_counterfactuals(const std::filesystem::path& path);

}  // namespace dcasr::augment
