#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "dcasr/augment/augment.hpp"
#include "dcasr/data/dataset.hpp"
#include "dcasr/diffusion/diffusion.hpp"
#include "dcasr/scm/scm.hpp"
#include "dcasr/sr/model.hpp"
#include "json.hpp"

namespace dcasr::eval {

enum class DataSource { simulator, synthetic, click_log };

struct DataSection {
  DataSource source = DataSource::simulator;
  std::string click_log;  // path, for source = click_log
  data::TimestampFormat timestamp_format = data::TimestampFormat::epoch;
  std::size_t top_m = 0;  // 0 keeps every item
  std::size_t min_length = 2;
  std::size_t max_length = 0;  // 0 means unbounded
  std::array<double, 3> split{0.8, 0.1, 0.1};
  std::size_t slate_size = 3;  // slates built around click-only data
  data::SyntheticCorpusConfig synthetic;
};

struct SimulatorSection {
  std::size_t n_items = 200;
  double train_ut1 = 0.8;
  double eval_ut1 = 0.5;
  std::size_t log_sessions = 1000;
  std::size_t test_sessions = 400;  // offline test log, eval mixture
  std::size_t eval_sessions = 400;  // online evaluation episodes
  std::size_t session_length = 5;
  std::size_t slate_size = 3;
  double mu_high = 1.0;
  double mu_low = -1.0;
  double item_noise = 0.5;
  double user_noise = 0.5;
  double tau = 1.0;
  double u0 = 0.0;
};

struct SrSection {
  std::size_t dim = 64;
  sr::Variant variant = sr::Variant::plain;
  double scale = 16.0;
  sr::TrainConfig train;
};

struct DiffusionSection {
  std::size_t dim = 32;
  std::size_t T = 500;
  double beta_1 = 1e-4;
  double beta_T = 0.02;
  std::size_t max_len = 50;
  diffusion::DiffusionTrainConfig train;
};

struct ScmSection {
  std::size_t dim = 16;
  scm::Candidate candidate = scm::Candidate::tanh;
  scm::ScmTrainConfig train;
};

struct AugmentSection {
  double n_multiplier = 1.0;  // N = n_multiplier * |O|
  double guidance = 2.0;
  std::size_t min_length = 2;
  augment::ConfounderMode confounder = augment::ConfounderMode::per_session;
  augment::SlateMode slate_mode = augment::SlateMode::nearest_to_one_sample;
};

struct EvalSection {
  std::size_t k = 5;
  bool diffusion_recommender = false;  // adds the sampler itself as a row in eval-offline
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  DataSection data;
  SimulatorSection simulator;
  SrSection sr;
  DiffusionSection diffusion;
  ScmSection scm;
  AugmentSection augment;
  EvalSection eval;
};

// Unknown keys and ill-typed values raise ConfigError naming the key path.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& c);

// FNV-1a 64 over the canonical JSON of the effective config, `out` excluded.
std::uint64_t fnv1a64(const std::string& bytes);
std::uint64_t fingerprint(const ExperimentConfig& c);
std::string hex64(std::uint64_t v);

}  // namespace dcasr::eval
