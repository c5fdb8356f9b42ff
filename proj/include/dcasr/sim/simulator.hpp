#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dcasr/data/dataset.hpp"
#include "dcasr/data/types.hpp"
#include "dcasr/nn/rng.hpp"

namespace dcasr::sim {

using data::ItemId;

struct UserTypeConfig {
  std::vector<ItemId> preferred;
  double train_weight = 0.5;
  double eval_weight = 0.5;
};

struct WorldConfig {
  std::size_t n_items = 1000;
  std::vector<UserTypeConfig> types;
  double mu_high = 1.0;
  double mu_low = -1.0;
  double item_noise = 0.5;  // per type and item, drawn once per world
  double user_noise = 0.5;  // per user and item, drawn once per user
  double tau = 1.0;
  double u0 = 0.0;
  std::size_t session_length = 5;
  std::size_t slate_size = 3;

  // Types prefer consecutive, disjoint blocks of the catalog.
  static WorldConfig two_types(std::size_t n_items, double train_ut1 = 0.8, double eval_ut1 = 0.5);

  void validate() const;
};

struct UserState {
  int type = 0;
  std::vector<double> utility;
};

struct World {
  WorldConfig config;
  std::vector<std::vector<double>> type_utility;  // [type][item]
  std::vector<std::string> warnings;

  std::size_t n_types() const noexcept { return config.types.size(); }
  std::vector<double> train_mixture() const;
  std::vector<double> eval_mixture() const;
  bool prefers(int type, ItemId item) const;

  // Type from the mixture, then per-item utilities with user-level noise.
  UserState sample_user(const std::vector<double>& mixture, nn::Rng& rng) const;
};

World init_world(const WorldConfig& config, std::uint64_t seed);

// Conditional logit over the slate plus a no-click option.
std::vector<double> choice_probabilities(const UserState& user, const std::vector<ItemId>& slate, double tau, double u0);
std::vector<std::uint8_t> user_choice(const UserState& user, const std::vector<ItemId>& slate, double tau, double u0,
                                      nn::Rng& rng);

std::vector<data::EpisodeLog> run_logging_policy(const World& world, std::size_t n_sessions, std::uint64_t seed);

// Given the clicked items of the current session, return K distinct items.
// The rng is private to the episode, so agents that draw from it see the same
// numbers for the same (seed, episode).
using Agent = std::function<std::vector<ItemId>(const std::vector<ItemId>& history, nn::Rng& rng)>;

struct GroupMetrics {
  std::size_t sessions = 0;
  std::size_t steps = 0;
  std::size_t clicked_steps = 0;
  std::size_t clicked_sessions = 0;
  double popularity_sum = 0.0;

  double ctr() const { return steps ? 100.0 * static_cast<double>(clicked_steps) / static_cast<double>(steps) : 0.0; }
  double arp() const { return steps ? popularity_sum / static_cast<double>(steps) : 0.0; }
  double session_click_rate() const {
    return sessions ? 100.0 * static_cast<double>(clicked_sessions) / static_cast<double>(sessions) : 0.0;
  }
};

struct OnlineMetrics {
  GroupMetrics overall;
  std::vector<GroupMetrics> per_type;
};

OnlineMetrics run_online_eval(const World& world, const Agent& agent, std::size_t n_sessions,
                              const std::vector<double>& mixture, const data::PopularityTable& pop,
                              std::uint64_t seed);

// Uniform K-subset of the catalog.
std::vector<ItemId> random_slate(std::size_t n_items, std::size_t k, nn::Rng& rng);

}  // namespace dcasr::sim
