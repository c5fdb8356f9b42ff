#include "dcasr/sim/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dcasr/error.hpp"

namespace dcasr::sim {

WorldConfig WorldConfig::two_types(std::size_t n_items, double train_ut1, double eval_ut1) {
  WorldConfig c;
  c.n_items = n_items;
  UserTypeConfig a, b;
  for (std::size_t i = 0; i < n_items; ++i) (i < n_items / 2 ? a : b).preferred.push_back(static_cast<ItemId>(i));
  a.train_weight = train_ut1;
  b.train_weight = 1.0 - train_ut1;
  a.eval_weight = eval_ut1;
  b.eval_weight = 1.0 - eval_ut1;
  c.types = {a, b};
  return c;
}

void WorldConfig::validate() const {
  if (n_items == 0) throw InvalidInputError("world: n_items must be positive");
  if (types.empty()) throw InvalidInputError("world: at least one user type is required");
  if (!(tau > 0.0)) throw InvalidInputError("world: tau must be positive");
  if (slate_size < 1 || slate_size > n_items) throw InvalidInputError("world: slate size must be in [1, n_items]");
  if (session_length < 1) throw InvalidInputError("world: session length must be >= 1");
  if (item_noise < 0.0 || user_noise < 0.0) throw InvalidInputError("world: noise scales must be non-negative");
  for (const char* which : {"train", "eval"}) {
    double sum = 0.0;
    for (const auto& t : types) {
      const double w = which[0] == 't' ? t.train_weight : t.eval_weight;
      if (!(w > 0.0)) throw InvalidInputError(std::string("world: ") + which + " mixture weights must be positive");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidInputError(std::string("world: ") + which + " mixture must sum to 1");
  }
  for (std::size_t t = 0; t < types.size(); ++t) {
    if (types[t].preferred.empty()) throw InvalidInputError("world: user type " + std::to_string(t) + " has no preferred items");
    for (ItemId i : types[t].preferred) {
      if (i < 0 || static_cast<std::size_t>(i) >= n_items) throw InvalidInputError("world: preferred item outside catalog");
    }
  }
}

World init_world(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  World w;
  w.config = config;
  nn::Rng rng(seed, 0x5EED);
  std::vector<int> owner(config.n_items, -1);
  for (std::size_t t = 0; t < config.types.size(); ++t) {
    std::set<ItemId> pref(config.types[t].preferred.begin(), config.types[t].preferred.end());
    std::vector<double> u(config.n_items);
    for (std::size_t i = 0; i < config.n_items; ++i) {
      const bool hit = pref.count(static_cast<ItemId>(i)) > 0;
      u[i] = (hit ? config.mu_high : config.mu_low) + config.item_noise * rng.normal();
      if (hit) {
        if (owner[i] >= 0 && owner[i] != static_cast<int>(t)) {
          w.warnings.push_back("item " + std::to_string(i) + " is preferred by several user types");
        }
        owner[i] = static_cast<int>(t);
      }
    }
    w.type_utility.push_back(std::move(u));
  }
  return w;
}

std::vector<double> World::train_mixture() const {
  std::vector<double> m;
  for (const auto& t : config.types) m.push_back(t.train_weight);
  return m;
}

std::vector<double> World::eval_mixture() const {
  std::vector<double> m;
  for (const auto& t : config.types) m.push_back(t.eval_weight);
  return m;
}

bool World::prefers(int type, ItemId item) const {
  const auto& p = config.types.at(static_cast<std::size_t>(type)).preferred;
  return std::find(p.begin(), p.end(), item) != p.end();
}

UserState World::sample_user(const std::vector<double>& mixture, nn::Rng& rng) const {
  if (mixture.size() != n_types()) throw InvalidInputError("mixture size does not match the number of user types");
  UserState u;
  u.type = static_cast<int>(rng.categorical(mixture));
  u.utility = type_utility[static_cast<std::size_t>(u.type)];
  if (config.user_noise > 0.0) {
    for (auto& x : u.utility) x += config.user_noise * rng.normal();
  }
  return u;
}

std::vector<double> choice_probabilities(const UserState& user, const std::vector<ItemId>& slate, double tau,
                                         double u0) {
  std::vector<double> z(slate.size() + 1);
  for (std::size_t i = 0; i < slate.size(); ++i) z[i] = user.utility.at(static_cast<std::size_t>(slate[i])) / tau;
  z.back() = u0 / tau;
  const double mx = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (auto& x : z) {
    x = std::exp(x - mx);
    total += x;
  }
  for (auto& x : z) x /= total;
  return z;
}

std::vector<std::uint8_t> user_choice(const UserState& user, const std::vector<ItemId>& slate, double tau, double u0,
                                      nn::Rng& rng) {
  const auto p = choice_probabilities(user, slate, tau, u0);
  const std::size_t pick = rng.categorical(p);
  std::vector<std::uint8_t> out(slate.size(), 0);
  if (pick < slate.size()) out[pick] = 1;
  return out;
}

std::vector<ItemId> random_slate(std::size_t n_items, std::size_t k, nn::Rng& rng) {
  if (k > n_items) throw InvalidInputError("random_slate: slate larger than catalog");
  std::vector<ItemId> slate;
  while (slate.size() < k) {
    const auto x = static_cast<ItemId>(rng.uniform_index(n_items));
    if (std::find(slate.begin(), slate.end(), x) == slate.end()) slate.push_back(x);
  }
  return slate;
}

namespace {

// Per-episode streams: 0 user draw, 1 user choices, 2 agent.
struct EpisodeStreams {
  nn::Rng user, choice, agent;
  EpisodeStreams(const nn::Rng& root, std::size_t episode)
      : user(root.substream(episode).substream(0)),
        choice(root.substream(episode).substream(1)),
        agent(root.substream(episode).substream(2)) {}
};

}  // namespace

std::vector<data::EpisodeLog> run_logging_policy(const World& world, std::size_t n_sessions, std::uint64_t seed) {
  if (n_sessions < 1) throw InvalidInputError("run_logging_policy: n_sessions must be >= 1");
  const auto& c = world.config;
  const nn::Rng root(seed);
  const auto mixture = world.train_mixture();
  std::vector<data::EpisodeLog> out;
  out.reserve(n_sessions);
  for (std::size_t e = 0; e < n_sessions; ++e) {
    EpisodeStreams s(root, e);
    const UserState user = world.sample_user(mixture, s.user);
    data::EpisodeLog log;
    log.user = static_cast<std::int64_t>(e);
    log.user_type = user.type;
    for (std::size_t t = 0; t < c.session_length; ++t) {
      data::SlateStep step;
      step.slate = random_slate(c.n_items, c.slate_size, s.agent);
      step.clicks = user_choice(user, step.slate, c.tau, c.u0, s.choice);
      log.steps.push_back(std::move(step));
    }
    out.push_back(std::move(log));
  }
  return out;
}

OnlineMetrics run_online_eval(const World& world, const Agent& agent, std::size_t n_sessions,
                              const std::vector<double>& mixture, const data::PopularityTable& pop,
                              std::uint64_t seed) {
  if (n_sessions < 1) throw InvalidInputError("run_online_eval: n_sessions must be >= 1");
  const auto& c = world.config;
  if (pop.size() != c.n_items) throw InvalidInputError("run_online_eval: popularity table does not cover the catalog");
  const nn::Rng root(seed);
  OnlineMetrics m;
  m.per_type.resize(world.n_types());
  for (std::size_t e = 0; e < n_sessions; ++e) {
    EpisodeStreams s(root, e);
    const UserState user = world.sample_user(mixture, s.user);
    auto& group = m.per_type[static_cast<std::size_t>(user.type)];
    ++group.sessions;
    ++m.overall.sessions;
    std::vector<ItemId> history;
    for (std::size_t t = 0; t < c.session_length; ++t) {
      const auto slate = agent(history, s.agent);
      if (slate.size() != c.slate_size) {
        throw ContractError("agent returned " + std::to_string(slate.size()) + " items, expected " +
                            std::to_string(c.slate_size));
      }
      for (std::size_t i = 0; i < slate.size(); ++i) {
        if (slate[i] < 0 || static_cast<std::size_t>(slate[i]) >= c.n_items) {
          throw ContractError("agent returned an item outside the catalog");
        }
        if (std::find(slate.begin(), slate.begin() + static_cast<std::ptrdiff_t>(i), slate[i]) !=
            slate.begin() + static_cast<std::ptrdiff_t>(i)) {
          throw ContractError("agent returned duplicate item " + std::to_string(slate[i]));
        }
      }
      const auto clicks = user_choice(user, slate, c.tau, c.u0, s.choice);
      double p = 0.0;
      for (ItemId i : slate) p += pop.at(i);
      p /= static_cast<double>(slate.size());
      bool clicked = false;
      for (std::size_t i = 0; i < slate.size(); ++i) {
        if (clicks[i]) {
          clicked = true;
          history.push_back(slate[i]);
        }
      }
      for (auto* g : {&group, &m.overall}) {
        ++g->steps;
        g->clicked_steps += clicked ? 1 : 0;
        g->popularity_sum += p;
      }
    }
    if (!history.empty()) {
      ++group.clicked_sessions;
      ++m.overall.clicked_sessions;
    }
  }
  return m;
}

}  // namespace dcasr::sim
