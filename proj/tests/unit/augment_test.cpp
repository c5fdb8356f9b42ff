#include <gtest/gtest.h>

#include <filesystem>

#include "dcasr/augment/augment.hpp"
#include "dcasr/error.hpp"
#include "dcasr/sim/simulator.hpp"

using namespace dcasr;
using augment::AugmentConfig;

namespace {

diffusion::DiffusionModel small_diffusion(std::size_t m) {
  diffusion::DiffusionConfig c;
  c.n_items = m;
  c.dim = 8;
  c.T = 10;
  return diffusion::DiffusionModel(c, 3);
}

scm::ScmModel small_scm(std::size_t m) {
  scm::ScmConfig c;
  c.n_items = m;
  c.dim = 4;
  return scm::ScmModel(c, 5);
}

std::vector<data::SlateInteraction> sim_log(std::size_t m, std::size_t n, std::uint64_t seed) {
  auto cfg = sim::WorldConfig::two_types(m);
  cfg.session_length = 5;
  cfg.slate_size = 3;
  return sim::run_logging_policy(sim::init_world(cfg, seed), n, seed + 1);
}

AugmentConfig base_config(std::size_t n) {
  AugmentConfig c;
  c.attempts = n;
  c.slate_size = 3;
  c.seed = 11;
  return c;
}

}  // namespace

TEST(Augment, ClicklessSourceIsSkipped) {
  data::SlateInteraction inter;
  inter.user = 1;
  for (int j = 0; j < 4; ++j) inter.steps.push_back({{0, 1, 2}, {0, 0, 0}});
  auto r = augment::synthesize_counterfactuals({inter}, small_diffusion(20), small_scm(20), base_config(7));
  EXPECT_TRUE(r.sessions.empty());
  EXPECT_EQ(r.stats.attempts, 7u);
  EXPECT_EQ(r.stats.skipped_no_click, 7u);
}

TEST(Augment, NoClickDominanceDiscardsEverything) {
  auto s = small_scm(30);
  s.params().at("scm.b0")[0] = 100.0;
  auto r = augment::synthesize_counterfactuals(sim_log(30, 20, 1), small_diffusion(30), s, base_config(25));
  EXPECT_TRUE(r.sessions.empty());
  EXPECT_EQ(r.stats.kept, 0u);
  EXPECT_EQ(r.stats.skipped_no_click + r.stats.discarded_short, 25u);
}

TEST(Augment, BoundAndProvenanceHold) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto log = sim_log(40, 30, seed);
    auto c = base_config(60);
    c.seed = seed;
    auto r = augment::synthesize_counterfactuals(log, small_diffusion(40), small_scm(40), c);
    EXPECT_LE(r.sessions.size(), 60u);
    EXPECT_EQ(r.stats.kept + r.stats.skipped_no_click + r.stats.discarded_short, 60u);
    EXPECT_GT(r.sessions.size(), 0u);
    for (const auto& cs : r.sessions) {
      EXPECT_TRUE(augment::check_provenance(cs, log).empty());
      EXPECT_GE(cs.items.size(), 2u);
      for (const auto& st : cs.steps) {
        std::size_t clicks = 0;
        for (auto x : st.response) clicks += x;
        EXPECT_LE(clicks, log[cs.source].steps[st.step].click_count());
      }
    }
  }
}

TEST(Augment, ProvenanceCheckerFlagsTampering) {
  const auto log = sim_log(40, 30, 4);
  auto r = augment::synthesize_counterfactuals(log, small_diffusion(40), small_scm(40), base_config(40));
  ASSERT_FALSE(r.sessions.empty());
  auto cs = r.sessions.front();
  auto bad_first = cs;
  bad_first.items[0] = 39 - bad_first.items[0] == bad_first.items[0] ? 0 : 39 - bad_first.items[0];
  EXPECT_FALSE(augment::check_provenance(bad_first, log).empty());
  auto bad_source = cs;
  bad_source.source = log.size();
  EXPECT_FALSE(augment::check_provenance(bad_source, log).empty());
  auto extra = cs;
  extra.items.push_back(extra.items.back());
  EXPECT_FALSE(augment::check_provenance(extra, log).empty());
}

TEST(Augment, DeterministicUnderSeed) {
  const auto log = sim_log(40, 30, 5);
  auto d = small_diffusion(40);
  auto s = small_scm(40);
  auto a = augment::synthesize_counterfactuals(log, d, s, base_config(30));
  auto b = augment::synthesize_counterfactuals(log, d, s, base_config(30));
  ASSERT_EQ(a.sessions.size(), b.sessions.size());
  for (std::size_t i = 0; i < a.sessions.size(); ++i) {
    EXPECT_EQ(a.sessions[i].items, b.sessions[i].items);
    EXPECT_EQ(a.sessions[i].source, b.sessions[i].source);
  }
  auto c = base_config(30);
  c.seed = 12;
  auto other = augment::synthesize_counterfactuals(log, d, s, c);
  bool differs = other.sessions.size() != a.sessions.size();
  for (std::size_t i = 0; !differs && i < a.sessions.size(); ++i) differs = a.sessions[i].items != other.sessions[i].items;
  EXPECT_TRUE(differs);
}

TEST(Augment, IndependentSamplesModeGivesDistinctSlates) {
  const auto log = sim_log(40, 30, 6);
  auto c = base_config(30);
  c.slate_mode = augment::SlateMode::independent_samples;
  c.confounder = augment::ConfounderMode::per_step;
  auto r = augment::synthesize_counterfactuals(log, small_diffusion(40), small_scm(40), c);
  for (const auto& cs : r.sessions) {
    EXPECT_TRUE(augment::check_provenance(cs, log).empty());
    for (const auto& st : cs.steps) EXPECT_EQ(st.slate.size(), 3u);
  }
}

TEST(Augment, RejectsMismatchedModels) {
  EXPECT_THROW(augment::synthesize_counterfactuals(sim_log(30, 5, 1), small_diffusion(30), small_scm(31), base_config(3)),
               DependencyError);
  EXPECT_THROW(augment::synthesize_counterfactuals({}, small_diffusion(30), small_scm(30), base_config(3)),
               EmptyDatasetError);
}

TEST(Augment, JsonlRoundTrip) {
  const auto log = sim_log(40, 30, 7);
  auto r = augment::synthesize_counterfactuals(log, small_diffusion(40), small_scm(40), base_config(30));
  auto path = std::filesystem::temp_directory_path() / "dcasr_cf_roundtrip.jsonl";
  augment::write_counterfactuals(path, r.sessions);
  auto back = augment::read_counterfactuals(path);
  ASSERT_EQ(back.size(), r.sessions.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].items, r.sessions[i].items);
    EXPECT_EQ(back[i].first_click, r.sessions[i].first_click);
    ASSERT_EQ(back[i].steps.size(), r.sessions[i].steps.size());
    for (std::size_t j = 0; j < back[i].steps.size(); ++j) {
      EXPECT_EQ(back[i].steps[j].response, r.sessions[i].steps[j].response);
    }
  }
  std::filesystem::remove(path);
}

TEST(Retrain, EmptyCounterfactualsMatchPlainTraining) {
  std::vector<data::ClickSession> train;
  for (int s = 0; s < 30; ++s) train.push_back(data::make_session(s, {s % 10, (s + 1) % 10, (s + 3) % 10}));
  sr::SrConfig c;
  c.n_items = 10;
  c.dim = 8;
  sr::TrainConfig tc;
  tc.max_epochs = 3;
  tc.batch_size = 16;
  auto a = augment::retrain_with_counterfactuals(train, {}, {}, c, tc, 9);
  auto b = sr::train_sr(train, {}, c, tc, 9);
  const std::vector<data::ItemId> prefix{1, 2};
  EXPECT_EQ(a.scores(prefix), b.scores(prefix));
}

TEST(Retrain, LongTailCounterfactualsRaiseTailScore) {
  std::vector<data::ClickSession> train;
  for (int s = 0; s < 60; ++s) train.push_back(data::make_session(s, {s % 5, 5 + s % 5}));
  train.push_back(data::make_session(60, {9, 19}));
  sr::SrConfig c;
  c.n_items = 20;
  c.dim = 8;
  sr::TrainConfig tc;
  tc.max_epochs = 10;
  tc.batch_size = 16;
  tc.lr = 1e-2;
  std::vector<augment::CounterfactualSession> cf(100);
  for (auto& s : cf) s.items = {0, 19};
  auto base = augment::retrain_with_counterfactuals(train, {}, {}, c, tc, 4);
  auto aug = augment::retrain_with_counterfactuals(train, cf, {}, c, tc, 4);
  const std::vector<data::ItemId> prefix{0};
  EXPECT_GT(aug.probabilities(prefix)[19], base.probabilities(prefix)[19]);
}

TEST(Retrain, DuplicatedCorpusKeepsTopOne) {
  std::vector<data::ClickSession> train;
  for (int s = 0; s < 40; ++s) train.push_back(data::make_session(s, {s % 8, (s % 8 + 1) % 8, (s % 8 + 2) % 8}));
  std::vector<augment::CounterfactualSession> dup(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) dup[i].items = train[i].items();
  sr::SrConfig c;
  c.n_items = 8;
  c.dim = 8;
  sr::TrainConfig tc;
  tc.max_epochs = 15;
  tc.batch_size = 8;
  tc.lr = 1e-2;
  auto once = augment::retrain_with_counterfactuals(train, {}, {}, c, tc, 2);
  auto twice = augment::retrain_with_counterfactuals(train, dup, {}, c, tc, 2);
  for (int a = 0; a < 8; ++a) {
    const std::vector<data::ItemId> prefix{a, (a + 1) % 8};
    EXPECT_EQ(once.recommend_topk(prefix, 1, {}), twice.recommend_topk(prefix, 1, {}));
  }
}
