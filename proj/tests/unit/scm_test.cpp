#include <gtest/gtest.h>

#include <cmath>

#include "dcasr/error.hpp"
#include "dcasr/nn/optim.hpp"
#include "dcasr/scm/scm.hpp"
#include "dcasr/sim/simulator.hpp"

using namespace dcasr;
using namespace dcasr::scm;

namespace {

ScmConfig tiny(Candidate c = Candidate::tanh) {
  ScmConfig cfg;
  cfg.n_items = 6;
  cfg.dim = 3;
  cfg.candidate = c;
  return cfg;
}

data::SlateInteraction interaction(std::vector<std::pair<std::vector<ItemId>, std::vector<std::uint8_t>>> steps) {
  data::SlateInteraction s;
  for (auto& [slate, clicks] : steps) s.steps.push_back({slate, clicks});
  return s;
}

void randomize(ScmModel& m, std::uint64_t seed) {
  nn::Rng rng(seed);
  for (const auto& name : m.params().names()) {
    for (auto& v : m.params().at(name).values()) v = 0.5 * rng.normal();
  }
}

}  // namespace

TEST(Interest, NoClicksKeepState) {
  ScmModel m(tiny(), 1);
  const auto h = m.initial_state();
  EXPECT_EQ(m.update_interest(h, std::vector<ItemId>{}), h);
  EXPECT_THROW(m.update_interest(h, std::vector<ItemId>{6}), IndexError);
}

TEST(Interest, SaturatedGateWithIdentityCandidate) {
  ScmModel m(tiny(Candidate::linear), 2);
  m.params().set("scm.bz", nn::Tensor({3}, 1000.0));
  m.params().set("scm.Wh", nn::Tensor::identity(3));
  m.params().set("scm.Uh", nn::Tensor({3, 3}, 0.0));
  m.params().set("scm.bh", nn::Tensor({3}, 0.0));
  const std::vector<double> h{0.3, -0.2, 0.9};
  auto out = m.update_interest(h, std::vector<ItemId>{1, 4});
  const auto& V = m.params().at("scm.V");
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out[j], 0.5 * (V(1, j) + V(4, j)), 1e-15);
}

TEST(Confounder, FlooredSigmaAndMonteCarloMean) {
  ScmModel m(tiny(), 3);
  m.params().set("scm.mu", nn::Tensor::vector({0.5, -1, 2, 0, 0.1, 3}));
  m.params().set("scm.log_sigma", nn::Tensor({6}, -100.0));
  nn::Rng rng(4);
  auto b = m.sample_confounder(rng);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(b[i], m.params().at("scm.mu")[i], 1e-5);
  EXPECT_EQ(m.sigma()[0], 1e-6);

  m.params().set("scm.log_sigma", nn::Tensor::vector({0, std::log(2.0), -1, 0.5, 0, 0}));
  const int n = 100000;
  std::vector<double> sum(6, 0.0);
  nn::Rng r2(5);
  for (int k = 0; k < n; ++k) {
    auto x = m.sample_confounder(r2);
    for (int i = 0; i < 6; ++i) sum[i] += x[i];
  }
  const auto s = m.sigma();
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(sum[i] / n, m.params().at("scm.mu")[i], 3 * s[i] / std::sqrt(double(n)));
  nn::Rng a(9), c(9);
  EXPECT_EQ(m.sample_confounder(a), m.sample_confounder(c));
}

TEST(Response, SoftmaxCases) {
  ScmModel m(tiny(), 5);
  m.params().at("scm.V").fill(0.0);
  const std::vector<double> h{1, 1, 1}, beta(6, 0.0);
  const std::vector<ItemId> slate{0, 2, 5};
  for (double p : m.response_probabilities(h, slate, beta)) EXPECT_NEAR(p, 0.25, 1e-15);
  m.params().at("scm.V")(0, 0) = 1.0;
  auto p = m.response_probabilities(h, slate, beta);
  EXPECT_NEAR(p[0], std::exp(1.0) / (std::exp(1.0) + 3), 1e-15);
  EXPECT_NEAR(p[0], 0.4754, 1e-4);
}

TEST(Response, SumsToOne) {
  ScmModel m(tiny(), 6);
  randomize(m, 6);
  nn::Rng rng(1);
  for (int k = 0; k < 200; ++k) {
    auto h = rng.normal_vector(3);
    auto beta = m.sample_confounder(rng);
    auto p = m.response_probabilities(h, std::vector<ItemId>{4, 1, 3, 0}, beta);
    double s = 0;
    for (double x : p) {
      EXPECT_GE(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Response, SelectionRule) {
  const std::vector<double> p{0.1, 0.5, 0.15, 0.25};
  EXPECT_EQ(select_response(p, 0), (std::vector<std::uint8_t>{0, 0, 0}));
  EXPECT_EQ(select_response(p, 1), (std::vector<std::uint8_t>{0, 1, 0}));
  EXPECT_EQ(select_response(p, 2), (std::vector<std::uint8_t>{0, 1, 1}));
  EXPECT_EQ(select_response(std::vector<double>{0.2, 0.2, 0.1, 0.5}, 3), (std::vector<std::uint8_t>{0, 0, 0}));
  EXPECT_EQ(select_response(std::vector<double>{0.3, 0.3, 0.1, 0.3}, 1), (std::vector<std::uint8_t>{0, 0, 0}));
  EXPECT_EQ(select_response(std::vector<double>{0.3, 0.3, 0.1, 0.2}, 1), (std::vector<std::uint8_t>{1, 0, 0}));
  EXPECT_THROW(select_response(p, 4), InvalidInputError);
}

TEST(Response, NoClickDominanceAndShiftInvariance) {
  ScmModel m(tiny(), 7);
  randomize(m, 7);
  nn::Rng rng(2);
  const std::vector<ItemId> slate{5, 2, 0};
  for (int k = 0; k < 100; ++k) {
    auto h = rng.normal_vector(3);
    auto beta = m.sample_confounder(rng);
    auto logits = m.response_logits(h, slate, beta);
    const std::size_t budget = rng.uniform_index(4);
    auto base = m.generate_response(h, slate, beta, budget);
    std::size_t count = 0;
    for (auto x : base) count += x;
    EXPECT_LE(count, budget);
    auto shifted = logits;
    for (auto& x : shifted) x += 3.7;
    EXPECT_EQ(select_response(shifted, budget), base);
    EXPECT_EQ(select_response(m.response_probabilities(h, slate, beta), budget), base);
  }
  m.params().set("scm.b0", nn::Tensor({1}, 1e6));
  for (std::size_t budget = 0; budget <= 3; ++budget) {
    EXPECT_EQ(m.generate_response(m.initial_state(), slate, m.sample_confounder(rng), budget),
              (std::vector<std::uint8_t>(3, 0)));
  }
}

TEST(Kl, GaussianFormula) {
  ScmModel m(tiny(), 8);
  EXPECT_EQ(m.kl(), 0.0);
  m.params().at("scm.mu")[2] = 1.0;
  EXPECT_NEAR(m.kl(), 0.5, 1e-15);
  randomize(m, 8);
  EXPECT_GT(m.kl(), 0.0);
}

TEST(Elbo, MatchesForwardComputation) {
  ScmModel m(tiny(), 9);
  randomize(m, 9);
  m.params().set("scm.log_sigma", nn::Tensor({6}, -100.0));
  std::vector<data::SlateInteraction> batch{
      interaction({{{0, 1, 2}, {0, 1, 0}}, {{3, 4, 5}, {0, 0, 0}}, {{2, 5, 1}, {1, 0, 1}}}),
      interaction({{{5, 4, 3}, {1, 0, 0}}})};
  double nll = 0;
  const std::vector<double> beta(m.params().at("scm.mu").values().begin(), m.params().at("scm.mu").values().end());
  for (const auto& inter : batch) {
    auto h = m.initial_state();
    for (const auto& st : inter.steps) {
      auto p = m.response_probabilities(h, st.slate, beta);
      std::vector<ItemId> clicked;
      for (std::size_t n = 0; n < st.slate.size(); ++n) {
        if (st.clicks[n]) {
          nll -= std::log(p[n]);
          clicked.push_back(st.slate[n]);
        }
      }
      if (clicked.empty()) nll -= std::log(p.back());
      h = m.update_interest(h, clicked);
    }
  }
  const double loss = m.elbo_loss(batch, 1, 0.25, nullptr);
  EXPECT_NEAR(loss, nll + 0.25 * m.kl(), 1e-4);
  batch[0].steps[0].clicks.pop_back();
  EXPECT_THROW(m.elbo_loss(batch, 1, 0.25, nullptr), DataError);
}

class ScmGradient : public ::testing::TestWithParam<std::tuple<Candidate, int>> {};

TEST_P(ScmGradient, MatchesFiniteDifferences) {
  const auto [cand, seed] = GetParam();
  ScmModel base(tiny(cand), static_cast<std::uint64_t>(seed));
  randomize(base, static_cast<std::uint64_t>(seed) + 100);
  // Two clicked steps roll the state through two updates before the last.
  std::vector<data::SlateInteraction> batch{
      interaction({{{0, 1, 2}, {0, 1, 0}}, {{3, 4, 5}, {1, 0, 1}}, {{2, 5, 1}, {0, 0, 0}}, {{4, 0, 3}, {0, 0, 1}}}),
      interaction({{{5, 4, 3}, {0, 0, 0}}, {{1, 0, 2}, {0, 1, 0}}})};
  nn::LossGradFn f = [&](const nn::ParamStore& p, nn::ParamStore* g) {
    ScmModel m(base.config(), p);
    return m.elbo_loss(batch, 77, 0.5, g);
  };
  EXPECT_LT(nn::finite_diff_check(f, base.params(), 1e-6), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Seeds, ScmGradient,
                         ::testing::Combine(::testing::Values(Candidate::tanh, Candidate::linear),
                                            ::testing::Values(1, 2, 3)));

TEST(Train, LearnsAlwaysClickedItem) {
  auto wc = sim::WorldConfig::two_types(20);
  auto world = sim::init_world(wc, 1);
  for (auto& u : world.type_utility) u[0] = 10.0;
  auto log = sim::run_logging_policy(world, 600, 2);
  ScmConfig c;
  c.n_items = 20;
  ScmTrainConfig tc;
  tc.epochs = 15;
  auto m = train_scm(log, c, tc, 3);
  const std::vector<double> beta(m.params().at("scm.mu").values().begin(), m.params().at("scm.mu").values().end());
  double total = 0;
  int n = 0;
  for (const auto& inter : log) {
    auto h = m.initial_state();
    for (const auto& st : inter.steps) {
      auto p = m.response_probabilities(h, st.slate, beta);
      for (std::size_t k = 0; k < st.slate.size(); ++k) {
        if (st.slate[k] == 0) {
          total += p[k];
          ++n;
        }
      }
      std::vector<ItemId> clicked;
      for (std::size_t k = 0; k < st.slate.size(); ++k) {
        if (st.clicks[k]) clicked.push_back(st.slate[k]);
      }
      h = m.update_interest(h, clicked);
    }
  }
  ASSERT_GT(n, 50);
  EXPECT_GT(total / n, 0.8);
}

TEST(Train, ElboDecreasesAndUnseenItemsStayAtPrior) {
  auto wc = sim::WorldConfig::two_types(30);
  auto world = sim::init_world(wc, 2);
  auto log = sim::run_logging_policy(world, 200, 3);
  // Items 30..39 exist in the catalog but are never shown.
  ScmConfig c;
  c.n_items = 40;
  ScmTrainConfig tc;
  tc.epochs = 5;
  ScmTrainReport rep;
  auto m = train_scm(log, c, tc, 4, &rep);
  EXPECT_LT(rep.epoch_loss[4], rep.epoch_loss[0]);
  for (std::size_t i = 30; i < 40; ++i) EXPECT_LT(std::abs(m.params().at("scm.mu")[i]), 0.1);
  auto again = train_scm(log, c, tc, 4);
  EXPECT_TRUE(again.checkpoint().bit_equal(m.checkpoint()));
  EXPECT_THROW(train_scm({}, c, tc, 4), EmptyDatasetError);
}

TEST(Checkpoint, RoundTrip) {
  ScmModel m(tiny(Candidate::linear), 10);
  auto back = ScmModel::from_checkpoint(nn::deserialize_checkpoint(nn::serialize_checkpoint(m.checkpoint())));
  EXPECT_TRUE(back.params().bit_equal(m.params()));
  EXPECT_EQ(back.config().candidate, Candidate::linear);
  EXPECT_THROW(ScmModel::from_checkpoint(m.params()), FormatError);
}
