#include <gtest/gtest.h>

#include <cmath>

#include "dcasr/error.hpp"
#include "dcasr/nn/optim.hpp"
#include "dcasr/sr/model.hpp"

using namespace dcasr;
using namespace dcasr::sr;

namespace {

SrConfig tiny(Variant v = Variant::plain) {
  SrConfig c;
  c.n_items = 7;
  c.dim = 4;
  c.variant = v;
  c.init_std = 0.5;
  return c;
}

std::vector<data::ClickSession> copies(std::vector<ItemId> items, int n) {
  std::vector<data::ClickSession> out;
  for (int i = 0; i < n; ++i) out.push_back(data::make_session(i, items));
  return out;
}

}  // namespace

TEST(Encoder, SingleItemAttendsToItself) {
  SrModel m(tiny(), 1);
  const std::vector<ItemId> p{3};
  auto a = m.attention(p);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0], 1.0);
  EXPECT_THROW(m.encode(std::vector<ItemId>{}), InvalidInputError);
  EXPECT_THROW(m.encode(std::vector<ItemId>{7}), IndexError);
}

TEST(Encoder, AveragingConfigurationReturnsEmbedding) {
  SrModel m(tiny(), 2);
  const std::size_t d = 4;
  m.params().set("sr.Wv", nn::Tensor::identity(d));
  nn::Tensor wo({2 * d, d}, 0.0);
  for (std::size_t j = 0; j < d; ++j) wo(j, j) = wo(d + j, j) = 0.5;
  m.params().set("sr.Wo", wo);
  const std::vector<ItemId> p{5, 5, 5};
  auto h = m.encode(p);
  for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(h[j], m.params().at("sr.E")(5, j), 1e-15);
  auto a = m.attention(p);
  for (double x : a) EXPECT_NEAR(x, 1.0 / 3, 1e-15);
}

TEST(Encoder, AttentionRowsSumToOne) {
  SrModel m(tiny(), 3);
  auto a = m.attention(std::vector<ItemId>{1, 4, 2, 6, 0});
  double s = 0;
  for (double x : a) s += x;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

class SrGradient : public ::testing::TestWithParam<std::tuple<Variant, int>> {};

TEST_P(SrGradient, MatchesFiniteDifferences) {
  const auto [variant, seed] = GetParam();
  SrModel base(tiny(variant), static_cast<std::uint64_t>(seed));
  const std::vector<Example> batch{{{1, 2, 3}, 4}, {{0}, 6}, {{5, 5, 2, 1}, 5}, {{6, 3}, 0}};
  nn::LossGradFn f = [&](const nn::ParamStore& p, nn::ParamStore* g) {
    SrModel m(base.config(), p);
    return m.loss_and_grad(batch, g);
  };
  EXPECT_LT(nn::finite_diff_check(f, base.params(), 1e-6), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Seeds, SrGradient,
                         ::testing::Combine(::testing::Values(Variant::plain, Variant::normalized),
                                            ::testing::Values(1, 2, 3)));

TEST(Scoring, NormalizedSelfScoreIsScale) {
  SrModel m(tiny(Variant::normalized), 4);
  std::vector<double> h(m.params().at("sr.E").row(2).begin(), m.params().at("sr.E").row(2).end());
  EXPECT_NEAR(m.score_items(h)[2], 16.0, 1e-12);
}

TEST(Scoring, NormalizedOrthogonalIsZero) {
  auto c = tiny(Variant::normalized);
  SrModel m(c, 4);
  auto& E = m.params().at("sr.E");
  E.fill(0.0);
  E(0, 0) = 3.0;
  E(1, 1) = 2.0;
  const std::vector<double> h{5.0, 0.0, 0.0, 0.0};
  auto s = m.score_items(h);
  EXPECT_EQ(s[1], 0.0);
  EXPECT_NEAR(s[0], 16.0, 1e-12);
  // zero rows are guarded by the norm floor
  EXPECT_EQ(s[3], 0.0);
}

TEST(Scoring, PlainMatchesLoops) {
  SrModel m(tiny(), 5);
  const std::vector<double> h{0.3, -1.2, 0.7, 2.0};
  auto s = m.score_items(h);
  for (std::size_t i = 0; i < 7; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < 4; ++j) acc += h[j] * m.params().at("sr.E")(i, j);
    EXPECT_EQ(s[i], acc);
  }
}

TEST(Scoring, NormalizedBounded) {
  SrModel m(tiny(Variant::normalized), 6);
  nn::Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    auto h = rng.normal_vector(4);
    for (double s : m.score_items(h)) EXPECT_LE(std::abs(s), 16.0 + 1e-12);
  }
}

TEST(TopK, Examples) {
  const std::vector<double> s{0.1, 0.9, 0.5};
  EXPECT_EQ(topk_from_scores(s, 2), (std::vector<ItemId>{1, 2}));
  EXPECT_EQ(topk_from_scores(s, 2, {1}), (std::vector<ItemId>{2, 0}));
  EXPECT_EQ(topk_from_scores(std::vector<double>{1, 1, 1, 1}, 3), (std::vector<ItemId>{0, 1, 2}));
  EXPECT_THROW(topk_from_scores(s, 3, {0}), InvalidInputError);
}

TEST(TopK, MonotoneInvariance) {
  nn::Rng rng(7);
  for (int k = 0; k < 100; ++k) {
    auto s = rng.normal_vector(20);
    s[3] = s[4];
    auto shifted = s, doubled = s;
    for (auto& x : shifted) x += 5.0;
    for (auto& x : doubled) x *= 2.0;
    const std::set<ItemId> ex{static_cast<ItemId>(rng.uniform_index(20))};
    const auto base = topk_from_scores(s, 5, ex);
    EXPECT_EQ(base, topk_from_scores(shifted, 5, ex));
    EXPECT_EQ(base, topk_from_scores(doubled, 5, ex));
  }
}

TEST(Train, MemorizesUniqueConditional) {
  SrConfig c;
  c.n_items = 2;
  c.dim = 8;
  TrainConfig tc;
  tc.lr = 0.05;
  tc.max_epochs = 100;
  auto m = train_sr(copies({0, 1}, 50), {}, c, tc, 1);
  EXPECT_GT(m.probabilities(std::vector<ItemId>{0})[1], 0.9);
}

TEST(Train, LossDecreasesOnToy) {
  std::vector<data::ClickSession> toy;
  for (int i = 0; i < 40; ++i) toy.push_back(data::make_session(i, {i % 5, (i % 5 + 1) % 5, (i % 5 + 2) % 5}));
  SrConfig c;
  c.n_items = 5;
  c.dim = 8;
  TrainConfig tc;
  tc.lr = 0.01;
  tc.batch_size = 16;
  const auto ex = make_examples(toy);
  double prev = 1e300;
  for (std::size_t e = 1; e <= 3; ++e) {
    tc.max_epochs = e;
    const double loss = train_sr(toy, {}, c, tc, 9).mean_loss(ex);
    EXPECT_LE(loss, prev);
    prev = loss;
  }
  tc.max_epochs = 5;
  TrainReport rep;
  train_sr(toy, {}, c, tc, 9, &rep);
  EXPECT_LE(rep.epoch_loss[4], rep.epoch_loss[0]);
}

TEST(Train, DeterministicAndEmptyUnionIsIdentity) {
  std::vector<data::ClickSession> s{data::make_session(1, {0, 1, 2}), data::make_session(2, {2, 3})};
  SrConfig c;
  c.n_items = 4;
  c.dim = 4;
  TrainConfig tc;
  tc.max_epochs = 3;
  auto a = train_sr(s, {}, c, tc, 5), b = train_sr(s, {}, c, tc, 5);
  EXPECT_TRUE(a.checkpoint().bit_equal(b.checkpoint()));
  auto joined = s;
  const std::vector<data::ClickSession> counterfactual;
  joined.insert(joined.end(), counterfactual.begin(), counterfactual.end());
  EXPECT_TRUE(train_sr(joined, {}, c, tc, 5).checkpoint().bit_equal(a.checkpoint()));
  EXPECT_FALSE(train_sr(s, {}, c, tc, 6).checkpoint().bit_equal(a.checkpoint()));
}

TEST(Train, EmptyDataIsError) {
  SrConfig c;
  c.n_items = 3;
  EXPECT_THROW(train_sr({data::make_session(1, {0})}, {}, c, {}, 1), EmptyDatasetError);
}

TEST(Train, EarlyStoppingKeepsBestEpoch) {
  std::vector<data::ClickSession> train;
  for (int i = 0; i < 60; ++i) train.push_back(data::make_session(i, {i % 6, (i + 1) % 6}));
  std::vector<data::ClickSession> valid;
  for (int i = 0; i < 6; ++i) valid.push_back(data::make_session(100 + i, {i, (i + 1) % 6}));
  SrConfig c;
  c.n_items = 6;
  c.dim = 8;
  TrainConfig tc;
  tc.lr = 0.02;
  tc.max_epochs = 40;
  tc.patience = 2;
  TrainReport rep;
  auto m = train_sr(train, valid, c, tc, 3, &rep);
  ASSERT_GT(rep.best_epoch, 0u);
  EXPECT_EQ(recall_at_1(m, valid), rep.valid_recall1[rep.best_epoch - 1]);
  EXPECT_LE(rep.valid_recall1.size(), rep.best_epoch + tc.patience);
}

TEST(Checkpoint, RoundTrip) {
  SrModel m(tiny(Variant::normalized), 8);
  auto bytes = nn::serialize_checkpoint(m.checkpoint());
  auto back = SrModel::from_checkpoint(nn::deserialize_checkpoint(bytes));
  EXPECT_EQ(back.config().variant, Variant::normalized);
  EXPECT_TRUE(back.params().bit_equal(m.params()));
  nn::ParamStore broken = m.params();
  EXPECT_THROW(SrModel::from_checkpoint(broken), FormatError);
  broken.erase("sr.Wq");
  EXPECT_THROW(SrModel(tiny(), broken), ConsistencyError);
}
