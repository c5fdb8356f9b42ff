#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "dcasr/error.hpp"
#include "dcasr/eval/metrics.hpp"
#include "dcasr/nn/rng.hpp"

using namespace dcasr;
using data::ItemId;

namespace {

double brute_recall(const std::vector<ItemId>& ranked, ItemId target, std::size_t k) {
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (ranked[r] == target) return r < k ? 1.0 : 0.0;
  }
  return 0.0;
}

double brute_mrr(const std::vector<ItemId>& ranked, ItemId target, std::size_t k) {
  double out = 0.0;
  for (std::size_t r = ranked.size(); r-- > 0;) {
    if (ranked[r] == target && r + 1 <= k) out = 1.0 / static_cast<double>(r + 1);
  }
  return out;
}

std::vector<data::ClickSession> random_test(std::size_t m, std::size_t n, nn::Rng& rng) {
  std::vector<data::ClickSession> out;
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<ItemId> items;
    const std::size_t len = 2 + rng.uniform_index(4);
    for (std::size_t t = 0; t < len; ++t) items.push_back(static_cast<ItemId>(rng.uniform_index(m)));
    out.push_back(data::make_session(static_cast<std::int64_t>(s), items));
  }
  return out;
}

data::PopularityTable random_pop(std::size_t m, nn::Rng& rng) {
  std::vector<std::size_t> counts(m);
  for (auto& c : counts) c = 1 + rng.uniform_index(50);
  return data::popularity_from_counts(counts);
}

}  // namespace

TEST(Metrics, SmallExamples) {
  const std::vector<ItemId> r{4, 2, 9, 1, 0, 7};
  EXPECT_EQ(eval::recall_at_k(r, 9, 5), 1.0);
  EXPECT_EQ(eval::recall_at_k(r, 7, 5), 0.0);
  EXPECT_EQ(eval::recall_at_k(r, 7, 100), 1.0);
  EXPECT_DOUBLE_EQ(eval::mrr_at_k(r, 9, 5), 1.0 / 3.0);
  EXPECT_EQ(eval::mrr_at_k(r, 4, 5), 1.0);
  EXPECT_EQ(eval::mrr_at_k(r, 33, 5), 0.0);
}

TEST(Metrics, MatchBruteForceOnRandomInstances) {
  nn::Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 2 + rng.uniform_index(20);
    std::vector<ItemId> ranked(m);
    std::iota(ranked.begin(), ranked.end(), 0);
    rng.shuffle(ranked);
    ranked.resize(1 + rng.uniform_index(m));
    const auto target = static_cast<ItemId>(rng.uniform_index(m));
    const std::size_t k = 1 + rng.uniform_index(m + 2);
    ASSERT_EQ(eval::recall_at_k(ranked, target, k), brute_recall(ranked, target, k));
    ASSERT_EQ(eval::mrr_at_k(ranked, target, k), brute_mrr(ranked, target, k));
  }
}

TEST(Metrics, ArpMatchesFlatAverage) {
  nn::Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 5 + rng.uniform_index(10);
    const auto pop = random_pop(m, rng);
    const std::size_t len = 1 + rng.uniform_index(4);
    std::vector<std::vector<ItemId>> lists(1 + rng.uniform_index(6));
    double flat = 0.0;
    for (auto& l : lists) {
      for (std::size_t i = 0; i < len; ++i) {
        l.push_back(static_cast<ItemId>(rng.uniform_index(m)));
        flat += pop.at(l.back());
      }
    }
    flat /= static_cast<double>(lists.size() * len);
    EXPECT_NEAR(eval::arp(lists, pop), flat, 1e-12);
  }
  const auto pop = data::popularity_from_counts({10, 5, 3});
  EXPECT_NEAR(eval::arp({{0, 1, 2}}, pop), 0.6, 1e-12);
  EXPECT_EQ(eval::arp({{0}, {0}}, pop), 1.0);
  EXPECT_THROW(eval::arp({{0, 3}}, pop), IndexError);
}

TEST(Offline, PerfectOracleScoresHundredEverywhere) {
  nn::Rng rng(3);
  const auto pop = random_pop(100, rng);
  auto test = random_test(100, 90, rng);
  for (std::size_t s = 0; s < test.size(); ++s) test[s].events[0].item = static_cast<ItemId>(s);
  std::map<std::vector<ItemId>, ItemId> answer;
  for (const auto& s : test) {
    auto items = s.items();
    answer[std::vector<ItemId>(items.begin(), items.end() - 1)] = items.back();
  }
  eval::Ranker oracle = [&](std::span<const ItemId> prefix, std::size_t k) {
    std::vector<ItemId> out{answer.at(std::vector<ItemId>(prefix.begin(), prefix.end()))};
    for (ItemId i = 0; out.size() < k; ++i) {
      if (i != out[0]) out.push_back(i);
    }
    return out;
  };
  const auto rep = eval::evaluate_rankings(oracle, test, 5, pop);
  for (const auto* s : {&rep.overall, &rep.long_tail, &rep.mid, &rep.head}) {
    EXPECT_EQ(s->recall(), 1.0);
    EXPECT_EQ(s->mrr(), 1.0);
  }
}

TEST(Offline, FixedSlateArpEverywhere) {
  nn::Rng rng(4);
  const auto pop = random_pop(20, rng);
  const auto test = random_test(20, 60, rng);
  const std::vector<ItemId> slate{3, 8, 1, 0, 5};
  const auto rep = eval::evaluate_rankings([&](std::span<const ItemId>, std::size_t) { return slate; }, test, 5, pop);
  const double expected = eval::arp({slate}, pop);
  for (const auto* s : {&rep.overall, &rep.long_tail, &rep.mid, &rep.head}) EXPECT_NEAR(s->arp(), expected, 1e-12);
}

TEST(Offline, BucketAggregationIdentity) {
  nn::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pop = random_pop(25, rng);
    const auto test = random_test(25, 40 + rng.uniform_index(40), rng);
    nn::Rng ranker_rng = rng.substream(static_cast<std::uint64_t>(trial));
    std::vector<std::vector<ItemId>> lists;
    eval::Ranker ranker = [&](std::span<const ItemId>, std::size_t k) {
      std::vector<ItemId> all(25);
      std::iota(all.begin(), all.end(), 0);
      ranker_rng.shuffle(all);
      all.resize(k);
      return all;
    };
    const auto rep = eval::evaluate_rankings(ranker, test, 5, pop);
    const eval::ScopeMetrics* b[] = {&rep.long_tail, &rep.mid, &rep.head};
    double r = 0, m = 0, a = 0;
    std::size_t n = 0;
    for (const auto* s : b) {
      r += s->recall() * static_cast<double>(s->count);
      m += s->mrr() * static_cast<double>(s->count);
      a += s->arp() * static_cast<double>(s->count);
      n += s->count;
    }
    ASSERT_EQ(n, rep.overall.count);
    EXPECT_NEAR(r / static_cast<double>(n), rep.overall.recall(), 1e-9);
    EXPECT_NEAR(m / static_cast<double>(n), rep.overall.mrr(), 1e-9);
    EXPECT_NEAR(a / static_cast<double>(n), rep.overall.arp(), 1e-9);
    for (const auto* s : {&rep.overall, &rep.long_tail, &rep.mid, &rep.head}) {
      EXPECT_LE(s->recall1(), s->recall());
      EXPECT_LE(s->mrr(), s->recall());
    }
  }
}

TEST(Offline, ShortSessionsSkippedAndCounted) {
  const auto pop = data::popularity_from_counts({3, 2, 1});
  std::vector<data::ClickSession> test{data::make_session(0, {1}), data::make_session(1, {0, 1}),
                                       data::make_session(2, {2, 0}), data::make_session(3, {1, 2})};
  sr::SrConfig c;
  c.n_items = 3;
  c.dim = 4;
  sr::SrModel model(c, 1);
  const auto rep = eval::evaluate_offline(model, test, 2, pop);
  EXPECT_EQ(rep.skipped_short, 1u);
  EXPECT_EQ(rep.overall.count, 3u);
  EXPECT_THROW(eval::evaluate_offline(model, {data::make_session(0, {1})}, 2, pop), EmptyDatasetError);
}
