#include "dcasr/eval/metrics.hpp"

#include <algorithm>

#include "dcasr/error.hpp"

namespace dcasr::eval {

namespace {

std::size_t rank_within(std::span<const ItemId> ranked, ItemId target, std::size_t k) {
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t r = 0; r < n; ++r) {
    if (ranked[r] == target) return r + 1;
  }
  return 0;
}

void accumulate(ScopeMetrics& s, std::span<const ItemId> ranked, ItemId target, std::size_t k,
                const data::PopularityTable& pop) {
  ++s.count;
  s.recall1_sum += recall_at_k(ranked, target, 1);
  s.recall_sum += recall_at_k(ranked, target, k);
  s.mrr_sum += mrr_at_k(ranked, target, k);
  s.arp_sum += arp({std::vector<ItemId>(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(
                                                                          std::min(k, ranked.size())))},
                   pop);
}

}  // namespace

double recall_at_k(std::span<const ItemId> ranked, ItemId target, std::size_t k) {
  return rank_within(ranked, target, k) ? 1.0 : 0.0;
}

double mrr_at_k(std::span<const ItemId> ranked, ItemId target, std::size_t k) {
  const std::size_t r = rank_within(ranked, target, k);
  return r ? 1.0 / static_cast<double>(r) : 0.0;
}

double arp(const std::vector<std::vector<ItemId>>& lists, const data::PopularityTable& pop) {
  if (lists.empty()) throw InvalidInputError("arp: no recommendation lists");
  double total = 0.0;
  for (const auto& l : lists) {
    if (l.empty()) throw InvalidInputError("arp: empty recommendation list");
    double s = 0.0;
    for (ItemId i : l) {
      if (i < 0 || static_cast<std::size_t>(i) >= pop.size()) {
        throw IndexError("arp: item " + std::to_string(i) + " outside the popularity table");
      }
      s += pop.at(i);
    }
    total += s / static_cast<double>(l.size());
  }
  return total / static_cast<double>(lists.size());
}

OfflineReport evaluate_rankings(const Ranker& ranker, const std::vector<data::ClickSession>& test, std::size_t k,
                                const data::PopularityTable& pop) {
  if (k < 1) throw InvalidInputError("evaluate: K must be >= 1");
  OfflineReport rep;
  rep.k = k;
  std::vector<data::ClickSession> usable;
  for (const auto& s : test) {
    if (s.length() < 2) {
      ++rep.skipped_short;
    } else {
      usable.push_back(s);
    }
  }
  if (usable.empty()) throw EmptyDatasetError("evaluate: no test session of length >= 2");
  const auto buckets = data::bucket_by_target_popularity(usable, pop);
  const std::pair<const std::vector<data::ClickSession>*, ScopeMetrics*> scopes[] = {
      {&buckets.long_tail, &rep.long_tail}, {&buckets.mid, &rep.mid}, {&buckets.head, &rep.head}};
  for (const auto& [sessions, metrics] : scopes) {
    for (const auto& s : *sessions) {
      const auto items = s.items();
      const std::span<const ItemId> prefix(items.data(), items.size() - 1);
      const auto ranked = ranker(prefix, k);
      accumulate(*metrics, ranked, items.back(), k, pop);
      accumulate(rep.overall, ranked, items.back(), k, pop);
    }
  }
  return rep;
}

OfflineReport evaluate_offline(const sr::SrModel& model, const std::vector<data::ClickSession>& test, std::size_t k,
                               const data::PopularityTable& pop) {
  if (pop.size() != model.config().n_items) {
    throw InvalidInputError("evaluate: popularity table does not cover the model catalog");
  }
  return evaluate_rankings([&](std::span<const ItemId> prefix, std::size_t kk) { return model.recommend_topk(prefix, kk); },
                           test, k, pop);
}

}  // namespace dcasr::eval
