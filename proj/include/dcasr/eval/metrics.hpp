#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dcasr/data/dataset.hpp"
#include "dcasr/data/types.hpp"
#include "dcasr/sr/model.hpp"

namespace dcasr::eval {

using data::ItemId;

double recall_at_k(std::span<const ItemId> ranked, ItemId target, std::size_t k);
double mrr_at_k(std::span<const ItemId> ranked, ItemId target, std::size_t k);
// Mean over lists of the mean item popularity. Unknown items raise IndexError.
double arp(const std::vector<std::vector<ItemId>>& lists, const data::PopularityTable& pop);

// Sums over evaluated sessions; means are fractions in [0, 1].
struct ScopeMetrics {
  std::size_t count = 0;
  double recall1_sum = 0.0;
  double recall_sum = 0.0;
  double mrr_sum = 0.0;
  double arp_sum = 0.0;

  double recall1() const { return count ? recall1_sum / static_cast<double>(count) : 0.0; }
  double recall() const { return count ? recall_sum / static_cast<double>(count) : 0.0; }
  double mrr() const { return count ? mrr_sum / static_cast<double>(count) : 0.0; }
  double arp() const { return count ? arp_sum / static_cast<double>(count) : 0.0; }
};

struct OfflineReport {
  std::size_t k = 5;
  ScopeMetrics overall, long_tail, mid, head;
  std::size_t skipped_short = 0;
};

// Top-k list for a prefix, most relevant first.
using Ranker = std::function<std::vector<ItemId>(std::span<const ItemId> prefix, std::size_t k)>;

OfflineReport evaluate_rankings(const Ranker& ranker, const std::vector<data::ClickSession>& test, std::size_t k,
                                const data::PopularityTable& pop);
OfflineReport evaluate_offline(const sr::SrModel& model, const std::vector<data::ClickSession>& test, std::size_t k,
                               const data::PopularityTable& pop);

}  // namespace dcasr::eval
