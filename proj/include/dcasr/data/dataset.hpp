#pragma once

#include <array>
#include <filesystem>
#include <limits>
#include <map>
#include <vector>

#include "dcasr/data/types.hpp"
#include "dcasr/nn/rng.hpp"

namespace dcasr::data {

enum class TimestampFormat { epoch, iso8601 };

// CSV with a header naming at least session_id, item_id, timestamp
// (user_id optional). Rows are grouped by session and stably sorted by
// timestamp; sessions come out in ascending session_id order.
std::vector<ClickSession> parse_click_log(const std::filesystem::path& path,
                                          TimestampFormat format = TimestampFormat::epoch);
std::vector<ClickSession> parse_click_log_text(const std::string& text,
                                               TimestampFormat format = TimestampFormat::epoch);

// Seconds since the Unix epoch for "YYYY-MM-DD" or "YYYY-MM-DDTHH:MM:SS[Z]".
std::int64_t parse_iso8601(const std::string& text);

// Dense re-indexing produced by filter_sessions.
struct Catalog {
  std::vector<ItemId> dense_to_raw;
  std::map<ItemId, ItemId> raw_to_dense;

  std::size_t size() const noexcept { return dense_to_raw.size(); }
  ItemId to_raw(ItemId dense) const;
  ItemId to_dense(ItemId raw) const;
};

struct FilterResult {
  std::vector<ClickSession> sessions;
  Catalog catalog;
};

inline constexpr std::size_t kNoMaxLength = std::numeric_limits<std::size_t>::max();

// Keeps clicks on the top_m most clicked items (ties: smaller id), then
// sessions with min_len <= length <= max_len, and re-indexes items densely in
// ascending raw-id order.
FilterResult filter_sessions(const std::vector<ClickSession>& sessions, std::size_t top_m, std::size_t min_len,
                             std::size_t max_len);

std::vector<ClickSession> restore_raw_ids(const std::vector<ClickSession>& sessions, const Catalog& catalog);

struct DatasetSplit {
  std::vector<ClickSession> train;
  std::vector<ClickSession> valid;
  std::vector<ClickSession> test;
  std::int64_t train_end = 0;  // latest train event
  std::int64_t valid_end = 0;  // latest train or valid event
  std::size_t dropped_overlap = 0;
};

// Orders sessions by (end time, session_id) and cuts by the given fractions.
// Valid/test sessions that start before the preceding boundary are dropped so
// every train event precedes every valid/test event.
DatasetSplit chronological_split(const std::vector<ClickSession>& sessions, std::array<double, 3> fractions);

struct PopularityTable {
  std::vector<std::size_t> counts;
  std::vector<double> pop;  // counts / max count

  std::size_t size() const noexcept { return pop.size(); }
  double at(ItemId item) const;
};

PopularityTable popularity_stats(const std::vector<ClickSession>& train, std::size_t n_items);
PopularityTable popularity_from_counts(std::vector<std::size_t> counts);
PopularityTable popularity_from_slate_log(const std::vector<SlateInteraction>& log, std::size_t n_items);

struct PopularityBuckets {
  std::vector<ClickSession> long_tail;
  std::vector<ClickSession> mid;
  std::vector<ClickSession> head;
};

// Equal-count buckets by the training popularity of each session's last item.
PopularityBuckets bucket_by_target_popularity(const std::vector<ClickSession>& test, const PopularityTable& pop);

// Slate log for click-only data: every step t >= 2 of a session becomes a
// slate holding the clicked item plus K-1 popularity-proportional negatives.
std::vector<SlateInteraction> build_slate_log(const std::vector<ClickSession>& sessions, std::size_t slate_size,
                                              const PopularityTable& pop, std::uint64_t seed);

// Click sessions from a slate log: clicked items in step order. Interactions
// with no click produce no session.
std::vector<ClickSession> click_sessions_from_log(const std::vector<SlateInteraction>& log);

// Synthetic click corpus with a planted long tail: items fall into topics,
// each session stays within one topic, and items are drawn with Zipf weights.
struct SyntheticCorpusConfig {
  std::size_t n_sessions = 10000;
  std::size_t n_items = 500;
  std::size_t n_topics = 10;
  double zipf_exponent = 1.0;
  std::size_t min_length = 3;
  std::size_t max_length = 10;
  double off_topic_rate = 0.05;
};

std::vector<ClickSession> generate_synthetic_corpus(const SyntheticCorpusConfig& config, std::uint64_t seed);

}  // namespace dcasr::data
