#include "dcasr/data/dataset.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "dcasr/error.hpp"

namespace dcasr::data {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

bool parse_int(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stoll(s, &pos);
  } catch (...) {
    return false;
  }
  return pos == s.size();
}

}  // namespace

std::int64_t parse_iso8601(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char tail = 0;
  int n = 0;
  if (text.size() == 10) {
    n = std::sscanf(text.c_str(), "%4d-%2d-%2d%c", &y, &mo, &d, &tail);
    if (n != 3) throw FormatError("bad ISO-8601 date '" + text + "'");
  } else {
    char sep = 0;
    n = std::sscanf(text.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d%c", &y, &mo, &d, &sep, &h, &mi, &s, &tail);
    const bool ok = (n == 7 || (n == 8 && tail == 'Z' && text.back() == 'Z')) && (sep == 'T' || sep == ' ') &&
                    text.size() == (n == 8 ? 20u : 19u);
    if (!ok) throw FormatError("bad ISO-8601 timestamp '" + text + "'");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) throw FormatError("invalid calendar value in '" + text + "'");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + s;
}

std::vector<ClickSession> parse_click_log_text(const std::string& text, TimestampFormat format) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line).empty() || line.find_first_not_of(" \t\r") == std::string::npos) {
    throw FormatError("click log line 1: empty file or missing header");
  }
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  };
  const int c_session = column("session_id"), c_item = column("item_id"), c_time = column("timestamp"),
            c_user = column("user_id");
  for (auto [idx, name] : {std::pair{c_session, "session_id"}, {c_item, "item_id"}, {c_time, "timestamp"}}) {
    if (idx < 0) throw FormatError(std::string("click log line 1: missing column '") + name + "'");
  }

  struct Row {
    std::int64_t session, item, time, order;
    std::optional<std::int64_t> user;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    const std::string where = "click log line " + std::to_string(line_no);
    if (f.size() != header.size()) throw FormatError(where + ": expected " + std::to_string(header.size()) + " fields");
    Row r{};
    r.order = static_cast<std::int64_t>(rows.size());
    if (!parse_int(f[c_session], r.session)) throw FormatError(where + ": bad session_id '" + f[c_session] + "'");
    if (!parse_int(f[c_item], r.item)) throw FormatError(where + ": bad item_id '" + f[c_item] + "'");
    if (format == TimestampFormat::epoch) {
      if (!parse_int(f[c_time], r.time)) throw FormatError(where + ": unparseable timestamp '" + f[c_time] + "'");
    } else {
      try {
        r.time = parse_iso8601(f[c_time]);
      } catch (const FormatError& e) {
        throw FormatError(where + ": unparseable timestamp: " + e.what());
      }
    }
    if (c_user >= 0 && !f[c_user].empty()) {
      std::int64_t u;
      if (!parse_int(f[c_user], u)) throw FormatError(where + ": bad user_id '" + f[c_user] + "'");
      r.user = u;
    }
    rows.push_back(r);
  }
  if (rows.empty()) throw FormatError("click log line " + std::to_string(line_no) + ": no data rows");

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.session != b.session) return a.session < b.session;
    return a.time < b.time;
  });
  std::vector<ClickSession> out;
  for (const auto& r : rows) {
    if (out.empty() || out.back().session_id != r.session) {
      out.emplace_back();
      out.back().session_id = r.session;
    }
    if (r.user && !out.back().user_id) out.back().user_id = r.user;
    out.back().events.push_back({r.item, r.time});
  }
  return out;
}

std::vector<ClickSession> parse_click_log(const std::filesystem::path& path, TimestampFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open click log: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_click_log_text(ss.str(), format);
}

ItemId Catalog::to_raw(ItemId dense) const {
  if (dense < 0 || static_cast<std::size_t>(dense) >= dense_to_raw.size()) {
    throw IndexError("catalog: dense id " + std::to_string(dense) + " out of range");
  }
  return dense_to_raw[static_cast<std::size_t>(dense)];
}

ItemId Catalog::to_dense(ItemId raw) const {
  auto it = raw_to_dense.find(raw);
  if (it == raw_to_dense.end()) throw IndexError("catalog: unknown raw id " + std::to_string(raw));
  return it->second;
}

FilterResult filter_sessions(const std::vector<ClickSession>& sessions, std::size_t top_m, std::size_t min_len,
                             std::size_t max_len) {
  if (top_m < 1) throw InvalidInputError("filter_sessions: top_m must be >= 1");
  if (min_len < 1 || min_len > max_len) throw InvalidInputError("filter_sessions: need 1 <= min_len <= max_len");
  std::map<ItemId, std::size_t> counts;
  for (const auto& s : sessions) {
    for (const auto& e : s.events) ++counts[e.item];
  }
  std::vector<std::pair<ItemId, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > top_m) ranked.resize(top_m);
  std::set<ItemId> keep;
  for (const auto& [item, _] : ranked) keep.insert(item);

  std::vector<ClickSession> kept;
  std::set<ItemId> used;
  for (const auto& s : sessions) {
    ClickSession t = s;
    t.events.clear();
    for (const auto& e : s.events) {
      if (keep.count(e.item)) t.events.push_back(e);
    }
    if (t.events.size() >= min_len && t.events.size() <= max_len) {
      for (const auto& e : t.events) used.insert(e.item);
      kept.push_back(std::move(t));
    }
  }
  if (kept.empty()) throw EmptyDatasetError("filter_sessions: every session was filtered out");
  FilterResult out;
  for (ItemId raw : used) {
    out.catalog.raw_to_dense[raw] = static_cast<ItemId>(out.catalog.dense_to_raw.size());
    out.catalog.dense_to_raw.push_back(raw);
  }
  for (auto& s : kept) {
    for (auto& e : s.events) e.item = out.catalog.raw_to_dense.at(e.item);
  }
  out.sessions = std::move(kept);
  return out;
}

std::vector<ClickSession> restore_raw_ids(const std::vector<ClickSession>& sessions, const Catalog& catalog) {
  std::vector<ClickSession> out = sessions;
  for (auto& s : out) {
    for (auto& e : s.events) e.item = catalog.to_raw(e.item);
  }
  return out;
}

DatasetSplit chronological_split(const std::vector<ClickSession>& sessions, std::array<double, 3> fractions) {
  if (sessions.size() < 3) throw InvalidInputError("chronological_split: need at least 3 sessions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw InvalidInputError("chronological_split: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidInputError("chronological_split: fractions must sum to 1");
  for (const auto& s : sessions) {
    if (s.events.empty()) throw InvalidInputError("chronological_split: empty session");
  }
  std::vector<const ClickSession*> order;
  for (const auto& s : sessions) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(), [](const ClickSession* a, const ClickSession* b) {
    if (a->end_time() != b->end_time()) return a->end_time() < b->end_time();
    return a->session_id < b->session_id;
  });
  const std::size_t n = order.size();
  std::size_t n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  std::size_t n_valid = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 2);
  n_valid = std::clamp<std::size_t>(n_valid, 1, n - n_train - 1);

  DatasetSplit out;
  for (std::size_t i = 0; i < n_train; ++i) {
    out.train.push_back(*order[i]);
    out.train_end = i == 0 ? order[i]->end_time() : std::max(out.train_end, order[i]->end_time());
  }
  out.valid_end = out.train_end;
  for (std::size_t i = n_train; i < n_train + n_valid; ++i) {
    if (order[i]->start_time() < out.train_end) {
      ++out.dropped_overlap;
      continue;
    }
    out.valid.push_back(*order[i]);
    out.valid_end = std::max(out.valid_end, order[i]->end_time());
  }
  const std::int64_t boundary = std::max(out.valid_end, order[n_train + n_valid - 1]->end_time());
  for (std::size_t i = n_train + n_valid; i < n; ++i) {
    if (order[i]->start_time() < boundary) {
      ++out.dropped_overlap;
      continue;
    }
    out.test.push_back(*order[i]);
  }
  out.valid_end = boundary;
  return out;
}

double PopularityTable::at(ItemId item) const {
  if (item < 0 || static_cast<std::size_t>(item) >= pop.size()) {
    throw IndexError("popularity: unknown item " + std::to_string(item));
  }
  return pop[static_cast<std::size_t>(item)];
}

PopularityTable popularity_from_counts(std::vector<std::size_t> counts) {
  PopularityTable t;
  t.counts = std::move(counts);
  const std::size_t mx = t.counts.empty() ? 0 : *std::max_element(t.counts.begin(), t.counts.end());
  t.pop.assign(t.counts.size(), 0.0);
  if (mx > 0) {
    for (std::size_t i = 0; i < t.counts.size(); ++i) {
      t.pop[i] = static_cast<double>(t.counts[i]) / static_cast<double>(mx);
    }
  }
  return t;
}

PopularityTable popularity_stats(const std::vector<ClickSession>& train, std::size_t n_items) {
  if (train.empty()) throw EmptyDatasetError("popularity_stats: empty training set");
  std::vector<std::size_t> counts(n_items, 0);
  for (const auto& s : train) {
    for (const auto& e : s.events) {
      if (e.item < 0 || static_cast<std::size_t>(e.item) >= n_items) {
        throw IndexError("popularity_stats: item " + std::to_string(e.item) + " outside catalog");
      }
      ++counts[static_cast<std::size_t>(e.item)];
    }
  }
  return popularity_from_counts(std::move(counts));
}

PopularityTable popularity_from_slate_log(const std::vector<SlateInteraction>& log, std::size_t n_items) {
  std::vector<std::size_t> counts(n_items, 0);
  for (const auto& inter : log) {
    for (ItemId item : inter.clicked_items()) {
      if (item < 0 || static_cast<std::size_t>(item) >= n_items) throw IndexError("popularity: item outside catalog");
      ++counts[static_cast<std::size_t>(item)];
    }
  }
  return popularity_from_counts(std::move(counts));
}

PopularityBuckets bucket_by_target_popularity(const std::vector<ClickSession>& test, const PopularityTable& pop) {
  std::vector<const ClickSession*> order;
  for (const auto& s : test) {
    if (s.events.empty()) throw InvalidInputError("bucket_by_target_popularity: session without target");
    order.push_back(&s);
  }
  std::stable_sort(order.begin(), order.end(), [&](const ClickSession* a, const ClickSession* b) {
    const double pa = pop.at(a->events.back().item), pb = pop.at(b->events.back().item);
    if (pa != pb) return pa < pb;
    return a->session_id < b->session_id;
  });
  const std::size_t n = order.size(), base = n / 3, rem = n % 3;
  const std::size_t n_long = base + (rem >= 1 ? 1 : 0);
  const std::size_t n_mid = base + (rem >= 2 ? 1 : 0);
  PopularityBuckets out;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_long ? out.long_tail : (i < n_long + n_mid ? out.mid : out.head);
    dst.push_back(*order[i]);
  }
  return out;
}

std::vector<SlateInteraction> build_slate_log(const std::vector<ClickSession>& sessions, std::size_t slate_size,
                                              const PopularityTable& pop, std::uint64_t seed) {
  if (slate_size < 2) throw InvalidInputError("build_slate_log: slate size must be >= 2");
  const std::size_t m = pop.size();
  if (m < slate_size) throw InvalidInputError("build_slate_log: catalog smaller than slate size");
  nn::Rng root(seed);
  std::vector<SlateInteraction> out;
  std::vector<double> weights(m);
  for (std::size_t si = 0; si < sessions.size(); ++si) {
    const auto& s = sessions[si];
    if (s.events.size() < 2) continue;
    nn::Rng rng = root.substream(si);
    SlateInteraction inter;
    inter.user = s.user_id.value_or(s.session_id);
    std::set<ItemId> session_items;
    for (const auto& e : s.events) {
      if (e.item < 0 || static_cast<std::size_t>(e.item) >= m) throw IndexError("build_slate_log: item outside catalog");
      session_items.insert(e.item);
    }
    for (std::size_t t = 1; t < s.events.size(); ++t) {
      const ItemId clicked = s.events[t].item;
      std::vector<ItemId> slate{clicked};
      // Preferred pool: popularity-weighted items outside the session. When it
      // cannot fill the slate, fall back to other non-clicked items uniformly.
      for (std::size_t i = 0; i < m; ++i) {
        const auto id = static_cast<ItemId>(i);
        weights[i] = session_items.count(id) ? 0.0 : static_cast<double>(pop.counts[i]);
      }
      while (slate.size() < slate_size) {
        double total = 0.0;
        for (double w : weights) total += w;
        std::size_t pick;
        if (total > 0.0) {
          pick = rng.categorical(weights);
        } else {
          std::vector<std::size_t> outside, inside;
          for (std::size_t i = 0; i < m; ++i) {
            const auto id = static_cast<ItemId>(i);
            if (std::find(slate.begin(), slate.end(), id) != slate.end()) continue;
            (session_items.count(id) ? inside : outside).push_back(i);
          }
          const auto& from = outside.empty() ? inside : outside;
          pick = from[rng.uniform_index(from.size())];
        }
        slate.push_back(static_cast<ItemId>(pick));
        weights[pick] = 0.0;
      }
      rng.shuffle(slate);
      SlateStep step;
      step.slate = slate;
      step.clicks.assign(slate.size(), 0);
      for (std::size_t i = 0; i < slate.size(); ++i) step.clicks[i] = slate[i] == clicked ? 1 : 0;
      inter.steps.push_back(std::move(step));
    }
    out.push_back(std::move(inter));
  }
  return out;
}

std::vector<ClickSession> click_sessions_from_log(const std::vector<SlateInteraction>& log) {
  std::vector<ClickSession> out;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto items = log[i].clicked_items();
    if (items.empty()) continue;
    ClickSession s = make_session(static_cast<std::int64_t>(i), items);
    s.user_id = log[i].user;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ClickSession> generate_synthetic_corpus(const SyntheticCorpusConfig& c, std::uint64_t seed) {
  if (c.n_items == 0 || c.n_topics == 0 || c.n_topics > c.n_items || c.min_length < 1 || c.min_length > c.max_length ||
      c.max_length > c.n_items / c.n_topics) {
    throw InvalidInputError("synthetic corpus: inconsistent configuration");
  }
  nn::Rng rng(seed);
  // Popularity rank of each item is a random permutation; topic = item % n_topics.
  std::vector<std::size_t> rank(c.n_items);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  rng.shuffle(rank);
  std::vector<double> weight(c.n_items);
  for (std::size_t i = 0; i < c.n_items; ++i) weight[i] = 1.0 / std::pow(static_cast<double>(rank[i] + 1), c.zipf_exponent);

  std::vector<ClickSession> out;
  out.reserve(c.n_sessions);
  for (std::size_t s = 0; s < c.n_sessions; ++s) {
    nn::Rng r = rng.substream(s);
    const std::size_t topic = r.uniform_index(c.n_topics);
    const std::size_t len = c.min_length + r.uniform_index(c.max_length - c.min_length + 1);
    std::vector<double> w_topic(c.n_items, 0.0), w_all = weight;
    for (std::size_t i = topic; i < c.n_items; i += c.n_topics) w_topic[i] = weight[i];
    ClickSession session;
    session.session_id = static_cast<std::int64_t>(s);
    for (std::size_t t = 0; t < len; ++t) {
      const bool off = r.uniform() < c.off_topic_rate;
      const std::size_t item = r.categorical(off ? w_all : w_topic);
      w_topic[item] = 0.0;
      w_all[item] = 0.0;
      session.events.push_back({static_cast<ItemId>(item), static_cast<std::int64_t>(s * 1000 + t)});
    }
    out.push_back(std::move(session));
  }
  return out;
}

}  // namespace dcasr::data
