#include "dcasr/data/types.hpp"

#include <algorithm>

namespace dcasr::data {

std::vector<ItemId> ClickSession::items() const {
  std::vector<ItemId> out;
  out.reserve(events.size());
  for (const auto& e : events) out.push_back(e.item);
  return out;
}

ClickSession make_session(std::int64_t session_id, const std::vector<ItemId>& items) {
  ClickSession s;
  s.session_id = session_id;
  for (std::size_t i = 0; i < items.size(); ++i) s.events.push_back({items[i], static_cast<std::int64_t>(i)});
  return s;
}

std::size_t SlateStep::click_count() const {
  return static_cast<std::size_t>(std::count(clicks.begin(), clicks.end(), std::uint8_t{1}));
}

std::vector<ItemId> SlateInteraction::clicked_items() const {
  std::vector<ItemId> out;
  for (const auto& step : steps) {
    for (std::size_t i = 0; i < step.slate.size(); ++i) {
      if (step.clicks[i]) out.push_back(step.slate[i]);
    }
  }
  return out;
}

}  // namespace dcasr::data
