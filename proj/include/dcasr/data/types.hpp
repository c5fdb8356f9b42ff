#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace dcasr::data {

using ItemId = std::int64_t;

struct ClickEvent {
  ItemId item = 0;
  std::int64_t timestamp = 0;
};

struct ClickSession {
  std::int64_t session_id = 0;
  std::optional<std::int64_t> user_id;
  std::vector<ClickEvent> events;

  std::size_t length() const noexcept { return events.size(); }
  std::vector<ItemId> items() const;
  std::int64_t start_time() const { return events.front().timestamp; }
  std::int64_t end_time() const { return events.back().timestamp; }
};

// Session built from bare item ids; timestamps are the positions.
ClickSession make_session(std::int64_t session_id, const std::vector<ItemId>& items);

struct SlateStep {
  std::vector<ItemId> slate;
  std::vector<std::uint8_t> clicks;  // 1 = clicked, aligned with slate

  std::size_t click_count() const;
  bool any_click() const { return click_count() > 0; }
};

// One user's sequence of (slate, response) steps.
struct SlateInteraction {
  std::int64_t user = 0;
  std::optional<int> user_type;
  std::vector<SlateStep> steps;

  // Clicked items in step order (slate order within a step).
  std::vector<ItemId> clicked_items() const;
};

// Simulator episodes carry the user type annotation.
using EpisodeLog = SlateInteraction;

}  // namespace dcasr::data
