#pragma once

#include <filesystem>
#include <vector>

#include "dcasr/data/types.hpp"

namespace dcasr::data {

// {"user":..,"user_type":..,"steps":[{"slate":[..],"clicks":[..]}]} per line.
void write_slate_log(const std::filesystem::path& path, const std::vector<SlateInteraction>& log);
std::vector<SlateInteraction> read_slate_log(const std::filesystem::path& path);

// {"session":id,"items":[..]} per line.
void write_sessions(const std::filesystem::path& path, const std::vector<ClickSession>& sessions);
std::vector<ClickSession> read_sessions(const std::filesystem::path& path);

}  // namespace dcasr::data
