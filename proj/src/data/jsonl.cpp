#include "dcasr/data/jsonl.hpp"

#include <fstream>
#include "json.hpp"

#include "dcasr/error.hpp"

namespace dcasr::data {

using nlohmann::json;

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DependencyError("cannot write " + path.string());
  return out;
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.filename().string() + " line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
      fn(j);
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    } catch (const Error& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
}

}  // namespace

void write_slate_log(const std::filesystem::path& path, const std::vector<SlateInteraction>& log) {
  auto out = open_out(path);
  for (const auto& inter : log) {
    json j;
    j["user"] = inter.user;
    j["user_type"] = inter.user_type ? json(*inter.user_type) : json(nullptr);
    j["steps"] = json::array();
    for (const auto& step : inter.steps) {
      json clicks = json::array();
      for (auto c : step.clicks) clicks.push_back(c != 0);
      j["steps"].push_back({{"slate", step.slate}, {"clicks", clicks}});
    }
    out << j.dump() << '\n';
  }
}

std::vector<SlateInteraction> read_slate_log(const std::filesystem::path& path) {
  std::vector<SlateInteraction> log;
  for_each_line(path, [&](const json& j) {
    SlateInteraction inter;
    inter.user = j.at("user").get<std::int64_t>();
    if (j.contains("user_type") && !j.at("user_type").is_null()) inter.user_type = j.at("user_type").get<int>();
    for (const auto& s : j.at("steps")) {
      SlateStep step;
      step.slate = s.at("slate").get<std::vector<ItemId>>();
      for (const auto& c : s.at("clicks")) step.clicks.push_back(c.get<bool>() ? 1 : 0);
      if (step.slate.size() != step.clicks.size()) throw FormatError("slate and clicks differ in length");
      inter.steps.push_back(std::move(step));
    }
    log.push_back(std::move(inter));
  });
  return log;
}

void write_sessions(const std::filesystem::path& path, const std::vector<ClickSession>& sessions) {
  auto out = open_out(path);
  for (const auto& s : sessions) {
    out << json{{"session", s.session_id}, {"items", s.items()}}.dump() << '\n';
  }
}

std::vector<ClickSession> read_sessions(const std::filesystem::path& path) {
  std::vector<ClickSession> out;
  for_each_line(path, [&](const json& j) {
    out.push_back(make_session(j.at("session").get<std::int64_t>(), j.at("items").get<std::vector<ItemId>>()));
  });
  return out;
}

}  // namespace dcasr::data
