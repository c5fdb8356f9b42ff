#include "dcasr/augment/augment.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "dcasr/error.hpp"
#include "json.hpp"

namespace dcasr::augment {

using nlohmann::json;

namespace {

std::vector<ItemId> generate_slate(const diffusion::DiffusionModel& d, const nn::Tensor& table,
                                   const std::vector<ItemId>& prefix, const AugmentConfig& c, nn::Rng& rng) {
  const std::set<ItemId> exclude(prefix.begin(), prefix.end());
  if (c.slate_mode == SlateMode::nearest_to_one_sample) {
    return diffusion::retrieve_slate(d.sample(prefix, c.guidance, rng), table, c.slate_size, exclude);
  }
  std::set<ItemId> taken = exclude;
  std::vector<ItemId> slate;
  for (std::size_t k = 0; k < c.slate_size; ++k) {
    const ItemId item = diffusion::retrieve_slate(d.sample(prefix, c.guidance, rng), table, 1, taken)[0];
    slate.push_back(item);
    taken.insert(item);
  }
  return slate;
}

}  // namespace

AugmentResult synthesize_counterfactuals(const std::vector<data::SlateInteraction>& observed,
                                         const diffusion::DiffusionModel& dm, const scm::ScmModel& sm,
                                         const AugmentConfig& c) {
  if (observed.empty()) throw EmptyDatasetError("augment: observed log is empty");
  if (c.attempts < 1) throw InvalidInputError("augment: N must be >= 1");
  if (c.slate_size < 1) throw InvalidInputError("augment: slate size must be >= 1");
  if (c.min_length < 2) throw InvalidInputError("augment: minimum length must be >= 2");
  if (dm.config().n_items != sm.config().n_items) {
    throw DependencyError("augment: diffusion and response models disagree on the catalog size (" +
                          std::to_string(dm.config().n_items) + " vs " + std::to_string(sm.config().n_items) + ")");
  }
  const nn::Tensor table = dm.item_embeddings();
  const nn::Rng root(c.seed);
  AugmentResult out;
  for (std::size_t a = 0; a < c.attempts; ++a) {
    ++out.stats.attempts;
    nn::Rng pick = root.substream(a).substream(0);
    nn::Rng slate_rng = root.substream(a).substream(1);
    nn::Rng conf_rng = root.substream(a).substream(2);
    const std::size_t src = pick.uniform_index(observed.size());
    const auto& inter = observed[src];
    std::size_t first = inter.steps.size();
    for (std::size_t j = 0; j < inter.steps.size(); ++j) {
      if (inter.steps[j].slate.size() != inter.steps[j].clicks.size()) {
        throw DataError("augment: interaction " + std::to_string(src) + " has a slate/response length mismatch");
      }
      if (first == inter.steps.size() && inter.steps[j].any_click()) first = j;
    }
    if (first == inter.steps.size()) {
      ++out.stats.skipped_no_click;
      continue;
    }
    CounterfactualSession cs;
    cs.user = inter.user;
    cs.attempt = a;
    cs.source = src;
    cs.first_click = first;
    const auto& fs = inter.steps[first];
    for (std::size_t n = 0; n < fs.slate.size(); ++n) {
      if (fs.clicks[n]) {
        cs.items.push_back(fs.slate[n]);
        break;
      }
    }
    auto h = sm.update_interest(sm.initial_state(), cs.items);
    auto beta = sm.sample_confounder(conf_rng);
    for (std::size_t j = first + 1; j < inter.steps.size(); ++j) {
      if (c.slate_size + cs.items.size() > dm.config().n_items) break;
      if (c.confounder == ConfounderMode::per_step) beta = sm.sample_confounder(conf_rng);
      CounterfactualStep step;
      step.step = j;
      step.slate = generate_slate(dm, table, cs.items, c, slate_rng);
      const std::size_t budget = std::min(inter.steps[j].click_count(), step.slate.size());
      const auto probs = sm.response_probabilities(h, step.slate, beta);
      step.response = scm::select_response(probs, budget);
      std::size_t best = step.slate.size();
      for (std::size_t n = 0; n < step.slate.size(); ++n) {
        if (step.response[n] && (best == step.slate.size() || probs[n] > probs[best])) best = n;
      }
      if (best < step.slate.size()) {
        const ItemId item = step.slate[best];
        cs.items.push_back(item);
        h = sm.update_interest(h, std::vector<ItemId>{item});
      }
      cs.steps.push_back(std::move(step));
    }
    if (cs.items.size() >= c.min_length) {
      ++out.stats.kept;
      out.sessions.push_back(std::move(cs));
    } else {
      ++out.stats.discarded_short;
    }
  }
  return out;
}

std::vector<std::string> check_provenance(const CounterfactualSession& s,
                                          const std::vector<data::SlateInteraction>& observed) {
  std::vector<std::string> bad;
  if (s.source >= observed.size()) return {"source index outside the observed log"};
  const auto& inter = observed[s.source];
  if (s.items.empty()) bad.push_back("empty counterfactual session");
  if (s.first_click >= inter.steps.size()) return {"d' outside the source interaction"};
  for (std::size_t j = 0; j < s.first_click; ++j) {
    if (inter.steps[j].any_click()) bad.push_back("d' is not the first clicked step");
  }
  const auto& fs = inter.steps[s.first_click];
  bool first_ok = false;
  for (std::size_t n = 0; n < fs.slate.size() && !s.items.empty(); ++n) {
    first_ok = first_ok || (fs.slate[n] == s.items[0] && fs.clicks[n]);
  }
  if (!first_ok) bad.push_back("first item was not clicked in the source step");
  if (s.items.size() > inter.steps.size() - s.first_click) bad.push_back("session longer than L - d' + 1");
  std::set<ItemId> seen;
  for (ItemId i : s.items) {
    if (!seen.insert(i).second) bad.push_back("item " + std::to_string(i) + " repeats");
  }
  std::size_t next = 1, expected_step = s.first_click + 1;
  for (const auto& st : s.steps) {
    if (st.step != expected_step++) bad.push_back("step indices are not consecutive after d'");
    if (st.step >= inter.steps.size()) bad.push_back("step beyond the source interaction");
    if (st.slate.size() != st.response.size()) bad.push_back("slate/response length mismatch");
    if (std::set<ItemId>(st.slate.begin(), st.slate.end()).size() != st.slate.size()) bad.push_back("duplicate slate item");
    std::size_t clicks = 0;
    for (auto x : st.response) clicks += x;
    if (st.step < inter.steps.size() && clicks > inter.steps[st.step].click_count()) {
      bad.push_back("more clicks than the observed budget");
    }
    if (clicks == 0) continue;
    if (next >= s.items.size()) {
      bad.push_back("clicked step without an appended item");
      continue;
    }
    bool ok = false;
    for (std::size_t n = 0; n < st.slate.size(); ++n) ok = ok || (st.slate[n] == s.items[next] && st.response[n]);
    if (!ok) bad.push_back("item " + std::to_string(s.items[next]) + " not marked clicked on its slate");
    ++next;
  }
  if (next != s.items.size()) bad.push_back("items without a generating step");
  return bad;
}

std::vector<data::ClickSession> counterfactual_click_sessions(const std::vector<CounterfactualSession>& sessions,
                                                              std::int64_t first_id) {
  std::vector<data::ClickSession> out;
  out.reserve(sessions.size());
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    auto s = data::make_session(first_id + static_cast<std::int64_t>(i), sessions[i].items);
    s.user_id = sessions[i].user;
    out.push_back(std::move(s));
  }
  return out;
}

sr::SrModel retrain_with_counterfactuals(const std::vector<data::ClickSession>& observed,
                                         const std::vector<CounterfactualSession>& counterfactuals,
                                         const std::vector<data::ClickSession>& valid, const sr::SrConfig& config,
                                         const sr::TrainConfig& train_config, std::uint64_t seed,
                                         sr::TrainReport* report) {
  if (observed.empty()) throw EmptyDatasetError("retrain: observed sessions are empty");
  std::int64_t next_id = 0;
  for (const auto& s : observed) next_id = std::max(next_id, s.session_id + 1);
  auto all = observed;
  for (auto& s : counterfactual_click_sessions(counterfactuals, next_id)) all.push_back(std::move(s));
  return sr::train_sr(all, valid, config, train_config, seed, report);
}

double mean_generated_popularity(const std::vector<CounterfactualSession>& sessions, const data::PopularityTable& pop) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& s : sessions) {
    for (std::size_t i = 1; i < s.items.size(); ++i) {
      total += pop.at(s.items[i]);
      ++n;
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

void write_counterfactuals(const std::filesystem::path& path, const std::vector<CounterfactualSession>& sessions) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DependencyError("cannot write " + path.string());
  for (const auto& s : sessions) {
    json steps = json::array();
    for (const auto& st : s.steps) {
      json resp = json::array();
      for (auto x : st.response) resp.push_back(x != 0);
      steps.push_back({{"step", st.step}, {"slate", st.slate}, {"response", resp}});
    }
    json j = {{"user", s.user},          {"attempt", s.attempt}, {"source", s.source},
              {"d_prime", s.first_click}, {"items", s.items},     {"steps", steps}};
    out << j.dump() << '\n';
  }
}

std::vector<CounterfactualSession> read_counterfactuals(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<CounterfactualSession> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      CounterfactualSession s;
      s.user = j.at("user").get<std::int64_t>();
      s.attempt = j.at("attempt").get<std::size_t>();
      s.source = j.at("source").get<std::size_t>();
      s.first_click = j.at("d_prime").get<std::size_t>();
      s.items = j.at("items").get<std::vector<ItemId>>();
      for (const auto& st : j.at("steps")) {
        CounterfactualStep step;
        step.step = st.at("step").get<std::size_t>();
        step.slate = st.at("slate").get<std::vector<ItemId>>();
        for (const auto& r : st.at("response")) step.response.push_back(r.get<bool>() ? 1 : 0);
        s.steps.push_back(std::move(step));
      }
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw FormatError(path.filename().string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dcasr::augment
