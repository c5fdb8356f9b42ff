#include "dcasr/eval/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "dcasr/augment/augment.hpp"
#include "dcasr/data/jsonl.hpp"
#include "dcasr/error.hpp"
#include "dcasr/nn/rng.hpp"

namespace dcasr::eval {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kLog = "log.jsonl";
constexpr const char* kTrain = "train.jsonl";
constexpr const char* kValid = "valid.jsonl";
constexpr const char* kTest = "test.jsonl";
constexpr const char* kMeta = "data.json";
constexpr const char* kDiffusion = "diffusion.ckpt";
constexpr const char* kScm = "scm.ckpt";
constexpr const char* kCounterfactuals = "counterfactuals.jsonl";
constexpr const char* kSrBaseline = "sr-baseline.ckpt";
constexpr const char* kSrDcasr = "sr-dcasr.ckpt";

const Stage kOrder[] = {Stage::simulate_log, Stage::train_diffusion, Stage::train_scm, Stage::augment,
                        Stage::train_sr,     Stage::eval_offline,    Stage::eval_online};

struct Context {
  const ExperimentConfig& cfg;
  fs::path out;
  std::ostream* log;
  std::string fp;

  void note(Stage s, const std::string& msg) const {
    if (log) *log << "[" << stage_name(s) << "] " << msg << std::endl;
  }

  fs::path need(const char* file, Stage producer) const {
    fs::path p = out / file;
    if (!fs::exists(p)) {
      throw DependencyError("missing " + p.string() + "; run `" + stage_name(producer) + "` first");
    }
    return p;
  }
};

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

json finish_report(const Context& ctx, Stage stage, json body, const std::string& text) {
  json rep = {{"stage", stage_name(stage)}, {"fingerprint", ctx.fp}, {"seed", ctx.cfg.seed}};
  for (auto& [k, v] : body.items()) rep[k] = v;
  const std::string name = "report-" + stage_name(stage);
  {
    std::ofstream f(ctx.out / (name + ".json"), std::ios::binary | std::ios::trunc);
    if (!f) throw DependencyError("cannot write " + (ctx.out / (name + ".json")).string());
    f << rep.dump(2) << '\n';
  }
  std::ofstream f(ctx.out / (name + ".txt"), std::ios::binary | std::ios::trunc);
  if (!f) throw DependencyError("cannot write " + (ctx.out / (name + ".txt")).string());
  f << "stage " << stage_name(stage) << "  fingerprint " << ctx.fp << "  seed " << ctx.cfg.seed << "\n\n" << text;
  return rep;
}

json read_json(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(p.filename().string() + ": " + e.what());
  }
}

std::size_t catalog_size(const Context& ctx) {
  const auto meta = read_json(ctx.need(kMeta, Stage::simulate_log));
  if (!meta.contains("n_items") || !meta["n_items"].is_number_unsigned()) {
    throw FormatError(std::string(kMeta) + ": missing n_items");
  }
  return meta["n_items"].get<std::size_t>();
}

data::PopularityTable train_popularity(const Context& ctx) {
  return data::popularity_stats(data::read_sessions(ctx.need(kTrain, Stage::simulate_log)), catalog_size(ctx));
}

json loss_curve(const std::vector<double>& v) { return json(v); }

json run_simulate_log(const Context& ctx) {
  const auto& c = ctx.cfg;
  const std::uint64_t seed = stage_seed(c.seed, Stage::simulate_log);
  std::vector<data::SlateInteraction> log;
  std::vector<data::ClickSession> train, valid, test;
  std::size_t n_items = 0;
  json meta, body;
  if (c.data.source == DataSource::simulator) {
    const auto world = sim::init_world(world_config(c.simulator), seed);
    for (const auto& w : world.warnings) ctx.note(Stage::simulate_log, "warning: " + w);
    n_items = world.config.n_items;
    log = sim::run_logging_policy(world, c.simulator.log_sessions, nn::Rng(seed).substream(1).next_u64());
    auto eval_world = world;
    for (auto& t : eval_world.config.types) t.train_weight = t.eval_weight;
    const auto test_log = sim::run_logging_policy(eval_world, c.simulator.test_sessions,
                                                  nn::Rng(seed).substream(2).next_u64());
    train = data::click_sessions_from_log(log);
    for (const auto& s : data::click_sessions_from_log(test_log)) {
      if (s.length() >= 2) test.push_back(s);
    }
    std::vector<std::size_t> per_type(world.n_types(), 0);
    for (const auto& e : log) ++per_type[static_cast<std::size_t>(e.user_type.value_or(0))];
    body["sessions_per_type"] = per_type;
  } else {
    std::vector<data::ClickSession> raw;
    if (c.data.source == DataSource::synthetic) {
      raw = data::generate_synthetic_corpus(c.data.synthetic, seed);
    } else {
      if (!fs::exists(c.data.click_log)) throw ConfigError("config data.click_log does not exist: " + c.data.click_log);
      raw = data::parse_click_log(c.data.click_log, c.data.timestamp_format);
    }
    auto filtered = data::filter_sessions(raw, c.data.top_m ? c.data.top_m : std::numeric_limits<std::size_t>::max(),
                                          c.data.min_length, c.data.max_length ? c.data.max_length : data::kNoMaxLength);
    n_items = filtered.catalog.size();
    auto split = data::chronological_split(filtered.sessions, c.data.split);
    train = std::move(split.train);
    valid = std::move(split.valid);
    test = std::move(split.test);
    const auto pop = data::popularity_stats(train, n_items);
    log = data::build_slate_log(train, c.data.slate_size, pop, nn::Rng(seed).substream(1).next_u64());
    meta["dense_to_raw"] = filtered.catalog.dense_to_raw;
    body["raw_sessions"] = raw.size();
    body["dropped_overlap"] = split.dropped_overlap;
  }
  meta["n_items"] = n_items;
  meta["source"] = to_json(c)["data"]["source"];
  data::write_slate_log(ctx.out / kLog, log);
  data::write_sessions(ctx.out / kTrain, train);
  data::write_sessions(ctx.out / kValid, valid);
  data::write_sessions(ctx.out / kTest, test);
  {
    std::ofstream f(ctx.out / kMeta, std::ios::binary | std::ios::trunc);
    f << meta.dump() << '\n';
  }
  std::size_t steps = 0, clicks = 0;
  for (const auto& e : log) {
    steps += e.steps.size();
    for (const auto& st : e.steps) clicks += st.click_count();
  }
  body["n_items"] = n_items;
  body["interactions"] = log.size();
  body["steps"] = steps;
  body["clicks"] = clicks;
  body["train_sessions"] = train.size();
  body["valid_sessions"] = valid.size();
  body["test_sessions"] = test.size();
  body["artifacts"] = {kLog, kTrain, kValid, kTest, kMeta};
  std::ostringstream t;
  t << "items          " << n_items << "\ninteractions   " << log.size() << "\nsteps          " << steps
    << "\nclicks         " << clicks << "\ntrain sessions " << train.size() << "\nvalid sessions " << valid.size()
    << "\ntest sessions  " << test.size() << "\n";
  ctx.note(Stage::simulate_log, std::to_string(log.size()) + " interactions, " + std::to_string(n_items) + " items");
  return finish_report(ctx, Stage::simulate_log, body, t.str());
}

json run_train_diffusion(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto train = data::read_sessions(ctx.need(kTrain, Stage::simulate_log));
  diffusion::DiffusionConfig dc;
  dc.n_items = catalog_size(ctx);
  dc.dim = c.diffusion.dim;
  dc.T = c.diffusion.T;
  dc.beta_1 = c.diffusion.beta_1;
  dc.beta_T = c.diffusion.beta_T;
  dc.max_len = c.diffusion.max_len;
  diffusion::DiffusionTrainReport rep;
  const auto model =
      diffusion::train_diffusion(train, dc, c.diffusion.train, stage_seed(c.seed, Stage::train_diffusion), &rep);
  nn::save_checkpoint(model.checkpoint(), ctx.out / kDiffusion);
  std::ostringstream t;
  t << "epoch  loss\n";
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) t << pad(std::to_string(e + 1), 7) << fixed4(rep.epoch_loss[e]) << "\n";
  ctx.note(Stage::train_diffusion, "final loss " + fixed4(rep.epoch_loss.empty() ? 0.0 : rep.epoch_loss.back()));
  return finish_report(ctx, Stage::train_diffusion, {{"epoch_loss", loss_curve(rep.epoch_loss)}, {"artifacts", {kDiffusion}}},
                       t.str());
}

json run_train_scm(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto log = data::read_slate_log(ctx.need(kLog, Stage::simulate_log));
  scm::ScmConfig sc;
  sc.n_items = catalog_size(ctx);
  sc.dim = c.scm.dim;
  sc.candidate = c.scm.candidate;
  scm::ScmTrainReport rep;
  const auto model = scm::train_scm(log, sc, c.scm.train, stage_seed(c.seed, Stage::train_scm), &rep);
  nn::save_checkpoint(model.checkpoint(), ctx.out / kScm);
  double mean_sigma = 0.0;
  for (double s : model.sigma()) mean_sigma += s;
  mean_sigma /= static_cast<double>(sc.n_items);
  std::ostringstream t;
  t << "epoch  -elbo/step\n";
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) t << pad(std::to_string(e + 1), 7) << fixed4(rep.epoch_loss[e]) << "\n";
  t << "\nmean sigma " << fixed4(mean_sigma) << "\n";
  ctx.note(Stage::train_scm, "final -elbo " + fixed4(rep.epoch_loss.empty() ? 0.0 : rep.epoch_loss.back()));
  return finish_report(ctx, Stage::train_scm,
                       {{"epoch_loss", loss_curve(rep.epoch_loss)}, {"mean_sigma", mean_sigma}, {"artifacts", {kScm}}},
                       t.str());
}

json run_augment(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto log = data::read_slate_log(ctx.need(kLog, Stage::simulate_log));
  const auto dm = diffusion::DiffusionModel::from_checkpoint(nn::load_checkpoint(ctx.need(kDiffusion, Stage::train_diffusion)));
  const auto sm = scm::ScmModel::from_checkpoint(nn::load_checkpoint(ctx.need(kScm, Stage::train_scm)));
  augment::AugmentConfig ac;
  ac.attempts = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(c.augment.n_multiplier * static_cast<double>(log.size()))));
  ac.guidance = c.augment.guidance;
  ac.slate_size = c.data.source == DataSource::simulator ? c.simulator.slate_size : c.data.slate_size;
  ac.min_length = c.augment.min_length;
  ac.confounder = c.augment.confounder;
  ac.slate_mode = c.augment.slate_mode;
  ac.seed = stage_seed(c.seed, Stage::augment);
  const auto result = augment::synthesize_counterfactuals(log, dm, sm, ac);
  std::size_t passed = 0;
  for (const auto& s : result.sessions) passed += augment::check_provenance(s, log).empty() ? 1 : 0;
  augment::write_counterfactuals(ctx.out / kCounterfactuals, result.sessions);
  const auto pop = train_popularity(ctx);
  double observed_pop = 0.0;
  std::size_t n_clicked = 0;
  for (const auto& e : log) {
    for (ItemId i : e.clicked_items()) {
      observed_pop += pop.at(i);
      ++n_clicked;
    }
  }
  observed_pop = n_clicked ? observed_pop / static_cast<double>(n_clicked) : 0.0;
  const double generated_pop = augment::mean_generated_popularity(result.sessions, pop);
  std::size_t total_len = 0;
  for (const auto& s : result.sessions) total_len += s.items.size();
  const double mean_len = result.sessions.empty() ? 0.0 : static_cast<double>(total_len) / static_cast<double>(result.sessions.size());
  std::ostringstream t;
  t << "attempts (N)        " << result.stats.attempts << "\nskipped (no click)  " << result.stats.skipped_no_click
    << "\ndiscarded (short)   " << result.stats.discarded_short << "\nkept                " << result.stats.kept
    << "\nmean length         " << fixed2(mean_len) << "\nprovenance passed   " << passed << "/"
    << result.sessions.size() << "\nmean pop observed   " << fixed4(observed_pop) << "\nmean pop generated  "
    << fixed4(generated_pop) << "\n";
  ctx.note(Stage::augment, std::to_string(result.stats.kept) + " counterfactual sessions from " +
                               std::to_string(result.stats.attempts) + " attempts");
  return finish_report(ctx, Stage::augment,
                       {{"attempts", result.stats.attempts},
                        {"skipped_no_click", result.stats.skipped_no_click},
                        {"discarded_short", result.stats.discarded_short},
                        {"kept", result.stats.kept},
                        {"mean_length", mean_len},
                        {"provenance_passed", passed},
                        {"mean_pop_observed_clicks", observed_pop},
                        {"mean_pop_generated", generated_pop},
                        {"artifacts", {kCounterfactuals}}},
                       t.str());
}

sr::SrConfig sr_config(const Context& ctx) {
  sr::SrConfig sc;
  sc.n_items = catalog_size(ctx);
  sc.dim = ctx.cfg.sr.dim;
  sc.variant = ctx.cfg.sr.variant;
  sc.scale = ctx.cfg.sr.scale;
  return sc;
}

json run_train_sr(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto train = data::read_sessions(ctx.need(kTrain, Stage::simulate_log));
  const auto valid = data::read_sessions(ctx.need(kValid, Stage::simulate_log));
  const auto cf = augment::read_counterfactuals(ctx.need(kCounterfactuals, Stage::augment));
  const auto sc = sr_config(ctx);
  const std::uint64_t seed = stage_seed(c.seed, Stage::train_sr);
  sr::TrainReport rb, rd;
  const auto baseline = sr::train_sr(train, valid, sc, c.sr.train, seed, &rb);
  nn::save_checkpoint(baseline.checkpoint(), ctx.out / kSrBaseline);
  ctx.note(Stage::train_sr, "baseline trained for " + std::to_string(rb.epoch_loss.size()) + " epochs");
  const auto dcasr = augment::retrain_with_counterfactuals(train, cf, valid, sc, c.sr.train, seed, &rd);
  nn::save_checkpoint(dcasr.checkpoint(), ctx.out / kSrDcasr);
  ctx.note(Stage::train_sr, "augmented model trained for " + std::to_string(rd.epoch_loss.size()) + " epochs");
  auto part = [](const sr::TrainReport& r) {
    return json{{"epoch_loss", r.epoch_loss}, {"valid_recall1", r.valid_recall1}, {"best_epoch", r.best_epoch}};
  };
  std::ostringstream t;
  t << "model      epochs  best  final loss\n";
  for (const auto& [name, r] : {std::pair<const char*, const sr::TrainReport*>{"baseline", &rb}, {"dcasr", &rd}}) {
    t << pad(name, 11) << pad(std::to_string(r->epoch_loss.size()), 8) << pad(std::to_string(r->best_epoch), 6)
      << fixed4(r->epoch_loss.empty() ? 0.0 : r->epoch_loss.back()) << "\n";
  }
  return finish_report(ctx, Stage::train_sr,
                       {{"baseline", part(rb)},
                        {"dcasr", part(rd)},
                        {"counterfactual_sessions", cf.size()},
                        {"artifacts", {kSrBaseline, kSrDcasr}}},
                       t.str());
}

std::string offline_table(const std::vector<std::pair<std::string, OfflineReport>>& rows) {
  std::ostringstream t;
  const std::size_t k = rows.front().second.k;
  t << pad("model", 10);
  for (const char* scope : {"overall", "long-tail", "mid", "head"}) {
    t << "| " << pad(scope, 27);
  }
  t << "\n" << pad("", 10);
  for (int i = 0; i < 4; ++i) {
    t << "| " << pad("R@" + std::to_string(k), 9) << pad("MRR@" + std::to_string(k), 9) << pad("ARP", 9);
  }
  t << "\n";
  for (const auto& [name, r] : rows) {
    t << pad(name, 10);
    for (const auto* s : {&r.overall, &r.long_tail, &r.mid, &r.head}) {
      t << "| " << pad(fixed2(100.0 * s->recall()), 9) << pad(fixed2(100.0 * s->mrr()), 9) << pad(fixed4(s->arp()), 9);
    }
    t << "\n";
  }
  return t.str();
}

json run_eval_offline(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto test = data::read_sessions(ctx.need(kTest, Stage::simulate_log));
  const auto pop = train_popularity(ctx);
  const auto baseline = sr::SrModel::from_checkpoint(nn::load_checkpoint(ctx.need(kSrBaseline, Stage::train_sr)));
  const auto dcasr = sr::SrModel::from_checkpoint(nn::load_checkpoint(ctx.need(kSrDcasr, Stage::train_sr)));
  const auto rb = evaluate_offline(baseline, test, c.eval.k, pop);
  const auto rd = evaluate_offline(dcasr, test, c.eval.k, pop);
  ctx.note(Stage::eval_offline, "Recall@" + std::to_string(c.eval.k) + " baseline " + fixed2(100 * rb.overall.recall()) +
                                    ", dcasr " + fixed2(100 * rd.overall.recall()));
  json body = {{"k", c.eval.k}, {"baseline", offline_json(rb)}, {"dcasr", offline_json(rd)}};
  std::vector<std::pair<std::string, OfflineReport>> rows{{"baseline", rb}, {"dcasr", rd}};
  if (c.eval.diffusion_recommender) {
    const auto dm =
        diffusion::DiffusionModel::from_checkpoint(nn::load_checkpoint(ctx.need(kDiffusion, Stage::train_diffusion)));
    const auto table = dm.item_embeddings();
    nn::Rng rng(stage_seed(c.seed, Stage::eval_offline));
    const auto rdiff = evaluate_rankings(
        [&](std::span<const ItemId> prefix, std::size_t k) {
          return diffusion::retrieve_slate(dm.sample(prefix, c.augment.guidance, rng), table, k);
        },
        test, c.eval.k, pop);
    body["diffusion"] = offline_json(rdiff);
    rows.emplace_back("diffusion", rdiff);
  }
  return finish_report(ctx, Stage::eval_offline, body, offline_table(rows));
}

json run_eval_online(const Context& ctx) {
  const auto& c = ctx.cfg;
  if (c.data.source != DataSource::simulator) {
    throw ConfigError("eval-online needs data.source = simulator");
  }
  const auto pop = train_popularity(ctx);
  const auto baseline = sr::SrModel::from_checkpoint(nn::load_checkpoint(ctx.need(kSrBaseline, Stage::train_sr)));
  const auto dcasr = sr::SrModel::from_checkpoint(nn::load_checkpoint(ctx.need(kSrDcasr, Stage::train_sr)));
  const auto world = sim::init_world(world_config(c.simulator), stage_seed(c.seed, Stage::simulate_log));
  const std::uint64_t seed = stage_seed(c.seed, Stage::eval_online);
  const auto k = c.simulator.slate_size;
  const auto mb = sim::run_online_eval(world, sr_agent(baseline, k), c.simulator.eval_sessions, world.eval_mixture(), pop, seed);
  const auto md = sim::run_online_eval(world, sr_agent(dcasr, k), c.simulator.eval_sessions, world.eval_mixture(), pop, seed);
  std::ostringstream t;
  t << pad("model", 10) << pad("scope", 9) << pad("sessions", 10) << pad("CTR", 9) << pad("sess.CTR", 10) << "ARP\n";
  for (const auto& [name, m] : {std::pair<const char*, const sim::OnlineMetrics*>{"baseline", &mb}, {"dcasr", &md}}) {
    auto row = [&](const std::string& scope, const sim::GroupMetrics& g) {
      t << pad(name, 10) << pad(scope, 9) << pad(std::to_string(g.sessions), 10) << pad(fixed2(g.ctr()), 9)
        << pad(fixed2(g.session_click_rate()), 10) << fixed4(g.arp()) << "\n";
    };
    row("overall", m->overall);
    for (std::size_t u = 0; u < m->per_type.size(); ++u) row("UT" + std::to_string(u + 1), m->per_type[u]);
  }
  ctx.note(Stage::eval_online, "CTR baseline " + fixed2(mb.overall.ctr()) + ", dcasr " + fixed2(md.overall.ctr()));
  return finish_report(ctx, Stage::eval_online, {{"baseline", online_json(mb)}, {"dcasr", online_json(md)}}, t.str());
}

json dispatch(const Context& ctx, Stage s) {
  switch (s) {
    case Stage::simulate_log:
      return run_simulate_log(ctx);
    case Stage::train_diffusion:
      return run_train_diffusion(ctx);
    case Stage::train_scm:
      return run_train_scm(ctx);
    case Stage::augment:
      return run_augment(ctx);
    case Stage::train_sr:
      return run_train_sr(ctx);
    case Stage::eval_offline:
      return run_eval_offline(ctx);
    case Stage::eval_online:
      return run_eval_online(ctx);
    case Stage::run_all:
      break;
  }
  throw InvalidInputError("run_stage: unexpected stage");
}

}  // namespace

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::simulate_log:
      return "simulate-log";
    case Stage::train_diffusion:
      return "train-diffusion";
    case Stage::train_scm:
      return "train-scm";
    case Stage::augment:
      return "augment";
    case Stage::train_sr:
      return "train-sr";
    case Stage::eval_offline:
      return "eval-offline";
    case Stage::eval_online:
      return "eval-online";
    case Stage::run_all:
      return "run-all";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  for (Stage s : kOrder) {
    if (stage_name(s) == name) return s;
  }
  if (name == "run-all") return Stage::run_all;
  throw ConfigError("unknown stage '" + name + "'");
}

std::uint64_t stage_seed(std::uint64_t seed, Stage stage) {
  return nn::Rng(seed, 0x57A6E).substream(static_cast<std::uint64_t>(stage)).next_u64();
}

sim::WorldConfig world_config(const SimulatorSection& s) {
  auto w = sim::WorldConfig::two_types(s.n_items, s.train_ut1, s.eval_ut1);
  w.mu_high = s.mu_high;
  w.mu_low = s.mu_low;
  w.item_noise = s.item_noise;
  w.user_noise = s.user_noise;
  w.tau = s.tau;
  w.u0 = s.u0;
  w.session_length = s.session_length;
  w.slate_size = s.slate_size;
  return w;
}

sim::Agent sr_agent(const sr::SrModel& model, std::size_t slate_size) {
  return [&model, slate_size](const std::vector<ItemId>& history, nn::Rng& rng) {
    if (history.empty()) return sim::random_slate(model.config().n_items, slate_size, rng);
    return model.recommend_topk(history, slate_size, std::set<ItemId>(history.begin(), history.end()));
  };
}

json offline_json(const OfflineReport& r) {
  auto scope = [](const ScopeMetrics& s) {
    return json{{"count", s.count},   {"recall1", s.recall1()}, {"recall", s.recall()},
                {"mrr", s.mrr()},     {"arp", s.arp()}};
  };
  return {{"k", r.k},
          {"skipped_short", r.skipped_short},
          {"overall", scope(r.overall)},
          {"long_tail", scope(r.long_tail)},
          {"mid", scope(r.mid)},
          {"head", scope(r.head)}};
}

json online_json(const sim::OnlineMetrics& m) {
  auto group = [](const sim::GroupMetrics& g) {
    return json{{"sessions", g.sessions},
                {"steps", g.steps},
                {"clicked_steps", g.clicked_steps},
                {"ctr", g.ctr()},
                {"session_click_rate", g.session_click_rate()},
                {"arp", g.arp()}};
  };
  json types = json::array();
  for (const auto& g : m.per_type) types.push_back(group(g));
  return {{"overall", group(m.overall)}, {"per_type", types}};
}

json run_stage(const ExperimentConfig& config, Stage stage, std::ostream* log) {
  Context ctx{config, fs::path(config.out), log, hex64(fingerprint(config))};
  std::error_code ec;
  fs::create_directories(ctx.out, ec);
  if (ec) throw DependencyError("cannot create output directory " + ctx.out.string() + ": " + ec.message());
  if (stage != Stage::run_all) return dispatch(ctx, stage);
  json summary = json::object();
  std::ostringstream t;
  for (Stage s : kOrder) {
    if (s == Stage::eval_online && config.data.source != DataSource::simulator) continue;
    summary[stage_name(s)] = dispatch(ctx, s);
    t << "ran " << stage_name(s) << "\n";
  }
  json body = {{"stages", summary}};
  return finish_report(ctx, Stage::run_all, body, t.str());
}

}  // namespace dcasr::eval
