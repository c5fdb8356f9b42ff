// Acceptance gate: one PASS/FAIL line per criterion. Optional arguments select
// criteria by number; --out <dir> sets where pipeline runs are written.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dcasr/augment/augment.hpp"
#include "dcasr/data/jsonl.hpp"
#include "dcasr/diffusion/diffusion.hpp"
#include "dcasr/eval/config.hpp"
#include "dcasr/eval/metrics.hpp"
#include "dcasr/eval/pipeline.hpp"
#include "dcasr/nn/optim.hpp"
#include "dcasr/scm/scm.hpp"
#include "dcasr/sim/simulator.hpp"
#include "dcasr/sr/model.hpp"

using namespace dcasr;
using data::ItemId;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

fs::path g_out = "acceptance-runs";
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

// Pipeline runs are shared between criteria 4, 6 and 9.
std::map<std::string, double> g_run_seconds;

fs::path pipeline_run(const std::string& config_name, std::uint64_t seed, const std::string& tag = "") {
  const fs::path dir = g_out / (config_name + "-seed" + std::to_string(seed) + tag);
  const std::string key = dir.string();
  if (g_run_seconds.count(key)) return dir;
  auto cfg = eval::load_config(fs::path(DCASR_SOURCE_DIR) / "configs" / (config_name + ".json"));
  cfg.seed = seed;
  cfg.out = dir.string();
  fs::remove_all(dir);
  const auto t0 = Clock::now();
  eval::run_stage(cfg, eval::Stage::run_all, nullptr);
  g_run_seconds[key] = seconds_since(t0);
  return dir;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// 1. Finite-difference gradient checks.
Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  int checks = 0;
  for (std::uint64_t seed : kSeeds) {
    for (auto variant : {sr::Variant::plain, sr::Variant::normalized}) {
      sr::SrConfig c;
      c.n_items = 7;
      c.dim = 4;
      c.variant = variant;
      c.init_std = 0.5;
      sr::SrModel base(c, seed);
      const std::vector<sr::Example> batch{{{1, 2, 3}, 4}, {{0}, 6}, {{5, 5, 2, 1}, 5}, {{6, 3}, 0}};
      nn::LossGradFn f = [&](const nn::ParamStore& p, nn::ParamStore* g) {
        return sr::SrModel(c, p).loss_and_grad(batch, g);
      };
      worst = std::max(worst, nn::finite_diff_check(f, base.params(), 1e-6));
      ++checks;
    }
    {
      diffusion::DiffusionConfig c;
      c.n_items = 6;
      c.dim = 4;
      c.T = 5;
      c.beta_1 = 0.05;
      c.beta_T = 0.3;
      c.max_len = 4;
      diffusion::DiffusionModel base(c, seed);
      const std::vector<sr::Example> batch{{{1, 2, 3}, 4}, {{0}, 5}, {{5, 2}, 2}, {{1, 0, 2, 3, 4}, 1}};
      nn::LossGradFn f = [&](const nn::ParamStore& p, nn::ParamStore* g) {
        return diffusion::DiffusionModel(c, p).loss_and_grad(batch, 99 + seed, 0.3, g);
      };
      worst = std::max(worst, nn::finite_diff_check(f, base.params(), 1e-6));
      ++checks;
    }
    for (auto cand : {scm::Candidate::tanh, scm::Candidate::linear}) {
      scm::ScmConfig c;
      c.n_items = 6;
      c.dim = 3;
      c.candidate = cand;
      scm::ScmModel base(c, seed);
      nn::Rng rng(seed + 100);
      for (const auto& name : base.params().names()) {
        for (auto& v : base.params().at(name).values()) v = 0.5 * rng.normal();
      }
      auto inter = [](std::vector<std::pair<std::vector<ItemId>, std::vector<std::uint8_t>>> steps) {
        data::SlateInteraction s;
        for (auto& [slate, clicks] : steps) s.steps.push_back({slate, clicks});
        return s;
      };
      const std::vector<data::SlateInteraction> batch{
          inter({{{0, 1, 2}, {0, 1, 0}}, {{3, 4, 5}, {1, 0, 1}}, {{2, 5, 1}, {0, 0, 0}}, {{4, 0, 3}, {0, 0, 1}}}),
          inter({{{5, 4, 3}, {0, 0, 0}}, {{1, 0, 2}, {0, 1, 0}}})};
      nn::LossGradFn f = [&](const nn::ParamStore& p, nn::ParamStore* g) {
        return scm::ScmModel(c, p).elbo_loss(batch, 77 + seed, 0.5, g);
      };
      worst = std::max(worst, nn::finite_diff_check(f, base.params(), 1e-6));
      ++checks;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 60.0, std::to_string(checks) + " checks over 3 seeds, max rel err " +
                                           fmt("%.2e", worst) + ", " + fmt("%.1f", secs) + " s"};
}

// 2. Diffusion math.
Outcome diffusion_math() {
  const auto t0 = Clock::now();
  std::vector<std::string> bad;
  const auto s = diffusion::make_schedule(500, 1e-4, 0.02);
  long double prod = 1.0L;
  for (std::size_t t = 1; t <= s.T; ++t) {
    prod *= 1.0L - static_cast<long double>(s.beta[t]);
    if (std::abs(s.alpha_bar[t] - static_cast<double>(prod)) > 1e-13) {
      bad.push_back("alpha_bar product");
      break;
    }
  }
  if (s.beta_tilde[1] != 0.0) bad.push_back("beta_tilde[1]");
  nn::Rng rng(31);
  for (int k = 0; k < 100; ++k) {
    const auto e = rng.normal_vector(6), f = rng.normal_vector(6), z = rng.normal_vector(6);
    if (diffusion::reverse_step(e, f, 1, s, z) != f) bad.push_back("reverse step at t=1");
    const double w = 10.0 * rng.uniform();
    const auto g = rng.normal_vector(6);
    if (diffusion::cfg_combine(f, g, 0.0) != f) bad.push_back("cfg w=0");
    const auto same = diffusion::cfg_combine(f, f, w);
    for (std::size_t j = 0; j < 6; ++j) {
      if (std::abs(same[j] - f[j]) > 1e-12) bad.push_back("cfg equal inputs");
    }
  }
  // Forward closed form against the iterated one-step chain.
  const std::size_t T = 20, n = 10000;
  const auto cs = diffusion::make_schedule(T, 0.01, 0.2);
  const std::vector<double> e0{1.5, -0.5, 0.25};
  std::vector<double> sum(3, 0.0), sq(3, 0.0);
  nn::Rng mc(77);
  for (std::size_t k = 0; k < n; ++k) {
    auto e = e0;
    for (std::size_t t = 1; t <= T; ++t) {
      for (auto& x : e) x = std::sqrt(1.0 - cs.beta[t]) * x + std::sqrt(cs.beta[t]) * mc.normal();
    }
    for (int i = 0; i < 3; ++i) {
      sum[i] += e[i];
      sq[i] += e[i] * e[i];
    }
  }
  const double var = 1.0 - cs.alpha_bar[T];
  double worst_z = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double mean = sum[i] / n;
    const double v = sq[i] / n - mean * mean;
    const double z_mean = std::abs(mean - std::sqrt(cs.alpha_bar[T]) * e0[i]) / std::sqrt(var / n);
    const double z_var = std::abs(v - var) / (var * std::sqrt(2.0 / n));
    worst_z = std::max({worst_z, z_mean, z_var});
  }
  if (worst_z > 3.0) bad.push_back("Monte Carlo chain");
  const double secs = seconds_since(t0);
  std::string detail = "schedule, t=1 step and guidance identities; chain |z| max " + fmt("%.2f", worst_z) +
                       " over 1e4 samples, " + fmt("%.1f", secs) + " s";
  if (!bad.empty()) detail += "; failed: " + bad.front();
  return {bad.empty() && secs < 120.0, detail};
}

// 3. Response model contract.
Outcome response_contract() {
  scm::ScmConfig c;
  c.n_items = 12;
  c.dim = 4;
  scm::ScmModel m(c, 3);
  nn::Rng rng(9);
  for (const auto& name : m.params().names()) {
    for (auto& v : m.params().at(name).values()) v = 0.7 * rng.normal();
  }
  double worst = 0.0;
  bool budget_ok = true;
  for (int k = 0; k < 2000; ++k) {
    const std::size_t K = 1 + rng.uniform_index(5);
    std::vector<ItemId> slate(12);
    std::iota(slate.begin(), slate.end(), 0);
    rng.shuffle(slate);
    slate.resize(K);
    const auto h = rng.normal_vector(4);
    const auto beta = m.sample_confounder(rng);
    const auto p = m.response_probabilities(h, slate, beta);
    worst = std::max(worst, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
    const std::size_t budget = rng.uniform_index(K + 1);
    const auto y = m.generate_response(h, slate, beta, budget);
    budget_ok = budget_ok && static_cast<std::size_t>(std::count(y.begin(), y.end(), 1)) <= budget;
  }
  scm::ScmModel flat(c, 4);
  flat.params().at("scm.V").fill(0.0);
  flat.params().at("scm.w").fill(0.0);
  bool uniform_ok = true;
  for (std::size_t K = 1; K <= 6; ++K) {
    std::vector<ItemId> slate(K);
    std::iota(slate.begin(), slate.end(), 0);
    for (double p : flat.response_probabilities(flat.initial_state(), slate, std::vector<double>(12, 0.0))) {
      uniform_ok = uniform_ok && std::abs(p - 1.0 / static_cast<double>(K + 1)) < 1e-12;
    }
  }
  m.params().at("scm.b0")[0] = 1e6;
  bool dominance_ok = true;
  for (std::size_t budget = 0; budget <= 3; ++budget) {
    const auto y = m.generate_response(m.initial_state(), std::vector<ItemId>{1, 5, 7}, m.sample_confounder(rng), budget);
    dominance_ok = dominance_ok && std::count(y.begin(), y.end(), 1) == 0;
  }
  return {worst < 1e-12 && budget_ok && uniform_ok && dominance_ok,
          "max |sum - 1| " + fmt("%.1e", worst) + ", uniform " + (uniform_ok ? "ok" : "FAILED") + ", budget " +
              (budget_ok ? "ok" : "FAILED") + ", no-click dominance " + (dominance_ok ? "ok" : "FAILED")};
}

// 4. Provenance of persisted counterfactuals on the desk-scale simulator runs.
Outcome provenance() {
  std::size_t total = 0, passed = 0;
  bool bound_ok = true;
  for (std::uint64_t seed : kSeeds) {
    const auto dir = pipeline_run("acceptance-sim", seed);
    const auto log = data::read_slate_log(dir / "log.jsonl");
    const auto cf = augment::read_counterfactuals(dir / "counterfactuals.jsonl");
    const auto rep = read_json(dir / "report-augment.json");
    const std::size_t N = rep.at("attempts").get<std::size_t>();
    bound_ok = bound_ok && cf.size() <= N;
    for (const auto& s : cf) {
      ++total;
      const bool len_ok = s.items.size() <= log.at(s.source).steps.size();
      passed += (augment::check_provenance(s, log).empty() && len_ok) ? 1 : 0;
    }
  }
  return {total > 0 && passed == total && bound_ok,
          std::to_string(passed) + "/" + std::to_string(total) + " sessions pass over 3 seeds, |O_c| <= N " +
              (bound_ok ? "holds" : "VIOLATED")};
}

// 5. Memorization oracles.
Outcome memorization() {
  const auto t0 = Clock::now();
  auto copies = [](std::vector<ItemId> items, int n) {
    std::vector<data::ClickSession> out;
    for (int i = 0; i < n; ++i) out.push_back(data::make_session(i, items));
    return out;
  };
  diffusion::DiffusionConfig dc;
  dc.n_items = 10;
  dc.dim = 16;
  dc.T = 20;
  dc.beta_1 = 1e-3;
  dc.beta_T = 0.2;
  diffusion::DiffusionTrainConfig dtc;
  dtc.epochs = 40;
  dtc.batch_size = 32;
  dtc.lr = 3e-3;
  const auto dm = diffusion::train_diffusion(copies({2, 7}, 200), dc, dtc, 1);
  nn::Rng rng(5);
  int hits = 0;
  for (int i = 0; i < 100; ++i) hits += dm.retrieve(dm.sample(std::vector<ItemId>{2}, 2.0, rng), 1)[0] == 7;

  sr::SrConfig sc;
  sc.n_items = 2;
  sc.dim = 8;
  sr::TrainConfig stc;
  stc.lr = 0.05;
  stc.max_epochs = 100;
  const auto srm = sr::train_sr(copies({0, 1}, 50), {}, sc, stc, 1);
  const double p_ba = srm.probabilities(std::vector<ItemId>{0})[1];

  auto world = sim::init_world(sim::WorldConfig::two_types(20), 1);
  for (auto& u : world.type_utility) u[0] = 10.0;
  const auto log = sim::run_logging_policy(world, 600, 2);
  scm::ScmConfig mc;
  mc.n_items = 20;
  scm::ScmTrainConfig mtc;
  mtc.epochs = 15;
  const auto sm = scm::train_scm(log, mc, mtc, 3);
  const std::vector<double> beta(sm.params().at("scm.mu").values().begin(), sm.params().at("scm.mu").values().end());
  double total = 0.0;
  int n = 0;
  for (const auto& inter : log) {
    auto h = sm.initial_state();
    for (const auto& st : inter.steps) {
      const auto p = sm.response_probabilities(h, st.slate, beta);
      std::vector<ItemId> clicked;
      for (std::size_t k = 0; k < st.slate.size(); ++k) {
        if (st.slate[k] == 0) {
          total += p[k];
          ++n;
        }
        if (st.clicks[k]) clicked.push_back(st.slate[k]);
      }
      h = sm.update_interest(h, clicked);
    }
  }
  const double p_click = n ? total / n : 0.0;
  const double secs = seconds_since(t0);
  return {hits > 90 && p_ba > 0.9 && p_click > 0.8 && secs < 300.0,
          "diffusion " + std::to_string(hits) + "/100, SR P(b|a) " + fmt("%.3f", p_ba) + ", response model P(click) " +
              fmt("%.3f", p_click) + ", " + fmt("%.1f", secs) + " s"};
}

// 6. Online bias mitigation on the desk-scale simulator.
Outcome online_bias() {
  std::vector<double> gain, d_arp, d_ctr;
  double secs = 0.0;
  std::ostringstream per;
  for (std::uint64_t seed : kSeeds) {
    const auto dir = pipeline_run("acceptance-sim", seed);
    secs += g_run_seconds[dir.string()];
    const auto rep = read_json(dir / "report-eval-online.json");
    const auto& b = rep.at("baseline");
    const auto& d = rep.at("dcasr");
    const double ut2_b = b.at("per_type").at(1).at("ctr").get<double>();
    const double ut2_d = d.at("per_type").at(1).at("ctr").get<double>();
    gain.push_back(ut2_b > 0 ? (ut2_d - ut2_b) / ut2_b : 0.0);
    d_arp.push_back(d.at("overall").at("arp").get<double>() - b.at("overall").at("arp").get<double>());
    d_ctr.push_back(d.at("overall").at("ctr").get<double>() - b.at("overall").at("ctr").get<double>());
    per << " [seed " << seed << ": UT2 " << fmt("%.2f", ut2_b) << "->" << fmt("%.2f", ut2_d) << "]";
  }
  const double g = median3(gain), a = median3(d_arp), c = median3(d_ctr);
  const bool ok = g >= 0.10 && a < 0.0 && c >= -2.0 && secs < 1800.0;
  return {ok, "median UT2 CTR gain " + fmt("%+.1f%%", 100 * g) + " (need >= +10%), ARP change " + fmt("%+.4f", a) +
                  " (need < 0), CTR change " + fmt("%+.2f", c) + " pts (need >= -2), " + fmt("%.0f", secs) + " s;" +
                  per.str()};
}

// 7. Offline long-tail check on the synthetic corpus.
Outcome offline_long_tail() {
  std::vector<double> d_tail, d_all;
  double secs = 0.0;
  std::ostringstream per;
  for (std::uint64_t seed : kSeeds) {
    const auto dir = pipeline_run("acceptance-synthetic", seed);
    secs += g_run_seconds[dir.string()];
    const auto rep = read_json(dir / "report-eval-offline.json");
    const auto& b = rep.at("baseline");
    const auto& d = rep.at("dcasr");
    const double tb = 100 * b.at("long_tail").at("recall").get<double>();
    const double td = 100 * d.at("long_tail").at("recall").get<double>();
    d_tail.push_back(td - tb);
    d_all.push_back(100 * (d.at("overall").at("recall").get<double>() - b.at("overall").at("recall").get<double>()));
    per << " [seed " << seed << ": tail " << fmt("%.2f", tb) << "->" << fmt("%.2f", td) << "]";
  }
  const double t = median3(d_tail), a = median3(d_all);
  return {t > 0.0 && a >= -1.0 && secs < 1800.0,
          "median long-tail Recall@5 change " + fmt("%+.2f", t) + " pts (need > 0), overall " + fmt("%+.2f", a) +
              " pts (need >= -1), " + fmt("%.0f", secs) + " s;" + per.str()};
}

// 8. Metric correctness against brute-force oracles.
Outcome metric_oracles() {
  nn::Rng rng(2024);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 2 + rng.uniform_index(20);
    std::vector<ItemId> ranked(m);
    std::iota(ranked.begin(), ranked.end(), 0);
    rng.shuffle(ranked);
    ranked.resize(1 + rng.uniform_index(m));
    const auto target = static_cast<ItemId>(rng.uniform_index(m));
    const std::size_t k = 1 + rng.uniform_index(m + 2);
    double rec = 0.0, mrr = 0.0;
    for (std::size_t r = 0; r < ranked.size() && r < k; ++r) {
      if (ranked[r] == target) {
        rec = 1.0;
        mrr = 1.0 / static_cast<double>(r + 1);
      }
    }
    std::vector<std::size_t> counts(m);
    for (auto& c : counts) c = 1 + rng.uniform_index(30);
    const auto pop = data::popularity_from_counts(counts);
    std::vector<std::vector<ItemId>> lists(1 + rng.uniform_index(4), ranked);
    double flat = 0.0;
    for (const auto& l : lists) {
      for (ItemId i : l) flat += pop.at(i);
    }
    flat /= static_cast<double>(lists.size() * ranked.size());
    if (eval::recall_at_k(ranked, target, k) != rec || eval::mrr_at_k(ranked, target, k) != mrr ||
        std::abs(eval::arp(lists, pop) - flat) > 1e-12) {
      ++mismatches;
    }
  }
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> counts(25);
    for (auto& c : counts) c = 1 + rng.uniform_index(40);
    const auto pop = data::popularity_from_counts(counts);
    std::vector<data::ClickSession> test;
    for (int s = 0; s < 60; ++s) {
      std::vector<ItemId> items;
      for (std::size_t t = 0; t < 2 + rng.uniform_index(4); ++t) items.push_back(static_cast<ItemId>(rng.uniform_index(25)));
      test.push_back(data::make_session(s, items));
    }
    nn::Rng rr = rng.substream(static_cast<std::uint64_t>(trial));
    const auto rep = eval::evaluate_rankings(
        [&](std::span<const ItemId>, std::size_t k) {
          std::vector<ItemId> all(25);
          std::iota(all.begin(), all.end(), 0);
          rr.shuffle(all);
          all.resize(k);
          return all;
        },
        test, 5, pop);
    double r = 0, m = 0, a = 0;
    for (const auto* b : {&rep.long_tail, &rep.mid, &rep.head}) {
      const auto n = static_cast<double>(b->count);
      r += b->recall() * n;
      m += b->mrr() * n;
      a += b->arp() * n;
    }
    const auto n = static_cast<double>(rep.overall.count);
    worst = std::max({worst, std::abs(r / n - rep.overall.recall()), std::abs(m / n - rep.overall.mrr()),
                      std::abs(a / n - rep.overall.arp())});
  }
  return {mismatches == 0 && worst <= 1e-9, std::to_string(1000 - mismatches) +
                                                "/1000 instances match, bucket aggregation max error " +
                                                fmt("%.1e", worst)};
}

// 9. Bitwise determinism of run-all.
Outcome determinism() {
  const auto a = pipeline_run("acceptance-sim", 1);
  const auto b = pipeline_run("acceptance-sim", 1, "-rerun");
  std::size_t files = 0;
  std::vector<std::string> differ;
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) names.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) names.insert(e.path().filename().string());
  for (const auto& name : names) {
    ++files;
    if (!fs::exists(a / name) || !fs::exists(b / name) || slurp(a / name) != slurp(b / name)) differ.push_back(name);
  }
  return {differ.empty() && files > 0,
          std::to_string(files - differ.size()) + "/" + std::to_string(files) + " artifacts bitwise identical" +
              (differ.empty() ? "" : "; first difference " + differ.front())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--out" && i + 1 < argc) {
      g_out = argv[++i];
    } else {
      selected.insert(std::stoi(arg));
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient checks", gradients},
      {"diffusion math", diffusion_math},
      {"response model contract", response_contract},
      {"counterfactual provenance", provenance},
      {"memorization oracles", memorization},
      {"online bias mitigation", online_bias},
      {"offline long-tail recall", offline_long_tail},
      {"metric oracles", metric_oracles},
      {"run-all determinism", determinism},
  };
  fs::create_directories(g_out);
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
