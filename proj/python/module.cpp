#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dcasr/error.hpp"
#include "dcasr/eval/config.hpp"
#include "dcasr/eval/metrics.hpp"
#include "dcasr/eval/pipeline.hpp"
#include "dcasr/scm/scm.hpp"
#include "dcasr/sim/simulator.hpp"
#include "dcasr/sr/model.hpp"

namespace py = pybind11;
using namespace dcasr;
using data::ItemId;

namespace {

eval::ExperimentConfig config_from(const std::string& config_json, std::optional<std::uint64_t> seed,
                                   std::optional<std::string> out) {
  auto cfg = eval::parse_config(nlohmann::json::parse(config_json));
  if (seed) cfg.seed = *seed;
  if (out) cfg.out = *out;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Counterfactual augmentation pipeline for session-based recommendation";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetObject(error.ptr(), py::make_tuple(e.what(), exit_code(e.kind())).ptr());
    }
  });

  m.def("stages", [] {
    std::vector<std::string> out;
    for (auto s : {eval::Stage::simulate_log, eval::Stage::train_diffusion, eval::Stage::train_scm, eval::Stage::augment,
                   eval::Stage::train_sr, eval::Stage::eval_offline, eval::Stage::eval_online, eval::Stage::run_all}) {
      out.push_back(eval::stage_name(s));
    }
    return out;
  });

  m.def(
      "run_stage",
      [](const std::string& config_json, const std::string& stage, std::optional<std::uint64_t> seed,
         std::optional<std::string> out) {
        const auto cfg = config_from(config_json, seed, out);
        py::gil_scoped_release release;
        return eval::run_stage(cfg, eval::parse_stage(stage), nullptr).dump();
      },
      py::arg("config_json"), py::arg("stage"), py::arg("seed") = py::none(), py::arg("out") = py::none(),
      "Run one pipeline stage; returns the report as a JSON string.");

  m.def(
      "effective_config",
      [](const std::string& config_json) { return eval::to_json(config_from(config_json, {}, {})).dump(); },
      py::arg("config_json"));
  m.def(
      "fingerprint", [](const std::string& config_json) { return eval::hex64(eval::fingerprint(config_from(config_json, {}, {}))); },
      py::arg("config_json"));

  m.def("recall_at_k", [](const std::vector<ItemId>& ranked, ItemId target, std::size_t k) {
    return eval::recall_at_k(ranked, target, k);
  });
  m.def("mrr_at_k", [](const std::vector<ItemId>& ranked, ItemId target, std::size_t k) {
    return eval::mrr_at_k(ranked, target, k);
  });
  m.def(
      "arp",
      [](const std::vector<std::vector<ItemId>>& lists, std::vector<std::size_t> counts) {
        return eval::arp(lists, data::popularity_from_counts(std::move(counts)));
      },
      py::arg("lists"), py::arg("counts"), "ARP with popularity = counts / max(counts).");

  m.def(
      "simulate_log",
      [](std::size_t n_items, std::size_t n_sessions, std::uint64_t seed, double train_ut1) {
        auto world = sim::init_world(sim::WorldConfig::two_types(n_items, train_ut1), seed);
        py::list out;
        for (const auto& e : sim::run_logging_policy(world, n_sessions, seed + 1)) {
          py::list steps;
          for (const auto& st : e.steps) {
            std::vector<bool> clicks(st.clicks.begin(), st.clicks.end());
            steps.append(py::dict(py::arg("slate") = st.slate, py::arg("clicks") = clicks));
          }
          out.append(py::dict(py::arg("user") = e.user, py::arg("user_type") = e.user_type.value_or(-1),
                              py::arg("steps") = steps));
        }
        return out;
      },
      py::arg("n_items") = 200, py::arg("n_sessions") = 100, py::arg("seed") = 0, py::arg("train_ut1") = 0.8);

  m.def(
      "select_response",
      [](const std::vector<double>& probabilities, std::size_t budget) {
        const auto r = scm::select_response(probabilities, budget);
        return std::vector<bool>(r.begin(), r.end());
      },
      py::arg("probabilities"), py::arg("budget"));

  py::class_<sr::SrModel>(m, "SrModel")
      .def_static(
          "load", [](const std::filesystem::path& p) { return sr::SrModel::from_checkpoint(nn::load_checkpoint(p)); },
          py::arg("path"))
      .def_property_readonly("n_items", [](const sr::SrModel& s) { return s.config().n_items; })
      .def(
          "recommend",
          [](const sr::SrModel& s, const std::vector<ItemId>& prefix, std::size_t k) { return s.recommend_topk(prefix, k); },
          py::arg("prefix"), py::arg("k") = 5)
      .def(
          "probabilities", [](const sr::SrModel& s, const std::vector<ItemId>& prefix) { return s.probabilities(prefix); },
          py::arg("prefix"));
}
