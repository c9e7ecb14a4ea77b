#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cli.hpp"
#include "lucid/characterization.hpp"
#include "lucid/error.hpp"
#include "lucid/gmm.hpp"
#include "lucid/hmm.hpp"
#include "lucid/metrics.hpp"
#include "lucid/models.hpp"
#include "lucid/protocol.hpp"
#include "lucid/simulator.hpp"
#include "lucid/trace.hpp"

namespace py = pybind11;
using namespace lucid;

namespace {

// JSON crosses the boundary as text; the Python side decodes it.
std::string dump(const nlohmann::json& j) { return j.dump(); }

std::vector<int> states_as_ints(const std::vector<ChannelState>& s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (auto x : s) out.push_back(static_cast<int>(x));
  return out;
}

std::vector<ChannelState> ints_as_states(const std::vector<int>& s) {
  std::vector<ChannelState> out;
  out.reserve(s.size());
  for (int x : s) {
    if (x != 0 && x != 1) throw Error("channel state must be 0 (FREE) or 1 (BUSY)");
    out.push_back(static_cast<ChannelState>(x));
  }
  return out;
}

Thresholds make_thresholds(Micros slot_len_us, Micros th_iat_us, std::uint32_t th_count) {
  Thresholds th;
  th.slot_len_us = slot_len_us;
  th.th_iat_us = th_iat_us;
  th.th_count = th_count;
  th.validate();
  return th;
}

}  // namespace

PYBIND11_MODULE(_lucid, m) {
  m.doc() = "Interference characterization, white-space prediction and MAC simulation";

  py::register_exception<Error>(m, "LucidError", PyExc_ValueError);
  py::register_exception<nlohmann::json::exception>(m, "JsonError", PyExc_ValueError);

  m.attr("WHITE_SPACE_US") = kWhiteSpaceUs;

  py::class_<ArrivalTrace>(m, "ArrivalTrace")
      .def(py::init<>())
      .def_readwrite("channel_id", &ArrivalTrace::channel_id)
      .def_readwrite("arrivals", &ArrivalTrace::arrivals)
      .def_readwrite("duration_us", &ArrivalTrace::duration_us)
      .def("__len__", [](const ArrivalTrace& t) { return t.arrivals.size(); });

  py::class_<SlotFeatures>(m, "SlotFeatures")
      .def(py::init<>())
      .def_readwrite("slot_index", &SlotFeatures::slot_index)
      .def_readwrite("mean_iat_us", &SlotFeatures::mean_iat_us)
      .def_readwrite("count", &SlotFeatures::count)
      .def("__repr__", [](const SlotFeatures& f) {
        std::ostringstream s;
        s << "SlotFeatures(slot_index=" << f.slot_index << ", mean_iat_us=" << f.mean_iat_us
          << ", count=" << f.count << ")";
        return s.str();
      });

  m.def("read_trace", &ingest_trace_file, py::arg("path"), py::arg("channel_id") = 18);
  m.def(
      "parse_trace",
      [](const std::string& text, int channel) {
        std::istringstream in(text);
        return ingest_trace(in, channel);
      },
      py::arg("text"), py::arg("channel_id") = 18);
  m.def(
      "synthesize_exponential",
      [](double mean_us, Micros duration_us, std::uint64_t seed) {
        return synthesize_trace(IatDistribution::exponential_mean(mean_us), duration_us, seed);
      },
      py::arg("mean_us"), py::arg("duration_us"), py::arg("seed"));
  m.def(
      "synthesize_pareto",
      [](double shape, double scale_us, Micros duration_us, std::uint64_t seed) {
        return synthesize_trace(IatDistribution::pareto(shape, scale_us), duration_us, seed);
      },
      py::arg("shape"), py::arg("scale_us"), py::arg("duration_us"), py::arg("seed"));
  m.def("slot_features", &extract_slot_features, py::arg("trace"), py::arg("slot_len_us") = 100000);
  m.def(
      "label_states",
      [](const std::vector<SlotFeatures>& f, Micros slot_len_us, Micros th_iat_us, std::uint32_t th_count) {
        return states_as_ints(label_channel_states(f, make_thresholds(slot_len_us, th_iat_us, th_count)));
      },
      py::arg("features"), py::arg("slot_len_us") = 100000, py::arg("th_iat_us") = kWhiteSpaceUs,
      py::arg("th_count") = 11, "0 = FREE, 1 = BUSY per slot.");

  m.def(
      "gmm_fit",
      [](const std::vector<SlotFeatures>& f, int components, std::uint64_t seed) {
        return dump(to_json(gmm_fit(f, components, seed)));
      },
      py::arg("features"), py::arg("components") = kDefaultComponents, py::arg("seed") = 1,
      "Fitted mixture as a JSON string.");
  m.def(
      "gmm_classify",
      [](const std::string& gmm_json, const std::vector<SlotFeatures>& f, Micros slot_len_us) {
        Thresholds th;
        th.slot_len_us = slot_len_us;
        return states_as_ints(gmm_classify_states(gmm_from_json(nlohmann::json::parse(gmm_json)), f, th));
      },
      py::arg("gmm_json"), py::arg("features"), py::arg("slot_len_us") = 100000);
  m.def(
      "hmm_fit",
      [](const std::vector<SlotFeatures>& f, const std::vector<int>& labels, std::uint64_t seed, int comps) {
        return dump(to_json(hmm_fit(f, ints_as_states(labels), 1e-6, 100, seed, comps)));
      },
      py::arg("features"), py::arg("labels"), py::arg("seed") = 1, py::arg("components_per_state") = 3);
  m.def(
      "predict_white_spaces",
      [](const std::string& hmm_json, std::int64_t period, std::uint32_t horizon) {
        return predict_white_spaces(hmm_from_json(nlohmann::json::parse(hmm_json)), period, horizon).free_slots;
      },
      py::arg("hmm_json"), py::arg("period_index"), py::arg("horizon_slots"));
  m.def(
      "confusion",
      [](const std::vector<int>& est, const std::vector<int>& truth) {
        return dump(to_json(confusion_metrics(ints_as_states(est), ints_as_states(truth))));
      },
      py::arg("estimated"), py::arg("truth"));

  m.def("model_broadcast_time", &model_broadcast_time, py::arg("node"), py::arg("t_start_us"),
        py::arg("n_window"), py::arg("t_window_us") = kModelWindowUs);
  m.def("subslot_tx_time", &subslot_tx_time, py::arg("node"), py::arg("slot_start_us"), py::arg("n_ss"),
        py::arg("t_ss_us") = kWhiteSpaceUs);
  m.def("compute_pdr", &compute_pdr, py::arg("n_rx"), py::arg("n_total"));
  m.def(
      "ema_series",
      [](const std::vector<double>& pdrs, int n_window) {
        auto fb = make_feedback_state(n_window);
        std::vector<std::optional<double>> out;
        for (double p : pdrs) {
          fb = update_ema(fb, p);
          out.push_back(fb.warm() ? std::optional<double>(fb.ema) : std::nullopt);
        }
        return out;
      },
      py::arg("pdrs"), py::arg("n_window") = 40, "EMA after each sample; None during warm-up.");

  m.def(
      "scenario_config",
      [](const std::string& scenario, const std::string& env, const std::string& regime, const std::string& proto,
         Micros t_data_us, std::uint64_t seed) {
        return dump(to_json(make_scenario(scenario, env, parse_regime(regime), parse_protocol(proto), t_data_us, seed)));
      },
      py::arg("scenario") = "5-node", py::arg("environment") = "home", py::arg("regime") = "peak",
      py::arg("protocol") = "LUCID", py::arg("t_data_us") = 60000000, py::arg("seed") = 1);
  m.def(
      "simulate",
      [](const std::string& config_json) {
        const auto cfg = sim_config_from_json(nlohmann::json::parse(config_json));
        py::gil_scoped_release release;
        return dump(to_json(run_simulation(cfg)));
      },
      py::arg("config_json"), "Runs one simulation; config and result are JSON strings.");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full{"lucid"};
        full.insert(full.end(), args.begin(), args.end());
        std::ostringstream out, err;
        const int code = cli::run(full, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI command in-process; returns (exit_code, stdout, stderr).");
}
