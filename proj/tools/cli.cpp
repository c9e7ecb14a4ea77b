#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "lucid/characterization.hpp"
#include "lucid/error.hpp"
#include "lucid/gmm.hpp"
#include "lucid/hmm.hpp"
#include "lucid/metrics.hpp"
#include "lucid/models.hpp"
#include "lucid/pareto.hpp"
#include "lucid/protocol.hpp"
#include "lucid/simulator.hpp"
#include "lucid/trace.hpp"

namespace lucid::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

Micros ms_to_us(double ms, const char* flag) {
  if (!(ms > 0.0)) throw Error(std::string(flag) + " must be > 0");
  const double us = ms * 1000.0;
  const double rounded = std::round(us);
  if (std::abs(us - rounded) > 1e-6) throw Error(std::string(flag) + " must be a whole number of microseconds");
  return static_cast<Micros>(rounded);
}

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw Error("cannot create output directory '" + dir + "'");
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw Error("cannot write '" + p.string() + "'");
  return f;
}

void write_json(const fs::path& p, const json& j) {
  auto f = open_out(p);
  f << j.dump(2) << '\n';
}

// Every command records what it was asked to do next to what it produced.
struct Manifest {
  Manifest(std::string cmd, std::vector<std::string> args) : command(std::move(cmd)), argv(std::move(args)) {}

  std::string command;
  std::vector<std::string> argv;
  json inputs = json::object();
  json parameters = json::object();
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> outputs;

  void write(const fs::path& dir) const {
    json j = {{"tool", "lucid"},
              {"version", kToolVersion},
              {"command", command},
              {"argv", argv},
              {"inputs", inputs},
              {"parameters", parameters},
              {"seeds", seeds},
              {"output_dir", fs::absolute(dir).lexically_normal().string()},
              {"outputs", outputs}};
    write_json(dir / "manifest.json", j);
  }
};

std::string abs_path(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

Thresholds thresholds(Micros slot_len, double th_iat_ms, std::uint32_t th_count) {
  Thresholds th;
  th.slot_len_us = slot_len;
  th.th_iat_us = ms_to_us(th_iat_ms, "--th-iat-ms");
  th.th_count = th_count;
  th.validate();
  return th;
}

// ---- features CSV --------------------------------------------------------

struct FeatureTable {
  Micros slot_len_us = 0;
  std::vector<SlotFeatures> features;
  std::vector<ChannelState> states;  // empty when the file is unlabeled
};

void write_features_csv(const fs::path& p, Micros slot_len, std::span<const SlotFeatures> features,
                        std::span<const ChannelState> states, const std::vector<std::string>& regimes = {}) {
  auto f = open_out(p);
  f << "# slot_len_us=" << slot_len << '\n';
  f << "slot_index,start_us,mean_iat_us,count,state";
  if (!regimes.empty()) f << ",regime";
  f << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& x = features[i];
    f << x.slot_index << ',' << x.slot_index * slot_len << ',' << x.mean_iat_us << ',' << x.count << ','
      << to_string(states[i]);
    if (!regimes.empty()) f << ',' << regimes[i];
    f << '\n';
  }
}

ChannelState parse_state(const std::string& s, const std::string& where) {
  if (s == "FREE") return ChannelState::kFree;
  if (s == "BUSY") return ChannelState::kBusy;
  throw Error(where + ": unknown channel state '" + s + "'");
}

FeatureTable read_features_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open features file: " + path);
  FeatureTable t;
  std::string line;
  std::vector<std::string> header;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto k = line.find("slot_len_us=");
      if (k != std::string::npos) t.slot_len_us = std::stoull(line.substr(k + 12));
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header.empty()) {
      header = cells;
      continue;
    }
    if (cells.size() != header.size()) {
      throw ParseError(line_no, path + ": expected " + std::to_string(header.size()) + " columns");
    }
    SlotFeatures f;
    std::optional<ChannelState> state;
    try {
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "slot_index") f.slot_index = std::stoull(cells[i]);
        if (header[i] == "mean_iat_us") f.mean_iat_us = std::stod(cells[i]);
        if (header[i] == "count") f.count = static_cast<std::uint32_t>(std::stoul(cells[i]));
        if (header[i] == "state") state = parse_state(cells[i], path);
      }
    } catch (const std::logic_error&) {
      throw ParseError(line_no, path + ": malformed number");
    }
    t.features.push_back(f);
    if (state) t.states.push_back(*state);
  }
  for (const char* col : {"slot_index", "mean_iat_us", "count"}) {
    if (std::find(header.begin(), header.end(), col) == header.end()) {
      throw Error(path + ": missing column '" + col + "'");
    }
  }
  if (std::find(header.begin(), header.end(), "state") == header.end()) {
    throw Error(path + ": no state column; training needs labeled slots");
  }
  if (t.features.empty()) throw Error(path + ": no feature rows");
  if (t.slot_len_us == 0) throw Error(path + ": missing '# slot_len_us=' header line");
  return t;
}

// ---- segmentation helpers ------------------------------------------------

std::size_t busiest_window(const std::vector<std::vector<SlotFeatures>>& windows, const Thresholds& th) {
  std::size_t best = 0;
  double best_frac = -1.0;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto labels = label_channel_states(windows[w], th);
    const double frac =
        static_cast<double>(std::count(labels.begin(), labels.end(), ChannelState::kBusy)) / labels.size();
    if (frac > best_frac) {
      best = w;
      best_frac = frac;
    }
  }
  return best;
}

struct SegmentRun {
  std::vector<std::vector<SlotFeatures>> windows;
  std::size_t reference = 0;
  WindowSegmentation seg;
};

SegmentRun run_segmentation(const ArrivalTrace& trace, const Thresholds& th, Micros window_len,
                            const std::string& peak_window, int components, std::uint64_t seed) {
  SegmentRun r;
  r.windows = split_windows(trace, th.slot_len_us, window_len);
  if (r.windows.size() < 2) throw Error("segmentation needs a trace spanning at least two windows");
  if (peak_window == "auto") {
    r.reference = busiest_window(r.windows, th);
  } else {
    try {
      r.reference = std::stoul(peak_window);
    } catch (const std::logic_error&) {
      throw Error("--peak-window must be 'auto' or a window index");
    }
    if (r.reference >= r.windows.size()) {
      throw Error("--peak-window " + peak_window + " is past the last window (" +
                  std::to_string(r.windows.size() - 1) + ")");
    }
  }
  SegmentationOptions opt;
  opt.window_len_us = window_len;
  opt.components = components;
  opt.seed = seed;
  r.seg = segment_windows(trace, r.windows[r.reference], th, opt);
  return r;
}

// ---- model training ------------------------------------------------------

RegimeModels train_regime(const FeatureTable& t, const std::string& components, int hmm_components,
                          std::uint64_t seed, const Thresholds& th, json& report) {
  RegimeModels m;
  int M = 0;
  const auto busy = std::count(t.states.begin(), t.states.end(), ChannelState::kBusy);
  const bool single_state = busy == 0 || static_cast<std::size_t>(busy) == t.states.size();
  if (components == "auto" && single_state) {
    // AUC is undefined with one class; keep the default count.
    M = static_cast<int>(std::min<std::size_t>(7, t.features.size()));
    report["auc_per_m"] = nullptr;
  } else if (components == "auto") {
    const auto sel = select_component_count(t.features, t.states, 3, 10, seed, th);
    M = sel.components;
    json auc = json::object();
    for (const auto& [k, v] : sel.auc_per_m) auc[std::to_string(k)] = v;
    report["auc_per_m"] = auc;
  } else {
    try {
      M = std::stoi(components);
    } catch (const std::logic_error&) {
      throw Error("--components must be an integer or 'auto'");
    }
    if (M < 1) throw Error("--components must be >= 1");
  }
  if (static_cast<std::size_t>(M) > t.features.size()) {
    throw Error("--components " + std::to_string(M) + " exceeds the " + std::to_string(t.features.size()) +
                " training slots");
  }
  report["components"] = M;
  m.gmm = gmm_fit(t.features, M, seed);
  if (busy == 0) {
    m.hmm = quiet_channel_model(t.slot_len_us);
    report["hmm"] = "all slots FREE: absorbing FREE model";
  } else if (static_cast<std::size_t>(busy) == t.states.size()) {
    m.hmm = saturated_channel_model(t.slot_len_us);
    report["hmm"] = "all slots BUSY: absorbing BUSY model";
  } else {
    m.hmm = hmm_fit(t.features, t.states, 1e-6, 100, seed, hmm_components);
    report["hmm"] = "baum-welch";
  }
  return m;
}

// ---- simulation summaries -------------------------------------------------

struct RunSummary {
  std::string scenario, protocol, environment, interference_type;
  Micros t_data_us = 0;
  std::uint64_t seed = 0;
  double pdr = 0.0, duty = 0.0;
};

RunSummary summarize(const json& j) {
  try {
    return {j.at("scenario").get<std::string>(),
            j.at("protocol").get<std::string>(),
            j.value("environment", std::string("none")),
            j.value("interference_type", std::string("none")),
            j.at("t_data_us").get<Micros>(),
            j.at("seed").get<std::uint64_t>(),
            j.at("pdr_pct").get<double>(),
            j.at("duty_cycle_pct").get<double>()};
  } catch (const json::exception& e) {
    throw Error(std::string("not a simulation result: ") + e.what());
  }
}

std::vector<ReportRow> aggregate(const std::vector<RunSummary>& runs, bool per_seed) {
  std::vector<ReportRow> rows;
  if (per_seed) {
    for (const auto& r : runs) {
      rows.push_back({r.scenario, r.protocol, r.environment, r.interference_type, r.t_data_us / 1e6,
                      std::to_string(r.seed), r.pdr, 0.0, r.duty, 0.0});
    }
    return rows;
  }
  using Key = std::tuple<std::string, std::string, std::string, std::string, Micros>;
  std::map<Key, std::vector<const RunSummary*>> groups;
  for (const auto& r : runs) groups[{r.scenario, r.protocol, r.environment, r.interference_type, r.t_data_us}].push_back(&r);
  for (auto& [k, members] : groups) {
    std::sort(members.begin(), members.end(), [](auto* a, auto* b) { return a->seed < b->seed; });
    std::vector<double> pdr, duty;
    std::string seeds;
    for (const auto* m : members) {
      pdr.push_back(m->pdr);
      duty.push_back(m->duty);
      if (!seeds.empty()) seeds += ';';
      seeds += std::to_string(m->seed);
    }
    const auto [pm, ps] = mean_and_std(pdr);
    const auto [dm, ds] = mean_and_std(duty);
    rows.push_back({std::get<0>(k), std::get<1>(k), std::get<2>(k), std::get<3>(k), std::get<4>(k) / 1e6, seeds,
                    pm, ps, dm, ds});
  }
  return rows;
}

void write_reports(const fs::path& dir, const std::vector<ReportRow>& rows, Manifest& m) {
  {
    auto f = open_out(dir / "report.csv");
    emit_report(rows, ReportFormat::kCsv, f);
  }
  {
    auto f = open_out(dir / "report.json");
    emit_report(rows, ReportFormat::kJson, f);
  }
  m.outputs.push_back("report.csv");
  m.outputs.push_back("report.json");
}

std::string safe_name(std::string s) {
  for (auto& ch : s) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  }
  return s;
}

// ---- commands --------------------------------------------------------------

int cmd_characterize(const std::string& trace_path, double slot_ms, double th_iat_ms, std::uint32_t th_count,
                     double window_min, const std::string& peak_window, int components, std::uint64_t seed,
                     const std::string& out_dir, const std::vector<std::string>& argv, std::ostream& out) {
  const auto dir = prepare_out(out_dir);
  const Micros slot = ms_to_us(slot_ms, "--slot-ms");
  const auto th = thresholds(slot, th_iat_ms, th_count);
  const auto trace = ingest_trace_file(trace_path);
  const auto features = extract_slot_features(trace, slot);
  const auto states = label_channel_states(features, th);

  Manifest m{"characterize", argv};
  m.inputs = {{"trace", abs_path(trace_path)}};
  m.parameters = {{"slot_len_us", slot},
                  {"th_iat_us", th.th_iat_us},
                  {"th_count", th.th_count},
                  {"window_len_us", ms_to_us(window_min * 60000.0, "--window-min")},
                  {"peak_window", peak_window},
                  {"components", components}};
  m.seeds = {seed};

  std::vector<std::string> regimes;
  const Micros window = ms_to_us(window_min * 60000.0, "--window-min");
  if (trace.duration_us / window >= 2) {
    const auto run = run_segmentation(trace, th, window, peak_window, components, seed);
    {
      auto f = open_out(dir / "segmentation.csv");
      write_segmentation_csv(run.seg, f);
    }
    m.outputs.push_back("segmentation.csv");
    m.parameters["peak_reference_window"] = run.reference;
    const auto per_window = window / slot;
    for (const auto& f : features) {
      const auto w = f.slot_index / per_window;
      regimes.push_back(w < run.seg.labels.size() ? to_string(run.seg.labels[w]) : "NONE");
    }
  } else {
    m.parameters["segmentation"] = "skipped: trace shorter than two windows";
  }
  write_features_csv(dir / "features.csv", slot, features, states, regimes);
  m.outputs.push_back("features.csv");
  {
    auto f = open_out(dir / "histogram.csv");
    write_histogram_csv(build_histogram(features, slot), f);
  }
  m.outputs.push_back("histogram.csv");
  m.write(dir);

  const auto busy = std::count(states.begin(), states.end(), ChannelState::kBusy);
  out << "slots " << features.size() << ", arrivals " << trace.arrivals.size() << ", busy " << busy << '\n';
  return kExitOk;
}

int cmd_segment(const std::string& trace_path, double slot_ms, double th_iat_ms, std::uint32_t th_count,
                double window_min, const std::string& peak_window, int components, std::uint64_t seed,
                const std::string& out_dir, const std::vector<std::string>& argv, std::ostream& out) {
  const auto dir = prepare_out(out_dir);
  const Micros slot = ms_to_us(slot_ms, "--slot-ms");
  const Micros window = ms_to_us(window_min * 60000.0, "--window-min");
  const auto th = thresholds(slot, th_iat_ms, th_count);
  const auto trace = ingest_trace_file(trace_path);
  const auto run = run_segmentation(trace, th, window, peak_window, components, seed);
  const auto [peak, offpeak] = select_training_windows(run.seg);

  Manifest m{"segment", argv};
  m.inputs = {{"trace", abs_path(trace_path)}};
  m.parameters = {{"slot_len_us", slot},     {"th_iat_us", th.th_iat_us}, {"th_count", th.th_count},
                  {"window_len_us", window}, {"peak_window", peak_window}, {"components", components}};
  m.seeds = {seed};
  {
    auto f = open_out(dir / "segmentation.csv");
    write_segmentation_csv(run.seg, f);
  }
  for (const auto& [name, w] : {std::pair{"peak", peak}, std::pair{"offpeak", offpeak}}) {
    const auto& feats = run.windows[w];
    write_features_csv(dir / (std::string(name) + "_features.csv"), slot, feats, label_channel_states(feats, th));
  }
  write_json(dir / "training_windows.json",
             {{"peak_reference_window", run.reference}, {"peak_window", peak}, {"offpeak_window", offpeak}});
  m.outputs = {"segmentation.csv", "peak_features.csv", "offpeak_features.csv", "training_windows.json"};
  m.write(dir);
  out << "windows " << run.seg.labels.size() << ", peak training window " << peak << ", off-peak training window "
      << offpeak << '\n';
  return kExitOk;
}

int cmd_train(const std::string& peak_path, const std::string& offpeak_path, const std::string& components,
              int hmm_components, std::uint64_t seed, double th_iat_ms, std::uint32_t th_count,
              const std::string& out_dir, const std::vector<std::string>& argv, std::ostream& out) {
  const auto dir = prepare_out(out_dir);
  const auto peak = read_features_csv(peak_path);
  const auto offpeak = read_features_csv(offpeak_path);
  if (peak.slot_len_us != offpeak.slot_len_us) {
    throw Error("peak and off-peak features use different slot lengths (" + std::to_string(peak.slot_len_us) +
                " vs " + std::to_string(offpeak.slot_len_us) + " us)");
  }
  if (hmm_components < 1) throw Error("--hmm-components must be >= 1");
  const auto th = thresholds(peak.slot_len_us, th_iat_ms, th_count);
  json report = {{"peak", json::object()}, {"offpeak", json::object()}};
  ModelPair mp;
  mp.slot_len_us = peak.slot_len_us;
  mp.peak = train_regime(peak, components, hmm_components, seed, th, report["peak"]);
  mp.offpeak = train_regime(offpeak, components, hmm_components, seed, th, report["offpeak"]);
  save_model_pair(mp, (dir / "model.json").string());
  write_json(dir / "training_report.json", report);

  Manifest m{"train", argv};
  m.inputs = {{"peak_features", abs_path(peak_path)}, {"offpeak_features", abs_path(offpeak_path)}};
  m.parameters = {{"components", components},
                  {"hmm_components", hmm_components},
                  {"slot_len_us", mp.slot_len_us},
                  {"th_iat_us", th.th_iat_us},
                  {"th_count", th.th_count}};
  m.seeds = {seed};
  m.outputs = {"model.json", "training_report.json"};
  m.write(dir);
  out << "peak M=" << report["peak"]["components"] << ", offpeak M=" << report["offpeak"]["components"]
      << ", digests " << digest_hex(mp.peak.hmm.model_digest) << ' ' << digest_hex(mp.offpeak.hmm.model_digest)
      << '\n';
  return kExitOk;
}

int cmd_evaluate(const std::string& model_path, const std::string& trace_path, const std::string& regime,
                 const std::string& method, std::optional<double> slot_ms, std::uint64_t seed, double th_iat_ms,
                 std::uint32_t th_count, const std::string& out_dir, const std::vector<std::string>& argv,
                 std::ostream& out) {
  const auto dir = prepare_out(out_dir);
  const auto mp = load_model_pair(model_path);
  if (slot_ms) {
    const Micros s = ms_to_us(*slot_ms, "--slot-ms");
    if (s != mp.slot_len_us) {
      throw Error("slot length mismatch: model uses " + std::to_string(mp.slot_len_us) + " us, --slot-ms gives " +
                  std::to_string(s) + " us");
    }
  }
  const auto th = thresholds(mp.slot_len_us, th_iat_ms, th_count);
  const auto trace = ingest_trace_file(trace_path);
  const auto features = extract_slot_features(trace, mp.slot_len_us);
  const auto truth = label_channel_states(features, th);
  const auto& rm = mp.get(parse_regime(regime));

  std::vector<ChannelState> est;
  if (method == "classify") {
    est = gmm_classify_states(rm.gmm, features, th);
  } else if (method == "sample") {
    est = gmm_estimate_states(rm.gmm, features.size(), seed, th);
  } else if (method == "viterbi") {
    est = hmm_viterbi(rm.hmm, features);
  } else if (method == "pareto") {
    est = pareto_baseline_states(pareto_baseline_fit(trace), features.size(), seed, th);
  } else {
    throw Error("unknown --method '" + method + "' (expected classify, sample, viterbi or pareto)");
  }
  auto j = to_json(confusion_metrics(est, truth));
  j["model"] = abs_path(model_path);
  j["trace"] = abs_path(trace_path);
  j["regime"] = to_string(parse_regime(regime));
  j["method"] = method;
  j["slot_len_us"] = mp.slot_len_us;
  j["n_slots"] = features.size();
  write_json(dir / "evaluation.json", j);

  Manifest m{"evaluate", argv};
  m.inputs = {{"model", abs_path(model_path)}, {"trace", abs_path(trace_path)}};
  m.parameters = {{"regime", regime}, {"method", method}, {"th_iat_us", th.th_iat_us}, {"th_count", th.th_count}};
  m.seeds = {seed};
  m.outputs = {"evaluation.json"};
  m.write(dir);
  out << std::setprecision(6) << "accuracy " << j["accuracy_pct"].get<double>() << "%, fpr "
      << j["fpr_pct"].get<double>() << "%\n";
  return kExitOk;
}

int cmd_predict(const std::string& model_path, std::int64_t period, int count, double t_data_ms,
                const std::string& regime, std::uint32_t n_slot, const std::string& out_dir,
                const std::vector<std::string>& argv, std::ostream& out) {
  const auto dir = prepare_out(out_dir);
  const auto mp = load_model_pair(model_path);
  const Micros t_data = ms_to_us(t_data_ms, "--t-data-ms");
  if (t_data % mp.slot_len_us != 0) throw Error("--t-data-ms must be a multiple of the model's slot length");
  if (period < 0) throw Error("--period must be >= 0");
  if (count < 1) throw Error("--count must be >= 1");
  if (n_slot < 1) throw Error("--n-slot must be >= 1");
  const auto horizon = static_cast<std::uint32_t>(t_data / mp.slot_len_us);
  const auto& hmm = mp.get(parse_regime(regime)).hmm;
  json periods = json::array();
  for (int k = 0; k < count; ++k) {
    const auto p = period + k;
    const auto pl = predict_white_spaces(hmm, p, horizon);
    json rx = json::array();
    for (const auto& e : plan_rx_schedule(hmm, p, horizon, n_slot, mp.slot_len_us)) {
      rx.push_back({{"slot_index", e.slot_index}, {"start_us", e.start_us}});
    }
    periods.push_back({{"period_index", p}, {"free_slots", pl.free_slots}, {"rx_schedule", rx}});
  }
  const json j = {{"model_digest", digest_hex(hmm.model_digest)},
                  {"regime", to_string(parse_regime(regime))},
                  {"slot_len_us", mp.slot_len_us},
                  {"horizon_slots", horizon},
                  {"n_slot", n_slot},
                  {"periods", periods}};
  write_json(dir / "prediction.json", j);
  Manifest m{"predict", argv};
  m.inputs = {{"model", abs_path(model_path)}};
  m.parameters = {{"period", period}, {"count", count}, {"t_data_us", t_data}, {"regime", regime}, {"n_slot", n_slot}};
  m.outputs = {"prediction.json"};
  m.write(dir);
  out << "horizon " << horizon << " slots, " << periods.front()["free_slots"].size() << " predicted FREE in period "
      << period << '\n';
  return kExitOk;
}

struct SimOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> protocol;
  std::optional<int> lpl_max_tx;
  std::optional<std::uint32_t> n_slot;
  std::optional<double> duration_min;
  std::optional<double> t_data_ms;
};

void apply(SimConfig& c, const SimOverrides& o) {
  if (o.seed) c.seed = *o.seed;
  if (o.protocol) c.protocol = parse_protocol(*o.protocol);
  if (o.lpl_max_tx) c.lpl.max_tx = *o.lpl_max_tx;
  if (o.n_slot) c.n_slot = *o.n_slot;
  if (o.duration_min) c.duration_us = ms_to_us(*o.duration_min * 60000.0, "--duration-min");
  if (o.t_data_ms) c.t_data_us = ms_to_us(*o.t_data_ms, "--t-data-ms");
  c.validate();
}

json overrides_json(const SimOverrides& o) {
  json j = json::object();
  if (o.seed) j["seed"] = *o.seed;
  if (o.protocol) j["protocol"] = *o.protocol;
  if (o.lpl_max_tx) j["lpl_max_tx"] = *o.lpl_max_tx;
  if (o.n_slot) j["n_slot"] = *o.n_slot;
  if (o.duration_min) j["duration_min"] = *o.duration_min;
  if (o.t_data_ms) j["t_data_ms"] = *o.t_data_ms;
  return j;
}

int cmd_simulate(const std::string& config_path, const SimOverrides& ov, bool ledger, const std::string& out_dir,
                 const std::vector<std::string>& argv, std::ostream& out) {
  auto cfg = load_sim_config(config_path);
  apply(cfg, ov);
  cfg.record_ledger = ledger;
  const auto dir = prepare_out(out_dir);
  const auto r = run_simulation(cfg);
  write_json(dir / "result.json", to_json(r));
  write_json(dir / "config.resolved.json", to_json(cfg));
  Manifest m{"simulate", argv};
  m.inputs = {{"config", abs_path(config_path)}};
  m.parameters = overrides_json(ov);
  m.seeds = {cfg.seed};
  m.outputs = {"result.json", "config.resolved.json"};
  if (ledger) {
    auto f = open_out(dir / "ledger.csv");
    write_ledger_csv(r, f);
    m.outputs.push_back("ledger.csv");
  }
  m.write(dir);
  out << std::setprecision(6) << protocol_label(r) << " pdr " << r.pdr_pct << "%, duty " << r.duty_cycle_pct
      << "%, triggers " << r.triggers.size() << '\n';
  for (const auto& e : r.errors) out << "warning: " << e << '\n';
  return kExitOk;
}

struct Job {
  std::string name;
  SimConfig config;
};

std::vector<Job> jobs_from_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open matrix file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("matrix file '" + path + "' is not valid JSON: " + e.what());
  }
  std::vector<Job> jobs;
  try {
    const auto scenarios = j.value("scenarios", std::vector<std::string>{"5-node"});
    const auto envs = j.value("environments", std::vector<std::string>{"office", "home"});
    const auto regs = j.value("interference", std::vector<std::string>{"peak", "offpeak"});
    const auto protos = j.value("protocols", std::vector<std::string>{"LUCID", "LPL:1", "LPL:3"});
    const auto t_data = j.value("t_data_s", std::vector<double>{10.0, 60.0});
    for (const auto& s : scenarios) {
      for (const auto& env : envs) {
        for (const auto& reg : regs) {
          for (const auto& p : protos) {
            for (double t : t_data) {
              const auto colon = p.find(':');
              const auto proto = parse_protocol(p.substr(0, colon));
              auto c = make_scenario(s, env, parse_regime(reg), proto, ms_to_us(t * 1000.0, "t_data_s"), 1);
              if (colon != std::string::npos) c.lpl.max_tx = std::stoi(p.substr(colon + 1));
              if (j.contains("duration_min")) c.duration_us = ms_to_us(j["duration_min"].get<double>() * 60000.0, "duration_min");
              if (j.contains("n_slot")) c.n_slot = j["n_slot"].get<std::uint32_t>();
              c.validate();
              std::ostringstream name;
              name << s << '_' << env << '_' << reg << '_' << p << "_T" << t;
              jobs.push_back({safe_name(name.str()), c});
            }
          }
        }
      }
    }
  } catch (const json::exception& e) {
    throw Error(std::string("invalid matrix file: ") + e.what());
  } catch (const std::logic_error&) {
    throw Error("invalid protocol entry in matrix file (expected LUCID, LPL or LPL:<max_tx>)");
  }
  return jobs;
}

int cmd_compare(const std::vector<std::string>& configs, const std::string& matrix, int n_seeds,
                std::vector<std::uint64_t> seed_list, int threads, bool per_seed, const std::string& out_dir,
                const std::vector<std::string>& argv, std::ostream& out) {
  if (configs.empty() == matrix.empty()) throw Error("give either --config (one or more) or --matrix");
  std::vector<Job> base;
  if (!matrix.empty()) {
    base = jobs_from_matrix(matrix);
  } else {
    for (const auto& p : configs) base.push_back({safe_name(fs::path(p).stem().string()), load_sim_config(p)});
  }
  if (seed_list.empty()) {
    if (n_seeds < 1) throw Error("--seeds must be >= 1");
    for (int s = 1; s <= n_seeds; ++s) seed_list.push_back(static_cast<std::uint64_t>(s));
  }
  const auto dir = prepare_out(out_dir);
  fs::create_directories(dir / "results");

  std::vector<Job> jobs;
  for (const auto& b : base) {
    for (auto s : seed_list) {
      Job j = b;
      j.config.seed = s;
      j.name = b.name + "_seed" + std::to_string(s);
      jobs.push_back(std::move(j));
    }
  }
  std::vector<json> results(jobs.size());
  std::vector<std::string> failures(jobs.size());
  std::atomic<std::size_t> next{0};
  const int n_threads = std::max(1, threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency()));
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = to_json(run_simulation(jobs[i].config));
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<int>(n_threads, static_cast<int>(jobs.size())); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!failures[i].empty()) throw Error(jobs[i].name + ": " + failures[i]);
  }

  Manifest m{"compare", argv};
  std::vector<RunSummary> runs;
  json cfgs = json::array();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    write_json(dir / "results" / (jobs[i].name + ".json"), results[i]);
    m.outputs.push_back("results/" + jobs[i].name + ".json");
    runs.push_back(summarize(results[i]));
  }
  for (const auto& b : base) cfgs.push_back({{"name", b.name}, {"config", to_json(b.config)}});
  write_json(dir / "configs.resolved.json", cfgs);
  m.outputs.push_back("configs.resolved.json");
  const auto rows = aggregate(runs, per_seed);
  write_reports(dir, rows, m);
  json in = json::object();
  if (!matrix.empty()) in["matrix"] = abs_path(matrix);
  json cl = json::array();
  for (const auto& c : configs) cl.push_back(abs_path(c));
  if (!configs.empty()) in["configs"] = cl;
  m.inputs = in;
  m.parameters = {{"threads", n_threads}, {"per_seed", per_seed}};
  m.seeds = seed_list;
  m.write(dir);
  emit_report(rows, ReportFormat::kCsv, out);
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& format, bool per_seed,
               const std::string& out_dir, const std::vector<std::string>& argv, std::ostream& out) {
  const auto fmt = parse_report_format(format);
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && e.path().extension() == ".json" && name != "manifest.json" &&
            name != "report.json" && name.find("config") == std::string::npos) {
          files.push_back(e.path());
        }
      }
    } else if (fs::is_regular_file(in)) {
      files.emplace_back(in);
    } else {
      throw Error("no such result file or directory: " + in);
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("no simulation results found");
  std::vector<RunSummary> runs;
  for (const auto& f : files) {
    std::ifstream s(f);
    json j;
    try {
      j = json::parse(s);
    } catch (const json::exception& e) {
      throw Error(f.string() + " is not valid JSON: " + e.what());
    }
    runs.push_back(summarize(j));
  }
  const auto rows = aggregate(runs, per_seed);
  const auto dir = prepare_out(out_dir);
  const auto name = fmt == ReportFormat::kCsv ? "report.csv" : "report.json";
  {
    auto f = open_out(dir / name);
    emit_report(rows, fmt, f);
  }
  Manifest m{"report", argv};
  json in = json::array();
  for (const auto& f : files) in.push_back(abs_path(f.string()));
  m.inputs = {{"results", in}};
  m.parameters = {{"format", format}, {"per_seed", per_seed}};
  m.outputs = {name};
  m.write(dir);
  emit_report(rows, fmt, out);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"LUCID interference characterization, white-space prediction and MAC simulation"};
  app.name("lucid");
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  // characterize / segment share their trace options.
  std::string trace, out_dir, peak_window = "auto";
  double slot_ms = 100.0, th_iat_ms = kWhiteSpaceUs / 1000.0, window_min = 60.0;
  std::uint32_t th_count = 11;
  int seg_components = 3;
  std::uint64_t seed = 1;

  auto* ch = app.add_subcommand("characterize", "slot features, state labels, histogram and segmentation");
  ch->add_option("trace", trace, "arrival trace file")->required();
  ch->add_option("--slot-ms", slot_ms, "slot length in ms")->capture_default_str();
  ch->add_option("--th-iat-ms", th_iat_ms, "BUSY threshold on mean IAT in ms")->capture_default_str();
  ch->add_option("--th-count", th_count, "BUSY threshold on arrivals per slot")->capture_default_str();
  ch->add_option("--window-min", window_min, "segmentation window in minutes")->capture_default_str();
  ch->add_option("--peak-window", peak_window, "peak reference window index, or auto (busiest)")->capture_default_str();
  ch->add_option("--components", seg_components, "GMM components per window model")->capture_default_str();
  ch->add_option("--seed", seed)->capture_default_str();
  ch->add_option("--out", out_dir, "output directory")->required();

  auto* sg = app.add_subcommand("segment", "label windows PEAK/OFFPEAK and pick training windows");
  sg->add_option("trace", trace, "arrival trace file")->required();
  sg->add_option("--slot-ms", slot_ms)->capture_default_str();
  sg->add_option("--th-iat-ms", th_iat_ms)->capture_default_str();
  sg->add_option("--th-count", th_count)->capture_default_str();
  sg->add_option("--window-min", window_min)->capture_default_str();
  sg->add_option("--peak-window", peak_window)->capture_default_str();
  sg->add_option("--components", seg_components)->capture_default_str();
  sg->add_option("--seed", seed)->capture_default_str();
  sg->add_option("--out", out_dir)->required();

  std::string peak_feat, offpeak_feat, components = "7";
  int hmm_components = 3;
  auto* tr = app.add_subcommand("train", "fit the peak/off-peak GMM + HMM pair");
  tr->add_option("--peak", peak_feat, "labeled features CSV of the peak window")->required();
  tr->add_option("--offpeak", offpeak_feat, "labeled features CSV of the off-peak window")->required();
  tr->add_option("--components", components, "GMM components, or auto (3..10 by AUC)")->capture_default_str();
  tr->add_option("--hmm-components", hmm_components, "mixture components per HMM state")->capture_default_str();
  tr->add_option("--th-iat-ms", th_iat_ms)->capture_default_str();
  tr->add_option("--th-count", th_count)->capture_default_str();
  tr->add_option("--seed", seed)->capture_default_str();
  tr->add_option("--out", out_dir)->required();

  std::string model, regime = "peak", method = "classify";
  std::optional<double> eval_slot_ms;
  auto* ev = app.add_subcommand("evaluate", "accuracy and FPR of an estimate against a trace");
  ev->add_option("--model", model)->required();
  ev->add_option("--trace", trace)->required();
  ev->add_option("--regime", regime)->capture_default_str();
  ev->add_option("--method", method, "classify, sample, viterbi or pareto")->capture_default_str();
  ev->add_option("--slot-ms", eval_slot_ms, "must match the model when given");
  ev->add_option("--th-iat-ms", th_iat_ms)->capture_default_str();
  ev->add_option("--th-count", th_count)->capture_default_str();
  ev->add_option("--seed", seed)->capture_default_str();
  ev->add_option("--out", out_dir)->required();

  std::int64_t period = 0;
  int count = 1;
  double t_data_ms = 60000.0;
  std::uint32_t n_slot = 2;
  auto* pr = app.add_subcommand("predict", "predicted FREE slots and RX schedule for data periods");
  pr->add_option("--model", model)->required();
  pr->add_option("--period", period)->required();
  pr->add_option("--count", count)->capture_default_str();
  pr->add_option("--t-data-ms", t_data_ms)->capture_default_str();
  pr->add_option("--regime", regime)->capture_default_str();
  pr->add_option("--n-slot", n_slot)->capture_default_str();
  pr->add_option("--out", out_dir)->required();

  std::string config;
  SimOverrides ov;
  bool ledger = false;
  auto* sm = app.add_subcommand("simulate", "run one simulation");
  sm->add_option("--config", config)->required();
  sm->add_option("--seed", ov.seed);
  sm->add_option("--protocol", ov.protocol, "LUCID or LPL");
  sm->add_option("--lpl-max-tx", ov.lpl_max_tx);
  sm->add_option("--n-slot", ov.n_slot);
  sm->add_option("--duration-min", ov.duration_min);
  sm->add_option("--t-data-ms", ov.t_data_ms);
  sm->add_flag("--ledger", ledger, "write the per-frame ledger CSV");
  sm->add_option("--out", out_dir)->required();

  std::vector<std::string> configs;
  std::string matrix;
  int n_seeds = 3, threads = 0;
  std::vector<std::uint64_t> seed_list;
  bool per_seed = false;
  auto* cp = app.add_subcommand("compare", "run configs over several seeds and aggregate");
  cp->add_option("--config", configs, "simulation config (repeatable)");
  cp->add_option("--matrix", matrix, "scenario matrix JSON");
  cp->add_option("--seeds", n_seeds, "run seeds 1..n")->capture_default_str();
  cp->add_option("--seed-list", seed_list, "explicit seeds (overrides --seeds)");
  cp->add_option("--threads", threads, "worker threads (0 = hardware)")->capture_default_str();
  cp->add_flag("--per-seed", per_seed, "one report row per run");
  cp->add_option("--out", out_dir)->required();

  std::vector<std::string> inputs;
  std::string format = "csv";
  auto* rp = app.add_subcommand("report", "aggregate simulation results");
  rp->add_option("results", inputs, "result files or directories")->required();
  rp->add_option("--format", format, "csv or json")->capture_default_str();
  rp->add_flag("--per-seed", per_seed);
  rp->add_option("--out", out_dir)->required();

  std::vector<const char*> cargv;
  for (const auto& a : args) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*ch) {
      return cmd_characterize(trace, slot_ms, th_iat_ms, th_count, window_min, peak_window, seg_components, seed,
                              out_dir, args, out);
    }
    if (*sg) {
      return cmd_segment(trace, slot_ms, th_iat_ms, th_count, window_min, peak_window, seg_components, seed,
                         out_dir, args, out);
    }
    if (*tr) {
      return cmd_train(peak_feat, offpeak_feat, components, hmm_components, seed, th_iat_ms, th_count, out_dir, args,
                       out);
    }
    if (*ev) {
      return cmd_evaluate(model, trace, regime, method, eval_slot_ms, seed, th_iat_ms, th_count, out_dir, args, out);
    }
    if (*pr) return cmd_predict(model, period, count, t_data_ms, regime, n_slot, out_dir, args, out);
    if (*sm) return cmd_simulate(config, ov, ledger, out_dir, args, out);
    if (*cp) return cmd_compare(configs, matrix, n_seeds, seed_list, threads, per_seed, out_dir, args, out);
    if (*rp) return cmd_report(inputs, format, per_seed, out_dir, args, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  err << "no command given\n";
  return kExitInput;
}

}  // namespace lucid::cli
