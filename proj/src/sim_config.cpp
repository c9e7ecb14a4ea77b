#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>

#include "lucid/error.hpp"
#include "lucid/rng.hpp"
#include "lucid/simulator.hpp"

namespace lucid {

using nlohmann::json;

const char* to_string(Protocol p) { return p == Protocol::kLucid ? "LUCID" : "LPL"; }

Protocol parse_protocol(std::string_view s) {
  if (s == "LUCID" || s == "lucid") return Protocol::kLucid;
  if (s == "LPL" || s == "lpl" || s == "LPL_BASELINE") return Protocol::kLpl;
  throw Error("unknown protocol '" + std::string(s) + "' (expected LUCID or LPL)");
}

// ---- topology ------------------------------------------------------------

const NodeSpec& Topology::node(NodeId id) const {
  for (const auto& n : nodes) {
    if (n.id == id) return n;
  }
  throw Error("topology has no node " + std::to_string(id));
}

double Topology::distance(NodeId a, NodeId b) const {
  const auto& p = node(a);
  const auto& q = node(b);
  return std::hypot(p.x_m - q.x_m, p.y_m - q.y_m);
}

void Topology::validate() const {
  if (nodes.empty()) throw Error("topology has no nodes");
  if (!(comm_range_m > 0.0)) throw Error("communication range must be > 0");
  std::set<NodeId> ids;
  for (const auto& n : nodes) {
    if (!ids.insert(n.id).second) throw Error("duplicate node id " + std::to_string(n.id));
  }
  if (!ids.count(coordinator_id)) throw Error("coordinator " + std::to_string(coordinator_id) + " is not a node");
  for (const auto& n : nodes) {
    if (n.id == coordinator_id) {
      if (n.parent) throw Error("the coordinator cannot have a parent");
      continue;
    }
    if (!n.parent) throw Error("node " + std::to_string(n.id) + " has no route to the coordinator");
    if (!ids.count(*n.parent)) {
      throw Error("node " + std::to_string(n.id) + " routes to unknown node " + std::to_string(*n.parent));
    }
    if (distance(n.id, *n.parent) > comm_range_m) {
      throw Error("node " + std::to_string(n.id) + " is out of range of its parent " +
                  std::to_string(*n.parent));
    }
    // Walk up; a route longer than the node count means a cycle.
    NodeId cur = n.id;
    std::size_t steps = 0;
    while (cur != coordinator_id) {
      cur = *node(cur).parent;
      if (++steps > nodes.size()) throw Error("routes from node " + std::to_string(n.id) + " form a cycle");
    }
  }
}

void SimConfig::validate() const {
  topology.validate();
  if (slot_len_us < kWhiteSpaceUs) throw Error("slot length must hold at least one sub-slot");
  if (t_data_us == 0 || t_data_us % slot_len_us != 0) {
    throw Error("slot length must divide the data period");
  }
  if (n_slot < 1) throw Error("n_slot must be >= 1");
  if (duration_us < 2 * t_data_us) throw Error("duration must cover at least two data periods");
  if (lpl.max_tx < 1) throw Error("LPL max_tx must be >= 1");
  if (lpl.wake_interval_us == 0 || lpl.wake_cca_us == 0) throw Error("LPL wake parameters must be > 0");
  if (lucid_max_tx < 1) throw Error("lucid_max_tx must be >= 1");
  if (frame_exchange_us == 0 || frame_exchange_us > kWhiteSpaceUs) {
    throw Error("frame exchange must fit in one sub-slot");
  }
  if (ema_window < 1 || ms_timeout_periods < 1) throw Error("feedback parameters must be >= 1");
  for (const auto& j : jammers) {
    if (j.schedule.empty() || j.schedule.front().start_us != 0) {
      throw Error("jammer schedule must start at time 0");
    }
    for (std::size_t i = 1; i < j.schedule.size(); ++i) {
      if (j.schedule[i].start_us <= j.schedule[i - 1].start_us) {
        throw Error("jammer schedule must be strictly increasing");
      }
    }
    for (Regime r : {Regime::kPeak, Regime::kOffPeak}) {
      const auto& src = j.source(r);
      if (!src.dist && src.replay.empty()) {
        bool used = false;
        for (const auto& ph : j.schedule) used |= ph.regime == r;
        if (used) throw Error(std::string("jammer has no ") + to_string(r) + " source");
      }
    }
  }
}

// ---- JSON ----------------------------------------------------------------

namespace {

json dist_to_json(const IatDistribution& d) {
  return std::visit(
      [](const auto& k) -> json {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, ExponentialIat>) {
          return {{"kind", "exponential"}, {"mean_us", 1.0 / k.rate_per_us}};
        } else if constexpr (std::is_same_v<T, ParetoIat>) {
          return {{"kind", "pareto"}, {"shape", k.shape}, {"scale_us", k.scale_us}};
        } else {
          return {{"kind", "empirical"}, {"support_us", k.support_us}, {"mass", k.mass}};
        }
      },
      d.kind());
}

std::string resolve_path(const std::string& p, const std::string& base_dir) {
  std::filesystem::path path(p);
  if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
  return path.string();
}

JammerSource source_from_json(const json& j, const std::string& base_dir) {
  JammerSource s;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "exponential") {
    s.dist = IatDistribution::exponential_mean(j.at("mean_us").get<double>());
  } else if (kind == "pareto") {
    s.dist = IatDistribution::pareto(j.at("shape").get<double>(), j.at("scale_us").get<double>());
  } else if (kind == "empirical") {
    s.dist = IatDistribution::empirical(j.at("support_us").get<std::vector<double>>(),
                                        j.at("mass").get<std::vector<double>>());
  } else if (kind == "trace_iat") {
    s.dist = IatDistribution::from_trace(ingest_trace_file(resolve_path(j.at("path"), base_dir)));
  } else if (kind == "replay") {
    if (j.contains("arrivals_us")) {
      s.replay = j.at("arrivals_us").get<std::vector<Micros>>();
    } else {
      s.replay = ingest_trace_file(resolve_path(j.at("path"), base_dir)).arrivals;
    }
  } else {
    throw Error("unknown jammer source kind '" + kind + "'");
  }
  return s;
}

json source_to_json(const JammerSource& s) {
  if (s.dist) return dist_to_json(*s.dist);
  if (!s.replay.empty()) return {{"kind", "replay"}, {"arrivals_us", s.replay}};
  return nullptr;
}

}  // namespace

json to_json(const SimConfig& c) {
  json nodes = json::array();
  for (const auto& n : c.topology.nodes) {
    json o = {{"id", n.id}, {"x_m", n.x_m}, {"y_m", n.y_m}};
    o["parent"] = n.parent ? json(*n.parent) : json(nullptr);
    nodes.push_back(o);
  }
  json jammers = json::array();
  for (const auto& j : c.jammers) {
    json sched = json::array();
    for (const auto& ph : j.schedule) sched.push_back({{"start_us", ph.start_us}, {"regime", to_string(ph.regime)}});
    jammers.push_back({{"x_m", j.x_m},
                       {"y_m", j.y_m},
                       {"range_m", j.interference_range_m},
                       {"burst_us", j.burst_us},
                       {"peak", source_to_json(j.peak)},
                       {"offpeak", source_to_json(j.offpeak)},
                       {"schedule", sched}});
  }
  json models = json::object();
  for (const auto& [id, path] : c.model_files) models[std::to_string(id)] = path;
  json out = {
      {"scenario", c.scenario},
      {"environment", c.environment},
      {"interference_type", c.interference_type},
      {"topology", {{"coordinator", c.topology.coordinator_id}, {"comm_range_m", c.topology.comm_range_m}, {"nodes", nodes}}},
      {"protocol", to_string(c.protocol)},
      {"lpl",
       {{"max_tx", c.lpl.max_tx},
        {"wake_interval_us", c.lpl.wake_interval_us},
        {"wake_cca_us", c.lpl.wake_cca_us},
        {"listen_us", c.lpl.listen_us},
        {"tx_cca_us", c.lpl.tx_cca_us},
        {"strobe_gap_us", c.lpl.strobe_gap_us}}},
      {"t_data_us", c.t_data_us},
      {"slot_len_us", c.slot_len_us},
      {"n_slot", c.n_slot},
      {"duration_us", c.duration_us},
      {"jammers", jammers},
      {"seed", c.seed},
      {"lucid_max_tx", c.lucid_max_tx},
      {"frame_exchange_us", c.frame_exchange_us},
      {"bootstrap_min_us", c.bootstrap_min_us},
      {"clock_offset_max_us", c.clock_offset_max_us},
      {"ema_window", c.ema_window},
      {"th_pdr", c.th_pdr},
      {"ms_timeout_periods", c.ms_timeout_periods},
      {"drain_periods", c.drain_periods},
      {"model_files", models},
      {"training_duration_us", c.training_duration_us},
      {"training_components", c.training_components},
      {"record_ledger", c.record_ledger},
  };
  out["initial_model"] = c.initial_model ? json(to_string(*c.initial_model)) : json(nullptr);
  out["stop_after_trigger_periods"] =
      c.stop_after_trigger_periods ? json(*c.stop_after_trigger_periods) : json(nullptr);
  return out;
}

SimConfig sim_config_from_json(const json& j, const std::string& base_dir) {
  try {
    SimConfig c;
    c.scenario = j.value("scenario", std::string("custom"));
    c.environment = j.value("environment", std::string("none"));
    c.interference_type = j.value("interference_type", std::string("none"));
    c.protocol = parse_protocol(j.value("protocol", std::string("LUCID")));
    c.seed = j.value("seed", std::uint64_t{1});
    c.t_data_us = j.value("t_data_us", c.t_data_us);

    // Presets fill in whatever the file leaves out.
    if (c.scenario == "5-node" || c.scenario == "16-node") {
      Regime reg = Regime::kPeak;
      if (c.interference_type != "none") reg = parse_regime(c.interference_type);
      const auto env = c.environment == "none" ? std::string("office") : c.environment;
      const auto preset = make_scenario(c.scenario, env, reg, c.protocol, c.t_data_us, c.seed);
      c.topology = preset.topology;
      c.n_slot = preset.n_slot;
      if (!j.contains("jammers") && c.interference_type != "none") c.jammers = preset.jammers;
    }
    if (j.contains("topology")) {
      const auto& t = j.at("topology");
      c.topology = {};
      c.topology.coordinator_id = t.at("coordinator").get<NodeId>();
      c.topology.comm_range_m = t.value("comm_range_m", 25.0);
      for (const auto& n : t.at("nodes")) {
        NodeSpec s;
        s.id = n.at("id").get<NodeId>();
        s.x_m = n.at("x_m").get<double>();
        s.y_m = n.at("y_m").get<double>();
        if (n.contains("parent") && !n.at("parent").is_null()) s.parent = n.at("parent").get<NodeId>();
        c.topology.nodes.push_back(s);
      }
    }
    if (j.contains("lpl")) {
      const auto& l = j.at("lpl");
      c.lpl.max_tx = l.value("max_tx", c.lpl.max_tx);
      c.lpl.wake_interval_us = l.value("wake_interval_us", c.lpl.wake_interval_us);
      c.lpl.wake_cca_us = l.value("wake_cca_us", c.lpl.wake_cca_us);
      c.lpl.listen_us = l.value("listen_us", c.lpl.listen_us);
      c.lpl.tx_cca_us = l.value("tx_cca_us", c.lpl.tx_cca_us);
      c.lpl.strobe_gap_us = l.value("strobe_gap_us", c.lpl.strobe_gap_us);
    }
    c.slot_len_us = j.value("slot_len_us", c.slot_len_us);
    c.n_slot = j.value("n_slot", c.n_slot);
    c.duration_us = j.value("duration_us", c.duration_us);
    if (j.contains("jammers")) {
      c.jammers.clear();
      for (const auto& jj : j.at("jammers")) {
        JammerSpec s;
        s.x_m = jj.at("x_m").get<double>();
        s.y_m = jj.at("y_m").get<double>();
        s.interference_range_m = jj.value("range_m", s.interference_range_m);
        s.burst_us = jj.value("burst_us", s.burst_us);
        if (jj.contains("peak") && !jj.at("peak").is_null()) s.peak = source_from_json(jj.at("peak"), base_dir);
        if (jj.contains("offpeak") && !jj.at("offpeak").is_null()) {
          s.offpeak = source_from_json(jj.at("offpeak"), base_dir);
        }
        if (jj.contains("schedule")) {
          s.schedule.clear();
          for (const auto& ph : jj.at("schedule")) {
            s.schedule.push_back({ph.at("start_us").get<Micros>(), parse_regime(ph.at("regime").get<std::string>())});
          }
        }
        c.jammers.push_back(std::move(s));
      }
    }
    c.lucid_max_tx = j.value("lucid_max_tx", c.lucid_max_tx);
    c.frame_exchange_us = j.value("frame_exchange_us", c.frame_exchange_us);
    c.bootstrap_min_us = j.value("bootstrap_min_us", c.bootstrap_min_us);
    c.clock_offset_max_us = j.value("clock_offset_max_us", c.clock_offset_max_us);
    if (j.contains("initial_model") && !j.at("initial_model").is_null()) {
      c.initial_model = parse_regime(j.at("initial_model").get<std::string>());
    }
    c.ema_window = j.value("ema_window", c.ema_window);
    c.th_pdr = j.value("th_pdr", c.th_pdr);
    c.ms_timeout_periods = j.value("ms_timeout_periods", c.ms_timeout_periods);
    if (j.contains("stop_after_trigger_periods") && !j.at("stop_after_trigger_periods").is_null()) {
      c.stop_after_trigger_periods = j.at("stop_after_trigger_periods").get<int>();
    }
    c.drain_periods = j.value("drain_periods", c.drain_periods);
    if (j.contains("model_files")) {
      for (const auto& [k, v] : j.at("model_files").items()) {
        c.model_files[static_cast<NodeId>(std::stoul(k))] = resolve_path(v.get<std::string>(), base_dir);
      }
    }
    c.training_duration_us = j.value("training_duration_us", c.training_duration_us);
    c.training_components = j.value("training_components", c.training_components);
    c.record_ledger = j.value("record_ledger", c.record_ledger);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(std::string("invalid simulation config: ") + e.what());
  }
}

SimConfig load_sim_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open simulation config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("simulation config '" + path + "' is not valid JSON: " + e.what());
  }
  return sim_config_from_json(j, std::filesystem::path(path).parent_path().string());
}

// ---- scenarios -----------------------------------------------------------

Topology five_node_topology() {
  // Ids grow toward the coordinator so each hop's sub-slot follows the one
  // it forwards from (2 -> 3 -> 4 -> 5 within one slot).
  Topology t;
  t.coordinator_id = 5;
  t.nodes = {
      {5, 0.0, 0.0, std::nullopt},
      {4, 20.0, 0.0, 5},
      {3, 40.0, 0.0, 4},
      {2, 60.0, 0.0, 3},
      {1, 0.0, 20.0, 5},
  };
  return t;
}

Topology sixteen_node_topology() {
  // id mod 5 = (col + 2 row) mod 5 on the grid, so every node and its radio
  // neighbours use distinct sub-slots. The tree favours sub-slot order
  // increasing toward the coordinator.
  Topology t;
  t.coordinator_id = 5;
  t.nodes = {
      {5, 60.0, 20.0, std::nullopt},
      {4, 40.0, 20.0, 5},
      {3, 60.0, 0.0, 5},
      {2, 60.0, 40.0, 5},
      {8, 20.0, 20.0, 4},
      {1, 40.0, 40.0, 4},
      {7, 40.0, 0.0, 3},
      {9, 60.0, 60.0, 2},
      {12, 0.0, 20.0, 8},
      {10, 20.0, 40.0, 1},
      {6, 20.0, 0.0, 7},
      {13, 40.0, 60.0, 9},
      {14, 0.0, 40.0, 10},
      {15, 0.0, 0.0, 6},
      {17, 20.0, 60.0, 13},
      {11, 0.0, 60.0, 17},
  };
  return t;
}

namespace {

// Synthetic stand-ins for the measured office/home inter-arrival laws.
JammerSource environment_source(const std::string& environment, Regime r, int jammer) {
  JammerSource s;
  const bool peak = r == Regime::kPeak;
  if (environment == "office") {
    // Steady WiFi-like load: exponential gaps.
    const double mean = peak ? (jammer == 0 ? 25000.0 : 30000.0) : (jammer == 0 ? 120000.0 : 150000.0);
    s.dist = IatDistribution::exponential_mean(mean);
  } else if (environment == "home") {
    // Bursty: heavy-tailed gaps, short within bursts.
    if (peak) {
      // About 20 back-to-back frames per burst, bursts a few hundred ms apart.
      const double gap = jammer == 0 ? 1.0 : 1.25;
      s.dist = IatDistribution::empirical({800.0, 1000.0, 1200.0, 150000.0 * gap, 250000.0 * gap, 350000.0 * gap},
                                          {0.95 / 3, 0.95 / 3, 0.95 / 3, 0.05 / 3, 0.05 / 3, 0.05 / 3});
    } else {
      s.dist = IatDistribution::pareto(1.3, jammer == 0 ? 9000.0 : 12000.0);
    }
  } else {
    throw Error("unknown environment '" + environment + "' (expected office or home)");
  }
  return s;
}

}  // namespace

std::vector<JammerSpec> scenario_jammers(const std::string& scenario, const std::string& environment,
                                         Regime regime) {
  std::vector<JammerSpec> out(2);
  if (scenario == "5-node") {
    out[0].x_m = 45.0;
    out[0].y_m = 20.0;
    out[1].x_m = 15.0;
    out[1].y_m = 15.0;
  } else if (scenario == "16-node") {
    out[0].x_m = 10.0;
    out[0].y_m = 50.0;
    out[1].x_m = 50.0;
    out[1].y_m = 10.0;
  } else {
    throw Error("unknown scenario '" + scenario + "' (expected 5-node or 16-node)");
  }
  for (int i = 0; i < 2; ++i) {
    out[i].interference_range_m = 30.0;
    out[i].peak = environment_source(environment, Regime::kPeak, i);
    out[i].offpeak = environment_source(environment, Regime::kOffPeak, i);
    out[i].schedule = {{0, regime}};
  }
  return out;
}

SimConfig make_scenario(const std::string& scenario, const std::string& environment, Regime regime,
                        Protocol protocol, Micros t_data_us, std::uint64_t seed) {
  SimConfig c;
  c.scenario = scenario;
  c.environment = environment;
  c.interference_type = regime == Regime::kPeak ? "peak" : "offpeak";
  if (scenario == "5-node") {
    c.topology = five_node_topology();
    c.n_slot = 2;
  } else if (scenario == "16-node") {
    c.topology = sixteen_node_topology();
    c.n_slot = 3;
  } else {
    throw Error("unknown scenario '" + scenario + "' (expected 5-node or 16-node)");
  }
  c.jammers = scenario_jammers(scenario, environment, regime);
  c.protocol = protocol;
  c.t_data_us = t_data_us;
  c.seed = seed;
  c.initial_model = regime;
  return c;
}

SimConfig make_regime_switch_scenario(std::uint64_t seed, Micros switch_at_us) {
  SimConfig c;
  c.scenario = "5-node-switch";
  c.environment = "scripted";
  c.interference_type = "offpeak-to-peak";
  c.topology = five_node_topology();
  c.protocol = Protocol::kLucid;
  c.t_data_us = 10ULL * 1000000ULL;
  c.duration_us = 30ULL * 60ULL * 1000000ULL;
  c.seed = seed;
  c.initial_model = Regime::kOffPeak;
  c.stop_after_trigger_periods = 4;
  JammerSpec j;
  // 21 m from the coordinator, 38 m from its children.
  j.x_m = -15.0;
  j.y_m = -15.0;
  j.interference_range_m = 22.0;
  j.offpeak.dist = IatDistribution::exponential_mean(5e6);
  j.peak.dist = IatDistribution::exponential_mean(1500.0);
  j.schedule = {{0, Regime::kOffPeak}, {switch_at_us, Regime::kPeak}};
  c.jammers = {j};
  return c;
}

// ---- model provisioning --------------------------------------------------

HmmParams saturated_channel_model(Micros slot_len_us) {
  HmmParams h = quiet_channel_model(slot_len_us);
  h.pi = {0.0, 1.0};
  h.refresh_digest();
  return h;
}

namespace {

std::vector<Micros> merged_arrivals(std::span<const JammerSpec> audible, Regime r, Micros duration,
                                    std::uint64_t seed) {
  std::vector<Micros> all;
  for (std::size_t i = 0; i < audible.size(); ++i) {
    const auto& src = audible[i].source(r);
    if (src.dist) {
      const auto t = synthesize_trace(*src.dist, duration, derive_seed(seed, {i, static_cast<std::uint64_t>(r)}));
      all.insert(all.end(), t.arrivals.begin(), t.arrivals.end());
    } else {
      for (Micros a : src.replay) {
        if (a <= duration) all.push_back(a);
      }
    }
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

RegimeModels train_regime(std::span<const JammerSpec> audible, Regime r, Micros slot_len_us,
                          Micros duration, int components, std::uint64_t seed) {
  ArrivalTrace t;
  t.arrivals = merged_arrivals(audible, r, duration, seed);
  t.duration_us = duration;
  Thresholds th = mac_thresholds();
  th.slot_len_us = slot_len_us;
  const auto features = extract_slot_features(t, slot_len_us);
  const auto labels = label_channel_states(features, th);
  RegimeModels m;
  const int comps = std::max(1, std::min(components, static_cast<int>(features.size() / 2)));
  m.gmm = gmm_fit(features, comps, seed);
  const auto busy = std::count(labels.begin(), labels.end(), ChannelState::kBusy);
  if (busy == 0) {
    m.hmm = quiet_channel_model(slot_len_us);
  } else if (static_cast<std::size_t>(busy) == labels.size()) {
    m.hmm = saturated_channel_model(slot_len_us);
  } else {
    m.hmm = hmm_fit(features, labels, 1e-6, 60, seed, std::min(2, comps));
  }
  return m;
}

}  // namespace

ModelPair train_node_models(std::span<const JammerSpec> audible, Micros slot_len_us,
                            Micros training_duration_us, int components, std::uint64_t seed) {
  // Training is the slow part of a run and depends only on its inputs, so
  // identical requests (same jammer set, several seeds) share the result.
  static std::mutex mu;
  static std::map<std::string, ModelPair> cache;
  json key = json::array();
  for (const auto& j : audible) key.push_back({source_to_json(j.peak), source_to_json(j.offpeak)});
  key.push_back({slot_len_us, training_duration_us, components, seed});
  const auto k = key.dump();
  {
    std::lock_guard<std::mutex> lock(mu);
    if (auto it = cache.find(k); it != cache.end()) return it->second;
  }
  ModelPair mp;
  mp.slot_len_us = slot_len_us;
  mp.peak = train_regime(audible, Regime::kPeak, slot_len_us, training_duration_us, components, seed);
  mp.offpeak = train_regime(audible, Regime::kOffPeak, slot_len_us, training_duration_us, components, seed);
  std::lock_guard<std::mutex> lock(mu);
  cache.emplace(k, mp);
  return mp;
}

}  // namespace lucid
