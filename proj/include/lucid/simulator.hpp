#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lucid/models.hpp"
#include "lucid/protocol.hpp"
#include "lucid/trace.hpp"

namespace lucid {

// ---- configuration -------------------------------------------------------

struct NodeSpec {
  NodeId id = 0;
  double x_m = 0.0;
  double y_m = 0.0;
  std::optional<NodeId> parent;  // empty for the coordinator
};

struct Topology {
  std::vector<NodeSpec> nodes;
  NodeId coordinator_id = 0;
  double comm_range_m = 25.0;

  /// Routes must form a tree rooted at the coordinator with every parent
  /// inside communication range. Throws lucid::Error otherwise.
  void validate() const;
  const NodeSpec& node(NodeId id) const;
  double distance(NodeId a, NodeId b) const;
};

/// One jammer regime: either a distribution to draw inter-arrival times from
/// or a fixed list of arrivals replayed as-is (relative to the phase start).
struct JammerSource {
  std::optional<IatDistribution> dist;
  std::vector<Micros> replay;
};

struct JammerPhase {
  Micros start_us = 0;
  Regime regime = Regime::kOffPeak;
};

struct JammerSpec {
  double x_m = 0.0;
  double y_m = 0.0;
  double interference_range_m = 30.0;
  Micros burst_us = 2000;
  JammerSource peak;
  JammerSource offpeak;
  std::vector<JammerPhase> schedule{{0, Regime::kOffPeak}};

  const JammerSource& source(Regime r) const { return r == Regime::kPeak ? peak : offpeak; }
};

enum class Protocol : std::uint8_t { kLucid, kLpl };

const char* to_string(Protocol p);
Protocol parse_protocol(std::string_view s);

struct LplParams {
  int max_tx = 3;
  Micros wake_interval_us = 125000;
  Micros wake_cca_us = 1000;     // radio on per periodic channel check
  Micros listen_us = 10000;      // stay-awake time after detecting energy
  Micros tx_cca_us = 500;
  Micros strobe_gap_us = 500;    // ACK wait between strobes
};

struct SimConfig {
  std::string scenario = "custom";
  std::string environment = "none";
  std::string interference_type = "none";
  Topology topology;
  Protocol protocol = Protocol::kLucid;
  LplParams lpl;
  Micros t_data_us = 60ULL * 1000000ULL;
  Micros slot_len_us = 50000;
  std::uint32_t n_slot = 2;
  Micros duration_us = 2ULL * 3600ULL * 1000000ULL;
  std::vector<JammerSpec> jammers;
  std::uint64_t seed = 1;

  // LUCID
  int lucid_max_tx = 3;             // transmissions per packet per hop
  Micros frame_exchange_us = 2304;  // data frame + turnaround + ACK
  Micros bootstrap_min_us = 3000000;
  Micros clock_offset_max_us = 20000;
  std::optional<Regime> initial_model;  // defaults to the jammers' first regime
  int ema_window = 40;
  double th_pdr = 93.0;
  int ms_timeout_periods = 5;
  /// When set, generation stops this many periods after the first
  /// model-selection trigger (scripted feedback runs).
  std::optional<int> stop_after_trigger_periods;
  int drain_periods = 3;

  // Model provisioning: explicit files per node, otherwise trained from the
  // jammers each node can hear.
  std::map<NodeId, std::string> model_files;
  Micros training_duration_us = 600ULL * 1000000ULL;
  int training_components = 3;

  bool record_ledger = false;

  void validate() const;
};

nlohmann::json to_json(const SimConfig& c);
SimConfig sim_config_from_json(const nlohmann::json& j, const std::string& base_dir = ".");
SimConfig load_sim_config(const std::string& path);

// ---- channel model -------------------------------------------------------

/// Radio emission of a node: [start, end) in coordinator time.
struct Emission {
  Micros start = 0;
  Micros end = 0;
  NodeId src = 0;
};

/// Jammer emissions: every arrival starts a burst of fixed length.
struct JammerTimeline {
  double x_m = 0.0;
  double y_m = 0.0;
  double range_m = 0.0;
  Micros burst_us = 2000;
  std::vector<Micros> arrivals;

  bool overlaps(Micros start, Micros end) const;
  /// Total time covered by bursts inside [start, end).
  Micros busy_time(Micros start, Micros end) const;
};

/// Arrivals per schedule phase (drawn with synthesize_trace or replayed),
/// silent before `quiet_until_us`.
JammerTimeline generate_jammer_events(const JammerSpec& jammer, Micros duration_us,
                                      std::uint64_t seed, std::size_t jammer_index,
                                      Micros quiet_until_us = 0);

enum class RxOutcome : std::uint8_t { kDelivered, kLostCollision, kLostInterference, kNotListening };

const char* to_string(RxOutcome o);

/// Any overlap with another node's emission in range is a collision (no
/// capture); otherwise any overlap with a jammer burst in range is
/// interference.
RxOutcome resolve_reception(const Emission& tx, bool receiver_listening,
                            std::span<const Emission> other_emissions_in_range,
                            std::span<const JammerTimeline* const> jammers_in_range);

/// Network duty cycle: 100 * sum of per-node on-time / (N * duration), with
/// each node's intervals merged first. Intervals must lie within [0, duration].
double account_duty_cycle(const std::vector<std::vector<std::pair<Micros, Micros>>>& on_intervals,
                          Micros duration_us, std::size_t n_nodes);

// ---- results -------------------------------------------------------------

struct LedgerCounts {
  std::uint64_t generated = 0;
  std::uint64_t delivered = 0;
  std::uint64_t lost_collision = 0;
  std::uint64_t lost_interference = 0;
  std::uint64_t lost_no_rendezvous = 0;

  std::uint64_t lost() const { return lost_collision + lost_interference + lost_no_rendezvous; }
};

struct TriggerRecord {
  std::int64_t period_index = 0;
  Micros time_us = 0;
  Regime target = Regime::kPeak;
  std::uint32_t flood_seq = 0;
};

struct LedgerEvent {
  Micros time_us = 0;
  NodeId src = 0;
  NodeId dst = 0;
  std::string outcome;
};

struct SimResult {
  std::string scenario;
  std::string environment;
  std::string interference_type;
  Protocol protocol = Protocol::kLucid;
  int lpl_max_tx = 0;  // 0 for LUCID
  Micros t_data_us = 0;
  std::uint32_t n_slot = 0;
  std::uint64_t seed = 0;
  Micros duration_us = 0;
  Micros bootstrap_end_us = 0;
  std::int64_t first_period = 0;

  std::vector<double> period_pdr;
  std::vector<std::optional<double>> ema;
  std::vector<TriggerRecord> triggers;

  std::vector<std::pair<NodeId, Micros>> radio_on_us;
  double duty_cycle_pct = 0.0;
  double pdr_pct = 0.0;
  LedgerCounts ledger;

  std::vector<std::pair<NodeId, Regime>> final_active_model;
  std::uint64_t data_frames = 0;
  std::uint64_t control_frames = 0;
  std::uint64_t events_processed = 0;
  std::vector<std::string> errors;

  std::vector<LedgerEvent> ledger_events;  // only with record_ledger
};

nlohmann::json to_json(const SimResult& r);
/// Protocol name as reported: "LUCID" or "LPL(max_tx=k)".
std::string protocol_label(const SimResult& r);
void write_ledger_csv(const SimResult& r, std::ostream& out);

/// Deterministic in the config (seed included). Throws lucid::Error on an
/// invalid configuration before any event runs.
SimResult run_simulation(const SimConfig& config);

// ---- scenarios -----------------------------------------------------------

/// Line of three forwarders plus a leaf next to the coordinator.
Topology five_node_topology();
/// 4 x 4 grid, 20 m pitch, coordinator at an inner position.
Topology sixteen_node_topology();

/// Jammer pair for an environment ("office" or "home") in one regime.
std::vector<JammerSpec> scenario_jammers(const std::string& scenario, const std::string& environment,
                                         Regime regime);

SimConfig make_scenario(const std::string& scenario, const std::string& environment, Regime regime,
                        Protocol protocol, Micros t_data_us, std::uint64_t seed);

/// 5-node LUCID run with a jammer heard only by the coordinator: quiet until
/// `switch_at_us`, saturating afterwards. Generation stops a few periods
/// after the first model-selection trigger.
SimConfig make_regime_switch_scenario(std::uint64_t seed, Micros switch_at_us = 600ULL * 1000000ULL);

/// Trains the peak/off-peak pair a node would build from what it hears.
/// A regime whose training trace has a single channel state gets the
/// matching absorbing model.
ModelPair train_node_models(std::span<const JammerSpec> audible, Micros slot_len_us,
                            Micros training_duration_us, int components, std::uint64_t seed);

/// Model for a channel that is always BUSY.
HmmParams saturated_channel_model(Micros slot_len_us);

}  // namespace lucid
