#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "lucid/models.hpp"
#include "lucid/trace.hpp"

namespace lucid {

using NodeId = std::uint32_t;

// ---- time synchronisation -------------------------------------------------

inline constexpr std::uint8_t kCoordinatorLevel = 0;
inline constexpr std::uint8_t kUnsyncedLevel = 255;
inline constexpr Micros kSyncPeriodUs = 300ULL * 1000000ULL;
inline constexpr int kSyncPacketsPerRound = 3;

struct SyncPacket {
  Micros timestamp_us = 0;  // sender's local clock at transmission
  std::uint8_t authoritative_level = kUnsyncedLevel;
  std::int64_t offset_with_coordinator_us = 0;

  bool operator==(const SyncPacket&) const = default;
};

// ---- model selection -------------------------------------------------------

inline constexpr int kMaxModelSelectTx = 5;

struct ModelSelectPacket {
  std::uint32_t age = 0;
  Regime target_model = Regime::kOffPeak;
  // Distinguishes successive floods; a node acts once per flood.
  std::uint32_t flood_seq = 0;

  bool operator==(const ModelSelectPacket&) const = default;
};

// ---- node state ------------------------------------------------------------

enum class RadioState : std::uint8_t { kActive, kSleep };

struct DataPacket {
  std::uint64_t id = 0;
  NodeId origin = 0;
  std::int64_t period_index = 0;
  Micros generated_us = 0;
  std::uint32_t attempts = 0;  // transmissions on the current hop
};

struct NodeState {
  NodeId node_id = 0;
  // Estimated offset of the local clock against the coordinator (local - coordinator).
  std::int64_t clock_offset_us = 0;
  std::uint8_t authoritative_level = kUnsyncedLevel;
  ModelPair own_models;
  std::map<NodeId, ModelPair> neighbor_models;
  std::optional<NodeId> next_hop;
  RadioState radio = RadioState::kSleep;
  std::vector<DataPacket> pending_queue;

  // model-selection flood bookkeeping
  std::uint32_t ms_flood_seq = 0;
  std::optional<std::uint32_t> ms_stored_age;
  bool ms_acked = false;

  /// Switch the active member of every held model pair.
  void set_active_model(Regime r);
};

NodeState make_coordinator(NodeId id, ModelPair models);
NodeState make_node(NodeId id, NodeId next_hop, ModelPair models);

struct SyncOutcome {
  bool accepted = false;
  std::optional<SyncPacket> rebroadcast;
};

/// Offset update with zero processing delay: dt_c = (rx - pkt.timestamp) + pkt.offset.
/// Accepted only from a strictly lower authoritative level.
SyncOutcome apply_sync(NodeState& local, const SyncPacket& pkt, Micros rx_timestamp_us);

/// Emission times of one sync flood round; the next round starts
/// kSyncPeriodUs after t0.
std::array<Micros, kSyncPacketsPerRound> sync_flood_schedule(Micros t0_us, Micros gap_us);

// ---- model exchange and rendezvous ---------------------------------------

inline constexpr Micros kModelWindowUs = 300000;

/// Start of node n's model broadcast window: t_start + (n mod n_window) * t_window.
Micros model_broadcast_time(NodeId n, Micros t_start_us, std::uint32_t n_window,
                            Micros t_window_us = kModelWindowUs);

/// Number of sub-slots in a slot: floor(slot_len / 8512 us). Error when 0.
std::uint32_t subslot_count(Micros slot_len_us, Micros t_ss_us = kWhiteSpaceUs);

/// Node n's transmission instant inside a slot: slot start + (n mod n_ss) * t_ss.
Micros subslot_tx_time(NodeId n, Micros slot_start_us, std::uint32_t n_ss,
                       Micros t_ss_us = kWhiteSpaceUs);

enum class ScheduleRole : std::uint8_t { kRxActive, kTx };

struct ScheduleEntry {
  std::uint32_t slot_index = 0;  // within the data period
  ScheduleRole role = ScheduleRole::kRxActive;
  std::uint32_t sub_slot = 0;    // TX only
  Micros start_us = 0;           // absolute (coordinator time)

  bool operator==(const ScheduleEntry&) const = default;
};

/// Start of a data period. A period spans horizon_slots slots.
Micros period_start_us(std::int64_t period_index, std::uint32_t horizon_slots, Micros slot_len_us);

/// Receiver side: the first n_slot FREE slots predicted by the model, or the
/// first n_slot slots when nothing is predicted FREE.
std::vector<ScheduleEntry> plan_rx_schedule(const HmmParams& model, std::int64_t period_index,
                                            std::uint32_t horizon_slots, std::uint32_t n_slot,
                                            Micros slot_len_us);
std::vector<ScheduleEntry> plan_rx_schedule(const ModelPair& own_models, std::int64_t period_index,
                                            std::uint32_t horizon_slots, std::uint32_t n_slot,
                                            Micros slot_len_us);

/// Sender side: mirrors the receiver's RX plan computed from the receiver's
/// model, transmitting at the sender's sub-slot in each slot.
std::vector<ScheduleEntry> plan_tx_schedule(const ModelPair& next_hop_models, NodeId own_id,
                                            std::int64_t period_index, std::uint32_t horizon_slots,
                                            std::uint32_t n_slot, std::uint32_t n_ss,
                                            Micros slot_len_us);
/// Looks the next hop up in the node's neighbour table; error when absent.
std::vector<ScheduleEntry> plan_tx_schedule(const NodeState& node, std::int64_t period_index,
                                            std::uint32_t horizon_slots, std::uint32_t n_slot,
                                            std::uint32_t n_ss, Micros slot_len_us);

// ---- feedback ------------------------------------------------------------

/// 100 * n_rx / n_total. Error when n_total is 0 or n_rx exceeds it.
double compute_pdr(std::uint64_t n_rx, std::uint64_t n_total);

struct FeedbackState {
  double ema = 0.0;
  int n_window = 40;
  double alpha = 2.0 / 41.0;
  double th_pdr = 93.0;
  int timeout_periods = 5;
  int periods_below = 0;
  std::vector<double> warmup;

  bool warm() const { return static_cast<int>(warmup.size()) >= n_window; }
};

FeedbackState make_feedback_state(int n_window = 40, double th_pdr = 93.0, int timeout_periods = 5);

/// EMA with alpha = 2 / (n_window + 1). The first n_window samples are buffered; the EMA starts as their mean.
FeedbackState update_ema(FeedbackState fb, double pdr);

/// True when a model switch should be triggered. Never fires during warm-up.
bool feedback_decide(FeedbackState& fb);

struct ModelSelectOutcome {
  bool switched = false;
  bool ack = false;
  std::optional<ModelSelectPacket> rebroadcast;
};

/// First reception of a flood switches the model and rebroadcasts with
/// age + 1. A later packet of the same flood whose age is one higher than the
/// stored age acknowledges the rebroadcast. Anything else is a duplicate.
ModelSelectOutcome handle_model_select(NodeState& local, const ModelSelectPacket& pkt);

/// Coordinator side: switches its own model and returns the retransmission
/// budget of age-0 packets for the flood.
std::vector<ModelSelectPacket> flood_model_select(NodeState& coordinator, Regime target);

}  // namespace lucid
