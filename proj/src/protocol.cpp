#include "lucid/protocol.hpp"

#include <string>

#include "lucid/error.hpp"

namespace lucid {

void NodeState::set_active_model(Regime r) {
  own_models.active = r;
  for (auto& [id, pair] : neighbor_models) pair.active = r;
}

NodeState make_coordinator(NodeId id, ModelPair models) {
  NodeState s;
  s.node_id = id;
  s.authoritative_level = kCoordinatorLevel;
  s.own_models = std::move(models);
  return s;
}

NodeState make_node(NodeId id, NodeId next_hop, ModelPair models) {
  NodeState s;
  s.node_id = id;
  s.next_hop = next_hop;
  s.own_models = std::move(models);
  return s;
}

SyncOutcome apply_sync(NodeState& local, const SyncPacket& pkt, Micros rx_timestamp_us) {
  if (pkt.authoritative_level >= local.authoritative_level) return {};
  const std::int64_t dt_n =
      static_cast<std::int64_t>(rx_timestamp_us) - static_cast<std::int64_t>(pkt.timestamp_us);
  const std::int64_t dt_c = dt_n + pkt.offset_with_coordinator_us;
  local.clock_offset_us = dt_c;
  local.authoritative_level = static_cast<std::uint8_t>(pkt.authoritative_level + 1);
  SyncOutcome out;
  out.accepted = true;
  out.rebroadcast = SyncPacket{rx_timestamp_us, local.authoritative_level, dt_c};
  return out;
}

std::array<Micros, kSyncPacketsPerRound> sync_flood_schedule(Micros t0_us, Micros gap_us) {
  if (gap_us == 0) throw Error("sync flood gap must be > 0");
  return {t0_us, t0_us + gap_us, t0_us + 2 * gap_us};
}

Micros model_broadcast_time(NodeId n, Micros t_start_us, std::uint32_t n_window,
                            Micros t_window_us) {
  if (n_window < 1) throw Error("model exchange needs n_window >= 1");
  return t_start_us + static_cast<Micros>(n % n_window) * t_window_us;
}

std::uint32_t subslot_count(Micros slot_len_us, Micros t_ss_us) {
  const auto n = slot_len_us / t_ss_us;
  if (n < 1) {
    throw Error("slot of " + std::to_string(slot_len_us) + " us holds no " +
                std::to_string(t_ss_us) + " us sub-slot");
  }
  return static_cast<std::uint32_t>(n);
}

Micros subslot_tx_time(NodeId n, Micros slot_start_us, std::uint32_t n_ss, Micros t_ss_us) {
  if (n_ss < 1) throw Error("n_ss must be >= 1");
  return slot_start_us + static_cast<Micros>(n % n_ss) * t_ss_us;
}

Micros period_start_us(std::int64_t period_index, std::uint32_t horizon_slots, Micros slot_len_us) {
  if (period_index < 0) throw Error("period index must be >= 0");
  return static_cast<Micros>(period_index) * horizon_slots * slot_len_us;
}

std::vector<ScheduleEntry> plan_rx_schedule(const HmmParams& model, std::int64_t period_index,
                                            std::uint32_t horizon_slots, std::uint32_t n_slot,
                                            Micros slot_len_us) {
  if (n_slot < 1) throw Error("n_slot must be >= 1");
  const auto pred = predict_white_spaces(model, period_index, horizon_slots);
  const Micros base = period_start_us(period_index, horizon_slots, slot_len_us);
  std::vector<ScheduleEntry> out;
  auto push = [&](std::uint32_t slot) {
    out.push_back({slot, ScheduleRole::kRxActive, 0, base + static_cast<Micros>(slot) * slot_len_us});
  };
  if (pred.free_slots.empty()) {
    for (std::uint32_t s = 0; s < n_slot && s < horizon_slots; ++s) push(s);
  } else {
    for (std::size_t i = 0; i < pred.free_slots.size() && i < n_slot; ++i) push(pred.free_slots[i]);
  }
  return out;
}

std::vector<ScheduleEntry> plan_rx_schedule(const ModelPair& own_models, std::int64_t period_index,
                                            std::uint32_t horizon_slots, std::uint32_t n_slot,
                                            Micros slot_len_us) {
  return plan_rx_schedule(own_models.active_models().hmm, period_index, horizon_slots, n_slot,
                          slot_len_us);
}

std::vector<ScheduleEntry> plan_tx_schedule(const ModelPair& next_hop_models, NodeId own_id,
                                            std::int64_t period_index, std::uint32_t horizon_slots,
                                            std::uint32_t n_slot, std::uint32_t n_ss,
                                            Micros slot_len_us) {
  auto entries = plan_rx_schedule(next_hop_models, period_index, horizon_slots, n_slot, slot_len_us);
  for (auto& e : entries) {
    e.role = ScheduleRole::kTx;
    e.sub_slot = own_id % n_ss;
    e.start_us = subslot_tx_time(own_id, e.start_us, n_ss);
  }
  return entries;
}

std::vector<ScheduleEntry> plan_tx_schedule(const NodeState& node, std::int64_t period_index,
                                            std::uint32_t horizon_slots, std::uint32_t n_slot,
                                            std::uint32_t n_ss, Micros slot_len_us) {
  if (!node.next_hop) throw Error("node " + std::to_string(node.node_id) + " has no next hop");
  const auto it = node.neighbor_models.find(*node.next_hop);
  if (it == node.neighbor_models.end()) {
    throw Error("node " + std::to_string(node.node_id) + " holds no model for next hop " +
                std::to_string(*node.next_hop));
  }
  return plan_tx_schedule(it->second, node.node_id, period_index, horizon_slots, n_slot, n_ss,
                          slot_len_us);
}

double compute_pdr(std::uint64_t n_rx, std::uint64_t n_total) {
  if (n_total == 0) throw Error("PDR undefined for zero expected packets");
  if (n_rx > n_total) throw Error("received packets exceed expected packets");
  return 100.0 * static_cast<double>(n_rx) / static_cast<double>(n_total);
}

FeedbackState make_feedback_state(int n_window, double th_pdr, int timeout_periods) {
  if (n_window < 1) throw Error("EMA window must be >= 1");
  if (timeout_periods < 1) throw Error("model selection timeout must be >= 1");
  FeedbackState fb;
  fb.n_window = n_window;
  fb.alpha = 2.0 / (static_cast<double>(n_window) + 1.0);
  fb.th_pdr = th_pdr;
  fb.timeout_periods = timeout_periods;
  return fb;
}

FeedbackState update_ema(FeedbackState fb, double pdr) {
  if (!(pdr >= 0.0 && pdr <= 100.0)) throw Error("PDR sample outside [0, 100]");
  if (!fb.warm()) {
    fb.warmup.push_back(pdr);
    if (fb.warm()) {
      double sum = 0.0;
      for (double v : fb.warmup) sum += v;
      fb.ema = sum / static_cast<double>(fb.warmup.size());
    }
    return fb;
  }
  fb.ema = fb.alpha * pdr + (1.0 - fb.alpha) * fb.ema;
  return fb;
}

bool feedback_decide(FeedbackState& fb) {
  if (!fb.warm()) return false;
  if (fb.ema < fb.th_pdr) {
    ++fb.periods_below;
  } else {
    fb.periods_below = 0;
  }
  if (fb.periods_below >= fb.timeout_periods) {
    fb.periods_below = 0;
    return true;
  }
  return false;
}

ModelSelectOutcome handle_model_select(NodeState& local, const ModelSelectPacket& pkt) {
  ModelSelectOutcome out;
  if (pkt.flood_seq > local.ms_flood_seq) {
    local.ms_flood_seq = pkt.flood_seq;
    // The stored age is the one this node transmits; its own children echo it + 1.
    local.ms_stored_age = pkt.age + 1;
    local.ms_acked = false;
    local.set_active_model(pkt.target_model);
    out.switched = true;
    out.rebroadcast = ModelSelectPacket{pkt.age + 1, pkt.target_model, pkt.flood_seq};
    return out;
  }
  if (pkt.flood_seq == local.ms_flood_seq && local.ms_stored_age &&
      pkt.age == *local.ms_stored_age + 1) {
    local.ms_acked = true;
    out.ack = true;
  }
  return out;
}

std::vector<ModelSelectPacket> flood_model_select(NodeState& coordinator, Regime target) {
  ++coordinator.ms_flood_seq;
  coordinator.ms_stored_age = 0;
  coordinator.ms_acked = false;
  coordinator.set_active_model(target);
  return std::vector<ModelSelectPacket>(kMaxModelSelectTx,
                                        ModelSelectPacket{0, target, coordinator.ms_flood_seq});
}

}  // namespace lucid
