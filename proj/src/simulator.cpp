#include "lucid/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <ostream>
#include <queue>
#include <stdexcept>

#include "lucid/error.hpp"
#include "lucid/rng.hpp"

namespace lucid {

using nlohmann::json;

// ---- channel model -------------------------------------------------------

bool JammerTimeline::overlaps(Micros start, Micros end) const {
  if (end <= start) return false;
  // A burst [x, x + burst) overlaps iff start - burst < x < end.
  const Micros lo = start >= burst_us ? start - burst_us + 1 : 0;
  auto it = std::lower_bound(arrivals.begin(), arrivals.end(), lo);
  return it != arrivals.end() && *it < end;
}

Micros JammerTimeline::busy_time(Micros start, Micros end) const {
  if (end <= start) return 0;
  const Micros lo = start >= burst_us ? start - burst_us + 1 : 0;
  Micros busy = 0;
  Micros covered = start;
  for (auto it = std::lower_bound(arrivals.begin(), arrivals.end(), lo); it != arrivals.end() && *it < end; ++it) {
    const Micros a = std::max(*it, covered);
    const Micros b = std::min(*it + burst_us, end);
    if (b > a) {
      busy += b - a;
      covered = b;
    }
  }
  return busy;
}

JammerTimeline generate_jammer_events(const JammerSpec& jammer, Micros duration_us, std::uint64_t seed,
                                      std::size_t jammer_index, Micros quiet_until_us) {
  JammerTimeline t;
  t.x_m = jammer.x_m;
  t.y_m = jammer.y_m;
  t.range_m = jammer.interference_range_m;
  t.burst_us = jammer.burst_us;
  for (std::size_t k = 0; k < jammer.schedule.size(); ++k) {
    const Micros begin = jammer.schedule[k].start_us;
    if (begin >= duration_us) break;
    const Micros end = k + 1 < jammer.schedule.size() ? std::min(jammer.schedule[k + 1].start_us, duration_us)
                                                      : duration_us;
    const auto& src = jammer.source(jammer.schedule[k].regime);
    std::vector<Micros> local;
    if (src.dist) {
      local = synthesize_trace(*src.dist, end - begin, derive_seed(seed, {0x6a616dULL, jammer_index, k})).arrivals;
    } else {
      local = src.replay;
    }
    for (Micros a : local) {
      const Micros at = begin + a;
      if (at >= end) break;
      if (at >= quiet_until_us) t.arrivals.push_back(at);
    }
  }
  return t;
}

const char* to_string(RxOutcome o) {
  switch (o) {
    case RxOutcome::kDelivered: return "delivered";
    case RxOutcome::kLostCollision: return "lost_collision";
    case RxOutcome::kLostInterference: return "lost_interference";
    case RxOutcome::kNotListening: return "not_listening";
  }
  return "?";
}

RxOutcome resolve_reception(const Emission& tx, bool receiver_listening,
                            std::span<const Emission> other_emissions_in_range,
                            std::span<const JammerTimeline* const> jammers_in_range) {
  if (!receiver_listening) return RxOutcome::kNotListening;
  for (const auto& e : other_emissions_in_range) {
    if (e.src == tx.src && e.start == tx.start) continue;
    if (e.start < tx.end && e.end > tx.start) return RxOutcome::kLostCollision;
  }
  for (const auto* j : jammers_in_range) {
    if (j->overlaps(tx.start, tx.end)) return RxOutcome::kLostInterference;
  }
  return RxOutcome::kDelivered;
}

double account_duty_cycle(const std::vector<std::vector<std::pair<Micros, Micros>>>& on_intervals,
                          Micros duration_us, std::size_t n_nodes) {
  if (duration_us == 0 || n_nodes == 0) throw Error("duty cycle needs a positive duration and node count");
  if (on_intervals.size() > n_nodes) throw Error("more interval lists than nodes");
  double total = 0.0;
  for (auto iv : on_intervals) {
    for (const auto& [a, b] : iv) {
      if (b < a || b > duration_us) throw Error("radio-on interval outside [0, duration]");
    }
    std::sort(iv.begin(), iv.end());
    Micros cur_a = 0, cur_b = 0;
    bool open = false;
    for (const auto& [a, b] : iv) {
      if (open && a <= cur_b) {
        cur_b = std::max(cur_b, b);
        continue;
      }
      if (open) total += static_cast<double>(cur_b - cur_a);
      cur_a = a;
      cur_b = b;
      open = true;
    }
    if (open) total += static_cast<double>(cur_b - cur_a);
  }
  return 100.0 * total / (static_cast<double>(n_nodes) * static_cast<double>(duration_us));
}

// ---- engine --------------------------------------------------------------

namespace {

constexpr Micros kAckUs = 544;          // turnaround + ACK frame
constexpr Micros kCtrlAirUs = 1000;     // sync frame
constexpr Micros kModelAirUs = 50000;   // one logical model broadcast
constexpr Micros kModelExchangeStartUs = 1000000;
constexpr Micros kSyncGapUs = 100000;
constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

enum class Ev : std::uint8_t {
  kBcastSync,
  kBcastModel,
  kBcastEnd,
  kPeriodStart,
  kTxOpp,
  kFrameEnd,
  kPdrEval,
  kSyncRound,
  kLplGenerate,
  kLplWake,
  kLplWakeEnd,
  kLplCcaEnd,
  kLplStrobe,
  kLplStrobeEnd,
  kLplRetry,
};

struct Event {
  Micros t = 0;
  NodeId node = 0;
  std::uint64_t seq = 0;
  Ev kind = Ev::kPeriodStart;
  std::size_t idx = 0;
  std::uint64_t a = 0;
  std::uint64_t b = 0;
};

struct Later {
  bool operator()(const Event& x, const Event& y) const {
    return std::tie(x.t, x.node, x.seq) > std::tie(y.t, y.node, y.seq);
  }
};

struct Pkt {
  NodeId origin = 0;
  std::int64_t period = 0;
  Micros generated = 0;
  int hop_attempts = 0;
  RxOutcome last_fail = RxOutcome::kNotListening;
  bool in_flight = false;
  bool done = false;
};

struct Ctrl {
  bool is_sync = false;
  SyncPacket sync;
  ModelSelectPacket ms;
  int tx_left = 1;
  bool needs_ack = false;
};

struct Frame {
  std::size_t src = 0;
  std::size_t dst = 0;
  Micros start = 0;
  Micros end = 0;
  bool data = false;
  std::uint64_t pkt = 0;
  Ctrl ctrl;
};

enum class LplMode : std::uint8_t { kIdle, kCca, kStrobing, kBackoff };

struct SimNode {
  NodeSpec spec;
  NodeState st;
  std::int64_t true_offset = 0;
  std::vector<std::size_t> nbrs;
  std::vector<std::size_t> children;
  std::size_t parent = kNone;
  std::vector<const JammerTimeline*> jam;

  std::vector<std::pair<Micros, Micros>> on;
  std::vector<Emission> tx;  // own emissions, starts non-decreasing
  Micros longest_tx = 0;

  std::vector<std::pair<Micros, Micros>> rx_win;
  std::deque<std::uint64_t> queue;
  std::map<std::size_t, std::deque<Ctrl>> ctrl;
  std::map<std::size_t, std::int64_t> opps_for_period;
  bool plan_error = false;

  // LPL
  LplMode mode = LplMode::kIdle;
  Micros listen_from = 0;
  Micros listen_until = 0;
  std::size_t listen_on = kNone;
  Micros train_start = 0;
  Micros train_end = 0;
  RxOutcome train_cause = RxOutcome::kNotListening;
  int attempts = 0;
  Micros phase = 0;
};

class Engine {
 public:
  explicit Engine(const SimConfig& c) : c_(c), rng_(derive_seed(c.seed, {0x656e67ULL})) {}

  SimResult run();

 private:
  // -- plumbing
  void push(Micros t, std::size_t idx, Ev kind, std::uint64_t a = 0, std::uint64_t b = 0) {
    q_.push({t, nodes_[idx].spec.id, seq_++, kind, idx, a, b});
  }
  Micros shift(const SimNode& n, Micros coordinator_time) const {
    const std::int64_t residual = n.true_offset - n.st.clock_offset_us;
    const std::int64_t g = static_cast<std::int64_t>(coordinator_time) - residual;
    return g < 0 ? 0 : static_cast<Micros>(g);
  }
  void emit(SimNode& n, Micros start, Micros end) {
    n.tx.push_back({start, end, n.spec.id});
    n.longest_tx = std::max(n.longest_tx, end - start);
    n.on.emplace_back(start, end);
  }
  bool own_tx_overlaps(const SimNode& n, Micros a, Micros b, Micros skip_start = kNoSkip) const;
  std::vector<Emission> neighbour_emissions(const SimNode& r, std::size_t src, Micros a, Micros b) const;
  RxOutcome receive(std::size_t dst, std::size_t src, Micros a, Micros b, bool listening) const;

  std::int64_t period_of(Micros t) const { return static_cast<std::int64_t>(t / c_.t_data_us); }
  Micros period_start(std::int64_t p) const { return static_cast<Micros>(p) * c_.t_data_us; }
  Micros eval_time(std::int64_t p) const { return period_start(p + 1) + c_.slot_len_us; }

  void deliver(std::uint64_t pkt_id, Micros t);
  void drop(std::uint64_t pkt_id, RxOutcome cause);
  void log(Micros t, std::size_t src, std::size_t dst, const char* outcome);

  // -- setup
  void build_nodes();
  void provision_models();

  // -- LUCID
  void on_bcast_sync(const Event& e);
  void on_bcast_model(const Event& e);
  void on_bcast_end(const Event& e);
  void on_period_start(const Event& e);
  void schedule_opps(std::size_t n, std::size_t nb, std::int64_t p);
  void on_tx_opp(const Event& e);
  void on_frame_end(const Event& e);
  void on_pdr_eval(const Event& e);
  void on_sync_round(const Event& e);
  void queue_ctrl(std::size_t n, std::size_t nb, Ctrl c);

  // -- LPL
  void lpl_try_send(std::size_t n);
  void lpl_fail(std::size_t n, RxOutcome cause);
  void on_lpl_event(const Event& e);

  static constexpr Micros kNoSkip = std::numeric_limits<Micros>::max();

  const SimConfig& c_;
  Rng rng_;
  std::priority_queue<Event, std::vector<Event>, Later> q_;
  std::uint64_t seq_ = 0;
  Micros now_ = 0;

  std::vector<SimNode> nodes_;
  std::map<NodeId, std::size_t> index_;
  std::size_t coord_ = 0;
  std::vector<JammerTimeline> jammers_;
  std::vector<Pkt> pkts_;
  std::vector<Frame> frames_;
  std::vector<SyncPacket> bcast_sync_;
  std::vector<std::uint64_t> on_time_;  // per generation period, relative to p0

  std::uint32_t horizon_ = 0;
  std::uint32_t n_ss_ = 0;
  std::uint32_t frames_per_opp_ = 0;
  Micros data_air_ = 0;
  Micros bootstrap_end_ = 0;
  std::int64_t p0_ = 0;
  std::int64_t p_end_ = 0;  // first period without generation
  Micros sim_end_ = 0;

  FeedbackState fb_;
  bool stop_scheduled_ = false;
  SimResult res_;
};

bool Engine::own_tx_overlaps(const SimNode& n, Micros a, Micros b, Micros skip_start) const {
  const Micros lo = a > n.longest_tx ? a - n.longest_tx : 0;
  auto it = std::lower_bound(n.tx.begin(), n.tx.end(), lo, [](const Emission& e, Micros v) { return e.start < v; });
  for (; it != n.tx.end() && it->start < b; ++it) {
    if (it->start == skip_start) continue;
    if (it->end > a) return true;
  }
  return false;
}

std::vector<Emission> Engine::neighbour_emissions(const SimNode& r, std::size_t src, Micros a, Micros b) const {
  std::vector<Emission> out;
  for (std::size_t m : r.nbrs) {
    if (m == src) continue;
    const auto& n = nodes_[m];
    const Micros lo = a > n.longest_tx ? a - n.longest_tx : 0;
    auto it = std::lower_bound(n.tx.begin(), n.tx.end(), lo, [](const Emission& e, Micros v) { return e.start < v; });
    for (; it != n.tx.end() && it->start < b; ++it) {
      if (it->end > a) out.push_back(*it);
    }
  }
  return out;
}

RxOutcome Engine::receive(std::size_t dst, std::size_t src, Micros a, Micros b, bool listening) const {
  const auto& r = nodes_[dst];
  if (listening && own_tx_overlaps(r, a, b)) listening = false;  // half duplex
  const Emission tx{a, b, nodes_[src].spec.id};
  const auto others = neighbour_emissions(r, src, a, b);
  return resolve_reception(tx, listening, others, r.jam);
}

void Engine::log(Micros t, std::size_t src, std::size_t dst, const char* outcome) {
  if (!c_.record_ledger) return;
  res_.ledger_events.push_back({t, nodes_[src].spec.id, nodes_[dst].spec.id, outcome});
}

void Engine::deliver(std::uint64_t pkt_id, Micros t) {
  auto& p = pkts_[pkt_id];
  if (p.done) throw std::logic_error("packet delivered twice");
  p.done = true;
  ++res_.ledger.delivered;
  if (t <= eval_time(p.period)) ++on_time_[static_cast<std::size_t>(p.period - p0_)];
}

void Engine::drop(std::uint64_t pkt_id, RxOutcome cause) {
  auto& p = pkts_[pkt_id];
  if (p.done) throw std::logic_error("packet finalised twice");
  p.done = true;
  switch (cause) {
    case RxOutcome::kLostCollision: ++res_.ledger.lost_collision; break;
    case RxOutcome::kLostInterference: ++res_.ledger.lost_interference; break;
    default: ++res_.ledger.lost_no_rendezvous; break;
  }
}

void Engine::build_nodes() {
  const auto& topo = c_.topology;
  nodes_.resize(topo.nodes.size());
  for (std::size_t i = 0; i < topo.nodes.size(); ++i) {
    nodes_[i].spec = topo.nodes[i];
    index_[topo.nodes[i].id] = i;
  }
  coord_ = index_.at(topo.coordinator_id);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& n = nodes_[i];
    for (std::size_t j = 0; j < nodes_.size(); ++j) {
      if (i != j && topo.distance(n.spec.id, nodes_[j].spec.id) <= topo.comm_range_m) n.nbrs.push_back(j);
    }
    if (n.spec.parent) {
      n.parent = index_.at(*n.spec.parent);
      nodes_[n.parent].children.push_back(i);
    }
    for (const auto& j : jammers_) {
      if (std::hypot(n.spec.x_m - j.x_m, n.spec.y_m - j.y_m) <= j.range_m) n.jam.push_back(&j);
    }
    Rng r(derive_seed(c_.seed, {0x6e6f6465ULL, n.spec.id}));
    const auto span = static_cast<std::uint64_t>(2 * c_.clock_offset_max_us + 1);
    n.true_offset = i == coord_ ? 0 : static_cast<std::int64_t>(r.index(span)) -
                                          static_cast<std::int64_t>(c_.clock_offset_max_us);
    n.phase = r.index(c_.t_data_us);
  }
}

void Engine::provision_models() {
  const Regime initial = c_.initial_model ? *c_.initial_model
                         : c_.jammers.empty() ? Regime::kOffPeak
                                              : c_.jammers.front().schedule.front().regime;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& n = nodes_[i];
    ModelPair mp;
    if (auto it = c_.model_files.find(n.spec.id); it != c_.model_files.end()) {
      mp = load_model_pair(it->second);
      if (mp.slot_len_us != c_.slot_len_us) {
        throw Error("model file for node " + std::to_string(n.spec.id) + " uses a different slot length");
      }
    } else {
      std::vector<JammerSpec> audible;
      for (std::size_t k = 0; k < c_.jammers.size(); ++k) {
        const auto& j = c_.jammers[k];
        if (std::hypot(n.spec.x_m - j.x_m, n.spec.y_m - j.y_m) <= j.interference_range_m) audible.push_back(j);
      }
      mp = train_node_models(audible, c_.slot_len_us, c_.training_duration_us, c_.training_components, 0x747261696eULL);
    }
    mp.active = initial;
    n.st = i == coord_ ? make_coordinator(n.spec.id, mp) : make_node(n.spec.id, *n.spec.parent, mp);
  }
}

// ---- LUCID bootstrap -----------------------------------------------------

void Engine::on_bcast_sync(const Event& e) {
  auto& n = nodes_[e.idx];
  auto& pkt = bcast_sync_[e.a];
  pkt.timestamp_us = static_cast<Micros>(static_cast<std::int64_t>(now_) + n.true_offset);
  frames_.push_back({e.idx, e.idx, now_, now_ + kCtrlAirUs, false, 0, {}});
  frames_.back().ctrl.is_sync = true;
  frames_.back().ctrl.sync = pkt;
  emit(n, now_, now_ + kCtrlAirUs);
  ++res_.control_frames;
  push(now_ + kCtrlAirUs, e.idx, Ev::kBcastEnd, frames_.size() - 1);
}

void Engine::on_bcast_model(const Event& e) {
  auto& n = nodes_[e.idx];
  frames_.push_back({e.idx, e.idx, now_, now_ + kModelAirUs, false, 0, {}});
  emit(n, now_, now_ + kModelAirUs);
  ++res_.control_frames;
  push(now_ + kModelAirUs, e.idx, Ev::kBcastEnd, frames_.size() - 1);
}

void Engine::on_bcast_end(const Event& e) {
  const Frame f = frames_[e.a];
  const auto& src = nodes_[f.src];
  for (std::size_t m : src.nbrs) {
    const bool listening = f.end <= bootstrap_end_;
    if (receive(m, f.src, f.start, f.end, listening) != RxOutcome::kDelivered) continue;
    auto& r = nodes_[m];
    if (f.ctrl.is_sync) {
      const auto rx_local = static_cast<Micros>(static_cast<std::int64_t>(f.start) + r.true_offset);
      const auto out = apply_sync(r.st, f.ctrl.sync, rx_local);
      if (out.accepted && out.rebroadcast) {
        bcast_sync_.push_back(*out.rebroadcast);
        const Micros at = now_ + (1 + r.spec.id % n_ss_) * kWhiteSpaceUs;
        push(at, m, Ev::kBcastSync, bcast_sync_.size() - 1);
      }
    } else {
      ModelPair copy = src.st.own_models;
      copy.active = r.st.own_models.active;
      r.st.neighbor_models[src.spec.id] = copy;
    }
  }
}

// ---- LUCID data plane ----------------------------------------------------

void Engine::on_period_start(const Event& e) {
  const auto p = static_cast<std::int64_t>(e.a);
  auto& n = nodes_[e.idx];
  const Micros start = period_start(p);
  if (p < p_end_ && e.idx != coord_) {
    pkts_.push_back({n.spec.id, p, now_, 0, RxOutcome::kNotListening, false, false});
    n.queue.push_back(pkts_.size() - 1);
    ++res_.ledger.generated;
  }
  // Keep the previous period's windows for frames straddling the boundary.
  std::erase_if(n.rx_win, [&](const auto& w) { return w.second + c_.t_data_us < start; });
  for (const auto& entry : plan_rx_schedule(n.st.own_models, p, horizon_, c_.n_slot, c_.slot_len_us)) {
    const Micros a = shift(n, entry.start_us);
    n.rx_win.emplace_back(a, a + c_.slot_len_us);
    n.on.emplace_back(a, a + c_.slot_len_us);
  }
  if (n.parent != kNone) schedule_opps(e.idx, n.parent, p);
  for (std::size_t ch : n.children) {
    if (!n.ctrl[ch].empty()) schedule_opps(e.idx, ch, p);
  }
  if (e.idx == coord_ && p < p_end_) push(eval_time(p), e.idx, Ev::kPdrEval, static_cast<std::uint64_t>(p));
  if (period_start(p + 1) < sim_end_) push(shift(n, period_start(p + 1)), e.idx, Ev::kPeriodStart, p + 1);
}

void Engine::schedule_opps(std::size_t n_idx, std::size_t nb, std::int64_t p) {
  auto& n = nodes_[n_idx];
  auto [it, fresh] = n.opps_for_period.try_emplace(nb, p);
  if (!fresh) {
    if (it->second == p) return;
    it->second = p;
  }
  std::vector<ScheduleEntry> plan;
  try {
    if (nb == n.parent) {
      plan = plan_tx_schedule(n.st, p, horizon_, c_.n_slot, n_ss_, c_.slot_len_us);
    } else {
      const auto m = n.st.neighbor_models.find(nodes_[nb].spec.id);
      if (m == n.st.neighbor_models.end()) {
        throw Error("node " + std::to_string(n.spec.id) + " has no model for neighbour " +
                    std::to_string(nodes_[nb].spec.id));
      }
      plan = plan_tx_schedule(m->second, n.spec.id, p, horizon_, c_.n_slot, n_ss_, c_.slot_len_us);
    }
  } catch (const Error& err) {
    if (!n.plan_error) res_.errors.emplace_back(err.what());
    n.plan_error = true;
    return;
  }
  for (const auto& entry : plan) {
    const Micros t = shift(n, entry.start_us);
    if (t >= now_) push(t, n_idx, Ev::kTxOpp, nb);
  }
}

void Engine::queue_ctrl(std::size_t n, std::size_t nb, Ctrl c) {
  nodes_[n].ctrl[nb].push_back(c);
  if (now_ >= bootstrap_end_) schedule_opps(n, nb, period_of(now_));
}

void Engine::on_tx_opp(const Event& e) {
  auto& n = nodes_[e.idx];
  const std::size_t nb = e.a;
  Micros cursor = now_;
  std::uint32_t budget = frames_per_opp_;
  auto send = [&](Frame f) {
    f.src = e.idx;
    f.dst = nb;
    f.start = cursor;
    f.end = cursor + c_.frame_exchange_us;
    emit(n, f.start, f.end);
    frames_.push_back(f);
    push(f.end, e.idx, Ev::kFrameEnd, frames_.size() - 1);
    cursor = f.end;
    --budget;
  };
  auto& cq = n.ctrl[nb];
  for (auto& c : cq) {
    if (budget == 0) break;
    if (c.tx_left <= 0) continue;
    Frame f;
    f.ctrl = c;
    if (c.is_sync) {
      f.ctrl.sync.timestamp_us = static_cast<Micros>(static_cast<std::int64_t>(cursor) + n.true_offset);
    }
    --c.tx_left;
    ++res_.control_frames;
    send(f);
  }
  std::erase_if(cq, [](const Ctrl& c) { return c.tx_left <= 0; });
  if (nb != n.parent) return;
  for (std::uint64_t id : n.queue) {
    if (budget == 0) break;
    auto& p = pkts_[id];
    if (p.in_flight) continue;
    p.in_flight = true;
    Frame f;
    f.data = true;
    f.pkt = id;
    ++res_.data_frames;
    send(f);
  }
}

void Engine::on_frame_end(const Event& e) {
  const Frame f = frames_[e.a];
  auto& r = nodes_[f.dst];
  const bool in_window = std::any_of(r.rx_win.begin(), r.rx_win.end(), [&](const auto& w) {
    return w.first <= f.start && f.end <= w.second;
  });
  const auto outcome = receive(f.dst, f.src, f.start, f.end, in_window);
  if (f.data) {
    log(f.end, f.src, f.dst, to_string(outcome));
    auto& s = nodes_[f.src];
    auto& p = pkts_[f.pkt];
    p.in_flight = false;
    if (outcome == RxOutcome::kDelivered) {
      std::erase(s.queue, f.pkt);
      p.hop_attempts = 0;
      if (f.dst == coord_) {
        deliver(f.pkt, f.end);
      } else {
        r.queue.push_back(f.pkt);
      }
    } else {
      p.last_fail = outcome;
      if (++p.hop_attempts >= c_.lucid_max_tx) {
        std::erase(s.queue, f.pkt);
        drop(f.pkt, outcome);
      }
    }
    return;
  }
  if (outcome != RxOutcome::kDelivered) return;
  if (f.ctrl.is_sync) {
    const auto rx_local = static_cast<Micros>(static_cast<std::int64_t>(f.start) + r.true_offset);
    const auto out = apply_sync(r.st, f.ctrl.sync, rx_local);
    if (out.accepted && out.rebroadcast) {
      for (std::size_t ch : r.children) {
        Ctrl c;
        c.is_sync = true;
        c.sync = *out.rebroadcast;
        queue_ctrl(f.dst, ch, c);
      }
    }
    return;
  }
  const auto out = handle_model_select(r.st, f.ctrl.ms);
  if (out.switched && out.rebroadcast) {
    // Echo to the parent once (it doubles as the ACK), push down with retries.
    if (r.parent != kNone) {
      Ctrl c;
      c.ms = *out.rebroadcast;
      queue_ctrl(f.dst, r.parent, c);
    }
    for (std::size_t ch : r.children) {
      Ctrl c;
      c.ms = *out.rebroadcast;
      c.tx_left = kMaxModelSelectTx;
      c.needs_ack = true;
      queue_ctrl(f.dst, ch, c);
    }
  }
  if (out.ack) {
    std::erase_if(r.ctrl[f.src], [&](const Ctrl& c) {
      return !c.is_sync && c.needs_ack && c.ms.flood_seq == f.ctrl.ms.flood_seq;
    });
  }
}

void Engine::on_pdr_eval(const Event& e) {
  const auto p = static_cast<std::int64_t>(e.a);
  if (p >= p_end_) return;
  const std::uint64_t total = nodes_.size() - 1;
  const double pdr = total == 0 ? 100.0 : compute_pdr(on_time_[static_cast<std::size_t>(p - p0_)], total);
  res_.period_pdr.push_back(pdr);
  if (c_.protocol != Protocol::kLucid) return;
  fb_ = update_ema(fb_, pdr);
  res_.ema.push_back(fb_.warm() ? std::optional<double>(fb_.ema) : std::nullopt);
  if (!feedback_decide(fb_)) return;
  auto& coord = nodes_[coord_];
  const Regime target = other(coord.st.own_models.active);
  const auto burst = flood_model_select(coord.st, target);
  res_.triggers.push_back({p, now_, target, coord.st.ms_flood_seq});
  for (std::size_t ch : coord.children) {
    Ctrl c;
    c.ms = burst.front();
    c.tx_left = static_cast<int>(burst.size());
    c.needs_ack = true;
    queue_ctrl(coord_, ch, c);
  }
  if (c_.stop_after_trigger_periods && !stop_scheduled_) {
    stop_scheduled_ = true;
    p_end_ = std::min(p_end_, period_of(now_) + *c_.stop_after_trigger_periods);
    sim_end_ = period_start(p_end_ + c_.drain_periods);
  }
}

void Engine::on_sync_round(const Event& e) {
  for (std::size_t ch : nodes_[coord_].children) {
    for (int k = 0; k < kSyncPacketsPerRound; ++k) {
      Ctrl c;
      c.is_sync = true;
      c.sync = {0, kCoordinatorLevel, 0};
      queue_ctrl(coord_, ch, c);
    }
  }
  if (now_ + kSyncPeriodUs < sim_end_) push(now_ + kSyncPeriodUs, e.idx, Ev::kSyncRound);
}

// ---- LPL baseline --------------------------------------------------------

void Engine::lpl_try_send(std::size_t idx) {
  auto& n = nodes_[idx];
  if (n.mode != LplMode::kIdle || n.queue.empty() || n.parent == kNone) return;
  if (now_ < n.listen_until) {
    n.mode = LplMode::kBackoff;
    push(n.listen_until, idx, Ev::kLplRetry);
    return;
  }
  n.mode = LplMode::kCca;
  n.on.emplace_back(now_, now_ + c_.lpl.tx_cca_us);
  push(now_ + c_.lpl.tx_cca_us, idx, Ev::kLplCcaEnd);
}

void Engine::lpl_fail(std::size_t idx, RxOutcome cause) {
  auto& n = nodes_[idx];
  const auto id = n.queue.front();
  pkts_[id].last_fail = cause;
  if (++n.attempts >= c_.lpl.max_tx) {
    n.queue.pop_front();
    n.attempts = 0;
    drop(id, cause);
    n.mode = LplMode::kBackoff;
    push(now_, idx, Ev::kLplRetry);
    return;
  }
  n.mode = LplMode::kBackoff;
  const Micros w = c_.lpl.wake_interval_us;
  push(now_ + w / 2 + rng_.index(w * static_cast<Micros>(n.attempts)), idx, Ev::kLplRetry);
}

void Engine::on_lpl_event(const Event& e) {
  auto& n = nodes_[e.idx];
  const auto& lp = c_.lpl;
  switch (e.kind) {
    case Ev::kLplGenerate: {
      const auto p = static_cast<std::int64_t>(e.a);
      if (p < p_end_) {
        pkts_.push_back({n.spec.id, p, now_, 0, RxOutcome::kNotListening, false, false});
        n.queue.push_back(pkts_.size() - 1);
        ++res_.ledger.generated;
        lpl_try_send(e.idx);
        if (p + 1 < p_end_) push(period_start(p + 1) + n.phase, e.idx, Ev::kLplGenerate, p + 1);
      }
      break;
    }
    case Ev::kLplWake: {
      if (now_ + lp.wake_interval_us < sim_end_) push(now_ + lp.wake_interval_us, e.idx, Ev::kLplWake);
      if (n.mode == LplMode::kCca || n.mode == LplMode::kStrobing || now_ < n.listen_until) break;
      n.on.emplace_back(now_, now_ + lp.wake_cca_us);
      push(now_ + lp.wake_cca_us, e.idx, Ev::kLplWakeEnd, n.on.size() - 1);
      break;
    }
    case Ev::kLplWakeEnd: {
      const Micros w = now_ - lp.wake_cca_us;
      bool energy = std::any_of(n.jam.begin(), n.jam.end(), [&](const auto* j) { return j->overlaps(w, now_); });
      if (!energy) energy = !neighbour_emissions(n, kNone, w, now_).empty();
      if (!energy) break;
      n.listen_from = w;
      n.listen_until = now_ + lp.listen_us;
      n.listen_on = e.a;
      n.on[e.a].second = n.listen_until;
      break;
    }
    case Ev::kLplCcaEnd: {
      const Micros a = now_ - lp.tx_cca_us;
      if (std::any_of(n.jam.begin(), n.jam.end(), [&](const auto* j) { return j->overlaps(a, now_); })) {
        lpl_fail(e.idx, RxOutcome::kLostInterference);
      } else if (!neighbour_emissions(n, kNone, a, now_).empty()) {
        lpl_fail(e.idx, RxOutcome::kLostCollision);
      } else {
        n.mode = LplMode::kStrobing;
        n.train_start = now_;
        n.train_end = now_ + lp.wake_interval_us + data_air_ + lp.strobe_gap_us;
        n.train_cause = RxOutcome::kNotListening;
        push(now_, e.idx, Ev::kLplStrobe);
      }
      break;
    }
    case Ev::kLplStrobe: {
      if (e.a == 1) {
        // Energy in the ACK wait that is not an ACK aborts the train.
        const Micros a = now_ - lp.strobe_gap_us;
        RxOutcome busy = RxOutcome::kDelivered;
        if (std::any_of(n.jam.begin(), n.jam.end(), [&](const auto* j) { return j->overlaps(a, now_); })) {
          busy = RxOutcome::kLostInterference;
        } else if (!neighbour_emissions(n, kNone, a, now_).empty()) {
          busy = RxOutcome::kLostCollision;
        }
        if (busy != RxOutcome::kDelivered) {
          n.on.emplace_back(n.train_start, now_);
          log(now_, e.idx, n.parent, to_string(busy));
          lpl_fail(e.idx, busy);
          break;
        }
      }
      n.tx.push_back({now_, now_ + data_air_, n.spec.id});
      n.longest_tx = std::max(n.longest_tx, data_air_);
      ++res_.data_frames;
      push(now_ + data_air_, e.idx, Ev::kLplStrobeEnd, now_);
      break;
    }
    case Ev::kLplStrobeEnd: {
      const Micros s = e.a;
      auto& r = nodes_[n.parent];
      const bool listening = r.listen_from <= s && s < r.listen_until && r.mode != LplMode::kCca &&
                             r.mode != LplMode::kStrobing;
      const auto outcome = receive(n.parent, e.idx, s, now_, listening);
      if (outcome == RxOutcome::kDelivered) {
        const Micros done = now_ + kAckUs;
        r.listen_until = done;
        if (r.listen_on != kNone) r.on[r.listen_on].second = std::max(r.on[r.listen_on].second, done);
        r.on.emplace_back(s, done);
        n.on.emplace_back(n.train_start, done);
        const auto id = n.queue.front();
        n.queue.pop_front();
        n.attempts = 0;
        pkts_[id].hop_attempts = 0;
        log(now_, e.idx, n.parent, to_string(outcome));
        if (n.parent == coord_) {
          deliver(id, now_);
        } else {
          r.queue.push_back(id);
          if (r.mode == LplMode::kIdle) {
            r.mode = LplMode::kBackoff;
            push(done, n.parent, Ev::kLplRetry);
          }
        }
        n.mode = LplMode::kBackoff;
        push(done, e.idx, Ev::kLplRetry);
        break;
      }
      if (outcome != RxOutcome::kNotListening) n.train_cause = outcome;
      const Micros next = now_ + lp.strobe_gap_us;
      if (next + data_air_ <= n.train_end) {
        push(next, e.idx, Ev::kLplStrobe, 1);
        break;
      }
      n.on.emplace_back(n.train_start, next);
      log(now_, e.idx, n.parent, to_string(n.train_cause));
      lpl_fail(e.idx, n.train_cause);
      break;
    }
    case Ev::kLplRetry: {
      if (n.mode == LplMode::kBackoff) n.mode = LplMode::kIdle;
      lpl_try_send(e.idx);
      break;
    }
    default:
      throw std::logic_error("unexpected LPL event");
  }
}

// ---- main loop -----------------------------------------------------------

SimResult Engine::run() {
  c_.validate();
  horizon_ = static_cast<std::uint32_t>(c_.t_data_us / c_.slot_len_us);
  n_ss_ = subslot_count(c_.slot_len_us);
  frames_per_opp_ = static_cast<std::uint32_t>(kWhiteSpaceUs / c_.frame_exchange_us);
  data_air_ = c_.frame_exchange_us > kAckUs ? c_.frame_exchange_us - kAckUs : c_.frame_exchange_us;

  NodeId max_id = 0;
  for (const auto& n : c_.topology.nodes) max_id = std::max(max_id, n.id);
  const std::uint32_t n_window = max_id + 1;
  const Micros exchange_end =
      model_broadcast_time(max_id, kModelExchangeStartUs, n_window) + kModelWindowUs;
  bootstrap_end_ = std::max(c_.bootstrap_min_us, c_.protocol == Protocol::kLucid ? exchange_end : 0);
  bootstrap_end_ = (bootstrap_end_ + c_.slot_len_us - 1) / c_.slot_len_us * c_.slot_len_us;
  p0_ = static_cast<std::int64_t>((bootstrap_end_ + c_.t_data_us - 1) / c_.t_data_us);
  p_end_ = static_cast<std::int64_t>(c_.duration_us / c_.t_data_us);
  if (p_end_ <= p0_) throw Error("duration leaves no data period after the bootstrap phase");
  sim_end_ = period_start(p_end_ + c_.drain_periods);

  for (std::size_t k = 0; k < c_.jammers.size(); ++k) {
    jammers_.push_back(generate_jammer_events(c_.jammers[k], sim_end_, c_.seed, k, bootstrap_end_));
  }
  build_nodes();
  provision_models();
  on_time_.assign(static_cast<std::size_t>(p_end_ - p0_), 0);
  fb_ = make_feedback_state(c_.ema_window, c_.th_pdr, c_.ms_timeout_periods);

  res_.scenario = c_.scenario;
  res_.environment = c_.environment;
  res_.interference_type = c_.interference_type;
  res_.protocol = c_.protocol;
  res_.lpl_max_tx = c_.protocol == Protocol::kLpl ? c_.lpl.max_tx : 0;
  res_.t_data_us = c_.t_data_us;
  res_.n_slot = c_.n_slot;
  res_.seed = c_.seed;
  res_.bootstrap_end_us = bootstrap_end_;
  res_.first_period = p0_;

  if (c_.protocol == Protocol::kLucid) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      nodes_[i].on.emplace_back(0, bootstrap_end_);
      nodes_[i].rx_win.emplace_back(0, bootstrap_end_);
      push(model_broadcast_time(nodes_[i].spec.id, kModelExchangeStartUs, n_window), i, Ev::kBcastModel);
      push(period_start(p0_), i, Ev::kPeriodStart, p0_);
    }
    for (Micros t : sync_flood_schedule(0, kSyncGapUs)) {
      bcast_sync_.push_back({0, kCoordinatorLevel, 0});
      push(t, coord_, Ev::kBcastSync, bcast_sync_.size() - 1);
    }
    if (bootstrap_end_ + kSyncPeriodUs < sim_end_) push(bootstrap_end_ + kSyncPeriodUs, coord_, Ev::kSyncRound);
  } else {
    // Without a shared schedule there is no bootstrap phase: clocks and
    // models are irrelevant and radios duty-cycle from t = 0.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto& n = nodes_[i];
      push(rng_.index(c_.lpl.wake_interval_us), i, Ev::kLplWake);
      if (i != coord_) push(period_start(p0_) + n.phase, i, Ev::kLplGenerate, p0_);
    }
    for (std::int64_t p = p0_; p < p_end_; ++p) push(eval_time(p), coord_, Ev::kPdrEval, p);
  }

  while (!q_.empty()) {
    const Event e = q_.top();
    if (e.t > sim_end_) break;
    q_.pop();
    if (e.t < now_) throw std::logic_error("event scheduled in the past");
    now_ = e.t;
    ++res_.events_processed;
    switch (e.kind) {
      case Ev::kBcastSync: on_bcast_sync(e); break;
      case Ev::kBcastModel: on_bcast_model(e); break;
      case Ev::kBcastEnd: on_bcast_end(e); break;
      case Ev::kPeriodStart: on_period_start(e); break;
      case Ev::kTxOpp: on_tx_opp(e); break;
      case Ev::kFrameEnd: on_frame_end(e); break;
      case Ev::kPdrEval: on_pdr_eval(e); break;
      case Ev::kSyncRound: on_sync_round(e); break;
      default: on_lpl_event(e); break;
    }
  }

  // Whatever is still queued never made it.
  for (std::size_t id = 0; id < pkts_.size(); ++id) {
    if (!pkts_[id].done) drop(id, pkts_[id].last_fail);
  }
  if (res_.ledger.generated != res_.ledger.delivered + res_.ledger.lost()) {
    throw std::logic_error("packet ledger does not balance");
  }

  const Micros horizon = period_start(p_end_);
  res_.duration_us = horizon;
  std::vector<std::vector<std::pair<Micros, Micros>>> on(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (auto [a, b] : nodes_[i].on) {
      b = std::min(b, horizon);
      if (a < b) on[i].emplace_back(a, b);
    }
  }
  res_.duty_cycle_pct = account_duty_cycle(on, horizon, nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const double pct = account_duty_cycle({on[i]}, horizon, 1);
    res_.radio_on_us.emplace_back(nodes_[i].spec.id, static_cast<Micros>(std::llround(pct * horizon / 100.0)));
    res_.final_active_model.emplace_back(nodes_[i].spec.id, nodes_[i].st.own_models.active);
  }
  std::sort(res_.radio_on_us.begin(), res_.radio_on_us.end());
  std::sort(res_.final_active_model.begin(), res_.final_active_model.end());
  res_.pdr_pct = res_.ledger.generated == 0
                     ? 100.0
                     : compute_pdr(res_.ledger.delivered, res_.ledger.generated);
  return std::move(res_);
}

}  // namespace

SimResult run_simulation(const SimConfig& config) {
  Engine engine(config);
  return engine.run();
}

// ---- result output -------------------------------------------------------

json to_json(const SimResult& r) {
  json ema = json::array();
  for (const auto& v : r.ema) ema.push_back(v ? json(*v) : json(nullptr));
  json triggers = json::array();
  for (const auto& t : r.triggers) {
    triggers.push_back({{"period_index", t.period_index},
                        {"time_us", t.time_us},
                        {"target", to_string(t.target)},
                        {"flood_seq", t.flood_seq}});
  }
  json on = json::array();
  for (const auto& [id, us] : r.radio_on_us) on.push_back({{"node", id}, {"radio_on_us", us}});
  json models = json::array();
  for (const auto& [id, m] : r.final_active_model) models.push_back({{"node", id}, {"active_model", to_string(m)}});
  return {
      {"scenario", r.scenario},
      {"environment", r.environment},
      {"interference_type", r.interference_type},
      {"protocol", protocol_label(r)},
      {"t_data_us", r.t_data_us},
      {"n_slot", r.n_slot},
      {"seed", r.seed},
      {"duration_us", r.duration_us},
      {"bootstrap_end_us", r.bootstrap_end_us},
      {"first_period", r.first_period},
      {"pdr_pct", r.pdr_pct},
      {"duty_cycle_pct", r.duty_cycle_pct},
      {"ledger",
       {{"generated", r.ledger.generated},
        {"delivered", r.ledger.delivered},
        {"lost_collision", r.ledger.lost_collision},
        {"lost_interference", r.ledger.lost_interference},
        {"lost_no_rendezvous", r.ledger.lost_no_rendezvous}}},
      {"period_pdr", r.period_pdr},
      {"ema", ema},
      {"triggers", triggers},
      {"radio_on", on},
      {"final_active_model", models},
      {"data_frames", r.data_frames},
      {"control_frames", r.control_frames},
      {"events_processed", r.events_processed},
      {"errors", r.errors},
  };
}

std::string protocol_label(const SimResult& r) {
  if (r.protocol == Protocol::kLucid) return "LUCID";
  return "LPL(max_tx=" + std::to_string(r.lpl_max_tx) + ")";
}

void write_ledger_csv(const SimResult& r, std::ostream& out) {
  out << "time_us,src,dst,outcome\n";
  for (const auto& e : r.ledger_events) out << e.time_us << ',' << e.src << ',' << e.dst << ',' << e.outcome << '\n';
}

}  // namespace lucid
