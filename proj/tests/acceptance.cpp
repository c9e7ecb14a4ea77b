// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "lucid/error.hpp"
#include "lucid/gmm.hpp"
#include "lucid/hmm.hpp"
#include "lucid/metrics.hpp"
#include "lucid/protocol.hpp"
#include "lucid/simulator.hpp"

using namespace lucid;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

constexpr Micros kSecond = 1000000;

ModelPair pair_of(const HmmParams& h) {
  ModelPair mp;
  mp.peak.hmm = h;
  mp.offpeak.hmm = h;
  mp.peak.gmm = h.emissions[1];
  mp.offpeak.gmm = h.emissions[0];
  return mp;
}

Outcome em_monotonicity() {
  const auto t0 = Clock::now();
  Rng rng(0xa11ce);
  double worst_drop = 0.0;
  int datasets = 0;
  while (datasets < 100) {
    const int m = 1 + static_cast<int>(rng.index(7));
    const auto n = 50 + rng.index(4951);
    const auto truth = fixtures::random_gmm(rng, 1 + static_cast<int>(rng.index(7)));
    const auto pts = to_points(gmm_sample(truth, n, rng.bits()));
    const auto r = gmm_fit_points(pts, {m, rng.bits(), 1e-6, 200});
    for (std::size_t i = 1; i < r.loglik.size(); ++i) {
      worst_drop = std::max(worst_drop, r.loglik[i - 1] - r.loglik[i]);
    }
    ++datasets;
  }
  const double secs = seconds_since(t0);
  return {worst_drop <= 1e-9 && secs < 30.0,
          fmt("%d datasets, largest per-iteration decrease %.3g, %.1f s", datasets, worst_drop, secs)};
}

Outcome gmm_recovery() {
  const auto t0 = Clock::now();
  Rng rng(4);
  std::vector<FeaturePoint> d;
  for (int i = 0; i < 10000; ++i) {
    if (i % 2 == 0) d.push_back({rng.normal(5000.0, 1.0), rng.normal(5.0, 1.0)});
    else d.push_back({rng.normal(500.0, 1.0), rng.normal(120.0, 1.0)});
  }
  const auto r = gmm_fit_points(d, {2, 17, 1e-8, 300});
  const std::vector<FeaturePoint> truth = {{5000.0, 5.0}, {500.0, 120.0}};
  const auto match = fixtures::match_components(r.params.means, truth);
  double worst_rel = 0.0, worst_w = 0.0;
  for (int i = 0; i < 2; ++i) {
    const auto k = static_cast<std::size_t>(match[i]);
    for (int dim = 0; dim < 2; ++dim) {
      worst_rel = std::max(worst_rel, std::abs(r.params.means[k][dim] - truth[i][dim]) / truth[i][dim]);
    }
    worst_w = std::max(worst_w, std::abs(r.params.weights[k] - 0.5));
  }
  const double secs = seconds_since(t0);
  return {worst_rel < 0.05 && worst_w <= 0.05 && secs < 5.0,
          fmt("mean rel err %.2g, weight err %.2g, %.2f s", worst_rel, worst_w, secs)};
}

Outcome forward_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const auto h = fixtures::random_hmm(rng);
    std::vector<FeaturePoint> obs;
    const auto t = 1 + rng.index(8);
    for (std::size_t i = 0; i < t; ++i) obs.push_back({rng.uniform(100.0, 50000.0), rng.uniform(0.0, 150.0)});
    const double fwd = hmm_forward_loglik(h, std::span<const FeaturePoint>(obs));
    const double brute = fixtures::brute_force_loglik(h, obs);
    worst = std::max(worst, std::abs(fwd - brute) / std::abs(brute));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 10.0, fmt("200 models, worst rel err %.2g, %.2f s", worst, secs)};
}

Outcome baum_welch_recovery() {
  HmmParams truth;
  truth.pi = {0.5, 0.5};
  truth.a = {{{0.9, 0.1}, {0.2, 0.8}}};
  truth.emissions[0] = fixtures::make_gmm({1.0}, {{60000.0, 2.0}}, {{4.0e7, 1.0}});
  truth.emissions[1] = fixtures::make_gmm({1.0}, {{500.0, 120.0}}, {{10000.0, 100.0}});
  truth.refresh_digest();
  const auto [obs, states] = fixtures::sample_chain(truth, 10000, 31);
  const auto r = hmm_fit_detailed(obs, states, {1e-8, 100, 1, 3});
  double drop = 0.0;
  for (std::size_t i = 1; i < r.loglik.size(); ++i) drop = std::max(drop, r.loglik[i - 1] - r.loglik[i]);
  double worst = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) worst = std::max(worst, std::abs(r.params.a[i][j] - truth.a[i][j]));
  return {worst <= 0.05 && drop <= 1e-9,
          fmt("A = [[%.3f, %.3f], [%.3f, %.3f]], worst entry err %.3f, largest loglik decrease %.2g",
              r.params.a[0][0], r.params.a[0][1], r.params.a[1][0], r.params.a[1][1], worst, drop)};
}

struct SeparableFixture {
  std::vector<SlotFeatures> features;
  std::vector<ChannelState> truth;
  Thresholds th;
};

const SeparableFixture& separable() {
  static const SeparableFixture fx = [] {
    SeparableFixture f;
    const auto trace = fixtures::two_regime_trace(3000, 5);
    f.features = extract_slot_features(trace, f.th.slot_len_us);
    f.truth = label_channel_states(f.features, f.th);
    return f;
  }();
  return fx;
}

Outcome estimation_accuracy() {
  const auto& fx = separable();
  const auto p = gmm_fit(fx.features, kDefaultComponents, 1);
  const auto m = confusion_metrics(gmm_classify_states(p, fx.features, fx.th), fx.truth);
  const auto gen = confusion_metrics(gmm_estimate_states(p, fx.features.size(), 1, fx.th), fx.truth);
  return {m.accuracy_pct >= 95.0 && m.fpr_pct <= 5.0,
          fmt("slot-aligned accuracy %.2f%%, FPR %.2f%% (unaligned generative draw: %.1f%% / %.1f%%)",
              m.accuracy_pct, m.fpr_pct, gen.accuracy_pct, gen.fpr_pct)};
}

Outcome component_selection() {
  const auto& fx = separable();
  const auto sel = select_component_count(fx.features, fx.truth, 3, 10, 1, fx.th);
  double min_auc = 1.0;
  int smallest_ok = 0;
  for (const auto& [m, auc] : sel.auc_per_m) {
    min_auc = std::min(min_auc, auc);
    if (auc >= 0.99 && smallest_ok == 0) smallest_ok = m;
  }
  return {sel.auc_per_m.size() == 8 && min_auc >= 0.99 && sel.components == smallest_ok,
          fmt("M chosen %d, min AUC over 3..10 = %.4f", sel.components, min_auc)};
}

Outcome rendezvous() {
  Rng rng(101);
  int violations = 0, tx_entries = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const auto h = fixtures::random_hmm(rng);
    const auto period = static_cast<std::int64_t>(rng.index(100000));
    const auto horizon = static_cast<std::uint32_t>(1 + rng.index(1200));
    const auto n_slot = static_cast<std::uint32_t>(1 + rng.index(6));
    std::set<std::uint32_t> rx;
    for (const auto& e : plan_rx_schedule(pair_of(h), period, horizon, n_slot, 50000)) rx.insert(e.slot_index);
    const auto sender_view = pair_of(HmmParams(h));
    for (const auto& e : plan_tx_schedule(sender_view, static_cast<NodeId>(rng.index(64)), period, horizon, n_slot,
                                          5, 50000)) {
      ++tx_entries;
      violations += rx.count(e.slot_index) == 0;
    }
  }
  return {violations == 0, fmt("1000 models, %d TX entries, %d outside the RX set", tx_entries, violations)};
}

Outcome protocol_equations() {
  int failed = 0, total = 0;
  auto expect = [&](bool ok) {
    ++total;
    failed += !ok;
  };

  NodeState n;
  n.authoritative_level = 2;
  const auto out = apply_sync(n, {10000, 1, 5000}, 13000);  // gap 3000 plus carried offset 5000
  expect(out.accepted && n.clock_offset_us == 8000);
  NodeState one;
  one.authoritative_level = 1;
  expect(!apply_sync(one, {0, 2, 0}, 50).accepted);
  NodeState fresh;
  apply_sync(fresh, {0, kCoordinatorLevel, 0}, 77);
  expect(fresh.authoritative_level == 1);

  expect(model_broadcast_time(5, 0, 8) == 1500000);
  expect(model_broadcast_time(8, 0, 8) == 0);
  expect(subslot_count(50000) == 5);
  expect(subslot_tx_time(7, 0, 5) == 17024);
  expect(subslot_tx_time(0, 123, 5) == 123);

  expect(compute_pdr(93, 100) == 93.0);
  expect(compute_pdr(0, 50) == 0.0);
  try {
    compute_pdr(51, 50);
    expect(false);
  } catch (const Error&) {
    expect(true);
  }

  auto fb = make_feedback_state(40);
  expect(std::abs(fb.alpha - 2.0 / 41.0) < 1e-9);
  for (int i = 0; i < 40; ++i) fb = update_ema(fb, 95.0);
  fb = update_ema(fb, 90.0);
  expect(std::abs(fb.ema - (2.0 / 41.0 * 90.0 + 39.0 / 41.0 * 95.0)) < 1e-9);
  expect(std::abs(fb.ema - 94.7561) < 1e-4);
  return {failed == 0, fmt("%d of %d worked examples wrong", failed, total)};
}

Outcome determinism() {
  auto c = make_scenario("5-node", "home", Regime::kPeak, Protocol::kLucid, 60 * kSecond, 42);
  const auto a = to_json(run_simulation(c)).dump();
  const auto b = to_json(run_simulation(c)).dump();
  c.protocol = Protocol::kLpl;
  const auto la = to_json(run_simulation(c)).dump();
  const auto lb = to_json(run_simulation(c)).dump();
  return {a == b && la == lb, fmt("LUCID %zu bytes %s, LPL %zu bytes %s", a.size(), a == b ? "identical" : "differ",
                                  la.size(), la == lb ? "identical" : "differ")};
}

Outcome quiet_baseline() {
  const auto t0 = Clock::now();
  auto c = make_scenario("5-node", "office", Regime::kOffPeak, Protocol::kLucid, 60 * kSecond, 1);
  c.jammers.clear();
  c.duration_us = 2 * 3600 * kSecond;
  const auto r = run_simulation(c);
  const double secs = seconds_since(t0);
  return {r.pdr_pct == 100.0 && r.duty_cycle_pct <= 1.0 && secs < 60.0,
          fmt("PDR %.2f%%, duty-cycle %.3f%%, %.1f s", r.pdr_pct, r.duty_cycle_pct, secs)};
}

struct Averages {
  double pdr = 0.0, duty = 0.0;
};

Averages averaged(SimConfig c, const std::vector<std::uint64_t>& seeds) {
  Averages a;
  for (auto s : seeds) {
    c.seed = s;
    const auto r = run_simulation(c);
    a.pdr += r.pdr_pct / seeds.size();
    a.duty += r.duty_cycle_pct / seeds.size();
  }
  return a;
}

Outcome five_node_ordering() {
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  const auto base = make_scenario("5-node", "home", Regime::kPeak, Protocol::kLucid, 60 * kSecond, 1);
  const auto lucid = averaged(base, seeds);
  auto lpl = base;
  lpl.protocol = Protocol::kLpl;
  lpl.lpl.max_tx = 1;
  const auto lpl1 = averaged(lpl, seeds);
  lpl.lpl.max_tx = 3;
  const auto lpl3 = averaged(lpl, seeds);
  const bool ok = lucid.pdr - lpl1.pdr >= 20.0 && lpl1.duty > lucid.duty && lpl3.duty > lucid.duty;
  return {ok, fmt("PDR LUCID %.1f%% / LPL(1) %.1f%% / LPL(3) %.1f%%; duty %.3f%% / %.3f%% / %.3f%%", lucid.pdr,
                  lpl1.pdr, lpl3.pdr, lucid.duty, lpl1.duty, lpl3.duty)};
}

Outcome feedback_loop() {
  const auto cfg = make_regime_switch_scenario(1);
  const auto r = run_simulation(cfg);
  const Regime initial = cfg.initial_model.value_or(Regime::kOffPeak);
  if (r.triggers.size() != 1) return {false, fmt("%zu model-selection floods", r.triggers.size())};
  const auto& t = r.triggers.front();
  const auto k = static_cast<std::size_t>(t.period_index - r.first_period);
  // Count the run of below-threshold EMA values ending at the trigger.
  int run = 0;
  for (std::size_t i = k + 1; i-- > 0;) {
    if (!r.ema[i] || *r.ema[i] >= cfg.th_pdr) break;
    ++run;
  }
  bool all_flipped = !r.final_active_model.empty();
  for (const auto& [id, m] : r.final_active_model) all_flipped = all_flipped && m == other(initial);
  double min_ema = 100.0;
  for (const auto& e : r.ema) {
    if (e) min_ema = std::min(min_ema, *e);
  }
  return {run == cfg.ms_timeout_periods && t.target == other(initial) && all_flipped,
          fmt("1 flood at period %lld after %d periods below %.0f%% (min EMA %.1f%%), %zu nodes on %s",
              static_cast<long long>(t.period_index), run, cfg.th_pdr, min_ema, r.final_active_model.size(),
              all_flipped ? to_string(other(initial)) : "mixed models")};
}

Outcome n_slot_monotonicity() {
  std::ostringstream detail;
  bool ok = true;
  Averages two, three;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto c = make_scenario("16-node", "home", Regime::kPeak, Protocol::kLucid, 60 * kSecond, seed);
    c.n_slot = 2;
    const auto r2 = run_simulation(c);
    c.n_slot = 3;
    const auto r3 = run_simulation(c);
    ok = ok && r3.pdr_pct >= r2.pdr_pct && r3.duty_cycle_pct >= r2.duty_cycle_pct;
    two.pdr += r2.pdr_pct / 3;
    two.duty += r2.duty_cycle_pct / 3;
    three.pdr += r3.pdr_pct / 3;
    three.duty += r3.duty_cycle_pct / 3;
  }
  return {ok, fmt("every seed ordered: %s; mean PDR %.2f%% -> %.2f%%, duty %.3f%% -> %.3f%%", ok ? "yes" : "no",
                  two.pdr, three.pdr, two.duty, three.duty)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"EM log-likelihood monotone on 100 random datasets", em_monotonicity},
      {"GMM recovers two separated components", gmm_recovery},
      {"HMM forward matches path enumeration", forward_oracle},
      {"Baum-Welch monotone, transition matrix recovered", baum_welch_recovery},
      {"GMM estimate accuracy and FPR on two-regime trace", estimation_accuracy},
      {"component selection picks smallest M with AUC >= 0.99", component_selection},
      {"TX plan slots within RX plan slots", rendezvous},
      {"sync, window, sub-slot, PDR and EMA worked examples", protocol_equations},
      {"simulator determinism, seed 42", determinism},
      {"quiet 5-node LUCID: PDR 100%, duty <= 1%", quiet_baseline},
      {"5-node bursty jammers: LUCID vs LPL ordering", five_node_ordering},
      {"feedback loop: one flood after 5 low periods", feedback_loop},
      {"16-node n_slot 3 vs 2 ordering", n_slot_monotonicity},
  };
  const auto t0 = Clock::now();
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed in %.1f s\n", static_cast<int>(criteria.size()) - failures, criteria.size(),
              seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
