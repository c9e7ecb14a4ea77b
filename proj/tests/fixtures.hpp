#pragma once

// Shared generators and brute-force oracles for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "lucid/gmm.hpp"
#include "lucid/hmm.hpp"
#include "lucid/rng.hpp"
#include "lucid/trace.hpp"

namespace fixtures {

using namespace lucid;

inline double logsumexp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline GmmParams make_gmm(std::vector<double> w, std::vector<FeaturePoint> mu,
                          std::vector<FeaturePoint> var) {
  GmmParams p;
  p.weights = std::move(w);
  p.means = std::move(mu);
  p.variances = std::move(var);
  p.refresh_digest();
  return p;
}

/// Random mixture with components spread over a plausible feature range.
inline GmmParams random_gmm(Rng& rng, int m) {
  std::vector<double> w;
  std::vector<FeaturePoint> mu, var;
  double total = 0.0;
  for (int k = 0; k < m; ++k) {
    w.push_back(0.1 + rng.uniform());
    total += w.back();
    mu.push_back({rng.uniform(100.0, 50000.0), rng.uniform(0.0, 150.0)});
    var.push_back({std::pow(rng.uniform(200.0, 8000.0), 2), std::pow(rng.uniform(1.0, 30.0), 2)});
  }
  for (auto& x : w) x /= total;
  return make_gmm(w, mu, var);
}

inline HmmParams random_hmm(Rng& rng) {
  HmmParams h;
  const double p0 = rng.uniform(0.05, 0.95);
  h.pi = {p0, 1.0 - p0};
  for (auto& row : h.a) {
    const double s = rng.uniform(0.02, 0.98);
    row = {s, 1.0 - s};
  }
  h.emissions[0] = random_gmm(rng, 1 + static_cast<int>(rng.index(3)));
  h.emissions[1] = random_gmm(rng, 1 + static_cast<int>(rng.index(3)));
  h.refresh_digest();
  return h;
}

/// log P(obs) by summing over all 2^T state paths.
inline double brute_force_loglik(const HmmParams& h, const std::vector<FeaturePoint>& obs) {
  const std::size_t t = obs.size();
  std::vector<double> terms;
  for (std::uint64_t path = 0; path < (1ULL << t); ++path) {
    double lp = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
      const int s = static_cast<int>((path >> i) & 1U);
      lp += i == 0 ? std::log(h.pi[s])
                   : std::log(h.a[(path >> (i - 1)) & 1U][s]);
      lp += gmm_log_density(h.emissions[s], obs[i]);
    }
    terms.push_back(lp);
  }
  return logsumexp(terms);
}

/// Path probability of a given state sequence (joint with the observations).
inline double path_logprob(const HmmParams& h, const std::vector<FeaturePoint>& obs,
                           const std::vector<ChannelState>& path) {
  double lp = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const int s = static_cast<int>(path[i]);
    lp += i == 0 ? std::log(h.pi[s]) : std::log(h.a[static_cast<int>(path[i - 1])][s]);
    lp += gmm_log_density(h.emissions[s], obs[i]);
  }
  return lp;
}

inline double brute_force_best_path(const HmmParams& h, const std::vector<FeaturePoint>& obs) {
  double best = -std::numeric_limits<double>::infinity();
  const std::size_t t = obs.size();
  for (std::uint64_t bits = 0; bits < (1ULL << t); ++bits) {
    std::vector<ChannelState> path(t);
    for (std::size_t i = 0; i < t; ++i) path[i] = static_cast<ChannelState>((bits >> i) & 1U);
    best = std::max(best, path_logprob(h, obs, path));
  }
  return best;
}

/// Minimum total distance matching of estimated to true means, by
/// exhaustive permutation (fine for the handful of components used here).
inline std::vector<int> match_components(const std::vector<FeaturePoint>& est,
                                         const std::vector<FeaturePoint>& truth) {
  std::vector<int> perm(truth.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      const auto& a = est[static_cast<std::size_t>(perm[i])];
      const auto& b = truth[i];
      c += std::hypot((a[0] - b[0]) / std::max(1.0, std::abs(b[0])),
                      (a[1] - b[1]) / std::max(1.0, std::abs(b[1])));
    }
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;  // best[i] = estimated component matched to true component i
}

/// Draws a feature sequence from a hidden chain. Returns (obs, states).
inline std::pair<std::vector<SlotFeatures>, std::vector<ChannelState>> sample_chain(
    const HmmParams& h, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SlotFeatures> obs;
  std::vector<ChannelState> states;
  int s = rng.uniform() < h.pi[0] ? 0 : 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) s = rng.uniform() < h.a[s][0] ? 0 : 1;
    const auto draw = gmm_sample(h.emissions[s], 1, rng.bits());
    auto f = draw.front();
    f.slot_index = i;
    obs.push_back(f);
    states.push_back(static_cast<ChannelState>(s));
  }
  return {obs, states};
}

/// Two-regime interference trace on 100 ms slots. Heavy slots carry about
/// 120 arrivals at a 500 us mean gap; light slots carry 2 arrivals 50 ms
/// apart. Regimes alternate in runs of 5..60 slots.
inline ArrivalTrace two_regime_trace(std::size_t n_slots, std::uint64_t seed,
                                     std::vector<bool>* heavy_out = nullptr) {
  constexpr Micros kSlot = 100000;
  Rng rng(seed);
  ArrivalTrace t;
  t.duration_us = n_slots * kSlot;
  bool heavy = rng.uniform() < 0.5;
  std::size_t run_left = 0;
  for (std::size_t k = 0; k < n_slots; ++k) {
    if (run_left == 0) {
      heavy = !heavy;
      run_left = 5 + rng.index(56);
    }
    --run_left;
    if (heavy_out) heavy_out->push_back(heavy);
    const Micros base = k * kSlot;
    if (heavy) {
      double at = rng.uniform(0.0, 20000.0);
      for (int i = 0; i < 120; ++i) {
        const Micros x = base + static_cast<Micros>(at);
        if (x >= base + kSlot) break;
        if (t.arrivals.empty() || t.arrivals.back() != x) t.arrivals.push_back(x);
        at += 250.0 + rng.exponential(1.0 / 250.0);
      }
    } else {
      const double first = rng.uniform(0.0, 45000.0);
      const double second = first + rng.normal(50000.0, 1500.0);
      t.arrivals.push_back(base + static_cast<Micros>(first));
      t.arrivals.push_back(base + static_cast<Micros>(std::min(second, 99999.0)));
    }
  }
  return t;
}

}  // namespace fixtures
