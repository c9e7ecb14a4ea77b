#include "lucid/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lucid/digest.hpp"
#include "lucid/error.hpp"
#include "lucid/rng.hpp"

namespace lucid {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

// Emission probabilities rescaled per step: e[t][s] = exp(logb - shift[t]).
struct Emissions {
  std::vector<std::array<double, 2>> e;
  std::vector<double> shift;
};

Emissions emission_table(const HmmParams& p, std::span<const FeaturePoint> obs) {
  Emissions em;
  em.e.resize(obs.size());
  em.shift.resize(obs.size());
  for (std::size_t t = 0; t < obs.size(); ++t) {
    const double l0 = gmm_log_density(p.emissions[0], obs[t]);
    const double l1 = gmm_log_density(p.emissions[1], obs[t]);
    const double m = std::max(l0, l1);
    em.shift[t] = m;
    em.e[t] = {std::exp(l0 - m), std::exp(l1 - m)};
  }
  return em;
}

struct Forward {
  std::vector<std::array<double, 2>> alpha;  // normalized
  std::vector<double> scale;
  double loglik = 0.0;
};

Forward forward(const HmmParams& p, const Emissions& em) {
  const std::size_t n = em.e.size();
  Forward f;
  f.alpha.resize(n);
  f.scale.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::array<double, 2> v{};
    for (int j = 0; j < 2; ++j) {
      const double prior = t == 0 ? p.pi[j]
                                  : f.alpha[t - 1][0] * p.a[0][j] + f.alpha[t - 1][1] * p.a[1][j];
      v[j] = prior * em.e[t][j];
    }
    const double c = v[0] + v[1];
    if (!(c > 0.0)) {
      f.loglik = kNegInf;
      f.scale[t] = 0.0;
      f.alpha[t] = {0.5, 0.5};
      continue;
    }
    f.scale[t] = c;
    f.alpha[t] = {v[0] / c, v[1] / c};
    f.loglik += std::log(c) + em.shift[t];
  }
  return f;
}

std::vector<std::array<double, 2>> backward(const HmmParams& p, const Emissions& em,
                                            const Forward& f) {
  const std::size_t n = em.e.size();
  std::vector<std::array<double, 2>> beta(n, {1.0, 1.0});
  for (std::size_t t = n - 1; t-- > 0;) {
    for (int i = 0; i < 2; ++i) {
      double s = 0.0;
      for (int j = 0; j < 2; ++j) s += p.a[i][j] * em.e[t + 1][j] * beta[t + 1][j];
      beta[t][i] = s / f.scale[t + 1];
    }
  }
  return beta;
}

std::vector<FeaturePoint> class_points(std::span<const FeaturePoint> pts,
                                       std::span<const ChannelState> labels, ChannelState s) {
  std::vector<FeaturePoint> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (labels[i] == s) out.push_back(pts[i]);
  }
  return out;
}

}  // namespace

void HmmParams::validate() const {
  if (std::abs(pi[0] + pi[1] - 1.0) > 1e-9 || pi[0] < 0.0 || pi[1] < 0.0) {
    throw Error("HMM initial distribution must be stochastic");
  }
  for (const auto& row : a) {
    if (std::abs(row[0] + row[1] - 1.0) > 1e-9 || row[0] < 0.0 || row[1] < 0.0) {
      throw Error("HMM transition rows must be stochastic");
    }
  }
  emissions[0].validate();
  emissions[1].validate();
}

std::uint64_t compute_digest(const HmmParams& p) {
  Digest h;
  for (double v : p.pi) h.add(v);
  for (const auto& row : p.a) {
    for (double v : row) h.add(v);
  }
  h.add(compute_digest(p.emissions[0]));
  h.add(compute_digest(p.emissions[1]));
  return h.value();
}

void HmmParams::refresh_digest() {
  for (auto& e : emissions) e.refresh_digest();
  model_digest = compute_digest(*this);
}

HmmParams quiet_channel_model(Micros slot_len_us) {
  HmmParams p;
  p.pi = {1.0, 0.0};
  p.a = {{{1.0, 0.0}, {0.0, 1.0}}};
  const double slot = static_cast<double>(slot_len_us);
  for (int s = 0; s < 2; ++s) {
    GmmParams g;
    g.weights = {1.0};
    g.means = {s == 0 ? FeaturePoint{slot, 0.0} : FeaturePoint{500.0, 100.0}};
    g.variances = {FeaturePoint{slot * slot * 0.01, 1.0}};
    g.feature_center = g.means[0];
    g.feature_scale = {slot * 0.1, 1.0};
    p.emissions[s] = g;
  }
  p.refresh_digest();
  return p;
}

HmmFitReport hmm_fit_detailed(std::span<const SlotFeatures> observations,
                              std::span<const ChannelState> labels, const HmmFitOptions& opt) {
  if (observations.empty()) throw Error("hmm_fit: observations must be non-empty");
  if (observations.size() != labels.size()) throw Error("hmm_fit: labels not aligned with observations");
  const auto pts = to_points(observations);

  HmmFitReport report;
  HmmParams& p = report.params;
  std::array<std::size_t, 2> class_n{};
  for (int s = 0; s < 2; ++s) {
    const auto state = static_cast<ChannelState>(s);
    const auto cls = class_points(pts, labels, state);
    if (cls.empty()) {
      throw Error(std::string("hmm_fit: no ") + to_string(state) + " slots in the labels");
    }
    class_n[s] = cls.size();
    const int m = std::max(1, std::min<int>(opt.components_per_state, static_cast<int>(cls.size() / 2)));
    GmmFitOptions gopt{m, derive_seed(opt.seed, {static_cast<std::uint64_t>(s)}), 1e-6, 200};
    p.emissions[s] = gmm_fit_points(cls, gopt).params;
  }
  const double total = static_cast<double>(pts.size());
  p.pi = {static_cast<double>(class_n[0]) / total, static_cast<double>(class_n[1]) / total};
  p.a = {{{0.5, 0.5}, {0.5, 0.5}}};

  const std::size_t n = pts.size();
  std::vector<double> gamma_s(n);
  double prev = kNegInf;
  for (int it = 0; it < opt.max_iter; ++it) {
    const auto em = emission_table(p, pts);
    const auto f = forward(p, em);
    const auto beta = backward(p, em, f);
    report.loglik.push_back(f.loglik);
    report.iterations = it + 1;

    std::array<std::array<double, 2>, 2> xi_sum{};
    for (std::size_t t = 0; t + 1 < n; ++t) {
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
          xi_sum[i][j] += f.alpha[t][i] * p.a[i][j] * em.e[t + 1][j] * beta[t + 1][j] /
                          f.scale[t + 1];
        }
      }
    }
    const std::array<double, 2> g0{f.alpha[0][0] * beta[0][0], f.alpha[0][1] * beta[0][1]};
    const double g0n = g0[0] + g0[1];
    p.pi = {g0[0] / g0n, g0[1] / g0n};
    for (int i = 0; i < 2; ++i) {
      const double row = xi_sum[i][0] + xi_sum[i][1];
      if (row > 0.0) p.a[i] = {xi_sum[i][0] / row, xi_sum[i][1] / row};
    }
    for (int s = 0; s < 2; ++s) {
      for (std::size_t t = 0; t < n; ++t) gamma_s[t] = f.alpha[t][s] * beta[t][s];
      gmm_em_step(p.emissions[s], pts, gamma_s);
    }

    if (prev != kNegInf && std::abs(f.loglik - prev) <= opt.tol * std::abs(prev)) {
      report.converged = true;
      break;
    }
    prev = f.loglik;
  }
  report.loglik.push_back(hmm_forward_loglik(p, std::span<const FeaturePoint>(pts)));
  p.refresh_digest();
  return report;
}

HmmParams hmm_fit(std::span<const SlotFeatures> observations, std::span<const ChannelState> labels,
                  double tol, int max_iter, std::uint64_t seed, int components_per_state) {
  return hmm_fit_detailed(observations, labels,
                          HmmFitOptions{tol, max_iter, seed, components_per_state})
      .params;
}

double hmm_forward_loglik(const HmmParams& p, std::span<const FeaturePoint> obs) {
  if (obs.empty()) throw Error("hmm_forward_loglik: observations must be non-empty");
  return forward(p, emission_table(p, obs)).loglik;
}

double hmm_forward_loglik(const HmmParams& p, std::span<const SlotFeatures> obs) {
  const auto pts = to_points(obs);
  return hmm_forward_loglik(p, std::span<const FeaturePoint>(pts));
}

std::vector<ChannelState> hmm_viterbi(const HmmParams& p, std::span<const FeaturePoint> obs) {
  if (obs.empty()) throw Error("hmm_viterbi: observations must be non-empty");
  const std::size_t n = obs.size();
  std::vector<std::array<int, 2>> back(n, {0, 0});
  std::array<double, 2> delta{};
  for (int s = 0; s < 2; ++s) delta[s] = safe_log(p.pi[s]) + gmm_log_density(p.emissions[s], obs[0]);
  for (std::size_t t = 1; t < n; ++t) {
    std::array<double, 2> next{};
    for (int j = 0; j < 2; ++j) {
      const double from_free = delta[0] + safe_log(p.a[0][j]);
      const double from_busy = delta[1] + safe_log(p.a[1][j]);
      // Strict comparison: equal scores keep the FREE predecessor.
      const int best = from_busy > from_free ? 1 : 0;
      back[t][j] = best;
      next[j] = std::max(from_free, from_busy) + gmm_log_density(p.emissions[j], obs[t]);
    }
    delta = next;
  }
  std::vector<ChannelState> path(n);
  int s = delta[1] > delta[0] ? 1 : 0;
  for (std::size_t t = n; t-- > 0;) {
    path[t] = static_cast<ChannelState>(s);
    s = back[t][s];
  }
  return path;
}

std::vector<ChannelState> hmm_viterbi(const HmmParams& p, std::span<const SlotFeatures> obs) {
  const auto pts = to_points(obs);
  return hmm_viterbi(p, std::span<const FeaturePoint>(pts));
}

PredictionList predict_white_spaces(const HmmParams& p, std::int64_t period_index,
                                    std::uint32_t horizon_slots) {
  if (horizon_slots < 1) throw Error("predict_white_spaces: horizon must be >= 1");
  PredictionList out;
  out.period_index = period_index;
  out.horizon_slots = horizon_slots;
  Rng rng(derive_seed(p.model_digest, {static_cast<std::uint64_t>(period_index)}));
  int s = rng.uniform() < p.pi[0] ? 0 : 1;
  for (std::uint32_t k = 0; k < horizon_slots; ++k) {
    if (s == 0) out.free_slots.push_back(k);
    s = rng.uniform() < p.a[s][0] ? 0 : 1;
  }
  return out;
}

double stationary_free_probability(const HmmParams& p) {
  const double to_busy = p.a[0][1];
  const double to_free = p.a[1][0];
  if (to_busy + to_free == 0.0) return p.pi[0];
  return to_free / (to_busy + to_free);
}

}  // namespace lucid
