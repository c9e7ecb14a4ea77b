#include "lucid/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "lucid/digest.hpp"
#include "lucid/error.hpp"
#include "lucid/rng.hpp"

namespace lucid {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double component_log_pdf(const FeaturePoint& mean, const FeaturePoint& var,
                         const FeaturePoint& x) {
  double acc = -kLog2Pi;
  for (int d = 0; d < 2; ++d) {
    const double diff = x[d] - mean[d];
    acc -= 0.5 * (std::log(var[d]) + diff * diff / var[d]);
  }
  return acc;
}

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Per-component log(w_k) + log N(x; mu_k, var_k).
void joint_log(const GmmParams& p, const FeaturePoint& x, std::vector<double>& out) {
  const int m = p.n_components();
  out.resize(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) {
    const double w = p.weights[k];
    out[k] = w > 0.0 ? std::log(w) + component_log_pdf(p.means[k], p.variances[k], x) : kNegInf;
  }
}

// k-means++ seeding; ties go to the lowest sample index.
std::vector<std::size_t> kmeanspp(std::span<const FeaturePoint> data, int m, Rng& rng) {
  const std::size_t n = data.size();
  std::vector<std::size_t> centers;
  centers.push_back(static_cast<std::size_t>(rng.index(n)));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < m) {
    const auto& c = data[centers.back()];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = data[i][0] - c[0];
      const double dy = data[i][1] - c[1];
      d2[i] = std::min(d2[i], dx * dx + dy * dy);
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      // Fewer distinct points than components: reuse the lowest unused index.
      while (std::find(centers.begin(), centers.end(), pick) != centers.end() && pick + 1 < n) {
        ++pick;
      }
    }
    centers.push_back(pick);
  }
  return centers;
}

}  // namespace

FeaturePoint to_point(const SlotFeatures& f) {
  return {f.mean_iat_us, static_cast<double>(f.count)};
}

std::vector<FeaturePoint> to_points(std::span<const SlotFeatures> features) {
  std::vector<FeaturePoint> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(to_point(f));
  return out;
}

FeaturePoint GmmParams::variance_floor() const {
  return {kVarianceFloor * feature_scale[0] * feature_scale[0],
          kVarianceFloor * feature_scale[1] * feature_scale[1]};
}

void GmmParams::validate() const {
  const auto m = weights.size();
  if (m == 0) throw Error("GMM needs at least one component");
  if (means.size() != m || variances.size() != m) throw Error("GMM parameter arrays disagree in size");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error("GMM weights must be >= 0");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("GMM weights must sum to 1");
  const auto floor = variance_floor();
  for (std::size_t k = 0; k < m; ++k) {
    for (int d = 0; d < 2; ++d) {
      if (!std::isfinite(means[k][d])) throw Error("GMM mean is not finite");
      // Allow rounding slack when comparing against the floor.
      if (!(variances[k][d] >= floor[d] * (1.0 - 1e-12))) {
        throw Error("GMM variance below the floor");
      }
    }
  }
  for (int d = 0; d < 2; ++d) {
    if (!(feature_scale[d] > 0.0)) throw Error("GMM feature scale must be > 0");
  }
}

std::uint64_t compute_digest(const GmmParams& p) {
  Digest h;
  h.add(static_cast<std::uint64_t>(p.weights.size()));
  for (std::size_t k = 0; k < p.weights.size(); ++k) {
    h.add(p.weights[k]);
    for (int d = 0; d < 2; ++d) {
      h.add(p.means[k][d]);
      h.add(p.variances[k][d]);
    }
  }
  for (int d = 0; d < 2; ++d) {
    h.add(p.feature_center[d]);
    h.add(p.feature_scale[d]);
  }
  return h.value();
}

void GmmParams::refresh_digest() { model_digest = compute_digest(*this); }

double gmm_log_density(const GmmParams& p, const FeaturePoint& x) {
  std::vector<double> lp;
  joint_log(p, x, lp);
  return log_sum_exp(lp);
}

double gmm_log_density(const GmmParams& p, const SlotFeatures& f) {
  return gmm_log_density(p, to_point(f));
}

double gmm_total_loglik(const GmmParams& p, std::span<const FeaturePoint> data) {
  std::vector<double> lp;
  double total = 0.0;
  for (const auto& x : data) {
    joint_log(p, x, lp);
    total += log_sum_exp(lp);
  }
  return total;
}

std::vector<double> gmm_posterior(const GmmParams& p, const FeaturePoint& x) {
  std::vector<double> lp;
  joint_log(p, x, lp);
  const double norm = log_sum_exp(lp);
  for (double& v : lp) v = std::exp(v - norm);
  return lp;
}

double gmm_em_step(GmmParams& p, std::span<const FeaturePoint> data,
                   std::span<const double> sample_weights) {
  const int m = p.n_components();
  const bool weighted = !sample_weights.empty();
  std::vector<double> nk(m, 0.0);
  std::vector<FeaturePoint> sum(m, {0.0, 0.0});
  std::vector<FeaturePoint> sum_sq(m, {0.0, 0.0});
  std::vector<double> lp;
  double loglik = 0.0;

  // Second moments are accumulated around the current means to limit
  // cancellation when raw feature values are large.
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double wi = weighted ? sample_weights[i] : 1.0;
    if (wi == 0.0) continue;
    joint_log(p, data[i], lp);
    const double norm = log_sum_exp(lp);
    loglik += wi * norm;
    for (int k = 0; k < m; ++k) {
      if (lp[k] == kNegInf) continue;
      const double r = wi * std::exp(lp[k] - norm);
      nk[k] += r;
      for (int d = 0; d < 2; ++d) {
        const double c = data[i][d] - p.means[k][d];
        sum[k][d] += r * c;
        sum_sq[k][d] += r * c * c;
      }
    }
  }

  const double total = std::accumulate(nk.begin(), nk.end(), 0.0);
  if (!(total > 0.0)) return loglik;
  const auto floor = p.variance_floor();
  for (int k = 0; k < m; ++k) {
    if (!(nk[k] > 1e-300)) {
      p.weights[k] = 0.0;
      continue;
    }
    p.weights[k] = nk[k] / total;
    for (int d = 0; d < 2; ++d) {
      const double shift = sum[k][d] / nk[k];
      const double var = sum_sq[k][d] / nk[k] - shift * shift;
      p.means[k][d] += shift;
      p.variances[k][d] = std::max(var, floor[d]);
    }
  }
  // Exact renormalization keeps the stochastic-vector invariant tight.
  const double wsum = std::accumulate(p.weights.begin(), p.weights.end(), 0.0);
  for (double& w : p.weights) w /= wsum;
  return loglik;
}

GmmFitReport gmm_fit_points(std::span<const FeaturePoint> data, const GmmFitOptions& opt) {
  const int m = opt.components;
  if (m < 1) throw Error("gmm_fit: component count must be >= 1");
  if (data.size() < 2 * static_cast<std::size_t>(m)) {
    throw Error("gmm_fit: need at least " + std::to_string(2 * m) + " samples for " +
                std::to_string(m) + " components, got " + std::to_string(data.size()));
  }
  const auto n = static_cast<double>(data.size());

  FeaturePoint center{0.0, 0.0}, scale{1.0, 1.0};
  for (int d = 0; d < 2; ++d) {
    double s = 0.0;
    for (const auto& x : data) s += x[d];
    center[d] = s / n;
    double ss = 0.0;
    for (const auto& x : data) ss += (x[d] - center[d]) * (x[d] - center[d]);
    const double sd = std::sqrt(ss / n);
    scale[d] = sd > 0.0 ? sd : 1.0;
  }
  std::vector<FeaturePoint> z(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int d = 0; d < 2; ++d) z[i][d] = (data[i][d] - center[d]) / scale[d];
  }

  Rng rng(opt.seed);
  const auto centers = kmeanspp(z, m, rng);
  GmmParams work;
  work.weights.assign(m, 1.0 / m);
  work.variances.assign(m, {1.0, 1.0});  // standardized data has unit variance
  for (int k = 0; k < m; ++k) work.means.push_back(z[centers[k]]);
  for (auto& v : work.variances) {
    for (int d = 0; d < 2; ++d) v[d] = std::max(v[d], kVarianceFloor);
  }
  GmmFitReport report;
  double prev = kNegInf;
  for (int it = 0; it < opt.max_iter; ++it) {
    const double ll = gmm_em_step(work, z, {});
    report.loglik.push_back(ll);
    report.iterations = it + 1;
    if (prev != kNegInf && std::abs(ll - prev) <= opt.tol * std::abs(prev)) {
      report.converged = true;
      break;
    }
    prev = ll;
  }
  report.loglik.push_back(gmm_total_loglik(work, z));

  // Map back to raw units; log-likelihoods shift by the Jacobian.
  const double log_jacobian = std::log(scale[0]) + std::log(scale[1]);
  for (double& ll : report.loglik) ll -= n * log_jacobian;
  GmmParams& out = report.params;
  out.weights = work.weights;
  out.feature_center = center;
  out.feature_scale = scale;
  for (int k = 0; k < m; ++k) {
    FeaturePoint mu{}, var{};
    for (int d = 0; d < 2; ++d) {
      mu[d] = work.means[k][d] * scale[d] + center[d];
      var[d] = work.variances[k][d] * scale[d] * scale[d];
    }
    out.means.push_back(mu);
    out.variances.push_back(var);
  }
  out.refresh_digest();
  return report;
}

GmmParams gmm_fit(std::span<const SlotFeatures> data, int components, std::uint64_t seed,
                  double tol, int max_iter) {
  const auto pts = to_points(data);
  return gmm_fit_points(pts, GmmFitOptions{components, seed, tol, max_iter}).params;
}

std::vector<SlotFeatures> gmm_sample(const GmmParams& p, std::size_t n, std::uint64_t seed) {
  std::vector<SlotFeatures> out;
  out.reserve(n);
  std::vector<double> cdf(p.weights.size());
  std::partial_sum(p.weights.begin(), p.weights.end(), cdf.begin());
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * cdf.back();
    auto k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    k = std::min(k, cdf.size() - 1);
    const double iat = rng.normal(p.means[k][0], std::sqrt(p.variances[k][0]));
    const double count = rng.normal(p.means[k][1], std::sqrt(p.variances[k][1]));
    SlotFeatures f;
    f.slot_index = i;
    f.mean_iat_us = std::max(0.0, iat);
    f.count = static_cast<std::uint32_t>(std::llround(std::max(0.0, count)));
    out.push_back(f);
  }
  return out;
}

std::vector<ChannelState> gmm_estimate_states(const GmmParams& p, std::size_t n_slots,
                                              std::uint64_t seed, const Thresholds& th) {
  const auto sampled = gmm_sample(p, n_slots, seed);
  return label_channel_states(sampled, th);
}

std::vector<ChannelState> component_states(const GmmParams& p, const Thresholds& th) {
  std::vector<ChannelState> out;
  for (const auto& mu : p.means) {
    const bool busy = mu[0] <= static_cast<double>(th.th_iat_us) &&
                      mu[1] >= static_cast<double>(th.th_count);
    out.push_back(busy ? ChannelState::kBusy : ChannelState::kFree);
  }
  return out;
}

double busy_posterior(const GmmParams& p, std::span<const ChannelState> comp_states,
                      const FeaturePoint& x) {
  const auto post = gmm_posterior(p, x);
  double busy = 0.0;
  for (std::size_t k = 0; k < post.size(); ++k) {
    if (comp_states[k] == ChannelState::kBusy) busy += post[k];
  }
  return busy;
}

std::vector<ChannelState> gmm_classify_states(const GmmParams& p,
                                              std::span<const SlotFeatures> observed,
                                              const Thresholds& th) {
  const auto comp = component_states(p, th);
  std::vector<ChannelState> out;
  out.reserve(observed.size());
  for (const auto& f : observed) {
    out.push_back(busy_posterior(p, comp, to_point(f)) >= 0.5 ? ChannelState::kBusy
                                                              : ChannelState::kFree);
  }
  return out;
}

double roc_auc(std::span<const double> scores, std::span<const ChannelState> truth) {
  if (scores.size() != truth.size()) throw Error("roc_auc: scores and truth differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with midranks for tied scores.
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (truth[order[k]] == ChannelState::kBusy) {
        rank_sum_pos += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = truth.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error("roc_auc: truth must contain both FREE and BUSY");
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

ComponentSelection select_component_count(std::span<const SlotFeatures> data,
                                          std::span<const ChannelState> truth, int m_min,
                                          int m_max, std::uint64_t seed, const Thresholds& th) {
  if (data.size() != truth.size()) throw Error("select_component_count: truth not aligned with data");
  if (m_min < 1 || m_max < m_min) throw Error("select_component_count: invalid component range");
  const auto pts = to_points(data);
  ComponentSelection sel;
  double best = -1.0;
  for (int m = m_min; m <= m_max; ++m) {
    const auto fit = gmm_fit_points(pts, GmmFitOptions{m, seed, 1e-6, 200});
    const auto comp = component_states(fit.params, th);
    std::vector<double> scores;
    scores.reserve(pts.size());
    for (const auto& x : pts) scores.push_back(busy_posterior(fit.params, comp, x));
    const double auc = roc_auc(scores, truth);
    sel.auc_per_m.emplace_back(m, auc);
    best = std::max(best, auc);
  }
  for (const auto& [m, auc] : sel.auc_per_m) {
    if (auc >= best - 0.001) {
      sel.components = m;
      break;
    }
  }
  return sel;
}

}  // namespace lucid
