#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lucid/trace.hpp"

namespace lucid {

/// A point in the (mean IAT [us], arrival count) feature plane.
using FeaturePoint = std::array<double, 2>;

FeaturePoint to_point(const SlotFeatures& f);
std::vector<FeaturePoint> to_points(std::span<const SlotFeatures> features);

/// Variance floor, in standardized feature units.
inline constexpr double kVarianceFloor = 1e-6;

/// Diagonal-covariance Gaussian mixture over the feature plane.
///
/// Means and variances are stored in raw feature units. `feature_center` and
/// `feature_scale` record the z-score transform used during training; the
/// variance floor is expressed in those standardized units.
struct GmmParams {
  std::vector<double> weights;
  std::vector<FeaturePoint> means;
  std::vector<FeaturePoint> variances;
  FeaturePoint feature_center{0.0, 0.0};
  FeaturePoint feature_scale{1.0, 1.0};
  std::uint64_t model_digest = 0;

  int n_components() const { return static_cast<int>(weights.size()); }
  FeaturePoint variance_floor() const;

  /// Throws lucid::Error when the parameters are not a valid mixture.
  void validate() const;
  void refresh_digest();

  bool operator==(const GmmParams&) const = default;
};

std::uint64_t compute_digest(const GmmParams& p);

struct GmmFitReport {
  GmmParams params;
  /// Total log-likelihood at the start of every EM iteration plus the final one.
  std::vector<double> loglik;
  int iterations = 0;
  bool converged = false;
};

struct GmmFitOptions {
  int components = 7;
  std::uint64_t seed = 1;
  double tol = 1e-6;
  int max_iter = 200;
};

/// Component count used when nothing else is specified.
inline constexpr int kDefaultComponents = 7;

GmmFitReport gmm_fit_points(std::span<const FeaturePoint> data, const GmmFitOptions& opt);
GmmParams gmm_fit(std::span<const SlotFeatures> data, int components, std::uint64_t seed,
                  double tol = 1e-6, int max_iter = 200);

double gmm_log_density(const GmmParams& p, const FeaturePoint& x);
double gmm_log_density(const GmmParams& p, const SlotFeatures& f);
/// Sum of log densities over all points.
double gmm_total_loglik(const GmmParams& p, std::span<const FeaturePoint> data);

/// Per-component posterior responsibilities for one point.
std::vector<double> gmm_posterior(const GmmParams& p, const FeaturePoint& x);

/// One weighted EM iteration in raw units. Returns the weighted
/// log-likelihood of `p` (before the update); `p` is replaced by the update.
double gmm_em_step(GmmParams& p, std::span<const FeaturePoint> data,
                   std::span<const double> sample_weights);

std::vector<SlotFeatures> gmm_sample(const GmmParams& p, std::size_t n, std::uint64_t seed);

/// Generative estimate: sample n_slots feature pairs and label them.
std::vector<ChannelState> gmm_estimate_states(const GmmParams& p, std::size_t n_slots,
                                              std::uint64_t seed, const Thresholds& th);

/// Threshold-rule label of every component mean.
std::vector<ChannelState> component_states(const GmmParams& p, const Thresholds& th);

/// Posterior mass of the components whose means label BUSY.
double busy_posterior(const GmmParams& p, std::span<const ChannelState> comp_states,
                      const FeaturePoint& x);

/// Slot-aligned estimate: each observed slot is labeled BUSY when the
/// posterior mass of BUSY-labelled components is at least one half.
std::vector<ChannelState> gmm_classify_states(const GmmParams& p,
                                              std::span<const SlotFeatures> observed,
                                              const Thresholds& th);

/// Area under the ROC curve ranking BUSY above FREE; ties count one half.
double roc_auc(std::span<const double> scores, std::span<const ChannelState> truth);

struct ComponentSelection {
  int components = 0;
  std::vector<std::pair<int, double>> auc_per_m;
};

ComponentSelection select_component_count(std::span<const SlotFeatures> data,
                                          std::span<const ChannelState> truth, int m_min,
                                          int m_max, std::uint64_t seed, const Thresholds& th);

}  // namespace lucid
