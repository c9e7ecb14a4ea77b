#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lucid/gmm.hpp"
#include "lucid/trace.hpp"

namespace lucid {

/// Two-state {FREE, BUSY} hidden Markov model. State index 0 is FREE and
/// index 1 is BUSY throughout; emissions are state-conditional mixtures over
/// the feature plane.
struct HmmParams {
  std::array<double, 2> pi{0.5, 0.5};
  std::array<std::array<double, 2>, 2> a{{{0.5, 0.5}, {0.5, 0.5}}};
  std::array<GmmParams, 2> emissions;
  std::uint64_t model_digest = 0;

  void validate() const;
  void refresh_digest();

  bool operator==(const HmmParams&) const = default;
};

std::uint64_t compute_digest(const HmmParams& p);

/// Model for a channel that never sees interference: starts FREE and stays.
HmmParams quiet_channel_model(Micros slot_len_us);

struct HmmFitOptions {
  double tol = 1e-6;
  int max_iter = 100;
  std::uint64_t seed = 1;
  int components_per_state = 3;
};

struct HmmFitReport {
  HmmParams params;
  std::vector<double> loglik;  // per Baum-Welch iteration, plus the final value
  int iterations = 0;
  bool converged = false;
};

HmmFitReport hmm_fit_detailed(std::span<const SlotFeatures> observations,
                              std::span<const ChannelState> labels, const HmmFitOptions& opt);
HmmParams hmm_fit(std::span<const SlotFeatures> observations, std::span<const ChannelState> labels,
                  double tol, int max_iter, std::uint64_t seed, int components_per_state = 3);

/// log P(obs | params) via the scaled forward recursion.
double hmm_forward_loglik(const HmmParams& p, std::span<const SlotFeatures> obs);
double hmm_forward_loglik(const HmmParams& p, std::span<const FeaturePoint> obs);

/// Most likely state path; ties resolve toward FREE.
std::vector<ChannelState> hmm_viterbi(const HmmParams& p, std::span<const SlotFeatures> obs);
std::vector<ChannelState> hmm_viterbi(const HmmParams& p, std::span<const FeaturePoint> obs);

struct PredictionList {
  std::int64_t period_index = 0;
  std::uint32_t horizon_slots = 0;
  std::vector<std::uint32_t> free_slots;

  bool operator==(const PredictionList&) const = default;
};

/// Seeded simulation of the hidden chain for one data period. The seed is
/// derived from (model digest, period index) only, so every holder of the
/// same model computes the same list.
PredictionList predict_white_spaces(const HmmParams& p, std::int64_t period_index,
                                    std::uint32_t horizon_slots);

/// Stationary probability of FREE for the transition matrix.
double stationary_free_probability(const HmmParams& p);

}  // namespace lucid
