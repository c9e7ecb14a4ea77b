#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lucid/trace.hpp"

namespace lucid {

// Baseline estimator: a Pareto law fitted to the inter-arrival times.

struct ParetoParams {
  double shape = 0.0;
  double scale_us = 0.0;
};

/// Maximum-likelihood fit: scale = min IAT, shape = n / sum(log(x / scale)).
ParetoParams pareto_fit(std::span<const double> iats);
ParetoParams pareto_baseline_fit(const ArrivalTrace& trace);

/// Synthesizes a trace from the fitted law and labels its slots.
std::vector<ChannelState> pareto_baseline_states(const ParetoParams& params, std::size_t n_slots,
                                                 std::uint64_t seed, const Thresholds& th);

}  // namespace lucid
