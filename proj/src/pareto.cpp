#include "lucid/pareto.hpp"

#include <algorithm>
#include <cmath>

#include "lucid/error.hpp"

namespace lucid {

ParetoParams pareto_fit(std::span<const double> iats) {
  if (iats.empty()) throw Error("pareto fit needs at least one inter-arrival time");
  const double scale = *std::min_element(iats.begin(), iats.end());
  if (!(scale > 0.0)) throw Error("pareto fit needs strictly positive inter-arrival times");
  double log_sum = 0.0;
  for (double x : iats) log_sum += std::log(x / scale);
  if (!(log_sum > 0.0)) {
    throw Error("pareto fit is degenerate: all inter-arrival times are equal (shape unbounded)");
  }
  return {static_cast<double>(iats.size()) / log_sum, scale};
}

ParetoParams pareto_baseline_fit(const ArrivalTrace& trace) {
  if (trace.arrivals.size() < 2) throw Error("pareto baseline needs at least 2 arrivals");
  const auto iats = inter_arrival_times(trace);
  return pareto_fit(iats);
}

std::vector<ChannelState> pareto_baseline_states(const ParetoParams& params, std::size_t n_slots,
                                                 std::uint64_t seed, const Thresholds& th) {
  if (n_slots == 0) return {};
  const auto dist = IatDistribution::pareto(params.shape, params.scale_us);
  const Micros duration = static_cast<Micros>(n_slots) * th.slot_len_us;
  auto trace = synthesize_trace(dist, duration, seed);
  auto features = extract_slot_features(trace, th.slot_len_us);
  features.resize(n_slots);  // drops the slot opened by an arrival exactly at the end
  return label_channel_states(features, th);
}

}  // namespace lucid
