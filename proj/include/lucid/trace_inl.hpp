#pragma once

#include <algorithm>
#include <cmath>
#include <iterator>
#include <type_traits>

namespace lucid {

template <class Gen>
double IatDistribution::sample(Gen& rng) const {
  return std::visit(
      [&](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, ExponentialIat>) {
          return rng.exponential(d.rate_per_us);
        } else if constexpr (std::is_same_v<T, ParetoIat>) {
          return d.scale_us / std::pow(rng.uniform_open0(), 1.0 / d.shape);
        } else {
          const double u = rng.uniform();
          auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
          auto i = static_cast<std::size_t>(std::distance(cdf_.begin(), it));
          return d.support_us[std::min(i, d.support_us.size() - 1)];
        }
      },
      kind_);
}

}  // namespace lucid
