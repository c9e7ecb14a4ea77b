#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "lucid/error.hpp"
#include "lucid/gmm.hpp"
#include "lucid/pareto.hpp"

using namespace lucid;
using fixtures::make_gmm;

namespace {

std::vector<FeaturePoint> two_blob_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<FeaturePoint> d;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 2 == 0) d.push_back({rng.normal(5000.0, 1.0), rng.normal(5.0, 1.0)});
    else d.push_back({rng.normal(500.0, 1.0), rng.normal(120.0, 1.0)});
  }
  return d;
}

}  // namespace

TEST_CASE("log density at the mean of one component") {
  const auto p = make_gmm({1.0}, {{300.0, 4.0}}, {{4.0, 9.0}});
  const double expect = std::log(1.0 / (2.0 * std::numbers::pi * 2.0 * 3.0));
  CHECK(gmm_log_density(p, FeaturePoint{300.0, 4.0}) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("density integrates to one (quadrature)") {
  const auto p = make_gmm({0.3, 0.7}, {{0.0, 0.0}, {2.0, -1.0}}, {{1.0, 1.0}, {0.5, 2.0}});
  const double h = 0.02;
  double total = 0.0;
  for (double x = -10.0; x <= 12.0; x += h) {
    for (double y = -12.0; y <= 10.0; y += h) total += std::exp(gmm_log_density(p, FeaturePoint{x, y})) * h * h;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("mixture density bounds each weighted component") {
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    const auto p = fixtures::random_gmm(rng, 1 + static_cast<int>(rng.index(5)));
    const FeaturePoint x{rng.uniform(0.0, 60000.0), rng.uniform(0.0, 200.0)};
    const double mix = gmm_log_density(p, x);
    CHECK(std::isfinite(mix));
    for (int k = 0; k < p.n_components(); ++k) {
      const auto single = make_gmm({1.0}, {p.means[k]}, {p.variances[k]});
      CHECK(mix >= std::log(p.weights[k]) + gmm_log_density(single, x) - 1e-12);
    }
  }
}

TEST_CASE("fit: M=1 reproduces sample moments") {
  Rng rng(11);
  std::vector<FeaturePoint> d;
  for (int i = 0; i < 500; ++i) d.push_back({rng.normal(2000.0, 300.0), rng.normal(40.0, 6.0)});
  const auto r = gmm_fit_points(d, {1, 3, 1e-9, 50});
  double m0 = 0, m1 = 0;
  for (auto& x : d) {
    m0 += x[0];
    m1 += x[1];
  }
  m0 /= d.size();
  m1 /= d.size();
  double v0 = 0, v1 = 0;
  for (auto& x : d) {
    v0 += (x[0] - m0) * (x[0] - m0);
    v1 += (x[1] - m1) * (x[1] - m1);
  }
  v0 /= d.size();
  v1 /= d.size();
  CHECK(r.params.means[0][0] == doctest::Approx(m0).epsilon(1e-9));
  CHECK(r.params.means[0][1] == doctest::Approx(m1).epsilon(1e-9));
  CHECK(r.params.variances[0][0] == doctest::Approx(v0).epsilon(1e-6));
  CHECK(r.params.variances[0][1] == doctest::Approx(v1).epsilon(1e-6));
}

TEST_CASE("fit: insufficient data") {
  std::vector<SlotFeatures> one = {{0, 10.0, 1}};
  CHECK_THROWS_AS(gmm_fit(one, 2, 1), Error);
  CHECK_THROWS_AS(gmm_fit(one, 0, 1), Error);
}

TEST_CASE("fit: EM log-likelihood is monotone") {
  Rng rng(99);
  for (int rep = 0; rep < 15; ++rep) {
    const int m = 1 + static_cast<int>(rng.index(7));
    const auto truth = fixtures::random_gmm(rng, 1 + static_cast<int>(rng.index(4)));
    const auto sample = gmm_sample(truth, 50 + rng.index(800), rng.bits());
    const auto pts = to_points(sample);
    if (pts.size() < static_cast<std::size_t>(2 * m)) continue;
    const auto r = gmm_fit_points(pts, {m, rng.bits(), 1e-8, 150});
    for (std::size_t i = 1; i < r.loglik.size(); ++i) CHECK(r.loglik[i] >= r.loglik[i - 1] - 1e-9);
    CHECK_NOTHROW(r.params.validate());
  }
}

TEST_CASE("fit: recovers two separated components") {
  const auto d = two_blob_data(10000, 4);
  const auto r = gmm_fit_points(d, {2, 17, 1e-8, 300});
  const std::vector<FeaturePoint> truth = {{5000.0, 5.0}, {500.0, 120.0}};
  const auto match = fixtures::match_components(r.params.means, truth);
  for (int i = 0; i < 2; ++i) {
    const auto& est = r.params.means[static_cast<std::size_t>(match[i])];
    CHECK(std::abs(est[0] - truth[i][0]) / truth[i][0] < 0.05);
    CHECK(std::abs(est[1] - truth[i][1]) / truth[i][1] < 0.05);
    CHECK(std::abs(r.params.weights[static_cast<std::size_t>(match[i])] - 0.5) < 0.05);
  }
}

TEST_CASE("fit: deterministic given seed") {
  const auto d = two_blob_data(2000, 8);
  const auto a = gmm_fit_points(d, {4, 3, 1e-6, 100});
  const auto b = gmm_fit_points(d, {4, 3, 1e-6, 100});
  CHECK(a.params == b.params);
}

TEST_CASE("fit: constant data does not collapse") {
  std::vector<FeaturePoint> d(40, FeaturePoint{100000.0, 0.0});
  const auto r = gmm_fit_points(d, {3, 1, 1e-6, 50});
  CHECK_NOTHROW(r.params.validate());
  CHECK(std::isfinite(gmm_log_density(r.params, d[0])));
}

TEST_CASE("sampling") {
  const auto p = make_gmm({1.0}, {{3000.0, 50.0}}, {{250000.0, 25.0}});
  CHECK(gmm_sample(p, 0, 1).empty());
  const auto s = gmm_sample(p, 100000, 2);
  double mi = 0, mc = 0;
  for (auto& f : s) {
    mi += f.mean_iat_us;
    mc += f.count;
    CHECK(f.mean_iat_us >= 0.0);
  }
  CHECK(mi / s.size() == doctest::Approx(3000.0).epsilon(0.02));
  CHECK(mc / s.size() == doctest::Approx(50.0).epsilon(0.02));
  CHECK(gmm_sample(p, 100, 9) == gmm_sample(p, 100, 9));
}

TEST_CASE("generative estimate on FREE data") {
  Rng rng(3);
  std::vector<SlotFeatures> d;
  for (std::uint64_t i = 0; i < 400; ++i) {
    d.push_back({i, 100000.0, static_cast<std::uint32_t>(rng.index(2))});
  }
  const auto p = gmm_fit(d, 2, 1);
  const auto est = gmm_estimate_states(p, 1000, 5, Thresholds{});
  const auto free = std::count(est.begin(), est.end(), ChannelState::kFree);
  CHECK(free >= 950);
  CHECK(gmm_estimate_states(p, 0, 5, Thresholds{}).empty());
  CHECK(gmm_estimate_states(p, 50, 5, Thresholds{}) == gmm_estimate_states(p, 50, 5, Thresholds{}));
}

TEST_CASE("roc auc") {
  using S = ChannelState;
  const std::vector<S> truth = {S::kFree, S::kFree, S::kBusy, S::kBusy};
  CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, truth) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, truth) == 0.5);
  CHECK(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, truth) == 0.0);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<S>{S::kFree, S::kFree}), Error);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1}, truth), Error);
}

TEST_CASE("component selection on a separable trace") {
  const auto trace = fixtures::two_regime_trace(1500, 21);
  const Thresholds th;
  const auto f = extract_slot_features(trace, th.slot_len_us);
  const auto truth = label_channel_states(f, th);
  const auto sel = select_component_count(f, truth, 3, 5, 1, th);
  CHECK(sel.components == 3);
  REQUIRE(sel.auc_per_m.size() == 3);
  for (auto& [m, auc] : sel.auc_per_m) CHECK(auc >= 0.99);
  const auto single = select_component_count(f, truth, 6, 6, 1, th);
  CHECK(single.components == 6);
}

TEST_CASE("slot-aligned classification on the two-regime trace") {
  const auto trace = fixtures::two_regime_trace(2000, 5);
  const Thresholds th;
  const auto f = extract_slot_features(trace, th.slot_len_us);
  const auto truth = label_channel_states(f, th);
  const auto p = gmm_fit(f, 7, 1);
  const auto est = gmm_classify_states(p, f, th);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < est.size(); ++i) agree += est[i] == truth[i];
  CHECK(static_cast<double>(agree) / est.size() >= 0.95);
}

TEST_CASE("pareto baseline") {
  std::vector<double> ones(100, 1.0);
  CHECK_THROWS_AS(pareto_fit(ones), Error);
  const auto dist = IatDistribution::pareto(2.0, 100.0);
  Rng rng(12);
  std::vector<double> x;
  for (int i = 0; i < 10000; ++i) x.push_back(dist.sample(rng));
  const auto fit = pareto_fit(x);
  CHECK(fit.scale_us == *std::min_element(x.begin(), x.end()));
  CHECK(std::abs(fit.shape - 2.0) / 2.0 < 0.10);
  ArrivalTrace t;
  t.arrivals = {5};
  t.duration_us = 5;
  CHECK_THROWS_AS(pareto_baseline_fit(t), Error);
  const auto st = pareto_baseline_states({1.2, 200.0}, 30, 4, Thresholds{});
  CHECK(st.size() == 30);
}
