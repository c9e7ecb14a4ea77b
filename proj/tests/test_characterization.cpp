#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "lucid/characterization.hpp"
#include "lucid/error.hpp"

using namespace lucid;

namespace {

std::vector<SlotFeatures> blob(std::size_t n, double iat, double count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SlotFeatures> v;
  for (std::size_t i = 0; i < n; ++i) {
    v.push_back({i, std::max(0.0, rng.normal(iat, iat * 0.05)),
                 static_cast<std::uint32_t>(std::max(0.0, std::round(rng.normal(count, 2.0))))});
  }
  return v;
}

WindowSegmentation seg_of(std::vector<double> scores, std::vector<Regime> labels) {
  WindowSegmentation s;
  s.nclr_scores = std::move(scores);
  s.labels = std::move(labels);
  for (std::size_t i = 0; i < s.labels.size(); ++i) s.start_us.push_back(i);
  return s;
}

}  // namespace

TEST_CASE("histogram mass conservation") {
  const auto trace = fixtures::two_regime_trace(300, 3);
  const auto f = extract_slot_features(trace, 100000);
  const auto h = build_histogram(f, 100000);
  CHECK(h.total() == doctest::Approx(1.0).epsilon(1e-9));
  for (std::size_t i = 1; i < h.edges_iat.size(); ++i) CHECK(h.edges_iat[i] > h.edges_iat[i - 1]);
  for (auto [a, b] : {std::pair{2, 3}, std::pair{7, 4}, std::pair{50, 30}}) {
    const auto r = rebin(h, a, b);
    CHECK(std::abs(r.total() - 1.0) < 1e-9);
  }
  std::ostringstream os;
  write_histogram_csv(h, os);
  CHECK(os.str().rfind("iat_lo_us,iat_hi_us,count_lo,count_hi,mass\n", 0) == 0);
}

TEST_CASE("nclr: self, symmetry, separation") {
  const auto a = blob(300, 500.0, 120.0, 1);
  const auto b = blob(300, 50000.0, 2.0, 2);
  const auto ma = fit_window_model(a, 3, 1);
  const auto mb = fit_window_model(b, 3, 1);
  CHECK(nclr_score(a, a, ma, ma) == 0.0);
  CHECK(nclr_score(a, b, ma, mb) == nclr_score(b, a, mb, ma));
  CHECK(nclr_score(a, b, ma, mb) > 0.5);
  CHECK_THROWS_AS(nclr_score({}, b, ma, mb), Error);
}

TEST_CASE("segmentation of alternating regimes") {
  // 6 windows of 60 slots each, heavy on even windows.
  constexpr Micros kSlot = 100000;
  constexpr Micros kWin = 60 * kSlot;
  ArrivalTrace t;
  t.duration_us = 6 * kWin;
  Rng rng(8);
  for (int w = 0; w < 6; ++w) {
    for (int s = 0; s < 60; ++s) {
      const Micros base = w * kWin + s * kSlot;
      if (w % 2 == 0) {
        for (int i = 0; i < 120; ++i) t.arrivals.push_back(base + 1000 + i * 500 + rng.index(200));
      } else {
        t.arrivals.push_back(base + 10000 + rng.index(1000));
        t.arrivals.push_back(base + 60000 + rng.index(1000));
      }
    }
  }
  Thresholds th;
  const auto windows = split_windows(t, kSlot, kWin);
  SegmentationOptions opt;
  opt.window_len_us = kWin;
  const auto seg = segment_windows(t, windows[0], th, opt);
  REQUIRE(seg.labels.size() == 6);
  CHECK(seg.nclr_scores[0] == 0.0);
  for (int w = 0; w < 6; ++w) {
    CHECK(seg.labels[w] == (w % 2 == 0 ? Regime::kPeak : Regime::kOffPeak));
    CHECK(seg.labels[w] == label_from_score(seg.nclr_scores[w]));
  }
  CHECK(segment_windows(t, windows[0], th, opt).labels == seg.labels);
  ArrivalTrace short_trace;
  short_trace.duration_us = kWin - 1;
  CHECK_THROWS_AS(segment_windows(short_trace, windows[0], th, opt), Error);
}

TEST_CASE("empty windows against a busy reference are off-peak") {
  constexpr Micros kSlot = 100000;
  ArrivalTrace t;
  t.duration_us = 2 * 20 * kSlot;
  SegmentationOptions opt;
  opt.window_len_us = 20 * kSlot;
  const auto ref = blob(20, 500.0, 120.0, 4);
  const auto seg = segment_windows(t, ref, Thresholds{}, opt);
  for (auto l : seg.labels) CHECK(l == Regime::kOffPeak);
}

TEST_CASE("training window selection") {
  using R = Regime;
  auto s = seg_of({0.1, 0.6, 0.2, 0.8, 0.3}, {R::kPeak, R::kOffPeak, R::kPeak, R::kOffPeak, R::kPeak});
  const auto [peak, off] = select_training_windows(s);
  CHECK(peak == 2);
  CHECK(off == 1);
  auto only_peak = seg_of({0.1, 0.2}, {R::kPeak, R::kPeak});
  try {
    select_training_windows(only_peak);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "OFFPEAK class empty");
  }
}

TEST_CASE("segmentation csv") {
  auto s = seg_of({0.25, 1.5}, {Regime::kPeak, Regime::kOffPeak});
  std::ostringstream os;
  write_segmentation_csv(s, os);
  CHECK(os.str() == "window_index,start_us,nclr,label\n0,0,0.25,PEAK\n1,1,1.5,OFFPEAK\n");
}
