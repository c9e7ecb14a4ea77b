#include <doctest.h>

#include <numeric>
#include <sstream>

#include "lucid/error.hpp"
#include "lucid/trace.hpp"

using namespace lucid;

namespace {

ArrivalTrace parse(const std::string& s) {
  std::istringstream in(s);
  return ingest_trace(in);
}

}  // namespace

TEST_CASE("ingest: plain lines") {
  const auto t = parse("0\n8512\n100000");
  CHECK(t.arrivals == std::vector<Micros>{0, 8512, 100000});
  CHECK(t.duration_us == 100000);
}

TEST_CASE("ingest: empty file") {
  const auto t = parse("");
  CHECK(t.arrivals.empty());
  CHECK(t.duration_us == 0);
}

TEST_CASE("ingest: decreasing timestamp reports line 2") {
  try {
    parse("5\n3");
    FAIL("expected an ordering error");
  } catch (const OrderingError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("ingest: malformed line") {
  try {
    parse("1\n\n2x\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse("-4\n"), ParseError);
}

TEST_CASE("ingest: header, comments, duplicates") {
  const auto t = parse("# duration_us=500000 channel=26\n# note\n10\n10\n  20  \n");
  CHECK(t.channel_id == 26);
  CHECK(t.duration_us == 500000);
  CHECK(t.arrivals == std::vector<Micros>{10, 20});
  CHECK_THROWS_AS(parse("# duration_us=5 channel=26\n10\n"), Error);
  CHECK_THROWS_AS(parse("# duration_us=50 channel=3\n10\n"), Error);
}

TEST_CASE("emit/ingest round trip") {
  const auto dist = IatDistribution::exponential_mean(3000.0);
  const auto t = synthesize_trace(dist, 2000000, 3, 15);
  std::ostringstream out;
  emit_trace(t, out);
  std::istringstream in(out.str());
  CHECK(ingest_trace(in, 11) == t);
}

TEST_CASE("synthesize: determinism and mean") {
  const auto dist = IatDistribution::exponential_mean(1000.0);
  const auto a = synthesize_trace(dist, 10000000, 7);
  const auto b = synthesize_trace(dist, 10000000, 7);
  CHECK(a == b);
  CHECK(a.arrivals.size() > 9000);
  CHECK(a.arrivals.size() < 11000);
  const auto iats = inter_arrival_times(a);
  const double mean = std::accumulate(iats.begin(), iats.end(), 0.0) / iats.size();
  CHECK(mean == doctest::Approx(1000.0).epsilon(0.05));
  for (auto x : a.arrivals) CHECK(x <= a.duration_us);
}

TEST_CASE("synthesize: truncation and rejection") {
  const auto dist = IatDistribution::empirical({5000.0}, {1.0});
  CHECK(synthesize_trace(dist, 1, 1).arrivals.empty());
  CHECK_THROWS_AS(synthesize_trace(dist, 0, 1), Error);
  CHECK_THROWS_AS(IatDistribution::empirical({0.0}, {1.0}), Error);
  CHECK_THROWS_AS(IatDistribution::empirical({1.0, 2.0}, {0.5, 0.4}), Error);
}

TEST_CASE("features: worked examples") {
  ArrivalTrace t;
  t.arrivals = {10000, 20000, 30000};
  t.duration_us = 250000;
  const auto f = extract_slot_features(t, 100000);
  REQUIRE(f.size() == 3);
  CHECK(f[0].count == 3);
  CHECK(f[0].mean_iat_us == 10000.0);
  CHECK(f[1].count == 0);
  CHECK(f[1].mean_iat_us == 100000.0);
  CHECK(f[2].slot_index == 2);
}

TEST_CASE("features conserve arrivals") {
  const auto dist = IatDistribution::pareto(1.5, 300.0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t = synthesize_trace(dist, 3000000 + seed * 777, seed);
    for (Micros len : {Micros{1000}, Micros{50000}, Micros{100000}}) {
      const auto f = extract_slot_features(t, len);
      std::uint64_t total = 0;
      for (const auto& s : f) total += s.count;
      CHECK(total == t.arrivals.size());
    }
  }
}

TEST_CASE("labels: threshold rule") {
  const Thresholds th;
  CHECK(label_slot({0, 8512.0, 11}, th) == ChannelState::kBusy);
  CHECK(label_slot({0, 8513.0, 50}, th) == ChannelState::kFree);
  CHECK(label_slot({0, 100.0, 10}, th) == ChannelState::kFree);
  const std::vector<SlotFeatures> f = {{0, 100.0, 20}, {1, 9000.0, 20}, {2, 100.0, 20}};
  const auto once = label_channel_states(f, th);
  CHECK(once == std::vector<ChannelState>{ChannelState::kBusy, ChannelState::kFree,
                                          ChannelState::kBusy});
  CHECK(label_channel_states(f, th) == once);
}

TEST_CASE("thresholds validation") {
  Thresholds th;
  th.slot_len_us = 1000;
  CHECK_THROWS_AS(th.validate(), Error);
  CHECK_NOTHROW(mac_thresholds().validate());
  CHECK(mac_thresholds().slot_len_us == 50000);
}
