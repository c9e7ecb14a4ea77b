#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace lucid {

using Micros = std::uint64_t;

/// Frame + ACK airtime of a maximum-size 802.15.4 frame at 250 kbps.
inline constexpr Micros kWhiteSpaceUs = 8512;

enum class ChannelState : std::uint8_t { kFree = 0, kBusy = 1 };

const char* to_string(ChannelState s);

/// Interference arrivals observed on one 802.15.4 channel.
struct ArrivalTrace {
  int channel_id = 18;
  std::vector<Micros> arrivals;
  Micros duration_us = 0;

  /// Throws lucid::Error when an invariant does not hold.
  void validate() const;

  bool operator==(const ArrivalTrace&) const = default;
};

struct Thresholds {
  Micros th_iat_us = kWhiteSpaceUs;
  std::uint32_t th_count = 11;
  Micros slot_len_us = 100000;
  double cca_dbm = -77.0;

  void validate() const;
};

/// Thresholds configured for the MAC (50 ms slots).
Thresholds mac_thresholds();

struct SlotFeatures {
  std::uint64_t slot_index = 0;
  double mean_iat_us = 0.0;
  std::uint32_t count = 0;

  bool operator==(const SlotFeatures&) const = default;
};

struct EmpiricalIat {
  std::vector<double> support_us;  // strictly increasing, > 0
  std::vector<double> mass;        // sums to 1
};

struct ExponentialIat {
  double rate_per_us = 0.0;
};

struct ParetoIat {
  double shape = 0.0;
  double scale_us = 0.0;
};

/// Inter-arrival time distribution driving synthetic interference.
class IatDistribution {
 public:
  using Kind = std::variant<EmpiricalIat, ExponentialIat, ParetoIat>;

  static IatDistribution empirical(std::vector<double> support_us, std::vector<double> mass);
  /// Empirical distribution over the distinct inter-arrival gaps of a trace.
  static IatDistribution from_trace(const ArrivalTrace& trace);
  static IatDistribution exponential_mean(double mean_us);
  static IatDistribution pareto(double shape, double scale_us);

  const Kind& kind() const { return kind_; }

  /// Expected inter-arrival time; +inf for Pareto with shape <= 1.
  double mean_us() const;

  template <class Gen>
  double sample(Gen& rng) const;

 private:
  explicit IatDistribution(Kind k) : kind_(std::move(k)) {}
  Kind kind_;
  std::vector<double> cdf_;  // empirical only
};

ArrivalTrace ingest_trace(std::istream& source, int channel_id = 18);
ArrivalTrace ingest_trace_file(const std::string& path, int channel_id = 18);
/// Inverse of ingest_trace: a header line followed by one arrival per line.
void emit_trace(const ArrivalTrace& trace, std::ostream& out);

ArrivalTrace synthesize_trace(const IatDistribution& dist, Micros duration_us,
                              std::uint64_t seed, int channel_id = 18);

/// Number of slots a trace of the given span occupies (last partial slot kept).
std::uint64_t slot_count(const ArrivalTrace& trace, Micros slot_len_us);

std::vector<SlotFeatures> extract_slot_features(const ArrivalTrace& trace, Micros slot_len_us);

ChannelState label_slot(const SlotFeatures& f, const Thresholds& th);
std::vector<ChannelState> label_channel_states(std::span<const SlotFeatures> features,
                                               const Thresholds& th);

/// Inter-arrival gaps between successive arrivals (size = arrivals - 1).
std::vector<double> inter_arrival_times(const ArrivalTrace& trace);

}  // namespace lucid

#include "lucid/trace_inl.hpp"
