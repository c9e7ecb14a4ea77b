#include "lucid/trace.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string_view>

#include "lucid/error.hpp"
#include "lucid/rng.hpp"

namespace lucid {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool parse_u64(std::string_view s, std::uint64_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

struct Header {
  std::optional<Micros> duration_us;
  std::optional<int> channel;
};

// "# duration_us=<N> channel=<C>"; unknown keys are ignored.
Header parse_header(std::string_view line, std::size_t line_no) {
  Header h;
  line.remove_prefix(1);
  while (!line.empty()) {
    line = trim(line);
    const auto end = line.find_first_of(" \t");
    const std::string_view tok = line.substr(0, end);
    line = end == std::string_view::npos ? std::string_view{} : line.substr(end);
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos) continue;
    const auto key = tok.substr(0, eq);
    const auto value = tok.substr(eq + 1);
    std::uint64_t v = 0;
    if (key == "duration_us") {
      if (!parse_u64(value, v)) throw ParseError(line_no, "malformed duration_us in header");
      h.duration_us = v;
    } else if (key == "channel") {
      if (!parse_u64(value, v) || v > 255) throw ParseError(line_no, "malformed channel in header");
      h.channel = static_cast<int>(v);
    }
  }
  return h;
}

}  // namespace

const char* to_string(ChannelState s) { return s == ChannelState::kFree ? "FREE" : "BUSY"; }

void ArrivalTrace::validate() const {
  if (channel_id < 11 || channel_id > 26) {
    throw Error("channel_id " + std::to_string(channel_id) + " outside [11, 26]");
  }
  if (!std::is_sorted(arrivals.begin(), arrivals.end())) {
    throw Error("arrivals are not ordered");
  }
  if (!arrivals.empty() && arrivals.back() > duration_us) {
    throw Error("arrival beyond trace duration");
  }
}

void Thresholds::validate() const {
  if (th_iat_us == 0) throw Error("th_iat_us must be > 0");
  if (th_count < 1) throw Error("th_count must be >= 1");
  if (slot_len_us < th_iat_us) throw Error("slot_len_us must be >= th_iat_us");
}

Thresholds mac_thresholds() {
  Thresholds th;
  th.slot_len_us = 50000;
  return th;
}

IatDistribution IatDistribution::empirical(std::vector<double> support_us,
                                           std::vector<double> mass) {
  if (support_us.empty() || support_us.size() != mass.size()) {
    throw Error("empirical IAT distribution needs matching, non-empty support and mass");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < support_us.size(); ++i) {
    if (!(support_us[i] > 0.0) || !std::isfinite(support_us[i])) {
      throw Error("empirical IAT support must be finite and > 0");
    }
    if (i > 0 && !(support_us[i] > support_us[i - 1])) {
      throw Error("empirical IAT support must be strictly increasing");
    }
    if (!(mass[i] >= 0.0)) throw Error("empirical IAT mass must be >= 0");
    total += mass[i];
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("empirical IAT masses must sum to 1");
  IatDistribution d{EmpiricalIat{std::move(support_us), std::move(mass)}};
  const auto& e = std::get<EmpiricalIat>(d.kind_);
  d.cdf_.resize(e.mass.size());
  std::partial_sum(e.mass.begin(), e.mass.end(), d.cdf_.begin());
  d.cdf_.back() = 1.0;
  return d;
}

IatDistribution IatDistribution::from_trace(const ArrivalTrace& trace) {
  const auto gaps = inter_arrival_times(trace);
  if (gaps.empty()) throw Error("trace needs at least 2 arrivals to build an IAT distribution");
  std::map<double, std::size_t> hist;
  for (double g : gaps) ++hist[g];
  std::vector<double> support, mass;
  for (const auto& [value, n] : hist) {
    support.push_back(value);
    mass.push_back(static_cast<double>(n) / static_cast<double>(gaps.size()));
  }
  // Renormalize so the sum is exactly representable as 1 within 1e-9.
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  for (double& m : mass) m /= total;
  return empirical(std::move(support), std::move(mass));
}

IatDistribution IatDistribution::exponential_mean(double mean_us) {
  if (!(mean_us > 0.0) || !std::isfinite(mean_us)) {
    throw Error("exponential IAT mean must be finite and > 0");
  }
  return IatDistribution{ExponentialIat{1.0 / mean_us}};
}

IatDistribution IatDistribution::pareto(double shape, double scale_us) {
  if (!(shape > 0.0) || !(scale_us > 0.0) || !std::isfinite(shape) || !std::isfinite(scale_us)) {
    throw Error("pareto IAT needs shape > 0 and scale > 0");
  }
  return IatDistribution{ParetoIat{shape, scale_us}};
}

double IatDistribution::mean_us() const {
  return std::visit(
      [](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, ExponentialIat>) {
          return 1.0 / d.rate_per_us;
        } else if constexpr (std::is_same_v<T, ParetoIat>) {
          if (d.shape <= 1.0) return std::numeric_limits<double>::infinity();
          return d.shape * d.scale_us / (d.shape - 1.0);
        } else {
          return std::inner_product(d.support_us.begin(), d.support_us.end(), d.mass.begin(), 0.0);
        }
      },
      kind_);
}

ArrivalTrace ingest_trace(std::istream& source, int channel_id) {
  ArrivalTrace trace;
  trace.channel_id = channel_id;
  std::optional<Micros> header_duration;

  std::string raw;
  std::size_t line_no = 0;
  bool first_content = true;
  while (std::getline(source, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (first_content) {
        const auto h = parse_header(line, line_no);
        header_duration = h.duration_us;
        if (h.channel) trace.channel_id = *h.channel;
      }
      first_content = false;
      continue;
    }
    first_content = false;
    std::uint64_t t = 0;
    if (!parse_u64(line, t)) {
      throw ParseError(line_no, "malformed timestamp '" + std::string(line) + "'");
    }
    if (!trace.arrivals.empty()) {
      if (t < trace.arrivals.back()) {
        throw OrderingError(line_no, "timestamp " + std::to_string(t) + " precedes " +
                                         std::to_string(trace.arrivals.back()));
      }
      if (t == trace.arrivals.back()) continue;  // coalesce duplicates
    }
    trace.arrivals.push_back(t);
  }

  const Micros last = trace.arrivals.empty() ? 0 : trace.arrivals.back();
  if (header_duration) {
    if (*header_duration < last) {
      throw Error("header duration_us " + std::to_string(*header_duration) +
                  " is shorter than the last arrival " + std::to_string(last));
    }
    trace.duration_us = *header_duration;
  } else {
    trace.duration_us = last;
  }
  trace.validate();
  return trace;
}

ArrivalTrace ingest_trace_file(const std::string& path, int channel_id) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace file: " + path);
  return ingest_trace(in, channel_id);
}

void emit_trace(const ArrivalTrace& trace, std::ostream& out) {
  out << "# duration_us=" << trace.duration_us << " channel=" << trace.channel_id << '\n';
  for (Micros t : trace.arrivals) out << t << '\n';
}

ArrivalTrace synthesize_trace(const IatDistribution& dist, Micros duration_us, std::uint64_t seed,
                              int channel_id) {
  if (duration_us == 0) throw Error("synthesize_trace: duration_us must be > 0");
  if (!(dist.mean_us() > 0.0)) throw Error("synthesize_trace: degenerate IAT distribution");
  ArrivalTrace trace;
  trace.channel_id = channel_id;
  trace.duration_us = duration_us;
  Rng rng(seed);
  double t = 0.0;
  const auto limit = static_cast<double>(duration_us);
  for (;;) {
    t += dist.sample(rng);
    if (!(t <= limit)) break;
    const auto at = static_cast<Micros>(std::floor(t));
    if (trace.arrivals.empty() || trace.arrivals.back() != at) trace.arrivals.push_back(at);
  }
  trace.validate();
  return trace;
}

std::uint64_t slot_count(const ArrivalTrace& trace, Micros slot_len_us) {
  if (slot_len_us == 0) throw Error("slot_len_us must be > 0");
  std::uint64_t n = (trace.duration_us + slot_len_us - 1) / slot_len_us;
  // An arrival exactly at duration_us on a slot boundary opens one more slot.
  if (!trace.arrivals.empty()) n = std::max(n, trace.arrivals.back() / slot_len_us + 1);
  return n;
}

std::vector<SlotFeatures> extract_slot_features(const ArrivalTrace& trace, Micros slot_len_us) {
  const std::uint64_t n = slot_count(trace, slot_len_us);
  std::vector<SlotFeatures> out(n);
  for (std::uint64_t k = 0; k < n; ++k) {
    out[k].slot_index = k;
    out[k].mean_iat_us = static_cast<double>(slot_len_us);
  }
  std::size_t i = 0;
  const auto& a = trace.arrivals;
  while (i < a.size()) {
    const std::uint64_t slot = a[i] / slot_len_us;
    std::size_t j = i;
    while (j < a.size() && a[j] / slot_len_us == slot) ++j;
    const auto count = static_cast<std::uint32_t>(j - i);
    out[slot].count = count;
    if (count >= 2) {
      out[slot].mean_iat_us =
          static_cast<double>(a[j - 1] - a[i]) / static_cast<double>(count - 1);
    }
    i = j;
  }
  return out;
}

ChannelState label_slot(const SlotFeatures& f, const Thresholds& th) {
  const bool busy = f.mean_iat_us <= static_cast<double>(th.th_iat_us) && f.count >= th.th_count;
  return busy ? ChannelState::kBusy : ChannelState::kFree;
}

std::vector<ChannelState> label_channel_states(std::span<const SlotFeatures> features,
                                               const Thresholds& th) {
  std::vector<ChannelState> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(label_slot(f, th));
  return out;
}

std::vector<double> inter_arrival_times(const ArrivalTrace& trace) {
  std::vector<double> gaps;
  if (trace.arrivals.size() < 2) return gaps;
  gaps.reserve(trace.arrivals.size() - 1);
  for (std::size_t i = 1; i < trace.arrivals.size(); ++i) {
    gaps.push_back(static_cast<double>(trace.arrivals[i] - trace.arrivals[i - 1]));
  }
  return gaps;
}

}  // namespace lucid
