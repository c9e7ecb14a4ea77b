#include "lucid/characterization.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "lucid/error.hpp"
#include "lucid/rng.hpp"

namespace lucid {

namespace {

std::size_t bin_of(const std::vector<double>& edges, double v) {
  const auto bins = edges.size() - 1;
  if (!(v >= edges.front())) return 0;
  if (v >= edges.back()) return bins - 1;
  auto it = std::upper_bound(edges.begin(), edges.end(), v);
  return static_cast<std::size_t>(it - edges.begin()) - 1;
}

std::vector<double> merged_edges(const std::vector<double>& edges, std::size_t factor) {
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < edges.size(); i += factor) out.push_back(edges[i]);
  out.push_back(edges.back());
  return out;
}

}  // namespace

const char* to_string(Regime r) { return r == Regime::kPeak ? "PEAK" : "OFFPEAK"; }

Regime parse_regime(std::string_view s) {
  if (s == "PEAK" || s == "peak") return Regime::kPeak;
  if (s == "OFFPEAK" || s == "offpeak" || s == "off-peak") return Regime::kOffPeak;
  throw Error("unknown regime '" + std::string(s) + "'");
}

double FeatureHistogram::total() const { return std::accumulate(mass.begin(), mass.end(), 0.0); }

FeatureHistogram build_histogram(std::span<const SlotFeatures> features, Micros slot_len_us,
                                 const HistogramSpec& spec) {
  const double hi = static_cast<double>(slot_len_us);
  if (!(hi > spec.iat_min_us)) throw Error("histogram: slot length must exceed the IAT minimum");
  if (spec.iat_bins == 0 || spec.count_bins == 0) throw Error("histogram: bin counts must be > 0");
  FeatureHistogram h;
  const double log_lo = std::log(spec.iat_min_us);
  const double log_hi = std::log(hi);
  for (std::size_t i = 0; i <= spec.iat_bins; ++i) {
    h.edges_iat.push_back(
        std::exp(log_lo + (log_hi - log_lo) * static_cast<double>(i) / spec.iat_bins));
  }
  h.edges_iat.front() = spec.iat_min_us;
  h.edges_iat.back() = hi;
  for (std::size_t j = 0; j <= spec.count_bins; ++j) {
    h.edges_count.push_back(spec.count_max * static_cast<double>(j) / spec.count_bins);
  }
  h.mass.assign(spec.iat_bins * spec.count_bins, 0.0);
  if (features.empty()) return h;
  const double w = 1.0 / static_cast<double>(features.size());
  for (const auto& f : features) {
    const auto i = bin_of(h.edges_iat, f.mean_iat_us);
    const auto j = bin_of(h.edges_count, static_cast<double>(f.count));
    h.mass[i * spec.count_bins + j] += w;
  }
  return h;
}

FeatureHistogram rebin(const FeatureHistogram& h, std::size_t iat_factor, std::size_t count_factor) {
  if (iat_factor == 0 || count_factor == 0) throw Error("rebin: factors must be >= 1");
  FeatureHistogram out;
  out.edges_iat = merged_edges(h.edges_iat, iat_factor);
  out.edges_count = merged_edges(h.edges_count, count_factor);
  out.mass.assign(out.iat_bins() * out.count_bins(), 0.0);
  for (std::size_t i = 0; i < h.iat_bins(); ++i) {
    for (std::size_t j = 0; j < h.count_bins(); ++j) {
      out.mass[(i / iat_factor) * out.count_bins() + j / count_factor] += h.at(i, j);
    }
  }
  return out;
}

void write_histogram_csv(const FeatureHistogram& h, std::ostream& out) {
  out << "iat_lo_us,iat_hi_us,count_lo,count_hi,mass\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < h.iat_bins(); ++i) {
    for (std::size_t j = 0; j < h.count_bins(); ++j) {
      out << h.edges_iat[i] << ',' << h.edges_iat[i + 1] << ',' << h.edges_count[j] << ','
          << h.edges_count[j + 1] << ',' << h.at(i, j) << '\n';
    }
  }
}

double nclr_score(std::span<const SlotFeatures> window_a, std::span<const SlotFeatures> window_b,
                  const GmmParams& model_a, const GmmParams& model_b) {
  if (window_a.empty() || window_b.empty()) throw Error("nclr_score: windows must be non-empty");
  const auto a = to_points(window_a);
  const auto b = to_points(window_b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double term_a = (gmm_total_loglik(model_a, a) - gmm_total_loglik(model_b, a)) / na;
  const double term_b = (gmm_total_loglik(model_b, b) - gmm_total_loglik(model_a, b)) / nb;
  const double score = 0.5 * (term_a + term_b);
  if (std::isnan(score)) return std::numeric_limits<double>::infinity();
  return std::max(0.0, score);
}

std::vector<std::vector<SlotFeatures>> split_windows(const ArrivalTrace& trace, Micros slot_len_us,
                                                     Micros window_len_us) {
  if (window_len_us == 0 || window_len_us % slot_len_us != 0) {
    throw Error("window length must be a positive multiple of the slot length");
  }
  const auto n_windows = trace.duration_us / window_len_us;
  if (n_windows < 1) {
    throw Error("trace of " + std::to_string(trace.duration_us) +
                " us is shorter than one window of " + std::to_string(window_len_us) + " us");
  }
  const auto features = extract_slot_features(trace, slot_len_us);
  const auto per_window = window_len_us / slot_len_us;
  std::vector<std::vector<SlotFeatures>> out;
  for (std::uint64_t w = 0; w < n_windows; ++w) {
    const auto first = features.begin() + static_cast<std::ptrdiff_t>(w * per_window);
    out.emplace_back(first, first + static_cast<std::ptrdiff_t>(per_window));
  }
  return out;
}

GmmParams fit_window_model(std::span<const SlotFeatures> window, int components,
                           std::uint64_t seed) {
  const int m = std::max(1, std::min(components, static_cast<int>(window.size() / 2)));
  return gmm_fit(window, m, seed);
}

Regime label_from_score(double score, double threshold) {
  return score < threshold ? Regime::kPeak : Regime::kOffPeak;
}

WindowSegmentation segment_windows(const ArrivalTrace& trace,
                                   std::span<const SlotFeatures> peak_reference,
                                   const Thresholds& th, const SegmentationOptions& opt) {
  if (peak_reference.empty()) throw Error("segment_windows: peak reference must be non-empty");
  const auto windows = split_windows(trace, th.slot_len_us, opt.window_len_us);
  const auto ref_model = fit_window_model(peak_reference, opt.components, opt.seed);
  WindowSegmentation seg;
  seg.window_len_us = opt.window_len_us;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto model = fit_window_model(windows[w], opt.components, opt.seed);
    const double score = nclr_score(windows[w], peak_reference, model, ref_model);
    seg.start_us.push_back(static_cast<Micros>(w) * opt.window_len_us);
    seg.nclr_scores.push_back(score);
    seg.labels.push_back(label_from_score(score, opt.threshold));
  }
  return seg;
}

std::pair<std::size_t, std::size_t> select_training_windows(const WindowSegmentation& seg) {
  auto pick = [&](Regime r) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < seg.labels.size(); ++i) {
      if (seg.labels[i] == r) {
        sum += seg.nclr_scores[i];
        ++n;
      }
    }
    if (n == 0) throw Error(std::string(to_string(r)) + " class empty");
    const double mean = sum / static_cast<double>(n);
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < seg.labels.size(); ++i) {
      if (seg.labels[i] != r) continue;
      const double d = std::abs(seg.nclr_scores[i] - mean);
      // Distances within rounding noise count as ties and keep the earlier window.
      if (d < best_dist - 1e-12) {
        best = i;
        best_dist = d;
      }
    }
    return best;
  };
  const auto peak = pick(Regime::kPeak);
  const auto offpeak = pick(Regime::kOffPeak);
  return {peak, offpeak};
}

void write_segmentation_csv(const WindowSegmentation& seg, std::ostream& out) {
  out << "window_index,start_us,nclr,label\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < seg.labels.size(); ++i) {
    out << i << ',' << seg.start_us[i] << ',' << seg.nclr_scores[i] << ','
        << to_string(seg.labels[i]) << '\n';
  }
}

}  // namespace lucid
