#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "lucid/gmm.hpp"
#include "lucid/trace.hpp"

namespace lucid {

enum class Regime : std::uint8_t { kPeak = 0, kOffPeak = 1 };

const char* to_string(Regime r);
Regime parse_regime(std::string_view s);
inline Regime other(Regime r) { return r == Regime::kPeak ? Regime::kOffPeak : Regime::kPeak; }

/// Normalized 2-D histogram over (mean IAT, count). Mass is stored row-major
/// with the IAT bin as the row.
struct FeatureHistogram {
  std::vector<double> edges_iat;
  std::vector<double> edges_count;
  std::vector<double> mass;

  std::size_t iat_bins() const { return edges_iat.size() - 1; }
  std::size_t count_bins() const { return edges_count.size() - 1; }
  double at(std::size_t iat_bin, std::size_t count_bin) const {
    return mass[iat_bin * count_bins() + count_bin];
  }
  double total() const;
};

struct HistogramSpec {
  std::size_t iat_bins = 50;
  double iat_min_us = 100.0;
  std::size_t count_bins = 30;
  double count_max = 300.0;
};

/// Log-spaced IAT bins over [iat_min, slot_len], linear count bins over
/// [0, count_max]. Out-of-range values land in the edge bins.
FeatureHistogram build_histogram(std::span<const SlotFeatures> features, Micros slot_len_us,
                                 const HistogramSpec& spec = {});

/// Merge groups of adjacent bins; trailing partial groups form their own bin.
FeatureHistogram rebin(const FeatureHistogram& h, std::size_t iat_factor, std::size_t count_factor);

void write_histogram_csv(const FeatureHistogram& h, std::ostream& out);

/// Symmetric per-sample cross-likelihood ratio between two windows, clamped
/// below at zero. Zero for identical windows and models.
double nclr_score(std::span<const SlotFeatures> window_a, std::span<const SlotFeatures> window_b,
                  const GmmParams& model_a, const GmmParams& model_b);

inline constexpr Micros kOneHourUs = 3600ULL * 1000000ULL;
inline constexpr double kNclrPeakThreshold = 0.5;

struct SegmentationOptions {
  Micros window_len_us = kOneHourUs;
  int components = 3;
  std::uint64_t seed = 1;
  double threshold = kNclrPeakThreshold;
};

struct WindowSegmentation {
  Micros window_len_us = 0;
  std::vector<Micros> start_us;
  std::vector<double> nclr_scores;
  std::vector<Regime> labels;
};

/// Slot features of every full window of the trace, in window order.
std::vector<std::vector<SlotFeatures>> split_windows(const ArrivalTrace& trace, Micros slot_len_us,
                                                     Micros window_len_us);

/// Fit used for window models; the component count shrinks for short windows.
GmmParams fit_window_model(std::span<const SlotFeatures> window, int components, std::uint64_t seed);

WindowSegmentation segment_windows(const ArrivalTrace& trace,
                                   std::span<const SlotFeatures> peak_reference,
                                   const Thresholds& th, const SegmentationOptions& opt = {});

/// Label from score: PEAK when the score is below the threshold.
Regime label_from_score(double score, double threshold = kNclrPeakThreshold);

/// For each class, the window whose score is closest to the class mean
/// (ties to the lower index). Returns (peak window, off-peak window).
std::pair<std::size_t, std::size_t> select_training_windows(const WindowSegmentation& seg);

void write_segmentation_csv(const WindowSegmentation& seg, std::ostream& out);

}  // namespace lucid
