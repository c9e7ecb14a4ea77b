#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lucid/trace.hpp"

namespace lucid {

/// Confusion counts with FREE as the positive class: a false positive is a
/// slot estimated FREE while the channel was BUSY, i.e. a likely packet loss.
struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct ConfusionMetrics {
  ConfusionMatrix matrix;
  double accuracy_pct = 0.0;
  double fpr_pct = 0.0;
};

ConfusionMetrics confusion_metrics(std::span<const ChannelState> estimated,
                                   std::span<const ChannelState> truth);

nlohmann::json to_json(const ConfusionMetrics& m);

// Reference operating point of the GMM estimator on a real office weekday
// trace. Not reproducible without the original captures; kept for context.
inline constexpr double kReferenceGmmAccuracyPct = 99.82;
inline constexpr double kReferenceGmmFprPct = 0.08;

/// One row of the aggregate experiment report.
struct ReportRow {
  std::string scenario;
  std::string protocol;
  std::string environment;
  std::string interference_type;
  double t_data_s = 0.0;
  std::string seed;  // single seed, or ';'-joined list for aggregates
  double pdr_pct = 0.0;
  double pdr_std = 0.0;
  double duty_cycle_pct = 0.0;
  double duty_cycle_std = 0.0;
};

inline constexpr int kReportSchemaVersion = 1;

enum class ReportFormat { kJson, kCsv };

ReportFormat parse_report_format(std::string_view s);

/// Stable field order. CSV header row first; doubles printed with 17
/// significant digits.
void emit_report(std::span<const ReportRow> rows, ReportFormat format, std::ostream& out);
std::string emit_report(std::span<const ReportRow> rows, ReportFormat format);

std::vector<ReportRow> parse_report_json(const nlohmann::json& j);

/// Population mean and sample standard deviation (0 for fewer than 2 values).
std::pair<double, double> mean_and_std(std::span<const double> values);

}  // namespace lucid
