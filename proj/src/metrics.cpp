#include "lucid/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "lucid/error.hpp"

namespace lucid {

using nlohmann::json;

ConfusionMetrics confusion_metrics(std::span<const ChannelState> estimated,
                                   std::span<const ChannelState> truth) {
  if (estimated.size() != truth.size()) {
    throw Error("confusion_metrics: length mismatch (" + std::to_string(estimated.size()) +
                " estimated vs " + std::to_string(truth.size()) + " truth)");
  }
  if (truth.empty()) throw Error("confusion_metrics: sequences must be non-empty");
  ConfusionMetrics m;
  auto& c = m.matrix;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool est_free = estimated[i] == ChannelState::kFree;
    const bool true_free = truth[i] == ChannelState::kFree;
    if (est_free && true_free) ++c.tp;
    else if (est_free) ++c.fp;
    else if (true_free) ++c.fn;
    else ++c.tn;
  }
  m.accuracy_pct = 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  const auto negatives = c.fp + c.tn;
  m.fpr_pct = negatives == 0 ? 0.0 : 100.0 * static_cast<double>(c.fp) / static_cast<double>(negatives);
  return m;
}

json to_json(const ConfusionMetrics& m) {
  return {{"positive_class", "FREE"},
          {"confusion", {{"tp", m.matrix.tp}, {"fp", m.matrix.fp}, {"tn", m.matrix.tn}, {"fn", m.matrix.fn}}},
          {"accuracy_pct", m.accuracy_pct},
          {"fpr_pct", m.fpr_pct}};
}

ReportFormat parse_report_format(std::string_view s) {
  if (s == "json") return ReportFormat::kJson;
  if (s == "csv") return ReportFormat::kCsv;
  throw Error("unknown report format '" + std::string(s) + "' (expected json or csv)");
}

void emit_report(std::span<const ReportRow> rows, ReportFormat format, std::ostream& out) {
  if (format == ReportFormat::kCsv) {
    out << "scenario,protocol,environment,interference_type,t_data_s,seed,pdr_pct,pdr_std,"
           "duty_cycle_pct,duty_cycle_std\n";
    out << std::setprecision(17);
    for (const auto& r : rows) {
      out << r.scenario << ',' << r.protocol << ',' << r.environment << ',' << r.interference_type
          << ',' << r.t_data_s << ',' << r.seed << ',' << r.pdr_pct << ',' << r.pdr_std << ','
          << r.duty_cycle_pct << ',' << r.duty_cycle_std << '\n';
    }
    return;
  }
  json arr = json::array();
  for (const auto& r : rows) {
    json o = json::object();
    o["scenario"] = r.scenario;
    o["protocol"] = r.protocol;
    o["environment"] = r.environment;
    o["interference_type"] = r.interference_type;
    o["t_data_s"] = r.t_data_s;
    o["seed"] = r.seed;
    o["pdr_pct"] = r.pdr_pct;
    o["pdr_std"] = r.pdr_std;
    o["duty_cycle_pct"] = r.duty_cycle_pct;
    o["duty_cycle_std"] = r.duty_cycle_std;
    arr.push_back(std::move(o));
  }
  const json doc = {{"schema_version", kReportSchemaVersion}, {"rows", std::move(arr)}};
  out << doc.dump(2) << '\n';
}

std::string emit_report(std::span<const ReportRow> rows, ReportFormat format) {
  std::ostringstream os;
  emit_report(rows, format, os);
  return os.str();
}

std::vector<ReportRow> parse_report_json(const json& j) {
  if (j.at("schema_version").get<int>() != kReportSchemaVersion) {
    throw Error("unsupported report schema version");
  }
  std::vector<ReportRow> rows;
  for (const auto& o : j.at("rows")) {
    ReportRow r;
    r.scenario = o.at("scenario").get<std::string>();
    r.protocol = o.at("protocol").get<std::string>();
    r.environment = o.at("environment").get<std::string>();
    r.interference_type = o.at("interference_type").get<std::string>();
    r.t_data_s = o.at("t_data_s").get<double>();
    r.seed = o.at("seed").get<std::string>();
    r.pdr_pct = o.at("pdr_pct").get<double>();
    r.pdr_std = o.at("pdr_std").get<double>();
    r.duty_cycle_pct = o.at("duty_cycle_pct").get<double>();
    r.duty_cycle_std = o.at("duty_cycle_std").get<double>();
    rows.push_back(std::move(r));
  }
  return rows;
}

std::pair<double, double> mean_and_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

}  // namespace lucid
