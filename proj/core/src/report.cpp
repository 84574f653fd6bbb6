#include "caprnn/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "caprnn/error.hpp"

namespace caprnn {

AggregatedMetric aggregate_values(std::span<const double> values) {
  if (values.empty())
    throw UsageError("cannot aggregate zero runs");
  AggregatedMetric out;
  out.per_run.assign(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - out.mean) * (v - out.mean);
  out.std_dev = std::sqrt(sq / static_cast<double>(values.size()));
  return out;
}

AggregatedReport aggregate_runs(std::span<const MetricMap> runs) {
  if (runs.empty()) throw UsageError("cannot aggregate zero runs");
  for (const MetricMap& run : runs) {
    if (run.size() != runs[0].size())
      throw UsageError("runs disagree on their metric keys");
    for (const auto& [key, value] : run)
      if (!runs[0].count(key))
        throw UsageError("runs disagree on their metric keys: '" + key +
                         "' is not present everywhere");
  }
  AggregatedReport report;
  for (const auto& [key, first_value] : runs[0]) {
    std::vector<double> values;
    values.reserve(runs.size());
    for (const MetricMap& run : runs) values.push_back(run.at(key));
    report[key] = aggregate_values(values);
  }
  return report;
}

std::string report_to_json(const AggregatedReport& report) {
  nlohmann::ordered_json root = nlohmann::ordered_json::object();
  for (const auto& [key, metric] : report)
    root[key] = {{"per_run", metric.per_run},
                 {"mean", metric.mean},
                 {"std", metric.std_dev}};
  return root.dump(2) + "\n";
}

std::string report_table(const AggregatedReport& report) {
  std::size_t width = 0;
  for (const auto& [key, metric] : report) width = std::max(width, key.size());
  std::ostringstream out;
  for (const auto& [key, metric] : report) {
    out << key << std::string(width - key.size() + 2, ' ');
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f (%.4f)", metric.mean,
                  metric.std_dev);
    out << buf << "\n";
  }
  return out.str();
}

}  // namespace caprnn
