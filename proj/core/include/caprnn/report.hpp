#pragma once

// Multi-run aggregation: experiments repeat over a handful of seeds and
// results are reported as "mean (std)" per metric. The standard deviation is
// the population deviation (the runs are the whole population of interest,
// not a sample from a larger one).

#include <map>
#include <span>
#include <string>
#include <vector>

namespace caprnn {

/// One run's metric values, keyed by metric name.
using MetricMap = std::map<std::string, double>;

struct AggregatedMetric {
  std::vector<double> per_run;
  double mean = 0.0;
  double std_dev = 0.0;  // population standard deviation

  bool operator==(const AggregatedMetric&) const = default;
};

using AggregatedReport = std::map<std::string, AggregatedMetric>;

/// Mean and population standard deviation of one metric's run values.
AggregatedMetric aggregate_values(std::span<const double> values);

/// Aggregates several runs. All runs must share the same metric keys;
/// UsageError otherwise or when `runs` is empty.
AggregatedReport aggregate_runs(std::span<const MetricMap> runs);

/// JSON form: {"metric": {"per_run": [...], "mean": m, "std": s}, ...}.
std::string report_to_json(const AggregatedReport& report);

/// Plain-text table with one "metric  mean (std)" row per metric.
std::string report_table(const AggregatedReport& report);

}  // namespace caprnn
