#pragma once

#include <span>
#include <string>
#include <vector>

namespace flowcast {

/// Kling-Gupta efficiency decomposition for one simulation/observation pair.
/// kge = 1 - sqrt((r-1)^2 + (beta-1)^2 + (gamma-1)^2) with
///   r     linear correlation coefficient,
///   beta  ratio of means (sim/obs),
///   gamma ratio of coefficients of variation (sim/obs), population std.
struct KgeComponents {
  double r = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double kge = 0.0;
};

/// Throws NumericError when the metric is undefined (constant series or zero
/// observation mean) instead of returning NaN.
KgeComponents kge(std::span<const double> sim, std::span<const double> obs);

struct BasinResult {
  std::string basin;
  KgeComponents lstm;
  KgeComponents cnn_lstm;
};

struct ComparisonRow {
  std::string basin;
  double lstm_kge = 0.0;
  double cnn_lstm_kge = 0.0;
  double delta = 0.0;
};

struct ComparisonSummary {
  std::size_t basin_count = 0;
  double median_lstm = 0.0;
  double median_cnn_lstm = 0.0;
  std::size_t improved_count = 0;  // strict: cnn_lstm > lstm
  double improved_fraction = 0.0;
  ComparisonRow best_improvement;
  std::vector<ComparisonRow> rows;
};

ComparisonSummary compare_report(const std::vector<BasinResult>& results);

/// Human-readable block mirroring the summary fields.
std::string format_comparison(const ComparisonSummary& summary);

}  // namespace flowcast
