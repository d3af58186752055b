#include "flowcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "flowcast/errors.hpp"

namespace flowcast {

namespace {

struct Moments {
  double mean = 0.0;
  double std = 0.0;  // population convention (divide by N)
};

Moments moments(std::span<const double> x) {
  double sum = 0.0;
  for (double v : x) sum += v;
  const double mean = sum / static_cast<double>(x.size());
  double sq = 0.0;
  for (double v : x) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(x.size()))};
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

KgeComponents kge(std::span<const double> sim, std::span<const double> obs) {
  if (sim.size() != obs.size()) {
    throw ShapeError("kge: length mismatch " + std::to_string(sim.size()) + " vs " +
                     std::to_string(obs.size()));
  }
  if (sim.size() < 2) throw ShapeError("kge: need at least 2 values");

  const Moments ms = moments(sim);
  const Moments mo = moments(obs);
  if (mo.std == 0.0) throw NumericError("kge: observations are constant");
  if (ms.std == 0.0) throw NumericError("kge: simulation is constant");
  if (mo.mean == 0.0) throw NumericError("kge: observation mean is zero");
  if (ms.mean == 0.0) throw NumericError("kge: simulation mean is zero (gamma undefined)");

  double cov = 0.0;
  for (std::size_t i = 0; i < sim.size(); ++i) {
    cov += (sim[i] - ms.mean) * (obs[i] - mo.mean);
  }
  cov /= static_cast<double>(sim.size());

  KgeComponents out;
  out.r = cov / (ms.std * mo.std);
  out.beta = ms.mean / mo.mean;
  out.gamma = (ms.std / ms.mean) / (mo.std / mo.mean);
  out.kge = 1.0 - std::sqrt((out.r - 1.0) * (out.r - 1.0) +
                            (out.beta - 1.0) * (out.beta - 1.0) +
                            (out.gamma - 1.0) * (out.gamma - 1.0));
  return out;
}

ComparisonSummary compare_report(const std::vector<BasinResult>& results) {
  if (results.empty()) throw DataError("compare: no basin results");

  ComparisonSummary summary;
  summary.basin_count = results.size();
  std::vector<double> lstm_kges, cnn_kges;
  lstm_kges.reserve(results.size());
  cnn_kges.reserve(results.size());

  bool have_best = false;
  for (const BasinResult& r : results) {
    ComparisonRow row{r.basin, r.lstm.kge, r.cnn_lstm.kge, r.cnn_lstm.kge - r.lstm.kge};
    lstm_kges.push_back(row.lstm_kge);
    cnn_kges.push_back(row.cnn_lstm_kge);
    if (row.cnn_lstm_kge > row.lstm_kge) ++summary.improved_count;
    if (!have_best || row.delta > summary.best_improvement.delta) {
      summary.best_improvement = row;
      have_best = true;
    }
    summary.rows.push_back(std::move(row));
  }

  summary.median_lstm = median_of(lstm_kges);
  summary.median_cnn_lstm = median_of(cnn_kges);
  summary.improved_fraction =
      static_cast<double>(summary.improved_count) / static_cast<double>(summary.basin_count);
  return summary;
}

std::string format_comparison(const ComparisonSummary& s) {
  std::ostringstream out;
  out.precision(4);
  out << std::fixed;
  out << "basin            lstm_kge  cnn_lstm_kge     delta\n";
  for (const ComparisonRow& row : s.rows) {
    out << row.basin;
    for (std::size_t i = row.basin.size(); i < 16; ++i) out << ' ';
    out << ' ' << row.lstm_kge << "      " << row.cnn_lstm_kge << "  " << (row.delta >= 0 ? " " : "")
        << row.delta << "\n";
  }
  out << "median KGE: " << s.median_lstm << " (lstm) -> " << s.median_cnn_lstm
      << " (cnn-lstm)\n";
  out << "improved basins: " << s.improved_count << "/" << s.basin_count << " ("
      << 100.0 * s.improved_fraction << "%)\n";
  out << "best improvement: " << s.best_improvement.basin << " from "
      << s.best_improvement.lstm_kge << " to " << s.best_improvement.cnn_lstm_kge << "\n";
  return out.str();
}

}  // namespace flowcast
