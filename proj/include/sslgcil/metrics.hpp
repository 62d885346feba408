#pragma once

// Circular DoA error metrics and backward transfer.

#include "sslgcil/common.hpp"

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sslgcil {

/// Minimum angular difference in degrees, in [0, 180].
inline double angular_distance(double a_deg, double b_deg) {
  auto wrap = [](double x) {
    const double r = std::fmod(x, 360.0);
    return r < 0.0 ? r + 360.0 : r;
  };
  return 180.0 - std::abs(std::abs(wrap(a_deg) - wrap(b_deg)) - 180.0);
}

struct DoaMetrics {
  double mae = 0.0;  ///< degrees
  double acc = 0.0;  ///< fraction in [0, 1]
};

/// MAE of the angular distance and the fraction within `tolerance_deg`
/// (inclusive).
inline DoaMetrics doa_metrics(std::span<const int> predicted, std::span<const int> truth, double tolerance_deg) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("doa_metrics: length mismatch");
  if (predicted.empty()) throw std::invalid_argument("doa_metrics: no samples");
  double err = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = angular_distance(predicted[i], truth[i]);
    err += d;
    if (d <= tolerance_deg) ++hits;
  }
  const double n = static_cast<double>(predicted.size());
  return {err / n, static_cast<double>(hits) / n};
}

/// Lower-triangular matrix of A(m, k): accuracy on test set k after training
/// task m, for m >= k. Indices are zero-based.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(int tasks)
      : tasks_(tasks), values_(static_cast<std::size_t>(tasks) * tasks, std::numeric_limits<double>::quiet_NaN()) {}

  int tasks() const noexcept { return tasks_; }

  void set(int m, int k, double v) {
    check(m, k);
    values_[idx(m, k)] = v;
  }
  bool has(int m, int k) const {
    return m >= 0 && m < tasks_ && k >= 0 && k <= m && !std::isnan(values_[idx(m, k)]);
  }
  double at(int m, int k) const {
    check(m, k);
    const double v = values_[idx(m, k)];
    if (std::isnan(v))
      throw std::out_of_range("AccuracyMatrix: missing entry (" + std::to_string(m + 1) + "," + std::to_string(k + 1) + ")");
    return v;
  }
  std::size_t filled() const {
    std::size_t n = 0;
    for (int m = 0; m < tasks_; ++m)
      for (int k = 0; k <= m; ++k) n += has(m, k) ? 1 : 0;
    return n;
  }

 private:
  std::size_t idx(int m, int k) const { return static_cast<std::size_t>(m) * tasks_ + k; }
  void check(int m, int k) const {
    if (m < 0 || m >= tasks_ || k < 0 || k > m) throw std::out_of_range("AccuracyMatrix: index outside m >= k");
  }

  int tasks_ = 0;
  std::vector<double> values_;
};

/// (1 / (T - 1)) * sum_{k < T} (A(T, k) - A(k, k)), in the matrix's own units.
inline double backward_transfer(const AccuracyMatrix& a) {
  const int t = a.tasks();
  if (t < 2) throw std::invalid_argument("backward_transfer: needs at least 2 tasks");
  double sum = 0.0;
  for (int k = 0; k < t - 1; ++k) sum += a.at(t - 1, k) - a.at(k, k);
  return sum / static_cast<double>(t - 1);
}

}  // namespace sslgcil
