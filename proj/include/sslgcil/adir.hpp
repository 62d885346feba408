#pragma once

// Analytic dynamic imbalance rectifier.
//
// Keeps, for every DoA class ever observed, the auto-correlation
// A(c) = sum h h^T, the cross-correlation C(c) = sum h z^T and the count N(c)
// of its embedded samples. Statistics persist across tasks, so a reappearing
// class keeps accumulating. The classifier is the weighted ridge solution
//
//   W = (sum_c pi_c A(c) + gamma I)^{-1} sum_c pi_c C(c),   pi_c = 1 / N(c),
//
// with gamma = gamma0 * exp(alpha * (Gini_t - 0.5)) driven by the imbalance of
// the current task's class counts. Memory is Theta(#classes * (h^2 + 360 h))
// doubles: about 3.9 GB for 360 classes at h = 1000.

#include "sslgcil/common.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sslgcil {

struct ClassStats {
  Matrix auto_corr;   ///< h x h
  Matrix cross_corr;  ///< h x 360
  std::int64_t count = 0;
};

struct AdirOptions {
  double gamma0 = 100.0;
  double reg_exponent = 2.0;   ///< alpha in the gamma schedule
  bool reweight = true;        ///< pi_c = 1/N(c); otherwise pi_c = 1
  bool adaptive_gamma = true;  ///< otherwise gamma = gamma0
};

/// Gini coefficient sum_i sum_j |p_i - p_j| / (2 n sum_i p_i) of per-class counts.
inline double gini(std::span<const double> counts) {
  if (counts.empty()) throw std::invalid_argument("gini: empty count vector");
  double sum = 0.0;
  for (double p : counts) {
    if (p < 0.0) throw std::invalid_argument("gini: negative count");
    sum += p;
  }
  if (!(sum > 0.0)) throw std::invalid_argument("gini: counts sum to zero");
  double diff = 0.0;
  for (double a : counts)
    for (double b : counts) diff += std::abs(a - b);
  return diff / (2.0 * static_cast<double>(counts.size()) * sum);
}

inline double gini(std::span<const int> counts) {
  std::vector<double> c(counts.begin(), counts.end());
  return gini(std::span<const double>(c));
}

inline double adaptive_gamma(double gini_t, double gamma0, double alpha) {
  if (!(gamma0 > 0.0)) throw std::invalid_argument("adaptive_gamma: gamma0 must be > 0");
  return gamma0 * std::exp(alpha * (gini_t - 0.5));
}

struct ClassifierWeights {
  Matrix weight;  ///< h x 360
  double gamma_used = 0.0;
  double gini_used = 0.0;
};

class AdirState {
 public:
  explicit AdirState(int feature_dim, AdirOptions options = {}) : dim_(feature_dim), options_(options) {
    if (feature_dim <= 0) throw std::invalid_argument("AdirState: feature dimension must be positive");
  }

  int feature_dim() const noexcept { return dim_; }
  const AdirOptions& options() const noexcept { return options_; }
  void set_options(const AdirOptions& options) { options_ = options; }
  const std::map<int, ClassStats>& stats() const noexcept { return stats_; }

  /// A(y) += h h^T, C(y) += h z^T, N(y) += 1.
  void accumulate(const Vector& h, int cls, const Vector& z) {
    check_sample(h.size(), cls, z.size());
    if (!h.allFinite()) throw std::invalid_argument("AdirState::accumulate: non-finite embedding");
    auto& s = slot(cls);
    s.auto_corr.noalias() += h * h.transpose();
    s.cross_corr.noalias() += h * z.transpose();
    ++s.count;
  }

  /// Accumulates row i of H with class classes[i] and target row i of Z, grouping
  /// rows by class into one matrix product per class.
  void accumulate_batch(const Matrix& h, std::span<const int> classes, const Matrix& z) {
    if (static_cast<std::size_t>(h.rows()) != classes.size() || z.rows() != h.rows())
      throw std::invalid_argument("AdirState::accumulate_batch: row counts differ");
    if (h.cols() != dim_ || z.cols() != kNumBins)
      throw std::invalid_argument("AdirState::accumulate_batch: dimension mismatch");
    if (!h.allFinite()) throw std::invalid_argument("AdirState::accumulate_batch: non-finite embedding");
    std::map<int, std::vector<Eigen::Index>> groups;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      check_sample(dim_, classes[i], kNumBins);
      groups[classes[i]].push_back(static_cast<Eigen::Index>(i));
    }
    for (const auto& [cls, rows] : groups) {
      Matrix hc(static_cast<Eigen::Index>(rows.size()), dim_);
      Matrix zc(static_cast<Eigen::Index>(rows.size()), kNumBins);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        hc.row(static_cast<Eigen::Index>(r)) = h.row(rows[r]);
        zc.row(static_cast<Eigen::Index>(r)) = z.row(rows[r]);
      }
      auto& s = slot(cls);
      s.auto_corr.noalias() += hc.transpose() * hc;
      s.cross_corr.noalias() += hc.transpose() * zc;
      s.count += static_cast<std::int64_t>(rows.size());
    }
  }

  /// Adds another shard's statistics (parallel reduction).
  void merge(const AdirState& other) {
    if (other.dim_ != dim_) throw std::invalid_argument("AdirState::merge: dimension mismatch");
    for (const auto& [cls, s] : other.stats_) {
      auto& mine = slot(cls);
      mine.auto_corr += s.auto_corr;
      mine.cross_corr += s.cross_corr;
      mine.count += s.count;
    }
  }

  /// Inserts statistics verbatim (used when restoring a snapshot).
  void restore(int cls, ClassStats stats) {
    if (stats.auto_corr.rows() != dim_ || stats.auto_corr.cols() != dim_ || stats.cross_corr.rows() != dim_ ||
        stats.cross_corr.cols() != kNumBins || stats.count < 1)
      throw std::invalid_argument("AdirState::restore: malformed class statistics");
    stats_[cls] = std::move(stats);
  }

  /// Weighted ridge solve with an explicit gamma.
  ClassifierWeights solve_with_gamma(double gamma, bool reweight) const {
    if (stats_.empty()) throw std::logic_error("AdirState::solve: no class has been accumulated");
    if (!(gamma > 0.0)) throw std::invalid_argument("AdirState::solve: gamma must be > 0");
    Matrix a = Matrix::Zero(dim_, dim_);
    Matrix c = Matrix::Zero(dim_, kNumBins);
    for (const auto& [cls, s] : stats_) {
      const double pi = reweight ? 1.0 / static_cast<double>(s.count) : 1.0;
      a.noalias() += pi * s.auto_corr;
      c.noalias() += pi * s.cross_corr;
    }
    a.diagonal().array() += gamma;
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0))
      throw NumericError("ADIR solve: regularized correlation matrix is not positive definite (NaN contamination?)");
    ClassifierWeights w;
    w.weight = llt.solve(c);
    if (!w.weight.allFinite()) throw NumericError("ADIR solve: non-finite classifier weights");
    w.gamma_used = gamma;
    return w;
  }

  /// Solve using the configured reweighting and gamma schedule for a task with
  /// imbalance `gini_t`.
  ClassifierWeights solve(double gini_t) const {
    const double gamma =
        options_.adaptive_gamma ? adaptive_gamma(gini_t, options_.gamma0, options_.reg_exponent) : options_.gamma0;
    ClassifierWeights w = solve_with_gamma(gamma, options_.reweight);
    w.gini_used = gini_t;
    return w;
  }

 private:
  void check_sample(Eigen::Index hdim, int cls, Eigen::Index zdim) const {
    if (hdim != dim_)
      throw std::invalid_argument("AdirState: embedding has " + std::to_string(hdim) + " entries, expected " +
                                  std::to_string(dim_));
    if (zdim != kNumBins) throw std::invalid_argument("AdirState: target must have 360 entries");
    if (cls < 0 || cls >= kNumBins) throw std::out_of_range("AdirState: class index out of range");
  }

  ClassStats& slot(int cls) {
    auto [it, inserted] = stats_.try_emplace(cls);
    if (inserted) {
      it->second.auto_corr = Matrix::Zero(dim_, dim_);
      it->second.cross_corr = Matrix::Zero(dim_, kNumBins);
    }
    return it->second;
  }

  int dim_;
  AdirOptions options_;
  std::map<int, ClassStats> stats_;
};

/// Logits W^T h.
inline Vector predict_logits(const Matrix& weight, const Vector& h) {
  if (weight.rows() != h.size()) throw std::invalid_argument("predict: dimension mismatch");
  return weight.transpose() * h;
}

/// First index of the maximum (smallest bin wins ties).
inline int argmax_bin(const Eigen::Ref<const Vector>& logits) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<int>(best);
}

inline int predict_doa(const Matrix& weight, const Vector& h) { return argmax_bin(predict_logits(weight, h)); }

/// Predicted DoA for every row of `logits` (N x 360).
inline std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace sslgcil
