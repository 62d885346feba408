#pragma once

// GCC-PHAT peak-statistics augmentation for tail classes.
//
// Tail classes (fewer than alpha * M_t samples, M_t the largest class count in
// the task) receive K_c = ceil(alpha * M_t - N_c) synthetic samples. Each is
// built from a feature of the nearest abundant class (by circular DoA): every
// pair segment is cyclically shifted so the donor peak lands on the tail
// class's mean peak position, rescaled to the tail class's mean peak
// amplitude, and perturbed with low-level Gaussian noise.

#include "sslgcil/common.hpp"
#include "sslgcil/rng.hpp"
#include "sslgcil/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace sslgcil {

/// Per-segment peak statistics of one class.
struct ClassPeakStats {
  int count = 0;
  std::vector<double> mean_pos;  ///< mean argmax lag-bin index per segment
  std::vector<double> std_pos;
  std::vector<double> mean_amp;  ///< mean value at the argmax per segment
  std::vector<double> std_amp;
};

struct PeakStats {
  int pairs = 0;
  int lag_bins = 0;
  std::map<int, ClassPeakStats> classes;  ///< keyed by DoA bin
};

/// Index of the first maximum.
inline int argmax(std::span<const double> x) {
  return static_cast<int>(std::distance(x.begin(), std::max_element(x.begin(), x.end())));
}

/// Mean and population standard deviation of argmax position and peak value,
/// per class and segment.
inline PeakStats peak_stats(const std::vector<LabeledSample>& task_data, int pairs, int lag_bins) {
  if (task_data.empty()) throw std::invalid_argument("peak_stats: empty task data");
  PeakStats stats;
  stats.pairs = pairs;
  stats.lag_bins = lag_bins;

  struct Acc {
    int n = 0;
    std::vector<double> pos_sum, pos_sq, amp_sum, amp_sq;
  };
  std::map<int, Acc> acc;
  for (const auto& s : task_data) {
    if (s.feature.pairs() != pairs || s.feature.lag_bins() != lag_bins)
      throw std::invalid_argument("peak_stats: feature shape mismatch");
    auto& a = acc[s.doa_deg];
    if (a.n == 0) {
      a.pos_sum.assign(pairs, 0.0);
      a.pos_sq.assign(pairs, 0.0);
      a.amp_sum.assign(pairs, 0.0);
      a.amp_sq.assign(pairs, 0.0);
    }
    ++a.n;
    for (int k = 0; k < pairs; ++k) {
      const auto seg = s.feature.segment(k);
      const int p = argmax(seg);
      const double amp = seg[p];
      a.pos_sum[k] += p;
      a.pos_sq[k] += static_cast<double>(p) * p;
      a.amp_sum[k] += amp;
      a.amp_sq[k] += amp * amp;
    }
  }

  for (const auto& [cls, a] : acc) {
    ClassPeakStats c;
    c.count = a.n;
    c.mean_pos.resize(pairs);
    c.std_pos.resize(pairs);
    c.mean_amp.resize(pairs);
    c.std_amp.resize(pairs);
    const double n = a.n;
    for (int k = 0; k < pairs; ++k) {
      c.mean_pos[k] = a.pos_sum[k] / n;
      c.mean_amp[k] = a.amp_sum[k] / n;
      c.std_pos[k] = a.n == 1 ? 0.0 : std::sqrt(std::max(0.0, a.pos_sq[k] / n - c.mean_pos[k] * c.mean_pos[k]));
      c.std_amp[k] = a.n == 1 ? 0.0 : std::sqrt(std::max(0.0, a.amp_sq[k] / n - c.mean_amp[k] * c.mean_amp[k]));
    }
    stats.classes.emplace(cls, std::move(c));
  }
  return stats;
}

struct PlanEntry {
  int cls = 0;
  int deficit = 0;  ///< K_c
  int donor = 0;    ///< c'
};

struct AugmentPlan {
  double alpha = 0.5;
  int max_count = 0;  ///< M_t
  std::vector<PlanEntry> entries;  ///< ascending class index
  bool no_donor = false;           ///< tail classes existed but no class met the threshold
  std::vector<int> low_support;    ///< planned classes with fewer than 3 real samples
};

/// Classes with N_c < alpha * M_t get K_c = ceil(alpha * M_t - N_c) samples from
/// the circularly nearest class with N >= alpha * M_t (ties to the smaller index).
inline AugmentPlan plan(const PeakStats& stats, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("plan: alpha must be in (0, 1]");
  AugmentPlan out;
  out.alpha = alpha;
  for (const auto& [cls, c] : stats.classes) out.max_count = std::max(out.max_count, c.count);
  const double threshold = alpha * out.max_count;

  std::vector<int> donors;
  for (const auto& [cls, c] : stats.classes)
    if (c.count >= threshold) donors.push_back(cls);

  for (const auto& [cls, c] : stats.classes) {
    if (!(c.count < threshold)) continue;
    if (donors.empty()) {
      out.no_donor = true;
      continue;
    }
    int best = donors.front();
    for (int d : donors)
      if (bin_distance(d, cls) < bin_distance(best, cls)) best = d;  // donors ascending: ties keep smaller
    const int deficit = static_cast<int>(std::ceil(threshold - c.count - 1e-9));
    out.entries.push_back({cls, deficit, best});
    if (c.count < 3) out.low_support.push_back(cls);
  }
  if (out.no_donor) {
    out.entries.clear();
    out.low_support.clear();
  }
  return out;
}

/// Target statistics for one augmented sample.
struct SegmentTarget {
  double pos = 0.0;  ///< p_{c,k}
  double amp = 0.0;  ///< a_{c,k}
};

/// Builds one synthetic feature from a donor-class base feature. Per segment:
/// cyclic shift by round(target.pos - donor_pos), rescale so the segment max
/// equals target.amp, add N(0, noise_ratio * max(base segment)), clamp to [-1, 1].
inline GccFeature augment_sample(const GccFeature& base, std::span<const SegmentTarget> target,
                                 std::span<const double> donor_pos, Rng& rng, double noise_ratio = 0.05) {
  const int pairs = base.pairs();
  const int bins = base.lag_bins();
  if (static_cast<int>(target.size()) != pairs || static_cast<int>(donor_pos.size()) != pairs)
    throw std::invalid_argument("augment_sample: statistics size does not match segment count");
  GccFeature out(pairs, bins);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int k = 0; k < pairs; ++k) {
    const auto src = base.segment(k);
    auto dst = out.segment(k);
    const long shift = std::lround(target[k].pos - donor_pos[k]);
    for (int i = 0; i < bins; ++i) {
      const long j = ((i + shift) % bins + bins) % bins;
      dst[j] = src[i];
    }
    const double seg_max = *std::max_element(dst.begin(), dst.end());
    if (seg_max > 1e-9) {
      const double scale = target[k].amp / seg_max;
      for (double& v : dst) v *= scale;
    }
    const double sigma = noise_ratio * *std::max_element(src.begin(), src.end());
    for (double& v : dst) {
      if (sigma > 0.0) v += sigma * normal(rng);
      v = std::clamp(v, -1.0, 1.0);
    }
  }
  return out;
}

struct AugmentResult {
  std::vector<LabeledSample> samples;  ///< originals first, then synthetic in (class, draw) order
  AugmentPlan plan;
  int generated = 0;
};

/// Augments one task. Statistics come from the un-augmented data; every
/// planned class draws from its own derived stream so output is independent of
/// scheduling.
inline AugmentResult augment_task(const std::vector<LabeledSample>& task_data, double alpha, Rng& rng,
                                  double noise_ratio = 0.05) {
  AugmentResult result;
  result.samples = task_data;
  if (task_data.empty()) return result;
  const int pairs = task_data.front().feature.pairs();
  const int bins = task_data.front().feature.lag_bins();
  const PeakStats stats = peak_stats(task_data, pairs, bins);
  result.plan = plan(stats, alpha);
  const std::uint64_t base_seed = rng();

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < task_data.size(); ++i) members[task_data[i].doa_deg].push_back(i);

  for (const auto& entry : result.plan.entries) {
    Rng class_rng(derive_seed(base_seed, {static_cast<std::uint64_t>(entry.cls)}));
    const auto& target_stats = stats.classes.at(entry.cls);
    const auto& donor_stats = stats.classes.at(entry.donor);
    std::vector<SegmentTarget> target(pairs);
    for (int k = 0; k < pairs; ++k) target[k] = {target_stats.mean_pos[k], target_stats.mean_amp[k]};
    const auto& pool = members.at(entry.donor);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int d = 0; d < entry.deficit; ++d) {
      const auto& base = task_data[pool[pick(class_rng)]];
      LabeledSample s;
      s.feature = augment_sample(base.feature, target, donor_stats.mean_pos, class_rng, noise_ratio);
      s.doa_deg = entry.cls;
      result.samples.push_back(std::move(s));
      ++result.generated;
    }
  }
  return result;
}

}  // namespace sslgcil
