#pragma once

// Long-tailed generalized class-incremental task construction.
//
// Classes are DoA bins drawn from a universe {0, s, 2s, ...} (s = class stride in
// degrees, 1 by default so the universe is all 360 bins). Task 1 holds
// `classes_per_task` new classes; tasks 2..T-1 hold `new_per_task` new classes
// plus reappearing ones drawn from everything seen so far; task T holds the
// remaining new classes (plus `final_reappearing` reappearing ones). Inside a
// task, classes are ranked by DoA and class rank c receives
// floor(N_max * exp(-lambda_t (c - 1))) training samples, lambda_t =
// lambda_start + lambda_step (t - 1).

#include "sslgcil/common.hpp"
#include "sslgcil/parallel.hpp"
#include "sslgcil/rng.hpp"
#include "sslgcil/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace sslgcil {

struct SignalConfig {
  ArrayGeometry geometry = ArrayGeometry::square();
  int frame_length = 8192;
  int max_lag = 25;
  /// Source azimuth is drawn uniformly within +/- this many degrees of the class
  /// bin. Half the class stride makes each class a contiguous sector.
  double azimuth_jitter_deg = 0.5;

  int feature_dim() const { return geometry.num_pairs() * (2 * max_lag + 1); }
};

struct BenchmarkConfig {
  int num_tasks = 10;
  int classes_per_task = 60;
  int new_per_task = 30;
  int final_reappearing = 0;
  int class_stride_deg = 1;
  double lambda_start = 0.05;
  double lambda_step = 0.05;
  int max_count = 500;
  double test_fraction = 0.2;
  int min_test = 2;
  double acc_tolerance_deg = 5.0;
  double augment_rate = 0.5;
  double augment_noise = 0.05;

  double lambda(int task_index) const { return lambda_start + lambda_step * task_index; }  // zero-based
  int universe_size() const { return kNumBins / class_stride_deg; }
};

struct ClassCounts {
  std::vector<int> counts;  ///< class rank order
  bool clamped = false;     ///< some count would have been zero and was raised to 1
};

/// floor(N_max * exp(-lambda (c - 1))) for c = 1..n, clamped to at least 1.
inline ClassCounts class_counts(double lambda, int max_count, int n_classes) {
  if (!(lambda > 0.0)) throw std::invalid_argument("class_counts: lambda must be > 0");
  if (max_count < 1 || n_classes < 1) throw std::invalid_argument("class_counts: max_count and n_classes must be >= 1");
  ClassCounts out;
  out.counts.resize(n_classes);
  for (int c = 0; c < n_classes; ++c) {
    int v = static_cast<int>(std::floor(max_count * std::exp(-lambda * c)));
    if (v < 1) {
      v = 1;
      out.clamped = true;
    }
    out.counts[c] = v;
  }
  return out;
}

/// Number of held-out test samples for a class with `train_count` training
/// samples: test_fraction of the class's generated total, at least min_test.
inline int test_count(const BenchmarkConfig& cfg, int train_count) {
  const double ratio = cfg.test_fraction / (1.0 - cfg.test_fraction);
  return std::max(cfg.min_test, static_cast<int>(std::ceil(ratio * train_count - 1e-9)));
}

struct TaskClasses {
  std::vector<int> classes;        ///< ascending DoA
  std::vector<bool> reappearing;   ///< parallel to classes
};

/// Throws ConfigError when the split rule cannot be satisfied.
inline void validate_split(const BenchmarkConfig& cfg) {
  if (cfg.num_tasks < 2) throw ConfigError("benchmark.num_tasks: must be >= 2");
  if (cfg.class_stride_deg < 1 || kNumBins % cfg.class_stride_deg != 0)
    throw ConfigError("benchmark.class_stride_deg: must divide 360");
  if (cfg.classes_per_task < 1) throw ConfigError("benchmark.classes_per_task: must be >= 1");
  if (cfg.new_per_task < 1 || cfg.new_per_task > cfg.classes_per_task)
    throw ConfigError("benchmark.new_per_task: must be in [1, classes_per_task]");
  const int universe = cfg.universe_size();
  const int used = cfg.classes_per_task + (cfg.num_tasks - 2) * cfg.new_per_task;
  const int remaining = universe - used;
  if (remaining < 1 || remaining > cfg.classes_per_task)
    throw ConfigError("benchmark: class budget does not exhaust the " + std::to_string(universe) +
                      "-class universe in the final task (remaining " + std::to_string(remaining) + ")");
  const int reappearing = cfg.classes_per_task - cfg.new_per_task;
  if (reappearing > cfg.classes_per_task) throw ConfigError("benchmark.new_per_task: inconsistent split");
  if (cfg.final_reappearing < 0 || cfg.final_reappearing > used)
    throw ConfigError("benchmark.final_reappearing: out of range");
}

/// Class lists for every task. Deterministic in `rng`.
inline std::vector<TaskClasses> assign_classes(const BenchmarkConfig& cfg, Rng& rng) {
  validate_split(cfg);
  std::vector<int> unused;
  for (int b = 0; b < kNumBins; b += cfg.class_stride_deg) unused.push_back(b);
  std::shuffle(unused.begin(), unused.end(), rng);
  std::size_t next = 0;
  std::set<int> seen;

  auto take_new = [&](int n, TaskClasses& tc) {
    for (int i = 0; i < n; ++i) {
      tc.classes.push_back(unused[next++]);
      tc.reappearing.push_back(false);
    }
  };
  auto take_old = [&](int n, TaskClasses& tc) {
    std::vector<int> pool(seen.begin(), seen.end());
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int i = 0; i < n && i < static_cast<int>(pool.size()); ++i) {
      tc.classes.push_back(pool[i]);
      tc.reappearing.push_back(true);
    }
  };

  std::vector<TaskClasses> tasks(cfg.num_tasks);
  for (int t = 0; t < cfg.num_tasks; ++t) {
    auto& tc = tasks[t];
    if (t == 0) {
      take_new(cfg.classes_per_task, tc);
    } else if (t < cfg.num_tasks - 1) {
      take_old(cfg.classes_per_task - cfg.new_per_task, tc);
      take_new(cfg.new_per_task, tc);
    } else {
      take_old(cfg.final_reappearing, tc);
      take_new(static_cast<int>(unused.size() - next), tc);
    }
    // Sort by DoA, carrying the annotation along.
    std::vector<std::size_t> order(tc.classes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return tc.classes[a] < tc.classes[b]; });
    TaskClasses sorted;
    for (auto i : order) {
      sorted.classes.push_back(tc.classes[i]);
      sorted.reappearing.push_back(tc.reappearing[i]);
    }
    tc = std::move(sorted);
    for (int c : tc.classes) seen.insert(c);
  }
  if (next != unused.size()) throw ConfigError("benchmark: class universe not exhausted");
  return tasks;
}

/// Where a generated sample came from; enough to regenerate its frame.
struct SampleOrigin {
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
  double azimuth_deg = 0.0;
};

struct Task {
  int index = 0;  ///< zero-based
  double lambda = 0.0;
  std::vector<int> classes;
  std::vector<bool> reappearing;
  std::vector<int> counts;  ///< training samples per class, parallel to classes
  bool clamped = false;
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
  std::vector<SampleOrigin> train_origin;  ///< empty when loaded from disk
  std::vector<SampleOrigin> test_origin;
};

struct TaskSequence {
  std::vector<Task> tasks;
};

/// Draws the source azimuth for a sample and synthesizes its feature.
inline GccFeature generate_feature(const SignalConfig& sig, double azimuth_deg, std::uint64_t seed,
                                   std::optional<double> snr_db) {
  Rng rng(seed);
  const MultichannelFrame frame = synth_frame(sig.geometry, azimuth_deg, snr_db, sig.frame_length, rng);
  return extract_features(frame, sig.geometry, sig.max_lag);
}

inline double sample_azimuth(const SignalConfig& sig, int cls, std::uint64_t seed) {
  if (sig.azimuth_jitter_deg <= 0.0) return cls;
  Rng rng(derive_seed(seed, {seed_tag::kJitter}));
  std::uniform_real_distribution<double> u(-sig.azimuth_jitter_deg, sig.azimuth_jitter_deg);
  return cls + u(rng);
}

/// Builds the task sequence and synthesizes every clean train/test frame.
/// Generation is parallel over samples, each with its own derived seed.
inline TaskSequence build_tasks(const SignalConfig& sig, const BenchmarkConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {seed_tag::kTasks}));
  const auto assignment = assign_classes(cfg, rng);

  TaskSequence seq;
  struct Job {
    int task;
    bool test;
    std::size_t slot;
    int cls;
  };
  std::vector<Job> jobs;
  std::uint64_t next_id = 0;
  for (int t = 0; t < cfg.num_tasks; ++t) {
    Task task;
    task.index = t;
    task.lambda = cfg.lambda(t);
    task.classes = assignment[t].classes;
    task.reappearing = assignment[t].reappearing;
    const ClassCounts counts = class_counts(task.lambda, cfg.max_count, static_cast<int>(task.classes.size()));
    task.counts = counts.counts;
    task.clamped = counts.clamped;
    for (std::size_t c = 0; c < task.classes.size(); ++c) {
      const int cls = task.classes[c];
      const int n_train = task.counts[c];
      const int n_test = test_count(cfg, n_train);
      for (int i = 0; i < n_train + n_test; ++i) {
        const bool is_test = i >= n_train;
        SampleOrigin origin;
        origin.id = next_id++;
        origin.seed = derive_seed(seed, {seed_tag::kSamples, static_cast<std::uint64_t>(t),
                                         static_cast<std::uint64_t>(cls), static_cast<std::uint64_t>(i)});
        origin.azimuth_deg = sample_azimuth(sig, cls, origin.seed);
        LabeledSample s;
        s.doa_deg = cls;
        auto& dst = is_test ? task.test : task.train;
        auto& dst_origin = is_test ? task.test_origin : task.train_origin;
        jobs.push_back({t, is_test, dst.size(), cls});
        dst.push_back(std::move(s));
        dst_origin.push_back(origin);
      }
    }
    seq.tasks.push_back(std::move(task));
  }

  parallel_for(jobs.size(), [&](std::size_t j) {
    const Job& job = jobs[j];
    Task& task = seq.tasks[job.task];
    const SampleOrigin& o = job.test ? task.test_origin[job.slot] : task.train_origin[job.slot];
    auto& s = job.test ? task.test[job.slot] : task.train[job.slot];
    s.feature = generate_feature(sig, o.azimuth_deg, o.seed, std::nullopt);
  });
  return seq;
}

/// Test sets of every task regenerated from the same seeds with additive noise
/// at `snr_db` (nullopt reproduces the clean features).
inline std::vector<std::vector<LabeledSample>> regenerate_tests(const TaskSequence& seq, const SignalConfig& sig,
                                                                std::optional<double> snr_db) {
  std::vector<std::vector<LabeledSample>> out;
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t t = 0; t < seq.tasks.size(); ++t) {
    const Task& task = seq.tasks[t];
    if (task.test_origin.size() != task.test.size())
      throw MissingInputError("noisy test regeneration needs sample seeds; dataset was loaded without them");
    out.push_back(task.test);
    for (std::size_t i = 0; i < task.test.size(); ++i) jobs.emplace_back(t, i);
  }
  parallel_for(jobs.size(), [&](std::size_t j) {
    const auto [t, i] = jobs[j];
    const SampleOrigin& o = seq.tasks[t].test_origin[i];
    out[t][i].feature = generate_feature(sig, o.azimuth_deg, o.seed, snr_db);
  });
  return out;
}

}  // namespace sslgcil
