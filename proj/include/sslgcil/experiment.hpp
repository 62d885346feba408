#pragma once

// End-to-end incremental pipeline: augment -> train/freeze backbone on task 1
// -> per-task classifier update -> accuracy matrix. Also the SNR sweep and the
// CSV / JSON report writers.
//
// Units: AccuracyMatrix holds fractions; EvalReport summaries and every CSV
// report ACC and BWT in percent (points), MAE in degrees.

#include "sslgcil/adir.hpp"
#include "sslgcil/augment.hpp"
#include "sslgcil/backbone.hpp"
#include "sslgcil/benchmark.hpp"
#include "sslgcil/config.hpp"
#include "sslgcil/metrics.hpp"

#include <chrono>
#include <cstdio>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace sslgcil {

// ---------------------------------------------------------------------------
// data plumbing

inline Matrix feature_matrix(const std::vector<LabeledSample>& samples) {
  if (samples.empty()) return Matrix(0, 0);
  const auto dim = static_cast<Eigen::Index>(samples.front().feature.size());
  Matrix x(static_cast<Eigen::Index>(samples.size()), dim);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& v = samples[i].feature.values();
    if (static_cast<Eigen::Index>(v.size()) != dim) throw std::invalid_argument("feature_matrix: ragged features");
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(v.data(), dim);
  }
  return x;
}

inline std::vector<int> class_vector(const std::vector<LabeledSample>& samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.doa_deg);
  return out;
}

/// Gaussian-smoothed targets, one row per class entry.
inline Matrix target_matrix(std::span<const int> classes) {
  std::map<int, Vector> cache;
  Matrix z(static_cast<Eigen::Index>(classes.size()), kNumBins);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    auto it = cache.find(classes[i]);
    if (it == cache.end()) it = cache.emplace(classes[i], gaussian_label(classes[i])).first;
    z.row(static_cast<Eigen::Index>(i)) = it->second.transpose();
  }
  return z;
}

/// Per-class counts of a sample list, in ascending class order.
inline std::vector<int> counts_by_class(std::span<const int> classes) {
  std::map<int, int> m;
  for (int c : classes) ++m[c];
  std::vector<int> out;
  for (const auto& [_, n] : m) out.push_back(n);
  return out;
}

class Timings {
 public:
  void add(const std::string& stage, double seconds) { stages_.emplace_back(stage, seconds); }
  const std::vector<std::pair<std::string, double>>& stages() const { return stages_; }

  template <class Fn>
  auto time(const std::string& stage, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    struct Finish {
      Timings* self;
      const std::string& stage;
      std::chrono::steady_clock::time_point start;
      ~Finish() {
        self->add(stage, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      }
    } finish{this, stage, start};
    return fn();
  }

 private:
  std::vector<std::pair<std::string, double>> stages_;
};

/// Runs `fn`, prefixing any error with the pipeline stage name. Precondition
/// violations inside a stage surface as numeric failures.
template <class Fn>
auto in_stage(const std::string& stage, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), stage + ": " + e.what());
  } catch (const std::exception& e) {
    throw NumericError(stage + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// stage 1: augmentation, backbone, embeddings

struct PreparedTasks {
  std::vector<std::vector<LabeledSample>> train;  ///< per task; augmented when GDA is on
  std::vector<AugmentPlan> plans;
  std::vector<int> generated;
};

inline PreparedTasks prepare_training(const TaskSequence& seq, const ExperimentConfig& cfg) {
  PreparedTasks out;
  out.train.resize(seq.tasks.size());
  out.plans.resize(seq.tasks.size());
  out.generated.assign(seq.tasks.size(), 0);
  parallel_for(seq.tasks.size(), [&](std::size_t t) {
    if (!cfg.flags.gda) {
      out.train[t] = seq.tasks[t].train;
      return;
    }
    Rng rng(derive_seed(cfg.seed, {seed_tag::kAugment, static_cast<std::uint64_t>(t)}));
    AugmentResult r = augment_task(seq.tasks[t].train, cfg.benchmark.augment_rate, rng, cfg.benchmark.augment_noise);
    out.train[t] = std::move(r.samples);
    out.plans[t] = std::move(r.plan);
    out.generated[t] = r.generated;
  });
  return out;
}

inline Matrix embed_parallel(const MlpParams& mlp, const Matrix& x) {
  constexpr Eigen::Index kChunk = 256;
  Matrix h(x.rows(), mlp.hidden_dim());
  const auto chunks = static_cast<std::size_t>((x.rows() + kChunk - 1) / kChunk);
  parallel_for(chunks, [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kChunk;
    const Eigen::Index n = std::min(kChunk, x.rows() - begin);
    h.middleRows(begin, n) = embed(mlp, x.middleRows(begin, n));
  });
  return h;
}

/// Everything that depends only on the data, the GDA switch and whether the
/// backbone is trained on task 1 or on all tasks pooled. Shared between
/// ablation cells.
struct FrozenStage {
  bool gda = false;
  bool pooled = false;
  PreparedTasks data;
  TrainedBackbone backbone;
  std::vector<Matrix> train_h;
  std::vector<std::vector<int>> train_classes;
  std::vector<Matrix> test_h;  ///< clean test embeddings
  std::vector<std::vector<int>> test_classes;
};

inline std::shared_ptr<FrozenStage> build_stage(const TaskSequence& seq, const ExperimentConfig& cfg,
                                                Timings* timings = nullptr) {
  Timings local;
  Timings& tm = timings ? *timings : local;
  auto stage = std::make_shared<FrozenStage>();
  stage->gda = cfg.flags.gda;
  stage->pooled = cfg.baseline == Baseline::kJointUpperBound;
  stage->data = tm.time("augment", [&] { return in_stage("augment", [&] { return prepare_training(seq, cfg); }); });

  tm.time("backbone", [&] {
    in_stage("backbone", [&] {
      std::vector<LabeledSample> pool;
      if (stage->pooled) {
        for (const auto& t : stage->data.train) pool.insert(pool.end(), t.begin(), t.end());
      } else {
        pool = stage->data.train.front();
      }
      const Matrix x = feature_matrix(pool);
      const auto cls = class_vector(pool);
      stage->backbone = train_task1(x, target_matrix(cls), cfg.backbone.hidden_dim, cfg.train_config());
      return 0;
    });
    return 0;
  });

  tm.time("embed", [&] {
    for (std::size_t t = 0; t < seq.tasks.size(); ++t) {
      stage->train_h.push_back(embed_parallel(stage->backbone.net.mlp, feature_matrix(stage->data.train[t])));
      stage->train_classes.push_back(class_vector(stage->data.train[t]));
      stage->test_h.push_back(embed_parallel(stage->backbone.net.mlp, feature_matrix(seq.tasks[t].test)));
      stage->test_classes.push_back(class_vector(seq.tasks[t].test));
    }
    return 0;
  });
  return stage;
}

// ---------------------------------------------------------------------------
// stage 2: classifiers

struct AffineClassifier {
  Matrix weight;  ///< h x 360
  Vector bias;    ///< 360, or empty for none

  Matrix logits(const Matrix& h) const {
    Matrix out = h * weight;
    if (bias.size() > 0) out.rowwise() += bias.transpose();
    return out;
  }
};

struct TaskLog {
  int task = 0;  ///< one-based
  int classes = 0;
  int new_classes = 0;
  int reappearing = 0;
  int train_samples = 0;  ///< after augmentation
  int augmented = 0;
  double lambda = 0.0;
  double gini = 0.0;  ///< over the counts actually used in this task
  std::optional<double> gamma;
  bool count_clamped = false;
  bool no_donor = false;
  std::vector<int> low_support;
};

struct TrainedModel {
  std::vector<AffineClassifier> classifiers;  ///< state after each task
  std::vector<TaskLog> logs;
  std::optional<AdirState> adir;
};

inline TaskLog task_log(const TaskSequence& seq, const FrozenStage& stage, std::size_t t) {
  const Task& task = seq.tasks[t];
  TaskLog log;
  log.task = static_cast<int>(t) + 1;
  log.classes = static_cast<int>(task.classes.size());
  for (bool r : task.reappearing) (r ? log.reappearing : log.new_classes) += 1;
  log.train_samples = static_cast<int>(stage.train_classes[t].size());
  log.augmented = stage.data.generated[t];
  log.lambda = task.lambda;
  const auto counts = counts_by_class(stage.train_classes[t]);
  log.gini = gini(std::span<const int>(counts));
  log.count_clamped = task.clamped;
  log.no_donor = stage.data.plans[t].no_donor;
  log.low_support = stage.data.plans[t].low_support;
  return log;
}

inline TrainedModel fit_classifiers(const TaskSequence& seq, const FrozenStage& stage, const ExperimentConfig& cfg) {
  const std::size_t n_tasks = seq.tasks.size();
  const int hidden = cfg.backbone.hidden_dim;
  TrainedModel model;
  for (std::size_t t = 0; t < n_tasks; ++t) model.logs.push_back(task_log(seq, stage, t));

  switch (cfg.baseline) {
    case Baseline::kAdir: {
      AdirState state(hidden, cfg.adir_options());
      for (std::size_t t = 0; t < n_tasks; ++t) {
        const auto& cls = stage.train_classes[t];
        state.accumulate_batch(stage.train_h[t], cls, target_matrix(cls));
        const ClassifierWeights w = state.solve(model.logs[t].gini);
        model.logs[t].gamma = w.gamma_used;
        model.classifiers.push_back({w.weight, Vector()});
      }
      model.adir = std::move(state);
      break;
    }
    case Baseline::kJointUpperBound: {
      AdirState state(hidden, cfg.adir_options());
      std::vector<int> all;
      for (std::size_t t = 0; t < n_tasks; ++t) {
        const auto& cls = stage.train_classes[t];
        state.accumulate_batch(stage.train_h[t], cls, target_matrix(cls));
        all.insert(all.end(), cls.begin(), cls.end());
      }
      const auto counts = counts_by_class(all);
      const ClassifierWeights w = state.solve(gini(std::span<const int>(counts)));
      for (std::size_t t = 0; t < n_tasks; ++t) {
        model.logs[t].gamma = w.gamma_used;
        model.classifiers.push_back({w.weight, Vector()});
      }
      model.adir = std::move(state);
      break;
    }
    case Baseline::kLowerBoundFinetune: {
      // Naive fine-tuning: start from the head trained with the backbone on
      // task 1, then keep training it on each new task's data alone.
      HeadParams head = stage.backbone.net.head;
      model.classifiers.push_back({head.weight, head.bias});
      for (std::size_t t = 1; t < n_tasks; ++t) {
        TrainConfig tc = cfg.train_config();
        tc.seed = derive_seed(cfg.seed, {seed_tag::kHead, static_cast<std::uint64_t>(t)});
        train_head(head, stage.train_h[t], target_matrix(stage.train_classes[t]), tc);
        model.classifiers.push_back({head.weight, head.bias});
      }
      break;
    }
    case Baseline::kLowerBoundStatic: {
      const auto& head = stage.backbone.net.head;
      for (std::size_t t = 0; t < n_tasks; ++t) model.classifiers.push_back({head.weight, head.bias});
      break;
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalReport {
  std::string method;  ///< adir | lower_bound | lower_bound_static | upper_bound
  Baseline baseline = Baseline::kAdir;
  MethodFlags flags;
  std::string condition = "clean";
  AccuracyMatrix acc;  ///< fractions
  AccuracyMatrix mae;  ///< degrees
  double final_acc = 0.0;  ///< percent, over the union of all test sets
  double final_mae = 0.0;  ///< degrees
  std::optional<double> bwt;  ///< percent points; absent for the joint upper bound
  std::vector<TaskLog> tasks;
  Json config;
  std::string config_hash;
  std::uint64_t backbone_checksum = 0;
};

inline std::string method_tag(Baseline b) {
  switch (b) {
    case Baseline::kAdir: return "adir";
    case Baseline::kLowerBoundFinetune: return "lower_bound";
    case Baseline::kLowerBoundStatic: return "lower_bound_static";
    case Baseline::kJointUpperBound: return "upper_bound";
  }
  return "adir";
}

inline EvalReport evaluate(const TrainedModel& model, const std::vector<Matrix>& test_h,
                           const std::vector<std::vector<int>>& test_classes, const ExperimentConfig& cfg,
                           const std::string& condition) {
  const int n_tasks = static_cast<int>(model.classifiers.size());
  if (static_cast<int>(test_h.size()) != n_tasks) throw std::invalid_argument("evaluate: task count mismatch");
  const double tol = cfg.benchmark.acc_tolerance_deg;
  EvalReport r;
  r.method = method_tag(cfg.baseline);
  r.baseline = cfg.baseline;
  r.flags = cfg.flags;
  r.condition = condition;
  r.acc = AccuracyMatrix(n_tasks);
  r.mae = AccuracyMatrix(n_tasks);
  r.tasks = model.logs;
  r.config = config_to_json(cfg);
  r.config_hash = config_hash(cfg);

  for (int m = 0; m < n_tasks; ++m) {
    for (int k = 0; k <= m; ++k) {
      const auto pred = argmax_rows(model.classifiers[m].logits(test_h[k]));
      const DoaMetrics d = doa_metrics(pred, test_classes[k], tol);
      r.acc.set(m, k, d.acc);
      r.mae.set(m, k, d.mae);
    }
  }
  std::vector<int> pred_all, true_all;
  for (int k = 0; k < n_tasks; ++k) {
    const auto pred = argmax_rows(model.classifiers.back().logits(test_h[k]));
    pred_all.insert(pred_all.end(), pred.begin(), pred.end());
    true_all.insert(true_all.end(), test_classes[k].begin(), test_classes[k].end());
  }
  const DoaMetrics final = doa_metrics(pred_all, true_all, tol);
  r.final_acc = 100.0 * final.acc;
  r.final_mae = final.mae;
  if (cfg.baseline != Baseline::kJointUpperBound) r.bwt = 100.0 * backward_transfer(r.acc);
  return r;
}

struct RunResult {
  EvalReport report;
  std::shared_ptr<const FrozenStage> stage;
  TrainedModel model;
  Timings timings;
};

/// Runs the configured method on an existing task sequence. A compatible
/// `stage` (same GDA switch and backbone regime) is reused instead of retrained.
inline RunResult run_experiment(const ExperimentConfig& cfg, const TaskSequence& seq,
                                std::shared_ptr<const FrozenStage> stage = nullptr) {
  RunResult out;
  const bool pooled = cfg.baseline == Baseline::kJointUpperBound;
  if (!stage || stage->gda != cfg.flags.gda || stage->pooled != pooled) stage = build_stage(seq, cfg, &out.timings);
  out.stage = stage;
  out.model = out.timings.time("classifier", [&] {
    return in_stage("classifier", [&] { return fit_classifiers(seq, *stage, cfg); });
  });
  out.report = out.timings.time("evaluate", [&] {
    return in_stage("evaluate", [&] { return evaluate(out.model, stage->test_h, stage->test_classes, cfg, "clean"); });
  });
  out.report.backbone_checksum = checksum(stage->backbone.net.mlp);
  return out;
}

inline TaskSequence generate_tasks(const ExperimentConfig& cfg) {
  return in_stage("build_tasks", [&] { return build_tasks(cfg.signal, cfg.benchmark, cfg.seed); });
}

/// Evaluates a trained run on replacement test sets (same tasks and labels).
inline EvalReport evaluate_on(const ExperimentConfig& cfg, const RunResult& run,
                              const std::vector<std::vector<LabeledSample>>& tests, const std::string& condition) {
  std::vector<Matrix> h;
  for (const auto& t : tests) h.push_back(embed_parallel(run.stage->backbone.net.mlp, feature_matrix(t)));
  EvalReport r = evaluate(run.model, h, run.stage->test_classes, cfg, condition);
  r.backbone_checksum = run.report.backbone_checksum;
  return r;
}

/// Re-evaluates a clean-trained model on test frames regenerated at each SNR.
/// The clean condition reuses the stored clean embeddings.
inline std::vector<EvalReport> snr_sweep(const ExperimentConfig& cfg, const TaskSequence& seq, const RunResult& run,
                                         const std::vector<SnrCondition>& snr_list) {
  std::vector<EvalReport> out;
  for (const auto& snr : snr_list) {
    if (!snr) {
      EvalReport r = evaluate(run.model, run.stage->test_h, run.stage->test_classes, cfg, "clean");
      r.backbone_checksum = run.report.backbone_checksum;
      out.push_back(std::move(r));
    } else {
      const auto tests = in_stage("sweep", [&] { return regenerate_tests(seq, cfg.signal, snr); });
      out.push_back(evaluate_on(cfg, run, tests, snr_label(snr)));
    }
  }
  return out;
}

struct SummaryRow {
  std::string label;
  double mae = 0.0;
  double acc = 0.0;
  std::optional<double> bwt;
};

inline SummaryRow average_row(const std::vector<EvalReport>& reports) {
  SummaryRow avg{"Avg.", 0.0, 0.0, 0.0};
  if (reports.empty()) return avg;
  for (const auto& r : reports) {
    avg.mae += r.final_mae;
    avg.acc += r.final_acc;
    if (r.bwt) *avg.bwt += *r.bwt;
    else avg.bwt.reset();
  }
  const double n = static_cast<double>(reports.size());
  avg.mae /= n;
  avg.acc /= n;
  if (avg.bwt) *avg.bwt /= n;
  return avg;
}

// ---------------------------------------------------------------------------
// writers

inline std::string fixed6(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string fixed6(const std::optional<double>& v) { return v ? fixed6(*v) : std::string(); }

inline std::string summary_line(const EvalReport& r) {
  return "ACC=" + fixed6(r.final_acc) + " MAE=" + fixed6(r.final_mae) + " BWT=" + (r.bwt ? fixed6(*r.bwt) : "nan");
}

inline Json report_to_json(const EvalReport& r) {
  auto matrix = [](const AccuracyMatrix& a) {
    Json rows = Json::array();
    for (int m = 0; m < a.tasks(); ++m) {
      Json row = Json::array();
      for (int k = 0; k <= m; ++k) row.push_back(a.at(m, k));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  Json j;
  j["format"] = "ssl-gcil-report-v1";
  j["method"] = r.method;
  j["baseline"] = to_string(r.baseline);
  j["flags"] = {{"gda", r.flags.gda}, {"arm", r.flags.arm_reweight}, {"adaptive", r.flags.adaptive_gamma}};
  j["condition"] = r.condition;
  j["summary"] = {{"acc_pct", r.final_acc}, {"mae_deg", r.final_mae}};
  j["summary"]["bwt_pct"] = r.bwt ? Json(*r.bwt) : Json(nullptr);
  j["acc_matrix"] = matrix(r.acc);
  j["mae_matrix"] = matrix(r.mae);
  Json tasks = Json::array();
  for (const auto& t : r.tasks) {
    Json tj;
    tj["task"] = t.task;
    tj["classes"] = t.classes;
    tj["new_classes"] = t.new_classes;
    tj["reappearing"] = t.reappearing;
    tj["train_samples"] = t.train_samples;
    tj["augmented"] = t.augmented;
    tj["lambda"] = t.lambda;
    tj["gini"] = t.gini;
    tj["gamma"] = t.gamma ? Json(*t.gamma) : Json(nullptr);
    tj["count_clamped"] = t.count_clamped;
    tj["augment_no_donor"] = t.no_donor;
    tj["low_support_classes"] = t.low_support;
    tasks.push_back(std::move(tj));
  }
  j["tasks"] = std::move(tasks);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(r.backbone_checksum));
  j["backbone_checksum"] = hex;
  j["config_hash"] = r.config_hash;
  j["config"] = r.config;
  return j;
}

/// Rows m, columns k; entries above the diagonal are empty.
inline std::string acc_matrix_csv(const EvalReport& r) {
  const int n = r.acc.tasks();
  std::string out = "m";
  for (int k = 1; k <= n; ++k) out += ",k" + std::to_string(k);
  out += "\n";
  for (int m = 0; m < n; ++m) {
    out += std::to_string(m + 1);
    for (int k = 0; k < n; ++k) out += "," + (k <= m ? fixed6(r.acc.at(m, k)) : std::string());
    out += "\n";
  }
  return out;
}

inline std::string summary_csv(const std::vector<EvalReport>& reports) {
  const int n = reports.empty() ? 0 : static_cast<int>(reports.front().tasks.size());
  std::string out = "method,gda,arm,adaptive,condition,ACC,MAE,BWT";
  for (int t = 1; t <= n; ++t) out += ",gamma_" + std::to_string(t);
  for (int t = 1; t <= n; ++t) out += ",gini_" + std::to_string(t);
  out += "\n";
  for (const auto& r : reports) {
    out += r.method + "," + (r.flags.gda ? "1" : "0") + "," + (r.flags.arm_reweight ? "1" : "0") + "," +
           (r.flags.adaptive_gamma ? "1" : "0") + "," + r.condition + "," + fixed6(r.final_acc) + "," +
           fixed6(r.final_mae) + "," + fixed6(r.bwt);
    for (const auto& t : r.tasks) out += "," + fixed6(t.gamma);
    for (const auto& t : r.tasks) out += "," + fixed6(t.gini);
    out += "\n";
  }
  return out;
}

struct AblationRow {
  bool gda = false;
  bool adir = false;
  double mae = 0.0;
  double acc = 0.0;
  std::optional<double> bwt;
};

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "GDA,ADIR,MAE,ACC,BWT\n";
  for (const auto& r : rows)
    out += std::string(r.gda ? "1" : "0") + "," + (r.adir ? "1" : "0") + "," + fixed6(r.mae) + "," + fixed6(r.acc) +
           "," + fixed6(r.bwt) + "\n";
  return out;
}

inline std::string sweep_csv(const std::vector<EvalReport>& reports) {
  std::string out = "SNR,MAE,ACC,BWT\n";
  for (const auto& r : reports)
    out += r.condition + "," + fixed6(r.final_mae) + "," + fixed6(r.final_acc) + "," + fixed6(r.bwt) + "\n";
  if (reports.size() > 1) {
    const SummaryRow avg = average_row(reports);
    out += avg.label + "," + fixed6(avg.mae) + "," + fixed6(avg.acc) + "," + fixed6(avg.bwt) + "\n";
  }
  return out;
}

}  // namespace sslgcil
