#include "sslgcil/sslgcil.hpp"
#include "tiny_config.hpp"

#include <catch_amalgamated.hpp>

#include <set>

using namespace sslgcil;
using Catch::Approx;

TEST_CASE("class counts follow the exponential profile", "[harness]") {
  const auto a = class_counts(0.05, 500, 60);
  REQUIRE(a.counts.size() == 60);
  CHECK(a.counts[0] == 500);
  CHECK(a.counts[1] == 475);
  CHECK(a.counts[59] == 26);
  CHECK_FALSE(a.clamped);
  CHECK(std::is_sorted(a.counts.rbegin(), a.counts.rend()));

  const auto b = class_counts(0.5, 500, 60);
  CHECK(b.counts[1] == 303);
  CHECK(b.counts[10] == 3);
  CHECK(b.counts[12] == 1);
  CHECK(b.counts[13] == 1);
  CHECK(b.counts[59] == 1);
  CHECK(b.clamped);
  CHECK_THROWS_AS(class_counts(0.0, 500, 60), std::invalid_argument);
}

TEST_CASE("test split size", "[harness]") {
  BenchmarkConfig cfg;
  CHECK(test_count(cfg, 500) == 125);
  CHECK(test_count(cfg, 26) == 7);
  CHECK(test_count(cfg, 1) == 2);
  // test share of the generated total is the configured fraction
  CHECK(static_cast<double>(test_count(cfg, 400)) / (400 + test_count(cfg, 400)) == Approx(0.2));
}

TEST_CASE("task construction on the full-size split", "[harness]") {
  const BenchmarkConfig cfg;  // 10 tasks, 60 classes each, 30 new
  Rng rng(17);
  const auto tasks = assign_classes(cfg, rng);
  REQUIRE(tasks.size() == 10);
  std::set<int> seen;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& tc = tasks[t];
    CHECK(tc.classes.size() == 60);
    CHECK(std::is_sorted(tc.classes.begin(), tc.classes.end()));
    CHECK(std::set<int>(tc.classes.begin(), tc.classes.end()).size() == 60);
    int fresh = 0;
    for (std::size_t i = 0; i < tc.classes.size(); ++i) {
      const bool was_seen = seen.count(tc.classes[i]) > 0;
      CHECK(was_seen == static_cast<bool>(tc.reappearing[i]));
      fresh += was_seen ? 0 : 1;
    }
    if (t == 0 || t == tasks.size() - 1) {
      CHECK(fresh == 60);
    } else {
      CHECK(fresh == 30);
    }
    seen.insert(tc.classes.begin(), tc.classes.end());
  }
  CHECK(seen.size() == 360);

  Rng again(17);
  const auto second = assign_classes(cfg, again);
  for (std::size_t t = 0; t < tasks.size(); ++t) CHECK(second[t].classes == tasks[t].classes);
}

TEST_CASE("split validation", "[harness]") {
  BenchmarkConfig cfg;
  cfg.new_per_task = 20;  // leaves 140 classes for the last task
  CHECK_THROWS_AS(validate_split(cfg), ConfigError);
  cfg = BenchmarkConfig{};
  cfg.class_stride_deg = 7;
  CHECK_THROWS_AS(validate_split(cfg), ConfigError);
  cfg = BenchmarkConfig{};
  cfg.num_tasks = 1;
  CHECK_THROWS_AS(validate_split(cfg), ConfigError);
  CHECK_NOTHROW(validate_split(BenchmarkConfig{}));
}

TEST_CASE("imbalance grows with the task index", "[harness]") {
  for (const auto& [n, max] : {std::pair{60, 500}, std::pair{20, 120}}) {
    double prev = -1.0;
    for (int t = 0; t < 10; ++t) {
      const auto c = class_counts(0.05 + 0.05 * t, max, n);
      const double g = gini(std::span<const int>(c.counts));
      CHECK(g > prev);
      prev = g;
    }
  }
}

TEST_CASE("angular distance", "[harness][metrics]") {
  for (int a = 0; a < 360; ++a)
    for (int b = 0; b < 360; ++b) {
      const int d = std::abs(a - b);
      REQUIRE(angular_distance(a, b) == std::min(d, 360 - d));
    }
  CHECK(angular_distance(-10, 10) == 20.0);
  CHECK(angular_distance(725, 5) == 0.0);
}

TEST_CASE("doa metrics", "[harness][metrics]") {
  const std::vector<int> pred{93, 0, 359, 200};
  const std::vector<int> truth{90, 5, 4, 180};
  const auto m = doa_metrics(pred, truth, 5.0);
  CHECK(m.acc == 0.75);
  CHECK(m.mae == Approx((3.0 + 5.0 + 5.0 + 20.0) / 4.0));
  CHECK_THROWS_AS(doa_metrics(std::vector<int>{}, std::vector<int>{}, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(doa_metrics(pred, std::vector<int>{1}, 5.0), std::invalid_argument);
}

TEST_CASE("backward transfer", "[harness][metrics]") {
  AccuracyMatrix a(2);
  a.set(0, 0, 0.9);
  a.set(1, 0, 0.8);
  a.set(1, 1, 0.7);
  CHECK(backward_transfer(a) == Approx(-0.1).margin(1e-15));

  AccuracyMatrix flat(3);
  for (int m = 0; m < 3; ++m)
    for (int k = 0; k <= m; ++k) flat.set(m, k, 0.5);
  CHECK(backward_transfer(flat) == 0.0);

  AccuracyMatrix c(3);
  c.set(0, 0, 1.0);
  c.set(1, 0, 0.9);
  c.set(1, 1, 0.8);
  c.set(2, 0, 0.95);
  c.set(2, 1, 0.8);
  c.set(2, 2, 0.6);
  CHECK(backward_transfer(c) == Approx(-0.025).margin(1e-15));
  CHECK(c.filled() == 6);

  AccuracyMatrix missing(3);
  missing.set(0, 0, 1.0);
  CHECK_THROWS_AS(backward_transfer(missing), std::out_of_range);
  CHECK_THROWS_AS(missing.set(0, 1, 0.5), std::out_of_range);
  CHECK_THROWS_AS(backward_transfer(AccuracyMatrix(1)), std::invalid_argument);
}

TEST_CASE("config parsing", "[harness][config]") {
  auto expect_error = [](const Json& doc, const std::string& needle) {
    try {
      config_from_json(doc);
      FAIL("expected ConfigError mentioning " << needle);
    } catch (const ConfigError& e) {
      INFO(e.what());
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
      CHECK(e.code() == ExitCode::kConfig);
    }
  };
  Json doc = testing::tiny_config_json();
  CHECK_NOTHROW(config_from_json(doc));

  Json bad = doc;
  bad["geometry"]["typo"] = 1;
  expect_error(bad, "geometry.typo");
  bad = doc;
  bad["benchmark"]["lambda_schedule"]["start"] = 0.0;
  expect_error(bad, "lambda_schedule");
  bad = doc;
  bad["geometry"]["azimuth_jitter_deg"] = 12.5;
  expect_error(bad, "azimuth_jitter_deg");
  bad = doc;
  bad["run"]["baseline"] = "oracle";
  expect_error(bad, "run.baseline");
  bad = doc;
  bad["run"]["snr_list"] = Json::array({"clean", "loud"});
  expect_error(bad, "snr_list");
  bad = doc;
  bad["backbone"]["epochs"] = "ten";
  expect_error(bad, "backbone.epochs");
  bad = doc;
  bad["benchmark"]["classes_per_task"] = 20;
  expect_error(bad, "benchmark");

  const auto cfg = config_from_json(doc);
  const auto round = config_from_json(config_to_json(cfg));
  CHECK(config_hash(round) == config_hash(cfg));
  auto other = cfg;
  other.seed = 4;
  CHECK(config_hash(other) != config_hash(cfg));

  CHECK(parse_snr_list("clean, 20,-10") == std::vector<SnrCondition>{std::nullopt, 20.0, -10.0});
  CHECK_THROWS_AS(parse_snr_list("clean,,5"), ConfigError);
  CHECK_THROWS_AS(parse_snr_token("20dB"), ConfigError);
  CHECK(parse_baseline("upper_bound") == Baseline::kJointUpperBound);
  CHECK(parse_baseline("lower_bound") == Baseline::kLowerBoundFinetune);
}

TEST_CASE("bundled configs load", "[harness][config]") {
  const auto desk = load_config(SSL_GCIL_CONFIGS "/desk.json");
  CHECK(desk.benchmark.num_tasks == 4);
  CHECK(desk.benchmark.universe_size() == 60);
  const auto full = load_config(SSL_GCIL_CONFIGS "/paper.json");
  CHECK(full.benchmark.universe_size() == 360);
  CHECK(full.backbone.hidden_dim == 1000);
  CHECK_THROWS_AS(load_config(SSL_GCIL_CONFIGS "/absent.json"), ConfigError);
}

namespace {

const TaskSequence& tiny_tasks() {
  static const TaskSequence seq = generate_tasks(testing::tiny_config());
  return seq;
}

}  // namespace

TEST_CASE("small experiment end to end", "[harness][slow]") {
  const auto cfg = testing::tiny_config();
  const auto& seq = tiny_tasks();
  REQUIRE(seq.tasks.size() == 3);
  CHECK(seq.tasks[0].counts.front() == 24);
  CHECK(seq.tasks[2].classes.size() == 3);

  const RunResult run = run_experiment(cfg, seq);
  const EvalReport& r = run.report;
  CHECK(r.method == "adir");
  CHECK(r.acc.filled() == 6);
  CHECK(r.final_acc >= 0.0);
  CHECK(r.final_acc <= 100.0);
  REQUIRE(r.bwt.has_value());
  CHECK(*r.bwt == Approx(100.0 * backward_transfer(r.acc)));
  for (const auto& log : r.tasks) {
    REQUIRE(log.gamma.has_value());
    CHECK(*log.gamma == Approx(adaptive_gamma(log.gini, 100.0, 2.0)));
  }
  // the imbalance of the training data grows over the sequence
  CHECK(r.tasks[1].gini > r.tasks[0].gini);

  SECTION("deterministic report") {
    const RunResult again = run_experiment(cfg, seq);
    CHECK(report_to_json(again.report).dump() == report_to_json(r).dump());
    CHECK(acc_matrix_csv(again.report) == acc_matrix_csv(r));
  }
  SECTION("sweep reuses the clean embeddings") {
    const auto sweep = snr_sweep(cfg, seq, run, {std::nullopt});
    CHECK(report_to_json(sweep[0]).dump() == report_to_json(r).dump());
    // regenerating the clean test frames reproduces them exactly
    const EvalReport regen = evaluate_on(cfg, run, regenerate_tests(seq, cfg.signal, std::nullopt), "clean");
    CHECK(regen.final_acc == r.final_acc);
    CHECK(regen.final_mae == r.final_mae);
  }
  SECTION("stage reuse") {
    auto lb = cfg;
    lb.baseline = Baseline::kLowerBoundFinetune;
    lb.flags.arm_reweight = false;
    lb.flags.adaptive_gamma = false;
    const RunResult low = run_experiment(lb, seq, run.stage);
    CHECK(low.stage == run.stage);
    CHECK(low.report.method == "lower_bound");
    CHECK(low.report.bwt.has_value());
    CHECK_FALSE(low.report.tasks[0].gamma.has_value());

    auto ub = cfg;
    ub.baseline = Baseline::kJointUpperBound;
    const RunResult up = run_experiment(ub, seq, run.stage);
    CHECK(up.stage != run.stage);
    CHECK(up.report.method == "upper_bound");
    CHECK_FALSE(up.report.bwt.has_value());
    CHECK(report_to_json(up.report)["summary"]["bwt_pct"].is_null());
  }
  SECTION("csv layout") {
    const std::string acc = acc_matrix_csv(r);
    CHECK(acc.rfind("m,k1,k2,k3\n1,", 0) == 0);
    CHECK(acc.find(",,\n") != std::string::npos);
    CHECK(acc.back() == '\n');
    const std::string summary = summary_csv({r});
    CHECK(summary.rfind("method,gda,arm,adaptive,condition,ACC,MAE,BWT,gamma_1,gamma_2,gamma_3,gini_1,gini_2,gini_3\n",
                        0) == 0);
    CHECK(summary.find("adir,1,1,1,clean," + fixed6(r.final_acc)) != std::string::npos);
    const std::string sweep = sweep_csv({r});
    CHECK(sweep == "SNR,MAE,ACC,BWT\nclean," + fixed6(r.final_mae) + "," + fixed6(r.final_acc) + "," +
                       fixed6(r.bwt) + "\n");
    CHECK(fixed6(1.0 / 3.0) == "0.333333");
    CHECK(ablation_csv({{true, false, 1.5, 80.0, std::nullopt}}) == "GDA,ADIR,MAE,ACC,BWT\n1,0,1.500000,80.000000,\n");
  }
  SECTION("report json") {
    const Json j = report_to_json(r);
    CHECK(j["format"] == "ssl-gcil-report-v1");
    CHECK(j["acc_matrix"].size() == 3);
    CHECK(j["acc_matrix"][2].size() == 3);
    CHECK(j["config_hash"] == config_hash(cfg));
    CHECK(j["backbone_checksum"].get<std::string>().size() == 16);
  }
}

TEST_CASE("average row", "[harness]") {
  EvalReport a, b;
  a.final_acc = 90.0;
  a.final_mae = 2.0;
  a.bwt = 1.0;
  b.final_acc = 80.0;
  b.final_mae = 4.0;
  b.bwt = -3.0;
  const auto avg = average_row({a, b});
  CHECK(avg.label == "Avg.");
  CHECK(avg.acc == 85.0);
  CHECK(avg.mae == 3.0);
  CHECK(avg.bwt == -1.0);
}
