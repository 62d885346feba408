#pragma once

// On-disk task sequence: task_XX.txt / task_XX_test.txt dataset files plus
// metadata.json with class lists, counts, lambda_t and per-sample seeds (the
// seeds let noisy test sets be regenerated from loaded data).

#include "sslgcil/benchmark.hpp"
#include "sslgcil/config.hpp"
#include "sslgcil/dataset_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace sslgcil {

inline std::string task_file_name(int task_index, bool test) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "task_%02d%s.txt", task_index + 1, test ? "_test" : "");
  return buf;
}

inline void save_task_sequence(const std::filesystem::path& dir, const TaskSequence& seq, const ExperimentConfig& cfg) {
  const int pairs = cfg.signal.geometry.num_pairs();
  const int bins = 2 * cfg.signal.max_lag + 1;
  Json meta;
  meta["format"] = "ssl-gcil-dataset-v1";
  meta["seed"] = cfg.seed;
  meta["config_hash"] = config_hash(cfg);
  meta["pairs"] = pairs;
  meta["lag_bins"] = bins;
  meta["geometry"] = config_to_json(cfg)["geometry"];
  auto origins = [](const std::vector<SampleOrigin>& v) {
    Json a = Json::array();
    for (const auto& o : v) a.push_back({o.id, o.seed, o.azimuth_deg});
    return a;
  };
  meta["tasks"] = Json::array();
  for (const auto& task : seq.tasks) {
    write_dataset(dir / task_file_name(task.index, false), task.train, pairs, bins);
    write_dataset(dir / task_file_name(task.index, true), task.test, pairs, bins);
    Json t;
    t["task"] = task.index + 1;
    t["lambda"] = task.lambda;
    t["classes"] = task.classes;
    t["reappearing"] = task.reappearing;
    t["counts"] = task.counts;
    t["count_clamped"] = task.clamped;
    t["train_file"] = task_file_name(task.index, false);
    t["test_file"] = task_file_name(task.index, true);
    t["train_origin"] = origins(task.train_origin);
    t["test_origin"] = origins(task.test_origin);
    meta["tasks"].push_back(std::move(t));
  }
  std::ofstream out(dir / "metadata.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "metadata.json").string());
  out << meta.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + (dir / "metadata.json").string());
}

inline TaskSequence load_task_sequence(const std::filesystem::path& dir, const ExperimentConfig& cfg) {
  const auto meta_path = dir / "metadata.json";
  std::ifstream in(meta_path);
  if (!in) throw MissingInputError("dataset metadata not found: " + meta_path.string());
  Json meta;
  try {
    meta = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(meta_path.string() + ": " + e.what());
  }
  const int pairs = cfg.signal.geometry.num_pairs();
  const int bins = 2 * cfg.signal.max_lag + 1;
  TaskSequence seq;
  try {
    if (meta.at("pairs").get<int>() != pairs || meta.at("lag_bins").get<int>() != bins)
      throw ConfigError("dataset feature shape does not match the configured geometry/max_lag");
    auto origins = [](const Json& a) {
      std::vector<SampleOrigin> v;
      for (const auto& o : a) v.push_back({o.at(0).get<std::uint64_t>(), o.at(1).get<std::uint64_t>(), o.at(2).get<double>()});
      return v;
    };
    for (const auto& t : meta.at("tasks")) {
      Task task;
      task.index = t.at("task").get<int>() - 1;
      task.lambda = t.at("lambda").get<double>();
      task.classes = t.at("classes").get<std::vector<int>>();
      task.reappearing = t.at("reappearing").get<std::vector<bool>>();
      task.counts = t.at("counts").get<std::vector<int>>();
      task.clamped = t.at("count_clamped").get<bool>();
      task.train = read_dataset(dir / t.at("train_file").get<std::string>());
      task.test = read_dataset(dir / t.at("test_file").get<std::string>());
      task.train_origin = origins(t.at("train_origin"));
      task.test_origin = origins(t.at("test_origin"));
      seq.tasks.push_back(std::move(task));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(meta_path.string() + ": malformed metadata: " + e.what());
  }
  if (static_cast<int>(seq.tasks.size()) != cfg.benchmark.num_tasks)
    throw ConfigError("dataset has " + std::to_string(seq.tasks.size()) + " tasks, config expects " +
                      std::to_string(cfg.benchmark.num_tasks));
  return seq;
}

}  // namespace sslgcil
