#pragma once

// Experiment configuration: a single JSON document with the sections
// `geometry`, `benchmark`, `backbone`, `adir` and `run`. Every section and key is
// optional and falls back to the defaults below; unknown keys are rejected.
//
// Lag sign convention (geometry): a positive GCC-PHAT lag for pair (i, j) means
// microphone j receives the wavefront after microphone i.

#include "sslgcil/adir.hpp"
#include "sslgcil/backbone.hpp"
#include "sslgcil/benchmark.hpp"
#include "sslgcil/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace sslgcil {

using Json = nlohmann::ordered_json;

enum class Baseline { kAdir, kLowerBoundFinetune, kLowerBoundStatic, kJointUpperBound };

inline std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::kAdir: return "adir";
    case Baseline::kLowerBoundFinetune: return "lower_bound_finetune";
    case Baseline::kLowerBoundStatic: return "lower_bound_static";
    case Baseline::kJointUpperBound: return "joint_upper_bound";
  }
  return "adir";
}

/// Accepts the canonical names plus `lower_bound` (fine-tune) and `upper_bound`.
inline std::optional<Baseline> parse_baseline(const std::string& s) {
  if (s == "adir") return Baseline::kAdir;
  if (s == "lower_bound" || s == "lower_bound_finetune") return Baseline::kLowerBoundFinetune;
  if (s == "lower_bound_static") return Baseline::kLowerBoundStatic;
  if (s == "joint_upper_bound" || s == "upper_bound") return Baseline::kJointUpperBound;
  return std::nullopt;
}

struct MethodFlags {
  bool gda = true;
  bool arm_reweight = true;
  bool adaptive_gamma = true;

  friend bool operator==(const MethodFlags&, const MethodFlags&) = default;
};

struct BackboneConfig {
  int hidden_dim = 1000;
  TrainConfig train;
};

/// SNR condition; nullopt is the clean condition.
using SnrCondition = std::optional<double>;

inline std::string snr_label(const SnrCondition& snr) {
  if (!snr) return "clean";
  std::ostringstream os;
  os << *snr;
  return os.str();
}

/// Parses `clean` or a decimal dB value.
inline SnrCondition parse_snr_token(const std::string& token) {
  if (token == "clean") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(token, &used);
    if (used == token.size() && std::isfinite(v)) return v;
  } catch (...) {
  }
  throw ConfigError("snr: cannot parse SNR token '" + token + "'");
}

inline std::vector<SnrCondition> parse_snr_list(const std::string& list) {
  std::vector<SnrCondition> out;
  std::stringstream ss(list);
  std::string token;
  while (std::getline(ss, token, ',')) {
    const auto b = token.find_first_not_of(" \t");
    const auto e = token.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("snr: empty SNR token");
    out.push_back(parse_snr_token(token.substr(b, e - b + 1)));
  }
  if (out.empty()) throw ConfigError("snr: empty SNR list");
  return out;
}

inline constexpr const char* kLagSignConvention = "positive lag: mic j lags mic i";

struct ExperimentConfig {
  SignalConfig signal;
  BenchmarkConfig benchmark;
  BackboneConfig backbone;
  AdirOptions adir;  ///< gamma0 / reg_exponent; the switches come from `flags`
  MethodFlags flags;
  Baseline baseline = Baseline::kAdir;
  std::vector<SnrCondition> snr_list = {std::nullopt, 20.0, 10.0, 0.0, -10.0};
  std::uint64_t seed = 0;
  bool generate_inline = true;

  AdirOptions adir_options() const {
    AdirOptions o = adir;
    o.reweight = flags.arm_reweight;
    o.adaptive_gamma = flags.adaptive_gamma;
    return o;
  }
  TrainConfig train_config() const {
    TrainConfig t = backbone.train;
    t.seed = derive_seed(seed, {seed_tag::kBackbone});
    return t;
  }
};

namespace detail {

class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  /// Rejects keys that were never read.
  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError(field(key) + ": unknown key");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(field(key) + ": wrong type");
    }
  }

  const Json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& field, const std::string& msg) {
  if (!ok) throw ConfigError(field + ": " + msg);
}

}  // namespace detail

/// Builds and validates a configuration. Errors name the offending field path.
inline ExperimentConfig config_from_json(const Json& doc) {
  using detail::require;
  ExperimentConfig cfg;
  detail::Reader root(doc, "");

  if (root.has("geometry")) {
    detail::Reader r(root.at("geometry"), "geometry");
    double c = 343.0, fs = 48000.0, side = 0.114;
    r.get("speed_of_sound", c);
    r.get("sample_rate", fs);
    r.get("square_side", side);
    require(c > 0, "geometry.speed_of_sound", "must be > 0");
    require(fs > 0, "geometry.sample_rate", "must be > 0");
    require(side > 0, "geometry.square_side", "must be > 0");
    if (r.has("mics")) {
      std::vector<Vec3> mics;
      try {
        for (const auto& m : r.at("mics")) {
          const auto v = m.get<std::vector<double>>();
          if (v.size() != 3) throw ConfigError("geometry.mics: each position needs 3 coordinates");
          mics.push_back({v[0], v[1], v[2]});
        }
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("geometry.mics: expected a list of [x, y, z]");
      }
      try {
        cfg.signal.geometry = ArrayGeometry(std::move(mics), c, fs);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("geometry.mics: ") + e.what());
      }
    } else {
      cfg.signal.geometry = ArrayGeometry::square(side, c, fs);
    }
    r.get("frame_length", cfg.signal.frame_length);
    r.get("max_lag", cfg.signal.max_lag);
    r.get("azimuth_jitter_deg", cfg.signal.azimuth_jitter_deg);
    // Informational echo; only the implemented convention is accepted.
    std::string lag_sign = kLagSignConvention;
    r.get("lag_sign_convention", lag_sign);
    require(lag_sign == kLagSignConvention, "geometry.lag_sign_convention",
            std::string("only '") + kLagSignConvention + "' is supported");
    r.finish();
    require(cfg.signal.frame_length >= 1024, "geometry.frame_length", "must be >= 1024");
    require(cfg.signal.max_lag >= 1 && 2 * cfg.signal.max_lag < cfg.signal.frame_length, "geometry.max_lag",
            "must be in [1, frame_length / 2)");
  }

  if (root.has("benchmark")) {
    auto& b = cfg.benchmark;
    detail::Reader r(root.at("benchmark"), "benchmark");
    r.get("num_tasks", b.num_tasks);
    r.get("classes_per_task", b.classes_per_task);
    r.get("new_per_task", b.new_per_task);
    r.get("final_reappearing", b.final_reappearing);
    r.get("class_stride_deg", b.class_stride_deg);
    if (r.has("lambda_schedule")) {
      detail::Reader l(r.at("lambda_schedule"), "benchmark.lambda_schedule");
      l.get("start", b.lambda_start);
      l.get("step", b.lambda_step);
      l.finish();
    }
    r.get("max_count", b.max_count);
    r.get("test_fraction", b.test_fraction);
    r.get("min_test", b.min_test);
    r.get("acc_tolerance_deg", b.acc_tolerance_deg);
    r.get("augment_rate", b.augment_rate);
    r.get("augment_noise", b.augment_noise);
    r.finish();
  }
  {
    const auto& b = cfg.benchmark;
    require(b.lambda_start > 0, "benchmark.lambda_schedule.start", "lambda_1 must be > 0");
    require(b.lambda_step >= 0, "benchmark.lambda_schedule.step", "must be >= 0");
    require(b.max_count >= 1, "benchmark.max_count", "must be >= 1");
    require(b.test_fraction > 0 && b.test_fraction < 1, "benchmark.test_fraction", "must be in (0, 1)");
    require(b.min_test >= 1, "benchmark.min_test", "must be >= 1");
    require(b.acc_tolerance_deg >= 0, "benchmark.acc_tolerance_deg", "must be >= 0");
    require(b.augment_rate > 0 && b.augment_rate <= 1, "benchmark.augment_rate", "must be in (0, 1]");
    require(b.augment_noise >= 0, "benchmark.augment_noise", "must be >= 0");
    validate_split(b);
    require(cfg.signal.azimuth_jitter_deg >= 0 && cfg.signal.azimuth_jitter_deg <= 0.5 * b.class_stride_deg,
            "geometry.azimuth_jitter_deg", "must be in [0, class_stride_deg / 2]");
  }

  if (root.has("backbone")) {
    auto& bb = cfg.backbone;
    detail::Reader r(root.at("backbone"), "backbone");
    r.get("hidden_dim", bb.hidden_dim);
    r.get("learning_rate", bb.train.learning_rate);
    r.get("beta1", bb.train.beta1);
    r.get("beta2", bb.train.beta2);
    r.get("adam_eps", bb.train.adam_eps);
    r.get("lr_step_epochs", bb.train.lr_step_epochs);
    r.get("lr_decay", bb.train.lr_decay);
    r.get("epochs", bb.train.epochs);
    r.get("batch_size", bb.train.batch_size);
    r.get("dropout", bb.train.dropout);
    r.finish();
  }
  {
    const auto& bb = cfg.backbone;
    require(bb.hidden_dim >= 1, "backbone.hidden_dim", "must be >= 1");
    require(bb.train.learning_rate > 0, "backbone.learning_rate", "must be > 0");
    require(bb.train.epochs >= 1, "backbone.epochs", "must be >= 1");
    require(bb.train.batch_size >= 2, "backbone.batch_size", "must be >= 2");
    require(bb.train.lr_step_epochs >= 1, "backbone.lr_step_epochs", "must be >= 1");
    require(bb.train.dropout >= 0 && bb.train.dropout < 1, "backbone.dropout", "must be in [0, 1)");
  }

  if (root.has("adir")) {
    detail::Reader r(root.at("adir"), "adir");
    r.get("gamma0", cfg.adir.gamma0);
    r.get("reg_exponent", cfg.adir.reg_exponent);
    r.finish();
  }
  require(cfg.adir.gamma0 > 0, "adir.gamma0", "must be > 0");

  if (root.has("run")) {
    detail::Reader r(root.at("run"), "run");
    r.get("seed", cfg.seed);
    if (r.has("flags")) {
      detail::Reader f(r.at("flags"), "run.flags");
      f.get("gda", cfg.flags.gda);
      f.get("arm", cfg.flags.arm_reweight);
      f.get("adaptive", cfg.flags.adaptive_gamma);
      f.finish();
    }
    if (r.has("baseline")) {
      std::string name;
      r.get("baseline", name);
      const auto b = parse_baseline(name);
      require(b.has_value(), "run.baseline", "unknown baseline '" + name + "'");
      cfg.baseline = *b;
    }
    if (r.has("snr_list")) {
      cfg.snr_list.clear();
      const Json& list = r.at("snr_list");
      require(list.is_array() && !list.empty(), "run.snr_list", "expected a non-empty list");
      for (const auto& item : list) {
        if (item.is_string()) {
          try {
            cfg.snr_list.push_back(parse_snr_token(item.get<std::string>()));
          } catch (const ConfigError&) {
            throw ConfigError("run.snr_list: cannot parse '" + item.get<std::string>() + "'");
          }
        } else if (item.is_number()) {
          cfg.snr_list.push_back(item.get<double>());
        } else {
          throw ConfigError("run.snr_list: entries must be numbers or \"clean\"");
        }
      }
    }
    r.get("generate_inline", cfg.generate_inline);
    r.finish();
  }
  root.finish();
  return cfg;
}

/// Fully resolved configuration, echoed into reports and hashed.
inline Json config_to_json(const ExperimentConfig& cfg) {
  Json j;
  auto& g = j["geometry"];
  g["mics"] = Json::array();
  for (const auto& m : cfg.signal.geometry.mics()) g["mics"].push_back({m.x, m.y, m.z});
  g["speed_of_sound"] = cfg.signal.geometry.speed_of_sound();
  g["sample_rate"] = cfg.signal.geometry.sample_rate();
  g["frame_length"] = cfg.signal.frame_length;
  g["max_lag"] = cfg.signal.max_lag;
  g["azimuth_jitter_deg"] = cfg.signal.azimuth_jitter_deg;
  g["lag_sign_convention"] = kLagSignConvention;

  const auto& b = cfg.benchmark;
  auto& bj = j["benchmark"];
  bj["num_tasks"] = b.num_tasks;
  bj["classes_per_task"] = b.classes_per_task;
  bj["new_per_task"] = b.new_per_task;
  bj["final_reappearing"] = b.final_reappearing;
  bj["class_stride_deg"] = b.class_stride_deg;
  bj["lambda_schedule"] = {{"start", b.lambda_start}, {"step", b.lambda_step}};
  bj["max_count"] = b.max_count;
  bj["test_fraction"] = b.test_fraction;
  bj["min_test"] = b.min_test;
  bj["acc_tolerance_deg"] = b.acc_tolerance_deg;
  bj["augment_rate"] = b.augment_rate;
  bj["augment_noise"] = b.augment_noise;

  const auto& t = cfg.backbone.train;
  auto& bb = j["backbone"];
  bb["hidden_dim"] = cfg.backbone.hidden_dim;
  bb["learning_rate"] = t.learning_rate;
  bb["beta1"] = t.beta1;
  bb["beta2"] = t.beta2;
  bb["adam_eps"] = t.adam_eps;
  bb["lr_step_epochs"] = t.lr_step_epochs;
  bb["lr_decay"] = t.lr_decay;
  bb["epochs"] = t.epochs;
  bb["batch_size"] = t.batch_size;
  bb["dropout"] = t.dropout;

  j["adir"] = {{"gamma0", cfg.adir.gamma0}, {"reg_exponent", cfg.adir.reg_exponent}};

  auto& r = j["run"];
  r["seed"] = cfg.seed;
  r["flags"] = {{"gda", cfg.flags.gda}, {"arm", cfg.flags.arm_reweight}, {"adaptive", cfg.flags.adaptive_gamma}};
  r["baseline"] = to_string(cfg.baseline);
  r["snr_list"] = Json::array();
  for (const auto& s : cfg.snr_list) {
    if (s) r["snr_list"].push_back(*s);
    else r["snr_list"].push_back("clean");
  }
  r["generate_inline"] = cfg.generate_inline;
  return j;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: invalid JSON in '" + path.string() + "': " + e.what());
  }
  return config_from_json(doc);
}

/// FNV-1a 64 of a string, hex encoded.
inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const ExperimentConfig& cfg) { return fnv1a_hex(config_to_json(cfg).dump()); }

}  // namespace sslgcil
