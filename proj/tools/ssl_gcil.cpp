// ssl-gcil: data generation, incremental runs, ablation grid and SNR sweep.

#include "sslgcil/sslgcil.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace sslgcil;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->required();
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_option("--seed", c.seed, "base seed (overrides run.seed)");
  cmd->add_flag("--force", c.force, "allow writing into a non-empty directory");
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void prepare_out_dir(const fs::path& dir, bool force) {
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir, ec)) throw IoError("output path exists and is not a directory: " + dir.string());
    if (!fs::is_empty(dir, ec) && !force)
      throw IoError("output directory is not empty (use --force to overwrite): " + dir.string());
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

/// Run manifest; the only output carrying wall-clock information.
class Manifest {
 public:
  Manifest(const std::string& command, const Common& c, const ExperimentConfig& cfg) {
    j_["tool"] = "ssl-gcil";
    j_["version"] = kVersion;
    j_["command"] = command;
    j_["config_path"] = c.config;
    j_["config_hash"] = config_hash(cfg);
    j_["seed"] = cfg.seed;
    j_["out_dir"] = c.out;
    j_["started_at"] = utc_now();
    j_["stages"] = Json::array();
  }
  void add(const Timings& t) {
    for (const auto& [name, seconds] : t.stages()) j_["stages"].push_back({{"stage", name}, {"seconds", seconds}});
  }
  void stage(const std::string& name, double seconds) { j_["stages"].push_back({{"stage", name}, {"seconds", seconds}}); }
  void write(const fs::path& dir) {
    j_["finished_at"] = utc_now();
    write_text(dir / "manifest.json", j_.dump(2) + "\n");
  }

 private:
  Json j_;
};

MethodFlags parse_flags(const std::string& text) {
  MethodFlags f{false, false, false};
  if (text == "none" || text.empty()) return f;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "gda") f.gda = true;
    else if (tok == "arm") f.arm_reweight = true;
    else if (tok == "adaptive") f.adaptive_gamma = true;
    else throw ConfigError("--flags: unknown flag '" + tok + "' (expected gda, arm, adaptive or none)");
  }
  return f;
}

TaskSequence obtain_tasks(const ExperimentConfig& cfg, const std::optional<std::string>& data_dir, Timings& tm) {
  if (data_dir) return tm.time("load_data", [&] { return load_task_sequence(*data_dir, cfg); });
  if (!cfg.generate_inline)
    throw MissingInputError("no dataset given (--data) and run.generate_inline is false");
  return tm.time("build_tasks", [&] { return generate_tasks(cfg); });
}

void write_run_outputs(const fs::path& dir, const RunResult& run) {
  write_text(dir / "report.json", report_to_json(run.report).dump(2) + "\n");
  write_text(dir / "acc_matrix.csv", acc_matrix_csv(run.report));
  write_text(dir / "summary.csv", summary_csv({run.report}));
}

int cmd_gen_data(const Common& c) {
  const ExperimentConfig cfg = load(c);
  prepare_out_dir(c.out, c.force);
  Manifest manifest("gen-data", c, cfg);
  Timings tm;
  const TaskSequence seq = tm.time("build_tasks", [&] { return generate_tasks(cfg); });
  tm.time("write", [&] {
    save_task_sequence(c.out, seq, cfg);
    return 0;
  });
  manifest.add(tm);
  manifest.write(c.out);
  std::size_t n_train = 0, n_test = 0;
  for (const auto& t : seq.tasks) {
    n_train += t.train.size();
    n_test += t.test.size();
  }
  std::cout << "tasks=" << seq.tasks.size() << " train=" << n_train << " test=" << n_test << "\n";
  return 0;
}

int cmd_run(const Common& c, const std::optional<std::string>& flags, const std::optional<std::string>& baseline,
            const std::optional<std::string>& data_dir, bool save_state) {
  ExperimentConfig cfg = load(c);
  if (flags) cfg.flags = parse_flags(*flags);
  if (baseline) {
    const auto b = parse_baseline(*baseline);
    if (!b) throw ConfigError("--baseline: unknown mode '" + *baseline + "'");
    cfg.baseline = *b;
  }
  prepare_out_dir(c.out, c.force);
  Manifest manifest("run", c, cfg);
  Timings tm;
  const TaskSequence seq = obtain_tasks(cfg, data_dir, tm);
  const RunResult run = run_experiment(cfg, seq);
  manifest.add(tm);
  manifest.add(run.timings);
  write_run_outputs(c.out, run);
  Json meta = {{"config_hash", config_hash(cfg)}, {"seed", cfg.seed}};
  save_checkpoint(fs::path(c.out) / "backbone.ckpt", to_checkpoint(run.stage->backbone.net, meta));
  if (save_state && run.model.adir) save_checkpoint(fs::path(c.out) / "adir_state.ckpt", to_checkpoint(*run.model.adir, meta));
  manifest.write(c.out);
  std::cout << summary_line(run.report) << "\n";
  return 0;
}

int cmd_ablate(const Common& c, const std::optional<std::string>& data_dir) {
  const ExperimentConfig base = load(c);
  prepare_out_dir(c.out, c.force);
  Manifest manifest("ablate", c, base);
  Timings tm;
  const TaskSequence seq = obtain_tasks(base, data_dir, tm);
  manifest.add(tm);

  std::vector<AblationRow> rows;
  std::vector<EvalReport> reports;
  std::shared_ptr<const FrozenStage> stages[2];
  for (bool gda : {false, true}) {
    for (bool adir : {false, true}) {
      ExperimentConfig cfg = base;
      cfg.flags = {gda, adir, adir};
      cfg.baseline = adir ? Baseline::kAdir : Baseline::kLowerBoundFinetune;
      RunResult run = run_experiment(cfg, seq, stages[gda]);
      stages[gda] = run.stage;
      manifest.add(run.timings);
      rows.push_back({gda, adir, run.report.final_mae, run.report.final_acc, run.report.bwt});
      std::cout << "GDA=" << gda << " ADIR=" << adir << " " << summary_line(run.report) << "\n";
      reports.push_back(std::move(run.report));
    }
  }
  write_text(fs::path(c.out) / "ablation.csv", ablation_csv(rows));
  write_text(fs::path(c.out) / "summary.csv", summary_csv(reports));
  manifest.write(c.out);
  return 0;
}

int cmd_sweep(const Common& c, const std::optional<std::string>& snr, const std::optional<std::string>& flags,
              const std::optional<std::string>& data_dir) {
  ExperimentConfig cfg = load(c);
  if (snr) cfg.snr_list = parse_snr_list(*snr);
  if (flags) cfg.flags = parse_flags(*flags);
  prepare_out_dir(c.out, c.force);
  Manifest manifest("sweep-snr", c, cfg);
  Timings tm;
  const TaskSequence seq = obtain_tasks(cfg, data_dir, tm);
  const RunResult run = run_experiment(cfg, seq);
  manifest.add(tm);
  manifest.add(run.timings);
  const auto start = std::chrono::steady_clock::now();
  const auto reports = snr_sweep(cfg, seq, run, cfg.snr_list);
  manifest.stage("sweep", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  write_text(fs::path(c.out) / "snr_sweep.csv", sweep_csv(reports));
  write_text(fs::path(c.out) / "summary.csv", summary_csv(reports));
  manifest.write(c.out);
  for (const auto& r : reports) std::cout << "SNR=" << r.condition << " " << summary_line(r) << "\n";
  return 0;
}

int cmd_train_backbone(const Common& c, const std::optional<std::string>& data_dir) {
  const ExperimentConfig cfg = load(c);
  prepare_out_dir(c.out, c.force);
  Manifest manifest("train-backbone", c, cfg);
  Timings tm;
  const TaskSequence seq = obtain_tasks(cfg, data_dir, tm);
  const auto stage = build_stage(seq, cfg, &tm);
  manifest.add(tm);
  Json meta = {{"config_hash", config_hash(cfg)}, {"seed", cfg.seed}};
  Json loss = Json::array();
  for (double l : stage->backbone.history.epoch_loss) loss.push_back(l);
  meta["epoch_loss"] = loss;
  save_checkpoint(fs::path(c.out) / "backbone.ckpt", to_checkpoint(stage->backbone.net, meta));
  manifest.write(c.out);
  std::cout << "final_loss=" << fixed6(stage->backbone.history.epoch_loss.back()) << "\n";
  return 0;
}

int cmd_show(const std::string& dir) {
  const fs::path path = fs::path(dir) / "report.json";
  std::ifstream in(path);
  if (!in) throw MissingInputError("no report.json in " + dir);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  std::cout << "method " << j["method"].get<std::string>() << " (" << j["condition"].get<std::string>() << ")\n";
  const auto& s = j["summary"];
  std::cout << "ACC=" << fixed6(s["acc_pct"].get<double>()) << " MAE=" << fixed6(s["mae_deg"].get<double>())
            << " BWT=" << (s["bwt_pct"].is_null() ? std::string("nan") : fixed6(s["bwt_pct"].get<double>())) << "\n";
  int m = 1;
  for (const auto& row : j["acc_matrix"]) {
    std::cout << "A[" << m++ << "]";
    for (const auto& v : row) std::cout << " " << fixed6(100.0 * v.get<double>());
    std::cout << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exemplar-free class-incremental sound source localization toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common gen, run, abl, swp, trb;
  std::optional<std::string> run_flags, run_baseline, run_data, abl_data, swp_snr, swp_flags, swp_data, trb_data;
  bool save_state = false;
  std::string show_dir;

  auto* c_gen = app.add_subcommand("gen-data", "synthesize the task sequence and write dataset files");
  add_common(c_gen, gen);
  auto* c_run = app.add_subcommand("run", "run one method over all tasks");
  add_common(c_run, run);
  c_run->add_option("--flags", run_flags, "comma list of gda,arm,adaptive (or none)");
  c_run->add_option("--baseline", run_baseline, "adir | lower_bound | lower_bound_static | joint_upper_bound");
  c_run->add_option("--data", run_data, "dataset directory written by gen-data");
  c_run->add_flag("--save-state", save_state, "also write the ADIR statistics snapshot");
  auto* c_abl = app.add_subcommand("ablate", "2x2 grid over GDA and ADIR");
  add_common(c_abl, abl);
  c_abl->add_option("--data", abl_data, "dataset directory written by gen-data");
  auto* c_swp = app.add_subcommand("sweep-snr", "train on clean data, test at several SNRs");
  add_common(c_swp, swp);
  c_swp->add_option("--snr", swp_snr, "comma list, e.g. clean,20,10,0,-10");
  c_swp->add_option("--flags", swp_flags, "comma list of gda,arm,adaptive (or none)");
  c_swp->add_option("--data", swp_data, "dataset directory written by gen-data");
  auto* c_trb = app.add_subcommand("train-backbone", "train and freeze the backbone only");
  add_common(c_trb, trb);
  c_trb->add_option("--data", trb_data, "dataset directory written by gen-data");
  auto* c_show = app.add_subcommand("show", "print a run's summary and accuracy matrix");
  c_show->add_option("dir", show_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (*c_gen) return cmd_gen_data(gen);
    if (*c_run) return cmd_run(run, run_flags, run_baseline, run_data, save_state);
    if (*c_abl) return cmd_ablate(abl, abl_data);
    if (*c_swp) return cmd_sweep(swp, swp_snr, swp_flags, swp_data);
    if (*c_trb) return cmd_train_backbone(trb, trb_data);
    if (*c_show) return cmd_show(show_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
