#pragma once

// Config-driven experiment runs: dataset generation, training and
// evaluation, each a pure function of the resolved config and its input
// files.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "icwlm/channel_sim.hpp"
#include "icwlm/trainer.hpp"
#include "icwlm/transformer.hpp"

namespace icwlm {

// Process exit codes of the command-line runner.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitGeneration = 3,
  kExitTraining = 4,
  kExitEval = 5,
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Failure of a command stage, carrying the exit code to report.
class StageError : public Error {
 public:
  StageError(ExitCode code, const std::string& what) : Error(what), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

struct DataConfig {
  int n_samples = 4000;  // per task
  double v_lo = 10.0;
  double v_hi = 100.0;
  std::vector<double> snr_set = {0.0, 10.0, 20.0, 30.0};
  int t_history = 8;
};

struct EvalConfig {
  int n_samples = 500;  // per grid point
  double v_lo = 10.0;
  double v_hi = 100.0;
  int t_history = 8;
  std::vector<double> snr_grid = {0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0};
  std::vector<int> shots = {0, 4};
  std::vector<double> velocities = {0.0, 10.0, 30.0, 50.0, 70.0, 100.0};
  std::vector<int> shot_grid = {0, 1, 2, 4, 8};
  std::vector<double> heldout_snrs = {5.0, 15.0, 25.0};
  int heldout_shots = 4;
  bool gnuplot = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  SystemConfig system;
  ModelConfig model;  // token_dim follows the system
  TrainConfig train;  // seed follows the global seed
  int train_shots = 8;
  bool train_augment = true;  // random user permutation and phase per example
  DataConfig data;
  EvalConfig eval;
  std::filesystem::path output_dir = "runs/default";
  std::filesystem::path data_dir;        // empty: <output_dir>/data
  std::filesystem::path checkpoint_dir;  // empty: <output_dir>/checkpoint

  std::filesystem::path resolved_data_dir() const;
  std::filesystem::path resolved_checkpoint_dir() const;
  std::filesystem::path report_dir() const { return output_dir / "reports"; }

  // Dataset seed of one task and the evaluation seed, derived from `seed`.
  std::uint64_t data_seed(Task task) const;
  std::uint64_t eval_seed() const;

  void validate() const;  // throws ConfigError
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);

// Parses a config. Unknown keys and a missing seed (without override) are
// config errors. Derived fields are filled in and the result validated.
ExperimentConfig parse_experiment(const nlohmann::json& j,
                                  std::optional<std::uint64_t> seed_override = std::nullopt);
ExperimentConfig load_experiment(const std::filesystem::path& path,
                                 std::optional<std::uint64_t> seed_override = std::nullopt);

// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

inline const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids = {"fig7", "fig8", "fig9", "fig10_12", "fig13", "all"};
  return ids;
}

// Writes P1/P2/P3 WDS1 files and manifest.json into the data directory.
// Throws StageError(kExitGeneration) on failure.
void run_gen_data(const ExperimentConfig& cfg, unsigned threads);

struct TrainRunOptions {
  bool resume = false;         // continue from an existing checkpoint
  int stop_after_epoch = -1;
};

// Trains on the generated datasets, checkpointing after every epoch and
// logging per-epoch losses to <output_dir>/train_loss.csv. Throws
// StageError(kExitTraining); the last good checkpoint stays on disk.
void run_train(const ExperimentConfig& cfg, unsigned threads, const TrainRunOptions& options = {});

// Writes one report per experiment into report_dir() and returns the paths.
// Throws StageError(kExitEval) for unknown ids or a missing checkpoint.
std::vector<std::filesystem::path> run_eval(const ExperimentConfig& cfg, const std::string& id,
                                            unsigned threads);

// Writes <output_dir>/resolved_config.json.
void write_resolved_config(const ExperimentConfig& cfg);

}  // namespace icwlm
