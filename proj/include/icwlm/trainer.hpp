#pragma once

// Joint multi-task training: dynamic weight averaging across tasks, linear
// warm-up then cosine learning rate, AdamW with global-norm clipping.

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "icwlm/icl_dataset.hpp"
#include "icwlm/transformer.hpp"

namespace icwlm {

struct TrainConfig {
  int batch_size = 32;
  int epochs = 50;
  int steps_per_epoch = 100;
  double peak_lr = 1e-3;
  double min_lr = 1e-4;
  int warmup_steps = 200;
  double weight_decay = 0.01;
  double dwa_temperature = 2.0;
  std::array<double, kNumTasks> task_proportions = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::uint64_t seed = 0;

  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping

  long total_steps() const { return static_cast<long>(epochs) * steps_per_epoch; }
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct DwaResult {
  std::vector<double> weights;
  std::vector<std::size_t> fallback;  // tasks whose ratio was forced to 1
};

// history[t] = per-epoch mean losses of task t, oldest first. With fewer
// than two completed epochs every weight is 1. Otherwise
// w_t = n exp(r_t / T) / sum_j exp(r_j / T) with r_t = L_t(e-1) / L_t(e-2).
DwaResult dwa_weights(const std::vector<std::vector<double>>& history, double temperature);

// Linear warm-up from 0 to peak_lr, then cosine decay reaching min_lr at the
// last step (total_steps - 1).
double lr_schedule(long step, const TrainConfig& cfg);

struct TrainState {
  ModelParams<float> params;
  std::vector<float> adam_m, adam_v;
  long step = 0;
  int epoch = 0;  // completed epochs
  std::array<std::vector<double>, kNumTasks> loss_history;
  std::array<double, kNumTasks> dwa = {1.0, 1.0, 1.0};
  // Running sums for the epoch in progress.
  std::array<double, kNumTasks> epoch_loss_sum = {};
  std::array<long, kNumTasks> epoch_count = {};

  explicit TrainState(const ModelConfig& cfg);
  static TrainState initial(const ModelConfig& cfg, std::uint64_t seed);
};

struct StepReport {
  double total_loss = 0.0;
  std::array<double, kNumTasks> task_loss = {};
  std::array<int, kNumTasks> task_count = {};
  double lr = 0.0;
  double grad_norm = 0.0;
};

// One optimizer step. The state is left untouched if the step throws; a
// non-finite loss is reported with the offending batch index. Gradient
// evaluation is split into `threads` contiguous chunks summed in order.
StepReport train_step(TrainState& state, std::span<const IclSequence> batch,
                      const TrainConfig& cfg, unsigned threads = 1);

struct EpochRecord {
  int epoch = 0;
  std::array<double, kNumTasks> loss = {};
  std::array<double, kNumTasks> weight = {};
  double lr = 0.0;
};

struct TrainOptions {
  unsigned threads = 1;
  std::optional<std::filesystem::path> checkpoint_dir;  // saved after every epoch
  std::optional<std::filesystem::path> log_csv;
  int stop_after_epoch = -1;  // stop once this many epochs are complete
  std::function<void(const EpochRecord&)> on_epoch;
};

// Runs (or continues) training from `state`. Batches are drawn from a stream
// keyed by (seed, step), so resuming from a checkpoint replays the same
// batches as an uninterrupted run.
void train(TrainState& state, const MixedBatchSampler& sampler, const TrainConfig& cfg,
           const TrainOptions& options = {});

// Batch drawn at a given step.
std::vector<IclSequence> training_batch(const MixedBatchSampler& sampler, const TrainConfig& cfg,
                                        long step);

// Checkpoint: <dir>/checkpoint.json manifest and <dir>/checkpoint.bin holding
// float32 little-endian parameter blocks in manifest order, then the first
// and second moment accumulators in the same order.
void save_checkpoint(const std::filesystem::path& dir, const TrainState& state,
                     const TrainConfig& cfg);
TrainState load_checkpoint(const std::filesystem::path& dir, TrainConfig* cfg = nullptr);

}  // namespace icwlm
