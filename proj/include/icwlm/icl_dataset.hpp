#pragma once

// Real-valued tokenisation of complex wireless matrices and assembly of
// in-context sequences for the three tasks.
//
// Precoding (P1/P2), l shots:  x_1 y_1 x_2 y_2 ... x_l y_l x_{l+1}
// Prediction (P3), T slots:    s_0 s_1 | s_1 s_2 | ... | s_{T-1} s_T
// Loss is taken at every input position; the target of the final precoding
// query lives outside the token list (IclSequence::targets).

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "icwlm/channel_sim.hpp"
#include "icwlm/random.hpp"
#include "icwlm/types.hpp"

namespace icwlm {

// [vec(Re X); vec(Im X)], column-major.
RVector pack_complex(const CMatrix& X);
RVector pack_complex(const CMatrix& X, Eigen::Index n_t, Eigen::Index k_users);
CMatrix unpack_complex(const RVector& x, Eigen::Index n_t, Eigen::Index k_users);

// RMS of the real token entries of a set of channel matrices.
double channel_rms(std::span<const CMatrix> channels);

enum class TokenRole : unsigned char { kInput, kLabel };
enum class LossMode { kEveryPosition, kFinalOnly };

struct IclSequence {
  Task task = Task::kSumRate;
  RMatrix tokens;                 // token_dim x length
  std::vector<TokenRole> roles;
  int shots = 0;
  std::vector<int> loss_positions;
  RMatrix targets;                // token_dim x loss_positions.size()

  Eigen::Index length() const { return tokens.cols(); }
  Eigen::Index token_dim() const { return tokens.rows(); }
};

// Token scaling shared by every sequence built from one dataset. Channel
// tokens are divided by channel_scale. Precoder labels are first rescaled
// to ||W||_F^2 = n_t * k_users, then divided by channel_scale, so that
// labels and channels share the same entry statistics.
struct TokenScaling {
  double channel_scale = 1.0;

  RVector channel_token(const CMatrix& H) const;
  RVector precoder_token(const CMatrix& W) const;
  CMatrix channel_from_token(const RVector& x, Eigen::Index n_t, Eigen::Index k) const;
  // Direction only; callers apply project_power for the actual budget.
  CMatrix precoder_from_token(const RVector& y, Eigen::Index n_t, Eigen::Index k) const;
};

struct PrecodingExample {
  CMatrix H;
  CMatrix W;  // empty when the label is unknown (inference query)
  Task task = Task::kSumRate;
  double snr_db = 0.0;
};

IclSequence build_precoding_sequence(std::span<const PrecodingExample> demos,
                                     const PrecodingExample& query,
                                     const TokenScaling& scaling,
                                     LossMode mode = LossMode::kEveryPosition);

// history = slots t-T ... t (T >= 1). The final slot is the prediction target.
IclSequence build_prediction_sequence(const ChannelSample& history,
                                      const TokenScaling& scaling,
                                      LossMode mode = LossMode::kEveryPosition);

// A solved dataset for one task: P1/P2 keep only the current slot plus the
// solver label (after project_power); P3 keeps the full history.
struct TaskDataset {
  Task task = Task::kSumRate;
  SystemConfig cfg;
  std::vector<ChannelSample> samples;
  std::vector<CMatrix> labels;   // P1/P2 only
  double norm_scale = 1.0;

  std::size_t size() const { return samples.size(); }
};

// Generates samples and, for P1/P2, solver labels (WMMSE for P1, SINR
// balancing for P2, both scaled onto the power budget of the sample's SNR).
// norm_scale is the RMS of the generated channel entries unless overridden.
TaskDataset make_task_dataset(Task task, const SystemConfig& cfg, const DatasetSpec& spec,
                              unsigned threads = 1,
                              std::optional<double> norm_scale = std::nullopt);

// User relabelling: column k moves to column perm[k] and is multiplied by
// phase[k]. Applied to a channel and its precoder together it leaves every
// SINR unchanged, so solver labels stay valid for equal user weights.
struct UserTransform {
  std::vector<Eigen::Index> perm;
  std::vector<Complex> phase;

  static UserTransform identity(Eigen::Index k_users);
  static UserTransform draw(Eigen::Index k_users, Rng& rng);
  CMatrix apply(const CMatrix& X) const;
};

struct SamplerOptions {
  std::array<double, kNumTasks> proportions = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  int shots = 4;                 // demos per precoding sequence
  LossMode loss_mode = LossMode::kEveryPosition;
  // Random user transform per example (per whole history for P3).
  bool augment = false;
};

// Draws batch_size sequences; the task of each is drawn with the configured
// proportions. Demonstrations share the query's SNR and never include the
// query sample. `datasets` is indexed by task; entries for tasks with zero
// proportion may be null.
class MixedBatchSampler {
 public:
  MixedBatchSampler(std::array<const TaskDataset*, kNumTasks> datasets,
                    SamplerOptions options);

  std::vector<IclSequence> sample(std::size_t batch_size, Rng& rng) const;

  // Sequence for a specific query index with demos drawn from rng.
  IclSequence make_sequence(Task task, std::size_t index, int shots, Rng& rng) const;

  const SamplerOptions& options() const { return options_; }

 private:
  std::array<const TaskDataset*, kNumTasks> datasets_;
  SamplerOptions options_;
  // Per precoding task: sample indices grouped by SNR value.
  std::array<std::vector<std::pair<double, std::vector<std::size_t>>>, 2> by_snr_;
};

// Draws `count` distinct indices from `pool` excluding `exclude`.
std::vector<std::size_t> draw_demo_indices(const std::vector<std::size_t>& pool,
                                           std::size_t exclude, int count, Rng& rng);

}  // namespace icwlm
