#pragma once

// Metrics, the in-context predictor wrapper and the experiment sweeps.

#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "icwlm/channel_sim.hpp"
#include "icwlm/icl_dataset.hpp"
#include "icwlm/transformer.hpp"

namespace icwlm {

// ||pred - actual||_F^2 / ||actual||_F^2. Throws on shape mismatch or zero actual.
double nmse(const CMatrix& predicted, const CMatrix& actual);

// Slot t-1 as the prediction of slot t. `history` ends with the slot to be
// predicted; a one-slot history is returned as is.
CMatrix last_value_baseline(std::span<const CMatrix> history);

// Trained model plus the token scaling of its training data.
class IclPredictor {
 public:
  IclPredictor(ModelParams<float> params, double channel_scale);

  // Precoder for query.H (query.W is ignored) given labelled demonstrations
  // at the query's SNR, scaled onto p_max. A zero network output falls back
  // to the matched-filter direction.
  CMatrix precoder(std::span<const PrecodingExample> demos, const PrecodingExample& query,
                   double p_max) const;

  // Next slot after `known` (oldest first, at least one slot). The known
  // slots are presented as consecutive (s_i, s_i+1) pairs followed by the
  // newest slot as the query.
  CMatrix predict_next(std::span<const CMatrix> known) const;

  const ModelParams<float>& params() const { return params_; }
  const TokenScaling& scaling() const { return scaling_; }

 private:
  ModelParams<float> params_;
  Transformer<float> model_;
  TokenScaling scaling_;
};

struct Curve {
  std::string name;
  std::vector<double> mean, se;
};

struct EvalReport {
  std::string experiment;
  std::string variable;
  std::vector<double> grid;
  std::vector<Curve> curves;
  std::vector<int> shots;
  std::size_t samples = 0;     // per grid point
  std::vector<bool> trained;   // per grid point; empty unless meaningful

  const Curve& curve(const std::string& name) const;
  // Header row naming the sweep variable, then one row per grid point with
  // <curve>_mean,<curve>_se columns. The gnuplot layout separates columns by
  // spaces and comments out the header.
  void write_csv(std::ostream& os, bool gnuplot = false) const;
  void write_csv(const std::filesystem::path& path, bool gnuplot = false) const;
};

struct TestSetSpec {
  int n_samples = 500;
  double v_lo = 10.0;
  double v_hi = 100.0;
  int t_history = 8;
  std::uint64_t seed = 0;
};

// Mean and standard error (n-1 denominator; 0 for a single value).
std::pair<double, double> mean_se(std::span<const double> values);

// Sum rate of the model (one curve per shot count) and of WMMSE per SNR
// point. Each point uses its own test set; demonstrations come from the same
// set and never include the query.
EvalReport eval_sum_rate_vs_snr(const IclPredictor& model, const SystemConfig& cfg,
                                const TestSetSpec& spec, std::span<const double> snr_grid,
                                std::span<const int> shots, unsigned threads = 1);

// Minimum user rate of the model and of the SINR balancing solver.
EvalReport eval_min_rate_vs_snr(const IclPredictor& model, const SystemConfig& cfg,
                                const TestSetSpec& spec, std::span<const double> snr_grid,
                                std::span<const int> shots, unsigned threads = 1);

// NMSE of the model and of the last-value baseline per velocity. The model
// sees spec.t_history known slots.
EvalReport eval_nmse_vs_velocity(const IclPredictor& model, const SystemConfig& cfg,
                                 const TestSetSpec& spec, std::span<const double> velocities,
                                 unsigned threads = 1);

// P1 sum rate, P2 min rate and P3 NMSE against the number of demonstrations.
// For P3 a shot is one (s_i, s_i+1) pair before the query slot.
EvalReport eval_shots_sweep(const IclPredictor& model, const SystemConfig& cfg,
                            const TestSetSpec& spec, std::span<const double> snr_set,
                            std::span<const int> shot_grid, unsigned threads = 1);

// P1 sum rate at SNR points outside the training set, reported together with
// the trained points (flagged) for comparison. Throws if a held-out point is
// in the trained set.
EvalReport eval_unseen_snr(const IclPredictor& model, const SystemConfig& cfg,
                           const TestSetSpec& spec, std::span<const double> trained_snrs,
                           std::span<const double> heldout_snrs, int shots,
                           unsigned threads = 1);

}  // namespace icwlm
