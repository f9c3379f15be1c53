#pragma once

// Downlink multi-user MISO precoding: SINR/rate arithmetic and the classical
// solvers used both as baselines and as label generators.
//
//   gamma_k = |h_k^H w_k|^2 / (sum_{i != k} |h_k^H w_i|^2 + sigma2)
//   P1: max sum_k alpha_k log2(1 + gamma_k)   s.t. ||W||_F^2 <= p_max
//   P2: max min_k gamma_k / rho_k             s.t. ||W||_F^2 <= p_max

#include <vector>

#include "icwlm/types.hpp"

namespace icwlm {

struct PrecodingProblem {
  CMatrix H;        // n_t x k_users, column k is h_k
  double sigma2 = 1.0;
  double p_max = 1.0;
  RVector alpha;    // P1 rate weights
  RVector rho;      // P2 SINR priorities

  // Unit weights.
  static PrecodingProblem make(CMatrix H, double sigma2, double p_max);

  Eigen::Index n_t() const { return H.rows(); }
  Eigen::Index k_users() const { return H.cols(); }
  void validate() const;
};

enum class SolverStatus { kConverged, kMaxIterations, kInfeasible };

struct PrecodingSolution {
  CMatrix W;
  double objective = 0.0;
  int iterations = 0;
  double residual = 0.0;
  SolverStatus status = SolverStatus::kConverged;
  // Iterations where the WMMSE objective dropped by more than 1e-9 relative.
  int monotonicity_violations = 0;
  std::vector<double> objective_trace;
};

double sinr(const PrecodingProblem& problem, const CMatrix& W, Eigen::Index k);
RVector sinrs(const PrecodingProblem& problem, const CMatrix& W);
double sum_rate(const PrecodingProblem& problem, const CMatrix& W);
// min_k log2(1 + gamma_k), unweighted.
double min_rate(const PrecodingProblem& problem, const CMatrix& W);
// min_k gamma_k / rho_k.
double balanced_level(const PrecodingProblem& problem, const CMatrix& W);

// Scales W to Frobenius power exactly p_max. Throws on W == 0.
CMatrix project_power(const CMatrix& W, double p_max);

PrecodingSolution mrt_precoder(const PrecodingProblem& problem);
// Throws Error if H is rank deficient.
PrecodingSolution zf_precoder(const PrecodingProblem& problem);

struct SolverOptions {
  int max_iters = 200;
  double tol = 1e-6;
};

inline SolverOptions default_wmmse_options() { return {200, 1e-6}; }
inline SolverOptions default_balancing_options() { return {500, 1e-6}; }

// Block-coordinate WMMSE from equal-power columns along `start`. Throws
// NumericError on non-finite intermediates.
PrecodingSolution wmmse_from(const PrecodingProblem& problem, const CMatrix& start,
                             SolverOptions opts = default_wmmse_options());

// WMMSE from equal-power MRT, replaced by the best single-user beamformer
// when that scores higher.
PrecodingSolution wmmse_precoder(const PrecodingProblem& problem,
                                 SolverOptions opts = default_wmmse_options());

// Max-min weighted SINR via uplink/downlink duality: alternates MMSE beam
// updates with the principal eigenvector of the extended coupling matrix.
// Returns status kInfeasible when some user has a zero channel (that user
// gets w_k = 0 and the rest are balanced), kMaxIterations with the best
// iterate when the eigenvalue has not settled.
PrecodingSolution sinr_balancing_precoder(const PrecodingProblem& problem,
                                          SolverOptions opts = default_balancing_options());

// Independent reference for P2: bisection on the target level t, where each
// feasibility test runs the uplink power fixed point with implicit MMSE
// receivers and compares the minimal sum power against p_max.
double balanced_level_oracle(const PrecodingProblem& problem);

}  // namespace icwlm
