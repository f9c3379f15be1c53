#include "icwlm/precoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

namespace icwlm {

namespace {

bool all_finite(const CMatrix& m) {
  return m.real().allFinite() && m.imag().allFinite();
}

std::vector<bool> active_users(const CMatrix& H) {
  std::vector<bool> active(H.cols());
  for (Eigen::Index k = 0; k < H.cols(); ++k) active[k] = H.col(k).squaredNorm() > 0.0;
  return active;
}

CMatrix equal_power_columns(const CMatrix& directions, double p_max,
                            const std::vector<bool>& active) {
  const auto n_active = std::count(active.begin(), active.end(), true);
  CMatrix W = CMatrix::Zero(directions.rows(), directions.cols());
  if (n_active == 0) return W;
  const double per_user = std::sqrt(p_max / static_cast<double>(n_active));
  for (Eigen::Index k = 0; k < directions.cols(); ++k) {
    if (!active[k]) continue;
    const double norm = directions.col(k).norm();
    if (norm > 0.0) W.col(k) = directions.col(k) * (per_user / norm);
  }
  return W;
}

// Perron root and eigenvector of a non-negative (K+1)x(K+1) extended
// coupling matrix; the vector is scaled so its last entry is 1.
std::pair<double, RVector> perron_pair(const RMatrix& m) {
  Eigen::EigenSolver<RMatrix> es(m);
  const auto& values = es.eigenvalues();
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i)
    if (values(i).real() > values(best).real()) best = i;
  CVector v = es.eigenvectors().col(best);
  const Complex last = v(v.size() - 1);
  if (std::abs(last) == 0.0) throw NumericError("balancing: degenerate Perron vector");
  v /= last;
  return {values(best).real(), v.real()};
}

}  // namespace

PrecodingProblem PrecodingProblem::make(CMatrix H, double sigma2, double p_max) {
  PrecodingProblem p;
  const auto k = H.cols();
  p.H = std::move(H);
  p.sigma2 = sigma2;
  p.p_max = p_max;
  p.alpha = RVector::Ones(k);
  p.rho = RVector::Ones(k);
  return p;
}

void PrecodingProblem::validate() const {
  if (H.size() == 0) throw Error("precoding problem: empty channel matrix");
  if (!all_finite(H)) throw Error("precoding problem: channel has non-finite entries");
  if (!(sigma2 > 0.0)) throw Error("precoding problem: sigma2 must be positive");
  if (!(p_max > 0.0)) throw Error("precoding problem: p_max must be positive");
  if (alpha.size() != H.cols() || rho.size() != H.cols())
    throw Error("precoding problem: weight vectors must have k_users entries");
  if ((alpha.array() <= 0.0).any() || (rho.array() <= 0.0).any())
    throw Error("precoding problem: weights must be positive");
}

double sinr(const PrecodingProblem& problem, const CMatrix& W, Eigen::Index k) {
  if (W.rows() != problem.H.rows() || W.cols() != problem.H.cols())
    throw Error("sinr: precoder shape does not match channel");
  const CVector gains = W.adjoint() * problem.H.col(k);  // conj(h_k^H w_i)
  double interference = 0.0;
  for (Eigen::Index i = 0; i < gains.size(); ++i)
    if (i != k) interference += std::norm(gains(i));
  return std::norm(gains(k)) / (interference + problem.sigma2);
}

RVector sinrs(const PrecodingProblem& problem, const CMatrix& W) {
  if (W.rows() != problem.H.rows() || W.cols() != problem.H.cols())
    throw Error("sinr: precoder shape does not match channel");
  const RMatrix g = (problem.H.adjoint() * W).cwiseAbs2();  // g(k, i) = |h_k^H w_i|^2
  RVector out(g.rows());
  for (Eigen::Index k = 0; k < g.rows(); ++k) {
    const double signal = g(k, k);
    out(k) = signal / (g.row(k).sum() - signal + problem.sigma2);
  }
  return out;
}

double sum_rate(const PrecodingProblem& problem, const CMatrix& W) {
  const RVector g = sinrs(problem, W);
  double r = 0.0;
  for (Eigen::Index k = 0; k < g.size(); ++k) r += problem.alpha(k) * std::log2(1.0 + g(k));
  return r;
}

double min_rate(const PrecodingProblem& problem, const CMatrix& W) {
  return std::log2(1.0 + sinrs(problem, W).minCoeff());
}

double balanced_level(const PrecodingProblem& problem, const CMatrix& W) {
  return (sinrs(problem, W).array() / problem.rho.array()).minCoeff();
}

CMatrix project_power(const CMatrix& W, double p_max) {
  const double norm = W.norm();
  if (!(norm > 0.0)) throw Error("project_power: precoder is zero");
  if (!(p_max > 0.0)) throw Error("project_power: p_max must be positive");
  const double power = W.squaredNorm();
  if (power == p_max) return W;
  return W * (std::sqrt(p_max) / norm);
}

PrecodingSolution mrt_precoder(const PrecodingProblem& problem) {
  problem.validate();
  PrecodingSolution sol;
  sol.W = equal_power_columns(problem.H, problem.p_max, active_users(problem.H));
  sol.objective = sum_rate(problem, sol.W);
  return sol;
}

PrecodingSolution zf_precoder(const PrecodingProblem& problem) {
  problem.validate();
  const CMatrix& H = problem.H;
  if (H.cols() > H.rows()) throw Error("zf_precoder: more users than antennas");
  Eigen::ColPivHouseholderQR<CMatrix> qr(H);
  if (qr.rank() < H.cols()) throw Error("zf_precoder: channel matrix is rank deficient");
  const CMatrix gram = H.adjoint() * H;
  const CMatrix directions = H * gram.ldlt().solve(CMatrix::Identity(H.cols(), H.cols()));
  PrecodingSolution sol;
  sol.W = equal_power_columns(directions, problem.p_max,
                              std::vector<bool>(H.cols(), true));
  sol.objective = sum_rate(problem, sol.W);
  return sol;
}

PrecodingSolution wmmse_from(const PrecodingProblem& problem, const CMatrix& start,
                             SolverOptions opts) {
  problem.validate();
  const CMatrix& H = problem.H;
  const auto n_t = H.rows();
  const auto K = H.cols();
  const auto active = active_users(H);
  if (start.rows() != n_t || start.cols() != K) throw Error("wmmse: start shape mismatch");

  PrecodingSolution sol;
  sol.W = equal_power_columns(start, problem.p_max, active);
  double prev = sum_rate(problem, sol.W);
  sol.objective = prev;
  sol.objective_trace.push_back(prev);
  sol.status = SolverStatus::kMaxIterations;
  if (std::none_of(active.begin(), active.end(), [](bool a) { return a; })) {
    sol.status = SolverStatus::kConverged;
    return sol;
  }

  CVector u(K);
  RVector weight(K);
  for (int it = 1; it <= opts.max_iters; ++it) {
    const CMatrix HW = H.adjoint() * sol.W;  // (k, i) = h_k^H w_i
    CMatrix A = CMatrix::Zero(n_t, n_t);
    CMatrix B = CMatrix::Zero(n_t, K);
    for (Eigen::Index k = 0; k < K; ++k) {
      if (!active[k]) continue;
      const double total = HW.row(k).cwiseAbs2().sum() + problem.sigma2;
      u(k) = HW(k, k) / total;
      const double mse = 1.0 - std::norm(HW(k, k)) / total;
      weight(k) = problem.alpha(k) / mse;  // alpha_k * lambda_k
      A.noalias() += (weight(k) * std::norm(u(k))) * H.col(k) * H.col(k).adjoint();
      B.col(k) = (weight(k) * u(k)) * H.col(k);
    }
    if (!all_finite(A) || !all_finite(B))
      throw NumericError("wmmse: non-finite receiver/weight update at iteration " +
                         std::to_string(it));

    Eigen::SelfAdjointEigenSolver<CMatrix> es(A);
    const RVector d = es.eigenvalues();
    const CMatrix C = es.eigenvectors().adjoint() * B;
    const RVector phi = C.rowwise().squaredNorm();
    const double d_floor = 1e-12 * std::max(d.maxCoeff(), 1e-300);

    auto power_at = [&](double mu) {
      double p = 0.0;
      for (Eigen::Index j = 0; j < n_t; ++j) {
        const double denom = d(j) + mu;
        if (mu == 0.0 && d(j) <= d_floor) continue;
        p += phi(j) / (denom * denom);
      }
      return p;
    };

    double mu = 0.0;
    if (power_at(0.0) > problem.p_max) {
      double lo = 0.0;
      double hi = std::sqrt(phi.sum() / problem.p_max);
      for (int b = 0; b < 200 && hi - lo > 1e-16 * hi; ++b) {
        const double mid = 0.5 * (lo + hi);
        (power_at(mid) > problem.p_max ? lo : hi) = mid;
      }
      mu = hi;
    }

    RVector inv(n_t);
    for (Eigen::Index j = 0; j < n_t; ++j)
      inv(j) = (mu == 0.0 && d(j) <= d_floor) ? 0.0 : 1.0 / (d(j) + mu);
    CMatrix W = es.eigenvectors() * (inv.asDiagonal() * C);
    if (!all_finite(W))
      throw NumericError("wmmse: non-finite precoder at iteration " + std::to_string(it));
    // Guard against bisection round-off pushing the power over budget.
    const double power = W.squaredNorm();
    if (power > problem.p_max) W *= std::sqrt(problem.p_max / power);

    const double obj = sum_rate(problem, W);
    if (!std::isfinite(obj))
      throw NumericError("wmmse: non-finite objective at iteration " + std::to_string(it));
    if (obj < prev - 1e-9 * std::abs(prev)) ++sol.monotonicity_violations;

    sol.W = std::move(W);
    sol.objective = obj;
    sol.iterations = it;
    sol.objective_trace.push_back(obj);
    sol.residual = std::abs(obj - prev) / std::max(std::abs(prev), 1e-300);
    prev = obj;
    if (sol.residual < opts.tol) {
      sol.status = SolverStatus::kConverged;
      break;
    }
  }
  return sol;
}

PrecodingSolution wmmse_precoder(const PrecodingProblem& problem, SolverOptions opts) {
  PrecodingSolution best = wmmse_from(problem, problem.H, opts);
  // Serving a single user is a fixed point WMMSE cannot leave once every
  // user carries power, and at low SNR it can be the global optimum.
  const CMatrix& H = problem.H;
  for (Eigen::Index k = 0; k < H.cols(); ++k) {
    const double norm = H.col(k).norm();
    if (norm == 0.0) continue;
    CMatrix W = CMatrix::Zero(H.rows(), H.cols());
    W.col(k) = H.col(k) * (std::sqrt(problem.p_max) / norm);
    const double obj = sum_rate(problem, W);
    if (obj > best.objective) {
      best.W = std::move(W);
      best.objective = obj;
      best.objective_trace.push_back(obj);
    }
  }
  return best;
}

PrecodingSolution sinr_balancing_precoder(const PrecodingProblem& problem,
                                          SolverOptions opts) {
  problem.validate();
  const auto active = active_users(problem.H);
  std::vector<Eigen::Index> users;
  for (Eigen::Index k = 0; k < problem.H.cols(); ++k)
    if (active[k]) users.push_back(k);

  PrecodingSolution sol;
  sol.W = CMatrix::Zero(problem.H.rows(), problem.H.cols());
  if (users.empty()) {
    sol.status = SolverStatus::kInfeasible;
    return sol;
  }

  const auto K = static_cast<Eigen::Index>(users.size());
  const auto n_t = problem.H.rows();
  CMatrix H(n_t, K);
  RVector rho(K);
  for (Eigen::Index j = 0; j < K; ++j) {
    H.col(j) = problem.H.col(users[j]);
    rho(j) = problem.rho(users[j]);
  }
  const double P = problem.p_max;
  const double s2 = problem.sigma2;

  auto extended = [&](const RMatrix& G, bool uplink) {
    // G(k, i) = |h_k^H u_i|^2
    RMatrix coupling = G;
    coupling.diagonal().setZero();
    if (uplink) coupling.transposeInPlace();
    const RVector dvec = rho.array() / G.diagonal().array();
    RMatrix ext(K + 1, K + 1);
    ext.topLeftCorner(K, K) = dvec.asDiagonal() * coupling;
    ext.topRightCorner(K, 1) = dvec * s2;
    ext.bottomLeftCorner(1, K) = ext.topLeftCorner(K, K).colwise().sum() / P;
    ext(K, K) = dvec.sum() * s2 / P;
    return ext;
  };

  RVector q = RVector::Zero(K);
  CMatrix U(n_t, K);
  CMatrix best_U;
  double best_lambda = std::numeric_limits<double>::infinity();
  double prev_lambda = std::numeric_limits<double>::infinity();
  sol.status = SolverStatus::kMaxIterations;

  for (int it = 1; it <= opts.max_iters; ++it) {
    CMatrix M = s2 * CMatrix::Identity(n_t, n_t);
    for (Eigen::Index i = 0; i < K; ++i) M.noalias() += q(i) * H.col(i) * H.col(i).adjoint();
    U = M.ldlt().solve(H);
    U.colwise().normalize();
    if (!all_finite(U)) throw NumericError("balancing: non-finite beamformer update");

    const RMatrix G = (H.adjoint() * U).cwiseAbs2();
    const auto [lambda, vec] = perron_pair(extended(G, true));
    q = vec.head(K).cwiseMax(0.0);

    if (lambda < best_lambda) {
      best_lambda = lambda;
      best_U = U;
    }
    sol.iterations = it;
    sol.residual = std::abs(prev_lambda - lambda) / lambda;
    if (it > 1 && sol.residual < opts.tol) {
      sol.status = SolverStatus::kConverged;
      break;
    }
    prev_lambda = lambda;
  }

  const RMatrix G = (H.adjoint() * best_U).cwiseAbs2();
  const RVector p = perron_pair(extended(G, false)).second.head(K).cwiseMax(0.0);
  CMatrix W = best_U * p.cwiseSqrt().asDiagonal();
  // Removes the residual round-off of the eigenvector normalisation.
  W *= std::sqrt(P / W.squaredNorm());
  for (Eigen::Index j = 0; j < K; ++j) sol.W.col(users[j]) = W.col(j);

  if (users.size() < static_cast<std::size_t>(problem.H.cols())) {
    sol.status = SolverStatus::kInfeasible;
    sol.objective = 0.0;
  } else {
    sol.objective = balanced_level(problem, sol.W);
  }
  const RVector levels = sinrs(problem, sol.W).array() / problem.rho.array();
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (auto k : users) {
    lo = std::min(lo, levels(k));
    hi = std::max(hi, levels(k));
  }
  sol.residual = lo > 0.0 ? (hi - lo) / lo : 0.0;
  return sol;
}

double balanced_level_oracle(const PrecodingProblem& problem) {
  problem.validate();
  const CMatrix& H = problem.H;
  const auto K = H.cols();
  const auto n_t = H.rows();
  for (Eigen::Index k = 0; k < K; ++k)
    if (H.col(k).squaredNorm() == 0.0) return 0.0;

  // Minimal uplink sum power for targets t*rho_k, or +inf if it exceeds p_max.
  auto min_power = [&](double t) {
    RVector q = RVector::Zero(K);
    for (int it = 0; it < 200000; ++it) {
      RVector next(K);
      for (Eigen::Index k = 0; k < K; ++k) {
        CMatrix M = problem.sigma2 * CMatrix::Identity(n_t, n_t);
        for (Eigen::Index i = 0; i < K; ++i)
          if (i != k) M.noalias() += q(i) * H.col(i) * H.col(i).adjoint();
        const double gain = H.col(k).dot(M.ldlt().solve(H.col(k))).real();
        next(k) = t * problem.rho(k) / gain;
      }
      if (next.sum() > problem.p_max) return std::numeric_limits<double>::infinity();
      const double change = (next - q).cwiseAbs().maxCoeff();
      q = next;
      if (change <= 1e-14 * q.maxCoeff()) return q.sum();
    }
    return std::numeric_limits<double>::infinity();
  };

  double hi = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < K; ++k)
    hi = std::min(hi, problem.p_max * H.col(k).squaredNorm() / problem.sigma2 / problem.rho(k));
  double lo = 0.0;
  if (std::isfinite(min_power(hi))) return hi;
  while (hi - lo > 1e-10 * hi) {
    const double mid = 0.5 * (lo + hi);
    (std::isfinite(min_power(mid)) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace icwlm
