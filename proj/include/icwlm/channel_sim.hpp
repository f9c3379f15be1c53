#pragma once

// Cluster-based multipath MIMO channel synthesis for a BS with a uniform
// planar array serving single-antenna users.
//
// A user's channel at time t and frequency f is
//   h(t, f) = sum_n sum_m beta * exp(j[2pi(nu t - f tau) + phi]) * a(theta, varphi)
// where a() is the UPA steering vector a_h (x) a_v.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "icwlm/random.hpp"
#include "icwlm/types.hpp"

namespace icwlm {

struct SystemConfig {
  int n_h = 4;
  int n_v = 4;
  int k_users = 4;
  double f_c = 2.4e9;            // Hz
  double delta_f = 180e3;        // Hz
  int m_subcarriers = 48;
  double d_h = kSpeedOfLight / (2.0 * 2.4e9);  // m
  double d_v = kSpeedOfLight / (2.0 * 2.4e9);  // m
  double slot_duration = 0.5e-3; // s
  double p_max = 1.0;            // W
  double sigma2 = 1.0;           // W
  int n_clusters = 21;
  int paths_per_cluster = 20;

  int n_t() const { return n_h * n_v; }
  // Entries per packed real token: 2 * n_t * k_users.
  int token_dim() const { return 2 * n_t() * k_users; }

  // Half-wavelength spacing at the given carrier.
  static SystemConfig with_carrier(double f_c);

  // Throws Error on violated invariants.
  void validate() const;

  // Frequency of subcarrier `index`, centered on f_c.
  double subcarrier_frequency(int index) const;
};

// sigma2 fixed at 1, p_max = 10^(snr_db/10).
double snr_to_p_max(double snr_db);

struct PathParams {
  Complex beta;
  double doppler = 0.0;    // Hz
  double delay = 0.0;      // s
  double phase = 0.0;      // rad, [0, 2pi)
  double azimuth = 0.0;    // rad
  double elevation = 0.0;  // rad
};

struct Cluster {
  std::vector<PathParams> paths;
};

struct PathSet {
  std::vector<Cluster> clusters;

  std::size_t path_count() const;
  double total_power() const;  // sum |beta|^2
};

// a_h (x) a_v for the configured UPA; index i_h * n_v + i_v.
CVector steering_vector(double azimuth, double elevation, const SystemConfig& cfg);

// Draws one user's multipath realization. Velocity in km/h.
PathSet sample_path_set(Rng& rng, const SystemConfig& cfg, double velocity_kmh);

// Exact double sum, one time instant.
CVector synthesize_channel(const PathSet& paths, double t, double f,
                           const SystemConfig& cfg);

// Same sum evaluated at several instants; column j corresponds to times[j].
CMatrix synthesize_trajectory(const PathSet& paths, std::span<const double> times,
                              double f, const SystemConfig& cfg);

struct ChannelSample {
  std::vector<CMatrix> history;  // T+1 matrices n_t x k_users, slots t-T ... t
  double velocity_kmh = 0.0;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  int subcarrier = 0;

  const CMatrix& current() const { return history.back(); }
  int t_history() const { return static_cast<int>(history.size()) - 1; }
};

struct DatasetSpec {
  int n_samples = 1;
  double v_lo = 10.0;  // km/h
  double v_hi = 100.0;
  std::vector<double> snr_set = {0.0, 10.0, 20.0, 30.0};
  int t_history = 8;
  std::uint64_t seed = 0;
};

// Sample i is a pure function of (spec.seed, i); `threads` only changes
// wall time. threads == 0 uses the machine's parallelism.
std::vector<ChannelSample> generate_dataset(const SystemConfig& cfg,
                                            const DatasetSpec& spec,
                                            unsigned threads = 1);

ChannelSample generate_sample(const SystemConfig& cfg, const DatasetSpec& spec,
                              std::size_t index);

}  // namespace icwlm
