#include "icwlm/channel_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icwlm/parallel.hpp"

namespace icwlm {

namespace {

constexpr double kMeanClusterDelay = 300e-9;
constexpr double kPathDelayJitter = 10e-9;
constexpr double kClusterDecayDb = 3.0;
constexpr double kMaxElevation = kPi / 6.0;

}  // namespace

std::string task_name(Task task) {
  switch (task) {
    case Task::kSumRate: return "P1";
    case Task::kMaxMinSinr: return "P2";
    case Task::kPrediction: return "P3";
  }
  throw Error("unknown task");
}

Task task_from_name(const std::string& name) {
  if (name == "P1") return Task::kSumRate;
  if (name == "P2") return Task::kMaxMinSinr;
  if (name == "P3") return Task::kPrediction;
  throw Error("unknown task tag '" + name + "'");
}

SystemConfig SystemConfig::with_carrier(double f_c) {
  SystemConfig cfg;
  cfg.f_c = f_c;
  cfg.d_h = kSpeedOfLight / (2.0 * f_c);
  cfg.d_v = cfg.d_h;
  return cfg;
}

void SystemConfig::validate() const {
  if (n_h < 1 || n_v < 1 || k_users < 1 || m_subcarriers < 1)
    throw Error("system config: antenna, user and subcarrier counts must be >= 1");
  if (n_clusters < 1 || paths_per_cluster < 1)
    throw Error("system config: cluster and path counts must be >= 1");
  if (!(f_c > 0.0) || !(delta_f >= 0.0) || !(slot_duration > 0.0))
    throw Error("system config: carrier, spacing and slot duration must be positive");
  if (!(d_h > 0.0) || !(d_v > 0.0)) throw Error("system config: antenna spacing must be positive");
  if (!(p_max > 0.0)) throw Error("system config: p_max must be positive");
  if (!(sigma2 > 0.0)) throw Error("system config: sigma2 must be positive");
}

double SystemConfig::subcarrier_frequency(int index) const {
  return f_c + (static_cast<double>(index) - 0.5 * (m_subcarriers - 1)) * delta_f;
}

double snr_to_p_max(double snr_db) { return std::pow(10.0, snr_db / 10.0); }

std::size_t PathSet::path_count() const {
  std::size_t n = 0;
  for (const auto& c : clusters) n += c.paths.size();
  return n;
}

double PathSet::total_power() const {
  double p = 0.0;
  for (const auto& c : clusters)
    for (const auto& path : c.paths) p += std::norm(path.beta);
  return p;
}

CVector steering_vector(double azimuth, double elevation, const SystemConfig& cfg) {
  const double kh = 2.0 * kPi * cfg.f_c * cfg.d_h * std::sin(elevation) * std::cos(azimuth) /
                    kSpeedOfLight;
  const double kv = 2.0 * kPi * cfg.f_c * cfg.d_v * std::sin(azimuth) / kSpeedOfLight;
  CVector a(cfg.n_t());
  for (int ih = 0; ih < cfg.n_h; ++ih) {
    const Complex ah = std::polar(1.0, kh * ih);
    for (int iv = 0; iv < cfg.n_v; ++iv) {
      a(ih * cfg.n_v + iv) = ah * std::polar(1.0, kv * iv);
    }
  }
  return a;
}

PathSet sample_path_set(Rng& rng, const SystemConfig& cfg, double velocity_kmh) {
  if (!(velocity_kmh >= 0.0)) throw Error("velocity must be non-negative");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::exponential_distribution<double> cluster_delay(1.0 / kMeanClusterDelay);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int n_clusters = cfg.n_clusters;
  const int n_paths = cfg.paths_per_cluster;

  std::vector<double> delays(n_clusters);
  for (auto& d : delays) d = cluster_delay(rng);
  std::sort(delays.begin(), delays.end());

  const double max_doppler = velocity_kmh / 3.6 * cfg.f_c / kSpeedOfLight;

  PathSet set;
  set.clusters.resize(n_clusters);
  for (int n = 0; n < n_clusters; ++n) {
    const double cluster_power = std::pow(10.0, -kClusterDecayDb * n / 10.0);
    const double path_std = std::sqrt(cluster_power / n_paths / 2.0);
    auto& paths = set.clusters[n].paths;
    paths.resize(n_paths);
    for (auto& p : paths) {
      const double re = gauss(rng);
      const double im = gauss(rng);
      p.beta = Complex(re * path_std, im * path_std);
      p.delay = std::max(0.0, delays[n] + (2.0 * unit(rng) - 1.0) * kPathDelayJitter);
      p.phase = 2.0 * kPi * unit(rng);
      p.azimuth = -kPi + 2.0 * kPi * unit(rng);
      p.elevation = -kMaxElevation + 2.0 * kMaxElevation * unit(rng);
      const double psi = 2.0 * kPi * unit(rng);
      p.doppler = max_doppler * std::cos(psi);
      if (p.phase >= 2.0 * kPi) p.phase = 0.0;
    }
  }

  // Unit total power so that E||h||^2 = n_t.
  const double total = set.total_power();
  if (total > 0.0) {
    const double scale = 1.0 / std::sqrt(total);
    for (auto& c : set.clusters)
      for (auto& p : c.paths) p.beta *= scale;
  }
  return set;
}

CVector synthesize_channel(const PathSet& paths, double t, double f,
                           const SystemConfig& cfg) {
  CVector h = CVector::Zero(cfg.n_t());
  for (const auto& c : paths.clusters) {
    for (const auto& p : c.paths) {
      const double arg = 2.0 * kPi * (p.doppler * t - f * p.delay) + p.phase;
      h += (p.beta * std::polar(1.0, arg)) * steering_vector(p.azimuth, p.elevation, cfg);
    }
  }
  return h;
}

CMatrix synthesize_trajectory(const PathSet& paths, std::span<const double> times,
                              double f, const SystemConfig& cfg) {
  const auto n_paths = static_cast<Eigen::Index>(paths.path_count());
  const auto n_times = static_cast<Eigen::Index>(times.size());
  CMatrix steering(cfg.n_t(), n_paths);
  CMatrix coeff(n_paths, n_times);
  Eigen::Index col = 0;
  for (const auto& c : paths.clusters) {
    for (const auto& p : c.paths) {
      steering.col(col) = steering_vector(p.azimuth, p.elevation, cfg);
      for (Eigen::Index j = 0; j < n_times; ++j) {
        const double arg = 2.0 * kPi * (p.doppler * times[j] - f * p.delay) + p.phase;
        coeff(col, j) = p.beta * std::polar(1.0, arg);
      }
      ++col;
    }
  }
  // Column by column so every instant goes through the same kernel; a
  // blocked GEMM would round the remainder columns differently.
  CMatrix out(cfg.n_t(), n_times);
  for (Eigen::Index j = 0; j < n_times; ++j) out.col(j).noalias() = steering * coeff.col(j);
  return out;
}

ChannelSample generate_sample(const SystemConfig& cfg, const DatasetSpec& spec,
                              std::size_t index) {
  Rng rng = make_stream({spec.seed, static_cast<std::uint64_t>(index)});
  std::uniform_real_distribution<double> velocity_dist(spec.v_lo, spec.v_hi);
  std::uniform_int_distribution<std::size_t> snr_pick(0, spec.snr_set.size() - 1);
  std::uniform_int_distribution<int> subcarrier_pick(0, cfg.m_subcarriers - 1);

  ChannelSample s;
  s.seed = stream_key({spec.seed, static_cast<std::uint64_t>(index)});
  s.velocity_kmh = velocity_dist(rng);
  s.snr_db = spec.snr_set[snr_pick(rng)];
  s.subcarrier = subcarrier_pick(rng);
  const double f = cfg.subcarrier_frequency(s.subcarrier);

  std::vector<double> times(spec.t_history + 1);
  for (std::size_t j = 0; j < times.size(); ++j)
    times[j] = static_cast<double>(j) * cfg.slot_duration;

  s.history.assign(times.size(), CMatrix(cfg.n_t(), cfg.k_users));
  for (int k = 0; k < cfg.k_users; ++k) {
    const PathSet paths = sample_path_set(rng, cfg, s.velocity_kmh);
    const CMatrix traj = synthesize_trajectory(paths, times, f, cfg);
    for (std::size_t j = 0; j < times.size(); ++j) s.history[j].col(k) = traj.col(j);
  }
  return s;
}

std::vector<ChannelSample> generate_dataset(const SystemConfig& cfg,
                                            const DatasetSpec& spec, unsigned threads) {
  cfg.validate();
  if (spec.n_samples < 1) throw Error("generate_dataset: n_samples must be >= 1");
  if (spec.t_history < 1) throw Error("generate_dataset: t_history must be >= 1");
  if (!(spec.v_lo <= spec.v_hi) || spec.v_lo < 0.0)
    throw Error("generate_dataset: velocity range must satisfy 0 <= v_lo <= v_hi");
  if (spec.snr_set.empty()) throw Error("generate_dataset: snr_set is empty");

  std::vector<ChannelSample> out(spec.n_samples);
  parallel_for(out.size(), threads,
               [&](std::size_t i) { out[i] = generate_sample(cfg, spec, i); });
  return out;
}

}  // namespace icwlm
