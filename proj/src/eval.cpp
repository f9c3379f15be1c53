#include "icwlm/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "icwlm/parallel.hpp"
#include "icwlm/precoding.hpp"
#include "icwlm/random.hpp"

namespace icwlm {

double nmse(const CMatrix& predicted, const CMatrix& actual) {
  if (predicted.rows() != actual.rows() || predicted.cols() != actual.cols())
    throw Error("nmse: shape mismatch");
  const double den = actual.squaredNorm();
  if (!(den > 0.0)) throw Error("nmse: actual matrix is zero");
  return (predicted - actual).squaredNorm() / den;
}

CMatrix last_value_baseline(std::span<const CMatrix> history) {
  if (history.empty()) throw Error("last_value_baseline: empty history");
  return history.size() == 1 ? history[0] : history[history.size() - 2];
}

IclPredictor::IclPredictor(ModelParams<float> params, double channel_scale)
    : params_(std::move(params)), model_(params_.config), scaling_{channel_scale} {}

CMatrix IclPredictor::precoder(std::span<const PrecodingExample> demos,
                               const PrecodingExample& query, double p_max) const {
  const PrecodingExample q{query.H, CMatrix(), query.task, query.snr_db};
  const IclSequence seq = build_precoding_sequence(demos, q, scaling_);
  const CMatrix& H = query.H;
  const Mat<float> out = model_.forward(params_, tokens_as<float>(seq));
  const RVector y = out.col(out.cols() - 1).cast<double>();
  const CMatrix W = scaling_.precoder_from_token(y, H.rows(), H.cols());
  if (!(W.squaredNorm() > 0.0)) return project_power(H, p_max);
  return project_power(W, p_max);
}

CMatrix IclPredictor::predict_next(std::span<const CMatrix> known) const {
  if (known.empty()) throw Error("predict_next: no known slots");
  const auto n = static_cast<Eigen::Index>(known.size());
  RMatrix tokens(params_.config.token_dim, 2 * n - 1);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    tokens.col(2 * i) = scaling_.channel_token(known[i]);
    tokens.col(2 * i + 1) = scaling_.channel_token(known[i + 1]);
  }
  tokens.col(2 * n - 2) = scaling_.channel_token(known[n - 1]);
  const Mat<float> out = model_.forward(params_, tokens.cast<float>());
  return scaling_.channel_from_token(out.col(2 * n - 2).cast<double>(), known[0].rows(),
                                     known[0].cols());
}

const Curve& EvalReport::curve(const std::string& name) const {
  for (const auto& c : curves)
    if (c.name == name) return c;
  throw Error("report " + experiment + " has no curve " + name);
}

void EvalReport::write_csv(std::ostream& os, bool gnuplot) const {
  const char sep = gnuplot ? ' ' : ',';
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  if (gnuplot) os << "# ";
  os << variable;
  for (const auto& c : curves) os << sep << c.name << "_mean" << sep << c.name << "_se";
  if (!trained.empty()) os << sep << "trained";
  os << '\n';
  for (std::size_t i = 0; i < grid.size(); ++i) {
    os << num(grid[i]);
    for (const auto& c : curves) os << sep << num(c.mean[i]) << sep << num(c.se[i]);
    if (!trained.empty()) os << sep << (trained[i] ? 1 : 0);
    os << '\n';
  }
}

void EvalReport::write_csv(const std::filesystem::path& path, bool gnuplot) const {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  write_csv(f, gnuplot);
  if (!f) throw Error("write failed for " + path.string());
}

std::pair<double, double> mean_se(std::span<const double> values) {
  if (values.empty()) throw Error("mean_se: no values");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

namespace {

constexpr std::uint64_t kTestSetTag = 0x7e57;
constexpr std::uint64_t kDemoTag = 0xde30;

std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }

void check_grid(std::span<const double> grid, const char* what) {
  if (grid.empty()) throw Error(std::string(what) + ": empty grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw Error(std::string(what) + ": grid must be increasing");
}

void add_curve(EvalReport& r, std::string name, const std::vector<std::vector<double>>& per_point) {
  Curve c{std::move(name), {}, {}};
  for (const auto& v : per_point) {
    const auto [m, se] = mean_se(v);
    c.mean.push_back(m);
    c.se.push_back(se);
  }
  r.curves.push_back(std::move(c));
}

double precoding_metric(Task task, const PrecodingProblem& pr, const CMatrix& W) {
  return task == Task::kSumRate ? sum_rate(pr, W) : min_rate(pr, W);
}

// Solved test set for one task; samples at the same SNR value share a seed
// across experiments.
TaskDataset precoding_test_set(Task task, const SystemConfig& cfg, const TestSetSpec& spec,
                               std::span<const double> snrs, unsigned threads) {
  DatasetSpec ds;
  ds.n_samples = spec.n_samples;
  ds.v_lo = spec.v_lo;
  ds.v_hi = spec.v_hi;
  ds.snr_set.assign(snrs.begin(), snrs.end());
  ds.t_history = 1;
  std::uint64_t key = stream_key({spec.seed, kTestSetTag, static_cast<std::uint64_t>(task)});
  for (double s : snrs) key = stream_key({key, bits(s)});
  ds.seed = key;
  return make_task_dataset(task, cfg, ds, threads, 1.0);
}

struct PrecodingResults {
  std::vector<std::vector<double>> model;  // per shot count, per query
  std::vector<double> baseline;
};

// Evaluates every query of `test` with demonstrations from the same SNR
// group. The demonstration set for k shots is the first k of one draw, so
// the shot curves are nested.
PrecodingResults run_precoding(const IclPredictor& model, const TaskDataset& test,
                               std::span<const int> shots, std::uint64_t seed, unsigned threads) {
  const int max_shots = shots.empty() ? 0 : *std::max_element(shots.begin(), shots.end());
  std::map<double, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < test.size(); ++i) groups[test.samples[i].snr_db].push_back(i);
  for (const auto& [snr, idx] : groups)
    if (static_cast<int>(idx.size()) - 1 < max_shots)
      throw Error("eval: only " + std::to_string(idx.size()) + " samples at " +
                  std::to_string(snr) + " dB, need " + std::to_string(max_shots + 1));

  PrecodingResults res;
  res.model.assign(shots.size(), std::vector<double>(test.size()));
  res.baseline.resize(test.size());
  const auto& cfg = test.cfg;
  parallel_for(test.size(), threads, [&](std::size_t i) {
    const auto& s = test.samples[i];
    const auto pr =
        PrecodingProblem::make(s.current(), cfg.sigma2, cfg.sigma2 * snr_to_p_max(s.snr_db));
    res.baseline[i] = precoding_metric(test.task, pr, test.labels[i]);
    Rng rng = make_stream({seed, kDemoTag, static_cast<std::uint64_t>(test.task), i});
    const auto demo_idx = draw_demo_indices(groups.at(s.snr_db), i, max_shots, rng);
    std::vector<PrecodingExample> demos;
    for (auto j : demo_idx)
      demos.push_back({test.samples[j].current(), test.labels[j], test.task, s.snr_db});
    for (std::size_t k = 0; k < shots.size(); ++k) {
      const auto W = model.precoder(std::span(demos).first(shots[k]),
                                    {s.current(), CMatrix(), test.task, s.snr_db}, pr.p_max);
      res.model[k][i] = precoding_metric(test.task, pr, W);
    }
  });
  return res;
}

EvalReport precoding_vs_snr(const char* id, Task task, const char* baseline_name,
                            const IclPredictor& model, const SystemConfig& cfg,
                            const TestSetSpec& spec, std::span<const double> snr_grid,
                            std::span<const int> shots, unsigned threads) {
  check_grid(snr_grid, id);
  if (shots.empty()) throw Error(std::string(id) + ": no shot counts");
  EvalReport r;
  r.experiment = id;
  r.variable = "snr_db";
  r.grid.assign(snr_grid.begin(), snr_grid.end());
  r.shots.assign(shots.begin(), shots.end());
  r.samples = static_cast<std::size_t>(spec.n_samples);
  std::vector<std::vector<std::vector<double>>> per_shot(shots.size());
  std::vector<std::vector<double>> base;
  for (double snr : snr_grid) {
    const auto test = precoding_test_set(task, cfg, spec, std::span(&snr, 1), threads);
    auto res = run_precoding(model, test, shots, spec.seed, threads);
    for (std::size_t k = 0; k < shots.size(); ++k) per_shot[k].push_back(std::move(res.model[k]));
    base.push_back(std::move(res.baseline));
  }
  add_curve(r, baseline_name, base);
  for (std::size_t k = 0; k < shots.size(); ++k)
    add_curve(r, "model_" + std::to_string(shots[k]) + "shot", per_shot[k]);
  return r;
}

}  // namespace

EvalReport eval_sum_rate_vs_snr(const IclPredictor& model, const SystemConfig& cfg,
                                const TestSetSpec& spec, std::span<const double> snr_grid,
                                std::span<const int> shots, unsigned threads) {
  return precoding_vs_snr("fig7", Task::kSumRate, "wmmse", model, cfg, spec, snr_grid, shots,
                          threads);
}

EvalReport eval_min_rate_vs_snr(const IclPredictor& model, const SystemConfig& cfg,
                                const TestSetSpec& spec, std::span<const double> snr_grid,
                                std::span<const int> shots, unsigned threads) {
  return precoding_vs_snr("fig8", Task::kMaxMinSinr, "balancing", model, cfg, spec, snr_grid,
                          shots, threads);
}

namespace {

TaskDataset prediction_test_set(const SystemConfig& cfg, const TestSetSpec& spec, double v_lo,
                                double v_hi, int t_history, unsigned threads) {
  DatasetSpec ds;
  ds.n_samples = spec.n_samples;
  ds.v_lo = v_lo;
  ds.v_hi = v_hi;
  ds.snr_set = {0.0};
  ds.t_history = t_history;
  ds.seed = stream_key({spec.seed, kTestSetTag, static_cast<std::uint64_t>(Task::kPrediction),
                        bits(v_lo), bits(v_hi), static_cast<std::uint64_t>(t_history)});
  return make_task_dataset(Task::kPrediction, cfg, ds, threads, 1.0);
}

}  // namespace

EvalReport eval_nmse_vs_velocity(const IclPredictor& model, const SystemConfig& cfg,
                                 const TestSetSpec& spec, std::span<const double> velocities,
                                 unsigned threads) {
  check_grid(velocities, "fig9");
  if (spec.t_history < 1) throw Error("fig9: t_history must be >= 1");
  EvalReport r;
  r.experiment = "fig9";
  r.variable = "velocity_kmh";
  r.grid.assign(velocities.begin(), velocities.end());
  r.shots = {spec.t_history - 1};
  r.samples = static_cast<std::size_t>(spec.n_samples);
  std::vector<std::vector<double>> m, b;
  for (double v : velocities) {
    const auto test = prediction_test_set(cfg, spec, v, v, spec.t_history, threads);
    std::vector<double> mv(test.size()), bv(test.size());
    parallel_for(test.size(), threads, [&](std::size_t i) {
      const auto& h = test.samples[i].history;
      const auto known = std::span(h).first(h.size() - 1);
      mv[i] = nmse(model.predict_next(known), h.back());
      bv[i] = nmse(last_value_baseline(h), h.back());
    });
    m.push_back(std::move(mv));
    b.push_back(std::move(bv));
  }
  add_curve(r, "last_value", b);
  add_curve(r, "model", m);
  return r;
}

EvalReport eval_shots_sweep(const IclPredictor& model, const SystemConfig& cfg,
                            const TestSetSpec& spec, std::span<const double> snr_set,
                            std::span<const int> shot_grid, unsigned threads) {
  std::vector<double> grid(shot_grid.begin(), shot_grid.end());
  check_grid(grid, "fig10_12");
  if (shot_grid.front() < 0) throw Error("fig10_12: negative shot count");
  EvalReport r;
  r.experiment = "fig10_12";
  r.variable = "shots";
  r.grid = grid;
  r.shots.assign(shot_grid.begin(), shot_grid.end());
  r.samples = static_cast<std::size_t>(spec.n_samples);

  for (Task task : {Task::kSumRate, Task::kMaxMinSinr}) {
    const auto test = precoding_test_set(task, cfg, spec, snr_set, threads);
    const auto res = run_precoding(model, test, shot_grid, spec.seed, threads);
    const std::string p = task == Task::kSumRate ? "p1_" : "p2_";
    add_curve(r, p + "model", res.model);
    add_curve(r, p + (task == Task::kSumRate ? "wmmse" : "balancing"),
              std::vector<std::vector<double>>(shot_grid.size(), res.baseline));
  }

  const int slots = shot_grid.back() + 1;
  const auto test = prediction_test_set(cfg, spec, spec.v_lo, spec.v_hi, slots, threads);
  std::vector<std::vector<double>> m(shot_grid.size(), std::vector<double>(test.size()));
  std::vector<double> b(test.size());
  parallel_for(test.size(), threads, [&](std::size_t i) {
    const auto& h = test.samples[i].history;  // slots + 1 entries, the last is the target
    b[i] = nmse(last_value_baseline(h), h.back());
    for (std::size_t k = 0; k < shot_grid.size(); ++k) {
      const auto known = std::span(h).subspan(h.size() - 2 - shot_grid[k], shot_grid[k] + 1);
      m[k][i] = nmse(model.predict_next(known), h.back());
    }
  });
  add_curve(r, "p3_model_nmse", m);
  add_curve(r, "p3_last_value_nmse", std::vector<std::vector<double>>(shot_grid.size(), b));
  return r;
}

EvalReport eval_unseen_snr(const IclPredictor& model, const SystemConfig& cfg,
                           const TestSetSpec& spec, std::span<const double> trained_snrs,
                           std::span<const double> heldout_snrs, int shots, unsigned threads) {
  if (heldout_snrs.empty()) throw Error("fig13: no held-out SNR points");
  for (double h : heldout_snrs)
    if (std::find(trained_snrs.begin(), trained_snrs.end(), h) != trained_snrs.end())
      throw Error("fig13: " + std::to_string(h) + " dB is a trained SNR point");
  std::vector<double> grid(trained_snrs.begin(), trained_snrs.end());
  grid.insert(grid.end(), heldout_snrs.begin(), heldout_snrs.end());
  std::sort(grid.begin(), grid.end());
  check_grid(grid, "fig13");

  const int shot_list[] = {shots};
  EvalReport r = eval_sum_rate_vs_snr(model, cfg, spec, grid, shot_list, threads);
  r.experiment = "fig13";
  for (double g : grid)
    r.trained.push_back(std::find(trained_snrs.begin(), trained_snrs.end(), g) !=
                        trained_snrs.end());
  return r;
}

}  // namespace icwlm
