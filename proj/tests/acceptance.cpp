// Acceptance run. Prints one PASS/FAIL line per criterion (detail lines are
// indented) and exits non-zero if any criterion fails. Arguments select a
// subset of criteria, e.g. `acceptance 1 4`.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "icwlm/dataset_io.hpp"
#include "icwlm/eval.hpp"
#include "icwlm/experiment.hpp"
#include "icwlm/parallel.hpp"
#include "icwlm/precoding.hpp"
#include "icwlm/trainer.hpp"
#include "oracles.hpp"

using namespace icwlm;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> details;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    details.push_back(std::string(ok ? "ok    " : "FAIL  ") + what);
  }
  void note(const std::string& what) { details.push_back("      " + what); }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(clk::time_point t) {
  return std::chrono::duration<double>(clk::now() - t).count();
}

CMatrix rayleigh(Eigen::Index n_t, Eigen::Index k, std::uint64_t seed) {
  Rng rng = make_stream({seed, 0xacc});
  std::normal_distribution<double> g(0.0, std::sqrt(0.5));
  CMatrix H(n_t, k);
  for (Eigen::Index i = 0; i < H.size(); ++i) H.data()[i] = Complex(g(rng), g(rng));
  return H;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------

Outcome criterion_solver_sum_rate() {
  Outcome out;
  const auto t0 = clk::now();
  double worst_baseline = 1e300, worst_oracle = 1e300;
  int violations = 0, unconverged = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto pr = PrecodingProblem::make(rayleigh(4, 2, s), 1.0, snr_to_p_max(10.0));
    const auto sol = wmmse_precoder(pr);
    violations += sol.monotonicity_violations;
    unconverged += sol.status != SolverStatus::kConverged;
    const double r = sum_rate(pr, sol.W);
    const double mrt = sum_rate(pr, project_power(mrt_precoder(pr).W, pr.p_max));
    const double zf = sum_rate(pr, project_power(zf_precoder(pr).W, pr.p_max));
    worst_baseline = std::min(worst_baseline, r - std::max(mrt, zf));
    const double oracle = testing::projected_gradient_sum_rate(pr, 8, s);
    worst_oracle = std::min(worst_oracle, r - oracle);
  }
  const double t = seconds_since(t0);
  out.require(worst_baseline >= -1e-6,
              fmt("WMMSE - max(MRT, ZF) >= -1e-6 (worst %.3e)", worst_baseline));
  out.require(worst_oracle >= -1e-3,
              fmt("WMMSE - projected-gradient oracle >= -1e-3 (worst %.3e)", worst_oracle));
  out.require(violations == 0, fmt("monotonicity violations = %d", violations));
  out.note(fmt("%d of 100 runs hit the iteration cap", unconverged));
  out.require(t < 60.0, fmt("runtime %.1f s < 60 s", t));
  return out;
}

Outcome criterion_solver_balancing() {
  Outcome out;
  const auto t0 = clk::now();
  double worst_level = 0.0, worst_spread = 0.0, worst_power = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto pr = PrecodingProblem::make(rayleigh(4, 2, 1000 + s), 1.0, snr_to_p_max(10.0));
    Rng rng = make_stream({s, 0x5e1});
    std::uniform_real_distribution<double> u(0.5, 2.0);
    for (Eigen::Index k = 0; k < pr.rho.size(); ++k) pr.rho(k) = u(rng);
    const auto sol = sinr_balancing_precoder(pr);
    const double oracle = balanced_level_oracle(pr);
    worst_level = std::max(worst_level, std::abs(sol.objective - oracle) / oracle);
    const RVector lv = sinrs(pr, sol.W).array() / pr.rho.array();
    worst_spread = std::max(worst_spread, (lv.maxCoeff() - lv.minCoeff()) / lv.minCoeff());
    worst_power = std::max(worst_power, std::abs(sol.W.squaredNorm() - pr.p_max) / pr.p_max);
  }
  const double t = seconds_since(t0);
  out.require(worst_level <= 1e-4, fmt("level vs bisection oracle, rel %.3e <= 1e-4", worst_level));
  out.require(worst_spread <= 1e-6, fmt("weighted SINR spread, rel %.3e <= 1e-6", worst_spread));
  out.require(worst_power <= 1e-6, fmt("power tightness, rel %.3e <= 1e-6", worst_power));
  out.require(t < 120.0, fmt("runtime %.1f s < 120 s", t));
  return out;
}

Outcome criterion_channel() {
  Outcome out;
  const auto t0 = clk::now();
  const SystemConfig cfg;
  Rng rng(11);
  std::uniform_real_distribution<double> ang(-kPi, kPi);
  double worst = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const CVector a = steering_vector(ang(rng), ang(rng) / 2, cfg);
    for (Eigen::Index j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(std::abs(a(j)) - 1.0));
  }
  out.require(worst <= 1e-12, fmt("steering |a_i| - 1 max %.3e <= 1e-12", worst));

  bool invariant = true;
  for (int i = 0; i < 50; ++i) {
    const PathSet ps = sample_path_set(rng, cfg, 0.0);
    const CVector h0 = synthesize_channel(ps, 0.0, cfg.f_c, cfg);
    for (double t : {0.5e-3, 7.0e-3, 1.0, 123.456})
      invariant = invariant && synthesize_channel(ps, t, cfg.f_c, cfg) == h0;
  }
  out.require(invariant, "zero-Doppler channels identical at every time instant");

  std::vector<double> means;
  for (double v : {10.0, 50.0, 100.0}) {
    DatasetSpec spec;
    spec.n_samples = 1000;
    spec.t_history = 1;
    spec.v_lo = spec.v_hi = v;
    spec.seed = 3;
    double m = 0.0;
    for (const auto& s : generate_dataset(cfg, spec))
      m += nmse(last_value_baseline(s.history), s.history.back()) / spec.n_samples;
    means.push_back(m);
  }
  out.require(means[0] < means[1] && means[1] < means[2],
              fmt("last-value NMSE at 10/50/100 km/h: %.4g < %.4g < %.4g", means[0], means[1],
                  means[2]));
  const double t = seconds_since(t0);
  out.require(t < 60.0, fmt("runtime %.1f s < 60 s", t));
  return out;
}

Mat<double> gaussian(Eigen::Index r, Eigen::Index c, Rng& rng, double std = 1.0) {
  std::normal_distribution<double> g(0.0, std);
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

Outcome criterion_transformer() {
  Outcome out;
  const auto t0 = clk::now();
  Rng rng(5);

  bool identity = true;
  for (int i = 0; i < 100; ++i) {
    const Vec<double> v = gaussian(32, 1, rng);
    identity = identity && ops::rope_rotate<double>(v, 0) == v;
    const Vec<float> f = v.cast<float>();
    identity = identity && ops::rope_rotate<float>(f, 0) == f;
  }
  out.require(identity, "rotation at position 0 is the identity (bitwise)");

  std::uniform_int_distribution<int> pos(0, 63), shift(1, 64);
  double worst_shift = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const Vec<double> q = gaussian(32, 1, rng), k = gaussian(32, 1, rng);
    const int m = pos(rng), n = pos(rng), s = shift(rng);
    worst_shift = std::max(worst_shift, std::abs(ops::attention_logit<double>(q, m, k, n) -
                                                 ops::attention_logit<double>(q, m + s, k, n + s)));
  }
  out.require(worst_shift < 1e-5, fmt("relative-shift logit change %.3e < 1e-5", worst_shift));

  {
    ModelConfig cfg;
    cfg.max_positions = 24;
    const auto P = ModelParams<float>::initialized(cfg, 3);
    const Transformer<float> model(cfg);
    const Mat<float> X = gaussian(cfg.token_dim, 20, rng).cast<float>();
    const Mat<float> Y = model.forward(P, X);
    bool causal = true;
    for (int p = 0; p < 19; ++p) {
      Mat<float> X2 = X;
      X2.rightCols(19 - p) = gaussian(cfg.token_dim, 19 - p, rng).cast<float>();
      causal = causal && model.forward(P, X2).leftCols(p + 1) == Y.leftCols(p + 1);
      causal = causal && model.forward(P, X.leftCols(p + 1)) == Y.leftCols(p + 1);
    }
    out.require(causal, "outputs unchanged (bitwise) by perturbing or removing later tokens");
  }

  {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_ffn = 16;
    cfg.token_dim = 6;
    cfg.max_positions = 16;
    ModelParams<double> P(cfg);
    for (auto& v : P.values) v = gaussian(1, 1, rng, 0.4)(0, 0);
    for (const auto& L : P.layout.layers)
      for (auto i : {L.attn_norm, L.ffn_norm}) P.block(i).array() += 1.0;
    std::vector<IclSequence> batch;
    for (int len : {7, 4}) {
      IclSequence s;
      s.tokens = gaussian(6, len, rng);
      for (int p = 0; p < len; p += 2) s.loss_positions.push_back(p);
      s.targets = gaussian(6, static_cast<Eigen::Index>(s.loss_positions.size()), rng);
      s.roles.assign(len, TokenRole::kInput);
      batch.push_back(s);
    }
    const std::vector<double> w = {0.6, 1.4};
    const Transformer<double> model(cfg);
    ModelParams<double> G(cfg);
    model.loss_and_gradient(P, batch, w, &G);
    const double h = 1e-5;
    double worst = 0.0;
    std::size_t count = 0;
    for (const auto& b : P.layout.blocks())
      for (std::size_t i = b.offset; i < b.offset + b.size(); ++i, ++count) {
        const double saved = P.values[i];
        P.values[i] = saved + h;
        const double up = model.loss_and_gradient(P, batch, w, nullptr).weighted;
        P.values[i] = saved - h;
        const double down = model.loss_and_gradient(P, batch, w, nullptr).weighted;
        P.values[i] = saved;
        const double fd = (up - down) / (2 * h);
        const double rel = std::abs(G.values[i] - fd) /
                           std::max({std::abs(fd), std::abs(G.values[i]), 1e-7});
        worst = std::max(worst, rel);
      }
    out.require(worst < 1e-4,
                fmt("gradient vs central differences over %zu entries, max rel %.3e < 1e-4", count,
                    worst));
  }
  const double t = seconds_since(t0);
  out.require(t < 120.0, fmt("runtime %.1f s < 120 s", t));
  return out;
}

// Small datasets on a 2x2 array, used by the mechanics and plumbing checks.
SystemConfig small_system() {
  SystemConfig c;
  c.n_h = 2;
  c.n_v = 2;
  c.k_users = 2;
  c.n_clusters = 4;
  c.paths_per_cluster = 5;
  return c;
}

Outcome criterion_training() {
  Outcome out;
  const auto t0 = clk::now();

  const std::vector<std::vector<double>> equal = {{0.7, 0.5}, {0.7, 0.5}, {0.7, 0.5}};
  const auto sym = dwa_weights(equal, 2.0).weights;
  out.require(sym == std::vector<double>{1.0, 1.0, 1.0}, "equal histories give weights (1, 1, 1)");

  TrainConfig lc;
  out.require(lr_schedule(0, lc) == 0.0 && lr_schedule(lc.warmup_steps, lc) == lc.peak_lr &&
                  lr_schedule(lc.total_steps() - 1, lc) == lc.min_lr,
              fmt("lr endpoints exact: 0 -> 0, %d -> %g, %ld -> %g", lc.warmup_steps, lc.peak_lr,
                  lc.total_steps() - 1, lc.min_lr));

  // DWA weights over a short multi-task run.
  {
    const SystemConfig sys = small_system();
    DatasetSpec spec;
    spec.n_samples = 64;
    spec.t_history = 4;
    std::array<TaskDataset, kNumTasks> data;
    for (int t = 0; t < kNumTasks; ++t) {
      spec.seed = 40 + t;
      data[t] = make_task_dataset(static_cast<Task>(t), sys, spec, 1,
                                  t == 0 ? std::nullopt : std::optional(data[0].norm_scale));
    }
    SamplerOptions so;
    so.shots = 2;
    const MixedBatchSampler sampler({&data[0], &data[1], &data[2]}, so);
    ModelConfig mc;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.d_model = 16;
    mc.d_ffn = 32;
    mc.max_positions = 16;
    mc.token_dim = sys.token_dim();
    TrainConfig tc;
    tc.epochs = 12;
    tc.steps_per_epoch = 5;
    tc.batch_size = 8;
    tc.warmup_steps = 5;
    tc.peak_lr = 3e-3;
    auto state = TrainState::initial(mc, 1);
    double worst = 0.0;
    int epochs = 0;
    TrainOptions opt;
    opt.on_epoch = [&](const EpochRecord& r) {
      worst = std::max(worst, std::abs(r.weight[0] + r.weight[1] + r.weight[2] - 3.0));
      ++epochs;
    };
    train(state, sampler, tc, opt);
    out.require(epochs == 12 && worst <= 1e-12,
                fmt("DWA weights sum to 3 in all %d epochs (max deviation %.2e)", epochs, worst));
  }

  // Desk-size model memorizing 32 mixed sequences.
  {
    const SystemConfig sys;
    DatasetSpec spec;
    spec.n_samples = 48;
    std::array<TaskDataset, kNumTasks> data;
    for (int t = 0; t < kNumTasks; ++t) {
      spec.seed = 50 + t;
      data[t] = make_task_dataset(static_cast<Task>(t), sys, spec, 0,
                                  t == 0 ? std::nullopt : std::optional(data[0].norm_scale));
    }
    const MixedBatchSampler sampler({&data[0], &data[1], &data[2]}, SamplerOptions{});
    Rng rng = make_stream({0x0f17});
    const auto batch = sampler.sample(32, rng);
    ModelConfig mc;
    mc.token_dim = sys.token_dim();
    TrainConfig tc;
    tc.epochs = 20;
    tc.steps_per_epoch = 100;
    auto state = TrainState::initial(mc, 2);
    const Transformer<float> model(mc);
    const std::vector<double> w(batch.size(), 1.0 / batch.size());
    auto batch_loss = [&] { return model.loss_and_gradient(state.params, batch, w, nullptr).weighted; };
    const double initial = batch_loss();
    double loss = initial;
    long steps = 0;
    for (; steps < tc.total_steps() && loss >= 1e-3; ++steps) {
      train_step(state, batch, tc);
      if ((steps + 1) % 50 == 0) loss = batch_loss();
    }
    loss = batch_loss();
    out.require(loss < 1e-3, fmt("32-sequence overfit: loss %.3e -> %.3e after %ld steps (< 1e-3 "
                                 "within 2000)", initial, loss, steps));
  }
  const double t = seconds_since(t0);
  out.require(t < 600.0, fmt("runtime %.1f s < 600 s", t));
  return out;
}

// Mean of one curve across seeds.
std::vector<double> seed_mean(const std::vector<EvalReport>& reports, const std::string& curve) {
  std::vector<double> m(reports[0].grid.size(), 0.0);
  for (const auto& r : reports)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += r.curve(curve).mean[i] / reports.size();
  return m;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.4g", x);
  return s;
}

Outcome criterion_end_to_end() {
  Outcome out;
  const auto t0 = clk::now();
  const ExperimentConfig exp;  // desk-scale defaults
  const unsigned threads = default_threads();

  std::array<TaskDataset, kNumTasks> data;
  for (int t = 0; t < kNumTasks; ++t) {
    DatasetSpec spec;
    spec.n_samples = exp.data.n_samples;
    spec.v_lo = exp.data.v_lo;
    spec.v_hi = exp.data.v_hi;
    spec.snr_set = exp.data.snr_set;
    spec.t_history = exp.data.t_history;
    spec.seed = exp.data_seed(static_cast<Task>(t));
    data[t] = make_task_dataset(static_cast<Task>(t), exp.system, spec, threads,
                                t == 0 ? std::nullopt : std::optional(data[0].norm_scale));
  }
  out.note(fmt("datasets: %d samples per task, %.0f s", exp.data.n_samples, seconds_since(t0)));
  SamplerOptions so;
  so.shots = exp.train_shots;
  so.augment = exp.train_augment;
  so.proportions = exp.train.task_proportions;
  const MixedBatchSampler sampler({&data[0], &data[1], &data[2]}, so);

  TestSetSpec ts;
  ts.n_samples = exp.eval.n_samples;
  ts.v_lo = exp.eval.v_lo;
  ts.v_hi = exp.eval.v_hi;
  ts.t_history = exp.eval.t_history;
  ts.seed = exp.eval_seed();
  const auto& trained = exp.data.snr_set;
  const std::vector<int> shots = {0, 4};
  const std::vector<int> one_shot = {0, 1};
  const std::vector<double> velocities = exp.eval.velocities;
  const std::vector<double> held = exp.eval.heldout_snrs;

  std::vector<EvalReport> r7, r8, r9, r10, r13;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto ts0 = clk::now();
    TrainConfig tc = exp.train;
    tc.seed = seed;
    auto state = TrainState::initial(exp.model, seed);
    train(state, sampler, tc, {.threads = threads});
    const double train_s = seconds_since(ts0);
    const IclPredictor model(state.params, data[0].norm_scale);
    r7.push_back(eval_sum_rate_vs_snr(model, exp.system, ts, trained, shots, threads));
    r8.push_back(eval_min_rate_vs_snr(model, exp.system, ts, trained, shots, threads));
    r9.push_back(eval_nmse_vs_velocity(model, exp.system, ts, velocities, threads));
    r10.push_back(eval_shots_sweep(model, exp.system, ts, trained, one_shot, threads));
    r13.push_back(eval_unseen_snr(model, exp.system, ts, trained, held, 4, threads));
    const auto& l = state.loss_history;
    out.note(fmt("seed %d: final epoch loss P1 %.4f P2 %.4f P3 %.4f, train %.0f s, eval %.0f s",
                 static_cast<int>(seed), l[0].back(), l[1].back(), l[2].back(), train_s,
                 seconds_since(ts0) - train_s));
  }

  // (a) sum rate at 4 shots against WMMSE and 0 shots.
  {
    const auto wm = seed_mean(r7, "wmmse"), m4 = seed_mean(r7, "model_4shot"),
               m0 = seed_mean(r7, "model_0shot");
    bool ratio = true, above = true;
    for (std::size_t i = 0; i < wm.size(); ++i) {
      ratio = ratio && m4[i] >= 0.7 * wm[i];
      above = above && m4[i] > m0[i];
    }
    out.note("SNR dB            " + join(r7[0].grid));
    out.note("P1 WMMSE          " + join(wm));
    out.note("P1 model 4-shot   " + join(m4));
    out.note("P1 model 0-shot   " + join(m0));
    out.require(ratio, "6a P1 4-shot sum rate >= 70% of WMMSE at every trained SNR");
    out.require(above, "6a P1 4-shot sum rate > 0-shot at every trained SNR");
  }
  // (b) min rate at 4 shots against the balancing solver.
  {
    const auto bal = seed_mean(r8, "balancing"), m4 = seed_mean(r8, "model_4shot");
    bool ratio = true;
    for (std::size_t i = 0; i < bal.size(); ++i) ratio = ratio && m4[i] >= 0.6 * bal[i];
    out.note("P2 balancing      " + join(bal));
    out.note("P2 model 4-shot   " + join(m4));
    out.note("P2 model 0-shot   " + join(seed_mean(r8, "model_0shot")));
    out.require(ratio, "6b P2 4-shot min rate >= 60% of balancing at every trained SNR");
  }
  // (c) prediction NMSE against the last value.
  {
    const auto lv = seed_mean(r9, "last_value"), m = seed_mean(r9, "model");
    bool below = true;
    for (std::size_t i = 0; i < lv.size(); ++i)
      if (r9[0].grid[i] >= 30.0) below = below && m[i] <= lv[i];
    out.note("velocity km/h     " + join(r9[0].grid));
    out.note("P3 last value     " + join(lv));
    out.note("P3 model          " + join(m));
    out.require(below, "6c P3 model NMSE <= last value at every velocity >= 30 km/h");
  }
  // (d) one demonstration against none, averaged over the trained SNRs.
  {
    const auto p1 = seed_mean(r10, "p1_model"), p2 = seed_mean(r10, "p2_model");
    out.note(fmt("P1 0/1 shot %.5g / %.5g, P2 0/1 shot %.5g / %.5g", p1[0], p1[1], p2[0], p2[1]));
    out.require(p1[1] > p1[0] && p2[1] > p2[0], "6d 1-shot beats 0-shot on P1 and P2");
  }
  // (e) held-out SNR points between their trained neighbours.
  {
    const auto m = seed_mean(r13, "model_4shot");
    const auto& g = r13[0].grid;
    bool between = true;
    for (std::size_t i = 1; i + 1 < g.size(); ++i)
      if (!r13[0].trained[i]) {
        const double lo = std::min(m[i - 1], m[i + 1]), hi = std::max(m[i - 1], m[i + 1]);
        between = between && m[i] >= lo && m[i] <= hi;
      }
    out.note("SNR dB            " + join(g));
    out.note("P1 model 4-shot   " + join(m));
    out.require(between, "6e held-out SNR sum rate lies between the neighbouring trained points");
  }
  const double t = seconds_since(t0);
  out.require(t <= 7200.0, fmt("runtime %.0f s <= 7200 s", t));
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ICWLM_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome criterion_plumbing() {
  Outcome out;
  const SystemConfig sys = small_system();
  {
    DatasetSpec spec;
    spec.n_samples = 20;
    spec.t_history = 3;
    bool exact = true;
    for (int t = 0; t < kNumTasks; ++t) {
      spec.seed = 60 + t;
      const TaskDataset ds = make_task_dataset(static_cast<Task>(t), sys, spec);
      const std::string bytes = encode_wds1(ds);
      const TaskDataset back = decode_wds1(bytes);
      exact = exact && encode_wds1(back) == bytes && back.size() == ds.size();
      for (std::size_t i = 0; i < ds.size() && exact; ++i) {
        for (std::size_t s = 0; s < ds.samples[i].history.size(); ++s)
          exact = exact && back.samples[i].history[s] ==
                               ds.samples[i].history[s].cast<std::complex<float>>().cast<Complex>();
        if (!ds.labels.empty())
          exact = exact && back.labels[i] == ds.labels[i].cast<std::complex<float>>().cast<Complex>();
      }
    }
    out.require(exact, "WDS1 encode/decode round trip is bit-exact for all three tasks");
  }

  const fs::path dir = fs::temp_directory_path() / "icwlm_acceptance_plumbing";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto config = [&](const std::string& name) {
    nlohmann::json j = {
        {"seed", 21},
        {"system", sys},
        {"model",
         {{"n_layers", 1}, {"n_heads", 2}, {"d_model", 16}, {"d_ffn", 32}, {"max_positions", 24}}},
        {"train", {{"epochs", 2}, {"steps_per_epoch", 10}, {"batch_size", 8}, {"warmup_steps", 5}}},
        {"train_shots", 2},
        {"data", {{"n_samples", 60}, {"t_history", 4}}},
        {"eval",
         {{"n_samples", 60}, {"t_history", 4}, {"shots", {0, 2}}, {"shot_grid", {0, 1, 2}},
          {"heldout_shots", 2}}},
        {"output_dir", (dir / name).string()}};
    const fs::path p = dir / (name + ".json");
    std::ofstream(p) << j.dump(2);
    return "--threads 1 --config " + p.string();
  };
  const std::string a = config("a"), b = config("b");
  bool ok = true;
  for (const auto& c : {a, b})
    ok = ok && run_cli("gen-data " + c) == 0 && run_cli("train " + c) == 0 &&
         run_cli("eval " + c + " -e all") == 0;
  out.require(ok, "gen-data, train and eval succeed twice");
  if (ok) {
    std::vector<std::string> files = {"data/P1.wds1", "data/P2.wds1", "data/P3.wds1",
                                      "data/manifest.json"};
    for (const char* id : {"fig7", "fig8", "fig9", "fig10_12", "fig13"})
      files.push_back(std::string("reports/") + id + ".csv");
    int same = 0;
    for (const auto& f : files) same += slurp(dir / "a" / f) == slurp(dir / "b" / f) &&
                                        !slurp(dir / "a" / f).empty();
    out.require(same == static_cast<int>(files.size()),
                fmt("reruns byte-identical: %d of %zu dataset and report files", same, files.size()));
  }
  fs::remove_all(dir);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"solver optimality, sum rate", criterion_solver_sum_rate},
      {"solver optimality, SINR balancing", criterion_solver_balancing},
      {"channel model", criterion_channel},
      {"transformer math", criterion_transformer},
      {"training mechanics", criterion_training},
      {"end-to-end desk-scale trends", criterion_end_to_end},
      {"plumbing and reproducibility", criterion_plumbing},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.details.push_back(std::string("FAIL  exception: ") + e.what());
    }
    for (const auto& d : o.details) std::cout << "    " << d << '\n';
    std::cout << "ACCEPTANCE " << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  "
              << criteria[i].first << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
