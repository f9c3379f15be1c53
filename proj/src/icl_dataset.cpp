#include "icwlm/icl_dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icwlm/parallel.hpp"
#include "icwlm/precoding.hpp"

namespace icwlm {

RVector pack_complex(const CMatrix& X) {
  const auto n = X.size();
  RVector x(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i) = X.data()[i].real();
    x(n + i) = X.data()[i].imag();
  }
  return x;
}

RVector pack_complex(const CMatrix& X, Eigen::Index n_t, Eigen::Index k_users) {
  if (X.rows() != n_t || X.cols() != k_users)
    throw Error("pack_complex: expected " + std::to_string(n_t) + "x" +
                std::to_string(k_users) + " matrix, got " + std::to_string(X.rows()) + "x" +
                std::to_string(X.cols()));
  return pack_complex(X);
}

CMatrix unpack_complex(const RVector& x, Eigen::Index n_t, Eigen::Index k_users) {
  const auto n = n_t * k_users;
  if (x.size() != 2 * n)
    throw Error("unpack_complex: expected length " + std::to_string(2 * n) + ", got " +
                std::to_string(x.size()));
  CMatrix X(n_t, k_users);
  for (Eigen::Index i = 0; i < n; ++i) X.data()[i] = Complex(x(i), x(n + i));
  return X;
}

double channel_rms(std::span<const CMatrix> channels) {
  double sum = 0.0;
  double count = 0.0;
  for (const auto& H : channels) {
    sum += H.squaredNorm();
    count += 2.0 * static_cast<double>(H.size());
  }
  if (count == 0.0 || sum == 0.0) return 1.0;
  return std::sqrt(sum / count);
}

RVector TokenScaling::channel_token(const CMatrix& H) const {
  return pack_complex(H) / channel_scale;
}

RVector TokenScaling::precoder_token(const CMatrix& W) const {
  const double norm = W.norm();
  if (!(norm > 0.0)) throw Error("precoder label is zero");
  const double target = std::sqrt(static_cast<double>(W.size()));
  return pack_complex(W) * (target / norm / channel_scale);
}

CMatrix TokenScaling::channel_from_token(const RVector& x, Eigen::Index n_t,
                                         Eigen::Index k) const {
  return unpack_complex(x, n_t, k) * channel_scale;
}

CMatrix TokenScaling::precoder_from_token(const RVector& y, Eigen::Index n_t,
                                          Eigen::Index k) const {
  return unpack_complex(y, n_t, k);
}

namespace {

void finish_loss_positions(IclSequence& seq, LossMode mode, const RVector* final_target) {
  std::vector<int> positions;
  for (Eigen::Index p = 0; p < seq.length(); ++p)
    if (seq.roles[p] == TokenRole::kInput) positions.push_back(static_cast<int>(p));
  // Inputs whose label is neither in the sequence nor supplied are dropped.
  std::vector<int> kept;
  for (int p : positions) {
    const bool inside = p + 1 < seq.length() && seq.roles[p + 1] == TokenRole::kLabel;
    if (inside || (final_target != nullptr && p + 1 == seq.length())) kept.push_back(p);
  }
  if (mode == LossMode::kFinalOnly && !kept.empty()) kept.erase(kept.begin(), kept.end() - 1);
  seq.loss_positions = kept;
  seq.targets.resize(seq.token_dim(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j) {
    const int p = kept[j];
    seq.targets.col(static_cast<Eigen::Index>(j)) =
        p + 1 < seq.length() ? RVector(seq.tokens.col(p + 1)) : *final_target;
  }
}

}  // namespace

IclSequence build_precoding_sequence(std::span<const PrecodingExample> demos,
                                     const PrecodingExample& query,
                                     const TokenScaling& scaling, LossMode mode) {
  if (query.task == Task::kPrediction)
    throw Error("build_precoding_sequence: query task must be P1 or P2");
  const auto n_t = query.H.rows();
  const auto k = query.H.cols();
  for (const auto& d : demos) {
    if (d.task != query.task)
      throw Error("build_precoding_sequence: demonstration task differs from query task");
    if (d.snr_db != query.snr_db)
      throw Error("build_precoding_sequence: demonstration SNR differs from query SNR");
    if (d.H.rows() != n_t || d.H.cols() != k || d.W.rows() != n_t || d.W.cols() != k)
      throw Error("build_precoding_sequence: demonstration shape mismatch");
  }
  if (query.W.size() != 0 && (query.W.rows() != n_t || query.W.cols() != k))
    throw Error("build_precoding_sequence: query label shape mismatch");

  IclSequence seq;
  seq.task = query.task;
  seq.shots = static_cast<int>(demos.size());
  const auto dim = 2 * n_t * k;
  seq.tokens.resize(dim, 2 * static_cast<Eigen::Index>(demos.size()) + 1);
  Eigen::Index col = 0;
  for (const auto& d : demos) {
    seq.tokens.col(col++) = scaling.channel_token(d.H);
    seq.roles.push_back(TokenRole::kInput);
    seq.tokens.col(col++) = scaling.precoder_token(d.W);
    seq.roles.push_back(TokenRole::kLabel);
  }
  seq.tokens.col(col) = scaling.channel_token(query.H);
  seq.roles.push_back(TokenRole::kInput);

  if (query.W.size() != 0) {
    const RVector target = scaling.precoder_token(query.W);
    finish_loss_positions(seq, mode, &target);
  } else {
    finish_loss_positions(seq, mode, nullptr);
    // Inference query: the final position is still where the answer is read.
    if (mode == LossMode::kFinalOnly) seq.loss_positions.clear();
    seq.loss_positions.push_back(static_cast<int>(col));
    seq.targets.conservativeResize(Eigen::NoChange, seq.targets.cols() + 1);
    seq.targets.col(seq.targets.cols() - 1).setZero();
  }
  return seq;
}

IclSequence build_prediction_sequence(const ChannelSample& history,
                                      const TokenScaling& scaling, LossMode mode) {
  const int slots = static_cast<int>(history.history.size());
  if (slots < 2) throw Error("build_prediction_sequence: need at least two slots");
  const int T = slots - 1;
  IclSequence seq;
  seq.task = Task::kPrediction;
  seq.shots = T - 1;
  const auto dim = 2 * history.history[0].size();
  seq.tokens.resize(dim, 2 * T);
  std::vector<RVector> packed;
  packed.reserve(slots);
  for (const auto& H : history.history) packed.push_back(scaling.channel_token(H));
  for (int i = 0; i < T; ++i) {
    seq.tokens.col(2 * i) = packed[i];
    seq.tokens.col(2 * i + 1) = packed[i + 1];
    seq.roles.push_back(TokenRole::kInput);
    seq.roles.push_back(TokenRole::kLabel);
  }
  finish_loss_positions(seq, mode, nullptr);
  return seq;
}

std::vector<std::size_t> draw_demo_indices(const std::vector<std::size_t>& pool,
                                           std::size_t exclude, int count, Rng& rng) {
  const auto available = static_cast<std::size_t>(
      std::count_if(pool.begin(), pool.end(), [&](std::size_t i) { return i != exclude; }));
  if (count < 0 || static_cast<std::size_t>(count) > available)
    throw Error("not enough demonstration samples: need " + std::to_string(count) +
                ", have " + std::to_string(available));
  // Partial Fisher-Yates over a copy without the excluded index.
  std::vector<std::size_t> candidates;
  candidates.reserve(available);
  for (auto i : pool)
    if (i != exclude) candidates.push_back(i);
  std::vector<std::size_t> out;
  out.reserve(count);
  for (int j = 0; j < count; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, candidates.size() - 1);
    std::swap(candidates[j], candidates[pick(rng)]);
    out.push_back(candidates[j]);
  }
  return out;
}

UserTransform UserTransform::identity(Eigen::Index k_users) {
  UserTransform t;
  for (Eigen::Index k = 0; k < k_users; ++k) t.perm.push_back(k);
  t.phase.assign(k_users, Complex(1.0, 0.0));
  return t;
}

UserTransform UserTransform::draw(Eigen::Index k_users, Rng& rng) {
  UserTransform t = identity(k_users);
  std::shuffle(t.perm.begin(), t.perm.end(), rng);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  for (auto& p : t.phase) p = std::polar(1.0, angle(rng));
  return t;
}

CMatrix UserTransform::apply(const CMatrix& X) const {
  if (X.cols() != static_cast<Eigen::Index>(perm.size()))
    throw Error("UserTransform: column count mismatch");
  CMatrix Y(X.rows(), X.cols());
  for (Eigen::Index k = 0; k < X.cols(); ++k) Y.col(perm[k]) = X.col(k) * phase[k];
  return Y;
}

MixedBatchSampler::MixedBatchSampler(std::array<const TaskDataset*, kNumTasks> datasets,
                                     SamplerOptions options)
    : datasets_(datasets), options_(options) {
  double total = 0.0;
  for (int t = 0; t < kNumTasks; ++t) {
    const double p = options_.proportions[t];
    if (p < 0.0) throw Error("sampler: negative task proportion");
    total += p;
    if (p > 0.0 && (datasets_[t] == nullptr || datasets_[t]->size() == 0))
      throw Error("sampler: empty dataset for task " + task_name(static_cast<Task>(t)));
    if (datasets_[t] != nullptr && datasets_[t]->task != static_cast<Task>(t))
      throw Error("sampler: dataset in slot " + task_name(static_cast<Task>(t)) +
                  " holds task " + task_name(datasets_[t]->task));
  }
  if (!(total > 0.0)) throw Error("sampler: task proportions sum to zero");
  for (int t = 0; t < 2; ++t) {
    if (datasets_[t] == nullptr) continue;
    const auto& ds = *datasets_[t];
    if (ds.labels.size() != ds.samples.size())
      throw Error("sampler: precoding dataset without labels");
    auto& groups = by_snr_[t];
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double snr = ds.samples[i].snr_db;
      auto it = std::find_if(groups.begin(), groups.end(),
                             [&](const auto& g) { return g.first == snr; });
      if (it == groups.end()) {
        groups.push_back({snr, {}});
        it = groups.end() - 1;
      }
      it->second.push_back(i);
    }
    std::sort(groups.begin(), groups.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  }
}

IclSequence MixedBatchSampler::make_sequence(Task task, std::size_t index, int shots,
                                             Rng& rng) const {
  const TaskDataset* ds = datasets_[static_cast<int>(task)];
  if (ds == nullptr || index >= ds->size()) throw Error("sampler: query index out of range");
  const TokenScaling scaling{ds->norm_scale};
  const Eigen::Index k_users = ds->cfg.k_users;
  if (task == Task::kPrediction) {
    if (!options_.augment)
      return build_prediction_sequence(ds->samples[index], scaling, options_.loss_mode);
    ChannelSample s = ds->samples[index];
    const UserTransform tr = UserTransform::draw(k_users, rng);
    for (auto& H : s.history) H = tr.apply(H);
    return build_prediction_sequence(s, scaling, options_.loss_mode);
  }

  const double snr = ds->samples[index].snr_db;
  const auto& groups = by_snr_[static_cast<int>(task)];
  const auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const auto& g) { return g.first == snr; });
  const auto demo_idx = draw_demo_indices(it->second, index, shots, rng);
  std::vector<PrecodingExample> demos;
  demos.reserve(demo_idx.size());
  auto example = [&](std::size_t i) {
    PrecodingExample e{ds->samples[i].current(), ds->labels[i], task, snr};
    if (options_.augment) {
      const UserTransform tr = UserTransform::draw(k_users, rng);
      e.H = tr.apply(e.H);
      e.W = tr.apply(e.W);
    }
    return e;
  };
  for (auto i : demo_idx) demos.push_back(example(i));
  const PrecodingExample query = example(index);
  return build_precoding_sequence(demos, query, scaling, options_.loss_mode);
}

std::vector<IclSequence> MixedBatchSampler::sample(std::size_t batch_size, Rng& rng) const {
  if (batch_size < 1) throw Error("sampler: batch_size must be >= 1");
  std::discrete_distribution<int> task_pick(options_.proportions.begin(),
                                            options_.proportions.end());
  std::vector<IclSequence> batch;
  batch.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const auto task = static_cast<Task>(task_pick(rng));
    const TaskDataset* ds = datasets_[static_cast<int>(task)];
    std::uniform_int_distribution<std::size_t> pick(0, ds->size() - 1);
    batch.push_back(make_sequence(task, pick(rng), options_.shots, rng));
  }
  return batch;
}

TaskDataset make_task_dataset(Task task, const SystemConfig& cfg, const DatasetSpec& spec,
                              unsigned threads, std::optional<double> norm_scale) {
  TaskDataset ds;
  ds.task = task;
  ds.cfg = cfg;
  ds.samples = generate_dataset(cfg, spec, threads);
  if (task != Task::kPrediction) {
    for (auto& s : ds.samples) s.history = {s.current()};
    ds.labels.resize(ds.samples.size());
    parallel_for(ds.samples.size(), threads, [&](std::size_t i) {
      const auto& s = ds.samples[i];
      const auto pr = PrecodingProblem::make(s.current(), cfg.sigma2,
                                             cfg.sigma2 * snr_to_p_max(s.snr_db));
      const auto sol = task == Task::kSumRate ? wmmse_precoder(pr) : sinr_balancing_precoder(pr);
      if (!sol.W.allFinite())
        throw NumericError("make_task_dataset: non-finite label for sample " + std::to_string(i));
      ds.labels[i] = project_power(sol.W, pr.p_max);
    });
  }
  if (norm_scale) {
    ds.norm_scale = *norm_scale;
  } else {
    std::vector<CMatrix> all;
    for (const auto& s : ds.samples) all.insert(all.end(), s.history.begin(), s.history.end());
    ds.norm_scale = channel_rms(all);
  }
  return ds;
}

}  // namespace icwlm
