#include "icwlm/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "icwlm/parallel.hpp"

namespace icwlm {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error("train config: batch_size must be positive");
  if (epochs < 0 || steps_per_epoch < 1) throw Error("train config: bad epoch/step counts");
  if (!(peak_lr > 0.0) || !(min_lr >= 0.0) || min_lr > peak_lr)
    throw Error("train config: need 0 <= min_lr <= peak_lr, peak_lr > 0");
  if (warmup_steps < 0) throw Error("train config: warmup_steps must be >= 0");
  if (total_steps() > 0 && warmup_steps >= total_steps())
    throw Error("train config: warmup_steps must be below the total step count");
  if (!(weight_decay >= 0.0)) throw Error("train config: weight_decay must be >= 0");
  if (!(dwa_temperature > 0.0)) throw Error("train config: dwa_temperature must be positive");
  double sum = 0.0;
  for (double p : task_proportions) {
    if (!(p >= 0.0)) throw Error("train config: task proportions must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error("train config: task proportions must sum to 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0))
    throw Error("train config: bad optimizer constants");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"steps_per_epoch", c.steps_per_epoch},
           {"peak_lr", c.peak_lr},
           {"min_lr", c.min_lr},
           {"warmup_steps", c.warmup_steps},
           {"weight_decay", c.weight_decay},
           {"dwa_temperature", c.dwa_temperature},
           {"task_proportions", c.task_proportions},
           {"seed", c.seed},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"adam_eps", c.adam_eps},
           {"clip_norm", c.clip_norm}};
}

void from_json(const json& j, TrainConfig& c) {
  const TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.steps_per_epoch = j.value("steps_per_epoch", d.steps_per_epoch);
  c.peak_lr = j.value("peak_lr", d.peak_lr);
  c.min_lr = j.value("min_lr", d.min_lr);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.dwa_temperature = j.value("dwa_temperature", d.dwa_temperature);
  c.task_proportions = j.value("task_proportions", d.task_proportions);
  c.seed = j.value("seed", d.seed);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"n_layers", c.n_layers},       {"n_heads", c.n_heads},
           {"d_model", c.d_model},         {"d_ffn", c.d_ffn},
           {"max_positions", c.max_positions}, {"token_dim", c.token_dim},
           {"rope_base", c.rope_base},     {"norm_eps", c.norm_eps}};
}

void from_json(const json& j, ModelConfig& c) {
  const ModelConfig d;
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.d_model = j.value("d_model", d.d_model);
  c.d_ffn = j.value("d_ffn", d.d_ffn);
  c.max_positions = j.value("max_positions", d.max_positions);
  c.token_dim = j.value("token_dim", d.token_dim);
  c.rope_base = j.value("rope_base", d.rope_base);
  c.norm_eps = j.value("norm_eps", d.norm_eps);
}

DwaResult dwa_weights(const std::vector<std::vector<double>>& history, double temperature) {
  if (!(temperature > 0.0)) throw Error("dwa_weights: temperature must be positive");
  const std::size_t n = history.size();
  DwaResult out;
  out.weights.assign(n, 1.0);
  std::size_t epochs = n == 0 ? 0 : history[0].size();
  for (const auto& h : history) epochs = std::min(epochs, h.size());
  if (epochs < 2) return out;

  std::vector<double> r(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double prev = history[t][epochs - 2], last = history[t][epochs - 1];
    if (prev > 0.0 && last > 0.0 && std::isfinite(prev) && std::isfinite(last)) {
      r[t] = last / prev;
    } else {
      r[t] = 1.0;
      out.fallback.push_back(t);
    }
  }
  // Shift by the largest ratio before exponentiating; the softmax is unchanged.
  const double mx = *std::max_element(r.begin(), r.end());
  double z = 0.0;
  for (std::size_t t = 0; t < n; ++t) z += (out.weights[t] = std::exp((r[t] - mx) / temperature));
  for (auto& w : out.weights) w *= static_cast<double>(n) / z;
  return out;
}

double lr_schedule(long step, const TrainConfig& cfg) {
  if (step < 0) throw Error("lr_schedule: negative step");
  if (step < cfg.warmup_steps)
    return cfg.peak_lr * static_cast<double>(step) / cfg.warmup_steps;
  const long span = cfg.total_steps() - 1 - cfg.warmup_steps;
  const double progress =
      span <= 0 ? 1.0 : std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / span);
  return cfg.min_lr + (cfg.peak_lr - cfg.min_lr) * (1.0 + std::cos(kPi * progress)) / 2.0;
}

TrainState::TrainState(const ModelConfig& cfg)
    : params(cfg), adam_m(params.values.size(), 0.0f), adam_v(params.values.size(), 0.0f) {}

TrainState TrainState::initial(const ModelConfig& cfg, std::uint64_t seed) {
  TrainState s(cfg);
  s.params = ModelParams<float>::initialized(cfg, seed);
  return s;
}

namespace {

// Sequence index that makes the loss non-finite, found one at a time.
std::optional<std::size_t> find_bad_sequence(const Transformer<float>& model,
                                             const ModelParams<float>& params,
                                             std::span<const IclSequence> batch) {
  const std::vector<double> one = {1.0};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    try {
      model.loss_and_gradient(params, batch.subspan(i, 1), one, nullptr);
    } catch (const NumericError&) {
      return i;
    }
  }
  return std::nullopt;
}

}  // namespace

StepReport train_step(TrainState& state, std::span<const IclSequence> batch,
                      const TrainConfig& cfg, unsigned threads) {
  if (batch.empty()) throw Error("train_step: empty batch");
  const Transformer<float> model(state.params.config);

  StepReport rep;
  for (const auto& s : batch) ++rep.task_count[static_cast<int>(s.task)];
  std::vector<double> weights(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int t = static_cast<int>(batch[i].task);
    weights[i] = state.dwa[t] / rep.task_count[t];
  }

  if (threads == 0) threads = default_threads();
  const std::size_t chunks = std::min<std::size_t>(threads, batch.size());
  std::vector<ModelParams<float>> grads(chunks, ModelParams<float>(state.params.config));
  std::vector<BatchLoss> losses(chunks);
  const std::size_t per = (batch.size() + chunks - 1) / chunks;
  try {
    parallel_for(chunks, threads, [&](std::size_t c) {
      const std::size_t lo = c * per, hi = std::min(batch.size(), lo + per);
      if (lo >= hi) return;
      losses[c] = model.loss_and_gradient(state.params, batch.subspan(lo, hi - lo),
                                          std::span(weights).subspan(lo, hi - lo), &grads[c]);
    });
  } catch (const NumericError& e) {
    const auto bad = find_bad_sequence(model, state.params, batch);
    if (bad)
      throw NumericError("train_step: non-finite loss at batch sequence " + std::to_string(*bad) +
                         " (task " + std::string(task_name(batch[*bad].task)) + "): " + e.what());
    throw;
  }

  auto& g = grads[0].values;
  for (std::size_t c = 1; c < chunks; ++c)
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += grads[c].values[i];

  std::size_t idx = 0;
  for (std::size_t c = 0; c < chunks; ++c)
    for (double l : losses[c].losses) {
      const int t = static_cast<int>(batch[idx++].task);
      rep.task_loss[t] += l / rep.task_count[t];
    }
  for (int t = 0; t < kNumTasks; ++t) rep.total_loss += state.dwa[t] * rep.task_loss[t];

  double norm2 = 0.0;
  for (float v : g) norm2 += static_cast<double>(v) * v;
  rep.grad_norm = std::sqrt(norm2);
  const float clip = cfg.clip_norm > 0.0 && rep.grad_norm > cfg.clip_norm
                         ? static_cast<float>(cfg.clip_norm / rep.grad_norm)
                         : 1.0f;

  rep.lr = lr_schedule(state.step, cfg);
  const double t = static_cast<double>(state.step + 1);
  const float lr = static_cast<float>(rep.lr);
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
  const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const float eps = static_cast<float>(cfg.adam_eps);
  const float shrink = static_cast<float>(1.0 - rep.lr * cfg.weight_decay);
  for (const auto& b : state.params.layout.blocks()) {
    for (std::size_t i = b.offset; i < b.offset + b.size(); ++i) {
      const float gi = g[i] * clip;
      float& m = state.adam_m[i];
      float& v = state.adam_v[i];
      m = b1 * m + (1.0f - b1) * gi;
      v = b2 * v + (1.0f - b2) * gi * gi;
      float& p = state.params.values[i];
      if (b.decay) p *= shrink;
      p -= lr * (m * c1) / (std::sqrt(v * c2) + eps);
    }
  }

  ++state.step;
  for (int k = 0; k < kNumTasks; ++k) {
    if (rep.task_count[k] == 0) continue;
    state.epoch_loss_sum[k] += rep.task_loss[k];
    ++state.epoch_count[k];
  }
  return rep;
}

std::vector<IclSequence> training_batch(const MixedBatchSampler& sampler, const TrainConfig& cfg,
                                        long step) {
  Rng rng = make_stream({cfg.seed, 0xba7c4u, static_cast<std::uint64_t>(step)});
  return sampler.sample(static_cast<std::size_t>(cfg.batch_size), rng);
}

namespace {

void write_csv_row(std::ostream& os, const EpochRecord& r) {
  os << r.epoch;
  os << std::setprecision(9);
  for (double l : r.loss) os << ',' << l;
  for (double w : r.weight) os << ',' << w;
  os << ',' << r.lr << '\n';
}

constexpr const char* kCsvHeader =
    "epoch,loss_P1,loss_P2,loss_P3,weight_P1,weight_P2,weight_P3,lr\n";

}  // namespace

void train(TrainState& state, const MixedBatchSampler& sampler, const TrainConfig& cfg,
           const TrainOptions& options) {
  cfg.validate();
  std::ofstream csv;
  if (options.log_csv) {
    // A resumed run keeps the rows of the epochs already completed.
    const bool append = state.epoch > 0 && std::filesystem::exists(*options.log_csv);
    csv.open(*options.log_csv, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw Error("train: cannot open " + options.log_csv->string());
    if (!append) csv << kCsvHeader << std::flush;
  }
  if (options.checkpoint_dir && state.epoch == 0 && state.step == 0)
    save_checkpoint(*options.checkpoint_dir, state, cfg);

  while (state.epoch < cfg.epochs) {
    if (options.stop_after_epoch >= 0 && state.epoch >= options.stop_after_epoch) break;
    std::vector<std::vector<double>> hist(state.loss_history.begin(), state.loss_history.end());
    const DwaResult dwa = dwa_weights(hist, cfg.dwa_temperature);
    for (std::size_t t : dwa.fallback)
      if (cfg.task_proportions[t] > 0.0)
        std::clog << "dwa: non-positive loss history for " << task_name(static_cast<Task>(t))
                  << ", using ratio 1\n";
    for (int t = 0; t < kNumTasks; ++t) state.dwa[t] = dwa.weights[t];
    state.epoch_loss_sum = {};
    state.epoch_count = {};

    double lr = 0.0;
    for (int s = 0; s < cfg.steps_per_epoch; ++s) {
      const auto batch = training_batch(sampler, cfg, state.step);
      try {
        lr = train_step(state, batch, cfg, options.threads).lr;
      } catch (...) {
        // train_step leaves the state as it was, so this is the last good one.
        if (options.checkpoint_dir) save_checkpoint(*options.checkpoint_dir, state, cfg);
        throw;
      }
    }

    EpochRecord rec;
    rec.epoch = state.epoch;
    for (int t = 0; t < kNumTasks; ++t) {
      const auto& h = state.loss_history[t];
      // A task absent from the whole epoch repeats its previous mean.
      rec.loss[t] = state.epoch_count[t] > 0 ? state.epoch_loss_sum[t] / state.epoch_count[t]
                    : h.empty()              ? 0.0
                                             : h.back();
      state.loss_history[t].push_back(rec.loss[t]);
      rec.weight[t] = state.dwa[t];
    }
    rec.lr = lr;
    ++state.epoch;
    state.epoch_loss_sum = {};
    state.epoch_count = {};
    if (csv.is_open()) {
      write_csv_row(csv, rec);
      csv.flush();
    }
    if (options.checkpoint_dir) save_checkpoint(*options.checkpoint_dir, state, cfg);
    if (options.on_epoch) options.on_epoch(rec);
  }
}

namespace {

// Block contents only; the alignment padding between blocks is not stored.
void write_blocks(std::string& out, const ParamLayout& layout, const float* v) {
  for (const auto& b : layout.blocks())
    for (std::size_t i = b.offset; i < b.offset + b.size(); ++i) {
      const std::uint32_t u = std::bit_cast<std::uint32_t>(v[i]);
      for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((u >> (8 * k)) & 0xFF));
    }
}

void read_blocks(const std::string& bytes, std::size_t& pos, const ParamLayout& layout, float* v) {
  for (const auto& b : layout.blocks())
    for (std::size_t i = b.offset; i < b.offset + b.size(); ++i, pos += 4) {
      std::uint32_t u = 0;
      for (int k = 0; k < 4; ++k)
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + k])) << (8 * k);
      v[i] = std::bit_cast<float>(u);
    }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("checkpoint: cannot write " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state,
                     const TrainConfig& cfg) {
  std::filesystem::create_directories(dir);
  json blocks = json::array();
  for (const auto& b : state.params.layout.blocks())
    blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  const json manifest = {
      {"format", "icwlm-checkpoint"},
      {"version", 1},
      {"dtype", "f32"},
      {"byte_order", "little"},
      {"model_config", state.params.config},
      {"train_config", cfg},
      {"step", state.step},
      {"epoch", state.epoch},
      {"rng", {{"kind", "counter"}, {"seed", cfg.seed}, {"next_step", state.step}}},
      {"loss_history", state.loss_history},
      {"dwa_weights", state.dwa},
      {"sections", {"params", "adam_m", "adam_v"}},
      {"n_values", state.params.layout.count()},
      {"blocks", blocks}};

  const auto& layout = state.params.layout;
  std::string bin;
  bin.reserve(3 * 4 * layout.count());
  write_blocks(bin, layout, state.params.values.data());
  write_blocks(bin, layout, state.adam_m.data());
  write_blocks(bin, layout, state.adam_v.data());
  write_file_atomic(dir / "checkpoint.bin", bin);
  write_file_atomic(dir / "checkpoint.json", manifest.dump(2) + "\n");
}

TrainState load_checkpoint(const std::filesystem::path& dir, TrainConfig* cfg) {
  const json manifest = json::parse(read_file(dir / "checkpoint.json"));
  if (manifest.at("format") != "icwlm-checkpoint" || manifest.at("version") != 1)
    throw Error("checkpoint: unrecognized manifest in " + dir.string());
  const auto mcfg = manifest.at("model_config").get<ModelConfig>();
  TrainState state(mcfg);
  const auto& blocks = manifest.at("blocks");
  const auto& layout = state.params.layout;
  const auto& expect = layout.blocks();
  if (blocks.size() != expect.size()) throw Error("checkpoint: block count mismatch");
  for (std::size_t i = 0; i < expect.size(); ++i)
    if (blocks[i].at("name") != expect[i].name || blocks[i].at("rows") != expect[i].rows ||
        blocks[i].at("cols") != expect[i].cols)
      throw Error("checkpoint: block " + expect[i].name + " does not match the model config");

  const std::string bytes = read_file(dir / "checkpoint.bin");
  const std::size_t n = layout.count();
  if (bytes.size() != 3 * 4 * n)
    throw Error("checkpoint: payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                std::to_string(3 * 4 * n));
  std::size_t pos = 0;
  read_blocks(bytes, pos, layout, state.params.values.data());
  read_blocks(bytes, pos, layout, state.adam_m.data());
  read_blocks(bytes, pos, layout, state.adam_v.data());

  state.step = manifest.at("step").get<long>();
  state.epoch = manifest.at("epoch").get<int>();
  state.loss_history = manifest.at("loss_history").get<std::array<std::vector<double>, kNumTasks>>();
  state.dwa = manifest.at("dwa_weights").get<std::array<double, kNumTasks>>();
  if (cfg) *cfg = manifest.at("train_config").get<TrainConfig>();
  return state;
}

}  // namespace icwlm
