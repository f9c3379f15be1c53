#include "icwlm/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "icwlm/dataset_io.hpp"
#include "icwlm/eval.hpp"
#include "icwlm/icl_dataset.hpp"
#include "icwlm/parallel.hpp"

namespace icwlm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDataTag = 0xda7a;
constexpr std::uint64_t kEvalTag = 0xe7a1;
constexpr const char* kManifestFormat = "icwlm-data-manifest";
constexpr const char* kRunInfo = "run.json";

std::string dataset_file(Task t) { return task_name(t) + ".wds1"; }

void check_keys(const json& j, const json& reference, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (!reference.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class T>
json section_reference(const T& defaults) {
  json j = defaults;
  return j;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f << text;
    if (!f) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path.string());
  return json::parse(f);
}

}  // namespace

void to_json(json& j, const DataConfig& c) {
  j = json{{"n_samples", c.n_samples}, {"v_lo", c.v_lo},           {"v_hi", c.v_hi},
           {"snr_set", c.snr_set},     {"t_history", c.t_history}};
}

void from_json(const json& j, DataConfig& c) {
  const DataConfig d;
  c.n_samples = j.value("n_samples", d.n_samples);
  c.v_lo = j.value("v_lo", d.v_lo);
  c.v_hi = j.value("v_hi", d.v_hi);
  c.snr_set = j.value("snr_set", d.snr_set);
  c.t_history = j.value("t_history", d.t_history);
}

void to_json(json& j, const EvalConfig& c) {
  j = json{{"n_samples", c.n_samples},
           {"v_lo", c.v_lo},
           {"v_hi", c.v_hi},
           {"t_history", c.t_history},
           {"snr_grid", c.snr_grid},
           {"shots", c.shots},
           {"velocities", c.velocities},
           {"shot_grid", c.shot_grid},
           {"heldout_snrs", c.heldout_snrs},
           {"heldout_shots", c.heldout_shots},
           {"gnuplot", c.gnuplot}};
}

void from_json(const json& j, EvalConfig& c) {
  const EvalConfig d;
  c.n_samples = j.value("n_samples", d.n_samples);
  c.v_lo = j.value("v_lo", d.v_lo);
  c.v_hi = j.value("v_hi", d.v_hi);
  c.t_history = j.value("t_history", d.t_history);
  c.snr_grid = j.value("snr_grid", d.snr_grid);
  c.shots = j.value("shots", d.shots);
  c.velocities = j.value("velocities", d.velocities);
  c.shot_grid = j.value("shot_grid", d.shot_grid);
  c.heldout_snrs = j.value("heldout_snrs", d.heldout_snrs);
  c.heldout_shots = j.value("heldout_shots", d.heldout_shots);
  c.gnuplot = j.value("gnuplot", d.gnuplot);
}

fs::path ExperimentConfig::resolved_data_dir() const {
  return data_dir.empty() ? output_dir / "data" : data_dir;
}

fs::path ExperimentConfig::resolved_checkpoint_dir() const {
  return checkpoint_dir.empty() ? output_dir / "checkpoint" : checkpoint_dir;
}

std::uint64_t ExperimentConfig::data_seed(Task task) const {
  return stream_key({seed, kDataTag, static_cast<std::uint64_t>(task)});
}

std::uint64_t ExperimentConfig::eval_seed() const { return stream_key({seed, kEvalTag}); }

void ExperimentConfig::validate() const {
  try {
    system.validate();
    model.validate();
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (model.token_dim != system.token_dim())
    throw ConfigError("model.token_dim must equal 2 * n_t * k_users");
  if (train.seed != seed) throw ConfigError("train.seed must equal the global seed");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (train_shots < 0) throw ConfigError("train_shots must be non-negative");
  if (data.n_samples < 1) throw ConfigError("data.n_samples must be positive");
  if (data.t_history < 1) throw ConfigError("data.t_history must be at least 1");
  if (!(data.v_lo >= 0.0 && data.v_hi >= data.v_lo))
    throw ConfigError("data velocity range must satisfy 0 <= v_lo <= v_hi");
  if (data.snr_set.empty()) throw ConfigError("data.snr_set must not be empty");
  if (eval.n_samples < 1) throw ConfigError("eval.n_samples must be positive");
  if (eval.t_history < 1) throw ConfigError("eval.t_history must be at least 1");
  if (!(eval.v_lo >= 0.0 && eval.v_hi >= eval.v_lo))
    throw ConfigError("eval velocity range must satisfy 0 <= v_lo <= v_hi");
  for (int s : eval.shots)
    if (s < 0) throw ConfigError("eval.shots must be non-negative");
  for (int s : eval.shot_grid)
    if (s < 0) throw ConfigError("eval.shot_grid must be non-negative");
  for (double v : eval.velocities)
    if (v < 0.0) throw ConfigError("eval.velocities must be non-negative");
  if (eval.heldout_shots < 0) throw ConfigError("eval.heldout_shots must be non-negative");

  int max_shots = std::max(train_shots, eval.heldout_shots);
  for (int s : eval.shots) max_shots = std::max(max_shots, s);
  for (int s : eval.shot_grid) max_shots = std::max(max_shots, s);
  if (2 * max_shots + 1 > model.max_positions)
    throw ConfigError("model.max_positions too small for the largest shot count");
  if (2 * data.t_history > model.max_positions || 2 * eval.t_history > model.max_positions)
    throw ConfigError("model.max_positions too small for the channel history");
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"seed", c.seed},
           {"system", c.system},
           {"model", c.model},
           {"train", c.train},
           {"train_shots", c.train_shots},
           {"train_augment", c.train_augment},
           {"data", c.data},
           {"eval", c.eval},
           {"output_dir", c.output_dir.string()},
           {"data_dir", c.resolved_data_dir().string()},
           {"checkpoint_dir", c.resolved_checkpoint_dir().string()}};
}

ExperimentConfig parse_experiment(const json& j, std::optional<std::uint64_t> seed_override) {
  ExperimentConfig c;
  try {
    check_keys(j, section_reference(c), "config");
    if (seed_override) {
      c.seed = *seed_override;
    } else {
      if (!j.contains("seed")) throw ConfigError("config: 'seed' is required");
      c.seed = j.at("seed").get<std::uint64_t>();
    }

    if (j.contains("system")) {
      json ref = section_reference(c.system);
      check_keys(j["system"], ref, "system");
      c.system = j["system"].get<SystemConfig>();
    }
    c.model.token_dim = c.system.token_dim();
    if (j.contains("model")) {
      check_keys(j["model"], section_reference(c.model), "model");
      json m = j["model"];
      if (!m.contains("token_dim")) m["token_dim"] = c.system.token_dim();
      c.model = m.get<ModelConfig>();
    }
    if (j.contains("train")) {
      check_keys(j["train"], section_reference(c.train), "train");
      c.train = j["train"].get<TrainConfig>();
      if (!j["train"].contains("seed")) c.train.seed = c.seed;
    } else {
      c.train.seed = c.seed;
    }
    // An overridden global seed carries over to the training seed.
    if (seed_override) c.train.seed = c.seed;
    c.train_shots = j.value("train_shots", c.train_shots);
    c.train_augment = j.value("train_augment", c.train_augment);
    if (j.contains("data")) {
      check_keys(j["data"], section_reference(c.data), "data");
      c.data = j["data"].get<DataConfig>();
    }
    if (j.contains("eval")) {
      check_keys(j["eval"], section_reference(c.eval), "eval");
      c.eval = j["eval"].get<EvalConfig>();
    }
    c.output_dir = j.value("output_dir", c.output_dir.string());
    c.data_dir = j.value("data_dir", std::string());
    c.checkpoint_dir = j.value("checkpoint_dir", std::string());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(f, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_experiment(j, seed_override);
}

std::string sha256_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("sha256: digest init failed");
  }
  std::array<char, 1 << 16> buf;
  while (f) {
    f.read(buf.data(), buf.size());
    if (f.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(f.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char b[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(b, sizeof b, "%02x", md[i]);
    hex += b;
  }
  return hex;
}

void write_resolved_config(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  write_text_atomic(cfg.output_dir / "resolved_config.json", json(cfg).dump(2) + "\n");
}

void run_gen_data(const ExperimentConfig& cfg, unsigned threads) {
  try {
    const fs::path dir = cfg.resolved_data_dir();
    fs::create_directories(dir);
    json files = json::array();
    std::optional<double> scale;
    for (int t = 0; t < kNumTasks; ++t) {
      const Task task = static_cast<Task>(t);
      DatasetSpec spec;
      spec.n_samples = cfg.data.n_samples;
      spec.v_lo = cfg.data.v_lo;
      spec.v_hi = cfg.data.v_hi;
      spec.snr_set = cfg.data.snr_set;
      spec.t_history = cfg.data.t_history;
      spec.seed = cfg.data_seed(task);
      // All tasks share the token scale of the P1 channels.
      const TaskDataset ds = make_task_dataset(task, cfg.system, spec, threads, scale);
      if (!scale) scale = ds.norm_scale;
      const fs::path path = dir / dataset_file(task);
      write_wds1(path, ds);
      files.push_back({{"name", dataset_file(task)},
                       {"task", task_name(task)},
                       {"samples", ds.size()},
                       {"bytes", fs::file_size(path)},
                       {"sha256", sha256_file(path)}});
      std::cout << "wrote " << path.string() << '\n';
    }
    const json manifest = {{"format", kManifestFormat},
                           {"version", 1},
                           {"seed", cfg.seed},
                           {"norm_scale", *scale},
                           {"system", cfg.system},
                           {"data", cfg.data},
                           {"files", files}};
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    throw StageError(kExitGeneration, std::string("gen-data: ") + e.what());
  }
}

namespace {

// Loads the three datasets named in the manifest after checking digests.
std::array<TaskDataset, kNumTasks> load_training_data(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.resolved_data_dir();
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path))
    throw Error("no dataset manifest at " + manifest_path.string() + " (run gen-data first)");
  const json manifest = read_json(manifest_path);
  if (manifest.value("format", "") != kManifestFormat) throw Error("bad dataset manifest");
  std::array<TaskDataset, kNumTasks> out;
  for (const auto& entry : manifest.at("files")) {
    const fs::path path = dir / entry.at("name").get<std::string>();
    if (sha256_file(path) != entry.at("sha256").get<std::string>())
      throw Error("digest mismatch for " + path.string());
    TaskDataset ds = read_wds1(path);
    if (json(ds.cfg) != json(cfg.system))
      throw Error(path.string() + " was generated for a different system config");
    const Task task = task_from_name(entry.at("task").get<std::string>());
    out[static_cast<int>(task)] = std::move(ds);
  }
  for (int t = 0; t < kNumTasks; ++t)
    if (out[t].size() == 0)
      throw Error("dataset for " + task_name(static_cast<Task>(t)) + " missing from manifest");
  return out;
}

}  // namespace

void run_train(const ExperimentConfig& cfg, unsigned threads, const TrainRunOptions& options) {
  const fs::path ckpt = cfg.resolved_checkpoint_dir();
  try {
    const auto data = load_training_data(cfg);
    SamplerOptions so;
    so.shots = cfg.train_shots;
    so.augment = cfg.train_augment;
    so.proportions = cfg.train.task_proportions;
    MixedBatchSampler sampler({&data[0], &data[1], &data[2]}, so);

    const bool resume = options.resume && fs::exists(ckpt / "checkpoint.json");
    TrainState state = TrainState::initial(cfg.model, cfg.seed);
    if (resume) {
      TrainConfig saved;
      state = load_checkpoint(ckpt, &saved);
      if (json(saved) != json(cfg.train) || json(state.params.config) != json(cfg.model))
        throw Error("checkpoint in " + ckpt.string() + " belongs to a different config");
      std::cout << "resuming at epoch " << state.epoch << '\n';
    }
    fs::create_directories(ckpt);
    const json info = {{"channel_scale", data[0].norm_scale},
                       {"snr_set", cfg.data.snr_set},
                       {"train_shots", cfg.train_shots},
                       {"train_augment", cfg.train_augment}};
    write_text_atomic(ckpt / kRunInfo, info.dump(2) + "\n");

    TrainOptions to;
    to.threads = threads;
    to.checkpoint_dir = ckpt;
    to.log_csv = cfg.output_dir / "train_loss.csv";
    to.stop_after_epoch = options.stop_after_epoch;
    to.on_epoch = [](const EpochRecord& r) {
      std::printf("epoch %d  loss P1 %.5f P2 %.5f P3 %.5f  lr %.3g\n", r.epoch + 1, r.loss[0],
                  r.loss[1], r.loss[2], r.lr);
      std::fflush(stdout);
    };
    train(state, sampler, cfg.train, to);
  } catch (const std::exception& e) {
    throw StageError(kExitTraining, std::string("train: ") + e.what());
  }
}

std::vector<fs::path> run_eval(const ExperimentConfig& cfg, const std::string& id,
                               unsigned threads) {
  const auto& ids = experiment_ids();
  if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
    std::string list;
    for (const auto& i : ids) list += (list.empty() ? "" : ", ") + i;
    throw StageError(kExitEval, "eval: unknown experiment '" + id + "'; valid ids: " + list);
  }
  const fs::path ckpt = cfg.resolved_checkpoint_dir();
  if (!fs::exists(ckpt / "checkpoint.json") || !fs::exists(ckpt / kRunInfo))
    throw StageError(kExitEval, "eval: no checkpoint in " + ckpt.string() + " (run train first)");

  try {
    const TrainState state = load_checkpoint(ckpt);
    const json info = read_json(ckpt / kRunInfo);
    const IclPredictor model(state.params, info.at("channel_scale").get<double>());
    const auto trained = info.at("snr_set").get<std::vector<double>>();

    TestSetSpec spec;
    spec.n_samples = cfg.eval.n_samples;
    spec.v_lo = cfg.eval.v_lo;
    spec.v_hi = cfg.eval.v_hi;
    spec.t_history = cfg.eval.t_history;
    spec.seed = cfg.eval_seed();

    const bool all = id == "all";
    std::vector<EvalReport> reports;
    if (all || id == "fig7")
      reports.push_back(eval_sum_rate_vs_snr(model, cfg.system, spec, cfg.eval.snr_grid,
                                             cfg.eval.shots, threads));
    if (all || id == "fig8")
      reports.push_back(eval_min_rate_vs_snr(model, cfg.system, spec, cfg.eval.snr_grid,
                                             cfg.eval.shots, threads));
    if (all || id == "fig9")
      reports.push_back(
          eval_nmse_vs_velocity(model, cfg.system, spec, cfg.eval.velocities, threads));
    if (all || id == "fig10_12")
      reports.push_back(
          eval_shots_sweep(model, cfg.system, spec, trained, cfg.eval.shot_grid, threads));
    if (all || id == "fig13")
      reports.push_back(eval_unseen_snr(model, cfg.system, spec, trained, cfg.eval.heldout_snrs,
                                        cfg.eval.heldout_shots, threads));

    fs::create_directories(cfg.report_dir());
    std::vector<fs::path> paths;
    for (const auto& r : reports) {
      const fs::path p = cfg.report_dir() / (r.experiment + (cfg.eval.gnuplot ? ".dat" : ".csv"));
      r.write_csv(p, cfg.eval.gnuplot);
      std::cout << "wrote " << p.string() << '\n';
      paths.push_back(p);
    }
    return paths;
  } catch (const std::exception& e) {
    throw StageError(kExitEval, std::string("eval: ") + e.what());
  }
}

}  // namespace icwlm
