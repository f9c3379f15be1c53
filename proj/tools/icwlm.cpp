// Command-line runner: gen-data, train, eval.

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "icwlm/experiment.hpp"
#include "icwlm/parallel.hpp"

using namespace icwlm;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->required();
  cmd->add_option("--seed", c.seed, "Override the global seed");
  cmd->add_option("--threads", c.threads, "Worker threads (0 = all cores)");
  cmd->add_option("--out", c.out, "Override the output directory");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = load_experiment(c.config, c.seed);
  if (!c.out.empty()) {
    // Derived directories follow the new output directory.
    const auto old = cfg.output_dir;
    cfg.output_dir = c.out;
    if (cfg.data_dir == old / "data") cfg.data_dir.clear();
    if (cfg.checkpoint_dir == old / "checkpoint") cfg.checkpoint_dir.clear();
  }
  write_resolved_config(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-context wireless model: data generation, training and evaluation"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, eval_opts;
  auto* gen = app.add_subcommand("gen-data", "Generate and label the training datasets");
  add_common(gen, gen_opts);

  auto* tr = app.add_subcommand("train", "Train the model on generated datasets");
  add_common(tr, train_opts);
  TrainRunOptions run;
  tr->add_flag("--resume", run.resume, "Continue from the checkpoint in the output directory");
  tr->add_option("--stop-after-epoch", run.stop_after_epoch,
                 "Stop once this many epochs are complete");

  auto* ev = app.add_subcommand("eval", "Evaluate a trained checkpoint");
  add_common(ev, eval_opts);
  std::string experiment = "all";
  ev->add_option("--experiment,-e", experiment,
                 "fig7, fig8, fig9, fig10_12, fig13 or all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) {
      const auto cfg = resolve(gen_opts);
      run_gen_data(cfg, gen_opts.threads ? gen_opts.threads : default_threads());
    } else if (*tr) {
      const auto cfg = resolve(train_opts);
      run_train(cfg, train_opts.threads ? train_opts.threads : default_threads(), run);
    } else if (*ev) {
      const auto cfg = resolve(eval_opts);
      run_eval(cfg, experiment, eval_opts.threads ? eval_opts.threads : default_threads());
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const StageError& e) {
    std::cerr << e.what() << '\n';
    return e.code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}
