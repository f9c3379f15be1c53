#pragma once

#include "icwlm/icl_dataset.hpp"
#include "icwlm/transformer.hpp"

namespace icwlm::testing {

// 2x1 array, two users: token dimension 8.
inline SystemConfig tiny_system() {
  SystemConfig c;
  c.n_h = 2;
  c.n_v = 1;
  c.k_users = 2;
  c.n_clusters = 4;
  c.paths_per_cluster = 5;
  return c;
}

inline ModelConfig tiny_model(int token_dim = 8) {
  ModelConfig m;
  m.n_layers = 2;
  m.n_heads = 2;
  m.d_model = 16;
  m.d_ffn = 32;
  m.token_dim = token_dim;
  m.max_positions = 24;
  return m;
}

struct TinyData {
  TaskDataset p1, p2, p3;

  std::array<const TaskDataset*, kNumTasks> ptrs() const { return {&p1, &p2, &p3}; }
};

inline TinyData tiny_data(int n, std::uint64_t seed, int t_history = 4) {
  const auto cfg = tiny_system();
  DatasetSpec spec;
  spec.n_samples = n;
  spec.seed = seed;
  spec.t_history = t_history;
  TinyData d{make_task_dataset(Task::kSumRate, cfg, spec),
             make_task_dataset(Task::kMaxMinSinr, cfg, spec),
             make_task_dataset(Task::kPrediction, cfg, spec)};
  d.p2.norm_scale = d.p3.norm_scale = d.p1.norm_scale;
  return d;
}

}  // namespace icwlm::testing
