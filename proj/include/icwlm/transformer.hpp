#pragma once

// Causal decoder-only transformer over real token vectors:
//
//   h_0 = W_e x + b_e
//   per layer:  h += W_o Attn(RoPE(W_Q n), RoPE(W_K n), W_V n),  n = RMSNorm(h) * g_attn
//               h += W_2 (silu(gate) * up),  [gate; up] = W_1 RMSNorm(h) * g_ffn
//   y = W_out h_L + b_out
//
// Attention is per head with a causal mask; RoPE rotates consecutive
// dimension pairs of each head by m * base^(-2i/d_k).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "icwlm/icl_dataset.hpp"
#include "icwlm/types.hpp"

namespace icwlm {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_ffn = 512;
  int max_positions = 64;
  int token_dim = 128;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

struct ParamBlock {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t offset = 0;
  bool decay = false;  // weight matrices decay; biases and norm gains do not

  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

// Flat parameter layout in a fixed order (the checkpoint order). Every block
// starts on a kBlockAlign-element boundary so that vectorized kernels see the
// same alignment for every copy of the parameters; padding stays zero.
class ParamLayout {
 public:
  struct Layer {
    std::size_t attn_norm, wq, wk, wv, wo, ffn_norm, w1, w2;
  };

  static constexpr std::size_t kBlockAlign = 16;

  explicit ParamLayout(const ModelConfig& cfg);

  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t total() const { return total_; }  // including padding
  std::size_t count() const;                      // parameters only

  std::size_t encoder_weight = 0, encoder_bias = 0, head_weight = 0, head_bias = 0;
  std::vector<Layer> layers;

 private:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols, bool decay);
  std::vector<ParamBlock> blocks_;
  std::size_t total_ = 0;
};

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;

// Parameters (or a gradient with the same shape) stored contiguously.
template <typename S>
struct ModelParams {
  ModelConfig config;
  ParamLayout layout;
  AlignedVector<S> values;

  explicit ModelParams(const ModelConfig& cfg);

  Eigen::Map<Mat<S>> block(std::size_t i);
  Eigen::Map<const Mat<S>> block(std::size_t i) const;

  // Truncated normal (2 sigma) with std 0.02; attention/FFN output
  // projections additionally scaled by 1/sqrt(2 n_layers); gains 1, biases 0.
  static ModelParams initialized(const ModelConfig& cfg, std::uint64_t seed);

  template <typename T>
  ModelParams<T> cast() const;
};

// Precomputed cos/sin of m * theta_i for every position and pair.
struct RopeTable {
  std::vector<double> thetas;  // d_k / 2 angles, strictly decreasing
  Mat<double> cos, sin;        // (d_k/2) x max_positions

  RopeTable(int head_dim, int max_positions, double base = 10000.0);
};

// Standalone building blocks, used by tests and small tools.
namespace ops {

template <typename S>
Vec<S> encode_input(const Vec<S>& x, const Mat<S>& W_e, const Vec<S>& b_e);

// Rotates consecutive pairs (2i, 2i+1) by m * thetas[i]. Throws on odd length.
template <typename S>
Vec<S> rope_rotate(const Vec<S>& v, int m, double base = 10000.0);

// Single-head causal attention; columns are positions. RoPE is applied to
// Q and K inside.
template <typename S>
Mat<S> attention(const Mat<S>& Q, const Mat<S>& K, const Mat<S>& V, double base = 10000.0);

// Pre-softmax logit between query position m and key position n.
template <typename S>
S attention_logit(const Vec<S>& q, int m, const Vec<S>& k, int n, double base = 10000.0);

// W_2 (silu(gate) * up) with [gate; up] = W_1 h.
template <typename S>
Vec<S> ffn(const Vec<S>& h, const Mat<S>& W_1, const Mat<S>& W_2);

template <typename S>
Vec<S> decode_output(const Vec<S>& h, const Mat<S>& W_o, const Vec<S>& b_o);

}  // namespace ops

// Mean over loss positions and token dimensions of (output - target)^2.
// `outputs` is token_dim x sequence length. Throws if loss_positions is empty.
template <typename S>
double sequence_loss(const Mat<S>& outputs, const IclSequence& seq);

struct BatchLoss {
  std::vector<double> losses;  // per sequence
  double weighted = 0.0;       // sum_s weights[s] * losses[s]
};

template <typename S>
class Transformer {
 public:
  explicit Transformer(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  // token_dim x length outputs for every position. Throws NumericError with
  // the layer index on non-finite activations.
  Mat<S> forward(const ModelParams<S>& params, const Mat<S>& tokens) const;

  // Loss of each sequence and, if grad != nullptr, the exact gradient of
  // sum_s weights[s] * loss_s accumulated (overwritten) into *grad.
  BatchLoss loss_and_gradient(const ModelParams<S>& params,
                              std::span<const IclSequence> batch,
                              std::span<const double> weights,
                              ModelParams<S>* grad) const;

  // Mean-reduced gradient over the batch (weights 1/n).
  ModelParams<S> gradients(const ModelParams<S>& params,
                           std::span<const IclSequence> batch) const;

 private:
  ModelConfig cfg_;
  RopeTable rope_;
};

// Converts a sequence's tokens to the model scalar.
template <typename S>
Mat<S> tokens_as(const IclSequence& seq) {
  return seq.tokens.cast<S>();
}

extern template struct ModelParams<float>;
extern template struct ModelParams<double>;
extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace icwlm
