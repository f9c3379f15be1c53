#include "icwlm/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "icwlm/random.hpp"

namespace icwlm {

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ffn < 1 || max_positions < 1 ||
      token_dim < 1)
    throw Error("model config: all sizes must be positive");
  if (d_model % n_heads != 0) throw Error("model config: d_model must be divisible by n_heads");
  if (head_dim() % 2 != 0) throw Error("model config: head dimension must be even");
  if (!(rope_base > 1.0)) throw Error("model config: rope_base must exceed 1");
  if (!(norm_eps > 0.0)) throw Error("model config: norm_eps must be positive");
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = cfg.d_model, f = cfg.d_ffn, D = cfg.token_dim;
  encoder_weight = add("encoder.weight", d, D, true);
  encoder_bias = add("encoder.bias", d, 1, false);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    Layer L{};
    L.attn_norm = add(p + "attn_norm", d, 1, false);
    L.wq = add(p + "wq", d, d, true);
    L.wk = add(p + "wk", d, d, true);
    L.wv = add(p + "wv", d, d, true);
    L.wo = add(p + "wo", d, d, true);
    L.ffn_norm = add(p + "ffn_norm", d, 1, false);
    L.w1 = add(p + "w1", 2 * f, d, true);
    L.w2 = add(p + "w2", d, f, true);
    layers.push_back(L);
  }
  head_weight = add("head.weight", D, d, true);
  head_bias = add("head.bias", D, 1, false);
}

std::size_t ParamLayout::add(std::string name, Eigen::Index rows, Eigen::Index cols, bool decay) {
  total_ = (total_ + kBlockAlign - 1) / kBlockAlign * kBlockAlign;
  blocks_.push_back({std::move(name), rows, cols, total_, decay});
  total_ += blocks_.back().size();
  return blocks_.size() - 1;
}

std::size_t ParamLayout::count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.size();
  return n;
}

template <typename S>
ModelParams<S>::ModelParams(const ModelConfig& cfg)
    : config(cfg), layout(cfg), values(layout.total(), S(0)) {}

template <typename S>
Eigen::Map<Mat<S>> ModelParams<S>::block(std::size_t i) {
  const auto& b = layout.blocks().at(i);
  return Eigen::Map<Mat<S>>(values.data() + b.offset, b.rows, b.cols);
}

template <typename S>
Eigen::Map<const Mat<S>> ModelParams<S>::block(std::size_t i) const {
  const auto& b = layout.blocks().at(i);
  return Eigen::Map<const Mat<S>>(values.data() + b.offset, b.rows, b.cols);
}

template <typename S>
ModelParams<S> ModelParams<S>::initialized(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p(cfg);
  Rng rng = make_stream({seed, 0x1a17u});
  std::normal_distribution<double> normal(0.0, 1.0);
  const double out_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);
  std::vector<bool> is_output(p.layout.blocks().size(), false);
  for (const auto& L : p.layout.layers) is_output[L.wo] = is_output[L.w2] = true;
  std::vector<bool> is_gain(p.layout.blocks().size(), false);
  for (const auto& L : p.layout.layers) is_gain[L.attn_norm] = is_gain[L.ffn_norm] = true;

  for (std::size_t i = 0; i < p.layout.blocks().size(); ++i) {
    const auto& b = p.layout.blocks()[i];
    S* v = p.values.data() + b.offset;
    if (is_gain[i]) {
      std::fill(v, v + b.size(), S(1));
    } else if (b.decay) {
      const double std = 0.02 * (is_output[i] ? out_scale : 1.0);
      for (std::size_t j = 0; j < b.size(); ++j) {
        double z;
        do z = normal(rng);
        while (std::abs(z) > 2.0);
        v[j] = static_cast<S>(std * z);
      }
    }
  }
  return p;
}

template <typename S>
template <typename T>
ModelParams<T> ModelParams<S>::cast() const {
  ModelParams<T> out(config);
  for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<T>(values[i]);
  return out;
}

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

RopeTable::RopeTable(int head_dim, int max_positions, double base) {
  if (head_dim % 2 != 0) throw Error("rope: head dimension must be even");
  const int half = head_dim / 2;
  thetas.resize(half);
  for (int i = 0; i < half; ++i) thetas[i] = std::pow(base, -2.0 * i / head_dim);
  cos.resize(half, max_positions);
  sin.resize(half, max_positions);
  for (int m = 0; m < max_positions; ++m)
    for (int i = 0; i < half; ++i) {
      cos(i, m) = std::cos(m * thetas[i]);
      sin(i, m) = std::sin(m * thetas[i]);
    }
}

namespace ops {

template <typename S>
Vec<S> encode_input(const Vec<S>& x, const Mat<S>& W_e, const Vec<S>& b_e) {
  if (x.size() != W_e.cols() || b_e.size() != W_e.rows())
    throw Error("encode_input: shape mismatch");
  return W_e * x + b_e;
}

template <typename S>
Vec<S> rope_rotate(const Vec<S>& v, int m, double base) {
  if (v.size() % 2 != 0) throw Error("rope_rotate: odd head dimension");
  if (m == 0) return v;
  Vec<S> out(v.size());
  const double dk = static_cast<double>(v.size());
  for (Eigen::Index i = 0; i < v.size() / 2; ++i) {
    const double angle = m * std::pow(base, -2.0 * i / dk);
    const S c = static_cast<S>(std::cos(angle)), s = static_cast<S>(std::sin(angle));
    out(2 * i) = c * v(2 * i) - s * v(2 * i + 1);
    out(2 * i + 1) = s * v(2 * i) + c * v(2 * i + 1);
  }
  return out;
}

template <typename S>
S attention_logit(const Vec<S>& q, int m, const Vec<S>& k, int n, double base) {
  return rope_rotate<S>(q, m, base).dot(rope_rotate<S>(k, n, base)) /
         static_cast<S>(std::sqrt(static_cast<double>(q.size())));
}

template <typename S>
Mat<S> attention(const Mat<S>& Q, const Mat<S>& K, const Mat<S>& V, double base) {
  const Eigen::Index L = Q.cols();
  if (K.cols() != L || V.cols() != L || K.rows() != Q.rows())
    throw Error("attention: shape mismatch");
  Mat<S> Qr(Q.rows(), L), Kr(K.rows(), L);
  for (Eigen::Index m = 0; m < L; ++m) {
    Qr.col(m) = rope_rotate<S>(Q.col(m), static_cast<int>(m), base);
    Kr.col(m) = rope_rotate<S>(K.col(m), static_cast<int>(m), base);
  }
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(Q.rows())));
  Mat<S> out(V.rows(), L);
  for (Eigen::Index i = 0; i < L; ++i) {
    Vec<S> logits = (Kr.leftCols(i + 1).transpose() * Qr.col(i)) * scale;
    const S mx = logits.maxCoeff();
    Vec<S> p = (logits.array() - mx).exp().matrix();
    p /= p.sum();
    out.col(i) = V.leftCols(i + 1) * p;
  }
  return out;
}

template <typename S>
Vec<S> ffn(const Vec<S>& h, const Mat<S>& W_1, const Mat<S>& W_2) {
  const Eigen::Index f = W_2.cols();
  if (W_1.rows() != 2 * f || W_1.cols() != h.size() || W_2.rows() != h.size())
    throw Error("ffn: shape mismatch");
  const Vec<S> a = W_1 * h;
  Vec<S> act(f);
  for (Eigen::Index i = 0; i < f; ++i) {
    const S g = a(i);
    act(i) = g / (S(1) + std::exp(-g)) * a(f + i);
  }
  return W_2 * act;
}

template <typename S>
Vec<S> decode_output(const Vec<S>& h, const Mat<S>& W_o, const Vec<S>& b_o) {
  if (h.size() != W_o.cols() || b_o.size() != W_o.rows())
    throw Error("decode_output: shape mismatch");
  return W_o * h + b_o;
}

#define ICWLM_OPS(S)                                                                   \
  template Vec<S> encode_input<S>(const Vec<S>&, const Mat<S>&, const Vec<S>&);        \
  template Vec<S> rope_rotate<S>(const Vec<S>&, int, double);                          \
  template S attention_logit<S>(const Vec<S>&, int, const Vec<S>&, int, double);       \
  template Mat<S> attention<S>(const Mat<S>&, const Mat<S>&, const Mat<S>&, double);   \
  template Vec<S> ffn<S>(const Vec<S>&, const Mat<S>&, const Mat<S>&);                 \
  template Vec<S> decode_output<S>(const Vec<S>&, const Mat<S>&, const Vec<S>&);
ICWLM_OPS(float)
ICWLM_OPS(double)
#undef ICWLM_OPS

}  // namespace ops

template <typename S>
double sequence_loss(const Mat<S>& outputs, const IclSequence& seq) {
  if (seq.loss_positions.empty()) throw Error("sequence_loss: no loss positions");
  if (outputs.cols() != seq.length() || outputs.rows() != seq.targets.rows())
    throw Error("sequence_loss: outputs not aligned with tokens");
  double sum = 0.0;
  for (std::size_t j = 0; j < seq.loss_positions.size(); ++j)
    sum += (outputs.col(seq.loss_positions[j]).template cast<double>() - seq.targets.col(j))
               .squaredNorm();
  return sum / (static_cast<double>(seq.loss_positions.size()) * outputs.rows());
}

template double sequence_loss<float>(const Mat<float>&, const IclSequence&);
template double sequence_loss<double>(const Mat<double>&, const IclSequence&);

namespace {

struct Span {
  Eigen::Index offset, length;
};

template <typename S>
struct LayerCache {
  Mat<S> h_in, xhat1;
  Vec<S> r1;
  Mat<S> q, k, v;  // q and k after rotation
  std::vector<Mat<S>> probs;  // per (sequence, head)
  Mat<S> o, h_mid, xhat2;
  Vec<S> r2;
  Mat<S> gate, up, act;
};

template <typename S>
struct Cache {
  std::vector<Span> spans;
  Mat<S> x;
  std::vector<LayerCache<S>> layers;
  Mat<S> h_final, y;
};

template <typename S>
void rms_norm(const Mat<S>& h, double eps, Mat<S>& xhat, Vec<S>& r) {
  r = ((h.colwise().squaredNorm().array() / static_cast<S>(h.rows())) + static_cast<S>(eps))
          .rsqrt()
          .transpose();
  xhat = h * r.asDiagonal();
}

// dx for xhat = x * r with r = (mean(x^2) + eps)^(-1/2), per column.
template <typename S>
Mat<S> rms_norm_backward(const Mat<S>& dxhat, const Mat<S>& xhat, const Vec<S>& r) {
  const Eigen::Index d = xhat.rows();
  Mat<S> dx(d, xhat.cols());
  for (Eigen::Index j = 0; j < xhat.cols(); ++j) {
    const S proj = dxhat.col(j).dot(xhat.col(j)) / static_cast<S>(d);
    dx.col(j) = r(j) * (dxhat.col(j) - proj * xhat.col(j));
  }
  return dx;
}

// Rotates each head's pairs by +angle (sign 1) or -angle (sign -1).
template <typename S>
void apply_rope(Mat<S>& m, const std::vector<Span>& spans, const RopeTable& rope, int n_heads,
                int sign) {
  const Eigen::Index dk = m.rows() / n_heads;
  for (const auto& sp : spans)
    for (Eigen::Index p = 0; p < sp.length; ++p) {
      auto col = m.col(sp.offset + p);
      for (int h = 0; h < n_heads; ++h)
        for (Eigen::Index i = 0; i < dk / 2; ++i) {
          const S c = static_cast<S>(rope.cos(i, p));
          const S s = static_cast<S>(sign * rope.sin(i, p));
          const Eigen::Index a = h * dk + 2 * i;
          const S x0 = col(a), x1 = col(a + 1);
          col(a) = c * x0 - s * x1;
          col(a + 1) = s * x0 + c * x1;
        }
    }
}

// out = W * X over fixed-width column chunks, the last one zero-padded, so
// each column is rounded identically whatever the batch width.
constexpr Eigen::Index kChunk = 64;

template <typename S, typename WType>
Mat<S> project(const WType& W, const Mat<S>& X) {
  Mat<S> out(W.rows(), X.cols());
  Mat<S> in_buf(X.rows(), kChunk), out_buf(W.rows(), kChunk);
  for (Eigen::Index c = 0; c < X.cols(); c += kChunk) {
    const Eigen::Index w = std::min(kChunk, X.cols() - c);
    if (w == kChunk) {
      out_buf.noalias() = W * X.middleCols(c, kChunk);
    } else {
      in_buf.leftCols(w) = X.middleCols(c, w);
      in_buf.rightCols(kChunk - w).setZero();
      out_buf.noalias() = W * in_buf;
    }
    out.middleCols(c, w) = out_buf.leftCols(w);
  }
  return out;
}

template <typename S>
S silu_grad(S g) {
  const S sig = S(1) / (S(1) + std::exp(-g));
  return sig * (S(1) + g * (S(1) - sig));
}

template <typename S>
void run_forward(const ModelConfig& cfg, const RopeTable& rope, const ModelParams<S>& P,
                 Cache<S>& c) {
  const auto& lay = P.layout;
  const Eigen::Index N = c.x.cols();
  const int H = cfg.n_heads;
  const Eigen::Index dk = cfg.head_dim(), f = cfg.d_ffn;
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dk)));

  Mat<S> h = project(P.block(lay.encoder_weight), c.x);
  h.colwise() += P.block(lay.encoder_bias).col(0);
  c.layers.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& L = lay.layers[l];
    auto& lc = c.layers[l];
    lc.h_in = h;
    rms_norm(h, cfg.norm_eps, lc.xhat1, lc.r1);
    const Mat<S> a = P.block(L.attn_norm).col(0).asDiagonal() * lc.xhat1;
    lc.q = project(P.block(L.wq), a);
    lc.k = project(P.block(L.wk), a);
    lc.v = project(P.block(L.wv), a);
    apply_rope(lc.q, c.spans, rope, H, 1);
    apply_rope(lc.k, c.spans, rope, H, 1);

    lc.o.resize(cfg.d_model, N);
    lc.probs.assign(c.spans.size() * H, Mat<S>());
    for (std::size_t s = 0; s < c.spans.size(); ++s) {
      const auto [off, len] = c.spans[s];
      for (int hd = 0; hd < H; ++hd) {
        const auto Kh = lc.k.block(hd * dk, off, dk, len);
        const auto Vh = lc.v.block(hd * dk, off, dk, len);
        Mat<S>& prob = lc.probs[s * H + hd];
        prob.setZero(len, len);  // (query, key)
        // Query i touches only keys 0..i so earlier outputs never see later tokens.
        Vec<S> logits(len);
        for (Eigen::Index i = 0; i < len; ++i) {
          const auto qi = lc.q.col(off + i).segment(hd * dk, dk);
          for (Eigen::Index j = 0; j <= i; ++j) logits(j) = Kh.col(j).dot(qi) * scale;
          const S mx = logits.head(i + 1).maxCoeff();
          auto e = (logits.head(i + 1).array() - mx).exp();
          prob.row(i).head(i + 1) = (e / e.sum()).transpose();
          lc.o.col(off + i).segment(hd * dk, dk).noalias() =
              Vh.leftCols(i + 1) * prob.row(i).head(i + 1).transpose();
        }
      }
    }
    h += project(P.block(L.wo), lc.o);
    lc.h_mid = h;

    rms_norm(h, cfg.norm_eps, lc.xhat2, lc.r2);
    const Mat<S> b = P.block(L.ffn_norm).col(0).asDiagonal() * lc.xhat2;
    const Mat<S> u = project(P.block(L.w1), b);
    lc.gate = u.topRows(f);
    lc.up = u.bottomRows(f);
    lc.act = (lc.gate.array() / (S(1) + (-lc.gate.array()).exp()) * lc.up.array()).matrix();
    h += project(P.block(L.w2), lc.act);
    if (!h.allFinite())
      throw NumericError("forward: non-finite activation in layer " + std::to_string(l));
  }
  c.h_final = std::move(h);
  c.y = project(P.block(lay.head_weight), c.h_final);
  c.y.colwise() += P.block(lay.head_bias).col(0);
  if (!c.y.allFinite()) throw NumericError("forward: non-finite activation in output head");
}

template <typename S>
void run_backward(const ModelConfig& cfg, const RopeTable& rope, const ModelParams<S>& P,
                  const Cache<S>& c, const Mat<S>& dy, ModelParams<S>& G) {
  const auto& lay = P.layout;
  const int H = cfg.n_heads;
  const Eigen::Index dk = cfg.head_dim(), f = cfg.d_ffn;
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dk)));

  G.block(lay.head_weight).noalias() = dy * c.h_final.transpose();
  G.block(lay.head_bias) = dy.rowwise().sum();
  Mat<S> dh = P.block(lay.head_weight).transpose() * dy;

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& L = lay.layers[l];
    const auto& lc = c.layers[l];

    // FFN branch.
    G.block(L.w2).noalias() = dh * lc.act.transpose();
    const Mat<S> dact = P.block(L.w2).transpose() * dh;
    Mat<S> du(2 * f, dact.cols());
    for (Eigen::Index j = 0; j < dact.cols(); ++j)
      for (Eigen::Index i = 0; i < f; ++i) {
        const S g = lc.gate(i, j);
        du(i, j) = dact(i, j) * lc.up(i, j) * silu_grad(g);
        du(f + i, j) = dact(i, j) * g / (S(1) + std::exp(-g));
      }
    const auto g2 = P.block(L.ffn_norm).col(0);
    const Mat<S> b = g2.asDiagonal() * lc.xhat2;
    G.block(L.w1).noalias() = du * b.transpose();
    const Mat<S> db = P.block(L.w1).transpose() * du;
    G.block(L.ffn_norm) = (db.array() * lc.xhat2.array()).rowwise().sum().matrix();
    dh += rms_norm_backward<S>(g2.asDiagonal() * db, lc.xhat2, lc.r2);

    // Attention branch.
    G.block(L.wo).noalias() = dh * lc.o.transpose();
    const Mat<S> d_o = P.block(L.wo).transpose() * dh;
    Mat<S> dq(cfg.d_model, d_o.cols()), dk_(cfg.d_model, d_o.cols()), dv(cfg.d_model, d_o.cols());
    for (std::size_t s = 0; s < c.spans.size(); ++s) {
      const auto [off, len] = c.spans[s];
      for (int hd = 0; hd < H; ++hd) {
        const Mat<S>& prob = lc.probs[s * H + hd];
        const auto dOh = d_o.block(hd * dk, off, dk, len);
        dv.block(hd * dk, off, dk, len).noalias() = dOh * prob;
        const Mat<S> dprob = dOh.transpose() * lc.v.block(hd * dk, off, dk, len);
        Mat<S> dlogit(len, len);  // (query, key)
        for (Eigen::Index i = 0; i < len; ++i) {
          const S dot = prob.row(i).dot(dprob.row(i));
          dlogit.row(i) = (prob.row(i).array() * (dprob.row(i).array() - dot)).matrix();
        }
        dlogit *= scale;
        dq.block(hd * dk, off, dk, len).noalias() =
            lc.k.block(hd * dk, off, dk, len) * dlogit.transpose();
        dk_.block(hd * dk, off, dk, len).noalias() = lc.q.block(hd * dk, off, dk, len) * dlogit;
      }
    }
    apply_rope(dq, c.spans, rope, H, -1);
    apply_rope(dk_, c.spans, rope, H, -1);

    const auto g1 = P.block(L.attn_norm).col(0);
    const Mat<S> a = g1.asDiagonal() * lc.xhat1;
    G.block(L.wq).noalias() = dq * a.transpose();
    G.block(L.wk).noalias() = dk_ * a.transpose();
    G.block(L.wv).noalias() = dv * a.transpose();
    Mat<S> da = P.block(L.wq).transpose() * dq;
    da.noalias() += P.block(L.wk).transpose() * dk_;
    da.noalias() += P.block(L.wv).transpose() * dv;
    G.block(L.attn_norm) = (da.array() * lc.xhat1.array()).rowwise().sum().matrix();
    dh += rms_norm_backward<S>(g1.asDiagonal() * da, lc.xhat1, lc.r1);
  }
  G.block(lay.encoder_weight).noalias() = dh * c.x.transpose();
  G.block(lay.encoder_bias) = dh.rowwise().sum();
}

}  // namespace

template <typename S>
Transformer<S>::Transformer(ModelConfig cfg)
    : cfg_((cfg.validate(), cfg)), rope_(cfg.head_dim(), cfg.max_positions, cfg.rope_base) {}

template <typename S>
Mat<S> Transformer<S>::forward(const ModelParams<S>& params, const Mat<S>& tokens) const {
  if (tokens.rows() != cfg_.token_dim) throw Error("forward: token dimension mismatch");
  if (tokens.cols() < 1 || tokens.cols() > cfg_.max_positions)
    throw Error("forward: sequence length outside [1, max_positions]");
  Cache<S> c;
  c.spans = {{0, tokens.cols()}};
  c.x = tokens;
  run_forward(cfg_, rope_, params, c);
  return std::move(c.y);
}

template <typename S>
BatchLoss Transformer<S>::loss_and_gradient(const ModelParams<S>& params,
                                            std::span<const IclSequence> batch,
                                            std::span<const double> weights,
                                            ModelParams<S>* grad) const {
  if (batch.empty()) throw Error("loss_and_gradient: empty batch");
  if (weights.size() != batch.size()) throw Error("loss_and_gradient: one weight per sequence");
  Cache<S> c;
  Eigen::Index total = 0;
  for (const auto& seq : batch) {
    if (seq.token_dim() != cfg_.token_dim) throw Error("loss_and_gradient: token dimension mismatch");
    if (seq.length() < 1 || seq.length() > cfg_.max_positions)
      throw Error("loss_and_gradient: sequence length outside [1, max_positions]");
    c.spans.push_back({total, seq.length()});
    total += seq.length();
  }
  c.x.resize(cfg_.token_dim, total);
  for (std::size_t s = 0; s < batch.size(); ++s)
    c.x.middleCols(c.spans[s].offset, c.spans[s].length) = batch[s].tokens.cast<S>();
  run_forward(cfg_, rope_, params, c);

  BatchLoss out;
  Mat<S> dy = Mat<S>::Zero(cfg_.token_dim, total);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& seq = batch[s];
    const auto off = c.spans[s].offset;
    const double loss = sequence_loss<S>(c.y.middleCols(off, seq.length()), seq);
    if (!std::isfinite(loss))
      throw NumericError("loss_and_gradient: non-finite loss for sequence " + std::to_string(s));
    out.losses.push_back(loss);
    out.weighted += weights[s] * loss;
    const double coef =
        2.0 * weights[s] / (static_cast<double>(seq.loss_positions.size()) * cfg_.token_dim);
    for (std::size_t j = 0; j < seq.loss_positions.size(); ++j) {
      const auto col = off + seq.loss_positions[j];
      dy.col(col) = static_cast<S>(coef) *
                    (c.y.col(col) - seq.targets.col(j).template cast<S>());
    }
  }
  if (grad) {
    if (grad->values.size() != params.values.size())
      throw Error("loss_and_gradient: gradient shape mismatch");
    run_backward(cfg_, rope_, params, c, dy, *grad);
    for (const S g : grad->values)
      if (!std::isfinite(g)) throw NumericError("loss_and_gradient: non-finite gradient");
  }
  return out;
}

template <typename S>
ModelParams<S> Transformer<S>::gradients(const ModelParams<S>& params,
                                         std::span<const IclSequence> batch) const {
  ModelParams<S> grad(cfg_);
  const std::vector<double> w(batch.size(), 1.0 / static_cast<double>(batch.size()));
  loss_and_gradient(params, batch, w, &grad);
  return grad;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template class Transformer<float>;
template class Transformer<double>;

}  // namespace icwlm
