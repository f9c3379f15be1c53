#include <doctest.h>

#include <cmath>

#include "icwlm/random.hpp"
#include "icwlm/transformer.hpp"

using namespace icwlm;

namespace {

Mat<double> random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double std = 1.0) {
  std::normal_distribution<double> g(0.0, std);
  Mat<double> X(r, c);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = g(rng);
  return X;
}

IclSequence random_sequence(int D, int L, Rng& rng) {
  IclSequence s;
  s.tokens = random_mat(D, L, rng);
  for (int p = 0; p < L; p += 2) s.loss_positions.push_back(p);
  s.targets = random_mat(D, static_cast<Eigen::Index>(s.loss_positions.size()), rng);
  s.roles.assign(L, TokenRole::kInput);
  return s;
}

ModelConfig tiny_config(int d, int heads, int ffn, int D, int layers = 1) {
  ModelConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_model = d;
  c.d_ffn = ffn;
  c.token_dim = D;
  c.max_positions = 16;
  return c;
}

// Parameters with O(1) entries so every path carries signal.
ModelParams<double> random_params(const ModelConfig& cfg, std::uint64_t seed, double std = 0.4) {
  ModelParams<double> p(cfg);
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, std);
  for (auto& v : p.values) v = g(rng);
  for (const auto& L : p.layout.layers)
    for (auto i : {L.attn_norm, L.ffn_norm}) p.block(i).array() += 1.0;
  return p;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Straight-line evaluation of the full model, one scalar at a time.
Mat<double> unrolled_forward(const ModelParams<double>& P, const Mat<double>& X) {
  const auto& cfg = P.config;
  const int d = cfg.d_model, H = cfg.n_heads, dk = d / H, f = cfg.d_ffn, D = cfg.token_dim;
  const int L = static_cast<int>(X.cols());
  const auto& lay = P.layout;
  auto W = [&](std::size_t b, int i, int j) { return P.block(b)(i, j); };

  std::vector<std::vector<double>> h(L, std::vector<double>(d));
  for (int t = 0; t < L; ++t)
    for (int i = 0; i < d; ++i) {
      double s = W(lay.encoder_bias, i, 0);
      for (int j = 0; j < D; ++j) s += W(lay.encoder_weight, i, j) * X(j, t);
      h[t][i] = s;
    }
  auto norm = [&](const std::vector<double>& x, std::size_t gain) {
    double ms = 0;
    for (double v : x) ms += v * v;
    ms = ms / d + cfg.norm_eps;
    std::vector<double> out(d);
    for (int i = 0; i < d; ++i) out[i] = x[i] / std::sqrt(ms) * W(gain, i, 0);
    return out;
  };
  auto matvec = [&](std::size_t b, const std::vector<double>& x) {
    const auto M = P.block(b);
    std::vector<double> out(M.rows(), 0.0);
    for (int i = 0; i < M.rows(); ++i)
      for (int j = 0; j < M.cols(); ++j) out[i] += M(i, j) * x[j];
    return out;
  };
  auto rotate = [&](std::vector<double> v, int m) {
    for (int hd = 0; hd < H; ++hd)
      for (int i = 0; i < dk / 2; ++i) {
        const double a = m * std::pow(cfg.rope_base, -2.0 * i / dk);
        const double x0 = v[hd * dk + 2 * i], x1 = v[hd * dk + 2 * i + 1];
        v[hd * dk + 2 * i] = std::cos(a) * x0 - std::sin(a) * x1;
        v[hd * dk + 2 * i + 1] = std::sin(a) * x0 + std::cos(a) * x1;
      }
    return v;
  };

  for (const auto& Ly : lay.layers) {
    std::vector<std::vector<double>> q(L), k(L), v(L);
    for (int t = 0; t < L; ++t) {
      const auto a = norm(h[t], Ly.attn_norm);
      q[t] = rotate(matvec(Ly.wq, a), t);
      k[t] = rotate(matvec(Ly.wk, a), t);
      v[t] = matvec(Ly.wv, a);
    }
    std::vector<std::vector<double>> o(L, std::vector<double>(d, 0.0));
    for (int t = 0; t < L; ++t)
      for (int hd = 0; hd < H; ++hd) {
        std::vector<double> w(t + 1);
        double z = 0;
        for (int s = 0; s <= t; ++s) {
          double dot = 0;
          for (int i = 0; i < dk; ++i) dot += q[t][hd * dk + i] * k[s][hd * dk + i];
          w[s] = std::exp(dot / std::sqrt(double(dk)));
          z += w[s];
        }
        for (int s = 0; s <= t; ++s)
          for (int i = 0; i < dk; ++i) o[t][hd * dk + i] += w[s] / z * v[s][hd * dk + i];
      }
    for (int t = 0; t < L; ++t) {
      const auto proj = matvec(Ly.wo, o[t]);
      for (int i = 0; i < d; ++i) h[t][i] += proj[i];
      const auto u = matvec(Ly.w1, norm(h[t], Ly.ffn_norm));
      std::vector<double> act(f);
      for (int i = 0; i < f; ++i) act[i] = u[i] * sigmoid(u[i]) * u[f + i];
      const auto out = matvec(Ly.w2, act);
      for (int i = 0; i < d; ++i) h[t][i] += out[i];
    }
  }
  Mat<double> Y(D, L);
  for (int t = 0; t < L; ++t) {
    const auto y = matvec(lay.head_weight, h[t]);
    for (int i = 0; i < D; ++i) Y(i, t) = y[i] + W(lay.head_bias, i, 0);
  }
  return Y;
}

}  // namespace

TEST_CASE("model config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = ModelConfig{};
  c.d_model = 12;
  c.n_heads = 4;  // head dim 3
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("parameter layout and initialization") {
  const ModelConfig cfg;
  const auto p = ModelParams<float>::initialized(cfg, 5);
  const auto& lay = p.layout;
  CHECK(lay.blocks().size() == 4 + 8 * 4);
  CHECK(lay.blocks()[lay.encoder_weight].rows == 128);
  CHECK(lay.blocks()[lay.layers[0].w1].rows == 1024);
  CHECK(lay.blocks()[lay.layers[0].w2].cols == 512);
  std::size_t sum = 0;
  for (const auto& b : lay.blocks()) {
    CHECK(b.offset == sum);
    sum += b.size();
  }
  CHECK(sum == p.values.size());

  CHECK(p.block(lay.layers[2].attn_norm).isOnes(0.0f));
  CHECK(p.block(lay.head_bias).isZero(0.0f));
  const auto wq = p.block(lay.layers[0].wq);
  CHECK(wq.cwiseAbs().maxCoeff() <= 0.04f);
  const double std_q = std::sqrt(wq.cast<double>().squaredNorm() / wq.size());
  CHECK(std_q == doctest::Approx(0.02 * 0.88).epsilon(0.05));  // 2-sigma truncation
  const auto wo = p.block(lay.layers[0].wo);
  CHECK(wo.cwiseAbs().maxCoeff() <= 0.04f / std::sqrt(8.0f) + 1e-7f);
  CHECK(ModelParams<float>::initialized(cfg, 5).values == p.values);
  CHECK(ModelParams<float>::initialized(cfg, 6).values != p.values);
}

TEST_CASE("rope table") {
  const RopeTable t(8, 10);
  REQUIRE(t.thetas.size() == 4);
  CHECK(t.thetas[0] == 1.0);
  for (std::size_t i = 1; i < t.thetas.size(); ++i) CHECK(t.thetas[i] < t.thetas[i - 1]);
  CHECK(t.thetas[1] == doctest::Approx(std::pow(10000.0, -0.25)));
  CHECK(t.cos(2, 3) == doctest::Approx(std::cos(3 * t.thetas[2])));
  CHECK_THROWS_AS(RopeTable(5, 4), Error);
}

TEST_CASE("encode_input and decode_output") {
  Rng rng(1);
  const Vec<double> x = random_mat(5, 1, rng);
  CHECK(ops::encode_input<double>(x, Mat<double>::Identity(5, 5), Vec<double>::Zero(5)) == x);
  const Mat<double> W = random_mat(3, 5, rng);
  const Vec<double> b = random_mat(3, 1, rng);
  CHECK(ops::encode_input<double>(Vec<double>::Zero(5), W, b) == b);
  const Vec<double> e = ops::encode_input<double>(x, W, b);
  for (int i = 0; i < 3; ++i) {
    double s = b(i);
    for (int j = 0; j < 5; ++j) s += W(i, j) * x(j);
    CHECK(e(i) == doctest::Approx(s).epsilon(1e-14));
  }
  CHECK_THROWS_AS(ops::encode_input<double>(Vec<double>::Zero(4), W, b), Error);

  CHECK(ops::decode_output<double>(x, Mat<double>::Zero(3, 5), Vec<double>::Zero(3)).isZero(0.0));
  const Vec<double> y = ops::decode_output<double>(x, W, b);
  for (int i = 0; i < 3; ++i) CHECK(y(i) == doctest::Approx(e(i)).epsilon(1e-14));
}

TEST_CASE("rope_rotate") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec<double> v = random_mat(16, 1, rng);
    CHECK(ops::rope_rotate<double>(v, 0) == v);
    const int m = trial * 3 + 1;
    CHECK(ops::rope_rotate<double>(v, m).norm() == doctest::Approx(v.norm()).epsilon(1e-13));
  }
  Vec<double> e(2);
  e << 1.0, 0.0;
  const Vec<double> r = ops::rope_rotate<double>(e, 1);
  CHECK(r(0) == doctest::Approx(0.5403).epsilon(1e-4));
  CHECK(r(1) == doctest::Approx(0.8415).epsilon(1e-4));
  CHECK_THROWS_AS(ops::rope_rotate<double>(Vec<double>::Ones(3), 1), Error);
}

TEST_CASE("attention logits depend only on relative position") {
  Rng rng(3);
  std::uniform_int_distribution<int> pos(0, 63), shift(1, 64);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const Vec<double> q = random_mat(32, 1, rng), k = random_mat(32, 1, rng);
    const int m = pos(rng), n = pos(rng), s = shift(rng);
    const double a = ops::attention_logit<double>(q, m, k, n);
    const double b = ops::attention_logit<double>(q, m + s, k, n + s);
    worst = std::max(worst, std::abs(a - b));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("single-head attention") {
  Rng rng(4);
  const Mat<double> Q = random_mat(4, 1, rng), K = random_mat(4, 1, rng), V = random_mat(4, 1, rng);
  CHECK(ops::attention<double>(Q, K, V) == V);

  Mat<double> Q5 = random_mat(4, 5, rng), K5 = random_mat(4, 5, rng), V5 = random_mat(4, 5, rng);
  const Mat<double> out = ops::attention<double>(Q5, K5, V5);
  Q5.rightCols(4) = random_mat(4, 4, rng);
  K5.rightCols(4) = random_mat(4, 4, rng);
  V5.rightCols(4) = random_mat(4, 4, rng);
  CHECK(ops::attention<double>(Q5, K5, V5).col(0) == out.col(0));

  // Position 1 mixes two values with softmax weights of the rotated logits.
  const Mat<double> Q2 = random_mat(4, 2, rng), K2 = random_mat(4, 2, rng), V2 = random_mat(4, 2, rng);
  const double l0 = ops::attention_logit<double>(Q2.col(1), 1, K2.col(0), 0);
  const double l1 = ops::attention_logit<double>(Q2.col(1), 1, K2.col(1), 1);
  const double w0 = std::exp(l0) / (std::exp(l0) + std::exp(l1));
  const Vec<double> expect = w0 * V2.col(0) + (1 - w0) * V2.col(1);
  CHECK((ops::attention<double>(Q2, K2, V2).col(1) - expect).norm() < 1e-13);
}

TEST_CASE("swiglu feed-forward") {
  Rng rng(5);
  const Mat<double> W1 = random_mat(12, 4, rng), W2 = random_mat(4, 6, rng);
  CHECK(ops::ffn<double>(Vec<double>::Zero(4), W1, W2).isZero(0.0));
  const Vec<double> h = random_mat(4, 1, rng);
  const Vec<double> y = ops::ffn<double>(h, W1, W2);
  CHECK((ops::ffn<double>(h, W1, 2.5 * W2) - 2.5 * y).norm() < 1e-13);
  for (int i = 0; i < 4; ++i) {
    double s = 0.0;
    for (int j = 0; j < 6; ++j) {
      double g = 0.0, u = 0.0;
      for (int c = 0; c < 4; ++c) {
        g += W1(j, c) * h(c);
        u += W1(6 + j, c) * h(c);
      }
      s += W2(i, j) * g * sigmoid(g) * u;
    }
    CHECK(y(i) == doctest::Approx(s).epsilon(1e-13));
  }
}

TEST_CASE("sequence loss") {
  Rng rng(6);
  IclSequence s = random_sequence(6, 5, rng);
  Mat<double> out = Mat<double>::Zero(6, 5);
  for (std::size_t j = 0; j < s.loss_positions.size(); ++j)
    out.col(s.loss_positions[j]) = s.targets.col(j);
  CHECK(sequence_loss<double>(out, s) == 0.0);

  IclSequence one = s;
  one.loss_positions = {3};
  one.targets = Mat<double>::Zero(6, 1);
  CHECK(sequence_loss<double>(Mat<double>::Ones(6, 5), one) == doctest::Approx(1.0));

  const Mat<double> y = random_mat(6, 5, rng);
  double sum = 0.0;
  for (std::size_t j = 0; j < s.loss_positions.size(); ++j)
    for (int i = 0; i < 6; ++i) {
      const double e = y(i, s.loss_positions[j]) - s.targets(i, j);
      sum += e * e;
    }
  CHECK(sequence_loss<double>(y, s) == doctest::Approx(sum / (6.0 * 3)).epsilon(1e-14));

  one.loss_positions.clear();
  CHECK_THROWS_AS(sequence_loss<double>(y, one), Error);
}

TEST_CASE("forward matches a scalar unrolled model") {
  for (auto [d, heads, layers] : {std::tuple{4, 1, 1}, std::tuple{8, 2, 2}}) {
    const auto cfg = tiny_config(d, heads, 2 * d, 6, layers);
    const auto P = random_params(cfg, 10 + d);
    Rng rng(7);
    const Mat<double> X = random_mat(6, 7, rng);
    const Mat<double> Y = Transformer<double>(cfg).forward(P, X);
    const Mat<double> Z = unrolled_forward(P, X);
    CHECK((Y - Z).cwiseAbs().maxCoeff() < 1e-12 * (1.0 + Z.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("forward is causal") {
  const ModelConfig cfg = tiny_config(16, 2, 32, 8, 2);
  const auto P = random_params(cfg, 3, 0.2).cast<float>();
  const Transformer<float> model(cfg);
  Rng rng(8);
  const Mat<float> X = random_mat(8, 12, rng).cast<float>();
  const Mat<float> Y = model.forward(P, X);

  // Perturb every position after p.
  for (int p = 0; p < 11; ++p) {
    Mat<float> X2 = X;
    X2.rightCols(11 - p) = random_mat(8, 11 - p, rng).cast<float>();
    const Mat<float> Y2 = model.forward(P, X2);
    CHECK(Y2.leftCols(p + 1) == Y.leftCols(p + 1));
  }
  // Appending tokens never changes earlier outputs.
  for (int len = 1; len < 12; ++len)
    CHECK(model.forward(P, X.leftCols(len)) == Y.leftCols(len));

  CHECK_THROWS_AS(model.forward(P, Mat<float>::Zero(8, 17)), Error);
  CHECK_THROWS_AS(model.forward(P, Mat<float>::Zero(7, 3)), Error);
}

TEST_CASE("non-finite activations report the layer") {
  const ModelConfig cfg = tiny_config(8, 2, 8, 4, 3);
  auto P = random_params(cfg, 4);
  P.block(P.layout.layers[1].w2)(0, 0) = std::numeric_limits<double>::infinity();
  try {
    Transformer<double>(cfg).forward(P, Mat<double>::Ones(4, 3));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("gradients match central finite differences") {
  const ModelConfig cfg = tiny_config(8, 2, 16, 6, 1);
  auto P = random_params(cfg, 21);
  const Transformer<double> model(cfg);
  Rng rng(9);
  const std::vector<IclSequence> batch = {random_sequence(6, 5, rng), random_sequence(6, 3, rng)};
  const std::vector<double> w = {0.7, 1.3};
  ModelParams<double> G(cfg);
  model.loss_and_gradient(P, batch, w, &G);

  const double h = 1e-5;
  double worst = 0.0;
  std::string worst_block;
  for (const auto& b : P.layout.blocks())
    for (std::size_t i = b.offset; i < b.offset + b.size(); ++i) {
      const double saved = P.values[i];
      P.values[i] = saved + h;
      const double up = model.loss_and_gradient(P, batch, w, nullptr).weighted;
      P.values[i] = saved - h;
      const double down = model.loss_and_gradient(P, batch, w, nullptr).weighted;
      P.values[i] = saved;
      const double fd = (up - down) / (2 * h);
      // Entries below 1e-7 in magnitude are dominated by difference round-off.
      const double rel = std::abs(G.values[i] - fd) / std::max({std::abs(fd), std::abs(G.values[i]), 1e-7});
      if (rel > worst) {
        worst = rel;
        worst_block = b.name;
      }
    }
  INFO("worst block " << worst_block);
  CHECK(worst < 1e-4);
}

TEST_CASE("gradient reduction contracts") {
  const ModelConfig cfg = tiny_config(8, 2, 16, 6, 2);
  const auto P = random_params(cfg, 31);
  const Transformer<double> model(cfg);
  Rng rng(10);
  const IclSequence s = random_sequence(6, 5, rng);
  const std::vector<IclSequence> one = {s}, two = {s, s};
  const auto g1 = model.gradients(P, one);
  const auto g2 = model.gradients(P, two);
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < g1.values.size(); ++i) {
    diff = std::max(diff, std::abs(g1.values[i] - g2.values[i]));
    scale = std::max(scale, std::abs(g1.values[i]));
  }
  CHECK(diff <= 1e-13 * scale);

  // Zero head and zero targets give zero loss and zero gradient.
  auto Z = P;
  Z.block(Z.layout.head_weight).setZero();
  Z.block(Z.layout.head_bias).setZero();
  IclSequence zs = s;
  zs.targets.setZero();
  const std::vector<IclSequence> zb = {zs};
  const auto gz = model.gradients(Z, zb);
  CHECK(model.loss_and_gradient(Z, zb, std::vector<double>{1.0}, nullptr).weighted == 0.0);
  for (double g : gz.values) CHECK(g == 0.0);
}

TEST_CASE("batched evaluation equals per-sequence evaluation") {
  const ModelConfig cfg = tiny_config(16, 4, 32, 8, 2);
  const auto P = random_params(cfg, 41, 0.2).cast<float>();
  const Transformer<float> model(cfg);
  Rng rng(11);
  std::vector<IclSequence> batch;
  for (int L : {5, 9, 2, 7}) batch.push_back(random_sequence(8, L, rng));
  const std::vector<double> w(4, 0.25);
  const auto all = model.loss_and_gradient(P, batch, w, nullptr);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const double single = sequence_loss<float>(model.forward(P, tokens_as<float>(batch[s])), batch[s]);
    CHECK(all.losses[s] == doctest::Approx(single).epsilon(1e-5));
  }
  // Float and double gradients agree.
  ModelParams<float> gf(cfg);
  model.loss_and_gradient(P, batch, w, &gf);
  ModelParams<double> gd(cfg);
  Transformer<double>(cfg).loss_and_gradient(P.cast<double>(), batch, w, &gd);
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < gd.values.size(); ++i) {
    diff = std::max(diff, std::abs(gf.values[i] - gd.values[i]));
    scale = std::max(scale, std::abs(gd.values[i]));
  }
  CHECK(diff < 1e-4 * scale);
}
