#include <cmath>

#include "cqcim/errors.hpp"
#include "cqcim/synthetic.hpp"
#include "cqcim/training.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cqcim;
using testutil::random_matrix;

namespace {

// Direct InfoNCE: -log softmax over cosine/tau, averaged over anchors.
double infonce_oracle(const Matrix& a, const Matrix& p, const Matrix* n, double tau) {
  auto cosine = [](std::span<const double> x, std::span<const double> y) {
    return dot(x, y) / (norm2(x) * norm2(y));
  };
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < p.rows(); ++j) z += std::exp(cosine(a.row(i), p.row(j)) / tau);
    if (n)
      for (std::size_t j = 0; j < n->rows(); ++j) z += std::exp(cosine(a.row(i), n->row(j)) / tau);
    total += -std::log(std::exp(cosine(a.row(i), p.row(i)) / tau) / z);
  }
  return total / static_cast<double>(a.rows());
}

SyntheticCorpus small_corpus(std::uint64_t seed = 0) {
  SyntheticOptions o;
  o.documents = 96;
  o.queries = 8;
  o.dim = 48;
  o.latent_dim = 8;
  o.clusters = 4;
  o.seed = seed;
  return make_clustered_corpus(o);
}

NoiseSpec d2(double sigma_g) { return NoiseSpec::for_profile(builtin_profile("D-2"), sigma_g); }

}  // namespace

TEST_CASE("contrastive loss value matches the direct formula") {
  LossConfig cfg;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Matrix a = random_matrix(6, 5, s), p = random_matrix(6, 5, s + 10);
    const Matrix n = random_matrix(6, 5, s + 20);
    CHECK(contrastive_loss(a, p, nullptr, cfg).value ==
          doctest::Approx(infonce_oracle(a, p, nullptr, 0.05)).epsilon(1e-12));
    CHECK(contrastive_loss(a, p, &n, cfg).value ==
          doctest::Approx(infonce_oracle(a, p, &n, 0.05)).epsilon(1e-12));
  }
}

TEST_CASE("contrastive loss gradients match finite differences") {
  LossConfig cfg;
  cfg.temperature = 0.5;  // keeps the curvature moderate for h = 1e-5
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix a = random_matrix(4, 5, 100 + s), p = random_matrix(4, 5, 200 + s);
    const Matrix n = random_matrix(4, 5, 300 + s);
    const auto r = contrastive_loss(a, p, &n, cfg);
    auto fa = [&](std::span<const double> v) {
      return contrastive_loss(Matrix(4, 5, {v.begin(), v.end()}), p, &n, cfg).value;
    };
    auto fp = [&](std::span<const double> v) {
      return contrastive_loss(a, Matrix(4, 5, {v.begin(), v.end()}), &n, cfg).value;
    };
    auto fn = [&](std::span<const double> v) {
      const Matrix nn(4, 5, {v.begin(), v.end()});
      return contrastive_loss(a, p, &nn, cfg).value;
    };
    CHECK(relative_error(r.grad_anchor.values(), finite_diff_grad(fa, a.values())) < 1e-4);
    CHECK(relative_error(r.grad_positive.values(), finite_diff_grad(fp, p.values())) < 1e-4);
    CHECK(relative_error(r.grad_negative->values(), finite_diff_grad(fn, n.values())) < 1e-4);
  }
}

TEST_CASE("contrastive loss at the default temperature also matches finite differences") {
  LossConfig cfg;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix a = random_matrix(3, 4, 400 + s), p = random_matrix(3, 4, 500 + s);
    const auto r = contrastive_loss(a, p, nullptr, cfg);
    auto fa = [&](std::span<const double> v) {
      return contrastive_loss(Matrix(3, 4, {v.begin(), v.end()}), p, nullptr, cfg).value;
    };
    CHECK(relative_error(r.grad_anchor.values(), finite_diff_grad(fa, a.values())) < 1e-4);
  }
}

TEST_CASE("contrastive loss input checks") {
  LossConfig cfg;
  Matrix a = random_matrix(3, 4, 1);
  const Matrix p = random_matrix(3, 4, 2);
  CHECK_THROWS_AS(contrastive_loss(a, random_matrix(2, 4, 3), nullptr, cfg), ShapeError);
  for (auto& v : a.row(1)) v = 0.0;
  CHECK_THROWS_AS(contrastive_loss(a, p, nullptr, cfg), NumericError);
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("mse loss value and gradient") {
  const Matrix o = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix r = Matrix::from_rows({{1, 3}, {1, 4}});
  const auto l = mse_loss(o, r);
  CHECK(l.value == doctest::Approx(5.0 / 4.0));
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix x = random_matrix(3, 4, 600 + s), y = random_matrix(3, 4, 700 + s);
    const auto g = mse_loss(x, y);
    auto f = [&](std::span<const double> v) {
      return mse_loss(x, Matrix(3, 4, {v.begin(), v.end()})).value;
    };
    CHECK(relative_error(g.grad.values(), finite_diff_grad(f, y.values())) < 1e-4);
  }
  CHECK_THROWS_AS(mse_loss(o, Matrix(2, 3)), ShapeError);
  LossConfig cfg;
  CHECK(joint_loss(1.0, 0.5, cfg) == 5.0);
}

TEST_CASE("dropout views") {
  const Matrix x = random_matrix(200, 50, 3);
  TrainConfig cfg;
  cfg.dropout_rate_pos = 0.0;
  Rng rng(1);
  auto v = make_views(x, cfg, rng);
  CHECK(v.positive == x);
  CHECK_FALSE(v.negative.has_value());

  cfg.dropout_rate_pos = 0.2;
  cfg.dropout_rate_neg = 0.1;
  v = make_views(x, cfg, rng);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double out = v.positive.values()[i];
    if (out == 0.0)
      ++zeros;
    else
      CHECK(out == doctest::Approx(x.values()[i] / 0.8));
  }
  CHECK(static_cast<double>(zeros) / x.size() == doctest::Approx(0.2).epsilon(0.05));
  REQUIRE(v.negative.has_value());
  CHECK(v.anchor == x);

  cfg.pair_mode = PairMode::from_file;
  CHECK_THROWS_AS(make_views(x, cfg, rng), InputError);
}

TEST_CASE("reconstruction lift pullback is the adjoint of apply") {
  Rng rng(4);
  const ReconstructionLift lift{random_orthonormal(7, 3, rng), std::vector<double>(7, 0.3), 1.7};
  const Matrix v = random_matrix(2, 3, 5), g = random_matrix(2, 7, 6);
  auto f = [&](std::span<const double> x) {
    return dot(lift.apply(Matrix(2, 3, {x.begin(), x.end()})).values(), g.values());
  };
  CHECK(relative_error(lift.pullback(g).values(), finite_diff_grad(f, v.values())) < 1e-6);
}

TEST_CASE("PCA initialization and supplied fits") {
  const auto c = small_corpus();
  InitOptions opts;
  opts.dim = 8;
  const auto s = init_state(c.documents, d2(0.1), opts);
  CHECK(s.model.head.output_dim() == 8);
  CHECK(std::holds_alternative<N2uqQuantizer>(s.model.quantizer));
  // The projected corpus is centred.
  const Matrix z = s.model.project(c.documents);
  for (std::size_t j = 0; j < 8; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) m += z(i, j);
    CHECK(std::abs(m / z.rows()) < 1e-9);
  }
  const PcaModel pca = pca_fit(c.documents, 8);
  opts.pca = &pca;
  const auto reused = init_state(c.documents, d2(0.1), opts);
  CHECK(reused.model.head.weight() == s.model.head.weight());
  const PcaModel wrong = pca_fit(c.documents, 4);
  opts.pca = &wrong;
  CHECK_THROWS_AS(init_state(c.documents, d2(0.1), opts), ShapeError);
  opts.pca = nullptr;
  opts.dim = 0;
  CHECK_THROWS_AS(init_state(c.documents, d2(0.1), opts), ParameterError);
  opts.dim = 8;
  opts.learned_quantizer = false;
  CHECK(std::holds_alternative<FixedQuantizer>(init_state(c.documents, d2(0.1), opts).model.quantizer));
}

TEST_CASE("first Adam step moves each parameter by the learning rate") {
  const auto c = small_corpus();
  InitOptions opts;
  opts.dim = 4;
  auto s = init_state(c.documents, d2(0.1), opts);
  const Matrix w0 = s.model.head.weight();
  ParameterGrads g{random_matrix(w0.rows(), w0.cols(), 7), std::vector<double>(4, -2.0),
                   std::vector<double>(3, 0.0)};
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  adam_step(s, g, cfg);
  CHECK(s.step == 1);
  // Bias-corrected first step: -lr * g / (|g| + eps).
  for (std::size_t i = 0; i < w0.size(); ++i) {
    const double gi = g.weight.values()[i];
    CHECK(s.model.head.weight().values()[i] ==
          doctest::Approx(w0.values()[i] - 0.01 * gi / (std::abs(gi) + 1e-8)).epsilon(1e-12));
  }
  g.weight.values()[0] = std::nan("");
  CHECK_THROWS_AS(adam_step(s, g, cfg), NumericError);
}

TEST_CASE("training lowers the loss and is reproducible") {
  const auto c = small_corpus(3);
  InitOptions opts;
  opts.dim = 8;
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.sigma_g = 0.2;
  auto a = init_state(c.documents, d2(0.0), opts);
  auto b = a;
  const auto ra = train(c.documents, a, cfg);
  const auto rb = train(c.documents, b, cfg);
  CHECK(ra.epoch_loss.size() == 6);
  CHECK(ra.epoch_loss == rb.epoch_loss);
  CHECK(a.model.head.weight() == b.model.head.weight());
  CHECK(ra.epoch_loss.back() < ra.epoch_loss.front());
  CHECK(a.model.noise.sigma_g == 0.2);
  for (std::size_t e = 0; e < 6; ++e)
    CHECK(ra.epoch_loss[e] ==
          doctest::Approx(ra.epoch_contrastive[e] + 8.0 * ra.epoch_reconstruction[e]));
  const auto& t = std::get<N2uqQuantizer>(a.model.quantizer).thresholds();
  CHECK(std::is_sorted(t.begin(), t.end()));
  CHECK(reconstruction_error(a, c.documents) > 0.0);
}

TEST_CASE("training configuration checks") {
  const auto c = small_corpus();
  InitOptions opts;
  opts.dim = 4;
  auto s = init_state(c.documents, d2(0.1), opts);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(c.documents, s, cfg), ParameterError);
  cfg = {};
  cfg.dropout_rate_pos = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = {};
  cfg.pair_mode = PairMode::from_file;
  CHECK_THROWS_AS(train(c.documents, s, cfg), InputError);
  CHECK_THROWS_AS(train(random_matrix(4, 5, 1), s, TrainConfig{}), ShapeError);
}

TEST_CASE("paired views from file drive training") {
  const auto c = small_corpus(5);
  InitOptions opts;
  opts.dim = 4;
  auto s = init_state(c.documents, d2(0.1), opts);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.pair_mode = PairMode::from_file;
  PairedViews pv{c.documents, c.documents, std::nullopt};
  const auto r = train(c.documents, s, cfg, &pv);
  CHECK(r.epoch_loss.size() == 2);
  pv.positive = random_matrix(3, 48, 1);
  Rng rng(1);
  CHECK_THROWS_AS(make_views(c.documents, cfg, rng, &pv), InputError);
}

TEST_CASE("learned thresholds balance the code histogram better than fixed ones") {
  auto entropy = [](const CodeMatrix& c) {
    std::vector<double> h(4, 0.0);
    for (auto v : c.values()) h[v] += 1.0 / static_cast<double>(c.values().size());
    double e = 0.0;
    for (double p : h)
      if (p > 0.0) e -= p * std::log2(p);
    return e;
  };
  // Skewed (log-normal) features, 25-dim shaped output.
  Rng rng(5);
  Matrix x(512, 64);
  for (auto& v : x.values()) v = std::exp(rng.normal());
  x = normalize_rows(x);
  InitOptions opts;
  opts.dim = 25;
  opts.seed = 1;
  auto s = init_state(x, d2(0.1), opts);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 1;
  train(x, s, cfg);
  const Matrix z = s.model.project(x);
  const auto& learned = std::get<N2uqQuantizer>(s.model.quantizer);
  const auto fixed = N2uqQuantizer::uniform(4, learned.range_lo(), learned.range_hi());
  CHECK(entropy(learned.forward(z).codes) > entropy(fixed.forward(z).codes));
}

TEST_CASE("contrastive loss closed form for orthogonal pairs") {
  // Each anchor matches its positive exactly and is orthogonal to the other.
  const Matrix a = Matrix::from_rows({{1, 0}, {0, 1}});
  LossConfig cfg;
  cfg.temperature = 1.0;
  const auto r = contrastive_loss(a, a, nullptr, cfg);
  CHECK(r.value == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-12));
  CHECK(r.value == doctest::Approx(0.3133).epsilon(1e-4));
}

TEST_CASE("default reconstruction weight") {
  const LossConfig cfg;
  CHECK(cfg.lambda_mse >= 5.0);
  CHECK(cfg.lambda_mse <= 10.0);
}

TEST_CASE("dropout mask counts follow the binomial law") {
  const Matrix x(1, 384, 1.0);
  TrainConfig cfg;
  Rng rng(9);
  const double n = 384.0, p = cfg.dropout_rate_pos, trials = 1000.0;
  double sum = 0.0, sumsq = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const auto v = make_views(x, cfg, rng);
    double zeros = 0.0;
    for (double e : v.positive.values()) zeros += e == 0.0;
    sum += zeros;
    sumsq += zeros * zeros;
  }
  const double mean = sum / trials;
  const double var = sumsq / trials - mean * mean;
  CHECK(std::abs(mean - n * p) <= 3.0 * std::sqrt(n * p * (1 - p) / trials));
  CHECK(var == doctest::Approx(n * p * (1 - p)).epsilon(0.15));
}

TEST_CASE("thresholds stay strictly increasing under random Adam steps") {
  const auto c = small_corpus(2);
  InitOptions opts;
  opts.dim = 4;
  auto s = init_state(c.documents, d2(0.1), opts);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  Rng rng(12);
  for (int step = 0; step < 100; ++step) {
    ParameterGrads g{Matrix(48, 4), std::vector<double>(4, 0.0), std::vector<double>(3)};
    for (auto& v : g.thresholds) v = 10.0 * rng.normal();
    adam_step(s, g, cfg);
    const auto& t = std::get<N2uqQuantizer>(s.model.quantizer).thresholds();
    for (std::size_t k = 1; k < t.size(); ++k) CHECK(t[k] > t[k - 1]);
  }
}

TEST_CASE("training loss settles on a clustered corpus") {
  SyntheticOptions o;
  o.documents = 512;
  o.dim = 384;
  o.clusters = 8;
  o.seed = 4;
  const auto c = make_clustered_corpus(o);
  InitOptions opts;
  opts.dim = 32;
  auto s = init_state(c.documents, d2(0.1), opts);
  TrainConfig cfg;
  cfg.epochs = 20;
  const auto r = train(c.documents, s, cfg);
  // Three-epoch moving average from epoch 5 onward.
  std::vector<double> smooth;
  for (std::size_t e = 5; e + 2 < r.epoch_loss.size(); ++e)
    smooth.push_back((r.epoch_loss[e] + r.epoch_loss[e + 1] + r.epoch_loss[e + 2]) / 3.0);
  for (std::size_t i = 1; i < smooth.size(); ++i) CHECK(smooth[i] <= smooth[i - 1] * (1.0 + 1e-3));
}

TEST_CASE("the reconstruction term lowers reconstruction error") {
  const auto c = small_corpus(6);
  InitOptions opts;
  opts.dim = 8;
  auto with = init_state(c.documents, d2(0.1), opts);
  auto without = with;
  TrainConfig cfg;
  cfg.epochs = 15;
  train(c.documents, with, cfg);
  cfg.loss.lambda_mse = 0.0;
  train(c.documents, without, cfg);
  CHECK(reconstruction_error(with, c.documents) < reconstruction_error(without, c.documents));
}
