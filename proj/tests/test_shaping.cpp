#include <algorithm>
#include <cmath>

#include "cqcim/errors.hpp"
#include "cqcim/shaping.hpp"
#include "cqcim/training.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cqcim;
using testutil::random_matrix;

namespace {

NoiseSpec d2_noise(double sigma_g) { return NoiseSpec::for_profile(builtin_profile("D-2"), sigma_g); }

// Uniform point in [lo, hi] at least `margin` away from every breakpoint.
double interior_point(const N2uqQuantizer& q, Rng& rng, double margin) {
  for (;;) {
    const double x = q.range_lo() + (q.range_hi() - q.range_lo()) * rng.uniform();
    bool ok = x - q.range_lo() > margin && q.range_hi() - x > margin;
    for (double t : q.thresholds()) ok = ok && std::abs(x - t) > margin;
    if (ok) return x;
  }
}

}  // namespace

TEST_CASE("compression head forward and shapes") {
  const Matrix w = Matrix::from_rows({{1, 0}, {0, 2}, {1, 1}});
  const CompressionHead head(w, {0.5, -0.5});
  const Matrix y = head.forward(Matrix::from_rows({{1, 2, 3}}));
  CHECK(y(0, 0) == 4.5);
  CHECK(y(0, 1) == 6.5);
  CHECK_THROWS_AS(head.forward(Matrix(1, 2)), ShapeError);
  CHECK_THROWS_AS(CompressionHead(w, {1.0}), ShapeError);
  CHECK_THROWS_AS(CompressionHead(Matrix(2, 3), {0, 0, 0}), ParameterError);
  CHECK_THROWS_AS(head.backward(LinearCache{}, Matrix(1, 2)), StateError);
}

TEST_CASE("compression head backward matches finite differences") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = random_matrix(4, 6, 100 + trial);
    const Matrix gy = random_matrix(4, 3, 200 + trial);
    const CompressionHead head = CompressionHead::random(6, 3, rng);
    LinearCache cache;
    head.forward(x, &cache);
    const auto g = head.backward(cache, gy);

    auto loss_w = [&](std::span<const double> wv) {
      const CompressionHead h(Matrix(6, 3, std::vector<double>(wv.begin(), wv.end())), head.bias());
      const Matrix y = h.forward(x);
      return dot(y.values(), gy.values());
    };
    CHECK(relative_error(g.weight.values(), finite_diff_grad(loss_w, head.weight().values())) < 1e-4);

    auto loss_b = [&](std::span<const double> bv) {
      const CompressionHead h(head.weight(), std::vector<double>(bv.begin(), bv.end()));
      return dot(h.forward(x).values(), gy.values());
    };
    CHECK(relative_error(g.bias, finite_diff_grad(loss_b, head.bias())) < 1e-4);

    auto loss_x = [&](std::span<const double> xv) {
      const Matrix xi(4, 6, std::vector<double>(xv.begin(), xv.end()));
      return dot(head.forward(xi).values(), gy.values());
    };
    CHECK(relative_error(g.input.values(), finite_diff_grad(loss_x, x.values())) < 1e-4);
  }
}

TEST_CASE("find_level boundary convention") {
  const std::vector<double> t = {0.25, 0.5, 0.75};
  CHECK(find_level(0.0, t) == 0);
  CHECK(find_level(0.1, t) == 0);
  CHECK(find_level(0.2499, t) == 0);
  CHECK(find_level(0.25, t) == 1);
  CHECK(find_level(0.6, t) == 2);
  CHECK(find_level(0.75, t) == 3);
  CHECK(find_level(1.0, t) == 3);
}

TEST_CASE("assign_levels normalizes per batch") {
  const Matrix emb = Matrix::from_rows({{-4, -2.5}, {0, 4}});
  // min -4, max 4 -> normalized 0, 0.1875, 0.5, 1
  const auto lv = assign_levels(emb, d2_noise(0.1));
  CHECK(lv == std::vector<std::size_t>{0, 0, 2, 3});
  const auto flat = assign_levels(Matrix(2, 2, 3.0), d2_noise(0.1));
  CHECK(flat == std::vector<std::size_t>{0, 0, 0, 0});
}

TEST_CASE("noise spec validation") {
  NoiseSpec s = d2_noise(0.1);
  CHECK(NoiseSpec::default_thresholds(4) == std::vector<double>{0.25, 0.5, 0.75});
  s.lookup_thresholds = {0.5};
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = d2_noise(0.1);
  s.sigma_g = -1;
  CHECK_THROWS_AS(s.validate(), ParameterError);
}

TEST_CASE("inject_noise with sigma_g = 0 is a bit-exact copy") {
  const Matrix emb = random_matrix(20, 16, 3);
  Rng rng(4);
  CHECK(inject_noise(emb, d2_noise(0.0), rng) == emb);
}

TEST_CASE("injected noise has the per-level deviation of each profile") {
  for (const auto& profile : builtin_profiles()) {
    const std::size_t k = profile.levels;
    // Row-major values at the centre of each level band, plus the batch
    // extremes 0 and 1 to pin the min-max normalization.
    const std::size_t per_level = 100000;
    Matrix emb(1, k * per_level + 2);
    emb(0, 0) = 0.0;
    emb(0, 1) = 1.0;
    for (std::size_t i = 0; i < k * per_level; ++i)
      emb(0, i + 2) = (static_cast<double>(i % k) + 0.5) / static_cast<double>(k);
    const NoiseSpec spec = NoiseSpec::for_profile(profile, 1.0);
    Rng rng(9);
    const Matrix noisy = inject_noise(emb, spec, rng);
    std::vector<double> sq(k, 0.0);
    for (std::size_t i = 0; i < k * per_level; ++i) {
      const double d = noisy(0, i + 2) - emb(0, i + 2);
      sq[i % k] += d * d;
    }
    for (std::size_t l = 0; l < k; ++l) {
      const double sd = std::sqrt(sq[l] / static_cast<double>(per_level));
      CHECK(std::abs(sd - profile.sigma_v[l]) <= 0.1 * profile.sigma_v[l]);
    }
  }
}

TEST_CASE("the global factor scales the injected deviation") {
  Matrix emb(1, 100002);
  emb(0, 0) = 0.0;
  emb(0, 1) = 1.0;
  for (std::size_t i = 2; i < emb.cols(); ++i) emb(0, i) = 0.1;  // level 0
  auto spread = [&](double sigma_g) {
    Rng rng(4);
    const Matrix n = inject_noise(emb, d2_noise(sigma_g), rng);
    double sq = 0.0;
    for (std::size_t i = 2; i < emb.cols(); ++i) sq += (n(0, i) - 0.1) * (n(0, i) - 0.1);
    return std::sqrt(sq / 100000.0);
  };
  const double full = spread(1.0);
  CHECK(full == doctest::Approx(0.0067).epsilon(0.1));
  CHECK(spread(0.1) / full == doctest::Approx(0.1).epsilon(0.1));
}

TEST_CASE("precision parsing") {
  CHECK(parse_precision("1bit") == Precision::binary_1bit);
  CHECK(parse_precision("1.58bit") == Precision::ternary_1p58bit);
  CHECK(parse_precision("2bit") == Precision::uniform_2bit);
  CHECK(parse_precision("int4") == Precision::uniform_int4);
  CHECK_THROWS_AS(parse_precision("3bit"), UsageError);
  CHECK(level_count(Precision::uniform_int4) == 16);
  CHECK(to_string(Precision::ternary_1p58bit) == "1.58bit");
}

TEST_CASE("N2UQ thresholds are the code boundaries") {
  const N2uqQuantizer q(4, -1.0, 2.0, {-0.5, 0.1, 1.2});
  CHECK(q.code(-5.0) == 0);
  CHECK(q.code(-0.5) == 1);
  CHECK(q.code(0.0999) == 1);
  CHECK(q.code(0.1) == 2);
  CHECK(q.code(1.2) == 3);
  CHECK(q.code(9.0) == 3);
  CHECK(q.warp(-1.0) == 0.0);
  CHECK(q.warp(-0.5) == doctest::Approx(0.5));
  CHECK(q.warp(1.2) == doctest::Approx(2.5));
  CHECK(q.warp(2.0) == 3.0);
  CHECK(q.out_levels() == std::vector<double>{0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0});

  // The rounded warp agrees with the threshold count away from ties.
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double x = -1.5 + 4.0 * rng.uniform();
    const double g = std::clamp(q.warp(x), 0.0, 3.0);
    CHECK(q.code(x) == static_cast<int>(std::floor(g + 0.5)));
  }
}

TEST_CASE("N2UQ construction and re-projection") {
  CHECK_THROWS_AS(N2uqQuantizer(1, 0, 1, {}), ParameterError);
  CHECK_THROWS_AS(N2uqQuantizer(4, 1, 0, {0.2, 0.5, 0.7}), ParameterError);
  CHECK_THROWS_AS(N2uqQuantizer(4, 0, 1, {0.5, 0.2, 0.7}), ParameterError);
  CHECK_THROWS_AS(N2uqQuantizer(4, 0, 1, {0.2, 0.5}), ParameterError);

  N2uqQuantizer q = N2uqQuantizer::uniform(4, 0.0, 1.0);
  CHECK(q.thresholds()[1] == doctest::Approx(0.5));
  const std::vector<double> messy = {0.9, -3.0, 0.4};
  q.set_thresholds(messy);
  const auto& t = q.thresholds();
  CHECK(t[0] > q.range_lo());
  CHECK(t[0] < t[1]);
  CHECK(t[1] < t[2]);
  CHECK(t[2] < q.range_hi());
  const std::vector<double> nan = {0.1, std::nan(""), 0.3};
  CHECK_THROWS_AS(q.set_thresholds(nan), NumericError);
}

TEST_CASE("N2UQ calibration uses the 1st/99th percentiles") {
  Matrix batch(1, 101);
  for (std::size_t i = 0; i <= 100; ++i) batch(0, i) = static_cast<double>(i);
  const auto q = N2uqQuantizer::calibrate(batch, 4);
  CHECK(q.range_lo() == doctest::Approx(1.0));
  CHECK(q.range_hi() == doctest::Approx(99.0));
  // t_1 sits where the uniform warp reaches 0.5: lo + (0.5 / 3) (hi - lo).
  CHECK(q.thresholds()[0] == doctest::Approx(1.0 + 98.0 / 6.0));
}

TEST_CASE("N2UQ forward produces only output levels, monotone in x") {
  const auto q = N2uqQuantizer::uniform(4, -1.0, 1.0);
  const Matrix x = random_matrix(30, 30, 5);
  const auto r = q.forward(x);
  const auto lv = q.out_levels();
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(r.codes.values()[i] < 4);
    CHECK(r.values.values()[i] == lv[r.codes.values()[i]]);
  }
  std::vector<double> xs(x.values().begin(), x.values().end());
  std::sort(xs.begin(), xs.end());
  for (std::size_t i = 1; i < xs.size(); ++i) CHECK(q.code(xs[i - 1]) <= q.code(xs[i]));
}

TEST_CASE("N2UQ backward matches finite differences of the surrogate") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const double lo = -1.0 - rng.uniform(), hi = 1.0 + rng.uniform();
    std::vector<double> t = {lo + 0.2 * (hi - lo), lo + 0.45 * (hi - lo), lo + 0.8 * (hi - lo)};
    const N2uqQuantizer q(4, lo, hi, t);
    Matrix x(3, 4);
    for (auto& v : x.values()) v = interior_point(q, rng, 1e-3);
    x(0, 0) = hi + 0.5;  // outside the range: zero gradient
    const Matrix gy = random_matrix(3, 4, 300 + trial);
    N2uqCache cache;
    q.forward(x, &cache);
    const auto g = q.backward(cache, gy);

    auto f_x = [&](std::span<const double> xv) {
      double s = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) s += gy.values()[i] * q.surrogate(xv[i]);
      return s;
    };
    CHECK(relative_error(g.input.values(), finite_diff_grad(f_x, x.values())) < 1e-4);
    CHECK(g.input(0, 0) == 0.0);

    auto f_t = [&](std::span<const double> tv) {
      const N2uqQuantizer qt(4, lo, hi, std::vector<double>(tv.begin(), tv.end()));
      return dot(qt.surrogate_forward(x).values(), gy.values());
    };
    CHECK(relative_error(g.thresholds, finite_diff_grad(f_t, t)) < 1e-4);
  }
}

TEST_CASE("raising a threshold lowers the surrogate on the segment above it") {
  const N2uqQuantizer q(4, 0.0, 1.0, {0.2, 0.5, 0.8});
  const Matrix x = Matrix::from_rows({{0.3, 0.4, 0.45}});
  N2uqCache cache;
  q.forward(x, &cache);
  const auto g = q.backward(cache, Matrix(1, 3, 1.0));
  CHECK(g.thresholds[0] < 0.0);
  const auto zero = q.backward(cache, Matrix(1, 3, 0.0));
  CHECK(zero.thresholds == std::vector<double>{0.0, 0.0, 0.0});
  CHECK_THROWS_AS(q.backward(N2uqCache{}, Matrix(1, 3)), StateError);
}

TEST_CASE("fixed quantizer codebooks") {
  const FixedQuantizer bin(Precision::binary_1bit, 1.0);
  auto r = bin.forward(Matrix::from_rows({{-0.2, 0.7, 0.0}}));
  CHECK(r.values(0, 0) == -1.0);
  CHECK(r.values(0, 1) == 1.0);
  CHECK(r.values(0, 2) == 1.0);

  const FixedQuantizer ter(Precision::ternary_1p58bit, 1.0);
  r = ter.forward(Matrix::from_rows({{-0.8, 0.1, 0.9, 0.49, -0.5}}));
  CHECK(r.values(0, 0) == -1.0);
  CHECK(r.values(0, 1) == 0.0);
  CHECK(r.values(0, 2) == 1.0);
  CHECK(r.values(0, 3) == 0.0);
  CHECK(r.values(0, 4) == 0.0);

  const FixedQuantizer two(Precision::uniform_2bit, 3.0);
  CHECK(two.codebook() == std::vector<double>{-3.0, -1.0, 1.0, 3.0});
  CHECK_THROWS_AS(FixedQuantizer(Precision::uniform_2bit, 0.0), ParameterError);

  // Codebook entries are fixed points.
  for (auto mode : {Precision::binary_1bit, Precision::ternary_1p58bit, Precision::uniform_2bit,
                    Precision::uniform_int4}) {
    const FixedQuantizer fq(mode, 0.7);
    const auto cb = fq.codebook();
    for (std::size_t c = 0; c < cb.size(); ++c) CHECK(fq.code(cb[c]) == c);
  }
}

TEST_CASE("int4 round-trip error stays within half a step") {
  const double s = 1.3;
  const FixedQuantizer q(Precision::uniform_int4, s);
  const double half_step = s / 15.0;  // step is 2s/15
  const auto cb = q.codebook();
  for (int i = 0; i <= 20000; ++i) {
    const double x = -s + 2.0 * s * i / 20000.0;
    CHECK(std::abs(cb[q.code(x)] - x) <= half_step + 1e-15);
  }
}

TEST_CASE("fixed quantizer calibration and straight-through backward") {
  const Matrix x = Matrix::from_rows({{-2, 1, 0.5, -0.5}});
  CHECK(FixedQuantizer::calibrate(Precision::binary_1bit, x).scale() == doctest::Approx(1.0));
  const FixedQuantizer q(Precision::uniform_2bit, 1.0);
  FixedCache cache;
  q.forward(x, &cache);
  const Matrix g = q.backward(cache, Matrix(1, 4, 2.0));
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == 2.0);
  CHECK(g(0, 2) == 2.0);
  CHECK_THROWS_AS(q.backward(FixedCache{}, Matrix(1, 4)), StateError);
}

TEST_CASE("pipeline backward matches finite differences of its surrogate") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = random_matrix(5, 8, 400 + trial);
    CompressionHead head = CompressionHead::random(8, 4, rng);
    const Matrix z = head.forward(x);
    auto n2 = N2uqQuantizer::calibrate(z, 4);
    const ShapingModel model{head, n2, d2_noise(0.1)};
    // Skip instances where some projection sits within h of a breakpoint.
    bool near = false;
    for (double v : z.values()) {
      near |= std::abs(v - n2.range_lo()) < 1e-3 || std::abs(v - n2.range_hi()) < 1e-3;
      for (double t : n2.thresholds()) near |= std::abs(v - t) < 1e-3;
    }
    if (near) continue;
    const Matrix gy = random_matrix(5, 4, 500 + trial);
    PipelineCache cache;
    model.forward(x, nullptr, &cache);
    const auto g = model.backward(cache, gy);
    auto f_w = [&](std::span<const double> wv) {
      ShapingModel m = model;
      m.head = CompressionHead(Matrix(8, 4, std::vector<double>(wv.begin(), wv.end())), head.bias());
      return dot(m.surrogate_forward(x).values(), gy.values());
    };
    CHECK(relative_error(g.weight.values(), finite_diff_grad(f_w, head.weight().values())) < 1e-4);
  }
}

TEST_CASE("pipeline outputs and logical levels") {
  Rng rng(3);
  const Matrix x = random_matrix(10, 8, 1);
  CompressionHead head = CompressionHead::random(8, 4, rng);
  const ShapingModel model{head, N2uqQuantizer::calibrate(head.forward(x), 4), d2_noise(0.1)};
  const auto out = model.shape(x);
  const auto levels = logical_levels(model.quantizer);
  REQUIRE(levels.size() == 4);
  CHECK(levels[0] == -1.0);
  CHECK(levels[1] == doctest::Approx(-1.0 / 3.0));
  CHECK(levels[2] == doctest::Approx(1.0 / 3.0));
  CHECK(levels[3] == 1.0);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    CHECK(out.values.values()[i] == levels[out.codes.values()[i]]);
  CHECK(model.project(x) == head.forward(x));

  // Noise changes codes only through the noisy pre-activation.
  Rng a(5), b(5);
  CHECK(model.forward(x, &a).codes == model.forward(x, &b).codes);
}

TEST_CASE("reconstruction MSE through the pipeline matches finite differences") {
  Rng rng(31);
  int checked = 0;
  for (int trial = 0; trial < 40 && checked < 20; ++trial) {
    const Matrix x = random_matrix(4, 6, 800 + trial);
    const Matrix target = random_matrix(4, 3, 900 + trial);
    const CompressionHead head = CompressionHead::random(6, 3, rng);
    const Matrix z = head.forward(x);
    const auto n2 = N2uqQuantizer::calibrate(z, 4);
    bool near = false;
    for (double v : z.values()) {
      near |= std::abs(v - n2.range_lo()) < 1e-3 || std::abs(v - n2.range_hi()) < 1e-3;
      for (double t : n2.thresholds()) near |= std::abs(v - t) < 1e-3;
    }
    if (near) continue;
    ++checked;
    const ShapingModel model{head, n2, d2_noise(0.1)};
    PipelineCache cache;
    model.forward(x, nullptr, &cache);
    const auto mse = mse_loss(target, model.surrogate_forward(x));
    const auto g = model.backward(cache, mse.grad);
    auto f = [&](std::span<const double> bv) {
      ShapingModel m = model;
      m.head = CompressionHead(head.weight(), {bv.begin(), bv.end()});
      return mse_loss(target, m.surrogate_forward(x)).value;
    };
    CHECK(relative_error(g.bias, finite_diff_grad(f, head.bias())) < 1e-4);
  }
  CHECK(checked == 20);
}

TEST_CASE("shaping is idempotent on its own dequantized output") {
  const Matrix x = random_matrix(30, 5, 41);
  const CompressionHead identity(Matrix::identity(5), std::vector<double>(5, 0.0));
  for (const Quantizer& q : {Quantizer(N2uqQuantizer::uniform(4, -1.0, 1.0)),
                             Quantizer(FixedQuantizer(Precision::ternary_1p58bit, 1.0)),
                             Quantizer(FixedQuantizer(Precision::uniform_int4, 1.0))}) {
    const ShapingModel model{identity, q, d2_noise(0.1)};
    const auto once = model.shape(x);
    CHECK(model.shape(once.values).codes == once.codes);
  }
}

TEST_CASE("compression head forward against the triple loop") {
  Rng rng(2);
  const CompressionHead head = CompressionHead::random(7, 3, rng);
  const Matrix x = random_matrix(5, 7, 3);
  const Matrix y = head.forward(x);
  const Matrix ref = testutil::naive_matmul(x, head.weight());
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(y(i, j) - ref(i, j) - head.bias()[j]) <= 1e-12);
}
