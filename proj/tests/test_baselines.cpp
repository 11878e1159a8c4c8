#include <cmath>
#include <set>

#include "cqcim/baselines.hpp"
#include "cqcim/errors.hpp"
#include "cqcim/synthetic.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cqcim;
using testutil::random_matrix;

namespace {

// Unbiased sample covariance, computed directly.
Matrix covariance(const Matrix& x) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x(i, j) / n;
  Matrix c(d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) c(a, b) += (x(i, a) - mean[a]) * (x(i, b) - mean[b]);
  for (auto& v : c.values()) v /= static_cast<double>(n - 1);
  return c;
}

// Data with a well-separated spectrum.
Matrix anisotropic(std::size_t n, std::size_t d, std::uint64_t seed) {
  Matrix x = random_matrix(n, d, seed);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) = x(i, j) * std::pow(0.8, j) + 0.5;
  Rng rng(seed);
  return matmul(x, random_orthonormal(d, d, rng).transposed());
}

// Cyclic Jacobi eigenvalues of a symmetric matrix, sorted descending.
std::vector<double> jacobi_eigenvalues(Matrix a) {
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

}  // namespace

TEST_CASE("PCA explained variance against a Jacobi eigensolver") {
  const Matrix x = anisotropic(100, 10, 11);
  const auto ev = jacobi_eigenvalues(covariance(x));
  const PcaModel m = pca_fit(x, 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(m.eigenvalues[i] - ev[i]) <= 1e-6);
}

TEST_CASE("PCA reconstruction never adds energy") {
  const Matrix x = anisotropic(80, 12, 12);
  for (std::size_t d : {1, 4, 8}) {
    const PcaModel m = pca_fit(x, d);
    const Matrix back = pca_reconstruct(m, pca_project(m, x));
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double in = 0.0, out = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) {
        in += (x(i, j) - m.mean[j]) * (x(i, j) - m.mean[j]);
        out += (back(i, j) - m.mean[j]) * (back(i, j) - m.mean[j]);
      }
      CHECK(out <= in + 1e-12);
    }
  }
}

TEST_CASE("PCA components are eigenvectors of the sample covariance") {
  const Matrix x = anisotropic(300, 10, 1);
  const Matrix cov = covariance(x);
  const PcaModel m = pca_fit(x, 5);
  const Matrix g = matmul_tn(m.components, m.components);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(g(i, j) - (i == j)) < 1e-9);
    std::vector<double> v(10), cv(10, 0.0);
    for (std::size_t r = 0; r < 10; ++r) v[r] = m.components(r, i);
    for (std::size_t r = 0; r < 10; ++r)
      for (std::size_t c = 0; c < 10; ++c) cv[r] += cov(r, c) * v[c];
    std::vector<double> lv(10);
    for (std::size_t r = 0; r < 10; ++r) lv[r] = m.eigenvalues[i] * v[r];
    CHECK(relative_error(cv, lv) < 1e-4);
    if (i > 0) CHECK(m.eigenvalues[i] <= m.eigenvalues[i - 1]);
    // Sign convention: first nonzero coordinate positive.
    for (double c : v)
      if (c != 0.0) {
        CHECK(c > 0.0);
        break;
      }
  }
  // A full fit captures the whole trace.
  const PcaModel full = pca_fit(x, 10);
  double trace = 0.0, sum = 0.0;
  for (std::size_t j = 0; j < 10; ++j) trace += cov(j, j);
  for (double e : full.eigenvalues) sum += e;
  CHECK(sum == doctest::Approx(trace).epsilon(1e-8));
}

TEST_CASE("PCA project and reconstruct") {
  const Matrix x = anisotropic(100, 6, 2);
  const PcaModel full = pca_fit(x, 6);
  const Matrix back = pca_reconstruct(full, pca_project(full, x));
  CHECK(relative_error(back.values(), x.values()) < 1e-8);
  const PcaModel part = pca_fit(x, 2);
  const Matrix z = pca_project(part, x);
  CHECK(z.cols() == 2);
  CHECK_THROWS_AS(pca_fit(x, 7), ParameterError);
  CHECK_THROWS_AS(pca_fit(Matrix(1, 4), 2), ParameterError);
  CHECK_THROWS_AS(pca_project(part, Matrix(2, 5)), ShapeError);
}

TEST_CASE("PCA handles rank-deficient data") {
  Matrix x = random_matrix(40, 3, 3);
  Matrix wide(40, 8);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 3; ++j) wide(i, j) = x(i, j);
  const PcaModel m = pca_fit(wide, 6);
  for (std::size_t i = 3; i < 6; ++i) CHECK(std::abs(m.eigenvalues[i]) < 1e-10);
  const Matrix g = matmul_tn(m.components, m.components);
  for (std::size_t i = 0; i < 6; ++i) CHECK(g(i, i) == doctest::Approx(1.0));
}

TEST_CASE("vanilla truncation and row normalization") {
  const Matrix x = Matrix::from_rows({{3, 4, 12}, {0, 0, 0}});
  const Matrix t = vanilla_truncate(x, 2);
  CHECK(t == Matrix::from_rows({{3, 4}, {0, 0}}));
  const Matrix n = normalize_rows(t);
  CHECK(n(0, 0) == doctest::Approx(0.6));
  CHECK(n(0, 1) == doctest::Approx(0.8));
  CHECK(n(1, 0) == 0.0);
  CHECK_THROWS_AS(vanilla_truncate(x, 4), ParameterError);
}

TEST_CASE("product quantization recovers well-separated clusters") {
  // Four tight clusters per subspace: k-means with k = 4 finds them exactly.
  Rng rng(5);
  const std::vector<double> centres = {-3.0, -1.0, 1.0, 3.0};
  Matrix x(200, 4);
  for (std::size_t i = 0; i < 200; ++i)
    for (std::size_t j = 0; j < 4; ++j) x(i, j) = centres[(i + j) % 4] + 0.01 * rng.normal();
  PqOptions o;
  o.m = 2;
  o.k = 4;
  const PqCodebook cb = pq_fit(x, o);
  const PqCodes codes = pq_encode(cb, x);
  const Matrix dec = pq_decode(cb, codes);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(dec.values()[i] - x.values()[i]) < 0.05);

  const Matrix q = random_matrix(3, 4, 6);
  const Matrix s = pq_score(cb, codes, q);
  const Matrix oracle = matmul_nt(q, dec);
  CHECK(relative_error(s.values(), oracle.values()) < 1e-12);
  const auto one = pq_score(cb, codes, q.row(1));
  for (std::size_t d = 0; d < 200; ++d) CHECK(one[d] == doctest::Approx(oracle(1, d)));

  o.m = 3;
  CHECK_THROWS_AS(pq_fit(x, o), ParameterError);
  o.m = 2;
  o.k = 300;
  CHECK_THROWS_AS(pq_fit(x, o), ParameterError);
}

TEST_CASE("product quantization is seed-deterministic and warns on duplicates") {
  const Matrix x = random_matrix(64, 8, 7);
  PqOptions o;
  o.m = 4;
  o.k = 8;
  o.seed = 3;
  const auto a = pq_fit(x, o), b = pq_fit(x, o);
  CHECK(a.centroids == b.centroids);

  Matrix dup(10, 2, 1.0);
  testutil::WarningCapture cap;
  o.m = 1;
  o.k = 4;
  const auto cb = pq_fit(dup, o);
  CHECK_FALSE(cap.messages.empty());
  CHECK(pq_encode(cb, dup).data.size() == 10);
}

TEST_CASE("k-means on two clusters lands on the cluster means") {
  Rng rng(8);
  Matrix x(100, 2);
  std::vector<double> mean_a(2, 0.0), mean_b(2, 0.0);
  for (std::size_t i = 0; i < 100; ++i) {
    const double cx = i < 50 ? -5.0 : 5.0;
    x(i, 0) = cx + 0.3 * rng.normal();
    x(i, 1) = 0.3 * rng.normal();
    auto& m = i < 50 ? mean_a : mean_b;
    for (std::size_t j = 0; j < 2; ++j) m[j] += x(i, j) / 50.0;
  }
  PqOptions o;
  o.m = 1;
  o.k = 2;
  const PqCodebook cb = pq_fit(x, o);
  const Matrix dec = pq_decode(cb, pq_encode(cb, x));
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(std::abs(dec(0, j) - mean_a[j]) <= 1e-6);
    CHECK(std::abs(dec(99, j) - mean_b[j]) <= 1e-6);
  }
}

TEST_CASE("product-quantized scores preserve the exact ranking") {
  SyntheticOptions so;
  so.documents = 256;
  so.queries = 8;
  so.dim = 32;
  so.latent_dim = 8;
  so.seed = 13;
  const auto corpus = make_clustered_corpus(so);
  PqOptions o;
  o.m = 4;
  o.k = 16;
  const PqCodebook cb = pq_fit(corpus.documents, o);
  const PqCodes codes = pq_encode(cb, corpus.documents);
  double mean = 0.0;
  for (std::size_t q = 0; q < 8; ++q) {
    const auto approx = pq_score(cb, codes, corpus.queries.row(q));
    std::vector<double> exact(256);
    for (std::size_t d = 0; d < 256; ++d) exact[d] = dot(corpus.queries.row(q), corpus.documents.row(d));
    const double rho = oracle::spearman(approx, exact);
    CHECK(rho > 0.85);
    mean += rho / 8.0;
  }
  CHECK(mean > 0.9);
}

TEST_CASE("a codebook as large as the corpus reproduces exact scores") {
  const Matrix x = random_matrix(20, 6, 15);
  PqOptions o;
  o.m = 1;
  o.k = 20;
  const PqCodebook cb = pq_fit(x, o);
  const Matrix q = random_matrix(3, 6, 16);
  const Matrix s = pq_score(cb, pq_encode(cb, x), q);
  CHECK(relative_error(s.values(), matmul_nt(q, x).values()) < 1e-12);
}

TEST_CASE("PCA reconstruction error is non-increasing in the dimension") {
  const Matrix x = anisotropic(120, 10, 17);
  double prev = 1e300;
  for (std::size_t d = 1; d <= 10; ++d) {
    const PcaModel m = pca_fit(x, d);
    const Matrix back = pca_reconstruct(m, pca_project(m, x));
    double err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) err += std::pow(back.values()[i] - x.values()[i], 2);
    CHECK(err <= prev + 1e-9);
    prev = err;
  }
}
