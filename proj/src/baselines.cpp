#include "cqcim/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cqcim/errors.hpp"

namespace cqcim {

namespace {

void orthogonalize(std::vector<double>& v, const Matrix& basis, std::size_t count) {
  const std::size_t dim = v.size();
  for (std::size_t p = 0; p < count; ++p) {
    double proj = 0.0;
    for (std::size_t r = 0; r < dim; ++r) proj += basis(r, p) * v[r];
    for (std::size_t r = 0; r < dim; ++r) v[r] -= proj * basis(r, p);
  }
}

void normalize_sign(std::vector<double>& v) {
  double biggest = 0.0;
  for (double x : v) biggest = std::max(biggest, std::abs(x));
  for (double x : v) {
    if (std::abs(x) > 1e-12 * biggest) {
      if (x < 0.0)
        for (auto& y : v) y = -y;
      return;
    }
  }
}

}  // namespace

PcaModel pca_fit(const Matrix& corpus, std::size_t d, const PcaOptions& opts) {
  const std::size_t n = corpus.rows();
  const std::size_t dim = corpus.cols();
  if (d > dim) {
    std::ostringstream msg;
    msg << "pca_fit: requested " << d << " components from " << dim << "-dim data";
    throw ParameterError(msg.str());
  }
  if (n < d || n == 0) throw ParameterError("pca_fit: need at least d rows");

  PcaModel model{std::vector<double>(dim, 0.0), Matrix(dim, d), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) model.mean[j] += corpus(i, j);
  for (auto& m : model.mean) m /= static_cast<double>(n);

  Matrix centered = corpus;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) centered(i, j) -= model.mean[j];
  Matrix cov = matmul_tn(centered, centered);
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  double trace = 0.0;
  for (auto& c : cov.values()) c /= denom;
  for (std::size_t j = 0; j < dim; ++j) trace += cov(j, j);
  const double zero_floor = 1e-14 * std::max(trace, std::numeric_limits<double>::min());

  // Eigenvalue changes are measured against the leading eigenvalue; inside a
  // nearly degenerate tail the quotient creeps too slowly for a per-component
  // relative test.
  double spectral_scale = 0.0;
  Rng rng(0x9CA5EEDULL);
  std::vector<double> v(dim), w(dim);
  for (std::size_t c = 0; c < d; ++c) {
    for (auto& x : v) x = rng.normal();
    orthogonalize(v, model.components, c);
    double vn = norm2(v);
    for (auto& x : v) x /= vn;

    double lambda = 0.0;
    bool converged = false;
    for (std::size_t it = 0; it < opts.max_iterations; ++it) {
      // cov is symmetric, so w = cov v accumulates rows scaled by v.
      std::fill(w.begin(), w.end(), 0.0);
      for (std::size_t k = 0; k < dim; ++k) {
        const auto row = cov.row(k);
        const double vk = v[k];
        for (std::size_t r = 0; r < dim; ++r) w[r] += vk * row[r];
      }
      orthogonalize(w, model.components, c);
      const double next_lambda = dot(v, w);
      const double wn = norm2(w);
      if (wn <= zero_floor) {
        // Remaining spectrum is numerically zero; any orthonormal completion works.
        lambda = 0.0;
        converged = true;
        break;
      }
      double step = 0.0;
      for (std::size_t r = 0; r < dim; ++r) {
        const double nv = w[r] / wn;
        step += (nv - v[r]) * (nv - v[r]);
        v[r] = nv;
      }
      const bool rq_settled =
          it > 0 && std::abs(next_lambda - lambda) <=
                        opts.tolerance * std::max({spectral_scale, std::abs(next_lambda), zero_floor});
      lambda = next_lambda;
      if (rq_settled || std::sqrt(step) <= opts.tolerance) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      std::ostringstream msg;
      msg << "pca_fit: component " << c << " did not converge in " << opts.max_iterations
          << " iterations";
      throw NumericError(msg.str());
    }
    // Final re-orthonormalization against earlier components.
    orthogonalize(v, model.components, c);
    vn = norm2(v);
    for (auto& x : v) x /= vn;
    normalize_sign(v);
    for (std::size_t r = 0; r < dim; ++r) model.components(r, c) = v[r];
    model.eigenvalues[c] = std::max(lambda, 0.0);
    if (c == 0) spectral_scale = model.eigenvalues[0];

    // Deflate: cov -= lambda v v^T
    for (std::size_t r = 0; r < dim; ++r) {
      auto row = cov.row(r);
      const double lv = lambda * v[r];
      for (std::size_t k = 0; k < dim; ++k) row[k] -= lv * v[k];
    }
  }
  return model;
}

Matrix pca_project(const PcaModel& model, const Matrix& x) {
  if (x.cols() != model.input_dim()) throw ShapeError("pca_project: dimension mismatch");
  Matrix centered = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = centered.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] -= model.mean[j];
  }
  return matmul(centered, model.components);
}

Matrix pca_reconstruct(const PcaModel& model, const Matrix& coords) {
  if (coords.cols() != model.output_dim()) throw ShapeError("pca_reconstruct: dimension mismatch");
  Matrix out = matmul_nt(coords, model.components);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += model.mean[j];
  }
  return out;
}

Matrix vanilla_truncate(const Matrix& x, std::size_t d) {
  if (d > x.cols()) throw ParameterError("vanilla_truncate: d exceeds input dimension");
  Matrix out(x.rows(), d);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto src = x.row(i);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(d), out.row(i).begin());
  }
  return out;
}

Matrix normalize_rows(const Matrix& x) {
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double n = norm2(r);
    if (n > 0.0)
      for (auto& v : r) v /= n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// PQ

namespace {

double sq_dist(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::size_t nearest(const double* x, const std::vector<double>& centroids, std::size_t k,
                    std::size_t dim, double* best_dist = nullptr) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const double dd = sq_dist(x, centroids.data() + c * dim, dim);
    if (dd < bd) {
      bd = dd;
      best = c;
    }
  }
  if (best_dist) *best_dist = bd;
  return best;
}

// Returns true if seeding had to duplicate a point.
bool kmeans(const std::vector<double>& data, std::size_t n, std::size_t dim, std::size_t k,
            std::size_t iterations, Rng rng, std::vector<double>& centroids) {
  centroids.assign(k * dim, 0.0);
  bool degenerate = false;
  // k-means++ seeding.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.below(n);
  std::copy_n(data.data() + first * dim, dim, centroids.data());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(data.data() + i * dim, centroids.data() + (c - 1) * dim, dim));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      degenerate = true;
      pick = rng.below(n);
    } else {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        target -= d2[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
      if (d2[pick] <= 0.0) {
        for (std::size_t i = n; i-- > 0;)
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
      }
    }
    std::copy_n(data.data() + pick * dim, dim, centroids.data() + c * dim);
  }

  std::vector<std::size_t> assign(n, 0);
  std::vector<double> dist(n, 0.0);
  std::vector<std::size_t> counts(k);
  std::vector<double> sums(k * dim);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i)
      assign[i] = nearest(data.data() + i * dim, centroids, k, dim, &dist[i]);
    std::fill(counts.begin(), counts.end(), 0);
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t j = 0; j < dim; ++j) sums[assign[i] * dim + j] += data[i * dim + j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < dim; ++j)
        centroids[c * dim + j] = sums[c * dim + j] / static_cast<double>(counts[c]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      double fd = -1.0;
      for (std::size_t i = 0; i < n; ++i)
        if (dist[i] > fd) {
          fd = dist[i];
          far = i;
        }
      std::copy_n(data.data() + far * dim, dim, centroids.data() + c * dim);
      dist[far] = 0.0;
    }
  }
  return degenerate;
}

}  // namespace

PqCodebook pq_fit(const Matrix& corpus, const PqOptions& opts) {
  const std::size_t n = corpus.rows();
  const std::size_t dim = corpus.cols();
  if (opts.m == 0 || dim % opts.m != 0)
    throw ParameterError("pq_fit: dimension must be divisible by the subspace count");
  if (opts.k == 0 || opts.k > 256) throw ParameterError("pq_fit: k must be in [1, 256]");
  if (opts.k > n) throw ParameterError("pq_fit: k exceeds the number of corpus rows");

  PqCodebook cb{opts.m, opts.k, dim / opts.m, {}};
  cb.centroids.resize(cb.m * cb.k * cb.sub_dim);
  Rng rng(opts.seed);
  bool degenerate = false;
  std::vector<double> sub(n * cb.sub_dim), cent;
  for (std::size_t s = 0; s < cb.m; ++s) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < cb.sub_dim; ++j)
        sub[i * cb.sub_dim + j] = corpus(i, s * cb.sub_dim + j);
    degenerate |= kmeans(sub, n, cb.sub_dim, cb.k, opts.iterations, rng.derive(s), cent);
    std::copy(cent.begin(), cent.end(),
              cb.centroids.begin() + static_cast<std::ptrdiff_t>(s * cb.k * cb.sub_dim));
  }
  if (degenerate) warn("pq_fit: fewer distinct points than centroids; centroids are duplicated");
  return cb;
}

PqCodes pq_encode(const PqCodebook& cb, const Matrix& corpus) {
  if (corpus.cols() != cb.dim()) throw ShapeError("pq_encode: dimension mismatch");
  PqCodes codes{corpus.rows(), cb.m, std::vector<std::uint8_t>(corpus.rows() * cb.m)};
  const auto n = static_cast<std::ptrdiff_t>(corpus.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t s = 0; s < cb.m; ++s) {
      const double* x = corpus.row(i).data() + s * cb.sub_dim;
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < cb.k; ++c) {
        const double dd = sq_dist(x, cb.centroid(s, c).data(), cb.sub_dim);
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      codes.data[i * cb.m + s] = static_cast<std::uint8_t>(best);
    }
  }
  return codes;
}

Matrix pq_decode(const PqCodebook& cb, const PqCodes& codes) {
  Matrix out(codes.rows, cb.dim());
  for (std::size_t i = 0; i < codes.rows; ++i)
    for (std::size_t s = 0; s < cb.m; ++s) {
      const auto c = cb.centroid(s, codes(i, s));
      std::copy(c.begin(), c.end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(s * cb.sub_dim));
    }
  return out;
}

std::vector<double> pq_score(const PqCodebook& cb, const PqCodes& codes,
                             std::span<const double> query) {
  if (query.size() != cb.dim()) throw ShapeError("pq_score: query dimension mismatch");
  std::vector<double> lut(cb.m * cb.k);
  for (std::size_t s = 0; s < cb.m; ++s)
    for (std::size_t c = 0; c < cb.k; ++c)
      lut[s * cb.k + c] = dot(query.subspan(s * cb.sub_dim, cb.sub_dim), cb.centroid(s, c));
  std::vector<double> scores(codes.rows, 0.0);
  for (std::size_t i = 0; i < codes.rows; ++i) {
    double acc = 0.0;
    for (std::size_t s = 0; s < cb.m; ++s) acc += lut[s * cb.k + codes(i, s)];
    scores[i] = acc;
  }
  return scores;
}

Matrix pq_score(const PqCodebook& cb, const PqCodes& codes, const Matrix& queries) {
  if (queries.cols() != cb.dim()) throw ShapeError("pq_score: query dimension mismatch");
  Matrix out(queries.rows(), codes.rows);
  const auto nq = static_cast<std::ptrdiff_t>(queries.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t q = 0; q < nq; ++q) {
    const auto s = pq_score(cb, codes, queries.row(static_cast<std::size_t>(q)));
    std::copy(s.begin(), s.end(), out.row(static_cast<std::size_t>(q)).begin());
  }
  return out;
}

}  // namespace cqcim
