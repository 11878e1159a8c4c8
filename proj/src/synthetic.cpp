#include "cqcim/synthetic.hpp"

#include <cmath>

#include "cqcim/baselines.hpp"
#include "cqcim/errors.hpp"

namespace cqcim {

SyntheticCorpus make_clustered_corpus(const SyntheticOptions& opts) {
  if (opts.clusters == 0 || opts.documents == 0 || opts.dim == 0 || opts.latent_dim == 0)
    throw ParameterError("synthetic corpus: sizes must be > 0");
  if (opts.latent_dim > opts.dim)
    throw ParameterError("synthetic corpus: latent_dim must be <= dim");

  Rng rng(opts.seed, 0x5E7);
  const Matrix basis = random_orthonormal(opts.dim, opts.latent_dim, rng);

  Matrix centers(opts.clusters, opts.latent_dim);
  for (auto& v : centers.values()) v = opts.center_spread * rng.normal();
  // Anisotropic within-cluster spread: leading latent directions vary more.
  std::vector<double> axis_scale(opts.latent_dim);
  for (std::size_t j = 0; j < opts.latent_dim; ++j)
    axis_scale[j] = opts.within_spread * std::pow(0.93, static_cast<double>(j));

  std::vector<double> offset(opts.dim);
  for (auto& v : offset) v = rng.normal();
  const double on = norm2(offset);
  for (auto& v : offset) v *= opts.offset_norm / on;
  std::vector<double> coord_scale(opts.dim);
  for (auto& v : coord_scale) v = std::exp(0.3 * rng.normal());

  auto sample = [&](std::size_t count, std::vector<std::size_t>& labels) {
    Matrix latent(count, opts.latent_dim);
    labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      labels[i] = i % opts.clusters;
      for (std::size_t j = 0; j < opts.latent_dim; ++j)
        latent(i, j) = centers(labels[i], j) + axis_scale[j] * rng.normal();
    }
    Matrix out = matmul_nt(latent, basis);
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = 0; j < opts.dim; ++j)
        out(i, j) = coord_scale[j] * (out(i, j) + offset[j] * std::sqrt(static_cast<double>(
                                                      opts.latent_dim)) +
                                      opts.ambient_noise * std::sqrt(static_cast<double>(
                                                               opts.latent_dim)) *
                                          rng.normal());
    return normalize_rows(out);
  };

  SyntheticCorpus c;
  c.documents = sample(opts.documents, c.doc_cluster);
  c.queries = sample(opts.queries, c.query_cluster);
  for (std::size_t q = 0; q < opts.queries; ++q)
    for (std::size_t d = 0; d < opts.documents; ++d)
      if (c.doc_cluster[d] == c.query_cluster[q]) c.qrels.add(q, d, 1);
  return c;
}

}  // namespace cqcim
