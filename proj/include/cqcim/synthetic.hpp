#pragma once

#include <cstdint>
#include <vector>

#include "cqcim/numkit.hpp"
#include "cqcim/retrieval.hpp"

namespace cqcim {

/// Clustered stand-in for a sentence-embedding corpus. Cluster structure
/// lives in a low-dimensional subspace; every vector also carries a shared
/// offset, per-coordinate scale variation and isotropic noise before being
/// normalized to unit length.
struct SyntheticOptions {
  std::size_t clusters = 8;
  std::size_t documents = 1024;
  std::size_t queries = 64;
  std::size_t dim = 384;
  std::size_t latent_dim = 32;
  double center_spread = 1.0;
  double within_spread = 2.0;
  double ambient_noise = 0.08;
  double offset_norm = 0.5;
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  Matrix documents;
  Matrix queries;
  std::vector<std::size_t> doc_cluster;
  std::vector<std::size_t> query_cluster;
  /// Every document of a query's cluster, grade 1.
  Qrels qrels;
};

SyntheticCorpus make_clustered_corpus(const SyntheticOptions& opts);

}  // namespace cqcim
