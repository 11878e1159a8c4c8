#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cqcim/numkit.hpp"

namespace cqcim {

struct PcaModel {
  std::vector<double> mean;  ///< D
  Matrix components;         ///< D x d, orthonormal columns
  std::vector<double> eigenvalues;

  std::size_t input_dim() const noexcept { return components.rows(); }
  std::size_t output_dim() const noexcept { return components.cols(); }
};

struct PcaOptions {
  /// Stop when the Rayleigh quotient moves by less than tolerance times the
  /// leading eigenvalue. Vectors are then accurate to about sqrt(tolerance).
  double tolerance = 1e-10;
  std::size_t max_iterations = 10000;
};

/// Top-d principal components by power iteration with deflation on the
/// sample covariance. Each component's sign is chosen so its first nonzero
/// coordinate is positive.
PcaModel pca_fit(const Matrix& corpus, std::size_t d, const PcaOptions& opts = {});

/// (x - mean) * components
Matrix pca_project(const PcaModel& model, const Matrix& x);
/// mean + coords * components^T
Matrix pca_reconstruct(const PcaModel& model, const Matrix& coords);

/// First d coordinates of every row.
Matrix vanilla_truncate(const Matrix& x, std::size_t d);

/// Scales every nonzero row to unit L2 norm.
Matrix normalize_rows(const Matrix& x);

// ---------------------------------------------------------------------------
// Product quantization

struct PqCodebook {
  std::size_t m = 0;        ///< subspaces
  std::size_t k = 0;        ///< centroids per subspace
  std::size_t sub_dim = 0;  ///< D / m
  std::vector<double> centroids;  ///< m x k x sub_dim

  std::size_t dim() const noexcept { return m * sub_dim; }
  std::span<const double> centroid(std::size_t sub, std::size_t c) const noexcept {
    return {centroids.data() + (sub * k + c) * sub_dim, sub_dim};
  }
};

struct PqOptions {
  std::size_t m = 8;
  std::size_t k = 256;
  std::size_t iterations = 25;
  std::uint64_t seed = 0;
};

/// N x m centroid indices.
struct PqCodes {
  std::size_t rows = 0;
  std::size_t m = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t operator()(std::size_t r, std::size_t s) const noexcept { return data[r * m + s]; }
};

/// Seeded k-means (k-means++ seeding, Lloyd iterations, empty clusters
/// re-seeded to the point farthest from its centroid) per subspace.
PqCodebook pq_fit(const Matrix& corpus, const PqOptions& opts);
PqCodes pq_encode(const PqCodebook& codebook, const Matrix& corpus);
/// Reconstruct documents from their codes.
Matrix pq_decode(const PqCodebook& codebook, const PqCodes& codes);
/// Asymmetric inner-product scores: query in float, documents as codes.
std::vector<double> pq_score(const PqCodebook& codebook, const PqCodes& codes,
                             std::span<const double> query);
/// Q x N score matrix.
Matrix pq_score(const PqCodebook& codebook, const PqCodes& codes, const Matrix& queries);

}  // namespace cqcim
