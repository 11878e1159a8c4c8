#include "cqcim/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <string>

#include "cqcim/errors.hpp"

namespace cqcim::kernels {

namespace {

// i-k-j order; row i of c depends only on row i of a.
inline void gemm_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  auto out = c.row(i);
  for (auto& v : out) v = 0.0;
  const auto ar = a.row(i);
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double aik = ar[k];
    const auto br = b.row(k);
    for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aik * br[j];
  }
}

// Row i of a^T b is sum_k a(k, i) * b.row(k).
inline void gemm_tn_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  auto out = c.row(i);
  for (auto& v : out) v = 0.0;
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double aki = a(k, i);
    const auto br = b.row(k);
    for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aki * br[j];
  }
}

inline void gemm_nt_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const auto ar = a.row(i);
  for (std::size_t j = 0; j < b.rows(); ++j) {
    const auto br = b.row(j);
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
    c(i, j) = s;
  }
}

inline void tile_row(std::span<const double> query, const Matrix& cells, std::size_t slices,
                     std::size_t tile_rows, Matrix& out, std::size_t doc) {
  const std::size_t dim = query.size();
  const std::size_t tiles = (dim + tile_rows - 1) / tile_rows;
  const auto cell = cells.row(doc);
  for (std::size_t s = 0; s < slices; ++s) {
    const double* plane = cell.data() + s * dim;
    for (std::size_t t = 0; t < tiles; ++t) {
      const std::size_t lo = t * tile_rows;
      const std::size_t hi = std::min(dim, lo + tile_rows);
      double acc = 0.0;
      for (std::size_t j = lo; j < hi; ++j) acc += query[j] * plane[j];
      out(doc, s * tiles + t) = acc;
    }
  }
}

void check_tiles(std::span<const double> query, const Matrix& cells, std::size_t slices,
                 std::size_t tile_rows, const Matrix& out) {
  if (tile_rows == 0) throw ParameterError("tile_partial_sums: tile_rows must be > 0");
  const std::size_t tiles = (query.size() + tile_rows - 1) / tile_rows;
  if (cells.cols() != slices * query.size() || out.rows() != cells.rows() ||
      out.cols() != slices * tiles) {
    throw ShapeError("tile_partial_sums: operand shapes do not match");
  }
}

}  // namespace

namespace serial {

void gemm(const Matrix& a, const Matrix& b, Matrix& c) {
  for (std::size_t i = 0; i < a.rows(); ++i) gemm_row(a, b, c, i);
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c) {
  for (std::size_t i = 0; i < a.cols(); ++i) gemm_tn_row(a, b, c, i);
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  for (std::size_t i = 0; i < a.rows(); ++i) gemm_nt_row(a, b, c, i);
}

void tile_partial_sums(std::span<const double> query, const Matrix& cells, std::size_t slices,
                       std::size_t tile_rows, Matrix& out) {
  check_tiles(query, cells, slices, tile_rows, out);
  for (std::size_t doc = 0; doc < cells.rows(); ++doc)
    tile_row(query, cells, slices, tile_rows, out, doc);
}

}  // namespace serial

namespace parallel {

void gemm(const Matrix& a, const Matrix& b, Matrix& c) {
  const auto n = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) gemm_row(a, b, c, static_cast<std::size_t>(i));
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c) {
  const auto n = static_cast<std::ptrdiff_t>(a.cols());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) gemm_tn_row(a, b, c, static_cast<std::size_t>(i));
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  const auto n = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) gemm_nt_row(a, b, c, static_cast<std::size_t>(i));
}

void tile_partial_sums(std::span<const double> query, const Matrix& cells, std::size_t slices,
                       std::size_t tile_rows, Matrix& out) {
  check_tiles(query, cells, slices, tile_rows, out);
  const auto n = static_cast<std::ptrdiff_t>(cells.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t doc = 0; doc < n; ++doc)
    tile_row(query, cells, slices, tile_rows, out, static_cast<std::size_t>(doc));
}

}  // namespace parallel

void set_thread_limit(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

int apply_thread_limit_from_env() {
  const char* raw = std::getenv("CQCIM_THREADS");
  if (raw == nullptr || *raw == '\0') return 0;
  int threads = 0;
  try {
    threads = std::stoi(raw);
  } catch (const std::exception&) {
    throw UsageError(std::string("CQCIM_THREADS must be a positive integer, got '") + raw + "'");
  }
  if (threads <= 0) throw UsageError("CQCIM_THREADS must be a positive integer");
  set_thread_limit(threads);
  return threads;
}

}  // namespace cqcim::kernels
