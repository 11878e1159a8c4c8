#pragma once

// Data-parallel inner loops. Every kernel has a serial reference and an
// OpenMP version; both compute each output element with the same
// summation order, so their results are bit-identical for any thread count.

#include <cstddef>
#include <span>

#include "cqcim/numkit.hpp"

namespace cqcim::kernels {

namespace serial {

/// c = a * b. c must be pre-sized (a.rows x b.cols).
void gemm(const Matrix& a, const Matrix& b, Matrix& c);
/// c = a^T * b. c must be pre-sized (a.cols x b.cols).
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c);
/// c = a * b^T. c must be pre-sized (a.rows x b.rows).
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c);

/// Crossbar bitline sums. `cells` holds one row per document with
/// `slices * dim` differential conductances laid out slice-major. For each
/// document, slice and row tile, writes sum_j query[j] * cell[j] into
/// out(doc, slice * tiles + tile).
void tile_partial_sums(std::span<const double> query, const Matrix& cells, std::size_t slices,
                       std::size_t tile_rows, Matrix& out);

}  // namespace serial

namespace parallel {

void gemm(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c);
void tile_partial_sums(std::span<const double> query, const Matrix& cells, std::size_t slices,
                       std::size_t tile_rows, Matrix& out);

}  // namespace parallel

/// Caps the OpenMP worker count. 0 leaves the runtime default.
void set_thread_limit(int threads);
/// Applies CQCIM_THREADS if set. Returns the value applied (0 if unset).
int apply_thread_limit_from_env();

}  // namespace cqcim::kernels
