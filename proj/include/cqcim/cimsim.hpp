#pragma once

// Simulated multi-level compute-in-memory crossbar.

#include <cstdint>
#include <span>
#include <vector>

#include "cqcim/device.hpp"
#include "cqcim/numkit.hpp"
#include "cqcim/shaping.hpp"

namespace cqcim {

/// Row-stochastic matrix: p(i, j) = P(stored level i is read as level j).
struct TransitionMatrix {
  Matrix p;

  std::size_t levels() const noexcept { return p.rows(); }
  void validate() const;
};

struct ArraySpec {
  std::size_t rows = 128;
  std::size_t cols = 128;
  double adc_noise_sigma = 0.0;

  void validate() const;
};

/// Codes plus the signed logical value of each level.
struct QuantizedCorpus {
  CodeMatrix codes;
  std::vector<double> dequant;

  std::size_t levels() const noexcept { return dequant.size(); }
  std::size_t count() const noexcept { return codes.rows(); }
  std::size_t dim() const noexcept { return codes.cols(); }
  Matrix dequantize() const;
  void validate() const;
};

/// Read value of a cell storing level i is N(nominal[i], (scale * sigma_v[i])^2);
/// sensing boundaries sit at the midpoints between adjacent nominals.
TransitionMatrix derive_transition_matrix(const DeviceProfile& profile, double noise_scale);

/// Resamples every code from its transition row. When the corpus has K^s
/// levels for a K-level transition matrix (bit-sliced storage), each base-K
/// digit is flipped independently.
QuantizedCorpus apply_flips(const QuantizedCorpus& corpus, const TransitionMatrix& tm, Rng& rng);

/// Corpus programmed into crossbar tiles. Each logical value occupies a
/// differential column pair (positive plane stores the digit, negative plane
/// its complement) per slice; corpora with more levels than the device are
/// bit-sliced into base-K digits and recombined by shift-and-add. Row tiles
/// of `spec.rows` wordlines produce partial sums that are accumulated
/// digitally, each with optional ADC noise.
class Crossbar {
 public:
  /// Programming variation (noise_scale * sigma_v per cell) is drawn here.
  Crossbar(const QuantizedCorpus& corpus, const DeviceProfile& profile, const ArraySpec& spec,
           double noise_scale, Rng& rng);

  std::size_t documents() const noexcept { return docs_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t slices() const noexcept { return slices_; }
  std::size_t row_tiles() const noexcept { return (dim_ + spec_.rows - 1) / spec_.rows; }
  /// Physical columns used (2 planes per slice per document) and the
  /// number of array tiles they spread over.
  std::size_t physical_columns() const noexcept { return docs_ * slices_ * 2; }
  std::size_t array_tiles() const noexcept;

  /// One inner-product score per document.
  std::vector<double> scores(std::span<const double> query, Rng& rng) const;
  /// Q x N; each query draws ADC noise from its own stream.
  Matrix scores(const Matrix& queries, Rng& rng) const;

 private:
  std::vector<double> combine(std::span<const double> query, const Matrix& partial,
                              Rng* adc_rng) const;

  ArraySpec spec_;
  std::size_t docs_ = 0;
  std::size_t dim_ = 0;
  std::size_t slices_ = 1;
  std::size_t base_ = 2;
  double alpha_ = 1.0;  ///< logical value = alpha * code + beta
  double beta_ = 0.0;
  double delta_lo_ = 0.0;  ///< ideal differential readout of digit 0
  double delta_span_ = 1.0;
  Matrix cells_;  ///< docs x (slices * dim) differential conductances
};

/// Score every document for one query on the simulated crossbar.
std::vector<double> crossbar_mips(std::span<const double> query, const QuantizedCorpus& corpus,
                                  const ArraySpec& spec, const DeviceProfile& profile,
                                  double noise_scale, Rng& rng);

struct SlicingCost {
  std::size_t cells_per_value = 1;
  std::size_t row_tiles = 0;
  std::size_t accumulate_ops = 0;  ///< shift-and-add partial-sum combinations
  std::size_t total_cells = 0;     ///< per stored vector (one plane)
};

/// Cost of storing `value_bits`-bit values on `cell_bits`-bit cells.
SlicingCost slicing_cost(std::size_t d, const ArraySpec& spec, std::size_t value_bits,
                         std::size_t cell_bits);

/// INT4 on 1-bit cells.
inline SlicingCost int4_slicing_cost(std::size_t d, const ArraySpec& spec) {
  return slicing_cost(d, spec, 4, 1);
}

}  // namespace cqcim
