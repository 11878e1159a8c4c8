#include "cqcim/cimsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "cqcim/errors.hpp"
#include "cqcim/kernels.hpp"

namespace cqcim {

void TransitionMatrix::validate() const {
  if (p.rows() != p.cols() || p.rows() < 2)
    throw ParameterError("transition matrix must be square with at least 2 levels");
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (double v : p.row(i)) {
      if (!(v >= 0.0 && v <= 1.0)) throw ParameterError("transition matrix entry outside [0, 1]");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ParameterError("transition matrix row does not sum to 1");
  }
}

void ArraySpec::validate() const {
  if (rows == 0 || cols == 0) throw ParameterError("array spec: rows and cols must be > 0");
  if (!(adc_noise_sigma >= 0.0)) throw ParameterError("array spec: adc_noise_sigma must be >= 0");
}

Matrix QuantizedCorpus::dequantize() const {
  Matrix out(codes.rows(), codes.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = dequant[codes.values()[i]];
  return out;
}

void QuantizedCorpus::validate() const {
  if (dequant.size() < 2) throw ParameterError("quantized corpus: need at least 2 levels");
  for (auto c : codes.values())
    if (c >= dequant.size()) throw ParameterError("quantized corpus: code out of range");
}

namespace {

// Upper tail P(Z > x).
double upper_tail(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

// Smallest s with base^s == levels, or 0 if levels is not a power of base.
std::size_t power_of(std::size_t levels, std::size_t base) {
  std::size_t s = 0, v = 1;
  while (v < levels) {
    v *= base;
    ++s;
  }
  return v == levels ? s : 0;
}

}  // namespace

TransitionMatrix derive_transition_matrix(const DeviceProfile& profile, double noise_scale) {
  if (profile.levels < 2) throw ParameterError("derive_transition_matrix: need K >= 2");
  profile.validate();
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale))
    throw ParameterError("derive_transition_matrix: noise_scale must be finite and >= 0");
  const std::size_t k = profile.levels;
  std::vector<double> bounds(k + 1);
  bounds[0] = -std::numeric_limits<double>::infinity();
  bounds[k] = std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j < k; ++j)
    bounds[j] = 0.5 * (profile.nominal[j - 1] + profile.nominal[j]);

  TransitionMatrix tm{Matrix(k, k)};
  for (std::size_t i = 0; i < k; ++i) {
    const double mu = profile.nominal[i];
    const double s = noise_scale * profile.sigma_v[i];
    if (s == 0.0) {
      tm.p(i, i) = 1.0;
      continue;
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double lo = (bounds[j] - mu) / s;
      const double hi = (bounds[j + 1] - mu) / s;
      // Mass in [lo, hi); evaluate on the tail that avoids cancellation.
      double mass = 0.0;
      if (lo >= 0.0) {
        mass = upper_tail(lo) - upper_tail(hi);
      } else if (hi <= 0.0) {
        mass = upper_tail(-hi) - upper_tail(-lo);
      } else {
        mass = 1.0 - upper_tail(-lo) - upper_tail(hi);
      }
      tm.p(i, j) = std::clamp(mass, 0.0, 1.0);
    }
  }
  return tm;
}

namespace {

std::size_t sample_row(std::span<const double> row, double u) {
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (row[j] <= 0.0) continue;
    acc += row[j];
    last = j;
    if (u < acc) return j;
  }
  return last;
}

}  // namespace

QuantizedCorpus apply_flips(const QuantizedCorpus& corpus, const TransitionMatrix& tm, Rng& rng) {
  corpus.validate();
  const std::size_t k = corpus.levels();
  const std::size_t base = tm.levels();
  std::size_t digits = 1;
  if (base != k) {
    digits = power_of(k, base);
    if (digits == 0) {
      std::ostringstream msg;
      msg << "apply_flips: " << k << "-level corpus cannot be stored on " << base
          << "-level cells";
      throw ParameterError(msg.str());
    }
  }
  QuantizedCorpus out = corpus;
  for (auto& code : out.codes.values()) {
    std::size_t value = code, result = 0, weight = 1;
    for (std::size_t s = 0; s < digits; ++s) {
      const std::size_t digit = value % base;
      value /= base;
      result += weight * sample_row(tm.p.row(digit), rng.uniform());
      weight *= base;
    }
    code = static_cast<std::uint8_t>(result);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Crossbar

Crossbar::Crossbar(const QuantizedCorpus& corpus, const DeviceProfile& profile,
                   const ArraySpec& spec, double noise_scale, Rng& rng)
    : spec_(spec), docs_(corpus.count()), dim_(corpus.dim()) {
  corpus.validate();
  profile.validate();
  spec.validate();
  if (!(noise_scale >= 0.0)) throw ParameterError("crossbar: noise_scale must be >= 0");

  const std::size_t k = corpus.levels();
  const std::size_t kd = profile.levels;
  std::vector<std::size_t> level_of;  // digit -> device level
  if (k <= kd) {
    slices_ = 1;
    base_ = k;
    for (std::size_t c = 0; c < k; ++c)
      level_of.push_back(static_cast<std::size_t>(
          std::lround(static_cast<double>(c * (kd - 1)) / static_cast<double>(k - 1))));
  } else {
    slices_ = power_of(k, kd);
    if (slices_ == 0) {
      std::ostringstream msg;
      msg << "crossbar: " << k << "-level corpus cannot be bit-sliced onto " << kd
          << "-level cells";
      throw ParameterError(msg.str());
    }
    base_ = kd;
    for (std::size_t c = 0; c < kd; ++c) level_of.push_back(c);
  }

  // Logical values must be affine in the code for linear accumulation.
  alpha_ = (corpus.dequant[k - 1] - corpus.dequant[0]) / static_cast<double>(k - 1);
  beta_ = corpus.dequant[0];
  for (std::size_t c = 0; c < k; ++c) {
    const double expect = alpha_ * static_cast<double>(c) + beta_;
    if (std::abs(expect - corpus.dequant[c]) > 1e-9 * std::max(1.0, std::abs(corpus.dequant[c])))
      throw ParameterError("crossbar: dequantization map must be affine in the code");
  }

  const auto& g = profile.nominal;
  auto ideal_delta = [&](std::size_t digit) {
    return g[level_of[digit]] - g[level_of[base_ - 1 - digit]];
  };
  delta_lo_ = ideal_delta(0);
  delta_span_ = ideal_delta(base_ - 1) - delta_lo_;

  cells_ = Matrix(docs_, slices_ * dim_);
  const std::uint64_t program_seed = rng.next_u64();
  const auto n = static_cast<std::ptrdiff_t>(docs_);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t dd = 0; dd < n; ++dd) {
    const auto doc = static_cast<std::size_t>(dd);
    Rng cell_rng(program_seed, doc);
    auto out = cells_.row(doc);
    for (std::size_t j = 0; j < dim_; ++j) {
      std::size_t value = corpus.codes(doc, j);
      for (std::size_t s = 0; s < slices_; ++s) {
        const std::size_t digit = value % base_;
        value /= base_;
        const std::size_t lp = level_of[digit];
        const std::size_t ln = level_of[base_ - 1 - digit];
        double gp = g[lp], gn = g[ln];
        if (noise_scale > 0.0) {
          gp += noise_scale * profile.sigma_v[lp] * cell_rng.normal();
          gn += noise_scale * profile.sigma_v[ln] * cell_rng.normal();
        }
        out[s * dim_ + j] = gp - gn;
      }
    }
  }
}

std::size_t Crossbar::array_tiles() const noexcept {
  const std::size_t col_tiles = (physical_columns() + spec_.cols - 1) / spec_.cols;
  return col_tiles * row_tiles();
}

std::vector<double> Crossbar::combine(std::span<const double> query, const Matrix& partial,
                                      Rng* adc_rng) const {
  double qsum = 0.0;
  for (double q : query) qsum += q;
  const std::size_t tiles = row_tiles();
  const double digit_gain = static_cast<double>(base_ - 1) / delta_span_;
  std::vector<double> out(docs_);
  for (std::size_t doc = 0; doc < docs_; ++doc) {
    double code_sum = 0.0, weight = 1.0;
    for (std::size_t s = 0; s < slices_; ++s) {
      double bitline = 0.0;
      for (std::size_t t = 0; t < tiles; ++t) {
        double v = partial(doc, s * tiles + t);
        if (adc_rng) v += spec_.adc_noise_sigma * adc_rng->normal();
        bitline += v;
      }
      code_sum += weight * digit_gain * (bitline - delta_lo_ * qsum);
      weight *= static_cast<double>(base_);
    }
    out[doc] = alpha_ * code_sum + beta_ * qsum;
  }
  return out;
}

std::vector<double> Crossbar::scores(std::span<const double> query, Rng& rng) const {
  if (query.size() != dim_) {
    std::ostringstream msg;
    msg << "crossbar: query has " << query.size() << " dims, corpus has " << dim_;
    throw ShapeError(msg.str());
  }
  Matrix partial(docs_, slices_ * row_tiles());
  kernels::parallel::tile_partial_sums(query, cells_, slices_, spec_.rows, partial);
  return combine(query, partial, spec_.adc_noise_sigma > 0.0 ? &rng : nullptr);
}

Matrix Crossbar::scores(const Matrix& queries, Rng& rng) const {
  if (queries.cols() != dim_) throw ShapeError("crossbar: query dimension mismatch");
  const std::uint64_t adc_seed = rng.next_u64();
  Matrix out(queries.rows(), docs_);
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    Rng qrng(adc_seed, q);
    const auto s = scores(queries.row(q), qrng);
    std::copy(s.begin(), s.end(), out.row(q).begin());
  }
  return out;
}

std::vector<double> crossbar_mips(std::span<const double> query, const QuantizedCorpus& corpus,
                                  const ArraySpec& spec, const DeviceProfile& profile,
                                  double noise_scale, Rng& rng) {
  if (query.size() != corpus.dim()) throw ShapeError("crossbar_mips: query dimension mismatch");
  const Crossbar xbar(corpus, profile, spec, noise_scale, rng);
  return xbar.scores(query, rng);
}

SlicingCost slicing_cost(std::size_t d, const ArraySpec& spec, std::size_t value_bits,
                         std::size_t cell_bits) {
  spec.validate();
  if (value_bits == 0 || cell_bits == 0) throw ParameterError("slicing_cost: bits must be > 0");
  SlicingCost c;
  c.cells_per_value = (value_bits + cell_bits - 1) / cell_bits;
  c.row_tiles = (d + spec.rows - 1) / spec.rows;
  c.accumulate_ops = c.row_tiles * c.cells_per_value;
  c.total_cells = d * c.cells_per_value;
  return c;
}

}  // namespace cqcim
