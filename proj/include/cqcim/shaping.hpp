#pragma once

// Compression head -> level-aware noise injector -> quantization head, each
// with a forward pass and an analytic backward pass.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cqcim/device.hpp"
#include "cqcim/numkit.hpp"

namespace cqcim {

/// N x d matrix of level indices in {0..K-1}.
class CodeMatrix {
 public:
  CodeMatrix() = default;
  CodeMatrix(std::size_t rows, std::size_t cols, std::uint8_t fill = 0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::uint8_t& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  std::uint8_t operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols_ + c];
  }
  std::span<const std::uint8_t> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<std::uint8_t> values() noexcept { return data_; }
  std::span<const std::uint8_t> values() const noexcept { return data_; }

  friend bool operator==(const CodeMatrix&, const CodeMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> data_;
};

// ---------------------------------------------------------------------------
// Compression head

struct LinearCache {
  std::optional<Matrix> input;
};

struct LinearGrads {
  Matrix weight;
  std::vector<double> bias;
  Matrix input;
};

/// Dense projection y = x W + b, W is (D_in x d_out).
class CompressionHead {
 public:
  CompressionHead(Matrix weight, std::vector<double> bias);

  /// Glorot-uniform weights, zero bias.
  static CompressionHead random(std::size_t input_dim, std::size_t output_dim, Rng& rng);

  std::size_t input_dim() const noexcept { return weight_.rows(); }
  std::size_t output_dim() const noexcept { return weight_.cols(); }
  const Matrix& weight() const noexcept { return weight_; }
  const std::vector<double>& bias() const noexcept { return bias_; }
  Matrix& weight() noexcept { return weight_; }
  std::vector<double>& bias() noexcept { return bias_; }

  /// Stores the input in `cache` when one is given.
  Matrix forward(const Matrix& x, LinearCache* cache = nullptr) const;
  /// Throws StateError if `cache` holds no forward input.
  LinearGrads backward(const LinearCache& cache, const Matrix& grad_out) const;

 private:
  Matrix weight_;
  std::vector<double> bias_;
};

// ---------------------------------------------------------------------------
// Noise injection

/// Level-aware additive device noise applied between compression and
/// quantization. Values are min-max normalized per batch before being
/// matched against `lookup_thresholds`; the noise itself is added in the
/// original value space.
struct NoiseSpec {
  DeviceProfile profile;
  double sigma_g = 0.1;
  std::vector<double> lookup_thresholds;

  /// Thresholds default to {0.25, 0.5, 0.75} for K = 4 (k / K in general).
  static NoiseSpec for_profile(DeviceProfile profile, double sigma_g);
  static std::vector<double> default_thresholds(std::size_t levels);

  void validate() const;
};

/// Number of thresholds <= value. A value equal to a threshold belongs to
/// the upper level.
std::size_t find_level(double value, std::span<const double> thresholds);

/// Level index per element of `emb` (after per-batch min-max normalization).
std::vector<std::size_t> assign_levels(const Matrix& emb, const NoiseSpec& spec);

/// emb + sigma_g * eps with eps_j ~ N(0, sigma_v[level_j]^2). Draws are
/// consumed in row-major order. sigma_g == 0 returns an exact copy.
Matrix inject_noise(const Matrix& emb, const NoiseSpec& spec, Rng& rng);

// ---------------------------------------------------------------------------
// Precision

enum class Precision { binary_1bit, ternary_1p58bit, uniform_2bit, uniform_int4 };

Precision parse_precision(std::string_view text);
std::string_view to_string(Precision p) noexcept;
std::size_t level_count(Precision p) noexcept;

// ---------------------------------------------------------------------------
// N2UQ quantization head

struct N2uqCache {
  std::optional<Matrix> input;
};

struct N2uqGrads {
  Matrix input;
  std::vector<double> thresholds;
};

struct QuantizeResult {
  CodeMatrix codes;
  Matrix values;
};

/// Nonuniform-to-uniform quantizer. A piecewise-linear warp g sends
/// range_lo -> 0, t_k -> k - 1/2 (k = 1..K-1) and range_hi -> K-1; the code
/// is round-half-up(clamp(g(x), 0, K-1)), so the learnable thresholds t_k
/// are exactly the decision boundaries between codes. Output levels are
/// uniform: out_levels[k] = k / (K-1).
///
/// Backward is straight-through: the derivative of the surrogate
/// clamp(g(x), 0, K-1) / (K-1) with respect to x and to every t_k.
class N2uqQuantizer {
 public:
  N2uqQuantizer(std::size_t levels, double range_lo, double range_hi,
                std::vector<double> thresholds);

  /// Range from the 1st/99th percentile of `batch`, thresholds equally spaced.
  static N2uqQuantizer calibrate(const Matrix& batch, std::size_t levels);
  /// Equally spaced thresholds over [range_lo, range_hi].
  static N2uqQuantizer uniform(std::size_t levels, double range_lo, double range_hi);

  std::size_t levels() const noexcept { return levels_; }
  double range_lo() const noexcept { return lo_; }
  double range_hi() const noexcept { return hi_; }
  const std::vector<double>& thresholds() const noexcept { return t_; }
  std::vector<double> out_levels() const;

  /// Replaces the thresholds, then re-projects them into a strictly
  /// increasing sequence inside (range_lo, range_hi).
  void set_thresholds(std::span<const double> t);

  double warp(double x) const noexcept;
  std::uint8_t code(double x) const noexcept;
  /// Straight-through surrogate in [0, 1].
  double surrogate(double x) const noexcept;

  /// values(i, j) == out_levels()[codes(i, j)].
  QuantizeResult forward(const Matrix& x, N2uqCache* cache = nullptr) const;
  Matrix surrogate_forward(const Matrix& x) const;
  N2uqGrads backward(const N2uqCache& cache, const Matrix& grad_y) const;

  friend bool operator==(const N2uqQuantizer&, const N2uqQuantizer&) = default;

 private:
  void project();
  // Breakpoint index i with p_i <= x < p_{i+1}; x must lie in [lo, hi].
  std::size_t segment(double x) const noexcept;
  double breakpoint(std::size_t i) const noexcept;
  double target(std::size_t i) const noexcept;

  std::size_t levels_;
  double lo_;
  double hi_;
  std::vector<double> t_;
};

// ---------------------------------------------------------------------------
// Fixed (non-learned) quantizers used by the baselines and the STE ablation

struct FixedCache {
  std::optional<Matrix> input;
};

/// binary: {-s, +s}; ternary: {-s, 0, +s} with dead zone |x| < s/2;
/// uniform_2bit / uniform_int4: 4 / 16 evenly spaced levels over [-s, +s].
/// Codes index the codebook in ascending order.
class FixedQuantizer {
 public:
  FixedQuantizer(Precision mode, double scale);

  /// Scale from data: mean |x| for binary/ternary, 99th percentile of |x|
  /// for uniform modes (the same clipping point as the N2UQ range).
  static FixedQuantizer calibrate(Precision mode, const Matrix& x);

  Precision mode() const noexcept { return mode_; }
  double scale() const noexcept { return scale_; }
  std::vector<double> codebook() const;

  std::uint8_t code(double x) const noexcept;
  QuantizeResult forward(const Matrix& x, FixedCache* cache = nullptr) const;
  /// Straight-through inside [-s, s], zero outside.
  Matrix backward(const FixedCache& cache, const Matrix& grad_y) const;

  friend bool operator==(const FixedQuantizer&, const FixedQuantizer&) = default;

 private:
  Precision mode_;
  double scale_;
};

using Quantizer = std::variant<N2uqQuantizer, FixedQuantizer>;

/// Signed value represented by each code. N2UQ output levels map to
/// [-1, 1] via 2y - 1; fixed quantizers use their codebook.
std::vector<double> logical_levels(const Quantizer& q);
std::size_t level_count(const Quantizer& q);

// ---------------------------------------------------------------------------
// Whole pipeline

struct PipelineCache {
  LinearCache linear;
  N2uqCache n2uq;
  FixedCache fixed;
  bool noise_applied = false;
};

struct PipelineOutput {
  CodeMatrix codes;
  Matrix values;     ///< logical (signed) quantized values
  Matrix projected;  ///< compression-head output before noise
};

struct ModelGrads {
  Matrix weight;
  std::vector<double> bias;
  std::vector<double> thresholds;  ///< empty for fixed quantizers
  Matrix input;
};

/// The compress-then-quantize map plus the training-time noise spec.
struct ShapingModel {
  CompressionHead head;
  Quantizer quantizer;
  NoiseSpec noise;

  /// Noise is injected only when `noise_rng` is non-null.
  PipelineOutput forward(const Matrix& x, Rng* noise_rng, PipelineCache* cache = nullptr) const;
  /// `grad_values` is the gradient w.r.t. PipelineOutput::values.
  ModelGrads backward(const PipelineCache& cache, const Matrix& grad_values) const;

  /// Noise-free straight-through surrogate of the logical output; the
  /// function whose exact derivative backward() returns.
  Matrix surrogate_forward(const Matrix& x) const;

  /// Inference-time shaping (no noise).
  PipelineOutput shape(const Matrix& x) const { return forward(x, nullptr); }
  /// Query path: compression only, kept at full precision.
  Matrix project(const Matrix& x) const { return head.forward(x); }
};

}  // namespace cqcim
