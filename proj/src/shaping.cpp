#include "cqcim/shaping.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cqcim/errors.hpp"

namespace cqcim {

// ---------------------------------------------------------------------------
// CompressionHead

CompressionHead::CompressionHead(Matrix weight, std::vector<double> bias)
    : weight_(std::move(weight)), bias_(std::move(bias)) {
  if (bias_.size() != weight_.cols())
    throw ShapeError("CompressionHead: bias length must equal output dim");
  if (weight_.cols() > weight_.rows())
    throw ParameterError("CompressionHead: output dim must not exceed input dim");
}

CompressionHead CompressionHead::random(std::size_t input_dim, std::size_t output_dim, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(input_dim + output_dim));
  Matrix w(input_dim, output_dim);
  for (auto& v : w.values()) v = (2.0 * rng.uniform() - 1.0) * limit;
  return CompressionHead(std::move(w), std::vector<double>(output_dim, 0.0));
}

Matrix CompressionHead::forward(const Matrix& x, LinearCache* cache) const {
  if (x.cols() != weight_.rows()) {
    std::ostringstream msg;
    msg << "compression head expects " << weight_.rows() << "-dim input, got " << x.cols();
    throw ShapeError(msg.str());
  }
  Matrix y = matmul(x, weight_);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias_[j];
  }
  if (cache != nullptr) cache->input = x;
  return y;
}

LinearGrads CompressionHead::backward(const LinearCache& cache, const Matrix& grad_out) const {
  if (!cache.input) throw StateError("compression head: backward called before forward");
  const Matrix& x = *cache.input;
  if (grad_out.rows() != x.rows() || grad_out.cols() != weight_.cols())
    throw ShapeError("compression head: grad_out shape does not match cached forward");
  LinearGrads g{matmul_tn(x, grad_out), std::vector<double>(weight_.cols(), 0.0),
                matmul_nt(grad_out, weight_)};
  for (std::size_t i = 0; i < grad_out.rows(); ++i) {
    const auto r = grad_out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) g.bias[j] += r[j];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Noise

std::vector<double> NoiseSpec::default_thresholds(std::size_t levels) {
  std::vector<double> t;
  for (std::size_t k = 1; k < levels; ++k)
    t.push_back(static_cast<double>(k) / static_cast<double>(levels));
  return t;
}

NoiseSpec NoiseSpec::for_profile(DeviceProfile profile, double sigma_g) {
  auto t = default_thresholds(profile.levels);
  NoiseSpec spec{std::move(profile), sigma_g, std::move(t)};
  spec.validate();
  return spec;
}

void NoiseSpec::validate() const {
  profile.validate();
  if (!(sigma_g >= 0.0) || !std::isfinite(sigma_g))
    throw ParameterError("noise spec: sigma_g must be finite and >= 0");
  if (lookup_thresholds.size() + 1 != profile.levels)
    throw ParameterError("noise spec: profile '" + profile.name + "' has " +
                         std::to_string(profile.levels) + " levels but " +
                         std::to_string(lookup_thresholds.size()) + " lookup thresholds were given");
  for (std::size_t i = 1; i < lookup_thresholds.size(); ++i)
    if (!(lookup_thresholds[i] > lookup_thresholds[i - 1]))
      throw ParameterError("noise spec: lookup thresholds must be strictly increasing");
}

std::size_t find_level(double value, std::span<const double> thresholds) {
  return static_cast<std::size_t>(
      std::upper_bound(thresholds.begin(), thresholds.end(), value) - thresholds.begin());
}

std::vector<std::size_t> assign_levels(const Matrix& emb, const NoiseSpec& spec) {
  spec.validate();
  std::vector<std::size_t> levels(emb.size(), 0);
  if (emb.empty()) return levels;
  const auto [mn, mx] = std::minmax_element(emb.values().begin(), emb.values().end());
  const double lo = *mn;
  const double span = *mx - *mn;
  for (std::size_t i = 0; i < emb.size(); ++i) {
    const double normalized = span > 0.0 ? (emb.values()[i] - lo) / span : 0.0;
    levels[i] = find_level(normalized, spec.lookup_thresholds);
  }
  return levels;
}

Matrix inject_noise(const Matrix& emb, const NoiseSpec& spec, Rng& rng) {
  const auto levels = assign_levels(emb, spec);
  Matrix out = emb;
  if (spec.sigma_g == 0.0) return out;
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] += spec.sigma_g * spec.profile.sigma_v[levels[i]] * rng.normal();
  return out;
}

// ---------------------------------------------------------------------------
// Precision

Precision parse_precision(std::string_view text) {
  if (text == "1bit" || text == "binary") return Precision::binary_1bit;
  if (text == "1.58bit" || text == "ternary") return Precision::ternary_1p58bit;
  if (text == "2bit") return Precision::uniform_2bit;
  if (text == "int4" || text == "4bit") return Precision::uniform_int4;
  throw UsageError("unknown precision '" + std::string(text) +
                   "' (expected 1bit, 1.58bit, 2bit or int4)");
}

std::string_view to_string(Precision p) noexcept {
  switch (p) {
    case Precision::binary_1bit: return "1bit";
    case Precision::ternary_1p58bit: return "1.58bit";
    case Precision::uniform_2bit: return "2bit";
    case Precision::uniform_int4: return "int4";
  }
  return "?";
}

std::size_t level_count(Precision p) noexcept {
  switch (p) {
    case Precision::binary_1bit: return 2;
    case Precision::ternary_1p58bit: return 3;
    case Precision::uniform_2bit: return 4;
    case Precision::uniform_int4: return 16;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// N2UQ

N2uqQuantizer::N2uqQuantizer(std::size_t levels, double range_lo, double range_hi,
                             std::vector<double> thresholds)
    : levels_(levels), lo_(range_lo), hi_(range_hi), t_(std::move(thresholds)) {
  if (levels_ < 2 || levels_ > 256) throw ParameterError("N2UQ: levels must be in [2, 256]");
  if (!std::isfinite(lo_) || !std::isfinite(hi_) || !(hi_ > lo_))
    throw ParameterError("N2UQ: need finite range_lo < range_hi");
  if (t_.size() != levels_ - 1) throw ParameterError("N2UQ: expected K-1 thresholds");
  for (std::size_t k = 0; k < t_.size(); ++k) {
    const double prev = k == 0 ? lo_ : t_[k - 1];
    if (!(t_[k] > prev) || !(t_[k] < hi_))
      throw ParameterError("N2UQ: thresholds must be strictly increasing inside the range");
  }
}

N2uqQuantizer N2uqQuantizer::uniform(std::size_t levels, double range_lo, double range_hi) {
  std::vector<double> t(levels > 0 ? levels - 1 : 0);
  // Equal spacing of the decision boundaries, i.e. the identity warp.
  const double span = range_hi - range_lo;
  const double denom = static_cast<double>(levels - 1);
  for (std::size_t k = 1; k < levels; ++k)
    t[k - 1] = range_lo + span * (static_cast<double>(k) - 0.5) / denom;
  return N2uqQuantizer(levels, range_lo, range_hi, std::move(t));
}

namespace {

double percentile(std::vector<double> sorted_values, double q) {
  std::sort(sorted_values.begin(), sorted_values.end());
  const double pos = q * static_cast<double>(sorted_values.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, sorted_values.size() - 1);
  const double frac = pos - static_cast<double>(i);
  return sorted_values[i] + frac * (sorted_values[j] - sorted_values[i]);
}

}  // namespace

N2uqQuantizer N2uqQuantizer::calibrate(const Matrix& batch, std::size_t levels) {
  if (batch.empty()) throw InputError("N2UQ calibrate: empty batch");
  std::vector<double> v(batch.values().begin(), batch.values().end());
  double lo = percentile(v, 0.01);
  double hi = percentile(std::move(v), 0.99);
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  return uniform(levels, lo, hi);
}

std::vector<double> N2uqQuantizer::out_levels() const {
  std::vector<double> out(levels_);
  for (std::size_t k = 0; k < levels_; ++k)
    out[k] = static_cast<double>(k) / static_cast<double>(levels_ - 1);
  return out;
}

void N2uqQuantizer::set_thresholds(std::span<const double> t) {
  if (t.size() != t_.size()) throw ShapeError("N2UQ: threshold count mismatch");
  for (double v : t)
    if (!std::isfinite(v)) throw NumericError("N2UQ: non-finite threshold");
  t_.assign(t.begin(), t.end());
  project();
}

void N2uqQuantizer::project() {
  const double gap = 1e-6 * (hi_ - lo_);
  const std::size_t n = t_.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double floor_k = lo_ + gap * static_cast<double>(k + 1);
    const double ceil_k = hi_ - gap * static_cast<double>(n - k);
    t_[k] = std::clamp(t_[k], floor_k, ceil_k);
    if (k > 0) t_[k] = std::max(t_[k], t_[k - 1] + gap);
  }
}

double N2uqQuantizer::breakpoint(std::size_t i) const noexcept {
  if (i == 0) return lo_;
  if (i == levels_) return hi_;
  return t_[i - 1];
}

double N2uqQuantizer::target(std::size_t i) const noexcept {
  if (i == 0) return 0.0;
  if (i == levels_) return static_cast<double>(levels_ - 1);
  return static_cast<double>(i) - 0.5;
}

std::size_t N2uqQuantizer::segment(double x) const noexcept {
  // Largest i in [0, K-1] with p_i <= x.
  const auto above = static_cast<std::size_t>(std::upper_bound(t_.begin(), t_.end(), x) - t_.begin());
  return above;
}

double N2uqQuantizer::warp(double x) const noexcept {
  if (x <= lo_) return 0.0;
  if (x >= hi_) return static_cast<double>(levels_ - 1);
  const std::size_t i = segment(x);
  const double p0 = breakpoint(i), p1 = breakpoint(i + 1);
  const double g0 = target(i), g1 = target(i + 1);
  return g0 + (g1 - g0) * (x - p0) / (p1 - p0);
}

std::uint8_t N2uqQuantizer::code(double x) const noexcept {
  // Same as round-half-up(warp(x)) but evaluated on the thresholds directly,
  // so ties land exactly on the upper code.
  return static_cast<std::uint8_t>(segment(x));
}

double N2uqQuantizer::surrogate(double x) const noexcept {
  return warp(x) / static_cast<double>(levels_ - 1);
}

QuantizeResult N2uqQuantizer::forward(const Matrix& x, N2uqCache* cache) const {
  QuantizeResult r{CodeMatrix(x.rows(), x.cols()), Matrix(x.rows(), x.cols())};
  const auto out = out_levels();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto c = code(x.values()[i]);
    r.codes.values()[i] = c;
    r.values.values()[i] = out[c];
  }
  if (cache != nullptr) cache->input = x;
  return r;
}

Matrix N2uqQuantizer::surrogate_forward(const Matrix& x) const {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y.values()[i] = surrogate(x.values()[i]);
  return y;
}

N2uqGrads N2uqQuantizer::backward(const N2uqCache& cache, const Matrix& grad_y) const {
  if (!cache.input) throw StateError("N2UQ: backward called before forward");
  const Matrix& x = *cache.input;
  if (grad_y.rows() != x.rows() || grad_y.cols() != x.cols())
    throw ShapeError("N2UQ: grad_y shape does not match cached forward");
  N2uqGrads g{Matrix(x.rows(), x.cols()), std::vector<double>(t_.size(), 0.0)};
  const double inv_span = 1.0 / static_cast<double>(levels_ - 1);
  for (std::size_t e = 0; e < x.size(); ++e) {
    const double xv = x.values()[e];
    const double gy = grad_y.values()[e] * inv_span;
    if (gy == 0.0 || xv < lo_ || xv > hi_) continue;
    std::size_t i = segment(xv);
    if (i >= levels_) i = levels_ - 1;
    const double p0 = breakpoint(i), p1 = breakpoint(i + 1);
    const double rise = target(i + 1) - target(i);
    const double width = p1 - p0;
    g.input.values()[e] = gy * rise / width;
    // d g / d p0 and d g / d p1 for g = g0 + rise * (x - p0) / (p1 - p0).
    const double d_p0 = rise * (xv - p1) / (width * width);
    const double d_p1 = -rise * (xv - p0) / (width * width);
    if (i >= 1) g.thresholds[i - 1] += gy * d_p0;
    if (i + 1 <= levels_ - 1) g.thresholds[i] += gy * d_p1;
  }
  return g;
}

// ---------------------------------------------------------------------------
// FixedQuantizer

FixedQuantizer::FixedQuantizer(Precision mode, double scale) : mode_(mode), scale_(scale) {
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw ParameterError("fixed quantizer: scale must be finite and > 0");
}

FixedQuantizer FixedQuantizer::calibrate(Precision mode, const Matrix& x) {
  double s = 0.0;
  if (mode == Precision::binary_1bit || mode == Precision::ternary_1p58bit) {
    for (double v : x.values()) s += std::abs(v);
    s = x.empty() ? 0.0 : s / static_cast<double>(x.size());
  } else if (!x.empty()) {
    std::vector<double> mag(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) mag[i] = std::abs(x.values()[i]);
    s = percentile(std::move(mag), 0.99);
  }
  return FixedQuantizer(mode, s > 0.0 && std::isfinite(s) ? s : 1.0);
}

std::vector<double> FixedQuantizer::codebook() const {
  switch (mode_) {
    case Precision::binary_1bit: return {-scale_, scale_};
    case Precision::ternary_1p58bit: return {-scale_, 0.0, scale_};
    default: break;
  }
  const std::size_t n = level_count(mode_);
  std::vector<double> cb(n);
  for (std::size_t k = 0; k < n; ++k)
    cb[k] = -scale_ + 2.0 * scale_ * static_cast<double>(k) / static_cast<double>(n - 1);
  return cb;
}

std::uint8_t FixedQuantizer::code(double x) const noexcept {
  switch (mode_) {
    case Precision::binary_1bit: return x >= 0.0 ? 1 : 0;
    case Precision::ternary_1p58bit: {
      const double r = std::floor(x / scale_ + 0.5);
      return static_cast<std::uint8_t>(std::clamp(r, -1.0, 1.0) + 1.0);
    }
    default: break;
  }
  const auto n = static_cast<double>(level_count(mode_));
  const double step = 2.0 * scale_ / (n - 1.0);
  const double r = std::floor((x + scale_) / step + 0.5);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, n - 1.0));
}

QuantizeResult FixedQuantizer::forward(const Matrix& x, FixedCache* cache) const {
  QuantizeResult r{CodeMatrix(x.rows(), x.cols()), Matrix(x.rows(), x.cols())};
  const auto cb = codebook();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto c = code(x.values()[i]);
    r.codes.values()[i] = c;
    r.values.values()[i] = cb[c];
  }
  if (cache != nullptr) cache->input = x;
  return r;
}

Matrix FixedQuantizer::backward(const FixedCache& cache, const Matrix& grad_y) const {
  if (!cache.input) throw StateError("fixed quantizer: backward called before forward");
  const Matrix& x = *cache.input;
  if (grad_y.rows() != x.rows() || grad_y.cols() != x.cols())
    throw ShapeError("fixed quantizer: grad_y shape does not match cached forward");
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i)
    g.values()[i] = std::abs(x.values()[i]) <= scale_ ? grad_y.values()[i] : 0.0;
  return g;
}

std::vector<double> logical_levels(const Quantizer& q) {
  if (const auto* n = std::get_if<N2uqQuantizer>(&q)) {
    auto out = n->out_levels();
    for (auto& v : out) v = 2.0 * v - 1.0;
    return out;
  }
  return std::get<FixedQuantizer>(q).codebook();
}

std::size_t level_count(const Quantizer& q) {
  if (const auto* n = std::get_if<N2uqQuantizer>(&q)) return n->levels();
  return level_count(std::get<FixedQuantizer>(q).mode());
}

// ---------------------------------------------------------------------------
// ShapingModel

PipelineOutput ShapingModel::forward(const Matrix& x, Rng* noise_rng,
                                     PipelineCache* cache) const {
  PipelineOutput out;
  out.projected = head.forward(x, cache ? &cache->linear : nullptr);
  const Matrix noisy = noise_rng ? inject_noise(out.projected, noise, *noise_rng) : out.projected;
  if (cache) cache->noise_applied = noise_rng != nullptr;
  if (const auto* n = std::get_if<N2uqQuantizer>(&quantizer)) {
    auto r = n->forward(noisy, cache ? &cache->n2uq : nullptr);
    for (auto& v : r.values.values()) v = 2.0 * v - 1.0;
    out.codes = std::move(r.codes);
    out.values = std::move(r.values);
  } else {
    auto r = std::get<FixedQuantizer>(quantizer).forward(noisy, cache ? &cache->fixed : nullptr);
    out.codes = std::move(r.codes);
    out.values = std::move(r.values);
  }
  return out;
}

ModelGrads ShapingModel::backward(const PipelineCache& cache, const Matrix& grad_values) const {
  Matrix grad_projected;
  std::vector<double> grad_t;
  if (const auto* n = std::get_if<N2uqQuantizer>(&quantizer)) {
    Matrix grad_y = grad_values;
    for (auto& v : grad_y.values()) v *= 2.0;
    auto g = n->backward(cache.n2uq, grad_y);
    grad_projected = std::move(g.input);
    grad_t = std::move(g.thresholds);
  } else {
    grad_projected = std::get<FixedQuantizer>(quantizer).backward(cache.fixed, grad_values);
  }
  // Additive noise is a constant w.r.t. the parameters: gradient passes through.
  auto lin = head.backward(cache.linear, grad_projected);
  return ModelGrads{std::move(lin.weight), std::move(lin.bias), std::move(grad_t),
                    std::move(lin.input)};
}

Matrix ShapingModel::surrogate_forward(const Matrix& x) const {
  Matrix z = head.forward(x);
  if (const auto* n = std::get_if<N2uqQuantizer>(&quantizer)) {
    Matrix y = n->surrogate_forward(z);
    for (auto& v : y.values()) v = 2.0 * v - 1.0;
    return y;
  }
  const double s = std::get<FixedQuantizer>(quantizer).scale();
  for (auto& v : z.values()) v = std::clamp(v, -s, s);
  return z;
}

}  // namespace cqcim
