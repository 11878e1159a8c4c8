#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cqcim/baselines.hpp"
#include "cqcim/numkit.hpp"
#include "cqcim/shaping.hpp"

namespace cqcim {

/// Row i of `positive` (and `negative`) is another view of row i of `anchor`.
struct ViewBatch {
  Matrix anchor;
  Matrix positive;
  std::optional<Matrix> negative;
};

struct LossConfig {
  double temperature = 0.05;
  double lambda_mse = 8.0;

  void validate() const;
};

enum class PairMode { synthetic_dropout, from_file };

enum class InitMode { pca, random };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double sigma_g = 0.1;
  double dropout_rate_pos = 0.05;
  std::optional<double> dropout_rate_neg;
  PairMode pair_mode = PairMode::synthetic_dropout;
  LossConfig loss;

  void validate() const;
};

struct LossWithGrad {
  double value = 0.0;
  Matrix grad;
};

struct ContrastiveResult {
  double value = 0.0;
  Matrix grad_anchor;
  Matrix grad_positive;
  std::optional<Matrix> grad_negative;
};

/// InfoNCE over cosine similarities. For anchor i the candidates are every
/// positive j (and every negative j when present); the target is positive i.
/// Averaged over anchors. Throws NumericError naming the row on a zero norm.
ContrastiveResult contrastive_loss(const Matrix& anchor, const Matrix& positive,
                                   const Matrix* negative, const LossConfig& cfg);

/// Mean over all elements of (recon - orig)^2.
LossWithGrad mse_loss(const Matrix& orig, const Matrix& reconstructed);

double joint_loss(double cse, double mse, const LossConfig& cfg);

/// Paired views loaded from disk (anchor/positive/optional negative blocks).
struct PairedViews {
  Matrix anchor;
  Matrix positive;
  std::optional<Matrix> negative;
};

/// Builds the contrastive views for a batch of embeddings. In
/// synthetic_dropout mode every component is zeroed with probability p and
/// the survivors scaled by 1/(1-p); from_file mode returns `paired`.
ViewBatch make_views(const Matrix& embeddings, const TrainConfig& cfg, Rng& rng,
                     const PairedViews* paired = nullptr);

/// Frozen affine map R^d -> R^D used to compare the low-dimensional output
/// with the original embedding: lifted = offset + scale * v * basis^T.
struct ReconstructionLift {
  Matrix basis;  ///< D x d, orthonormal columns
  std::vector<double> offset;
  double scale = 1.0;

  Matrix apply(const Matrix& v) const;
  /// Gradient w.r.t. v given the gradient w.r.t. the lifted output.
  Matrix pullback(const Matrix& grad_lifted) const;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

struct ShapingModelState {
  ShapingModel model;
  ReconstructionLift lift;
  AdamMoments weight_moments;
  AdamMoments bias_moments;
  AdamMoments threshold_moments;
  std::uint64_t step = 0;
};

struct InitOptions {
  std::size_t dim = 128;
  Precision precision = Precision::uniform_2bit;
  bool learned_quantizer = true;  ///< N2UQ; false selects the fixed STE quantizer
  InitMode init = InitMode::pca;
  std::uint64_t seed = 0;
  /// Reuse an existing fit of the same corpus (must have `dim` components).
  const PcaModel* pca = nullptr;
};

/// Builds a fresh state: compression head (principal subspace of `corpus`
/// or Glorot random), quantizer calibrated on the projected corpus, noise
/// spec and frozen reconstruction lift.
ShapingModelState init_state(const Matrix& corpus, const NoiseSpec& noise,
                             const InitOptions& opts);

struct ParameterGrads {
  Matrix weight;
  std::vector<double> bias;
  std::vector<double> thresholds;
};

/// One bias-corrected Adam update of W, b and (for N2UQ) the thresholds,
/// followed by threshold re-projection.
void adam_step(ShapingModelState& state, const ParameterGrads& grads, const TrainConfig& cfg);

struct StepLoss {
  double total = 0.0;
  double contrastive = 0.0;
  double reconstruction = 0.0;
};

/// Forward + backward of the joint objective on one view batch. The
/// reconstruction term is the per-row squared L2 distance between the anchor
/// embedding and the lifted quantized anchor output, averaged over rows.
StepLoss joint_objective(const ShapingModelState& state, const ViewBatch& views,
                         const LossConfig& cfg, Rng* noise_rng, ParameterGrads* grads);

struct TrainResult {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_contrastive;
  std::vector<double> epoch_reconstruction;
};

/// cfg.sigma_g replaces the model's noise factor before the first step.
TrainResult train(const Matrix& corpus, ShapingModelState& state, const TrainConfig& cfg,
                  const PairedViews* paired = nullptr);

/// Mean per-row squared distance between `corpus` and the lifted,
/// noise-free quantized output.
double reconstruction_error(const ShapingModelState& state, const Matrix& corpus);

}  // namespace cqcim
