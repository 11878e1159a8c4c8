#include "cqcim/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cqcim/baselines.hpp"
#include "cqcim/errors.hpp"

namespace cqcim {

void LossConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ParameterError("loss: temperature must be > 0");
  if (!(lambda_mse >= 0.0) || !std::isfinite(lambda_mse))
    throw ParameterError("loss: lambda_mse must be >= 0");
}

void TrainConfig::validate() const {
  loss.validate();
  auto rate = [](double r, const char* name) {
    if (!(r >= 0.0 && r <= 1.0)) throw ParameterError(std::string(name) + " must be in [0, 1]");
  };
  rate(dropout_rate_pos, "dropout_rate_pos");
  if (dropout_rate_neg) rate(*dropout_rate_neg, "dropout_rate_neg");
  rate(adam_beta1, "adam_beta1");
  rate(adam_beta2, "adam_beta2");
  if (dropout_rate_pos >= 1.0 || (dropout_rate_neg && *dropout_rate_neg >= 1.0))
    throw ParameterError("dropout rates must be < 1");
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be > 0");
  if (!(adam_eps > 0.0)) throw ParameterError("adam_eps must be > 0");
  if (batch_size == 0) throw ParameterError("batch_size must be > 0");
  if (!(sigma_g >= 0.0)) throw ParameterError("sigma_g must be >= 0");
}

// ---------------------------------------------------------------------------
// Losses

namespace {

std::vector<double> row_norms(const Matrix& m, const char* which) {
  std::vector<double> n(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    n[i] = norm2(m.row(i));
    if (!(n[i] > 0.0)) {
      std::ostringstream msg;
      msg << "contrastive_loss: zero-norm " << which << " row " << i;
      throw NumericError(msg.str());
    }
  }
  return n;
}

// d cos(a, b) / d a scaled by `coef`, accumulated into `ga`.
void add_cos_grad(std::span<const double> a, std::span<const double> b, double na, double nb,
                  double cos, double coef, std::span<double> ga) {
  for (std::size_t k = 0; k < a.size(); ++k)
    ga[k] += coef * (b[k] / (na * nb) - cos * a[k] / (na * na));
}

}  // namespace

ContrastiveResult contrastive_loss(const Matrix& anchor, const Matrix& positive,
                                   const Matrix* negative, const LossConfig& cfg) {
  cfg.validate();
  const std::size_t n = anchor.rows();
  if (positive.rows() != n || positive.cols() != anchor.cols())
    throw ShapeError("contrastive_loss: anchor/positive shapes differ");
  if (negative && (negative->rows() != n || negative->cols() != anchor.cols()))
    throw ShapeError("contrastive_loss: negative shape differs");

  ContrastiveResult r{0.0, Matrix(anchor.rows(), anchor.cols()),
                      Matrix(positive.rows(), positive.cols()), std::nullopt};
  if (negative) r.grad_negative = Matrix(negative->rows(), negative->cols());
  if (n == 0) return r;

  const auto na = row_norms(anchor, "anchor");
  const auto np = row_norms(positive, "positive");
  const auto nn = negative ? row_norms(*negative, "negative") : std::vector<double>{};
  const std::size_t cands = negative ? 2 * n : n;
  const double inv_tau = 1.0 / cfg.temperature;
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<double> cos(cands), prob(cands);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = anchor.row(i);
    for (std::size_t j = 0; j < n; ++j) cos[j] = dot(a, positive.row(j)) / (na[i] * np[j]);
    if (negative)
      for (std::size_t j = 0; j < n; ++j)
        cos[n + j] = dot(a, negative->row(j)) / (na[i] * nn[j]);
    double mx = -std::numeric_limits<double>::infinity();
    for (double c : cos) mx = std::max(mx, c * inv_tau);
    double z = 0.0;
    for (std::size_t j = 0; j < cands; ++j) {
      prob[j] = std::exp(cos[j] * inv_tau - mx);
      z += prob[j];
    }
    for (auto& p : prob) p /= z;
    r.value += (mx + std::log(z) - cos[i] * inv_tau) * inv_n;

    // dL_i / dlogit_j = p_j - [j == i]; logit = cos / tau.
    for (std::size_t j = 0; j < cands; ++j) {
      const double coef = (prob[j] - (j == i ? 1.0 : 0.0)) * inv_tau * inv_n;
      if (coef == 0.0) continue;
      const bool neg = j >= n;
      const std::size_t jj = neg ? j - n : j;
      const Matrix& other = neg ? *negative : positive;
      const double no = neg ? nn[jj] : np[jj];
      Matrix& g_other = neg ? *r.grad_negative : r.grad_positive;
      add_cos_grad(a, other.row(jj), na[i], no, cos[j], coef, r.grad_anchor.row(i));
      add_cos_grad(other.row(jj), a, no, na[i], cos[j], coef, g_other.row(jj));
    }
  }
  return r;
}

LossWithGrad mse_loss(const Matrix& orig, const Matrix& reconstructed) {
  if (orig.rows() != reconstructed.rows() || orig.cols() != reconstructed.cols())
    throw ShapeError("mse_loss: shape mismatch");
  LossWithGrad r{0.0, Matrix(orig.rows(), orig.cols())};
  if (orig.empty()) return r;
  const double inv = 1.0 / static_cast<double>(orig.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    const double diff = reconstructed.values()[i] - orig.values()[i];
    r.value += diff * diff;
    r.grad.values()[i] = 2.0 * diff * inv;
  }
  r.value *= inv;
  return r;
}

double joint_loss(double cse, double mse, const LossConfig& cfg) {
  if (!(cfg.lambda_mse >= 0.0)) throw ParameterError("joint_loss: lambda_mse must be >= 0");
  return cse + cfg.lambda_mse * mse;
}

// ---------------------------------------------------------------------------
// Views

namespace {

Matrix dropout(const Matrix& x, double p, Rng& rng) {
  Matrix out = x;
  if (p <= 0.0) return out;
  const double keep = 1.0 / (1.0 - p);
  for (auto& v : out.values()) v = rng.uniform() < p ? 0.0 : v * keep;
  return out;
}

}  // namespace

ViewBatch make_views(const Matrix& embeddings, const TrainConfig& cfg, Rng& rng,
                     const PairedViews* paired) {
  if (cfg.pair_mode == PairMode::from_file) {
    if (paired == nullptr) throw InputError("make_views: from_file mode without paired views");
    if (paired->anchor.rows() != paired->positive.rows() ||
        paired->anchor.cols() != paired->positive.cols())
      throw InputError("make_views: paired view blocks differ in shape");
    return ViewBatch{paired->anchor, paired->positive, paired->negative};
  }
  ViewBatch v{embeddings, dropout(embeddings, cfg.dropout_rate_pos, rng), std::nullopt};
  if (cfg.dropout_rate_neg) v.negative = dropout(embeddings, *cfg.dropout_rate_neg, rng);
  return v;
}

// ---------------------------------------------------------------------------
// Lift

Matrix ReconstructionLift::apply(const Matrix& v) const {
  Matrix out = matmul_nt(v, basis);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = offset[j] + scale * r[j];
  }
  return out;
}

Matrix ReconstructionLift::pullback(const Matrix& grad_lifted) const {
  Matrix g = matmul(grad_lifted, basis);
  for (auto& x : g.values()) x *= scale;
  return g;
}

// ---------------------------------------------------------------------------
// Init

ShapingModelState init_state(const Matrix& corpus, const NoiseSpec& noise,
                             const InitOptions& opts) {
  noise.validate();
  if (corpus.rows() == 0) throw InputError("init_state: empty corpus");
  const std::size_t in_dim = corpus.cols();
  if (opts.dim == 0 || opts.dim > in_dim)
    throw ParameterError("init_state: dim must be in [1, input dimension]");
  Rng rng(opts.seed, 0xC0FFEE);

  std::vector<double> mean(in_dim, 0.0);
  for (std::size_t i = 0; i < corpus.rows(); ++i)
    for (std::size_t j = 0; j < in_dim; ++j) mean[j] += corpus(i, j);
  for (auto& m : mean) m /= static_cast<double>(corpus.rows());

  Matrix basis;
  std::optional<CompressionHead> head;
  if (opts.init == InitMode::pca) {
    std::optional<PcaModel> fitted;
    if (opts.pca) {
      if (opts.pca->input_dim() != in_dim || opts.pca->output_dim() != opts.dim)
        throw ShapeError("init_state: supplied PCA fit does not match corpus and dim");
    } else {
      fitted = pca_fit(corpus, opts.dim);
    }
    const PcaModel& pca = opts.pca ? *opts.pca : *fitted;
    // Unit RMS projection: W = P / sqrt(mean eigenvalue), b = -mean W.
    double mean_eig = 0.0;
    for (double e : pca.eigenvalues) mean_eig += e;
    mean_eig /= static_cast<double>(opts.dim);
    const double c = mean_eig > 0.0 ? 1.0 / std::sqrt(mean_eig) : 1.0;
    Matrix w = pca.components;
    for (auto& x : w.values()) x *= c;
    std::vector<double> b(opts.dim, 0.0);
    for (std::size_t j = 0; j < opts.dim; ++j)
      for (std::size_t r = 0; r < in_dim; ++r) b[j] -= mean[r] * w(r, j);
    head.emplace(std::move(w), std::move(b));
    basis = pca.components;
  } else {
    head = CompressionHead::random(in_dim, opts.dim, rng);
    basis = random_orthonormal(in_dim, opts.dim, rng);
  }

  const Matrix projected = head->forward(corpus);
  Quantizer quantizer = opts.learned_quantizer
                            ? Quantizer(N2uqQuantizer::calibrate(projected, level_count(opts.precision)))
                            : Quantizer(FixedQuantizer::calibrate(opts.precision, projected));
  ShapingModelState state{ShapingModel{std::move(*head), std::move(quantizer), noise},
                          ReconstructionLift{std::move(basis), mean, 1.0},
                          {},
                          {},
                          {},
                          0};

  // Least-squares scale between the lifted output and the centered corpus.
  const Matrix values = state.model.shape(corpus).values;
  const Matrix dir = matmul_nt(values, state.lift.basis);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < corpus.rows(); ++i)
    for (std::size_t j = 0; j < in_dim; ++j) {
      num += (corpus(i, j) - mean[j]) * dir(i, j);
      den += dir(i, j) * dir(i, j);
    }
  state.lift.scale = den > 0.0 && num > 0.0 ? num / den : 1.0;

  const auto& w = state.model.head.weight();
  state.weight_moments = {std::vector<double>(w.size(), 0.0), std::vector<double>(w.size(), 0.0)};
  state.bias_moments = {std::vector<double>(opts.dim, 0.0), std::vector<double>(opts.dim, 0.0)};
  if (const auto* n = std::get_if<N2uqQuantizer>(&state.model.quantizer)) {
    const auto k = n->thresholds().size();
    state.threshold_moments = {std::vector<double>(k, 0.0), std::vector<double>(k, 0.0)};
  }
  return state;
}

// ---------------------------------------------------------------------------
// Adam

namespace {

void check_finite(std::span<const double> g, const char* name) {
  for (double v : g)
    if (!std::isfinite(v))
      throw NumericError(std::string("adam_step: non-finite gradient for ") + name);
}

void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& mom,
                 const TrainConfig& cfg, std::uint64_t step, const char* name) {
  if (grad.size() != param.size() || mom.m.size() != param.size() || mom.v.size() != param.size())
    throw ShapeError(std::string("adam_step: size mismatch for ") + name);
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    mom.m[i] = cfg.adam_beta1 * mom.m[i] + (1.0 - cfg.adam_beta1) * grad[i];
    mom.v[i] = cfg.adam_beta2 * mom.v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
    const double mhat = mom.m[i] / bc1;
    const double vhat = mom.v[i] / bc2;
    param[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
}

}  // namespace

void adam_step(ShapingModelState& state, const ParameterGrads& grads, const TrainConfig& cfg) {
  check_finite(grads.weight.values(), "weight");
  check_finite(grads.bias, "bias");
  check_finite(grads.thresholds, "thresholds");
  auto* n2uq = std::get_if<N2uqQuantizer>(&state.model.quantizer);
  if (n2uq && grads.thresholds.size() != n2uq->thresholds().size())
    throw ShapeError("adam_step: threshold gradient size mismatch");

  ++state.step;
  auto& head = state.model.head;
  adam_update(head.weight().values(), grads.weight.values(), state.weight_moments, cfg,
              state.step, "weight");
  adam_update(head.bias(), grads.bias, state.bias_moments, cfg, state.step, "bias");
  if (n2uq) {
    std::vector<double> t = n2uq->thresholds();
    adam_update(t, grads.thresholds, state.threshold_moments, cfg, state.step, "thresholds");
    n2uq->set_thresholds(t);
  }
}

// ---------------------------------------------------------------------------
// Objective + loop

StepLoss joint_objective(const ShapingModelState& state, const ViewBatch& views,
                         const LossConfig& cfg, Rng* noise_rng, ParameterGrads* grads) {
  const ShapingModel& model = state.model;
  PipelineCache ca, cp, cn;
  const PipelineOutput oa = model.forward(views.anchor, noise_rng, &ca);
  const PipelineOutput op = model.forward(views.positive, noise_rng, &cp);
  std::optional<PipelineOutput> on;
  if (views.negative) on = model.forward(*views.negative, noise_rng, &cn);

  const auto cse = contrastive_loss(oa.values, op.values, on ? &on->values : nullptr, cfg);
  const Matrix lifted = state.lift.apply(oa.values);
  auto mse = mse_loss(views.anchor, lifted);
  // Per-row squared L2 norm averaged over rows = D * elementwise mean.
  const auto dim = static_cast<double>(views.anchor.cols());
  const double recon = mse.value * dim;

  StepLoss loss{joint_loss(cse.value, recon, cfg), cse.value, recon};
  if (grads == nullptr) return loss;

  for (auto& g : mse.grad.values()) g *= dim * cfg.lambda_mse;
  Matrix grad_anchor = cse.grad_anchor;
  const Matrix recon_grad = state.lift.pullback(mse.grad);
  for (std::size_t i = 0; i < grad_anchor.size(); ++i)
    grad_anchor.values()[i] += recon_grad.values()[i];

  auto accumulate = [&](const ModelGrads& g, bool first) {
    if (first) {
      grads->weight = g.weight;
      grads->bias = g.bias;
      grads->thresholds = g.thresholds;
      return;
    }
    for (std::size_t i = 0; i < g.weight.size(); ++i)
      grads->weight.values()[i] += g.weight.values()[i];
    for (std::size_t i = 0; i < g.bias.size(); ++i) grads->bias[i] += g.bias[i];
    for (std::size_t i = 0; i < g.thresholds.size(); ++i) grads->thresholds[i] += g.thresholds[i];
  };
  accumulate(model.backward(ca, grad_anchor), true);
  accumulate(model.backward(cp, cse.grad_positive), false);
  if (on) accumulate(model.backward(cn, *cse.grad_negative), false);
  return loss;
}

TrainResult train(const Matrix& corpus, ShapingModelState& state, const TrainConfig& cfg,
                  const PairedViews* paired) {
  cfg.validate();
  if (corpus.rows() == 0) throw InputError("train: empty corpus");
  if (corpus.cols() != state.model.head.input_dim())
    throw ShapeError("train: corpus dimension does not match the compression head");
  if (cfg.pair_mode == PairMode::from_file) {
    if (paired == nullptr) throw InputError("train: from_file mode requires paired views");
    if (paired->anchor.rows() != corpus.rows() || paired->anchor.cols() != corpus.cols())
      throw InputError("train: paired views do not match the corpus shape");
  }

  state.model.noise.sigma_g = cfg.sigma_g;
  TrainResult result;
  Rng rng(cfg.seed, 0x7EA1);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(rng, corpus.rows());
    double total = 0.0, cse = 0.0, recon = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, count);
      const Matrix batch = corpus.gather_rows(idx);
      std::optional<PairedViews> batch_pairs;
      if (paired) {
        batch_pairs = PairedViews{paired->anchor.gather_rows(idx), paired->positive.gather_rows(idx),
                                  std::nullopt};
        if (paired->negative) batch_pairs->negative = paired->negative->gather_rows(idx);
      }
      const ViewBatch views = make_views(batch, cfg, rng, batch_pairs ? &*batch_pairs : nullptr);

      ParameterGrads grads;
      Rng* noise = cfg.sigma_g > 0.0 ? &rng : nullptr;
      const StepLoss loss = joint_objective(state, views, cfg.loss, noise, &grads);
      if (!std::isfinite(loss.total)) {
        std::ostringstream msg;
        msg << "train: loss became non-finite at epoch " << epoch << ", step " << batches;
        throw NumericError(msg.str());
      }
      adam_step(state, grads, cfg);
      total += loss.total;
      cse += loss.contrastive;
      recon += loss.reconstruction;
      ++batches;
    }
    const double inv = batches ? 1.0 / static_cast<double>(batches) : 0.0;
    result.epoch_loss.push_back(total * inv);
    result.epoch_contrastive.push_back(cse * inv);
    result.epoch_reconstruction.push_back(recon * inv);
  }
  return result;
}

double reconstruction_error(const ShapingModelState& state, const Matrix& corpus) {
  const Matrix lifted = state.lift.apply(state.model.shape(corpus).values);
  return mse_loss(corpus, lifted).value * static_cast<double>(corpus.cols());
}

}  // namespace cqcim
