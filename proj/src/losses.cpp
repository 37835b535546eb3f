#include "segpl/losses.hpp"

#include <cmath>
#include <string>

#include "segpl/error.hpp"

namespace segpl {

namespace {

void check_pair(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("dice operands differ in shape: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  if (a.rank() < 2) throw ShapeError("dice operands need a leading batch axis, got " + shape_string(a.shape()));
  if (!(a.dim(0) > 0)) throw ShapeError("dice operands have an empty batch");
}

void check_eps(double eps) {
  if (!(eps > 0.0)) throw ValidationError("dice epsilon must be positive");
}

}  // namespace

double soft_dice(const Tensor& a, const Tensor& b, double eps) {
  check_pair(a, b);
  check_eps(eps);
  const int batch = a.dim(0);
  const std::size_t n = a.batch_stride();
  double total = 0.0;
  for (int i = 0; i < batch; ++i) {
    const double* pa = a.data() + static_cast<std::size_t>(i) * n;
    const double* pb = b.data() + static_cast<std::size_t>(i) * n;
    double inter = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      inter += pa[k] * pb[k];
      sa += pa[k];
      sb += pb[k];
    }
    total += (2.0 * inter + eps) / (sa + sb + eps);
  }
  return total / batch;
}

double dice_loss(const Tensor& a, const Tensor& b, double eps) { return 1.0 - soft_dice(a, b, eps); }

double dice_loss_with_grad(const Tensor& prediction, const Tensor& target, Tensor& d_prediction, double eps) {
  check_pair(prediction, target);
  check_eps(eps);
  const int batch = prediction.dim(0);
  const std::size_t n = prediction.batch_stride();
  d_prediction = Tensor(prediction.shape());
  double total = 0.0;
  for (int i = 0; i < batch; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * n;
    const double* p = prediction.data() + off;
    const double* t = target.data() + off;
    double inter = 0.0, sp = 0.0, st = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      inter += p[k] * t[k];
      sp += p[k];
      st += t[k];
    }
    const double num = 2.0 * inter + eps;
    const double den = sp + st + eps;
    total += num / den;
    // d(1 - mean_i num/den)/dp_k = -(2 t_k den - num) / (den^2 * batch)
    const double scale = -1.0 / (den * den * batch);
    double* d = d_prediction.data() + off;
    for (std::size_t k = 0; k < n; ++k) d[k] = scale * (2.0 * t[k] * den - num);
  }
  return 1.0 - total / batch;
}

LossBreakdown supervised_loss(const Tensor& pred_labelled, const Tensor& y_labelled, LossGradients* grads) {
  if (pred_labelled.empty()) throw ValidationError("a labelled batch is required");
  LossBreakdown out;
  if (grads) {
    out.supervised = dice_loss_with_grad(pred_labelled, y_labelled, grads->d_pred_labelled);
  } else {
    out.supervised = dice_loss(pred_labelled, y_labelled);
  }
  out.total = out.supervised;
  return out;
}

LossBreakdown segpl_loss(const Tensor& pred_labelled, const Tensor& y_labelled, const Tensor& pred_unlabelled,
                         const PseudoLabelBatch& pseudo, double alpha_effective, LossGradients* grads) {
  if (!pseudo.detached) throw ValidationError("pseudo labels must be detached targets");
  if (!(alpha_effective >= 0.0)) throw ValidationError("alpha_effective must be non-negative");
  LossBreakdown out = supervised_loss(pred_labelled, y_labelled, grads);
  out.alpha_effective = alpha_effective;
  if (grads) {
    out.unsupervised = dice_loss_with_grad(pred_unlabelled, pseudo.mask, grads->d_pred_unlabelled);
    grads->d_pred_unlabelled *= alpha_effective;
  } else {
    out.unsupervised = dice_loss(pred_unlabelled, pseudo.mask);
  }
  out.total = out.supervised + alpha_effective * out.unsupervised + out.kl;
  return out;
}

KlGradient kl_gaussian_with_grad(const ThresholdPosterior& posterior, const PriorSpec& prior) {
  posterior.validate();
  prior.validate();
  const double var = std::exp(posterior.log_variance);
  const double prior_var = prior.stddev * prior.stddev;
  const double gap = posterior.mean - prior.mean;
  KlGradient g;
  // log(sigma_p) - log(sigma) + (sigma^2 + gap^2) / (2 sigma_p^2) - 1/2, with log(sigma) = log_variance / 2.
  g.value = std::log(prior.stddev) - 0.5 * posterior.log_variance + (var + gap * gap) / (2.0 * prior_var) - 0.5;
  g.d_mean = gap / prior_var;
  g.d_log_variance = -0.5 + var / (2.0 * prior_var);
  return g;
}

double kl_gaussian(const ThresholdPosterior& posterior, const PriorSpec& prior) {
  return kl_gaussian_with_grad(posterior, prior).value;
}

LossBreakdown segpl_vi_loss(const Tensor& pred_labelled, const Tensor& y_labelled, const Tensor& pred_unlabelled,
                            const PseudoLabelBatch& pseudo, const ThresholdPosterior& posterior,
                            const PriorSpec& prior, double alpha_effective, double kl_weight,
                            LossGradients* grads) {
  if (!(kl_weight >= 0.0)) throw ValidationError("kl_weight must be non-negative");
  LossBreakdown out = segpl_loss(pred_labelled, y_labelled, pred_unlabelled, pseudo, alpha_effective, grads);
  const KlGradient kl = kl_gaussian_with_grad(posterior, prior);
  out.kl = kl_weight * kl.value;
  out.total = out.supervised + alpha_effective * out.unsupervised + out.kl;
  if (grads) {
    grads->d_mean = kl_weight * kl.d_mean;
    grads->d_log_variance = kl_weight * kl.d_log_variance;
  }
  return out;
}

}  // namespace segpl
