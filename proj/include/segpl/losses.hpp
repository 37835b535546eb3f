#pragma once

#include "segpl/pseudo.hpp"
#include "segpl/tensor.hpp"

namespace segpl {

inline constexpr double kDiceEpsilon = 1e-8;

/// Per-image soft Dice (2 sum(a*b) + eps) / (sum a + sum b + eps), summed over
/// channels and space, averaged over the leading batch axis.
double soft_dice(const Tensor& a, const Tensor& b, double eps = kDiceEpsilon);

/// 1 - soft_dice.
double dice_loss(const Tensor& a, const Tensor& b, double eps = kDiceEpsilon);

/// dice_loss and its gradient with respect to `prediction`; `target` is a constant.
double dice_loss_with_grad(const Tensor& prediction, const Tensor& target, Tensor& d_prediction,
                           double eps = kDiceEpsilon);

struct LossBreakdown {
  double supervised = 0.0;
  double unsupervised = 0.0;  // before alpha
  double kl = 0.0;            // weighted KL term actually added to the total
  double alpha_effective = 0.0;
  double total = 0.0;
};

/// Gradients of `total` with respect to the loss inputs.
struct LossGradients {
  Tensor d_pred_labelled;
  Tensor d_pred_unlabelled;
  double d_mean = 0.0;
  double d_log_variance = 0.0;
};

/// Labelled Dice only (unsupervised and KL are zero).
LossBreakdown supervised_loss(const Tensor& pred_labelled, const Tensor& y_labelled,
                              LossGradients* grads = nullptr);

/// L_L + alpha * L_U with the pseudo mask as a constant target.
LossBreakdown segpl_loss(const Tensor& pred_labelled, const Tensor& y_labelled, const Tensor& pred_unlabelled,
                         const PseudoLabelBatch& pseudo, double alpha_effective, LossGradients* grads = nullptr);

/// KL(N(mean, sigma) || N(prior.mean, prior.stddev)) in closed form.
double kl_gaussian(const ThresholdPosterior& posterior, const PriorSpec& prior);

struct KlGradient {
  double value = 0.0;
  double d_mean = 0.0;
  double d_log_variance = 0.0;
};
KlGradient kl_gaussian_with_grad(const ThresholdPosterior& posterior, const PriorSpec& prior);

/// segpl_loss plus kl_weight * kl_gaussian(posterior, prior).
LossBreakdown segpl_vi_loss(const Tensor& pred_labelled, const Tensor& y_labelled, const Tensor& pred_unlabelled,
                            const PseudoLabelBatch& pseudo, const ThresholdPosterior& posterior,
                            const PriorSpec& prior, double alpha_effective, double kl_weight = 1.0,
                            LossGradients* grads = nullptr);

}  // namespace segpl
