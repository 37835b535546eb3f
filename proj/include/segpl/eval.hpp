#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "segpl/backbone.hpp"
#include "segpl/data.hpp"
#include "segpl/pseudo.hpp"

namespace segpl {

/// Final label masks: p > 0.5 for one channel; one-hot argmax across channels otherwise.
Tensor label_masks(const Tensor& probabilities);

/// |pred ∩ gt| / |pred ∪ gt| over binary arrays; 1.0 when both are empty.
double iou(const Tensor& pred_mask, const Tensor& gt_mask);

/// Per-image IoU of [B, C, ...] masks. With C > 1 the per-class IoUs are macro-averaged.
std::vector<double> per_image_iou(const Tensor& pred_masks, const Tensor& gt_masks);

/// Mean squared difference between foreground probability and binary ground truth.
double brier(const Tensor& probabilities, const Tensor& gt_mask);

struct McPrediction {
  Tensor mean_map;                  // vote fraction per pixel
  std::vector<Tensor> sample_masks;
  std::vector<double> thresholds;
  ThresholdPosterior posterior;
};

inline constexpr int kDefaultMcSamples = 5;

/// One forward pass, `n_samples` thresholds from the head's posterior.
McPrediction mc_predict(const Backbone& model, const PosteriorHead* head, const Tensor& images,
                        int n_samples = kDefaultMcSamples, std::uint64_t seed = 0);
/// Same with caller-supplied standard-normal draws (one per sample).
McPrediction mc_predict_with_noise(const Backbone& model, const PosteriorHead* head, const Tensor& images,
                                   std::span<const double> noise);

/// x + eps * sign(d dice_loss(model(x), gt) / dx), clipped to `range`.
Tensor fgsm_attack(const Backbone& model, const Tensor& images, const Tensor& gt_masks, double eps,
                   Interval range = {0.0, 1.0});

struct EvalReport {
  std::vector<double> per_image_iou;
  double mean_iou = 0.0;
  double std_iou = 0.0;
  double brier = 0.0;
  std::vector<std::pair<double, double>> gamma_table;    // gamma -> mean IoU, ascending
  std::vector<std::pair<double, double>> epsilon_table;  // eps -> mean IoU, ascending
  int mc_samples = 0;
};

struct EvalOptions {
  int batch_size = 8;
  int mc_samples = kDefaultMcSamples;  // used only when a head is given
  std::uint64_t seed = 0;
};

/// Clean IoU on the pool; Brier uses the MC vote map when `head` is given,
/// raw sigmoid probabilities otherwise.
EvalReport evaluate(const Backbone& model, const PosteriorHead* head, const SamplePool& pool,
                    const EvalOptions& options = {});

/// Mean IoU over the pool for each gamma (OOD mix-up) and each FGSM eps.
EvalReport robustness_sweep(const Backbone& model, const SamplePool& pool, std::vector<double> gammas,
                            std::vector<double> epsilons, const OodOptions& ood = {}, std::uint64_t seed = 0,
                            int batch_size = 8);

/// Mean per-image IoU at threshold 0.5; used for model selection.
double mean_iou(const Backbone& model, const SamplePool& pool, int batch_size = 8);

}  // namespace segpl
