#include "segpl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "segpl/error.hpp"
#include "segpl/losses.hpp"
#include "segpl/ops.hpp"

namespace segpl {

namespace {

void require_binary(const Tensor& t, const char* what) {
  for (double v : t.values()) {
    if (v != 0.0 && v != 1.0) throw ValidationError(std::string(what) + " must be binary");
  }
}

template <typename Fn>
void for_each_chunk(std::size_t n, int batch_size, Fn&& fn) {
  const std::size_t step = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t begin = 0; begin < n; begin += step) {
    std::vector<std::size_t> idx(std::min(step, n - begin));
    std::iota(idx.begin(), idx.end(), begin);
    fn(idx);
  }
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

Tensor label_masks(const Tensor& probabilities) {
  if (probabilities.rank() < 3) throw ShapeError("label_masks expects [B, C, spatial...]");
  Tensor out(probabilities.shape());
  const int channels = probabilities.dim(1);
  if (channels == 1) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = probabilities[i] > 0.5 ? 1.0 : 0.0;
    return out;
  }
  const std::size_t per_image = probabilities.batch_stride();
  const std::size_t spatial = per_image / static_cast<std::size_t>(channels);
  for (int b = 0; b < probabilities.dim(0); ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * per_image;
    for (std::size_t s = 0; s < spatial; ++s) {
      int best = 0;
      for (int c = 1; c < channels; ++c) {
        if (probabilities[base + c * spatial + s] > probabilities[base + best * spatial + s]) best = c;
      }
      out[base + static_cast<std::size_t>(best) * spatial + s] = 1.0;
    }
  }
  return out;
}

double iou(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt)) {
    throw ShapeError("iou operands differ: " + shape_string(pred.shape()) + " vs " + shape_string(gt.shape()));
  }
  require_binary(pred, "predicted mask");
  require_binary(gt, "ground-truth mask");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0.0, b = gt[i] != 0.0;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> per_image_iou(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt)) {
    throw ShapeError("iou operands differ: " + shape_string(pred.shape()) + " vs " + shape_string(gt.shape()));
  }
  const int channels = pred.dim(1);
  std::vector<double> out;
  for (int b = 0; b < pred.dim(0); ++b) {
    const Tensor p = pred.slice_batch(b, b + 1), g = gt.slice_batch(b, b + 1);
    if (channels == 1) {
      out.push_back(iou(p, g));
      continue;
    }
    const std::size_t spatial = p.size() / static_cast<std::size_t>(channels);
    double sum = 0.0;
    for (int c = 0; c < channels; ++c) {
      const std::size_t off = static_cast<std::size_t>(c) * spatial;
      const auto pv = p.values().subspan(off, spatial), gv = g.values().subspan(off, spatial);
      Tensor pc({static_cast<int>(spatial)}, std::vector<double>(pv.begin(), pv.end()));
      Tensor gc({static_cast<int>(spatial)}, std::vector<double>(gv.begin(), gv.end()));
      sum += iou(pc, gc);
    }
    out.push_back(sum / channels);
  }
  return out;
}

double brier(const Tensor& p, const Tensor& y) {
  if (!p.same_shape(y)) {
    throw ShapeError("brier operands differ: " + shape_string(p.shape()) + " vs " + shape_string(y.shape()));
  }
  if (p.empty()) throw ShapeError("brier of an empty array");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - y[i]) * (p[i] - y[i]);
  return s / static_cast<double>(p.size());
}

McPrediction mc_predict_with_noise(const Backbone& model, const PosteriorHead* head, const Tensor& images,
                                   std::span<const double> noise) {
  if (!head) throw ValidationError("MC threshold sampling needs a trained threshold head");
  if (noise.empty()) throw ValidationError("MC prediction needs at least one sample");
  const ForwardResult fwd = model.forward(images);
  McPrediction out;
  out.posterior = head->forward(fwd.bottleneck_features).posterior;
  out.mean_map = Tensor(fwd.probabilities.shape());
  for (double z : noise) {
    PseudoLabelBatch labels = make_pseudo_labels_vi(fwd.probabilities, out.posterior, z);
    out.mean_map += labels.mask;
    out.thresholds.push_back(labels.threshold_used);
    out.sample_masks.push_back(std::move(labels.mask));
  }
  out.mean_map *= 1.0 / static_cast<double>(noise.size());
  return out;
}

McPrediction mc_predict(const Backbone& model, const PosteriorHead* head, const Tensor& images, int n_samples,
                        std::uint64_t seed) {
  if (n_samples < 1) throw ValidationError("MC prediction needs n_samples >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> noise(static_cast<std::size_t>(n_samples));
  for (double& z : noise) z = normal(rng);
  return mc_predict_with_noise(model, head, images, noise);
}

Tensor fgsm_attack(const Backbone& model, const Tensor& images, const Tensor& gt, double eps, Interval range) {
  if (!(eps >= 0.0)) throw ValidationError("FGSM eps must be non-negative");
  if (eps == 0.0) return images;
  const ForwardResult fwd = model.forward(images);
  Tensor d_prob;
  dice_loss_with_grad(fwd.probabilities, gt, d_prob);
  const BackboneGradients g = model.backward(fwd, ops::sigmoid_backward(fwd.probabilities, d_prob), nullptr, true);
  Tensor out(images.shape());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const double d = g.input[i];
    const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    out[i] = std::clamp(images[i] + eps * sign, range.lo, range.hi);
  }
  return out;
}

double mean_iou(const Backbone& model, const SamplePool& pool, int batch_size) {
  std::vector<double> all;
  for_each_chunk(pool.size(), batch_size, [&](const std::vector<std::size_t>& idx) {
    const ImageBatch b = stack_batch(pool, idx, true);
    const auto v = per_image_iou(label_masks(model.forward(b.images).probabilities), b.masks);
    all.insert(all.end(), v.begin(), v.end());
  });
  return mean_of(all);
}

EvalReport evaluate(const Backbone& model, const PosteriorHead* head, const SamplePool& pool,
                    const EvalOptions& options) {
  if (pool.size() == 0) throw ValidationError("cannot evaluate an empty pool");
  EvalReport report;
  report.mc_samples = head ? options.mc_samples : 0;
  double brier_sum = 0.0;
  std::size_t brier_count = 0;
  std::uint64_t chunk = 0;
  for_each_chunk(pool.size(), options.batch_size, [&](const std::vector<std::size_t>& idx) {
    const ImageBatch b = stack_batch(pool, idx, true);
    const ForwardResult fwd = model.forward(b.images);
    const auto v = per_image_iou(label_masks(fwd.probabilities), b.masks);
    report.per_image_iou.insert(report.per_image_iou.end(), v.begin(), v.end());
    Tensor calibrated = fwd.probabilities;
    if (head) calibrated = mc_predict(model, head, b.images, options.mc_samples, options.seed + chunk).mean_map;
    brier_sum += brier(calibrated, b.masks) * static_cast<double>(calibrated.size());
    brier_count += calibrated.size();
    ++chunk;
  });
  report.mean_iou = mean_of(report.per_image_iou);
  report.std_iou = std_of(report.per_image_iou);
  report.brier = brier_sum / static_cast<double>(brier_count);
  return report;
}

EvalReport robustness_sweep(const Backbone& model, const SamplePool& pool, std::vector<double> gammas,
                            std::vector<double> epsilons, const OodOptions& ood, std::uint64_t seed,
                            int batch_size) {
  if (pool.size() == 0) throw ValidationError("cannot evaluate an empty pool");
  std::sort(gammas.begin(), gammas.end());
  std::sort(epsilons.begin(), epsilons.end());
  EvalReport report;
  report.per_image_iou = evaluate(model, nullptr, pool, {batch_size, 0, seed}).per_image_iou;
  report.mean_iou = mean_of(report.per_image_iou);
  report.std_iou = std_of(report.per_image_iou);

  for (double gamma : gammas) {
    std::vector<double> ious;
    for_each_chunk(pool.size(), batch_size, [&](const std::vector<std::size_t>& idx) {
      std::vector<Tensor> images;
      std::vector<Tensor> masks;
      for (std::size_t i : idx) {
        const Sample& s = pool.at(i);
        // Seed per image so every gamma sees the same corruption draw.
        images.push_back(ood_corrupt(s.image, gamma, ood, seed * 1000003ULL + static_cast<std::uint64_t>(s.id)));
        masks.push_back(s.mask);
      }
      const auto v = per_image_iou(label_masks(model.forward(Tensor::stack(images)).probabilities),
                                   Tensor::stack(masks));
      ious.insert(ious.end(), v.begin(), v.end());
    });
    report.gamma_table.emplace_back(gamma, mean_of(ious));
  }
  for (double eps : epsilons) {
    std::vector<double> ious;
    for_each_chunk(pool.size(), batch_size, [&](const std::vector<std::size_t>& idx) {
      const ImageBatch b = stack_batch(pool, idx, true);
      const Tensor adv = fgsm_attack(model, b.images, b.masks, eps, ood.intensity_range);
      const auto v = per_image_iou(label_masks(model.forward(adv).probabilities), b.masks);
      ious.insert(ious.end(), v.begin(), v.end());
    });
    report.epsilon_table.emplace_back(eps, mean_of(ious));
  }
  return report;
}

}  // namespace segpl
