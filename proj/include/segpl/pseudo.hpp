#pragma once

#include <cstdint>
#include <memory>

#include "segpl/parameters.hpp"
#include "segpl/tensor.hpp"

namespace segpl {

/// Gaussian prior N(mean, stddev) over the pseudo-label threshold.
struct PriorSpec {
  double mean = 0.9;
  double stddev = 0.1;

  void validate() const;
  bool operator==(const PriorSpec&) const = default;
};

/// Approximate posterior over the threshold, parameterised by mean and log variance.
struct ThresholdPosterior {
  double mean = 0.0;
  double log_variance = 0.0;

  double stddev() const;
  void validate() const;
};

struct PseudoLabelBatch {
  Tensor mask;                  // entries in {0, 1}, same shape as the probabilities
  double threshold_used = 0.5;
  bool detached = true;         // the mask is a constant target; no gradient reaches the probabilities through it
};

inline constexpr double kDefaultThreshold = 0.5;
inline constexpr double kThresholdMin = 0.01;
inline constexpr double kThresholdMax = 0.99;

/// mask = 1 where probability > threshold (strict), else 0.
PseudoLabelBatch binarize_fixed(const Tensor& probabilities, double threshold = kDefaultThreshold);

/// Reparameterised threshold draw with its partial derivatives.
struct ThresholdSample {
  double value = 0.0;
  double d_mean = 0.0;          // 1 inside the clamp range, 0 when clamped
  double d_log_variance = 0.0;  // 0.5 * noise * sigma inside, 0 when clamped
  bool clamped = false;
};

/// clamp(mean + noise * exp(0.5 * log_variance), 0.01, 0.99).
ThresholdSample sample_threshold(const ThresholdPosterior& posterior, double noise);

/// One shared threshold for every channel and every image of the batch.
PseudoLabelBatch make_pseudo_labels_vi(const Tensor& probabilities, const ThresholdPosterior& posterior,
                                       double noise);

struct HeadTape;

struct HeadForward {
  ThresholdPosterior posterior;
  std::shared_ptr<const HeadTape> tape;
};

struct HeadGradients {
  ParameterSet parameters;
  Tensor features;  // d loss / d bottleneck features
};

/// Maps bottleneck features of an unlabelled sub-batch to one threshold posterior.
///
/// Features are average-pooled over batch and space to a single 1x1 map. The
/// 3x3 conv that follows only sees its centre tap on that map, so it is stored
/// as a dense [hidden, channels] matrix. ReLU and a channel-wise normalisation
/// follow, then two parallel 1x1 outputs for the mean and the log variance.
class PosteriorHead {
 public:
  /// Hidden weights are He-normal; the output layers start near zero with
  /// biases at the prior's mean and log variance.
  PosteriorHead(int feature_channels, std::uint64_t seed, const PriorSpec& init_prior = {});
  static PosteriorHead zeros(int feature_channels);
  static PosteriorHead from_parameters(int feature_channels, ParameterSet parameters);

  int feature_channels() const { return feature_channels_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  HeadForward forward(const Tensor& features) const;
  HeadGradients backward(const HeadForward& forward, double d_mean, double d_log_variance) const;

 private:
  PosteriorHead() = default;
  int feature_channels_ = 0;
  ParameterSet params_;
};

ThresholdPosterior posterior_from_features(const PosteriorHead& head, const Tensor& bottleneck_features);

}  // namespace segpl
