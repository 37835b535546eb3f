#pragma once

#include <cstdint>
#include <memory>

#include "segpl/parameters.hpp"
#include "segpl/tensor.hpp"

namespace segpl {

struct BackboneConfig {
  int spatial_rank = 2;
  int in_channels = 1;
  int out_channels = 1;
  int base_width = 8;
  int depth = 3;

  void validate() const;
  int bottleneck_channels() const { return base_width << depth; }
  /// Every input spatial extent must be a multiple of this.
  int size_multiple() const { return 1 << depth; }

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct BackboneTape;

struct ForwardResult {
  Tensor probabilities;        // [B, out, spatial...], sigmoid(logits)
  Tensor logits;               // same shape
  Tensor bottleneck_features;  // [B, base_width * 2^depth, spatial / 2^depth]
  std::shared_ptr<const BackboneTape> tape;
};

struct BackboneGradients {
  ParameterSet parameters;
  Tensor input;  // empty unless requested
};

/// U-Net: each stage is two (3x3 conv, instance norm, ReLU) units; max-pool
/// down, nearest up-sampling followed by a 3x3 conv on the way back, skip
/// connections by channel concatenation, 1x1 output conv.
///
/// `forward` does not mutate the model, so snapshots can be evaluated
/// concurrently. Only the training loop writes parameters.
class Backbone {
 public:
  /// He-normal initialisation from `seed`.
  Backbone(BackboneConfig config, std::uint64_t seed);
  /// All weights and biases zero (norm scales included).
  static Backbone zeros(BackboneConfig config);
  /// Adopts stored parameters; names and shapes must match the architecture of `config`.
  static Backbone from_parameters(BackboneConfig config, ParameterSet parameters);

  const BackboneConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// `images` is [B, in_channels, H, W] (rank 2) or [B, in_channels, D, H, W] (rank 3).
  ForwardResult forward(const Tensor& images) const;

  /// Gradients of a scalar loss given d loss / d logits and, optionally,
  /// d loss / d bottleneck features (from the threshold head).
  BackboneGradients backward(const ForwardResult& forward, const Tensor& d_logits,
                             const Tensor* d_bottleneck = nullptr, bool input_gradient = false) const;

  /// Throws ShapeError naming the offending dimension.
  void check_input(const Tensor& images) const;

 private:
  Backbone() = default;
  void build(std::uint64_t seed, bool zero);

  BackboneConfig config_;
  ParameterSet params_;
};

}  // namespace segpl
