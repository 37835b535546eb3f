#pragma once

#include <array>
#include <vector>

#include "segpl/tensor.hpp"

/// Layer primitives over 5-D activations [batch, channels, depth, height, width].
/// Two-dimensional data uses depth 1. Each forward has a matching backward that
/// accumulates parameter gradients and optionally returns the input gradient.
namespace segpl::ops {

struct Dims {
  int batch = 0, channels = 0, depth = 0, height = 0, width = 0;
  int spatial() const { return depth * height * width; }
};

Dims dims_of(const Tensor& t);

/// Per-axis factors for pooling / up-sampling: {depth, height, width}.
using Factors = std::array<int, 3>;

/// Same-padded convolution; weight shape [out, in, kd, kh, kw] with odd kernel sizes.
/// An empty `bias` means no bias term.
Tensor conv_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Accumulates into `d_weight` / `d_bias`; writes the input gradient when `d_x` is non-null.
void conv_backward(const Tensor& x, const Tensor& weight, const Tensor& d_y, Tensor& d_weight,
                   Tensor& d_bias, Tensor* d_x);

struct NormCache {
  Tensor normalized;
  std::vector<double> inv_std;  // one per (batch, channel)
};

/// Per-sample, per-channel normalization with affine scale/shift.
Tensor instance_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                             NormCache& cache, double eps = 1e-5);
Tensor instance_norm_backward(const Tensor& d_y, const Tensor& gamma, const NormCache& cache,
                              Tensor& d_gamma, Tensor& d_beta);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& y, const Tensor& d_y);

Tensor max_pool_forward(const Tensor& x, Factors f, std::vector<int>& argmax);
Tensor max_pool_backward(const Tensor& d_y, const Dims& input, const std::vector<int>& argmax);

Tensor upsample_nearest_forward(const Tensor& x, Factors f);
Tensor upsample_nearest_backward(const Tensor& d_y, Factors f);

/// Channel concatenation of equally sized activations.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& d_y, int channels_a, Tensor& d_a, Tensor& d_b);

double sigmoid(double v);
Tensor sigmoid(const Tensor& logits);
/// Chain rule through sigmoid given its output.
Tensor sigmoid_backward(const Tensor& probabilities, const Tensor& d_probabilities);

}  // namespace segpl::ops
