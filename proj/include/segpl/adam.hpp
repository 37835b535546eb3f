#pragma once

#include <cstdint>

#include "segpl/parameters.hpp"

namespace segpl {

struct AdamState {
  std::int64_t step = 0;
  ParameterSet first_moment;
  ParameterSet second_moment;
};

/// Adam with default moment coefficients, no weight decay, constant learning rate.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Advances the shared step counter used for bias correction.
  void begin_step() { ++state_.step; }
  /// Updates `params` in place; moments are created lazily per parameter name.
  void apply(ParameterSet& params, const ParameterSet& grads);

  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  AdamState state_;
};

}  // namespace segpl
