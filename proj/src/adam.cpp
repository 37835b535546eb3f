#include "segpl/adam.hpp"

#include <cmath>

#include "segpl/error.hpp"

namespace segpl {

void Adam::apply(ParameterSet& params, const ParameterSet& grads) {
  if (state_.step < 1) throw ValidationError("Adam::apply called before begin_step");
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(beta1_, t);
  const double c2 = 1.0 - std::pow(beta2_, t);
  for (auto& [name, value] : params.entries()) {
    const Tensor& g = grads.at(name);
    if (!state_.first_moment.contains(name)) {
      state_.first_moment.add(name, Tensor::zeros_like(value));
      state_.second_moment.add(name, Tensor::zeros_like(value));
    }
    Tensor& m = state_.first_moment.at(name);
    Tensor& v = state_.second_moment.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

}  // namespace segpl
