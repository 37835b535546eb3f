#include "segpl/em_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "segpl/error.hpp"

namespace segpl::em {

namespace {

double log_normal(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

std::array<double, 2> joint_log(double x, const MixtureParams& p) {
  return {std::log(p.weights[0]) + log_normal(x, p.means[0], p.stds[0]),
          std::log(p.weights[1]) + log_normal(x, p.means[1], p.stds[1])};
}

double log_sum_exp(const std::array<double, 2>& v) {
  const double m = std::max(v[0], v[1]);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(v[0] - m) + std::exp(v[1] - m));
}

void require_data(std::span<const double> data) {
  if (data.size() < 2) throw ValidationError("EM oracle needs at least 2 data points");
}

}  // namespace

void MixtureParams::validate() const {
  if (std::abs(weights[0] + weights[1] - 1.0) > 1e-12 || weights[0] < 0.0 || weights[1] < 0.0) {
    throw ValidationError("mixture weights must be non-negative and sum to 1");
  }
  for (double s : stds) {
    if (!(s >= kStdFloor)) throw ValidationError("mixture std below floor: " + std::to_string(s));
  }
  for (double m : means) {
    if (!std::isfinite(m)) throw ValidationError("mixture mean not finite");
  }
}

double MixtureParams::max_abs_difference(const MixtureParams& o) const {
  double d = 0.0;
  for (int k = 0; k < 2; ++k) {
    d = std::max({d, std::abs(weights[k] - o.weights[k]), std::abs(means[k] - o.means[k]),
                  std::abs(stds[k] - o.stds[k])});
  }
  return d;
}

SoftEStep e_step_soft(std::span<const double> data, const MixtureParams& params) {
  require_data(data);
  params.validate();
  SoftEStep out;
  out.responsibilities.reserve(data.size());
  for (double x : data) {
    const auto j = joint_log(x, params);
    const double norm = log_sum_exp(j);
    if (!std::isfinite(norm)) {
      out.degenerate = true;
      out.responsibilities.push_back({0.5, 0.5});
      continue;
    }
    const double r1 = std::exp(j[1] - norm);
    out.responsibilities.push_back({std::exp(j[0] - norm), r1});
  }
  return out;
}

std::vector<int> e_step_hard(std::span<const double> data, const MixtureParams& params, double threshold) {
  const auto soft = e_step_soft(data, params);
  std::vector<int> labels;
  labels.reserve(data.size());
  for (const auto& r : soft.responsibilities) labels.push_back(r[1] > threshold ? 1 : 0);
  return labels;
}

Assignments one_hot(std::span<const int> labels) {
  Assignments q;
  q.reserve(labels.size());
  for (int z : labels) q.push_back(z == 1 ? std::array<double, 2>{0.0, 1.0} : std::array<double, 2>{1.0, 0.0});
  return q;
}

MStep m_step(std::span<const double> data, const Assignments& q, const MixtureParams& previous) {
  require_data(data);
  if (q.size() != data.size()) throw ShapeError("assignment count does not match data size");
  MStep out;
  out.params = previous;
  const double n = static_cast<double>(data.size());
  for (int k = 0; k < 2; ++k) {
    double mass = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      mass += q[i][static_cast<std::size_t>(k)];
      sum += q[i][static_cast<std::size_t>(k)] * data[i];
    }
    out.params.weights[static_cast<std::size_t>(k)] = mass / n;
    if (mass <= 0.0) {
      out.empty_component[static_cast<std::size_t>(k)] = true;
      continue;
    }
    const double mean = sum / mass;
    double var = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double d = data[i] - mean;
      var += q[i][static_cast<std::size_t>(k)] * d * d;
    }
    var /= mass;
    out.params.means[static_cast<std::size_t>(k)] = mean;
    out.params.stds[static_cast<std::size_t>(k)] = std::max(std::sqrt(var), kStdFloor);
  }
  // Renormalise so rounding in the masses never breaks the sum-to-one invariant.
  const double wsum = out.params.weights[0] + out.params.weights[1];
  out.params.weights[0] /= wsum;
  out.params.weights[1] = 1.0 - out.params.weights[0];
  return out;
}

double log_likelihood(std::span<const double> data, const MixtureParams& params) {
  double ll = 0.0;
  for (double x : data) ll += log_sum_exp(joint_log(x, params));
  return ll;
}

double free_energy(std::span<const double> data, const MixtureParams& params, const Assignments& q) {
  if (q.size() != data.size()) throw ShapeError("assignment count does not match data size");
  double f = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto j = joint_log(data[i], params);
    for (std::size_t k = 0; k < 2; ++k) {
      const double qk = q[i][k];
      if (qk > 0.0) f += qk * (j[k] - std::log(qk));
    }
  }
  return f;
}

double classification_objective(std::span<const double> data, const MixtureParams& params,
                                std::span<const int> labels) {
  if (labels.size() != data.size()) throw ShapeError("label count does not match data size");
  double f = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) f += joint_log(data[i], params)[labels[i] == 1 ? 1 : 0];
  return f;
}

std::size_t Trace::likelihood_decreases(double tolerance) const {
  std::size_t n = 0;
  for (std::size_t t = 1; t < iterations.size(); ++t) {
    if (iterations[t].log_likelihood < iterations[t - 1].log_likelihood - tolerance) ++n;
  }
  return n;
}

std::size_t Trace::free_energy_decreases(double tolerance) const {
  std::size_t n = 0;
  for (std::size_t t = 1; t < iterations.size(); ++t) {
    if (iterations[t].free_energy < iterations[t - 1].free_energy - tolerance) ++n;
  }
  return n;
}

Trace run_em(std::span<const double> data, const MixtureParams& init, Mode mode, double threshold, int iters) {
  if (iters < 1) throw ValidationError("run_em needs iters >= 1");
  if (mode == Mode::hard && !(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("hard EM threshold must lie in (0, 1)");
  }
  Trace trace;
  MixtureParams params = init;
  bool empty = false;
  for (int t = 0; t <= iters; ++t) {
    Iteration it;
    it.params = params;
    it.empty_component = empty;
    it.log_likelihood = log_likelihood(data, params);
    if (mode == Mode::soft) {
      auto e = e_step_soft(data, params);
      it.degenerate = e.degenerate;
      it.assignments = std::move(e.responsibilities);
    } else {
      it.assignments = one_hot(e_step_hard(data, params, threshold));
    }
    it.free_energy = free_energy(data, params, it.assignments);
    if (t < iters) {
      MStep m = m_step(data, it.assignments, params);
      params = m.params;
      empty = m.empty_component[0] || m.empty_component[1];
    }
    trace.iterations.push_back(std::move(it));
  }
  return trace;
}

}  // namespace segpl::em
