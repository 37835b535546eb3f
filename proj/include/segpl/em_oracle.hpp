#pragma once

#include <array>
#include <span>
#include <vector>

/// Two-component 1-D Gaussian mixture where the E-step, M-step, free energy
/// and marginal likelihood are all exact. Used to check EM monotonicity and to
/// contrast it with hard, threshold-based (pseudo-label style) assignments.
namespace segpl::em {

inline constexpr double kStdFloor = 1e-6;

struct MixtureParams {
  std::array<double, 2> weights{0.5, 0.5};
  std::array<double, 2> means{-1.0, 1.0};
  std::array<double, 2> stds{1.0, 1.0};

  void validate() const;
  double max_abs_difference(const MixtureParams& other) const;
};

/// Row i holds q(z_i = k) for k = 0, 1. Hard assignments use one-hot rows.
using Assignments = std::vector<std::array<double, 2>>;

struct SoftEStep {
  Assignments responsibilities;
  bool degenerate = false;  // some point had zero density under both components
};

SoftEStep e_step_soft(std::span<const double> data, const MixtureParams& params);

/// z_i = 1 where q(z_i = 1) > threshold (strict), else 0.
std::vector<int> e_step_hard(std::span<const double> data, const MixtureParams& params, double threshold);

Assignments one_hot(std::span<const int> labels);

struct MStep {
  MixtureParams params;
  std::array<bool, 2> empty_component{false, false};
};

/// Weighted maximum-likelihood update. A component with zero assignment mass
/// keeps its previous mean and std; weights are always the mean assignment.
MStep m_step(std::span<const double> data, const Assignments& assignments, const MixtureParams& previous);

double log_likelihood(std::span<const double> data, const MixtureParams& params);

/// sum_i sum_k q_ik (log w_k + log N(x_i; mu_k, s_k) - log q_ik), with 0 log 0 = 0.
double free_energy(std::span<const double> data, const MixtureParams& params, const Assignments& q);

/// sum_i log(w_{z_i} N(x_i; mu_{z_i}, s_{z_i})); the free energy of a one-hot q.
double classification_objective(std::span<const double> data, const MixtureParams& params,
                                std::span<const int> labels);

enum class Mode { soft, hard };

struct Iteration {
  MixtureParams params;
  double log_likelihood = 0.0;
  double free_energy = 0.0;  // F(q_t, params_t), q_t from the E-step on params_t
  Assignments assignments;
  bool empty_component = false;  // the M-step that produced params_t hit the empty-component guard
  bool degenerate = false;
};

struct Trace {
  std::vector<Iteration> iterations;  // iteration 0 is the initial parameters

  /// Count of t with log_likelihood[t+1] < log_likelihood[t] - tolerance.
  std::size_t likelihood_decreases(double tolerance = 1e-9) const;
  std::size_t free_energy_decreases(double tolerance = 1e-9) const;
};

/// `iters` full E/M rounds; the trace holds iters + 1 entries.
Trace run_em(std::span<const double> data, const MixtureParams& init, Mode mode, double threshold, int iters);

}  // namespace segpl::em
