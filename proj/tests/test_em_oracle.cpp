#include <doctest.h>

#include <cmath>
#include <random>

#include "segpl/em_oracle.hpp"
#include "segpl/error.hpp"

using namespace segpl;
using namespace segpl::em;

namespace {

std::vector<double> mixture_sample(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> a(0.0, 1.0), b(3.0, 0.7);
  std::bernoulli_distribution pick(0.4);
  std::vector<double> x(static_cast<std::size_t>(n));
  for (double& v : x) v = pick(rng) ? b(rng) : a(rng);
  return x;
}

// Independent oracle for the Gaussian log density.
double log_normal(double x, double mu, double sd) {
  return -0.5 * std::log(2.0 * M_PI * sd * sd) - (x - mu) * (x - mu) / (2.0 * sd * sd);
}

MixtureParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> m(-2, 5), s(0.3, 2.0), w(0.1, 0.9);
  MixtureParams p;
  const double w0 = w(rng);
  p.weights = {w0, 1.0 - w0};
  p.means = {m(rng), m(rng)};
  p.stds = {s(rng), s(rng)};
  return p;
}

}  // namespace

TEST_CASE("soft E-step examples") {
  const MixtureParams sym;  // weights 0.5, means -1/+1, stds 1
  const std::vector<double> x{0.0, 40.0, -40.0};
  const SoftEStep q = e_step_soft(x, sym);
  CHECK(q.responsibilities[0][0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(q.responsibilities[0][1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(q.responsibilities[1][1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(q.responsibilities[2][0] == doctest::Approx(1.0).epsilon(1e-12));

  std::mt19937_64 rng(3);
  const std::vector<double> data = mixture_sample(4, 20);
  const SoftEStep r = e_step_soft(data, random_params(rng));
  for (const auto& row : r.responsibilities) CHECK(std::abs(row[0] + row[1] - 1.0) < 1e-12);
  CHECK_THROWS_AS(e_step_soft(std::vector<double>{1.0}, sym), ValidationError);
}

TEST_CASE("hard E-step compares against the threshold strictly") {
  std::mt19937_64 rng(5);
  const std::vector<double> data = mixture_sample(6, 60);
  const MixtureParams p = random_params(rng);
  const SoftEStep q = e_step_soft(data, p);
  const std::vector<int> half = e_step_hard(data, p, 0.5);
  const std::vector<int> seven = e_step_hard(data, p, 0.7);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& r = q.responsibilities[i];
    CHECK(half[i] == (r[1] > r[0] ? 1 : 0));
    CHECK(seven[i] == (r[1] > 0.7 ? 1 : 0));
  }
  // Responsibilities capped below 0.99 label every point 0 at T = 0.99.
  MixtureParams flat;
  flat.means = {0.0, 0.1};
  const std::vector<double> near{-0.2, 0.0, 0.05, 0.3};
  for (int z : e_step_hard(near, flat, 0.99)) CHECK(z == 0);
}

TEST_CASE("M-step examples") {
  const std::vector<double> x{0, 0, 4, 4};
  const std::vector<int> z{0, 0, 1, 1};
  const MStep m = m_step(x, one_hot(z), MixtureParams{});
  CHECK(m.params.means[0] == 0.0);
  CHECK(m.params.means[1] == 4.0);
  CHECK(m.params.stds[0] == kStdFloor);
  CHECK(m.params.stds[1] == kStdFloor);
  CHECK(m.params.weights[0] == 0.5);

  const std::vector<double> y{1, 2, 3, 6};
  const Assignments uniform(y.size(), {0.5, 0.5});
  const MStep u = m_step(y, uniform, MixtureParams{});
  const double mean = 3.0, var = (4 + 1 + 0 + 9) / 4.0;
  CHECK(u.params.means[0] == doctest::Approx(mean));
  CHECK(u.params.means[1] == doctest::Approx(mean));
  CHECK(u.params.stds[0] == doctest::Approx(std::sqrt(var)));
  CHECK(u.params.stds[1] == doctest::Approx(std::sqrt(var)));

  MixtureParams prev;
  prev.means = {-7.0, 2.0};
  prev.stds = {0.3, 1.0};
  const MStep e = m_step(y, one_hot(std::vector<int>{1, 1, 1, 1}), prev);
  CHECK(e.empty_component[0]);
  CHECK(!e.empty_component[1]);
  CHECK(e.params.means[0] == -7.0);
  CHECK(e.params.stds[0] == 0.3);
  CHECK(e.params.weights[0] == 0.0);
}

TEST_CASE("free energy against independent oracles") {
  std::mt19937_64 rng(8);
  const std::vector<double> data = mixture_sample(9, 40);
  for (int trial = 0; trial < 20; ++trial) {
    const MixtureParams p = random_params(rng);
    // Log-likelihood oracle.
    double ll = 0.0;
    for (double x : data) {
      ll += std::log(p.weights[0] * std::exp(log_normal(x, p.means[0], p.stds[0])) +
                     p.weights[1] * std::exp(log_normal(x, p.means[1], p.stds[1])));
    }
    CHECK(log_likelihood(data, p) == doctest::Approx(ll).epsilon(1e-12));

    const Assignments post = e_step_soft(data, p).responsibilities;
    CHECK(std::abs(free_energy(data, p, post) - log_likelihood(data, p)) < 1e-9);

    // Random q: LL - F equals KL[q || posterior], computed directly.
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Assignments q(data.size());
    double kl = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double a = u(rng);
      q[i] = {a, 1.0 - a};
      for (int k = 0; k < 2; ++k) {
        if (q[i][k] > 0) kl += q[i][k] * std::log(q[i][k] / post[i][k]);
      }
    }
    CHECK(std::abs(log_likelihood(data, p) - free_energy(data, p, q) - kl) < 1e-9);
    CHECK(free_energy(data, p, q) <= log_likelihood(data, p) + 1e-9);
  }
  // Uniform q under a non-uniform posterior is strictly below.
  const MixtureParams p = random_params(rng);
  const Assignments uniform(data.size(), {0.5, 0.5});
  CHECK(free_energy(data, p, uniform) < log_likelihood(data, p));
}

TEST_CASE("soft EM never decreases the likelihood") {
  std::mt19937_64 rng(11);
  const std::vector<double> data = mixture_sample(12, 50);
  std::size_t violations = 0;
  for (int init = 0; init < 100; ++init) {
    const Trace t = run_em(data, random_params(rng), Mode::soft, 0.5, 30);
    REQUIRE(t.iterations.size() == 31);
    violations += t.likelihood_decreases(1e-9);
    for (const Iteration& it : t.iterations) {
      CHECK(std::abs(it.free_energy - it.log_likelihood) < 1e-9);
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("EM started at a fixed point stays there") {
  const std::vector<double> data = mixture_sample(13, 50);
  const Trace converged = run_em(data, MixtureParams{{0.5, 0.5}, {0.0, 3.0}, {1.0, 1.0}}, Mode::soft, 0.5, 2000);
  const Trace again = run_em(data, converged.iterations.back().params, Mode::soft, 0.5, 5);
  for (const Iteration& it : again.iterations) {
    CHECK(it.params.max_abs_difference(again.iterations.front().params) < 1e-9);
  }
}

TEST_CASE("hard EM at T=0.5: classification objective non-decreasing and convergence") {
  std::mt19937_64 rng(14);
  const std::vector<double> data = mixture_sample(15, 50);
  for (int init = 0; init < 20; ++init) {
    const Trace t = run_em(data, random_params(rng), Mode::hard, 0.5, 60);
    double last = -std::numeric_limits<double>::infinity();
    bool converged = false;
    for (std::size_t i = 1; i < t.iterations.size(); ++i) {
      const Iteration& it = t.iterations[i];
      std::vector<int> labels;
      for (const auto& row : it.assignments) labels.push_back(row[1] > 0.5 ? 1 : 0);
      // Objective of the labels chosen on params_i, evaluated at params_i.
      const double c = classification_objective(data, it.params, labels);
      CHECK(c >= last - 1e-9);
      last = c;
      converged = converged || it.params.max_abs_difference(t.iterations[i - 1].params) < 1e-8;
    }
    CHECK(converged);
  }
}
