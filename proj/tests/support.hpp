#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>

#include "segpl/tensor.hpp"

namespace segpl::testing {

inline Tensor uniform_tensor(std::vector<int> shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline Tensor binary_tensor(std::vector<int> shape, std::uint64_t seed, double p = 0.5) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  for (double& v : t.values()) v = b(rng) ? 1.0 : 0.0;
  return t;
}

inline double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a) + std::abs(b), 1e-10);
  return std::abs(a - b) / scale;
}

/// Central difference of `f` with respect to `x[index]`.
inline double central_difference(Tensor& x, std::size_t index, double h, const std::function<double()>& f) {
  const double saved = x[index];
  x[index] = saved + h;
  const double up = f();
  x[index] = saved - h;
  const double down = f();
  x[index] = saved;
  return (up - down) / (2.0 * h);
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("segpl-test-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace segpl::testing
