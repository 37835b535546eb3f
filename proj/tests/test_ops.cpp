#include <doctest.h>

#include "segpl/error.hpp"
#include "segpl/ops.hpp"
#include "support.hpp"

using namespace segpl;
using segpl::testing::central_difference;
using segpl::testing::relative_error;
using segpl::testing::uniform_tensor;

namespace {

// Scalar objective sum(y * r) for a fixed random r; its gradient w.r.t. y is r.
double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace

TEST_CASE("conv forward matches a direct loop") {
  const Tensor x = uniform_tensor({1, 2, 1, 4, 5}, 1, -1, 1);
  const Tensor w = uniform_tensor({3, 2, 1, 3, 3}, 2, -1, 1);
  const Tensor b = uniform_tensor({3}, 3, -1, 1);
  const Tensor y = ops::conv_forward(x, w, b);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j) {
        double ref = b[o];
        for (int c = 0; c < 2; ++c)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const int si = i + di, sj = j + dj;
              if (si < 0 || si >= 4 || sj < 0 || sj >= 5) continue;
              ref += w[((o * 2 + c) * 3 + (di + 1)) * 3 + (dj + 1)] * x[(c * 4 + si) * 5 + sj];
            }
        CHECK(y[(o * 4 + i) * 5 + j] == doctest::Approx(ref).epsilon(1e-12));
      }
}

TEST_CASE("conv backward matches finite differences in 2-D and 3-D") {
  for (int kd : {1, 3}) {
    CAPTURE(kd);
    Tensor x = uniform_tensor({2, 2, kd == 1 ? 1 : 3, 4, 4}, 10, -1, 1);
    Tensor w = uniform_tensor({3, 2, kd, 3, 3}, 11, -1, 1);
    Tensor b = uniform_tensor({3}, 12, -1, 1);
    const Tensor r = uniform_tensor({2, 3, x.dim(2), 4, 4}, 13, -1, 1);
    Tensor dw(w.shape()), db(b.shape()), dx;
    ops::conv_backward(x, w, r, dw, db, &dx);
    auto f = [&] { return weighted_sum(ops::conv_forward(x, w, b), r); };
    for (std::size_t i = 0; i < w.size(); i += 7) CHECK(relative_error(central_difference(w, i, 1e-5, f), dw[i]) < 1e-7);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(relative_error(central_difference(b, i, 1e-5, f), db[i]) < 1e-7);
    for (std::size_t i = 0; i < x.size(); i += 5) CHECK(relative_error(central_difference(x, i, 1e-5, f), dx[i]) < 1e-7);
  }
}

TEST_CASE("conv without bias skips the bias gradient") {
  const Tensor x = uniform_tensor({1, 1, 1, 4, 4}, 1);
  const Tensor w = uniform_tensor({2, 1, 1, 3, 3}, 2);
  Tensor dw(w.shape()), db;
  ops::conv_backward(x, w, uniform_tensor({1, 2, 1, 4, 4}, 3), dw, db, nullptr);
  CHECK(db.empty());
  CHECK_THROWS_AS(ops::conv_forward(x, uniform_tensor({2, 3, 1, 3, 3}, 4), Tensor{}), ShapeError);
}

TEST_CASE("instance norm output has zero mean and unit variance, gradient matches") {
  Tensor x = uniform_tensor({2, 3, 1, 4, 4}, 20, -2, 3);
  Tensor g = uniform_tensor({3}, 21, 0.5, 1.5), be = uniform_tensor({3}, 22, -1, 1);
  ops::NormCache cache;
  const Tensor ones(std::vector<int>{3}, 1.0), zeros(std::vector<int>{3}, 0.0);
  const Tensor y0 = ops::instance_norm_forward(x, ones, zeros, cache);
  for (int plane = 0; plane < 6; ++plane) {
    double m = 0, v = 0;
    for (int i = 0; i < 16; ++i) m += y0[plane * 16 + i];
    m /= 16;
    for (int i = 0; i < 16; ++i) v += (y0[plane * 16 + i] - m) * (y0[plane * 16 + i] - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / 16 == doctest::Approx(1.0).epsilon(1e-4));
  }
  const Tensor r = uniform_tensor(x.shape(), 23, -1, 1);
  ops::instance_norm_forward(x, g, be, cache);
  Tensor dg(g.shape()), db(be.shape());
  const Tensor dx = ops::instance_norm_backward(r, g, cache, dg, db);
  auto f = [&] {
    ops::NormCache c;
    return weighted_sum(ops::instance_norm_forward(x, g, be, c), r);
  };
  for (std::size_t i = 0; i < x.size(); i += 3) CHECK(relative_error(central_difference(x, i, 1e-5, f), dx[i]) < 1e-6);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(relative_error(central_difference(g, i, 1e-5, f), dg[i]) < 1e-7);
    CHECK(relative_error(central_difference(be, i, 1e-5, f), db[i]) < 1e-7);
  }
}

TEST_CASE("max pool, upsample and their adjoints") {
  const Tensor x = uniform_tensor({1, 2, 2, 4, 4}, 30);
  std::vector<int> argmax;
  const Tensor p = ops::max_pool_forward(x, {2, 2, 2}, argmax);
  CHECK(p.shape() == std::vector<int>{1, 2, 1, 2, 2});
  double expected = -1;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int xx = 0; xx < 2; ++xx) expected = std::max(expected, x[(z * 4 + y) * 4 + xx]);
  CHECK(p[0] == expected);
  CHECK_THROWS_AS(ops::max_pool_forward(uniform_tensor({1, 1, 1, 5, 4}, 1), {1, 2, 2}, argmax), ShapeError);

  // Adjoint identity: <up(a), b> = <a, up^T(b)>.
  const Tensor a = uniform_tensor({1, 2, 1, 3, 3}, 31), b = uniform_tensor({1, 2, 1, 6, 6}, 32);
  const Tensor ua = ops::upsample_nearest_forward(a, {1, 2, 2});
  const Tensor utb = ops::upsample_nearest_backward(b, {1, 2, 2});
  CHECK(weighted_sum(ua, b) == doctest::Approx(weighted_sum(a, utb)).epsilon(1e-12));
}

TEST_CASE("sigmoid of zero is exactly one half") {
  CHECK(ops::sigmoid(0.0) == 0.5);
  CHECK(ops::sigmoid(-800.0) >= 0.0);
  CHECK(ops::sigmoid(800.0) <= 1.0);
}
