#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "segpl/error.hpp"
#include "segpl/eval.hpp"
#include "segpl/losses.hpp"
#include "segpl/ops.hpp"
#include "support.hpp"

using namespace segpl;
using segpl::testing::binary_tensor;
using segpl::testing::uniform_tensor;

TEST_CASE("iou examples") {
  const Tensor m = binary_tensor({1, 1, 4, 4}, 1, 0.6);
  CHECK(iou(m, m) == 1.0);
  const Tensor a({1, 4}, {1, 1, 0, 0}), b({1, 4}, {0, 0, 1, 1});
  CHECK(iou(a, b) == 0.0);
  const Tensor gt({1, 4}, {1, 1, 1, 1}), half({1, 4}, {1, 1, 0, 0});
  CHECK(iou(half, gt) == 0.5);
  const Tensor empty({1, 4}, 0.0);
  CHECK(iou(empty, empty) == 1.0);
  CHECK_THROWS_AS(iou(Tensor({1, 4}, 0.5), gt), ValidationError);
  CHECK_THROWS_AS(iou(gt, Tensor({1, 5}, 1.0)), ShapeError);
}

TEST_CASE("iou is invariant under a shared permutation") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const Tensor a = binary_tensor({64}, 10 + t), b = binary_tensor({64}, 50 + t);
    std::vector<int> perm(64);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor pa({64}), pb({64});
    for (int i = 0; i < 64; ++i) pa[i] = a[perm[i]], pb[i] = b[perm[i]];
    CHECK(iou(pa, pb) == iou(a, b));
  }
}

TEST_CASE("multi-class masks use argmax and macro-averaged IoU") {
  // Two pixels, three classes; channel-major layout [1, 3, 1, 2].
  const Tensor p({1, 3, 1, 2}, {0.9, 0.1, 0.2, 0.8, 0.3, 0.7});
  const Tensor labels = label_masks(p);
  CHECK(labels.to_vector() == std::vector<double>{1, 0, 0, 1, 0, 0});
  const Tensor gt({1, 3, 1, 2}, {1, 0, 0, 0, 0, 1});
  // class 0: 1/1, class 1: 0/2, class 2: 0/1
  CHECK(per_image_iou(labels, gt)[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("brier examples and oracle") {
  const Tensor y = binary_tensor({1, 1, 8, 8}, 4);
  CHECK(brier(y, y) == 0.0);
  const Tensor half(y.shape(), 0.5);
  CHECK(brier(half, y) == 0.25);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor p = uniform_tensor({1, 1, 8, 8}, s), g = binary_tensor({1, 1, 8, 8}, s + 100);
    double ref = 0;
    for (std::size_t i = 0; i < p.size(); ++i) ref += (p[i] - g[i]) * (p[i] - g[i]);
    ref /= 64.0;
    CHECK(std::abs(brier(p, g) - ref) < 1e-12);
    Tensor q = p, h = g;
    for (double& v : q.values()) v = 1.0 - v;
    for (double& v : h.values()) v = 1.0 - v;
    CHECK(std::abs(brier(q, h) - brier(p, g)) < 1e-12);
  }
  CHECK_THROWS_AS(brier(half, Tensor({1, 1, 4, 4}, 0.0)), ShapeError);
}

TEST_CASE("mc_predict: votes, collapsed posterior, missing head") {
  const Backbone model({2, 1, 1, 2, 2}, 3);
  PosteriorHead head(model.config().bottleneck_channels(), 4, PriorSpec{0.5, 0.1});
  const Tensor x = uniform_tensor({2, 1, 16, 16}, 5);

  const std::vector<double> zero{0.0};
  const McPrediction one = mc_predict_with_noise(model, &head, x, zero);
  CHECK(one.thresholds.size() == 1);
  CHECK(one.thresholds[0] == std::clamp(one.posterior.mean, kThresholdMin, kThresholdMax));
  CHECK(one.mean_map == one.sample_masks[0]);

  const McPrediction five = mc_predict(model, &head, x, 5, 9);
  CHECK(five.sample_masks.size() == 5);
  for (std::size_t i = 0; i < five.mean_map.size(); ++i) {
    double votes = 0;
    for (const Tensor& m : five.sample_masks) votes += m[i];
    CHECK(five.mean_map[i] == doctest::Approx(votes / 5.0).epsilon(1e-15));
    CHECK(five.mean_map[i] >= 0.0);
    CHECK(five.mean_map[i] <= 1.0);
  }
  CHECK(kDefaultMcSamples == 5);

  PosteriorHead collapsed = head;
  for (double& v : collapsed.parameters().at("head.log_variance.weight").values()) v = 0.0;
  collapsed.parameters().at("head.log_variance.bias")[0] = -60.0;
  const McPrediction c = mc_predict(model, &collapsed, x, 5, 1);
  for (const Tensor& m : c.sample_masks) CHECK(m == c.sample_masks[0]);

  CHECK_THROWS_AS(mc_predict(model, nullptr, x), ValidationError);
  CHECK_THROWS_AS(mc_predict(model, &head, x, 0), ValidationError);
}

TEST_CASE("fgsm: zero eps is the identity, perturbation bounded and clipped") {
  const Backbone model({2, 1, 1, 2, 2}, 3);
  const Tensor x = uniform_tensor({2, 1, 16, 16}, 6);
  const Tensor y = binary_tensor({2, 1, 16, 16}, 7);
  CHECK(fgsm_attack(model, x, y, 0.0) == x);
  for (double eps : {2e-3, 5e-2, 0.3}) {
    const Tensor adv = fgsm_attack(model, x, y, eps);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(adv[i] - x[i]) <= eps + 1e-15);
      CHECK(adv[i] >= 0.0);
      CHECK(adv[i] <= 1.0);
    }
  }
  CHECK_THROWS_AS(fgsm_attack(model, x, y, -1.0), ValidationError);
}

TEST_CASE("fgsm moves a single pixel along the analytic gradient sign") {
  // depth-1 model on a 2x2 image: perturb one pixel at a time and compare the
  // direction with the sign of the finite-difference loss slope.
  const Backbone model({2, 1, 1, 2, 1}, 17);
  Tensor x = uniform_tensor({1, 1, 2, 2}, 8, 0.3, 0.7);
  const Tensor y({1, 1, 2, 2}, {1, 0, 0, 1});
  const Tensor adv = fgsm_attack(model, x, y, 0.01);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double slope = segpl::testing::central_difference(
        x, i, 1e-6, [&] { return dice_loss(model.forward(x).probabilities, y); });
    if (std::abs(slope) < 1e-9) continue;
    CHECK((adv[i] - x[i]) * slope > 0.0);
  }
}

TEST_CASE("robustness sweep: zero rows equal clean IoU, tables sorted") {
  SyntheticSpec spec;
  spec.image_size = {16, 16};
  spec.num_images = 6;
  InMemoryPool pool(generate_synthetic(spec));
  const Backbone model({2, 1, 1, 4, 2}, 1);
  const EvalReport clean = evaluate(model, nullptr, pool);
  const EvalReport r = robustness_sweep(model, pool, {0.5, 0.0, 1.0}, {0.01, 0.0}, {}, 3, 4);
  CHECK(r.gamma_table.size() + r.epsilon_table.size() == 5);
  CHECK(r.gamma_table[0].first == 0.0);
  CHECK(r.gamma_table[0].second == clean.mean_iou);
  CHECK(r.epsilon_table[0].first == 0.0);
  CHECK(r.epsilon_table[0].second == clean.mean_iou);
  CHECK(std::is_sorted(r.gamma_table.begin(), r.gamma_table.end()));
  CHECK(std::is_sorted(r.epsilon_table.begin(), r.epsilon_table.end()));
  for (double v : r.per_image_iou) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const EvalReport only = robustness_sweep(model, pool, {0.0}, {}, {}, 3, 4);
  CHECK(only.gamma_table[0].second == clean.mean_iou);
}

TEST_CASE("evaluate uses MC votes for the Brier score when a head is present") {
  SyntheticSpec spec;
  spec.image_size = {16, 16};
  spec.num_images = 4;
  InMemoryPool pool(generate_synthetic(spec));
  const Backbone model({2, 1, 1, 2, 2}, 1);
  const PosteriorHead head(model.config().bottleneck_channels(), 2, PriorSpec{0.5, 0.1});
  const EvalReport raw = evaluate(model, nullptr, pool, {4, 5, 0});
  const EvalReport mc = evaluate(model, &head, pool, {4, 5, 0});
  CHECK(raw.mc_samples == 0);
  CHECK(mc.mc_samples == 5);
  CHECK(raw.per_image_iou == mc.per_image_iou);
  const ImageBatch all = stack_all(pool, true);
  CHECK(raw.brier == doctest::Approx(brier(model.forward(all.images).probabilities, all.masks)).epsilon(1e-12));
  CHECK(mc.brier == doctest::Approx(brier(mc_predict(model, &head, all.images, 5, 0).mean_map, all.masks))
                        .epsilon(1e-12));
}
