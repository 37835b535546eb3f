#include <doctest.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>

#include "segpl/config.hpp"
#include "segpl/error.hpp"
#include "segpl/trainer.hpp"
#include "support.hpp"

using namespace segpl;
using segpl::testing::TempDir;

namespace {

class CountingPool : public SamplePool {
 public:
  explicit CountingPool(std::shared_ptr<const SamplePool> inner) : inner_(std::move(inner)) {}
  std::size_t size() const override { return inner_->size(); }
  const Sample& at(std::size_t i) const override {
    ++reads;
    return inner_->at(i);
  }
  mutable std::atomic<int> reads{0};

 private:
  std::shared_ptr<const SamplePool> inner_;
};

std::vector<Sample> small_samples(int n, std::uint64_t seed = 0) {
  SyntheticSpec spec;
  spec.image_size = {16, 16};
  spec.num_images = n;
  spec.seed = seed;
  return generate_synthetic(spec);
}

TrainConfig tiny_config(TrainMode mode) {
  TrainConfig c = preset("desk");
  c.mode = mode;
  c.steps = 4;
  c.eval_every = 2;
  c.backbone = BackboneConfig{2, 1, 1, 2, 2};
  return c;
}

std::vector<std::string> csv_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

std::string without_wall_time(const std::string& line) { return line.substr(0, line.rfind(',')); }

}  // namespace

TEST_CASE("alpha schedule") {
  CHECK(alpha_schedule(0, 800, 1.0, 0.5) == 0.0);
  CHECK(alpha_schedule(200, 800, 1.0, 0.5) == 0.5);
  CHECK(alpha_schedule(400, 800, 1.0, 0.5) == 1.0);
  CHECK(alpha_schedule(799, 800, 1.0, 0.5) == 1.0);
  for (int s = 0; s <= 100; ++s) CHECK(alpha_schedule(s, 100, 0.3, 0.0) == 0.3);
  double last = -1;
  for (int s = 0; s <= 1000; ++s) {
    const double a = alpha_schedule(s, 1000, 0.05, 0.37);
    CHECK(a >= last);
    if (s > 0) CHECK(a - last <= 0.05 / 370.0 + 1e-15);  // continuous: bounded increments
    last = a;
  }
}

TEST_CASE("config validation and presets") {
  CHECK_THROWS_AS([] { TrainConfig c; c.steps = 0; c.validate(); }(), ValidationError);
  CHECK_THROWS_AS([] { TrainConfig c; c.alpha = -1; c.validate(); }(), ValidationError);
  CHECK_THROWS_AS([] { TrainConfig c; c.ratio = 0; c.validate(); }(), ValidationError);
  CHECK_THROWS_AS(train_mode_from_string("bogus"), ValidationError);
  const TrainConfig carve = preset("carve");
  CHECK(carve.labelled_bs == 2);
  CHECK(carve.lr == 0.01);
  CHECK(carve.steps == 800);
  CHECK(carve.alpha == 1.0);
  CHECK(carve.ratio == 4);
  CHECK(carve.prior.mean == 0.4);
  const TrainConfig brats = preset("brats");
  CHECK(brats.lr == 0.03);
  CHECK(brats.steps == 200);
  CHECK(brats.alpha == 0.05);
  CHECK(brats.ratio == 5);
  CHECK(brats.prior.mean == 0.5);
  const TrainConfig t1 = preset("task01");
  CHECK(t1.labelled_bs == 1);
  CHECK(t1.lr == 0.0004);
  CHECK(t1.steps == 25000);
  CHECK(t1.alpha == 0.1);
  CHECK(t1.ratio == 2);
  CHECK(t1.prior.mean == 0.9);
  const TrainConfig t5 = preset("task05");
  CHECK(t5.lr == 0.001);
  CHECK(t5.steps == 2000);
  CHECK(t5.alpha == 0.002);
  CHECK(t5.prior.stddev == 0.1);
  const TrainConfig desk = preset("desk");
  CHECK(desk.steps == 800);
  CHECK(desk.lr == 0.01);
  CHECK(desk.warmup_fraction == 0.5);
  CHECK_THROWS_AS(preset("nope"), ValidationError);
}

TEST_CASE("key-value config round trip and errors") {
  TrainConfig c = preset("brats");
  c.seed = 12;
  c.mode = TrainMode::segpl_vi;
  c.kl_weight = 0.25;
  CHECK(train_config_from(to_key_values(c)) == c);
  CHECK(train_config_from(parse_key_values(format_key_values(to_key_values(c)))) == c);
  const KeyValues kv = parse_key_values("# comment\npreset = task05\n\nsteps = 12  # trailing\nmode=segpl\n");
  const TrainConfig p = train_config_from(kv);
  CHECK(p.steps == 12);
  CHECK(p.lr == 0.001);
  CHECK(p.mode == TrainMode::segpl);
  CHECK_THROWS_AS(parse_key_values("steps 12"), ValidationError);
  CHECK_THROWS_AS(parse_key_values("a = 1\na = 2"), ValidationError);
  CHECK_THROWS_AS(train_config_from(parse_key_values("colour = red")), ValidationError);
  CHECK_THROWS_AS(train_config_from(parse_key_values("steps = 1.5")), ValidationError);
}

TEST_CASE("supervised step has no unsupervised or KL term") {
  const auto samples = small_samples(6);
  InMemoryPool pool(samples);
  const TrainConfig c = tiny_config(TrainMode::supervised);
  TrainState state = TrainState::initial(c);
  const Backbone before = state.model;
  const StepResult r = train_step(state, stack_batch(pool, {0, 1}, true), nullptr, c);
  CHECK(r.loss.unsupervised == 0.0);
  CHECK(r.loss.kl == 0.0);
  CHECK(!r.threshold.has_value());
  CHECK(state.step == 1);
  CHECK(state.optimizer.state().step == 1);
  CHECK(!(state.model.parameters() == before.parameters()));
}

TEST_CASE("segpl step at zero alpha matches the supervised update bit for bit") {
  const auto samples = small_samples(12);
  InMemoryPool pool(samples);
  const ImageBatch labelled = stack_batch(pool, {0, 1}, true);
  const ImageBatch unlabelled = stack_batch(pool, {2, 3, 4, 5, 6, 7, 8, 9}, false);

  const TrainConfig sup = tiny_config(TrainMode::supervised);
  TrainConfig pl = tiny_config(TrainMode::segpl);  // step 0 of warm-up: alpha_eff = 0
  REQUIRE(alpha_schedule(0, pl.steps, pl.alpha, pl.warmup_fraction) == 0.0);
  TrainState a = TrainState::initial(sup), b = TrainState::initial(pl);
  REQUIRE(a.model.parameters() == b.model.parameters());
  const StepResult ra = train_step(a, labelled, nullptr, sup);
  const StepResult rb = train_step(b, labelled, &unlabelled, pl);
  CHECK(rb.loss.alpha_effective == 0.0);
  CHECK(rb.loss.total == ra.loss.total);
  CHECK(a.model.parameters() == b.model.parameters());
  CHECK(a.optimizer.state().first_moment == b.optimizer.state().first_moment);
  CHECK(a.optimizer.state().second_moment == b.optimizer.state().second_moment);
}

TEST_CASE("segpl_vi step reports the KL of the head's posterior") {
  const auto samples = small_samples(12);
  InMemoryPool pool(samples);
  TrainConfig c = tiny_config(TrainMode::segpl_vi);
  c.prior = {0.9, 0.1};
  TrainState s = TrainState::initial(c);
  REQUIRE(s.head.has_value());
  for (int k = 0; k < 3; ++k) {
    const ImageBatch l = stack_batch(pool, {0, 1}, true);
    const ImageBatch u = stack_batch(pool, {2, 3, 4, 5, 6, 7, 8, 9}, false);
    const StepResult r = train_step(s, l, &u, c);
    REQUIRE(r.posterior.has_value());
    const double kl = kl_gaussian(*r.posterior, c.prior);
    CHECK(r.loss.kl == doctest::Approx(kl).epsilon(1e-14));
    if (std::abs(r.posterior->mean - 0.9) > 1e-9) CHECK(r.loss.kl > 0.0);
    CHECK(*r.threshold >= kThresholdMin);
    CHECK(*r.threshold <= kThresholdMax);
  }
  CHECK_THROWS_AS(train_step(s, stack_batch(pool, {0, 1}, true), nullptr, c), ValidationError);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  auto samples = small_samples(4);
  samples[0].image[5] = std::numeric_limits<double>::quiet_NaN();
  InMemoryPool pool(samples);
  const TrainConfig c = tiny_config(TrainMode::supervised);
  TrainState s = TrainState::initial(c);
  try {
    train_step(s, stack_batch(pool, {0, 1}, true), nullptr, c);
    FAIL("expected NonFiniteLossError");
  } catch (const NonFiniteLossError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step 0") != std::string::npos);
    CHECK(msg.find("sup=") != std::string::npos);
    CHECK(msg.find("T=") != std::string::npos);
  }
}

TEST_CASE("fit: one step, one row, one update, checkpoints written") {
  TempDir tmp("fit1");
  const DatasetSplit split = segpl::split(small_samples(20), SplitCounts{4, 8, 4, 4}, 0);
  TrainConfig c = tiny_config(TrainMode::segpl);
  c.steps = 1;
  const FitResult r = fit(c, split, {tmp.path() / "run", {}});
  CHECK(r.final_state.step == 1);
  CHECK(r.final_state.optimizer.state().step == 1);
  const auto lines = csv_lines(r.metrics_csv);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == kMetricsHeader);
  CHECK(lines[1].rfind("1,", 0) == 0);
  CHECK(std::filesystem::exists(tmp.path() / "run" / "final.ckpt"));
  CHECK(std::filesystem::exists(tmp.path() / "run" / "best.ckpt"));
  CHECK(r.metrics.size() == 1);
  CHECK(r.metrics[0].val_iou.has_value());
  const auto rows = read_metrics_csv(r.metrics_csv);
  CHECK(rows[0].loss.total == r.metrics[0].loss.total);
}

TEST_CASE("fit is deterministic apart from wall time") {
  TempDir tmp("fit-det");
  const DatasetSplit split = segpl::split(small_samples(20), SplitCounts{4, 8, 4, 4}, 1);
  const TrainConfig c = tiny_config(TrainMode::segpl_vi);
  const FitResult a = fit(c, split, {tmp.path() / "a", {}});
  const FitResult b = fit(c, split, {tmp.path() / "b", {}});
  const auto la = csv_lines(a.metrics_csv), lb = csv_lines(b.metrics_csv);
  REQUIRE(la.size() == lb.size());
  for (std::size_t i = 1; i < la.size(); ++i) CHECK(without_wall_time(la[i]) == without_wall_time(lb[i]));
  CHECK(a.final_state.model.parameters() == b.final_state.model.parameters());
}

TEST_CASE("fit keeps the best-validation state and validates every eval_every steps") {
  const DatasetSplit split = segpl::split(small_samples(20), SplitCounts{4, 8, 4, 4}, 2);
  TrainConfig c = tiny_config(TrainMode::segpl);
  c.steps = 5;
  c.eval_every = 2;
  const FitResult r = fit(c, split);
  double best = -1;
  for (const MetricsRow& row : r.metrics) {
    CHECK(row.val_iou.has_value() == (row.step % 2 == 0 || row.step == 5));
    if (row.val_iou) best = std::max(best, *row.val_iou);
  }
  CHECK(r.final_state.best_val_iou == best);
  CHECK(r.metrics_csv.empty());
}

TEST_CASE("supervised fit never reads unlabelled images") {
  const DatasetSplit base = segpl::split(small_samples(20), SplitCounts{4, 8, 4, 4}, 3);
  auto counting = std::make_shared<CountingPool>(base.unlabelled);
  DatasetSplit split = base;
  split.unlabelled = counting;
  fit(tiny_config(TrainMode::supervised), split);
  CHECK(counting->reads == 0);
  fit(tiny_config(TrainMode::segpl), split);
  CHECK(counting->reads > 0);
}

TEST_CASE("fit preserves the partial CSV when a step aborts") {
  TempDir tmp("abort");
  auto samples = small_samples(20);
  DatasetSplit split = segpl::split(samples, SplitCounts{4, 8, 4, 4}, 4);
  // Poison one labelled image; with batch size 1 it is reached within 4 steps.
  std::vector<Sample> labelled;
  for (std::size_t i = 0; i < split.labelled->size(); ++i) labelled.push_back(split.labelled->at(i));
  labelled[2].image[0] = std::numeric_limits<double>::infinity();
  split.labelled = std::make_shared<InMemoryPool>(labelled);
  TrainConfig c = tiny_config(TrainMode::supervised);
  c.labelled_bs = 1;
  c.steps = 8;
  int completed = 0;
  FitOptions opt{tmp.path() / "run", [&](const MetricsRow&, const TrainState&) { ++completed; }};
  CHECK_THROWS_AS(fit(c, split, opt), NonFiniteLossError);
  CHECK(completed < 4);
  const auto lines = csv_lines(tmp.path() / "run" / "metrics.csv");
  CHECK(lines.size() == static_cast<std::size_t>(completed) + 1);
}

TEST_CASE("train state checkpoint round trip is exact") {
  TempDir tmp("state");
  const DatasetSplit split = segpl::split(small_samples(20), SplitCounts{4, 8, 4, 4}, 5);
  const TrainConfig c = tiny_config(TrainMode::segpl_vi);
  const FitResult r = fit(c, split);
  save_checkpoint(tmp.path() / "s.ckpt", r.final_state.to_checkpoint());
  TrainState back = TrainState::from_checkpoint(load_checkpoint(tmp.path() / "s.ckpt", c.backbone), c.lr);
  CHECK(back.step == r.final_state.step);
  CHECK(back.model.parameters() == r.final_state.model.parameters());
  CHECK(back.head->parameters() == r.final_state.head->parameters());
  CHECK(back.optimizer.state().step == r.final_state.optimizer.state().step);
  CHECK(back.optimizer.state().first_moment == r.final_state.optimizer.state().first_moment);
  CHECK(back.optimizer.state().second_moment == r.final_state.optimizer.state().second_moment);
  CHECK(back.rng == r.final_state.rng);
  CHECK(back.best_val_iou == r.final_state.best_val_iou);
}
