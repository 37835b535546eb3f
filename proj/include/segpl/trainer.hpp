#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "segpl/adam.hpp"
#include "segpl/backbone.hpp"
#include "segpl/checkpoint.hpp"
#include "segpl/data.hpp"
#include "segpl/losses.hpp"
#include "segpl/pseudo.hpp"

namespace segpl {

enum class TrainMode { supervised, segpl, segpl_vi };

std::string to_string(TrainMode mode);
/// Throws ValidationError on an unknown name.
TrainMode train_mode_from_string(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::segpl;
  int labelled_bs = 2;
  double lr = 0.01;
  int steps = 800;
  double alpha = 1.0;
  int ratio = 4;
  double warmup_fraction = 0.5;
  PriorSpec prior{0.5, 0.1};
  double kl_weight = 1.0;
  double threshold = kDefaultThreshold;  // fixed T for segpl mode
  std::uint64_t seed = 0;
  int eval_every = 50;
  BackboneConfig backbone;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Named hyper-parameter rows: "carve", "brats", "task01", "task05" and the
/// desk-scale synthetic preset "desk".
TrainConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// Linear ramp from 0 at step 0 to `alpha` at warmup_fraction * total_steps.
double alpha_schedule(std::int64_t step, std::int64_t total_steps, double alpha, double warmup_fraction);

struct TrainState {
  std::int64_t step = 0;
  Backbone model;
  std::optional<PosteriorHead> head;
  Adam optimizer;
  std::mt19937_64 rng;
  double best_val_iou = -1.0;

  static TrainState initial(const TrainConfig& config);
  Checkpoint to_checkpoint() const;
  static TrainState from_checkpoint(const Checkpoint& checkpoint, double lr);
};

struct StepResult {
  LossBreakdown loss;
  std::optional<double> threshold;  // fixed or sampled T; empty in supervised mode
  std::optional<ThresholdPosterior> posterior;
};

/// One forward pass over [labelled; unlabelled], one Adam update. `unlabelled`
/// is ignored (and may be null) in supervised mode.
StepResult train_step(TrainState& state, const ImageBatch& labelled, const ImageBatch* unlabelled,
                      const TrainConfig& config);

struct MetricsRow {
  std::int64_t step = 0;
  LossBreakdown loss;
  std::optional<double> sampled_threshold;
  std::optional<double> val_iou;
  double wall_time_s = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "step,loss_total,loss_sup,loss_unsup,loss_kl,alpha_eff,sampled_T,val_iou,wall_time_s";
std::string format_metrics_row(const MetricsRow& row);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

struct FitOptions {
  std::filesystem::path run_dir;  // empty: nothing is written
  std::function<void(const MetricsRow&, const TrainState&)> on_step;  // after each step
};

struct FitResult {
  TrainState final_state;
  TrainState best_state;
  std::vector<MetricsRow> metrics;
  std::filesystem::path metrics_csv;  // empty when no run_dir was given
};

/// Runs config.steps steps. Validation IoU is computed every eval_every steps
/// and after the last step; the best-validation state is kept. With a run_dir,
/// writes metrics.csv (flushed per row), final.ckpt and best.ckpt.
FitResult fit(const TrainConfig& config, const DatasetSplit& split, const FitOptions& options = {});

}  // namespace segpl
