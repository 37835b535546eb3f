#include "segpl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "segpl/error.hpp"
#include "segpl/format.hpp"
#include "segpl/eval.hpp"
#include "segpl/ops.hpp"

namespace segpl {

namespace {

constexpr std::uint64_t kHeadSeedOffset = 1;
constexpr std::uint64_t kNoiseSeedOffset = 2;
constexpr std::uint64_t kSamplerSeedOffset = 3;

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::istringstream is(s);
  std::mt19937_64 rng;
  is >> rng;
  if (!is) throw FileError("checkpoint holds a malformed rng state");
  return rng;
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::supervised: return "supervised";
    case TrainMode::segpl: return "segpl";
    case TrainMode::segpl_vi: return "segpl_vi";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "supervised") return TrainMode::supervised;
  if (name == "segpl") return TrainMode::segpl;
  if (name == "segpl_vi") return TrainMode::segpl_vi;
  throw ValidationError("unknown mode '" + name + "' (expected supervised, segpl or segpl_vi)");
}

void TrainConfig::validate() const {
  if (labelled_bs < 1) throw ValidationError("labelled_bs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be positive");
  if (steps < 1) throw ValidationError("steps must be >= 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("alpha must be >= 0");
  if (ratio < 1) throw ValidationError("ratio must be >= 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw ValidationError("warmup_fraction must lie in [0, 1]");
  }
  if (!(kl_weight >= 0.0) || !std::isfinite(kl_weight)) throw ValidationError("kl_weight must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
  if (eval_every < 1) throw ValidationError("eval_every must be >= 1");
  prior.validate();
  backbone.validate();
}

TrainConfig preset(const std::string& name) {
  TrainConfig c;
  if (name == "carve") {
    c.labelled_bs = 2; c.lr = 0.01; c.steps = 800; c.alpha = 1.0; c.ratio = 4; c.prior = {0.4, 0.1};
    c.backbone.spatial_rank = 3;
  } else if (name == "brats") {
    c.labelled_bs = 2; c.lr = 0.03; c.steps = 200; c.alpha = 0.05; c.ratio = 5; c.prior = {0.5, 0.1};
    c.backbone.spatial_rank = 3;
  } else if (name == "task01") {
    c.labelled_bs = 1; c.lr = 0.0004; c.steps = 25000; c.alpha = 0.1; c.ratio = 2; c.prior = {0.9, 0.1};
    c.backbone.spatial_rank = 3;
  } else if (name == "task05") {
    c.labelled_bs = 1; c.lr = 0.001; c.steps = 2000; c.alpha = 0.002; c.ratio = 4; c.prior = {0.9, 0.1};
    c.backbone.spatial_rank = 3;
  } else if (name == "desk") {
    // CARVE row at 2-D synthetic scale; prior from the BRATS row (see README).
    c.labelled_bs = 2; c.lr = 0.01; c.steps = 800; c.alpha = 1.0; c.ratio = 4; c.prior = {0.5, 0.1};
    c.eval_every = 50;
    c.backbone = BackboneConfig{2, 1, 1, 8, 3};
  } else {
    throw ValidationError("unknown preset '" + name + "'");
  }
  return c;
}

std::vector<std::string> preset_names() { return {"brats", "carve", "desk", "task01", "task05"}; }

double alpha_schedule(std::int64_t step, std::int64_t total_steps, double alpha, double warmup_fraction) {
  const double ramp = warmup_fraction * static_cast<double>(total_steps);
  if (ramp <= 0.0) return alpha;
  const double s = static_cast<double>(step);
  return s >= ramp ? alpha : alpha * s / ramp;
}

TrainState TrainState::initial(const TrainConfig& config) {
  config.validate();
  TrainState s{0, Backbone(config.backbone, config.seed), std::nullopt, Adam(config.lr),
               std::mt19937_64(config.seed + kNoiseSeedOffset), -1.0};
  if (config.mode == TrainMode::segpl_vi) {
    s.head.emplace(config.backbone.bottleneck_channels(), config.seed + kHeadSeedOffset, config.prior);
  }
  return s;
}

Checkpoint TrainState::to_checkpoint() const {
  Checkpoint c;
  c.config = model.config();
  c.backbone = model.parameters();
  if (head) c.head = head->parameters();
  c.optimizer = optimizer.state();
  c.step = step;
  c.extra["rng"] = rng_to_string(rng);
  c.extra["best_val_iou"] = best_val_iou;
  return c;
}

TrainState TrainState::from_checkpoint(const Checkpoint& c, double lr) {
  TrainState s{c.step, Backbone::from_parameters(c.config, c.backbone), std::nullopt, Adam(lr),
               std::mt19937_64(), c.extra.value("best_val_iou", -1.0)};
  if (c.head) s.head = PosteriorHead::from_parameters(c.config.bottleneck_channels(), *c.head);
  s.optimizer.state() = c.optimizer;
  if (c.extra.contains("rng")) s.rng = rng_from_string(c.extra.at("rng").get<std::string>());
  return s;
}

StepResult train_step(TrainState& state, const ImageBatch& labelled, const ImageBatch* unlabelled,
                      const TrainConfig& config) {
  const bool use_unlabelled = config.mode != TrainMode::supervised;
  if (use_unlabelled && (!unlabelled || unlabelled->images.empty())) {
    throw ValidationError(to_string(config.mode) + " step needs an unlabelled batch");
  }
  if (use_unlabelled && state.head == std::nullopt && config.mode == TrainMode::segpl_vi) {
    throw ValidationError("segpl_vi step needs a threshold head");
  }
  const int n_l = labelled.images.dim(0);
  const Tensor inputs = use_unlabelled ? Tensor::concat_batch(labelled.images, unlabelled->images) : labelled.images;
  const int n_total = inputs.dim(0);
  const ForwardResult fwd = state.model.forward(inputs);
  const Tensor p_l = fwd.probabilities.slice_batch(0, n_l);

  StepResult result;
  LossGradients grads;
  std::optional<HeadForward> head_fwd;
  const double alpha_eff = alpha_schedule(state.step, config.steps, config.alpha, config.warmup_fraction);

  if (config.mode == TrainMode::supervised) {
    result.loss = supervised_loss(p_l, labelled.masks, &grads);
  } else {
    const Tensor p_u = fwd.probabilities.slice_batch(n_l, n_total);
    if (config.mode == TrainMode::segpl) {
      const PseudoLabelBatch pseudo = binarize_fixed(p_u, config.threshold);
      result.threshold = pseudo.threshold_used;
      result.loss = segpl_loss(p_l, labelled.masks, p_u, pseudo, alpha_eff, &grads);
    } else {
      head_fwd = state.head->forward(fwd.bottleneck_features.slice_batch(n_l, n_total));
      const double noise = std::normal_distribution<double>(0.0, 1.0)(state.rng);
      const PseudoLabelBatch pseudo = make_pseudo_labels_vi(p_u, head_fwd->posterior, noise);
      result.threshold = pseudo.threshold_used;
      result.posterior = head_fwd->posterior;
      result.loss = segpl_vi_loss(p_l, labelled.masks, p_u, pseudo, head_fwd->posterior, config.prior, alpha_eff,
                                  config.kl_weight, &grads);
    }
  }

  if (!std::isfinite(result.loss.total)) {
    std::ostringstream os;
    os << "non-finite loss at step " << state.step << ": total=" << result.loss.total
       << " sup=" << result.loss.supervised << " unsup=" << result.loss.unsupervised << " kl=" << result.loss.kl
       << " alpha_eff=" << result.loss.alpha_effective << " T="
       << (result.threshold ? format_real(*result.threshold) : std::string("n/a"));
    throw NonFiniteLossError(os.str());
  }

  const Tensor d_prob =
      use_unlabelled ? Tensor::concat_batch(grads.d_pred_labelled, grads.d_pred_unlabelled) : grads.d_pred_labelled;
  const Tensor d_logits = ops::sigmoid_backward(fwd.probabilities, d_prob);

  std::optional<HeadGradients> head_grads;
  Tensor d_bottleneck;
  if (head_fwd) {
    head_grads = state.head->backward(*head_fwd, grads.d_mean, grads.d_log_variance);
    d_bottleneck = Tensor::zeros_like(fwd.bottleneck_features);
    const std::size_t offset = static_cast<std::size_t>(n_l) * d_bottleneck.batch_stride();
    for (std::size_t i = 0; i < head_grads->features.size(); ++i) d_bottleneck[offset + i] = head_grads->features[i];
  }
  const BackboneGradients g = state.model.backward(fwd, d_logits, head_fwd ? &d_bottleneck : nullptr);

  state.optimizer.begin_step();
  state.optimizer.apply(state.model.parameters(), g.parameters);
  if (head_grads) state.optimizer.apply(state.head->parameters(), head_grads->parameters);
  ++state.step;
  return result;
}

std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream os;
  os << r.step << ',' << format_real(r.loss.total) << ',' << format_real(r.loss.supervised) << ','
     << format_real(r.loss.unsupervised) << ',' << format_real(r.loss.kl) << ','
     << format_real(r.loss.alpha_effective) << ','
     << (r.sampled_threshold ? format_real(*r.sampled_threshold) : "") << ','
     << (r.val_iou ? format_real(*r.val_iou) : "") << ',' << format_real(r.wall_time_s);
  return os.str();
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FileError(path.string() + " does not start with the metrics header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 9) throw FileError("malformed metrics row: " + line);
    MetricsRow r;
    r.step = std::stoll(f[0]);
    r.loss.total = std::stod(f[1]);
    r.loss.supervised = std::stod(f[2]);
    r.loss.unsupervised = std::stod(f[3]);
    r.loss.kl = std::stod(f[4]);
    r.loss.alpha_effective = std::stod(f[5]);
    if (!f[6].empty()) r.sampled_threshold = std::stod(f[6]);
    if (!f[7].empty()) r.val_iou = std::stod(f[7]);
    r.wall_time_s = std::stod(f[8]);
    rows.push_back(r);
  }
  return rows;
}

FitResult fit(const TrainConfig& config, const DatasetSplit& split, const FitOptions& options) {
  config.validate();
  if (!split.labelled || split.labelled->size() == 0) throw ValidationError("fit needs labelled samples");
  const bool use_unlabelled = config.mode != TrainMode::supervised;
  if (use_unlabelled && (!split.unlabelled || split.unlabelled->size() == 0)) {
    throw ValidationError(to_string(config.mode) + " needs unlabelled samples");
  }

  FitResult result{TrainState::initial(config), TrainState::initial(config), {}, {}};
  TrainState& state = result.final_state;
  BatchIterator batches(split.labelled->size(), use_unlabelled ? split.unlabelled->size() : 0, config.labelled_bs,
                        config.ratio, config.seed + kSamplerSeedOffset);

  std::ofstream csv;
  if (!options.run_dir.empty()) {
    std::filesystem::create_directories(options.run_dir);
    result.metrics_csv = options.run_dir / "metrics.csv";
    csv.open(result.metrics_csv);
    if (!csv) throw FileError("cannot write " + result.metrics_csv.string());
    csv << kMetricsHeader << '\n' << std::flush;
  }

  const auto start = std::chrono::steady_clock::now();
  const bool validate = split.validation && split.validation->size() > 0;
  for (int i = 0; i < config.steps; ++i) {
    const ImageBatch labelled = stack_batch(*split.labelled, batches.next_labelled(), true);
    std::optional<ImageBatch> unlabelled;
    if (use_unlabelled) unlabelled = stack_batch(*split.unlabelled, batches.next_unlabelled(), false);
    const StepResult step = train_step(state, labelled, unlabelled ? &*unlabelled : nullptr, config);

    MetricsRow row;
    row.step = state.step;
    row.loss = step.loss;
    row.sampled_threshold = step.threshold;
    if (validate && (state.step % config.eval_every == 0 || state.step == config.steps)) {
      row.val_iou = mean_iou(state.model, *split.validation);
      if (*row.val_iou > state.best_val_iou) {
        state.best_val_iou = *row.val_iou;
        result.best_state = state;
      }
    }
    row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (csv.is_open()) csv << format_metrics_row(row) << '\n' << std::flush;
    if (options.on_step) options.on_step(row, state);
    result.metrics.push_back(row);
  }
  if (!validate) result.best_state = state;
  result.best_state.best_val_iou = state.best_val_iou;

  if (!options.run_dir.empty()) {
    save_checkpoint(options.run_dir / "final.ckpt", state.to_checkpoint());
    save_checkpoint(options.run_dir / "best.ckpt", result.best_state.to_checkpoint());
  }
  return result;
}

}  // namespace segpl
