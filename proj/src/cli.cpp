#include "segpl/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <optional>
#include <random>
#include <sstream>

#include "segpl/checkpoint.hpp"
#include "segpl/config.hpp"
#include "segpl/data.hpp"
#include "segpl/em_oracle.hpp"
#include "segpl/error.hpp"
#include "segpl/format.hpp"
#include "segpl/eval.hpp"
#include "segpl/plot.hpp"
#include "segpl/trainer.hpp"

#ifndef SEGPL_CODE_VERSION
#define SEGPL_CODE_VERSION "unknown"
#endif

namespace segpl {

namespace fs = std::filesystem;
using nlohmann::json;

std::string code_version() { return SEGPL_CODE_VERSION; }

namespace {

constexpr const char* kManifestName = "manifest.json";

// ---- run manifest --------------------------------------------------------

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FileError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json new_manifest(const std::string& command, const fs::path& dir, std::uint64_t seed, json config) {
  return {{"command", command},      {"code_version", code_version()}, {"seed", seed},
          {"output_dir", dir.string()}, {"config", std::move(config)},   {"artifacts", json::array()}};
}

/// Appends artifact file names (relative to the run directory) and rewrites the manifest.
void record_artifacts(const fs::path& dir, const std::vector<std::string>& names) {
  const fs::path path = dir / kManifestName;
  json m = read_json(path);
  for (const std::string& n : names) {
    if (!fs::exists(dir / n)) throw FileError("artifact " + (dir / n).string() + " was not written");
    bool present = false;
    for (const auto& a : m["artifacts"]) present = present || a.get<std::string>() == n;
    if (!present) m["artifacts"].push_back(n);
  }
  write_json(path, m);
}

fs::path timestamped_run_dir(const fs::path& root, const std::string& tag) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S") << '-' << tag;
  fs::path dir = root / os.str();
  for (int i = 2; fs::exists(dir); ++i) dir = root / (os.str() + "-" + std::to_string(i));
  return dir;
}

bool non_empty_dir(const fs::path& dir) { return fs::exists(dir) && !fs::is_empty(dir); }

// ---- shared loading --------------------------------------------------------

struct LoadedRun {
  json manifest;
  TrainConfig config;
  TrainState state;
};

LoadedRun load_run(const fs::path& run_dir, const std::string& which) {
  if (!fs::is_directory(run_dir)) throw FileError("run directory " + run_dir.string() + " does not exist");
  json manifest = read_json(run_dir / kManifestName);
  const fs::path ckpt = run_dir / (which + ".ckpt");
  if (!fs::exists(ckpt)) throw FileError("checkpoint " + ckpt.string() + " not found");
  KeyValues kv;
  for (const auto& [k, v] : manifest.at("config").items()) kv[k] = v.get<std::string>();
  TrainConfig config = train_config_from(kv);
  const Checkpoint c = load_checkpoint(ckpt, config.backbone);
  return {std::move(manifest), config, TrainState::from_checkpoint(c, config.lr)};
}

std::shared_ptr<const SamplePool> pick_split(const DatasetSplit& split, const std::string& name) {
  if (name == "test") return split.test;
  if (name == "validation") return split.validation;
  if (name == "labelled") return split.labelled;
  throw ValidationError("unknown split '" + name + "'");
}

fs::path dataset_of(const json& manifest, const std::string& override_dir) {
  if (!override_dir.empty()) return override_dir;
  if (!manifest.contains("dataset")) throw ValidationError("run manifest does not name a dataset; pass --data");
  return manifest.at("dataset").get<std::string>();
}

void write_sweep_csv(const fs::path& path, const std::string& column,
                     const std::vector<std::pair<double, double>>& table) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << column << ",mean_iou\n";
  for (const auto& [x, y] : table) out << format_real(x) << ',' << format_real(y) << '\n';
}

std::vector<std::pair<double, double>> read_sweep_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<double, double>> out;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    out.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  return out;
}

Series sweep_series(const std::string& name, const std::vector<std::pair<double, double>>& table) {
  Series s{name, {}, {}};
  for (const auto& [x, y] : table) s.x.push_back(x), s.y.push_back(y);
  return s;
}

// ---- subcommands -----------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 0;
  std::vector<int> size{64, 64};
  int num_images = 108;
  int max_shapes = 3;
  double noise = 0.12;
  std::vector<std::string> shapes{"ellipse", "rectangle", "blob"};
  SplitCounts counts;
  bool force = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const fs::path dir = a.out;
  if (non_empty_dir(dir) && !a.force) {
    throw ValidationError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  }
  SyntheticSpec spec;
  spec.image_size = a.size;
  spec.num_images = a.num_images;
  spec.max_shapes = a.max_shapes;
  spec.noise_std = a.noise;
  spec.seed = a.seed;
  spec.shapes.clear();
  for (const auto& s : a.shapes) spec.shapes.push_back(shape_kind_from_string(s));
  spec.validate();
  if (a.counts.total() != spec.num_images) {
    throw ValidationError("split counts sum to " + std::to_string(a.counts.total()) + " but num_images is " +
                          std::to_string(spec.num_images));
  }
  if (a.force && fs::exists(dir)) fs::remove_all(dir);
  const std::vector<Sample> samples = generate_synthetic(spec);
  const DatasetSplit s = split(samples, a.counts, a.seed);
  save_dataset(dir, samples, s, to_json(spec));
  out << "wrote " << samples.size() << " samples to " << dir.string() << " (labelled " << a.counts.labelled
      << ", unlabelled " << a.counts.unlabelled << ", validation " << a.counts.validation << ", test "
      << a.counts.test << ")\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string config_file;
  std::string preset_name = "desk";
  std::string runs_root = "runs";
  std::string run_dir;
  std::string tag;
  KeyValues overrides;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  KeyValues kv{{"preset", a.preset_name}};
  if (!a.config_file.empty()) {
    for (auto& [k, v] : read_key_values(a.config_file)) kv[k] = v;
  }
  for (const auto& [k, v] : a.overrides) kv[k] = v;
  const TrainConfig config = train_config_from(kv);
  config.validate();
  if (!fs::is_directory(a.data)) throw FileError("dataset directory " + a.data + " does not exist");
  const DatasetSplit split = load_dataset(a.data);

  const fs::path dir =
      a.run_dir.empty() ? timestamped_run_dir(a.runs_root, a.tag.empty() ? to_string(config.mode) : a.tag)
                        : fs::path(a.run_dir);
  if (non_empty_dir(dir)) throw ValidationError("run directory " + dir.string() + " is not empty");
  fs::create_directories(dir);
  json manifest = new_manifest("train", dir, config.seed, json(to_key_values(config)));
  manifest["dataset"] = fs::absolute(a.data).string();
  write_json(dir / kManifestName, manifest);
  {
    std::ofstream conf(dir / "config.conf");
    conf << format_key_values(to_key_values(config));
  }

  FitOptions options;
  options.run_dir = dir;
  if (!a.quiet) {
    options.on_step = [&](const MetricsRow& row, const TrainState&) {
      if (row.val_iou) {
        out << "step " << row.step << "/" << config.steps << " loss " << row.loss.total << " val_iou "
            << *row.val_iou << '\n';
      }
    };
  }
  const FitResult r = fit(config, split, options);
  record_artifacts(dir, {"config.conf", "metrics.csv", "final.ckpt", "best.ckpt"});
  out << "run directory: " << dir.string() << "\nbest validation IoU: " << r.final_state.best_val_iou << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string run;
  std::string checkpoint = "best";
  std::string data;
  std::string split_name = "test";
  int mc_samples = kDefaultMcSamples;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const LoadedRun run = load_run(a.run, a.checkpoint);
  const DatasetSplit split = load_dataset(dataset_of(run.manifest, a.data));
  const auto pool = pick_split(split, a.split_name);
  const PosteriorHead* head = run.state.head ? &*run.state.head : nullptr;
  const EvalReport report = evaluate(run.state.model, head, *pool, {8, a.mc_samples, a.seed});

  const fs::path dir = a.run;
  const std::string stem = "eval_" + a.checkpoint + "_" + a.split_name;
  {
    std::ofstream csv(dir / (stem + ".csv"));
    csv << "index,iou\n";
    for (std::size_t i = 0; i < report.per_image_iou.size(); ++i) {
      csv << i << ',' << format_real(report.per_image_iou[i]) << '\n';
    }
  }
  write_json(dir / (stem + ".json"), {{"checkpoint", a.checkpoint},
                                      {"split", a.split_name},
                                      {"mean_iou", report.mean_iou},
                                      {"std_iou", report.std_iou},
                                      {"brier", report.brier},
                                      {"mc_samples", report.mc_samples},
                                      {"seed", a.seed}});
  record_artifacts(dir, {stem + ".csv", stem + ".json"});
  out << a.split_name << " IoU " << report.mean_iou << " +- " << report.std_iou << ", Brier " << report.brier
      << '\n';
  return kExitOk;
}

struct AttackArgs {
  std::string run;
  std::string checkpoint = "best";
  std::string data;
  std::string split_name = "test";
  std::vector<double> gammas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> epsilons{0.0, 2e-3, 5e-3, 1e-2};
  OodOptions ood;
  std::uint64_t seed = 0;
};

int cmd_attack(const AttackArgs& a, std::ostream& out) {
  const LoadedRun run = load_run(a.run, a.checkpoint);
  const DatasetSplit split = load_dataset(dataset_of(run.manifest, a.data));
  const auto pool = pick_split(split, a.split_name);
  const EvalReport r = robustness_sweep(run.state.model, *pool, a.gammas, a.epsilons, a.ood, a.seed);
  const fs::path dir = a.run;
  write_sweep_csv(dir / "robustness_gamma.csv", "gamma", r.gamma_table);
  write_sweep_csv(dir / "robustness_epsilon.csv", "epsilon", r.epsilon_table);
  write_line_plot(dir / "robustness_gamma.svg", {"IoU under intensity shift", "gamma", "mean IoU"},
                  {sweep_series(to_string(run.config.mode), r.gamma_table)});
  write_line_plot(dir / "robustness_epsilon.svg", {"IoU under FGSM attack", "epsilon", "mean IoU"},
                  {sweep_series(to_string(run.config.mode), r.epsilon_table)});
  record_artifacts(dir, {"robustness_gamma.csv", "robustness_epsilon.csv", "robustness_gamma.svg",
                         "robustness_epsilon.svg"});
  out << "clean IoU " << r.mean_iou << '\n';
  for (const auto& [g, v] : r.gamma_table) out << "gamma " << g << ": " << v << '\n';
  for (const auto& [e, v] : r.epsilon_table) out << "epsilon " << e << ": " << v << '\n';
  return kExitOk;
}

struct EmArgs {
  std::string out;
  std::uint64_t seed = 0;
  int points = 400;
  int iters = 30;
  std::string mode = "soft";
  double threshold = 0.5;
  double separation = 3.0;
  bool force = false;
};

int cmd_emdemo(const EmArgs& a, std::ostream& out) {
  if (a.points < 2) throw ValidationError("--points must be >= 2");
  if (a.iters < 1) throw ValidationError("--iters must be >= 1");
  const fs::path dir = a.out;
  if (non_empty_dir(dir) && !a.force) throw ValidationError("output directory " + dir.string() + " is not empty");
  fs::create_directories(dir);

  std::mt19937_64 rng(a.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution pick(0.4);
  std::vector<double> data(static_cast<std::size_t>(a.points));
  for (double& x : data) x = pick(rng) ? a.separation + 0.7 * normal(rng) : normal(rng);
  em::MixtureParams init;
  std::uniform_real_distribution<double> u(-1.0, a.separation + 1.0);
  init.means = {u(rng), u(rng)};

  const em::Mode mode = a.mode == "hard" ? em::Mode::hard : em::Mode::soft;
  const em::Trace trace = em::run_em(data, init, mode, a.threshold, a.iters);
  {
    std::ofstream csv(dir / "em_trace.csv");
    csv << "iter,loglik,free_energy,weight0,weight1,mean0,mean1,std0,std1\n";
    for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
      const auto& it = trace.iterations[i];
      csv << i << ',' << format_real(it.log_likelihood) << ',' << format_real(it.free_energy) << ','
          << format_real(it.params.weights[0]) << ',' << format_real(it.params.weights[1]) << ','
          << format_real(it.params.means[0]) << ',' << format_real(it.params.means[1]) << ',' << format_real(it.params.stds[0])
          << ',' << format_real(it.params.stds[1]) << '\n';
    }
  }
  Series ll{"log-likelihood", {}, {}}, fe{"free energy", {}, {}};
  for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
    ll.x.push_back(static_cast<double>(i));
    ll.y.push_back(trace.iterations[i].log_likelihood);
    fe.x.push_back(static_cast<double>(i));
    fe.y.push_back(trace.iterations[i].free_energy);
  }
  write_line_plot(dir / "em_convergence.svg", {a.mode + " EM on a two-component mixture", "iteration", "nats"},
                  {ll, fe});
  write_json(dir / kManifestName,
             new_manifest("emdemo", dir, a.seed,
                          {{"points", a.points}, {"iters", a.iters}, {"mode", a.mode}, {"threshold", a.threshold},
                           {"separation", a.separation}}));
  record_artifacts(dir, {"em_trace.csv", "em_convergence.svg"});
  out << "log-likelihood " << trace.iterations.front().log_likelihood << " -> "
      << trace.iterations.back().log_likelihood << " over " << a.iters << " iterations\n";
  return kExitOk;
}

int cmd_report(const std::string& run_dir, std::ostream& out) {
  const fs::path dir = run_dir;
  if (!fs::exists(dir / "metrics.csv")) throw FileError("no metrics.csv in " + dir.string());
  const json manifest = read_json(dir / kManifestName);
  const std::vector<MetricsRow> rows = read_metrics_csv(dir / "metrics.csv");
  const double nan = std::nan("");
  Series total{"total", {}, {}}, sup{"supervised", {}, {}}, unsup{"unsupervised", {}, {}}, kl{"kl", {}, {}};
  Series threshold{"sampled T", {}, {}}, val{"validation IoU", {}, {}};
  bool any_threshold = false;
  for (const MetricsRow& r : rows) {
    const double s = static_cast<double>(r.step);
    total.x.push_back(s), total.y.push_back(r.loss.total);
    sup.x.push_back(s), sup.y.push_back(r.loss.supervised);
    unsup.x.push_back(s), unsup.y.push_back(r.loss.unsupervised);
    kl.x.push_back(s), kl.y.push_back(r.loss.kl);
    threshold.x.push_back(s), threshold.y.push_back(r.sampled_threshold.value_or(nan));
    any_threshold = any_threshold || r.sampled_threshold.has_value();
    val.x.push_back(s), val.y.push_back(r.val_iou.value_or(nan));
  }
  std::vector<std::string> written{"loss_curves.svg", "val_iou.svg"};
  write_line_plot(dir / "loss_curves.svg", {"Training losses", "step", "loss"}, {total, sup, unsup, kl});
  write_line_plot(dir / "val_iou.svg", {"Validation IoU", "step", "IoU"}, {val});
  if (any_threshold) {
    write_line_plot(dir / "threshold_trajectory.svg", {"Pseudo-label threshold", "step", "T"}, {threshold});
    written.push_back("threshold_trajectory.svg");
  }
  const std::string mode = manifest.at("config").value("mode", "model");
  if (fs::exists(dir / "robustness_gamma.csv")) {
    write_line_plot(dir / "robustness_gamma.svg", {"IoU under intensity shift", "gamma", "mean IoU"},
                    {sweep_series(mode, read_sweep_csv(dir / "robustness_gamma.csv"))});
    written.push_back("robustness_gamma.svg");
  }
  if (fs::exists(dir / "robustness_epsilon.csv")) {
    write_line_plot(dir / "robustness_epsilon.svg", {"IoU under FGSM attack", "epsilon", "mean IoU"},
                    {sweep_series(mode, read_sweep_csv(dir / "robustness_epsilon.csv"))});
    written.push_back("robustness_epsilon.svg");
  }
  record_artifacts(dir, written);
  for (const auto& w : written) out << "wrote " << (dir / w).string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pseudo-label semi-supervised segmentation toolkit", "segpl"};
  app.require_subcommand(1);
  app.set_version_flag("--version", code_version());

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic shapes dataset with a fixed split");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--seed", synth.seed, "Random seed");
  c_synth->add_option("--size", synth.size, "Spatial size, 2 or 3 values (H W or D H W)")->expected(2, 3);
  c_synth->add_option("--num-images", synth.num_images, "Number of images");
  c_synth->add_option("--max-shapes", synth.max_shapes, "Maximum shapes per image");
  c_synth->add_option("--noise", synth.noise, "Additive Gaussian noise std");
  c_synth->add_option("--shapes", synth.shapes, "Shape kinds")
      ->check(CLI::IsMember({"ellipse", "rectangle", "blob"}));
  c_synth->add_option("--labelled", synth.counts.labelled, "Labelled split size");
  c_synth->add_option("--unlabelled", synth.counts.unlabelled, "Unlabelled split size");
  c_synth->add_option("--validation", synth.counts.validation, "Validation split size");
  c_synth->add_option("--test", synth.counts.test, "Test split size");
  c_synth->add_flag("--force", synth.force, "Replace an existing output directory");

  TrainArgs train;
  std::map<std::string, std::string> flag_values;
  auto* c_train = app.add_subcommand("train", "Train a model and write a run directory");
  c_train->add_option("--data", train.data, "Dataset directory written by synth")->required();
  c_train->add_option("--config", train.config_file, "key = value config file");
  c_train->add_option("--preset", train.preset_name, "Base hyper-parameters")
      ->check(CLI::IsMember(preset_names()));
  c_train->add_option("--runs-root", train.runs_root, "Parent of timestamped run directories");
  c_train->add_option("--run-dir", train.run_dir, "Explicit run directory");
  c_train->add_option("--tag", train.tag, "Run directory suffix (default: the mode)");
  c_train->add_flag("--quiet", train.quiet, "Suppress progress lines");
  c_train->add_option("--mode", flag_values["mode"], "supervised, segpl or segpl_vi")
      ->check(CLI::IsMember({"supervised", "segpl", "segpl_vi"}));
  const std::vector<std::pair<std::string, std::string>> train_flags{
      {"labelled_bs", "Labelled images per step"},
      {"lr", "Adam learning rate"},
      {"steps", "Optimizer steps"},
      {"alpha", "Unsupervised loss weight after warm-up"},
      {"ratio", "Unlabelled to labelled batch ratio"},
      {"warmup_fraction", "Fraction of steps over which alpha ramps up"},
      {"prior_mean", "Threshold prior mean"},
      {"prior_std", "Threshold prior std"},
      {"kl_weight", "Weight of the KL term"},
      {"threshold", "Fixed pseudo-label threshold (segpl)"},
      {"seed", "Random seed"},
      {"eval_every", "Validation interval in steps"},
      {"spatial_rank", "2 or 3"},
      {"in_channels", "Image channels"},
      {"out_channels", "Output classes"},
      {"base_width", "Channels at the first level"},
      {"depth", "Number of down-sampling levels"}};
  for (const auto& [key, help] : train_flags) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    c_train->add_option(flag, flag_values[key], help);
  }

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a run's checkpoint (IoU, Brier)");
  c_eval->add_option("--run", eval.run, "Run directory")->required();
  c_eval->add_option("--checkpoint", eval.checkpoint, "best or final")->check(CLI::IsMember({"best", "final"}));
  c_eval->add_option("--data", eval.data, "Dataset directory (default: the one used for training)");
  c_eval->add_option("--split", eval.split_name, "Split to evaluate")
      ->check(CLI::IsMember({"test", "validation", "labelled"}));
  c_eval->add_option("--mc-samples", eval.mc_samples, "Threshold samples for segpl_vi runs")
      ->check(CLI::PositiveNumber);
  c_eval->add_option("--seed", eval.seed, "Random seed");

  AttackArgs attack;
  auto* c_attack = app.add_subcommand("attack", "Robustness sweeps: intensity shift and FGSM");
  c_attack->add_option("--run", attack.run, "Run directory")->required();
  c_attack->add_option("--checkpoint", attack.checkpoint, "best or final")->check(CLI::IsMember({"best", "final"}));
  c_attack->add_option("--data", attack.data, "Dataset directory (default: the one used for training)");
  c_attack->add_option("--split", attack.split_name, "Split to evaluate")
      ->check(CLI::IsMember({"test", "validation", "labelled"}));
  c_attack->add_option("--gammas", attack.gammas, "Mix-up strengths");
  c_attack->add_option("--epsilons", attack.epsilons, "FGSM step sizes");
  c_attack->add_option("--ood-noise", attack.ood.noise_std, "Noise std of the corrupted image");
  c_attack->add_option("--seed", attack.seed, "Random seed");

  EmArgs em;
  auto* c_em = app.add_subcommand("emdemo", "EM on a 1-D two-component mixture");
  c_em->add_option("--out", em.out, "Output directory")->required();
  c_em->add_option("--seed", em.seed, "Random seed");
  c_em->add_option("--points", em.points, "Number of data points");
  c_em->add_option("--iters", em.iters, "EM iterations");
  c_em->add_option("--mode", em.mode, "soft or hard")->check(CLI::IsMember({"soft", "hard"}));
  c_em->add_option("--threshold", em.threshold, "Hard-assignment threshold");
  c_em->add_option("--separation", em.separation, "Distance between the true means");
  c_em->add_flag("--force", em.force, "Write into a non-empty directory");

  std::string report_run;
  std::uint64_t report_seed = 0;
  auto* c_report = app.add_subcommand("report", "Plots from a run directory");
  c_report->add_option("--run", report_run, "Run directory")->required();
  c_report->add_option("--seed", report_seed, "Accepted for uniformity; unused");

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_synth) return cmd_synth(synth, out);
    if (*c_train) {
      for (const auto& [k, v] : flag_values) {
        if (!v.empty()) train.overrides[k] = v;
      }
      return cmd_train(train, out);
    }
    if (*c_eval) return cmd_eval(eval, out);
    if (*c_attack) return cmd_attack(attack, out);
    if (*c_em) return cmd_emdemo(em, out);
    if (*c_report) return cmd_report(report_run, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace segpl
