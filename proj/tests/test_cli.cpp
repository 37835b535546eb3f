#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "segpl/cli.hpp"
#include "segpl/config.hpp"
#include "segpl/plot.hpp"
#include "support.hpp"

using namespace segpl;
using segpl::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "segpl");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"train", "--data", "x", "--mode", "bogus"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("synth: defaults, determinism and refusal") {
  TempDir tmp("cli-synth");
  const fs::path a = tmp.path() / "a", b = tmp.path() / "b";
  REQUIRE(run({"synth", "--out", a.string(), "--seed", "7", "--size", "16", "16"}).code == kExitOk);
  REQUIRE(run({"synth", "--out", b.string(), "--seed", "7", "--size", "16", "16"}).code == kExitOk);
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["splits"]["labelled"].size() == 4);
  CHECK(manifest["splits"]["unlabelled"].size() == 64);
  CHECK(manifest["splits"]["validation"].size() == 8);
  CHECK(manifest["splits"]["test"].size() == 32);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
  }
  CHECK(files == 2 * 108 + 1);

  const Result refused = run({"synth", "--out", a.string(), "--size", "16", "16"});
  CHECK(refused.code != kExitOk);
  CHECK(refused.err.find("--force") != std::string::npos);
  CHECK(run({"synth", "--out", a.string(), "--size", "16", "16", "--force"}).code == kExitOk);
}

TEST_CASE("train, eval, attack, report on a tiny run") {
  TempDir tmp("cli-train");
  const fs::path data = tmp.path() / "data", run_dir = tmp.path() / "run";
  REQUIRE(run({"synth", "--out", data.string(), "--size", "16", "16", "--num-images", "20", "--labelled", "4",
               "--unlabelled", "8", "--validation", "4", "--test", "4"})
              .code == kExitOk);
  const fs::path conf = tmp.path() / "c.conf";
  std::ofstream(conf) << "mode = segpl\nsteps = 3\neval_every = 1\ndepth = 2\nbase_width = 2\n";
  const Result t = run({"train", "--data", data.string(), "--config", conf.string(), "--mode", "segpl_vi",
                        "--prior-mean", "0.9", "--prior-std", "0.1", "--run-dir", run_dir.string(), "--quiet"});
  REQUIRE_MESSAGE(t.code == kExitOk, t.err);
  const auto manifest = nlohmann::json::parse(slurp(run_dir / "manifest.json"));
  CHECK(manifest["config"]["mode"] == "segpl_vi");  // flag overrides file
  CHECK(manifest["config"]["steps"] == "3");         // file overrides preset
  CHECK(manifest["config"]["prior_mean"] == "0.9");
  CHECK(manifest.contains("code_version"));
  CHECK(manifest["seed"] == 0);
  for (const auto& a : manifest["artifacts"]) CHECK(fs::exists(run_dir / a.get<std::string>()));

  CHECK(run({"eval", "--run", run_dir.string()}).code == kExitOk);
  CHECK(fs::exists(run_dir / "eval_best_test.csv"));
  CHECK(run({"attack", "--run", run_dir.string(), "--gammas", "0", "1", "--epsilons", "0", "0.01"}).code ==
        kExitOk);
  CHECK(run({"report", "--run", run_dir.string()}).code == kExitOk);
  for (const char* f : {"loss_curves.svg", "threshold_trajectory.svg", "robustness_gamma.svg",
                        "robustness_epsilon.svg", "val_iou.svg"}) {
    CHECK(fs::exists(run_dir / f));
  }
  const auto after = nlohmann::json::parse(slurp(run_dir / "manifest.json"));
  for (const auto& a : after["artifacts"]) CHECK(fs::exists(run_dir / a.get<std::string>()));
  std::size_t manifests = 0;
  for (const auto& e : fs::directory_iterator(run_dir)) manifests += e.path().filename() == "manifest.json";
  CHECK(manifests == 1);
}

TEST_CASE("eval on a missing checkpoint is a clear runtime error") {
  TempDir tmp("cli-missing");
  const Result r = run({"eval", "--run", (tmp.path() / "nowhere").string()});
  CHECK(r.code == kExitRuntime);
  CHECK(r.err.find("does not exist") != std::string::npos);
  fs::create_directories(tmp.path() / "run");
  std::ofstream(tmp.path() / "run" / "manifest.json") << R"({"config": {}, "artifacts": []})";
  const Result r2 = run({"eval", "--run", (tmp.path() / "run").string()});
  CHECK(r2.code == kExitRuntime);
  CHECK(r2.err.find("best.ckpt") != std::string::npos);
}

TEST_CASE("emdemo writes a monotone log-likelihood trace") {
  TempDir tmp("cli-em");
  const fs::path dir = tmp.path() / "em";
  REQUIRE(run({"emdemo", "--out", dir.string(), "--seed", "3"}).code == kExitOk);
  std::ifstream in(dir / "em_trace.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "iter,loglik,free_energy,weight0,weight1,mean0,mean1,std0,std1");
  double last = -1e300;
  int rows = 0;
  while (std::getline(in, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    const double ll = std::stod(line.substr(a + 1, b - a - 1));
    CHECK(ll >= last - 1e-9);
    last = ll;
    ++rows;
  }
  CHECK(rows == 31);
  CHECK(fs::exists(dir / "em_convergence.svg"));
}

TEST_CASE("svg plot escapes labels and leaves gaps for missing values") {
  const std::string svg = render_line_plot({"a < b", "x", "y"}, {{"s&t", {0, 1, 2, 3}, {1, std::nan(""), 2, 3}}});
  CHECK(svg.find("a &lt; b") != std::string::npos);
  CHECK(svg.find("s&amp;t") != std::string::npos);
  CHECK(svg.find("<svg") == 0);
  // The NaN breaks the polyline into two move-to segments.
  std::size_t moves = 0;
  for (std::size_t p = svg.find("d=\""); p < svg.size() && svg[p] != '/'; ++p) moves += svg[p] == 'M';
  CHECK(moves == 2);
}

TEST_CASE("shipped configs parse and validate") {
  int count = 0;
  for (const auto& e : fs::directory_iterator(fs::path(SEGPL_SOURCE_DIR) / "configs")) {
    if (e.path().extension() != ".conf") continue;
    CAPTURE(e.path().string());
    const TrainConfig c = train_config_from(read_key_values(e.path()));
    CHECK_NOTHROW(c.validate());
    ++count;
  }
  CHECK(count >= 5);
}
