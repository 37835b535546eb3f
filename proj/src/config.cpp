#include "segpl/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "segpl/error.hpp"
#include "segpl/format.hpp"

namespace segpl {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ValidationError("config key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

long long to_integer(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw ValidationError("config key '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

int to_int(const std::string& key, const std::string& v) { return static_cast<int>(to_integer(key, v)); }

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ValidationError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ValidationError(where + ": empty key");
    if (!out.emplace(key, value).second) throw ValidationError(where + ": key '" + key + "' repeated");
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_key_values(os.str(), path.string());
}

TrainConfig train_config_from(const KeyValues& values, TrainConfig base) {
  TrainConfig c = base;
  if (auto it = values.find("preset"); it != values.end()) c = preset(it->second);
  for (const auto& [key, v] : values) {
    if (key == "preset") continue;
    else if (key == "mode") c.mode = train_mode_from_string(v);
    else if (key == "labelled_bs") c.labelled_bs = to_int(key, v);
    else if (key == "lr") c.lr = to_double(key, v);
    else if (key == "steps") c.steps = to_int(key, v);
    else if (key == "alpha") c.alpha = to_double(key, v);
    else if (key == "ratio") c.ratio = to_int(key, v);
    else if (key == "warmup_fraction") c.warmup_fraction = to_double(key, v);
    else if (key == "prior_mean") c.prior.mean = to_double(key, v);
    else if (key == "prior_std") c.prior.stddev = to_double(key, v);
    else if (key == "kl_weight") c.kl_weight = to_double(key, v);
    else if (key == "threshold") c.threshold = to_double(key, v);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_integer(key, v));
    else if (key == "eval_every") c.eval_every = to_int(key, v);
    else if (key == "spatial_rank") c.backbone.spatial_rank = to_int(key, v);
    else if (key == "in_channels") c.backbone.in_channels = to_int(key, v);
    else if (key == "out_channels") c.backbone.out_channels = to_int(key, v);
    else if (key == "base_width") c.backbone.base_width = to_int(key, v);
    else if (key == "depth") c.backbone.depth = to_int(key, v);
    else throw ValidationError("unknown config key '" + key + "'");
  }
  return c;
}

KeyValues to_key_values(const TrainConfig& c) {
  return {
      {"mode", to_string(c.mode)},
      {"labelled_bs", std::to_string(c.labelled_bs)},
      {"lr", format_real(c.lr)},
      {"steps", std::to_string(c.steps)},
      {"alpha", format_real(c.alpha)},
      {"ratio", std::to_string(c.ratio)},
      {"warmup_fraction", format_real(c.warmup_fraction)},
      {"prior_mean", format_real(c.prior.mean)},
      {"prior_std", format_real(c.prior.stddev)},
      {"kl_weight", format_real(c.kl_weight)},
      {"threshold", format_real(c.threshold)},
      {"seed", std::to_string(c.seed)},
      {"eval_every", std::to_string(c.eval_every)},
      {"spatial_rank", std::to_string(c.backbone.spatial_rank)},
      {"in_channels", std::to_string(c.backbone.in_channels)},
      {"out_channels", std::to_string(c.backbone.out_channels)},
      {"base_width", std::to_string(c.backbone.base_width)},
      {"depth", std::to_string(c.backbone.depth)},
  };
}

std::string format_key_values(const KeyValues& values) {
  std::string out;
  for (const auto& [k, v] : values) out += k + " = " + v + "\n";
  return out;
}

}  // namespace segpl
