#include "segpl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>

#include "segpl/array_io.hpp"
#include "segpl/error.hpp"

namespace segpl {

namespace fs = std::filesystem;

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::blob: return "blob";
  }
  return "unknown";
}

ShapeKind shape_kind_from_string(const std::string& name) {
  if (name == "ellipse") return ShapeKind::ellipse;
  if (name == "rectangle") return ShapeKind::rectangle;
  if (name == "blob") return ShapeKind::blob;
  throw ValidationError("unknown shape kind: " + name);
}

namespace {

void check_interval(const Interval& r, const char* what) {
  if (!(r.lo >= 0.0 && r.hi <= 1.0 && r.lo <= r.hi)) {
    throw ValidationError(std::string(what) + " must be an interval within [0, 1]");
  }
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// A shape is a predicate over voxel coordinates (z, y, x); 2-D uses z = 0.
struct ShapeInstance {
  ShapeKind kind;
  std::array<double, 3> center{};
  std::array<double, 3> radius{};
  double angle = 0.0;  // in-plane rotation
  std::vector<std::pair<std::array<double, 3>, double>> balls;  // blob components

  bool contains(double z, double y, double x) const {
    if (kind == ShapeKind::blob) {
      for (const auto& [c, r] : balls) {
        const double dz = z - c[0], dy = y - c[1], dx = x - c[2];
        if (dz * dz + dy * dy + dx * dx <= r * r) return true;
      }
      return false;
    }
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double dy0 = y - center[1], dx0 = x - center[2];
    const double u = (ca * dx0 + sa * dy0) / radius[2];
    const double v = (-sa * dx0 + ca * dy0) / radius[1];
    const double w = radius[0] > 0.0 ? (z - center[0]) / radius[0] : 0.0;
    if (kind == ShapeKind::ellipse) return u * u + v * v + w * w <= 1.0;
    return std::abs(u) <= 1.0 && std::abs(v) <= 1.0 && std::abs(w) <= 1.0;
  }
};

ShapeInstance random_shape(std::mt19937_64& rng, const SyntheticSpec& spec, const std::array<int, 3>& size,
                           bool volumetric) {
  ShapeInstance s;
  s.kind = spec.shapes[std::uniform_int_distribution<std::size_t>(0, spec.shapes.size() - 1)(rng)];
  for (int a = 0; a < 3; ++a) {
    if (a == 0 && !volumetric) continue;
    s.center[static_cast<std::size_t>(a)] = uniform(rng, 0.2, 0.8) * size[static_cast<std::size_t>(a)];
    s.radius[static_cast<std::size_t>(a)] = uniform(rng, 0.08, 0.22) * size[static_cast<std::size_t>(a)];
  }
  if (!volumetric) s.angle = uniform(rng, 0.0, std::numbers::pi);
  if (s.kind == ShapeKind::blob) {
    const int parts = std::uniform_int_distribution<int>(3, 5)(rng);
    const double base = std::min(s.radius[1], s.radius[2]);
    for (int i = 0; i < parts; ++i) {
      std::array<double, 3> c = s.center;
      for (int a = volumetric ? 0 : 1; a < 3; ++a) c[static_cast<std::size_t>(a)] += uniform(rng, -base, base);
      s.balls.emplace_back(c, base * uniform(rng, 0.45, 0.8));
    }
  }
  return s;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (image_size.size() != 2 && image_size.size() != 3) throw ValidationError("image_size needs 2 or 3 dims");
  for (int d : image_size) {
    if (d < 4) throw ValidationError("image dims must be at least 4");
  }
  if (num_images < 1) throw ValidationError("num_images must be positive");
  if (shapes.empty()) throw ValidationError("at least one shape kind is required");
  if (max_shapes < 1) throw ValidationError("max_shapes must be positive");
  check_interval(fg_intensity_range, "fg_intensity_range");
  check_interval(bg_intensity_range, "bg_intensity_range");
  if (!(noise_std >= 0.0)) throw ValidationError("noise_std must be non-negative");
}

nlohmann::json to_json(const SyntheticSpec& s) {
  nlohmann::json shapes = nlohmann::json::array();
  for (auto k : s.shapes) shapes.push_back(to_string(k));
  return {{"image_size", s.image_size},
          {"num_images", s.num_images},
          {"shapes", shapes},
          {"max_shapes", s.max_shapes},
          {"fg_intensity_range", {s.fg_intensity_range.lo, s.fg_intensity_range.hi}},
          {"bg_intensity_range", {s.bg_intensity_range.lo, s.bg_intensity_range.hi}},
          {"noise_std", s.noise_std},
          {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.image_size = j.at("image_size").get<std::vector<int>>();
  s.num_images = j.at("num_images").get<int>();
  s.shapes.clear();
  for (const auto& k : j.at("shapes")) s.shapes.push_back(shape_kind_from_string(k.get<std::string>()));
  s.max_shapes = j.at("max_shapes").get<int>();
  s.fg_intensity_range = {j.at("fg_intensity_range")[0].get<double>(), j.at("fg_intensity_range")[1].get<double>()};
  s.bg_intensity_range = {j.at("bg_intensity_range")[0].get<double>(), j.at("bg_intensity_range")[1].get<double>()};
  s.noise_std = j.at("noise_std").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

std::vector<Sample> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const bool volumetric = spec.image_size.size() == 3;
  const std::array<int, 3> size = volumetric
                                      ? std::array<int, 3>{spec.image_size[0], spec.image_size[1], spec.image_size[2]}
                                      : std::array<int, 3>{1, spec.image_size[0], spec.image_size[1]};
  std::vector<int> shape{1};
  shape.insert(shape.end(), spec.image_size.begin(), spec.image_size.end());
  const std::size_t voxels = static_cast<std::size_t>(size[0]) * size[1] * size[2];

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(spec.num_images));
  for (int n = 0; n < spec.num_images; ++n) {
    std::vector<int> owner(voxels, -1);
    std::vector<ShapeInstance> shapes;
    bool accepted = false;
    for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
      const int count = std::uniform_int_distribution<int>(1, spec.max_shapes)(rng);
      shapes.clear();
      for (int k = 0; k < count; ++k) shapes.push_back(random_shape(rng, spec, size, volumetric));
      std::fill(owner.begin(), owner.end(), -1);
      std::size_t fg = 0;
      std::size_t v = 0;
      for (int z = 0; z < size[0]; ++z)
        for (int y = 0; y < size[1]; ++y)
          for (int x = 0; x < size[2]; ++x, ++v) {
            for (int k = count - 1; k >= 0; --k) {
              if (shapes[static_cast<std::size_t>(k)].contains(z + 0.5, y + 0.5, x + 0.5)) {
                owner[v] = k;
                ++fg;
                break;
              }
            }
          }
      const double fraction = static_cast<double>(fg) / static_cast<double>(voxels);
      accepted = fraction >= kMinForegroundFraction && fraction <= kMaxForegroundFraction;
    }
    if (!accepted) {
      throw ValidationError("could not satisfy the foreground-fraction constraint for image " + std::to_string(n) +
                            " after 100 attempts");
    }
    const double bg = uniform(rng, spec.bg_intensity_range.lo, spec.bg_intensity_range.hi);
    std::vector<double> fg_levels;
    for (std::size_t k = 0; k < shapes.size(); ++k) {
      fg_levels.push_back(uniform(rng, spec.fg_intensity_range.lo, spec.fg_intensity_range.hi));
    }
    Sample s;
    s.id = n;
    s.image = Tensor(shape);
    s.mask = Tensor(shape);
    for (std::size_t i = 0; i < voxels; ++i) {
      const int k = owner[i];
      double value = k >= 0 ? fg_levels[static_cast<std::size_t>(k)] : bg;
      if (spec.noise_std > 0.0) value += spec.noise_std * noise(rng);
      s.image[i] = std::clamp(value, 0.0, 1.0);
      s.mask[i] = k >= 0 ? 1.0 : 0.0;
    }
    out.push_back(std::move(s));
  }
  return out;
}

DatasetSplit split(const std::vector<Sample>& samples, const SplitCounts& counts, std::uint64_t seed) {
  if (counts.labelled < 1) throw ValidationError("the labelled split must be non-empty");
  if (counts.unlabelled < 0 || counts.validation < 0 || counts.test < 0) {
    throw ValidationError("split counts must be non-negative");
  }
  if (static_cast<std::size_t>(counts.total()) > samples.size()) {
    throw ValidationError("insufficient data: requested " + std::to_string(counts.total()) + " images from " +
                          std::to_string(samples.size()));
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t pos = 0;
  auto take = [&](int n) {
    std::vector<Sample> part;
    for (int i = 0; i < n; ++i) part.push_back(samples[order[pos++]]);
    return std::make_shared<const InMemoryPool>(std::move(part));
  };
  DatasetSplit out;
  out.labelled = take(counts.labelled);
  out.unlabelled = take(counts.unlabelled);
  out.validation = take(counts.validation);
  out.test = take(counts.test);
  return out;
}

std::vector<std::vector<int>> split_ids(const DatasetSplit& s) {
  std::vector<std::vector<int>> out;
  for (const auto* pool : {s.labelled.get(), s.unlabelled.get(), s.validation.get(), s.test.get()}) {
    std::vector<int> ids;
    if (pool) {
      for (std::size_t i = 0; i < pool->size(); ++i) ids.push_back(pool->at(i).id);
    }
    out.push_back(std::move(ids));
  }
  return out;
}

ImageBatch stack_batch(const SamplePool& pool, const std::vector<std::size_t>& indices, bool with_masks) {
  std::vector<Tensor> images, masks;
  for (std::size_t i : indices) {
    const Sample& s = pool.at(i);
    images.push_back(s.image);
    if (with_masks) masks.push_back(s.mask);
  }
  ImageBatch b;
  b.images = Tensor::stack(images);
  if (with_masks) b.masks = Tensor::stack(masks);
  return b;
}

ImageBatch stack_all(const SamplePool& pool, bool with_masks) {
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  return stack_batch(pool, idx, with_masks);
}

CyclicSampler::CyclicSampler(std::size_t pool_size, std::uint64_t seed) : order_(pool_size), rng_(seed) {
  if (pool_size == 0) throw ValidationError("cannot sample from an empty pool");
  std::iota(order_.begin(), order_.end(), 0);
  reshuffle();
}

void CyclicSampler::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  position_ = 0;
}

std::size_t CyclicSampler::next() {
  if (position_ == order_.size()) reshuffle();
  return order_[position_++];
}

BatchIterator::BatchIterator(std::size_t labelled_size, std::size_t unlabelled_size, int labelled_bs, int ratio,
                             std::uint64_t seed)
    : labelled_bs_(labelled_bs), ratio_(ratio), labelled_(labelled_size, seed) {
  if (labelled_bs < 1) throw ValidationError("labelled batch size must be positive");
  if (ratio < 1) throw ValidationError("unlabelled/labelled ratio must be an integer >= 1");
  if (unlabelled_size > 0) {
    unlabelled_ = std::make_unique<CyclicSampler>(unlabelled_size, seed ^ 0x9e3779b97f4a7c15ULL);
  }
}

std::vector<std::size_t> BatchIterator::next_labelled() {
  std::vector<std::size_t> out;
  for (int i = 0; i < labelled_bs_; ++i) out.push_back(labelled_.next());
  return out;
}

std::vector<std::size_t> BatchIterator::next_unlabelled() {
  if (!unlabelled_) throw ValidationError("cannot draw from an empty unlabelled pool");
  std::vector<std::size_t> out;
  for (int i = 0; i < labelled_bs_ * ratio_; ++i) out.push_back(unlabelled_->next());
  return out;
}

Tensor ood_corrupt(const Tensor& image, double gamma, const OodOptions& options, std::uint64_t seed) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("mix-up gamma must lie in [0, 1]");
  if (gamma == 0.0) return image;
  const double lo = options.intensity_range.lo, hi = options.intensity_range.hi;
  std::mt19937_64 rng(seed);
  const double exponent = uniform(rng, options.contrast_range.lo, options.contrast_range.hi);
  std::normal_distribution<double> noise(0.0, options.noise_std > 0.0 ? options.noise_std : 1.0);
  Tensor out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double x = std::clamp(image[i], lo, hi);
    const double unit = hi > lo ? (x - lo) / (hi - lo) : 0.0;
    double corrupted = lo + (hi - lo) * std::pow(unit, exponent);
    if (options.noise_std > 0.0) corrupted += noise(rng);
    corrupted = std::clamp(corrupted, lo, hi);
    out[i] = std::clamp(gamma * corrupted + (1.0 - gamma) * image[i], lo, hi);
  }
  return out;
}

void normalize(std::vector<Tensor>& images, NormScope scope) {
  if (images.empty()) throw ValidationError("normalize needs at least one image");
  auto apply = [](std::vector<Tensor*> group) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const Tensor* t : group) {
      for (double v : t->values()) sum += v;
      n += t->size();
    }
    double mean = sum / static_cast<double>(n);
    double residual = 0.0;  // second pass removes the rounding error of the first
    for (const Tensor* t : group) {
      for (double v : t->values()) residual += v - mean;
    }
    mean += residual / static_cast<double>(n);
    double var = 0.0;
    for (const Tensor* t : group) {
      for (double v : t->values()) var += (v - mean) * (v - mean);
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(std::max(var, kVarianceFloor));
    for (Tensor* t : group) {
      for (double& v : t->values()) v = (v - mean) * inv;
    }
  };
  if (scope == NormScope::global) {
    std::vector<Tensor*> all;
    for (auto& t : images) all.push_back(&t);
    apply(all);
  } else {
    for (auto& t : images) apply({&t});
  }
}

std::vector<Sample> load_volume_dir(const fs::path& dir, const std::vector<int>& crop, std::uint64_t seed) {
  const fs::path image_dir = dir / "images", mask_dir = dir / "masks";
  if (!fs::is_directory(image_dir) || !fs::is_directory(mask_dir)) {
    throw FileError("volume directory must contain images/ and masks/: " + dir.string());
  }
  std::map<std::string, fs::path> images, masks;
  for (const auto& e : fs::directory_iterator(image_dir)) {
    if (e.path().extension() == ".arr") images[e.path().filename().string()] = e.path();
  }
  for (const auto& e : fs::directory_iterator(mask_dir)) {
    if (e.path().extension() == ".arr") masks[e.path().filename().string()] = e.path();
  }
  for (const auto& [name, _] : images) {
    if (!masks.count(name)) throw FileError("image without mask: " + name);
  }
  for (const auto& [name, _] : masks) {
    if (!images.count(name)) throw FileError("mask without image: " + name);
  }

  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  int id = 0;
  for (const auto& [name, path] : images) {
    const Tensor image = read_array(path);
    const Tensor mask = read_array(masks.at(name));
    const int spatial = image.rank() - 1;
    if (spatial != static_cast<int>(crop.size()) || mask.rank() != image.rank()) {
      throw ShapeError(name + ": crop " + shape_string(crop) + " does not fit array " + shape_string(image.shape()));
    }
    std::vector<int> offset(crop.size());
    for (std::size_t a = 0; a < crop.size(); ++a) {
      const int extent = image.dim(static_cast<int>(a) + 1);
      if (mask.dim(static_cast<int>(a) + 1) != extent) throw ShapeError(name + ": image and mask extents differ");
      if (crop[a] > extent) {
        throw ValidationError(name + ": crop " + shape_string(crop) + " larger than volume " + shape_string(image.shape()));
      }
      offset[a] = std::uniform_int_distribution<int>(0, extent - crop[a])(rng);
    }
    auto cut = [&](const Tensor& src) {
      std::vector<int> shape{src.dim(0)};
      shape.insert(shape.end(), crop.begin(), crop.end());
      Tensor dst(shape);
      // Pad to 3 spatial axes so one loop nest covers 2-D and 3-D.
      std::array<int, 3> sz{1, 1, 1}, cr{1, 1, 1}, off{0, 0, 0};
      const std::size_t shift = 3 - crop.size();
      for (std::size_t a = 0; a < crop.size(); ++a) {
        sz[a + shift] = src.dim(static_cast<int>(a) + 1);
        cr[a + shift] = crop[a];
        off[a + shift] = offset[a];
      }
      std::size_t o = 0;
      for (int c = 0; c < src.dim(0); ++c)
        for (int z = 0; z < cr[0]; ++z)
          for (int y = 0; y < cr[1]; ++y)
            for (int x = 0; x < cr[2]; ++x, ++o) {
              const std::size_t i =
                  ((static_cast<std::size_t>(c) * sz[0] + z + off[0]) * sz[1] + y + off[1]) * sz[2] + x + off[2];
              dst[o] = src[i];
            }
      return dst;
    };
    out.push_back({id++, cut(image), cut(mask)});
  }
  return out;
}

void save_dataset(const fs::path& dir, const std::vector<Sample>& samples, const DatasetSplit& split,
                  const nlohmann::json& synthetic_spec) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  auto file_name = [](int id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05d.arr", id);
    return std::string(buf);
  };
  for (const auto& s : samples) {
    write_array(dir / "images" / file_name(s.id), s.image);
    write_array(dir / "masks" / file_name(s.id), s.mask);
  }
  const auto ids = split_ids(split);
  nlohmann::json manifest = {
      {"format", "segpl-dataset"},
      {"version", 1},
      {"num_images", samples.size()},
      {"splits", {{"labelled", ids[0]}, {"unlabelled", ids[1]}, {"validation", ids[2]}, {"test", ids[3]}}}};
  if (!synthetic_spec.is_null()) manifest["synthetic_spec"] = synthetic_spec;
  std::ofstream os(dir / "manifest.json");
  if (!os) throw FileError("cannot write manifest in " + dir.string());
  os << manifest.dump(2) << '\n';
}

DatasetSplit load_dataset(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw FileError("missing dataset manifest: " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FileError("malformed dataset manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "segpl-dataset") throw FileError("not a segpl dataset: " + dir.string());
  auto load = [&](const char* key, bool masks) {
    std::vector<Sample> part;
    for (int id : manifest.at("splits").at(key).get<std::vector<int>>()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%05d.arr", id);
      Sample s;
      s.id = id;
      s.image = read_array(dir / "images" / buf);
      if (masks) s.mask = read_array(dir / "masks" / buf);
      part.push_back(std::move(s));
    }
    return std::make_shared<const InMemoryPool>(std::move(part));
  };
  DatasetSplit out;
  out.labelled = load("labelled", true);
  out.unlabelled = load("unlabelled", false);
  out.validation = load("validation", true);
  out.test = load("test", true);
  return out;
}

}  // namespace segpl
