#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "segpl/tensor.hpp"

namespace segpl {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

enum class ShapeKind { ellipse, rectangle, blob };

std::string to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(const std::string& name);

inline constexpr double kMinForegroundFraction = 0.02;
inline constexpr double kMaxForegroundFraction = 0.6;

struct SyntheticSpec {
  std::vector<int> image_size{64, 64};  // 2 or 3 spatial dims
  int num_images = 108;
  std::vector<ShapeKind> shapes{ShapeKind::ellipse, ShapeKind::rectangle, ShapeKind::blob};
  int max_shapes = 3;
  Interval fg_intensity_range{0.45, 0.85};
  Interval bg_intensity_range{0.15, 0.55};
  double noise_std = 0.12;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

/// One image with its mask; image is [channels, spatial...], mask [classes, spatial...].
struct Sample {
  int id = 0;
  Tensor image;
  Tensor mask;
};

/// Renders 1..max_shapes random shapes per image. Deterministic in `spec.seed`.
/// Masks are exact; intensities get additive Gaussian noise and are clipped to [0, 1].
std::vector<Sample> generate_synthetic(const SyntheticSpec& spec);

/// Read-only indexed access to samples. Virtual so that tests can observe access.
class SamplePool {
 public:
  virtual ~SamplePool() = default;
  virtual std::size_t size() const = 0;
  virtual const Sample& at(std::size_t index) const = 0;
};

class InMemoryPool : public SamplePool {
 public:
  InMemoryPool() = default;
  explicit InMemoryPool(std::vector<Sample> samples) : samples_(std::move(samples)) {}
  std::size_t size() const override { return samples_.size(); }
  const Sample& at(std::size_t index) const override { return samples_.at(index); }
  const std::vector<Sample>& samples() const { return samples_; }

 private:
  std::vector<Sample> samples_;
};

struct DatasetSplit {
  std::shared_ptr<const SamplePool> labelled;
  std::shared_ptr<const SamplePool> unlabelled;  // masks present on disk are never read by training
  std::shared_ptr<const SamplePool> validation;
  std::shared_ptr<const SamplePool> test;
};

struct SplitCounts {
  int labelled = 4;
  int unlabelled = 64;
  int validation = 8;
  int test = 32;

  int total() const { return labelled + unlabelled + validation + test; }
};

/// Seeded permutation of the samples cut into disjoint splits.
DatasetSplit split(const std::vector<Sample>& samples, const SplitCounts& counts, std::uint64_t seed);

/// Sample ids of every split in order: labelled, unlabelled, validation, test.
std::vector<std::vector<int>> split_ids(const DatasetSplit& split);

struct ImageBatch {
  Tensor images;  // [B, channels, spatial...]
  Tensor masks;   // [B, classes, spatial...]; empty when masks were not requested
};

ImageBatch stack_batch(const SamplePool& pool, const std::vector<std::size_t>& indices, bool with_masks);
ImageBatch stack_all(const SamplePool& pool, bool with_masks);

/// Endless sampling without replacement; reshuffles after each pass.
class CyclicSampler {
 public:
  CyclicSampler(std::size_t pool_size, std::uint64_t seed);
  std::size_t next();
  std::size_t pool_size() const { return order_.size(); }

 private:
  void reshuffle();
  std::vector<std::size_t> order_;
  std::size_t position_ = 0;
  std::mt19937_64 rng_;
};

/// Per step: `labelled_bs` labelled indices and `labelled_bs * ratio`
/// unlabelled indices. The two pools cycle independently.
class BatchIterator {
 public:
  BatchIterator(std::size_t labelled_size, std::size_t unlabelled_size, int labelled_bs, int ratio,
                std::uint64_t seed);

  std::vector<std::size_t> next_labelled();
  std::vector<std::size_t> next_unlabelled();
  int labelled_batch_size() const { return labelled_bs_; }
  int unlabelled_batch_size() const { return labelled_bs_ * ratio_; }

 private:
  int labelled_bs_;
  int ratio_;
  CyclicSampler labelled_;
  std::unique_ptr<CyclicSampler> unlabelled_;  // null when the pool is empty
};

struct OodOptions {
  Interval contrast_range{0.5, 2.0};  // gamma-curve exponent range
  double noise_std = 0.1;
  Interval intensity_range{0.0, 1.0};
};

/// Mix-up of an image with its corrupted version: gamma * x' + (1 - gamma) * x,
/// where x' = clip(clip(x)^g + noise) with g drawn from the contrast range.
/// gamma = 0 returns the input unchanged.
Tensor ood_corrupt(const Tensor& image, double gamma, const OodOptions& options, std::uint64_t seed);

enum class NormScope { per_case, global };

inline constexpr double kVarianceFloor = 1e-8;

/// Zero mean, unit variance per image or over the whole list.
void normalize(std::vector<Tensor>& images, NormScope scope);

/// Paired `images/*.arr` and `masks/*.arr` (matched by file name), each
/// randomly cropped to `crop` spatial size. Arrays are [channels, spatial...].
std::vector<Sample> load_volume_dir(const std::filesystem::path& dir, const std::vector<int>& crop,
                                    std::uint64_t seed);

/// Dataset directory: images/NNNNN.arr, masks/NNNNN.arr, manifest.json with
/// split membership and, when present, the generating SyntheticSpec.
void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples, const DatasetSplit& split,
                  const nlohmann::json& synthetic_spec);
DatasetSplit load_dataset(const std::filesystem::path& dir);

}  // namespace segpl
