#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <json.hpp>

#include "segpl/adam.hpp"
#include "segpl/backbone.hpp"
#include "segpl/parameters.hpp"

namespace segpl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  BackboneConfig config;
  ParameterSet backbone;
  std::optional<ParameterSet> head;
  AdamState optimizer;
  std::int64_t step = 0;
  nlohmann::json extra = nlohmann::json::object();  // free-form run metadata
};

nlohmann::json to_json(const BackboneConfig& config);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

/// Layout: 8-byte magic "SEGPLCKP", uint32 format version, uint64 manifest
/// length, manifest JSON (format_version, config, step, optimizer_step, extra),
/// uint64 array count, then per array: uint32 name length, name bytes,
/// uint32 rank, rank x int64 dims, float64 values. Array names are prefixed
/// "backbone/", "head/", "adam.m/" or "adam.v/".
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Throws FileError when missing or malformed, MismatchError on a version tag mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// As above, additionally requiring the stored config to equal `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const BackboneConfig& expected);

}  // namespace segpl
