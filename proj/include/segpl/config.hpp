#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "segpl/trainer.hpp"

namespace segpl {

using KeyValues = std::map<std::string, std::string>;

/// Flat `key = value` text. '#' starts a comment; blank lines are skipped.
/// Throws ValidationError on malformed lines or repeated keys.
KeyValues parse_key_values(const std::string& text, const std::string& origin = "<text>");
KeyValues read_key_values(const std::filesystem::path& path);

/// Applies recognised keys on top of `base`; unknown keys are an error.
/// A `preset` key, if present, replaces `base` before the other keys apply.
TrainConfig train_config_from(const KeyValues& values, TrainConfig base = TrainConfig{});

/// Every TrainConfig field as text, parseable by train_config_from.
KeyValues to_key_values(const TrainConfig& config);
std::string format_key_values(const KeyValues& values);

}  // namespace segpl
