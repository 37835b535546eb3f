#include "segpl/checkpoint.hpp"

#include <array>
#include <fstream>

#include "segpl/error.hpp"

namespace segpl {

namespace {

constexpr std::array<char, 8> kMagic{'S', 'E', 'G', 'P', 'L', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FileError("truncated checkpoint");
  return v;
}

void put_array(std::ostream& os, const std::string& name, const Tensor& t) {
  put(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put(os, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) put(os, static_cast<std::int64_t>(d));
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

void put_set(std::ostream& os, const std::string& prefix, const ParameterSet& set) {
  for (const auto& e : set.entries()) put_array(os, prefix + e.name, e.value);
}

bool take_prefix(const std::string& name, const std::string& prefix, std::string& rest) {
  if (name.rfind(prefix, 0) != 0) return false;
  rest = name.substr(prefix.size());
  return true;
}

}  // namespace

nlohmann::json to_json(const BackboneConfig& c) {
  return {{"spatial_rank", c.spatial_rank},
          {"in_channels", c.in_channels},
          {"out_channels", c.out_channels},
          {"base_width", c.base_width},
          {"depth", c.depth}};
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.spatial_rank = j.at("spatial_rank").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.depth = j.at("depth").get<int>();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FileError("cannot write checkpoint: " + path.string());
  const nlohmann::json manifest = {{"format_version", kCheckpointVersion},
                                   {"config", to_json(ck.config)},
                                   {"step", ck.step},
                                   {"optimizer_step", ck.optimizer.step},
                                   {"has_head", ck.head.has_value()},
                                   {"extra", ck.extra}};
  const std::string text = manifest.dump();
  os.write(kMagic.data(), kMagic.size());
  put(os, kCheckpointVersion);
  put(os, static_cast<std::uint64_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const std::size_t count = ck.backbone.size() + (ck.head ? ck.head->size() : 0) +
                            ck.optimizer.first_moment.size() + ck.optimizer.second_moment.size();
  put(os, static_cast<std::uint64_t>(count));
  put_set(os, "backbone/", ck.backbone);
  if (ck.head) put_set(os, "head/", *ck.head);
  put_set(os, "adam.m/", ck.optimizer.first_moment);
  put_set(os, "adam.v/", ck.optimizer.second_moment);
  if (!os) throw FileError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FileError("checkpoint not found: " + path.string());
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw FileError("not a checkpoint file: " + path.string());
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw MismatchError("checkpoint format version " + std::to_string(version) + " does not match expected " +
                        std::to_string(kCheckpointVersion));
  }
  const auto manifest_len = get<std::uint64_t>(is);
  if (manifest_len > (1u << 26)) throw FileError("implausible checkpoint manifest length");
  std::string text(manifest_len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(manifest_len))) throw FileError("truncated checkpoint");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FileError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.at("format_version").get<std::uint32_t>() != kCheckpointVersion) {
    throw MismatchError("checkpoint manifest version does not match header");
  }

  Checkpoint ck;
  ck.config = backbone_config_from_json(manifest.at("config"));
  ck.step = manifest.at("step").get<std::int64_t>();
  ck.optimizer.step = manifest.at("optimizer_step").get<std::int64_t>();
  ck.extra = manifest.value("extra", nlohmann::json::object());
  if (manifest.value("has_head", false)) ck.head.emplace();

  const auto count = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw FileError("truncated checkpoint");
    const auto rank = get<std::uint32_t>(is);
    if (rank > 16) throw FileError("implausible array rank in checkpoint");
    std::vector<int> shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(get<std::int64_t>(is)));
    Tensor t(std::move(shape));
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw FileError("truncated checkpoint array: " + name);
    }
    std::string rest;
    if (take_prefix(name, "backbone/", rest)) {
      ck.backbone.add(rest, std::move(t));
    } else if (take_prefix(name, "head/", rest)) {
      if (!ck.head) throw FileError("head array in a checkpoint without head");
      ck.head->add(rest, std::move(t));
    } else if (take_prefix(name, "adam.m/", rest)) {
      ck.optimizer.first_moment.add(rest, std::move(t));
    } else if (take_prefix(name, "adam.v/", rest)) {
      ck.optimizer.second_moment.add(rest, std::move(t));
    } else {
      throw FileError("unknown checkpoint array: " + name);
    }
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const BackboneConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.config == expected)) {
    throw MismatchError("checkpoint config " + to_json(ck.config).dump() + " does not match expected " +
                        to_json(expected).dump());
  }
  return ck;
}

}  // namespace segpl
