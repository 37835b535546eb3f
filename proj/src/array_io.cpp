#include "segpl/array_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "segpl/error.hpp"

namespace segpl {

static_assert(std::endian::native == std::endian::little, "array files are written in host order");

namespace {
constexpr std::array<char, 8> kMagic{'S', 'E', 'G', 'P', 'L', 'A', 'R', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FileError("truncated array file: " + path.string());
  return v;
}
}  // namespace

void write_array(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FileError("cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put(os, kVersion);
  put(os, static_cast<std::uint32_t>(tensor.rank()));
  for (int d : tensor.shape()) put(os, static_cast<std::int64_t>(d));
  os.write(reinterpret_cast<const char*>(tensor.data()), static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  if (!os) throw FileError("failed writing " + path.string());
}

Tensor read_array(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileError("missing array file: " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw FileError("not an array file: " + path.string());
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kVersion) {
    throw MismatchError("array file version " + std::to_string(version) + " unsupported: " + path.string());
  }
  const auto rank = get<std::uint32_t>(is, path);
  if (rank > 16) throw FileError("implausible array rank in " + path.string());
  std::vector<int> shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(get<std::int64_t>(is, path)));
  Tensor t(std::move(shape));
  if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
    throw FileError("truncated array payload: " + path.string());
  }
  return t;
}

}  // namespace segpl
