#pragma once

#include <filesystem>

#include "segpl/tensor.hpp"

namespace segpl {

/// `.arr` container: 8-byte magic "SEGPLARR", uint32 version (1), uint32 rank,
/// rank x int64 dims, then the values as contiguous little-endian float64 in
/// row-major order.
void write_array(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_array(const std::filesystem::path& path);

}  // namespace segpl
