#pragma once

#include <string>

#include "nk/tensor.hpp"

namespace nk {

// Raw tensor dump: uint32 rank, uint32 extents..., float64 data. Little-endian.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

}  // namespace nk
