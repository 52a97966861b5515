#pragma once

#include <string>

#include "edgeforge/optim.hpp"

namespace edgeforge {

/// Binary checkpoint: magic "EFCK", u32 format version, u32 entry count,
/// then per entry: u32 name length, UTF-8 name, u8 dtype tag (0 = f64),
/// u32 ndim, u32 dims, row-major little-endian f64 payload.
/// Round-trips bit-exactly.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace edgeforge
