#pragma once

#include <string>

#include "pdeformer/params.hpp"

namespace pdeformer {

// Binary parameter container. Layout, all integers little-endian:
//   magic "PDEF" | u32 version (1) | u32 tensor count
//   per tensor: u32 name length | name bytes (UTF-8) | u32 rank |
//               rank x u64 extents | u32 dtype tag (1 = 32-bit float LE) |
//               raw element data
// Values are stored in 32 bits; loading back gives float precision, not the
// doubles that were saved.
void save_checkpoint(const ParamMap& params, const std::string& path);

// Validates magic, version, and every declared length against the file size
// before allocating; failures carry the byte offset.
ParamMap load_checkpoint(const std::string& path);

}  // namespace pdeformer
