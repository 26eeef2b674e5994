#pragma once

#include <string>

#include "msgnn/network.hpp"

namespace msgnn {

// Binary model container: magic "MSGN", u32 format version, a config
// snapshot (length-prefixed text), then one record per named tensor
// (u32 name length, name bytes, u32 rank, u32 dims, little-endian f32
// payload). Loading rebuilds the model from the snapshot and validates every
// record's name and shape, rejecting mismatches with the offending name.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace msgnn
