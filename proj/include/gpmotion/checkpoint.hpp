#pragma once

#include <filesystem>

#include "gpmotion/model.hpp"

// Checkpoint layout, all little-endian:
//   "GPMM"                     4 bytes
//   version                    u16 (= 1)
//   config length              u32, then that many bytes of JSON (model_to_json)
//   repeated until end of file:
//     name length u16, name bytes, rank u8, extents u32 x rank,
//     values f64 x prod(extents)
// Only parameter values are stored; optimizer moments are not.

namespace gpmotion {

void save_checkpoint(const std::filesystem::path& path, const MotionModel& model);
MotionModel load_checkpoint(const std::filesystem::path& path);

}  // namespace gpmotion
