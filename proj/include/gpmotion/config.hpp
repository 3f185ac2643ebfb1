#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpmotion/model.hpp"
#include "gpmotion/synthdata.hpp"
#include "gpmotion/train.hpp"

// Run configuration. A JSON document with the sections
//
//   data    grid, frame count, ring geometry, sampling ranges, noise, count
//   model   latent sizes, channels, dilations, dropout rates, sigma_l, v_max,
//           squaring rule, smoothing sigmas
//   kernel  kind, length_scale, sigma_k, jitter
//   train   epochs, Adam settings, augmentation ranges
//   eval    rotations
//   seed
//
// Unknown keys raise ConfigError; absent keys keep their defaults. The image
// grid is owned by the data section and copied into the model.

namespace gpmotion {

struct EvalSettings {
  std::vector<int> rotations{0};  // degrees, multiples of 90
};

struct RunConfig {
  DatasetSpec data;
  ModelConfig model;
  TrainSettings train;
  EvalSettings eval;
  std::uint64_t seed = 1;

  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const nlohmann::json& doc);

/// Self-contained model description stored in checkpoints (includes the grid
/// and the kernel).
nlohmann::json model_to_json(const ModelConfig& config);
ModelConfig model_from_json(const nlohmann::json& doc);

}  // namespace gpmotion
