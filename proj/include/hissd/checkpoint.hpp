#pragma once

// Checkpoint file: a magic line, a one-line JSON manifest (tensor names and
// shapes, network config, training step, free-form config echo) and the raw
// little-endian doubles of every tensor in manifest order.

#include <filesystem>
#include <memory>

#include <nlohmann/json.hpp>

#include "hissd/networks.hpp"

namespace hissd::train {

struct LoadedCheckpoint {
  std::unique_ptr<nn::Model> model;
  long step = 0;
  nlohmann::json config;
};

void save_checkpoint(const nn::Model& model, long step, const nlohmann::json& config,
                     const std::filesystem::path& path);

/// Throws std::runtime_error naming the offending manifest field or tensor.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hissd::train
