#pragma once

// Offline multi-task training loop and the behaviour-cloning baseline.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hissd/datagen.hpp"
#include "hissd/losses.hpp"
#include "hissd/networks.hpp"

namespace hissd::train {

enum class Mode { hissd, bc, hissd_no_planner, hissd_explicit };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct TrainConfig {
  long steps = 30000;
  int batch = 32;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double target_rate = 0.005;
  double momentum_rate = 0.01;
  int negatives_per_task = 2;  // per other task, drawn fresh every step
  int log_every = 500;
  std::uint64_t seed = 0;
  Mode mode = Mode::hissd;
  loss::LossConfig loss;
  nn::NetConfig net;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& cfg);

/// Window means over the last `log_every` steps. Entries of objectives a mode
/// does not train are 0.
struct MetricsRecord {
  long step = 0;
  double value_loss = 0.0;
  double planner_loss = 0.0;
  double controller_loss = 0.0;
  double contrastive = 0.0;
  double mean_weight = 0.0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::unique_ptr<nn::Model> model;
  std::vector<MetricsRecord> metrics;
  std::vector<long> task_draws;
};

struct TrainOutputs {
  std::optional<std::filesystem::path> metrics_path;     // line-delimited records
  std::optional<std::filesystem::path> checkpoint_path;  // written after the last step
  nlohmann::json config_echo;                            // stored in the checkpoint
  std::function<void(const MetricsRecord&)> on_record;
};

/// Runs the configured mode over one dataset per source task. Throws
/// std::invalid_argument("contrastive negatives unavailable") when a
/// contrastive mode gets a single task.
TrainResult train(const std::vector<data::Dataset>& datasets, const TrainConfig& cfg,
                  const TrainOutputs& outputs = {});

}  // namespace hissd::train
