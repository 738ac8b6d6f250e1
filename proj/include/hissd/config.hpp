#pragma once

// Run configuration shared by the CLI commands. JSON with every field
// optional; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hissd/datagen.hpp"
#include "hissd/gridbattle.hpp"
#include "hissd/trainer.hpp"

namespace hissd::cli {

/// Malformed or unknown configuration keys.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  std::vector<env::TaskSpec> source_tasks{env::make_task(3, 3), env::make_task(5, 6)};
  std::vector<env::TaskSpec> eval_tasks{env::make_task(4, 4), env::make_task(6, 6), env::make_task(6, 7)};
  data::Quality quality = data::Quality::expert;
  int episodes_per_task = 500;
  /// One per source task; empty means <out_dir>/data/<task>.jsonl.
  std::vector<std::string> dataset_paths;
  double calibration_target = 0.5;
  double calibration_tolerance = 0.1;
  int calibration_episodes = 200;
  train::TrainConfig train;  // train.seed is derived from `seed`
  int eval_episodes = 32;
  int export_episodes = 4;

  void validate() const;
  std::filesystem::path dataset_path(std::size_t task) const;
  /// TrainConfig with its seed derived from the global seed.
  train::TrainConfig effective_train() const;
  bool operator==(const RunConfig&) const = default;
};

/// Throws ConfigError naming the key on unknown keys or wrong types.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);

RunConfig load_config(const std::filesystem::path& path);
/// Writes the fully resolved configuration.
void write_config(const RunConfig& c, const std::filesystem::path& path);

/// "KvE" shorthand or a full object.
env::TaskSpec task_from_json(const nlohmann::json& j, const std::string& where);
nlohmann::json to_json(const env::TaskSpec& t);

}  // namespace hissd::cli
