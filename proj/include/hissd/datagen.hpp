#pragma once

// Scripted behaviour policies, dataset-quality calibration and the offline
// episode file format.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hissd/gridbattle.hpp"

namespace hissd::data {

enum class Quality { expert, medium, medium_expert, medium_replay };

std::string to_string(Quality q);
/// Throws std::invalid_argument for unknown labels.
Quality quality_from_string(const std::string& s);

/// Heuristic behaviour policy: attack the lowest-hp enemy in range (ties by
/// index), otherwise step toward the nearest enemy along the axis with the
/// larger gap. Dead agents return no-op.
int expert_action(const env::GridBattle& env, int agent_id);

/// A joint policy maps the current environment to one action per ally.
using Policy = std::function<std::vector<int>(const env::GridBattle&)>;

Policy expert_policy();

/// Epsilon-greedy perturbation of the expert: with probability epsilon an
/// agent picks uniformly among its available actions. Throws
/// std::invalid_argument if epsilon is outside [0, 1].
Policy noisy_policy(double epsilon, std::uint64_t seed);

struct StepRecord {
  std::vector<double> global_state;
  std::vector<env::Observation> observations;
  std::vector<int> actions;
  std::vector<std::vector<std::uint8_t>> masks;
  double reward = 0.0;
  bool done = false;
};

struct Episode {
  std::uint64_t seed = 0;  // environment reset seed
  std::vector<StepRecord> steps;
  // Frame reached after the last step; supplies s_{t+1} and o_{t+1} there.
  std::vector<double> final_state;
  std::vector<env::Observation> final_observations;
  bool won = false;
  double ret = 0.0;
};

/// Plays one episode. When `record` is non-null the trajectory is stored.
Episode run_episode(const env::TaskSpec& spec, std::uint64_t seed, const Policy& policy,
                    bool record = true);

struct RateEstimate {
  double win_rate = 0.0;
  double mean_return = 0.0;
  int episodes = 0;
};

/// Runs `episodes` episodes with env seeds base_seed + i; `make_policy(i)`
/// builds the behaviour policy of episode i.
RateEstimate measure(const env::TaskSpec& spec, int episodes, std::uint64_t base_seed,
                     const std::function<Policy(int)>& make_policy);

struct Calibration {
  double epsilon = 0.0;
  double win_rate = 0.0;
  double expert_win_rate = 0.0;
};

/// Bisects the exploration rate until the noisy expert's win rate lies in
/// [(target - tol) * expert, (target + tol) * expert]. Throws
/// std::runtime_error("uncalibratable") when the expert never wins, and a
/// runtime_error reporting the closest rate when 20 halvings do not reach
/// the band.
Calibration calibrate_medium(const env::TaskSpec& spec, std::uint64_t seed,
                             double target_ratio = 0.5, double tolerance = 0.1,
                             int episodes = 200);

struct DatasetMeta {
  env::TaskSpec task;
  Quality quality = Quality::expert;
  std::uint64_t seed = 0;
  int n_episodes = 0;
  double epsilon = 0.0;  // calibrated medium rate where relevant
  double mean_return = 0.0;
  double win_rate = 0.0;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Episode> episodes;
};

/// Generates a dataset of the requested quality. `medium_epsilon` must be
/// provided for every quality other than expert.
Dataset generate(const env::TaskSpec& spec, Quality quality, int n_episodes, std::uint64_t seed,
                 std::optional<double> medium_epsilon = std::nullopt);

/// Line 1 is the meta record; every following line holds one episode.
void save(const Dataset& dataset, const std::filesystem::path& path);
/// Throws std::runtime_error naming the offending line on malformed input.
Dataset load(const std::filesystem::path& path);

}  // namespace hissd::data
