#pragma once

// Deterministic cooperative grid battle with a variable number of allied
// agents and scripted enemies. Observations are split into an own portion and
// one portion per other entity so that a single set of token-based network
// parameters can serve every team size.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hissd/rng.hpp"

namespace hissd::env {

inline constexpr int kOwnFeatures = 4;     // hp, x, y, alive
inline constexpr int kEntityFeatures = 5;  // visible, dx, dy, hp, team
inline constexpr int kStateFeatures = 5;   // x, y, hp, alive, team
inline constexpr int kFixedActions = 5;    // no-op + four moves

enum class Team : std::uint8_t { ally = 0, enemy = 1 };

enum Action : int { kNoop = 0, kNorth = 1, kSouth = 2, kEast = 3, kWest = 4, kAttackBase = 5 };

struct TaskSpec {
  std::string name;
  int n_allies = 3;
  int n_enemies = 3;
  int grid_size = 13;
  int max_steps = 60;
  int unit_hp = 10;
  int attack_range = 2;
  int attack_damage = 2;
  int sight_range = 6;

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;

  int n_entities() const { return n_allies + n_enemies; }
  int n_actions() const { return kFixedActions + n_enemies; }
  int state_dim() const { return kStateFeatures * n_entities(); }

  bool operator==(const TaskSpec&) const = default;
};

/// Builds a task named "<allies>v<enemies>" with default combat constants.
TaskSpec make_task(int n_allies, int n_enemies);

struct Entity {
  int id = 0;
  Team team = Team::ally;
  int x = 0;
  int y = 0;
  int hp = 0;
  bool alive = false;

  bool operator==(const Entity&) const = default;
};

struct WorldState {
  int tick = 0;
  std::vector<Entity> entities;  // allies first, then enemies
  Rng rng;
  bool done = false;
  bool won = false;
  int coerced_actions = 0;

  bool operator==(const WorldState&) const = default;
};

/// One agent's decomposed observation.
struct Observation {
  std::array<double, kOwnFeatures> own{};
  /// Other allies (in id order, self skipped) followed by all enemies.
  std::vector<std::array<double, kEntityFeatures>> entities;

  bool operator==(const Observation&) const = default;
};

struct StepResult {
  std::vector<Observation> observations;
  std::vector<double> global_state;
  double reward = 0.0;
  bool done = false;
  bool won = false;
};

/// Immediate reward constants before normalisation; the scale factor maps
/// the best achievable episode to a return of exactly kMaxReturn.
inline constexpr double kKillBonus = 10.0;
inline constexpr double kWinBonus = 200.0;
inline constexpr double kMaxReturn = 20.0;

class GridBattle {
 public:
  explicit GridBattle(TaskSpec spec);

  const TaskSpec& spec() const { return spec_; }

  /// Places allies in the left third and enemies in the right third using a
  /// generator seeded from `seed`. Identical seeds give identical states.
  StepResult reset(std::uint64_t seed);

  /// Applies one joint action. Illegal actions are replaced by no-op and
  /// counted in WorldState::coerced_actions. Throws std::logic_error
  /// ("episode finished") on a finished episode.
  StepResult step(const std::vector<int>& actions);

  const WorldState& state() const { return state_; }
  /// Installs a hand-built state. Throws std::invalid_argument if the entity
  /// list does not match the spec or breaks alive <=> hp > 0 or the bounds.
  void set_state(WorldState state);

  /// Mask of length n_actions(); index 0 is always legal.
  std::vector<bool> available_actions(int agent_id) const;

  std::vector<Observation> observations() const;
  Observation observe(int agent_id) const;
  std::vector<double> global_state() const;

  double reward_scale() const { return reward_scale_; }

 private:
  bool occupied(int x, int y) const;
  bool in_bounds(int x, int y) const;
  StepResult snapshot(double reward) const;
  const Entity* focus_target(const Entity& enemy) const;
  std::vector<bool> enemy_intents() const;
  void enemy_moves(const std::vector<bool>& attacks);
  void enemy_attacks_resolve(const std::vector<bool>& attacks);

  TaskSpec spec_;
  WorldState state_;
  double reward_scale_;
};

/// Chebyshev distance between two entities.
int distance(const Entity& a, const Entity& b);

/// Cell offset of a move action.
std::array<int, 2> move_delta(int action);

}  // namespace hissd::env
