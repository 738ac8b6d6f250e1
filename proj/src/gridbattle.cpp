#include "hissd/gridbattle.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>

namespace hissd::env {

void TaskSpec::validate() const {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("task '" + name + "': " + what);
  };
  if (n_allies < 1) fail("n_allies must be >= 1");
  if (n_enemies < 1) fail("n_enemies must be >= 1");
  if (grid_size < 1) fail("grid_size must be >= 1");
  if (max_steps < 1) fail("max_steps must be >= 1");
  if (unit_hp < 1) fail("unit_hp must be >= 1");
  if (attack_damage < 1) fail("attack_damage must be >= 1");
  if (attack_range < 0) fail("attack_range must be >= 0");
  if (sight_range < 1) fail("sight_range must be >= 1");
  if (attack_range > sight_range) fail("attack_range must not exceed sight_range");
  if (sight_range > grid_size) fail("sight_range must not exceed grid_size");
  const int third = std::max(1, grid_size / 3);
  if (n_allies > third * grid_size || n_enemies > third * grid_size) {
    fail("grid too small for the requested unit counts");
  }
}

TaskSpec make_task(int n_allies, int n_enemies) {
  TaskSpec spec;
  spec.name = std::to_string(n_allies) + "v" + std::to_string(n_enemies);
  spec.n_allies = n_allies;
  spec.n_enemies = n_enemies;
  return spec;
}

int distance(const Entity& a, const Entity& b) {
  return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

std::array<int, 2> move_delta(int action) {
  switch (action) {
    case kNorth: return {0, 1};
    case kSouth: return {0, -1};
    case kEast: return {1, 0};
    case kWest: return {-1, 0};
    default: return {0, 0};
  }
}

GridBattle::GridBattle(TaskSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const double raw_max = static_cast<double>(spec_.n_enemies) * spec_.unit_hp +
                         kKillBonus * spec_.n_enemies + kWinBonus;
  reward_scale_ = kMaxReturn / raw_max;
  state_.done = true;
}

bool GridBattle::in_bounds(int x, int y) const {
  return x >= 0 && y >= 0 && x < spec_.grid_size && y < spec_.grid_size;
}

bool GridBattle::occupied(int x, int y) const {
  for (const auto& e : state_.entities) {
    if (e.alive && e.x == x && e.y == y) return true;
  }
  return false;
}

StepResult GridBattle::reset(std::uint64_t seed) {
  state_ = WorldState{};
  state_.rng.seed(seed);
  const int g = spec_.grid_size;
  const int third = std::max(1, g / 3);

  auto place = [&](int col_begin, int n, Team team, int rows) {
    const int y0 = rows >= g ? 0 : static_cast<int>(uniform_index(state_.rng, g - rows + 1));
    std::vector<std::array<int, 2>> cells;
    for (int x = col_begin; x < col_begin + third; ++x) {
      for (int y = y0; y < y0 + std::min(rows, g); ++y) cells.push_back({x, y});
    }
    // Partial Fisher-Yates: the first n cells become the spawn points.
    for (int i = 0; i < n; ++i) {
      const std::size_t j = i + uniform_index(state_.rng, cells.size() - i);
      std::swap(cells[i], cells[j]);
      Entity e;
      e.id = static_cast<int>(state_.entities.size());
      e.team = team;
      e.x = cells[i][0];
      e.y = cells[i][1];
      e.hp = spec_.unit_hp;
      e.alive = true;
      state_.entities.push_back(e);
    }
  };
  // Allies start in formation: a band one row taller than the minimum needed
  // to fit them, at a seed-derived height. Enemies scatter over the whole
  // right third.
  place(0, spec_.n_allies, Team::ally, (spec_.n_allies + third - 1) / third + 1);
  place(g - third, spec_.n_enemies, Team::enemy, g);
  return snapshot(0.0);
}

void GridBattle::set_state(WorldState state) {
  if (static_cast<int>(state.entities.size()) != spec_.n_entities()) {
    throw std::invalid_argument("state has " + std::to_string(state.entities.size()) +
                                " entities, task needs " + std::to_string(spec_.n_entities()));
  }
  for (int i = 0; i < spec_.n_entities(); ++i) {
    const Entity& e = state.entities[i];
    const Team team = i < spec_.n_allies ? Team::ally : Team::enemy;
    if (e.id != i || e.team != team) throw std::invalid_argument("entity order must be allies then enemies");
    if (e.alive != (e.hp > 0) || e.hp < 0 || e.hp > spec_.unit_hp) {
      throw std::invalid_argument("entity " + std::to_string(i) + ": alive must match hp > 0");
    }
    if (!in_bounds(e.x, e.y)) throw std::invalid_argument("entity " + std::to_string(i) + " out of bounds");
  }
  if (state.tick < 0 || state.tick > spec_.max_steps) throw std::invalid_argument("tick out of range");
  state_ = std::move(state);
}

std::vector<bool> GridBattle::available_actions(int agent_id) const {
  if (agent_id < 0 || agent_id >= spec_.n_allies) {
    throw std::out_of_range("agent_id " + std::to_string(agent_id) + " out of range");
  }
  std::vector<bool> mask(spec_.n_actions(), false);
  mask[kNoop] = true;
  const Entity& self = state_.entities[agent_id];
  if (!self.alive || state_.done) return mask;
  for (int a = kNorth; a <= kWest; ++a) {
    const auto d = move_delta(a);
    const int nx = self.x + d[0];
    const int ny = self.y + d[1];
    mask[a] = in_bounds(nx, ny) && !occupied(nx, ny);
  }
  for (int j = 0; j < spec_.n_enemies; ++j) {
    const Entity& enemy = state_.entities[spec_.n_allies + j];
    mask[kAttackBase + j] = enemy.alive && distance(self, enemy) <= spec_.attack_range;
  }
  return mask;
}

Observation GridBattle::observe(int agent_id) const {
  const double g = spec_.grid_size;
  const Entity& self = state_.entities.at(agent_id);
  Observation obs;
  obs.own = {static_cast<double>(self.hp) / spec_.unit_hp, self.x / g, self.y / g,
             self.alive ? 1.0 : 0.0};
  obs.entities.reserve(spec_.n_entities() - 1);
  for (const auto& e : state_.entities) {
    if (e.id == self.id) continue;
    std::array<double, kEntityFeatures> portion{};
    portion[4] = e.team == Team::enemy ? 1.0 : 0.0;
    if (self.alive && e.alive && distance(self, e) <= spec_.sight_range) {
      portion[0] = 1.0;
      portion[1] = (e.x - self.x) / g;
      portion[2] = (e.y - self.y) / g;
      portion[3] = static_cast<double>(e.hp) / spec_.unit_hp;
    }
    obs.entities.push_back(portion);
  }
  return obs;
}

std::vector<Observation> GridBattle::observations() const {
  std::vector<Observation> out;
  out.reserve(spec_.n_allies);
  for (int i = 0; i < spec_.n_allies; ++i) out.push_back(observe(i));
  return out;
}

std::vector<double> GridBattle::global_state() const {
  const double g = spec_.grid_size;
  std::vector<double> s;
  s.reserve(spec_.state_dim());
  for (const auto& e : state_.entities) {
    s.push_back(e.x / g);
    s.push_back(e.y / g);
    s.push_back(static_cast<double>(e.hp) / spec_.unit_hp);
    s.push_back(e.alive ? 1.0 : 0.0);
    s.push_back(e.team == Team::enemy ? 1.0 : 0.0);
  }
  return s;
}

StepResult GridBattle::snapshot(double reward) const {
  StepResult r;
  r.observations = observations();
  r.global_state = global_state();
  r.reward = reward;
  r.done = state_.done;
  r.won = state_.won;
  return r;
}

StepResult GridBattle::step(const std::vector<int>& actions) {
  if (state_.done) throw std::logic_error("episode finished");
  if (static_cast<int>(actions.size()) != spec_.n_allies) {
    throw std::invalid_argument("expected " + std::to_string(spec_.n_allies) + " actions, got " +
                                std::to_string(actions.size()));
  }

  std::vector<int> legal(actions.size(), kNoop);
  for (int i = 0; i < spec_.n_allies; ++i) {
    const auto mask = available_actions(i);
    const int a = actions[i];
    if (a >= 0 && a < spec_.n_actions() && mask[a]) {
      legal[i] = a;
    } else if (a != kNoop) {
      ++state_.coerced_actions;
    }
  }

  // Every unit commits to its action on the start-of-step state. Moves
  // resolve first (allies, then enemies, each in index order), then attacks
  // (allies first). Units destroyed earlier in the attack phase do not fire.
  const std::vector<bool> enemy_attacks = enemy_intents();

  for (int i = 0; i < spec_.n_allies; ++i) {
    if (legal[i] < kNorth || legal[i] > kWest) continue;
    Entity& self = state_.entities[i];
    const auto d = move_delta(legal[i]);
    if (in_bounds(self.x + d[0], self.y + d[1]) && !occupied(self.x + d[0], self.y + d[1])) {
      self.x += d[0];
      self.y += d[1];
    }
  }
  enemy_moves(enemy_attacks);

  double raw = 0.0;
  for (int i = 0; i < spec_.n_allies; ++i) {
    if (legal[i] < kAttackBase) continue;
    Entity& target = state_.entities[spec_.n_allies + legal[i] - kAttackBase];
    if (!target.alive) continue;  // already destroyed earlier in this phase
    const int dealt = std::min(spec_.attack_damage, target.hp);
    target.hp -= dealt;
    raw += dealt;
    if (target.hp == 0) {
      target.alive = false;
      raw += kKillBonus;
    }
  }

  const bool enemies_dead = std::none_of(state_.entities.begin() + spec_.n_allies,
                                         state_.entities.end(), [](const Entity& e) { return e.alive; });
  if (!enemies_dead) enemy_attacks_resolve(enemy_attacks);
  const bool allies_dead = std::none_of(state_.entities.begin(),
                                        state_.entities.begin() + spec_.n_allies,
                                        [](const Entity& e) { return e.alive; });

  ++state_.tick;
  state_.won = enemies_dead;
  if (enemies_dead) raw += kWinBonus;
  state_.done = enemies_dead || allies_dead || state_.tick >= spec_.max_steps;
  return snapshot(raw * reward_scale_);
}

const Entity* GridBattle::focus_target(const Entity& enemy) const {
  const Entity* target = nullptr;
  for (int i = 0; i < spec_.n_allies; ++i) {
    const Entity& ally = state_.entities[i];
    if (!ally.alive || distance(enemy, ally) > spec_.attack_range) continue;
    if (target == nullptr || ally.hp < target->hp) target = &ally;
  }
  return target;
}

std::vector<bool> GridBattle::enemy_intents() const {
  std::vector<bool> attacks(spec_.n_enemies, false);
  for (int j = 0; j < spec_.n_enemies; ++j) {
    const Entity& enemy = state_.entities[spec_.n_allies + j];
    attacks[j] = enemy.alive && focus_target(enemy) != nullptr;
  }
  return attacks;
}

void GridBattle::enemy_moves(const std::vector<bool>& attacks) {
  const int k = spec_.n_allies;
  for (int j = 0; j < spec_.n_enemies; ++j) {
    Entity& enemy = state_.entities[k + j];
    if (!enemy.alive || attacks[j]) continue;
    const Entity* nearest = nullptr;
    for (int i = 0; i < k; ++i) {
      const Entity& ally = state_.entities[i];
      if (!ally.alive) continue;
      if (nearest == nullptr || distance(enemy, ally) < distance(enemy, *nearest)) nearest = &ally;
    }
    if (nearest == nullptr) return;
    // Enemies hold position until an ally enters their sight range.
    if (distance(enemy, *nearest) > spec_.sight_range) continue;
    const int dx = nearest->x - enemy.x;
    const int dy = nearest->y - enemy.y;
    const std::array<int, 2> step_x{dx > 0 ? 1 : -1, 0};
    const std::array<int, 2> step_y{0, dy > 0 ? 1 : -1};
    std::vector<std::array<int, 2>> tries;
    if (std::abs(dx) >= std::abs(dy)) {
      if (dx != 0) tries.push_back(step_x);
      if (dy != 0) tries.push_back(step_y);
    } else {
      tries.push_back(step_y);
      if (dx != 0) tries.push_back(step_x);
    }
    for (const auto& d : tries) {
      if (in_bounds(enemy.x + d[0], enemy.y + d[1]) && !occupied(enemy.x + d[0], enemy.y + d[1])) {
        enemy.x += d[0];
        enemy.y += d[1];
        break;
      }
    }
  }
}

void GridBattle::enemy_attacks_resolve(const std::vector<bool>& attacks) {
  for (int j = 0; j < spec_.n_enemies; ++j) {
    const Entity& enemy = state_.entities[spec_.n_allies + j];
    if (!enemy.alive || !attacks[j]) continue;
    const Entity* target = focus_target(enemy);
    if (target == nullptr) continue;
    Entity& hit = state_.entities[target->id];
    hit.hp -= std::min(spec_.attack_damage, hit.hp);
    if (hit.hp == 0) hit.alive = false;
  }
}

}  // namespace hissd::env
