#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "hissd/datagen.hpp"
#include "hissd/gridbattle.hpp"

namespace hissd::env {
namespace {

// Builds a state with the given ally and enemy cells, all at full hp.
WorldState scenario(const TaskSpec& spec, const std::vector<std::array<int, 2>>& allies,
                    const std::vector<std::array<int, 2>>& enemies) {
  WorldState s;
  auto add = [&](const std::array<int, 2>& cell, Team team) {
    Entity e;
    e.id = static_cast<int>(s.entities.size());
    e.team = team;
    e.x = cell[0];
    e.y = cell[1];
    e.hp = spec.unit_hp;
    e.alive = true;
    s.entities.push_back(e);
  };
  for (const auto& c : allies) add(c, Team::ally);
  for (const auto& c : enemies) add(c, Team::enemy);
  return s;
}

void kill(WorldState& s, int id) {
  s.entities[id].hp = 0;
  s.entities[id].alive = false;
}

TEST(TaskSpec, RejectsBadSpecs) {
  TaskSpec t = make_task(3, 3);
  EXPECT_NO_THROW(t.validate());
  t.n_allies = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = make_task(3, 3);
  t.attack_range = t.sight_range + 1;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = make_task(3, 3);
  t.sight_range = t.grid_size + 1;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = make_task(3, 3);
  t.max_steps = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  EXPECT_THROW(GridBattle(make_task(0, 2)), std::invalid_argument);
}

TEST(TaskSpec, DerivedSizes) {
  const TaskSpec t = make_task(3, 3);
  EXPECT_EQ(t.name, "3v3");
  EXPECT_EQ(t.n_actions(), 8);
  EXPECT_EQ(t.state_dim(), 30);
  EXPECT_EQ(make_task(5, 6).n_actions(), 11);
}

TEST(GridBattle, ResetIsDeterministic) {
  GridBattle a(make_task(3, 3)), b(make_task(3, 3));
  const StepResult ra = a.reset(42);
  const StepResult rb = b.reset(42);
  EXPECT_EQ(a.state(), b.state());
  EXPECT_EQ(ra.observations, rb.observations);
  EXPECT_EQ(ra.global_state, rb.global_state);
  a.reset(42);
  EXPECT_EQ(a.state(), b.state());
  b.reset(43);
  EXPECT_NE(a.state().entities, b.state().entities);
}

TEST(GridBattle, ResetPlacesTeamsInTheirThirds) {
  const TaskSpec spec = make_task(3, 3);
  GridBattle env(spec);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    env.reset(seed);
    const auto& s = env.state();
    ASSERT_EQ(s.entities.size(), 6u);
    EXPECT_EQ(s.tick, 0);
    EXPECT_FALSE(s.done);
    const int third = spec.grid_size / 3;
    for (const auto& e : s.entities) {
      EXPECT_EQ(e.hp, spec.unit_hp);
      EXPECT_TRUE(e.alive);
      if (e.team == Team::ally) {
        EXPECT_LT(e.x, third);
      } else {
        EXPECT_GE(e.x, spec.grid_size - third);
      }
    }
    for (std::size_t i = 0; i < s.entities.size(); ++i) {
      for (std::size_t j = i + 1; j < s.entities.size(); ++j) {
        EXPECT_FALSE(s.entities[i].x == s.entities[j].x && s.entities[i].y == s.entities[j].y);
      }
    }
  }
}

TEST(GridBattle, ObservationPortionCount) {
  GridBattle env(make_task(5, 6));
  const StepResult r = env.reset(7);
  ASSERT_EQ(r.observations.size(), 5u);
  for (const auto& o : r.observations) EXPECT_EQ(o.entities.size(), 10u);
}

TEST(GridBattle, LayoutDependsOnlyOnCounts) {
  TaskSpec renamed = make_task(4, 5);
  renamed.name = "other";
  GridBattle a(make_task(4, 5)), b(renamed);
  const StepResult ra = a.reset(3);
  const StepResult rb = b.reset(3);
  EXPECT_EQ(ra.global_state, rb.global_state);
  EXPECT_EQ(ra.observations, rb.observations);
}

TEST(GridBattle, GlobalStateLayout) {
  const TaskSpec spec = make_task(3, 3);
  GridBattle env(spec);
  const StepResult r = env.reset(1);
  ASSERT_EQ(r.global_state.size(), 30u);
  for (int e = 0; e < 6; ++e) {
    EXPECT_DOUBLE_EQ(r.global_state[5 * e + 2], 1.0);
    EXPECT_DOUBLE_EQ(r.global_state[5 * e + 3], 1.0);
    EXPECT_DOUBLE_EQ(r.global_state[5 * e + 4], e < 3 ? 0.0 : 1.0);
  }
  WorldState s = scenario(spec, {{0, 0}, {0, 2}, {0, 4}}, {{12, 0}, {12, 2}, {12, 4}});
  kill(s, 4);
  env.set_state(s);
  const auto g = env.global_state();
  EXPECT_DOUBLE_EQ(g[20], 12.0 / 13.0);
  EXPECT_DOUBLE_EQ(g[21], 2.0 / 13.0);
  EXPECT_DOUBLE_EQ(g[22], 0.0);
  EXPECT_DOUBLE_EQ(g[23], 0.0);
  EXPECT_DOUBLE_EQ(g[24], 1.0);
}

TEST(GridBattle, OutOfSightEntitiesAreBlank) {
  const TaskSpec spec = make_task(2, 2);
  GridBattle env(spec);
  env.set_state(scenario(spec, {{0, 0}, {1, 0}}, {{12, 12}, {3, 0}}));
  const Observation o = env.observe(0);
  ASSERT_EQ(o.entities.size(), 3u);
  // portion 0 is the other ally, then enemy 0 (far) and enemy 1 (near)
  EXPECT_DOUBLE_EQ(o.entities[0][0], 1.0);
  EXPECT_DOUBLE_EQ(o.entities[0][1], 1.0 / 13.0);
  EXPECT_EQ(o.entities[1], (std::array<double, kEntityFeatures>{0, 0, 0, 0, 1}));
  EXPECT_DOUBLE_EQ(o.entities[2][0], 1.0);
  EXPECT_DOUBLE_EQ(o.entities[2][1], 3.0 / 13.0);
  EXPECT_DOUBLE_EQ(o.entities[2][3], 1.0);
  EXPECT_DOUBLE_EQ(o.own[3], 1.0);
}

TEST(GridBattle, NoopWithEnemiesOutOfRange) {
  const TaskSpec spec = make_task(3, 3);
  GridBattle env(spec);
  const WorldState start = scenario(spec, {{0, 0}, {0, 2}, {0, 4}}, {{12, 10}, {12, 11}, {12, 12}});
  env.set_state(start);
  const StepResult r = env.step({kNoop, kNoop, kNoop});
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(env.state().entities[i].x, start.entities[i].x);
    EXPECT_EQ(env.state().entities[i].y, start.entities[i].y);
  }
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_EQ(env.state().tick, 1);
}

TEST(GridBattle, MaskRules) {
  const TaskSpec spec = make_task(3, 3);
  GridBattle env(spec);
  WorldState s = scenario(spec, {{0, 0}, {1, 0}, {6, 6}}, {{12, 12}, {12, 10}, {8, 6}});
  kill(s, 1);
  env.set_state(s);

  const auto dead = env.available_actions(1);
  EXPECT_EQ(dead, std::vector<bool>({true, false, false, false, false, false, false, false}));

  const auto corner = env.available_actions(0);
  EXPECT_LE(std::count(corner.begin() + kNorth, corner.begin() + kAttackBase, true), 2);
  EXPECT_FALSE(corner[kSouth]);
  EXPECT_FALSE(corner[kWest]);
  for (int j = 0; j < 3; ++j) EXPECT_FALSE(corner[kAttackBase + j]);

  const auto mid = env.available_actions(2);
  EXPECT_FALSE(mid[kAttackBase + 0]);
  EXPECT_FALSE(mid[kAttackBase + 1]);
  EXPECT_TRUE(mid[kAttackBase + 2]);  // distance 2 == attack_range

  EXPECT_THROW(env.available_actions(3), std::out_of_range);
  EXPECT_THROW(env.available_actions(-1), std::out_of_range);
}

TEST(GridBattle, OccupiedCellsBlockMoves) {
  const TaskSpec spec = make_task(2, 1);
  GridBattle env(spec);
  env.set_state(scenario(spec, {{4, 4}, {5, 4}}, {{12, 12}}));
  EXPECT_FALSE(env.available_actions(0)[kEast]);
  EXPECT_FALSE(env.available_actions(1)[kWest]);
  EXPECT_TRUE(env.available_actions(0)[kNorth]);
}

TEST(GridBattle, MoveConflictsResolveByIndex) {
  const TaskSpec spec = make_task(2, 1);
  GridBattle env(spec);
  env.set_state(scenario(spec, {{4, 4}, {6, 4}}, {{12, 12}}));
  env.step({kEast, kWest});
  EXPECT_EQ(env.state().entities[0].x, 5);
  EXPECT_EQ(env.state().entities[1].x, 6);
}

TEST(GridBattle, IllegalActionsAreCoercedAndCounted) {
  const TaskSpec spec = make_task(2, 1);
  GridBattle env(spec);
  env.set_state(scenario(spec, {{0, 0}, {0, 2}}, {{12, 12}}));
  env.step({kWest, kAttackBase});
  EXPECT_EQ(env.state().coerced_actions, 2);
  EXPECT_EQ(env.state().entities[0].x, 0);
  env.step({99, kNoop});
  EXPECT_EQ(env.state().coerced_actions, 3);
  env.step({kNoop, kNoop});
  EXPECT_EQ(env.state().coerced_actions, 3);
  EXPECT_THROW(env.step({kNoop}), std::invalid_argument);
}

TEST(GridBattle, SteppingAFinishedEpisodeThrows) {
  TaskSpec spec = make_task(1, 1);
  spec.max_steps = 2;
  GridBattle env(spec);
  env.set_state(scenario(spec, {{0, 0}}, {{12, 12}}));
  env.step({kNoop});
  const StepResult r = env.step({kNoop});
  EXPECT_TRUE(r.done);
  EXPECT_FALSE(r.won);
  try {
    env.step({kNoop});
    FAIL() << "expected a throw";
  } catch (const std::logic_error& e) {
    EXPECT_STREQ(e.what(), "episode finished");
  }
}

TEST(GridBattle, FlawlessWinReturnsTwenty) {
  TaskSpec spec = make_task(1, 1);
  spec.unit_hp = 4;
  spec.attack_damage = 2;
  GridBattle env(spec);
  // Allies fire first; the enemy's one shot back does not kill.
  WorldState s = scenario(spec, {{0, 0}}, {{2, 0}});
  env.set_state(s);
  double ret = 0.0;
  StepResult r = env.step({kAttackBase});
  ret += r.reward;
  EXPECT_FALSE(r.done);
  r = env.step({kAttackBase});
  ret += r.reward;
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.won);
  EXPECT_NEAR(ret, kMaxReturn, 1e-9);
  // damage 4, one kill, one win
  EXPECT_NEAR(env.reward_scale(), 20.0 / (4.0 + kKillBonus + kWinBonus), 1e-15);
}

TEST(GridBattle, EnemyFocusesLowestHpAllyInRange) {
  const TaskSpec spec = make_task(2, 1);
  GridBattle env(spec);
  WorldState s = scenario(spec, {{5, 5}, {5, 7}}, {{6, 6}});
  s.entities[1].hp = 3;
  env.set_state(s);
  env.step({kNoop, kNoop});
  EXPECT_EQ(env.state().entities[0].hp, spec.unit_hp);
  EXPECT_EQ(env.state().entities[1].hp, 3 - spec.attack_damage);
}

// Independent rollout loop over the public API.
double expert_win_rate(const TaskSpec& spec, int episodes) {
  int wins = 0;
  for (int i = 0; i < episodes; ++i) {
    GridBattle env(spec);
    StepResult r = env.reset(static_cast<std::uint64_t>(i));
    while (!r.done) {
      std::vector<int> a(spec.n_allies);
      for (int k = 0; k < spec.n_allies; ++k) a[k] = data::expert_action(env, k);
      r = env.step(a);
    }
    wins += r.won ? 1 : 0;
  }
  return static_cast<double>(wins) / episodes;
}

TEST(GridBattle, ExpertWinsMostThreeVsThree) {
  const double rate = expert_win_rate(make_task(3, 3), 100);
  RecordProperty("expert_win_rate_3v3", std::to_string(rate));
  EXPECT_GE(rate, 0.9);
}

TEST(GridBattle, ConservationUnderRandomPlay) {
  for (const TaskSpec& spec : {make_task(3, 3), make_task(5, 6), make_task(6, 7)}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      GridBattle env(spec);
      StepResult r = env.reset(seed);
      const auto policy = data::noisy_policy(0.5, seed);
      int total_hp = 0;
      for (const auto& e : env.state().entities) total_hp += e.hp;
      double ret = 0.0;
      while (!r.done) {
        r = env.step(policy(env));
        EXPECT_GE(r.reward, 0.0);
        ret += r.reward;
        int hp = 0;
        for (const auto& e : env.state().entities) {
          hp += e.hp;
          EXPECT_EQ(e.alive, e.hp > 0);
          EXPECT_GE(e.x, 0);
          EXPECT_LT(e.x, spec.grid_size);
          EXPECT_GE(e.y, 0);
          EXPECT_LT(e.y, spec.grid_size);
        }
        EXPECT_LE(hp, total_hp);
        total_hp = hp;
        EXPECT_LE(env.state().tick, spec.max_steps);
      }
      EXPECT_LE(ret, kMaxReturn + 1e-9);
      EXPECT_EQ(env.state().coerced_actions, 0);
    }
  }
}

TEST(GridBattle, SetStateValidates) {
  const TaskSpec spec = make_task(2, 1);
  GridBattle env(spec);
  WorldState s = scenario(spec, {{0, 0}, {1, 1}}, {{12, 12}});
  WorldState bad = s;
  bad.entities.pop_back();
  EXPECT_THROW(env.set_state(bad), std::invalid_argument);
  bad = s;
  bad.entities[0].hp = 0;
  EXPECT_THROW(env.set_state(bad), std::invalid_argument);
  bad = s;
  bad.entities[2].x = 13;
  EXPECT_THROW(env.set_state(bad), std::invalid_argument);
  bad = s;
  std::swap(bad.entities[1], bad.entities[2]);
  EXPECT_THROW(env.set_state(bad), std::invalid_argument);
}

}  // namespace
}  // namespace hissd::env
