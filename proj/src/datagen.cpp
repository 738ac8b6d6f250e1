#include "hissd/datagen.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace hissd::data {

using nlohmann::json;

std::string to_string(Quality q) {
  switch (q) {
    case Quality::expert: return "expert";
    case Quality::medium: return "medium";
    case Quality::medium_expert: return "medium_expert";
    case Quality::medium_replay: return "medium_replay";
  }
  return "expert";
}

Quality quality_from_string(const std::string& s) {
  if (s == "expert") return Quality::expert;
  if (s == "medium") return Quality::medium;
  if (s == "medium_expert") return Quality::medium_expert;
  if (s == "medium_replay") return Quality::medium_replay;
  throw std::invalid_argument("unknown dataset quality '" + s + "'");
}

int expert_action(const env::GridBattle& battle, int agent_id) {
  const auto& spec = battle.spec();
  const auto& entities = battle.state().entities;
  const auto mask = battle.available_actions(agent_id);
  const env::Entity& self = entities.at(agent_id);
  if (!self.alive) return env::kNoop;

  int best = -1;
  for (int j = 0; j < spec.n_enemies; ++j) {
    if (!mask[env::kAttackBase + j]) continue;
    if (best < 0 || entities[spec.n_allies + j].hp < entities[spec.n_allies + best].hp) best = j;
  }
  if (best >= 0) return env::kAttackBase + best;

  const env::Entity* nearest = nullptr;
  for (int j = 0; j < spec.n_enemies; ++j) {
    const env::Entity& e = entities[spec.n_allies + j];
    if (!e.alive) continue;
    if (nearest == nullptr || env::distance(self, e) < env::distance(self, *nearest)) nearest = &e;
  }
  if (nearest == nullptr) return env::kNoop;
  const int dx = nearest->x - self.x;
  const int dy = nearest->y - self.y;
  const int move_x = dx > 0 ? env::kEast : env::kWest;
  const int move_y = dy > 0 ? env::kNorth : env::kSouth;
  std::vector<int> tries;
  if (std::abs(dx) >= std::abs(dy)) {
    if (dx != 0) tries.push_back(move_x);
    if (dy != 0) tries.push_back(move_y);
  } else {
    tries.push_back(move_y);
    if (dx != 0) tries.push_back(move_x);
  }
  for (int a : tries) {
    if (mask[a]) return a;
  }
  return env::kNoop;
}

Policy expert_policy() {
  return [](const env::GridBattle& battle) {
    std::vector<int> actions(battle.spec().n_allies);
    for (int i = 0; i < battle.spec().n_allies; ++i) actions[i] = expert_action(battle, i);
    return actions;
  };
}

Policy noisy_policy(double epsilon, std::uint64_t seed) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("epsilon must lie in [0, 1], got " + std::to_string(epsilon));
  }
  auto rng = std::make_shared<Rng>(seed);
  return [epsilon, rng](const env::GridBattle& battle) {
    std::vector<int> actions(battle.spec().n_allies);
    for (int i = 0; i < battle.spec().n_allies; ++i) {
      // The coin is flipped even at epsilon 0 so that the stream stays aligned.
      if (uniform01(*rng) < epsilon) {
        const auto mask = battle.available_actions(i);
        std::vector<int> legal;
        for (int a = 0; a < static_cast<int>(mask.size()); ++a) {
          if (mask[a]) legal.push_back(a);
        }
        actions[i] = legal[uniform_index(*rng, legal.size())];
      } else {
        actions[i] = expert_action(battle, i);
      }
    }
    return actions;
  };
}

Episode run_episode(const env::TaskSpec& spec, std::uint64_t seed, const Policy& policy,
                    bool record) {
  env::GridBattle battle(spec);
  auto frame = battle.reset(seed);
  Episode ep;
  ep.seed = seed;
  while (!frame.done) {
    auto actions = policy(battle);
    StepRecord rec;
    if (record) {
      rec.global_state = std::move(frame.global_state);
      rec.observations = std::move(frame.observations);
      rec.masks.reserve(spec.n_allies);
      for (int i = 0; i < spec.n_allies; ++i) {
        const auto m = battle.available_actions(i);
        rec.masks.emplace_back(m.begin(), m.end());
      }
    }
    frame = battle.step(actions);
    ep.ret += frame.reward;
    if (record) {
      rec.actions = std::move(actions);
      rec.reward = frame.reward;
      rec.done = frame.done;
      ep.steps.push_back(std::move(rec));
    }
  }
  ep.won = frame.won;
  if (record) {
    ep.final_state = std::move(frame.global_state);
    ep.final_observations = std::move(frame.observations);
  }
  return ep;
}

RateEstimate measure(const env::TaskSpec& spec, int episodes, std::uint64_t base_seed,
                     const std::function<Policy(int)>& make_policy) {
  RateEstimate est;
  est.episodes = episodes;
  int wins = 0;
  double total = 0.0;
  for (int i = 0; i < episodes; ++i) {
    const auto ep = run_episode(spec, base_seed + i, make_policy(i), false);
    wins += ep.won ? 1 : 0;
    total += ep.ret;
  }
  est.win_rate = episodes > 0 ? static_cast<double>(wins) / episodes : 0.0;
  est.mean_return = episodes > 0 ? total / episodes : 0.0;
  return est;
}

namespace {

double noisy_rate(const env::TaskSpec& spec, double eps, std::uint64_t seed, int episodes) {
  return measure(spec, episodes, seed, [&](int i) {
           return noisy_policy(eps, substream(seed, "calibrate", i));
         }).win_rate;
}

}  // namespace

Calibration calibrate_medium(const env::TaskSpec& spec, std::uint64_t seed, double target_ratio,
                             double tolerance, int episodes) {
  Calibration cal;
  cal.expert_win_rate =
      measure(spec, episodes, seed, [](int) { return expert_policy(); }).win_rate;
  if (cal.expert_win_rate <= 0.0) throw std::runtime_error("uncalibratable: expert never wins");
  const double lower = (target_ratio - tolerance) * cal.expert_win_rate;
  const double upper = (target_ratio + tolerance) * cal.expert_win_rate;

  double lo = 0.0;
  double hi = 1.0;
  double eps = 0.0;
  double best_gap = std::numeric_limits<double>::infinity();
  double best_rate = 0.0;
  for (int iter = 0; iter <= 20; ++iter) {
    const double rate = noisy_rate(spec, eps, seed, episodes);
    if (rate >= lower && rate <= upper) {
      cal.epsilon = eps;
      cal.win_rate = rate;
      return cal;
    }
    const double gap = rate > upper ? rate - upper : lower - rate;
    if (gap < best_gap) {
      best_gap = gap;
      best_rate = rate;
    }
    if (rate > upper) {
      lo = eps;
    } else {
      hi = eps;
    }
    eps = 0.5 * (lo + hi);
  }
  std::ostringstream msg;
  msg << "calibration did not reach the target band; closest win rate " << best_rate;
  throw std::runtime_error(msg.str());
}

Dataset generate(const env::TaskSpec& spec, Quality quality, int n_episodes, std::uint64_t seed,
                 std::optional<double> medium_epsilon) {
  spec.validate();
  if (n_episodes < 1) throw std::invalid_argument("n_episodes must be >= 1");
  if (quality != Quality::expert && !medium_epsilon) {
    throw std::invalid_argument("quality " + to_string(quality) + " needs a calibrated epsilon");
  }
  const double eps_star = medium_epsilon.value_or(0.0);

  Dataset ds;
  ds.meta.task = spec;
  ds.meta.quality = quality;
  ds.meta.seed = seed;
  ds.meta.n_episodes = n_episodes;
  ds.meta.epsilon = eps_star;
  ds.episodes.reserve(n_episodes);

  const int n_expert_half = (n_episodes + 1) / 2;
  for (int i = 0; i < n_episodes; ++i) {
    double eps = 0.0;
    switch (quality) {
      case Quality::expert: eps = 0.0; break;
      case Quality::medium: eps = eps_star; break;
      case Quality::medium_expert: eps = i < n_expert_half ? 0.0 : eps_star; break;
      case Quality::medium_replay:
        eps = n_episodes == 1 ? eps_star
                              : 1.0 + (eps_star - 1.0) * static_cast<double>(i) / (n_episodes - 1);
        break;
    }
    const auto policy = noisy_policy(eps, substream(seed, "behavior", i));
    ds.episodes.push_back(run_episode(spec, seed + i, policy, true));
  }

  int wins = 0;
  double total = 0.0;
  for (const auto& ep : ds.episodes) {
    wins += ep.won ? 1 : 0;
    total += ep.ret;
  }
  ds.meta.win_rate = static_cast<double>(wins) / n_episodes;
  ds.meta.mean_return = total / n_episodes;
  return ds;
}

namespace {

json task_to_json(const env::TaskSpec& t) {
  return json{{"name", t.name},
              {"n_allies", t.n_allies},
              {"n_enemies", t.n_enemies},
              {"grid_size", t.grid_size},
              {"max_steps", t.max_steps},
              {"unit_hp", t.unit_hp},
              {"attack_range", t.attack_range},
              {"attack_damage", t.attack_damage},
              {"sight_range", t.sight_range}};
}

env::TaskSpec task_from_json(const json& j) {
  env::TaskSpec t;
  t.name = j.at("name").get<std::string>();
  t.n_allies = j.at("n_allies").get<int>();
  t.n_enemies = j.at("n_enemies").get<int>();
  t.grid_size = j.at("grid_size").get<int>();
  t.max_steps = j.at("max_steps").get<int>();
  t.unit_hp = j.at("unit_hp").get<int>();
  t.attack_range = j.at("attack_range").get<int>();
  t.attack_damage = j.at("attack_damage").get<int>();
  t.sight_range = j.at("sight_range").get<int>();
  t.validate();
  return t;
}

json obs_to_json(const std::vector<env::Observation>& obs) {
  json out = json::array();
  for (const auto& o : obs) {
    json ents = json::array();
    for (const auto& e : o.entities) ents.push_back(e);
    out.push_back(json{{"own", o.own}, {"ent", std::move(ents)}});
  }
  return out;
}

std::vector<env::Observation> obs_from_json(const json& j, const env::TaskSpec& spec) {
  std::vector<env::Observation> out;
  if (static_cast<int>(j.size()) != spec.n_allies) throw std::runtime_error("observation count mismatch");
  for (const auto& o : j) {
    env::Observation obs;
    obs.own = o.at("own").get<std::array<double, env::kOwnFeatures>>();
    obs.entities = o.at("ent").get<std::vector<std::array<double, env::kEntityFeatures>>>();
    if (static_cast<int>(obs.entities.size()) != spec.n_entities() - 1) {
      throw std::runtime_error("entity portion count mismatch");
    }
    out.push_back(std::move(obs));
  }
  return out;
}

std::string mask_to_string(const std::vector<std::uint8_t>& m) {
  std::string s(m.size(), '0');
  for (std::size_t i = 0; i < m.size(); ++i) s[i] = m[i] ? '1' : '0';
  return s;
}

std::vector<std::uint8_t> mask_from_string(const std::string& s) {
  std::vector<std::uint8_t> m(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '0' && s[i] != '1') throw std::runtime_error("mask must be a 0/1 string");
    m[i] = s[i] == '1';
  }
  return m;
}

json episode_to_json(const Episode& ep) {
  json steps = json::array();
  for (const auto& st : ep.steps) {
    json masks = json::array();
    for (const auto& m : st.masks) masks.push_back(mask_to_string(m));
    steps.push_back(json{{"s", st.global_state},
                         {"o", obs_to_json(st.observations)},
                         {"a", st.actions},
                         {"m", std::move(masks)},
                         {"r", st.reward},
                         {"d", st.done}});
  }
  return json{{"seed", ep.seed},
              {"won", ep.won},
              {"return", ep.ret},
              {"steps", std::move(steps)},
              {"final", json{{"s", ep.final_state}, {"o", obs_to_json(ep.final_observations)}}}};
}

Episode episode_from_json(const json& j, const env::TaskSpec& spec) {
  Episode ep;
  ep.seed = j.at("seed").get<std::uint64_t>();
  ep.won = j.at("won").get<bool>();
  ep.ret = j.at("return").get<double>();
  const auto& steps = j.at("steps");
  if (steps.empty() || static_cast<int>(steps.size()) > spec.max_steps) {
    throw std::runtime_error("episode length outside [1, max_steps]");
  }
  for (const auto& s : steps) {
    StepRecord rec;
    rec.global_state = s.at("s").get<std::vector<double>>();
    if (static_cast<int>(rec.global_state.size()) != spec.state_dim()) {
      throw std::runtime_error("global state length mismatch");
    }
    rec.observations = obs_from_json(s.at("o"), spec);
    rec.actions = s.at("a").get<std::vector<int>>();
    for (const auto& m : s.at("m")) rec.masks.push_back(mask_from_string(m.get<std::string>()));
    if (static_cast<int>(rec.actions.size()) != spec.n_allies ||
        static_cast<int>(rec.masks.size()) != spec.n_allies) {
      throw std::runtime_error("action/mask count mismatch");
    }
    for (int i = 0; i < spec.n_allies; ++i) {
      if (static_cast<int>(rec.masks[i].size()) != spec.n_actions()) {
        throw std::runtime_error("mask width mismatch");
      }
      const int a = rec.actions[i];
      if (a < 0 || a >= spec.n_actions() || !rec.masks[i][a]) {
        throw std::runtime_error("stored action violates its availability mask");
      }
    }
    rec.reward = s.at("r").get<double>();
    rec.done = s.at("d").get<bool>();
    ep.steps.push_back(std::move(rec));
  }
  const auto& fin = j.at("final");
  ep.final_state = fin.at("s").get<std::vector<double>>();
  ep.final_observations = obs_from_json(fin.at("o"), spec);
  if (!ep.steps.back().done) throw std::runtime_error("last step is not terminal");
  return ep;
}

}  // namespace

void save(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  const auto& m = ds.meta;
  json meta{{"format", "hissd-dataset-1"},
            {"task", task_to_json(m.task)},
            {"quality", to_string(m.quality)},
            {"seed", m.seed},
            {"n_episodes", m.n_episodes},
            {"epsilon", m.epsilon},
            {"mean_return", m.mean_return},
            {"win_rate", m.win_rate}};
  out << meta.dump() << '\n';
  for (const auto& ep : ds.episodes) out << episode_to_json(ep).dump() << '\n';
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

Dataset load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset '" + path.string() + "'");
  Dataset ds;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (line_no == 1) {
        if (j.value("format", "") != "hissd-dataset-1") fail("not a dataset header");
        auto& m = ds.meta;
        m.task = task_from_json(j.at("task"));
        m.quality = quality_from_string(j.at("quality").get<std::string>());
        m.seed = j.at("seed").get<std::uint64_t>();
        m.n_episodes = j.at("n_episodes").get<int>();
        m.epsilon = j.at("epsilon").get<double>();
        m.mean_return = j.at("mean_return").get<double>();
        m.win_rate = j.at("win_rate").get<double>();
      } else {
        ds.episodes.push_back(episode_from_json(j, ds.meta.task));
      }
    } catch (const std::runtime_error& e) {
      if (std::string(e.what()).rfind(path.string() + ":", 0) == 0) throw;
      fail(e.what());
    } catch (const std::exception& e) {
      fail(std::string("malformed record: ") + e.what());
    }
  }
  if (line_no == 0) fail("empty dataset file");
  if (static_cast<int>(ds.episodes.size()) != ds.meta.n_episodes) {
    throw std::runtime_error(path.string() + ": header announces " +
                             std::to_string(ds.meta.n_episodes) + " episodes, found " +
                             std::to_string(ds.episodes.size()));
  }
  return ds;
}

}  // namespace hissd::data
