#pragma once

// Decentralised execution, win-rate evaluation and skill export.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hissd/datagen.hpp"
#include "hissd/gridbattle.hpp"
#include "hissd/networks.hpp"
#include "hissd/rng.hpp"

namespace hissd::eval {

/// What a policy may see at one timestep. `env` is only set for scripted
/// policies; learned policies must work with it null.
struct StepView {
  const std::vector<env::Observation>* observations = nullptr;
  const std::vector<std::vector<bool>>* masks = nullptr;
  const env::GridBattle* env = nullptr;
};

class Policy {
 public:
  virtual ~Policy() = default;
  /// Called before every episode; resets recurrent state.
  virtual void begin_episode(const env::TaskSpec& spec, std::uint64_t seed) = 0;
  virtual std::vector<int> act(const StepView& view) = 0;
  /// Whether act() reads StepView::env.
  virtual bool needs_env() const { return false; }
};

/// Per-agent skill encoders and action decoder. Every agent is computed from
/// its own observation and recurrent state only.
class SkillPolicy : public Policy {
 public:
  SkillPolicy(const nn::Model& model, bool greedy);

  void begin_episode(const env::TaskSpec& spec, std::uint64_t seed) override;
  std::vector<int> act(const StepView& view) override;

  /// Skills of the last act() call, one row per agent.
  const nn::Mat& last_common() const { return last_c_; }
  const nn::Mat& last_task() const { return last_z_; }

 private:
  const nn::Model& model_;
  bool greedy_;
  env::TaskSpec spec_;
  Rng rng_;
  nn::Mat h_encoder_, h_decoder_;
  nn::Mat last_c_, last_z_;
};

/// Wraps a datagen joint policy; needs the environment.
class ScriptedPolicy : public Policy {
 public:
  explicit ScriptedPolicy(data::Policy policy) : policy_(std::move(policy)) {}
  void begin_episode(const env::TaskSpec&, std::uint64_t) override {}
  std::vector<int> act(const StepView& view) override;
  bool needs_env() const override { return true; }

 private:
  data::Policy policy_;
};

/// Argmax over legal entries, ties to the lowest id.
int masked_argmax(const double* logits, const std::vector<bool>& mask);
/// Samples from the softmax restricted to legal entries.
int masked_sample(const double* logits, const std::vector<bool>& mask, Rng& rng);

struct RolloutResult {
  double ret = 0.0;
  bool won = false;
  int coerced = 0;
  std::vector<std::vector<int>> actions;
  std::vector<double> rewards;
};

/// One episode from env seed `seed`. The policy gets the environment only if
/// it declares needs_env().
RolloutResult rollout(Policy& policy, const env::TaskSpec& spec, std::uint64_t seed);

struct TaskReport {
  std::string task;
  bool seen = false;
  int episodes = 0;
  double win_rate = 0.0;
  double win_std = 0.0;
  double return_mean = 0.0;
  double return_std = 0.0;
  int coerced = 0;
};

struct EvalReport {
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::vector<TaskReport> tasks;

  std::string table() const;
  nlohmann::json to_json() const;
};

/// Episode i of every task uses env seed base_seed + i. Tasks whose name is
/// in `seen_tasks` are flagged as seen. Throws std::invalid_argument when
/// episodes < 1.
EvalReport evaluate(Policy& policy, const std::vector<env::TaskSpec>& specs, int episodes,
                    std::uint64_t base_seed, const std::vector<std::string>& seen_tasks);

/// Greedy rollouts writing one CSV row per agent and timestep:
/// task,episode,timestep,time_window,agent,alive,c0..,z0..
void export_skills(const nn::Model& model, const std::vector<env::TaskSpec>& specs, int episodes,
                   std::uint64_t base_seed, const std::filesystem::path& path);

/// Quartile of t in an episode of `length` steps, 1..4.
int time_window(int t, int length);

}  // namespace hissd::eval
