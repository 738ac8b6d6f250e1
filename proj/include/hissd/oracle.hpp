#pragma once

// Independent numerical checks: the contrastive/KL sandwich on small
// discrete worlds, the expectile minimiser identity and finite-difference
// gradient checking.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hissd/params.hpp"
#include "hissd/rng.hpp"
#include "hissd/tape.hpp"

namespace hissd::oracle {

/// N tasks with a handful of observations each, a discrete skill alphabet, an
/// encoder table g(z|x) and one free prior p(D^i) over skills per task.
/// Tasks are drawn uniformly; x | task follows obs_probs[i].
struct DiscreteSkillWorld {
  int n_tasks = 0;
  int n_skills = 0;
  std::vector<std::vector<double>> obs_probs;               // [task][x]
  std::vector<std::vector<std::vector<double>>> encoder;    // [task][x][z]
  std::vector<std::vector<double>> task_prior;              // [task][z]

  /// Throws std::invalid_argument if a distribution is negative or does not
  /// sum to 1 within 1e-12.
  void validate() const;
  /// Marginal p(z) over tasks and observations.
  std::vector<double> skill_marginal() const;
};

/// g(z|x) = p(z) = p(D^i) uniform over `n_skills` skills, one observation per task.
DiscreteSkillWorld uniform_world(int n_tasks, int n_skills);
/// Random world with 1..max_tasks tasks, 1..6 observations, 2..8 skills.
DiscreteSkillWorld random_world(Rng& rng, int max_tasks = 4);

struct Theorem1Result {
  double lhs = 0.0;       // contrastive loss with one negative observation per other task
  double mi = 0.0;        // mean within-task I(z; x)
  double expected_kl = 0.0;
  double rhs = 0.0;       // -E_x KL(g(.|x) || p(D^i))
  bool holds = false;     // lhs >= rhs - 1e-9 and mi <= expected_kl + 1e-9
  double lower_margin() const { return lhs - rhs; }
  double upper_margin() const { return expected_kl - mi; }
};

Theorem1Result theorem1_check(const DiscreteSkillWorld& world);

struct ExpectileCheck {
  double minimizer = 0.0;  // golden-section argmin of the expectile loss
  double reference = 0.0;  // root of the first-order condition
};

/// Throws std::invalid_argument for fewer than 2 samples or eps outside (0, 1).
ExpectileCheck expectile_identity_check(const std::vector<double>& samples, double eps);

/// Builds a scalar loss on the given tape.
using LossClosure = std::function<nn::Var(nn::Tape&)>;

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst_entry;
  int checked = 0;
};

/// Compares reverse-mode gradients of `loss` w.r.t. every entry of `params`
/// (or a seeded random subset when there are more than `max_entries`) with
/// central differences. Relative error is |a - n| / max(1, |n|). Throws
/// std::runtime_error naming the entry if a perturbed loss is non-finite.
GradcheckResult gradcheck(const LossClosure& loss, const std::vector<nn::ParamStore*>& params,
                          double perturb = 1e-5, int max_entries = 1000, std::uint64_t seed = 0);

}  // namespace hissd::oracle
