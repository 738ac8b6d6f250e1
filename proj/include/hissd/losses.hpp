#pragma once

// Training objectives. The scalar helpers are pure; the batch objectives
// build their graph on a caller-owned tape so the caller decides which
// parameter stores receive gradients.

#include <cstdint>
#include <string>

#include "hissd/batching.hpp"
#include "hissd/networks.hpp"

namespace hissd::loss {

using nn::Mat;
using nn::Tape;
using nn::Var;

enum class AdvantageSource { predicted, dataset };

std::string to_string(AdvantageSource s);
AdvantageSource advantage_source_from_string(const std::string& s);

struct LossConfig {
  double gamma = 0.99;
  double epsilon_expectile = 0.9;
  double alpha = 10.0;
  double beta = 0.05;
  double sigma_temp = 0.1;
  double weight_clip = 100.0;
  AdvantageSource advantage_source = AdvantageSource::predicted;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

/// |eps - 1(n < 0)| * n^2
double expectile_term(double eps, double n);

/// exp(min((r + gamma * (1 - done) * v_next - v_now) / alpha, log(weight_clip)))
double advantage_weight(double r, double v_next_target, double v_now, const LossConfig& cfg,
                        bool done = false);

/// InfoNCE over unit vectors: q and k_pos are n x d, k_negs is m x d and
/// shared by every query. Throws std::invalid_argument when m = 0.
double contrastive_loss(const Mat& q, const Mat& k_pos, const Mat& k_negs, double sigma);
/// Differentiable in q only.
Var contrastive_loss(Var q, const Mat& k_pos, const Mat& k_negs, double sigma);

/// Quantities of the value pass reused by the later objectives; none of them
/// carries gradient.
struct ValueContext {
  Mat v_now;          // L x B, online V_tot(o_t)
  Mat v_next;         // L x B, target V_tot(o_{t+1})
  Mat target_hidden;  // L * B * K x hidden, target hidden state entering frame t + 1
};

/// Target-network pass over all frames, plus the online values.
ValueContext value_context(const nn::Model& model, const data::Batch& batch);

/// Mean expectile residual over valid steps. Gradient reaches the online
/// value parameters when they are tracked on `tape`. `ctx`, when given,
/// receives the value context computed along the way.
Var value_loss(Tape& tape, const nn::Model& model, const data::Batch& batch, const LossConfig& cfg,
               ValueContext* ctx = nullptr);

/// Common skills of every agent at frames [0, L), rows ordered (t, b, k).
Var common_skills(Tape& tape, const nn::Model& model, const data::Batch& batch);

struct PlannerStats {
  Mat skills;                 // detached common skills, rows (t, b, k)
  Mat weights;                // L x B advantage weights
  double mean_weight = 0.0;   // mean advantage weight over valid steps
  double prediction = 0.0;    // mean 0.5 * ||s' - s_{t+1}||^2 over valid steps
};

/// Advantage-weighted prediction objective. The weights are constants; when
/// `fixed_weights` (L x B) is given they replace the computed ones.
Var planner_loss(Tape& tape, const nn::Model& model, const data::Batch& batch,
                 const LossConfig& cfg, const ValueContext& ctx, PlannerStats* stats = nullptr,
                 const Mat* fixed_weights = nullptr);

/// Explicit trade-off form: mean of -V_tot(l_{t+1}) + alpha * 0.5 * ||s' - s_{t+1}||^2.
Var planner_loss_explicit(Tape& tape, const nn::Model& model, const data::Batch& batch,
                          const LossConfig& cfg, const ValueContext& ctx,
                          PlannerStats* stats = nullptr);

/// Momentum-encoder keys of observations from other tasks.
Mat momentum_keys(const nn::Model& model, const nn::ObsBatch& obs);

struct ControllerStats {
  double nll = 0.0;
  double contrastive = 0.0;
  int pairs = 0;
};

/// Masked NLL of the dataset actions plus beta times the contrastive term.
/// `skills` are the (constant) common skills, rows (t, b, k). Positive pairs
/// are two distinct alive agents of one valid step, chosen with `pair_seed`.
/// With beta = 0 the contrastive term is not built at all. Throws
/// std::invalid_argument when beta > 0 and no step has two alive agents, or
/// when negatives are missing.
Var controller_loss(Tape& tape, const nn::Model& model, const data::Batch& batch, const Mat& skills,
                    const Mat& negatives, const LossConfig& cfg, std::uint64_t pair_seed,
                    ControllerStats* stats = nullptr);

}  // namespace hissd::loss
