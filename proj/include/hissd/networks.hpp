#pragma once

// Token-based networks shared across team sizes. Every observation is split
// into an own token, one token per other ally and one per enemy; all maps
// are shared across tokens of the same role, so the parameter count does not
// depend on the task.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hissd/gridbattle.hpp"
#include "hissd/params.hpp"
#include "hissd/tape.hpp"

namespace hissd::nn {

struct NetConfig {
  int hidden_dim = 64;
  int attention_dim = 64;
  int skill_dim = 64;
  int mlp_hidden = 128;
  int heads = 1;

  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

enum class Role : std::uint8_t { own, ally, enemy, skill, hidden, query };

/// Decomposed observations of `groups` agent instances that share one task
/// layout.
struct ObsBatch {
  int groups = 0;
  int n_allies = 0;
  int n_enemies = 0;
  Mat own;      // groups x kOwnFeatures
  Mat allies;   // groups * (n_allies - 1) x kEntityFeatures
  Mat enemies;  // groups * n_enemies x kEntityFeatures

  static ObsBatch from_observations(std::span<const env::Observation> obs, int n_allies,
                                    int n_enemies);
  /// Rows [first, first + count) of the group axis.
  ObsBatch slice(int first, int count) const;
  /// The listed groups, in order.
  ObsBatch gather(std::span<const int> group_ids) const;
  static ObsBatch stack(std::span<const ObsBatch> parts);
  int tokens() const { return n_allies + n_enemies; }
};

struct TokenSeq {
  Var tokens;  // groups * roles.size() x hidden_dim, group-major
  int groups = 0;
  std::vector<Role> roles;

  int per_group() const { return static_cast<int>(roles.size()); }
};

struct Linear {
  int w = -1;
  int b = -1;
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng);
  Var operator()(Tape& tape, const ParamStore& store, Var x) const;
};

/// One affine map per portion kind.
struct Embedder {
  Linear own, ally, enemy;
  Embedder() = default;
  Embedder(ParamStore& store, const std::string& prefix, const NetConfig& cfg, Rng& rng);
  /// Throws std::invalid_argument on portion width or count mismatches.
  TokenSeq operator()(Tape& tape, const ParamStore& store, const ObsBatch& obs) const;
};

/// Single-head scaled dot-product self-attention followed by a position-wise
/// affine map and ELU.
struct AttentionBlock {
  int wq = -1, wk = -1, wv = -1;
  Linear out;
  AttentionBlock() = default;
  AttentionBlock(ParamStore& store, const std::string& prefix, const NetConfig& cfg, Rng& rng);
  /// `probs`, when given, receives the attention probabilities.
  Var operator()(Tape& tape, const ParamStore& store, Var tokens, int group,
                 Mat* probs = nullptr) const;
};

/// Appends `extra` (groups x D each, in order) to every group of `seq`.
TokenSeq append_tokens(const TokenSeq& seq, std::span<const Var> extra, std::span<const Role> roles);

struct SkillStep {
  Var skill;   // groups x skill_dim
  Var hidden;  // groups x hidden_dim
};

/// Recurrent common-skill encoder.
struct CommonSkillEncoder {
  Embedder embed;
  AttentionBlock block;
  Linear head;
  CommonSkillEncoder() = default;
  CommonSkillEncoder(ParamStore& store, const NetConfig& cfg, Rng& rng);
  SkillStep operator()(Tape& tape, const ParamStore& store, const ObsBatch& obs, Var h_prev) const;
};

/// Task-skill encoder; output rows have unit L2 norm.
struct TaskSkillEncoder {
  Embedder embed;
  AttentionBlock block;
  Linear head;
  TaskSkillEncoder() = default;
  TaskSkillEncoder(ParamStore& store, const NetConfig& cfg, Rng& rng);
  Var operator()(Tape& tape, const ParamStore& store, const ObsBatch& obs) const;
};

struct Prediction {
  Var state;  // batch x 5 * (n_allies + n_enemies), gridbattle layout
  Var local;  // batch * n_allies x hidden_dim
};

/// Two-stage transformer mapping all agents' common skills to the next
/// global state and per-agent local information.
struct ForwardPredictor {
  Linear ally_in;
  int enemy_query = -1;
  AttentionBlock stage1, stage2;
  Linear enemy_head, ally_head, local_head;
  int hidden_dim = 0;
  ForwardPredictor() = default;
  ForwardPredictor(ParamStore& store, const NetConfig& cfg, Rng& rng);
  /// `skills` holds n_agents consecutive rows per batch entry.
  Prediction operator()(Tape& tape, const ParamStore& store, Var skills, int n_agents,
                        int n_enemies) const;
};

/// Fixed sinusoidal index code of enemy j, used to tell enemy query tokens
/// apart.
Mat index_code(int index, int dim);

/// Value net input: decomposed observations or already-embedded local
/// information vectors, never both.
struct ValueInput {
  const ObsBatch* obs = nullptr;
  std::optional<Var> local;
};

struct ValueOutput {
  Var values;   // groups x 1
  Var total;    // groups / n_agents x 1
  Var weights;  // groups x 1, nonnegative, summing to n_agents per team
  Var hidden;   // groups x hidden_dim
};

/// Per-agent recurrent value trunk plus an attention mixer.
struct ValueNet {
  Embedder embed;
  AttentionBlock block;
  Linear head;
  int mix_query = -1, mix_wq = -1, mix_wk = -1;
  int attention_dim = 0;
  ValueNet() = default;
  ValueNet(ParamStore& store, const NetConfig& cfg, Rng& rng);
  ValueOutput operator()(Tape& tape, const ParamStore& store, const ValueInput& in, Var h_prev,
                         int n_agents) const;
};

struct DecoderStep {
  Var logits;  // groups x (kFixedActions + n_enemies)
  Var hidden;
};

/// Recurrent action decoder: fixed-action logits from the own token, one
/// attack logit per enemy token through a shared head.
struct ActionDecoder {
  Embedder embed;
  Linear skill_in;
  AttentionBlock block;
  Linear own_hidden, own_out, attack_hidden, attack_out;
  ActionDecoder() = default;
  ActionDecoder(ParamStore& store, const NetConfig& cfg, Rng& rng);
  DecoderStep operator()(Tape& tape, const ParamStore& store, const ObsBatch& obs, Var c, Var z,
                         Var h_prev) const;
};

/// All networks of the method with their parameter stores. Target and
/// momentum stores share the layout of their online counterparts.
struct Model {
  NetConfig config;
  ParamStore encoder_params{"skill_encoder"};
  ParamStore predictor_params{"predictor"};
  ParamStore value_params{"value"};
  ParamStore decoder_params{"decoder"};
  ParamStore task_params{"task_encoder"};
  ParamStore value_target{"value_target"};
  ParamStore task_momentum{"task_encoder_momentum"};

  CommonSkillEncoder encoder;
  ForwardPredictor predictor;
  ValueNet value;
  ActionDecoder decoder;
  TaskSkillEncoder task_encoder;

  Model(const NetConfig& cfg, std::uint64_t seed);

  /// Every store in checkpoint order.
  std::vector<ParamStore*> stores();
  std::vector<const ParamStore*> stores() const;
};

}  // namespace hissd::nn
