#include "hissd/networks.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hissd::nn {

void NetConfig::validate() const {
  if (hidden_dim < 1 || attention_dim < 1 || skill_dim < 1 || mlp_hidden < 1) {
    throw std::invalid_argument("network dimensions must be positive");
  }
  if (heads != 1) throw std::invalid_argument("only single-head attention is supported");
}

// ---------------------------------------------------------------- ObsBatch

ObsBatch ObsBatch::from_observations(std::span<const env::Observation> obs, int n_allies,
                                     int n_enemies) {
  ObsBatch b;
  b.groups = static_cast<int>(obs.size());
  b.n_allies = n_allies;
  b.n_enemies = n_enemies;
  b.own.resize(b.groups, env::kOwnFeatures);
  b.allies.resize(static_cast<Eigen::Index>(b.groups) * (n_allies - 1), env::kEntityFeatures);
  b.enemies.resize(static_cast<Eigen::Index>(b.groups) * n_enemies, env::kEntityFeatures);
  for (int g = 0; g < b.groups; ++g) {
    const auto& o = obs[g];
    if (static_cast<int>(o.entities.size()) != n_allies + n_enemies - 1) {
      throw std::invalid_argument("observation has " + std::to_string(o.entities.size()) +
                                  " entity portions, expected " +
                                  std::to_string(n_allies + n_enemies - 1));
    }
    for (int f = 0; f < env::kOwnFeatures; ++f) b.own(g, f) = o.own[f];
    for (int a = 0; a < n_allies - 1; ++a) {
      for (int f = 0; f < env::kEntityFeatures; ++f) {
        b.allies(static_cast<Eigen::Index>(g) * (n_allies - 1) + a, f) = o.entities[a][f];
      }
    }
    for (int e = 0; e < n_enemies; ++e) {
      for (int f = 0; f < env::kEntityFeatures; ++f) {
        b.enemies(static_cast<Eigen::Index>(g) * n_enemies + e, f) = o.entities[n_allies - 1 + e][f];
      }
    }
  }
  return b;
}

ObsBatch ObsBatch::slice(int first, int count) const {
  ObsBatch b;
  b.groups = count;
  b.n_allies = n_allies;
  b.n_enemies = n_enemies;
  b.own = own.middleRows(first, count);
  b.allies = allies.middleRows(static_cast<Eigen::Index>(first) * (n_allies - 1),
                               static_cast<Eigen::Index>(count) * (n_allies - 1));
  b.enemies = enemies.middleRows(static_cast<Eigen::Index>(first) * n_enemies,
                                 static_cast<Eigen::Index>(count) * n_enemies);
  return b;
}

ObsBatch ObsBatch::gather(std::span<const int> group_ids) const {
  ObsBatch b;
  b.groups = static_cast<int>(group_ids.size());
  b.n_allies = n_allies;
  b.n_enemies = n_enemies;
  const int na = n_allies - 1;
  b.own.resize(b.groups, own.cols());
  b.allies.resize(static_cast<Eigen::Index>(b.groups) * na, allies.cols());
  b.enemies.resize(static_cast<Eigen::Index>(b.groups) * n_enemies, enemies.cols());
  for (int i = 0; i < b.groups; ++i) {
    const int g = group_ids[i];
    if (g < 0 || g >= groups) throw std::out_of_range("ObsBatch::gather: group out of range");
    b.own.row(i) = own.row(g);
    if (na > 0) {
      b.allies.middleRows(static_cast<Eigen::Index>(i) * na, na) =
          allies.middleRows(static_cast<Eigen::Index>(g) * na, na);
    }
    b.enemies.middleRows(static_cast<Eigen::Index>(i) * n_enemies, n_enemies) =
        enemies.middleRows(static_cast<Eigen::Index>(g) * n_enemies, n_enemies);
  }
  return b;
}

ObsBatch ObsBatch::stack(std::span<const ObsBatch> parts) {
  if (parts.empty()) throw std::invalid_argument("ObsBatch::stack: nothing to stack");
  ObsBatch b;
  b.n_allies = parts[0].n_allies;
  b.n_enemies = parts[0].n_enemies;
  Eigen::Index own_rows = 0, ally_rows = 0, enemy_rows = 0;
  for (const auto& p : parts) {
    if (p.n_allies != b.n_allies || p.n_enemies != b.n_enemies) {
      throw std::invalid_argument("ObsBatch::stack: task layouts differ");
    }
    b.groups += p.groups;
    own_rows += p.own.rows();
    ally_rows += p.allies.rows();
    enemy_rows += p.enemies.rows();
  }
  b.own.resize(own_rows, env::kOwnFeatures);
  b.allies.resize(ally_rows, env::kEntityFeatures);
  b.enemies.resize(enemy_rows, env::kEntityFeatures);
  own_rows = ally_rows = enemy_rows = 0;
  for (const auto& p : parts) {
    b.own.middleRows(own_rows, p.own.rows()) = p.own;
    b.allies.middleRows(ally_rows, p.allies.rows()) = p.allies;
    b.enemies.middleRows(enemy_rows, p.enemies.rows()) = p.enemies;
    own_rows += p.own.rows();
    ally_rows += p.allies.rows();
    enemy_rows += p.enemies.rows();
  }
  return b;
}

// ------------------------------------------------------------ building blocks

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng)
    : w(store.add_weight(name + ".w", in, out, rng)), b(store.add_zeros(name + ".b", 1, out)) {}

Var Linear::operator()(Tape& tape, const ParamStore& store, Var x) const {
  return affine(x, tape.param(store, w), tape.param(store, b));
}

Embedder::Embedder(ParamStore& store, const std::string& prefix, const NetConfig& cfg, Rng& rng)
    : own(store, prefix + ".own", env::kOwnFeatures, cfg.hidden_dim, rng),
      ally(store, prefix + ".ally", env::kEntityFeatures, cfg.hidden_dim, rng),
      enemy(store, prefix + ".enemy", env::kEntityFeatures, cfg.hidden_dim, rng) {}

TokenSeq Embedder::operator()(Tape& tape, const ParamStore& store, const ObsBatch& obs) const {
  if (obs.own.cols() != env::kOwnFeatures || obs.allies.cols() != env::kEntityFeatures ||
      obs.enemies.cols() != env::kEntityFeatures) {
    throw std::invalid_argument("observation portion length mismatch");
  }
  if (obs.own.rows() != obs.groups ||
      obs.allies.rows() != static_cast<Eigen::Index>(obs.groups) * (obs.n_allies - 1) ||
      obs.enemies.rows() != static_cast<Eigen::Index>(obs.groups) * obs.n_enemies) {
    throw std::invalid_argument("observation portion count mismatch");
  }
  TokenSeq seq;
  seq.groups = obs.groups;
  std::vector<Var> parts;
  std::vector<int> per_group;
  parts.push_back(own(tape, store, tape.constant(obs.own)));
  per_group.push_back(1);
  seq.roles.push_back(Role::own);
  if (obs.n_allies > 1) {
    parts.push_back(ally(tape, store, tape.constant(obs.allies)));
    per_group.push_back(obs.n_allies - 1);
    seq.roles.insert(seq.roles.end(), obs.n_allies - 1, Role::ally);
  }
  parts.push_back(enemy(tape, store, tape.constant(obs.enemies)));
  per_group.push_back(obs.n_enemies);
  seq.roles.insert(seq.roles.end(), obs.n_enemies, Role::enemy);
  seq.tokens = interleave_groups(parts, per_group, obs.groups);
  return seq;
}

AttentionBlock::AttentionBlock(ParamStore& store, const std::string& prefix, const NetConfig& cfg,
                               Rng& rng)
    : wq(store.add_weight(prefix + ".wq", cfg.hidden_dim, cfg.attention_dim, rng)),
      wk(store.add_weight(prefix + ".wk", cfg.hidden_dim, cfg.attention_dim, rng)),
      wv(store.add_weight(prefix + ".wv", cfg.hidden_dim, cfg.hidden_dim, rng)),
      out(store, prefix + ".out", cfg.hidden_dim, cfg.hidden_dim, rng) {}

Var AttentionBlock::operator()(Tape& tape, const ParamStore& store, Var tokens, int group,
                               Mat* probs) const {
  if (tokens.rows() == 0 || group < 1) throw std::invalid_argument("attention over an empty sequence");
  Var q = matmul(tokens, tape.param(store, wq));
  Var k = matmul(tokens, tape.param(store, wk));
  Var v = matmul(tokens, tape.param(store, wv));
  Var a = attention(q, k, v, group);
  if (probs != nullptr) *probs = tape.aux(a);
  return elu(out(tape, store, a));
}

TokenSeq append_tokens(const TokenSeq& seq, std::span<const Var> extra, std::span<const Role> roles) {
  TokenSeq out;
  out.groups = seq.groups;
  out.roles = seq.roles;
  std::vector<Var> parts{seq.tokens};
  std::vector<int> per_group{seq.per_group()};
  for (std::size_t i = 0; i < extra.size(); ++i) {
    parts.push_back(extra[i]);
    per_group.push_back(1);
    out.roles.push_back(roles[i]);
  }
  out.tokens = interleave_groups(parts, per_group, seq.groups);
  return out;
}

// ------------------------------------------------------------------ encoders

CommonSkillEncoder::CommonSkillEncoder(ParamStore& store, const NetConfig& cfg, Rng& rng)
    : embed(store, "embed", cfg, rng),
      block(store, "block", cfg, rng),
      head(store, "skill_head", cfg.hidden_dim, cfg.skill_dim, rng) {}

SkillStep CommonSkillEncoder::operator()(Tape& tape, const ParamStore& store, const ObsBatch& obs,
                                         Var h_prev) const {
  const TokenSeq seq = embed(tape, store, obs);
  const Var extra[] = {h_prev};
  const Role roles[] = {Role::hidden};
  const TokenSeq full = append_tokens(seq, extra, roles);
  const int n = full.per_group();
  Var out = block(tape, store, full.tokens, n);
  return {head(tape, store, group_rows(out, n, 0)), group_rows(out, n, n - 1)};
}

TaskSkillEncoder::TaskSkillEncoder(ParamStore& store, const NetConfig& cfg, Rng& rng)
    : embed(store, "embed", cfg, rng),
      block(store, "block", cfg, rng),
      head(store, "skill_head", cfg.hidden_dim, cfg.skill_dim, rng) {}

Var TaskSkillEncoder::operator()(Tape& tape, const ParamStore& store, const ObsBatch& obs) const {
  const TokenSeq seq = embed(tape, store, obs);
  const int n = seq.per_group();
  Var out = block(tape, store, seq.tokens, n);
  return l2_normalize_rows(head(tape, store, group_rows(out, n, 0)));
}

// ----------------------------------------------------------------- predictor

Mat index_code(int index, int dim) {
  Mat code(1, dim);
  for (int d = 0; d < dim; ++d) {
    const double freq = 1.0 / std::pow(10000.0, static_cast<double>(2 * (d / 2)) / dim);
    const double angle = (index + 1) * freq;
    code(0, d) = d % 2 == 0 ? std::sin(angle) : std::cos(angle);
  }
  return code;
}

ForwardPredictor::ForwardPredictor(ParamStore& store, const NetConfig& cfg, Rng& rng)
    : ally_in(store, "ally_in", cfg.skill_dim, cfg.hidden_dim, rng),
      enemy_query(store.add_weight("enemy_query", 1, cfg.hidden_dim, rng)),
      stage1(store, "stage1", cfg, rng),
      stage2(store, "stage2", cfg, rng),
      enemy_head(store, "enemy_head", cfg.hidden_dim, env::kStateFeatures, rng),
      ally_head(store, "ally_head", cfg.hidden_dim, env::kStateFeatures, rng),
      local_head(store, "local_head", cfg.hidden_dim, cfg.hidden_dim, rng),
      hidden_dim(cfg.hidden_dim) {}

Prediction ForwardPredictor::operator()(Tape& tape, const ParamStore& store, Var skills,
                                        int n_agents, int n_enemies) const {
  if (n_agents < 1 || skills.rows() % n_agents != 0) {
    throw std::invalid_argument("predictor: skill rows must be a multiple of n_agents");
  }
  const int batch = static_cast<int>(skills.rows() / n_agents);
  Var allies = ally_in(tape, store, skills);

  Mat codes(static_cast<Eigen::Index>(batch) * n_enemies, hidden_dim);
  for (int b = 0; b < batch; ++b) {
    for (int j = 0; j < n_enemies; ++j) {
      codes.row(static_cast<Eigen::Index>(b) * n_enemies + j) = index_code(j, hidden_dim);
    }
  }
  Var queries = add_row(tape.constant(std::move(codes)), tape.param(store, enemy_query));

  const int n = n_agents + n_enemies;
  const Var parts1[] = {allies, queries};
  const int per1[] = {n_agents, n_enemies};
  Var s1 = stage1(tape, store, interleave_groups(parts1, per1, batch), n);
  Var enemy_tokens = group_rows(s1, n, n_agents, n_enemies);

  const Var parts2[] = {allies, enemy_tokens};
  Var s2 = stage2(tape, store, interleave_groups(parts2, per1, batch), n);
  Var ally_tokens = group_rows(s2, n, 0, n_agents);

  Var ally_blocks = ally_head(tape, store, ally_tokens);
  Var enemy_blocks = enemy_head(tape, store, enemy_tokens);
  const Var blocks[] = {ally_blocks, enemy_blocks};
  Var state = reshape(interleave_groups(blocks, per1, batch), batch,
                      static_cast<Eigen::Index>(env::kStateFeatures) * n);
  return {state, local_head(tape, store, ally_tokens)};
}

// --------------------------------------------------------------------- value

ValueNet::ValueNet(ParamStore& store, const NetConfig& cfg, Rng& rng)
    : embed(store, "embed", cfg, rng),
      block(store, "block", cfg, rng),
      head(store, "value_head", cfg.hidden_dim, 1, rng),
      mix_query(store.add_zeros("mixer.query", 1, cfg.attention_dim)),
      mix_wq(store.add_weight("mixer.wq", cfg.hidden_dim, cfg.attention_dim, rng)),
      mix_wk(store.add_weight("mixer.wk", cfg.hidden_dim, cfg.attention_dim, rng)),
      attention_dim(cfg.attention_dim) {}

ValueOutput ValueNet::operator()(Tape& tape, const ParamStore& store, const ValueInput& in,
                                 Var h_prev, int n_agents) const {
  if ((in.obs != nullptr) == in.local.has_value()) {
    throw std::invalid_argument("value net needs exactly one input kind (observations or local information)");
  }
  TokenSeq seq;
  if (in.obs != nullptr) {
    seq = embed(tape, store, *in.obs);
  } else {
    seq.tokens = *in.local;
    seq.groups = static_cast<int>(in.local->rows());
    seq.roles = {Role::own};
  }
  if (n_agents < 1 || seq.groups % n_agents != 0) {
    throw std::invalid_argument("value net: group count must be a multiple of n_agents");
  }
  const Var extra[] = {h_prev};
  const Role roles[] = {Role::hidden};
  const TokenSeq full = append_tokens(seq, extra, roles);
  const int n = full.per_group();
  Var out = block(tape, store, full.tokens, n);
  Var summary = group_rows(out, n, 0);
  ValueOutput res;
  res.hidden = group_rows(out, n, n - 1);
  res.values = head(tape, store, summary);

  // Mixer: a team query (learned vector plus the projected mean summary)
  // scores every agent; weights are K * softmax so they sum to K.
  Var team = add_row(matmul(group_mean(summary, n_agents), tape.param(store, mix_wq)),
                     tape.param(store, mix_query));
  Var keys = matmul(summary, tape.param(store, mix_wk));
  Var scores = scale(row_dot(keys, repeat_rows(team, n_agents)), 1.0 / std::sqrt(attention_dim));
  res.weights = scale(group_softmax(scores, n_agents), static_cast<double>(n_agents));
  res.total = group_sum(mul(res.weights, res.values), n_agents);
  return res;
}

// ------------------------------------------------------------------- decoder

ActionDecoder::ActionDecoder(ParamStore& store, const NetConfig& cfg, Rng& rng)
    : embed(store, "embed", cfg, rng),
      skill_in(store, "skill_in", cfg.skill_dim, cfg.hidden_dim, rng),
      block(store, "block", cfg, rng),
      own_hidden(store, "own_mlp.0", cfg.hidden_dim + cfg.skill_dim, cfg.mlp_hidden, rng),
      own_out(store, "own_mlp.1", cfg.mlp_hidden, env::kFixedActions, rng),
      attack_hidden(store, "attack_mlp.0", cfg.hidden_dim + cfg.skill_dim, cfg.mlp_hidden, rng),
      attack_out(store, "attack_mlp.1", cfg.mlp_hidden, 1, rng) {}

DecoderStep ActionDecoder::operator()(Tape& tape, const ParamStore& store, const ObsBatch& obs,
                                      Var c, Var z, Var h_prev) const {
  const TokenSeq seq = embed(tape, store, obs);
  const Var extra[] = {skill_in(tape, store, c), h_prev};
  const Role roles[] = {Role::skill, Role::hidden};
  const TokenSeq full = append_tokens(seq, extra, roles);
  const int n = full.per_group();
  Var out = block(tape, store, full.tokens, n);

  Var own_feat = concat_cols(group_rows(out, n, 0), z);
  Var fixed = own_out(tape, store, elu(own_hidden(tape, store, own_feat)));

  const int first_enemy = obs.n_allies;  // own token + (n_allies - 1) ally tokens
  Var enemy_feat = concat_cols(group_rows(out, n, first_enemy, obs.n_enemies),
                               repeat_rows(z, obs.n_enemies));
  Var attack = attack_out(tape, store, elu(attack_hidden(tape, store, enemy_feat)));
  Var logits = concat_cols(fixed, reshape(attack, obs.groups, obs.n_enemies));
  return {logits, group_rows(out, n, n - 1)};
}

// --------------------------------------------------------------------- model

Model::Model(const NetConfig& cfg, std::uint64_t seed) : config(cfg) {
  cfg.validate();
  Rng rng(seed);
  encoder = CommonSkillEncoder(encoder_params, cfg, rng);
  predictor = ForwardPredictor(predictor_params, cfg, rng);
  value = ValueNet(value_params, cfg, rng);
  decoder = ActionDecoder(decoder_params, cfg, rng);
  task_encoder = TaskSkillEncoder(task_params, cfg, rng);
  value_target = value_params.shadow("value_target");
  task_momentum = task_params.shadow("task_encoder_momentum");
}

std::vector<ParamStore*> Model::stores() {
  return {&encoder_params, &predictor_params, &value_params, &decoder_params,
          &task_params,    &value_target,     &task_momentum};
}

std::vector<const ParamStore*> Model::stores() const {
  return {&encoder_params, &predictor_params, &value_params, &decoder_params,
          &task_params,    &value_target,     &task_momentum};
}

}  // namespace hissd::nn
