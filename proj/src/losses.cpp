#include "hissd/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace hissd::loss {

using data::Batch;
using nn::Model;

std::string to_string(AdvantageSource s) {
  return s == AdvantageSource::predicted ? "predicted" : "dataset";
}

AdvantageSource advantage_source_from_string(const std::string& s) {
  if (s == "predicted") return AdvantageSource::predicted;
  if (s == "dataset") return AdvantageSource::dataset;
  throw std::invalid_argument("unknown advantage source '" + s + "'");
}

void LossConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
  if (!(epsilon_expectile > 0.0 && epsilon_expectile < 1.0)) {
    throw std::invalid_argument("epsilon_expectile must lie in (0, 1)");
  }
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (!(sigma_temp > 0.0)) throw std::invalid_argument("sigma_temp must be positive");
  if (!(weight_clip > 0.0)) throw std::invalid_argument("weight_clip must be positive");
}

double expectile_term(double eps, double n) {
  const double w = n < 0.0 ? 1.0 - eps : eps;
  return w * n * n;
}

double advantage_weight(double r, double v_next_target, double v_now, const LossConfig& cfg,
                        bool done) {
  const double adv = r + cfg.gamma * (done ? 0.0 : 1.0) * v_next_target - v_now;
  const double cap = std::log(cfg.weight_clip);
  const double x = adv / cfg.alpha;
  if (x >= cap) return cfg.weight_clip;
  return std::exp(x);
}

double contrastive_loss(const Mat& q, const Mat& k_pos, const Mat& k_negs, double sigma) {
  if (k_negs.rows() == 0) throw std::invalid_argument("contrastive loss needs at least one negative");
  if (q.rows() == 0) throw std::invalid_argument("contrastive loss needs at least one query");
  if (q.rows() != k_pos.rows() || q.cols() != k_pos.cols() || q.cols() != k_negs.cols()) {
    throw std::invalid_argument("contrastive loss: shape mismatch");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const double pos = q.row(i).dot(k_pos.row(i)) / sigma;
    Eigen::VectorXd neg = (k_negs * q.row(i).transpose()) / sigma;
    const double m = std::max(pos, neg.maxCoeff());
    const double lse = m + std::log(std::exp(pos - m) + (neg.array() - m).exp().sum());
    total += lse - pos;
  }
  return total / static_cast<double>(q.rows());
}

Var contrastive_loss(Var q, const Mat& k_pos, const Mat& k_negs, double sigma) {
  if (k_negs.rows() == 0) throw std::invalid_argument("contrastive loss needs at least one negative");
  if (q.rows() == 0) throw std::invalid_argument("contrastive loss needs at least one query");
  if (q.rows() != k_pos.rows() || q.cols() != k_pos.cols() || q.cols() != k_negs.cols()) {
    throw std::invalid_argument("contrastive loss: shape mismatch");
  }
  Tape& tape = *q.tape;
  Var pos = row_dot(q, tape.constant(k_pos));
  Var neg = matmul(q, tape.constant(k_negs.transpose()));
  Var logits = nn::scale(nn::concat_cols(pos, neg), 1.0 / sigma);
  Var logp = nn::masked_log_softmax(logits, Mat::Ones(logits.rows(), logits.cols()));
  const std::vector<int> first(static_cast<std::size_t>(q.rows()), 0);
  Var picked = nn::pick(logp, first);
  return nn::weighted_sum(picked, Mat::Constant(q.rows(), 1, -1.0 / static_cast<double>(q.rows())));
}

namespace {

struct ValueRun {
  std::vector<Var> totals;   // per frame, B x 1
  std::vector<Var> hiddens;  // per frame, hidden state after that frame
};

ValueRun run_value(Tape& tape, const Model& model, const nn::ParamStore& store, const Batch& batch,
                   int frames) {
  ValueRun run;
  const int G = batch.size * batch.agents();
  Var h = tape.constant(Mat::Zero(G, model.config.hidden_dim));
  for (int t = 0; t < frames; ++t) {
    nn::ValueInput in;
    in.obs = &batch.frames[t];
    nn::ValueOutput out = model.value(tape, store, in, h, batch.agents());
    run.totals.push_back(out.total);
    h = out.hidden;
    run.hiddens.push_back(h);
  }
  return run;
}

// L x B layout flattened row-major matches rows (t, b) of stacked per-frame outputs.
Mat flat(const Mat& m) { return Mat::Map(m.data(), m.size(), 1); }

int require_valid(const Batch& batch, const char* what) {
  const int n = batch.valid_count();
  if (n == 0) throw std::invalid_argument(std::string(what) + ": empty valid mask");
  return n;
}

ValueContext target_context(const Model& model, const Batch& batch) {
  const int L = batch.length, B = batch.size, K = batch.agents();
  Tape tape;
  ValueRun run = run_value(tape, model, model.value_target, batch, L + 1);
  ValueContext ctx;
  ctx.v_next.resize(L, B);
  ctx.target_hidden.resize(static_cast<Eigen::Index>(L) * B * K, model.config.hidden_dim);
  for (int t = 0; t < L; ++t) {
    ctx.v_next.row(t) = run.totals[t + 1].value().col(0).transpose();
    ctx.target_hidden.middleRows(static_cast<Eigen::Index>(t) * B * K, B * K) = run.hiddens[t].value();
  }
  return ctx;
}

Mat stacked_targets(const Batch& batch) {
  const int L = batch.length, B = batch.size;
  Mat target(static_cast<Eigen::Index>(L) * B, batch.task.state_dim());
  for (int t = 0; t < L; ++t) target.middleRows(static_cast<Eigen::Index>(t) * B, B) = batch.states[t + 1];
  return target;
}

struct PlannerPieces {
  Var skills;
  nn::Prediction pred;
  Var sq;  // L * B x state_dim squared residuals
};

PlannerPieces planner_forward(Tape& tape, const Model& model, const Batch& batch) {
  PlannerPieces p;
  p.skills = common_skills(tape, model, batch);
  p.pred = model.predictor(tape, model.predictor_params, p.skills, batch.agents(), batch.task.n_enemies);
  p.sq = nn::square(nn::sub(p.pred.state, tape.constant(stacked_targets(batch))));
  return p;
}

Var target_value_of_local(Tape& tape, const Model& model, const Batch& batch, Var local,
                          const ValueContext& ctx) {
  nn::ValueInput in;
  in.local = local;
  return model.value(tape, model.value_target, in, tape.constant(ctx.target_hidden), batch.agents()).total;
}

double prediction_mean(const Var& sq, const Batch& batch, int n_valid) {
  const Mat v = flat(batch.valid);
  return 0.5 * (sq.value().rowwise().sum().array() * v.col(0).array()).sum() / n_valid;
}

}  // namespace

ValueContext value_context(const Model& model, const Batch& batch) {
  ValueContext ctx = target_context(model, batch);
  Tape tape;
  ValueRun online = run_value(tape, model, model.value_params, batch, batch.length);
  ctx.v_now.resize(batch.length, batch.size);
  for (int t = 0; t < batch.length; ++t) ctx.v_now.row(t) = online.totals[t].value().col(0).transpose();
  return ctx;
}

Var value_loss(Tape& tape, const Model& model, const Batch& batch, const LossConfig& cfg,
               ValueContext* ctx_out) {
  const int n_valid = require_valid(batch, "value_loss");
  const int L = batch.length, B = batch.size;
  ValueContext ctx = target_context(model, batch);
  ValueRun online = run_value(tape, model, model.value_params, batch, L);
  Var v = nn::concat_rows(online.totals);

  Mat y(L, B);
  y.array() = batch.reward.array() + cfg.gamma * (1.0 - batch.done.array()) * ctx.v_next.array();
  Var residual = nn::sub(tape.constant(flat(y)), v);
  Var loss = nn::weighted_sum(nn::expectile(residual, cfg.epsilon_expectile),
                              flat(batch.valid) / static_cast<double>(n_valid));
  if (ctx_out != nullptr) {
    ctx.v_now = Mat::Map(v.value().data(), L, B);
    *ctx_out = std::move(ctx);
  }
  return loss;
}

Var common_skills(Tape& tape, const Model& model, const Batch& batch) {
  const int G = batch.size * batch.agents();
  Var h = tape.constant(Mat::Zero(G, model.config.hidden_dim));
  std::vector<Var> skills;
  for (int t = 0; t < batch.length; ++t) {
    nn::SkillStep s = model.encoder(tape, model.encoder_params, batch.frames[t], h);
    skills.push_back(s.skill);
    h = s.hidden;
  }
  return nn::concat_rows(skills);
}

Var planner_loss(Tape& tape, const Model& model, const Batch& batch, const LossConfig& cfg,
                 const ValueContext& ctx, PlannerStats* stats, const Mat* fixed_weights) {
  const int n_valid = require_valid(batch, "planner_loss");
  const int L = batch.length, B = batch.size;
  PlannerPieces p = planner_forward(tape, model, batch);

  Mat v_next(L, B);
  if (fixed_weights != nullptr) {
    if (fixed_weights->rows() != L || fixed_weights->cols() != B) {
      throw std::invalid_argument("planner_loss: fixed weights have the wrong shape");
    }
  } else if (cfg.advantage_source == AdvantageSource::predicted) {
    Var local = tape.constant(p.pred.local.value());  // weights are stop-gradient
    v_next = Mat::Map(target_value_of_local(tape, model, batch, local, ctx).value().data(), L, B);
  } else {
    v_next = ctx.v_next;
  }

  Mat row_w(static_cast<Eigen::Index>(L) * B, 1);
  Mat weights(L, B);
  double weight_sum = 0.0;
  for (int t = 0; t < L; ++t) {
    for (int b = 0; b < B; ++b) {
      const double w = fixed_weights != nullptr
                           ? (*fixed_weights)(t, b)
                           : advantage_weight(batch.reward(t, b), v_next(t, b), ctx.v_now(t, b),
                                              cfg, batch.done(t, b) > 0.5);
      weights(t, b) = w;
      const double valid = batch.valid(t, b);
      row_w(t * B + b, 0) = 0.5 * w * valid / n_valid;
      weight_sum += w * valid;
    }
  }
  const Mat W = row_w.replicate(1, p.sq.cols());
  Var loss = nn::weighted_sum(p.sq, W);
  if (stats != nullptr) {
    stats->skills = p.skills.value();
    stats->weights = weights;
    stats->mean_weight = weight_sum / n_valid;
    stats->prediction = prediction_mean(p.sq, batch, n_valid);
  }
  return loss;
}

Var planner_loss_explicit(Tape& tape, const Model& model, const Batch& batch, const LossConfig& cfg,
                          const ValueContext& ctx, PlannerStats* stats) {
  const int n_valid = require_valid(batch, "planner_loss_explicit");
  PlannerPieces p = planner_forward(tape, model, batch);
  Var v_local = target_value_of_local(tape, model, batch, p.pred.local, ctx);
  const Mat valid = flat(batch.valid) / static_cast<double>(n_valid);
  Var value_term = nn::weighted_sum(v_local, -valid);
  Var pred_term = nn::weighted_sum(p.sq, (0.5 * cfg.alpha) * valid.replicate(1, p.sq.cols()));
  if (stats != nullptr) {
    stats->skills = p.skills.value();
    stats->mean_weight = 1.0;
    stats->prediction = prediction_mean(p.sq, batch, n_valid);
  }
  return nn::add(value_term, pred_term);
}

Mat momentum_keys(const Model& model, const nn::ObsBatch& obs) {
  Tape tape;
  return model.task_encoder(tape, model.task_momentum, obs).value();
}

Var controller_loss(Tape& tape, const Model& model, const Batch& batch, const Mat& skills,
                    const Mat& negatives, const LossConfig& cfg, std::uint64_t pair_seed,
                    ControllerStats* stats) {
  const int n_valid = require_valid(batch, "controller_loss");
  const int L = batch.length, B = batch.size, K = batch.agents();
  const int G = B * K;
  if (skills.rows() != static_cast<Eigen::Index>(L) * G) {
    throw std::invalid_argument("controller_loss: skill rows do not match the batch");
  }

  Var h = tape.constant(Mat::Zero(G, model.config.hidden_dim));
  std::vector<Var> zs, logits;
  Mat masks(static_cast<Eigen::Index>(L) * G, batch.task.n_actions());
  std::vector<int> actions;
  Mat nll_w(static_cast<Eigen::Index>(L) * G, 1);
  for (int t = 0; t < L; ++t) {
    Var z = model.task_encoder(tape, model.task_params, batch.frames[t]);
    Var c = tape.constant(skills.middleRows(static_cast<Eigen::Index>(t) * G, G));
    nn::DecoderStep step = model.decoder(tape, model.decoder_params, batch.frames[t], c, z, h);
    h = step.hidden;
    zs.push_back(z);
    logits.push_back(step.logits);
    masks.middleRows(static_cast<Eigen::Index>(t) * G, G) = batch.masks[t];
    actions.insert(actions.end(), batch.actions[t].begin(), batch.actions[t].end());
    for (int b = 0; b < B; ++b) {
      for (int k = 0; k < K; ++k) {
        nll_w(static_cast<Eigen::Index>(t) * G + b * K + k, 0) =
            -batch.valid(t, b) / (static_cast<double>(n_valid) * K);
      }
    }
  }
  Var logp = nn::masked_log_softmax(nn::concat_rows(logits), masks);
  Var nll = nn::weighted_sum(nn::pick(logp, actions), nll_w);
  if (stats != nullptr) stats->nll = nll.scalar();
  if (cfg.beta == 0.0) return nll;

  if (negatives.rows() == 0) throw std::invalid_argument("contrastive negatives unavailable");
  Rng rng(pair_seed);
  std::vector<int> query_rows, key_rows;
  std::vector<int> alive;
  for (int t = 0; t < L; ++t) {
    for (int b = 0; b < B; ++b) {
      if (batch.valid(t, b) == 0.0) continue;
      alive.clear();
      for (int k = 0; k < K; ++k) {
        if (batch.alive(t, b * K + k) > 0.5) alive.push_back(k);
      }
      if (alive.size() < 2) continue;
      const std::size_t i = uniform_index(rng, alive.size());
      std::size_t j = uniform_index(rng, alive.size() - 1);
      if (j >= i) ++j;
      query_rows.push_back(t * G + b * K + alive[i]);
      key_rows.push_back(t * G + b * K + alive[j]);
    }
  }
  if (query_rows.empty()) {
    throw std::invalid_argument("controller_loss: no step has two alive agents");
  }
  const Mat keys = momentum_keys(model, batch.stacked_frames().gather(key_rows));
  Var q = nn::gather_rows(nn::concat_rows(zs), query_rows);
  Var lc = contrastive_loss(q, keys, negatives, cfg.sigma_temp);
  if (stats != nullptr) {
    stats->contrastive = lc.scalar();
    stats->pairs = static_cast<int>(query_rows.size());
  }
  return nn::add(nll, nn::scale(lc, cfg.beta));
}

}  // namespace hissd::loss
