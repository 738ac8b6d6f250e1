#include "hissd/trainer.hpp"

#include <fstream>
#include <stdexcept>

#include "hissd/batching.hpp"
#include "hissd/checkpoint.hpp"
#include "hissd/optim.hpp"
#include "hissd/rng.hpp"

namespace hissd::train {

std::string to_string(Mode m) {
  switch (m) {
    case Mode::hissd: return "hissd";
    case Mode::bc: return "bc";
    case Mode::hissd_no_planner: return "hissd_no_planner";
    case Mode::hissd_explicit: return "hissd_explicit";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  if (s == "hissd") return Mode::hissd;
  if (s == "bc") return Mode::bc;
  if (s == "hissd_no_planner") return Mode::hissd_no_planner;
  if (s == "hissd_explicit") return Mode::hissd_explicit;
  throw std::invalid_argument("unknown training mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("steps must be at least 1");
  if (batch < 1) throw std::invalid_argument("batch must be at least 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be nonnegative");
  if (!(target_rate > 0.0 && target_rate <= 1.0)) throw std::invalid_argument("target_rate must lie in (0, 1]");
  if (!(momentum_rate > 0.0 && momentum_rate <= 1.0)) {
    throw std::invalid_argument("momentum_rate must lie in (0, 1]");
  }
  if (negatives_per_task < 1) throw std::invalid_argument("negatives_per_task must be at least 1");
  if (log_every < 1) throw std::invalid_argument("log_every must be at least 1");
  loss.validate();
  net.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch", c.batch},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"target_rate", c.target_rate},
          {"momentum_rate", c.momentum_rate},
          {"negatives_per_task", c.negatives_per_task},
          {"log_every", c.log_every},
          {"seed", c.seed},
          {"mode", to_string(c.mode)}};
}

nlohmann::json MetricsRecord::to_json() const {
  return {{"step", step},
          {"value_loss", value_loss},
          {"planner_loss", planner_loss},
          {"controller_loss", controller_loss},
          {"contrastive", contrastive},
          {"mean_weight", mean_weight}};
}

namespace {

bool uses_contrastive(Mode m) { return m != Mode::bc; }
bool trains_value(Mode m) { return m == Mode::hissd || m == Mode::hissd_explicit; }

// Random observations of one task: episode, step and alive agent uniformly.
nn::ObsBatch sample_observations(const data::Dataset& ds, int count, Rng& rng) {
  std::vector<env::Observation> obs;
  std::vector<int> alive;
  for (int n = 0; n < count; ++n) {
    const auto& ep = ds.episodes[uniform_index(rng, ds.episodes.size())];
    const auto& step = ep.steps[uniform_index(rng, ep.steps.size())];
    alive.clear();
    for (std::size_t k = 0; k < step.observations.size(); ++k) {
      if (step.observations[k].own[3] > 0.5) alive.push_back(static_cast<int>(k));
    }
    const int k = alive.empty() ? static_cast<int>(uniform_index(rng, step.observations.size()))
                                : alive[uniform_index(rng, alive.size())];
    obs.push_back(step.observations[k]);
  }
  return nn::ObsBatch::from_observations(obs, ds.meta.task.n_allies, ds.meta.task.n_enemies);
}

}  // namespace

TrainResult train(const std::vector<data::Dataset>& datasets, const TrainConfig& cfg,
                  const TrainOutputs& outputs) {
  cfg.validate();
  if (datasets.empty()) throw std::invalid_argument("no training datasets");
  if (uses_contrastive(cfg.mode) && datasets.size() < 2) {
    throw std::invalid_argument("contrastive negatives unavailable");
  }
  for (const auto& ds : datasets) {
    if (static_cast<int>(ds.episodes.size()) < cfg.batch) {
      throw std::invalid_argument("dataset for " + ds.meta.task.name + " has fewer episodes than the batch size");
    }
  }

  TrainResult res;
  res.model = std::make_unique<nn::Model>(cfg.net, substream(cfg.seed, "init"));
  nn::Model& model = *res.model;
  res.task_draws.assign(datasets.size(), 0);

  nn::AdamConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  nn::Adam value_opt({&model.value_params}, adam);
  nn::Adam planner_opt({&model.encoder_params, &model.predictor_params}, adam);
  nn::Adam controller_opt({&model.decoder_params, &model.task_params}, adam);

  loss::LossConfig controller_cfg = cfg.loss;
  if (cfg.mode == Mode::bc) controller_cfg.beta = 0.0;

  Rng task_rng(substream(cfg.seed, "tasks"));
  Rng batch_rng(substream(cfg.seed, "batches"));
  Rng negative_rng(substream(cfg.seed, "negatives"));

  std::ofstream metrics_out;
  if (outputs.metrics_path) {
    metrics_out.open(*outputs.metrics_path);
    if (!metrics_out) throw std::runtime_error("cannot write metrics log '" + outputs.metrics_path->string() + "'");
  }

  MetricsRecord window;
  int window_steps = 0;
  for (long step = 1; step <= cfg.steps; ++step) {
    const std::size_t task = uniform_index(task_rng, datasets.size());
    ++res.task_draws[task];
    const data::Batch batch = data::sample_batch(datasets[task], cfg.batch, batch_rng);

    // 1. value
    loss::ValueContext ctx;
    if (trains_value(cfg.mode)) {
      nn::Tape tape;
      tape.track(model.value_params);
      nn::Var l = loss::value_loss(tape, model, batch, cfg.loss, &ctx);
      tape.backward(l);
      value_opt.step();
      value_opt.zero_grad();
      window.value_loss += l.scalar();
    }

    // 2. planner
    nn::Mat skills;
    if (trains_value(cfg.mode)) {
      nn::Tape tape;
      tape.track(model.encoder_params);
      tape.track(model.predictor_params);
      loss::PlannerStats stats;
      nn::Var l = cfg.mode == Mode::hissd_explicit
                      ? loss::planner_loss_explicit(tape, model, batch, cfg.loss, ctx, &stats)
                      : loss::planner_loss(tape, model, batch, cfg.loss, ctx, &stats);
      tape.backward(l);
      planner_opt.step();
      planner_opt.zero_grad();
      skills = std::move(stats.skills);
      window.planner_loss += l.scalar();
      window.mean_weight += stats.mean_weight;
    } else {
      nn::Tape tape;
      skills = loss::common_skills(tape, model, batch).value();
    }

    // 3. controller
    {
      nn::Mat negatives;
      if (controller_cfg.beta > 0.0) {
        std::vector<nn::Mat> parts;
        Eigen::Index rows = 0;
        for (std::size_t j = 0; j < datasets.size(); ++j) {
          if (j == task) continue;
          parts.push_back(loss::momentum_keys(
              model, sample_observations(datasets[j], cfg.negatives_per_task, negative_rng)));
          rows += parts.back().rows();
        }
        negatives.resize(rows, cfg.net.skill_dim);
        rows = 0;
        for (const auto& p : parts) {
          negatives.middleRows(rows, p.rows()) = p;
          rows += p.rows();
        }
      }
      nn::Tape tape;
      tape.track(model.decoder_params);
      tape.track(model.task_params);
      loss::ControllerStats stats;
      nn::Var l = loss::controller_loss(tape, model, batch, skills, negatives, controller_cfg,
                                        substream(cfg.seed, "pairs", static_cast<std::uint64_t>(step)),
                                        &stats);
      tape.backward(l);
      controller_opt.step();
      controller_opt.zero_grad();
      window.controller_loss += l.scalar();
      window.contrastive += stats.contrastive;
    }

    // 4. target and momentum copies
    if (trains_value(cfg.mode)) nn::ema_update(model.value_target, model.value_params, cfg.target_rate);
    if (uses_contrastive(cfg.mode)) nn::ema_update(model.task_momentum, model.task_params, cfg.momentum_rate);

    ++window_steps;
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      MetricsRecord rec;
      rec.step = step;
      rec.value_loss = window.value_loss / window_steps;
      rec.planner_loss = window.planner_loss / window_steps;
      rec.controller_loss = window.controller_loss / window_steps;
      rec.contrastive = window.contrastive / window_steps;
      rec.mean_weight = window.mean_weight / window_steps;
      res.metrics.push_back(rec);
      if (metrics_out.is_open()) metrics_out << rec.to_json().dump() << '\n' << std::flush;
      if (outputs.on_record) outputs.on_record(rec);
      window = MetricsRecord{};
      window_steps = 0;
    }
  }

  if (outputs.checkpoint_path) {
    save_checkpoint(model, cfg.steps, outputs.config_echo, *outputs.checkpoint_path);
  }
  return res;
}

}  // namespace hissd::train
