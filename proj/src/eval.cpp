#include "hissd/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace hissd::eval {

int masked_argmax(const double* logits, const std::vector<bool>& mask) {
  int best = -1;
  for (std::size_t a = 0; a < mask.size(); ++a) {
    if (!mask[a]) continue;
    if (best < 0 || logits[a] > logits[best]) best = static_cast<int>(a);
  }
  if (best < 0) throw std::invalid_argument("no legal action");
  return best;
}

int masked_sample(const double* logits, const std::vector<bool>& mask, Rng& rng) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < mask.size(); ++a) {
    if (mask[a]) m = std::max(m, logits[a]);
  }
  if (!std::isfinite(m)) throw std::invalid_argument("no legal action");
  std::vector<double> p(mask.size(), 0.0);
  double sum = 0.0;
  for (std::size_t a = 0; a < mask.size(); ++a) {
    if (mask[a]) sum += p[a] = std::exp(logits[a] - m);
  }
  double u = uniform01(rng) * sum;
  int last = 0;
  for (std::size_t a = 0; a < mask.size(); ++a) {
    if (!mask[a]) continue;
    last = static_cast<int>(a);
    if (u < p[a]) return last;
    u -= p[a];
  }
  return last;
}

SkillPolicy::SkillPolicy(const nn::Model& model, bool greedy) : model_(model), greedy_(greedy) {}

void SkillPolicy::begin_episode(const env::TaskSpec& spec, std::uint64_t seed) {
  spec_ = spec;
  rng_.seed(substream(seed, "policy"));
  h_encoder_ = nn::Mat::Zero(spec.n_allies, model_.config.hidden_dim);
  h_decoder_ = nn::Mat::Zero(spec.n_allies, model_.config.hidden_dim);
}

std::vector<int> SkillPolicy::act(const StepView& view) {
  const auto& obs = *view.observations;
  const auto& masks = *view.masks;
  const int K = spec_.n_allies;
  if (static_cast<int>(obs.size()) != K || static_cast<int>(masks.size()) != K) {
    throw std::invalid_argument("policy input does not match the task");
  }
  // One group per agent: attention never mixes agents, so this batched pass
  // equals K independent per-agent passes.
  const nn::ObsBatch batch = nn::ObsBatch::from_observations(obs, K, spec_.n_enemies);
  nn::Tape tape;
  nn::SkillStep s = model_.encoder(tape, model_.encoder_params, batch, tape.constant(h_encoder_));
  nn::Var z = model_.task_encoder(tape, model_.task_params, batch);
  nn::DecoderStep d = model_.decoder(tape, model_.decoder_params, batch, s.skill, z,
                                     tape.constant(h_decoder_));
  h_encoder_ = s.hidden.value();
  h_decoder_ = d.hidden.value();
  last_c_ = s.skill.value();
  last_z_ = z.value();

  const nn::Mat& logits = d.logits.value();
  std::vector<int> actions(K);
  for (int k = 0; k < K; ++k) {
    const double* row = logits.data() + static_cast<Eigen::Index>(k) * logits.cols();
    actions[k] = greedy_ ? masked_argmax(row, masks[k]) : masked_sample(row, masks[k], rng_);
  }
  return actions;
}

std::vector<int> ScriptedPolicy::act(const StepView& view) {
  if (view.env == nullptr) throw std::logic_error("scripted policy needs the environment");
  return policy_(*view.env);
}

RolloutResult rollout(Policy& policy, const env::TaskSpec& spec, std::uint64_t seed) {
  env::GridBattle env(spec);
  env::StepResult sr = env.reset(seed);
  policy.begin_episode(spec, seed);
  RolloutResult res;
  std::vector<std::vector<bool>> masks(spec.n_allies);
  while (!sr.done) {
    for (int k = 0; k < spec.n_allies; ++k) masks[k] = env.available_actions(k);
    StepView view;
    view.observations = &sr.observations;
    view.masks = &masks;
    if (policy.needs_env()) view.env = &env;
    std::vector<int> actions = policy.act(view);
    sr = env.step(actions);
    res.actions.push_back(std::move(actions));
    res.rewards.push_back(sr.reward);
    res.ret += sr.reward;
  }
  res.won = sr.won;
  res.coerced = env.state().coerced_actions;
  return res;
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& stddev) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  stddev = std::sqrt(var / static_cast<double>(v.size()));
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

void append_number(std::string& out, double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, r.ptr);
}

}  // namespace

EvalReport evaluate(Policy& policy, const std::vector<env::TaskSpec>& specs, int episodes,
                    std::uint64_t base_seed, const std::vector<std::string>& seen_tasks) {
  if (episodes < 1) throw std::invalid_argument("episodes must be at least 1");
  EvalReport report;
  report.seed = base_seed;
  for (const auto& spec : specs) {
    TaskReport row;
    row.task = spec.name;
    row.seen = std::find(seen_tasks.begin(), seen_tasks.end(), spec.name) != seen_tasks.end();
    row.episodes = episodes;
    std::vector<double> wins, returns;
    for (int i = 0; i < episodes; ++i) {
      RolloutResult r = rollout(policy, spec, base_seed + static_cast<std::uint64_t>(i));
      wins.push_back(r.won ? 1.0 : 0.0);
      returns.push_back(r.ret);
      row.coerced += r.coerced;
    }
    mean_std(wins, row.win_rate, row.win_std);
    mean_std(returns, row.return_mean, row.return_std);
    report.tasks.push_back(row);
  }
  return report;
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << "checkpoint " << (checkpoint.empty() ? "-" : checkpoint) << "  seed " << seed << '\n';
  os << "task      split   episodes  win_rate          return\n";
  for (const auto& t : tasks) {
    std::string name = t.task;
    name.resize(std::max<std::size_t>(name.size(), 9), ' ');
    std::string split = t.seen ? "seen   " : "unseen ";
    os << name << ' ' << split << ' ' << t.episodes << "        " << fixed(t.win_rate, 3) << " +- "
       << fixed(t.win_std, 3) << "   " << fixed(t.return_mean, 2) << " +- " << fixed(t.return_std, 2)
       << '\n';
  }
  return os.str();
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& t : tasks) {
    rows.push_back({{"task", t.task},
                    {"seen", t.seen},
                    {"episodes", t.episodes},
                    {"win_rate", t.win_rate},
                    {"win_rate_std", t.win_std},
                    {"return_mean", t.return_mean},
                    {"return_std", t.return_std},
                    {"coerced_actions", t.coerced}});
  }
  return {{"checkpoint", checkpoint}, {"seed", seed}, {"tasks", rows}};
}

int time_window(int t, int length) {
  if (length < 1 || t < 0 || t >= length) throw std::out_of_range("time_window: t outside the episode");
  return 1 + (4 * t) / length;
}

void export_skills(const nn::Model& model, const std::vector<env::TaskSpec>& specs, int episodes,
                   std::uint64_t base_seed, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write skill export '" + path.string() + "'");
  const int D = model.config.skill_dim;
  out << "task,episode,timestep,time_window,agent,alive";
  for (int i = 0; i < D; ++i) out << ",c" << i;
  for (int i = 0; i < D; ++i) out << ",z" << i;
  out << '\n';

  SkillPolicy policy(model, true);
  for (const auto& spec : specs) {
    for (int e = 0; e < episodes; ++e) {
      const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(e);
      env::GridBattle env(spec);
      env::StepResult sr = env.reset(seed);
      policy.begin_episode(spec, seed);
      std::vector<std::vector<bool>> masks(spec.n_allies);
      std::vector<nn::Mat> cs, zs;
      std::vector<std::vector<double>> alive;
      while (!sr.done) {
        for (int k = 0; k < spec.n_allies; ++k) masks[k] = env.available_actions(k);
        StepView view{&sr.observations, &masks, nullptr};
        std::vector<int> actions = policy.act(view);
        cs.push_back(policy.last_common());
        zs.push_back(policy.last_task());
        std::vector<double> a;
        for (const auto& o : sr.observations) a.push_back(o.own[3]);
        alive.push_back(std::move(a));
        sr = env.step(actions);
      }
      const int length = static_cast<int>(cs.size());
      std::string line;
      for (int t = 0; t < length; ++t) {
        for (int k = 0; k < spec.n_allies; ++k) {
          line = spec.name + "," + std::to_string(e) + "," + std::to_string(t) + "," +
                 std::to_string(time_window(t, length)) + "," + std::to_string(k) + "," +
                 (alive[t][k] > 0.5 ? "1" : "0");
          for (int i = 0; i < D; ++i) {
            line += ',';
            append_number(line, cs[t](k, i));
          }
          for (int i = 0; i < D; ++i) {
            line += ',';
            append_number(line, zs[t](k, i));
          }
          out << line << '\n';
        }
      }
    }
  }
  if (!out) throw std::runtime_error("failed writing skill export '" + path.string() + "'");
}

}  // namespace hissd::eval
