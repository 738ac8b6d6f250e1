// hissd: dataset generation, training, evaluation, skill export and the
// verification suite.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hissd/checkpoint.hpp"
#include "hissd/config.hpp"
#include "hissd/datagen.hpp"
#include "hissd/eval.hpp"
#include "hissd/oracle.hpp"
#include "hissd/trainer.hpp"

namespace fs = std::filesystem;
using namespace hissd;

namespace {

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kMissingFile = 2,
  kBadConfig = 3,
  kModeTaskMismatch = 4,
  kVerifyFailed = 5,
};

struct MissingFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ModeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::string out;
  int worlds = 100;
};

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw MissingFile(what + " '" + p.string() + "' not found");
}

cli::RunConfig resolve(const Options& o) {
  cli::RunConfig c;
  if (!o.config.empty()) {
    require_file(o.config, "config");
    c = cli::load_config(o.config);
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.out_dir = o.out;
  fs::create_directories(c.out_dir);
  cli::write_config(c, fs::path(c.out_dir) / "config.json");
  return c;
}

fs::path checkpoint_path(const Options& o, const cli::RunConfig& c) {
  return o.checkpoint.empty() ? fs::path(c.out_dir) / "checkpoint.bin" : fs::path(o.checkpoint);
}

int cmd_gen_data(const Options& o) {
  const cli::RunConfig c = resolve(o);
  for (std::size_t i = 0; i < c.source_tasks.size(); ++i) {
    const env::TaskSpec& spec = c.source_tasks[i];
    std::optional<double> eps;
    if (c.quality != data::Quality::expert) {
      const data::Calibration cal =
          data::calibrate_medium(spec, substream(c.seed, "calibrate", i), c.calibration_target,
                                 c.calibration_tolerance, c.calibration_episodes);
      eps = cal.epsilon;
      std::printf("%s: medium epsilon %.4f (win rate %.3f, expert %.3f)\n", spec.name.c_str(),
                  cal.epsilon, cal.win_rate, cal.expert_win_rate);
    }
    const data::Dataset ds =
        data::generate(spec, c.quality, c.episodes_per_task, substream(c.seed, "datagen", i), eps);
    const fs::path path = c.dataset_path(i);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    data::save(ds, path);
    std::printf("%s: %d %s episodes, win rate %.3f, mean return %.3f -> %s\n", spec.name.c_str(),
                ds.meta.n_episodes, data::to_string(ds.meta.quality).c_str(), ds.meta.win_rate,
                ds.meta.mean_return, path.string().c_str());
  }
  return kOk;
}

int cmd_train(const Options& o) {
  const cli::RunConfig c = resolve(o);
  const train::TrainConfig tc = c.effective_train();
  if (tc.mode != train::Mode::bc && c.source_tasks.size() < 2) {
    throw ModeMismatch("contrastive negatives unavailable: mode " + train::to_string(tc.mode) +
                       " needs at least 2 source tasks");
  }
  std::vector<data::Dataset> datasets;
  for (std::size_t i = 0; i < c.source_tasks.size(); ++i) {
    const fs::path p = c.dataset_path(i);
    require_file(p, "dataset");
    datasets.push_back(data::load(p));
    if (!(datasets.back().meta.task == c.source_tasks[i])) {
      throw ModeMismatch("dataset '" + p.string() + "' holds task " + datasets.back().meta.task.name +
                         ", config expects " + c.source_tasks[i].name);
    }
  }
  train::TrainOutputs out;
  out.metrics_path = fs::path(c.out_dir) / "metrics.jsonl";
  out.checkpoint_path = checkpoint_path(o, c);
  out.config_echo = cli::to_json(c);
  out.on_record = [](const train::MetricsRecord& r) {
    std::printf("step %ld  value %.5f  planner %.5f  controller %.5f  contrastive %.5f  weight %.4f\n",
                r.step, r.value_loss, r.planner_loss, r.controller_loss, r.contrastive, r.mean_weight);
    std::fflush(stdout);
  };
  try {
    train::train(datasets, tc, out);
  } catch (const std::invalid_argument& e) {
    if (std::string(e.what()).find("contrastive negatives unavailable") != std::string::npos) {
      throw ModeMismatch(e.what());
    }
    throw;
  }
  std::printf("checkpoint -> %s\n", out.checkpoint_path->string().c_str());
  return kOk;
}

std::vector<env::TaskSpec> all_eval_tasks(const cli::RunConfig& c) {
  std::vector<env::TaskSpec> specs = c.source_tasks;
  for (const auto& t : c.eval_tasks) {
    bool dup = false;
    for (const auto& s : specs) dup = dup || s.name == t.name;
    if (!dup) specs.push_back(t);
  }
  return specs;
}

int cmd_eval(const Options& o) {
  const cli::RunConfig c = resolve(o);
  const fs::path ck_path = checkpoint_path(o, c);
  require_file(ck_path, "checkpoint");
  const train::LoadedCheckpoint ck = train::load_checkpoint(ck_path);
  eval::SkillPolicy policy(*ck.model, true);
  std::vector<std::string> seen;
  for (const auto& t : c.source_tasks) seen.push_back(t.name);
  eval::EvalReport report =
      eval::evaluate(policy, all_eval_tasks(c), c.eval_episodes, substream(c.seed, "eval"), seen);
  report.checkpoint = ck_path.filename().string() + "@" + std::to_string(ck.step);
  const std::string table = report.table();
  std::cout << table;
  std::ofstream(fs::path(c.out_dir) / "eval.txt") << table;
  std::ofstream(fs::path(c.out_dir) / "eval.json") << report.to_json().dump(2) << '\n';
  return kOk;
}

int cmd_export_skills(const Options& o) {
  const cli::RunConfig c = resolve(o);
  const fs::path ck_path = checkpoint_path(o, c);
  require_file(ck_path, "checkpoint");
  const train::LoadedCheckpoint ck = train::load_checkpoint(ck_path);
  const fs::path out = fs::path(c.out_dir) / "skills.csv";
  eval::export_skills(*ck.model, all_eval_tasks(c), c.export_episodes, substream(c.seed, "export"), out);
  std::printf("skills -> %s\n", out.string().c_str());
  return kOk;
}

int cmd_verify(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(0);
  Rng rng(substream(seed, "verify"));
  int held = 0;
  double worst_lower = INFINITY, worst_upper = INFINITY;
  for (int i = 0; i < o.worlds; ++i) {
    const oracle::Theorem1Result r = oracle::theorem1_check(oracle::random_world(rng));
    held += r.holds ? 1 : 0;
    worst_lower = std::min(worst_lower, r.lower_margin());
    worst_upper = std::min(worst_upper, r.upper_margin());
  }
  std::printf("theorem: %d/%d hold (worst lower margin %.3e, worst upper margin %.3e)\n", held,
              o.worlds, worst_lower, worst_upper);

  bool ok = held == o.worlds;
  const oracle::Theorem1Result u = oracle::theorem1_check(oracle::uniform_world(3, 4));
  const bool tight = std::abs(u.lhs - u.rhs - std::log(3.0)) < 1e-12;
  std::printf("uniform world: lhs - rhs = %.15f (ln 3 = %.15f) %s\n", u.lhs - u.rhs, std::log(3.0),
              tight ? "ok" : "FAIL");
  ok = ok && tight;

  double worst_expectile = 0.0;
  for (int set = 0; set < 20; ++set) {
    std::vector<double> samples(2 + uniform_index(rng, 30));
    for (double& s : samples) s = 10.0 * normal(rng);
    for (double eps : {0.1, 0.5, 0.9}) {
      const oracle::ExpectileCheck e = oracle::expectile_identity_check(samples, eps);
      worst_expectile = std::max(worst_expectile, std::abs(e.minimizer - e.reference));
    }
  }
  const bool exp_ok = worst_expectile < 1e-6;
  std::printf("expectile identity: worst gap %.3e %s\n", worst_expectile, exp_ok ? "ok" : "FAIL");
  ok = ok && exp_ok;

  nn::ParamStore p("quadratic");
  p.add("x", nn::Mat::Random(3, 4));
  const oracle::GradcheckResult g = oracle::gradcheck(
      [&](nn::Tape& t) {
        nn::Var x = t.param(p, 0);
        return nn::weighted_sum(nn::square(x), nn::Mat::Constant(3, 4, 0.5));
      },
      {&p});
  const bool grad_ok = g.max_rel_error < 1e-8;
  std::printf("gradcheck on a quadratic: max relative error %.3e %s\n", g.max_rel_error,
              grad_ok ? "ok" : "FAIL");
  ok = ok && grad_ok;
  std::printf("%s\n", ok ? "verify: all checks pass" : "verify: FAILED");
  return ok ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline multi-task multi-agent skill learning on a grid battle environment"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub, bool needs_checkpoint) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--seed", o.seed, "global seed (overrides the config)");
    sub->add_option("--out", o.out, "output directory (overrides the config)");
    if (needs_checkpoint) sub->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  };
  CLI::App* gen = app.add_subcommand("gen-data", "generate the configured offline datasets");
  common(gen, false);
  CLI::App* tr = app.add_subcommand("train", "train in the configured mode");
  common(tr, true);
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on source and unseen tasks");
  common(ev, true);
  CLI::App* ex = app.add_subcommand("export-skills", "write per-agent skill vectors as CSV");
  common(ex, true);
  CLI::App* ve = app.add_subcommand("verify", "run the numerical verification suite");
  ve->add_option("--seed", o.seed, "seed for the random worlds");
  ve->add_option("--worlds", o.worlds, "number of random worlds")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(o);
    if (tr->parsed()) return cmd_train(o);
    if (ev->parsed()) return cmd_eval(o);
    if (ex->parsed()) return cmd_export_skills(o);
    if (ve->parsed()) return cmd_verify(o);
  } catch (const MissingFile& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissingFile;
  } catch (const cli::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadConfig;
  } catch (const ModeMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kModeTaskMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
