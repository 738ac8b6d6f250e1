#include <filesystem>
#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include <unistd.h>

#include "hissd/trainer.hpp"
#include "toy_batch.hpp"

namespace hissd::train {
namespace {

namespace fs = std::filesystem;

const std::vector<data::Dataset>& datasets() {
  static const std::vector<data::Dataset> ds = {
      hissd::testing::toy_dataset(env::make_task(2, 2), 6, 6, 1),
      hissd::testing::toy_dataset(env::make_task(3, 2), 6, 6, 2),
      hissd::testing::toy_dataset(env::make_task(2, 3), 6, 6, 3),
  };
  return ds;
}

TrainConfig small(Mode mode, long steps = 6) {
  TrainConfig c;
  c.steps = steps;
  c.batch = 2;
  c.lr = 1e-3;
  c.log_every = 3;
  c.mode = mode;
  c.net = hissd::testing::tiny_config();
  c.seed = 4;
  return c;
}

std::vector<std::uint64_t> hashes(const nn::Model& m) {
  std::vector<std::uint64_t> h;
  for (const nn::ParamStore* s : m.stores()) h.push_back(s->hash());
  return h;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hissd_trainer_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

TEST(TrainConfig, Validation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  TrainConfig c;
  c.steps = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.target_rate = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.loss.beta = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(mode_from_string("hissd_explicit"), Mode::hissd_explicit);
  EXPECT_EQ(to_string(Mode::hissd_no_planner), "hissd_no_planner");
  EXPECT_THROW(mode_from_string("dqn"), std::invalid_argument);
  EXPECT_EQ(to_json(c)["mode"], "hissd");
}

TEST(Train, DeterministicForAFixedSeed) {
  const TrainResult a = train(datasets(), small(Mode::hissd));
  const TrainResult b = train(datasets(), small(Mode::hissd));
  EXPECT_EQ(hashes(*a.model), hashes(*b.model));
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    EXPECT_EQ(a.metrics[i].to_json(), b.metrics[i].to_json());
  }
  TrainConfig other = small(Mode::hissd);
  other.seed = 5;
  EXPECT_NE(hashes(*train(datasets(), other).model), hashes(*a.model));
}

TEST(Train, EveryStoreMovesInFullMode) {
  const TrainConfig cfg = small(Mode::hissd);
  const nn::Model init(cfg.net, substream(cfg.seed, "init"));
  const TrainResult r = train(datasets(), cfg);
  const auto before = hashes(init), after = hashes(*r.model);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NE(before[i], after[i]) << init.stores()[i]->name();
  // The shadows lag the online parameters.
  EXPECT_NE(r.model->value_target.hash(), r.model->value_params.hash());
  EXPECT_NE(r.model->task_momentum.hash(), r.model->task_params.hash());
  for (const MetricsRecord& m : r.metrics) {
    EXPECT_GT(m.value_loss, 0.0);
    EXPECT_GT(m.planner_loss, 0.0);
    EXPECT_GT(m.contrastive, 0.0);
    EXPECT_GT(m.mean_weight, 0.0);
  }
}

TEST(Train, BehaviourCloningTouchesOnlyTheController) {
  const TrainConfig cfg = small(Mode::bc);
  const nn::Model init(cfg.net, substream(cfg.seed, "init"));
  const TrainResult r = train(datasets(), cfg);
  const nn::Model& m = *r.model;
  EXPECT_EQ(m.encoder_params.hash(), init.encoder_params.hash());
  EXPECT_EQ(m.predictor_params.hash(), init.predictor_params.hash());
  EXPECT_EQ(m.value_params.hash(), init.value_params.hash());
  EXPECT_EQ(m.value_target.hash(), init.value_target.hash());
  EXPECT_EQ(m.task_momentum.hash(), init.task_momentum.hash());
  EXPECT_NE(m.decoder_params.hash(), init.decoder_params.hash());
  for (const MetricsRecord& rec : r.metrics) {
    EXPECT_EQ(rec.value_loss, 0.0);
    EXPECT_EQ(rec.planner_loss, 0.0);
    EXPECT_EQ(rec.contrastive, 0.0);
    EXPECT_GT(rec.controller_loss, 0.0);
  }
}

TEST(Train, NoPlannerModeFreezesPlannerAndValue) {
  const TrainConfig cfg = small(Mode::hissd_no_planner);
  const nn::Model init(cfg.net, substream(cfg.seed, "init"));
  const TrainResult r = train(datasets(), cfg);
  EXPECT_EQ(r.model->encoder_params.hash(), init.encoder_params.hash());
  EXPECT_EQ(r.model->value_params.hash(), init.value_params.hash());
  EXPECT_NE(r.model->task_momentum.hash(), init.task_momentum.hash());
  EXPECT_NE(r.model->task_params.hash(), init.task_params.hash());
}

TEST(Train, ExplicitModeRuns) {
  const TrainResult r = train(datasets(), small(Mode::hissd_explicit));
  for (const MetricsRecord& rec : r.metrics) EXPECT_EQ(rec.mean_weight, 1.0);
}

TEST(Train, SingleTaskNeedsBehaviourCloning) {
  const std::vector<data::Dataset> one = {datasets()[0]};
  for (Mode m : {Mode::hissd, Mode::hissd_no_planner, Mode::hissd_explicit}) {
    try {
      train(one, small(m));
      FAIL() << to_string(m);
    } catch (const std::invalid_argument& e) {
      EXPECT_STREQ(e.what(), "contrastive negatives unavailable");
    }
  }
  EXPECT_NO_THROW(train(one, small(Mode::bc)));
  EXPECT_THROW(train({}, small(Mode::bc)), std::invalid_argument);
  TrainConfig big = small(Mode::bc);
  big.batch = 7;
  EXPECT_THROW(train(datasets(), big), std::invalid_argument);
}

TEST(Train, TasksAreDrawnUniformly) {
  TrainConfig cfg = small(Mode::bc, 900);
  cfg.batch = 1;
  cfg.log_every = 900;
  const TrainResult r = train(datasets(), cfg);
  ASSERT_EQ(r.task_draws.size(), 3u);
  const double p = 1.0 / 3, mean = 900 * p, sd = std::sqrt(900 * p * (1 - p));
  long total = 0;
  for (long d : r.task_draws) {
    EXPECT_NEAR(d, mean, 4.5 * sd);
    total += d;
  }
  EXPECT_EQ(total, 900);
}

TEST(Train, ImitationLossFalls) {
  TrainConfig cfg = small(Mode::bc, 240);
  cfg.lr = 3e-3;
  cfg.log_every = 40;
  const TrainResult r = train(datasets(), cfg);
  ASSERT_EQ(r.metrics.size(), 6u);
  EXPECT_LT(r.metrics.back().controller_loss, r.metrics.front().controller_loss);
}

TEST(Train, WritesMetricsAndCheckpoint) {
  const fs::path metrics = scratch("metrics.jsonl");
  const fs::path ckpt = scratch("ck.bin");
  TrainConfig cfg = small(Mode::hissd, 7);
  TrainOutputs out;
  out.metrics_path = metrics;
  out.checkpoint_path = ckpt;
  out.config_echo = {{"note", "unit"}};
  int callbacks = 0;
  out.on_record = [&](const MetricsRecord&) { ++callbacks; };
  const TrainResult r = train(datasets(), cfg, out);
  // Records at steps 3, 6 and the final step 7.
  ASSERT_EQ(r.metrics.size(), 3u);
  EXPECT_EQ(r.metrics[2].step, 7);
  EXPECT_EQ(callbacks, 3);
  std::ifstream in(metrics);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["step"], r.metrics[lines].step);
    EXPECT_TRUE(j.contains("controller_loss"));
    ++lines;
  }
  EXPECT_EQ(lines, 3);
  ASSERT_TRUE(fs::exists(ckpt));
  fs::remove_all(metrics.parent_path());
}

}  // namespace
}  // namespace hissd::train
