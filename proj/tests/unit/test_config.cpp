#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <unistd.h>

#include "hissd/config.hpp"

namespace hissd::cli {
namespace {

using nlohmann::json;

std::string error_of(const json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(RunConfig, EmptyObjectGivesDefaults) {
  const RunConfig c = config_from_json(json::object());
  EXPECT_EQ(c, RunConfig{});
  ASSERT_EQ(c.source_tasks.size(), 2u);
  EXPECT_EQ(c.source_tasks[1].name, "5v6");
  EXPECT_EQ(c.train.steps, 30000);
  EXPECT_EQ(c.train.batch, 32);
  EXPECT_EQ(c.train.net.hidden_dim, 64);
  EXPECT_DOUBLE_EQ(c.train.loss.beta, 0.05);
  EXPECT_EQ(c.quality, data::Quality::expert);
}

TEST(RunConfig, EchoReparsesToTheSameConfig) {
  const json in = {{"seed", 9},
                   {"source_tasks", {"2v2", {{"n_allies", 3}, {"n_enemies", 4}, {"max_steps", 40}}}},
                   {"eval_tasks", {"7v7"}},
                   {"quality", "medium_replay"},
                   {"train",
                    {{"steps", 100},
                     {"mode", "hissd_explicit"},
                     {"loss", {{"alpha", 2.5}, {"advantage_source", "dataset"}}},
                     {"net", {{"hidden_dim", 16}}}}}};
  const RunConfig a = config_from_json(in);
  EXPECT_EQ(a.seed, 9u);
  EXPECT_EQ(a.source_tasks[1].name, "3v4");
  EXPECT_EQ(a.source_tasks[1].max_steps, 40);
  EXPECT_EQ(a.train.mode, train::Mode::hissd_explicit);
  EXPECT_EQ(a.train.loss.advantage_source, loss::AdvantageSource::dataset);
  EXPECT_EQ(a.train.net.hidden_dim, 16);
  const RunConfig b = config_from_json(to_json(a));
  EXPECT_EQ(a, b);
  EXPECT_EQ(to_json(a), to_json(b));

  const auto path = std::filesystem::temp_directory_path() / ("hissd_cfg_" + std::to_string(::getpid()) + ".json");
  write_config(a, path);
  EXPECT_EQ(load_config(path), a);
  std::filesystem::remove(path);
}

TEST(RunConfig, UnknownKeysAreNamed) {
  EXPECT_NE(error_of({{"bogus", 1}}).find("'bogus'"), std::string::npos);
  EXPECT_NE(error_of({{"train", {{"stepz", 1}}}}).find("'train.stepz'"), std::string::npos);
  EXPECT_NE(error_of({{"train", {{"loss", {{"betta", 1.0}}}}}}).find("'train.loss.betta'"), std::string::npos);
  EXPECT_NE(error_of({{"source_tasks", {{{"n_allies", 2}, {"colour", "red"}}}}}).find("'source_tasks[0].colour'"),
            std::string::npos);
}

TEST(RunConfig, WrongTypesAreNamed) {
  EXPECT_NE(error_of({{"seed", "zero"}}).find("'seed'"), std::string::npos);
  EXPECT_NE(error_of({{"seed", -1}}).find("'seed'"), std::string::npos);
  EXPECT_NE(error_of({{"train", {{"lr", "fast"}}}}).find("'train.lr'"), std::string::npos);
  EXPECT_NE(error_of({{"train", {{"batch", 2.5}}}}).find("'train.batch'"), std::string::npos);
  EXPECT_NE(error_of({{"dataset_paths", "a.jsonl"}}).find("'dataset_paths'"), std::string::npos);
  EXPECT_NE(error_of({{"train", 3}}).find("'train'"), std::string::npos);
  EXPECT_NE(error_of({{"source_tasks", "3v3"}}).find("'source_tasks'"), std::string::npos);
}

TEST(RunConfig, InvalidValuesAreRejected) {
  EXPECT_NE(error_of({{"quality", "great"}}).find("'quality'"), std::string::npos);
  EXPECT_NE(error_of({{"source_tasks", {"3x3"}}}).find("'source_tasks[0]'"), std::string::npos);
  EXPECT_NE(error_of({{"source_tasks", {"0v3"}}}).find("'source_tasks[0]'"), std::string::npos);
  EXPECT_NE(error_of({{"source_tasks", json::array()}}).find("'source_tasks'"), std::string::npos);
  EXPECT_NE(error_of({{"train", {{"mode", "dqn"}}}}).find("'train"), std::string::npos);
  EXPECT_NE(error_of({{"train", {{"steps", 0}}}}).find("'train'"), std::string::npos);
  EXPECT_NE(error_of({{"dataset_paths", {"a"}}}).find("'dataset_paths'"), std::string::npos);
  EXPECT_NE(error_of({{"eval_episodes", 0}}).find("'eval_episodes'"), std::string::npos);
}

TEST(RunConfig, DerivedValues) {
  RunConfig c;
  c.out_dir = "runs/a";
  EXPECT_EQ(c.dataset_path(0), std::filesystem::path("runs/a/data/3v3.jsonl"));
  c.dataset_paths = {"x.jsonl", "y.jsonl"};
  EXPECT_EQ(c.dataset_path(1), std::filesystem::path("y.jsonl"));
  c.seed = 5;
  EXPECT_EQ(c.effective_train().seed, substream(5, "train"));
  RunConfig d = c;
  d.seed = 6;
  EXPECT_NE(d.effective_train().seed, c.effective_train().seed);
}

TEST(RunConfig, FileErrors) {
  EXPECT_THROW(load_config("/nonexistent/config.json"), std::runtime_error);
  const auto path = std::filesystem::temp_directory_path() / ("hissd_bad_" + std::to_string(::getpid()) + ".json");
  {
    std::ofstream out(path);
    out << "{ \"seed\": ";
  }
  EXPECT_THROW(load_config(path), ConfigError);
  std::filesystem::remove(path);
}

TEST(TaskJson, ShorthandAndObject) {
  const env::TaskSpec a = task_from_json("4v6", "t");
  EXPECT_EQ(a, env::make_task(4, 6));
  const env::TaskSpec b = task_from_json(to_json(a), "t");
  EXPECT_EQ(a, b);
  EXPECT_THROW(task_from_json(" 4v6", "t"), ConfigError);
  EXPECT_THROW(task_from_json(7, "t"), ConfigError);
}

}  // namespace
}  // namespace hissd::cli
