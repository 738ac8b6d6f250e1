#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <unistd.h>

#include "hissd/checkpoint.hpp"
#include "toy_batch.hpp"

namespace hissd::train {
namespace {

namespace fs = std::filesystem;

class CheckpointFile : public ::testing::Test {
 protected:
  fs::path dir;
  void SetUp() override {
    dir = fs::temp_directory_path() / ("hissd_ckpt_" + std::to_string(::getpid()) + "_" +
                                       ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  static std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }
  static void write(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out << bytes;
  }

  fs::path saved_model() {
    nn::Model m(hissd::testing::tiny_config(), 3);
    hissd::testing::randomize(m, 4);
    const fs::path p = dir / "a.bin";
    save_checkpoint(m, 42, {{"mode", "hissd"}}, p);
    return p;
  }

  // Rewrites the manifest line through `edit`.
  fs::path with_manifest(const std::function<void(nlohmann::json&)>& edit) {
    const std::string bytes = read(saved_model());
    const std::size_t a = bytes.find('\n');
    const std::size_t b = bytes.find('\n', a + 1);
    nlohmann::json j = nlohmann::json::parse(bytes.substr(a + 1, b - a - 1));
    edit(j);
    const fs::path p = dir / "edited.bin";
    write(p, bytes.substr(0, a + 1) + j.dump() + bytes.substr(b));
    return p;
  }

  static std::string error_of(const fs::path& p) {
    try {
      load_checkpoint(p);
    } catch (const std::runtime_error& e) {
      return e.what();
    }
    return "";
  }
};

TEST_F(CheckpointFile, RoundTripIsExact) {
  nn::Model m(hissd::testing::tiny_config(), 3);
  hissd::testing::randomize(m, 4);
  const fs::path a = dir / "a.bin", b = dir / "b.bin";
  save_checkpoint(m, 42, {{"mode", "hissd"}, {"lr", 0.001}}, a);
  const LoadedCheckpoint ck = load_checkpoint(a);
  EXPECT_EQ(ck.step, 42);
  EXPECT_EQ(ck.config["mode"], "hissd");
  EXPECT_EQ(ck.model->config, m.config);
  const auto src = m.stores();
  const auto dst = ck.model->stores();
  for (std::size_t s = 0; s < src.size(); ++s) {
    ASSERT_TRUE(dst[s]->same_layout(*src[s]));
    for (int i = 0; i < src[s]->size(); ++i) EXPECT_EQ(dst[s]->value(i), src[s]->value(i));
  }
  save_checkpoint(*ck.model, ck.step, ck.config, b);
  EXPECT_EQ(read(a), read(b));
}

TEST_F(CheckpointFile, MissingFileAndBadMagic) {
  EXPECT_NE(error_of(dir / "nope.bin").find("cannot open"), std::string::npos);
  write(dir / "junk.bin", "hello\n{}\n");
  EXPECT_NE(error_of(dir / "junk.bin").find("not a checkpoint"), std::string::npos);
}

TEST_F(CheckpointFile, CorruptManifestNamesTheField) {
  EXPECT_NE(error_of(with_manifest([](auto& j) { j.erase("step"); })).find("'step'"), std::string::npos);
  EXPECT_NE(error_of(with_manifest([](auto& j) { j["net"]["skill_dim"] = "five"; })).find("'net.skill_dim'"),
            std::string::npos);
  EXPECT_NE(error_of(with_manifest([](auto& j) { j["net"]["hidden_dim"] = 0; })).find("'net'"), std::string::npos);
  EXPECT_NE(error_of(with_manifest([](auto& j) { j["tensors"][3]["shape"] = {9, 9}; })).find("'tensors[3].shape'"),
            std::string::npos);
  EXPECT_NE(error_of(with_manifest([](auto& j) { j["tensors"][0]["name"] = "x"; })).find("'tensors[0].name'"),
            std::string::npos);
  EXPECT_NE(error_of(with_manifest([](auto& j) { j["tensors"].push_back(j["tensors"][0]); })).find("extra"),
            std::string::npos);
  const std::string bytes = read(saved_model());
  write(dir / "garbled.bin", bytes.substr(0, bytes.find('\n') + 1) + "{not json\n");
  EXPECT_NE(error_of(dir / "garbled.bin").find("does not parse"), std::string::npos);
}

TEST_F(CheckpointFile, TruncatedOrPaddedData) {
  const std::string bytes = read(saved_model());
  write(dir / "short.bin", bytes.substr(0, bytes.size() - 8));
  EXPECT_NE(error_of(dir / "short.bin").find("truncated"), std::string::npos);
  write(dir / "long.bin", bytes + "x");
  EXPECT_NE(error_of(dir / "long.bin").find("trailing"), std::string::npos);
}

}  // namespace
}  // namespace hissd::train
