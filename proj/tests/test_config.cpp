#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "degmon/config.hpp"
#include "degmon/error.hpp"
#include "test_util.hpp"

using namespace degmon;
using namespace degmon::testing;

namespace {

const char* kYaml = R"(
seed: 5
input_size: 32
output_dir: out
data:
  manifest: data/manifest.csv
train:
  epochs: 3
  batch_pairs: 4
flow:
  epochs: 2
)";

// Keeps the output-dir override out of the way of tests that do not set it.
struct EnvGuard {
  EnvGuard() { unsetenv(kOutputDirEnv); }
  ~EnvGuard() { unsetenv(kOutputDirEnv); }
};

}  // namespace

TEST(Config, ParsesAndResolvesRelativePaths) {
  EnvGuard guard;
  const auto c = parse_run_config(kYaml, "/base/dir", false);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.input_size, 32);
  EXPECT_EQ(c.model.backbone.input_size, 32);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.train.seed, 5u);
  EXPECT_EQ(c.flow.seed, 5u);
  EXPECT_EQ(c.manifest, std::filesystem::path("/base/dir/data/manifest.csv"));
  EXPECT_EQ(c.output_dir, std::filesystem::path("/base/dir/out"));
  EXPECT_EQ(c.train.resolved_warmup(), 1);
}

TEST(Config, UnknownKeysAreRejected) {
  EnvGuard guard;
  EXPECT_THROW(parse_run_config("seed: 1\nbogus: 2\n", ".", false), ConfigError);
  EXPECT_THROW(parse_run_config("train:\n  epochz: 2\n", ".", false), ConfigError);
  EXPECT_THROW(parse_run_config("model:\n  pool: max\n", ".", false), ConfigError);
  EXPECT_THROW(parse_run_config("train:\n  epochs: many\n", ".", false), ConfigError);
}

TEST(Config, InvalidValuesAreRejected) {
  EnvGuard guard;
  EXPECT_THROW(parse_run_config("train:\n  epochs: 0\n", ".", false), ConfigError);
  EXPECT_THROW(parse_run_config("evaluation:\n  monitors: [oracle]\n", ".", false), ConfigError);
  EXPECT_THROW(parse_run_config("data:\n  manifest: nowhere.csv\n", "/nonexistent", true), ConfigError);
}

TEST(Config, HashIsStableAndIgnoresOutputDir) {
  EnvGuard guard;
  const auto a = parse_run_config(kYaml, "/x", false);
  const auto b = parse_run_config(std::string(kYaml) + "\n", "/elsewhere", false);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  auto c = a;
  c.output_dir = "/tmp/other";
  EXPECT_EQ(c.hash(), a.hash());
  c.train.epochs = 4;
  EXPECT_NE(c.hash(), a.hash());
}

TEST(Config, OutputDirEnvironmentOverride) {
  EnvGuard guard;
  setenv(kOutputDirEnv, "/tmp/degmon_env_out", 1);
  const auto c = parse_run_config(kYaml, "/base", false);
  EXPECT_EQ(c.output_dir, std::filesystem::path("/tmp/degmon_env_out"));
}

TEST(Config, LoadsFromFile) {
  EnvGuard guard;
  TempDir dir("config");
  std::filesystem::create_directories(dir / "data");
  std::ofstream(dir / "data/manifest.csv") << "image_id,relpath,split,dataset_tag\n";
  std::ofstream(dir / "run.yaml") << kYaml;
  const auto c = load_run_config(dir / "run.yaml");
  EXPECT_EQ(c.manifest, dir / "data/manifest.csv");
  EXPECT_THROW(load_run_config(dir / "missing.yaml"), IoError);
}
