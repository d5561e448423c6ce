#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "test_util.hpp"

using namespace degmon::testing;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run run_cli(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string("env -u DEGMON_OUTPUT_DIR ") + DEGMON_CLI_PATH + " --log-level warn " + args +
                          " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

nlohmann::json last_json_line(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty() && line.front() == '{') last = line;
  }
  return nlohmann::json::parse(last);
}

void write_small_config(const TempDir& dir) {
  std::ofstream(dir / "run.yaml") << "seed: 3\n"
                                     "input_size: 32\n"
                                     "output_dir: out\n"
                                     "data:\n  manifest: data/manifest.csv\n"
                                     "model:\n  widths: [4, 6, 8, 8, 8]\n  tap_stages: [1, 2, 3, 5]\n"
                                     "  per_layer_dim: 4\n  embed_dim: 8\n  mlp_hidden: 16\n"
                                     "train:\n  epochs: 2\n  batch_pairs: 2\n"
                                     "flow:\n  epochs: 2\n  hidden: 8\n";
}

}  // namespace

TEST(Cli, MissingSubcommandIsConfigError) {
  TempDir dir("cli_none");
  const auto r = run_cli(dir, "");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(last_json_line(r.err).at("error"), "config");
}

TEST(Cli, UnknownConfigKeyExitsWithConfigError) {
  TempDir dir("cli_cfg");
  std::ofstream(dir / "bad.yaml") << "seed: 1\nsurprise: true\n";
  const auto r = run_cli(dir, "train -c " + (dir / "bad.yaml").string());
  EXPECT_EQ(r.code, 2);
  const auto j = last_json_line(r.err);
  EXPECT_EQ(j.at("error"), "config");
  EXPECT_NE(j.at("message").get<std::string>().find("surprise"), std::string::npos);
}

TEST(Cli, CorruptCheckpointExitsWithFormatError) {
  TempDir dir("cli_ckpt");
  std::ofstream(dir / "junk.bin") << "not a checkpoint";
  const auto r0 = run_cli(dir, "synth --out " + (dir / "data").string() + " --count 2 --secondary 0 --size 32");
  ASSERT_EQ(r0.code, 0) << r0.err;
  const auto r = run_cli(dir, "score --checkpoint " + (dir / "junk.bin").string() + " -i " +
                                 (dir / "data/primary/leaves_0000.png").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(last_json_line(r.err).at("error"), "format");
}

TEST(Cli, SynthTrainScoreAndThreshold) {
  TempDir dir("cli_e2e");
  write_small_config(dir);
  auto r = run_cli(dir, "synth --out " + (dir / "data").string() + " --count 16 --secondary 4 --size 32 --seed 2");
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_TRUE(std::filesystem::exists(dir / "data/manifest.csv"));

  r = run_cli(dir, "train -c " + (dir / "run.yaml").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ckpt = dir / "out/manifold.bin";
  EXPECT_EQ(last_json_line(r.out).at("checkpoint"), ckpt.string());
  ASSERT_TRUE(std::filesystem::exists(ckpt));
  EXPECT_EQ(last_json_line(slurp(dir / "out/train_log.ndjson")).at("epoch"), 1);

  const auto img = dir / "data/primary/leaves_0003.png";
  r = run_cli(dir, "score --checkpoint " + ckpt.string() + " -i " + img.string() + " --tau 2");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = last_json_line(r.out);
  EXPECT_EQ(s.at("image_id"), "leaves_0003");
  EXPECT_GE(s.at("s_deg").get<double>(), 0.0);
  EXPECT_LE(s.at("s_deg").get<double>(), 2.0);
  EXPECT_EQ(s.at("accept"), true);

  r = run_cli(dir, "score --checkpoint " + ckpt.string() + " -i " + img.string() + " --tau=-1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(last_json_line(r.out).at("accept"), false);

  r = run_cli(dir, "suggest-threshold -c " + (dir / "run.yaml").string() + " --checkpoint " + ckpt.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = last_json_line(r.out);
  EXPECT_EQ(t.at("quantile"), 0.95);
  EXPECT_GT(t.at("n").get<int>(), 0);

  // A changed config no longer matches the checkpoint's hash.
  std::ofstream(dir / "other.yaml") << slurp(dir / "run.yaml").replace(0, 7, "seed: 4");
  r = run_cli(dir, "suggest-threshold -c " + (dir / "other.yaml").string() + " --checkpoint " + ckpt.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(last_json_line(r.err).at("error"), "state");
}
