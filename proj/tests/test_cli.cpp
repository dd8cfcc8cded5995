#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "cdssl/checkpoint.hpp"
#include "support.hpp"

using cdssl::testing::read_text;
using cdssl::testing::TempDir;
using cdssl::testing::write_text;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun cli(const TempDir& dir, const std::string& args) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("'") + CDSSL_CLI_PATH + "' " + args + " >'" + out.string() + "' 2>'" +
                          err.string() + "'";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text(out);
  r.err = read_text(err);
  return r;
}

const char* kConfig = R"(
seed = 1
output_dir = "run"
fractions = [1.0]

[pretext]
manifest = "corpus/manifest.csv"
batch_size = 8
epochs = 1

[pretext.encoder]
channels = [4, 4, 8]
feature_dim = 8
input_size = 32

[pretext.projection]
layer_dims = [8, 4]

[pretext.optimizer]
base_lr = 0.02

[pretext.augment]
blur_kernel = [3, 3]

[finetune]
batch_size = 8
epochs = 1
hidden_dim = 0
split = [0.5, 0.25, 0.25]

[finetune.optimizer]
kind = "sgd"
lr = 0.05

[target.synthetic]
manifest = "corpus/manifest.csv"
num_grades = 2
)";

// Corpus and config in `dir`; returns the config path.
std::string setup(const TempDir& dir) {
  const CliRun r = cli(dir, "synth -o '" + (dir / "corpus").string() + "' --per-class 8 --size 32 --seed 2");
  EXPECT_EQ(r.code, 0) << r.err;
  write_text(dir / "exp.toml", kConfig);
  return "'" + (dir / "exp.toml").string() + "'";
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  TempDir dir;
  EXPECT_EQ(cli(dir, "").code, 1);
  EXPECT_EQ(cli(dir, "frobnicate").code, 1);
  EXPECT_EQ(cli(dir, "report").code, 1);
  EXPECT_EQ(cli(dir, "synth -o x --size notanumber").code, 1);
  EXPECT_EQ(cli(dir, "--help").code, 0);
}

TEST(Cli, SynthWritesCorpus) {
  TempDir dir;
  const CliRun r = cli(dir, "synth -o '" + (dir / "c").string() + "' --per-class 3 --size 32");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("(6 images)"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir / "c" / "manifest.csv"));
  EXPECT_TRUE(fs::exists(dir / "c" / "blobs.csv"));
  EXPECT_EQ(cli(dir, "synth -o '" + (dir / "d").string() + "' --size 8").code, 1);
}

TEST(Cli, DryRunValidatesWithoutTraining) {
  TempDir dir;
  const std::string config = setup(dir);
  const CliRun ok = cli(dir, "sweep " + config + " --dry-run");
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.out.find("\"fingerprint\""), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "run"));

  write_text(dir / "bad.toml", std::string(kConfig) + "\n[extra]\nx = 1\n");
  const CliRun bad = cli(dir, "sweep '" + (dir / "bad.toml").string() + "' --dry-run");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("extra"), std::string::npos) << bad.err;
  EXPECT_EQ(cli(dir, "sweep '" + (dir / "none.toml").string() + "'").code, 2);
}

TEST(Cli, ReportAndPlot) {
  TempDir dir;
  write_text(dir / "results.csv",
             "dataset,task,fraction,accuracy,precision,recall,f1\naptos2019,binary,1,99.59,100.00,99.54,99.26\n");
  const CliRun rep = cli(dir, "report '" + (dir / "results.csv").string() + "'");
  EXPECT_EQ(rep.code, 0) << rep.err;
  EXPECT_NE(rep.out.find("| 100% | 99.59 | 100.00 | 99.54 | 99.26 |"), std::string::npos) << rep.out;

  const CliRun plot = cli(dir, "plot '" + (dir / "results.csv").string() + "' -o '" + (dir / "charts").string() + "'");
  EXPECT_EQ(plot.code, 0) << plot.err;
  EXPECT_TRUE(fs::exists(dir / "charts" / "label_efficiency_binary.svg"));
  EXPECT_NE(plot.err.find("single point"), std::string::npos);

  write_text(dir / "broken.csv", "dataset,task,fraction\nx,binary,1\n");
  EXPECT_EQ(cli(dir, "report '" + (dir / "broken.csv").string() + "'").code, 1);
  EXPECT_EQ(cli(dir, "report '" + (dir / "missing.csv").string() + "'").code, 2);
}

TEST(Cli, TrainEvaluateExplainEndToEnd) {
  TempDir dir;
  const std::string config = setup(dir);
  EXPECT_EQ(cli(dir, "finetune " + config + " --target synthetic").code, 1);  // no pretext checkpoint yet

  const CliRun pre = cli(dir, "pretrain " + config);
  ASSERT_EQ(pre.code, 0) << pre.err;
  const fs::path pretext = dir / "run" / "pretext" / "pretext_final.ckpt";
  ASSERT_TRUE(fs::exists(pretext));

  const CliRun fine = cli(dir, "finetune " + config + " --target synthetic --fraction 0.5");
  ASSERT_EQ(fine.code, 0) << fine.err;
  const fs::path classifier = dir / "run" / "finetune" / "synthetic_binary_0.5" / "finetune_final.ckpt";
  ASSERT_TRUE(fs::exists(classifier));
  EXPECT_NE(fine.out.find("\"accuracy\""), std::string::npos);

  const std::string manifest = "'" + (dir / "corpus" / "manifest.csv").string() + "'";
  const CliRun eval = cli(dir, "evaluate --checkpoint '" + classifier.string() + "' --manifest " + manifest +
                                " --num-grades 2 --split '" +
                                (dir / "run" / "finetune" / "synthetic_binary_split.json").string() + "'");
  EXPECT_EQ(eval.code, 0) << eval.err;
  EXPECT_NE(eval.out.find("\"sample_count\": 4"), std::string::npos) << eval.out;

  const CliRun cam = cli(dir, "cam --checkpoint '" + classifier.string() + "' --manifest " + manifest +
                               " --num-grades 2 --ids c1_0000,c0_0001 -o '" + (dir / "cam").string() + "'");
  EXPECT_EQ(cam.code, 0) << cam.err;
  EXPECT_TRUE(fs::exists(dir / "cam" / "cam.meta.json"));
  EXPECT_EQ(std::distance(fs::directory_iterator(dir / "cam"), fs::directory_iterator{}), 3);

  EXPECT_EQ(cli(dir, "cam --checkpoint '" + pretext.string() + "' --manifest " + manifest + " --num-grades 2 --ids c1_0000")
                .code,
            1);
  EXPECT_EQ(cli(dir, "cam --checkpoint '" + classifier.string() + "' --manifest " + manifest +
                         " --num-grades 2 --ids nope")
                .code,
            1);

  auto bytes = cdssl::serialize_checkpoint(cdssl::load_checkpoint(classifier));
  bytes.resize(bytes.size() / 2);
  write_text(dir / "cut.ckpt", std::string(bytes.begin(), bytes.end()));
  EXPECT_EQ(cli(dir, "evaluate --checkpoint '" + (dir / "cut.ckpt").string() + "' --manifest " + manifest +
                         " --num-grades 2")
                .code,
            2);
}

TEST(Cli, LockedOutputDirectoryExitsTwo) {
  TempDir dir;
  const std::string config = setup(dir);
  fs::create_directories(dir / "run");
  write_text(dir / "run" / ".lock", "12345\n");
  const CliRun r = cli(dir, "pretrain " + config);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("locked"), std::string::npos) << r.err;
}

TEST(Cli, SweepEndToEnd) {
  TempDir dir;
  const std::string config = setup(dir);
  const CliRun r = cli(dir, "sweep " + config + " --pretrain");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = read_text(dir / "run" / "results.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  const CliRun again = cli(dir, "sweep " + config);
  EXPECT_EQ(again.code, 0);
  EXPECT_NE(again.out.find("(1 resumed)"), std::string::npos) << again.out;
  const CliRun rep = cli(dir, "report '" + (dir / "run" / "results.csv").string() + "'");
  EXPECT_NE(rep.out.find("Config fingerprint"), std::string::npos) << rep.out;
}
