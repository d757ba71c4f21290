#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <sys/wait.h>

#include "../support/tempdir.hpp"
#include "ripeseg/data/image_io.hpp"

namespace fs = std::filesystem;
using testing_support::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(RIPESEG_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

const char* kTinyModel =
    " --model.height 32 --model.width 32 --model.widths 4,4,6,6,8 --model.spb_per_level 1,1,1,1,1"
    " --model.patch 8 --model.embed 8 --model.heads 2 --model.depth 1 --model.ff_mult 2";

double key_value(const std::string& text, const std::string& key) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line))
    if (line.rfind(key + "=", 0) == 0) return std::stod(line.substr(key.size() + 1));
  ADD_FAILURE() << "no " << key << " in output:\n" << text;
  return -1;
}

// One synthetic dataset and one short training run shared by the suite.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    auto s = cli("synth --out " + data().string() +
                 " --synth.count 8 --synth.height 32 --synth.width 32 --synth.max_objects 3 --seed 4");
    ASSERT_EQ(s.code, 0) << s.output;
    auto t = cli("train --data.root " + data().string() + " --out " + run().string() + kTinyModel +
                 " --train.epochs 2 --train.batch_size 2 --loss.beta1 0.5 --loss.beta2 0.5 --seed 3");
    ASSERT_EQ(t.code, 0) << t.output;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static fs::path data() { return dir_->path() / "data"; }
  static fs::path run() { return dir_->path() / "run"; }
  static fs::path checkpoint() { return run() / "checkpoints" / "best.kuts"; }
  static fs::path scratch(const std::string& name) { return dir_->path() / name; }

  static TempDir* dir_;
};

TempDir* CliTest::dir_ = nullptr;

}  // namespace

TEST_F(CliTest, TrainWritesTheRunDirectory) {
  for (const char* rel : {"config.resolved", "log.txt", "curves.tsv", "checkpoints/best.kuts", "checkpoints/last.kuts",
                          "checkpoints/last.optim.kuts"})
    EXPECT_TRUE(fs::exists(run() / rel)) << rel;
  EXPECT_TRUE(fs::is_directory(run() / "reports"));
}

TEST_F(CliTest, OverrideAppearsInRunLogHeader) {
  const auto log = slurp(run() / "log.txt");
  EXPECT_NE(log.find("loss.beta1 = 0.5"), std::string::npos) << log.substr(0, 2000);
}

TEST_F(CliTest, MissingDatasetRootIsConfigError) {
  auto r = cli("train --data.root /nonexistent/tomatoes --out " + scratch("nowhere").string() + kTinyModel);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("/nonexistent/tomatoes"), std::string::npos) << r.output;
}

TEST_F(CliTest, UnknownKeyIsNamed) {
  auto r = cli("train --data.root " + data().string() + " --loss.gamma 2");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("loss.gamma"), std::string::npos) << r.output;
}

TEST_F(CliTest, ConfigFileIsOverriddenByFlags) {
  const auto cfg = scratch("cfg.txt");
  std::ofstream(cfg) << "# test config\ntrain.epochs = 1\ntrain.batch_size = 4\nloss.tau = 2.0\n";
  const auto out = scratch("cfg_run");
  auto r = cli("train --config " + cfg.string() + " --data.root " + data().string() + " --out " + out.string() +
               kTinyModel + " --loss.tau 2.5");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto resolved = slurp(out / "config.resolved");
  EXPECT_NE(resolved.find("loss.tau = 2.5"), std::string::npos) << resolved;
  EXPECT_NE(resolved.find("train.batch_size = 4"), std::string::npos) << resolved;
}

TEST_F(CliTest, EvaluateReportsBothForms) {
  auto r = cli("evaluate --checkpoint " + checkpoint().string() + " --data.root " + data().string() +
               " --eval.split all" + kTinyModel);
  ASSERT_EQ(r.code, 0) << r.output;
  const double miou = key_value(r.output, "miou");
  EXPECT_GE(miou, 0.0);
  EXPECT_LE(miou, 1.0);
  for (const char* key : {"mdc=", "map=", "auc=", "iou.unripened="}) EXPECT_NE(r.output.find(key), std::string::npos);
  EXPECT_NE(r.output.find("confusion"), std::string::npos);
}

TEST_F(CliTest, StricterMapThresholdNeverRaisesMap) {
  auto base = "evaluate --checkpoint " + checkpoint().string() + " --data.root " + data().string() +
              " --eval.split all" + kTinyModel;
  auto lo = cli(base + " --eval.map_iou 0.5");
  auto hi = cli(base + " --eval.map_iou 0.75");
  ASSERT_EQ(lo.code, 0) << lo.output;
  ASSERT_EQ(hi.code, 0) << hi.output;
  EXPECT_LE(key_value(hi.output, "map"), key_value(lo.output, "map"));
}

TEST_F(CliTest, ArchitectureMismatchNamesTheParameter) {
  auto r = cli("evaluate --checkpoint " + checkpoint().string() + " --data.root " + data().string() +
               " --model.height 32 --model.width 32 --model.widths 4,4,6,6,16 --model.spb_per_level 1,1,1,1,1"
               " --model.patch 8 --model.embed 8 --model.heads 2 --model.depth 1 --model.ff_mult 2");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("encoder"), std::string::npos) << r.output;
}

TEST_F(CliTest, TruncatedCheckpointIsRejected) {
  const auto bytes = slurp(checkpoint());
  const auto cut = scratch("cut.kuts");
  std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  auto r = cli("evaluate --checkpoint " + cut.string() + " --data.root " + data().string() + kTinyModel);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("checkpoint"), std::string::npos) << r.output;
}

TEST_F(CliTest, PredictWritesMaskAndOverlayDeterministically) {
  const auto image = data() / "images" / "synth_00000.png";
  const auto a = scratch("pred_a"), b = scratch("pred_b");
  auto ra = cli("predict --checkpoint " + checkpoint().string() + " --input " + image.string() + " --out " +
                a.string() + kTinyModel);
  auto rb = cli("predict --checkpoint " + checkpoint().string() + " --input " + image.string() + " --out " +
                b.string() + kTinyModel);
  ASSERT_EQ(ra.code, 0) << ra.output;
  ASSERT_EQ(rb.code, 0) << rb.output;
  const auto mask = a / "synth_00000_mask.png", overlay = a / "synth_00000_overlay.png";
  ASSERT_TRUE(fs::exists(mask));
  ASSERT_TRUE(fs::exists(overlay));
  EXPECT_EQ(slurp(mask), slurp(b / "synth_00000_mask.png"));
  EXPECT_EQ(slurp(overlay), slurp(b / "synth_00000_overlay.png"));
  const auto m = ripeseg::read_mask(mask);
  EXPECT_EQ(m.height, 32u);
  for (auto v : m.values) EXPECT_LE(v, 3);
}

TEST_F(CliTest, PredictRejectsUnreadableImage) {
  const auto bogus = scratch("bogus.png");
  std::ofstream(bogus) << "not a png";
  auto r = cli("predict --checkpoint " + checkpoint().string() + " --input " + bogus.string() + " --out " +
               scratch("pred_bad").string() + kTinyModel);
  EXPECT_EQ(r.code, 1) << r.output;
}

TEST_F(CliTest, AugmentMirrorsTheLayout) {
  const auto out = scratch("aug");
  auto r = cli("augment --data.root " + data().string() + " --out " + out.string() +
               " --augment.transforms hflip,rotation --augment.copies 2 --seed 5");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(out / "classmap.txt"));
  std::size_t images = 0, masks = 0;
  for (const auto& e : fs::directory_iterator(out / "images")) images += e.is_regular_file();
  for (const auto& e : fs::directory_iterator(out / "masks")) masks += e.is_regular_file();
  EXPECT_EQ(images, masks);
  EXPECT_EQ(images, 16u);
}

TEST_F(CliTest, GradcheckFilterPrintsOnlyRequestedOp) {
  auto r = cli("gradcheck --ops softmax_temp");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("softmax_temp"), std::string::npos);
  EXPECT_EQ(r.output.find("conv2d"), std::string::npos) << r.output;
  EXPECT_EQ(r.output.find("end_to_end"), std::string::npos) << r.output;
}

TEST_F(CliTest, GradcheckCatchesInjectedConvFault) {
  auto r = cli("gradcheck --inject-fault conv2d --ops conv2d,relu");
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("conv2d"), std::string::npos);
}

TEST_F(CliTest, TauSweepTabulatesEveryCell) {
  const auto out = scratch("sweep");
  auto r = cli("sweep --data.root " + data().string() + " --out " + out.string() + kTinyModel +
               " --sweep.kind tau --train.epochs 1 --train.batch_size 4 --train.validate false");
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* tau : {"1", "1.5", "2", "2.5"}) EXPECT_NE(r.output.find(tau), std::string::npos) << tau;
}

TEST_F(CliTest, SynthIsIdempotent) {
  const auto a = scratch("syn_a"), b = scratch("syn_b");
  for (const auto& d : {a, b}) {
    auto r = cli("synth --out " + d.string() + " --synth.count 3 --seed 8");
    ASSERT_EQ(r.code, 0) << r.output;
  }
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) {
      EXPECT_EQ(slurp(e.path()), slurp(b / fs::relative(e.path(), a)));
    }
}

TEST_F(CliTest, HelpListsRegistryKeys) {
  auto r = cli("train --help");
  EXPECT_EQ(r.code, 0);
  for (const char* key : {"--loss.beta1", "--loss.tau", "--optim.rho", "--train.epochs", "--data.root"})
    EXPECT_NE(r.output.find(key), std::string::npos) << key;
}
