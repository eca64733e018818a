#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "checks.hpp"
#include "pod_sentry/image_io.hpp"
#include "pod_sentry/interchange.hpp"

using namespace pod_sentry;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kCli = POD_SENTRY_CLI;
const std::string kFixtures = POD_SENTRY_FIXTURES;

struct CliRun {
  int code = -1;
  std::string out;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("pod_sentry_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliRun run(const std::string& args) const {
    const fs::path log = dir_ / "stdout.txt";
    const std::string cmd = "'" + kCli + "' " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

DatasetManifest sized_manifest(int train, int validation) {
  DatasetManifest m;
  for (int i = 0; i < train + validation; ++i) {
    const std::string id = "im" + std::to_string(i);
    m.images.push_back({id, id + ".jpg", 640, 640,
                        i < train ? Split::kTrain : Split::kValidation, std::nullopt});
    m.annotations.push_back({id, static_cast<ClassId>(i % 3), BoundingBox(10, 10, 50, 80)});
  }
  return m;
}

}  // namespace

TEST_F(CliTest, HelpEverywhere) {
  for (const char* sub : {"", "dataset", "dataset validate", "dataset stats", "dataset split",
                          "dataset convert", "preprocess run", "eval run", "diagnose image",
                          "trainlog report", "serve"}) {
    const auto r = run(std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("Usage"), std::string::npos) << sub;
  }
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("dataset stats --manifest x.json --batch 4 --bogus").code, 2);
  EXPECT_EQ(run("dataset stats --manifest x.json").code, 2);
  EXPECT_EQ(run("dataset split --manifest x.json --out y.json --ratio 1.5").code, 2);
  EXPECT_EQ(run("diagnose image --image x.png --backend gpu:0").code, 2);
}

TEST_F(CliTest, MissingInputExitsThree) {
  EXPECT_EQ(run("dataset validate --manifest " + path("absent.json")).code, 3);
  EXPECT_EQ(run("trainlog report --log " + path("absent.csv") + " --out " + path("o")).code, 3);
}

TEST_F(CliTest, StatsStepsPerEpoch) {
  write_manifest_file(path("m.json"), sized_manifest(459, 50));
  const auto r = run("dataset stats --manifest " + path("m.json") + " --batch 17 --out " +
                     path("stats.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("batch 17: 27 steps/epoch"), std::string::npos) << r.out;
  const auto doc = json::parse(read_text_file(path("stats.json")));
  EXPECT_EQ(doc["steps_per_epoch"], 27);
}

TEST_F(CliTest, ValidateReportsViolations) {
  auto m = sized_manifest(4, 2);
  write_manifest_file(path("ok.json"), m);
  const auto ok = run("dataset validate --manifest " + path("ok.json"));
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("manifest OK"), std::string::npos);

  m.annotations.push_back({"ghost", 0, BoundingBox(1, 1, 2, 2)});
  write_manifest_file(path("bad.json"), m);
  const auto bad = run("dataset validate --manifest " + path("bad.json") + " --out " +
                       path("report.json"));
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("dangling_reference"), std::string::npos) << bad.out;
  const auto rep = json::parse(read_text_file(path("report.json")));
  ASSERT_EQ(rep["violations"].size(), 1u);
  EXPECT_EQ(rep["violations"][0]["subject"], "annotation 6");
}

TEST_F(CliTest, SplitIsSeeded) {
  write_manifest_file(path("m.json"), sized_manifest(40, 0));
  ASSERT_EQ(run("dataset split --manifest " + path("m.json") + " --ratio 0.25 --seed 3 --out " +
                path("a.json")).code, 0);
  ASSERT_EQ(run("dataset split --manifest " + path("m.json") + " --ratio 0.25 --seed 3 --out " +
                path("b.json")).code, 0);
  EXPECT_EQ(read_text_file(path("a.json")), read_text_file(path("b.json")));
  const auto s = dataset_stats(read_manifest_file(path("a.json")));
  EXPECT_EQ(s.validation_images + s.train_images, 40u);
  EXPECT_NEAR(static_cast<double>(s.validation_images), 10.0, 3.0);
}

TEST_F(CliTest, EvalMatchesBruteForce) {
  const auto r = run("eval run --manifest " + kFixtures + "/reference_manifest.json --detections " +
                     kFixtures + "/reference_detections.json --out " + path("report.json") +
                     " --publish " + path("store"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto doc = json::parse(read_text_file(path("report.json")));

  const auto m = read_manifest_file(kFixtures + "/reference_manifest.json");
  const auto dets = read_detections_file(kFixtures + "/reference_detections.json");
  std::vector<GroundTruthItem> val_gts;
  for (const auto& a : m.annotations) {
    if (m.find_image(a.image_id)->split == Split::kValidation) val_gts.push_back(a);
  }
  const auto brute = oracle::brute_force_evaluate(val_gts, dets, 3, coco_iou_thresholds());
  ASSERT_TRUE(brute.map_50);
  EXPECT_NEAR(doc["map_50"].get<double>(), *brute.map_50, 1e-9);
  EXPECT_NEAR(doc["map_50"].get<double>(), 0.3467, 1e-3);
  EXPECT_NE(r.out.find("mAP@0.5 0.34"), std::string::npos) << r.out;
  // The copy in the store is byte-identical.
  EXPECT_EQ(read_text_file(path("store") + "/eval/latest.json"), read_text_file(path("report.json")));
}

TEST_F(CliTest, PreprocessAndConvert) {
  fs::create_directories(path("raw"));
  write_png(path("raw") + "/a.png", Raster(80, 60, 128));
  DatasetManifest m;
  m.images.push_back({"a", "raw/a.png", 80, 60, Split::kTrain, std::nullopt});
  m.annotations.push_back({"a", 1, BoundingBox(20, 10, 60, 50)});
  write_manifest_file(path("m.json"), m);
  const auto r = run("preprocess run --manifest " + path("m.json") + " --out " + path("out") +
                     " --target 32");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto out_manifest = fs::path(path("out")) / "manifest.json";
  ASSERT_TRUE(fs::exists(out_manifest)) << r.out;
  const auto pm = read_manifest_file(out_manifest);
  ASSERT_EQ(pm.images.size(), 1u);
  EXPECT_EQ(pm.images[0].width, 32);

  const auto y = run("dataset convert --from manifest --to yolo --manifest " + path("m.json") +
                     " --out " + path("labels"));
  ASSERT_EQ(y.code, 0) << y.out;
  EXPECT_TRUE(fs::exists(path("labels") + "/a.txt"));
}

TEST_F(CliTest, DiagnoseGoldenImage) {
  const auto r = run("diagnose image --image " + kFixtures + "/healthy_pod.png --backend file:" +
                     kFixtures + "/healthy_pod_detections.json --out " + path("d.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("1 pod(s); healthy 96%"), std::string::npos) << r.out;
  const auto doc = json::parse(read_text_file(path("d.json")));
  EXPECT_EQ(doc["pods"][0]["top"], "healthy");
}

TEST_F(CliTest, TrainlogVerdictsDriveExitCode) {
  write_text_file(path("good.csv"), emit_training_log(checks::synthetic_training_log(100, false)));
  write_text_file(path("flat.csv"), emit_training_log(checks::synthetic_training_log(100, true)));
  const auto good = run("trainlog report --log " + path("good.csv") + " --out " + path("g"));
  EXPECT_EQ(good.code, 0) << good.out;
  EXPECT_TRUE(fs::exists(path("g") + "/trainlog.json"));
  EXPECT_TRUE(fs::exists(path("g") + "/series.csv"));
  EXPECT_EQ(run("trainlog report --log " + path("flat.csv") + " --out " + path("f")).code, 1);

  write_text_file(path("broken.csv"), "epoch,box_loss\n1,0.1\n");
  const auto broken = run("trainlog report --log " + path("broken.csv") + " --out " + path("b"));
  EXPECT_EQ(broken.code, 1);
  EXPECT_NE(broken.out.find("line 1"), std::string::npos) << broken.out;
}
