#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int status;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::path(::testing::TempDir()) / "mmseg_cli";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write(dir_ / "spec.json", {{"extents", {8, 8, 8}}, {"min_radius", 2.5}, {"max_radius", 3.5}, {"num_samples", 5}});
    write(dir_ / "train.json", {{"epochs", 1},
                                {"learning_rate", 0.01},
                                {"net",
                                 {{"base_channels", 2},
                                  {"levels", 2},
                                  {"state_dim", 2},
                                  {"scan_directions", 2},
                                  {"patch", {8, 8, 8}}}}});
  }

  static void write(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(); }

  static nlohmann::json read(const fs::path& p) { return nlohmann::json::parse(std::ifstream(p)); }

  static Outcome run(const std::string& args) {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(MMSEG_CLI) + " " + args + " > /dev/null 2> " + err.string();
    const int raw = std::system(cmd.c_str());
    std::ifstream in(err);
    return {WEXITSTATUS(raw), std::string(std::istreambuf_iterator<char>(in), {})};
  }

  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, UnknownFlagAndMissingFileFail) {
  const Outcome bad = run("make-data --bogus 1 --out " + path("x"));
  EXPECT_NE(bad.status, 0);
  EXPECT_NE(bad.err.find("error: usage:"), std::string::npos) << bad.err;

  const Outcome missing = run("train --config " + path("nope.json") + " --data " + path("x") + " --out " + path("m.bin"));
  EXPECT_NE(missing.status, 0);
  EXPECT_NE(missing.err.find("error:"), std::string::npos);

  EXPECT_NE(run("").status, 0);
}

TEST_F(Cli, DataTrainSegmentEvaluate) {
  ASSERT_EQ(run("make-data --spec " + path("spec.json") + " --out " + path("data")).status, 0);
  ASSERT_TRUE(fs::exists(dir_ / "data" / "phantom_0000" / "header.json"));

  const Outcome tr = run("train --config " + path("train.json") + " --data " + path("data") + " --out " + path("m.bin"));
  ASSERT_EQ(tr.status, 0) << tr.err;
  EXPECT_TRUE(fs::exists(dir_ / "m.bin"));
  EXPECT_TRUE(read(dir_ / "m.bin.log.json").contains("step_losses"));

  const Outcome seg = run("segment --model " + path("m.bin") + " --input " + path("data/phantom_0001") + " --out " +
                      path("mask"));
  ASSERT_EQ(seg.status, 0) << seg.err;
  EXPECT_TRUE(fs::exists(dir_ / "mask" / "header.json"));

  const Outcome ev = run("evaluate --pred " + path("data") + " --gt " + path("data") + " --report " + path("r.json"));
  ASSERT_EQ(ev.status, 0) << ev.err;
  const nlohmann::json report = read(dir_ / "r.json");
  EXPECT_DOUBLE_EQ(report.at("mean_dice").get<double>(), 1.0);
  for (const auto& c : report.at("classes")) EXPECT_DOUBLE_EQ(c.at("dice").get<double>(), 1.0);
}

TEST_F(Cli, AblateEmitsFourRows) {
  ASSERT_EQ(run("make-data --spec " + path("spec.json") + " --out " + path("abl_data")).status, 0);
  const Outcome ab = run("ablate --config " + path("train.json") + " --data " + path("abl_data") + " --out " +
                     path("table.json"));
  ASSERT_EQ(ab.status, 0) << ab.err;
  const nlohmann::json table = read(dir_ / "table.json");
  ASSERT_EQ(table.at("rows").size(), 4u);
  EXPECT_EQ(table.at("rows")[0].at("mode"), "single-modality");
  EXPECT_EQ(table.at("rows")[3].at("mode"), "full");
}

TEST_F(Cli, SeedFlagMakesDataReproducible) {
  ASSERT_EQ(run("--seed 9 make-data --spec " + path("spec.json") + " --out " + path("s1")).status, 0);
  ASSERT_EQ(run("--seed 9 make-data --spec " + path("spec.json") + " --out " + path("s2")).status, 0);
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(bytes(dir_ / "s1" / "phantom_0002" / "modality_0.f32"), bytes(dir_ / "s2" / "phantom_0002" / "modality_0.f32"));
}
