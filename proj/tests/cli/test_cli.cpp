#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

#include "setreg/io.hpp"

namespace fs = std::filesystem;
using namespace setreg;

namespace {

const fs::path kTool = SETREG_TOOL_PATH;

int run(const std::string &args) {
    const std::string cmd = kTool.string() + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string bytes(const fs::path &p) { return io::read_text(p); }

// One shared small dataset for the whole suite.
class Cli : public ::testing::Test {
  protected:
    static fs::path root;
    static void SetUpTestSuite() {
        root = fs::temp_directory_path() / "setreg_cli_test";
        fs::remove_all(root);
        ASSERT_EQ(run("synth --out " + (root / "ds").string() + " --cases 1 --length 5 --size 64x64 --seed 7"), 0);
    }
    static void TearDownTestSuite() { fs::remove_all(root); }
    static fs::path case_dir() { return root / "ds" / "case_000"; }
    static std::string reg_args(const fs::path &out) {
        return "register --input " + case_dir().string() + " --out " + out.string() + " --scales 3 --iters 30,30,30";
    }
};
fs::path Cli::root;

} // namespace

TEST_F(Cli, SynthLayoutAndDeterminism) {
    for(const char *f : {"frames.f32", "frames.json", "truth.f32", "motion.f32", "masks.u8", "labels.u8", "landmarks.csv",
                         "times.csv", "manifest.json"}){
        EXPECT_TRUE(fs::exists(case_dir() / f)) << f;
    }
    EXPECT_EQ(io::load_frames(case_dir() / "frames").size(), 5u);
    ASSERT_EQ(run("synth --out " + (root / "again").string() + " --cases 1 --length 5 --size 64x64 --seed 7"), 0);
    for(const auto &e : fs::directory_iterator(case_dir())){
        EXPECT_EQ(bytes(e.path()), bytes(root / "again" / "case_000" / e.path().filename())) << e.path().filename();
    }
    EXPECT_EQ(bytes(root / "ds" / "manifest.json"), bytes(root / "again" / "manifest.json"));
}

TEST_F(Cli, SynthUsageErrors) {
    EXPECT_EQ(run("synth --out " + (root / "bad").string() + " --length 1"), 2);
    EXPECT_EQ(run("synth --out " + (root / "bad").string() + " --size 10x10"), 2);
    EXPECT_EQ(run("synth"), 2);
    EXPECT_EQ(run("no-such-command"), 2);
}

TEST_F(Cli, RegisterAggregationModes) {
    ASSERT_EQ(run(reg_args(root / "corr") + " --agg corr"), 0);
    ASSERT_EQ(run(reg_args(root / "mean") + " --agg mean"), 0);
    for(const char *f : {"transforms.f32", "warped.f32", "loss.csv", "config.json", "weights.json"}){
        EXPECT_TRUE(fs::exists(root / "corr" / f)) << f;
    }
    EXPECT_NE(bytes(root / "corr" / "transforms.f32"), bytes(root / "mean" / "transforms.f32"));
    const auto wc = io::read_json(root / "corr" / "weights.json")["image"].get<std::vector<double>>();
    const auto wm = io::read_json(root / "mean" / "weights.json")["image"].get<std::vector<double>>();
    ASSERT_EQ(wc.size(), 5u);
    bool nonuniform = false;
    for(std::size_t i = 0; i < 5; ++i){
        EXPECT_DOUBLE_EQ(wm[i], 0.2);
        nonuniform |= std::abs(wc[i] - 0.2) > 1e-6;
    }
    EXPECT_TRUE(nonuniform);
}

TEST_F(Cli, IoStepsZeroIsPlainRegistration) {
    ASSERT_EQ(run(reg_args(root / "plain")), 0);
    ASSERT_EQ(run(reg_args(root / "io0") + " --io-steps 0 --init zero"), 0);
    EXPECT_EQ(bytes(root / "plain" / "transforms.f32"), bytes(root / "io0" / "transforms.f32"));
    ASSERT_EQ(run(reg_args(root / "io5") + " --io-steps 5 --init pipeline"), 0);
    EXPECT_EQ(io::read_text(root / "io5" / "loss.csv").find("4,1,") != std::string::npos, true);
}

TEST_F(Cli, ThreadCountDoesNotChangeOutputs) {
    ASSERT_EQ(run("--threads 1 " + reg_args(root / "t1")), 0);
    ASSERT_EQ(run("--threads 3 " + reg_args(root / "t3")), 0);
    EXPECT_EQ(bytes(root / "t1" / "transforms.f32"), bytes(root / "t3" / "transforms.f32"));
}

TEST_F(Cli, RegisterFailures) {
    EXPECT_EQ(run("register --input " + (root / "missing").string() + " --out " + (root / "x").string()), 1);
    EXPECT_EQ(run(reg_args(root / "x") + " --agg median"), 2);
}

TEST_F(Cli, EvalIdentityAndGroundTruth) {
    ASSERT_EQ(run("eval --input " + case_dir().string() + " --out " + (root / "ev_raw").string()), 0);
    const auto raw = io::read_json(root / "ev_raw" / "metrics.json");
    EXPECT_EQ(raw["folding_ratio"].get<double>(), 0.0);
    EXPECT_GT(raw["endpoint_error"].get<double>(), 0.5);

    // ground-truth inverse fields as the "registration"
    const auto gt = root / "gt";
    fs::create_directories(gt);
    fs::copy_file(case_dir() / "truth.f32", gt / "transforms.f32");
    fs::copy_file(case_dir() / "truth.json", gt / "transforms.json");
    ASSERT_EQ(run("eval --input " + case_dir().string() + " --reg " + gt.string() + " --out " + (root / "ev_gt").string()), 0);
    const auto m = io::read_json(root / "ev_gt" / "metrics.json");
    EXPECT_LT(m["endpoint_error"].get<double>(), 0.1);
    EXPECT_GT(m["all_pair_dice"]["2"]["mean"].get<double>(), raw["all_pair_dice"]["2"]["mean"].get<double>());
    EXPECT_TRUE(fs::exists(root / "ev_gt" / "metrics.csv"));
}

TEST_F(Cli, EvalDegradesAndRejectsMismatch) {
    const auto c = root / "nomasks";
    fs::create_directories(c);
    for(const char *f : {"frames.f32", "frames.json", "times.csv", "truth.f32", "truth.json", "landmarks.csv"}){
        fs::copy_file(case_dir() / f, c / f);
    }
    ASSERT_EQ(run("eval --input " + c.string() + " --out " + (root / "ev_nm").string()), 0);
    const auto m = io::read_json(root / "ev_nm" / "metrics.json");
    EXPECT_FALSE(m.contains("all_pair_dice"));
    EXPECT_TRUE(m.contains("tre"));

    const auto bad = root / "badreg";
    fs::create_directories(bad);
    io::save_transforms(bad / "transforms", TransformSet<float>::zeros(5, 32, 32));
    EXPECT_EQ(run("eval --input " + case_dir().string() + " --reg " + bad.string() + " --out " + (root / "ev_bad").string()), 1);
}

TEST_F(Cli, FitOutputsAndErrors) {
    const auto out = root / "fit_full";
    ASSERT_EQ(run("fit --frames " + (case_dir() / "frames").string() + " --times " + (case_dir() / "times.csv").string() +
                  " --mask none --out " + out.string()), 0);
    const auto s = io::read_json(out / "summary.json");
    EXPECT_EQ(s["fitted_pixels"].get<std::size_t>(), 64u * 64u);
    for(const char *f : {"t1.f32", "r2.f32", "sd_t1.f32", "A.f32", "B.f32", "T1star.f32", "survival.csv", "t1.png", "png.json"}){
        EXPECT_TRUE(fs::exists(out / f)) << f;
    }
    EXPECT_EQ(bytes(out / "t1.png").substr(1, 3), "PNG");

    io::save_times(root / "short.csv", {100.0, 200.0});
    EXPECT_EQ(run("fit --frames " + (case_dir() / "frames").string() + " --times " + (root / "short.csv").string() +
                  " --out " + (root / "fit_bad").string()), 1);
}

TEST_F(Cli, FitRegisteredDominatesRaw) {
    ASSERT_EQ(run(reg_args(root / "reg_fit")), 0);
    const std::string common = " --times " + (case_dir() / "times.csv").string() + " --mask " + (case_dir() / "labels").string() +
                               " --label 2 --thresholds 0.8,0.9,0.95";
    ASSERT_EQ(run("fit --frames " + (case_dir() / "frames").string() + common + " --out " + (root / "fit_raw").string()), 0);
    ASSERT_EQ(run("fit --frames " + (root / "reg_fit" / "warped").string() + common + " --out " + (root / "fit_reg").string()), 0);
    const auto raw = io::read_json(root / "fit_raw" / "summary.json")["survival"].get<std::vector<double>>();
    const auto reg = io::read_json(root / "fit_reg" / "summary.json")["survival"].get<std::vector<double>>();
    for(std::size_t i = 0; i < raw.size(); ++i) EXPECT_GE(reg[i], raw[i]) << i;
}

TEST_F(Cli, BenchReport) {
    const auto out = root / "bench.json";
    ASSERT_EQ(run("bench --lengths 2,4 --size 64 --scales 2 --iters 3 --out " + out.string()), 0);
    const auto r = io::read_json(out);
    EXPECT_TRUE(r["fit"].contains("r2"));
    EXPECT_TRUE(r["fit"].contains("slope_ms_per_frame"));
    EXPECT_EQ(r["runs"].size(), 2u);
    EXPECT_EQ(r["doubling"].size(), 1u);
}
