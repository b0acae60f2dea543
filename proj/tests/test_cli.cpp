#include <opera/checkpoint.hpp>
#include <opera/io.hpp>
#include <opera/synth.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(OPERA_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t line_count(const fs::path& p) {
    const auto text = slurp(p);
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() / ("opera_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        data = (dir / "data.json").string();
        ASSERT_EQ(run_cli("synth --videos 5 --min-frames 20 --max-frames 30 --seed 2 --out " + data), 0);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string path(const std::string& name) const { return (dir / name).string(); }

    fs::path dir;
    std::string data;
};

const std::string kQuick = " --lr 0.003 --epochs 2 --dim 8 --layers 1 --folds 5";

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run_cli(""), 2);
    EXPECT_EQ(run_cli("synth --videos 0 --out " + path("x.json")), 2);
    EXPECT_EQ(run_cli("synth"), 2);  // --out missing
    EXPECT_EQ(run_cli("train --dataset " + data), 2);
    EXPECT_EQ(run_cli("frobnicate"), 2);
    EXPECT_EQ(run_cli("gradcheck --frames 7"), 2);
}

TEST_F(Cli, MissingInputsExitThree) {
    EXPECT_EQ(run_cli("train --dataset " + path("absent.json") + " --out " + path("o")), 3);
    EXPECT_EQ(run_cli("synth --config " + path("absent.json") + " --out " + path("x.json")), 3);
}

TEST_F(Cli, SynthWritesRequestedDataset) {
    const auto ds = opera::load_dataset(data);
    EXPECT_EQ(ds.videos.size(), 5u);
    for (const auto& v : ds.videos) {
        EXPECT_GE(v.frames(), 20u);
        EXPECT_LE(v.frames(), 30u);
    }
}

TEST_F(Cli, TrainWritesOneCsvRowPerFoldPlusMean) {
    ASSERT_EQ(run_cli("train --dataset " + data + " --out " + path("run") + kQuick), 0);
    EXPECT_EQ(line_count(dir / "run" / "metrics.csv"), 1u + 5u + 1u);
    for (int f = 0; f < 5; ++f) EXPECT_TRUE(fs::exists(dir / "run" / ("fold" + std::to_string(f) + ".checkpoint.json")));
    const auto metrics = opera::read_json_file(path("run/metrics.json"));
    EXPECT_EQ(metrics.at("folds").size(), 5u);
}

TEST_F(Cli, LambdaChangesTheTrainedModel) {
    ASSERT_EQ(run_cli("train --dataset " + data + " --out " + path("a") + kQuick + " --lambda 0"), 0);
    ASSERT_EQ(run_cli("train --dataset " + data + " --out " + path("b") + kQuick + " --lambda 1"), 0);
    const auto a = opera::load_checkpoint(path("a/fold0.checkpoint.json"));
    const auto b = opera::load_checkpoint(path("b/fold0.checkpoint.json"));
    EXPECT_NE(a.flat_parameters(), b.flat_parameters());
}

TEST_F(Cli, ConfigFileFillsUnsetOptionsOnly) {
    {
        std::ofstream cfg(path("cfg.json"));
        cfg << R"({"videos": 3, "min-frames": 10, "max-frames": 12, "seed": 9})";
    }
    ASSERT_EQ(run_cli("synth --config " + path("cfg.json") + " --videos 4 --out " + path("c.json")), 0);
    const auto ds = opera::load_dataset(path("c.json"));
    EXPECT_EQ(ds.videos.size(), 4u);  // command line wins
    EXPECT_EQ(ds.config.seed, 9u);
    for (const auto& v : ds.videos) EXPECT_LE(v.frames(), 12u);

    {
        std::ofstream bad(path("bad.json"));
        bad << R"({"vidoes": 3})";
    }
    EXPECT_EQ(run_cli("synth --config " + path("bad.json") + " --out " + path("d.json")), 2);
}

TEST_F(Cli, AblateWritesFourCells) {
    ASSERT_EQ(run_cli("ablate --dataset " + data + " --out " + path("ab") +
                    " --lr 0.003 --epochs 1 --dim 8 --layers-small 1 --layers-large 2 --seeds 0,1"),
              0);
    EXPECT_EQ(line_count(dir / "ab" / "ablation.csv"), 5u);
}

TEST_F(Cli, AttnTracesEveryFrame) {
    ASSERT_EQ(run_cli("train --dataset " + data + " --out " + path("run") + kQuick), 0);
    const auto ds = opera::load_dataset(data);
    const auto& video = ds.videos[1];
    ASSERT_EQ(run_cli("attn --checkpoint " + path("run/fold0.checkpoint.json") + " --dataset " + data + " --video " +
                    video.video_id + " --out " + path("trace.json")),
              0);
    const auto traces = opera::read_json_file(path("trace.json")).at("traces");
    ASSERT_EQ(traces.size(), 1u);
    EXPECT_EQ(traces[0].at("frame_scores").size(), video.frames());
    EXPECT_EQ(run_cli("attn --checkpoint " + path("run/fold0.checkpoint.json") + " --dataset " + data +
                    " --video no_such_video"),
              2);
}

TEST_F(Cli, GradcheckExitCodes) {
    EXPECT_EQ(run_cli("gradcheck"), 0);
    EXPECT_EQ(run_cli("gradcheck --corrupt-analytic"), 4);
    ASSERT_EQ(run_cli("gradcheck --lambda 0 --out " + path("g.json")), 0);
    for (const auto& b : opera::read_json_file(path("g.json")).at("blocks")) {
        if (b.at("objective") == "L_reg") {
            EXPECT_EQ(b.at("status"), "skipped");
        }
    }
}

TEST_F(Cli, CommandsLeaveTheDatasetUntouched) {
    const auto before = slurp(data);
    ASSERT_EQ(run_cli("train --dataset " + data + " --out " + path("run") + kQuick), 0);
    ASSERT_EQ(run_cli("attn --checkpoint " + path("run/fold0.checkpoint.json") + " --dataset " + data + " --out " +
                    path("t.json")),
              0);
    EXPECT_EQ(slurp(data), before);
}
