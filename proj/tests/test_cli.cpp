#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "tvbpr/tvbpr.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(TVBPR_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

// Small synthetic dataset shared by the tests in this file.
class Cli : public testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = fs::temp_directory_path() / ("tvbpr_cli_" + std::to_string(::getpid()));
        fs::remove_all(root_);
        fs::create_directories(root_);
        ASSERT_EQ(run("synth --out " + data().string() +
                      " --users 150 --items 200 --events 1500 --feature-dim 24 --density 0.25 --categories 4 --seed 3"),
                  0);
    }
    static void TearDownTestSuite() { fs::remove_all(root_); }

    static fs::path data() { return root_ / "data"; }
    static std::string inputs() {
        return " --interactions " + (data() / "interactions.tsv").string() + " --features " +
               (data() / "features.txt").string() + " --taxonomy " + (data() / "taxonomy.tsv").string();
    }
    static std::string train(const std::string& name, const std::string& flags) {
        const auto out = root_ / name;
        if (run("train" + inputs() + " --out " + out.string() + " " + flags) != 0) return "";
        return out.string();
    }

    static inline fs::path root_;
};

}  // namespace

TEST_F(Cli, SynthWritesDatasetAndManifest) {
    for (const char* f : {"interactions.tsv", "features.txt", "taxonomy.tsv", "truth.json", "synth_manifest.json"})
        EXPECT_TRUE(fs::exists(data() / f)) << f;
    const auto m = nlohmann::json::parse(slurp(data() / "synth_manifest.json"));
    EXPECT_EQ(m.at("config").at("users"), "150");
    EXPECT_EQ(run("validate" + inputs()), 0);
}

TEST_F(Cli, SynthInfeasibleIsValidationFailure) {
    EXPECT_EQ(run("synth --out " + (root_ / "bad").string() + " --users 100 --events 400"), 1);
}

TEST_F(Cli, BadInputsAreValidationFailures) {
    const auto broken = root_ / "broken.tsv";
    std::ofstream(broken) << "u1\ti1\n";
    EXPECT_EQ(run("validate --interactions " + broken.string()), 1);
    EXPECT_EQ(run("train --interactions " + broken.string() + " --out " + (root_ / "x").string()), 1);
    EXPECT_EQ(run("train" + inputs() + " --out " + (root_ / "y").string() + " --variant nope"), 1);
    EXPECT_EQ(run("train" + inputs() + " --out " + (root_ / "z").string() + " --epochs 5 --bins 3"), 1);
    EXPECT_EQ(run("frobnicate"), 1);
}

TEST_F(Cli, TrainEvalExportPipeline) {
    const auto dir = train("tvbpr_plus", "--variant tvbpr+ --epochs 3 --bins 9 --iterations 4 --refit-period 2 --neg-batch 10 --seed 5");
    ASSERT_FALSE(dir.empty());
    const fs::path out(dir);
    for (const char* f : {"checkpoint.bin", "segments.tsv", "train.log", "manifest.json"}) EXPECT_TRUE(fs::exists(out / f)) << f;
    EXPECT_EQ(lines(out / "segments.tsv").size(), 3u);
    EXPECT_EQ(lines(out / "train.log").size(), 4u);

    const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
    EXPECT_EQ(manifest.at("config").at("epochs"), "3");
    EXPECT_EQ(manifest.at("config").at("bins"), "9");
    EXPECT_EQ(manifest.at("seed"), 5);
    EXPECT_TRUE(manifest.at("inputs").contains("interactions"));
    EXPECT_TRUE(manifest.contains("timings_seconds"));

    const auto ck = (out / "checkpoint.bin").string();
    ASSERT_EQ(run("eval" + inputs() + " --checkpoint " + ck + " --out " + (out / "eval").string() + " --per-user"), 0);
    const auto report = lines(out / "eval" / "report.tsv");
    ASSERT_FALSE(report.empty());
    for (const auto& l : report) EXPECT_EQ(std::count(l.begin(), l.end(), '\t'), 1) << l;
    EXPECT_EQ(lines(out / "eval" / "per_user.csv").size(), 151u);

    const auto feats = " --features " + (data() / "features.txt").string();
    ASSERT_EQ(run("export dims --checkpoint " + ck + feats + " --top 10 --out " + (out / "dims.csv").string()), 0);
    EXPECT_EQ(lines(out / "dims.csv").size(), 1 + 10 * 10u);

    ASSERT_EQ(run("export heatmap --checkpoint " + ck + feats + " --out " + (out / "heat.csv").string()), 0);
    const auto heat = lines(out / "heat.csv");
    EXPECT_EQ(heat.front(), "item_id,epoch,normalized_score");
    const auto loaded = tvbpr::load_checkpoint(ck);
    EXPECT_EQ(heat.size(), 1 + loaded.model.shape.num_items * 3);

    ASSERT_EQ(run("export styles --checkpoint " + ck + " --out " + (out / "styles.csv").string()), 0);
    EXPECT_EQ(lines(out / "styles.csv").front(), "dimension,epoch,weight");
    EXPECT_EQ(lines(out / "styles.csv").size(), 1 + 10 * 3u);
    ASSERT_EQ(run("export segments --checkpoint " + ck + " --out " + (out / "seg.tsv").string()), 0);
    EXPECT_EQ(slurp(out / "seg.tsv"), slurp(out / "segments.tsv"));
    EXPECT_EQ(run("export weights --checkpoint " + ck + " --out " + (out / "w.txt").string()), 0);
}

TEST_F(Cli, EvalModes) {
    const auto dir = train("vbpr", "--variant vbpr --iterations 2 --refit-period 1");
    ASSERT_FALSE(dir.empty());
    const auto ck = (fs::path(dir) / "checkpoint.bin").string();
    ASSERT_EQ(run("eval" + inputs() + " --checkpoint " + ck + " --mode cold --out " + dir + "/cold"), 0);
    const auto text = slurp(fs::path(dir) / "cold" / "report.tsv");
    EXPECT_NE(text.find("auc_cold\t"), std::string::npos);
    EXPECT_EQ(text.find("auc_all\t"), std::string::npos);
    EXPECT_EQ(run("eval" + inputs() + " --checkpoint " + ck + " --mode sideways --out " + dir + "/x"), 1);
}

TEST_F(Cli, EvalRejectsMismatchedData) {
    const auto dir = train("bpr", "--variant bpr-mf --iterations 2 --refit-period 1");
    ASSERT_FALSE(dir.empty());
    const auto other = root_ / "other";
    ASSERT_EQ(run("synth --out " + other.string() + " --users 60 --items 90 --events 600 --feature-dim 8 --seed 4"), 0);
    EXPECT_EQ(run("eval --interactions " + (other / "interactions.tsv").string() + " --checkpoint " + dir +
                  "/checkpoint.bin --out " + dir + "/bad"),
              1);
}

TEST_F(Cli, NonVisualModelsHaveNoVisualExports) {
    const auto dir = train("bpr_only", "--variant bpr-mf --iterations 2 --refit-period 1");
    ASSERT_FALSE(dir.empty());
    const auto ck = tvbpr::load_checkpoint(dir + "/checkpoint.bin");
    std::size_t visual = 0;
    ck.model.for_each_family([&](std::string_view name, std::size_t, std::span<const float> v) {
        if (name == "embedding" || name == "theta_user" || name == "delta_embedding" || name == "visual_bias" ||
            name == "weighting")
            visual += v.size();
    });
    EXPECT_EQ(visual, 0u);
    EXPECT_EQ(run("export dims --checkpoint " + dir + "/checkpoint.bin --features " + (data() / "features.txt").string() +
                  " --out " + dir + "/d.csv"),
              1);
}

TEST_F(Cli, PopBaseline) {
    const auto dir = train("pop", "--variant pop");
    ASSERT_FALSE(dir.empty());
    ASSERT_EQ(run("eval" + inputs() + " --checkpoint " + dir + "/checkpoint.bin --out " + dir + "/eval"), 0);
    EXPECT_NE(slurp(fs::path(dir) / "eval" / "report.tsv").find("variant\tpop"), std::string::npos);
}

TEST_F(Cli, ConfigFileAndFlagPrecedence) {
    const auto cfg = root_ / "train.conf";
    std::ofstream(cfg) << "# small run\nvariant = tvbpr\nepochs = 2\nbins = 4\niterations = 2\nrefit-period = 1\n";
    const auto dir = train("conf", "--config " + cfg.string() + " --epochs 3 --bins 6");
    ASSERT_FALSE(dir.empty());
    const auto m = nlohmann::json::parse(slurp(fs::path(dir) / "manifest.json"));
    EXPECT_EQ(m.at("config").at("variant"), "tvbpr");
    EXPECT_EQ(m.at("config").at("epochs"), "3");
    EXPECT_EQ(lines(fs::path(dir) / "segments.tsv").size(), 3u);
}

TEST_F(Cli, SingleThreadRunsAreByteIdentical) {
    const std::string flags = "--variant tvbpr+ --epochs 2 --bins 6 --iterations 3 --refit-period 1 --threads 1 --seed 2";
    const auto a = train("det_a", flags), b = train("det_b", flags);
    ASSERT_FALSE(a.empty());
    ASSERT_FALSE(b.empty());
    EXPECT_EQ(slurp(fs::path(a) / "checkpoint.bin"), slurp(fs::path(b) / "checkpoint.bin"));
    EXPECT_EQ(slurp(fs::path(a) / "segments.tsv"), slurp(fs::path(b) / "segments.tsv"));
    for (const auto& d : {a, b}) ASSERT_EQ(run("eval" + inputs() + " --threads 1 --checkpoint " + d + "/checkpoint.bin --out " + d + "/eval"), 0);
    EXPECT_EQ(slurp(fs::path(a) / "eval" / "report.tsv"), slurp(fs::path(b) / "eval" / "report.tsv"));
}
