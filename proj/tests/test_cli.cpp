#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace wfdiff;
namespace fs = std::filesystem;

namespace {

struct CommandResult {
    int code = -1;
    std::string out;
    std::string err;
};

class CliTest : public ::testing::Test {
   protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("wfdiff_cli_" + std::to_string(::getpid()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    CommandResult run(const std::string& args) const {
        const std::string out = path("stdout.txt"), err = path("stderr.txt");
        const std::string cmd = std::string(WFDIFF_CLI) + " " + args + " >" + out + " 2>" + err;
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }

    static std::string slurp(const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

    fs::path dir_;
};

std::string corpus(const std::string& name) { return std::string(WFDIFF_DATA_DIR) + "/synthetic/" + name; }

double value_after(const std::string& text, const std::string& key) {
    std::istringstream in(text);
    std::string k, v;
    while (in >> k >> v)
        if (k == key) return parse_number(v);
    throw std::runtime_error("key " + key + " not in output:\n" + text);
}

const char* kTinyConfig = R"({
  "seed": 3,
  "net": {"base_channels": 8, "heads": 4, "dw_kernels": [3], "sdu_kernels": [1, 3]},
  "stage1": {"steps": 3, "log_every": 1},
  "diffusion": {"steps": 5},
  "denoiser": {"base_channels": 4, "time_dim": 8},
  "stage2": {"steps": 3}
})";

}  // namespace

TEST_F(CliTest, DwtIdwtRoundTrip) {
    const auto in = corpus("00_clean.ppm");
    ASSERT_EQ(run("dwt " + in + " --out " + path("b")).code, 0);
    for (const char* s : {".ll", ".lh", ".hl", ".hh"}) EXPECT_TRUE(fs::exists(path(std::string("b") + s)));
    ASSERT_EQ(run("idwt " + path("b") + " --out " + path("rt.ppm")).code, 0);
    EXPECT_GT(psnr(read_ppm<float>(in), read_ppm<float>(path("rt.ppm"))), 50.0);
}

TEST_F(CliTest, DwtOddExtentsWithCrop) {
    Rng r(1);
    const auto img = Tensor<float>::uniform({3, 7, 5}, r, 0.0f, 1.0f);
    write_ppm(img, path("odd.ppm"));
    const auto d = run("dwt " + path("odd.ppm") + " --out " + path("b"));
    ASSERT_EQ(d.code, 0);
    EXPECT_NE(d.err.find("--crop 7x5"), std::string::npos);
    ASSERT_EQ(run("idwt " + path("b") + " --crop 7x5 --out " + path("rt.ppm")).code, 0);
    EXPECT_EQ(fs::file_size(path("rt.ppm")), fs::file_size(path("odd.ppm")));
    EXPECT_GT(psnr(read_ppm<float>(path("odd.ppm")), read_ppm<float>(path("rt.ppm"))), 50.0);
}

TEST_F(CliTest, FftRecombineSelf) {
    const auto in = corpus("01_degraded.ppm");
    ASSERT_EQ(run("fft " + in + " --out " + path("s")).code, 0);
    ASSERT_EQ(run("recombine --amp " + path("s") + " --phase " + path("s") + " --out " + path("rt.wfdt")).code, 0);
    EXPECT_LT(max_abs_diff(load_wfdt<float>(path("rt.wfdt")), read_ppm<float>(in)), 1e-5);
}

TEST_F(CliTest, SwapWritesBothOutputs) {
    const auto a = corpus("02_degraded.ppm"), b = corpus("02_clean.ppm");
    ASSERT_EQ(run("swap " + a + " " + b + " --strategy s3 --out-a " + path("x.wfdt") + " --out-b " + path("y.wfdt")).code,
              0);
    const auto [x, y] = swap_amplitude(read_ppm<float>(a), read_ppm<float>(b), SwapStrategy::all_subbands);
    EXPECT_EQ(max_abs_diff(load_wfdt<float>(path("x.wfdt")), x), 0.0);
    EXPECT_EQ(max_abs_diff(load_wfdt<float>(path("y.wfdt")), y), 0.0);
    EXPECT_EQ(run("swap " + a + " " + b + " --strategy s9 --out-a x --out-b y").code, 2);
}

TEST_F(CliTest, MetricsOfIdenticalImages) {
    const auto in = corpus("03_clean.ppm");
    const auto r = run("metrics " + in + " " + in);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("psnr_db inf"), std::string::npos) << r.out;
    EXPECT_NEAR(value_after(r.out, "ssim"), 1.0, 1e-12);
}

TEST_F(CliTest, AnalyzeMeanRowMatchesRecomputation) {
    const auto r = run("analyze --strategy s3 --pairs " + corpus("manifest.csv") + " --out " + path("report.csv"));
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream in(slurp(path("report.csv")));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "pair_id,psnr_db,ssim");
    double sp = 0, ss = 0;
    std::size_t n = 0;
    bool saw_mean = false;
    while (std::getline(in, line)) {
        std::vector<std::string> cols;
        std::stringstream ls(line);
        for (std::string c; std::getline(ls, c, ',');) cols.push_back(c);
        ASSERT_EQ(cols.size(), 3u);
        if (cols[0] == "mean") {
            saw_mean = true;
            EXPECT_NEAR(parse_number(cols[1]), sp / double(n), 1e-9);
            EXPECT_NEAR(parse_number(cols[2]), ss / double(n), 1e-12);
        } else {
            EXPECT_EQ(cols[0], std::to_string(n));
            sp += parse_number(cols[1]);
            ss += parse_number(cols[2]);
            ++n;
        }
    }
    EXPECT_TRUE(saw_mean);
    EXPECT_EQ(n, 24u);
    const auto to_stdout = run("analyze --strategy s3 --pairs " + corpus("manifest.csv"));
    EXPECT_EQ(to_stdout.out, slurp(path("report.csv")));
}

TEST_F(CliTest, UsageErrorsExitTwo) {
    const auto r = run("dwt " + corpus("00_clean.ppm") + " --out x --bogus");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("--bogus"), std::string::npos);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("dwt").code, 2);
}

TEST_F(CliTest, RuntimeErrorsExitOne) {
    const auto r = run("metrics " + path("missing.ppm") + " " + path("missing.ppm"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("error:"), std::string::npos);
    write("bad.json", R"({"net": {"layers": 2}})");
    EXPECT_EQ(run("train-stage1 --config " + path("bad.json") + " --out " + path("c.wfck")).code, 1);
    EXPECT_EQ(run("metrics " + corpus("00_clean.ppm") + " " + path("odd.ppm")).code, 1);
    EXPECT_EQ(run("enhance --checkpoint " + path("nope.wfck") + " --input " + corpus("00_clean.ppm") + " --out " +
                  path("o.ppm"))
                  .code,
              1);
}

TEST_F(CliTest, TrainingSampleAndEnhancePipeline) {
    write("tiny.json", kTinyConfig);
    const std::string s1 = "train-stage1 --config " + path("tiny.json") + " --synthetic-size 16 --out ";
    const auto t1 = run(s1 + path("s1.wfck"));
    ASSERT_EQ(t1.code, 0) << t1.err;
    EXPECT_TRUE(std::isfinite(value_after(t1.out, "final_loss")));
    ASSERT_EQ(run(s1 + path("s1b.wfck")).code, 0);
    EXPECT_EQ(slurp(path("s1.wfck")), slurp(path("s1b.wfck")));

    const auto t2 = run("train-stage2 --stage1 " + path("s1.wfck") + " --synthetic-size 16 --out " + path("s2.wfck"));
    ASSERT_EQ(t2.code, 0) << t2.err;
    EXPECT_TRUE(std::isfinite(value_after(t2.out, "hdfb_final_avg")));

    Rng r(5);
    write_ppm(Tensor<float>::uniform({3, 10, 14}, r, 0.0f, 1.0f), path("in.ppm"));
    const std::string in = " --input " + path("in.ppm");
    ASSERT_EQ(run("sample --checkpoint " + path("s2.wfck") + in + " --seed 4 --steps 4 --out " + path("a.ppm")).code, 0);
    ASSERT_EQ(run("sample --checkpoint " + path("s2.wfck") + in + " --seed 4 --steps 4 --out " + path("b.ppm")).code, 0);
    EXPECT_EQ(slurp(path("a.ppm")), slurp(path("b.ppm")));
    EXPECT_EQ(read_ppm<float>(path("a.ppm")).shape(), (Shape{3, 10, 14}));

    ASSERT_EQ(run("enhance --checkpoint " + path("s1.wfck") + in + " --out " + path("e.ppm")).code, 0);
    EXPECT_EQ(read_ppm<float>(path("e.ppm")).shape(), (Shape{3, 10, 14}));
    ASSERT_EQ(run("enhance --adjust --checkpoint " + path("s2.wfck") + in + " --seed 1 --out " + path("f.ppm")).code, 0);
    EXPECT_EQ(run("enhance --adjust --checkpoint " + path("s1.wfck") + in + " --out " + path("g.ppm")).code, 1);
    EXPECT_EQ(run("sample --checkpoint " + path("s1.wfck") + in + " --out " + path("g.ppm")).code, 1);
}
