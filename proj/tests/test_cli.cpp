#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "msgnn/checkpoint.hpp"
#include "msgnn/png_io.hpp"
#include "msgnn/rng.hpp"

using namespace msgnn;
namespace fs = std::filesystem;

namespace {

const std::string kCli = MSGNN_CLI_BIN;

fs::path temp_root() {
    auto dir = fs::temp_directory_path() / "msgnn_cli_tests";
    fs::create_directories(dir);
    return dir;
}

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
    const auto log = temp_root() / "run.log";
    const std::string cmd = kCli + " " + args + " > " + log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    std::ifstream f(log);
    std::string output((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return {rc == -1 ? -1 : WEXITSTATUS(rc), output};
}

std::string slurp(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_clean_images(const fs::path& dir, int count, int size) {
    fs::create_directories(dir);
    for (int i = 0; i < count; ++i) {
        Rng rng(static_cast<std::uint64_t>(i) + 77);
        Image img(size, size);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const float base = 0.2f + 0.6f * static_cast<float>(rng.uniform());
                for (int c = 0; c < 3; ++c)
                    img.at(y, x, c) = base * (0.5f + 0.5f * static_cast<float>(x + y + c) / (2.0f * size));
            }
        char name[32];
        std::snprintf(name, sizeof name, "clean%02d.png", i);
        save_png(img, (dir / name).string());
    }
}

}  // namespace

TEST_CASE("synth: generates pairs with a manifest, byte-identical across reruns") {
    const auto clean = temp_root() / "clean";
    write_clean_images(clean, 2, 32);

    const auto out1 = temp_root() / "synth1";
    const auto out2 = temp_root() / "synth2";
    fs::remove_all(out1);
    fs::remove_all(out2);

    const std::string flags = " --count 2 --seed 5 --clean-dir " + clean.string();
    auto r1 = run_cli("synth" + flags + " --out-dir " + out1.string());
    REQUIRE(r1.exit_code == 0);
    auto r2 = run_cli("synth" + flags + " --out-dir " + out2.string());
    REQUIRE(r2.exit_code == 0);

    CHECK(fs::exists(out1 / "rain" / "clean00.png"));
    CHECK(fs::exists(out1 / "norain" / "clean00.png"));
    CHECK(fs::exists(out1 / "manifest.tsv"));
    CHECK(slurp(out1 / "manifest.tsv") == slurp(out2 / "manifest.tsv"));
    CHECK(slurp(out1 / "rain" / "clean01.png") == slurp(out2 / "rain" / "clean01.png"));

    // degenerate intensity: rain equals norain after quantization
    const auto out3 = temp_root() / "synth3";
    auto r3 = run_cli("synth --count 1 --seed 5 --intensity 0.000001 --clean-dir " + clean.string() +
                      " --out-dir " + out3.string());
    REQUIRE(r3.exit_code == 0);
    const Image a = load_png((out3 / "rain" / "clean00.png").string());
    const Image b = load_png((out3 / "norain" / "clean00.png").string());
    float worst = 0.0f;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) worst = std::max(worst, std::abs(a.pixels[i] - b.pixels[i]));
    CHECK(worst <= 1.0f / 255.0f + 1e-6f);
}

TEST_CASE("train rejects a bad config key by name before any compute") {
    const auto cfg = temp_root() / "bad.cfg";
    {
        std::ofstream f(cfg);
        f << "channels=8\nnot_a_key=1\n";
    }
    auto r = run_cli("train --data /nonexistent --config " + cfg.string() + " --out " +
                     (temp_root() / "nope").string());
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("error:config:") != std::string::npos);
    CHECK(r.output.find("not_a_key") != std::string::npos);
}

TEST_CASE("derain with a fresh checkpoint is the identity and reruns byte-identically") {
    const auto clean = temp_root() / "clean";
    write_clean_images(clean, 2, 32);
    const auto data = temp_root() / "derain_data";
    fs::remove_all(data);
    REQUIRE(run_cli("synth --count 2 --seed 9 --clean-dir " + clean.string() + " --out-dir " + data.string())
                .exit_code == 0);

    // one-step training budget writes a checkpoint quickly
    const auto cfg = temp_root() / "tiny.cfg";
    {
        std::ofstream f(cfg);
        f << "N=2\nM=1\nchannels=8\nk=2\nepochs=1\nbatch=1\ncrop=32\nmilestones=\nsteps=1\n";
    }
    const auto train_out = temp_root() / "derain_train";
    fs::remove_all(train_out);
    REQUIRE(run_cli("train --quiet --data " + data.string() + " --config " + cfg.string() + " --out " +
                    train_out.string() + " --seed 3")
                .exit_code == 0);
    const std::string ckpt = (train_out / "model_final.msgnn").string();

    const auto derained1 = temp_root() / "derained1.png";
    const auto derained2 = temp_root() / "derained2.png";
    const auto grid = temp_root() / "grid.png";
    const std::string input = (data / "rain" / "clean00.png").string();
    auto r1 = run_cli("derain --input " + input + " --checkpoint " + ckpt + " --output " + derained1.string() +
                      " --residual " + (temp_root() / "res.png").string() + " --grid " + grid.string());
    REQUIRE(r1.exit_code == 0);
    auto r2 = run_cli("derain --input " + input + " --checkpoint " + ckpt + " --output " + derained2.string());
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(derained1) == slurp(derained2));

    const Image in_img = load_png(input);
    const Image out_img = load_png(derained1.string());
    CHECK(out_img.height == in_img.height);
    CHECK(out_img.width == in_img.width);
    const Image grid_img = load_png(grid.string());
    CHECK(grid_img.width == 3 * in_img.width);

    // missing checkpoint: single-line machine-parseable error
    auto r3 = run_cli("derain --input " + input + " --checkpoint /nope.msgnn --output /tmp/x.png");
    CHECK(r3.exit_code == 1);
    CHECK(r3.output.find("error:io:") != std::string::npos);
}

TEST_CASE("derain with a zero-tail checkpoint reproduces the input within quantization") {
    const auto clean = temp_root() / "clean";
    write_clean_images(clean, 1, 32);

    MsgnnConfig cfg;
    cfg.subnets = 2;
    cfg.blocks = 1;
    cfg.channels = 8;
    cfg.k = 2;
    const auto ckpt = temp_root() / "zero_tail.msgnn";
    save_checkpoint(Model(cfg, 5), ckpt.string());

    const auto out = temp_root() / "identity.png";
    auto r = run_cli("derain --input " + (clean / "clean00.png").string() + " --checkpoint " + ckpt.string() +
                     " --output " + out.string());
    REQUIRE(r.exit_code == 0);

    const Image a = load_png((clean / "clean00.png").string());
    const Image b = load_png(out.string());
    float worst = 0.0f;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) worst = std::max(worst, std::abs(a.pixels[i] - b.pixels[i]));
    CHECK(worst <= 1.0f / 255.0f + 1e-6f);
}

TEST_CASE("eval emits matching text table and CSV") {
    const auto clean = temp_root() / "clean";
    write_clean_images(clean, 2, 32);
    const auto data = temp_root() / "eval_data";
    fs::remove_all(data);
    REQUIRE(run_cli("synth --count 2 --seed 11 --clean-dir " + clean.string() + " --out-dir " + data.string())
                .exit_code == 0);

    const auto cfg = temp_root() / "tiny2.cfg";
    {
        std::ofstream f(cfg);
        f << "N=2\nM=1\nchannels=8\nk=2\nepochs=1\nbatch=1\ncrop=32\nmilestones=\nsteps=1\n";
    }
    const auto train_out = temp_root() / "eval_train";
    fs::remove_all(train_out);
    REQUIRE(run_cli("train --quiet --data " + data.string() + " --config " + cfg.string() + " --out " +
                    train_out.string() + " --seed 4")
                .exit_code == 0);

    const auto csv = temp_root() / "report.csv";
    auto r = run_cli("eval --data " + data.string() + " --checkpoint " + (train_out / "model_final.msgnn").string() +
                     " --report " + csv.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("mean") != std::string::npos);

    const std::string csv_text = slurp(csv);
    CHECK(csv_text.find("image,psnr,ssim") != std::string::npos);
    // every CSV number appears verbatim in the text table
    std::stringstream ss(csv_text);
    std::string line;
    std::getline(ss, line);  // header
    while (std::getline(ss, line)) {
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        REQUIRE(c2 != std::string::npos);
        CHECK(r.output.find(line.substr(c1 + 1, c2 - c1 - 1)) != std::string::npos);
        CHECK(r.output.find(line.substr(c2 + 1)) != std::string::npos);
    }
}

TEST_CASE("params prints a breakdown that sums to the total and grows with N") {
    auto r_default = run_cli("params");
    REQUIRE(r_default.exit_code == 0);
    CHECK(r_default.output.find("total") != std::string::npos);

    const auto cfg2 = temp_root() / "n2.cfg";
    {
        std::ofstream f(cfg2);
        f << "N=2\n";
    }
    auto r2 = run_cli("params --config " + cfg2.string());
    REQUIRE(r2.exit_code == 0);

    auto total_of = [](const std::string& out) {
        const auto pos = out.find("total");
        REQUIRE(pos != std::string::npos);
        return std::stoll(out.substr(pos + 5));
    };
    auto sum_groups = [](const std::string& out) {
        long long sum = 0;
        std::stringstream ss(out);
        std::string name;
        long long v;
        while (ss >> name >> v)
            if (name != "total") sum += v;
        return sum;
    };
    CHECK(total_of(r2.output) < total_of(r_default.output));
    CHECK(sum_groups(r_default.output) == total_of(r_default.output));
}

TEST_CASE("unknown flags and missing subcommand fail with usage errors") {
    auto r = run_cli("synth --banana 1");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("error:usage:") != std::string::npos);

    auto r2 = run_cli("");
    CHECK(r2.exit_code == 1);

    auto r3 = run_cli("--help");
    CHECK(r3.exit_code == 0);
}
