#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "msgnn/png_io.hpp"
#include "msgnn/rain.hpp"
#include "msgnn/trainer.hpp"
#include "oracles.hpp"

using namespace msgnn;

namespace {

std::filesystem::path temp_root() {
    auto dir = std::filesystem::temp_directory_path() / "msgnn_trainer_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

Image random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Image img(h, w);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
    return img;
}

std::vector<DatasetEntry> toy_dataset(int count, int size, std::uint64_t seed) {
    std::vector<DatasetEntry> entries;
    for (int i = 0; i < count; ++i) {
        DatasetEntry e;
        char name[16];
        std::snprintf(name, sizeof name, "img%03d", i);
        e.name = name;
        e.clean = random_image(size, size, seed + static_cast<std::uint64_t>(i));
        RainParams p;
        p.seed = seed * 1000 + static_cast<std::uint64_t>(i);
        e.rainy = synth_rain(e.clean, p).rainy;
        entries.push_back(std::move(e));
    }
    return entries;
}

Config tiny_train_config() {
    Config cfg;
    cfg.model.subnets = 2;
    cfg.model.blocks = 1;
    cfg.model.channels = 8;
    cfg.model.k = 2;
    cfg.train.epochs = 2;
    cfg.train.batch = 1;
    cfg.train.crop = 32;
    cfg.train.milestones = {};
    cfg.train.seed = 7;
    cfg.train.checkpoint_interval = 1;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("ssim_loss: self gives -1, bounds hold") {
    const Image a = random_image(32, 32, 1);
    auto t = image_to_tensor<float>(a);
    CHECK(ssim_loss(t, t).item() == doctest::Approx(-1.0).epsilon(1e-6));

    for (std::uint64_t s = 0; s < 10; ++s) {
        auto x = image_to_tensor<float>(random_image(16, 16, 100 + s));
        auto y = image_to_tensor<float>(random_image(16, 16, 200 + s));
        const float v = ssim_loss(x, y).item();
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("adam_step: zero gradient leaves parameters unchanged") {
    ParamStore<float> store;
    const int id = store.add("w", {3}, {1.0f, -2.0f, 0.5f});
    GradientMap<float> grads;
    grads.accumulate(id, {3}, {0.0f, 0.0f, 0.0f});
    AdamState state;
    adam_step(store, grads, state, 0.1);
    CHECK(state.step == 1);
    CHECK(store.values(id) == std::vector<float>{1.0f, -2.0f, 0.5f});
}

TEST_CASE("adam_step: first unit-gradient step moves by about -lr") {
    ParamStore<float> store;
    const int id = store.add("w", {1}, {0.0f});
    GradientMap<float> grads;
    grads.accumulate(id, {1}, {1.0f});
    AdamState state;
    adam_step(store, grads, state, 0.1);
    CHECK(store.values(id)[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam_step: missing gradient is a contract error naming the parameter") {
    ParamStore<float> store;
    store.add("w", {1}, {0.0f});
    store.add("lonely", {1}, {0.0f});
    GradientMap<float> grads;
    grads.accumulate(0, {1}, {1.0f});
    AdamState state;
    CHECK_THROWS_WITH_AS(adam_step(store, grads, state, 0.1), doctest::Contains("lonely"), ContractError);
}

TEST_CASE("adam trajectory on w^2 matches the scalar oracle") {
    ParamStore<float> store;
    const int id = store.add("w", {1}, {1.0f});
    AdamState state;
    oracle::AdamScalarRef ref;
    float w_ref = 1.0f;
    for (int step = 0; step < 10; ++step) {
        const float w = store.values(id)[0];
        GradientMap<float> grads;
        grads.accumulate(id, {1}, {2.0f * w});
        adam_step(store, grads, state, 0.1);
        w_ref = ref.step(w_ref, 2.0 * static_cast<double>(w_ref), 0.1);
        CHECK(store.values(id)[0] == doctest::Approx(w_ref).epsilon(1e-7));
    }
}

TEST_CASE("adam trajectories mirror under sign flip of a symmetric objective") {
    ParamStore<float> pos, neg;
    const int a = pos.add("w", {1}, {0.7f});
    const int b = neg.add("w", {1}, {-0.7f});
    AdamState sa, sb;
    for (int step = 0; step < 20; ++step) {
        GradientMap<float> ga, gb;
        ga.accumulate(a, {1}, {2.0f * pos.values(a)[0]});
        gb.accumulate(b, {1}, {2.0f * neg.values(b)[0]});
        adam_step(pos, ga, sa, 0.05);
        adam_step(neg, gb, sb, 0.05);
        CHECK(pos.values(a)[0] == doctest::Approx(-neg.values(b)[0]).epsilon(1e-7));
    }
}

TEST_CASE("lr_at: schedule boundaries") {
    TrainConfig cfg;
    CHECK(lr_at(0, cfg) == doctest::Approx(5e-4));
    CHECK(lr_at(299, cfg) == doctest::Approx(5e-4));
    CHECK(lr_at(300, cfg) == doctest::Approx(5e-5));
    CHECK(lr_at(399, cfg) == doctest::Approx(5e-5));
    CHECK(lr_at(400, cfg) == doctest::Approx(5e-6));
    CHECK(lr_at(499, cfg) == doctest::Approx(5e-6));
    CHECK_THROWS_AS(lr_at(500, cfg), ContractError);

    int drops = 0;
    for (int e = 1; e < cfg.epochs; ++e)
        if (lr_at(e, cfg) != lr_at(e - 1, cfg)) ++drops;
    CHECK(drops == 2);
}

TEST_CASE("sample_exemplar: singleton dataset waives exclusion; draws are deterministic") {
    auto data = toy_dataset(1, 32, 5);
    Rng rng(1);
    const Image ex = sample_exemplar(data, rng, 0, 16);
    CHECK(ex.height == 16);

    auto data5 = toy_dataset(5, 32, 6);
    Rng r1(42), r2(42);
    for (int i = 0; i < 50; ++i) {
        const int a = sample_exemplar_index(5, r1, i % 5);
        const int b = sample_exemplar_index(5, r2, i % 5);
        CHECK(a == b);
        CHECK(a != i % 5);
    }
}

TEST_CASE("sample_exemplar: draw frequencies are near uniform over 10k draws") {
    Rng rng(2024);
    int counts[5] = {0, 0, 0, 0, 0};
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) ++counts[sample_exemplar_index(5, rng, -1)];
    for (int c : counts) {
        const double freq = static_cast<double>(c) / draws;
        CHECK(freq == doctest::Approx(0.2).epsilon(0.05));
    }
}

TEST_CASE("train: one epoch on two images completes and writes a loadable checkpoint") {
    auto data = toy_dataset(2, 48, 7);
    Config cfg = tiny_train_config();
    cfg.train.epochs = 1;
    const auto out = (temp_root() / "smoke").string();
    std::filesystem::remove_all(out);
    const auto result = train(data, cfg, out);
    REQUIRE(result.epochs.size() == 1);
    CHECK(result.epochs[0].loss <= 1.0);
    CHECK(result.epochs[0].loss >= -1.0);

    Model restored = load_checkpoint(result.final_checkpoint);
    CHECK(restored.config().channels == cfg.model.channels);
    CHECK(std::filesystem::exists(out + "/metrics.log"));
    CHECK(std::filesystem::exists(out + "/steps.log"));
}

TEST_CASE("train: identical seeds give byte-identical logs; resume matches uninterrupted") {
    auto data = toy_dataset(5, 48, 8);
    Config cfg = tiny_train_config();
    cfg.train.epochs = 4;

    const auto out_a = (temp_root() / "run_a").string();
    const auto out_b = (temp_root() / "run_b").string();
    std::filesystem::remove_all(out_a);
    std::filesystem::remove_all(out_b);
    train(data, cfg, out_a);
    train(data, cfg, out_b);
    CHECK(slurp(out_a + "/metrics.log") == slurp(out_b + "/metrics.log"));
    CHECK(slurp(out_a + "/steps.log") == slurp(out_b + "/steps.log"));

    // truncated run: stop after 2 epochs' worth of steps, then resume
    Config half = cfg;
    half.train.steps = 2 * 4;  // 4 train images (1 held out of 5), batch 1
    const auto out_c = (temp_root() / "run_c").string();
    std::filesystem::remove_all(out_c);
    const auto part = train(data, half, out_c);

    const auto out_d = (temp_root() / "run_d").string();
    std::filesystem::remove_all(out_d);
    train(data, cfg, out_d, part.final_checkpoint);

    // the resumed log must be the tail of the uninterrupted one
    const std::string full_log = slurp(out_a + "/metrics.log");
    const std::string resumed = slurp(out_d + "/metrics.log");
    REQUIRE(resumed.size() < full_log.size());
    CHECK(full_log.substr(full_log.size() - resumed.size()) == resumed);
}

TEST_CASE("evaluate: zero-tail model reproduces the rainy-vs-clean baseline") {
    auto data = toy_dataset(3, 48, 9);
    Model model(tiny_train_config().model, 3);  // fresh model: identity

    const auto report = evaluate(data, model);
    REQUIRE(report.rows.size() == 3);
    double mean_psnr = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double base_psnr = psnr(data[i].rainy, data[i].clean);
        const double base_ssim = ssim(data[i].rainy, data[i].clean);
        CHECK(report.rows[i].psnr == doctest::Approx(base_psnr).epsilon(1e-9));
        CHECK(report.rows[i].ssim == doctest::Approx(base_ssim).epsilon(1e-9));
        mean_psnr += base_psnr;
    }
    CHECK(report.mean_psnr == doctest::Approx(mean_psnr / 3).epsilon(1e-12));

    // ground truth against itself: sentinel metrics
    std::vector<DatasetEntry> self = data;
    for (auto& e : self) e.rainy = e.clean;
    const auto ideal = evaluate(self, model);
    CHECK(std::isinf(ideal.rows[0].psnr));
    CHECK(ideal.rows[0].ssim == doctest::Approx(1.0));
}

TEST_CASE("load_dataset rejects unpaired files listing every offender") {
    const auto root = temp_root() / "unpaired";
    std::filesystem::remove_all(root);
    std::filesystem::create_directories(root / "rain");
    std::filesystem::create_directories(root / "norain");
    const Image img = random_image(16, 16, 1);
    save_png(img, (root / "rain" / "a.png").string());
    save_png(img, (root / "norain" / "a.png").string());
    save_png(img, (root / "rain" / "only_rainy.png").string());
    save_png(img, (root / "norain" / "only_clean.png").string());
    try {
        load_dataset(root.string());
        FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("only_rainy") != std::string::npos);
        CHECK(msg.find("only_clean") != std::string::npos);
    }

    std::filesystem::remove((root / "rain" / "only_rainy.png"));
    std::filesystem::remove((root / "norain" / "only_clean.png"));
    CHECK(load_dataset(root.string()).size() == 1);
}

TEST_CASE("ssim_loss gradient matches finite differences on a random pair") {
    Rng rng(99);
    ParamStore<double> store;
    std::vector<double> av(3 * 16 * 16), bv(3 * 16 * 16);
    for (auto& v : av) v = rng.uniform(0.1, 0.9);
    for (auto& v : bv) v = rng.uniform(0.1, 0.9);
    const int id = store.add("estimate", {3, 16, 16}, av);
    auto f = [&]() { return ssim_loss(store.leaf(id), TensorT<double>::from_vector({3, 16, 16}, bv)); };
    CHECK(finite_diff_check<double>(f, store, 1e-3) < 1e-3);
}
