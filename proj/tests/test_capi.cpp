#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <msgnn.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace {

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "msgnn_capi_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

msgnn_image* make_gradient_image(int h, int w) {
    std::vector<float> px(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                px[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    (static_cast<float>(x) / w + static_cast<float>(y) / h + c * 0.1f) / 2.5f;
    msgnn_image* img = nullptr;
    REQUIRE(msgnn_image_create(h, w, px.data(), &img) == MSGNN_OK);
    return img;
}

const char* kTinyConfig =
    "N=2\nM=1\nchannels=8\nk=2\n";

}  // namespace

TEST_CASE("status kinds are stable strings") {
    CHECK(std::string(msgnn_status_kind(MSGNN_OK)) == "ok");
    CHECK(std::string(msgnn_status_kind(MSGNN_ERR_PNG_DEPTH)) == "png-depth");
    CHECK(std::string(msgnn_status_kind(MSGNN_ERR_CONFIG)) == "config");
    CHECK(msgnn_version() != nullptr);
}

TEST_CASE("image round trip through the C surface") {
    auto* img = make_gradient_image(24, 16);
    CHECK(msgnn_image_height(img) == 24);
    CHECK(msgnn_image_width(img) == 16);

    const auto path = (temp_dir() / "capi.png").string();
    REQUIRE(msgnn_image_save_png(img, path.c_str()) == MSGNN_OK);
    msgnn_image* back = nullptr;
    REQUIRE(msgnn_image_load_png(path.c_str(), &back) == MSGNN_OK);

    std::vector<float> a(24 * 16 * 3), b(24 * 16 * 3);
    REQUIRE(msgnn_image_pixels(img, a.data()) == MSGNN_OK);
    REQUIRE(msgnn_image_pixels(back, b.data()) == MSGNN_OK);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1.0f / 255.0f + 1e-6f);

    msgnn_image_free(img);
    msgnn_image_free(back);
}

TEST_CASE("load errors carry distinct statuses and messages") {
    msgnn_image* img = nullptr;
    CHECK(msgnn_image_load_png("/no/such/file.png", &img) == MSGNN_ERR_IO);
    CHECK(std::strlen(msgnn_last_error()) > 0);
    CHECK(msgnn_image_load_png(nullptr, &img) == MSGNN_ERR_CONTRACT);
}

TEST_CASE("synth + metrics through the C surface") {
    auto* clean = make_gradient_image(32, 32);
    msgnn_image *rainy = nullptr, *streaks = nullptr;
    REQUIRE(msgnn_synth_rain(clean, 0.03, 10.0, 9, 0.7, 42, &rainy, &streaks) == MSGNN_OK);

    double self_psnr = 0, cross_psnr = 0, cross_ssim = 0;
    REQUIRE(msgnn_psnr(clean, clean, &self_psnr) == MSGNN_OK);
    CHECK(std::isinf(self_psnr));
    REQUIRE(msgnn_psnr(clean, rainy, &cross_psnr) == MSGNN_OK);
    CHECK(cross_psnr > 0.0);
    CHECK(std::isfinite(cross_psnr));
    REQUIRE(msgnn_ssim(clean, rainy, &cross_ssim) == MSGNN_OK);
    CHECK(cross_ssim < 1.0);

    // invalid rain parameters surface as contract errors
    msgnn_image* bad = nullptr;
    CHECK(msgnn_synth_rain(clean, 0.9, 10.0, 9, 0.7, 42, &bad, nullptr) == MSGNN_ERR_CONTRACT);

    msgnn_image_free(clean);
    msgnn_image_free(rainy);
    msgnn_image_free(streaks);
}

TEST_CASE("model lifecycle: create, count, derain, save, load") {
    msgnn_model* model = nullptr;
    REQUIRE(msgnn_model_create(kTinyConfig, 5, &model) == MSGNN_OK);

    const std::int64_t total = msgnn_model_param_count(model);
    CHECK(total > 0);
    std::int64_t group_sum = 0;
    for (int i = 0; i < msgnn_model_param_group_count(model); ++i) {
        const char* name = nullptr;
        std::int64_t count = 0;
        REQUIRE(msgnn_model_param_group(model, i, &name, &count) == MSGNN_OK);
        CHECK(name != nullptr);
        group_sum += count;
    }
    CHECK(group_sum == total);

    // fresh model has a zero tail: derain returns the input
    auto* input = make_gradient_image(32, 32);
    msgnn_image *bg = nullptr, *res = nullptr;
    REQUIRE(msgnn_model_derain(model, input, nullptr, &bg, &res) == MSGNN_OK);
    std::vector<float> in_px(32 * 32 * 3), out_px(32 * 32 * 3), res_px(32 * 32 * 3);
    REQUIRE(msgnn_image_pixels(input, in_px.data()) == MSGNN_OK);
    REQUIRE(msgnn_image_pixels(bg, out_px.data()) == MSGNN_OK);
    REQUIRE(msgnn_image_pixels(res, res_px.data()) == MSGNN_OK);
    CHECK(in_px == out_px);
    for (float v : res_px) CHECK(v == 0.0f);

    const auto ckpt = (temp_dir() / "capi_model.msgnn").string();
    REQUIRE(msgnn_model_save(model, ckpt.c_str()) == MSGNN_OK);
    msgnn_model* loaded = nullptr;
    REQUIRE(msgnn_model_load(ckpt.c_str(), &loaded) == MSGNN_OK);
    CHECK(msgnn_model_param_count(loaded) == total);

    msgnn_model* broken = nullptr;
    CHECK(msgnn_model_create("bogus_key=3\n", 0, &broken) == MSGNN_ERR_CONFIG);
    CHECK(std::string(msgnn_last_error()).find("bogus_key") != std::string::npos);

    msgnn_image_free(input);
    msgnn_image_free(bg);
    msgnn_image_free(res);
    msgnn_model_free(model);
    msgnn_model_free(loaded);
}

TEST_CASE("train + evaluate through the C surface") {
    // tiny synthetic dataset on disk
    const auto root = (temp_dir() / "capi_data").string();
    std::filesystem::create_directories(root + "/rain");
    std::filesystem::create_directories(root + "/norain");
    for (int i = 0; i < 3; ++i) {
        auto* clean = make_gradient_image(48, 48);
        msgnn_image* rainy = nullptr;
        REQUIRE(msgnn_synth_rain(clean, 0.03, 10.0, 9, 0.7, static_cast<uint64_t>(i), &rainy, nullptr) == MSGNN_OK);
        const std::string name = "im" + std::to_string(i) + ".png";
        REQUIRE(msgnn_image_save_png(clean, (root + "/norain/" + name).c_str()) == MSGNN_OK);
        REQUIRE(msgnn_image_save_png(rainy, (root + "/rain/" + name).c_str()) == MSGNN_OK);
        msgnn_image_free(clean);
        msgnn_image_free(rainy);
    }

    const auto out = (temp_dir() / "capi_train").string();
    const char* overrides = "epochs=1\nbatch=1\ncrop=32\nmilestones=\nseed=3\n";
    int epochs_seen = 0;
    auto progress = [](int, double loss, double, double, void* user) {
        ++*static_cast<int*>(user);
        CHECK(loss >= -1.0);
        CHECK(loss <= 1.0);
    };
    REQUIRE(msgnn_train(root.c_str(), kTinyConfig, overrides, out.c_str(), nullptr, progress, &epochs_seen) ==
            MSGNN_OK);
    CHECK(epochs_seen == 1);

    msgnn_eval_result* result = nullptr;
    REQUIRE(msgnn_evaluate(root.c_str(), (out + "/model_final.msgnn").c_str(), nullptr, &result) == MSGNN_OK);
    REQUIRE(msgnn_eval_row_count(result) == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::isfinite(msgnn_eval_row_psnr(result, i)));
        CHECK(msgnn_eval_row_ssim(result, i) <= 1.0);
        CHECK(std::strlen(msgnn_eval_row_name(result, i)) > 0);
    }
    CHECK(std::isfinite(msgnn_eval_mean_psnr(result)));
    msgnn_eval_result_free(result);

    // missing dataset surfaces as a dataset error
    msgnn_eval_result* nope = nullptr;
    CHECK(msgnn_evaluate("/no/such/dir", (out + "/model_final.msgnn").c_str(), nullptr, &nope) ==
          MSGNN_ERR_DATASET);
}
