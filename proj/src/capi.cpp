#include "msgnn.h"

#include <cstring>
#include <string>

#include "msgnn/checkpoint.hpp"
#include "msgnn/dataset.hpp"
#include "msgnn/errors.hpp"
#include "msgnn/metrics.hpp"
#include "msgnn/png_io.hpp"
#include "msgnn/rain.hpp"
#include "msgnn/trainer.hpp"

using namespace msgnn;

struct msgnn_image {
    Image img;
};

struct msgnn_model {
    Model model;
    std::vector<std::pair<std::string, std::int64_t>> breakdown;
};

struct msgnn_eval_result {
    EvalReport report;
};

namespace {

thread_local std::string g_last_error;

msgnn_status status_of(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::io: return MSGNN_ERR_IO;
        case ErrorKind::png_format: return MSGNN_ERR_PNG_FORMAT;
        case ErrorKind::png_depth: return MSGNN_ERR_PNG_DEPTH;
        case ErrorKind::dimension: return MSGNN_ERR_DIMENSION;
        case ErrorKind::contract: return MSGNN_ERR_CONTRACT;
        case ErrorKind::config: return MSGNN_ERR_CONFIG;
        case ErrorKind::checkpoint: return MSGNN_ERR_CHECKPOINT;
        case ErrorKind::dataset: return MSGNN_ERR_DATASET;
        case ErrorKind::unsupported: return MSGNN_ERR_UNSUPPORTED;
    }
    return MSGNN_ERR_UNKNOWN;
}

template <typename Fn>
msgnn_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return MSGNN_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MSGNN_ERR_UNKNOWN;
    }
}

msgnn_status require(bool cond, const char* message) {
    if (cond) return MSGNN_OK;
    g_last_error = message;
    return MSGNN_ERR_CONTRACT;
}

}  // namespace

extern "C" {

const char* msgnn_version(void) { return "1.0.0"; }

const char* msgnn_last_error(void) { return g_last_error.c_str(); }

const char* msgnn_status_kind(msgnn_status status) {
    switch (status) {
        case MSGNN_OK: return "ok";
        case MSGNN_ERR_IO: return error_kind_name(ErrorKind::io);
        case MSGNN_ERR_PNG_FORMAT: return error_kind_name(ErrorKind::png_format);
        case MSGNN_ERR_PNG_DEPTH: return error_kind_name(ErrorKind::png_depth);
        case MSGNN_ERR_DIMENSION: return error_kind_name(ErrorKind::dimension);
        case MSGNN_ERR_CONTRACT: return error_kind_name(ErrorKind::contract);
        case MSGNN_ERR_CONFIG: return error_kind_name(ErrorKind::config);
        case MSGNN_ERR_CHECKPOINT: return error_kind_name(ErrorKind::checkpoint);
        case MSGNN_ERR_DATASET: return error_kind_name(ErrorKind::dataset);
        case MSGNN_ERR_UNSUPPORTED: return error_kind_name(ErrorKind::unsupported);
        case MSGNN_ERR_UNKNOWN: return "unknown";
    }
    return "unknown";
}

msgnn_status msgnn_image_load_png(const char* path, msgnn_image** out) {
    if (auto rc = require(path && out, "image_load_png: null argument")) return rc;
    return guarded([&] { *out = new msgnn_image{load_png(path)}; });
}

msgnn_status msgnn_image_save_png(const msgnn_image* image, const char* path) {
    if (auto rc = require(image && path, "image_save_png: null argument")) return rc;
    return guarded([&] { save_png(image->img, path); });
}

msgnn_status msgnn_image_create(int height, int width, const float* rgb, msgnn_image** out) {
    if (auto rc = require(rgb && out, "image_create: null argument")) return rc;
    return guarded([&] {
        Image img(height, width);
        img.pixels.assign(rgb, rgb + img.pixel_count() * 3);
        for (auto& v : img.pixels) v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        validate_image(img, "image_create");
        *out = new msgnn_image{std::move(img)};
    });
}

int msgnn_image_height(const msgnn_image* image) { return image ? image->img.height : 0; }
int msgnn_image_width(const msgnn_image* image) { return image ? image->img.width : 0; }

msgnn_status msgnn_image_pixels(const msgnn_image* image, float* out) {
    if (auto rc = require(image && out, "image_pixels: null argument")) return rc;
    std::memcpy(out, image->img.pixels.data(), image->img.pixels.size() * sizeof(float));
    return MSGNN_OK;
}

void msgnn_image_free(msgnn_image* image) { delete image; }

msgnn_status msgnn_synth_rain(const msgnn_image* clean, double density, double angle_deg, int length_px,
                              double intensity, uint64_t seed, msgnn_image** rainy, msgnn_image** streaks) {
    if (auto rc = require(clean && rainy, "synth_rain: null argument")) return rc;
    return guarded([&] {
        RainParams params;
        params.density = density;
        params.angle_deg = angle_deg;
        params.length_px = length_px;
        params.intensity = intensity;
        params.seed = seed;
        auto pair = synth_rain(clean->img, params);
        *rainy = new msgnn_image{std::move(pair.rainy)};
        if (streaks) *streaks = new msgnn_image{std::move(pair.streaks)};
    });
}

msgnn_status msgnn_psnr(const msgnn_image* a, const msgnn_image* b, double* out) {
    if (auto rc = require(a && b && out, "psnr: null argument")) return rc;
    return guarded([&] { *out = psnr(a->img, b->img); });
}

msgnn_status msgnn_ssim(const msgnn_image* a, const msgnn_image* b, double* out) {
    if (auto rc = require(a && b && out, "ssim: null argument")) return rc;
    return guarded([&] { *out = ssim(a->img, b->img); });
}

msgnn_status msgnn_model_create(const char* config_text, uint64_t seed, msgnn_model** out) {
    if (auto rc = require(out != nullptr, "model_create: null output")) return rc;
    return guarded([&] {
        const Config cfg = parse_config(config_text ? config_text : "");
        auto* handle = new msgnn_model{Model(cfg.model, seed), {}};
        handle->breakdown = handle->model.param_breakdown();
        *out = handle;
    });
}

msgnn_status msgnn_model_load(const char* checkpoint_path, msgnn_model** out) {
    if (auto rc = require(checkpoint_path && out, "model_load: null argument")) return rc;
    return guarded([&] {
        auto* handle = new msgnn_model{load_checkpoint(checkpoint_path), {}};
        handle->breakdown = handle->model.param_breakdown();
        *out = handle;
    });
}

msgnn_status msgnn_model_save(const msgnn_model* model, const char* checkpoint_path) {
    if (auto rc = require(model && checkpoint_path, "model_save: null argument")) return rc;
    return guarded([&] { save_checkpoint(model->model, checkpoint_path); });
}

void msgnn_model_free(msgnn_model* model) { delete model; }

int64_t msgnn_model_param_count(const msgnn_model* model) { return model ? model->model.param_count() : 0; }

int msgnn_model_param_group_count(const msgnn_model* model) {
    return model ? static_cast<int>(model->breakdown.size()) : 0;
}

msgnn_status msgnn_model_param_group(const msgnn_model* model, int index, const char** name, int64_t* count) {
    if (auto rc = require(model && name && count, "param_group: null argument")) return rc;
    if (auto rc = require(index >= 0 && index < static_cast<int>(model->breakdown.size()),
                          "param_group: index out of range"))
        return rc;
    *name = model->breakdown[static_cast<std::size_t>(index)].first.c_str();
    *count = model->breakdown[static_cast<std::size_t>(index)].second;
    return MSGNN_OK;
}

msgnn_status msgnn_model_derain(const msgnn_model* model, const msgnn_image* input, const msgnn_image* exemplar,
                                msgnn_image** background, msgnn_image** residual) {
    if (auto rc = require(model && input && background, "derain: null argument")) return rc;
    return guarded([&] {
        Image res;
        Image bg = derain_image(model->model, input->img, exemplar ? &exemplar->img : nullptr,
                                residual ? &res : nullptr);
        *background = new msgnn_image{std::move(bg)};
        if (residual) *residual = new msgnn_image{std::move(res)};
    });
}

msgnn_status msgnn_train(const char* data_dir, const char* config_text, const char* config_overrides,
                         const char* out_dir, const char* resume_checkpoint, msgnn_progress_fn progress,
                         void* user) {
    if (auto rc = require(data_dir && out_dir, "train: null argument")) return rc;
    return guarded([&] {
        std::string text = config_text ? config_text : "";
        if (config_overrides && *config_overrides) {
            text += "\n";
            text += config_overrides;
        }
        const Config cfg = parse_config(text);
        const auto dataset = load_dataset(data_dir);
        ProgressFn cb;
        if (progress)
            cb = [progress, user](const EpochRecord& rec) { progress(rec.epoch, rec.loss, rec.psnr, rec.ssim, user); };
        train(dataset, cfg, out_dir, resume_checkpoint ? resume_checkpoint : "", cb);
    });
}

msgnn_status msgnn_evaluate(const char* data_dir, const char* checkpoint_path, const char* exemplar_path,
                            msgnn_eval_result** out) {
    if (auto rc = require(data_dir && checkpoint_path && out, "evaluate: null argument")) return rc;
    return guarded([&] {
        const Model model = load_checkpoint(checkpoint_path);
        const auto dataset = load_dataset(data_dir);
        Image exemplar;
        const Image* fixed = nullptr;
        if (exemplar_path && *exemplar_path) {
            exemplar = load_png(exemplar_path);
            fixed = &exemplar;
        }
        *out = new msgnn_eval_result{evaluate(dataset, model, fixed)};
    });
}

int msgnn_eval_row_count(const msgnn_eval_result* result) {
    return result ? static_cast<int>(result->report.rows.size()) : 0;
}

const char* msgnn_eval_row_name(const msgnn_eval_result* result, int row) {
    if (!result || row < 0 || row >= static_cast<int>(result->report.rows.size())) return "";
    return result->report.rows[static_cast<std::size_t>(row)].name.c_str();
}

double msgnn_eval_row_psnr(const msgnn_eval_result* result, int row) {
    if (!result || row < 0 || row >= static_cast<int>(result->report.rows.size())) return 0.0;
    return result->report.rows[static_cast<std::size_t>(row)].psnr;
}

double msgnn_eval_row_ssim(const msgnn_eval_result* result, int row) {
    if (!result || row < 0 || row >= static_cast<int>(result->report.rows.size())) return 0.0;
    return result->report.rows[static_cast<std::size_t>(row)].ssim;
}

double msgnn_eval_mean_psnr(const msgnn_eval_result* result) { return result ? result->report.mean_psnr : 0.0; }
double msgnn_eval_mean_ssim(const msgnn_eval_result* result) { return result ? result->report.mean_ssim : 0.0; }

void msgnn_eval_result_free(msgnn_eval_result* result) { delete result; }

}  // extern "C"
