/* MSGNN image deraining - C API.
 *
 * Every object is an opaque handle owned by the library and released with
 * the matching *_free call. Functions return MSGNN_OK (0) on success; on
 * failure they return a status code and leave a human-readable message in
 * msgnn_last_error() (thread local). Pixel buffers are interleaved RGB
 * floats in [0,1], row-major, length height*width*3.
 */

#ifndef MSGNN_H
#define MSGNN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum msgnn_status {
    MSGNN_OK = 0,
    MSGNN_ERR_IO = 1,
    MSGNN_ERR_PNG_FORMAT = 2,
    MSGNN_ERR_PNG_DEPTH = 3,
    MSGNN_ERR_DIMENSION = 4,
    MSGNN_ERR_CONTRACT = 5,
    MSGNN_ERR_CONFIG = 6,
    MSGNN_ERR_CHECKPOINT = 7,
    MSGNN_ERR_DATASET = 8,
    MSGNN_ERR_UNSUPPORTED = 9,
    MSGNN_ERR_UNKNOWN = 10
} msgnn_status;

typedef struct msgnn_image msgnn_image;
typedef struct msgnn_model msgnn_model;
typedef struct msgnn_eval_result msgnn_eval_result;

const char* msgnn_version(void);

/* Message for the most recent failure on this thread; empty string if none. */
const char* msgnn_last_error(void);

/* Stable short kind string for a status, e.g. "io", "png-depth", "config". */
const char* msgnn_status_kind(msgnn_status status);

/* ---- images ---------------------------------------------------------- */

msgnn_status msgnn_image_load_png(const char* path, msgnn_image** out);
msgnn_status msgnn_image_save_png(const msgnn_image* image, const char* path);
msgnn_status msgnn_image_create(int height, int width, const float* rgb, msgnn_image** out);
int msgnn_image_height(const msgnn_image* image);
int msgnn_image_width(const msgnn_image* image);
/* Copies height*width*3 floats into `out`. */
msgnn_status msgnn_image_pixels(const msgnn_image* image, float* out);
void msgnn_image_free(msgnn_image* image);

/* ---- synthetic rain and metrics -------------------------------------- */

msgnn_status msgnn_synth_rain(const msgnn_image* clean, double density, double angle_deg, int length_px,
                              double intensity, uint64_t seed, msgnn_image** rainy, msgnn_image** streaks);

msgnn_status msgnn_psnr(const msgnn_image* a, const msgnn_image* b, double* out);
msgnn_status msgnn_ssim(const msgnn_image* a, const msgnn_image* b, double* out);

/* ---- models ----------------------------------------------------------- */

/* config_text uses the same key=value format as config files; it may be
 * empty for the default configuration. */
msgnn_status msgnn_model_create(const char* config_text, uint64_t seed, msgnn_model** out);
msgnn_status msgnn_model_load(const char* checkpoint_path, msgnn_model** out);
msgnn_status msgnn_model_save(const msgnn_model* model, const char* checkpoint_path);
void msgnn_model_free(msgnn_model* model);

int64_t msgnn_model_param_count(const msgnn_model* model);
int msgnn_model_param_group_count(const msgnn_model* model);
msgnn_status msgnn_model_param_group(const msgnn_model* model, int index, const char** name, int64_t* count);

/* exemplar may be NULL: the input then serves as its own exemplar.
 * residual receives the predicted rain layer and may be NULL. */
msgnn_status msgnn_model_derain(const msgnn_model* model, const msgnn_image* input, const msgnn_image* exemplar,
                                msgnn_image** background, msgnn_image** residual);

/* ---- training and evaluation ------------------------------------------ */

typedef void (*msgnn_progress_fn)(int epoch, double loss, double psnr, double ssim, void* user);

/* Trains on <data_dir>/rain + <data_dir>/norain per the config; writes
 * metrics.log, steps.log and model_final.msgnn under out_dir.
 * config_overrides (may be NULL) is extra "key=value" lines applied after
 * config_text. resume_checkpoint (may be NULL) continues a previous run. */
msgnn_status msgnn_train(const char* data_dir, const char* config_text, const char* config_overrides,
                         const char* out_dir, const char* resume_checkpoint, msgnn_progress_fn progress,
                         void* user);

/* Deterministic per-image PSNR/SSIM of a checkpoint over the dataset
 * (exemplar_path NULL = each input is its own exemplar). */
msgnn_status msgnn_evaluate(const char* data_dir, const char* checkpoint_path, const char* exemplar_path,
                            msgnn_eval_result** out);

int msgnn_eval_row_count(const msgnn_eval_result* result);
const char* msgnn_eval_row_name(const msgnn_eval_result* result, int row);
double msgnn_eval_row_psnr(const msgnn_eval_result* result, int row);
double msgnn_eval_row_ssim(const msgnn_eval_result* result, int row);
double msgnn_eval_mean_psnr(const msgnn_eval_result* result);
double msgnn_eval_mean_ssim(const msgnn_eval_result* result);
void msgnn_eval_result_free(msgnn_eval_result* result);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MSGNN_H */
