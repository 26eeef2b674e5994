#pragma once

#include <functional>
#include <string>
#include <vector>

#include "msgnn/checkpoint.hpp"
#include "msgnn/config.hpp"
#include "msgnn/dataset.hpp"
#include "msgnn/metrics.hpp"
#include "msgnn/network.hpp"

namespace msgnn {

// Bias-corrected ADAM over a ParamStore. Moments are kept in double; the
// parameters stay 32-bit.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    long step = 0;

    void init(const ParamStore<float>& params);
    bool initialized() const { return !m.empty(); }
};

// One update. `grads` must cover every parameter in the store; a missing
// entry raises ContractError naming the parameter.
void adam_step(ParamStore<float>& params, const GradientMap<float>& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Piecewise-constant schedule: lr * decay^(milestones passed at `epoch`).
double lr_at(int epoch, const TrainConfig& cfg);

// Uniform draw over [0,n) excluding `exclude` (ignored when n == 1 or
// exclude is out of range).
int sample_exemplar_index(int n, Rng& rng, int exclude);

// Uniform rainy-image draw (excluding the current sample when possible),
// randomly cropped to crop x crop.
Image sample_exemplar(const std::vector<DatasetEntry>& entries, Rng& rng, int exclude_index, int crop);

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalRow {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

struct TrainResult {
    std::string final_checkpoint;
    std::vector<EpochRecord> epochs;
};

// Full training protocol. Writes under out_dir:
//   metrics.log        one record per epoch:  epoch<TAB>loss<TAB>psnr<TAB>ssim
//   steps.log          one record per step:   step<TAB>loss
//   ckpt_epochNNNNN.msgnn (+ .state)  at the configured interval
//   model_final.msgnn  (+ .state)     at the end
// Deterministic in (seed, data, config); resuming from a checkpoint/state
// pair continues the identical trajectory.
TrainResult train(const std::vector<DatasetEntry>& dataset, const Config& cfg, const std::string& out_dir,
                  const std::string& resume_checkpoint = "", const ProgressFn& progress = nullptr);

// Derain one image: reflection-pad to a multiple of 4, run the model with
// the given exemplar (or the padded input itself), crop back.
Image derain_image(const Model& model, const Image& input, const Image* exemplar, Image* residual_out = nullptr);

// Deterministic PSNR/SSIM table over `entries`, self-exemplar unless a fixed
// exemplar is supplied.
EvalReport evaluate(const std::vector<DatasetEntry>& entries, const Model& model,
                    const Image* fixed_exemplar = nullptr);

}  // namespace msgnn
