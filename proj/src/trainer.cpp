#include "msgnn/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "msgnn/errors.hpp"

namespace msgnn {

namespace fs = std::filesystem;

namespace {

// Stream tags for deriving per-purpose RNG from (seed, tag, counter); the
// training loop carries no RNG state across steps, so resume needs none.
constexpr std::uint64_t kStreamStep = 1;

constexpr char kStateMagic[4] = {'M', 'S', 'G', 'T'};
constexpr std::uint32_t kStateVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    write_u32(os, static_cast<std::uint32_t>(v));
    write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError(path + ": truncated training state");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& is, const std::string& path) {
    const std::uint64_t lo = read_u32(is, path);
    const std::uint64_t hi = read_u32(is, path);
    return lo | (hi << 32);
}

void save_train_state(const std::string& path, const Model& model, const AdamState& state, long next_epoch,
                      long global_step) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write training state " + path);
    os.write(kStateMagic, 4);
    write_u32(os, kStateVersion);
    write_u64(os, static_cast<std::uint64_t>(next_epoch));
    write_u64(os, static_cast<std::uint64_t>(global_step));
    write_u64(os, static_cast<std::uint64_t>(state.step));
    const auto& store = model.params();
    write_u32(os, static_cast<std::uint32_t>(store.count()));
    for (int id = 0; id < store.count(); ++id) {
        const std::string& name = store.name(id);
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<std::uint32_t>(state.m[static_cast<std::size_t>(id)].size()));
        auto dump = [&os](const std::vector<double>& vals) {
            for (double d : vals) {
                std::uint64_t bits;
                std::memcpy(&bits, &d, 8);
                write_u64(os, bits);
            }
        };
        dump(state.m[static_cast<std::size_t>(id)]);
        dump(state.v[static_cast<std::size_t>(id)]);
    }
    if (!os) throw IoError("write failed for training state " + path);
}

void load_train_state(const std::string& path, const Model& model, AdamState& state, long& next_epoch,
                      long& global_step) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open training state " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kStateMagic, 4) != 0)
        throw CheckpointError(path + ": not a training-state file");
    if (read_u32(is, path) != kStateVersion) throw CheckpointError(path + ": unsupported state version");
    next_epoch = static_cast<long>(read_u64(is, path));
    global_step = static_cast<long>(read_u64(is, path));
    state.step = static_cast<long>(read_u64(is, path));

    const auto& store = model.params();
    const std::uint32_t count = read_u32(is, path);
    if (static_cast<int>(count) != store.count())
        throw CheckpointError(path + ": state covers " + std::to_string(count) + " tensors, expected " +
                              std::to_string(store.count()));
    state.m.assign(static_cast<std::size_t>(count), {});
    state.v.assign(static_cast<std::size_t>(count), {});
    for (std::uint32_t rec = 0; rec < count; ++rec) {
        const std::uint32_t name_len = read_u32(is, path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw CheckpointError(path + ": truncated state record");
        const int id = store.find(name);
        if (id < 0) throw CheckpointError(path + ": unexpected tensor '" + name + "'");
        const std::uint32_t numel = read_u32(is, path);
        if (numel != store.values(id).size())
            throw CheckpointError(path + ": tensor '" + name + "' has wrong moment length");
        auto slurp = [&](std::vector<double>& vals) {
            vals.resize(numel);
            for (auto& d : vals) {
                const std::uint64_t bits = read_u64(is, path);
                std::memcpy(&d, &bits, 8);
            }
        };
        slurp(state.m[static_cast<std::size_t>(id)]);
        slurp(state.v[static_cast<std::size_t>(id)]);
    }
}

Image crop_pair(const Image& img, int oy, int ox, int crop) { return crop_image(img, oy, ox, crop, crop); }

}  // namespace

void AdamState::init(const ParamStore<float>& params) {
    m.assign(static_cast<std::size_t>(params.count()), {});
    v.assign(static_cast<std::size_t>(params.count()), {});
    for (int id = 0; id < params.count(); ++id) {
        m[static_cast<std::size_t>(id)].assign(params.values(id).size(), 0.0);
        v[static_cast<std::size_t>(id)].assign(params.values(id).size(), 0.0);
    }
    step = 0;
}

void adam_step(ParamStore<float>& params, const GradientMap<float>& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
    if (!state.initialized()) state.init(params);
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (int id = 0; id < params.count(); ++id) {
        if (!grads.contains(id))
            throw ContractError("adam_step: missing gradient for parameter '" + params.name(id) + "'");
        const auto& g = grads.at(id);
        auto& value = params.values(id);
        auto& mv = state.m[static_cast<std::size_t>(id)];
        auto& vv = state.v[static_cast<std::size_t>(id)];
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double gi = static_cast<double>(g.data()[i]);
            mv[i] = beta1 * mv[i] + (1.0 - beta1) * gi;
            vv[i] = beta2 * vv[i] + (1.0 - beta2) * gi * gi;
            const double mhat = mv[i] / bc1;
            const double vhat = vv[i] / bc2;
            value[i] = static_cast<float>(static_cast<double>(value[i]) - lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.epochs)
        throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
    double lr = cfg.lr;
    for (int m : cfg.milestones)
        if (epoch >= m) lr *= cfg.decay;
    return lr;
}

int sample_exemplar_index(int n, Rng& rng, int exclude) {
    if (n <= 0) throw DatasetError("sample_exemplar: empty dataset");
    if (n == 1) return 0;
    if (exclude < 0 || exclude >= n) return static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    int idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
    if (idx >= exclude) ++idx;
    return idx;
}

Image sample_exemplar(const std::vector<DatasetEntry>& entries, Rng& rng, int exclude_index, int crop) {
    const int idx = sample_exemplar_index(static_cast<int>(entries.size()), rng, exclude_index);
    const Image& img = entries[static_cast<std::size_t>(idx)].rainy;
    if (img.height < crop || img.width < crop)
        throw DimensionError("sample_exemplar: image '" + entries[static_cast<std::size_t>(idx)].name +
                             "' smaller than crop " + std::to_string(crop));
    const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height - crop + 1)));
    const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width - crop + 1)));
    return crop_pair(img, oy, ox, crop);
}

Image derain_image(const Model& model, const Image& input, const Image* exemplar, Image* residual_out) {
    validate_image(input, "derain");
    const Image padded = pad_to_multiple(input, 4);
    const auto rainy = image_to_tensor<float>(padded);
    TensorT<float> ex;
    if (exemplar) {
        validate_image(*exemplar, "derain exemplar");
        ex = image_to_tensor<float>(*exemplar);
    } else {
        ex = rainy;
    }
    auto out = model.forward(rainy, ex);
    Image bg = crop_image(tensor_to_image(out.background), 0, 0, input.height, input.width);
    if (residual_out) *residual_out = crop_image(tensor_to_image(out.residual), 0, 0, input.height, input.width);
    return bg;
}

EvalReport evaluate(const std::vector<DatasetEntry>& entries, const Model& model, const Image* fixed_exemplar) {
    EvalReport report;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (const auto& entry : entries) {
        const Image derained = derain_image(model, entry.rainy, fixed_exemplar);
        EvalRow row;
        row.name = entry.name;
        row.psnr = psnr(derained, entry.clean);
        row.ssim = ssim(derained, entry.clean);
        psnr_sum += row.psnr;
        ssim_sum += row.ssim;
        report.rows.push_back(std::move(row));
    }
    if (!report.rows.empty()) {
        report.mean_psnr = psnr_sum / static_cast<double>(report.rows.size());
        report.mean_ssim = ssim_sum / static_cast<double>(report.rows.size());
    }
    return report;
}

TrainResult train(const std::vector<DatasetEntry>& dataset, const Config& cfg, const std::string& out_dir,
                  const std::string& resume_checkpoint, const ProgressFn& progress) {
    validate_config(cfg);
    if (dataset.empty()) throw DatasetError("train: empty dataset");
    const int crop = cfg.train.crop;
    for (const auto& e : dataset) {
        validate_image(e.rainy, "train");
        if (e.rainy.height < crop || e.rainy.width < crop)
            throw DatasetError("train: image '" + e.name + "' is smaller than the " + std::to_string(crop) +
                               "px training crop");
    }

    DatasetSplit split = split_dataset(dataset);
    const int n_train = static_cast<int>(split.train.size());

    fs::create_directories(out_dir);

    Model model(cfg.model, cfg.train.seed);
    AdamState adam;
    adam.init(model.params());
    long global_step = 0;

    if (!resume_checkpoint.empty()) {
        Model restored = load_checkpoint(resume_checkpoint);
        if (serialize_model_config(restored.config()) != serialize_model_config(cfg.model))
            throw CheckpointError("train: resume checkpoint config does not match the requested config");
        model = std::move(restored);
        long stored_epoch = 0;
        load_train_state(resume_checkpoint + ".state", model, adam, stored_epoch, global_step);
    }

    const int steps_per_epoch = std::max(1, n_train / std::max(1, cfg.train.batch));
    const long budget = cfg.train.steps;
    // Sampling is keyed by the global step, so the epoch index and the inner
    // offset both follow from it; a resumed run realigns exactly.
    const long epoch0 = global_step / steps_per_epoch;

    std::ofstream metrics(out_dir + "/metrics.log", std::ios::app);
    std::ofstream steps_log(out_dir + "/steps.log", std::ios::app);
    if (!metrics || !steps_log) throw IoError("train: cannot write logs under " + out_dir);

    TrainResult result;
    long next_epoch = epoch0;
    char line[160];

    auto write_checkpoint = [&](const std::string& stem, long epoch_after) {
        const std::string path = out_dir + "/" + stem + ".msgnn";
        save_checkpoint(model, path);
        save_train_state(path + ".state", model, adam, epoch_after, global_step);
        return path;
    };

    for (long epoch = epoch0; epoch < cfg.train.epochs; ++epoch) {
        double loss_sum = 0.0;
        int steps_done = 0;
        for (long s = global_step - epoch * steps_per_epoch; s < steps_per_epoch; ++s) {
            if (budget > 0 && global_step >= budget) break;
            Rng rng(mix_seed(cfg.train.seed, kStreamStep, static_cast<std::uint64_t>(global_step)));

            std::vector<TensorT<float>> losses;
            losses.reserve(static_cast<std::size_t>(cfg.train.batch));
            for (int b = 0; b < cfg.train.batch; ++b) {
                const int idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_train)));
                const DatasetEntry& entry = split.train[static_cast<std::size_t>(idx)];
                const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(entry.rainy.height - crop + 1)));
                const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(entry.rainy.width - crop + 1)));
                const Image rainy = crop_pair(entry.rainy, oy, ox, crop);
                const Image clean = crop_pair(entry.clean, oy, ox, crop);
                const Image exemplar = sample_exemplar(split.train, rng, idx, crop);

                auto out = model.forward(image_to_tensor<float>(rainy), image_to_tensor<float>(exemplar));
                losses.push_back(ssim_loss(out.background, image_to_tensor<float>(clean)));
            }
            TensorT<float> loss = losses[0];
            for (std::size_t i = 1; i < losses.size(); ++i) loss = add(loss, losses[i]);
            if (losses.size() > 1) loss = scalar_mul(loss, 1.0 / static_cast<double>(losses.size()));

            const double loss_value = static_cast<double>(loss.item());
            auto grads = backward(loss);
            adam_step(model.params(), grads, adam, lr_at(static_cast<int>(epoch), cfg.train), cfg.train.adam_beta1,
                      cfg.train.adam_beta2, cfg.train.adam_eps);

            ++global_step;
            loss_sum += loss_value;
            ++steps_done;
            std::snprintf(line, sizeof line, "%ld\t%.6f\n", global_step, loss_value);
            steps_log << line;
        }
        if (steps_done == 0) break;  // budget exhausted at an epoch boundary

        const EvalReport eval = evaluate(split.eval, model);
        EpochRecord rec;
        rec.epoch = static_cast<int>(epoch);
        rec.loss = loss_sum / steps_done;
        rec.psnr = eval.mean_psnr;
        rec.ssim = eval.mean_ssim;
        std::snprintf(line, sizeof line, "%d\t%.6f\t%.3f\t%.4f\n", rec.epoch, rec.loss, rec.psnr, rec.ssim);
        metrics << line;
        metrics.flush();
        steps_log.flush();
        result.epochs.push_back(rec);
        if (progress) progress(rec);
        next_epoch = epoch + 1;

        if ((epoch + 1) % cfg.train.checkpoint_interval == 0 && epoch + 1 < cfg.train.epochs) {
            char stem[48];
            std::snprintf(stem, sizeof stem, "ckpt_epoch%05ld", epoch + 1);
            write_checkpoint(stem, epoch + 1);
        }
        if (budget > 0 && global_step >= budget) break;
    }

    result.final_checkpoint = write_checkpoint("model_final", next_epoch);
    return result;
}

}  // namespace msgnn
