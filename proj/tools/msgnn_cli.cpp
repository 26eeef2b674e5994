// msgnn - synthetic rain, training, inference, evaluation and ablation
// sweeps for the MSGNN deraining model. Talks to the core exclusively
// through the C API in msgnn.h.

#include <CLI11.hpp>
#include <msgnn.h>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct CliError {
    std::string kind;
    std::string message;
};

void check(msgnn_status rc) {
    if (rc != MSGNN_OK) throw CliError{msgnn_status_kind(rc), msgnn_last_error()};
}

using ImagePtr = std::unique_ptr<msgnn_image, decltype(&msgnn_image_free)>;
ImagePtr wrap(msgnn_image* p) { return ImagePtr(p, &msgnn_image_free); }

ImagePtr load_image(const std::string& path) {
    msgnn_image* img = nullptr;
    check(msgnn_image_load_png(path.c_str(), &img));
    return wrap(img);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw CliError{"io", "cannot open " + path};
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<fs::path> list_pngs_sorted(const std::string& dir) {
    if (!fs::is_directory(dir)) throw CliError{"io", "not a directory: " + dir};
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

std::string format_metric(double v, int decimals) {
    if (std::isinf(v)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

// ---- synth -------------------------------------------------------------

struct SynthArgs {
    std::string clean_dir, out_dir;
    int count = 0;  // 0 = every clean image
    double density = 0.03, angle = 15.0, intensity = 0.7;
    int length = 9;
    std::uint64_t seed = 0;
};

void cmd_synth(const SynthArgs& a) {
    const auto files = list_pngs_sorted(a.clean_dir);
    if (files.empty()) throw CliError{"dataset", "no .png files under " + a.clean_dir};
    const int total = a.count > 0 ? a.count : static_cast<int>(files.size());

    fs::create_directories(fs::path(a.out_dir) / "rain");
    fs::create_directories(fs::path(a.out_dir) / "norain");
    std::ofstream manifest(fs::path(a.out_dir) / "manifest.tsv", std::ios::trunc);
    if (!manifest) throw CliError{"io", "cannot write manifest under " + a.out_dir};

    for (int i = 0; i < total; ++i) {
        const fs::path& src = files[static_cast<std::size_t>(i) % files.size()];
        std::string name = src.stem().string();
        if (static_cast<std::size_t>(i) >= files.size()) name += "_" + std::to_string(i / files.size());
        const std::uint64_t img_seed = a.seed * 1000003ull + static_cast<std::uint64_t>(i);

        auto clean = load_image(src.string());
        msgnn_image *rainy_raw = nullptr, *streaks_raw = nullptr;
        check(msgnn_synth_rain(clean.get(), a.density, a.angle, a.length, a.intensity, img_seed, &rainy_raw,
                               &streaks_raw));
        auto rainy = wrap(rainy_raw);
        auto streaks = wrap(streaks_raw);

        check(msgnn_image_save_png(rainy.get(), (fs::path(a.out_dir) / "rain" / (name + ".png")).string().c_str()));
        check(msgnn_image_save_png(clean.get(), (fs::path(a.out_dir) / "norain" / (name + ".png")).string().c_str()));

        char line[256];
        std::snprintf(line, sizeof line, "%s\t%g\t%g\t%d\t%g\t%" PRIu64 "\n", name.c_str(), a.density, a.angle,
                      a.length, a.intensity, img_seed);
        manifest << line;
    }
    std::printf("wrote %d pairs to %s\n", total, a.out_dir.c_str());
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
    std::string data, config, out, resume;
    std::int64_t seed = -1;  // <0: use the config's seed
    bool quiet = false;
};

void cmd_train(const TrainArgs& a) {
    const std::string config_text = a.config.empty() ? "" : read_file(a.config);
    std::string overrides;
    if (a.seed >= 0) overrides = "seed=" + std::to_string(a.seed) + "\n";

    struct Ctx {
        bool quiet;
    } ctx{a.quiet};
    auto progress = [](int epoch, double loss, double psnr, double ssim, void* user) {
        if (static_cast<Ctx*>(user)->quiet) return;
        std::printf("epoch %d  loss %.6f  psnr %.3f  ssim %.4f\n", epoch, loss, psnr, ssim);
        std::fflush(stdout);
    };
    check(msgnn_train(a.data.c_str(), config_text.c_str(), overrides.c_str(), a.out.c_str(),
                      a.resume.empty() ? nullptr : a.resume.c_str(), progress, &ctx));
    std::printf("final checkpoint: %s/model_final.msgnn\n", a.out.c_str());
}

// ---- derain ----------------------------------------------------------------

struct DerainArgs {
    std::string input, checkpoint, output, exemplar, residual, grid;
};

void cmd_derain(const DerainArgs& a) {
    msgnn_model* model_raw = nullptr;
    check(msgnn_model_load(a.checkpoint.c_str(), &model_raw));
    std::unique_ptr<msgnn_model, decltype(&msgnn_model_free)> model(model_raw, &msgnn_model_free);

    auto input = load_image(a.input);
    ImagePtr exemplar = ImagePtr(nullptr, &msgnn_image_free);
    if (!a.exemplar.empty()) exemplar = load_image(a.exemplar);

    msgnn_image *bg_raw = nullptr, *res_raw = nullptr;
    check(msgnn_model_derain(model.get(), input.get(), exemplar.get(), &bg_raw, &res_raw));
    auto background = wrap(bg_raw);
    auto residual = wrap(res_raw);

    check(msgnn_image_save_png(background.get(), a.output.c_str()));
    if (!a.residual.empty()) check(msgnn_image_save_png(residual.get(), a.residual.c_str()));

    if (!a.grid.empty()) {
        const int h = msgnn_image_height(input.get());
        const int w = msgnn_image_width(input.get());
        std::vector<float> panel(static_cast<std::size_t>(h) * w * 3);
        std::vector<float> grid(static_cast<std::size_t>(h) * w * 9);
        const msgnn_image* panels[3] = {input.get(), background.get(), residual.get()};
        for (int p = 0; p < 3; ++p) {
            check(msgnn_image_pixels(panels[p], panel.data()));
            for (int y = 0; y < h; ++y)
                std::copy(panel.begin() + static_cast<std::ptrdiff_t>(y) * w * 3,
                          panel.begin() + static_cast<std::ptrdiff_t>(y + 1) * w * 3,
                          grid.begin() + (static_cast<std::ptrdiff_t>(y) * 3 * w + p * w) * 3);
        }
        msgnn_image* grid_raw = nullptr;
        check(msgnn_image_create(h, 3 * w, grid.data(), &grid_raw));
        auto grid_img = wrap(grid_raw);
        check(msgnn_image_save_png(grid_img.get(), a.grid.c_str()));
    }
    std::printf("derained %s -> %s\n", a.input.c_str(), a.output.c_str());
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
    std::string data, checkpoint, report, exemplar;
};

void print_eval_table(const msgnn_eval_result* result, std::ostream* csv) {
    const int rows = msgnn_eval_row_count(result);
    std::size_t name_w = 5;
    for (int i = 0; i < rows; ++i) name_w = std::max(name_w, std::strlen(msgnn_eval_row_name(result, i)));

    std::printf("%-*s  %10s  %8s\n", static_cast<int>(name_w), "image", "psnr", "ssim");
    if (csv) *csv << "image,psnr,ssim\n";
    for (int i = 0; i < rows; ++i) {
        const std::string p = format_metric(msgnn_eval_row_psnr(result, i), 3);
        const std::string s = format_metric(msgnn_eval_row_ssim(result, i), 4);
        std::printf("%-*s  %10s  %8s\n", static_cast<int>(name_w), msgnn_eval_row_name(result, i), p.c_str(),
                    s.c_str());
        if (csv) *csv << msgnn_eval_row_name(result, i) << ',' << p << ',' << s << '\n';
    }
    const std::string mp = format_metric(msgnn_eval_mean_psnr(result), 3);
    const std::string ms = format_metric(msgnn_eval_mean_ssim(result), 4);
    std::printf("%-*s  %10s  %8s\n", static_cast<int>(name_w), "mean", mp.c_str(), ms.c_str());
    if (csv) *csv << "mean," << mp << ',' << ms << '\n';
}

void cmd_eval(const EvalArgs& a) {
    msgnn_eval_result* result_raw = nullptr;
    check(msgnn_evaluate(a.data.c_str(), a.checkpoint.c_str(), a.exemplar.empty() ? nullptr : a.exemplar.c_str(),
                         &result_raw));
    std::unique_ptr<msgnn_eval_result, decltype(&msgnn_eval_result_free)> result(result_raw,
                                                                                 &msgnn_eval_result_free);
    if (!a.report.empty()) {
        std::ofstream csv(a.report, std::ios::trunc);
        if (!csv) throw CliError{"io", "cannot write report " + a.report};
        print_eval_table(result.get(), &csv);
    } else {
        print_eval_table(result.get(), nullptr);
    }
}

// ---- ablate ----------------------------------------------------------------

struct AblateArgs {
    std::string data, axis, values, out, config, report;
    int budget = 50;
    std::uint64_t seed = 0;
    bool parallel = false;
};

struct AblateRow {
    std::string label;
    double psnr = 0.0, ssim = 0.0;
};

std::string component_preset(const std::string& name) {
    // rows of the component ablation: fusion connection, channel attention
    // variant, graph on/off
    if (name == "M1") return "use_fusion=false\nattention_variant=none\nscales=none\nuse_exemplar=false\n";
    if (name == "M2") return "use_fusion=true\nattention_variant=none\nscales=none\nuse_exemplar=false\n";
    if (name == "M4") return "use_fusion=true\nattention_variant=SE\nscales=none\nuse_exemplar=false\n";
    if (name == "M5") return "use_fusion=true\nattention_variant=CT\nscales=none\nuse_exemplar=false\n";
    if (name == "M6") return "use_fusion=true\nattention_variant=CT\nscales=full,half,quarter\nuse_exemplar=true\n";
    throw CliError{"config", "unknown components row '" + name + "' (expected M1,M2,M4,M5,M6)"};
}

std::string axis_override(const std::string& axis, const std::string& value) {
    if (axis == "k" || axis == "l" || axis == "s" || axis == "N") return axis + "=" + value + "\n";
    if (axis == "scales") {
        std::string v = value;
        std::replace(v.begin(), v.end(), '+', ',');
        return "scales=" + v + "\n";
    }
    if (axis == "exemplar") {
        if (value == "on") return "use_exemplar=true\n";
        if (value == "off") return "use_exemplar=false\n";
        throw CliError{"config", "exemplar axis takes values on/off, got '" + value + "'"};
    }
    if (axis == "attention") return "attention_variant=" + value + "\n";
    if (axis == "components") return component_preset(value);
    throw CliError{"config", "unsupported ablation axis '" + axis + "'"};
}

void cmd_ablate(const AblateArgs& a) {
    std::vector<std::string> values;
    {
        std::stringstream ss(a.values);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) values.push_back(item);
    }
    if (values.empty()) {
        if (a.axis == "components") values = {"M1", "M2", "M4", "M5", "M6"};
        else throw CliError{"config", "ablate: no --values given"};
    }

    const std::string base = a.config.empty() ? "" : read_file(a.config);
    const std::string out_root = a.out.empty() ? (fs::temp_directory_path() / "msgnn_ablate").string() : a.out;
    fs::create_directories(out_root);

    std::vector<AblateRow> rows(values.size());
    std::vector<std::string> errors(values.size());

    auto run_one = [&](std::size_t i) {
        try {
            const std::string run_dir = out_root + "/" + a.axis + "_" + std::to_string(i);
            std::string overrides = axis_override(a.axis, values[i]);
            overrides += "steps=" + std::to_string(a.budget) + "\n";
            overrides += "epochs=" + std::to_string(std::max(1, a.budget)) + "\n";
            overrides += "milestones=\n";
            overrides += "seed=" + std::to_string(a.seed) + "\n";
            check(msgnn_train(a.data.c_str(), base.c_str(), overrides.c_str(), run_dir.c_str(), nullptr, nullptr,
                              nullptr));
            msgnn_eval_result* result_raw = nullptr;
            check(msgnn_evaluate(a.data.c_str(), (run_dir + "/model_final.msgnn").c_str(), nullptr, &result_raw));
            std::unique_ptr<msgnn_eval_result, decltype(&msgnn_eval_result_free)> result(result_raw,
                                                                                         &msgnn_eval_result_free);
            rows[i] = {values[i], msgnn_eval_mean_psnr(result.get()), msgnn_eval_mean_ssim(result.get())};
        } catch (const CliError& e) {
            errors[i] = "error:" + e.kind + ": " + e.message;
        }
    };

    if (a.parallel) {
        std::vector<std::thread> workers;
        for (std::size_t i = 0; i < values.size(); ++i) workers.emplace_back(run_one, i);
        for (auto& t : workers) t.join();
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) run_one(i);
    }
    for (const auto& err : errors)
        if (!err.empty()) throw CliError{"config", err};

    std::size_t label_w = a.axis.size();
    for (const auto& r : rows) label_w = std::max(label_w, r.label.size());
    std::printf("%-*s  %10s  %8s\n", static_cast<int>(label_w), a.axis.c_str(), "psnr", "ssim");
    std::ofstream csv;
    if (!a.report.empty()) {
        csv.open(a.report, std::ios::trunc);
        if (!csv) throw CliError{"io", "cannot write report " + a.report};
        csv << a.axis << ",psnr,ssim\n";
    }
    for (const auto& r : rows) {
        const std::string p = format_metric(r.psnr, 3);
        const std::string s = format_metric(r.ssim, 4);
        std::printf("%-*s  %10s  %8s\n", static_cast<int>(label_w), r.label.c_str(), p.c_str(), s.c_str());
        if (csv.is_open()) csv << r.label << ',' << p << ',' << s << '\n';
    }
}

// ---- params ----------------------------------------------------------------

void cmd_params(const std::string& config_path) {
    const std::string text = config_path.empty() ? "" : read_file(config_path);
    msgnn_model* model_raw = nullptr;
    check(msgnn_model_create(text.c_str(), 0, &model_raw));
    std::unique_ptr<msgnn_model, decltype(&msgnn_model_free)> model(model_raw, &msgnn_model_free);

    const int groups = msgnn_model_param_group_count(model.get());
    for (int i = 0; i < groups; ++i) {
        const char* name = nullptr;
        std::int64_t count = 0;
        check(msgnn_model_param_group(model.get(), i, &name, &count));
        std::printf("%-16s %10" PRId64 "\n", name, count);
    }
    std::printf("%-16s %10" PRId64 "\n", "total", msgnn_model_param_count(model.get()));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MSGNN image deraining toolkit"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a paired rain/norain dataset from clean images");
    synth_cmd->add_option("--clean-dir", synth.clean_dir, "directory of clean .png images")->required();
    synth_cmd->add_option("--out-dir", synth.out_dir, "output dataset root")->required();
    synth_cmd->add_option("--count", synth.count, "pairs to generate (default: all clean images)");
    synth_cmd->add_option("--density", synth.density, "seed pixel fraction (0,0.2]");
    synth_cmd->add_option("--angle", synth.angle, "streak angle in degrees [-45,45]");
    synth_cmd->add_option("--length", synth.length, "streak length in px [3,31]");
    synth_cmd->add_option("--intensity", synth.intensity, "peak streak value (0,1]");
    synth_cmd->add_option("--seed", synth.seed, "base RNG seed");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train a model on a paired dataset");
    train_cmd->add_option("--data", train_args.data, "dataset root (rain/ + norain/)")->required();
    train_cmd->add_option("--config", train_args.config, "key=value config file");
    train_cmd->add_option("--out", train_args.out, "output directory")->required();
    train_cmd->add_option("--seed", train_args.seed, "override the config seed");
    train_cmd->add_option("--resume", train_args.resume, "checkpoint to resume from");
    train_cmd->add_flag("--quiet", train_args.quiet, "suppress per-epoch progress lines");

    DerainArgs derain;
    auto* derain_cmd = app.add_subcommand("derain", "remove rain from one image");
    derain_cmd->add_option("--input", derain.input, "rainy input .png")->required();
    derain_cmd->add_option("--checkpoint", derain.checkpoint, "model checkpoint")->required();
    derain_cmd->add_option("--output", derain.output, "derained output .png")->required();
    derain_cmd->add_option("--exemplar", derain.exemplar, "exemplar .png (default: the input itself)");
    derain_cmd->add_option("--residual", derain.residual, "write the predicted rain layer here");
    derain_cmd->add_option("--grid", derain.grid, "write an input|derained|residual comparison grid here");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM table for a checkpoint over a dataset");
    eval_cmd->add_option("--data", eval_args.data, "dataset root")->required();
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--report", eval_args.report, "also write the table as CSV here");
    eval_cmd->add_option("--exemplar", eval_args.exemplar, "fixed exemplar .png (default: self)");

    AblateArgs ablate;
    auto* ablate_cmd = app.add_subcommand("ablate", "tiny-budget sweep over one config axis");
    ablate_cmd->add_option("--data", ablate.data, "dataset root")->required();
    ablate_cmd->add_option("--axis", ablate.axis, "one of k,l,s,N,scales,exemplar,attention,components")->required();
    ablate_cmd->add_option("--values", ablate.values, "comma-separated values ('+' joins scale sets)");
    ablate_cmd->add_option("--budget", ablate.budget, "ADAM steps per run");
    ablate_cmd->add_option("--config", ablate.config, "base config file");
    ablate_cmd->add_option("--out", ablate.out, "directory for per-run outputs");
    ablate_cmd->add_option("--report", ablate.report, "also write the table as CSV here");
    ablate_cmd->add_option("--seed", ablate.seed, "RNG seed shared by all runs");
    ablate_cmd->add_flag("--parallel", ablate.parallel, "run configurations concurrently");

    std::string params_config;
    auto* params_cmd = app.add_subcommand("params", "parameter count and per-module breakdown");
    params_cmd->add_option("--config", params_config, "key=value config file");

    try {
        app.parse(argc, argv);
        if (synth_cmd->parsed()) cmd_synth(synth);
        else if (train_cmd->parsed()) cmd_train(train_args);
        else if (derain_cmd->parsed()) cmd_derain(derain);
        else if (eval_cmd->parsed()) cmd_eval(eval_args);
        else if (ablate_cmd->parsed()) cmd_ablate(ablate);
        else if (params_cmd->parsed()) cmd_params(params_config);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::fprintf(stderr, "error:usage: %s\n", e.what());
        return 1;
    } catch (const CliError& e) {
        // already-prefixed messages from worker threads pass through
        if (e.message.rfind("error:", 0) == 0) std::fprintf(stderr, "%s\n", e.message.c_str());
        else std::fprintf(stderr, "error:%s: %s\n", e.kind.c_str(), e.message.c_str());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error:unknown: %s\n", e.what());
        return 1;
    }
    return 0;
}
