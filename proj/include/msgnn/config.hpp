#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace msgnn {

enum class ScaleTag { full, half, quarter };
enum class AttentionVariant { ct, se, none };

struct MsgnnConfig {
    int subnets = 4;       // N
    int blocks = 8;        // M, CTResBlocks per sub-network
    int channels = 32;
    int k = 5;
    int patch = 3;         // l
    int stride = 3;        // s
    double leaky_slope = 0.2;
    bool use_exemplar = true;
    bool use_fusion = true;
    std::set<ScaleTag> scales = {ScaleTag::full, ScaleTag::half, ScaleTag::quarter};
    AttentionVariant attention = AttentionVariant::ct;
    int inject_stride = 1;  // 2 is experimental; features are resized back

    bool graph_enabled() const { return use_exemplar || !scales.empty(); }
    int graph_branches() const { return static_cast<int>(scales.size()) + (use_exemplar ? 1 : 0); }
};

struct TrainConfig {
    double lr = 5e-4;
    std::vector<int> milestones = {300, 400};
    double decay = 0.1;
    int epochs = 500;
    int batch = 8;
    int crop = 64;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    long steps = 0;              // optional global step budget; 0 = epochs drive
    int checkpoint_interval = 100;  // epochs between checkpoints
};

struct Config {
    MsgnnConfig model;
    TrainConfig train;
};

// key=value per line; '#' comments and blank lines ignored. Unknown keys and
// out-of-range values raise ConfigError naming the offender.
Config parse_config(const std::string& text);
Config load_config_file(const std::string& path);

void validate_config(const Config& cfg);

// Canonical serializations (stable ordering, used by checkpoints and logs).
std::string serialize_model_config(const MsgnnConfig& cfg);
std::string serialize_config(const Config& cfg);

MsgnnConfig parse_model_config(const std::string& text);

const char* attention_name(AttentionVariant v);
const char* scale_name(ScaleTag s);

}  // namespace msgnn
