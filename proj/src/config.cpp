#include "msgnn/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "msgnn/errors.hpp"

namespace msgnn {

namespace {

// shortest representation that parses back to the same double
std::string num(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

long to_long(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long x = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "': expected integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "': expected number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("config: key '" + key + "': expected boolean, got '" + v + "'");
}

std::vector<std::string> split_commas(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void apply_key(Config& cfg, const std::string& key, const std::string& value) {
    auto& m = cfg.model;
    auto& t = cfg.train;
    if (key == "N") m.subnets = static_cast<int>(to_long(key, value));
    else if (key == "M") m.blocks = static_cast<int>(to_long(key, value));
    else if (key == "channels") m.channels = static_cast<int>(to_long(key, value));
    else if (key == "k") m.k = static_cast<int>(to_long(key, value));
    else if (key == "l") m.patch = static_cast<int>(to_long(key, value));
    else if (key == "s") m.stride = static_cast<int>(to_long(key, value));
    else if (key == "leaky_slope") m.leaky_slope = to_double(key, value);
    else if (key == "use_exemplar") m.use_exemplar = to_bool(key, value);
    else if (key == "use_fusion") m.use_fusion = to_bool(key, value);
    else if (key == "inject_stride") m.inject_stride = static_cast<int>(to_long(key, value));
    else if (key == "scales") {
        m.scales.clear();
        if (value != "none") {
            for (const auto& item : split_commas(value)) {
                if (item == "full") m.scales.insert(ScaleTag::full);
                else if (item == "half") m.scales.insert(ScaleTag::half);
                else if (item == "quarter") m.scales.insert(ScaleTag::quarter);
                else throw ConfigError("config: key 'scales': unknown scale '" + item + "'");
            }
        }
    } else if (key == "attention_variant") {
        if (value == "CT" || value == "ct") m.attention = AttentionVariant::ct;
        else if (value == "SE" || value == "se") m.attention = AttentionVariant::se;
        else if (value == "none") m.attention = AttentionVariant::none;
        else throw ConfigError("config: key 'attention_variant': unknown variant '" + value + "'");
    }
    else if (key == "lr") t.lr = to_double(key, value);
    else if (key == "milestones") {
        t.milestones.clear();
        for (const auto& item : split_commas(value)) t.milestones.push_back(static_cast<int>(to_long(key, item)));
    }
    else if (key == "decay") t.decay = to_double(key, value);
    else if (key == "epochs") t.epochs = static_cast<int>(to_long(key, value));
    else if (key == "batch") t.batch = static_cast<int>(to_long(key, value));
    else if (key == "crop") t.crop = static_cast<int>(to_long(key, value));
    else if (key == "seed") t.seed = static_cast<std::uint64_t>(to_long(key, value));
    else if (key == "adam_beta1") t.adam_beta1 = to_double(key, value);
    else if (key == "adam_beta2") t.adam_beta2 = to_double(key, value);
    else if (key == "adam_eps") t.adam_eps = to_double(key, value);
    else if (key == "steps") t.steps = to_long(key, value);
    else if (key == "checkpoint_interval") t.checkpoint_interval = static_cast<int>(to_long(key, value));
    else throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

Config parse_config(const std::string& text) {
    Config cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    validate_config(cfg);
    return cfg;
}

Config load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

void validate_config(const Config& cfg) {
    const auto& m = cfg.model;
    if (m.subnets < 1) throw ConfigError("config: N must be >= 1");
    if (m.blocks < 1) throw ConfigError("config: M must be >= 1");
    if (m.channels < 4) throw ConfigError("config: channels must be >= 4");
    if (m.patch < 1) throw ConfigError("config: l must be >= 1");
    if (m.stride < 1) throw ConfigError("config: s must be >= 1");
    if (m.k < 1) throw ConfigError("config: k must be >= 1");
    if (!(m.leaky_slope > 0.0 && m.leaky_slope < 1.0)) throw ConfigError("config: leaky_slope must be in (0,1)");
    if (m.inject_stride != 1 && m.inject_stride != 2) throw ConfigError("config: inject_stride must be 1 or 2");

    const auto& t = cfg.train;
    if (!(t.lr > 0.0)) throw ConfigError("config: lr must be > 0");
    if (!std::is_sorted(t.milestones.begin(), t.milestones.end()) ||
        std::adjacent_find(t.milestones.begin(), t.milestones.end()) != t.milestones.end())
        throw ConfigError("config: milestones must be strictly increasing");
    if (!t.milestones.empty() && t.milestones.back() >= t.epochs)
        throw ConfigError("config: milestones must be smaller than epochs");
    if (t.epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (t.batch < 1) throw ConfigError("config: batch must be >= 1");
    if (t.crop < 16 || t.crop % 4 != 0) throw ConfigError("config: crop must be >= 16 and divisible by 4");
    if (!(t.decay > 0.0)) throw ConfigError("config: decay must be > 0");
    if (t.steps < 0) throw ConfigError("config: steps must be >= 0");
    if (t.checkpoint_interval < 1) throw ConfigError("config: checkpoint_interval must be >= 1");
}

const char* attention_name(AttentionVariant v) {
    switch (v) {
        case AttentionVariant::ct: return "CT";
        case AttentionVariant::se: return "SE";
        case AttentionVariant::none: return "none";
    }
    return "?";
}

const char* scale_name(ScaleTag s) {
    switch (s) {
        case ScaleTag::full: return "full";
        case ScaleTag::half: return "half";
        case ScaleTag::quarter: return "quarter";
    }
    return "?";
}

std::string serialize_model_config(const MsgnnConfig& m) {
    std::ostringstream os;
    os << "N=" << m.subnets << "\n";
    os << "M=" << m.blocks << "\n";
    os << "channels=" << m.channels << "\n";
    os << "k=" << m.k << "\n";
    os << "l=" << m.patch << "\n";
    os << "s=" << m.stride << "\n";
    os << "leaky_slope=" << num(m.leaky_slope) << "\n";
    os << "use_exemplar=" << (m.use_exemplar ? "true" : "false") << "\n";
    os << "use_fusion=" << (m.use_fusion ? "true" : "false") << "\n";
    os << "inject_stride=" << m.inject_stride << "\n";
    os << "scales=";
    if (m.scales.empty()) {
        os << "none";
    } else {
        bool first = true;
        for (ScaleTag s : {ScaleTag::full, ScaleTag::half, ScaleTag::quarter})
            if (m.scales.count(s)) {
                os << (first ? "" : ",") << scale_name(s);
                first = false;
            }
    }
    os << "\n";
    os << "attention_variant=" << attention_name(m.attention) << "\n";
    return os.str();
}

std::string serialize_config(const Config& cfg) {
    std::ostringstream os;
    os << serialize_model_config(cfg.model);
    const auto& t = cfg.train;
    os << "lr=" << num(t.lr) << "\n";
    os << "milestones=";
    for (std::size_t i = 0; i < t.milestones.size(); ++i) os << (i ? "," : "") << t.milestones[i];
    os << "\n";
    os << "decay=" << num(t.decay) << "\n";
    os << "epochs=" << t.epochs << "\n";
    os << "batch=" << t.batch << "\n";
    os << "crop=" << t.crop << "\n";
    os << "seed=" << t.seed << "\n";
    os << "adam_beta1=" << num(t.adam_beta1) << "\n";
    os << "adam_beta2=" << num(t.adam_beta2) << "\n";
    os << "adam_eps=" << num(t.adam_eps) << "\n";
    os << "steps=" << t.steps << "\n";
    os << "checkpoint_interval=" << t.checkpoint_interval << "\n";
    return os.str();
}

MsgnnConfig parse_model_config(const std::string& text) {
    return parse_config(text).model;
}

}  // namespace msgnn
