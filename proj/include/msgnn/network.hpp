#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "msgnn/config.hpp"
#include "msgnn/patch_graph.hpp"
#include "msgnn/tensor.hpp"

namespace msgnn {

// The deraining backbone: a head conv lifts the rainy image to C channels,
// N sub-networks of M gated residual blocks refine it, fusion connections
// (concat of all prior sub-network outputs + 1x1 conv) and graph-feature
// injection sit on every connection between sub-networks, and a 3-channel
// tail conv predicts the rain layer that is subtracted from the input.
//
// Instantiated with T=float for training/inference and T=double for
// finite-difference verification.
template <typename T>
class ModelT {
public:
    explicit ModelT(MsgnnConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) { build(seed); }

    const MsgnnConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    struct Output {
        TensorT<T> background;  // clamp(input - residual, 0, 1)
        TensorT<T> residual;    // predicted rain layer
        std::vector<KnnGraph> graphs;  // per enabled branch, in branch order
    };

    // rainy and exemplar are [3,H,W] in [0,1]. H and W must be divisible by 4
    // when the half/quarter graph branches are enabled. Passing `frozen`
    // (graphs from a previous Output) reuses those neighbor indices instead
    // of searching; gradient checks rely on this.
    Output forward(const TensorT<T>& rainy, const TensorT<T>& exemplar,
                   const std::vector<KnnGraph>* frozen = nullptr) const {
        if (rainy.rank() != 3 || rainy.dim(0) != 3)
            throw DimensionError("forward: rainy input must be [3,H,W], got " + shape_str(rainy.shape()));
        const int h = rainy.dim(1), w = rainy.dim(2);
        const bool multi_scale = cfg_.scales.count(ScaleTag::half) || cfg_.scales.count(ScaleTag::quarter);
        if (use_graph() && multi_scale && (h % 4 != 0 || w % 4 != 0))
            throw DimensionError("forward: input " + std::to_string(h) + "x" + std::to_string(w) +
                                 " must be divisible by 4 for the scaled graph branches");

        std::vector<TensorT<T>> graph_feats;
        std::vector<KnnGraph> graphs_used;
        if (use_graph()) {
            const GraphParams<T> gp = graph_leaves();
            const auto f_full = extract_features(rainy, gp, cfg_.leaky_slope);
            auto relate = [&](const TensorT<T>& key_feat) {
                const std::size_t branch = graph_feats.size();
                const KnnGraph* fixed = frozen ? &(*frozen)[branch] : nullptr;
                KnnGraph used;
                auto out = graph_relate(f_full, key_feat, gp, cfg_.k, cfg_.patch, cfg_.stride, cfg_.leaky_slope,
                                        fixed, &used);
                graphs_used.push_back(std::move(used));
                return out;
            };
            if (frozen && frozen->size() != static_cast<std::size_t>(cfg_.graph_branches()))
                throw ContractError("forward: frozen graph count does not match enabled branches");
            if (cfg_.scales.count(ScaleTag::full)) graph_feats.push_back(relate(f_full));
            if (cfg_.scales.count(ScaleTag::half))
                graph_feats.push_back(relate(extract_features(bilinear_resize(rainy, h / 2, w / 2), gp, cfg_.leaky_slope)));
            if (cfg_.scales.count(ScaleTag::quarter))
                graph_feats.push_back(relate(extract_features(bilinear_resize(rainy, h / 4, w / 4), gp, cfg_.leaky_slope)));
            if (cfg_.use_exemplar) {
                if (exemplar.rank() != 3 || exemplar.dim(0) != 3)
                    throw DimensionError("forward: exemplar must be [3,H,W], got " + shape_str(exemplar.shape()));
                graph_feats.push_back(relate(extract_features(exemplar, gp, cfg_.leaky_slope)));
            }
        }

        auto x = leaky_relu(conv(rainy, head_, 1, 1), cfg_.leaky_slope);

        std::vector<TensorT<T>> subnet_outputs;
        subnet_outputs.reserve(static_cast<std::size_t>(cfg_.subnets));
        for (int i = 0; i < cfg_.subnets; ++i) {
            for (int j = 0; j < cfg_.blocks; ++j) x = res_block(x, blocks_[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
            subnet_outputs.push_back(x);
            if (i + 1 < cfg_.subnets) {
                TensorT<T> fused = x;
                if (cfg_.use_fusion)
                    fused = conv(concat_channels(subnet_outputs), fusion_[static_cast<std::size_t>(i)], 1, 0);
                x = inject(fused, graph_feats, inject_[static_cast<std::size_t>(i)]);
            }
        }

        auto rain = conv(subnet_outputs.back(), tail_, 1, 1);
        return Output{clamp01(sub(rainy, rain)), rain, std::move(graphs_used)};
    }

    // (group label, scalar count) pairs summing to the total.
    std::vector<std::pair<std::string, std::int64_t>> param_breakdown() const {
        std::vector<std::pair<std::string, std::int64_t>> groups;
        auto bucket = [&groups](const std::string& label) -> std::int64_t& {
            for (auto& g : groups)
                if (g.first == label) return g.second;
            groups.emplace_back(label, 0);
            return groups.back().second;
        };
        for (int id = 0; id < store_.count(); ++id) {
            const std::string& name = store_.name(id);
            std::string label = name.substr(0, name.find('.'));
            if (label.rfind("subnet", 0) == 0) label = "subnets";
            if (label.rfind("fusion", 0) == 0) label = "fusion";
            if (label.rfind("inject", 0) == 0) label = "injection";
            bucket(label) += static_cast<std::int64_t>(store_.values(id).size());
        }
        return groups;
    }

    std::int64_t param_count() const { return store_.total_scalars(); }

    // Overwrites every parameter with U(-scale, scale); used by ablation
    // checks that want a non-degenerate random network (default init zeroes
    // the tail so a fresh model is the identity).
    void randomize_all(std::uint64_t seed, double scale = 0.1) {
        Rng rng(seed);
        for (int id = 0; id < store_.count(); ++id)
            for (auto& v : store_.values(id)) v = static_cast<T>(rng.uniform(-scale, scale));
    }

    bool use_graph() const { return cfg_.subnets > 1 && cfg_.graph_enabled(); }

private:
    struct ConvIds {
        int w = -1, b = -1;
    };
    struct BlockIds {
        ConvIds conv_a, conv_b;
        ConvIds fc1, fc2;  // channel gate; unused when attention == none
    };

    MsgnnConfig cfg_;
    ParamStore<T> store_;
    ConvIds head_, tail_;
    ConvIds graph_ids_[5];  // feat1..3, att1..2
    std::vector<std::vector<BlockIds>> blocks_;
    std::vector<ConvIds> fusion_;
    std::vector<std::array<ConvIds, 2>> inject_;

    int gate_hidden() const {
        const int reduction = cfg_.attention == AttentionVariant::se ? 16 : 8;
        return std::max(1, cfg_.channels / reduction);
    }

    ConvIds add_conv(Rng& rng, const std::string& name, int c_out, int c_in, int kh, int kw, bool zero_init = false) {
        const std::size_t n = static_cast<std::size_t>(c_out) * c_in * kh * kw;
        std::vector<T> w(n, T(0));
        if (!zero_init) {
            const double bound = std::sqrt(6.0 / (static_cast<double>(c_in) * kh * kw));
            for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
        }
        ConvIds ids;
        ids.w = store_.add(name + ".weight", {c_out, c_in, kh, kw}, std::move(w));
        ids.b = store_.add(name + ".bias", {c_out}, std::vector<T>(static_cast<std::size_t>(c_out), T(0)));
        return ids;
    }

    ConvIds add_fc(Rng& rng, const std::string& name, int out, int in) {
        const double bound = std::sqrt(6.0 / in);
        std::vector<T> w(static_cast<std::size_t>(out) * in);
        for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
        ConvIds ids;
        ids.w = store_.add(name + ".weight", {out, in}, std::move(w));
        ids.b = store_.add(name + ".bias", {out}, std::vector<T>(static_cast<std::size_t>(out), T(0)));
        return ids;
    }

    void build(std::uint64_t seed) {
        Rng rng(mix_seed(seed, 0x6d6f64656cull));  // "model"
        const int c = cfg_.channels;

        head_ = add_conv(rng, "head", c, 3, 3, 3);

        if (use_graph()) {
            graph_ids_[0] = add_conv(rng, "graph.feat1", c, 3, 3, 3);
            graph_ids_[1] = add_conv(rng, "graph.feat2", c, c, 3, 3);
            graph_ids_[2] = add_conv(rng, "graph.feat3", c, c, 3, 3);
            graph_ids_[3] = add_conv(rng, "graph.att1", c, c, 3, 3);
            graph_ids_[4] = add_conv(rng, "graph.att2", 1, c, 3, 3);
        }

        blocks_.resize(static_cast<std::size_t>(cfg_.subnets));
        for (int i = 0; i < cfg_.subnets; ++i) {
            blocks_[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(cfg_.blocks));
            for (int j = 0; j < cfg_.blocks; ++j) {
                const std::string base = "subnet" + std::to_string(i) + ".block" + std::to_string(j);
                auto& blk = blocks_[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                blk.conv_a = add_conv(rng, base + ".conv_a", c, c, 3, 3);
                blk.conv_b = add_conv(rng, base + ".conv_b", c, c, 3, 3);
                if (cfg_.attention != AttentionVariant::none) {
                    blk.fc1 = add_fc(rng, base + ".gate_fc1", gate_hidden(), c);
                    blk.fc2 = add_fc(rng, base + ".gate_fc2", c, gate_hidden());
                }
            }
        }

        for (int i = 0; i + 1 < cfg_.subnets; ++i) {
            if (cfg_.use_fusion)
                fusion_.push_back(add_conv(rng, "fusion" + std::to_string(i), c, c * (i + 1), 1, 1));
            const int inject_in = c * (1 + (use_graph() ? cfg_.graph_branches() : 0));
            std::array<ConvIds, 2> site;
            site[0] = add_conv(rng, "inject" + std::to_string(i) + ".conv1", c, inject_in, 5, 5);
            site[1] = add_conv(rng, "inject" + std::to_string(i) + ".conv2", c, c, 5, 5);
            inject_.push_back(site);
        }

        // Zero-initialized tail: a fresh model predicts no rain and is the
        // identity on its input.
        tail_ = add_conv(rng, "tail", 3, c, 3, 3, /*zero_init=*/true);
    }

    TensorT<T> conv(const TensorT<T>& x, const ConvIds& ids, int stride, int pad) const {
        return conv2d(x, store_.leaf(ids.w), store_.leaf(ids.b), stride, pad);
    }

    GraphParams<T> graph_leaves() const {
        GraphParams<T> p;
        p.feat_w1 = store_.leaf(graph_ids_[0].w);
        p.feat_b1 = store_.leaf(graph_ids_[0].b);
        p.feat_w2 = store_.leaf(graph_ids_[1].w);
        p.feat_b2 = store_.leaf(graph_ids_[1].b);
        p.feat_w3 = store_.leaf(graph_ids_[2].w);
        p.feat_b3 = store_.leaf(graph_ids_[2].b);
        p.att_w1 = store_.leaf(graph_ids_[3].w);
        p.att_b1 = store_.leaf(graph_ids_[3].b);
        p.att_w2 = store_.leaf(graph_ids_[4].w);
        p.att_b2 = store_.leaf(graph_ids_[4].b);
        return p;
    }

    TensorT<T> res_block(const TensorT<T>& x, const BlockIds& blk) const {
        auto u = conv(leaky_relu(conv(x, blk.conv_a, 1, 1), cfg_.leaky_slope), blk.conv_b, 1, 1);
        if (cfg_.attention != AttentionVariant::none) {
            auto pooled = global_avg_pool(u);
            auto hidden = linear(pooled, store_.leaf(blk.fc1.w), store_.leaf(blk.fc1.b));
            hidden = cfg_.attention == AttentionVariant::se ? relu(hidden) : leaky_relu(hidden, cfg_.leaky_slope);
            auto gate = sigmoid(linear(hidden, store_.leaf(blk.fc2.w), store_.leaf(blk.fc2.b)));
            u = scale_channels(u, gate);
        }
        return add(x, u);
    }

    TensorT<T> inject(const TensorT<T>& backbone, const std::vector<TensorT<T>>& graph_feats,
                      const std::array<ConvIds, 2>& site) const {
        std::vector<TensorT<T>> all{backbone};
        for (const auto& g : graph_feats) all.push_back(g);
        auto x = all.size() == 1 ? all[0] : concat_channels(all);
        const int h = backbone.dim(1), w = backbone.dim(2);
        if (cfg_.inject_stride == 1) {
            auto y = leaky_relu(conv(x, site[0], 1, 2), cfg_.leaky_slope);
            return conv(y, site[1], 1, 2);
        }
        // Experimental stride-2 variant: each conv halves the resolution
        // (padding to keep extents even), then the result is resized back.
        auto strided = [&](const TensorT<T>& in, const ConvIds& ids) {
            TensorT<T> padded = in;
            const int ih = in.dim(1), iw = in.dim(2);
            const int pb = (ih + 4 - 5) % 2, pr = (iw + 4 - 5) % 2;
            if (pb || pr) padded = reflect_pad2d(in, 0, pb, 0, pr);
            return conv(padded, ids, 2, 2);
        };
        auto y = leaky_relu(strided(x, site[0]), cfg_.leaky_slope);
        auto z = strided(y, site[1]);
        return bilinear_resize(z, h, w);
    }
};

using Model = ModelT<float>;

// Exact trainable-scalar count for a configuration.
inline std::int64_t param_count(const MsgnnConfig& cfg) { return ModelT<float>(cfg).param_count(); }

}  // namespace msgnn
