#pragma once

#include <cstdio>
#include <vector>

#include "msgnn/tensor.hpp"

namespace msgnn {

// Grid bookkeeping for a patch decomposition. height/width are the original
// feature extents; padded_h/padded_w the reflection-padded extents the grid
// was actually cut from.
struct PatchGeometry {
    int rows = 0, cols = 0;
    int patch = 0, stride = 0;
    int channels = 0;
    int height = 0, width = 0;
    int padded_h = 0, padded_w = 0;

    int count() const { return rows * cols; }
    int patch_len() const { return channels * patch * patch; }

    bool operator==(const PatchGeometry&) const = default;
};

template <typename T>
struct PatchSetT {
    TensorT<T> patches;  // [Q, C*l*l]
    PatchGeometry geom;
};

// k nearest key patches per query, row-major Q x k, distances ascending,
// ties broken by ascending key index. Indices are constants on the tape.
struct KnnGraph {
    int k = 0;
    int query_count = 0;
    std::vector<int> neighbors;     // query_count * k
    std::vector<double> distances;  // Euclidean, same layout

    int neighbor(int q, int r) const { return neighbors[static_cast<std::size_t>(q) * k + r]; }
    double distance(int q, int r) const { return distances[static_cast<std::size_t>(q) * k + r]; }
    std::size_t edge_count() const { return neighbors.size(); }
};

// Parameters of the graph model: a three-layer feature CNN and the two-layer
// attention head that scores patch differences.
template <typename T>
struct GraphParams {
    TensorT<T> feat_w1, feat_b1, feat_w2, feat_b2, feat_w3, feat_b3;
    TensorT<T> att_w1, att_b1, att_w2, att_b2;
};

// Three 3x3 convs (3 -> C -> C -> C), LeakyReLU after the first two. Output
// spatial size equals the input's.
template <typename T>
TensorT<T> extract_features(const TensorT<T>& image, const GraphParams<T>& p, double slope) {
    auto h1 = leaky_relu(conv2d(image, p.feat_w1, p.feat_b1, 1, 1), slope);
    auto h2 = leaky_relu(conv2d(h1, p.feat_w2, p.feat_b2, 1, 1), slope);
    return conv2d(h2, p.feat_w3, p.feat_b3, 1, 1);
}

namespace detail {

inline int pad_for_grid(int extent, int patch, int stride) {
    if (extent < patch) return patch - extent;  // grow to one full window
    const int rem = (extent - patch) % stride;
    return rem == 0 ? 0 : stride - rem;
}

}  // namespace detail

// Sliding-window decomposition in row-major window order. Pads by reflection
// first when (extent - l) is not a stride multiple; the geometry remembers
// both extents so patch2img can crop back.
template <typename T>
PatchSetT<T> img2patch(const TensorT<T>& fmap, int l, int s) {
    if (fmap.rank() != 3) throw DimensionError("img2patch: expected rank-3 [C,H,W]");
    if (l < 1 || s < 1) throw ContractError("img2patch: patch size and stride must be >= 1");
    const int c = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
    if (l > h || l > w)
        throw DimensionError("img2patch: patch " + std::to_string(l) + " exceeds feature map " +
                             std::to_string(h) + "x" + std::to_string(w));

    const int pad_b = detail::pad_for_grid(h, l, s);
    const int pad_r = detail::pad_for_grid(w, l, s);
    TensorT<T> padded = (pad_b || pad_r) ? reflect_pad2d(fmap, 0, pad_b, 0, pad_r) : fmap;
    const int ph = h + pad_b, pw = w + pad_r;

    PatchGeometry geom;
    geom.rows = (ph - l) / s + 1;
    geom.cols = (pw - l) / s + 1;
    geom.patch = l;
    geom.stride = s;
    geom.channels = c;
    geom.height = h;
    geom.width = w;
    geom.padded_h = ph;
    geom.padded_w = pw;

    const int q = geom.count(), d = geom.patch_len();
    auto out = msgnn::detail::make_node<T>(Shape{q, d});
    const T* src = padded.data();
    for (int ry = 0; ry < geom.rows; ++ry)
        for (int rx = 0; rx < geom.cols; ++rx) {
            T* dst = out->value.data() + (static_cast<std::size_t>(ry) * geom.cols + rx) * d;
            for (int ch = 0; ch < c; ++ch)
                for (int py = 0; py < l; ++py) {
                    const T* row = src + (static_cast<std::size_t>(ch) * ph + ry * s + py) * pw + rx * s;
                    std::copy(row, row + l, dst + (static_cast<std::size_t>(ch) * l + py) * l);
                }
        }
    if (padded.requires_grad()) {
        out->requires_grad = true;
        out->parents = {padded.node()};
        const PatchGeometry g = geom;
        out->backprop = [g](msgnn::detail::Node<T>& self) {
            auto& p = *self.parents[0];
            const int d = g.patch_len();
            for (int ry = 0; ry < g.rows; ++ry)
                for (int rx = 0; rx < g.cols; ++rx) {
                    const T* grow = self.grad.data() + (static_cast<std::size_t>(ry) * g.cols + rx) * d;
                    for (int ch = 0; ch < g.channels; ++ch)
                        for (int py = 0; py < g.patch; ++py) {
                            T* dst = p.grad.data() +
                                     (static_cast<std::size_t>(ch) * g.padded_h + ry * g.stride + py) * g.padded_w +
                                     rx * g.stride;
                            const T* srcg = grow + (static_cast<std::size_t>(ch) * g.patch + py) * g.patch;
                            for (int px = 0; px < g.patch; ++px) dst[px] += srcg[px];
                        }
                }
        };
    }
    return PatchSetT<T>{TensorT<T>(out), geom};
}

// Scatter patches back onto the grid, averaging overlaps by coverage count,
// then crop away any padding introduced by img2patch. Exact inverse when
// stride equals patch size.
template <typename T>
TensorT<T> patch2img(const PatchSetT<T>& ps) {
    const PatchGeometry& g = ps.geom;
    if (ps.patches.rank() != 2 || ps.patches.dim(0) != g.count() || ps.patches.dim(1) != g.patch_len())
        throw DimensionError("patch2img: patch tensor " + shape_str(ps.patches.shape()) +
                             " inconsistent with geometry (" + std::to_string(g.count()) + "," +
                             std::to_string(g.patch_len()) + ")");

    // Coverage is identical across channels; compute it once.
    std::vector<int> coverage(static_cast<std::size_t>(g.padded_h) * g.padded_w, 0);
    for (int ry = 0; ry < g.rows; ++ry)
        for (int rx = 0; rx < g.cols; ++rx)
            for (int py = 0; py < g.patch; ++py)
                for (int px = 0; px < g.patch; ++px)
                    coverage[static_cast<std::size_t>(ry * g.stride + py) * g.padded_w + rx * g.stride + px]++;

    auto out = msgnn::detail::make_node<T>(Shape{g.channels, g.padded_h, g.padded_w});
    const int d = g.patch_len();
    for (int ry = 0; ry < g.rows; ++ry)
        for (int rx = 0; rx < g.cols; ++rx) {
            const T* src = ps.patches.data() + (static_cast<std::size_t>(ry) * g.cols + rx) * d;
            for (int ch = 0; ch < g.channels; ++ch)
                for (int py = 0; py < g.patch; ++py) {
                    T* dst = out->value.data() +
                             (static_cast<std::size_t>(ch) * g.padded_h + ry * g.stride + py) * g.padded_w +
                             rx * g.stride;
                    const T* row = src + (static_cast<std::size_t>(ch) * g.patch + py) * g.patch;
                    for (int px = 0; px < g.patch; ++px) dst[px] += row[px];
                }
        }
    for (int ch = 0; ch < g.channels; ++ch)
        for (std::size_t i = 0; i < coverage.size(); ++i)
            out->value[static_cast<std::size_t>(ch) * coverage.size() + i] /= static_cast<T>(coverage[i]);

    if (ps.patches.requires_grad()) {
        out->requires_grad = true;
        out->parents = {ps.patches.node()};
        const PatchGeometry geom = g;
        out->backprop = [geom, coverage](msgnn::detail::Node<T>& self) {
            auto& p = *self.parents[0];
            const int d = geom.patch_len();
            for (int ry = 0; ry < geom.rows; ++ry)
                for (int rx = 0; rx < geom.cols; ++rx) {
                    T* dst = p.grad.data() + (static_cast<std::size_t>(ry) * geom.cols + rx) * d;
                    for (int ch = 0; ch < geom.channels; ++ch)
                        for (int py = 0; py < geom.patch; ++py)
                            for (int px = 0; px < geom.patch; ++px) {
                                const std::size_t pos = static_cast<std::size_t>(ry * geom.stride + py) * geom.padded_w +
                                                        rx * geom.stride + px;
                                dst[(static_cast<std::size_t>(ch) * geom.patch + py) * geom.patch + px] +=
                                    self.grad[static_cast<std::size_t>(ch) * coverage.size() + pos] /
                                    static_cast<T>(coverage[pos]);
                            }
                }
        };
    }

    TensorT<T> full(out);
    if (g.padded_h != g.height || g.padded_w != g.width) return crop2d(full, 0, 0, g.height, g.width);
    return full;
}

// Exact k-NN by squared Euclidean distance, accumulated in double. Operates
// on forward values only; no gradient flows through the selection.
template <typename T>
KnnGraph knn_search(const PatchSetT<T>& query, const PatchSetT<T>& key, int k) {
    const int qn = query.geom.count();
    const int kn = key.geom.count();
    const int d = query.geom.patch_len();
    if (key.geom.patch_len() != d)
        throw DimensionError("knn_search: patch length mismatch " + std::to_string(d) + " vs " +
                             std::to_string(key.geom.patch_len()));
    if (k < 1 || k > kn)
        throw ContractError("knn_search: k=" + std::to_string(k) + " outside [1, " + std::to_string(kn) + "]");

    KnnGraph graph;
    graph.k = k;
    graph.query_count = qn;
    graph.neighbors.resize(static_cast<std::size_t>(qn) * k);
    graph.distances.resize(static_cast<std::size_t>(qn) * k);

    std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(kn));
    const T* qdata = query.patches.data();
    const T* kdata = key.patches.data();
    for (int q = 0; q < qn; ++q) {
        const T* qrow = qdata + static_cast<std::size_t>(q) * d;
        for (int j = 0; j < kn; ++j) {
            const T* krow = kdata + static_cast<std::size_t>(j) * d;
            double acc = 0.0;
            for (int t = 0; t < d; ++t) {
                const double diff = static_cast<double>(qrow[t]) - static_cast<double>(krow[t]);
                acc += diff * diff;
            }
            dist[static_cast<std::size_t>(j)] = {acc, j};
        }
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
        for (int r = 0; r < k; ++r) {
            graph.neighbors[static_cast<std::size_t>(q) * k + r] = dist[static_cast<std::size_t>(r)].second;
            graph.distances[static_cast<std::size_t>(q) * k + r] = std::sqrt(dist[static_cast<std::size_t>(r)].first);
        }
    }
    return graph;
}

// Attention head: two 3x3 convs (C -> C -> 1) with LeakyReLU between, then
// spatial mean. The aggregation weight is exp(logit), always positive.
template <typename T>
TensorT<T> attention_logit(const TensorT<T>& diff, const GraphParams<T>& p, double slope) {
    auto h = leaky_relu(conv2d(diff, p.att_w1, p.att_b1, 1, 1), slope);
    return mean(conv2d(h, p.att_w2, p.att_b2, 1, 1));
}

// Weighted averaging of the k neighbors of every query patch. Weights are
// exp of the attention logit of the query-minus-neighbor difference,
// normalized per query. The result keeps the query geometry.
template <typename T>
PatchSetT<T> attentional_aggregate(const KnnGraph& graph, const PatchSetT<T>& query, const PatchSetT<T>& key,
                                   const GraphParams<T>& p, double slope) {
    const int qn = query.geom.count();
    const int d = query.geom.patch_len();
    if (graph.query_count != qn || key.geom.patch_len() != d)
        throw DimensionError("attentional_aggregate: graph/patch geometry mismatch");
    const int k = graph.k;
    const int c = query.geom.channels, l = query.geom.patch;

    std::vector<TensorT<T>> rows;
    rows.reserve(static_cast<std::size_t>(qn));
    for (int q = 0; q < qn; ++q) {
        std::vector<int> nbr(graph.neighbors.begin() + static_cast<std::ptrdiff_t>(q) * k,
                             graph.neighbors.begin() + static_cast<std::ptrdiff_t>(q + 1) * k);
        auto neighbor_rows = gather_rows(key.patches, nbr);
        auto query_rows = gather_rows(query.patches, std::vector<int>(static_cast<std::size_t>(k), q));
        auto diffs = sub(query_rows, neighbor_rows);

        std::vector<TensorT<T>> logits;
        logits.reserve(static_cast<std::size_t>(k));
        for (int r = 0; r < k; ++r) {
            auto diff = reshape(gather_rows(diffs, {r}), {c, l, l});
            logits.push_back(attention_logit(diff, p, slope));
        }
        auto alpha = exp(stack_scalars(logits));
        auto weights = div(alpha, sum(alpha));
        rows.push_back(weighted_row_sum(neighbor_rows, weights));
    }
    return PatchSetT<T>{stack_rows(rows), query.geom};
}

// The full graph model over one (query, key) pair of feature maps: decompose
// into patches, connect each query patch to its k nearest key patches, and
// reassemble the attention-aggregated patches at the query geometry.
//
// `fixed` bypasses the nearest-neighbor search with a previously built graph.
// The selection is piecewise constant in the parameters, so gradient checks
// must hold the indices fixed while perturbing; `used` reports the graph a
// call selected so a later call can freeze it.
template <typename T>
TensorT<T> graph_relate(const TensorT<T>& query_features, const TensorT<T>& key_features, const GraphParams<T>& p,
                        int k, int l, int s, double slope, const KnnGraph* fixed = nullptr,
                        KnnGraph* used = nullptr) {
    auto query = img2patch(query_features, l, s);
    auto key = img2patch(key_features, l, s);
    KnnGraph graph;
    if (fixed) {
        if (fixed->query_count != query.geom.count())
            throw DimensionError("graph_relate: fixed graph covers " + std::to_string(fixed->query_count) +
                                 " queries, expected " + std::to_string(query.geom.count()));
        graph = *fixed;
    } else {
        int k_eff = k;
        if (k_eff > key.geom.count()) {
            std::fprintf(stderr, "warning: k=%d clamped to %d available key patches\n", k, key.geom.count());
            k_eff = key.geom.count();
        }
        graph = knn_search(query, key, k_eff);
    }
    if (used) *used = graph;
    auto aggregated = attentional_aggregate(graph, query, key, p, slope);
    return patch2img(aggregated);
}

}  // namespace msgnn
