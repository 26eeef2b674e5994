#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "msgnn/errors.hpp"
#include "msgnn/rng.hpp"

namespace msgnn {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

inline std::uint64_t next_seq() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

// One node of the recorded forward tape. Parents are held by shared_ptr, so
// the subgraph stays alive exactly as long as some downstream tensor does.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    int param_id = -1;
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backprop;
};

template <typename T>
std::shared_ptr<Node<T>> make_node(Shape shape) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<std::size_t>(shape_numel(n->shape)), T(0));
    n->seq = next_seq();
    return n;
}

}  // namespace detail

template <typename T>
class TensorT {
public:
    using Scalar = T;

    TensorT() = default;
    explicit TensorT(std::shared_ptr<detail::Node<T>> n) : n_(std::move(n)) {}

    static TensorT zeros(Shape shape) { return TensorT(detail::make_node<T>(std::move(shape))); }

    static TensorT constant(Shape shape, T v) {
        auto n = detail::make_node<T>(std::move(shape));
        for (auto& x : n->value) x = v;
        return TensorT(n);
    }

    static TensorT from_vector(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw DimensionError("tensor: data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = detail::make_node<T>(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return TensorT(n);
    }

    // Leaf parameter: participates in backward under a stable id.
    static TensorT leaf(Shape shape, std::vector<T> data, int param_id) {
        TensorT t = from_vector(std::move(shape), std::move(data), true);
        t.n_->param_id = param_id;
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(n_->value.size()); }
    bool requires_grad() const { return n_ && n_->requires_grad; }

    std::span<const T> values() const { return n_->value; }
    const T* data() const { return n_->value.data(); }

    T item() const {
        if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements, expected 1");
        return n_->value[0];
    }

    std::shared_ptr<detail::Node<T>> node() const { return n_; }

private:
    std::shared_ptr<detail::Node<T>> n_;
};

using Tensor = TensorT<float>;

// Gradients keyed by leaf parameter id; multiple leaf nodes created from the
// same parameter accumulate into one entry.
template <typename T>
class GradientMap {
public:
    bool contains(int param_id) const { return grads_.count(param_id) != 0; }

    const TensorT<T>& at(int param_id) const {
        auto it = grads_.find(param_id);
        if (it == grads_.end())
            throw ContractError("gradient map: no entry for parameter id " + std::to_string(param_id));
        return it->second;
    }

    std::size_t size() const { return grads_.size(); }

    void accumulate(int param_id, const Shape& shape, const std::vector<T>& g) {
        auto it = grads_.find(param_id);
        if (it == grads_.end()) {
            grads_.emplace(param_id, TensorT<T>::from_vector(shape, g));
        } else {
            auto n = it->second.node();
            for (std::size_t i = 0; i < g.size(); ++i) n->value[i] += g[i];
        }
    }

private:
    std::unordered_map<int, TensorT<T>> grads_;
};

namespace detail {

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

template <typename T>
bool any_grad(std::initializer_list<const TensorT<T>*> ts) {
    for (const auto* t : ts)
        if ((*t).requires_grad()) return true;
    return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops. Broadcasting is exact-shape or scalar-vs-tensor only.
// ---------------------------------------------------------------------------

namespace detail {

// Generic binary op with scalar broadcast on either side.
template <typename T, typename FwdFn, typename BwdFn>
TensorT<T> binary_op(const TensorT<T>& a, const TensorT<T>& b, const char* name, FwdFn fwd, BwdFn bwd) {
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (!(a.shape() == b.shape() || a_scalar || b_scalar))
        throw DimensionError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()) + " (only exact-shape or scalar broadcast)");

    const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
    auto out = make_node<T>(out_shape);
    const std::size_t n = out->value.size();
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < n; ++i)
        out->value[i] = fwd(pa[a_scalar ? 0 : i], pb[b_scalar ? 0 : i]);

    if (any_grad<T>({&a, &b})) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        out->backprop = [a_scalar, b_scalar, bwd](Node<T>& self) {
            auto& pa_ = *self.parents[0];
            auto& pb_ = *self.parents[1];
            const std::size_t m = self.value.size();
            for (std::size_t i = 0; i < m; ++i) {
                const T av = pa_.value[a_scalar ? 0 : i];
                const T bv = pb_.value[b_scalar ? 0 : i];
                T da, db;
                bwd(av, bv, da, db);
                const T g = self.grad[i];
                if (pa_.requires_grad) pa_.grad[a_scalar ? 0 : i] += g * da;
                if (pb_.requires_grad) pb_.grad[b_scalar ? 0 : i] += g * db;
            }
        };
    }
    return TensorT<T>(out);
}

template <typename T, typename FwdFn, typename BwdFn>
TensorT<T> unary_op(const TensorT<T>& x, FwdFn fwd, BwdFn bwd) {
    auto out = make_node<T>(x.shape());
    const std::size_t n = out->value.size();
    const T* px = x.data();
    for (std::size_t i = 0; i < n; ++i) out->value[i] = fwd(px[i]);
    if (x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        out->backprop = [bwd](Node<T>& self) {
            auto& p = *self.parents[0];
            for (std::size_t i = 0; i < self.value.size(); ++i)
                p.grad[i] += self.grad[i] * bwd(p.value[i], self.value[i]);
        };
    }
    return TensorT<T>(out);
}

}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(
        a, b, "add", [](T x, T y) { return x + y; },
        [](T, T, T& da, T& db) { da = T(1); db = T(1); });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](T, T, T& da, T& db) { da = T(1); db = T(-1); });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](T x, T y, T& da, T& db) { da = y; db = x; });
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(
        a, b, "div", [](T x, T y) { return x / y; },
        [](T x, T y, T& da, T& db) { da = T(1) / y; db = -x / (y * y); });
}

template <typename T>
TensorT<T> exp(const TensorT<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    return detail::unary_op(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, double slope) {
    if (!(slope > 0.0 && slope < 1.0))
        throw ContractError("leaky_relu: slope must be in (0,1), got " + std::to_string(slope));
    const T s = static_cast<T>(slope);
    return detail::unary_op(
        x, [s](T v) { return v >= T(0) ? v : s * v; },
        [s](T v, T) { return v >= T(0) ? T(1) : s; });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

// Clamp to [0,1] with pass-through gradient on the closed interval.
template <typename T>
TensorT<T> clamp01(const TensorT<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v < T(0) ? T(0) : (v > T(1) ? T(1) : v); },
        [](T v, T) { return (v >= T(0) && v <= T(1)) ? T(1) : T(0); });
}

template <typename T>
TensorT<T> scalar_mul(const TensorT<T>& x, double c) {
    const T cv = static_cast<T>(c);
    return detail::unary_op(
        x, [cv](T v) { return cv * v; }, [cv](T, T) { return cv; });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& x, double c) {
    const T cv = static_cast<T>(c);
    return detail::unary_op(
        x, [cv](T v) { return v + cv; }, [](T, T) { return T(1); });
}

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
    auto out = detail::make_node<T>(Shape{1});
    T acc = T(0);
    for (T v : x.values()) acc += v;
    out->value[0] = acc;
    if (x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        out->backprop = [](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            const T g = self.grad[0];
            for (auto& gv : p.grad) gv += g;
        };
    }
    return TensorT<T>(out);
}

template <typename T>
TensorT<T> mean(const TensorT<T>& x) {
    const std::int64_t n = x.numel();
    return scalar_mul(sum(x), 1.0 / static_cast<double>(n));
}

template <typename T>
TensorT<T> operator+(const TensorT<T>& a, const TensorT<T>& b) { return add(a, b); }
template <typename T>
TensorT<T> operator-(const TensorT<T>& a, const TensorT<T>& b) { return sub(a, b); }
template <typename T>
TensorT<T> operator*(const TensorT<T>& a, const TensorT<T>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    auto out = detail::make_node<T>(std::move(shape));
    out->value = std::vector<T>(x.values().begin(), x.values().end());
    if (x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        out->backprop = [](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        };
    }
    return TensorT<T>(out);
}

template <typename T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& inputs) {
    if (inputs.empty()) throw ContractError("concat_channels: empty input list");
    const int h = inputs[0].dim(1);
    const int w = inputs[0].dim(2);
    int c_total = 0;
    bool grad = false;
    for (const auto& t : inputs) {
        if (t.rank() != 3)
            throw DimensionError("concat_channels: expected rank-3 [C,H,W], got " + shape_str(t.shape()));
        if (t.dim(1) != h || t.dim(2) != w)
            throw DimensionError("concat_channels: spatial mismatch " + shape_str(t.shape()) +
                                 " vs [*," + std::to_string(h) + "," + std::to_string(w) + "]");
        c_total += t.dim(0);
        grad = grad || t.requires_grad();
    }
    auto out = detail::make_node<T>(Shape{c_total, h, w});
    std::size_t off = 0;
    for (const auto& t : inputs) {
        const std::size_t n = static_cast<std::size_t>(t.numel());
        std::copy(t.data(), t.data() + n, out->value.begin() + static_cast<std::ptrdiff_t>(off));
        off += n;
    }
    if (grad) {
        out->requires_grad = true;
        for (const auto& t : inputs) out->parents.push_back(t.node());
        out->backprop = [](detail::Node<T>& self) {
            std::size_t pos = 0;
            for (auto& pp : self.parents) {
                const std::size_t n = pp->value.size();
                if (pp->requires_grad)
                    for (std::size_t i = 0; i < n; ++i) pp->grad[i] += self.grad[pos + i];
                pos += n;
            }
        };
    }
    return TensorT<T>(out);
}

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& x, int first, int count) {
    if (x.rank() != 3) throw DimensionError("slice_channels: expected rank-3 [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (first < 0 || count < 1 || first + count > c)
        throw DimensionError("slice_channels: range [" + std::to_string(first) + "," +
                             std::to_string(first + count) + ") out of " + std::to_string(c) + " channels");
    auto out = detail::make_node<T>(Shape{count, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t start = static_cast<std::size_t>(first) * plane;
    std::copy(x.data() + start, x.data() + start + static_cast<std::size_t>(count) * plane, out->value.begin());
    if (x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        out->backprop = [start](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[start + i] += self.grad[i];
        };
    }
    return TensorT<T>(out);
}

// ---------------------------------------------------------------------------
// conv2d: input [Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout].
// Zero padding; the output extent must divide exactly.
// ---------------------------------------------------------------------------

namespace detail {

inline void conv_out_extent(int in, int k, int stride, int padding, const char* axis, int& out) {
    const int span = in + 2 * padding - k;
    if (span < 0)
        throw DimensionError(std::string("conv2d: kernel ") + std::to_string(k) + " exceeds padded input " +
                             std::to_string(in + 2 * padding) + " on axis " + axis);
    if (span % stride != 0)
        throw DimensionError(std::string("conv2d: axis ") + axis + ": (" + std::to_string(in) + " + 2*" +
                             std::to_string(padding) + " - " + std::to_string(k) + ") is not divisible by stride " +
                             std::to_string(stride));
    out = span / stride + 1;
}

// Accumulate w * x_row into out_row over the valid output range.
template <typename T>
inline void conv_axpy_row(T* out_row, const T* x_row, T wv, int ow_count, int stride, int pad, int kx, int in_w) {
    int lo = pad - kx;
    int ox0 = lo <= 0 ? 0 : (lo + stride - 1) / stride;
    int hi = in_w - 1 + pad - kx;
    if (hi < 0) return;
    int ox1 = hi / stride;
    if (ox1 > ow_count - 1) ox1 = ow_count - 1;
    const T* xr = x_row - pad + kx;
    if (stride == 1) {
        for (int ox = ox0; ox <= ox1; ++ox) out_row[ox] += wv * xr[ox];
    } else {
        for (int ox = ox0; ox <= ox1; ++ox) out_row[ox] += wv * xr[ox * stride];
    }
}

}  // namespace detail

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride, int padding) {
    if (x.rank() != 3) throw DimensionError("conv2d: input must be [Cin,H,W], got " + shape_str(x.shape()));
    if (w.rank() != 4) throw DimensionError("conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(w.shape()));
    if (b.rank() != 1) throw DimensionError("conv2d: bias must be [Cout], got " + shape_str(b.shape()));
    if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
    if (padding < 0) throw ContractError("conv2d: padding must be >= 0");

    const int cin = x.dim(0), h = x.dim(1), width = x.dim(2);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin)
        throw DimensionError("conv2d: input channel axis (" + std::to_string(cin) +
                             ") != weight in-channel axis (" + std::to_string(w.dim(1)) + ")");
    if (b.dim(0) != cout)
        throw DimensionError("conv2d: bias axis (" + std::to_string(b.dim(0)) + ") != weight out-channel axis (" +
                             std::to_string(cout) + ")");

    int oh = 0, ow = 0;
    detail::conv_out_extent(h, kh, stride, padding, "H", oh);
    detail::conv_out_extent(width, kw, stride, padding, "W", ow);

    auto out = detail::make_node<T>(Shape{cout, oh, ow});
    const T* px = x.data();
    const T* pw = w.data();
    const T* pb = b.data();
    T* po = out->value.data();

    for (int oc = 0; oc < cout; ++oc) {
        T* oplane = po + static_cast<std::size_t>(oc) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) oplane[i] = pb[oc];
        for (int ic = 0; ic < cin; ++ic) {
            const T* xplane = px + static_cast<std::size_t>(ic) * h * width;
            const T* wk = pw + (static_cast<std::size_t>(oc) * cin + ic) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= h) continue;
                    const T* xrow = xplane + static_cast<std::size_t>(iy) * width;
                    T* orow = oplane + static_cast<std::size_t>(oy) * ow;
                    for (int kx = 0; kx < kw; ++kx)
                        detail::conv_axpy_row(orow, xrow, wk[ky * kw + kx], ow, stride, padding, kx, width);
                }
            }
        }
    }

    if (detail::any_grad<T>({&x, &w, &b})) {
        out->requires_grad = true;
        out->parents = {x.node(), w.node(), b.node()};
        out->backprop = [stride, padding, cin, h, width, cout, kh, kw, oh, ow](detail::Node<T>& self) {
            auto& xn = *self.parents[0];
            auto& wn = *self.parents[1];
            auto& bn = *self.parents[2];
            const T* g = self.grad.data();

            if (bn.requires_grad) {
                for (int oc = 0; oc < cout; ++oc) {
                    T acc = T(0);
                    const T* gp = g + static_cast<std::size_t>(oc) * oh * ow;
                    for (int i = 0; i < oh * ow; ++i) acc += gp[i];
                    bn.grad[static_cast<std::size_t>(oc)] += acc;
                }
            }
            if (wn.requires_grad) {
                for (int oc = 0; oc < cout; ++oc) {
                    const T* gplane = g + static_cast<std::size_t>(oc) * oh * ow;
                    for (int ic = 0; ic < cin; ++ic) {
                        const T* xplane = xn.value.data() + static_cast<std::size_t>(ic) * h * width;
                        T* wg = wn.grad.data() + (static_cast<std::size_t>(oc) * cin + ic) * kh * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int kx = 0; kx < kw; ++kx) {
                                T acc = T(0);
                                for (int oy = 0; oy < oh; ++oy) {
                                    const int iy = oy * stride - padding + ky;
                                    if (iy < 0 || iy >= h) continue;
                                    const T* xrow = xplane + static_cast<std::size_t>(iy) * width;
                                    const T* grow = gplane + static_cast<std::size_t>(oy) * ow;
                                    for (int ox = 0; ox < ow; ++ox) {
                                        const int ix = ox * stride - padding + kx;
                                        if (ix < 0 || ix >= width) continue;
                                        acc += grow[ox] * xrow[ix];
                                    }
                                }
                                wg[ky * kw + kx] += acc;
                            }
                        }
                    }
                }
            }
            if (xn.requires_grad) {
                for (int oc = 0; oc < cout; ++oc) {
                    const T* gplane = g + static_cast<std::size_t>(oc) * oh * ow;
                    for (int ic = 0; ic < cin; ++ic) {
                        T* xg = xn.grad.data() + static_cast<std::size_t>(ic) * h * width;
                        const T* wk = wn.value.data() + (static_cast<std::size_t>(oc) * cin + ic) * kh * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int oy = 0; oy < oh; ++oy) {
                                const int iy = oy * stride - padding + ky;
                                if (iy < 0 || iy >= h) continue;
                                T* xrow = xg + static_cast<std::size_t>(iy) * width;
                                const T* grow = gplane + static_cast<std::size_t>(oy) * ow;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const T wv = wk[ky * kw + kx];
                                    for (int ox = 0; ox < ow; ++ox) {
                                        const int ix = ox * stride - padding + kx;
                                        if (ix < 0 || ix >= width) continue;
                                        xrow[ix] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return TensorT<T>(out);
}

// ---------------------------------------------------------------------------
// bilinear_resize: align_corners=false sampling with edge clamping.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> bilinear_resize(const TensorT<T>& x, int out_h, int out_w) {
    if (x.rank() != 3) throw DimensionError("bilinear_resize: expected rank-3 [C,H,W]");
    if (out_h < 1 || out_w < 1) throw ContractError("bilinear_resize: output size must be >= 1");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);

    struct Tap {
        int i0, i1;
        T w0, w1;
    };
    auto make_taps = [](int in, int out) {
        std::vector<Tap> taps(static_cast<std::size_t>(out));
        const double scale = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            double src = (o + 0.5) * scale - 0.5;
            if (src < 0) src = 0;
            if (src > in - 1) src = in - 1;
            int i0 = static_cast<int>(src);
            int i1 = i0 + 1 < in ? i0 + 1 : i0;
            const double f = src - i0;
            taps[static_cast<std::size_t>(o)] = {i0, i1, static_cast<T>(1.0 - f), static_cast<T>(f)};
        }
        return taps;
    };
    auto ty = make_taps(h, out_h);
    auto tx = make_taps(w, out_w);

    auto out = detail::make_node<T>(Shape{c, out_h, out_w});
    const T* px = x.data();
    T* po = out->value.data();
    for (int ch = 0; ch < c; ++ch) {
        const T* plane = px + static_cast<std::size_t>(ch) * h * w;
        T* oplane = po + static_cast<std::size_t>(ch) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const Tap& a = ty[static_cast<std::size_t>(oy)];
            const T* r0 = plane + static_cast<std::size_t>(a.i0) * w;
            const T* r1 = plane + static_cast<std::size_t>(a.i1) * w;
            for (int ox = 0; ox < out_w; ++ox) {
                const Tap& bx = tx[static_cast<std::size_t>(ox)];
                oplane[oy * out_w + ox] = a.w0 * (bx.w0 * r0[bx.i0] + bx.w1 * r0[bx.i1]) +
                                          a.w1 * (bx.w0 * r1[bx.i0] + bx.w1 * r1[bx.i1]);
            }
        }
    }
    if (x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        out->backprop = [c, h, w, out_h, out_w, ty, tx](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (int ch = 0; ch < c; ++ch) {
                T* gplane = p.grad.data() + static_cast<std::size_t>(ch) * h * w;
                const T* go = self.grad.data() + static_cast<std::size_t>(ch) * out_h * out_w;
                for (int oy = 0; oy < out_h; ++oy) {
                    const auto& a = ty[static_cast<std::size_t>(oy)];
                    for (int ox = 0; ox < out_w; ++ox) {
                        const auto& bx = tx[static_cast<std::size_t>(ox)];
                        const T g = go[oy * out_w + ox];
                        gplane[a.i0 * w + bx.i0] += g * a.w0 * bx.w0;
                        gplane[a.i0 * w + bx.i1] += g * a.w0 * bx.w1;
                        gplane[a.i1 * w + bx.i0] += g * a.w1 * bx.w0;
                        gplane[a.i1 * w + bx.i1] += g * a.w1 * bx.w1;
                    }
                }
            }
        };
    }
    return TensorT<T>(out);
}

// ---------------------------------------------------------------------------
// Spatial padding/cropping (reflection without edge repeat).
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reflect_pad2d(const TensorT<T>& x, int top, int bottom, int left, int right) {
    if (x.rank() != 3) throw DimensionError("reflect_pad2d: expected rank-3 [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (top >= h || bottom >= h || left >= w || right >= w)
        throw DimensionError("reflect_pad2d: padding must be smaller than the corresponding extent");
    const int nh = h + top + bottom, nw = w + left + right;
    auto reflect = [](int i, int n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
        return i;
    };
    std::vector<int> ry(static_cast<std::size_t>(nh)), rx(static_cast<std::size_t>(nw));
    for (int i = 0; i < nh; ++i) ry[static_cast<std::size_t>(i)] = reflect(i - top, h);
    for (int i = 0; i < nw; ++i) rx[static_cast<std::size_t>(i)] = reflect(i - left, w);

    auto out = detail::make_node<T>(Shape{c, nh, nw});
    const T* px = x.data();
    for (int ch = 0; ch < c; ++ch) {
        const T* plane = px + static_cast<std::size_t>(ch) * h * w;
        T* oplane = out->value.data() + static_cast<std::size_t>(ch) * nh * nw;
        for (int y = 0; y < nh; ++y)
            for (int xq = 0; xq < nw; ++xq)
                oplane[y * nw + xq] = plane[ry[static_cast<std::size_t>(y)] * w + rx[static_cast<std::size_t>(xq)]];
    }
    if (x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        out->backprop = [c, h, w, nh, nw, ry, rx](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (int ch = 0; ch < c; ++ch) {
                T* gplane = p.grad.data() + static_cast<std::size_t>(ch) * h * w;
                const T* go = self.grad.data() + static_cast<std::size_t>(ch) * nh * nw;
                for (int y = 0; y < nh; ++y)
                    for (int xq = 0; xq < nw; ++xq)
                        gplane[ry[static_cast<std::size_t>(y)] * w + rx[static_cast<std::size_t>(xq)]] +=
                            go[y * nw + xq];
            }
        };
    }
    return TensorT<T>(out);
}

template <typename T>
TensorT<T> crop2d(const TensorT<T>& x, int top, int left, int out_h, int out_w) {
    if (x.rank() != 3) throw DimensionError("crop2d: expected rank-3 [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (top < 0 || left < 0 || top + out_h > h || left + out_w > w)
        throw DimensionError("crop2d: window exceeds input " + shape_str(x.shape()));
    auto out = detail::make_node<T>(Shape{c, out_h, out_w});
    const T* px = x.data();
    for (int ch = 0; ch < c; ++ch) {
        const T* plane = px + static_cast<std::size_t>(ch) * h * w;
        T* oplane = out->value.data() + static_cast<std::size_t>(ch) * out_h * out_w;
        for (int y = 0; y < out_h; ++y)
            std::copy(plane + (top + y) * w + left, plane + (top + y) * w + left + out_w, oplane + y * out_w);
    }
    if (x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        out->backprop = [c, h, w, top, left, out_h, out_w](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (int ch = 0; ch < c; ++ch) {
                T* gplane = p.grad.data() + static_cast<std::size_t>(ch) * h * w;
                const T* go = self.grad.data() + static_cast<std::size_t>(ch) * out_h * out_w;
                for (int y = 0; y < out_h; ++y)
                    for (int xq = 0; xq < out_w; ++xq) gplane[(top + y) * w + left + xq] += go[y * out_w + xq];
            }
        };
    }
    return TensorT<T>(out);
}

// ---------------------------------------------------------------------------
// Small dense ops used by the channel gate and attention heads.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
    if (x.rank() != 3) throw DimensionError("global_avg_pool: expected rank-3 [C,H,W]");
    const int c = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    auto out = detail::make_node<T>(Shape{c});
    const T* px = x.data();
    for (int ch = 0; ch < c; ++ch) {
        T acc = T(0);
        for (std::size_t i = 0; i < plane; ++i) acc += px[static_cast<std::size_t>(ch) * plane + i];
        out->value[static_cast<std::size_t>(ch)] = acc / static_cast<T>(plane);
    }
    if (x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        out->backprop = [c, plane](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (int ch = 0; ch < c; ++ch) {
                const T g = self.grad[static_cast<std::size_t>(ch)] / static_cast<T>(plane);
                for (std::size_t i = 0; i < plane; ++i) p.grad[static_cast<std::size_t>(ch) * plane + i] += g;
            }
        };
    }
    return TensorT<T>(out);
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    if (x.rank() != 1 || w.rank() != 2 || b.rank() != 1)
        throw DimensionError("linear: expected x[I], w[O,I], b[O]");
    const int in = x.dim(0), outn = w.dim(0);
    if (w.dim(1) != in || b.dim(0) != outn)
        throw DimensionError("linear: shape mismatch x" + shape_str(x.shape()) + " w" + shape_str(w.shape()) +
                             " b" + shape_str(b.shape()));
    auto out = detail::make_node<T>(Shape{outn});
    for (int o = 0; o < outn; ++o) {
        T acc = b.data()[o];
        const T* wr = w.data() + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) acc += wr[i] * x.data()[i];
        out->value[static_cast<std::size_t>(o)] = acc;
    }
    if (detail::any_grad<T>({&x, &w, &b})) {
        out->requires_grad = true;
        out->parents = {x.node(), w.node(), b.node()};
        out->backprop = [in, outn](detail::Node<T>& self) {
            auto& xn = *self.parents[0];
            auto& wn = *self.parents[1];
            auto& bn = *self.parents[2];
            for (int o = 0; o < outn; ++o) {
                const T g = self.grad[static_cast<std::size_t>(o)];
                if (bn.requires_grad) bn.grad[static_cast<std::size_t>(o)] += g;
                const T* wr = wn.value.data() + static_cast<std::size_t>(o) * in;
                for (int i = 0; i < in; ++i) {
                    if (wn.requires_grad)
                        wn.grad[static_cast<std::size_t>(o) * in + i] += g * xn.value[static_cast<std::size_t>(i)];
                    if (xn.requires_grad) xn.grad[static_cast<std::size_t>(i)] += g * wr[i];
                }
            }
        };
    }
    return TensorT<T>(out);
}

// y[c,h,w] = x[c,h,w] * s[c]
template <typename T>
TensorT<T> scale_channels(const TensorT<T>& x, const TensorT<T>& s) {
    if (x.rank() != 3 || s.rank() != 1 || s.dim(0) != x.dim(0))
        throw DimensionError("scale_channels: expected x[C,H,W] and s[C], got " + shape_str(x.shape()) + " and " +
                             shape_str(s.shape()));
    const int c = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    auto out = detail::make_node<T>(x.shape());
    for (int ch = 0; ch < c; ++ch) {
        const T sv = s.data()[ch];
        for (std::size_t i = 0; i < plane; ++i)
            out->value[static_cast<std::size_t>(ch) * plane + i] = sv * x.data()[static_cast<std::size_t>(ch) * plane + i];
    }
    if (detail::any_grad<T>({&x, &s})) {
        out->requires_grad = true;
        out->parents = {x.node(), s.node()};
        out->backprop = [c, plane](detail::Node<T>& self) {
            auto& xn = *self.parents[0];
            auto& sn = *self.parents[1];
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t base = static_cast<std::size_t>(ch) * plane;
                if (xn.requires_grad) {
                    const T sv = sn.value[static_cast<std::size_t>(ch)];
                    for (std::size_t i = 0; i < plane; ++i) xn.grad[base + i] += self.grad[base + i] * sv;
                }
                if (sn.requires_grad) {
                    T acc = T(0);
                    for (std::size_t i = 0; i < plane; ++i) acc += self.grad[base + i] * xn.value[base + i];
                    sn.grad[static_cast<std::size_t>(ch)] += acc;
                }
            }
        };
    }
    return TensorT<T>(out);
}

// ---------------------------------------------------------------------------
// Row ops over [Q,D] matrices (patch sets). Index vectors are constants on
// the tape; gradients never flow through them.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<int>& idx) {
    if (x.rank() != 2) throw DimensionError("gather_rows: expected rank-2 [Q,D]");
    const int q = x.dim(0), d = x.dim(1);
    for (int i : idx)
        if (i < 0 || i >= q) throw ContractError("gather_rows: index " + std::to_string(i) + " out of range");
    auto out = detail::make_node<T>(Shape{static_cast<int>(idx.size()), d});
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(x.data() + static_cast<std::size_t>(idx[r]) * d, x.data() + static_cast<std::size_t>(idx[r] + 1) * d,
                  out->value.begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(d)));
    if (x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        out->backprop = [idx, d](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (int i = 0; i < d; ++i)
                    p.grad[static_cast<std::size_t>(idx[r]) * d + i] += self.grad[r * static_cast<std::size_t>(d) + i];
        };
    }
    return TensorT<T>(out);
}

template <typename T>
TensorT<T> stack_scalars(const std::vector<TensorT<T>>& xs) {
    if (xs.empty()) throw ContractError("stack_scalars: empty input list");
    auto out = detail::make_node<T>(Shape{static_cast<int>(xs.size())});
    bool grad = false;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i].numel() != 1) throw DimensionError("stack_scalars: element " + std::to_string(i) + " is not scalar");
        out->value[i] = xs[i].data()[0];
        grad = grad || xs[i].requires_grad();
    }
    if (grad) {
        out->requires_grad = true;
        for (const auto& t : xs) out->parents.push_back(t.node());
        out->backprop = [](detail::Node<T>& self) {
            for (std::size_t i = 0; i < self.parents.size(); ++i)
                if (self.parents[i]->requires_grad) self.parents[i]->grad[0] += self.grad[i];
        };
    }
    return TensorT<T>(out);
}

template <typename T>
TensorT<T> stack_rows(const std::vector<TensorT<T>>& rows) {
    if (rows.empty()) throw ContractError("stack_rows: empty input list");
    const int d = static_cast<int>(rows[0].numel());
    auto out = detail::make_node<T>(Shape{static_cast<int>(rows.size()), d});
    bool grad = false;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].numel() != d) throw DimensionError("stack_rows: row " + std::to_string(r) + " length mismatch");
        std::copy(rows[r].data(), rows[r].data() + d,
                  out->value.begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(d)));
        grad = grad || rows[r].requires_grad();
    }
    if (grad) {
        out->requires_grad = true;
        for (const auto& t : rows) out->parents.push_back(t.node());
        out->backprop = [d](detail::Node<T>& self) {
            for (std::size_t r = 0; r < self.parents.size(); ++r) {
                auto& p = *self.parents[r];
                if (!p.requires_grad) continue;
                for (int i = 0; i < d; ++i) p.grad[static_cast<std::size_t>(i)] += self.grad[r * static_cast<std::size_t>(d) + i];
            }
        };
    }
    return TensorT<T>(out);
}

// out[j] = sum_r w[r] * rows[r,j]
template <typename T>
TensorT<T> weighted_row_sum(const TensorT<T>& rows, const TensorT<T>& w) {
    if (rows.rank() != 2 || w.rank() != 1 || w.dim(0) != rows.dim(0))
        throw DimensionError("weighted_row_sum: expected rows[K,D] and w[K]");
    const int k = rows.dim(0), d = rows.dim(1);
    auto out = detail::make_node<T>(Shape{d});
    for (int r = 0; r < k; ++r) {
        const T wv = w.data()[r];
        const T* row = rows.data() + static_cast<std::size_t>(r) * d;
        for (int j = 0; j < d; ++j) out->value[static_cast<std::size_t>(j)] += wv * row[j];
    }
    if (detail::any_grad<T>({&rows, &w})) {
        out->requires_grad = true;
        out->parents = {rows.node(), w.node()};
        out->backprop = [k, d](detail::Node<T>& self) {
            auto& rn = *self.parents[0];
            auto& wn = *self.parents[1];
            for (int r = 0; r < k; ++r) {
                const std::size_t base = static_cast<std::size_t>(r) * d;
                if (rn.requires_grad) {
                    const T wv = wn.value[static_cast<std::size_t>(r)];
                    for (int j = 0; j < d; ++j) rn.grad[base + j] += self.grad[static_cast<std::size_t>(j)] * wv;
                }
                if (wn.requires_grad) {
                    T acc = T(0);
                    for (int j = 0; j < d; ++j) acc += self.grad[static_cast<std::size_t>(j)] * rn.value[base + j];
                    wn.grad[static_cast<std::size_t>(r)] += acc;
                }
            }
        };
    }
    return TensorT<T>(out);
}

// ---------------------------------------------------------------------------
// backward: reverse-mode sweep from a scalar loss. Closures are released as
// they run; one recorded forward supports one backward.
// ---------------------------------------------------------------------------

template <typename T>
GradientMap<T> backward(const TensorT<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward: loss must be a defined scalar tensor");
    auto root = loss.node();

    // Gather every grad-requiring node reachable through parents.
    std::vector<detail::Node<T>*> order;
    std::unordered_set<detail::Node<T>*> seen;
    std::vector<detail::Node<T>*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents)
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const detail::Node<T>* a, const detail::Node<T>* b) { return a->seq > b->seq; });

    for (auto* n : order) n->grad.assign(n->value.size(), T(0));
    root->grad[0] = T(1);

    for (auto* n : order) {
        if (n->backprop) {
            n->backprop(*n);
            n->backprop = nullptr;
        }
    }

    GradientMap<T> map;
    for (auto* n : order)
        if (n->param_id >= 0) map.accumulate(n->param_id, n->shape, n->grad);
    return map;
}

// ---------------------------------------------------------------------------
// Named parameter registry. Models register parameters once and mint fresh
// leaf tensors per forward; gradients key back by id.
// ---------------------------------------------------------------------------

template <typename T>
class ParamStore {
public:
    int add(std::string name, Shape shape, std::vector<T> init) {
        if (shape_numel(shape) != static_cast<std::int64_t>(init.size()))
            throw DimensionError("param " + name + ": init length does not match shape " + shape_str(shape));
        if (index_.count(name)) throw ContractError("param " + name + ": duplicate name");
        const int id = static_cast<int>(names_.size());
        index_.emplace(name, id);
        names_.push_back(std::move(name));
        shapes_.push_back(std::move(shape));
        values_.push_back(std::move(init));
        return id;
    }

    int count() const { return static_cast<int>(names_.size()); }
    const std::string& name(int id) const { return names_[static_cast<std::size_t>(id)]; }
    const Shape& shape(int id) const { return shapes_[static_cast<std::size_t>(id)]; }
    std::vector<T>& values(int id) { return values_[static_cast<std::size_t>(id)]; }
    const std::vector<T>& values(int id) const { return values_[static_cast<std::size_t>(id)]; }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }

    TensorT<T> leaf(int id) const {
        return TensorT<T>::leaf(shapes_[static_cast<std::size_t>(id)], values_[static_cast<std::size_t>(id)], id);
    }

    std::int64_t total_scalars() const {
        std::int64_t n = 0;
        for (const auto& v : values_) n += static_cast<std::int64_t>(v.size());
        return n;
    }

private:
    std::vector<std::string> names_;
    std::vector<Shape> shapes_;
    std::vector<std::vector<T>> values_;
    std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Central-difference gradient check. Intended for T = double; 32-bit central
// differences are too noisy for tight bounds.
// ---------------------------------------------------------------------------

template <typename T>
double finite_diff_check(const std::function<TensorT<T>()>& f, ParamStore<T>& params, double eps,
                         std::uint64_t seed = 1234, int max_probes_per_param = 200) {
    TensorT<T> loss = f();
    GradientMap<T> analytic = backward(loss);

    double worst = 0.0;
    Rng rng(seed);
    for (int id = 0; id < params.count(); ++id) {
        auto& v = params.values(id);
        const std::size_t n = v.size();
        std::vector<std::size_t> probes;
        if (static_cast<int>(n) <= max_probes_per_param) {
            probes.resize(n);
            for (std::size_t i = 0; i < n; ++i) probes[i] = i;
        } else {
            for (int i = 0; i < max_probes_per_param; ++i)
                probes.push_back(static_cast<std::size_t>(rng.below(n)));
        }
        for (std::size_t i : probes) {
            const T saved = v[i];
            v[i] = saved + static_cast<T>(eps);
            const double fp = static_cast<double>(f().item());
            v[i] = saved - static_cast<T>(eps);
            const double fm = static_cast<double>(f().item());
            v[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double exact =
                analytic.contains(id) ? static_cast<double>(analytic.at(id).data()[i]) : 0.0;
            const double denom = std::max({std::fabs(numeric), std::fabs(exact), 1e-8});
            worst = std::max(worst, std::fabs(numeric - exact) / denom);
        }
    }
    return worst;
}

}  // namespace msgnn
