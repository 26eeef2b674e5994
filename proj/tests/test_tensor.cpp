#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "msgnn/tensor.hpp"
#include "oracles.hpp"

using namespace msgnn;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return v;
}

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 full overlap sums to 9") {
    auto x = Tensor::constant({1, 3, 3}, 1.0f);
    auto w = Tensor::constant({1, 1, 3, 3}, 1.0f);
    auto b = Tensor::zeros({1});
    auto y = conv2d(x, w, b, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1});
    CHECK(y.data()[0] == doctest::Approx(9.0f));
}

TEST_CASE("conv2d: identity 1x1 kernel is bit-exact identity") {
    Rng rng(7);
    auto x = Tensor::from_vector({3, 5, 4}, random_vec<float>(60, rng));
    auto w = Tensor::zeros({3, 3, 1, 1});
    auto wn = w.node();
    for (int c = 0; c < 3; ++c) wn->value[static_cast<std::size_t>(c) * 3 + c] = 1.0f;
    auto y = conv2d(x, w, Tensor::zeros({3}), 1, 0);
    REQUIRE(y.shape() == x.shape());
    CHECK(std::memcmp(y.data(), x.data(), sizeof(float) * 60) == 0);
}

TEST_CASE("conv2d: matches nested-loop reference on random input") {
    Rng rng(11);
    const int cin = 4, h = 6, w = 6, cout = 2, kh = 3, kw = 3;
    auto xv = random_vec<float>(static_cast<std::size_t>(cin) * h * w, rng);
    auto wv = random_vec<float>(static_cast<std::size_t>(cout) * cin * kh * kw, rng);
    auto bv = random_vec<float>(cout, rng);

    for (auto [stride, pad] : {std::pair{1, 0}, std::pair{1, 1}, std::pair{1, 2}, std::pair{3, 0}}) {
        auto y = conv2d(Tensor::from_vector({cin, h, w}, xv), Tensor::from_vector({cout, cin, kh, kw}, wv),
                        Tensor::from_vector({cout}, bv), stride, pad);
        std::vector<double> xd(xv.begin(), xv.end()), wd(wv.begin(), wv.end()), bd(bv.begin(), bv.end());
        int oh = 0, ow = 0;
        auto ref = oracle::conv2d_ref(xd, cin, h, w, wd, cout, kh, kw, bd, stride, pad, oh, ow);
        REQUIRE(y.shape() == Shape{cout, oh, ow});
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(static_cast<double>(y.data()[i]) == doctest::Approx(ref[i]).epsilon(1e-6));
    }
}

TEST_CASE("conv2d: dimension errors name the offending axes") {
    auto x = Tensor::zeros({3, 8, 8});
    auto w = Tensor::zeros({4, 2, 3, 3});
    CHECK_THROWS_WITH_AS(conv2d(x, w, Tensor::zeros({4}), 1, 1), doctest::Contains("in-channel"), DimensionError);
    auto w2 = Tensor::zeros({4, 3, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w2, Tensor::zeros({5}), 1, 1), DimensionError);
    // (8 + 0 - 3) % 2 != 0: inexact output extent must be rejected
    CHECK_THROWS_AS(conv2d(x, w2, Tensor::zeros({4}), 2, 0), DimensionError);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({4, 3, 9, 9}), Tensor::zeros({4}), 1, 0), DimensionError);
}

TEST_CASE("leaky_relu: definition, identity region, derivative") {
    auto x = Tensor::from_vector({3}, {-1.0f, 0.0f, 2.0f}, true);
    auto y = leaky_relu(x, 0.2);
    CHECK(y.data()[0] == doctest::Approx(-0.2f));
    CHECK(y.data()[1] == doctest::Approx(0.0f));
    CHECK(y.data()[2] == doctest::Approx(2.0f));

    auto pos = Tensor::from_vector({4}, {0.5f, 1.0f, 2.0f, 0.0f});
    auto ypos = leaky_relu(pos, 0.2);
    for (int i = 0; i < 4; ++i) CHECK(ypos.data()[i] == pos.data()[i]);

    auto wx = Tensor::leaf({2}, {-3.0f, 3.0f}, 0);
    auto g = backward(sum(leaky_relu(wx, 0.2)));
    CHECK(g.at(0).data()[0] == doctest::Approx(0.2f));
    CHECK(g.at(0).data()[1] == doctest::Approx(1.0f));
}

TEST_CASE("elementwise suite basics") {
    CHECK(exp(Tensor::zeros({1})).item() == doctest::Approx(1.0f));
    CHECK(sigmoid(Tensor::zeros({1})).item() == doctest::Approx(0.5f));
    CHECK(sum(Tensor::constant({2, 2}, 1.0f)).item() == doctest::Approx(4.0f));
    CHECK(mean(Tensor::from_vector({2}, {1.0f, 3.0f})).item() == doctest::Approx(2.0f));

    auto a = Tensor::constant({2, 2}, 3.0f);
    auto s = Tensor::constant({1}, 2.0f);
    auto prod = mul(a, s);  // scalar broadcast
    for (int i = 0; i < 4; ++i) CHECK(prod.data()[i] == doctest::Approx(6.0f));

    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("concat_channels and complementary slice are inverse") {
    Rng rng(3);
    auto a = Tensor::from_vector({1, 2, 2}, random_vec<float>(4, rng));
    auto b = Tensor::from_vector({2, 2, 2}, random_vec<float>(8, rng));
    auto cat = concat_channels<float>({a, b});
    REQUIRE(cat.shape() == Shape{3, 2, 2});
    auto back_a = slice_channels(cat, 0, 1);
    auto back_b = slice_channels(cat, 1, 2);
    CHECK(std::memcmp(back_a.data(), a.data(), sizeof(float) * 4) == 0);
    CHECK(std::memcmp(back_b.data(), b.data(), sizeof(float) * 8) == 0);

    auto zeros = Tensor::zeros({1, 2, 2});
    auto ones = Tensor::constant({1, 2, 2}, 1.0f);
    auto zo = concat_channels<float>({zeros, ones});
    for (int i = 0; i < 4; ++i) {
        CHECK(zo.data()[i] == 0.0f);
        CHECK(zo.data()[4 + i] == 1.0f);
    }

    CHECK_THROWS_AS(concat_channels<float>({a, Tensor::zeros({1, 3, 2})}), DimensionError);
}

TEST_CASE("bilinear_resize: constancy, checkerboard average, oracle match") {
    auto c = bilinear_resize(Tensor::constant({3, 8, 8}, 0.7f), 5, 13);
    for (std::int64_t i = 0; i < c.numel(); ++i) CHECK(c.data()[i] == doctest::Approx(0.7f).epsilon(1e-6));

    auto board = Tensor::from_vector({1, 2, 2}, {0.0f, 1.0f, 1.0f, 0.0f});
    auto down = bilinear_resize(board, 1, 1);
    CHECK(down.item() == doctest::Approx(0.5f));

    Rng rng(21);
    auto xv = random_vec<float>(3 * 16 * 16, rng, 0.0, 1.0);
    auto y = bilinear_resize(Tensor::from_vector({3, 16, 16}, xv), 7, 9);
    std::vector<double> xd(xv.begin(), xv.end());
    auto ref = oracle::bilinear_ref(xd, 3, 16, 16, 7, 9);
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(static_cast<double>(y.data()[i]) == doctest::Approx(ref[i]).epsilon(1e-5));
}

TEST_CASE("backward: linear loss gives the data as gradient") {
    auto w = Tensor::leaf({3}, {0.5f, -1.0f, 2.0f}, 0);
    auto x = Tensor::from_vector({3}, {1.0f, 2.0f, 3.0f});
    auto g = backward(sum(mul(w, x)));
    REQUIRE(g.contains(0));
    for (int i = 0; i < 3; ++i) CHECK(g.at(0).data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("backward: unused parameter is absent from the gradient map") {
    auto w = Tensor::leaf({2}, {1.0f, 1.0f}, 0);
    auto unused = Tensor::leaf({2}, {5.0f, 5.0f}, 1);
    (void)unused;
    auto g = backward(sum(w));
    CHECK(g.contains(0));
    CHECK_FALSE(g.contains(1));
}

TEST_CASE("backward: rejects non-scalar loss") {
    auto w = Tensor::leaf({2}, {1.0f, 2.0f}, 0);
    CHECK_THROWS_AS(backward(mul(w, w)), ContractError);
}

TEST_CASE("backward: parameter reused at multiple sites accumulates") {
    auto w = Tensor::leaf({1}, {3.0f}, 0);
    // loss = w*w + 2*w -> dloss/dw = 2w + 2 = 8
    auto loss = add(mul(w, w), scalar_mul(w, 2.0));
    auto g = backward(sum(loss));
    CHECK(g.at(0).data()[0] == doctest::Approx(8.0f));
}

TEST_CASE("finite_diff_check: quadratic and constant functions") {
    ParamStore<double> store;
    const int x = store.add("x", {2}, {1.0, 2.0});
    auto f = [&]() {
        auto xv = store.leaf(x);
        return sum(mul(xv, xv));
    };
    const double err = finite_diff_check<double>(f, store, 1e-5);
    CHECK(err < 1e-6);
    // analytic gradient is [2,4]
    auto g = backward(f());
    CHECK(g.at(x).data()[0] == doctest::Approx(2.0));
    CHECK(g.at(x).data()[1] == doctest::Approx(4.0));

    ParamStore<double> store2;
    const int p = store2.add("p", {3}, {1.0, -1.0, 0.5});
    auto fconst = [&]() {
        (void)store2.leaf(p);
        return TensorT<double>::constant({1}, 7.0);
    };
    CHECK(finite_diff_check<double>(fconst, store2, 1e-5) == doctest::Approx(0.0));
}

TEST_CASE("gradient of conv -> leaky_relu -> mean matches finite differences") {
    Rng rng(77);
    ParamStore<double> store;
    const int wid = store.add("w", {2, 3, 3, 3}, random_vec<double>(54, rng, -0.5, 0.5));
    const int bid = store.add("b", {2}, random_vec<double>(2, rng, -0.1, 0.1));
    auto xv = random_vec<double>(3 * 6 * 6, rng);
    auto f = [&]() {
        auto x = TensorT<double>::from_vector({3, 6, 6}, xv);
        return mean(leaky_relu(conv2d(x, store.leaf(wid), store.leaf(bid), 1, 1), 0.2));
    };
    CHECK(finite_diff_check<double>(f, store, 1e-3) < 1e-3);
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        ParamStore<double> store;
        const int wid = store.add("w", {4}, random_vec<double>(4, rng));
        auto xv = random_vec<double>(4, rng);
        const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
        auto x = TensorT<double>::from_vector({4}, xv);

        auto w1 = store.leaf(wid);
        auto f = sum(mul(w1, x));
        auto g = sum(mul(mul(w1, w1), x));
        auto combined = backward(add(scalar_mul(f, a), scalar_mul(g, b)));

        auto w2 = store.leaf(wid);
        auto gf = backward(sum(mul(w2, x)));
        auto w3 = store.leaf(wid);
        auto gg = backward(sum(mul(mul(w3, w3), x)));

        for (int i = 0; i < 4; ++i) {
            const double expect = a * gf.at(wid).data()[i] + b * gg.at(wid).data()[i];
            CHECK(combined.at(wid).data()[i] == doctest::Approx(expect).epsilon(1e-6));
        }
    }
}

TEST_CASE("ops preserve finiteness and determinism across repeat runs") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        auto x = Tensor::from_vector({2, 8, 8}, random_vec<float>(128, rng));
        auto w = Tensor::from_vector({2, 2, 3, 3}, random_vec<float>(36, rng));
        auto b = Tensor::from_vector({2}, random_vec<float>(2, rng));
        auto y = sigmoid(conv2d(x, w, b, 1, 1));
        return std::vector<float>(y.values().begin(), y.values().end());
    };
    auto r1 = run(99), r2 = run(99);
    CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(float)) == 0);
    for (float v : r1) CHECK(std::isfinite(v));
}

TEST_CASE("reshape, gather_rows, stack and weighted_row_sum gradients") {
    ParamStore<double> store;
    Rng rng(13);
    const int pid = store.add("rows", {4, 6}, random_vec<double>(24, rng));
    const int wid = store.add("w", {3}, {0.2, 0.5, 0.3});
    auto f = [&]() {
        auto rows = store.leaf(pid);
        auto picked = gather_rows(rows, {2, 0, 2});
        auto out = weighted_row_sum(picked, store.leaf(wid));
        return mean(mul(out, out));
    };
    CHECK(finite_diff_check<double>(f, store, 1e-4) < 1e-3);

    ParamStore<double> s2;
    const int a = s2.add("a", {1}, {0.3});
    const int b = s2.add("b", {1}, {-0.8});
    auto f2 = [&]() {
        auto v = stack_scalars<double>({s2.leaf(a), s2.leaf(b), s2.leaf(a)});
        auto e = exp(v);
        return sum(div(e, sum(e)));
    };
    CHECK(finite_diff_check<double>(f2, s2, 1e-5) < 1e-3);
}

TEST_CASE("reflect_pad2d and crop2d round trip and gradients") {
    Rng rng(17);
    auto xv = random_vec<double>(2 * 5 * 4, rng);
    auto x = TensorT<double>::from_vector({2, 5, 4}, xv);
    auto padded = reflect_pad2d(x, 0, 2, 0, 1);
    REQUIRE(padded.shape() == Shape{2, 7, 5});
    auto back = crop2d(padded, 0, 0, 5, 4);
    for (std::size_t i = 0; i < xv.size(); ++i) CHECK(back.data()[i] == xv[i]);

    ParamStore<double> store;
    const int pid = store.add("x", {2, 5, 4}, xv);
    auto f = [&]() { return mean(mul(reflect_pad2d(store.leaf(pid), 1, 2, 1, 1), TensorT<double>::constant({2, 8, 6}, 0.5))); };
    CHECK(finite_diff_check<double>(f, store, 1e-5) < 1e-3);
}

TEST_CASE("global_avg_pool, linear, scale_channels gradients") {
    Rng rng(19);
    ParamStore<double> store;
    const int xid = store.add("x", {3, 4, 4}, random_vec<double>(48, rng));
    const int w1 = store.add("fc1.w", {2, 3}, random_vec<double>(6, rng));
    const int b1 = store.add("fc1.b", {2}, random_vec<double>(2, rng));
    const int w2 = store.add("fc2.w", {3, 2}, random_vec<double>(6, rng));
    const int b2 = store.add("fc2.b", {3}, random_vec<double>(3, rng));
    auto f = [&]() {
        auto x = store.leaf(xid);
        auto gate = sigmoid(linear(leaky_relu(linear(global_avg_pool(x), store.leaf(w1), store.leaf(b1)), 0.2),
                                   store.leaf(w2), store.leaf(b2)));
        return mean(scale_channels(x, gate));
    };
    CHECK(finite_diff_check<double>(f, store, 1e-5) < 1e-3);
}
