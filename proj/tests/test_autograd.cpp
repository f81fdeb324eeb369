#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "tags/error.hpp"

using namespace tags;
using ad::Tensor;

namespace {

// Weighted sum against fixed random coefficients so every output entry matters.
ad::Var probe(const ad::Var& y, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    return ad::sum(ad::mul(y, ad::constant(oracle::random_tensor(y->value.shape, rng))));
}

void expect_grad(const ad::Var& p, const std::function<ad::Var()>& f, double tol = 1e-6) {
    std::vector<std::size_t> all(p->value.numel());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto g = oracle::check_grad(p, all, f);
    CHECK(g.relative_error() < tol);
}

}  // namespace

TEST_CASE("matmul values and gradients") {
    auto a = ad::leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    auto b = ad::leaf(Tensor({3, 2}, {7, 8, 9, 10, 11, 12}));
    const auto c = ad::matmul(a, b);
    CHECK(c->value.data == std::vector<double>{58, 64, 139, 154});
    expect_grad(a, [&] { return probe(ad::matmul(a, b)); });
    expect_grad(b, [&] { return probe(ad::matmul(a, b)); });

    auto bt = ad::leaf(Tensor({2, 3}, {7, 9, 11, 8, 10, 12}));
    CHECK(ad::matmul_transposed(a, bt)->value.data == c->value.data);
    expect_grad(bt, [&] { return probe(ad::matmul_transposed(a, bt)); });
    CHECK_THROWS_AS(ad::matmul(a, a), InvalidArgument);
}

TEST_CASE("elementwise ops") {
    std::mt19937_64 rng(1);
    auto a = ad::leaf(oracle::random_tensor({4, 3}, rng));
    auto b = ad::leaf(oracle::random_tensor({4, 3}, rng));
    auto bias = ad::leaf(oracle::random_tensor({3}, rng));
    expect_grad(a, [&] { return probe(ad::add(a, b)); });
    expect_grad(b, [&] { return probe(ad::sub(a, b)); });
    expect_grad(a, [&] { return probe(ad::mul(a, b)); });
    expect_grad(a, [&] { return probe(ad::scale(a, -2.5)); });
    expect_grad(bias, [&] { return probe(ad::add_bias(a, bias)); });
    expect_grad(a, [&] { return probe(ad::lerp(a, b, 0.3)); });
    expect_grad(b, [&] { return probe(ad::lerp(a, b, 0.3)); });

    const auto l = ad::lerp(a, b, 0.25);
    for (std::size_t i = 0; i < l->value.numel(); ++i) {
        CHECK(l->value.data[i] == doctest::Approx(0.25 * a->value.data[i] + 0.75 * b->value.data[i]).epsilon(1e-15));
    }
}

TEST_CASE("activations") {
    std::mt19937_64 rng(2);
    auto x = ad::leaf(oracle::random_tensor({5, 4}, rng, 2.0));
    const auto g = ad::gelu(x);
    for (std::size_t i = 0; i < g->value.numel(); ++i) {
        const double v = x->value.data[i];
        CHECK(g->value.data[i] == doctest::Approx(0.5 * v * (1 + std::erf(v / std::sqrt(2.0)))).epsilon(1e-14));
    }
    expect_grad(x, [&] { return probe(ad::gelu(x)); });
    expect_grad(x, [&] { return probe(ad::sigmoid(x)); });
    expect_grad(x, [&] { return probe(ad::softmax_rows(x)); });

    const auto s = ad::softmax_rows(x);
    for (int r = 0; r < 5; ++r) {
        double t = 0;
        for (int c = 0; c < 4; ++c) t += s->value(r, c);
        CHECK(t == doctest::Approx(1.0).epsilon(1e-14));
    }
    // 2-way softmax of (1, 0) is the logistic of 1.
    const auto two = ad::softmax_rows(ad::constant(Tensor({1, 2}, {1.0, 0.0})));
    CHECK(two->value(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
}

TEST_CASE("layer norm") {
    std::mt19937_64 rng(3);
    auto x = ad::leaf(oracle::random_tensor({3, 6}, rng));
    auto gamma = ad::leaf(oracle::random_tensor({6}, rng));
    auto beta = ad::leaf(oracle::random_tensor({6}, rng));
    const auto y = ad::layer_norm(x, gamma, beta);
    for (int r = 0; r < 3; ++r) {
        double mean = 0, var = 0;
        for (int c = 0; c < 6; ++c) mean += x->value(r, c) / 6;
        for (int c = 0; c < 6; ++c) var += (x->value(r, c) - mean) * (x->value(r, c) - mean) / 6;
        for (int c = 0; c < 6; ++c) {
            const double want = (x->value(r, c) - mean) / std::sqrt(var + 1e-6) * gamma->value.data[c] + beta->value.data[c];
            CHECK(y->value(r, c) == doctest::Approx(want).epsilon(1e-12));
        }
    }
    expect_grad(x, [&] { return probe(ad::layer_norm(x, gamma, beta)); });
    expect_grad(gamma, [&] { return probe(ad::layer_norm(x, gamma, beta)); });
    expect_grad(beta, [&] { return probe(ad::layer_norm(x, gamma, beta)); });
}

TEST_CASE("column and row layout ops") {
    std::mt19937_64 rng(4);
    auto a = ad::leaf(oracle::random_tensor({3, 2}, rng));
    auto b = ad::leaf(oracle::random_tensor({3, 4}, rng));
    const auto c = ad::concat_cols({a, b});
    CHECK(c->value.shape == std::vector<int>{3, 6});
    CHECK(c->value(1, 0) == a->value(1, 0));
    CHECK(c->value(2, 5) == b->value(2, 3));
    const auto s = ad::slice_cols(c, 2, 4);
    CHECK(s->value.data == b->value.data);
    expect_grad(a, [&] { return probe(ad::slice_cols(ad::concat_cols({a, b}), 1, 3)); });
    auto r = ad::leaf(oracle::random_tensor({2, 2}, rng));
    const auto rows = ad::concat_rows({a, r});
    CHECK(rows->value.shape == std::vector<int>{5, 2});
    expect_grad(r, [&] { return probe(ad::concat_rows({a, r})); });
    CHECK_THROWS_AS(ad::concat_rows({a, b}), InvalidArgument);
}

TEST_CASE("conv3d matches the direct convolution") {
    std::mt19937_64 rng(5);
    const Dims3 d{3, 4, 5};
    for (int k : {1, 3}) {
        auto x = ad::leaf(oracle::random_tensor({static_cast<int>(d.count()), 2}, rng));
        auto w = ad::leaf(oracle::random_tensor({k * k * k * 2, 3}, rng));
        auto b = ad::leaf(oracle::random_tensor({3}, rng));
        const auto y = ad::conv3d(x, d, w, b, k);
        const auto want = oracle::conv3d(x->value, d, w->value, b->value, k);
        for (std::size_t i = 0; i < want.numel(); ++i) CHECK(y->value.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
        expect_grad(x, [&] { return probe(ad::conv3d(x, d, w, b, k)); });
        expect_grad(w, [&] { return probe(ad::conv3d(x, d, w, b, k)); });
        expect_grad(b, [&] { return probe(ad::conv3d(x, d, w, b, k)); });
    }
}

TEST_CASE("trilinear resize") {
    std::mt19937_64 rng(6);
    const Dims3 from{2, 3, 4}, to{4, 6, 8};
    auto x = ad::leaf(oracle::random_tensor({static_cast<int>(from.count()), 2}, rng));
    const auto y = ad::resize_trilinear(x, from, to);
    for (int c = 0; c < 2; ++c) {
        std::vector<double> chan(from.count());
        for (std::size_t v = 0; v < from.count(); ++v) chan[v] = x->value(static_cast<int>(v), c);
        for (int z = 0; z < to.d; ++z)
            for (int yy = 0; yy < to.h; ++yy)
                for (int xx = 0; xx < to.w; ++xx) {
                    const double want = oracle::trilinear_at(chan, from, to, z, yy, xx);
                    CHECK(y->value(static_cast<int>(to.index(z, yy, xx)), c) == doctest::Approx(want).epsilon(1e-12));
                }
    }
    expect_grad(x, [&] { return probe(ad::resize_trilinear(x, from, to)); });

    // Same extents: identity, bitwise.
    CHECK(ad::resize_trilinear(x, from, from)->value.data == x->value.data);
    // Constant fields stay constant.
    const auto ones = ad::resize_trilinear(ad::constant(Tensor({static_cast<int>(from.count()), 1}, 1.0)), from, to);
    for (double v : ones->value.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("backward accumulates and skips constants") {
    auto a = ad::leaf(Tensor({1}, {3.0}));
    auto c = ad::constant(Tensor({1}, {2.0}));
    ad::backward(ad::mul(a, c));
    ad::backward(ad::mul(a, c));
    CHECK(a->grad.data[0] == doctest::Approx(4.0));
    CHECK(c->grad.data.empty());
    CHECK_THROWS_AS(ad::backward(ad::constant(Tensor({2}, 1.0))), InvalidArgument);
}

TEST_CASE("check_finite reports NaN") {
    auto x = ad::constant(Tensor({2}, {1.0, std::nan("")}));
    CHECK_THROWS_AS(ad::check_finite(x, "probe"), NumericalError);
    CHECK_NOTHROW(ad::check_finite(ad::constant(Tensor({1}, 0.0)), "ok"));
}
