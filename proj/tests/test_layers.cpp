#include "gridloss/layers.hpp"
#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace gridloss;

namespace {

ConvLayer make_layer(int out_c, int in_c, int k, Rng& rng) {
    ConvLayer l;
    l.weights = oracle::random_tensor({out_c, in_c, k, k}, rng);
    l.bias = oracle::random_tensor({out_c}, rng);
    return l;
}

} // namespace

TEST_CASE("conv2d on zero input passes only the bias") {
    Rng rng(7);
    ConvLayer l = make_layer(1, 2, 3, rng);
    l.bias.data[0] = 0.5;
    Tensor x({2, 4, 4});
    Tensor y = conv2d(x, l);
    for (double v : y.data) CHECK(v == 0.5);
}

TEST_CASE("conv2d 1x1 identity kernel reproduces the input") {
    Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    ConvLayer l;
    l.weights = Tensor({1, 1, 1, 1}, {1.0});
    l.bias = Tensor({1});
    Tensor y = conv2d(x, l);
    REQUIRE(y.shape == x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("conv2d matches the direct-summation oracle") {
    Rng rng(11);
    Tensor x = oracle::random_tensor({1, 5, 5}, rng);
    ConvLayer l = make_layer(2, 1, 3, rng);
    Tensor got = conv2d(x, l, 1);
    Tensor want = oracle::conv2d_bruteforce(x, l, 1);
    REQUIRE(got.shape == want.shape);
    for (std::size_t i = 0; i < got.data.size(); ++i) CHECK(std::abs(got.data[i] - want.data[i]) < 1e-12);
}

TEST_CASE("conv2d strided output matches the oracle") {
    Rng rng(12);
    Tensor x = oracle::random_tensor({3, 9, 11}, rng);
    ConvLayer l = make_layer(2, 3, 3, rng);
    Tensor got = conv2d(x, l, 2);
    Tensor want = oracle::conv2d_bruteforce(x, l, 2);
    REQUIRE(got.shape == std::vector<int>{2, 4, 5});
    for (std::size_t i = 0; i < got.data.size(); ++i) CHECK(std::abs(got.data[i] - want.data[i]) < 1e-12);
}

TEST_CASE("conv2d rejects mismatched shapes with the offending dimensions") {
    Rng rng(13);
    ConvLayer l = make_layer(1, 3, 3, rng);
    Tensor x({2, 5, 5});
    CHECK_THROWS_AS(conv2d(x, l), InvalidInput);
    try {
        conv2d(x, l);
    } catch (const InvalidInput& e) {
        CHECK(std::string(e.what()).find("2") != std::string::npos);
        CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
    Tensor small({3, 2, 2});
    CHECK_THROWS_AS(conv2d(small, l), InvalidInput);
}

TEST_CASE("conv2d is linear in the input up to the bias") {
    Rng rng(17);
    Tensor x1 = oracle::random_tensor({2, 6, 7}, rng);
    Tensor x2 = oracle::random_tensor({2, 6, 7}, rng);
    ConvLayer l = make_layer(3, 2, 3, rng);
    const double a = 0.7, b = -1.3;
    Tensor mix({2, 6, 7});
    for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x1.data[i] + b * x2.data[i];
    Tensor lhs = conv2d(mix, l);
    Tensor y1 = conv2d(x1, l), y2 = conv2d(x2, l);
    Tensor bias_map = conv2d(Tensor({2, 6, 7}), l); // bias broadcast over output cells
    for (std::size_t i = 0; i < lhs.data.size(); ++i) {
        const double rhs = a * y1.data[i] + b * y2.data[i] - (a + b - 1.0) * bias_map.data[i];
        CHECK(std::abs(lhs.data[i] - rhs) < 1e-9);
    }
}

TEST_CASE("conv2d_backward zero grad_out gives zero gradients") {
    Rng rng(19);
    Tensor x = oracle::random_tensor({2, 5, 5}, rng);
    ConvLayer l = make_layer(2, 2, 3, rng);
    Tensor gout({2, 3, 3});
    ConvGrads g = conv2d_backward(x, l, gout);
    for (double v : g.input.data) CHECK(v == 0.0);
    for (double v : g.weights.data) CHECK(v == 0.0);
    for (double v : g.bias.data) CHECK(v == 0.0);
}

TEST_CASE("conv2d_backward 1x1 identity passes grad_out through") {
    Rng rng(23);
    Tensor x = oracle::random_tensor({1, 4, 4}, rng);
    ConvLayer l;
    l.weights = Tensor({1, 1, 1, 1}, {1.0});
    l.bias = Tensor({1});
    Tensor gout = oracle::random_tensor({1, 4, 4}, rng);
    ConvGrads g = conv2d_backward(x, l, gout);
    for (std::size_t i = 0; i < gout.data.size(); ++i) CHECK(g.input.data[i] == gout.data[i]);
}

TEST_CASE("conv2d_backward matches finite differences of sum(out^2)/2") {
    Rng rng(29);
    Tensor x = oracle::random_tensor({2, 5, 6}, rng);
    ConvLayer l = make_layer(2, 2, 3, rng);
    const int stride = 1;

    auto loss = [&]() {
        Tensor y = conv2d(x, l, stride);
        double s = 0.0;
        for (double v : y.data) s += 0.5 * v * v;
        return s;
    };
    Tensor y = conv2d(x, l, stride);
    ConvGrads g = conv2d_backward(x, l, y, stride); // grad_out = y for this loss

    for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(oracle::grad_close(g.input.data[i], oracle::central_diff(x.data[i], loss), 1e-4));
    for (std::size_t i = 0; i < l.weights.data.size(); ++i)
        CHECK(oracle::grad_close(g.weights.data[i], oracle::central_diff(l.weights.data[i], loss), 1e-4));
    for (std::size_t i = 0; i < l.bias.data.size(); ++i)
        CHECK(oracle::grad_close(g.bias.data[i], oracle::central_diff(l.bias.data[i], loss), 1e-4));
}

TEST_CASE("relu clamps negatives and keeps positives") {
    Tensor x({1, 1, 3}, {-1, 0, 2});
    Tensor y = relu(x);
    CHECK(y.data == std::vector<double>{0, 0, 2});

    Rng rng(31);
    Tensor pos = oracle::random_tensor({2, 3, 3}, rng, 0.1, 2.0);
    Tensor same = relu(pos);
    CHECK(same.data == pos.data);
}

TEST_CASE("relu gradient rule uses 1[x > 0]") {
    Tensor x({1, 1, 2}, {-1, 3});
    Tensor gout({1, 1, 2}, {5, 7});
    Tensor g = relu_backward(x, gout);
    CHECK(g.data == std::vector<double>{0, 7});
}

TEST_CASE("lcn maps constant input to zeros") {
    Tensor x({3, 6, 6});
    for (double& v : x.data) v = 4.2;
    Tensor y = lcn(x);
    for (double v : y.data) CHECK(std::abs(v) < 1e-10);

    // dyadic constant: window means are exact, so the output is exactly zero
    for (double& v : x.data) v = 0.5;
    Tensor z = lcn(x);
    for (double v : z.data) CHECK(v == 0.0);
}

TEST_CASE("lcn is scale invariant above the divisor floor") {
    Rng rng(37);
    Tensor x = oracle::random_tensor({2, 7, 7}, rng, 0.0, 5.0);
    Tensor x10 = x;
    for (double& v : x10.data) v *= 10.0;
    Tensor y = lcn(x), y10 = lcn(x10);
    for (std::size_t i = 0; i < y.data.size(); ++i) CHECK(std::abs(y.data[i] - y10.data[i]) < 1e-6);
}

TEST_CASE("lcn matches per-window statistics computed directly") {
    Rng rng(41);
    Tensor x = oracle::random_tensor({3, 8, 9}, rng, 0.0, 2.0);
    Tensor y = lcn(x);
    const int C = 3, H = 8, W = 9;
    for (auto [i, j] : {std::pair{0, 0}, std::pair{3, 4}, std::pair{7, 8}, std::pair{1, 5}}) {
        const int i0 = std::max(0, i - 2), i1 = std::min(H - 1, i + 2);
        const int j0 = std::max(0, j - 2), j1 = std::min(W - 1, j + 2);
        double sum = 0.0, sq = 0.0;
        int m = 0;
        for (int c = 0; c < C; ++c)
            for (int p = i0; p <= i1; ++p)
                for (int q = j0; q <= j1; ++q) {
                    sum += x.at(c, p, q);
                    sq += x.at(c, p, q) * x.at(c, p, q);
                    ++m;
                }
        const double mean = sum / m;
        const double sd = std::sqrt(std::max(0.0, sq / m - mean * mean));
        const double div = std::max(sd, 0.01);
        for (int c = 0; c < C; ++c)
            CHECK(std::abs(y.at(c, i, j) - (x.at(c, i, j) - mean) / div) < 1e-12);
    }
}

TEST_CASE("lcn_backward matches finite differences") {
    Rng rng(43);
    Tensor x = oracle::random_tensor({2, 6, 6}, rng, 0.0, 3.0);
    Tensor gout = oracle::random_tensor({2, 6, 6}, rng);
    auto loss = [&]() {
        Tensor y = lcn(x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * gout.data[i];
        return s;
    };
    Tensor g = lcn_backward(x, gout);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(oracle::grad_close(g.data[i], oracle::central_diff(x.data[i], loss), 1e-4, 1e-6));
}

TEST_CASE("dropout rate 0 and inference mode are identities") {
    Rng rng(47);
    Tensor x = oracle::random_tensor({2, 4, 4}, rng);
    auto [y0, st0] = dropout(x, 0.0, 99, true);
    CHECK(y0.data == x.data);
    for (double v : st0.mask.data) CHECK(v == 1.0);

    auto [y1, st1] = dropout(x, 0.1, 99, false);
    CHECK(y1.data == x.data);
    CHECK_FALSE(st1.training);
}

TEST_CASE("dropout zeroes the configured fraction and is seed reproducible") {
    Tensor x({1, 250, 400});
    for (double& v : x.data) v = 1.0;
    auto [y, st] = dropout(x, 0.1, 1234, true);
    int zeros = 0;
    for (double v : y.data) {
        if (v == 0.0)
            ++zeros;
        else
            CHECK(std::abs(v - 1.0 / 0.9) < 1e-12);
    }
    const double frac = static_cast<double>(zeros) / static_cast<double>(x.numel());
    CHECK(frac > 0.09);
    CHECK(frac < 0.11);

    auto [y2, st2] = dropout(x, 0.1, 1234, true);
    CHECK(st.mask.data == st2.mask.data);

    CHECK_THROWS_AS(dropout(x, 1.0, 0, true), InvalidInput);
    CHECK_THROWS_AS(dropout(x, -0.1, 0, true), InvalidInput);
}

TEST_CASE("dropout_backward applies the stored mask") {
    Rng rng(53);
    Tensor x = oracle::random_tensor({1, 8, 8}, rng);
    auto [y, st] = dropout(x, 0.3, 5, true);
    Tensor gout = oracle::random_tensor({1, 8, 8}, rng);
    Tensor g = dropout_backward(st, gout);
    for (std::size_t i = 0; i < g.data.size(); ++i) CHECK(g.data[i] == gout.data[i] * st.mask.data[i]);
}
