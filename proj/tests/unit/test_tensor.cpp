#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mrf/tensor/grad_check.hpp"
#include "mrf/tensor/ops.hpp"
#include "mrf/tensor/serialize.hpp"
#include "test_util.hpp"

using mrf::Shape;
using mrf::Tensor;
using mrf::testing::max_abs_diff;
using mrf::testing::random_tensor;
namespace ops = mrf::ops;
using T = Tensor<double>;

TEST(Tensor, ShapeMustMatchData) {
    EXPECT_THROW(T({2, 3}, std::vector<double>(5)), mrf::DataError);
    EXPECT_THROW(T({0, 3}, {}), mrf::DataError);
    T t({2, 3}, std::vector<double>(6, 1.0));
    EXPECT_EQ(t.numel(), 6u);
}

TEST(Tensor, GradientsAccumulateOverPaths) {
    T x = T::scalar(3.0).set_requires_grad(true);
    // y = x*x + x  ->  dy/dx = 2x + 1
    auto y = ops::add(ops::mul(x, x), x);
    y.backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Tensor, NoGradGuardSkipsGraph) {
    T x = T::scalar(2.0).set_requires_grad(true);
    mrf::NoGradGuard guard;
    auto y = ops::square(x);
    EXPECT_FALSE(y.requires_grad());
}

TEST(Gelu, Values) {
    auto y = ops::gelu(T({3}, {0.0, 10.0, 1.0}));
    EXPECT_EQ(y[0], 0.0);
    EXPECT_NEAR(y[1], 10.0, 1e-9);
    const long double phi = 0.5L * (1.0L + std::erf(1.0L / std::sqrt(2.0L)));
    EXPECT_NEAR(y[2], static_cast<double>(phi), 1e-15);
}

TEST(GroupNorm, ConstantInputGivesZero) {
    auto y = ops::group_norm(T::full({1, 4, 3, 3}, 2.5), 2, T::ones({4}), T::zeros({4}));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(GroupNorm, TwoChannelSymmetric) {
    std::vector<double> v(2 * 2 * 2);
    for (int i = 0; i < 4; ++i) {
        v[i] = 1.0;
        v[4 + i] = 3.0;
    }
    auto y = ops::group_norm(T({1, 2, 2, 2}, v), 1, T::ones({2}), T::zeros({2}));
    const double expect = 1.0 / std::sqrt(1.0 + mrf::ops::kNormEpsilon);
    for (int i = 0; i < 4; ++i) {
        EXPECT_NEAR(y[i], -expect, 1e-15);
        EXPECT_NEAR(y[4 + i], expect, 1e-15);
    }
}

TEST(GroupNorm, RandomMoments) {
    std::mt19937_64 rng(1);
    auto x = random_tensor({2, 8, 4, 4}, rng, -10.0, 10.0);
    auto y = ops::group_norm(x, 2, T::ones({8}), T::zeros({8}));
    auto moments = [](const T& t, std::size_t base, std::size_t n) {
        double mu = 0.0, var = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += t[base + i];
        mu /= n;
        for (std::size_t i = 0; i < n; ++i) var += (t[base + i] - mu) * (t[base + i] - mu);
        return std::pair{mu, var / n};
    };
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t g = 0; g < 2; ++g) {
            const std::size_t base = (b * 8 + g * 4) * 16, n = 4 * 16;
            const auto [mu, var] = moments(y, base, n);
            const double raw_var = moments(x, base, n).second;
            EXPECT_LT(std::abs(mu), 1e-10);
            EXPECT_LT(std::abs(var - 1.0), 1e-6);
            // The epsilon shrinks the variance by exactly v / (v + eps).
            EXPECT_NEAR(var, raw_var / (raw_var + mrf::ops::kNormEpsilon), 1e-12);
        }
    }
}

TEST(GroupNorm, RejectsIndivisibleGroups) {
    EXPECT_THROW(ops::group_norm(T::ones({1, 6, 2, 2}), 4, T::ones({6}), T::zeros({6})), mrf::ConfigError);
}

TEST(DepthwiseConv, IdentityKernel) {
    std::mt19937_64 rng(2);
    auto x = random_tensor({2, 3, 5, 4}, rng);
    auto k = T::zeros({3, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) k.mutable_data()[c * 9 + 4] = 1.0;
    auto y = ops::depthwise_conv2d(x, k);
    EXPECT_EQ(max_abs_diff(y.data(), x.data()), 0.0);
}

TEST(DepthwiseConv, ImpulseResponse) {
    auto x = T::zeros({1, 1, 7, 7});
    x.mutable_data()[3 * 7 + 3] = 1.0;
    auto y = ops::depthwise_conv2d(x, T::ones({1, 3, 3}));
    for (std::size_t r = 0; r < 7; ++r) {
        for (std::size_t c = 0; c < 7; ++c) {
            const bool inside = r >= 2 && r <= 4 && c >= 2 && c <= 4;
            EXPECT_EQ(y[r * 7 + c], inside ? 1.0 : 0.0);
        }
    }
}

TEST(DepthwiseConv, RejectsEvenKernel) {
    EXPECT_THROW(ops::depthwise_conv2d(T::ones({1, 2, 4, 4}), T::ones({2, 2, 2})), mrf::ConfigError);
}

namespace {

// Cross-correlation with zero padding, written as nested loops.
std::vector<double> naive_conv(const T& x, const T& w, const T& b, bool depthwise) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t co = depthwise ? C : w.dim(0), k = w.dim(w.rank() - 1);
    const long half = static_cast<long>(k / 2);
    std::vector<double> out(B * co * H * W, 0.0);
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t r = 0; r < H; ++r)
                for (std::size_t c = 0; c < W; ++c) {
                    double acc = b.defined() ? b[o] : 0.0;
                    const std::size_t i0 = depthwise ? o : 0, i1 = depthwise ? o + 1 : C;
                    for (std::size_t i = i0; i < i1; ++i)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v) {
                                const long rr = static_cast<long>(r) + static_cast<long>(u) - half;
                                const long cc = static_cast<long>(c) + static_cast<long>(v) - half;
                                if (rr < 0 || cc < 0 || rr >= static_cast<long>(H) || cc >= static_cast<long>(W)) continue;
                                const double wv = depthwise ? w[(o * k + u) * k + v] : w[((o * C + i) * k + u) * k + v];
                                acc += wv * x[((n * C + i) * H + rr) * W + cc];
                            }
                    out[((n * co + o) * H + r) * W + c] = acc;
                }
    return out;
}

}  // namespace

TEST(DepthwiseConv, MatchesLoopOracle) {
    std::mt19937_64 rng(3);
    for (std::size_t k : {1u, 3u, 5u, 7u}) {
        auto x = random_tensor({2, 3, 6, 5}, rng);
        auto w = random_tensor({3, k, k}, rng);
        auto b = random_tensor({3}, rng);
        EXPECT_LT(max_abs_diff(ops::depthwise_conv2d(x, w, b).data(), naive_conv(x, w, b, true)), 1e-12);
    }
}

TEST(Conv2d, MatchesLoopOracle) {
    std::mt19937_64 rng(4);
    for (std::size_t k : {1u, 3u}) {
        auto x = random_tensor({2, 3, 5, 6}, rng);
        auto w = random_tensor({4, 3, k, k}, rng);
        auto b = random_tensor({4}, rng);
        EXPECT_LT(max_abs_diff(ops::conv2d(x, w, b).data(), naive_conv(x, w, b, false)), 1e-12);
        EXPECT_LT(max_abs_diff(ops::conv2d(x, w).data(), naive_conv(x, w, T{}, false)), 1e-12);
    }
}

TEST(Linear, IdentityAndZero) {
    std::mt19937_64 rng(5);
    auto x = random_tensor({3, 4}, rng);
    auto eye = T::zeros({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye.mutable_data()[i * 5] = 1.0;
    EXPECT_EQ(max_abs_diff(ops::linear(x, eye, T::zeros({4})).data(), x.data()), 0.0);
    auto b = random_tensor({2}, rng);
    auto y = ops::linear(x, T::zeros({2, 4}), b);
    for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_EQ(y[r * 2], b[0]);
        EXPECT_EQ(y[r * 2 + 1], b[1]);
    }
    EXPECT_THROW(ops::linear(x, T::zeros({2, 3})), mrf::DataError);
}

TEST(Linear, MatchesHandMultiply) {
    T x({2, 3}, {0.5, -1.0, 2.0, 1.5, 0.25, -0.75});
    T w({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.5, 4.0});
    T b({2}, {0.1, -0.2});
    auto y = ops::linear(x, w, b);
    const double expect[4] = {0.5 - 2.0 + 6.0 + 0.1, -0.5 - 0.5 + 8.0 - 0.2, 1.5 + 0.5 - 2.25 + 0.1,
                              -1.5 + 0.125 - 3.0 - 0.2};
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(y[i], expect[i], 1e-14);
}

TEST(GradCheck, Basics) {
    auto sq = [](const T& x) { return ops::sum(ops::square(x)); };
    EXPECT_LT(mrf::grad_check<double>(sq, T::scalar(3.0), 1e-5), 1e-8);

    T x = T::scalar(3.0).set_requires_grad(true);
    ops::sum(ops::square(x)).backward();
    EXPECT_NEAR(x.grad()[0], 6.0, 1e-12);

    T c = T::scalar(1.0).set_requires_grad(true);
    auto f = ops::sum(ops::affine(c, 0.0, 4.0));
    f.backward();
    EXPECT_EQ(c.grad()[0], 0.0);
}

TEST(GradCheck, GeluLinear) {
    std::mt19937_64 rng(6);
    auto w = random_tensor({4, 4}, rng);
    auto f = [&](const T& x) { return ops::sum(ops::gelu(ops::linear(x, w))); };
    EXPECT_LT(mrf::grad_check<double>(f, random_tensor({4, 4}, rng), 1e-5), 1e-6);
}

TEST(GradCheck, NonFiniteIsFailure) {
    auto f = [](const T& x) { return ops::sum(ops::affine(x, std::numeric_limits<double>::infinity(), 0.0)); };
    EXPECT_TRUE(std::isinf(mrf::grad_check<double>(f, T::scalar(1.0), 1e-5)));
}

// Every primitive at 10 random points.
TEST(GradCheck, AllPrimitives) {
    std::mt19937_64 rng(7);
    const double eps = 1e-5;
    for (int trial = 0; trial < 10; ++trial) {
        auto a = random_tensor({2, 4, 3, 3}, rng);
        auto b = random_tensor({2, 4, 3, 3}, rng);
        auto wt = random_tensor({1, 4, 3, 3}, rng);  // weights for a non-trivial scalar readout
        auto readout = [&](const T& y) {
            if (y.shape() == wt.shape()) return ops::sum(ops::mul(y, wt));
            return ops::sum(ops::mul(y, ops::affine(y, 0.5, 0.3)));
        };
        auto s = random_tensor({1}, rng);
        auto scale = random_tensor({4}, rng, 0.5, 1.5), shift = random_tensor({4}, rng);
        auto w3 = random_tensor({3, 4, 3, 3}, rng), w1 = random_tensor({3, 4, 1, 1}, rng), cb = random_tensor({3}, rng);
        auto dw = random_tensor({4, 3, 3}, rng), db = random_tensor({4}, rng);
        auto lw = random_tensor({5, 3}, rng), lb = random_tensor({5}, rng);
        auto gate = random_tensor({2, 4, 1, 1}, rng);
        std::vector<double> mask(a.numel());
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i % 3 == 0) ? 0.0 : 1.0;

        std::vector<std::pair<const char*, double>> errs;
        auto check = [&](const char* name, std::function<T()> f, std::vector<T> leaves) {
            errs.emplace_back(name, mrf::grad_check_leaves<double>(f, leaves, eps));
        };
        check("add", [&] { return readout(ops::add(a, b)); }, {a, b});
        check("sub", [&] { return readout(ops::sub(a, b)); }, {a, b});
        check("mul", [&] { return readout(ops::mul(a, b)); }, {a, b});
        check("scale", [&] { return readout(ops::scale(a, s)); }, {a, s});
        check("sigmoid", [&] { return readout(ops::sigmoid(a)); }, {a});
        check("softplus", [&] { return readout(ops::softplus(a)); }, {a});
        check("gelu", [&] { return readout(ops::gelu(a)); }, {a});
        check("mean", [&] { return ops::mean(ops::square(a)); }, {a});
        check("weighted_mean", [&] { return ops::weighted_mean<double>(ops::square(a), mask); }, {a});
        check("mean_hw", [&] { return readout(ops::mean_hw(a)); }, {a});
        check("mul_channels", [&] { return readout(ops::mul_channels(a, gate)); }, {a, gate});
        check("reshape", [&] { return readout(ops::reshape(a, {4, 2, 9})); }, {a});
        check("permute", [&] { return readout(ops::permute(a, {0, 2, 3, 1})); }, {a});
        check("concat", [&] { return readout(ops::concat_channels<double>({a, b})); }, {a, b});
        check("select_channel", [&] { return readout(ops::select_channel(a, 2)); }, {a});
        check("group_norm", [&] { return readout(ops::group_norm(a, 2, scale, shift)); }, {a, scale, shift});
        check("layer_norm", [&] { return readout(ops::layer_norm(a, 1, scale, shift)); }, {a, scale, shift});
        check("conv3x3", [&] { return readout(ops::conv2d(a, w3, cb)); }, {a, w3, cb});
        check("conv1x1", [&] { return readout(ops::conv2d(a, w1, cb)); }, {a, w1, cb});
        check("depthwise", [&] { return readout(ops::depthwise_conv2d(a, dw, db)); }, {a, dw, db});
        auto tokens = random_tensor({6, 3}, rng);
        check("linear", [&] { return readout(ops::linear(tokens, lw, lb)); }, {tokens, lw, lb});
        for (const auto& [name, err] : errs) EXPECT_LT(err, 1e-6) << name << " trial " << trial;
    }
}

TEST(Autodiff, FusedMatchesStaged) {
    std::mt19937_64 rng(8);
    auto x = random_tensor({1, 2, 4, 4}, rng);
    auto w = random_tensor({2, 2, 3, 3}, rng);
    // Fused: one graph through conv -> gelu -> sum.
    T xf = x.detach().set_requires_grad(true);
    ops::sum(ops::gelu(ops::conv2d(xf, w))).backward();
    // Staged: run each backward separately, feeding upstream gradients by hand.
    T xs = x.detach().set_requires_grad(true);
    auto c = ops::conv2d(xs, w);
    T c_leaf = c.detach().set_requires_grad(true);
    ops::sum(ops::gelu(c_leaf)).backward();
    std::vector<double> upstream(c_leaf.grad().begin(), c_leaf.grad().end());
    T up(c.shape(), upstream);
    ops::sum(ops::mul(c, up)).backward();
    EXPECT_LT(max_abs_diff(xf.grad(), xs.grad()), 1e-12);
}

TEST(Autodiff, InputsUnchangedAndRepeatable) {
    std::mt19937_64 rng(9);
    auto x = random_tensor({1, 3, 5, 5}, rng);
    auto w = random_tensor({3, 3, 3, 3}, rng);
    const std::vector<double> before(x.data().begin(), x.data().end());
    auto y1 = ops::group_norm(ops::conv2d(x, w), 3, T::ones({3}), T::zeros({3}));
    auto y2 = ops::group_norm(ops::conv2d(x, w), 3, T::ones({3}), T::zeros({3}));
    EXPECT_TRUE(std::equal(before.begin(), before.end(), x.data().begin()));
    EXPECT_TRUE(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
}

TEST(ParameterSet, NamesUnique) {
    mrf::ParameterSet<double> ps;
    ps.add("w", T::ones({2}));
    EXPECT_THROW(ps.add("w", T::ones({2})), mrf::ConfigError);
    EXPECT_TRUE(ps[0].tensor.requires_grad());
}

TEST(Serialize, RoundTrip) {
    std::mt19937_64 rng(10);
    auto x = random_tensor({2, 3, 4}, rng);
    const auto dir = std::filesystem::temp_directory_path() / "mrf_serialize_test";
    std::filesystem::create_directories(dir);
    mrf::io::save_tensor((dir / "a.mrft").string(), x);
    auto y = mrf::io::load_tensor<double>((dir / "a.mrft").string());
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_EQ(max_abs_diff(x.data(), y.data()), 0.0);
    std::filesystem::remove_all(dir);
}
