#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "mrf/model/trainer.hpp"
#include "mrf/tensor/grad_check.hpp"
#include "test_util.hpp"

using mrf::Grid;
using mrf::Shape;
using mrf::Tensor;
using mrf::testing::random_tensor;
namespace ops = mrf::ops;
namespace model = mrf::model;

namespace {

double max_diff(const Tensor<double>& a, const Tensor<double>& b) {
    EXPECT_EQ(a.shape(), b.shape());
    return mrf::testing::max_abs_diff(a.data(), b.data());
}

void fill(Tensor<double> t, double v) {
    for (auto& x : t.mutable_data()) x = v;
}

void zero_all(const mrf::ParameterSet<double>& ps) {
    for (const auto& p : ps) fill(p.tensor, 0.0);
}

Tensor<double> weighted_sum(const Tensor<double>& y, const Tensor<double>& w) { return ops::sum(ops::mul(y, w)); }

// Small configuration for fast structural tests.
model::GastConfig tiny_config(std::size_t in_channels = 4) {
    model::GastConfig c;
    c.in_channels = in_channels;
    c.ife = {1, 1, 4, 2, 1.0};
    c.dsfe = {1, 2, 4, 2, 1.0};
    c.latent_channels = 8;
    c.gast.block_count = 1;
    return c;
}

model::GastBlock<double> random_gast(std::size_t c, std::mt19937_64& rng) {
    auto g = model::GastBlock<double>::init(c, {}, rng);
    // Non-trivial affine parameters and biases.
    for (const auto& p : g.parameters()) {
        if (p.name.find("scale") != std::string::npos || p.name.find("shift") != std::string::npos ||
            p.name.find("_b") != std::string::npos || p.name.find("bias") != std::string::npos) {
            auto t = p.tensor;
            std::uniform_real_distribution<double> u(-0.3, 0.3);
            for (auto& v : t.mutable_data()) v += u(rng);
        }
    }
    return g;
}

Grid<std::uint8_t> full_mask(std::size_t r, std::size_t c) { return Grid<std::uint8_t>(r, c, 1); }

Grid<double> random_grid(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Grid<double> g(r, c);
    for (auto& v : g.values) v = u(rng);
    return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, Defaults) {
    const model::GastConfig c;
    EXPECT_EQ(c.ife.rssg_count, 3u);
    EXPECT_EQ(c.ife.rssb_per_group, 2u);
    EXPECT_EQ(c.ife.embed, 96u);
    EXPECT_EQ(c.ife.state, 10u);
    EXPECT_DOUBLE_EQ(c.ife.expand, 1.2);
    EXPECT_EQ(c.dsfe.rssg_count, 4u);
    EXPECT_EQ(c.dsfe.rssb_per_group, 6u);
    EXPECT_EQ(c.latent_channels, 64u);
    EXPECT_EQ(c.gast.gate_kernel_sizes, (std::vector<std::size_t>{1, 3, 5, 7}));
    EXPECT_EQ(c.gast.mlp_expand, 4u);
    const model::TrainConfig t;
    EXPECT_DOUBLE_EQ(t.lr, 5e-5);
    EXPECT_DOUBLE_EQ(t.weight_decay, 0.01);
    EXPECT_EQ(t.batch, 2u);
    EXPECT_EQ(t.epochs, 100u);
    EXPECT_EQ(t.milestones, (std::vector<std::size_t>{25, 50, 75, 90}));
    EXPECT_DOUBLE_EQ(t.gamma, 0.5);
    EXPECT_DOUBLE_EQ(t.l1_weight, 0.2);
    const auto d = model::GastConfig::desk(20);
    EXPECT_EQ(d.ife.embed, 16u);
    EXPECT_EQ(d.dsfe.state, 4u);
}

TEST(Config, Validation) {
    auto c = tiny_config();
    c.gast.gate_kernel_sizes = {1, 4};
    EXPECT_THROW(c.validate(), mrf::ConfigError);
    c = tiny_config();
    c.out_channels = 3;
    EXPECT_THROW(c.validate(), mrf::ConfigError);
    model::TrainConfig t;
    t.milestones = {25, 25};
    EXPECT_THROW(t.validate(), mrf::ConfigError);
    t = {};
    t.milestones = {100};
    EXPECT_THROW(t.validate(), mrf::ConfigError);
    t = {};
    t.w_start = 0.5;
    EXPECT_THROW(t.validate(), mrf::ConfigError);
    EXPECT_THROW(model::parse_variant("A5"), mrf::ConfigError);
}

// ---------------------------------------------------------------------------
// IFE / DSFE

TEST(Ife, ShapeZeroAndStaged) {
    std::mt19937_64 rng(1);
    const auto cfg = tiny_config();
    auto net = model::Network<double>::build(model::Variant::kFull, cfg, 3);
    const auto x = random_tensor({2, 4, 5, 6}, rng);
    const auto f = net.ife.forward(x);
    EXPECT_EQ(f.shape(), (Shape{2, 8, 5, 6}));
    const auto z = net.ife.forward(Tensor<double>::zeros({1, 4, 5, 6}));
    for (double v : z.data()) EXPECT_EQ(v, 0.0);
    auto h = ops::conv2d(x, net.ife.w_embed, net.ife.b_embed);
    for (const auto& g : net.ife.groups) {
        auto y = h;
        for (const auto& b : g.blocks) y = ops::add(y, ops::scale(b.branch(y), b.res_scale));
        h = ops::add(h, ops::conv2d(y, g.w_out, g.b_out));
    }
    EXPECT_LT(max_diff(f, ops::conv2d(h, net.ife.w_proj, net.ife.b_proj)), 1e-12);
    EXPECT_THROW(net.ife.forward(Tensor<double>::zeros({1, 3, 5, 6})), mrf::DataError);
}

TEST(Dsfe, ShapeIdentityAndStaged) {
    std::mt19937_64 rng(2);
    auto net = model::Network<double>::build(model::Variant::kFull, tiny_config(), 4);
    const auto f = random_tensor({1, 8, 4, 5}, rng);
    const auto y = net.dsfe.forward(f);
    EXPECT_EQ(y.shape(), f.shape());
    auto h = ops::conv2d(f, net.dsfe.w_embed, net.dsfe.b_embed);
    for (const auto& g : net.dsfe.groups) h = g.forward(h);
    EXPECT_LT(max_diff(y, ops::add(f, ops::conv2d(h, net.dsfe.w_proj, net.dsfe.b_proj))), 1e-12);
    zero_all(net.dsfe.parameters());
    EXPECT_EQ(max_diff(net.dsfe.forward(f), f), 0.0);
}

// ---------------------------------------------------------------------------
// GAST paths

TEST(Spatial, ConstantInputGivesZero) {
    std::mt19937_64 rng(3);
    auto g = model::GastBlock<double>::init(16, {}, rng);
    fill(g.spatial.kernel, 0.0);
    for (std::size_t c = 0; c < 16; ++c) g.spatial.kernel.mutable_data()[c * 9 + 4] = 1.0;
    // Zero padding makes border sites differ; interior of a large plane is constant.
    const auto y = g.spatial_path(Tensor<double>::full({1, 16, 1, 1}, 2.5));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Spatial, StagedComposition) {
    std::mt19937_64 rng(4);
    auto g = random_gast(16, rng);
    const auto x = random_tensor({2, 16, 5, 5}, rng);
    const auto staged = ops::gelu(ops::group_norm(ops::depthwise_conv2d(x, g.spatial.kernel, g.spatial.bias), 2,
                                                  g.spatial.gn_scale, g.spatial.gn_shift));
    EXPECT_LT(max_diff(g.spatial_path(x), staged), 1e-12);
    EXPECT_EQ(model::group_count(16), 2u);
    EXPECT_EQ(model::group_count(4), 1u);
}

TEST(Spatial, PerturbationStaysWithinGroup) {
    std::mt19937_64 rng(5);
    auto g = random_gast(16, rng);
    const auto x = random_tensor({1, 16, 4, 4}, rng);
    auto x2v = std::vector<double>(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < 16; ++i) x2v[i] += 0.5;  // channel 0
    const Tensor<double> x2(x.shape(), x2v);
    const auto d1 = g.spatial.depthwise(x), d2 = g.spatial.depthwise(x2);
    for (std::size_t i = 16; i < d1.numel(); ++i) EXPECT_EQ(d1[i], d2[i]);
    const auto y1 = g.spatial_path(x), y2 = g.spatial_path(x2);
    // Group 0 holds channels 0..7; channels 8..15 are unaffected after normalisation.
    for (std::size_t i = 8 * 16; i < y1.numel(); ++i) EXPECT_EQ(y1[i], y2[i]);
    double moved = 0.0;
    for (std::size_t i = 16; i < 8 * 16; ++i) moved = std::max(moved, std::abs(y1[i] - y2[i]));
    EXPECT_GT(moved, 0.0);
}

TEST(Temporal, PositionIndependence) {
    std::mt19937_64 rng(6);
    auto g = random_gast(8, rng);
    auto xv = random_tensor({1, 8, 2, 3}, rng);
    std::vector<double> v(xv.data().begin(), xv.data().end());
    for (std::size_t c = 0; c < 8; ++c) v[c * 6 + 5] = v[c * 6 + 0];
    const auto y = g.temporal_path(Tensor<double>(xv.shape(), v));
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(y[c * 6 + 5], y[c * 6 + 0]);
}

TEST(Temporal, ZeroWeights) {
    std::mt19937_64 rng(7);
    auto g = random_gast(8, rng);
    fill(g.mlp_w1, 0.0);
    fill(g.mlp_w2, 0.0);
    fill(g.mlp_b1, 0.0);
    fill(g.mlp_b2, 0.0);
    const auto y = g.temporal_path(random_tensor({2, 8, 3, 3}, rng));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Temporal, PerPositionLoopOracle) {
    std::mt19937_64 rng(8);
    auto g = random_gast(8, rng);
    const std::size_t nb = 2, c = 8, h = 3, w = 4, e = 32;
    const auto x = random_tensor({nb, c, h, w}, rng);
    const auto y = g.temporal_path(x);
    double worst = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t p = 0; p < h * w; ++p) {
            std::vector<double> v(c), hid(e), out(c);
            double mu = 0.0, var = 0.0;
            for (std::size_t k = 0; k < c; ++k) mu += v[k] = x[(b * c + k) * h * w + p];
            mu /= c;
            for (std::size_t k = 0; k < c; ++k) var += (v[k] - mu) * (v[k] - mu);
            var /= c;
            for (std::size_t k = 0; k < c; ++k) v[k] = (v[k] - mu) / std::sqrt(var + 1e-5) * g.ln_scale[k] + g.ln_shift[k];
            for (std::size_t j = 0; j < e; ++j) {
                double a = g.mlp_b1[j];
                for (std::size_t k = 0; k < c; ++k) a += g.mlp_w1[j * c + k] * v[k];
                hid[j] = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
            }
            for (std::size_t k = 0; k < c; ++k) {
                double a = g.mlp_b2[k];
                for (std::size_t j = 0; j < e; ++j) a += g.mlp_w2[k * e + j] * hid[j];
                worst = std::max(worst, std::abs(a - y[(b * c + k) * h * w + p]));
            }
        }
    }
    EXPECT_LT(worst, 1e-12);
}

TEST(Gate, OpenUnitInterval) {
    std::mt19937_64 rng(9);
    auto g = random_gast(8, rng);
    const auto gate = g.gate_map(random_tensor({2, 8, 6, 6}, rng, -3.0, 3.0));
    for (double v : gate.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
}

TEST(Gate, ZeroFinalConvGivesHalf) {
    std::mt19937_64 rng(10);
    auto g = random_gast(8, rng);
    fill(g.gate_w2, 0.0);
    fill(g.gate_b2, 0.0);
    const auto half = g.gate_map(random_tensor({1, 8, 4, 4}, rng));
    for (double v : half.data()) EXPECT_EQ(v, 0.5);
    fill(g.gate_b2, 20.0);
    const auto open = g.gate_map(random_tensor({1, 8, 4, 4}, rng));
    for (double v : open.data()) EXPECT_NEAR(v, 1.0, 1e-8);
}

TEST(Gate, ConcatHoldsEveryKernel) {
    std::mt19937_64 rng(11);
    auto g = random_gast(8, rng);
    const auto x = random_tensor({1, 8, 5, 5}, rng);
    const auto cat = g.gate_concat(x);
    EXPECT_EQ(cat.shape(), (Shape{1, 32, 5, 5}));
    const auto k7 = ops::depthwise_conv2d(x, g.gate_kernels[3], g.gate_biases[3]);
    for (std::size_t i = 0; i < k7.numel(); ++i) EXPECT_EQ(cat[24 * 25 + i], k7[i]);
}

TEST(Fuse, Extremes) {
    std::mt19937_64 rng(12);
    const auto s = random_tensor({1, 3, 4, 4}, rng), t = random_tensor({1, 3, 4, 4}, rng);
    EXPECT_LT(max_diff(model::gast_fuse(Tensor<double>::ones(s.shape()), s, t), s), 1e-15);
    EXPECT_EQ(max_diff(model::gast_fuse(Tensor<double>::zeros(s.shape()), s, t), t), 0.0);
    const auto half = model::gast_fuse(Tensor<double>::full(s.shape(), 0.5), s, t);
    for (std::size_t i = 0; i < s.numel(); ++i) EXPECT_NEAR(half[i], 0.5 * (s[i] + t[i]), 1e-14);
    EXPECT_THROW(model::gast_fuse(Tensor<double>::ones({1, 3, 4, 3}), s, t), mrf::DataError);
}

TEST(Fuse, ConvexEnvelope) {
    std::mt19937_64 rng(13);
    auto g = random_gast(8, rng);
    const auto x = random_tensor({2, 8, 5, 5}, rng, -2.0, 2.0);
    const auto s = g.spatial_path(x), t = g.temporal_path(x), out = g.fused(x);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        EXPECT_GE(out[i], std::min(s[i], t[i]) - 1e-15);
        EXPECT_LE(out[i], std::max(s[i], t[i]) + 1e-15);
    }
}

TEST(GastBlock, AlphaZeroIsIdentity) {
    std::mt19937_64 rng(14);
    auto g = random_gast(8, rng);
    fill(g.alpha, 0.0);
    const auto x = random_tensor({1, 8, 4, 4}, rng);
    EXPECT_EQ(max_diff(g.forward(x), x), 0.0);
}

TEST(GastBlock, ZeroRefinementIsIdentity) {
    std::mt19937_64 rng(15);
    auto g = random_gast(8, rng);
    fill(g.refine_w, 0.0);
    fill(g.refine_b, 0.0);
    const auto x = random_tensor({1, 8, 4, 4}, rng);
    EXPECT_EQ(max_diff(g.forward(x), x), 0.0);
}

TEST(GastBlock, ResidualDecomposition) {
    std::mt19937_64 rng(16);
    auto g = random_gast(8, rng);
    fill(g.alpha, 0.8);
    const auto x = random_tensor({1, 8, 4, 5}, rng);
    const auto y = g.forward(x);
    const auto gate = g.gate_map(x), s = g.spatial_path(x), t = g.temporal_path(x);
    std::vector<double> fused(x.numel());
    for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = gate[i] * s[i] + (1.0 - gate[i]) * t[i];
    const Tensor<double> f(x.shape(), fused);
    const auto enh = ops::conv2d(ops::gelu(ops::group_norm(ops::depthwise_conv2d(f, g.refine.kernel, g.refine.bias), 1,
                                                           g.refine.gn_scale, g.refine.gn_shift)),
                                 g.refine_w, g.refine_b);
    double worst = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) worst = std::max(worst, std::abs((y[i] - x[i]) - 0.8 * enh[i]));
    EXPECT_LT(worst, 1e-12);
}

TEST(GastBlock, Gradients) {
    std::mt19937_64 rng(17);
    auto g = random_gast(8, rng);
    auto x = random_tensor({1, 8, 4, 4}, rng);
    const auto w = random_tensor({1, 8, 4, 4}, rng);
    std::vector<Tensor<double>> leaves{x};
    for (const auto& p : g.parameters()) leaves.push_back(p.tensor);
    EXPECT_LT(mrf::grad_check_leaves<double>([&] { return weighted_sum(g.forward(x), w); }, leaves, 1e-6, 10, 1), 1e-4);
    // Gate alone.
    EXPECT_LT(mrf::grad_check_leaves<double>([&] { return weighted_sum(g.gate_map(x), w); }, leaves, 1e-6, 10, 2), 1e-4);
}

// ---------------------------------------------------------------------------
// Head

TEST(Head, BetaExtremes) {
    std::mt19937_64 rng(18);
    auto head = model::Head<double>::init(4, 8, 2, rng);
    const auto x = random_tensor({1, 4, 3, 3}, rng), f = random_tensor({1, 8, 3, 3}, rng);
    const auto f2 = random_tensor({1, 8, 3, 3}, rng), x2 = random_tensor({1, 4, 3, 3}, rng);
    fill(head.beta, 1.0);
    EXPECT_EQ(max_diff(head.forward(x, f), head.forward(x, f2)), 0.0);
    fill(head.beta, 0.0);
    EXPECT_EQ(max_diff(head.forward(x, f), head.forward(x2, f)), 0.0);
    fill(head.beta, 0.5);
    const auto skip = head.skip(x);
    const auto blended = head.blended(x, skip);
    for (std::size_t i = 0; i < skip.numel(); ++i) EXPECT_NEAR(blended[i], skip[i], 1e-14);
}

TEST(Head, InitialBeta) {
    std::mt19937_64 rng(19);
    const auto head = model::Head<double>::init(4, 8, 2, rng);
    EXPECT_EQ(head.beta.item(), 0.5);
}

// ---------------------------------------------------------------------------
// Variants

TEST(Variants, ShapesAndParameterCounts) {
    std::mt19937_64 rng(20);
    const auto cfg = tiny_config();
    const auto x = random_tensor({2, 4, 5, 5}, rng);
    std::map<std::string, std::size_t> counts;
    for (auto v : {model::Variant::kFull, model::Variant::kA1, model::Variant::kA2, model::Variant::kA3, model::Variant::kA4}) {
        const auto net = model::Network<double>::build(v, cfg, 7);
        EXPECT_EQ(net.forward(x).shape(), (Shape{2, 2, 5, 5})) << model::variant_name(v);
        counts[model::variant_name(v)] = net.parameters().scalar_count();
        EXPECT_EQ(model::parse_variant(model::variant_name(v)), v);
    }
    EXPECT_LT(counts["A3"], counts["full"]);
    EXPECT_LT(counts["A1"], counts["full"]);
    EXPECT_LT(counts["A2"], counts["full"]);
}

TEST(Variants, A3HasNoGastOrDsfeParameters) {
    const auto net = model::Network<double>::build(model::Variant::kA3, tiny_config(), 1);
    for (const auto& p : net.parameters()) {
        EXPECT_EQ(p.name.rfind("gast", 0), std::string::npos) << p.name;
        EXPECT_EQ(p.name.rfind("dsfe", 0), std::string::npos) << p.name;
    }
}

TEST(Variants, A4UsesConvolutionalEncoder) {
    const auto net = model::Network<double>::build(model::Variant::kA4, tiny_config(), 1);
    EXPECT_TRUE(net.ife.groups.empty());
    EXPECT_EQ(net.ife.conv_groups.size(), 1u);
    EXPECT_EQ(net.ife.conv_groups[0].blocks.size(), 1u);
    EXPECT_EQ(net.dsfe.groups.size(), 1u);
}

TEST(Variants, A2EqualsFullWithZeroAlpha) {
    std::mt19937_64 rng(21);
    const auto cfg = tiny_config();
    auto full = model::Network<double>::build(model::Variant::kFull, cfg, 11);
    const auto a2 = model::Network<double>::build(model::Variant::kA2, cfg, 11);
    for (auto& g : full.gast) fill(g.alpha, 0.0);
    const auto x = random_tensor({2, 4, 6, 5}, rng);
    EXPECT_LT(max_diff(full.forward(x), a2.forward(x)), 1e-12);
}

TEST(Network, EndToEndGradient) {
    std::mt19937_64 rng(22);
    const auto cfg = model::GastConfig::desk(20);
    auto net = model::Network<double>::build(model::Variant::kFull, cfg, 5);
    auto ps = net.parameters();
    auto x = random_tensor({2, 20, 8, 8}, rng);
    const auto target = random_tensor({2, 2, 8, 8}, rng);
    std::vector<double> mask(2 * 64, 1.0);
    for (std::size_t i = 0; i < mask.size(); i += 5) mask[i] = 0.0;
    model::TrainConfig tc;
    // Input plus every third parameter tensor, one sampled coordinate each.
    std::vector<Tensor<double>> leaves{x};
    for (std::size_t i = 0; i < ps.size(); i += 3) leaves.push_back(ps[i].tensor);
    const double err = mrf::grad_check_leaves<double>(
        [&] { return model::loss_total(net.forward(x), target, std::span<const double>(mask), 10, tc); }, leaves, 1e-6, 1, 9);
    EXPECT_LT(err, 1e-4);
}

TEST(Network, CheckpointRoundTrip) {
    std::mt19937_64 rng(23);
    const auto cfg = tiny_config();
    const auto a = model::Network<double>::build(model::Variant::kFull, cfg, 1);
    auto b = model::Network<double>::build(model::Variant::kFull, cfg, 2);
    const auto path = (std::filesystem::temp_directory_path() / "mrf_test_ckpt.bin").string();
    model::save_parameters(path, a.parameters());
    auto pb = b.parameters();
    model::load_parameters(path, pb);
    const auto x = random_tensor({1, 4, 4, 4}, rng);
    EXPECT_EQ(max_diff(a.forward(x), b.forward(x)), 0.0);
    auto a3 = model::Network<double>::build(model::Variant::kA3, cfg, 1);
    auto p3 = a3.parameters();
    EXPECT_THROW(model::load_parameters(path, p3), mrf::DataError);
    std::filesystem::remove(path);
}

// ---------------------------------------------------------------------------
// Loss and schedule

TEST(Loss, IdenticalIsZero) {
    std::mt19937_64 rng(24);
    const auto p = random_tensor({2, 2, 3, 3}, rng);
    std::vector<double> mask(18, 1.0);
    EXPECT_EQ(model::loss_total(p, p, std::span<const double>(mask), 1, model::TrainConfig{}).item(), 0.0);
}

TEST(Loss, WeightEndpoints) {
    const model::TrainConfig cfg;
    EXPECT_EQ(model::t1_weight(1, cfg), 1.5);
    EXPECT_EQ(model::t1_weight(100, cfg), 1.0);
    // Affine in e.
    for (std::size_t e = 2; e < 100; ++e) {
        EXPECT_NEAR(model::t1_weight(e + 1, cfg) - model::t1_weight(e, cfg), -0.5 / 99.0, 1e-15);
    }
    EXPECT_THROW(model::t1_weight(0, cfg), mrf::ConfigError);
    EXPECT_THROW(model::t1_weight(101, cfg), mrf::ConfigError);
}

TEST(Loss, SingleVoxelHandValue) {
    model::TrainConfig cfg;
    cfg.epochs = 101;
    const std::size_t e = 51;  // midpoint: w = 1.25
    const Tensor<double> pred({1, 2, 1, 1}, {3.0, -1.0}), target({1, 2, 1, 1}, {2.0, 1.0});
    std::vector<double> mask{1.0};
    const double w = 1.25;
    const double hand = w * (1.0 + 0.2 * 1.0) + (4.0 + 0.2 * 2.0);
    EXPECT_NEAR(model::loss_total(pred, target, std::span<const double>(mask), e, cfg).item(), hand, 1e-14);
}

TEST(Loss, MaskExcludesBackground) {
    const Tensor<double> pred({1, 2, 1, 2}, {1.0, 100.0, 1.0, -50.0}), target({1, 2, 1, 2}, {1.0, 0.0, 1.0, 0.0});
    std::vector<double> mask{1.0, 0.0};
    EXPECT_EQ(model::loss_total(pred, target, std::span<const double>(mask), 1, model::TrainConfig{}).item(), 0.0);
}

TEST(Schedule, MilestoneTrace) {
    const model::TrainConfig cfg;
    EXPECT_DOUBLE_EQ(model::scheduled_lr(1, cfg), 5e-5);
    EXPECT_DOUBLE_EQ(model::scheduled_lr(25, cfg), 5e-5);
    EXPECT_DOUBLE_EQ(model::scheduled_lr(26, cfg), 2.5e-5);
    EXPECT_DOUBLE_EQ(model::scheduled_lr(91, cfg), 5e-5 * std::pow(0.5, 4));
    for (std::size_t e = 2; e <= 100; ++e) {
        const double ratio = model::scheduled_lr(e, cfg) / model::scheduled_lr(e - 1, cfg);
        const bool at_milestone = e == 26 || e == 51 || e == 76 || e == 91;
        EXPECT_EQ(ratio, at_milestone ? 0.5 : 1.0) << e;
    }
}

TEST(AdamW, ZeroGradientZeroDecayUnchanged) {
    model::TrainConfig cfg;
    cfg.weight_decay = 0.0;
    Tensor<double> p({3}, {1.0, -2.0, 3.0});
    mrf::ParameterSet<double> ps;
    ps.add("p", p);
    model::AdamW<double> opt(ps, cfg);
    for (int i = 0; i < 3; ++i) opt.step(1e-3);
    EXPECT_EQ(p[0], 1.0);
    EXPECT_EQ(p[1], -2.0);
    EXPECT_EQ(p[2], 3.0);
}

TEST(AdamW, ScalarRecursionTrace) {
    model::TrainConfig cfg;
    Tensor<double> p({1}, {0.7});
    mrf::ParameterSet<double> ps;
    ps.add("p", p);
    model::AdamW<double> opt(ps, cfg);
    const double grads[3] = {0.3, -1.2, 0.05};
    const double lrs[3] = {1e-2, 5e-3, 2e-3};
    double x = 0.7, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        opt.zero_grad();
        p.mutable_grad()[0] = grads[t - 1];
        opt.step(lrs[t - 1]);
        x = x - lrs[t - 1] * 0.01 * x;
        m = 0.9 * m + 0.1 * grads[t - 1];
        v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
        const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
        x = x - lrs[t - 1] * mh / (std::sqrt(vh) + 1e-8);
        EXPECT_NEAR(p[0], x, 1e-12) << t;
    }
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, IdenticalMaps) {
    std::mt19937_64 rng(25);
    const auto t = random_grid(12, 12, rng, 100.0, 2000.0);
    const auto m = model::evaluate_map(t, t, full_mask(12, 12));
    EXPECT_EQ(m.rmse, 0.0);
    EXPECT_EQ(m.nmse, 0.0);
    EXPECT_EQ(m.psnr, model::kPsnrCap);
    EXPECT_NEAR(m.ssim, 1.0, 1e-12);
}

TEST(Metrics, ConstantOffset) {
    std::mt19937_64 rng(26);
    const auto t = random_grid(10, 9, rng, 100.0, 2000.0);
    auto p = t;
    for (auto& v : p.values) v += 37.0;
    auto mask = full_mask(10, 9);
    mask(0, 0) = 0;
    p(0, 0) = 1e6;
    EXPECT_EQ(model::masked_rmse(p, t, mask), 37.0);
}

TEST(Metrics, FormulaRecomputation) {
    std::mt19937_64 rng(27);
    const std::size_t n = 16;
    const auto t = random_grid(n, n, rng, 200.0, 1500.0);
    auto p = t;
    std::normal_distribution<double> noise(0.0, 40.0);
    for (auto& v : p.values) v += noise(rng);
    Grid<std::uint8_t> mask(n, n, 0);
    for (std::size_t r = 2; r < 14; ++r)
        for (std::size_t c = 3; c < 15; ++c) mask(r, c) = 1;
    const auto m = model::evaluate_map(p, t, mask);

    long double se = 0, ref = 0, peak = 0, lo = 1e30, hi = -1e30;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n * n; ++i) {
        if (!mask.values[i]) continue;
        ++cnt;
        se += (long double)(p.values[i] - t.values[i]) * (p.values[i] - t.values[i]);
        ref += (long double)t.values[i] * t.values[i];
        peak = std::max<long double>(peak, t.values[i]);
        lo = std::min<long double>(lo, t.values[i]);
        hi = std::max<long double>(hi, t.values[i]);
    }
    const long double rmse = std::sqrt(se / cnt);
    EXPECT_NEAR(m.rmse, (double)rmse, 1e-9);
    EXPECT_NEAR(m.nmse, (double)(se / ref), 1e-9);
    EXPECT_NEAR(m.psnr, (double)(20.0L * std::log10(peak / rmse)), 1e-9);

    // SSIM from an explicit 11×11 window built from scratch.
    const long double L = hi - lo, c1 = (0.01L * L) * (0.01L * L), c2 = (0.03L * L) * (0.03L * L);
    long double total = 0;
    std::size_t windows = 0;
    for (int r = 0; r < (int)n; ++r) {
        for (int c = 0; c < (int)n; ++c) {
            if (!mask(r, c)) continue;
            long double ws = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
            for (int a = r - 5; a <= r + 5; ++a) {
                for (int b = c - 5; b <= c + 5; ++b) {
                    if (a < 0 || b < 0 || a >= (int)n || b >= (int)n) continue;
                    const long double w = std::exp(-((long double)(a - r) * (a - r) + (long double)(b - c) * (b - c)) / 4.5L);
                    const long double x = mask(a, b) ? p(a, b) : 0.0, y = mask(a, b) ? t(a, b) : 0.0;
                    ws += w;
                    sx += w * x;
                    sy += w * y;
                    sxx += w * x * x;
                    syy += w * y * y;
                    sxy += w * x * y;
                }
            }
            const long double mx = sx / ws, my = sy / ws;
            const long double vx = sxx / ws - mx * mx, vy = syy / ws - my * my, cv = sxy / ws - mx * my;
            total += ((2 * mx * my + c1) * (2 * cv + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++windows;
        }
    }
    EXPECT_NEAR(m.ssim, (double)(total / windows), 1e-9);
}

TEST(Metrics, EmptyMaskRejected) {
    Grid<double> a(4, 4, 1.0);
    EXPECT_THROW(model::evaluate_map(a, a, Grid<std::uint8_t>(4, 4, 0)), mrf::DataError);
    EXPECT_THROW(model::evaluate_map(a, Grid<double>(4, 5, 1.0), Grid<std::uint8_t>(4, 4, 1)), mrf::DataError);
}

TEST(Metrics, StandardizationConsistency) {
    std::mt19937_64 rng(28);
    const auto t = random_grid(8, 8, rng, 300.0, 1800.0);
    auto p = t;
    std::normal_distribution<double> noise(0.0, 25.0);
    for (auto& v : p.values) v += noise(rng);
    const auto mask = full_mask(8, 8);
    const double s = 412.0;
    auto ts = t, ps = p;
    for (auto& v : ts.values) v /= s;
    for (auto& v : ps.values) v /= s;
    EXPECT_NEAR(model::masked_rmse(ps, ts, mask) * s, model::masked_rmse(p, t, mask), 1e-9);
    EXPECT_NEAR(model::masked_nmse(ps, ts, mask), model::masked_nmse(p, t, mask), 1e-12);
    EXPECT_NEAR(model::masked_psnr(ps, ts, mask), model::masked_psnr(p, t, mask), 1e-9);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

// Inputs that carry the targets linearly, plus a fixed random mixing.
model::TrainData toy_data(std::size_t n, std::size_t size, std::size_t channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> mix(channels * 2);
    for (auto& v : mix) v = u(rng);
    model::TrainData d;
    for (std::size_t s = 0; s < n; ++s) {
        auto tm = mrf::make_phantom(size, 3, seed + s);
        std::vector<double> x(channels * size * size);
        for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t i = 0; i < size * size; ++i) {
                x[c * size * size + i] = mix[2 * c] * tm.t1.values[i] / 1000.0 + mix[2 * c + 1] * tm.t2.values[i] / 100.0;
            }
        }
        d.inputs.emplace_back(Shape{channels, size, size}, std::move(x));
        d.maps.push_back(std::move(tm));
    }
    return d;
}

model::TrainConfig toy_train(std::size_t epochs) {
    model::TrainConfig c;
    c.lr = 2e-3;
    c.epochs = epochs;
    c.milestones = {};
    c.val_fraction = 0.25;
    c.seed = 3;
    return c;
}

}  // namespace

TEST(Trainer, SplitIsSeededPartition) {
    const auto a = model::split_indices(16, 0.1, 5), b = model::split_indices(16, 0.1, 5);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.val, b.val);
    EXPECT_EQ(a.val.size(), 2u);
    std::vector<std::size_t> all = a.train;
    all.insert(all.end(), a.val.begin(), a.val.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(all[i], i);
    EXPECT_EQ(model::split_indices(1300, 0.1, 0).val.size(), 130u);
}

TEST(Trainer, OverfitLossDecreases) {
    const auto data = toy_data(5, 8, 4, 1);
    auto net = model::Network<double>::build(model::Variant::kFull, tiny_config(4), 1);
    auto cfg = toy_train(2);
    cfg.val_fraction = 0.2;  // 4 training samples
    model::Trainer<double> tr(net, data, cfg);
    EXPECT_EQ(tr.split().train.size(), 4u);
    const auto e1 = tr.run_epoch();
    const auto e2 = tr.run_epoch();
    EXPECT_LT(e2.train_loss, e1.train_loss);
    EXPECT_DOUBLE_EQ(e1.w_e, 1.5);
    EXPECT_DOUBLE_EQ(e2.w_e, 1.0);
    EXPECT_THROW(tr.run_epoch(), mrf::ConfigError);
}

TEST(Trainer, DeterministicReplay) {
    const auto data = toy_data(4, 8, 4, 2);
    std::vector<double> losses;
    for (int rep = 0; rep < 2; ++rep) {
        auto net = model::Network<float>::build(model::Variant::kFull, tiny_config(4), 4);
        model::Trainer<float> tr(net, data, toy_train(1));
        const auto log = tr.run_epoch();
        losses.push_back(log.train_loss);
        losses.push_back(log.val_loss);
    }
    EXPECT_EQ(losses[0], losses[2]);
    EXPECT_EQ(losses[1], losses[3]);
}

TEST(Trainer, ResumeMatchesContinuousRun) {
    const auto data = toy_data(4, 8, 4, 3);
    const auto cfg = toy_train(3);
    auto a = model::Network<double>::build(model::Variant::kA1, tiny_config(4), 6);
    model::Trainer<double> ta(a, data, cfg);
    for (int e = 0; e < 3; ++e) ta.run_epoch();

    auto b = model::Network<double>::build(model::Variant::kA1, tiny_config(4), 6);
    model::Trainer<double> tb(b, data, cfg);
    tb.run_epoch();
    // Serialize parameters and optimiser state, rebuild, continue.
    const auto params = model::snapshot(b.parameters());
    const auto m = tb.optimizer().first_moments(), v = tb.optimizer().second_moments();
    const auto steps = tb.optimizer().steps();
    auto c = model::Network<double>::build(model::Variant::kA1, tiny_config(4), 99);
    auto pc = c.parameters();
    model::restore(pc, params);
    model::Trainer<double> tc(c, data, cfg);
    tc.optimizer().first_moments() = m;
    tc.optimizer().second_moments() = v;
    tc.optimizer().set_steps(steps);
    tc.set_epochs_done(1);
    tc.run_epoch();
    tc.run_epoch();
    const auto sa = model::snapshot(a.parameters()), sc = model::snapshot(c.parameters());
    ASSERT_EQ(sa.size(), sc.size());
    for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i], sc[i]) << i;
    EXPECT_EQ(ta.optimizer().first_moments(), tc.optimizer().first_moments());
}

TEST(Trainer, PredictDestandardizes) {
    const auto data = toy_data(3, 8, 4, 4);
    auto net = model::Network<double>::build(model::Variant::kA3, tiny_config(4), 1);
    model::Trainer<double> tr(net, data, toy_train(1));
    // Zero head output → predictions equal the training means inside the mask.
    fill(net.head.w_out, 0.0);
    const auto& norm = tr.normalization();
    const auto p = model::predict(net, data.inputs[0], data.maps[0].mask, norm);
    for (std::size_t i = 0; i < 64; ++i) {
        if (data.maps[0].mask.values[i]) {
            EXPECT_NEAR(p.t1.values[i], norm.targets.mean_t1, 1e-9);
            EXPECT_NEAR(p.t2.values[i], norm.targets.mean_t2, 1e-9);
        } else {
            EXPECT_EQ(p.t1.values[i], 0.0);
        }
    }
}

// ---------------------------------------------------------------------------
// Augmentation

TEST(Augment, DihedralCodesAreDistinctPermutations) {
    const std::size_t n = 5;
    std::set<std::vector<std::size_t>> seen;
    for (unsigned code = 0; code < 8; ++code) {
        std::vector<std::size_t> p;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) p.push_back(model::dihedral_source(code, r, c, n, n));
        auto sorted = p;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i) << code;
        if (code == 0) {
            for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], i);
        }
        seen.insert(p);
    }
    EXPECT_EQ(seen.size(), 8u);
    EXPECT_EQ(model::dihedral_source(1, 0, 2, 3, 4), 2u * 4 + 2);  // row flip
    EXPECT_EQ(model::dihedral_source(2, 1, 0, 3, 4), 1u * 4 + 3);  // column flip
}

TEST(Augment, BatchRotatesInputsTargetsAndMaskTogether) {
    const auto data = toy_data(2, 8, 3, 5);
    const model::Normalization norm{0.5, mrf::standardize_targets(data.maps)};
    const auto plain = model::make_batch<double>(data, {0, 1}, norm);
    // Code 5 (transpose, then row flip) reads (h-1-c, r): a quarter turn.
    const auto turned = model::make_batch<double>(data, {0, 1}, norm, {0u, 5u});
    const std::size_t h = 8, hw = 64;
    for (std::size_t i = 0; i < 3 * hw; ++i) EXPECT_EQ(turned.input[i], plain.input[i]);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < h; ++c) {
            const std::size_t dst = r * h + c, src = (h - 1 - c) * h + r;
            EXPECT_EQ(turned.mask[hw + dst], plain.mask[hw + src]);
            for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(turned.input[(3 + ch) * hw + dst], plain.input[(3 + ch) * hw + src]);
            for (std::size_t t = 0; t < 2; ++t) EXPECT_EQ(turned.target[(2 + t) * hw + dst], plain.target[(2 + t) * hw + src]);
        }
    }
    model::TrainData wide;
    wide.inputs.push_back(Tensor<double>::zeros({3, 4, 6}));
    wide.maps.push_back(mrf::make_phantom(8, 2, 1));
    wide.maps[0].t1 = Grid<double>(4, 6, 1000.0);
    wide.maps[0].t2 = Grid<double>(4, 6, 100.0);
    wide.maps[0].b0 = Grid<double>(4, 6, 0.0);
    wide.maps[0].mask = Grid<std::uint8_t>(4, 6, 1);
    EXPECT_NO_THROW(model::make_batch<double>(wide, {0}, norm, {3u}));
    EXPECT_THROW(model::make_batch<double>(wide, {0}, norm, {4u}), mrf::DataError);
}

TEST(Augment, SeededAndChangesTheTrajectory) {
    const auto data = toy_data(4, 8, 4, 6);
    auto run = [&](bool augment) {
        auto net = model::Network<double>::build(model::Variant::kA1, tiny_config(4), 8);
        auto cfg = toy_train(2);
        cfg.augment = augment;
        model::Trainer<double> tr(net, data, cfg);
        tr.run_epoch();
        return tr.run_epoch().train_loss;
    };
    const double a = run(true);
    EXPECT_EQ(a, run(true));
    EXPECT_NE(a, run(false));
}
