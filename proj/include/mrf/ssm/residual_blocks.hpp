#pragma once

// Residual state-space block (RSSB), its convolutional counterpart, and
// residual groups of either.
//
//   RSSB(x)  = x + s · CA( Conv3×3_{D→C}( SS2D( Conv1×1_{C→D}( LN(x) ) ) ) )
//   CA(y)    = y ⊙ σ( Conv1×1( GELU( Conv1×1( mean_hw(y) ) ) ) ),  reduction 4
//   Group(x) = x + Conv3×3( block_n( … block_1(x) ) )

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "mrf/ssm/ss2d.hpp"
#include "mrf/tensor/init.hpp"
#include "mrf/tensor/ops.hpp"

namespace mrf::ssm {

inline constexpr std::size_t kChannelAttentionReduction = 4;

template <class T>
Tensor<T> channel_attention(const Tensor<T>& y, const Tensor<T>& w1, const Tensor<T>& b1, const Tensor<T>& w2,
                            const Tensor<T>& b2) {
    auto gate = ops::sigmoid(ops::conv2d(ops::gelu(ops::conv2d(ops::mean_hw(y), w1, b1)), w2, b2));
    return ops::mul_channels(y, gate);
}

template <class T>
struct Rssb {
    Tensor<T> ln_scale, ln_shift;  // [C]
    Tensor<T> w_in, b_in;          // [D,C,1,1], [D]
    Ss2dParams<T> ssm;             // over D channels
    Tensor<T> w_local, b_local;    // [C,D,3,3], [C]
    Tensor<T> ca_w1, ca_b1;        // [R,C,1,1], [R]
    Tensor<T> ca_w2, ca_b2;        // [C,R,1,1], [C]
    Tensor<T> res_scale;           // [1], s

    static Rssb init(const Ss2dConfig& cfg, std::mt19937_64& rng) {
        cfg.validate();
        const std::size_t c = cfg.embed_dim, d = cfg.inner_dim();
        const std::size_t r = std::max<std::size_t>(c / kChannelAttentionReduction, 1);
        Rssb b;
        b.ln_scale = Tensor<T>::ones({c});
        b.ln_shift = Tensor<T>::zeros({c});
        b.w_in = init::conv_weight<T>(d, c, 1, rng);
        b.b_in = Tensor<T>::zeros({d});
        b.ssm = init_ss2d_params<T>(d, cfg.state_size, rng);
        b.w_local = init::conv_weight<T>(c, d, 3, rng);
        b.b_local = Tensor<T>::zeros({c});
        b.ca_w1 = init::conv_weight<T>(r, c, 1, rng);
        b.ca_b1 = Tensor<T>::zeros({r});
        b.ca_w2 = init::conv_weight<T>(c, r, 1, rng);
        b.ca_b2 = Tensor<T>::zeros({c});
        b.res_scale = Tensor<T>::ones({1});
        return b;
    }

    std::size_t channels() const { return ln_scale.numel(); }

    /// The residual branch before scaling by s.
    Tensor<T> branch(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != channels()) {
            throw DataError("rssb: expected " + std::to_string(channels()) + " channels, got " + shape_str(x.shape()));
        }
        auto y = ops::conv2d(ops::layer_norm(x, 1, ln_scale, ln_shift), w_in, b_in);
        y = ops::conv2d(ss2d(y, ssm), w_local, b_local);
        return channel_attention(y, ca_w1, ca_b1, ca_w2, ca_b2);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return ops::add(x, ops::scale(branch(x), res_scale)); }

    ParameterSet<T> parameters() const {
        ParameterSet<T> ps;
        ps.add("ln_scale", ln_scale);
        ps.add("ln_shift", ln_shift);
        ps.add("w_in", w_in);
        ps.add("b_in", b_in);
        ps.append("ss2d", ss2d_parameters(ssm));
        ps.add("w_local", w_local);
        ps.add("b_local", b_local);
        ps.add("ca_w1", ca_w1);
        ps.add("ca_b1", ca_b1);
        ps.add("ca_w2", ca_w2);
        ps.add("ca_b2", ca_b2);
        ps.add("res_scale", res_scale);
        return ps;
    }
};

/// x + Conv3×3(GELU(Conv3×3(x))): the convolutional stand-in for an RSSB.
template <class T>
struct ConvResBlock {
    Tensor<T> w1, b1, w2, b2;  // [C,C,3,3], [C]

    static ConvResBlock init(std::size_t c, std::mt19937_64& rng) {
        if (c == 0) throw ConfigError("ConvResBlock: channels must be positive");
        return {init::conv_weight<T>(c, c, 3, rng), Tensor<T>::zeros({c}), init::conv_weight<T>(c, c, 3, rng),
                Tensor<T>::zeros({c})};
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return ops::add(x, ops::conv2d(ops::gelu(ops::conv2d(x, w1, b1)), w2, b2));
    }

    ParameterSet<T> parameters() const {
        ParameterSet<T> ps;
        ps.add("w1", w1);
        ps.add("b1", b1);
        ps.add("w2", w2);
        ps.add("b2", b2);
        return ps;
    }
};

/// Sequential blocks, a trailing 3×3 convolution and a group residual.
template <class Scalar, template <class> class Block>
struct ResidualGroup {
    std::vector<Block<Scalar>> blocks;
    Tensor<Scalar> w_out, b_out;  // [C,C,3,3], [C]

    Tensor<Scalar> body(const Tensor<Scalar>& x) const {
        Tensor<Scalar> y = x;
        for (const auto& b : blocks) y = b.forward(y);
        return y;
    }

    Tensor<Scalar> forward(const Tensor<Scalar>& x) const {
        if (blocks.empty()) throw ConfigError("residual group needs at least one block");
        return ops::add(x, ops::conv2d(body(x), w_out, b_out));
    }

    ParameterSet<Scalar> parameters() const {
        ParameterSet<Scalar> ps;
        for (std::size_t i = 0; i < blocks.size(); ++i) ps.append("block" + std::to_string(i), blocks[i].parameters());
        ps.add("w_out", w_out);
        ps.add("b_out", b_out);
        return ps;
    }
};

template <class T>
using Rssg = ResidualGroup<T, Rssb>;

template <class T>
using ConvGroup = ResidualGroup<T, ConvResBlock>;

template <class T>
Rssg<T> init_rssg(const Ss2dConfig& cfg, std::size_t block_count, std::mt19937_64& rng) {
    if (block_count == 0) throw ConfigError("init_rssg: block_count must be >= 1");
    Rssg<T> g;
    for (std::size_t i = 0; i < block_count; ++i) g.blocks.push_back(Rssb<T>::init(cfg, rng));
    g.w_out = init::conv_weight<T>(cfg.embed_dim, cfg.embed_dim, 3, rng);
    g.b_out = Tensor<T>::zeros({cfg.embed_dim});
    return g;
}

template <class T>
ConvGroup<T> init_conv_group(std::size_t channels, std::size_t block_count, std::mt19937_64& rng) {
    if (block_count == 0) throw ConfigError("init_conv_group: block_count must be >= 1");
    ConvGroup<T> g;
    for (std::size_t i = 0; i < block_count; ++i) g.blocks.push_back(ConvResBlock<T>::init(channels, rng));
    g.w_out = init::conv_weight<T>(channels, channels, 3, rng);
    g.b_out = Tensor<T>::zeros({channels});
    return g;
}

}  // namespace mrf::ssm
