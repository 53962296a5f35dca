#pragma once

// Gate-aware spatial-temporal block.
//   F_spatial  = GELU(GN(DWConv3×3(F)))
//   F_temporal = per-position Linear(4C→C)(GELU(Linear(C→4C)(LN(F))))
//   Gate       = σ(Conv1×1(GELU(Conv1×1(concat_k DWConv_k×k(F)))))
//   F_output   = Gate ⊙ F_spatial + (1 − Gate) ⊙ F_temporal
//   F_enhanced = Conv1×1(GELU(GN(DWConv3×3(F_output))))
//   out        = α · F_enhanced + F

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "mrf/model/config.hpp"
#include "mrf/tensor/init.hpp"
#include "mrf/tensor/ops.hpp"

namespace mrf::model {

inline std::size_t group_count(std::size_t channels) { return std::max<std::size_t>(channels / 8, 1); }

/// Depthwise k×k convolution followed by group norm and GELU.
template <class T>
struct DwNormAct {
    Tensor<T> kernel, bias;       // [C,3,3], [C]
    Tensor<T> gn_scale, gn_shift;  // [C]

    static DwNormAct init(std::size_t c, std::mt19937_64& rng) {
        return {init::fan_in_uniform<T>({c, 3, 3}, 9, rng), Tensor<T>::zeros({c}), Tensor<T>::ones({c}),
                Tensor<T>::zeros({c})};
    }

    Tensor<T> depthwise(const Tensor<T>& x) const { return ops::depthwise_conv2d(x, kernel, bias); }

    Tensor<T> forward(const Tensor<T>& x) const {
        return ops::gelu(ops::group_norm(depthwise(x), group_count(x.dim(1)), gn_scale, gn_shift));
    }

    void add_to(ParameterSet<T>& ps, const std::string& prefix) const {
        ps.add(prefix + ".dw_kernel", kernel);
        ps.add(prefix + ".dw_bias", bias);
        ps.add(prefix + ".gn_scale", gn_scale);
        ps.add(prefix + ".gn_shift", gn_shift);
    }
};

template <class T>
Tensor<T> tokens_of(const Tensor<T>& f) {
    const std::size_t b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
    return ops::reshape(ops::permute(f, {0, 2, 3, 1}), {b * h * w, c});
}

template <class T>
Tensor<T> image_of(const Tensor<T>& tokens, const Shape& shape) {
    const std::size_t b = shape[0], c = shape[1], h = shape[2], w = shape[3];
    return ops::permute(ops::reshape(tokens, {b, h, w, c}), {0, 3, 1, 2});
}

/// Convex combination gate ⊙ s + (1 − gate) ⊙ t, evaluated as t + gate ⊙ (s − t).
template <class T>
Tensor<T> gast_fuse(const Tensor<T>& gate, const Tensor<T>& s, const Tensor<T>& t) {
    if (gate.shape() != s.shape() || s.shape() != t.shape()) {
        throw DataError("gast_fuse: shapes " + shape_str(gate.shape()) + ", " + shape_str(s.shape()) + ", " +
                        shape_str(t.shape()) + " differ");
    }
    return ops::add(t, ops::mul(gate, ops::sub(s, t)));
}

template <class T>
struct GastBlock {
    DwNormAct<T> spatial;
    Tensor<T> ln_scale, ln_shift;            // [C]
    Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // [eC,C], [eC], [C,eC], [C]
    std::vector<Tensor<T>> gate_kernels;     // [C,k,k]
    std::vector<Tensor<T>> gate_biases;      // [C]
    Tensor<T> gate_w1, gate_b1;              // [C, nC, 1, 1], [C]
    Tensor<T> gate_w2, gate_b2;              // [C, C, 1, 1], [C]
    DwNormAct<T> refine;
    Tensor<T> refine_w, refine_b;            // [C,C,1,1], [C]
    Tensor<T> alpha;                          // [1]

    static GastBlock init(std::size_t c, const GastBlockConfig& cfg, std::mt19937_64& rng) {
        cfg.validate();
        const std::size_t e = cfg.mlp_expand * c, n = cfg.gate_kernel_sizes.size();
        GastBlock g;
        g.spatial = DwNormAct<T>::init(c, rng);
        g.ln_scale = Tensor<T>::ones({c});
        g.ln_shift = Tensor<T>::zeros({c});
        g.mlp_w1 = init::fan_in_uniform<T>({e, c}, c, rng);
        g.mlp_b1 = Tensor<T>::zeros({e});
        g.mlp_w2 = init::fan_in_uniform<T>({c, e}, e, rng);
        g.mlp_b2 = Tensor<T>::zeros({c});
        for (auto k : cfg.gate_kernel_sizes) {
            g.gate_kernels.push_back(init::fan_in_uniform<T>({c, k, k}, k * k, rng));
            g.gate_biases.push_back(Tensor<T>::zeros({c}));
        }
        g.gate_w1 = init::conv_weight<T>(c, n * c, 1, rng);
        g.gate_b1 = Tensor<T>::zeros({c});
        g.gate_w2 = init::conv_weight<T>(c, c, 1, rng);
        g.gate_b2 = Tensor<T>::zeros({c});
        g.refine = DwNormAct<T>::init(c, rng);
        g.refine_w = init::conv_weight<T>(c, c, 1, rng);
        g.refine_b = Tensor<T>::zeros({c});
        g.alpha = Tensor<T>::ones({1});
        return g;
    }

    std::size_t channels() const { return ln_scale.numel(); }

    Tensor<T> spatial_path(const Tensor<T>& f) const { return spatial.forward(f); }

    Tensor<T> temporal_path(const Tensor<T>& f) const {
        auto t = ops::layer_norm(tokens_of(f), 1, ln_scale, ln_shift);
        t = ops::linear(ops::gelu(ops::linear(t, mlp_w1, mlp_b1)), mlp_w2, mlp_b2);
        return image_of(t, f.shape());
    }

    Tensor<T> gate_concat(const Tensor<T>& f) const {
        std::vector<Tensor<T>> parts;
        for (std::size_t i = 0; i < gate_kernels.size(); ++i) {
            parts.push_back(ops::depthwise_conv2d(f, gate_kernels[i], gate_biases[i]));
        }
        return ops::concat_channels(parts);
    }

    Tensor<T> gate_map(const Tensor<T>& f) const {
        return ops::sigmoid(ops::conv2d(ops::gelu(ops::conv2d(gate_concat(f), gate_w1, gate_b1)), gate_w2, gate_b2));
    }

    Tensor<T> fused(const Tensor<T>& f) const { return gast_fuse(gate_map(f), spatial_path(f), temporal_path(f)); }

    Tensor<T> enhanced(const Tensor<T>& f) const { return ops::conv2d(refine.forward(fused(f)), refine_w, refine_b); }

    Tensor<T> forward(const Tensor<T>& f) const {
        if (f.rank() != 4 || f.dim(1) != channels()) {
            throw DataError("gast_block: expected " + std::to_string(channels()) + " channels, got " + shape_str(f.shape()));
        }
        return ops::add(ops::scale(enhanced(f), alpha), f);
    }

    ParameterSet<T> parameters() const {
        ParameterSet<T> ps;
        spatial.add_to(ps, "spatial");
        ps.add("ln_scale", ln_scale);
        ps.add("ln_shift", ln_shift);
        ps.add("mlp_w1", mlp_w1);
        ps.add("mlp_b1", mlp_b1);
        ps.add("mlp_w2", mlp_w2);
        ps.add("mlp_b2", mlp_b2);
        for (std::size_t i = 0; i < gate_kernels.size(); ++i) {
            const auto k = std::to_string(gate_kernels[i].dim(1));
            ps.add("gate_dw" + k + "_kernel", gate_kernels[i]);
            ps.add("gate_dw" + k + "_bias", gate_biases[i]);
        }
        ps.add("gate_w1", gate_w1);
        ps.add("gate_b1", gate_b1);
        ps.add("gate_w2", gate_w2);
        ps.add("gate_b2", gate_b2);
        refine.add_to(ps, "refine");
        ps.add("refine_w", refine_w);
        ps.add("refine_b", refine_b);
        ps.add("alpha", alpha);
        return ps;
    }
};

}  // namespace mrf::model
