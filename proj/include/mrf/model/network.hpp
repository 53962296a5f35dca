#pragma once

// Full network and its ablation variants.
//   IFE : Conv3×3_{2r→E} → RSSG × n → Conv1×1_{E→64}            (F_latent)
//   GAST: GastBlock × m                                          (F_GAST_out)
//   DSFE: F + Conv1×1_{E→64}(RSSG × n(Conv1×1_{64→E}(F)))        (F_deep)
//   Head: Ŷ = Conv1×1_{64→2}(β · Conv3×3_{2r→64}(X) + (1 − β) · F_deep)
//
//   full = IFE + GAST + DSFE     A1 = IFE + GAST
//   A2   = IFE + DSFE            A3 = IFE
//   A4   = full with the IFE's RSSGs replaced by residual conv groups

#include <random>
#include <string>
#include <vector>

#include "mrf/model/config.hpp"
#include "mrf/model/gast.hpp"
#include "mrf/ssm/residual_blocks.hpp"
#include "mrf/tensor/serialize.hpp"

namespace mrf::model {

enum class Variant { kFull, kA1, kA2, kA3, kA4 };

inline Variant parse_variant(const std::string& name) {
    if (name == "full") return Variant::kFull;
    if (name == "A1") return Variant::kA1;
    if (name == "A2") return Variant::kA2;
    if (name == "A3") return Variant::kA3;
    if (name == "A4") return Variant::kA4;
    throw ConfigError("unknown variant '" + name + "' (expected full, A1, A2, A3 or A4)");
}

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::kFull: return "full";
        case Variant::kA1: return "A1";
        case Variant::kA2: return "A2";
        case Variant::kA3: return "A3";
        case Variant::kA4: return "A4";
    }
    return "full";
}

inline bool has_gast(Variant v) { return v == Variant::kFull || v == Variant::kA1 || v == Variant::kA4; }
inline bool has_dsfe(Variant v) { return v == Variant::kFull || v == Variant::kA2 || v == Variant::kA4; }

/// Input conv, residual groups (state-space or convolutional), output 1×1
/// projection, and an optional outer residual.
template <class T>
struct Encoder {
    Tensor<T> w_embed, b_embed;
    std::vector<ssm::Rssg<T>> groups;
    std::vector<ssm::ConvGroup<T>> conv_groups;
    Tensor<T> w_proj, b_proj;
    bool outer_residual = false;

    static Encoder init(std::size_t in_c, std::size_t out_c, std::size_t embed_kernel, const EncoderConfig& cfg,
                        bool convolutional, bool outer_residual, std::mt19937_64& rng) {
        Encoder e;
        e.w_embed = init::conv_weight<T>(cfg.embed, in_c, embed_kernel, rng);
        e.b_embed = Tensor<T>::zeros({cfg.embed});
        for (std::size_t i = 0; i < cfg.rssg_count; ++i) {
            if (convolutional) {
                e.conv_groups.push_back(ssm::init_conv_group<T>(cfg.embed, cfg.rssb_per_group, rng));
            } else {
                e.groups.push_back(ssm::init_rssg<T>(cfg.ss2d(), cfg.rssb_per_group, rng));
            }
        }
        e.w_proj = init::conv_weight<T>(out_c, cfg.embed, 1, rng);
        e.b_proj = Tensor<T>::zeros({out_c});
        e.outer_residual = outer_residual;
        return e;
    }

    std::size_t in_channels() const { return w_embed.dim(1); }

    Tensor<T> embed(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != in_channels()) {
            throw DataError("encoder: expected " + std::to_string(in_channels()) + " input channels, got " +
                            shape_str(x.shape()));
        }
        return ops::conv2d(x, w_embed, b_embed);
    }

    Tensor<T> body(const Tensor<T>& h) const {
        Tensor<T> y = h;
        for (const auto& g : groups) y = g.forward(y);
        for (const auto& g : conv_groups) y = g.forward(y);
        return y;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        auto y = ops::conv2d(body(embed(x)), w_proj, b_proj);
        return outer_residual ? ops::add(x, y) : y;
    }

    ParameterSet<T> parameters() const {
        ParameterSet<T> ps;
        ps.add("w_embed", w_embed);
        ps.add("b_embed", b_embed);
        for (std::size_t i = 0; i < groups.size(); ++i) ps.append("rssg" + std::to_string(i), groups[i].parameters());
        for (std::size_t i = 0; i < conv_groups.size(); ++i) {
            ps.append("convgroup" + std::to_string(i), conv_groups[i].parameters());
        }
        ps.add("w_proj", w_proj);
        ps.add("b_proj", b_proj);
        return ps;
    }
};

template <class T>
struct Head {
    Tensor<T> w_skip, b_skip;  // [64, 2r, 3, 3], [64]
    Tensor<T> beta;            // [1]
    Tensor<T> w_out, b_out;    // [2, 64, 1, 1], [2]

    static Head init(std::size_t in_c, std::size_t latent, std::size_t out_c, std::mt19937_64& rng) {
        return {init::conv_weight<T>(latent, in_c, 3, rng), Tensor<T>::zeros({latent}), Tensor<T>::full({1}, T(0.5)),
                init::conv_weight<T>(out_c, latent, 1, rng), Tensor<T>::zeros({out_c})};
    }

    Tensor<T> skip(const Tensor<T>& x) const { return ops::conv2d(x, w_skip, b_skip); }

    Tensor<T> blended(const Tensor<T>& x_raw, const Tensor<T>& f_deep) const {
        return ops::add(ops::scale(skip(x_raw), beta), ops::scale(f_deep, ops::affine(beta, T(-1), T(1))));
    }

    Tensor<T> forward(const Tensor<T>& x_raw, const Tensor<T>& f_deep) const {
        return ops::conv2d(blended(x_raw, f_deep), w_out, b_out);
    }

    ParameterSet<T> parameters() const {
        ParameterSet<T> ps;
        ps.add("w_skip", w_skip);
        ps.add("b_skip", b_skip);
        ps.add("beta", beta);
        ps.add("w_out", w_out);
        ps.add("b_out", b_out);
        return ps;
    }
};

template <class T>
struct Network {
    Variant variant = Variant::kFull;
    GastConfig config;
    Encoder<T> ife;
    std::vector<GastBlock<T>> gast;
    Encoder<T> dsfe;
    Head<T> head;

    /// Each component draws from its own stream seeded by (seed, component),
    /// so variants built with one seed share the weights of common parts.
    static Network build(Variant v, const GastConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        auto stream = [seed](std::uint64_t component) {
            std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                              static_cast<std::uint32_t>(component)};
            return std::mt19937_64(seq);
        };
        Network n;
        n.variant = v;
        n.config = cfg;
        auto r_ife = stream(0);
        n.ife = Encoder<T>::init(cfg.in_channels, cfg.latent_channels, 3, cfg.ife, v == Variant::kA4, false, r_ife);
        if (has_gast(v)) {
            auto r_gast = stream(1);
            for (std::size_t i = 0; i < cfg.gast.block_count; ++i) {
                n.gast.push_back(GastBlock<T>::init(cfg.latent_channels, cfg.gast, r_gast));
            }
        }
        if (has_dsfe(v)) {
            auto r_dsfe = stream(2);
            n.dsfe = Encoder<T>::init(cfg.latent_channels, cfg.latent_channels, 1, cfg.dsfe, false, true, r_dsfe);
        }
        auto r_head = stream(3);
        n.head = Head<T>::init(cfg.in_channels, cfg.latent_channels, cfg.out_channels, r_head);
        return n;
    }

    bool uses_dsfe() const { return has_dsfe(variant); }

    Tensor<T> latent(const Tensor<T>& x) const { return ife.forward(x); }

    Tensor<T> gast_forward(const Tensor<T>& f) const {
        Tensor<T> y = f;
        for (const auto& g : gast) y = g.forward(y);
        return y;
    }

    Tensor<T> deep(const Tensor<T>& x) const {
        auto f = gast_forward(latent(x));
        return uses_dsfe() ? dsfe.forward(f) : f;
    }

    /// x[B, 2r, H, W] -> standardized (T1, T2) maps [B, 2, H, W].
    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != config.in_channels) {
            throw DataError("network: expected [B," + std::to_string(config.in_channels) + ",H,W] input, got " +
                            shape_str(x.shape()));
        }
        return head.forward(x, deep(x));
    }

    ParameterSet<T> parameters() const {
        ParameterSet<T> ps;
        ps.append("ife", ife.parameters());
        for (std::size_t i = 0; i < gast.size(); ++i) ps.append("gast" + std::to_string(i), gast[i].parameters());
        if (uses_dsfe()) ps.append("dsfe", dsfe.parameters());
        ps.append("head", head.parameters());
        return ps;
    }
};

/// Writes every named parameter as a table entry.
template <class T>
void save_parameters(const std::string& path, const ParameterSet<T>& ps) {
    std::vector<std::pair<std::string, Tensor<T>>> entries;
    for (const auto& p : ps) entries.emplace_back(p.name, p.tensor);
    io::save_table<T>(path, entries);
}

/// Copies a saved table into `ps`; names and shapes must match exactly.
template <class T>
void load_parameters(const std::string& path, ParameterSet<T>& ps) {
    auto table = io::load_table<T>(path);
    if (table.size() != ps.size()) {
        throw DataError("checkpoint has " + std::to_string(table.size()) + " parameters, model " +
                        std::to_string(ps.size()));
    }
    for (std::size_t i = 0; i < table.size(); ++i) {
        auto& p = ps[i];
        if (table[i].first != p.name) throw DataError("checkpoint parameter '" + table[i].first + "' where '" + p.name + "' expected");
        if (table[i].second.shape != p.tensor.shape()) throw DataError("checkpoint shape mismatch for " + p.name);
        auto dst = p.tensor.mutable_data();
        std::copy(table[i].second.values.begin(), table[i].second.values.end(), dst.begin());
    }
}

}  // namespace mrf::model
