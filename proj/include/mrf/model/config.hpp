#pragma once

// Network and training configuration.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "mrf/core/error.hpp"
#include "mrf/ssm/ss2d.hpp"

namespace mrf::model {

/// A stack of residual groups at a fixed embedding width.
struct EncoderConfig {
    std::size_t rssg_count = 3;
    std::size_t rssb_per_group = 2;
    std::size_t embed = 96;
    std::size_t state = 10;
    double expand = 1.2;

    ssm::Ss2dConfig ss2d() const { return {embed, state, expand}; }
    void validate(const char* name) const {
        const std::string n(name);
        if (rssg_count == 0 || rssb_per_group == 0) throw ConfigError(n + ": group and block counts must be >= 1");
        ss2d().validate();
    }
};

struct GastBlockConfig {
    std::size_t block_count = 2;
    std::vector<std::size_t> gate_kernel_sizes{1, 3, 5, 7};
    std::size_t mlp_expand = 4;

    void validate() const {
        if (gate_kernel_sizes.empty()) throw ConfigError("gast: gate_kernel_sizes must not be empty");
        for (auto k : gate_kernel_sizes) {
            if (k % 2 == 0) throw ConfigError("gast: gate kernel sizes must be odd, got " + std::to_string(k));
        }
        if (mlp_expand == 0) throw ConfigError("gast: mlp_expand must be >= 1");
    }
};

struct GastConfig {
    std::size_t in_channels = 20;
    EncoderConfig ife{3, 2, 96, 10, 1.2};
    GastBlockConfig gast{};
    EncoderConfig dsfe{4, 6, 64, 10, 1.2};
    std::size_t latent_channels = 64;
    std::size_t out_channels = 2;

    /// Reduced widths for single-core runs: embeds 16, state 4.
    static GastConfig desk(std::size_t in_channels) {
        GastConfig c;
        c.in_channels = in_channels;
        c.ife.embed = 16;
        c.ife.state = 4;
        c.dsfe.embed = 16;
        c.dsfe.state = 4;
        return c;
    }

    void validate() const {
        if (in_channels == 0) throw ConfigError("network: in_channels must be positive");
        if (latent_channels == 0) throw ConfigError("network: latent_channels must be positive");
        if (out_channels != 2) throw ConfigError("network: out_channels must be 2 (T1, T2)");
        ife.validate("ife");
        dsfe.validate("dsfe");
        gast.validate();
    }
};

struct TrainConfig {
    double lr = 5e-5;
    double weight_decay = 0.01;
    std::size_t batch = 2;
    std::size_t epochs = 100;
    std::vector<std::size_t> milestones{25, 50, 75, 90};
    double gamma = 0.5;
    double l1_weight = 0.2;
    double w_start = 1.5;
    double w_end = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double val_fraction = 0.1;
    bool augment = false;  // random flips/transposes of training samples
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
        if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be non-negative");
        if (batch == 0) throw ConfigError("train: batch must be >= 1");
        if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
        for (std::size_t i = 0; i < milestones.size(); ++i) {
            if (milestones[i] >= epochs) throw ConfigError("train: milestones must be < epochs");
            if (i > 0 && milestones[i] <= milestones[i - 1]) throw ConfigError("train: milestones must increase strictly");
        }
        if (!(gamma > 0.0)) throw ConfigError("train: gamma must be positive");
        if (l1_weight < 0.0) throw ConfigError("train: l1_weight must be non-negative");
        if (w_start < w_end) throw ConfigError("train: w_start must be >= w_end");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
        if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("train: val_fraction must lie in (0, 1)");
    }
};

}  // namespace mrf::model
