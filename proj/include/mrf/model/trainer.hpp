#pragma once

// Epoch loop: shuffled mini-batches, AdamW with step-decay lr, per-epoch
// validation, and a snapshot of the best-validation parameters.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mrf/model/loss.hpp"
#include "mrf/model/metrics.hpp"
#include "mrf/model/network.hpp"
#include "mrf/model/optimizer.hpp"
#include "mrf/phantom/phantom.hpp"

namespace mrf::model {

/// Network inputs [2r,H,W] with their ground-truth maps.
struct TrainData {
    std::vector<Tensor<double>> inputs;
    std::vector<TissueMap> maps;
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

/// Seeded shuffle; round(n·val_fraction) samples (at least 1) go to validation.
inline Split split_indices(std::size_t n, double val_fraction, std::uint64_t seed) {
    if (n < 2) throw DataError("split: need at least 2 samples");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(n))),
                                               1, n - 1);
    Split s;
    s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::sort(s.val.begin(), s.val.end());
    return s;
}

/// 1 / RMS of all input values of the given samples.
inline double input_scale(const TrainData& data, const std::vector<std::size_t>& idx) {
    double ss = 0.0;
    std::size_t n = 0;
    for (auto i : idx) {
        for (double v : data.inputs[i].data()) ss += v * v;
        n += data.inputs[i].numel();
    }
    if (!(ss > 0.0)) throw NumericError("input_scale: inputs are identically zero");
    return 1.0 / std::sqrt(ss / static_cast<double>(n));
}

/// Normalisation applied to inputs and targets.
struct Normalization {
    double input_scale = 1.0;
    TargetStats targets;
};

template <class T>
struct Batch {
    Tensor<T> input;    // [B,2r,H,W]
    Tensor<T> target;   // [B,2,H,W], standardized, 0 in background
    std::vector<T> mask;  // B·H·W
};

/// Source pixel for output pixel (r, c) under dihedral transform `code`:
/// bit 2 transposes (square images only), bit 0 flips rows, bit 1 flips columns.
inline std::size_t dihedral_source(unsigned code, std::size_t r, std::size_t c, std::size_t h, std::size_t w) {
    if (code & 4u) std::swap(r, c);
    if (code & 1u) r = h - 1 - r;
    if (code & 2u) c = w - 1 - c;
    return r * w + c;
}

/// `transforms`, when non-empty, holds one dihedral code per sample.
template <class T>
Batch<T> make_batch(const TrainData& data, const std::vector<std::size_t>& idx, const Normalization& norm,
                    const std::vector<unsigned>& transforms = {}) {
    const auto& first = data.inputs.at(idx.at(0));
    const std::size_t c = first.dim(0), h = first.dim(1), w = first.dim(2), hw = h * w, b = idx.size();
    std::vector<T> in(b * c * hw), tg(b * 2 * hw, T(0)), mk(b * hw, T(0));
    for (std::size_t k = 0; k < b; ++k) {
        const auto& x = data.inputs[idx[k]];
        const auto& m = data.maps[idx[k]];
        if (x.shape() != first.shape() || m.rows() != h || m.cols() != w) throw DataError("batch: sample shapes differ");
        const unsigned code = transforms.empty() ? 0u : transforms[k];
        if ((code & 4u) && h != w) throw DataError("batch: transpose needs square samples");
        std::vector<std::size_t> src(hw);
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t q = 0; q < w; ++q) src[r * w + q] = dihedral_source(code, r, q, h, w);
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < hw; ++i) in[(k * c + ch) * hw + i] = static_cast<T>(x[ch * hw + src[i]] * norm.input_scale);
        }
        for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t j = src[i];
            if (!m.mask.values[j]) continue;
            mk[k * hw + i] = T(1);
            tg[(k * 2) * hw + i] = static_cast<T>(standardize(m.t1.values[j], norm.targets.mean_t1, norm.targets.std_t1));
            tg[(k * 2 + 1) * hw + i] = static_cast<T>(standardize(m.t2.values[j], norm.targets.mean_t2, norm.targets.std_t2));
        }
    }
    return {Tensor<T>({b, c, h, w}, std::move(in)), Tensor<T>({b, 2, h, w}, std::move(tg)), std::move(mk)};
}

struct PredictedMaps {
    Grid<double> t1;
    Grid<double> t2;
};

/// De-standardized (T1, T2) maps for one input [2r,H,W]; background set to 0.
template <class T>
PredictedMaps predict(const Network<T>& net, const Tensor<double>& input, const Grid<std::uint8_t>& mask,
                      const Normalization& norm) {
    NoGradGuard guard;
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2), hw = h * w;
    std::vector<T> in(input.numel());
    for (std::size_t i = 0; i < in.size(); ++i) in[i] = static_cast<T>(input[i] * norm.input_scale);
    const auto y = net.forward(Tensor<T>({1, c, h, w}, std::move(in)));
    PredictedMaps p{Grid<double>(h, w), Grid<double>(h, w)};
    for (std::size_t i = 0; i < hw; ++i) {
        if (!mask.values[i]) continue;
        p.t1.values[i] = destandardize(static_cast<double>(y[i]), norm.targets.mean_t1, norm.targets.std_t1);
        p.t2.values[i] = destandardize(static_cast<double>(y[hw + i]), norm.targets.mean_t2, norm.targets.std_t2);
    }
    return p;
}

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;
    double w_e = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_psnr_t1 = 0.0;
    double val_psnr_t2 = 0.0;
    double val_ssim_t1 = 0.0;
    double val_ssim_t2 = 0.0;
};

template <class T>
class Trainer {
public:
    Trainer(Network<T>& net, const TrainData& data, const TrainConfig& cfg)
        : net_(net), data_(data), cfg_(cfg), opt_(net.parameters(), cfg) {
        cfg_.validate();
        if (data.inputs.size() != data.maps.size()) throw DataError("trainer: inputs and maps differ in count");
        split_ = split_indices(data.inputs.size(), cfg.val_fraction, cfg.seed);
        std::vector<TissueMap> train_maps;
        for (auto i : split_.train) train_maps.push_back(data.maps[i]);
        norm_.targets = standardize_targets(train_maps);
        norm_.input_scale = input_scale(data, split_.train);
    }

    const Split& split() const { return split_; }
    const Normalization& normalization() const { return norm_; }
    AdamW<T>& optimizer() { return opt_; }
    std::size_t epochs_done() const { return epochs_done_; }
    void set_epochs_done(std::size_t e) { epochs_done_ = e; }

    /// Mean loss, PSNR and SSIM over the validation split at epoch weight w(e).
    EpochLog validate(std::size_t epoch) const {
        NoGradGuard guard;
        EpochLog log;
        log.epoch = epoch;
        for (auto i : split_.val) {
            const auto b = make_batch<T>(data_, {i}, norm_);
            log.val_loss += static_cast<double>(loss_total(net_.forward(b.input), b.target, std::span<const T>(b.mask), epoch, cfg_).item());
            const auto p = predict(net_, data_.inputs[i], data_.maps[i].mask, norm_);
            const auto& m = data_.maps[i];
            log.val_psnr_t1 += masked_psnr(p.t1, m.t1, m.mask);
            log.val_psnr_t2 += masked_psnr(p.t2, m.t2, m.mask);
            log.val_ssim_t1 += masked_ssim(p.t1, m.t1, m.mask);
            log.val_ssim_t2 += masked_ssim(p.t2, m.t2, m.mask);
        }
        const auto n = static_cast<double>(split_.val.size());
        log.val_loss /= n;
        log.val_psnr_t1 /= n;
        log.val_psnr_t2 /= n;
        log.val_ssim_t1 /= n;
        log.val_ssim_t2 /= n;
        return log;
    }

    /// Runs the next epoch and returns its log row.
    EpochLog run_epoch() {
        const std::size_t epoch = epochs_done_ + 1;
        if (epoch > cfg_.epochs) throw ConfigError("trainer: all epochs already run");
        const double lr = scheduled_lr(epoch, cfg_);
        std::vector<std::size_t> order = split_.train;
        std::mt19937_64 rng(cfg_.seed ^ (0x9E3779B97F4A7C15ULL * epoch));
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch) {
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg_.batch)));
            std::vector<unsigned> transforms;
            if (cfg_.augment) {
                const auto& x = data_.inputs[idx.front()];
                std::uniform_int_distribution<unsigned> pick(0u, x.dim(1) == x.dim(2) ? 7u : 3u);
                for (std::size_t k = 0; k < idx.size(); ++k) transforms.push_back(pick(rng));
            }
            const auto b = make_batch<T>(data_, idx, norm_, transforms);
            opt_.zero_grad();
            const auto loss = loss_total(net_.forward(b.input), b.target, std::span<const T>(b.mask), epoch, cfg_);
            const double v = static_cast<double>(loss.item());
            if (!std::isfinite(v)) {
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches) + " (lr " + std::to_string(lr) + ")");
            }
            loss.backward();
            opt_.step(lr);
            total += v;
            ++batches;
        }
        epochs_done_ = epoch;
        EpochLog log = validate(epoch);
        log.lr = lr;
        log.w_e = t1_weight(epoch, cfg_);
        log.train_loss = total / static_cast<double>(batches);
        return log;
    }

private:
    Network<T>& net_;
    const TrainData& data_;
    TrainConfig cfg_;
    AdamW<T> opt_;
    Split split_;
    Normalization norm_;
    std::size_t epochs_done_ = 0;
};

/// Copies of every parameter's values, in parameter order.
template <class T>
std::vector<std::vector<T>> snapshot(const ParameterSet<T>& ps) {
    std::vector<std::vector<T>> s;
    for (const auto& p : ps) s.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return s;
}

template <class T>
void restore(ParameterSet<T>& ps, const std::vector<std::vector<T>>& s) {
    if (s.size() != ps.size()) throw DataError("restore: snapshot size mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
        auto dst = ps[i].tensor.mutable_data();
        if (dst.size() != s[i].size()) throw DataError("restore: tensor size mismatch for " + ps[i].name);
        std::copy(s[i].begin(), s[i].end(), dst.begin());
    }
}

}  // namespace mrf::model
