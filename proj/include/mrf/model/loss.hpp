#pragma once

// Masked training loss with an epoch-dependent T1 weight:
//   L = w(e)·[MSE(T1) + α·L1(T1)] + [MSE(T2) + α·L1(T2)]
//   w(e) = w_start + (w_end − w_start)·(e − 1)/(epochs − 1)

#include <span>
#include <string>

#include "mrf/model/config.hpp"
#include "mrf/tensor/ops.hpp"

namespace mrf::model {

inline double t1_weight(std::size_t epoch, const TrainConfig& cfg) {
    if (epoch < 1 || epoch > cfg.epochs) {
        throw ConfigError("t1_weight: epoch " + std::to_string(epoch) + " outside [1, " + std::to_string(cfg.epochs) + "]");
    }
    if (cfg.epochs == 1) return cfg.w_start;
    const double f = static_cast<double>(epoch - 1) / static_cast<double>(cfg.epochs - 1);
    return cfg.w_start + (cfg.w_end - cfg.w_start) * f;
}

/// MSE + α·L1 of one output channel over mask weights [B·H·W].
template <class T>
Tensor<T> channel_loss(const Tensor<T>& pred, const Tensor<T>& target, std::size_t c, std::span<const T> mask,
                       double l1_weight) {
    const auto diff = ops::sub(ops::select_channel(pred, c), ops::select_channel(target, c));
    const auto mse = ops::weighted_mean(ops::square(diff), mask);
    const auto l1 = ops::weighted_mean(ops::abs(diff), mask);
    return ops::add(mse, ops::affine(l1, static_cast<T>(l1_weight), T(0)));
}

/// pred, target: [B,2,H,W]; mask: B·H·W weights (1 = tissue).
template <class T>
Tensor<T> loss_total(const Tensor<T>& pred, const Tensor<T>& target, std::span<const T> mask, std::size_t epoch,
                     const TrainConfig& cfg) {
    if (pred.shape() != target.shape()) throw DataError("loss: prediction and target shapes differ");
    if (pred.rank() != 4 || pred.dim(1) != 2) throw DataError("loss: expected [B,2,H,W], got " + shape_str(pred.shape()));
    const double w = t1_weight(epoch, cfg);
    const auto l_t1 = channel_loss(pred, target, 0, mask, cfg.l1_weight);
    const auto l_t2 = channel_loss(pred, target, 1, mask, cfg.l1_weight);
    return ops::add(ops::affine(l_t1, static_cast<T>(w), T(0)), l_t2);
}

}  // namespace mrf::model
