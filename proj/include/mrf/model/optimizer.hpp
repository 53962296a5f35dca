#pragma once

// AdamW with decoupled weight decay and a step-decay learning-rate schedule.

#include <cmath>
#include <string>
#include <vector>

#include "mrf/model/config.hpp"
#include "mrf/tensor/tensor.hpp"

namespace mrf::model {

/// lr · γ^(number of milestones already passed). Epochs are 1-based; a
/// milestone m takes effect from epoch m + 1, i.e. after m full epochs.
inline double scheduled_lr(std::size_t epoch, const TrainConfig& cfg) {
    std::size_t passed = 0;
    for (auto m : cfg.milestones) passed += m < epoch ? 1 : 0;
    return cfg.lr * std::pow(cfg.gamma, static_cast<double>(passed));
}

template <class T>
class AdamW {
public:
    AdamW(ParameterSet<T> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            m_.emplace_back(p.tensor.numel(), 0.0);
            v_.emplace_back(p.tensor.numel(), 0.0);
        }
    }

    /// One update at learning rate `lr` from the accumulated gradients.
    void step(double lr) {
        ++steps_;
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& t = params_[i].tensor;
            auto w = t.mutable_data();
            const bool has = t.has_grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double g = has ? static_cast<double>(t.grad()[j]) : 0.0;
                double x = static_cast<double>(w[j]);
                x -= lr * cfg_.weight_decay * x;
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                x -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.adam_eps);
                w[j] = static_cast<T>(x);
            }
        }
    }

    void zero_grad() { params_.zero_grad(); }

    std::size_t steps() const { return steps_; }
    void set_steps(std::size_t s) { steps_ = s; }
    const ParameterSet<T>& parameters() const { return params_; }
    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

private:
    ParameterSet<T> params_;
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t steps_ = 0;
};

}  // namespace mrf::model
