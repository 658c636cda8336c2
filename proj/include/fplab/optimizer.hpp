// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fplab {

enum class OptimizerKind { Momentum, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Momentum;
    double learning_rate = 1e-2;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double epsilon = 1e-8;

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("optimizer.lr must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("optimizer.momentum must be in [0, 1)");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw std::invalid_argument("optimizer betas must be in [0, 1)");
    }
};

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
    if (s == "momentum" || s == "sgd") return OptimizerKind::Momentum;
    if (s == "adam") return OptimizerKind::Adam;
    throw std::invalid_argument("unknown optimizer '" + s + "' (expected momentum or adam)");
}

/// Gradient ascent on full-precision master weights.
class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(cfg.kind == OptimizerKind::Adam ? n : 0, 0.0) {
        cfg_.validate();
    }

    void ascend(std::span<double> params, std::span<const double> grad) {
        if (params.size() != m_.size() || grad.size() != m_.size()) throw std::invalid_argument("optimizer size mismatch");
        ++steps_;
        if (cfg_.kind == OptimizerKind::Momentum) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i] = cfg_.momentum * m_[i] + grad[i];
                params[i] += cfg_.learning_rate * m_[i];
            }
            return;
        }
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            params[i] += cfg_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.epsilon);
        }
    }

    [[nodiscard]] long steps() const noexcept { return steps_; }

private:
    OptimizerConfig cfg_;
    std::vector<double> m_, v_;
    long steps_ = 0;
};

} // namespace fplab
