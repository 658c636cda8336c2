// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared instances for the unit tests and the acceptance runner.
#pragma once

#include "fplab/estimators.hpp"
#include "fplab/rng.hpp"
#include "support/bit_oracle.hpp"
#include "support/reference_policy.hpp"

#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace fixtures {

using namespace fplab;

/// Random finite double spread over [2^lo, 2^hi) with a full 52-bit mantissa.
inline double random_real(CounterRng& rng, int lo, int hi) {
    const int e = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo)));
    const double m = 1.0 + static_cast<double>(rng.next_u64() >> 12) * 0x1.0p-52;
    const double v = std::ldexp(m, e);
    return (rng.next_u64() & 1) ? -v : v;
}

/// Exact midpoint between two adjacent grid values of `layout`.
inline double random_tie(CounterRng& rng, oracle::Layout layout, int lo, int hi) {
    const int e = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo)));
    const auto k = rng.below(std::uint64_t{1} << layout.man_bits);
    const double m = 1.0 + (static_cast<double>(k) + 0.5) * std::ldexp(1.0, -layout.man_bits);
    return std::ldexp(m, e);
}


inline std::vector<int> random_tokens(CounterRng& rng, int V, std::size_t n) {
    std::vector<int> out(n);
    for (auto& t : out) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(V)));
    return out;
}


inline double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

/// Random grouped batch sampled from the rollout engine at theta'.
inline std::vector<Trajectory> make_batch(const EnginePair& pair, const PolicyParams& theta_prime, std::uint64_t seed, int groups, int G) {
    CounterRng rng({seed, 1});
    std::vector<Trajectory> batch;
    for (int g = 0; g < groups; ++g) {
        const std::vector<int> prompt{static_cast<int>(rng.below(8)), static_cast<int>(rng.below(8))};
        const std::size_t len = 1 + rng.below(6);
        for (int i = 0; i < G; ++i) {
            CounterRng r({seed, 2, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(i)});
            auto t = rollout(pair, theta_prime, prompt, len, r);
            t.group_id = static_cast<std::size_t>(g);
            t.reward = rng.uniform() < 0.5 ? 1.0 : 0.0;
            batch.push_back(std::move(t));
        }
    }
    return batch;
}

/// Fully enumerable instance: V = 2, L = 2, fixed prompt, fp64 engines with
/// an injected logit offset on the rollout side.
struct Enumerable {
    PolicyConfig cfg{2, 2, 3, 4};
    PolicyParams theta = PolicyParams::random(cfg, 41, 1.5);
    std::vector<int> prompt{0, 1};
    EnginePair engines;
    std::vector<std::vector<int>> seqs{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    std::vector<double> rewards{0.2, 1.0, -0.5, 0.7};
    std::vector<Trajectory> trajs;
    std::vector<std::vector<double>> trainer;
    std::vector<double> mu, pi;

    explicit Enumerable(double perturbation) {
        const EngineSpec exact{formats::fp64(), ReductionOrder::Sequential, ScoringMode::Parallel};
        EngineSpec skewed = exact;
        skewed.logit_perturbation = perturbation;
        skewed.perturbation_key = 5;
        engines = {skewed, exact};
        for (const auto& y : seqs) {
            Trajectory t;
            t.prompt = prompt;
            t.tokens = y;
            t.rollout_logprobs.assign(y.size(), 0.0);
            t.rollout_logprobs = score(engines.rollout, theta, t);
            trainer.push_back(score(engines.trainer, theta, t));
            mu.push_back(std::exp(t.rollout_logprobs[0] + t.rollout_logprobs[1]));
            pi.push_back(std::exp(trainer.back()[0] + trainer.back()[1]));
            trajs.push_back(std::move(t));
        }
    }

    [[nodiscard]] double ratio(std::size_t i) const { return std::exp(sequence_log_ratio(trainer[i], trajs[i].rollout_logprobs)); }

    /// Expectation of the estimator under the rollout distribution, by enumeration.
    [[nodiscard]] std::vector<double> expectation(EstimatorKind kind, double C = 3.0) const {
        EstimatorConfig ec;
        ec.kind = kind;
        ec.clip_c = C;
        std::vector<double> out(theta.size(), 0.0);
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            const std::vector<double> adv{rewards[i]};
            const auto g = estimate_gradient(ec, theta, {std::span(&trajs[i], 1), adv, std::span(&trainer[i], 1), {}});
            for (std::size_t j = 0; j < out.size(); ++j) out[j] += mu[i] * g.grad[j];
        }
        return out;
    }

    /// Gradient of sum_{y in keep} pi_train(y) R(y) by a five-point stencil on
    /// the long double reference forward pass.
    [[nodiscard]] std::vector<double> true_gradient(const std::vector<bool>& keep) const {
        auto objective = [&](const PolicyParams& p) {
            long double J = 0.0L;
            for (std::size_t i = 0; i < seqs.size(); ++i) {
                if (!keep[i]) continue;
                const auto lp = reference::sequence_logprob(p, prompt, seqs[i]);
                J += std::exp(lp[0] + lp[1]) * rewards[i];
            }
            return J;
        };
        const long double h = 1e-3L;
        std::vector<double> g(theta.size());
        for (std::size_t j = 0; j < theta.size(); ++j) {
            auto at = [&](long double off) {
                auto p = theta;
                p.flat()[j] = static_cast<double>(static_cast<long double>(p.flat()[j]) + off);
                return objective(p);
            };
            g[j] = static_cast<double>((-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h));
        }
        return g;
    }
    [[nodiscard]] std::vector<double> true_gradient() const { return true_gradient(std::vector<bool>(seqs.size(), true)); }

    /// E_mu[(c R)^2 |grad log pi|^2] for a per-trajectory coefficient function.
    [[nodiscard]] double second_moment(const std::function<double(double)>& coef) const {
        double s = 0.0;
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            const auto g = logprob_gradient(theta, prompt, seqs[i], std::vector<double>{1.0, 1.0});
            const double c = coef(ratio(i)) * rewards[i];
            s += mu[i] * c * c * norm(g) * norm(g);
        }
        return s;
    }
};

} // namespace fixtures
