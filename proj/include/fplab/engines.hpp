// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0
//
// Rollout and trainer engines. Both evaluate the same master weights; they
// differ only in float format, reduction order and scoring loop, which is
// enough to make their probabilities disagree under 16-bit formats.

#pragma once

#include "fplab/numerics.hpp"
#include "fplab/policy.hpp"
#include "fplab/rng.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fplab {

enum class ScoringMode { Autoregressive, Parallel };

inline std::string_view to_string(ScoringMode m) { return m == ScoringMode::Autoregressive ? "autoregressive" : "parallel"; }

inline ScoringMode parse_scoring_mode(std::string_view s) {
    if (s == "autoregressive") return ScoringMode::Autoregressive;
    if (s == "parallel") return ScoringMode::Parallel;
    throw std::invalid_argument("unknown scoring mode '" + std::string(s) + "' (expected autoregressive or parallel)");
}

struct EngineSpec {
    FloatFormat format = formats::fp32();
    ReductionOrder order = ReductionOrder::Sequential;
    ScoringMode mode = ScoringMode::Autoregressive;
    /// Injected mismatch: magnitude of a deterministic, context-keyed logit
    /// offset. Zero for a faithful engine.
    double logit_perturbation = 0.0;
    std::uint64_t perturbation_key = 0;

    friend bool operator==(const EngineSpec& a, const EngineSpec& b) {
        return a.format == b.format && a.order == b.order && a.mode == b.mode &&
               a.logit_perturbation == b.logit_perturbation && a.perturbation_key == b.perturbation_key;
    }
};

struct EnginePair {
    EngineSpec rollout;
    EngineSpec trainer;

    /// Generation folds sums left to right token by token; the trainer scores
    /// all positions at once with tree reductions.
    static EnginePair divergent(const FloatFormat& rollout_format, const FloatFormat& trainer_format) {
        return {{rollout_format, ReductionOrder::Sequential, ScoringMode::Autoregressive},
                {trainer_format, ReductionOrder::Pairwise, ScoringMode::Parallel}};
    }
    static EnginePair divergent(const FloatFormat& f) { return divergent(f, f); }
    static EnginePair identical(const EngineSpec& spec) { return {spec, spec}; }

    friend bool operator==(const EnginePair&, const EnginePair&) = default;
};

inline std::string describe(const EngineSpec& s) {
    std::string out = s.format.name + "/" + std::string(to_string(s.order)) + "/" + std::string(to_string(s.mode));
    if (s.logit_perturbation != 0.0) out += "/perturb=" + std::to_string(s.logit_perturbation);
    return out;
}

struct Trajectory {
    std::vector<int> prompt;
    std::size_t task_index = 0;
    std::vector<int> tokens;
    std::vector<double> rollout_logprobs;
    double reward = 0.0;
    std::size_t group_id = 0;
    std::size_t renormalize_events = 0;
    bool overflow = false;

    [[nodiscard]] std::size_t length() const noexcept { return tokens.size(); }
};

/// Scoring-pass bookkeeping. One "pass" scores every token of one trajectory.
struct PassCounter {
    std::atomic<std::uint64_t> rollout_generations{0};
    std::atomic<std::uint64_t> trainer_current{0}; ///< pi_train(.|theta) passes
    std::atomic<std::uint64_t> trainer_old{0};     ///< dedicated pi_train(.|theta') passes
    std::atomic<std::uint64_t> diagnostic{0};

    void reset() noexcept {
        rollout_generations = 0;
        trainer_current = 0;
        trainer_old = 0;
        diagnostic = 0;
    }
};

/// An EngineSpec bound to one parameter set (weights quantized once).
class Engine {
public:
    Engine(EngineSpec spec, const PolicyParams& params) : spec_(std::move(spec)), eval_(params, spec_.format, spec_.order) {}

    [[nodiscard]] const EngineSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] const PolicyConfig& config() const noexcept { return eval_.config(); }

    [[nodiscard]] TokenDistribution distribution(std::span<const int> window) const {
        auto fwd = eval_.logits(window);
        if (spec_.logit_perturbation != 0.0) perturb(window, fwd.logits);
        auto dist = log_softmax(spec_.format, spec_.order, fwd.logits);
        dist.overflow = dist.overflow || fwd.overflow;
        return dist;
    }

    /// Offset in [-1, 1] keyed by (engine key, window, token).
    [[nodiscard]] static double perturbation_unit(std::uint64_t key, std::span<const int> window, int token) noexcept {
        std::uint64_t h = splitmix64(key ^ 0x7065727475726221ull);
        for (int w : window) h = splitmix64(h ^ static_cast<std::uint64_t>(w + 1));
        h = splitmix64(h ^ (static_cast<std::uint64_t>(token) << 32));
        return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
    }

private:
    void perturb(std::span<const int> window, std::vector<double>& logits) const {
        for (std::size_t v = 0; v < logits.size(); ++v) {
            const double off = spec_.logit_perturbation * perturbation_unit(spec_.perturbation_key, window, static_cast<int>(v));
            logits[v] = qadd(spec_.format, logits[v], quantize(spec_.format, off));
        }
    }

    EngineSpec spec_;
    PolicyEvaluator eval_;
};

/// Autoregressive generation under one engine. Stops after max_len tokens
/// or right after emitting `eos`.
inline Trajectory generate(const Engine& engine, std::span<const int> prompt, std::size_t max_len, CounterRng& rng,
                           std::optional<int> eos = std::nullopt) {
    const auto& cfg = engine.config();
    check_tokens(cfg, prompt, true);
    Trajectory traj;
    traj.prompt.assign(prompt.begin(), prompt.end());
    traj.tokens.reserve(max_len);
    traj.rollout_logprobs.reserve(max_len);
    for (std::size_t t = 0; t < max_len; ++t) {
        const auto dist = engine.distribution(context_window(cfg, prompt, traj.tokens, t));
        const auto s = sample_from(engine.spec().format, engine.spec().order, dist.probs, rng);
        traj.tokens.push_back(s.token);
        traj.rollout_logprobs.push_back(dist.logprobs[static_cast<std::size_t>(s.token)]);
        traj.renormalize_events += s.renormalized ? 1 : 0;
        traj.overflow = traj.overflow || dist.overflow;
        if (eos && s.token == *eos) break;
    }
    return traj;
}

/// Sample y ~ pi_rollout(.|x, theta') and record the rollout engine's own
/// per-token log-probabilities.
inline Trajectory rollout(const EnginePair& pair, const PolicyParams& theta_prime, std::span<const int> prompt, std::size_t max_len,
                          CounterRng& rng, std::optional<int> eos = std::nullopt) {
    return generate(Engine(pair.rollout, theta_prime), prompt, max_len, rng, eos);
}

/// Per-token log-probabilities of the trajectory's tokens under `engine`.
inline std::vector<double> score(const Engine& engine, const Trajectory& traj) {
    const auto& cfg = engine.config();
    if (traj.rollout_logprobs.size() != traj.tokens.size())
        throw std::invalid_argument("trajectory has " + std::to_string(traj.tokens.size()) + " tokens but " +
                                    std::to_string(traj.rollout_logprobs.size()) + " rollout log-probabilities");
    check_tokens(cfg, traj.prompt, true);
    check_tokens(cfg, traj.tokens, false);
    const std::size_t L = traj.tokens.size();
    std::vector<double> out(L);
    if (engine.spec().mode == ScoringMode::Autoregressive) {
        for (std::size_t t = 0; t < L; ++t)
            out[t] = engine.distribution(context_window(cfg, traj.prompt, traj.tokens, t)).logprobs[static_cast<std::size_t>(traj.tokens[t])];
        return out;
    }
    // Parallel: materialise every position's window first, then evaluate.
    std::vector<std::vector<int>> windows;
    windows.reserve(L);
    for (std::size_t t = 0; t < L; ++t) windows.push_back(context_window(cfg, traj.prompt, traj.tokens, t));
    for (std::size_t t = 0; t < L; ++t) out[t] = engine.distribution(windows[t]).logprobs[static_cast<std::size_t>(traj.tokens[t])];
    return out;
}

inline std::vector<double> score(const EngineSpec& spec, const PolicyParams& params, const Trajectory& traj) {
    return score(Engine(spec, params), traj);
}

/// sum_t (trainer[t] - rollout[t]) in double.
inline double sequence_log_ratio(std::span<const double> trainer, std::span<const double> rollout) {
    if (trainer.size() != rollout.size()) throw std::invalid_argument("log-ratio inputs differ in length");
    double s = 0.0;
    for (std::size_t t = 0; t < trainer.size(); ++t) s += trainer[t] - rollout[t];
    return s;
}

} // namespace fplab
