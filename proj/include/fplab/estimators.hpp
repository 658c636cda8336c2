// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0
//
// Policy-gradient estimators under a training/inference mismatch.
//
// Every estimator reduces to per-token weights c_t on a single backward pass:
//
//   grad = (1/N) * sum_i sum_t c_{i,t} * d log pi_train(y_{i,t} | ., theta) / d theta
//
// All ratios (w, r_t, rho_t, rho) are stop-gradient constants computed in
// double from per-token log-probabilities.

#pragma once

#include "fplab/engines.hpp"
#include "fplab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fplab {

enum class EstimatorKind { ReinforceNaive, PgSeqIs, PgSeqTis, PgSeqMis, DrGrpo, GrpoTokTis, GrpoSeqMis };

inline std::string_view to_string(EstimatorKind k) {
    switch (k) {
    case EstimatorKind::ReinforceNaive: return "reinforce_naive";
    case EstimatorKind::PgSeqIs: return "pg_seq_is";
    case EstimatorKind::PgSeqTis: return "pg_seq_tis";
    case EstimatorKind::PgSeqMis: return "pg_seq_mis";
    case EstimatorKind::DrGrpo: return "dr_grpo";
    case EstimatorKind::GrpoTokTis: return "grpo_tok_tis";
    case EstimatorKind::GrpoSeqMis: return "grpo_seq_mis";
    }
    return "?";
}

inline EstimatorKind parse_estimator_kind(std::string_view s) {
    for (auto k : {EstimatorKind::ReinforceNaive, EstimatorKind::PgSeqIs, EstimatorKind::PgSeqTis, EstimatorKind::PgSeqMis,
                   EstimatorKind::DrGrpo, EstimatorKind::GrpoTokTis, EstimatorKind::GrpoSeqMis})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown estimator '" + std::string(s) + "'");
}

inline bool is_grpo_family(EstimatorKind k) noexcept {
    return k == EstimatorKind::DrGrpo || k == EstimatorKind::GrpoTokTis || k == EstimatorKind::GrpoSeqMis;
}

/// GRPO-patch estimators that need a dedicated pi_train(.|theta') scoring pass.
inline bool needs_old_trainer_pass(EstimatorKind k) noexcept {
    return k == EstimatorKind::GrpoTokTis || k == EstimatorKind::GrpoSeqMis;
}

struct EstimatorConfig {
    EstimatorKind kind = EstimatorKind::PgSeqIs;
    double clip_c = 3.0;    ///< IS truncation / mask threshold C
    double eps_low = 0.2;   ///< PPO clip band [1 - eps_low, 1 + eps_high]
    double eps_high = 0.28;
    int group_size = 8;     ///< G

    void validate() const {
        if (!(clip_c > 0.0)) throw std::invalid_argument("estimator.clip must be > 0");
        if (!(eps_low > 0.0 && eps_low < 1.0)) throw std::invalid_argument("estimator.eps_low must be in (0, 1)");
        if (!(eps_high > 0.0)) throw std::invalid_argument("estimator.eps_high must be > 0");
        if (group_size < 2) throw std::invalid_argument("estimator.group_size must be >= 2");
    }
};

struct EstimatorStats {
    double clipped_fraction = 0.0;  ///< TIS truncation binds (per trajectory, or per token for token-TIS)
    double ppo_clip_fraction = 0.0; ///< PPO clip zeroes the token gradient (GRPO family)
    double masked_fraction = 0.0;   ///< MIS mask drops the trajectory
    double mean_seq_ratio = 1.0;
    double mean_token_ratio = 1.0;
    bool nan_flag = false;
    std::size_t dropped = 0;
};

struct GradientEstimate {
    std::vector<double> grad;
    EstimatorStats stats;
};

struct AdvantageSet {
    std::vector<double> advantages;
};

/// Leave-one-out baseline: A_i = R_i - (1/(G-1)) sum_{j != i} R_j.
inline AdvantageSet compute_advantages(std::span<const double> rewards) {
    const std::size_t G = rewards.size();
    if (G < 2) throw std::invalid_argument("advantages need a group of at least 2 rewards");
    double total = 0.0;
    for (double r : rewards) total += r;
    AdvantageSet out;
    out.advantages.reserve(G);
    for (double r : rewards) out.advantages.push_back(r - (total - r) / static_cast<double>(G - 1));
    return out;
}

/// Advantages for a batch whose trajectories are grouped by group_id.
inline std::vector<double> batch_advantages(std::span<const Trajectory> batch, int group_size) {
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < batch.size(); ++i) groups[batch[i].group_id].push_back(i);
    std::vector<double> adv(batch.size(), 0.0);
    for (const auto& [gid, members] : groups) {
        if (members.size() != static_cast<std::size_t>(group_size))
            throw std::invalid_argument("group " + std::to_string(gid) + " has " + std::to_string(members.size()) +
                                        " members, expected " + std::to_string(group_size));
        std::vector<double> rewards;
        for (auto i : members) rewards.push_back(batch[i].reward);
        const auto a = compute_advantages(rewards);
        for (std::size_t k = 0; k < members.size(); ++k) adv[members[k]] = a.advantages[k];
    }
    return adv;
}

/// Inputs for one gradient step. `trainer_current[i]` holds per-token
/// log pi_train(.|theta); `trainer_old[i]` holds log pi_train(.|theta') and is
/// only read by the GRPO family.
struct EstimatorInputs {
    std::span<const Trajectory> batch;
    std::span<const double> advantages;
    std::span<const std::vector<double>> trainer_current;
    std::span<const std::vector<double>> trainer_old;
};

struct BackwardConfig {
    double loss_scale = 1.0;
    std::optional<LowPrecisionBackward> low_precision;
};

/// Per-token coefficients of one trajectory plus the clip bookkeeping that
/// produced them.
struct TrajectoryWeights {
    std::vector<double> per_token;
    bool dropped = false;
    bool seq_clipped = false;
    bool seq_masked = false;
    std::size_t tokens_clipped = 0;     ///< token-level TIS truncations
    std::size_t tokens_ppo_clipped = 0;
    double seq_ratio = 1.0;
    double token_ratio_sum = 0.0;
};

inline TrajectoryWeights trajectory_weights(const EstimatorConfig& cfg, const Trajectory& traj, double advantage,
                                            std::span<const double> current, std::span<const double> old) {
    const std::size_t L = traj.tokens.size();
    if (current.size() != L) throw std::invalid_argument("trainer log-probabilities do not match trajectory length");
    TrajectoryWeights w;
    w.per_token.assign(L, 0.0);

    if (!is_grpo_family(cfg.kind)) {
        const double log_w = sequence_log_ratio(current, traj.rollout_logprobs);
        const double ratio = std::exp(log_w);
        w.seq_ratio = ratio;
        for (std::size_t t = 0; t < L; ++t) w.token_ratio_sum += std::exp(current[t] - traj.rollout_logprobs[t]);
        double coef = 1.0;
        switch (cfg.kind) {
        case EstimatorKind::ReinforceNaive: coef = 1.0; break;
        case EstimatorKind::PgSeqIs: coef = ratio; break;
        case EstimatorKind::PgSeqTis:
            w.seq_clipped = ratio > cfg.clip_c;
            coef = std::min(ratio, cfg.clip_c);
            break;
        case EstimatorKind::PgSeqMis:
            w.seq_masked = !(ratio <= cfg.clip_c);
            coef = w.seq_masked ? 0.0 : ratio;
            break;
        default: break;
        }
        if (cfg.kind != EstimatorKind::ReinforceNaive && !std::isfinite(ratio)) {
            w.dropped = true;
            w.seq_clipped = w.seq_masked = false;
            return w;
        }
        const double c = coef * advantage;
        std::fill(w.per_token.begin(), w.per_token.end(), c);
        return w;
    }

    if (old.size() != L) throw std::invalid_argument("theta' trainer log-probabilities do not match trajectory length");
    double seq_factor = 1.0;
    if (cfg.kind == EstimatorKind::GrpoSeqMis) {
        const double rho = std::exp(sequence_log_ratio(old, traj.rollout_logprobs));
        w.seq_ratio = rho;
        if (!std::isfinite(rho)) {
            w.dropped = true;
            return w;
        }
        w.seq_masked = !(rho <= cfg.clip_c);
        seq_factor = w.seq_masked ? 0.0 : rho;
    }
    for (std::size_t t = 0; t < L; ++t) {
        const double r = std::exp(current[t] - old[t]);
        w.token_ratio_sum += r;
        bool active = false;
        if (advantage > 0.0) active = r <= 1.0 + cfg.eps_high;
        else if (advantage < 0.0) active = r >= 1.0 - cfg.eps_low;
        if (advantage != 0.0 && !active) ++w.tokens_ppo_clipped;
        double c = active ? r * advantage : 0.0;
        if (cfg.kind == EstimatorKind::GrpoTokTis) {
            const double rho_t = std::exp(old[t] - traj.rollout_logprobs[t]);
            if (!std::isfinite(rho_t)) {
                w.dropped = true;
                std::fill(w.per_token.begin(), w.per_token.end(), 0.0);
                return w;
            }
            if (rho_t > cfg.clip_c) ++w.tokens_clipped;
            c *= std::min(rho_t, cfg.clip_c);
        }
        w.per_token[t] = c * seq_factor;
    }
    if (cfg.kind == EstimatorKind::DrGrpo || cfg.kind == EstimatorKind::GrpoTokTis) {
        const double log_rho = sequence_log_ratio(old, traj.rollout_logprobs);
        w.seq_ratio = std::exp(log_rho);
    }
    return w;
}

/// One gradient estimate from pre-scored inputs. Gradients are of the
/// objective to be maximised; loss_scale multiplies every coefficient.
inline GradientEstimate estimate_gradient(const EstimatorConfig& cfg, const PolicyParams& theta, const EstimatorInputs& in,
                                          const BackwardConfig& backward = {}) {
    cfg.validate();
    const std::size_t N = in.batch.size();
    if (in.advantages.size() != N || in.trainer_current.size() != N)
        throw std::invalid_argument("estimator inputs disagree on batch size");
    if (is_grpo_family(cfg.kind) && in.trainer_old.size() != N)
        throw std::invalid_argument(std::string(to_string(cfg.kind)) + " needs theta' trainer log-probabilities for every trajectory");

    GradientEstimate est;
    est.grad.assign(theta.size(), 0.0);
    if (N == 0) return est;

    std::size_t seq_clipped = 0, seq_masked = 0, tok_clipped = 0, tok_ppo = 0, tokens = 0, kept = 0;
    double seq_ratio_sum = 0.0, token_ratio_sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const auto& traj = in.batch[i];
        const std::span<const double> old = is_grpo_family(cfg.kind) ? std::span<const double>(in.trainer_old[i]) : std::span<const double>{};
        auto w = trajectory_weights(cfg, traj, in.advantages[i], in.trainer_current[i], old);
        tokens += traj.length();
        token_ratio_sum += w.token_ratio_sum;
        if (w.dropped) {
            ++est.stats.dropped;
            continue;
        }
        ++kept;
        seq_ratio_sum += w.seq_ratio;
        seq_clipped += w.seq_clipped ? 1 : 0;
        seq_masked += w.seq_masked ? 1 : 0;
        tok_clipped += w.tokens_clipped;
        tok_ppo += w.tokens_ppo_clipped;
        if (traj.tokens.empty()) continue;
        if (backward.loss_scale != 1.0)
            for (auto& c : w.per_token) c *= backward.loss_scale;
        accumulate_logprob_gradient(theta, traj.prompt, traj.tokens, w.per_token, est.grad, backward.low_precision);
    }
    const double n = static_cast<double>(N);
    if (backward.low_precision)
        for (auto& g : est.grad) g = qdiv(backward.low_precision->format, g, n);
    else
        for (auto& g : est.grad) g /= n;

    auto& s = est.stats;
    s.nan_flag = s.dropped > 0;
    s.mean_seq_ratio = kept ? seq_ratio_sum / static_cast<double>(kept) : 0.0;
    s.mean_token_ratio = tokens ? token_ratio_sum / static_cast<double>(tokens) : 1.0;
    if (cfg.kind == EstimatorKind::GrpoTokTis) s.clipped_fraction = tokens ? static_cast<double>(tok_clipped) / static_cast<double>(tokens) : 0.0;
    else s.clipped_fraction = static_cast<double>(seq_clipped) / n;
    s.masked_fraction = static_cast<double>(seq_masked) / n;
    s.ppo_clip_fraction = tokens ? static_cast<double>(tok_ppo) / static_cast<double>(tokens) : 0.0;
    return est;
}

/// Scores the batch with the trainer engine and runs one estimator. The
/// theta' trainer pass is performed (and counted) only by the GRPO patches;
/// plain Dr.GRPO reuses pi_train(.|theta) when theta == theta'.
inline GradientEstimate run_estimator(const EstimatorConfig& cfg, std::span<const Trajectory> batch, const PolicyParams& theta,
                                      const PolicyParams& theta_prime, const EnginePair& engines, PassCounter* counter = nullptr,
                                      const BackwardConfig& backward = {}) {
    const auto adv = batch_advantages(batch, cfg.group_size);
    const Engine current_engine(engines.trainer, theta);
    std::vector<std::vector<double>> current, old;
    current.reserve(batch.size());
    for (const auto& traj : batch) current.push_back(score(current_engine, traj));
    if (counter) counter->trainer_current += batch.size();
    if (is_grpo_family(cfg.kind)) {
        if (needs_old_trainer_pass(cfg.kind) || !(theta == theta_prime)) {
            const Engine old_engine(engines.trainer, theta_prime);
            for (const auto& traj : batch) old.push_back(score(old_engine, traj));
            if (counter) counter->trainer_old += batch.size();
        } else {
            old = current;
        }
    }
    return estimate_gradient(cfg, theta, {batch, adv, current, old}, backward);
}

namespace estimators {
inline GradientEstimate with_kind(EstimatorKind kind, EstimatorConfig cfg, std::span<const Trajectory> batch, const PolicyParams& theta,
                                  const PolicyParams& theta_prime, const EnginePair& engines) {
    cfg.kind = kind;
    return run_estimator(cfg, batch, theta, theta_prime, engines);
}
} // namespace estimators

inline GradientEstimate reinforce_naive(std::span<const Trajectory> b, const PolicyParams& th, const EnginePair& e, const EstimatorConfig& c) {
    return estimators::with_kind(EstimatorKind::ReinforceNaive, c, b, th, th, e);
}
inline GradientEstimate pg_seq_is(std::span<const Trajectory> b, const PolicyParams& th, const PolicyParams& thp, const EnginePair& e,
                                  const EstimatorConfig& c) {
    return estimators::with_kind(EstimatorKind::PgSeqIs, c, b, th, thp, e);
}
inline GradientEstimate pg_seq_tis(std::span<const Trajectory> b, const PolicyParams& th, const PolicyParams& thp, const EnginePair& e,
                                   const EstimatorConfig& c) {
    return estimators::with_kind(EstimatorKind::PgSeqTis, c, b, th, thp, e);
}
inline GradientEstimate pg_seq_mis(std::span<const Trajectory> b, const PolicyParams& th, const PolicyParams& thp, const EnginePair& e,
                                   const EstimatorConfig& c) {
    return estimators::with_kind(EstimatorKind::PgSeqMis, c, b, th, thp, e);
}
inline GradientEstimate dr_grpo(std::span<const Trajectory> b, const PolicyParams& th, const PolicyParams& thp, const EnginePair& e,
                                const EstimatorConfig& c) {
    return estimators::with_kind(EstimatorKind::DrGrpo, c, b, th, thp, e);
}
inline GradientEstimate grpo_tok_tis(std::span<const Trajectory> b, const PolicyParams& th, const PolicyParams& thp, const EnginePair& e,
                                     const EstimatorConfig& c) {
    return estimators::with_kind(EstimatorKind::GrpoTokTis, c, b, th, thp, e);
}
inline GradientEstimate grpo_seq_mis(std::span<const Trajectory> b, const PolicyParams& th, const PolicyParams& thp, const EnginePair& e,
                                     const EstimatorConfig& c) {
    return estimators::with_kind(EstimatorKind::GrpoSeqMis, c, b, th, thp, e);
}

} // namespace fplab
