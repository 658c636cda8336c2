// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0
//
// Mismatch measurement, run summaries and collapse detection.

#pragma once

#include "fplab/engines.hpp"
#include "fplab/task.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fplab {

struct TokenProbPair {
    double p_rollout = 0.0;
    double p_train = 0.0;
};

struct MismatchRecord {
    std::size_t step = 0;
    std::size_t trajectory = 0;
    std::size_t length = 0;
    std::vector<TokenProbPair> pairs;
    double seq_log_ratio = 0.0; ///< sum_t log pi_train - log pi_rollout, at theta'
};

/// Builds a record from the trainer's per-token log-probabilities at theta'.
inline MismatchRecord record_mismatch(const Trajectory& traj, std::span<const double> trainer_logprobs, std::size_t step = 0,
                                      std::size_t index = 0) {
    if (trainer_logprobs.size() != traj.tokens.size()) throw std::invalid_argument("trainer scores do not match trajectory length");
    MismatchRecord rec;
    rec.step = step;
    rec.trajectory = index;
    rec.length = traj.tokens.size();
    rec.pairs.reserve(rec.length);
    for (std::size_t t = 0; t < rec.length; ++t)
        rec.pairs.push_back({std::exp(traj.rollout_logprobs[t]), std::exp(trainer_logprobs[t])});
    rec.seq_log_ratio = sequence_log_ratio(trainer_logprobs, traj.rollout_logprobs);
    return rec;
}

inline MismatchRecord record_mismatch(const Trajectory& traj, const PolicyParams& theta_prime, const EnginePair& engines,
                                      std::size_t step = 0, std::size_t index = 0) {
    return record_mismatch(traj, score(engines.trainer, theta_prime, traj), step, index);
}

inline nlohmann::json to_json(const MismatchRecord& r) {
    nlohmann::json j;
    j["step"] = r.step;
    j["trajectory"] = r.trajectory;
    j["length"] = r.length;
    j["seq_log_ratio"] = r.seq_log_ratio;
    auto& pr = j["p_rollout"] = nlohmann::json::array();
    auto& pt = j["p_train"] = nlohmann::json::array();
    for (const auto& p : r.pairs) {
        pr.push_back(p.p_rollout);
        pt.push_back(p.p_train);
    }
    return j;
}

inline void write_jsonl(std::ostream& os, std::span<const MismatchRecord> records) {
    for (const auto& r : records) os << to_json(r).dump() << '\n';
}

struct LengthBucket {
    std::size_t length = 0;
    std::size_t count = 0;
    double mean_abs_log_ratio = 0.0;
};

/// Mean |seq_log_ratio| grouped by exact trajectory length, ascending.
inline std::vector<LengthBucket> bucket_by_length(std::span<const MismatchRecord> records) {
    std::map<std::size_t, std::pair<std::size_t, double>> acc;
    for (const auto& r : records) {
        auto& [n, s] = acc[r.length];
        ++n;
        s += std::fabs(r.seq_log_ratio);
    }
    std::vector<LengthBucket> out;
    for (const auto& [len, ns] : acc) out.push_back({len, ns.first, ns.second / static_cast<double>(ns.first)});
    return out;
}

// ---------------------------------------------------------------------------
// Run summary

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

struct RunSummaryRow {
    std::size_t iteration = 0;
    double mean_reward = kMissing;
    double mean_abs_seq_log_ratio = kMissing;
    double min_prob_diff = kMissing; ///< min over tokens of p_train - p_rollout
    double max_prob_diff = kMissing;
    double clipped_fraction = kMissing;
    double ppo_clip_fraction = kMissing;
    double masked_fraction = kMissing;
    double dropped = kMissing;
    double loss_scale = kMissing;
    double overflow_skips = kMissing;
    double eval_acc_rollout = kMissing;
    double eval_acc_trainer = kMissing;
    double trainer_passes = kMissing;
    double old_trainer_passes = kMissing;
};

inline std::string csv_number(double v) {
    if (std::isnan(v)) return "";
    return fmt::format("{}", v);
}

class RunSummary {
public:
    static constexpr const char* header =
        "iteration,mean_reward,mean_abs_seq_log_ratio,min_prob_diff,max_prob_diff,clipped_fraction,ppo_clip_fraction,"
        "masked_fraction,dropped,loss_scale,overflow_skips,eval_acc_rollout,eval_acc_trainer,trainer_passes,old_trainer_passes";

    void append(RunSummaryRow row) {
        if (!rows_.empty() && row.iteration <= rows_.back().iteration)
            throw std::logic_error("run summary rows must have increasing iteration index");
        rows_.push_back(std::move(row));
    }

    [[nodiscard]] std::span<const RunSummaryRow> rows() const noexcept { return rows_; }
    [[nodiscard]] bool empty() const noexcept { return rows_.empty(); }

    /// Training-reward series (rows without a reward are skipped).
    [[nodiscard]] std::vector<double> rewards() const {
        std::vector<double> out;
        for (const auto& r : rows_)
            if (!std::isnan(r.mean_reward)) out.push_back(r.mean_reward);
        return out;
    }

    void write_csv(std::ostream& os) const {
        os << header << '\n';
        for (const auto& r : rows_) {
            os << r.iteration;
            for (double v : {r.mean_reward, r.mean_abs_seq_log_ratio, r.min_prob_diff, r.max_prob_diff, r.clipped_fraction,
                             r.ppo_clip_fraction, r.masked_fraction, r.dropped, r.loss_scale, r.overflow_skips, r.eval_acc_rollout,
                             r.eval_acc_trainer, r.trainer_passes, r.old_trainer_passes})
                os << ',' << csv_number(v);
            os << '\n';
        }
    }

private:
    std::vector<RunSummaryRow> rows_;
};

// ---------------------------------------------------------------------------
// Deployment gap

struct DeploymentGap {
    double acc_rollout = 0.0;
    double acc_trainer = 0.0;
    double gap = 0.0; ///< acc_trainer - acc_rollout
};

/// Generates once per eval task with each engine from the same rng stream.
inline DeploymentGap deployment_gap(const PolicyParams& theta, const EnginePair& engines, std::span<const TaskSpec> eval_set,
                                    std::uint64_t seed) {
    DeploymentGap g;
    if (eval_set.empty()) return g;
    const Engine rollout_engine(engines.rollout, theta);
    const Engine trainer_engine(engines.trainer, theta);
    const int V = theta.config().vocab_size;
    double r_roll = 0.0, r_train = 0.0;
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
        const auto& task = eval_set[i];
        const auto prompt = task.prompt(V);
        CounterRng rng_a({seed, 0x6576616cull, i});
        CounterRng rng_b({seed, 0x6576616cull, i});
        const auto a = generate(rollout_engine, prompt, static_cast<std::size_t>(task.length), rng_a);
        const auto b = generate(trainer_engine, prompt, static_cast<std::size_t>(task.length), rng_b);
        r_roll += task_reward(task, a.tokens);
        r_train += task_reward(task, b.tokens);
    }
    const double n = static_cast<double>(eval_set.size());
    g.acc_rollout = r_roll / n;
    g.acc_trainer = r_train / n;
    g.gap = g.acc_trainer - g.acc_rollout;
    return g;
}

// ---------------------------------------------------------------------------
// Collapse detection

struct CollapseResult {
    bool collapsed = false;
    std::size_t step = 0;   ///< index into the reward series
    bool short_run = false; ///< fewer than W points
};

/// COLLAPSED at the first step t where the trailing-W mean falls below
/// (running peak of the trailing mean - drop) and stays below that level
/// for the rest of the run.
inline CollapseResult detect_collapse(std::span<const double> rewards, std::size_t window, double drop) {
    if (window < 1) throw std::invalid_argument("collapse window must be >= 1");
    if (!(drop > 0.0 && drop < 1.0)) throw std::invalid_argument("collapse drop must be in (0, 1)");
    CollapseResult res;
    if (rewards.size() < window) {
        res.short_run = true;
        return res;
    }
    std::vector<double> trailing;
    double sum = 0.0;
    for (std::size_t t = 0; t < rewards.size(); ++t) {
        sum += rewards[t];
        if (t >= window) sum -= rewards[t - window];
        if (t + 1 >= window) trailing.push_back(sum / static_cast<double>(window));
    }
    // suffix max lets each candidate check "never recovers" in O(1)
    std::vector<double> suffix_max(trailing.size());
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = trailing.size(); i-- > 0;) {
        m = std::max(m, trailing[i]);
        suffix_max[i] = m;
    }
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < trailing.size(); ++i) {
        peak = std::max(peak, trailing[i]);
        const double level = peak - drop;
        if (trailing[i] < level && suffix_max[i] < level) {
            res.collapsed = true;
            res.step = i + window - 1;
            return res;
        }
    }
    return res;
}

} // namespace fplab
