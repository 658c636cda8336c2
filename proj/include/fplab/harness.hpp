// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0
//
// Perfectible dataset construction, the training loop, sanity grids and
// precision ablations.

#pragma once

#include "fplab/diagnostics.hpp"
#include "fplab/engines.hpp"
#include "fplab/estimators.hpp"
#include "fplab/optimizer.hpp"
#include "fplab/scaler.hpp"
#include "fplab/task.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fplab {

/// Runs fn(i) for i in [0, n). Results must be written to slot i only, which
/// keeps output independent of the thread count.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n && !failed; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        if (!failed.exchange(true)) error = std::current_exception();
                    }
                }
            });
    }
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Perfectible dataset

struct DatasetConfig {
    TaskFamily family;
    std::size_t candidates = 3000;
    std::size_t rollouts = 40;
    double low = 0.2;
    double high = 0.8;

    void validate() const {
        family.validate();
        if (rollouts < 1) throw std::invalid_argument("dataset.rollouts must be >= 1");
        if (!(low >= 0.0 && low < high && high <= 1.0)) throw std::invalid_argument("dataset band must satisfy 0 <= low < high <= 1");
    }
};

struct PerfectibleDataset {
    std::vector<TaskSpec> tasks;
    std::vector<double> accuracy; ///< initial accuracy estimate per retained task
    std::uint64_t seed = 0;
    std::size_t rollouts = 0;
    std::size_t candidates = 0;
    double low = 0.0;
    double high = 1.0;

    [[nodiscard]] bool empty() const noexcept { return tasks.empty(); }
    [[nodiscard]] std::size_t size() const noexcept { return tasks.size(); }
};

class EmptyDatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mean reward of `rollouts` generations per candidate under the rollout
/// engine at theta0.
inline std::vector<double> estimate_accuracy(std::span<const TaskSpec> candidates, std::size_t rollouts, const PolicyParams& theta0,
                                             const EnginePair& engines, std::uint64_t seed, std::size_t threads = 1) {
    const Engine engine(engines.rollout, theta0);
    const int V = theta0.config().vocab_size;
    std::vector<double> acc(candidates.size(), 0.0);
    parallel_for(candidates.size(), threads, [&](std::size_t i) {
        const auto& task = candidates[i];
        const auto prompt = task.prompt(V);
        double hits = 0.0;
        for (std::size_t r = 0; r < rollouts; ++r) {
            CounterRng rng({seed, 0x64617461ull, i, r});
            hits += task_reward(task, generate(engine, prompt, static_cast<std::size_t>(task.length), rng).tokens);
        }
        acc[i] = hits / static_cast<double>(rollouts);
    });
    return acc;
}

inline PerfectibleDataset build_perfectible(std::span<const TaskSpec> candidates, std::size_t rollouts, double low, double high,
                                            const PolicyParams& theta0, const EnginePair& engines, std::uint64_t seed,
                                            std::size_t threads = 1) {
    if (rollouts < 1) throw std::invalid_argument("perfectible filter needs at least one rollout per task");
    if (!(low >= 0.0 && low < high && high <= 1.0)) throw std::invalid_argument("perfectible band must satisfy 0 <= low < high <= 1");
    for (const auto& t : candidates) t.validate();
    const auto acc = estimate_accuracy(candidates, rollouts, theta0, engines, seed, threads);
    PerfectibleDataset ds;
    ds.seed = seed;
    ds.rollouts = rollouts;
    ds.candidates = candidates.size();
    ds.low = low;
    ds.high = high;
    std::size_t below = 0, above = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (acc[i] > low && acc[i] < high) {
            ds.tasks.push_back(candidates[i]);
            ds.accuracy.push_back(acc[i]);
        } else if (acc[i] <= low) {
            ++below;
        } else {
            ++above;
        }
    }
    if (ds.tasks.empty()) {
        double mean = 0.0;
        for (double a : acc) mean += a;
        if (!acc.empty()) mean /= static_cast<double>(acc.size());
        throw EmptyDatasetError(fmt::format("no task has initial accuracy in ({}, {}): {} candidates, {} at or below, {} at or above, "
                                            "mean accuracy {:.4f}",
                                            low, high, candidates.size(), below, above, mean));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Training

enum class ScalerMode { Auto, On, Off };

inline ScalerMode parse_scaler_mode(std::string_view s) {
    if (s == "auto") return ScalerMode::Auto;
    if (s == "on" || s == "true") return ScalerMode::On;
    if (s == "off" || s == "false") return ScalerMode::Off;
    throw std::invalid_argument("unknown scaler mode '" + std::string(s) + "' (expected auto, on or off)");
}

struct TrainConfig {
    PolicyConfig policy;
    double init_gain = 1.0;
    EnginePair engines = EnginePair::divergent(formats::fp16());
    EstimatorConfig estimator;
    OptimizerConfig optimizer;
    ScalerConfig scaler;
    ScalerMode scaler_mode = ScalerMode::Auto; ///< auto: on iff the trainer format is fp16
    std::optional<FloatFormat> backward_format; ///< unset: full-precision backward
    DatasetConfig dataset;

    std::size_t prompts_per_iteration = 64;
    int grad_steps = 4;
    std::size_t iterations = 100;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    std::size_t eval_every = 10;
    std::size_t eval_size = 256;
    std::size_t mismatch_every = 10; ///< 0 disables mismatch records
    std::size_t checkpoint_every = 0; ///< 0: final checkpoint only

    double pass_threshold = 0.95;
    std::size_t pass_window = 5;
    std::size_t collapse_window = 20;
    double collapse_drop = 0.2;

    [[nodiscard]] bool scaler_active() const {
        if (scaler_mode == ScalerMode::Auto) return engines.trainer.format == formats::fp16();
        return scaler_mode == ScalerMode::On;
    }

    void validate() const {
        policy.validate();
        estimator.validate();
        optimizer.validate();
        scaler.validate();
        dataset.validate();
        if (!(init_gain > 0.0)) throw std::invalid_argument("policy.init_gain must be > 0");
        if (prompts_per_iteration < 1) throw std::invalid_argument("prompts_per_iteration must be >= 1");
        if (grad_steps < 1) throw std::invalid_argument("grad_steps must be >= 1");
        if (threads < 1) throw std::invalid_argument("threads must be >= 1");
        if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
        if (!(pass_threshold > 0.0 && pass_threshold <= 1.0)) throw std::invalid_argument("pass.threshold must be in (0, 1]");
        if (pass_window < 1) throw std::invalid_argument("pass.window must be >= 1");
        if (policy.vocab_size < dataset.family.modulus_max)
            throw std::invalid_argument("policy.vocab_size must be >= dataset.modulus_max so every residue is reachable in one token");
    }
};

struct Checkpoint {
    std::size_t step = 0;
    std::string format_name;
    PolicyParams params;
};

struct TrainResult {
    RunSummary summary;
    std::vector<MismatchRecord> mismatch;
    std::vector<Checkpoint> checkpoints;
    PolicyParams final_params;
    bool aborted = false;
    std::string abort_reason;
    std::uint64_t trainer_passes = 0;
    std::uint64_t old_trainer_passes = 0;
    std::size_t overflow_skips = 0;
};

inline std::vector<TaskSpec> eval_tasks(const PerfectibleDataset& ds, std::size_t n) {
    return {ds.tasks.begin(), ds.tasks.begin() + static_cast<std::ptrdiff_t>(std::min(n, ds.size()))};
}

inline PolicyParams initial_params(const TrainConfig& cfg) {
    return PolicyParams::random(cfg.policy, stream_key({cfg.seed, 0x696e6974ull}), cfg.init_gain);
}

namespace detail {

inline std::vector<std::vector<double>> score_batch(const EngineSpec& spec, const PolicyParams& params, std::span<const Trajectory> batch,
                                                    std::size_t threads) {
    const Engine engine(spec, params);
    std::vector<std::vector<double>> out(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) { out[i] = score(engine, batch[i]); });
    return out;
}

inline double trailing_best(std::span<const double> series, std::size_t window) {
    double best = -std::numeric_limits<double>::infinity();
    if (series.size() < window) return best;
    double sum = 0.0;
    for (std::size_t t = 0; t < series.size(); ++t) {
        sum += series[t];
        if (t >= window) sum -= series[t - window];
        if (t + 1 >= window) best = std::max(best, sum / static_cast<double>(window));
    }
    return best;
}

} // namespace detail

/// One RL run. Each iteration snapshots theta', samples prompts and G
/// rollouts per prompt under the rollout engine, then takes grad_steps
/// full-batch gradient steps with the configured estimator.
inline TrainResult train(const TrainConfig& cfg, const PerfectibleDataset& dataset) {
    cfg.validate();
    if (dataset.empty()) throw EmptyDatasetError("training dataset is empty");
    const int V = cfg.policy.vocab_size;
    const auto G = static_cast<std::size_t>(cfg.estimator.group_size);
    const auto kind = cfg.estimator.kind;
    const bool scaled = cfg.scaler_active();

    TrainResult res;
    PolicyParams theta = initial_params(cfg);
    Optimizer opt(cfg.optimizer, theta.size());
    ScalerState scaler = ScalerState::from(cfg.scaler);
    BackwardConfig backward;
    if (cfg.backward_format)
        backward.low_precision = LowPrecisionBackward{cfg.engines.trainer.format, cfg.engines.trainer.order, *cfg.backward_format};
    const auto eval_set = eval_tasks(dataset, cfg.eval_size);

    auto evaluate = [&](RunSummaryRow& row, std::size_t iteration) {
        const auto gap = deployment_gap(theta, cfg.engines, eval_set, stream_key({cfg.seed, 0x6576616cull, iteration}));
        row.eval_acc_rollout = gap.acc_rollout;
        row.eval_acc_trainer = gap.acc_trainer;
    };

    {
        RunSummaryRow row0;
        row0.iteration = 0;
        row0.loss_scale = scaled ? scaler.scale : 1.0;
        evaluate(row0, 0);
        res.summary.append(row0);
    }

    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        const PolicyParams theta_prime = theta;
        const Engine rollout_engine(cfg.engines.rollout, theta_prime);

        // Prompt selection and rollouts.
        CounterRng prompt_rng({cfg.seed, 0x70726f6dull, it});
        std::vector<std::size_t> picks(cfg.prompts_per_iteration);
        for (auto& p : picks) p = static_cast<std::size_t>(prompt_rng.below(dataset.size()));
        std::vector<Trajectory> batch(picks.size() * G);
        parallel_for(batch.size(), cfg.threads, [&](std::size_t i) {
            const std::size_t slot = i / G, g = i % G;
            const auto& task = dataset.tasks[picks[slot]];
            CounterRng rng({cfg.seed, 0x726f6c6cull, it, slot, g});
            auto traj = generate(rollout_engine, task.prompt(V), static_cast<std::size_t>(task.length), rng);
            traj.task_index = picks[slot];
            traj.group_id = slot;
            traj.reward = task_reward(task, traj.tokens);
            batch[i] = std::move(traj);
        });
        const auto adv = batch_advantages(batch, cfg.estimator.group_size);

        RunSummaryRow row;
        row.iteration = it;
        double reward_sum = 0.0;
        for (const auto& t : batch) reward_sum += t.reward;
        row.mean_reward = reward_sum / static_cast<double>(batch.size());

        std::uint64_t passes = 0, old_passes = 0;
        std::vector<std::vector<double>> old;
        if (needs_old_trainer_pass(kind)) {
            old = detail::score_batch(cfg.engines.trainer, theta_prime, batch, cfg.threads);
            old_passes += batch.size();
        }

        double clipped = 0.0, ppo = 0.0, masked = 0.0, dropped = 0.0;
        std::size_t skips = 0;
        for (int step = 0; step < cfg.grad_steps; ++step) {
            auto current = detail::score_batch(cfg.engines.trainer, theta, batch, cfg.threads);
            passes += batch.size();
            if (step == 0) {
                // theta == theta' here, so these are pi_train(.|theta') scores.
                if (is_grpo_family(kind) && old.empty()) old = current;
                double abs_sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -std::numeric_limits<double>::infinity();
                const bool keep = cfg.mismatch_every > 0 && it % cfg.mismatch_every == 0;
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    auto rec = record_mismatch(batch[i], current[i], it, i);
                    abs_sum += std::fabs(rec.seq_log_ratio);
                    for (const auto& p : rec.pairs) {
                        lo = std::min(lo, p.p_train - p.p_rollout);
                        hi = std::max(hi, p.p_train - p.p_rollout);
                    }
                    if (keep) res.mismatch.push_back(std::move(rec));
                }
                row.mean_abs_seq_log_ratio = abs_sum / static_cast<double>(batch.size());
                if (std::isfinite(lo)) row.min_prob_diff = lo;
                if (std::isfinite(hi)) row.max_prob_diff = hi;
            }
            BackwardConfig bw = backward;
            bw.loss_scale = scaled ? scaler.scale : 1.0;
            auto est = estimate_gradient(cfg.estimator, theta, {batch, adv, current, old}, bw);
            clipped += est.stats.clipped_fraction;
            ppo += est.stats.ppo_clip_fraction;
            masked += est.stats.masked_fraction;
            dropped += static_cast<double>(est.stats.dropped);

            const PolicyParams before = theta;
            if (scaled) {
                const auto ev = unscale_and_step(scaler, est.grad, [&](std::span<const double> g) { opt.ascend(theta.flat(), g); });
                skips += ev.outcome == StepOutcome::SkippedOverflow ? 1 : 0;
            } else {
                opt.ascend(theta.flat(), est.grad);
            }
            if (!theta.all_finite()) {
                res.aborted = true;
                res.abort_reason = fmt::format("non-finite master weights after iteration {} gradient step {}", it, step + 1);
                res.checkpoints.push_back({it, cfg.engines.trainer.format.name, before});
                break;
            }
        }
        const double steps = static_cast<double>(cfg.grad_steps);
        row.clipped_fraction = clipped / steps;
        row.ppo_clip_fraction = ppo / steps;
        row.masked_fraction = masked / steps;
        row.dropped = dropped;
        row.loss_scale = scaled ? scaler.scale : 1.0;
        row.overflow_skips = static_cast<double>(skips);
        row.trainer_passes = static_cast<double>(passes);
        row.old_trainer_passes = static_cast<double>(old_passes);
        res.trainer_passes += passes;
        res.old_trainer_passes += old_passes;
        res.overflow_skips += skips;
        if (res.aborted) {
            res.summary.append(row);
            res.final_params = theta;
            return res;
        }
        if (it % cfg.eval_every == 0 || it == cfg.iterations) evaluate(row, it);
        res.summary.append(row);
        if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it != cfg.iterations)
            res.checkpoints.push_back({it, cfg.engines.trainer.format.name, theta});
    }
    res.checkpoints.push_back({cfg.iterations, cfg.engines.trainer.format.name, theta});
    res.final_params = std::move(theta);
    return res;
}

struct RunVerdict {
    bool passed = false;
    double best_reward = 0.0;  ///< best trailing pass-window mean of training reward
    double final_reward = 0.0; ///< mean over the last pass-window iterations
    CollapseResult collapse;
};

inline RunVerdict judge(const TrainConfig& cfg, const TrainResult& run) {
    RunVerdict v;
    const auto rewards = run.summary.rewards();
    if (rewards.empty()) return v;
    const std::size_t w = std::min(cfg.pass_window, rewards.size());
    v.best_reward = detail::trailing_best(rewards, w);
    double tail = 0.0;
    for (std::size_t i = rewards.size() - w; i < rewards.size(); ++i) tail += rewards[i];
    v.final_reward = tail / static_cast<double>(w);
    v.passed = !run.aborted && v.best_reward >= cfg.pass_threshold;
    v.collapse = detect_collapse(rewards, cfg.collapse_window, cfg.collapse_drop);
    return v;
}

/// Dataset for `cfg`: candidates from the task family, filtered under the
/// configured rollout engine at the initial weights.
inline PerfectibleDataset build_dataset(const TrainConfig& cfg) {
    cfg.validate();
    const auto candidates = candidate_tasks(cfg.dataset.family, cfg.dataset.candidates, stream_key({cfg.seed, 0x63616e64ull}));
    return build_perfectible(candidates, cfg.dataset.rollouts, cfg.dataset.low, cfg.dataset.high, initial_params(cfg), cfg.engines,
                             cfg.seed, cfg.threads);
}

// ---------------------------------------------------------------------------
// Sanity grid and precision ablation

struct SanityCell {
    std::string label;
    TrainConfig config;
};

struct SanityRow {
    std::string label;
    std::string estimator;
    std::string rollout;
    std::string trainer;
    double perturbation = 0.0;
    RunVerdict verdict;
    bool aborted = false;
    std::string status; ///< PASS, or FAIL(reason)
    double final_mismatch = kMissing;
};

inline SanityRow run_cell(const SanityCell& cell, const PerfectibleDataset& dataset, TrainResult* out = nullptr) {
    SanityRow row;
    row.label = cell.label;
    row.estimator = std::string(to_string(cell.config.estimator.kind));
    row.rollout = describe(cell.config.engines.rollout);
    row.trainer = describe(cell.config.engines.trainer);
    row.perturbation = std::max(cell.config.engines.rollout.logit_perturbation, cell.config.engines.trainer.logit_perturbation);
    try {
        auto run = train(cell.config, dataset);
        row.verdict = judge(cell.config, run);
        row.aborted = run.aborted;
        const auto rows = run.summary.rows();
        if (!rows.empty()) row.final_mismatch = rows.back().mean_abs_seq_log_ratio;
        if (run.aborted) row.status = "FAIL(aborted: " + run.abort_reason + ")";
        else if (row.verdict.collapse.collapsed) row.status = fmt::format("FAIL(collapsed at step {})", row.verdict.collapse.step);
        else if (!row.verdict.passed)
            row.status = fmt::format("FAIL(best reward {:.4f} below {})", row.verdict.best_reward, cell.config.pass_threshold);
        else row.status = "PASS";
        if (out) *out = std::move(run);
    } catch (const std::exception& e) {
        row.status = std::string("FAIL(") + e.what() + ")";
    }
    return row;
}

inline std::vector<SanityRow> sanity_test(std::span<const SanityCell> grid, const PerfectibleDataset& dataset) {
    std::vector<SanityRow> rows;
    rows.reserve(grid.size());
    for (const auto& cell : grid) rows.push_back(run_cell(cell, dataset));
    return rows;
}

inline void write_sanity_csv(std::ostream& os, std::span<const SanityRow> rows) {
    os << "label,estimator,rollout,trainer,perturbation,best_reward,final_reward,passed,collapsed,collapse_step,final_mean_abs_seq_log_ratio,"
          "status\n";
    for (const auto& r : rows) {
        os << '"' << r.label << "\"," << r.estimator << ',' << r.rollout << ',' << r.trainer << ',' << csv_number(r.perturbation) << ','
           << csv_number(r.verdict.best_reward) << ',' << csv_number(r.verdict.final_reward) << ',' << (r.verdict.passed ? 1 : 0) << ','
           << (r.verdict.collapse.collapsed ? 1 : 0) << ','
           << (r.verdict.collapse.collapsed ? std::to_string(r.verdict.collapse.step) : std::string()) << ','
           << csv_number(r.final_mismatch) << ",\"" << r.status << "\"\n";
    }
}

/// Rollout-format x trainer-format grid. Reduction orders and scoring modes
/// follow the base configuration's engines.
inline std::vector<SanityCell> ablation_grid(const TrainConfig& base, std::span<const FloatFormat> formats_list) {
    std::vector<SanityCell> grid;
    for (const auto& trainer : formats_list) {
        for (const auto& rollout : formats_list) {
            SanityCell cell{fmt::format("train={},infer={}", trainer.name, rollout.name), base};
            cell.config.engines.rollout.format = rollout;
            cell.config.engines.trainer.format = trainer;
            grid.push_back(std::move(cell));
        }
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Offline mismatch analysis

struct OfflineConfig {
    std::vector<std::size_t> lengths{32, 64, 128, 256};
    std::size_t samples = 100; ///< trajectories per length
    std::uint64_t seed = 1;
    std::size_t threads = 1;
};

/// Trajectories of each fixed length from a random prompt family, scored by
/// both engines at the same weights.
inline std::vector<MismatchRecord> offline_mismatch(const PolicyParams& theta, const EnginePair& engines, const OfflineConfig& cfg) {
    const int V = theta.config().vocab_size;
    const Engine rollout_engine(engines.rollout, theta);
    const Engine trainer_engine(engines.trainer, theta);
    std::vector<MismatchRecord> out(cfg.lengths.size() * cfg.samples);
    parallel_for(out.size(), cfg.threads, [&](std::size_t i) {
        const std::size_t li = i / cfg.samples, s = i % cfg.samples;
        CounterRng rng({cfg.seed, 0x6f66666cull, cfg.lengths[li], s});
        const TaskSpec task{2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, V - 1)))), 0, 0};
        std::vector<int> prompt{task.modulus % V, static_cast<int>(rng.below(static_cast<std::uint64_t>(V))),
                                static_cast<int>(rng.below(static_cast<std::uint64_t>(V)))};
        const auto traj = generate(rollout_engine, prompt, cfg.lengths[li], rng);
        out[i] = record_mismatch(traj, score(trainer_engine, traj), 0, i);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (all integers little-endian):
//   0   char[4]  magic "FPLB"
//   4   u32      version (1)
//   8   u32 x 4  vocab_size, context_window, embed_dim, hidden_dim
//   24  char[16] trainer format name, NUL padded
//   40  u64      step
//   48  u64      parameter count n
//   56  f64 x n  parameters in flat layout order (IEEE-754 binary64, LE)

namespace detail {
inline void put_le(std::ostream& os, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint64_t get_le(std::istream& is, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int c = is.get();
        if (c == std::char_traits<char>::eof()) throw std::runtime_error("checkpoint truncated");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}
} // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
    const auto& c = ck.params.config();
    os.write("FPLB", 4);
    detail::put_le(os, 1, 4);
    for (int v : {c.vocab_size, c.context_window, c.embed_dim, c.hidden_dim}) detail::put_le(os, static_cast<std::uint32_t>(v), 4);
    char name[16] = {};
    ck.format_name.copy(name, 15);
    os.write(name, 16);
    detail::put_le(os, ck.step, 8);
    detail::put_le(os, ck.params.size(), 8);
    for (double x : ck.params.flat()) detail::put_le(os, std::bit_cast<std::uint64_t>(x), 8);
}

inline Checkpoint read_checkpoint(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "FPLB") throw std::runtime_error("not a checkpoint file (bad magic)");
    if (detail::get_le(is, 4) != 1) throw std::runtime_error("unsupported checkpoint version");
    PolicyConfig c;
    c.vocab_size = static_cast<int>(detail::get_le(is, 4));
    c.context_window = static_cast<int>(detail::get_le(is, 4));
    c.embed_dim = static_cast<int>(detail::get_le(is, 4));
    c.hidden_dim = static_cast<int>(detail::get_le(is, 4));
    char name[16];
    if (!is.read(name, 16)) throw std::runtime_error("checkpoint truncated");
    Checkpoint ck;
    ck.format_name = std::string(name, strnlen(name, 16));
    ck.step = detail::get_le(is, 8);
    const auto n = detail::get_le(is, 8);
    if (n != c.parameter_count()) throw std::runtime_error("checkpoint parameter count does not match its header");
    std::vector<double> data(n);
    for (auto& x : data) x = std::bit_cast<double>(detail::get_le(is, 8));
    ck.params = PolicyParams(c, std::move(data));
    return ck;
}

} // namespace fplab
