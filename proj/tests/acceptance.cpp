// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include "fplab/cli.hpp"
#include "fplab/harness.hpp"
#include "support/fixtures.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace fplab;
using namespace fixtures;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::uint64_t bits(double x) { return std::bit_cast<std::uint64_t>(x); }

// 1. quantize against the bit-level oracle, plus the 16-bit format constants.
Outcome bit_oracle() {
    CounterRng rng({2026, 100});
    std::size_t mismatches = 0;
    for (int i = 0; i < 100000; ++i) {
        const double x = (i % 10 == 0) ? random_tie(rng, oracle::kHalf, -24, 16) : random_real(rng, -28, 18);
        mismatches += bits(quantize(formats::fp16(), x)) != bits(oracle::round_trip(x, oracle::kHalf));
        const double y = (i % 10 == 0) ? random_tie(rng, oracle::kBfloat, -133, 127) : random_real(rng, -136, 129);
        mismatches += bits(quantize(formats::bf16(), y)) != bits(oracle::round_trip(y, oracle::kBfloat));
    }
    const auto h = formats::fp16();
    const auto b = formats::bf16();
    const bool constants = h.smallest_normal() == std::ldexp(1.0, -14) && h.largest_finite() == 65504.0 &&
                           h.next_above_one() == 1.0 + std::ldexp(1.0, -10) && b.next_above_one() == 1.0 + std::ldexp(1.0, -7) &&
                           quantize(h, 65504.0) == 65504.0 && quantize(h, 1.0 + std::ldexp(1.0, -10)) == h.next_above_one();
    return {mismatches == 0 && constants,
            fmt::format("{} mismatches in 2x100000 conversions; fp16 min normal {:g}, max {:g}, next above 1 {:.10g}; bf16 next above 1 {:.10g}{}",
                        mismatches, h.smallest_normal(), h.largest_finite(), h.next_above_one(), b.next_above_one(),
                        constants ? "" : " (constant mismatch)")};
}

// 2. analytic gradient against central differences of the fp64 forward pass.
Outcome gradient_check() {
    const PolicyConfig cfg{4, 3, 4, 6};
    const double h = 1e-4;
    std::size_t checked = 0, failures = 0;
    double worst_rel = 0.0;
    for (std::uint64_t pair = 0; pair < 20; ++pair) {
        auto p = PolicyParams::random(cfg, 5000 + pair, 1.5);
        for (auto& b : p.b1()) b = 0.1 * static_cast<double>(pair % 3);
        CounterRng rng({pair, 70});
        const auto prompt = random_tokens(rng, 4, 2);
        const auto toks = random_tokens(rng, 4, 1 + rng.below(5));
        const auto g = logprob_gradient(p, prompt, toks, std::vector<double>(toks.size(), 1.0));
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p.flat()[i];
            p.flat()[i] = saved + h;
            const double up = sequence_logprob(p, prompt, toks, formats::fp64(), ReductionOrder::Sequential).total;
            p.flat()[i] = saved - h;
            const double down = sequence_logprob(p, prompt, toks, formats::fp64(), ReductionOrder::Sequential).total;
            p.flat()[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double abs_err = std::fabs(fd - g[i]);
            ++checked;
            if (abs_err <= 1e-8) continue;
            const double rel = abs_err / std::max(std::fabs(g[i]), std::fabs(fd));
            worst_rel = std::max(worst_rel, rel);
            failures += rel > 1e-5;
        }
    }
    return {failures == 0, fmt::format("20 pairs, {} coordinates, {} over tolerance, worst relative error {:.3g}", checked, failures, worst_rel)};
}

// 3. enumeration of every length-2 binary sequence.
Outcome unbiasedness() {
    const Enumerable inst(0.8);
    const auto truth = inst.true_gradient();
    const double rel_is = distance(inst.expectation(EstimatorKind::PgSeqIs), truth) / norm(truth);
    const double rel_naive = distance(inst.expectation(EstimatorKind::ReinforceNaive), truth) / norm(truth);
    const double tol = 1e-8;
    return {rel_is <= tol && rel_naive > 10 * tol,
            fmt::format("pg_seq_is relative error {:.3g} (<= {:g}); reinforce_naive relative bias {:.3g} (> {:g})", rel_is, tol, rel_naive,
                        10 * tol)};
}

// 4. corrected estimators against their parents with identical engines.
Outcome reduction_identities() {
    const std::vector<FloatFormat> fmts{formats::fp16(), formats::bf16(), formats::fp32()};
    std::size_t violations = 0, comparisons = 0;
    for (std::uint64_t b = 0; b < 50; ++b) {
        const EngineSpec spec{fmts[b % 3], b % 2 ? ReductionOrder::Pairwise : ReductionOrder::Sequential,
                              b % 4 < 2 ? ScoringMode::Parallel : ScoringMode::Autoregressive};
        const auto pair = EnginePair::identical(spec);
        const auto theta = PolicyParams::random({}, 900 + b, 1.5);
        const auto batch = make_batch(pair, theta, 900 + b, 3, 4);
        EstimatorConfig cfg;
        cfg.group_size = 4;
        const auto naive = reinforce_naive(batch, theta, pair, cfg).grad;
        const auto is = pg_seq_is(batch, theta, theta, pair, cfg).grad;
        auto moved = theta;
        for (std::size_t i = 0; i < moved.size(); ++i) moved.flat()[i] += 0.01 * naive[i];
        const auto dr = dr_grpo(batch, theta, theta, pair, cfg).grad;
        const auto dr_moved = dr_grpo(batch, moved, theta, pair, cfg).grad;
        const std::vector<bool> same{
            is == naive,
            pg_seq_tis(batch, theta, theta, pair, cfg).grad == is,
            pg_seq_mis(batch, theta, theta, pair, cfg).grad == is,
            grpo_tok_tis(batch, theta, theta, pair, cfg).grad == dr,
            grpo_seq_mis(batch, theta, theta, pair, cfg).grad == dr,
            grpo_tok_tis(batch, moved, theta, pair, cfg).grad == dr_moved,
            grpo_seq_mis(batch, moved, theta, pair, cfg).grad == dr_moved,
        };
        for (bool s : same) {
            ++comparisons;
            violations += !s;
        }
    }
    return {violations == 0, fmt::format("50 batches, {} bitwise comparisons, {} differ", comparisons, violations)};
}

// 5. mismatch grows with length and is larger under bf16.
Outcome directionality() {
    const auto theta = PolicyParams::random({}, 1);
    const OfflineConfig oc;
    std::vector<std::vector<LengthBucket>> per_format;
    for (const auto& f : {formats::fp16(), formats::bf16()}) per_format.push_back(bucket_by_length(offline_mismatch(theta, EnginePair::divergent(f), oc)));
    bool monotone = true;
    for (const auto& b : per_format)
        for (std::size_t i = 1; i < b.size(); ++i) monotone = monotone && b[i].mean_abs_log_ratio >= b[i - 1].mean_abs_log_ratio;
    const double fp16 = per_format[0].back().mean_abs_log_ratio;
    const double bf16 = per_format[1].back().mean_abs_log_ratio;
    const double factor = bf16 / fp16;
    auto list = [](const std::vector<LengthBucket>& b) {
        std::string s;
        for (const auto& x : b) s += fmt::format("{}{:.4g}", s.empty() ? "" : "/", x.mean_abs_log_ratio);
        return s;
    };
    return {factor >= 4.0 && monotone && per_format[0].back().length == 256,
            fmt::format("L=256 bf16/fp16 = {:.3g} (>= 4); buckets 32/64/128/256 fp16 {} bf16 {}; nondecreasing: {}", factor,
                        list(per_format[0]), list(per_format[1]), monotone ? "yes" : "no")};
}

// 6. identical engines never disagree.
Outcome identity_engines() {
    std::size_t trajectories = 0, nonzero = 0;
    const std::vector<FloatFormat> fmts{formats::fp16(), formats::bf16(), formats::fp32()};
    for (std::size_t f = 0; f < fmts.size(); ++f) {
        for (auto order : {ReductionOrder::Sequential, ReductionOrder::Pairwise}) {
            for (auto mode : {ScoringMode::Autoregressive, ScoringMode::Parallel}) {
                const auto pair = EnginePair::identical(EngineSpec{fmts[f], order, mode});
                const auto theta = PolicyParams::random({}, 60 + f, 1.5);
                for (std::uint64_t i = 0; i < 25; ++i) {
                    CounterRng rng({61, f, i});
                    const auto traj = rollout(pair, theta, std::vector<int>{static_cast<int>(i % 8), 1}, 64, rng);
                    ++trajectories;
                    nonzero += record_mismatch(traj, theta, pair).seq_log_ratio != 0.0;
                }
            }
        }
    }
    double worst_gap = 0.0;
    const auto tasks = candidate_tasks({}, 128, 62);
    for (std::uint64_t s = 0; s < 3; ++s) {
        const auto theta = PolicyParams::random({}, 63 + s, 2.0);
        worst_gap = std::max(worst_gap, std::fabs(deployment_gap(theta, EnginePair::identical(EngineSpec{formats::fp32()}), tasks, s).gap));
        worst_gap = std::max(worst_gap, std::fabs(deployment_gap(theta, EnginePair::divergent(formats::fp32()), tasks, s).gap));
    }
    return {nonzero == 0 && worst_gap == 0.0,
            fmt::format("{} trajectories, {} with nonzero seq_log_ratio; fp32/fp32 deployment gap {:g}", trajectories, nonzero, worst_gap)};
}

TrainConfig sanity_config() {
    TrainConfig c;
    c.engines = EnginePair::divergent(formats::fp16());
    c.estimator.kind = EstimatorKind::PgSeqIs;
    c.iterations = 120;
    c.policy.hidden_dim = 32;
    c.optimizer.kind = OptimizerKind::Momentum;
    c.optimizer.learning_rate = 0.05;
    c.dataset.family.modulus_max = 4;
    c.dataset.candidates = 600;
    c.eval_every = 40;
    c.eval_size = 32;
    c.mismatch_every = 0;
    c.engines.rollout.perturbation_key = 7;
    return c;
}

// 7. sanity test on fp16/fp16, then the injected-mismatch comparison.
Outcome sanity_pass() {
    const auto base = sanity_config();
    const auto ds = build_dataset(base);
    const auto clean = run_cell({"pg_seq_is,eps=0", base}, ds);

    const double eps = 1.0;
    auto is_cfg = base;
    is_cfg.engines.rollout.logit_perturbation = eps;
    auto naive_cfg = is_cfg;
    naive_cfg.estimator.kind = EstimatorKind::ReinforceNaive;
    const auto is = run_cell({"pg_seq_is,eps=1", is_cfg}, ds);
    const auto naive = run_cell({"reinforce_naive,eps=1", naive_cfg}, ds);

    const bool clean_pass = clean.status == "PASS";
    const bool is_pass = is.status == "PASS";
    const bool naive_degraded =
        naive.verdict.collapse.collapsed || naive.verdict.best_reward <= is.verdict.best_reward - 0.10;
    return {clean_pass && is_pass && naive_degraded,
            fmt::format("{} tasks, {} iterations; pg_seq_is best {:.3f} ({}); eps={:g}: pg_seq_is best {:.3f} ({}), reinforce_naive best {:.3f} "
                        "final {:.3f} collapsed {} -> naive {} 10 points below IS",
                        ds.size(), base.iterations, clean.verdict.best_reward, clean.status, eps, is.verdict.best_reward, is.status,
                        naive.verdict.best_reward, naive.verdict.final_reward, naive.verdict.collapse.collapsed ? "yes" : "no",
                        naive_degraded ? "is" : "is not")};
}

TrainConfig small_config() {
    TrainConfig c;
    c.prompts_per_iteration = 6;
    c.estimator.group_size = 4;
    c.iterations = 4;
    c.eval_every = 2;
    c.eval_size = 12;
    c.mismatch_every = 1;
    c.dataset.candidates = 60;
    c.dataset.rollouts = 10;
    c.dataset.family.modulus_max = 4;
    c.optimizer.learning_rate = 0.05;
    return c;
}

// 8. loss scaling is invisible without overflow; overflow skips the step.
Outcome scaler_transparency() {
    auto cfg = small_config();
    cfg.engines = EnginePair::divergent(formats::fp16());
    const auto ds = build_dataset(cfg);
    cfg.scaler_mode = ScalerMode::On;
    const auto on = train(cfg, ds);
    cfg.scaler_mode = ScalerMode::Off;
    const auto off = train(cfg, ds);
    const bool same = on.final_params == off.final_params && on.overflow_skips == 0 && !on.aborted;

    const auto theta = PolicyParams::random({}, 81);
    std::vector<Trajectory> batch;
    for (std::uint64_t i = 0; i < 4; ++i) {
        CounterRng rng({81, i});
        auto t = rollout(cfg.engines, theta, std::vector<int>{1, 2}, 8, rng);
        t.reward = static_cast<double>(i % 2);
        batch.push_back(std::move(t));
    }
    EstimatorConfig ec;
    ec.group_size = 4;
    auto state = ScalerState::from(ScalerConfig{});
    auto grad = estimate_gradient(ec, theta, {batch, batch_advantages(batch, 4), fplab::detail::score_batch(cfg.engines.trainer, theta, batch, 1), {}},
                                  {state.scale, std::nullopt})
                    .grad;
    grad[grad.size() / 2] = std::numeric_limits<double>::infinity();
    auto weights = theta;
    Optimizer opt(cfg.optimizer, weights.size());
    const double before = state.scale;
    const auto ev = unscale_and_step(state, grad, [&](std::span<const double> g) { opt.ascend(weights.flat(), g); });
    const bool skipped = ev.outcome == StepOutcome::SkippedOverflow && state.scale == before / 2 && weights == theta;
    return {same && skipped,
            fmt::format("fp16 trainer, S={:g} vs unscaled: final weights {}, {} overflow skips; injected inf: {}, S {:g} -> {:g}, weights {}",
                        cfg.scaler.initial_scale, on.final_params == off.final_params ? "bit-identical" : "DIFFER", on.overflow_skips,
                        ev.outcome == StepOutcome::SkippedOverflow ? "SKIPPED_OVERFLOW" : "applied", before, state.scale,
                        weights == theta ? "untouched" : "CHANGED")};
}

// 9. theta' scoring passes per iteration.
Outcome pass_accounting() {
    auto cfg = small_config();
    const auto ds = build_dataset(cfg);
    cfg.estimator.kind = EstimatorKind::DrGrpo;
    const auto dr = train(cfg, ds);
    cfg.estimator.kind = EstimatorKind::GrpoTokTis;
    const auto tis = train(cfg, ds);
    const std::uint64_t N = cfg.prompts_per_iteration * static_cast<std::uint64_t>(cfg.estimator.group_size);
    bool rows_ok = true;
    for (std::size_t i = 1; i < tis.summary.rows().size(); ++i)
        rows_ok = rows_ok && tis.summary.rows()[i].old_trainer_passes - dr.summary.rows()[i].old_trainer_passes == static_cast<double>(N);
    const auto extra = tis.old_trainer_passes - dr.old_trainer_passes;
    const bool ok = rows_ok && extra == N * cfg.iterations && tis.trainer_passes == dr.trainer_passes;
    return {ok, fmt::format("{} iterations of {} trajectories: grpo_tok_tis {} theta' passes, dr_grpo {} (one extra batch pass per iteration: {}); "
                            "current-policy passes {} vs {}",
                            cfg.iterations, N, tis.old_trainer_passes, dr.old_trainer_passes, rows_ok ? "yes" : "no", tis.trainer_passes,
                            dr.trainer_passes)};
}

// 10. two CLI train runs with the same config.
Outcome determinism() {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "fplab_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream os(dir / "run.yaml");
        os << "seed: 5\nthreads: 2\niterations: 6\nprompts_per_iteration: 8\neval_every: 3\neval_size: 16\nmismatch_every: 2\n"
              "estimator: {kind: grpo_tok_tis, group_size: 4}\noptimizer: {lr: 0.05}\n"
              "dataset: {modulus_max: 4, candidates: 80, rollouts: 10}\n";
    }
    std::ostringstream sink;
    auto run_once = [&](const std::string& out) {
        const std::string config = (dir / "run.yaml").string();
        const std::string out_dir = (dir / out).string();
        const char* argv[] = {"fplab-cli", "train", "--config", config.c_str(), "--out", out_dir.c_str()};
        return cli::run(6, argv, sink, sink);
    };
    const int a = run_once("a");
    const int b = run_once("b");
    auto slurp = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(is), {});
    };
    const auto sa = slurp(dir / "a" / "run_summary.csv");
    const auto sb = slurp(dir / "b" / "run_summary.csv");
    fs::remove_all(dir);
    return {a == 0 && b == 0 && !sa.empty() && sa == sb,
            fmt::format("exit codes {}/{}, run_summary.csv {} bytes, {}", a, b, sa.size(), sa == sb ? "byte-identical" : "DIFFERENT")};
}

} // namespace

int main() {
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, bit_oracle},      {2, gradient_check},      {3, unbiasedness},    {4, reduction_identities}, {5, directionality},
        {6, identity_engines}, {7, sanity_pass},        {8, scaler_transparency}, {9, pass_accounting},   {10, determinism},
    };
    int failed = 0;
    for (const auto& [id, fn] : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        fmt::print("criterion {:>2}: {}  {} [{:.1f} s]\n", id, o.pass ? "PASS" : "FAIL", o.detail, secs);
        std::fflush(stdout);
        failed += !o.pass;
    }
    fmt::print("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
    return failed == 0 ? 0 : 1;
}
