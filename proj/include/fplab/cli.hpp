// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line workflows. Every subcommand accepts --config, --seed and
// --out; outputs land under --out. Exit codes: 0 success, 1 run failure,
// 2 usage or configuration error.
#pragma once

#include "fplab/config.hpp"
#include "fplab/harness.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fplab::cli {

inline constexpr int kOk = 0;
inline constexpr int kRunFailed = 1;
inline constexpr int kUsage = 2;

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

namespace detail {

namespace fs = std::filesystem;

class MissingInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline RunConfig load(const CommonOptions& o, bool required) {
    RunConfig rc;
    if (!o.config.empty()) rc = load_config(o.config);
    else if (required) throw ConfigError("--config", "a config file is required for this command");
    if (o.seed) {
        rc.train.seed = *o.seed;
        rc.offline.seed = *o.seed;
    }
    return rc;
}

inline std::ofstream open_out(const fs::path& p) {
    fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    return os;
}

inline fs::path under(const CommonOptions& o, const std::string& rel) {
    const fs::path p(rel);
    return p.is_absolute() ? p : fs::path(o.out) / p;
}

inline void write_checkpoint_file(const fs::path& p, const Checkpoint& ck) {
    auto os = open_out(p);
    write_checkpoint(os, ck);
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') quoted = !quoted;
        else if (c == ',' && !quoted) {
            cells.push_back(cur);
            cur.clear();
        } else cur += c;
    }
    cells.push_back(cur);
    return cells;
}

// ---------------------------------------------------------------------------

inline int cmd_formats(std::ostream& out) {
    out << "format,exponent_bits,mantissa_bits,smallest_normal,largest_finite,next_above_one\n";
    for (const auto& f : {formats::fp16(), formats::bf16(), formats::fp32()})
        out << fmt::format("{},{},{},{:.6g},{:.6g},{:.10g}\n", f.name, f.exponent_bits, f.mantissa_bits, f.smallest_normal(),
                           f.largest_finite(), f.next_above_one());
    return kOk;
}

inline int cmd_offline(const CommonOptions& o, std::ostream& out) {
    const auto rc = load(o, true);
    PolicyParams theta = initial_params(rc.train);
    std::string source = "initial weights";
    if (!rc.offline_checkpoint.empty()) {
        const auto path = under(o, rc.offline_checkpoint);
        std::ifstream is(path, std::ios::binary);
        if (!is) throw MissingInput("cannot open checkpoint " + path.string());
        theta = read_checkpoint(is).params;
        source = path.string();
    }
    auto oc = rc.offline;
    oc.threads = rc.train.threads;
    const auto records = offline_mismatch(theta, rc.train.engines, oc);
    {
        auto os = open_out(under(o, "mismatch.jsonl"));
        write_jsonl(os, records);
    }
    const auto buckets = bucket_by_length(records);
    {
        auto os = open_out(under(o, "offline_buckets.csv"));
        os << "length,count,mean_abs_seq_log_ratio\n";
        for (const auto& b : buckets) os << b.length << ',' << b.count << ',' << csv_number(b.mean_abs_log_ratio) << '\n';
    }
    std::string parts;
    for (const auto& b : buckets) parts += fmt::format(" L={}:{:.4g}", b.length, b.mean_abs_log_ratio);
    out << fmt::format("offline: {} vs {} from {}, {} trajectories, mean |log ratio|{}\n", describe(rc.train.engines.rollout),
                       describe(rc.train.engines.trainer), source, records.size(), parts);
    return kOk;
}

inline int cmd_build_dataset(const CommonOptions& o, std::ostream& out) {
    const auto rc = load(o, true);
    const auto ds = build_dataset(rc.train);
    auto os = open_out(under(o, "dataset.csv"));
    os << "modulus,target,length,initial_accuracy\n";
    for (std::size_t i = 0; i < ds.size(); ++i)
        os << ds.tasks[i].modulus << ',' << ds.tasks[i].target << ',' << ds.tasks[i].length << ',' << csv_number(ds.accuracy[i]) << '\n';
    out << fmt::format("build-dataset: kept {} of {} candidates in [{}, {}] under {}\n", ds.size(), ds.candidates, ds.low, ds.high,
                       describe(rc.train.engines.rollout));
    return kOk;
}

inline int cmd_train(const CommonOptions& o, std::ostream& out) {
    const auto rc = load(o, true);
    const auto ds = build_dataset(rc.train);
    const auto run = train(rc.train, ds);
    {
        auto os = open_out(under(o, "run_summary.csv"));
        run.summary.write_csv(os);
    }
    {
        auto os = open_out(under(o, "mismatch.jsonl"));
        write_jsonl(os, run.mismatch);
    }
    for (const auto& ck : run.checkpoints) write_checkpoint_file(under(o, fmt::format("checkpoints/step_{}.bin", ck.step)), ck);
    const auto v = judge(rc.train, run);
    if (run.aborted) {
        out << fmt::format("train: ABORTED after {} iterations: {}\n", run.summary.rewards().size(), run.abort_reason);
        return kRunFailed;
    }
    out << fmt::format("train: {} {} iterations, best reward {:.4f}, final reward {:.4f}, {}{}\n", to_string(rc.train.estimator.kind),
                       run.summary.rewards().size(), v.best_reward, v.final_reward, v.passed ? "PASS" : "FAIL",
                       v.collapse.collapsed ? fmt::format(" (collapsed at step {})", v.collapse.step) : std::string());
    return kOk;
}

inline int run_grid(const CommonOptions& o, const std::vector<SanityCell>& grid, const TrainConfig& base, const std::string& file,
                    const std::string& name, std::ostream& out) {
    const auto ds = build_dataset(base);
    const auto rows = sanity_test(grid, ds);
    {
        auto os = open_out(under(o, file));
        write_sanity_csv(os, rows);
    }
    std::size_t passed = 0, aborted = 0;
    for (const auto& r : rows) {
        passed += r.status == "PASS";
        aborted += r.aborted;
    }
    out << fmt::format("{}: {} cells, {} passed, {} failed ({} aborted), table in {}\n", name, rows.size(), passed, rows.size() - passed,
                       aborted, under(o, file).string());
    return kOk;
}

inline int cmd_sanity(const CommonOptions& o, std::ostream& out) {
    const auto rc = load(o, true);
    return run_grid(o, sanity_grid(rc), rc.train, "sanity_table.csv", "sanity", out);
}

inline int cmd_ablate(const CommonOptions& o, std::ostream& out) {
    const auto rc = load(o, true);
    return run_grid(o, ablation_grid(rc.train, rc.ablate_formats), rc.train, "ablation_table.csv", "ablate", out);
}

/// Long-format (source, x, metric, value) rows from whatever run artifacts
/// exist under --out.
inline int cmd_report(const CommonOptions& o, std::ostream& out) {
    std::size_t sources = 0, rows = 0;
    std::ostringstream body;
    auto emit = [&](const std::string& source, const std::string& x, const std::string& metric, const std::string& value) {
        if (value.empty()) return;
        body << source << ',' << x << ',' << metric << ',' << value << '\n';
        ++rows;
    };

    if (std::ifstream is(under(o, "run_summary.csv")); is) {
        ++sources;
        std::string line;
        std::getline(is, line);
        const auto header = split_csv(line);
        while (std::getline(is, line)) {
            const auto cells = split_csv(line);
            for (std::size_t c = 1; c < cells.size() && c < header.size(); ++c) emit("run_summary", cells[0], header[c], cells[c]);
        }
    }

    if (std::ifstream is(under(o, "mismatch.jsonl")); is) {
        ++sources;
        std::vector<MismatchRecord> recs;
        std::map<std::size_t, std::vector<MismatchRecord>> by_step;
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            MismatchRecord r;
            r.step = j.at("step").get<std::size_t>();
            r.length = j.at("length").get<std::size_t>();
            r.seq_log_ratio = j.at("seq_log_ratio").get<double>();
            const auto& pr = j.at("p_rollout");
            const auto& pt = j.at("p_train");
            for (std::size_t t = 0; t < pr.size(); ++t) {
                const double diff = pt[t].get<double>() - pr[t].get<double>();
                emit("token_prob_diff", csv_number(pr[t].get<double>()), "p_train_minus_p_rollout", csv_number(diff));
            }
            by_step[r.step].push_back(std::move(r));
        }
        for (const auto& [step, rs] : by_step)
            for (const auto& b : bucket_by_length(rs)) {
                emit(fmt::format("mismatch_step_{}", step), std::to_string(b.length), "mean_abs_seq_log_ratio", csv_number(b.mean_abs_log_ratio));
                emit(fmt::format("mismatch_step_{}", step), std::to_string(b.length), "count", std::to_string(b.count));
            }
    }

    for (const auto& [file, source] : {std::pair{"sanity_table.csv", "sanity"}, std::pair{"ablation_table.csv", "ablate"}}) {
        std::ifstream is(under(o, file));
        if (!is) continue;
        ++sources;
        std::string line;
        std::getline(is, line);
        const auto header = split_csv(line);
        while (std::getline(is, line)) {
            const auto cells = split_csv(line);
            for (std::size_t c = 4; c + 1 < cells.size() && c < header.size(); ++c) emit(source, cells[0], header[c], cells[c]);
        }
    }

    if (sources == 0) throw MissingInput("no run artifacts under " + o.out + " (expected run_summary.csv, mismatch.jsonl or a table)");
    auto os = open_out(under(o, "report.csv"));
    os << "source,x,metric,value\n" << body.str();
    out << fmt::format("report: {} rows from {} inputs written to {}\n", rows, sources, under(o, "report.csv").string());
    return kOk;
}

} // namespace detail

/// Parses argv and runs one subcommand.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"fplab: floating-point training/inference mismatch laboratory", "fplab-cli"};
    app.require_subcommand(1, 1);
    CommonOptions opts;
    std::string command;

    struct Sub {
        const char* name;
        const char* help;
    };
    const Sub subs[] = {
        {"formats", "print smallest normal, largest finite and next-above-one for fp16, bf16 and fp32"},
        {"offline", "score fixed-length trajectories with both engines and bucket the mismatch by length"},
        {"build-dataset", "filter candidate tasks into the perfectible dataset"},
        {"train", "run one training job"},
        {"sanity", "run the estimator x precision sanity grid"},
        {"ablate", "run the trainer-format x rollout-format grid"},
        {"report", "flatten run artifacts under --out into long-format CSV"},
    };
    for (const auto& s : subs) {
        auto* sub = app.add_subcommand(s.name, s.help);
        sub->add_option("--config", opts.config, "YAML run config")->check(CLI::ExistingFile);
        sub->add_option("--seed", opts.seed, "override the config seed");
        sub->add_option("--out", opts.out, "output directory")->capture_default_str();
        sub->callback([&command, name = std::string(s.name)] { command = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (command == "formats") return detail::cmd_formats(out);
        if (command == "offline") return detail::cmd_offline(opts, out);
        if (command == "build-dataset") return detail::cmd_build_dataset(opts, out);
        if (command == "train") return detail::cmd_train(opts, out);
        if (command == "sanity") return detail::cmd_sanity(opts, out);
        if (command == "ablate") return detail::cmd_ablate(opts, out);
        if (command == "report") return detail::cmd_report(opts, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const detail::MissingInput& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << command << " failed: " << e.what() << '\n';
        return kRunFailed;
    }
    return kUsage;
}

} // namespace fplab::cli
