// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration files (YAML). Every key is optional and defaults to the
// value in the corresponding struct; unknown keys are rejected by full
// dotted path.
//
//   seed: 1
//   iterations: 120
//   policy: {vocab_size: 8, context_window: 4, embed_dim: 16, hidden_dim: 32}
//   engines:
//     rollout: {format: bf16, reduce: sequential, mode: autoregressive}
//     trainer: {format: bf16, reduce: pairwise, mode: parallel}
//   estimator: {kind: pg_seq_is, clip: 3}
//   optimizer: {kind: momentum, lr: 0.05}
//   dataset: {modulus_max: 4}

#pragma once

#include "fplab/harness.hpp"

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fplab {

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what) : std::runtime_error(key.empty() ? what : "'" + key + "': " + what), key_(std::move(key)) {}
    [[nodiscard]] const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// Estimator x engine-pair grid for `sanity`. Each listed format becomes a
/// divergent pair; each perturbation is applied to the rollout engine.
struct SanityGridConfig {
    std::vector<EstimatorKind> estimators{EstimatorKind::PgSeqIs, EstimatorKind::ReinforceNaive};
    std::vector<FloatFormat> formats{fplab::formats::fp16(), fplab::formats::bf16()};
    std::vector<double> perturbations{0.0};
    std::uint64_t perturbation_key = 0x6d69736d;
};

struct RunConfig {
    TrainConfig train;
    OfflineConfig offline;
    std::string offline_checkpoint; ///< empty: a freshly initialised policy
    SanityGridConfig sanity;
    std::vector<FloatFormat> ablate_formats{formats::fp16(), formats::bf16(), formats::fp32()};
};

namespace detail {

class MapReader {
public:
    MapReader(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(path_, "expected a mapping");
    }

    ~MapReader() = default;
    MapReader(const MapReader&) = delete;
    MapReader& operator=(const MapReader&) = delete;

    template <class T>
    void read(const std::string& key, T& out) {
        const auto v = take(key);
        if (!v || v.IsNull()) return;
        try {
            out = v.template as<T>();
        } catch (const YAML::Exception&) {
            throw ConfigError(join(key), "cannot parse value '" + scalar(v) + "'");
        }
    }

    template <class Fn>
    void read_with(const std::string& key, Fn&& parse) {
        const auto v = take(key);
        if (!v || v.IsNull()) return;
        try {
            parse(v);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(join(key), e.what());
        }
    }

    YAML::Node sub(const std::string& key) { return take(key); }
    [[nodiscard]] std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    /// Throws on the first key that no read() consumed.
    void finish() const {
        if (!node_ || !node_.IsMap()) return;
        for (const auto& kv : node_) {
            const auto k = kv.first.as<std::string>();
            if (!seen_.count(k)) throw ConfigError(join(k), "unknown key");
        }
    }

private:
    YAML::Node take(const std::string& key) {
        if (!node_ || !node_.IsMap()) return YAML::Node(YAML::NodeType::Null);
        seen_.insert(key);
        const YAML::Node& n = node_;
        const YAML::Node v = n[key];
        if (!v.IsDefined() || v.IsNull()) return YAML::Node(YAML::NodeType::Null);
        return v;
    }
    static std::string scalar(const YAML::Node& v) {
        std::stringstream ss;
        ss << v;
        return ss.str();
    }

    YAML::Node node_;
    std::string path_;
    std::set<std::string> seen_;
};

inline FloatFormat format_value(const YAML::Node& v) { return parse_format(v.as<std::string>()); }

inline void read_engine(MapReader& parent, const std::string& key, EngineSpec& spec) {
    const auto node = parent.sub(key);
    MapReader r(node, parent.join(key));
    r.read_with("format", [&](const YAML::Node& v) { spec.format = format_value(v); });
    r.read_with("reduce", [&](const YAML::Node& v) { spec.order = parse_reduction_order(v.as<std::string>()); });
    r.read_with("mode", [&](const YAML::Node& v) { spec.mode = parse_scoring_mode(v.as<std::string>()); });
    r.read("perturbation", spec.logit_perturbation);
    r.read("perturbation_key", spec.perturbation_key);
    r.finish();
    if (!(spec.logit_perturbation >= 0.0)) throw ConfigError(parent.join(key) + ".perturbation", "must be >= 0");
}

template <class T, class Fn>
std::vector<T> list_of(const YAML::Node& v, Fn&& each) {
    if (!v.IsSequence()) throw std::invalid_argument("expected a list");
    std::vector<T> out;
    for (const auto& item : v) out.push_back(each(item));
    return out;
}

} // namespace detail

/// Parses a YAML document into a run configuration and validates it.
inline RunConfig parse_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError("", std::string("malformed config: ") + e.what());
    }
    RunConfig rc;
    auto& t = rc.train;
    detail::MapReader top(root, "");
    top.read("seed", t.seed);
    top.read("threads", t.threads);
    top.read("iterations", t.iterations);
    top.read("prompts_per_iteration", t.prompts_per_iteration);
    top.read("grad_steps", t.grad_steps);
    top.read("eval_every", t.eval_every);
    top.read("eval_size", t.eval_size);
    top.read("mismatch_every", t.mismatch_every);
    top.read("checkpoint_every", t.checkpoint_every);
    {
        detail::MapReader r(top.sub("policy"), "policy");
        r.read("vocab_size", t.policy.vocab_size);
        r.read("context_window", t.policy.context_window);
        r.read("embed_dim", t.policy.embed_dim);
        r.read("hidden_dim", t.policy.hidden_dim);
        r.read("init_gain", t.init_gain);
        r.finish();
    }
    {
        detail::MapReader r(top.sub("engines"), "engines");
        r.read_with("preset", [&](const YAML::Node& v) {
            const auto s = v.as<std::string>();
            const auto pos = s.find(':');
            const auto kind = s.substr(0, pos);
            const auto fmt_name = pos == std::string::npos ? std::string("fp16") : s.substr(pos + 1);
            if (kind == "divergent") t.engines = EnginePair::divergent(parse_format(fmt_name));
            else if (kind == "identical") t.engines = EnginePair::identical({parse_format(fmt_name)});
            else throw std::invalid_argument("unknown preset '" + s + "' (expected divergent:FMT or identical:FMT)");
        });
        detail::read_engine(r, "rollout", t.engines.rollout);
        detail::read_engine(r, "trainer", t.engines.trainer);
        r.read_with("backward_format", [&](const YAML::Node& v) { t.backward_format = detail::format_value(v); });
        r.finish();
    }
    {
        detail::MapReader r(top.sub("estimator"), "estimator");
        r.read_with("kind", [&](const YAML::Node& v) { t.estimator.kind = parse_estimator_kind(v.as<std::string>()); });
        r.read("clip", t.estimator.clip_c);
        r.read("eps_low", t.estimator.eps_low);
        r.read("eps_high", t.estimator.eps_high);
        r.read("group_size", t.estimator.group_size);
        r.finish();
    }
    {
        detail::MapReader r(top.sub("optimizer"), "optimizer");
        r.read_with("kind", [&](const YAML::Node& v) { t.optimizer.kind = parse_optimizer_kind(v.as<std::string>()); });
        r.read("lr", t.optimizer.learning_rate);
        r.read("momentum", t.optimizer.momentum);
        r.read("beta1", t.optimizer.beta1);
        r.read("beta2", t.optimizer.beta2);
        r.read("epsilon", t.optimizer.epsilon);
        r.finish();
    }
    {
        detail::MapReader r(top.sub("scaler"), "scaler");
        r.read_with("mode", [&](const YAML::Node& v) { t.scaler_mode = parse_scaler_mode(v.as<std::string>()); });
        r.read("initial_scale", t.scaler.initial_scale);
        r.read("growth_factor", t.scaler.growth_factor);
        r.read("backoff_factor", t.scaler.backoff_factor);
        r.read("growth_interval", t.scaler.growth_interval);
        r.read("min_scale", t.scaler.min_scale);
        r.read("max_scale", t.scaler.max_scale);
        r.finish();
    }
    {
        detail::MapReader r(top.sub("dataset"), "dataset");
        r.read("modulus_min", t.dataset.family.modulus_min);
        r.read("modulus_max", t.dataset.family.modulus_max);
        r.read("length_min", t.dataset.family.length_min);
        r.read("length_max", t.dataset.family.length_max);
        r.read("candidates", t.dataset.candidates);
        r.read("rollouts", t.dataset.rollouts);
        r.read("low", t.dataset.low);
        r.read("high", t.dataset.high);
        r.finish();
    }
    {
        detail::MapReader r(top.sub("pass"), "pass");
        r.read("threshold", t.pass_threshold);
        r.read("window", t.pass_window);
        r.finish();
    }
    {
        detail::MapReader r(top.sub("collapse"), "collapse");
        r.read("window", t.collapse_window);
        r.read("drop", t.collapse_drop);
        r.finish();
    }
    {
        detail::MapReader r(top.sub("offline"), "offline");
        r.read("lengths", rc.offline.lengths);
        r.read("samples", rc.offline.samples);
        r.read("checkpoint", rc.offline_checkpoint);
        r.finish();
    }
    {
        detail::MapReader r(top.sub("sanity"), "sanity");
        r.read_with("estimators", [&](const YAML::Node& v) {
            rc.sanity.estimators = detail::list_of<EstimatorKind>(v, [](const YAML::Node& i) { return parse_estimator_kind(i.as<std::string>()); });
        });
        r.read_with("formats", [&](const YAML::Node& v) { rc.sanity.formats = detail::list_of<FloatFormat>(v, detail::format_value); });
        r.read("perturbations", rc.sanity.perturbations);
        r.read("perturbation_key", rc.sanity.perturbation_key);
        r.finish();
    }
    {
        detail::MapReader r(top.sub("ablate"), "ablate");
        r.read_with("formats", [&](const YAML::Node& v) { rc.ablate_formats = detail::list_of<FloatFormat>(v, detail::format_value); });
        r.finish();
    }
    top.finish();

    rc.offline.seed = t.seed;
    rc.offline.threads = t.threads;
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        throw ConfigError(msg.substr(0, msg.find(' ')), msg);
    }
    for (double p : rc.sanity.perturbations)
        if (!(p >= 0.0)) throw ConfigError("sanity.perturbations", "perturbations must be >= 0");
    if (rc.offline.samples < 1) throw ConfigError("offline.samples", "must be >= 1");
    return rc;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Cells of the sanity grid: formats x perturbations x estimators.
inline std::vector<SanityCell> sanity_grid(const RunConfig& rc) {
    std::vector<SanityCell> cells;
    for (const auto& f : rc.sanity.formats) {
        for (double eps : rc.sanity.perturbations) {
            for (auto kind : rc.sanity.estimators) {
                SanityCell cell{fmt::format("{}/{}{}", f.name, to_string(kind), eps > 0.0 ? fmt::format("/perturb={}", eps) : ""), rc.train};
                cell.config.engines.rollout.format = f;
                cell.config.engines.trainer.format = f;
                cell.config.engines.rollout.logit_perturbation = eps;
                cell.config.engines.rollout.perturbation_key = rc.sanity.perturbation_key;
                cell.config.estimator.kind = kind;
                cells.push_back(std::move(cell));
            }
        }
    }
    return cells;
}

} // namespace fplab
