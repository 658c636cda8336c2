// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0
//
// Fixed-window MLP policy over a small vocabulary:
//
//   x      = concat(E[w_1], ..., E[w_k])            (k*d)
//   hidden = tanh(x W1 + b1)                        (h)
//   logits = hidden W2 + b2                         (V)
//
// w_1..w_k are the last k tokens of prompt ++ response, left-padded with the
// reserved pad token V. Master weights are double; every forward op is routed
// through the numerics layer in the evaluating engine's format.

#pragma once

#include "fplab/numerics.hpp"
#include "fplab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fplab {

struct PolicyConfig {
    int vocab_size = 8;
    int context_window = 4;
    int embed_dim = 16;
    int hidden_dim = 32;

    [[nodiscard]] int pad_token() const noexcept { return vocab_size; }
    [[nodiscard]] int input_vocab() const noexcept { return vocab_size + 1; }
    [[nodiscard]] int input_width() const noexcept { return context_window * embed_dim; }

    [[nodiscard]] std::size_t parameter_count() const noexcept {
        const auto V = static_cast<std::size_t>(vocab_size), k = static_cast<std::size_t>(context_window),
                   d = static_cast<std::size_t>(embed_dim), h = static_cast<std::size_t>(hidden_dim);
        return (V + 1) * d + k * d * h + h + h * V + V;
    }

    void validate() const {
        if (vocab_size < 2) throw std::invalid_argument("policy.vocab_size must be >= 2");
        if (context_window < 1) throw std::invalid_argument("policy.context_window must be >= 1");
        if (embed_dim < 1 || hidden_dim < 1) throw std::invalid_argument("policy.embed_dim and policy.hidden_dim must be >= 1");
        if (parameter_count() >= 1'000'000) throw std::invalid_argument("policy has >= 1e6 parameters");
    }

    friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

/// Flat parameter vector; the gradient layout matches index for index.
///
/// Layout: [ E (V+1)xd | W1 (k*d)xh row-major | b1 h | W2 hxV row-major | b2 V ]
class PolicyParams {
public:
    PolicyParams() = default;
    explicit PolicyParams(PolicyConfig cfg) : config_(cfg), data_(cfg.parameter_count(), 0.0) { cfg.validate(); }
    PolicyParams(PolicyConfig cfg, std::vector<double> data) : config_(cfg), data_(std::move(data)) {
        cfg.validate();
        if (data_.size() != cfg.parameter_count()) throw std::invalid_argument("parameter vector has wrong length");
    }

    static PolicyParams zeros(PolicyConfig cfg) { return PolicyParams(cfg); }

    /// Gaussian init. Hidden layer is scaled by 1/sqrt(fan_in); output_gain
    /// additionally scales W2 and controls how peaked the initial policy is.
    static PolicyParams random(PolicyConfig cfg, std::uint64_t seed, double output_gain = 1.0) {
        PolicyParams p(cfg);
        CounterRng rng({seed, 0x706f6c696379ull});
        for (auto& e : p.embedding()) e = rng.normal();
        const double s1 = 1.0 / std::sqrt(static_cast<double>(cfg.input_width()));
        for (auto& w : p.w1()) w = s1 * rng.normal();
        const double s2 = output_gain / std::sqrt(static_cast<double>(cfg.hidden_dim));
        for (auto& w : p.w2()) w = s2 * rng.normal();
        return p;
    }

    [[nodiscard]] const PolicyConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::span<double> flat() noexcept { return data_; }
    [[nodiscard]] std::span<const double> flat() const noexcept { return data_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::span<double> embedding() noexcept { return section(0, embedding_size()); }
    [[nodiscard]] std::span<double> w1() noexcept { return section(w1_offset(), w1_size()); }
    [[nodiscard]] std::span<double> b1() noexcept { return section(b1_offset(), hidden()); }
    [[nodiscard]] std::span<double> w2() noexcept { return section(w2_offset(), w2_size()); }
    [[nodiscard]] std::span<double> b2() noexcept { return section(b2_offset(), vocab()); }

    [[nodiscard]] std::span<const double> embedding() const noexcept { return csection(0, embedding_size()); }
    [[nodiscard]] std::span<const double> w1() const noexcept { return csection(w1_offset(), w1_size()); }
    [[nodiscard]] std::span<const double> b1() const noexcept { return csection(b1_offset(), hidden()); }
    [[nodiscard]] std::span<const double> w2() const noexcept { return csection(w2_offset(), w2_size()); }
    [[nodiscard]] std::span<const double> b2() const noexcept { return csection(b2_offset(), vocab()); }

    [[nodiscard]] std::size_t w1_offset() const noexcept { return embedding_size(); }
    [[nodiscard]] std::size_t b1_offset() const noexcept { return w1_offset() + w1_size(); }
    [[nodiscard]] std::size_t w2_offset() const noexcept { return b1_offset() + hidden(); }
    [[nodiscard]] std::size_t b2_offset() const noexcept { return w2_offset() + w2_size(); }

    [[nodiscard]] bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

private:
    std::size_t vocab() const noexcept { return static_cast<std::size_t>(config_.vocab_size); }
    std::size_t hidden() const noexcept { return static_cast<std::size_t>(config_.hidden_dim); }
    std::size_t embedding_size() const noexcept {
        return static_cast<std::size_t>(config_.input_vocab()) * static_cast<std::size_t>(config_.embed_dim);
    }
    std::size_t w1_size() const noexcept { return static_cast<std::size_t>(config_.input_width()) * hidden(); }
    std::size_t w2_size() const noexcept { return hidden() * vocab(); }
    std::span<double> section(std::size_t off, std::size_t n) noexcept { return std::span<double>(data_).subspan(off, n); }
    std::span<const double> csection(std::size_t off, std::size_t n) const noexcept {
        return std::span<const double>(data_).subspan(off, n);
    }

    PolicyConfig config_{};
    std::vector<double> data_;
};

/// Immutable parameter copy (the sampling parameters of an iteration).
using PolicySnapshot = std::shared_ptr<const PolicyParams>;

inline PolicySnapshot snapshot(const PolicyParams& p) { return std::make_shared<const PolicyParams>(p); }

/// Last k tokens of prompt ++ response[0, position), left-padded.
inline std::vector<int> context_window(const PolicyConfig& cfg, std::span<const int> prompt,
                                       std::span<const int> response, std::size_t position) {
    const auto k = static_cast<std::size_t>(cfg.context_window);
    std::vector<int> window(k, cfg.pad_token());
    const std::size_t total = prompt.size() + position;
    for (std::size_t slot = 0; slot < k; ++slot) {
        // slot k-1 is the most recent token
        const std::size_t back = k - 1 - slot;
        if (back >= total) continue;
        const std::size_t idx = total - 1 - back;
        window[slot] = idx < prompt.size() ? prompt[idx] : response[idx - prompt.size()];
    }
    return window;
}

inline void check_tokens(const PolicyConfig& cfg, std::span<const int> tokens, bool allow_pad) {
    const int limit = allow_pad ? cfg.input_vocab() : cfg.vocab_size;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= limit) {
            throw std::out_of_range("token id " + std::to_string(tokens[i]) + " at index " + std::to_string(i) +
                                    " outside vocabulary of size " + std::to_string(limit));
        }
    }
}

struct ForwardResult {
    std::vector<double> logits;
    bool overflow = false; ///< any non-finite logit
};

/// Output of the quantized log-softmax stage.
struct TokenDistribution {
    std::vector<double> logprobs;
    std::vector<double> probs;
    bool overflow = false;
};

/// Log-softmax with max subtraction; every op rounded in `f`.
inline TokenDistribution log_softmax(const FloatFormat& f, ReductionOrder order, std::span<const double> logits) {
    TokenDistribution out;
    const std::size_t V = logits.size();
    out.logprobs.resize(V);
    out.probs.resize(V);
    double mx = -std::numeric_limits<double>::infinity();
    for (double l : logits) mx = std::max(mx, l);
    std::vector<double> shifted(V), e(V);
    for (std::size_t v = 0; v < V; ++v) {
        shifted[v] = qsub(f, logits[v], mx);
        e[v] = qexp(f, shifted[v]);
    }
    const double z = reduce(f, e, order);
    const double log_z = qlog(f, z);
    for (std::size_t v = 0; v < V; ++v) {
        out.logprobs[v] = qsub(f, shifted[v], log_z);
        out.probs[v] = qdiv(f, e[v], z);
    }
    out.overflow = !std::isfinite(mx) || !std::isfinite(log_z);
    return out;
}

/// The policy bound to one evaluation format and reduction order. Weights
/// are quantized once at construction from the master copy.
class PolicyEvaluator {
public:
    PolicyEvaluator(const PolicyParams& params, FloatFormat format, ReductionOrder order)
        : cfg_(params.config()), format_(std::move(format)), order_(order) {
        embedding_ = quantized(params.embedding());
        b1_ = quantized(params.b1());
        b2_ = quantized(params.b2());
        // Stored transposed so each output unit reads a contiguous row.
        const auto in = static_cast<std::size_t>(cfg_.input_width());
        const auto h = static_cast<std::size_t>(cfg_.hidden_dim);
        const auto V = static_cast<std::size_t>(cfg_.vocab_size);
        w1t_.resize(in * h);
        for (std::size_t i = 0; i < in; ++i)
            for (std::size_t j = 0; j < h; ++j) w1t_[j * in + i] = quantize(format_, params.w1()[i * h + j]);
        w2t_.resize(h * V);
        for (std::size_t j = 0; j < h; ++j)
            for (std::size_t v = 0; v < V; ++v) w2t_[v * h + j] = quantize(format_, params.w2()[j * V + v]);
    }

    [[nodiscard]] const PolicyConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const FloatFormat& format() const noexcept { return format_; }
    [[nodiscard]] ReductionOrder order() const noexcept { return order_; }

    struct Activations {
        std::vector<double> input;  ///< k*d
        std::vector<double> hidden; ///< h, post-tanh
        std::vector<double> logits; ///< V
    };

    [[nodiscard]] Activations activations(std::span<const int> window) const {
        const auto d = static_cast<std::size_t>(cfg_.embed_dim);
        const auto in = static_cast<std::size_t>(cfg_.input_width());
        const auto h = static_cast<std::size_t>(cfg_.hidden_dim);
        const auto V = static_cast<std::size_t>(cfg_.vocab_size);
        Activations a;
        a.input.resize(in);
        for (std::size_t slot = 0; slot < window.size(); ++slot)
            std::copy_n(embedding_.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(window[slot]) * d), d,
                        a.input.begin() + static_cast<std::ptrdiff_t>(slot * d));

        std::vector<double> terms(std::max(in, h));
        a.hidden.resize(h);
        for (std::size_t j = 0; j < h; ++j) {
            const double* row = &w1t_[j * in];
            for (std::size_t i = 0; i < in; ++i) terms[i] = qmul(format_, a.input[i], row[i]);
            const double s = reduce(format_, std::span<const double>(terms.data(), in), order_);
            a.hidden[j] = qtanh(format_, qadd(format_, s, b1_[j]));
        }
        a.logits.resize(V);
        for (std::size_t v = 0; v < V; ++v) {
            const double* row = &w2t_[v * h];
            for (std::size_t j = 0; j < h; ++j) terms[j] = qmul(format_, a.hidden[j], row[j]);
            const double s = reduce(format_, std::span<const double>(terms.data(), h), order_);
            a.logits[v] = qadd(format_, s, b2_[v]);
        }
        return a;
    }

    [[nodiscard]] ForwardResult logits(std::span<const int> window) const {
        ForwardResult r{activations(window).logits, false};
        r.overflow = std::any_of(r.logits.begin(), r.logits.end(), [](double l) { return !std::isfinite(l); });
        return r;
    }

    [[nodiscard]] TokenDistribution distribution(std::span<const int> window) const {
        auto fwd = logits(window);
        auto dist = log_softmax(format_, order_, fwd.logits);
        dist.overflow = dist.overflow || fwd.overflow;
        return dist;
    }

    /// Quantized weights, exposed for the low-precision backward pass.
    [[nodiscard]] double w1(std::size_t i, std::size_t j) const noexcept {
        return w1t_[j * static_cast<std::size_t>(cfg_.input_width()) + i];
    }
    [[nodiscard]] double w2(std::size_t j, std::size_t v) const noexcept {
        return w2t_[v * static_cast<std::size_t>(cfg_.hidden_dim) + j];
    }

private:
    std::vector<double> quantized(std::span<const double> w) const {
        std::vector<double> out(w.size());
        std::transform(w.begin(), w.end(), out.begin(), [&](double x) { return quantize(format_, x); });
        return out;
    }

    PolicyConfig cfg_;
    FloatFormat format_;
    ReductionOrder order_;
    std::vector<double> embedding_, w1t_, b1_, w2t_, b2_;
};

inline ForwardResult forward_logits(const PolicyParams& params, std::span<const int> prompt, std::span<const int> history,
                                    const FloatFormat& format, ReductionOrder order) {
    const auto& cfg = params.config();
    check_tokens(cfg, prompt, true);
    check_tokens(cfg, history, false);
    PolicyEvaluator eval(params, format, order);
    return eval.logits(context_window(cfg, prompt, history, history.size()));
}

struct SequenceLogprob {
    double total = 0.0;
    std::vector<double> per_token;
    bool overflow = false;
};

/// Per-token log-probabilities and their quantized running sum.
inline SequenceLogprob sequence_logprob(const PolicyEvaluator& eval, std::span<const int> prompt, std::span<const int> tokens) {
    const auto& cfg = eval.config();
    if (tokens.empty()) throw std::invalid_argument("sequence_logprob requires a non-empty token sequence");
    check_tokens(cfg, prompt, true);
    check_tokens(cfg, tokens, false);
    SequenceLogprob out;
    out.per_token.reserve(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const auto dist = eval.distribution(context_window(cfg, prompt, tokens, t));
        out.per_token.push_back(dist.logprobs[static_cast<std::size_t>(tokens[t])]);
        out.overflow = out.overflow || dist.overflow;
    }
    out.total = out.per_token[0];
    for (std::size_t t = 1; t < out.per_token.size(); ++t) out.total = qadd(eval.format(), out.total, out.per_token[t]);
    return out;
}

inline SequenceLogprob sequence_logprob(const PolicyParams& params, std::span<const int> prompt, std::span<const int> tokens,
                                        const FloatFormat& format, ReductionOrder order) {
    return sequence_logprob(PolicyEvaluator(params, format, order), prompt, tokens);
}

// ---------------------------------------------------------------------------
// Backward pass

namespace detail {
struct ExactArith {
    double add(double a, double b) const noexcept { return a + b; }
    double mul(double a, double b) const noexcept { return a * b; }
    double sub(double a, double b) const noexcept { return a - b; }
};
struct RoundedArith {
    const FloatFormat* f;
    double add(double a, double b) const noexcept { return qadd(*f, a, b); }
    double mul(double a, double b) const noexcept { return qmul(*f, a, b); }
    double sub(double a, double b) const noexcept { return qsub(*f, a, b); }
};

/// Accumulates weight * d log pi(token | window) / d theta into grad.
template <class Arith>
void backward_token(const Arith& ar, const PolicyEvaluator& eval, std::span<const int> window, int token, double weight,
                    std::span<double> grad, std::size_t w1_off, std::size_t b1_off, std::size_t w2_off, std::size_t b2_off) {
    const auto& cfg = eval.config();
    const auto d = static_cast<std::size_t>(cfg.embed_dim);
    const auto in = static_cast<std::size_t>(cfg.input_width());
    const auto h = static_cast<std::size_t>(cfg.hidden_dim);
    const auto V = static_cast<std::size_t>(cfg.vocab_size);

    const auto act = eval.activations(window);
    const auto dist = log_softmax(eval.format(), eval.order(), act.logits);

    std::vector<double> g_logit(V);
    for (std::size_t v = 0; v < V; ++v) {
        const double onehot = static_cast<int>(v) == token ? 1.0 : 0.0;
        g_logit[v] = ar.mul(weight, ar.sub(onehot, dist.probs[v]));
    }
    std::vector<double> g_z(h);
    for (std::size_t j = 0; j < h; ++j) {
        double g_h = 0.0;
        for (std::size_t v = 0; v < V; ++v) {
            auto& gw = grad[w2_off + j * V + v];
            gw = ar.add(gw, ar.mul(act.hidden[j], g_logit[v]));
            g_h = ar.add(g_h, ar.mul(eval.w2(j, v), g_logit[v]));
        }
        g_z[j] = ar.mul(g_h, ar.sub(1.0, ar.mul(act.hidden[j], act.hidden[j])));
        grad[b1_off + j] = ar.add(grad[b1_off + j], g_z[j]);
    }
    for (std::size_t v = 0; v < V; ++v) grad[b2_off + v] = ar.add(grad[b2_off + v], g_logit[v]);
    for (std::size_t i = 0; i < in; ++i) {
        double g_x = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
            auto& gw = grad[w1_off + i * h + j];
            gw = ar.add(gw, ar.mul(act.input[i], g_z[j]));
            g_x = ar.add(g_x, ar.mul(eval.w1(i, j), g_z[j]));
        }
        const std::size_t slot = i / d, e = i % d;
        auto& ge = grad[static_cast<std::size_t>(window[slot]) * d + e];
        ge = ar.add(ge, g_x);
    }
}
} // namespace detail

/// Optional reduced-precision backward: activations come from the given
/// forward format/order and every backward op is rounded to `format`.
struct LowPrecisionBackward {
    FloatFormat forward_format;
    ReductionOrder forward_order = ReductionOrder::Pairwise;
    FloatFormat format;
};

/// grad += sum_t weights[t] * d log pi(tokens[t] | prefix) / d theta.
/// Full precision (fp64 forward and backward on the master copy) unless
/// `low_precision` is set.
inline void accumulate_logprob_gradient(const PolicyParams& params, std::span<const int> prompt, std::span<const int> tokens,
                                        std::span<const double> weights, std::span<double> grad,
                                        const std::optional<LowPrecisionBackward>& low_precision = std::nullopt) {
    const auto& cfg = params.config();
    if (weights.size() != tokens.size()) throw std::invalid_argument("per-token weight count does not match token count");
    if (grad.size() != params.size()) throw std::invalid_argument("gradient buffer does not match parameter count");
    for (std::size_t t = 0; t < weights.size(); ++t)
        if (!std::isfinite(weights[t])) throw std::invalid_argument("non-finite per-token weight at token index " + std::to_string(t));
    check_tokens(cfg, prompt, true);
    check_tokens(cfg, tokens, false);

    const std::size_t w1o = params.w1_offset(), b1o = params.b1_offset(), w2o = params.w2_offset(), b2o = params.b2_offset();
    if (!low_precision) {
        const PolicyEvaluator eval(params, formats::fp64(), ReductionOrder::Sequential);
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            if (weights[t] == 0.0) continue;
            detail::backward_token(detail::ExactArith{}, eval, context_window(cfg, prompt, tokens, t), tokens[t], weights[t], grad,
                                   w1o, b1o, w2o, b2o);
        }
        return;
    }
    const PolicyEvaluator eval(params, low_precision->forward_format, low_precision->forward_order);
    const detail::RoundedArith ar{&low_precision->format};
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (weights[t] == 0.0) continue;
        detail::backward_token(ar, eval, context_window(cfg, prompt, tokens, t), tokens[t], quantize(low_precision->format, weights[t]),
                               grad, w1o, b1o, w2o, b2o);
    }
}

inline std::vector<double> logprob_gradient(const PolicyParams& params, std::span<const int> prompt, std::span<const int> tokens,
                                            std::span<const double> weights,
                                            const std::optional<LowPrecisionBackward>& low_precision = std::nullopt) {
    std::vector<double> grad(params.size(), 0.0);
    accumulate_logprob_gradient(params, prompt, tokens, weights, grad, low_precision);
    return grad;
}

// ---------------------------------------------------------------------------
// Sampling

struct SampleResult {
    int token = 0;
    bool renormalized = false; ///< probabilities missed 1 by more than 4 ulp
};

/// Inverse-CDF draw over an engine's quantized probability vector. The draw
/// is scaled by the exact total, so the sampled law is the vector itself.
inline SampleResult sample_from(const FloatFormat& f, ReductionOrder order, std::span<const double> probs, CounterRng& rng) {
    SampleResult r;
    const double in_format = reduce(f, probs, order);
    const double tol = 4.0 * (f.is_native() ? std::numeric_limits<double>::epsilon() : f.epsilon());
    r.renormalized = !(std::fabs(in_format - 1.0) <= tol);

    double total = 0.0;
    for (double p : probs) total += (std::isfinite(p) && p > 0.0) ? p : 0.0;
    const double target = rng.uniform() * total;
    double cum = 0.0;
    int last_positive = 0;
    for (std::size_t v = 0; v < probs.size(); ++v) {
        const double p = (std::isfinite(probs[v]) && probs[v] > 0.0) ? probs[v] : 0.0;
        if (p <= 0.0) continue;
        last_positive = static_cast<int>(v);
        cum += p;
        if (target < cum) {
            r.token = static_cast<int>(v);
            return r;
        }
    }
    r.token = last_positive;
    return r;
}

inline SampleResult sample_token(const PolicyParams& params, std::span<const int> prompt, std::span<const int> history,
                                 const FloatFormat& format, ReductionOrder order, CounterRng& rng) {
    const auto& cfg = params.config();
    check_tokens(cfg, prompt, true);
    check_tokens(cfg, history, false);
    const PolicyEvaluator eval(params, format, order);
    const auto dist = eval.distribution(context_window(cfg, prompt, history, history.size()));
    return sample_from(format, order, dist.probs, rng);
}

} // namespace fplab
