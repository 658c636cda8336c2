// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0
//
// Static and dynamic loss scaling for FP16 training.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

namespace fplab {

struct ScalerConfig {
    bool enabled = true;
    double initial_scale = 65536.0; // 2^16
    double growth_factor = 2.0;
    double backoff_factor = 0.5;
    int growth_interval = 100;
    double min_scale = 1.0;
    double max_scale = 16777216.0; // 2^24

    void validate() const {
        if (!(initial_scale > 0.0)) throw std::invalid_argument("scaler.initial_scale must be > 0");
        if (!(growth_factor > 1.0)) throw std::invalid_argument("scaler.growth_factor must be > 1");
        if (!(backoff_factor > 0.0 && backoff_factor < 1.0)) throw std::invalid_argument("scaler.backoff_factor must be in (0, 1)");
        if (growth_interval < 1) throw std::invalid_argument("scaler.growth_interval must be >= 1");
        if (!(min_scale > 0.0 && min_scale <= max_scale)) throw std::invalid_argument("scaler clamp range is empty");
    }
};

struct ScalerState {
    double scale = 65536.0;
    double growth_factor = 2.0;
    double backoff_factor = 0.5;
    int growth_interval = 100;
    int steps_since_overflow = 0;
    double min_scale = 1.0;
    double max_scale = 16777216.0;

    static ScalerState from(const ScalerConfig& c) {
        c.validate();
        return {std::clamp(c.initial_scale, c.min_scale, c.max_scale), c.growth_factor, c.backoff_factor, c.growth_interval, 0,
                c.min_scale, c.max_scale};
    }
};

enum class StepOutcome { Applied, SkippedOverflow };

struct ScalerEvent {
    StepOutcome outcome = StepOutcome::Applied;
    bool grew = false;
    double scale_before = 1.0;
    double scale_after = 1.0;
};

inline double scale_loss(const ScalerState& s, double loss) noexcept { return loss * s.scale; }

/// Global overflow check over the full gradient vector.
inline bool has_overflow(std::span<const double> grads) noexcept {
    return std::any_of(grads.begin(), grads.end(), [](double g) { return !std::isfinite(g); });
}

/// Skip on overflow and back off; otherwise unscale in place, hand the
/// gradient to `apply` and grow the scale after growth_interval clean steps.
template <class ApplyFn>
ScalerEvent unscale_and_step(ScalerState& s, std::span<double> grads, ApplyFn&& apply) {
    ScalerEvent ev;
    ev.scale_before = s.scale;
    if (has_overflow(grads)) {
        s.scale = std::max(s.scale * s.backoff_factor, s.min_scale);
        s.steps_since_overflow = 0;
        ev.outcome = StepOutcome::SkippedOverflow;
        ev.scale_after = s.scale;
        return ev;
    }
    for (auto& g : grads) g /= s.scale;
    apply(std::span<const double>(grads));
    if (++s.steps_since_overflow >= s.growth_interval) {
        const double grown = std::min(s.scale * s.growth_factor, s.max_scale);
        ev.grew = grown > s.scale;
        s.scale = grown;
        s.steps_since_overflow = 0;
    }
    ev.scale_after = s.scale;
    return ev;
}

} // namespace fplab
