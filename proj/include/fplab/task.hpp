// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic verifiable task: emit L tokens whose sum is m modulo p.

#pragma once

#include "fplab/rng.hpp"

#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fplab {

struct TaskSpec {
    int modulus = 2;
    int target = 0;
    int length = 4;

    void validate() const {
        if (modulus < 1) throw std::invalid_argument("task modulus must be >= 1");
        if (target < 0 || target >= modulus) throw std::invalid_argument("task target must be in [0, modulus)");
        if (length < 0) throw std::invalid_argument("task length must be >= 0");
    }

    /// Prompt tokens (p, m, L), each reduced into the output vocabulary.
    [[nodiscard]] std::vector<int> prompt(int vocab_size) const {
        return {modulus % vocab_size, target % vocab_size, length % vocab_size};
    }

    friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

inline double task_reward(const TaskSpec& task, std::span<const int> tokens) {
    long long sum = 0;
    for (int t : tokens) sum += t;
    return (sum % task.modulus) == task.target ? 1.0 : 0.0;
}

struct TaskFamily {
    int modulus_min = 2;
    int modulus_max = 8;
    int length_min = 3;
    int length_max = 6;

    void validate() const {
        if (modulus_min < 1 || modulus_max < modulus_min) throw std::invalid_argument("task modulus range is empty");
        if (length_min < 0 || length_max < length_min) throw std::invalid_argument("task length range is empty");
    }
};

inline std::vector<TaskSpec> candidate_tasks(const TaskFamily& fam, std::size_t count, std::uint64_t seed) {
    fam.validate();
    CounterRng rng({seed, 0x7461736b73ull});
    std::vector<TaskSpec> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        TaskSpec t;
        t.modulus = fam.modulus_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(fam.modulus_max - fam.modulus_min + 1)));
        t.target = static_cast<int>(rng.below(static_cast<std::uint64_t>(t.modulus)));
        t.length = fam.length_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(fam.length_max - fam.length_min + 1)));
        out.push_back(t);
    }
    return out;
}

} // namespace fplab
