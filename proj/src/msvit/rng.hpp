// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Counter-based generator: output k of stream `key` is mix(key, k), so a
// stream can be re-derived anywhere from its key alone. Only integer
// arithmetic and IEEE-exact conversions are used in the uniform path, so
// sequences are identical across platforms.

#pragma once

#include <cstdint>
#include <initializer_list>

namespace msvit {

std::uint64_t splitmix64(std::uint64_t x);

// Hash a tuple of integers into a stream key (e.g. seed, epoch, batch, element).
std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(splitmix64(seed ^ 0x6d73766974ULL)) {}

    std::uint64_t seed_key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    // Logistic noise log(u) - log(1 - u), u clamped to [1e-12, 1 - 1e-12].
    double logistic();

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace msvit
