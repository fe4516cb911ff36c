// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace msvit {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (std::uint64_t p : parts) {
        h = splitmix64(h ^ splitmix64(p));
    }
    return h;
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t c = counter_++;
    return splitmix64(key_ ^ splitmix64(c * 0xd1342543de82ef95ULL + 1));
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
    // Rejection sampling keeps the result unbiased.
    const std::uint64_t limit = n ? (~std::uint64_t{0} - (~std::uint64_t{0} % n)) : 0;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

double Rng::normal() {
    const double u1 = std::max(uniform(), 1e-300);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::logistic() {
    const double u = std::clamp(uniform(), 1e-12, 1.0 - 1e-12);
    return std::log(u) - std::log1p(-u);
}

}  // namespace msvit
