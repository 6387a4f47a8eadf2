#include "gps/rng.hpp"

#include <cmath>
#include <numbers>

namespace gps {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state) noexcept {
    for (unsigned char c : bytes) {
        state ^= c;
        state *= 0x100000001b3ULL;
    }
    return state;
}

std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

SplitMix64 SplitMix64::substream(std::uint64_t seed, std::string_view name) noexcept {
    return SplitMix64(mix64(seed ^ mix64(fnv1a64(name))));
}

SplitMix64 SplitMix64::substream(std::uint64_t seed, std::string_view name, std::uint64_t index) noexcept {
    return SplitMix64(mix64(seed ^ mix64(fnv1a64(name) + mix64(index + 0x9e3779b97f4a7c15ULL))));
}

std::uint64_t SplitMix64::next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
}

std::uint64_t SplitMix64::uniform_index(std::uint64_t bound) noexcept {
    // Rejection sampling keeps the draw exactly uniform.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x = next();
    while (x >= limit) {
        x = next();
    }
    return x % bound;
}

double SplitMix64::uniform01() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double SplitMix64::normal() noexcept {
    double u1 = uniform01();
    while (u1 <= 0.0) {
        u1 = uniform01();
    }
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace gps
