#pragma once

#include <cstdint>
#include <string_view>

namespace gps {

// 64-bit FNV-1a. Used for tensor-name hashing and checkpoint digests.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL) noexcept;

// splitmix64 generator. All randomness in the library goes through this type
// so that output bytes do not depend on the standard library implementation.
class SplitMix64 {
  public:
    explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    // Independent stream derived from (seed, name), e.g. substream(seed, "shuffle").
    static SplitMix64 substream(std::uint64_t seed, std::string_view name) noexcept;
    static SplitMix64 substream(std::uint64_t seed, std::string_view name, std::uint64_t index) noexcept;

    std::uint64_t next() noexcept;
    // Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t uniform_index(std::uint64_t bound) noexcept;
    // Uniform double in [0, 1) with 53 random bits.
    double uniform01() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform01(); }
    // Standard normal via Box-Muller (no cached second value).
    double normal() noexcept;

  private:
    std::uint64_t state_;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace gps
