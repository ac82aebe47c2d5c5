#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tagsync {

// Deterministic random stream. The raw engine is std::mt19937_64, whose
// output sequence is pinned by the standard; all variate transforms are
// implemented here rather than with std::*_distribution so that a seed
// reproduces the same draws regardless of standard library version.
class Prng {
  public:
    explicit Prng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    // Uniform on (0, 1]; safe as a log() argument.
    double uniform01_open_low() { return 1.0 - uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    // Rejection sampling keeps the result exactly uniform over [0, bound).
    std::uint64_t uniform_int(std::uint64_t bound);

    double exponential(double mean);

    // Standard normal via Box-Muller; the spare value is cached so draws
    // consume the underlying engine in a fixed pattern.
    double gaussian();

  private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stable label-based sub-seed derivation, so component streams (source,
// channels, detectors, ...) stay independent of pipeline evaluation order.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);

}  // namespace tagsync
