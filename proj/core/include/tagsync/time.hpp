#pragma once

#include <cstdint>

#include "tagsync/errors.hpp"

namespace tagsync {

// Ground-truth time is kept in integer femtoseconds. Signed 64 bits span
// about +-9223 seconds at this resolution, far beyond any desk-scale run.
// Clock readings (what agents see) are integer picoseconds; see clock.hpp.
inline constexpr std::int64_t kFsPerSecond = 1'000'000'000'000'000;
inline constexpr std::int64_t kFsPerPicosecond = 1'000;
inline constexpr std::int64_t kPsPerSecond = 1'000'000'000'000;

inline std::int64_t checked_add(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_add_overflow(a, b, &r)) throw OverflowError("time arithmetic overflow");
    return r;
}

inline std::int64_t checked_sub(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_sub_overflow(a, b, &r)) throw OverflowError("time arithmetic overflow");
    return r;
}

inline std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_mul_overflow(a, b, &r)) throw OverflowError("time arithmetic overflow");
    return r;
}

class SimDuration {
  public:
    constexpr SimDuration() = default;
    static constexpr SimDuration from_fs(std::int64_t fs) { return SimDuration(fs); }
    static constexpr SimDuration from_ps(std::int64_t ps) { return SimDuration(ps * kFsPerPicosecond); }
    static SimDuration from_seconds(double s) {
        return SimDuration(static_cast<std::int64_t>(s * static_cast<double>(kFsPerSecond)));
    }

    constexpr std::int64_t fs() const { return fs_; }
    constexpr double seconds() const { return static_cast<double>(fs_) / static_cast<double>(kFsPerSecond); }

    friend constexpr bool operator==(SimDuration, SimDuration) = default;
    friend constexpr auto operator<=>(SimDuration, SimDuration) = default;

  private:
    explicit constexpr SimDuration(std::int64_t fs) : fs_(fs) {}
    std::int64_t fs_ = 0;
};

// An instant on the hidden ground-truth timeline. Instants never reach agent
// code paths; agents only ever see ClockReading values derived from them.
class SimInstant {
  public:
    constexpr SimInstant() = default;
    static constexpr SimInstant from_fs(std::int64_t fs) { return SimInstant(fs); }

    constexpr std::int64_t fs() const { return fs_; }
    constexpr double seconds() const { return static_cast<double>(fs_) / static_cast<double>(kFsPerSecond); }

    SimInstant operator+(SimDuration d) const { return SimInstant(checked_add(fs_, d.fs())); }
    SimInstant operator-(SimDuration d) const { return SimInstant(checked_sub(fs_, d.fs())); }
    SimDuration operator-(SimInstant other) const { return SimDuration::from_fs(checked_sub(fs_, other.fs_)); }

    friend constexpr bool operator==(SimInstant, SimInstant) = default;
    friend constexpr auto operator<=>(SimInstant, SimInstant) = default;

  private:
    explicit constexpr SimInstant(std::int64_t fs) : fs_(fs) {}
    std::int64_t fs_ = 0;
};

}  // namespace tagsync
