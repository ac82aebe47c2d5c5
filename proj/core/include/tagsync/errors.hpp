#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tagsync {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct OverflowError : Error {
    using Error::Error;
};

// engine
struct PastEventError : Error {
    using Error::Error;
};

// clocks
struct ClampViolationError : Error {
    using Error::Error;
};

// optics
struct NegativeDelayError : Error {
    using Error::Error;
};

// records
struct UnsortedInputError : Error {
    using Error::Error;
};
struct MalformedLineError : Error {
    MalformedLineError(std::size_t line, const std::string& why)
        : Error("line " + std::to_string(line) + ": " + why), line_no(line) {}
    std::size_t line_no;
};
struct NonMonotoneError : Error {
    explicit NonMonotoneError(std::size_t line)
        : Error("line " + std::to_string(line) + ": readings decrease"), line_no(line) {}
    std::size_t line_no;
};

// correlate
struct BinWidthMismatchError : Error {
    using Error::Error;
};
struct NoPeakError : Error {
    using Error::Error;
};
struct AmbiguousPeakError : Error {
    explicit AmbiguousPeakError(double period_ps)
        : Error("correlation is periodic, period estimate " + std::to_string(period_ps) + " ps"),
          period_est_ps(period_ps) {}
    double period_est_ps;
};
struct InsufficientEpochsError : Error {
    using Error::Error;
};

// steer
struct ZeroEpochSpanError : Error {
    using Error::Error;
};

// qkd
struct EmptySampleError : Error {
    using Error::Error;
};
struct MissingSettingCombinationError : Error {
    using Error::Error;
};
struct OverlappingWindowsError : Error {
    using Error::Error;
};

// cli / config
struct ConfigError : Error {
    ConfigError(const std::string& key, const std::string& why)
        : Error("config key '" + key + "': " + why), key_path(key) {}
    std::string key_path;
};

}  // namespace tagsync
