#pragma once

#include <cstdint>

#include "tagsync/rng.hpp"
#include "tagsync/time.hpp"

namespace tagsync::clocks {

struct ClockReading {
    std::int64_t ps = 0;

    friend constexpr bool operator==(ClockReading, ClockReading) = default;
    friend constexpr auto operator<=>(ClockReading, ClockReading) = default;
};

// offset_nudge is applied once to the phase; rate_adjust multiplies the
// current rate by (1 + rate_adjust). Both may be fractional.
struct SteeringCommand {
    double offset_nudge_ps = 0.0;
    double rate_adjust = 0.0;
};

struct ClockParams {
    double offset0_ps = 0.0;       // initial reading minus ground truth
    double skew = 0.0;             // constant fractional rate error
    double rw_sigma = 0.0;         // rate random walk, fractional per sqrt(second)
    double jitter_sigma_ps = 0.0;  // white per-reading timestamp noise
};

// Four-parameter local clock. Phase is tracked as ground truth plus a small
// "extra" term (offset + accumulated rate error + nudges) kept in double
// femtoseconds; truth itself stays integer, so with rw_sigma = 0 and
// jitter = 0 the reading is affine in truth time to well under 1 ps over
// any representable run.
class ClockModel {
  public:
    explicit ClockModel(const ClockParams& p)
        : params_(p), extra_fs_(p.offset0_ps * kFsPerPicosecond), rate_(1.0 + p.skew) {}

    // Advances internal state to t (queries must be monotone in ground
    // truth) and returns the reading quantized to 1 ps. Draws from rng for
    // the rate random walk (if configured) and reading jitter.
    ClockReading reading_at(SimInstant t, Prng& rng);

    // Throws ClampViolationError if the resulting rate leaves
    // [0.5, 2.0] times the nominal (ideal) rate. State is untouched then.
    void apply_steer(const SteeringCommand& cmd);

    // Oracle view: noiseless phase at t in ps, extrapolated with the current
    // rate, without advancing state or consuming randomness. Intended for
    // ground-truth checks, not for agent code.
    double phase_ps_at(SimInstant t) const;

    double rate() const { return rate_; }
    SimInstant last_query() const { return SimInstant::from_fs(last_truth_fs_); }
    const ClockParams& params() const { return params_; }

  private:
    ClockParams params_;
    double extra_fs_;
    double rate_;
    std::int64_t last_truth_fs_ = 0;
};

}  // namespace tagsync::clocks
