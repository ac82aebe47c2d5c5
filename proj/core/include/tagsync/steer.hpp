#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tagsync/clock.hpp"

namespace tagsync::steer {

// Offset-only feedback: every accepted offset estimate nudges the steered
// clock by -gain * tau_hat, so a constant residual contracts by (1 - gain)
// per step.
class OffsetLoop {
  public:
    explicit OffsetLoop(double gain);

    clocks::SteeringCommand step(double tau_hat_ps);

    double running_offset_ps() const { return running_offset_ps_; }
    double gain() const { return gain_; }
    const std::vector<double>& history() const { return history_; }

  private:
    double gain_;
    double running_offset_ps_ = 0.0;
    std::vector<double> history_;  // recent tau_hat values, newest last
};

struct RateLoopParams {
    double offset_gain = 0.5;
    double rate_gain = 0.3;
    // Convergence is declared after 3 consecutive epochs with |tau_hat|
    // below tau_threshold_ps and |slope| below slope_threshold (fractional).
    double tau_threshold_ps = 100.0;
    double slope_threshold = 1e-7;
};

// Offset plus frequency feedback: the epoch-to-epoch change of tau_hat,
// divided by the epoch midpoint spacing, estimates the residual relative
// rate, and both levers are pulled each epoch.
class RateLoop {
  public:
    explicit RateLoop(RateLoopParams p);

    // The first call has no reference epoch and emits an offset-only
    // command. Throws ZeroEpochSpanError when epoch_mid_s does not advance.
    clocks::SteeringCommand step(double tau_hat_ps, double epoch_mid_s);

    bool converged() const { return streak_ >= 3; }
    double last_tau_ps() const { return last_tau_ps_; }
    double last_epoch_mid_s() const { return last_epoch_mid_s_; }

  private:
    RateLoopParams p_;
    bool primed_ = false;
    double last_tau_ps_ = 0.0;
    double last_epoch_mid_s_ = 0.0;
    int streak_ = 0;
};

struct PhaseLoopParams {
    std::int64_t period_ps = 0;
    std::int64_t phase_center_ps = 0;     // position within the cycle
    // Optional extra centers within the cycle; when non-empty the deviation
    // of an arrival is measured against the nearest center, so several
    // acceptance windows per cycle share one loop. Fractional sub-period
    // spacings (for example thirds of a period not divisible by 3) then
    // do not need a fractional sub-period.
    std::vector<std::int64_t> centers;
    std::int64_t window_halfwidth_ps = 0;  // acceptance band around the center
    std::size_t avg_window = 64;          // ring size W
    double gain = 1e-3;
    // Proportional control of rate from phase alone is marginally stable at
    // best (the rate lever integrates, so the block-to-block map has unit
    // determinant); the mean-difference term damps that oscillation while
    // keeping the emitted command rate-only.
    double damping = 2e-3;
};

enum class PhaseClass { in_window, out_of_window };

// Logical synchronization of a cyclic receiver: arrivals are classified by
// their deviation from the expected phase, and the running average of the
// last W deviations drives a rate-only correction.
class PhaseLoop {
  public:
    explicit PhaseLoop(PhaseLoopParams p);

    // Returns the classification and a command (all-zero until the ring
    // fills; the ring is cleared after each emitted correction).
    std::pair<PhaseClass, clocks::SteeringCommand> step(std::int64_t arrival_reading_ps);

    // Deviation wrapped to (-period/2, period/2].
    std::int64_t deviation(std::int64_t arrival_reading_ps) const;

    std::size_t ring_fill() const { return ring_.size(); }
    const PhaseLoopParams& params() const { return p_; }

  private:
    PhaseLoopParams p_;
    std::vector<std::int64_t> ring_;
    double last_mean_ps_ = 0.0;
    bool have_last_mean_ = false;
};

// One round of two-way lag measurements between the agents.
struct BidirectionalSample {
    double tau_ab_ps = 0.0;  // receive reading at B minus send reading at A
    double tau_ba_ps = 0.0;  // defined by (receive at A minus send at B) = -tau_ba
};

struct BidirectionalSolution {
    double offset_ps = 0.0;         // B's reading minus A's reading at one instant
    double one_way_delay_ps = 0.0;  // shared by both directions by assumption
};

// Symmetric-delay algebra: offset = (tau_ab + tau_ba)/2 and
// delay = (tau_ab - tau_ba)/2. Throws NegativeDelayError when the solved
// delay is negative, which signals mismatched peaks or swapped directions.
BidirectionalSolution bidirectional_solve(const BidirectionalSample& s);

// One echo measurement: A sends at t_a, B echoes at t_b (B's clock),
// A receives at t_a_prime.
struct EinsteinProbe {
    std::int64_t t_a_ps = 0;
    std::int64_t t_b_ps = 0;
    std::int64_t t_a_prime_ps = 0;
};

// How far the echo reading sits from the midpoint of the round trip; zero
// for a stationary, symmetric, offset-free link. Throws Error when the
// probe is malformed (t_a_prime < t_a).
double einstein_residual_ps(const EinsteinProbe& p);

}  // namespace tagsync::steer
