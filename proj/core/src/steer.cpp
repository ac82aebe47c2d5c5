#include "tagsync/steer.hpp"

#include <cmath>
#include <numeric>

#include "tagsync/errors.hpp"

namespace tagsync::steer {

namespace {
constexpr std::size_t kHistoryCap = 64;
}

OffsetLoop::OffsetLoop(double gain) : gain_(gain) {
    if (!(gain > 0.0 && gain <= 1.0)) throw Error("offset loop gain must be in (0, 1]");
}

clocks::SteeringCommand OffsetLoop::step(double tau_hat_ps) {
    running_offset_ps_ = (1.0 - gain_) * running_offset_ps_ + gain_ * tau_hat_ps;
    history_.push_back(tau_hat_ps);
    if (history_.size() > kHistoryCap) history_.erase(history_.begin());
    return {-gain_ * tau_hat_ps, 0.0};
}

RateLoop::RateLoop(RateLoopParams p) : p_(p) {
    if (!(p_.offset_gain > 0.0 && p_.offset_gain <= 1.0)) {
        throw Error("rate loop offset gain must be in (0, 1]");
    }
    if (!(p_.rate_gain > 0.0 && p_.rate_gain <= 1.0)) {
        throw Error("rate loop rate gain must be in (0, 1]");
    }
}

clocks::SteeringCommand RateLoop::step(double tau_hat_ps, double epoch_mid_s) {
    clocks::SteeringCommand cmd{-p_.offset_gain * tau_hat_ps, 0.0};
    if (!primed_) {
        primed_ = true;
        last_tau_ps_ = tau_hat_ps;
        last_epoch_mid_s_ = epoch_mid_s;
        return cmd;
    }
    const double span_s = epoch_mid_s - last_epoch_mid_s_;
    if (span_s <= 0.0) throw ZeroEpochSpanError("epoch midpoints must advance");
    // Fractional rate: tau is in ps, so ps-per-second over ps-per-second.
    const double slope = (tau_hat_ps - last_tau_ps_) / span_s / 1e12;
    cmd.rate_adjust = -p_.rate_gain * slope;
    last_tau_ps_ = tau_hat_ps;
    last_epoch_mid_s_ = epoch_mid_s;
    streak_ = (std::abs(tau_hat_ps) < p_.tau_threshold_ps &&
               std::abs(slope) < p_.slope_threshold)
                  ? streak_ + 1
                  : 0;
    return cmd;
}

PhaseLoop::PhaseLoop(PhaseLoopParams p) : p_(p) {
    if (p_.period_ps <= 0) throw Error("phase loop period must be positive");
    if (!(p_.window_halfwidth_ps > 0 && p_.window_halfwidth_ps < p_.period_ps / 2)) {
        throw Error("window halfwidth must be in (0, period/2)");
    }
    if (p_.avg_window < 1) throw Error("averaging window must hold at least one pulse");
    if (!(p_.gain > 0.0)) throw Error("phase loop gain must be positive");
    if (p_.damping < 0.0) throw Error("phase loop damping must be non-negative");
    ring_.reserve(p_.avg_window);
}

std::int64_t PhaseLoop::deviation(std::int64_t arrival_reading_ps) const {
    const std::int64_t period = p_.period_ps;
    auto wrap = [period](std::int64_t v) {
        std::int64_t d = v % period;
        if (d < 0) d += period;           // now in [0, period)
        if (d > period / 2) d -= period;  // map to (-period/2, period/2]
        return d;
    };
    if (p_.centers.empty()) return wrap(arrival_reading_ps - p_.phase_center_ps);
    std::int64_t best = wrap(arrival_reading_ps - p_.centers.front());
    for (std::size_t i = 1; i < p_.centers.size(); ++i) {
        std::int64_t d = wrap(arrival_reading_ps - p_.centers[i]);
        if (std::abs(d) < std::abs(best)) best = d;
    }
    return best;
}

std::pair<PhaseClass, clocks::SteeringCommand> PhaseLoop::step(std::int64_t arrival_reading_ps) {
    const std::int64_t delta = deviation(arrival_reading_ps);
    const PhaseClass cls = std::abs(delta) <= p_.window_halfwidth_ps
                               ? PhaseClass::in_window
                               : PhaseClass::out_of_window;
    ring_.push_back(delta);
    clocks::SteeringCommand cmd{0.0, 0.0};
    if (ring_.size() >= p_.avg_window) {
        const double mean_ps =
            static_cast<double>(std::accumulate(ring_.begin(), ring_.end(), std::int64_t{0})) /
            static_cast<double>(ring_.size());
        double correction = p_.gain * mean_ps;
        if (have_last_mean_) correction += p_.damping * (mean_ps - last_mean_ps_);
        cmd.rate_adjust = -correction / static_cast<double>(p_.period_ps);
        last_mean_ps_ = mean_ps;
        have_last_mean_ = true;
        ring_.clear();
    }
    return {cls, cmd};
}

BidirectionalSolution bidirectional_solve(const BidirectionalSample& s) {
    BidirectionalSolution sol;
    sol.offset_ps = (s.tau_ab_ps + s.tau_ba_ps) / 2.0;
    sol.one_way_delay_ps = (s.tau_ab_ps - s.tau_ba_ps) / 2.0;
    if (sol.one_way_delay_ps < 0.0) {
        throw NegativeDelayError("two-way solution gives a negative propagation delay");
    }
    return sol;
}

double einstein_residual_ps(const EinsteinProbe& p) {
    if (p.t_a_prime_ps < p.t_a_ps) throw Error("echo returns before it was sent");
    return static_cast<double>(p.t_b_ps) -
           (static_cast<double>(p.t_a_ps) + static_cast<double>(p.t_a_prime_ps)) / 2.0;
}

}  // namespace tagsync::steer
