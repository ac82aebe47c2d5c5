#include "tagsync/clock.hpp"

#include <cmath>

#include "tagsync/errors.hpp"

namespace tagsync::clocks {

namespace {

// Quantize a phase given as integer truth fs plus fractional extra fs.
// Splitting out the integer part keeps the conversion exact for truth
// values far beyond double's 2^53 integer range.
std::int64_t quantize_ps(std::int64_t truth_fs, double extra_fs) {
    const std::int64_t whole_ps = truth_fs / kFsPerPicosecond;
    const double rem_fs = static_cast<double>(truth_fs % kFsPerPicosecond) + extra_fs;
    return whole_ps + static_cast<std::int64_t>(std::llround(rem_fs / static_cast<double>(kFsPerPicosecond)));
}

}  // namespace

ClockReading ClockModel::reading_at(SimInstant t, Prng& rng) {
    const std::int64_t t_fs = t.fs();
    if (t_fs < last_truth_fs_) {
        throw PastEventError("clock queried before its last evolution step");
    }
    const double dt_fs = static_cast<double>(t_fs - last_truth_fs_);
    if (dt_fs > 0) {
        // Integrate the current rate over the interval, then diffuse the
        // rate (Euler-Maruyama step); the new rate applies from t onward.
        extra_fs_ += (rate_ - 1.0) * dt_fs;
        if (params_.rw_sigma > 0.0) {
            const double dt_s = dt_fs / static_cast<double>(kFsPerSecond);
            rate_ += params_.rw_sigma * std::sqrt(dt_s) * rng.gaussian();
        }
        last_truth_fs_ = t_fs;
    }
    double noise_fs = 0.0;
    if (params_.jitter_sigma_ps > 0.0) {
        noise_fs = params_.jitter_sigma_ps * static_cast<double>(kFsPerPicosecond) * rng.gaussian();
    }
    return ClockReading{quantize_ps(t_fs, extra_fs_ + noise_fs)};
}

void ClockModel::apply_steer(const SteeringCommand& cmd) {
    const double new_rate = rate_ * (1.0 + cmd.rate_adjust);
    if (!(new_rate >= 0.5 && new_rate <= 2.0)) {
        throw ClampViolationError("steering would push clock rate outside [0.5, 2.0] of nominal");
    }
    rate_ = new_rate;
    extra_fs_ += cmd.offset_nudge_ps * static_cast<double>(kFsPerPicosecond);
}

double ClockModel::phase_ps_at(SimInstant t) const {
    const std::int64_t t_fs = t.fs();
    const double dt_fs = static_cast<double>(t_fs - last_truth_fs_);
    const double extra = extra_fs_ + (rate_ - 1.0) * dt_fs;
    const double whole_ps = static_cast<double>(t_fs / kFsPerPicosecond);
    const double rem_fs = static_cast<double>(t_fs % kFsPerPicosecond) + extra;
    return whole_ps + rem_fs / static_cast<double>(kFsPerPicosecond);
}

}  // namespace tagsync::clocks
