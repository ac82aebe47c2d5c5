#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tagsync/clock.hpp"
#include "tagsync/records.hpp"
#include "tagsync/rng.hpp"
#include "tagsync/time.hpp"

namespace tagsync::optics {

// One entangled pair leaving the source. Emission time is hidden ground
// truth. pair_seed defers any polarization outcome sampling to the moment
// both analyzers' settings are known (see qkd::assign_entangled_bits);
// outcomes are not decided at emission.
struct PairEmission {
    SimInstant truth;
    std::int64_t pulse_index = -1;  // slot number for pulsed sources, -1 for CW
    std::uint64_t pair_seed = 0;
};

// Propagation delay d(t) = base_delay + ramp * t, evaluated at emission
// time; loss is the per-photon absorption probability.
struct ChannelModel {
    double base_delay_ps = 0.0;
    double ramp_ps_per_s = 0.0;
    double loss = 0.0;
};

struct Arrival {
    SimInstant truth;
    std::int64_t emission_index = -1;  // index into the emission list, ground truth
    std::uint64_t pair_seed = 0;
    int stream_tag = 0;  // caller-defined route id, passed through to detections
};

struct DetectorModel {
    double dark_rate_hz = 0.0;
    std::int64_t dead_time_ps = 0;
    int channels = 1;
};

// Periodic acceptance windows in local clock time: an event is kept iff its
// reading modulo period falls inside one of the [begin, end) intervals.
struct GatingWindows {
    std::int64_t period_ps = 0;
    std::vector<std::pair<std::int64_t, std::int64_t>> windows;
};

bool in_gating_window(std::int64_t reading_ps, const GatingWindows& g);

// Truth-time detection candidate after dark-count merging, channel
// assignment and dead-time filtering, before any clock is consulted.
struct RawDetection {
    SimInstant truth;
    int channel = 0;
    std::int64_t emission_index = -1;  // -1 for dark counts
    std::uint64_t pair_seed = 0;
    int stream_tag = 0;
    records::Origin origin = records::Origin::signal;
};

// A detection record plus the ground truth an agent never sees.
struct TaggedDetection {
    records::DetectionRecord rec;
    SimInstant truth;
    std::int64_t emission_index = -1;
    std::uint64_t pair_seed = 0;
    int stream_tag = 0;
};

// Poisson pair source: exponential inter-emission gaps at the given rate
// over [0, duration).
std::vector<PairEmission> generate_cw(double pairs_per_s, SimDuration duration, Prng& rng);

// Pulsed source: slot k emits at k * period with probability `efficiency`,
// independently, for all slots with k * period < duration.
std::vector<PairEmission> generate_pulsed(std::int64_t period_ps, double efficiency,
                                          SimDuration duration, Prng& rng);

// Applies the channel delay at emission time and thins by loss. Throws
// NegativeDelayError if d(t) < 0 anywhere in [0, run_span].
std::vector<Arrival> propagate(std::span<const PairEmission> emissions, const ChannelModel& ch,
                               SimDuration run_span, int stream_tag, Prng& rng);

// Dark-count merging, per-channel dead time (ground truth), channel
// assignment. Output sorted by truth time. Exposed separately so pipelines
// with per-event feedback can stamp readings themselves.
std::vector<RawDetection> prepare_detections(std::span<const Arrival> arrivals,
                                             const DetectorModel& det, SimInstant window_begin,
                                             SimInstant window_end, Prng& rng);

struct DetectOptions {
    std::string agent = "A";
    int basis_count = 1;  // analyzer settings drawn uniformly per detection
    SimInstant window_begin{};
    SimInstant window_end{};
};

// Full detection chain: prepare_detections, then per event a clock reading
// (advancing the clock), a uniformly drawn basis and a provisional fair
// bit (overwritten later for coincident entangled pairs), then gating by
// local reading. Output sorted by reading.
std::vector<TaggedDetection> detect(std::span<const Arrival> arrivals, const DetectorModel& det,
                                    clocks::ClockModel& clock,
                                    const std::optional<GatingWindows>& gating,
                                    const DetectOptions& opt, Prng& rng);

}  // namespace tagsync::optics
