#include "tagsync/optics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tagsync/errors.hpp"

namespace tagsync::optics {

namespace {

constexpr double kFsPerPs = 1000.0;

std::int64_t delay_fs_at(const ChannelModel& ch, SimInstant t) {
    double d_ps = ch.base_delay_ps + ch.ramp_ps_per_s * t.seconds();
    return static_cast<std::int64_t>(std::llround(d_ps * kFsPerPs));
}

}  // namespace

bool in_gating_window(std::int64_t reading_ps, const GatingWindows& g) {
    if (g.period_ps <= 0) throw Error("gating period must be positive");
    std::int64_t pos = reading_ps % g.period_ps;
    if (pos < 0) pos += g.period_ps;
    for (const auto& [begin, end] : g.windows) {
        if (pos >= begin && pos < end) return true;
    }
    return false;
}

std::vector<PairEmission> generate_cw(double pairs_per_s, SimDuration duration, Prng& rng) {
    if (pairs_per_s <= 0.0) throw Error("pair rate must be positive");
    std::vector<PairEmission> out;
    out.reserve(static_cast<std::size_t>(pairs_per_s * duration.seconds() * 1.1) + 16);
    const double mean_gap_s = 1.0 / pairs_per_s;
    std::int64_t t_fs = 0;
    const std::int64_t end_fs = duration.fs();
    for (;;) {
        double gap_s = rng.exponential(mean_gap_s);
        // Cumulative integer femtoseconds: no floating accumulation drift.
        auto gap_fs = static_cast<std::int64_t>(std::llround(gap_s * kFsPerSecond));
        if (gap_fs < 1) gap_fs = 1;
        t_fs = checked_add(t_fs, gap_fs);
        if (t_fs >= end_fs) break;
        out.push_back({SimInstant::from_fs(t_fs), -1, rng.next_u64()});
    }
    return out;
}

std::vector<PairEmission> generate_pulsed(std::int64_t period_ps, double efficiency,
                                          SimDuration duration, Prng& rng) {
    if (period_ps <= 0) throw Error("pulse period must be positive");
    if (efficiency <= 0.0 || efficiency > 1.0) throw Error("pulse efficiency must be in (0, 1]");
    const std::int64_t period_fs = checked_mul(period_ps, std::int64_t{1000});
    const std::int64_t end_fs = duration.fs();
    std::vector<PairEmission> out;
    if (efficiency == 1.0) {
        for (std::int64_t k = 0;; ++k) {
            std::int64_t t_fs = checked_mul(k, period_fs);
            if (t_fs >= end_fs) break;
            out.push_back({SimInstant::from_fs(t_fs), k, rng.next_u64()});
        }
        return out;
    }
    // Skip empty slots geometrically instead of drawing one Bernoulli per slot.
    const double log1m = std::log1p(-efficiency);
    std::int64_t k = -1;
    for (;;) {
        double u = rng.uniform01_open_low();
        auto skip = static_cast<std::int64_t>(std::floor(std::log(u) / log1m));
        k = checked_add(k, checked_add(skip, std::int64_t{1}));
        std::int64_t t_fs = checked_mul(k, period_fs);
        if (t_fs >= end_fs) break;
        out.push_back({SimInstant::from_fs(t_fs), k, rng.next_u64()});
    }
    return out;
}

std::vector<Arrival> propagate(std::span<const PairEmission> emissions, const ChannelModel& ch,
                               SimDuration run_span, int stream_tag, Prng& rng) {
    if (ch.loss < 0.0 || ch.loss >= 1.0) throw Error("channel loss must be in [0, 1)");
    // d(t) is affine, so checking both endpoints of the run covers all of it.
    if (delay_fs_at(ch, SimInstant::from_fs(0)) < 0 ||
        delay_fs_at(ch, SimInstant::from_fs(run_span.fs())) < 0) {
        throw NegativeDelayError("channel delay goes negative within the run span");
    }
    std::vector<Arrival> out;
    out.reserve(emissions.size());
    for (std::size_t i = 0; i < emissions.size(); ++i) {
        if (ch.loss > 0.0 && rng.bernoulli(ch.loss)) continue;
        const auto& em = emissions[i];
        std::int64_t t_fs = checked_add(em.truth.fs(), delay_fs_at(ch, em.truth));
        out.push_back({SimInstant::from_fs(t_fs), static_cast<std::int64_t>(i), em.pair_seed,
                       stream_tag});
    }
    // A decreasing delay ramp can reorder arrivals; downstream wants truth order.
    std::stable_sort(out.begin(), out.end(),
                     [](const Arrival& a, const Arrival& b) { return a.truth < b.truth; });
    return out;
}

std::vector<RawDetection> prepare_detections(std::span<const Arrival> arrivals,
                                             const DetectorModel& det, SimInstant window_begin,
                                             SimInstant window_end, Prng& rng) {
    if (det.channels < 1) throw Error("detector needs at least one channel");
    if (det.dead_time_ps < 0) throw Error("dead time must be non-negative");
    if (det.dark_rate_hz < 0.0) throw Error("dark rate must be non-negative");
    if (window_end < window_begin) throw Error("detection window ends before it begins");

    struct Candidate {
        SimInstant truth;
        std::int64_t emission_index;
        std::uint64_t pair_seed;
        int stream_tag;
        records::Origin origin;
    };
    std::vector<Candidate> merged;
    merged.reserve(arrivals.size() + 64);
    for (const auto& a : arrivals) {
        if (a.truth < window_begin || !(a.truth < window_end)) continue;
        merged.push_back({a.truth, a.emission_index, a.pair_seed, a.stream_tag,
                          records::Origin::signal});
    }
    if (det.dark_rate_hz > 0.0) {
        const double mean_gap_s = 1.0 / det.dark_rate_hz;
        std::int64_t t_fs = window_begin.fs();
        for (;;) {
            auto gap_fs = static_cast<std::int64_t>(
                std::llround(rng.exponential(mean_gap_s) * kFsPerSecond));
            if (gap_fs < 1) gap_fs = 1;
            t_fs = checked_add(t_fs, gap_fs);
            if (t_fs >= window_end.fs()) break;
            merged.push_back({SimInstant::from_fs(t_fs), -1, 0, 0, records::Origin::dark});
        }
    }
    std::stable_sort(merged.begin(), merged.end(),
                     [](const Candidate& a, const Candidate& b) { return a.truth < b.truth; });

    const std::int64_t dead_fs = det.dead_time_ps * 1000;
    std::vector<std::int64_t> last_fire_fs(static_cast<std::size_t>(det.channels),
                                           std::numeric_limits<std::int64_t>::min());
    std::vector<RawDetection> out;
    out.reserve(merged.size());
    for (const auto& c : merged) {
        int channel = det.channels > 1 ? static_cast<int>(rng.uniform_int(
                                             static_cast<std::uint64_t>(det.channels)))
                                       : 0;
        auto& last = last_fire_fs[static_cast<std::size_t>(channel)];
        if (last != std::numeric_limits<std::int64_t>::min() &&
            c.truth.fs() - last < dead_fs) {
            continue;  // detector still recovering on this channel
        }
        last = c.truth.fs();
        out.push_back({c.truth, channel, c.emission_index, c.pair_seed, c.stream_tag, c.origin});
    }
    return out;
}

std::vector<TaggedDetection> detect(std::span<const Arrival> arrivals, const DetectorModel& det,
                                    clocks::ClockModel& clock,
                                    const std::optional<GatingWindows>& gating,
                                    const DetectOptions& opt, Prng& rng) {
    auto raw = prepare_detections(arrivals, det, opt.window_begin, opt.window_end, rng);
    std::vector<TaggedDetection> out;
    out.reserve(raw.size());
    for (const auto& r : raw) {
        auto reading = clock.reading_at(r.truth, rng);
        int basis = opt.basis_count > 1 ? static_cast<int>(rng.uniform_int(
                                              static_cast<std::uint64_t>(opt.basis_count)))
                                        : 0;
        int bit = rng.bernoulli(0.5) ? 1 : 0;
        // Draws above happen whether or not the event survives gating, so a
        // gated and an ungated run agree on every later event.
        if (gating && !in_gating_window(reading.ps, *gating)) continue;
        TaggedDetection td;
        td.rec = {opt.agent, reading.ps, r.channel, basis, bit, r.origin};
        td.truth = r.truth;
        td.emission_index = r.emission_index;
        td.pair_seed = r.pair_seed;
        td.stream_tag = r.stream_tag;
        out.push_back(std::move(td));
    }
    std::stable_sort(out.begin(), out.end(), [](const TaggedDetection& a, const TaggedDetection& b) {
        if (a.rec.reading_ps != b.rec.reading_ps) return a.rec.reading_ps < b.rec.reading_ps;
        return a.truth < b.truth;
    });
    return out;
}

}  // namespace tagsync::optics
