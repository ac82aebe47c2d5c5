#include "tagsync/correlate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tagsync/errors.hpp"
#include "tagsync/time.hpp"

namespace tagsync::correlate {

namespace {

constexpr std::size_t kMaxHistogramBins = std::size_t{1} << 26;

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return -floor_div(-a, b); }

// Locates the highest bin and the mean level far enough from it to count
// as background.
void fill_stats(CorrelationHistogram& h) {
    h.peak_index = 0;
    h.peak_value = 0;
    h.background_mean = 0.0;
    if (h.g.empty()) return;
    for (std::size_t i = 0; i < h.g.size(); ++i) {
        if (h.g[i] > h.peak_value) {
            h.peak_value = h.g[i];
            h.peak_index = i;
        }
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < h.g.size(); ++i) {
        std::size_t dist = i > h.peak_index ? i - h.peak_index : h.peak_index - i;
        if (dist > 3) {
            sum += static_cast<double>(h.g[i]);
            ++n;
        }
    }
    h.background_mean = n > 0 ? sum / static_cast<double>(n) : 0.0;
}

OffsetEstimate centroid_estimate(const CorrelationHistogram& h) {
    double wsum = 0.0;
    double tsum = 0.0;
    std::size_t lo = h.peak_index > 0 ? h.peak_index - 1 : 0;
    std::size_t hi = std::min(h.peak_index + 1, h.g.size() - 1);
    for (std::size_t i = lo; i <= hi; ++i) {
        auto wgt = static_cast<double>(h.g[i]);
        wsum += wgt;
        // Readings are integers, so the mass labeled k*w collects true
        // differences centered on k*w itself: no half-bin shift.
        tsum += wgt * static_cast<double>(h.tau_at(i));
    }
    OffsetEstimate est;
    est.peak_count = h.peak_value;
    est.tau_ps = wsum > 0.0 ? tsum / wsum : 0.0;
    est.sigma_ps = static_cast<double>(h.bin_width_ps) /
                   std::sqrt(static_cast<double>(std::max<std::uint64_t>(h.peak_value, 1)));
    return est;
}

}  // namespace

std::uint64_t CorrelationHistogram::total() const {
    return std::accumulate(g.begin(), g.end(), std::uint64_t{0});
}

BinnedStream bin(std::span<const records::DetectionRecord> recs, std::int64_t bin_width_ps,
                 std::int64_t start_ps, std::size_t num_bins) {
    if (bin_width_ps <= 0) throw Error("bin width must be positive");
    if (num_bins == 0 || num_bins > kMaxHistogramBins) throw Error("unreasonable bin count");
    BinnedStream s;
    s.bin_width_ps = bin_width_ps;
    s.start_ps = start_ps;
    s.counts.assign(num_bins, 0);
    for (const auto& r : recs) {
        std::int64_t rel = checked_sub(r.reading_ps, start_ps);
        if (rel < 0) {
            ++s.dropped;
            continue;
        }
        std::int64_t idx = rel / bin_width_ps;
        if (static_cast<std::uint64_t>(idx) >= num_bins) {
            ++s.dropped;
            continue;
        }
        ++s.counts[static_cast<std::size_t>(idx)];
    }
    return s;
}

CorrelationHistogram cross_correlate(const BinnedStream& a, const BinnedStream& b,
                                     std::int64_t tau_min_ps, std::int64_t tau_max_ps) {
    if (a.bin_width_ps != b.bin_width_ps) throw BinWidthMismatchError("streams were binned at different widths");
    if (a.bin_width_ps <= 0) throw Error("bin width must be positive");
    if (tau_min_ps > tau_max_ps) throw Error("empty lag range");
    const std::int64_t w = a.bin_width_ps;
    // Lag of bin pair (ja, jb) is delta_start + (jb - ja) * w; restrict the
    // integer shift k = jb - ja to the requested lag interval.
    const std::int64_t delta_start = checked_sub(b.start_ps, a.start_ps);
    const std::int64_t kmin = ceil_div(checked_sub(tau_min_ps, delta_start), w);
    const std::int64_t kmax = floor_div(checked_sub(tau_max_ps, delta_start), w);

    CorrelationHistogram h;
    h.bin_width_ps = w;
    if (kmin > kmax) {
        h.tau_start_ps = tau_min_ps;
        fill_stats(h);
        return h;
    }
    auto bins = static_cast<std::uint64_t>(kmax - kmin + 1);
    if (bins > kMaxHistogramBins) throw Error("lag range too wide for this bin width");
    h.tau_start_ps = checked_add(delta_start, checked_mul(kmin, w));
    h.g.assign(static_cast<std::size_t>(bins), 0);

    struct NonZero {
        std::int64_t idx;
        std::uint64_t count;
    };
    auto collect = [](const BinnedStream& s) {
        std::vector<NonZero> nz;
        for (std::size_t i = 0; i < s.counts.size(); ++i) {
            if (s.counts[i] != 0) nz.push_back({static_cast<std::int64_t>(i), s.counts[i]});
        }
        return nz;
    };
    const auto nza = collect(a);
    const auto nzb = collect(b);

    std::size_t lo = 0;
    for (const auto& ea : nza) {
        const std::int64_t jb_min = ea.idx + kmin;
        const std::int64_t jb_max = ea.idx + kmax;
        while (lo < nzb.size() && nzb[lo].idx < jb_min) ++lo;
        for (std::size_t j = lo; j < nzb.size() && nzb[j].idx <= jb_max; ++j) {
            h.g[static_cast<std::size_t>(nzb[j].idx - jb_min)] += ea.count * nzb[j].count;
        }
    }
    fill_stats(h);
    return h;
}

CorrelationHistogram correlate_records(std::span<const records::DetectionRecord> a,
                                       std::span<const records::DetectionRecord> b,
                                       std::int64_t bin_width_ps, std::int64_t tau_min_ps,
                                       std::int64_t tau_max_ps) {
    if (bin_width_ps <= 0) throw Error("bin width must be positive");
    if (tau_min_ps > tau_max_ps) throw Error("empty lag range");
    const std::int64_t w = bin_width_ps;
    const std::int64_t kmin = ceil_div(tau_min_ps, w);
    const std::int64_t kmax = floor_div(tau_max_ps, w);

    CorrelationHistogram h;
    h.bin_width_ps = w;
    if (kmin > kmax) {
        h.tau_start_ps = tau_min_ps;
        fill_stats(h);
        return h;
    }
    auto bins = static_cast<std::uint64_t>(kmax - kmin + 1);
    if (bins > kMaxHistogramBins) throw Error("lag range too wide for this bin width");
    h.tau_start_ps = checked_mul(kmin, w);
    h.g.assign(static_cast<std::size_t>(bins), 0);

    std::size_t lo = 0;
    for (const auto& ra : a) {
        const std::int64_t ja = floor_div(ra.reading_ps, w);
        // b readings whose bin jb satisfies kmin <= jb - ja <= kmax
        const std::int64_t rb_lo = checked_mul(ja + kmin, w);
        const std::int64_t rb_hi = checked_mul(ja + kmax + 1, w);
        while (lo < b.size() && b[lo].reading_ps < rb_lo) ++lo;
        for (std::size_t j = lo; j < b.size() && b[j].reading_ps < rb_hi; ++j) {
            std::int64_t k = floor_div(b[j].reading_ps, w) - ja;
            h.g[static_cast<std::size_t>(k - kmin)] += 1;
        }
    }
    fill_stats(h);
    return h;
}

PeakResult find_peak(const CorrelationHistogram& h, double significance, double ambiguity_ratio) {
    if (h.g.empty() || h.peak_value == 0) return NoPeak{};
    const auto peak = static_cast<double>(h.peak_value);
    const double bg = h.background_mean;
    // The sqrt(bg) term alone lets a single stray count clear an almost
    // empty background, so the peak must also reach `significance` counts.
    if (peak < bg + significance * std::sqrt(bg) || peak < significance) return NoPeak{};

    // Secondary peaks: local maxima at least ambiguity_ratio of the main
    // peak, more than 3 bins away, clustered so one broad bump counts once.
    std::vector<std::size_t> rivals;
    if (std::isfinite(ambiguity_ratio)) {
        const double bar = ambiguity_ratio * peak;
        std::size_t group_best = 0;
        bool in_group = false;
        std::size_t prev = 0;
        for (std::size_t i = 0; i < h.g.size(); ++i) {
            std::size_t dist = i > h.peak_index ? i - h.peak_index : h.peak_index - i;
            if (dist <= 3) continue;
            auto v = static_cast<double>(h.g[i]);
            bool local_max = v >= bar &&
                             (i == 0 || h.g[i - 1] <= h.g[i]) &&
                             (i + 1 == h.g.size() || h.g[i + 1] <= h.g[i]);
            if (!local_max) continue;
            if (in_group && i - prev <= 3) {
                if (h.g[i] > h.g[group_best]) group_best = i;
            } else {
                if (in_group) rivals.push_back(group_best);
                group_best = i;
                in_group = true;
            }
            prev = i;
        }
        if (in_group) rivals.push_back(group_best);
    }
    if (!rivals.empty()) {
        std::vector<std::int64_t> taus;
        taus.reserve(rivals.size() + 1);
        for (auto i : rivals) taus.push_back(h.tau_at(i));
        taus.push_back(h.tau_at(h.peak_index));
        std::sort(taus.begin(), taus.end());
        std::vector<double> gaps;
        for (std::size_t i = 1; i < taus.size(); ++i) {
            gaps.push_back(static_cast<double>(taus[i] - taus[i - 1]));
        }
        std::sort(gaps.begin(), gaps.end());
        double period = gaps.size() % 2 == 1
                            ? gaps[gaps.size() / 2]
                            : 0.5 * (gaps[gaps.size() / 2 - 1] + gaps[gaps.size() / 2]);
        return AmbiguousPeak{period};
    }
    return centroid_estimate(h);
}

OffsetEstimate refine(std::span<const records::DetectionRecord> a,
                      std::span<const records::DetectionRecord> b, double coarse_tau_ps,
                      std::int64_t coarse_bin_ps, std::int64_t fine_bin_ps, double significance) {
    if (fine_bin_ps <= 0 || coarse_bin_ps < fine_bin_ps) {
        throw Error("refinement needs 0 < fine bin <= coarse bin");
    }
    auto center = static_cast<std::int64_t>(std::llround(coarse_tau_ps));
    auto h = correlate_records(a, b, fine_bin_ps, checked_sub(center, coarse_bin_ps),
                               checked_add(center, coarse_bin_ps));
    // The window spans one coarse bin either side of an established peak;
    // any structure inside it is that same peak, so skip the rival check.
    auto r = find_peak(h, significance, std::numeric_limits<double>::infinity());
    if (auto* est = std::get_if<OffsetEstimate>(&r)) return *est;
    throw NoPeakError("no significant peak at fine resolution");
}

PeakResult acquire_offset(std::span<const records::DetectionRecord> a,
                          std::span<const records::DetectionRecord> b, const AcquireParams& p) {
    if (p.tau_min_ps > p.tau_max_ps) throw Error("empty lag range");
    if (p.fine_bin_ps <= 0 || p.coarse_bin_ps < p.fine_bin_ps) {
        throw Error("acquisition needs 0 < fine bin <= coarse bin");
    }
    if (p.max_top_bins < 16) throw Error("top level needs at least 16 bins");

    const std::int64_t range = checked_sub(p.tau_max_ps, p.tau_min_ps);
    std::int64_t w = p.coarse_bin_ps;
    while (range / w + 1 > static_cast<std::int64_t>(p.max_top_bins)) {
        w = checked_mul(w, 8);
    }

    auto top = correlate_records(a, b, w, p.tau_min_ps, p.tau_max_ps);
    auto r = find_peak(top, p.significance, p.ambiguity_ratio);
    auto* est = std::get_if<OffsetEstimate>(&r);
    if (est == nullptr) return r;

    OffsetEstimate best = *est;
    while (w > p.coarse_bin_ps) {
        std::int64_t next_w = std::max(p.coarse_bin_ps, w / 8);
        auto center = static_cast<std::int64_t>(std::llround(best.tau_ps));
        auto h = correlate_records(a, b, next_w, checked_sub(center, 2 * w),
                                   checked_add(center, 2 * w));
        auto rr = find_peak(h, p.significance, std::numeric_limits<double>::infinity());
        auto* finer = std::get_if<OffsetEstimate>(&rr);
        if (finer == nullptr) break;  // peak smeared below this width, keep coarser answer
        best = *finer;
        w = next_w;
    }
    try {
        return refine(a, b, best.tau_ps, w, p.fine_bin_ps, p.significance);
    } catch (const NoPeakError&) {
        return best;
    }
}

DriftEstimate estimate_drift(std::span<const records::DetectionRecord> a,
                             std::span<const records::DetectionRecord> b, double epoch_length_s,
                             int epochs, const AcquireParams& p) {
    if (epoch_length_s <= 0.0) throw Error("epoch length must be positive");
    if (epochs < 1) throw Error("need at least one epoch");

    DriftEstimate out;
    for (int e = 0; e < epochs; ++e) {
        auto lo_ps = static_cast<std::int64_t>(std::llround(static_cast<double>(e) *
                                                            epoch_length_s * 1e12));
        auto hi_ps = static_cast<std::int64_t>(std::llround(static_cast<double>(e + 1) *
                                                            epoch_length_s * 1e12));
        auto first = std::lower_bound(a.begin(), a.end(), lo_ps,
                                      [](const records::DetectionRecord& r, std::int64_t v) {
                                          return r.reading_ps < v;
                                      });
        auto last = std::lower_bound(a.begin(), a.end(), hi_ps,
                                     [](const records::DetectionRecord& r, std::int64_t v) {
                                         return r.reading_ps < v;
                                     });
        if (first == last) continue;
        std::span<const records::DetectionRecord> slice(&*first,
                                                        static_cast<std::size_t>(last - first));
        auto r = acquire_offset(slice, b, p);
        if (std::holds_alternative<NoPeak>(r)) continue;
        if (auto* amb = std::get_if<AmbiguousPeak>(&r)) {
            throw AmbiguousPeakError(amb->period_est_ps);
        }
        out.epoch_tau_ps.push_back(std::get<OffsetEstimate>(r).tau_ps);
        out.epoch_mid_s.push_back((static_cast<double>(e) + 0.5) * epoch_length_s);
    }
    if (out.epoch_tau_ps.size() < 2) {
        throw InsufficientEpochsError("need two epochs with a significant peak to fit a drift");
    }
    const auto n = static_cast<double>(out.epoch_tau_ps.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < out.epoch_tau_ps.size(); ++i) {
        sx += out.epoch_mid_s[i];
        sy += out.epoch_tau_ps[i];
        sxx += out.epoch_mid_s[i] * out.epoch_mid_s[i];
        sxy += out.epoch_mid_s[i] * out.epoch_tau_ps[i];
    }
    double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw ZeroEpochSpanError("epoch midpoints do not span any time");
    double slope_ps_per_s = (n * sxy - sx * sy) / denom;
    out.tau0_ps = (sy - slope_ps_per_s * sx) / n;
    out.rate_error = slope_ps_per_s / 1e12;
    return out;
}

std::optional<double> detect_periodicity(std::span<const records::DetectionRecord> recs,
                                         const PeriodScanParams& p) {
    if (p.bin_ps <= 0 || p.max_lag_ps <= 2 * p.bin_ps) throw Error("bad period scan geometry");
    if (p.min_period_bins < 4) throw Error("period scan needs min period >= 4 bins");

    // Dense streams are strided down; diffs between retained records still
    // sit on multiples of any underlying period.
    constexpr std::size_t kMaxRecords = 60'000;
    std::vector<std::int64_t> readings;
    if (recs.size() > kMaxRecords) {
        readings.reserve(kMaxRecords);
        const double stride = static_cast<double>(recs.size()) / kMaxRecords;
        for (std::size_t i = 0; i < kMaxRecords; ++i) {
            readings.push_back(recs[static_cast<std::size_t>(i * stride)].reading_ps);
        }
    } else {
        readings.reserve(recs.size());
        for (const auto& r : recs) readings.push_back(r.reading_ps);
    }
    if (readings.size() < 3) return std::nullopt;
    std::sort(readings.begin(), readings.end());

    const auto num_bins = static_cast<std::size_t>(p.max_lag_ps / p.bin_ps);
    if (num_bins > kMaxHistogramBins) throw Error("period scan lag range too wide");
    std::vector<std::uint32_t> h(num_bins, 0);
    std::vector<std::int64_t> diffs;
    for (std::size_t i = 0; i < readings.size(); ++i) {
        for (std::size_t j = i + 1; j < readings.size(); ++j) {
            std::int64_t d = readings[j] - readings[i];
            if (d >= p.max_lag_ps) break;
            ++h[static_cast<std::size_t>(d / p.bin_ps)];
            diffs.push_back(d);
        }
    }
    const auto total = static_cast<double>(diffs.size());
    if (total < 100.0) return std::nullopt;
    const double mu = total / static_cast<double>(num_bins);

    // Fold the lag histogram at every candidate period m (in bins): sum a
    // 3-bin window around each multiple of m and compare with the flat
    // expectation. A genuine comb at period P concentrates its pair count
    // there; the widest excess in sigma units picks the fundamental over
    // its multiples and divisors.
    const auto l = static_cast<std::int64_t>(num_bins);
    std::int64_t best_m = 0;
    double best_z = 0.0;
    for (std::int64_t m = p.min_period_bins; m <= l / 4; ++m) {
        const std::int64_t kmax = (l - 2) / m;
        if (kmax < 2) break;
        std::uint64_t s = 0;
        for (std::int64_t k = 1; k <= kmax; ++k) {
            const auto c = static_cast<std::size_t>(k * m);
            s += h[c - 1] + h[c] + h[c + 1];
        }
        const double expect = 3.0 * mu * static_cast<double>(kmax);
        const double sd = std::sqrt(std::max(expect, 1.0));
        if (static_cast<double>(s) < expect + p.significance * sd + p.significance) continue;
        const double z = (static_cast<double>(s) - expect) / sd;
        if (z > best_z) {
            best_z = z;
            best_m = m;
        }
    }
    if (best_m == 0) return std::nullopt;

    // Refine by regressing diff against its line number through the origin,
    // twice, with a window that keeps background dilution small.
    double period = static_cast<double>(best_m * p.bin_ps);
    for (int round = 0; round < 2; ++round) {
        const double window = std::max(static_cast<double>(3 * p.bin_ps),
                                       period / (round == 0 ? 4.0 : 8.0));
        double sxy = 0.0, sxx = 0.0;
        for (std::int64_t d : diffs) {
            double k = std::round(static_cast<double>(d) / period);
            if (k < 1.0) continue;
            if (std::abs(static_cast<double>(d) - k * period) > window) continue;
            sxy += k * static_cast<double>(d);
            sxx += k * k;
        }
        if (sxx == 0.0) break;
        period = sxy / sxx;
    }
    return period;
}

}  // namespace tagsync::correlate
