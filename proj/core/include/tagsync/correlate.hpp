#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "tagsync/records.hpp"

namespace tagsync::correlate {

// Fixed-width histogram of one agent's readings. start_ps is the left edge
// of bin 0; readings outside [start, start + bins * width) are counted in
// `dropped` instead.
struct BinnedStream {
    std::int64_t bin_width_ps = 0;
    std::int64_t start_ps = 0;
    std::vector<std::uint32_t> counts;
    std::uint64_t dropped = 0;
};

BinnedStream bin(std::span<const records::DetectionRecord> recs, std::int64_t bin_width_ps,
                 std::int64_t start_ps, std::size_t num_bins);

// g[i] counts record pairs whose reading difference (b minus a) falls in
// the lag bin at tau_start + i * width.
struct CorrelationHistogram {
    std::int64_t bin_width_ps = 0;
    std::int64_t tau_start_ps = 0;
    std::vector<std::uint64_t> g;
    std::size_t peak_index = 0;
    std::uint64_t peak_value = 0;
    double background_mean = 0.0;  // mean count outside peak_index +- 3 bins

    std::int64_t tau_at(std::size_t i) const {
        return tau_start_ps + static_cast<std::int64_t>(i) * bin_width_ps;
    }
    std::uint64_t total() const;
};

// Both inputs must share one bin width. Lags are restricted to
// [tau_min, tau_max]; only lags representable on the common grid appear.
CorrelationHistogram cross_correlate(const BinnedStream& a, const BinnedStream& b,
                                     std::int64_t tau_min_ps, std::int64_t tau_max_ps);

// Same histogram computed straight from records on the global grid
// (bin index = floor(reading / width)), without materializing per-stream
// count vectors. Equivalent to bin + cross_correlate when both streams are
// binned from grid-aligned start values. Inputs must be sorted by reading.
CorrelationHistogram correlate_records(std::span<const records::DetectionRecord> a,
                                       std::span<const records::DetectionRecord> b,
                                       std::int64_t bin_width_ps, std::int64_t tau_min_ps,
                                       std::int64_t tau_max_ps);

struct OffsetEstimate {
    double tau_ps = 0.0;    // centroid of the peak bin and its two neighbors
    double sigma_ps = 0.0;  // bin width / sqrt(peak count)
    std::uint64_t peak_count = 0;
};

struct NoPeak {};

// The histogram has several comparable peaks; period_est_ps is the median
// spacing between them.
struct AmbiguousPeak {
    double period_est_ps = 0.0;
};

using PeakResult = std::variant<OffsetEstimate, NoPeak, AmbiguousPeak>;

// A peak counts only if it clears the flat background by `significance`
// standard deviations AND reaches `significance` counts outright (a single
// stray pair over a near-empty background is not a detection). Secondary
// local maxima at >= ambiguity_ratio of the peak, more than 3 bins away,
// make the result ambiguous. Pass ambiguity_ratio = infinity to skip that
// check when the search window is already known to hold a single peak.
PeakResult find_peak(const CorrelationHistogram& h, double significance = 6.0,
                     double ambiguity_ratio = 0.5);

// Re-histograms at fine resolution inside coarse_tau_ps +- one coarse bin
// and returns the centroid there. Throws NoPeakError if nothing significant
// survives at fine resolution.
OffsetEstimate refine(std::span<const records::DetectionRecord> a,
                      std::span<const records::DetectionRecord> b, double coarse_tau_ps,
                      std::int64_t coarse_bin_ps, std::int64_t fine_bin_ps,
                      double significance = 6.0);

struct AcquireParams {
    std::int64_t tau_min_ps = 0;
    std::int64_t tau_max_ps = 0;
    std::int64_t coarse_bin_ps = 1000;
    std::int64_t fine_bin_ps = 10;
    double significance = 6.0;
    double ambiguity_ratio = 0.5;
    std::size_t max_top_bins = 512;  // cap on the first-level histogram size
};

// Multi-resolution search: scan the whole lag range at a width that keeps
// the top histogram small, then re-histogram successively finer windows
// around the running peak. Descent stops early when a finer level loses
// significance (a drifting offset smears the peak below some width); the
// last significant level's centroid is returned. Ambiguity is only judged
// at the top level, where the full range is visible.
PeakResult acquire_offset(std::span<const records::DetectionRecord> a,
                          std::span<const records::DetectionRecord> b, const AcquireParams& p);

struct DriftEstimate {
    double tau0_ps = 0.0;    // offset extrapolated to reading time zero
    double rate_error = 0.0; // dimensionless relative rate (slope / ps-per-s)
    std::vector<double> epoch_tau_ps;
    std::vector<double> epoch_mid_s;
};

// Slices both streams into consecutive epochs of epoch_length_s (by the
// first stream's readings, starting at zero), acquires an offset per epoch
// and fits a line through the (epoch midpoint, offset) points.
// Throws InsufficientEpochsError unless at least two epochs yield a peak,
// and AmbiguousPeakError if any epoch is ambiguous.
DriftEstimate estimate_drift(std::span<const records::DetectionRecord> a,
                             std::span<const records::DetectionRecord> b, double epoch_length_s,
                             int epochs, const AcquireParams& p);

struct PeriodScanParams {
    std::int64_t bin_ps = 100;
    std::int64_t max_lag_ps = 200'000'000;  // 200 us of autocorrelation lags
    double significance = 8.0;
    std::int64_t min_period_bins = 4;
};

// Detects a periodic structure in a single stream by folding its lag
// histogram at every candidate integer period and testing the folded sum
// against a flat-background expectation. Returns the refined period, or
// nothing if the stream shows no significant comb. Periods must be close
// to a multiple of bin_ps for the fold to stack lines coherently.
std::optional<double> detect_periodicity(std::span<const records::DetectionRecord> recs,
                                         const PeriodScanParams& p = {});

}  // namespace tagsync::correlate
