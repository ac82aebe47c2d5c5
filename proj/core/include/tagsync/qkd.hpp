#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tagsync/optics.hpp"
#include "tagsync/records.hpp"

namespace tagsync::qkd {

// Source phase and the two analyzer phases of the pulsed interferometric
// scheme, all in radians.
struct PulsedPairState {
    double phi = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
};

// Relative probability (normalized so the maximum is 1) of a coincidence in
// the middle phase slot, from the interference of the two indistinguishable
// path pairs (short-short at the source with long analyzer arms against
// long-long with short arms). Computed by explicit complex-amplitude
// arithmetic; equals cos^2((phi - alpha - beta)/2).
double franson_coincidence_probability(const PulsedPairState& s);

// Relative weights of the three coincidence classes of one cycle: the
// early/early and late/late paths do not interfere and carry 1/2 each; the
// middle/middle class carries the interference term above.
struct PulsedCoincidenceWeights {
    double early_early = 0.5;
    double late_late = 0.5;
    double middle_middle = 1.0;
};
PulsedCoincidenceWeights pulsed_coincidence_weights(const PulsedPairState& s);

enum class PhaseSlot { early, middle, late, outside };

// Three disjoint sub-windows [begin, end) positioned inside one period.
struct CycleLayout {
    std::int64_t period_ps = 0;
    std::pair<std::int64_t, std::int64_t> early;
    std::pair<std::int64_t, std::int64_t> middle;
    std::pair<std::int64_t, std::int64_t> late;
};

// Wraps the reading into the cycle and names the sub-window it falls in;
// readings in a gap are outside (those get gated away upstream). Throws
// OverlappingWindowsError when the layout windows intersect or leave the
// cycle.
PhaseSlot classify_phase(std::int64_t reading_ps, const CycleLayout& layout);

// Outcome sampling for one entangled pair measured at the two analyzer
// angles: anti-correlated at equal angles, correlation
// E(a,b) = -cos 2(a-b), then each bit flipped independently with
// intrinsic_error. Fully determined by the seed.
std::pair<int, int> sample_polarization_pair(double angle_a_rad, double angle_b_rad,
                                             double intrinsic_error, std::uint64_t seed);

// Rewrites the provisional bits of detections that stem from one surviving
// pair on both sides, using the pair's own seed so the overwrite does not
// depend on processing order. Analyzer angles are indexed by each record's
// basis field.
void assign_entangled_bits(std::vector<optics::TaggedDetection>& a,
                           std::vector<optics::TaggedDetection>& b,
                           std::span<const double> angles_a_rad,
                           std::span<const double> angles_b_rad, double intrinsic_error);

struct SiftedPair {
    std::int64_t reading_a_ps = 0;
    std::int64_t reading_b_ps = 0;
    int basis_a = 0;
    int basis_b = 0;
    int bit_a = 0;
    int bit_b = 0;
};

// Pairs up records with |reading_b - offset - reading_a| <= window, each
// record used at most once, preferring the smallest adjusted difference.
// The result is symmetric: swapping the streams and negating the offset
// pairs up the same records.
std::vector<SiftedPair> sift(std::span<const records::DetectionRecord> a,
                             std::span<const records::DetectionRecord> b, double offset_ps,
                             std::int64_t window_ps);

struct QberResult {
    double error_rate = 0.0;
    std::size_t matched = 0;
};

// Fraction of sifted pairs, restricted to the basis combinations where
// anti-correlation is expected, whose bits agree (the error event).
// Throws EmptySampleError when no pair passes the filter.
QberResult qber(std::span<const SiftedPair> pairs,
                std::span<const std::pair<int, int>> anticorrelated_combos);

struct ChshSettings {
    int a0 = 0;
    int a1 = 1;
    int b0 = 0;
    int b1 = 1;
};

// |E(a0,b0) - E(a0,b1) + E(a1,b0) + E(a1,b1)| with each correlator
// estimated from the pairs carrying that setting combination. Throws
// MissingSettingCombinationError if any of the four is unrepresented.
double chsh(std::span<const SiftedPair> pairs, const ChshSettings& s);

}  // namespace tagsync::qkd
