#include "tagsync/qkd.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <queue>
#include <tuple>
#include <unordered_map>

#include "tagsync/errors.hpp"
#include "tagsync/rng.hpp"

namespace tagsync::qkd {

double franson_coincidence_probability(const PulsedPairState& s) {
    using namespace std::complex_literals;
    // Two indistinguishable ways to land in the middle slot on both sides;
    // their amplitudes add before squaring.
    std::complex<double> analyzer_path = std::exp(1i * (s.alpha + s.beta));
    std::complex<double> source_path = std::exp(1i * s.phi);
    return std::norm(analyzer_path + source_path) / 4.0;
}

PulsedCoincidenceWeights pulsed_coincidence_weights(const PulsedPairState& s) {
    PulsedCoincidenceWeights w;
    w.middle_middle = franson_coincidence_probability(s);
    return w;
}

PhaseSlot classify_phase(std::int64_t reading_ps, const CycleLayout& layout) {
    if (layout.period_ps <= 0) throw Error("cycle period must be positive");
    std::array<std::pair<std::int64_t, std::int64_t>, 3> ws{layout.early, layout.middle,
                                                            layout.late};
    for (const auto& [b, e] : ws) {
        if (!(0 <= b && b < e && e <= layout.period_ps)) {
            throw OverlappingWindowsError("cycle window outside the period");
        }
    }
    auto sorted = ws;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i].first < sorted[i - 1].second) {
            throw OverlappingWindowsError("cycle windows intersect");
        }
    }
    std::int64_t pos = reading_ps % layout.period_ps;
    if (pos < 0) pos += layout.period_ps;
    if (pos >= ws[0].first && pos < ws[0].second) return PhaseSlot::early;
    if (pos >= ws[1].first && pos < ws[1].second) return PhaseSlot::middle;
    if (pos >= ws[2].first && pos < ws[2].second) return PhaseSlot::late;
    return PhaseSlot::outside;
}

std::pair<int, int> sample_polarization_pair(double angle_a_rad, double angle_b_rad,
                                             double intrinsic_error, std::uint64_t seed) {
    if (intrinsic_error < 0.0 || intrinsic_error > 0.5) {
        throw Error("intrinsic error must be in [0, 0.5]");
    }
    Prng rng(seed);
    const double corr = -std::cos(2.0 * (angle_a_rad - angle_b_rad));
    const int sigma_a = rng.bernoulli(0.5) ? 1 : -1;
    const int sigma_b = rng.bernoulli((1.0 + corr) / 2.0) ? sigma_a : -sigma_a;
    int bit_a = sigma_a > 0 ? 1 : 0;
    int bit_b = sigma_b > 0 ? 1 : 0;
    if (rng.bernoulli(intrinsic_error)) bit_a ^= 1;
    if (rng.bernoulli(intrinsic_error)) bit_b ^= 1;
    return {bit_a, bit_b};
}

void assign_entangled_bits(std::vector<optics::TaggedDetection>& a,
                           std::vector<optics::TaggedDetection>& b,
                           std::span<const double> angles_a_rad,
                           std::span<const double> angles_b_rad, double intrinsic_error) {
    std::unordered_map<std::int64_t, std::size_t> first_a;
    first_a.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].emission_index >= 0) first_a.emplace(a[i].emission_index, i);
    }
    for (auto& db : b) {
        if (db.emission_index < 0) continue;
        auto it = first_a.find(db.emission_index);
        if (it == first_a.end()) continue;
        auto& da = a[it->second];
        auto ba = static_cast<std::size_t>(da.rec.basis);
        auto bb = static_cast<std::size_t>(db.rec.basis);
        if (ba >= angles_a_rad.size() || bb >= angles_b_rad.size()) {
            throw Error("record basis has no analyzer angle");
        }
        auto [bit_a, bit_b] = sample_polarization_pair(angles_a_rad[ba], angles_b_rad[bb],
                                                       intrinsic_error, da.pair_seed);
        da.rec.bit = bit_a;
        db.rec.bit = bit_b;
    }
}

std::vector<SiftedPair> sift(std::span<const records::DetectionRecord> a,
                             std::span<const records::DetectionRecord> b, double offset_ps,
                             std::int64_t window_ps) {
    if (window_ps < 0) throw Error("coincidence window must be non-negative");

    // Content keys keep the preference order symmetric between the two
    // streams: candidates tie only when their records are interchangeable.
    using Content = std::tuple<std::int64_t, int, int, int>;
    auto content = [](const records::DetectionRecord& r) {
        return Content{r.reading_ps, r.basis, r.bit, r.channel};
    };
    struct Candidate {
        double absd;
        Content lo, hi;
        std::size_t i, j;
        bool operator>(const Candidate& o) const {
            return std::tie(absd, lo, hi, i, j) > std::tie(o.absd, o.lo, o.hi, o.i, o.j);
        }
    };
    std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> heap;

    const auto w = static_cast<double>(window_ps);
    std::size_t j_lo = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto ra = static_cast<double>(a[i].reading_ps);
        while (j_lo < b.size() && static_cast<double>(b[j_lo].reading_ps) - offset_ps < ra - w) {
            ++j_lo;
        }
        for (std::size_t j = j_lo; j < b.size(); ++j) {
            const double d = static_cast<double>(b[j].reading_ps) - offset_ps - ra;
            if (d > w) break;
            auto ca = content(a[i]);
            auto cb = content(b[j]);
            heap.push({std::abs(d), std::min(ca, cb), std::max(ca, cb), i, j});
        }
    }

    std::vector<char> used_a(a.size(), 0), used_b(b.size(), 0);
    std::vector<SiftedPair> out;
    while (!heap.empty()) {
        Candidate c = heap.top();
        heap.pop();
        if (used_a[c.i] || used_b[c.j]) continue;
        used_a[c.i] = 1;
        used_b[c.j] = 1;
        out.push_back({a[c.i].reading_ps, b[c.j].reading_ps, a[c.i].basis, b[c.j].basis,
                       a[c.i].bit, b[c.j].bit});
    }
    std::sort(out.begin(), out.end(), [](const SiftedPair& x, const SiftedPair& y) {
        return std::tie(x.reading_a_ps, x.reading_b_ps) < std::tie(y.reading_a_ps, y.reading_b_ps);
    });
    return out;
}

QberResult qber(std::span<const SiftedPair> pairs,
                std::span<const std::pair<int, int>> anticorrelated_combos) {
    QberResult r;
    std::size_t errors = 0;
    for (const auto& p : pairs) {
        bool key = false;
        for (const auto& [ba, bb] : anticorrelated_combos) {
            if (p.basis_a == ba && p.basis_b == bb) {
                key = true;
                break;
            }
        }
        if (!key) continue;
        ++r.matched;
        if (p.bit_a == p.bit_b) ++errors;  // anti-correlation expected
    }
    if (r.matched == 0) throw EmptySampleError("no sifted pair matches the basis filter");
    r.error_rate = static_cast<double>(errors) / static_cast<double>(r.matched);
    return r;
}

double chsh(std::span<const SiftedPair> pairs, const ChshSettings& s) {
    double sum[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
    std::size_t n[2][2] = {{0, 0}, {0, 0}};
    for (const auto& p : pairs) {
        int ia = p.basis_a == s.a0 ? 0 : (p.basis_a == s.a1 ? 1 : -1);
        int ib = p.basis_b == s.b0 ? 0 : (p.basis_b == s.b1 ? 1 : -1);
        if (ia < 0 || ib < 0) continue;
        sum[ia][ib] += static_cast<double>((2 * p.bit_a - 1) * (2 * p.bit_b - 1));
        ++n[ia][ib];
    }
    for (int ia = 0; ia < 2; ++ia) {
        for (int ib = 0; ib < 2; ++ib) {
            if (n[ia][ib] == 0) {
                throw MissingSettingCombinationError("a setting combination has no pairs");
            }
        }
    }
    auto e = [&](int ia, int ib) { return sum[ia][ib] / static_cast<double>(n[ia][ib]); };
    return std::abs(e(0, 0) - e(0, 1) + e(1, 0) + e(1, 1));
}

}  // namespace tagsync::qkd
