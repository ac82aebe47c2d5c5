#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "tagsync/errors.hpp"
#include "tagsync/qkd.hpp"
#include "tagsync/records.hpp"
#include "tagsync/rng.hpp"

using namespace tagsync;
using namespace tagsync::qkd;

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;

records::DetectionRecord rec(std::int64_t reading, int basis = 0, int bit = 0) {
    records::DetectionRecord r;
    r.agent = "A";
    r.reading_ps = reading;
    r.basis = basis;
    r.bit = bit;
    return r;
}

std::vector<records::DetectionRecord> sv(std::initializer_list<records::DetectionRecord> l) {
    return {l};
}
}  // namespace

TEST_CASE("interference probability matches the closed form and a local amplitude sum") {
    const double alpha = 0.3, beta = -0.2;
    for (int k = 0; k < 100; ++k) {
        const double phi = -kPi + 2.0 * kPi * static_cast<double>(k) / 99.0;
        const double got = franson_coincidence_probability({phi, alpha, beta});
        const double arg = (phi - alpha - beta) / 2.0;
        const double closed = std::cos(arg) * std::cos(arg);
        CHECK(std::abs(got - closed) < 1e-12);
        // independent complex-amplitude evaluation, written out locally
        std::complex<double> z =
            std::polar(1.0, alpha + beta) + std::polar(1.0, phi);
        CHECK(std::abs(got - std::norm(z) / 4.0) < 1e-12);
    }
}

TEST_CASE("cycle class weights: non-interfering halves, interfering middle") {
    auto w = pulsed_coincidence_weights({0.5, 0.1, 0.2});
    CHECK(w.early_early == 0.5);
    CHECK(w.late_late == 0.5);
    CHECK(w.middle_middle ==
          doctest::Approx(franson_coincidence_probability({0.5, 0.1, 0.2})));
}

TEST_CASE("classify_phase wraps and respects half-open windows") {
    CycleLayout l;
    l.period_ps = 1200;
    l.early = {0, 200};
    l.middle = {400, 600};
    l.late = {800, 1000};
    CHECK(classify_phase(0, l) == PhaseSlot::early);
    CHECK(classify_phase(199, l) == PhaseSlot::early);
    CHECK(classify_phase(200, l) == PhaseSlot::outside);
    CHECK(classify_phase(400, l) == PhaseSlot::middle);
    CHECK(classify_phase(999, l) == PhaseSlot::late);
    CHECK(classify_phase(1000, l) == PhaseSlot::outside);
    CHECK(classify_phase(1399, l) == PhaseSlot::early);   // wraps to 199
    CHECK(classify_phase(-1, l) == PhaseSlot::outside);   // wraps to 1199
    CHECK(classify_phase(-800, l) == PhaseSlot::middle);  // wraps to 400
}

TEST_CASE("classify_phase rejects bad layouts") {
    CycleLayout l;
    l.period_ps = 1000;
    l.early = {0, 300};
    l.middle = {250, 500};  // overlaps early
    l.late = {600, 700};
    CHECK_THROWS_AS(classify_phase(0, l), OverlappingWindowsError);
    l.middle = {300, 500};
    l.late = {600, 1100};  // leaves the cycle
    CHECK_THROWS_AS(classify_phase(0, l), OverlappingWindowsError);
    l.late = {600, 1000};
    CHECK_NOTHROW(classify_phase(0, l));
}

TEST_CASE("pair outcomes are seed-deterministic and anti-correlated at equal angles") {
    auto first = sample_polarization_pair(0.3, 0.3, 0.0, 42);
    auto again = sample_polarization_pair(0.3, 0.3, 0.0, 42);
    CHECK(first == again);
    for (std::uint64_t s = 0; s < 500; ++s) {
        auto [ba, bb] = sample_polarization_pair(1.1, 1.1, 0.0, s);
        CHECK(ba != bb);
    }
    CHECK_THROWS_AS(sample_polarization_pair(0, 0, -0.1, 1), Error);
    CHECK_THROWS_AS(sample_polarization_pair(0, 0, 0.6, 1), Error);
}

TEST_CASE("pair correlator follows -cos 2(a-b)") {
    const double a = 0.0, b = kPi / 8.0;
    double sum = 0.0;
    const int n = 40000;
    for (int s = 0; s < n; ++s) {
        auto [ba, bb] = sample_polarization_pair(a, b, 0.0, static_cast<std::uint64_t>(s) + 7);
        sum += static_cast<double>((2 * ba - 1) * (2 * bb - 1));
    }
    const double want = -std::cos(2.0 * (a - b));
    CHECK(std::abs(sum / n - want) < 0.02);
}

TEST_CASE("intrinsic error flips agreement at the expected rate") {
    const double e = 0.01;
    int agree = 0;
    const int n = 40000;
    for (int s = 0; s < n; ++s) {
        auto [ba, bb] = sample_polarization_pair(0.5, 0.5, e, static_cast<std::uint64_t>(s) + 99);
        if (ba == bb) ++agree;
    }
    const double want = 2.0 * e * (1.0 - e);
    CHECK(std::abs(static_cast<double>(agree) / n - want) < 0.004);
}

TEST_CASE("assign_entangled_bits rewrites only co-detected pairs, by pair seed") {
    std::vector<optics::TaggedDetection> a(3), b(3);
    for (int i = 0; i < 3; ++i) {
        a[i].rec = rec(1000 * i, 0, 0);
        a[i].emission_index = i;
        a[i].pair_seed = derive_seed(5, "pair") + static_cast<std::uint64_t>(i);
        b[i].rec = rec(1000 * i + 50, 0, 1);
        b[i].emission_index = i;
        b[i].pair_seed = a[i].pair_seed;
    }
    b[2].emission_index = 99;  // partner missing on the A side
    std::vector<double> angles = {0.0};
    assign_entangled_bits(a, b, angles, angles, 0.0);
    for (int i = 0; i < 2; ++i) {
        CHECK(a[i].rec.bit != b[i].rec.bit);  // anti-correlated at equal angles
        auto [wa, wb] = sample_polarization_pair(0.0, 0.0, 0.0, a[i].pair_seed);
        CHECK(a[i].rec.bit == wa);
        CHECK(b[i].rec.bit == wb);
    }
    CHECK(b[2].rec.bit == 1);  // provisional bit untouched

    b[1].rec.basis = 7;  // no such analyzer angle
    CHECK_THROWS_AS(assign_entangled_bits(a, b, angles, angles, 0.0), Error);
}

TEST_CASE("sift pairs nearest records, inclusively, honoring the offset") {
    std::vector<records::DetectionRecord> a = {rec(0), rec(100)};
    std::vector<records::DetectionRecord> b = {rec(3), rec(97)};
    auto pairs = sift(a, b, 0.0, 10);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].reading_a_ps == 0);
    CHECK(pairs[0].reading_b_ps == 3);
    CHECK(pairs[1].reading_a_ps == 100);
    CHECK(pairs[1].reading_b_ps == 97);

    // nearest wins under contention
    auto p2 = sift(sv({rec(0)}), sv({rec(-2), rec(3)}), 0.0, 5);
    REQUIRE(p2.size() == 1);
    CHECK(p2[0].reading_b_ps == -2);

    // window edge is inclusive
    CHECK(sift(sv({rec(0)}), sv({rec(10)}), 0.0, 10).size() == 1);
    CHECK(sift(sv({rec(0)}), sv({rec(11)}), 0.0, 10).empty());

    // the offset shifts the comparison, not the stored readings
    auto p3 = sift(sv({rec(0)}), sv({rec(5005)}), 5000.0, 10);
    REQUIRE(p3.size() == 1);
    CHECK(p3[0].reading_b_ps == 5005);
}

TEST_CASE("sift ties break identically from both sides") {
    // two A records equidistant from one B record: the lower content wins
    auto p = sift(sv({rec(0), rec(4)}), sv({rec(2)}), 0.0, 5);
    REQUIRE(p.size() == 1);
    CHECK(p[0].reading_a_ps == 0);
}

TEST_CASE("sift is symmetric, within-window, reuse-free and maximal") {
    Prng rng(77);
    std::vector<records::DetectionRecord> a, b;
    for (int i = 0; i < 200; ++i) {
        a.push_back(rec(static_cast<std::int64_t>(rng.uniform_int(10000)),
                        static_cast<int>(rng.uniform_int(2)), static_cast<int>(rng.uniform_int(2))));
        b.push_back(rec(static_cast<std::int64_t>(rng.uniform_int(10000)),
                        static_cast<int>(rng.uniform_int(2)), static_cast<int>(rng.uniform_int(2))));
    }
    auto by_reading = [](const records::DetectionRecord& x, const records::DetectionRecord& y) {
        return x.reading_ps < y.reading_ps;
    };
    std::sort(a.begin(), a.end(), by_reading);
    std::sort(b.begin(), b.end(), by_reading);
    const double offset = 100.0;
    const std::int64_t window = 50;

    auto fwd = sift(a, b, offset, window);
    auto rev = sift(b, a, -offset, window);
    REQUIRE(fwd.size() == rev.size());
    auto key = [](const SiftedPair& p) { return std::pair(p.reading_a_ps, p.reading_b_ps); };
    std::vector<std::pair<std::int64_t, std::int64_t>> kf, kr;
    for (const auto& p : fwd) kf.push_back(key(p));
    for (const auto& p : rev) kr.push_back({p.reading_b_ps, p.reading_a_ps});
    std::sort(kf.begin(), kf.end());
    std::sort(kr.begin(), kr.end());
    CHECK(kf == kr);

    std::map<std::int64_t, int> avail_a, avail_b;
    for (const auto& r : a) ++avail_a[r.reading_ps];
    for (const auto& r : b) ++avail_b[r.reading_ps];
    for (const auto& p : fwd) {
        CHECK(std::abs(static_cast<double>(p.reading_b_ps) - offset -
                       static_cast<double>(p.reading_a_ps)) <= static_cast<double>(window));
        --avail_a[p.reading_a_ps];
        --avail_b[p.reading_b_ps];
        CHECK(avail_a[p.reading_a_ps] >= 0);  // no record used twice
        CHECK(avail_b[p.reading_b_ps] >= 0);
    }
    // maximality: no leftover pair still fits the window
    for (const auto& [ra, ca] : avail_a) {
        if (ca <= 0) continue;
        for (const auto& [rb, cb] : avail_b) {
            if (cb <= 0) continue;
            CHECK(std::abs(static_cast<double>(rb) - offset - static_cast<double>(ra)) >
                  static_cast<double>(window));
        }
    }
}

TEST_CASE("sift recovers every pair of a cleanly shifted stream") {
    std::vector<records::DetectionRecord> a, b;
    Prng rng(78);
    std::int64_t t = 0;
    for (int i = 0; i < 500; ++i) {
        t += 1000 + static_cast<std::int64_t>(rng.uniform_int(9000));
        a.push_back(rec(t));
        b.push_back(rec(t + 5000));
    }
    auto pairs = sift(a, b, 5000.0, 0);
    CHECK(pairs.size() == 500);
}

TEST_CASE("qber counts agreements within the anti-correlated basis combos") {
    std::vector<SiftedPair> pairs = {
        {0, 0, 0, 0, 0, 1},  // key combo, anti-correlated: good
        {0, 0, 0, 0, 1, 1},  // key combo, agreement: error
        {0, 0, 0, 1, 1, 1},  // off-combo, ignored
        {0, 0, 1, 1, 0, 0},  // key combo, agreement: error
    };
    std::vector<std::pair<int, int>> combos = {{0, 0}, {1, 1}};
    auto r = qber(pairs, combos);
    CHECK(r.matched == 3);
    CHECK(r.error_rate == doctest::Approx(2.0 / 3.0));

    std::vector<std::pair<int, int>> none = {{5, 5}};
    CHECK_THROWS_AS(qber(pairs, none), EmptySampleError);
}

TEST_CASE("chsh combines the four correlators and demands full coverage") {
    std::vector<SiftedPair> pairs = {
        {0, 0, 0, 0, 1, 1}, {0, 0, 0, 0, 0, 0},  // E(0,0) = +1
        {0, 0, 0, 1, 1, 0}, {0, 0, 0, 1, 0, 1},  // E(0,1) = -1
        {0, 0, 1, 0, 1, 1},                      // E(1,0) = +1
        {0, 0, 1, 1, 1, 1},                      // E(1,1) = +1
    };
    CHECK(chsh(pairs, {}) == doctest::Approx(4.0));

    std::vector<SiftedPair> missing = {{0, 0, 0, 0, 1, 1}};
    CHECK_THROWS_AS(chsh(missing, {}), MissingSettingCombinationError);
}

TEST_CASE("sampled singlet statistics reach 2 sqrt 2 at the standard settings") {
    const double angles_a[2] = {0.0, kPi / 4.0};
    const double angles_b[2] = {kPi / 8.0, 3.0 * kPi / 8.0};
    Prng rng(79);
    std::vector<SiftedPair> pairs;
    for (int i = 0; i < 40000; ++i) {
        int ba = static_cast<int>(rng.uniform_int(2));
        int bb = static_cast<int>(rng.uniform_int(2));
        auto [bit_a, bit_b] = sample_polarization_pair(angles_a[ba], angles_b[bb], 0.0,
                                                       static_cast<std::uint64_t>(i) + 1234);
        pairs.push_back({0, 0, ba, bb, bit_a, bit_b});
    }
    const double s = chsh(pairs, {});
    CHECK(std::abs(s - 2.0 * std::sqrt(2.0)) < 0.07);
}

TEST_CASE("every deterministic classical strategy stays at or below 2") {
    double best = 0.0;
    for (int fa0 = 0; fa0 < 2; ++fa0)
        for (int fa1 = 0; fa1 < 2; ++fa1)
            for (int fb0 = 0; fb0 < 2; ++fb0)
                for (int fb1 = 0; fb1 < 2; ++fb1) {
                    std::vector<SiftedPair> pairs = {
                        {0, 0, 0, 0, fa0, fb0},
                        {0, 0, 0, 1, fa0, fb1},
                        {0, 0, 1, 0, fa1, fb0},
                        {0, 0, 1, 1, fa1, fb1},
                    };
                    const double s = chsh(pairs, {});
                    CHECK(s <= 2.0 + 1e-12);
                    best = std::max(best, s);
                }
    CHECK(best == doctest::Approx(2.0));
}
