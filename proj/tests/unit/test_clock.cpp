#include <doctest.h>

#include <cmath>
#include <cstdint>

#include "tagsync/clock.hpp"
#include "tagsync/errors.hpp"
#include "tagsync/rng.hpp"
#include "tagsync/time.hpp"

using namespace tagsync;
using clocks::ClockModel;
using clocks::ClockParams;
using clocks::SteeringCommand;

namespace {
SimInstant at_s(double s) { return SimInstant::from_fs(static_cast<std::int64_t>(s * 1e15)); }
}  // namespace

TEST_CASE("noiseless affine clock matches the oracle phase to under 1 ps") {
    ClockParams p;
    p.offset0_ps = 123456.789;
    p.skew = 1e-5;
    ClockModel clk(p);
    Prng rng(1);
    for (int i = 1; i <= 1000; ++i) {
        auto t = SimInstant::from_fs(static_cast<std::int64_t>(i) * 777'777'777'777);
        double expected = clk.phase_ps_at(t);
        auto reading = clk.reading_at(t, rng);
        CHECK(std::abs(static_cast<double>(reading.ps) - expected) <= 1.0);
    }
}

TEST_CASE("phase oracle is affine: truth plus offset plus skew times elapsed time") {
    ClockParams p;
    p.offset0_ps = 500.0;
    p.skew = 2e-6;
    ClockModel clk(p);
    auto error_at = [&](double s) {
        return clk.phase_ps_at(at_s(s)) - s * 1e12;
    };
    CHECK(error_at(0.0) == doctest::Approx(500.0));
    CHECK(error_at(1.0) == doctest::Approx(500.0 + 2e6));
    CHECK(error_at(2.5) == doctest::Approx(500.0 + 5e6));
}

TEST_CASE("queries must be monotone in ground truth") {
    ClockModel clk(ClockParams{});
    Prng rng(1);
    clk.reading_at(at_s(1.0), rng);
    CHECK_THROWS_AS(clk.reading_at(at_s(0.5), rng), Error);
}

TEST_CASE("an offset nudge shifts every later reading by that amount") {
    ClockParams p;
    p.offset0_ps = 0.0;
    ClockModel clk(p);
    Prng rng(1);
    auto before = clk.reading_at(at_s(1.0), rng);
    clk.apply_steer(SteeringCommand{-250.0, 0.0});
    auto after = clk.reading_at(at_s(1.0), rng);  // same instant, nudged
    CHECK(after.ps == before.ps - 250);
    CHECK(clk.phase_ps_at(at_s(2.0)) - 2e12 == doctest::Approx(-250.0));
}

TEST_CASE("a rate adjustment changes the slope from the moment it is applied") {
    ClockModel clk(ClockParams{});
    Prng rng(1);
    clk.reading_at(at_s(1.0), rng);
    clk.apply_steer(SteeringCommand{0.0, 1e-6});
    // one second at rate 1 + 1e-6 accumulates 1e6 ps of extra phase
    auto r = clk.reading_at(at_s(2.0), rng);
    CHECK(static_cast<double>(r.ps) == doctest::Approx(2e12 + 1e6).epsilon(1e-12));
    CHECK(clk.rate() == doctest::Approx(1.0 + 1e-6));
}

TEST_CASE("rate clamp rejects commands pushing the rate outside [0.5, 2]") {
    ClockModel clk(ClockParams{});
    CHECK_THROWS_AS(clk.apply_steer(SteeringCommand{0.0, 1.5}), ClampViolationError);
    CHECK_THROWS_AS(clk.apply_steer(SteeringCommand{0.0, -0.6}), ClampViolationError);
    // boundary values are allowed
    clk.apply_steer(SteeringCommand{0.0, 1.0});   // rate 2.0
    CHECK(clk.rate() == doctest::Approx(2.0));
}

TEST_CASE("reading jitter is white with the configured sigma") {
    ClockParams p;
    p.jitter_sigma_ps = 50.0;
    ClockModel clk(p);
    Prng rng(11);
    const int n = 20000;
    double sum = 0.0;
    double sq = 0.0;
    for (int i = 1; i <= n; ++i) {
        auto t = SimInstant::from_fs(static_cast<std::int64_t>(i) * 1'000'000'000);
        double truth_ps = static_cast<double>(t.fs()) / 1000.0;
        double err = static_cast<double>(clk.reading_at(t, rng).ps) - truth_ps;
        sum += err;
        sq += err * err;
    }
    double mean = sum / n;
    double sd = std::sqrt(sq / n - mean * mean);
    CHECK(std::abs(mean) < 5.0 * 50.0 / std::sqrt(static_cast<double>(n)));
    CHECK(sd == doctest::Approx(50.0).epsilon(0.05));
}

TEST_CASE("rate random walk accumulates variance linearly in elapsed time") {
    // Run many independent clocks for 1 s and check the dispersion of the
    // accumulated phase error scales like rw_sigma * t^(3/2) in order of
    // magnitude. Use a crude 40% tolerance; this is a scaling check.
    const double rw = 1e-9;
    const int clocks_n = 300;
    double sq = 0.0;
    for (int c = 0; c < clocks_n; ++c) {
        ClockParams p;
        p.rw_sigma = rw;
        ClockModel clk(p);
        Prng rng(static_cast<std::uint64_t>(c) + 1);
        double err = 0.0;
        for (int i = 1; i <= 100; ++i) {
            auto t = SimInstant::from_fs(static_cast<std::int64_t>(i) * 10'000'000'000'000);
            err = static_cast<double>(clk.reading_at(t, rng).ps) -
                  static_cast<double>(t.fs()) / 1000.0;
        }
        sq += err * err;
    }
    const double sd = std::sqrt(sq / clocks_n);
    // After 1 s with steps of 10 ms the expected rms phase error is
    // rw * sqrt(sum of step variances) ~ rw * t * sqrt(t/steps) in ps units.
    const double expect = rw * 1e12 * std::sqrt(1.0 / 3.0);
    CHECK(sd > 0.3 * expect);
    CHECK(sd < 3.0 * expect);
}

TEST_CASE("steering history composes: nudges add, rate factors multiply") {
    ClockModel clk(ClockParams{});
    clk.apply_steer(SteeringCommand{10.0, 1e-6});
    clk.apply_steer(SteeringCommand{-4.0, 1e-6});
    CHECK(clk.phase_ps_at(at_s(0.0)) == doctest::Approx(6.0));
    CHECK(clk.rate() == doctest::Approx((1.0 + 1e-6) * (1.0 + 1e-6)));
}
