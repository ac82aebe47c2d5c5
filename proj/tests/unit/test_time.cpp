#include <doctest.h>

#include <cstdint>
#include <limits>

#include "tagsync/time.hpp"

using namespace tagsync;

TEST_CASE("checked arithmetic returns exact values in range") {
    CHECK(checked_add(2, 3) == 5);
    CHECK(checked_sub(2, 3) == -1);
    CHECK(checked_mul(-4, 5) == -20);
    const std::int64_t big = std::numeric_limits<std::int64_t>::max();
    CHECK(checked_add(big - 1, 1) == big);
    CHECK(checked_sub(-big, 0) == -big);
}

TEST_CASE("checked arithmetic throws on overflow instead of wrapping") {
    const std::int64_t big = std::numeric_limits<std::int64_t>::max();
    const std::int64_t small = std::numeric_limits<std::int64_t>::min();
    CHECK_THROWS_AS(checked_add(big, 1), OverflowError);
    CHECK_THROWS_AS(checked_sub(small, 1), OverflowError);
    CHECK_THROWS_AS(checked_mul(big / 2, 3), OverflowError);
    CHECK_THROWS_AS(checked_mul(small, -1), OverflowError);
}

TEST_CASE("durations and instants convert without drift") {
    auto d = SimDuration::from_seconds(1.5);
    CHECK(d.fs() == 1'500'000'000'000'000);
    CHECK(d.seconds() == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(SimDuration::from_ps(7).fs() == 7000);

    auto t = SimInstant::from_fs(42);
    auto u = t + SimDuration::from_fs(8);
    CHECK(u.fs() == 50);
    CHECK((u - t).fs() == 8);
    CHECK(u > t);
}

TEST_CASE("instant arithmetic at the representable edge throws") {
    auto t = SimInstant::from_fs(std::numeric_limits<std::int64_t>::max());
    CHECK_THROWS_AS(t + SimDuration::from_fs(1), OverflowError);
}
