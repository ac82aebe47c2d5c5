// Microbenchmarks for the hot paths of offset recovery: histogram
// construction, peak search over record streams, and coincidence sifting.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "tagsync/correlate.hpp"
#include "tagsync/qkd.hpp"
#include "tagsync/records.hpp"
#include "tagsync/rng.hpp"

namespace {

using tagsync::Prng;
using tagsync::records::DetectionRecord;

// Two correlated streams: shared Poisson arrivals shifted by a fixed lag,
// plus independent background on each side.
std::pair<std::vector<DetectionRecord>, std::vector<DetectionRecord>> make_streams(
    std::size_t pairs, std::size_t background, std::int64_t offset_ps) {
    Prng rng(0x5eed);
    std::vector<DetectionRecord> a;
    std::vector<DetectionRecord> b;
    double t = 0.0;
    for (std::size_t i = 0; i < pairs; ++i) {
        t += rng.exponential(1e5);  // mean gap 100 ns in ps
        auto base = static_cast<std::int64_t>(t);
        a.push_back({"A", base, 0, 0, 0, {}});
        b.push_back({"B", base + offset_ps, 0, 0, 0, {}});
    }
    const double span = t;
    for (std::size_t i = 0; i < background; ++i) {
        a.push_back({"A", static_cast<std::int64_t>(rng.uniform01() * span), 0, 0, 0, {}});
        b.push_back({"B", static_cast<std::int64_t>(rng.uniform01() * span), 0, 0, 0, {}});
    }
    auto by_reading = [](const DetectionRecord& x, const DetectionRecord& y) {
        return x.reading_ps < y.reading_ps;
    };
    std::sort(a.begin(), a.end(), by_reading);
    std::sort(b.begin(), b.end(), by_reading);
    return {std::move(a), std::move(b)};
}

void BM_CorrelateRecords(benchmark::State& state) {
    auto [a, b] = make_streams(static_cast<std::size_t>(state.range(0)),
                               static_cast<std::size_t>(state.range(0)) / 2, 123456);
    for (auto _ : state) {
        auto h = tagsync::correlate::correlate_records(a, b, 1000, -5'000'000, 5'000'000);
        benchmark::DoNotOptimize(h.peak_value);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(a.size() + b.size()));
}
BENCHMARK(BM_CorrelateRecords)->Arg(10'000)->Arg(100'000);

void BM_AcquireOffset(benchmark::State& state) {
    auto [a, b] = make_streams(static_cast<std::size_t>(state.range(0)),
                               static_cast<std::size_t>(state.range(0)) / 2, 12'345'000);
    tagsync::correlate::AcquireParams p;
    p.tau_min_ps = -50'000'000;
    p.tau_max_ps = 50'000'000;
    p.fine_bin_ps = 50;
    for (auto _ : state) {
        auto r = tagsync::correlate::acquire_offset(a, b, p);
        benchmark::DoNotOptimize(r);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(a.size() + b.size()));
}
BENCHMARK(BM_AcquireOffset)->Arg(10'000)->Arg(100'000);

void BM_Sift(benchmark::State& state) {
    auto [a, b] = make_streams(static_cast<std::size_t>(state.range(0)),
                               static_cast<std::size_t>(state.range(0)) / 10, 2000);
    for (auto _ : state) {
        auto pairs = tagsync::qkd::sift(a, b, 2000.0, 4000);
        benchmark::DoNotOptimize(pairs.size());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(a.size() + b.size()));
}
BENCHMARK(BM_Sift)->Arg(10'000)->Arg(100'000);

void BM_DetectPeriodicity(benchmark::State& state) {
    // Worst case for the guard: a dense aperiodic stream it must clear.
    auto [a, b] = make_streams(static_cast<std::size_t>(state.range(0)),
                               static_cast<std::size_t>(state.range(0)), 0);
    tagsync::correlate::PeriodScanParams p;
    for (auto _ : state) {
        auto r = tagsync::correlate::detect_periodicity(a, p);
        benchmark::DoNotOptimize(r);
    }
}
BENCHMARK(BM_DetectPeriodicity)->Arg(50'000);

}  // namespace
