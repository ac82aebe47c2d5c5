// Microbenchmarks for the simulation substrate: clock stamping, the event
// queue, and a small end-to-end scenario.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <string>

#include "tagsync/clock.hpp"
#include "tagsync/config.hpp"
#include "tagsync/engine.hpp"
#include "tagsync/rng.hpp"
#include "tagsync/scenario.hpp"
#include "tagsync/time.hpp"

namespace {

using tagsync::Prng;
using tagsync::SimInstant;

void BM_ClockReading(benchmark::State& state) {
    tagsync::clocks::ClockParams p;
    p.offset0_ps = 1234.0;
    p.skew = 1e-5;
    p.jitter_sigma_ps = 50.0;
    tagsync::clocks::ClockModel clk(p);
    Prng rng(7);
    std::int64_t t = 0;
    for (auto _ : state) {
        t += 1'000'000;  // 1 ns steps
        benchmark::DoNotOptimize(clk.reading_at(SimInstant::from_fs(t), rng).ps);
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ClockReading);

void BM_EventQueue(benchmark::State& state) {
    const auto n = static_cast<std::int64_t>(state.range(0));
    for (auto _ : state) {
        tagsync::engine::EventQueue q;
        std::uint64_t sink = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            q.schedule(SimInstant::from_fs(i * 1000), tagsync::engine::EventKind::generic,
                       [&sink, i] { sink += static_cast<std::uint64_t>(i); });
        }
        q.run_until(SimInstant::from_fs(n * 1000));
        benchmark::DoNotOptimize(sink);
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_EventQueue)->Arg(100'000);

void BM_ScenarioOffsetRecovery(benchmark::State& state) {
    const std::string cfg_text =
        "experiment = cw_offset_qkd\n"
        "seed = 11\n"
        "duration_s = 0.2\n"
        "source.type = cw\n"
        "source.pairs_per_s = 50000\n"
        "channel.a.loss = 0.2\n"
        "channel.b.loss = 0.2\n"
        "channel.b.delay_ps = 250000\n"
        "clock.b.offset_ps = 1000000\n"
        "clock.b.jitter_ps = 50\n"
        "detector.a.dark_hz = 1000\n"
        "detector.b.dark_hz = 1000\n"
        "correlate.tau_min_ps = -5000000\n"
        "correlate.tau_max_ps = 5000000\n"
        "correlate.fine_bin_ps = 50\n"
        "steer.epoch_s = 0.2\n";
    for (auto _ : state) {
        auto cfg = tagsync::config::Config::parse(cfg_text);
        auto rep = tagsync::scenario::run_scenario(cfg, {});
        benchmark::DoNotOptimize(rep.aborted);
    }
}
BENCHMARK(BM_ScenarioOffsetRecovery)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
