#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tagsync/config.hpp"
#include "tagsync/errors.hpp"
#include "tagsync/scenario.hpp"

using namespace tagsync;
namespace fs = std::filesystem;

namespace {

scenario::MetricsReport run_text(const std::string& text, const std::string& out_dir = "",
                                 bool hist = false) {
    auto cfg = config::Config::parse(text);
    scenario::RunOptions opt;
    opt.out_dir = out_dir;
    opt.emit_histograms = hist;
    return scenario::run_scenario(cfg, opt);
}

std::map<std::string, std::string> slurp_dir(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& ent : fs::directory_iterator(dir)) {
        std::ifstream in(ent.path(), std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        out[ent.path().filename().string()] = ss.str();
    }
    return out;
}

// One clean pair stream, one whole epoch, known clock offset and path delay.
std::string cw_smoke_text() {
    return "experiment = cw_offset_qkd\n"
           "seed = 11\n"
           "duration_s = 0.05\n"
           "source.type = cw\n"
           "source.pairs_per_s = 100000\n"
           "channel.b.delay_ps = 5000\n"
           "clock.b.offset_ps = 2000\n"
           "correlate.tau_min_ps = -50000\n"
           "correlate.tau_max_ps = 50000\n"
           "steer.epoch_s = 0.05\n"
           "qkd.window_ps = 2000\n"
           "qkd.key_combos = 0:0\n"
           "qkd.intrinsic_error = 0.01\n";
}

}  // namespace

TEST_CASE("metrics report stores formatted entries in order") {
    scenario::MetricsReport rep;
    rep.add("alpha", 1.5);
    rep.add("beta", static_cast<std::int64_t>(-3));
    rep.add_uint("gamma", 7);
    rep.add("word", std::string("hello"));
    CHECK(rep.has("alpha"));
    CHECK(!rep.has("delta"));
    CHECK(rep.get("beta") == "-3");
    CHECK(rep.get_double("alpha") == 1.5);
    CHECK_THROWS_AS(rep.get("delta"), Error);
    CHECK_THROWS_AS(rep.get_double("word"), Error);
    auto text = rep.to_text();
    CHECK(text.find("aborted = false\n") == 0);
    CHECK(text.find("alpha = 1.5\n") < text.find("beta = -3\n"));
}

TEST_CASE("fnv1a64 matches published vectors") {
    CHECK(scenario::fnv1a64("") == 14695981039346656037ull);
    CHECK(scenario::fnv1a64("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("cw offset pipeline recovers delay plus clock offset") {
    auto rep = run_text(cw_smoke_text());
    CHECK(!rep.aborted);
    CHECK(rep.get("experiment") == "cw_offset_qkd");
    CHECK(rep.get_double("tau_true_initial_ps") == 7000.0);
    CHECK(rep.get_double("tau_hat_epoch_0") == doctest::Approx(7000.0));
    CHECK(rep.get_double("epochs_with_peak") == 1.0);
    auto n_a = rep.get_double("records_a");
    CHECK(n_a > 4600.0);
    CHECK(n_a < 5400.0);
    // one nudge of -0.5 * 7000 against an initial 2000 ps clock offset
    CHECK(rep.get_double("offset_error_final_ps") == doctest::Approx(-1500.0));
    CHECK(rep.get_double("tau_hat_tail_ps") == doctest::Approx(7000.0));
    CHECK(rep.get_double("sifted_pairs") >= 4500.0);
    auto qber = rep.get_double("qber");
    CHECK(qber >= 0.0);
    CHECK(qber < 0.05);
}

TEST_CASE("cw rate pipeline settles then contracts the offset") {
    // Noiseless plant, so the estimates follow the policy exactly: the
    // first epoch only primes the loop, the second proves the slope flat
    // and parks the rate lever, and from then on every epoch halves the
    // offset: 300, 300, 150, 75, 37.5, 18.75. The centroid tracks the
    // sub-bin values; integer-ps readings smear the last two slightly.
    auto rep = run_text(
        "experiment = cw_rate_steer_qkd\n"
        "seed = 4\n"
        "duration_s = 0.6\n"
        "source.type = cw\n"
        "source.pairs_per_s = 20000\n"
        "clock.b.offset_ps = 300\n"
        "correlate.tau_min_ps = -50000\n"
        "correlate.tau_max_ps = 50000\n"
        "steer.epoch_s = 0.1\n");
    CHECK(!rep.aborted);
    CHECK(rep.get_double("tau_hat_epoch_0") == doctest::Approx(300.0).epsilon(0.01));
    CHECK(rep.get_double("tau_hat_epoch_1") == doctest::Approx(300.0).epsilon(0.01));
    CHECK(rep.get_double("tau_hat_epoch_2") == doctest::Approx(150.0).epsilon(0.02));
    CHECK(rep.get_double("tau_hat_epoch_3") == doctest::Approx(75.0).epsilon(0.05));
    CHECK(rep.get_double("tau_hat_epoch_4") == doctest::Approx(37.5).epsilon(0.08));
    CHECK(rep.get_double("tau_hat_epoch_5") == doctest::Approx(18.75).epsilon(0.15));
    CHECK(std::abs(rep.get_double("offset_error_final_ps") - 10.0) < 2.0);
    CHECK(rep.get_double("residual_skew_final") == 0.0);
    CHECK(rep.get_double("rate_converged") == 1.0);
}

TEST_CASE("pulsed pipeline classifies every arrival") {
    auto rep = run_text(
        "experiment = pulsed_logical_sync\n"
        "seed = 7\n"
        "duration_s = 0.01\n"
        "source.type = pulsed\n"
        "source.pulse_period_ps = 1000000\n"
        "source.efficiency = 0.5\n"
        "channel.ab.delay_ps = 5000\n"
        "phase.eval_after_cycles = 2000\n"
        "phase.eval_count = 5000\n"
        "phase.gate_records = false\n");
    CHECK(!rep.aborted);
    auto total = rep.get_double("arrivals_total");
    CHECK(total > 4000.0);
    CHECK(total < 6000.0);
    CHECK(rep.get_double("records_b") == total);
    auto sum = rep.get_double("count_early") + rep.get_double("count_middle") +
               rep.get_double("count_late") + rep.get_double("count_outside");
    CHECK(sum == total);
    auto eval_n = rep.get_double("eval_arrivals");
    CHECK(eval_n > 3700.0);
    CHECK(eval_n < 4300.0);
    CHECK(rep.get_double("franson_middle_probability") == doctest::Approx(1.0));
    auto rate = rep.get_double("receiver_rate_final");
    CHECK(rate > 0.9);
    CHECK(rate < 1.1);
}

TEST_CASE("bidirectional pipeline separates offset from symmetric delay") {
    auto rep = run_text(
        "experiment = bidirectional_sync\n"
        "seed = 9\n"
        "duration_s = 0.1\n"
        "source.pairs_per_s = 20000\n"
        "channel.ab.delay_ps = 5000\n"
        "channel.ba.delay_ps = 5000\n"
        "clock.b.offset_ps = 2000\n"
        "correlate.tau_min_ps = -50000\n"
        "correlate.tau_max_ps = 50000\n"
        "probe.count = 10\n"
        "probe.start_s = 0.2\n"
        "probe.span_s = 0.1\n");
    CHECK(!rep.aborted);
    CHECK(rep.get_double("tau_ab_hat_ps") == doctest::Approx(7000.0));
    CHECK(rep.get_double("tau_ba_hat_ps") == doctest::Approx(-3000.0));
    CHECK(rep.get_double("theta_hat_ps") == doctest::Approx(2000.0));
    CHECK(rep.get_double("delay_hat_ps") == doctest::Approx(5000.0));
    CHECK(rep.get_double("theta_true_ps") == 2000.0);
    CHECK(rep.get_double("probes") == 10.0);
    // steered clocks and symmetric paths leave only quantization residue
    CHECK(std::abs(rep.get_double("mean_residual_aba_ps")) <= 1.5);
    CHECK(std::abs(rep.get_double("mean_residual_bab_ps")) <= 1.5);
}

TEST_CASE("periodic source aborts the cw pipeline with a period estimate") {
    auto rep = run_text(
        "experiment = cw_offset_qkd\n"
        "seed = 3\n"
        "duration_s = 0.01\n"
        "source.type = pulsed\n"
        "source.pulse_period_ps = 10000\n"
        "source.efficiency = 0.02\n"
        "correlate.tau_min_ps = -50000\n"
        "correlate.tau_max_ps = 50000\n"
        "steer.epoch_s = 0.01\n");
    CHECK(rep.aborted);
    CHECK(rep.abort_reason == "ambiguous_periodic_source");
    auto period = rep.get_double("period_est_ps");
    CHECK(period > 9900.0);
    CHECK(period < 10100.0);
    auto text = rep.to_text();
    CHECK(text.find("aborted = true\n") == 0);
    CHECK(text.find("abort_reason = ambiguous_periodic_source\n") != std::string::npos);
}

TEST_CASE("config errors pass through instead of aborting") {
    CHECK_THROWS_AS(run_text("experiment = warp_drive\nseed = 1\n"), ConfigError);
    try {
        run_text(cw_smoke_text() + "mystery.knob = 1\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.key_path == "mystery.knob");
    }
}

TEST_CASE("identical config and seed produce byte-identical output trees") {
    const fs::path base = fs::temp_directory_path();
    const fs::path dir_a = base / "tagsync_scn_det_a";
    const fs::path dir_b = base / "tagsync_scn_det_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    auto rep_a = run_text(cw_smoke_text(), dir_a.string(), true);
    auto rep_b = run_text(cw_smoke_text(), dir_b.string(), true);
    CHECK(rep_a.to_text() == rep_b.to_text());

    auto files_a = slurp_dir(dir_a);
    auto files_b = slurp_dir(dir_b);
    for (const char* name :
         {"records_a.tsv", "records_b.tsv", "steering_log.csv", "histogram_coarse.csv",
          "key_bits.txt", "qkd_summary.csv", "metrics.txt", "manifest.txt"}) {
        CHECK(files_a.count(name) == 1);
    }
    CHECK(files_a == files_b);
    CHECK(files_a.at("metrics.txt") == rep_a.to_text());

    auto cfg = config::Config::parse(cw_smoke_text());
    char want[32];
    std::snprintf(want, sizeof want, "%016llx",
                  static_cast<unsigned long long>(scenario::fnv1a64(cfg.source_text())));
    CHECK(files_a.at("manifest.txt").find(std::string("config_fnv1a64 = ") + want) !=
          std::string::npos);

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}
