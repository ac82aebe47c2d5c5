#include "tagsync/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tagsync/clock.hpp"
#include "tagsync/correlate.hpp"
#include "tagsync/engine.hpp"
#include "tagsync/errors.hpp"
#include "tagsync/optics.hpp"
#include "tagsync/qkd.hpp"
#include "tagsync/records.hpp"
#include "tagsync/rng.hpp"
#include "tagsync/steer.hpp"
#include "tagsync/time.hpp"

namespace tagsync::scenario {

namespace {

// ---------------------------------------------------------------- plumbing

struct AbortRun {
    std::string reason;
    std::vector<std::pair<std::string, std::string>> extra;
};

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Output files are buffered so an aborted run still writes everything it
// produced, and the manifest can checksum exactly what went to disk.
struct Sink {
    bool enabled = false;
    std::vector<std::pair<std::string, std::string>> files;

    void put(const std::string& name, std::string contents) {
        if (!enabled) return;
        files.emplace_back(name, std::move(contents));
    }
};

struct SteerLog {
    std::string csv = "epoch,agent,nudge_ps,rate_adjust\n";

    void row(std::int64_t epoch, const std::string& agent, const clocks::SteeringCommand& cmd) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%lld,%s,%.6f,%.12e\n",
                      static_cast<long long>(epoch), agent.c_str(), cmd.offset_nudge_ps,
                      cmd.rate_adjust);
        csv += buf;
    }
};

std::string histogram_csv(const correlate::CorrelationHistogram& h) {
    std::string out = "tau_ps,count\n";
    char buf[64];
    for (std::size_t i = 0; i < h.g.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%lld,%llu\n", static_cast<long long>(h.tau_at(i)),
                      static_cast<unsigned long long>(h.g[i]));
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------- loaders

clocks::ClockParams load_clock(const config::Config& c, const std::string& p) {
    clocks::ClockParams k;
    k.offset0_ps = c.get_double_or(p + ".offset_ps", 0.0);
    k.skew = c.get_double_or(p + ".skew", 0.0);
    k.rw_sigma = c.get_double_or(p + ".rw_per_sqrt_s", 0.0);
    k.jitter_sigma_ps = c.get_double_or(p + ".jitter_ps", 0.0);
    return k;
}

optics::DetectorModel load_detector(const config::Config& c, const std::string& p) {
    optics::DetectorModel d;
    d.dark_rate_hz = c.get_double_or(p + ".dark_hz", 0.0);
    d.dead_time_ps = c.get_int_or(p + ".dead_ps", 0);
    d.channels = static_cast<int>(c.get_int_or(p + ".channels", 1));
    return d;
}

optics::ChannelModel load_channel(const config::Config& c, const std::string& p) {
    optics::ChannelModel ch;
    ch.base_delay_ps = c.get_double_or(p + ".delay_ps", 0.0);
    ch.ramp_ps_per_s = c.get_double_or(p + ".ramp_ps_per_s", 0.0);
    ch.loss = c.get_double_or(p + ".loss", 0.0);
    return ch;
}

correlate::AcquireParams load_acquire(const config::Config& c) {
    correlate::AcquireParams a;
    a.tau_min_ps = c.get_int("correlate.tau_min_ps");
    a.tau_max_ps = c.get_int("correlate.tau_max_ps");
    a.coarse_bin_ps = c.get_int_or("correlate.coarse_bin_ps", 1000);
    a.fine_bin_ps = c.get_int_or("correlate.fine_bin_ps", 10);
    a.significance = c.get_double_or("correlate.significance", 6.0);
    a.ambiguity_ratio = c.get_double_or("correlate.ambiguity_ratio", 0.5);
    a.max_top_bins = static_cast<std::size_t>(c.get_int_or("correlate.max_top_bins", 512));
    return a;
}

std::vector<optics::PairEmission> load_source(const config::Config& c, SimDuration dur,
                                              Prng& rng) {
    const std::string type = c.get_string("source.type");
    if (type == "cw") {
        return optics::generate_cw(c.get_double("source.pairs_per_s"), dur, rng);
    }
    if (type == "pulsed") {
        return optics::generate_pulsed(c.get_int("source.pulse_period_ps"),
                                       c.get_double("source.efficiency"), dur, rng);
    }
    throw ConfigError("source.type", "expected cw or pulsed, got '" + type + "'");
}

struct GuardSettings {
    bool enabled = true;
    correlate::PeriodScanParams params;
};

GuardSettings load_guard(const config::Config& c) {
    GuardSettings g;
    g.enabled = c.get_bool_or("guard.enable", true);
    g.params.bin_ps = c.get_int_or("guard.bin_ps", 100);
    g.params.max_lag_ps = c.get_int_or("guard.max_lag_ps", 200'000'000);
    g.params.significance = c.get_double_or("guard.significance", 8.0);
    return g;
}

// A periodic source makes every correlation lag ambiguous, so pipelines
// test each stream for a comb before trusting any peak.
void guard_stream(const GuardSettings& g, std::span<const records::DetectionRecord> recs) {
    if (!g.enabled) return;
    auto period = correlate::detect_periodicity(recs, g.params);
    if (period) {
        throw AbortRun{"ambiguous_periodic_source",
                       {{"period_est_ps", fmt_g(*period)}}};
    }
}

std::int64_t delay_end_fs(const optics::ChannelModel& ch, SimDuration dur) {
    double d0 = ch.base_delay_ps * 1000.0;
    double d1 = (ch.base_delay_ps + ch.ramp_ps_per_s * dur.seconds()) * 1000.0;
    return static_cast<std::int64_t>(std::llround(std::max({d0, d1, 0.0})));
}

std::vector<records::DetectionRecord> strip(const std::vector<optics::TaggedDetection>& tagged) {
    std::vector<records::DetectionRecord> out;
    out.reserve(tagged.size());
    for (const auto& t : tagged) out.push_back(t.rec);
    return out;
}

void sort_tagged(std::vector<optics::TaggedDetection>& v) {
    std::stable_sort(v.begin(), v.end(),
                     [](const optics::TaggedDetection& a, const optics::TaggedDetection& b) {
                         if (a.rec.reading_ps != b.rec.reading_ps) {
                             return a.rec.reading_ps < b.rec.reading_ps;
                         }
                         return a.truth < b.truth;
                     });
}

std::span<const records::DetectionRecord> reading_slice(
    const std::vector<records::DetectionRecord>& recs, std::int64_t lo_ps, std::int64_t hi_ps) {
    auto cmp = [](const records::DetectionRecord& r, std::int64_t v) { return r.reading_ps < v; };
    auto first = std::lower_bound(recs.begin(), recs.end(), lo_ps, cmp);
    auto last = std::lower_bound(recs.begin(), recs.end(), hi_ps, cmp);
    return {recs.data() + (first - recs.begin()), static_cast<std::size_t>(last - first)};
}

// ---------------------------------------------------------------- qkd tail

struct QkdSettings {
    bool enabled = false;
    std::int64_t window_ps = 0;
    std::vector<double> angles_a;
    std::vector<double> angles_b;
    double intrinsic_error = 0.0;
    double offset_shift_windows = 0.0;
    double tail_start_s = 0.0;
    std::vector<std::pair<int, int>> key_combos;
    std::optional<qkd::ChshSettings> chsh;
};

QkdSettings load_qkd(const config::Config& c) {
    QkdSettings q;
    if (!c.has("qkd.window_ps")) return q;
    q.enabled = true;
    q.window_ps = c.get_int("qkd.window_ps");
    q.angles_a = c.has("qkd.angles_a_rad") ? c.get_double_list("qkd.angles_a_rad")
                                           : std::vector<double>{0.0};
    q.angles_b = c.has("qkd.angles_b_rad") ? c.get_double_list("qkd.angles_b_rad")
                                           : std::vector<double>{0.0};
    q.intrinsic_error = c.get_double_or("qkd.intrinsic_error", 0.0);
    q.offset_shift_windows = c.get_double_or("qkd.offset_shift_windows", 0.0);
    q.tail_start_s = c.get_double_or("qkd.tail_start_s", 0.0);
    if (c.has("qkd.key_combos")) {
        // "0:0,1:1" means basis pairs (0,0) and (1,1) carry key bits
        const std::string raw = c.get_string("qkd.key_combos");
        std::size_t pos = 0;
        while (pos <= raw.size()) {
            auto comma = raw.find(',', pos);
            std::string item = raw.substr(
                pos, comma == std::string::npos ? std::string::npos : comma - pos);
            auto colon = item.find(':');
            if (colon == std::string::npos) {
                throw ConfigError("qkd.key_combos", "expected ba:bb pairs, got '" + item + "'");
            }
            try {
                q.key_combos.emplace_back(std::stoi(item.substr(0, colon)),
                                          std::stoi(item.substr(colon + 1)));
            } catch (const std::exception&) {
                throw ConfigError("qkd.key_combos", "bad basis pair '" + item + "'");
            }
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
    }
    if (c.has("qkd.chsh_bases")) {
        // "a0:a1:b0:b1" basis indices for the four-setting estimator
        const std::string raw = c.get_string("qkd.chsh_bases");
        qkd::ChshSettings s;
        if (std::sscanf(raw.c_str(), "%d:%d:%d:%d", &s.a0, &s.a1, &s.b0, &s.b1) != 4) {
            throw ConfigError("qkd.chsh_bases", "expected a0:a1:b0:b1, got '" + raw + "'");
        }
        q.chsh = s;
    }
    return q;
}

void run_qkd_tail(const QkdSettings& q, const correlate::AcquireParams& acq,
                  const std::vector<records::DetectionRecord>& recs_a,
                  const std::vector<records::DetectionRecord>& recs_b, MetricsReport& rep,
                  Sink& sink) {
    if (!q.enabled) return;
    auto tail_lo = static_cast<std::int64_t>(std::llround(q.tail_start_s * 1e12));
    auto a_tail = reading_slice(recs_a, tail_lo, std::numeric_limits<std::int64_t>::max());
    auto r = correlate::acquire_offset(a_tail, recs_b, acq);
    if (std::holds_alternative<correlate::AmbiguousPeak>(r)) {
        throw AbortRun{"ambiguous_correlation",
                       {{"period_est_ps",
                         fmt_g(std::get<correlate::AmbiguousPeak>(r).period_est_ps)}}};
    }
    if (std::holds_alternative<correlate::NoPeak>(r)) {
        throw AbortRun{"no_correlation_peak", {}};
    }
    const double tau_tail = std::get<correlate::OffsetEstimate>(r).tau_ps;
    const double offset_used =
        tau_tail + q.offset_shift_windows * static_cast<double>(q.window_ps);
    auto pairs = qkd::sift(a_tail, recs_b, offset_used, q.window_ps);

    rep.add("tau_hat_tail_ps", tau_tail);
    rep.add("qkd_offset_used_ps", offset_used);
    rep.add_uint("sifted_pairs", pairs.size());

    std::string qber_s = "";
    std::string s_value_s = "";
    if (!q.key_combos.empty()) {
        auto res = qkd::qber(pairs, q.key_combos);
        rep.add("qber", res.error_rate);
        rep.add_uint("qber_matched", res.matched);
        qber_s = fmt_g(res.error_rate);
        std::string bits;
        bits.reserve(res.matched + 1);
        for (const auto& p : pairs) {
            for (const auto& [ba, bb] : q.key_combos) {
                if (p.basis_a == ba && p.basis_b == bb) {
                    bits.push_back(p.bit_a ? '1' : '0');
                    break;
                }
            }
        }
        bits.push_back('\n');
        sink.put("key_bits.txt", std::move(bits));
    }
    if (q.chsh) {
        double s = qkd::chsh(pairs, *q.chsh);
        rep.add("s_value", s);
        s_value_s = fmt_g(s);
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "matched,qber,s_value\n%llu,%s,%s\n",
                  static_cast<unsigned long long>(pairs.size()), qber_s.c_str(),
                  s_value_s.c_str());
    sink.put("qkd_summary.csv", buf);
}

// ---------------------------------------------------------------- pipelines

// Continuous source, one direction instrumented, per-epoch offset
// acquisition feeding either the offset-only loop or the offset+rate loop.
void run_cw(const config::Config& cfg, const RunOptions& opt, bool rate_mode, MetricsReport& rep,
            Sink& sink) {
    const std::uint64_t seed = cfg.get_uint("seed");
    const double duration_s = cfg.get_double("duration_s");
    if (duration_s <= 0.0) throw ConfigError("duration_s", "must be positive");
    const SimDuration dur = SimDuration::from_seconds(duration_s);

    const auto ch_a = load_channel(cfg, "channel.a");
    const auto ch_b = load_channel(cfg, "channel.b");
    const auto det_a = load_detector(cfg, "detector.a");
    const auto det_b = load_detector(cfg, "detector.b");
    clocks::ClockModel clk_a(load_clock(cfg, "clock.a"));
    clocks::ClockModel clk_b(load_clock(cfg, "clock.b"));
    const auto acq = load_acquire(cfg);
    const auto guard = load_guard(cfg);
    const auto qk = load_qkd(cfg);

    const double epoch_s = cfg.get_double("steer.epoch_s");
    if (epoch_s <= 0.0) throw ConfigError("steer.epoch_s", "must be positive");
    const int epochs = static_cast<int>(std::floor(duration_s / epoch_s + 1e-9));
    if (epochs < 1) throw ConfigError("steer.epoch_s", "no whole epoch fits in the run");
    const double offset_gain = cfg.get_double_or("steer.offset_gain", 0.5);
    const double rate_gain = cfg.get_double_or("steer.rate_gain", 0.3);
    const double settle_slope = cfg.get_double_or("steer.settle_slope", 2e-10);
    steer::RateLoopParams rl;
    rl.offset_gain = offset_gain;
    rl.rate_gain = rate_gain;
    rl.tau_threshold_ps = cfg.get_double_or("steer.tau_threshold_ps", 100.0);
    rl.slope_threshold = cfg.get_double_or("steer.slope_threshold", 1e-7);

    Prng rng_src(derive_seed(seed, "source"));
    Prng rng_ch_a(derive_seed(seed, "channel.a"));
    Prng rng_ch_b(derive_seed(seed, "channel.b"));
    Prng rng_det_a(derive_seed(seed, "detector.a"));
    Prng rng_det_b(derive_seed(seed, "detector.b"));
    Prng rng_clk_b(derive_seed(seed, "clock.b"));

    const auto emissions = load_source(cfg, dur, rng_src);
    const auto arr_a = optics::propagate(emissions, ch_a, dur, 0, rng_ch_a);
    const auto arr_b = optics::propagate(emissions, ch_b, dur, 1, rng_ch_b);

    const auto basis_a = static_cast<int>(qk.angles_a.size());
    const auto basis_b = static_cast<int>(qk.angles_b.size());

    optics::DetectOptions opt_a;
    opt_a.agent = "A";
    opt_a.basis_count = basis_a;
    opt_a.window_begin = SimInstant::from_fs(0);
    opt_a.window_end = SimInstant::from_fs(checked_add(dur.fs(), delay_end_fs(ch_a, dur) + 1));
    auto tagged_a = optics::detect(arr_a, det_a, clk_a, std::nullopt, opt_a, rng_det_a);
    auto recs_a = strip(tagged_a);

    guard_stream(guard, recs_a);

    // B is stamped event by event so steering commands issued at epoch
    // boundaries shape later readings, as they would on hardware.
    const SimInstant b_end =
        SimInstant::from_fs(checked_add(dur.fs(), delay_end_fs(ch_b, dur) + 1));
    auto raw_b = optics::prepare_detections(arr_b, det_b, SimInstant::from_fs(0), b_end,
                                            rng_det_b);

    std::vector<optics::TaggedDetection> tagged_b;
    tagged_b.reserve(raw_b.size());
    std::size_t epoch_mark = 0;

    steer::OffsetLoop offset_loop(offset_gain);
    steer::RateLoop rate_loop(rl);
    SteerLog slog;
    bool rate_settled = !rate_mode;
    bool rate_pulled = false;
    bool have_prev_tau = false;
    double prev_tau = 0.0;
    double prev_mid_s = 0.0;
    int epochs_with_peak = 0;
    bool guarded_b = false;

    engine::EventQueue q;
    for (const auto& r : raw_b) {
        q.schedule(r.truth, engine::EventKind::detector_fire, [&, r] {
            auto reading = clk_b.reading_at(r.truth, rng_clk_b);
            int basis = basis_b > 1
                            ? static_cast<int>(rng_det_b.uniform_int(
                                  static_cast<std::uint64_t>(basis_b)))
                            : 0;
            int bit = rng_det_b.bernoulli(0.5) ? 1 : 0;
            optics::TaggedDetection td;
            td.rec = {"B", reading.ps, r.channel, basis, bit, r.origin};
            td.truth = r.truth;
            td.emission_index = r.emission_index;
            td.pair_seed = r.pair_seed;
            td.stream_tag = r.stream_tag;
            tagged_b.push_back(std::move(td));
        });
    }

    auto process_epoch = [&](int e) {
        std::vector<records::DetectionRecord> batch_b;
        batch_b.reserve(tagged_b.size() - epoch_mark);
        for (std::size_t i = epoch_mark; i < tagged_b.size(); ++i) {
            batch_b.push_back(tagged_b[i].rec);
        }
        epoch_mark = tagged_b.size();
        std::sort(batch_b.begin(), batch_b.end(),
                  [](const records::DetectionRecord& x, const records::DetectionRecord& y) {
                      return x.reading_ps < y.reading_ps;
                  });
        if (!guarded_b && !batch_b.empty()) {
            guard_stream(guard, batch_b);
            guarded_b = true;
        }
        auto lo = static_cast<std::int64_t>(std::llround(e * epoch_s * 1e12));
        auto hi = static_cast<std::int64_t>(std::llround((e + 1) * epoch_s * 1e12));
        auto a_slice = reading_slice(recs_a, lo, hi);
        if (a_slice.empty() || batch_b.empty()) return;

        auto r = correlate::acquire_offset(a_slice, batch_b, acq);
        if (std::holds_alternative<correlate::AmbiguousPeak>(r)) {
            throw AbortRun{"ambiguous_correlation",
                           {{"period_est_ps",
                             fmt_g(std::get<correlate::AmbiguousPeak>(r).period_est_ps)}}};
        }
        if (std::holds_alternative<correlate::NoPeak>(r)) return;
        const double tau = std::get<correlate::OffsetEstimate>(r).tau_ps;
        ++epochs_with_peak;
        rep.add("tau_hat_epoch_" + std::to_string(e), tau);
        if (epochs_with_peak == 1) rep.add("tau_hat_initial_ps", tau);

        const double mid_s = (e + 0.5) * epoch_s;
        clocks::SteeringCommand cmd;
        if (!rate_mode) {
            cmd = offset_loop.step(tau);
        } else {
            cmd = rate_loop.step(tau, mid_s);
            // The slope the loop differences is the mean rate across the two
            // epochs it spans, so a pull taints the very next measurement.
            // Fire both levers together on alternate, clean measurements:
            // the pull then acts on a slope taken at constant rate (a unity
            // rate gain is deadbeat), and the nudge issued at the same tick
            // cancels out of the following slope, which spans two epochs on
            // the same side of the nudge. Once the clean slope settles, the
            // rate lever is parked and the nudge runs every epoch.
            const bool clean_slope = have_prev_tau && !rate_pulled;
            if (!rate_settled && clean_slope &&
                std::abs(tau - prev_tau) / (mid_s - prev_mid_s) / 1e12 < settle_slope) {
                rate_settled = true;
            }
            if (rate_settled) {
                cmd.rate_adjust = 0.0;
            } else if (!clean_slope) {
                cmd = {};
            }
            rate_pulled = cmd.rate_adjust != 0.0;
        }
        have_prev_tau = true;
        prev_tau = tau;
        prev_mid_s = mid_s;
        clk_b.apply_steer(cmd);
        slog.row(e, "B", cmd);
    };

    for (int e = 0; e < epochs; ++e) {
        auto tick = SimInstant::from_fs(
            static_cast<std::int64_t>(std::llround((e + 1) * epoch_s * 1e15)));
        q.schedule(tick, engine::EventKind::epoch_tick, [&, e] { process_epoch(e); });
    }
    q.run_until(b_end);

    sort_tagged(tagged_b);
    if (qk.enabled) {
        qkd::assign_entangled_bits(tagged_a, tagged_b, qk.angles_a, qk.angles_b,
                                   qk.intrinsic_error);
        recs_a = strip(tagged_a);  // bits were rewritten in place
    }
    auto recs_b = strip(tagged_b);

    rep.add("tau_true_initial_ps", clk_b.params().offset0_ps - clk_a.params().offset0_ps +
                                       ch_b.base_delay_ps - ch_a.base_delay_ps);
    rep.add_uint("records_a", recs_a.size());
    rep.add_uint("records_b", recs_b.size());
    rep.add("epochs_with_peak", static_cast<std::int64_t>(epochs_with_peak));
    const SimInstant end = SimInstant::from_fs(dur.fs());
    rep.add("offset_error_final_ps", clk_b.phase_ps_at(end) - clk_a.phase_ps_at(end));
    rep.add("residual_skew_final", std::abs(clk_b.rate() / clk_a.rate() - 1.0));
    if (rate_mode) rep.add("rate_converged", rate_loop.converged() ? 1.0 : 0.0);

    sink.put("records_a.tsv", records::serialize(recs_a));
    sink.put("records_b.tsv", records::serialize(recs_b));
    sink.put("steering_log.csv", slog.csv);
    if (opt.emit_histograms) {
        sink.put("histogram_coarse.csv",
                 histogram_csv(correlate::correlate_records(recs_a, recs_b, acq.coarse_bin_ps,
                                                            acq.tau_min_ps, acq.tau_max_ps)));
    }
    run_qkd_tail(qk, acq, recs_a, recs_b, rep, sink);
}

// Pulsed source, receiver slaved to the cycle by the phase loop.
void run_pulsed(const config::Config& cfg, const RunOptions& opt, MetricsReport& rep,
                Sink& sink) {
    const std::uint64_t seed = cfg.get_uint("seed");
    const double duration_s = cfg.get_double("duration_s");
    if (duration_s <= 0.0) throw ConfigError("duration_s", "must be positive");
    const SimDuration dur = SimDuration::from_seconds(duration_s);

    const std::int64_t period = cfg.get_int("source.pulse_period_ps");
    if (period < 12) throw ConfigError("source.pulse_period_ps", "period too short");
    const auto ch_a = load_channel(cfg, "channel.aa");
    const auto ch_b = load_channel(cfg, "channel.ab");
    const auto det_a = load_detector(cfg, "detector.a");
    const auto det_b = load_detector(cfg, "detector.b");
    clocks::ClockModel clk_a(load_clock(cfg, "clock.a"));
    clocks::ClockModel clk_b(load_clock(cfg, "clock.b"));

    // Three acceptance windows of period/6, evenly spaced; the loop folds
    // them onto a common phase by steering against the nearest center.
    const std::int64_t halfwidth = cfg.get_int_or("phase.halfwidth_ps", period / 12);
    const std::vector<std::int64_t> centers{period / 6, period / 2, 5 * period / 6};
    qkd::CycleLayout layout;
    layout.period_ps = period;
    layout.early = {centers[0] - halfwidth, centers[0] + halfwidth};
    layout.middle = {centers[1] - halfwidth, centers[1] + halfwidth};
    layout.late = {centers[2] - halfwidth, centers[2] + halfwidth};

    steer::PhaseLoopParams pl;
    pl.period_ps = period;
    pl.phase_center_ps = centers[0];
    pl.centers = centers;
    pl.window_halfwidth_ps = halfwidth;
    pl.avg_window = static_cast<std::size_t>(cfg.get_int_or("phase.avg_window", 64));
    pl.gain = cfg.get_double_or("phase.gain", 1e-3);
    pl.damping = cfg.get_double_or("phase.damping", 2e-3);
    steer::PhaseLoop loop(pl);

    const std::int64_t eval_after_cycles = cfg.get_int_or("phase.eval_after_cycles", 10'000);
    const std::int64_t eval_count = cfg.get_int_or("phase.eval_count", 100'000);
    const bool gate_records = cfg.get_bool_or("phase.gate_records", true);

    qkd::PulsedPairState interf;
    interf.phi = cfg.get_double_or("qkd.phi_rad", 0.0);
    interf.alpha = cfg.get_double_or("qkd.alpha_rad", 0.0);
    interf.beta = cfg.get_double_or("qkd.beta_rad", 0.0);

    Prng rng_src(derive_seed(seed, "source"));
    Prng rng_ch_a(derive_seed(seed, "channel.aa"));
    Prng rng_ch_b(derive_seed(seed, "channel.ab"));
    Prng rng_det_a(derive_seed(seed, "detector.a"));
    Prng rng_det_b(derive_seed(seed, "detector.b"));
    Prng rng_clk_b(derive_seed(seed, "clock.b"));

    const auto emissions = load_source(cfg, dur, rng_src);
    const auto arr_a = optics::propagate(emissions, ch_a, dur, 0, rng_ch_a);
    const auto arr_b = optics::propagate(emissions, ch_b, dur, 1, rng_ch_b);

    optics::DetectOptions opt_a;
    opt_a.agent = "A";
    opt_a.window_begin = SimInstant::from_fs(0);
    opt_a.window_end = SimInstant::from_fs(checked_add(dur.fs(), delay_end_fs(ch_a, dur) + 1));
    auto tagged_a = optics::detect(arr_a, det_a, clk_a, std::nullopt, opt_a, rng_det_a);
    auto recs_a = strip(tagged_a);

    const SimInstant b_end =
        SimInstant::from_fs(checked_add(dur.fs(), delay_end_fs(ch_b, dur) + 1));
    auto raw_b = optics::prepare_detections(arr_b, det_b, SimInstant::from_fs(0), b_end,
                                            rng_det_b);

    std::vector<optics::TaggedDetection> tagged_b;
    tagged_b.reserve(raw_b.size());
    std::vector<char> in_window_flags;
    in_window_flags.reserve(raw_b.size());
    std::vector<std::int64_t> arrival_cycle;
    arrival_cycle.reserve(raw_b.size());
    SteerLog slog;
    std::int64_t blocks = 0;
    std::uint64_t counts[4] = {0, 0, 0, 0};

    engine::EventQueue q;
    for (const auto& r : raw_b) {
        q.schedule(r.truth, engine::EventKind::detector_fire, [&, r] {
            auto reading = clk_b.reading_at(r.truth, rng_clk_b);
            auto [cls, cmd] = loop.step(reading.ps);
            if (cmd.rate_adjust != 0.0 || cmd.offset_nudge_ps != 0.0) {
                clk_b.apply_steer(cmd);
                slog.row(blocks++, "B", cmd);
            }
            bool inw = cls == steer::PhaseClass::in_window;
            in_window_flags.push_back(inw ? 1 : 0);
            arrival_cycle.push_back(r.truth.fs() / (period * 1000));
            auto slot = qkd::classify_phase(reading.ps, layout);
            ++counts[static_cast<int>(slot)];
            if (gate_records && !inw) return;
            optics::TaggedDetection td;
            td.rec = {"B", reading.ps, r.channel, 0, 0, r.origin};
            td.truth = r.truth;
            td.emission_index = r.emission_index;
            td.pair_seed = r.pair_seed;
            td.stream_tag = r.stream_tag;
            tagged_b.push_back(std::move(td));
        });
    }
    q.run_until(b_end);

    // The acceptance view: all arrivals after the convergence allowance,
    // capped at eval_count.
    std::uint64_t eval_in = 0;
    std::int64_t eval_n = 0;
    for (std::size_t i = 0; i < in_window_flags.size() && eval_n < eval_count; ++i) {
        if (arrival_cycle[i] < eval_after_cycles) continue;
        ++eval_n;
        eval_in += in_window_flags[i] ? 1 : 0;
    }

    sort_tagged(tagged_b);
    auto recs_b = strip(tagged_b);

    rep.add_uint("arrivals_total", in_window_flags.size());
    rep.add("eval_arrivals", eval_n);
    rep.add("eval_in_window_fraction",
            eval_n > 0 ? static_cast<double>(eval_in) / static_cast<double>(eval_n) : 0.0);
    rep.add_uint("count_early", counts[0]);
    rep.add_uint("count_middle", counts[1]);
    rep.add_uint("count_late", counts[2]);
    rep.add_uint("count_outside", counts[3]);
    rep.add("blocks_emitted", blocks);
    rep.add("franson_middle_probability", qkd::franson_coincidence_probability(interf));
    rep.add("receiver_rate_final", clk_b.rate());
    rep.add_uint("records_a", recs_a.size());
    rep.add_uint("records_b", recs_b.size());

    sink.put("records_a.tsv", records::serialize(recs_a));
    sink.put("records_b.tsv", records::serialize(recs_b));
    sink.put("steering_log.csv", slog.csv);
    if (opt.emit_histograms) {
        std::vector<std::uint64_t> cyc(200, 0);
        const std::int64_t w = std::max<std::int64_t>(period / 200, 1);
        for (const auto& t : tagged_b) {
            std::int64_t pos = t.rec.reading_ps % period;
            if (pos < 0) pos += period;
            std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(pos / w), 199);
            ++cyc[idx];
        }
        std::string csv = "position_ps,count\n";
        char buf[64];
        for (std::size_t i = 0; i < cyc.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%lld,%llu\n",
                          static_cast<long long>(static_cast<std::int64_t>(i) * w),
                          static_cast<unsigned long long>(cyc[i]));
            csv += buf;
        }
        sink.put("histogram_cycle.csv", csv);
    }
}

// Two sources, both directions correlated, symmetric-delay solve, optional
// echo probes for the round-trip midpoint residuals.
void run_bidirectional(const config::Config& cfg, const RunOptions& opt, MetricsReport& rep,
                       Sink& sink) {
    const std::uint64_t seed = cfg.get_uint("seed");
    const double duration_s = cfg.get_double("duration_s");
    if (duration_s <= 0.0) throw ConfigError("duration_s", "must be positive");
    const SimDuration dur = SimDuration::from_seconds(duration_s);

    const auto ch_aa = load_channel(cfg, "channel.aa");  // A source, local arm
    const auto ch_ab = load_channel(cfg, "channel.ab");  // A source, arm to B
    const auto ch_bb = load_channel(cfg, "channel.bb");  // B source, local arm
    const auto ch_ba = load_channel(cfg, "channel.ba");  // B source, arm to A
    const auto det_a = load_detector(cfg, "detector.a");
    const auto det_b = load_detector(cfg, "detector.b");
    clocks::ClockModel clk_a(load_clock(cfg, "clock.a"));
    clocks::ClockModel clk_b(load_clock(cfg, "clock.b"));
    const auto acq = load_acquire(cfg);
    if (!(acq.tau_min_ps < 0 && acq.tau_max_ps > 0)) {
        throw ConfigError("correlate.tau_min_ps",
                          "two-way search needs tau_min < 0 < tau_max");
    }
    const auto guard = load_guard(cfg);

    Prng rng_src_a(derive_seed(seed, "source.a"));
    Prng rng_src_b(derive_seed(seed, "source.b"));
    Prng rng_ch_aa(derive_seed(seed, "channel.aa"));
    Prng rng_ch_ab(derive_seed(seed, "channel.ab"));
    Prng rng_ch_bb(derive_seed(seed, "channel.bb"));
    Prng rng_ch_ba(derive_seed(seed, "channel.ba"));
    Prng rng_det_a(derive_seed(seed, "detector.a"));
    Prng rng_det_b(derive_seed(seed, "detector.b"));
    Prng rng_probe(derive_seed(seed, "probe"));

    const double pairs_per_s = cfg.get_double("source.pairs_per_s");
    auto em_a = optics::generate_cw(pairs_per_s, dur, rng_src_a);
    auto em_b = optics::generate_cw(pairs_per_s, dur, rng_src_b);

    auto arr_a_local = optics::propagate(em_a, ch_aa, dur, 0, rng_ch_aa);
    auto arr_a_remote = optics::propagate(em_a, ch_ab, dur, 1, rng_ch_ab);
    auto arr_b_local = optics::propagate(em_b, ch_bb, dur, 2, rng_ch_bb);
    auto arr_b_remote = optics::propagate(em_b, ch_ba, dur, 3, rng_ch_ba);

    auto merge = [](std::vector<optics::Arrival> x, std::vector<optics::Arrival>& y) {
        x.insert(x.end(), y.begin(), y.end());
        std::sort(x.begin(), x.end(), [](const optics::Arrival& p, const optics::Arrival& q) {
            if (p.truth != q.truth) return p.truth < q.truth;
            if (p.stream_tag != q.stream_tag) return p.stream_tag < q.stream_tag;
            return p.emission_index < q.emission_index;
        });
        return x;
    };
    auto at_a = merge(std::move(arr_a_local), arr_b_remote);
    auto at_b = merge(std::move(arr_a_remote), arr_b_local);

    const std::int64_t max_delay_fs = std::max({delay_end_fs(ch_aa, dur), delay_end_fs(ch_ab, dur),
                                                delay_end_fs(ch_bb, dur),
                                                delay_end_fs(ch_ba, dur)});
    const SimInstant t_end = SimInstant::from_fs(checked_add(dur.fs(), max_delay_fs + 1));

    optics::DetectOptions oa;
    oa.agent = "A";
    oa.window_begin = SimInstant::from_fs(0);
    oa.window_end = t_end;
    auto tagged_a = optics::detect(at_a, det_a, clk_a, std::nullopt, oa, rng_det_a);
    optics::DetectOptions ob = oa;
    ob.agent = "B";
    auto tagged_b = optics::detect(at_b, det_b, clk_b, std::nullopt, ob, rng_det_b);
    auto recs_a = strip(tagged_a);
    auto recs_b = strip(tagged_b);

    guard_stream(guard, recs_a);
    guard_stream(guard, recs_b);

    auto acquire_dir = [&](std::int64_t lo, std::int64_t hi, const char* which) {
        auto p = acq;
        p.tau_min_ps = lo;
        p.tau_max_ps = hi;
        auto r = correlate::acquire_offset(recs_a, recs_b, p);
        if (std::holds_alternative<correlate::AmbiguousPeak>(r)) {
            throw AbortRun{"ambiguous_correlation",
                           {{"period_est_ps",
                             fmt_g(std::get<correlate::AmbiguousPeak>(r).period_est_ps)},
                            {"direction", which}}};
        }
        if (std::holds_alternative<correlate::NoPeak>(r)) {
            throw AbortRun{"no_correlation_peak", {{"direction", which}}};
        }
        return std::get<correlate::OffsetEstimate>(r);
    };
    auto est_ab = acquire_dir(0, acq.tau_max_ps, "ab");
    auto est_ba = acquire_dir(acq.tau_min_ps, 0, "ba");

    steer::BidirectionalSample sample{est_ab.tau_ps, est_ba.tau_ps};
    steer::BidirectionalSolution sol;
    try {
        sol = steer::bidirectional_solve(sample);
    } catch (const NegativeDelayError&) {
        throw AbortRun{"negative_two_way_delay",
                       {{"tau_ab_hat_ps", fmt_g(sample.tau_ab_ps)},
                        {"tau_ba_hat_ps", fmt_g(sample.tau_ba_ps)}}};
    }

    rep.add("tau_ab_hat_ps", est_ab.tau_ps);
    rep.add("tau_ba_hat_ps", est_ba.tau_ps);
    rep.add("theta_hat_ps", sol.offset_ps);
    rep.add("delay_hat_ps", sol.one_way_delay_ps);
    rep.add("theta_true_ps", clk_b.params().offset0_ps - clk_a.params().offset0_ps);
    rep.add("delay_ab_true_ps", ch_ab.base_delay_ps);
    rep.add("delay_ba_true_ps", ch_ba.base_delay_ps);
    rep.add_uint("records_a", recs_a.size());
    rep.add_uint("records_b", recs_b.size());

    SteerLog slog;
    if (cfg.get_bool_or("steer.apply_theta", true)) {
        clocks::SteeringCommand cmd{-sol.offset_ps, 0.0};
        clk_b.apply_steer(cmd);
        slog.row(0, "B", cmd);
    }

    // Echo probes: A->B->A and B->A->B round trips through the same pair of
    // channels, timestamped by the (now steered) clocks.
    const auto probe_count = cfg.get_uint_or("probe.count", 0);
    if (probe_count > 0) {
        const double start_s = cfg.get_double_or("probe.start_s", duration_s);
        const double span_s = cfg.get_double_or("probe.span_s", 1.0);
        if (start_s * 1e15 < static_cast<double>(t_end.fs())) {
            throw ConfigError("probe.start_s", "probes must start after the record streams end");
        }
        auto delay_fs_of = [](const optics::ChannelModel& ch, std::int64_t t_fs) {
            double t_s = static_cast<double>(t_fs) / 1e15;
            return static_cast<std::int64_t>(
                std::llround((ch.base_delay_ps + ch.ramp_ps_per_s * t_s) * 1000.0));
        };
        const auto start_fs = static_cast<std::int64_t>(std::llround(start_s * 1e15));
        const auto span_fs = static_cast<std::int64_t>(std::llround(span_s * 1e15));
        const std::int64_t step_fs = span_fs / static_cast<std::int64_t>(probe_count);
        const std::int64_t rtt_fs = delay_fs_of(ch_ab, start_fs + span_fs) +
                                    delay_fs_of(ch_ba, start_fs + span_fs);
        const std::int64_t dither_cap = std::max<std::int64_t>(
            1, std::min<std::int64_t>(step_fs / 8, 1'000'000'000));
        if (step_fs < 8 * (rtt_fs + dither_cap)) {
            throw ConfigError("probe.count", "probes overlap; reduce count or widen the span");
        }
        double sum_aba = 0.0;
        double sum_bab = 0.0;
        for (std::uint64_t k = 0; k < probe_count; ++k) {
            std::int64_t t0 = start_fs + static_cast<std::int64_t>(k) * step_fs +
                              static_cast<std::int64_t>(rng_probe.uniform_int(
                                  static_cast<std::uint64_t>(dither_cap)));
            std::int64_t t1 = checked_add(t0, delay_fs_of(ch_ab, t0));
            std::int64_t t2 = checked_add(t1, delay_fs_of(ch_ba, t1));
            steer::EinsteinProbe aba;
            aba.t_a_ps = clk_a.reading_at(SimInstant::from_fs(t0), rng_probe).ps;
            aba.t_b_ps = clk_b.reading_at(SimInstant::from_fs(t1), rng_probe).ps;
            aba.t_a_prime_ps = clk_a.reading_at(SimInstant::from_fs(t2), rng_probe).ps;
            sum_aba += steer::einstein_residual_ps(aba);

            std::int64_t u0 = t0 + step_fs / 2;
            std::int64_t u1 = checked_add(u0, delay_fs_of(ch_ba, u0));
            std::int64_t u2 = checked_add(u1, delay_fs_of(ch_ab, u1));
            steer::EinsteinProbe bab;
            bab.t_a_ps = clk_b.reading_at(SimInstant::from_fs(u0), rng_probe).ps;
            bab.t_b_ps = clk_a.reading_at(SimInstant::from_fs(u1), rng_probe).ps;
            bab.t_a_prime_ps = clk_b.reading_at(SimInstant::from_fs(u2), rng_probe).ps;
            sum_bab += steer::einstein_residual_ps(bab);
        }
        rep.add("mean_residual_aba_ps", sum_aba / static_cast<double>(probe_count));
        rep.add("mean_residual_bab_ps", sum_bab / static_cast<double>(probe_count));
        rep.add_uint("probes", probe_count);
    }

    sink.put("records_a.tsv", records::serialize(recs_a));
    sink.put("records_b.tsv", records::serialize(recs_b));
    sink.put("steering_log.csv", slog.csv);
    if (opt.emit_histograms) {
        sink.put("histogram_ab.csv",
                 histogram_csv(correlate::correlate_records(recs_a, recs_b, acq.coarse_bin_ps, 0,
                                                            acq.tau_max_ps)));
        sink.put("histogram_ba.csv",
                 histogram_csv(correlate::correlate_records(recs_a, recs_b, acq.coarse_bin_ps,
                                                            acq.tau_min_ps, 0)));
    }
}

void flush_outputs(const config::Config& cfg, const RunOptions& opt, const MetricsReport& rep,
                   Sink& sink) {
    if (!sink.enabled) return;
    sink.put("metrics.txt", rep.to_text());

    std::string manifest;
    manifest += "config_fnv1a64 = " + hex64(fnv1a64(cfg.source_text())) + "\n";
    manifest += "seed = " + std::to_string(cfg.get_uint("seed")) + "\n";
    auto sorted = sink.files;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& [name, contents] : sorted) {
        manifest += "file " + name + " " + hex64(fnv1a64(contents)) + "\n";
    }

    namespace fs = std::filesystem;
    fs::create_directories(opt.out_dir);
    auto write = [&](const std::string& name, const std::string& contents) {
        std::ofstream out(fs::path(opt.out_dir) / name, std::ios::binary);
        if (!out) throw Error("cannot write output file " + name);
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    };
    for (const auto& [name, contents] : sink.files) write(name, contents);
    write("manifest.txt", manifest);
}

}  // namespace

void MetricsReport::add(std::string key, std::string value) {
    entries_.emplace_back(std::move(key), std::move(value));
}
void MetricsReport::add(std::string key, double value) { add(std::move(key), fmt_g(value)); }
void MetricsReport::add(std::string key, std::int64_t value) {
    add(std::move(key), std::to_string(value));
}
void MetricsReport::add_uint(std::string key, std::uint64_t value) {
    add(std::move(key), std::to_string(value));
}

bool MetricsReport::has(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) return true;
    }
    return false;
}

const std::string& MetricsReport::get(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) return v;
    }
    throw Error("metrics report has no entry '" + std::string(key) + "'");
}

double MetricsReport::get_double(std::string_view key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    double d = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size()) throw Error("metrics entry '" + std::string(key) + "' is not numeric");
    return d;
}

std::string MetricsReport::to_text() const {
    std::string out;
    out += std::string("aborted = ") + (aborted ? "true" : "false") + "\n";
    if (aborted) out += "abort_reason = " + abort_reason + "\n";
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

MetricsReport run_scenario(const config::Config& cfg, const RunOptions& opt) {
    MetricsReport rep;
    Sink sink;
    sink.enabled = !opt.out_dir.empty();

    const std::string experiment = cfg.get_string("experiment");
    rep.add("experiment", experiment);
    rep.add_uint("seed", cfg.get_uint("seed"));

    try {
        if (experiment == "cw_offset_qkd") {
            run_cw(cfg, opt, /*rate_mode=*/false, rep, sink);
        } else if (experiment == "cw_rate_steer_qkd") {
            run_cw(cfg, opt, /*rate_mode=*/true, rep, sink);
        } else if (experiment == "pulsed_logical_sync") {
            run_pulsed(cfg, opt, rep, sink);
        } else if (experiment == "bidirectional_sync") {
            run_bidirectional(cfg, opt, rep, sink);
        } else {
            throw ConfigError("experiment", "unknown experiment '" + experiment + "'");
        }
        cfg.reject_unconsumed();
    } catch (const AbortRun& abort) {
        rep.aborted = true;
        rep.abort_reason = abort.reason;
        for (const auto& [k, v] : abort.extra) rep.add(k, v);
    }
    flush_outputs(cfg, opt, rep, sink);
    return rep;
}

}  // namespace tagsync::scenario
