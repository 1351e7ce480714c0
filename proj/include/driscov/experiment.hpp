// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The driscov Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef DRISCOV_EXPERIMENT_HPP
#define DRISCOV_EXPERIMENT_HPP

#include <boost/math/distributions/gamma.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "channel.hpp"
#include "config.hpp"
#include "detector.hpp"
#include "flow.hpp"
#include "parallel.hpp"
#include "statkit.hpp"
#include "theory.hpp"

namespace driscov {

struct RateCi
{
    double value = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

struct SweepResult
{
    std::string sweep_var;
    double sweep_value = 0.0;
    RateCi mdr_unsup;
    RateCi mdr_sup;
    RateCi mdr_no_dris;
    double far_target = 0.0;
    RateCi far_empirical;
    double sjnr_sim_db = 0.0;
    double sjnr_theory_db = 0.0;
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;
};

using RowCallback = std::function<void(const SweepResult&)>;

inline constexpr double kReportLevel = 0.95;

namespace experiment_detail {

inline RateCi rate_of(const std::optional<double>& v, const std::optional<statkit::Interval>& ci)
{
    if (!v || !ci)
        throw std::logic_error("experiment: internal error, missing rate");
    return {*v, ci->lo, ci->hi};
}

inline std::string fmt9(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

/// Equal-label batch, sized to a multiple of the window.
inline ObservationBatch stats(const statkit::SeedStream& s, std::string_view label, const ChannelModel& model,
                              Hypothesis hyp, std::size_t n, const ScenarioConfig& cfg, unsigned workers)
{
    n -= n % cfg.detector.window;
    return gen_willie_statistics(s, label, model, hyp, n, cfg.detector.n_samples, workers);
}

inline ObservationBatch eval_batch(const statkit::SeedStream& seeds, const ChannelModel& model,
                                   const ScenarioConfig& cfg, unsigned workers)
{
    const auto s = seeds.derive("eval");
    auto b = stats(s, "h0", model, Hypothesis::h0, cfg.eval_stats, cfg, workers);
    b.append(stats(s, "h1", model, Hypothesis::h1, cfg.eval_stats, cfg, workers));
    return b;
}

inline std::size_t h1_train_count(const ScenarioConfig& cfg)
{
    return static_cast<std::size_t>(std::llround(cfg.detector.h1_fraction * static_cast<double>(cfg.train_stats)));
}

inline ObservationBatch training_mixture(const statkit::SeedStream& seeds, const ChannelModel& model,
                                         const ScenarioConfig& cfg, unsigned workers)
{
    const auto s = seeds.derive("train");
    const std::size_t n1 = h1_train_count(cfg);
    auto b = stats(s, "h0", model, Hypothesis::h0, cfg.train_stats - n1, cfg, workers);
    b.append(stats(s, "h1", model, Hypothesis::h1, n1, cfg, workers));
    return b;
}

struct PipelineOutcome
{
    detector::FittedDetector detector;
    detector::DetectionReport report;
};

inline PipelineOutcome unsupervised_pipeline(const statkit::SeedStream& seeds, const ChannelModel& model,
                                             const ScenarioConfig& cfg, unsigned workers)
{
    const detector::GammaNull null{cfg.detector.n_samples, model.scenario().fading.noise_willie};
    PipelineOutcome out;
    out.detector = detector::fit_unsupervised(training_mixture(seeds, model, cfg, workers), null, cfg.detector,
                                              cfg.train, seeds.derive("fit-unsup"), workers);
    out.report = detector::evaluate(out.detector, eval_batch(seeds, model, cfg, workers), kReportLevel);
    return out;
}

struct Sjnr
{
    double sim_db = 0.0;
    double theory_db = 0.0;
};

inline Sjnr sjnr_point(const statkit::SeedStream& seeds, const ScenarioConfig& cfg, double p0_dbm, unsigned workers)
{
    const auto base = scenario_of(cfg, p0_dbm);
    const double ab = theory::alpha_bar(cfg.profile);
    const std::size_t nd = base.geometry.n_elements();
    if (cfg.bob_mode == BobMode::center) {
        const ChannelModel model(base);
        const auto& L = model.large_scale_factors();
        const auto sig = gen_bob_signals(seeds.derive("bob"), "bob", model, cfg.bob_symbols, workers);
        return {to_db(theory::sjnr_empirical(sig)),
                to_db(theory::sjnr_theory(base.p0_watts, nd, ab, L.d_b, L.g, L.i_b, base.fading.noise_bob))};
    }
    // Pooled over Bob positions drawn uniformly in the annulus.
    auto pos_gen = seeds.engine("bob-positions");
    const std::size_t k = cfg.bob_positions;
    const std::size_t per = std::max<std::size_t>(1, cfg.bob_symbols / k);
    double sig = 0.0, jam = 0.0, th_sig = 0.0, th_jam = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        auto sc = base;
        sc.bob_position = sample_bob_position(pos_gen, cfg.geometry.bob);
        const ChannelModel model(sc);
        const auto& L = model.large_scale_factors();
        const auto s = gen_bob_signals(seeds.derive("bob", i), "bob", model, per, workers);
        sig += statkit::mean(s.signal);
        jam += statkit::mean(s.jamming);
        th_sig += sc.p0_watts / L.d_b;
        th_jam += sc.p0_watts * static_cast<double>(nd) * ab / (L.g * L.i_b);
    }
    const double kd = static_cast<double>(k);
    const double noise = base.fading.noise_bob;
    return {to_db((sig / kd) / (jam / kd + noise)), to_db((th_sig / kd) / (th_jam / kd + noise))};
}

} // namespace experiment_detail

/// Seed of one sweep point: a pure function of the root seed and the
/// point's (variable, value) label.
inline std::uint64_t point_seed(const ScenarioConfig& cfg, const std::string& var, double value)
{
    return statkit::SeedStream(cfg.seed).child_seed(var + "=" + experiment_detail::fmt9(value));
}

/// One operating point: unsupervised, supervised and no-surface detectors
/// plus Bob's SJNR. `cfg` already carries the point's grid and N.
inline SweepResult run_point(const ScenarioConfig& cfg, double p0_dbm, const std::string& var, double value,
                             unsigned workers = 1)
{
    using namespace experiment_detail;
    const auto t0 = std::chrono::steady_clock::now();
    validate(cfg);
    const statkit::SeedStream seeds(point_seed(cfg, var, value));
    const ChannelModel model(scenario_of(cfg, p0_dbm));
    const detector::GammaNull null{cfg.detector.n_samples, model.scenario().fading.noise_willie};

    SweepResult r;
    r.sweep_var = var;
    r.sweep_value = value;
    r.far_target = cfg.detector.alpha;
    r.seed = cfg.seed;

    const auto train = training_mixture(seeds, model, cfg, workers);
    const auto unsup = detector::fit_unsupervised(train, null, cfg.detector, cfg.train, seeds.derive("fit-unsup"),
                                                  workers);
    const auto sup_data = stats(seeds.derive("train-sup"), "h1", model, Hypothesis::h1, h1_train_count(cfg), cfg,
                                workers);
    const auto sup = detector::fit_supervised(sup_data, null, cfg.detector, cfg.train, seeds.derive("fit-sup"), workers);
    const auto eval = eval_batch(seeds, model, cfg, workers);
    const auto ru = detector::evaluate(unsup, eval, kReportLevel);
    const auto rs = detector::evaluate(sup, eval, kReportLevel);
    r.mdr_unsup = rate_of(ru.mdr, ru.mdr_ci);
    r.far_empirical = rate_of(ru.far, ru.far_ci);
    r.mdr_sup = rate_of(rs.mdr, rs.mdr_ci);

    if (model.n_elements() == 0) {
        r.mdr_no_dris = r.mdr_unsup;
    } else {
        auto flat = cfg;
        flat.geometry.n_horizontal = 0;
        flat.geometry.n_vertical = 0;
        const ChannelModel bare(scenario_of(flat, p0_dbm));
        const auto nd = unsupervised_pipeline(seeds, bare, flat, workers);
        r.mdr_no_dris = rate_of(nd.report.mdr, nd.report.mdr_ci);
    }

    const auto sj = sjnr_point(seeds, cfg, p0_dbm, workers);
    r.sjnr_sim_db = sj.sim_db;
    r.sjnr_theory_db = sj.theory_db;
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

inline std::vector<SweepResult> run_power_sweep(const ScenarioConfig& cfg, unsigned workers = 1,
                                                const RowCallback& on_row = {})
{
    std::vector<SweepResult> out;
    for (double p : cfg.sweep_dbm) {
        out.push_back(run_point(cfg, p, "p0_dbm", p, workers));
        if (on_row)
            on_row(out.back());
    }
    return out;
}

inline std::string anchor_label(const std::string& var, double anchor)
{
    return var + "@" + experiment_detail::fmt9(anchor) + "dBm";
}

inline std::vector<SweepResult> run_elements_sweep(const ScenarioConfig& cfg, unsigned workers = 1,
                                                   const RowCallback& on_row = {})
{
    std::vector<SweepResult> out;
    for (double a : cfg.anchor_dbm)
        for (std::size_t n : cfg.sweep_elements) {
            auto c = cfg;
            std::tie(c.geometry.n_horizontal, c.geometry.n_vertical) = grid_for(n);
            out.push_back(run_point(c, a, anchor_label("n_elements", a), static_cast<double>(n), workers));
            if (on_row)
                on_row(out.back());
        }
    return out;
}

inline std::vector<SweepResult> run_samples_sweep(const ScenarioConfig& cfg, unsigned workers = 1,
                                                  const RowCallback& on_row = {})
{
    std::vector<SweepResult> out;
    for (double a : cfg.anchor_dbm)
        for (int n : cfg.sweep_samples) {
            auto c = cfg;
            c.detector.n_samples = n;
            out.push_back(run_point(c, a, anchor_label("n_samples", a), n, workers));
            if (on_row)
                on_row(out.back());
        }
    return out;
}

// ---------- CSV ----------

inline constexpr const char* kCsvHeader
    = "sweep_var,sweep_value,mdr_unsup,mdr_unsup_lo,mdr_unsup_hi,mdr_sup,mdr_sup_lo,mdr_sup_hi,mdr_no_dris,"
      "mdr_no_dris_lo,mdr_no_dris_hi,far_target,far_empirical,sjnr_sim_db,sjnr_theory_db,seed";

inline void write_csv(std::ostream& os, const std::vector<SweepResult>& rows, const ScenarioConfig& cfg)
{
    using experiment_detail::fmt9;
    os << "# driscov sweep; rates at " << fmt9(kReportLevel) << " Wilson intervals\n";
    os << dump_config(cfg, "# ");
    os << kCsvHeader << '\n';
    for (const auto& r : rows) {
        os << r.sweep_var << ',' << fmt9(r.sweep_value);
        for (const auto* q : {&r.mdr_unsup, &r.mdr_sup, &r.mdr_no_dris})
            os << ',' << fmt9(q->value) << ',' << fmt9(q->lo) << ',' << fmt9(q->hi);
        os << ',' << fmt9(r.far_target) << ',' << fmt9(r.far_empirical.value) << ',' << fmt9(r.sjnr_sim_db) << ','
           << fmt9(r.sjnr_theory_db) << ',' << r.seed << '\n';
    }
}

inline void emit_csv(const std::vector<SweepResult>& rows, const ScenarioConfig& cfg, const std::string& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error(path + ": cannot open for writing");
    write_csv(os, rows, cfg);
    os.flush();
    if (!os)
        throw std::runtime_error(path + ": write failed");
}

// ---------- TRENDS ----------

/// True when no successive pair rises with disjoint intervals: a later
/// point may exceed an earlier one only within Monte-Carlo overlap.
inline bool non_increasing_within_ci(std::span<const RateCi> pts)
{
    for (std::size_t i = 1; i < pts.size(); ++i)
        if (pts[i].value > pts[i - 1].value && pts[i].lo > pts[i - 1].hi)
            return false;
    return true;
}

// ---------- VALIDATION ----------

struct CheckResult
{
    std::string name;
    double value = 0.0;
    double bound = 0.0;
    bool passed = false;
    std::string detail;
};

struct ValidationReport
{
    std::vector<CheckResult> checks;

    bool passed() const
    {
        return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
    }
};

struct ValidationOptions
{
    bool corrupt_mask = false; // negative control for the autoregressive probe
    unsigned workers = 1;
};

namespace experiment_detail {

inline flow::FlowModel random_flow(std::size_t dim, statkit::Engine& gen)
{
    flow::FlowShape shape;
    shape.dim = dim;
    shape.hidden = {8, 8};
    shape.blocks = 3;
    auto m = flow::make_flow(shape, gen);
    auto theta = flow::get_params(m);
    for (auto& v : theta)
        v = 0.5 * (2.0 * statkit::uniform01(gen) - 1.0);
    flow::set_params(m, theta);
    for (std::size_t t = 0; t < dim; ++t) {
        m.standardizer.mean[t] = 2.0 * statkit::uniform01(gen) - 1.0;
        m.standardizer.stddev[t] = 0.5 + statkit::uniform01(gen);
    }
    return m;
}

inline std::size_t gradient_mismatches(flow::FlowModel m, const flow::Dataset& batch)
{
    const auto g = flow::grad_nll(m, batch);
    auto theta = flow::get_params(m);
    std::size_t bad = 0;
    const double h = 1e-5;
    for (std::size_t k = 0; k < theta.size(); ++k) {
        const double keep = theta[k];
        theta[k] = keep + h;
        flow::set_params(m, theta);
        const double fp = flow::nll(m, batch);
        theta[k] = keep - h;
        flow::set_params(m, theta);
        const double fm = flow::nll(m, batch);
        theta[k] = keep;
        const double fd = (fp - fm) / (2.0 * h);
        const double err = std::abs(fd - g[k]);
        if (!(err <= 1e-7 || err <= 1e-4 * std::max(std::abs(fd), std::abs(g[k]))))
            ++bad;
    }
    return bad;
}

} // namespace experiment_detail

/// Self-checks of the simulator and the detector pipeline on `cfg`.
inline ValidationReport run_validation(const ScenarioConfig& cfg, const ValidationOptions& opt = {})
{
    using namespace experiment_detail;
    validate(cfg);
    ValidationReport rep;
    const statkit::SeedStream seeds = statkit::SeedStream(cfg.seed).derive("validate");
    auto add = [&](std::string name, double value, double bound, bool ok, std::string detail = {}) {
        rep.checks.push_back({std::move(name), value, bound, ok, std::move(detail)});
    };

    const double ab = theory::alpha_bar(cfg.profile);
    {
        auto gen = seeds.engine("alpha-bar");
        const std::size_t n = 1000000;
        const auto c = sample_dris_coeffs(gen, cfg.profile, n);
        double m1 = 0.0, m2 = 0.0;
        for (const auto& v : c) {
            m1 += std::norm(v);
            m2 += std::norm(v) * std::norm(v);
        }
        m1 /= n;
        m2 /= n;
        const double se = std::sqrt(std::max(m2 - m1 * m1, 0.0) / n);
        add("alpha_bar", ab, m1, std::abs(m1 - ab) <= 5.0 * se + 1e-12, "Monte-Carlo mean |beta|^2 as bound");
    }

    const ChannelModel model(scenario_of(cfg, cfg.p0_dbm));
    if (model.n_elements() > 0) {
        const auto& L = model.large_scale_factors();
        const double expected = theory::prop_variance(model.n_elements(), ab, L.g, L.i_w);
        const std::size_t n = 100000;
        std::vector<double> p(n);
        const auto s = seeds.derive("cascade");
        parallel_for(n, opt.workers, [&](std::size_t i) {
            thread_local std::vector<Complex> w;
            thread_local std::vector<std::uint8_t> scratch;
            auto gen = s.engine("draw", i);
            model.sample_cascade_weights(gen, Target::willie, w);
            p[i] = std::norm(model.sampler().sample_weighted_sum(gen, w, scratch));
        });
        double m2 = 0.0, m4 = 0.0;
        for (double v : p) {
            m2 += v;
            m4 += v * v;
        }
        m2 /= n;
        m4 /= n;
        add("cascade_variance_ratio", m2 / expected, 0.02, std::abs(m2 / expected - 1.0) <= 0.02);
        const double k = m4 / (m2 * m2);
        add("cascade_fourth_moment", k, 2.0, k >= 1.9 && k <= 2.1, "complex Gaussian value is 2");
    } else {
        add("cascade_variance_ratio", 1.0, 0.02, true, "no surface configured");
    }

    const double noise = model.scenario().fading.noise_willie;
    const int N = cfg.detector.n_samples;
    {
        const auto h0 = gen_willie_statistics(seeds.derive("ks"), "h0", model, Hypothesis::h0, 100000, N, opt.workers);
        const double d = statkit::ks_distance(h0.statistics, [&](double y) { return statkit::gamma_cdf(N, noise, y); });
        const double crit = statkit::ks_critical(h0.size(), 0.01);
        add("h0_gamma_ks", d, crit, d < crit);
    }

    {
        auto gen = seeds.engine("flow-checks");
        std::size_t bad = 0;
        for (std::size_t d : {1u, 4u}) {
            const auto m = random_flow(d, gen);
            std::vector<double> v(6 * d);
            for (auto& x : v)
                x = 2.0 * statkit::uniform01(gen) - 1.0;
            bad += gradient_mismatches(m, flow::Dataset(d, v));
        }
        add("flow_gradient_mismatches", static_cast<double>(bad), 0.0, bad == 0);

        double worst = 0.0;
        for (std::size_t d : {1u, 4u}) {
            const auto m = random_flow(d, gen);
            for (int i = 0; i < 1000; ++i) {
                std::vector<double> y(d);
                for (std::size_t t = 0; t < d; ++t)
                    y[t] = m.standardizer.mean[t] + m.standardizer.stddev[t] * (20.0 * statkit::uniform01(gen) - 10.0);
                const auto back = flow::flow_inverse(m, flow::flow_forward(m, y).z);
                for (std::size_t t = 0; t < d; ++t)
                    worst = std::max(worst, std::abs(back[t] - y[t]));
            }
        }
        add("flow_round_trip", worst, 1e-9, worst < 1e-9);

        const auto m = random_flow(1, gen);
        const double lo = std::min(flow::flow_inverse(m, std::vector<double>{-10.0})[0],
                                   m.standardizer.mean[0] - 10.0 * m.standardizer.stddev[0]);
        const double hi = std::max(flow::flow_inverse(m, std::vector<double>{10.0})[0],
                                   m.standardizer.mean[0] + 10.0 * m.standardizer.stddev[0]);
        const int n = 100000;
        const double h = (hi - lo) / n;
        auto ws = flow::make_workspace(m);
        double acc = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double y = lo + i * h;
            acc += ((i == 0 || i == n) ? 0.5 : 1.0) * std::exp(flow::log_density(m, std::span(&y, 1), ws));
        }
        add("flow_normalization", acc * h, 1e-3, std::abs(acc * h - 1.0) < 1e-3);

        flow::MadeNetwork net(6, {64});
        net.init(gen);
        for (auto& L : net.layers())
            for (auto& w : L.weight)
                w = 2.0 * statkit::uniform01(gen) - 1.0;
        if (opt.corrupt_mask)
            net.set_mask_entry_for_testing(net.layers().size() - 1, 2, 4, true);
        const auto viol = flow::autoregressive_violations(net, gen);
        add("made_autoregressive_violations", static_cast<double>(viol), 0.0, viol == 0);
    }

    // Gamma(N, 2 noise) surrogate: the optimal test thresholds Y directly.
    {
        const detector::GammaNull null{N, noise};
        const auto s = seeds.derive("surrogate");
        auto draw = [&](std::string_view label, double scale, Hypothesis hyp, std::size_t n) {
            ObservationBatch b;
            b.statistics.resize(n);
            b.hidden_labels.assign(n, hyp);
            parallel_for(n, opt.workers, [&](std::size_t i) {
                auto gen = s.engine(label, i);
                b.statistics[i] = statkit::sample_gamma(gen, N, scale);
            });
            return b;
        };
        const std::size_t n1 = h1_train_count(cfg);
        auto train = draw("train-h0", noise, Hypothesis::h0, cfg.train_stats - n1);
        train.append(draw("train-h1", 2.0 * noise, Hypothesis::h1, n1));
        auto dcfg = cfg.detector;
        dcfg.window = 1;
        auto tcfg = cfg.train;
        tcfg.shape.dim = 1;
        auto det = detector::fit_unsupervised(train, null, dcfg, tcfg, s.derive("fit"), opt.workers);
        auto h0 = draw("eval-h0", noise, Hypothesis::h0, 100000);
        const auto h1 = draw("eval-h1", 2.0 * noise, Hypothesis::h1, 100000);
        for (double alpha : {0.01, 0.05, 0.1}) {
            det.threshold = detector::calibrate_threshold(det.flow, null, alpha, cfg.detector.threshold_samples,
                                                          s.derive("calibrate", static_cast<std::uint64_t>(alpha * 1e4)),
                                                          opt.workers)
                                .threshold;
            const auto r = detector::evaluate(det, h0);
            const auto band = statkit::binomial_ci(static_cast<std::size_t>(std::llround(alpha * 1e5)), 100000, 0.99);
            add("far_calibration@" + fmt9(alpha), *r.far, alpha, band.contains(*r.far),
                "99% Wilson band [" + fmt9(band.lo) + ", " + fmt9(band.hi) + "]");
        }
        det.threshold = detector::calibrate_threshold(det.flow, null, cfg.detector.alpha, cfg.detector.threshold_samples,
                                                      s.derive("calibrate-np"), opt.workers)
                            .threshold;
        const double mdr = *detector::evaluate(det, h1).mdr;
        const boost::math::gamma_distribution<double> g0(N, noise);
        const double c = boost::math::quantile(g0, 1.0 - cfg.detector.alpha);
        const double optimum = statkit::gamma_cdf(N, 2.0 * noise, c);
        add("surrogate_np_gap", mdr - optimum, 0.05, mdr - optimum <= 0.05,
            "unsupervised MDR " + fmt9(mdr) + " vs analytic " + fmt9(optimum));
    }
    return rep;
}

inline void write_validation(std::ostream& os, const ValidationReport& rep)
{
    using experiment_detail::fmt9;
    os << "check,value,bound,status,detail\n";
    for (const auto& c : rep.checks)
        os << c.name << ',' << fmt9(c.value) << ',' << fmt9(c.bound) << ',' << (c.passed ? "pass" : "FAIL") << ",\""
           << c.detail << "\"\n";
}

} // namespace driscov

#endif // DRISCOV_EXPERIMENT_HPP
