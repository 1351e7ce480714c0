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

#ifndef DRISCOV_DETECTOR_HPP
#define DRISCOV_DETECTOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "channel.hpp"
#include "flow.hpp"
#include "parallel.hpp"
#include "statkit.hpp"
#include "theory.hpp"

namespace driscov::detector {

using theory::GammaNull;

/// Prefiltering left nothing to train on.
class DegenerateSplit : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct DetectorConfig
{
    double alpha = 0.05;
    double rho = 0.5;
    int n_samples = 5;                       // N
    std::size_t threshold_samples = 1000000; // N_m
    double h1_fraction = 0.5;                // simulated training mixture
    std::size_t window = 1;                  // statistics per decision (flow dimension)
};

inline void validate(const DetectorConfig& c)
{
    if (!(c.alpha > 0.0 && c.alpha < 1.0))
        throw std::invalid_argument("detector: alpha must lie in (0, 1)");
    if (!(c.rho > 0.0 && c.rho < 1.0))
        throw std::invalid_argument("detector: rho must lie in (0, 1)");
    if (c.n_samples < 1)
        throw std::invalid_argument("detector: samples per statistic must be at least 1");
    if (c.threshold_samples < 1)
        throw std::invalid_argument("detector: threshold sample count must be at least 1");
    if (!(c.h1_fraction >= 0.0 && c.h1_fraction <= 1.0))
        throw std::invalid_argument("detector: H1 fraction must lie in [0, 1]");
    if (c.window < 1)
        throw std::invalid_argument("detector: window must be at least 1");
}

using WarningSink = std::function<void(const std::string&)>;

inline void warn_to_clog(const std::string& msg)
{
    std::clog << "warning: " << msg << '\n';
}

inline double h0_log_likelihood(const GammaNull& null, std::span<const double> row)
{
    double acc = 0.0;
    for (double y : row)
        acc += theory::gamma_h0_logpdf(null, y);
    return acc;
}

inline double h0_likelihood(const GammaNull& null, double y)
{
    return std::exp(theory::gamma_h0_logpdf(null, y));
}

// ---------- PREFILTER ----------

struct PrefilterResult
{
    ObservationBatch retained;
    double log_tau = 0.0; // discard rows with log-likelihood >= log_tau
    std::size_t discarded = 0;
};

/// Drops the rows (windows of `window` consecutive statistics) most likely
/// under the null. With k = floor(rho n) the threshold is the (n-k)-th
/// order statistic (0-based) of the row log-likelihoods and every row at or
/// above it is discarded, so ties at the boundary are all discarded.
inline PrefilterResult prefilter(const ObservationBatch& batch, const GammaNull& null, double rho,
                                 std::size_t window = 1)
{
    if (!(rho > 0.0 && rho < 1.0))
        throw std::invalid_argument("prefilter: rho must lie in (0, 1)");
    if (window < 1)
        throw std::invalid_argument("prefilter: window must be at least 1");
    if (batch.hidden_labels.size() != batch.statistics.size())
        throw std::invalid_argument("prefilter: statistics and labels differ in length");
    const std::size_t n = batch.size() / window;
    if (n == 0)
        throw std::invalid_argument("prefilter: empty batch");
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i)
        score[i] = h0_log_likelihood(null, std::span(batch.statistics).subspan(i * window, window));

    PrefilterResult out;
    out.retained.provenance = batch.provenance + "|prefilter";
    const auto k = static_cast<std::size_t>(std::floor(rho * static_cast<double>(n) + 1e-9));
    if (k == 0) {
        out.log_tau = std::numeric_limits<double>::infinity();
    } else {
        std::vector<double> tmp = score;
        const auto idx = static_cast<std::ptrdiff_t>(n - k);
        std::nth_element(tmp.begin(), tmp.begin() + idx, tmp.end());
        out.log_tau = tmp[static_cast<std::size_t>(idx)];
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (score[i] >= out.log_tau) {
            ++out.discarded;
            continue;
        }
        for (std::size_t j = i * window; j < (i + 1) * window; ++j) {
            out.retained.statistics.push_back(batch.statistics[j]);
            out.retained.hidden_labels.push_back(batch.hidden_labels[j]);
        }
    }
    if (out.retained.size() == 0)
        throw DegenerateSplit("prefilter: every observation was discarded");
    return out;
}

// ---------- FITTED DETECTOR ----------

struct FittedDetector
{
    flow::FlowModel flow;
    GammaNull null;
    double threshold = 0.0; // eta_o, LLR domain
    double alpha = 0.05;
    std::size_t threshold_samples = 0;
    std::size_t quantile_index = 0;
    std::size_t window = 1;
};

inline double llr(const flow::FlowModel& f, const GammaNull& null, std::span<const double> row,
                  flow::FlowWorkspace& ws)
{
    for (double y : row)
        if (!(y >= 0.0))
            throw std::invalid_argument("llr: statistic must be non-negative");
    return flow::log_density(f, row, ws) - h0_log_likelihood(null, row);
}

inline double llr(const FittedDetector& d, std::span<const double> row)
{
    if (row.size() != d.window)
        throw std::invalid_argument("llr: row length differs from the detector window");
    auto ws = flow::make_workspace(d.flow);
    return llr(d.flow, d.null, row, ws);
}

inline double llr(const FittedDetector& d, double y)
{
    return llr(d, std::span<const double>(&y, 1));
}

/// eta_o as the empirical (1 - alpha) quantile of null LLR values.
inline double threshold_from_llr_values(std::span<const double> values, double alpha)
{
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("threshold: alpha must lie in (0, 1)");
    return statkit::empirical_quantile(values, 1.0 - alpha);
}

struct Calibration
{
    double threshold = 0.0;
    std::size_t quantile_index = 0;
};

inline constexpr std::size_t kCalibrationChunk = 4096;

/// Monte-Carlo threshold: draws n_mc rows from the Gamma null, each row
/// from substream ("chunk", c) of `seeds`, and takes the (1 - alpha)
/// quantile of their LLR values.
inline Calibration calibrate_threshold(const flow::FlowModel& f, const GammaNull& null, double alpha,
                                       std::size_t n_mc, const statkit::SeedStream& seeds,
                                       unsigned workers = 1, const WarningSink& warn = warn_to_clog)
{
    theory::validate(null);
    if (n_mc < 1)
        throw std::invalid_argument("calibrate_threshold: need at least one Monte-Carlo sample");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("calibrate_threshold: alpha must lie in (0, 1)");
    if (static_cast<double>(n_mc) * std::min(alpha, 1.0 - alpha) < 100.0 && warn)
        warn("calibrate_threshold: only " + std::to_string(n_mc)
             + " Monte-Carlo samples; fewer than 100 expected beyond the threshold");
    const std::size_t w = f.dim;
    std::vector<double> values(n_mc);
    const std::size_t chunks = (n_mc + kCalibrationChunk - 1) / kCalibrationChunk;
    parallel_for(chunks, workers, [&](std::size_t c) {
        auto gen = seeds.engine("chunk", c);
        auto ws = flow::make_workspace(f);
        std::vector<double> row(w);
        const std::size_t end = std::min(n_mc, (c + 1) * kCalibrationChunk);
        for (std::size_t i = c * kCalibrationChunk; i < end; ++i) {
            for (auto& y : row)
                y = statkit::sample_gamma(gen, null.shape, null.scale);
            values[i] = llr(f, null, row, ws);
        }
    });
    Calibration cal;
    cal.quantile_index = statkit::quantile_index(n_mc, 1.0 - alpha);
    cal.threshold = threshold_from_llr_values(values, alpha);
    return cal;
}

/// Decides H1 only when the LLR strictly exceeds the threshold.
inline Hypothesis classify_llr(double value, double threshold) noexcept
{
    return value > threshold ? Hypothesis::h1 : Hypothesis::h0;
}

inline Hypothesis classify(const FittedDetector& d, std::span<const double> row)
{
    return classify_llr(llr(d, row), d.threshold);
}

inline Hypothesis classify(const FittedDetector& d, double y)
{
    return classify(d, std::span<const double>(&y, 1));
}

// ---------- FITTING ----------

struct FitReport
{
    std::size_t input_rows = 0;
    std::size_t retained_rows = 0;
    double log_tau = std::numeric_limits<double>::infinity();
    flow::TrainReport train;
};

namespace detail {

inline flow::Dataset rows_of(const ObservationBatch& b, std::size_t window)
{
    const std::size_t n = b.size() / window;
    return flow::Dataset(window, std::vector<double>(b.statistics.begin(),
                                                     b.statistics.begin() + static_cast<std::ptrdiff_t>(n * window)));
}

inline FittedDetector fit_on(const flow::Dataset& data, const GammaNull& null, const DetectorConfig& cfg,
                             flow::TrainConfig train_cfg, const statkit::SeedStream& seeds, unsigned workers,
                             const WarningSink& warn, FitReport* report)
{
    train_cfg.seed = seeds.child_seed("flow-train");
    train_cfg.shape.dim = cfg.window;
    flow::TrainReport tr;
    FittedDetector d;
    d.flow = flow::train(data, train_cfg, &tr);
    d.null = null;
    d.alpha = cfg.alpha;
    d.window = cfg.window;
    d.threshold_samples = cfg.threshold_samples;
    const auto cal = calibrate_threshold(d.flow, null, cfg.alpha, cfg.threshold_samples, seeds.derive("calibrate"),
                                         workers, warn);
    d.threshold = cal.threshold;
    d.quantile_index = cal.quantile_index;
    if (report)
        report->train = std::move(tr);
    return d;
}

} // namespace detail

/// Prefilter, train the flow on the retained rows, calibrate. Hidden labels
/// are carried through the prefilter but never read.
inline FittedDetector fit_unsupervised(const ObservationBatch& batch, const GammaNull& null,
                                       const DetectorConfig& cfg, const flow::TrainConfig& train_cfg,
                                       const statkit::SeedStream& seeds, unsigned workers = 1,
                                       FitReport* report = nullptr, const WarningSink& warn = warn_to_clog)
{
    validate(cfg);
    theory::validate(null);
    auto pf = prefilter(batch, null, cfg.rho, cfg.window);
    const auto data = detail::rows_of(pf.retained, cfg.window);
    FitReport local;
    local.input_rows = batch.size() / cfg.window;
    local.retained_rows = data.size();
    local.log_tau = pf.log_tau;
    auto d = detail::fit_on(data, null, cfg, train_cfg, seeds, workers, warn, &local);
    if (report)
        *report = std::move(local);
    return d;
}

/// Baseline trained directly on labeled H1 statistics.
inline FittedDetector fit_supervised(const ObservationBatch& batch, const GammaNull& null, const DetectorConfig& cfg,
                                     const flow::TrainConfig& train_cfg, const statkit::SeedStream& seeds,
                                     unsigned workers = 1, FitReport* report = nullptr,
                                     const WarningSink& warn = warn_to_clog)
{
    validate(cfg);
    theory::validate(null);
    if (batch.hidden_labels.size() != batch.statistics.size())
        throw std::invalid_argument("fit_supervised: statistics and labels differ in length");
    for (auto l : batch.hidden_labels)
        if (l != Hypothesis::h1)
            throw std::invalid_argument("fit_supervised: every training statistic must be labeled H1");
    const auto data = detail::rows_of(batch, cfg.window);
    FitReport local;
    local.input_rows = data.size();
    local.retained_rows = data.size();
    auto d = detail::fit_on(data, null, cfg, train_cfg, seeds, workers, warn, &local);
    if (report)
        *report = std::move(local);
    return d;
}

// ---------- EVALUATION ----------

struct DetectionReport
{
    std::size_t n_h0 = 0;
    std::size_t n_h1 = 0;
    std::size_t false_alarms = 0;
    std::size_t missed = 0;
    std::optional<double> far;
    std::optional<statkit::Interval> far_ci;
    std::optional<double> mdr;
    std::optional<statkit::Interval> mdr_ci;
};

/// Counts decisions against hidden labels. A rate whose hypothesis has no
/// rows is left empty.
template <typename Decide>
DetectionReport evaluate_with(Decide&& decide, const ObservationBatch& batch, std::size_t window, double level)
{
    if (batch.hidden_labels.size() != batch.statistics.size())
        throw std::invalid_argument("evaluate: statistics and labels differ in length");
    const std::size_t n = batch.size() / window;
    DetectionReport r;
    for (std::size_t i = 0; i < n; ++i) {
        const auto label = batch.hidden_labels[i * window];
        for (std::size_t j = i * window + 1; j < (i + 1) * window; ++j)
            if (batch.hidden_labels[j] != label)
                throw std::invalid_argument("evaluate: a window mixes hypotheses");
        const auto row = std::span(batch.statistics).subspan(i * window, window);
        const auto h = decide(row);
        if (label == Hypothesis::h0) {
            ++r.n_h0;
            r.false_alarms += h == Hypothesis::h1;
        } else {
            ++r.n_h1;
            r.missed += h == Hypothesis::h0;
        }
    }
    if (r.n_h0 > 0) {
        r.far = static_cast<double>(r.false_alarms) / static_cast<double>(r.n_h0);
        r.far_ci = statkit::binomial_ci(r.false_alarms, r.n_h0, level);
    }
    if (r.n_h1 > 0) {
        r.mdr = static_cast<double>(r.missed) / static_cast<double>(r.n_h1);
        r.mdr_ci = statkit::binomial_ci(r.missed, r.n_h1, level);
    }
    return r;
}

inline DetectionReport evaluate(const FittedDetector& d, const ObservationBatch& batch, double level = 0.95)
{
    auto ws = flow::make_workspace(d.flow);
    return evaluate_with(
        [&](std::span<const double> row) { return classify_llr(llr(d.flow, d.null, row, ws), d.threshold); },
        batch, d.window, level);
}


// ---------- SERIALIZATION ----------

inline constexpr char kDetectorMagic[8] = {'D', 'R', 'I', 'S', 'D', 'E', 'T', '\0'};
inline constexpr std::uint32_t kDetectorVersion = 1;

/// magic[8], u32 version, u32 null shape, f64 null scale, f64 threshold,
/// f64 alpha, u32 window, f64 threshold_samples, f64 quantile_index, then
/// the flow in its own format.
inline void save(const FittedDetector& d, std::ostream& os)
{
    using namespace flow::detail;
    os.write(kDetectorMagic, sizeof kDetectorMagic);
    put_u32(os, kDetectorVersion);
    put_u32(os, static_cast<std::uint32_t>(d.null.shape));
    put_f64(os, d.null.scale);
    put_f64(os, d.threshold);
    put_f64(os, d.alpha);
    put_u32(os, static_cast<std::uint32_t>(d.window));
    put_f64(os, static_cast<double>(d.threshold_samples));
    put_f64(os, static_cast<double>(d.quantile_index));
    flow::save(d.flow, os);
    if (!os)
        throw std::runtime_error("detector: write failed");
}

inline FittedDetector load(std::istream& is)
{
    using namespace flow::detail;
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kDetectorMagic, sizeof magic) != 0)
        throw std::runtime_error("detector: bad magic bytes");
    if (get_u32(is) != kDetectorVersion)
        throw std::runtime_error("detector: unsupported version");
    FittedDetector d;
    d.null.shape = static_cast<int>(get_u32(is));
    d.null.scale = get_f64(is);
    d.threshold = get_f64(is);
    d.alpha = get_f64(is);
    d.window = get_u32(is);
    d.threshold_samples = static_cast<std::size_t>(get_f64(is));
    d.quantile_index = static_cast<std::size_t>(get_f64(is));
    d.flow = flow::load(is);
    theory::validate(d.null);
    if (d.window == 0 || d.window != d.flow.dim)
        throw std::runtime_error("detector: window does not match the flow dimension");
    return d;
}

} // namespace driscov::detector

#endif // DRISCOV_DETECTOR_HPP
