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

#include <gtest/gtest.h>

#include <boost/math/distributions/gamma.hpp>
#include <cmath>
#include <sstream>

#include "driscov/detector.hpp"

using namespace driscov;
using namespace driscov::detector;
namespace sk = driscov::statkit;

namespace {

ObservationBatch gamma_batch(std::size_t n, int shape, double scale, Hypothesis label, std::uint64_t seed)
{
    auto gen = sk::SeedStream(seed).engine("gamma");
    ObservationBatch b;
    for (std::size_t i = 0; i < n; ++i) {
        b.statistics.push_back(sk::sample_gamma(gen, shape, scale));
        b.hidden_labels.push_back(label);
    }
    return b;
}

flow::TrainConfig quick_train(int epochs = 40, double lr = 1e-3)
{
    flow::TrainConfig t;
    t.epochs = epochs;
    t.learning_rate = lr;
    return t;
}

void ignore_warning(const std::string&) {}

} // namespace

TEST(H0Likelihood, ExponentialCase)
{
    EXPECT_DOUBLE_EQ(h0_likelihood({1, 1.0}, 0.0), 1.0);
    EXPECT_NEAR(h0_likelihood({1, 1.0}, 1.0), std::exp(-1.0), 1e-15);
    EXPECT_EQ(h0_likelihood({5, 1.0}, 1e4), 0.0);
    EXPECT_THROW(h0_likelihood({5, 1.0}, -0.1), std::invalid_argument);
}

TEST(Prefilter, CountBookkeeping)
{
    ObservationBatch b;
    for (int i = 1; i <= 10; ++i) {
        b.statistics.push_back(0.5 * i);
        b.hidden_labels.push_back(i % 2 ? Hypothesis::h0 : Hypothesis::h1);
    }
    const GammaNull null{5, 1.0};
    const auto r = prefilter(b, null, 0.2);
    EXPECT_EQ(r.retained.size(), 8u);
    EXPECT_EQ(r.discarded, 2u);
    // The two discarded rows are the most null-like: Gamma(5,1) peaks at 4.
    for (double y : r.retained.statistics) {
        EXPECT_NE(y, 4.0);
        EXPECT_NE(y, 4.5);
    }
    // Labels travel with their statistics.
    for (std::size_t i = 0; i < r.retained.size(); ++i) {
        const int k = static_cast<int>(std::lround(r.retained.statistics[i] / 0.5));
        EXPECT_EQ(r.retained.hidden_labels[i], k % 2 ? Hypothesis::h0 : Hypothesis::h1);
    }
    for (std::size_t i = 0; i < r.retained.size(); ++i)
        EXPECT_LT(theory::gamma_h0_logpdf(null, r.retained.statistics[i]), r.log_tau);
}

TEST(Prefilter, RetainedCountFollowsRho)
{
    const auto b = gamma_batch(1000, 5, 1.0, Hypothesis::h0, 1);
    for (double rho : {0.01, 0.1, 0.25, 0.5, 0.9, 0.999})
        EXPECT_EQ(prefilter(b, {5, 1.0}, rho).retained.size(),
                  1000u - static_cast<std::size_t>(std::floor(rho * 1000.0 + 1e-9)))
            << rho;
    // rho * n < 1 discards nothing.
    EXPECT_EQ(prefilter(gamma_batch(5, 5, 1.0, Hypothesis::h0, 2), {5, 1.0}, 0.1).retained.size(), 5u);
}

TEST(Prefilter, TiesAndErrors)
{
    ObservationBatch same;
    same.statistics.assign(10, 3.0);
    same.hidden_labels.assign(10, Hypothesis::h0);
    EXPECT_THROW(prefilter(same, {5, 1.0}, 0.2), DegenerateSplit);
    EXPECT_THROW(prefilter(ObservationBatch{}, {5, 1.0}, 0.2), std::invalid_argument);
    EXPECT_THROW(prefilter(same, {5, 1.0}, 0.0), std::invalid_argument);
    EXPECT_THROW(prefilter(same, {5, 1.0}, 1.0), std::invalid_argument);
    same.statistics[0] = -1.0;
    EXPECT_THROW(prefilter(same, {5, 1.0}, 0.5), std::invalid_argument);
}

TEST(Prefilter, WindowsAreKeptWhole)
{
    auto b = gamma_batch(101, 5, 1.0, Hypothesis::h0, 3);
    const auto r = prefilter(b, {5, 1.0}, 0.3, 4);
    // 25 windows, floor(7.5) = 7 discarded, trailing statistic dropped.
    EXPECT_EQ(r.retained.size(), 18u * 4u);
    for (std::size_t i = 0; i < r.retained.size(); i += 4) {
        const auto it = std::find(b.statistics.begin(), b.statistics.end(), r.retained.statistics[i]);
        ASSERT_NE(it, b.statistics.end());
        const auto pos = static_cast<std::size_t>(it - b.statistics.begin());
        EXPECT_EQ(pos % 4, 0u);
        for (std::size_t j = 1; j < 4; ++j)
            EXPECT_EQ(r.retained.statistics[i + j], b.statistics[pos + j]);
    }
}

TEST(Prefilter, LabelAuditWithSurface)
{
    ChannelScenario sc;
    const ChannelModel model(sc);
    const GammaNull null{5, sc.fading.noise_willie};
    auto batch = gen_willie_statistics(sk::SeedStream(4), "h0", model, Hypothesis::h0, 1000, 5);
    batch.append(gen_willie_statistics(sk::SeedStream(4), "h1", model, Hypothesis::h1, 1000, 5));
    const auto r = prefilter(batch, null, 0.5);
    std::size_t h1 = 0;
    for (auto l : r.retained.hidden_labels)
        h1 += l == Hypothesis::h1;
    EXPECT_EQ(r.retained.size(), 1000u);
    EXPECT_GT(static_cast<double>(h1) / r.retained.size(), 0.99);
}

TEST(Threshold, QuantileOnKnownList)
{
    std::vector<double> v(100);
    for (int i = 0; i < 100; ++i)
        v[i] = 100.0 - i;
    EXPECT_EQ(threshold_from_llr_values(v, 0.05), 95.0);
    EXPECT_EQ(threshold_from_llr_values(v, 1.0 - 1e-9), 1.0);
    EXPECT_THROW(threshold_from_llr_values(v, 0.0), std::invalid_argument);
}

TEST(Threshold, WarnsOnSmallMonteCarlo)
{
    auto gen = sk::SeedStream(5).engine("init");
    const auto f = flow::make_flow(flow::FlowShape{1}, gen);
    int warnings = 0;
    const WarningSink count = [&](const std::string&) { ++warnings; };
    calibrate_threshold(f, {5, 1.0}, 0.05, 1000, sk::SeedStream(6), 1, count);
    EXPECT_EQ(warnings, 1);
    calibrate_threshold(f, {5, 1.0}, 0.05, 2000, sk::SeedStream(6), 1, count);
    EXPECT_EQ(warnings, 1);
}

TEST(Threshold, IndependentOfWorkers)
{
    auto gen = sk::SeedStream(7).engine("init");
    const auto f = flow::make_flow(flow::FlowShape{1}, gen);
    const auto a = calibrate_threshold(f, {5, 1.0}, 0.05, 20000, sk::SeedStream(8), 1);
    const auto b = calibrate_threshold(f, {5, 1.0}, 0.05, 20000, sk::SeedStream(8), 3);
    EXPECT_EQ(a.threshold, b.threshold);
    EXPECT_EQ(a.quantile_index, 18999u);
}

TEST(Classify, TieGoesToNull)
{
    auto gen = sk::SeedStream(9).engine("init");
    FittedDetector d;
    d.flow = flow::make_flow(flow::FlowShape{1}, gen);
    d.null = {5, 1.0};
    d.threshold = llr(d, 3.0);
    EXPECT_EQ(classify(d, 3.0), Hypothesis::h0);
    d.threshold = std::nextafter(d.threshold, -1e300);
    EXPECT_EQ(classify(d, 3.0), Hypothesis::h1);
    EXPECT_THROW(llr(d, -1.0), std::invalid_argument);
    EXPECT_EQ(classify_llr(1.0, 1.0), Hypothesis::h0);
}

TEST(Evaluate, ConstantDecisions)
{
    auto batch = gamma_batch(100, 5, 1.0, Hypothesis::h0, 10);
    batch.append(gamma_batch(50, 5, 2.0, Hypothesis::h1, 11));
    const auto always0 = evaluate_with([](auto) { return Hypothesis::h0; }, batch, 1, 0.95);
    EXPECT_EQ(*always0.mdr, 1.0);
    EXPECT_EQ(*always0.far, 0.0);
    const auto always1 = evaluate_with([](auto) { return Hypothesis::h1; }, batch, 1, 0.95);
    EXPECT_EQ(*always1.mdr, 0.0);
    EXPECT_EQ(*always1.far, 1.0);
    EXPECT_EQ(always1.n_h0, 100u);
    EXPECT_EQ(always1.n_h1, 50u);
    EXPECT_LE(always1.mdr_ci->lo, 0.0);
    EXPECT_GT(always1.mdr_ci->hi, 0.0);

    const auto only0 = evaluate_with([](auto) { return Hypothesis::h1; }, gamma_batch(10, 5, 1.0, Hypothesis::h0, 12),
                                     1, 0.95);
    EXPECT_FALSE(only0.mdr.has_value());
    EXPECT_FALSE(only0.mdr_ci.has_value());
    EXPECT_TRUE(only0.far.has_value());
}

TEST(Evaluate, WindowsMustNotMixHypotheses)
{
    auto batch = gamma_batch(3, 5, 1.0, Hypothesis::h0, 13);
    batch.append(gamma_batch(3, 5, 1.0, Hypothesis::h1, 14));
    EXPECT_NO_THROW(evaluate_with([](auto) { return Hypothesis::h0; }, batch, 3, 0.95));
    EXPECT_THROW(evaluate_with([](auto) { return Hypothesis::h0; }, batch, 2, 0.95), std::invalid_argument);
}

TEST(Calibration, BadlyTrainedFlowStillHoldsFar)
{
    // Calibration only touches the null side: even a random, untrained
    // flow keeps its false-alarm rate.
    auto gen = sk::SeedStream(15).engine("init");
    auto f = flow::make_flow(flow::FlowShape{1}, gen);
    auto theta = flow::get_params(f);
    for (auto& v : theta)
        v = 0.5 * (2.0 * sk::uniform01(gen) - 1.0);
    flow::set_params(f, theta);
    f.standardizer = {{7.0}, {3.0}};
    const GammaNull null{5, 1.0};
    const auto fresh = gamma_batch(100000, 5, 1.0, Hypothesis::h0, 16);
    for (double alpha : {0.01, 0.05, 0.1}) {
        FittedDetector d;
        d.flow = f;
        d.null = null;
        d.threshold = calibrate_threshold(f, null, alpha, 200000, sk::SeedStream(17)).threshold;
        const auto rep = evaluate(d, fresh);
        const auto band = sk::binomial_ci(static_cast<std::size_t>(std::llround(alpha * 1e5)), 100000, 0.99);
        EXPECT_TRUE(band.contains(*rep.far)) << alpha << " far=" << *rep.far;
    }
}

TEST(Fit, SupervisedRequiresH1Labels)
{
    auto b = gamma_batch(1000, 5, 2.0, Hypothesis::h1, 18);
    b.hidden_labels[10] = Hypothesis::h0;
    EXPECT_THROW(fit_supervised(b, {5, 1.0}, DetectorConfig{}, quick_train(), sk::SeedStream(19)),
                 std::invalid_argument);
}

TEST(Fit, UnsupervisedIsDeterministic)
{
    auto b = gamma_batch(2000, 5, 1.0, Hypothesis::h0, 20);
    b.append(gamma_batch(2000, 5, 2.0, Hypothesis::h1, 21));
    DetectorConfig cfg;
    cfg.threshold_samples = 20000;
    const auto a = fit_unsupervised(b, {5, 1.0}, cfg, quick_train(5), sk::SeedStream(22));
    const auto c = fit_unsupervised(b, {5, 1.0}, cfg, quick_train(5), sk::SeedStream(22));
    EXPECT_EQ(flow::get_params(a.flow), flow::get_params(c.flow));
    EXPECT_EQ(a.threshold, c.threshold);
    // Hidden labels are never read: scrambling them changes nothing.
    for (auto& l : b.hidden_labels)
        l = Hypothesis::h1;
    const auto e = fit_unsupervised(b, {5, 1.0}, cfg, quick_train(5), sk::SeedStream(22));
    EXPECT_EQ(flow::get_params(a.flow), flow::get_params(e.flow));
    EXPECT_EQ(a.threshold, e.threshold);
}

TEST(Fit, NullOnlyBatchKeepsCalibration)
{
    const GammaNull null{5, 1.0};
    DetectorConfig cfg;
    cfg.threshold_samples = 200000;
    const auto d
        = fit_unsupervised(gamma_batch(10000, 5, 1.0, Hypothesis::h0, 23), null, cfg, quick_train(), sk::SeedStream(24));
    const auto rep = evaluate(d, gamma_batch(100000, 5, 1.0, Hypothesis::h0, 25));
    EXPECT_TRUE(sk::binomial_ci(5000, 100000, 0.99).contains(*rep.far)) << *rep.far;
}

TEST(Fit, CoincidingHypothesesArePowerless)
{
    const GammaNull null{5, 1.0};
    DetectorConfig cfg;
    cfg.threshold_samples = 200000;
    // A near-exact fit of the null needs more data than the other checks.
    const auto d = fit_supervised(gamma_batch(100000, 5, 1.0, Hypothesis::h1, 26), null, cfg, quick_train(40, 2e-3),
                                  sk::SeedStream(27));
    const boost::math::gamma_distribution<double> g(5.0, 1.0);
    const double lo = boost::math::quantile(g, 0.05), hi = boost::math::quantile(g, 0.95);
    for (int i = 0; i <= 100; ++i) {
        const double y = lo + (hi - lo) * i / 100.0;
        EXPECT_LT(std::abs(llr(d, y)), 0.1) << y;
    }
    const auto rep = evaluate(d, gamma_batch(100000, 5, 1.0, Hypothesis::h1, 28));
    EXPECT_NEAR(*rep.mdr, 0.95, 0.02);
}

TEST(Fit, SurrogateMatchesAnalyticRegion)
{
    const GammaNull null{5, 1.0};
    DetectorConfig cfg;
    cfg.threshold_samples = 200000;
    const auto d = fit_supervised(gamma_batch(20000, 5, 2.0, Hypothesis::h1, 29), null, cfg, quick_train(),
                                  sk::SeedStream(30));
    const double c = boost::math::quantile(boost::math::gamma_distribution<double>(5.0, 1.0), 0.95);
    auto pts = gamma_batch(50000, 5, 1.0, Hypothesis::h0, 31);
    pts.append(gamma_batch(50000, 5, 2.0, Hypothesis::h1, 32));
    std::size_t disagree = 0;
    for (double y : pts.statistics)
        disagree += classify(d, y) != (y > c ? Hypothesis::h1 : Hypothesis::h0);
    EXPECT_LE(static_cast<double>(disagree) / pts.size(), 0.005);

    // Gamma(5, 2) vs Gamma(5, 1): the analytic LLR is y/2 + const.
    double prev = llr(d, 10.0);
    for (double y = 10.5; y <= 30.0; y += 0.5) {
        const double v = llr(d, y);
        EXPECT_GT(v, prev) << y;
        prev = v;
    }
}

TEST(Fit, HugePowerIsSeparable)
{
    ChannelScenario sc;
    sc.geometry.n_horizontal = 0;
    sc.geometry.n_vertical = 0;
    sc.p0_watts = dbm_to_watts(30.0);
    const ChannelModel model(sc);
    const GammaNull null{5, sc.fading.noise_willie};
    DetectorConfig cfg;
    cfg.threshold_samples = 100000;
    auto train = gen_willie_statistics(sk::SeedStream(33), "h0", model, Hypothesis::h0, 5000, 5);
    train.append(gen_willie_statistics(sk::SeedStream(33), "h1", model, Hypothesis::h1, 5000, 5));
    const auto d = fit_unsupervised(train, null, cfg, quick_train(), sk::SeedStream(34));
    const auto eval = gen_willie_statistics(sk::SeedStream(35), "h1", model, Hypothesis::h1, 20000, 5);
    EXPECT_LT(*evaluate(d, eval).mdr, 0.01);
}

TEST(Fit, LlrUsesNoRandomness)
{
    const auto d = fit_supervised(gamma_batch(1000, 5, 2.0, Hypothesis::h1, 36), {5, 1.0},
                                  DetectorConfig{0.05, 0.5, 5, 5000}, quick_train(2), sk::SeedStream(37), 1, nullptr,
                                  ignore_warning);
    auto other = d;
    other.threshold = calibrate_threshold(d.flow, d.null, 0.05, 5000, sk::SeedStream(999)).threshold;
    EXPECT_EQ(llr(d, 4.2), llr(other, 4.2));
}

TEST(Fit, WindowedMode)
{
    const GammaNull null{5, 1.0};
    DetectorConfig cfg;
    cfg.window = 2;
    cfg.threshold_samples = 50000;
    auto b = gamma_batch(4000, 5, 1.0, Hypothesis::h0, 38);
    b.append(gamma_batch(4000, 5, 2.0, Hypothesis::h1, 39));
    const auto d = fit_unsupervised(b, null, cfg, quick_train(20), sk::SeedStream(40));
    EXPECT_EQ(d.flow.dim, 2u);
    auto eval = gamma_batch(20000, 5, 1.0, Hypothesis::h0, 41);
    eval.append(gamma_batch(20000, 5, 2.0, Hypothesis::h1, 42));
    const auto rep = evaluate(d, eval);
    EXPECT_EQ(rep.n_h0, 10000u);
    EXPECT_TRUE(sk::binomial_ci(500, 10000, 0.999).contains(*rep.far)) << *rep.far;
    // Two statistics per decision beat the single-statistic optimum (~0.48).
    EXPECT_LT(*rep.mdr, 0.40);
}

TEST(Serialize, RoundTripKeepsDecisions)
{
    auto b = gamma_batch(2000, 5, 1.0, Hypothesis::h0, 40);
    b.append(gamma_batch(2000, 5, 2.0, Hypothesis::h1, 41));
    DetectorConfig cfg;
    cfg.threshold_samples = 20000;
    const auto d = fit_unsupervised(b, {5, 1.0}, cfg, quick_train(3), sk::SeedStream(42));
    std::stringstream ss;
    save(d, ss);
    const auto e = load(ss);
    EXPECT_EQ(e.threshold, d.threshold);
    EXPECT_EQ(e.null.shape, 5);
    EXPECT_EQ(e.quantile_index, d.quantile_index);
    EXPECT_EQ(e.threshold_samples, d.threshold_samples);
    EXPECT_EQ(flow::get_params(e.flow), flow::get_params(d.flow));
    for (double y : {0.5, 3.0, 7.5})
        EXPECT_EQ(llr(e, y), llr(d, y));

    std::string bytes = ss.str();
    bytes[2] = 'X';
    std::istringstream bad(bytes);
    EXPECT_THROW(load(bad), std::runtime_error);
    std::istringstream cut(ss.str().substr(0, 30));
    EXPECT_THROW(load(cut), std::runtime_error);
}
