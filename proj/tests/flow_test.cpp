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
#include <numbers>
#include <sstream>

#include "driscov/flow.hpp"

using namespace driscov;
using namespace driscov::flow;
namespace sk = driscov::statkit;

namespace {

FlowModel random_model(std::size_t dim, std::uint64_t seed, double scale = 0.4, FlowShape shape = {})
{
    shape.dim = dim;
    auto gen = sk::SeedStream(seed).engine("model");
    auto m = make_flow(shape, gen);
    auto theta = get_params(m);
    for (auto& v : theta)
        v = scale * (2.0 * sk::uniform01(gen) - 1.0);
    set_params(m, theta);
    for (std::size_t t = 0; t < dim; ++t) {
        m.standardizer.mean[t] = 2.0 * sk::uniform01(gen) - 1.0;
        m.standardizer.stddev[t] = 0.5 + sk::uniform01(gen);
    }
    return m;
}

std::vector<double> normal_rows(std::size_t n, std::size_t dim, double mu, double sigma, std::uint64_t seed)
{
    auto gen = sk::SeedStream(seed).engine("data");
    std::vector<double> v(n * dim);
    for (auto& x : v)
        x = mu + sigma * std::sqrt(2.0) * sk::sample_cn01(gen).real();
    return v;
}

} // namespace

TEST(Standardizer, PopulationConvention)
{
    const auto st = standardizer_fit(Dataset(1, {0.0, 2.0}));
    EXPECT_DOUBLE_EQ(st.mean[0], 1.0);
    EXPECT_DOUBLE_EQ(st.stddev[0], 1.0);
    EXPECT_THROW(standardizer_fit(Dataset(1, {3.0, 3.0, 3.0})), DegenerateData);
    EXPECT_THROW(standardizer_fit(Dataset(1, {3.0})), DegenerateData);
    EXPECT_THROW(standardizer_fit(Dataset(2, {1.0, 2.0, 1.0, 2.0})), DegenerateData);
}

TEST(Standardizer, StandardizedOutputHasUnitMoments)
{
    auto v = normal_rows(1000, 3, 7.0, 3.0, 1);
    const Dataset data(3, v);
    const auto st = standardizer_fit(data);
    std::vector<double> w(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        w[i] = (v[i] - st.mean[i % 3]) / st.stddev[i % 3];
    const auto again = standardizer_fit(Dataset(3, w));
    for (std::size_t t = 0; t < 3; ++t) {
        EXPECT_NEAR(again.mean[t], 0.0, 1e-12);
        EXPECT_NEAR(again.stddev[t], 1.0, 1e-12);
    }
}

TEST(Made, ZeroHeadGivesZeroOutputs)
{
    auto gen = sk::SeedStream(2).engine("init");
    MadeNetwork net(4, {64, 64});
    net.init(gen);
    const auto [mu, s] = made_forward(net, std::vector<double>{1.0, -2.0, 3.0, 0.5});
    for (std::size_t t = 0; t < 4; ++t) {
        EXPECT_EQ(mu[t], 0.0);
        EXPECT_EQ(s[t], 0.0);
    }
}

TEST(Made, DimensionOneIsInputIndependent)
{
    auto m = random_model(1, 3);
    const auto& net = m.blocks[0].net;
    const auto a = made_forward(net, std::vector<double>{-5.0});
    const auto b = made_forward(net, std::vector<double>{17.0});
    EXPECT_EQ(a, b);
    EXPECT_NE(a.first[0], 0.0);
}

TEST(Made, AutoregressiveProperty)
{
    for (std::size_t d : {2u, 4u, 6u}) {
        for (const std::vector<std::size_t>& hidden :
             {std::vector<std::size_t>{64}, std::vector<std::size_t>{16, 16}, std::vector<std::size_t>{3}}) {
            FlowShape shape;
            shape.hidden = hidden;
            auto m = random_model(d, 4 + d, 1.0, shape);
            auto gen = sk::SeedStream(5).engine("probe");
            EXPECT_EQ(autoregressive_violations(m.blocks[0].net, gen), 0u) << d;
        }
    }
}

TEST(Made, ProbeDetectsBrokenMask)
{
    auto m = random_model(4, 6, 1.0);
    auto& net = m.blocks[0].net;
    // Output 0 (mu_1) may not see input 0; open that path directly.
    net.set_mask_entry_for_testing(net.layers().size() - 1, 0, 0, true);
    auto gen = sk::SeedStream(7).engine("probe");
    EXPECT_GT(autoregressive_violations(net, gen), 0u);
}

TEST(Made, PerturbingThirdInputLeavesFirstThreeOutputs)
{
    auto m = random_model(4, 8, 1.0);
    const auto& net = m.blocks[0].net;
    std::vector<double> y{0.3, -1.2, 0.7, 2.0};
    const auto base = made_forward(net, y);
    y[2] += 1.5;
    const auto moved = made_forward(net, y);
    for (std::size_t t = 0; t < 3; ++t) {
        EXPECT_EQ(moved.first[t], base.first[t]);
        EXPECT_EQ(moved.second[t], base.second[t]);
    }
    EXPECT_NE(moved.first[3], base.first[3]);
}

TEST(Flow, IdentityInitialization)
{
    auto gen = sk::SeedStream(9).engine("init");
    auto m = make_flow(FlowShape{2}, gen);
    m.standardizer.mean = {1.0, -2.0};
    m.standardizer.stddev = {2.0, 0.5};
    const std::vector<double> y{3.0, -1.0};
    const auto r = flow_forward(m, y);
    EXPECT_NEAR(r.z[0], 1.0, 1e-15);
    EXPECT_NEAR(r.z[1], 2.0, 1e-15);
    EXPECT_NEAR(r.logdet, -std::log(2.0) - std::log(0.5), 1e-15);
    const auto back = flow_inverse(m, std::vector<double>{0.0, 0.0});
    EXPECT_DOUBLE_EQ(back[0], 1.0);
    EXPECT_DOUBLE_EQ(back[1], -2.0);
    const auto de = flow_inverse(m, std::vector<double>{1.0, 1.0});
    EXPECT_DOUBLE_EQ(de[0], 3.0);
    EXPECT_DOUBLE_EQ(de[1], -1.5);
}

TEST(Flow, IdentityInitializationWithEnrichment)
{
    auto gen = sk::SeedStream(10).engine("init");
    auto m = make_flow(FlowShape{1}, gen);
    ASSERT_TRUE(m.blocks[0].enrich);
    const auto r = flow_forward(m, std::vector<double>{0.37});
    EXPECT_DOUBLE_EQ(r.z[0], 0.37);
    EXPECT_DOUBLE_EQ(r.logdet, 0.0);
}

TEST(Flow, EnrichmentDefaults)
{
    EXPECT_TRUE(FlowShape{1}.enrichment_enabled());
    EXPECT_FALSE(FlowShape{3}.enrichment_enabled());
    FlowShape s{3};
    s.enrichment = Enrichment::on;
    EXPECT_TRUE(s.enrichment_enabled());
    s = FlowShape{1};
    s.enrichment = Enrichment::off;
    EXPECT_FALSE(s.enrichment_enabled());
}

TEST(Flow, LogDetMatchesNumericalJacobian)
{
    for (auto enr : {Enrichment::off, Enrichment::on}) {
        FlowShape shape;
        shape.enrichment = enr;
        for (std::uint64_t seed = 11; seed < 14; ++seed) {
            const auto m = random_model(2, seed, 0.8, shape);
            const std::vector<double> y{0.4, -0.9};
            const auto r = flow_forward(m, y);
            const double h = 1e-6;
            double J[2][2];
            for (int u = 0; u < 2; ++u) {
                auto yp = y, ym = y;
                yp[u] += h;
                ym[u] -= h;
                const auto zp = flow_forward(m, yp).z;
                const auto zm = flow_forward(m, ym).z;
                for (int t = 0; t < 2; ++t)
                    J[t][u] = (zp[t] - zm[t]) / (2.0 * h);
            }
            const double num = std::log(std::abs(J[0][0] * J[1][1] - J[0][1] * J[1][0]));
            EXPECT_NEAR(r.logdet, num, 1e-5 * std::max(1.0, std::abs(num)));
        }
    }
}

TEST(Flow, SingleBlockJacobianIsTriangular)
{
    FlowShape shape;
    shape.blocks = 1;
    const auto m = random_model(4, 15, 0.8, shape);
    const std::vector<double> y{0.2, -0.4, 1.1, 0.6};
    const auto z0 = flow_forward(m, y).z;
    for (std::size_t u = 0; u < 4; ++u) {
        auto yp = y;
        yp[u] += 1e-3;
        const auto z1 = flow_forward(m, yp).z;
        for (std::size_t t = 0; t < u; ++t)
            EXPECT_EQ(z1[t], z0[t]) << "t=" << t << " u=" << u;
        EXPECT_NE(z1[u], z0[u]);
    }
}

TEST(Flow, RoundTrip)
{
    for (std::size_t d : {1u, 4u}) {
        const auto m = random_model(d, 16 + d, 0.6);
        auto gen = sk::SeedStream(17).engine("points");
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            std::vector<double> y(d);
            for (std::size_t t = 0; t < d; ++t)
                y[t] = m.standardizer.mean[t] + m.standardizer.stddev[t] * (20.0 * sk::uniform01(gen) - 10.0);
            const auto back = flow_inverse(m, flow_forward(m, y).z);
            for (std::size_t t = 0; t < d; ++t)
                worst = std::max(worst, std::abs(back[t] - y[t]));
        }
        EXPECT_LT(worst, 1e-9) << d;
    }
}

TEST(Flow, EnrichmentInverseSolvesMonotoneMap)
{
    for (double ra : {-3.0, -0.5, 0.0, 0.9, 4.0})
        for (double rb : {-2.0, 0.5, 3.0}) {
            const auto p = enrich_params(ra, rb);
            EXPECT_GT(p.a * p.b, -1.0);
            for (double u : {-8.0, -0.3, 0.0, 0.01, 2.5, 9.0}) {
                const auto [o, logd] = enrich_apply(p, u);
                EXPECT_TRUE(std::isfinite(logd));
                EXPECT_NEAR(enrich_invert(p, o), u, 1e-11);
            }
        }
}

TEST(Flow, LogDensityDecomposition)
{
    const auto m = random_model(3, 18);
    const std::vector<double> y{0.1, 2.0, -1.0};
    const auto r = flow_forward(m, y);
    double base = 0.0;
    for (double z : r.z)
        base += -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi);
    EXPECT_NEAR(log_density(m, y), base + r.logdet, 1e-12);
}

TEST(Flow, DensityNormalizes)
{
    for (std::uint64_t seed : {19u, 20u, 21u}) {
        const auto m = random_model(1, seed, 0.6);
        const double mu = m.standardizer.mean[0];
        const double sd = m.standardizer.stddev[0];
        // The flow can stretch its tails; integrate over a wide window in z
        // space mapped back to y.
        const double lo = flow_inverse(m, std::vector<double>{-10.0})[0];
        const double hi = flow_inverse(m, std::vector<double>{10.0})[0];
        const double a = std::min(lo, mu - 10.0 * sd);
        const double b = std::max(hi, mu + 10.0 * sd);
        const int n = 200000;
        const double h = (b - a) / n;
        double acc = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double w = (i == 0 || i == n) ? 0.5 : 1.0;
            acc += w * std::exp(log_density(m, std::vector<double>{a + i * h}));
        }
        EXPECT_NEAR(acc * h, 1.0, 1e-3) << seed;
    }
}

TEST(Nll, IdentityModelStandardNormalEntropy)
{
    auto gen = sk::SeedStream(22).engine("init");
    const auto m = make_flow(FlowShape{1}, gen);
    const Dataset data(1, normal_rows(200000, 1, 0.0, 1.0, 23));
    EXPECT_NEAR(nll(m, data), 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e), 0.01);
}

TEST(Nll, TranslationInvariantThroughStandardizer)
{
    auto m = random_model(2, 24);
    auto v = normal_rows(500, 2, 0.0, 1.5, 25);
    m.standardizer = standardizer_fit(Dataset(2, v));
    const double a = nll(m, Dataset(2, v));
    for (auto& x : v)
        x += 1000.0;
    m.standardizer = standardizer_fit(Dataset(2, v));
    EXPECT_NEAR(nll(m, Dataset(2, v)), a, 1e-9);
    EXPECT_THROW(nll(m, Dataset{}), std::invalid_argument);
}

TEST(Nll, SmallAdamStepDescends)
{
    int descended = 0;
    TrainConfig cfg;
    cfg.learning_rate = 1e-5;
    for (std::uint64_t r = 0; r < 100; ++r) {
        const std::size_t d = r % 2 == 0 ? 1 : 2;
        FlowShape shape;
        shape.hidden = {16};
        shape.blocks = 2;
        auto m = random_model(d, 100 + r, 0.3, shape);
        const Dataset batch(d, normal_rows(64, d, 0.5, 1.3, 300 + r));
        const double before = nll(m, batch);
        auto theta = get_params(m);
        AdamState st;
        adam_step(theta, grad_nll(m, batch), st, cfg);
        set_params(m, theta);
        descended += nll(m, batch) <= before;
    }
    EXPECT_GE(descended, 95);
}

TEST(Gradient, MatchesCentralDifferences)
{
    for (std::size_t d : {1u, 4u}) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            FlowShape shape;
            shape.hidden = {8, 8};
            shape.blocks = 3;
            auto m = random_model(d, 40 + 10 * d + seed, 0.5, shape);
            const Dataset batch(d, normal_rows(6, d, 0.0, 1.2, 50 + seed));
            const auto g = grad_nll(m, batch);
            auto theta = get_params(m);
            ASSERT_EQ(g.size(), theta.size());
            const double h = 1e-5;
            std::size_t bad = 0;
            for (std::size_t k = 0; k < theta.size(); ++k) {
                const double keep = theta[k];
                theta[k] = keep + h;
                set_params(m, theta);
                const double fp = nll(m, batch);
                theta[k] = keep - h;
                set_params(m, theta);
                const double fm = nll(m, batch);
                theta[k] = keep;
                const double fd = (fp - fm) / (2.0 * h);
                const double err = std::abs(fd - g[k]);
                if (!(err <= 1e-7 || err <= 1e-4 * std::max(std::abs(fd), std::abs(g[k]))))
                    ++bad;
            }
            set_params(m, theta);
            EXPECT_EQ(bad, 0u) << "d=" << d << " seed=" << seed;
        }
    }
}

TEST(Gradient, MaskedWeightsGetExactZero)
{
    const auto m = random_model(4, 60);
    const Dataset batch(4, normal_rows(10, 4, 0.0, 1.0, 61));
    const auto g = grad_nll(m, batch);
    std::size_t k = 0, masked = 0;
    for (const auto& blk : m.blocks) {
        for (const auto& L : blk.net.layers()) {
            for (std::size_t i = 0; i < L.weight.size(); ++i, ++k)
                if (!L.mask[i]) {
                    EXPECT_EQ(g[k], 0.0);
                    ++masked;
                }
            k += L.bias.size();
        }
        if (blk.enrich)
            k += blk.raw_a.size() + blk.raw_b.size();
    }
    EXPECT_EQ(k, g.size());
    EXPECT_GT(masked, 0u);
}

TEST(Gradient, BatchIsMeanOfSamples)
{
    const auto m = random_model(1, 62);
    const Dataset a(1, {0.3}), b(1, {-1.4}), ab(1, {0.3, -1.4});
    const auto ga = grad_nll(m, a), gb = grad_nll(m, b), gab = grad_nll(m, ab);
    for (std::size_t k = 0; k < gab.size(); ++k)
        EXPECT_NEAR(gab[k], 0.5 * (ga[k] + gb[k]), 1e-14 * (1.0 + std::abs(gab[k])));
}

TEST(Adam, HandEvaluatedFirstStep)
{
    TrainConfig cfg;
    std::vector<double> p{1.0, -2.0, 0.5};
    const std::vector<double> g{0.3, -4.0, 0.0};
    AdamState st;
    adam_step(p, g, st, cfg);
    // Step 1: m_hat = g, v_hat = g^2, so the update is -lr g / (|g| + eps).
    EXPECT_NEAR(p[0], 1.0 - 2e-4 * 0.3 / (0.3 + 1e-8), 1e-15);
    EXPECT_NEAR(p[1], -2.0 + 2e-4 * 4.0 / (4.0 + 1e-8), 1e-15);
    EXPECT_EQ(p[2], 0.5);

    std::vector<double> q{1.0, 1.0};
    AdamState s0;
    adam_step(q, std::vector<double>{0.0, 0.0}, s0, cfg);
    EXPECT_EQ(q, (std::vector<double>{1.0, 1.0}));

    std::vector<double> x{0.1, 0.2}, y{0.1, 0.2};
    AdamState sx, sy;
    for (int i = 0; i < 3; ++i) {
        adam_step(x, std::vector<double>{0.5, -0.1}, sx, cfg);
        adam_step(y, std::vector<double>{0.5, -0.1}, sy, cfg);
    }
    EXPECT_EQ(x, y);
    EXPECT_THROW(adam_step(x, std::vector<double>{1.0}, sx, cfg), std::logic_error);
}

TEST(Train, ConfigValidation)
{
    TrainConfig c;
    c.learning_rate = 0.0;
    EXPECT_THROW(validate(c), std::invalid_argument);
    c = TrainConfig{};
    c.epochs = 0;
    EXPECT_THROW(validate(c), std::invalid_argument);
    c = TrainConfig{};
    EXPECT_THROW(train(Dataset(1, {1.0, 2.0}), c), std::invalid_argument);
    std::vector<double> flat(300, 4.0);
    EXPECT_THROW(train(Dataset(1, flat), c), DegenerateData);
}

TEST(Train, NormalEntropy)
{
    const Dataset data(1, normal_rows(20000, 1, 3.0, 2.0, 70));
    const Dataset fresh(1, normal_rows(50000, 1, 3.0, 2.0, 71));
    TrainConfig cfg;
    cfg.seed = 72;
    cfg.epochs = 50;
    const auto m = train(data, cfg);
    const double entropy = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * 4.0);
    EXPECT_NEAR(nll(m, fresh), entropy, 0.05);
}

TEST(Train, GammaDensityTotalVariation)
{
    auto gen = sk::SeedStream(80).engine("gamma");
    std::vector<double> v(20000);
    for (auto& x : v)
        x = sk::sample_gamma(gen, 5, 1.0);
    TrainConfig cfg;
    cfg.seed = 81;
    TrainReport rep;
    const auto m = train(Dataset(1, v), cfg, &rep);
    EXPECT_EQ(rep.holdout_curve.size(), 200u);

    const boost::math::gamma_distribution<double> ref(5.0, 1.0);
    const int n = 512;
    const double lo = 0.0, hi = 25.0, h = (hi - lo) / (n - 1);
    auto ws = make_workspace(m);
    double tv = 0.0;
    for (int i = 0; i < n; ++i) {
        const double y = lo + i * h;
        const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
        const double p = std::exp(log_density(m, std::vector<double>{y}, ws));
        tv += w * std::abs(p - boost::math::pdf(ref, y));
    }
    tv *= 0.5 * h;
    RecordProperty("tv", std::to_string(tv));
    EXPECT_LT(tv, 0.05);
}

TEST(Train, DeterministicAndSerializable)
{
    const Dataset data(1, normal_rows(2000, 1, 1.0, 1.0, 90));
    TrainConfig cfg;
    cfg.seed = 91;
    cfg.epochs = 5;
    const auto a = train(data, cfg);
    const auto b = train(data, cfg);
    EXPECT_EQ(get_params(a), get_params(b));
    cfg.seed = 92;
    EXPECT_NE(get_params(train(data, cfg)), get_params(a));

    std::stringstream ss;
    save(a, ss);
    const auto c = load(ss);
    EXPECT_EQ(get_params(c), get_params(a));
    for (double y : {-3.0, 0.0, 1.0, 7.5}) {
        const std::vector<double> yy{y};
        EXPECT_EQ(log_density(c, yy), log_density(a, yy));
    }
    std::stringstream again;
    save(c, again);
    std::stringstream first;
    save(a, first);
    EXPECT_EQ(again.str(), first.str());

    std::stringstream bad("NOTAMODEL");
    EXPECT_THROW(load(bad), std::runtime_error);
    auto bytes = first.str();
    std::stringstream truncated(bytes.substr(0, bytes.size() - 4));
    EXPECT_THROW(load(truncated), std::runtime_error);
}

TEST(Train, WindowedModelSerializes)
{
    const auto m = random_model(3, 93);
    std::stringstream ss;
    save(m, ss);
    const auto c = load(ss);
    const std::vector<double> y{0.5, -0.2, 1.0};
    EXPECT_EQ(log_density(c, y), log_density(m, y));
}
