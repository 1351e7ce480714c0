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

#ifndef DRISCOV_FLOW_HPP
#define DRISCOV_FLOW_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "statkit.hpp"

namespace driscov::flow {

/// Thrown when training data cannot be standardized (constant dimension,
/// too few samples).
class DegenerateData : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// Row-major n x dim sample matrix.
struct Dataset
{
    std::size_t dim = 1;
    std::vector<double> values;

    Dataset() = default;
    Dataset(std::size_t d, std::vector<double> v) : dim(d), values(std::move(v))
    {
        if (dim == 0 || values.size() % dim != 0)
            throw std::invalid_argument("dataset: size is not a multiple of the dimension");
    }

    std::size_t size() const noexcept { return dim == 0 ? 0 : values.size() / dim; }
    std::span<const double> row(std::size_t i) const noexcept { return {values.data() + i * dim, dim}; }
};

// ---------- STANDARDIZER ----------

struct Standardizer
{
    std::vector<double> mean;
    std::vector<double> stddev;

    double log_scale_sum() const noexcept
    {
        double acc = 0.0;
        for (double s : stddev)
            acc += std::log(s);
        return acc;
    }
};

/// Per-dimension mean and population standard deviation.
inline Standardizer standardizer_fit(const Dataset& data)
{
    const std::size_t n = data.size();
    if (n < 2)
        throw DegenerateData("standardizer_fit: at least two samples are required");
    Standardizer st;
    st.mean.assign(data.dim, 0.0);
    st.stddev.assign(data.dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < data.dim; ++t)
            st.mean[t] += data.values[i * data.dim + t];
    for (auto& m : st.mean)
        m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < data.dim; ++t) {
            const double c = data.values[i * data.dim + t] - st.mean[t];
            st.stddev[t] += c * c;
        }
    for (std::size_t t = 0; t < data.dim; ++t) {
        st.stddev[t] = std::sqrt(st.stddev[t] / static_cast<double>(n));
        if (!(st.stddev[t] > 0.0) || !std::isfinite(st.stddev[t])
            || st.stddev[t] <= 1e-13 * std::abs(st.mean[t]))
            throw DegenerateData("standardizer_fit: zero deviation in dimension " + std::to_string(t));
    }
    return st;
}

// ---------- MADE ----------

/// Dense layer whose effective weight is weight .* mask.
struct MaskedLinear
{
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    std::vector<double> weight; // n_out x n_in, row-major
    std::vector<double> bias;
    std::vector<std::uint8_t> mask;
};

/// Activations of one MADE evaluation; act[0] is the input.
struct MadeCache
{
    std::vector<std::vector<double>> act;
    std::vector<double> out; // [mu_0..mu_{d-1}, s_0..s_{d-1}]
};

/// Masked autoencoder producing (mu_t, s_t) from y_{<t}. Inputs carry
/// degrees 1..d, hidden units cyclic degrees in [1, max(1, d-1)], and the
/// output head for dimension t only sees hidden units of degree < t.
/// Hidden layers use tanh; the output head is linear.
class MadeNetwork
{
public:
    MadeNetwork() = default;

    MadeNetwork(std::size_t dim, std::vector<std::size_t> hidden) : dim_(dim), hidden_(std::move(hidden))
    {
        if (dim_ == 0)
            throw std::invalid_argument("MadeNetwork: dimension must be positive");
        for (auto h : hidden_)
            if (h == 0)
                throw std::invalid_argument("MadeNetwork: hidden widths must be positive");
        std::size_t prev = dim_;
        for (std::size_t h : hidden_) {
            layers_.push_back(make_layer(prev, h));
            prev = h;
        }
        layers_.push_back(make_layer(prev, 2 * dim_));
        build_masks();
    }

    std::size_t dim() const noexcept { return dim_; }
    const std::vector<std::size_t>& hidden() const noexcept { return hidden_; }
    const std::vector<MaskedLinear>& layers() const noexcept { return layers_; }
    std::vector<MaskedLinear>& layers() noexcept { return layers_; }

    /// Glorot-uniform hidden weights, zero biases, zero output head.
    void init(statkit::Engine& gen)
    {
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            auto& L = layers_[l];
            std::fill(L.bias.begin(), L.bias.end(), 0.0);
            if (l + 1 == layers_.size()) {
                std::fill(L.weight.begin(), L.weight.end(), 0.0);
                continue;
            }
            const double limit = std::sqrt(6.0 / static_cast<double>(L.n_in + L.n_out));
            for (std::size_t k = 0; k < L.weight.size(); ++k) {
                const double w = (2.0 * statkit::uniform01(gen) - 1.0) * limit;
                L.weight[k] = L.mask[k] ? w : 0.0;
            }
        }
    }

    MadeCache make_cache() const
    {
        MadeCache c;
        c.act.resize(layers_.size());
        c.act[0].assign(dim_, 0.0);
        for (std::size_t l = 0; l + 1 < layers_.size(); ++l)
            c.act[l + 1].assign(layers_[l].n_out, 0.0);
        c.out.assign(2 * dim_, 0.0);
        return c;
    }

    /// Evaluates only units that can reach the output head.
    void forward(std::span<const double> x, MadeCache& c) const
    {
        std::copy(x.begin(), x.end(), c.act[0].begin());
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& L = layers_[l];
            const auto& conn = conn_[l];
            const auto& in = c.act[l];
            const bool last = l + 1 == layers_.size();
            auto& out = last ? c.out : c.act[l + 1];
            for (std::size_t k = 0; k < conn.rows.size(); ++k) {
                const std::size_t o = conn.rows[k];
                double acc = L.bias[o];
                const double* w = L.weight.data() + o * L.n_in;
                for (std::size_t p = conn.start[k]; p < conn.start[k + 1]; ++p)
                    acc += w[conn.cols[p]] * in[conn.cols[p]];
                out[o] = last ? acc : std::tanh(acc);
            }
        }
    }

    /// Accumulates parameter gradients into `grad` (same shape) and writes
    /// d/dx into g_x given d/d(out) in g_out.
    void backward(const MadeCache& c, std::span<const double> g_out, MadeNetwork& grad, std::span<double> g_x,
                  std::vector<std::vector<double>>& g_act) const
    {
        g_act.resize(layers_.size());
        for (std::size_t l = 0; l < layers_.size(); ++l)
            g_act[l].assign(layers_[l].n_in, 0.0);
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const auto& L = layers_[l];
            auto& G = grad.layers_[l];
            const auto& conn = conn_[l];
            const bool last = l + 1 == layers_.size();
            const auto& in = c.act[l];
            auto& g_in = g_act[l];
            for (std::size_t k = 0; k < conn.rows.size(); ++k) {
                const std::size_t o = conn.rows[k];
                double g;
                if (last) {
                    g = g_out[o];
                } else {
                    const double a = c.act[l + 1][o];
                    g = g_act[l + 1][o] * (1.0 - a * a);
                }
                if (g == 0.0)
                    continue;
                G.bias[o] += g;
                const double* w = L.weight.data() + o * L.n_in;
                double* gw = G.weight.data() + o * L.n_in;
                for (std::size_t p = conn.start[k]; p < conn.start[k + 1]; ++p) {
                    const std::size_t i = conn.cols[p];
                    gw[i] += g * in[i];
                    g_in[i] += g * w[i];
                }
            }
        }
        std::copy(g_act[0].begin(), g_act[0].end(), g_x.begin());
    }

    /// Overrides one mask entry. Exists so tests can verify that the
    /// autoregressive probes detect a broken mask.
    void set_mask_entry_for_testing(std::size_t layer, std::size_t row, std::size_t col, bool on)
    {
        auto& L = layers_.at(layer);
        L.mask.at(row * L.n_in + col) = on ? 1 : 0;
        build_connectivity();
    }

    /// Input degrees 1..d.
    std::vector<int> input_degrees() const
    {
        std::vector<int> d(dim_);
        for (std::size_t i = 0; i < dim_; ++i)
            d[i] = static_cast<int>(i) + 1;
        return d;
    }

private:
    struct Connectivity
    {
        std::vector<std::size_t> rows;  // live output units
        std::vector<std::size_t> start; // CSR offsets into cols, size rows+1
        std::vector<std::size_t> cols;  // active inputs per live unit
    };

    static MaskedLinear make_layer(std::size_t n_in, std::size_t n_out)
    {
        MaskedLinear L;
        L.n_in = n_in;
        L.n_out = n_out;
        L.weight.assign(n_in * n_out, 0.0);
        L.bias.assign(n_out, 0.0);
        L.mask.assign(n_in * n_out, 0);
        return L;
    }

    void build_masks()
    {
        const int cycle = static_cast<int>(std::max<std::size_t>(1, dim_ - 1));
        std::vector<int> prev = input_degrees();
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            auto& L = layers_[l];
            const bool last = l + 1 == layers_.size();
            std::vector<int> deg(L.n_out);
            for (std::size_t o = 0; o < L.n_out; ++o)
                deg[o] = last ? static_cast<int>(o % dim_) + 1 : static_cast<int>(o % cycle) + 1;
            for (std::size_t o = 0; o < L.n_out; ++o)
                for (std::size_t i = 0; i < L.n_in; ++i) {
                    const bool on = last ? deg[o] > prev[i] : deg[o] >= prev[i];
                    L.mask[o * L.n_in + i] = on ? 1 : 0;
                }
            prev = std::move(deg);
        }
        build_connectivity();
    }

    void build_connectivity()
    {
        conn_.assign(layers_.size(), {});
        std::vector<std::uint8_t> live(layers_.back().n_out, 1);
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const auto& L = layers_[l];
            auto& C = conn_[l];
            std::vector<std::uint8_t> live_in(L.n_in, 0);
            C.start.push_back(0);
            for (std::size_t o = 0; o < L.n_out; ++o) {
                if (!live[o])
                    continue;
                C.rows.push_back(o);
                for (std::size_t i = 0; i < L.n_in; ++i)
                    if (L.mask[o * L.n_in + i]) {
                        C.cols.push_back(i);
                        live_in[i] = 1;
                    }
                C.start.push_back(C.cols.size());
            }
            live = std::move(live_in);
        }
    }

    std::size_t dim_ = 0;
    std::vector<std::size_t> hidden_;
    std::vector<MaskedLinear> layers_;
    std::vector<Connectivity> conn_;
};

/// (mu, s) for one input; s is the log-scale head.
inline std::pair<std::vector<double>, std::vector<double>> made_forward(const MadeNetwork& net,
                                                                        std::span<const double> y)
{
    auto c = net.make_cache();
    net.forward(y, c);
    const std::size_t d = net.dim();
    return {std::vector<double>(c.out.begin(), c.out.begin() + static_cast<std::ptrdiff_t>(d)),
            std::vector<double>(c.out.begin() + static_cast<std::ptrdiff_t>(d), c.out.end())};
}

/// Number of (perturbed input j, inspected output t) pairs with j >= t whose
/// outputs move under a finite perturbation of input j. Zero for a valid mask.
inline std::size_t autoregressive_violations(const MadeNetwork& net, statkit::Engine& gen, int trials = 4)
{
    const std::size_t d = net.dim();
    std::size_t bad = 0;
    std::vector<double> y(d);
    for (int trial = 0; trial < trials; ++trial) {
        for (auto& v : y)
            v = 4.0 * statkit::uniform01(gen) - 2.0;
        const auto [mu0, s0] = made_forward(net, y);
        for (std::size_t j = 0; j < d; ++j) {
            auto yp = y;
            yp[j] += 0.731 + statkit::uniform01(gen);
            const auto [mu1, s1] = made_forward(net, yp);
            for (std::size_t t = 0; t <= j; ++t)
                if (mu1[t] != mu0[t] || s1[t] != s0[t])
                    ++bad;
        }
    }
    return bad;
}

// ---------- FLOW ----------

enum class Enrichment { automatic, on, off };

inline constexpr double kLogScaleClamp = 7.0;

inline double softplus(double x) noexcept
{
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) noexcept
{
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// One autoregressive affine transform z_t = (x_t - mu_t) exp(-s_t), in
/// identity or reversed variable order, optionally followed by the monotone
/// map g(u) = u + a tanh(b u) with b = softplus(raw_b), a = tanh(raw_a)/b
/// (so a*b lies in (-1, 1) and g' > 0).
struct FlowBlock
{
    MadeNetwork net;
    bool reversed = false;
    bool enrich = false;
    std::vector<double> raw_a;
    std::vector<double> raw_b;
};

struct FlowShape
{
    std::size_t dim = 1;
    std::size_t blocks = 5;
    std::vector<std::size_t> hidden{64};
    Enrichment enrichment = Enrichment::automatic;

    bool enrichment_enabled() const noexcept
    {
        return enrichment == Enrichment::on || (enrichment == Enrichment::automatic && dim == 1);
    }
};

/// softplus^{-1}(1): enrichment bumps start with unit width.
inline const double kRawBInit = std::log(std::expm1(1.0));

struct FlowModel
{
    std::size_t dim = 1;
    Standardizer standardizer;
    std::vector<FlowBlock> blocks;
};

/// Identity-initialized flow (zero output heads, a = 0) with a unit
/// standardizer; every second block is reversed.
inline FlowModel make_flow(const FlowShape& shape, statkit::Engine& gen)
{
    if (shape.dim == 0 || shape.blocks == 0)
        throw std::invalid_argument("make_flow: dimension and block count must be positive");
    FlowModel m;
    m.dim = shape.dim;
    m.standardizer.mean.assign(shape.dim, 0.0);
    m.standardizer.stddev.assign(shape.dim, 1.0);
    for (std::size_t b = 0; b < shape.blocks; ++b) {
        FlowBlock blk;
        blk.net = MadeNetwork(shape.dim, shape.hidden);
        blk.net.init(gen);
        blk.reversed = (b % 2) == 1;
        blk.enrich = shape.enrichment_enabled();
        if (blk.enrich) {
            blk.raw_a.assign(shape.dim, 0.0);
            blk.raw_b.assign(shape.dim, kRawBInit);
        }
        m.blocks.push_back(std::move(blk));
    }
    return m;
}

/// Visits trainable parameter arrays in declaration order: per block, each
/// layer's weight then bias, then raw_a and raw_b when enrichment is on.
template <typename Model, typename Fn>
void visit_params(Model& m, Fn&& fn)
{
    for (auto& blk : m.blocks) {
        for (auto& L : blk.net.layers()) {
            fn(std::span(L.weight));
            fn(std::span(L.bias));
        }
        if (blk.enrich) {
            fn(std::span(blk.raw_a));
            fn(std::span(blk.raw_b));
        }
    }
}

inline std::size_t param_count(const FlowModel& m)
{
    std::size_t n = 0;
    visit_params(m, [&](auto s) { n += s.size(); });
    return n;
}

inline std::vector<double> get_params(const FlowModel& m)
{
    std::vector<double> out;
    out.reserve(param_count(m));
    visit_params(m, [&](auto s) { out.insert(out.end(), s.begin(), s.end()); });
    return out;
}

inline void set_params(FlowModel& m, std::span<const double> theta)
{
    if (theta.size() != param_count(m))
        throw std::logic_error("set_params: parameter count mismatch");
    std::size_t k = 0;
    visit_params(m, [&](auto s) {
        std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(k), s.size(), s.begin());
        k += s.size();
    });
}

inline FlowModel zeros_like(const FlowModel& m)
{
    FlowModel g = m;
    visit_params(g, [](auto s) { std::fill(s.begin(), s.end(), 0.0); });
    return g;
}

struct EnrichParams
{
    double a;
    double b;
};

inline EnrichParams enrich_params(double raw_a, double raw_b) noexcept
{
    const double b = softplus(raw_b);
    return {std::tanh(raw_a) / b, b};
}

/// g(u) = u + a tanh(b u) and log g'(u).
inline std::pair<double, double> enrich_apply(const EnrichParams& p, double u) noexcept
{
    const double th = std::tanh(p.b * u);
    const double sech2 = 1.0 - th * th;
    return {u + p.a * th, std::log1p(p.a * p.b * sech2)};
}

/// Solves g(u) = o for the strictly increasing g; the root lies in
/// [o - |a|, o + |a|]. Safeguarded Newton to 1e-12.
inline double enrich_invert(const EnrichParams& p, double o)
{
    double lo = o - std::abs(p.a) - 1e-12;
    double hi = o + std::abs(p.a) + 1e-12;
    double u = o;
    for (int it = 0; it < 200; ++it) {
        const double th = std::tanh(p.b * u);
        const double f = u + p.a * th - o;
        if (f == 0.0)
            return u;
        if (f > 0.0)
            hi = u;
        else
            lo = u;
        const double fp = 1.0 + p.a * p.b * (1.0 - th * th);
        double next = u - f / fp;
        if (!(next > lo && next < hi))
            next = 0.5 * (lo + hi);
        if (std::abs(next - u) <= 1e-12 * std::max(1.0, std::abs(u)) || hi - lo <= 1e-12 * std::max(1.0, std::abs(u)))
            return next;
        u = next;
    }
    throw std::runtime_error("enrich_invert: internal error, root finder did not converge");
}

/// Per-block intermediate values kept for the backward pass.
struct BlockCache
{
    MadeCache made;
    std::vector<double> x;  // block input in block order
    std::vector<double> u;  // affine output in block order
    std::vector<double> s;  // unclamped log-scale
    std::vector<double> sc; // clamped log-scale
};

struct FlowWorkspace
{
    std::vector<BlockCache> blocks;
    std::vector<double> y0;   // standardized input
    std::vector<double> z;    // final latent
    std::vector<double> g;    // running gradient, natural order
    std::vector<double> gx;   // scratch
    std::vector<double> gout; // scratch for MADE head gradient
    std::vector<double> gnet; // scratch for MADE input gradient
    std::vector<std::vector<double>> g_act;
};

inline FlowWorkspace make_workspace(const FlowModel& m)
{
    FlowWorkspace ws;
    for (const auto& blk : m.blocks) {
        BlockCache c;
        c.made = blk.net.make_cache();
        c.x.assign(m.dim, 0.0);
        c.u.assign(m.dim, 0.0);
        c.s.assign(m.dim, 0.0);
        c.sc.assign(m.dim, 0.0);
        ws.blocks.push_back(std::move(c));
    }
    ws.y0.assign(m.dim, 0.0);
    ws.z.assign(m.dim, 0.0);
    ws.g.assign(m.dim, 0.0);
    ws.gx.assign(m.dim, 0.0);
    ws.gout.assign(2 * m.dim, 0.0);
    ws.gnet.assign(m.dim, 0.0);
    return ws;
}

/// Forward pass through every block; returns log|det dz/dy| including the
/// standardizer's -sum log sigma. Latent ends up in ws.z.
inline double forward_cached(const FlowModel& m, std::span<const double> y, FlowWorkspace& ws)
{
    const std::size_t d = m.dim;
    for (std::size_t t = 0; t < d; ++t)
        ws.y0[t] = (y[t] - m.standardizer.mean[t]) / m.standardizer.stddev[t];
    double logdet = -m.standardizer.log_scale_sum();
    std::span<const double> cur = ws.y0;
    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
        const auto& blk = m.blocks[b];
        auto& c = ws.blocks[b];
        for (std::size_t t = 0; t < d; ++t)
            c.x[t] = blk.reversed ? cur[d - 1 - t] : cur[t];
        blk.net.forward(c.x, c.made);
        for (std::size_t t = 0; t < d; ++t) {
            const double mu = c.made.out[t];
            c.s[t] = c.made.out[d + t];
            c.sc[t] = std::clamp(c.s[t], -kLogScaleClamp, kLogScaleClamp);
            c.u[t] = (c.x[t] - mu) * std::exp(-c.sc[t]);
            logdet -= c.sc[t];
        }
        // Output goes back to natural order; the next block copies it into
        // its own x before ws.z is overwritten.
        for (std::size_t t = 0; t < d; ++t) {
            double o = c.u[t];
            if (blk.enrich) {
                const auto [val, lg] = enrich_apply(enrich_params(blk.raw_a[t], blk.raw_b[t]), c.u[t]);
                o = val;
                logdet += lg;
            }
            ws.z[blk.reversed ? d - 1 - t : t] = o;
        }
        cur = ws.z;
    }
    return logdet;
}

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

inline double base_log_density(std::span<const double> z) noexcept
{
    double acc = 0.0;
    for (double v : z)
        acc -= 0.5 * v * v + kHalfLog2Pi;
    return acc;
}

struct ForwardResult
{
    std::vector<double> z;
    double logdet = 0.0;
};

inline ForwardResult flow_forward(const FlowModel& m, std::span<const double> y)
{
    if (y.size() != m.dim)
        throw std::invalid_argument("flow_forward: input dimension mismatch");
    auto ws = make_workspace(m);
    ForwardResult r;
    r.logdet = forward_cached(m, y, ws);
    r.z = ws.z;
    return r;
}

/// Exact log-density of the model at y.
inline double log_density(const FlowModel& m, std::span<const double> y, FlowWorkspace& ws)
{
    const double logdet = forward_cached(m, y, ws);
    return base_log_density(ws.z) + logdet;
}

inline double log_density(const FlowModel& m, std::span<const double> y)
{
    if (y.size() != m.dim)
        throw std::invalid_argument("log_density: input dimension mismatch");
    auto ws = make_workspace(m);
    return log_density(m, y, ws);
}

/// Sequential inverse: blocks in reverse, each solved dimension by
/// dimension, then de-standardized.
inline std::vector<double> flow_inverse(const FlowModel& m, std::span<const double> z)
{
    const std::size_t d = m.dim;
    if (z.size() != d)
        throw std::invalid_argument("flow_inverse: input dimension mismatch");
    std::vector<double> cur(z.begin(), z.end());
    std::vector<double> o(d), u(d), x(d);
    for (std::size_t b = m.blocks.size(); b-- > 0;) {
        const auto& blk = m.blocks[b];
        for (std::size_t t = 0; t < d; ++t)
            o[t] = blk.reversed ? cur[d - 1 - t] : cur[t];
        for (std::size_t t = 0; t < d; ++t)
            u[t] = blk.enrich ? enrich_invert(enrich_params(blk.raw_a[t], blk.raw_b[t]), o[t]) : o[t];
        auto cache = blk.net.make_cache();
        std::fill(x.begin(), x.end(), 0.0);
        for (std::size_t t = 0; t < d; ++t) {
            blk.net.forward(x, cache);
            const double mu = cache.out[t];
            const double sc = std::clamp(cache.out[d + t], -kLogScaleClamp, kLogScaleClamp);
            x[t] = mu + u[t] * std::exp(sc);
        }
        for (std::size_t t = 0; t < d; ++t)
            cur[blk.reversed ? d - 1 - t : t] = x[t];
    }
    for (std::size_t t = 0; t < d; ++t)
        cur[t] = cur[t] * m.standardizer.stddev[t] + m.standardizer.mean[t];
    return cur;
}

/// Adds d(-log p(y))/d(theta) for one sample into `grad`; returns -log p(y).
inline double accumulate_sample_grad(const FlowModel& m, std::span<const double> y, FlowModel& grad,
                                     FlowWorkspace& ws)
{
    const std::size_t d = m.dim;
    const double logdet = forward_cached(m, y, ws);
    const double loss = -(base_log_density(ws.z) + logdet);
    // d loss / d z_final = z
    for (std::size_t t = 0; t < d; ++t)
        ws.g[t] = ws.z[t];
    for (std::size_t b = m.blocks.size(); b-- > 0;) {
        const auto& blk = m.blocks[b];
        auto& gblk = grad.blocks[b];
        auto& c = ws.blocks[b];
        std::fill(ws.gout.begin(), ws.gout.end(), 0.0);
        for (std::size_t t = 0; t < d; ++t) {
            const double go = ws.g[blk.reversed ? d - 1 - t : t];
            double gu = go;
            if (blk.enrich) {
                const double ra = blk.raw_a[t];
                const double rb = blk.raw_b[t];
                const auto p = enrich_params(ra, rb);
                const double u = c.u[t];
                const double th = std::tanh(p.b * u);
                const double sech2 = 1.0 - th * th;
                const double gp = 1.0 + p.a * p.b * sech2;
                // loss carries -log g'(u)
                const double dlog_du = -2.0 * p.a * p.b * p.b * sech2 * th / gp;
                gu = go * gp - dlog_du;
                const double ga = go * th - p.b * sech2 / gp;
                const double gb = go * p.a * u * sech2 - p.a * sech2 * (1.0 - 2.0 * p.b * u * th) / gp;
                const double tra = std::tanh(ra);
                const double sig = sigmoid(rb);
                gblk.raw_a[t] += ga * (1.0 - tra * tra) / p.b;
                gblk.raw_b[t] += gb * sig - ga * tra / (p.b * p.b) * sig;
            }
            const double e = std::exp(-c.sc[t]);
            ws.gx[t] = gu * e;
            ws.gout[t] = -gu * e;
            const double gsc = -gu * c.u[t] + 1.0;
            ws.gout[d + t] = (c.s[t] > -kLogScaleClamp && c.s[t] < kLogScaleClamp) ? gsc : 0.0;
        }
        blk.net.backward(c.made, ws.gout, gblk.net, ws.gnet, ws.g_act);
        for (std::size_t t = 0; t < d; ++t)
            ws.g[blk.reversed ? d - 1 - t : t] = ws.gx[t] + ws.gnet[t];
    }
    return loss;
}

/// Average negative log-likelihood over the rows of `data`.
inline double nll(const FlowModel& m, const Dataset& data)
{
    if (data.size() == 0)
        throw std::invalid_argument("nll: empty batch");
    if (data.dim != m.dim)
        throw std::invalid_argument("nll: dimension mismatch");
    auto ws = make_workspace(m);
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        acc -= log_density(m, data.row(i), ws);
    return acc / static_cast<double>(data.size());
}

/// Exact gradient of nll() with respect to get_params() order.
inline std::vector<double> grad_nll(const FlowModel& m, const Dataset& data)
{
    if (data.size() == 0)
        throw std::invalid_argument("grad_nll: empty batch");
    if (data.dim != m.dim)
        throw std::invalid_argument("grad_nll: dimension mismatch");
    auto grad = zeros_like(m);
    auto ws = make_workspace(m);
    for (std::size_t i = 0; i < data.size(); ++i)
        accumulate_sample_grad(m, data.row(i), grad, ws);
    auto g = get_params(grad);
    const double inv = 1.0 / static_cast<double>(data.size());
    for (auto& v : g)
        v *= inv;
    return g;
}

// ---------- TRAINING ----------

struct TrainConfig
{
    double learning_rate = 2e-4;
    int epochs = 200;
    std::size_t batch_size = 256;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 5.0;
    double holdout_fraction = 0.1;
    std::uint64_t seed = 0;
    FlowShape shape{};
};

inline void validate(const TrainConfig& c)
{
    if (!(c.learning_rate > 0.0))
        throw std::invalid_argument("train config: learning rate must be positive");
    if (c.epochs < 1)
        throw std::invalid_argument("train config: epochs must be at least 1");
    if (c.batch_size < 1)
        throw std::invalid_argument("train config: batch size must be at least 1");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0) || !(c.epsilon > 0.0))
        throw std::invalid_argument("train config: invalid Adam moments");
    if (!(c.holdout_fraction >= 0.0 && c.holdout_fraction < 1.0))
        throw std::invalid_argument("train config: holdout fraction must lie in [0, 1)");
}

struct AdamState
{
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
};

/// Bias-corrected Adam update in place.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st, const TrainConfig& cfg)
{
    if (grads.size() != params.size())
        throw std::logic_error("adam_step: internal error, gradient shape mismatch");
    if (st.m.empty() && st.v.empty()) {
        st.m.assign(params.size(), 0.0);
        st.v.assign(params.size(), 0.0);
    }
    if (st.m.size() != params.size() || st.v.size() != params.size())
        throw std::logic_error("adam_step: internal error, state shape mismatch");
    ++st.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grads[i];
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}

/// Unbiased bounded integer in [0, n) (Lemire).
inline std::uint64_t bounded(statkit::Engine& gen, std::uint64_t n)
{
    std::uint64_t x = gen();
    __uint128_t mprod = static_cast<__uint128_t>(x) * n;
    std::uint64_t l = static_cast<std::uint64_t>(mprod);
    if (l < n) {
        const std::uint64_t t = (0 - n) % n;
        while (l < t) {
            x = gen();
            mprod = static_cast<__uint128_t>(x) * n;
            l = static_cast<std::uint64_t>(mprod);
        }
    }
    return static_cast<std::uint64_t>(mprod >> 64);
}

template <typename T>
void shuffle(std::vector<T>& v, statkit::Engine& gen)
{
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[bounded(gen, i)]);
}

struct TrainReport
{
    double best_holdout_nll = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    std::vector<double> holdout_curve;
};

/// Maximum-likelihood fit with Adam. The standardizer is fit on all of
/// `data`; 10% (holdout_fraction) is held out and the parameters with the
/// best held-out NLL across epochs are returned.
inline FlowModel train(const Dataset& data, const TrainConfig& cfg, TrainReport* report = nullptr)
{
    validate(cfg);
    if (data.size() < cfg.batch_size)
        throw std::invalid_argument("train: fewer samples than one batch");
    FlowShape shape = cfg.shape;
    shape.dim = data.dim;
    const statkit::SeedStream seeds(cfg.seed);
    auto init_gen = seeds.engine("flow-init");
    FlowModel model = make_flow(shape, init_gen);
    model.standardizer = standardizer_fit(data);

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    auto split_gen = seeds.engine("flow-split");
    shuffle(order, split_gen);
    std::size_t n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(data.size())));
    if (data.size() - n_hold < cfg.batch_size)
        n_hold = data.size() - cfg.batch_size;
    std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_hold));
    Dataset hold;
    hold.dim = data.dim;
    for (std::size_t k = data.size() - n_hold; k < data.size(); ++k) {
        const auto r = data.row(order[k]);
        hold.values.insert(hold.values.end(), r.begin(), r.end());
    }
    const Dataset& monitor = n_hold > 0 ? hold : data;

    auto theta = get_params(model);
    auto best = theta;
    double best_nll = std::numeric_limits<double>::infinity();
    AdamState adam;
    FlowModel grad = zeros_like(model);
    auto ws = make_workspace(model);
    std::vector<double> g;
    TrainReport local;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto epoch_gen = seeds.engine("flow-epoch", static_cast<std::uint64_t>(epoch));
        shuffle(train_idx, epoch_gen);
        for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(train_idx.size(), start + cfg.batch_size);
            visit_params(grad, [](auto s) { std::fill(s.begin(), s.end(), 0.0); });
            for (std::size_t k = start; k < end; ++k)
                accumulate_sample_grad(model, data.row(train_idx[k]), grad, ws);
            g = get_params(grad);
            const double inv = 1.0 / static_cast<double>(end - start);
            double norm2 = 0.0;
            for (auto& v : g) {
                v *= inv;
                norm2 += v * v;
            }
            if (!std::isfinite(norm2))
                continue;
            const double norm = std::sqrt(norm2);
            if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm)
                for (auto& v : g)
                    v *= cfg.clip_norm / norm;
            adam_step(theta, g, adam, cfg);
            set_params(model, theta);
        }
        const double h = nll(model, monitor);
        local.holdout_curve.push_back(h);
        if (std::isfinite(h) && h < best_nll) {
            best_nll = h;
            best = theta;
            local.best_epoch = epoch;
        }
    }
    set_params(model, best);
    local.best_holdout_nll = best_nll;
    if (report)
        *report = std::move(local);
    return model;
}

// ---------- SERIALIZATION ----------

inline constexpr char kModelMagic[8] = {'D', 'R', 'I', 'S', 'M', 'A', 'F', '\0'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::ostream& os, double d)
{
    std::uint64_t v;
    std::memcpy(&v, &d, sizeof v);
    for (int i = 0; i < 8; ++i)
        os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_bytes(std::istream& is, int n)
{
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
        const int c = is.get();
        if (c == std::char_traits<char>::eof())
            throw std::runtime_error("flow model: truncated stream");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

inline std::uint32_t get_u32(std::istream& is)
{
    return static_cast<std::uint32_t>(get_bytes(is, 4));
}

inline double get_f64(std::istream& is)
{
    const std::uint64_t v = get_bytes(is, 8);
    double d;
    std::memcpy(&d, &v, sizeof d);
    return d;
}

} // namespace detail

/// Layout: magic[8], u32 version, u32 dim, u32 blocks, u32 n_hidden,
/// u32 widths[n_hidden], per block u32 flags (bit0 reversed, bit1 enrich),
/// f64 mean[dim], f64 stddev[dim], then every parameter in get_params()
/// order. All integers and floats little-endian.
inline void save(const FlowModel& m, std::ostream& os)
{
    os.write(kModelMagic, sizeof kModelMagic);
    detail::put_u32(os, kModelVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(m.dim));
    detail::put_u32(os, static_cast<std::uint32_t>(m.blocks.size()));
    const auto& hidden = m.blocks.empty() ? std::vector<std::size_t>{} : m.blocks.front().net.hidden();
    detail::put_u32(os, static_cast<std::uint32_t>(hidden.size()));
    for (auto h : hidden)
        detail::put_u32(os, static_cast<std::uint32_t>(h));
    for (const auto& blk : m.blocks)
        detail::put_u32(os, (blk.reversed ? 1u : 0u) | (blk.enrich ? 2u : 0u));
    for (double v : m.standardizer.mean)
        detail::put_f64(os, v);
    for (double v : m.standardizer.stddev)
        detail::put_f64(os, v);
    for (double v : get_params(m))
        detail::put_f64(os, v);
    if (!os)
        throw std::runtime_error("flow model: write failed");
}

inline FlowModel load(std::istream& is)
{
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kModelMagic, sizeof magic) != 0)
        throw std::runtime_error("flow model: bad magic bytes");
    if (detail::get_u32(is) != kModelVersion)
        throw std::runtime_error("flow model: unsupported version");
    const std::size_t dim = detail::get_u32(is);
    const std::size_t n_blocks = detail::get_u32(is);
    const std::size_t n_hidden = detail::get_u32(is);
    if (dim == 0 || n_blocks == 0 || dim > 4096 || n_blocks > 4096 || n_hidden > 64)
        throw std::runtime_error("flow model: implausible header");
    std::vector<std::size_t> hidden(n_hidden);
    for (auto& h : hidden) {
        h = detail::get_u32(is);
        if (h == 0 || h > (1u << 20))
            throw std::runtime_error("flow model: implausible hidden width");
    }
    FlowModel m;
    m.dim = dim;
    for (std::size_t b = 0; b < n_blocks; ++b) {
        const std::uint32_t flags = detail::get_u32(is);
        FlowBlock blk;
        blk.net = MadeNetwork(dim, hidden);
        blk.reversed = (flags & 1u) != 0;
        blk.enrich = (flags & 2u) != 0;
        if (blk.enrich) {
            blk.raw_a.assign(dim, 0.0);
            blk.raw_b.assign(dim, 0.0);
        }
        m.blocks.push_back(std::move(blk));
    }
    m.standardizer.mean.resize(dim);
    m.standardizer.stddev.resize(dim);
    for (auto& v : m.standardizer.mean)
        v = detail::get_f64(is);
    for (auto& v : m.standardizer.stddev)
        v = detail::get_f64(is);
    std::vector<double> theta(param_count(m));
    for (auto& v : theta)
        v = detail::get_f64(is);
    set_params(m, theta);
    return m;
}

} // namespace driscov::flow

#endif // DRISCOV_FLOW_HPP
