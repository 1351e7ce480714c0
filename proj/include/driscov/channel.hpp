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

#ifndef DRISCOV_CHANNEL_HPP
#define DRISCOV_CHANNEL_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "parallel.hpp"
#include "statkit.hpp"

namespace driscov {

// ---------- GEOMETRY ----------

struct Vec3
{
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    bool operator==(const Vec3&) const = default;
};

inline double distance(const Vec3& a, const Vec3& b) noexcept
{
    return std::hypot(a.x - b.x, a.y - b.y, a.z - b.z);
}

struct Annulus
{
    Vec3 center{0.0, 140.0, 0.0};
    double inner = 10.0; // m
    double outer = 20.0; // m
};

/// Default carrier: 3.5 GHz.
inline constexpr double kDefaultWavelength = 299792458.0 / 3.5e9;

/// Node positions in meters. The surface is a planar n_horizontal x n_vertical
/// array in the y-z plane centered at dris_center; horizontal runs along y.
/// A 0 x 0 grid means no surface is deployed.
struct Geometry
{
    Vec3 alice{0.0, 0.0, 5.0};
    Vec3 willie{0.0, 100.0, 0.0};
    Vec3 dris_center{-1.5, 0.0, 5.0};
    Annulus bob{};
    int n_horizontal = 64;
    int n_vertical = 32;
    double wavelength = kDefaultWavelength;
    double element_spacing = 0.5 * kDefaultWavelength;

    std::size_t n_elements() const noexcept
    {
        return static_cast<std::size_t>(n_horizontal) * static_cast<std::size_t>(n_vertical);
    }
    bool has_dris() const noexcept { return n_elements() > 0; }
};

inline void validate(const Geometry& g)
{
    if (g.n_horizontal < 0 || g.n_vertical < 0)
        throw std::invalid_argument("geometry: negative element count");
    if ((g.n_horizontal == 0) != (g.n_vertical == 0))
        throw std::invalid_argument("geometry: element grid must be 0 x 0 or have both sides positive");
    if (!(g.bob.inner >= 0.0) || !(g.bob.outer >= g.bob.inner))
        throw std::invalid_argument("geometry: annulus radii must satisfy 0 <= inner <= outer");
    if (!(g.wavelength > 0.0) || !(g.element_spacing > 0.0))
        throw std::invalid_argument("geometry: wavelength and element spacing must be positive");
    if (distance(g.alice, g.willie) <= 0.0 || (g.has_dris() && distance(g.alice, g.dris_center) <= 0.0)
        || (g.has_dris() && distance(g.dris_center, g.willie) <= 0.0))
        throw std::invalid_argument("geometry: coincident nodes");
}

inline Vec3 element_position(const Geometry& g, int ih, int iv) noexcept
{
    const double oy = (ih - 0.5 * (g.n_horizontal - 1)) * g.element_spacing;
    const double oz = (iv - 0.5 * (g.n_vertical - 1)) * g.element_spacing;
    return {g.dris_center.x, g.dris_center.y + oy, g.dris_center.z + oz};
}

/// Uniform over the annulus area; the sample shares the center's height.
inline Vec3 sample_bob_position(statkit::Engine& gen, const Annulus& a)
{
    const double u = statkit::uniform01(gen);
    const double r = std::sqrt(u * (a.outer * a.outer - a.inner * a.inner) + a.inner * a.inner);
    const double theta = 2.0 * std::numbers::pi * statkit::uniform01(gen);
    return {a.center.x + r * std::cos(theta), a.center.y + r * std::sin(theta), a.center.z};
}

// ---------- LARGE-SCALE FADING ----------

/// Log-distance path loss PL(d) = intercept + slope * log10(d) in dB.
struct PathLossModel
{
    enum class Kind { los, nlos };

    Kind kind = Kind::los;
    double intercept_db = 35.6;
    double slope_db = 22.0;

    static PathLossModel los() noexcept { return {Kind::los, 35.6, 22.0}; }
    static PathLossModel nlos() noexcept { return {Kind::nlos, 32.6, 36.7}; }
};

inline double path_loss_db(const PathLossModel& m, double d)
{
    if (!(d > 0.0))
        throw std::invalid_argument("path_loss: distance must be positive");
    return m.intercept_db + m.slope_db * std::log10(d);
}

inline double path_loss_linear(const PathLossModel& m, double d)
{
    return std::pow(10.0, path_loss_db(m, d) / 10.0);
}

inline double dbm_to_watts(double dbm) noexcept
{
    return std::pow(10.0, (dbm - 30.0) / 10.0);
}

inline double watts_to_dbm(double w) noexcept
{
    return 10.0 * std::log10(w) + 30.0;
}

inline double to_db(double linear) noexcept
{
    return 10.0 * std::log10(linear);
}

/// Thermal noise power -170 dBm/Hz + 10 log10(BW).
inline double noise_power_watts(double bandwidth_hz, double density_dbm_hz = -170.0)
{
    return dbm_to_watts(density_dbm_hz + 10.0 * std::log10(bandwidth_hz));
}

struct LinkFading
{
    PathLossModel alice_dris = PathLossModel::los();
    PathLossModel dris_willie = PathLossModel::los();
    PathLossModel dris_bob = PathLossModel::los();
    PathLossModel alice_willie = PathLossModel::nlos();
    PathLossModel alice_bob = PathLossModel::nlos();
    double kappa_g = 4.0; // linear Rician factor of the Alice-surface link
    double noise_willie = noise_power_watts(180e3);
    double noise_bob = noise_power_watts(180e3);
};

/// Linear attenuations (>= 1 for distances >= 1 m under the default models).
struct LargeScale
{
    double g = 1.0;
    double i_w = 1.0;
    double i_b = 1.0;
    double d_w = 1.0;
    double d_b = 1.0;
};

inline LargeScale large_scale(const Geometry& geo, const LinkFading& f, const Vec3& bob)
{
    LargeScale L;
    L.d_w = path_loss_linear(f.alice_willie, distance(geo.alice, geo.willie));
    L.d_b = path_loss_linear(f.alice_bob, distance(geo.alice, bob));
    if (geo.has_dris()) {
        L.g = path_loss_linear(f.alice_dris, distance(geo.alice, geo.dris_center));
        L.i_w = path_loss_linear(f.dris_willie, distance(geo.dris_center, geo.willie));
        L.i_b = path_loss_linear(f.dris_bob, distance(geo.dris_center, bob));
    }
    return L;
}

// ---------- SURFACE PROFILE ----------

/// Discrete reflection states: phase_i is drawn with probability p_i and
/// carries amplitude amplitude_i = F(phase_i).
struct DrisProfile
{
    std::vector<double> phases;
    std::vector<double> amplitudes;
    std::vector<double> probabilities;
    int bits = 0;

    std::size_t size() const noexcept { return phases.size(); }
    Complex coefficient(std::size_t i) const { return std::polar(amplitudes[i], phases[i]); }
};

/// 1-bit profile {pi/9 -> 0.8, 7pi/6 -> 1.0}, equiprobable.
inline DrisProfile reference_profile()
{
    return {{std::numbers::pi / 9.0, 7.0 * std::numbers::pi / 6.0}, {0.8, 1.0}, {0.5, 0.5}, 1};
}

inline void validate(const DrisProfile& p)
{
    const std::size_t n = p.phases.size();
    if (n == 0 || p.amplitudes.size() != n || p.probabilities.size() != n)
        throw std::invalid_argument("dris profile: phases, amplitudes and probabilities must be non-empty and equally long");
    if (p.bits < 0 || p.bits > 16 || (std::size_t{1} << p.bits) != n)
        throw std::invalid_argument("dris profile: number of states must equal 2^bits");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(p.amplitudes[i] >= 0.0 && p.amplitudes[i] <= 1.0))
            throw std::invalid_argument("dris profile: amplitudes must lie in [0, 1]");
        if (!(p.probabilities[i] >= 0.0))
            throw std::invalid_argument("dris profile: negative probability");
        if (!std::isfinite(p.phases[i]))
            throw std::invalid_argument("dris profile: non-finite phase");
        total += p.probabilities[i];
    }
    if (std::abs(total - 1.0) > 1e-12)
        throw std::invalid_argument("dris profile: probabilities must sum to 1");
}

/// Draws per-element reflection states. Equiprobable profiles take b random
/// bits per element; anything else inverts the cumulative distribution.
class DrisSampler
{
public:
    explicit DrisSampler(DrisProfile profile) : profile_(std::move(profile))
    {
        validate(profile_);
        const std::size_t n = profile_.size();
        equiprobable_ = true;
        for (double p : profile_.probabilities)
            equiprobable_ = equiprobable_ && p == 1.0 / static_cast<double>(n);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += profile_.probabilities[i];
            cumulative_.push_back(acc);
            values_.push_back(profile_.coefficient(i));
        }
        cumulative_.back() = 1.0;
    }

    const DrisProfile& profile() const noexcept { return profile_; }
    std::size_t n_states() const noexcept { return values_.size(); }
    const std::vector<Complex>& state_values() const noexcept { return values_; }

    /// Fills `states` with one state index per element.
    void draw_states(statkit::Engine& gen, std::span<std::uint8_t> states) const
    {
        const int b = profile_.bits;
        if (b == 0) {
            std::fill(states.begin(), states.end(), std::uint8_t{0});
            return;
        }
        if (equiprobable_ && b <= 8) {
            const int per_word = 64 / b;
            const std::uint64_t mask = (std::uint64_t{1} << b) - 1;
            std::size_t r = 0;
            while (r < states.size()) {
                std::uint64_t w = gen();
                for (int k = 0; k < per_word && r < states.size(); ++k, ++r) {
                    states[r] = static_cast<std::uint8_t>(w & mask);
                    w >>= b;
                }
            }
            return;
        }
        for (auto& s : states) {
            const double u = statkit::uniform01(gen);
            std::size_t k = 0;
            while (k + 1 < cumulative_.size() && u >= cumulative_[k])
                ++k;
            s = static_cast<std::uint8_t>(k);
        }
    }

    /// One independent coefficient vector of length n.
    std::vector<Complex> sample(statkit::Engine& gen, std::size_t n) const
    {
        std::vector<std::uint8_t> states(n);
        draw_states(gen, states);
        std::vector<Complex> out(n);
        for (std::size_t r = 0; r < n; ++r)
            out[r] = values_[states[r]];
        return out;
    }

    /// sum_r weights[r] * coeff_r for a fresh coefficient draw, accumulated
    /// per state so the inner loop has no complex multiplies.
    Complex sample_weighted_sum(statkit::Engine& gen, std::span<const Complex> weights,
                                std::vector<std::uint8_t>& states_scratch) const
    {
        states_scratch.resize(weights.size());
        draw_states(gen, states_scratch);
        Complex per_state[256];
        const std::size_t k = values_.size();
        for (std::size_t i = 0; i < k; ++i)
            per_state[i] = 0.0;
        for (std::size_t r = 0; r < weights.size(); ++r)
            per_state[states_scratch[r]] += weights[r];
        Complex acc = 0.0;
        for (std::size_t i = 0; i < k; ++i)
            acc += values_[i] * per_state[i];
        return acc;
    }

private:
    DrisProfile profile_;
    bool equiprobable_ = false;
    std::vector<double> cumulative_;
    std::vector<Complex> values_;
};

inline std::vector<Complex> sample_dris_coeffs(statkit::Engine& gen, const DrisProfile& profile, std::size_t n)
{
    return DrisSampler(profile).sample(gen, n);
}

// ---------- SMALL-SCALE FADING ----------

/// Near-field LOS phases exp(-j 2pi/lambda (d_r - d_0)) of the Alice-surface link.
inline std::vector<Complex> los_steering(const Geometry& g)
{
    std::vector<Complex> out;
    out.reserve(g.n_elements());
    const double d0 = distance(g.alice, g.dris_center);
    const double k = 2.0 * std::numbers::pi / g.wavelength;
    for (int ih = 0; ih < g.n_horizontal; ++ih)
        for (int iv = 0; iv < g.n_vertical; ++iv) {
            const double dr = distance(g.alice, element_position(g, ih, iv));
            out.push_back(std::polar(1.0, -k * (dr - d0)));
        }
    return out;
}

/// Rician Alice-surface vector: sqrt(k/(1+k)) LOS + sqrt(1/(1+k)) CN(0, I).
/// An infinite factor returns the LOS vector itself.
inline std::vector<Complex> sample_rician_g(statkit::Engine& gen, std::span<const Complex> los, double kappa)
{
    if (!(kappa >= 0.0))
        throw std::invalid_argument("sample_rician_g: Rician factor must be non-negative");
    std::vector<Complex> g(los.begin(), los.end());
    if (std::isinf(kappa))
        return g;
    const double a = std::sqrt(kappa / (1.0 + kappa));
    const double b = std::sqrt(1.0 / (1.0 + kappa));
    for (auto& v : g)
        v = a * v + b * statkit::sample_cn01(gen);
    return g;
}

inline std::vector<Complex> sample_cn_vector(statkit::Engine& gen, std::size_t n)
{
    std::vector<Complex> v(n);
    for (auto& x : v)
        x = statkit::sample_cn01(gen);
    return v;
}

/// Small-scale coefficients of one coherence interval plus the large-scale
/// attenuations they are scaled by.
struct ChannelRealization
{
    Complex h_d_w;  // includes 1/sqrt(L_d_w)
    Complex h_d_b;  // includes 1/sqrt(L_d_b)
    std::vector<Complex> g_hat;
    std::vector<Complex> h_I_w;
    std::vector<Complex> h_I_b;
    LargeScale L;
};

enum class Target { willie, bob };

/// g diag(coeffs) h_I / sqrt(L_g L_I) toward the chosen receiver.
inline Complex cascaded_h(const ChannelRealization& rz, std::span<const Complex> coeffs, Target target)
{
    const auto& h = target == Target::willie ? rz.h_I_w : rz.h_I_b;
    const double li = target == Target::willie ? rz.L.i_w : rz.L.i_b;
    if (rz.g_hat.size() != coeffs.size() || h.size() != coeffs.size())
        throw std::invalid_argument("cascaded_h: vector length mismatch");
    Complex acc = 0.0;
    for (std::size_t r = 0; r < coeffs.size(); ++r)
        acc += rz.g_hat[r] * coeffs[r] * h[r];
    return acc / std::sqrt(rz.L.g * li);
}

// ---------- SCENARIO ----------

enum class Hypothesis : std::uint8_t { h0 = 0, h1 = 1 };

/// Everything the signal generators need for one operating point.
struct ChannelScenario
{
    Geometry geometry{};
    LinkFading fading{};
    DrisProfile profile = reference_profile();
    double p0_watts = dbm_to_watts(5.0);
    Vec3 bob_position{0.0, 140.0, 0.0};
    int coherence_symbols = 20; // M
};

/// Scenario with the deterministic parts (LOS steering, path losses,
/// surface sampler) evaluated once.
class ChannelModel
{
public:
    explicit ChannelModel(ChannelScenario sc)
        : sc_(std::move(sc)), sampler_(sc_.profile)
    {
        validate(sc_.geometry);
        if (!(sc_.p0_watts >= 0.0))
            throw std::invalid_argument("scenario: transmit power must be non-negative");
        if (!(sc_.fading.noise_willie > 0.0) || !(sc_.fading.noise_bob > 0.0))
            throw std::invalid_argument("scenario: noise powers must be positive");
        if (sc_.coherence_symbols < 1)
            throw std::invalid_argument("scenario: coherence interval must hold at least one symbol");
        los_ = los_steering(sc_.geometry);
        L_ = large_scale(sc_.geometry, sc_.fading, sc_.bob_position);
    }

    const ChannelScenario& scenario() const noexcept { return sc_; }
    const LargeScale& large_scale_factors() const noexcept { return L_; }
    const std::vector<Complex>& los() const noexcept { return los_; }
    const DrisSampler& sampler() const noexcept { return sampler_; }
    std::size_t n_elements() const noexcept { return los_.size(); }

    ChannelRealization sample_realization(statkit::Engine& gen) const
    {
        ChannelRealization rz;
        rz.L = L_;
        rz.h_d_w = statkit::sample_cn01(gen) / std::sqrt(L_.d_w);
        rz.h_d_b = statkit::sample_cn01(gen) / std::sqrt(L_.d_b);
        rz.g_hat = sample_rician_g(gen, los_, sc_.fading.kappa_g);
        rz.h_I_w = sample_cn_vector(gen, los_.size());
        rz.h_I_b = sample_cn_vector(gen, los_.size());
        return rz;
    }

    /// Per-element products g_r h_r / sqrt(L_g L_I) for one receiver, drawn
    /// fresh. Equivalent to sample_realization restricted to one target.
    void sample_cascade_weights(statkit::Engine& gen, Target target, std::vector<Complex>& w) const
    {
        const double li = target == Target::willie ? L_.i_w : L_.i_b;
        const double scale = 1.0 / std::sqrt(L_.g * li);
        const double kappa = sc_.fading.kappa_g;
        const bool pure_los = std::isinf(kappa);
        const double a = pure_los ? 1.0 : std::sqrt(kappa / (1.0 + kappa));
        const double b = pure_los ? 0.0 : std::sqrt(1.0 / (1.0 + kappa));
        w.resize(los_.size());
        for (std::size_t r = 0; r < los_.size(); ++r) {
            Complex g = a * los_[r];
            if (!pure_los)
                g += b * statkit::sample_cn01(gen);
            w[r] = g * statkit::sample_cn01(gen) * scale;
        }
    }

private:
    ChannelScenario sc_;
    DrisSampler sampler_;
    std::vector<Complex> los_;
    LargeScale L_;
};

// ---------- SIGNAL STREAMS ----------

/// Radiometer statistics with their hidden hypotheses.
struct ObservationBatch
{
    std::vector<double> statistics;
    std::vector<Hypothesis> hidden_labels;
    std::string provenance;

    std::size_t size() const noexcept { return statistics.size(); }

    void append(const ObservationBatch& other)
    {
        statistics.insert(statistics.end(), other.statistics.begin(), other.statistics.end());
        hidden_labels.insert(hidden_labels.end(), other.hidden_labels.begin(), other.hidden_labels.end());
    }
};

/// Y_w = sum_{n=1..N} |y_w(n)|^2 for one coherence interval. Under H1 the
/// direct channel is fixed for the interval while the surface redraws its
/// coefficients every symbol.
inline double willie_statistic(statkit::Engine& gen, const ChannelModel& model, Hypothesis hyp, int n_samples,
                               std::vector<Complex>& weights, std::vector<std::uint8_t>& scratch)
{
    const double noise = model.scenario().fading.noise_willie;
    double acc = 0.0;
    if (hyp == Hypothesis::h0) {
        for (int n = 0; n < n_samples; ++n)
            acc += std::norm(statkit::sample_cgauss(gen, 0.0, noise));
        return acc;
    }
    const auto& L = model.large_scale_factors();
    const Complex h_d = statkit::sample_cn01(gen) / std::sqrt(L.d_w);
    const bool dris = model.n_elements() > 0;
    if (dris)
        model.sample_cascade_weights(gen, Target::willie, weights);
    const double p0 = model.scenario().p0_watts;
    for (int n = 0; n < n_samples; ++n) {
        const Complex h_D = dris ? model.sampler().sample_weighted_sum(gen, weights, scratch) : Complex{};
        const Complex s = statkit::sample_cgauss(gen, 0.0, p0);
        const Complex y = (h_d + h_D) * s + statkit::sample_cgauss(gen, 0.0, noise);
        acc += std::norm(y);
    }
    return acc;
}

/// Components of every received symbol in one interval; willie_statistic
/// consumes the generator in exactly the same order.
struct SymbolTrace
{
    Complex h_d;
    std::vector<Complex> h_D;
    std::vector<Complex> s;
    std::vector<Complex> noise;

    double statistic() const
    {
        double acc = 0.0;
        for (std::size_t n = 0; n < noise.size(); ++n)
            acc += std::norm(s.empty() ? noise[n] : (h_d + h_D[n]) * s[n] + noise[n]);
        return acc;
    }
};

inline SymbolTrace willie_trace(statkit::Engine& gen, const ChannelModel& model, Hypothesis hyp, int n_samples)
{
    SymbolTrace tr;
    const double noise = model.scenario().fading.noise_willie;
    if (hyp == Hypothesis::h0) {
        for (int n = 0; n < n_samples; ++n)
            tr.noise.push_back(statkit::sample_cgauss(gen, 0.0, noise));
        return tr;
    }
    const auto& L = model.large_scale_factors();
    tr.h_d = statkit::sample_cn01(gen) / std::sqrt(L.d_w);
    const bool dris = model.n_elements() > 0;
    std::vector<Complex> weights;
    std::vector<std::uint8_t> scratch;
    if (dris)
        model.sample_cascade_weights(gen, Target::willie, weights);
    for (int n = 0; n < n_samples; ++n) {
        tr.h_D.push_back(dris ? model.sampler().sample_weighted_sum(gen, weights, scratch) : Complex{});
        tr.s.push_back(statkit::sample_cgauss(gen, 0.0, model.scenario().p0_watts));
        tr.noise.push_back(statkit::sample_cgauss(gen, 0.0, noise));
    }
    return tr;
}

/// n_intervals statistics under one hypothesis. Interval i uses the
/// substream (label, i), so output is independent of `workers`.
inline ObservationBatch gen_willie_statistics(const statkit::SeedStream& seeds, std::string_view label,
                                              const ChannelModel& model, Hypothesis hyp, std::size_t n_intervals,
                                              int n_samples, unsigned workers = 1)
{
    if (n_samples < 1)
        throw std::invalid_argument("gen_willie_statistics: at least one sample per statistic is required");
    ObservationBatch batch;
    batch.statistics.resize(n_intervals);
    batch.hidden_labels.assign(n_intervals, hyp);
    batch.provenance = std::string(label) + "@" + std::to_string(seeds.root());
    parallel_for(n_intervals, workers, [&](std::size_t i) {
        thread_local std::vector<Complex> weights;
        thread_local std::vector<std::uint8_t> scratch;
        auto gen = seeds.engine(label, i);
        batch.statistics[i] = willie_statistic(gen, model, hyp, n_samples, weights, scratch);
    });
    return batch;
}

/// Per-symbol powers at Bob: |h_d^b s|^2 (signal) and |h_D^b(m) s|^2 (jamming).
struct BobSignals
{
    std::vector<double> signal;
    std::vector<double> jamming;
    double noise = 0.0;
};

inline BobSignals gen_bob_signals(const statkit::SeedStream& seeds, std::string_view label,
                                  const ChannelModel& model, std::size_t n_symbols, unsigned workers = 1)
{
    const std::size_t m = static_cast<std::size_t>(model.scenario().coherence_symbols);
    const std::size_t n_intervals = (n_symbols + m - 1) / m;
    BobSignals out;
    out.signal.resize(n_symbols);
    out.jamming.resize(n_symbols);
    out.noise = model.scenario().fading.noise_bob;
    const double p0 = model.scenario().p0_watts;
    const auto& L = model.large_scale_factors();
    const bool dris = model.n_elements() > 0;
    parallel_for(n_intervals, workers, [&](std::size_t k) {
        thread_local std::vector<Complex> weights;
        thread_local std::vector<std::uint8_t> scratch;
        auto gen = seeds.engine(label, k);
        const Complex h_d = statkit::sample_cn01(gen) / std::sqrt(L.d_b);
        if (dris)
            model.sample_cascade_weights(gen, Target::bob, weights);
        const std::size_t end = std::min(n_symbols, (k + 1) * m);
        for (std::size_t i = k * m; i < end; ++i) {
            const Complex h_D = dris ? model.sampler().sample_weighted_sum(gen, weights, scratch) : Complex{};
            const Complex s = statkit::sample_cgauss(gen, 0.0, p0);
            out.signal[i] = std::norm(h_d * s);
            out.jamming[i] = std::norm(h_D * s);
        }
    });
    return out;
}

} // namespace driscov

#endif // DRISCOV_CHANNEL_HPP
