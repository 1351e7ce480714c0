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

#ifndef DRISCOV_STATKIT_HPP
#define DRISCOV_STATKIT_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

namespace driscov {

using Complex = std::complex<double>;

namespace statkit {

/// One step of the SplitMix64 sequence; used for seed derivation and
/// for expanding a 64-bit seed into generator state.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept
{
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept
{
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// xoshiro256** generator. Satisfies UniformRandomBitGenerator so it can
/// drive the <random> distributions as well as the samplers below.
class Xoshiro256
{
public:
    using result_type = std::uint64_t;

    explicit Xoshiro256(std::uint64_t seed = 0) noexcept { reseed(seed); }

    void reseed(std::uint64_t seed) noexcept
    {
        std::uint64_t sm = seed;
        for (auto& w : s_)
            w = splitmix64(sm);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept
    {
        const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = std::rotl(s_[3], 45);
        return result;
    }

    bool operator==(const Xoshiro256&) const = default;

private:
    std::uint64_t s_[4]{};
};

using Engine = Xoshiro256;

/// Root of a tree of independent random streams. A child generator is a
/// pure function of (root, label, index), so Monte-Carlo work split over
/// intervals or threads does not depend on scheduling order.
class SeedStream
{
public:
    explicit SeedStream(std::uint64_t root = 0) noexcept : root_(root) {}

    std::uint64_t root() const noexcept { return root_; }

    std::uint64_t child_seed(std::string_view label, std::uint64_t index = 0) const noexcept
    {
        std::uint64_t st = root_ ^ fnv1a(label);
        std::uint64_t a = splitmix64(st);
        st = a ^ (index * 0xD1B54A32D192ED03ULL);
        splitmix64(st);
        return splitmix64(st);
    }

    Engine engine(std::string_view label, std::uint64_t index = 0) const noexcept
    {
        return Engine(child_seed(label, index));
    }

    SeedStream derive(std::string_view label, std::uint64_t index = 0) const noexcept
    {
        return SeedStream(child_seed(label, index));
    }

private:
    std::uint64_t root_;
};

/// Uniform on (0, 1]; never returns zero so logarithms stay finite.
inline double uniform_open0(Engine& gen) noexcept
{
    return (static_cast<double>(gen() >> 11) + 1.0) * 0x1.0p-53;
}

/// Uniform on [0, 1).
inline double uniform01(Engine& gen) noexcept
{
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

/// Unit-variance zero-mean CN(0, 1) without argument checks (hot loops).
/// Marsaglia polar method: a point uniform in the unit disc scaled by
/// sqrt(-ln s / s) gives two independent N(0, 1/2) components.
inline Complex sample_cn01(Engine& gen) noexcept
{
    double u, v, s;
    do {
        u = 2.0 * uniform01(gen) - 1.0;
        v = 2.0 * uniform01(gen) - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-std::log(s) / s);
    return {u * f, v * f};
}

/// Circularly-symmetric complex Gaussian CN(mean, variance).
inline Complex sample_cgauss(Engine& gen, Complex mean, double variance)
{
    if (!(variance >= 0.0))
        throw std::invalid_argument("sample_cgauss: variance must be non-negative");
    if (variance == 0.0)
        return mean;
    return mean + std::sqrt(variance) * sample_cn01(gen);
}

inline double sample_exponential(Engine& gen, double scale)
{
    if (!(scale > 0.0))
        throw std::invalid_argument("sample_exponential: scale must be positive");
    return -scale * std::log(uniform_open0(gen));
}

/// Gamma(shape, scale) for integral shape, as a sum of exponentials.
inline double sample_gamma(Engine& gen, int shape, double scale)
{
    if (shape < 1)
        throw std::invalid_argument("sample_gamma: shape must be a positive integer");
    if (!(scale > 0.0))
        throw std::invalid_argument("sample_gamma: scale must be positive");
    double acc = 0.0;
    for (int i = 0; i < shape; ++i)
        acc -= std::log(uniform_open0(gen));
    return scale * acc;
}

/// Index of the lower order statistic used for the q-quantile of n values:
/// ceil(q*n) - 1 clamped to [0, n-1]. A relative guard of 1e-12 keeps
/// products such as 0.95*100 on the intended integer.
inline std::size_t quantile_index(std::size_t n, double q)
{
    if (n == 0)
        throw std::invalid_argument("quantile_index: empty sequence");
    if (!(q >= 0.0 && q <= 1.0))
        throw std::invalid_argument("quantile_index: q must lie in [0, 1]");
    const double pos = std::ceil(q * static_cast<double>(n) * (1.0 - 1e-12));
    const double idx = std::clamp(pos - 1.0, 0.0, static_cast<double>(n - 1));
    return static_cast<std::size_t>(idx);
}

inline double empirical_quantile(std::span<const double> values, double q)
{
    if (values.empty())
        throw std::invalid_argument("empirical_quantile: empty sequence");
    const std::size_t k = quantile_index(values.size(), q);
    std::vector<double> tmp(values.begin(), values.end());
    std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(k), tmp.end());
    return tmp[k];
}

struct Interval
{
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double x) const noexcept { return lo <= x && x <= hi; }
};

/// Two-sided standard normal critical value for a confidence level.
inline double normal_critical(double level)
{
    if (!(level > 0.0 && level < 1.0))
        throw std::invalid_argument("normal_critical: level must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 * (1.0 + level));
}

/// Wilson score interval for a binomial proportion.
inline Interval binomial_ci(std::size_t successes, std::size_t trials, double level)
{
    if (trials == 0)
        throw std::invalid_argument("binomial_ci: trials must be at least 1");
    if (successes > trials)
        throw std::invalid_argument("binomial_ci: successes exceed trials");
    const double z = normal_critical(level);
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = z / denom * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
    Interval ci{std::max(0.0, center - half), std::min(1.0, center + half)};
    if (successes == 0)
        ci.lo = 0.0;
    if (successes == trials)
        ci.hi = 1.0;
    return ci;
}

/// CDF of Gamma(shape, scale) for integral shape (Erlang closed form).
inline double gamma_cdf(int shape, double scale, double x)
{
    if (x <= 0.0)
        return 0.0;
    const double t = x / scale;
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k < shape; ++k) {
        term *= t / k;
        sum += term;
    }
    return std::max(0.0, 1.0 - std::exp(-t) * sum);
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
inline double ks_distance(std::span<const double> values, const std::function<double(double)>& cdf)
{
    if (values.empty())
        throw std::invalid_argument("ks_distance: empty sample");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double f = cdf(v[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

/// Large-sample KS critical value sqrt(-ln(significance/2)/2) / sqrt(n).
inline double ks_critical(std::size_t n, double significance)
{
    return std::sqrt(-0.5 * std::log(0.5 * significance)) / std::sqrt(static_cast<double>(n));
}

inline double mean(std::span<const double> v)
{
    double acc = 0.0;
    for (double x : v)
        acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

} // namespace statkit
} // namespace driscov

#endif // DRISCOV_STATKIT_HPP
