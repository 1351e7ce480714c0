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

#ifndef DRISCOV_THEORY_HPP
#define DRISCOV_THEORY_HPP

#include <cmath>
#include <limits>
#include <stdexcept>

#include "channel.hpp"

namespace driscov::theory {

/// Mean squared reflection amplitude sum_i p_i alpha_i^2.
inline double alpha_bar(const DrisProfile& profile)
{
    validate(profile);
    double acc = 0.0;
    for (std::size_t i = 0; i < profile.size(); ++i)
        acc += profile.probabilities[i] * profile.amplitudes[i] * profile.amplitudes[i];
    return acc;
}

/// Variance of the Gaussian limit of the cascaded surface channel:
/// N_D * alpha_bar / (L_g * L_I).
inline double prop_variance(std::size_t n_elements, double alpha_bar, double L_g, double L_I)
{
    if (!(L_g > 0.0) || !(L_I > 0.0) || !(alpha_bar >= 0.0))
        throw std::invalid_argument("prop_variance: attenuations must be positive and alpha_bar non-negative");
    return static_cast<double>(n_elements) * alpha_bar / (L_g * L_I);
}

/// Null distribution of Y_w: Gamma(shape N, scale delta_w^2).
struct GammaNull
{
    int shape = 5;
    double scale = 1.0;
};

inline void validate(const GammaNull& null)
{
    if (null.shape < 1)
        throw std::invalid_argument("gamma null: shape must be a positive integer");
    if (!(null.scale > 0.0))
        throw std::invalid_argument("gamma null: scale must be positive");
}

/// log Gamma(n) for a positive integer; exact factorial up to n = 20.
inline double log_gamma_int(int n)
{
    if (n <= 20) {
        double f = 1.0;
        for (int k = 2; k < n; ++k)
            f *= k;
        return std::log(f);
    }
    return std::lgamma(static_cast<double>(n));
}

inline double gamma_h0_logpdf(const GammaNull& null, double y)
{
    if (!(y >= 0.0))
        throw std::invalid_argument("gamma_h0_logpdf: statistic must be non-negative");
    const int n = null.shape;
    const double log_norm = n * std::log(null.scale) + log_gamma_int(n);
    if (y == 0.0)
        return n == 1 ? -log_norm : -std::numeric_limits<double>::infinity();
    return (n - 1) * std::log(y) - y / null.scale - log_norm;
}

/// Closed-form SJNR at Bob in the many-element limit:
/// (P0/L_d) / (P0 N_D alpha_bar / (L_g L_I) + delta_b^2).
inline double sjnr_theory(double p0, std::size_t n_elements, double alpha_bar, double L_d_b, double L_g,
                          double L_I_b, double noise)
{
    if (!(p0 >= 0.0) || !(L_d_b > 0.0) || !(L_g > 0.0) || !(L_I_b > 0.0) || !(noise > 0.0))
        throw std::invalid_argument("sjnr_theory: arguments must be positive");
    const double jam = p0 * static_cast<double>(n_elements) * alpha_bar / (L_g * L_I_b);
    return (p0 / L_d_b) / (jam + noise);
}

/// High-power saturation value L_g L_I / (L_d N_D alpha_bar).
inline double sjnr_limit(std::size_t n_elements, double alpha_bar, double L_d_b, double L_g, double L_I_b)
{
    return L_g * L_I_b / (L_d_b * static_cast<double>(n_elements) * alpha_bar);
}

/// Ratio of sample expectations: mean signal / (mean jamming + noise).
inline double sjnr_empirical(const BobSignals& s)
{
    if (s.signal.empty() || s.signal.size() != s.jamming.size())
        throw std::invalid_argument("sjnr_empirical: need at least one symbol with matching series");
    return statkit::mean(s.signal) / (statkit::mean(s.jamming) + s.noise);
}

} // namespace driscov::theory

#endif // DRISCOV_THEORY_HPP
