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

#ifndef DRISCOV_CONFIG_HPP
#define DRISCOV_CONFIG_HPP

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "channel.hpp"
#include "detector.hpp"
#include "flow.hpp"

namespace driscov {

class ConfigError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

enum class BobMode { center, annulus };

/// Fully resolved run configuration. Defaults reproduce the reference
/// scenario; every field is echoed by dump_config.
struct ScenarioConfig
{
    Geometry geometry{};

    double kappa_g = 4.0;
    PathLossModel::Kind alice_dris = PathLossModel::Kind::los;
    PathLossModel::Kind dris_willie = PathLossModel::Kind::los;
    PathLossModel::Kind dris_bob = PathLossModel::Kind::los;
    PathLossModel::Kind alice_willie = PathLossModel::Kind::nlos;
    PathLossModel::Kind alice_bob = PathLossModel::Kind::nlos;
    double los_intercept_db = 35.6;
    double los_slope_db = 22.0;
    double nlos_intercept_db = 32.6;
    double nlos_slope_db = 36.7;
    double bandwidth_hz = 180e3;
    double noise_density_dbm_hz = -170.0;

    DrisProfile profile = reference_profile();

    std::vector<double> sweep_dbm{-10.0, -7.0, -4.0, -1.0, 2.0, 5.0, 8.0};
    std::vector<double> anchor_dbm{-7.0, 5.0};
    double p0_dbm = 5.0;

    detector::DetectorConfig detector{};
    int coherence_symbols = 20;
    std::size_t train_stats = 20000;
    std::size_t eval_stats = 100000;

    flow::TrainConfig train{};

    std::uint64_t seed = 1;

    BobMode bob_mode = BobMode::center;
    std::size_t bob_positions = 16;
    std::size_t bob_symbols = 200000;

    std::vector<std::size_t> sweep_elements{0, 256, 512, 1024, 2048};
    std::vector<int> sweep_samples{1, 3, 5, 10, 20};

    std::string csv_path;
};

inline PathLossModel path_loss_for(const ScenarioConfig& c, PathLossModel::Kind k)
{
    return k == PathLossModel::Kind::los ? PathLossModel{k, c.los_intercept_db, c.los_slope_db}
                                         : PathLossModel{k, c.nlos_intercept_db, c.nlos_slope_db};
}

inline LinkFading fading_of(const ScenarioConfig& c)
{
    LinkFading f;
    f.alice_dris = path_loss_for(c, c.alice_dris);
    f.dris_willie = path_loss_for(c, c.dris_willie);
    f.dris_bob = path_loss_for(c, c.dris_bob);
    f.alice_willie = path_loss_for(c, c.alice_willie);
    f.alice_bob = path_loss_for(c, c.alice_bob);
    f.kappa_g = c.kappa_g;
    f.noise_willie = noise_power_watts(c.bandwidth_hz, c.noise_density_dbm_hz);
    f.noise_bob = f.noise_willie;
    return f;
}

/// Channel scenario at transmit power p0_dbm with Bob at the annulus center.
inline ChannelScenario scenario_of(const ScenarioConfig& c, double p0_dbm)
{
    ChannelScenario sc;
    sc.geometry = c.geometry;
    sc.fading = fading_of(c);
    sc.profile = c.profile;
    sc.p0_watts = dbm_to_watts(p0_dbm);
    sc.bob_position = c.geometry.bob.center;
    sc.coherence_symbols = c.coherence_symbols;
    return sc;
}

/// Near-square grid holding n elements: the smallest divisor of n not below
/// sqrt(n) horizontally. 2048 gives 64 x 32, 512 gives 32 x 16.
inline std::pair<int, int> grid_for(std::size_t n)
{
    if (n == 0)
        return {0, 0};
    std::size_t h = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    while (n % h != 0)
        ++h;
    return {static_cast<int>(h), static_cast<int>(n / h)};
}

namespace config_detail {

inline std::string_view trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_list(std::string_view s)
{
    std::vector<std::string_view> out;
    if (trim(s).empty())
        return out;
    std::size_t start = 0;
    while (true) {
        const auto comma = s.find(',', start);
        out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos)
            break;
        start = comma + 1;
    }
    return out;
}

inline double to_double(std::string_view s)
{
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
        throw ConfigError("expected a real number, got '" + std::string(s) + "'");
    return v;
}

template <typename Int>
Int to_int(std::string_view s)
{
    Int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError("expected an integer, got '" + std::string(s) + "'");
    return v;
}

inline std::string fmt(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename T>
std::string fmt_list(const std::vector<T>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i)
            out += ", ";
        if constexpr (std::is_floating_point_v<T>)
            out += fmt(v[i]);
        else
            out += std::to_string(v[i]);
    }
    return out;
}

inline std::vector<double> to_double_list(std::string_view s)
{
    std::vector<double> out;
    for (auto t : split_list(s))
        out.push_back(to_double(t));
    return out;
}

template <typename Int>
std::vector<Int> to_int_list(std::string_view s)
{
    std::vector<Int> out;
    for (auto t : split_list(s))
        out.push_back(to_int<Int>(t));
    return out;
}

inline Vec3 to_vec3(std::string_view s)
{
    const auto v = to_double_list(s);
    if (v.size() != 3)
        throw ConfigError("expected three comma-separated coordinates");
    return {v[0], v[1], v[2]};
}

inline std::string fmt_vec3(const Vec3& p)
{
    return fmt(p.x) + ", " + fmt(p.y) + ", " + fmt(p.z);
}

inline PathLossModel::Kind to_kind(std::string_view s)
{
    if (s == "los")
        return PathLossModel::Kind::los;
    if (s == "nlos")
        return PathLossModel::Kind::nlos;
    throw ConfigError("expected 'los' or 'nlos', got '" + std::string(s) + "'");
}

inline std::string fmt_kind(PathLossModel::Kind k)
{
    return k == PathLossModel::Kind::los ? "los" : "nlos";
}

inline bool to_bool(std::string_view s)
{
    if (s == "true" || s == "on" || s == "1")
        return true;
    if (s == "false" || s == "off" || s == "0")
        return false;
    throw ConfigError("expected a boolean, got '" + std::string(s) + "'");
}

inline void require(bool ok, const char* msg)
{
    if (!ok)
        throw ConfigError(msg);
}

struct Key
{
    const char* name;
    std::function<void(ScenarioConfig&, std::string_view)> set;
    std::function<std::string(const ScenarioConfig&)> get;
};

inline double deg(double rad)
{
    return rad * 180.0 / std::numbers::pi;
}

inline double rad(double d)
{
    return d * std::numbers::pi / 180.0;
}

inline const std::vector<Key>& keys()
{
    using C = ScenarioConfig;
    using SV = std::string_view;
    static const std::vector<Key> table = {
        {"geometry.alice", [](C& c, SV v) { c.geometry.alice = to_vec3(v); },
         [](const C& c) { return fmt_vec3(c.geometry.alice); }},
        {"geometry.willie", [](C& c, SV v) { c.geometry.willie = to_vec3(v); },
         [](const C& c) { return fmt_vec3(c.geometry.willie); }},
        {"geometry.dris_center", [](C& c, SV v) { c.geometry.dris_center = to_vec3(v); },
         [](const C& c) { return fmt_vec3(c.geometry.dris_center); }},
        {"geometry.bob_center", [](C& c, SV v) { c.geometry.bob.center = to_vec3(v); },
         [](const C& c) { return fmt_vec3(c.geometry.bob.center); }},
        {"geometry.bob_inner", [](C& c, SV v) { c.geometry.bob.inner = to_double(v); },
         [](const C& c) { return fmt(c.geometry.bob.inner); }},
        {"geometry.bob_outer", [](C& c, SV v) { c.geometry.bob.outer = to_double(v); },
         [](const C& c) { return fmt(c.geometry.bob.outer); }},
        {"geometry.wavelength",
         [](C& c, SV v) {
             const double w = to_double(v);
             require(w > 0.0, "wavelength must be positive");
             const double ratio = c.geometry.element_spacing / c.geometry.wavelength;
             c.geometry.wavelength = w;
             c.geometry.element_spacing = ratio * w;
         },
         [](const C& c) { return fmt(c.geometry.wavelength); }},
        {"geometry.element_spacing_wl",
         [](C& c, SV v) {
             const double r = to_double(v);
             require(r > 0.0, "element spacing must be positive");
             c.geometry.element_spacing = r * c.geometry.wavelength;
         },
         [](const C& c) { return fmt(c.geometry.element_spacing / c.geometry.wavelength); }},

        {"dris.elements_h",
         [](C& c, SV v) {
             c.geometry.n_horizontal = to_int<int>(v);
             require(c.geometry.n_horizontal > 0, "element count must be positive");
         },
         [](const C& c) { return std::to_string(c.geometry.n_horizontal); }},
        {"dris.elements_v",
         [](C& c, SV v) {
             c.geometry.n_vertical = to_int<int>(v);
             require(c.geometry.n_vertical > 0, "element count must be positive");
         },
         [](const C& c) { return std::to_string(c.geometry.n_vertical); }},
        {"dris.phases_deg",
         [](C& c, SV v) {
             c.profile.phases.clear();
             for (double d : to_double_list(v))
                 c.profile.phases.push_back(rad(d));
         },
         [](const C& c) {
             // 15 digits hide the degree/radian round-off and stay stable.
             std::string out;
             for (double p : c.profile.phases) {
                 char buf[32];
                 std::snprintf(buf, sizeof buf, "%.15g", deg(p));
                 out += (out.empty() ? "" : ", ") + std::string(buf);
             }
             return out;
         }},
        {"dris.amplitudes", [](C& c, SV v) { c.profile.amplitudes = to_double_list(v); },
         [](const C& c) { return fmt_list(c.profile.amplitudes); }},
        {"dris.probabilities", [](C& c, SV v) { c.profile.probabilities = to_double_list(v); },
         [](const C& c) { return fmt_list(c.profile.probabilities); }},
        {"dris.bits", [](C& c, SV v) { c.profile.bits = to_int<int>(v); },
         [](const C& c) { return std::to_string(c.profile.bits); }},

        {"fading.kappa_g",
         [](C& c, SV v) {
             c.kappa_g = v == "inf" ? std::numeric_limits<double>::infinity() : to_double(v);
             require(c.kappa_g >= 0.0, "Rician factor must be non-negative");
         },
         [](const C& c) { return std::isinf(c.kappa_g) ? std::string("inf") : fmt(c.kappa_g); }},
        {"fading.alice_dris", [](C& c, SV v) { c.alice_dris = to_kind(v); },
         [](const C& c) { return fmt_kind(c.alice_dris); }},
        {"fading.dris_willie", [](C& c, SV v) { c.dris_willie = to_kind(v); },
         [](const C& c) { return fmt_kind(c.dris_willie); }},
        {"fading.dris_bob", [](C& c, SV v) { c.dris_bob = to_kind(v); },
         [](const C& c) { return fmt_kind(c.dris_bob); }},
        {"fading.alice_willie", [](C& c, SV v) { c.alice_willie = to_kind(v); },
         [](const C& c) { return fmt_kind(c.alice_willie); }},
        {"fading.alice_bob", [](C& c, SV v) { c.alice_bob = to_kind(v); },
         [](const C& c) { return fmt_kind(c.alice_bob); }},
        {"fading.los_intercept_db", [](C& c, SV v) { c.los_intercept_db = to_double(v); },
         [](const C& c) { return fmt(c.los_intercept_db); }},
        {"fading.los_slope_db", [](C& c, SV v) { c.los_slope_db = to_double(v); },
         [](const C& c) { return fmt(c.los_slope_db); }},
        {"fading.nlos_intercept_db", [](C& c, SV v) { c.nlos_intercept_db = to_double(v); },
         [](const C& c) { return fmt(c.nlos_intercept_db); }},
        {"fading.nlos_slope_db", [](C& c, SV v) { c.nlos_slope_db = to_double(v); },
         [](const C& c) { return fmt(c.nlos_slope_db); }},
        {"fading.bandwidth_hz",
         [](C& c, SV v) {
             c.bandwidth_hz = to_double(v);
             require(c.bandwidth_hz > 0.0, "bandwidth must be positive");
         },
         [](const C& c) { return fmt(c.bandwidth_hz); }},
        {"fading.noise_floor_dbm_hz", [](C& c, SV v) { c.noise_density_dbm_hz = to_double(v); },
         [](const C& c) { return fmt(c.noise_density_dbm_hz); }},

        {"power.sweep_dbm",
         [](C& c, SV v) {
             c.sweep_dbm = to_double_list(v);
             require(!c.sweep_dbm.empty(), "power sweep must list at least one value");
         },
         [](const C& c) { return fmt_list(c.sweep_dbm); }},
        {"power.anchor_dbm",
         [](C& c, SV v) {
             c.anchor_dbm = to_double_list(v);
             require(!c.anchor_dbm.empty(), "anchor list must not be empty");
         },
         [](const C& c) { return fmt_list(c.anchor_dbm); }},
        {"power.p0_dbm", [](C& c, SV v) { c.p0_dbm = to_double(v); }, [](const C& c) { return fmt(c.p0_dbm); }},

        {"detector.alpha",
         [](C& c, SV v) {
             c.detector.alpha = to_double(v);
             require(c.detector.alpha > 0.0 && c.detector.alpha < 1.0, "alpha must lie in (0, 1)");
         },
         [](const C& c) { return fmt(c.detector.alpha); }},
        {"detector.rho",
         [](C& c, SV v) {
             c.detector.rho = to_double(v);
             require(c.detector.rho > 0.0 && c.detector.rho < 1.0, "rho must lie in (0, 1)");
         },
         [](const C& c) { return fmt(c.detector.rho); }},
        {"detector.samples_per_stat",
         [](C& c, SV v) {
             c.detector.n_samples = to_int<int>(v);
             require(c.detector.n_samples >= 1, "samples per statistic must be at least 1");
         },
         [](const C& c) { return std::to_string(c.detector.n_samples); }},
        {"detector.coherence_symbols",
         [](C& c, SV v) {
             c.coherence_symbols = to_int<int>(v);
             require(c.coherence_symbols >= 1, "coherence interval must be at least 1 symbol");
         },
         [](const C& c) { return std::to_string(c.coherence_symbols); }},
        {"detector.threshold_samples",
         [](C& c, SV v) {
             c.detector.threshold_samples = to_int<std::size_t>(v);
             require(c.detector.threshold_samples >= 1, "threshold sample count must be at least 1");
         },
         [](const C& c) { return std::to_string(c.detector.threshold_samples); }},
        {"detector.train_stats", [](C& c, SV v) { c.train_stats = to_int<std::size_t>(v); },
         [](const C& c) { return std::to_string(c.train_stats); }},
        {"detector.eval_stats",
         [](C& c, SV v) {
             c.eval_stats = to_int<std::size_t>(v);
             require(c.eval_stats >= 1, "evaluation set must hold at least one statistic");
         },
         [](const C& c) { return std::to_string(c.eval_stats); }},
        {"detector.h1_fraction",
         [](C& c, SV v) {
             c.detector.h1_fraction = to_double(v);
             require(c.detector.h1_fraction >= 0.0 && c.detector.h1_fraction <= 1.0,
                     "H1 fraction must lie in [0, 1]");
         },
         [](const C& c) { return fmt(c.detector.h1_fraction); }},
        {"detector.window",
         [](C& c, SV v) {
             c.detector.window = to_int<std::size_t>(v);
             require(c.detector.window >= 1, "window must be at least 1");
         },
         [](const C& c) { return std::to_string(c.detector.window); }},

        {"flow.layers",
         [](C& c, SV v) {
             c.train.shape.blocks = to_int<std::size_t>(v);
             require(c.train.shape.blocks >= 1, "flow needs at least one block");
         },
         [](const C& c) { return std::to_string(c.train.shape.blocks); }},
        {"flow.hidden",
         [](C& c, SV v) {
             const auto w = to_int<std::size_t>(v);
             require(w >= 1, "hidden width must be positive");
             c.train.shape.hidden.assign(std::max<std::size_t>(1, c.train.shape.hidden.size()), w);
         },
         [](const C& c) { return std::to_string(c.train.shape.hidden.front()); }},
        {"flow.hidden_layers",
         [](C& c, SV v) {
             const auto n = to_int<std::size_t>(v);
             require(n >= 1, "at least one hidden layer is required");
             c.train.shape.hidden.assign(n, c.train.shape.hidden.front());
         },
         [](const C& c) { return std::to_string(c.train.shape.hidden.size()); }},
        {"flow.lr",
         [](C& c, SV v) {
             c.train.learning_rate = to_double(v);
             require(c.train.learning_rate > 0.0, "learning rate must be positive");
         },
         [](const C& c) { return fmt(c.train.learning_rate); }},
        {"flow.epochs",
         [](C& c, SV v) {
             c.train.epochs = to_int<int>(v);
             require(c.train.epochs >= 1, "epochs must be at least 1");
         },
         [](const C& c) { return std::to_string(c.train.epochs); }},
        {"flow.batch",
         [](C& c, SV v) {
             c.train.batch_size = to_int<std::size_t>(v);
             require(c.train.batch_size >= 1, "batch size must be at least 1");
         },
         [](const C& c) { return std::to_string(c.train.batch_size); }},
        {"flow.enrichment",
         [](C& c, SV v) {
             if (v == "auto")
                 c.train.shape.enrichment = flow::Enrichment::automatic;
             else
                 c.train.shape.enrichment = to_bool(v) ? flow::Enrichment::on : flow::Enrichment::off;
         },
         [](const C& c) {
             switch (c.train.shape.enrichment) {
             case flow::Enrichment::on:
                 return std::string("on");
             case flow::Enrichment::off:
                 return std::string("off");
             default:
                 return std::string("auto");
             }
         }},
        {"flow.clip", [](C& c, SV v) { c.train.clip_norm = to_double(v); },
         [](const C& c) { return fmt(c.train.clip_norm); }},
        {"flow.beta1", [](C& c, SV v) { c.train.beta1 = to_double(v); },
         [](const C& c) { return fmt(c.train.beta1); }},
        {"flow.beta2", [](C& c, SV v) { c.train.beta2 = to_double(v); },
         [](const C& c) { return fmt(c.train.beta2); }},
        {"flow.eps", [](C& c, SV v) { c.train.epsilon = to_double(v); },
         [](const C& c) { return fmt(c.train.epsilon); }},
        {"flow.holdout", [](C& c, SV v) { c.train.holdout_fraction = to_double(v); },
         [](const C& c) { return fmt(c.train.holdout_fraction); }},

        {"seeds.root", [](C& c, SV v) { c.seed = to_int<std::uint64_t>(v); },
         [](const C& c) { return std::to_string(c.seed); }},

        {"bob.mode",
         [](C& c, SV v) {
             if (v == "center")
                 c.bob_mode = BobMode::center;
             else if (v == "annulus")
                 c.bob_mode = BobMode::annulus;
             else
                 throw ConfigError("expected 'center' or 'annulus'");
         },
         [](const C& c) { return std::string(c.bob_mode == BobMode::center ? "center" : "annulus"); }},
        {"bob.positions",
         [](C& c, SV v) {
             c.bob_positions = to_int<std::size_t>(v);
             require(c.bob_positions >= 1, "at least one Bob position is required");
         },
         [](const C& c) { return std::to_string(c.bob_positions); }},
        {"bob.symbols",
         [](C& c, SV v) {
             c.bob_symbols = to_int<std::size_t>(v);
             require(c.bob_symbols >= 1, "at least one Bob symbol is required");
         },
         [](const C& c) { return std::to_string(c.bob_symbols); }},

        {"sweep.elements", [](C& c, SV v) { c.sweep_elements = to_int_list<std::size_t>(v); },
         [](const C& c) { return fmt_list(c.sweep_elements); }},
        {"sweep.samples",
         [](C& c, SV v) {
             c.sweep_samples = to_int_list<int>(v);
             for (int n : c.sweep_samples)
                 require(n >= 1, "sample counts must be positive");
         },
         [](const C& c) { return fmt_list(c.sweep_samples); }},

        {"output.csv", [](C& c, SV v) { c.csv_path = std::string(v); }, [](const C& c) { return c.csv_path; }},
    };
    return table;
}

} // namespace config_detail

/// Cross-field checks. Throws ConfigError naming the offending key.
inline void validate(const ScenarioConfig& c)
{
    auto fail = [](const std::string& key, const std::string& msg) {
        throw ConfigError(msg.rfind(key + ":", 0) == 0 ? msg : key + ": " + msg);
    };
    try {
        validate(c.geometry);
    } catch (const std::invalid_argument& e) {
        fail("geometry", e.what());
    }
    try {
        validate(c.profile);
    } catch (const std::invalid_argument& e) {
        fail("dris", e.what());
    }
    if (c.detector.n_samples > c.coherence_symbols)
        fail("detector.samples_per_stat", "N must not exceed the coherence interval M");
    for (int n : c.sweep_samples)
        if (n > c.coherence_symbols)
            fail("sweep.samples", "every N must not exceed the coherence interval M");
    try {
        detector::validate(c.detector);
    } catch (const std::invalid_argument& e) {
        fail("detector", e.what());
    }
    try {
        flow::validate(c.train);
    } catch (const std::invalid_argument& e) {
        fail("flow", e.what());
    }
    const std::size_t h1 = static_cast<std::size_t>(std::llround(c.detector.h1_fraction * c.train_stats));
    if (c.train_stats / c.detector.window < c.train.batch_size * 2)
        fail("detector.train_stats", "training set must hold at least two batches");
    if (h1 / c.detector.window < c.train.batch_size)
        fail("detector.h1_fraction", "supervised baseline needs at least one batch of H1 statistics");
    if (c.eval_stats < c.detector.window)
        fail("detector.eval_stats", "evaluation set is smaller than one window");
}

/// Parses `section.key = value` lines; `#` starts a comment. Unset keys
/// keep their defaults.
inline ScenarioConfig parse_config(std::istream& in, const std::string& origin = "<config>")
{
    ScenarioConfig c;
    const auto& table = config_detail::keys();
    std::map<std::string, std::size_t> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view s = line;
        if (const auto hash = s.find('#'); hash != std::string_view::npos)
            s = s.substr(0, hash);
        s = config_detail::trim(s);
        if (s.empty())
            continue;
        auto where = [&] { return origin + ":" + std::to_string(lineno) + ": "; };
        const auto eq = s.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(where() + "expected 'section.key = value'");
        const auto key = config_detail::trim(s.substr(0, eq));
        const auto value = config_detail::trim(s.substr(eq + 1));
        const auto it = std::find_if(table.begin(), table.end(), [&](const auto& k) { return key == k.name; });
        if (it == table.end())
            throw ConfigError(where() + "unknown key '" + std::string(key) + "'");
        if (seen.count(std::string(key)))
            throw ConfigError(where() + "duplicate key '" + std::string(key) + "' (first set on line "
                              + std::to_string(seen[std::string(key)]) + ")");
        seen[std::string(key)] = lineno;
        try {
            it->set(c, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where() + std::string(key) + ": " + e.what());
        }
    }
    try {
        validate(c);
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        for (const auto& [k, l] : seen)
            if (msg.rfind(k, 0) == 0 || msg.rfind(k.substr(0, k.find('.')), 0) == 0) {
                msg = origin + ":" + std::to_string(l) + ": " + msg;
                break;
            }
        throw ConfigError(msg);
    }
    return c;
}

inline ScenarioConfig parse_config_string(const std::string& text)
{
    std::istringstream in(text);
    return parse_config(in);
}

inline ScenarioConfig parse_config_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError(path + ": cannot open configuration file");
    return parse_config(in, path);
}

/// Every key with its resolved value, grouped by section, each line
/// prefixed by `prefix`. Parsing the result yields an equal configuration.
inline std::string dump_config(const ScenarioConfig& c, std::string_view prefix = "")
{
    std::string out;
    std::string section;
    for (const auto& k : config_detail::keys()) {
        const std::string_view name = k.name;
        const auto sec = std::string(name.substr(0, name.find('.')));
        if (sec != section && !section.empty())
            out += std::string(config_detail::trim(prefix)) + "\n";
        section = sec;
        out += std::string(prefix) + std::string(name) + " = " + k.get(c) + "\n";
    }
    return out;
}

} // namespace driscov

#endif // DRISCOV_CONFIG_HPP
