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

// driscov command-line front end.
//
//   driscov validate       [--config F] [--seed S] [--out F]
//   driscov sweep-power    [--config F] [--seed S] [--alpha A] [--out F]
//   driscov sweep-elements ...
//   driscov sweep-samples  ...
//   driscov train --model F [--supervised] [--p0 DBM] ...
//   driscov eval  --model F [--p0 DBM] ...
//   driscov dump-config    [--config F] ...
//
// Exit status: 0 success, 1 failed checks or run error, 2 usage or
// configuration error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "driscov/driscov.hpp"

namespace {

using namespace driscov;

constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

struct Options
{
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<double> alpha;
    std::optional<double> p0_dbm;
    std::string out;
    std::string model;
    bool supervised = false;
    unsigned workers = 1;
};

ScenarioConfig resolve(const Options& o)
{
    auto cfg = o.config_path.empty() ? ScenarioConfig{} : parse_config_file(o.config_path);
    if (o.seed)
        cfg.seed = *o.seed;
    if (o.alpha)
        cfg.detector.alpha = *o.alpha;
    if (o.p0_dbm)
        cfg.p0_dbm = *o.p0_dbm;
    validate(cfg);
    return cfg;
}

/// Writes to --out when given, else stdout.
template <typename Writer>
void with_output(const std::string& path, Writer&& write)
{
    if (path.empty()) {
        write(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error(path + ": cannot open for writing");
    write(os);
    os.flush();
    if (!os)
        throw std::runtime_error(path + ": write failed");
}

void progress(const SweepResult& r)
{
    std::clog << r.sweep_var << " = " << r.sweep_value << ": mdr_unsup " << r.mdr_unsup.value << ", mdr_sup "
              << r.mdr_sup.value << ", mdr_no_dris " << r.mdr_no_dris.value << ", far " << r.far_empirical.value
              << ", sjnr " << r.sjnr_sim_db << " dB (" << r.wall_seconds << " s)\n";
}

int cmd_validate(const Options& o)
{
    const auto cfg = resolve(o);
    ValidationOptions opt;
    opt.workers = o.workers;
    const auto rep = run_validation(cfg, opt);
    for (const auto& c : rep.checks)
        std::clog << (c.passed ? "pass " : "FAIL ") << c.name << '\n';
    with_output(o.out, [&](std::ostream& os) { write_validation(os, rep); });
    return rep.passed() ? 0 : kExitFailed;
}

template <typename Sweep>
int cmd_sweep(const Options& o, Sweep&& sweep)
{
    const auto cfg = resolve(o);
    const auto rows = sweep(cfg, o.workers, progress);
    const std::string path = o.out.empty() ? cfg.csv_path : o.out;
    with_output(path, [&](std::ostream& os) { write_csv(os, rows, cfg); });
    return 0;
}

// The detector trained and evaluated here is the one the power sweep
// fits at the same P0: same point seed, same substreams.
statkit::SeedStream point_stream(const ScenarioConfig& cfg)
{
    return statkit::SeedStream(point_seed(cfg, "p0_dbm", cfg.p0_dbm));
}

int cmd_train(const Options& o)
{
    if (o.model.empty())
        throw UsageError("train: --model is required");
    const auto cfg = resolve(o);
    const auto seeds = point_stream(cfg);
    const ChannelModel model(scenario_of(cfg, cfg.p0_dbm));
    const detector::GammaNull null{cfg.detector.n_samples, model.scenario().fading.noise_willie};
    detector::FitReport fit;
    detector::FittedDetector det;
    if (o.supervised) {
        const auto data = experiment_detail::stats(seeds.derive("train-sup"), "h1", model, Hypothesis::h1,
                                                   experiment_detail::h1_train_count(cfg), cfg, o.workers);
        det = detector::fit_supervised(data, null, cfg.detector, cfg.train, seeds.derive("fit-sup"), o.workers, &fit);
    } else {
        const auto data = experiment_detail::training_mixture(seeds, model, cfg, o.workers);
        det = detector::fit_unsupervised(data, null, cfg.detector, cfg.train, seeds.derive("fit-unsup"), o.workers,
                                         &fit);
    }
    {
        std::ofstream os(o.model, std::ios::binary);
        if (!os)
            throw std::runtime_error(o.model + ": cannot open for writing");
        detector::save(det, os);
    }
    using experiment_detail::fmt9;
    with_output(o.out, [&](std::ostream& os) {
        os << "# driscov train\n" << dump_config(cfg, "# ");
        os << "mode,p0_dbm,input_rows,retained_rows,log_tau,best_epoch,best_holdout_nll,threshold,seed\n";
        os << (o.supervised ? "supervised" : "unsupervised") << ',' << fmt9(cfg.p0_dbm) << ',' << fit.input_rows << ','
           << fit.retained_rows << ',' << fmt9(fit.log_tau) << ',' << fit.train.best_epoch << ','
           << fmt9(fit.train.best_holdout_nll) << ',' << fmt9(det.threshold) << ',' << cfg.seed << '\n';
    });
    return 0;
}

int cmd_eval(const Options& o)
{
    if (o.model.empty())
        throw UsageError("eval: --model is required");
    const auto cfg = resolve(o);
    std::ifstream is(o.model, std::ios::binary);
    if (!is)
        throw std::runtime_error(o.model + ": cannot open for reading");
    const auto det = detector::load(is);
    if (det.window != cfg.detector.window || det.null.shape != cfg.detector.n_samples)
        throw UsageError(o.model + ": detector does not match the configured window or samples_per_stat");
    const ChannelModel model(scenario_of(cfg, cfg.p0_dbm));
    const auto batch = experiment_detail::eval_batch(point_stream(cfg), model, cfg, o.workers);
    const auto r = detector::evaluate(det, batch, kReportLevel);
    using experiment_detail::fmt9;
    with_output(o.out, [&](std::ostream& os) {
        os << "# driscov eval; rates at " << fmt9(kReportLevel) << " Wilson intervals\n" << dump_config(cfg, "# ");
        os << "p0_dbm,n_h0,n_h1,far,far_lo,far_hi,mdr,mdr_lo,mdr_hi,threshold,seed\n";
        os << fmt9(cfg.p0_dbm) << ',' << r.n_h0 << ',' << r.n_h1 << ',' << fmt9(*r.far) << ',' << fmt9(r.far_ci->lo)
           << ',' << fmt9(r.far_ci->hi) << ',' << fmt9(*r.mdr) << ',' << fmt9(r.mdr_ci->lo) << ','
           << fmt9(r.mdr_ci->hi) << ',' << fmt9(det.threshold) << ',' << cfg.seed << '\n';
    });
    return 0;
}

int cmd_dump(const Options& o)
{
    const auto cfg = resolve(o);
    with_output(o.out, [&](std::ostream& os) { os << dump_config(cfg); });
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Covert-communication detection experiments with a randomly reconfigured surface"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "Configuration file (section.key = value)")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "Root seed");
        sub->add_option("--alpha", o.alpha, "Target false-alarm rate");
        sub->add_option("--out", o.out, "Output file (default stdout)");
        sub->add_option("--workers", o.workers, "Worker threads")->check(CLI::Range(1u, 256u));
    };
    auto with_model = [&](CLI::App* sub) {
        sub->add_option("--model", o.model, "Detector file")->required();
        sub->add_option("--p0", o.p0_dbm, "Alice transmit power in dBm");
    };

    auto* validate_cmd = app.add_subcommand("validate", "Run the simulator and detector self-checks");
    auto* power_cmd = app.add_subcommand("sweep-power", "MDR and SJNR against transmit power");
    auto* elements_cmd = app.add_subcommand("sweep-elements", "MDR and SJNR against surface size");
    auto* samples_cmd = app.add_subcommand("sweep-samples", "MDR and SJNR against samples per statistic");
    auto* train_cmd = app.add_subcommand("train", "Fit a detector and save it");
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a saved detector");
    auto* dump_cmd = app.add_subcommand("dump-config", "Print the fully resolved configuration");
    for (auto* s : {validate_cmd, power_cmd, elements_cmd, samples_cmd, train_cmd, eval_cmd, dump_cmd})
        common(s);
    with_model(train_cmd);
    with_model(eval_cmd);
    train_cmd->add_flag("--supervised", o.supervised, "Train on labelled H1 statistics");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (validate_cmd->parsed())
            return cmd_validate(o);
        if (power_cmd->parsed())
            return cmd_sweep(o, [](const auto&... a) { return run_power_sweep(a...); });
        if (elements_cmd->parsed())
            return cmd_sweep(o, [](const auto&... a) { return run_elements_sweep(a...); });
        if (samples_cmd->parsed())
            return cmd_sweep(o, [](const auto&... a) { return run_samples_sweep(a...); });
        if (train_cmd->parsed())
            return cmd_train(o);
        if (eval_cmd->parsed())
            return cmd_eval(o);
        return cmd_dump(o);
    } catch (const ConfigError& e) {
        std::cerr << "driscov: " << e.what() << '\n';
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "driscov: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "driscov: " << e.what() << '\n';
        return kExitFailed;
    }
}
