#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cfsel/bootstrap.hpp"
#include "cfsel/dgp.hpp"
#include "cfsel/parallel.hpp"
#include "cfsel/pipeline.hpp"
#include "cfsel/solvers.hpp"

namespace cfsel {

/// Monte Carlo validation run: `reps` independent samples from one DGP,
/// the full pipeline on each, optional bootstrap intervals, aggregated
/// against caller-supplied oracle values.
struct McStudyConfig {
    DgpSpec dgp;
    int n = 2000;
    int reps = 100;
    int bootstrap_B = 0;  // 0: no interval/band coverage
    double level = 0.95;
    std::uint64_t seed = 1;
    int jobs = 1;
    PipelineRequest request;       // defaults re-resolved on each replication
    std::vector<double> oracle;    // truth per flat estimand
    bool naive_contrast = false;   // also track selected-sample OLS x contrast
    // Uniform-band coverage over flat indices [band_begin, band_end).
    int band_begin = 0, band_end = 0;
};

struct McEstimandReport {
    std::string name;
    double oracle = 0.0;
    double mean_estimate = 0.0;
    double bias = 0.0;
    double rmse = 0.0;
    double mc_se = 0.0;       // sd of estimates across reps / sqrt(reps)
    double ci_coverage = std::numeric_limits<double>::quiet_NaN();
};

struct McStudyReport {
    std::vector<McEstimandReport> estimands;
    double band_coverage = std::numeric_limits<double>::quiet_NaN();
    double naive_mean = std::numeric_limits<double>::quiet_NaN();
    double naive_sd = std::numeric_limits<double>::quiet_NaN();
    int reps_done = 0;
    int failures = 0;
};

/// Naive comparison: OLS of Y on [1, x] over the selected sample, slope
/// coefficient (ignores selection entirely).
inline double naive_selected_slope(const ObservationTable& table) {
    const auto rows = table.selected_rows();
    Eigen::MatrixXd x(static_cast<int>(rows.size()), 2);
    Eigen::VectorXd y(static_cast<int>(rows.size()));
    const int xcol = table.column("x");
    for (std::size_t k = 0; k < rows.size(); ++k) {
        x(static_cast<int>(k), 0) = 1.0;
        x(static_cast<int>(k), 1) = table.z(rows[k], xcol);
        y[static_cast<int>(k)] = table.y[rows[k]];
    }
    return fit_weighted_least_squares(x, y, Eigen::VectorXd::Ones(x.rows())).coefficients[1];
}

inline McStudyReport mc_study(const McStudyConfig& config) {
    struct RepOutcome {
        bool ok = false;
        std::vector<double> estimate;
        std::vector<char> covered;
        char band_covered = 0;
        double naive = std::numeric_limits<double>::quiet_NaN();
        std::vector<std::string> names;
    };
    std::vector<RepOutcome> outcomes(static_cast<std::size_t>(config.reps));

    parallel_for(static_cast<std::size_t>(config.reps), config.jobs, [&](std::size_t r) {
        auto& outcome = outcomes[r];
        const std::uint64_t rep_seed = derive_seed(config.seed, r);
        try {
            const auto [table, truth] = simulate(config.dgp, config.n, rep_seed);
            PipelineRequest request = config.request;
            resolve_request_defaults(request, table);
            auto point = run_pipeline(table, request);
            outcome.estimate = point.flat;
            outcome.names = point.flat_names;
            if (config.naive_contrast) outcome.naive = naive_selected_slope(table);

            if (config.bootstrap_B > 0) {
                BootstrapOptions options;
                options.B = config.bootstrap_B;
                options.seed = derive_seed(rep_seed, 0x626f6f74ULL);
                options.jobs = 1;  // reps already run in parallel
                const auto draws = bootstrap(
                    table.n(),
                    [&](const Eigen::VectorXd& w) { return run_pipeline_flat(table, request, w); },
                    options);
                const auto intervals = percentile_interval(draws, config.level);
                outcome.covered.resize(intervals.size());
                for (std::size_t j = 0; j < intervals.size(); ++j)
                    outcome.covered[j] = config.oracle[j] >= intervals[j].lo &&
                                                 config.oracle[j] <= intervals[j].hi
                                             ? 1
                                             : 0;
                if (config.band_end > config.band_begin) {
                    std::vector<double> points(point.flat.begin() + config.band_begin,
                                               point.flat.begin() + config.band_end);
                    BootstrapDraws slice = draws;
                    for (auto& d : slice.draws)
                        d = std::vector<double>(d.begin() + config.band_begin,
                                                d.begin() + config.band_end);
                    const auto band = uniform_band(slice, points, config.level);
                    outcome.band_covered = 1;
                    for (std::size_t j = 0; j < band.size(); ++j) {
                        const double target = config.oracle[config.band_begin + static_cast<int>(j)];
                        if (target < band[j].lo || target > band[j].hi) outcome.band_covered = 0;
                    }
                }
            }
            outcome.ok = true;
        } catch (const Error&) {
            outcome.ok = false;
        }
    });

    McStudyReport report;
    std::size_t n_flat = 0;
    for (const auto& outcome : outcomes)
        if (outcome.ok) n_flat = outcome.estimate.size();

    std::vector<double> sum(n_flat, 0.0), sumsq(n_flat, 0.0), sqerr(n_flat, 0.0);
    std::vector<long> cover(n_flat, 0);
    long band_cover = 0, band_count = 0;
    double naive_sum = 0.0, naive_sumsq = 0.0;
    long naive_count = 0;
    std::vector<std::string> names(n_flat);

    for (const auto& outcome : outcomes) {
        if (!outcome.ok) {
            ++report.failures;
            continue;
        }
        ++report.reps_done;
        names = outcome.names;
        for (std::size_t j = 0; j < n_flat; ++j) {
            sum[j] += outcome.estimate[j];
            sumsq[j] += outcome.estimate[j] * outcome.estimate[j];
            const double err = outcome.estimate[j] - config.oracle[j];
            sqerr[j] += err * err;
            if (!outcome.covered.empty() && outcome.covered[j]) ++cover[j];
        }
        if (config.band_end > config.band_begin) {
            ++band_count;
            band_cover += outcome.band_covered;
        }
        if (config.naive_contrast && std::isfinite(outcome.naive)) {
            naive_sum += outcome.naive;
            naive_sumsq += outcome.naive * outcome.naive;
            ++naive_count;
        }
    }
    const double reps = std::max(1, report.reps_done);
    for (std::size_t j = 0; j < n_flat; ++j) {
        McEstimandReport e;
        e.name = names[j];
        e.oracle = config.oracle[j];
        e.mean_estimate = sum[j] / reps;
        e.bias = e.mean_estimate - config.oracle[j];
        e.rmse = std::sqrt(sqerr[j] / reps);
        const double var = std::max(0.0, sumsq[j] / reps - e.mean_estimate * e.mean_estimate);
        e.mc_se = std::sqrt(var / reps);
        if (config.bootstrap_B > 0) e.ci_coverage = static_cast<double>(cover[j]) / reps;
        report.estimands.push_back(std::move(e));
    }
    if (band_count > 0)
        report.band_coverage = static_cast<double>(band_cover) / static_cast<double>(band_count);
    if (naive_count > 0) {
        report.naive_mean = naive_sum / static_cast<double>(naive_count);
        const double var = std::max(
            0.0, naive_sumsq / static_cast<double>(naive_count) - report.naive_mean * report.naive_mean);
        report.naive_sd = std::sqrt(var);
    }
    return report;
}

}  // namespace cfsel
