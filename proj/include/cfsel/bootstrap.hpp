#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cfsel/errors.hpp"
#include "cfsel/math.hpp"
#include "cfsel/parallel.hpp"
#include "cfsel/rng.hpp"

namespace cfsel {

/// i.i.d. standard exponential multiplier weights (unit mean and variance).
inline Eigen::VectorXd draw_weights(int n, Rng& rng) {
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) w[i] = rng.exponential();
    return w;
}

struct BootstrapOptions {
    int B = 200;
    std::uint64_t seed = 1;
    int jobs = 1;
    // Test hook: force unit weights so every replication reproduces the
    // point estimate (the algorithm degenerates to the plain steps).
    bool unit_weight_hook = false;
    double max_failure_fraction = 0.10;
};

struct BootstrapDraws {
    int B = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<double>> draws;   // successful replications, in index order
    std::vector<int> replication_index;       // original b per stored draw
    int failures = 0;
    std::vector<std::string> failure_messages;
};

/// Weighted bootstrap: replication b draws one weight vector from its own
/// counter-derived seed and reruns the full pipeline with it. Failed
/// replications (separation, empty cells) are recorded and excluded, never
/// retried. Results are deterministic for any job count.
inline BootstrapDraws bootstrap(
    int n, const std::function<std::vector<double>(const Eigen::VectorXd&)>& pipeline,
    const BootstrapOptions& options) {
    BootstrapDraws out;
    out.B = options.B;
    out.seed = options.seed;
    if (options.B == 0) return out;

    std::vector<std::vector<double>> results(static_cast<std::size_t>(options.B));
    std::vector<std::string> errors(static_cast<std::size_t>(options.B));
    std::vector<char> ok(static_cast<std::size_t>(options.B), 0);

    parallel_for(static_cast<std::size_t>(options.B), options.jobs, [&](std::size_t b) {
        Rng rng(derive_seed(options.seed, b));
        const Eigen::VectorXd w =
            options.unit_weight_hook ? Eigen::VectorXd::Ones(n) : draw_weights(n, rng);
        try {
            results[b] = pipeline(w);
            ok[b] = 1;
        } catch (const Error& e) {
            errors[b] = e.what();
        }
    });

    for (int b = 0; b < options.B; ++b) {
        if (ok[static_cast<std::size_t>(b)]) {
            out.draws.push_back(std::move(results[static_cast<std::size_t>(b)]));
            out.replication_index.push_back(b);
        } else {
            ++out.failures;
            out.failure_messages.push_back("replication " + std::to_string(b) + ": " +
                                           errors[static_cast<std::size_t>(b)]);
        }
    }
    if (out.failures > options.max_failure_fraction * options.B)
        throw TooManyFailures(std::to_string(out.failures) + " of " + std::to_string(options.B));
    return out;
}

struct Interval {
    double lo = 0.0, hi = 0.0;
};

/// Pointwise percentile interval per grid point.
inline std::vector<Interval> percentile_interval(const BootstrapDraws& draws, double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error("interval level must lie in (0,1)");
    if (draws.draws.empty()) throw Error("no bootstrap draws");
    const std::size_t g = draws.draws.front().size();
    std::vector<Interval> out(g);
    std::vector<double> column(draws.draws.size());
    for (std::size_t j = 0; j < g; ++j) {
        for (std::size_t b = 0; b < draws.draws.size(); ++b) column[b] = draws.draws[b][j];
        std::sort(column.begin(), column.end());
        out[j].lo = quantile_sorted(column, (1.0 - level) / 2.0);
        out[j].hi = quantile_sorted(column, 1.0 - (1.0 - level) / 2.0);
    }
    return out;
}

/// Sup-t uniform band: the common critical value is the level-quantile of
/// max_g |draw - point| / s_g, with s_g the bootstrap IQR / 1.349 (falling
/// back to the standard deviation where the IQR degenerates).
inline std::vector<Interval> uniform_band(const BootstrapDraws& draws,
                                          const std::vector<double>& points, double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error("band level must lie in (0,1)");
    if (draws.draws.empty()) throw Error("no bootstrap draws");
    const std::size_t g = points.size();

    std::vector<double> scale(g, 0.0);
    std::vector<double> column(draws.draws.size());
    bool any_positive = false;
    for (std::size_t j = 0; j < g; ++j) {
        for (std::size_t b = 0; b < draws.draws.size(); ++b) column[b] = draws.draws[b][j];
        std::sort(column.begin(), column.end());
        const double iqr = quantile_sorted(column, 0.75) - quantile_sorted(column, 0.25);
        double s = iqr / 1.349;
        if (s == 0.0) {
            double mean = 0.0;
            for (double v : column) mean += v;
            mean /= static_cast<double>(column.size());
            double ss = 0.0;
            for (double v : column) ss += (v - mean) * (v - mean);
            s = std::sqrt(ss / std::max<std::size_t>(1, column.size() - 1));
        }
        scale[j] = s;
        any_positive = any_positive || s > 0.0;
    }
    if (!any_positive) throw DegenerateScale("all grid points have zero bootstrap dispersion");

    std::vector<double> stats;
    stats.reserve(draws.draws.size());
    for (const auto& draw : draws.draws) {
        double m = 0.0;
        for (std::size_t j = 0; j < g; ++j) {
            if (scale[j] <= 0.0) continue;
            m = std::max(m, std::abs(draw[j] - points[j]) / scale[j]);
        }
        stats.push_back(m);
    }
    const double crit = quantile_of(std::move(stats), level);

    std::vector<Interval> out(g);
    for (std::size_t j = 0; j < g; ++j) {
        out[j].lo = points[j] - crit * scale[j];
        out[j].hi = points[j] + crit * scale[j];
    }
    return out;
}

}  // namespace cfsel
