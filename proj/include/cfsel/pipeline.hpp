#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cfsel/analytic_vcov.hpp"
#include "cfsel/basis.hpp"
#include "cfsel/bootstrap.hpp"
#include "cfsel/control_function.hpp"
#include "cfsel/counterfactual.hpp"
#include "cfsel/effects.hpp"
#include "cfsel/errors.hpp"
#include "cfsel/local_effects.hpp"
#include "cfsel/table.hpp"

namespace cfsel {

/// One estimation problem: model configuration plus requested estimands.
/// Data-dependent defaults (trimming threshold, grids) are resolved once by
/// resolve_request_defaults and then held fixed, including across bootstrap
/// replications.
struct PipelineRequest {
    BasisSpec r_basis;
    BasisSpec w_basis;
    double c_bar = std::numeric_limits<double>::quiet_NaN();
    int max_thresholds = 200;

    std::vector<XPoint> x_points;
    std::vector<std::pair<int, int>> contrasts;  // (i1, i0) indices into x_points

    bool want_asf = true;
    bool want_dsf = false;
    bool want_qsf = false;
    bool want_treated = false;
    bool want_avg_deriv = false;
    bool want_quantile_path = false;
    bool support_check = true;

    std::vector<double> y_grid;    // DR fitting grid; empty: 99 trimmed percentiles
    std::vector<double> y_values;  // DSF evaluation points; empty: y_grid
    std::vector<double> qsf_y_grid;  // inversion grid; empty: y_grid extended 10%
    std::vector<double> taus;      // QSF taus
    std::vector<double> tau_grid;  // quantile-path grid; empty: 0.05..0.95
    TreatedWeightSpec treated;
};

inline void resolve_request_defaults(PipelineRequest& request, const ObservationTable& table) {
    if (std::isnan(request.c_bar)) request.c_bar = default_trim_rule(table).c_bar;
    const TrimRule trim{request.c_bar};
    if ((request.want_dsf || request.want_qsf) && request.y_grid.empty())
        request.y_grid = default_y_grid(table, trim);
    if (request.y_values.empty()) request.y_values = request.y_grid;
    if (request.want_qsf && request.qsf_y_grid.empty()) {
        const auto t = trim_indicator(table, trim);
        double lo = 1e300, hi = -1e300;
        for (int i = 0; i < table.n(); ++i) {
            if (t[i] != 1.0) continue;
            lo = std::min(lo, table.y[i]);
            hi = std::max(hi, table.y[i]);
        }
        const double pad = 0.10 * (hi - lo);
        request.qsf_y_grid.push_back(lo - pad);
        for (double y : request.y_grid) request.qsf_y_grid.push_back(y);
        request.qsf_y_grid.push_back(hi + pad);
    }
    if (request.want_quantile_path && request.tau_grid.empty())
        request.tau_grid = default_tau_grid();
    if (request.want_qsf && request.taus.empty()) request.taus = {0.25, 0.5, 0.75};
}

struct PipelineResult {
    ControlFunctionFit cf;
    Eigen::VectorXd v_hat;
    TrimRule trim;
    MeanFit mean;
    std::optional<DistributionFit> dr;
    std::optional<QuantileFit> qr;
    std::vector<EffectEstimate> effects;

    // Flattened estimand vector (bootstrap target), with one label per entry.
    std::vector<double> flat;
    std::vector<std::string> flat_names;
};

namespace detail {

inline void push_effect(PipelineResult& result, EffectEstimate effect) {
    for (std::size_t i = 0; i < effect.values.size(); ++i) {
        std::string label = effect.name + "[";
        for (std::size_t a = 0; a < effect.axes.size(); ++a) {
            if (a) label += ",";
            label += effect.axes[a] + "=" + std::to_string(effect.grid[i][a]);
        }
        label += "]";
        result.flat.push_back(effect.values[i]);
        result.flat_names.push_back(std::move(label));
    }
    result.effects.push_back(std::move(effect));
}

}  // namespace detail

/// Steps 1-3 for one weight vector. The caller must have resolved the
/// request defaults first (run_pipeline asserts the trim threshold).
inline PipelineResult run_pipeline(const ObservationTable& table, const PipelineRequest& request,
                                   const Eigen::VectorXd& weights = {}) {
    if (std::isnan(request.c_bar))
        throw ConfigError("pipeline request defaults not resolved (c_bar unset)");
    const Eigen::VectorXd w_all =
        weights.size() == 0 ? Eigen::VectorXd::Ones(table.n()) : weights;

    PipelineResult result;
    result.trim = TrimRule{request.c_bar};

    const auto grid = make_threshold_grid(table, request.c_bar, request.max_thresholds);
    result.cf = fit_control_function(table, request.r_basis, grid, w_all);
    result.v_hat = control_values(result.cf, table);
    result.mean = fit_lasf(table, result.v_hat, request.w_basis, result.trim, w_all);

    if (request.want_asf && !request.x_points.empty()) {
        auto asf_est = asf(result.mean, table, result.v_hat, result.trim, request.x_points, w_all,
                           request.support_check ? &result.cf : nullptr);
        const auto asf_values = asf_est.values;
        detail::push_effect(result, std::move(asf_est));
        for (const auto& [i1, i0] : request.contrasts) {
            EffectEstimate c;
            c.name = "ate";
            c.axes = {"pair"};
            c.grid.push_back({static_cast<double>(i1), static_cast<double>(i0)});
            c.values.push_back(asf_values[static_cast<std::size_t>(i1)] -
                               asf_values[static_cast<std::size_t>(i0)]);
            c.meta.c_bar = request.c_bar;
            detail::push_effect(result, std::move(c));
        }
    }

    if (request.want_dsf || request.want_qsf) {
        result.dr = fit_ldsf(table, result.v_hat, request.w_basis, result.trim, request.y_grid,
                             w_all);
        if (request.want_dsf && !request.x_points.empty()) {
            detail::push_effect(result, dsf(*result.dr, table, result.v_hat, result.trim,
                                            request.y_values, request.x_points, w_all));
        }
        if (request.want_qsf && !request.x_points.empty()) {
            const auto dsf_ext = dsf(*result.dr, table, result.v_hat, result.trim,
                                     request.qsf_y_grid, request.x_points, w_all);
            detail::push_effect(result, qsf(dsf_ext, request.taus));
        }
    }

    if (request.want_treated && !request.x_points.empty()) {
        detail::push_effect(result, effect_on_treated(result.mean, table, result.v_hat, result.trim,
                                                      request.x_points, request.treated, w_all));
    }

    if (request.want_avg_deriv) {
        detail::push_effect(
            result, average_derivative(result.mean, table, result.v_hat, result.trim, w_all));
    }

    if (request.want_quantile_path) {
        result.qr = fit_lqsf(table, result.v_hat, request.w_basis, result.trim, request.tau_grid,
                             w_all);
    }
    return result;
}

inline std::vector<double> run_pipeline_flat(const ObservationTable& table,
                                             const PipelineRequest& request,
                                             const Eigen::VectorXd& weights) {
    return run_pipeline(table, request, weights).flat;
}

/// Step 4 configuration: a two-group decomposition run.
struct DecompositionRequest {
    BasisSpec r_basis;
    BasisSpec w_basis;
    std::string group1;
    std::string group0;  // base group
    std::vector<double> taus = {0.1, 0.25, 0.5, 0.75};
    std::vector<double> y_grid;  // shared DR/inversion grid; empty: pooled default
    double c_bar1 = std::numeric_limits<double>::quiet_NaN();
    double c_bar0 = std::numeric_limits<double>::quiet_NaN();
    int max_thresholds = 200;
};

inline void resolve_decomposition_defaults(DecompositionRequest& request,
                                           const ObservationTable& table) {
    const auto rows1 = table.group_rows(request.group1);
    const auto rows0 = table.group_rows(request.group0);
    if (rows1.empty()) throw ConfigError("group '" + request.group1 + "' has no rows");
    if (rows0.empty()) throw ConfigError("group '" + request.group0 + "' has no rows");
    const auto t1 = table.subset(rows1);
    const auto t0 = table.subset(rows0);
    if (std::isnan(request.c_bar1)) request.c_bar1 = default_trim_rule(t1).c_bar;
    if (std::isnan(request.c_bar0)) request.c_bar0 = default_trim_rule(t0).c_bar;
    if (request.y_grid.empty()) {
        // Pooled trimmed percentiles, extended 10% beyond the pooled range.
        std::vector<double> ys;
        auto collect = [&](const ObservationTable& t, double c_bar) {
            for (int i = 0; i < t.n(); ++i)
                if (t.c[i] > 0.0 && t.c[i] <= c_bar) ys.push_back(t.y[i]);
        };
        collect(t1, request.c_bar1);
        collect(t0, request.c_bar0);
        std::sort(ys.begin(), ys.end());
        if (ys.empty()) throw EmptyTrimmedSample("no trimmed rows in either group");
        const double lo = ys.front(), hi = ys.back();
        const double pad = 0.10 * (hi - lo);
        request.y_grid.push_back(lo - pad);
        for (int k = 1; k <= 99; ++k) {
            const double q = quantile_sorted(ys, k / 100.0);
            if (q > request.y_grid.back()) request.y_grid.push_back(q);
        }
        request.y_grid.push_back(hi + pad);
    }
}

struct DecompositionRun {
    GroupArtifacts group1;
    GroupArtifacts group0;
    DecompositionResult result;
};

inline DecompositionRun run_decomposition(const ObservationTable& table,
                                          const DecompositionRequest& request,
                                          const Eigen::VectorXd& weights = {}) {
    if (std::isnan(request.c_bar1) || std::isnan(request.c_bar0) || request.y_grid.empty())
        throw ConfigError("decomposition request defaults not resolved");

    auto group_input = [&](const std::string& label, double c_bar) {
        const auto rows = table.group_rows(label);
        auto sub = table.subset(rows);
        Eigen::VectorXd w(static_cast<int>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k)
            w[static_cast<int>(k)] = weights.size() == 0 ? 1.0 : weights[rows[k]];
        return make_group_artifacts(sub, label, request.r_basis, request.w_basis, TrimRule{c_bar},
                                    request.y_grid, w, request.max_thresholds);
    };

    DecompositionRun run{group_input(request.group1, request.c_bar1),
                         group_input(request.group0, request.c_bar0),
                         {}};
    run.result = decompose(run.group1, run.group0, request.y_grid, request.taus);
    return run;
}

}  // namespace cfsel
