#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cfsel/basis.hpp"
#include "cfsel/control_function.hpp"
#include "cfsel/errors.hpp"
#include "cfsel/math.hpp"
#include "cfsel/solvers.hpp"
#include "cfsel/table.hpp"

namespace cfsel {

// Step 2 fits. All second-stage estimation runs on the trimmed sample
// {0 < C <= c_bar} with design W_i = w(X_i, V-hat_i); rows outside the
// trim never enter, so perturbing them cannot move any fit.

struct MeanFit {
    Eigen::VectorXd beta;
    BasisSpec basis;
    TrimRule trim;
    SolveReport report;
    std::set<std::string> indicator_vars;
};

struct DistributionFit {
    std::vector<double> y_grid;  // surviving grid points, ascending
    std::vector<Eigen::VectorXd> beta_path;
    std::vector<double> dropped_points;  // grid points lost to separation
    BasisSpec basis;
    TrimRule trim;
    std::set<std::string> indicator_vars;
};

struct QuantileFit {
    std::vector<double> tau_grid;
    std::vector<Eigen::VectorXd> beta_path;
    BasisSpec basis;
    TrimRule trim;
    std::set<std::string> indicator_vars;
};

namespace detail {

struct TrimmedDesign {
    std::vector<int> rows;       // table rows with T = 1
    Eigen::MatrixXd design;      // w(X_i, V-hat_i) on those rows
    Eigen::VectorXd v;           // V-hat on those rows
    Eigen::VectorXd response;    // Y on those rows
    Eigen::VectorXd weights;     // caller weights restricted to those rows
    std::set<std::string> indicators;
};

inline TrimmedDesign trimmed_design(const ObservationTable& table, const Eigen::VectorXd& v_hat,
                                    const BasisSpec& basis, const TrimRule& trim,
                                    const Eigen::VectorXd& weights) {
    TrimmedDesign out;
    const auto t = trim_indicator(table, trim);
    for (int i = 0; i < table.n(); ++i)
        if (t[i] == 1.0) out.rows.push_back(i);
    if (out.rows.empty()) throw EmptyTrimmedSample("no rows with 0 < c <= c_bar");

    const int m = static_cast<int>(out.rows.size());
    out.v.resize(m);
    out.response.resize(m);
    out.weights.resize(m);
    for (int k = 0; k < m; ++k) {
        const int i = out.rows[static_cast<std::size_t>(k)];
        if (std::isnan(v_hat[i])) throw Error("control value missing on a trimmed row");
        out.v[k] = v_hat[i];
        out.response[k] = table.y[i];
        out.weights[k] = weights.size() == 0 ? 1.0 : weights[i];
    }
    out.design = build_basis(basis, table, out.rows, &out.v);
    for (const auto& name : basis.variables())
        if (table.has_column(name) && table.indicator(name)) out.indicators.insert(name);
    return out;
}

}  // namespace detail

/// Trimmed least squares of Y on w(X, V-hat).
inline MeanFit fit_lasf(const ObservationTable& table, const Eigen::VectorXd& v_hat,
                        const BasisSpec& basis, const TrimRule& trim,
                        const Eigen::VectorXd& weights = {}) {
    const auto td = detail::trimmed_design(table, v_hat, basis, trim, weights);
    if (static_cast<int>(td.rows.size()) < basis.dimension())
        throw EmptyTrimmedSample("trimmed sample smaller than the basis dimension");
    MeanFit fit;
    fit.report = fit_weighted_least_squares(td.design, td.response, td.weights);
    fit.beta = fit.report.coefficients;
    fit.basis = basis;
    fit.trim = trim;
    fit.indicator_vars = td.indicators;
    return fit;
}

/// 99 empirical percentiles of Y on the trimmed sample (deduplicated).
inline std::vector<double> default_y_grid(const ObservationTable& table, const TrimRule& trim,
                                          int points = 99) {
    const auto t = trim_indicator(table, trim);
    std::vector<double> ys;
    for (int i = 0; i < table.n(); ++i)
        if (t[i] == 1.0) ys.push_back(table.y[i]);
    if (ys.empty()) throw EmptyTrimmedSample("no trimmed rows for the y grid");
    std::sort(ys.begin(), ys.end());
    std::vector<double> grid;
    for (int k = 1; k <= points; ++k) {
        const double q = quantile_sorted(ys, static_cast<double>(k) / (points + 1.0));
        if (grid.empty() || q > grid.back()) grid.push_back(q);
    }
    return grid;
}

inline std::vector<double> default_tau_grid() {
    std::vector<double> grid;
    for (int k = 1; k <= 19; ++k) grid.push_back(0.05 * k);
    return grid;
}

/// Trimmed logistic distribution regression of 1{Y <= y} on w(X, V-hat),
/// one fit per grid point, warm-started along the path. Grid points that
/// separate are dropped and recorded, not imputed.
inline DistributionFit fit_ldsf(const ObservationTable& table, const Eigen::VectorXd& v_hat,
                                const BasisSpec& basis, const TrimRule& trim,
                                const std::vector<double>& y_grid,
                                const Eigen::VectorXd& weights = {}) {
    const auto td = detail::trimmed_design(table, v_hat, basis, trim, weights);
    DistributionFit fit;
    fit.basis = basis;
    fit.trim = trim;
    fit.indicator_vars = td.indicators;

    const int m = static_cast<int>(td.rows.size());
    Eigen::VectorXd labels(m);
    const Eigen::VectorXd* warm = nullptr;
    bool rank_checked = false;
    for (double y : y_grid) {
        for (int k = 0; k < m; ++k) labels[k] = td.response[k] <= y ? 1.0 : 0.0;
        try {
            auto report = fit_weighted_logit(td.design, labels, td.weights, warm, 100, !rank_checked);
            rank_checked = true;
            fit.y_grid.push_back(y);
            fit.beta_path.push_back(std::move(report.coefficients));
            warm = &fit.beta_path.back();
        } catch (const QuasiSeparation&) {
            fit.dropped_points.push_back(y);
        }
    }
    if (fit.y_grid.empty()) throw QuasiSeparation("every distribution grid point separated");
    return fit;
}

/// Trimmed quantile regression of Y on w(X, V-hat), one certified fit per
/// tau grid point.
inline QuantileFit fit_lqsf(const ObservationTable& table, const Eigen::VectorXd& v_hat,
                            const BasisSpec& basis, const TrimRule& trim,
                            const std::vector<double>& tau_grid,
                            const Eigen::VectorXd& weights = {}) {
    const auto td = detail::trimmed_design(table, v_hat, basis, trim, weights);
    QuantileFit fit;
    fit.basis = basis;
    fit.trim = trim;
    fit.indicator_vars = td.indicators;
    for (double tau : tau_grid) {
        auto report = fit_weighted_quantile(td.design, td.response, tau, td.weights);
        fit.tau_grid.push_back(tau);
        fit.beta_path.push_back(std::move(report.coefficients));
    }
    return fit;
}

namespace detail {

inline std::map<std::string, double> with_v(std::map<std::string, double> x, double v) {
    x["v"] = v;
    return x;
}

// Largest grid index with grid[idx] <= value; -1 when below the grid.
inline int step_index(const std::vector<double>& grid, double value) {
    const auto it = std::upper_bound(grid.begin(), grid.end(), value);
    return static_cast<int>(std::distance(grid.begin(), it)) - 1;
}

}  // namespace detail

/// mu-hat(x, v) = w(x, v)' beta-hat.
inline double eval_lasf(const MeanFit& fit, const std::map<std::string, double>& x, double v) {
    return fit.basis.eval_point(detail::with_v(x, v)).dot(fit.beta);
}

/// G-hat(y, x, v) = Lambda(w(x, v)' beta-hat(y)), using the nearest grid
/// point at or below y; below the grid the lower clamp value is returned.
inline double eval_ldsf(const DistributionFit& fit, double y, const std::map<std::string, double>& x,
                        double v) {
    const int idx = detail::step_index(fit.y_grid, y);
    if (idx < 0) return kProbClamp;
    const double p =
        logistic_cdf(fit.basis.eval_point(detail::with_v(x, v)).dot(fit.beta_path[static_cast<std::size_t>(idx)]));
    return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

/// q-hat(tau, x, v) = w(x, v)' beta-hat(tau), stepping to the nearest grid
/// tau at or below (the first grid point when below).
inline double eval_lqsf(const QuantileFit& fit, double tau, const std::map<std::string, double>& x,
                        double v) {
    int idx = detail::step_index(fit.tau_grid, tau);
    if (idx < 0) idx = 0;
    return fit.basis.eval_point(detail::with_v(x, v)).dot(fit.beta_path[static_cast<std::size_t>(idx)]);
}

/// Continuous x coordinates of a basis: everything it references except v
/// and indicator columns.
inline std::vector<std::string> continuous_vars(const BasisSpec& basis,
                                                const std::set<std::string>& indicator_vars) {
    std::vector<std::string> out;
    for (const auto& name : basis.variables())
        if (!indicator_vars.count(name)) out.push_back(name);
    return out;
}

/// delta-hat(x, v): gradient of the LASF in the continuous x coordinates.
inline std::vector<double> eval_ladf(const MeanFit& fit, const std::map<std::string, double>& x,
                                     double v) {
    std::vector<double> out;
    for (const auto& name : continuous_vars(fit.basis, fit.indicator_vars))
        out.push_back(
            fit.basis.deriv_point(detail::with_v(x, v), name, fit.indicator_vars).dot(fit.beta));
    return out;
}

/// delta-hat_tau(x, v): gradient of the LQSF in the continuous x coordinates.
inline std::vector<double> eval_lqdf(const QuantileFit& fit, double tau,
                                     const std::map<std::string, double>& x, double v) {
    int idx = detail::step_index(fit.tau_grid, tau);
    if (idx < 0) idx = 0;
    const auto& beta = fit.beta_path[static_cast<std::size_t>(idx)];
    std::vector<double> out;
    for (const auto& name : continuous_vars(fit.basis, fit.indicator_vars))
        out.push_back(fit.basis.deriv_point(detail::with_v(x, v), name, fit.indicator_vars).dot(beta));
    return out;
}

}  // namespace cfsel
