#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cfsel/basis.hpp"
#include "cfsel/control_function.hpp"
#include "cfsel/errors.hpp"
#include "cfsel/local_effects.hpp"
#include "cfsel/table.hpp"

namespace cfsel {

struct EffectMeta {
    double c_bar = std::numeric_limits<double>::quiet_NaN();
    int n_selected = 0;
    int n_trimmed = 0;
    std::vector<std::string> warnings;
};

/// A named functional on an evaluation grid. Grid rows hold the point
/// coordinates in the order given by `axes` (e.g. {"y","x"} or {"tau","x"}).
struct EffectEstimate {
    std::string name;
    std::vector<std::string> axes;
    std::vector<std::vector<double>> grid;
    std::vector<double> values;
    EffectMeta meta;
};

using XPoint = std::map<std::string, double>;

/// Weighting scheme for effects on the treated: exact cell matching for
/// discrete x, product Epanechnikov kernel otherwise.
struct TreatedWeightSpec {
    XPoint x0;
    enum class Mode { Exact, Kernel } mode = Mode::Exact;
    double bandwidth = 0.0;  // <= 0: 1.06 sd(X) n^{-1/5} per coordinate
};

namespace detail {

struct TrimmedSample {
    std::vector<int> rows;
    Eigen::VectorXd v;        // V-hat on trimmed rows
    Eigen::VectorXd weights;  // caller weights on trimmed rows (unit default)
    int n_selected = 0;
};

inline TrimmedSample trimmed_sample(const ObservationTable& table, const Eigen::VectorXd& v_hat,
                                    const TrimRule& trim, const Eigen::VectorXd& weights) {
    TrimmedSample out;
    const auto t = trim_indicator(table, trim);
    for (int i = 0; i < table.n(); ++i) {
        out.n_selected += table.selected(i) ? 1 : 0;
        if (t[i] == 1.0) out.rows.push_back(i);
    }
    if (out.rows.empty()) throw EmptyTrimmedSample("no rows with 0 < c <= c_bar");
    const int m = static_cast<int>(out.rows.size());
    out.v.resize(m);
    out.weights.resize(m);
    for (int k = 0; k < m; ++k) {
        const int i = out.rows[static_cast<std::size_t>(k)];
        out.v[k] = v_hat[i];
        out.weights[k] = weights.size() == 0 ? 1.0 : weights[i];
    }
    return out;
}

inline std::vector<double> grid_row(const XPoint& x, const std::vector<std::string>& names) {
    std::vector<double> row;
    for (const auto& n : names) {
        const auto it = x.find(n);
        if (it == x.end()) throw SchemaMismatch("x point misses coordinate '" + n + "'");
        row.push_back(it->second);
    }
    return row;
}

inline double epanechnikov(double u) {
    const double a = std::abs(u);
    return a < 1.0 ? 0.75 * (1.0 - a * a) : 0.0;
}

// K_i(x0) over the trimmed rows.
inline Eigen::VectorXd treated_kernel(const ObservationTable& table, const TrimmedSample& ts,
                                      const TreatedWeightSpec& spec) {
    const int m = static_cast<int>(ts.rows.size());
    Eigen::VectorXd k = Eigen::VectorXd::Ones(m);
    for (const auto& [name, x0] : spec.x0) {
        const int col = table.column(name);
        if (spec.mode == TreatedWeightSpec::Mode::Exact) {
            for (int i = 0; i < m; ++i)
                k[i] *= table.z(ts.rows[static_cast<std::size_t>(i)], col) == x0 ? 1.0 : 0.0;
        } else {
            double h = spec.bandwidth;
            if (h <= 0.0) {
                double mean = 0.0, ss = 0.0;
                for (int i = 0; i < m; ++i) mean += table.z(ts.rows[static_cast<std::size_t>(i)], col);
                mean /= m;
                for (int i = 0; i < m; ++i) {
                    const double d = table.z(ts.rows[static_cast<std::size_t>(i)], col) - mean;
                    ss += d * d;
                }
                const double sd = std::sqrt(ss / std::max(1, m - 1));
                h = 1.06 * sd * std::pow(static_cast<double>(m), -0.2);
                if (h <= 0.0) h = 1.0;
            }
            for (int i = 0; i < m; ++i)
                k[i] *= epanechnikov((table.z(ts.rows[static_cast<std::size_t>(i)], col) - x0) / h) / h;
        }
    }
    return k;
}

}  // namespace detail

/// Flags x points where more than 5% of the trimmed V-hat values fall
/// outside the estimated identification set (common support suspect).
inline std::optional<std::string> support_warning(const ControlFunctionFit& cf,
                                                  const ObservationTable& table,
                                                  const detail::TrimmedSample& ts, const XPoint& x) {
    const auto pool = identification_pool(cf, table, ts.rows, x);
    double lo = 1.0;
    for (int i = 0; i < pool.rows(); ++i)
        lo = std::min(lo, selection_prob_at_zero(cf, pool.row(i).transpose()));
    int outside = 0;
    for (int k = 0; k < ts.v.size(); ++k) outside += ts.v[k] <= lo ? 1 : 0;
    const double share = static_cast<double>(outside) / static_cast<double>(ts.v.size());
    if (share > 0.05) {
        std::string label = "x point (";
        for (const auto& [name, val] : x) label += name + "=" + std::to_string(val) + ",";
        label.back() = ')';
        return label + ": " + std::to_string(100.0 * share) +
               "% of control values outside the estimated identification set";
    }
    return std::nullopt;
}

/// ASF: theta_S(x) = sum_i w_i T_i mu-hat(x, V-hat_i) / sum_i w_i T_i.
inline EffectEstimate asf(const MeanFit& fit, const ObservationTable& table,
                          const Eigen::VectorXd& v_hat, const TrimRule& trim,
                          const std::vector<XPoint>& x_points,
                          const Eigen::VectorXd& weights = {},
                          const ControlFunctionFit* cf_for_support = nullptr) {
    const auto ts = detail::trimmed_sample(table, v_hat, trim, weights);
    const double wsum = ts.weights.sum();
    if (wsum <= 0.0) throw EmptyTrimmedSample("zero total weight on the trimmed sample");

    EffectEstimate out;
    out.name = "asf";
    out.axes = fit.basis.variables();
    out.meta.c_bar = trim.c_bar;
    out.meta.n_selected = ts.n_selected;
    out.meta.n_trimmed = static_cast<int>(ts.rows.size());
    for (const auto& x : x_points) {
        const Eigen::MatrixXd design = fit.basis.build(
            static_cast<int>(ts.rows.size()), override_provider(table, ts.rows, x, &ts.v));
        out.grid.push_back(detail::grid_row(x, out.axes));
        out.values.push_back(ts.weights.dot(design * fit.beta) / wsum);
        if (cf_for_support) {
            if (auto warning = support_warning(*cf_for_support, table, ts, x))
                out.meta.warnings.push_back(*warning);
        }
    }
    return out;
}

/// DSF: G_S(y, x) averaged like the ASF over Lambda(w(x, V-hat_i)' beta(y)).
/// Grid layout: x-major, y fastest, axes {"y", x...}.
inline EffectEstimate dsf(const DistributionFit& fit, const ObservationTable& table,
                          const Eigen::VectorXd& v_hat, const TrimRule& trim,
                          const std::vector<double>& y_values, const std::vector<XPoint>& x_points,
                          const Eigen::VectorXd& weights = {}) {
    const auto ts = detail::trimmed_sample(table, v_hat, trim, weights);
    const double wsum = ts.weights.sum();
    if (wsum <= 0.0) throw EmptyTrimmedSample("zero total weight on the trimmed sample");

    EffectEstimate out;
    out.name = "dsf";
    out.axes = {"y"};
    for (const auto& n : fit.basis.variables()) out.axes.push_back(n);
    out.meta.c_bar = trim.c_bar;
    out.meta.n_selected = ts.n_selected;
    out.meta.n_trimmed = static_cast<int>(ts.rows.size());

    for (const auto& x : x_points) {
        const Eigen::MatrixXd design = fit.basis.build(
            static_cast<int>(ts.rows.size()), override_provider(table, ts.rows, x, &ts.v));
        const auto x_row = detail::grid_row(x, fit.basis.variables());
        for (double y : y_values) {
            const int idx = detail::step_index(fit.y_grid, y);
            double value;
            if (idx < 0) {
                value = kProbClamp;
            } else {
                const Eigen::VectorXd eta = design * fit.beta_path[static_cast<std::size_t>(idx)];
                double acc = 0.0;
                for (int k = 0; k < eta.size(); ++k)
                    acc += ts.weights[k] * logistic_cdf(eta[k]);
                value = acc / wsum;
            }
            std::vector<double> row{y};
            row.insert(row.end(), x_row.begin(), x_row.end());
            out.grid.push_back(std::move(row));
            out.values.push_back(value);
        }
    }
    return out;
}

/// Generalized inverse of a (possibly non-monotone) CDF tabulated on an
/// ascending grid, treated as a right-continuous step function with a
/// 0/1 plateau outside the grid:
///   q(tau) = int_0^inf 1(G(y) <= tau) dy - int_{-inf}^0 1(G(y) > tau) dy.
/// Exact for step functions; equals the left inverse when G is monotone.
inline double generalized_inverse(const std::vector<double>& y_grid,
                                  const std::vector<double>& g_values, double tau) {
    if (y_grid.size() != g_values.size() || y_grid.empty())
        throw Error("generalized_inverse: grid/value mismatch");
    const double g_min = *std::min_element(g_values.begin(), g_values.end());
    const double g_max = *std::max_element(g_values.begin(), g_values.end());
    if (tau < g_min || tau >= g_max)
        throw TauOutsideRange("tau=" + std::to_string(tau) + " not crossed on the grid");

    const std::size_t m = y_grid.size();
    double upper = 0.0;  // int_0^inf 1(G <= tau) dy
    double lower = 0.0;  // int_{-inf}^0 1(G > tau) dy

    // Region below the grid start: G = 0 <= tau, contributes to the upper
    // integral only where y > 0.
    if (y_grid.front() > 0.0) upper += y_grid.front();
    // Region beyond the grid end: G = 1 > tau; contributes to the lower
    // integral only where y < 0.
    if (y_grid.back() < 0.0) lower += 0.0 - y_grid.back();

    for (std::size_t j = 0; j + 1 < m; ++j) {
        const double a = y_grid[j], b = y_grid[j + 1];
        const double g = g_values[j];
        const double pos = std::max(0.0, b - std::max(a, 0.0));
        const double neg = std::max(0.0, std::min(b, 0.0) - a);
        if (g <= tau) upper += pos;
        else lower += neg;
    }
    return upper - lower;
}

/// QSF: inverts a DSF estimate (x-major, y-fastest layout) on its y grid.
inline EffectEstimate qsf(const EffectEstimate& dsf_estimate, const std::vector<double>& taus) {
    if (dsf_estimate.axes.empty() || dsf_estimate.axes.front() != "y")
        throw Error("qsf expects a dsf estimate with leading y axis");

    // Recover the y grid (the leading block) and the per-x value slices.
    std::vector<double> y_grid;
    for (const auto& row : dsf_estimate.grid) {
        if (!y_grid.empty() && row.front() <= y_grid.back()) break;
        y_grid.push_back(row.front());
    }
    const std::size_t ny = y_grid.size();
    if (ny == 0 || dsf_estimate.grid.size() % ny != 0)
        throw Error("qsf: dsf grid is not x-major with a common y block");
    const std::size_t nx = dsf_estimate.grid.size() / ny;

    EffectEstimate out;
    out.name = "qsf";
    out.axes = {"tau"};
    for (std::size_t a = 1; a < dsf_estimate.axes.size(); ++a)
        out.axes.push_back(dsf_estimate.axes[a]);
    out.meta = dsf_estimate.meta;

    for (std::size_t xi = 0; xi < nx; ++xi) {
        std::vector<double> g(ny);
        for (std::size_t j = 0; j < ny; ++j) g[j] = dsf_estimate.values[xi * ny + j];
        const auto& x_row = dsf_estimate.grid[xi * ny];
        for (double tau : taus) {
            std::vector<double> row{tau};
            row.insert(row.end(), x_row.begin() + 1, x_row.end());
            out.grid.push_back(std::move(row));
            out.values.push_back(generalized_inverse(y_grid, g, tau));
        }
    }
    return out;
}

/// Effect on the treated: theta_S(x | x0) with K_i(x0) row weights.
inline EffectEstimate effect_on_treated(const MeanFit& fit, const ObservationTable& table,
                                        const Eigen::VectorXd& v_hat, const TrimRule& trim,
                                        const std::vector<XPoint>& x_points,
                                        const TreatedWeightSpec& spec,
                                        const Eigen::VectorXd& weights = {}) {
    const auto ts = detail::trimmed_sample(table, v_hat, trim, weights);
    const Eigen::VectorXd kernel = detail::treated_kernel(table, ts, spec);
    const Eigen::VectorXd kw = kernel.array() * ts.weights.array();
    const double ksum = kw.sum();
    if (ksum <= 0.0) throw EmptyConditioningCell("no trimmed rows match the conditioning value");

    EffectEstimate out;
    out.name = "asf_treated";
    out.axes = fit.basis.variables();
    out.meta.c_bar = trim.c_bar;
    out.meta.n_selected = ts.n_selected;
    out.meta.n_trimmed = static_cast<int>(ts.rows.size());
    for (const auto& x : x_points) {
        const Eigen::MatrixXd design = fit.basis.build(
            static_cast<int>(ts.rows.size()), override_provider(table, ts.rows, x, &ts.v));
        out.grid.push_back(detail::grid_row(x, out.axes));
        out.values.push_back(kw.dot(design * fit.beta) / ksum);
    }
    return out;
}

/// Average derivative at x: delta_S(x), the K_i(x)-weighted average of the
/// LADF over the trimmed sample. One value per continuous coordinate.
inline EffectEstimate average_derivative_at(const MeanFit& fit, const ObservationTable& table,
                                            const Eigen::VectorXd& v_hat, const TrimRule& trim,
                                            const XPoint& x, const TreatedWeightSpec& spec,
                                            const Eigen::VectorXd& weights = {}) {
    const auto ts = detail::trimmed_sample(table, v_hat, trim, weights);
    const Eigen::VectorXd kernel = detail::treated_kernel(table, ts, spec);
    const Eigen::VectorXd kw = kernel.array() * ts.weights.array();
    const double ksum = kw.sum();
    if (ksum <= 0.0) throw EmptyConditioningCell("no trimmed rows match the conditioning value");

    EffectEstimate out;
    out.name = "avg_derivative_at";
    out.axes = {"coordinate"};
    out.meta.c_bar = trim.c_bar;
    out.meta.n_selected = ts.n_selected;
    out.meta.n_trimmed = static_cast<int>(ts.rows.size());

    const auto vars = continuous_vars(fit.basis, fit.indicator_vars);
    for (std::size_t c = 0; c < vars.size(); ++c) {
        const Eigen::MatrixXd deriv =
            fit.basis.derivative(static_cast<int>(ts.rows.size()),
                                 override_provider(table, ts.rows, x, &ts.v), vars[c],
                                 fit.indicator_vars);
        out.grid.push_back({static_cast<double>(c)});
        out.values.push_back(kw.dot(deriv * fit.beta) / ksum);
    }
    return out;
}

/// Average derivative: delta_S = sum_i w_i T_i delta-hat(X_i, V-hat_i) / sum w T.
inline EffectEstimate average_derivative(const MeanFit& fit, const ObservationTable& table,
                                         const Eigen::VectorXd& v_hat, const TrimRule& trim,
                                         const Eigen::VectorXd& weights = {}) {
    const auto ts = detail::trimmed_sample(table, v_hat, trim, weights);
    const double wsum = ts.weights.sum();

    EffectEstimate out;
    out.name = "avg_derivative";
    out.axes = {"coordinate"};
    out.meta.c_bar = trim.c_bar;
    out.meta.n_selected = ts.n_selected;
    out.meta.n_trimmed = static_cast<int>(ts.rows.size());

    const auto vars = continuous_vars(fit.basis, fit.indicator_vars);
    for (std::size_t c = 0; c < vars.size(); ++c) {
        const Eigen::MatrixXd deriv = basis_derivative(fit.basis, table, ts.rows, vars[c], &ts.v);
        out.grid.push_back({static_cast<double>(c)});
        out.values.push_back(ts.weights.dot(deriv * fit.beta) / wsum);
    }
    return out;
}

/// Pointwise difference of two effects on identical grids.
inline EffectEstimate contrast(const EffectEstimate& at_x1, const EffectEstimate& at_x0) {
    if (at_x1.values.size() != at_x0.values.size())
        throw Error("contrast: effect grids differ in size");
    EffectEstimate out = at_x1;
    out.name = at_x1.name + "_contrast";
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= at_x0.values[i];
    return out;
}

}  // namespace cfsel
