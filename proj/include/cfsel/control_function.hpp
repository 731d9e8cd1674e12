#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cfsel/basis.hpp"
#include "cfsel/errors.hpp"
#include "cfsel/math.hpp"
#include "cfsel/solvers.hpp"
#include "cfsel/table.hpp"

namespace cfsel {

// Evaluated control values are kept strictly inside (0,1) so downstream
// logs and inversions stay finite.
inline constexpr double kProbClamp = 1e-6;

struct ThresholdGrid {
    std::vector<double> thresholds;  // strictly increasing, first element 0

    void validate() const {
        if (thresholds.empty() || thresholds.front() != 0.0)
            throw Error("threshold grid must start at 0");
        for (std::size_t k = 1; k < thresholds.size(); ++k)
            if (thresholds[k] <= thresholds[k - 1])
                throw Error("threshold grid must be strictly increasing");
    }
};

/// Distribution-regression threshold grid: 0 plus all distinct selected C
/// values up to c_bar, thinned to `max_thresholds` quantile-spaced points
/// when there are more.
inline ThresholdGrid make_threshold_grid(const ObservationTable& table, double c_bar,
                                         int max_thresholds = 200) {
    std::vector<double> cs;
    for (int i = 0; i < table.n(); ++i)
        if (table.selected(i) && table.c[i] <= c_bar) cs.push_back(table.c[i]);
    if (cs.empty()) throw EmptyTrimmedSample("no selected C values at or below c_bar");
    std::sort(cs.begin(), cs.end());
    cs.erase(std::unique(cs.begin(), cs.end()), cs.end());

    ThresholdGrid grid;
    grid.thresholds.push_back(0.0);
    if (static_cast<int>(cs.size()) <= max_thresholds) {
        grid.thresholds.insert(grid.thresholds.end(), cs.begin(), cs.end());
    } else {
        for (int k = 1; k <= max_thresholds; ++k) {
            const double q =
                quantile_sorted(cs, static_cast<double>(k) / static_cast<double>(max_thresholds));
            if (q > grid.thresholds.back()) grid.thresholds.push_back(q);
        }
    }
    grid.validate();
    return grid;
}

struct ControlFunctionFit {
    ThresholdGrid grid;
    BasisSpec basis;                        // r(z)
    std::vector<Eigen::VectorXd> pi;        // coefficients per threshold
    std::vector<SolveReport> reports;

    const Eigen::VectorXd& pi_at_zero() const { return pi.front(); }

    /// Index of the largest positive threshold <= c; sets *below_grid when
    /// c falls under the smallest positive threshold (that fit is used).
    int step_index(double c, bool* below_grid = nullptr) const {
        if (!(c > 0.0)) throw Error("control function is defined for c > 0 only");
        const auto& t = grid.thresholds;
        auto it = std::upper_bound(t.begin() + 1, t.end(), c);
        if (it == t.begin() + 1) {
            if (below_grid) *below_grid = true;
            return 1;
        }
        return static_cast<int>(std::distance(t.begin(), it)) - 1;
    }
};

/// Step 1: per-threshold weighted logistic distribution regression of
/// 1{C <= c} on r(Z) over all rows (censored rows included). Fits are
/// warm-started from the previous threshold.
inline ControlFunctionFit fit_control_function_design(const Eigen::MatrixXd& r_design,
                                                      const Eigen::VectorXd& c,
                                                      const BasisSpec& basis,
                                                      const ThresholdGrid& grid,
                                                      const Eigen::VectorXd& weights) {
    grid.validate();
    const int n = static_cast<int>(c.size());

    ControlFunctionFit fit;
    fit.grid = grid;
    fit.basis = basis;
    fit.pi.reserve(grid.thresholds.size());
    fit.reports.reserve(grid.thresholds.size());

    Eigen::VectorXd labels(n);
    const Eigen::VectorXd* warm = nullptr;
    bool rank_checked = false;
    for (double threshold : grid.thresholds) {
        for (int i = 0; i < n; ++i) labels[i] = (c[i] <= threshold) ? 1.0 : 0.0;
        try {
            // Every threshold shares the design and weights, so the rank
            // check from the first fit covers the whole path.
            SolveReport report =
                fit_weighted_logit(r_design, labels, weights, warm, 100, !rank_checked);
            rank_checked = true;
            fit.pi.push_back(report.coefficients);
            fit.reports.push_back(std::move(report));
        } catch (const Error& e) {
            throw Error("threshold " + std::to_string(threshold) + ": " + e.what());
        }
        warm = &fit.pi.back();
    }
    return fit;
}

inline ControlFunctionFit fit_control_function(const ObservationTable& table,
                                               const BasisSpec& basis, const ThresholdGrid& grid,
                                               const Eigen::VectorXd& weights) {
    std::vector<int> all_rows(static_cast<std::size_t>(table.n()));
    for (int i = 0; i < table.n(); ++i) all_rows[static_cast<std::size_t>(i)] = i;
    const Eigen::MatrixXd r_design = build_basis(basis, table, all_rows);
    return fit_control_function_design(r_design, table.c, basis, grid, weights);
}

/// V-hat for one evaluation point: Lambda(r'pi) at the stepped threshold,
/// clamped into (0,1). `r_row` is the already-built r(z) vector.
inline double evaluate_v(const ControlFunctionFit& fit, double c, const Eigen::VectorXd& r_row,
                         bool* below_grid = nullptr) {
    const int idx = fit.step_index(c, below_grid);
    const double p = logistic_cdf(r_row.dot(fit.pi[static_cast<std::size_t>(idx)]));
    return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

/// Estimated censoring probability at z: Lambda(r(z)'pi(0)).
inline double selection_prob_at_zero(const ControlFunctionFit& fit, const Eigen::VectorXd& r_row) {
    const double p = logistic_cdf(r_row.dot(fit.pi_at_zero()));
    return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

/// Control values for every row of a table (NaN on censored rows).
/// `below_grid_count`, when given, receives the number of selected rows
/// whose C fell under the smallest positive threshold.
inline Eigen::VectorXd control_values(const ControlFunctionFit& fit, const ObservationTable& table,
                                      int* below_grid_count = nullptr) {
    std::vector<int> all_rows(static_cast<std::size_t>(table.n()));
    for (int i = 0; i < table.n(); ++i) all_rows[static_cast<std::size_t>(i)] = i;
    const Eigen::MatrixXd r_design = build_basis(fit.basis, table, all_rows);

    Eigen::VectorXd v(table.n());
    int flagged = 0;
    for (int i = 0; i < table.n(); ++i) {
        if (!table.selected(i)) {
            v[i] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        bool below = false;
        v[i] = evaluate_v(fit, table.c[i], r_design.row(i).transpose(), &below);
        flagged += below ? 1 : 0;
    }
    if (below_grid_count) *below_grid_count = flagged;
    return v;
}

/// Diagnostic: number of (row, adjacent-threshold) pairs where the fitted
/// CDF path decreases in c. The estimator keeps raw per-threshold fits,
/// so this count is reported rather than corrected.
inline long count_nonmonotone_paths(const ControlFunctionFit& fit, const ObservationTable& table) {
    std::vector<int> all_rows(static_cast<std::size_t>(table.n()));
    for (int i = 0; i < table.n(); ++i) all_rows[static_cast<std::size_t>(i)] = i;
    const Eigen::MatrixXd r_design = build_basis(fit.basis, table, all_rows);
    long count = 0;
    for (int i = 0; i < table.n(); ++i) {
        double prev = -1.0;
        for (const auto& pi : fit.pi) {
            const double cur = logistic_cdf(r_design.row(i).dot(pi));
            if (cur < prev - 1e-12) ++count;
            prev = cur;
        }
    }
    return count;
}

/// Membership check for the identification set: (x, v) is a member when
/// some z compatible with x makes selection possible at rank v, i.e.
/// v > min over the pool of the estimated censoring probability.
inline bool identification_set_member(const ControlFunctionFit& fit, double v,
                                      const Eigen::MatrixXd& r_pool) {
    if (r_pool.rows() == 0) throw Error("identification set: empty z pool");
    double lo = 1.0;
    for (int i = 0; i < r_pool.rows(); ++i)
        lo = std::min(lo, selection_prob_at_zero(fit, r_pool.row(i).transpose()));
    return v > lo;
}

/// Builds the r(z) pool for identification checks by substituting the
/// candidate x into every listed row of the table.
inline Eigen::MatrixXd identification_pool(const ControlFunctionFit& fit,
                                           const ObservationTable& table,
                                           const std::vector<int>& rows,
                                           const std::map<std::string, double>& x_values) {
    return fit.basis.build(static_cast<int>(rows.size()),
                           override_provider(table, rows, x_values));
}

}  // namespace cfsel
