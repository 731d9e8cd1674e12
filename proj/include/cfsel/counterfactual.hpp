#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cfsel/control_function.hpp"
#include "cfsel/effects.hpp"
#include "cfsel/errors.hpp"
#include "cfsel/local_effects.hpp"
#include "cfsel/table.hpp"

namespace cfsel {

/// Everything one group contributes to a counterfactual: its control
/// function (including the threshold-zero fit), its outcome distribution
/// regression path, and its own selected-and-trimmed rows with cached
/// designs. All groups in one run must share both basis conventions.
struct GroupArtifacts {
    std::string label;
    ControlFunctionFit cf;
    DistributionFit dr;
    TrimRule trim;

    ObservationTable rows;          // this group's sub-table
    Eigen::VectorXd v_hat;          // per row (NaN censored)
    std::vector<int> trimmed_rows;  // indices into `rows`
    Eigen::MatrixXd r_design;       // r(z) on trimmed rows
    Eigen::MatrixXd w_design;       // w(x, v_hat) on trimmed rows
    Eigen::VectorXd v_trimmed;      // v_hat on trimmed rows
    Eigen::VectorXd weights;        // caller weights on trimmed rows
};

inline GroupArtifacts make_group_artifacts(const ObservationTable& group_table,
                                           const std::string& label, const BasisSpec& r_basis,
                                           const BasisSpec& w_basis, const TrimRule& trim,
                                           const std::vector<double>& y_grid,
                                           const Eigen::VectorXd& weights = {},
                                           int max_thresholds = 200) {
    GroupArtifacts g;
    g.label = label;
    g.rows = group_table;
    g.trim = trim;

    const Eigen::VectorXd w_all =
        weights.size() == 0 ? Eigen::VectorXd::Ones(group_table.n()) : weights;
    const auto grid = make_threshold_grid(group_table, trim.c_bar, max_thresholds);
    g.cf = fit_control_function(group_table, r_basis, grid, w_all);
    g.v_hat = control_values(g.cf, group_table);
    g.dr = fit_ldsf(group_table, g.v_hat, w_basis, trim, y_grid, w_all);

    const auto t = trim_indicator(group_table, trim);
    for (int i = 0; i < group_table.n(); ++i)
        if (t[i] == 1.0) g.trimmed_rows.push_back(i);
    const int m = static_cast<int>(g.trimmed_rows.size());
    g.v_trimmed.resize(m);
    g.weights.resize(m);
    for (int k = 0; k < m; ++k) {
        g.v_trimmed[k] = g.v_hat[g.trimmed_rows[static_cast<std::size_t>(k)]];
        g.weights[k] = w_all[g.trimmed_rows[static_cast<std::size_t>(k)]];
    }
    g.r_design = build_basis(r_basis, group_table, g.trimmed_rows);
    g.w_design = build_basis(w_basis, group_table, g.trimmed_rows, &g.v_trimmed);
    return g;
}

/// Counterfactual distribution G_{<t|k,r>}: group-t outcome coefficients,
/// averaged over group-k rows that pass group-r's selection condition
/// V-hat_i > Lambda(R_i' pi_r(0)).
inline EffectEstimate counterfactual_distribution(const GroupArtifacts& t, const GroupArtifacts& k,
                                                  const GroupArtifacts& r,
                                                  const std::vector<double>& y_grid) {
    if (!(t.dr.basis == k.dr.basis) || !(r.cf.basis == k.cf.basis))
        throw BasisMismatch("groups were fitted with different basis conventions");

    const int m = static_cast<int>(k.trimmed_rows.size());
    std::vector<int> passing;
    for (int i = 0; i < m; ++i) {
        const double threshold = selection_prob_at_zero(r.cf, k.r_design.row(i).transpose());
        if (k.v_trimmed[i] > threshold) passing.push_back(i);
    }
    double wsum = 0.0;
    for (int i : passing) wsum += k.weights[i];
    if (passing.empty() || wsum <= 0.0)
        throw EmptySelectedCell("no group-" + k.label + " rows pass the group-" + r.label +
                                " selection condition");

    // Identification heuristic: group-k passing support should sit inside
    // the group-t trimmed support, coordinate by coordinate.
    EffectEstimate out;
    out.name = "counterfactual<" + t.label + "|" + k.label + "," + r.label + ">";
    out.axes = {"y"};
    out.meta.c_bar = k.trim.c_bar;
    out.meta.n_selected = m;
    out.meta.n_trimmed = static_cast<int>(passing.size());
    {
        for (int col = 0; col < t.w_design.cols(); ++col) {
            const double t_lo = t.w_design.col(col).minCoeff();
            const double t_hi = t.w_design.col(col).maxCoeff();
            double k_lo = 1e300, k_hi = -1e300;
            for (int i : passing) {
                k_lo = std::min(k_lo, k.w_design(i, col));
                k_hi = std::max(k_hi, k.w_design(i, col));
            }
            if (k_lo < t_lo - 1e-12 || k_hi > t_hi + 1e-12) {
                out.meta.warnings.push_back(
                    "support: passing group-" + k.label + " design column " + std::to_string(col) +
                    " leaves the group-" + t.label + " trimmed range");
                break;
            }
        }
    }

    for (double y : y_grid) {
        const int idx = detail::step_index(t.dr.y_grid, y);
        double value;
        if (idx < 0) {
            value = kProbClamp;
        } else {
            const auto& beta = t.dr.beta_path[static_cast<std::size_t>(idx)];
            double acc = 0.0;
            for (int i : passing) acc += k.weights[i] * logistic_cdf(k.w_design.row(i).dot(beta));
            value = acc / wsum;
        }
        out.grid.push_back({y});
        out.values.push_back(value);
    }
    return out;
}

/// Three-term quantile decomposition between groups 1 and 0:
///   selection   = Q<1|1,1> - Q<1|1,0>
///   composition = Q<1|1,0> - Q<1|0,0>
///   structure   = Q<1|0,0> - Q<0|0,0>
/// The total is stored as their sum, so the telescoping identity holds
/// exactly by construction.
struct DecompositionResult {
    std::vector<double> taus;
    std::vector<double> selection, composition, structure, total;
    std::vector<double> q11, q10, q100, q000;  // underlying quantiles per tau
    std::vector<double> y_grid;

    std::vector<double> flat() const {
        std::vector<double> out;
        for (std::size_t i = 0; i < taus.size(); ++i) {
            out.push_back(selection[i]);
            out.push_back(composition[i]);
            out.push_back(structure[i]);
            out.push_back(total[i]);
        }
        return out;
    }
};

inline DecompositionResult decompose(const GroupArtifacts& g1, const GroupArtifacts& g0,
                                     const std::vector<double>& y_grid,
                                     const std::vector<double>& taus) {
    const auto d11 = counterfactual_distribution(g1, g1, g1, y_grid);
    const auto d10 = counterfactual_distribution(g1, g1, g0, y_grid);
    const auto d100 = counterfactual_distribution(g1, g0, g0, y_grid);
    const auto d000 = counterfactual_distribution(g0, g0, g0, y_grid);

    DecompositionResult out;
    out.taus = taus;
    out.y_grid = y_grid;
    for (double tau : taus) {
        const double q11 = generalized_inverse(y_grid, d11.values, tau);
        const double q10 = generalized_inverse(y_grid, d10.values, tau);
        const double q100 = generalized_inverse(y_grid, d100.values, tau);
        const double q000 = generalized_inverse(y_grid, d000.values, tau);
        out.q11.push_back(q11);
        out.q10.push_back(q10);
        out.q100.push_back(q100);
        out.q000.push_back(q000);
        out.selection.push_back(q11 - q10);
        out.composition.push_back(q10 - q100);
        out.structure.push_back(q100 - q000);
        out.total.push_back(out.selection.back() + out.composition.back() + out.structure.back());
    }
    return out;
}

}  // namespace cfsel
