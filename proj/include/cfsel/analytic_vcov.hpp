#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cfsel/basis.hpp"
#include "cfsel/control_function.hpp"
#include "cfsel/errors.hpp"
#include "cfsel/local_effects.hpp"
#include "cfsel/math.hpp"
#include "cfsel/table.hpp"

namespace cfsel {

/// Influence-function variance of the second-stage mean coefficients,
/// accounting for the estimated control function:
///
///   sqrt(n)(beta-hat - beta0) ~ N(0, J^{-1} Omega J^{-1}),
///   J = E[W W' T],   Omega = Var[f1 + f2],
///   f1(A)   = (W'beta - Y) W T,
///   f2(a)   = E[{(W'beta - Y) Wdot + W (Wdot'beta)} T l(a, C, R)],
///   l(A,c,r) = lambda(r'pi(c)) [1{C<=c} - Lambda(R'pi(c))] r' H(c)^{-1} R,
///   H(c)    = E[Lambda(R'pi(c)) (1 - Lambda(R'pi(c))) R R'].
///
/// Everything is replaced by its sample analog; the double sum in f2 is
/// O(n^2) and accepted at the target sizes.
struct AnalyticVcov {
    Eigen::MatrixXd j;
    Eigen::MatrixXd omega;
    Eigen::MatrixXd vcov;  // J^{-1} Omega J^{-1} / n

    Eigen::VectorXd standard_errors() const {
        return vcov.diagonal().array().sqrt();
    }
};

/// Sample mean of the first-stage influence function at one (c, r): zero
/// at the MLE by the first-order condition. Exposed as a diagnostic.
inline double ell_sample_mean(const ControlFunctionFit& cf, const Eigen::MatrixXd& r_design,
                              const Eigen::VectorXd& c, double threshold,
                              const Eigen::VectorXd& r_eval) {
    const int n = static_cast<int>(c.size());
    const int idx = threshold == 0.0 ? 0 : cf.step_index(threshold);
    const auto& pi = cf.pi[static_cast<std::size_t>(idx)];

    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(r_design.cols(), r_design.cols());
    Eigen::VectorXd score_sum = Eigen::VectorXd::Zero(r_design.cols());
    for (int i = 0; i < n; ++i) {
        const double p = logistic_cdf(r_design.row(i).dot(pi));
        h += p * (1.0 - p) * r_design.row(i).transpose() * r_design.row(i);
        score_sum += ((c[i] <= threshold ? 1.0 : 0.0) - p) * r_design.row(i).transpose();
    }
    h /= n;
    score_sum /= n;
    const double lam = logistic_pdf(r_eval.dot(pi));
    return lam * r_eval.dot(h.ldlt().solve(score_sum));
}

inline AnalyticVcov analytic_vcov_beta(const ObservationTable& table, const ControlFunctionFit& cf,
                                       const Eigen::VectorXd& v_hat, const MeanFit& fit,
                                       const TrimRule& trim) {
    const int n = table.n();
    const int dw = fit.basis.dimension();

    std::vector<int> all_rows(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all_rows[static_cast<std::size_t>(i)] = i;
    const Eigen::MatrixXd r_design = build_basis(cf.basis, table, all_rows);
    const int dr = static_cast<int>(r_design.cols());

    const auto t = trim_indicator(table, trim);
    std::vector<int> trimmed;
    for (int i = 0; i < n; ++i)
        if (t[i] == 1.0) trimmed.push_back(i);
    if (static_cast<int>(trimmed.size()) < dw)
        throw EmptyTrimmedSample("trimmed sample smaller than the basis dimension");

    Eigen::VectorXd v_trim(static_cast<int>(trimmed.size()));
    for (std::size_t k = 0; k < trimmed.size(); ++k) v_trim[static_cast<int>(k)] = v_hat[trimmed[k]];
    const Eigen::MatrixXd w_design = build_basis(fit.basis, table, trimmed, &v_trim);
    const Eigen::MatrixXd wdot_design =
        fit.basis.derivative(static_cast<int>(trimmed.size()),
                             table_provider(table, trimmed, &v_trim), "v", fit.indicator_vars);

    // J-hat and f1 on the trimmed rows.
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(dw, dw);
    for (int k = 0; k < w_design.rows(); ++k)
        j += w_design.row(k).transpose() * w_design.row(k);
    j /= n;
    {
        Eigen::LDLT<Eigen::MatrixXd> probe(j);
        if (probe.info() != Eigen::Success || (probe.vectorD().array() <= 1e-12).any())
            throw SingularJ("E[W W' T] is numerically rank deficient");
    }

    Eigen::MatrixXd f(n, dw);
    f.setZero();
    for (std::size_t k = 0; k < trimmed.size(); ++k) {
        const int i = trimmed[k];
        const double resid = w_design.row(static_cast<int>(k)).dot(fit.beta) - table.y[i];
        f.row(i) = resid * w_design.row(static_cast<int>(k));
    }

    // f2: group the trimmed rows by their stepped threshold so the per-
    // threshold information matrices are inverted once each.
    std::vector<int> step_of(trimmed.size());
    std::vector<int> distinct_steps;
    for (std::size_t k = 0; k < trimmed.size(); ++k) {
        step_of[k] = cf.step_index(table.c[trimmed[k]]);
        if (std::find(distinct_steps.begin(), distinct_steps.end(), step_of[k]) ==
            distinct_steps.end())
            distinct_steps.push_back(step_of[k]);
    }

    // Per-step caches: H(c)^{-1}, Lambda(R_i' pi(c)) for every i, lambda at
    // the evaluation rows.
    std::vector<Eigen::MatrixXd> h_inv(distinct_steps.size());
    std::vector<Eigen::VectorXd> lam_all(distinct_steps.size());
    for (std::size_t s = 0; s < distinct_steps.size(); ++s) {
        const auto& pi = cf.pi[static_cast<std::size_t>(distinct_steps[s])];
        Eigen::VectorXd p(n);
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dr, dr);
        for (int i = 0; i < n; ++i) {
            p[i] = logistic_cdf(r_design.row(i).dot(pi));
            h += p[i] * (1.0 - p[i]) * r_design.row(i).transpose() * r_design.row(i);
        }
        h /= n;
        h_inv[s] = h.ldlt().solve(Eigen::MatrixXd::Identity(dr, dr));
        lam_all[s] = p;
    }

    // m_j = {(W_j'beta - Y_j) Wdot_j + W_j (Wdot_j'beta)} for trimmed j.
    Eigen::MatrixXd m(static_cast<int>(trimmed.size()), dw);
    for (std::size_t k = 0; k < trimmed.size(); ++k) {
        const int i = trimmed[k];
        const double resid = w_design.row(static_cast<int>(k)).dot(fit.beta) - table.y[i];
        const double slope = wdot_design.row(static_cast<int>(k)).dot(fit.beta);
        m.row(static_cast<int>(k)) =
            resid * wdot_design.row(static_cast<int>(k)) + slope * w_design.row(static_cast<int>(k));
    }

    // f2_i = n^{-1} sum_j m_j l(A_i, C_j, R_j).
    for (std::size_t k = 0; k < trimmed.size(); ++k) {
        const int jrow = trimmed[k];
        const std::size_t s = static_cast<std::size_t>(
            std::distance(distinct_steps.begin(),
                          std::find(distinct_steps.begin(), distinct_steps.end(), step_of[k])));
        const auto& pi = cf.pi[static_cast<std::size_t>(distinct_steps[s])];
        const double lam_j = logistic_pdf(r_design.row(jrow).dot(pi));
        const Eigen::VectorXd u = h_inv[s] * r_design.row(jrow).transpose();  // H(c)^{-1} R_j
        const double c_j = table.c[jrow];
        for (int i = 0; i < n; ++i) {
            const double ell = lam_j * ((table.c[i] <= c_j ? 1.0 : 0.0) - lam_all[s][i]) *
                               u.dot(r_design.row(i));
            f.row(i) += (ell / n) * m.row(static_cast<int>(k));
        }
    }

    Eigen::RowVectorXd mean = f.colwise().mean();
    Eigen::MatrixXd centered = f.rowwise() - mean;
    Eigen::MatrixXd omega = centered.transpose() * centered / n;

    AnalyticVcov out;
    out.j = j;
    out.omega = omega;
    const Eigen::MatrixXd j_inv = j.ldlt().solve(Eigen::MatrixXd::Identity(dw, dw));
    out.vcov = j_inv * omega * j_inv / n;
    return out;
}

}  // namespace cfsel
