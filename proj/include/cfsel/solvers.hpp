#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "cfsel/errors.hpp"
#include "cfsel/math.hpp"

namespace cfsel {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SolveReport {
    VectorXd coefficients;
    bool converged = false;
    int iterations = 0;
    // Sup-norm of the gradient at the solution; for quantile regression the
    // distance of the subgradient from its admissible box (0 when inside).
    double gradient_norm = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

// Indices of strictly positive weights. Zero-weight rows are deleted up
// front so they cannot influence any solver output.
inline std::vector<int> active_rows(const VectorXd& weights) {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(weights.size()));
    for (int i = 0; i < weights.size(); ++i) {
        if (weights[i] < 0.0) throw Error("negative weight at row " + std::to_string(i));
        if (weights[i] > 0.0) idx.push_back(i);
    }
    return idx;
}

inline MatrixXd take_rows(const MatrixXd& m, const std::vector<int>& idx) {
    MatrixXd out(static_cast<int>(idx.size()), m.cols());
    for (int k = 0; k < out.rows(); ++k) out.row(k) = m.row(idx[static_cast<std::size_t>(k)]);
    return out;
}

inline VectorXd take(const VectorXd& v, const std::vector<int>& idx) {
    VectorXd out(static_cast<int>(idx.size()));
    for (int k = 0; k < out.size(); ++k) out[k] = v[idx[static_cast<std::size_t>(k)]];
    return out;
}

}  // namespace detail

/// Weighted least squares. Solves the weighted normal equations by a
/// rank-revealing QR of the sqrt-weight scaled design.
inline SolveReport fit_weighted_least_squares(const MatrixXd& design, const VectorXd& response,
                                              const VectorXd& weights) {
    const auto rows = detail::active_rows(weights);
    const int p = static_cast<int>(design.cols());
    if (static_cast<int>(rows.size()) < p)
        throw SingularNormalEquations("fewer weighted rows than columns");

    const MatrixXd x = detail::take_rows(design, rows);
    const VectorXd y = detail::take(response, rows);
    const VectorXd w = detail::take(weights, rows);
    const VectorXd sw = w.array().sqrt();

    MatrixXd xs = sw.asDiagonal() * x;
    VectorXd ys = sw.array() * y.array();

    Eigen::ColPivHouseholderQR<MatrixXd> qr(xs);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) throw SingularNormalEquations("weighted design is rank deficient");

    SolveReport report;
    report.coefficients = qr.solve(ys);
    const VectorXd resid = y - x * report.coefficients;
    const VectorXd score = x.transpose() * (w.array() * resid.array()).matrix();
    const double scale = std::max(1.0, (x.transpose() * (w.array() * y.array()).matrix())
                                           .cwiseAbs()
                                           .maxCoeff());
    report.gradient_norm = score.cwiseAbs().maxCoeff() / scale;
    report.converged = report.gradient_norm <= 1e-10;
    report.iterations = 1;
    if (report.gradient_norm > 1e-8)
        throw SingularNormalEquations("normal equations violated beyond numerical tolerance");
    return report;
}

/// Weighted logistic MLE by Newton-Raphson with step-halving.
///
/// Convergence: sup-norm of the score <= tol_scale * (total weight mass),
/// with tol_scale = 1e-8, so the criterion is invariant to deleting
/// zero-weight rows. A coefficient norm above 1e4 is treated as evidence
/// that the likelihood has no interior maximizer.
///
/// check_rank = false skips the rank test; callers that fit many label
/// vectors on one design (distribution regression) verify rank once.
inline SolveReport fit_weighted_logit(const MatrixXd& design, const VectorXd& labels,
                                      const VectorXd& weights,
                                      const VectorXd* warm_start = nullptr,
                                      int max_iterations = 100, bool check_rank = true) {
    const auto rows = detail::active_rows(weights);
    const int p = static_cast<int>(design.cols());
    if (static_cast<int>(rows.size()) < p) throw SingularHessian("fewer weighted rows than columns");

    const MatrixXd x = detail::take_rows(design, rows);
    const VectorXd y = detail::take(labels, rows);
    const VectorXd w = detail::take(weights, rows);
    const int n = static_cast<int>(rows.size());

    bool has_zero = false, has_one = false;
    for (int i = 0; i < n; ++i) (y[i] > 0.5 ? has_one : has_zero) = true;
    if (!has_zero || !has_one)
        throw QuasiSeparation("all labels identical among positively weighted rows");

    if (check_rank) {
        Eigen::ColPivHouseholderQR<MatrixXd> qr(w.array().sqrt().matrix().asDiagonal() * x);
        qr.setThreshold(1e-10);
        if (qr.rank() < p) throw SingularHessian("weighted design is rank deficient");
    }

    const double wmass = w.sum();
    const double tol = 1e-8 * wmass;
    // Iterate past the contract tolerance while progress lasts so warm- and
    // cold-started runs land on the same optimum to well below 1e-6.
    const double tol_strict = 1e-10 * wmass;

    // One pass yields the likelihood and the fitted means together: the
    // same exp(.) serves Lambda(eta) and log Lambda(eta).
    struct Eval {
        double ll;
        VectorXd mu;
    };
    VectorXd eta(n);
    auto evaluate = [&](const VectorXd& b) {
        Eval out;
        out.mu.resize(n);
        out.ll = 0.0;
        eta.noalias() = x * b;
        for (int i = 0; i < n; ++i) {
            double log_lam1;  // log Lambda(eta)
            if (eta[i] >= 0.0) {
                const double e = std::exp(-eta[i]);
                out.mu[i] = 1.0 / (1.0 + e);
                log_lam1 = -std::log1p(e);
            } else {
                const double e = std::exp(eta[i]);
                out.mu[i] = e / (1.0 + e);
                log_lam1 = eta[i] - std::log1p(e);
            }
            // log Lambda(-eta) = log Lambda(eta) - eta.
            out.ll += w[i] * (y[i] > 0.5 ? log_lam1 : log_lam1 - eta[i]);
        }
        return out;
    };

    VectorXd beta = (warm_start && warm_start->size() == p) ? *warm_start : VectorXd::Zero(p);
    Eval cur = evaluate(beta);

    double gnorm = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool stalled = false;
    for (int iter = 1; iter <= max_iterations; ++iter) {
        const VectorXd score = x.transpose() * (w.array() * (y - cur.mu).array()).matrix();
        gnorm = score.cwiseAbs().maxCoeff();
        iterations = iter - 1;
        if (gnorm <= tol_strict || (stalled && gnorm <= tol)) break;

        const VectorXd lam = cur.mu.array() * (1.0 - cur.mu.array());
        MatrixXd hess = x.transpose() * (w.array() * lam.array()).matrix().asDiagonal() * x;
        Eigen::LDLT<MatrixXd> ldlt(hess);
        if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
            throw SingularHessian("Newton step: information matrix not positive definite");
        const VectorXd dir = ldlt.solve(score);

        // Step-halving with a float-noise slack: near the optimum a full
        // Newton step improves the likelihood by less than its rounding
        // error, which must not be mistaken for a failed step.
        const double slack = 1e-12 * (1.0 + std::abs(cur.ll));
        double step = 1.0;
        VectorXd candidate = beta + dir;
        Eval next = evaluate(candidate);
        while (next.ll < cur.ll - slack && step > 1e-12) {
            step *= 0.5;
            candidate = beta + step * dir;
            next = evaluate(candidate);
        }
        stalled = next.ll <= cur.ll + slack;
        beta = std::move(candidate);
        cur = std::move(next);

        if (beta.norm() > 1e4)
            throw QuasiSeparation("coefficient norm exceeded 1e4 (no finite maximizer)");
    }
    if (gnorm > tol) throw NonConvergence("logit Newton hit the iteration cap");

    SolveReport report;
    report.coefficients = beta;
    report.converged = true;
    report.iterations = iterations;
    report.gradient_norm = gnorm;
    return report;
}

namespace detail {

// Per-coordinate subgradient box check for the weighted check loss. Rows
// with |residual| <= ztol are interpolated points whose subgradient may
// swing within [tau-1, tau]. Returns the largest distance from the
// admissible interval across coordinates (0 when optimal).
inline double quantile_certificate_gap(const MatrixXd& x, const VectorXd& y, double tau,
                                       const VectorXd& w, const VectorXd& beta, double ztol) {
    const int n = static_cast<int>(x.rows());
    const int p = static_cast<int>(x.cols());
    VectorXd g = VectorXd::Zero(p);
    VectorXd slack_lo = VectorXd::Zero(p), slack_hi = VectorXd::Zero(p);
    VectorXd scale = VectorXd::Zero(p);
    for (int i = 0; i < n; ++i) {
        const double r = y[i] - x.row(i).dot(beta);
        if (std::abs(r) <= ztol) {
            // Counted at s_i = tau-1 in g; remaining swing is [0,1]*w*x_ij.
            g += w[i] * (tau - 1.0) * x.row(i).transpose();
            for (int j = 0; j < p; ++j) {
                const double v = w[i] * x(i, j);
                if (v > 0) slack_hi[j] += v;
                else slack_lo[j] += v;
            }
        } else {
            g += w[i] * (tau - (r < 0.0 ? 1.0 : 0.0)) * x.row(i).transpose();
        }
        scale += (w[i] * x.row(i).cwiseAbs()).transpose();
    }
    double gap = 0.0;
    for (int j = 0; j < p; ++j) {
        const double target = -g[j];
        double d = 0.0;
        if (target < slack_lo[j]) d = slack_lo[j] - target;
        else if (target > slack_hi[j]) d = target - slack_hi[j];
        gap = std::max(gap, d / std::max(scale[j], 1e-300));
    }
    return gap;
}

inline double check_loss(const MatrixXd& x, const VectorXd& y, double tau, const VectorXd& w,
                         const VectorXd& beta) {
    double loss = 0.0;
    for (int i = 0; i < x.rows(); ++i) {
        const double r = y[i] - x.row(i).dot(beta);
        loss += w[i] * r * (tau - (r < 0.0 ? 1.0 : 0.0));
    }
    return loss;
}

// Greedy full-rank basis of p rows, preferring small |residual|.
inline std::vector<int> initial_quantile_basis(const MatrixXd& x, const VectorXd& resid) {
    const int n = static_cast<int>(x.rows());
    const int p = static_cast<int>(x.cols());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return std::abs(resid[a]) < std::abs(resid[b]); });
    std::vector<int> basis;
    MatrixXd sub(p, p);
    for (int cand : order) {
        sub.row(static_cast<int>(basis.size())) = x.row(cand);
        Eigen::ColPivHouseholderQR<MatrixXd> qr(
            sub.topRows(static_cast<int>(basis.size()) + 1));
        qr.setThreshold(1e-10);
        if (qr.rank() == static_cast<int>(basis.size()) + 1) {
            basis.push_back(cand);
            if (static_cast<int>(basis.size()) == p) return basis;
        }
    }
    throw DegenerateDesign("no full-rank basis among weighted rows");
}

}  // namespace detail

/// Weighted quantile regression: minimizes sum_i w_i rho_tau(y_i - x_i'b).
///
/// Two-phase solver. An IRLS pass on a smoothed check loss (smoothing
/// parameter decreasing to 1e-6) lands near the optimum; a pivoting phase
/// then walks exact-fit basic solutions until the subgradient box condition
/// certifies optimality. The returned solution interpolates p observations
/// exactly, so its loss can be compared exactly against enumeration oracles.
inline SolveReport fit_weighted_quantile(const MatrixXd& design, const VectorXd& response,
                                         double tau, const VectorXd& weights,
                                         int max_pivots = 2000) {
    if (!(tau > 0.0 && tau < 1.0)) throw Error("tau must lie strictly inside (0,1)");
    const auto rows = detail::active_rows(weights);
    const int p = static_cast<int>(design.cols());
    const int n = static_cast<int>(rows.size());
    if (n < p) throw DegenerateDesign("fewer positively weighted rows than columns");

    const MatrixXd x = detail::take_rows(design, rows);
    const VectorXd y = detail::take(response, rows);
    const VectorXd w = detail::take(weights, rows);

    {
        Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
        qr.setThreshold(1e-10);
        if (qr.rank() < p) throw DegenerateDesign("design is rank deficient");
    }

    const double yscale = std::max(1.0, y.cwiseAbs().maxCoeff());
    const double ztol = 1e-9 * yscale;

    // --- phase 1: smoothed IRLS ---
    VectorXd beta;
    {
        // Start from weighted least squares on the same rows.
        const VectorXd sw = w.array().sqrt();
        Eigen::ColPivHouseholderQR<MatrixXd> qr(sw.asDiagonal() * x);
        beta = qr.solve((sw.array() * y.array()).matrix());
    }
    int irls_iterations = 0;
    for (double delta = 0.1 * yscale; delta >= 1e-6 * yscale; delta *= 0.1) {
        for (int it = 0; it < 20; ++it) {
            VectorXd omega(n);
            for (int i = 0; i < n; ++i) {
                const double r = y[i] - x.row(i).dot(beta);
                const double a = (r < 0.0) ? (1.0 - tau) : tau;
                omega[i] = w[i] * a / std::max(delta, std::abs(r));
            }
            const VectorXd sw = omega.array().sqrt();
            Eigen::LDLT<MatrixXd> ldlt(x.transpose() * omega.asDiagonal() * x);
            if (ldlt.info() != Eigen::Success) break;
            const VectorXd next = ldlt.solve(x.transpose() * (omega.array() * y.array()).matrix());
            ++irls_iterations;
            const double move = (next - beta).cwiseAbs().maxCoeff();
            beta = next;
            if (move < 0.1 * delta) break;
        }
    }

    // --- phase 2: pivot across exact-fit basic solutions ---
    VectorXd resid = y - x * beta;
    std::vector<int> basis = detail::initial_quantile_basis(x, resid);

    auto solve_basis = [&](const std::vector<int>& b) {
        MatrixXd xb(p, p);
        VectorXd yb(p);
        for (int k = 0; k < p; ++k) {
            xb.row(k) = x.row(b[static_cast<std::size_t>(k)]);
            yb[k] = y[b[static_cast<std::size_t>(k)]];
        }
        return std::pair<MatrixXd, VectorXd>(xb, yb);
    };

    int pivots = 0;
    while (true) {
        auto [xb, yb] = solve_basis(basis);
        Eigen::PartialPivLU<MatrixXd> lu(xb);
        beta = lu.solve(yb);
        resid = y - x * beta;

        // Find the steepest descending edge over the 2p basis directions.
        // Rates are compared relative to sum_i w_i |x_i'd| so the stopping
        // rule is invariant to the scaling of the direction.
        double best_rate = -1e-11;
        VectorXd best_dir;
        double best_abs_rate = 0.0;
        int best_k = -1;
        const MatrixXd xb_inv = lu.inverse();
        for (int k = 0; k < p; ++k) {
            const VectorXd dir = xb_inv.col(k);
            const VectorXd xd = x * dir;
            const double denom = std::max((w.array() * xd.cwiseAbs().array()).sum(), 1e-300);
            for (int sgn = 0; sgn < 2; ++sgn) {
                const double sign = sgn == 0 ? 1.0 : -1.0;
                double rate = 0.0;
                for (int i = 0; i < n; ++i) {
                    const double u = sign * xd[i];
                    if (std::abs(resid[i]) <= ztol) {
                        rate += w[i] * (u > 0.0 ? (1.0 - tau) * u : -tau * u);
                    } else {
                        rate -= w[i] * u * (tau - (resid[i] < 0.0 ? 1.0 : 0.0));
                    }
                }
                if (rate / denom < best_rate) {
                    best_rate = rate / denom;
                    best_abs_rate = rate;
                    best_dir = sign * dir;
                    best_k = k;
                }
            }
        }
        if (best_k < 0) break;  // no descending edge: optimal

        if (++pivots > max_pivots) throw NonConvergence("quantile pivoting hit the cap");

        // Walk along the edge; the derivative gains w_i*|x_i'd| as each
        // residual crosses zero. Stop at the crossing where it turns >= 0.
        const VectorXd xd = x * best_dir;
        std::vector<std::pair<double, int>> crossings;
        for (int i = 0; i < n; ++i) {
            if (std::abs(xd[i]) < 1e-14) continue;
            const double t = resid[i] / xd[i];
            if (t > ztol / std::max(std::abs(xd[i]), 1e-14)) crossings.emplace_back(t, i);
        }
        if (crossings.empty()) throw NonConvergence("unbounded descent edge in quantile solver");
        std::sort(crossings.begin(), crossings.end());
        double slope = best_abs_rate;
        int entering = -1;
        for (const auto& [t, i] : crossings) {
            slope += w[i] * std::abs(xd[i]);
            if (slope >= 0.0) {
                entering = i;
                break;
            }
        }
        if (entering < 0) throw NonConvergence("unbounded check loss descent");
        basis[static_cast<std::size_t>(best_k)] = entering;
    }

    // Canonical re-solve with basis rows in ascending order; keeps whichever
    // rounding of this vertex evaluates to the smaller loss so enumeration
    // oracles cannot beat the solver by one ulp.
    {
        std::sort(basis.begin(), basis.end());
        auto [xb, yb] = solve_basis(basis);
        const VectorXd canonical = xb.partialPivLu().solve(yb);
        if (detail::check_loss(x, y, tau, w, canonical) <= detail::check_loss(x, y, tau, w, beta))
            beta = canonical;
    }

    SolveReport report;
    report.coefficients = beta;
    report.iterations = irls_iterations + pivots;
    report.gradient_norm = detail::quantile_certificate_gap(x, y, tau, w, beta, ztol);
    report.converged = report.gradient_norm <= 1e-7;
    if (!report.converged) throw NonConvergence("subgradient certificate failed after pivoting");
    return report;
}

}  // namespace cfsel
