#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cfsel/dgp.hpp"
#include "cfsel/math.hpp"
#include "cfsel/rng.hpp"

namespace cfsel {

// Closed-form local oracles for the gaussian kind; brute-force draws of
// eps | eta = v otherwise. These live beside the DGP so every estimator has
// an independent target to be checked against.

/// E[eps | eta = v] and sd(eps | eta = v) under the bivariate-normal latents.
inline double eps_mean_given_v(const DgpSpec& dgp, double v) {
    return dgp.rho * dgp.sigma_eps * normal_quantile(v);
}
inline double eps_sd_given_v(const DgpSpec& dgp) {
    return dgp.sigma_eps * std::sqrt(1.0 - dgp.rho * dgp.rho);
}

/// Draws of eps conditional on eta = v.
inline std::vector<double> draw_eps_given_v(const DgpSpec& dgp, double v, long ndraws,
                                            std::uint64_t seed) {
    Rng rng(seed);
    const double mu = eps_mean_given_v(dgp, v);
    const double sd = eps_sd_given_v(dgp);
    std::vector<double> out(static_cast<std::size_t>(ndraws));
    for (auto& e : out) e = mu + sd * rng.normal();
    return out;
}

/// Closed-form conditional mean E[g(x, eps) | eta = v]. For the
/// nonseparable kind this uses E[Phi(a + bZ)] = Phi(a / sqrt(1 + b^2)).
inline double oracle_lasf_closed(const DgpSpec& dgp, double x, double v) {
    const double mu = eps_mean_given_v(dgp, v);
    if (dgp.kind == DgpSpec::Kind::GaussianTobit3) return dgp.xbeta(x) + mu;
    const double sd = eps_sd_given_v(dgp);
    const double mean_phi = normal_cdf(mu / std::sqrt(1.0 + sd * sd));
    return dgp.xbeta(x) * (1.0 + 0.5 * mean_phi) + mu;
}

/// LASF oracle mu(x, v) = E[g(x, eps) | eta = v]. Brute force for the
/// nonseparable kind; the closed form above cross-checks it in tests.
inline double oracle_lasf(const DgpSpec& dgp, double x, double v, long ndraws = 10'000'000,
                          std::uint64_t seed = 977) {
    if (dgp.kind == DgpSpec::Kind::GaussianTobit3) return oracle_lasf_closed(dgp, x, v);
    const auto eps = draw_eps_given_v(dgp, v, ndraws, seed);
    double sum = 0.0;
    for (double e : eps) sum += dgp.outcome(x, e);
    return sum / static_cast<double>(eps.size());
}

/// LDSF oracle G(y, x, v) = P(g(x, eps) <= y | eta = v).
inline double oracle_ldsf(const DgpSpec& dgp, double y, double x, double v,
                          long ndraws = 10'000'000, std::uint64_t seed = 977) {
    if (dgp.kind == DgpSpec::Kind::GaussianTobit3)
        return normal_cdf((y - dgp.xbeta(x) - eps_mean_given_v(dgp, v)) / eps_sd_given_v(dgp));
    const auto eps = draw_eps_given_v(dgp, v, ndraws, seed);
    long count = 0;
    for (double e : eps) count += dgp.outcome(x, e) <= y ? 1 : 0;
    return static_cast<double>(count) / static_cast<double>(eps.size());
}

/// LQSF oracle q(tau, x, v).
inline double oracle_lqsf(const DgpSpec& dgp, double tau, double x, double v,
                          long ndraws = 10'000'000, std::uint64_t seed = 977) {
    if (dgp.kind == DgpSpec::Kind::GaussianTobit3)
        return dgp.xbeta(x) + eps_mean_given_v(dgp, v) + eps_sd_given_v(dgp) * normal_quantile(tau);
    auto eps = draw_eps_given_v(dgp, v, ndraws, seed);
    std::vector<double> g(eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) g[i] = dgp.outcome(x, eps[i]);
    std::sort(g.begin(), g.end());
    return quantile_sorted(g, tau);
}

/// One population draw used by the global oracles.
struct OracleDraw {
    double x, z1, eta, eps, c;
    bool selected;
};

inline std::vector<OracleDraw> oracle_population(const DgpSpec& dgp, long ndraws,
                                                 std::uint64_t seed) {
    Rng rng(seed);
    const double rho_c = std::sqrt(1.0 - dgp.rho * dgp.rho);
    std::vector<OracleDraw> pop(static_cast<std::size_t>(ndraws));
    for (auto& d : pop) {
        d.x = dgp.x_kind == DgpSpec::XKind::Normal ? dgp.x_scale * rng.normal()
                                                   : (rng.bernoulli(dgp.x_scale) ? 1.0 : 0.0);
        d.z1 = dgp.z1_sd * rng.normal();
        const double u = rng.normal();
        d.eta = normal_cdf(u);
        d.eps = dgp.sigma_eps * (dgp.rho * u + rho_c * rng.normal());
        d.c = std::max(dgp.selection_index(d.x, d.z1, u), 0.0);
        d.selected = d.c > 0.0;
    }
    return pop;
}

/// Averages f(draw) over the selected-and-trimmed population (c in (0, c_bar]).
/// An optional row filter restricts the conditioning cell further.
inline double oracle_trimmed_mean(const std::vector<OracleDraw>& pop, double c_bar,
                                  const std::function<double(const OracleDraw&)>& f,
                                  const std::function<bool(const OracleDraw&)>& keep = nullptr) {
    double sum = 0.0;
    long count = 0;
    for (const auto& d : pop) {
        if (!d.selected || d.c > c_bar) continue;
        if (keep && !keep(d)) continue;
        sum += f(d);
        ++count;
    }
    if (count == 0) throw Error("oracle: empty trimmed population cell");
    return sum / static_cast<double>(count);
}

/// ASF oracle mu_S(x) = E[mu(x, V) | selected, trimmed].
inline double oracle_asf(const DgpSpec& dgp, double x, double c_bar,
                         const std::vector<OracleDraw>& pop) {
    return oracle_trimmed_mean(
        pop, c_bar, [&](const OracleDraw& d) { return oracle_lasf_closed(dgp, x, d.eta); });
}

/// DSF oracle G_S(y, x) = E[G(y, x, V) | selected, trimmed]. Gaussian kind
/// only: the inner CDF must be closed form to keep the outer average exact.
inline double oracle_dsf(const DgpSpec& dgp, double y, double x, double c_bar,
                         const std::vector<OracleDraw>& pop) {
    if (dgp.kind != DgpSpec::Kind::GaussianTobit3)
        throw Error("oracle_dsf: closed form requires the gaussian kind");
    return oracle_trimmed_mean(pop, c_bar,
                               [&](const OracleDraw& d) { return oracle_ldsf(dgp, y, x, d.eta); });
}

/// QSF oracle by bisection on the (monotone) oracle DSF.
inline double oracle_qsf(const DgpSpec& dgp, double tau, double x, double c_bar,
                         const std::vector<OracleDraw>& pop, double y_lo, double y_hi) {
    double lo = y_lo, hi = y_hi;
    for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
        const double mid = 0.5 * (lo + hi);
        (oracle_dsf(dgp, mid, x, c_bar, pop) >= tau ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
}

/// ASF-on-the-treated oracle mu_S(x | x0) for exact conditioning on X = x0.
inline double oracle_asf_treated(const DgpSpec& dgp, double x, double x0, double c_bar,
                                 const std::vector<OracleDraw>& pop) {
    if (dgp.kind != DgpSpec::Kind::GaussianTobit3)
        throw Error("oracle_asf_treated: closed form requires the gaussian kind");
    return oracle_trimmed_mean(
        pop, c_bar, [&](const OracleDraw& d) { return dgp.xbeta(x) + eps_mean_given_v(dgp, d.eta); },
        [&](const OracleDraw& d) { return d.x == x0; });
}

/// Observed conditional mean of Y in the selected population (no control
/// function). This is what a naive regression converges to.
inline double oracle_naive_mean(const DgpSpec& dgp, double x0, const std::vector<OracleDraw>& pop) {
    double sum = 0.0;
    long count = 0;
    for (const auto& d : pop) {
        if (!d.selected || d.x != x0) continue;
        sum += dgp.outcome(d.x, d.eps);
        ++count;
    }
    if (count == 0) throw Error("oracle: empty naive cell");
    return sum / static_cast<double>(count);
}

/// Counterfactual distribution oracle per the definition
///   G_{<t|k,r>}(y) = E_k[ G_t(y, x, V) 1(V > F_{C_r}(0|z)) ] / E_k[ 1(V > F_{C_r}(0|z)) ],
/// with the outer average over group k's selected-and-trimmed population.
inline double oracle_counterfactual(const DgpSpec& dgp_t, const DgpSpec& dgp_r, double y,
                                    double c_bar_k, const std::vector<OracleDraw>& pop_k) {
    if (dgp_t.kind != DgpSpec::Kind::GaussianTobit3)
        throw Error("oracle_counterfactual: closed form requires the gaussian kind");
    double num = 0.0, den = 0.0;
    for (const auto& d : pop_k) {
        if (!d.selected || d.c > c_bar_k) continue;
        if (d.eta <= dgp_r.censor_prob(d.x, d.z1)) continue;
        num += oracle_ldsf(dgp_t, y, d.x, d.eta);
        den += 1.0;
    }
    if (den == 0.0) throw Error("oracle: empty counterfactual cell");
    return num / den;
}

}  // namespace cfsel
