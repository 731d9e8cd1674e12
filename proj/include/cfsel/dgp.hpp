#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cfsel/errors.hpp"
#include "cfsel/math.hpp"
#include "cfsel/rng.hpp"
#include "cfsel/table.hpp"

namespace cfsel {

/// Synthetic data-generating process
///
///   Y = g(X, eps)               if C > 0,
///   C = max(g0 + g1 X + g2 Z1 + u, 0),   u = Phi^{-1}(eta) ~ N(0,1),
///
/// with (eps, u) bivariate normal: eps = sigma_eps (rho u + sqrt(1-rho^2) e).
/// The excluded instrument Z1 is normal with a wide default scale so the
/// identification set covers the whole (x, v) test range.
struct DgpSpec {
    enum class Kind { GaussianTobit3, Nonseparable };
    enum class XKind { Normal, Binary };

    Kind kind = Kind::GaussianTobit3;
    double beta0 = 0.0;
    double beta1 = 1.0;
    double gamma0 = 0.5;
    double gamma1 = 0.5;
    double gamma2 = 1.0;
    double rho = 0.5;
    double sigma_eps = 1.0;
    XKind x_kind = XKind::Normal;
    double x_scale = 1.0;  // sd for Normal, P(X=1) for Binary
    double z1_sd = 2.0;
    std::string group_label = "0";

    void validate() const {
        if (!(rho > -1.0 && rho < 1.0)) throw Error("dgp: rho must be interior to (-1,1)");
        if (!(sigma_eps > 0.0)) throw Error("dgp: sigma_eps must be positive");
        if (x_kind == XKind::Binary && !(x_scale > 0.0 && x_scale < 1.0))
            throw Error("dgp: binary x probability must be in (0,1)");
    }

    double xbeta(double x) const { return beta0 + beta1 * x; }

    double outcome(double x, double eps) const {
        if (kind == Kind::GaussianTobit3) return xbeta(x) + eps;
        return xbeta(x) * (1.0 + 0.5 * normal_cdf(eps)) + eps;
    }

    double selection_index(double x, double z1, double u) const {
        return gamma0 + gamma1 * x + gamma2 * z1 + u;
    }

    /// True censoring probability F_C(0 | z) = Phi(-(g0 + g1 x + g2 z1)).
    double censor_prob(double x, double z1) const {
        return normal_cdf(-(gamma0 + gamma1 * x + gamma2 * z1));
    }
};

/// Per-row latent draws kept alongside a simulated table. On selected rows
/// the true control value equals eta by construction.
struct LatentTruth {
    Eigen::VectorXd eta;
    Eigen::VectorXd eps;
    std::vector<bool> selected;
    Eigen::VectorXd v_true;  // NaN where censored
};

inline std::pair<ObservationTable, LatentTruth> simulate(const DgpSpec& dgp, int n,
                                                         std::uint64_t seed) {
    dgp.validate();
    Rng rng(seed);

    ObservationTable table;
    table.y.resize(n);
    table.c.resize(n);
    table.z.resize(n, 2);
    table.z_names = {"x", "z1"};
    table.z_is_indicator = {dgp.x_kind == DgpSpec::XKind::Binary, false};
    table.x_names = {"x"};
    table.group.assign(static_cast<std::size_t>(n), dgp.group_label);

    LatentTruth truth;
    truth.eta.resize(n);
    truth.eps.resize(n);
    truth.selected.assign(static_cast<std::size_t>(n), false);
    truth.v_true.resize(n);

    const double rho_c = std::sqrt(1.0 - dgp.rho * dgp.rho);
    for (int i = 0; i < n; ++i) {
        const double x = dgp.x_kind == DgpSpec::XKind::Normal
                             ? dgp.x_scale * rng.normal()
                             : (rng.bernoulli(dgp.x_scale) ? 1.0 : 0.0);
        const double z1 = dgp.z1_sd * rng.normal();
        const double u = rng.normal();
        const double e = rng.normal();
        const double eps = dgp.sigma_eps * (dgp.rho * u + rho_c * e);

        const double index = dgp.selection_index(x, z1, u);
        const double c = std::max(index, 0.0);
        const bool sel = c > 0.0;

        table.z(i, 0) = x;
        table.z(i, 1) = z1;
        table.c[i] = c;
        table.y[i] = sel ? dgp.outcome(x, eps) : std::numeric_limits<double>::quiet_NaN();

        truth.eta[i] = normal_cdf(u);
        truth.eps[i] = eps;
        truth.selected[static_cast<std::size_t>(i)] = sel;
        truth.v_true[i] = sel ? truth.eta[i] : std::numeric_limits<double>::quiet_NaN();
    }
    return {std::move(table), std::move(truth)};
}

}  // namespace cfsel
