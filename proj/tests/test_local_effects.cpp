#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "cfsel/control_function.hpp"
#include "cfsel/dgp.hpp"
#include "cfsel/local_effects.hpp"
#include "cfsel/oracle.hpp"
#include "cfsel/rng.hpp"

using namespace cfsel;

namespace {

// A table where everything is observed and the control value is handed in,
// so second-stage behavior can be isolated from Step 1.
struct Synthetic {
    ObservationTable table;
    Eigen::VectorXd v_hat;
    TrimRule trim{1e9};
};

Synthetic synthetic_sample(int n, std::uint64_t seed) {
    Rng rng(seed);
    Synthetic s;
    s.table.y.resize(n);
    s.table.c = Eigen::VectorXd::Ones(n);
    s.table.z.resize(n, 1);
    s.table.z_names = {"x"};
    s.table.z_is_indicator = {false};
    s.table.x_names = {"x"};
    s.table.group.assign(static_cast<std::size_t>(n), "0");
    s.v_hat.resize(n);
    for (int i = 0; i < n; ++i) {
        s.table.z(i, 0) = rng.normal();
        s.v_hat[i] = rng.uniform_open();
        s.table.y[i] = 0.0;  // callers fill in
    }
    return s;
}

// Standard estimated-first-stage setup on the gaussian DGP.
struct FittedStage1 {
    ObservationTable table;
    LatentTruth truth;
    Eigen::VectorXd v_hat;
    TrimRule trim;
};

FittedStage1 gaussian_stage1(const DgpSpec& dgp, int n, std::uint64_t seed) {
    FittedStage1 out;
    auto [table, truth] = simulate(dgp, n, seed);
    out.table = std::move(table);
    out.truth = std::move(truth);
    out.trim = default_trim_rule(out.table);
    const BasisSpec r_basis({"1", "x", "z1", "x^2", "x*z1", "z1^2", "x^3", "x^2*z1", "x*z1^2", "z1^3"});
    const auto cf = fit_control_function(out.table, r_basis,
                                         make_threshold_grid(out.table, out.trim.c_bar),
                                         Eigen::VectorXd::Ones(out.table.n()));
    out.v_hat = control_values(cf, out.table);
    return out;
}

const BasisSpec kWBasis({"1", "x", "v", "v^2", "v^3", "x*v"});

}  // namespace

TEST_CASE("fit_lasf recovers exact linear structure", "[local]") {
    auto s = synthetic_sample(200, 1);
    Eigen::VectorXd beta(6);
    beta << 0.5, 1.0, -0.3, 0.8, -0.1, 0.2;
    const auto rows = s.table.selected_rows();
    const auto design = build_basis(kWBasis, s.table, rows, &s.v_hat);
    s.table.y = design * beta;

    const auto fit = fit_lasf(s.table, s.v_hat, kWBasis, s.trim);
    CHECK((fit.beta - beta).cwiseAbs().maxCoeff() < 1e-10);

    // Doubling all weights is a no-op.
    const auto doubled =
        fit_lasf(s.table, s.v_hat, kWBasis, s.trim, 2.0 * Eigen::VectorXd::Ones(s.table.n()));
    CHECK((doubled.beta - fit.beta).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("trimmed-out rows have zero influence", "[local]") {
    DgpSpec dgp;
    auto [table, truth] = simulate(dgp, 1500, 77);
    const TrimRule trim = default_trim_rule(table);
    const BasisSpec r_basis({"1", "x", "z1"});
    const auto cf = fit_control_function(table, r_basis, make_threshold_grid(table, trim.c_bar),
                                         Eigen::VectorXd::Ones(table.n()));
    const auto v_hat = control_values(cf, table);

    const auto fit_a = fit_lasf(table, v_hat, kWBasis, trim);
    auto perturbed = table;
    int changed = 0;
    for (int i = 0; i < perturbed.n(); ++i) {
        if (perturbed.selected(i) && perturbed.c[i] > trim.c_bar) {
            perturbed.y[i] += 100.0;
            ++changed;
        }
    }
    REQUIRE(changed > 0);
    const auto fit_b = fit_lasf(perturbed, v_hat, kWBasis, trim);
    CHECK((fit_a.beta - fit_b.beta).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("distribution regression: drops and empirical CDF", "[local]") {
    auto s = synthetic_sample(300, 5);
    Rng rng(6);
    for (int i = 0; i < s.table.n(); ++i) s.table.y[i] = rng.normal();

    // A grid point above the maximum separates and is dropped with a record.
    const double ymax = s.table.y.maxCoeff();
    const auto fit = fit_ldsf(s.table, s.v_hat, BasisSpec({"1"}), s.trim,
                              {-1.0, 0.0, 1.0, ymax + 1.0});
    CHECK(fit.dropped_points.size() == 1);
    CHECK(fit.dropped_points[0] == ymax + 1.0);
    REQUIRE(fit.y_grid.size() == 3);

    // Constant-only basis: Lambda(beta(y)) is the empirical CDF.
    for (std::size_t k = 0; k < fit.y_grid.size(); ++k) {
        double ecdf = 0.0;
        for (int i = 0; i < s.table.n(); ++i) ecdf += s.table.y[i] <= fit.y_grid[k] ? 1.0 : 0.0;
        ecdf /= s.table.n();
        CHECK(logistic_cdf(fit.beta_path[k][0]) == Catch::Approx(ecdf).margin(1e-7));
        CHECK(eval_ldsf(fit, fit.y_grid[k], {}, 0.5) == Catch::Approx(ecdf).margin(1e-7));
    }

    // Monotone in y for the constant-only basis.
    double prev = -1.0;
    for (double y : {-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0}) {
        const double g = eval_ldsf(fit, y, {}, 0.5);
        CHECK(g >= prev);
        prev = g;
    }
}

TEST_CASE("quantile regression path: median and monotonicity", "[local]") {
    auto s = synthetic_sample(301, 9);
    Rng rng(10);
    for (int i = 0; i < s.table.n(); ++i) s.table.y[i] = rng.normal();

    const auto fit = fit_lqsf(s.table, s.v_hat, BasisSpec({"1"}), s.trim, {0.25, 0.5, 0.75});
    std::vector<double> ys(s.table.y.data(), s.table.y.data() + s.table.n());
    std::sort(ys.begin(), ys.end());
    CHECK(fit.beta_path[1][0] == ys[150]);  // odd n: the sample median exactly

    double prev = -1e300;
    for (double tau : {0.1, 0.25, 0.5, 0.75, 0.9}) {
        const double q = eval_lqsf(fit, tau, {}, 0.5);
        CHECK(q >= prev);
        prev = q;
    }
}

TEST_CASE("location-shift model has tau-constant slopes", "[local][slow]") {
    // Y = x + e with e independent of x: the QR slope is constant in tau.
    auto s = synthetic_sample(4000, 12);
    Rng rng(13);
    for (int i = 0; i < s.table.n(); ++i) s.table.y[i] = s.table.z(i, 0) + rng.normal();
    const auto fit = fit_lqsf(s.table, s.v_hat, BasisSpec({"1", "x"}), s.trim, {0.25, 0.5, 0.75});
    for (const auto& beta : fit.beta_path) CHECK(beta[1] == Catch::Approx(1.0).margin(0.08));
}

TEST_CASE("evaluation helpers", "[local]") {
    MeanFit fit;
    fit.basis = BasisSpec({"1", "x", "v"});
    fit.beta.resize(3);
    fit.beta << 0.0, 1.0, 0.0;
    CHECK(eval_lasf(fit, {{"x", 2.0}}, 0.5) == 2.0);
    fit.beta.setZero();
    CHECK(eval_lasf(fit, {{"x", 7.0}}, 0.1) == 0.0);

    MeanFit quad;
    quad.basis = BasisSpec({"1", "x", "x^2"});
    quad.beta.resize(3);
    quad.beta << 0.0, 1.0, 1.0;
    const auto grad = eval_ladf(quad, {{"x", 3.0}}, 0.5);
    REQUIRE(grad.size() == 1);
    CHECK(grad[0] == 7.0);

    MeanFit vonly;
    vonly.basis = BasisSpec({"1", "v", "v^2"});
    vonly.beta = Eigen::VectorXd::Ones(3);
    CHECK(eval_ladf(vonly, {}, 0.4).empty());
}

TEST_CASE("LADF equals the finite difference of the LASF", "[local]") {
    auto s = synthetic_sample(400, 21);
    Rng rng(22);
    for (int i = 0; i < s.table.n(); ++i)
        s.table.y[i] = 1.0 + s.table.z(i, 0) + 0.5 * s.v_hat[i] + 0.1 * rng.normal();
    const auto fit = fit_lasf(s.table, s.v_hat, kWBasis, s.trim);

    const double h = 1e-5;
    for (double x : {-1.0, 0.0, 1.5}) {
        for (double v : {0.2, 0.5, 0.8}) {
            const auto grad = eval_ladf(fit, {{"x", x}}, v);
            const double fd =
                (eval_lasf(fit, {{"x", x + h}}, v) - eval_lasf(fit, {{"x", x - h}}, v)) / (2.0 * h);
            const double scale = std::max(1.0, std::abs(grad[0]));
            CHECK(std::abs(grad[0] - fd) / scale < 1e-6);
        }
    }
}

TEST_CASE("LQDF matches the quantile-path derivative", "[local]") {
    auto s = synthetic_sample(500, 31);
    Rng rng(32);
    for (int i = 0; i < s.table.n(); ++i)
        s.table.y[i] = s.table.z(i, 0) * (1.0 + 0.3 * s.v_hat[i]) + rng.normal();
    const auto fit = fit_lqsf(s.table, s.v_hat, kWBasis, s.trim, {0.5});
    const double h = 1e-5;
    const auto grad = eval_lqdf(fit, 0.5, {{"x", 0.7}}, 0.4);
    const double fd =
        (eval_lqsf(fit, 0.5, {{"x", 0.7 + h}}, 0.4) - eval_lqsf(fit, 0.5, {{"x", 0.7 - h}}, 0.4)) /
        (2.0 * h);
    CHECK(std::abs(grad[0] - fd) / std::max(1.0, std::abs(grad[0])) < 1e-6);
}

TEST_CASE("gaussian DGP: second stage tracks the conditional oracles", "[local][slow]") {
    DgpSpec dgp;
    const auto s1 = gaussian_stage1(dgp, 20000, 404);
    const auto mean_fit = fit_lasf(s1.table, s1.v_hat, kWBasis, s1.trim);

    for (double x : {-1.0, 0.0, 1.0}) {
        for (double v : {0.3, 0.5, 0.7}) {
            CHECK(eval_lasf(mean_fit, {{"x", x}}, v) ==
                  Catch::Approx(oracle_lasf(dgp, x, v)).margin(0.05));
        }
    }

    // Distribution layer at interior points. The logit link needs a richer
    // (x, v) index than the mean fit to bend into the normal-CDF shape.
    const BasisSpec dr_basis({"1", "x", "x^2", "v", "v^2", "v^3", "x*v", "x*v^2"});
    const auto y_grid = default_y_grid(s1.table, s1.trim);
    const auto dr_fit = fit_ldsf(s1.table, s1.v_hat, dr_basis, s1.trim, y_grid);
    for (double x : {-0.5, 0.5}) {
        for (double v : {0.4, 0.6}) {
            for (double y : {0.0, 0.8}) {
                CHECK(eval_ldsf(dr_fit, y, {{"x", x}}, v) ==
                      Catch::Approx(oracle_ldsf(dgp, y, x, v)).margin(0.03));
            }
        }
    }

    // Quantile layer at interior points.
    const auto qr_fit = fit_lqsf(s1.table, s1.v_hat, kWBasis, s1.trim, {0.25, 0.5, 0.75});
    for (double tau : {0.25, 0.5, 0.75}) {
        CHECK(eval_lqsf(qr_fit, tau, {{"x", 0.5}}, 0.6) ==
              Catch::Approx(oracle_lqsf(dgp, tau, 0.5, 0.6)).margin(0.05));
    }

    // Inverse consistency on a monotone region.
    const double y0 = 0.5;
    const double g = eval_ldsf(dr_fit, y0, {{"x", 0.0}}, 0.5);
    const auto qfit = fit_lqsf(s1.table, s1.v_hat, kWBasis, s1.trim, {g});
    CHECK(eval_lqsf(qfit, g, {{"x", 0.0}}, 0.5) == Catch::Approx(y0).margin(0.08));
}
