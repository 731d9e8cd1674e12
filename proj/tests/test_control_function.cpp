#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "cfsel/control_function.hpp"
#include "cfsel/dgp.hpp"
#include "cfsel/math.hpp"
#include "cfsel/oracle.hpp"

using namespace cfsel;

namespace {

const BasisSpec kConstOnly({"1"});

BasisSpec cubic_rz() {
    return BasisSpec({"1", "x", "z1", "x^2", "x*z1", "z1^2", "x^3", "x^2*z1", "x*z1^2", "z1^3"});
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0, sbb = 0, sab = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("intercept-only thresholds recover the empirical CDF", "[cf]") {
    const auto [table, truth] = simulate(DgpSpec{}, 400, 7);
    const auto rule = default_trim_rule(table);
    // Complete grid: every distinct selected C at or below c_bar, so the
    // step rule evaluates each row at its own threshold.
    const auto grid = make_threshold_grid(table, rule.c_bar, table.n());
    const auto fit =
        fit_control_function(table, kConstOnly, grid, Eigen::VectorXd::Ones(table.n()));

    for (std::size_t k = 0; k < fit.grid.thresholds.size(); ++k) {
        const double c = fit.grid.thresholds[k];
        double ecdf = 0.0;
        for (int i = 0; i < table.n(); ++i) ecdf += table.c[i] <= c ? 1.0 : 0.0;
        ecdf /= table.n();
        CHECK(logistic_cdf(fit.pi[k][0]) == Catch::Approx(ecdf).margin(1e-7));
    }

    // Constant-only V-hat is the normalized rank of C.
    const auto v = control_values(fit, table);
    for (int i = 0; i < table.n(); ++i) {
        if (!table.selected(i) || table.c[i] > rule.c_bar) continue;
        double rank = 0.0;
        for (int j = 0; j < table.n(); ++j) rank += table.c[j] <= table.c[i] ? 1.0 : 0.0;
        CHECK(v[i] == Catch::Approx(rank / table.n()).margin(1e-6));
    }
}

TEST_CASE("threshold at the sample maximum separates", "[cf]") {
    const auto [table, truth] = simulate(DgpSpec{}, 200, 3);
    ThresholdGrid grid;
    grid.thresholds = {0.0, table.c.maxCoeff()};
    CHECK_THROWS_AS(fit_control_function(table, kConstOnly, grid, Eigen::VectorXd::Ones(table.n())),
                    Error);
}

TEST_CASE("fitted control function tracks the true conditional CDF", "[cf][slow]") {
    DgpSpec dgp;
    const int n = 20000;
    const auto [table, truth] = simulate(dgp, n, 11);
    const auto rule = default_trim_rule(table);
    const auto grid = make_threshold_grid(table, rule.c_bar);
    const auto basis = cubic_rz();
    const auto fit = fit_control_function(table, basis, grid, Eigen::VectorXd::Ones(n));

    // Interior test points: moderate z and c values.
    double worst = 0.0;
    for (double x : {-0.5, 0.0, 0.5}) {
        for (double z1 : {-1.0, 0.0, 1.0}) {
            const Eigen::VectorXd r_row =
                basis.eval_point({{"x", x}, {"z1", z1}});
            for (double c : {0.5, 1.0, 2.0, 3.0}) {
                const double fitted = evaluate_v(fit, c, r_row);
                const double true_cdf = normal_cdf(c - (dgp.gamma0 + dgp.gamma1 * x + dgp.gamma2 * z1));
                worst = std::max(worst, std::abs(fitted - true_cdf));
            }
        }
    }
    CHECK(worst < 0.02);
}

TEST_CASE("control values correlate with the latent rank", "[cf][slow]") {
    DgpSpec dgp;
    const int n = 5000;
    const auto [table, truth] = simulate(dgp, n, 13);
    const auto rule = default_trim_rule(table);
    const auto fit = fit_control_function(table, cubic_rz(), make_threshold_grid(table, rule.c_bar),
                                          Eigen::VectorXd::Ones(n));
    const auto v = control_values(fit, table);

    std::vector<double> vh, eta;
    for (int i = 0; i < n; ++i) {
        if (!table.selected(i)) continue;
        vh.push_back(v[i]);
        eta.push_back(truth.eta[i]);
    }
    CHECK(pearson(vh, eta) >= 0.95);
}

TEST_CASE("selection probability at zero", "[cf][slow]") {
    DgpSpec dgp;
    const int n = 20000;
    const auto [table, truth] = simulate(dgp, n, 17);

    // Constant-only: the empirical censoring fraction.
    const auto grid0 = make_threshold_grid(table, default_trim_rule(table).c_bar, 20);
    const auto fit0 = fit_control_function(table, kConstOnly, grid0, Eigen::VectorXd::Ones(n));
    double censored = 0.0;
    for (int i = 0; i < n; ++i) censored += table.selected(i) ? 0.0 : 1.0;
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
    CHECK(selection_prob_at_zero(fit0, one) == Catch::Approx(censored / n).margin(1e-6));

    // Cubic r(z): close to the closed-form censoring probability.
    const auto basis = cubic_rz();
    const auto fit = fit_control_function(table, basis,
                                          make_threshold_grid(table, default_trim_rule(table).c_bar),
                                          Eigen::VectorXd::Ones(n));
    for (double x : {-0.5, 0.0, 0.5}) {
        for (double z1 : {-1.0, 0.0, 1.0}) {
            const Eigen::VectorXd r_row = basis.eval_point({{"x", x}, {"z1", z1}});
            CHECK(selection_prob_at_zero(fit, r_row) ==
                  Catch::Approx(dgp.censor_prob(x, z1)).margin(0.02));
        }
    }
}

TEST_CASE("identification set membership", "[cf][slow]") {
    // No excluded instrument: X = Z up to the intercept, so the membership
    // boundary sits at x = -Phi^{-1}(v) shifted by the selection intercept.
    DgpSpec dgp;
    dgp.gamma0 = 0.0;
    dgp.gamma1 = 1.0;
    dgp.gamma2 = 0.0;
    const int n = 20000;
    const auto [table, truth] = simulate(dgp, n, 29);
    const BasisSpec basis({"1", "x", "x^2", "x^3"});
    const auto fit = fit_control_function(table, basis,
                                          make_threshold_grid(table, default_trim_rule(table).c_bar),
                                          Eigen::VectorXd::Ones(n));

    const auto rows = table.selected_rows();
    for (double v : {0.3, 0.5, 0.7}) {
        const double boundary = -normal_quantile(v);
        // Inside: x clearly above the boundary. Outside: clearly below.
        const auto pool_in = identification_pool(fit, table, rows, {{"x", boundary + 0.3}});
        const auto pool_out = identification_pool(fit, table, rows, {{"x", boundary - 0.3}});
        CHECK(identification_set_member(fit, v, pool_in));
        CHECK_FALSE(identification_set_member(fit, v, pool_out));
    }

    // v near one is always a member.
    const auto pool = identification_pool(fit, table, rows, {{"x", -2.0}});
    CHECK(identification_set_member(fit, 1.0 - 1e-6, pool));

    // A strong wide-support instrument makes membership hold everywhere.
    DgpSpec wide;  // default: z1 ~ N(0, 4), excluded
    const auto [table2, truth2] = simulate(wide, n, 31);
    const auto fit2 = fit_control_function(
        table2, BasisSpec({"1", "x", "z1", "x^2", "z1^2", "x*z1"}),
        make_threshold_grid(table2, default_trim_rule(table2).c_bar), Eigen::VectorXd::Ones(n));
    const auto rows2 = table2.selected_rows();
    bool all_member = true;
    for (double x : {-1.5, 0.0, 1.5}) {
        for (double v : {0.05, 0.5, 0.95}) {
            const auto p = identification_pool(fit2, table2, rows2, {{"x", x}});
            all_member = all_member && identification_set_member(fit2, v, p);
        }
    }
    CHECK(all_member);
}

TEST_CASE("warm and cold threshold fits agree", "[cf]") {
    const auto [table, truth] = simulate(DgpSpec{}, 2000, 37);
    const BasisSpec basis({"1", "x", "z1"});
    const auto grid = make_threshold_grid(table, default_trim_rule(table).c_bar, 40);
    const auto warm = fit_control_function(table, basis, grid, Eigen::VectorXd::Ones(table.n()));

    std::vector<int> all(table.n());
    for (int i = 0; i < table.n(); ++i) all[static_cast<std::size_t>(i)] = i;
    const Eigen::MatrixXd r_design = build_basis(basis, table, all);
    for (std::size_t k = 0; k < grid.thresholds.size(); ++k) {
        Eigen::VectorXd labels(table.n());
        for (int i = 0; i < table.n(); ++i)
            labels[i] = table.c[i] <= grid.thresholds[k] ? 1.0 : 0.0;
        const auto cold = fit_weighted_logit(r_design, labels, Eigen::VectorXd::Ones(table.n()));
        CHECK((cold.coefficients - warm.pi[k]).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("zero bootstrap weight equals row deletion for V-hat", "[cf]") {
    const auto [table, truth] = simulate(DgpSpec{}, 800, 41);
    const BasisSpec basis({"1", "x", "z1"});
    const auto grid = make_threshold_grid(table, default_trim_rule(table).c_bar, 30);

    Eigen::VectorXd w = Eigen::VectorXd::Ones(table.n());
    const int drop = 17;
    w[drop] = 0.0;
    const auto fit_w = fit_control_function(table, basis, grid, w);
    const auto v_w = control_values(fit_w, table);

    std::vector<int> keep;
    for (int i = 0; i < table.n(); ++i)
        if (i != drop) keep.push_back(i);
    const auto sub = table.subset(keep);
    const auto fit_d = fit_control_function(sub, basis, grid, Eigen::VectorXd::Ones(sub.n()));
    const auto v_d = control_values(fit_d, sub);

    for (std::size_t k = 0; k < keep.size(); ++k) {
        const int i = keep[k];
        if (!table.selected(i)) continue;
        CHECK(v_w[i] == Catch::Approx(v_d[static_cast<int>(k)]).margin(1e-9));
    }
}

TEST_CASE("v-hat values stay inside the unit interval", "[cf]") {
    const auto [table, truth] = simulate(DgpSpec{}, 1500, 43);
    const auto fit = fit_control_function(
        table, BasisSpec({"1", "x", "z1"}),
        make_threshold_grid(table, default_trim_rule(table).c_bar, 60), Eigen::VectorXd::Ones(table.n()));
    const auto v = control_values(fit, table);
    for (int i = 0; i < table.n(); ++i) {
        if (!table.selected(i)) continue;
        CHECK(v[i] > 0.0);
        CHECK(v[i] < 1.0);
    }
}

TEST_CASE("correlation of V-hat with latent eta on selected sample", "[cf][slow]") {
    // Gaussian DGP at n = 5000: corr >= 0.95 with the quadratic basis too.
    DgpSpec dgp;
    const auto [table, truth] = simulate(dgp, 5000, 47);
    const auto fit = fit_control_function(
        table, BasisSpec({"1", "x", "z1", "x^2", "z1^2", "x*z1"}),
        make_threshold_grid(table, default_trim_rule(table).c_bar), Eigen::VectorXd::Ones(table.n()));
    const auto v = control_values(fit, table);
    std::vector<double> vh, eta;
    for (int i = 0; i < table.n(); ++i) {
        if (!table.selected(i)) continue;
        vh.push_back(v[i]);
        eta.push_back(truth.eta[i]);
    }
    CHECK(pearson(vh, eta) >= 0.95);
}
