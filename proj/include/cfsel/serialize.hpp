#pragma once

#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "cfsel/bootstrap.hpp"
#include "cfsel/control_function.hpp"
#include "cfsel/counterfactual.hpp"
#include "cfsel/effects.hpp"
#include "cfsel/errors.hpp"
#include "cfsel/local_effects.hpp"

namespace cfsel {

using nlohmann::json;

inline json to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
    Eigen::VectorXd v(static_cast<int>(j.size()));
    for (int i = 0; i < v.size(); ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

inline json to_json(const BasisSpec& basis) { return json(basis.terms()); }

inline BasisSpec basis_from_json(const json& j) {
    return BasisSpec(j.get<std::vector<std::string>>());
}

inline json to_json(const ControlFunctionFit& fit) {
    json out;
    out["thresholds"] = fit.grid.thresholds;
    out["basis"] = to_json(fit.basis);
    json pi = json::array();
    for (const auto& p : fit.pi) pi.push_back(to_json(p));
    out["pi"] = pi;
    return out;
}

inline ControlFunctionFit control_function_from_json(const json& j) {
    ControlFunctionFit fit;
    fit.grid.thresholds = j.at("thresholds").get<std::vector<double>>();
    fit.grid.validate();
    fit.basis = basis_from_json(j.at("basis"));
    for (const auto& p : j.at("pi")) fit.pi.push_back(vector_from_json(p));
    if (fit.pi.size() != fit.grid.thresholds.size())
        throw ConfigError("control function json: coefficient/threshold count mismatch");
    fit.reports.assign(fit.pi.size(), SolveReport{});
    return fit;
}

inline json to_json(const MeanFit& fit) {
    json out;
    out["beta"] = to_json(fit.beta);
    out["basis"] = to_json(fit.basis);
    out["c_bar"] = fit.trim.c_bar;
    out["indicator_vars"] = std::vector<std::string>(fit.indicator_vars.begin(),
                                                     fit.indicator_vars.end());
    return out;
}

inline MeanFit mean_fit_from_json(const json& j) {
    MeanFit fit;
    fit.beta = vector_from_json(j.at("beta"));
    fit.basis = basis_from_json(j.at("basis"));
    fit.trim.c_bar = j.at("c_bar").get<double>();
    for (const auto& name : j.at("indicator_vars")) fit.indicator_vars.insert(name.get<std::string>());
    return fit;
}

inline json to_json(const DistributionFit& fit) {
    json out;
    out["y_grid"] = fit.y_grid;
    out["dropped_points"] = fit.dropped_points;
    out["basis"] = to_json(fit.basis);
    out["c_bar"] = fit.trim.c_bar;
    json path = json::array();
    for (const auto& b : fit.beta_path) path.push_back(to_json(b));
    out["beta_path"] = path;
    return out;
}

inline DistributionFit distribution_fit_from_json(const json& j) {
    DistributionFit fit;
    fit.y_grid = j.at("y_grid").get<std::vector<double>>();
    fit.dropped_points = j.at("dropped_points").get<std::vector<double>>();
    fit.basis = basis_from_json(j.at("basis"));
    fit.trim.c_bar = j.at("c_bar").get<double>();
    for (const auto& b : j.at("beta_path")) fit.beta_path.push_back(vector_from_json(b));
    return fit;
}

inline json to_json(const QuantileFit& fit) {
    json out;
    out["tau_grid"] = fit.tau_grid;
    out["basis"] = to_json(fit.basis);
    out["c_bar"] = fit.trim.c_bar;
    json path = json::array();
    for (const auto& b : fit.beta_path) path.push_back(to_json(b));
    out["beta_path"] = path;
    return out;
}

inline QuantileFit quantile_fit_from_json(const json& j) {
    QuantileFit fit;
    fit.tau_grid = j.at("tau_grid").get<std::vector<double>>();
    fit.basis = basis_from_json(j.at("basis"));
    fit.trim.c_bar = j.at("c_bar").get<double>();
    for (const auto& b : j.at("beta_path")) fit.beta_path.push_back(vector_from_json(b));
    return fit;
}

inline json to_json(const EffectEstimate& effect) {
    json out;
    out["name"] = effect.name;
    out["axes"] = effect.axes;
    out["grid"] = effect.grid;
    out["values"] = effect.values;
    out["meta"] = {{"c_bar", effect.meta.c_bar},
                   {"n_selected", effect.meta.n_selected},
                   {"n_trimmed", effect.meta.n_trimmed},
                   {"warnings", effect.meta.warnings}};
    return out;
}

inline EffectEstimate effect_from_json(const json& j) {
    EffectEstimate e;
    e.name = j.at("name").get<std::string>();
    e.axes = j.at("axes").get<std::vector<std::string>>();
    e.grid = j.at("grid").get<std::vector<std::vector<double>>>();
    e.values = j.at("values").get<std::vector<double>>();
    e.meta.c_bar = j.at("meta").at("c_bar").get<double>();
    e.meta.n_selected = j.at("meta").at("n_selected").get<int>();
    e.meta.n_trimmed = j.at("meta").at("n_trimmed").get<int>();
    e.meta.warnings = j.at("meta").at("warnings").get<std::vector<std::string>>();
    return e;
}

/// Long-format CSV for plotting: one row per grid point.
inline std::string effect_to_csv(const EffectEstimate& effect) {
    std::string out;
    for (const auto& a : effect.axes) out += a + ",";
    out += "value\n";
    char buf[64];
    for (std::size_t i = 0; i < effect.values.size(); ++i) {
        for (const auto& coordinate : effect.grid[i]) {
            std::snprintf(buf, sizeof buf, "%.17g,", coordinate);
            out += buf;
        }
        std::snprintf(buf, sizeof buf, "%.17g\n", effect.values[i]);
        out += buf;
    }
    return out;
}

inline std::string decomposition_to_csv(const DecompositionResult& result) {
    std::string out = "tau,selection,composition,structure,total\n";
    char buf[160];
    for (std::size_t i = 0; i < result.taus.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", result.taus[i],
                      result.selection[i], result.composition[i], result.structure[i],
                      result.total[i]);
        out += buf;
    }
    return out;
}

inline json to_json(const DecompositionResult& result) {
    json out;
    out["taus"] = result.taus;
    out["selection"] = result.selection;
    out["composition"] = result.composition;
    out["structure"] = result.structure;
    out["total"] = result.total;
    out["quantiles"] = {{"q11", result.q11},
                        {"q10", result.q10},
                        {"q100", result.q100},
                        {"q000", result.q000}};
    out["y_grid"] = result.y_grid;
    return out;
}

/// Replication-by-grid-point draw matrix as CSV.
inline std::string draws_to_csv(const BootstrapDraws& draws,
                                const std::vector<std::string>& names) {
    std::string out = "replication";
    for (const auto& n : names) out += "," + n;
    out += "\n";
    char buf[64];
    for (std::size_t k = 0; k < draws.draws.size(); ++k) {
        out += std::to_string(draws.replication_index[k]);
        for (double v : draws.draws[k]) {
            std::snprintf(buf, sizeof buf, ",%.17g", v);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

/// FNV-1a content hash used by the run manifest.
inline std::string fnv1a_hex(const std::string& content) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : content) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace cfsel
