#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cfsel/errors.hpp"
#include "cfsel/table.hpp"

namespace cfsel {

/// Polynomial-with-interactions basis over named columns and the control
/// value "v". Terms are products of integer powers, written e.g.
/// "1", "x", "x^2", "x*v", "v^2", "educ=mid*v". Every term is
/// differentiable in v and in any non-indicator column it references.
class BasisSpec {
   public:
    BasisSpec() = default;

    explicit BasisSpec(std::vector<std::string> term_strings)
        : term_strings_(std::move(term_strings)) {
        for (const auto& s : term_strings_) terms_.push_back(parse_term(s));
    }

    int dimension() const { return static_cast<int>(terms_.size()); }
    const std::vector<std::string>& terms() const { return term_strings_; }

    bool operator==(const BasisSpec& other) const {
        return term_strings_ == other.term_strings_;
    }

    bool uses_v() const {
        for (const auto& t : terms_)
            for (const auto& f : t)
                if (f.name == "v") return true;
        return false;
    }

    /// Unique non-v variable names in order of first appearance.
    std::vector<std::string> variables() const {
        std::vector<std::string> out;
        for (const auto& t : terms_) {
            for (const auto& f : t) {
                if (f.name == "v") continue;
                bool seen = false;
                for (const auto& v : out) seen = seen || (v == f.name);
                if (!seen) out.push_back(f.name);
            }
        }
        return out;
    }

    using Provider = std::function<double(int row, const std::string& name)>;

    /// Column j of the result is term j evaluated row-wise.
    Eigen::MatrixXd build(int n_rows, const Provider& value) const {
        Eigen::MatrixXd out(n_rows, dimension());
        for (int j = 0; j < dimension(); ++j) {
            const auto& term = terms_[static_cast<std::size_t>(j)];
            for (int i = 0; i < n_rows; ++i) out(i, j) = eval_term(term, i, value);
        }
        return out;
    }

    /// Analytic derivative of every term with respect to `wrt` ("v" or a
    /// column name). Indicator columns are not differentiable.
    Eigen::MatrixXd derivative(int n_rows, const Provider& value, const std::string& wrt,
                               const std::set<std::string>& indicator_names) const {
        if (wrt != "v" && indicator_names.count(wrt))
            throw NonDifferentiableTerm("cannot differentiate with respect to indicator '" + wrt +
                                        "'");
        Eigen::MatrixXd out(n_rows, dimension());
        for (int j = 0; j < dimension(); ++j) {
            const auto& term = terms_[static_cast<std::size_t>(j)];
            for (int i = 0; i < n_rows; ++i) out(i, j) = eval_term_derivative(term, i, value, wrt);
        }
        return out;
    }

    Eigen::VectorXd eval_point(const std::map<std::string, double>& values) const {
        const auto provider = point_provider(values);
        Eigen::VectorXd out(dimension());
        for (int j = 0; j < dimension(); ++j)
            out[j] = eval_term(terms_[static_cast<std::size_t>(j)], 0, provider);
        return out;
    }

    Eigen::VectorXd deriv_point(const std::map<std::string, double>& values, const std::string& wrt,
                                const std::set<std::string>& indicator_names) const {
        if (wrt != "v" && indicator_names.count(wrt))
            throw NonDifferentiableTerm("cannot differentiate with respect to indicator '" + wrt +
                                        "'");
        const auto provider = point_provider(values);
        Eigen::VectorXd out(dimension());
        for (int j = 0; j < dimension(); ++j)
            out[j] = eval_term_derivative(terms_[static_cast<std::size_t>(j)], 0, provider, wrt);
        return out;
    }

   private:
    struct Factor {
        std::string name;
        int power = 1;
    };
    using Term = std::vector<Factor>;  // empty: the constant 1

    static Provider point_provider(const std::map<std::string, double>& values) {
        return [&values](int, const std::string& name) {
            const auto it = values.find(name);
            if (it == values.end()) throw SchemaMismatch("no value for basis variable '" + name + "'");
            return it->second;
        };
    }

    static Term parse_term(const std::string& s) {
        Term term;
        if (s == "1") return term;
        std::size_t pos = 0;
        while (pos <= s.size()) {
            const std::size_t star = s.find('*', pos);
            const std::string piece =
                s.substr(pos, star == std::string::npos ? std::string::npos : star - pos);
            if (piece.empty()) throw SchemaMismatch("empty factor in basis term '" + s + "'");
            const std::size_t caret = piece.rfind('^');
            Factor f;
            if (caret == std::string::npos) {
                f.name = piece;
                f.power = 1;
            } else {
                f.name = piece.substr(0, caret);
                try {
                    f.power = std::stoi(piece.substr(caret + 1));
                } catch (...) {
                    throw SchemaMismatch("bad power in basis term '" + s + "'");
                }
                if (f.power < 1) throw SchemaMismatch("power must be >= 1 in term '" + s + "'");
            }
            // Merge repeated names so differentiation sees one factor per name.
            bool merged = false;
            for (auto& g : term) {
                if (g.name == f.name) {
                    g.power += f.power;
                    merged = true;
                }
            }
            if (!merged) term.push_back(f);
            if (star == std::string::npos) break;
            pos = star + 1;
        }
        return term;
    }

    static double eval_term(const Term& term, int row, const Provider& value) {
        double out = 1.0;
        for (const auto& f : term) out *= ipow(value(row, f.name), f.power);
        return out;
    }

    static double eval_term_derivative(const Term& term, int row, const Provider& value,
                                       const std::string& wrt) {
        double rest = 1.0;
        double own = 0.0;
        bool found = false;
        for (const auto& f : term) {
            const double x = value(row, f.name);
            if (f.name == wrt) {
                own = static_cast<double>(f.power) * ipow(x, f.power - 1);
                found = true;
            } else {
                rest *= ipow(x, f.power);
            }
        }
        return found ? own * rest : 0.0;
    }

    static double ipow(double x, int k) {
        double out = 1.0;
        for (int i = 0; i < k; ++i) out *= x;
        return out;
    }

    std::vector<std::string> term_strings_;
    std::vector<Term> terms_;
};

/// Value provider over table columns, with "v" supplied separately
/// (aligned with `rows`).
inline BasisSpec::Provider table_provider(const ObservationTable& table,
                                          const std::vector<int>& rows,
                                          const Eigen::VectorXd* v = nullptr) {
    return [&table, &rows, v](int k, const std::string& name) -> double {
        if (name == "v") {
            if (!v) throw SchemaMismatch("basis uses v but no control values supplied");
            return (*v)[k];
        }
        return table.z(rows[static_cast<std::size_t>(k)], table.column(name));
    };
}

/// Same as table_provider, but names in `overrides` take a fixed value
/// (used to evaluate structural functions at a counterfactual x).
inline BasisSpec::Provider override_provider(const ObservationTable& table,
                                             const std::vector<int>& rows,
                                             const std::map<std::string, double>& overrides,
                                             const Eigen::VectorXd* v = nullptr) {
    return [&table, &rows, &overrides, v](int k, const std::string& name) -> double {
        if (name == "v") {
            if (!v) throw SchemaMismatch("basis uses v but no control values supplied");
            return (*v)[k];
        }
        const auto it = overrides.find(name);
        if (it != overrides.end()) return it->second;
        return table.z(rows[static_cast<std::size_t>(k)], table.column(name));
    };
}

/// Convenience wrappers matching the table layout.
inline Eigen::MatrixXd build_basis(const BasisSpec& spec, const ObservationTable& table,
                                   const std::vector<int>& rows,
                                   const Eigen::VectorXd* v = nullptr) {
    return spec.build(static_cast<int>(rows.size()), table_provider(table, rows, v));
}

inline Eigen::MatrixXd basis_derivative(const BasisSpec& spec, const ObservationTable& table,
                                        const std::vector<int>& rows, const std::string& wrt,
                                        const Eigen::VectorXd* v = nullptr) {
    std::set<std::string> indicators;
    for (const auto& name : spec.variables())
        if (table.has_column(name) && table.indicator(name)) indicators.insert(name);
    return spec.derivative(static_cast<int>(rows.size()), table_provider(table, rows, v), wrt,
                           indicators);
}

}  // namespace cfsel
