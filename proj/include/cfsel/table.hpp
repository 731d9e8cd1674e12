#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfsel/errors.hpp"
#include "cfsel/math.hpp"

namespace cfsel {

/// Column mapping from a CSV file onto the model variables. `z` lists the
/// explanatory columns; `x` designates the sub-vector of z entering the
/// outcome equation; columns named in `categorical` are expanded into
/// reference-coded dummies (most frequent level is the reference).
struct ColumnSchema {
    std::string y = "y";
    std::string c = "c";
    std::string group;  // empty: single group "0"
    std::vector<std::string> z;
    std::vector<std::string> x;
    std::vector<std::string> categorical;
};

struct ObservationTable {
    Eigen::VectorXd y;  // NaN on censored rows
    Eigen::VectorXd c;  // >= 0
    Eigen::MatrixXd z;  // n x k, categorical columns already expanded
    std::vector<std::string> z_names;
    std::vector<bool> z_is_indicator;
    std::vector<std::string> x_names;  // subset of z_names
    std::vector<std::string> group;

    int n() const { return static_cast<int>(c.size()); }

    bool selected(int i) const { return c[i] > 0.0; }

    int column(const std::string& name) const {
        for (std::size_t j = 0; j < z_names.size(); ++j)
            if (z_names[j] == name) return static_cast<int>(j);
        throw SchemaMismatch("unknown column '" + name + "'");
    }

    bool has_column(const std::string& name) const {
        for (const auto& zn : z_names)
            if (zn == name) return true;
        return false;
    }

    bool indicator(const std::string& name) const {
        return z_is_indicator[static_cast<std::size_t>(column(name))];
    }

    std::vector<int> selected_rows() const {
        std::vector<int> out;
        for (int i = 0; i < n(); ++i)
            if (selected(i)) out.push_back(i);
        return out;
    }

    /// Rows of a single group, in original order.
    std::vector<int> group_rows(const std::string& label) const {
        std::vector<int> out;
        for (int i = 0; i < n(); ++i)
            if (group[static_cast<std::size_t>(i)] == label) out.push_back(i);
        return out;
    }

    ObservationTable subset(const std::vector<int>& rows) const {
        ObservationTable out;
        const int m = static_cast<int>(rows.size());
        out.y.resize(m);
        out.c.resize(m);
        out.z.resize(m, z.cols());
        out.group.resize(static_cast<std::size_t>(m));
        for (int k = 0; k < m; ++k) {
            out.y[k] = y[rows[static_cast<std::size_t>(k)]];
            out.c[k] = c[rows[static_cast<std::size_t>(k)]];
            out.z.row(k) = z.row(rows[static_cast<std::size_t>(k)]);
            out.group[static_cast<std::size_t>(k)] = group[static_cast<std::size_t>(rows[static_cast<std::size_t>(k)])];
        }
        out.z_names = z_names;
        out.z_is_indicator = z_is_indicator;
        out.x_names = x_names;
        return out;
    }
};

/// Trimming rule T = 1(0 < c <= c_bar).
struct TrimRule {
    double c_bar = std::numeric_limits<double>::quiet_NaN();
};

inline Eigen::VectorXd trim_indicator(const ObservationTable& table, const TrimRule& rule) {
    Eigen::VectorXd t(table.n());
    for (int i = 0; i < table.n(); ++i)
        t[i] = (table.c[i] > 0.0 && table.c[i] <= rule.c_bar) ? 1.0 : 0.0;
    return t;
}

/// Default trimming threshold: the 0.99 empirical quantile of C among
/// selected rows, fixed before estimation.
inline TrimRule default_trim_rule(const ObservationTable& table, double quantile = 0.99) {
    std::vector<double> cs;
    for (int i = 0; i < table.n(); ++i)
        if (table.selected(i)) cs.push_back(table.c[i]);
    if (cs.empty()) throw EmptyTrimmedSample("no selected rows");
    return TrimRule{quantile_of(std::move(cs), quantile)};
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

inline bool parse_double(const std::string& s, double* out) {
    if (s.empty()) return false;
    char* end = nullptr;
    *out = std::strtod(s.c_str(), &end);
    return end && *end == '\0';
}

}  // namespace detail

/// Loads a CSV with a header row into a typed table. The y field must be
/// empty exactly on censored rows (c = 0).
inline ObservationTable load_table(const std::string& path, const ColumnSchema& schema) {
    std::ifstream in(path);
    if (!in) throw SchemaMismatch("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw SchemaMismatch("empty file '" + path + "'");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_csv_line(line);
    std::unordered_map<std::string, int> col;
    for (std::size_t j = 0; j < header.size(); ++j) col[header[j]] = static_cast<int>(j);

    auto require = [&](const std::string& name) {
        auto it = col.find(name);
        if (it == col.end()) throw SchemaMismatch("column '" + name + "' not in header");
        return it->second;
    };
    const int y_col = require(schema.y);
    const int c_col = require(schema.c);
    const int group_col = schema.group.empty() ? -1 : require(schema.group);
    std::vector<int> z_cols;
    for (const auto& zn : schema.z) z_cols.push_back(require(zn));

    std::vector<double> ys, cs;
    std::vector<std::vector<std::string>> z_raw(schema.z.size());
    std::vector<std::string> groups;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() < header.size())
            throw SchemaMismatch("line " + std::to_string(lineno) + ": too few fields");

        double c_val;
        if (!detail::parse_double(fields[static_cast<std::size_t>(c_col)], &c_val))
            throw SchemaMismatch("line " + std::to_string(lineno) + ": bad c value");
        if (c_val < 0.0) throw NegativeC("line " + std::to_string(lineno));

        const std::string& y_field = fields[static_cast<std::size_t>(y_col)];
        double y_val = std::numeric_limits<double>::quiet_NaN();
        const bool y_present = detail::parse_double(y_field, &y_val);
        if (c_val > 0.0 && !y_present) throw MissingYWhenSelected("line " + std::to_string(lineno));
        if (c_val == 0.0 && y_present) throw YPresentWhenCensored("line " + std::to_string(lineno));

        ys.push_back(y_present ? y_val : std::numeric_limits<double>::quiet_NaN());
        cs.push_back(c_val);
        for (std::size_t k = 0; k < z_cols.size(); ++k)
            z_raw[k].push_back(fields[static_cast<std::size_t>(z_cols[k])]);
        groups.push_back(group_col >= 0 ? fields[static_cast<std::size_t>(group_col)] : "0");
    }

    const int n = static_cast<int>(cs.size());
    ObservationTable table;
    table.y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
    table.c = Eigen::Map<Eigen::VectorXd>(cs.data(), n);
    table.group = std::move(groups);

    auto is_categorical = [&](const std::string& name) {
        for (const auto& cn : schema.categorical)
            if (cn == name) return true;
        return false;
    };

    // Expand columns; categorical ones become reference-coded dummies.
    std::vector<Eigen::VectorXd> cols;
    for (std::size_t k = 0; k < schema.z.size(); ++k) {
        const std::string& name = schema.z[k];
        if (!is_categorical(name)) {
            Eigen::VectorXd v(n);
            for (int i = 0; i < n; ++i) {
                if (!detail::parse_double(z_raw[k][static_cast<std::size_t>(i)], &v[i]))
                    throw SchemaMismatch("non-numeric value in column '" + name + "'");
                if (!std::isfinite(v[i]))
                    throw SchemaMismatch("non-finite value in column '" + name + "'");
            }
            cols.push_back(v);
            table.z_names.push_back(name);
            table.z_is_indicator.push_back(false);
            continue;
        }
        std::map<std::string, int> counts;
        for (const auto& s : z_raw[k]) ++counts[s];
        std::string reference;
        int best = -1;
        for (const auto& [level, cnt] : counts) {
            if (cnt > best) {
                best = cnt;
                reference = level;
            }
        }
        for (const auto& [level, cnt] : counts) {
            if (level == reference) continue;
            Eigen::VectorXd v(n);
            for (int i = 0; i < n; ++i)
                v[i] = (z_raw[k][static_cast<std::size_t>(i)] == level) ? 1.0 : 0.0;
            cols.push_back(v);
            table.z_names.push_back(name + "=" + level);
            table.z_is_indicator.push_back(true);
        }
    }
    table.z.resize(n, static_cast<int>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) table.z.col(static_cast<int>(j)) = cols[j];

    // x columns: either listed directly or expanded from a categorical name.
    for (const auto& xn : schema.x) {
        bool found = false;
        for (const auto& zn : table.z_names) {
            if (zn == xn || zn.rfind(xn + "=", 0) == 0) {
                table.x_names.push_back(zn);
                found = true;
            }
        }
        if (!found) throw SchemaMismatch("x column '" + xn + "' is not a z column");
    }
    return table;
}

/// Writes a table back to CSV (full double precision; y empty on censored
/// rows). The schema on re-read is: y,c,group,z columns by stored name.
inline void save_table(const ObservationTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    out << "y,c,group";
    for (const auto& zn : table.z_names) out << "," << zn;
    out << "\n";
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (int i = 0; i < table.n(); ++i) {
        if (table.selected(i)) out << fmt(table.y[i]);
        out << "," << fmt(table.c[i]) << "," << table.group[static_cast<std::size_t>(i)];
        for (int j = 0; j < table.z.cols(); ++j) out << "," << fmt(table.z(i, j));
        out << "\n";
    }
}

}  // namespace cfsel
