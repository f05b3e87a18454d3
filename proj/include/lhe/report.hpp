// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lhe/common.hpp"
#include "lhe/eval.hpp"
#include "lhe/geometry.hpp"
#include "lhe/io.hpp"
#include "lhe/topology.hpp"

namespace lhe {

inline std::string csv_cell(double v) { return std::isnan(v) ? "" : format_num(v); }

// `relation,domain,method,metric,value,seed` rows, one per observation
inline std::string eval_report_csv(const EvalReport& report) {
    std::string csv = "relation,domain,method,metric,value,seed\n";
    for (const auto& r : report.rows)
        csv += r.relation + "," + r.domain + "," + r.method + "," + r.metric + "," + csv_cell(r.value) +
               "," + std::to_string(r.seed) + "\n";
    return csv;
}

// Method-by-domain table of seed means (+/- std across seeds), accuracy and
// causality side by side.
inline std::string eval_report_markdown(const EvalReport& report) {
    std::set<std::string> domains, methods;
    // (domain, method, metric) -> per-seed values from the domain aggregate rows
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : report.rows) {
        if (r.relation != "ALL") continue;
        if (r.metric != "accuracy" && r.metric != "causality") continue;
        domains.insert(r.domain);
        methods.insert(r.method);
        values[r.domain + "\x1f" + r.method + "\x1f" + r.metric].push_back(r.value);
    }
    auto cell = [&](const std::string& domain, const std::string& method, const std::string& metric) {
        auto it = values.find(domain + "\x1f" + method + "\x1f" + metric);
        if (it == values.end() || it->second.empty()) return std::string("--");
        double mean = 0;
        for (double v : it->second) mean += v;
        mean /= double(it->second.size());
        if (it->second.size() == 1) return format_num(mean);
        double var = 0;
        for (double v : it->second) var += (v - mean) * (v - mean);
        var /= double(it->second.size());
        return format_num(mean) + " ± " + format_num(std::sqrt(var));
    };

    std::string md = "| Method |";
    for (const auto& d : domains) md += " Accuracy " + d + " |";
    for (const auto& d : domains) md += " Causality " + d + " |";
    md += "\n|---|";
    for (std::size_t i = 0; i < 2 * domains.size(); ++i) md += "---|";
    md += "\n";
    for (const auto& m : methods) {
        md += "| " + m + " |";
        for (const auto& d : domains) md += " " + cell(d, m, "accuracy") + " |";
        for (const auto& d : domains) md += " " + cell(d, m, "causality") + " |";
        md += "\n";
    }
    return md;
}

inline std::string sweep_csv(const SweepCurve& curve) {
    std::string csv = curve.parameter + ",accuracy,causality\n";
    for (std::size_t i = 0; i < curve.grid.size(); ++i)
        csv += format_num(curve.grid[i]) + "," + csv_cell(curve.accuracy[i]) + "," +
               csv_cell(curve.causality[i]) + "\n";
    return csv;
}

inline std::string sweep_plot_json(const SweepCurve& curve) {
    nlohmann::json j{{"x", curve.grid},
                     {"series",
                      {{"accuracy", curve.accuracy}, {"causality", curve.causality}}},
                     {"parameter", curve.parameter},
                     {"argmax", curve.argmax_value}};
    return j.dump(2) + "\n";
}

inline std::string matrix_csv(const std::vector<std::string>& row_labels,
                              const std::vector<std::string>& col_labels, const Matrix& m,
                              const std::string& corner = "test\\train") {
    std::string csv = corner;
    for (const auto& c : col_labels) csv += "," + c;
    csv += "\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        csv += row_labels[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < m.cols(); ++c) csv += "," + csv_cell(m(r, c));
        csv += "\n";
    }
    return csv;
}

inline std::string transfer_plot_json(const TransferMatrix& tm) {
    auto grid = [&](const Matrix& m) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                row.push_back(std::isnan(m(r, c)) ? nlohmann::json(nullptr) : nlohmann::json(m(r, c)));
            rows.push_back(row);
        }
        return rows;
    };
    nlohmann::json j{{"domains", tm.domains},
                     {"accuracy", grid(tm.accuracy)},
                     {"causality", grid(tm.causality)}};
    return j.dump(2) + "\n";
}

inline std::string diagram_csv(const PersistenceDiagram& d) {
    std::string csv = "birth,death,dim\n";
    for (const auto& f : d.features)
        csv += format_num(f.birth) + "," + (f.is_infinite() ? "inf" : format_num(f.death)) + "," +
               std::to_string(f.dim) + "\n";
    return csv;
}

inline std::string similarity_csv(const SimilarityMatrix& sm) {
    std::string csv;
    if (sm.log1p_display) csv += "# transform: log1p\n";
    Matrix shown = sm.distances;
    if (sm.log1p_display)
        shown = shown.unaryExpr([](double v) { return std::log1p(v); });
    csv += matrix_csv(sm.sources, sm.sources, shown, "source");
    return csv;
}

inline std::string overlap_csv(const std::vector<SubspaceOverlap>& overlaps) {
    std::string csv = "a,b,rank,overlap\n";
    for (const auto& o : overlaps)
        csv += o.a + "," + o.b + "," + std::to_string(o.rank) + "," + format_num(o.value) + "\n";
    return csv;
}

inline std::string pca_csv(const std::vector<std::string>& labels,
                           const std::vector<std::string>& groups, const PcaResult& pca) {
    std::string csv = "label,group";
    for (Eigen::Index c = 0; c < pca.coordinates.cols(); ++c)
        csv += ",pc" + std::to_string(c + 1);
    csv += "\n";
    for (Eigen::Index r = 0; r < pca.coordinates.rows(); ++r) {
        csv += labels[static_cast<std::size_t>(r)] + "," + groups[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < pca.coordinates.cols(); ++c)
            csv += "," + format_num(pca.coordinates(r, c));
        csv += "\n";
    }
    return csv;
}

}  // namespace lhe
