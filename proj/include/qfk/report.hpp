#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "qfk/holonomy.hpp"

namespace qfk {

// One named check: the measured value, the bound it must clear, and the
// direction of the comparison.
struct CheckRecord {
    std::string name;
    double value = 0.0;
    double bound = 0.0;
    bool upper = true;
    bool pass = false;
};

inline CheckRecord check_below(const std::string& name, double value, double bound) {
    return {name, value, bound, true, value < bound};
}

inline CheckRecord check_above(const std::string& name, double value, double bound) {
    return {name, value, bound, false, value > bound};
}

inline nlohmann::json environment_json() {
    return nlohmann::json{{"schema", 1},
                          {"compiler", __VERSION__},
                          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                        std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                        std::to_string(EIGEN_MINOR_VERSION)}};
}

// Reports carry no timestamps so identical runs serialize identically.
struct Report {
    std::string command;
    nlohmann::json config;
    std::vector<CheckRecord> records;

    bool all_pass() const {
        for (const auto& r : records)
            if (!r.pass) return false;
        return true;
    }

    nlohmann::json to_json() const {
        nlohmann::json checks = nlohmann::json::array();
        for (const auto& r : records)
            checks.push_back(nlohmann::json{{"name", r.name},
                                            {"value", r.value},
                                            {"bound", r.bound},
                                            {"direction", r.upper ? "below" : "above"},
                                            {"pass", r.pass}});
        return nlohmann::json{{"command", command},
                              {"config", config},
                              {"environment", environment_json()},
                              {"checks", checks},
                              {"pass", all_pass()}};
    }
};

inline nlohmann::json holonomy_report_json(const HolonomyReport& rep) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : rep.samples) {
        nlohmann::json pt = nlohmann::json::array();
        for (int i = 0; i < s.point.size(); ++i) pt.push_back(s.point[i]);
        samples.push_back(nlohmann::json{{"point", pt},
                                         {"preserve_residual", s.preserve_residual},
                                         {"membership", s.membership},
                                         {"span_residual", s.span_residual},
                                         {"sl_trace", s.sl_trace}});
    }
    return nlohmann::json{{"samples", samples},
                          {"max_preserve_residual", rep.max_preserve_residual},
                          {"max_membership", rep.max_membership},
                          {"max_span_residual", rep.max_span_residual},
                          {"max_sl_trace", rep.max_sl_trace}};
}

inline void write_json_file(const std::string& path, const nlohmann::json& doc) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << doc.dump(1) << "\n";
}

inline std::string csv_number(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline void write_csv_file(const std::string& path, const std::vector<std::string>& header,
                           const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << "\n";
    }
}

}  // namespace qfk
