#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "qfk/cproj.hpp"
#include "qfk/errors.hpp"
#include "qfk/poly.hpp"

namespace qfk {

// One chart worth of input data: the connection representative, the line
// bundle form, and the working polydisk.
struct Instance {
    int n = 0;
    CProjectiveData D;
    LineBundleData L;
    double domain_radius = 1.0;
    int grid = 5;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> offset_to_line_col(const std::string& text,
                                                              std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t p = 0; p < byte && p < text.size(); ++p) {
        if (text[p] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

inline nlohmann::json parse_json_file(const std::string& path, std::string* raw_out = nullptr) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string raw = ss.str();
    if (raw_out) *raw_out = raw;
    try {
        return nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
        auto [line, col] = offset_to_line_col(raw, e.byte > 0 ? e.byte - 1 : 0);
        throw ParseError(std::string("json: ") + e.what(), line, col);
    }
}

inline void parse_gamma_key(const std::string& key, int n, int& k, int& i, int& j) {
    int vals[3] = {0, 0, 0};
    std::size_t p = 0;
    for (int t = 0; t < 3; ++t) {
        if (t > 0) {
            if (p >= key.size() || key[p] != ',') throw ParseError("gamma key must be \"k,i,j\": " + key, 1, p + 1);
            ++p;
        }
        while (p < key.size() && key[p] == ' ') ++p;
        if (p >= key.size() || key[p] < '0' || key[p] > '9')
            throw ParseError("gamma key must be \"k,i,j\": " + key, 1, p + 1);
        while (p < key.size() && key[p] >= '0' && key[p] <= '9') {
            vals[t] = vals[t] * 10 + (key[p] - '0');
            ++p;
        }
        while (p < key.size() && key[p] == ' ') ++p;
    }
    if (p != key.size()) throw ParseError("gamma key must be \"k,i,j\": " + key, 1, p + 1);
    for (int t = 0; t < 3; ++t)
        if (vals[t] < 1 || vals[t] > n)
            throw ParseError("gamma key index out of range 1.." + std::to_string(n) + ": " + key, 1, 1);
    k = vals[0] - 1;
    i = vals[1] - 1;
    j = vals[2] - 1;
}

}  // namespace detail

inline Instance load_instance(const std::string& path) {
    nlohmann::json doc = detail::parse_json_file(path);
    if (!doc.is_object()) throw Error("instance file must hold a JSON object");
    if (!doc.contains("n") || !doc["n"].is_number_integer())
        throw Error("instance file needs an integer field n");
    Instance inst;
    inst.n = doc["n"].get<int>();
    if (inst.n < 2) throw Error("instance needs n >= 2");
    inst.D = CProjectiveData::zero(inst.n);
    inst.L = LineBundleData::zero(inst.n);
    if (doc.contains("gamma")) {
        if (!doc["gamma"].is_object()) throw Error("gamma must map \"k,i,j\" keys to literals");
        for (auto& [key, val] : doc["gamma"].items()) {
            int k, i, j;
            detail::parse_gamma_key(key, inst.n, k, i, j);
            if (!val.is_string()) throw Error("gamma entry " + key + " must be a literal string");
            RationalField f = parse_rational(val.get<std::string>(), inst.n);
            // Symmetric fill; a contradicting mirror entry is an error.
            RationalField& slot = inst.D.G(k, i, j);
            RationalField& mirror = inst.D.G(k, j, i);
            if (!slot.is_zero() && slot != f)
                throw Error("gamma entries for " + key + " and its mirror disagree");
            slot = f;
            if (i != j) {
                if (!mirror.is_zero() && mirror != f)
                    throw Error("gamma entries for " + key + " and its mirror disagree");
                mirror = f;
            }
        }
    }
    if (doc.contains("theta")) {
        if (!doc["theta"].is_array() || doc["theta"].size() != static_cast<std::size_t>(inst.n))
            throw Error("theta must be an array of n literals");
        for (int i = 0; i < inst.n; ++i) {
            if (!doc["theta"][static_cast<std::size_t>(i)].is_string())
                throw Error("theta entries must be literal strings");
            inst.L.theta[static_cast<std::size_t>(i)] =
                parse_rational(doc["theta"][static_cast<std::size_t>(i)].get<std::string>(), inst.n);
        }
    }
    if (doc.contains("domain_radius")) {
        inst.domain_radius = doc["domain_radius"].get<double>();
        if (!(inst.domain_radius > 0.0)) throw Error("domain_radius must be positive");
    }
    if (doc.contains("grid")) {
        inst.grid = doc["grid"].get<int>();
        if (inst.grid < 2) throw Error("grid must be at least 2");
    }
    validate_connection(inst.D);
    return inst;
}

// Representative shift file: the (1,0) components of a real 1-form, the
// (0,1) half implied by reality.
inline OneForm load_one_form(const std::string& path, int n) {
    nlohmann::json doc = detail::parse_json_file(path);
    if (!doc.is_object() || !doc.contains("gamma") || !doc["gamma"].is_array())
        throw Error("representative file needs a gamma array");
    if (doc.contains("n") && doc["n"].get<int>() != n)
        throw Error("representative file dimension does not match the instance");
    if (doc["gamma"].size() != static_cast<std::size_t>(n))
        throw Error("representative gamma must have n entries");
    std::vector<RationalField> h;
    h.reserve(static_cast<std::size_t>(n));
    for (const auto& v : doc["gamma"]) {
        if (!v.is_string()) throw Error("representative gamma entries must be literal strings");
        h.push_back(parse_rational(v.get<std::string>(), n));
    }
    return OneForm::from_holomorphic(std::move(h));
}

// ---- built-in charts used across the test batteries ------------------------

// Flat chart: zero connection, zero twist.
inline Instance flat_instance() {
    Instance inst;
    inst.n = 2;
    inst.D = CProjectiveData::zero(2);
    inst.L = LineBundleData::zero(2);
    inst.domain_radius = 1.0;
    inst.grid = 5;
    return inst;
}

// Fubini-Study-type chart: the Levi-Civita representative of the standard
// Kaehler metric on a projective plane chart.  The bundle form is the integer
// multiple of the chart's (1,1) potential form that matches the density trace
// form; integer weight keeps the glued transition maps rational, so the line
// solver's polynomial ansatz is exact for this chart.  Radius stays below the
// closest denominator zero of the complexified coefficients.
inline Instance fs_instance() {
    Instance inst;
    inst.n = 2;
    inst.D = CProjectiveData::zero(2);
    inst.L = LineBundleData::zero(2);
    const std::string den = "1 + z1 zb1 + z2 zb2";
    auto put = [&](int k, int i, int j, const std::string& num) {
        RationalField f = parse_rational(num + " / " + den, 2);
        inst.D.G(k, i, j) = f;
        inst.D.G(k, j, i) = f;
    };
    put(0, 0, 0, "(-2) zb1");
    put(0, 0, 1, "(-1) zb2");
    put(1, 1, 1, "(-2) zb2");
    put(1, 0, 1, "(-1) zb1");
    inst.L.theta[0] = parse_rational("(-1) zb1 / " + den, 2);
    inst.L.theta[1] = parse_rational("(-1) zb2 / " + den, 2);
    inst.domain_radius = 0.6;
    inst.grid = 5;
    return inst;
}

// Flat chart plus a perturbation with nonvanishing pure-type curvature.
inline Instance pert_instance() {
    Instance inst = flat_instance();
    RationalField f(PolyField::variable(2, 0));
    inst.D.G(0, 1, 1) = f;
    inst.domain_radius = 1.0;
    return inst;
}

// Second admissible representatives: shifts gamma with D' = D + <.,gamma>_c
// still of pure-free curvature, exactly.  For the flat chart
// gamma_k = -zb_k / (2 + z.zb); for the FS chart
// gamma_k = zb_k / (2 (1+z.zb) (1+z.zb/2)).
inline OneForm flat_second_rep() {
    std::vector<RationalField> h;
    h.push_back(parse_rational("(-0.5) zb1 / 1 + (0.5) z1 zb1 + (0.5) z2 zb2", 2));
    h.push_back(parse_rational("(-0.5) zb2 / 1 + (0.5) z1 zb1 + (0.5) z2 zb2", 2));
    return OneForm::from_holomorphic(std::move(h));
}

inline OneForm fs_second_rep() {
    const std::string den =
        "1 + (1.5) z1 zb1 + (1.5) z2 zb2 + (0.5) z1^2 zb1^2 + z1 zb1 z2 zb2 + (0.5) z2^2 zb2^2";
    std::vector<RationalField> h;
    h.push_back(parse_rational("(0.5) zb1 / " + den, 2));
    h.push_back(parse_rational("(0.5) zb2 / " + den, 2));
    return OneForm::from_holomorphic(std::move(h));
}

// Same geometry in a shifted gauge.  The bundle form is data and stays put;
// the density trace form tracks the new connection on its own.
inline Instance with_representative(const Instance& inst, const OneForm& shift) {
    Instance out = inst;
    out.D = change_representative(inst.D, shift);
    return out;
}

}  // namespace qfk
