#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "qfk/errors.hpp"

namespace qfk {

using cplx = std::complex<double>;

// Exponent vector of length 2*num_vars: slots [0, n) hold z-exponents,
// slots [n, 2n) hold zb-exponents.
using Expo = std::vector<int>;

// Guards against silent degree blowup in curvature compositions.  Shifted
// representatives push unreduced denominators past degree 30, so the default
// leaves headroom for one derivative on top of that.
inline int& poly_degree_cap() {
    static int cap = 48;
    return cap;
}

inline double& default_pole_tol() {
    static double tol = 1e-9;
    return tol;
}

// Polynomial in the paired variables z_1..z_n, zb_1..zb_n with complex
// double coefficients.  Terms are kept in a sorted map, which fixes a
// canonical ordering for serialization and comparison.  Zero coefficients
// are never stored; only exact 0.0 is pruned, tiny values are data.
class PolyField {
public:
    explicit PolyField(int num_vars = 0) : n_(num_vars) {}

    static PolyField constant(int num_vars, cplx c) {
        PolyField p(num_vars);
        if (c != cplx(0.0, 0.0)) p.terms_[Expo(2 * num_vars, 0)] = c;
        return p;
    }

    // var < n refers to z_{var+1}, var >= n refers to zb_{var-n+1}.
    static PolyField variable(int num_vars, int var) {
        PolyField p(num_vars);
        Expo e(2 * num_vars, 0);
        e.at(static_cast<std::size_t>(var)) = 1;
        p.terms_[e] = cplx(1.0, 0.0);
        return p;
    }

    int num_vars() const { return n_; }
    bool is_zero() const { return terms_.empty(); }
    const std::map<Expo, cplx>& terms() const { return terms_; }

    int total_degree() const {
        int d = 0;
        for (const auto& [e, c] : terms_) {
            int s = 0;
            for (int k : e) s += k;
            d = std::max(d, s);
        }
        return d;
    }

    void add_term(const Expo& e, cplx c) {
        if (static_cast<int>(e.size()) != 2 * n_) throw Error("PolyField: bad exponent length");
        auto it = terms_.find(e);
        if (it == terms_.end()) {
            if (c != cplx(0.0, 0.0)) terms_[e] = c;
        } else {
            it->second += c;
            if (it->second == cplx(0.0, 0.0)) terms_.erase(it);
        }
    }

    PolyField operator+(const PolyField& o) const {
        check_same(o);
        PolyField r(*this);
        for (const auto& [e, c] : o.terms_) r.add_term(e, c);
        return r;
    }

    PolyField operator-() const {
        PolyField r(*this);
        for (auto& [e, c] : r.terms_) c = -c;
        return r;
    }

    PolyField operator-(const PolyField& o) const { return *this + (-o); }

    PolyField operator*(const PolyField& o) const {
        check_same(o);
        if (is_zero() || o.is_zero()) return PolyField(n_);
        int cap = poly_degree_cap();
        if (total_degree() + o.total_degree() > cap)
            throw DegreeOverflow("polynomial product exceeds total degree cap " + std::to_string(cap));
        PolyField r(n_);
        Expo e(2 * n_, 0);
        for (const auto& [ea, ca] : terms_) {
            for (const auto& [eb, cb] : o.terms_) {
                for (std::size_t k = 0; k < e.size(); ++k) e[k] = ea[k] + eb[k];
                r.add_term(e, ca * cb);
            }
        }
        return r;
    }

    PolyField operator*(cplx s) const {
        PolyField r(n_);
        if (s == cplx(0.0, 0.0)) return r;
        r.terms_ = terms_;
        for (auto& [e, c] : r.terms_) c *= s;
        return r;
    }

    PolyField partial(int var) const {
        PolyField r(n_);
        for (const auto& [e, c] : terms_) {
            int k = e.at(static_cast<std::size_t>(var));
            if (k == 0) continue;
            Expo ed = e;
            ed[static_cast<std::size_t>(var)] = k - 1;
            r.add_term(ed, c * static_cast<double>(k));
        }
        return r;
    }

    cplx eval(const std::vector<cplx>& z, const std::vector<cplx>& zb) const {
        cplx acc(0.0, 0.0);
        for (const auto& [e, c] : terms_) {
            cplx t = c;
            for (int v = 0; v < n_; ++v) {
                for (int k = 0; k < e[static_cast<std::size_t>(v)]; ++k) t *= z.at(static_cast<std::size_t>(v));
                for (int k = 0; k < e[static_cast<std::size_t>(n_ + v)]; ++k) t *= zb.at(static_cast<std::size_t>(v));
            }
            acc += t;
        }
        return acc;
    }

    // Evaluation on the real slice zb = conj(z).
    cplx diagonal_eval(const std::vector<cplx>& z) const {
        std::vector<cplx> zb(z.size());
        for (std::size_t k = 0; k < z.size(); ++k) zb[k] = std::conj(z[k]);
        return eval(z, zb);
    }

    // Substitute a constant for one variable.
    PolyField substitute(int var, cplx value) const {
        PolyField r(n_);
        for (const auto& [e, c] : terms_) {
            int k = e.at(static_cast<std::size_t>(var));
            cplx t = c;
            for (int j = 0; j < k; ++j) t *= value;
            Expo ed = e;
            ed[static_cast<std::size_t>(var)] = 0;
            r.add_term(ed, t);
        }
        return r;
    }

    // Freeze the zb-half at the constant vector w: the (1,0)-leaf restriction.
    PolyField restrict_zb(const std::vector<cplx>& w) const {
        PolyField r = *this;
        for (int v = 0; v < n_; ++v) r = r.substitute(n_ + v, w.at(static_cast<std::size_t>(v)));
        return r;
    }

    // Freeze the z-half at the constant vector a: the (0,1)-leaf restriction.
    PolyField restrict_z(const std::vector<cplx>& a) const {
        PolyField r = *this;
        for (int v = 0; v < n_; ++v) r = r.substitute(v, a.at(static_cast<std::size_t>(v)));
        return r;
    }

    // Swap the z and zb exponent halves, coefficients untouched.
    PolyField swap_halves() const {
        PolyField r(n_);
        Expo e(2 * n_, 0);
        for (const auto& [ea, ca] : terms_) {
            for (int v = 0; v < n_; ++v) {
                e[static_cast<std::size_t>(v)] = ea[static_cast<std::size_t>(n_ + v)];
                e[static_cast<std::size_t>(n_ + v)] = ea[static_cast<std::size_t>(v)];
            }
            r.add_term(e, ca);
        }
        return r;
    }

    // Swap the z and zb exponent halves and conjugate every coefficient.
    // On the real slice this realizes complex conjugation of the value.
    PolyField formal_conjugate() const {
        PolyField r(n_);
        Expo e(2 * n_, 0);
        for (const auto& [ea, ca] : terms_) {
            for (int v = 0; v < n_; ++v) {
                e[static_cast<std::size_t>(v)] = ea[static_cast<std::size_t>(n_ + v)];
                e[static_cast<std::size_t>(n_ + v)] = ea[static_cast<std::size_t>(v)];
            }
            r.add_term(e, std::conj(ca));
        }
        return r;
    }

    int degree_in_zb() const {
        int d = 0;
        for (const auto& [e, c] : terms_) {
            int s = 0;
            for (int v = 0; v < n_; ++v) s += e[static_cast<std::size_t>(n_ + v)];
            d = std::max(d, s);
        }
        return d;
    }

    int degree_in_z() const {
        int d = 0;
        for (const auto& [e, c] : terms_) {
            int s = 0;
            for (int v = 0; v < n_; ++v) s += e[static_cast<std::size_t>(v)];
            d = std::max(d, s);
        }
        return d;
    }

    bool operator==(const PolyField& o) const { return n_ == o.n_ && terms_ == o.terms_; }
    bool operator!=(const PolyField& o) const { return !(*this == o); }

    double max_coeff_abs() const {
        double m = 0.0;
        for (const auto& [e, c] : terms_) m = std::max(m, std::abs(c));
        return m;
    }

private:
    void check_same(const PolyField& o) const {
        if (n_ != o.n_) throw Error("PolyField: variable count mismatch");
    }

    int n_;
    std::map<Expo, cplx> terms_;
};

inline PolyField operator*(cplx s, const PolyField& p) { return p * s; }

// Quotient of two polynomials.  No gcd reduction is attempted; the pair is
// kept as produced by arithmetic, with a zero numerator normalized to 0/1.
class RationalField {
public:
    RationalField() : num_(0), den_(PolyField::constant(0, 1.0)) {}
    explicit RationalField(PolyField num)
        : num_(std::move(num)), den_(PolyField::constant(num_.num_vars(), 1.0)) {}
    RationalField(PolyField num, PolyField den) : num_(std::move(num)), den_(std::move(den)) {
        if (den_.is_zero()) throw Error("RationalField: zero denominator");
        normalize();
    }

    static RationalField constant(int num_vars, cplx c) {
        return RationalField(PolyField::constant(num_vars, c));
    }
    static RationalField variable(int num_vars, int var) {
        return RationalField(PolyField::variable(num_vars, var));
    }

    const PolyField& num() const { return num_; }
    const PolyField& den() const { return den_; }
    int num_vars() const { return num_.num_vars(); }
    bool is_zero() const { return num_.is_zero(); }
    bool is_poly() const {
        return den_ == PolyField::constant(num_.num_vars(), 1.0);
    }

    RationalField operator+(const RationalField& o) const {
        if (o.num_.is_zero()) return *this;
        if (num_.is_zero()) return o;
        if (den_ == o.den_) return RationalField(num_ + o.num_, den_);
        return RationalField(num_ * o.den_ + o.num_ * den_, den_ * o.den_);
    }
    RationalField operator-() const { return RationalField(-num_, den_); }
    RationalField operator-(const RationalField& o) const { return *this + (-o); }
    RationalField operator*(const RationalField& o) const {
        if (num_.is_zero() || o.num_.is_zero()) return RationalField(PolyField(num_.num_vars()));
        return RationalField(num_ * o.num_, den_ * o.den_);
    }
    RationalField operator*(cplx s) const { return RationalField(num_ * s, den_); }
    RationalField operator/(const RationalField& o) const {
        if (o.num_.is_zero()) throw Error("RationalField: division by zero field");
        return RationalField(num_ * o.den_, den_ * o.num_);
    }

    // Quotient rule; denominator squares, so degree roughly doubles.
    RationalField partial(int var) const {
        if (is_poly()) return RationalField(num_.partial(var));
        return RationalField(num_.partial(var) * den_ - num_ * den_.partial(var), den_ * den_);
    }

    cplx eval(const std::vector<cplx>& z, const std::vector<cplx>& zb, double pole_tol = -1.0) const {
        if (pole_tol < 0.0) pole_tol = default_pole_tol();
        cplx d = den_.eval(z, zb);
        if (std::abs(d) < pole_tol) throw PoleError("denominator magnitude " + std::to_string(std::abs(d)) + " below pole tolerance");
        return num_.eval(z, zb) / d;
    }

    cplx diagonal_eval(const std::vector<cplx>& z, double pole_tol = -1.0) const {
        std::vector<cplx> zb(z.size());
        for (std::size_t k = 0; k < z.size(); ++k) zb[k] = std::conj(z[k]);
        return eval(z, zb, pole_tol);
    }

    RationalField restrict_zb(const std::vector<cplx>& w) const {
        return RationalField(num_.restrict_zb(w), den_.restrict_zb(w));
    }
    RationalField restrict_z(const std::vector<cplx>& a) const {
        return RationalField(num_.restrict_z(a), den_.restrict_z(a));
    }
    RationalField swap_halves() const {
        return RationalField(num_.swap_halves(), den_.swap_halves());
    }
    RationalField formal_conjugate() const {
        return RationalField(num_.formal_conjugate(), den_.formal_conjugate());
    }

    bool operator==(const RationalField& o) const { return num_ == o.num_ && den_ == o.den_; }
    bool operator!=(const RationalField& o) const { return !(*this == o); }

private:
    void normalize() {
        if (num_.is_zero()) den_ = PolyField::constant(num_.num_vars(), 1.0);
    }

    PolyField num_, den_;
};

inline RationalField operator*(cplx s, const RationalField& r) { return r * s; }

// ---- literal syntax ------------------------------------------------------
//
//   poly     := term ('+' term)*
//   term     := [coef] varref*        (juxtaposition or '*' multiplies)
//   coef     := '(' re [im 'i'] ')' | signed real
//   varref   := ('zb'|'z') index ['^' exp]
//   rational := poly [ '/' poly ]
//
// Examples: "(-1.0+0.5i) z1^2 zb2", "1 + (0,?)..."; serialization always
// writes the parenthesized complex coefficient with 17 significant digits
// so canonical forms round-trip bit exactly.

namespace detail {

struct Cursor {
    const std::string& s;
    std::size_t pos = 0;
    std::size_t line() const {
        return 1 + static_cast<std::size_t>(std::count(s.begin(), s.begin() + static_cast<long>(pos), '\n'));
    }
    std::size_t col() const {
        std::size_t last = s.rfind('\n', pos == 0 ? 0 : pos - 1);
        return last == std::string::npos ? pos + 1 : pos - last;
    }
    void skip_ws() {
        while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\n' || s[pos] == '\r')) ++pos;
    }
    bool eof() {
        skip_ws();
        return pos >= s.size();
    }
    char peek() {
        skip_ws();
        return pos < s.size() ? s[pos] : '\0';
    }
    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, line(), col()); }
};

inline double parse_real(Cursor& c) {
    c.skip_ws();
    double sign = 1.0;
    if (c.pos < c.s.size() && (c.s[c.pos] == '+' || c.s[c.pos] == '-')) {
        if (c.s[c.pos] == '-') sign = -1.0;
        ++c.pos;
        c.skip_ws();
    }
    const char* begin = c.s.c_str() + c.pos;
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin) c.fail("expected a number");
    c.pos += static_cast<std::size_t>(end - begin);
    return sign * v;
}

// (re), (re+imi), (re-imi), (imi)
inline cplx parse_paren_complex(Cursor& c) {
    if (c.peek() != '(') c.fail("expected '('");
    ++c.pos;
    double re = 0.0, im = 0.0;
    double first = parse_real(c);
    c.skip_ws();
    if (c.pos < c.s.size() && (c.s[c.pos] == 'i' || c.s[c.pos] == 'I')) {
        ++c.pos;
        im = first;
    } else {
        re = first;
        c.skip_ws();
        if (c.pos < c.s.size() && (c.s[c.pos] == '+' || c.s[c.pos] == '-')) {
            double second = parse_real(c);
            c.skip_ws();
            if (c.pos >= c.s.size() || (c.s[c.pos] != 'i' && c.s[c.pos] != 'I'))
                c.fail("expected 'i' after imaginary part");
            ++c.pos;
            im = second;
        }
    }
    if (c.peek() != ')') c.fail("expected ')'");
    ++c.pos;
    return {re, im};
}

inline bool at_varref(Cursor& c) {
    char ch = c.peek();
    return ch == 'z' || ch == 'Z';
}

inline PolyField parse_poly_sum(Cursor& c, int num_vars);

inline PolyField parse_term(Cursor& c, int num_vars) {
    cplx coef(1.0, 0.0);
    bool have_coef = false;
    char ch = c.peek();
    if (ch == '(') {
        coef = parse_paren_complex(c);
        have_coef = true;
    } else if (ch == '-' || ch == '+' || (ch >= '0' && ch <= '9') || ch == '.') {
        coef = cplx(parse_real(c), 0.0);
        have_coef = true;
    }
    Expo e(static_cast<std::size_t>(2 * num_vars), 0);
    bool have_var = false;
    for (;;) {
        c.skip_ws();
        if (c.pos < c.s.size() && c.s[c.pos] == '*') {
            ++c.pos;
            continue;
        }
        if (!at_varref(c)) break;
        ++c.pos;
        bool bar = false;
        if (c.pos < c.s.size() && (c.s[c.pos] == 'b' || c.s[c.pos] == 'B')) {
            bar = true;
            ++c.pos;
        }
        if (c.pos >= c.s.size() || c.s[c.pos] < '0' || c.s[c.pos] > '9') c.fail("expected variable index");
        int idx = 0;
        while (c.pos < c.s.size() && c.s[c.pos] >= '0' && c.s[c.pos] <= '9') {
            idx = idx * 10 + (c.s[c.pos] - '0');
            ++c.pos;
        }
        if (idx < 1 || idx > num_vars) c.fail("variable index out of range 1.." + std::to_string(num_vars));
        int exp = 1;
        c.skip_ws();
        if (c.pos < c.s.size() && c.s[c.pos] == '^') {
            ++c.pos;
            c.skip_ws();
            if (c.pos >= c.s.size() || c.s[c.pos] < '0' || c.s[c.pos] > '9') c.fail("expected exponent");
            exp = 0;
            while (c.pos < c.s.size() && c.s[c.pos] >= '0' && c.s[c.pos] <= '9') {
                exp = exp * 10 + (c.s[c.pos] - '0');
                ++c.pos;
            }
        }
        e[static_cast<std::size_t>((bar ? num_vars : 0) + idx - 1)] += exp;
        have_var = true;
    }
    if (!have_coef && !have_var) c.fail("expected a term");
    PolyField p(num_vars);
    p.add_term(e, coef);
    return p;
}

inline PolyField parse_poly_sum(Cursor& c, int num_vars) {
    PolyField p = parse_term(c, num_vars);
    for (;;) {
        c.skip_ws();
        if (c.pos < c.s.size() && c.s[c.pos] == '+') {
            ++c.pos;
            p = p + parse_term(c, num_vars);
        } else {
            break;
        }
    }
    return p;
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline PolyField parse_poly(const std::string& text, int num_vars) {
    detail::Cursor c{text};
    PolyField p = detail::parse_poly_sum(c, num_vars);
    if (!c.eof()) c.fail("trailing characters after polynomial");
    return p;
}

inline RationalField parse_rational(const std::string& text, int num_vars) {
    detail::Cursor c{text};
    PolyField num = detail::parse_poly_sum(c, num_vars);
    if (c.eof()) return RationalField(std::move(num));
    if (c.peek() != '/') c.fail("expected '/' or end of input");
    ++c.pos;
    PolyField den = detail::parse_poly_sum(c, num_vars);
    if (!c.eof()) c.fail("trailing characters after denominator");
    return RationalField(std::move(num), std::move(den));
}

inline std::string to_string(const PolyField& p) {
    if (p.is_zero()) return "(0)";
    std::string out;
    bool first = true;
    for (const auto& [e, c] : p.terms()) {
        if (!first) out += " + ";
        first = false;
        out += "(" + detail::format_double(c.real());
        if (c.imag() >= 0.0 || std::isnan(c.imag()))
            out += "+" + detail::format_double(c.imag()) + "i)";
        else
            out += detail::format_double(c.imag()) + "i)";
        int n = p.num_vars();
        for (int v = 0; v < 2 * n; ++v) {
            int k = e[static_cast<std::size_t>(v)];
            if (k == 0) continue;
            out += v < n ? " z" + std::to_string(v + 1) : " zb" + std::to_string(v - n + 1);
            if (k > 1) out += "^" + std::to_string(k);
        }
    }
    return out;
}

inline std::string to_string(const RationalField& r) {
    if (r.is_poly()) return to_string(r.num());
    return to_string(r.num()) + " / " + to_string(r.den());
}

}  // namespace qfk
