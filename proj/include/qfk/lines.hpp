#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "qfk/twistor.hpp"

namespace qfk {

// Polynomial parametrization of a closed rational curve through the glued
// space, written in the chart where the curve meets the plus domain.  Base
// coefficients move the leaf parameter, fiber coefficients move the covector.
// The conjugate-chart half of the curve is not stored: it is forced by the
// real structure, see conjugate_rep.
struct LineAnsatz {
    int n = 2;
    int d_base = 2;
    int d_fib = 3;
    std::vector<VectorXcd> a;  // base coefficients, each length n
    std::vector<VectorXcd> b;  // fiber coefficients, each length n+1

    static LineAnsatz zero(int n, int d_base = 2, int d_fib = 3) {
        LineAnsatz L;
        L.n = n;
        L.d_base = d_base;
        L.d_fib = d_fib;
        L.a.assign(static_cast<std::size_t>(d_base) + 1, VectorXcd::Zero(n));
        L.b.assign(static_cast<std::size_t>(d_fib) + 1, VectorXcd::Zero(n + 1));
        return L;
    }

    int real_dim() const { return 2 * (n * (d_base + 1) + (n + 1) * (d_fib + 1)); }

    static VectorXcd horner(const std::vector<VectorXcd>& c, cplx t) {
        VectorXcd acc = c.back();
        for (int d = static_cast<int>(c.size()) - 2; d >= 0; --d)
            acc = acc * t + c[static_cast<std::size_t>(d)];
        return acc;
    }
    static VectorXcd horner_deriv(const std::vector<VectorXcd>& c, cplx t) {
        const int D = static_cast<int>(c.size()) - 1;
        if (D == 0) return VectorXcd::Zero(c[0].size());
        VectorXcd acc = cplx(double(D), 0.0) * c.back();
        for (int d = D - 1; d >= 1; --d) acc = acc * t + cplx(double(d), 0.0) * c[static_cast<std::size_t>(d)];
        return acc;
    }

    std::vector<cplx> base_at(cplx t) const {
        VectorXcd v = horner(a, t);
        return std::vector<cplx>(v.data(), v.data() + v.size());
    }
    VectorXcd cov_at(cplx t) const { return horner(b, t); }
    std::vector<cplx> base_deriv(cplx t) const {
        VectorXcd v = horner_deriv(a, t);
        return std::vector<cplx>(v.data(), v.data() + v.size());
    }
    VectorXcd cov_deriv(cplx t) const { return horner_deriv(b, t); }

    ChartPoint chart_at(cplx t) const { return ChartPoint{true, base_at(t), cov_at(t)}; }

    // Coefficients of the same curve seen from the conjugate chart, with the
    // parameter inverted across the equator.  Evaluating this at mu equals
    // applying the real structure to the stored chart at -conj(mu), so a zero
    // matching residual certifies the curve is closed and real at once.
    LineAnsatz conjugate_rep() const {
        LineAnsatz q = *this;
        for (std::size_t d = 0; d < a.size(); ++d)
            q.a[d] = (d % 2 ? -1.0 : 1.0) * a[d].conjugate();
        for (std::size_t d = 0; d < b.size(); ++d)
            q.b[d] = (d % 2 ? 1.0 : -1.0) * b[d].conjugate();
        return q;
    }

    // circle action: parameter rotation folded into the coefficients so the
    // degree-one fiber coefficient stays fixed
    LineAnsatz rotated(double t) const {
        LineAnsatz r = *this;
        for (std::size_t d = 0; d < a.size(); ++d)
            r.a[d] = std::polar(1.0, -t * double(d)) * a[d];
        for (std::size_t d = 0; d < b.size(); ++d)
            r.b[d] = std::polar(1.0, t * (1.0 - double(d))) * b[d];
        return r;
    }

    VectorXd pack() const {
        VectorXd v(real_dim());
        int k = 0;
        for (const auto& c : a)
            for (int i = 0; i < c.size(); ++i) {
                v[k++] = c[i].real();
                v[k++] = c[i].imag();
            }
        for (const auto& c : b)
            for (int i = 0; i < c.size(); ++i) {
                v[k++] = c[i].real();
                v[k++] = c[i].imag();
            }
        return v;
    }

    static LineAnsatz unpack(const VectorXd& v, int n, int d_base = 2, int d_fib = 3) {
        LineAnsatz L = zero(n, d_base, d_fib);
        int k = 0;
        for (auto& c : L.a)
            for (int i = 0; i < c.size(); ++i) {
                c[i] = cplx(v[k], v[k + 1]);
                k += 2;
            }
        for (auto& c : L.b)
            for (int i = 0; i < c.size(); ++i) {
                c[i] = cplx(v[k], v[k + 1]);
                k += 2;
            }
        return L;
    }
};

// The free chart coordinates of the curve family: the constant and linear
// base coefficients, 4n reals.  Everything else is determined by closedness
// plus the gauge pins.
inline VectorXd m_coords(const LineAnsatz& L) { return L.pack().head(4 * L.n); }

inline VectorXd m_target(const std::vector<cplx>& a0, const std::vector<cplx>& a1) {
    const int n = static_cast<int>(a0.size());
    VectorXd v(4 * n);
    for (int i = 0; i < n; ++i) {
        v[2 * i] = a0[static_cast<std::size_t>(i)].real();
        v[2 * i + 1] = a0[static_cast<std::size_t>(i)].imag();
        v[2 * n + 2 * i] = a1[static_cast<std::size_t>(i)].real();
        v[2 * n + 2 * i + 1] = a1[static_cast<std::size_t>(i)].imag();
    }
    return v;
}

// exact curve through a real-slice point: constant leaf, linear covector
inline LineAnsatz canonical_ansatz(const TwistorAtlas& atlas, const std::vector<cplx>& x) {
    LineAnsatz L = LineAnsatz::zero(atlas.inst.n);
    std::vector<cplx> xb(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xb[i] = std::conj(x[i]);
    for (std::size_t i = 0; i < x.size(); ++i) L.a[0][static_cast<Eigen::Index>(i)] = xb[i];
    L.b[1] = atlas.eval_row(true, xb, x);
    return L;
}

// Closedness residual sampled on the equator: push the plus chart through the
// gluing and compare with the conjugate-chart coefficients.  2(2n+1) reals
// per collocation node.
inline VectorXd matching_residual_vec(const TwistorAtlas& atlas, const LineAnsatz& p, int K = 8) {
    const int n = p.n;
    const int per = 2 * (2 * n + 1);
    LineAnsatz q = p.conjugate_rep();
    VectorXd out(per * K);
    for (int k = 0; k < K; ++k) {
        const double th = 2.0 * M_PI * double(k) / double(K);
        const cplx lam(std::cos(th), std::sin(th));
        const cplx mu = cplx(1.0, 0.0) / lam;
        std::vector<cplx> guess = q.base_at(mu);
        ChartPoint T = atlas.transition(p.chart_at(lam), &guess);
        const std::vector<cplx> qb = q.base_at(mu);
        const VectorXcd qc = q.cov_at(mu);
        int off = per * k;
        for (int i = 0; i < n; ++i) {
            cplx d = T.base[static_cast<std::size_t>(i)] - qb[static_cast<std::size_t>(i)];
            out[off + 2 * i] = d.real();
            out[off + 2 * i + 1] = d.imag();
        }
        for (int i = 0; i <= n; ++i) {
            cplx d = T.cov[i] - qc[i];
            out[off + 2 * n + 2 * i] = d.real();
            out[off + 2 * n + 2 * i + 1] = d.imag();
        }
    }
    return out;
}

inline double matching_residual(const TwistorAtlas& atlas, const LineAnsatz& p, int K = 8) {
    return matching_residual_vec(atlas, p, K).cwiseAbs().maxCoeff();
}

// Direct real-structure check: the involution image of each equator point
// must land back on the curve at the antipodal parameter.
inline double reality_residual(const TwistorAtlas& atlas, const LineAnsatz& p, int K = 8) {
    const int n = p.n;
    LineAnsatz q = p.conjugate_rep();
    double worst = 0.0;
    for (int k = 0; k < K; ++k) {
        const double th = 2.0 * M_PI * double(k) / double(K);
        const cplx lam(std::cos(th), std::sin(th));
        ChartPoint tau = atlas.real_structure(p.chart_at(lam));
        std::vector<cplx> guess = q.base_at(cplx(-1.0, 0.0) / lam);
        ChartPoint tr = atlas.transition(p.chart_at(-lam), &guess);
        for (int i = 0; i < n; ++i)
            worst = std::max(worst,
                             std::abs(tau.base[static_cast<std::size_t>(i)] -
                                      tr.base[static_cast<std::size_t>(i)]));
        worst = std::max(worst, (tau.cov - tr.cov).cwiseAbs().maxCoeff());
    }
    return worst;
}

struct LineSolveOptions {
    int collocation = 8;
    double tol = 1e-9;
    int max_iter = 30;
    double fd_step = 1e-6;
    double fd_step_central = 1e-5;
    bool best_effort = false;  // return the stalled iterate instead of throwing
};

struct RealTwistorLine {
    LineAnsatz line;
    double matching_res = 0.0;
    double reality_res = 0.0;
    int iterations = 0;
    int collocation = 8;
};

namespace detail {
// Closedness admits a three-parameter gauge inside the degree caps: the
// fiber phase, plus the two sphere rotations whose first-order coefficient
// action is still polynomial.  One phase row and the two anchor rows on the
// constant fiber coefficient's leading entry pin all three; the exact curve
// families satisfy the anchors identically.
inline Eigen::Vector3d pin_rows(const VectorXcd& ref, const LineAnsatz& p) {
    Eigen::Vector3d r;
    r[0] = ref.dot(p.b[1]).imag();
    r[1] = p.b[0][0].real();
    r[2] = p.b[0][0].imag();
    return r;
}

}  // namespace detail

// Gauss-Newton on [closedness nodes; gauge pins; optional chart-coordinate
// targets], unknowns the packed plus-chart coefficients.  The phase pin
// reference is frozen from the seed so repeated solves are deterministic.
inline RealTwistorLine solve_line(const TwistorAtlas& atlas, const LineAnsatz& seed,
                                  const VectorXd* target = nullptr,
                                  const LineSolveOptions& opts = {}) {
    const int n = seed.n;
    const int mdim = 4 * n;
    const VectorXcd pin_ref = seed.b[1];
    auto residual = [&](const VectorXd& v) -> VectorXd {
        LineAnsatz p = LineAnsatz::unpack(v, n, seed.d_base, seed.d_fib);
        VectorXd m = matching_residual_vec(atlas, p, opts.collocation);
        VectorXd out(m.size() + 3 + (target ? mdim : 0));
        out.head(m.size()) = m;
        out.segment(m.size(), 3) = detail::pin_rows(pin_ref, p);
        if (target) out.tail(mdim) = v.head(mdim) - *target;
        return out;
    };
    VectorXd v = seed.pack();
    VectorXd F = residual(v);
    int iters = 0;
    bool converged = F.cwiseAbs().maxCoeff() < opts.tol;
    while (!converged && iters < opts.max_iter) {
        // forward differences are fine while the residual is large; the
        // endgame needs central ones, noise in a forward Jacobian stalls the
        // line search around 1e-5
        const bool endgame = F.cwiseAbs().maxCoeff() < 1e-3;
        const double h = endgame ? opts.fd_step_central : opts.fd_step;
        MatrixXd J(F.size(), v.size());
        VectorXd vp = v;
        for (int j = 0; j < v.size(); ++j) {
            vp[j] += h;
            if (endgame) {
                VectorXd Fp = residual(vp);
                vp[j] = v[j] - h;
                J.col(j) = (Fp - residual(vp)) / (2.0 * h);
            } else {
                J.col(j) = (residual(vp) - F) / h;
            }
            vp[j] = v[j];
        }
        VectorXd step = J.colPivHouseholderQr().solve(F);
        const double f0 = F.norm();
        double t = 1.0;
        bool accepted = false;
        while (t >= 1.0 / 64.0) {
            VectorXd vc = v - t * step;
            bool ok = true;
            VectorXd Fc;
            try {
                Fc = residual(vc);
            } catch (const NotDecomposable&) {
                ok = false;
            }
            if (ok && Fc.norm() < f0) {
                v = vc;
                F = Fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        ++iters;
        if (!accepted) break;
        converged = F.cwiseAbs().maxCoeff() < opts.tol;
    }
    if (!converged && !opts.best_effort)
        throw NewtonDivergence("curve solve stalled at residual " +
                               detail::sci(F.cwiseAbs().maxCoeff()) + " after " +
                               std::to_string(iters) + " iterations");
    RealTwistorLine out;
    out.line = LineAnsatz::unpack(v, n, seed.d_base, seed.d_fib);
    out.matching_res = matching_residual(atlas, out.line, opts.collocation);
    out.reality_res = reality_residual(atlas, out.line, opts.collocation);
    out.iterations = iters;
    out.collocation = opts.collocation;
    return out;
}

inline RealTwistorLine solve_at(const TwistorAtlas& atlas, const VectorXd& target,
                                const LineSolveOptions& opts = {}) {
    const int n = atlas.inst.n;
    std::vector<cplx> x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = std::conj(cplx(target[2 * i], target[2 * i + 1]));
    LineAnsatz seed = canonical_ansatz(atlas, x);
    return solve_line(atlas, seed, &target, opts);
}

// Ramp the linear coefficient toward a distant target, re-seeding each step
// from the previous solution.
inline RealTwistorLine solve_at_stepped(const TwistorAtlas& atlas, const VectorXd& target,
                                        int steps, const LineSolveOptions& opts = {}) {
    const int n = atlas.inst.n;
    std::vector<cplx> x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = std::conj(cplx(target[2 * i], target[2 * i + 1]));
    LineAnsatz seed = canonical_ansatz(atlas, x);
    RealTwistorLine cur;
    for (int k = 1; k <= steps; ++k) {
        VectorXd tk = target;
        const double s = double(k) / double(steps);
        for (int j = 2 * n; j < 4 * n; ++j) tk[j] = s * target[j];
        cur = solve_line(atlas, seed, &tk, opts);
        seed = cur.line;
    }
    return cur;
}

struct TangentFrame {
    LineAnsatz line;
    MatrixXd kernel;  // packed-coefficient directions spanning the curve family
    VectorXd svals;
    double gap = 0.0;
};

// Kernel of the linearized [closedness; pins] system at a solved curve.  The
// family is 4n-dimensional; a collapsed spectral gap flags a degenerate
// instance.  Fourth-order differences: the kernel feeds pointwise complex
// structures whose tolerances sit near 1e-8.
inline TangentFrame tangent_frame(const TwistorAtlas& atlas, const LineAnsatz& line,
                                  const VectorXcd* pin_ref = nullptr, double gap_min = 1e4,
                                  int K = 8, double h = 1e-3) {
    const VectorXcd ref = pin_ref ? *pin_ref : line.b[1];
    auto rows = [&](const VectorXd& v) -> VectorXd {
        LineAnsatz p = LineAnsatz::unpack(v, line.n, line.d_base, line.d_fib);
        VectorXd m = matching_residual_vec(atlas, p, K);
        VectorXd out(m.size() + 3);
        out.head(m.size()) = m;
        out.tail(3) = detail::pin_rows(ref, p);
        return out;
    };
    const VectorXd v = line.pack();
    const int N = static_cast<int>(v.size());
    const int mdim = 4 * line.n;
    MatrixXd J;
    for (int j = 0; j < N; ++j) {
        VectorXd e = v;
        e[j] = v[j] + h;
        VectorXd f1 = rows(e);
        e[j] = v[j] - h;
        VectorXd f_1 = rows(e);
        e[j] = v[j] + 2.0 * h;
        VectorXd f2 = rows(e);
        e[j] = v[j] - 2.0 * h;
        VectorXd f_2 = rows(e);
        if (J.size() == 0) J.resize(f1.size(), N);
        J.col(j) = (8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * h);
    }
    Eigen::JacobiSVD<MatrixXd> svd(J, Eigen::ComputeFullV);
    const VectorXd s = svd.singularValues();
    const int r = N - mdim;
    const double gap = s[r - 1] / std::max(s[r], 1e-300);
    if (gap < gap_min)
        throw RankError("curve family rank gap " + detail::sci(gap) + " below " +
                        detail::sci(gap_min));
    TangentFrame F;
    F.line = line;
    F.kernel = svd.matrixV().rightCols(mdim);
    F.svals = s;
    F.gap = gap;
    return F;
}

// A point of the parameter sphere in whichever chart contains it.
struct SpherePoint {
    bool plus = true;
    cplx t{0.0, 0.0};
};

inline SpherePoint sphere_point(cplx lambda) {
    if (std::abs(lambda) <= 1.0) return {true, lambda};
    return {false, cplx(1.0, 0.0) / lambda};
}

inline SpherePoint antipode(const SpherePoint& s) { return {!s.plus, -std::conj(s.t)}; }

// Pointwise complex structure induced on the curve family by one sphere
// point: evaluate family directions on the normal space there and pull back
// scalar multiplication.  The result acts on the 4n chart coordinates.
inline MatrixXd complex_structure_at(const TangentFrame& F, const SpherePoint& s,
                                     double cond_max = 1e8) {
    const LineAnsatz& L = F.line;
    const int n = L.n;
    const int mdim = 4 * n;
    const LineAnsatz rep = s.plus ? L : L.conjugate_rep();

    VectorXcd speed(2 * n + 1);
    {
        std::vector<cplx> db = rep.base_deriv(s.t);
        VectorXcd dc = rep.cov_deriv(s.t);
        for (int i = 0; i < n; ++i) speed[i] = db[static_cast<std::size_t>(i)];
        speed.tail(n + 1) = dc;
    }
    // orthonormal complement of the curve's own direction
    Eigen::HouseholderQR<MatrixXcd> qr{MatrixXcd(speed)};
    MatrixXcd U = (qr.householderQ() * MatrixXcd::Identity(2 * n + 1, 2 * n + 1)).rightCols(2 * n);

    MatrixXd N(mdim, mdim);
    for (int j = 0; j < mdim; ++j) {
        LineAnsatz d = LineAnsatz::unpack(F.kernel.col(j), n, L.d_base, L.d_fib);
        const LineAnsatz dr = s.plus ? d : d.conjugate_rep();
        VectorXcd w(2 * n + 1);
        std::vector<cplx> wb = dr.base_at(s.t);
        for (int i = 0; i < n; ++i) w[i] = wb[static_cast<std::size_t>(i)];
        w.tail(n + 1) = dr.cov_at(s.t);
        VectorXcd pw = U.adjoint() * w;
        for (int i = 0; i < 2 * n; ++i) {
            N(2 * i, j) = pw[i].real();
            N(2 * i + 1, j) = pw[i].imag();
        }
    }
    {
        Eigen::JacobiSVD<MatrixXd> sv(N);
        const VectorXd s_N = sv.singularValues();
        if (s_N[mdim - 1] <= 0.0 || s_N[0] / s_N[mdim - 1] > cond_max)
            throw RankError("normal evaluation map is numerically singular at this sphere point");
    }
    MatrixXd Jm = MatrixXd::Zero(mdim, mdim);
    for (int i = 0; i < 2 * n; ++i) {
        Jm(2 * i, 2 * i + 1) = 1.0;
        Jm(2 * i + 1, 2 * i) = -1.0;
    }
    MatrixXd I_kern = N.partialPivLu().solve(Jm * N);

    MatrixXd Pm = F.kernel.topRows(mdim);
    {
        Eigen::JacobiSVD<MatrixXd> sv(Pm);
        const VectorXd s_P = sv.singularValues();
        if (s_P[mdim - 1] <= 0.0 || s_P[0] / s_P[mdim - 1] > cond_max)
            throw RankError("chart projection of the curve family is degenerate");
    }
    MatrixXd out = Pm * I_kern * Pm.inverse();
    return out;
}

struct QuaternionTriple {
    MatrixXd I, J, K;
    double relation_residual = 0.0;
};

inline QuaternionTriple quaternion_frame(const TangentFrame& F, double tol = 1e-6,
                                         double cond_max = 1e8) {
    QuaternionTriple T;
    T.I = complex_structure_at(F, SpherePoint{true, cplx(0.0, 0.0)}, cond_max);
    T.J = complex_structure_at(F, SpherePoint{true, cplx(1.0, 0.0)}, cond_max);
    T.K = T.I * T.J;
    const int d = static_cast<int>(T.I.rows());
    const MatrixXd id = MatrixXd::Identity(d, d);
    double r = 0.0;
    r = std::max(r, (T.I * T.I + id).cwiseAbs().maxCoeff());
    r = std::max(r, (T.J * T.J + id).cwiseAbs().maxCoeff());
    r = std::max(r, (T.K * T.K + id).cwiseAbs().maxCoeff());
    r = std::max(r, (T.I * T.J + T.J * T.I).cwiseAbs().maxCoeff());
    r = std::max(r, (T.I * T.J * T.K + id).cwiseAbs().maxCoeff());
    T.relation_residual = r;
    if (r > tol)
        throw RelationError("quaternion relations fail at residual " + std::to_string(r));
    return T;
}

// least-squares coefficient of M against span{I, J, K}, returns the relative
// off-span residual
inline double span_residual(const QuaternionTriple& T, const MatrixXd& M) {
    const int d = static_cast<int>(M.rows());
    MatrixXd B(d * d, 3);
    B.col(0) = Eigen::Map<const VectorXd>(T.I.data(), d * d);
    B.col(1) = Eigen::Map<const VectorXd>(T.J.data(), d * d);
    B.col(2) = Eigen::Map<const VectorXd>(T.K.data(), d * d);
    VectorXd m = Eigen::Map<const VectorXd>(M.data(), d * d);
    VectorXd c = B.colPivHouseholderQr().solve(m);
    return (B * c - m).norm() / m.norm();
}

// Parameter where the curve meets the divisor picked out by a compatible
// connection: the pairing of the covector with the distinguished section's
// jet vanishes there.  Newton in the plus chart first, conjugate chart as
// fallback.
inline SpherePoint divisor_parameter(const TwistorAtlas& atlas, const CProjectiveData& D_data,
                                     const LineAnsatz& line, double tol = 1e-10,
                                     int max_iter = 40) {
    LineAnsatz q = line.conjugate_rep();
    auto eval = [&](bool plus, const LineAnsatz& rep, cplx t) -> cplx {
        DHyperplane H = atlas.d_hyperplane(plus, rep.base_at(t), D_data);
        return fiber_pairing(rep.cov_at(t), H.fiber_coeff);
    };
    auto newton = [&](bool plus, const LineAnsatz& rep, cplx t0) -> std::optional<cplx> {
        cplx t = t0;
        const double h = 1e-6;
        for (int it = 0; it < max_iter; ++it) {
            cplx f, df;
            try {
                f = eval(plus, rep, t);
                if (std::abs(f) < tol) return t;
                df = (eval(plus, rep, t + h) - eval(plus, rep, t - h)) / (2.0 * h);
            } catch (const Error&) {
                return std::nullopt;
            }
            if (std::abs(df) < 1e-14) return std::nullopt;
            cplx tn = t - f / df;
            if (std::abs(tn) > 1.3) return std::nullopt;
            t = tn;
        }
        return std::nullopt;
    };
    static const cplx seeds[] = {cplx(0.0, 0.0),  cplx(0.35, 0.0), cplx(-0.35, 0.0),
                                 cplx(0.0, 0.35), cplx(0.0, -0.35), cplx(0.6, 0.6),
                                 cplx(-0.6, 0.6), cplx(0.6, -0.6),  cplx(-0.6, -0.6)};
    std::optional<cplx> spill_plus, spill_minus;
    for (cplx s : seeds)
        if (auto r = newton(true, line, s)) {
            if (std::abs(*r) <= 1.0 + 1e-9) return {true, *r};
            if (!spill_plus) spill_plus = r;
        }
    for (cplx s : seeds)
        if (auto r = newton(false, q, s)) {
            if (std::abs(*r) <= 1.0 + 1e-9) return {false, *r};
            if (!spill_minus) spill_minus = r;
        }
    if (spill_plus) return {true, *spill_plus};
    if (spill_minus) return {false, *spill_minus};
    throw IntersectionError("curve does not meet the divisor inside either chart disk");
}

struct JDOptions {
    LineSolveOptions solve;
    double gap_min = 1e4;
    double cond_max = 1e8;
    double frame_fd = 1e-3;
    double root_tol = 1e-10;
};

struct JDSample {
    VectorXd target;
    RealTwistorLine line;
    SpherePoint root;
    MatrixXd J;
    double gap = 0.0;
};

inline JDSample jd_at(const TwistorAtlas& atlas, const CProjectiveData& D_data,
                      const VectorXd& target, const JDOptions& o = {},
                      const LineAnsatz* warm = nullptr, const VectorXcd* pin_ref = nullptr) {
    RealTwistorLine L =
        warm ? solve_line(atlas, *warm, &target, o.solve) : solve_at(atlas, target, o.solve);
    TangentFrame F =
        tangent_frame(atlas, L.line, pin_ref, o.gap_min, o.solve.collocation, o.frame_fd);
    JDSample s;
    s.root = divisor_parameter(atlas, D_data, L.line, o.root_tol);
    s.J = complex_structure_at(F, s.root, o.cond_max);
    s.gap = F.gap;
    s.target = target;
    s.line = std::move(L);
    return s;
}

struct JDField {
    std::vector<JDSample> samples;
};

inline JDField jd_field(const TwistorAtlas& atlas, const CProjectiveData& D_data,
                        const std::vector<VectorXd>& targets, const JDOptions& o = {}) {
    Type11Result td = is_type_11(D_data, atlas.inst.domain_radius, atlas.inst.grid);
    if (!td.ok)
        throw Type11Violation("field connection has pure-type curvature, residual " +
                              std::to_string(td.residual));
    JDField f;
    f.samples.reserve(targets.size());
    for (const auto& t : targets) f.samples.push_back(jd_at(atlas, D_data, t, o));
    return f;
}

// differential of the circle action on the chart coordinates: the constant
// coefficient is fixed, the linear one rotates
inline MatrixXd s1_dphi(int n, double t) {
    MatrixXd M = MatrixXd::Identity(4 * n, 4 * n);
    const double c = std::cos(t), s = std::sin(t);
    for (int i = 0; i < n; ++i) {
        const int off = 2 * n + 2 * i;
        M(off, off) = c;
        M(off, off + 1) = s;
        M(off + 1, off) = -s;
        M(off + 1, off + 1) = c;
    }
    return M;
}

// Compare the divisor structure at a rotated point with the pushforward of
// the structure at the original point.  The rotated curve seeds the second
// solve, so both sit in the same pin gauge.
inline double s1_invariance_check(const TwistorAtlas& atlas, const CProjectiveData& D_data,
                                  const VectorXd& target, double angle, const JDOptions& o = {}) {
    JDSample s0 = jd_at(atlas, D_data, target, o);
    const MatrixXd dphi = s1_dphi(atlas.inst.n, angle);
    const VectorXd target_rot = dphi * target;
    LineAnsatz warm = s0.line.line.rotated(angle);
    JDSample s1 = jd_at(atlas, D_data, target_rot, o, &warm);
    // rotation blocks, so the inverse differential is the transpose
    return (dphi * s0.J * dphi.transpose() - s1.J).cwiseAbs().maxCoeff();
}

// Integrability probe for the divisor structure as a field over the chart
// coordinates.  All stencil solves share the center curve's pin gauge;
// unsolvable stencil points surface as grid errors.
inline double jd_nijenhuis(const TwistorAtlas& atlas, const CProjectiveData& D_data,
                           const VectorXd& x0, double h, const JDOptions& o = {}) {
    RealTwistorLine center;
    try {
        center = solve_at(atlas, x0, o.solve);
    } catch (const NotDecomposable& e) {
        throw GridError(std::string("stencil center is not solvable: ") + e.what());
    } catch (const NewtonDivergence& e) {
        throw GridError(std::string("stencil center is not solvable: ") + e.what());
    }
    const VectorXcd pin_ref = center.line.b[1];
    auto field = [&](const VectorXd& u) -> MatrixXd {
        try {
            return jd_at(atlas, D_data, u, o, &center.line, &pin_ref).J;
        } catch (const NotDecomposable& e) {
            throw GridError(std::string("stencil point left the solvable domain: ") + e.what());
        } catch (const NewtonDivergence& e) {
            throw GridError(std::string("stencil point left the solvable domain: ") + e.what());
        } catch (const PoleError& e) {
            throw GridError(std::string("stencil point hit a coefficient pole: ") + e.what());
        }
    };
    return nijenhuis(field, x0, h);
}

struct EscalationReport {
    double res_base = 0.0;
    double res_up = 0.0;
    bool adequate = true;
};

// Re-solve with one more degree in both coefficient blocks.  A large drop in
// the reachable residual would mean the configured degrees truncate the true
// curve; matching floors mean they do not.  The base solution is polished to
// its own floor first, otherwise a solve that merely stopped at its tolerance
// mimics truncation.
inline EscalationReport degree_escalation_check(const TwistorAtlas& atlas, const VectorXd& target,
                                                const LineSolveOptions& opts = {}) {
    RealTwistorLine base = solve_at(atlas, target, opts);
    LineSolveOptions fine = opts;
    fine.tol = 1e-14;
    fine.max_iter = 4;
    fine.best_effort = true;
    base = solve_line(atlas, base.line, &target, fine);
    LineAnsatz up = LineAnsatz::zero(base.line.n, base.line.d_base + 1, base.line.d_fib + 1);
    for (std::size_t d = 0; d < base.line.a.size(); ++d) up.a[d] = base.line.a[d];
    for (std::size_t d = 0; d < base.line.b.size(); ++d) up.b[d] = base.line.b[d];
    LineSolveOptions o2 = fine;
    o2.tol = std::max(base.matching_res / 20.0, 1e-14);
    o2.max_iter = 8;
    RealTwistorLine upper = solve_line(atlas, up, &target, o2);
    EscalationReport r;
    r.res_base = base.matching_res;
    r.res_up = upper.matching_res;
    r.adequate = !(r.res_up < r.res_base / 10.0 && r.res_base > 1e-12);
    return r;
}

}  // namespace qfk
