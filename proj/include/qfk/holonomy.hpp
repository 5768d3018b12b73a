#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "qfk/instance.hpp"

namespace qfk {

// Charts of real dimension 4n with rational-function field data.  Entries
// reuse the shared literal symbols: coordinate u_k binds the z half for
// k < 2n and the conjugate half for k >= 2n, every symbol evaluated at an
// independent real value.

using RatMatrix = std::vector<std::vector<RationalField>>;
using RatForm = std::vector<RationalField>;

namespace detail {

inline void split_point(const VectorXd& u, std::vector<cplx>& z, std::vector<cplx>& zb) {
    const int m = static_cast<int>(u.size()) / 2;
    z.resize(static_cast<std::size_t>(m));
    zb.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        z[static_cast<std::size_t>(i)] = cplx(u[i], 0.0);
        zb[static_cast<std::size_t>(i)] = cplx(u[m + i], 0.0);
    }
}

}  // namespace detail

inline RatMatrix rat_matrix_zero(int pairs, int dim) {
    return RatMatrix(static_cast<std::size_t>(dim),
                     std::vector<RationalField>(static_cast<std::size_t>(dim),
                                                RationalField::constant(pairs, 0.0)));
}

inline RatMatrix rat_matrix_constant(int pairs, const MatrixXd& M) {
    RatMatrix R = rat_matrix_zero(pairs, static_cast<int>(M.rows()));
    for (int a = 0; a < M.rows(); ++a)
        for (int c = 0; c < M.cols(); ++c)
            if (M(a, c) != 0.0)
                R[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)] =
                    RationalField::constant(pairs, M(a, c));
    return R;
}

inline MatrixXd rat_matrix_at(const RatMatrix& M, const VectorXd& u) {
    std::vector<cplx> z, zb;
    detail::split_point(u, z, zb);
    const int d = static_cast<int>(M.size());
    MatrixXd out(d, d);
    for (int a = 0; a < d; ++a)
        for (int c = 0; c < d; ++c)
            out(a, c) = M[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)].eval(z, zb).real();
    return out;
}

inline RatMatrix rat_matrix_partial(const RatMatrix& M, int var) {
    RatMatrix out = M;
    for (auto& row : out)
        for (auto& e : row) e = e.partial(var);
    return out;
}

inline RatMatrix rat_matrix_mul(const RatMatrix& A, const RatMatrix& B) {
    const std::size_t d = A.size();
    const int pairs = A[0][0].num_vars();
    RatMatrix out = rat_matrix_zero(pairs, static_cast<int>(d));
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t c = 0; c < d; ++c) {
            RationalField acc = RationalField::constant(pairs, 0.0);
            for (std::size_t e = 0; e < d; ++e) acc = acc + A[a][e] * B[e][c];
            out[a][c] = acc;
        }
    return out;
}

inline RatMatrix rat_matrix_add(const RatMatrix& A, const RatMatrix& B, cplx sign = cplx(1.0, 0.0)) {
    RatMatrix out = A;
    for (std::size_t a = 0; a < A.size(); ++a)
        for (std::size_t c = 0; c < A.size(); ++c) out[a][c] = A[a][c] + sign * B[a][c];
    return out;
}

// Polynomial frame of the quaternionic bundle plus a torsion-free compatible
// connection, both explicit.  christoffels[b][a][c] holds the coefficient of
// e_a in the b-derivative of e_c.
struct QuaternionicChart {
    int n = 2;
    std::array<RatMatrix, 3> frame;
    std::vector<RatMatrix> christoffels;
    int dim() const { return 4 * n; }
    int pairs() const { return 2 * n; }
};

inline std::array<MatrixXd, 3> standard_triple(int n) {
    const int d = 4 * n;
    std::array<MatrixXd, 3> I{MatrixXd::Zero(d, d), MatrixXd::Zero(d, d), MatrixXd::Zero(d, d)};
    Eigen::Matrix4d B1, B2, B3;
    B1 << 0, -1, 0, 0, 1, 0, 0, 0, 0, 0, 0, -1, 0, 0, 1, 0;
    B2 << 0, 0, -1, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, -1, 0, 0;
    B3 << 0, 0, 0, -1, 0, 0, -1, 0, 0, 1, 0, 0, 1, 0, 0, 0;
    for (int k = 0; k < n; ++k) {
        I[0].block<4, 4>(4 * k, 4 * k) = B1;
        I[1].block<4, 4>(4 * k, 4 * k) = B2;
        I[2].block<4, 4>(4 * k, 4 * k) = B3;
    }
    return I;
}

inline QuaternionicChart flat_chart(int n) {
    QuaternionicChart c;
    c.n = n;
    auto I = standard_triple(n);
    for (int i = 0; i < 3; ++i) c.frame[static_cast<std::size_t>(i)] = rat_matrix_constant(2 * n, I[static_cast<std::size_t>(i)]);
    c.christoffels.assign(static_cast<std::size_t>(4 * n), rat_matrix_zero(2 * n, 4 * n));
    return c;
}

inline std::array<MatrixXd, 3> frame_values(const QuaternionicChart& c, const VectorXd& u) {
    return {rat_matrix_at(c.frame[0], u), rat_matrix_at(c.frame[1], u), rat_matrix_at(c.frame[2], u)};
}

// Shift endomorphism of the quaternionic connection change in direction e_b
// for covector values g at frozen frame values.
inline MatrixXd q_bracket_endo(const std::array<MatrixXd, 3>& I, const VectorXd& g, int b) {
    const int d = static_cast<int>(g.size());
    MatrixXd Xi = g[b] * MatrixXd::Identity(d, d);
    Xi.row(b) += g.transpose();
    for (const auto& Ii : I) {
        const VectorXd col = Ii.col(b);
        Xi -= g.dot(col) * Ii;
        Xi -= col * (Ii.transpose() * g).transpose();
    }
    return 0.5 * Xi;
}

// Same shift with symbolic covector entries, folded into the christoffel
// array.  The increment is computed once per unordered index pair and
// mirrored, so the result is symmetric entry for entry.
inline QuaternionicChart shift_connection(const QuaternionicChart& c, const RatForm& gamma) {
    const int d = c.dim();
    const int pairs = c.pairs();
    QuaternionicChart out = c;
    std::array<std::vector<RationalField>, 3> pulled;
    for (int i = 0; i < 3; ++i) {
        pulled[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(d),
                                                   RationalField::constant(pairs, 0.0));
        for (int b = 0; b < d; ++b) {
            RationalField acc = RationalField::constant(pairs, 0.0);
            for (int e = 0; e < d; ++e)
                acc = acc + gamma[static_cast<std::size_t>(e)] *
                                c.frame[static_cast<std::size_t>(i)][static_cast<std::size_t>(e)][static_cast<std::size_t>(b)];
            pulled[static_cast<std::size_t>(i)][static_cast<std::size_t>(b)] = acc;
        }
    }
    const cplx half(0.5, 0.0);
    for (int b = 0; b < d; ++b)
        for (int cc = b; cc < d; ++cc)
            for (int a = 0; a < d; ++a) {
                RationalField xi = RationalField::constant(pairs, 0.0);
                if (a == cc) xi = xi + gamma[static_cast<std::size_t>(b)];
                if (a == b) xi = xi + gamma[static_cast<std::size_t>(cc)];
                for (int i = 0; i < 3; ++i) {
                    const auto& Ii = c.frame[static_cast<std::size_t>(i)];
                    xi = xi - pulled[static_cast<std::size_t>(i)][static_cast<std::size_t>(b)] *
                                  Ii[static_cast<std::size_t>(a)][static_cast<std::size_t>(cc)];
                    xi = xi - pulled[static_cast<std::size_t>(i)][static_cast<std::size_t>(cc)] *
                                  Ii[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
                }
                xi = xi * half;
                out.christoffels[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)][static_cast<std::size_t>(cc)] =
                    out.christoffels[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)][static_cast<std::size_t>(cc)] + xi;
                if (cc != b)
                    out.christoffels[static_cast<std::size_t>(cc)][static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] =
                        out.christoffels[static_cast<std::size_t>(cc)][static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] + xi;
            }
    return out;
}

// Frame conjugated by the jacobian of a unipotent shear and the matching
// pulled-back connection.  Everything stays polynomial, the curvature
// vanishes identically, and all three frame fields are parallel.
inline QuaternionicChart conjugated_chart(int n) {
    const int d = 4 * n;
    const int pairs = 2 * n;
    RatMatrix N = rat_matrix_zero(pairs, d);
    const cplx q(0.25, 0.0);
    for (int a = 0; a + 5 < d; ++a) {
        N[static_cast<std::size_t>(a)][static_cast<std::size_t>(a + 2)] =
            RationalField::variable(pairs, a + 5) * q;
        N[static_cast<std::size_t>(a)][static_cast<std::size_t>(a + 5)] =
            RationalField::variable(pairs, a + 2) * q;
    }
    RatMatrix id = rat_matrix_constant(pairs, MatrixXd::Identity(d, d));
    RatMatrix N2 = rat_matrix_mul(N, N);
    RatMatrix N3 = rat_matrix_mul(N2, N);
    RatMatrix P = rat_matrix_add(id, N);
    RatMatrix Pinv = rat_matrix_add(rat_matrix_add(id, N, cplx(-1.0, 0.0)), N2);
    Pinv = rat_matrix_add(Pinv, N3, cplx(-1.0, 0.0));

    QuaternionicChart c;
    c.n = n;
    auto I = standard_triple(n);
    for (int i = 0; i < 3; ++i)
        c.frame[static_cast<std::size_t>(i)] =
            rat_matrix_mul(rat_matrix_mul(Pinv, rat_matrix_constant(pairs, I[static_cast<std::size_t>(i)])), P);
    c.christoffels.resize(static_cast<std::size_t>(d));
    for (int b = 0; b < d; ++b)
        c.christoffels[static_cast<std::size_t>(b)] = rat_matrix_mul(Pinv, rat_matrix_partial(P, b));
    return c;
}

// Frame rotated about its first member by an angle depending on one
// coordinate, connection left at zero.  A valid chart whose second frame
// member, taken with constant coefficients, is not integrable as a field.
inline QuaternionicChart twisted_chart(int n) {
    const int pairs = 2 * n;
    RationalField t = RationalField::variable(pairs, 1) * cplx(0.5, 0.0);
    RationalField one = RationalField::constant(pairs, 1.0);
    RationalField den = one + t * t;
    RationalField cth = (one - t * t) / den;
    RationalField sth = (t + t) / den;

    QuaternionicChart c;
    c.n = n;
    auto I = standard_triple(n);
    RatMatrix I2 = rat_matrix_constant(pairs, I[1]);
    RatMatrix I3 = rat_matrix_constant(pairs, I[2]);
    c.frame[0] = rat_matrix_constant(pairs, I[0]);
    c.frame[1] = rat_matrix_zero(pairs, 4 * n);
    c.frame[2] = rat_matrix_zero(pairs, 4 * n);
    for (std::size_t a = 0; a < c.frame[1].size(); ++a)
        for (std::size_t b = 0; b < c.frame[1].size(); ++b) {
            c.frame[1][a][b] = cth * I2[a][b] + sth * I3[a][b];
            c.frame[2][a][b] = cth * I3[a][b] - sth * I2[a][b];
        }
    c.christoffels.assign(static_cast<std::size_t>(4 * n), rat_matrix_zero(pairs, 4 * n));
    return c;
}

// Deterministic polynomial covector field, linear plus one quadratic term per
// component.  Dyadic coefficients keep the shifted christoffels exact.
inline RatForm random_shift_form(int pairs, unsigned seed) {
    std::mt19937 eng(seed);
    std::uniform_int_distribution<int> pick(-8, 8);
    const int d = 2 * pairs;
    RatForm g;
    g.reserve(static_cast<std::size_t>(d));
    for (int a = 0; a < d; ++a) {
        PolyField p(pairs);
        for (int v = 0; v < d; ++v) {
            const double cv = pick(eng) / 16.0;
            if (cv != 0.0) p = p + PolyField::variable(pairs, v) * cplx(cv, 0.0);
        }
        const int v1 = (a * 3) % d, v2 = (a * 5 + 1) % d;
        p = p + PolyField::variable(pairs, v1) * PolyField::variable(pairs, v2) *
                    cplx(pick(eng) / 32.0, 0.0);
        g.push_back(RationalField(p));
    }
    return g;
}

inline std::vector<VectorXd> chart_samples(int dim, int count, double radius, unsigned seed) {
    std::mt19937 eng(seed);
    std::uniform_real_distribution<double> dist(-radius, radius);
    std::vector<VectorXd> pts;
    pts.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        VectorXd u(dim);
        for (int i = 0; i < dim; ++i) u[i] = dist(eng);
        pts.push_back(u);
    }
    return pts;
}

struct ChartDiagnostics {
    double relation_residual = 0.0;
    bool torsion_symmetric = true;
    double preserve_residual = 0.0;
    bool pass(double relation_tol = 1e-10, double preserve_tol = 1e-8) const {
        return torsion_symmetric && relation_residual < relation_tol && preserve_residual < preserve_tol;
    }
};

// Quaternion relations, exact connection symmetry, and containment of the
// frame derivatives in the frame span, all over the supplied points.
inline ChartDiagnostics validate_chart(const QuaternionicChart& c, const std::vector<VectorXd>& pts) {
    const int d = c.dim();
    ChartDiagnostics diag;

    for (int b = 0; b < d && diag.torsion_symmetric; ++b)
        for (int cc = b + 1; cc < d && diag.torsion_symmetric; ++cc)
            for (int a = 0; a < d; ++a)
                if (!(c.christoffels[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)][static_cast<std::size_t>(cc)] ==
                      c.christoffels[static_cast<std::size_t>(cc)][static_cast<std::size_t>(a)][static_cast<std::size_t>(b)])) {
                    diag.torsion_symmetric = false;
                    break;
                }

    std::array<std::vector<RatMatrix>, 3> dI;
    for (int i = 0; i < 3; ++i) {
        dI[static_cast<std::size_t>(i)].reserve(static_cast<std::size_t>(d));
        for (int b = 0; b < d; ++b)
            dI[static_cast<std::size_t>(i)].push_back(rat_matrix_partial(c.frame[static_cast<std::size_t>(i)], b));
    }

    const MatrixXd id = MatrixXd::Identity(d, d);
    for (const auto& u : pts) {
        auto I = frame_values(c, u);
        double r = std::max({(I[0] * I[0] + id).cwiseAbs().maxCoeff(),
                             (I[1] * I[1] + id).cwiseAbs().maxCoeff(),
                             (I[2] * I[2] + id).cwiseAbs().maxCoeff(),
                             (I[0] * I[1] * I[2] + id).cwiseAbs().maxCoeff()});
        diag.relation_residual = std::max(diag.relation_residual, r);

        MatrixXd span(d * d, 3);
        for (int i = 0; i < 3; ++i)
            span.col(i) = Eigen::Map<const VectorXd>(I[static_cast<std::size_t>(i)].data(), d * d);
        Eigen::ColPivHouseholderQR<MatrixXd> qr(span);
        for (int b = 0; b < d; ++b) {
            const MatrixXd G = rat_matrix_at(c.christoffels[static_cast<std::size_t>(b)], u);
            for (int i = 0; i < 3; ++i) {
                MatrixXd D = rat_matrix_at(dI[static_cast<std::size_t>(i)][static_cast<std::size_t>(b)], u) +
                             G * I[static_cast<std::size_t>(i)] - I[static_cast<std::size_t>(i)] * G;
                VectorXd v = Eigen::Map<const VectorXd>(D.data(), d * d);
                VectorXd resid = v - span * qr.solve(v);
                diag.preserve_residual = std::max(diag.preserve_residual, resid.cwiseAbs().maxCoeff());
            }
        }
    }
    return diag;
}

struct GammaSolution {
    VectorXd gamma;
    double residual = 0.0;
    double cond = 0.0;
};

// Pointwise linear solve for the covector whose shift makes the connection
// preserve the given section.  The system stacks every derivative of the
// section against the bracket action; a collapsed spectrum means the shift
// family cannot reach the section and is reported as singular.
inline GammaSolution solve_unique_gamma(const QuaternionicChart& c, const RatMatrix& I_sec,
                                        const VectorXd& u, double cond_max = 1e8) {
    const int d = c.dim();
    auto I = frame_values(c, u);
    const MatrixXd S = rat_matrix_at(I_sec, u);

    MatrixXd A(d * d * d, d);
    VectorXd rhs(d * d * d);
    for (int b = 0; b < d; ++b) {
        const MatrixXd G = rat_matrix_at(c.christoffels[static_cast<std::size_t>(b)], u);
        MatrixXd Db = rat_matrix_at(rat_matrix_partial(I_sec, b), u) + G * S - S * G;
        rhs.segment(b * d * d, d * d) = -Eigen::Map<const VectorXd>(Db.data(), d * d);
        for (int j = 0; j < d; ++j) {
            const MatrixXd Xi = q_bracket_endo(I, VectorXd::Unit(d, j), b);
            const MatrixXd C = Xi * S - S * Xi;
            A.block(b * d * d, j, d * d, 1) = Eigen::Map<const VectorXd>(C.data(), d * d);
        }
    }

    Eigen::BDCSVD<MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VectorXd s = svd.singularValues();
    const double cond = s[0] / std::max(s[d - 1], 1e-300);
    if (!(cond < cond_max))
        throw SingularSystem("gamma system condition " + detail::sci(cond) + " exceeds " +
                             detail::sci(cond_max));
    GammaSolution g;
    g.gamma = svd.solve(rhs);
    g.residual = (A * g.gamma - rhs).cwiseAbs().maxCoeff();
    g.cond = cond;
    return g;
}

// Orthonormal basis of the endomorphisms commuting with all three frame
// values, dimension 4n^2.  A blurred spectral split means the triple is
// degenerate at the point.
inline MatrixXd commutant_basis(const std::array<MatrixXd, 3>& I) {
    const int d = static_cast<int>(I[0].rows());
    const int e = d * d;
    MatrixXd M(2 * e, e);
    MatrixXd E = MatrixXd::Zero(d, d);
    for (int col = 0; col < e; ++col) {
        E(col % d, col / d) = 1.0;
        MatrixXd C1 = E * I[0] - I[0] * E;
        MatrixXd C2 = E * I[1] - I[1] * E;
        M.block(0, col, e, 1) = Eigen::Map<const VectorXd>(C1.data(), e);
        M.block(e, col, e, 1) = Eigen::Map<const VectorXd>(C2.data(), e);
        E(col % d, col / d) = 0.0;
    }
    Eigen::BDCSVD<MatrixXd> svd(M, Eigen::ComputeFullV);
    const int k = d * d / 4;
    const VectorXd s = svd.singularValues();
    if (s[e - k - 1] < 1e-6 * s[0] || s[e - k] > 1e-8 * s[0])
        throw FrameError("commutant dimension is not " + std::to_string(k));
    return svd.matrixV().rightCols(k);
}

namespace detail {

// christoffel partials prepared once, evaluated per point
struct ChristoffelJet {
    const QuaternionicChart* chart;
    std::vector<std::vector<RatMatrix>> dG;

    explicit ChristoffelJet(const QuaternionicChart& c) : chart(&c) {
        const int d = c.dim();
        dG.resize(static_cast<std::size_t>(d));
        for (int b = 0; b < d; ++b) {
            dG[static_cast<std::size_t>(b)].reserve(static_cast<std::size_t>(d));
            for (int v = 0; v < d; ++v)
                dG[static_cast<std::size_t>(b)].push_back(
                    rat_matrix_partial(c.christoffels[static_cast<std::size_t>(b)], v));
        }
    }

    // R(e_b, e_c) at u
    std::vector<std::vector<MatrixXd>> curvature(const VectorXd& u) const {
        const int d = chart->dim();
        std::vector<MatrixXd> G(static_cast<std::size_t>(d));
        for (int b = 0; b < d; ++b) G[static_cast<std::size_t>(b)] = rat_matrix_at(chart->christoffels[static_cast<std::size_t>(b)], u);
        std::vector<std::vector<MatrixXd>> R(static_cast<std::size_t>(d),
                                             std::vector<MatrixXd>(static_cast<std::size_t>(d), MatrixXd::Zero(d, d)));
        for (int b = 0; b < d; ++b)
            for (int cc = b + 1; cc < d; ++cc) {
                MatrixXd Rbc = rat_matrix_at(dG[static_cast<std::size_t>(cc)][static_cast<std::size_t>(b)], u) -
                               rat_matrix_at(dG[static_cast<std::size_t>(b)][static_cast<std::size_t>(cc)], u) +
                               G[static_cast<std::size_t>(b)] * G[static_cast<std::size_t>(cc)] -
                               G[static_cast<std::size_t>(cc)] * G[static_cast<std::size_t>(b)];
                R[static_cast<std::size_t>(b)][static_cast<std::size_t>(cc)] = Rbc;
                R[static_cast<std::size_t>(cc)][static_cast<std::size_t>(b)] = -Rbc;
            }
        return R;
    }
};

}  // namespace detail

inline std::vector<std::vector<MatrixXd>> curvature_at(const QuaternionicChart& c, const VectorXd& u) {
    return detail::ChristoffelJet(c).curvature(u);
}

struct HolonomySample {
    VectorXd point;
    double preserve_residual = 0.0;
    double membership = 0.0;
    double span_residual = 0.0;
    double sl_trace = 0.0;
};

struct HolonomyReport {
    std::vector<HolonomySample> samples;
    double max_preserve_residual = 0.0;
    double max_membership = 0.0;
    double max_span_residual = 0.0;
    double max_sl_trace = 0.0;
};

// Split each curvature endomorphism into a commutant part plus the frame
// span, and measure how much of the frame-span part escapes the direction of
// the preserved structure.  The split itself is a least-squares projection;
// its defect is reported separately from the membership number.
inline HolonomyReport classify_curvature(const QuaternionicChart& c, const RatMatrix& I_pres,
                                         const std::vector<VectorXd>& pts) {
    const int d = c.dim();
    const int e = d * d;
    detail::ChristoffelJet jet(c);
    std::vector<RatMatrix> dP;
    dP.reserve(static_cast<std::size_t>(d));
    for (int b = 0; b < d; ++b) dP.push_back(rat_matrix_partial(I_pres, b));

    HolonomyReport rep;
    for (const auto& u : pts) {
        HolonomySample smp;
        smp.point = u;
        auto I = frame_values(c, u);
        const MatrixXd P = rat_matrix_at(I_pres, u);
        const double pnorm2 = P.squaredNorm();

        for (int b = 0; b < d; ++b) {
            const MatrixXd G = rat_matrix_at(c.christoffels[static_cast<std::size_t>(b)], u);
            MatrixXd D = rat_matrix_at(dP[static_cast<std::size_t>(b)], u) + G * P - P * G;
            smp.preserve_residual = std::max(smp.preserve_residual, D.cwiseAbs().maxCoeff());
        }

        const MatrixXd comm = commutant_basis(I);
        MatrixXd basis(e, comm.cols() + 3);
        basis.leftCols(comm.cols()) = comm;
        for (int i = 0; i < 3; ++i)
            basis.col(comm.cols() + i) = Eigen::Map<const VectorXd>(I[static_cast<std::size_t>(i)].data(), e);
        Eigen::ColPivHouseholderQR<MatrixXd> qr(basis);

        auto R = jet.curvature(u);
        for (int b = 0; b < d; ++b)
            for (int cc = b + 1; cc < d; ++cc) {
                const MatrixXd& Rbc = R[static_cast<std::size_t>(b)][static_cast<std::size_t>(cc)];
                VectorXd v = Eigen::Map<const VectorXd>(Rbc.data(), e);
                VectorXd coef = qr.solve(v);
                MatrixXd Q = coef[comm.cols()] * I[0] + coef[comm.cols() + 1] * I[1] +
                             coef[comm.cols() + 2] * I[2];
                VectorXd rem = v - basis * coef;
                MatrixXd orth = Q - ((Q.cwiseProduct(P)).sum() / pnorm2) * P;

                double trB = 0.0;
                for (int k = 0; k < comm.cols(); ++k) {
                    Eigen::Map<const MatrixXd> Bk(comm.col(k).data(), d, d);
                    trB += coef[k] * Bk.trace();
                }
                smp.membership = std::max(smp.membership, orth.norm());
                smp.span_residual = std::max(smp.span_residual, rem.norm());
                smp.sl_trace = std::max(smp.sl_trace, std::abs(trB));
            }
        rep.max_preserve_residual = std::max(rep.max_preserve_residual, smp.preserve_residual);
        rep.max_membership = std::max(rep.max_membership, smp.membership);
        rep.max_span_residual = std::max(rep.max_span_residual, smp.span_residual);
        rep.max_sl_trace = std::max(rep.max_sl_trace, smp.sl_trace);
        rep.samples.push_back(std::move(smp));
    }
    return rep;
}

// Parallel transport of the identity frame around a closed polyline.  The
// loop is closed automatically when the endpoints differ.
inline MatrixXd loop_holonomy(const QuaternionicChart& c, std::vector<VectorXd> loop, int resolution) {
    if (resolution < 1) throw StepError("loop transport needs a positive resolution");
    if (loop.size() < 2) throw StepError("loop transport needs at least two waypoints");
    if ((loop.front() - loop.back()).cwiseAbs().maxCoeff() > 0.0) loop.push_back(loop.front());

    const int d = c.dim();
    MatrixXd F = MatrixXd::Identity(d, d);
    for (std::size_t seg = 0; seg + 1 < loop.size(); ++seg) {
        const VectorXd& p = loop[seg];
        const VectorXd v = loop[seg + 1] - p;
        auto slope = [&](double s, const MatrixXd& Y) -> MatrixXd {
            const VectorXd x = p + s * v;
            MatrixXd Gv = MatrixXd::Zero(d, d);
            for (int b = 0; b < d; ++b)
                if (v[b] != 0.0) Gv += v[b] * rat_matrix_at(c.christoffels[static_cast<std::size_t>(b)], x);
            return -Gv * Y;
        };
        const double h = 1.0 / resolution;
        for (int k = 0; k < resolution; ++k) {
            const double s = k * h;
            MatrixXd k1 = slope(s, F);
            MatrixXd k2 = slope(s + 0.5 * h, F + 0.5 * h * k1);
            MatrixXd k3 = slope(s + 0.5 * h, F + 0.5 * h * k2);
            MatrixXd k4 = slope(s + h, F + h * k3);
            F += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    return F;
}

// Principal logarithm for transports near the identity.
inline MatrixXd transport_log(const MatrixXd& H) {
    const MatrixXd E = H - MatrixXd::Identity(H.rows(), H.cols());
    MatrixXd acc = MatrixXd::Zero(H.rows(), H.cols());
    MatrixXd pw = E;
    for (int k = 1; k <= 12; ++k) {
        acc += ((k % 2 == 1) ? 1.0 : -1.0) / k * pw;
        pw = pw * E;
    }
    return acc;
}

// ---- chart files -----------------------------------------------------------
// Same shape as the instance format: indexed rational literals, omitted
// entries zero.  Frame keys are "i,a,b" with i in 1..3, christoffel keys
// "a,b,c" for the coefficient of e_a in the b-derivative of e_c.

inline QuaternionicChart load_chart(const std::string& path) {
    nlohmann::json doc = detail::parse_json_file(path);
    if (!doc.is_object() || !doc.contains("n") || !doc["n"].is_number_integer())
        throw ParseError("chart file needs an integer n");
    const int n = doc["n"].get<int>();
    if (n < 1 || n > 8) throw ParseError("chart dimension out of range");
    QuaternionicChart c = flat_chart(n);
    const int d = 4 * n;

    auto indices = [&](const std::string& key, int count) {
        std::vector<int> out;
        std::size_t pos = 0;
        for (int k = 0; k < count; ++k) {
            std::size_t next = key.find(',', pos);
            std::string tok = key.substr(pos, next == std::string::npos ? next : next - pos);
            try {
                out.push_back(std::stoi(tok));
            } catch (...) {
                throw ParseError("bad index key '" + key + "'");
            }
            pos = (next == std::string::npos) ? key.size() : next + 1;
        }
        for (int v : out)
            if (v < 1 || v > d) throw ParseError("index out of range in key '" + key + "'");
        return out;
    };

    if (doc.contains("frame")) {
        for (int i = 0; i < 3; ++i) c.frame[static_cast<std::size_t>(i)] = rat_matrix_zero(2 * n, d);
        for (auto& [key, val] : doc["frame"].items()) {
            std::vector<int> ix = indices(key, 3);
            if (ix[0] < 1 || ix[0] > 3) throw ParseError("frame index out of range in '" + key + "'");
            c.frame[static_cast<std::size_t>(ix[0] - 1)][static_cast<std::size_t>(ix[1] - 1)][static_cast<std::size_t>(ix[2] - 1)] =
                parse_rational(val.get<std::string>(), 2 * n);
        }
    }
    if (doc.contains("christoffels")) {
        for (auto& [key, val] : doc["christoffels"].items()) {
            std::vector<int> ix = indices(key, 3);
            c.christoffels[static_cast<std::size_t>(ix[1] - 1)][static_cast<std::size_t>(ix[0] - 1)][static_cast<std::size_t>(ix[2] - 1)] =
                parse_rational(val.get<std::string>(), 2 * n);
        }
    }
    return c;
}

inline void save_chart(const QuaternionicChart& c, const std::string& path) {
    nlohmann::json doc;
    doc["n"] = c.n;
    nlohmann::json fr = nlohmann::json::object();
    nlohmann::json ch = nlohmann::json::object();
    const int d = c.dim();
    for (int i = 0; i < 3; ++i)
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) {
                const RationalField& r = c.frame[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
                if (!r.is_zero())
                    fr[std::to_string(i + 1) + "," + std::to_string(a + 1) + "," + std::to_string(b + 1)] = to_string(r);
            }
    for (int b = 0; b < d; ++b)
        for (int a = 0; a < d; ++a)
            for (int cc = 0; cc < d; ++cc) {
                const RationalField& r = c.christoffels[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)][static_cast<std::size_t>(cc)];
                if (!r.is_zero())
                    ch[std::to_string(a + 1) + "," + std::to_string(b + 1) + "," + std::to_string(cc + 1)] = to_string(r);
            }
    doc["frame"] = fr;
    doc["christoffels"] = ch;
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << doc.dump(1) << "\n";
}

}  // namespace qfk
