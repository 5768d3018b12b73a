#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <functional>
#include <vector>

#include "qfk/errors.hpp"
#include "qfk/poly.hpp"

namespace qfk {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

// Complex torsion-free connection on a chart of S, complexified.  Only the
// holomorphic-index block Gamma^k_{ij}(z, zb) is stored; the conjugate block
// is its formal conjugate and the mixed blocks vanish, so symmetry of the
// stored block is the whole torsion-freeness condition.
struct CProjectiveData {
    int n = 0;
    std::vector<RationalField> gamma;  // [k][i][j] flattened

    static CProjectiveData zero(int n) {
        CProjectiveData d;
        d.n = n;
        d.gamma.assign(static_cast<std::size_t>(n) * n * n, RationalField::constant(n, 0.0));
        return d;
    }

    const RationalField& G(int k, int i, int j) const {
        return gamma[static_cast<std::size_t>((k * n + i) * n + j)];
    }
    RationalField& G(int k, int i, int j) {
        return gamma[static_cast<std::size_t>((k * n + i) * n + j)];
    }
};

// (1,0) connection form components of the line bundle in a fixed local
// trivialization; the (0,1) half is the formal conjugate.
struct LineBundleData {
    int n = 0;
    std::vector<RationalField> theta;

    static LineBundleData zero(int n) {
        LineBundleData b;
        b.n = n;
        b.theta.assign(static_cast<std::size_t>(n), RationalField::constant(n, 0.0));
        return b;
    }
};

// Real 1-form on S in complexified components.  gamma_a is kept explicitly
// so non-real test forms are expressible, but the factory enforces the
// reality pairing used everywhere in the pipeline.
struct OneForm {
    int n = 0;
    std::vector<RationalField> gamma_h;  // (1,0) components
    std::vector<RationalField> gamma_a;  // (0,1) components

    static OneForm zero(int n) {
        OneForm f;
        f.n = n;
        f.gamma_h.assign(static_cast<std::size_t>(n), RationalField::constant(n, 0.0));
        f.gamma_a = f.gamma_h;
        return f;
    }

    static OneForm from_holomorphic(std::vector<RationalField> h) {
        OneForm f;
        f.n = static_cast<int>(h.size());
        f.gamma_a.reserve(h.size());
        for (const auto& c : h) f.gamma_a.push_back(c.formal_conjugate());
        f.gamma_h = std::move(h);
        return f;
    }
};

inline void validate_connection(const CProjectiveData& D) {
    if (D.n < 2) throw Error("connection data needs complex dimension at least 2");
    if (D.gamma.size() != static_cast<std::size_t>(D.n) * D.n * D.n)
        throw Error("connection data has wrong component count");
    for (const auto& g : D.gamma)
        if (g.num_vars() != D.n) throw Error("connection component has wrong variable count");
    for (int k = 0; k < D.n; ++k)
        for (int i = 0; i < D.n; ++i)
            for (int j = i + 1; j < D.n; ++j)
                if (D.G(k, i, j) != D.G(k, j, i))
                    throw Error("connection data is not symmetric in the lower indices");
}

// ---- curvature ------------------------------------------------------------
//
// In the type-split coordinate frame the curvature of a complex torsion-free
// connection has blocks
//   R^k_{m ij}      = d_i G^k_{jm} - d_j G^k_{im} + [G_i, G_j]^k_m
//   R^kb_{mb ibjb}  = formal conjugate of the above
//   R^k_{m i jb}    = -d_jb G^k_{im}
//   R^kb_{mb i jb}  = +d_i Gb^kb_{jbmb}
// and every type-mixing component vanishes identically.

struct CurvatureSymbols {
    int n = 0;
    std::vector<RationalField> hol;       // [k][m][i][j]
    std::vector<RationalField> anti;      // [k][m][i][j], barred indices
    std::vector<RationalField> mix_hol;   // [k][m][i][jb]
    std::vector<RationalField> mix_anti;  // [kb][mb][i][jb]

    std::size_t idx(int a, int b, int c, int d) const {
        return static_cast<std::size_t>(((a * n + b) * n + c) * n + d);
    }
};

inline CurvatureSymbols curvature_symbols(const CProjectiveData& D) {
    const int n = D.n;
    CurvatureSymbols S;
    S.n = n;
    std::size_t sz = static_cast<std::size_t>(n) * n * n * n;
    S.hol.assign(sz, RationalField::constant(n, 0.0));
    S.anti = S.hol;
    S.mix_hol = S.hol;
    S.mix_anti = S.hol;
    for (int k = 0; k < n; ++k)
        for (int m = 0; m < n; ++m)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    // pure blocks only for i < j; mirrors are exact negations
                    if (i < j) {
                        RationalField r = D.G(k, j, m).partial(i) - D.G(k, i, m).partial(j);
                        for (int l = 0; l < n; ++l)
                            r = r + D.G(k, i, l) * D.G(l, j, m) - D.G(k, j, l) * D.G(l, i, m);
                        S.hol[S.idx(k, m, i, j)] = r;
                        S.hol[S.idx(k, m, j, i)] = -r;
                        S.anti[S.idx(k, m, i, j)] = r.formal_conjugate();
                        S.anti[S.idx(k, m, j, i)] = -S.anti[S.idx(k, m, i, j)];
                    }
                    S.mix_hol[S.idx(k, m, i, j)] = -D.G(k, i, m).partial(n + j);
                    S.mix_anti[S.idx(k, m, i, j)] = D.G(k, j, m).formal_conjugate().partial(i);
                }
    return S;
}

// Curvature evaluated at one complexified point.  Index convention for the
// full accessor: 0..n-1 are the holomorphic frame directions, n..2n-1 the
// antiholomorphic ones; R(a, m, c, d) has upper index a, acted index m and
// direction pair (c, d).
struct CurvatureAtPoint {
    int n = 0;
    std::vector<cplx> hol, anti, mix_hol, mix_anti;

    std::size_t idx(int a, int b, int c, int d) const {
        return static_cast<std::size_t>(((a * n + b) * n + c) * n + d);
    }

    cplx R(int a, int m, int c, int d) const {
        bool ah = a < n, mh = m < n, ch = c < n, dh = d < n;
        if (ah != mh) return 0.0;
        if (ah) {
            if (ch && dh) return hol[idx(a, m, c, d)];
            if (ch && !dh) return mix_hol[idx(a, m, c, d - n)];
            if (!ch && dh) return -mix_hol[idx(a, m, d, c - n)];
            return 0.0;
        }
        int ab = a - n, mb = m - n;
        if (!ch && !dh) return anti[idx(ab, mb, c - n, d - n)];
        if (ch && !dh) return mix_anti[idx(ab, mb, c, d - n)];
        if (!ch && dh) return -mix_anti[idx(ab, mb, d, c - n)];
        return 0.0;
    }

    double pure_max_abs() const {
        double m = 0.0;
        for (const auto& v : hol) m = std::max(m, std::abs(v));
        for (const auto& v : anti) m = std::max(m, std::abs(v));
        return m;
    }
};

inline CurvatureAtPoint eval_curvature(const CurvatureSymbols& S, const std::vector<cplx>& z,
                                       const std::vector<cplx>& zb) {
    CurvatureAtPoint C;
    C.n = S.n;
    std::size_t sz = S.hol.size();
    C.hol.resize(sz);
    C.anti.resize(sz);
    C.mix_hol.resize(sz);
    C.mix_anti.resize(sz);
    for (std::size_t t = 0; t < sz; ++t) {
        C.hol[t] = S.hol[t].eval(z, zb);
        C.anti[t] = S.anti[t].eval(z, zb);
        C.mix_hol[t] = S.mix_hol[t].eval(z, zb);
        C.mix_anti[t] = S.mix_anti[t].eval(z, zb);
    }
    return C;
}

inline CurvatureAtPoint curvature(const CProjectiveData& D, const std::vector<cplx>& z,
                                  const std::vector<cplx>& zb) {
    return eval_curvature(curvature_symbols(D), z, zb);
}

// Deterministic sample points on the real slice of the polydisk: per
// coordinate a short inward spiral, then the n-fold product.
inline std::vector<std::vector<cplx>> sample_grid_points(int n, double radius, int grid) {
    if (grid < 1) throw GridError("grid must have at least one point per coordinate");
    std::vector<cplx> axis(static_cast<std::size_t>(grid));
    const double golden = 2.399963229728653;
    for (int t = 0; t < grid; ++t) {
        double r = 0.8 * radius * (t + 1.0) / grid;
        axis[static_cast<std::size_t>(t)] = std::polar(r, golden * t);
    }
    std::size_t total = 1;
    for (int v = 0; v < n; ++v) total *= static_cast<std::size_t>(grid);
    std::vector<std::vector<cplx>> pts(total, std::vector<cplx>(static_cast<std::size_t>(n)));
    for (std::size_t p = 0; p < total; ++p) {
        std::size_t rem = p;
        for (int v = 0; v < n; ++v) {
            pts[p][static_cast<std::size_t>(v)] = axis[rem % static_cast<std::size_t>(grid)];
            rem /= static_cast<std::size_t>(grid);
        }
    }
    return pts;
}

struct Type11Result {
    bool ok = false;
    double residual = 0.0;
    bool symbolic_zero = false;  // pure blocks vanish as rational functions
};

// Pure-type curvature components must vanish.  The symbolic route is exact
// whenever the rational arithmetic cancels; sampling backs it up and supplies
// the residual magnitude for failing inputs.
inline Type11Result is_type_11(const CProjectiveData& D, double radius, int grid,
                               double tol = 1e-10) {
    CurvatureSymbols S = curvature_symbols(D);
    Type11Result r;
    r.symbolic_zero = true;
    for (const auto& f : S.hol)
        if (!f.num().is_zero()) r.symbolic_zero = false;
    if (r.symbolic_zero) {
        r.ok = true;
        r.residual = 0.0;
        return r;
    }
    for (const auto& z : sample_grid_points(D.n, radius, grid)) {
        std::vector<cplx> zb(z.size());
        for (std::size_t k = 0; k < z.size(); ++k) zb[k] = std::conj(z[k]);
        for (const auto& f : S.hol) r.residual = std::max(r.residual, std::abs(f.eval(z, zb)));
        for (const auto& f : S.anti) r.residual = std::max(r.residual, std::abs(f.eval(z, zb)));
    }
    r.ok = r.residual <= tol;
    return r;
}

inline Type11Result is_type_11(const LineBundleData& B, double radius, int grid,
                               double tol = 1e-10) {
    Type11Result r;
    r.symbolic_zero = true;
    std::vector<RationalField> F;
    for (int i = 0; i < B.n; ++i)
        for (int j = i + 1; j < B.n; ++j) {
            RationalField f = B.theta[static_cast<std::size_t>(j)].partial(i) -
                              B.theta[static_cast<std::size_t>(i)].partial(j);
            if (!f.num().is_zero()) r.symbolic_zero = false;
            F.push_back(std::move(f));
        }
    if (r.symbolic_zero) {
        r.ok = true;
        return r;
    }
    for (const auto& z : sample_grid_points(B.n, radius, grid)) {
        std::vector<cplx> zb(z.size());
        for (std::size_t k = 0; k < z.size(); ++k) zb[k] = std::conj(z[k]);
        for (const auto& f : F) r.residual = std::max(r.residual, std::abs(f.eval(z, zb)));
    }
    r.ok = r.residual <= tol;
    return r;
}

// ---- change-of-connection brackets ----------------------------------------

// Real tangent vectors are carried by their holomorphic components; J acts
// as multiplication by i there.  gh/ga hold the 1-form values at the point.
inline VectorXcd c_bracket_values(const VectorXcd& Y, const VectorXcd& Z, const VectorXcd& gh,
                                  const VectorXcd& ga) {
    auto pair = [&](const VectorXcd& v) {
        cplx s = 0.0;
        for (Eigen::Index k = 0; k < v.size(); ++k)
            s += gh[k] * v[k] + ga[k] * std::conj(v[k]);
        return s;
    };
    cplx i(0.0, 1.0);
    // grouped so that swapping Y and Z commutes additions elementwise and the
    // symmetry of the output is bitwise
    VectorXcd u = pair(Y) * Z + pair(Z) * Y;
    VectorXcd v = pair(i * Y) * (i * Z) + pair(i * Z) * (i * Y);
    return 0.5 * (u - v);
}

inline VectorXcd eval_form(const OneForm& f, const std::vector<cplx>& z, bool antihol) {
    VectorXcd v(f.n);
    const auto& comps = antihol ? f.gamma_a : f.gamma_h;
    for (int k = 0; k < f.n; ++k) v[k] = comps[static_cast<std::size_t>(k)].diagonal_eval(z);
    return v;
}

inline VectorXcd c_bracket(const VectorXcd& Y, const OneForm& gamma, const VectorXcd& Z,
                           const std::vector<cplx>& point) {
    return c_bracket_values(Y, Z, eval_form(gamma, point, false), eval_form(gamma, point, true));
}

inline void check_quaternion_frame(const std::array<MatrixXd, 3>& I, double tol) {
    const auto dim = I[0].rows();
    MatrixXd id = MatrixXd::Identity(dim, dim);
    double r = 0.0;
    for (int a = 0; a < 3; ++a) r = std::max(r, (I[(std::size_t)a] * I[(std::size_t)a] + id).cwiseAbs().maxCoeff());
    r = std::max(r, (I[0] * I[1] - I[2]).cwiseAbs().maxCoeff());
    r = std::max(r, (I[1] * I[2] - I[0]).cwiseAbs().maxCoeff());
    if (r > tol) throw FrameError("quaternion frame relations fail with residual " + std::to_string(r));
}

// Quaternionic change-of-connection pairing on a real chart; gamma_cov holds
// the covector values.
inline VectorXd q_bracket(const VectorXd& Y, const VectorXd& gamma_cov, const VectorXd& Z,
                          const std::array<MatrixXd, 3>& I, double frame_tol = 1e-10) {
    check_quaternion_frame(I, frame_tol);
    auto g = [&](const VectorXd& v) { return gamma_cov.dot(v); };
    VectorXd out = g(Y) * Z + g(Z) * Y;
    for (const auto& Ia : I) {
        VectorXd IY = Ia * Y, IZ = Ia * Z;
        out -= g(IY) * IZ + g(IZ) * IY;
    }
    return 0.5 * out;
}

// Rescales every nonzero entry onto one shared denominator (the product of
// the distinct ones).  Downstream curvature sums then hit the same-
// denominator shortcut instead of compounding unreduced denominators.
inline void put_over_common_denominator(std::vector<RationalField>& fs) {
    std::vector<PolyField> dens;
    for (const auto& f : fs) {
        if (f.is_zero()) continue;
        bool seen = false;
        for (const auto& d : dens)
            if (d == f.den()) {
                seen = true;
                break;
            }
        if (!seen) dens.push_back(f.den());
    }
    if (dens.size() <= 1) return;
    for (auto& f : fs) {
        if (f.is_zero()) continue;
        PolyField num = f.num();
        PolyField den(f.num_vars());
        bool first = true;
        for (const auto& d : dens) {
            if (!(d == f.den())) num = num * d;
            den = first ? d : den * d;
            first = false;
        }
        f = RationalField(std::move(num), std::move(den));
    }
}

// D' = D + <.,gamma>_c; on the stored holomorphic block the shift is
// G^k_{ij} += gamma_i d^k_j + gamma_j d^k_i, mixed blocks stay zero.
inline CProjectiveData change_representative(const CProjectiveData& D, const OneForm& gamma) {
    CProjectiveData out = D;
    for (int k = 0; k < D.n; ++k)
        for (int i = 0; i < D.n; ++i)
            for (int j = 0; j < D.n; ++j) {
                RationalField shift = RationalField::constant(D.n, 0.0);
                if (j == k) shift = shift + gamma.gamma_h[static_cast<std::size_t>(i)];
                if (i == k) shift = shift + gamma.gamma_h[static_cast<std::size_t>(j)];
                out.G(k, i, j) = out.G(k, i, j) + shift;
            }
    put_over_common_denominator(out.gamma);
    return out;
}

// Connection induced on the density line by the trace pairing; the sign is
// fixed so flat input gives flat output and the parallel 1-jets of the flat
// instance are the affine-linear functions.
inline OneForm o1_connection_form(const CProjectiveData& D) {
    std::vector<RationalField> h(static_cast<std::size_t>(D.n), RationalField::constant(D.n, 0.0));
    for (int i = 0; i < D.n; ++i) {
        RationalField s = RationalField::constant(D.n, 0.0);
        for (int k = 0; k < D.n; ++k) s = s + D.G(k, i, k);
        h[static_cast<std::size_t>(i)] = s * cplx(1.0 / (D.n + 1), 0.0);
    }
    return OneForm::from_holomorphic(std::move(h));
}

// ---- leaf geometry ---------------------------------------------------------

// Holomorphic connection induced on one leaf of either foliation, written in
// the leaf coordinates (always the first variable half).  For the conjugate
// foliation the conjugate block is restricted and the halves swapped so both
// kinds share the same downstream code.
struct LeafConnection {
    int n = 0;
    bool plus = true;
    std::vector<cplx> frozen;
    std::vector<RationalField> G;      // [k][i][j]
    std::vector<RationalField> R;      // [a][k][i][j] leaf curvature
    std::vector<RationalField> ric;    // [j][k], Ric_jk = sum_a R^a_{kaj}
    std::vector<RationalField> p_sym;  // symmetrized Ricci / (n-1)

    const RationalField& at(int k, int i, int j) const {
        return G[static_cast<std::size_t>((k * n + i) * n + j)];
    }
    std::size_t idx4(int a, int b, int c, int d) const {
        return static_cast<std::size_t>(((a * n + b) * n + c) * n + d);
    }
};

inline LeafConnection restrict_to_leaf(const CProjectiveData& D, bool plus,
                                       const std::vector<cplx>& frozen) {
    LeafConnection L;
    L.n = D.n;
    L.plus = plus;
    L.frozen = frozen;
    L.G.reserve(D.gamma.size());
    for (const auto& g : D.gamma) {
        if (plus)
            L.G.push_back(g.restrict_zb(frozen));
        else
            L.G.push_back(g.formal_conjugate().restrict_z(frozen).swap_halves());
    }
    const int n = L.n;
    std::size_t sz4 = static_cast<std::size_t>(n) * n * n * n;
    L.R.assign(sz4, RationalField::constant(n, 0.0));
    for (int a = 0; a < n; ++a)
        for (int k = 0; k < n; ++k)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    RationalField r = L.at(a, j, k).partial(i) - L.at(a, i, k).partial(j);
                    for (int l = 0; l < n; ++l)
                        r = r + L.at(a, i, l) * L.at(l, j, k) - L.at(a, j, l) * L.at(l, i, k);
                    L.R[L.idx4(a, k, i, j)] = r;
                }
    L.ric.assign(static_cast<std::size_t>(n) * n, RationalField::constant(n, 0.0));
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
            RationalField s = RationalField::constant(n, 0.0);
            for (int a = 0; a < n; ++a) s = s + L.R[L.idx4(a, k, a, j)];
            L.ric[static_cast<std::size_t>(j * n + k)] = s;
        }
    L.p_sym.assign(static_cast<std::size_t>(n) * n, RationalField::constant(n, 0.0));
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k)
            L.p_sym[static_cast<std::size_t>(i * n + k)] =
                (L.ric[static_cast<std::size_t>(i * n + k)] + L.ric[static_cast<std::size_t>(k * n + i)]) *
                cplx(0.5 / (n - 1), 0.0);
    return L;
}

// Projective Weyl tensor of the leaf connection at a point.  The Rho tensor
// here keeps the antisymmetric Ricci part so the result is invariant under
// arbitrary representative changes, not only Ricci-symmetric ones.
inline std::vector<cplx> weyl_projective(const LeafConnection& L, const std::vector<cplx>& zeta) {
    const int n = L.n;
    std::vector<cplx> zb(static_cast<std::size_t>(n), cplx(0.0, 0.0));
    auto ev = [&](const RationalField& f) { return f.eval(zeta, zb); };
    std::vector<cplx> Rv(L.R.size());
    for (std::size_t t = 0; t < L.R.size(); ++t) Rv[t] = ev(L.R[t]);
    std::vector<cplx> P(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
            cplx rj = ev(L.ric[static_cast<std::size_t>(j * n + k)]);
            cplx rk = ev(L.ric[static_cast<std::size_t>(k * n + j)]);
            P[static_cast<std::size_t>(j * n + k)] = 0.5 * (rj + rk) / double(n - 1) + 0.5 * (rj - rk) / double(n + 1);
        }
    std::vector<cplx> W(Rv.size());
    for (int a = 0; a < n; ++a)
        for (int k = 0; k < n; ++k)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    cplx w = Rv[L.idx4(a, k, i, j)];
                    if (a == j) w += P[static_cast<std::size_t>(i * n + k)];
                    if (a == i) w -= P[static_cast<std::size_t>(j * n + k)];
                    if (a == k)
                        w += P[static_cast<std::size_t>(i * n + j)] - P[static_cast<std::size_t>(j * n + i)];
                    W[L.idx4(a, k, i, j)] = w;
                }
    return W;
}

// ---- integrability ----------------------------------------------------------

// Finite-difference Nijenhuis tensor of an endomorphism field on a real
// chart; returns the max component over all frame pairs.
inline double nijenhuis(const std::function<MatrixXd(const VectorXd&)>& J, const VectorXd& x,
                        double h) {
    const int d = static_cast<int>(x.size());
    MatrixXd J0 = J(x);
    std::vector<MatrixXd> dJ(static_cast<std::size_t>(d));
    for (int a = 0; a < d; ++a) {
        VectorXd xp = x, xm = x;
        xp[a] += h;
        xm[a] -= h;
        dJ[static_cast<std::size_t>(a)] = (J(xp) - J(xm)) / (2.0 * h);
    }
    double norm = 0.0;
    for (int a = 0; a < d; ++a)
        for (int b = a + 1; b < d; ++b)
            for (int c = 0; c < d; ++c) {
                double v = 0.0;
                for (int e = 0; e < d; ++e) {
                    v += J0(e, a) * dJ[(std::size_t)e](c, b) - J0(e, b) * dJ[(std::size_t)e](c, a);
                    v += J0(c, e) * (dJ[(std::size_t)b](e, a) - dJ[(std::size_t)a](e, b));
                }
                norm = std::max(norm, std::abs(v));
            }
    return norm;
}

}  // namespace qfk
