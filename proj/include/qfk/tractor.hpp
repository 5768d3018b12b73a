#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "qfk/cproj.hpp"
#include "qfk/errors.hpp"
#include "qfk/poly.hpp"

namespace qfk {

// 1-jet of a density along a leaf: value and leaf-cotangent slot.
struct TractorJet {
    cplx l{0.0, 0.0};
    VectorXcd alpha;

    VectorXcd to_vec() const {
        VectorXcd v(alpha.size() + 1);
        v[0] = l;
        v.tail(alpha.size()) = alpha;
        return v;
    }
    static TractorJet from_vec(const VectorXcd& v) {
        TractorJet j;
        j.l = v[0];
        j.alpha = v.tail(v.size() - 1);
        return j;
    }
};

// One leaf of either foliation with everything the twisted tractor
// connection needs: restricted Christoffels, the twist form (theta plus the
// density trace form of the chosen representative), and the leafwise
// Schouten tensor.  All symbols live in the first variable half.
struct LeafContext {
    bool plus = true;
    std::vector<cplx> param;
    int n = 0;
    LeafConnection conn;
    std::vector<RationalField> twist;     // t_i
    std::vector<RationalField> omega;     // the representative's trace form, restricted
    std::vector<RationalField> d_twist;   // [i][j] = d_i t_j
    std::vector<RationalField> d_p;       // [i][j][k] = d_i P_jk
    double flatness_residual = 0.0;
    double domain_radius = 1.0;
    int grid = 5;

    std::vector<cplx> zeros() const { return std::vector<cplx>(static_cast<std::size_t>(n), cplx(0, 0)); }

    cplx twist_at(int i, const std::vector<cplx>& zeta) const {
        return twist[static_cast<std::size_t>(i)].eval(zeta, zeros());
    }
    cplx gamma_at(int a, int i, int k, const std::vector<cplx>& zeta) const {
        return conn.at(a, i, k).eval(zeta, zeros());
    }
    cplx schouten_at(int i, int k, const std::vector<cplx>& zeta) const {
        return conn.p_sym[static_cast<std::size_t>(i * n + k)].eval(zeta, zeros());
    }

    // Connection matrix of the twisted tractor derivative in direction i:
    // row 0 is (t_i, -e_i), row k is (P_ik, t_i d^a_k - G^a_ik).
    MatrixXcd A(int i, const std::vector<cplx>& zeta) const {
        MatrixXcd M = MatrixXcd::Zero(n + 1, n + 1);
        cplx t = twist_at(i, zeta);
        M(0, 0) = t;
        M(0, 1 + i) = -1.0;
        for (int k = 0; k < n; ++k) {
            M(1 + k, 0) = schouten_at(i, k, zeta);
            M(1 + k, 1 + k) += t;
            for (int a = 0; a < n; ++a) M(1 + k, 1 + a) -= gamma_at(a, i, k, zeta);
        }
        return M;
    }

    MatrixXcd A_dir(const std::vector<cplx>& zeta, const VectorXcd& dir) const {
        MatrixXcd M = MatrixXcd::Zero(n + 1, n + 1);
        for (int i = 0; i < n; ++i)
            if (dir[i] != cplx(0.0, 0.0)) M += dir[i] * A(i, zeta);
        return M;
    }
};

// Curvature matrix of the twisted tractor connection for the direction pair
// (i, j): F = d_i A_j - d_j A_i + [A_i, A_j].  Zero exactly when the leaf
// data comes from pure-free curvature input; used both as the construction
// gate and as the analytic side of the loop-transport cross-check.
inline MatrixXcd tractor_curvature(const LeafContext& L, int i, int j,
                                   const std::vector<cplx>& zeta) {
    const int n = L.n;
    auto zeros = L.zeros();
    MatrixXcd dAj = MatrixXcd::Zero(n + 1, n + 1);
    MatrixXcd dAi = MatrixXcd::Zero(n + 1, n + 1);
    auto fill = [&](MatrixXcd& M, int dcoord, int acoord) {
        M(0, 0) = L.d_twist[static_cast<std::size_t>(dcoord * n + acoord)].eval(zeta, zeros);
        for (int k = 0; k < n; ++k) {
            M(1 + k, 0) =
                L.d_p[static_cast<std::size_t>((dcoord * n + acoord) * n + k)].eval(zeta, zeros);
            M(1 + k, 1 + k) += M(0, 0);
            for (int a = 0; a < n; ++a)
                M(1 + k, 1 + a) -= L.conn.at(a, acoord, k).partial(dcoord).eval(zeta, zeros);
        }
    };
    fill(dAj, i, j);
    fill(dAi, j, i);
    MatrixXcd Ai = L.A(i, zeta), Aj = L.A(j, zeta);
    return dAj - dAi + Ai * Aj - Aj * Ai;
}

// validate=false skips the admissibility and flatness gates; callers doing so
// must have validated the instance once up front (the twistor atlas does).
inline LeafContext make_leaf(const CProjectiveData& data, const LineBundleData& bundle,
                             const CProjectiveData& D_rep, bool plus,
                             const std::vector<cplx>& param, double radius, int grid,
                             double flat_tol = 1e-9, bool validate = true) {
    if (validate) {
        Type11Result td = is_type_11(data, radius, grid);
        if (!td.ok)
            throw Type11Violation("connection class has pure-type curvature, residual " +
                                  std::to_string(td.residual));
        Type11Result tb = is_type_11(bundle, radius, grid);
        if (!tb.ok)
            throw Type11Violation("line bundle form has (2,0) curvature, residual " +
                                  std::to_string(tb.residual));
    }
    LeafContext L;
    L.plus = plus;
    L.param = param;
    L.n = D_rep.n;
    L.domain_radius = radius;
    L.grid = grid;
    L.conn = restrict_to_leaf(D_rep, plus, param);
    OneForm om = o1_connection_form(D_rep);
    const int n = L.n;
    L.twist.reserve(static_cast<std::size_t>(n));
    L.omega.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        RationalField th = bundle.theta[static_cast<std::size_t>(i)];
        RationalField w = om.gamma_h[static_cast<std::size_t>(i)];
        if (plus) {
            L.omega.push_back(w.restrict_zb(param));
            L.twist.push_back((th + w).restrict_zb(param));
        } else {
            L.omega.push_back(w.formal_conjugate().restrict_z(param).swap_halves());
            L.twist.push_back((th + w).formal_conjugate().restrict_z(param).swap_halves());
        }
    }
    L.d_twist.reserve(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) L.d_twist.push_back(L.twist[static_cast<std::size_t>(j)].partial(i));
    L.d_p.reserve(static_cast<std::size_t>(n) * n * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                L.d_p.push_back(L.conn.p_sym[static_cast<std::size_t>(j * n + k)].partial(i));

    // Flatness gate on an interior grid of the leaf.
    if (validate) {
        double res = 0.0;
        for (const auto& zeta : sample_grid_points(n, radius, std::max(2, grid / 2)))
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j)
                    res = std::max(res, tractor_curvature(L, i, j, zeta).cwiseAbs().maxCoeff());
        L.flatness_residual = res;
        if (res > flat_tol)
            throw Type11Violation(
                "twisted tractor connection is not flat along the leaf, residual " +
                std::to_string(res));
    }
    return L;
}

// Pointwise covariant derivative of a constant jet in a leaf direction.
inline TractorJet tractor_derivative(const LeafContext& L, const TractorJet& jet,
                                     const VectorXcd& dir, const std::vector<cplx>& zeta) {
    return TractorJet::from_vec(L.A_dir(zeta, dir) * jet.to_vec());
}

inline RationalField restrict_symbol(const RationalField& f, bool plus,
                                     const std::vector<cplx>& param) {
    return plus ? f.restrict_zb(param) : f.formal_conjugate().restrict_z(param).swap_halves();
}

// Full-domain symbols shared by every leaf of one instance.  Leafwise
// quantities are restrictions of these, and the holomorphic derivatives in
// the curvature contractions commute with freezing the conjugate half, so
// the expensive symbol algebra runs once instead of once per leaf.  That is
// what keeps line solving affordable: a collocation solve touches thousands
// of leaves.
struct LeafSeed {
    int n = 0;
    std::vector<RationalField> gamma;    // representative Christoffels [k][i][j]
    std::vector<RationalField> p_full;   // symmetrized leaf Schouten [i][k]
    std::vector<RationalField> dp_full;  // [i][j][k] = d_i P_jk
    std::vector<RationalField> omega;    // density trace form
    std::vector<RationalField> twist;    // theta + omega
    std::vector<RationalField> dtwist;   // [i][j] = d_i t_j
};

inline LeafSeed make_leaf_seed(const CProjectiveData& D_rep, const LineBundleData& bundle) {
    LeafSeed s;
    const int n = D_rep.n;
    s.n = n;
    s.gamma = D_rep.gamma;
    auto at = [&](int k, int i, int j) -> const RationalField& {
        return s.gamma[static_cast<std::size_t>((k * n + i) * n + j)];
    };
    std::vector<RationalField> ric(static_cast<std::size_t>(n) * n,
                                   RationalField::constant(n, 0.0));
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
            RationalField sum = RationalField::constant(n, 0.0);
            for (int a = 0; a < n; ++a) {
                RationalField r = at(a, j, k).partial(a) - at(a, a, k).partial(j);
                for (int l = 0; l < n; ++l)
                    r = r + at(a, a, l) * at(l, j, k) - at(a, j, l) * at(l, a, k);
                sum = sum + r;
            }
            ric[static_cast<std::size_t>(j * n + k)] = sum;
        }
    s.p_full.assign(static_cast<std::size_t>(n) * n, RationalField::constant(n, 0.0));
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k)
            s.p_full[static_cast<std::size_t>(i * n + k)] =
                (ric[static_cast<std::size_t>(i * n + k)] + ric[static_cast<std::size_t>(k * n + i)]) *
                cplx(0.5 / (n - 1), 0.0);
    s.dp_full.reserve(static_cast<std::size_t>(n) * n * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                s.dp_full.push_back(s.p_full[static_cast<std::size_t>(j * n + k)].partial(i));
    OneForm om = o1_connection_form(D_rep);
    s.omega = om.gamma_h;
    s.twist.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        s.twist.push_back(bundle.theta[static_cast<std::size_t>(i)] +
                          s.omega[static_cast<std::size_t>(i)]);
    s.dtwist.reserve(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            s.dtwist.push_back(s.twist[static_cast<std::size_t>(j)].partial(i));
    return s;
}

// Leaf construction from a seed: a few dozen substitutions, no curvature
// algebra.  R and ric are left empty; transport, curvature evaluation and
// the line fibers never read them.  No validation gates here, the caller
// has vetted the instance once.
inline LeafContext make_leaf_fast(const LeafSeed& seed, bool plus, const std::vector<cplx>& param,
                                  double radius, int grid) {
    LeafContext L;
    L.plus = plus;
    L.param = param;
    L.n = seed.n;
    L.domain_radius = radius;
    L.grid = grid;
    const int n = seed.n;
    L.conn.n = n;
    L.conn.plus = plus;
    L.conn.frozen = param;
    L.conn.G.reserve(seed.gamma.size());
    for (const auto& g : seed.gamma) L.conn.G.push_back(restrict_symbol(g, plus, param));
    L.conn.p_sym.reserve(seed.p_full.size());
    for (const auto& p : seed.p_full) L.conn.p_sym.push_back(restrict_symbol(p, plus, param));
    L.twist.reserve(static_cast<std::size_t>(n));
    L.omega.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        L.omega.push_back(restrict_symbol(seed.omega[static_cast<std::size_t>(i)], plus, param));
        L.twist.push_back(restrict_symbol(seed.twist[static_cast<std::size_t>(i)], plus, param));
    }
    L.d_twist.reserve(seed.dtwist.size());
    for (const auto& f : seed.dtwist) L.d_twist.push_back(restrict_symbol(f, plus, param));
    L.d_p.reserve(seed.dp_full.size());
    for (const auto& f : seed.dp_full) L.d_p.push_back(restrict_symbol(f, plus, param));
    return L;
}

inline int& transport_steps_per_unit() {
    static int steps = 256;
    return steps;
}

namespace detail {

// RK4 for V' = -A(zeta(s)) V along the straight segment a -> b.
inline MatrixXcd rk4_segment(const LeafContext& L, const std::vector<cplx>& a,
                             const std::vector<cplx>& b, MatrixXcd V, int steps) {
    const int n = L.n;
    VectorXcd dir(n);
    for (int k = 0; k < n; ++k) dir[k] = b[static_cast<std::size_t>(k)] - a[static_cast<std::size_t>(k)];
    auto at = [&](double s) {
        std::vector<cplx> z(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k)
            z[static_cast<std::size_t>(k)] = a[static_cast<std::size_t>(k)] + s * dir[k];
        return z;
    };
    double h = 1.0 / steps;
    for (int t = 0; t < steps; ++t) {
        double s = t * h;
        MatrixXcd A1 = -L.A_dir(at(s), dir);
        MatrixXcd Am = -L.A_dir(at(s + 0.5 * h), dir);
        MatrixXcd A2 = -L.A_dir(at(s + h), dir);
        MatrixXcd k1 = A1 * V;
        MatrixXcd k2 = Am * (V + 0.5 * h * k1);
        MatrixXcd k3 = Am * (V + 0.5 * h * k2);
        MatrixXcd k4 = A2 * (V + h * k3);
        V += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return V;
}

inline double segment_length(const std::vector<cplx>& a, const std::vector<cplx>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += std::norm(b[k] - a[k]);
    return std::sqrt(s);
}

}  // namespace detail

// Parallel transport of a matrix of column jets along a polyline.  A
// Richardson pair (full and half resolution) monitors the step error.
inline MatrixXcd transport_matrix(const LeafContext& L, const std::vector<std::vector<cplx>>& path,
                                  MatrixXcd V, double step_tol = 1e-7, int steps_per_unit = 0,
                                  double* err_out = nullptr) {
    if (path.size() < 2) {
        if (err_out) *err_out = 0.0;
        return V;
    }
    if (steps_per_unit <= 0) steps_per_unit = transport_steps_per_unit();
    MatrixXcd Vh = V;
    double err = 0.0;
    for (std::size_t seg = 0; seg + 1 < path.size(); ++seg) {
        double len = detail::segment_length(path[seg], path[seg + 1]);
        int steps = std::max(4, static_cast<int>(std::ceil(steps_per_unit * len)));
        steps += steps % 2;
        V = detail::rk4_segment(L, path[seg], path[seg + 1], V, steps);
        Vh = detail::rk4_segment(L, path[seg], path[seg + 1], Vh, steps / 2);
    }
    err = (V - Vh).cwiseAbs().maxCoeff() / 15.0;
    if (err_out) *err_out = err;
    if (err > step_tol)
        throw StepError("transport step error estimate " + std::to_string(err) +
                        " above tolerance " + std::to_string(step_tol));
    return V;
}

inline TractorJet transport(const LeafContext& L, const std::vector<std::vector<cplx>>& path,
                            const TractorJet& jet, double step_tol = 1e-7,
                            int steps_per_unit = 0) {
    MatrixXcd V = jet.to_vec();
    return TractorJet::from_vec(transport_matrix(L, path, V, step_tol, steps_per_unit));
}

// Fiber of parallel jets over one leaf, trivialized by transport of the
// standard jet basis from the basepoint.  Affine-section evaluation is the
// top row of the fundamental matrix.
struct VFiberBasis {
    const LeafContext* leaf = nullptr;
    std::vector<cplx> basepoint;
    double step_tol = 1e-7;

    MatrixXcd fundamental(const std::vector<cplx>& zeta) const {
        MatrixXcd id = MatrixXcd::Identity(leaf->n + 1, leaf->n + 1);
        return transport_matrix(*leaf, {basepoint, zeta}, id, step_tol);
    }
    // value at zeta of the affine section with basepoint jet c
    cplx ev(const VectorXcd& c, const std::vector<cplx>& zeta) const {
        return (fundamental(zeta) * c)(0);
    }
    VectorXcd ev_row(const std::vector<cplx>& zeta) const {
        return fundamental(zeta).row(0).transpose();
    }
    double condition(const std::vector<cplx>& zeta) const {
        Eigen::JacobiSVD<MatrixXcd> svd(fundamental(zeta));
        return svd.singularValues()(0) / svd.singularValues()(svd.singularValues().size() - 1);
    }
};

inline VFiberBasis fiber_basis(const LeafContext& L, const std::vector<cplx>& basepoint,
                               double step_tol = 1e-7) {
    VFiberBasis B;
    B.leaf = &L;
    B.basepoint = basepoint;
    B.step_tol = step_tol;
    return B;
}

// Distinguished line of sections parallel for a shifted representative's
// density connection.  delta_omega holds the restricted difference between
// that representative's trace form and the leaf's own; the section solves
// the scalar equation (d + t + delta_omega) l = 0 and its jet in the leaf
// splitting is (l, -delta_omega l).
struct LineFiber {
    const LeafContext* leaf = nullptr;
    std::vector<cplx> basepoint;
    std::vector<RationalField> delta_omega;
    double step_tol = 1e-7;

    cplx value(const std::vector<cplx>& zeta) const {
        // scalar RK4 along the straight segment
        const int n = leaf->n;
        VectorXcd dir(n);
        for (int k = 0; k < n; ++k) dir[k] = zeta[static_cast<std::size_t>(k)] - basepoint[static_cast<std::size_t>(k)];
        auto coef = [&](double s) {
            std::vector<cplx> z(static_cast<std::size_t>(n));
            for (int k = 0; k < n; ++k)
                z[static_cast<std::size_t>(k)] = basepoint[static_cast<std::size_t>(k)] + s * dir[k];
            cplx c = 0.0;
            for (int i = 0; i < n; ++i)
                c += (leaf->twist_at(i, z) +
                      delta_omega[static_cast<std::size_t>(i)].eval(z, leaf->zeros())) *
                     dir[i];
            return -c;
        };
        int steps = std::max(4, static_cast<int>(std::ceil(transport_steps_per_unit() *
                                                           detail::segment_length(basepoint, zeta))));
        double h = 1.0 / steps;
        cplx l = 1.0;
        for (int t = 0; t < steps; ++t) {
            double s = t * h;
            cplx k1 = coef(s) * l;
            cplx k2 = coef(s + 0.5 * h) * (l + 0.5 * h * k1);
            cplx k3 = coef(s + 0.5 * h) * (l + 0.5 * h * k2);
            cplx k4 = coef(s + h) * (l + h * k3);
            l += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        return l;
    }

    TractorJet jet_at(const std::vector<cplx>& zeta) const {
        TractorJet j;
        j.l = value(zeta);
        j.alpha = VectorXcd(leaf->n);
        for (int i = 0; i < leaf->n; ++i)
            j.alpha[i] = -delta_omega[static_cast<std::size_t>(i)].eval(zeta, leaf->zeros()) * j.l;
        return j;
    }
};

// omega_data: full-domain trace form of the representative whose line is
// wanted; the leaf's own form is subtracted after restriction.
inline LineFiber line_fiber_from_form(const LeafContext& L, const OneForm& omega_data,
                                      const std::vector<cplx>& basepoint, double step_tol = 1e-7) {
    LineFiber f;
    f.leaf = &L;
    f.basepoint = basepoint;
    f.step_tol = step_tol;
    f.delta_omega.reserve(static_cast<std::size_t>(L.n));
    for (int i = 0; i < L.n; ++i) {
        RationalField w = omega_data.gamma_h[static_cast<std::size_t>(i)];
        RationalField r = L.plus ? w.restrict_zb(L.param)
                                 : w.formal_conjugate().restrict_z(L.param).swap_halves();
        f.delta_omega.push_back(r - L.omega[static_cast<std::size_t>(i)]);
    }
    return f;
}

inline LineFiber line_fiber(const LeafContext& L, const CProjectiveData& D_rep,
                            const std::vector<cplx>& basepoint, double step_tol = 1e-7) {
    Type11Result t = is_type_11(D_rep, L.domain_radius, L.grid);
    if (!t.ok)
        throw Type11Violation("representative has pure-type curvature, residual " +
                              std::to_string(t.residual));
    return line_fiber_from_form(L, o1_connection_form(D_rep), basepoint, step_tol);
}

}  // namespace qfk
