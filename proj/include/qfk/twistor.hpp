#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <utility>

#include "qfk/instance.hpp"
#include "qfk/tractor.hpp"

namespace qfk {

// Fiberwise projective coordinates before blow-down; the dual pair swap is
// the involution that exchanges the two chart scalars.
struct PPoint {
    std::vector<cplx> x, xbar;
    cplx l0{1.0, 0.0}, l1{0.0, 0.0};

    PPoint dualized() const {
        PPoint q = *this;
        std::swap(q.l0, q.l1);
        return q;
    }
};

inline cplx plus_scalar(const PPoint& p) {
    if (p.l0 == cplx(0.0, 0.0)) throw ZeroSection("projective point lies on the plus zero locus");
    return p.l1 / p.l0;
}
inline cplx minus_scalar(const PPoint& p) {
    if (p.l1 == cplx(0.0, 0.0)) throw ZeroSection("projective point lies on the minus zero locus");
    return p.l0 / p.l1;
}

// One point of the glued space in either chart: a covector over a leaf
// parameter, written in the pinned fiber-basis coordinates.
struct ChartPoint {
    bool plus = true;
    std::vector<cplx> base;
    VectorXcd cov;
};

inline ChartPoint cstar_action(cplx c, ChartPoint p) {
    if (c == cplx(0.0, 0.0)) throw Error("scale factor must be nonzero");
    p.cov *= (p.plus ? c : cplx(1.0, 0.0) / c);
    return p;
}

// bilinear covector/section contraction in fiber-basis coordinates
inline cplx fiber_pairing(const VectorXcd& cov, const VectorXcd& section) {
    return cov.cwiseProduct(section).sum();
}

struct DHyperplane {
    std::vector<cplx> base;
    VectorXcd fiber_coeff;  // distinguished-section coordinates
    MatrixXcd span;         // (n+1) x n orthonormal basis of the annihilator
};

class TwistorAtlas {
  public:
    Instance inst;
    std::vector<cplx> basepoint;  // plus-side leaf basepoint; minus side uses its conjugate
    double cutoff = 10.0;
    int newton_max = 50;
    double newton_tol = 1e-11;
    double step_tol = 1e-7;

    struct LeafEntry {
        LeafContext ctx;
        VFiberBasis basis;
    };

    explicit TwistorAtlas(Instance inst_, std::vector<cplx> base_pt = {})
        : inst(std::move(inst_)) {
        basepoint = base_pt.empty()
                        ? std::vector<cplx>(static_cast<std::size_t>(inst.n), cplx(0.0, 0.0))
                        : std::move(base_pt);
        Type11Result td = is_type_11(inst.D, inst.domain_radius, inst.grid);
        if (!td.ok)
            throw Type11Violation("instance connection has pure-type curvature, residual " +
                                  std::to_string(td.residual));
        Type11Result tb = is_type_11(inst.L, inst.domain_radius, inst.grid);
        if (!tb.ok)
            throw Type11Violation("instance bundle form has (2,0) curvature, residual " +
                                  std::to_string(tb.residual));
        seed_ = std::make_shared<const LeafSeed>(make_leaf_seed(inst.D, inst.L));
    }

    std::vector<cplx> leaf_basepoint(bool plus) const {
        std::vector<cplx> bp = basepoint;
        if (!plus)
            for (auto& c : bp) c = std::conj(c);
        return bp;
    }

    // leaves are immutable once built; entries are shared so cache eviction
    // cannot invalidate outstanding references
    std::shared_ptr<const LeafEntry> leaf(bool plus, const std::vector<cplx>& param) const {
        std::vector<double> key;
        key.reserve(2 * param.size() + 1);
        key.push_back(plus ? 1.0 : 0.0);
        for (const auto& c : param) {
            key.push_back(c.real());
            key.push_back(c.imag());
        }
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        auto e = std::make_shared<LeafEntry>();
        e->ctx = make_leaf_fast(*seed_, plus, param, inst.domain_radius, inst.grid);
        e->basis = fiber_basis(e->ctx, leaf_basepoint(plus), step_tol);
        std::lock_guard<std::mutex> lock(mu_);
        if (cache_.size() > 4096) cache_.clear();
        auto [it, inserted] = cache_.emplace(std::move(key), std::move(e));
        return it->second;
    }

    VectorXcd eval_row(bool plus, const std::vector<cplx>& param,
                       const std::vector<cplx>& at) const {
        return leaf(plus, param)->basis.fundamental(at).row(0).transpose();
    }

    ChartPoint phi_plus(const std::vector<cplx>& x, const std::vector<cplx>& xbar, cplx l) const {
        return ChartPoint{true, xbar, l * eval_row(true, xbar, x)};
    }
    ChartPoint phi_minus(const std::vector<cplx>& x, const std::vector<cplx>& xbar, cplx l) const {
        return ChartPoint{false, x, l * eval_row(false, x, xbar)};
    }

    // Blow-down inversion: find the opposite-factor point y and scalar l with
    // cov = l * (evaluation row at y).  Damped Newton; the Jacobian comes from
    // the transport equation at the path endpoint.
    std::pair<std::vector<cplx>, cplx> invert(const ChartPoint& p,
                                              const std::vector<cplx>* guess = nullptr) const {
        const int n = inst.n;
        double snorm = p.cov.norm();
        if (snorm < 1e-13) throw ZeroSection("zero covector has no chart preimage");
        if (p.cov.cwiseAbs().maxCoeff() > cutoff)
            throw NotDecomposable("covector outside the chart cutoff");
        auto e = leaf(p.plus, p.base);

        std::vector<cplx> y(static_cast<std::size_t>(n), cplx(0.0, 0.0));
        if (guess) {
            y = *guess;
        } else if (std::abs(p.cov[0]) > 1e-10 * snorm) {
            for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = p.cov[1 + i] / p.cov[0];
        }
        MatrixXcd Phi = e->basis.fundamental(y);
        VectorXcd r = Phi.row(0).transpose();
        cplx l = r.dot(p.cov) / r.squaredNorm();

        double scale = std::max(1.0, snorm);
        VectorXcd F = l * r - p.cov;
        for (int iter = 0; iter < newton_max; ++iter) {
            if (F.norm() <= newton_tol * scale) {
                // polish to the rounding floor; downstream difference quotients
                // through this map need it smooth well below newton_tol
                for (int extra = 0; extra < 2; ++extra) {
                    MatrixXcd Jp(n + 1, n + 1);
                    for (int i = 0; i < n; ++i)
                        Jp.col(i) = -l * (e->ctx.A(i, y) * Phi).row(0).transpose();
                    Jp.col(n) = r;
                    VectorXcd st = Jp.partialPivLu().solve(F);
                    std::vector<cplx> yc = y;
                    for (int i = 0; i < n; ++i) yc[static_cast<std::size_t>(i)] -= st[i];
                    cplx lc = l - st[n];
                    MatrixXcd Phic = e->basis.fundamental(yc);
                    VectorXcd rc = Phic.row(0).transpose();
                    VectorXcd Fc = lc * rc - p.cov;
                    if (Fc.norm() >= F.norm()) break;
                    y = yc;
                    l = lc;
                    Phi = Phic;
                    r = rc;
                    F = Fc;
                }
                if (std::abs(l) < 1e-13) throw NotDecomposable("degenerate scale at solution");
                return {y, l};
            }
            MatrixXcd J(n + 1, n + 1);
            for (int i = 0; i < n; ++i)
                J.col(i) = -l * (e->ctx.A(i, y) * Phi).row(0).transpose();
            J.col(n) = r;
            VectorXcd step = J.partialPivLu().solve(F);
            double t = 1.0;
            double f0 = F.norm();
            while (true) {
                std::vector<cplx> yc = y;
                for (int i = 0; i < n; ++i) yc[static_cast<std::size_t>(i)] -= t * step[i];
                cplx lc = l - t * step[n];
                bool inside = true;
                for (const auto& c : yc)
                    if (std::abs(c) > 1.5 * inst.domain_radius + 1.0) inside = false;
                if (inside) {
                    MatrixXcd Phic = e->basis.fundamental(yc);
                    VectorXcd rc = Phic.row(0).transpose();
                    VectorXcd Fc = lc * rc - p.cov;
                    if (Fc.norm() < f0) {
                        y = yc;
                        l = lc;
                        Phi = Phic;
                        r = rc;
                        F = Fc;
                        break;
                    }
                }
                t *= 0.5;
                if (t < 1e-9)
                    throw NotDecomposable("inversion stalled: point outside the gluing domain");
            }
        }
        throw NotDecomposable("inversion did not converge");
    }

    // glue the two chart domains: invert, dualize the scalar, re-embed
    ChartPoint transition(const ChartPoint& p, const std::vector<cplx>* guess = nullptr) const {
        auto [y, l] = invert(p, guess);
        cplx lstar = cplx(1.0, 0.0) / l;
        return p.plus ? phi_minus(y, p.base, lstar) : phi_plus(p.base, y, lstar);
    }

    // Antiholomorphic involution.  With both leaf trivializations pinned at
    // conjugate basepoints the conjugated fiber basis is the opposite leaf's
    // own basis, so the covector transform is literally -conj.
    ChartPoint real_structure(const ChartPoint& p) const {
        ChartPoint q;
        q.plus = !p.plus;
        q.base.resize(p.base.size());
        for (std::size_t i = 0; i < p.base.size(); ++i) q.base[i] = std::conj(p.base[i]);
        q.cov = -p.cov.conjugate();
        return q;
    }

    // x is the S-coordinate of a real-slice point (x, conj x)
    ChartPoint canonical_line(const std::vector<cplx>& x, cplx lambda) const {
        std::vector<cplx> xb(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) xb[i] = std::conj(x[i]);
        return phi_plus(x, xb, lambda);
    }

    DHyperplane d_hyperplane(bool plus, const std::vector<cplx>& base,
                             const CProjectiveData& D_data) const {
        auto e = leaf(plus, base);
        LineFiber lf = line_fiber(e->ctx, D_data, leaf_basepoint(plus), step_tol);
        DHyperplane H;
        H.base = base;
        H.fiber_coeff = lf.jet_at(leaf_basepoint(plus)).to_vec();
        const int n = inst.n;
        MatrixXcd col = H.fiber_coeff.conjugate();
        Eigen::HouseholderQR<MatrixXcd> qr(col);
        MatrixXcd Q = qr.householderQ() * MatrixXcd::Identity(n + 1, n + 1);
        H.span = Q.rightCols(n);
        return H;
    }

  private:
    std::shared_ptr<const LeafSeed> seed_;
    mutable std::mutex mu_;
    mutable std::map<std::vector<double>, std::shared_ptr<const LeafEntry>> cache_;
};

}  // namespace qfk
