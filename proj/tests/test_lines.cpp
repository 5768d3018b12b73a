#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "qfk/lines.hpp"

using namespace qfk;

namespace {

struct Gen {
    std::mt19937 eng;
    explicit Gen(unsigned seed) : eng(seed) {}
    double real(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(eng);
    }
    cplx scalar(double r) { return {real(-r, r), real(-r, r)}; }
    std::vector<cplx> point(int n, double r) {
        std::vector<cplx> p(static_cast<std::size_t>(n));
        for (auto& c : p) c = scalar(r);
        return p;
    }
    LineAnsatz ansatz(int n, double r) {
        LineAnsatz L = LineAnsatz::zero(n);
        for (auto& c : L.a)
            for (int i = 0; i < c.size(); ++i) c[i] = scalar(r);
        for (auto& c : L.b)
            for (int i = 0; i < c.size(); ++i) c[i] = scalar(r);
        return L;
    }
};

const TwistorAtlas& flat_atlas() {
    static TwistorAtlas A(flat_instance());
    return A;
}

const TwistorAtlas& fs_atlas() {
    static TwistorAtlas B(fs_instance());
    return B;
}

// exact closed curves of the affine-leaf instance
LineAnsatz flat_family(const std::vector<cplx>& c, const std::vector<cplx>& d, cplx beta) {
    const int n = static_cast<int>(c.size());
    LineAnsatz L = LineAnsatz::zero(n);
    for (int i = 0; i < n; ++i) {
        L.a[0][i] = c[static_cast<std::size_t>(i)];
        L.a[1][i] = d[static_cast<std::size_t>(i)];
        L.b[0][i + 1] = -beta * std::conj(d[static_cast<std::size_t>(i)]);
        L.b[1][i + 1] = beta * std::conj(c[static_cast<std::size_t>(i)]);
    }
    L.b[1][0] = beta;
    return L;
}

MatrixXd expected_structure_origin() {
    MatrixXd e = MatrixXd::Zero(8, 8);
    auto put2 = [&](int o, double sgn) {
        e(o, o + 1) = sgn;
        e(o + 1, o) = -sgn;
    };
    put2(0, 1.0);
    put2(2, 1.0);
    put2(4, -1.0);
    put2(6, -1.0);
    return e;
}

double max_abs_cplx(const LineAnsatz& p, const LineAnsatz& q) {
    double m = 0.0;
    for (std::size_t d = 0; d < p.a.size(); ++d)
        m = std::max(m, (p.a[d] - q.a[d]).cwiseAbs().maxCoeff());
    for (std::size_t d = 0; d < p.b.size(); ++d)
        m = std::max(m, (p.b[d] - q.b[d]).cwiseAbs().maxCoeff());
    return m;
}

}  // namespace

TEST_CASE("coefficient packing round-trips losslessly") {
    Gen g(71);
    for (int trial = 0; trial < 5; ++trial) {
        LineAnsatz L = g.ansatz(2, 0.8);
        VectorXd v = L.pack();
        REQUIRE(v.size() == L.real_dim());
        LineAnsatz M = LineAnsatz::unpack(v, 2);
        REQUIRE(max_abs_cplx(L, M) == 0.0);
        REQUIRE((M.pack() - v).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("conjugate representation is an involution matching the real structure") {
    Gen g(72);
    LineAnsatz L = g.ansatz(2, 0.5);
    REQUIRE(max_abs_cplx(L.conjugate_rep().conjugate_rep(), L) == 0.0);

    const TwistorAtlas& A = flat_atlas();
    LineAnsatz q = L.conjugate_rep();
    for (int trial = 0; trial < 6; ++trial) {
        cplx mu = g.scalar(0.9);
        ChartPoint lhs = q.chart_at(mu);
        ChartPoint img = A.real_structure(L.chart_at(-std::conj(mu)));
        REQUIRE_FALSE(img.plus);
        double d = (lhs.cov - img.cov).cwiseAbs().maxCoeff();
        for (int i = 0; i < 2; ++i)
            d = std::max(d, std::abs(lhs.base[static_cast<std::size_t>(i)] - img.base[static_cast<std::size_t>(i)]));
        REQUIRE(d < 1e-14);
    }
}

TEST_CASE("parameter rotation composes and commutes with the chart projection") {
    Gen g(73);
    LineAnsatz L = g.ansatz(2, 0.6);
    LineAnsatz two = L.rotated(0.4).rotated(0.9);
    LineAnsatz one = L.rotated(1.3);
    REQUIRE(max_abs_cplx(two, one) < 1e-15);

    // the degree-one fiber coefficient is the phase reference and must not move
    REQUIRE((L.rotated(2.1).b[1] - L.b[1]).cwiseAbs().maxCoeff() == 0.0);

    const double t = 0.7;
    VectorXd lhs = m_coords(L.rotated(t));
    VectorXd rhs = s1_dphi(2, t) * m_coords(L);
    REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() < 1e-15);

    MatrixXd D = s1_dphi(2, t);
    REQUIRE((D * D.transpose() - MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("affine instance carries an exact two-parameter curve family") {
    Gen g(74);
    const TwistorAtlas& A = flat_atlas();
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<cplx> c = g.point(2, 0.25);
        std::vector<cplx> d = g.point(2, 0.1);
        cplx beta = std::polar(1.0, g.real(-3.0, 3.0));
        LineAnsatz fam = flat_family(c, d, beta);
        REQUIRE(matching_residual(A, fam) < 1e-12);
        REQUIRE(reality_residual(A, fam) < 1e-12);
    }
}

TEST_CASE("canonical curves close through both charts") {
    Gen g(75);
    for (int trial = 0; trial < 3; ++trial) {
        std::vector<cplx> x = g.point(2, 0.3);
        LineAnsatz can = canonical_ansatz(flat_atlas(), x);
        REQUIRE(matching_residual(flat_atlas(), can) < 1e-13);
        REQUIRE(reality_residual(flat_atlas(), can) < 1e-13);

        std::vector<cplx> y = g.point(2, 0.2);
        LineAnsatz canf = canonical_ansatz(fs_atlas(), y);
        REQUIRE(matching_residual(fs_atlas(), canf) < 1e-13);
        REQUIRE(reality_residual(fs_atlas(), canf) < 1e-13);
    }
}

TEST_CASE("coefficient perturbations break closedness measurably") {
    std::vector<cplx> x = {cplx(0.21, -0.08), cplx(-0.03, 0.14)};
    LineAnsatz can = canonical_ansatz(fs_atlas(), x);
    LineAnsatz bumped = can;
    bumped.a[1][0] += cplx(1e-2, 0.0);
    REQUIRE(matching_residual(fs_atlas(), bumped) > 1e-4);

    LineAnsatz fam = flat_family({cplx(0.2, 0.1), cplx(-0.1, 0.05)},
                                 {cplx(0.08, -0.03), cplx(0.02, 0.06)}, cplx(1.0, 0.0));
    fam.b[2][1] += cplx(0.0, 1e-2);
    REQUIRE(matching_residual(flat_atlas(), fam) > 1e-4);
}

TEST_CASE("rotating a closed curve keeps it closed") {
    LineAnsatz fam = flat_family({cplx(0.2, 0.1), cplx(-0.1, 0.05)},
                                 {cplx(0.08, -0.03), cplx(0.02, 0.06)}, cplx(1.0, 0.0));
    for (double t : {0.3, 1.2, M_PI / 2.0})
        REQUIRE(matching_residual(flat_atlas(), fam.rotated(t)) < 1e-12);

    std::vector<cplx> x = {cplx(0.21, -0.08), cplx(-0.03, 0.14)};
    LineAnsatz can = canonical_ansatz(fs_atlas(), x);
    REQUIRE(matching_residual(fs_atlas(), can.rotated(0.9)) < 1e-12);
}

TEST_CASE("solving from an exact curve is a fixed point") {
    LineAnsatz fam = flat_family({cplx(0.2, 0.1), cplx(-0.1, 0.05)},
                                 {cplx(0.08, -0.03), cplx(0.02, 0.06)}, cplx(1.0, 0.0));
    VectorXd target = m_coords(fam);
    RealTwistorLine L = solve_line(flat_atlas(), fam, &target);
    REQUIRE(L.iterations == 0);
    REQUIRE(L.matching_res < 1e-10);
    REQUIRE(max_abs_cplx(L.line, fam) == 0.0);
}

TEST_CASE("chart-targeted solve recovers the affine family") {
    std::vector<cplx> c = {cplx(0.2, 0.1), cplx(-0.1, 0.05)};
    std::vector<cplx> d = {cplx(0.08, -0.03), cplx(0.02, 0.06)};
    VectorXd target = m_target(c, d);
    RealTwistorLine L = solve_at(flat_atlas(), target);
    REQUIRE(L.matching_res < 1e-9);
    REQUIRE(L.reality_res < 1e-9);
    REQUIRE(L.iterations <= 3);

    // the pins select the family member with unit real phase
    LineAnsatz fam = flat_family(c, d, cplx(1.0, 0.0));
    REQUIRE(max_abs_cplx(L.line, fam) < 1e-7);
    REQUIRE((m_coords(L.line) - target).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("displaced curve solve converges on the curved instance") {
    std::vector<cplx> xf = {cplx(0.21, -0.08), cplx(-0.03, 0.14)};
    std::vector<cplx> df = {cplx(0.0012, -0.0009), cplx(0.0006, 0.0014)};
    VectorXd target = m_target({std::conj(xf[0]), std::conj(xf[1])}, df);
    RealTwistorLine L = solve_at(fs_atlas(), target);
    REQUIRE(L.matching_res < 1e-9);
    REQUIRE(L.reality_res < 1e-9);
    REQUIRE((m_coords(L.line) - target).cwiseAbs().maxCoeff() < 1e-10);

    // deterministic: the same call reproduces the same coefficients
    RealTwistorLine M = solve_at(fs_atlas(), target);
    REQUIRE(max_abs_cplx(L.line, M.line) == 0.0);
}

TEST_CASE("solves past the ansatz floor report divergence") {
    std::vector<cplx> xf = {cplx(0.21, -0.08), cplx(-0.03, 0.14)};
    std::vector<cplx> df = {cplx(0.05, -0.02), cplx(0.015, 0.04)};
    VectorXd target = m_target({std::conj(xf[0]), std::conj(xf[1])}, df);
    REQUIRE_THROWS_AS(solve_at(fs_atlas(), target), NewtonDivergence);

    LineSolveOptions be;
    be.best_effort = true;
    be.max_iter = 40;
    RealTwistorLine L = solve_at(fs_atlas(), target, be);
    REQUIRE(L.matching_res > 1e-6);
    REQUIRE(L.matching_res < 1e-4);
}

TEST_CASE("stepped continuation reaches distant chart targets") {
    std::vector<cplx> c = {cplx(0.15, 0.05), cplx(-0.05, 0.1)};
    std::vector<cplx> d = {cplx(0.22, -0.1), cplx(-0.12, 0.2)};
    VectorXd target = m_target(c, d);
    RealTwistorLine L = solve_at_stepped(flat_atlas(), target, 10);
    REQUIRE(L.matching_res < 1e-9);
    REQUIRE((m_coords(L.line) - target).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("linearized closedness has a rank-4n kernel") {
    std::vector<cplx> c = {cplx(0.2, 0.1), cplx(-0.1, 0.05)};
    std::vector<cplx> d = {cplx(0.08, -0.03), cplx(0.02, 0.06)};
    RealTwistorLine L = solve_at(flat_atlas(), m_target(c, d));
    TangentFrame F = tangent_frame(flat_atlas(), L.line);
    REQUIRE(F.kernel.cols() == 8);
    REQUIRE(F.gap > 1e6);
    REQUIRE(F.svals[F.svals.size() - 8] < 1e-9);

    std::vector<cplx> y = {cplx(0.09, -0.03), cplx(0.05, 0.06)};
    TangentFrame Ff = tangent_frame(fs_atlas(), canonical_ansatz(fs_atlas(), y));
    REQUIRE(Ff.kernel.cols() == 8);
    REQUIRE(Ff.gap > 1e6);
}

TEST_CASE("frames on stalled iterates fail the rank gate") {
    std::vector<cplx> xf = {cplx(0.21, -0.08), cplx(-0.03, 0.14)};
    std::vector<cplx> df = {cplx(0.05, -0.02), cplx(0.015, 0.04)};
    LineSolveOptions be;
    be.best_effort = true;
    be.max_iter = 40;
    RealTwistorLine L = solve_at(fs_atlas(), m_target({std::conj(xf[0]), std::conj(xf[1])}, df), be);
    REQUIRE_THROWS_AS(tangent_frame(fs_atlas(), L.line), RankError);
}

TEST_CASE("slice variations lie inside the curve-family kernel") {
    auto containment = [](const TwistorAtlas& atlas, const std::vector<cplx>& x,
                          bool analytic) {
        LineAnsatz can = canonical_ansatz(atlas, x);
        TangentFrame F = tangent_frame(atlas, can);

        // phase gauge direction at the canonical curve
        LineAnsatz phi = LineAnsatz::zero(2);
        for (std::size_t dd = 0; dd < phi.b.size(); ++dd) phi.b[dd] = cplx(0.0, 1.0) * can.b[dd];
        VectorXd vphi = phi.pack();
        const VectorXcd ref = can.b[1];

        double worst = 0.0;
        for (int dir = 0; dir < 4; ++dir) {
            cplx dx = (dir % 2 == 0) ? cplx(1.0, 0.0) : cplx(0.0, 1.0);
            int comp = dir / 2;
            LineAnsatz w = LineAnsatz::zero(2);
            w.a[0][comp] = std::conj(dx);
            if (analytic) {
                // the linear fiber coefficient conjugates the constant base one
                w.b[1][comp + 1] = dx;
            } else {
                const double h = 3e-3;
                auto at = [&](double s) {
                    std::vector<cplx> xs = x;
                    xs[static_cast<std::size_t>(comp)] += s * dx;
                    return canonical_ansatz(atlas, xs);
                };
                LineAnsatz p1 = at(h), m1 = at(-h), p2 = at(2 * h), m2 = at(-2 * h);
                for (std::size_t dd = 0; dd < w.b.size(); ++dd)
                    w.b[dd] = (8.0 * (p1.b[dd] - m1.b[dd]) - (p2.b[dd] - m2.b[dd])) / (12.0 * h);
                for (std::size_t dd = 1; dd < w.a.size(); ++dd)
                    w.a[dd] = (8.0 * (p1.a[dd] - m1.a[dd]) - (p2.a[dd] - m2.a[dd])) / (12.0 * h);
            }
            VectorXd v = w.pack();
            const double pin_w = ref.dot(w.b[1]).imag();
            const double pin_phi = ref.dot(phi.b[1]).imag();
            v -= (pin_w / pin_phi) * vphi;
            VectorXd resid = v - F.kernel * (F.kernel.transpose() * v);
            worst = std::max(worst, resid.norm() / v.norm());
        }
        return worst;
    };

    std::vector<cplx> x = {cplx(0.18, -0.07), cplx(-0.04, 0.12)};
    REQUIRE(containment(flat_atlas(), x, true) < 1e-8);
    REQUIRE(containment(fs_atlas(), x, false) < 1e-8);
}

TEST_CASE("pointwise fiber structures form a quaternionic sphere") {
    Gen g(76);
    std::vector<cplx> c = {cplx(0.2, 0.1), cplx(-0.1, 0.05)};
    std::vector<cplx> d = {cplx(0.08, -0.03), cplx(0.02, 0.06)};
    RealTwistorLine L = solve_at(flat_atlas(), m_target(c, d));
    TangentFrame F = tangent_frame(flat_atlas(), L.line);

    MatrixXd id = MatrixXd::Identity(8, 8);
    for (int trial = 0; trial < 4; ++trial) {
        SpherePoint s{true, g.scalar(0.6)};
        MatrixXd I = complex_structure_at(F, s);
        REQUIRE((I * I + id).cwiseAbs().maxCoeff() < 1e-8);
        MatrixXd Ia = complex_structure_at(F, antipode(s));
        REQUIRE((Ia + I).cwiseAbs().maxCoeff() < 1e-6);
    }

    QuaternionTriple T = quaternion_frame(F);
    REQUIRE(T.relation_residual < 1e-6);
    for (int trial = 0; trial < 5; ++trial) {
        MatrixXd I = complex_structure_at(F, SpherePoint{true, g.scalar(0.8)});
        REQUIRE(span_residual(T, I) < 1e-6);
    }

    TangentFrame Fc = tangent_frame(fs_atlas(), canonical_ansatz(fs_atlas(), c));
    QuaternionTriple Tc = quaternion_frame(Fc);
    REQUIRE(Tc.relation_residual < 1e-6);
}

TEST_CASE("canonical curve structures take the constant normal form") {
    std::vector<cplx> x = {cplx(0.31, -0.12), cplx(-0.05, 0.22)};
    TangentFrame F = tangent_frame(flat_atlas(), canonical_ansatz(flat_atlas(), x));
    MatrixXd expect = expected_structure_origin();

    MatrixXd I0 = complex_structure_at(F, SpherePoint{true, cplx(0.0, 0.0)});
    REQUIRE((I0 - expect).cwiseAbs().maxCoeff() < 1e-10);

    MatrixXd I1 = complex_structure_at(F, SpherePoint{true, cplx(1.0, 0.0)});
    MatrixXd K = I0 * I1;
    MatrixXd expectK = MatrixXd::Zero(8, 8);
    expectK.block(0, 4, 4, 4) = -MatrixXd::Identity(4, 4);
    expectK.block(4, 0, 4, 4) = MatrixXd::Identity(4, 4);
    REQUIRE((K - expectK).cwiseAbs().maxCoeff() < 1e-10);

    // the curved instance agrees at its canonical curves
    TangentFrame Ff = tangent_frame(fs_atlas(), canonical_ansatz(fs_atlas(), x));
    MatrixXd I0f = complex_structure_at(Ff, SpherePoint{true, cplx(0.0, 0.0)});
    REQUIRE((I0f - expect).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("divisor parameter sits at the gauge anchor for the instance's own connection") {
    std::vector<cplx> c = {cplx(0.2, 0.1), cplx(-0.1, 0.05)};
    std::vector<cplx> d = {cplx(0.08, -0.03), cplx(0.02, 0.06)};
    RealTwistorLine L = solve_at(flat_atlas(), m_target(c, d));
    SpherePoint r = divisor_parameter(flat_atlas(), flat_instance().D, L.line);
    REQUIRE(r.plus);
    REQUIRE(std::abs(r.t) < 1e-10);

    std::vector<cplx> xf = {cplx(0.21, -0.08), cplx(-0.03, 0.14)};
    std::vector<cplx> df = {cplx(0.0012, -0.0009), cplx(0.0006, 0.0014)};
    RealTwistorLine Lf = solve_at(fs_atlas(), m_target({std::conj(xf[0]), std::conj(xf[1])}, df));
    SpherePoint rf = divisor_parameter(fs_atlas(), fs_instance().D, Lf.line);
    REQUIRE(std::abs(rf.t) < 1e-8);

    // a different admissible connection moves the divisor off the anchor
    Instance fs2 = with_representative(fs_instance(), fs_second_rep());
    SpherePoint r2 = divisor_parameter(fs_atlas(), fs2.D, Lf.line);
    REQUIRE(std::abs(r2.t) > 1e-5);

    REQUIRE_THROWS_AS(divisor_parameter(fs_atlas(), fs2.D, Lf.line, 1e-14, 1), IntersectionError);
}

TEST_CASE("divisor structure extends the slice structure and distinguishes connections") {
    std::vector<cplx> xf = {cplx(0.09, -0.03), cplx(0.05, 0.06)};
    VectorXd on_s = m_target({std::conj(xf[0]), std::conj(xf[1])}, {cplx(0, 0), cplx(0, 0)});

    JDSample s = jd_at(fs_atlas(), fs_instance().D, on_s, {});
    REQUIRE(std::abs(s.root.t) < 1e-9);
    REQUIRE((s.J - expected_structure_origin()).cwiseAbs().maxCoeff() < 1e-8);
    REQUIRE((s.J * s.J + MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-6);

    Instance fs2 = with_representative(fs_instance(), fs_second_rep());
    JDSample s2 = jd_at(fs_atlas(), fs2.D, on_s, {});
    REQUIRE((s.J - s2.J).cwiseAbs().maxCoeff() < 1e-10);

    VectorXd off_s(8);
    off_s << 0.09, -0.03, 0.05, 0.06, 0.009, -0.005, 0.006, 0.005;
    JDOptions loose;
    loose.solve.tol = 5e-7;
    JDSample t1 = jd_at(fs_atlas(), fs_instance().D, off_s, loose);
    JDSample t2 = jd_at(fs_atlas(), fs2.D, off_s, loose);
    REQUIRE((t1.J - t2.J).cwiseAbs().maxCoeff() > 1e-3);
    REQUIRE((t1.J * t1.J + MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-6);
    REQUIRE((t2.J * t2.J + MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-6);

    JDSample t1again = jd_at(fs_atlas(), fs_instance().D, off_s, loose);
    REQUIRE((t1.J - t1again.J).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("divisor structure is circle equivariant") {
    std::vector<cplx> xf = {cplx(0.21, -0.08), cplx(-0.03, 0.14)};
    VectorXd canonical = m_target({std::conj(xf[0]), std::conj(xf[1])}, {cplx(0, 0), cplx(0, 0)});
    REQUIRE(s1_invariance_check(fs_atlas(), fs_instance().D, canonical, 0.0, {}) == 0.0);
    REQUIRE(s1_invariance_check(fs_atlas(), fs_instance().D, canonical, 1.1, {}) < 1e-8);

    std::vector<cplx> df = {cplx(0.0012, -0.0009), cplx(0.0006, 0.0014)};
    VectorXd displaced = m_target({std::conj(xf[0]), std::conj(xf[1])}, df);
    REQUIRE(s1_invariance_check(fs_atlas(), fs_instance().D, displaced, M_PI / 3.0, {}) < 1e-5);
    REQUIRE(s1_invariance_check(fs_atlas(), fs_instance().D, displaced, M_PI / 2.0, {}) < 1e-5);
}

TEST_CASE("divisor structure fields are integrable") {
    VectorXd origin = VectorXd::Zero(8);
    REQUIRE(jd_nijenhuis(flat_atlas(), flat_instance().D, origin, 1e-3, {}) < 1e-7);

    VectorXd y(8);
    y << 0.09, -0.03, 0.05, 0.06, 0.0, 0.0, 0.0, 0.0;
    REQUIRE(jd_nijenhuis(fs_atlas(), fs_instance().D, y, 1e-3, {}) < 1e-4);
}

TEST_CASE("non-integrable fields and broken stencils are detected") {
    // rotate the constant structure toward an anticommuting partner with a
    // position-dependent angle: pointwise square root of minus one,
    // nonvanishing torsion
    MatrixXd J0 = expected_structure_origin();
    MatrixXd K = MatrixXd::Zero(8, 8);
    K.block(0, 4, 4, 4) = -MatrixXd::Identity(4, 4);
    K.block(4, 0, 4, 4) = MatrixXd::Identity(4, 4);
    auto field = [&](const VectorXd& u) {
        double t = u[1];
        return MatrixXd(((1 - t * t) * J0 + 2 * t * K) / (1 + t * t));
    };
    VectorXd u0(8);
    u0 << 0.3, 0.4, 0.2, -0.3, 0.1, 0.2, -0.1, 0.3;
    MatrixXd C = field(u0);
    REQUIRE((C * C + MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(nijenhuis(field, u0, 1e-3) > 1e-2);

    VectorXd far = VectorXd::Zero(8);
    far[0] = 3.0;
    REQUIRE_THROWS_AS(jd_nijenhuis(flat_atlas(), flat_instance().D, far, 1e-3, {}), GridError);
}

TEST_CASE("degree escalation flags truncating ansatz degrees") {
    VectorXd flat_target(8);
    flat_target << 0.2, 0.1, -0.1, 0.05, 0.08, -0.03, 0.02, 0.06;
    EscalationReport ra = degree_escalation_check(flat_atlas(), flat_target);
    REQUIRE(ra.adequate);

    std::vector<cplx> xf = {cplx(0.21, -0.08), cplx(-0.03, 0.14)};
    std::vector<cplx> df = {cplx(0.05, -0.02), cplx(0.015, 0.04)};
    LineSolveOptions be;
    be.best_effort = true;
    be.max_iter = 40;
    EscalationReport rb =
        degree_escalation_check(fs_atlas(), m_target({std::conj(xf[0]), std::conj(xf[1])}, df), be);
    REQUIRE_FALSE(rb.adequate);
    REQUIRE(rb.res_up < rb.res_base / 50.0);
}
