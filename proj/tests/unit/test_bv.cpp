#include <doctest.h>

#include "ntk/bv.hpp"

#include <cmath>

using namespace ntk;

namespace {

GridPtr unit_box(int n) {
    return std::make_shared<PhaseGrid>(Vec3(0, 0, 0), Vec3(1, 1, 1), n,
                                       VelocityLattice::cartesian(Vec3(0, 0, 0), Vec3(1, 1, 1), 1));
}

PhaseField fill(const GridPtr& G, const std::function<double(const Vec3&, const Vec3&)>& f) {
    PhaseField out(G, 1);
    for (int id = 0; id < G->n_valued(); ++id)
        for (int k = 0; k < G->vel().size(); ++k) out.at(0, id, k) = f(G->eval_point(id), G->vel().v(k));
    return out;
}

// Manufactured transport solution and its derivatives.
double mu(double t, const Vec3& x, const Vec3& v) {
    return std::exp(-t) * (1 + 0.3 * x.x() * v.y() + 0.2 * std::sin(x.z() + v.x()) + 0.1 * x.y() * x.y() * v.z());
}
Vec3 mu_x(double t, const Vec3& x, const Vec3& v) {
    return std::exp(-t) * Vec3(0.3 * v.y(), 0.2 * x.y() * v.z(), 0.2 * std::cos(x.z() + v.x()));
}
Vec3 mu_v(double t, const Vec3& x, const Vec3& v) {
    return std::exp(-t) * Vec3(0.2 * std::cos(x.z() + v.x()), 0.3 * x.x(), 0.1 * x.y() * x.y());
}

MixedProblem manufactured(DomainPtr d, const VelocitySpace& V) {
    MixedProblem p;
    p.domain = d;
    p.space = &V;
    p.source = [](double t, const Vec3& x, const Vec3& v) { return -mu(t, x, v) + v.dot(mu_x(t, x, v)); };
    // The in-flow part is whatever the diffuse average of the outgoing
    // trace leaves over.
    const Domain* dom = d.get();
    p.inflow = [dom, &V](double t, const Vec3& x, const Vec3& v) {
        auto m = make_diffuse_measure(V, x, outward_normal(*dom, x));
        return mu(t, x, v) - diffuse_apply(m, [&](const Vec3& w) { return mu(t, x, w); });
    };
    return p;
}

TraceData traces_of(double t, const Vec3& x) {
    TraceData tr;
    tr.value = [=](const Vec3& v) { return mu(t, x, v); };
    tr.grad_x = [=](const Vec3& v) { return mu_x(t, x, v); };
    tr.grad_v = [=](const Vec3& v) { return mu_v(t, x, v); };
    tr.dt = [=](const Vec3& v) { return -mu(t, x, v); };
    return tr;
}

void check_closure(DomainPtr d, const Vec3& x, const Vec3& v) {
    VelocitySpace V(1, 2);
    MixedProblem p = manufactured(d, V);
    const double t = 0.4;
    BoundaryDerivatives b = boundary_derivative_closure(p, traces_of(t, x), t, x, v);
    CHECK(b.d_t == doctest::Approx(-mu(t, x, v)).epsilon(1e-3));
    Vec3 gx = b.grad_x(), ex = mu_x(t, x, v);
    Vec3 gv = b.d_v, ev = mu_v(t, x, v);
    CHECK((gx - ex).norm() <= 1e-3 * (1 + ex.norm()));
    CHECK((gv - ev).norm() <= 1e-3 * (1 + ev.norm()));
}

DomainPtr slab_cube() {
    ImplicitSpec s;
    s.name = "cube";
    s.phi = [](const Vec3& x) { return x.cwiseAbs().maxCoeff() - 1; };
    s.grad = [](const Vec3& x) {
        int a;
        x.cwiseAbs().maxCoeff(&a);
        Vec3 g = Vec3::Zero();
        g[a] = x[a] >= 0 ? 1 : -1;
        return g;
    };
    s.hess = [](const Vec3&) { return Mat3::Zero().eval(); };
    s.bounding_radius = std::sqrt(3.0);
    s.box_lo = Vec3(-1, -1, -1);
    s.box_hi = Vec3(1, 1, 1);
    s.surface.point = [](double u, double w) {
        int f = std::min(5, static_cast<int>(std::floor(u)));
        Vec3 p;
        p[f / 2] = f % 2 ? 1 : -1;
        p[(f / 2 + 1) % 3] = 2 * (u - f) - 1;
        p[(f / 2 + 2) % 3] = 2 * w - 1;
        return p;
    };
    s.surface.area_element = [](double, double) { return 4.0; };
    s.surface.u_lo = 0;
    s.surface.u_hi = 6;
    return make_implicit(s);
}

}  // namespace

TEST_CASE("total variation of simple fields") {
    auto G = unit_box(20);
    CHECK(total_variation(fill(G, [](const Vec3&, const Vec3&) { return 3.0; })) == 0.0);

    PhaseField step = fill(G, [](const Vec3& x, const Vec3&) { return x.x() < 0.5 ? 1.0 : 0.0; });
    CHECK(total_variation(step) == doctest::Approx(1.0).epsilon(1e-12));
    auto axes = total_variation_per_axis(step);
    CHECK(axes[0] == doctest::Approx(1.0).epsilon(1e-12));
    for (int a = 1; a < 6; ++a) CHECK(axes[a] == 0.0);

    // sin(pi x1) rises by 1 and falls by 1; the cell-centered samples miss
    // the ends by O(h).
    for (int n : {20, 40}) {
        auto Gn = unit_box(n);
        double tv = total_variation(fill(Gn, [](const Vec3& x, const Vec3&) { return std::sin(pi * x.x()); }));
        CHECK(std::abs(tv - 2.0) <= 2.0 * pi / n);
        CHECK(tv < 2.0);
    }
    CHECK(l1_norm(step) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("total variation on a spherical velocity lattice") {
    GridPtr G = std::make_shared<PhaseGrid>(Vec3(0, 0, 0), Vec3(1, 1, 1), 4, VelocityLattice::spherical(1, 2, 4, 3, 6));
    // f = |v| varies only in speed: four speed shells, jumps of 0.25 each
    // across faces of area (shell cell volume / radial step).
    PhaseField f = fill(G, [](const Vec3&, const Vec3& v) { return v.norm(); });
    auto axes = total_variation_per_axis(f);
    for (int a = 0; a < 3; ++a) CHECK(axes[a] == 0.0);
    CHECK(axes[3] > 0);
    CHECK(axes[4] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("total variation is linear under scaling and translation") {
    auto G = unit_box(12);
    PhaseField f = fill(G, [](const Vec3& x, const Vec3& v) { return std::cos(3 * x.y()) + x.z() * v.x(); });
    PhaseField g = fill(G, [](const Vec3& x, const Vec3& v) { return -2.5 * (std::cos(3 * x.y()) + x.z() * v.x()) + 7; });
    CHECK(total_variation(g) == doctest::Approx(2.5 * total_variation(f)).epsilon(1e-12));
}

TEST_CASE("closure with no data is zero") {
    VelocitySpace V(1, 2);
    MixedProblem p;
    p.domain = make_ball();
    p.space = &V;
    Vec3 x(0, 0, 1), v(0.3, 0, -1.2);
    BoundaryDerivatives b = boundary_derivative_closure(p, {}, 0.5, x, v);
    CHECK(b.d_t == 0.0);
    CHECK(b.grad_x().norm() == 0.0);
    CHECK(b.d_v.norm() == 0.0);
    CHECK(b.n.isApprox(Vec3(0, 0, 1)));
}

TEST_CASE("closure with in-flow data r = t") {
    VelocitySpace V(1, 2);
    MixedProblem p;
    p.domain = make_ball();
    p.space = &V;
    p.inflow = [](double t, const Vec3&, const Vec3&) { return t; };
    Vec3 x(0, 0, 1), v(0.3, 0, -1.2);
    BoundaryDerivatives b = boundary_derivative_closure(p, {}, 0.5, x, v);
    CHECK(b.d_t == doctest::Approx(1.0));
    CHECK(b.d_tau1 == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(b.d_tau2 == doctest::Approx(0.0).epsilon(1e-9));
    // The equation forces d_n (n.v) = -d_t.
    CHECK(b.d_n == doctest::Approx(1.0 / 1.2));
    // The shift adds -lambda u to the right-hand side.
    BoundaryDerivatives s = boundary_derivative_closure(p, {}, 0.5, x, v, 2.0);
    CHECK(s.d_n == doctest::Approx((1.0 + 2.0 * 0.5) / 1.2));
}

TEST_CASE("closure recovers a manufactured solution") {
    SUBCASE("sphere") {
        check_closure(make_ball(), Vec3(0.6, 0, 0.8), Vec3(-0.9, 0.4, -0.7));
        check_closure(make_ball(), Vec3(0, -1, 0), Vec3(0.2, 1.5, 0.1));
    }
    SUBCASE("flat face") { check_closure(slab_cube(), Vec3(0.2, -0.3, 1), Vec3(0.5, 0.1, -1.1)); }
}

TEST_CASE("closure rejects grazing and outgoing states") {
    VelocitySpace V(1, 2);
    MixedProblem p;
    p.domain = make_ball();
    p.space = &V;
    CHECK_THROWS_AS(boundary_derivative_closure(p, {}, 0, Vec3(0, 0, 1), Vec3(1.5, 0, 0)), GrazingNormal);
    CHECK_THROWS_AS(boundary_derivative_closure(p, {}, 0, Vec3(0, 0, 1), Vec3(0, 0, 1.5)), InvalidState);
}

TEST_CASE("smooth fields carry no jump flags") {
    VelocitySpace V(1, 2);
    GridSpec s;
    s.h = 0.2;
    s.n_t = 1;
    auto G = std::make_shared<PhaseGrid>(make_ball(), s, VelocityLattice::spherical(1, 2, 2, 3, 6));
    PhaseField f = fill(G, [](const Vec3& x, const Vec3& v) { return 1 + 0.1 * x.x() + 0.05 * v.y(); });
    CHECK(detect_discontinuity(f, *G->domain()).empty());
}

TEST_CASE("exit map jumps where the line grazes the torus hole") {
    auto torus = make_torus();
    // The line x = (0.5, s, 0) touches the hole at s = 0 along the equator,
    // a concave direction. Shifting x1 by 0.02 moves it off the tangent.
    PhaseState s{Vec3(0.52, 0.5, 0), Vec3(0, 1, 0)};
    PhaseState dir{Vec3(-0.01, 0, 0), Vec3::Zero()};
    CHECK(discontinuity_distance(*torus, s, dir, 5) == doctest::Approx(2.0).epsilon(1e-3));
    // The ball has no concave grazing, so its exit map is continuous.
    auto ball = make_ball();
    CHECK(std::isinf(discontinuity_distance(*ball, {Vec3(0.2, 0, 0), Vec3(0, 1, 0)}, dir, 5)));

    std::vector<JumpCell> cells(3);
    cells[0].distance_cells = 1.0;
    cells[1].distance_cells = 3.0;
    cells[2].distance_cells = ntk::nan;
    CHECK(colocated_fraction(cells) == doctest::Approx(0.5));
}

namespace {

struct SchemeSetup {
    DomainPtr d = make_ball();
    std::shared_ptr<const BoundaryAtlas> atlas = std::make_shared<const BoundaryAtlas>(build_atlas(d, 0.3));
    VelocitySpace V{1, 2, 8};
    Material mat = gaussian_material(0.5, 0.3, V);
    GridPtr grid;
    MixedProblem p;

    explicit SchemeSetup(double h) {
        GridSpec s;
        s.h = h;
        s.n_t = 3;
        s.T = 0.6;
        grid = std::make_shared<PhaseGrid>(d, s, VelocityLattice::spherical(1, 2, 1, 2, 4));
        p.domain = d;
        p.space = &V;
        p.material = &mat;
        p.initial = [](const Vec3& x, const Vec3& v) { return 1 + 0.5 * std::sin(x.x() + v.z()); };
        p.inflow = [](double t, const Vec3& x, const Vec3&) { return 0.5 + 0.25 * std::cos(t + x.y()); };
        p.source = [](double t, const Vec3& x, const Vec3&) { return 0.2 * (1 + t * x.z() * x.z()); };
    }

    CutoffField cutoff(double eps) const {
        CutoffParams prm;
        prm.epsilon = eps;
        prm.points_per_axis = 3;
        return CutoffField(atlas, prm);
    }
};

}  // namespace

TEST_CASE("scheme refuses a cut-off that is positive at grazing feet") {
    SchemeSetup S(0.5);
    CutoffField chi = S.cutoff(0.02);
    chi.clear_pieces();
    CHECK_THROWS_AS(solve_bv_scheme(S.p, chi, S.grid), SingularLeak);
}

TEST_CASE("a saturated cover removes everything") {
    SchemeSetup S(0.5);
    // Every velocity lies in the cone at this scale on the unit sphere.
    BVSchemeResult r = solve_bv_scheme(S.p, S.cutoff(0.04), S.grid);
    CHECK(r.converged);
    CHECK(r.sup_norm == 0.0);
    CHECK(r.derivative_l1_total == 0.0);
    CHECK(r.cut_nodes == S.grid->n_nodes());
}

TEST_CASE("scheme is linear in the data and contracts") {
    SchemeSetup S(0.5);
    CutoffField chi = S.cutoff(0.02);
    BVSchemeResult a = solve_bv_scheme(S.p, chi, S.grid);
    REQUIRE(a.converged);
    CHECK(a.sup_norm > 0);
    CHECK(a.cut_nodes < S.grid->n_nodes());
    for (std::size_t i = 2; i < a.history.size(); ++i) CHECK(a.history[i] < a.history[i - 1]);
    REQUIRE(a.traces.size() == 3u);
    CHECK(a.traces.back().m == static_cast<int>(a.history.size()));

    MixedProblem q = S.p;
    auto f0 = S.p.initial;
    auto r0 = S.p.inflow;
    auto s0 = S.p.source;
    q.initial = [f0](const Vec3& x, const Vec3& v) { return -3 * f0(x, v); };
    q.inflow = [r0](double t, const Vec3& x, const Vec3& v) { return -3 * r0(t, x, v); };
    q.source = [s0](double t, const Vec3& x, const Vec3& v) { return -3 * s0(t, x, v); };
    BVSchemeResult b = solve_bv_scheme(q, chi, S.grid);
    CHECK(b.sup_norm == doctest::Approx(3 * a.sup_norm).epsilon(1e-8));
    CHECK(b.derivative_l1_total == doctest::Approx(3 * a.derivative_l1_total).epsilon(1e-6));
    CHECK(b.report.tv_estimate == doctest::Approx(3 * a.report.tv_estimate).epsilon(1e-8));
}
