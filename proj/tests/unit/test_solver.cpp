#include <doctest.h>

#include "ntk/solver.hpp"

#include <algorithm>
#include <cmath>

using namespace ntk;

namespace {

GridPtr grid_for(DomainPtr d, double h = 0.3, int n_t = 4, double T = 1.0) {
    GridSpec s;
    s.h = h;
    s.n_t = n_t;
    s.T = T;
    return std::make_shared<PhaseGrid>(d, s, VelocityLattice::spherical(1, 2, 2, 3, 6));
}

MixedProblem smooth_problem(DomainPtr d, const VelocitySpace& V, const Material& m) {
    MixedProblem p;
    p.domain = std::move(d);
    p.space = &V;
    p.material = &m;
    p.T = 1.0;
    p.initial = [](const Vec3& x, const Vec3& v) { return 1 + 0.5 * std::sin(x.x() + v.z()); };
    p.inflow = [](double t, const Vec3& x, const Vec3&) { return 0.5 + 0.25 * std::cos(t + x.y()); };
    p.source = [](double t, const Vec3& x, const Vec3&) { return 0.2 * (1 + t * x.z() * x.z()); };
    return p;
}

}  // namespace

TEST_CASE("zero data is a fixed point after one iteration") {
    VelocitySpace V(1, 2);
    Material m = gaussian_material(0.5, 0.3, V);
    MixedProblem p;
    p.domain = make_ball();
    p.space = &V;
    p.material = &m;
    MixedSolver S(p, grid_for(p.domain));
    auto s1 = S.iterate_once(S.start(4));
    CHECK(s1.field.sup_norm() == 0.0);
    CHECK(s1.diff_history.back() == 0.0);
}

TEST_CASE("without collisions and reflection the map is constant after one step") {
    VelocitySpace V(1, 2);
    Material m = constant_material(0, 0, V);
    auto p = smooth_problem(make_torus(), V, m);
    MixedSolver S(p, grid_for(p.domain));
    ConvergenceReport rep;
    S.solve_reduced(1, 1e-12, 5, &rep);
    REQUIRE(rep.history.size() == 2);
    CHECK(rep.history[1] == 0.0);
}

TEST_CASE("j = 1 reproduces the pure in-flow solution") {
    VelocitySpace V(1, 2);
    Material m = constant_material(0, 0, V);
    auto p = smooth_problem(make_peanut(), V, m);
    auto G = grid_for(p.domain);
    MixedSolver S(p, G);
    PhaseField u = S.unshift(S.solve_reduced(1, 1e-12, 5));
    InflowProblem ip;
    ip.domain = p.domain;
    ip.lambda = 0;
    ip.T = 1;
    ip.initial = p.initial;
    ip.inflow = p.inflow;
    ip.source = p.source;
    for (int m_ : {1, 2, 4}) {
        auto ref = solve_inflow(ip, G, G->times()[m_]);
        double worst = 0;
        for (int id = 0; id < G->n_valued(); ++id)
            for (int k = 0; k < G->vel().size(); ++k)
                worst = std::max(worst, std::abs(u.at(m_, id, k) - ref.at(0, id, k)));
        CHECK(worst < 1e-10);
    }
}

TEST_CASE("constants are reproduced when the in-flow term vanishes") {
    VelocitySpace V(1, 2);
    Material m = constant_material(0, 0, V);
    MixedProblem p;
    p.domain = make_ball();
    p.space = &V;
    p.material = &m;
    p.initial = [](const Vec3&, const Vec3&) { return 2.5; };
    MixedSolver S(p, grid_for(p.domain, 0.3, 4, 1.0));
    auto sol = S.solve_full({2, 4, 8, 16}, 1e-12);
    double worst = 0;
    for (double x : sol.u.values()) worst = std::max(worst, std::abs(x - 2.5));
    CHECK(worst < 1e-9);
}

TEST_CASE("default lambda and rejection of lambda below the threshold") {
    VelocitySpace V(1, 2);
    Material m = gaussian_material(0.5, 0.3, V);
    MixedProblem p;
    p.domain = make_ball();
    p.space = &V;
    p.material = &m;
    CHECK(p.effective_lambda() == doctest::Approx(1.5 * (1 + m.M_a + m.M_b)));
    p.lambda = p.lambda0();
    CHECK_THROWS_AS(MixedSolver(p, grid_for(p.domain)), ConfigError);
}

TEST_CASE("contraction, reduction order in 1/j and shift equivalence") {
    VelocitySpace V(1, 2);
    Material m = gaussian_material(0.5, 0.3, V);
    auto p = smooth_problem(make_ball(), V, m);
    auto G = grid_for(p.domain);
    MixedSolver S(p, G);
    const double tol = 1e-11;

    ConvergenceReport rep;
    PhaseField U10 = S.solve_reduced(10, tol, 400, &rep);
    CHECK(rep.converged);
    CHECK(rep.eta_observed < 1.0);
    PhaseField U100 = S.solve_reduced(100, tol, 400);
    auto full = S.solve_full({2, 4, 8, 16}, tol);
    for (const auto& r : full.reports) {
        CHECK(r.converged);
        CHECK(r.eta_observed < 1.0);
    }
    double d10 = U10.sup_diff(full.shifted), d100 = U100.sup_diff(full.shifted);
    MESSAGE("|U_10 - U_inf| = " << d10 << ", |U_100 - U_inf| = " << d100);
    CHECK(d10 / d100 > 5.0);
    CHECK(d10 / d100 < 20.0);

    auto q = p;
    q.lambda = 1.3 * S.lambda();
    MixedSolver S2(q, G);
    auto full2 = S2.solve_full({2, 4, 8, 16}, tol);
    // The stopping rule bounds U-differences; the physical gap carries the
    // factor exp(lambda T).
    double scale = std::exp(q.lambda * p.T);
    CHECK(full.u.sup_diff(full2.u) <= 10 * tol * scale);

    CHECK(full.bound_constant > 0);
    CHECK(full.u.sup_norm() <= full.bound_constant * full.data.total() * (1 + 1e-12));
}

TEST_CASE("monotone in the data") {
    VelocitySpace V(1, 2);
    Material m = gaussian_material(0.4, 0.2, V);
    auto lo = smooth_problem(make_torus(), V, m);
    auto hi = lo;
    hi.inflow = [](double t, const Vec3& x, const Vec3&) { return 0.9 + 0.25 * std::cos(t + x.y()); };
    hi.source = [](double t, const Vec3& x, const Vec3&) { return 0.3 * (1 + t * x.z() * x.z()); };
    auto G = grid_for(lo.domain);
    auto a = MixedSolver(lo, G).solve_full({2, 4}, 1e-10).u;
    auto b = MixedSolver(hi, G).solve_full({2, 4}, 1e-10).u;
    double worst = inf;
    for (std::size_t i = 0; i < a.values().size(); ++i) worst = std::min(worst, b.values()[i] - a.values()[i]);
    CHECK(worst >= -1e-9);
}

TEST_CASE("understated kernel bound is caught as divergence") {
    VelocitySpace V(1, 2);
    Material m = gaussian_material(0.0, 4.0, V, 0.01);
    MixedProblem p;
    p.domain = make_ball();
    p.space = &V;
    p.material = &m;
    p.initial = [](const Vec3&, const Vec3&) { return 1.0; };
    MixedSolver S(p, grid_for(p.domain, 0.4, 3, 1.0));
    CHECK_THROWS_AS(S.solve_reduced(2, 1e-12, 100), DivergenceDetected);
}

TEST_CASE("iteration budget exhaustion") {
    VelocitySpace V(1, 2);
    Material m = gaussian_material(0.5, 0.3, V);
    auto p = smooth_problem(make_ball(), V, m);
    MixedSolver S(p, grid_for(p.domain, 0.4, 3, 1.0));
    CHECK_THROWS_AS(S.solve_reduced(4, 1e-14, 2), MaxIterExceeded);
}

TEST_CASE("sequence bound examples") {
    auto r = sequence_bound({1, 1}, 2, 0, 1);
    CHECK(r.bound == 1.0);
    auto r2 = sequence_bound({0, 0}, 2, 7.0 / 8.0, 1);
    CHECK(r2.bound == doctest::Approx(1.0).epsilon(1e-15));
    // Continuations satisfying the hypothesis stay below the bound.
    auto e = sequence_bound({1, 1}, 2, 0, 1, 50).envelope;
    for (double x : e) CHECK(x <= 1.0);

    CHECK_THROWS_AS(sequence_bound({1, 1, 0.5}, 2, 0, 1), HypothesisViolated);
    try {
        sequence_bound({1, 1, 0.125, 0.5}, 2, 0, 1);
    } catch (const HypothesisViolated& err) {
        CHECK(std::string(err.what()).find("b_4") != std::string::npos);
    }
    CHECK_THROWS_AS(sequence_bound({1, -1}, 2, 0, 1), HypothesisViolated);
}

TEST_CASE("sequence bound against brute-force rollouts") {
    // Independent rollout of the extremal recurrence.
    auto rollout = [](std::vector<double> b, int k, double D, double eta, int n) {
        while (static_cast<int>(b.size()) < n) {
            int l = static_cast<int>(b.size());
            double B = 0;
            for (int i = l - k; i < l; ++i) B = std::max(B, b[i]);
            b.push_back(B / 8 + D * std::pow(eta, l));
        }
        return b;
    };
    struct Case {
        std::vector<double> head;
        int k;
        double D, eta;
    };
    for (const Case& c : {Case{{1.0, 0.3}, 2, 0.5, 0.9}, Case{{0.0, 0.0, 0.0}, 3, 2.0, 0.7},
                          Case{{5.0, 1.0}, 2, 0.5, 1.0}, Case{{0.2}, 1, 1.0, 0.95}}) {
        auto seq = rollout(c.head, c.k, c.D, c.eta, 200);
        auto r = sequence_bound(seq, c.k, c.D, c.eta);
        REQUIRE(r.envelope.size() == 200);
        double mx = 0;
        for (int i = 0; i < 200; ++i) {
            CHECK(r.envelope[i] == seq[i]);
            CHECK(seq[i] <= r.per_index_bounds[i] * (1 + 1e-14));
            mx = std::max(mx, seq[i]);
        }
        CHECK(mx <= r.bound * (1 + 1e-14));
        if (c.eta < 1) CHECK(r.per_index_bounds.back() < 1e-3 * r.bound);
    }
}
