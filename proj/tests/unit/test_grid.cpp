#include <doctest.h>

#include "ntk/grid.hpp"

#include <cmath>

using namespace ntk;

TEST_CASE("velocity lattice weights are exact shell volumes") {
    auto L = VelocityLattice::spherical(1, 2, 3, 4, 8);
    double s = 0;
    for (int k = 0; k < L.size(); ++k) s += L.w(k);
    CHECK(s == doctest::Approx(28 * pi / 3).epsilon(1e-12));
    for (int k = 0; k < L.size(); ++k) {
        double r = L.v(k).norm();
        CHECK(r >= 1);
        CHECK(r <= 2);
    }
    // Stencil reproduces node values exactly and interpolates constants.
    int idx[8];
    double wt[8];
    for (int k = 0; k < L.size(); ++k) {
        L.stencil(L.v(k), idx, wt);
        double sum = 0, at_k = 0;
        for (int i = 0; i < 8; ++i) {
            sum += wt[i];
            if (idx[i] == k) at_k += wt[i];
        }
        CHECK(sum == doctest::Approx(1.0));
        CHECK(at_k == doctest::Approx(1.0));
    }
}

TEST_CASE("grid classification and volume fractions") {
    auto ball = make_ball();
    GridSpec spec;
    spec.h = 0.125;
    auto G = std::make_shared<PhaseGrid>(ball, spec, VelocityLattice::spherical(1, 2, 1, 2, 4));
    double vol = 0;
    int ghosts = 0;
    for (int id = 0; id < G->n_valued(); ++id) {
        vol += G->volume_fraction(id) * G->cell_volume();
        if (G->is_ghost(id)) {
            ++ghosts;
            CHECK(std::abs(ball->phi(G->eval_point(id))) <= ball->boundary_tol());
            CHECK(G->in_band(id));
        }
    }
    CHECK(ghosts > 0);
    CHECK(vol == doctest::Approx(4 * pi / 3).epsilon(0.01));
}

TEST_CASE("field interpolation reproduces affine data and exp(-lambda t) constants") {
    auto ball = make_ball();
    GridSpec spec;
    spec.h = 0.2;
    spec.n_t = 4;
    spec.T = 1.0;
    auto G = std::make_shared<PhaseGrid>(ball, spec, VelocityLattice::spherical(1, 2, 2, 2, 4));
    const double lam = 1.7;
    PhaseField f(G, 5, lam);
    PhaseField g(G, 5, 0.0);
    for (int m = 0; m < 5; ++m)
        for (int id = 0; id < G->n_valued(); ++id)
            for (int k = 0; k < G->vel().size(); ++k) {
                double t = G->times()[m];
                f.at(m, id, k) = 3.0 * std::exp(-lam * t);
                Vec3 x = G->node_x(G->valued_spatial(id));
                g.at(m, id, k) = 1 + 2 * x.x() - x.y() + 0.5 * x.z() + t;
            }
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
        Vec3 x = 0.6 * ball->sample_interior(rng);  // away from the wall
        double t = rng.uniform(0, 1);
        CHECK(f.interp(t, x, 0) == doctest::Approx(3.0 * std::exp(-lam * t)).epsilon(1e-13));
        CHECK(g.interp(t, x, 1) == doctest::Approx(1 + 2 * x.x() - x.y() + 0.5 * x.z() + t).epsilon(1e-12));
    }
}
