#pragma once

#include "ntk/cover.hpp"
#include "ntk/solver.hpp"

#include <array>
#include <vector>

namespace ntk {

// A node pair with a large value jump, and how far its midpoint sits from
// the predicted discontinuity set (in units of the pair's own spacing;
// infinity when no discontinuity of the exit map was found nearby).
struct JumpCell {
    int axis = 0;  // 0..2 spatial, 3..5 velocity lattice axes
    int id_a = 0, k_a = 0, id_b = 0, k_b = 0;
    double jump = 0;
    PhaseState mid;
    double distance_cells = inf;
};

struct BVReport {
    double l1_norm = 0;
    double tv_estimate = 0;
    std::array<double, 6> per_axis{};
    double trace_mass = 0;  // time-integrated boundary derivative mass
    std::vector<JumpCell> discontinuities;
};

// Anisotropic discrete total variation of one time level (default: the
// last). Pairs of interior (non-ghost) neighbors contribute |difference|
// times the measure of the face between them.
double total_variation(const PhaseField& f, int level = -1);
std::array<double, 6> total_variation_per_axis(const PhaseField& f, int level = -1);

// Integral of |f| over the phase space at one time level.
double l1_norm(const PhaseField& f, int level = -1);

// ---------------------------------------------------------------- closure

// Outgoing traces needed to differentiate P_gamma f at a boundary point.
struct TraceData {
    std::function<double(const Vec3& v)> value;
    std::function<Vec3(const Vec3& v)> grad_x;
    std::function<Vec3(const Vec3& v)> grad_v;
    std::function<double(const Vec3& v)> dt;
};

struct BoundaryDerivatives {
    double d_t = 0;
    double d_tau1 = 0, d_tau2 = 0;
    double d_n = 0;
    Vec3 d_v = Vec3::Zero();
    Vec3 tau1 = Vec3::Zero(), tau2 = Vec3::Zero(), n = Vec3::Zero();

    Vec3 grad_x() const { return d_tau1 * tau1 + d_tau2 * tau2 + d_n * n; }
};

// Derivatives at the incoming state (t, x, v) of u = P_gamma[traces] + r,
// where u solves (d_t + v.grad + lambda + sigma) u = q. Tangential parts
// differentiate the diffuse average in the frame rotated with the normal;
// the normal part comes from the equation. Throws GrazingNormal when
// |n.v| <= graze_tol |v|.
BoundaryDerivatives boundary_derivative_closure(const MixedProblem& problem, const TraceData& traces, double t,
                                                const Vec3& x, const Vec3& v, double lambda = 0.0);

// ----------------------------------------------------------------- scheme

// Boundary derivative mass of one iterate, split by n.v so that almost
// grazing parts can be isolated afterwards.
struct IterateTrace {
    int m = 0;
    double incoming = 0;               // time-integrated |du| |n.v| over gamma_-
    std::vector<double> out_nv;        // n.v of each outgoing sample
    std::vector<double> out_mass;      // its time-integrated |du| |n.v| weight
    double bulk = 0;                   // time-integrated ||du||_1 + ||d source||_1
    double outgoing(double delta_lo = 0, double delta_hi = inf) const;
};

struct BVSchemeOptions {
    int m_max = 60;
    double tol = 1e-8;
    int j = 0;                   // reflection factor as in the solver (0: unreduced)
    int boundary_nodes = 24;     // boundary quadrature per parameter direction
    double fd_step = 1e-5;       // data and coefficient derivatives
    int keep_traces = 3;
};

struct BVSchemeResult {
    PhaseField u;                          // physical u^(eps, m)
    std::array<PhaseField, 6> derivative;  // d/dx1..3, d/dv1..3 (physical)
    std::array<double, 6> derivative_l1{}; // sup over time levels of ||d_a u||_1
    double derivative_l1_total = 0;        // sup over time levels of sum_a ||d_a u||_1
    double trace_mass = 0;
    double sup_norm = 0;
    BVReport report;
    std::vector<double> history;           // sup change per iteration
    bool converged = false;
    std::vector<IterateTrace> traces;      // the last keep_traces iterates
    std::size_t cut_nodes = 0;             // nodes with chi < 1
};

BVSchemeResult solve_bv_scheme(const MixedProblem& problem, const CutoffField& cutoff, const GridPtr& grid,
                               const BVSchemeOptions& opt = {});

// ---------------------------------------------------------- discontinuity

// Flags neighbor pairs (same six axes as the total variation) whose jump
// exceeds jump_tol * sup |f| at one time level, and measures each midpoint's
// distance, in cells, to the set where the backward exit point jumps at a
// concave grazing foot or the state is grazing at the wall. The jump set is
// searched along one line per phase axis through the midpoint, so the
// distance is an upper bound. At most max_checked
// flags (evenly strided) get a distance; the rest are set to NaN and
// skipped by colocated_fraction.
std::vector<JumpCell> detect_discontinuity(const PhaseField& f, const Domain& d, double jump_tol = 0.1,
                                           int level = -1, int max_checked = 2000);

// Fraction of the measured flags within max_cells of the discontinuity set.
double colocated_fraction(const std::vector<JumpCell>& cells, double max_cells = 2.0);

// Distance, in multiples of |dir|, from s along the line s + a dir to the
// nearest point where the backward exit point jumps at a concave grazing
// foot. Searches |a| <= reach; infinity when none is found.
double discontinuity_distance(const Domain& d, const PhaseState& s, const PhaseState& dir, double reach);

}  // namespace ntk
