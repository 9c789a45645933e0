#pragma once

#include "ntk/bv.hpp"
#include "ntk/characteristics.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ntk {

struct InequalityReport {
    std::string name;
    double lhs = 0;
    double rhs = 0;
    double constant_fitted = 0;  // smallest C with lhs <= C rhs over the scenarios
    double coefficient = nan;    // leading small coefficient, where one applies
    bool pass = false;
    std::vector<std::string> scenarios;
    std::map<std::string, double> details;
};

// ------------------------------------------------------------ Green identity

struct GreenOptions {
    double p = 2.0;
    int boundary_nodes = 24;  // per surface parameter
};

// Both sides of the L^p energy identity for the in-flow problem on the
// grid's time horizon:
//   ||f(T)||_p^p + int |f|^p on gamma_+
//     = ||f(0)||_p^p + int |f|^p on gamma_- + int int p |f|^(p-2) f (q - psi f),
// with psi = lambda + sigma. Bulk terms use the grid field (exact nodal
// values, cell quadrature with volume fractions, trapezoid in time); the
// boundary terms evaluate the exact solution at boundary quadrature nodes.
// Boundary velocities come from the full rule of `space`. details: the
// relative residual and each term.
InequalityReport green_identity_check(const InflowProblem& problem, const GridPtr& grid, const VelocitySpace& space,
                                      const GreenOptions& opt = {});

// ----------------------------------------------------- outgoing trace bound

struct TraceBoundOptions {
    double delta = 0.1;  // outgoing states with n.v >= delta count
    int boundary_nodes = 24;
};

// lhs: time integral of |f| over {n.v >= delta} on gamma_+; rhs: ||f(0)||_1
// + int (||f||_1 + ||q||_1). constant_fitted = lhs / rhs (0 when both vanish).
InequalityReport trace_bound_check(const InflowProblem& problem, const GridPtr& grid, const VelocitySpace& space,
                                   const TraceBoundOptions& opt = {});

// Combines per-scenario trace bound reports: constant_fitted becomes the
// largest ratio, pass requires all ratios within max_spread of each other.
InequalityReport trace_bound_battery(const std::vector<InequalityReport>& runs, double max_spread = 5.0);

// ------------------------------------------------- double iteration trace

// From the last three derivative iterates m-1, m, m+1 of the BV scheme:
//   incoming(m+1) <= a(delta) outgoing(m-1) + C_delta (bulk(m) + bulk(m+1)),
// where a(delta) is the almost-grazing (n.v < delta) outgoing mass of
// iterate m relative to the full outgoing mass of iterate m-1, and C_delta
// is fitted from the rest. coefficient = a(delta).
InequalityReport double_iteration_trace_check(const std::vector<IterateTrace>& traces, double delta);

// ------------------------------------------------------- exit map Jacobian

struct JacobianOptions {
    int n_samples = 20000;
    std::vector<int> k_values{5, 20};
    std::uint64_t seed = 1;
};

using PhaseFn = std::function<double(const Vec3& x, const Vec3& v)>;

// Monte Carlo of int over gamma_+ of g |n.v| 1{|n(x_b).v| > 1/k} against
// int over gamma_- of g(x_f, v) |n.v| 1{|n.v| > 1/k}, with x_f the forward
// exit. details: per k, both integrals and their standard errors.
InequalityReport exit_map_jacobian_check(const Domain& d, const VelocitySpace& space, const PhaseFn& g,
                                         const JacobianOptions& opt = {});

// --------------------------------------------------------- covering lemma

struct CoveringOptions {
    double epsilon = 0.05;
    double ball_radius = 0.25;  // of the packed balls, relative to the bounding radius
    int velocity_samples = 4000;
    double delta0 = 0.5;
    int max_halvings = 30;
    std::uint64_t seed = 1;
};

struct CoveringResult {
    std::vector<Vec3> centers;
    double radius = 0;
    double delta = nan;           // first delta0 / 2^i with every measure below epsilon
    std::vector<double> measures; // per center at that delta
    std::vector<double> se;
    bool found = false;
};

// Greedy packing of the closed domain by balls of the given radius, then
// the velocity measure of {v : |v . n(x_b(x_i, v))| <= delta} at each
// center by Monte Carlo (the same samples for every delta).
CoveringResult covering_lemma(const Domain& d, const VelocitySpace& space, const CoveringOptions& opt = {});
InequalityReport covering_lemma_check(const Domain& d, const VelocitySpace& space, const CoveringOptions& opt = {});

// Measure of that bad velocity set at an interior point of the unit ball.
double ball_bad_velocity_measure(const VelocitySpace& space, double rho, double delta);

// Monte Carlo estimate at one point (value, standard error).
std::pair<double, double> bad_velocity_measure(const Domain& d, const VelocitySpace& space, const Vec3& x,
                                               double delta, int n_samples, std::uint64_t seed);

}  // namespace ntk
