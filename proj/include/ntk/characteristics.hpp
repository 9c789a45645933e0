#pragma once

#include "ntk/grid.hpp"
#include "ntk/material.hpp"

#include <functional>
#include <vector>

namespace ntk {

using InitialFn = std::function<double(const Vec3& x, const Vec3& v)>;
using DataFn = std::function<double(double t, const Vec3& x, const Vec3& v)>;

// (d_t + v.grad + lambda [+ sigma]) U = Q, U = R on the incoming boundary,
// U(0) = U0. Empty closures stand for zero data.
struct InflowProblem {
    DomainPtr domain;
    const Material* material = nullptr;
    double lambda = 1.0;
    bool sigma_in_exponent = true;
    InitialFn initial;
    DataFn inflow;
    DataFn source;
    double T = 1.0;
    int n_quad_line = 8;
};

struct DuhamelValue {
    double value = 0;
    bool ambiguous = false;  // t within time_tol of t_b
};

// Exact solution along the backward characteristic through (x, v).
DuhamelValue duhamel_eval(const InflowProblem& p, double t, const PhaseState& s);

// Attenuation exp(-lambda tau - integral_0^tau sigma(x - s v, v) ds) at the
// given offsets (sorted or not), sharing one Gauss rule per offset.
void attenuation(const InflowProblem& p, const Vec3& x, const Vec3& v, const double* taus, int n, double* out);

struct ExitCache {
    std::vector<double> tb;
    std::vector<Vec3> xb;
    std::vector<std::uint8_t> grazing;
};

struct SweepStats {
    std::size_t ambiguous = 0;
    double sup_initial = 0;
    double sup_inflow = 0;
    double sup_source = 0;
};

// Extra terms for a grid sweep beyond the problem's closures.
struct SweepTerms {
    // Added to the source; interpolated in (t, x) at the node's velocity.
    const PhaseField* source_field = nullptr;
    // Inflow gains reflect_factor * P_gamma[reflect_field](t', x_b).
    const PhaseField* reflect_field = nullptr;
    double reflect_factor = 0.0;
    // Per (valued node, velocity node) multiplier applied to the whole
    // inflow value (cut-off at the foot point).
    const std::vector<double>* inflow_multiplier = nullptr;
};

// Method of characteristics on a phase grid. Exit data per node are
// computed once; each sweep evaluates every node at every time level.
class CharacteristicSolver {
public:
    CharacteristicSolver(InflowProblem problem, GridPtr grid);

    const InflowProblem& problem() const { return p_; }
    const GridPtr& grid() const { return grid_; }
    const ExitCache& exits() const { return cache_; }
    std::size_t cache_index(int id, int k) const { return static_cast<std::size_t>(id) * grid_->vel().size() + k; }

    // Full space-time field; stats (optional) receive data sups and the
    // count of ambiguous nodes. Throws BoundViolation if the sup-norm
    // postcondition fails.
    PhaseField sweep(const SweepTerms& terms = {}, SweepStats* stats = nullptr) const;

    // Diffuse average over outgoing lattice velocities at every band node
    // and time level (values on other nodes are NaN).
    std::vector<double> boundary_average(const PhaseField& f) const;
    // Interpolates a boundary_average result at (t, x).
    double interp_boundary_average(const std::vector<double>& avg, double lambda, double t, const Vec3& x) const;

private:
    InflowProblem p_;
    GridPtr grid_;
    ExitCache cache_;
};

// Evaluates the Duhamel formula at every valued node at time t.
PhaseField solve_inflow(const InflowProblem& p, const GridPtr& grid, double t, SweepStats* stats = nullptr);

}  // namespace ntk
