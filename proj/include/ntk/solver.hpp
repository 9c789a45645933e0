#pragma once

#include "ntk/characteristics.hpp"

#include <memory>
#include <vector>

namespace ntk {

// u_t + v.grad u + sigma u = K u + q in Omega x V, u(0) = u0, and on the
// incoming boundary u = P_gamma u + r.
struct MixedProblem {
    DomainPtr domain;
    const VelocitySpace* space = nullptr;
    const Material* material = nullptr;
    InitialFn initial;
    DataFn inflow;
    DataFn source;
    double T = 1.0;
    // Shift used for U = exp(-lambda t) u. Nonpositive selects the default
    // 1.5 * lambda0().
    double lambda = 0.0;

    double lambda0() const;
    double effective_lambda() const;
};

// Reflection factor 1 - 1/j; j <= 0 denotes the unreduced map (factor 1).
double reflection_factor(int j);

struct IterationState {
    int j = 1;
    int l = 0;
    PhaseField field;  // U^l, shifted
    std::vector<double> diff_history;
    double eta_observed = nan;
    int growth_streak = 0;
};

struct ConvergenceReport {
    int j = 1;
    std::vector<double> history;
    double eta_observed = nan;
    bool converged = false;
};

struct DataNorms {
    double initial = 0;
    double inflow = 0;
    double source = 0;
    double total() const { return initial + inflow + source; }
};

struct FullSolution {
    PhaseField u;        // physical solution
    PhaseField shifted;  // U = exp(-lambda t) u
    double lambda = 0;
    std::vector<ConvergenceReport> reports;  // schedule, then the polish
    double extrapolation_change = 0;         // sup |polished - extrapolated|
    DataNorms data;
    double bound_constant = 0;               // sup|u| / data.total()
};

// Double iteration on a fixed phase grid. The exit cache is built once.
class MixedSolver {
public:
    MixedSolver(MixedProblem problem, GridPtr grid);

    const MixedProblem& problem() const { return p_; }
    const GridPtr& grid() const { return grid_; }
    double lambda() const { return lambda_; }
    const CharacteristicSolver& characteristics() const { return *cs_; }

    IterationState start(int j) const;
    IterationState start(int j, PhaseField guess) const;
    IterationState iterate_once(const IterationState& state) const;

    // (-sigma + K) applied nodewise to every time level of f.
    PhaseField collision(const PhaseField& f) const;

    PhaseField solve_reduced(int j, double tol, int max_iter, ConvergenceReport* report = nullptr) const;
    PhaseField solve_reduced(IterationState state, double tol, int max_iter, ConvergenceReport* report) const;

    FullSolution solve_full(const std::vector<int>& j_schedule, double tol, int max_iter = 400) const;

    // Sup of the data over the states the solver actually samples.
    DataNorms data_norms() const;
    // Physical field exp(lambda t) U.
    PhaseField unshift(const PhaseField& U) const;

private:
    MixedProblem p_;
    GridPtr grid_;
    double lambda_;
    std::unique_ptr<CharacteristicSolver> cs_;
    std::vector<double> sigma_;   // per (id, k)
    std::vector<double> kernel_;  // nk x nk weighted kernel, or per id when x-dependent
    bool kernel_per_node_ = false;
};

// K f at every node and time level of f (zero for a kernel-free material).
PhaseField apply_scattering(const Material& m, const PhaseField& f);

struct SequenceBound {
    double bound = 0;                       // max{B_k, (8/7) D eta^k}
    std::vector<double> per_index_bounds;   // closed-form bound for b_1..b_n
    std::vector<double> envelope;           // worst case allowed by the hypothesis
};

// For b_(l+1) <= B_l / 8 + D eta^l (l >= k, 1-based, B_l = max of the last k
// terms), checks the hypothesis on the given prefix and returns the bounds
// for the first n_terms indices (default: b.size()).
SequenceBound sequence_bound(const std::vector<double>& b, int k, double D, double eta, int n_terms = 0);

}  // namespace ntk
