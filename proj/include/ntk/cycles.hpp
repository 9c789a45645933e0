#pragma once

#include "ntk/solver.hpp"

#include <cstdint>
#include <vector>

namespace ntk {

struct CycleNode {
    double t;
    Vec3 x;
    Vec3 v;  // velocity drawn at x (zero once the cycle has stopped)
};

// Back-time cycle from (t, x, v): node k >= 1 is the k-th boundary hit.
struct CycleRecord {
    double t0 = 0;
    PhaseState origin;
    std::vector<CycleNode> nodes;
    bool terminated_at_time_zero = false;
    int k_max = 0;
};

CycleRecord sample_cycle(const Domain& d, const VelocitySpace& space, double t, const PhaseState& s, int k_max,
                         Rng& rng);

struct Estimate {
    double value = 0;
    double se = 0;
};

// P(t_k > 0) for k = 1..k_max from one set of sample paths, so the curve is
// nonincreasing by construction. Sample i uses Rng::stream(seed, i).
std::vector<Estimate> survival_curve(const Domain& d, const VelocitySpace& space, double t, const PhaseState& s,
                                     int k_max, int n_samples, std::uint64_t seed);

Estimate bounce_survival(const Domain& d, const VelocitySpace& space, double t, const PhaseState& s, int k,
                         int n_samples, Rng& rng);

struct PointEstimate {
    double value = 0;
    double se = 0;
    double tail = 0;           // mean tail contribution
    double alive_fraction = 0; // cycles closed by the tail
};

// Monte-Carlo average of the cycle representation of the physical solution
// u at (t, x, v). The tail after k_max bounces and the scattering source
// K u are read from field_for_tail, which must hold the physical field
// (exponent parameter 0).
PointEstimate mc_point_estimate(const MixedProblem& p, double t, const PhaseState& s, int k_max, int n_samples,
                                Rng& rng, const PhaseField& field_for_tail);

}  // namespace ntk
