#pragma once

#include "ntk/geometry.hpp"
#include "ntk/velocity.hpp"

#include <functional>
#include <string>

namespace ntk {

using SigmaFn = std::function<double(const Vec3& x, const Vec3& v)>;
using KernelFn = std::function<double(const Vec3& x, const Vec3& v, const Vec3& vp)>;

// Cross section and scattering kernel with the declared bounds the theory
// assumes. The declared constants are checked by verify_bounds, never
// inferred.
struct Material {
    std::string name;
    SigmaFn sigma;
    KernelFn kernel;
    double M_a = 0;        // sup of sigma
    double M_b = 0;        // sup of both kernel marginals
    double M_a_prime = 0;  // sup of |grad_(x,v) sigma|
    double M_b_prime = 0;  // sup of both marginals of |grad_(x,v) k|
    // Hints that let the grid solvers skip redundant work.
    bool sigma_constant = false;
    bool kernel_zero = false;
    bool kernel_x_independent = false;
};

Material constant_material(double sigma, double kappa, const VelocitySpace& space);
// k(x, v, v') = kappa exp(-|v - v'|^2). With declared_M_b <= 0 the bound
// kappa * min(|V|, pi^(3/2)) is declared.
Material gaussian_material(double sigma, double kappa, const VelocitySpace& space, double declared_M_b = -1);
// sigma(x, v) = sigma0 |x|^2 on a domain of the given bounding radius, with
// the Gaussian kernel above (kappa may be zero).
Material radial_sigma_material(double sigma0, double kappa, double bounding_radius, const VelocitySpace& space);

// Quadrature of the integral over V of k(x, v, v') u(v') dv'.
double apply_K(const Material& m, const VelocitySpace& space, const std::function<double(const Vec3&)>& u_slice,
               const Vec3& x, const Vec3& v);

struct BoundsReport {
    int n_samples = 0;
    double sigma_min = 0;
    double sigma_margin = 0;        // M_a - max sigma
    double kernel_out_margin = 0;   // M_b - max integral k(x, v, v') dv'
    double kernel_in_margin = 0;    // M_b - max integral k(x, v', v) dv'
    double dsigma_margin = 0;       // M_a' - max |grad sigma|
    double dkernel_margin = 0;      // M_b' - max integral |grad k|
};

// Samples (x, v) uniformly in the phase space and checks every declared
// bound; throws BoundViolation on the first excess beyond 1e-8.
BoundsReport verify_bounds(const Material& m, const Domain& d, const VelocitySpace& space, int n_samples,
                           std::uint64_t seed = 1);

}  // namespace ntk
