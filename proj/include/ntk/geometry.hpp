#pragma once

#include "ntk/core.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ntk {

// A two-parameter description of the boundary surface. Used for boundary
// quadrature and for drawing uniformly distributed boundary points; exit-time
// queries never touch it.
struct SurfacePatchMap {
    std::function<Vec3(double, double)> point;
    std::function<double(double, double)> area_element;
    double u_lo = 0, u_hi = 1;
    double w_lo = 0, w_hi = 1;
    bool u_periodic = false;
    bool w_periodic = false;
};

struct BoundaryQuadNode {
    Vec3 x;
    Vec3 n;
    double weight;
};

// Implicit domain {phi < 0} with analytic first and second derivatives.
class Domain {
public:
    virtual ~Domain() = default;

    virtual double phi(const Vec3& x) const = 0;
    virtual Vec3 grad(const Vec3& x) const = 0;
    virtual Mat3 hess(const Vec3& x) const = 0;

    const std::string& name() const { return name_; }
    double bounding_radius() const { return bounding_radius_; }
    const Vec3& box_lo() const { return box_lo_; }
    const Vec3& box_hi() const { return box_hi_; }
    const SurfacePatchMap& surface() const { return surface_; }

    double boundary_tol() const { return 1e-10 * bounding_radius_; }
    double march_step() const { return bounding_radius_ / 256.0; }
    double graze_tol = 1e-6;
    double time_tol = 1e-9;
    double curv_tol = 1e-8;

    bool inside(const Vec3& x) const { return phi(x) <= 0.0; }

    // Boundary quadrature with n_u x n_w nodes (Gauss-Legendre on open
    // parameter ranges, trapezoid on periodic ones).
    std::vector<BoundaryQuadNode> boundary_quadrature(int n_u, int n_w) const;
    double boundary_area(int n = 96) const;
    // Uniform (area-weighted) boundary point, by rejection on the area element.
    Vec3 sample_boundary(Rng& rng) const;
    // Uniform interior point, by rejection in the bounding box.
    Vec3 sample_interior(Rng& rng) const;

protected:
    Domain(std::string name, double bounding_radius, Vec3 lo, Vec3 hi, SurfacePatchMap surface);

private:
    std::string name_;
    double bounding_radius_;
    Vec3 box_lo_, box_hi_;
    SurfacePatchMap surface_;
    double max_area_element_ = 0.0;
};

using DomainPtr = std::shared_ptr<const Domain>;

// Phi = |x|^2 - rho^2.
std::shared_ptr<Domain> make_ball(double radius = 1.0);
// Phi = (sqrt(x1^2 + x2^2) - R)^2 + x3^2 - r^2.
std::shared_ptr<Domain> make_torus(double major = 1.0, double minor = 0.5);
// Phi = |x|^4 - |x|^2 + c x1^2, a body of revolution about the x1 axis with
// meridian radius^2 = 1 - c cos^2(alpha). The waist x1 = 0 has meridian
// curvature 1 + c, so c < -1 gives a concave waist; small |c| is convex.
std::shared_ptr<Domain> make_peanut(double c = -1.5);

struct PhaseState {
    Vec3 x;
    Vec3 v;
};

struct ExitRecord {
    double t_exit = 0;
    Vec3 x_exit = Vec3::Zero();
    // n(x_exit) . w where x = x_exit + t_exit * w, so genuine exits give <= 0.
    double normal_dot_v = 0;
    bool grazing = false;
};

enum class GammaClass { Incoming, Outgoing, Grazing };

Vec3 outward_normal(const Domain& d, const Vec3& x);

struct CurvatureInfo {
    double min_tangential_curvature;
    bool is_strictly_nonconvex;
};
CurvatureInfo strict_nonconvexity(const Domain& d, const Vec3& x);

ExitRecord backward_exit(const Domain& d, const Vec3& x, const Vec3& v);
ExitRecord forward_exit(const Domain& d, const Vec3& x, const Vec3& v);
inline ExitRecord backward_exit(const Domain& d, const PhaseState& s) { return backward_exit(d, s.x, s.v); }
inline ExitRecord forward_exit(const Domain& d, const PhaseState& s) { return forward_exit(d, s.x, s.v); }

// Gradients of t_b with respect to x and v at a non-grazing state.
struct ExitGradients {
    Vec3 dx;
    Vec3 dv;
};
ExitGradients backward_exit_gradients(const Domain& d, const Vec3& x, const Vec3& v);

GammaClass classify_gamma(const Domain& d, const Vec3& x, const Vec3& v);
bool in_singular_set(const Domain& d, const PhaseState& s, double tol);
bool concave_grazing(const Domain& d, const Vec3& x, const Vec3& v);

// Domain built from user closures (tests, custom shapes).
struct ImplicitSpec {
    std::string name;
    std::function<double(const Vec3&)> phi;
    std::function<Vec3(const Vec3&)> grad;
    std::function<Mat3(const Vec3&)> hess;
    double bounding_radius;
    Vec3 box_lo, box_hi;
    SurfacePatchMap surface;
};
std::shared_ptr<Domain> make_implicit(ImplicitSpec spec);

}  // namespace ntk
