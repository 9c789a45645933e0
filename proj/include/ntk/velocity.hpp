#pragma once

#include "ntk/core.hpp"

#include <functional>
#include <vector>

namespace ntk {

struct VelocityNode {
    Vec3 v;
    double w;
};

// The annulus V = {a <= |v| <= b} with product quadrature rules: Gauss in
// the speed, Gauss in the polar cosine, trapezoid in the azimuth (2*order
// points). The half-space rule covers {v . e3 > 0} and is rotated onto any
// normal on demand.
class VelocitySpace {
public:
    VelocitySpace(double a, double b, int quad_order = 24);

    double a() const { return a_; }
    double b() const { return b_; }
    int quad_order() const { return order_; }
    double shell_volume() const { return 4.0 * pi / 3.0 * (b_ * b_ * b_ - a_ * a_ * a_); }

    const std::vector<VelocityNode>& full_rule() const { return full_; }
    // Nodes of the half space {n . v > 0}, rotated from the canonical frame.
    std::vector<VelocityNode> half_rule(const Vec3& n) const;

    bool contains(const Vec3& v, double tol = 1e-12) const {
        double r = v.norm();
        return r >= a_ - tol && r <= b_ + tol;
    }

    // Uniform draw from V (density proportional to r^2 in the speed).
    Vec3 sample_uniform(Rng& rng) const;

private:
    double a_, b_;
    int order_;
    std::vector<VelocityNode> full_;
    std::vector<VelocityNode> half_canonical_;
};

// Normalization of the cosine measure: 1 / integral over {n.v>0} of n.v dv.
double normalization_constant(const VelocitySpace& space, const Vec3& n);

struct DiffuseMeasure {
    const VelocitySpace* space;
    Vec3 x;
    Vec3 n;
    double c;
};

DiffuseMeasure make_diffuse_measure(const VelocitySpace& space, const Vec3& x, const Vec3& n);

// c * integral over {n.v'>0} of trace(v') (n.v') dv'.
double diffuse_apply(const DiffuseMeasure& m, const std::function<double(const Vec3&)>& trace);

// Draw from the density c (n.v') on {n.v'>0} by inverse CDF: speed with
// density ~ r^3, direction cosine-weighted about n.
Vec3 sample_dsigma(const DiffuseMeasure& m, Rng& rng);

}  // namespace ntk
