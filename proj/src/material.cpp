#include "ntk/material.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ntk {

Material constant_material(double sigma, double kappa, const VelocitySpace& space) {
    if (sigma < 0 || kappa < 0) throw ConfigError("material: sigma and kappa must be >= 0");
    Material m;
    m.name = "constant";
    m.sigma = [sigma](const Vec3&, const Vec3&) { return sigma; };
    m.kernel = [kappa](const Vec3&, const Vec3&, const Vec3&) { return kappa; };
    m.M_a = sigma;
    m.M_b = kappa * space.shell_volume();
    m.sigma_constant = true;
    m.kernel_zero = kappa == 0;
    m.kernel_x_independent = true;
    return m;
}

Material gaussian_material(double sigma, double kappa, const VelocitySpace& space, double declared_M_b) {
    if (sigma < 0 || kappa < 0) throw ConfigError("material: sigma and kappa must be >= 0");
    Material m;
    m.name = "gaussian";
    m.sigma = [sigma](const Vec3&, const Vec3&) { return sigma; };
    m.kernel = [kappa](const Vec3&, const Vec3& v, const Vec3& vp) { return kappa * std::exp(-(v - vp).squaredNorm()); };
    m.M_a = sigma;
    m.M_b = declared_M_b > 0 ? declared_M_b : kappa * std::min(space.shell_volume(), std::pow(pi, 1.5));
    // integral over R^3 of 2|w| exp(-|w|^2) dw = 4 pi.
    m.M_b_prime = 4 * pi * kappa;
    m.sigma_constant = true;
    m.kernel_zero = kappa == 0;
    m.kernel_x_independent = true;
    return m;
}

Material radial_sigma_material(double sigma0, double kappa, double bounding_radius, const VelocitySpace& space) {
    Material m = gaussian_material(0, kappa, space);
    m.name = "sigma_radial";
    m.sigma = [sigma0](const Vec3& x, const Vec3&) { return sigma0 * x.squaredNorm(); };
    m.M_a = sigma0 * bounding_radius * bounding_radius;
    m.M_a_prime = 2 * sigma0 * bounding_radius;
    m.sigma_constant = false;
    return m;
}

double apply_K(const Material& m, const VelocitySpace& space, const std::function<double(const Vec3&)>& u_slice,
               const Vec3& x, const Vec3& v) {
    if (m.kernel_zero) return 0.0;
    double s = 0;
    for (const auto& q : space.full_rule()) s += q.w * m.kernel(x, v, q.v) * u_slice(q.v);
    return s;
}

namespace {

// Norm of the 6-gradient of f in (x, v) by central differences.
double grad6_norm(const std::function<double(const Vec3&, const Vec3&)>& f, const Vec3& x, const Vec3& v) {
    const double h = 1e-5;
    double s = 0;
    for (int i = 0; i < 3; ++i) {
        Vec3 e = Vec3::Zero();
        e[i] = h;
        double gx = (f(x + e, v) - f(x - e, v)) / (2 * h);
        double gv = (f(x, v + e) - f(x, v - e)) / (2 * h);
        s += gx * gx + gv * gv;
    }
    return std::sqrt(s);
}

[[noreturn]] void violation(const std::string& what, double value, double bound, const Vec3& x, const Vec3& v) {
    std::ostringstream os;
    os.precision(12);
    os << what << " = " << value << " exceeds declared " << bound << " at x=(" << x.transpose() << ") v=("
       << v.transpose() << ")";
    throw BoundViolation(os.str());
}

}  // namespace

BoundsReport verify_bounds(const Material& m, const Domain& d, const VelocitySpace& space, int n_samples,
                           std::uint64_t seed) {
    if (n_samples < 1) throw ConfigError("verify_bounds: n_samples must be >= 1");
    const double slack = 1e-8;
    VelocitySpace coarse(space.a(), space.b(), std::min(space.quad_order(), 12));
    Rng rng(seed);
    BoundsReport rep;
    rep.n_samples = n_samples;
    double max_sigma = -inf, min_sigma = inf, max_out = 0, max_in = 0, max_ds = 0, max_dk = 0;
    for (int s = 0; s < n_samples; ++s) {
        Vec3 x = d.sample_interior(rng);
        Vec3 v = space.sample_uniform(rng);
        double sg = m.sigma(x, v);
        if (sg < -slack) violation("sigma (lower bound 0)", sg, 0, x, v);
        if (sg > m.M_a + slack) violation("sigma", sg, m.M_a, x, v);
        max_sigma = std::max(max_sigma, sg);
        min_sigma = std::min(min_sigma, sg);

        double ds = grad6_norm(m.sigma, x, v);
        if (ds > m.M_a_prime + slack) violation("|grad sigma|", ds, m.M_a_prime, x, v);
        max_ds = std::max(max_ds, ds);

        if (m.kernel_zero) continue;
        double out = 0, in = 0, dout = 0, din = 0;
        for (const auto& q : coarse.full_rule()) {
            out += q.w * m.kernel(x, v, q.v);
            in += q.w * m.kernel(x, q.v, v);
            dout += q.w * grad6_norm([&](const Vec3& y, const Vec3& w) { return m.kernel(y, w, q.v); }, x, v);
            din += q.w * grad6_norm([&](const Vec3& y, const Vec3& w) { return m.kernel(y, q.v, w); }, x, v);
        }
        if (out > m.M_b + slack) violation("integral k(x,v,v')dv'", out, m.M_b, x, v);
        if (in > m.M_b + slack) violation("integral k(x,v',v)dv'", in, m.M_b, x, v);
        double dk = std::max(dout, din);
        if (dk > m.M_b_prime + slack) violation("integral |grad k|", dk, m.M_b_prime, x, v);
        max_out = std::max(max_out, out);
        max_in = std::max(max_in, in);
        max_dk = std::max(max_dk, dk);
    }
    rep.sigma_min = min_sigma;
    rep.sigma_margin = m.M_a - max_sigma;
    rep.kernel_out_margin = m.M_b - max_out;
    rep.kernel_in_margin = m.M_b - max_in;
    rep.dsigma_margin = m.M_a_prime - max_ds;
    rep.dkernel_margin = m.M_b_prime - max_dk;
    return rep;
}

}  // namespace ntk
