#include "ntk/velocity.hpp"

#include "ntk/quadrature.hpp"

#include <cmath>

namespace ntk {

namespace {

std::vector<VelocityNode> product_rule(double a, double b, int order, double mu_lo) {
    std::vector<double> rs, rw, ms, mw;
    gauss_on(order, a, b, rs, rw);
    gauss_on(order, mu_lo, 1.0, ms, mw);
    const int n_th = 2 * order;
    const double dth = 2 * pi / n_th;
    std::vector<VelocityNode> out;
    out.reserve(static_cast<std::size_t>(order) * order * n_th);
    for (int i = 0; i < order; ++i) {
        for (int j = 0; j < order; ++j) {
            double s = std::sqrt(std::max(0.0, 1 - ms[j] * ms[j]));
            for (int k = 0; k < n_th; ++k) {
                double th = (k + 0.5) * dth;
                Vec3 v = rs[i] * Vec3(s * std::cos(th), s * std::sin(th), ms[j]);
                out.push_back({v, rw[i] * rs[i] * rs[i] * mw[j] * dth});
            }
        }
    }
    return out;
}

}  // namespace

VelocitySpace::VelocitySpace(double a, double b, int quad_order) : a_(a), b_(b), order_(quad_order) {
    if (!(a >= 0)) throw ConfigError("velocity.a must be >= 0");
    if (!(b > a)) throw ConfigError("velocity.a must be < velocity.b");
    if (quad_order < 2) throw ConfigError("velocity.quad_order must be >= 2");
    full_ = product_rule(a, b, quad_order, -1.0);
    half_canonical_ = product_rule(a, b, quad_order, 0.0);
}

std::vector<VelocityNode> VelocitySpace::half_rule(const Vec3& n) const {
    Vec3 t1, t2;
    tangent_frame(n, t1, t2);
    std::vector<VelocityNode> out(half_canonical_.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Vec3& c = half_canonical_[i].v;
        out[i] = {c.x() * t1 + c.y() * t2 + c.z() * n, half_canonical_[i].w};
    }
    return out;
}

Vec3 VelocitySpace::sample_uniform(Rng& rng) const {
    double a3 = a_ * a_ * a_, b3 = b_ * b_ * b_;
    double r = std::cbrt(a3 + rng.uniform() * (b3 - a3));
    return r * uniform_direction(rng);
}

double normalization_constant(const VelocitySpace& space, const Vec3& n) {
    double s = 0;
    for (const auto& q : space.half_rule(n)) s += q.w * n.dot(q.v);
    if (!(s > 0)) throw EmptyHalfSpace("cosine-weighted half-space integral is not positive");
    return 1.0 / s;
}

DiffuseMeasure make_diffuse_measure(const VelocitySpace& space, const Vec3& x, const Vec3& n) {
    return {&space, x, n, normalization_constant(space, n)};
}

double diffuse_apply(const DiffuseMeasure& m, const std::function<double(const Vec3&)>& trace) {
    double s = 0;
    for (const auto& q : m.space->half_rule(m.n)) s += q.w * m.n.dot(q.v) * trace(q.v);
    return m.c * s;
}

Vec3 sample_dsigma(const DiffuseMeasure& m, Rng& rng) {
    const double a = m.space->a(), b = m.space->b();
    double a4 = a * a * a * a, b4 = b * b * b * b;
    double r = std::pow(a4 + rng.uniform() * (b4 - a4), 0.25);
    double phi = 2 * pi * rng.uniform();
    double mu = std::sqrt(1.0 - rng.uniform());  // in (0, 1]
    double s = std::sqrt(std::max(0.0, 1 - mu * mu));
    Vec3 t1, t2;
    tangent_frame(m.n, t1, t2);
    return r * (s * std::cos(phi) * t1 + s * std::sin(phi) * t2 + mu * m.n);
}

}  // namespace ntk
