#include "ntk/grid.hpp"

#include "ntk/parallel.hpp"
#include "ntk/quadrature.hpp"

#include <algorithm>
#include <cmath>

namespace ntk {

// ---------------------------------------------------------------- velocity

VelocityLattice VelocityLattice::spherical(double a, double b, int n_r, int n_mu, int n_theta) {
    if (!(b > a) || a < 0) throw ConfigError("velocity lattice needs 0 <= a < b");
    if (n_r < 1 || n_mu < 1 || n_theta < 1) throw ConfigError("velocity lattice counts must be >= 1");
    VelocityLattice L;
    L.kind_ = Kind::Spherical;
    L.n_[0] = n_r;
    L.n_[1] = n_mu;
    L.n_[2] = n_theta;
    L.lo_[0] = a;
    L.hi_[0] = b;
    L.lo_[1] = -1;
    L.hi_[1] = 1;
    L.lo_[2] = 0;
    L.hi_[2] = 2 * pi;
    const double dr = (b - a) / n_r, dmu = 2.0 / n_mu, dth = 2 * pi / n_theta;
    for (int i = 0; i < n_r; ++i) {
        double r0 = a + i * dr, r1 = r0 + dr, r = L.axis_coord(0, i);
        double shell = (r1 * r1 * r1 - r0 * r0 * r0) / 3.0;
        for (int j = 0; j < n_mu; ++j) {
            double mu = L.axis_coord(1, j);
            double s = std::sqrt(std::max(0.0, 1 - mu * mu));
            for (int l = 0; l < n_theta; ++l) {
                double th = L.axis_coord(2, l);
                L.v_.emplace_back(r * s * std::cos(th), r * s * std::sin(th), r * mu);
                L.w_.push_back(shell * dmu * dth);
            }
        }
    }
    L.build_sub_rules();
    return L;
}

VelocityLattice VelocityLattice::cartesian(const Vec3& lo, const Vec3& hi, int n) {
    if (n < 1) throw ConfigError("velocity lattice counts must be >= 1");
    VelocityLattice L;
    L.kind_ = Kind::Cartesian;
    double cell = 1;
    for (int a = 0; a < 3; ++a) {
        L.n_[a] = n;
        L.lo_[a] = lo[a];
        L.hi_[a] = hi[a];
        cell *= (hi[a] - lo[a]) / n;
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int l = 0; l < n; ++l) {
                L.v_.emplace_back(L.axis_coord(0, i), L.axis_coord(1, j), L.axis_coord(2, l));
                L.w_.push_back(cell);
            }
    L.build_sub_rules();
    return L;
}

void VelocityLattice::build_sub_rules() {
    const GaussRule& g = gauss_legendre(3);
    sub_v_.clear();
    sub_w_.clear();
    sub_v_.reserve(v_.size() * kSubPoints);
    sub_w_.reserve(v_.size() * kSubPoints);
    double d[3];
    for (int a = 0; a < 3; ++a) d[a] = (hi_[a] - lo_[a]) / n_[a];
    for (int k = 0; k < size(); ++k) {
        auto c = coords(k);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int l = 0; l < 3; ++l) {
                    double q[3], wq = g.weights[i] * g.weights[j] * g.weights[l] / 8 * d[0] * d[1] * d[2];
                    const int idx[3] = {i, j, l};
                    for (int a = 0; a < 3; ++a) q[a] = lo_[a] + (c[a] + 0.5 + 0.5 * g.nodes[idx[a]]) * d[a];
                    if (kind_ == Kind::Spherical) {
                        double s = std::sqrt(std::max(0.0, 1 - q[1] * q[1]));
                        sub_v_.emplace_back(q[0] * s * std::cos(q[2]), q[0] * s * std::sin(q[2]), q[0] * q[1]);
                        wq *= q[0] * q[0];
                    } else {
                        sub_v_.emplace_back(q[0], q[1], q[2]);
                    }
                    sub_w_.push_back(wq);
                }
    }
}

int VelocityLattice::neighbor(int k, int axis) const {
    auto c = coords(k);
    c[axis] += 1;
    if (c[axis] >= n_[axis]) {
        if (kind_ == Kind::Spherical && axis == 2 && n_[2] > 2)
            c[axis] = 0;
        else
            return -1;
    }
    return index(c[0], c[1], c[2]);
}

double VelocityLattice::step_length(int k, int axis) const {
    double d = (hi_[axis] - lo_[axis]) / n_[axis];
    if (kind_ == Kind::Cartesian || axis == 0) return d;
    auto c = coords(k);
    double r = axis_coord(0, c[0]);
    if (axis == 1) {
        double m0 = axis_coord(1, c[1]), m1 = m0 + d;
        return r * std::abs(std::acos(std::clamp(m0, -1.0, 1.0)) - std::acos(std::clamp(m1, -1.0, 1.0)));
    }
    double mu = axis_coord(1, c[1]);
    return r * std::sqrt(std::max(0.0, 1 - mu * mu)) * d;
}

int VelocityLattice::stencil(const Vec3& v, int idx[8], double wt[8]) const {
    double q[3];
    if (kind_ == Kind::Spherical) {
        double r = v.norm();
        q[0] = r;
        q[1] = r > 0 ? v.z() / r : 0.0;
        double th = std::atan2(v.y(), v.x());
        if (th < 0) th += 2 * pi;
        q[2] = th;
    } else {
        q[0] = v.x();
        q[1] = v.y();
        q[2] = v.z();
    }
    int i0[3], i1[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
        double d = (hi_[a] - lo_[a]) / n_[a];
        double f = (q[a] - lo_[a]) / d - 0.5;
        bool periodic = kind_ == Kind::Spherical && a == 2;
        if (periodic) {
            double fl = std::floor(f);
            int m = static_cast<int>(fl);
            i0[a] = ((m % n_[a]) + n_[a]) % n_[a];
            i1[a] = (i0[a] + 1) % n_[a];
            t[a] = f - fl;
        } else if (n_[a] == 1) {
            i0[a] = i1[a] = 0;
            t[a] = 0;
        } else {
            int m = std::clamp(static_cast<int>(std::floor(f)), 0, n_[a] - 2);
            i0[a] = m;
            i1[a] = m + 1;
            t[a] = std::clamp(f - m, 0.0, 1.0);
        }
    }
    int c = 0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int e = 0; e < 2; ++e) {
                idx[c] = index(a ? i1[0] : i0[0], b ? i1[1] : i0[1], e ? i1[2] : i0[2]);
                wt[c] = (a ? t[0] : 1 - t[0]) * (b ? t[1] : 1 - t[1]) * (e ? t[2] : 1 - t[2]);
                ++c;
            }
    return 8;
}

// ---------------------------------------------------------------- grid

namespace {

// Newton projection onto {phi = 0} along the gradient. Returns false if it
// fails to land within boundary_tol.
bool project_to_boundary(const Domain& d, const Vec3& x, Vec3& p) {
    p = x;
    for (int it = 0; it < 60; ++it) {
        double f = d.phi(p);
        Vec3 g = d.grad(p);
        double gg = g.squaredNorm();
        if (gg < 1e-20) return false;
        Vec3 step = (f / gg) * g;
        p -= step;
        if (step.norm() < 1e-15 * (1 + p.norm())) break;
    }
    // Land on the closed domain side.
    for (int it = 0; it < 5 && d.phi(p) > 0; ++it) {
        Vec3 g = d.grad(p);
        p -= (2 * d.phi(p) / g.squaredNorm()) * g;
    }
    return std::abs(d.phi(p)) <= d.boundary_tol();
}

}  // namespace

PhaseGrid::PhaseGrid(DomainPtr domain, const GridSpec& spec, VelocityLattice vel)
    : domain_(std::move(domain)), vel_(std::move(vel)) {
    if (!domain_) throw ConfigError("grid needs a domain");
    if (!(spec.h > 0)) throw ConfigError("solver.grid.h must be positive");
    if (spec.n_t < 1) throw ConfigError("solver.grid.n_t must be >= 1");
    if (!(spec.T > 0)) throw ConfigError("solver.T must be positive");
    Vec3 lo = domain_->box_lo(), hi = domain_->box_hi();
    for (int a = 0; a < 3; ++a) {
        double len = hi[a] - lo[a] + 2 * spec.pad_cells * spec.h;
        // Odd counts keep a node at the box center, so grids at h and h/2
        // share the coarse nodes.
        n_[a] = std::max(3, static_cast<int>(std::ceil(len / spec.h - 1e-9)));
        if (n_[a] % 2 == 0) ++n_[a];
        h_[a] = spec.h;
        lo_[a] = 0.5 * (lo[a] + hi[a]) - 0.5 * n_[a] * spec.h;
    }
    times_.resize(spec.n_t + 1);
    for (int m = 0; m <= spec.n_t; ++m) times_[m] = spec.T * m / spec.n_t;
    classify();
}

PhaseGrid::PhaseGrid(const Vec3& lo, const Vec3& hi, int n_per_axis, VelocityLattice vel, int n_t, double T)
    : vel_(std::move(vel)) {
    for (int a = 0; a < 3; ++a) {
        n_[a] = n_per_axis;
        h_[a] = (hi[a] - lo[a]) / n_per_axis;
        lo_[a] = lo[a];
    }
    if (n_t > 0) {
        times_.resize(n_t + 1);
        for (int m = 0; m <= n_t; ++m) times_[m] = T * m / n_t;
    } else {
        times_ = {0.0};
    }
    classify();
}

Vec3 PhaseGrid::node_x(int s) const {
    auto c = spatial_coords(s);
    return Vec3(lo_[0] + (c[0] + 0.5) * h_[0], lo_[1] + (c[1] + 0.5) * h_[1], lo_[2] + (c[2] + 0.5) * h_[2]);
}

void PhaseGrid::classify() {
    const int ns = n_spatial();
    kind_.assign(ns, NodeKind::Outside);
    valued_id_.assign(ns, -1);
    std::vector<Vec3> proj(ns, Vec3::Constant(nan));
    std::vector<std::uint8_t> proj_ok(ns, 0);
    const double hm = h_max();
    parallel_for(static_cast<std::size_t>(ns), [&](std::size_t s) {
        Vec3 x = node_x(static_cast<int>(s));
        if (!domain_) {
            kind_[s] = NodeKind::Inside;
            return;
        }
        Vec3 p;
        bool ok = project_to_boundary(*domain_, x, p);
        proj_ok[s] = ok;
        proj[s] = p;
        if (domain_->phi(x) <= 0)
            kind_[s] = NodeKind::Inside;
        else if (ok && (p - x).norm() <= 2 * hm)
            kind_[s] = NodeKind::Ghost;
    });
    for (int s = 0; s < ns; ++s) {
        if (kind_[s] == NodeKind::Outside) continue;
        valued_id_[s] = static_cast<int>(valued_.size());
        valued_.push_back(s);
    }
    const int nv = n_valued();
    eval_point_.resize(nv);
    vol_frac_.assign(nv, 1.0);
    band_.assign(nv, 0);
    band_normal_.assign(nv, Vec3::Constant(nan));
    parallel_for(static_cast<std::size_t>(nv), [&](std::size_t id) {
        int s = valued_[id];
        Vec3 x = node_x(s);
        eval_point_[id] = kind_[s] == NodeKind::Ghost ? proj[s] : x;
        if (!domain_) return;
        if (proj_ok[s] && (proj[s] - x).norm() <= 2.5 * hm) {
            band_[id] = 1;
            band_normal_[id] = outward_normal(*domain_, proj[s]);
        }
        int inside = 0;
        const int q = 4;
        for (int a = 0; a < q; ++a)
            for (int b = 0; b < q; ++b)
                for (int c = 0; c < q; ++c) {
                    Vec3 y = x + Vec3((a + 0.5) / q - 0.5, (b + 0.5) / q - 0.5, (c + 0.5) / q - 0.5)
                                     .cwiseProduct(Vec3(h_[0], h_[1], h_[2]));
                    if (domain_->phi(y) < 0) ++inside;
                }
        vol_frac_[id] = static_cast<double>(inside) / (q * q * q);
    });
}

int PhaseGrid::spatial_stencil(const Vec3& x, int ids[8], double wt[8]) const {
    int i0[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
        double f = (x[a] - lo_[a]) / h_[a] - 0.5;
        int m = std::clamp(static_cast<int>(std::floor(f)), 0, n_[a] - 2);
        i0[a] = m;
        t[a] = std::clamp(f - m, 0.0, 1.0);
    }
    int c = 0;
    double total = 0;
    int best = -1;
    double best_d = inf;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int e = 0; e < 2; ++e) {
                int s = spatial_index(i0[0] + a, i0[1] + b, i0[2] + e);
                int id = valued_id_[s];
                if (id < 0) continue;
                double w = (a ? t[0] : 1 - t[0]) * (b ? t[1] : 1 - t[1]) * (e ? t[2] : 1 - t[2]);
                double dd = (a ? 1 - t[0] : t[0]) + (b ? 1 - t[1] : t[1]) + (e ? 1 - t[2] : t[2]);
                if (dd < best_d) {
                    best_d = dd;
                    best = id;
                }
                if (w <= 0) continue;
                ids[c] = id;
                wt[c] = w;
                total += w;
                ++c;
            }
    if (c == 0 || total < 1e-12) {
        if (best < 0) return 0;
        ids[0] = best;
        wt[0] = 1.0;
        return 1;
    }
    for (int i = 0; i < c; ++i) wt[i] /= total;
    return c;
}

void PhaseGrid::time_locate(double t, int& m, double& theta) const {
    int nt = static_cast<int>(times_.size()) - 1;
    if (nt <= 0) {
        m = 0;
        theta = 0;
        return;
    }
    double f = t / times_.back() * nt;
    m = std::clamp(static_cast<int>(std::floor(f)), 0, nt - 1);
    theta = std::clamp(f - m, 0.0, 1.0);
}

// ---------------------------------------------------------------- field

PhaseField::PhaseField(GridPtr grid, int n_times, double lambda, double fill)
    : grid_(std::move(grid)), n_times_(n_times), lambda_(lambda) {
    values_.assign(static_cast<std::size_t>(n_times) * grid_->n_nodes(), fill);
}

double PhaseField::time_weights(double t, int& m, double& w0, double& w1) const {
    if (n_times_ == 1) {
        m = 0;
        w0 = 1;
        w1 = 0;
        return 0;
    }
    double th;
    grid_->time_locate(t, m, th);
    const auto& ts = grid_->times();
    w0 = (1 - th) * std::exp(lambda_ * (ts[m] - t));
    w1 = th * std::exp(lambda_ * (ts[m + 1] - t));
    return th;
}

double PhaseField::interp(double t, const Vec3& x, int k) const {
    int ids[8];
    double wt[8];
    int c = grid_->spatial_stencil(x, ids, wt);
    if (c == 0) return nan;
    int m;
    double w0, w1;
    time_weights(t, m, w0, w1);
    double s = 0;
    for (int i = 0; i < c; ++i) {
        double a = at(m, ids[i], k);
        if (w1 != 0) a = w0 * a + w1 * at(m + 1, ids[i], k); else a *= w0;
        s += wt[i] * a;
    }
    return s;
}

double PhaseField::interp(double t, const Vec3& x, const Vec3& v) const {
    int vk[8];
    double vw[8];
    int nv = grid_->vel().stencil(v, vk, vw);
    double s = 0;
    for (int i = 0; i < nv; ++i)
        if (vw[i] != 0) s += vw[i] * interp(t, x, vk[i]);
    return s;
}

double PhaseField::interp_level(int m, const Vec3& x, const Vec3& v) const {
    int ids[8], vk[8];
    double wt[8], vw[8];
    int c = grid_->spatial_stencil(x, ids, wt);
    if (c == 0) return nan;
    int nv = grid_->vel().stencil(v, vk, vw);
    double s = 0;
    for (int j = 0; j < nv; ++j) {
        if (vw[j] == 0) continue;
        for (int i = 0; i < c; ++i) s += vw[j] * wt[i] * at(m, ids[i], vk[j]);
    }
    return s;
}

double PhaseField::sup_norm() const {
    double s = 0;
    for (double v : values_) s = std::max(s, std::abs(v));
    return s;
}

double PhaseField::sup_norm(int m) const {
    double s = 0;
    std::size_t n = grid_->n_nodes();
    for (std::size_t i = 0; i < n; ++i) s = std::max(s, std::abs(values_[m * n + i]));
    return s;
}

double PhaseField::sup_diff(const PhaseField& other) const {
    double s = 0;
    for (std::size_t i = 0; i < values_.size(); ++i) s = std::max(s, std::abs(values_[i] - other.values_[i]));
    return s;
}

}  // namespace ntk
