#include "ntk/geometry.hpp"

#include "ntk/quadrature.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ntk {

Domain::Domain(std::string name, double bounding_radius, Vec3 lo, Vec3 hi, SurfacePatchMap surface)
    : name_(std::move(name)),
      bounding_radius_(bounding_radius),
      box_lo_(std::move(lo)),
      box_hi_(std::move(hi)),
      surface_(std::move(surface)) {
    // Rejection envelope for uniform boundary sampling.
    double m = 0;
    const int n = 200;
    for (int i = 0; i <= n; ++i) {
        for (int j = 0; j <= n; ++j) {
            double u = surface_.u_lo + (surface_.u_hi - surface_.u_lo) * i / n;
            double w = surface_.w_lo + (surface_.w_hi - surface_.w_lo) * j / n;
            m = std::max(m, surface_.area_element(u, w));
        }
    }
    max_area_element_ = 1.05 * m;
}

std::vector<BoundaryQuadNode> Domain::boundary_quadrature(int n_u, int n_w) const {
    std::vector<double> us, uw, ws, ww;
    auto axis = [](int n, double lo, double hi, bool periodic, std::vector<double>& x, std::vector<double>& w) {
        if (periodic) {
            x.resize(n);
            w.assign(n, (hi - lo) / n);
            for (int i = 0; i < n; ++i) x[i] = lo + (i + 0.5) * (hi - lo) / n;
        } else {
            gauss_on(n, lo, hi, x, w);
        }
    };
    axis(n_u, surface_.u_lo, surface_.u_hi, surface_.u_periodic, us, uw);
    axis(n_w, surface_.w_lo, surface_.w_hi, surface_.w_periodic, ws, ww);
    std::vector<BoundaryQuadNode> out;
    out.reserve(static_cast<std::size_t>(n_u) * n_w);
    for (int i = 0; i < n_u; ++i) {
        for (int j = 0; j < n_w; ++j) {
            Vec3 x = surface_.point(us[i], ws[j]);
            out.push_back({x, outward_normal(*this, x), uw[i] * ww[j] * surface_.area_element(us[i], ws[j])});
        }
    }
    return out;
}

double Domain::boundary_area(int n) const {
    double a = 0;
    for (const auto& q : boundary_quadrature(n, n)) a += q.weight;
    return a;
}

Vec3 Domain::sample_boundary(Rng& rng) const {
    for (;;) {
        double u = rng.uniform(surface_.u_lo, surface_.u_hi);
        double w = rng.uniform(surface_.w_lo, surface_.w_hi);
        if (rng.uniform() * max_area_element_ <= surface_.area_element(u, w)) return surface_.point(u, w);
    }
}

Vec3 Domain::sample_interior(Rng& rng) const {
    for (;;) {
        Vec3 x(rng.uniform(box_lo_.x(), box_hi_.x()), rng.uniform(box_lo_.y(), box_hi_.y()),
               rng.uniform(box_lo_.z(), box_hi_.z()));
        if (phi(x) < 0.0) return x;
    }
}

namespace {

class Ball final : public Domain {
public:
    explicit Ball(double rho)
        : Domain("ball", rho, Vec3::Constant(-rho), Vec3::Constant(rho), surface(rho)), rho_(rho) {}
    double phi(const Vec3& x) const override { return x.squaredNorm() - rho_ * rho_; }
    Vec3 grad(const Vec3& x) const override { return 2.0 * x; }
    Mat3 hess(const Vec3&) const override { return 2.0 * Mat3::Identity(); }

private:
    static SurfacePatchMap surface(double rho) {
        SurfacePatchMap s;
        // u: azimuth, w: cosine of the polar angle.
        s.point = [rho](double u, double w) {
            double sw = std::sqrt(std::max(0.0, 1.0 - w * w));
            return Vec3(rho * sw * std::cos(u), rho * sw * std::sin(u), rho * w);
        };
        s.area_element = [rho](double, double) { return rho * rho; };
        s.u_lo = 0;
        s.u_hi = 2 * pi;
        s.u_periodic = true;
        s.w_lo = -1;
        s.w_hi = 1;
        return s;
    }
    double rho_;
};

class Torus final : public Domain {
public:
    Torus(double R, double r)
        : Domain("torus", R + r, Vec3(-(R + r), -(R + r), -r), Vec3(R + r, R + r, r), surface(R, r)),
          R_(R),
          r_(r) {}

    double phi(const Vec3& x) const override {
        double rho = std::hypot(x.x(), x.y());
        return (rho - R_) * (rho - R_) + x.z() * x.z() - r_ * r_;
    }
    Vec3 grad(const Vec3& x) const override {
        double rho = std::hypot(x.x(), x.y());
        if (rho < 1e-300) return Vec3(0, 0, 2 * x.z());
        double f = 2 * (rho - R_) / rho;
        return Vec3(f * x.x(), f * x.y(), 2 * x.z());
    }
    Mat3 hess(const Vec3& x) const override {
        double rho = std::hypot(x.x(), x.y());
        Mat3 h = Mat3::Zero();
        h(2, 2) = 2;
        if (rho < 1e-300) return h;
        double xy[2] = {x.x(), x.y()};
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                double xx = xy[i] * xy[j];
                h(i, j) = 2 * xx / (rho * rho) + 2 * (rho - R_) * ((i == j ? 1.0 : 0.0) / rho - xx / (rho * rho * rho));
            }
        }
        return h;
    }

private:
    static SurfacePatchMap surface(double R, double r) {
        SurfacePatchMap s;
        s.point = [R, r](double u, double w) {
            double q = R + r * std::cos(w);
            return Vec3(q * std::cos(u), q * std::sin(u), r * std::sin(w));
        };
        s.area_element = [R, r](double, double w) { return r * (R + r * std::cos(w)); };
        s.u_lo = 0;
        s.u_hi = 2 * pi;
        s.u_periodic = true;
        s.w_lo = 0;
        s.w_hi = 2 * pi;
        s.w_periodic = true;
        return s;
    }
    double R_, r_;
};

class Peanut final : public Domain {
public:
    explicit Peanut(double c)
        : Domain("peanut", extent(c), box(c, true), box(c, false), surface(c)), c_(c) {}

    double phi(const Vec3& x) const override {
        double s = x.squaredNorm();
        return s * s - s + c_ * x.x() * x.x();
    }
    Vec3 grad(const Vec3& x) const override {
        double s = x.squaredNorm();
        Vec3 g = (4 * s - 2) * x;
        g.x() += 2 * c_ * x.x();
        return g;
    }
    Mat3 hess(const Vec3& x) const override {
        double s = x.squaredNorm();
        Mat3 h = (4 * s - 2) * Mat3::Identity() + 8 * x * x.transpose();
        h(0, 0) += 2 * c_;
        return h;
    }

private:
    static double radius2(double c, double alpha) {
        double ca = std::cos(alpha);
        return 1 - c * ca * ca;
    }
    static double extent(double c) { return std::sqrt(std::max(1.0, 1 - c)); }
    static Vec3 box(double c, bool lo) {
        // Axial half-length sqrt(1 - c); transverse radius bounded by the
        // maximum of r(alpha) sin(alpha), which is <= extent.
        double ax = std::sqrt(1 - c);
        double tr = 0;
        for (int i = 0; i <= 2000; ++i) {
            double a = pi * i / 2000;
            tr = std::max(tr, std::sqrt(radius2(c, a)) * std::sin(a));
        }
        tr *= 1.001;
        Vec3 b(ax * 1.001, tr, tr);
        return lo ? Vec3(-b) : b;
    }
    static SurfacePatchMap surface(double c) {
        SurfacePatchMap s;
        // u: azimuth about the x1 axis, w: polar angle from +x1.
        s.point = [c](double u, double w) {
            double r = std::sqrt(radius2(c, w));
            return Vec3(r * std::cos(w), r * std::sin(w) * std::cos(u), r * std::sin(w) * std::sin(u));
        };
        s.area_element = [c](double, double w) {
            double r = std::sqrt(radius2(c, w));
            double dr = c * std::sin(w) * std::cos(w) / r;
            return r * std::sin(w) * std::sqrt(r * r + dr * dr);
        };
        s.u_lo = 0;
        s.u_hi = 2 * pi;
        s.u_periodic = true;
        s.w_lo = 0;
        s.w_hi = pi;
        return s;
    }
    double c_;
};

class Implicit final : public Domain {
public:
    explicit Implicit(ImplicitSpec s)
        : Domain(s.name, s.bounding_radius, s.box_lo, s.box_hi, s.surface),
          phi_(std::move(s.phi)),
          grad_(std::move(s.grad)),
          hess_(std::move(s.hess)) {}
    double phi(const Vec3& x) const override { return phi_(x); }
    Vec3 grad(const Vec3& x) const override { return grad_(x); }
    Mat3 hess(const Vec3& x) const override { return hess_(x); }

private:
    std::function<double(const Vec3&)> phi_;
    std::function<Vec3(const Vec3&)> grad_;
    std::function<Mat3(const Vec3&)> hess_;
};

std::string fmt_state(const Vec3& x, const Vec3& v) {
    std::ostringstream os;
    os.precision(17);
    os << "x=(" << x.x() << "," << x.y() << "," << x.z() << ") v=(" << v.x() << "," << v.y() << "," << v.z() << ")";
    return os.str();
}

}  // namespace

std::shared_ptr<Domain> make_ball(double radius) {
    if (!(radius > 0)) throw ConfigError("ball radius must be positive");
    return std::make_shared<Ball>(radius);
}

std::shared_ptr<Domain> make_torus(double major, double minor) {
    if (!(minor > 0) || !(major > minor)) throw ConfigError("torus needs major > minor > 0");
    return std::make_shared<Torus>(major, minor);
}

std::shared_ptr<Domain> make_peanut(double c) {
    if (!(c < 1)) throw ConfigError("peanut parameter c must be < 1");
    return std::make_shared<Peanut>(c);
}

std::shared_ptr<Domain> make_implicit(ImplicitSpec spec) { return std::make_shared<Implicit>(std::move(spec)); }

Vec3 outward_normal(const Domain& d, const Vec3& x) {
    Vec3 g = d.grad(x);
    double gn = g.norm();
    if (gn < 1e-10) throw DegenerateGradient("|grad phi| < 1e-10 at " + fmt_state(x, Vec3::Zero()));
    return g / gn;
}

CurvatureInfo strict_nonconvexity(const Domain& d, const Vec3& x) {
    Vec3 g = d.grad(x);
    double gn = g.norm();
    if (gn < 1e-10) throw DegenerateGradient("|grad phi| < 1e-10");
    Vec3 n = g / gn, t1, t2;
    tangent_frame(n, t1, t2);
    Mat3 h = d.hess(x);
    Eigen::Matrix2d ii;
    ii(0, 0) = t1.dot(h * t1) / gn;
    ii(0, 1) = ii(1, 0) = t1.dot(h * t2) / gn;
    ii(1, 1) = t2.dot(h * t2) / gn;
    double kmin = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(ii, Eigen::EigenvaluesOnly).eigenvalues()(0);
    return {kmin, kmin < -d.curv_tol};
}

ExitRecord backward_exit(const Domain& d, const Vec3& x, const Vec3& v) {
    const double vn = v.norm();
    if (!(vn > 0)) throw InvalidState("backward_exit needs |v| > 0");
    const double btol = d.boundary_tol();
    auto f = [&](double s) { return d.phi(x - s * v); };

    auto finish = [&](double t) {
        ExitRecord rec;
        rec.t_exit = t;
        rec.x_exit = x - t * v;
        Vec3 n = outward_normal(d, rec.x_exit);
        rec.normal_dot_v = n.dot(v);
        rec.grazing = std::abs(rec.normal_dot_v) <= d.graze_tol * vn;
        return rec;
    };

    double f0 = f(0);
    if (f0 > btol) throw InvalidState("exit query from outside the domain: " + fmt_state(x, v));

    double s_lo = 0;
    const double ds = d.march_step() / vn;
    // Isolated degenerate zeros of phi (the peanut's origin) are interior
    // points: a boundary point needs a nonvanishing gradient.
    auto regular = [&](const Vec3& y) { return d.grad(y).norm() >= 1e-8; };
    const bool boundary_start = f0 >= -btol && regular(x);
    if (boundary_start) {
        // Starting on the boundary: leave at once unless the backward ray
        // enters the domain (transversally or by concave tangency).
        Vec3 g = d.grad(x);
        double slope = -g.dot(v);
        if (slope > d.graze_tol * g.norm() * vn) return finish(0);
        if (slope >= -d.graze_tol * g.norm() * vn && v.dot(d.hess(x) * v) >= 0) return finish(0);
        bool found = false;
        for (int k = 40; k >= 0; --k) {
            double s = ds * std::ldexp(1.0, -k);
            if (f(s) < 0) {
                s_lo = s;
                found = true;
                break;
            }
        }
        if (!found) return finish(0);
    }

    // A ray can also leave the open domain by touching the boundary
    // tangentially from inside (phi has a local maximum of zero). Sampled
    // local maxima are refined whenever the true maximum could come within
    // boundary_tol of zero.
    auto touch_point = [&](double a, double b) {
        auto df = [&](double s) { return -d.grad(x - s * v).dot(v); };
        for (int it = 0; it < 60; ++it) {
            double m = 0.5 * (a + b);
            if (m <= a || m >= b) break;
            if (df(m) > 0) a = m; else b = m;
        }
        return 0.5 * (a + b);
    };

    const double s_max = 2.0 * d.bounding_radius() / vn;
    double s_hi = s_lo;
    // On a boundary start the first sample sits next to the start point and
    // must not be mistaken for a tangential touch.
    double s_prev = s_lo, f_prev = boundary_start ? inf : -inf, f_lo = f(s_lo);
    for (;;) {
        s_hi = s_lo + ds;
        double f_hi = f(s_hi);
        if (f_hi > 0) break;
        if (f_lo >= f_prev && f_lo >= f_hi) {
            double curv = d.hess(x - s_lo * v).norm() * vn * vn;
            if (f_lo + curv * ds * ds >= -btol) {
                double s_star = touch_point(s_prev, s_hi);
                if (f(s_star) >= -btol && regular(x - s_star * v)) return finish(s_star);
            }
        }
        s_prev = s_lo;
        f_prev = f_lo;
        s_lo = s_hi;
        f_lo = f_hi;
        if (s_lo > s_max + ds) throw NoExit("no sign change within 2R/|v|: " + fmt_state(x, v));
    }

    for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (s_lo + s_hi);
        if (mid <= s_lo || mid >= s_hi) break;
        if (f(mid) > 0)
            s_hi = mid;
        else
            s_lo = mid;
    }
    double t = 0.5 * (s_lo + s_hi);
    for (int it = 0; it < 3; ++it) {
        double ft = f(t);
        double dft = -d.grad(x - t * v).dot(v);
        if (ft == 0 || dft == 0) break;
        double tn = t - ft / dft;
        if (!(tn >= s_lo && tn <= s_hi)) break;
        if (std::abs(f(tn)) > std::abs(ft)) break;
        t = tn;
    }
    return finish(t);
}

ExitRecord forward_exit(const Domain& d, const Vec3& x, const Vec3& v) { return backward_exit(d, x, Vec3(-v)); }

ExitGradients backward_exit_gradients(const Domain& d, const Vec3& x, const Vec3& v) {
    ExitRecord e = backward_exit(d, x, v);
    Vec3 n = outward_normal(d, e.x_exit);
    double nv = n.dot(v);
    if (std::abs(nv) <= d.graze_tol * v.norm()) throw GrazingNormal("exit-time gradient at a grazing foot point");
    return {n / nv, -e.t_exit * n / nv};
}

GammaClass classify_gamma(const Domain& d, const Vec3& x, const Vec3& v) {
    double nv = outward_normal(d, x).dot(v);
    double band = d.graze_tol * v.norm();
    if (nv > band) return GammaClass::Outgoing;
    if (nv < -band) return GammaClass::Incoming;
    return GammaClass::Grazing;
}

bool in_singular_set(const Domain& d, const PhaseState& s, double tol) {
    ExitRecord e = backward_exit(d, s.x, s.v);
    return std::abs(e.normal_dot_v) <= tol * s.v.norm();
}

bool concave_grazing(const Domain& d, const Vec3& x, const Vec3& v) {
    if (classify_gamma(d, x, v) != GammaClass::Grazing) throw NotGrazing(fmt_state(x, v));
    return backward_exit(d, x, v).t_exit > d.time_tol && backward_exit(d, x, Vec3(-v)).t_exit > d.time_tol;
}

}  // namespace ntk
