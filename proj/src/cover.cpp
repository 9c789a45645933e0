#include "ntk/cover.hpp"

#include "ntk/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ntk {

// ---------------------------------------------------------------- charts

double Chart::eta(double q1, double q2) const {
    const auto& c = coef;
    return c[0] + c[1] * q1 + c[2] * q2 + c[3] * q1 * q1 + c[4] * q1 * q2 + c[5] * q2 * q2;
}

void Chart::grad_eta(double q1, double q2, double& g1, double& g2) const {
    const auto& c = coef;
    g1 = c[1] + 2 * c[3] * q1 + c[4] * q2;
    g2 = c[2] + c[4] * q1 + 2 * c[5] * q2;
}

Vec3 Chart::point(double q1, double q2) const { return origin + q1 * e1 + q2 * e2 + eta(q1, q2) * e3; }

Vec3 Chart::normal(double q1, double q2) const {
    double g1, g2;
    grad_eta(q1, q2, g1, g2);
    return (g1 * e1 + g2 * e2 - e3).normalized();
}

double Chart::gradient_bound() const {
    double worst = 0;
    for (double s1 : {-half_width, half_width})
        for (double s2 : {-half_width, half_width}) {
            double g1, g2;
            grad_eta(s1, s2, g1, g2);
            worst = std::max(worst, std::abs(g1) + std::abs(g2));
        }
    return worst;
}

bool Chart::locate(const Vec3& p, double tol, double& q1, double& q2) const {
    Vec3 d = p - origin;
    q1 = d.dot(e1);
    q2 = d.dot(e2);
    const double lim = half_width * (1 + 1e-12);
    if (std::abs(q1) > lim || std::abs(q2) > lim) return false;
    return std::abs(d.dot(e3) - eta(q1, q2)) <= tol;
}

// ------------------------------------------------------------- hash grid

PointHash::PointHash(double cell, const std::vector<Vec3>& pts) : cell_(cell) {
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Vec3& p = pts[i];
        cells_[key(static_cast<int>(std::floor(p.x() / cell_)), static_cast<int>(std::floor(p.y() / cell_)),
                   static_cast<int>(std::floor(p.z() / cell_)))]
            .push_back(static_cast<int>(i));
    }
}

std::int64_t PointHash::key(int i, int j, int k) const {
    constexpr std::int64_t off = 1 << 20;
    return ((i + off) << 42) | ((j + off) << 21) | (k + off);
}

void PointHash::append_cell(int i, int j, int k, std::vector<std::int64_t>& keys) const {
    for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b)
            for (int c = -1; c <= 1; ++c) keys.push_back(key(i + a, j + b, k + c));
}

void PointHash::near(const Vec3& p, std::vector<int>& out) const {
    out.clear();
    std::vector<std::int64_t> keys;
    append_cell(static_cast<int>(std::floor(p.x() / cell_)), static_cast<int>(std::floor(p.y() / cell_)),
                static_cast<int>(std::floor(p.z() / cell_)), keys);
    for (auto k : keys) {
        auto it = cells_.find(k);
        if (it != cells_.end()) out.insert(out.end(), it->second.begin(), it->second.end());
    }
}

void PointHash::along(const Vec3& a, const Vec3& b, std::vector<int>& out) const {
    out.clear();
    const double len = (b - a).norm();
    const int n = std::max(1, static_cast<int>(std::ceil(len / (0.25 * cell_))));
    std::vector<std::int64_t> keys;
    int last[3] = {INT32_MIN, INT32_MIN, INT32_MIN};
    for (int s = 0; s <= n; ++s) {
        Vec3 p = a + (b - a) * (static_cast<double>(s) / n);
        int c[3] = {static_cast<int>(std::floor(p.x() / cell_)), static_cast<int>(std::floor(p.y() / cell_)),
                    static_cast<int>(std::floor(p.z() / cell_))};
        if (c[0] == last[0] && c[1] == last[1] && c[2] == last[2]) continue;
        std::copy(c, c + 3, last);
        append_cell(c[0], c[1], c[2], keys);
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    for (auto k : keys) {
        auto it = cells_.find(k);
        if (it != cells_.end()) out.insert(out.end(), it->second.begin(), it->second.end());
    }
}

// ----------------------------------------------------------------- atlas

namespace {

constexpr double kGradientCap = 0.125;
constexpr int kFitGrid = 7;

Vec3 project_to_boundary(const Domain& d, Vec3 p) {
    const double tol = 0.25 * d.boundary_tol();
    for (int it = 0; it < 60; ++it) {
        double f = d.phi(p);
        if (std::abs(f) <= tol) break;
        Vec3 g = d.grad(p);
        double g2 = g.squaredNorm();
        if (g2 < 1e-24) break;
        p -= (f / g2) * g;
    }
    return p;
}

// Height of the boundary above (q1, q2) along e3, by Newton from z = 0.
bool graph_height(const Domain& d, const Vec3& base, const Vec3& e3, double& z) {
    z = 0;
    const double tol = d.boundary_tol();
    for (int it = 0; it < 40; ++it) {
        Vec3 p = base + z * e3;
        double f = d.phi(p);
        if (std::abs(f) <= tol) return true;
        double slope = d.grad(p).dot(e3);
        if (!(slope < -1e-12)) return false;
        double step = f / slope;
        z -= step;
        if (std::abs(step) < 1e-15) return std::abs(d.phi(base + z * e3)) <= 1e3 * tol;
    }
    return false;
}

bool fit_quadratic(const Domain& d, Chart& c) {
    const int n = kFitGrid;
    Eigen::MatrixXd A(n * n, 6);
    Eigen::VectorXd z(n * n);
    int row = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double q1 = c.half_width * (2.0 * i / (n - 1) - 1);
            double q2 = c.half_width * (2.0 * j / (n - 1) - 1);
            double h;
            if (!graph_height(d, c.origin + q1 * c.e1 + q2 * c.e2, c.e3, h)) return false;
            A.row(row) << 1, q1, q2, q1 * q1, q1 * q2, q2 * q2;
            z(row) = h;
            ++row;
        }
    Eigen::VectorXd x = A.colPivHouseholderQr().solve(z);
    for (int k = 0; k < 6; ++k) c.coef[k] = x(k);
    c.residual = std::sqrt((A * x - z).squaredNorm() / (n * n));
    Eigen::Matrix2d H;
    H << 2 * x(3), x(4), x(4), 2 * x(5);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(H);
    c.c_eta = es.eigenvalues().cwiseAbs().maxCoeff();
    return true;
}

}  // namespace

Chart fit_chart(const Domain& d, const Vec3& center, double theta) {
    if (!(theta > 0)) throw ConfigError("atlas.theta must be positive");
    Chart c;
    c.origin = project_to_boundary(d, center);
    Vec3 n = outward_normal(d, c.origin);
    c.e3 = -n;
    tangent_frame(n, c.e1, c.e2);
    c.half_width = theta;
    const double min_width = theta / 16;
    const double max_residual = 1e-4 * theta * theta;
    for (int it = 0; it < 60; ++it) {
        bool ok = fit_quadratic(d, c);
        if (ok) {
            double gb = c.gradient_bound();
            if (gb <= kGradientCap && c.residual <= max_residual) return c;
            // The gradient scales like the width, the misfit like its cube.
            double f = 0.9;
            if (gb > kGradientCap) f = std::min(f, 0.97 * kGradientCap / gb);
            if (c.residual > max_residual) f = std::min(f, 0.97 * std::cbrt(max_residual / c.residual));
            c.half_width *= std::max(f, 0.3);
        } else {
            c.half_width *= 0.7;
        }
        if (c.half_width < min_width) break;
    }
    std::ostringstream os;
    os << "no patch of half-width >= " << min_width << " around (" << c.origin.transpose()
       << ") is a graph with sum |d eta| <= 1/8 and rms misfit <= 1e-4 theta^2 (last misfit " << c.residual
       << ")";
    throw FitFailure(os.str());
}

bool BoundaryAtlas::covers(const Vec3& p) const {
    std::vector<int> ids;
    lookup.near(p, ids);
    for (int id : ids) {
        const Chart& c = charts[id];
        double q1, q2;
        if (c.locate(p, 1e-3 * c.half_width + 10 * c.residual, q1, q2)) return true;
    }
    return false;
}

BoundaryAtlas build_atlas(const DomainPtr& domain, double theta, std::uint64_t seed) {
    if (!domain) throw ConfigError("atlas.domain is required");
    if (!(theta > 0)) throw ConfigError("atlas.theta must be positive");
    BoundaryAtlas atlas;
    atlas.domain = domain;
    atlas.theta = theta;
    const Domain& d = *domain;
    Rng rng(seed);

    // Chart origins live in a grid of cell 1.5 theta; a chart's patch spans
    // at most sqrt(2) theta from its origin, so the 27 neighbor cells of a
    // point hold every chart that can contain it.
    const double cell = 1.5 * theta;
    std::unordered_map<std::int64_t, std::vector<int>> grid;
    auto cell_of = [&](const Vec3& p, int c[3]) {
        for (int a = 0; a < 3; ++a) c[a] = static_cast<int>(std::floor(p[a] / cell));
    };
    auto key = [](int i, int j, int k) {
        constexpr std::int64_t off = 1 << 20;
        return ((i + off) << 42) | ((j + off) << 21) | (k + off);
    };
    auto inner_covered = [&](const Vec3& p) {
        int c[3];
        cell_of(p, c);
        for (int a = -1; a <= 1; ++a)
            for (int b = -1; b <= 1; ++b)
                for (int e = -1; e <= 1; ++e) {
                    auto it = grid.find(key(c[0] + a, c[1] + b, c[2] + e));
                    if (it == grid.end()) continue;
                    for (int id : it->second) {
                        const Chart& ch = atlas.charts[id];
                        double q1, q2;
                        if (ch.locate(p, 1e-3 * ch.half_width + 10 * ch.residual, q1, q2) &&
                            std::max(std::abs(q1), std::abs(q2)) <= 0.75 * ch.half_width)
                            return true;
                    }
                }
        return false;
    };

    const int batch = 2000;
    for (int round = 0; round < 400; ++round) {
        int added = 0;
        for (int s = 0; s < batch; ++s) {
            Vec3 p = d.sample_boundary(rng);
            if (inner_covered(p)) continue;
            atlas.charts.push_back(fit_chart(d, p, theta));
            int c[3];
            cell_of(atlas.charts.back().origin, c);
            grid[key(c[0], c[1], c[2])].push_back(static_cast<int>(atlas.charts.size()) - 1);
            ++added;
        }
        if (added == 0) break;
    }
    std::vector<Vec3> origins;
    double widest = 0;
    for (const Chart& c : atlas.charts) {
        origins.push_back(c.origin);
        atlas.C_eta = std::max(atlas.C_eta, c.c_eta);
        widest = std::max(widest, c.half_width);
    }
    atlas.lookup = PointHash(1.5 * widest, origins);
    return atlas;
}

// ----------------------------------------------------------------- cover

namespace {
// The quick reject in site_contains bounds the offset of x from the site
// across w by 2.75 eps1 and 3.75 eps1, so the line passes within 4.65 eps1.
constexpr double kLineReach = 4.75;
}  // namespace

CoverStructure::CoverStructure(std::shared_ptr<const BoundaryAtlas> atlas, double eps, double eps1, double max_eps1)
    : atlas_(std::move(atlas)), eps_(eps), eps1_(eps1), max_eps1_(std::max(max_eps1, eps1)) {
    if (!atlas_) throw ConfigError("cover.atlas is required");
    if (!(eps > 0)) throw ConfigError("cover.epsilon must be positive");
    if (!(eps1 >= eps)) throw ConfigError("cover.epsilon1 must be >= cover.epsilon");
    std::vector<Vec3> origins;
    for (const Chart& ch : atlas_->charts) {
        const int k = static_cast<int>(std::floor(ch.half_width / eps + 1e-9));
        extent_.push_back(k);
        site_count_ += static_cast<std::size_t>(2 * k + 1) * (2 * k + 1);
        max_half_width_ = std::max(max_half_width_, ch.half_width);
        origins.push_back(ch.origin);
    }
    // A site can only accept x when the backward line passes within
    // kLineReach eps1 of its boundary point.
    chart_reach_ = std::sqrt(2.0) * max_half_width_ + max_half_width_ / 8;
    line_hash_ = PointHash((chart_reach_ + kLineReach * max_eps1_) / 0.75, origins);
}

CoverSite CoverStructure::site(int chart, int i, int j) const {
    const Chart& ch = atlas_->charts[chart];
    CoverSite s;
    s.chart = chart;
    s.c1 = eps_ * i;
    s.c2 = eps_ * j;
    s.y = ch.point(s.c1, s.c2);
    s.n = ch.normal(s.c1, s.c2);
    tangent_frame(s.n, s.t1, s.t2);
    return s;
}

int CoverStructure::angular_count() const { return static_cast<int>(std::ceil(2 * pi / eps_)); }

bool CoverStructure::cone_ok(const CoverSite& c, const Vec3& v, double eps1) const {
    const double r = v.norm();
    if (std::abs(v.dot(c.n)) > 8 * atlas_->C_eta * eps1 * std::max(r, 1.0)) return false;
    if (eps1 >= eps_) return true;  // the angular windows overlap
    double th = std::atan2(v.dot(c.t2), v.dot(c.t1));
    if (th < 0) th += 2 * pi;
    const int l = std::clamp(static_cast<int>(std::lround(th / eps_)), 0, angular_count());
    return std::abs(th - eps_ * l) <= eps1;
}

// Spatial part of a piece: x within the eps1-neighborhood of the chords
// {y' + tau w : y' over the rectangle, 0 <= tau <= t_f(y', w)} thickened by
// the normal layer |s| < eps1. The neighborhood is tested in the frame
// (w, n x w, w x (n x w)) against the bounding box of the rectangle image.
bool CoverStructure::site_contains(const CoverSite& c, const Vec3& x, const Vec3& w, double eps1) const {
    const Chart& ch = atlas_->charts[c.chart];
    const double hw = ch.half_width;
    Vec3 ep = c.n.cross(w);
    double en = ep.norm();
    ep = en > 1e-12 ? Vec3(ep / en) : c.t1;
    Vec3 eh = w.cross(ep);
    {
        // Every rectangle point is within sqrt(2) eps1 (plane) plus eps1 / 4
        // (height, from the gradient bound) of the site.
        Vec3 D = x - c.y;
        const double rr = 1.75 * eps1;
        if (std::abs(D.dot(ep)) > eps1 + rr || std::abs(D.dot(eh)) > 2 * eps1 + rr || D.dot(w) < -eps1 - rr)
            return false;
    }
    const double q1[3] = {std::max(c.c1 - eps1, -hw), c.c1, std::min(c.c1 + eps1, hw)};
    const double q2[3] = {std::max(c.c2 - eps1, -hw), c.c2, std::min(c.c2 + eps1, hw)};
    double amin = inf, amax = -inf, bmin = inf, bmax = -inf, hmin = inf, hmax = -inf;
    Vec3 pts[9];
    int k = 0;
    for (double a1 : q1)
        for (double a2 : q2) {
            pts[k] = ch.point(a1, a2);
            Vec3 D = x - pts[k];
            double a = D.dot(w), b = D.dot(ep), h = D.dot(eh);
            amin = std::min(amin, a);
            amax = std::max(amax, a);
            bmin = std::min(bmin, b);
            bmax = std::max(bmax, b);
            hmin = std::min(hmin, h);
            hmax = std::max(hmax, h);
            ++k;
        }
    if (bmin > eps1 || bmax < -eps1 || hmin > 2 * eps1 || hmax < -2 * eps1 || amax < -eps1) return false;
    if (amin <= eps1) return true;
    // Cap: the chord lengths from the center and the corners.
    const Domain& d = *atlas_->domain;
    for (int idx : {4, 0, 2, 6, 8}) {
        Vec3 p = project_to_boundary(d, pts[idx]);
        try {
            ExitRecord e = forward_exit(d, p, w);
            if (amin <= e.t_exit + eps1) return true;
        } catch (const Error&) {
        }
    }
    return false;
}

template <class Visit>
bool CoverStructure::scan(const PhaseState& s, double eps1, Visit&& visit) const {
    const double r = s.v.norm();
    const Vec3 w = s.v / r;
    const Domain& d = *atlas_->domain;
    std::vector<int> ids;

    // Charts whose patch comes near the backward line.
    const double reach = 2 * d.bounding_radius() + s.x.norm();
    const double lo = -3 * eps1;
    line_hash_.along(s.x - lo * w, s.x - reach * w, ids);
    const double R = kLineReach * eps1;
    for (int m : ids) {
        const Chart& ch = atlas_->charts[m];
        Vec3 D = s.x - ch.origin;
        double along = D.dot(w);
        const double reach_m = chart_reach_ + std::abs(ch.coef[0]) + R;
        if (D.squaredNorm() - along * along > reach_m * reach_m) continue;
        // Line p(tau) = x - tau w in chart coordinates, clipped to the slab
        // around the patch.
        const double A[3] = {D.dot(ch.e1), D.dot(ch.e2), D.dot(ch.e3)};
        const double B[3] = {w.dot(ch.e1), w.dot(ch.e2), w.dot(ch.e3)};
        const double lim[3] = {ch.half_width + R, ch.half_width + R, ch.half_width / 8 + std::abs(ch.coef[0]) + R};
        double t0 = lo, t1 = reach;
        for (int a = 0; a < 3 && t0 <= t1; ++a) {
            if (std::abs(B[a]) < 1e-14) {
                if (std::abs(A[a]) > lim[a]) t1 = t0 - 1;
                continue;
            }
            double ta = (A[a] - lim[a]) / B[a], tb = (A[a] + lim[a]) / B[a];
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
        }
        if (t0 > t1) continue;
        const double p0[2] = {A[0] - t0 * B[0], A[1] - t0 * B[1]};
        const double p1[2] = {A[0] - t1 * B[0], A[1] - t1 * B[1]};
        const int k = extent_[m];
        const int i0 = std::max(-k, static_cast<int>(std::floor((std::min(p0[0], p1[0]) - R) / eps_)));
        const int i1 = std::min(k, static_cast<int>(std::ceil((std::max(p0[0], p1[0]) + R) / eps_)));
        const int j0 = std::max(-k, static_cast<int>(std::floor((std::min(p0[1], p1[1]) - R) / eps_)));
        const int j1 = std::min(k, static_cast<int>(std::ceil((std::max(p0[1], p1[1]) + R) / eps_)));
        const double sx = p1[0] - p0[0], sy = p1[1] - p0[1], sl2 = sx * sx + sy * sy;
        for (int i = i0; i <= i1; ++i)
            for (int j = j0; j <= j1; ++j) {
                double cx = eps_ * i - p0[0], cy = eps_ * j - p0[1];
                double u = sl2 > 0 ? std::clamp((cx * sx + cy * sy) / sl2, 0.0, 1.0) : 0.0;
                double dx = cx - u * sx, dy = cy - u * sy;
                if (dx * dx + dy * dy > R * R) continue;
                CoverSite c = site(m, i, j);
                if (!cone_ok(c, s.v, eps1)) continue;
                if (site_contains(c, s.x, w, eps1) && visit(c)) return true;
            }
    }
    return false;
}

bool CoverStructure::contains(const PhaseState& s, double eps1) const {
    if (eps1 > max_eps1_ * (1 + 1e-12)) throw InvalidState("cover queried above its hash scale");
    const double r = s.v.norm();
    if (r < eps1) return true;
    if (empty_) return false;
    const Vec3 w = s.v / r;
    const Domain& d = *atlas_->domain;
    std::vector<int> ids;

    // Exact chord witness: the backward exit point lies in a rectangle.
    if (d.phi(s.x) <= d.boundary_tol()) {
        ExitRecord e;
        bool ok = true;
        try {
            e = backward_exit(d, s.x, w);
        } catch (const Error&) {
            ok = false;
        }
        if (ok) {
            atlas_->lookup.near(e.x_exit, ids);
            for (int m : ids) {
                const Chart& ch = atlas_->charts[m];
                double q1, q2;
                if (!ch.locate(e.x_exit, 1e-3 * ch.half_width + 10 * ch.residual, q1, q2)) continue;
                const int k = extent_[m];
                const int i0 = std::max(-k, static_cast<int>(std::floor((q1 - eps1) / eps_)));
                const int i1 = std::min(k, static_cast<int>(std::ceil((q1 + eps1) / eps_)));
                const int j0 = std::max(-k, static_cast<int>(std::floor((q2 - eps1) / eps_)));
                const int j1 = std::min(k, static_cast<int>(std::ceil((q2 + eps1) / eps_)));
                for (int i = i0; i <= i1; ++i)
                    for (int j = j0; j <= j1; ++j) {
                        if (std::abs(q1 - eps_ * i) >= eps1 || std::abs(q2 - eps_ * j) >= eps1) continue;
                        if (cone_ok(site(m, i, j), s.v, eps1)) return true;
                    }
            }
        }
    }
    return scan(s, eps1, [](const CoverSite&) { return true; });
}

std::vector<CoverSite> CoverStructure::pieces_containing(const PhaseState& s, double eps1) const {
    std::vector<CoverSite> out;
    if (empty_ || s.v.norm() == 0) return out;
    scan(s, eps1, [&](const CoverSite& c) {
        out.push_back(c);
        return false;
    });
    return out;
}

bool CoverStructure::contains_in(const std::vector<CoverSite>& sites, const PhaseState& s, double eps1) const {
    const double r = s.v.norm();
    if (r < eps1) return true;
    const Vec3 w = s.v / r;
    for (const CoverSite& c : sites)
        if (cone_ok(c, s.v, eps1) && site_contains(c, s.x, w, eps1)) return true;
    return false;
}

bool in_cover(const CoverStructure& cover, const PhaseState& s) { return cover.contains(s); }

// ---------------------------------------------------------------- cutoff

CutoffField::CutoffField(std::shared_ptr<const BoundaryAtlas> atlas, CutoffParams params)
    : p_(params), cover_(std::move(atlas), params.epsilon, params.C_star * params.epsilon,
                         1.25 * params.C_star * params.epsilon) {
    if (!(p_.C_star >= 1)) throw ConfigError("cutoff.C_star must be >= 1");
    if (!(p_.C_tilde > p_.C_star)) throw ConfigError("cutoff.C_tilde must exceed cutoff.C_star");
    if (p_.points_per_axis < 2) throw ConfigError("cutoff.points_per_axis must be >= 2");
    // Product bump on the cube of half-width delta / sqrt(6), which sits
    // inside the 6-ball of radius delta.
    half_ = mollifier_radius() / std::sqrt(6.0);
    const int n = p_.points_per_axis;
    double total = 0;
    for (int i = 0; i < n; ++i) {
        double s = -1 + (2.0 * i + 1) / n;
        double phi = std::exp(-1 / (1 - s * s));
        nodes_.push_back(half_ * s);
        w_.push_back(phi);
        dw_.push_back(phi * (-2 * s / ((1 - s * s) * (1 - s * s))));
        total += phi;
    }
    for (int i = 0; i < n; ++i) {
        w_[i] /= total;
        dw_[i] /= total * half_;
    }
}

double CutoffField::margin(const Vec3& v) const {
    // Moving (x, v) by delta shifts the ribbon frame of a chord of length
    // up to 2R by about 2R delta / |v|.
    const double delta = mollifier_radius();
    const double R = cover_.atlas().domain->bounding_radius();
    double m = (2 + 4 * R / std::max(v.norm(), 1e-3)) * delta;
    return std::min(m, 0.2 * cover_.epsilon1());
}

ChiValue CutoffField::evaluate(const PhaseState& s) const {
    const double e1 = cover_.epsilon1();
    const double m = margin(s.v);
    ChiValue out;
    if (cover_.contains(s, e1 - m)) {
        out.value = 0;
        return out;
    }
    // Only pieces that hold s at the inflated scale can hold a node.
    const std::vector<CoverSite> sites = cover_.pieces_containing(s, e1 + m);
    if (sites.empty() && s.v.norm() >= e1 + m) {
        out.value = 1;
        return out;
    }
    out.short_circuit = false;
    const int n = p_.points_per_axis;
    int idx[6] = {0, 0, 0, 0, 0, 0};
    double value = 0;
    std::array<double, 6> g{};
    const std::size_t total = static_cast<std::size_t>(std::pow(n, 6));
    for (std::size_t q = 0; q < total; ++q) {
        std::size_t r = q;
        for (int a = 5; a >= 0; --a) {
            idx[a] = static_cast<int>(r % n);
            r /= n;
        }
        PhaseState z{s.x - Vec3(nodes_[idx[0]], nodes_[idx[1]], nodes_[idx[2]]),
                     s.v - Vec3(nodes_[idx[3]], nodes_[idx[4]], nodes_[idx[5]])};
        if (cover_.contains_in(sites, z, e1)) continue;
        double W = 1;
        for (int a = 0; a < 6; ++a) W *= w_[idx[a]];
        value += W;
        for (int a = 0; a < 6; ++a) g[a] += W / w_[idx[a]] * dw_[idx[a]];
    }
    out.value = std::clamp(value, 0.0, 1.0);
    out.grad = g;
    return out;
}

double chi_eval(const CutoffField& cutoff, const PhaseState& s) { return cutoff.evaluate(s).value; }

// ------------------------------------------------------------- singular

std::vector<PhaseState> sample_singular_set(const Domain& d, const VelocitySpace& space, int n, Rng& rng) {
    std::vector<PhaseState> out;
    out.reserve(static_cast<std::size_t>(std::max(n, 0)));
    while (static_cast<int>(out.size()) < n) {
        Vec3 y = d.sample_boundary(rng);
        Vec3 nrm = outward_normal(d, y), t1, t2;
        tangent_frame(nrm, t1, t2);
        double ang = 2 * pi * rng.uniform();
        Vec3 w = std::cos(ang) * t1 + std::sin(ang) * t2;
        double speed = rng.uniform(space.a(), space.b());
        double tf = 0;
        try {
            tf = forward_exit(d, y, w).t_exit;
        } catch (const Error&) {
            continue;
        }
        double tau = rng.uniform() * tf;
        out.push_back({y + tau * w, speed * w});
    }
    return out;
}

SingularCloud::SingularCloud(std::vector<PhaseState> pts) : pts_(std::move(pts)) {}

double SingularCloud::distance(const PhaseState& s) const {
    if (pts_.empty()) throw EmptySingularCloud("no singular samples");
    double best = inf;
    for (const auto& p : pts_) {
        double d2 = (p.x - s.x).squaredNorm() + (p.v - s.v).squaredNorm();
        best = std::min(best, d2);
    }
    return std::sqrt(best);
}

double distance_to_singular(const SingularCloud& cloud, const PhaseState& s) { return cloud.distance(s); }

// -------------------------------------------------------------- measures

double domain_volume(const Domain& d) {
    double v = 0;
    for (const auto& q : d.boundary_quadrature(96, 96)) v += q.weight * q.x.dot(q.n);
    return v / 3;
}

namespace {

struct MeanSe {
    double mean = 0, se = 0;
};

MeanSe mean_se(const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    double m = 0;
    for (double a : x) m += a;
    m /= n;
    double ss = 0;
    for (double a : x) ss += (a - m) * (a - m);
    return {m, x.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0};
}

double loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(ys[i] > 0)) return nan;
        double a = std::log(xs[i]), b = std::log(ys[i]);
        sx += a;
        sy += b;
        sxx += a * a;
        sxy += a * b;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

CoverMeasureReport verify_cover_measures(std::shared_ptr<const BoundaryAtlas> atlas, const VelocitySpace& space,
                                         const std::vector<double>& eps, const CutoffParams& base, int n_samples,
                                         std::uint64_t seed) {
    if (eps.size() < 2) throw ConfigError("cover.eps_sweep needs at least two values");
    if (n_samples < 2) throw ConfigError("cover.samples must be >= 2");
    const Domain& d = *atlas->domain;
    const double vol = domain_volume(d) * space.shell_volume();
    const double bvol = d.boundary_area() * space.shell_volume();
    CoverMeasureReport rep;
    for (std::size_t e = 0; e < eps.size(); ++e) {
        CutoffParams p = base;
        p.epsilon = eps[e];
        CutoffField F(atlas, p);
        const std::size_t n = static_cast<std::size_t>(n_samples);
        std::vector<double> cov(n), omc(n), grad(n), gm(n), gp(n), trans(n);
        parallel_for(n, [&](std::size_t i) {
            Rng rng = Rng::stream(seed + 7919 * e, i);
            PhaseState s{d.sample_interior(rng), space.sample_uniform(rng)};
            cov[i] = F.cover().contains(s) ? 1.0 : 0.0;
            ChiValue c = F.evaluate(s);
            omc[i] = 1 - c.value;
            double g2 = 0;
            for (double g : c.grad) g2 += g * g;
            grad[i] = std::sqrt(g2);
            trans[i] = c.short_circuit ? 0.0 : 1.0;
            PhaseState b{d.sample_boundary(rng), space.sample_uniform(rng)};
            double vn = outward_normal(d, b.x).dot(b.v);
            double one_minus = 1 - F.evaluate(b).value;
            gm[i] = vn < 0 ? one_minus * -vn : 0.0;
            gp[i] = vn > 0 ? one_minus * vn : 0.0;
        });
        CoverMeasureRow row;
        row.epsilon = eps[e];
        auto fill = [&](const std::vector<double>& x, double scale, double& m, double& se) {
            MeanSe r = mean_se(x);
            m = scale * r.mean;
            se = scale * r.se;
        };
        fill(cov, vol, row.cover_measure, row.cover_se);
        fill(omc, vol, row.one_minus_chi, row.one_minus_chi_se);
        fill(grad, vol, row.grad_l1, row.grad_l1_se);
        fill(gm, bvol, row.gamma_minus_mass, row.gamma_minus_se);
        fill(gp, bvol, row.gamma_plus_mass, row.gamma_plus_se);
        row.transition_fraction = mean_se(trans).mean;
        rep.rows.push_back(row);
    }
    std::vector<double> xs, c, o;
    double gmin = inf, gmax = 0;
    for (const auto& r : rep.rows) {
        xs.push_back(r.epsilon);
        c.push_back(r.cover_measure);
        o.push_back(r.one_minus_chi);
        gmin = std::min(gmin, r.grad_l1);
        gmax = std::max(gmax, r.grad_l1);
    }
    rep.cover_measure_slope = loglog_slope(xs, c);
    rep.one_minus_chi_slope = loglog_slope(xs, o);
    rep.grad_l1_ratio = gmin > 0 ? gmax / gmin : inf;
    auto slope_ok = [](double s) { return std::abs(s - 1) <= 0.3; };
    rep.pass = slope_ok(rep.cover_measure_slope) && slope_ok(rep.one_minus_chi_slope) && rep.grad_l1_ratio < 3;
    return rep;
}

}  // namespace ntk
