#pragma once

#include "ntk/geometry.hpp"
#include "ntk/velocity.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <unordered_map>
#include <vector>

namespace ntk {

// Local graph description of the boundary. Chart coordinates (q1, q2, z)
// map to origin + q1 e1 + q2 e2 + z e3 with e3 the inward normal at the
// origin; the boundary is z = eta(q1, q2) on the square |q1|, |q2| <= half_width.
struct Chart {
    Vec3 origin;
    Vec3 e1, e2, e3;
    double half_width = 0;
    // eta = c0 + c1 q1 + c2 q2 + c3 q1^2 + c4 q1 q2 + c5 q2^2
    std::array<double, 6> coef{};
    double residual = 0;  // rms misfit of the quadratic on the fit samples
    double c_eta = 0;     // spectral norm of the fitted Hessian

    double eta(double q1, double q2) const;
    void grad_eta(double q1, double q2, double& g1, double& g2) const;
    Vec3 point(double q1, double q2) const;
    Vec3 normal(double q1, double q2) const;  // outward unit normal of the fit
    // Max of |d1 eta| + |d2 eta| over the patch (attained at a corner).
    double gradient_bound() const;
    // Chart coordinates of p; returns false when p is off the patch or off
    // the graph by more than tol.
    bool locate(const Vec3& p, double tol, double& q1, double& q2) const;
};

// Uniform hash grid of point ids.
class PointHash {
public:
    PointHash() = default;
    PointHash(double cell, const std::vector<Vec3>& pts);
    double cell() const { return cell_; }
    // Ids in the 27 cells around p.
    void near(const Vec3& p, std::vector<int>& out) const;
    // Ids in the cells touched by the 1-ring around samples of a segment.
    void along(const Vec3& a, const Vec3& b, std::vector<int>& out) const;

private:
    std::int64_t key(int i, int j, int k) const;
    void append_cell(int i, int j, int k, std::vector<std::int64_t>& keys) const;
    double cell_ = 1;
    std::unordered_map<std::int64_t, std::vector<int>> cells_;
};

struct BoundaryAtlas {
    DomainPtr domain;
    double theta = 0;
    std::vector<Chart> charts;
    double C_eta = 0;
    PointHash lookup;  // chart origins

    // True when p lies on the patch of at least one chart.
    bool covers(const Vec3& p) const;
};

// Single chart at the boundary point nearest to center: quadratic fit on a
// square of half-width theta, shrunk until the gradient bound holds and the
// rms misfit is at most 1e-4 theta^2. Throws FitFailure when no patch of
// half-width >= theta / 16 qualifies.
Chart fit_chart(const Domain& d, const Vec3& center, double theta);

// Charts centered at greedily chosen boundary samples, each fitted on its
// own square and shrunk until sum |d_i eta| <= 1/8 holds there.
BoundaryAtlas build_atlas(const DomainPtr& domain, double theta, std::uint64_t seed = 1);

// One lattice point c = (eps i, eps j) of a chart with its tangent frame.
struct CoverSite {
    int chart;
    double c1, c2;
    Vec3 y;       // boundary point over c
    Vec3 n;       // outward normal there
    Vec3 t1, t2;  // tangent basis
};

// The open neighborhood O_{eps, eps1} of the singular set. Membership can be
// queried at any eps1' <= max_eps1 on the same lattice, which is what the
// nesting checks and the cut-off short-circuits use. Lattice sites are
// generated on demand per chart rather than stored.
class CoverStructure {
public:
    CoverStructure(std::shared_ptr<const BoundaryAtlas> atlas, double eps, double eps1, double max_eps1 = 0);

    double epsilon() const { return eps_; }
    double epsilon1() const { return eps1_; }
    double small_velocity_ball_radius() const { return eps1_; }
    double C_eta() const { return atlas_->C_eta; }
    int angular_count() const;  // L_eps
    std::size_t site_count() const { return empty_ ? 0 : site_count_; }
    int lattice_extent(int chart) const { return extent_[chart]; }  // N_eps of the chart
    CoverSite site(int chart, int i, int j) const;
    const BoundaryAtlas& atlas() const { return *atlas_; }

    // Drops every tube/cone piece, leaving only the small-velocity ball.
    void clear_pieces() { empty_ = true; }

    bool contains(const PhaseState& s) const { return contains(s, eps1_); }
    bool contains(const PhaseState& s, double eps1) const;

    // Every site whose piece holds s at scale eps1 (no early exit, no
    // small-velocity ball).
    std::vector<CoverSite> pieces_containing(const PhaseState& s, double eps1) const;
    // Membership restricted to the given sites plus the small-velocity ball.
    bool contains_in(const std::vector<CoverSite>& sites, const PhaseState& s, double eps1) const;

private:
    template <class Visit>
    bool scan(const PhaseState& s, double eps1, Visit&& visit) const;
    bool cone_ok(const CoverSite& c, const Vec3& v, double eps1) const;
    bool site_contains(const CoverSite& c, const Vec3& x, const Vec3& w, double eps1) const;

    std::shared_ptr<const BoundaryAtlas> atlas_;
    double eps_, eps1_, max_eps1_;
    bool empty_ = false;
    std::vector<int> extent_;
    std::size_t site_count_ = 0;
    double max_half_width_ = 0;
    double chart_reach_ = 0;  // chart-origin-to-line distance that can matter
    PointHash line_hash_;     // chart origins, sized for segment walks
};

bool in_cover(const CoverStructure& cover, const PhaseState& s);

struct CutoffParams {
    double epsilon = 0.05;
    double C_star = 4.0;
    double C_tilde = 64.0;
    int points_per_axis = 5;
};

struct ChiValue {
    double value = 1;
    std::array<double, 6> grad{};  // d/dx then d/dv
    bool short_circuit = true;
};

// chi = (indicator of the complement of O_{eps, C* eps}) * psi, psi a
// product bump supported in the 6-ball of radius eps / C~.
class CutoffField {
public:
    CutoffField(std::shared_ptr<const BoundaryAtlas> atlas, CutoffParams params);

    const CutoffParams& params() const { return p_; }
    const CoverStructure& cover() const { return cover_; }
    double mollifier_radius() const { return p_.epsilon / p_.C_tilde; }
    double axis_half_width() const { return half_; }

    // Empties the cover (for degenerate checks).
    void clear_pieces() { cover_.clear_pieces(); }

    ChiValue evaluate(const PhaseState& s) const;
    double operator()(const PhaseState& s) const { return evaluate(s).value; }

private:
    double margin(const Vec3& v) const;
    CutoffParams p_;
    CoverStructure cover_;
    double half_ = 0;
    std::vector<double> nodes_, w_, dw_;
};

double chi_eval(const CutoffField& cutoff, const PhaseState& s);

// States (x, v) with v tangent at the backward exit point, built by
// shooting tangent chords from uniform boundary points.
std::vector<PhaseState> sample_singular_set(const Domain& d, const VelocitySpace& space, int n, Rng& rng);

class SingularCloud {
public:
    explicit SingularCloud(std::vector<PhaseState> pts);
    std::size_t size() const { return pts_.size(); }
    const std::vector<PhaseState>& points() const { return pts_; }
    // Euclidean distance in R^6 to the nearest sample.
    double distance(const PhaseState& s) const;

private:
    std::vector<PhaseState> pts_;
};

double distance_to_singular(const SingularCloud& cloud, const PhaseState& s);

struct CoverMeasureRow {
    double epsilon = 0;
    double cover_measure = 0, cover_se = 0;
    double one_minus_chi = 0, one_minus_chi_se = 0;
    double grad_l1 = 0, grad_l1_se = 0;
    double gamma_minus_mass = 0, gamma_minus_se = 0;
    double gamma_plus_mass = 0, gamma_plus_se = 0;
    double transition_fraction = 0;
};

struct CoverMeasureReport {
    std::vector<CoverMeasureRow> rows;
    double cover_measure_slope = nan;
    double one_minus_chi_slope = nan;
    double grad_l1_ratio = nan;  // max / min over the sweep
    bool pass = false;
};

// Monte-Carlo measures over Omega x V (and over the boundary for the gamma
// masses) for each epsilon; slopes are least-squares fits in log-log.
CoverMeasureReport verify_cover_measures(std::shared_ptr<const BoundaryAtlas> atlas, const VelocitySpace& space,
                                         const std::vector<double>& eps, const CutoffParams& base, int n_samples,
                                         std::uint64_t seed);

// Volume of Omega from the boundary quadrature (divergence theorem).
double domain_volume(const Domain& d);

}  // namespace ntk
