#pragma once

#include "ntk/geometry.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

namespace ntk {

// Velocity lattice: either spherical cells over the annulus (speed, polar
// cosine, azimuth; azimuth periodic) or a Cartesian box (test fields).
// Weights are exact cell volumes.
class VelocityLattice {
public:
    enum class Kind { Spherical, Cartesian };

    static VelocityLattice spherical(double a, double b, int n_r, int n_mu, int n_theta);
    static VelocityLattice cartesian(const Vec3& lo, const Vec3& hi, int n);

    Kind kind() const { return kind_; }
    int size() const { return static_cast<int>(v_.size()); }
    std::array<int, 3> dims() const { return {n_[0], n_[1], n_[2]}; }
    const Vec3& v(int k) const { return v_[k]; }
    double w(int k) const { return w_[k]; }
    int index(int i, int j, int l) const { return (i * n_[1] + j) * n_[2] + l; }
    std::array<int, 3> coords(int k) const { return {k / (n_[1] * n_[2]), (k / n_[2]) % n_[1], k % n_[2]}; }
    // Index of the neighbor along an axis (periodic in azimuth), or -1.
    int neighbor(int k, int axis) const;
    // Metric distance between node k and its +axis neighbor.
    double step_length(int k, int axis) const;
    // Multilinear interpolation stencil for an arbitrary velocity (clamped
    // in speed and polar cosine, periodic in azimuth). Returns the count.
    int stencil(const Vec3& v, int idx[8], double wt[8]) const;

    // Tensor Gauss rule (3 points per axis) inside cell k; the weights sum
    // to w(k). Used to integrate smooth factors against cell averages.
    static constexpr int kSubPoints = 27;
    const Vec3* sub_points(int k) const { return sub_v_.data() + static_cast<std::size_t>(k) * kSubPoints; }
    const double* sub_weights(int k) const { return sub_w_.data() + static_cast<std::size_t>(k) * kSubPoints; }

private:
    void build_sub_rules();
    Kind kind_ = Kind::Spherical;
    int n_[3] = {0, 0, 0};
    double lo_[3] = {0, 0, 0}, hi_[3] = {0, 0, 0};
    std::vector<Vec3> v_;
    std::vector<double> w_;
    std::vector<Vec3> sub_v_;
    std::vector<double> sub_w_;
    double axis_coord(int axis, int i) const { return lo_[axis] + (i + 0.5) * (hi_[axis] - lo_[axis]) / n_[axis]; }
};

enum class NodeKind : std::uint8_t { Inside, Ghost, Outside };

struct GridSpec {
    double h = 0.25;          // spatial spacing (all axes)
    int n_t = 8;              // time steps on [0, T]
    double T = 1.0;
    int pad_cells = 1;        // layers added around the domain box
};

// Phase grid: cell-centered spatial nodes over the padded domain box, a
// velocity lattice, and a uniform time axis. Nodes outside the domain but
// within two cells of the boundary are ghosts, evaluated at their projection
// onto the boundary so that interpolation near the wall has support.
class PhaseGrid {
public:
    PhaseGrid(DomainPtr domain, const GridSpec& spec, VelocityLattice vel);
    // Domain-free grid over an explicit box (every node is inside).
    PhaseGrid(const Vec3& lo, const Vec3& hi, int n_per_axis, VelocityLattice vel, int n_t = 0, double T = 0);

    const DomainPtr& domain() const { return domain_; }
    const VelocityLattice& vel() const { return vel_; }
    const std::vector<double>& times() const { return times_; }
    double T() const { return times_.back(); }
    double h(int axis) const { return h_[axis]; }
    double h_max() const { return std::max({h_[0], h_[1], h_[2]}); }
    double cell_volume() const { return h_[0] * h_[1] * h_[2]; }
    std::array<int, 3> dims() const { return {n_[0], n_[1], n_[2]}; }
    int n_spatial() const { return n_[0] * n_[1] * n_[2]; }
    int spatial_index(int i, int j, int k) const { return (i * n_[1] + j) * n_[2] + k; }
    std::array<int, 3> spatial_coords(int s) const { return {s / (n_[1] * n_[2]), (s / n_[2]) % n_[1], s % n_[2]}; }
    Vec3 node_x(int s) const;

    NodeKind kind(int s) const { return kind_[s]; }
    int n_valued() const { return static_cast<int>(valued_.size()); }
    int valued_spatial(int id) const { return valued_[id]; }
    int valued_id(int s) const { return valued_id_[s]; }
    // Point at which a valued node's value is defined (the node itself, or
    // its boundary projection for ghosts).
    const Vec3& eval_point(int id) const { return eval_point_[id]; }
    bool is_ghost(int id) const { return kind_[valued_[id]] == NodeKind::Ghost; }
    // Fraction of the node's cell that lies inside the domain.
    double volume_fraction(int id) const { return vol_frac_[id]; }
    // Boundary-band data: projection distance and unit normal at the
    // projection (NaN normal outside the band).
    bool in_band(int id) const { return band_[id]; }
    const Vec3& band_normal(int id) const { return band_normal_[id]; }

    // Trilinear stencil over valued nodes, renormalized over the corners
    // that carry values. Returns the count (0 when no corner is valued).
    int spatial_stencil(const Vec3& x, int ids[8], double wt[8]) const;
    // Locates t: t in [times[m], times[m+1]], fraction theta.
    void time_locate(double t, int& m, double& theta) const;

    std::size_t n_nodes() const { return static_cast<std::size_t>(n_valued()) * vel_.size(); }

private:
    void classify();

    DomainPtr domain_;
    VelocityLattice vel_;
    std::vector<double> times_;
    Vec3 lo_;
    double h_[3];
    int n_[3];
    std::vector<NodeKind> kind_;
    std::vector<int> valued_;
    std::vector<int> valued_id_;
    std::vector<Vec3> eval_point_;
    std::vector<double> vol_frac_;
    std::vector<std::uint8_t> band_;
    std::vector<Vec3> band_normal_;
};

using GridPtr = std::shared_ptr<const PhaseGrid>;

// Scalar field on a phase grid: values per (time level, valued node,
// velocity node). A static field has a single time level. Time
// interpolation is linear in exp(lambda t) * value so that fields of the
// form c exp(-lambda t) are reproduced exactly.
class PhaseField {
public:
    PhaseField() = default;
    PhaseField(GridPtr grid, int n_times, double lambda = 0.0, double fill = 0.0);

    const GridPtr& grid() const { return grid_; }
    int n_times() const { return n_times_; }
    double lambda() const { return lambda_; }
    double time(int m) const { return n_times_ == 1 ? time_stamp : grid_->times()[m]; }
    double time_stamp = 0;

    std::size_t offset(int m, int id, int k) const {
        return (static_cast<std::size_t>(m) * grid_->n_valued() + id) * grid_->vel().size() + k;
    }
    double& at(int m, int id, int k) { return values_[offset(m, id, k)]; }
    double at(int m, int id, int k) const { return values_[offset(m, id, k)]; }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    // Value at an arbitrary (t, x) for velocity node k.
    double interp(double t, const Vec3& x, int k) const;
    // Value at an arbitrary (t, x, v).
    double interp(double t, const Vec3& x, const Vec3& v) const;
    // Static slice at time level m evaluated at arbitrary (x, v).
    double interp_level(int m, const Vec3& x, const Vec3& v) const;

    double sup_norm() const;
    double sup_norm(int m) const;
    double sup_diff(const PhaseField& other) const;

private:
    double time_weights(double t, int& m, double& w0, double& w1) const;

    GridPtr grid_;
    int n_times_ = 0;
    double lambda_ = 0;
    std::vector<double> values_;
};

}  // namespace ntk
