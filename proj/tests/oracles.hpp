#pragma once

// Independent reference computations shared by the unit and acceptance
// tests. Nothing here calls into the library's numerical routines, except
// for the domain's implicit function itself.

#include "ntk/geometry.hpp"

#include <cmath>
#include <vector>

namespace oracle {

// Backward exit time by 10^4 uniform steps over [0, 2R/|v|], then bisection.
inline double dense_exit_time(const ntk::Domain& d, const ntk::Vec3& x, const ntk::Vec3& v, int steps = 10000) {
    double smax = 2.0 * d.bounding_radius() / v.norm();
    double h = smax / steps;
    double lo = 0;
    for (int i = 1; i <= steps; ++i) {
        double s = i * h;
        if (d.phi(x - s * v) > 0) {
            double hi = s;
            for (int k = 0; k < 200 && hi - lo > 1e-16 * (1 + hi); ++k) {
                double m = 0.5 * (lo + hi);
                if (d.phi(x - m * v) > 0) hi = m; else lo = m;
            }
            return 0.5 * (lo + hi);
        }
        lo = s;
    }
    return std::nan("");
}

// Ray/sphere intersection for the ball of radius rho centered at 0.
inline double ball_exit_time(double rho, const ntk::Vec3& x, const ntk::Vec3& v) {
    // |x - t v|^2 = rho^2, largest root.
    double a = v.squaredNorm(), b = -2 * x.dot(v), c = x.squaredNorm() - rho * rho;
    return (-b + std::sqrt(b * b - 4 * a * c)) / (2 * a);
}

inline ntk::Vec3 fd_gradient(const std::function<double(const ntk::Vec3&)>& f, const ntk::Vec3& x, double h) {
    ntk::Vec3 g;
    for (int i = 0; i < 3; ++i) {
        ntk::Vec3 e = ntk::Vec3::Zero();
        e[i] = h;
        g[i] = (f(x + e) - f(x - e)) / (2 * h);
    }
    return g;
}

// Least-squares fit z = a u^2 + b uv + c w^2 + d u + e w + f over a set of
// local samples; returns the 2x2 Hessian [[2a, b], [b, 2c]].
inline Eigen::Matrix2d quadratic_fit_hessian(const std::vector<Eigen::Vector3d>& uvz) {
    Eigen::MatrixXd A(uvz.size(), 6);
    Eigen::VectorXd z(uvz.size());
    for (std::size_t i = 0; i < uvz.size(); ++i) {
        double u = uvz[i][0], w = uvz[i][1];
        A.row(i) << u * u, u * w, w * w, u, w, 1.0;
        z[i] = uvz[i][2];
    }
    Eigen::VectorXd c = A.colPivHouseholderQr().solve(z);
    Eigen::Matrix2d H;
    H << 2 * c[0], c[1], c[1], 2 * c[2];
    return H;
}

}  // namespace oracle
