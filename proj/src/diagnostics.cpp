#include "ntk/diagnostics.hpp"

#include "ntk/parallel.hpp"
#include "ntk/quadrature.hpp"

#include <algorithm>
#include <cmath>

namespace ntk {

namespace {

std::vector<double> trapezoid_weights(const std::vector<double>& ts) {
    std::vector<double> w(ts.size(), 0.0);
    for (std::size_t m = 0; m + 1 < ts.size(); ++m) {
        const double dt = ts[m + 1] - ts[m];
        w[m] += 0.5 * dt;
        w[m + 1] += 0.5 * dt;
    }
    return w;
}

// Exact solution on one boundary state at every time level. Outgoing states
// follow the backward characteristic; incoming ones read the in-flow data.
void boundary_series(const InflowProblem& p, const Vec3& x, const Vec3& n, const Vec3& v,
                     const std::vector<double>& ts, std::vector<double>& out) {
    out.assign(ts.size(), 0.0);
    if (n.dot(v) <= 0) {
        if (p.inflow)
            for (std::size_t m = 0; m < ts.size(); ++m) out[m] = p.inflow(ts[m], x, v);
        return;
    }
    const ExitRecord e = backward_exit(*p.domain, x, v);
    const int nq = p.n_quad_line;
    const GaussRule& g = gauss_legendre(nq);
    std::vector<double> taus(nq + 1), E(nq + 1);
    for (std::size_t m = 0; m < ts.size(); ++m) {
        const double t = ts[m];
        const bool before = t <= e.t_exit;
        const double tau_end = before ? t : e.t_exit;
        for (int q = 0; q < nq; ++q) taus[q] = 0.5 * tau_end * (1 + g.nodes[q]);
        taus[nq] = tau_end;
        attenuation(p, x, v, taus.data(), nq + 1, E.data());
        double val = 0;
        if (before) {
            if (p.initial) val = E[nq] * p.initial(x - t * v, v);
        } else if (p.inflow) {
            val = E[nq] * p.inflow(t - e.t_exit, e.x_exit, v);
        }
        if (p.source && tau_end > 0)
            for (int q = 0; q < nq; ++q)
                val += 0.5 * tau_end * g.weights[q] * E[q] * p.source(t - taus[q], x - taus[q] * v, v);
        out[m] = val;
    }
}

// Integral over the phase grid of fn(id, k), with volume fractions.
template <class Fn>
double phase_integral(const PhaseGrid& G, Fn fn) {
    const int nv = G.n_valued(), nk = G.vel().size();
    std::vector<double> part(static_cast<std::size_t>(nv), 0.0);
    parallel_for(part.size(), [&](std::size_t idz) {
        const int id = static_cast<int>(idz);
        if (G.volume_fraction(id) == 0) return;
        double row = 0;
        for (int k = 0; k < nk; ++k) row += G.vel().w(k) * fn(id, k);
        part[idz] = G.volume_fraction(id) * row;
    });
    double s = 0;
    for (double x : part) s += x;
    return s * G.cell_volume();
}

double sigma_at(const InflowProblem& p, const Vec3& x, const Vec3& v) {
    return p.material && p.sigma_in_exponent ? p.material->sigma(x, v) : 0.0;
}

void require_problem(const InflowProblem& p, const GridPtr& grid) {
    if (!p.domain) throw ConfigError("problem.domain is required");
    if (!grid) throw ConfigError("grid is required");
}

}  // namespace

InequalityReport green_identity_check(const InflowProblem& problem, const GridPtr& grid, const VelocitySpace& space,
                                      const GreenOptions& opt) {
    require_problem(problem, grid);
    if (!(opt.p >= 1)) throw ConfigError("green.p must be >= 1");
    const PhaseGrid& G = *grid;
    const auto& ts = G.times();
    const int nt = static_cast<int>(ts.size());
    const std::vector<double> tw = trapezoid_weights(ts);
    const double p = opt.p;
    auto pow_abs = [p](double f) { return std::pow(std::abs(f), p); };
    auto dual = [p](double f) { return f == 0 ? 0.0 : p * std::pow(std::abs(f), p - 1) * (f > 0 ? 1 : -1); };

    CharacteristicSolver cs(problem, grid);
    const PhaseField f = cs.sweep();

    const double norm_T = phase_integral(G, [&](int id, int k) { return pow_abs(f.at(nt - 1, id, k)); });
    const double norm_0 = phase_integral(G, [&](int id, int k) { return pow_abs(f.at(0, id, k)); });
    double bulk = 0;
    for (int m = 0; m < nt; ++m) {
        const double t = ts[m];
        bulk += tw[m] * phase_integral(G, [&](int id, int k) {
            const Vec3& x = G.eval_point(id);
            const Vec3& v = G.vel().v(k);
            const double fv = f.at(m, id, k);
            const double q = problem.source ? problem.source(t, x, v) : 0.0;
            return dual(fv) * (q - (problem.lambda + sigma_at(problem, x, v)) * fv);
        });
    }

    const auto bq = problem.domain->boundary_quadrature(opt.boundary_nodes, opt.boundary_nodes);
    const auto& rule = space.full_rule();
    std::vector<double> out_part(bq.size(), 0.0), in_part(bq.size(), 0.0);
    parallel_for(bq.size(), [&](std::size_t i) {
        std::vector<double> series;
        for (const VelocityNode& vn : rule) {
            const double nv = bq[i].n.dot(vn.v);
            if (nv == 0) continue;
            boundary_series(problem, bq[i].x, bq[i].n, vn.v, ts, series);
            double acc = 0;
            for (int m = 0; m < nt; ++m) acc += tw[m] * pow_abs(series[m]);
            (nv > 0 ? out_part : in_part)[i] += bq[i].weight * vn.w * std::abs(nv) * acc;
        }
    });
    double out = 0, in = 0;
    for (std::size_t i = 0; i < bq.size(); ++i) {
        out += out_part[i];
        in += in_part[i];
    }

    InequalityReport r;
    r.name = "green_identity";
    r.lhs = norm_T + out;
    r.rhs = norm_0 + in + bulk;
    const double scale = std::max(std::abs(r.lhs), std::abs(r.rhs));
    const double residual = scale > 0 ? std::abs(r.lhs - r.rhs) / scale : 0.0;
    r.constant_fitted = r.rhs > 0 ? r.lhs / r.rhs : (r.lhs > 0 ? inf : 0.0);
    r.pass = residual <= 0.02;
    r.details = {{"residual", residual},       {"norm_T", norm_T}, {"norm_0", norm_0},
                 {"outgoing", out},            {"incoming", in},   {"bulk", bulk},
                 {"p", p},                     {"h", G.h_max()},   {"n_t", static_cast<double>(nt - 1)}};
    return r;
}

InequalityReport trace_bound_check(const InflowProblem& problem, const GridPtr& grid, const VelocitySpace& space,
                                   const TraceBoundOptions& opt) {
    require_problem(problem, grid);
    if (!(opt.delta >= 0)) throw ConfigError("trace.delta must be >= 0");
    const PhaseGrid& G = *grid;
    const auto& ts = G.times();
    const int nt = static_cast<int>(ts.size());
    const std::vector<double> tw = trapezoid_weights(ts);
    CharacteristicSolver cs(problem, grid);
    const PhaseField f = cs.sweep();

    const double h0 = phase_integral(G, [&](int id, int k) { return std::abs(f.at(0, id, k)); });
    double hT = 0, qT = 0;
    for (int m = 0; m < nt; ++m) {
        hT += tw[m] * phase_integral(G, [&](int id, int k) { return std::abs(f.at(m, id, k)); });
        if (problem.source)
            qT += tw[m] * phase_integral(G, [&](int id, int k) {
                return std::abs(problem.source(ts[m], G.eval_point(id), G.vel().v(k)));
            });
    }

    const auto bq = problem.domain->boundary_quadrature(opt.boundary_nodes, opt.boundary_nodes);
    std::vector<double> part(bq.size(), 0.0);
    parallel_for(bq.size(), [&](std::size_t i) {
        std::vector<double> series;
        for (const VelocityNode& vn : space.full_rule()) {
            const double nv = bq[i].n.dot(vn.v);
            if (nv < opt.delta || nv <= 0) continue;
            boundary_series(problem, bq[i].x, bq[i].n, vn.v, ts, series);
            double acc = 0;
            for (int m = 0; m < nt; ++m) acc += tw[m] * std::abs(series[m]);
            part[i] += bq[i].weight * vn.w * nv * acc;
        }
    });
    double lhs = 0;
    for (double x : part) lhs += x;

    InequalityReport r;
    r.name = "trace_bound";
    r.lhs = lhs;
    r.rhs = h0 + hT + qT;
    r.constant_fitted = r.rhs > 0 ? lhs / r.rhs : (lhs > 0 ? inf : 0.0);
    r.pass = std::isfinite(r.constant_fitted);
    r.details = {{"delta", opt.delta}, {"initial", h0}, {"bulk", hT}, {"source", qT}};
    return r;
}

InequalityReport trace_bound_battery(const std::vector<InequalityReport>& runs, double max_spread) {
    InequalityReport r;
    r.name = "trace_bound";
    if (runs.empty()) return r;
    double lo = inf, hi = 0;
    for (const InequalityReport& x : runs) {
        lo = std::min(lo, x.constant_fitted);
        hi = std::max(hi, x.constant_fitted);
        r.lhs += x.lhs;
        r.rhs += x.rhs;
        for (const std::string& s : x.scenarios) r.scenarios.push_back(s);
    }
    r.constant_fitted = hi;
    r.details = {{"min_constant", lo}, {"max_constant", hi}, {"spread", lo > 0 ? hi / lo : inf}};
    r.pass = std::isfinite(hi) && lo > 0 && hi <= max_spread * lo;
    return r;
}

InequalityReport double_iteration_trace_check(const std::vector<IterateTrace>& traces, double delta) {
    if (traces.size() < 3)
        throw InsufficientHistory("double iteration needs three consecutive iterates, got " +
                                  std::to_string(traces.size()));
    const IterateTrace& a = traces[traces.size() - 3];
    const IterateTrace& b = traces[traces.size() - 2];
    const IterateTrace& c = traces[traces.size() - 1];
    if (b.m != a.m + 1 || c.m != b.m + 1) throw InsufficientHistory("iterates are not consecutive");

    const double X = a.outgoing();
    const double grazing = b.outgoing(0, delta);
    const double coef = X > 0 ? grazing / X : 0.0;
    const double L = c.incoming;
    const double Y = b.bulk + c.bulk;
    const double rest = std::max(0.0, L - coef * X);
    const double C = Y > 0 ? rest / Y : (rest > 0 ? inf : 0.0);

    InequalityReport r;
    r.name = "double_iteration_trace";
    r.lhs = L;
    r.rhs = coef * X + C * Y;
    r.coefficient = coef;
    r.constant_fitted = C;
    r.pass = std::isfinite(C);
    r.details = {{"delta", delta},
                 {"outgoing_m_minus_1", X},
                 {"grazing_outgoing_m", grazing},
                 {"bulk", Y},
                 {"coefficient_over_delta", delta > 0 ? coef / delta : nan}};
    return r;
}

InequalityReport exit_map_jacobian_check(const Domain& d, const VelocitySpace& space, const PhaseFn& g,
                                         const JacobianOptions& opt) {
    if (opt.n_samples < 1000) throw ConfigError("jacobian.n_samples must be >= 1000");
    const double scale = d.boundary_area() * space.shell_volume();
    const int n = opt.n_samples;

    InequalityReport r;
    r.name = "exit_map_jacobian";
    r.pass = true;
    double worst = 0;
    for (std::size_t ki = 0; ki < opt.k_values.size(); ++ki) {
        const double cut = 1.0 / opt.k_values[ki];
        std::vector<double> lv(n), rv(n);
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
            {
                Rng rng = Rng::stream(opt.seed, 4 * i + 2 * ki);
                Vec3 x = d.sample_boundary(rng);
                Vec3 v = space.sample_uniform(rng);
                double nv = outward_normal(d, x).dot(v);
                double val = 0;
                if (nv > 0) {
                    ExitRecord e = backward_exit(d, x, v);
                    if (std::abs(e.normal_dot_v) > cut) val = g(x, v) * nv;
                }
                lv[i] = scale * val;
            }
            {
                Rng rng = Rng::stream(opt.seed, 4 * i + 2 * ki + 1);
                Vec3 x = d.sample_boundary(rng);
                Vec3 v = space.sample_uniform(rng);
                double nv = outward_normal(d, x).dot(v);
                double val = 0;
                if (nv < -cut) val = g(forward_exit(d, x, v).x_exit, v) * -nv;
                rv[i] = scale * val;
            }
        });
        auto stats = [n](const std::vector<double>& s, double& mean, double& se) {
            mean = 0;
            for (double x : s) mean += x;
            mean /= n;
            double var = 0;
            for (double x : s) var += (x - mean) * (x - mean);
            se = std::sqrt(var / (n - 1) / n);
        };
        double ml, sl, mr, sr;
        stats(lv, ml, sl);
        stats(rv, mr, sr);
        const double se = std::sqrt(sl * sl + sr * sr);
        const bool ok = std::abs(ml - mr) <= 3 * se;
        r.pass = r.pass && ok;
        const std::string k = std::to_string(opt.k_values[ki]);
        r.details["gamma_plus_k" + k] = ml;
        r.details["gamma_minus_k" + k] = mr;
        r.details["se_k" + k] = se;
        if (se > 0) worst = std::max(worst, std::abs(ml - mr) / se);
        r.lhs = ml;
        r.rhs = mr;
    }
    r.constant_fitted = r.rhs != 0 ? r.lhs / r.rhs : 0.0;
    r.details["worst_z"] = worst;
    return r;
}

// ------------------------------------------------------------- covering

namespace {

// |v . n(x_b(x, v))| for a fixed sample of velocities at x.
std::vector<double> foot_normal_components(const Domain& d, const VelocitySpace& space, const Vec3& x, int n,
                                           std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> c(n);
    for (int i = 0; i < n; ++i) {
        Vec3 v = space.sample_uniform(rng);
        c[i] = std::abs(backward_exit(d, x, v).normal_dot_v);
    }
    return c;
}

std::pair<double, double> band_fraction(const std::vector<double>& c, double delta, double volume) {
    const double n = static_cast<double>(c.size());
    double hits = 0;
    for (double x : c) hits += x <= delta;
    const double p = hits / n;
    return {volume * p, volume * std::sqrt(p * (1 - p) / n)};
}

}  // namespace

std::pair<double, double> bad_velocity_measure(const Domain& d, const VelocitySpace& space, const Vec3& x,
                                               double delta, int n_samples, std::uint64_t seed) {
    return band_fraction(foot_normal_components(d, space, x, n_samples, seed), delta, space.shell_volume());
}

double ball_bad_velocity_measure(const VelocitySpace& space, double rho, double delta) {
    // Directions at angle theta from x hit the sphere with |n.w| =
    // sqrt(1 - rho^2 sin^2 theta); the bad set at speed r is sin^2 theta >=
    // (1 - delta^2 / r^2) / rho^2, a band of relative size sqrt(1 - s^2).
    auto frac = [&](double r) {
        if (r <= delta) return 1.0;
        if (rho == 0) return 0.0;
        double s2 = (1 - delta * delta / (r * r)) / (rho * rho);
        if (s2 >= 1) return 0.0;
        return std::sqrt(1 - s2);
    };
    std::vector<double> cuts{space.a(), space.b()};
    if (delta > space.a() && delta < space.b()) cuts.push_back(delta);
    if (rho < 1) {
        double r1 = delta / std::sqrt(1 - rho * rho);
        if (r1 > space.a() && r1 < space.b()) cuts.push_back(r1);
    }
    std::sort(cuts.begin(), cuts.end());
    double total = 0;
    std::vector<double> x, w;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        gauss_on(48, cuts[i], cuts[i + 1], x, w);
        for (std::size_t q = 0; q < x.size(); ++q) total += w[q] * 4 * pi * x[q] * x[q] * frac(x[q]);
    }
    return total;
}

CoveringResult covering_lemma(const Domain& d, const VelocitySpace& space, const CoveringOptions& opt) {
    if (!(opt.epsilon > 0)) throw ConfigError("covering.epsilon must be > 0");
    if (!(opt.ball_radius > 0)) throw ConfigError("covering.ball_radius must be > 0");
    CoveringResult res;
    const double R = opt.ball_radius * d.bounding_radius();
    const double s = R / 4;
    const Vec3 lo = d.box_lo(), hi = d.box_hi();
    int n[3];
    for (int a = 0; a < 3; ++a) n[a] = std::max(1, static_cast<int>(std::ceil((hi[a] - lo[a]) / s)));
    for (int i = 0; i <= n[0]; ++i)
        for (int j = 0; j <= n[1]; ++j)
            for (int k = 0; k <= n[2]; ++k) {
                Vec3 y = lo + Vec3(i * s, j * s, k * s);
                if (d.phi(y) > 0) continue;
                bool covered = false;
                for (const Vec3& c : res.centers)
                    if ((c - y).norm() < R) {
                        covered = true;
                        break;
                    }
                if (!covered) res.centers.push_back(y);
            }
    // Every lattice point of the domain is within R of a center; a point
    // of the closed domain is within one lattice diagonal of such a point.
    res.radius = R + std::sqrt(3.0) * s;

    std::vector<std::vector<double>> comps(res.centers.size());
    parallel_for(comps.size(), [&](std::size_t i) {
        comps[i] = foot_normal_components(d, space, res.centers[i], opt.velocity_samples,
                                          Rng::stream(opt.seed, i).next());
    });
    const double vol = space.shell_volume();
    double delta = opt.delta0;
    for (int it = 0; it <= opt.max_halvings; ++it, delta *= 0.5) {
        std::vector<double> m(comps.size()), se(comps.size());
        bool ok = true;
        for (std::size_t i = 0; i < comps.size(); ++i) {
            std::tie(m[i], se[i]) = band_fraction(comps[i], delta, vol);
            ok = ok && m[i] < opt.epsilon;
        }
        if (ok) {
            res.delta = delta;
            res.measures = std::move(m);
            res.se = std::move(se);
            res.found = true;
            break;
        }
    }
    return res;
}

InequalityReport covering_lemma_check(const Domain& d, const VelocitySpace& space, const CoveringOptions& opt) {
    CoveringResult c = covering_lemma(d, space, opt);
    InequalityReport r;
    r.name = "covering_lemma";
    r.pass = c.found;
    r.rhs = opt.epsilon;
    r.lhs = c.found ? *std::max_element(c.measures.begin(), c.measures.end()) : nan;
    r.constant_fitted = c.found ? r.lhs / r.rhs : nan;
    r.coefficient = c.delta;
    r.details = {{"epsilon", opt.epsilon},
                 {"delta", c.delta},
                 {"centers", static_cast<double>(c.centers.size())},
                 {"radius", c.radius}};
    return r;
}

}  // namespace ntk
