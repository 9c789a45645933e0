#include "ntk/characteristics.hpp"

#include "ntk/parallel.hpp"
#include "ntk/quadrature.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>

namespace ntk {

namespace {

bool variable_sigma(const InflowProblem& p) {
    return p.sigma_in_exponent && p.material && !p.material->sigma_constant;
}

double constant_rate(const InflowProblem& p, const Vec3& x, const Vec3& v) {
    double r = p.lambda;
    if (p.sigma_in_exponent && p.material && p.material->sigma_constant) r += p.material->sigma(x, v);
    return r;
}

}  // namespace

void attenuation(const InflowProblem& p, const Vec3& x, const Vec3& v, const double* taus, int n, double* out) {
    if (!variable_sigma(p)) {
        double rate = constant_rate(p, x, v);
        for (int i = 0; i < n; ++i) out[i] = std::exp(-rate * taus[i]);
        return;
    }
    const GaussRule& g = gauss_legendre(p.n_quad_line);
    for (int i = 0; i < n; ++i) {
        double tau = taus[i], half = 0.5 * tau, integral = 0;
        for (int q = 0; q < p.n_quad_line; ++q) {
            double s = half * (1 + g.nodes[q]);
            integral += half * g.weights[q] * p.material->sigma(x - s * v, v);
        }
        out[i] = std::exp(-p.lambda * tau - integral);
    }
}

DuhamelValue duhamel_eval(const InflowProblem& p, double t, const PhaseState& s) {
    if (!(t >= 0) || t > p.T * (1 + 1e-12)) throw InvalidState("duhamel_eval: t outside [0, T]");
    const Vec3& x = s.x;
    const Vec3& v = s.v;
    ExitRecord e = backward_exit(*p.domain, x, v);
    DuhamelValue out;
    out.ambiguous = std::abs(t - e.t_exit) <= p.domain->time_tol;
    const bool before = t <= e.t_exit || out.ambiguous;
    const double tau_end = before ? t : e.t_exit;

    const int nq = p.n_quad_line;
    const GaussRule& g = gauss_legendre(nq);
    std::vector<double> taus(nq + 1), E(nq + 1);
    for (int q = 0; q < nq; ++q) taus[q] = 0.5 * tau_end * (1 + g.nodes[q]);
    taus[nq] = tau_end;
    attenuation(p, x, v, taus.data(), nq + 1, E.data());

    double val = 0;
    if (before) {
        if (p.initial) val += E[nq] * p.initial(x - t * v, v);
    } else {
        if (p.inflow) val += E[nq] * p.inflow(t - e.t_exit, e.x_exit, v);
    }
    if (p.source && tau_end > 0) {
        for (int q = 0; q < nq; ++q)
            val += 0.5 * tau_end * g.weights[q] * E[q] * p.source(t - taus[q], x - taus[q] * v, v);
    }
    out.value = val;
    return out;
}

CharacteristicSolver::CharacteristicSolver(InflowProblem problem, GridPtr grid)
    : p_(std::move(problem)), grid_(std::move(grid)) {
    if (!(p_.lambda >= 0)) throw ConfigError("lambda must be >= 0");
    const int nv = grid_->n_valued();
    const int nk = grid_->vel().size();
    const std::size_t n = static_cast<std::size_t>(nv) * nk;
    cache_.tb.resize(n);
    cache_.xb.resize(n);
    cache_.grazing.resize(n);
    parallel_for(static_cast<std::size_t>(nv), [&](std::size_t id) {
        const Vec3& x = grid_->eval_point(static_cast<int>(id));
        for (int k = 0; k < nk; ++k) {
            ExitRecord e = backward_exit(*p_.domain, x, grid_->vel().v(k));
            std::size_t c = id * nk + k;
            cache_.tb[c] = e.t_exit;
            cache_.xb[c] = e.x_exit;
            cache_.grazing[c] = e.grazing;
        }
    });
}

std::vector<double> CharacteristicSolver::boundary_average(const PhaseField& f) const {
    const int nv = grid_->n_valued(), nk = grid_->vel().size(), nt = f.n_times();
    std::vector<double> avg(static_cast<std::size_t>(nt) * nv, nan);
    parallel_for(static_cast<std::size_t>(nv), [&](std::size_t id) {
        if (!grid_->in_band(static_cast<int>(id))) return;
        const Vec3& n = grid_->band_normal(static_cast<int>(id));
        std::vector<double> w(nk);
        double norm = 0;
        // Cell integrals of (n.v)+ so cells cut by the tangent plane count
        // only their outgoing part.
        const VelocityLattice& L = grid_->vel();
        for (int k = 0; k < nk; ++k) {
            const Vec3* pts = L.sub_points(k);
            const double* wts = L.sub_weights(k);
            double s = 0;
            for (int q = 0; q < VelocityLattice::kSubPoints; ++q) s += wts[q] * std::max(0.0, n.dot(pts[q]));
            w[k] = s;
            norm += s;
        }
        for (int m = 0; m < nt; ++m) {
            double s = 0;
            for (int k = 0; k < nk; ++k)
                if (w[k] > 0) s += w[k] * f.at(m, static_cast<int>(id), k);
            avg[static_cast<std::size_t>(m) * nv + id] = s / norm;
        }
    });
    return avg;
}

double CharacteristicSolver::interp_boundary_average(const std::vector<double>& avg, double lambda, double t,
                                                     const Vec3& x) const {
    const int nv = grid_->n_valued();
    const int nt = static_cast<int>(avg.size() / nv);
    int ids[8];
    double wt[8];
    int c = grid_->spatial_stencil(x, ids, wt);
    int m = 0;
    double w0 = 1, w1 = 0;
    if (nt > 1) {
        double th;
        grid_->time_locate(t, m, th);
        const auto& ts = grid_->times();
        w0 = (1 - th) * std::exp(lambda * (ts[m] - t));
        w1 = th * std::exp(lambda * (ts[m + 1] - t));
    }
    double s = 0, tw = 0;
    for (int i = 0; i < c; ++i) {
        double a0 = avg[static_cast<std::size_t>(m) * nv + ids[i]];
        if (std::isnan(a0)) continue;
        double a = w0 * a0;
        if (w1 != 0) a += w1 * avg[static_cast<std::size_t>(m + 1) * nv + ids[i]];
        s += wt[i] * a;
        tw += wt[i];
    }
    if (tw > 0) return s / tw;
    // Fall back to the nearest band node.
    double best = inf, val = 0;
    for (int id = 0; id < nv; ++id) {
        if (!grid_->in_band(id)) continue;
        double d = (grid_->eval_point(id) - x).squaredNorm();
        if (d < best) {
            best = d;
            double a = w0 * avg[static_cast<std::size_t>(m) * nv + id];
            if (w1 != 0) a += w1 * avg[static_cast<std::size_t>(m + 1) * nv + id];
            val = a;
        }
    }
    return val;
}

PhaseField CharacteristicSolver::sweep(const SweepTerms& terms, SweepStats* stats) const {
    const PhaseGrid& G = *grid_;
    const int nv = G.n_valued(), nk = G.vel().size();
    const int nt = static_cast<int>(G.times().size());
    PhaseField out(grid_, nt, p_.lambda);

    std::vector<double> avg;
    if (terms.reflect_field && terms.reflect_factor != 0) avg = boundary_average(*terms.reflect_field);
    const double refl_lambda = terms.reflect_field ? terms.reflect_field->lambda() : 0.0;

    const int nq = p_.n_quad_line;
    const GaussRule& g = gauss_legendre(nq);
    const double time_tol = p_.domain->time_tol;

    struct Local {
        std::size_t amb = 0;
        double s0 = 0, sr = 0, sq = 0;
    };
    std::vector<Local> locals(static_cast<std::size_t>(nv));

    parallel_for(static_cast<std::size_t>(nv), [&](std::size_t idz) {
        const int id = static_cast<int>(idz);
        const Vec3& x = G.eval_point(id);
        Local loc;
        std::vector<double> taus(nq + 1), E(nq + 1);
        for (int k = 0; k < nk; ++k) {
            const Vec3& v = G.vel().v(k);
            const std::size_t c = cache_index(id, k);
            const double tb = cache_.tb[c];
            const Vec3& xb = cache_.xb[c];
            double u0 = p_.initial ? p_.initial(x, v) : 0.0;
            loc.s0 = std::max(loc.s0, std::abs(u0));
            out.at(0, id, k) = u0;
            for (int m = 1; m < nt; ++m) {
                const double t = G.times()[m];
                bool amb = std::abs(t - tb) <= time_tol;
                bool before = t <= tb || amb;
                if (amb) ++loc.amb;
                double tau_end = before ? t : tb;
                for (int q = 0; q < nq; ++q) taus[q] = 0.5 * tau_end * (1 + g.nodes[q]);
                taus[nq] = tau_end;
                attenuation(p_, x, v, taus.data(), nq + 1, E.data());
                double val = 0;
                if (before) {
                    double a = p_.initial ? p_.initial(x - t * v, v) : 0.0;
                    loc.s0 = std::max(loc.s0, std::abs(a));
                    val += E[nq] * a;
                } else {
                    double tp = t - tb;
                    double r = p_.inflow ? p_.inflow(tp, xb, v) : 0.0;
                    if (!avg.empty()) r += terms.reflect_factor * interp_boundary_average(avg, refl_lambda, tp, xb);
                    if (terms.inflow_multiplier) r *= (*terms.inflow_multiplier)[c];
                    loc.sr = std::max(loc.sr, std::abs(r));
                    val += E[nq] * r;
                }
                if (tau_end > 0 && (p_.source || terms.source_field)) {
                    double acc = 0;
                    for (int q = 0; q < nq; ++q) {
                        double ts = t - taus[q];
                        Vec3 y = x - taus[q] * v;
                        double Q = p_.source ? p_.source(ts, y, v) : 0.0;
                        if (terms.source_field) Q += terms.source_field->interp(ts, y, k);
                        loc.sq = std::max(loc.sq, std::abs(Q));
                        acc += g.weights[q] * E[q] * Q;
                    }
                    val += 0.5 * tau_end * acc;
                }
                out.at(m, id, k) = val;
            }
        }
        locals[idz] = loc;
    });

    SweepStats st;
    for (const auto& l : locals) {
        st.ambiguous += l.amb;
        st.sup_initial = std::max(st.sup_initial, l.s0);
        st.sup_inflow = std::max(st.sup_inflow, l.sr);
        st.sup_source = std::max(st.sup_source, l.sq);
    }
    double bound = st.sup_initial + st.sup_inflow + G.T() * st.sup_source;
    double sup = out.sup_norm();
    if (sup > bound + 1e-8 * (1 + bound)) {
        std::ostringstream os;
        os << "sweep sup " << sup << " exceeds data bound " << bound;
        throw BoundViolation(os.str());
    }
    if (stats) *stats = st;
    return out;
}

PhaseField solve_inflow(const InflowProblem& p, const GridPtr& grid, double t, SweepStats* stats) {
    const int nv = grid->n_valued(), nk = grid->vel().size();
    PhaseField out(grid, 1, p.lambda);
    out.time_stamp = t;
    std::atomic<std::size_t> amb{0};
    parallel_for(static_cast<std::size_t>(nv), [&](std::size_t id) {
        for (int k = 0; k < nk; ++k) {
            DuhamelValue d = duhamel_eval(p, t, {grid->eval_point(static_cast<int>(id)), grid->vel().v(k)});
            out.at(0, static_cast<int>(id), k) = d.value;
            if (d.ambiguous) ++amb;
        }
    });
    // Sup-norm postcondition against data sampled at the nodes, the foot
    // points and along every characteristic segment actually used.
    SweepStats st;
    st.ambiguous = amb;
    const GaussRule& g = gauss_legendre(p.n_quad_line);
    for (int id = 0; id < nv; ++id) {
        const Vec3& x = grid->eval_point(id);
        for (int k = 0; k < nk; ++k) {
            const Vec3& v = grid->vel().v(k);
            ExitRecord e = backward_exit(*p.domain, x, v);
            bool before = t <= e.t_exit || std::abs(t - e.t_exit) <= p.domain->time_tol;
            double tau_end = before ? t : e.t_exit;
            if (before && p.initial) st.sup_initial = std::max(st.sup_initial, std::abs(p.initial(x - t * v, v)));
            if (!before && p.inflow) st.sup_inflow = std::max(st.sup_inflow, std::abs(p.inflow(t - e.t_exit, e.x_exit, v)));
            if (p.source)
                for (int q = 0; q < p.n_quad_line; ++q) {
                    double tau = 0.5 * tau_end * (1 + g.nodes[q]);
                    st.sup_source = std::max(st.sup_source, std::abs(p.source(t - tau, x - tau * v, v)));
                }
        }
    }
    double bound = st.sup_initial + st.sup_inflow + t * st.sup_source;
    if (out.sup_norm() > bound + 1e-8 * (1 + bound)) throw BoundViolation("solve_inflow sup exceeds data bound");
    if (stats) *stats = st;
    return out;
}

}  // namespace ntk
