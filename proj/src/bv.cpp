#include "ntk/bv.hpp"

#include "ntk/parallel.hpp"
#include "ntk/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ntk {

namespace {

int resolve_level(const PhaseField& f, int level) {
    int m = level < 0 ? f.n_times() - 1 : level;
    if (m < 0 || m >= f.n_times()) throw InvalidState("time level out of range");
    return m;
}

// Measure of the face between node (id, k) and its +axis neighbor.
double face_measure(const PhaseGrid& G, int k, int axis) {
    if (axis < 3) return G.cell_volume() / G.h(axis) * G.vel().w(k);
    return G.cell_volume() * G.vel().w(k) / G.vel().step_length(k, axis - 3);
}

// +axis neighbor of (id, k) among interior nodes, or false.
bool pair_of(const PhaseGrid& G, int id, int k, int axis, int& id_b, int& k_b) {
    if (G.is_ghost(id)) return false;
    if (axis >= 3) {
        k_b = G.vel().neighbor(k, axis - 3);
        id_b = id;
        return k_b >= 0;
    }
    auto c = G.spatial_coords(G.valued_spatial(id));
    if (++c[axis] >= G.dims()[axis]) return false;
    id_b = G.valued_id(G.spatial_index(c[0], c[1], c[2]));
    k_b = k;
    return id_b >= 0 && !G.is_ghost(id_b);
}

}  // namespace

std::array<double, 6> total_variation_per_axis(const PhaseField& f, int level) {
    const int m = resolve_level(f, level);
    const PhaseGrid& G = *f.grid();
    const int nv = G.n_valued(), nk = G.vel().size();
    for (int a = 0; a < 3; ++a)
        if (G.dims()[a] < 2) throw InvalidState("total variation needs two nodes per axis");
    std::vector<std::array<double, 6>> part(static_cast<std::size_t>(nv));
    parallel_for(part.size(), [&](std::size_t idz) {
        const int id = static_cast<int>(idz);
        std::array<double, 6> acc{};
        for (int k = 0; k < nk; ++k)
            for (int a = 0; a < 6; ++a) {
                int ib, kb;
                if (!pair_of(G, id, k, a, ib, kb)) continue;
                acc[a] += std::abs(f.at(m, ib, kb) - f.at(m, id, k)) * face_measure(G, k, a);
            }
        part[idz] = acc;
    });
    std::array<double, 6> out{};
    for (const auto& p : part)
        for (int a = 0; a < 6; ++a) out[a] += p[a];
    return out;
}

double total_variation(const PhaseField& f, int level) {
    double s = 0;
    for (double a : total_variation_per_axis(f, level)) s += a;
    return s;
}

double l1_norm(const PhaseField& f, int level) {
    const int m = resolve_level(f, level);
    const PhaseGrid& G = *f.grid();
    double s = 0;
    for (int id = 0; id < G.n_valued(); ++id) {
        double row = 0;
        for (int k = 0; k < G.vel().size(); ++k) row += G.vel().w(k) * std::abs(f.at(m, id, k));
        s += G.volume_fraction(id) * row;
    }
    return s * G.cell_volume();
}

// ---------------------------------------------------------------- closure

namespace {

// (I - n n^T) Hess(phi) (I - n n^T) / |grad phi|: d n along a tangent t is S t.
Mat3 shape_operator(const Domain& d, const Vec3& x, const Vec3& n) {
    Mat3 P = Mat3::Identity() - n * n.transpose();
    return P * d.hess(x) * P / d.grad(x).norm();
}

}  // namespace

BoundaryDerivatives boundary_derivative_closure(const MixedProblem& p, const TraceData& tr, double t, const Vec3& x,
                                                const Vec3& v, double lambda) {
    if (!p.domain || !p.space) throw ConfigError("problem.domain and problem.space are required");
    const Domain& d = *p.domain;
    BoundaryDerivatives out;
    out.n = outward_normal(d, x);
    tangent_frame(out.n, out.tau1, out.tau2);
    const Vec3& n = out.n;
    const double nv = n.dot(v);
    if (std::abs(nv) <= d.graze_tol * v.norm()) {
        std::ostringstream os;
        os << "n.v = " << nv << " at a boundary state; the normal derivative is not closable";
        throw GrazingNormal(os.str());
    }
    if (nv > 0) throw InvalidState("boundary_derivative_closure needs an incoming state");

    const Mat3 S = shape_operator(d, x, n);
    const Vec3 dn[2] = {S * out.tau1, S * out.tau2};
    const Vec3 tau[2] = {out.tau1, out.tau2};

    // Diffuse average and its derivatives. Moving along tau_i rotates the
    // half space with the normal; the rotation maps v' to
    // dn (n.v') - n (dn.v').
    const double c = normalization_constant(*p.space, n);
    double P = 0, Pt = 0, dP[2] = {0, 0};
    for (const VelocityNode& q : p.space->half_rule(n)) {
        const double wq = q.w * n.dot(q.v);
        const Vec3 gx = tr.grad_x ? tr.grad_x(q.v) : Vec3::Zero();
        const Vec3 gv = tr.grad_v ? tr.grad_v(q.v) : Vec3::Zero();
        if (tr.value) P += wq * tr.value(q.v);
        if (tr.dt) Pt += wq * tr.dt(q.v);
        for (int i = 0; i < 2; ++i) {
            Vec3 rot = dn[i] * n.dot(q.v) - n * dn[i].dot(q.v);
            dP[i] += wq * (tau[i].dot(gx) + gv.dot(rot));
        }
    }
    P *= c;
    Pt *= c;
    dP[0] *= c;
    dP[1] *= c;

    // In-flow data and its derivatives by central differences.
    const double h = 1e-6;
    auto r = [&](double tt, const Vec3& xx, const Vec3& vv) { return p.inflow ? p.inflow(tt, xx, vv) : 0.0; };
    const double r0 = r(t, x, v);
    const double rt = (r(t + h, x, v) - r(t - h, x, v)) / (2 * h);
    Vec3 rx, rv;
    for (int a = 0; a < 3; ++a) {
        Vec3 e = Vec3::Unit(a) * h;
        rx[a] = (r(t, x + e, v) - r(t, x - e, v)) / (2 * h);
        rv[a] = (r(t, x, v + e) - r(t, x, v - e)) / (2 * h);
    }

    const double g = P + r0;
    out.d_t = Pt + rt;
    out.d_tau1 = dP[0] + tau[0].dot(rx);
    out.d_tau2 = dP[1] + tau[1].dot(rx);
    out.d_v = rv;

    // Right-hand side at the boundary state: q + K u, with incoming values
    // of u given by the boundary condition itself.
    double rhs = p.source ? p.source(t, x, v) : 0.0;
    double sigma = 0;
    if (p.material) {
        sigma = p.material->sigma(x, v);
        if (!p.material->kernel_zero) {
            double ku = 0;
            for (const VelocityNode& q : p.space->full_rule()) {
                double u = n.dot(q.v) > 0 ? (tr.value ? tr.value(q.v) : 0.0) : P + r(t, x, q.v);
                ku += q.w * p.material->kernel(x, v, q.v) * u;
            }
            rhs += ku;
        }
    }
    const double tangential = v.dot(tau[0]) * out.d_tau1 + v.dot(tau[1]) * out.d_tau2;
    out.d_n = (rhs - out.d_t - (lambda + sigma) * g - tangential) / nv;
    return out;
}

double IterateTrace::outgoing(double lo, double hi) const {
    double s = 0;
    for (std::size_t i = 0; i < out_nv.size(); ++i)
        if (out_nv[i] >= lo && out_nv[i] < hi) s += out_mass[i];
    return s;
}

// ----------------------------------------------------------------- scheme

namespace {

using BoundaryFn = std::function<double(std::size_t c, int m, double tp)>;

// Characteristic sweep with the initial value read from a static field,
// the source from a space-time field and the in-flow value from a
// callback indexed by node and time level.
PhaseField transport(const CharacteristicSolver& cs, const PhaseField& initial, const PhaseField* source,
                     const BoundaryFn& boundary) {
    const PhaseGrid& G = *cs.grid();
    const InflowProblem& ip = cs.problem();
    const int nv = G.n_valued(), nk = G.vel().size();
    const int nt = static_cast<int>(G.times().size());
    PhaseField out(cs.grid(), nt, ip.lambda);
    const int nq = ip.n_quad_line;
    const GaussRule& g = gauss_legendre(nq);
    const double time_tol = ip.domain->time_tol;
    parallel_for(static_cast<std::size_t>(nv), [&](std::size_t idz) {
        const int id = static_cast<int>(idz);
        const Vec3& x = G.eval_point(id);
        std::vector<double> taus(nq + 1), E(nq + 1);
        for (int k = 0; k < nk; ++k) {
            const Vec3& v = G.vel().v(k);
            const std::size_t c = cs.cache_index(id, k);
            const double tb = cs.exits().tb[c];
            out.at(0, id, k) = initial.at(0, id, k);
            for (int m = 1; m < nt; ++m) {
                const double t = G.times()[m];
                const bool before = t <= tb || std::abs(t - tb) <= time_tol;
                const double tau_end = before ? t : tb;
                for (int q = 0; q < nq; ++q) taus[q] = 0.5 * tau_end * (1 + g.nodes[q]);
                taus[nq] = tau_end;
                attenuation(ip, x, v, taus.data(), nq + 1, E.data());
                double val = before ? E[nq] * initial.interp_level(0, x - t * v, v) : E[nq] * boundary(c, m, t - tb);
                if (source && tau_end > 0) {
                    double acc = 0;
                    for (int q = 0; q < nq; ++q) acc += g.weights[q] * E[q] * source->interp(t - taus[q], x - taus[q] * v, k);
                    val += 0.5 * tau_end * acc;
                }
                out.at(m, id, k) = val;
            }
        }
    });
    return out;
}

// Scattering with kernel derivatives. mats[0] = K, mats[1 + a] = d/dx_a K,
// mats[4 + a] = d/dv_a K (v is the first kernel argument).
struct KernelSet {
    int nk = 0;
    std::array<std::vector<double>, 7> mats;
};

void fill_kernels(const Material& mat, const VelocityLattice& L, const Vec3& x, double h, KernelSet& K) {
    const int nk = L.size();
    K.nk = nk;
    for (auto& m : K.mats) m.assign(static_cast<std::size_t>(nk) * nk, 0.0);
    for (int k = 0; k < nk; ++k)
        for (int kp = 0; kp < nk; ++kp) {
            const Vec3* pts = L.sub_points(kp);
            const double* wts = L.sub_weights(kp);
            double s[7] = {0, 0, 0, 0, 0, 0, 0};
            const Vec3& v = L.v(k);
            for (int q = 0; q < VelocityLattice::kSubPoints; ++q) {
                s[0] += wts[q] * mat.kernel(x, v, pts[q]);
                for (int a = 0; a < 3; ++a) {
                    Vec3 e = Vec3::Unit(a) * h;
                    s[1 + a] += wts[q] * (mat.kernel(x + e, v, pts[q]) - mat.kernel(x - e, v, pts[q])) / (2 * h);
                    s[4 + a] += wts[q] * (mat.kernel(x, v + e, pts[q]) - mat.kernel(x, v - e, pts[q])) / (2 * h);
                }
            }
            for (int j = 0; j < 7; ++j) K.mats[j][static_cast<std::size_t>(k) * nk + kp] = s[j];
        }
}

double mat_row(const std::vector<double>& M, int nk, int k, const PhaseField& f, int m, int id) {
    double s = 0;
    for (int kp = 0; kp < nk; ++kp) s += M[static_cast<std::size_t>(k) * nk + kp] * f.at(m, id, kp);
    return s;
}

// Time-integration weights (trapezoid) over the grid's time levels.
std::vector<double> trapezoid(const std::vector<double>& ts) {
    std::vector<double> w(ts.size(), 0.0);
    for (std::size_t m = 0; m + 1 < ts.size(); ++m) {
        double dt = ts[m + 1] - ts[m];
        w[m] += 0.5 * dt;
        w[m + 1] += 0.5 * dt;
    }
    return w;
}

}  // namespace

BVSchemeResult solve_bv_scheme(const MixedProblem& p, const CutoffField& cutoff, const GridPtr& grid,
                               const BVSchemeOptions& opt) {
    if (!p.domain || !p.space) throw ConfigError("problem.domain and problem.space are required");
    if (opt.m_max < 1) throw ConfigError("bv.m_max must be >= 1");
    if (!(opt.tol > 0)) throw ConfigError("bv.tol must be > 0");
    const Domain& d = *p.domain;
    const double lambda = p.effective_lambda();
    if (!(lambda > p.lambda0())) throw ConfigError("bv: lambda must exceed 1 + M_a + M_b");
    const double rho = reflection_factor(opt.j);

    InflowProblem ip;
    ip.domain = p.domain;
    ip.material = p.material;
    ip.lambda = lambda;
    ip.sigma_in_exponent = true;
    ip.T = grid->T();
    CharacteristicSolver cs(ip, grid);

    const PhaseGrid& G = *grid;
    const VelocityLattice& L = G.vel();
    const int nv = G.n_valued(), nk = L.size();
    const int nt = static_cast<int>(G.times().size());
    const auto& ts = G.times();
    const std::size_t nn = static_cast<std::size_t>(nv) * nk;
    const double h = opt.fd_step;
    const Material* mat = p.material;
    const bool with_k = mat && !mat->kernel_zero;

    // Cut-off at the nodes and at the backward exit points.
    std::vector<ChiValue> chi_node(nn), chi_foot(nn);
    parallel_for(static_cast<std::size_t>(nv), [&](std::size_t idz) {
        const int id = static_cast<int>(idz);
        for (int k = 0; k < nk; ++k) {
            const std::size_t c = cs.cache_index(id, k);
            chi_node[c] = cutoff.evaluate({G.eval_point(id), L.v(k)});
            chi_foot[c] = cutoff.evaluate({cs.exits().xb[c], L.v(k)});
        }
    });
    BVSchemeResult res;
    for (std::size_t c = 0; c < nn; ++c) {
        if (chi_node[c].value < 1) ++res.cut_nodes;
        if (cs.exits().grazing[c] && chi_foot[c].value > 0) {
            std::ostringstream os;
            os << "grazing characteristic from node " << c / nk << " velocity " << c % nk
               << " reaches the wall where the cut-off is " << chi_foot[c].value;
            throw SingularLeak(os.str());
        }
    }

    // Static and space-time data at the nodes (shifted), with derivatives.
    auto u0 = [&](const Vec3& x, const Vec3& v) { return p.initial ? p.initial(x, v) : 0.0; };
    auto q = [&](double t, const Vec3& x, const Vec3& v) { return p.source ? p.source(t, x, v) : 0.0; };
    auto sigma = [&](const Vec3& x, const Vec3& v) { return mat ? mat->sigma(x, v) : 0.0; };
    PhaseField W0(grid, 1, lambda);
    std::array<PhaseField, 6> dW0;
    for (auto& f : dW0) f = PhaseField(grid, 1, lambda);
    PhaseField Q(grid, nt, lambda);
    std::array<PhaseField, 6> dQ;
    for (auto& f : dQ) f = PhaseField(grid, nt, lambda);
    std::vector<std::array<double, 6>> dsig(nn);
    parallel_for(static_cast<std::size_t>(nv), [&](std::size_t idz) {
        const int id = static_cast<int>(idz);
        const Vec3& x = G.eval_point(id);
        for (int k = 0; k < nk; ++k) {
            const Vec3& v = L.v(k);
            const std::size_t c = cs.cache_index(id, k);
            const ChiValue& chi = chi_node[c];
            const double a0 = u0(x, v);
            W0.at(0, id, k) = chi.value * a0;
            for (int a = 0; a < 6; ++a) {
                Vec3 e = Vec3::Unit(a % 3) * h;
                double da = a < 3 ? (u0(x + e, v) - u0(x - e, v)) / (2 * h) : (u0(x, v + e) - u0(x, v - e)) / (2 * h);
                dW0[a].at(0, id, k) = chi.grad[a] * a0 + chi.value * da;
                dsig[c][a] = a < 3 ? (sigma(x + e, v) - sigma(x - e, v)) / (2 * h)
                                   : (sigma(x, v + e) - sigma(x, v - e)) / (2 * h);
            }
            for (int m = 0; m < nt; ++m) {
                const double t = ts[m], sh = std::exp(-lambda * t);
                Q.at(m, id, k) = sh * q(t, x, v);
                for (int a = 0; a < 6; ++a) {
                    Vec3 e = Vec3::Unit(a % 3) * h;
                    double da = a < 3 ? (q(t, x + e, v) - q(t, x - e, v)) / (2 * h)
                                      : (q(t, x, v + e) - q(t, x, v - e)) / (2 * h);
                    dQ[a].at(m, id, k) = sh * da;
                }
            }
        }
    });

    KernelSet shared_k;
    if (with_k && mat->kernel_x_independent) fill_kernels(*mat, L, Vec3::Zero(), h, shared_k);

    // Per band node: unit normal, cell weights of (n.v)+ and their
    // tangential derivatives (for the surface gradient of P_gamma).
    struct BandData {
        Vec3 n;
        Mat3 Pn;
        std::vector<double> w;
        std::vector<Vec3> a;
        double N = 0;
        Vec3 A = Vec3::Zero();
    };
    std::vector<BandData> band(static_cast<std::size_t>(nv));
    parallel_for(static_cast<std::size_t>(nv), [&](std::size_t idz) {
        const int id = static_cast<int>(idz);
        if (!G.in_band(id)) return;
        BandData& B = band[idz];
        B.n = G.band_normal(id);
        B.Pn = Mat3::Identity() - B.n * B.n.transpose();
        const Mat3 S = shape_operator(d, G.eval_point(id), B.n);
        B.w.assign(nk, 0.0);
        B.a.assign(nk, Vec3::Zero());
        for (int k = 0; k < nk; ++k) {
            const Vec3* pts = L.sub_points(k);
            const double* wts = L.sub_weights(k);
            for (int s = 0; s < VelocityLattice::kSubPoints; ++s) {
                double c = B.n.dot(pts[s]);
                if (c <= 0) continue;
                B.w[k] += wts[s] * c;
                B.a[k] += wts[s] * (S * pts[s]);
            }
            B.N += B.w[k];
            B.A += B.a[k];
        }
    });

    // Boundary quadrature for the trace masses.
    const auto bq = d.boundary_quadrature(opt.boundary_nodes, opt.boundary_nodes);
    const std::vector<double> tw = trapezoid(ts);

    PhaseField U(grid, nt, lambda), S_prev(grid, nt, lambda);
    std::array<PhaseField, 6> D;
    for (auto& f : D) f = PhaseField(grid, nt, lambda);

    for (int it = 0; it < opt.m_max; ++it) {
        // Diffuse averages of the current iterate at band nodes: value,
        // time derivative and surface gradient.
        PhaseField Ut(grid, nt, lambda);
        for (int id = 0; id < nv; ++id)
            for (int k = 0; k < nk; ++k) {
                const Vec3& v = L.v(k);
                const std::size_t c = cs.cache_index(id, k);
                const double sg = sigma(G.eval_point(id), v);
                for (int m = 0; m < nt; ++m) {
                    double adv = v.x() * D[0].at(m, id, k) + v.y() * D[1].at(m, id, k) + v.z() * D[2].at(m, id, k);
                    Ut.at(m, id, k) = S_prev.at(m, id, k) - adv - (lambda + sg) * U.at(m, id, k);
                }
                (void)c;
            }
        std::vector<double> avgP = cs.boundary_average(U);
        std::vector<double> avgT = cs.boundary_average(Ut);
        std::array<std::vector<double>, 3> avgG;
        for (auto& a : avgG) a.assign(static_cast<std::size_t>(nt) * nv, nan);
        parallel_for(static_cast<std::size_t>(nv), [&](std::size_t idz) {
            const int id = static_cast<int>(idz);
            if (!G.in_band(id)) return;
            const BandData& B = band[idz];
            for (int m = 0; m < nt; ++m) {
                const double P = avgP[static_cast<std::size_t>(m) * nv + id];
                Vec3 acc = Vec3::Zero();
                for (int k = 0; k < nk; ++k) {
                    if (B.w[k] <= 0) continue;
                    Vec3 dx(D[0].at(m, id, k), D[1].at(m, id, k), D[2].at(m, id, k));
                    acc += B.w[k] * (B.Pn * dx) + U.at(m, id, k) * B.a[k];
                }
                Vec3 gs = acc / B.N - P * B.A / B.N;
                for (int a = 0; a < 3; ++a) avgG[a][static_cast<std::size_t>(m) * nv + id] = gs[a];
            }
        });

        // New source chi (K U + Q) and its derivatives (before the sigma and
        // advection couplings, which need the new iterate).
        PhaseField S(grid, nt, lambda);
        std::array<PhaseField, 6> dS;
        for (auto& f : dS) f = PhaseField(grid, nt, lambda);
        parallel_for(static_cast<std::size_t>(nv), [&](std::size_t idz) {
            const int id = static_cast<int>(idz);
            KernelSet local;
            const KernelSet* K = nullptr;
            if (with_k) {
                if (mat->kernel_x_independent) {
                    K = &shared_k;
                } else {
                    fill_kernels(*mat, L, G.eval_point(id), h, local);
                    K = &local;
                }
            }
            for (int k = 0; k < nk; ++k) {
                const ChiValue& chi = chi_node[cs.cache_index(id, k)];
                for (int m = 0; m < nt; ++m) {
                    double base = Q.at(m, id, k);
                    double dk[6] = {0, 0, 0, 0, 0, 0};
                    if (K) {
                        base += mat_row(K->mats[0], nk, k, U, m, id);
                        for (int a = 0; a < 3; ++a) {
                            dk[a] = mat_row(K->mats[0], nk, k, D[a], m, id) + mat_row(K->mats[1 + a], nk, k, U, m, id);
                            dk[3 + a] = mat_row(K->mats[4 + a], nk, k, U, m, id);
                        }
                    }
                    S.at(m, id, k) = chi.value * base;
                    for (int a = 0; a < 6; ++a)
                        dS[a].at(m, id, k) = chi.grad[a] * base + chi.value * (dk[a] + dQ[a].at(m, id, k));
                }
            }
        });

        // In-flow value and boundary derivatives of the new iterate at every
        // (node, level) whose characteristic starts on the wall.
        const std::size_t nb = static_cast<std::size_t>(nt) * nn;
        std::vector<double> gval(nb, 0.0);
        std::vector<std::array<double, 6>> gder(nb);
        parallel_for(static_cast<std::size_t>(nv), [&](std::size_t idz) {
            const int id = static_cast<int>(idz);
            for (int k = 0; k < nk; ++k) {
                const std::size_t c = cs.cache_index(id, k);
                const double tb = cs.exits().tb[c];
                const Vec3& xb = cs.exits().xb[c];
                const Vec3& v = L.v(k);
                const ChiValue& F = chi_foot[c];
                for (int m = 1; m < nt; ++m) {
                    const std::size_t slot = static_cast<std::size_t>(m) * nn + c;
                    gder[slot].fill(0.0);
                    if (ts[m] <= tb) continue;
                    if (F.value == 0 && F.short_circuit) continue;
                    const double tp = ts[m] - tb, sh = std::exp(-lambda * tp);
                    auto r = [&](double tt, const Vec3& xx, const Vec3& vv) {
                        return p.inflow ? p.inflow(tt, xx, vv) : 0.0;
                    };
                    const double r0 = r(tp, xb, v);
                    const double R = sh * r0;
                    const double Rt = sh * ((r(tp + h, xb, v) - r(tp - h, xb, v)) / (2 * h) - lambda * r0);
                    Vec3 Rx, Rv;
                    for (int a = 0; a < 3; ++a) {
                        Vec3 e = Vec3::Unit(a) * h;
                        Rx[a] = sh * (r(tp, xb + e, v) - r(tp, xb - e, v)) / (2 * h);
                        Rv[a] = sh * (r(tp, xb, v + e) - r(tp, xb, v - e)) / (2 * h);
                    }
                    const double P = cs.interp_boundary_average(avgP, lambda, tp, xb);
                    const double Pt = cs.interp_boundary_average(avgT, lambda, tp, xb);
                    Vec3 Gs;
                    for (int a = 0; a < 3; ++a) Gs[a] = cs.interp_boundary_average(avgG[a], lambda, tp, xb);
                    const Vec3 n = outward_normal(d, xb);
                    const Mat3 Pn = Mat3::Identity() - n * n.transpose();
                    const Vec3 Fx(F.grad[0], F.grad[1], F.grad[2]), Fv(F.grad[3], F.grad[4], F.grad[5]);
                    const double base = rho * P + R;
                    const double g = F.value * base;
                    gval[slot] = g;
                    if (F.value == 0 && Fx.isZero() && Fv.isZero()) continue;
                    const double nvv = n.dot(v);
                    if (std::abs(nvv) <= d.graze_tol * v.norm()) {
                        throw SingularLeak("cut-off does not vanish at a grazing wall state");
                    }
                    const double gt = F.value * (rho * Pt + Rt);
                    const Vec3 gs = base * (Pn * Fx) + F.value * (rho * Pn * Gs + Pn * Rx);
                    const Vec3 gv = base * Fv + F.value * Rv;
                    const double sb = S.interp(tp, xb, k);
                    const double dn = (sb - gt - (lambda + sigma(xb, v)) * g - v.dot(gs)) / nvv;
                    const Vec3 gx = gs + dn * n;
                    for (int a = 0; a < 3; ++a) {
                        gder[slot][a] = gx[a];
                        gder[slot][3 + a] = gv[a];
                    }
                }
            }
        });

        PhaseField Unew = transport(cs, W0, &S, [&](std::size_t c, int m, double) {
            return gval[static_cast<std::size_t>(m) * nn + c];
        });
        std::array<PhaseField, 6> Dnew;
        for (int a = 0; a < 6; ++a) {
            // Couplings: -d sigma U_new, and -d/dx_a U_new in the velocity
            // derivative equations.
            PhaseField src = dS[a];
            for (int id = 0; id < nv; ++id)
                for (int k = 0; k < nk; ++k) {
                    const double ds = dsig[cs.cache_index(id, k)][a];
                    for (int m = 0; m < nt; ++m) {
                        double s = src.at(m, id, k) - ds * Unew.at(m, id, k);
                        if (a >= 3) s -= Dnew[a - 3].at(m, id, k);
                        src.at(m, id, k) = s;
                    }
                }
            Dnew[a] = transport(cs, dW0[a], &src, [&, a](std::size_t c, int m, double) {
                return gder[static_cast<std::size_t>(m) * nn + c][a];
            });
            dS[a] = std::move(src);
        }

        double diff = Unew.sup_diff(U);
        res.history.push_back(diff);

        // Trace masses of the new iterate (physical scale).
        IterateTrace trace;
        trace.m = it + 1;
        for (const BoundaryQuadNode& b : bq) {
            for (int k = 0; k < nk; ++k) {
                const Vec3& v = L.v(k);
                const double nv_ = b.n.dot(v);
                double mass = 0;
                for (int m = 0; m < nt; ++m) {
                    double s2 = 0;
                    for (int a = 0; a < 6; ++a) {
                        double val = Dnew[a].interp(ts[m], b.x, k);
                        if (std::isnan(val)) val = 0;
                        s2 += val * val;
                    }
                    mass += tw[m] * std::exp(lambda * ts[m]) * std::sqrt(s2);
                }
                mass *= b.weight * L.w(k) * std::abs(nv_);
                if (nv_ < 0) {
                    trace.incoming += mass;
                } else {
                    trace.out_nv.push_back(nv_);
                    trace.out_mass.push_back(mass);
                }
            }
        }
        for (int m = 0; m < nt; ++m) {
            double e = std::exp(lambda * ts[m]), s = 0;
            for (int a = 0; a < 6; ++a) s += l1_norm(Dnew[a], m) + l1_norm(dS[a], m);
            trace.bulk += tw[m] * e * s;
        }
        res.traces.push_back(std::move(trace));
        if (static_cast<int>(res.traces.size()) > opt.keep_traces) res.traces.erase(res.traces.begin());

        U = std::move(Unew);
        D = std::move(Dnew);
        S_prev = std::move(S);
        if (diff <= opt.tol) {
            res.converged = true;
            break;
        }
    }

    // Physical fields and norms.
    auto unshift = [&](const PhaseField& f) {
        PhaseField out(grid, nt, 0.0);
        const std::size_t n = G.n_nodes();
        for (int m = 0; m < nt; ++m) {
            double e = std::exp(lambda * ts[m]);
            for (std::size_t i = 0; i < n; ++i) out.values()[m * n + i] = e * f.values()[m * n + i];
        }
        return out;
    };
    res.u = unshift(U);
    res.sup_norm = res.u.sup_norm();
    for (int a = 0; a < 6; ++a) res.derivative[a] = unshift(D[a]);
    for (int m = 0; m < nt; ++m) {
        double total = 0;
        for (int a = 0; a < 6; ++a) {
            double v = l1_norm(res.derivative[a], m);
            res.derivative_l1[a] = std::max(res.derivative_l1[a], v);
            total += v;
        }
        res.derivative_l1_total = std::max(res.derivative_l1_total, total);
    }
    if (!res.traces.empty()) {
        const IterateTrace& last = res.traces.back();
        res.trace_mass = last.incoming + last.outgoing();
    }
    res.report.l1_norm = l1_norm(res.u);
    res.report.per_axis = total_variation_per_axis(res.u);
    for (double a : res.report.per_axis) res.report.tv_estimate += a;
    res.report.trace_mass = res.trace_mass;
    return res;
}

// ---------------------------------------------------------- discontinuity

double discontinuity_distance(const Domain& d, const PhaseState& s, const PhaseState& dir, double reach) {
    const int per_unit = 16;
    const int n = std::max(2, static_cast<int>(std::ceil(2 * reach * per_unit)));
    auto state = [&](double a) { return PhaseState{s.x + a * dir.x, s.v + a * dir.v}; };
    struct Sample {
        bool ok = false;
        Vec3 xb;
    };
    auto probe = [&](double a) {
        Sample out;
        PhaseState z = state(a);
        if (d.phi(z.x) > 0 || z.v.norm() == 0) return out;
        try {
            out.xb = backward_exit(d, z.x, z.v).x_exit;
            out.ok = true;
        } catch (const Error&) {
        }
        return out;
    };
    const double jump_floor = 1e-3 * d.bounding_radius();
    std::vector<double> as(n + 1);
    std::vector<Sample> smp(n + 1);
    for (int i = 0; i <= n; ++i) {
        as[i] = -reach + 2 * reach * i / n;
        smp[i] = probe(as[i]);
    }
    double best = inf;
    for (int i = 0; i < n; ++i) {
        if (!smp[i].ok || !smp[i + 1].ok) continue;
        if ((smp[i].xb - smp[i + 1].xb).norm() <= jump_floor) continue;
        // Bisect toward the jump; a continuous but steep exit map lets the
        // gap shrink below the floor.
        double lo = as[i], hi = as[i + 1];
        Sample slo = smp[i], shi = smp[i + 1];
        bool ok = true;
        for (int it = 0; it < 55 && ok; ++it) {
            double mid = 0.5 * (lo + hi);
            Sample sm = probe(mid);
            if (!sm.ok) {
                ok = false;
                break;
            }
            if ((sm.xb - slo.xb).norm() >= (sm.xb - shi.xb).norm()) {
                hi = mid;
                shi = sm;
            } else {
                lo = mid;
                slo = sm;
            }
        }
        if (!ok || (slo.xb - shi.xb).norm() <= jump_floor) continue;
        // Either side may carry the tangential foot.
        bool grazing = false;
        for (double a : {lo, hi}) {
            PhaseState z = state(a);
            try {
                ExitRecord e = backward_exit(d, z.x, z.v);
                if (std::abs(e.normal_dot_v) <= 1e-4 * z.v.norm()) {
                    Vec3 w = z.v;
                    Vec3 nrm = outward_normal(d, e.x_exit);
                    w -= nrm.dot(w) * nrm;  // exactly tangent for the concavity test
                    grazing = concave_grazing(d, e.x_exit, w) || grazing;
                }
            } catch (const Error&) {
            }
        }
        if (grazing) best = std::min(best, std::abs(0.5 * (lo + hi)));
    }
    return best;
}

namespace {

// Distance from s to the grazing set, in cells: the spatial offset to the
// nearest boundary point over the grid spacing, and the normal velocity
// component there over the smallest lattice step at k.
double grazing_distance(const Domain& d, const PhaseState& s, double h, const VelocityLattice& L, int k) {
    Vec3 y = s.x;
    for (int it = 0; it < 30; ++it) {
        Vec3 g = d.grad(y);
        double g2 = g.squaredNorm();
        if (g2 == 0) return inf;
        double step = d.phi(y) / g2;
        y -= step * g;
        if (std::abs(step) * std::sqrt(g2) < 1e-12 * d.bounding_radius()) break;
    }
    if (std::abs(d.phi(y)) > d.boundary_tol() * 1e3) return inf;
    double dv = inf;
    for (int a = 0; a < 3; ++a) dv = std::min(dv, L.step_length(k, a));
    double nx = (s.x - y).norm() / h;
    double nv = std::abs(outward_normal(d, y).dot(s.v)) / dv;
    return std::hypot(nx, nv);
}

}  // namespace

std::vector<JumpCell> detect_discontinuity(const PhaseField& f, const Domain& d, double jump_tol, int level,
                                           int max_checked) {
    const int m = resolve_level(f, level);
    const PhaseGrid& G = *f.grid();
    const int nv = G.n_valued(), nk = G.vel().size();
    const double thresh = jump_tol * f.sup_norm(m);
    std::vector<JumpCell> cells;
    if (!(thresh > 0)) return cells;
    for (int id = 0; id < nv; ++id)
        for (int k = 0; k < nk; ++k)
            for (int a = 0; a < 6; ++a) {
                int ib, kb;
                if (!pair_of(G, id, k, a, ib, kb)) continue;
                double j = std::abs(f.at(m, ib, kb) - f.at(m, id, k));
                if (j <= thresh) continue;
                JumpCell c;
                c.axis = a;
                c.id_a = id;
                c.k_a = k;
                c.id_b = ib;
                c.k_b = kb;
                c.jump = j;
                c.mid = {0.5 * (G.eval_point(id) + G.eval_point(ib)), 0.5 * (G.vel().v(k) + G.vel().v(kb))};
                cells.push_back(c);
            }
    if (cells.empty()) return cells;
    const std::size_t stride =
        max_checked > 0 ? std::max<std::size_t>(1, (cells.size() + max_checked - 1) / max_checked) : 1;
    std::vector<std::size_t> pick;
    for (std::size_t i = 0; i < cells.size(); i += stride) pick.push_back(i);
    const VelocityLattice& L = G.vel();
    parallel_for(pick.size(), [&](std::size_t i) {
        JumpCell& c = cells[pick[i]];
        double best = grazing_distance(d, c.mid, G.h_max(), L, c.k_a);
        // One line per phase axis through the midpoint, one cell per unit.
        for (int a = 0; a < 6 && best > 0.5; ++a) {
            PhaseState dir{Vec3::Zero(), Vec3::Zero()};
            if (a == c.axis) {
                dir = {G.eval_point(c.id_b) - G.eval_point(c.id_a), L.v(c.k_b) - L.v(c.k_a)};
            } else if (a < 3) {
                dir.x[a] = G.h(a);
            } else {
                int nb = L.neighbor(c.k_a, a - 3);
                if (nb < 0) continue;
                dir.v = L.v(nb) - L.v(c.k_a);
            }
            best = std::min(best, discontinuity_distance(d, c.mid, dir, 2.5));
        }
        c.distance_cells = best;
    });
    for (std::size_t i = 0; i < cells.size(); ++i)
        if (i % stride != 0) cells[i].distance_cells = nan;
    return cells;
}

double colocated_fraction(const std::vector<JumpCell>& cells, double max_cells) {
    int checked = 0, near = 0;
    for (const JumpCell& c : cells) {
        if (std::isnan(c.distance_cells)) continue;
        ++checked;
        if (c.distance_cells <= max_cells) ++near;
    }
    return checked ? static_cast<double>(near) / checked : nan;
}

}  // namespace ntk
