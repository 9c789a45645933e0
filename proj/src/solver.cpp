#include "ntk/solver.hpp"

#include "ntk/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ntk {

namespace {

// K[k][k'] = integral of kernel(x, v_k, .) over cell k', so that a field
// constant on each cell is scattered exactly up to the sub-cell rule.
void kernel_matrix(const Material& m, const VelocityLattice& L, const Vec3& x, double* out) {
    const int nk = L.size();
    for (int k = 0; k < nk; ++k)
        for (int kp = 0; kp < nk; ++kp) {
            const Vec3* pts = L.sub_points(kp);
            const double* wts = L.sub_weights(kp);
            double s = 0;
            for (int q = 0; q < VelocityLattice::kSubPoints; ++q) s += wts[q] * m.kernel(x, L.v(k), pts[q]);
            out[k * nk + kp] = s;
        }
}

}  // namespace

double MixedProblem::lambda0() const {
    double ma = material ? material->M_a : 0.0;
    double mb = material ? material->M_b : 0.0;
    return 1.0 + ma + mb;
}

double MixedProblem::effective_lambda() const { return lambda > 0 ? lambda : 1.5 * lambda0(); }

double reflection_factor(int j) { return j <= 0 ? 1.0 : 1.0 - 1.0 / j; }

MixedSolver::MixedSolver(MixedProblem problem, GridPtr grid) : p_(std::move(problem)), grid_(std::move(grid)) {
    if (!p_.domain) throw ConfigError("problem.domain missing");
    if (!p_.space) throw ConfigError("problem.space missing");
    lambda_ = p_.effective_lambda();
    if (!(lambda_ > p_.lambda0())) {
        std::ostringstream os;
        os << "solver.lambda = " << lambda_ << " must exceed 1 + M_a + M_b = " << p_.lambda0();
        throw ConfigError(os.str());
    }
    if (grid_->T() < p_.T * (1 - 1e-12)) throw ConfigError("grid horizon shorter than problem.T");

    InflowProblem ip;
    ip.domain = p_.domain;
    ip.material = p_.material;
    ip.lambda = lambda_;
    ip.sigma_in_exponent = false;
    ip.T = grid_->T();
    ip.initial = p_.initial;
    const double lam = lambda_;
    if (p_.inflow) {
        DataFn r = p_.inflow;
        ip.inflow = [r, lam](double t, const Vec3& x, const Vec3& v) { return std::exp(-lam * t) * r(t, x, v); };
    }
    if (p_.source) {
        DataFn q = p_.source;
        ip.source = [q, lam](double t, const Vec3& x, const Vec3& v) { return std::exp(-lam * t) * q(t, x, v); };
    }
    cs_ = std::make_unique<CharacteristicSolver>(std::move(ip), grid_);

    const int nv = grid_->n_valued(), nk = grid_->vel().size();
    const Material* m = p_.material;
    if (!m) return;
    sigma_.resize(static_cast<std::size_t>(nv) * nk);
    for (int id = 0; id < nv; ++id)
        for (int k = 0; k < nk; ++k) sigma_[cs_->cache_index(id, k)] = m->sigma(grid_->eval_point(id), grid_->vel().v(k));
    if (m->kernel_zero) return;
    auto fill = [&](const Vec3& x, double* out) { kernel_matrix(*m, grid_->vel(), x, out); };
    if (m->kernel_x_independent) {
        kernel_.resize(static_cast<std::size_t>(nk) * nk);
        fill(Vec3::Zero(), kernel_.data());
    } else {
        kernel_per_node_ = true;
        kernel_.resize(static_cast<std::size_t>(nv) * nk * nk);
        parallel_for(static_cast<std::size_t>(nv), [&](std::size_t id) {
            fill(grid_->eval_point(static_cast<int>(id)), kernel_.data() + id * nk * nk);
        });
    }
}

PhaseField MixedSolver::collision(const PhaseField& f) const {
    PhaseField out(grid_, f.n_times(), f.lambda());
    if (!p_.material) return out;
    const int nv = grid_->n_valued(), nk = grid_->vel().size();
    parallel_for(static_cast<std::size_t>(nv), [&](std::size_t idz) {
        const int id = static_cast<int>(idz);
        const double* kern = kernel_.empty() ? nullptr
                             : kernel_per_node_ ? kernel_.data() + idz * nk * nk
                                                : kernel_.data();
        for (int m = 0; m < f.n_times(); ++m)
            for (int k = 0; k < nk; ++k) {
                double s = -sigma_[cs_->cache_index(id, k)] * f.at(m, id, k);
                if (kern)
                    for (int kp = 0; kp < nk; ++kp) s += kern[k * nk + kp] * f.at(m, id, kp);
                out.at(m, id, k) = s;
            }
    });
    return out;
}

IterationState MixedSolver::start(int j) const {
    return start(j, PhaseField(grid_, static_cast<int>(grid_->times().size()), lambda_));
}

IterationState MixedSolver::start(int j, PhaseField guess) const {
    IterationState s;
    s.j = j;
    s.field = std::move(guess);
    return s;
}

IterationState MixedSolver::iterate_once(const IterationState& state) const {
    PhaseField src = collision(state.field);
    SweepTerms terms;
    if (p_.material) terms.source_field = &src;
    terms.reflect_field = &state.field;
    terms.reflect_factor = reflection_factor(state.j);

    IterationState next;
    next.j = state.j;
    next.l = state.l + 1;
    next.field = cs_->sweep(terms);
    next.diff_history = state.diff_history;
    double d = next.field.sup_diff(state.field);
    next.growth_streak = state.growth_streak;
    if (!next.diff_history.empty()) {
        double prev = next.diff_history.back();
        next.eta_observed = prev > 0 ? d / prev : 0.0;
        next.growth_streak = d > prev ? state.growth_streak + 1 : 0;
    }
    next.diff_history.push_back(d);
    if (next.growth_streak >= 5) {
        std::ostringstream os;
        os << "sup-difference grew for 5 consecutive iterations (j=" << state.j << ", l=" << next.l
           << ", last " << d << ")";
        throw DivergenceDetected(os.str());
    }
    return next;
}

PhaseField MixedSolver::solve_reduced(int j, double tol, int max_iter, ConvergenceReport* report) const {
    if (j < 1) throw ConfigError("solver.j must be >= 1");
    return solve_reduced(start(j), tol, max_iter, report);
}

PhaseField MixedSolver::solve_reduced(IterationState state, double tol, int max_iter, ConvergenceReport* report) const {
    if (!(tol > 0)) throw ConfigError("solver.tol must be > 0");
    bool done = false;
    for (int it = 0; it < max_iter && !done; ++it) {
        state = iterate_once(state);
        done = state.diff_history.back() <= tol;
    }
    if (report) {
        report->j = state.j;
        report->history = state.diff_history;
        report->eta_observed = state.eta_observed;
        report->converged = done;
    }
    if (!done) {
        std::ostringstream os;
        os << "j=" << state.j << " not converged after " << max_iter << " iterations; history:";
        for (double d : state.diff_history) os << ' ' << d;
        throw MaxIterExceeded(os.str());
    }
    return std::move(state.field);
}

PhaseField MixedSolver::unshift(const PhaseField& U) const {
    PhaseField u(grid_, U.n_times(), 0.0);
    const std::size_t n = grid_->n_nodes();
    for (int m = 0; m < U.n_times(); ++m) {
        double e = std::exp(lambda_ * U.time(m));
        for (std::size_t i = 0; i < n; ++i) u.values()[m * n + i] = e * U.values()[m * n + i];
    }
    return u;
}

DataNorms MixedSolver::data_norms() const {
    const PhaseGrid& G = *grid_;
    const int nv = G.n_valued(), nk = G.vel().size();
    const auto& ts = G.times();
    const ExitCache& ex = cs_->exits();
    DataNorms d;
    for (int id = 0; id < nv; ++id) {
        const Vec3& x = G.eval_point(id);
        for (int k = 0; k < nk; ++k) {
            const Vec3& v = G.vel().v(k);
            std::size_t c = cs_->cache_index(id, k);
            if (p_.initial) d.initial = std::max(d.initial, std::abs(p_.initial(x, v)));
            for (double t : ts) {
                if (p_.source) d.source = std::max(d.source, std::abs(p_.source(t, x, v)));
                if (p_.inflow && t > ex.tb[c]) d.inflow = std::max(d.inflow, std::abs(p_.inflow(t - ex.tb[c], ex.xb[c], v)));
            }
        }
    }
    return d;
}

namespace {

// Polynomial extrapolation of f(h) to h = 0 from samples (h_i, f_i), nodewise
// (Neville's scheme).
std::vector<double> extrapolate_to_zero(const std::vector<double>& h, const std::vector<const std::vector<double>*>& f) {
    const std::size_t n = f.front()->size(), m = h.size();
    std::vector<double> out(n);
    std::vector<double> P(m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < m; ++a) P[a] = (*f[a])[i];
        for (std::size_t lev = 1; lev < m; ++lev)
            for (std::size_t a = 0; a + lev < m; ++a)
                P[a] = (h[a + lev] * P[a] - h[a] * P[a + 1]) / (h[a + lev] - h[a]);
        out[i] = P[0];
    }
    return out;
}

}  // namespace

FullSolution MixedSolver::solve_full(const std::vector<int>& j_schedule, double tol, int max_iter) const {
    if (j_schedule.empty()) throw ConfigError("solver.j_schedule must not be empty");
    for (std::size_t i = 0; i < j_schedule.size(); ++i) {
        if (j_schedule[i] < 1) throw ConfigError("solver.j_schedule entries must be >= 1");
        if (i > 0 && j_schedule[i] <= j_schedule[i - 1]) throw ConfigError("solver.j_schedule must be increasing");
    }
    FullSolution out;
    out.lambda = lambda_;
    std::vector<PhaseField> fields;
    std::vector<double> hs;
    std::vector<const std::vector<double>*> vals;
    // Each reduced solve starts from the previous one.
    PhaseField guess(grid_, static_cast<int>(grid_->times().size()), lambda_);
    for (int j : j_schedule) {
        ConvergenceReport rep;
        fields.push_back(solve_reduced(start(j, guess), tol, max_iter, &rep));
        guess = fields.back();
        out.reports.push_back(rep);
        hs.push_back(1.0 / j);
    }
    for (const auto& f : fields) vals.push_back(&f.values());
    PhaseField extrap(grid_, fields.front().n_times(), lambda_);
    extrap.values() = extrapolate_to_zero(hs, vals);

    ConvergenceReport rep;
    out.shifted = solve_reduced(start(0, extrap), tol, max_iter, &rep);
    out.reports.push_back(rep);
    out.extrapolation_change = out.shifted.sup_diff(extrap);
    out.u = unshift(out.shifted);
    out.data = data_norms();
    double total = out.data.total();
    out.bound_constant = total > 0 ? out.u.sup_norm() / total : 0.0;
    return out;
}

PhaseField apply_scattering(const Material& mat, const PhaseField& f) {
    const GridPtr& G = f.grid();
    PhaseField out(G, f.n_times(), f.lambda());
    out.time_stamp = f.time_stamp;
    if (mat.kernel_zero) return out;
    const int nv = G->n_valued(), nk = G->vel().size();
    auto fill = [&](const Vec3& x, std::vector<double>& K) { kernel_matrix(mat, G->vel(), x, K.data()); };
    std::vector<double> shared;
    if (mat.kernel_x_independent) {
        shared.resize(static_cast<std::size_t>(nk) * nk);
        fill(Vec3::Zero(), shared);
    }
    parallel_for(static_cast<std::size_t>(nv), [&](std::size_t idz) {
        const int id = static_cast<int>(idz);
        std::vector<double> local;
        if (shared.empty()) {
            local.resize(static_cast<std::size_t>(nk) * nk);
            fill(G->eval_point(id), local);
        }
        const std::vector<double>& K = shared.empty() ? local : shared;
        for (int m = 0; m < f.n_times(); ++m)
            for (int k = 0; k < nk; ++k) {
                double s = 0;
                for (int kp = 0; kp < nk; ++kp) s += K[k * nk + kp] * f.at(m, id, kp);
                out.at(m, id, k) = s;
            }
    });
    return out;
}

SequenceBound sequence_bound(const std::vector<double>& b, int k, double D, double eta, int n_terms) {
    if (k < 1) throw HypothesisViolated("k must be >= 1");
    if (static_cast<int>(b.size()) < k) throw HypothesisViolated("need at least k terms");
    if (D < 0 || eta < 0 || eta > 1) throw HypothesisViolated("need D >= 0 and eta in [0, 1]");
    for (std::size_t i = 0; i < b.size(); ++i)
        if (!(b[i] >= 0)) {
            std::ostringstream os;
            os << "b_" << i + 1 << " = " << b[i] << " is negative";
            throw HypothesisViolated(os.str());
        }
    // 1-based: B(l) = max(b_l, ..., b_(l-k+1)).
    auto window_max = [k](const std::vector<double>& s, int l) {
        double m = 0;
        for (int i = std::max(1, l - k + 1); i <= l; ++i) m = std::max(m, s[i - 1]);
        return m;
    };
    for (int l = k; l + 1 <= static_cast<int>(b.size()); ++l) {
        double rhs = window_max(b, l) / 8 + D * std::pow(eta, l);
        if (b[l] > rhs * (1 + 1e-12)) {
            std::ostringstream os;
            os.precision(17);
            os << "b_" << l + 1 << " = " << b[l] << " exceeds B_" << l << "/8 + D eta^" << l << " = " << rhs;
            throw HypothesisViolated(os.str());
        }
    }
    const int n = n_terms > 0 ? n_terms : static_cast<int>(b.size());
    SequenceBound out;
    const double Bk = window_max(b, k);
    const double M = std::max(Bk, 8.0 / 7.0 * D * std::pow(eta, k));
    out.bound = M;

    out.envelope.assign(b.begin(), b.begin() + k);
    for (int l = k; static_cast<int>(out.envelope.size()) < n; ++l)
        out.envelope.push_back(window_max(out.envelope, l) / 8 + D * std::pow(eta, l));
    out.envelope.resize(n);

    out.per_index_bounds.resize(n);
    for (int idx = 1; idx <= n; ++idx) {
        if (idx <= k) {
            out.per_index_bounds[idx - 1] = M;
            continue;
        }
        // idx - 1 = i k + m with 1 <= m <= k.
        int i = (idx - 2) / k, m = idx - 1 - i * k;
        double c = std::pow(8.0, -i);
        for (int p = 0; p < i; ++p) c += 7 * std::pow(eta, p * k + m) * std::pow(8.0, -(i - p));
        out.per_index_bounds[idx - 1] = c * M;
    }
    return out;
}

}  // namespace ntk
