#include "ntk/cycles.hpp"

#include "ntk/parallel.hpp"
#include "ntk/quadrature.hpp"

#include <cmath>

namespace ntk {

namespace {

void check_start(const Domain& d, double t, const PhaseState& s) {
    if (!(t > 0)) throw InvalidState("cycle start needs t > 0");
    if (std::abs(d.phi(s.x)) > d.boundary_tol()) return;
    switch (classify_gamma(d, s.x, s.v)) {
        case GammaClass::Grazing: throw GrazingStart("cycle started on the grazing set");
        case GammaClass::Incoming: throw InvalidState("cycle started on the incoming boundary");
        default: break;
    }
}

Vec3 draw_reflected(const VelocitySpace& space, const Vec3& x, const Vec3& n, Rng& rng) {
    // The sampler only needs the normal; the constant is the closed form
    // 4 / (pi (b^4 - a^4)).
    double a4 = std::pow(space.a(), 4), b4 = std::pow(space.b(), 4);
    DiffuseMeasure m{&space, x, n, 4.0 / (pi * (b4 - a4))};
    return sample_dsigma(m, rng);
}

// Two-pass mean and standard error.
template <class F>
Estimate mean_se(int n, F value) {
    double mean = 0;
    for (int i = 0; i < n; ++i) mean += value(i);
    mean /= n;
    double ss = 0;
    for (int i = 0; i < n; ++i) ss += (value(i) - mean) * (value(i) - mean);
    double var = n > 1 ? ss / (n - 1) : 0.0;
    return {mean, std::sqrt(var / n)};
}

}  // namespace

CycleRecord sample_cycle(const Domain& d, const VelocitySpace& space, double t, const PhaseState& s, int k_max,
                         Rng& rng) {
    check_start(d, t, s);
    if (k_max < 1) throw InvalidState("cycle needs k_max >= 1");
    CycleRecord rec;
    rec.t0 = t;
    rec.origin = s;
    rec.k_max = k_max;
    double tk = t;
    Vec3 xk = s.x, vk = s.v;
    for (int k = 1; k <= k_max; ++k) {
        ExitRecord e = backward_exit(d, xk, vk);
        CycleNode node{tk - e.t_exit, e.x_exit, Vec3::Zero()};
        if (node.t <= 0) {
            rec.nodes.push_back(node);
            rec.terminated_at_time_zero = true;
            return rec;
        }
        node.v = draw_reflected(space, node.x, outward_normal(d, node.x), rng);
        rec.nodes.push_back(node);
        tk = node.t;
        xk = node.x;
        vk = node.v;
    }
    return rec;
}

std::vector<Estimate> survival_curve(const Domain& d, const VelocitySpace& space, double t, const PhaseState& s,
                                     int k_max, int n_samples, std::uint64_t seed) {
    if (n_samples < 100) throw InvalidState("survival estimate needs at least 100 samples");
    check_start(d, t, s);
    // alive[i] = number of bounces k with t_k > 0 on path i.
    std::vector<int> alive(static_cast<std::size_t>(n_samples));
    parallel_for(alive.size(), [&](std::size_t i) {
        Rng rng = Rng::stream(seed, i);
        CycleRecord c = sample_cycle(d, space, t, s, k_max, rng);
        alive[i] = static_cast<int>(c.nodes.size()) - (c.terminated_at_time_zero ? 1 : 0);
    });
    std::vector<Estimate> out(static_cast<std::size_t>(k_max));
    for (int k = 1; k <= k_max; ++k) {
        out[k - 1] = mean_se(n_samples, [&](int i) { return alive[i] >= k ? 1.0 : 0.0; });
    }
    return out;
}

Estimate bounce_survival(const Domain& d, const VelocitySpace& space, double t, const PhaseState& s, int k,
                         int n_samples, Rng& rng) {
    return survival_curve(d, space, t, s, k, n_samples, rng.next()).back();
}

PointEstimate mc_point_estimate(const MixedProblem& p, double t, const PhaseState& s, int k_max, int n_samples,
                                Rng& rng, const PhaseField& field_for_tail) {
    if (!p.domain || !p.space) throw ConfigError("problem.domain and problem.space are required");
    if (n_samples < 1) throw InvalidState("mc_point_estimate needs n_samples >= 1");
    const Domain& d = *p.domain;
    check_start(d, t, s);

    InflowProblem ip;
    ip.domain = p.domain;
    ip.material = p.material;
    ip.lambda = 0.0;
    ip.T = p.T;
    const int nq = ip.n_quad_line;
    const GaussRule& g = gauss_legendre(nq);

    PhaseField scattered;
    const bool with_k = p.material && !p.material->kernel_zero;
    if (with_k) scattered = apply_scattering(*p.material, field_for_tail);

    // Attenuated line integral of the source over tau in [0, tau_end] from
    // (time tm, point x, velocity v); E_end receives the end attenuation.
    auto segment = [&](double tm, const Vec3& x, const Vec3& v, double tau_end, double& E_end) {
        std::vector<double> taus(nq + 1), E(nq + 1);
        for (int q = 0; q < nq; ++q) taus[q] = 0.5 * tau_end * (1 + g.nodes[q]);
        taus[nq] = tau_end;
        attenuation(ip, x, v, taus.data(), nq + 1, E.data());
        E_end = E[nq];
        if (tau_end <= 0 || (!p.source && !with_k)) return 0.0;
        double acc = 0;
        for (int q = 0; q < nq; ++q) {
            double ts = tm - taus[q];
            Vec3 y = x - taus[q] * v;
            double Q = p.source ? p.source(ts, y, v) : 0.0;
            if (with_k) Q += scattered.interp(ts, y, v);
            acc += g.weights[q] * E[q] * Q;
        }
        return 0.5 * tau_end * acc;
    };

    const std::uint64_t master = rng.next();
    struct Sample {
        double value = 0, tail = 0;
        bool alive = false;
    };
    std::vector<Sample> samples(static_cast<std::size_t>(n_samples));
    parallel_for(samples.size(), [&](std::size_t i) {
        Rng r = Rng::stream(master, i);
        Sample out;
        double W = 1, tm = t;
        Vec3 x = s.x, v = s.v;
        for (int k = 1;; ++k) {
            ExitRecord e = backward_exit(d, x, v);
            double E_end = 1;
            if (tm - e.t_exit <= 0) {
                out.value += W * segment(tm, x, v, tm, E_end);
                if (p.initial) out.value += W * E_end * p.initial(x - tm * v, v);
                break;
            }
            out.value += W * segment(tm, x, v, e.t_exit, E_end);
            W *= E_end;
            tm -= e.t_exit;
            x = e.x_exit;
            if (p.inflow) out.value += W * p.inflow(tm, x, v);
            v = draw_reflected(*p.space, x, outward_normal(d, x), r);
            if (k == k_max) {
                out.tail = W * field_for_tail.interp(tm, x, v);
                out.value += out.tail;
                out.alive = true;
                break;
            }
        }
        samples[i] = out;
    });

    double st = 0;
    int alive = 0;
    for (const Sample& smp : samples) {
        st += smp.tail;
        alive += smp.alive;
    }
    Estimate e = mean_se(n_samples, [&](int i) { return samples[i].value; });
    return {e.value, e.se, st / n_samples, static_cast<double>(alive) / n_samples};
}

}  // namespace ntk
