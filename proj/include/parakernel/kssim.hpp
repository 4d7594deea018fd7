#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "parakernel/fv.hpp"
#include "parakernel/green.hpp"
#include "parakernel/norms.hpp"
#include "parakernel/quotient.hpp"
#include "parakernel/series.hpp"
#include "parakernel/spectral.hpp"

namespace pk {

/// Physics of the coupled system: porous-medium excess exponent alpha and the
/// time-independent potential phi, plus time-step safety factors.
struct KSParams {
    double alpha = 0.25;
    ScalarField phi;
    Grid grid;
    double safety_adv = 0.45;
    double safety_diff = 0; // 0 -> 1/(2n)

    KSParams() = default;
    KSParams(const Grid& g, double alpha_, ScalarField phi_)
        : alpha(alpha_), phi(std::move(phi_)), grid(g) {
        require(alpha > 0.0, "KSParams: alpha must be positive");
        require(phi.grid == g, "KSParams: phi must live on the grid");
    }

    double diff_safety() const { return safety_diff > 0 ? safety_diff : 0.5 / grid.n; }

    /// Caches grad phi so stepping does not redo the transform.
    void prepare(const SpectralPlan& plan) {
        grad_phi = plan.gradient(phi);
        prepared = true;
    }
    VectorField grad_phi;
    bool prepared = false;

    /// alpha <= 1/8 is outside the uniqueness theory's range; the solver still
    /// runs, so this is surfaced as a warning rather than an error.
    std::vector<std::string> warnings() const {
        std::vector<std::string> w;
        if (alpha <= 0.125)
            w.push_back("alpha <= 1/8: outside the uniqueness regime, results are exploratory");
        return w;
    }
};

/// One time slice of the coupled system.
struct KSState {
    double t = 0;
    ScalarField eta;
    ScalarField c;
    VectorField v;

    KSState() = default;
    KSState(double t_, ScalarField eta_, ScalarField c_, VectorField v_)
        : t(t_), eta(std::move(eta_)), c(std::move(c_)), v(std::move(v_)) {
        require(eta.finite() && c.finite() && v.finite(), "KSState: fields must be finite");
        require(eta.min() >= 0.0, "KSState: eta must be nonnegative");
        require(c.min() >= 0.0, "KSState: c must be nonnegative");
    }
};

struct Diagnostics {
    double mass = 0;
    double min_eta = 0;
    double c_inf = 0;
    double kinetic = 0;
    double div_res = 0;
    double boundary = 0;
};

inline Diagnostics diagnostics(const SpectralPlan& plan, const KSState& s) {
    Diagnostics d;
    d.mass = integrate(s.eta);
    d.min_eta = s.eta.min();
    d.c_inf = s.c.max_abs();
    double l2 = lp_norm(s.v, 2.0);
    d.kinetic = 0.5 * l2 * l2;
    d.div_res = plan.divergence(s.v).max_abs();
    d.boundary = boundary_contamination(s.eta);
    return d;
}

namespace detail {

/// Max pointwise Euclidean norm of the centered-difference gradient.
inline double max_grad_norm_fd(const ScalarField& f) {
    const Grid& g = f.grid;
    const int N = g.N;
    const double inv2h = 1.0 / (2.0 * g.h());
    std::vector<double> acc(static_cast<std::size_t>(g.size()), 0.0);
    for (int a = 0; a < g.n; ++a) {
        fv::for_each_line(g, a, [&](std::int64_t base, std::int64_t s) {
            for (int j = 0; j < N; ++j) {
                std::int64_t i = base + j * s;
                std::int64_t ip = base + ((j + 1) % N) * s;
                std::int64_t im = base + ((j - 1 + N) % N) * s;
                double d = (f[ip] - f[im]) * inv2h;
                acc[static_cast<std::size_t>(i)] += d * d;
            }
        });
    }
    double m = 0;
    for (double x : acc) m = std::max(m, x);
    return std::sqrt(m);
}

} // namespace detail

/// Admissible step per the stability rule: explicit degenerate diffusion and
/// the combined advective speeds.
inline double ks_admissible_dt(const KSState& s, const KSParams& p) {
    const double h = p.grid.h();
    double eta_max = std::max(s.eta.max(), 0.0);
    double diff_speed = std::max((1.0 + p.alpha) * std::pow(eta_max, p.alpha), 1e-10);
    double dt1 = 0.4 * h * h / diff_speed;
    double adv = s.v.max_norm() + detail::max_grad_norm_fd(s.c) + 1e-12;
    double dt2 = 0.5 * h / adv;
    return std::min(dt1, dt2);
}

/// One splitting step of the coupled system, in the documented order:
/// eta by conservative positivity-limited fluxes, then c using the new eta,
/// then v using the new eta.
inline KSState ks_step(const SpectralPlan& plan, const KSState& state, const KSParams& p,
                       double dt) {
    const Grid& g = p.grid;
    const int N = g.N;
    const double h = g.h();
    double adm = ks_admissible_dt(state, p);
    if (dt > adm * (1 + 1e-12)) {
        std::ostringstream msg;
        msg << "ks_step: dt=" << dt << " above the stability bound; admissible dt = " << adm;
        throw usage_error(msg.str());
    }

    // --- eta update: upwind advection + chemotaxis, secant-quotient porous
    // medium flux, positivity limiter ---
    ScalarField eta = state.eta;
    {
        std::vector<std::vector<double>> wface(
            static_cast<std::size_t>(g.n),
            std::vector<double>(static_cast<std::size_t>(g.size())));
        std::vector<std::vector<double>> aface(
            static_cast<std::size_t>(g.n),
            std::vector<double>(static_cast<std::size_t>(g.size())));
        for (int a = 0; a < g.n; ++a) {
            auto& w = wface[static_cast<std::size_t>(a)];
            auto& A = aface[static_cast<std::size_t>(a)];
            const ScalarField& va = state.v[a];
            fv::for_each_line(g, a, [&](std::int64_t base, std::int64_t s) {
                for (int j = 0; j < N; ++j) {
                    std::int64_t i = base + j * s;
                    std::int64_t ip = base + ((j + 1) % N) * s;
                    // combined face speed: fluid velocity + chemotactic drift
                    w[static_cast<std::size_t>(i)] =
                        0.5 * (va[i] + va[ip]) + (state.c[ip] - state.c[i]) / h;
                    A[static_cast<std::size_t>(i)] =
                        secant_quotient(state.eta[i], state.eta[ip], p.alpha);
                }
            });
        }
        fv::FaceArrays faces(g);
        fv::add_advective_flux(g, eta, wface, 1, faces);
        fv::add_diffusive_flux(g, eta, aface, faces);
        fv::limit_positive(g, eta, dt, faces);
        fv::apply_flux_divergence(g, eta, dt, faces);
    }

    // --- c update: advective upwind (max principle), implicit diffusion via
    // the finite-difference symbol, exact integrating-factor consumption ---
    ScalarField c = state.c;
    {
        ScalarField adv(g);
        for (int a = 0; a < g.n; ++a) {
            const ScalarField& va = state.v[a];
            fv::for_each_line(g, a, [&](std::int64_t base, std::int64_t s) {
                for (int j = 0; j < N; ++j) {
                    std::int64_t i = base + j * s;
                    std::int64_t ip = base + ((j + 1) % N) * s;
                    std::int64_t im = base + ((j - 1 + N) % N) * s;
                    double w = va[i];
                    double d = (w >= 0) ? (c[i] - c[im]) : (c[ip] - c[i]);
                    adv[i] += w * d / h;
                }
            });
        }
        for (std::int64_t i = 0; i < g.size(); ++i) c[i] -= dt * adv[i];
        c = plan.apply_multiplier(c, plan.fd_resolvent_multiplier(dt));
        for (std::int64_t i = 0; i < g.size(); ++i) c[i] *= std::exp(-eta[i] * dt);
        for (auto& x : c.v) x = std::max(x, 0.0); // guard round-off at machine zero
    }

    // --- v update: Stokes propagation of v plus dt-weighted projected
    // forcing -P(eta grad phi) ---
    VectorField v = state.v;
    {
        VectorField forcing =
            p.prepared ? scale(eta, p.grad_phi) : scale(eta, plan.gradient(p.phi));
        forcing *= -dt;
        v += forcing;
        v = plan.stokes_propagate(v, dt);
    }

    KSState out;
    out.t = state.t + dt;
    out.eta = std::move(eta);
    out.c = std::move(c);
    out.v = std::move(v);
    return out;
}

/// A finished run: states and diagnostics at the output nodes.
struct KSRun {
    TimeGrid tg;
    std::vector<KSState> states;
    std::vector<Diagnostics> diags;

    ScalarSeries eta_series() const {
        std::vector<ScalarField> s;
        for (const auto& st : states) s.push_back(st.eta);
        return ScalarSeries(tg, std::move(s));
    }
    ScalarSeries c_series() const {
        std::vector<ScalarField> s;
        for (const auto& st : states) s.push_back(st.c);
        return ScalarSeries(tg, std::move(s));
    }
    VectorSeries v_series() const {
        std::vector<VectorField> s;
        for (const auto& st : states) s.push_back(st.v);
        return VectorSeries(tg, std::move(s));
    }
};

/// Advances the initial state to every output node of tg with adaptive
/// substepping under the stability bound. Aborts on an invariant breach,
/// recording the offending step.
inline KSRun run_simulation(const SpectralPlan& plan, const KSParams& p, const KSState& initial,
                            const TimeGrid& tg) {
    require(initial.eta.grid == p.grid, "run_simulation: state grid mismatch");
    KSParams params = p;
    if (!params.prepared) params.prepare(plan);
    KSRun run;
    run.tg = tg;
    KSState s = initial;
    s.t = tg.t0;
    run.states.push_back(s);
    run.diags.push_back(diagnostics(plan, s));
    std::int64_t step_count = 0;
    const double h = p.grid.h();
    for (int j = 1; j <= tg.M; ++j) {
        double target = tg.node(j);
        while (s.t < target - 1e-14 * std::max(1.0, std::fabs(target))) {
            double eta_max = std::max(s.eta.max(), 0.0);
            double diff_speed = std::max((1.0 + params.alpha) * std::pow(eta_max, params.alpha), 1e-10);
            double dt_diff = params.diff_safety() * h * h / diff_speed;
            double adv = s.v.max_norm() + detail::max_grad_norm_fd(s.c) + 1e-12;
            double dt_adv = params.safety_adv * h / adv;
            double dt = std::min(std::min(dt_diff, dt_adv), target - s.t);
            s = ks_step(plan, s, params, dt);
            ++step_count;
            if (!s.eta.finite() || !s.c.finite() || !s.v.finite() || s.eta.min() < -1e-12) {
                std::ostringstream msg;
                msg << "run_simulation: invariant breach at step " << step_count
                    << ", t=" << s.t;
                throw data_error(msg.str());
            }
        }
        s.t = target;
        run.states.push_back(s);
        run.diags.push_back(diagnostics(plan, s));
    }
    return run;
}

struct ReconstructOptions {
    bool reconstruct_c = true;
    std::int64_t budget_bytes = std::int64_t(2) << 30;
    bool use_richardson = false; // single-radius tables suffice at 5% tolerances
};

struct ReconstructReport {
    std::vector<double> v_rel_l2; // per output node, 0 at t0
    std::vector<double> c_rel_l2;
    bool c_done = false;
    double v_err_max = 0;
    double c_err_max = 0;
    VectorField v_final;
    ScalarField c_final;
};

/// Rebuilds v from the eta-history through the Stokes Duhamel quadrature and
/// c through tabulated-kernel reconstruction with the run's own (v, eta) as
/// drift and potential, reporting relative L2 errors against the stepper.
inline ReconstructReport reconstruct_fields(const SpectralPlan& plan, const KSRun& run,
                                            const KSParams& p,
                                            ReconstructOptions opts = {}) {
    const Grid& g = p.grid;
    ReconstructReport rep;
    const int M = run.tg.M;
    const double dt = run.tg.dt();
    VectorField grad_phi = plan.gradient(p.phi);

    // v(t_j) = S(t_j) v0 - sum_i w_i S(t_j - t_i) P(eta_i grad phi), trapezoid
    rep.v_rel_l2.assign(static_cast<std::size_t>(M + 1), 0.0);
    std::vector<VectorField> forcing;
    for (int i = 0; i <= M; ++i)
        forcing.push_back(scale(run.states[static_cast<std::size_t>(i)].eta, grad_phi));
    for (int j = 1; j <= M; ++j) {
        VectorField vrec = plan.stokes_propagate(run.states[0].v, run.tg.node(j) - run.tg.t0);
        for (int i = 0; i <= j; ++i) {
            double w = (i == 0 || i == j) ? 0.5 * dt : dt;
            VectorField term = plan.stokes_propagate(forcing[static_cast<std::size_t>(i)],
                                                     run.tg.node(j) - run.tg.node(i));
            term *= -w;
            vrec += term;
        }
        VectorField diff = vrec - run.states[static_cast<std::size_t>(j)].v;
        double den = lp_norm(run.states[static_cast<std::size_t>(j)].v, 2.0);
        rep.v_rel_l2[static_cast<std::size_t>(j)] =
            lp_norm(diff, 2.0) / std::max(den, 1e-14);
        if (j == M) rep.v_final = vrec;
    }
    for (double e : rep.v_rel_l2) rep.v_err_max = std::max(rep.v_err_max, e);

    if (opts.reconstruct_c) {
        Coefficients coeffs = Coefficients::sampled(run.v_series(), run.eta_series());
        DuhamelOptions dopts;
        dopts.use_richardson = opts.use_richardson;
        dopts.budget_bytes = opts.budget_bytes;
        try {
            ScalarSeries crec =
                duhamel_reconstruct(plan, coeffs, run.states[0].c, nullptr, run.tg, dopts);
            rep.c_rel_l2.assign(static_cast<std::size_t>(M + 1), 0.0);
            for (int j = 1; j <= M; ++j) {
                ScalarField diff = crec.at_node(j) - run.states[static_cast<std::size_t>(j)].c;
                double den = lp_norm(run.states[static_cast<std::size_t>(j)].c, 2.0);
                rep.c_rel_l2[static_cast<std::size_t>(j)] =
                    lp_norm(diff, 2.0) / std::max(den, 1e-14);
            }
            rep.c_final = crec.at_node(M);
            rep.c_done = true;
            for (double e : rep.c_rel_l2) rep.c_err_max = std::max(rep.c_err_max, e);
        } catch (const usage_error&) {
            rep.c_done = false; // budget refusal: partial, v-only report
        }
    }
    return rep;
}

} // namespace pk
