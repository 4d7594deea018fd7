#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "parakernel/coefficients.hpp"
#include "parakernel/fitting.hpp"
#include "parakernel/fv.hpp"
#include "parakernel/norms.hpp"
#include "parakernel/parallel.hpp"
#include "parakernel/sampling.hpp"
#include "parakernel/series.hpp"
#include "parakernel/spectral.hpp"

namespace pk {

struct ForwardOptions {
    int advection_order = 2;        // 1 = donor-cell, 2 = minmod MUSCL
    bool positivity_limiter = true; // only meaningful for nonnegative problems
    double cfl_sum = 0.4;           // internal substep target for face-speed sums
};

namespace detail {

/// One splitting step of d_t u + a.grad u + b u - lap u = F:
/// explicit conservative advection, explicit source, exact pointwise
/// potential factor, exact spectral diffusion exponential. With a = b = 0 and
/// F = 0 a step is exactly one application of the heat semigroup.
class ForwardStepper {
  public:
    ForwardStepper(const SpectralPlan& plan, const Coefficients& coeffs,
                   const ForwardOptions& opts)
        : plan_(plan), coeffs_(coeffs), opts_(opts), grid_(plan.grid()) {}

    void set_state(ScalarField u, double t) {
        u_ = std::move(u);
        t_ = t;
    }
    const ScalarField& state() const { return u_; }
    double time() const { return t_; }

    double max_substep() const {
        double dt = std::numeric_limits<double>::infinity();
        if (coeffs_.a_bound > 0) {
            double speed_sum = std::sqrt(static_cast<double>(grid_.n)) * coeffs_.a_bound;
            dt = std::min(dt, opts_.cfl_sum * grid_.h() / speed_sum);
        }
        if (coeffs_.b_bound > 0) dt = std::min(dt, 0.25 / coeffs_.b_bound);
        return dt;
    }

    void step(double dt, const ScalarField* source) {
        if (!coeffs_.zero_drift()) {
            VectorField a_now = coeffs_.a.sample(t_);
            std::vector<std::vector<double>> wface(
                static_cast<std::size_t>(grid_.n),
                std::vector<double>(static_cast<std::size_t>(grid_.size())));
            const int N = grid_.N;
            for (int ax = 0; ax < grid_.n; ++ax) {
                auto& w = wface[static_cast<std::size_t>(ax)];
                const ScalarField& comp = a_now[ax];
                fv::for_each_line(grid_, ax, [&](std::int64_t base, std::int64_t s) {
                    for (int j = 0; j < N; ++j) {
                        std::int64_t i = base + j * s;
                        std::int64_t ip = base + ((j + 1) % N) * s;
                        w[static_cast<std::size_t>(i)] = 0.5 * (comp[i] + comp[ip]);
                    }
                });
            }
            fv::FaceArrays faces(grid_);
            fv::add_advective_flux(grid_, u_, wface, opts_.advection_order, faces);
            if (opts_.positivity_limiter) fv::limit_positive(grid_, u_, dt, faces);
            fv::apply_flux_divergence(grid_, u_, dt, faces);
        }
        if (source) {
            for (std::int64_t i = 0; i < grid_.size(); ++i) u_[i] += dt * (*source)[i];
        }
        if (!coeffs_.zero_potential()) {
            ScalarField b_now = coeffs_.b.sample(t_);
            for (std::int64_t i = 0; i < grid_.size(); ++i) u_[i] *= std::exp(-dt * b_now[i]);
        }
        if (dt != cached_dt_) {
            heat_mult_ = plan_.heat_multiplier(dt);
            cached_dt_ = dt;
        }
        u_ = plan_.apply_multiplier(u_, heat_mult_);
        t_ += dt;
    }

    /// Marches to `target` in equal substeps respecting max_substep and an
    /// optional extra cap; the source series is sampled at substep starts.
    void advance_to(double target, const ScalarSeries* F, double dt_cap = 0) {
        double span = target - t_;
        if (span <= 0) return;
        double dtmax = max_substep();
        if (dt_cap > 0) dtmax = std::min(dtmax, dt_cap);
        int k = std::isinf(dtmax) ? 1 : std::max(1, static_cast<int>(std::ceil(span / dtmax - 1e-12)));
        double dt = span / k;
        for (int j = 0; j < k; ++j) {
            if (F) {
                ScalarField Fs = F->sample(t_);
                step(dt, &Fs);
            } else {
                step(dt, nullptr);
            }
        }
        t_ = target; // guard accumulated round-off
    }

  private:
    const SpectralPlan& plan_;
    const Coefficients& coeffs_;
    ForwardOptions opts_;
    Grid grid_;
    ScalarField u_;
    double t_ = 0;
    double cached_dt_ = -1;
    std::vector<double> heat_mult_;
};

} // namespace detail

/// Trajectory of d_t f + a.grad f + b f - lap f = F from f0 over tg, one slice
/// per node. tg.dt must satisfy the advective stability rule; internally the
/// march may take smaller equal substeps for monotonicity.
inline ScalarSeries solve_forward(const SpectralPlan& plan, const Coefficients& coeffs,
                                  const ScalarField& f0, const ScalarSeries* F,
                                  const TimeGrid& tg, ForwardOptions opts = {}) {
    const double h = plan.grid().h();
    double dt_rule = 0.5 * h / std::max(coeffs.a_bound, 1e-12);
    if (tg.dt() > dt_rule * (1 + 1e-12)) {
        std::ostringstream msg;
        msg << "solve_forward: dt=" << tg.dt() << " violates the advective stability rule; "
            << "need dt <= " << dt_rule;
        throw usage_error(msg.str());
    }
    if (coeffs.b_bound > 0 && tg.dt() * coeffs.b_bound > 0.5 * (1 + 1e-12)) {
        std::ostringstream msg;
        msg << "solve_forward: dt=" << tg.dt() << " violates dt*||b|| <= 0.5; need dt <= "
            << 0.5 / coeffs.b_bound;
        throw usage_error(msg.str());
    }
    require(f0.finite(), "solve_forward: initial data must be finite");

    detail::ForwardStepper stepper(plan, coeffs, opts);
    stepper.set_state(f0, tg.t0);
    std::vector<ScalarField> slices;
    slices.reserve(static_cast<std::size_t>(tg.M + 1));
    slices.push_back(f0);
    for (int j = 1; j <= tg.M; ++j) {
        stepper.advance_to(tg.node(j), F, tg.dt());
        slices.push_back(stepper.state());
    }
    return ScalarSeries(tg, std::move(slices));
}

struct SourcePoint {
    double s = 0;
    std::int64_t y = 0;
};

/// Tabulated fundamental solution for one source point across times.
struct GreenTable {
    Grid grid;
    SourcePoint source;
    double eff_source_time = 0; // slices approximate Gamma(t, ., eff, y)
    double epsilon = 0;         // averaging radius of the construction
    std::vector<double> times;
    std::vector<ScalarField> slices;
    bool converged = true;
    double disagreement = 0;

    const ScalarField& slice_at(double t) const {
        for (std::size_t j = 0; j < times.size(); ++j)
            if (std::fabs(times[j] - t) <= 1e-12 * std::max(1.0, std::fabs(t))) return slices[j];
        throw usage_error("GreenTable: no slice at requested time");
    }

    /// Positivity and mass invariants; tolerances follow the construction
    /// guarantees (conservative fluxes, nonneg potential).
    void check_invariants(double b_bound) const {
        for (std::size_t j = 0; j < slices.size(); ++j) {
            const auto& s = slices[j];
            double mx = s.max();
            if (s.min() < -1e-8 * mx)
                throw data_error("GreenTable: slice violates positivity");
            double mass = integrate(s);
            if (b_bound == 0.0) {
                if (std::fabs(mass - 1.0) > 1e-6)
                    throw data_error("GreenTable: unit mass violated for b = 0");
            } else if (mass > 1.0 + 1e-6) {
                throw data_error("GreenTable: mass exceeds 1 for b >= 0");
            }
        }
    }
};

struct GreenOptions {
    double epsilon = 0;    // averaging radius; 0 picks 2h
    int window_substeps = 8;
    double dt_max = 0;     // march cap between outputs; 0 -> half the stability rule
    int advection_order = 2;
    bool use_richardson = true;
    double agree_warn = 0.03;
    double agree_fail = 0.10;
};

namespace detail {

inline double green_dt_cap(const SpectralPlan& plan, const Coefficients& coeffs,
                           const GreenOptions& opts) {
    if (opts.dt_max > 0) return opts.dt_max;
    double dt = 0.25 * plan.grid().h() / std::max(coeffs.a_bound, 1e-12);
    if (coeffs.b_bound > 0) dt = std::min(dt, 0.25 / coeffs.b_bound);
    // keep a few steps per output interval even for pure heat, where the
    // exponential is exact but the coefficients may still vary in time
    return dt;
}

/// Normalized indicator of the ball of radius eps around node y, scaled so the
/// space-time source on a window of length eps^2 has total mass 1 discretely.
inline ScalarField indicator_source(const Grid& g, std::int64_t y, double eps) {
    ScalarField s(g);
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < g.size(); ++i)
        if (g.periodic_distance(i, y) <= eps + 1e-15) ++count;
    double val = 1.0 / (static_cast<double>(count) * std::pow(g.h(), g.n) * eps * eps);
    for (std::int64_t i = 0; i < g.size(); ++i)
        if (g.periodic_distance(i, y) <= eps + 1e-15) s[i] = val;
    return s;
}

inline GreenTable averaged_green_at_times(const SpectralPlan& plan, const Coefficients& coeffs,
                                          SourcePoint Y, double eps,
                                          const std::vector<double>& times,
                                          const GreenOptions& opts) {
    const Grid& g = plan.grid();
    require(eps >= 2.0 * g.h() * (1 - 1e-12),
            "averaged_green: under-resolved, need eps >= 2h");
    require(!times.empty(), "averaged_green: no output times");
    require(times.front() >= Y.s + eps * eps,
            "averaged_green: first output must follow the source window");

    ForwardOptions fopts;
    fopts.advection_order = opts.advection_order;
    fopts.positivity_limiter = true;
    ForwardStepper stepper(plan, coeffs, fopts);
    stepper.set_state(ScalarField(g), Y.s);

    ScalarField src = indicator_source(g, Y.y, eps);
    double window_end = Y.s + eps * eps;
    double dt_w = (eps * eps) / opts.window_substeps;
    double dt_cfl = stepper.max_substep();
    int per = std::isinf(dt_cfl) ? 1 : std::max(1, static_cast<int>(std::ceil(dt_w / dt_cfl)));
    for (int j = 0; j < opts.window_substeps; ++j)
        for (int q = 0; q < per; ++q) stepper.step(dt_w / per, &src);
    stepper.set_state(stepper.state(), window_end);

    double cap = green_dt_cap(plan, coeffs, opts);
    GreenTable table;
    table.grid = g;
    table.source = Y;
    table.eff_source_time = Y.s + 0.5 * eps * eps;
    table.epsilon = eps;
    for (double t : times) {
        stepper.advance_to(t, nullptr, cap);
        table.times.push_back(t);
        table.slices.push_back(stepper.state());
    }
    return table;
}

/// Richardson pair (eps, 2 eps) combined at equal absolute times; the O(eps^2)
/// averaging bias, including the window time offset, cancels and the combined
/// slices estimate Gamma(t, ., s, y) itself.
inline GreenTable richardson_green(const SpectralPlan& plan, const Coefficients& coeffs,
                                   SourcePoint Y, const std::vector<double>& times,
                                   const GreenOptions& opts) {
    const Grid& g = plan.grid();
    double eps = opts.epsilon > 0 ? opts.epsilon : 2.0 * g.h();
    if (!opts.use_richardson) {
        return averaged_green_at_times(plan, coeffs, Y, eps, times, opts);
    }
    GreenTable A = averaged_green_at_times(plan, coeffs, Y, eps, times, opts);
    GreenTable B = averaged_green_at_times(plan, coeffs, Y, 2.0 * eps, times, opts);
    GreenTable R = A;
    R.eff_source_time = Y.s;
    for (std::size_t j = 0; j < R.slices.size(); ++j)
        for (std::int64_t i = 0; i < g.size(); ++i)
            R.slices[j][i] = (4.0 * A.slices[j][i] - B.slices[j][i]) / 3.0;
    return R;
}

} // namespace detail

/// Valid output times for a green_function table built from tg.
inline std::vector<double> green_valid_times(const Grid& g, SourcePoint Y, const TimeGrid& tg,
                                             const GreenOptions& opts = {}) {
    double eps = opts.epsilon > 0 ? opts.epsilon : 2.0 * g.h();
    double margin = opts.use_richardson ? 5.0 * (2.0 * eps) * (2.0 * eps) : 2.0 * eps * eps;
    std::vector<double> times;
    for (int j = 0; j <= tg.M; ++j) {
        double t = tg.node(j);
        if (t >= Y.s + margin && t <= tg.t1 + 1e-15) times.push_back(t);
    }
    return times;
}

/// Averaged fundamental solution: the normalized space-time indicator source
/// on (s, s+eps^2] x B_eps(y) driven through the forward solver with zero
/// initial data. Slices are labeled by the effective source time s + eps^2/2.
inline GreenTable averaged_green(const SpectralPlan& plan, const Coefficients& coeffs,
                                 SourcePoint Y, double eps, const TimeGrid& tg,
                                 GreenOptions opts = {}) {
    require(Y.s + eps * eps < tg.t1, "averaged_green: window does not fit the horizon");
    std::vector<double> times;
    for (int j = 0; j <= tg.M; ++j) {
        double t = tg.node(j);
        if (t >= Y.s + 2.0 * eps * eps && t <= tg.t1 + 1e-15) times.push_back(t);
    }
    return detail::averaged_green_at_times(plan, coeffs, Y, eps, times, opts);
}

/// Two-stage estimate of Gamma(t, ., s, y): Richardson extrapolation of the
/// averaged construction in eps^2, cross-checked against a mollified-delta
/// initial-condition variant. The two constructions must agree on the bulk.
inline GreenTable green_function(const SpectralPlan& plan, const Coefficients& coeffs,
                                 SourcePoint Y, const TimeGrid& tg, GreenOptions opts = {}) {
    const Grid& g = plan.grid();
    double eps = opts.epsilon > 0 ? opts.epsilon : 2.0 * g.h();
    opts.epsilon = eps;
    std::vector<double> times = green_valid_times(g, Y, tg, opts);
    require(!times.empty(), "green_function: no admissible output times after the source margin");

    GreenTable R = detail::richardson_green(plan, coeffs, Y, times, opts);

    // mollified-delta cross-check: a unit-mass Gaussian of width sigma = eps
    // placed at y represents a point source at time s when the solve starts
    // at s + sigma^2/2
    double sigma = eps;
    double t_start = Y.s + 0.5 * sigma * sigma;
    ScalarField f0 = sample_field(g, FieldSpec::gaussian(1.0, sigma, {g.coords(Y.y)[0],
                                                                      g.coords(Y.y)[1],
                                                                      g.coords(Y.y)[2]}));
    f0 *= 1.0 / integrate(f0);
    ForwardOptions fopts;
    fopts.advection_order = opts.advection_order;
    detail::ForwardStepper stepper(plan, coeffs, fopts);
    stepper.set_state(f0, t_start);
    double cap = detail::green_dt_cap(plan, coeffs, opts);
    double disagreement = 0;
    for (std::size_t j = 0; j < times.size(); ++j) {
        stepper.advance_to(times[j], nullptr, cap);
        const ScalarField& M = stepper.state();
        const ScalarField& Rj = R.slices[j];
        double peak = Rj.max();
        double dmax = 0;
        for (std::int64_t i = 0; i < g.size(); ++i)
            if (Rj[i] > 1e-6 * peak) dmax = std::max(dmax, std::fabs(Rj[i] - M[i]));
        disagreement = std::max(disagreement, dmax / peak);
    }
    R.disagreement = disagreement;
    R.converged = disagreement <= opts.agree_warn;
    if (disagreement > opts.agree_fail) {
        std::ostringstream msg;
        msg << "green_function: construction failed, variants disagree by "
            << disagreement * 100 << "% (limit " << opts.agree_fail * 100 << "%)";
        throw data_error(msg.str());
    }
    return R;
}

// ---------------------------------------------------------------------------
// Gaussian envelope fits
// ---------------------------------------------------------------------------

struct EnvelopeFit {
    double C_fit = 0;
    double c_fit = 0;
    double rms = 0;
    std::int64_t samples = 0;
    double violation_fraction = 0;
    std::string window;
};

/// Least-squares (C, c) in log Gamma = log C - (n/2) log tau - c r^2/tau over
/// samples above floor*peak with r^2/tau <= 20, plus the one-sided bound
/// check against 1.05 C tau^{-n/2} exp(-c r^2/tau).
inline EnvelopeFit envelope_fit(const GreenTable& table, double floor_rel = 1e-6) {
    require(table.times.size() >= 3, "envelope_fit: need at least 3 times");
    require(floor_rel >= 1e-14 && floor_rel <= 1e-3,
            "envelope_fit: floor must lie in [1e-14, 1e-3]");
    const Grid& g = table.grid;
    const double half_n = 0.5 * g.n;
    std::vector<double> us, ys, taus;
    for (std::size_t j = 0; j < table.slices.size(); ++j) {
        double tau = table.times[j] - table.eff_source_time;
        if (tau <= 0) continue;
        const auto& s = table.slices[j];
        double peak = s.max();
        for (std::int64_t i = 0; i < g.size(); ++i) {
            if (s[i] <= floor_rel * peak) continue;
            double r = g.periodic_distance(i, table.source.y);
            double u = r * r / tau;
            if (u > 20.0) continue;
            us.push_back(u);
            ys.push_back(std::log(s[i]) + half_n * std::log(tau));
            taus.push_back(tau);
        }
    }
    if (us.size() < 16) throw data_error("envelope_fit: insufficient data above floor");
    LineFit lf = linear_fit(us, ys);
    EnvelopeFit fit;
    fit.c_fit = -lf.slope;
    fit.C_fit = std::exp(lf.intercept);
    fit.rms = lf.rms;
    fit.samples = static_cast<std::int64_t>(us.size());
    std::int64_t viol = 0;
    for (std::size_t i = 0; i < us.size(); ++i) {
        double bound = std::log(1.05 * fit.C_fit) - fit.c_fit * us[i];
        if (ys[i] > bound) ++viol;
    }
    fit.violation_fraction = static_cast<double>(viol) / static_cast<double>(us.size());
    std::ostringstream w;
    w << "floor=" << floor_rel << "*peak, r^2/tau<=20, " << table.times.size() << " slices";
    fit.window = w.str();
    return fit;
}

struct DerivativeEnvelopeReport {
    // first derivatives, model exponent (n+1)/2
    double C1 = 0, c1 = 0, expo1_free = 0, violation1 = 0;
    std::int64_t samples1 = 0;
    // second derivatives plus time derivative, model exponent (n+2)/2
    double C2 = 0, c2 = 0, expo2_free = 0, violation2 = 0;
    std::int64_t samples2 = 0;
};

namespace detail {

struct EnvelopeSamples {
    std::vector<double> us, logtau, ys;
};

inline EnvelopeSamples collect_envelope_samples(const Grid& g, std::int64_t y,
                                                const std::vector<double>& taus,
                                                const std::vector<ScalarField>& mags,
                                                double floor_rel) {
    EnvelopeSamples out;
    for (std::size_t j = 0; j < mags.size(); ++j) {
        const auto& m = mags[j];
        double peak = m.max();
        for (std::int64_t i = 0; i < g.size(); ++i) {
            if (m[i] <= floor_rel * peak) continue;
            double r = g.periodic_distance(i, y);
            double u = r * r / taus[j];
            if (u > 20.0) continue;
            out.us.push_back(u);
            out.logtau.push_back(std::log(taus[j]));
            out.ys.push_back(std::log(m[i]));
        }
    }
    return out;
}

struct FixedExponentFit {
    double C = 0, c = 0, violation = 0;
    std::int64_t samples = 0;
};

inline FixedExponentFit fixed_exponent_fit(const EnvelopeSamples& s, double exponent) {
    std::vector<double> ys(s.ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = s.ys[i] + exponent * s.logtau[i];
    LineFit lf = linear_fit(s.us, ys);
    FixedExponentFit f;
    f.c = -lf.slope;
    f.C = std::exp(lf.intercept);
    f.samples = static_cast<std::int64_t>(ys.size());
    std::int64_t viol = 0;
    for (std::size_t i = 0; i < ys.size(); ++i)
        if (ys[i] > std::log(1.05 * f.C) - f.c * s.us[i]) ++viol;
    f.violation = static_cast<double>(viol) / static_cast<double>(ys.size());
    return f;
}

} // namespace detail

/// Envelope fits for |grad Gamma| and |hess Gamma| + |d_t Gamma| with model
/// exponents (n+1)/2 and (n+2)/2; also reports freely fitted exponents.
inline DerivativeEnvelopeReport derivative_envelope_check(const SpectralPlan& plan,
                                                          const GreenTable& table,
                                                          double floor_rel = 1e-6) {
    const Grid& g = table.grid;
    require(table.times.size() >= 3, "derivative_envelope_check: need >= 3 times");
    double tau_min = table.times.front() - table.eff_source_time;
    double need = 36.0 * g.h() * g.h();
    if (tau_min < need) {
        std::ostringstream msg;
        msg << "derivative_envelope_check: under-resolved kernel, need tau >= " << need
            << " (6 cells across sqrt(tau)), got " << tau_min;
        throw usage_error(msg.str());
    }

    std::vector<double> taus;
    std::vector<ScalarField> grad_mags;
    for (std::size_t j = 0; j < table.slices.size(); ++j) {
        taus.push_back(table.times[j] - table.eff_source_time);
        VectorField gr = plan.gradient(table.slices[j]);
        ScalarField mag(g);
        for (std::int64_t i = 0; i < g.size(); ++i) {
            double s = 0;
            for (int a = 0; a < g.n; ++a) s += gr[a][i] * gr[a][i];
            mag[i] = std::sqrt(s);
        }
        grad_mags.push_back(std::move(mag));
    }

    // interior slices for the centred time derivative
    std::vector<double> taus2;
    std::vector<ScalarField> d2_mags;
    for (std::size_t j = 1; j + 1 < table.slices.size(); ++j) {
        ScalarField mag(g);
        for (int a = 0; a < g.n; ++a)
            for (int b = a; b < g.n; ++b) {
                ScalarField d2 = plan.second_derivative(table.slices[j], a, b);
                double w = (a == b) ? 1.0 : 2.0;
                for (std::int64_t i = 0; i < g.size(); ++i) mag[i] += w * d2[i] * d2[i];
            }
        double dt2 = table.times[j + 1] - table.times[j - 1];
        for (std::int64_t i = 0; i < g.size(); ++i) {
            double ddt = (table.slices[j + 1][i] - table.slices[j - 1][i]) / dt2;
            mag[i] = std::sqrt(mag[i]) + std::fabs(ddt);
        }
        taus2.push_back(table.times[j] - table.eff_source_time);
        d2_mags.push_back(std::move(mag));
    }

    auto s1 = detail::collect_envelope_samples(g, table.source.y, taus, grad_mags, floor_rel);
    auto s2 = detail::collect_envelope_samples(g, table.source.y, taus2, d2_mags, floor_rel);
    if (s1.us.size() < 16 || s2.us.size() < 16)
        throw data_error("derivative_envelope_check: insufficient data above floor");

    DerivativeEnvelopeReport rep;
    auto f1 = detail::fixed_exponent_fit(s1, 0.5 * (g.n + 1));
    rep.C1 = f1.C;
    rep.c1 = f1.c;
    rep.violation1 = f1.violation;
    rep.samples1 = f1.samples;
    PlaneFit p1 = plane_fit(s1.logtau, s1.us, s1.ys);
    rep.expo1_free = -p1.b1;

    auto f2 = detail::fixed_exponent_fit(s2, 0.5 * (g.n + 2));
    rep.C2 = f2.C;
    rep.c2 = f2.c;
    rep.violation2 = f2.violation;
    rep.samples2 = f2.samples;
    PlaneFit p2 = plane_fit(s2.logtau, s2.us, s2.ys);
    rep.expo2_free = -p2.b1;
    return rep;
}

// ---------------------------------------------------------------------------
// Chapman-Kolmogorov and Duhamel
// ---------------------------------------------------------------------------

enum class CkMode {
    dense,    // literal sum over intermediate sources, one table per z
    propagate // composition realized by re-propagating the tabulated slice
};

struct CkResult {
    double residual = 0;
    std::int64_t sources_used = 0;
};

/// Relative L1 difference between Gamma(t,.,s,y) and the composition
/// int Gamma(t,.,r,z) Gamma(r,z,s,y) dz for s < r < t.
inline CkResult chapman_kolmogorov_residual(const SpectralPlan& plan, const Coefficients& coeffs,
                                            double s, double r, double t, std::int64_t y,
                                            CkMode mode = CkMode::dense,
                                            GreenOptions opts = {}) {
    require(s < r && r < t, "chapman_kolmogorov: need s < r < t");
    const Grid& g = plan.grid();
    double eps = opts.epsilon > 0 ? opts.epsilon : 2.0 * g.h();
    opts.epsilon = eps;

    GreenTable base = detail::richardson_green(plan, coeffs, SourcePoint{s, y}, {r, t}, opts);
    const ScalarField& slice_r = base.slices[0];
    const ScalarField& slice_t = base.slices[1];
    const double hn = std::pow(g.h(), g.n);

    ScalarField comp(g);
    CkResult out;
    if (mode == CkMode::propagate) {
        ForwardOptions fopts;
        fopts.advection_order = opts.advection_order;
        detail::ForwardStepper stepper(plan, coeffs, fopts);
        ScalarField f0 = slice_r;
        for (auto& x : f0.v) x = std::max(x, 0.0);
        stepper.set_state(f0, r);
        stepper.advance_to(t, nullptr, detail::green_dt_cap(plan, coeffs, opts));
        comp = stepper.state();
        out.sources_used = g.size();
    } else {
        double wmax = 0;
        for (std::int64_t z = 0; z < g.size(); ++z) wmax = std::max(wmax, slice_r[z]);
        std::vector<std::int64_t> kept;
        for (std::int64_t z = 0; z < g.size(); ++z)
            if (slice_r[z] > 1e-10 * wmax) kept.push_back(z);
        out.sources_used = static_cast<std::int64_t>(kept.size());

        int workers = std::min<int>(thread_cap(), static_cast<int>(kept.size()));
        workers = std::max(workers, 1);
        std::vector<ScalarField> partial(static_cast<std::size_t>(workers), ScalarField(g));
        std::vector<std::thread> pool;
        std::int64_t chunk = (static_cast<std::int64_t>(kept.size()) + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            std::int64_t lo = w * chunk;
            std::int64_t hi = std::min<std::int64_t>(static_cast<std::int64_t>(kept.size()), lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back([&, w, lo, hi] {
                for (std::int64_t q = lo; q < hi; ++q) {
                    std::int64_t z = kept[static_cast<std::size_t>(q)];
                    GreenTable tz = detail::richardson_green(plan, coeffs, SourcePoint{r, z},
                                                             {t}, opts);
                    double wgt = slice_r[z] * hn;
                    for (std::int64_t i = 0; i < g.size(); ++i)
                        partial[static_cast<std::size_t>(w)][i] += wgt * tz.slices[0][i];
                }
            });
        }
        for (auto& th : pool) th.join();
        for (const auto& p : partial) comp += p;
    }

    double num = 0, den = 0;
    for (std::int64_t i = 0; i < g.size(); ++i) {
        num += std::fabs(comp[i] - slice_t[i]);
        den += std::fabs(slice_t[i]);
    }
    out.residual = num / den;
    return out;
}

struct DuhamelOptions {
    bool use_richardson = true;
    double epsilon = 0;
    std::int64_t budget_bytes = std::int64_t(2) << 30;
    int advection_order = 2;
};

/// Assembles the representation f(t,x) = sum_y Gamma(t,x,0,y) f0(y) h^n
/// + sum_{s,y} w_s Gamma(t,x,s,y) F(s,y) h^n from tabulated kernels: a full
/// source-grid sweep, intended for small grids. The diagonal quadrature term
/// of the source integral degenerates to F itself.
inline ScalarSeries duhamel_reconstruct(const SpectralPlan& plan, const Coefficients& coeffs,
                                        const ScalarField& f0, const ScalarSeries* F,
                                        const TimeGrid& tg, DuhamelOptions opts = {}) {
    const Grid& g = plan.grid();
    const double hn = std::pow(g.h(), g.n);
    double eps = opts.epsilon > 0 ? opts.epsilon : 2.0 * g.h();
    double margin = opts.use_richardson ? 5.0 * (2 * eps) * (2 * eps) : 2.0 * eps * eps;
    if (tg.dt() < margin) {
        std::ostringstream msg;
        msg << "duhamel_reconstruct: output spacing " << tg.dt()
            << " is below the table margin " << margin << "; coarsen the output grid";
        throw usage_error(msg.str());
    }

    int workers = std::max(1, thread_cap());
    std::int64_t estimate = static_cast<std::int64_t>((tg.M + 1)) * g.size() * 8 *
                                (workers + 1) +
                            g.size() * 8 * 6 * workers;
    if (estimate > opts.budget_bytes) {
        std::ostringstream msg;
        msg << "duhamel_reconstruct: memory estimate " << estimate
            << " bytes exceeds the configured budget " << opts.budget_bytes;
        throw usage_error(msg.str());
    }

    GreenOptions gopts;
    gopts.use_richardson = opts.use_richardson;
    gopts.epsilon = eps;
    gopts.advection_order = opts.advection_order;

    struct Task {
        double s;
        std::int64_t y;
        double weight;      // multiplies the kernel: f0(y) h^n or w_s F(s,y) h^n
        int first_output;   // first output node this task contributes to
    };
    std::vector<Task> tasks;
    double f0max = f0.max_abs();
    for (std::int64_t y = 0; y < g.size(); ++y)
        if (std::fabs(f0[y]) > 1e-13 * f0max)
            tasks.push_back({tg.t0, y, f0[y] * hn, 1});
    if (F) {
        for (int i = 0; i <= tg.M - 1; ++i) {
            const ScalarField& Fi = F->sample(tg.node(i));
            double fmax = Fi.max_abs();
            if (fmax == 0) continue;
            double w = (i == 0) ? 0.5 * tg.dt() : tg.dt();
            for (std::int64_t y = 0; y < g.size(); ++y)
                if (std::fabs(Fi[y]) > 1e-13 * fmax)
                    tasks.push_back({tg.node(i), y, w * Fi[y] * hn, i + 1});
        }
    }

    // per-thread accumulators over output nodes, merged in thread order
    std::vector<std::vector<ScalarField>> acc(
        static_cast<std::size_t>(workers),
        std::vector<ScalarField>(static_cast<std::size_t>(tg.M + 1), ScalarField(g)));
    std::vector<std::thread> pool;
    std::int64_t ntasks = static_cast<std::int64_t>(tasks.size());
    std::int64_t chunk = (ntasks + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        std::int64_t lo = w * chunk, hi = std::min(ntasks, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, w, lo, hi] {
            for (std::int64_t q = lo; q < hi; ++q) {
                const Task& task = tasks[static_cast<std::size_t>(q)];
                std::vector<double> times;
                for (int j = task.first_output; j <= tg.M; ++j) {
                    if (tg.node(j) >= task.s + margin) times.push_back(tg.node(j));
                }
                if (times.empty()) continue;
                GreenTable tb = detail::richardson_green(plan, coeffs,
                                                         SourcePoint{task.s, task.y}, times,
                                                         gopts);
                std::size_t k = 0;
                for (int j = task.first_output; j <= tg.M; ++j) {
                    if (tg.node(j) < task.s + margin) continue;
                    auto& slot = acc[static_cast<std::size_t>(w)][static_cast<std::size_t>(j)];
                    for (std::int64_t i = 0; i < g.size(); ++i)
                        slot[i] += task.weight * tb.slices[k][i];
                    ++k;
                }
            }
        });
    }
    for (auto& th : pool) th.join();

    std::vector<ScalarField> out(static_cast<std::size_t>(tg.M + 1), ScalarField(g));
    out[0] = f0;
    for (int j = 1; j <= tg.M; ++j)
        for (int w = 0; w < workers; ++w) out[static_cast<std::size_t>(j)] += acc[static_cast<std::size_t>(w)][static_cast<std::size_t>(j)];

    if (F) {
        // diagonal quadrature term: the kernel acts as the identity at s = t_j
        for (int j = 1; j <= tg.M; ++j) {
            ScalarField Fj = F->sample(tg.node(j));
            double w = 0.5 * tg.dt();
            for (std::int64_t i = 0; i < g.size(); ++i)
                out[static_cast<std::size_t>(j)][i] += w * Fj[i];
        }
    }
    return ScalarSeries(tg, std::move(out));
}

} // namespace pk
