#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <vector>

#include "parakernel/field.hpp"
#include "parakernel/fitting.hpp"
#include "parakernel/norms.hpp"

namespace pk {

namespace detail {
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}
} // namespace detail

/// Discrete Fourier machinery for one grid: cached c2c plans and wavenumber
/// tables. Immutable after construction; transforms on distinct buffers are
/// safe to run concurrently.
class SpectralPlan {
  public:
    using cplx = std::complex<double>;

    explicit SpectralPlan(const Grid& g) : grid_(g), impl_(std::make_shared<Impl>(g)) {
        // wavenumbers per axis index; Nyquist is kept for even symbols and
        // zeroed for odd ones (grad, div, projection) so that grad/div/leray
        // agree with each other on any data
        k_full_.resize(static_cast<std::size_t>(g.N));
        k_odd_.resize(static_cast<std::size_t>(g.N));
        for (int m = 0; m < g.N; ++m) {
            int signed_m = (m <= g.N / 2) ? m : m - g.N;
            double k = 2.0 * M_PI * signed_m / g.L;
            k_full_[static_cast<std::size_t>(m)] = k;
            k_odd_[static_cast<std::size_t>(m)] = (2 * m == g.N) ? 0.0 : k;
        }
    }

    const Grid& grid() const { return grid_; }

    void forward(const ScalarField& f, std::vector<cplx>& spec) const {
        std::vector<cplx> in(f.v.begin(), f.v.end());
        spec.assign(in.size(), cplx(0, 0));
        fftw_execute_dft(impl_->fwd, reinterpret_cast<fftw_complex*>(in.data()),
                         reinterpret_cast<fftw_complex*>(spec.data()));
    }

    ScalarField inverse(std::vector<cplx>& spec) const {
        std::vector<cplx> out(spec.size());
        fftw_execute_dft(impl_->bwd, reinterpret_cast<fftw_complex*>(spec.data()),
                         reinterpret_cast<fftw_complex*>(out.data()));
        ScalarField f(grid_);
        const double inv = 1.0 / static_cast<double>(grid_.size());
        for (std::int64_t i = 0; i < grid_.size(); ++i)
            f[i] = out[static_cast<std::size_t>(i)].real() * inv;
        return f;
    }

    double k_axis(int axis_index) const { return k_full_[static_cast<std::size_t>(axis_index)]; }

    /// exp(-|k|^2 t) per flat mode index.
    std::vector<double> heat_multiplier(double t) const {
        std::vector<double> mult(static_cast<std::size_t>(grid_.size()));
        for_each_mode([&](std::int64_t idx, const std::array<int, 3>& m) {
            double k2 = 0;
            for (int a = 0; a < grid_.n; ++a) {
                double k = k_full_[static_cast<std::size_t>(m[a])];
                k2 += k * k;
            }
            mult[static_cast<std::size_t>(idx)] = std::exp(-k2 * t);
        });
        return mult;
    }

    /// (1 - dt lap_h)^{-1} symbol of the second-order finite-difference
    /// Laplacian; inverting this M-matrix preserves the discrete maximum
    /// principle exactly.
    std::vector<double> fd_resolvent_multiplier(double dt) const {
        const double h = grid_.h();
        std::vector<double> mult(static_cast<std::size_t>(grid_.size()));
        for_each_mode([&](std::int64_t idx, const std::array<int, 3>& m) {
            double lam = 0;
            for (int a = 0; a < grid_.n; ++a) {
                double s = std::sin(M_PI * m[a] / grid_.N);
                lam += 4.0 / (h * h) * s * s;
            }
            mult[static_cast<std::size_t>(idx)] = 1.0 / (1.0 + dt * lam);
        });
        return mult;
    }

    ScalarField apply_multiplier(const ScalarField& f, const std::vector<double>& mult) const {
        std::vector<cplx> spec;
        forward(f, spec);
        for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= mult[i];
        return inverse(spec);
    }

    /// Heat semigroup e^{t lap}: multiplication of each mode by exp(-|k|^2 t).
    ScalarField heat(const ScalarField& f, double t) const {
        require(t >= 0.0, "heat_semigroup: t must be nonnegative");
        if (t == 0.0) return f;
        return apply_multiplier(f, heat_multiplier(t));
    }
    VectorField heat(const VectorField& u, double t) const {
        require(t >= 0.0, "heat_semigroup: t must be nonnegative");
        if (t == 0.0) return u;
        auto mult = heat_multiplier(t);
        VectorField out(grid_);
        for (int a = 0; a < grid_.n; ++a) out[a] = apply_multiplier(u[a], mult);
        return out;
    }

    VectorField gradient(const ScalarField& f) const {
        std::vector<cplx> spec;
        forward(f, spec);
        VectorField out(grid_);
        for (int a = 0; a < grid_.n; ++a) {
            std::vector<cplx> da(spec.size());
            for_each_mode([&](std::int64_t idx, const std::array<int, 3>& m) {
                double k = k_odd_[static_cast<std::size_t>(m[a])];
                da[static_cast<std::size_t>(idx)] =
                    spec[static_cast<std::size_t>(idx)] * cplx(0, k);
            });
            out[a] = inverse(da);
        }
        return out;
    }

    ScalarField divergence(const VectorField& u) const {
        std::vector<cplx> acc(static_cast<std::size_t>(grid_.size()), cplx(0, 0));
        for (int a = 0; a < grid_.n; ++a) {
            std::vector<cplx> spec;
            forward(u[a], spec);
            for_each_mode([&](std::int64_t idx, const std::array<int, 3>& m) {
                double k = k_odd_[static_cast<std::size_t>(m[a])];
                acc[static_cast<std::size_t>(idx)] +=
                    spec[static_cast<std::size_t>(idx)] * cplx(0, k);
            });
        }
        return inverse(acc);
    }

    ScalarField laplacian(const ScalarField& f) const {
        std::vector<cplx> spec;
        forward(f, spec);
        for_each_mode([&](std::int64_t idx, const std::array<int, 3>& m) {
            double k2 = 0;
            for (int a = 0; a < grid_.n; ++a) {
                double k = k_full_[static_cast<std::size_t>(m[a])];
                k2 += k * k;
            }
            spec[static_cast<std::size_t>(idx)] *= -k2;
        });
        return inverse(spec);
    }
    VectorField laplacian(const VectorField& u) const {
        VectorField out(grid_);
        for (int a = 0; a < grid_.n; ++a) out[a] = laplacian(u[a]);
        return out;
    }

    /// d^2 f / dx_a dx_b; diagonal entries use the full symbol, mixed ones the
    /// Nyquist-zeroed odd symbol squared.
    ScalarField second_derivative(const ScalarField& f, int a, int b) const {
        std::vector<cplx> spec;
        forward(f, spec);
        for_each_mode([&](std::int64_t idx, const std::array<int, 3>& m) {
            double ka = (a == b) ? k_full_[static_cast<std::size_t>(m[a])]
                                 : k_odd_[static_cast<std::size_t>(m[a])];
            double kb = (a == b) ? ka : k_odd_[static_cast<std::size_t>(m[b])];
            spec[static_cast<std::size_t>(idx)] *= -(ka * kb);
        });
        return inverse(spec);
    }

    /// Leray projection onto divergence-free fields; in one dimension
    /// everything projects to its mean.
    VectorField leray_project(const VectorField& u) const {
        std::vector<std::vector<cplx>> spec(static_cast<std::size_t>(grid_.n));
        for (int a = 0; a < grid_.n; ++a) forward(u[a], spec[static_cast<std::size_t>(a)]);
        for_each_mode([&](std::int64_t idx, const std::array<int, 3>& m) {
            double k[3] = {0, 0, 0};
            double k2 = 0;
            for (int a = 0; a < grid_.n; ++a) {
                k[a] = k_odd_[static_cast<std::size_t>(m[a])];
                k2 += k[a] * k[a];
            }
            if (k2 == 0.0) return;
            cplx kdotu(0, 0);
            for (int a = 0; a < grid_.n; ++a)
                kdotu += k[a] * spec[static_cast<std::size_t>(a)][static_cast<std::size_t>(idx)];
            for (int a = 0; a < grid_.n; ++a)
                spec[static_cast<std::size_t>(a)][static_cast<std::size_t>(idx)] -=
                    k[a] * kdotu / k2;
        });
        VectorField out(grid_);
        for (int a = 0; a < grid_.n; ++a) out[a] = inverse(spec[static_cast<std::size_t>(a)]);
        return out;
    }

    /// Stokes propagator S(t) = e^{t lap} P.
    VectorField stokes_propagate(const VectorField& u, double t) const {
        require(t >= 0.0, "stokes_propagate: t must be nonnegative");
        return heat(leray_project(u), t);
    }

    template <class Fn>
    void for_each_mode(Fn&& fn) const {
        const int N = grid_.N;
        std::array<int, 3> m{0, 0, 0};
        if (grid_.n == 1) {
            for (int i = 0; i < N; ++i) {
                m[0] = i;
                fn(static_cast<std::int64_t>(i), m);
            }
        } else if (grid_.n == 2) {
            std::int64_t idx = 0;
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < N; ++j) {
                    m[0] = i;
                    m[1] = j;
                    fn(idx++, m);
                }
        } else {
            std::int64_t idx = 0;
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < N; ++j)
                    for (int k = 0; k < N; ++k) {
                        m[0] = i;
                        m[1] = j;
                        m[2] = k;
                        fn(idx++, m);
                    }
        }
    }

  private:
    struct Impl {
        fftw_plan fwd = nullptr;
        fftw_plan bwd = nullptr;
        explicit Impl(const Grid& g) {
            std::vector<cplx> a(static_cast<std::size_t>(g.size()));
            std::vector<cplx> b(static_cast<std::size_t>(g.size()));
            int dims[3] = {g.N, g.N, g.N};
            std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
            fwd = fftw_plan_dft(g.n, dims, reinterpret_cast<fftw_complex*>(a.data()),
                                reinterpret_cast<fftw_complex*>(b.data()), FFTW_FORWARD,
                                FFTW_ESTIMATE | FFTW_UNALIGNED);
            bwd = fftw_plan_dft(g.n, dims, reinterpret_cast<fftw_complex*>(a.data()),
                                reinterpret_cast<fftw_complex*>(b.data()), FFTW_BACKWARD,
                                FFTW_ESTIMATE | FFTW_UNALIGNED);
        }
        ~Impl() {
            std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
            if (fwd) fftw_destroy_plan(fwd);
            if (bwd) fftw_destroy_plan(bwd);
        }
        Impl(const Impl&) = delete;
        Impl& operator=(const Impl&) = delete;
    };

    Grid grid_;
    std::shared_ptr<Impl> impl_;
    std::vector<double> k_full_;
    std::vector<double> k_odd_;
};

struct SmoothingOptions {
    bool gradient = false; // fit ||grad S(t) f||_r instead of ||S(t) f||_r
};

struct SmoothingFit {
    double slope = 0;
    double intercept = 0;
};

namespace detail {

inline void check_smoothing_args(double p, double r, std::size_t family,
                                 const std::vector<double>& times) {
    require(p >= 1.0 && r >= p, "verify_smoothing: need 1 <= p <= r");
    require(family > 0, "verify_smoothing: empty family");
    require(times.size() >= 2, "verify_smoothing: degenerate time range");
    double tmin = times.front(), tmax = times.front();
    for (double t : times) {
        require(t > 0.0, "verify_smoothing: times must be positive");
        tmin = std::min(tmin, t);
        tmax = std::max(tmax, t);
    }
    require(tmax / tmin >= 10.0 * (1.0 - 1e-12),
            "verify_smoothing: degenerate time range, need at least one decade");
}

inline double gradient_magnitude_norm(const SpectralPlan& plan, const ScalarField& f, double r) {
    VectorField g = plan.gradient(f);
    return lp_norm(g, r);
}

} // namespace detail

/// Least-squares slope and intercept of log(worst-case ||S(t)f||_r / ||f||_p)
/// against log t over a family of scalar fields (evolved by the heat
/// semigroup).
inline SmoothingFit verify_smoothing(const SpectralPlan& plan, double p, double r,
                                     const std::vector<ScalarField>& family,
                                     const std::vector<double>& times,
                                     SmoothingOptions opts = {}) {
    detail::check_smoothing_args(p, r, family.size(), times);
    std::vector<double> lx, ly;
    for (double t : times) {
        double worst = 0;
        for (const auto& f : family) {
            ScalarField ft = plan.heat(f, t);
            double num = opts.gradient ? detail::gradient_magnitude_norm(plan, ft, r)
                                       : lp_norm(ft, r);
            worst = std::max(worst, num / lp_norm(f, p));
        }
        lx.push_back(std::log(t));
        ly.push_back(std::log(worst));
    }
    LineFit fit = linear_fit(lx, ly);
    return {fit.slope, fit.intercept};
}

/// Vector-family variant, evolved by the Stokes propagator.
inline SmoothingFit verify_smoothing(const SpectralPlan& plan, double p, double r,
                                     const std::vector<VectorField>& family,
                                     const std::vector<double>& times,
                                     SmoothingOptions opts = {}) {
    detail::check_smoothing_args(p, r, family.size(), times);
    std::vector<double> lx, ly;
    for (double t : times) {
        double worst = 0;
        for (const auto& u : family) {
            VectorField ut = plan.stokes_propagate(u, t);
            double num;
            if (opts.gradient) {
                ScalarField mag(plan.grid());
                for (int a = 0; a < plan.grid().n; ++a) {
                    VectorField ga = plan.gradient(ut[a]);
                    for (std::int64_t i = 0; i < plan.grid().size(); ++i) {
                        double s = 0;
                        for (int b = 0; b < plan.grid().n; ++b) s += ga[b][i] * ga[b][i];
                        mag[i] += s;
                    }
                }
                for (std::int64_t i = 0; i < plan.grid().size(); ++i)
                    mag[i] = std::sqrt(mag[i]);
                num = lp_norm(mag, r);
            } else {
                num = lp_norm(ut, r);
            }
            worst = std::max(worst, num / lp_norm(u, p));
        }
        lx.push_back(std::log(t));
        ly.push_back(std::log(worst));
    }
    LineFit fit = linear_fit(lx, ly);
    return {fit.slope, fit.intercept};
}

} // namespace pk
