#pragma once

#include <cmath>
#include <vector>

#include "parakernel/field.hpp"
#include "parakernel/grid.hpp"

namespace pk {

/// Discrete L^p norm: (sum |f|^p h^n)^(1/p); grid maximum for p = infinity.
/// Plain summation; the tolerance budget is 1e-12 per reduction at desk scales.
inline double lp_norm(const ScalarField& f, const NormSpec& spec) {
    const double p = spec.p;
    if (std::isinf(p)) return f.max_abs();
    const double hn = std::pow(f.grid.h(), f.grid.n);
    if (p == 1.0) {
        double s = 0;
        for (double x : f.v) s += std::fabs(x);
        return s * hn;
    }
    if (p == 2.0) {
        double s = 0;
        for (double x : f.v) s += x * x;
        return std::sqrt(s * hn);
    }
    double s = 0;
    for (double x : f.v) s += std::pow(std::fabs(x), p);
    return std::pow(s * hn, 1.0 / p);
}

inline double lp_norm(const ScalarField& f, double p) { return lp_norm(f, NormSpec(p)); }

/// L^p norm of the pointwise Euclidean magnitude of a vector field.
inline double lp_norm(const VectorField& u, const NormSpec& spec) {
    ScalarField mag(u.grid);
    for (std::int64_t i = 0; i < u.grid.size(); ++i) {
        double s = 0;
        for (int a = 0; a < u.grid.n; ++a) s += u[a][i] * u[a][i];
        mag[i] = std::sqrt(s);
    }
    return lp_norm(mag, spec);
}

inline double lp_norm(const VectorField& u, double p) { return lp_norm(u, NormSpec(p)); }

/// Mass functional: sum f h^n.
inline double integrate(const ScalarField& f) {
    double s = 0;
    for (double x : f.v) s += x;
    return s * std::pow(f.grid.h(), f.grid.n);
}

inline double inner_product(const ScalarField& a, const ScalarField& b) {
    double s = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s * std::pow(a.grid.h(), a.grid.n);
}

inline double inner_product(const VectorField& a, const VectorField& b) {
    double s = 0;
    for (int c = 0; c < a.grid.n; ++c)
        for (std::int64_t i = 0; i < a.grid.size(); ++i) s += a[c][i] * b[c][i];
    return s * std::pow(a.grid.h(), a.grid.n);
}

/// Mixed L^s_T L^p norm of a time-sampled sequence of per-slice norms,
/// trapezoidal in time. For s = infinity, the max over slices.
inline double mixed_time_norm(const std::vector<double>& slice_norms, double dt, double s) {
    if (slice_norms.empty()) return 0.0;
    if (std::isinf(s)) {
        double m = 0;
        for (double x : slice_norms) m = std::max(m, std::fabs(x));
        return m;
    }
    double acc = 0;
    for (std::size_t j = 0; j < slice_norms.size(); ++j) {
        double w = (j == 0 || j + 1 == slice_norms.size()) ? 0.5 : 1.0;
        acc += w * std::pow(std::fabs(slice_norms[j]), s);
    }
    return std::pow(acc * dt, 1.0 / s);
}

/// Fraction of |f|-mass in the outer 10% shell of the box (any coordinate
/// within 5% of L of the wrap line). Experiments placing data away from the
/// seam keep this below 1e-6.
inline double boundary_contamination(const ScalarField& f) {
    const Grid& g = f.grid;
    const double lo = 0.05 * g.L, hi = 0.95 * g.L;
    double shell = 0, total = 0;
    for (std::int64_t i = 0; i < g.size(); ++i) {
        auto x = g.coords(i);
        bool in_shell = false;
        for (int a = 0; a < g.n; ++a)
            if (x[a] < lo || x[a] >= hi) { in_shell = true; break; }
        double m = std::fabs(f[i]);
        total += m;
        if (in_shell) shell += m;
    }
    return total > 0 ? shell / total : 0.0;
}

} // namespace pk
