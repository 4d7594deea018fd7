#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "parakernel/errors.hpp"

namespace pk {

/// Uniform periodic grid on [0,L)^n with N nodes per axis, n in {1,2,3}.
/// Node coordinates are x_i = i*h with h = L/N; index layout is row-major
/// with the last axis fastest.
struct Grid {
    int n = 1;
    double L = 1.0;
    int N = 8;

    Grid() = default;
    Grid(int n_, double L_, int N_) : n(n_), L(L_), N(N_) {
        require(n >= 1 && n <= 3, "Grid: dimension must be 1, 2 or 3");
        require(N >= 8, "Grid: need at least 8 points per axis");
        require(L > 0.0, "Grid: box side must be positive");
    }

    double h() const { return L / N; }
    std::int64_t size() const {
        std::int64_t s = 1;
        for (int a = 0; a < n; ++a) s *= N;
        return s;
    }
    bool operator==(const Grid& o) const { return n == o.n && L == o.L && N == o.N; }
    bool operator!=(const Grid& o) const { return !(*this == o); }

    /// Decompose a flat index into per-axis indices.
    std::array<int, 3> decompose(std::int64_t idx) const {
        std::array<int, 3> c{0, 0, 0};
        for (int a = n - 1; a >= 0; --a) {
            c[a] = static_cast<int>(idx % N);
            idx /= N;
        }
        return c;
    }
    std::int64_t flatten(const std::array<int, 3>& c) const {
        std::int64_t idx = 0;
        for (int a = 0; a < n; ++a) idx = idx * N + ((c[a] % N + N) % N);
        return idx;
    }
    std::array<double, 3> coords(std::int64_t idx) const {
        auto c = decompose(idx);
        std::array<double, 3> x{0, 0, 0};
        for (int a = 0; a < n; ++a) x[a] = c[a] * h();
        return x;
    }

    /// Signed periodic separation of two coordinates along one axis, in (-L/2, L/2].
    double periodic_delta(double a, double b) const {
        double d = std::fmod(a - b, L);
        if (d > 0.5 * L) d -= L;
        if (d <= -0.5 * L) d += L;
        return d;
    }
    /// Euclidean periodic distance between two nodes.
    double periodic_distance(std::int64_t i, std::int64_t j) const {
        auto xi = coords(i), xj = coords(j);
        double s = 0;
        for (int a = 0; a < n; ++a) {
            double d = periodic_delta(xi[a], xj[a]);
            s += d * d;
        }
        return std::sqrt(s);
    }
    /// Chebyshev periodic distance (max over axes), the spatial metric used by
    /// the parabolic distance convention.
    double periodic_distance_max(std::int64_t i, std::int64_t j) const {
        auto xi = coords(i), xj = coords(j);
        double m = 0;
        for (int a = 0; a < n; ++a) m = std::max(m, std::fabs(periodic_delta(xi[a], xj[a])));
        return m;
    }
};

/// Uniform time grid t0 = t_0 < ... < t_M = t1 with M steps.
struct TimeGrid {
    double t0 = 0.0;
    double t1 = 1.0;
    int M = 1;

    TimeGrid() = default;
    TimeGrid(double t0_, double t1_, int M_) : t0(t0_), t1(t1_), M(M_) {
        require(t1 > t0, "TimeGrid: t1 must exceed t0");
        require(M >= 1, "TimeGrid: need at least one step");
    }
    double dt() const { return (t1 - t0) / M; }
    double node(int j) const { return t0 + j * dt(); }
    double duration() const { return t1 - t0; }
};

/// Exponent pair for discrete L^s_T L^p norms; s < 0 means "no temporal part".
struct NormSpec {
    double p = 2.0;
    double s = -1.0;

    NormSpec() = default;
    explicit NormSpec(double p_, double s_ = -1.0) : p(p_), s(s_) {
        require(p >= 1.0, "NormSpec: p must be >= 1");
        if (s >= 0.0) require(s >= 1.0, "NormSpec: s must be >= 1 when present");
    }
    bool has_temporal() const { return s >= 1.0; }
    static double infinity() { return std::numeric_limits<double>::infinity(); }
};

} // namespace pk
