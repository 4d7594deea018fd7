#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "parakernel/grid.hpp"

namespace pk {

/// A real scalar sample per grid node. The interpretation (density,
/// concentration, test function, potential) is contextual.
struct ScalarField {
    Grid grid;
    std::vector<double> v;

    ScalarField() = default;
    explicit ScalarField(const Grid& g, double fill = 0.0)
        : grid(g), v(static_cast<std::size_t>(g.size()), fill) {}
    ScalarField(const Grid& g, std::vector<double> values) : grid(g), v(std::move(values)) {
        require(static_cast<std::int64_t>(v.size()) == g.size(),
                "ScalarField: value count does not match grid");
    }

    std::int64_t size() const { return grid.size(); }
    double& operator[](std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }

    bool finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
    double min() const { return *std::min_element(v.begin(), v.end()); }
    double max() const { return *std::max_element(v.begin(), v.end()); }
    double max_abs() const {
        double m = 0;
        for (double x : v) m = std::max(m, std::fabs(x));
        return m;
    }

    ScalarField& operator+=(const ScalarField& o) {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
        return *this;
    }
    ScalarField& operator-=(const ScalarField& o) {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= o.v[i];
        return *this;
    }
    ScalarField& operator*=(double c) {
        for (double& x : v) x *= c;
        return *this;
    }
};

inline ScalarField operator+(ScalarField a, const ScalarField& b) { return a += b; }
inline ScalarField operator-(ScalarField a, const ScalarField& b) { return a -= b; }
inline ScalarField operator*(double c, ScalarField a) { return a *= c; }

/// n component scalar fields on one grid.
struct VectorField {
    Grid grid;
    std::vector<ScalarField> comps;

    VectorField() = default;
    explicit VectorField(const Grid& g) : grid(g) {
        comps.assign(g.n, ScalarField(g));
    }

    ScalarField& operator[](int a) { return comps[static_cast<std::size_t>(a)]; }
    const ScalarField& operator[](int a) const { return comps[static_cast<std::size_t>(a)]; }

    bool finite() const {
        for (const auto& c : comps)
            if (!c.finite()) return false;
        return true;
    }
    /// Largest pointwise Euclidean magnitude.
    double max_norm() const {
        double m = 0;
        for (std::int64_t i = 0; i < grid.size(); ++i) {
            double s = 0;
            for (int a = 0; a < grid.n; ++a) s += comps[a][i] * comps[a][i];
            m = std::max(m, s);
        }
        return std::sqrt(m);
    }

    VectorField& operator+=(const VectorField& o) {
        for (int a = 0; a < grid.n; ++a) comps[a] += o.comps[a];
        return *this;
    }
    VectorField& operator-=(const VectorField& o) {
        for (int a = 0; a < grid.n; ++a) comps[a] -= o.comps[a];
        return *this;
    }
    VectorField& operator*=(double c) {
        for (auto& f : comps) f *= c;
        return *this;
    }
};

inline VectorField operator+(VectorField a, const VectorField& b) { return a += b; }
inline VectorField operator-(VectorField a, const VectorField& b) { return a -= b; }
inline VectorField operator*(double c, VectorField a) { return a *= c; }

/// Pointwise dot product of two vector fields.
inline ScalarField dot(const VectorField& a, const VectorField& b) {
    ScalarField out(a.grid);
    for (std::int64_t i = 0; i < a.grid.size(); ++i) {
        double s = 0;
        for (int c = 0; c < a.grid.n; ++c) s += a[c][i] * b[c][i];
        out[i] = s;
    }
    return out;
}

/// Pointwise product of a scalar and a vector field.
inline VectorField scale(const ScalarField& s, const VectorField& u) {
    VectorField out(u.grid);
    for (int a = 0; a < u.grid.n; ++a)
        for (std::int64_t i = 0; i < u.grid.size(); ++i) out[a][i] = s[i] * u[a][i];
    return out;
}

inline ScalarField multiply(const ScalarField& a, const ScalarField& b) {
    ScalarField out(a.grid);
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

} // namespace pk
