#pragma once

#include <cmath>

#include "parakernel/field.hpp"

namespace pk {

/// Secant quotient (x^{1+a} - y^{1+a})/(x - y) for x, y >= 0, continued by its
/// two-sided limit (1+a) x^a across the coincidence branch. This is the
/// effective diffusivity linking two porous-medium states; it is also the
/// face coefficient of the degenerate diffusion flux.
inline double secant_quotient(double x, double y, double alpha) {
    if (std::fabs(x - y) < 1e-12) {
        return x == 0.0 ? 0.0 : (1.0 + alpha) * std::pow(x, alpha);
    }
    double p = 1.0 + alpha;
    return (std::pow(x, p) - std::pow(y, p)) / (x - y);
}

/// Pointwise secant quotient of two nonnegative fields.
inline ScalarField quotient_A(const ScalarField& eta1, const ScalarField& eta2, double alpha) {
    require(alpha > 0.0, "quotient_A: alpha must be positive");
    require(eta1.grid == eta2.grid, "quotient_A: fields must share a grid");
    ScalarField out(eta1.grid);
    for (std::int64_t i = 0; i < eta1.size(); ++i) {
        double x = eta1[i], y = eta2[i];
        if (x < 0.0 || y < 0.0)
            throw usage_error("quotient_A: inputs must be nonnegative");
        out[i] = secant_quotient(x, y, alpha);
    }
    return out;
}

} // namespace pk
