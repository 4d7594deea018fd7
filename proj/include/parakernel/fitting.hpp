#pragma once

#include <cmath>
#include <vector>

#include "parakernel/errors.hpp"

namespace pk {

struct LineFit {
    double slope = 0;
    double intercept = 0;
    double rms = 0;
};

inline LineFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, "linear_fit: need >= 2 points");
    double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    double det = n * sxx - sx * sx;
    require(std::fabs(det) > 1e-300, "linear_fit: degenerate abscissae");
    LineFit f;
    f.slope = (n * sxy - sx * sy) / det;
    f.intercept = (sy * sxx - sx * sxy) / det;
    double ss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double r = y[i] - (f.intercept + f.slope * x[i]);
        ss += r * r;
    }
    f.rms = std::sqrt(ss / n);
    return f;
}

struct PlaneFit {
    double b0 = 0, b1 = 0, b2 = 0;
    double rms = 0;
};

/// Least squares for y = b0 + b1 x1 + b2 x2 via the 3x3 normal equations.
inline PlaneFit plane_fit(const std::vector<double>& x1, const std::vector<double>& x2,
                          const std::vector<double>& y) {
    require(x1.size() == y.size() && x2.size() == y.size() && y.size() >= 3,
            "plane_fit: need >= 3 points");
    double a[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    double b[3] = {0, 0, 0};
    for (std::size_t i = 0; i < y.size(); ++i) {
        double row[3] = {1.0, x1[i], x2[i]};
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) a[r][c] += row[r] * row[c];
            b[r] += row[r] * y[i];
        }
    }
    auto det3 = [](double m[3][3]) {
        return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
               m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    };
    double d = det3(a);
    require(std::fabs(d) > 1e-250, "plane_fit: degenerate design matrix");
    PlaneFit f;
    double sol[3];
    for (int k = 0; k < 3; ++k) {
        double m[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) m[r][c] = (c == k) ? b[r] : a[r][c];
        sol[k] = det3(m) / d;
    }
    f.b0 = sol[0];
    f.b1 = sol[1];
    f.b2 = sol[2];
    double ss = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        double r = y[i] - (f.b0 + f.b1 * x1[i] + f.b2 * x2[i]);
        ss += r * r;
    }
    f.rms = std::sqrt(ss / static_cast<double>(y.size()));
    return f;
}

} // namespace pk
