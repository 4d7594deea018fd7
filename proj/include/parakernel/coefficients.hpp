#pragma once

#include <cmath>
#include <vector>

#include "parakernel/series.hpp"
#include "parakernel/spectral.hpp"

namespace pk {

/// Space-time drift a (divergence-free) and potential b >= 0 for the operator
/// d_t - lap + a.grad + b. Values between sample times are linearly
/// interpolated. Declared sup bounds must dominate the measured maxima; the
/// stability rules quote them.
struct Coefficients {
    VectorSeries a;
    ScalarSeries b;
    double a_bound = 0; // declared sup of |a| (pointwise Euclidean)
    double b_bound = 0; // declared sup of b

    bool zero_drift() const { return a_bound == 0.0; }
    bool zero_potential() const { return b_bound == 0.0; }

    static Coefficients zero(const Grid& g, const TimeGrid& tg) {
        TimeGrid span(tg.t0, tg.t1, 1);
        std::vector<VectorField> av(2, VectorField(g));
        std::vector<ScalarField> bv(2, ScalarField(g));
        Coefficients c;
        c.a = VectorSeries(span, std::move(av));
        c.b = ScalarSeries(span, std::move(bv));
        return c;
    }

    /// Time-constant coefficients over [tg.t0, tg.t1].
    static Coefficients steady(const VectorField& a0, const ScalarField& b0,
                               const TimeGrid& tg) {
        TimeGrid span(tg.t0, tg.t1, 1);
        std::vector<VectorField> av(2, a0);
        std::vector<ScalarField> bv(2, b0);
        Coefficients c;
        c.a = VectorSeries(span, std::move(av));
        c.b = ScalarSeries(span, std::move(bv));
        c.measure();
        return c;
    }

    static Coefficients sampled(VectorSeries a_, ScalarSeries b_) {
        Coefficients c;
        c.a = std::move(a_);
        c.b = std::move(b_);
        c.measure();
        return c;
    }

    /// Sets the declared bounds to the measured maxima.
    void measure() {
        double am = 0, bm = 0;
        for (int j = 0; j < a.nodes(); ++j) am = std::max(am, a.at_node(j).max_norm());
        for (int j = 0; j < b.nodes(); ++j) bm = std::max(bm, b.at_node(j).max());
        a_bound = am;
        b_bound = std::max(bm, 0.0);
    }

    /// Invariants: b >= -1e-12 everywhere, discrete div a <= 1e-8 in L-inf at
    /// every sample time, declared bounds >= measured maxima.
    void validate(const SpectralPlan& plan) const {
        for (int j = 0; j < b.nodes(); ++j)
            if (b.at_node(j).min() < -1e-12)
                throw usage_error("Coefficients: potential b must be >= -1e-12");
        for (int j = 0; j < a.nodes(); ++j) {
            ScalarField div = plan.divergence(a.at_node(j));
            if (div.max_abs() > 1e-8)
                throw usage_error("Coefficients: drift must be discretely divergence-free");
        }
        double am = 0, bm = 0;
        for (int j = 0; j < a.nodes(); ++j) am = std::max(am, a.at_node(j).max_norm());
        for (int j = 0; j < b.nodes(); ++j) bm = std::max(bm, b.at_node(j).max());
        if (am > a_bound * (1 + 1e-12) + 1e-300 || bm > b_bound * (1 + 1e-12) + 1e-300)
            throw usage_error("Coefficients: declared bounds below measured maxima");
    }

    /// View for solves running in theta = t_end - t.
    Coefficients time_reversed() const {
        Coefficients c = *this;
        c.a = a.time_reversed();
        c.b = b.time_reversed();
        return c;
    }
};

} // namespace pk
