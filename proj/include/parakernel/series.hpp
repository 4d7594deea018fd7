#pragma once

#include <memory>
#include <vector>

#include "parakernel/field.hpp"
#include "parakernel/grid.hpp"

namespace pk {

/// Uniformly time-sampled sequence of fields with shared storage. A reversed
/// view relabels node j as node M-j over the same duration, so the time
/// substitution theta = t - tau never copies slices.
template <class F>
class Series {
  public:
    Series() = default;
    Series(const TimeGrid& tg, std::vector<F> slices)
        : tg_(tg), data_(std::make_shared<const std::vector<F>>(std::move(slices))) {
        require(static_cast<int>(data_->size()) == tg.M + 1,
                "Series: need one slice per time node");
    }

    const TimeGrid& time_grid() const { return tg_; }
    int nodes() const { return tg_.M + 1; }
    double time_at(int j) const { return tg_.node(j); }
    bool reversed() const { return reversed_; }

    const F& at_node(int j) const {
        int idx = reversed_ ? tg_.M - j : j;
        return (*data_)[static_cast<std::size_t>(idx)];
    }

    /// Linear interpolation at an arbitrary time inside the grid.
    F sample(double t) const {
        double s = (t - tg_.t0) / tg_.dt();
        int j = static_cast<int>(std::floor(s));
        if (j < 0) j = 0;
        if (j >= tg_.M) j = tg_.M - 1;
        double w = s - j;
        if (w <= 0.0) return at_node(j);
        if (w >= 1.0) return at_node(j + 1);
        F out = at_node(j);
        out *= (1.0 - w);
        F hi = at_node(j + 1);
        hi *= w;
        out += hi;
        return out;
    }

    /// View with time running backwards, relabeled to [0, duration].
    Series time_reversed() const {
        Series r = *this;
        r.reversed_ = !reversed_;
        r.tg_ = TimeGrid(0.0, tg_.duration(), tg_.M);
        return r;
    }

  private:
    TimeGrid tg_{};
    std::shared_ptr<const std::vector<F>> data_;
    bool reversed_ = false;
};

using ScalarSeries = Series<ScalarField>;
using VectorSeries = Series<VectorField>;

} // namespace pk
