#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "parakernel/field.hpp"

namespace pk {

struct HolderOptions {
    std::int64_t exhaustive_limit = 4096; // switch to Monte Carlo above this many samples
    std::int64_t mc_pairs = 100000;
    std::uint64_t seed = 9001;
};

/// One sampled space-time pair: time separation, Chebyshev periodic space
/// separation, absolute value difference.
struct HolderSample {
    double dtime;
    double dspace;
    double dvalue;
};

/// Draws the pair set the seminorm estimator evaluates: all pairs when the
/// sample count is small, seeded Monte Carlo otherwise. Exposed so property
/// tests can re-evaluate the same pairs at several exponents.
inline std::vector<HolderSample> holder_sample_pairs(const std::vector<ScalarField>& slices,
                                                     const std::vector<double>& times,
                                                     const HolderOptions& opts = {}) {
    require(slices.size() == times.size(), "holder: one time per slice");
    if (slices.empty()) throw data_error("holder: insufficient data, no slices");
    const Grid& g = slices.front().grid;
    const std::int64_t nodes = g.size();
    const std::int64_t total = static_cast<std::int64_t>(slices.size()) * nodes;
    if (total < 2) throw data_error("holder: insufficient data, need at least 2 samples");

    auto sample_of = [&](std::int64_t s) {
        std::int64_t slice = s / nodes, node = s % nodes;
        return std::pair<std::int64_t, std::int64_t>(slice, node);
    };
    auto make = [&](std::int64_t sa, std::int64_t sb) {
        auto [ia, xa] = sample_of(sa);
        auto [ib, xb] = sample_of(sb);
        HolderSample h;
        h.dtime = std::fabs(times[static_cast<std::size_t>(ia)] - times[static_cast<std::size_t>(ib)]);
        h.dspace = g.periodic_distance_max(xa, xb);
        h.dvalue = std::fabs(slices[static_cast<std::size_t>(ia)][xa] -
                             slices[static_cast<std::size_t>(ib)][xb]);
        return h;
    };

    std::vector<HolderSample> out;
    if (total <= opts.exhaustive_limit) {
        out.reserve(static_cast<std::size_t>(total * (total - 1) / 2));
        for (std::int64_t sa = 0; sa < total; ++sa)
            for (std::int64_t sb = sa + 1; sb < total; ++sb) {
                HolderSample h = make(sa, sb);
                if (h.dtime == 0.0 && h.dspace == 0.0) continue;
                out.push_back(h);
            }
    } else {
        std::mt19937_64 rng(opts.seed);
        std::uniform_int_distribution<std::int64_t> pick(0, total - 1);
        out.reserve(static_cast<std::size_t>(opts.mc_pairs));
        for (std::int64_t k = 0; k < opts.mc_pairs; ++k) {
            std::int64_t sa = pick(rng), sb = pick(rng);
            if (sa == sb) continue;
            HolderSample h = make(sa, sb);
            if (h.dtime == 0.0 && h.dspace == 0.0) continue;
            out.push_back(h);
        }
    }
    return out;
}

inline double holder_ratio(const HolderSample& h, double beta) {
    return h.dvalue / (std::pow(h.dtime, beta) + std::pow(h.dspace, beta));
}

/// Discrete estimator of the space-time Hoelder seminorm
/// sup |f(t,x)-f(s,y)| / (|t-s|^beta + |x-y|^beta); a lower bound of the true
/// discrete supremum when sampled by Monte Carlo.
inline double holder_seminorm(const std::vector<ScalarField>& slices,
                              const std::vector<double>& times, double beta,
                              const HolderOptions& opts = {}) {
    require(beta > 0.0 && beta < 1.0, "holder: beta must lie in (0,1)");
    auto pairs = holder_sample_pairs(slices, times, opts);
    double sup = 0;
    for (const auto& h : pairs) sup = std::max(sup, holder_ratio(h, beta));
    return sup;
}

} // namespace pk
