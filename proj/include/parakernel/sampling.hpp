#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "parakernel/field.hpp"

namespace pk {

/// Analytic or seeded-random field descriptor. Descriptors are grid-free:
/// sampling the same descriptor on refined grids yields samples of one and
/// the same continuum function, which is what refinement studies rely on.
struct FieldSpec {
    enum class Kind { constant, trig, gaussian, random };
    Kind kind = Kind::constant;
    double amplitude = 1.0;

    std::array<int, 3> mode{1, 0, 0};      // trig
    double phase = 0.0;                    // trig
    std::array<double, 3> center{0, 0, 0}; // gaussian
    double sigma = 0.1;                    // gaussian
    std::uint64_t seed = 0;                // random
    int kmax = 2;                          // random band limit per axis

    static FieldSpec constant(double value) {
        FieldSpec s;
        s.kind = Kind::constant;
        s.amplitude = value;
        return s;
    }
    static FieldSpec trig(double amp, std::array<int, 3> m, double ph = 0.0) {
        FieldSpec s;
        s.kind = Kind::trig;
        s.amplitude = amp;
        s.mode = m;
        s.phase = ph;
        return s;
    }
    static FieldSpec gaussian(double amp, double sig, std::array<double, 3> c) {
        FieldSpec s;
        s.kind = Kind::gaussian;
        s.amplitude = amp;
        s.sigma = sig;
        s.center = c;
        return s;
    }
    static FieldSpec random(std::uint64_t seed_, int kmax_, double amp) {
        FieldSpec s;
        s.kind = Kind::random;
        s.seed = seed_;
        s.kmax = kmax_;
        s.amplitude = amp;
        return s;
    }

    /// Grammar: "constant V" | "trig AMP m1..mn [PHASE]" |
    /// "gaussian AMP SIGMA c1..cn" | "random SEED KMAX AMP".
    static FieldSpec parse(const std::string& text, int n);
};

inline FieldSpec FieldSpec::parse(const std::string& text, int n) {
    std::istringstream in(text);
    std::string kind;
    in >> kind;
    auto need = [&](bool ok, const std::string& what) {
        if (!ok) throw usage_error("field descriptor '" + text + "': expected " + what);
    };
    if (kind == "constant") {
        double v;
        need(static_cast<bool>(in >> v), "constant VALUE");
        return constant(v);
    }
    if (kind == "trig") {
        double amp;
        std::array<int, 3> m{0, 0, 0};
        need(static_cast<bool>(in >> amp), "trig AMP");
        for (int a = 0; a < n; ++a) need(static_cast<bool>(in >> m[a]), "trig modes");
        double ph = 0.0;
        in >> ph;
        return trig(amp, m, ph);
    }
    if (kind == "gaussian") {
        double amp, sig;
        std::array<double, 3> c{0, 0, 0};
        need(static_cast<bool>(in >> amp >> sig), "gaussian AMP SIGMA");
        for (int a = 0; a < n; ++a) need(static_cast<bool>(in >> c[a]), "gaussian center");
        return gaussian(amp, sig, c);
    }
    if (kind == "random") {
        std::uint64_t seed;
        int kmax;
        double amp;
        need(static_cast<bool>(in >> seed >> kmax >> amp), "random SEED KMAX AMP");
        return random(seed, kmax, amp);
    }
    throw usage_error("field descriptor '" + text + "': unknown kind '" + kind + "'");
}

namespace detail {

/// Canonical half of the band-limited mode lattice (first nonzero index
/// positive), fixed iteration order for seed-stable coefficients.
inline std::vector<std::array<int, 3>> half_lattice(int n, int kmax) {
    std::vector<std::array<int, 3>> modes;
    int lo1 = -kmax, hi1 = kmax;
    int lo2 = (n >= 2) ? -kmax : 0, hi2 = (n >= 2) ? kmax : 0;
    int lo3 = (n >= 3) ? -kmax : 0, hi3 = (n >= 3) ? kmax : 0;
    for (int m1 = lo1; m1 <= hi1; ++m1)
        for (int m2 = lo2; m2 <= hi2; ++m2)
            for (int m3 = lo3; m3 <= hi3; ++m3) {
                std::array<int, 3> m{m1, m2, m3};
                int first = 0;
                for (int a = 0; a < n; ++a)
                    if (m[a] != 0) { first = m[a]; break; }
                if (first > 0) modes.push_back(m);
            }
    return modes;
}

/// Evaluates sum over modes of Re(c_m e^{i k.x}) on all nodes via per-axis
/// phase tables; exact per node, independent of grid resolution.
template <class CoefAt>
void synthesize(const Grid& g, const std::vector<std::array<int, 3>>& modes, CoefAt coef,
                int component, std::vector<ScalarField>& out) {
    const int N = g.N;
    const int kmax_abs = [&] {
        int m = 0;
        for (const auto& mm : modes)
            for (int a = 0; a < g.n; ++a) m = std::max(m, std::abs(mm[a]));
        return m;
    }();
    // phases[a][m + kmax_abs][i] = e^{i 2 pi m i / N}
    std::vector<std::vector<std::complex<double>>> phases(
        static_cast<std::size_t>(2 * kmax_abs + 1), std::vector<std::complex<double>>(N));
    for (int m = -kmax_abs; m <= kmax_abs; ++m)
        for (int i = 0; i < N; ++i) {
            double th = 2.0 * M_PI * m * i / N;
            phases[static_cast<std::size_t>(m + kmax_abs)][static_cast<std::size_t>(i)] =
                std::complex<double>(std::cos(th), std::sin(th));
        }
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        const auto& m = modes[mi];
        std::complex<double> c = coef(mi, component);
        if (c == std::complex<double>(0, 0)) continue;
        for (std::int64_t idx = 0; idx < g.size(); ++idx) {
            auto ci = g.decompose(idx);
            std::complex<double> ph(1, 0);
            for (int a = 0; a < g.n; ++a)
                ph *= phases[static_cast<std::size_t>(m[a] + kmax_abs)]
                            [static_cast<std::size_t>(ci[a])];
            out[static_cast<std::size_t>(component)][idx] += 2.0 * std::real(c * ph);
        }
    }
}

} // namespace detail

/// Node-exact evaluation of a descriptor. Random fields are deterministic per
/// seed and bitwise reproducible.
inline ScalarField sample_field(const Grid& g, const FieldSpec& spec) {
    ScalarField f(g);
    switch (spec.kind) {
    case FieldSpec::Kind::constant:
        for (auto& x : f.v) x = spec.amplitude;
        return f;
    case FieldSpec::Kind::trig: {
        for (std::int64_t i = 0; i < g.size(); ++i) {
            auto x = g.coords(i);
            double th = spec.phase;
            for (int a = 0; a < g.n; ++a) th += 2.0 * M_PI * spec.mode[a] * x[a] / g.L;
            f[i] = spec.amplitude * std::cos(th);
        }
        return f;
    }
    case FieldSpec::Kind::gaussian: {
        require(spec.sigma > 0.0, "invalid descriptor: gaussian sigma must be positive");
        for (int a = 0; a < g.n; ++a)
            require(spec.center[a] >= 0.0 && spec.center[a] < g.L,
                    "invalid descriptor: gaussian center outside box");
        const double inv2s2 = 1.0 / (2.0 * spec.sigma * spec.sigma);
        for (std::int64_t i = 0; i < g.size(); ++i) {
            auto x = g.coords(i);
            double r2 = 0;
            for (int a = 0; a < g.n; ++a) {
                double d = g.periodic_delta(x[a], spec.center[a]);
                r2 += d * d;
            }
            f[i] = spec.amplitude * std::exp(-r2 * inv2s2);
        }
        return f;
    }
    case FieldSpec::Kind::random: {
        require(spec.kmax >= 1, "invalid descriptor: random kmax must be >= 1");
        auto modes = detail::half_lattice(g.n, spec.kmax);
        std::mt19937_64 rng(spec.seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<std::complex<double>> coefs(modes.size());
        const double scale = spec.amplitude / std::sqrt(2.0 * modes.size());
        for (auto& c : coefs) {
            double re = gauss(rng), im = gauss(rng);
            c = std::complex<double>(re, im) * scale;
        }
        std::vector<ScalarField> out(1, ScalarField(g));
        detail::synthesize(
            g, modes, [&](std::size_t mi, int) { return coefs[mi]; }, 0, out);
        return out[0];
    }
    }
    throw usage_error("invalid descriptor");
}

/// Band-limited seeded random vector field with analytically divergence-free
/// modes (each Fourier coefficient projected orthogonal to its wavevector).
/// Grid-free like the scalar sampler. In one dimension the projection leaves
/// only the (excluded) mean, so the result is zero.
inline VectorField sample_divfree_vector(const Grid& g, std::uint64_t seed, int kmax,
                                         double amp) {
    require(kmax >= 1, "invalid descriptor: random kmax must be >= 1");
    auto modes = detail::half_lattice(g.n, kmax);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double scale = amp / std::sqrt(2.0 * modes.size());
    std::vector<std::array<std::complex<double>, 3>> coefs(modes.size());
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        std::array<std::complex<double>, 3> c{{{0, 0}, {0, 0}, {0, 0}}};
        for (int a = 0; a < g.n; ++a) {
            double re = gauss(rng), im = gauss(rng);
            c[static_cast<std::size_t>(a)] = std::complex<double>(re, im) * scale;
        }
        // remove the component parallel to k
        double k2 = 0;
        std::array<double, 3> k{0, 0, 0};
        for (int a = 0; a < g.n; ++a) {
            k[static_cast<std::size_t>(a)] = 2.0 * M_PI * modes[mi][a] / g.L;
            k2 += k[static_cast<std::size_t>(a)] * k[static_cast<std::size_t>(a)];
        }
        std::complex<double> kdotc(0, 0);
        for (int a = 0; a < g.n; ++a) kdotc += k[static_cast<std::size_t>(a)] * c[static_cast<std::size_t>(a)];
        for (int a = 0; a < g.n; ++a)
            c[static_cast<std::size_t>(a)] -= k[static_cast<std::size_t>(a)] * kdotc / k2;
        coefs[mi] = c;
    }
    VectorField u(g);
    std::vector<ScalarField> out;
    for (int a = 0; a < g.n; ++a) out.push_back(ScalarField(g));
    for (int a = 0; a < g.n; ++a)
        detail::synthesize(
            g, modes,
            [&](std::size_t mi, int comp) { return coefs[mi][static_cast<std::size_t>(comp)]; },
            a, out);
    for (int a = 0; a < g.n; ++a) u[a] = out[static_cast<std::size_t>(a)];
    return u;
}

} // namespace pk
