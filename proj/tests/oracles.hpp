#pragma once

// Reference implementations used only by tests. Written from the
// capacitance-matrix picture, without the library's closed forms.

#include <array>
#include <cmath>
#include <limits>
#include <utility>

namespace oracle {

constexpr double kE = 1.602176634e-19; // C
constexpr double kAtto = 1e-18;

// Inverse of the 2x2 capacitance matrix [[C_L, -C_m], [-C_m, C_R]] (aF), in 1/F.
inline std::array<double, 4> inverse_capacitance(double cl, double cr, double cm) {
    const double a = cl * kAtto, b = -cm * kAtto, c = -cm * kAtto, d = cr * kAtto;
    const double det = a * d - b * c;
    return {d / det, -b / det, -c / det, a / det};
}

// Electrostatic energy in meV of island charges q = e N - C_G V.
inline double energy_mev(double cl, double cr, double cm, double cgl, double cgr, int n1, int n2,
                         double vgl, double vgr) {
    const auto inv = inverse_capacitance(cl, cr, cm);
    const double q1 = kE * n1 - cgl * kAtto * vgl;
    const double q2 = kE * n2 - cgr * kAtto * vgr;
    const double joules = 0.5 * (q1 * (inv[0] * q1 + inv[1] * q2) + q2 * (inv[2] * q1 + inv[3] * q2));
    return joules / kE * 1e3;
}

// Charging energies (meV) from energy differences of the matrix form.
struct Energies {
    double e1, e2, em;
};

inline Energies energies(double cl, double cr, double cm) {
    const auto u = [&](int a, int b) { return energy_mev(cl, cr, cm, 0, 0, a, b, 0, 0); };
    return {u(2, 0) - 2 * u(1, 0), u(0, 2) - 2 * u(0, 1), u(1, 1) - u(1, 0) - u(0, 1)};
}

// Exhaustive ground state over {0..n_max}^2, first strict minimum in
// (n_left, n_right) lexicographic order.
inline std::pair<int, int> brute_ground_state(double cl, double cr, double cm, double cgl, double cgr,
                                              double vgl, double vgr, int n_max = 10) {
    std::pair<int, int> best{0, 0};
    double best_u = std::numeric_limits<double>::infinity();
    for (int a = 0; a <= n_max; ++a) {
        for (int b = 0; b <= n_max; ++b) {
            const double u = energy_mev(cl, cr, cm, cgl, cgr, a, b, vgl, vgr);
            if (u < best_u) {
                best_u = u;
                best = {a, b};
            }
        }
    }
    return best;
}

// C_m giving coupling energy target (meV), by bisection on (0, sqrt(C_L C_R)).
inline double bisect_c_m(double cl, double cr, double target) {
    double lo = 0.0, hi = std::sqrt(cl * cr) * (1 - 1e-12);
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (energies(cl, cr, mid).em < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Gate voltages where three configurations are degenerate. Energy differences
// are affine in (V_GL, V_GR), so three evaluations fix each plane.
inline std::pair<double, double> degeneracy_point(double cl, double cr, double cm, double cgl, double cgr,
                                                  std::pair<int, int> a, std::pair<int, int> b,
                                                  std::pair<int, int> c) {
    const auto diff = [&](std::pair<int, int> s, std::pair<int, int> t, double x, double y) {
        return energy_mev(cl, cr, cm, cgl, cgr, s.first, s.second, x, y) -
               energy_mev(cl, cr, cm, cgl, cgr, t.first, t.second, x, y);
    };
    const double h = 1.0;
    const auto plane = [&](std::pair<int, int> s, std::pair<int, int> t) {
        const double f0 = diff(s, t, 0, 0);
        return std::array<double, 3>{(diff(s, t, h, 0) - f0) / h, (diff(s, t, 0, h) - f0) / h, f0};
    };
    const auto p = plane(a, b);
    const auto q = plane(a, c);
    const double det = p[0] * q[1] - p[1] * q[0];
    return {(-p[2] * q[1] + p[1] * q[2]) / det, (-p[0] * q[2] + p[2] * q[0]) / det};
}

} // namespace oracle
