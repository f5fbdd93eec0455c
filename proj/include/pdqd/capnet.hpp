#pragma once

// Electrostatics of two capacitively coupled dots in the constant-interaction
// picture: charging energies, total energy of a charge configuration,
// ground-state occupation and addition (chemical) potentials.

#include <algorithm>
#include <cmath>
#include <compare>
#include <limits>
#include <string>
#include <utility>

#include "pdqd/error.hpp"
#include "pdqd/units.hpp"

namespace pdqd {

enum class Dot { left, right };

inline const char* to_string(Dot d) { return d == Dot::left ? "left" : "right"; }

/// Raw field set of a network; validated by CapacitanceNetwork.
struct NetworkParams {
    double c_sigma_left = 0.0;  // aF, total capacitance of the left dot
    double c_sigma_right = 0.0; // aF
    double c_m = 0.0;           // aF, interdot
    double c_gate_left = 0.0;   // aF, left plunger to left dot
    double c_gate_right = 0.0;  // aF
    double temperature_e = 120.0; // mK
};

/// Charging energies in meV.
struct ChargingEnergies {
    double e_c_left = 0.0;
    double e_c_right = 0.0;
    double e_c_m = 0.0;
};

/// Occupation (N, M) of the left and right dot.
struct ChargeState {
    int n_left = 0;
    int n_right = 0;

    auto operator<=>(const ChargeState&) const = default;
};

/// Immutable, validated two-dot capacitance network.
///
/// Only C_m^2 < C_L C_R is required for stability. The physical ordering
/// C_m <= min(C_L, C_R), which keeps e_c_m <= min(e_c_left, e_c_right), is
/// reported by is_physical() but not enforced.
class CapacitanceNetwork {
  public:
    explicit CapacitanceNetwork(const NetworkParams& p) : p_(p) {
        validate(p_);
        const double det = p_.c_sigma_left * p_.c_sigma_right - p_.c_m * p_.c_m;
        energies_.e_c_left = kChargeSquaredMeVaF * p_.c_sigma_right / det;
        energies_.e_c_right = kChargeSquaredMeVaF * p_.c_sigma_left / det;
        energies_.e_c_m = kChargeSquaredMeVaF * p_.c_m / det;
    }

    double c_sigma_left() const { return p_.c_sigma_left; }
    double c_sigma_right() const { return p_.c_sigma_right; }
    double c_m() const { return p_.c_m; }
    double c_gate_left() const { return p_.c_gate_left; }
    double c_gate_right() const { return p_.c_gate_right; }
    double temperature_e() const { return p_.temperature_e; }
    const NetworkParams& params() const { return p_; }
    const ChargingEnergies& energies() const { return energies_; }

    double c_sigma(Dot d) const { return d == Dot::left ? p_.c_sigma_left : p_.c_sigma_right; }
    double c_gate(Dot d) const { return d == Dot::left ? p_.c_gate_left : p_.c_gate_right; }

    bool is_physical() const { return p_.c_m <= std::min(p_.c_sigma_left, p_.c_sigma_right); }

    CapacitanceNetwork with_c_m(double c_m) const {
        NetworkParams q = p_;
        q.c_m = c_m;
        return CapacitanceNetwork(q);
    }

    CapacitanceNetwork with_temperature(double temperature_mk) const {
        NetworkParams q = p_;
        q.temperature_e = temperature_mk;
        return CapacitanceNetwork(q);
    }

    /// Left and right exchanged.
    CapacitanceNetwork mirrored() const {
        NetworkParams q = p_;
        std::swap(q.c_sigma_left, q.c_sigma_right);
        std::swap(q.c_gate_left, q.c_gate_right);
        return CapacitanceNetwork(q);
    }

    static void validate(const NetworkParams& p) {
        const auto fail = [](const std::string& msg) {
            throw Error(ErrorKind::validation, "network", msg);
        };
        const double vals[] = {p.c_sigma_left, p.c_sigma_right, p.c_m,
                               p.c_gate_left, p.c_gate_right, p.temperature_e};
        for (double v : vals) {
            if (!std::isfinite(v)) fail("non-finite field");
        }
        if (p.c_sigma_left <= 0.0 || p.c_sigma_right <= 0.0)
            fail("total capacitances must be positive");
        if (p.c_m < 0.0 || p.c_gate_left < 0.0 || p.c_gate_right < 0.0)
            fail("capacitances must be non-negative");
        if (p.c_m * p.c_m >= p.c_sigma_left * p.c_sigma_right)
            fail("c_m^2 >= c_sigma_left * c_sigma_right (merged-dot limit, energies diverge)");
        if (p.c_gate_left > p.c_sigma_left || p.c_gate_right > p.c_sigma_right)
            fail("gate capacitance exceeds total capacitance");
        if (p.temperature_e <= 0.0) fail("temperature_e must be positive");
    }

  private:
    NetworkParams p_;
    ChargingEnergies energies_;
};

inline ChargingEnergies charging_energies(const CapacitanceNetwork& net) { return net.energies(); }

/// Gate-induced charge (in units of e) on each dot: C_G V_G / e.
inline std::pair<double, double> induced_charge(const CapacitanceNetwork& net, double v_gl,
                                                double v_gr) {
    return {net.c_gate_left() * v_gl / kChargeAFV, net.c_gate_right() * v_gr / kChargeAFV};
}

namespace detail {

inline void require_state(const ChargeState& s) {
    if (s.n_left < 0 || s.n_right < 0)
        throw Error(ErrorKind::validation, "capnet", "negative occupation");
}

// U as the completed square 1/2 (N-n)^T E (N-n); identical to the expanded
// polynomial with the gate-induced term but better conditioned.
inline double energy_at(const ChargingEnergies& e, double n1, double n2, double x1, double x2) {
    const double d1 = n1 - x1;
    const double d2 = n2 - x2;
    return 0.5 * e.e_c_left * d1 * d1 + 0.5 * e.e_c_right * d2 * d2 + e.e_c_m * d1 * d2;
}

// mu_left(N1, N2) = U(N1, N2) - U(N1 - 1, N2) in closed form.
inline double mu_left(const ChargingEnergies& e, int n1, int n2, double x1, double x2) {
    return e.e_c_left * (n1 - 0.5 - x1) + e.e_c_m * (n2 - x2);
}

inline double mu_right(const ChargingEnergies& e, int n1, int n2, double x1, double x2) {
    return e.e_c_right * (n2 - 0.5 - x2) + e.e_c_m * (n1 - x1);
}

inline double min_eigenvalue(const ChargingEnergies& e) {
    const double mean = 0.5 * (e.e_c_left + e.e_c_right);
    const double half = 0.5 * (e.e_c_left - e.e_c_right);
    return mean - std::sqrt(half * half + e.e_c_m * e.e_c_m);
}

struct SearchResult {
    ChargeState state;
    double energy;
};

// Exact integer minimizer of the energy form, over {0..n_max}^2 when
// `bounded`, otherwise over all of Z^2. Candidates are restricted to the
// ellipse bound derived from the smallest eigenvalue, so the result equals an
// exhaustive lexicographic scan of the box.
inline SearchResult search_minimum(const ChargingEnergies& e, double x1, double x2, bool bounded,
                                   int n_max) {
    const auto start = [&](double v) {
        double r = std::round(v);
        if (bounded) r = std::clamp(r, 0.0, static_cast<double>(n_max));
        return static_cast<int>(r);
    };
    const int c1 = start(x1);
    const int c2 = start(x2);
    const double u0 = energy_at(e, c1, c2, x1, x2);
    const double radius = std::sqrt(2.0 * u0 / min_eigenvalue(e)) * (1.0 + 1e-9) + 1e-9;

    int i_lo = std::min(static_cast<int>(std::ceil(x1 - radius)), c1);
    int i_hi = std::max(static_cast<int>(std::floor(x1 + radius)), c1);
    int j_lo = std::min(static_cast<int>(std::ceil(x2 - radius)), c2);
    int j_hi = std::max(static_cast<int>(std::floor(x2 + radius)), c2);
    if (bounded) {
        i_lo = std::max(i_lo, 0);
        j_lo = std::max(j_lo, 0);
        i_hi = std::min(i_hi, n_max);
        j_hi = std::min(j_hi, n_max);
    }

    SearchResult best{{c1, c2}, std::numeric_limits<double>::infinity()};
    for (int i = i_lo; i <= i_hi; ++i) {
        for (int j = j_lo; j <= j_hi; ++j) {
            const double u = energy_at(e, i, j, x1, x2);
            if (u < best.energy) best = {{i, j}, u};
        }
    }
    return best;
}

} // namespace detail

/// Total electrostatic energy (meV) of configuration `s` at gate voltages (V).
///
/// U = 1/2 N1^2 E_C1 + 1/2 N2^2 E_C2 + N1 N2 E_Cm + f(V_GL, V_GR), with f the
/// gate-induced term; zero for (0,0) at zero gate voltage.
inline double total_energy(const CapacitanceNetwork& net, const ChargeState& s, double v_gl,
                           double v_gr) {
    detail::require_state(s);
    const auto [x1, x2] = induced_charge(net, v_gl, v_gr);
    return detail::energy_at(net.energies(), s.n_left, s.n_right, x1, x2);
}

struct GroundState {
    ChargeState state;
    /// True when the {0..n_max}^2 box cut off a lower-energy configuration.
    bool clipped = false;
};

inline constexpr int kDefaultMaxOccupation = 10;

/// argmin of total_energy over {0..n_max}^2, ties broken toward smaller
/// n_left, then smaller n_right.
inline GroundState ground_state(const CapacitanceNetwork& net, double v_gl, double v_gr,
                                int n_max = kDefaultMaxOccupation) {
    if (n_max < 1) throw Error(ErrorKind::validation, "ground_state", "n_max must be >= 1");
    const auto [x1, x2] = induced_charge(net, v_gl, v_gr);
    const auto boxed = detail::search_minimum(net.energies(), x1, x2, true, n_max);
    GroundState gs{boxed.state, false};
    const bool on_edge = boxed.state.n_left == 0 || boxed.state.n_right == 0 ||
                         boxed.state.n_left == n_max || boxed.state.n_right == n_max;
    if (on_edge) {
        const auto free = detail::search_minimum(net.energies(), x1, x2, false, n_max);
        gs.clipped = free.state != boxed.state;
    }
    return gs;
}

/// Addition potential mu_i(s) = U(s) - U(s - 1 on dot i), in meV.
inline double chemical_potential(const CapacitanceNetwork& net, const ChargeState& s, Dot dot,
                                 double v_gl, double v_gr) {
    detail::require_state(s);
    const int n = dot == Dot::left ? s.n_left : s.n_right;
    if (n < 1)
        throw Error(ErrorKind::validation, "chemical_potential",
                    std::string("removal from empty ") + to_string(dot) + " dot");
    const auto [x1, x2] = induced_charge(net, v_gl, v_gr);
    return dot == Dot::left ? detail::mu_left(net.energies(), s.n_left, s.n_right, x1, x2)
                            : detail::mu_right(net.energies(), s.n_left, s.n_right, x1, x2);
}

/// Interdot capacitance (aF) that produces coupling energy `e_c_m` (meV) for
/// the given total capacitances. Positive root of E C_m^2 + e^2 C_m - E C_L C_R = 0.
inline double interdot_capacitance_for_energy(double c_sigma_left, double c_sigma_right,
                                              double e_c_m) {
    if (!(e_c_m >= 0.0) || !std::isfinite(e_c_m))
        throw Error(ErrorKind::validation, "interdot_capacitance", "e_c_m must be >= 0");
    if (e_c_m == 0.0) return 0.0;
    const double e2 = kChargeSquaredMeVaF;
    const double prod = c_sigma_left * c_sigma_right;
    // Rationalized form avoids cancellation for small e_c_m.
    return 2.0 * e_c_m * prod / (e2 + std::sqrt(e2 * e2 + 4.0 * e_c_m * e_c_m * prod));
}

} // namespace pdqd
