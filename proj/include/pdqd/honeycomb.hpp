#pragma once

// Forward synthesis of parallel double-dot stability diagrams: analytic cell
// geometry, triple points, charge and conductance maps, coupling regime and
// single-dot Coulomb diamonds.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "pdqd/capnet.hpp"
#include "pdqd/error.hpp"
#include "pdqd/units.hpp"

namespace pdqd {

/// Measurable honeycomb dimensions, all in volts.
struct HoneycombGeometry {
    double dv_gl = 0.0;      // cell width along V_GL
    double dv_gr = 0.0;      // cell height along V_GR
    double dv_gl_m = 0.0;    // vertex splitting along V_GL
    double dv_gr_m = 0.0;    // vertex splitting along V_GR
    double delta_v_gl = 0.0; // bias-induced splitting along V_GL
    double delta_v_gr = 0.0;
    double bias = 0.0;       // source-drain bias that produced delta_v
};

/// Uniform sample grid: `count` points from `start` to `stop` inclusive.
struct GridAxis {
    double start = 0.0;
    double stop = 0.0;
    int count = 0;

    double step() const { return (stop - start) / (count - 1); }
    double at(int i) const { return start + step() * i; }
    bool operator==(const GridAxis&) const = default;
};

struct VoltageWindow {
    double v_gl_start = 0.0;
    double v_gl_stop = 0.0;
    double v_gr_start = 0.0;
    double v_gr_stop = 0.0;
};

struct Resolution {
    int n_gl = 0;
    int n_gr = 0;
};

/// Conductance sampled on a (V_GL, V_GR) grid. Row-major, rows indexed by V_GR.
struct ConductanceMap {
    GridAxis v_gl_axis;
    GridAxis v_gr_axis;
    std::vector<double> values;
    double bias = 0.0;

    int cols() const { return v_gl_axis.count; }
    int rows() const { return v_gr_axis.count; }
    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * cols() + col]; }
    double& at(int row, int col) { return values[static_cast<std::size_t>(row) * cols() + col]; }

    void validate() const {
        const auto fail = [](const std::string& m) { throw Error(ErrorKind::validation, "map", m); };
        if (v_gl_axis.count < 2 || v_gr_axis.count < 2) fail("axis counts must be >= 2");
        if (!(v_gl_axis.stop > v_gl_axis.start) || !(v_gr_axis.stop > v_gr_axis.start))
            fail("axis stop must exceed start");
        if (values.size() != static_cast<std::size_t>(v_gl_axis.count) * v_gr_axis.count)
            fail("value count does not match axes");
        for (double v : values) {
            if (!std::isfinite(v) || v < 0.0) fail("values must be finite and >= 0");
        }
        if (!std::isfinite(bias)) fail("bias must be finite");
    }
};

enum class RegimeLabel { weak, medium, strong };

inline const char* to_string(RegimeLabel r) {
    switch (r) {
    case RegimeLabel::weak:
        return "weak";
    case RegimeLabel::medium:
        return "medium";
    default:
        return "strong";
    }
}

/// Regime boundaries on the fractional splitting f.
inline constexpr double kWeakUpperSplitting = 0.3;
inline constexpr double kMediumUpperSplitting = 1.0;

struct CouplingRegime {
    RegimeLabel label = RegimeLabel::weak;
    double fractional_splitting = 0.0;
};

inline CouplingRegime regime_from_splitting(double f) {
    RegimeLabel label = RegimeLabel::strong;
    if (f < kWeakUpperSplitting) {
        label = RegimeLabel::weak;
    } else if (f < kMediumUpperSplitting) {
        label = RegimeLabel::medium;
    }
    return {label, f};
}

namespace detail {

inline void require_gates(const CapacitanceNetwork& net, const char* stage) {
    if (net.c_gate_left() <= 0.0 || net.c_gate_right() <= 0.0)
        throw Error(ErrorKind::validation, stage, "gate capacitances must be positive");
}

inline void require_window(const VoltageWindow& w, const char* stage) {
    const double v[] = {w.v_gl_start, w.v_gl_stop, w.v_gr_start, w.v_gr_stop};
    for (double x : v) {
        if (!std::isfinite(x)) throw Error(ErrorKind::validation, stage, "non-finite window");
    }
    if (!(w.v_gl_stop > w.v_gl_start) || !(w.v_gr_stop > w.v_gr_start))
        throw Error(ErrorKind::validation, stage, "window stop must exceed start");
}

inline void require_resolution(const Resolution& r, const char* stage) {
    if (r.n_gl < 2 || r.n_gr < 2)
        throw Error(ErrorKind::validation, stage, "resolution must be >= 2 per axis");
}

// Runs body(row) for every row, split into contiguous blocks over threads.
// Each row is written by exactly one worker, so output is thread-count independent.
template <class Body>
void for_each_row(int rows, unsigned threads, Body&& body) {
    if (threads <= 1 || rows < 2) {
        for (int r = 0; r < rows; ++r) body(r);
        return;
    }
    threads = std::min<unsigned>(threads, static_cast<unsigned>(rows));
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        const int lo = static_cast<int>(static_cast<long>(rows) * t / threads);
        const int hi = static_cast<int>(static_cast<long>(rows) * (t + 1) / threads);
        pool.emplace_back([lo, hi, &body] {
            for (int r = lo; r < hi; ++r) body(r);
        });
    }
    for (auto& th : pool) th.join();
}

// Offsets, in induced-charge units, of the two triple points of the pair
// whose lower-left cell is (0, 0).
struct PairOffsets {
    double ex, ey; // electron-like vertex
    double hx, hy; // hole-like vertex
};

inline PairOffsets pair_offsets(const ChargingEnergies& e) {
    const double det = e.e_c_left * e.e_c_right - e.e_c_m * e.e_c_m;
    // E (x, y) = (E1/2, E2/2)
    const double ex = 0.5 * e.e_c_left * e.e_c_right - 0.5 * e.e_c_m * e.e_c_right;
    const double ey = 0.5 * e.e_c_left * e.e_c_right - 0.5 * e.e_c_m * e.e_c_left;
    const double dx = e.e_c_m * (e.e_c_right - e.e_c_m) / det;
    const double dy = e.e_c_m * (e.e_c_left - e.e_c_m) / det;
    return {ex / det, ey / det, ex / det + dx, ey / det + dy};
}

} // namespace detail

/// Analytic honeycomb geometry for `net` at source-drain `bias` (V).
inline HoneycombGeometry cell_dimensions(const CapacitanceNetwork& net, double bias) {
    detail::require_gates(net, "cell_dimensions");
    if (!std::isfinite(bias)) throw Error(ErrorKind::validation, "cell_dimensions", "bias not finite");
    HoneycombGeometry g;
    g.dv_gl = kChargeAFV / net.c_gate_left();
    g.dv_gr = kChargeAFV / net.c_gate_right();
    g.dv_gl_m = g.dv_gl * net.c_m() / net.c_sigma_right();
    g.dv_gr_m = g.dv_gr * net.c_m() / net.c_sigma_left();
    g.delta_v_gl = std::abs(bias) * net.c_sigma_left() / net.c_gate_left();
    g.delta_v_gr = std::abs(bias) * net.c_sigma_right() / net.c_gate_right();
    g.bias = bias;
    return g;
}

/// f = dV_GL^m / dV_GL + dV_GR^m / dV_GR = C_m / C_R + C_m / C_L.
inline CouplingRegime classify_regime(const CapacitanceNetwork& net) {
    return regime_from_splitting(net.c_m() / net.c_sigma_right() + net.c_m() / net.c_sigma_left());
}

enum class VertexKind { electron, hole };

inline const char* to_string(VertexKind k) { return k == VertexKind::electron ? "electron" : "hole"; }

struct TriplePoint {
    double v_gl = 0.0;
    double v_gr = 0.0;
    VertexKind kind = VertexKind::electron;
    /// Lower-left cell (N, M) of the pair. The electron-like vertex joins
    /// (N,M), (N+1,M), (N,M+1); the hole-like one (N+1,M), (N,M+1), (N+1,M+1).
    ChargeState pair;
};

/// Triple points inside `window`, sorted by (v_gr, v_gl).
inline std::vector<TriplePoint> triple_points(const CapacitanceNetwork& net,
                                              const VoltageWindow& window) {
    detail::require_gates(net, "triple_points");
    detail::require_window(window, "triple_points");
    const auto off = detail::pair_offsets(net.energies());
    const double p_gl = kChargeAFV / net.c_gate_left();
    const double p_gr = kChargeAFV / net.c_gate_right();
    const int n_lo = std::max(0, static_cast<int>(std::floor(window.v_gl_start / p_gl)) - 2);
    const int n_hi = static_cast<int>(std::ceil(window.v_gl_stop / p_gl)) + 1;
    const int m_lo = std::max(0, static_cast<int>(std::floor(window.v_gr_start / p_gr)) - 2);
    const int m_hi = static_cast<int>(std::ceil(window.v_gr_stop / p_gr)) + 1;

    std::vector<TriplePoint> out;
    const auto inside = [&](double x, double y) {
        return x >= window.v_gl_start && x <= window.v_gl_stop && y >= window.v_gr_start &&
               y <= window.v_gr_stop;
    };
    for (int n = n_lo; n <= n_hi; ++n) {
        for (int m = m_lo; m <= m_hi; ++m) {
            const TriplePoint e{(n + off.ex) * p_gl, (m + off.ey) * p_gr, VertexKind::electron, {n, m}};
            const TriplePoint h{(n + off.hx) * p_gl, (m + off.hy) * p_gr, VertexKind::hole, {n, m}};
            if (inside(e.v_gl, e.v_gr)) out.push_back(e);
            if (inside(h.v_gl, h.v_gr)) out.push_back(h);
        }
    }
    std::sort(out.begin(), out.end(), [](const TriplePoint& a, const TriplePoint& b) {
        if (a.v_gr != b.v_gr) return a.v_gr < b.v_gr;
        if (a.v_gl != b.v_gl) return a.v_gl < b.v_gl;
        return a.kind < b.kind;
    });
    return out;
}

/// Window spanning `cells` periods per axis, centred on the midpoint of the
/// vertex pair with lower-left cell (n_center, n_center).
inline VoltageWindow window_for_cells(const CapacitanceNetwork& net, double cells,
                                      int n_center = kDefaultMaxOccupation / 2) {
    detail::require_gates(net, "window_for_cells");
    if (!(cells > 0.0)) throw Error(ErrorKind::validation, "window_for_cells", "cells must be > 0");
    const auto off = detail::pair_offsets(net.energies());
    const double p_gl = kChargeAFV / net.c_gate_left();
    const double p_gr = kChargeAFV / net.c_gate_right();
    const double cx = (n_center + 0.5 * (off.ex + off.hx)) * p_gl;
    const double cy = (n_center + 0.5 * (off.ey + off.hy)) * p_gr;
    return {cx - 0.5 * cells * p_gl, cx + 0.5 * cells * p_gl, cy - 0.5 * cells * p_gr,
            cy + 0.5 * cells * p_gr};
}

struct ChargeMap {
    GridAxis v_gl_axis;
    GridAxis v_gr_axis;
    std::vector<ChargeState> states; // row-major, rows indexed by V_GR
    std::size_t clipped_pixels = 0;  // pixels where the occupation box was active

    int cols() const { return v_gl_axis.count; }
    int rows() const { return v_gr_axis.count; }
    const ChargeState& at(int row, int col) const {
        return states[static_cast<std::size_t>(row) * cols() + col];
    }
};

struct SynthesisOptions {
    int n_max = kDefaultMaxOccupation;
    unsigned threads = 1;
};

/// Per-pixel ground state over `window`.
inline ChargeMap charge_map(const CapacitanceNetwork& net, const VoltageWindow& window,
                            const Resolution& res, const SynthesisOptions& opt = {}) {
    detail::require_window(window, "charge_map");
    detail::require_resolution(res, "charge_map");
    ChargeMap m;
    m.v_gl_axis = {window.v_gl_start, window.v_gl_stop, res.n_gl};
    m.v_gr_axis = {window.v_gr_start, window.v_gr_stop, res.n_gr};
    m.states.resize(static_cast<std::size_t>(res.n_gl) * res.n_gr);
    std::vector<std::size_t> clipped_rows(static_cast<std::size_t>(res.n_gr), 0);
    detail::for_each_row(res.n_gr, opt.threads, [&](int r) {
        const double vgr = m.v_gr_axis.at(r);
        for (int c = 0; c < res.n_gl; ++c) {
            const auto gs = ground_state(net, m.v_gl_axis.at(c), vgr, opt.n_max);
            m.states[static_cast<std::size_t>(r) * res.n_gl + c] = gs.state;
            if (gs.clipped) ++clipped_rows[static_cast<std::size_t>(r)];
        }
    });
    for (auto n : clipped_rows) m.clipped_pixels += n;
    return m;
}

/// Thermally broadened transport window for a level at mu (meV) with
/// source-drain window [-e|bias|, 0]:
///   W = cosh^2(E/4kT) / (cosh(mu/2kT) cosh((mu + E)/2kT)),  E = e|bias|.
/// This is the Fermi-function difference normalized to unit peak; it reduces to
/// cosh^-2(mu/2kT) at zero bias and has its half maxima at the window edges.
inline double transport_window(double mu_mev, double bias_v, double kt_mev) {
    const double e_bias = volts_to_mev(std::abs(bias_v));
    const auto log_cosh = [](double z) {
        const double a = std::abs(z);
        return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
    };
    const double two_kt = 2.0 * kt_mev;
    const double lw = 2.0 * log_cosh(e_bias / (2.0 * two_kt)) - log_cosh(mu_mev / two_kt) -
                      log_cosh((mu_mev + e_bias) / two_kt);
    return std::exp(lw);
}

/// Parallel-transport conductance map: each dot contributes g * W(mu) for its
/// addition potentials adjacent to the local ground state; contributions add.
inline ConductanceMap conductance_map(const CapacitanceNetwork& net, const VoltageWindow& window,
                                      const Resolution& res, double bias, double g_left = 1.0,
                                      double g_right = 1.0, const SynthesisOptions& opt = {}) {
    detail::require_window(window, "conductance_map");
    detail::require_resolution(res, "conductance_map");
    if (!std::isfinite(bias) || !std::isfinite(g_left) || !std::isfinite(g_right))
        throw Error(ErrorKind::validation, "conductance_map", "bias and scales must be finite");
    if (g_left < 0.0 || g_right < 0.0)
        throw Error(ErrorKind::validation, "conductance_map", "conductance scales must be >= 0");
    if (!(net.temperature_e() > 0.0))
        throw Error(ErrorKind::validation, "conductance_map", "temperature must be positive");

    ConductanceMap m;
    m.v_gl_axis = {window.v_gl_start, window.v_gl_stop, res.n_gl};
    m.v_gr_axis = {window.v_gr_start, window.v_gr_stop, res.n_gr};
    m.bias = bias;
    m.values.assign(static_cast<std::size_t>(res.n_gl) * res.n_gr, 0.0);
    const double kt = thermal_energy_mev(net.temperature_e());
    const auto& e = net.energies();

    detail::for_each_row(res.n_gr, opt.threads, [&](int r) {
        const double vgr = m.v_gr_axis.at(r);
        for (int c = 0; c < res.n_gl; ++c) {
            const double vgl = m.v_gl_axis.at(c);
            const auto gs = ground_state(net, vgl, vgr, opt.n_max);
            const auto [x1, x2] = induced_charge(net, vgl, vgr);
            const int n = gs.state.n_left;
            const int k = gs.state.n_right;
            double g = 0.0;
            if (n >= 1) g += g_left * transport_window(detail::mu_left(e, n, k, x1, x2), bias, kt);
            g += g_left * transport_window(detail::mu_left(e, n + 1, k, x1, x2), bias, kt);
            if (k >= 1) g += g_right * transport_window(detail::mu_right(e, n, k, x1, x2), bias, kt);
            g += g_right * transport_window(detail::mu_right(e, n, k + 1, x1, x2), bias, kt);
            m.values[static_cast<std::size_t>(r) * res.n_gl + c] = g;
        }
    });
    return m;
}

// ---------------------------------------------------------------------------
// Single-dot Coulomb diamonds.

struct PlanePoint {
    double v_gate = 0.0; // V
    double v_bias = 0.0; // V
};

struct CoulombDiamond {
    int occupation = 0;
    /// left, top, right, bottom
    std::array<PlanePoint, 4> vertices;
};

/// Bias convention of the diamond output.
inline constexpr const char* kDiamondBiasConvention =
    "source-referenced bias, drain grounded; V_bias is the source potential";

struct DiamondSet {
    std::vector<CoulombDiamond> diamonds;
    double gate_period = 0.0;      // V, e / c_gate
    double half_height = 0.0;      // V, e / c_sigma
    double addition_energy = 0.0;  // meV, e^2 / c_sigma
    double lever_arm = 0.0;        // c_gate / c_sigma
    double slope_rising = 0.0;     // dV_bias/dV_gate, +c_gate / (c_sigma - c_source)
    /// -c_gate / c_source; empty when c_source = 0 (that edge is vertical).
    std::optional<double> slope_falling;
    std::string bias_convention = kDiamondBiasConvention;
};

/// Blockade diamonds for occupations 1..n_diamonds of a single dot.
inline DiamondSet coulomb_diamonds(double c_gate, double c_source, double c_sigma, int n_diamonds) {
    const auto fail = [](const std::string& m) {
        throw Error(ErrorKind::validation, "coulomb_diamonds", m);
    };
    if (!(c_gate > 0.0) || !(c_gate <= c_sigma)) fail("require 0 < c_gate <= c_sigma");
    if (!(c_source >= 0.0) || !(c_source < c_sigma)) fail("require 0 <= c_source < c_sigma");
    if (n_diamonds < 1) fail("n_diamonds must be >= 1");

    DiamondSet set;
    set.gate_period = kChargeAFV / c_gate;
    set.half_height = kChargeAFV / c_sigma;
    set.addition_energy = kChargeSquaredMeVaF / c_sigma;
    set.lever_arm = c_gate / c_sigma;
    set.slope_rising = c_gate / (c_sigma - c_source);
    if (c_source > 0.0) set.slope_falling = -c_gate / c_source;

    const double shift = c_source * set.half_height / c_gate;
    for (int n = 1; n <= n_diamonds; ++n) {
        CoulombDiamond d;
        d.occupation = n;
        const double left = (n - 0.5) * set.gate_period;
        const double right = (n + 0.5) * set.gate_period;
        d.vertices = {{{left, 0.0},
                       {right - shift, set.half_height},
                       {right, 0.0},
                       {left + shift, -set.half_height}}};
        set.diamonds.push_back(d);
    }
    return set;
}

} // namespace pdqd
