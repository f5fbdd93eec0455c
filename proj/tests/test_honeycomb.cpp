#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include "oracles.hpp"
#include "pdqd/honeycomb.hpp"

using namespace pdqd;

namespace {

CapacitanceNetwork reference_device(double c_m = 25.0) { return CapacitanceNetwork({79.8, 100.4, c_m, 1.84, 3.0, 120.0}); }

// Number of distinct neighbour states of every cell that does not touch the map border.
std::map<ChargeState, std::set<ChargeState>> interior_neighbours(const ChargeMap& m) {
    std::map<ChargeState, std::set<ChargeState>> nb;
    std::set<ChargeState> on_border;
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) {
            const auto& s = m.at(r, c);
            if (r == 0 || c == 0 || r == m.rows() - 1 || c == m.cols() - 1) on_border.insert(s);
            if (c + 1 < m.cols() && m.at(r, c + 1) != s) {
                nb[s].insert(m.at(r, c + 1));
                nb[m.at(r, c + 1)].insert(s);
            }
            if (r + 1 < m.rows() && m.at(r + 1, c) != s) {
                nb[s].insert(m.at(r + 1, c));
                nb[m.at(r + 1, c)].insert(s);
            }
        }
    }
    for (const auto& s : on_border) nb.erase(s);
    return nb;
}

// Mean of the six vertices of cell (n, m).
std::pair<double, double> cell_centre(const CapacitanceNetwork& net, int n, int m) {
    double sx = 0, sy = 0;
    int count = 0;
    for (const auto& t : triple_points(net, {0, 20 * kChargeAFV / net.c_gate_left(), 0,
                                            20 * kChargeAFV / net.c_gate_right()})) {
        const int a = t.pair.n_left, b = t.pair.n_right;
        const bool corner = t.kind == VertexKind::electron
                                ? (a == n && b == m) || (a == n - 1 && b == m) || (a == n && b == m - 1)
                                : (a == n - 1 && b == m - 1) || (a == n - 1 && b == m) || (a == n && b == m - 1);
        if (corner) {
            sx += t.v_gl;
            sy += t.v_gr;
            ++count;
        }
    }
    EXPECT_EQ(count, 6);
    return {sx / count, sy / count};
}

} // namespace

TEST(CellDimensions, GatePeriodFromGateCapacitance) {
    const auto g = cell_dimensions(reference_device(), 0.0);
    EXPECT_NEAR(g.dv_gl, 0.0871, 1e-4);
    EXPECT_NEAR(g.dv_gr, 0.0534, 1e-4);
    EXPECT_EQ(g.delta_v_gl, 0.0);
    EXPECT_EQ(g.delta_v_gr, 0.0);
}

TEST(CellDimensions, DecoupledDotsHaveNoSplitting) {
    const auto g = cell_dimensions(reference_device(0.0), 3e-4);
    EXPECT_EQ(g.dv_gl_m, 0.0);
    EXPECT_EQ(g.dv_gr_m, 0.0);
}

TEST(CellDimensions, SplittingAndBiasWidthForLeftGateCm) {
    const auto g = cell_dimensions(reference_device(30.1), 3e-4);
    EXPECT_NEAR(g.dv_gl_m, 0.0261, 2e-4);
    EXPECT_NEAR(g.delta_v_gl, 0.013, 2e-4);
    EXPECT_NEAR(g.delta_v_gl, 3e-4 * 79.8 / 1.84, 1e-15);
}

TEST(TriplePoints, MatchDegeneracyOracle) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 20; ++k) {
        const double cl = 50 + 100 * u(rng), cr = 50 + 100 * u(rng);
        const double cm = 0.8 * std::min(cl, cr) * u(rng);
        const double gl = 1 + 3 * u(rng), gr = 1 + 3 * u(rng);
        const CapacitanceNetwork net({cl, cr, cm, gl, gr});
        const auto tps = triple_points(net, window_for_cells(net, 3.0));
        ASSERT_GE(tps.size(), 8u);
        for (const auto& t : tps) {
            const int n = t.pair.n_left, m = t.pair.n_right;
            const auto ref = t.kind == VertexKind::electron
                                 ? oracle::degeneracy_point(cl, cr, cm, gl, gr, {n, m}, {n + 1, m}, {n, m + 1})
                                 : oracle::degeneracy_point(cl, cr, cm, gl, gr, {n + 1, m}, {n, m + 1},
                                                            {n + 1, m + 1});
            EXPECT_NEAR(t.v_gl, ref.first, 1e-9);
            EXPECT_NEAR(t.v_gr, ref.second, 1e-9);
        }
    }
}

TEST(TriplePoints, CoincideWithoutCoupling) {
    const auto net = reference_device(0.0);
    const auto tps = triple_points(net, window_for_cells(net, 3.0));
    std::map<ChargeState, std::vector<TriplePoint>> pairs;
    for (const auto& t : tps) pairs[t.pair].push_back(t);
    int complete = 0;
    for (const auto& [key, v] : pairs) {
        if (v.size() != 2) continue;
        ++complete;
        EXPECT_NEAR(v[0].v_gl, v[1].v_gl, 1e-12);
        EXPECT_NEAR(v[0].v_gr, v[1].v_gr, 1e-12);
    }
    EXPECT_GE(complete, 4);
}

TEST(TriplePoints, PairSeparationRelatesToBoundaryStagger) {
    // The electron->hole separation (sx, sy), in cell fractions, and the stagger
    // r = dV^m/dV of the boundaries obey r_L = sx / (1 - sy), r_R = sy / (1 - sx).
    const auto net = reference_device();
    const auto g = cell_dimensions(net, 0.0);
    const auto tps = triple_points(net, window_for_cells(net, 3.0));
    std::map<ChargeState, std::pair<TriplePoint, TriplePoint>> pairs;
    for (const auto& t : tps) (t.kind == VertexKind::electron ? pairs[t.pair].first : pairs[t.pair].second) = t;
    const auto& [e, h] = pairs.at({5, 5});
    const double sx = (h.v_gl - e.v_gl) / g.dv_gl;
    const double sy = (h.v_gr - e.v_gr) / g.dv_gr;
    EXPECT_GT(sx, 0.0);
    EXPECT_GT(sy, 0.0);
    EXPECT_NEAR(sx / (1 - sy), g.dv_gl_m / g.dv_gl, 1e-12);
    EXPECT_NEAR(sy / (1 - sx), g.dv_gr_m / g.dv_gr, 1e-12);
    // lower-left vertex is the electron-like one
    EXPECT_LT(e.v_gl, h.v_gl);
    EXPECT_LT(e.v_gr, h.v_gr);
}

TEST(TriplePoints, DoublingGateCapacitancesHalvesPeriods) {
    const auto a = reference_device();
    const CapacitanceNetwork b({79.8, 100.4, 25.0, 3.68, 6.0});
    const auto ga = cell_dimensions(a, 0.0), gb = cell_dimensions(b, 0.0);
    EXPECT_NEAR(gb.dv_gl, 0.5 * ga.dv_gl, 1e-15);
    EXPECT_NEAR(gb.dv_gr, 0.5 * ga.dv_gr, 1e-15);
    const auto ta = triple_points(a, {0, 1, 0, 1});
    const auto tb = triple_points(b, {0, 0.5, 0, 0.5});
    ASSERT_EQ(ta.size(), tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) {
        EXPECT_NEAR(tb[i].v_gl, 0.5 * ta[i].v_gl, 1e-12);
        EXPECT_NEAR(tb[i].v_gr, 0.5 * ta[i].v_gr, 1e-12);
    }
}

TEST(TriplePoints, EmptyForTinyWindow) {
    const auto net = reference_device();
    const auto w = window_for_cells(net, 1.0);
    const double cx = 0.5 * (w.v_gl_start + w.v_gl_stop) - 0.45 * cell_dimensions(net, 0).dv_gl;
    EXPECT_TRUE(triple_points(net, {cx, cx + 1e-4, w.v_gr_start, w.v_gr_start + 1e-4}).empty());
}

TEST(ChargeMap, UniformInsideOneCell) {
    const auto net = reference_device();
    const auto g = cell_dimensions(net, 0.0);
    const auto [cx, cy] = cell_centre(net, 5, 5);
    const auto m = charge_map(net, {cx - 0.1 * g.dv_gl, cx + 0.1 * g.dv_gl, cy - 0.1 * g.dv_gr, cy + 0.1 * g.dv_gr},
                              {20, 20});
    for (const auto& s : m.states) EXPECT_EQ(s, (ChargeState{5, 5}));
}

TEST(ChargeMap, PeriodsMatchAnalyticGeometry) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 20; ++k) {
        const double cl = 50 + 100 * u(rng), cr = 50 + 100 * u(rng);
        const CapacitanceNetwork net({cl, cr, 0.6 * std::min(cl, cr) * u(rng), 1 + 3 * u(rng), 1 + 3 * u(rng)});
        const auto g = cell_dimensions(net, 0.0);
        const auto w = window_for_cells(net, 3.0);
        const int res = 301;
        const auto m = charge_map(net, w, {res, res});
        const double px = (w.v_gl_stop - w.v_gl_start) / (res - 1);
        const double py = (w.v_gr_stop - w.v_gr_start) / (res - 1);
        // first column where n_left reaches a value, along the middle row, then
        // the column where it reaches value + 1
        const int r = res / 2;
        std::map<int, int> first_col;
        for (int c = 0; c < res; ++c) first_col.emplace(m.at(r, c).n_left, c);
        std::vector<double> steps;
        for (auto it = std::next(first_col.begin()); std::next(it) != first_col.end(); ++it)
            steps.push_back((std::next(it)->second - it->second) * px);
        ASSERT_FALSE(steps.empty());
        for (double s : steps) EXPECT_NEAR(s, g.dv_gl, px * (1 + 1e-9));
        std::map<int, int> first_row;
        for (int rr = 0; rr < res; ++rr) first_row.emplace(m.at(rr, res / 2).n_right, rr);
        for (auto it = std::next(first_row.begin()); std::next(it) != first_row.end(); ++it)
            EXPECT_NEAR((std::next(it)->second - it->second) * py, g.dv_gr, py * (1 + 1e-9));
    }
}

TEST(ChargeMap, DecoupledIsCheckerboard) {
    const auto net = reference_device(0.0);
    const auto m = charge_map(net, window_for_cells(net, 3.0), {120, 120});
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) {
            EXPECT_EQ(m.at(r, c).n_left, m.at(0, c).n_left);
            EXPECT_EQ(m.at(r, c).n_right, m.at(r, 0).n_right);
        }
    }
}

TEST(ChargeMap, HexagonalAndRectangularTopology) {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 10; ++k) {
        const double cl = 50 + 100 * u(rng), cr = 50 + 100 * u(rng);
        const double cm = (0.15 + 0.45 * u(rng)) * std::min(cl, cr);
        const CapacitanceNetwork net({cl, cr, cm, 1 + 3 * u(rng), 1 + 3 * u(rng)});
        const auto coupled = interior_neighbours(charge_map(net, window_for_cells(net, 3.2), {301, 301}));
        ASSERT_FALSE(coupled.empty());
        for (const auto& [s, n] : coupled) EXPECT_EQ(n.size(), 6u);
        const auto plain = interior_neighbours(charge_map(net.with_c_m(0.0), window_for_cells(net, 3.2), {301, 301}));
        ASSERT_FALSE(plain.empty());
        for (const auto& [s, n] : plain) EXPECT_EQ(n.size(), 4u);
    }
}

TEST(ChargeMap, ReportsClippedPixels) {
    const auto net = reference_device();
    const double p = cell_dimensions(net, 0).dv_gl;
    EXPECT_EQ(charge_map(net, window_for_cells(net, 3.0), {30, 30}).clipped_pixels, 0u);
    EXPECT_GT(charge_map(net, {12 * p, 13 * p, 0.1, 0.2}, {10, 10}).clipped_pixels, 0u);
}

TEST(TransportWindow, ZeroBiasIsCoshSquared) {
    const double kt = thermal_energy_mev(120);
    for (double mu : {-0.1, -0.02, 0.0, 0.013, 0.3}) {
        const double c = std::cosh(mu / (2 * kt));
        EXPECT_NEAR(transport_window(mu, 0.0, kt), 1.0 / (c * c), 1e-14);
    }
}

TEST(TransportWindow, FlatTopWithHalfMaximaAtWindowEdges) {
    const double kt = thermal_energy_mev(120);
    const double bias = 3e-4; // 0.3 meV window
    EXPECT_NEAR(transport_window(-0.15, bias, kt), 1.0, 1e-6);
    EXPECT_NEAR(transport_window(-0.05, bias, kt), 1.0, 1e-2);
    // difference of lead occupations, normalised to one deep inside the window
    const auto fermi = [&](double x) { return 1.0 / (1.0 + std::exp(x / kt)); };
    const double e = 0.3;
    for (double mu : {-0.4, -0.31, -0.2, -0.05, -0.01, 0.02, 0.1}) {
        const double expected = (fermi(mu) - fermi(mu + e)) / std::tanh(e / (4 * kt));
        EXPECT_NEAR(transport_window(mu, bias, kt), expected, 1e-12 + 1e-9 * expected) << mu;
    }
    EXPECT_NEAR(transport_window(0.0, bias, kt), 0.5, 1e-6);
    EXPECT_NEAR(transport_window(-0.3, bias, kt), 0.5, 1e-6);
    EXPECT_LT(transport_window(0.2, bias, kt), 1e-6);
    EXPECT_EQ(transport_window(-0.1, bias, kt), transport_window(-0.1, -bias, kt));
}

TEST(ConductanceMap, BlockadeAndSingleDotResonance) {
    const auto net = reference_device();
    const auto g = cell_dimensions(net, 0.0);
    const auto tps = triple_points(net, window_for_cells(net, 1.0));
    ASSERT_EQ(tps.size(), 2u);
    const auto& e = tps[0];
    // deep inside cell (5,5): half a period below-left of the electron vertex
    const double x0 = e.v_gl - 0.45 * g.dv_gl, y0 = e.v_gr - 0.45 * g.dv_gr;
    const auto blockade = conductance_map(net, {x0, x0 + 1e-4, y0, y0 + 1e-4}, {2, 2}, 0.0, 1.0, 3.0);
    for (double v : blockade.values) EXPECT_LT(v, 1e-12);
    // on the left-dot boundary, halfway down from the electron vertex
    const double ym = e.v_gr - 0.4 * g.dv_gr;
    const double r_l = g.dv_gl_m / g.dv_gl;
    const double xm = e.v_gl + r_l * (e.v_gr - ym) * g.dv_gl / g.dv_gr;
    for (double gr : {0.0, 1.0, 5.0}) {
        const auto m = conductance_map(net, {xm, xm + 1e-9, ym, ym + 1e-9}, {2, 2}, 0.0, 2.5, gr);
        EXPECT_NEAR(m.values[0], 2.5, 1e-6);
    }
}

TEST(ConductanceMap, FiniteBiasBandWidth) {
    // Full width at half maximum of a left-dot band, along V_GL and along the
    // adjacent right-dot boundary (which is where deltaV_GL is defined).
    const auto net = reference_device();
    const double bias = 3e-4;
    const auto g = cell_dimensions(net, bias);
    const auto tps = triple_points(net, window_for_cells(net, 1.0));
    const auto& h = tps[1];
    ASSERT_EQ(h.kind, VertexKind::hole);
    const double y = h.v_gr + 0.4 * g.dv_gr;
    const int n = 4001;
    const double x0 = h.v_gl - 0.3 * g.dv_gl, x1 = h.v_gl + 0.3 * g.dv_gl;
    const auto row = conductance_map(net, {x0, x1, y, y + 1e-6}, {n, 2}, bias);
    const double step = (x1 - x0) / (n - 1);
    int a = -1, b = -1;
    for (int i = 0; i < n; ++i) {
        if (row.values[static_cast<std::size_t>(i)] > 0.5) {
            if (a < 0) a = i;
            b = i;
        }
    }
    ASSERT_GT(a, 0);
    const double width = (b - a + 1) * step;
    const double r_l = g.dv_gl_m / g.dv_gl, r_r = g.dv_gr_m / g.dv_gr;
    EXPECT_NEAR(width, g.delta_v_gl * (1 - r_l * r_r), 2 * step);
    EXPECT_NEAR(width / (1 - r_l * r_r), 0.013, 0.0002);
}

TEST(ConductanceMap, SymmetricUnderRelabeling) {
    const auto net = reference_device();
    // shifted off the half-integer lines where ground-state ties are broken lexicographically
    auto w = window_for_cells(net, 2.0);
    w.v_gl_start += 1.234e-4, w.v_gl_stop += 1.234e-4, w.v_gr_start += 0.987e-4, w.v_gr_stop += 0.987e-4;
    const auto a = conductance_map(net, w, {60, 50}, 2e-4, 1.0, 2.0);
    const auto b = conductance_map(net.mirrored(), {w.v_gr_start, w.v_gr_stop, w.v_gl_start, w.v_gl_stop},
                                   {50, 60}, 2e-4, 2.0, 1.0);
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) EXPECT_NEAR(a.at(r, c), b.at(c, r), 1e-12);
}

TEST(ConductanceMap, ThreadCountDoesNotChangeOutput) {
    const auto net = reference_device();
    const auto w = window_for_cells(net, 3.0);
    SynthesisOptions one, many;
    many.threads = 4;
    const auto a = conductance_map(net, w, {97, 89}, 3e-4, 1, 1, one);
    const auto b = conductance_map(net, w, {97, 89}, 3e-4, 1, 1, many);
    EXPECT_EQ(a.values, b.values);
}

TEST(ConductanceMap, LowTemperatureSupportHugsBoundaries) {
    const auto net = reference_device().with_temperature(5.0);
    const auto w = window_for_cells(net, 2.0);
    const int res = 200;
    const auto g = conductance_map(net, w, {res, res}, 0.0);
    const auto s = charge_map(net, w, {res, res});
    int support = 0;
    for (int r = 1; r + 1 < res; ++r) {
        for (int c = 1; c + 1 < res; ++c) {
            if (g.at(r, c) < 1e-6) continue;
            ++support;
            bool near_boundary = false;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) near_boundary |= s.at(r + dr, c + dc) != s.at(r, c);
            EXPECT_TRUE(near_boundary) << r << ' ' << c;
        }
    }
    EXPECT_GT(support, 20);
}

TEST(ConductanceMap, RejectsBadInputs) {
    const auto net = reference_device();
    const VoltageWindow w{0, 1, 0, 1};
    EXPECT_THROW(conductance_map(net, w, {1, 10}, 0.0), Error);
    EXPECT_THROW(conductance_map(net, w, {10, 0}, 0.0), Error);
    EXPECT_THROW(conductance_map(net, w, {10, 10}, NAN), Error);
    EXPECT_THROW(conductance_map(net, w, {10, 10}, 0.0, -1.0), Error);
    EXPECT_THROW(conductance_map(net, {1, 0, 0, 1}, {10, 10}, 0.0), Error);
}

TEST(Regime, ThresholdsAndLimits) {
    const auto weak = classify_regime(reference_device(0.0));
    EXPECT_EQ(weak.label, RegimeLabel::weak);
    EXPECT_EQ(weak.fractional_splitting, 0.0);
    const auto mid = classify_regime(reference_device());
    EXPECT_EQ(mid.label, RegimeLabel::medium);
    EXPECT_NEAR(mid.fractional_splitting, 25 / 100.4 + 25 / 79.8, 1e-15);
    EXPECT_NEAR(mid.fractional_splitting, 0.56, 0.01);
    const auto strong = classify_regime(reference_device(std::sqrt(79.8 * 100.4) * (1 - 1e-9)));
    EXPECT_EQ(strong.label, RegimeLabel::strong);
    EXPECT_EQ(regime_from_splitting(0.3).label, RegimeLabel::medium);
    EXPECT_EQ(regime_from_splitting(1.0).label, RegimeLabel::strong);
}

TEST(Regime, SplittingIncreasesWithCm) {
    double prev = -1;
    for (int i = 0; i < 100; ++i) {
        const double f = classify_regime(reference_device(89.5 * i / 100.0)).fractional_splitting;
        EXPECT_GT(f, prev);
        prev = f;
    }
}

TEST(Diamonds, ReferenceDotScale) {
    const auto set = coulomb_diamonds(1.84, 0.0, 79.8, 3);
    EXPECT_NEAR(set.gate_period, 0.087, 0.0005);
    EXPECT_NEAR(set.addition_energy, 2.0, 0.01);
    EXPECT_NEAR(2 * set.half_height, 4.0e-3, 0.02e-3);
    EXPECT_FALSE(set.slope_falling.has_value());
    EXPECT_EQ(set.diamonds.size(), 3u);
}

TEST(Diamonds, HalfHeightIsLeverArmTimesPeriod) {
    std::mt19937_64 rng(51);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 100; ++k) {
        const double cs = 20 + 200 * u(rng);
        const double cg = cs * (0.01 + 0.5 * u(rng));
        const auto set = coulomb_diamonds(cg, 0.4 * cs * u(rng), cs, 2);
        EXPECT_NEAR(set.half_height / (set.lever_arm * set.gate_period), 1.0, 1e-12);
    }
}

TEST(Diamonds, VerticesLieOnEdgesWithDeclaredSlopes) {
    const auto set = coulomb_diamonds(2.0, 15.0, 80.0, 4);
    ASSERT_TRUE(set.slope_falling.has_value());
    for (std::size_t i = 0; i < set.diamonds.size(); ++i) {
        const auto& v = set.diamonds[i].vertices;
        const auto slope = [](PlanePoint a, PlanePoint b) { return (b.v_bias - a.v_bias) / (b.v_gate - a.v_gate); };
        EXPECT_NEAR(slope(v[0], v[1]), set.slope_rising, 1e-9);
        EXPECT_NEAR(slope(v[1], v[2]), set.slope_falling.value(), 1e-9);
        EXPECT_NEAR(slope(v[3], v[2]), set.slope_rising, 1e-9);
        EXPECT_NEAR(slope(v[0], v[3]), set.slope_falling.value(), 1e-9);
        EXPECT_NEAR(v[2].v_gate - v[0].v_gate, set.gate_period, 1e-15);
        if (i > 0) {
            EXPECT_NEAR(v[0].v_gate, set.diamonds[i - 1].vertices[2].v_gate, 1e-15);
        }
    }
    EXPECT_FALSE(set.bias_convention.empty());
}

TEST(Diamonds, RejectsInvalid) {
    EXPECT_THROW(coulomb_diamonds(0.0, 0.0, 80, 1), Error);
    EXPECT_THROW(coulomb_diamonds(90, 0.0, 80, 1), Error);
    EXPECT_THROW(coulomb_diamonds(2, 80, 80, 1), Error);
    EXPECT_THROW(coulomb_diamonds(2, 0, 80, 0), Error);
}
