#pragma once

// Inverse pipeline: honeycomb geometry -> device parameters, and the map
// front end that measures the geometry from a conductance map
// (detect_peaks -> fit_lattice -> measure_bands -> params_from_geometry).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pdqd/error.hpp"
#include "pdqd/honeycomb.hpp"
#include "pdqd/network_file.hpp"
#include "pdqd/units.hpp"

namespace pdqd {

struct ExtractedParameters {
    double c_gate_left = 0.0;  // aF
    double c_gate_right = 0.0; // aF
    double alpha_left = 0.0;
    double alpha_right = 0.0;
    double c_sigma_left = 0.0;  // aF
    double c_sigma_right = 0.0; // aF
    double e_c_left = 0.0;      // meV
    double e_c_right = 0.0;     // meV
    double e_c_m_from_left = 0.0;  // meV, alpha_left * dV_GL^m
    double e_c_m_from_right = 0.0; // meV, alpha_right * dV_GR^m
    double c_m_from_left = 0.0;    // aF, c_sigma_right * dV_GL^m / dV_GL
    double c_m_from_right = 0.0;   // aF, c_sigma_left * dV_GR^m / dV_GR
    double c_m_combined = 0.0;     // aF, geometric mean of the two estimates
    CouplingRegime regime;
};

/// The extraction chain: C_G = e/dV, alpha = |bias|/deltaV, C_sigma = C_G/alpha,
/// E_C = alpha dV, E_Cm = alpha dV^m, C_m = C_sigma(other) dV^m/dV.
inline ExtractedParameters params_from_geometry(const HoneycombGeometry& g) {
    const char* stage = "params_from_geometry";
    const double fields[] = {g.dv_gl, g.dv_gr, g.dv_gl_m, g.dv_gr_m, g.delta_v_gl, g.delta_v_gr, g.bias};
    for (double v : fields) {
        if (!std::isfinite(v)) throw Error(ErrorKind::validation, stage, "non-finite geometry field");
    }
    if (g.bias == 0.0)
        throw Error(ErrorKind::precondition, stage, "lever arms undefined at zero bias");
    if (!(g.dv_gl > 0.0) || !(g.dv_gr > 0.0) || !(g.delta_v_gl > 0.0) || !(g.delta_v_gr > 0.0))
        throw Error(ErrorKind::validation, stage, "cell sizes and bias splittings must be positive");
    if (g.dv_gl_m < 0.0 || g.dv_gr_m < 0.0)
        throw Error(ErrorKind::validation, stage, "vertex splittings must be non-negative");
    if (g.dv_gl_m >= g.dv_gl || g.dv_gr_m >= g.dv_gr)
        throw Error(ErrorKind::validation, stage, "vertex splitting exceeds cell size");
    if (g.delta_v_gl >= g.dv_gl || g.delta_v_gr >= g.dv_gr)
        throw Error(ErrorKind::precondition, stage, "bias window exceeds cell, extraction invalid");

    const double bias = std::abs(g.bias);
    ExtractedParameters p;
    p.c_gate_left = kChargeAFV / g.dv_gl;
    p.c_gate_right = kChargeAFV / g.dv_gr;
    p.alpha_left = bias / g.delta_v_gl;
    p.alpha_right = bias / g.delta_v_gr;
    p.c_sigma_left = p.c_gate_left / p.alpha_left;
    p.c_sigma_right = p.c_gate_right / p.alpha_right;
    p.e_c_left = volts_to_mev(p.alpha_left * g.dv_gl);
    p.e_c_right = volts_to_mev(p.alpha_right * g.dv_gr);
    p.e_c_m_from_left = volts_to_mev(p.alpha_left * g.dv_gl_m);
    p.e_c_m_from_right = volts_to_mev(p.alpha_right * g.dv_gr_m);
    const double split_left = g.dv_gl_m / g.dv_gl;
    const double split_right = g.dv_gr_m / g.dv_gr;
    p.c_m_from_left = p.c_sigma_right * split_left;
    p.c_m_from_right = p.c_sigma_left * split_right;
    p.c_m_combined = std::sqrt(p.c_m_from_left * p.c_m_from_right);
    p.regime = regime_from_splitting(split_left + split_right);
    return p;
}

// ---------------------------------------------------------------------------
// Peak detection

struct Peak {
    double v_gl = 0.0;
    double v_gr = 0.0;
    double strength = 0.0;
    /// Half extents (V) of the above-threshold blob; zero for point maxima.
    double half_width_gl = 0.0;
    double half_width_gr = 0.0;
};

struct PeakSet {
    std::vector<Peak> points;
    double threshold = 0.0;
    double pixel_gl = 0.0; // grid step along V_GL
    double pixel_gr = 0.0;
    double bias = 0.0;     // carried from the source map

    bool empty() const { return points.empty(); }
};

enum class PeakMode {
    /// 3x3 local maxima with quadratic sub-pixel refinement (zero-bias resonances).
    local_maximum,
    /// Weighted centroids of connected above-threshold regions (finite-bias plateaus).
    plateau,
};

enum class SubPixel {
    /// Stationary point of a quadratic fitted to the 3x3 patch.
    quadratic,
    /// Intersection of the two ridge arms meeting at the candidate; maxima whose
    /// arms are collinear (points along a single resonance line) are dropped.
    /// Falls back to `quadratic` when the arms cannot be resolved.
    ridge_corner,
};

struct PeakOptions {
    PeakMode mode = PeakMode::local_maximum;
    SubPixel refine = SubPixel::ridge_corner;
    double threshold_quantile = 0.90;
    /// local_maximum mode: peaks must also exceed median + fraction * (max - median),
    /// which rejects sampling maxima along single-dot resonance lines.
    double min_relative_height = 0.6;
    /// local_maximum mode: weaker maxima closer than this (pixels) to a stronger one are dropped.
    double min_separation_px = 5.0;
    /// ridge_corner: neighbourhood radius (pixels) and arm level as a fraction of the candidate value.
    double corner_radius_px = 12.0;
    double corner_level = 0.25;
    /// plateau mode: threshold = median + level * (top - median), top taken at top_quantile.
    double plateau_level = 0.75;
    double plateau_top_quantile = 0.995;
    int min_blob_pixels = 4;
};

namespace detail {

inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    return v[k];
}

// Offset of the stationary point of a quadratic fitted to a 3x3 patch
// (row-major, centre at index 4). Falls back to per-axis parabolas.
inline std::pair<double, double> quadratic_offset(const std::array<double, 9>& z) {
    double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
    for (int j = -1; j <= 1; ++j) {
        for (int i = -1; i <= 1; ++i) {
            const double v = z[static_cast<std::size_t>((j + 1) * 3 + (i + 1))];
            sx += i * v;
            sy += j * v;
            sxy += i * j * v;
            sxx += (i * i - 2.0 / 3.0) * v;
            syy += (j * j - 2.0 / 3.0) * v;
        }
    }
    const double b = sx / 6.0, c = sy / 6.0, e = sxy / 4.0;
    const double d = sxx / 2.0, f = syy / 2.0; // coefficients of x^2, y^2
    const double h11 = 2.0 * d, h22 = 2.0 * f, h12 = e;
    const double det = h11 * h22 - h12 * h12;
    if (h11 < 0.0 && det > 0.0) {
        const double dx = (-b * h22 + c * h12) / det;
        const double dy = (-c * h11 + b * h12) / det;
        if (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0) return {dx, dy};
    }
    const auto parabola = [](double m, double c0, double p) {
        const double den = m - 2.0 * c0 + p;
        if (den >= 0.0) return 0.0;
        return std::clamp(0.5 * (m - p) / den, -0.5, 0.5);
    };
    return {parabola(z[3], z[4], z[5]), parabola(z[1], z[4], z[7])};
}

struct CornerFit {
    enum Status { ok, straight, unresolved } status = unresolved;
    double dx = 0.0; // pixels from the candidate
    double dy = 0.0;
};

// Splits the above-level pixels around (r0, c0) into two arms, fits a
// weighted line to each and intersects them. Arms are separated by ray
// direction (a corner); when the two rays come out opposite, by line
// orientation instead (two crossing lines).
inline CornerFit ridge_corner(const ConductanceMap& map, int r0, int c0, double radius, double level,
                              double straight_ratio = 0.08) {
    struct Sample {
        double x, y, w;
    };
    using Dir = std::array<double, 2>;
    const double floor = level * map.at(r0, c0);
    const int k = static_cast<int>(std::ceil(radius));
    std::vector<Sample> pts;
    for (int dr = -k; dr <= k; ++dr) {
        for (int dc = -k; dc <= k; ++dc) {
            const int r = r0 + dr, c = c0 + dc;
            if (r < 0 || c < 0 || r >= map.rows() || c >= map.cols()) continue;
            const double d = std::hypot(dr, dc);
            if (d < 2.0 || d > radius) continue;
            const double v = map.at(r, c);
            if (v > floor) pts.push_back({double(dc), double(dr), v - floor});
        }
    }
    CornerFit out;
    if (pts.size() < 6) return out;

    // A single resonance line through the candidate has almost all of its
    // second moment (about the candidate) along one axis.
    double mxx = 0, myy = 0, mxy = 0;
    for (const auto& p : pts) mxx += p.w * p.x * p.x, myy += p.w * p.y * p.y, mxy += p.w * p.x * p.y;
    const double half_trace = 0.5 * (mxx + myy);
    const double spread = std::hypot(0.5 * (mxx - myy), mxy);
    if ((half_trace - spread) < straight_ratio * (half_trace + spread)) {
        out.status = CornerFit::straight;
        return out;
    }

    const auto ray = [](const Sample& p) {
        const double n = std::hypot(p.x, p.y);
        return Dir{p.x / n, p.y / n};
    };
    const auto orientation = [](const Sample& p) {
        const double n2 = p.x * p.x + p.y * p.y;
        return Dir{(p.x * p.x - p.y * p.y) / n2, 2.0 * p.x * p.y / n2};
    };
    const auto dot = [](const Dir& a, const Dir& b) { return a[0] * b[0] + a[1] * b[1]; };
    std::vector<int> arm(pts.size());
    std::array<double, 2> coherence{};
    // Two-means on unit features, seeded by the heaviest sample and the one
    // least aligned with it. Returns false if a cluster empties.
    const auto two_means = [&](auto feature, std::array<Dir, 2>& centre) {
        const auto heaviest =
            std::max_element(pts.begin(), pts.end(), [](const Sample& a, const Sample& b) { return a.w < b.w; });
        centre[0] = feature(*heaviest);
        double lowest = 2.0;
        for (const auto& p : pts) {
            const auto f = feature(p);
            if (dot(f, centre[0]) < lowest) lowest = dot(f, centre[0]), centre[1] = f;
        }
        for (int it = 0; it < 10; ++it) {
            std::array<Dir, 2> sum{};
            std::array<double, 2> weight{};
            for (std::size_t i = 0; i < pts.size(); ++i) {
                const auto f = feature(pts[i]);
                arm[i] = dot(f, centre[1]) > dot(f, centre[0]);
                sum[arm[i]][0] += pts[i].w * f[0];
                sum[arm[i]][1] += pts[i].w * f[1];
                weight[arm[i]] += pts[i].w;
            }
            for (int a = 0; a < 2; ++a) {
                const double n = std::hypot(sum[a][0], sum[a][1]);
                if (n == 0.0) return false;
                centre[a] = {sum[a][0] / n, sum[a][1] / n};
                coherence[a] = n / weight[a];
            }
        }
        return true;
    };
    std::array<Dir, 2> centre{};
    if (!two_means(ray, centre)) return out;
    if (dot(centre[0], centre[1]) < -0.9 && !two_means(orientation, centre)) return out;
    // a blob rather than two lines
    if (std::min(coherence[0], coherence[1]) < 0.85) return out;

    // Line n . p = d for each arm, normal to its weighted principal axis.
    std::array<std::array<double, 3>, 2> line{};
    for (int a = 0; a < 2; ++a) {
        double w = 0, mx = 0, my = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (arm[i] != a) continue;
            w += pts[i].w, mx += pts[i].w * pts[i].x, my += pts[i].w * pts[i].y;
        }
        mx /= w, my /= w;
        double sxx = 0, syy = 0, sxy = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (arm[i] != a) continue;
            const double dx = pts[i].x - mx, dy = pts[i].y - my;
            sxx += pts[i].w * dx * dx, syy += pts[i].w * dy * dy, sxy += pts[i].w * dx * dy;
        }
        const double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
        const double nx = -std::sin(theta), ny = std::cos(theta);
        line[a] = {nx, ny, nx * mx + ny * my};
    }
    const double det = line[0][0] * line[1][1] - line[0][1] * line[1][0];
    if (std::abs(det) < 0.2) return out;
    const double x = (line[0][2] * line[1][1] - line[0][1] * line[1][2]) / det;
    const double y = (line[0][0] * line[1][2] - line[0][2] * line[1][0]) / det;
    if (std::hypot(x, y) > 2.5) return out;
    return {CornerFit::ok, x, y};
}

} // namespace detail

inline PeakSet detect_peaks(const ConductanceMap& map, const PeakOptions& opt = {}) {
    map.validate();
    if (!(opt.threshold_quantile > 0.0 && opt.threshold_quantile < 1.0))
        throw Error(ErrorKind::validation, "detect_peaks", "threshold_quantile must be in (0, 1)");
    PeakSet set;
    set.pixel_gl = map.v_gl_axis.step();
    set.pixel_gr = map.v_gr_axis.step();
    set.bias = map.bias;
    const int rows = map.rows();
    const int cols = map.cols();

    if (opt.mode == PeakMode::local_maximum) {
        const double base = detail::quantile(map.values, 0.5);
        const double top = *std::max_element(map.values.begin(), map.values.end());
        set.threshold = std::max(detail::quantile(map.values, opt.threshold_quantile),
                                 base + opt.min_relative_height * (top - base));
        for (int r = 1; r + 1 < rows; ++r) {
            for (int c = 1; c + 1 < cols; ++c) {
                const double v = map.at(r, c);
                if (!(v > set.threshold)) continue;
                bool is_max = true;
                std::array<double, 9> patch{};
                for (int dr = -1; dr <= 1 && is_max; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const double w = map.at(r + dr, c + dc);
                        patch[static_cast<std::size_t>((dr + 1) * 3 + (dc + 1))] = w;
                        if (dr == 0 && dc == 0) continue;
                        // ties go to the first pixel in row-major order
                        const bool before = dr < 0 || (dr == 0 && dc < 0);
                        if (w > v || (before && w == v)) {
                            is_max = false;
                            break;
                        }
                    }
                }
                if (!is_max) continue;
                auto [ox, oy] = detail::quadratic_offset(patch);
                if (opt.refine == SubPixel::ridge_corner) {
                    const auto fit = detail::ridge_corner(map, r, c, opt.corner_radius_px, opt.corner_level);
                    if (fit.status == detail::CornerFit::straight) continue;
                    if (fit.status == detail::CornerFit::ok) ox = fit.dx, oy = fit.dy;
                }
                set.points.push_back({map.v_gl_axis.at(c) + ox * set.pixel_gl,
                                      map.v_gr_axis.at(r) + oy * set.pixel_gr, v, 0.0, 0.0});
            }
        }
        if (opt.min_separation_px > 0.0) {
            std::vector<std::size_t> order(set.points.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return set.points[a].strength > set.points[b].strength;
            });
            std::vector<char> keep(set.points.size(), 1);
            for (std::size_t a = 0; a < order.size(); ++a) {
                if (!keep[order[a]]) continue;
                const auto& p = set.points[order[a]];
                for (std::size_t b = a + 1; b < order.size(); ++b) {
                    const auto& q = set.points[order[b]];
                    if (std::hypot((p.v_gl - q.v_gl) / set.pixel_gl, (p.v_gr - q.v_gr) / set.pixel_gr) <
                        opt.min_separation_px)
                        keep[order[b]] = 0;
                }
            }
            std::vector<Peak> kept;
            for (std::size_t i = 0; i < set.points.size(); ++i) {
                if (keep[i]) kept.push_back(set.points[i]);
            }
            set.points = std::move(kept);
        }
        return set;
    }

    const double base = detail::quantile(map.values, 0.5);
    const double top = detail::quantile(map.values, opt.plateau_top_quantile);
    set.threshold = base + opt.plateau_level * (top - base);
    if (!(top > base)) return set;
    std::vector<int> label(map.values.size(), -1);
    std::vector<std::pair<int, int>> stack;
    int next_label = 0;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const auto idx = static_cast<std::size_t>(r) * cols + c;
            if (label[idx] >= 0 || !(map.values[idx] > set.threshold)) continue;
            double wsum = 0, wx = 0, wy = 0, vmax = 0;
            int count = 0, r_lo = r, r_hi = r, c_lo = c, c_hi = c;
            bool touches_border = false;
            label[idx] = next_label;
            stack.assign(1, {r, c});
            while (!stack.empty()) {
                const auto [pr, pc] = stack.back();
                stack.pop_back();
                const double v = map.at(pr, pc);
                const double w = v - set.threshold;
                wsum += w;
                wx += w * pc;
                wy += w * pr;
                vmax = std::max(vmax, v);
                ++count;
                r_lo = std::min(r_lo, pr);
                r_hi = std::max(r_hi, pr);
                c_lo = std::min(c_lo, pc);
                c_hi = std::max(c_hi, pc);
                if (pr == 0 || pc == 0 || pr == rows - 1 || pc == cols - 1) touches_border = true;
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int nr = pr + dr, nc = pc + dc;
                        if (nr < 0 || nc < 0 || nr >= rows || nc >= cols) continue;
                        const auto nidx = static_cast<std::size_t>(nr) * cols + nc;
                        if (label[nidx] >= 0 || !(map.values[nidx] > set.threshold)) continue;
                        label[nidx] = next_label;
                        stack.push_back({nr, nc});
                    }
                }
            }
            ++next_label;
            if (touches_border || count < opt.min_blob_pixels) continue;
            const double cx = wx / wsum;
            const double cy = wy / wsum;
            set.points.push_back({map.v_gl_axis.start + cx * set.pixel_gl,
                                  map.v_gr_axis.start + cy * set.pixel_gr, vmax,
                                  0.5 * (c_hi - c_lo) * set.pixel_gl,
                                  0.5 * (r_hi - r_lo) * set.pixel_gr});
        }
    }
    std::sort(set.points.begin(), set.points.end(), [&](const Peak& a, const Peak& b) {
        const auto ra = std::lround((a.v_gr - map.v_gr_axis.start) / set.pixel_gr);
        const auto rb = std::lround((b.v_gr - map.v_gr_axis.start) / set.pixel_gr);
        if (ra != rb) return ra < rb;
        return a.v_gl < b.v_gl;
    });
    return set;
}

// ---------------------------------------------------------------------------
// Lattice fit

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

struct LatticeFit {
    Vec2 origin;  // a site of the first sublattice
    Vec2 period_gl; // lattice vector along V_GL
    Vec2 period_gr; // lattice vector along V_GR
    /// Offset of the second sublattice (electron -> hole vertex); empty when
    /// every peak falls on one sublattice.
    std::optional<Vec2> pair_offset;
    /// Pair offset below one pixel, reported as zero splitting.
    bool zero_splitting = false;
    double residual_rms = 0.0; // V
    int peaks_first = 0;
    int peaks_second = 0;
    int rounds = 0;
    /// Geometry from the lattice alone; delta_v fields are zero.
    HoneycombGeometry geometry;
};

namespace detail {

// Period along one axis: smallest spacing d between clustered coordinates such
// that every coordinate c with c + d inside the range has a partner at c + d.
inline std::optional<double> axis_period(std::vector<double> xs, double tol) {
    std::sort(xs.begin(), xs.end());
    std::vector<double> cols;
    std::vector<int> counts;
    for (double x : xs) {
        if (!cols.empty() && x - cols.back() / counts.back() <= tol) {
            cols.back() += x;
            ++counts.back();
        } else {
            cols.push_back(x);
            counts.push_back(1);
        }
    }
    for (std::size_t i = 0; i < cols.size(); ++i) cols[i] /= counts[i];
    if (cols.size() < 2) return std::nullopt;

    std::vector<double> diffs;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        for (std::size_t j = i + 1; j < cols.size(); ++j) diffs.push_back(cols[j] - cols[i]);
    }
    std::sort(diffs.begin(), diffs.end());
    const double hi = cols.back();
    const auto has = [&](double x) {
        return std::any_of(cols.begin(), cols.end(), [&](double c) { return std::abs(c - x) <= tol; });
    };
    for (double d : diffs) {
        if (d <= 2.0 * tol) continue;
        int misses = 0, checks = 0;
        for (double c : cols) {
            if (c + d > hi + tol) continue;
            ++checks;
            if (!has(c + d)) ++misses;
        }
        if (checks > 0 && misses == 0) return d;
    }
    return std::nullopt;
}

// Dense solve of a small symmetric system by Gaussian elimination with pivoting.
template <std::size_t N>
bool solve_small(std::array<std::array<double, N>, N> a, std::array<double, N> b, std::size_t n,
                 std::array<double, N>& x) {
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i) {
            if (std::abs(a[i][k]) > std::abs(a[piv][k])) piv = i;
        }
        if (std::abs(a[piv][k]) < 1e-300) return false;
        std::swap(a[k], a[piv]);
        std::swap(b[k], b[piv]);
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = a[i][k] / a[k][k];
            for (std::size_t j = k; j < n; ++j) a[i][j] -= f * a[k][j];
            b[i] -= f * b[k];
        }
    }
    for (std::size_t k = n; k-- > 0;) {
        double s = b[k];
        for (std::size_t j = k + 1; j < n; ++j) s -= a[k][j] * x[j];
        x[k] = s / a[k][k];
    }
    return true;
}

} // namespace detail

struct LatticeOptions {
    int max_rounds = 100;
    /// Column/row clustering tolerance in pixels for the period seed.
    double seed_tolerance_px = 3.0;
};

/// Least-squares fit of a doubly periodic two-point lattice to `peaks`.
inline LatticeFit fit_lattice(const PeakSet& peaks, const LatticeOptions& opt = {}) {
    const char* stage = "fit_lattice";
    const auto fail = [&](const std::string& m) { throw Error(ErrorKind::fit, stage, m); };
    const auto& pts = peaks.points;
    const int n = static_cast<int>(pts.size());
    if (n < 8) fail("need at least 8 peaks, got " + std::to_string(n));
    if (!(peaks.pixel_gl > 0.0) || !(peaks.pixel_gr > 0.0)) fail("peak set lacks pixel size");

    std::vector<double> xs, ys;
    for (const auto& p : pts) {
        xs.push_back(p.v_gl);
        ys.push_back(p.v_gr);
    }
    const auto px = detail::axis_period(xs, opt.seed_tolerance_px * peaks.pixel_gl);
    const auto py = detail::axis_period(ys, opt.seed_tolerance_px * peaks.pixel_gr);
    if (!px || !py) fail("no periodic structure along both gate axes");

    LatticeFit fit;
    fit.period_gl = {*px, 0.0};
    fit.period_gr = {0.0, *py};
    // Origin: the peak closest to the centroid keeps the index range symmetric.
    Vec2 centroid;
    for (const auto& p : pts) centroid = centroid + Vec2{p.v_gl / n, p.v_gr / n};
    std::size_t o_idx = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (norm(Vec2{pts[i].v_gl, pts[i].v_gr} - centroid) <
            norm(Vec2{pts[o_idx].v_gl, pts[o_idx].v_gr} - centroid))
            o_idx = i;
    }
    fit.origin = {pts[o_idx].v_gl, pts[o_idx].v_gr};

    struct Assign {
        int i = 0, j = 0, sub = 0;
        bool operator==(const Assign&) const = default;
    };
    const auto lattice_coords = [&](Vec2 d, double& u, double& v) {
        const double det = fit.period_gl.x * fit.period_gr.y - fit.period_gl.y * fit.period_gr.x;
        u = (d.x * fit.period_gr.y - d.y * fit.period_gr.x) / det;
        v = (fit.period_gl.x * d.y - fit.period_gl.y * d.x) / det;
    };
    const double tol = 0.15 * std::min(*px, *py);

    // Seed the second sublattice from peaks that miss the first one.
    std::optional<Vec2> offset;
    {
        std::vector<Vec2> res;
        for (const auto& p : pts) {
            double u = 0, v = 0;
            lattice_coords(Vec2{p.v_gl, p.v_gr} - fit.origin, u, v);
            const Vec2 r = (u - std::round(u)) * fit.period_gl + (v - std::round(v)) * fit.period_gr;
            if (norm(r) > tol) res.push_back(r);
        }
        if (!res.empty()) {
            // wrap all residuals next to the first one before averaging
            Vec2 sum;
            for (const auto& r : res) {
                double u = 0, v = 0;
                lattice_coords(r - res.front(), u, v);
                sum = sum + (r - std::round(u) * fit.period_gl - std::round(v) * fit.period_gr);
            }
            offset = (1.0 / static_cast<double>(res.size())) * sum;
        }
    }

    std::vector<Assign> assign(pts.size()), previous;
    bool converged = false;
    for (int round = 1; round <= opt.max_rounds; ++round) {
        fit.rounds = round;
        for (std::size_t k = 0; k < pts.size(); ++k) {
            const Vec2 p{pts[k].v_gl, pts[k].v_gr};
            double u = 0, v = 0;
            lattice_coords(p - fit.origin, u, v);
            Assign a{static_cast<int>(std::lround(u)), static_cast<int>(std::lround(v)), 0};
            double best = norm(p - (fit.origin + a.i * fit.period_gl + a.j * fit.period_gr));
            if (offset) {
                lattice_coords(p - fit.origin - *offset, u, v);
                const Assign b{static_cast<int>(std::lround(u)), static_cast<int>(std::lround(v)), 1};
                const double db =
                    norm(p - (fit.origin + *offset + b.i * fit.period_gl + b.j * fit.period_gr));
                if (db < best) a = b;
            }
            assign[k] = a;
        }
        int n_second = 0;
        for (const auto& a : assign) n_second += a.sub;
        const bool two = n_second > 0;
        const std::size_t unknowns = two ? 4 : 3;

        // x and y decouple: p = o + i a1 + j a2 + sub s
        std::array<std::array<double, 4>, 4> ata{};
        std::array<double, 4> atx{}, aty{};
        for (std::size_t k = 0; k < pts.size(); ++k) {
            const std::array<double, 4> row{1.0, static_cast<double>(assign[k].i),
                                            static_cast<double>(assign[k].j),
                                            static_cast<double>(assign[k].sub)};
            for (std::size_t a = 0; a < unknowns; ++a) {
                for (std::size_t b = 0; b < unknowns; ++b) ata[a][b] += row[a] * row[b];
                atx[a] += row[a] * pts[k].v_gl;
                aty[a] += row[a] * pts[k].v_gr;
            }
        }
        std::array<double, 4> sx{}, sy{};
        if (!detail::solve_small<4>(ata, atx, unknowns, sx) ||
            !detail::solve_small<4>(ata, aty, unknowns, sy))
            fail("degenerate peak configuration (peaks must span at least 2 cells per axis)");
        fit.origin = {sx[0], sy[0]};
        fit.period_gl = {sx[1], sy[1]};
        fit.period_gr = {sx[2], sy[2]};
        offset = two ? std::optional<Vec2>(Vec2{sx[3], sy[3]}) : std::nullopt;
        if (assign == previous) {
            converged = true;
            break;
        }
        previous = assign;
    }
    if (!converged) fail("sublattice assignment did not converge");

    int i_lo = 0, i_hi = 0, j_lo = 0, j_hi = 0;
    double ss = 0.0;
    for (std::size_t k = 0; k < pts.size(); ++k) {
        const auto& a = assign[k];
        i_lo = std::min(i_lo, a.i);
        i_hi = std::max(i_hi, a.i);
        j_lo = std::min(j_lo, a.j);
        j_hi = std::max(j_hi, a.j);
        Vec2 pred = fit.origin + a.i * fit.period_gl + a.j * fit.period_gr;
        if (a.sub) pred = pred + *offset;
        const Vec2 d = Vec2{pts[k].v_gl, pts[k].v_gr} - pred;
        ss += d.x * d.x + d.y * d.y;
        (a.sub ? fit.peaks_second : fit.peaks_first) += 1;
    }
    if (i_hi - i_lo < 1 || j_hi - j_lo < 1) fail("peaks span fewer than 2 cells per axis");
    fit.residual_rms = std::sqrt(ss / n);

    auto& g = fit.geometry;
    g.dv_gl = std::abs(fit.period_gl.x);
    g.dv_gr = std::abs(fit.period_gr.y);
    g.bias = peaks.bias;
    if (offset) {
        Vec2 s = *offset;
        double u = 0, v = 0;
        lattice_coords(s, u, v);
        const Vec2 shortest = s - std::round(u) * fit.period_gl - std::round(v) * fit.period_gr;
        if (std::abs(shortest.x) < peaks.pixel_gl && std::abs(shortest.y) < peaks.pixel_gr) {
            fit.pair_offset = shortest;
            fit.zero_splitting = true;
        } else {
            // The hole-to-electron offset has lattice coordinates in [0, 1) with
            // a sum below one; of s and -s (modulo the lattice) exactly one does.
            const double u0 = u - std::floor(u), v0 = v - std::floor(v);
            const double u1 = -u - std::floor(-u), v1 = -v - std::floor(-v);
            if (u1 + v1 < u0 + v0) {
                fit.origin = fit.origin + s;
                std::swap(fit.peaks_first, fit.peaks_second);
                u = u1, v = v1;
            } else {
                u = u0, v = v0;
            }
            s = u * fit.period_gl + v * fit.period_gr;
            fit.pair_offset = s;
            // Triple-point separation (dx, dy), in cell fractions, relates to the
            // boundary stagger by r_L = dx / (1 - dy), r_R = dy / (1 - dx).
            g.dv_gl_m = g.dv_gl * u / (1.0 - v);
            g.dv_gr_m = g.dv_gr * v / (1.0 - u);
        }
    } else {
        fit.zero_splitting = true;
    }
    return fit;
}

// ---------------------------------------------------------------------------
// Finite-bias band measurement

struct BandMeasurement {
    double width_axis_gl = 0.0; // FWHM of left-dot bands along V_GL (V)
    double width_axis_gr = 0.0; // FWHM of right-dot bands along V_GR (V)
    double tilt_left = 0.0;     // dV_GL/dV_GR along left-dot bands
    double tilt_right = 0.0;    // dV_GR/dV_GL along right-dot bands
    int samples_left = 0;
    int samples_right = 0;
};

namespace detail {

struct BandSample {
    int group;
    double coord;  // scan position (V_GR for rows, V_GL for columns)
    double center; // band centre along the profile axis
    double width;
};

// Locates the run above half level around `guess` in a 1D profile; returns
// fractional indices of the two half-level crossings.
inline std::optional<std::pair<double, double>> half_level_run(const std::vector<double>& prof,
                                                               int guess) {
    const int n = static_cast<int>(prof.size());
    if (n < 5 || guess < 0 || guess >= n) return std::nullopt;
    const double lo = quantile(prof, 0.10);
    const double hi = quantile(prof, 0.90);
    if (!(hi > lo)) return std::nullopt;

    const auto crossings = [&](double half, int seed) -> std::optional<std::pair<double, double>> {
        int s = seed;
        if (!(prof[static_cast<std::size_t>(s)] > half)) {
            int best = -1;
            for (int d = 1; d < n && best < 0; ++d) {
                if (s - d >= 0 && prof[static_cast<std::size_t>(s - d)] > half) best = s - d;
                else if (s + d < n && prof[static_cast<std::size_t>(s + d)] > half) best = s + d;
            }
            if (best < 0) return std::nullopt;
            s = best;
        }
        int a = s, b = s;
        while (a > 0 && prof[static_cast<std::size_t>(a - 1)] > half) --a;
        while (b + 1 < n && prof[static_cast<std::size_t>(b + 1)] > half) ++b;
        if (a == 0 || b == n - 1) return std::nullopt; // run clipped by the profile window
        const auto cross = [&](int below, int above) {
            const double vb = prof[static_cast<std::size_t>(below)];
            const double va = prof[static_cast<std::size_t>(above)];
            return below + (half - vb) / (va - vb) * (above - below);
        };
        return std::pair<double, double>{cross(a - 1, a), cross(b + 1, b)};
    };

    auto run = crossings(0.5 * (lo + hi), guess);
    if (!run) return std::nullopt;
    // Refine the level from robust inside/outside medians.
    std::vector<double> inside, outside;
    for (int i = 0; i < n; ++i) {
        const double v = prof[static_cast<std::size_t>(i)];
        (i > run->first && i < run->second ? inside : outside).push_back(v);
    }
    if (inside.size() < 2 || outside.size() < 2) return std::nullopt;
    const double top = quantile(inside, 0.5);
    const double base = quantile(outside, 0.5);
    const int centre = static_cast<int>(std::lround(0.5 * (run->first + run->second)));
    return crossings(0.5 * (top + base), std::clamp(centre, 0, n - 1));
}

inline double pooled_slope(const std::vector<BandSample>& s, int groups) {
    std::vector<double> mc(static_cast<std::size_t>(groups), 0.0), mv(mc), cnt(mc);
    for (const auto& b : s) {
        mc[static_cast<std::size_t>(b.group)] += b.coord;
        mv[static_cast<std::size_t>(b.group)] += b.center;
        cnt[static_cast<std::size_t>(b.group)] += 1.0;
    }
    double sxy = 0.0, sxx = 0.0;
    for (const auto& b : s) {
        const auto g = static_cast<std::size_t>(b.group);
        const double dc = b.coord - mc[g] / cnt[g];
        sxy += dc * (b.center - mv[g] / cnt[g]);
        sxx += dc * dc;
    }
    return sxx > 0.0 ? sxy / sxx : 0.0;
}

inline double median_width(const std::vector<BandSample>& s) {
    std::vector<double> w;
    w.reserve(s.size());
    for (const auto& b : s) w.push_back(b.width);
    std::sort(w.begin(), w.end());
    const std::size_t m = w.size() / 2;
    return w.size() % 2 ? w[m] : 0.5 * (w[m - 1] + w[m]);
}

} // namespace detail

struct BandOptions {
    /// Scan reach beyond the plateau, as a fraction of the cell period.
    double reach = 0.45;
    /// Half width of each profile window, as a fraction of the cell period.
    double window = 0.3;
    int margin_px = 2;
    int min_samples = 5;
};

/// Measures the flat-top bands next to every plateau peak of a finite-bias map:
/// left-dot bands on rows above the plateau, right-dot bands on columns to its right.
inline BandMeasurement measure_bands(const ConductanceMap& map, const PeakSet& peaks,
                                     const LatticeFit& fit, const BandOptions& opt = {}) {
    const char* stage = "measure_bands";
    const double pgl = map.v_gl_axis.step();
    const double pgr = map.v_gr_axis.step();
    const double per_gl = fit.geometry.dv_gl;
    const double per_gr = fit.geometry.dv_gr;
    const int rows = map.rows(), cols = map.cols();
    const int half_gl = std::max(3, static_cast<int>(opt.window * per_gl / pgl));
    const int half_gr = std::max(3, static_cast<int>(opt.window * per_gr / pgr));

    std::vector<detail::BandSample> left, right;
    std::vector<double> prof;
    int group = 0;
    for (const auto& pk : peaks.points) {
        const double c_row = (pk.v_gr - map.v_gr_axis.start) / pgr;
        const double c_col = (pk.v_gl - map.v_gl_axis.start) / pgl;

        // Rows above the plateau cross only the left-dot band.
        const int r0 = static_cast<int>(std::ceil(c_row + pk.half_width_gr / pgr)) + opt.margin_px;
        const int r1 = static_cast<int>(std::floor(c_row + opt.reach * per_gr / pgr));
        double track = c_col;
        for (int r = r0; r <= r1 && r < rows; ++r) {
            const int lo = static_cast<int>(std::lround(track)) - half_gl;
            const int hi = static_cast<int>(std::lround(track)) + half_gl;
            if (lo < 0 || hi >= cols) break;
            prof.assign(map.values.begin() + static_cast<std::ptrdiff_t>(r) * cols + lo,
                        map.values.begin() + static_cast<std::ptrdiff_t>(r) * cols + hi + 1);
            const auto run = detail::half_level_run(prof, half_gl);
            if (!run) break;
            const double centre = lo + 0.5 * (run->first + run->second);
            track = centre;
            left.push_back({group, map.v_gr_axis.at(r), map.v_gl_axis.start + centre * pgl,
                            (run->second - run->first) * pgl});
        }

        // Columns to the right of the plateau cross only the right-dot band.
        const int c0 = static_cast<int>(std::ceil(c_col + pk.half_width_gl / pgl)) + opt.margin_px;
        const int c1 = static_cast<int>(std::floor(c_col + opt.reach * per_gl / pgl));
        track = c_row;
        for (int c = c0; c <= c1 && c < cols; ++c) {
            const int lo = static_cast<int>(std::lround(track)) - half_gr;
            const int hi = static_cast<int>(std::lround(track)) + half_gr;
            if (lo < 0 || hi >= rows) break;
            prof.resize(static_cast<std::size_t>(hi - lo + 1));
            for (int r = lo; r <= hi; ++r) prof[static_cast<std::size_t>(r - lo)] = map.at(r, c);
            const auto run = detail::half_level_run(prof, half_gr);
            if (!run) break;
            const double centre = lo + 0.5 * (run->first + run->second);
            track = centre;
            right.push_back({group, map.v_gl_axis.at(c), map.v_gr_axis.start + centre * pgr,
                             (run->second - run->first) * pgr});
        }
        ++group;
    }
    if (static_cast<int>(left.size()) < opt.min_samples ||
        static_cast<int>(right.size()) < opt.min_samples)
        throw Error(ErrorKind::fit, stage, "too few band cross-sections next to the vertex plateaus");

    BandMeasurement bm;
    bm.samples_left = static_cast<int>(left.size());
    bm.samples_right = static_cast<int>(right.size());
    bm.width_axis_gl = detail::median_width(left);
    bm.width_axis_gr = detail::median_width(right);
    bm.tilt_left = detail::pooled_slope(left, group);
    bm.tilt_right = detail::pooled_slope(right, group);
    return bm;
}

/// Completes a lattice geometry with finite-bias quantities from band tilts
/// and widths. The vertex splitting is the boundary stagger over one period,
/// dV_GL^m = -tilt_left * dV_GR. The axis FWHM w of a left-dot band relates to
/// the splitting measured along the adjacent right-dot boundary by
/// deltaV_GL = w / (1 - r_L r_R), r = dV^m / dV.
inline HoneycombGeometry geometry_from_bands(const HoneycombGeometry& lattice,
                                             const BandMeasurement& bands, double bias) {
    HoneycombGeometry g = lattice;
    g.bias = bias;
    g.dv_gl_m = std::max(0.0, -bands.tilt_left * g.dv_gr);
    g.dv_gr_m = std::max(0.0, -bands.tilt_right * g.dv_gl);
    const double r_l = g.dv_gl_m / g.dv_gl;
    const double r_r = g.dv_gr_m / g.dv_gr;
    const double shear = 1.0 - r_l * r_r;
    if (!(shear > 0.0))
        throw Error(ErrorKind::fit, "measure_bands", "band tilts imply a degenerate lattice");
    g.delta_v_gl = bands.width_axis_gl / shear;
    g.delta_v_gr = bands.width_axis_gr / shear;
    return g;
}

// ---------------------------------------------------------------------------
// Full pipeline

struct ExtractionDiagnostics {
    int peak_count = 0;
    double residual_rms = 0.0;   // V
    double c_m_disagreement = 1.0; // c_m_from_left / c_m_from_right
    int band_samples_left = 0;
    int band_samples_right = 0;
    HoneycombGeometry geometry;   // measured geometry fed to the parameter chain
};

struct Extraction {
    ExtractedParameters params;
    ExtractionDiagnostics diagnostics;
};

struct ExtractOptions {
    PeakOptions peaks{PeakMode::plateau};
    LatticeOptions lattice;
    BandOptions bands;
};

inline Extraction extract_from_map(const ConductanceMap& map, const ExtractOptions& opt = {}) {
    const auto staged = [](const Error& e) {
        return Error(e.kind(), "extract > " + e.stage(), e.what());
    };
    try {
        map.validate();
        if (map.bias == 0.0)
            throw Error(ErrorKind::precondition, "extract", "lever arms undefined for a zero-bias map");
        Extraction out;
        const PeakSet peaks = detect_peaks(map, opt.peaks);
        if (peaks.empty()) throw Error(ErrorKind::fit, "detect_peaks", "no vertex peaks found");
        const LatticeFit fit = fit_lattice(peaks, opt.lattice);
        const BandMeasurement bands = measure_bands(map, peaks, fit, opt.bands);
        const HoneycombGeometry g = geometry_from_bands(fit.geometry, bands, map.bias);
        out.params = params_from_geometry(g);

        auto& d = out.diagnostics;
        d.peak_count = static_cast<int>(peaks.points.size());
        d.residual_rms = fit.residual_rms;
        d.band_samples_left = bands.samples_left;
        d.band_samples_right = bands.samples_right;
        d.geometry = g;
        d.c_m_disagreement = out.params.c_m_from_right > 0.0
                                 ? out.params.c_m_from_left / out.params.c_m_from_right
                                 : (out.params.c_m_from_left > 0.0 ? INFINITY : 1.0);
        return out;
    } catch (const Error& e) {
        if (e.stage().rfind("extract", 0) == 0) throw;
        throw staged(e);
    }
}

// ---------------------------------------------------------------------------
// Reports

/// Human-readable `key = value` report with unit suffixes.
inline std::string format_report(const ExtractedParameters& p,
                                 const std::optional<ExtractionDiagnostics>& diag = std::nullopt) {
    using detail::format_double;
    std::ostringstream os;
    os << "# parallel double-dot extraction report v1\n"
       << "c_gate_left_aF = " << format_double(p.c_gate_left) << '\n'
       << "c_gate_right_aF = " << format_double(p.c_gate_right) << '\n'
       << "alpha_left = " << format_double(p.alpha_left) << '\n'
       << "alpha_right = " << format_double(p.alpha_right) << '\n'
       << "c_sigma_left_aF = " << format_double(p.c_sigma_left) << '\n'
       << "c_sigma_right_aF = " << format_double(p.c_sigma_right) << '\n'
       << "e_c_left_meV = " << format_double(p.e_c_left) << '\n'
       << "e_c_right_meV = " << format_double(p.e_c_right) << '\n'
       << "e_c_m_from_left_meV = " << format_double(p.e_c_m_from_left) << '\n'
       << "e_c_m_from_right_meV = " << format_double(p.e_c_m_from_right) << '\n'
       << "c_m_from_left_aF = " << format_double(p.c_m_from_left) << '\n'
       << "c_m_from_right_aF = " << format_double(p.c_m_from_right) << '\n'
       << "c_m_combined_aF = " << format_double(p.c_m_combined) << '\n'
       << "fractional_splitting = " << format_double(p.regime.fractional_splitting) << '\n'
       << "regime = " << to_string(p.regime.label) << '\n'
       << "# note: e_c_m_from_* = alpha * dV^m (full vertex splitting). Under a half-splitting\n"
       << "# convention, alpha * dV^m / 2, the values would be "
       << format_double(0.5 * p.e_c_m_from_left) << " meV (left) and "
       << format_double(0.5 * p.e_c_m_from_right) << " meV (right).\n";
    if (p.c_m_from_left > 0.0 && p.c_m_from_right > 0.0) {
        os << "# note: c_m estimates differ by a factor "
           << format_double(p.c_m_from_left / p.c_m_from_right)
           << "; c_m_combined is their geometric mean.\n";
    }
    if (diag) {
        os << "peak_count = " << diag->peak_count << '\n'
           << "lattice_residual_rms_V = " << format_double(diag->residual_rms) << '\n'
           << "c_m_disagreement_ratio = " << format_double(diag->c_m_disagreement) << '\n'
           << "band_samples_left = " << diag->band_samples_left << '\n'
           << "band_samples_right = " << diag->band_samples_right << '\n';
    }
    return os.str();
}

/// Field order of the single-line record emitted by format_record.
inline constexpr const char* kRecordFields =
    "tag c_gate_left_aF c_gate_right_aF alpha_left alpha_right c_sigma_left_aF c_sigma_right_aF "
    "e_c_left_meV e_c_right_meV e_c_m_from_left_meV e_c_m_from_right_meV c_m_from_left_aF "
    "c_m_from_right_aF c_m_combined_aF fractional_splitting regime";

/// One space-separated line in kRecordFields order, tag `DQDX1`.
inline std::string format_record(const ExtractedParameters& p) {
    using detail::format_double;
    const double v[] = {p.c_gate_left,     p.c_gate_right,     p.alpha_left,    p.alpha_right,
                        p.c_sigma_left,    p.c_sigma_right,    p.e_c_left,      p.e_c_right,
                        p.e_c_m_from_left, p.e_c_m_from_right, p.c_m_from_left, p.c_m_from_right,
                        p.c_m_combined,    p.regime.fractional_splitting};
    std::string out = "DQDX1";
    for (double x : v) out += ' ' + format_double(x);
    out += ' ';
    out += to_string(p.regime.label);
    out += '\n';
    return out;
}

} // namespace pdqd
