#pragma once

// Command implementations behind the `dqd` tool. Argument parsing lives in
// tools/dqd.cpp; everything here takes a RunConfig and returns an exit status.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pdqd/capnet.hpp"
#include "pdqd/error.hpp"
#include "pdqd/extract.hpp"
#include "pdqd/honeycomb.hpp"
#include "pdqd/map_io.hpp"
#include "pdqd/network_file.hpp"

namespace pdqd::cli {

enum class Command { simulate, extract, roundtrip, sweep, diamonds };

struct RunConfig {
    Command command = Command::simulate;
    std::string network_path;
    std::optional<VoltageWindow> window;
    std::optional<double> cells; // alternative to window
    int resolution = 401;
    double bias = 3e-4;  // V
    double noise = 0.0;  // sigma as a fraction of the map maximum
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    unsigned threads = 0; // 0: hardware concurrency

    std::string map_path;        // extract
    double tolerance = 0.03;     // roundtrip, relative
    std::vector<double> c_m;     // sweep, aF
    std::vector<double> e_c_m;   // sweep, meV (converted to C_m)
    double c_source = 0.0;       // diamonds, aF
    Dot dot = Dot::left;         // diamonds
    int diamonds = 3;            // diamonds
};

inline constexpr int kMinResolution = 16;

namespace detail {

inline unsigned thread_count(const RunConfig& cfg) {
    if (cfg.threads > 0) return cfg.threads;
    return std::max(1u, std::thread::hardware_concurrency());
}

inline void validate_config(const RunConfig& cfg) {
    const auto fail = [](const std::string& m) { throw Error(ErrorKind::validation, "config", m); };
    const bool needs_grid = cfg.command == Command::simulate || cfg.command == Command::roundtrip;
    if (needs_grid) {
        if (cfg.resolution < kMinResolution)
            fail("resolution must be >= " + std::to_string(kMinResolution));
        if (!std::isfinite(cfg.bias)) fail("bias must be finite");
        if (!(cfg.noise >= 0.0) || !std::isfinite(cfg.noise)) fail("noise must be >= 0");
        if (cfg.window && cfg.cells) fail("give either a window or a cell count, not both");
        if (cfg.cells && !(*cfg.cells > 0.0)) fail("cells must be > 0");
        if (cfg.window) {
            const auto& w = *cfg.window;
            if (!(w.v_gl_stop > w.v_gl_start) || !(w.v_gr_stop > w.v_gr_start))
                fail("window stop must exceed start on both axes");
        }
    }
    if (cfg.command != Command::extract && cfg.network_path.empty()) fail("a network file is required");
    if (cfg.command == Command::extract && cfg.map_path.empty()) fail("a map file is required");
    if (cfg.command == Command::roundtrip && !(cfg.tolerance > 0.0)) fail("tolerance must be > 0");
    if (cfg.command == Command::sweep && cfg.c_m.empty() && cfg.e_c_m.empty())
        fail("sweep needs a C_m or E_Cm list");
    if (cfg.command == Command::sweep && !cfg.c_m.empty() && !cfg.e_c_m.empty())
        fail("give either a C_m or an E_Cm list, not both");
    if (cfg.command == Command::diamonds && cfg.diamonds < 1) fail("diamond count must be >= 1");

    namespace fs = std::filesystem;
    const auto require_file = [&](const std::string& p, const char* what) {
        if (!p.empty() && !fs::is_regular_file(p))
            throw Error(ErrorKind::io, p, std::string(what) + " not found");
    };
    require_file(cfg.network_path, "network file");
    if (cfg.command == Command::extract) require_file(cfg.map_path, "map file");
    if (fs::exists(cfg.out_dir) && !fs::is_directory(cfg.out_dir))
        throw Error(ErrorKind::io, cfg.out_dir, "output path is not a directory");
}

inline std::filesystem::path prepare_out_dir(const RunConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw Error(ErrorKind::io, cfg.out_dir, "cannot create output directory");
    return cfg.out_dir;
}

inline VoltageWindow resolve_window(const RunConfig& cfg, const CapacitanceNetwork& net) {
    if (cfg.window) return *cfg.window;
    return window_for_cells(net, cfg.cells.value_or(3.0));
}

} // namespace detail

/// Adds seeded Gaussian noise with sigma = fraction * max(map), clamped at zero.
inline void add_noise(ConductanceMap& map, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || map.values.empty()) return;
    const double peak = *std::max_element(map.values.begin(), map.values.end());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, fraction * peak);
    for (auto& v : map.values) v = std::max(0.0, v + dist(rng));
}

/// Synthesized map for `cfg`, including noise.
inline ConductanceMap synthesize(const RunConfig& cfg, const CapacitanceNetwork& net) {
    const auto window = detail::resolve_window(cfg, net);
    SynthesisOptions opt;
    opt.threads = detail::thread_count(cfg);
    auto map = conductance_map(net, window, {cfg.resolution, cfg.resolution}, cfg.bias, 1.0, 1.0, opt);
    add_noise(map, cfg.noise, cfg.seed);
    return map;
}

inline int cmd_simulate(const RunConfig& cfg, std::ostream& out) {
    detail::validate_config(cfg);
    const auto net = load_network(cfg.network_path);
    const auto map = synthesize(cfg, net);
    const auto geometry = cell_dimensions(net, cfg.bias);
    const auto dir = detail::prepare_out_dir(cfg);
    write_file_atomic(dir / "map.dqdmap", format_map(map));
    write_file_atomic(dir / "map.pgm", format_pgm(map));
    write_file_atomic(dir / "geometry.txt", format_geometry(geometry));
    out << "wrote " << (dir / "map.dqdmap").string() << ", map.pgm, geometry.txt ("
        << map.cols() << "x" << map.rows() << ")\n";
    return 0;
}

inline int cmd_extract(const RunConfig& cfg, std::ostream& out) {
    detail::validate_config(cfg);
    const auto map = load_map(cfg.map_path);
    const auto result = extract_from_map(map);
    const auto report = format_report(result.params, result.diagnostics);
    const auto dir = detail::prepare_out_dir(cfg);
    write_file_atomic(dir / "report.txt", report);
    write_file_atomic(dir / "report.rec", format_record(result.params));
    out << report;
    return 0;
}

struct RoundTripRow {
    const char* name;
    double expected;
    double measured;
    double rel_error() const { return std::abs(measured / expected - 1.0); }
};

inline std::vector<RoundTripRow> roundtrip_rows(const CapacitanceNetwork& net,
                                                const ExtractedParameters& p) {
    std::vector<RoundTripRow> rows{
        {"c_gate_left_aF", net.c_gate_left(), p.c_gate_left},
        {"c_gate_right_aF", net.c_gate_right(), p.c_gate_right},
        {"c_sigma_left_aF", net.c_sigma_left(), p.c_sigma_left},
        {"c_sigma_right_aF", net.c_sigma_right(), p.c_sigma_right},
    };
    if (net.c_m() > 0.0) {
        rows.push_back({"c_m_from_left_aF", net.c_m(), p.c_m_from_left});
        rows.push_back({"c_m_from_right_aF", net.c_m(), p.c_m_from_right});
    }
    return rows;
}

inline int cmd_roundtrip(const RunConfig& cfg, std::ostream& out) {
    detail::validate_config(cfg);
    const auto net = load_network(cfg.network_path);
    const auto map = synthesize(cfg, net);
    const auto result = extract_from_map(map);
    bool ok = true;
    std::ostringstream os;
    os << "quantity expected measured rel_error status\n";
    for (const auto& r : roundtrip_rows(net, result.params)) {
        const bool pass = r.rel_error() <= cfg.tolerance;
        ok = ok && pass;
        os << r.name << ' ' << pdqd::detail::format_double(r.expected) << ' '
           << pdqd::detail::format_double(r.measured) << ' '
           << pdqd::detail::format_double(r.rel_error()) << ' ' << (pass ? "ok" : "FAIL") << '\n';
    }
    os << "roundtrip " << (ok ? "PASS" : "FAIL") << " tolerance "
       << pdqd::detail::format_double(cfg.tolerance) << '\n';
    const auto dir = detail::prepare_out_dir(cfg);
    write_file_atomic(dir / "roundtrip.txt", os.str());
    out << os.str();
    return ok ? 0 : exit_code(ErrorKind::fit);
}

struct SweepRow {
    double c_m = 0.0;
    std::optional<CouplingRegime> regime;
    double e_c_m = 0.0;
    double dv_gl_m = 0.0;
    double dv_gr_m = 0.0;
    std::string error;
};

/// One row per C_m in input order; invalid values carry an error message.
inline std::vector<SweepRow> sweep_rows(const CapacitanceNetwork& net, const std::vector<double>& c_m) {
    std::vector<SweepRow> rows;
    rows.reserve(c_m.size());
    for (double cm : c_m) {
        SweepRow row;
        row.c_m = cm;
        try {
            const auto n = net.with_c_m(cm);
            const auto g = cell_dimensions(n, 0.0);
            row.regime = classify_regime(n);
            row.e_c_m = n.energies().e_c_m;
            row.dv_gl_m = g.dv_gl_m;
            row.dv_gr_m = g.dv_gr_m;
        } catch (const Error& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline int cmd_sweep(const RunConfig& cfg, std::ostream& out) {
    detail::validate_config(cfg);
    const auto net = load_network(cfg.network_path);
    std::vector<double> c_m = cfg.c_m;
    std::vector<std::string> conversion_errors(cfg.e_c_m.size());
    for (std::size_t i = 0; i < cfg.e_c_m.size(); ++i) {
        try {
            c_m.push_back(interdot_capacitance_for_energy(net.c_sigma_left(), net.c_sigma_right(),
                                                          cfg.e_c_m[i]));
        } catch (const Error& e) {
            c_m.push_back(NAN);
            conversion_errors[i] = e.what();
        }
    }
    auto rows = sweep_rows(net, c_m);
    for (std::size_t i = 0; i < conversion_errors.size(); ++i) {
        if (!conversion_errors[i].empty()) rows[i].error = conversion_errors[i];
    }

    using pdqd::detail::format_double;
    std::ostringstream os;
    os << "c_m_aF\tf\tregime\te_c_m_meV\tdv_gl_m_V\tdv_gr_m_V\n";
    bool ok = true;
    for (const auto& r : rows) {
        if (!r.error.empty()) {
            ok = false;
            os << format_double(r.c_m) << "\terror\t" << r.error << '\n';
            continue;
        }
        os << format_double(r.c_m) << '\t' << format_double(r.regime->fractional_splitting) << '\t'
           << to_string(r.regime->label) << '\t' << format_double(r.e_c_m) << '\t'
           << format_double(r.dv_gl_m) << '\t' << format_double(r.dv_gr_m) << '\n';
    }
    const auto dir = detail::prepare_out_dir(cfg);
    write_file_atomic(dir / "sweep.tsv", os.str());
    out << os.str();
    return ok ? 0 : exit_code(ErrorKind::validation);
}

inline std::string format_diamonds(const DiamondSet& set) {
    using pdqd::detail::format_double;
    std::ostringstream os;
    os << "# " << set.bias_convention << '\n'
       << "gate_period_V = " << format_double(set.gate_period) << '\n'
       << "half_height_V = " << format_double(set.half_height) << '\n'
       << "addition_energy_meV = " << format_double(set.addition_energy) << '\n'
       << "lever_arm = " << format_double(set.lever_arm) << '\n'
       << "slope_rising = " << format_double(set.slope_rising) << '\n'
       << "slope_falling = "
       << (set.slope_falling ? format_double(*set.slope_falling) : std::string("vertical")) << '\n'
       << "# occupation, then (v_gate_V, v_bias_V) for left, top, right, bottom vertices\n";
    for (const auto& d : set.diamonds) {
        os << d.occupation;
        for (const auto& v : d.vertices) os << ' ' << format_double(v.v_gate) << ' ' << format_double(v.v_bias);
        os << '\n';
    }
    return os.str();
}

inline int cmd_diamonds(const RunConfig& cfg, std::ostream& out) {
    detail::validate_config(cfg);
    const auto net = load_network(cfg.network_path);
    const auto set = coulomb_diamonds(net.c_gate(cfg.dot), cfg.c_source, net.c_sigma(cfg.dot), cfg.diamonds);
    const auto text = format_diamonds(set);
    const auto dir = detail::prepare_out_dir(cfg);
    write_file_atomic(dir / "diamonds.txt", text);
    out << text;
    return 0;
}

/// Runs one command; library errors become a stage-labelled message on `err`
/// and the matching exit status.
inline int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    try {
        switch (cfg.command) {
        case Command::simulate:
            return cmd_simulate(cfg, out);
        case Command::extract:
            return cmd_extract(cfg, out);
        case Command::roundtrip:
            return cmd_roundtrip(cfg, out);
        case Command::sweep:
            return cmd_sweep(cfg, out);
        case Command::diamonds:
            return cmd_diamonds(cfg, out);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

} // namespace pdqd::cli
