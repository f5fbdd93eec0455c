#pragma once

// ConductanceMap text format, version 1:
//
//   #DQDMAP v1
//   #vgl <start> <stop> <count>
//   #vgr <start> <stop> <count>
//   #bias <volts>
//   <count_vgr rows of count_vgl space-separated values, first row = vgr start>
//
// Numbers are written in shortest round-trip decimal form, lines end in '\n'.
// Also: plain-text portable graymap (P2) rendering, top image row = highest V_GR.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pdqd/error.hpp"
#include "pdqd/honeycomb.hpp"
#include "pdqd/network_file.hpp"

namespace pdqd {

inline std::string format_map(const ConductanceMap& m) {
    std::string out;
    out.reserve(m.values.size() * 12 + 128);
    const auto axis = [&](const char* tag, const GridAxis& a) {
        out += tag;
        out += ' ' + detail::format_double(a.start) + ' ' + detail::format_double(a.stop) + ' ' +
               std::to_string(a.count) + '\n';
    };
    out += "#DQDMAP v1\n";
    axis("#vgl", m.v_gl_axis);
    axis("#vgr", m.v_gr_axis);
    out += "#bias " + detail::format_double(m.bias) + '\n';
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) {
            if (c) out += ' ';
            out += detail::format_double(m.at(r, c));
        }
        out += '\n';
    }
    return out;
}

inline ConductanceMap parse_map(std::istream& in, const std::string& source = "map") {
    int lineno = 0;
    std::string line;
    const auto fail = [&](const std::string& msg) -> void {
        throw Error(ErrorKind::parse, source + ":" + std::to_string(lineno), msg);
    };
    const auto next = [&]() {
        ++lineno;
        if (!std::getline(in, line)) fail("unexpected end of file");
        if (!line.empty() && line.back() == '\r') line.pop_back();
    };
    const auto split = [](std::string_view s) {
        std::vector<std::string_view> tok;
        std::size_t i = 0;
        while (i < s.size()) {
            while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
            const std::size_t b = i;
            while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
            if (i > b) tok.push_back(s.substr(b, i - b));
        }
        return tok;
    };
    const auto read_axis = [&](const char* tag, GridAxis& a) {
        next();
        const auto tok = split(line);
        double count = 0.0;
        if (tok.size() != 4 || tok[0] != tag || !detail::parse_double(tok[1], a.start) ||
            !detail::parse_double(tok[2], a.stop) || !detail::parse_double(tok[3], count) ||
            count != std::floor(count) || count < 2 || count > 1e8)
            fail(std::string("malformed ") + tag + " header");
        a.count = static_cast<int>(count);
        if (!(a.stop > a.start)) fail(std::string(tag) + " stop must exceed start");
    };

    ConductanceMap m;
    next();
    if (line != "#DQDMAP v1") fail("missing `#DQDMAP v1` signature");
    read_axis("#vgl", m.v_gl_axis);
    read_axis("#vgr", m.v_gr_axis);
    next();
    {
        const auto tok = split(line);
        if (tok.size() != 2 || tok[0] != "#bias" || !detail::parse_double(tok[1], m.bias))
            fail("malformed #bias header");
    }
    m.values.resize(static_cast<std::size_t>(m.v_gl_axis.count) * m.v_gr_axis.count);
    for (int r = 0; r < m.v_gr_axis.count; ++r) {
        next();
        const auto tok = split(line);
        if (static_cast<int>(tok.size()) != m.v_gl_axis.count)
            fail("expected " + std::to_string(m.v_gl_axis.count) + " values, got " +
                 std::to_string(tok.size()));
        for (int c = 0; c < m.v_gl_axis.count; ++c) {
            double v = 0.0;
            if (!detail::parse_double(tok[static_cast<std::size_t>(c)], v) || !std::isfinite(v) || v < 0.0)
                fail("bad value in column " + std::to_string(c + 1));
            m.at(r, c) = v;
        }
    }
    ++lineno;
    while (std::getline(in, line)) {
        if (!detail::trim(line).empty()) fail("trailing content after last row");
        ++lineno;
    }
    return m;
}

inline ConductanceMap load_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, path, "cannot open map file");
    return parse_map(in, path);
}

/// 8-bit P2 graymap, linearly scaled from min to max.
inline std::string format_pgm(const ConductanceMap& m) {
    const auto [lo_it, hi_it] = std::minmax_element(m.values.begin(), m.values.end());
    const double lo = lo_it == m.values.end() ? 0.0 : *lo_it;
    const double hi = hi_it == m.values.end() ? 0.0 : *hi_it;
    const double span = hi > lo ? hi - lo : 1.0;
    std::string out = "P2\n" + std::to_string(m.cols()) + ' ' + std::to_string(m.rows()) + "\n255\n";
    for (int r = m.rows() - 1; r >= 0; --r) {
        for (int c = 0; c < m.cols(); ++c) {
            const long level = std::lround(255.0 * (m.at(r, c) - lo) / span);
            if (c) out += ' ';
            out += std::to_string(std::clamp<long>(level, 0, 255));
        }
        out += '\n';
    }
    return out;
}

/// Writes via a temporary sibling file and rename, so readers never observe
/// partial content.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::io, path.string(), "cannot open for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw Error(ErrorKind::io, path.string(), "write failed");
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorKind::io, path.string(), "rename failed");
    }
}

/// Key-value sidecar holding an analytic geometry (volts).
inline std::string format_geometry(const HoneycombGeometry& g) {
    std::ostringstream os;
    os << "dv_gl_V = " << detail::format_double(g.dv_gl) << '\n'
       << "dv_gr_V = " << detail::format_double(g.dv_gr) << '\n'
       << "dv_gl_m_V = " << detail::format_double(g.dv_gl_m) << '\n'
       << "dv_gr_m_V = " << detail::format_double(g.dv_gr_m) << '\n'
       << "delta_v_gl_V = " << detail::format_double(g.delta_v_gl) << '\n'
       << "delta_v_gr_V = " << detail::format_double(g.delta_v_gr) << '\n'
       << "bias_V = " << detail::format_double(g.bias) << '\n';
    return os.str();
}

inline HoneycombGeometry parse_geometry(std::istream& in, const std::string& source = "geometry") {
    HoneycombGeometry g;
    struct Key {
        const char* name;
        double HoneycombGeometry::*field;
        bool seen = false;
    };
    Key keys[] = {{"dv_gl_V", &HoneycombGeometry::dv_gl},
                  {"dv_gr_V", &HoneycombGeometry::dv_gr},
                  {"dv_gl_m_V", &HoneycombGeometry::dv_gl_m},
                  {"dv_gr_m_V", &HoneycombGeometry::dv_gr_m},
                  {"delta_v_gl_V", &HoneycombGeometry::delta_v_gl},
                  {"delta_v_gr_V", &HoneycombGeometry::delta_v_gr},
                  {"bias_V", &HoneycombGeometry::bias}};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view v(line);
        if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
        v = detail::trim(v);
        if (v.empty()) continue;
        const auto eq = v.find('=');
        double value = 0.0;
        const auto where = source + ":" + std::to_string(lineno);
        if (eq == std::string_view::npos || !detail::parse_double(v.substr(eq + 1), value))
            throw Error(ErrorKind::parse, where, "expected `key = number`");
        const auto name = detail::trim(v.substr(0, eq));
        bool matched = false;
        for (auto& k : keys) {
            if (name == k.name) {
                if (k.seen) throw Error(ErrorKind::parse, where, "duplicate key");
                k.seen = true;
                g.*(k.field) = value;
                matched = true;
            }
        }
        if (!matched) throw Error(ErrorKind::parse, where, "unknown key " + std::string(name));
    }
    for (const auto& k : keys) {
        if (!k.seen) throw Error(ErrorKind::parse, source, std::string("missing key ") + k.name);
    }
    return g;
}

} // namespace pdqd
