#pragma once

// Network parameter file: flat `key = value` lines, `#` starts a comment.
//
//   c_sigma_left_aF   total capacitance of the left dot     (required)
//   c_sigma_right_aF  total capacitance of the right dot    (required)
//   c_m_aF            interdot capacitance                  (required)
//   c_gate_left_aF    left plunger gate to left dot         (required)
//   c_gate_right_aF   right plunger gate to right dot       (required)
//   temperature_mK    electron temperature                  (optional, 120)
//
// Unknown or repeated keys are errors.

#include <array>
#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>

#include "pdqd/capnet.hpp"
#include "pdqd/error.hpp"

namespace pdqd {

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    const auto* end = s.data() + s.size();
    const auto res = std::from_chars(s.data(), end, out);
    return res.ec == std::errc() && res.ptr == end;
}

inline std::string format_double(double v) {
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

} // namespace detail

inline CapacitanceNetwork parse_network(std::istream& in, const std::string& source = "network") {
    struct Key {
        const char* name;
        double NetworkParams::*field;
        bool required;
        bool seen = false;
    };
    std::array<Key, 6> keys{{
        {"c_sigma_left_aF", &NetworkParams::c_sigma_left, true},
        {"c_sigma_right_aF", &NetworkParams::c_sigma_right, true},
        {"c_m_aF", &NetworkParams::c_m, true},
        {"c_gate_left_aF", &NetworkParams::c_gate_left, true},
        {"c_gate_right_aF", &NetworkParams::c_gate_right, true},
        {"temperature_mK", &NetworkParams::temperature_e, false},
    }};
    NetworkParams p;
    std::string line;
    int lineno = 0;
    const auto fail = [&](const std::string& msg) {
        throw Error(ErrorKind::parse, source + ":" + std::to_string(lineno), msg);
    };
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view v(line);
        if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
        v = detail::trim(v);
        if (v.empty()) continue;
        const auto eq = v.find('=');
        if (eq == std::string_view::npos) fail("expected `key = value`");
        const auto name = detail::trim(v.substr(0, eq));
        double value = 0.0;
        if (!detail::parse_double(v.substr(eq + 1), value)) fail("bad number for " + std::string(name));
        bool matched = false;
        for (auto& k : keys) {
            if (name == k.name) {
                if (k.seen) fail("duplicate key " + std::string(name));
                k.seen = true;
                p.*(k.field) = value;
                matched = true;
            }
        }
        if (!matched) fail("unknown key " + std::string(name));
    }
    for (const auto& k : keys) {
        if (k.required && !k.seen)
            throw Error(ErrorKind::parse, source, std::string("missing key ") + k.name);
    }
    return CapacitanceNetwork(p);
}

inline CapacitanceNetwork load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, path, "cannot open network file");
    return parse_network(in, path);
}

inline std::string format_network(const CapacitanceNetwork& net) {
    std::ostringstream os;
    os << "c_sigma_left_aF = " << detail::format_double(net.c_sigma_left()) << '\n'
       << "c_sigma_right_aF = " << detail::format_double(net.c_sigma_right()) << '\n'
       << "c_m_aF = " << detail::format_double(net.c_m()) << '\n'
       << "c_gate_left_aF = " << detail::format_double(net.c_gate_left()) << '\n'
       << "c_gate_right_aF = " << detail::format_double(net.c_gate_right()) << '\n'
       << "temperature_mK = " << detail::format_double(net.temperature_e()) << '\n';
    return os.str();
}

} // namespace pdqd
