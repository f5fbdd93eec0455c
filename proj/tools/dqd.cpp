// dqd: simulate and analyse parallel double-dot stability diagrams.

#include <CLI11.hpp>

#include <iostream>

#include "pdqd/cli.hpp"

namespace {

using pdqd::cli::Command;
using pdqd::cli::RunConfig;

void add_grid_options(CLI::App* sub, RunConfig& cfg, std::vector<double>& window) {
    sub->add_option("--network", cfg.network_path, "network parameter file")->required();
    auto* w = sub->add_option("--window", window, "v_gl_start v_gl_stop v_gr_start v_gr_stop (V)")
                  ->expected(4);
    auto* cells = sub->add_option_function<double>(
        "--cells", [&cfg](double n) { cfg.cells = n; }, "window of N cells per axis around a vertex pair");
    w->excludes(cells);
    sub->add_option("--res", cfg.resolution, "grid points per axis")->capture_default_str();
    sub->add_option("--bias", cfg.bias, "source-drain bias (V)")->capture_default_str();
    sub->add_option("--noise", cfg.noise, "Gaussian noise sigma, fraction of map maximum")
        ->capture_default_str();
    sub->add_option("--seed", cfg.seed, "noise seed")->capture_default_str();
    sub->add_option("--threads", cfg.threads, "worker threads (0 = all cores)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Parallel double quantum dot stability diagrams: synthesis and parameter extraction"};
    app.require_subcommand(1);
    RunConfig cfg;
    std::vector<double> window;
    std::string dot = "left";

    auto* sim = app.add_subcommand("simulate", "write a conductance map, graymap and geometry sidecar");
    add_grid_options(sim, cfg, window);

    auto* ext = app.add_subcommand("extract", "extract device parameters from a map file");
    ext->add_option("--map", cfg.map_path, "map file (DQDMAP v1)")->required();

    auto* rt = app.add_subcommand("roundtrip", "simulate, extract and compare against the network");
    add_grid_options(rt, cfg, window);
    rt->add_option("--tol", cfg.tolerance, "relative tolerance")->capture_default_str();

    auto* sw = app.add_subcommand("sweep", "coupling regime table over interdot capacitances");
    sw->add_option("--network", cfg.network_path, "network parameter file")->required();
    auto* cm = sw->add_option("--cm", cfg.c_m, "interdot capacitances (aF)")->delimiter(',');
    auto* ecm = sw->add_option("--ecm", cfg.e_c_m, "coupling energies (meV), converted to C_m")
                    ->delimiter(',');
    cm->excludes(ecm);

    auto* dia = app.add_subcommand("diamonds", "single-dot Coulomb diamond vertices");
    dia->add_option("--network", cfg.network_path, "network parameter file")->required();
    dia->add_option("--dot", dot, "left or right")->check(CLI::IsMember({"left", "right"}));
    dia->add_option("--c-source", cfg.c_source, "source capacitance (aF)")->capture_default_str();
    dia->add_option("--count", cfg.diamonds, "number of diamonds")->capture_default_str();

    for (auto* sub : {sim, ext, rt, sw, dia})
        sub->add_option("--out", cfg.out_dir, "output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    if (sim->parsed()) cfg.command = Command::simulate;
    if (ext->parsed()) cfg.command = Command::extract;
    if (rt->parsed()) cfg.command = Command::roundtrip;
    if (sw->parsed()) cfg.command = Command::sweep;
    if (dia->parsed()) cfg.command = Command::diamonds;
    if (window.size() == 4) cfg.window = pdqd::VoltageWindow{window[0], window[1], window[2], window[3]};
    cfg.dot = dot == "right" ? pdqd::Dot::right : pdqd::Dot::left;

    return pdqd::cli::run(cfg, std::cout, std::cerr);
}
