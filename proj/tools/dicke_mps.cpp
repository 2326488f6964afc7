// dicke-mps: command-line driver for scans, slices, trajectory ensembles
// and peak-scaling analysis.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dicke_mps/dicke_mps.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::string out;
    int workers = 0;
    bool resume = false;
    std::optional<std::uint64_t> seed_base;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("-c,--config", f.config, "JSON config file")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", f.out, "output directory (overrides config)");
    cmd->add_option("-w,--workers", f.workers, "worker threads (overrides config)")->check(CLI::PositiveNumber);
    cmd->add_flag("--resume", f.resume, "continue an interrupted run in the same output directory");
    cmd->add_option("--seed-base", f.seed_base, "first trajectory seed (overrides config)");
}

dmps::ScanConfig load(const CommonFlags& f, dmps::ScanMode expected) {
    dmps::ScanConfig c = dmps::load_config(f.config);
    if (c.mode != expected)
        throw dmps::ConfigError("config mode is '" + dmps::to_string(c.mode) + "', expected '" + dmps::to_string(expected) + "'");
    if (!f.out.empty()) c.output = f.out;
    if (f.workers > 0) c.workers = f.workers;
    if (f.resume) c.resume = true;
    if (f.seed_base) c.trajectory.seed_base = *f.seed_base;
    if (c.output.empty()) throw dmps::ConfigError("no output directory (set \"output\" or pass --out)");
    c.validate();
    return c;
}

int summarize(const dmps::ScanTable& t) {
    std::size_t failed = 0, unconverged = 0;
    for (const auto& r : t.rows) {
        if (!r.error.empty()) ++failed;
        else if (!r.converged || !r.cutoff_valid) ++unconverged;
    }
    std::printf("%zu points written to %s (config %s)\n", t.rows.size(), t.file.string().c_str(), t.config_hash.c_str());
    if (unconverged) std::printf("%zu points without a convergence certificate\n", unconverged);
    if (failed) std::printf("%zu points failed; see the error column\n", failed);
    return failed ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dicke-Ising MPS simulator"};
    app.require_subcommand(1);

    CommonFlags scan_f, slice_f, traj_f;
    auto* scan = app.add_subcommand("scan", "simplex phase-diagram scan (h + J + g = 1)");
    add_common(scan, scan_f);
    auto* slice = app.add_subcommand("slice", "one-parameter slice with warm-start chaining");
    add_common(slice, slice_f);
    auto* traj = app.add_subcommand("trajectory", "homodyne trajectory ensemble from the ground state");
    add_common(traj, traj_f);

    std::vector<std::string> tables;
    double hc = 0.312;
    std::string analyze_out;
    auto* analyze = app.add_subcommand("analyze", "peak scaling of Var n / <n> across slice tables");
    analyze->add_option("tables", tables, "slice tables, one per system size")->required()->check(CLI::ExistingFile);
    analyze->add_option("--hc", hc, "reference transition point for the location fit");
    analyze->add_option("-o,--out", analyze_out, "write the analysis as JSON to this file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*scan) return summarize(dmps::run_simplex_scan(load(scan_f, dmps::ScanMode::simplex)));
        if (*slice) return summarize(dmps::run_slice(load(slice_f, dmps::ScanMode::slice)));
        if (*traj) {
            const auto c = load(traj_f, dmps::ScanMode::trajectory);
            const auto r = dmps::run_trajectory_ensemble(c);
            std::printf("%zu trajectories written to %s (config %s)\n", r.records.size(), c.output.c_str(),
                        r.config_hash.c_str());
            if (!r.failed_seeds.empty()) {
                std::printf("%zu trajectories failed:", r.failed_seeds.size());
                for (auto s : r.failed_seeds) std::printf(" %llu", static_cast<unsigned long long>(s));
                std::printf("\n");
                return 3;
            }
            return 0;
        }
        if (*analyze) {
            std::vector<dmps::SliceSeries> series;
            std::string variable;
            for (const auto& path : tables) {
                auto [t, var] = dmps::read_slice_table(path);
                if (!variable.empty() && var != variable) throw dmps::ConfigError("tables slice different variables");
                variable = var;
                series.push_back(dmps::slice_series(t, var));
            }
            const auto a = dmps::peak_scaling_analysis(series, hc);
            nlohmann::json j;
            j["variable"] = variable;
            j["reference"] = hc;
            for (const auto& p : a.peaks) {
                nlohmann::json e{{"L", p.L}};
                if (p.error.empty()) e.update({{"location", p.location}, {"height", p.height}});
                else e["error"] = p.error;
                j["peaks"].push_back(e);
            }
            j["height_exponent"] = {{"value", a.height.exponent}, {"stderr", a.height.exponent_stderr}, {"points", a.height.points}};
            j["location_exponent"] = {{"value", a.location.exponent}, {"stderr", a.location.exponent_stderr}, {"points", a.location.points}};
            const std::string text = j.dump(2);
            std::cout << text << "\n";
            if (!analyze_out.empty()) {
                std::ofstream os(analyze_out);
                os << text << "\n";
            }
            return 0;
        }
    } catch (const dmps::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
