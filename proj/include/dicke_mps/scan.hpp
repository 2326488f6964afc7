#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dicke_mps/checkpoint.hpp"
#include "dicke_mps/dynamics.hpp"
#include "dicke_mps/errors.hpp"
#include "dicke_mps/groundstate.hpp"
#include "dicke_mps/observables.hpp"
#include "dicke_mps/record.hpp"

namespace dmps {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kScanFormatVersion = 1;

// ---------------------------------------------------------------------------
// Configuration

enum class ScanMode { simplex, slice, trajectory };

struct SolverSettings {
    TruncationSpec spec{64, 1e-12, 0.0};
    double variance_tol = 1e-10;
    int sweep_cap = 40;
    std::uint64_t seed = 12345;
    /// Number of gaps E_k - E_0 to compute (0: ground state only).
    int gaps = 2;
};

struct TrajectorySettings {
    double kappa = 0.5;
    double t_final = 1.0;
    double dt = 0.0;  ///< 0 selects default_time_step
    int seeds = 1;
    std::uint64_t seed_base = 1;
    int observables_every = 5;
    int krylov_dim = 8;
    ParitySector init_sector = ParitySector::automatic;
    bool keep_rho = true;
};

struct ScanConfig {
    ScanMode mode = ScanMode::simplex;
    ModelParams model;  ///< fixed parameters; n_max <= 0 selects the default rule
    int resolution = 4;
    std::string slice_variable = "h";
    double slice_start = 0.0, slice_stop = 1.0;
    int slice_steps = 11;
    bool warm_start = true;
    SolverSettings solver;
    std::optional<double> temperature;
    int thermal_states = 4;
    TrajectorySettings trajectory;
    std::vector<std::string> observables;
    std::string output;  ///< directory; empty keeps results in memory only
    int workers = 1;
    bool resume = false;

    void validate() const {
        if (!(model.omega > 0.0) || model.h < 0 || model.J < 0 || model.g < 0 || model.L < 1)
            throw ConfigError("model parameters out of range");
        if (mode == ScanMode::simplex && resolution < 1) throw ConfigError("simplex.resolution must be >= 1");
        if (mode == ScanMode::slice) {
            if (slice_steps < 1) throw ConfigError("slice.steps must be >= 1");
            if (slice_variable != "h" && slice_variable != "J" && slice_variable != "g")
                throw ConfigError("slice.variable must be h, J or g");
        }
        if (workers < 1) throw ConfigError("workers must be >= 1");
        if (solver.gaps < 0) throw ConfigError("solver.gaps must be >= 0");
        if (temperature && !(*temperature > 0.0)) throw ConfigError("temperature must be > 0");
        if (mode == ScanMode::trajectory) {
            const auto& t = trajectory;
            if (t.kappa < 0 || !(t.t_final > 0) || t.seeds < 1 || t.observables_every < 1 || t.krylov_dim < 2 || t.dt < 0)
                throw ConfigError("trajectory settings out of range");
        }
        solver.spec.validate();
    }
};

inline std::string to_string(ScanMode m) {
    return m == ScanMode::simplex ? "simplex" : m == ScanMode::slice ? "slice" : "trajectory";
}

inline ParitySector parse_sector(const std::string& s) {
    if (s == "auto" || s == "automatic") return ParitySector::automatic;
    if (s == "even") return ParitySector::even;
    if (s == "odd") return ParitySector::odd;
    if (s == "none") return ParitySector::none;
    throw ConfigError("unknown parity sector '" + s + "'");
}

inline std::string to_string(ParitySector s) {
    switch (s) {
        case ParitySector::even: return "even";
        case ParitySector::odd: return "odd";
        case ParitySector::none: return "none";
        default: return "auto";
    }
}

/// Reads the JSON config; unknown keys are rejected so typos surface.
inline ScanConfig parse_config(const json& j) {
    auto check_keys = [](const json& obj, const std::vector<std::string>& allowed, const std::string& where) {
        if (!obj.is_object()) throw ConfigError(where + " must be an object");
        for (const auto& [k, v] : obj.items())
            if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
                throw ConfigError("unknown key '" + k + "' in " + where);
    };
    ScanConfig c;
    try {
        check_keys(j, {"mode", "model", "simplex", "slice", "solver", "temperature", "thermal_states", "trajectory",
                       "observables", "output", "workers", "resume", "warm_start"},
                   "config");
        const std::string mode = j.value("mode", "simplex");
        if (mode == "simplex") c.mode = ScanMode::simplex;
        else if (mode == "slice") c.mode = ScanMode::slice;
        else if (mode == "trajectory") c.mode = ScanMode::trajectory;
        else throw ConfigError("unknown mode '" + mode + "'");
        c.model.n_max = 0;
        if (j.contains("model")) {
            const auto& m = j["model"];
            check_keys(m, {"omega", "h", "J", "g", "L", "n_max"}, "model");
            c.model.omega = m.value("omega", 1.0);
            c.model.h = m.value("h", 0.0);
            c.model.J = m.value("J", 0.0);
            c.model.g = m.value("g", 0.0);
            c.model.L = m.value("L", 8);
            c.model.n_max = m.value("n_max", 0);
        } else {
            c.model.L = 8;
        }
        if (j.contains("simplex")) {
            check_keys(j["simplex"], {"resolution"}, "simplex");
            c.resolution = j["simplex"].value("resolution", 4);
        }
        if (j.contains("slice")) {
            const auto& s = j["slice"];
            check_keys(s, {"variable", "start", "stop", "steps"}, "slice");
            c.slice_variable = s.value("variable", "h");
            c.slice_start = s.value("start", 0.0);
            c.slice_stop = s.value("stop", 1.0);
            c.slice_steps = s.value("steps", 11);
        }
        if (j.contains("solver")) {
            const auto& s = j["solver"];
            check_keys(s, {"max_bond", "rel_tol", "keep_weight", "variance_tol", "sweep_cap", "seed", "gaps"}, "solver");
            c.solver.spec.max_rank = s.value("max_bond", std::size_t{64});
            c.solver.spec.rel_tol = s.value("rel_tol", 1e-12);
            c.solver.spec.keep_weight = s.value("keep_weight", 0.0);
            c.solver.variance_tol = s.value("variance_tol", 1e-10);
            c.solver.sweep_cap = s.value("sweep_cap", 40);
            c.solver.seed = s.value("seed", std::uint64_t{12345});
            c.solver.gaps = s.value("gaps", 2);
        }
        if (j.contains("temperature") && !j["temperature"].is_null()) c.temperature = j["temperature"].get<double>();
        c.thermal_states = j.value("thermal_states", 4);
        if (j.contains("trajectory")) {
            const auto& t = j["trajectory"];
            check_keys(t, {"kappa", "t_final", "dt", "seeds", "seed_base", "observables_every", "krylov_dim", "init_sector",
                           "keep_rho"},
                       "trajectory");
            c.trajectory.kappa = t.value("kappa", 0.5);
            c.trajectory.t_final = t.value("t_final", 1.0);
            c.trajectory.dt = t.value("dt", 0.0);
            c.trajectory.seeds = t.value("seeds", 1);
            c.trajectory.seed_base = t.value("seed_base", std::uint64_t{1});
            c.trajectory.observables_every = t.value("observables_every", 5);
            c.trajectory.krylov_dim = t.value("krylov_dim", 8);
            c.trajectory.init_sector = parse_sector(t.value("init_sector", "auto"));
            c.trajectory.keep_rho = t.value("keep_rho", true);
        }
        if (j.contains("observables")) c.observables = j["observables"].get<std::vector<std::string>>();
        c.output = j.value("output", "");
        c.workers = j.value("workers", 1);
        c.resume = j.value("resume", false);
        c.warm_start = j.value("warm_start", true);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline ScanConfig load_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(is, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_config(j);
}

/// Canonical JSON of everything that affects results (not output, workers, resume).
inline json config_to_json(const ScanConfig& c) {
    json j;
    j["mode"] = to_string(c.mode);
    j["model"] = {{"omega", c.model.omega}, {"h", c.model.h}, {"J", c.model.J}, {"g", c.model.g},
                  {"L", c.model.L}, {"n_max", c.model.n_max}};
    if (c.mode == ScanMode::simplex) j["simplex"] = {{"resolution", c.resolution}};
    if (c.mode == ScanMode::slice) {
        j["slice"] = {{"variable", c.slice_variable}, {"start", c.slice_start}, {"stop", c.slice_stop}, {"steps", c.slice_steps}};
        j["warm_start"] = c.warm_start;
    }
    j["solver"] = {{"max_bond", c.solver.spec.max_rank}, {"rel_tol", c.solver.spec.rel_tol},
                   {"keep_weight", c.solver.spec.keep_weight}, {"variance_tol", c.solver.variance_tol},
                   {"sweep_cap", c.solver.sweep_cap}, {"seed", c.solver.seed}, {"gaps", c.solver.gaps}};
    if (c.temperature) {
        j["temperature"] = *c.temperature;
        j["thermal_states"] = c.thermal_states;
    }
    if (c.mode == ScanMode::trajectory) {
        const auto& t = c.trajectory;
        j["trajectory"] = {{"kappa", t.kappa}, {"t_final", t.t_final}, {"dt", t.dt}, {"seeds", t.seeds},
                           {"seed_base", t.seed_base}, {"observables_every", t.observables_every},
                           {"krylov_dim", t.krylov_dim}, {"init_sector", to_string(t.init_sector)},
                           {"keep_rho", t.keep_rho}};
    }
    j["observables"] = c.observables;
    return j;
}

/// FNV-1a 64 of the canonical config, as 16 hex digits.
inline std::string config_hash(const ScanConfig& c) {
    const std::string s = config_to_json(c).dump();
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

// ---------------------------------------------------------------------------
// Grids

inline ModelParams with_default_cutoff(ModelParams p, int configured_n_max) {
    p.n_max = configured_n_max > 0 ? configured_n_max : ModelParams::default_n_max(p.g, p.L, p.omega);
    return p;
}

/// Barycentric grid h + J + g = 1 with spacing 1/R, omega fixed.
inline std::vector<ModelParams> simplex_grid(const ScanConfig& c) {
    std::vector<ModelParams> out;
    const int R = c.resolution;
    for (int i = 0; i <= R; ++i)
        for (int j = 0; j <= R - i; ++j) {
            const int k = R - i - j;
            ModelParams p = c.model;
            p.h = double(i) / R;
            p.J = double(j) / R;
            p.g = 1.0 - p.h - p.J;
            if (k == 0) p.g = 0.0;
            out.push_back(with_default_cutoff(p, c.model.n_max));
        }
    return out;
}

inline std::vector<ModelParams> slice_grid(const ScanConfig& c) {
    std::vector<ModelParams> out;
    for (int k = 0; k < c.slice_steps; ++k) {
        const double x =
            c.slice_steps == 1 ? c.slice_start : c.slice_start + (c.slice_stop - c.slice_start) * k / (c.slice_steps - 1);
        ModelParams p = c.model;
        (c.slice_variable == "h" ? p.h : c.slice_variable == "J" ? p.J : p.g) = x;
        out.push_back(with_default_cutoff(p, c.model.n_max));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-point solve

struct ScanRow {
    std::size_t index = 0;
    ModelParams params;
    bool converged = false;
    bool cutoff_valid = false;
    double energy = NAN, variance = NAN;
    double n_per_site = NAN, n_mean = NAN, n_var = NAN, fano = NAN;
    double gap1 = NAN, gap2 = NAN;
    double xi = NAN, xi_residual = NAN;
    double parity = NAN, top_fock = NAN;
    std::size_t max_bond = 0;
    int sweeps = 0;
    double thermal_n = NAN;
    std::string error;  ///< empty when the point succeeded
};

inline const std::vector<std::string>& scan_columns() {
    static const std::vector<std::string> cols{
        "index",   "omega",  "h",     "J",     "g",          "L",      "n_max",    "converged", "cutoff_valid",
        "energy",  "variance", "n_per_site", "n_mean", "n_var", "fano", "gap1", "gap2", "xi", "xi_residual",
        "parity",  "top_fock", "max_bond", "sweeps", "thermal_n", "error"};
    return cols;
}

inline std::string format_row(const ScanRow& r) {
    std::ostringstream os;
    os << std::setprecision(17);
    std::string err = r.error.empty() ? "-" : r.error;
    std::replace(err.begin(), err.end(), '\t', ' ');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << r.index << '\t' << r.params.omega << '\t' << r.params.h << '\t' << r.params.J << '\t' << r.params.g << '\t'
       << r.params.L << '\t' << r.params.n_max << '\t' << int(r.converged) << '\t' << int(r.cutoff_valid) << '\t'
       << r.energy << '\t' << r.variance << '\t' << r.n_per_site << '\t' << r.n_mean << '\t' << r.n_var << '\t' << r.fano
       << '\t' << r.gap1 << '\t' << r.gap2 << '\t' << r.xi << '\t' << r.xi_residual << '\t' << r.parity << '\t'
       << r.top_fock << '\t' << r.max_bond << '\t' << r.sweeps << '\t' << r.thermal_n << '\t' << err;
    return os.str();
}

inline double parse_double(const std::string& s) {
    if (s == "nan" || s == "-nan") return NAN;
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    return std::stod(s);
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, '\t')) out.push_back(cur);
    return out;
}

inline ScanRow parse_row(const std::string& line) {
    const auto f = split_tabs(line);
    if (f.size() != scan_columns().size()) throw std::runtime_error("scan row: wrong column count");
    ScanRow r;
    std::size_t k = 0;
    r.index = std::stoull(f[k++]);
    r.params.omega = parse_double(f[k++]);
    r.params.h = parse_double(f[k++]);
    r.params.J = parse_double(f[k++]);
    r.params.g = parse_double(f[k++]);
    r.params.L = std::stoi(f[k++]);
    r.params.n_max = std::stoi(f[k++]);
    r.converged = f[k++] == "1";
    r.cutoff_valid = f[k++] == "1";
    for (double* d : {&r.energy, &r.variance, &r.n_per_site, &r.n_mean, &r.n_var, &r.fano, &r.gap1, &r.gap2, &r.xi,
                      &r.xi_residual, &r.parity, &r.top_fock})
        *d = parse_double(f[k++]);
    r.max_bond = std::stoull(f[k++]);
    r.sweeps = std::stoi(f[k++]);
    r.thermal_n = parse_double(f[k++]);
    r.error = f[k] == "-" ? "" : f[k];
    return r;
}

struct PointOutcome {
    ScanRow row;
    std::optional<MPSState> state;
};

inline PointOutcome solve_point(std::size_t index, const ModelParams& p, const ScanConfig& c,
                                const std::optional<MPSState>& warm) {
    PointOutcome out;
    ScanRow& row = out.row;
    row.index = index;
    row.params = p;
    try {
        p.validate();
        const MPOperator h = build_dicke_ising_mpo(p);
        GroundStateOptions go;
        go.spec = c.solver.spec;
        go.variance_tol = c.solver.variance_tol;
        go.sweep_cap = c.solver.sweep_cap;
        go.seed = c.solver.seed;
        if (warm && warm->specs == h.specs) go.init = *warm;
        const int k = std::max(c.solver.gaps + 1, c.temperature ? c.thermal_states : 1);
        MPSState gs;
        ConvergenceReport rep;
        std::optional<EigenstateSet> set;
        if (k > 1) {
            ExcitedStateOptions eo;
            eo.ground = go;
            set = excited_states(h, k, eo);
            gs = set->states[0];
            rep = set->reports[0];
            const auto gaps = set->gaps();
            if (!gaps.empty() && c.solver.gaps >= 1) row.gap1 = gaps[0];
            if (gaps.size() > 1 && c.solver.gaps >= 2) row.gap2 = gaps[1];
        } else {
            auto r = ground_state(h, go);
            gs = std::move(r.state);
            rep = r.report;
        }
        row.converged = rep.converged;
        row.cutoff_valid = rep.cutoff_valid();
        row.energy = rep.energy;
        row.variance = rep.energy_variance;
        row.parity = rep.parity;
        row.top_fock = rep.top_fock_population;
        row.max_bond = rep.max_bond;
        row.sweeps = rep.sweeps_used;
        const auto ps = photon_stats(gs);
        row.n_mean = ps.mean;
        row.n_var = ps.variance;
        row.n_per_site = ps.mean / p.L;
        row.fano = ps.mean > 0.0 ? ps.variance / ps.mean : NAN;
        if (p.L >= 4) {
            const auto prof = sigma_y_correlations(gs);
            row.xi = prof.fit.xi ? *prof.fit.xi : INFINITY;  // inf marks "no decay"
            row.xi_residual = prof.fit.residual;
        }
        if (c.temperature) {
            const MPOperator num = local_product_mpo(h.specs, {{oscillator_position(h.specs), ops::number(p.n_max)}});
            if (set) row.thermal_n = thermal_average(*set, *c.temperature, num).value;
            else row.thermal_n = ps.mean;
        }
        out.state = std::move(gs);
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Execution

/// Runs fn(job) for jobs [0, n) on `workers` threads; jobs are claimed in
/// increasing order.
inline void run_jobs(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    std::atomic<std::size_t> next{0};
    auto loop = [&] {
        for (std::size_t j = next++; j < n; j = next++) fn(j);
    };
    const int w = std::max(1, std::min<int>(workers, static_cast<int>(n)));
    if (w == 1) {
        loop();
        return;
    }
    std::vector<std::thread> pool;
    for (int i = 0; i < w; ++i) pool.emplace_back(loop);
    for (auto& t : pool) t.join();
}

/// Buffers out-of-order results and emits them in index order.
class OrderedWriter {
public:
    OrderedWriter(std::size_t first, std::function<void(const ScanRow&)> sink) : next_(first), sink_(std::move(sink)) {}

    void push(ScanRow row) {
        std::lock_guard<std::mutex> lock(mu_);
        pending_.emplace(row.index, std::move(row));
        while (!pending_.empty() && pending_.begin()->first == next_) {
            sink_(pending_.begin()->second);
            pending_.erase(pending_.begin());
            ++next_;
        }
    }

private:
    std::mutex mu_;
    std::size_t next_;
    std::map<std::size_t, ScanRow> pending_;
    std::function<void(const ScanRow&)> sink_;
};

struct ScanTable {
    std::string config_hash;
    ScanMode mode = ScanMode::simplex;
    std::vector<ScanRow> rows;
    fs::path file;  ///< empty when not written
};

inline std::string scan_file_name(ScanMode m) { return m == ScanMode::slice ? "slice.tsv" : "scan.tsv"; }

inline void write_scan_header(std::ostream& os, const ScanConfig& c, const std::string& hash) {
    os << "# dicke-mps scan format " << kScanFormatVersion << "\n";
    os << "# config_hash " << hash << "\n";
    os << "# mode " << to_string(c.mode) << "\n";
    if (c.mode == ScanMode::slice) os << "# slice_variable " << c.slice_variable << "\n";
    os << "# config " << config_to_json(c).dump() << "\n";
    os << "# xi_fit connected <sy sy>, spins within L/8 of either end excluded, 2 <= r <= L/2, log-linear least squares\n";
    for (std::size_t k = 0; k < scan_columns().size(); ++k) os << (k ? "\t" : "") << scan_columns()[k];
    os << "\n";
}

/// Reads an existing table, keeping only complete rows. Throws if the file
/// was produced by a different configuration.
inline std::vector<ScanRow> read_scan_rows(const fs::path& path, const std::string& expect_hash = "") {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::vector<ScanRow> rows;
    std::istringstream ls(content);
    std::string line;
    bool header_seen = false;
    std::size_t consumed = 0;
    while (std::getline(ls, line)) {
        consumed += line.size() + 1;
        const bool terminated = consumed <= content.size();
        if (line.rfind("# config_hash ", 0) == 0 && !expect_hash.empty() && line.substr(14) != expect_hash)
            throw ConfigError("resume: " + path.string() + " was written by a different configuration");
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        if (!terminated) break;  // interrupted mid-row
        try {
            rows.push_back(parse_row(line));
        } catch (const std::exception&) {
            break;
        }
    }
    return rows;
}

namespace detail {

inline fs::path checkpoint_path(const ScanConfig& c, std::size_t index) {
    return fs::path(c.output) / "checkpoints" / ("point_" + std::to_string(index) + ".ckpt");
}

/// Shared driver for simplex scans and slices. For slices with warm start
/// the grid is cut into one contiguous chunk per worker, each chained
/// through the previous point's state (checkpointed for resume).
inline ScanTable run_grid(const ScanConfig& c, const std::vector<ModelParams>& grid) {
    c.validate();
    if (grid.empty()) throw ConfigError("empty parameter grid");
    ScanTable table;
    table.mode = c.mode;
    table.config_hash = config_hash(c);
    const bool to_disk = !c.output.empty();
    const bool chained = c.mode == ScanMode::slice && c.warm_start;

    std::size_t done = 0;
    std::ofstream out;
    if (to_disk) {
        fs::create_directories(c.output);
        if (chained) fs::create_directories(fs::path(c.output) / "checkpoints");
        table.file = fs::path(c.output) / scan_file_name(c.mode);
        if (c.resume && fs::exists(table.file)) table.rows = read_scan_rows(table.file, table.config_hash);
        done = table.rows.size();
        // rewrite header and the surviving rows, dropping any torn tail
        std::ofstream fresh(table.file, std::ios::trunc);
        write_scan_header(fresh, c, table.config_hash);
        for (const auto& r : table.rows) fresh << format_row(r) << "\n";
        fresh.close();
        out.open(table.file, std::ios::app);
    }

    std::mutex rows_mu;
    OrderedWriter writer(done, [&](const ScanRow& r) {
        if (to_disk) {
            out << format_row(r) << "\n";
            out.flush();
        }
        table.rows.push_back(r);
    });

    if (!chained) {
        run_jobs(grid.size() - done, c.workers, [&](std::size_t j) {
            const std::size_t idx = done + j;
            writer.push(solve_point(idx, grid[idx], c, std::nullopt).row);
        });
    } else {
        const std::size_t n = grid.size();
        const auto w = static_cast<std::size_t>(std::max(1, std::min<int>(c.workers, static_cast<int>(n))));
        std::vector<std::pair<std::size_t, std::size_t>> chunks;
        for (std::size_t k = 0; k < w; ++k) chunks.emplace_back(k * n / w, (k + 1) * n / w);
        run_jobs(chunks.size(), static_cast<int>(w), [&](std::size_t ci) {
            auto [lo, hi] = chunks[ci];
            std::optional<MPSState> warm;
            std::size_t start = std::max(lo, done);
            if (start >= hi) return;
            if (start > lo && to_disk && fs::exists(checkpoint_path(c, start - 1)))
                warm = load_checkpoint(checkpoint_path(c, start - 1));
            for (std::size_t idx = start; idx < hi; ++idx) {
                PointOutcome o = solve_point(idx, grid[idx], c, warm);
                if (o.state) {
                    warm = o.state;
                    if (to_disk) save_checkpoint(checkpoint_path(c, idx), *o.state);
                }
                writer.push(std::move(o.row));
            }
        });
    }
    std::sort(table.rows.begin(), table.rows.end(), [](const ScanRow& a, const ScanRow& b) { return a.index < b.index; });
    return table;
}

}  // namespace detail

inline ScanTable run_simplex_scan(const ScanConfig& c) {
    if (c.mode != ScanMode::simplex) throw ConfigError("run_simplex_scan: mode must be simplex");
    return detail::run_grid(c, simplex_grid(c));
}

inline ScanTable run_slice(const ScanConfig& c) {
    if (c.mode != ScanMode::slice) throw ConfigError("run_slice: mode must be slice");
    return detail::run_grid(c, slice_grid(c));
}

// ---------------------------------------------------------------------------
// Trajectory ensembles

/// Reads a trajectory file written by write_trajectory (rho not included).
inline TrajectoryRecord read_trajectory(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    TrajectoryRecord rec;
    rec.complete = false;
    std::string line;
    bool columns = false;
    while (std::getline(is, line)) {
        if (line.rfind("# ", 0) == 0) {
            std::istringstream ls(line.substr(2));
            std::string key;
            ls >> key;
            if (key == "seed") ls >> rec.seed;
            else if (key == "kappa") ls >> rec.kappa;
            else if (key == "dt") ls >> rec.dt;
            else if (key == "end") rec.complete = true;
            else if (key == "failure") std::getline(ls >> std::ws, rec.failure);
            else if (key == "params") {
                std::string kv;
                while (ls >> kv) {
                    const auto eq = kv.find('=');
                    const std::string k = kv.substr(0, eq);
                    const double v = std::stod(kv.substr(eq + 1));
                    if (k == "omega") rec.params.omega = v;
                    else if (k == "h") rec.params.h = v;
                    else if (k == "J") rec.params.J = v;
                    else if (k == "g") rec.params.g = v;
                    else if (k == "L") rec.params.L = static_cast<int>(v);
                    else if (k == "n_max") rec.params.n_max = static_cast<int>(v);
                }
            }
            continue;
        }
        if (!columns) {
            columns = true;
            continue;
        }
        const auto f = split_tabs(line);
        if (f.size() != 7) break;
        rec.times.push_back(parse_double(f[0]));
        rec.dy.push_back(parse_double(f[1]));
        rec.q_mean.push_back(parse_double(f[2]));
        rec.n_mean.push_back(parse_double(f[3]));
        rec.entropy_osc.push_back(parse_double(f[4]));
        rec.parity.push_back(parse_double(f[5]));
        rec.norm_drift.push_back(parse_double(f[6]));
    }
    return rec;
}

/// Oscillator density matrices at the recorded times, raw binary.
inline void save_rho_series(const fs::path& path, const std::vector<MatrixXc>& rho) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        const std::uint64_t n = rho.size(), d = rho.empty() ? 0 : static_cast<std::uint64_t>(rho[0].rows());
        detail::put(os, n);
        detail::put(os, d);
        for (const auto& m : rho) os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(d * d * sizeof(cplx)));
    }
    fs::rename(tmp, path);
}

inline std::vector<MatrixXc> load_rho_series(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    const auto n = detail::get<std::uint64_t>(is);
    const auto d = detail::get<std::uint64_t>(is);
    std::vector<MatrixXc> out(n, MatrixXc(d, d));
    for (auto& m : out) {
        is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(d * d * sizeof(cplx)));
        if (!is) throw std::runtime_error("truncated " + path.string());
    }
    return out;
}

struct EnsembleResult {
    std::vector<TrajectoryRecord> records;  ///< every seed, in seed order
    std::vector<std::uint64_t> failed_seeds;
    std::optional<EnsembleStatistics> stats;  ///< over complete records
    ConvergenceReport initial_report;
    std::string config_hash;
};

inline void write_ensemble(std::ostream& os, const EnsembleResult& r, const ScanConfig& c) {
    os << "# dicke-mps ensemble format " << kTrajectoryFormatVersion << "\n";
    os << "# config_hash " << r.config_hash << "\n";
    os << "# config " << config_to_json(c).dump() << "\n";
    os << "# trajectories " << r.records.size() << " complete " << (r.stats ? r.stats->count : 0) << "\n";
    if (!r.failed_seeds.empty()) {
        os << "# failed_seeds";
        for (auto s : r.failed_seeds) os << ' ' << s;
        os << "\n";
    }
    os << std::setprecision(17);
    os << "t\tcount\tq_mean\tq_var\tn_mean\tn_var\tS_mean\tS_var\tP_mean\tP_var\tS_mean_state\n";
    if (r.stats) {
        const auto& s = *r.stats;
        for (std::size_t k = 0; k < s.times.size(); ++k) {
            const double sm = k < s.entropy_of_mean_state.size() ? s.entropy_of_mean_state[k] : NAN;
            os << s.times[k] << '\t' << s.count << '\t' << s.q.mean[k] << '\t' << s.q.variance[k] << '\t' << s.n.mean[k]
               << '\t' << s.n.variance[k] << '\t' << s.entropy.mean[k] << '\t' << s.entropy.variance[k] << '\t'
               << s.parity.mean[k] << '\t' << s.parity.variance[k] << '\t' << sm << '\n';
        }
    }
    os << "# end\n";
}

/// Ground state once, then one trajectory per seed on a worker pool.
/// Completed trajectory files are reused on resume.
inline EnsembleResult run_trajectory_ensemble(const ScanConfig& c) {
    if (c.mode != ScanMode::trajectory) throw ConfigError("run_trajectory_ensemble: mode must be trajectory");
    c.validate();
    EnsembleResult res;
    res.config_hash = config_hash(c);
    const ModelParams p = with_default_cutoff(c.model, c.model.n_max);
    const MPOperator h = build_dicke_ising_mpo(p);
    const bool to_disk = !c.output.empty();
    if (to_disk) fs::create_directories(c.output);

    GroundStateOptions go;
    go.spec = c.solver.spec;
    go.variance_tol = c.solver.variance_tol;
    go.sweep_cap = c.solver.sweep_cap;
    go.seed = c.solver.seed;
    go.sector = c.trajectory.init_sector;
    std::optional<MPSState> init;
    const fs::path init_ckpt = to_disk ? fs::path(c.output) / "initial_state.ckpt" : fs::path();
    if (to_disk && c.resume && fs::exists(init_ckpt)) {
        init = load_checkpoint(init_ckpt);
        fill_report_observables(*init, h, res.initial_report);
    } else {
        auto gs = ground_state(h, go);
        res.initial_report = gs.report;
        init = std::move(gs.state);
        if (to_disk) save_checkpoint(init_ckpt, *init);
    }

    TrajectoryOptions to;
    to.kappa = c.trajectory.kappa;
    to.t_final = c.trajectory.t_final;
    to.krylov.subspace_dim = c.trajectory.krylov_dim;
    to.krylov.fit_spec = c.solver.spec;
    to.krylov.step_dt = c.trajectory.dt > 0.0 ? c.trajectory.dt : default_time_step(p.omega, c.trajectory.kappa);
    to.observables_every = c.trajectory.observables_every;
    to.keep_rho = c.trajectory.keep_rho;

    const auto n = static_cast<std::size_t>(c.trajectory.seeds);
    res.records.resize(n);
    run_jobs(n, c.workers, [&](std::size_t j) {
        const std::uint64_t seed = c.trajectory.seed_base + j;
        const fs::path file = to_disk ? fs::path(c.output) / ("traj_" + std::to_string(seed) + ".tsv") : fs::path();
        const fs::path rho_file = to_disk ? fs::path(c.output) / ("traj_" + std::to_string(seed) + ".rho") : fs::path();
        if (to_disk && c.resume && fs::exists(file)) {
            TrajectoryRecord rec = read_trajectory(file);
            if (rec.complete && (!to.keep_rho || fs::exists(rho_file))) {
                if (to.keep_rho) rec.rho_osc = load_rho_series(rho_file);
                res.records[j] = std::move(rec);
                return;
            }
        }
        TrajectoryOptions o = to;
        o.seed = seed;
        TrajectoryRecord rec = run_trajectory(*init, h, p, o);
        if (to_disk) {
            if (to.keep_rho) save_rho_series(rho_file, rec.rho_osc);
            const auto tmp = file.string() + ".tmp";
            {
                std::ofstream os(tmp, std::ios::trunc);
                write_trajectory(os, rec, res.config_hash,
                                 {{"krylov_dim", std::to_string(o.krylov.subspace_dim)},
                                  {"max_bond", std::to_string(o.krylov.fit_spec.max_rank)},
                                  {"observables_every", std::to_string(o.observables_every)}});
            }
            fs::rename(tmp, file);
        }
        res.records[j] = std::move(rec);
    });

    std::vector<TrajectoryRecord> ok;
    for (const auto& r : res.records) {
        if (r.complete) ok.push_back(r);
        else res.failed_seeds.push_back(r.seed);
    }
    if (!ok.empty()) res.stats = ensemble_statistics(ok);
    if (to_disk) {
        std::ofstream os(fs::path(c.output) / "ensemble.tsv", std::ios::trunc);
        write_ensemble(os, res, c);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Peak scaling

struct PeakEstimate {
    int L = 0;
    double location = NAN;
    double height = NAN;
    std::string error;  ///< non-empty when no interior peak was found
};

/// Vertex of the parabola through the grid maximum and its two neighbours.
inline PeakEstimate locate_peak(int L, const std::vector<double>& x, const std::vector<double>& y) {
    PeakEstimate p;
    p.L = L;
    std::size_t k = 0;
    bool any = false;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (std::isfinite(y[i]) && (!any || y[i] > y[k])) k = i, any = true;
    if (!any || k == 0 || k + 1 >= y.size() || !std::isfinite(y[k - 1]) || !std::isfinite(y[k + 1])) {
        p.error = "no interior peak";
        return p;
    }
    const double x0 = x[k - 1], x1 = x[k], x2 = x[k + 1];
    const double y0 = y[k - 1], y1 = y[k], y2 = y[k + 1];
    const double d01 = (y1 - y0) / (x1 - x0), d12 = (y2 - y1) / (x2 - x1);
    const double a = (d12 - d01) / (x2 - x0);
    if (!(a < 0.0)) {
        p.location = x1;
        p.height = y1;
        return p;
    }
    const double b = d01 - a * (x0 + x1);
    p.location = -b / (2 * a);
    p.height = y0 + d01 * (p.location - x0) + a * (p.location - x0) * (p.location - x1);
    return p;
}

struct PowerLawFit {
    double exponent = NAN;
    double exponent_stderr = NAN;
    double prefactor = NAN;
    int points = 0;
};

/// Least squares log y = log A + e log x with the standard error of e.
inline PowerLawFit power_law_fit(const std::vector<double>& x, const std::vector<double>& y) {
    PowerLawFit f;
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] > 0 && y[i] > 0 && std::isfinite(y[i])) lx.push_back(std::log(x[i])), ly.push_back(std::log(y[i]));
    const auto n = static_cast<double>(lx.size());
    f.points = static_cast<int>(lx.size());
    if (lx.size() < 2) return f;
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) mx += lx[i] / n, my += ly[i] / n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) sxx += (lx[i] - mx) * (lx[i] - mx), sxy += (lx[i] - mx) * (ly[i] - my);
    f.exponent = sxy / sxx;
    f.prefactor = std::exp(my - f.exponent * mx);
    if (lx.size() > 2) {
        double ss = 0;
        for (std::size_t i = 0; i < lx.size(); ++i) ss += std::pow(ly[i] - my - f.exponent * (lx[i] - mx), 2);
        f.exponent_stderr = std::sqrt(ss / (n - 2) / sxx);
    } else {
        f.exponent_stderr = 0.0;
    }
    return f;
}

struct SliceSeries {
    int L = 0;
    std::vector<double> x, y;
};

struct PeakScaling {
    std::vector<PeakEstimate> peaks;
    PowerLawFit height;    ///< height vs L
    PowerLawFit location;  ///< |location - x_c| vs L
};

inline PeakScaling peak_scaling_analysis(const std::vector<SliceSeries>& series, double x_c) {
    if (series.size() < 3) throw std::invalid_argument("peak_scaling_analysis: at least three system sizes required");
    PeakScaling out;
    std::vector<double> Ls, hs, ds;
    for (const auto& s : series) {
        PeakEstimate p = locate_peak(s.L, s.x, s.y);
        if (p.error.empty()) {
            Ls.push_back(s.L);
            hs.push_back(p.height);
            ds.push_back(std::abs(p.location - x_c));
        }
        out.peaks.push_back(p);
    }
    out.height = power_law_fit(Ls, hs);
    out.location = power_law_fit(Ls, ds);
    return out;
}

/// Fano factor series from a slice table, keyed by the slice variable.
inline SliceSeries slice_series(const ScanTable& t, const std::string& variable) {
    SliceSeries s;
    for (const auto& r : t.rows) {
        s.L = r.params.L;
        s.x.push_back(variable == "h" ? r.params.h : variable == "J" ? r.params.J : r.params.g);
        s.y.push_back(r.error.empty() ? r.fano : NAN);
    }
    return s;
}

inline std::pair<ScanTable, std::string> read_slice_table(const fs::path& path) {
    ScanTable t;
    t.mode = ScanMode::slice;
    t.file = path;
    t.rows = read_scan_rows(path);
    std::ifstream is(path);
    std::string line, variable = "h";
    while (std::getline(is, line) && !line.empty() && line[0] == '#') {
        if (line.rfind("# slice_variable ", 0) == 0) variable = line.substr(17);
        if (line.rfind("# config_hash ", 0) == 0) t.config_hash = line.substr(14);
    }
    return {t, variable};
}

}  // namespace dmps
