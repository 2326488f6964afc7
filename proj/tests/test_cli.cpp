#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dicke_mps/checkpoint.hpp"
#include "dicke_mps/ed.hpp"
#include "dicke_mps/scan.hpp"
#include "oracles.hpp"

using namespace dmps;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("dmps_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DMPS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

ScanConfig simplex_config(int L, int R, int n_max) {
    json j = {{"mode", "simplex"}, {"model", {{"L", L}, {"n_max", n_max}}}, {"simplex", {{"resolution", R}}},
              {"solver", {{"max_bond", 64}}}};
    return parse_config(j);
}

ScanConfig slice_config(int L, int n_max, double g, double J, int steps, bool warm = true) {
    json j = {{"mode", "slice"},
              {"model", {{"L", L}, {"n_max", n_max}, {"g", g}, {"J", J}}},
              {"slice", {{"variable", "h"}, {"start", 0.05}, {"stop", 0.65}, {"steps", steps}}},
              {"solver", {{"max_bond", 64}, {"gaps", 2}}},
              {"warm_start", warm}};
    return parse_config(j);
}

struct EdRow {
    double energy, n_mean, n_var, parity, gap1, gap2;
};

EdRow ed_row(const ModelParams& p) {
    DenseSystem sys(p);
    const auto sp = ed_spectrum(sys, 3);
    const VectorXc& v = sp.states[0];
    const double n = sys.expect(sys.number, v);
    const Eigen::SparseMatrix<double> n2 = sys.number * sys.number;
    return {sp.energies[0], n, sys.expect(n2, v) - n * n, sys.parity_of(v), sp.energies[1] - sp.energies[0],
            sp.energies[2] - sp.energies[0]};
}

void expect_row_matches_ed(const ScanRow& r) {
    SCOPED_TRACE(r.params.describe());
    ASSERT_TRUE(r.error.empty()) << r.error;
    EXPECT_TRUE(r.converged);
    const EdRow e = ed_row(r.params);
    EXPECT_LT(std::abs(r.energy - e.energy) / std::max(1.0, std::abs(e.energy)), 1e-9);
    EXPECT_NEAR(r.gap1, e.gap1, 1e-7);
    EXPECT_NEAR(r.gap2, e.gap2, 1e-7);
    // a near-degenerate ground doublet makes single-state observables ambiguous
    if (e.gap1 > 1e-6) {
        EXPECT_NEAR(r.n_mean, e.n_mean, 1e-7);
        EXPECT_NEAR(r.n_var, e.n_var, 1e-7);
        EXPECT_NEAR(r.parity, e.parity, 1e-7);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripIsBitExact) {
    ModelParams p;
    p.L = 4;
    p.n_max = 5;
    MPSState psi = random_mps(make_lattice(p, 2), 6, 99);
    psi = canonicalize(psi, 1);
    std::stringstream ss;
    write_checkpoint(ss, psi);
    const MPSState back = read_checkpoint(ss);
    ASSERT_EQ(back.length(), psi.length());
    EXPECT_EQ(back.center, psi.center);
    for (std::size_t i = 0; i < psi.length(); ++i) {
        EXPECT_EQ(back.specs[i].kind, psi.specs[i].kind);
        EXPECT_EQ(back.specs[i].phys_dim, psi.specs[i].phys_dim);
        ASSERT_EQ(back.sites[i].data().size(), psi.sites[i].data().size());
        EXPECT_EQ(std::memcmp(back.sites[i].data().data(), psi.sites[i].data().data(),
                              psi.sites[i].data().size() * sizeof(cplx)),
                  0);
    }
}

TEST(Checkpoint, RejectsCorruption) {
    ModelParams p;
    p.L = 3;
    p.n_max = 2;
    const MPSState psi = random_mps(make_lattice(p), 4, 1);
    std::stringstream ss;
    write_checkpoint(ss, psi);
    const std::string bytes = ss.str();

    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream b1(bad);
    EXPECT_THROW(read_checkpoint(b1), CheckpointError);

    for (std::size_t cut : {std::size_t{5}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
        std::istringstream t(bytes.substr(0, cut));
        EXPECT_THROW(read_checkpoint(t), CheckpointError) << "cut at " << cut;
    }
}

TEST(Checkpoint, FileRoundTrip) {
    const auto dir = scratch("ckpt");
    ModelParams p;
    p.L = 3;
    p.n_max = 3;
    const MPSState psi = random_mps(make_lattice(p), 4, 5);
    save_checkpoint(dir / "a.ckpt", psi);
    EXPECT_FALSE(fs::exists(dir / "a.ckpt.tmp"));
    const MPSState back = load_checkpoint(dir / "a.ckpt");
    EXPECT_NEAR(std::abs(overlap(back, psi)), std::abs(overlap(psi, psi)), 1e-14);
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
}

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(parse_config(json{{"mode", "simplex"}, {"modle", json::object()}}), ConfigError);
    EXPECT_THROW(parse_config(json{{"mode", "simplex"}, {"model", {{"omeg", 1.0}}}}), ConfigError);
    EXPECT_THROW(parse_config(json{{"mode", "grid"}}), ConfigError);
    EXPECT_THROW(parse_config(json{{"mode", "simplex"}, {"simplex", {{"resolution", 0}}}}), ConfigError);
    EXPECT_THROW(parse_config(json{{"mode", "slice"}, {"slice", {{"variable", "omega"}}}}), ConfigError);
    EXPECT_THROW(parse_config(json{{"mode", "simplex"}, {"workers", 0}}), ConfigError);
    EXPECT_THROW(parse_config(json{{"mode", "simplex"}, {"model", {{"L", "six"}}}}), ConfigError);
    EXPECT_THROW(parse_config(json{{"mode", "trajectory"}, {"trajectory", {{"init_sector", "up"}}}}), ConfigError);
}

TEST(Config, HashIgnoresExecutionSettings) {
    ScanConfig a = simplex_config(4, 3, 6);
    ScanConfig b = a;
    b.workers = 7;
    b.output = "/somewhere/else";
    b.resume = true;
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.model.n_max = 7;
    EXPECT_NE(config_hash(a), config_hash(b));
    ScanConfig c = a;
    c.solver.spec.max_rank = 65;
    EXPECT_NE(config_hash(a), config_hash(c));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, SimplexGridGeometry) {
    for (int R : {1, 2, 5, 10}) {
        const auto grid = simplex_grid(simplex_config(4, R, 4));
        EXPECT_EQ(grid.size(), static_cast<std::size_t>((R + 1) * (R + 2) / 2));
        for (const auto& p : grid) {
            EXPECT_NEAR(p.h + p.J + p.g, 1.0, 1e-12);
            EXPECT_GE(p.h, 0.0);
            EXPECT_GE(p.J, 0.0);
            EXPECT_GE(p.g, 0.0);
            EXPECT_EQ(p.omega, 1.0);
        }
    }
}

TEST(Config, DefaultCutoffRuleAppliesPerPoint) {
    ScanConfig c = simplex_config(6, 2, 6);
    c.model.n_max = 0;
    for (const auto& p : simplex_grid(c)) EXPECT_EQ(p.n_max, ModelParams::default_n_max(p.g, p.L, p.omega));
}

// ---------------------------------------------------------------------------
// Scans

TEST(Scan, SimplexCorners) {
    const auto t = run_simplex_scan(simplex_config(5, 1, 6));
    ASSERT_EQ(t.rows.size(), 3u);
    for (const auto& r : t.rows) {
        ASSERT_TRUE(r.error.empty()) << r.error;
        if (r.params.h == 1.0) {
            EXPECT_NEAR(r.n_per_site, 0.0, 1e-12);
            // the spin-flip gap 2h sits above the photon at omega when h > omega / 2
            EXPECT_NEAR(r.gap1, std::min(r.params.omega, 2 * r.params.h), 1e-9);
            EXPECT_NEAR(r.gap2, 2 * r.params.h, 1e-9);
        }
        if (r.params.J == 1.0) {
            EXPECT_LT(r.gap1, 1e-8);
            EXPECT_NEAR(r.n_per_site, 0.0, 1e-12);
        }
    }
}

TEST(Scan, SpinFlipGapIsTwoH) {
    // with a stiff oscillator the lowest excitation of the decoupled corner is one spin flip
    ScanConfig c = simplex_config(4, 1, 4);
    c.model.omega = 3.0;
    const auto t = run_simplex_scan(c);
    for (const auto& r : t.rows)
        if (r.params.h == 1.0) EXPECT_NEAR(r.gap1, 2.0, 1e-9);
}

TEST(Scan, CoarseSimplexMatchesEd) {
    const auto t = run_simplex_scan(simplex_config(6, 4, 10));
    ASSERT_EQ(t.rows.size(), 15u);
    for (const auto& r : t.rows) expect_row_matches_ed(r);
}

TEST(Scan, PointFailureIsRecordedInRow) {
    // the slice crosses into h < 0, which the model rejects point by point
    ScanConfig c = slice_config(4, 4, 0.3, 0.2, 5);
    c.slice_start = -0.2;
    c.slice_stop = 0.2;
    const auto t = run_slice(c);
    ASSERT_EQ(t.rows.size(), 5u);
    EXPECT_NE(t.rows[0].error.find("h must be >= 0"), std::string::npos);
    EXPECT_FALSE(t.rows[0].converged);
    EXPECT_TRUE(std::isnan(t.rows[0].energy));
    for (std::size_t i = 2; i < 5; ++i) EXPECT_TRUE(t.rows[i].error.empty()) << t.rows[i].error;
}

TEST(Scan, RowFormatRoundTrips) {
    ScanRow r;
    r.index = 7;
    r.params.h = 0.1 + 0.2;
    r.params.L = 12;
    r.params.n_max = 20;
    r.converged = true;
    r.energy = -1.0 / 3.0;
    r.xi = INFINITY;
    r.error = "bad\tthing";
    const ScanRow b = parse_row(format_row(r));
    EXPECT_EQ(b.index, 7u);
    EXPECT_EQ(b.params.h, r.params.h);
    EXPECT_EQ(b.energy, r.energy);
    EXPECT_TRUE(std::isinf(b.xi));
    EXPECT_TRUE(std::isnan(b.gap1));
    EXPECT_EQ(b.error, "bad thing");
    EXPECT_EQ(format_row(b), format_row(parse_row(format_row(b))));
}

TEST(Scan, OutputOrderIndependentOfWorkers) {
    const auto d1 = scratch("order1"), d3 = scratch("order3");
    ScanConfig c = simplex_config(4, 3, 6);
    c.output = d1.string();
    run_simplex_scan(c);
    c.output = d3.string();
    c.workers = 3;
    run_simplex_scan(c);
    EXPECT_EQ(slurp(d1 / "scan.tsv"), slurp(d3 / "scan.tsv"));
}

TEST(Scan, HeaderCarriesHashAndVersion) {
    const auto d = scratch("header");
    ScanConfig c = simplex_config(3, 1, 4);
    c.output = d.string();
    const auto t = run_simplex_scan(c);
    const std::string s = slurp(d / "scan.tsv");
    EXPECT_EQ(s.rfind("# dicke-mps scan format 1\n", 0), 0u);
    EXPECT_NE(s.find("# config_hash " + t.config_hash + "\n"), std::string::npos);
    EXPECT_NE(s.find("\tconverged\tcutoff_valid\t"), std::string::npos);
}

TEST(Scan, ResumeReproducesUninterruptedTable) {
    const auto full = scratch("resume_full"), part = scratch("resume_part");
    ScanConfig c = simplex_config(4, 3, 6);
    c.output = full.string();
    c.workers = 2;
    const auto ref = run_simplex_scan(c);
    const std::string want = slurp(full / "scan.tsv");

    // interrupted run: four complete rows plus half of the fifth
    std::istringstream is(want);
    std::string line, cut;
    int rows = -1;
    while (std::getline(is, line)) {
        if (line[0] != '#' && ++rows == 5) {
            cut += line.substr(0, line.size() / 2);
            break;
        }
        cut += line + "\n";
    }
    std::ofstream(part / "scan.tsv") << cut;
    c.output = part.string();
    c.resume = true;
    const auto resumed = run_simplex_scan(c);
    EXPECT_EQ(slurp(part / "scan.tsv"), want);
    ASSERT_EQ(resumed.rows.size(), ref.rows.size());
    for (std::size_t i = 0; i < ref.rows.size(); ++i) EXPECT_EQ(format_row(resumed.rows[i]), format_row(ref.rows[i]));
}

TEST(Scan, ResumeRefusesForeignTable) {
    const auto d = scratch("foreign");
    ScanConfig c = simplex_config(3, 1, 4);
    c.output = d.string();
    run_simplex_scan(c);
    c.model.n_max = 5;
    c.resume = true;
    EXPECT_THROW(run_simplex_scan(c), ConfigError);
}

// ---------------------------------------------------------------------------
// Slices

TEST(Slice, UncoupledSliceHasNoPhotons) {
    const auto t = run_slice(slice_config(5, 4, 0.0, 0.3, 5));
    for (const auto& r : t.rows) {
        ASSERT_TRUE(r.error.empty()) << r.error;
        EXPECT_NEAR(r.n_mean, 0.0, 1e-12);
    }
}

TEST(Slice, MatchesEdRowByRow) {
    const auto t = run_slice(slice_config(6, 10, 0.4, 0.1, 7));
    ASSERT_EQ(t.rows.size(), 7u);
    for (const auto& r : t.rows) expect_row_matches_ed(r);
}

TEST(Slice, WarmStartDoesNotChangeAnswers) {
    ScanConfig warm = slice_config(8, 10, 0.4, 0.1, 4, true);
    ScanConfig cold = warm;
    cold.warm_start = false;
    const auto tw = run_slice(warm), tc = run_slice(cold);
    ASSERT_EQ(tw.rows.size(), tc.rows.size());
    for (std::size_t i = 0; i < tw.rows.size(); ++i) {
        const auto &a = tw.rows[i], &b = tc.rows[i];
        SCOPED_TRACE(a.params.describe());
        EXPECT_NEAR(a.energy, b.energy, 1e-6);
        EXPECT_NEAR(a.n_mean, b.n_mean, 1e-6);
        EXPECT_NEAR(a.n_var, b.n_var, 1e-6);
        EXPECT_NEAR(a.gap1, b.gap1, 1e-6);
        EXPECT_NEAR(a.gap2, b.gap2, 1e-6);
        EXPECT_NEAR(a.parity, b.parity, 1e-6);
    }
}

TEST(Slice, ChunkedResumeIsIdentical) {
    const auto full = scratch("slice_full"), part = scratch("slice_part");
    ScanConfig c = slice_config(5, 6, 0.4, 0.1, 8);
    c.workers = 2;
    c.output = full.string();
    run_slice(c);
    const std::string want = slurp(full / "slice.tsv");

    fs::copy(full, part, fs::copy_options::recursive);
    // keep the first three rows of each chunk's worth of work: rows 0..2 and
    // drop checkpoints from the point of interruption onward
    std::istringstream is(want);
    std::string line, cut;
    int rows = -1;
    while (std::getline(is, line)) {
        if (line[0] != '#' && ++rows == 3) break;
        cut += line + "\n";
    }
    std::ofstream(part / "slice.tsv", std::ios::trunc) << cut;
    for (int i = 3; i < 8; ++i) fs::remove(part / "checkpoints" / ("point_" + std::to_string(i) + ".ckpt"));
    c.output = part.string();
    c.resume = true;
    run_slice(c);
    EXPECT_EQ(slurp(part / "slice.tsv"), want);
}

TEST(Slice, ThermalColumn) {
    ScanConfig c = slice_config(4, 8, 0.4, 0.1, 3);
    c.temperature = 1e-3;
    c.thermal_states = 3;
    const auto t = run_slice(c);
    for (const auto& r : t.rows) {
        ASSERT_TRUE(r.error.empty()) << r.error;
        // far below every gap the thermal value is the ground-state value
        if (r.gap1 > 0.05) EXPECT_NEAR(r.thermal_n, r.n_mean, 1e-8);
    }
}

// ---------------------------------------------------------------------------
// Peak analysis

TEST(PeakAnalysis, RecoversSyntheticExponents) {
    const double hc = 0.312;
    std::vector<SliceSeries> series;
    for (int L : {8, 12, 16, 24, 32}) {
        const double height = 1.3 * std::pow(L, 0.19);
        const double loc = hc + 0.9 * std::pow(L, -0.5);
        SliceSeries s;
        s.L = L;
        for (int k = 0; k <= 60; ++k) {
            const double x = 0.1 + 0.01 * k;
            s.x.push_back(x);
            s.y.push_back(height - 4.0 * (x - loc) * (x - loc));
        }
        series.push_back(s);
    }
    const auto a = peak_scaling_analysis(series, hc);
    EXPECT_NEAR(a.height.exponent, 0.19, 0.005);
    EXPECT_NEAR(a.location.exponent, -0.5, 0.005);
    EXPECT_LT(a.height.exponent_stderr, 1e-6);
    for (const auto& p : a.peaks) EXPECT_TRUE(p.error.empty());
}

TEST(PeakAnalysis, NoisySyntheticWithinStderr) {
    std::vector<SliceSeries> series;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> noise(0.0, 1e-4);
    for (int L : {8, 12, 16, 24}) {
        SliceSeries s;
        s.L = L;
        const double height = 2.0 * std::pow(L, 0.19), loc = 0.312 + 0.5 / std::sqrt(L);
        for (int k = 0; k <= 40; ++k) {
            const double x = 0.2 + 0.0125 * k;
            s.x.push_back(x);
            s.y.push_back(height * std::exp(-30 * (x - loc) * (x - loc)) + noise(rng));
        }
        series.push_back(s);
    }
    const auto a = peak_scaling_analysis(series, 0.312);
    EXPECT_NEAR(a.height.exponent, 0.19, 0.005);
    EXPECT_NEAR(a.location.exponent, -0.5, 0.02);
    EXPECT_GT(a.height.exponent_stderr, 0.0);
}

TEST(PeakAnalysis, EdgeMaximumIsAnError) {
    SliceSeries s;
    s.L = 8;
    s.x = {0, 1, 2, 3};
    s.y = {4, 3, 2, 1};
    EXPECT_FALSE(locate_peak(8, s.x, s.y).error.empty());
    SliceSeries ok{12, {0, 1, 2}, {1, 2, 1}};
    SliceSeries ok2{16, {0, 1, 2}, {1, 3, 1}};
    const auto a = peak_scaling_analysis({s, ok, ok2}, 1.0);
    EXPECT_FALSE(a.peaks[0].error.empty());
    EXPECT_EQ(a.height.points, 2);
    EXPECT_THROW(peak_scaling_analysis({ok, ok2}, 1.0), std::invalid_argument);
}

TEST(PeakAnalysis, ParabolaVertexExact) {
    const auto p = locate_peak(4, {0.0, 0.5, 1.5}, {-(0.0 - 0.7) * (0.0 - 0.7), -(0.5 - 0.7) * (0.5 - 0.7), -(1.5 - 0.7) * (1.5 - 0.7)});
    EXPECT_NEAR(p.location, 0.7, 1e-12);
    EXPECT_NEAR(p.height, 0.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Trajectory ensembles

TEST(Ensemble, ZeroKappaIsStationary) {
    json j = {{"mode", "trajectory"},
              {"model", {{"L", 4}, {"n_max", 6}, {"h", 0.3}, {"J", 0.2}, {"g", 0.5}}},
              {"trajectory", {{"kappa", 0.0}, {"t_final", 0.5}, {"dt", 0.05}, {"seeds", 3}, {"observables_every", 2}}},
              {"workers", 2}};
    const auto r = run_trajectory_ensemble(parse_config(j));
    ASSERT_TRUE(r.stats);
    EXPECT_EQ(r.stats->count, 3u);
    EXPECT_TRUE(r.failed_seeds.empty());
    for (const auto& rec : r.records) {
        EXPECT_TRUE(rec.complete);
        for (std::size_t k = 0; k < rec.points(); ++k) {
            EXPECT_NEAR(rec.n_mean[k], rec.n_mean[0], 1e-7);
            EXPECT_NEAR(rec.q_mean[k], rec.q_mean[0], 1e-7);
            EXPECT_NEAR(rec.parity[k], rec.parity[0], 1e-7);
            EXPECT_NEAR(rec.entropy_osc[k], rec.entropy_osc[0], 1e-6);
        }
    }
    for (std::size_t i = 0; i < r.records.size(); ++i) EXPECT_EQ(r.records[i].seed, 1u + i);
}

TEST(Ensemble, FilesAreReproducibleAndResumable) {
    const auto a = scratch("ens_a"), b = scratch("ens_b");
    json j = {{"mode", "trajectory"},
              {"model", {{"L", 3}, {"n_max", 6}, {"h", 0.3}, {"J", 0.2}, {"g", 0.6}}},
              {"trajectory", {{"kappa", 0.5}, {"t_final", 0.3}, {"dt", 0.02}, {"seeds", 3}, {"seed_base", 10}}},
              {"workers", 3}};
    ScanConfig c = parse_config(j);
    c.output = a.string();
    const auto ra = run_trajectory_ensemble(c);
    c.output = b.string();
    c.workers = 1;
    run_trajectory_ensemble(c);
    for (const auto* f : {"traj_10.tsv", "traj_11.tsv", "traj_12.tsv", "ensemble.tsv"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;

    // losing one trajectory and resuming regenerates the same ensemble
    fs::remove(b / "traj_11.tsv");
    c.resume = true;
    const auto rb = run_trajectory_ensemble(c);
    EXPECT_EQ(slurp(a / "traj_11.tsv"), slurp(b / "traj_11.tsv"));
    EXPECT_EQ(slurp(a / "ensemble.tsv"), slurp(b / "ensemble.tsv"));
    ASSERT_TRUE(ra.stats && rb.stats);
    EXPECT_EQ(ra.stats->n.mean, rb.stats->n.mean);

    const auto rec = read_trajectory(a / "traj_12.tsv");
    EXPECT_EQ(rec.seed, 12u);
    EXPECT_TRUE(rec.complete);
    EXPECT_EQ(rec.params.L, 3);
    EXPECT_EQ(rec.q_mean, ra.records[2].q_mean);
}

// ---------------------------------------------------------------------------
// Command line

TEST(Cli, ScanAndAnalyzeEndToEnd) {
    const auto d = scratch("cli");
    write_json(d / "scan.json", {{"mode", "simplex"}, {"model", {{"L", 3}, {"n_max", 4}}}, {"simplex", {{"resolution", 2}}}});
    EXPECT_EQ(run_cli("scan --config " + (d / "scan.json").string() + " --out " + (d / "s1").string() + " --workers 2"), 0);
    EXPECT_EQ(read_scan_rows(d / "s1" / "scan.tsv").size(), 6u);
    // resuming a finished scan leaves it unchanged
    const std::string before = slurp(d / "s1" / "scan.tsv");
    EXPECT_EQ(run_cli("scan --config " + (d / "scan.json").string() + " --out " + (d / "s1").string() + " --resume"), 0);
    EXPECT_EQ(slurp(d / "s1" / "scan.tsv"), before);

    std::vector<std::string> tables;
    for (int L : {3, 4, 5}) {
        const auto name = "slice" + std::to_string(L);
        write_json(d / (name + ".json"),
                   {{"mode", "slice"},
                    {"model", {{"L", L}, {"n_max", 8}, {"g", 0.4}, {"J", 0.1}}},
                    {"slice", {{"variable", "h"}, {"start", 0.0}, {"stop", 0.6}, {"steps", 7}}},
                    {"solver", {{"gaps", 0}}}});
        EXPECT_EQ(run_cli("slice -c " + (d / (name + ".json")).string() + " -o " + (d / name).string()), 0);
        tables.push_back((d / name / "slice.tsv").string());
    }
    EXPECT_EQ(run_cli("analyze " + tables[0] + " " + tables[1] + " " + tables[2] + " --hc 0.312 -o " +
                      (d / "analysis.json").string()),
              0);
    const json a = json::parse(slurp(d / "analysis.json"));
    EXPECT_EQ(a["peaks"].size(), 3u);
    EXPECT_EQ(a["variable"], "h");
}

TEST(Cli, TrajectoryRerunIsByteIdentical) {
    const auto d = scratch("cli_traj");
    write_json(d / "t.json", {{"mode", "trajectory"},
                              {"model", {{"L", 3}, {"n_max", 6}, {"h", 0.2}, {"J", 0.3}, {"g", 0.5}}},
                              {"trajectory", {{"kappa", 0.5}, {"t_final", 0.2}, {"dt", 0.02}, {"seeds", 2}}}});
    const std::string cfg = (d / "t.json").string();
    EXPECT_EQ(run_cli("trajectory -c " + cfg + " -o " + (d / "a").string() + " --seed-base 40"), 0);
    EXPECT_EQ(run_cli("trajectory -c " + cfg + " -o " + (d / "b").string() + " --seed-base 40 -w 2"), 0);
    EXPECT_TRUE(fs::exists(d / "a" / "traj_41.tsv"));
    for (const auto* f : {"traj_40.tsv", "traj_41.tsv", "ensemble.tsv"}) EXPECT_EQ(slurp(d / "a" / f), slurp(d / "b" / f)) << f;
}

TEST(Cli, ErrorsExitNonZero) {
    const auto d = scratch("cli_err");
    write_json(d / "bad.json", {{"mode", "simplex"}, {"bogus", 1}});
    EXPECT_EQ(run_cli("scan -c " + (d / "bad.json").string() + " -o " + (d / "o").string()), 2);
    write_json(d / "slice.json", {{"mode", "slice"}});
    EXPECT_EQ(run_cli("scan -c " + (d / "slice.json").string() + " -o " + (d / "o").string()), 2);
    EXPECT_NE(run_cli("scan"), 0);
    EXPECT_NE(run_cli("frobnicate"), 0);
}
