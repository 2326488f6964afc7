#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "dicke_mps/eigensolver.hpp"
#include "dicke_mps/environment.hpp"
#include "dicke_mps/errors.hpp"
#include "dicke_mps/fit.hpp"
#include "dicke_mps/mpo.hpp"
#include "dicke_mps/mps.hpp"
#include "dicke_mps/observables.hpp"

namespace dmps {

struct ConvergenceReport {
    double energy = 0.0;
    double energy_variance = 0.0;
    /// Rounding bound on the variance: the two terms <H^2> and <H>^2 cancel.
    double variance_error = 0.0;
    double energy_scale = 1.0;  ///< max(|E|, 1)
    int sweeps_used = 0;
    double max_discarded_weight = 0.0;
    double top_fock_population = 0.0;
    double parity = 0.0;
    std::size_t max_bond = 0;
    std::uint64_t seed = 0;
    bool converged = false;
    std::vector<double> sweep_energies;
    std::vector<double> sweep_variances;
    /// Gap between the two lowest Ritz values of the final local problem.
    double local_gap = 0.0;

    /// Top-Fock population below the cutoff-validity threshold.
    bool cutoff_valid(double threshold = 1e-8) const { return top_fock_population < threshold; }
    bool parity_pure(double tol = 1e-6) const { return std::abs(parity) >= 1.0 - tol; }
    bool certified(double rel = 1e-8) const { return energy_variance < rel * energy_scale * energy_scale; }
};

enum class ParitySector { none, even, odd, automatic };

struct GroundStateOptions {
    TruncationSpec spec{64, 1e-12, 0.0};
    std::optional<MPSState> init;
    std::uint64_t seed = 12345;
    std::size_t init_bond = 8;
    double variance_tol = 1e-10;  ///< relative to energy_scale^2
    int sweep_cap = 40;
    int min_sweeps = 2;
    /// Subspace-expansion strength; decays once the energy settles.
    double alpha0 = 1e-3;
    double alpha_decay = 0.1;
    double alpha_min = 1e-9;
    double local_tol = 1e-10;
    ParitySector sector = ParitySector::automatic;
    /// Weight of (I - sP)/2 used to confine the search to parity sector s;
    /// nonpositive means max(2, |<H>_init|).
    double parity_penalty = 0.0;
    /// States to project out with weight `penalty_weight`.
    std::vector<const MPSState*> penalized;
    double penalty_weight = 0.0;
    bool throw_on_cap = false;
};

struct GroundStateResult {
    MPSState state;
    ConvergenceReport report;
};

/// Raised when the sweep cap is hit and the caller asked for it; carries the
/// best-effort result.
class GroundStateConvergenceError : public ConvergenceError {
public:
    GroundStateConvergenceError(const std::string& what, GroundStateResult r)
        : ConvergenceError(what, r.report.energy_variance), result_(std::move(r)) {}
    const GroundStateResult& result() const noexcept { return result_; }

private:
    GroundStateResult result_;
};

namespace detail {

inline double sector_sign(ParitySector s) { return s == ParitySector::odd ? -1.0 : 1.0; }

/// (psi + s P psi) / norm, or nullopt if the projection vanishes.
inline std::optional<MPSState> project_parity(const MPSState& psi, double s) {
    const MPOperator P = build_parity_mpo(psi.specs);
    FitOptions fo;
    fo.spec = TruncationSpec{2 * psi.max_bond() + 2, 1e-14, 0.0};
    fo.max_sweeps = 2;
    fo.guess = psi;
    const FitResult r = variational_fit({{cplx(1.0, 0.0), nullptr, &psi}, {cplx(s, 0.0), &P, &psi}}, fo);
    if (r.zero || r.target_norm < 1e-8 * norm(psi)) return std::nullopt;
    return normalized(r.state);
}

/// Expansion term L W M for a right move, shaped (l, p, r).
inline DenseTensor expansion_right(const DenseTensor& left, const DenseTensor& w, const DenseTensor& m) {
    DenseTensor t = contract(left, m.relabeled("r", "rm"), {{"k", "l"}});  // (b, w0, p, rm)
    t = contract(t, w.relabeled("r", "rw"), {{"w0", "l"}, {"p", "pi"}});  // (b, rm, po, rw)
    t = t.permuted({"b", "po", "rm", "rw"});
    return t.reshaped({t.extent("b"), t.extent("po"), t.extent("rm") * t.extent("rw")}, {"l", "p", "r"});
}

/// Expansion term M W R for a left move, shaped (l, p, r).
inline DenseTensor expansion_left(const DenseTensor& right, const DenseTensor& w, const DenseTensor& m) {
    DenseTensor t = contract(m.relabeled("l", "lm"), right, {{"r", "k"}});  // (lm, p, b, w0)
    t = contract(t, w.relabeled("l", "lw"), {{"w0", "r"}, {"p", "pi"}});  // (lm, b, lw, po)
    t = t.permuted({"lm", "lw", "po", "b"});
    return t.reshaped({t.extent("lm") * t.extent("lw"), t.extent("po"), t.extent("b")}, {"l", "p", "r"});
}

inline DenseTensor scaled_to(DenseTensor p, double alpha) {
    const double n = p.norm();
    if (n > 0.0) p *= cplx(alpha / n, 0.0);
    return p;
}

}  // namespace detail

/// <psi|H|psi> and <psi|H H|psi> for a normalised state.
inline std::pair<double, double> energy_and_second_moment(const MPSState& psi, const MPOperator& h) {
    const double e = mpo_expectation(psi, h, psi).real();
    const double e2 = sandwich(psi, {&h, &h}, psi).real();
    return {e, e2};
}

inline void fill_report_observables(const MPSState& psi, const MPOperator& h, ConvergenceReport& rep) {
    const auto [e, e2] = energy_and_second_moment(psi, h);
    rep.energy = e;
    rep.energy_variance = e2 - e * e;
    rep.variance_error = 4.0 * std::numeric_limits<double>::epsilon() * std::abs(e2) * psi.length();
    rep.energy_scale = std::max(std::abs(e), 1.0);
    rep.top_fock_population = top_fock_population(oscillator_density_matrix(psi));
    rep.parity = parity_expectation(psi);
    rep.max_bond = psi.max_bond();
}

namespace detail {

/// Single-site DMRG with subspace expansion on the operator `hp`
/// (possibly carrying a parity penalty); energies and variances are
/// reported for the bare Hamiltonian `h`.
inline GroundStateResult dmrg_run(const MPOperator& h, const MPOperator& hp, MPSState psi,
                                  const GroundStateOptions& opt) {
    const std::size_t n = psi.length();
    psi = canonicalize(psi, 0);
    psi = normalized(psi);

    EnvStack henv({&hp}, n);
    henv.build_right(psi, psi, 1);
    std::vector<EnvStack> penv;
    for (const auto* phi : opt.penalized) {
        require_same_lattice(phi->specs, psi.specs);
        penv.emplace_back(Layers{}, n);
        penv.back().build_right(psi, *phi, 1);
    }

    GroundStateResult res;
    auto& rep = res.report;
    rep.seed = opt.seed;
    double alpha = opt.alpha0;
    double prev_energy = std::numeric_limits<double>::infinity();

    auto local_solve = [&](std::size_t i, int k) {
        std::vector<DenseTensor> vs;
        for (std::size_t j = 0; j < penv.size(); ++j)
            vs.push_back(env::apply_single(penv[j].left(i), {}, penv[j].right(i + 1), opt.penalized[j]->sites[i]));
        const auto ws = henv.ws(i);
        const DenseTensor& L = henv.left(i);
        const DenseTensor& R = henv.right(i + 1);
        const DenseTensor& x0 = psi.sites[i];
        const auto shape = x0.shape();
        const auto dim = static_cast<Eigen::Index>(x0.size());
        LinearMap apply = [&](const VectorXc& in, VectorXc& out) {
            DenseTensor x(shape, {"l", "p", "r"}, std::vector<cplx>(in.data(), in.data() + in.size()));
            DenseTensor y = env::apply_single(L, ws, R, x);
            out = Eigen::Map<const VectorXc>(y.data().data(), dim);
            for (const auto& v : vs) {
                const Eigen::Map<const VectorXc> vv(v.data().data(), dim);
                out += opt.penalty_weight * vv * vv.dot(in);
            }
        };
        const VectorXc guess = Eigen::Map<const VectorXc>(x0.data().data(), dim);
        EigensolverOptions eo;
        eo.throw_on_failure = false;
        eo.max_iterations = 400;
        eo.seed = static_cast<unsigned>(opt.seed + i);
        const int kk = static_cast<int>(std::min<Eigen::Index>(k, dim));
        auto r = lowest_eigenpairs(apply, dim, kk, opt.local_tol, &guess, eo);
        DenseTensor m(shape, {"l", "p", "r"},
                      std::vector<cplx>(r.vectors[0].data(), r.vectors[0].data() + r.vectors[0].size()));
        m *= cplx(1.0 / m.norm(), 0.0);
        if (kk > 1) rep.local_gap = r.values[1] - r.values[0];
        return m;
    };

    double sweep_discard = 0.0;
    auto move_right = [&](std::size_t i, DenseTensor m) {
        DenseTensor next = psi.sites[i + 1];
        if (alpha > 0.0) {
            const DenseTensor p = detail::scaled_to(detail::expansion_right(henv.left(i), hp.sites[i], m), alpha);
            const std::size_t extra = p.extent("r");
            m = concatenate(m, p, "r");
            next = zero_padded(next, "l", next.extent("l") + extra);
        }
        SvdResult f = svd_truncate(m, {"l", "p"}, opt.spec, "x");
        sweep_discard = std::max(sweep_discard, f.discarded_weight / std::max(m.norm2(), 1e-300));
        psi.sites[i] = f.U.relabeled("x", "r");
        DenseTensor sv = scale_axis(f.V, "x", f.s);  // (x, r_old)
        psi.sites[i + 1] = contract(sv, next, {{"r", "l"}}).relabeled("x", "l");
        psi.sites[i + 1] *= cplx(1.0 / psi.sites[i + 1].norm(), 0.0);
        psi.center = i + 1;
        henv.update_left(i, psi.sites[i], psi.sites[i]);
        for (std::size_t j = 0; j < penv.size(); ++j) penv[j].update_left(i, psi.sites[i], opt.penalized[j]->sites[i]);
    };
    auto move_left = [&](std::size_t i, DenseTensor m) {
        DenseTensor prev = psi.sites[i - 1];
        if (alpha > 0.0) {
            const DenseTensor p = detail::scaled_to(detail::expansion_left(henv.right(i + 1), hp.sites[i], m), alpha);
            const std::size_t extra = p.extent("l");
            m = concatenate(m, p, "l");
            prev = zero_padded(prev, "r", prev.extent("r") + extra);
        }
        SvdResult f = svd_truncate(m, {"l"}, opt.spec, "x");
        sweep_discard = std::max(sweep_discard, f.discarded_weight / std::max(m.norm2(), 1e-300));
        psi.sites[i] = f.V.relabeled("x", "l");
        DenseTensor us = scale_axis(f.U, "x", f.s);  // (l_old, x)
        psi.sites[i - 1] = contract(prev, us, {{"r", "l"}}).relabeled("x", "r");
        psi.sites[i - 1] *= cplx(1.0 / psi.sites[i - 1].norm(), 0.0);
        psi.center = i - 1;
        henv.update_right(i, psi.sites[i], psi.sites[i]);
        for (std::size_t j = 0; j < penv.size(); ++j) penv[j].update_right(i, psi.sites[i], opt.penalized[j]->sites[i]);
    };

    for (int sweep = 0; sweep < opt.sweep_cap; ++sweep) {
        sweep_discard = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) move_right(i, (i == 0 && sweep > 0) ? psi.sites[0] : local_solve(i, 1));
        for (std::size_t i = n - 1; i > 0; --i) move_left(i, local_solve(i, 1));
        psi.sites[0] = local_solve(0, 2);
        rep.max_discarded_weight = std::max(rep.max_discarded_weight, sweep_discard);
        rep.sweeps_used = sweep + 1;

        const auto [e, e2] = energy_and_second_moment(psi, h);
        const double var = e2 - e * e;
        const double scale = std::max(std::abs(e), 1.0);
        rep.sweep_energies.push_back(e);
        rep.sweep_variances.push_back(var);
        if (rep.sweeps_used >= opt.min_sweeps && var < opt.variance_tol * scale * scale) {
            rep.converged = true;
            break;
        }
        if (std::abs(prev_energy - e) < 1e-9 * scale) alpha *= opt.alpha_decay;
        if (alpha < opt.alpha_min) alpha = 0.0;
        // a frozen bond that cannot meet the target gets another push
        if (alpha == 0.0 && std::abs(prev_energy - e) < 1e-13 * scale && psi.max_bond() < opt.spec.max_rank)
            alpha = opt.alpha0;
        prev_energy = e;
    }
    res.state = std::move(psi);
    fill_report_observables(res.state, h, rep);
    rep.converged = rep.converged && rep.energy_variance < opt.variance_tol * rep.energy_scale * rep.energy_scale;
    return res;
}

}  // namespace detail

/// Single-site DMRG with subspace expansion. With sector == automatic both
/// parity sectors are searched and the lower one returned (even first on a tie).
inline GroundStateResult ground_state(const MPOperator& h, const GroundStateOptions& opt = {}) {
    h.validate();
    opt.spec.validate();
    const auto& specs = h.specs;
    if (opt.sector == ParitySector::automatic) {
        GroundStateOptions o = opt;
        o.sector = ParitySector::even;
        o.throw_on_cap = false;
        GroundStateResult even = ground_state(h, o);
        o.sector = ParitySector::odd;
        GroundStateResult odd = ground_state(h, o);
        const double tie = 1e-10 * std::max(std::abs(even.report.energy), 1.0);
        GroundStateResult best = odd.report.energy < even.report.energy - tie ? std::move(odd) : std::move(even);
        if (opt.throw_on_cap && !best.report.converged)
            throw GroundStateConvergenceError("ground_state: sweep cap reached", std::move(best));
        return best;
    }

    MPSState init = opt.init ? *opt.init : random_mps(specs, std::min(opt.init_bond, opt.spec.max_rank), opt.seed);
    require_same_lattice(specs, init.specs);
    GroundStateResult res;
    if (opt.sector == ParitySector::none) {
        res = detail::dmrg_run(h, h, init, opt);
    } else {
        const double s = detail::sector_sign(opt.sector);
        auto projected = detail::project_parity(init, s);
        for (std::uint64_t k = 1; !projected && k < 8; ++k)
            projected = detail::project_parity(random_mps(specs, std::min(opt.init_bond, opt.spec.max_rank), opt.seed + k), s);
        if (!projected) throw std::runtime_error("ground_state: could not prepare a state in the parity sector");
        double mu = opt.parity_penalty;
        if (mu <= 0.0) mu = std::max(2.0, std::abs(mpo_expectation(*projected, h, *projected).real()));
        // a penalty smaller than the sector's spectral window lets the other
        // sector through; raise it until the result has the requested parity
        for (int attempt = 0; attempt < 4; ++attempt, mu *= 10.0) {
            const MPOperator hp = mpo_sum(
                {{cplx(1.0, 0.0), h}, {cplx(mu / 2, 0.0), identity_mpo(specs)}, {cplx(-s * mu / 2, 0.0), build_parity_mpo(specs)}});
            res = detail::dmrg_run(h, hp, *projected, opt);
            if (s * res.report.parity > 0.5) break;
        }
    }
    if (opt.throw_on_cap && !res.report.converged)
        throw GroundStateConvergenceError("ground_state: sweep cap reached", std::move(res));
    return res;
}

struct EigenstateSet {
    std::vector<MPSState> states;
    std::vector<double> energies;
    std::vector<ConvergenceReport> reports;
    Eigen::MatrixXd pairwise_overlaps;  ///< |<psi_i|psi_j>|

    std::vector<double> gaps() const {
        std::vector<double> g;
        for (std::size_t i = 1; i < energies.size(); ++i) g.push_back(energies[i] - energies[0]);
        return g;
    }
    double max_offdiagonal_overlap() const {
        double m = 0.0;
        for (Eigen::Index i = 0; i < pairwise_overlaps.rows(); ++i)
            for (Eigen::Index j = 0; j < pairwise_overlaps.cols(); ++j)
                if (i != j) m = std::max(m, pairwise_overlaps(i, j));
        return m;
    }
};

struct ExcitedStateOptions {
    GroundStateOptions ground{};
    /// Search both parity sectors separately (the Hamiltonian commutes with P).
    bool use_parity = true;
    int max_retries = 3;
    /// Pairs closer than this (relative to |E_0|) are ordered by parity, even first.
    double degeneracy_tol = 1e-6;
};

namespace detail {

/// psi minus its projections on `found`, renormalised.
inline MPSState orthogonalized(const MPSState& psi, const std::vector<MPSState>& found, const TruncationSpec& spec) {
    if (found.empty()) return psi;
    std::vector<FitTarget> targets{{cplx(1.0, 0.0), nullptr, &psi}};
    std::vector<cplx> c;
    for (const auto& f : found) c.push_back(overlap(f, psi));
    for (std::size_t j = 0; j < found.size(); ++j) targets.push_back({-c[j], nullptr, &found[j]});
    FitOptions fo;
    fo.spec = spec;
    fo.guess = psi;
    fo.max_sweeps = 4;
    return normalized(variational_fit(targets, fo).state);
}

/// k lowest states within one sector (or without a sector).
inline std::vector<GroundStateResult> lowest_in_sector(const MPOperator& h, int k, ParitySector sector,
                                                       const ExcitedStateOptions& opt) {
    std::vector<GroundStateResult> out;
    std::vector<MPSState> found;
    double gap_est = 0.0;
    for (int m = 0; m < k; ++m) {
        GroundStateOptions o = opt.ground;
        o.sector = sector;
        o.throw_on_cap = false;
        o.seed = opt.ground.seed + 1000 * static_cast<std::uint64_t>(m);
        if (m > 0) o.init.reset();
        const double e0 = out.empty() ? 0.0 : out.front().report.energy;
        double lambda = 10.0 * std::max(gap_est, 1e-2 * std::max(std::abs(e0), 1.0));
        std::vector<const MPSState*> pens;
        for (const auto& f : found) pens.push_back(&f);
        o.penalized = pens;
        GroundStateResult r;
        for (int attempt = 0; attempt <= opt.max_retries; ++attempt) {
            o.penalty_weight = lambda;
            r = ground_state(h, o);
            double worst = 0.0;
            for (const auto& f : found) worst = std::max(worst, std::abs(overlap(f, r.state)));
            if (worst <= 0.5) break;
            lambda *= 10.0;
        }
        r.state = orthogonalized(r.state, found, TruncationSpec{opt.ground.spec.max_rank, 0.0, 0.0});
        fill_report_observables(r.state, h, r.report);
        r.report.converged = r.report.converged &&
                             r.report.energy_variance < 100.0 * opt.ground.variance_tol * r.report.energy_scale * r.report.energy_scale;
        if (m == 0) gap_est = std::max(gap_est, std::abs(r.report.local_gap));
        else gap_est = std::max(gap_est, r.report.energy - out.front().report.energy);
        found.push_back(r.state);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace detail

/// k lowest eigenstates, counted with multiplicity. With use_parity each
/// sector contributes its k lowest and the merged list is cut to k.
inline EigenstateSet excited_states(const MPOperator& h, int k, const ExcitedStateOptions& opt = {}) {
    if (k < 1) throw std::invalid_argument("excited_states: k must be >= 1");
    h.validate();
    std::vector<GroundStateResult> all;
    if (opt.use_parity) {
        for (auto s : {ParitySector::even, ParitySector::odd}) {
            auto part = detail::lowest_in_sector(h, k, s, opt);
            for (auto& r : part) all.push_back(std::move(r));
        }
    } else {
        all = detail::lowest_in_sector(h, k, ParitySector::none, opt);
    }
    double e_ref = all.front().report.energy;
    for (const auto& r : all) e_ref = std::min(e_ref, r.report.energy);
    const double tol = opt.degeneracy_tol * std::max(std::abs(e_ref), 1.0);
    std::stable_sort(all.begin(), all.end(),
                     [](const GroundStateResult& a, const GroundStateResult& b) { return a.report.energy < b.report.energy; });
    for (std::size_t i = 0; i + 1 < all.size(); ++i) {
        if (std::abs(all[i].report.energy - all[i + 1].report.energy) < tol && all[i].report.parity < all[i + 1].report.parity)
            std::swap(all[i], all[i + 1]);
    }
    all.resize(std::min<std::size_t>(all.size(), static_cast<std::size_t>(k)));
    EigenstateSet set;
    for (auto& r : all) {
        set.energies.push_back(r.report.energy);
        set.reports.push_back(r.report);
        set.states.push_back(std::move(r.state));
    }
    const auto m = static_cast<Eigen::Index>(set.states.size());
    set.pairwise_overlaps = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j)
            set.pairwise_overlaps(i, j) = std::abs(overlap(set.states[i], set.states[j]));
    return set;
}

struct ThermalAverage {
    double value = 0.0;
    /// Boltzmann weight of the highest included state.
    double highest_weight = 0.0;
};

inline ThermalAverage thermal_average(const std::vector<double>& energies, const std::vector<double>& values,
                                      double temperature) {
    const double e0 = *std::min_element(energies.begin(), energies.end());
    double z = 0.0, acc = 0.0;
    std::vector<double> w;
    for (std::size_t i = 0; i < energies.size(); ++i) {
        w.push_back(std::exp(-(energies[i] - e0) / temperature));
        z += w.back();
        acc += w.back() * values[i];
    }
    ThermalAverage t;
    t.value = acc / z;
    t.highest_weight = w.back() / z;
    return t;
}

/// Boltzmann average of <psi_i|O|psi_i> over the computed states.
inline ThermalAverage thermal_average(const EigenstateSet& set, double temperature, const MPOperator& obs) {
    if (set.states.empty()) throw std::invalid_argument("thermal_average: empty set");
    if (!(temperature > 0.0)) throw std::invalid_argument("thermal_average: temperature must be > 0");
    std::vector<double> vals;
    for (const auto& s : set.states) vals.push_back(mpo_expectation(s, obs, s).real() / overlap(s, s).real());
    return thermal_average(set.energies, vals, temperature);
}

}  // namespace dmps
