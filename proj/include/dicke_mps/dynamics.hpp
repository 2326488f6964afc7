#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "dicke_mps/environment.hpp"
#include "dicke_mps/errors.hpp"
#include "dicke_mps/fit.hpp"
#include "dicke_mps/mpo.hpp"
#include "dicke_mps/mps.hpp"
#include "dicke_mps/observables.hpp"
#include "dicke_mps/record.hpp"
#include "dicke_mps/rng.hpp"

namespace dmps {

struct KrylovConfig {
    int subspace_dim = 8;
    TruncationSpec fit_spec{128, 1e-12, 0.0};
    /// Off-diagonal Gram entries above this are reported by krylov_basis.
    double orthogonality_tol = 1e-8;
    double step_dt = 0.01;
    /// Basis growth stops when the new vector's norm falls below this
    /// fraction of |H|j-1>|.
    double invariant_tol = 1e-10;
    /// Growth stops once the last propagation coefficient is below this.
    double early_stop = 1e-10;
    /// New vectors are orthogonalised against this many predecessors
    /// (2 is the Lanczos recurrence); 0 means all of them.
    int recurrence = 2;
    int fit_sweeps = 6;
    double fit_tol = 1e-13;

    void validate() const {
        if (recurrence < 0) throw std::invalid_argument("KrylovConfig: recurrence must be >= 0");
        if (subspace_dim < 2) throw std::invalid_argument("KrylovConfig: subspace_dim must be >= 2");
        if (!(step_dt >= 0.0) || !std::isfinite(step_dt)) throw std::invalid_argument("KrylovConfig: step_dt must be >= 0");
        fit_spec.validate();
    }
};

inline double default_time_step(double omega, double kappa) {
    double dt = 0.01 / omega;
    if (kappa > 0.0) dt = std::min(dt, 0.1 / kappa);
    return dt;
}

struct KrylovBasis {
    std::vector<MPSState> basis;  ///< normalised
    MatrixXc h_small;             ///< <i|H|j>
    MatrixXc gram;                ///< <i|j>
    std::vector<double> fit_residuals;
    /// Largest |<i|j>| for i != j.
    double max_overlap = 0.0;
    bool invariant = false;
};

namespace detail {

/// Propagation coefficients in a non-orthogonal basis: with S the Gram
/// matrix, S c' = -i h c gives c(t) = S^-1/2 exp(-i S^-1/2 h S^-1/2 t) S^1/2 e0.
inline VectorXc krylov_coefficients(const MatrixXc& h, const MatrixXc& s, double dt) {
    const auto n = h.rows();
    Eigen::SelfAdjointEigenSolver<MatrixXc> es(0.5 * (s + s.adjoint()));
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-300);
    const MatrixXc& q = es.eigenvectors();
    const MatrixXc s_half = q * ev.cwiseSqrt().cast<cplx>().asDiagonal() * q.adjoint();
    const MatrixXc s_mhalf = q * ev.cwiseSqrt().cwiseInverse().cast<cplx>().asDiagonal() * q.adjoint();
    MatrixXc ht = s_mhalf * h * s_mhalf;
    ht = 0.5 * (ht + ht.adjoint());
    Eigen::SelfAdjointEigenSolver<MatrixXc> eh(ht);
    VectorXc ph(n);
    for (Eigen::Index i = 0; i < n; ++i) ph(i) = std::exp(cplx(0.0, -eh.eigenvalues()(i) * dt));
    const MatrixXc u = eh.eigenvectors() * ph.asDiagonal() * eh.eigenvectors().adjoint();
    return s_mhalf * (u * s_half.col(0));
}

inline FitOptions krylov_fit_options(const KrylovConfig& cfg) {
    FitOptions fo;
    fo.spec = cfg.fit_spec;
    fo.max_sweeps = cfg.fit_sweeps;
    fo.tol = cfg.fit_tol;
    return fo;
}

/// Builds the basis; `stop` is consulted after every new vector.
inline KrylovBasis krylov_build(const MPSState& psi, const MPOperator& h, const KrylovConfig& cfg,
                                const std::function<bool(const KrylovBasis&)>& stop) {
    cfg.validate();
    KrylovBasis kb;
    const double n0 = norm(psi);
    if (!(n0 > 0.0)) throw std::invalid_argument("krylov_basis: zero state");
    kb.basis.push_back(scaled(psi, 1.0 / n0));
    kb.h_small = MatrixXc::Constant(1, 1, mpo_expectation(kb.basis[0], h, kb.basis[0]).real());
    kb.gram = MatrixXc::Identity(1, 1);
    const FitOptions fo = krylov_fit_options(cfg);

    while (static_cast<int>(kb.basis.size()) < cfg.subspace_dim) {
        const auto m = static_cast<Eigen::Index>(kb.basis.size());
        const MPSState& prev = kb.basis.back();
        // projection onto the last few vectors: coefficients S_kk^-1 <k|H|prev>
        const Eigen::Index k0 = cfg.recurrence > 0 ? std::max<Eigen::Index>(0, m - cfg.recurrence) : 0;
        const Eigen::Index nk = m - k0;
        const VectorXc b = kb.h_small.col(m - 1).tail(nk);
        const MatrixXc sk = kb.gram.bottomRightCorner(nk, nk);
        const VectorXc c = sk.ldlt().solve(b);
        const double hnorm2 = sandwich(prev, {&h, &h}, prev).real();
        const double rem2 = hnorm2 - (b.adjoint() * c)(0, 0).real();
        if (!(hnorm2 > 0.0) || rem2 <= cfg.invariant_tol * cfg.invariant_tol * hnorm2) {
            kb.invariant = true;
            break;
        }
        std::vector<FitTarget> targets{FitTarget{cplx(1.0, 0.0), &h, &prev}};
        for (Eigen::Index i = 0; i < nk; ++i) targets.push_back(FitTarget{-c(i), nullptr, &kb.basis[k0 + i]});
        FitOptions fo_j = fo;
        fo_j.target_norm2 = rem2;
        FitResult fr = variational_fit(targets, fo_j);
        const double nn = norm(fr.state);
        if (fr.zero || nn <= cfg.invariant_tol * std::sqrt(hnorm2)) {
            kb.invariant = true;
            break;
        }
        kb.fit_residuals.push_back(fr.residual / nn);
        MPSState next = scaled(fr.state, 1.0 / nn);

        MatrixXc h2 = MatrixXc::Zero(m + 1, m + 1), s2 = MatrixXc::Zero(m + 1, m + 1);
        h2.topLeftCorner(m, m) = kb.h_small;
        s2.topLeftCorner(m, m) = kb.gram;
        for (Eigen::Index i = 0; i < m; ++i) {
            h2(i, m) = mpo_expectation(kb.basis[i], h, next);
            h2(m, i) = std::conj(h2(i, m));
            s2(i, m) = overlap(kb.basis[i], next);
            s2(m, i) = std::conj(s2(i, m));
            kb.max_overlap = std::max(kb.max_overlap, std::abs(s2(i, m)));
        }
        h2(m, m) = mpo_expectation(next, h, next).real();
        s2(m, m) = 1.0;
        kb.h_small = std::move(h2);
        kb.gram = std::move(s2);
        kb.basis.push_back(std::move(next));
        if (stop && stop(kb)) break;
    }
    return kb;
}

}  // namespace detail

/// Krylov basis |j> ~ H|j-1> - sum_i c_i |i> over the last `recurrence`
/// vectors, each new vector obtained by a variational fit and normalised.
inline KrylovBasis krylov_basis(const MPSState& psi, const MPOperator& h, const KrylovConfig& cfg = {}) {
    return detail::krylov_build(psi, h, cfg, {});
}

struct KrylovStep {
    MPSState state;
    double error_estimate = 0.0;
    int basis_size = 0;
};

/// exp(-i H dt)|psi> within the Krylov space, fitted back to a single MPS.
/// The result is not renormalised.
inline KrylovStep krylov_step(const MPSState& psi, const MPOperator& h, const KrylovConfig& cfg = {}) {
    cfg.validate();
    const double dt = cfg.step_dt;
    KrylovStep out;
    if (dt == 0.0) {
        out.state = psi;
        out.basis_size = 1;
        return out;
    }
    const double n0 = norm(psi);
    auto stop = [&](const KrylovBasis& kb) {
        const VectorXc c = detail::krylov_coefficients(kb.h_small, kb.gram, dt);
        return std::abs(c(c.size() - 1)) < cfg.early_stop;
    };
    const KrylovBasis kb = detail::krylov_build(psi, h, cfg, stop);
    const VectorXc c = detail::krylov_coefficients(kb.h_small, kb.gram, dt);
    out.basis_size = static_cast<int>(kb.basis.size());
    out.error_estimate = kb.invariant ? 0.0 : std::abs(c(c.size() - 1));
    for (double r : kb.fit_residuals) out.error_estimate += r;

    if (kb.basis.size() == 1) {
        out.state = scaled(kb.basis[0], c(0) * n0);
        return out;
    }
    std::vector<FitTarget> targets;
    for (std::size_t j = 0; j < kb.basis.size(); ++j)
        if (c(j) != cplx(0.0, 0.0)) targets.push_back(FitTarget{c(j) * n0, nullptr, &kb.basis[j]});
    FitOptions fo = detail::krylov_fit_options(cfg);
    fo.guess = compress(scaled(kb.basis[0], c(0) * n0), cfg.fit_spec).state;
    fo.target_norm2 = n0 * n0 * (c.adjoint() * kb.gram * c)(0, 0).real();
    FitResult fr = variational_fit(targets, fo);
    out.error_estimate += fr.relative_residual;
    out.state = std::move(fr.state);
    return out;
}

/// dy = sqrt(kappa) <a + a'> dt + dW.
inline double homodyne_increment(const MPSState& psi, double kappa, double dt, double dW) {
    if (kappa < 0.0 || !(dt > 0.0)) throw std::invalid_argument("homodyne_increment: kappa >= 0 and dt > 0 required");
    if (kappa == 0.0) return dW;
    const double x = std::sqrt(2.0) * quadrature_mean(psi);
    return std::sqrt(kappa) * x * dt + dW;
}

inline double homodyne_increment(const MPSState& psi, double kappa, double dt, NormalStream& rng) {
    return homodyne_increment(psi, kappa, dt, std::sqrt(dt) * rng.next());
}

/// Omega(dy) = 1 - (kappa/2) a'a dt + sqrt(kappa) a dy on the oscillator.
inline MatrixXc measurement_operator(int n_max, double kappa, double dt, double dy) {
    return ops::identity(n_max + 1) - 0.5 * kappa * dt * ops::number(n_max) + std::sqrt(kappa) * dy * ops::annihilation(n_max);
}

struct MeasurementResult {
    MPSState state;
    double pre_norm = 1.0;  ///< |Omega psi| / |psi|
};

/// Applies Omega(dy) locally and renormalises. Bond dimensions are unchanged,
/// so `spec` is accepted for interface symmetry only.
inline MeasurementResult measurement_update(const MPSState& psi, double kappa, double dt, double dy,
                                            const TruncationSpec& spec = {}) {
    (void)spec;
    const std::size_t osc = oscillator_position(psi.specs);
    const int n_max = static_cast<int>(psi.specs[osc].phys_dim) - 1;
    const double n_in = norm(psi);
    MeasurementResult r;
    MPSState out = apply_local(canonicalize(psi, osc), osc, measurement_operator(n_max, kappa, dt, dy));
    const double n_out = norm(out);
    r.pre_norm = n_in > 0.0 ? n_out / n_in : 0.0;
    if (!(n_out > 1e-300) || !std::isfinite(n_out))
        throw DegenerateUpdateError("measurement_update: Omega(dy) annihilated the state; reduce dt");
    r.state = scaled(out, 1.0 / n_out);
    r.state.center = osc;
    return r;
}

struct TrajectoryOptions {
    double kappa = 0.5;
    double t_final = 1.0;
    KrylovConfig krylov;  ///< krylov.step_dt is the trajectory step
    std::uint64_t seed = 1;
    int observables_every = 5;
    bool keep_rho = false;
    /// Overrides the seed-driven increments when set.
    IncrementSource increments;
    /// Called after each step with (step index, state); may be empty.
    std::function<void(std::size_t, const MPSState&)> on_step;
};

/// Split-step trajectory: Krylov propagation over dt, then dy from the
/// propagated state and the Omega(dy) update with renormalisation.
/// Failures end the record early with `complete = false` and the cause.
inline TrajectoryRecord run_trajectory(const MPSState& psi0, const MPOperator& h, const ModelParams& params,
                                       const TrajectoryOptions& o) {
    if (o.observables_every < 1) throw std::invalid_argument("run_trajectory: observables_every must be >= 1");
    o.krylov.validate();
    const double dt = o.krylov.step_dt;
    if (!(dt > 0.0)) throw std::invalid_argument("run_trajectory: dt must be > 0");
    TrajectoryRecord rec;
    rec.seed = o.seed;
    rec.params = params;
    rec.kappa = o.kappa;
    rec.dt = dt;
    IncrementSource dw = o.increments ? o.increments : stream_increments(o.seed);
    MPSState psi = normalized(psi0);
    auto record = [&](double t, double dy, double drift) {
        record_point(rec, t, dy, drift, oscillator_density_matrix(psi), parity_expectation(psi), o.keep_rho);
    };
    record(0.0, 0.0, 0.0);
    const auto steps = static_cast<std::size_t>(std::llround(o.t_final / dt));
    for (std::size_t k = 0; k < steps; ++k) {
        try {
            KrylovStep ks = krylov_step(psi, h, o.krylov);
            psi = normalized(ks.state);
            const double dy = homodyne_increment(psi, o.kappa, dt, dw(k, dt));
            MeasurementResult mr = measurement_update(psi, o.kappa, dt, dy, o.krylov.fit_spec);
            psi = std::move(mr.state);
            rec.step_dy.push_back(dy);
            rec.step_norm_drift.push_back(mr.pre_norm - 1.0);
            if (o.on_step) o.on_step(k, psi);
            if ((k + 1) % static_cast<std::size_t>(o.observables_every) == 0)
                record(static_cast<double>(k + 1) * dt, dy, mr.pre_norm - 1.0);
        } catch (const std::exception& e) {
            rec.complete = false;
            rec.failure = "step " + std::to_string(k) + ": " + e.what();
            break;
        }
    }
    return rec;
}

}  // namespace dmps
