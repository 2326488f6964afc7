#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <tuple>
#include <vector>

#include "dicke_mps/environment.hpp"
#include "dicke_mps/errors.hpp"
#include "dicke_mps/mpo.hpp"
#include "dicke_mps/mps.hpp"

namespace dmps {

/// One term c * O |psi> of a fit target; op == nullptr means the identity.
struct FitTarget {
    cplx coeff{1.0, 0.0};
    const MPOperator* op = nullptr;
    const MPSState* state = nullptr;
};

struct FitOptions {
    TruncationSpec spec{};
    int max_sweeps = 10;
    /// Stop once the residual changes by less than tol * |target| over a sweep.
    double tol = 1e-12;
    /// Also stop once a sweep improves the residual by less than this
    /// fraction of itself (the truncation floor has been reached); 0 disables.
    double stall_tol = 1e-2;
    std::optional<MPSState> guess;
    /// |target|^2 when the caller already knows it; skips the sandwich pass.
    std::optional<double> target_norm2;
    /// Targets with |target|^2 below this fraction of sum |c_k|^2 <psi_k|O_k'O_k|psi_k>
    /// are reported as zero.
    double zero_tol = 1e-20;
};

struct FitResult {
    MPSState state;
    double residual = 0.0;           ///< |chi - target|
    double relative_residual = 0.0;  ///< residual / |target|
    double target_norm = 0.0;
    std::vector<double> residual_history;  ///< after each half sweep
    int sweeps = 0;
    bool zero = false;
    bool converged = false;
};

namespace detail {

inline Layers fit_layers(const FitTarget& t) {
    if (t.op) return {t.op};
    return {};
}

/// <target|target> = sum_kl conj(c_k) c_l <psi_k|O_k' O_l|psi_l>.
inline std::pair<double, double> target_norm2(const std::vector<FitTarget>& targets) {
    double total = 0.0, diag = 0.0;
    std::vector<MPOperator> adj;
    adj.reserve(targets.size());
    for (const auto& t : targets) adj.push_back(t.op ? adjoint(*t.op) : MPOperator{});
    for (std::size_t k = 0; k < targets.size(); ++k) {
        for (std::size_t l = k; l < targets.size(); ++l) {
            Layers layers;
            if (targets[k].op) layers.push_back(&adj[k]);
            if (targets[l].op) layers.push_back(targets[l].op);
            const cplx v = std::conj(targets[k].coeff) * targets[l].coeff *
                           sandwich(*targets[k].state, layers, *targets[l].state);
            if (k == l) {
                total += v.real();
                diag += v.real();
            } else {
                total += 2.0 * v.real();
            }
        }
    }
    return {total, diag};
}

}  // namespace detail

/// Two-site variational fit of chi to sum_k c_k O_k |psi_k>, minimising
/// |chi - target|^2 at the bond cap of opt.spec.
inline FitResult variational_fit(const std::vector<FitTarget>& targets, const FitOptions& opt = {}) {
    if (targets.empty()) throw std::invalid_argument("variational_fit: no targets");
    const auto& specs = targets.front().state->specs;
    for (const auto& t : targets) {
        require_same_lattice(specs, t.state->specs);
        if (t.op) require_same_lattice(specs, t.op->specs);
    }
    opt.spec.validate();
    const std::size_t n = specs.size();

    FitResult res;
    double t2 = 0.0, diag = 0.0;
    if (opt.target_norm2) {
        t2 = diag = *opt.target_norm2;
    } else {
        std::tie(t2, diag) = detail::target_norm2(targets);
    }
    res.target_norm = std::sqrt(std::max(0.0, t2));

    MPSState chi;
    if (opt.guess) {
        require_same_lattice(specs, opt.guess->specs);
        chi = *opt.guess;
    } else {
        std::size_t best = 0;
        for (std::size_t k = 1; k < targets.size(); ++k)
            if (std::abs(targets[k].coeff) > std::abs(targets[best].coeff)) best = k;
        const auto& t = targets[best];
        chi = t.op ? compress(apply_mpo(*t.op, *t.state), opt.spec).state : *t.state;
    }
    chi = canonicalize(chi, 0);
    if (n == 1) throw DimensionError("variational_fit: chain too short");

    std::vector<EnvStack> envs;
    for (const auto& t : targets) {
        envs.emplace_back(detail::fit_layers(t), n);
        envs.back().build_right(chi, *t.state, 2);
    }

    auto local_target = [&](std::size_t i) {
        DenseTensor acc;
        for (std::size_t k = 0; k < targets.size(); ++k) {
            const auto& t = targets[k];
            auto& e = envs[k];
            DenseTensor v = env::apply_two(e.left(i), e.ws(i), e.ws(i + 1), e.right(i + 2), t.state->sites[i],
                                           t.state->sites[i + 1]);
            if (k == 0) {
                acc = t.coeff * v;
            } else {
                acc.axpy(t.coeff, v);
            }
        }
        return acc;
    };

    double prev = std::numeric_limits<double>::infinity();
    double chi_norm2 = 0.0;
    for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
        double r2 = 0.0;
        for (int dir = 0; dir < 2; ++dir) {
            const bool right = dir == 0;
            for (std::size_t step = 0; step + 1 < n; ++step) {
                const std::size_t i = right ? step : n - 2 - step;
                const DenseTensor t = local_target(i);
                SvdResult f = svd_truncate(t, {"l", "p1"}, opt.spec, "m");
                double kept = 0.0;
                for (double s : f.s) kept += s * s;
                chi_norm2 = kept;
                // chi is the orthogonal projection of the target, so <chi|T> = |chi|^2.
                r2 = std::max(0.0, t2 - kept);
                if (right) {
                    chi.sites[i] = f.U.relabeled("p1", "p").relabeled("m", "r");
                    chi.sites[i + 1] = scale_axis(f.V, "m", f.s).relabeled("m", "l").relabeled("p2", "p");
                    for (std::size_t k = 0; k < targets.size(); ++k) envs[k].update_left(i, chi.sites[i], targets[k].state->sites[i]);
                    chi.center = i + 1;
                } else {
                    chi.sites[i] = scale_axis(f.U, "m", f.s).relabeled("p1", "p").relabeled("m", "r");
                    chi.sites[i + 1] = f.V.relabeled("m", "l").relabeled("p2", "p");
                    for (std::size_t k = 0; k < targets.size(); ++k)
                        envs[k].update_right(i + 1, chi.sites[i + 1], targets[k].state->sites[i + 1]);
                    chi.center = i;
                }
            }
            res.residual_history.push_back(std::sqrt(r2));
        }
        res.sweeps = sweep + 1;
        const double r = std::sqrt(r2);
        if (std::abs(prev - r) <= opt.tol * std::max(res.target_norm, 1e-300) ||
            (opt.stall_tol > 0.0 && prev - r <= opt.stall_tol * r)) {
            res.converged = true;
            prev = r;
            break;
        }
        prev = r;
    }
    res.residual = prev;
    res.relative_residual = res.target_norm > 0.0 ? prev / res.target_norm : 0.0;
    res.zero = chi_norm2 <= opt.zero_tol * std::max(diag, 1e-300) || t2 <= opt.zero_tol * diag;
    res.state = std::move(chi);
    return res;
}

/// Convenience: fit c * O|psi>.
inline FitResult fit_apply(const MPOperator& op, const MPSState& psi, const FitOptions& opt = {}) {
    return variational_fit({FitTarget{cplx(1.0, 0.0), &op, &psi}}, opt);
}

}  // namespace dmps
