#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dicke_mps/environment.hpp"
#include "dicke_mps/model.hpp"
#include "dicke_mps/mpo.hpp"
#include "dicke_mps/mps.hpp"

namespace dmps {

/// Reduced density matrix of the oscillator (normalised by |psi|^2).
struct OscillatorState {
    MatrixXc rho;
    double trace = 0.0;
};

inline OscillatorState oscillator_density_matrix(const MPSState& psi) {
    const std::size_t osc = oscillator_position(psi.specs);
    const MPSState c = canonicalize(psi, osc);
    const MatrixForm f = to_matrix(c.sites[osc], {"p"});  // (p) x (l r)
    MatrixXc rho = f.matrix * f.matrix.adjoint();
    const double n2 = rho.trace().real();
    if (!(n2 > 0.0)) throw std::domain_error("oscillator_density_matrix: zero-norm state");
    rho /= n2;
    OscillatorState out;
    out.rho = 0.5 * (rho + rho.adjoint());
    out.trace = out.rho.trace().real();
    return out;
}

/// -Tr rho log2 rho; eigenvalues below 1e-14 contribute nothing.
inline double von_neumann_entropy(const MatrixXc& rho) {
    Eigen::SelfAdjointEigenSolver<MatrixXc> es(0.5 * (rho + rho.adjoint()), Eigen::EigenvaluesOnly);
    double s = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double p = es.eigenvalues()(i);
        if (p > 1e-14) s -= p * std::log2(p);
    }
    return s;
}

inline double von_neumann_entropy(const OscillatorState& st) { return von_neumann_entropy(st.rho); }

struct PhotonStats {
    double mean = 0.0;
    double variance = 0.0;
};

inline PhotonStats photon_stats(const OscillatorState& st) {
    PhotonStats s;
    double m2 = 0.0;
    for (Eigen::Index n = 0; n < st.rho.rows(); ++n) {
        const double p = st.rho(n, n).real();
        s.mean += n * p;
        m2 += static_cast<double>(n) * n * p;
    }
    s.variance = m2 - s.mean * s.mean;
    return s;
}

inline PhotonStats photon_stats(const MPSState& psi) { return photon_stats(oscillator_density_matrix(psi)); }

/// Population of the highest retained Fock state.
inline double top_fock_population(const OscillatorState& st) {
    const auto d = st.rho.rows();
    return st.rho(d - 1, d - 1).real();
}

/// <(a + a')> / sqrt 2.
inline double quadrature_mean(const OscillatorState& st) {
    const int n_max = static_cast<int>(st.rho.rows()) - 1;
    return (st.rho * ops::field(n_max)).trace().real() / std::sqrt(2.0);
}

inline double quadrature_mean(const MPSState& psi) { return quadrature_mean(oscillator_density_matrix(psi)); }

inline double parity_expectation(const MPSState& psi) {
    const MPOperator p = build_parity_mpo(psi.specs);
    const double n2 = overlap(psi, psi).real();
    return mpo_expectation(psi, p, psi).real() / n2;
}

/// <psi|O_site|psi> / <psi|psi> for each listed site, sweeping the centre once.
inline std::vector<cplx> local_expectations(const MPSState& psi, const std::vector<std::size_t>& sites,
                                            const std::vector<MatrixXc>& ops_at) {
    std::vector<cplx> out;
    if (sites.empty()) return out;
    MPSState c = canonicalize(psi, sites.front());
    for (std::size_t k = 0; k < sites.size(); ++k) {
        c = canonicalize(c, sites[k]);
        const DenseTensor& t = c.sites[sites[k]];
        const std::size_t d = t.extent("p");
        const DenseTensor o = from_matrix(ops_at[k], {d}, {"po"}, {d}, {"pi"});
        const DenseTensor ot = contract(o, t, {{"pi", "p"}}).relabeled("po", "p");
        out.push_back(inner(t, ot) / t.norm2());
    }
    return out;
}

enum class Axis { x, y, z };

/// Per-spin <sigma_axis>, in spin order.
inline std::vector<double> magnetization(const MPSState& psi, Axis axis) {
    const auto spins = spin_positions(psi.specs);
    const MatrixXc s = axis == Axis::x ? ops::sigma_x() : axis == Axis::y ? ops::sigma_y() : ops::sigma_z();
    const auto v = local_expectations(psi, spins, std::vector<MatrixXc>(spins.size(), s));
    std::vector<double> out;
    for (const auto& z : v) out.push_back(z.real());
    return out;
}

inline DenseTensor identity_env(std::size_t d) {
    DenseTensor e({d, d}, {"b", "k"});
    for (std::size_t q = 0; q < d; ++q) e({q, q}) = 1.0;
    return e;
}

/// Raw two-point functions <O_i O_j> over all site pairs i < j drawn from
/// `sites`, by one left-to-right transfer per starting site.
inline MatrixXc two_point_matrix(const MPSState& psi, const std::vector<std::size_t>& sites, const MatrixXc& op) {
    const std::size_t m = sites.size();
    MatrixXc out = MatrixXc::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    if (m < 2) return out;
    MPSState c = canonicalize(psi, sites.front());
    const double n2 = c.sites[sites.front()].norm2();
    auto apply_op = [&](const DenseTensor& t) {
        const std::size_t d = t.extent("p");
        const DenseTensor o = from_matrix(op, {d}, {"po"}, {d}, {"pi"});
        return contract(o, t, {{"pi", "p"}}).relabeled("po", "p");
    };
    for (std::size_t a = 0; a + 1 < m; ++a) {
        c = canonicalize(c, sites[a]);
        const std::size_t i = sites[a];
        const DenseTensor ket = apply_op(c.sites[i]);
        DenseTensor e = env::extend_left(identity_env(c.sites[i].extent("l")), c.sites[i], {}, ket);
        std::size_t b = a + 1;
        for (std::size_t j = i + 1; j < c.length() && b < m; ++j) {
            if (j == sites[b]) {
                const DenseTensor closed = env::extend_left(e, c.sites[j], {}, apply_op(c.sites[j]));
                // right of j is right-isometric: close with the identity
                cplx v = 0.0;
                for (std::size_t q = 0; q < closed.extent("b"); ++q) v += closed({q, q});
                out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v / n2;
                out(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = std::conj(v) / n2;
                ++b;
            }
            e = env::extend_left(e, c.sites[j], {}, c.sites[j]);
        }
    }
    return out;
}

struct CorrelationPair {
    std::size_t i = 0, j = 0;  ///< spin indices
    double value = 0.0;        ///< connected correlator
};

struct CorrelationFit {
    std::optional<double> xi;  ///< empty means no decay
    double slope = 0.0;
    double residual = 0.0;  ///< RMS deviation of log|C| from the fitted line
    int points = 0;
};

/// Least-squares fit of log|C(r)| = c + slope r. Points with |C| <= 1e-14
/// are treated as zero and skipped.
inline CorrelationFit fit_correlation_length(const std::vector<std::pair<double, double>>& rc) {
    CorrelationFit f;
    std::vector<double> xs, ys;
    for (const auto& [r, c] : rc) {
        if (std::abs(c) > 1e-14 && std::isfinite(c)) {
            xs.push_back(r);
            ys.push_back(std::log(std::abs(c)));
        }
    }
    f.points = static_cast<int>(xs.size());
    if (xs.size() < 2) return f;
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        sx += xs[k];
        sy += ys[k];
        sxx += xs[k] * xs[k];
        sxy += xs[k] * ys[k];
    }
    const double den = n * sxx - sx * sx;
    if (den == 0.0) return f;
    f.slope = (n * sxy - sx * sy) / den;
    const double icpt = (sy - f.slope * sx) / n;
    double ss = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) ss += std::pow(ys[k] - icpt - f.slope * xs[k], 2);
    f.residual = std::sqrt(ss / n);
    if (f.slope < -1e-6) f.xi = -1.0 / f.slope;
    return f;
}

struct CorrelationProfile {
    std::vector<CorrelationPair> pairs;
    CorrelationFit fit;
    int r_min = 2, r_max = 0;
    std::size_t edge = 0;  ///< spins within this distance of either end are excluded
};

/// Windowed fit over a list of pair correlators on an L-spin chain: |C(r)|
/// averaged over interior pairs at each r in [2, L/2], spins within L/8 of
/// either end excluded.
inline CorrelationProfile correlation_profile(std::vector<CorrelationPair> pairs, std::size_t L) {
    CorrelationProfile prof;
    prof.pairs = std::move(pairs);
    prof.edge = L / 8;
    prof.r_max = static_cast<int>(L / 2);
    std::vector<std::pair<double, double>> rc;
    for (int r = prof.r_min; r <= prof.r_max; ++r) {
        double sum = 0.0;
        int count = 0;
        for (const auto& p : prof.pairs) {
            if (static_cast<int>(p.j - p.i) != r) continue;
            if (p.i < prof.edge || p.j + prof.edge >= L) continue;
            sum += std::abs(p.value);
            ++count;
        }
        if (count > 0) rc.emplace_back(r, sum / count);
    }
    prof.fit = fit_correlation_length(rc);
    return prof;
}

/// Connected <sy_i sy_j> - <sy_i><sy_j> for all spin pairs with the
/// correlation length fitted by correlation_profile.
inline CorrelationProfile sigma_y_correlations(const MPSState& psi) {
    const auto spins = spin_positions(psi.specs);
    const std::size_t L = spins.size();
    const MatrixXc raw = two_point_matrix(psi, spins, ops::sigma_y());
    const auto single = magnetization(psi, Axis::y);
    std::vector<CorrelationPair> pairs;
    for (std::size_t a = 0; a < L; ++a)
        for (std::size_t b = a + 1; b < L; ++b)
            pairs.push_back({a, b, raw(Eigen::Index(a), Eigen::Index(b)).real() - single[a] * single[b]});
    return correlation_profile(std::move(pairs), L);
}

}  // namespace dmps
