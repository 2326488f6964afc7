#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "dicke_mps/errors.hpp"
#include "dicke_mps/model.hpp"
#include "dicke_mps/observables.hpp"
#include "dicke_mps/record.hpp"
#include "dicke_mps/rng.hpp"

namespace dmps {

using SparseR = Eigen::SparseMatrix<double>;

/// Dense reference system. Basis index = n * 2^L + s, where the spin bits of
/// s run from spin 0 (most significant) to spin L-1 and bit value 1 means
/// down. This is the order of to_vector() with the oscillator at site 0.
struct DenseSystem {
    static constexpr int kMaxL = 8;
    static constexpr int kMaxNmax = 16;

    ModelParams params;
    Eigen::Index dim = 0;
    Eigen::MatrixXd hamiltonian;  ///< real symmetric in this basis
    SparseR a, number, field;     ///< lifted oscillator operators
    std::vector<SparseR> sx, sz;  ///< lifted sx, sz per spin (sy is imaginary; see apply_sy)
    Eigen::VectorXd parity;       ///< diagonal of P

    explicit DenseSystem(const ModelParams& p) : params(p) {
        p.validate();
        if (p.L > kMaxL || p.n_max > kMaxNmax) throw DimensionError("DenseSystem: L <= 8 and n_max <= 16 required");
        const Eigen::Index ns = Eigen::Index(1) << p.L;
        const Eigen::Index d = p.n_max + 1;
        dim = d * ns;
        auto bit = [&](Eigen::Index s, int k) { return static_cast<int>((s >> (p.L - 1 - k)) & 1); };
        auto flip = [&](Eigen::Index s, int k) { return s ^ (Eigen::Index(1) << (p.L - 1 - k)); };

        std::vector<Eigen::Triplet<double>> ta, tn;
        for (Eigen::Index n = 0; n < d; ++n)
            for (Eigen::Index s = 0; s < ns; ++s) {
                tn.emplace_back(n * ns + s, n * ns + s, double(n));
                if (n > 0) ta.emplace_back((n - 1) * ns + s, n * ns + s, std::sqrt(double(n)));
            }
        a.resize(dim, dim);
        a.setFromTriplets(ta.begin(), ta.end());
        number.resize(dim, dim);
        number.setFromTriplets(tn.begin(), tn.end());
        field = SparseR(a.transpose()) + a;

        sx.resize(p.L);
        sz.resize(p.L);
        for (int k = 0; k < p.L; ++k) {
            std::vector<Eigen::Triplet<double>> tx, tz;
            for (Eigen::Index i = 0; i < dim; ++i) {
                const Eigen::Index n = i / ns, s = i % ns;
                tx.emplace_back(n * ns + flip(s, k), i, 1.0);
                tz.emplace_back(i, i, bit(s, k) ? -1.0 : 1.0);
            }
            sx[k].resize(dim, dim);
            sx[k].setFromTriplets(tx.begin(), tx.end());
            sz[k].resize(dim, dim);
            sz[k].setFromTriplets(tz.begin(), tz.end());
        }

        parity.resize(dim);
        for (Eigen::Index i = 0; i < dim; ++i) {
            const Eigen::Index n = i / ns, s = i % ns;
            int downs = 0;
            for (int k = 0; k < p.L; ++k) downs += bit(s, k);
            parity(i) = ((n + downs) % 2) ? -1.0 : 1.0;
        }

        // sy_k sy_{k+1} is real: <s'|sy sy|s> = -1 for equal bits, +1 otherwise
        hamiltonian = Eigen::MatrixXd::Zero(dim, dim);
        const double gc = p.g / std::sqrt(double(p.L));
        for (Eigen::Index i = 0; i < dim; ++i) {
            const Eigen::Index n = i / ns, s = i % ns;
            double diag = p.omega * double(n);
            for (int k = 0; k < p.L; ++k) diag -= p.h * (bit(s, k) ? -1.0 : 1.0);
            hamiltonian(i, i) += diag;
            for (int k = 0; k + 1 < p.L; ++k) {
                const double yy = bit(s, k) == bit(s, k + 1) ? -1.0 : 1.0;
                hamiltonian(n * ns + flip(flip(s, k), k + 1), i) += -p.J * yy;
            }
            for (int k = 0; k < p.L; ++k) {
                const Eigen::Index t = flip(s, k);
                if (n + 1 < d) hamiltonian((n + 1) * ns + t, i) += gc * std::sqrt(double(n + 1));
                if (n > 0) hamiltonian((n - 1) * ns + t, i) += gc * std::sqrt(double(n));
            }
        }
    }

    Eigen::Index spin_states() const { return Eigen::Index(1) << params.L; }

    /// Reduced oscillator density matrix of a normalised state vector.
    MatrixXc oscillator_rho(const VectorXc& v) const {
        const Eigen::Index ns = spin_states(), d = params.n_max + 1;
        const Eigen::Map<const Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(v.data(), d, ns);
        MatrixXc rho = m * m.adjoint();
        return rho / rho.trace().real();
    }

    /// Reduced oscillator density matrix of a full density matrix.
    MatrixXc oscillator_rho(const MatrixXc& rho) const {
        const Eigen::Index ns = spin_states(), d = params.n_max + 1;
        MatrixXc r = MatrixXc::Zero(d, d);
        for (Eigen::Index n = 0; n < d; ++n)
            for (Eigen::Index m = 0; m < d; ++m) r(n, m) = rho.block(n * ns, m * ns, ns, ns).trace();
        return r;
    }

    double expect(const SparseR& op, const VectorXc& v) const { return (v.adjoint() * (op * v))(0, 0).real(); }
    double parity_of(const VectorXc& v) const { return (v.cwiseAbs2().array() * parity.array()).sum() / v.squaredNorm(); }
};

struct EdSpectrum {
    std::vector<double> energies;
    std::vector<VectorXc> states;
    std::vector<double> parities;
};

/// k lowest eigenpairs by dense diagonalisation, with parity labels.
/// Within near-degenerate pairs (1e-10 relative) the eigenvectors are
/// rotated into parity eigenstates.
inline EdSpectrum ed_spectrum(const DenseSystem& sys, int k) {
    if (k < 1 || k > sys.dim) throw std::invalid_argument("ed_spectrum: bad k");
    // diagonalise each parity block separately so eigenvectors carry sharp parity
    EdSpectrum out;
    struct Item {
        double e;
        VectorXc v;
        double p;
    };
    std::vector<Item> items;
    for (double s : {1.0, -1.0}) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < sys.dim; ++i)
            if (sys.parity(i) == s) idx.push_back(i);
        const auto m = static_cast<Eigen::Index>(idx.size());
        Eigen::MatrixXd hb(m, m);
        for (Eigen::Index a = 0; a < m; ++a)
            for (Eigen::Index b = 0; b < m; ++b) hb(a, b) = sys.hamiltonian(idx[a], idx[b]);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hb);
        for (Eigen::Index j = 0; j < std::min<Eigen::Index>(m, k); ++j) {
            VectorXc v = VectorXc::Zero(sys.dim);
            for (Eigen::Index a = 0; a < m; ++a) v(idx[a]) = es.eigenvectors()(a, j);
            items.push_back({es.eigenvalues()(j), v, s});
        }
    }
    std::stable_sort(items.begin(), items.end(), [](const Item& x, const Item& y) { return x.e < y.e; });
    for (int j = 0; j < k && j < static_cast<int>(items.size()); ++j) {
        out.energies.push_back(items[j].e);
        out.states.push_back(items[j].v);
        out.parities.push_back(items[j].p);
    }
    return out;
}

/// Full eigendecomposition, used for exact propagation.
struct EdEigensystem {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
};

inline EdEigensystem ed_eigensystem(const DenseSystem& sys) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sys.hamiltonian);
    return {es.eigenvalues(), es.eigenvectors()};
}

/// exp(-i H t) psi0 by spectral decomposition.
inline VectorXc ed_propagate(const EdEigensystem& es, const VectorXc& psi0, double t) {
    VectorXc c = es.vectors.transpose().cast<cplx>() * psi0;
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) *= std::exp(cplx(0.0, -es.values(i) * t));
    return es.vectors.cast<cplx>() * c;
}

inline VectorXc ed_propagate(const DenseSystem& sys, const VectorXc& psi0, double t) {
    return ed_propagate(ed_eigensystem(sys), psi0, t);
}

/// exp(-i H dt) as a dense matrix.
inline MatrixXc ed_step_unitary(const EdEigensystem& es, double dt) {
    VectorXc ph(es.values.size());
    for (Eigen::Index i = 0; i < ph.size(); ++i) ph(i) = std::exp(cplx(0.0, -es.values(i) * dt));
    const MatrixXc v = es.vectors.cast<cplx>();
    return v * ph.asDiagonal() * v.adjoint();
}

struct EdTrajectoryOptions {
    double kappa = 0.5;
    double dt = 0.01;
    double t_final = 1.0;
    std::uint64_t seed = 1;
    int observables_every = 5;
    bool keep_rho = false;
    /// Overrides the seed-driven stream when set.
    IncrementSource increments;
};

/// Dense split-step homodyne trajectory: per step psi <- exp(-i H dt) psi,
/// dy = sqrt(kappa) <a + a'> dt + dW, psi <- Omega(dy) psi / |.|.
inline TrajectoryRecord ed_trajectory(const DenseSystem& sys, const VectorXc& psi0, const EdTrajectoryOptions& o) {
    TrajectoryRecord rec;
    rec.seed = o.seed;
    rec.params = sys.params;
    rec.kappa = o.kappa;
    rec.dt = o.dt;
    IncrementSource dw = o.increments ? o.increments : stream_increments(o.seed);
    const MatrixXc U = ed_step_unitary(ed_eigensystem(sys), o.dt);
    const double sk = std::sqrt(o.kappa);
    VectorXc psi = psi0 / psi0.norm();
    auto record = [&](double t, double dy, double drift) {
        OscillatorState osc;
        osc.rho = sys.oscillator_rho(psi);
        osc.trace = osc.rho.trace().real();
        record_point(rec, t, dy, drift, osc, sys.parity_of(psi), o.keep_rho);
    };
    record(0.0, 0.0, 0.0);
    const auto steps = static_cast<std::size_t>(std::llround(o.t_final / o.dt));
    for (std::size_t k = 0; k < steps; ++k) {
        psi = U * psi;
        const double x = sys.expect(sys.field, psi) / psi.squaredNorm();
        const double dy = sk * x * o.dt + dw(k, o.dt);
        VectorXc next = psi - 0.5 * o.kappa * o.dt * (sys.number * psi) + sk * dy * (sys.a * psi);
        const double nrm = next.norm();
        if (!(nrm > 1e-300)) throw DegenerateUpdateError("ed_trajectory: measurement update annihilated the state");
        psi = next / nrm;
        rec.step_dy.push_back(dy);
        rec.step_norm_drift.push_back(nrm - 1.0);
        if ((k + 1) % static_cast<std::size_t>(o.observables_every) == 0) record((k + 1) * o.dt, dy, nrm - 1.0);
    }
    return rec;
}

struct LindbladSeries {
    std::vector<double> times;
    std::vector<MatrixXc> rho;
};

/// d rho/dt = -i[H, rho] + kappa (a rho a' - {a'a, rho}/2), fourth-order
/// Runge-Kutta with step dt; states stored every `every` steps.
inline LindbladSeries ed_lindblad(const DenseSystem& sys, const MatrixXc& rho0, double kappa, double dt, double t_final,
                                  int every = 1) {
    const MatrixXc H = sys.hamiltonian.cast<cplx>();
    const MatrixXc A = MatrixXc(sys.a.cast<cplx>());
    const MatrixXc Ad = A.adjoint();
    const MatrixXc N = Ad * A;
    const cplx mi(0.0, -1.0);
    auto rhs = [&](const MatrixXc& r) -> MatrixXc {
        MatrixXc out = mi * (H * r - r * H);
        if (kappa != 0.0) out += kappa * (A * r * Ad - 0.5 * (N * r + r * N));
        return out;
    };
    LindbladSeries s;
    MatrixXc rho = rho0;
    s.times.push_back(0.0);
    s.rho.push_back(rho);
    const auto steps = static_cast<std::size_t>(std::llround(t_final / dt));
    for (std::size_t k = 0; k < steps; ++k) {
        const MatrixXc k1 = rhs(rho);
        const MatrixXc k2 = rhs(rho + 0.5 * dt * k1);
        const MatrixXc k3 = rhs(rho + 0.5 * dt * k2);
        const MatrixXc k4 = rhs(rho + dt * k3);
        rho += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if ((k + 1) % static_cast<std::size_t>(every) == 0) {
            s.times.push_back((k + 1) * dt);
            s.rho.push_back(rho);
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Free fermions for g = 0.

/// Pfaffian of a real antisymmetric matrix by skew Gaussian elimination
/// with partial pivoting.
inline double pfaffian(Eigen::MatrixXd a) {
    const Eigen::Index n = a.rows();
    if (n % 2) return 0.0;
    double pf = 1.0;
    for (Eigen::Index k = 0; k + 1 < n; k += 2) {
        Eigen::Index piv = k + 1;
        for (Eigen::Index j = k + 2; j < n; ++j)
            if (std::abs(a(k, j)) > std::abs(a(k, piv))) piv = j;
        if (piv != k + 1) {
            a.row(k + 1).swap(a.row(piv));
            a.col(k + 1).swap(a.col(piv));
            pf = -pf;
        }
        const double p = a(k, k + 1);
        if (p == 0.0) return 0.0;
        pf *= p;
        for (Eigen::Index i = k + 2; i < n; ++i) {
            const double tau = a(k, i) / p;
            a.row(i) -= tau * a.row(k + 1);
            a.col(i) -= tau * a.col(k + 1);
        }
    }
    return pf;
}

struct FreeFermionResult {
    double energy = 0.0;
    Eigen::MatrixXd sy_sy;  ///< <sy_i sy_j>, unit diagonal
    Eigen::VectorXd sz;     ///< <sz_i>
};

/// Open transverse-field chain -h sum sz - J sum sy sy. A rotation about z
/// maps sy sy to sx sx; Jordan-Wigner then gives Majorana hopping
/// H = (i/4) g' A g with A(2i, 2i+1) = 2h, A(2i+1, 2i+2) = 2J.
/// Requires h > 0 so that the ground state is unique.
inline FreeFermionResult free_fermion_ising(double h, double J, int L) {
    if (L < 1) throw std::invalid_argument("free_fermion_ising: L >= 1 required");
    const Eigen::Index m = 2 * L;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < L; ++i) {
        A(2 * i, 2 * i + 1) = 2.0 * h;
        A(2 * i + 1, 2 * i) = -2.0 * h;
        if (i + 1 < L) {
            A(2 * i + 1, 2 * i + 2) = 2.0 * J;
            A(2 * i + 2, 2 * i + 1) = -2.0 * J;
        }
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    FreeFermionResult r;
    r.energy = -0.25 * svd.singularValues().sum();
    // <g_a g_b> = delta_ab + i G_ab with G the orthogonal polar factor of A
    const Eigen::MatrixXd G = svd.matrixU() * svd.matrixV().transpose();
    r.sz.resize(L);
    for (int i = 0; i < L; ++i) r.sz(i) = G(2 * i, 2 * i + 1);
    r.sy_sy = Eigen::MatrixXd::Identity(L, L);
    for (int i = 0; i < L; ++i)
        for (int j = i + 1; j < L; ++j) {
            const Eigen::Index lo = 2 * i + 1, len = 2 * (j - i);
            r.sy_sy(i, j) = r.sy_sy(j, i) = pfaffian(G.block(lo, lo, len, len));
        }
    return r;
}

}  // namespace dmps
