#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "dicke_mps/errors.hpp"
#include "dicke_mps/tensor.hpp"

namespace dmps {

using LinearMap = std::function<void(const VectorXc& in, VectorXc& out)>;

struct EigenpairResult {
    std::vector<double> values;
    std::vector<VectorXc> vectors;
    std::vector<double> residuals;
    int iterations = 0;
    bool converged = true;
};

struct EigensolverOptions {
    /// Problems up to this size are solved by dense diagonalisation.
    Eigen::Index dense_cutoff = 128;
    int max_iterations = 2000;
    /// Largest subspace kept before a thick restart.
    Eigen::Index max_subspace = 48;
    unsigned seed = 12345;
    /// When false, hitting the iteration cap returns the best pairs found
    /// with converged == false instead of throwing.
    bool throw_on_failure = true;
};

namespace detail {

inline EigenpairResult dense_lowest(const LinearMap& apply, Eigen::Index n, int k) {
    MatrixXc h(n, n);
    VectorXc e = VectorXc::Zero(n), col(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        e.setZero();
        e(j) = 1.0;
        apply(e, col);
        h.col(j) = col;
    }
    const MatrixXc hs = 0.5 * (h + h.adjoint());
    Eigen::SelfAdjointEigenSolver<MatrixXc> es(hs);
    EigenpairResult r;
    for (int i = 0; i < k; ++i) {
        r.values.push_back(es.eigenvalues()(i));
        r.vectors.emplace_back(es.eigenvectors().col(i));
        r.residuals.push_back((h * r.vectors.back() - r.values.back() * r.vectors.back()).norm());
    }
    return r;
}

/// Orthogonalises v against the first m columns of basis (two passes).
inline double orthogonalize(const MatrixXc& basis, Eigen::Index m, VectorXc& v) {
    for (int pass = 0; pass < 2; ++pass) {
        if (m > 0) {
            const VectorXc c = basis.leftCols(m).adjoint() * v;
            v.noalias() -= basis.leftCols(m) * c;
        }
    }
    return v.norm();
}

}  // namespace detail

/// k lowest eigenpairs of a Hermitian map of dimension n.
///
/// Restarted Lanczos with full reorthogonalisation: the basis is a Krylov
/// space grown by residuals of the lowest unconverged Ritz vector, and on
/// overflow it is compressed to the current Ritz vectors (thick restart).
/// Converged when every requested residual is below tol times the largest
/// Ritz value magnitude (floored at 1).
inline EigenpairResult lowest_eigenpairs(const LinearMap& apply, Eigen::Index n, int k, double tol,
                                         const VectorXc* guess = nullptr, const EigensolverOptions& opt = {}) {
    if (k < 1 || k > n) throw std::invalid_argument("lowest_eigenpairs: need 1 <= k <= n");
    if (n <= opt.dense_cutoff) return detail::dense_lowest(apply, n, k);

    const Eigen::Index mmax = std::min<Eigen::Index>(n, std::max<Eigen::Index>(opt.max_subspace, 3 * k + 8));
    MatrixXc V(n, mmax), W(n, mmax);
    MatrixXc T = MatrixXc::Zero(mmax, mmax);
    Eigen::Index m = 0;

    std::mt19937 rng(opt.seed);
    std::normal_distribution<double> nd;
    auto random_vector = [&] {
        VectorXc v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = cplx(nd(rng), nd(rng));
        return v;
    };

    VectorXc next = (guess && guess->size() == n && guess->norm() > 0.0) ? *guess : random_vector();
    VectorXc w(n);
    EigenpairResult best;
    double best_res = std::numeric_limits<double>::infinity();

    for (int it = 0; it < opt.max_iterations; ++it) {
        double nrm = detail::orthogonalize(V, m, next);
        if (nrm < 1e-12) {
            next = random_vector();
            nrm = detail::orthogonalize(V, m, next);
        }
        V.col(m) = next / nrm;
        apply(V.col(m), w);
        W.col(m) = w;
        const VectorXc proj = V.leftCols(m + 1).adjoint() * w;
        T.block(0, m, m + 1, 1) = proj;
        T.block(m, 0, 1, m + 1) = proj.adjoint();
        T(m, m) = proj(m).real();
        ++m;
        if (m < k) continue;

        Eigen::SelfAdjointEigenSolver<MatrixXc> es(T.topLeftCorner(m, m));
        const auto& theta = es.eigenvalues();
        const MatrixXc& Y = es.eigenvectors();
        const double scale = std::max(1.0, theta.cwiseAbs().maxCoeff());

        EigenpairResult cur;
        cur.iterations = it + 1;
        int first_unconverged = -1;
        VectorXc first_residual;
        double worst = 0.0;
        for (int i = 0; i < k; ++i) {
            VectorXc x = V.leftCols(m) * Y.col(i);
            VectorXc r = W.leftCols(m) * Y.col(i) - theta(i) * x;
            const double rn = r.norm();
            worst = std::max(worst, rn / scale);
            cur.values.push_back(theta(i));
            cur.vectors.push_back(std::move(x));
            cur.residuals.push_back(rn);
            if (rn > tol * scale && first_unconverged < 0) {
                first_unconverged = i;
                first_residual = std::move(r);
            }
        }
        if (worst < best_res) {
            best_res = worst;
            best = cur;
        }
        if (first_unconverged < 0) return cur;
        if (m == n) return cur;  // full space: Ritz pairs are exact

        if (m == mmax) {
            const Eigen::Index keep = std::min<Eigen::Index>(m - 1, std::max<Eigen::Index>(2 * k, k + 4));
            const MatrixXc Yk = Y.leftCols(keep);
            MatrixXc Vn = V.leftCols(m) * Yk;
            MatrixXc Wn = W.leftCols(m) * Yk;
            V.leftCols(keep) = Vn;
            W.leftCols(keep) = Wn;
            T.setZero();
            for (Eigen::Index i = 0; i < keep; ++i) T(i, i) = theta(i);
            m = keep;
        }
        next = std::move(first_residual);
    }
    if (!opt.throw_on_failure) {
        best.converged = false;
        return best;
    }
    throw ConvergenceError("lowest_eigenpairs: iteration cap reached", best_res);
}

/// Same as above for an explicit dense Hermitian matrix.
inline EigenpairResult lowest_eigenpairs(const MatrixXc& h, int k, double tol, const EigensolverOptions& opt = {}) {
    return lowest_eigenpairs([&](const VectorXc& in, VectorXc& out) { out.noalias() = h * in; }, h.rows(), k, tol,
                             nullptr, opt);
}

}  // namespace dmps
