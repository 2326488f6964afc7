#include <gtest/gtest.h>

#include <random>

#include "dicke_mps/eigensolver.hpp"
#include "dicke_mps/tensor.hpp"
#include "oracles.hpp"

using namespace dmps;

namespace {

DenseTensor rnd(std::vector<std::size_t> shape, std::vector<std::string> labels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return DenseTensor::random(std::move(shape), std::move(labels), rng);
}

double rel_diff(const DenseTensor& a, const DenseTensor& b) {
    DenseTensor d = a;
    d -= b;
    return d.norm() / std::max(a.norm(), 1e-300);
}

}  // namespace

TEST(Contract, IdentityTimesVector) {
    DenseTensor id({3, 3}, {"i", "j"});
    for (std::size_t k = 0; k < 3; ++k) id({k, k}) = 1.0;
    DenseTensor v({3}, {"j"}, {1.0, 2.0, 3.0});
    DenseTensor r = contract(id, v, {{"j", "j"}});
    ASSERT_EQ(r.labels(), std::vector<std::string>{"i"});
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(r({k}), cplx(k + 1.0, 0.0));
}

TEST(Contract, OrthogonalVectors) {
    DenseTensor a({2}, {"x"}, {1.0, 0.0});
    DenseTensor b({2}, {"y"}, {0.0, 1.0});
    DenseTensor r = contract(a, b, {{"x", "y"}});
    EXPECT_EQ(r.rank(), 0u);
    EXPECT_EQ(r.data()[0], cplx(0.0, 0.0));
}

TEST(Contract, MatchesTripleLoop) {
    DenseTensor a = rnd({2, 3, 4}, {"i", "j", "k"}, 1);
    DenseTensor b = rnd({4, 5}, {"k", "m"}, 2);
    DenseTensor r = contract(a, b, {{"k", "k"}});
    ASSERT_EQ(r.shape(), (std::vector<std::size_t>{2, 3, 5}));
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t m = 0; m < 5; ++m) {
                cplx s = 0.0;
                for (std::size_t k = 0; k < 4; ++k) s += a({i, j, k}) * b({k, m});
                EXPECT_NEAR(std::abs(r({i, j, m}) - s), 0.0, 1e-13);
            }
}

TEST(Contract, ExtentMismatchThrows) {
    DenseTensor a({2, 3}, {"i", "j"});
    DenseTensor b({4}, {"j"});
    EXPECT_THROW(contract(a, b, {{"j", "j"}}), DimensionError);
}

TEST(Contract, DataSizeMustMatchShape) {
    EXPECT_THROW(DenseTensor({2, 2}, {"a", "b"}, std::vector<cplx>(3)), DimensionError);
    EXPECT_THROW(DenseTensor({2, 2}, {"a", "a"}), DimensionError);
}

TEST(ContractProperty, BilinearOnRandomTensors) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        DenseTensor a = rnd({3, 4, 2}, {"i", "j", "k"}, 10 + seed);
        DenseTensor a2 = rnd({3, 4, 2}, {"i", "j", "k"}, 100 + seed);
        DenseTensor b = rnd({2, 4, 5}, {"k", "j", "m"}, 1000 + seed);
        const cplx al(0.3, -1.2), be(-0.7, 0.4);
        DenseTensor lhs = contract(al * a + be * a2, b, {{"j", "j"}, {"k", "k"}});
        DenseTensor rhs = al * contract(a, b, {{"j", "j"}, {"k", "k"}}) + be * contract(a2, b, {{"j", "j"}, {"k", "k"}});
        EXPECT_LT(rel_diff(lhs, rhs), 1e-12);
    }
}

TEST(ContractProperty, FlattenThenContractEqualsContractThenFlatten) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        DenseTensor a = rnd({3, 2, 4}, {"i", "j", "k"}, 7 + seed);
        DenseTensor b = rnd({2, 4, 5}, {"j", "k", "m"}, 70 + seed);
        DenseTensor direct = contract(a, b, {{"j", "j"}, {"k", "k"}});
        DenseTensor af = a.reshaped({3, 8}, {"i", "jk"});
        DenseTensor bf = b.reshaped({8, 5}, {"jk", "m"});
        DenseTensor flat = contract(af, bf, {{"jk", "jk"}});
        EXPECT_LT(rel_diff(direct, flat), 1e-13);
    }
}

TEST(Permute, RoundTrip) {
    DenseTensor a = rnd({2, 3, 4}, {"a", "b", "c"}, 5);
    DenseTensor p = a.permuted({"c", "a", "b"});
    EXPECT_EQ(p({3, 1, 2}), a({1, 2, 3}));
    EXPECT_LT(rel_diff(p.permuted({"a", "b", "c"}), a), 1e-15);
}

TEST(Svd, RankOneProduct) {
    DenseTensor t({2, 3}, {"a", "b"});
    t({0, 1}) = 1.0;
    SvdResult f = svd_truncate(t, {"a"}, TruncationSpec{});
    ASSERT_EQ(f.s.size(), 1u);
    EXPECT_NEAR(f.s[0], 1.0, 1e-14);
    EXPECT_NEAR(f.discarded_weight, 0.0, 1e-28);
}

TEST(Svd, IdentityAtRankOne) {
    DenseTensor t({2, 2}, {"a", "b"}, {1.0, 0.0, 0.0, 1.0});
    SvdResult f = svd_truncate(t, {"a"}, TruncationSpec{1, 0.0, 0.0});
    ASSERT_EQ(f.s.size(), 1u);
    EXPECT_NEAR(f.s[0], 1.0, 1e-14);
    EXPECT_NEAR(f.discarded_weight, 1.0, 1e-14);
}

TEST(Svd, SquaredSpectrumIsFrobeniusNorm) {
    std::mt19937_64 rng(3);
    const oracle::Mat h = oracle::random_hermitian(4, rng);
    const oracle::Mat m = h * h;
    DenseTensor t = from_matrix(m, {4}, {"a"}, {4}, {"b"});
    SvdResult f = svd_truncate(t, {"a"}, TruncationSpec{4, 0.0, 0.0});
    double s2 = 0.0;
    for (double s : f.s) s2 += s * s;
    EXPECT_NEAR(s2, m.squaredNorm(), 1e-12 * m.squaredNorm());
}

TEST(Svd, NonincreasingAndIsometric) {
    DenseTensor t = rnd({3, 4, 5}, {"a", "b", "c"}, 9);
    SvdResult f = svd_truncate(t, {"a", "c"}, TruncationSpec{64, 0.0, 0.0}, "x");
    for (std::size_t i = 1; i < f.s.size(); ++i) EXPECT_GE(f.s[i - 1], f.s[i]);
    const MatrixForm u = to_matrix(f.U, {"a", "c"});
    const MatrixForm v = to_matrix(f.V, {"x"});
    const auto k = static_cast<Eigen::Index>(f.s.size());
    EXPECT_LT((MatrixXc(u.matrix.adjoint() * u.matrix) - MatrixXc::Identity(k, k)).norm(), 1e-12);
    EXPECT_LT((MatrixXc(v.matrix * v.matrix.adjoint()) - MatrixXc::Identity(k, k)).norm(), 1e-12);
}

TEST(SvdProperty, FullRankReconstructs) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        DenseTensor t = rnd({2, 3, 4, 2}, {"a", "b", "c", "d"}, 200 + seed);
        SvdResult f = svd_truncate(t, {"b", "d"}, TruncationSpec{1000, 0.0, 0.0}, "x");
        DenseTensor r = contract(scale_axis(f.U, "x", f.s), f.V, {{"x", "x"}});
        EXPECT_LT(rel_diff(t, r.permuted(t.labels())), 1e-12);
    }
}

TEST(SvdProperty, DiscardedWeightEqualsReconstructionError) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        DenseTensor t = rnd({4, 3, 5}, {"a", "b", "c"}, 300 + seed);
        const std::size_t rank = 1 + seed % 6;
        SvdResult f = svd_truncate(t, {"a", "b"}, TruncationSpec{rank, 0.0, 0.0}, "x");
        DenseTensor r = contract(scale_axis(f.U, "x", f.s), f.V, {{"x", "x"}});
        DenseTensor d = t;
        d -= r;
        EXPECT_LE(f.s.size(), rank);
        EXPECT_NEAR(d.norm2(), f.discarded_weight, 1e-10 * std::max(f.discarded_weight, 1e-12) + 1e-24);
    }
}

TEST(Truncation, StrictestCriterionWins) {
    const std::vector<double> s{1.0, 0.5, 0.1, 1e-3, 1e-14};
    EXPECT_EQ(truncation_rank(s, {10, 0.0, 0.0}), 5u);
    EXPECT_EQ(truncation_rank(s, {10, 1e-12, 0.0}), 4u);
    EXPECT_EQ(truncation_rank(s, {2, 1e-12, 0.0}), 2u);
    // 0.1^2 / 1.26 ~ 8e-3 of the mass sits in the third value
    EXPECT_EQ(truncation_rank(s, {10, 0.0, 1e-2}), 2u);
    EXPECT_THROW((TruncationSpec{0, 0.0, 0.0}.validate()), std::invalid_argument);
    EXPECT_THROW((TruncationSpec{4, 1.0, 0.0}.validate()), std::invalid_argument);
}

TEST(Qr, PositiveDiagonal) {
    std::mt19937_64 rng(4);
    MatrixXc m = oracle::random_hermitian(6, rng).leftCols(3);
    auto [q, r] = thin_qr_positive(m);
    EXPECT_LT((q * r - m).norm(), 1e-12);
    for (Eigen::Index i = 0; i < 3; ++i) {
        EXPECT_GE(r(i, i).real(), 0.0);
        EXPECT_NEAR(r(i, i).imag(), 0.0, 1e-14);
    }
}

TEST(Eigensolver, Diagonal) {
    MatrixXc h = MatrixXc::Zero(3, 3);
    h(0, 0) = 3;
    h(1, 1) = 1;
    h(2, 2) = 2;
    auto r = lowest_eigenpairs(h, 1, 1e-12);
    EXPECT_NEAR(r.values[0], 1.0, 1e-14);
    EXPECT_NEAR(std::abs(r.vectors[0](1)), 1.0, 1e-14);
}

TEST(Eigensolver, PauliSpectrum) {
    MatrixXc z = oracle::pauli('z');
    auto r = lowest_eigenpairs(z, 2, 1e-12);
    EXPECT_NEAR(r.values[0], -1.0, 1e-14);
    EXPECT_NEAR(r.values[1], 1.0, 1e-14);
}

TEST(Eigensolver, Random50AgainstDense) {
    std::mt19937_64 rng(50);
    const MatrixXc h = oracle::random_hermitian(50, rng);
    Eigen::SelfAdjointEigenSolver<MatrixXc> es(h);
    EigensolverOptions opt;
    opt.dense_cutoff = 0;  // force the iterative path
    auto r = lowest_eigenpairs(h, 3, 1e-10, opt);
    const double scale = std::max(1.0, h.norm());
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(r.values[i], es.eigenvalues()(i), 1e-9 * scale);
        EXPECT_LT((h * r.vectors[i] - r.values[i] * r.vectors[i]).norm(), 1e-8 * scale);
    }
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            EXPECT_NEAR(std::abs(r.vectors[i].dot(r.vectors[j])), i == j ? 1.0 : 0.0, 1e-10);
}

TEST(EigensolverProperty, MatchesDenseUpTo64) {
    std::mt19937_64 rng(77);
    EigensolverOptions opt;
    opt.dense_cutoff = 0;
    for (Eigen::Index n : {2, 5, 9, 17, 33, 64}) {
        const MatrixXc h = oracle::random_hermitian(n, rng);
        Eigen::SelfAdjointEigenSolver<MatrixXc> es(h);
        const int k = static_cast<int>(std::min<Eigen::Index>(n, 3));
        auto r = lowest_eigenpairs(h, k, 1e-10, opt);
        const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
        for (int i = 0; i < k; ++i) EXPECT_NEAR(r.values[i], es.eigenvalues()(i), 1e-9 * scale) << "n=" << n;
    }
}

TEST(Eigensolver, IterationCapCarriesResidual) {
    std::mt19937_64 rng(8);
    const MatrixXc h = oracle::random_hermitian(300, rng);
    EigensolverOptions opt;
    opt.max_iterations = 3;
    try {
        lowest_eigenpairs(h, 2, 1e-14, opt);
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_GT(e.best_residual(), 0.0);
    }
    opt.throw_on_failure = false;
    auto r = lowest_eigenpairs(h, 2, 1e-14, opt);
    EXPECT_FALSE(r.converged);
}
