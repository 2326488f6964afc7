#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <vector>

#include "dicke_mps/model.hpp"
#include "dicke_mps/tensor.hpp"

namespace dmps {

/// Open-boundary matrix product state. Site tensors carry axes
/// ("l", "p", "r"); the outer bonds have extent 1.
///
/// `center` records the orthogonality centre when known: every tensor to its
/// left is a left isometry and every tensor to its right a right isometry.
struct MPSState {
    std::vector<DenseTensor> sites;
    std::vector<SiteSpec> specs;
    std::optional<std::size_t> center;

    std::size_t length() const noexcept { return sites.size(); }

    /// Bond extents between neighbouring sites (length - 1 entries).
    std::vector<std::size_t> bond_dims() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i + 1 < sites.size(); ++i) out.push_back(sites[i].extent("r"));
        return out;
    }

    std::size_t max_bond() const {
        std::size_t m = 1;
        for (auto b : bond_dims()) m = std::max(m, b);
        return m;
    }

    void validate() const {
        if (sites.size() != specs.size() || sites.empty()) throw DimensionError("MPSState: site/spec count mismatch");
        for (std::size_t i = 0; i < sites.size(); ++i) {
            const auto& t = sites[i];
            if (t.rank() != 3 || t.labels() != std::vector<std::string>{"l", "p", "r"}) {
                throw DimensionError("MPSState: site tensors must have axes (l, p, r)");
            }
            if (t.extent("p") != specs[i].phys_dim) throw DimensionError("MPSState: physical extent mismatch");
            if (i + 1 < sites.size() && t.extent("r") != sites[i + 1].extent("l")) {
                throw DimensionError("MPSState: bond mismatch");
            }
        }
        if (sites.front().extent("l") != 1 || sites.back().extent("r") != 1) {
            throw DimensionError("MPSState: open boundary bonds must have extent 1");
        }
    }
};

inline DenseTensor site_tensor(std::size_t dl, std::size_t d, std::size_t dr) {
    return DenseTensor({dl, d, dr}, {"l", "p", "r"});
}

inline void require_same_lattice(const std::vector<SiteSpec>& a, const std::vector<SiteSpec>& b) {
    if (a != b) throw DimensionError("site specs do not match");
}

/// Product state from one local amplitude vector per site.
inline MPSState product_state(const std::vector<SiteSpec>& specs, const std::vector<VectorXc>& local) {
    if (local.size() != specs.size()) throw DimensionError("product_state: one vector per site required");
    MPSState psi;
    psi.specs = specs;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (static_cast<std::size_t>(local[i].size()) != specs[i].phys_dim) {
            throw DimensionError("product_state: local dimension mismatch");
        }
        DenseTensor t = site_tensor(1, specs[i].phys_dim, 1);
        for (std::size_t p = 0; p < specs[i].phys_dim; ++p) t({0, p, 0}) = local[i](static_cast<Eigen::Index>(p));
        psi.sites.push_back(std::move(t));
    }
    return psi;
}

/// Computational basis state |i_0, i_1, ...>.
inline MPSState basis_state(const std::vector<SiteSpec>& specs, const std::vector<std::size_t>& index) {
    std::vector<VectorXc> local;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        VectorXc v = VectorXc::Zero(static_cast<Eigen::Index>(specs[i].phys_dim));
        v(static_cast<Eigen::Index>(index.at(i))) = 1.0;
        local.push_back(v);
    }
    MPSState psi = product_state(specs, local);
    psi.center = 0;
    return psi;
}

/// Normalised coherent-state amplitudes on Fock states 0..n_max.
inline VectorXc coherent_amplitudes(cplx alpha, int n_max) {
    VectorXc v(n_max + 1);
    cplx term = 1.0;
    for (int n = 0; n <= n_max; ++n) {
        if (n > 0) term *= alpha / std::sqrt(static_cast<double>(n));
        v(n) = term;
    }
    return v / v.norm();
}

/// Contracts the full amplitude vector; site 0 is the most significant index.
inline VectorXc to_vector(const MPSState& psi) {
    DenseTensor acc = psi.sites[0];  // (l, p, r) with l = 1
    acc = acc.reshaped({acc.extent("p"), acc.extent("r")}, {"P", "r"});
    for (std::size_t i = 1; i < psi.length(); ++i) {
        DenseTensor next = contract(acc, psi.sites[i], {{"r", "l"}});  // (P, p, r)
        next = next.reshaped({next.extent("P") * next.extent("p"), next.extent("r")}, {"P", "r"});
        acc = std::move(next);
    }
    return Eigen::Map<const VectorXc>(acc.data().data(), static_cast<Eigen::Index>(acc.size()));
}

/// Exact MPS decomposition of a dense vector by successive SVDs, with
/// optional truncation. Centre at the last site.
inline MPSState from_vector(const std::vector<SiteSpec>& specs, const VectorXc& v,
                            const TruncationSpec& spec = {std::size_t(1) << 20, 0.0, 0.0}) {
    std::size_t total = 1;
    for (const auto& s : specs) total *= s.phys_dim;
    if (static_cast<std::size_t>(v.size()) != total) throw DimensionError("from_vector: length mismatch");
    MPSState psi;
    psi.specs = specs;
    DenseTensor rest({1, total}, {"l", "R"}, std::vector<cplx>(v.data(), v.data() + v.size()));
    for (std::size_t i = 0; i + 1 < specs.size(); ++i) {
        const std::size_t d = specs[i].phys_dim;
        const std::size_t remaining = rest.extent("R") / d;
        DenseTensor t = rest.reshaped({rest.extent("l"), d, remaining}, {"l", "p", "R"});
        SvdResult f = svd_truncate(t, {"l", "p"}, spec, "r");
        psi.sites.push_back(f.U);
        rest = scale_axis(f.V, "r", f.s).relabeled("r", "l");
    }
    psi.sites.push_back(rest.reshaped({rest.extent("l"), specs.back().phys_dim, 1}, {"l", "p", "r"}));
    psi.center = specs.size() - 1;
    return psi;
}

namespace detail {

/// Moves the centre one site to the right (QR) starting from site i.
inline void shift_right(MPSState& psi, std::size_t i) {
    const MatrixForm f = to_matrix(psi.sites[i], {"l", "p"});
    auto [q, r] = thin_qr_positive(f.matrix);
    const std::size_t k = static_cast<std::size_t>(q.cols());
    psi.sites[i] = from_matrix(q, f.row_shape, f.row_labels, {k}, {"r"});
    DenseTensor rt = from_matrix(r, {k}, {"k"}, f.col_shape, {"x"});
    psi.sites[i + 1] = contract(rt, psi.sites[i + 1], {{"x", "l"}}).with_labels({"l", "p", "r"});
}

/// Moves the centre one site to the left (LQ) starting from site i.
inline void shift_left(MPSState& psi, std::size_t i) {
    const MatrixForm f = to_matrix(psi.sites[i], {"l"});
    // M = L Q  <=>  M' = Q' L'
    auto [q, r] = thin_qr_positive(MatrixXc(f.matrix.adjoint()));
    const std::size_t k = static_cast<std::size_t>(q.cols());
    psi.sites[i] = from_matrix(MatrixXc(q.adjoint()), {k}, {"l"}, f.col_shape, f.col_labels);
    DenseTensor lt = from_matrix(MatrixXc(r.adjoint()), f.row_shape, {"x"}, {k}, {"nr"});
    psi.sites[i - 1] = contract(psi.sites[i - 1], lt, {{"r", "x"}}).relabeled("nr", "r");
}

}  // namespace detail

/// Gauge transformation to mixed canonical form about `center`. The state
/// vector is unchanged. A state already canonical elsewhere is only shifted.
inline MPSState canonicalize(const MPSState& psi, std::size_t center) {
    if (center >= psi.length()) throw DimensionError("canonicalize: center out of range");
    MPSState out = psi;
    if (out.center) {
        for (std::size_t i = *out.center; i < center; ++i) detail::shift_right(out, i);
        for (std::size_t i = *out.center; i > center; --i) detail::shift_left(out, i);
    } else {
        for (std::size_t i = 0; i < center; ++i) detail::shift_right(out, i);
        for (std::size_t i = out.length() - 1; i > center; --i) detail::shift_left(out, i);
    }
    out.center = center;
    return out;
}

/// <psi|phi> by left-to-right transfer contraction.
inline cplx overlap(const MPSState& psi, const MPSState& phi) {
    require_same_lattice(psi.specs, phi.specs);
    DenseTensor env({1, 1}, {"b", "k"}, {cplx(1.0, 0.0)});
    for (std::size_t i = 0; i < psi.length(); ++i) {
        DenseTensor t = contract(env, phi.sites[i], {{"k", "l"}}).relabeled("r", "k");  // (b, p, k)
        env = contract(psi.sites[i].conj(), t, {{"l", "b"}, {"p", "p"}});               // (r, k)
        env.relabel("r", "b");
    }
    return env.data()[0];
}

inline double norm(const MPSState& psi) {
    if (psi.center) return psi.sites[*psi.center].norm();
    return std::sqrt(std::max(0.0, overlap(psi, psi).real()));
}

inline MPSState scaled(MPSState psi, cplx s) {
    const std::size_t at = psi.center.value_or(0);
    psi.sites[at] *= s;
    return psi;
}

inline MPSState normalized(const MPSState& psi) {
    const double n = norm(psi);
    if (!(n > 0.0)) throw std::domain_error("normalized: zero-norm state");
    return scaled(psi, cplx(1.0 / n, 0.0));
}

/// Random MPS with bond dimension capped at max_bond and by the Hilbert
/// space dimensions on either side. Normalised, centre at site 0.
inline MPSState random_mps(const std::vector<SiteSpec>& specs, std::size_t max_bond, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = specs.size();
    std::vector<std::size_t> bonds(n + 1, 1);
    for (std::size_t b = 1; b < n; ++b) {
        double left = 1.0, right = 1.0;
        for (std::size_t i = 0; i < b; ++i) left *= static_cast<double>(specs[i].phys_dim);
        for (std::size_t i = b; i < n; ++i) right *= static_cast<double>(specs[i].phys_dim);
        bonds[b] = static_cast<std::size_t>(std::min({static_cast<double>(max_bond), left, right}));
    }
    MPSState psi;
    psi.specs = specs;
    for (std::size_t i = 0; i < n; ++i) {
        psi.sites.push_back(DenseTensor::random({bonds[i], specs[i].phys_dim, bonds[i + 1]}, {"l", "p", "r"}, rng));
    }
    psi = canonicalize(psi, 0);
    psi.sites[0] *= cplx(1.0 / norm(psi), 0.0);
    return psi;
}

/// Applies a single-site operator. Only the addressed tensor changes; the
/// canonical centre survives only if it sits on that site.
inline MPSState apply_local(const MPSState& psi, std::size_t site, const MatrixXc& op) {
    if (site >= psi.length()) throw DimensionError("apply_local: site out of range");
    const auto d = psi.specs[site].phys_dim;
    if (static_cast<std::size_t>(op.rows()) != d || static_cast<std::size_t>(op.cols()) != d) {
        throw DimensionError("apply_local: operator dimension does not match site");
    }
    MPSState out = psi;
    DenseTensor o = from_matrix(op, {d}, {"po"}, {d}, {"pi"});
    DenseTensor t = contract(o, psi.sites[site], {{"pi", "p"}});  // (po, l, r)
    out.sites[site] = t.permuted({"l", "po", "r"}).with_labels({"l", "p", "r"});
    if (out.center && *out.center != site) out.center.reset();
    return out;
}

struct CompressResult {
    MPSState state;
    /// Sum of discarded squared singular values relative to the input norm^2.
    double discarded_weight = 0.0;
};

/// SVD sweep right-to-left after left-canonicalisation. The result is not
/// renormalised and has its centre at site 0.
inline CompressResult compress(const MPSState& psi, const TruncationSpec& spec) {
    CompressResult res;
    MPSState s = canonicalize(psi, psi.length() - 1);
    const double n2 = s.sites.back().norm2();
    double discarded = 0.0;
    for (std::size_t i = s.length() - 1; i > 0; --i) {
        SvdResult f = svd_truncate(s.sites[i], {"l"}, spec, "x");
        discarded += f.discarded_weight;
        s.sites[i] = f.V.relabeled("x", "l");
        DenseTensor us = scale_axis(f.U, "x", f.s);  // (l_old, x)
        s.sites[i - 1] = contract(s.sites[i - 1], us, {{"r", "l"}}).relabeled("x", "r");
    }
    s.center = 0;
    res.state = std::move(s);
    res.discarded_weight = n2 > 0.0 ? discarded / n2 : 0.0;
    return res;
}

}  // namespace dmps
