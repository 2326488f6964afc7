#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dicke_mps/model.hpp"
#include "dicke_mps/mps.hpp"
#include "dicke_mps/tensor.hpp"

namespace dmps {

/// Matrix product operator with site tensors ("l", "po", "pi", "r").
struct MPOperator {
    std::vector<DenseTensor> sites;
    std::vector<SiteSpec> specs;

    std::size_t length() const noexcept { return sites.size(); }

    std::vector<std::size_t> bond_dims() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i + 1 < sites.size(); ++i) out.push_back(sites[i].extent("r"));
        return out;
    }

    void validate() const {
        if (sites.size() != specs.size() || sites.empty()) throw DimensionError("MPOperator: site/spec count mismatch");
        for (std::size_t i = 0; i < sites.size(); ++i) {
            const auto& w = sites[i];
            if (w.labels() != std::vector<std::string>{"l", "po", "pi", "r"}) {
                throw DimensionError("MPOperator: site tensors must have axes (l, po, pi, r)");
            }
            if (w.extent("po") != specs[i].phys_dim || w.extent("pi") != specs[i].phys_dim) {
                throw DimensionError("MPOperator: physical extent mismatch");
            }
            if (i + 1 < sites.size() && w.extent("r") != sites[i + 1].extent("l")) {
                throw DimensionError("MPOperator: bond mismatch");
            }
        }
        if (sites.front().extent("l") != 1 || sites.back().extent("r") != 1) {
            throw DimensionError("MPOperator: open boundary bonds must have extent 1");
        }
    }
};

// ---------------------------------------------------------------------------
// Finite-state-machine construction.
//
// Each bond carries a set of named channels. A transition (from, to, op) on a
// site adds `op` to W(from, :, :, to). The left boundary holds only "start",
// the right boundary only "done".

struct FsmTransition {
    std::string from, to;
    MatrixXc op;
};

class FsmMpoBuilder {
public:
    explicit FsmMpoBuilder(std::vector<SiteSpec> specs) : specs_(std::move(specs)), channels_(specs_.size() + 1) {
        channels_.front() = {{"start", 0}};
        channels_.back() = {{"done", 0}};
        transitions_.resize(specs_.size());
    }

    /// Declares a channel on an interior bond (1 <= bond < length).
    void add_channel(std::size_t bond, const std::string& name) {
        if (bond == 0 || bond >= specs_.size()) return;
        auto& ch = channels_[bond];
        if (!ch.count(name)) ch.emplace(name, ch.size());
    }

    bool has_channel(std::size_t bond, const std::string& name) const { return channels_.at(bond).count(name) > 0; }

    /// Adds the transition if both endpoint channels exist; returns whether it did.
    bool add(std::size_t site, const std::string& from, const std::string& to, const MatrixXc& op) {
        if (!has_channel(site, from) || !has_channel(site + 1, to)) return false;
        transitions_.at(site).push_back({from, to, op});
        return true;
    }

    MPOperator build() const {
        MPOperator m;
        m.specs = specs_;
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            const std::size_t d = specs_[i].phys_dim;
            const auto& left = channels_[i];
            const auto& right = channels_[i + 1];
            DenseTensor w({left.size(), d, d, right.size()}, {"l", "po", "pi", "r"});
            for (const auto& t : transitions_[i]) {
                if (static_cast<std::size_t>(t.op.rows()) != d || static_cast<std::size_t>(t.op.cols()) != d) {
                    throw DimensionError("FsmMpoBuilder: operator dimension does not match site");
                }
                const std::size_t a = left.at(t.from), b = right.at(t.to);
                for (std::size_t po = 0; po < d; ++po) {
                    for (std::size_t pi = 0; pi < d; ++pi) {
                        w({a, po, pi, b}) += t.op(static_cast<Eigen::Index>(po), static_cast<Eigen::Index>(pi));
                    }
                }
            }
            m.sites.push_back(std::move(w));
        }
        return m;
    }

private:
    std::vector<SiteSpec> specs_;
    std::vector<std::map<std::string, std::size_t>> channels_;
    std::vector<std::vector<FsmTransition>> transitions_;
};

namespace detail {

inline bool spin_before(const std::vector<SiteSpec>& specs, std::size_t bond) {
    for (std::size_t i = 0; i < bond; ++i)
        if (specs[i].kind == SiteKind::spin) return true;
    return false;
}
inline bool spin_from(const std::vector<SiteSpec>& specs, std::size_t bond) {
    for (std::size_t i = bond; i < specs.size(); ++i)
        if (specs[i].kind == SiteKind::spin) return true;
    return false;
}

}  // namespace detail

/// Dicke-Ising Hamiltonian on the given lattice.
///
/// Channels: start (nothing placed), done (term complete), sy (a -J sy is
/// waiting for its right neighbour), xacc (a coupling sx waiting for the
/// field operator, left of the oscillator) and apend (field operator placed,
/// waiting for one sx, right of the oscillator). Spin-spin bonds carry at
/// most four channels; the bond next to the oscillator carries three.
inline MPOperator build_dicke_ising_mpo(const ModelParams& p, const std::vector<SiteSpec>& specs) {
    p.validate();
    const std::size_t n = specs.size();
    const std::size_t osc = oscillator_position(specs);
    if (specs[osc].phys_dim != static_cast<std::size_t>(p.n_max) + 1 || spin_positions(specs).size() != std::size_t(p.L)) {
        throw DimensionError("build_dicke_ising_mpo: lattice does not match parameters");
    }
    FsmMpoBuilder b(specs);
    for (std::size_t bond = 1; bond < n; ++bond) {
        b.add_channel(bond, "start");
        b.add_channel(bond, "done");
        if (detail::spin_before(specs, bond) && detail::spin_from(specs, bond)) b.add_channel(bond, "sy");
        if (bond <= osc && detail::spin_before(specs, bond)) b.add_channel(bond, "xacc");
        if (bond > osc && detail::spin_from(specs, bond)) b.add_channel(bond, "apend");
    }
    const double gc = p.g / std::sqrt(static_cast<double>(p.L));
    const MatrixXc sx = ops::sigma_x(), sy = ops::sigma_y(), sz = ops::sigma_z(), id2 = ops::identity(2);
    for (std::size_t i = 0; i < n; ++i) {
        if (specs[i].kind == SiteKind::oscillator) {
            const MatrixXc id = ops::identity(specs[i].phys_dim);
            const MatrixXc A = ops::field(p.n_max);
            b.add(i, "start", "start", id);
            b.add(i, "done", "done", id);
            b.add(i, "start", "done", p.omega * ops::number(p.n_max));
            b.add(i, "sy", "sy", id);
            b.add(i, "xacc", "done", A);
            b.add(i, "start", "apend", A);
        } else {
            b.add(i, "start", "start", id2);
            b.add(i, "done", "done", id2);
            b.add(i, "start", "done", -p.h * sz);
            b.add(i, "start", "sy", -p.J * sy);
            b.add(i, "sy", "done", sy);
            b.add(i, "start", "xacc", gc * sx);
            b.add(i, "xacc", "xacc", id2);
            b.add(i, "apend", "done", gc * sx);
            b.add(i, "apend", "apend", id2);
        }
    }
    return b.build();
}

inline MPOperator build_dicke_ising_mpo(const ModelParams& p) { return build_dicke_ising_mpo(p, make_lattice(p)); }

/// V = A (x) sum_i X_i with A on the oscillator and X_i on the i-th spin.
/// Bond dimension 2 (1 on the bonds adjacent to a boundary oscillator).
inline MPOperator build_sum_local_mpo(const std::vector<SiteSpec>& specs, const MatrixXc& a_op,
                                      const std::vector<MatrixXc>& x_ops) {
    const std::size_t n = specs.size();
    const std::size_t osc = oscillator_position(specs);
    const auto spins = spin_positions(specs);
    if (x_ops.size() != spins.size()) throw DimensionError("build_sum_local_mpo: one operator per spin required");
    FsmMpoBuilder b(specs);
    for (std::size_t bond = 1; bond < n; ++bond) {
        if (bond <= osc) {
            b.add_channel(bond, "start");
            if (detail::spin_before(specs, bond)) b.add_channel(bond, "xacc");
        } else {
            if (detail::spin_before(specs, bond)) b.add_channel(bond, "done");
            if (detail::spin_from(specs, bond)) b.add_channel(bond, "apend");
        }
    }
    std::size_t spin_index = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t d = specs[i].phys_dim;
        const MatrixXc id = ops::identity(d);
        if (i == osc) {
            b.add(i, "start", "apend", a_op);
            b.add(i, "xacc", "done", a_op);
        } else {
            const MatrixXc& x = x_ops[spin_index++];
            b.add(i, "start", "start", id);
            b.add(i, "start", "xacc", x);
            b.add(i, "xacc", "xacc", id);
            b.add(i, "done", "done", id);
            b.add(i, "apend", "apend", id);
            b.add(i, "apend", "done", x);
        }
    }
    return b.build();
}

/// P = (-1)^n (x) sz (x) ... (x) sz, bond dimension 1.
inline MPOperator build_parity_mpo(const std::vector<SiteSpec>& specs) {
    MPOperator m;
    m.specs = specs;
    for (const auto& s : specs) {
        const MatrixXc op = s.kind == SiteKind::oscillator ? ops::fock_parity(static_cast<int>(s.phys_dim) - 1)
                                                           : ops::sigma_z();
        m.sites.push_back(from_matrix(op, {1, s.phys_dim}, {"l", "po"}, {s.phys_dim, 1}, {"pi", "r"}));
    }
    return m;
}

inline MPOperator build_parity_mpo(const ModelParams& p) { return build_parity_mpo(make_lattice(p)); }

inline MPOperator identity_mpo(const std::vector<SiteSpec>& specs) {
    MPOperator m;
    m.specs = specs;
    for (const auto& s : specs) {
        m.sites.push_back(from_matrix(ops::identity(s.phys_dim), {1, s.phys_dim}, {"l", "po"}, {s.phys_dim, 1},
                                      {"pi", "r"}));
    }
    return m;
}

/// Product of single-site operators (identity where none is given).
inline MPOperator local_product_mpo(const std::vector<SiteSpec>& specs, const std::map<std::size_t, MatrixXc>& ops_at) {
    MPOperator m = identity_mpo(specs);
    for (const auto& [site, op] : ops_at) {
        const std::size_t d = specs.at(site).phys_dim;
        if (static_cast<std::size_t>(op.rows()) != d) throw DimensionError("local_product_mpo: dimension mismatch");
        m.sites[site] = from_matrix(op, {1, d}, {"l", "po"}, {d, 1}, {"pi", "r"});
    }
    return m;
}

/// Hermitian adjoint.
inline MPOperator adjoint(const MPOperator& op) {
    MPOperator out = op;
    for (auto& w : out.sites) w = w.conj().permuted({"l", "pi", "po", "r"}).with_labels({"l", "po", "pi", "r"});
    return out;
}

/// sum_k c_k O_k with block-diagonal bonds.
inline MPOperator mpo_sum(const std::vector<std::pair<cplx, MPOperator>>& terms) {
    if (terms.empty()) throw std::invalid_argument("mpo_sum: no terms");
    const auto& specs = terms.front().second.specs;
    for (const auto& t : terms) require_same_lattice(specs, t.second.specs);
    const std::size_t n = specs.size();
    MPOperator out;
    out.specs = specs;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t d = specs[i].phys_dim;
        std::size_t wl = 0, wr = 0;
        for (const auto& t : terms) {
            wl += (i == 0) ? 0 : t.second.sites[i].extent("l");
            wr += (i + 1 == n) ? 0 : t.second.sites[i].extent("r");
        }
        if (i == 0) wl = 1;
        if (i + 1 == n) wr = 1;
        DenseTensor w({wl, d, d, wr}, {"l", "po", "pi", "r"});
        std::size_t ol = 0, orr = 0;
        for (const auto& [c, op] : terms) {
            const DenseTensor& src = op.sites[i];
            const cplx scale = (i == 0) ? c : cplx(1.0, 0.0);
            for (std::size_t a = 0; a < src.extent("l"); ++a)
                for (std::size_t po = 0; po < d; ++po)
                    for (std::size_t pi = 0; pi < d; ++pi)
                        for (std::size_t b = 0; b < src.extent("r"); ++b)
                            w({(i == 0) ? 0 : ol + a, po, pi, (i + 1 == n) ? 0 : orr + b}) += scale * src({a, po, pi, b});
            if (i != 0) ol += src.extent("l");
            if (i + 1 != n) orr += src.extent("r");
        }
        out.sites.push_back(std::move(w));
    }
    return out;
}

/// Exact operator-state product; bond dimensions multiply.
inline MPSState apply_mpo(const MPOperator& op, const MPSState& psi) {
    require_same_lattice(op.specs, psi.specs);
    MPSState out;
    out.specs = psi.specs;
    for (std::size_t i = 0; i < psi.length(); ++i) {
        const DenseTensor t = contract(op.sites[i], psi.sites[i].relabeled("l", "L").relabeled("r", "R"),
                                       {{"pi", "p"}});  // (l, po, r, L, R)
        const DenseTensor u = t.permuted({"l", "L", "po", "r", "R"});
        out.sites.push_back(u.reshaped({t.extent("l") * t.extent("L"), t.extent("po"), t.extent("r") * t.extent("R")},
                                       {"l", "p", "r"}));
    }
    return out;
}

/// Dense matrix of the operator; site 0 is the most significant index.
/// Intended for small lattices in tests and diagnostics.
inline MatrixXc mpo_to_dense(const MPOperator& op) {
    DenseTensor acc = op.sites[0];
    acc = acc.reshaped({acc.extent("po"), acc.extent("pi"), acc.extent("r")}, {"PO", "PI", "r"});
    for (std::size_t i = 1; i < op.length(); ++i) {
        DenseTensor t = contract(acc, op.sites[i], {{"r", "l"}});  // (PO, PI, po, pi, r)
        t = t.permuted({"PO", "po", "PI", "pi", "r"});
        acc = t.reshaped({t.extent("PO") * t.extent("po"), t.extent("PI") * t.extent("pi"), t.extent("r")},
                         {"PO", "PI", "r"});
    }
    const auto dim = static_cast<Eigen::Index>(acc.extent("PO"));
    return Eigen::Map<const RowMatrixXc>(acc.data().data(), dim, dim);
}

}  // namespace dmps
