#pragma once

#include <string>
#include <vector>

#include "dicke_mps/mpo.hpp"
#include "dicke_mps/mps.hpp"
#include "dicke_mps/tensor.hpp"

namespace dmps {

/// Operator layers between a bra and a ket: {O_0, O_1, ...} stands for
/// <bra| O_0 O_1 ... |ket>, so the last layer acts on the ket first.
using Layers = std::vector<const MPOperator*>;

/// Environment tensors carry axes ("b", "w0", ..., "k"): bra bond, one bond
/// per operator layer, ket bond.
namespace env {

inline std::string wl(std::size_t j) { return "w" + std::to_string(j); }

inline std::vector<std::string> env_labels(std::size_t nlayers) {
    std::vector<std::string> l{"b"};
    for (std::size_t j = 0; j < nlayers; ++j) l.push_back(wl(j));
    l.push_back("k");
    return l;
}

inline DenseTensor boundary(std::size_t nlayers) {
    return DenseTensor(std::vector<std::size_t>(nlayers + 2, 1), env_labels(nlayers), {cplx(1.0, 0.0)});
}

/// Absorbs site i into a left environment.
inline DenseTensor extend_left(const DenseTensor& e, const DenseTensor& bra, const std::vector<const DenseTensor*>& ws,
                               const DenseTensor& ket) {
    const std::size_t n = ws.size();
    DenseTensor t = contract(e, ket.relabeled("r", "kr"), {{"k", "l"}});
    t.relabel("p", "q");
    for (std::size_t j = n; j-- > 0;) {
        t = contract(t, *ws[j], {{wl(j), "l"}, {"q", "pi"}});
        t.relabel("po", "q").relabel("r", wl(j));
    }
    t = contract(t, bra.conj(), {{"b", "l"}, {"q", "p"}});
    t.relabel("r", "b").relabel("kr", "k");
    return t.permuted(env_labels(n));
}

/// Absorbs site i into a right environment.
inline DenseTensor extend_right(const DenseTensor& e, const DenseTensor& bra, const std::vector<const DenseTensor*>& ws,
                                const DenseTensor& ket) {
    const std::size_t n = ws.size();
    DenseTensor t = contract(e, ket.relabeled("l", "kl"), {{"k", "r"}});
    t.relabel("p", "q");
    for (std::size_t j = n; j-- > 0;) {
        t = contract(t, *ws[j], {{wl(j), "r"}, {"q", "pi"}});
        t.relabel("po", "q").relabel("l", wl(j));
    }
    t = contract(t, bra.conj(), {{"b", "r"}, {"q", "p"}});
    t.relabel("l", "b").relabel("kl", "k");
    return t.permuted(env_labels(n));
}

inline std::vector<const DenseTensor*> layer_sites(const Layers& layers, std::size_t i) {
    std::vector<const DenseTensor*> ws;
    for (const auto* op : layers) ws.push_back(&op->sites[i]);
    return ws;
}

/// Applies the local operator defined by environments and layer tensors to a
/// site tensor x (l, p, r). Result has axes (l, p, r).
inline DenseTensor apply_single(const DenseTensor& left, const std::vector<const DenseTensor*>& ws,
                                const DenseTensor& right, const DenseTensor& x) {
    const std::size_t n = ws.size();
    DenseTensor t = contract(left, x.relabeled("r", "xr"), {{"k", "l"}});
    t.relabel("p", "q");
    for (std::size_t j = n; j-- > 0;) {
        t = contract(t, *ws[j], {{wl(j), "l"}, {"q", "pi"}});
        t.relabel("po", "q").relabel("r", "v" + std::to_string(j));
    }
    DenseTensor r = right.relabeled("b", "rb").relabeled("k", "xr");
    std::vector<AxisPair> pairs{{"xr", "xr"}};
    for (std::size_t j = 0; j < n; ++j) {
        r.relabel(wl(j), "v" + std::to_string(j));
        pairs.emplace_back("v" + std::to_string(j), "v" + std::to_string(j));
    }
    t = contract(t, r, pairs);  // (b, q, rb)
    return t.permuted({"b", "q", "rb"}).with_labels({"l", "p", "r"});
}

/// Two-site analogue of apply_single for x with axes (l, p1, p2, r) given
/// as the product of ket tensors a (l, p, r) and c (l, p, r).
inline DenseTensor apply_two(const DenseTensor& left, const std::vector<const DenseTensor*>& ws1,
                             const std::vector<const DenseTensor*>& ws2, const DenseTensor& right, const DenseTensor& a,
                             const DenseTensor& c) {
    const std::size_t n = ws1.size();
    DenseTensor t = contract(left, a.relabeled("r", "m"), {{"k", "l"}});  // (b, w.., p, m)
    t.relabel("p", "q1");
    t = contract(t, c.relabeled("r", "xr"), {{"m", "l"}});  // (b, w.., q1, p, xr)
    t.relabel("p", "q2");
    for (std::size_t j = n; j-- > 0;) {
        t = contract(t, *ws1[j], {{wl(j), "l"}, {"q1", "pi"}});
        t.relabel("po", "q1").relabel("r", "u");
        t = contract(t, *ws2[j], {{"u", "l"}, {"q2", "pi"}});
        t.relabel("po", "q2").relabel("r", "v" + std::to_string(j));
    }
    DenseTensor r = right.relabeled("b", "rb").relabeled("k", "xr");
    std::vector<AxisPair> pairs{{"xr", "xr"}};
    for (std::size_t j = 0; j < n; ++j) {
        r.relabel(wl(j), "v" + std::to_string(j));
        pairs.emplace_back("v" + std::to_string(j), "v" + std::to_string(j));
    }
    t = contract(t, r, pairs);
    return t.permuted({"b", "q1", "q2", "rb"}).with_labels({"l", "p1", "p2", "r"});
}

}  // namespace env

/// <bra| O_0 O_1 ... |ket> by a single left-to-right pass.
inline cplx sandwich(const MPSState& bra, const Layers& layers, const MPSState& ket) {
    require_same_lattice(bra.specs, ket.specs);
    for (const auto* op : layers) require_same_lattice(op->specs, ket.specs);
    DenseTensor e = env::boundary(layers.size());
    for (std::size_t i = 0; i < ket.length(); ++i) {
        e = env::extend_left(e, bra.sites[i], env::layer_sites(layers, i), ket.sites[i]);
    }
    return e.data()[0];
}

/// <psi|O|phi>; cost linear in the chain length.
inline cplx mpo_expectation(const MPSState& psi, const MPOperator& op, const MPSState& phi) {
    return sandwich(psi, {&op}, phi);
}

/// Left and right environment stacks for a fixed operator layering. Entry
/// left[i] covers sites [0, i), right[i] covers sites [i, N).
class EnvStack {
public:
    EnvStack(Layers layers, std::size_t n) : layers_(std::move(layers)), left_(n + 1), right_(n + 1) {
        left_[0] = env::boundary(layers_.size());
        right_[n] = env::boundary(layers_.size());
    }

    const Layers& layers() const noexcept { return layers_; }
    std::vector<const DenseTensor*> ws(std::size_t i) const { return env::layer_sites(layers_, i); }

    const DenseTensor& left(std::size_t i) const { return left_.at(i); }
    const DenseTensor& right(std::size_t i) const { return right_.at(i); }

    void update_left(std::size_t i, const DenseTensor& bra, const DenseTensor& ket) {
        left_.at(i + 1) = env::extend_left(left_.at(i), bra, ws(i), ket);
    }
    void update_right(std::size_t i, const DenseTensor& bra, const DenseTensor& ket) {
        right_.at(i) = env::extend_right(right_.at(i + 1), bra, ws(i), ket);
    }

    /// Rebuilds right[from..N-1] for the given bra/ket pair.
    void build_right(const MPSState& bra, const MPSState& ket, std::size_t from = 1) {
        for (std::size_t i = bra.length(); i-- > from;) update_right(i, bra.sites[i], ket.sites[i]);
    }

private:
    Layers layers_;
    std::vector<DenseTensor> left_, right_;
};

}  // namespace dmps
