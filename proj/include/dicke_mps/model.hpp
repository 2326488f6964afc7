#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dicke_mps/tensor.hpp"

namespace dmps {

enum class SiteKind { oscillator, spin };

struct SiteSpec {
    SiteKind kind = SiteKind::spin;
    std::size_t phys_dim = 2;

    friend bool operator==(const SiteSpec&, const SiteSpec&) = default;
};

/// Physical configuration of the Dicke-Ising chain:
///   H = omega a'a - h sum sz - J sum sy sy + (g / sqrt L) sum sx (a + a').
/// All energies are in units where the oscillator frequency sets the scale.
struct ModelParams {
    double omega = 1.0;
    double h = 0.0;
    double J = 0.0;
    double g = 0.0;
    int L = 1;
    int n_max = 1;

    void validate() const {
        auto finite = [](double x) { return std::isfinite(x); };
        if (!(finite(omega) && omega > 0.0)) throw std::invalid_argument("ModelParams: omega must be > 0");
        if (!(finite(h) && h >= 0.0)) throw std::invalid_argument("ModelParams: h must be >= 0");
        if (!(finite(J) && J >= 0.0)) throw std::invalid_argument("ModelParams: J must be >= 0");
        if (!(finite(g) && g >= 0.0)) throw std::invalid_argument("ModelParams: g must be >= 0");
        if (L < 1) throw std::invalid_argument("ModelParams: L must be >= 1");
        if (n_max < 1) throw std::invalid_argument("ModelParams: n_max must be >= 1");
    }

    /// ceil(4 g^2 L / omega^2) + 10: several Poisson widths above the
    /// mean-field occupation, which grows linearly with L.
    static int default_n_max(double g, int L, double omega = 1.0) {
        return static_cast<int>(std::ceil(4.0 * g * g * L / (omega * omega))) + 10;
    }

    std::string describe() const {
        std::ostringstream os;
        os.precision(17);
        os << "omega=" << omega << " h=" << h << " J=" << J << " g=" << g << " L=" << L << " n_max=" << n_max;
        return os.str();
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Site layout: one oscillator (default position 0) and L spins.
inline std::vector<SiteSpec> make_lattice(const ModelParams& p, std::size_t oscillator_position = 0) {
    if (oscillator_position > static_cast<std::size_t>(p.L)) {
        throw DimensionError("make_lattice: oscillator position beyond chain end");
    }
    std::vector<SiteSpec> specs(p.L + 1, SiteSpec{SiteKind::spin, 2});
    specs[oscillator_position] = SiteSpec{SiteKind::oscillator, static_cast<std::size_t>(p.n_max) + 1};
    return specs;
}

inline std::size_t oscillator_position(const std::vector<SiteSpec>& specs) {
    std::size_t found = specs.size();
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].kind == SiteKind::oscillator) {
            if (found != specs.size()) throw DimensionError("lattice has more than one oscillator site");
            found = i;
        }
    }
    if (found == specs.size()) throw DimensionError("lattice has no oscillator site");
    return found;
}

/// Chain positions of the spins, in spin order.
inline std::vector<std::size_t> spin_positions(const std::vector<SiteSpec>& specs) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].kind == SiteKind::spin) out.push_back(i);
    }
    return out;
}

/// Single-site operators. Spin basis is (up, down) with sz = diag(1, -1);
/// oscillator basis is Fock |0>..|n_max>.
namespace ops {

inline MatrixXc identity(std::size_t d) { return MatrixXc::Identity(d, d); }

inline MatrixXc sigma_x() {
    MatrixXc m(2, 2);
    m << 0, 1, 1, 0;
    return m;
}
inline MatrixXc sigma_y() {
    MatrixXc m(2, 2);
    m << 0, cplx(0, -1), cplx(0, 1), 0;
    return m;
}
inline MatrixXc sigma_z() {
    MatrixXc m(2, 2);
    m << 1, 0, 0, -1;
    return m;
}

inline MatrixXc annihilation(int n_max) {
    const auto d = n_max + 1;
    MatrixXc a = MatrixXc::Zero(d, d);
    for (int n = 1; n < d; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
    return a;
}
inline MatrixXc creation(int n_max) { return annihilation(n_max).adjoint(); }
inline MatrixXc number(int n_max) {
    const auto d = n_max + 1;
    MatrixXc m = MatrixXc::Zero(d, d);
    for (int n = 0; n < d; ++n) m(n, n) = n;
    return m;
}
/// a + a'
inline MatrixXc field(int n_max) {
    const MatrixXc a = annihilation(n_max);
    return a + a.adjoint();
}
/// (-1)^n, the oscillator part of the parity symmetry.
inline MatrixXc fock_parity(int n_max) {
    const auto d = n_max + 1;
    MatrixXc m = MatrixXc::Zero(d, d);
    for (int n = 0; n < d; ++n) m(n, n) = (n % 2 == 0) ? 1.0 : -1.0;
    return m;
}

}  // namespace ops

}  // namespace dmps
