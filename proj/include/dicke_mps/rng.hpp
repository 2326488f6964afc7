#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace dmps {

/// Standard normal stream shared by the MPS and dense trajectory codes.
///
/// Contract: a std::mt19937_64 seeded with `seed`; each uniform is
/// u = (x >> 11) * 2^-53 from one 64-bit draw; normals come in Box-Muller
/// pairs (r cos t, r sin t) with r = sqrt(-2 ln(1 - u1)), t = 2 pi u2, the
/// cosine member first. One normal is consumed per time step.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : eng_(seed) {}

    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform(), u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        const double t = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Source of Wiener increments dW for step index k of length dt.
using IncrementSource = std::function<double(std::size_t step, double dt)>;

/// dW_k = sqrt(dt) * xi_k with xi drawn from a NormalStream.
inline IncrementSource stream_increments(std::uint64_t seed) {
    auto s = std::make_shared<NormalStream>(seed);
    return [s](std::size_t, double dt) { return std::sqrt(dt) * s->next(); };
}

/// A fixed Brownian path on a fine grid. Coarse increments are sums of
/// consecutive fine increments, so runs at dt, dt/2, dt/4 ... share one
/// noise realisation.
class WienerPath {
public:
    WienerPath(std::uint64_t seed, double dt_fine, std::size_t n_fine) : dt_fine_(dt_fine), dw_(n_fine) {
        NormalStream s(seed);
        for (auto& w : dw_) w = std::sqrt(dt_fine) * s.next();
    }

    double dt_fine() const noexcept { return dt_fine_; }
    std::size_t size() const noexcept { return dw_.size(); }

    /// Sum of the fine increments covering step k of length dt (a whole
    /// multiple of dt_fine).
    double increment(std::size_t k, double dt) const {
        const auto m = static_cast<std::size_t>(std::llround(dt / dt_fine_));
        if (m == 0 || std::abs(m * dt_fine_ - dt) > 1e-9 * dt) {
            throw std::invalid_argument("WienerPath: dt is not a multiple of the fine step");
        }
        if ((k + 1) * m > dw_.size()) throw std::out_of_range("WienerPath: path too short");
        double s = 0.0;
        for (std::size_t i = k * m; i < (k + 1) * m; ++i) s += dw_[i];
        return s;
    }

    IncrementSource source() const {
        return [this](std::size_t k, double dt) { return increment(k, dt); };
    }

private:
    double dt_fine_;
    std::vector<double> dw_;
};

}  // namespace dmps
