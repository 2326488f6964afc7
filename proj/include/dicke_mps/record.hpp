#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dicke_mps/model.hpp"
#include "dicke_mps/observables.hpp"

namespace dmps {

/// Time series of one conditioned trajectory. The per-point lists are
/// aligned with `times`; `dy` and `norm_drift` hold the values of the step
/// that ended at that time (0 at t = 0). The step_* lists cover every step.
struct TrajectoryRecord {
    std::uint64_t seed = 0;
    ModelParams params;
    double kappa = 0.0;
    double dt = 0.0;
    std::vector<double> times, dy, q_mean, n_mean, entropy_osc, parity, norm_drift;
    std::vector<double> step_dy, step_norm_drift;
    /// Oscillator density matrices at the recorded times (optional).
    std::vector<MatrixXc> rho_osc;
    bool complete = true;
    std::string failure;

    std::size_t points() const noexcept { return times.size(); }

    void validate() const {
        const auto n = times.size();
        if (dy.size() != n || q_mean.size() != n || n_mean.size() != n || entropy_osc.size() != n ||
            parity.size() != n || norm_drift.size() != n || (!rho_osc.empty() && rho_osc.size() != n)) {
            throw std::logic_error("TrajectoryRecord: misaligned series");
        }
    }
};

/// Appends one record point from an oscillator state and parity value.
inline void record_point(TrajectoryRecord& rec, double t, double dy, double drift, const OscillatorState& osc,
                         double parity, bool keep_rho) {
    rec.times.push_back(t);
    rec.dy.push_back(dy);
    rec.q_mean.push_back(quadrature_mean(osc));
    rec.n_mean.push_back(photon_stats(osc).mean);
    rec.entropy_osc.push_back(von_neumann_entropy(osc));
    rec.parity.push_back(parity);
    rec.norm_drift.push_back(drift);
    if (keep_rho) rec.rho_osc.push_back(osc.rho);
}

struct SeriesStats {
    std::vector<double> mean, variance;
};

struct EnsembleStatistics {
    std::vector<double> times;
    std::size_t count = 0;
    SeriesStats q, n, entropy, parity;
    /// Entropy of the ensemble-averaged oscillator state (needs rho_osc).
    std::vector<double> entropy_of_mean_state;
};

/// Pointwise mean and (population) variance across records.
inline EnsembleStatistics ensemble_statistics(const std::vector<TrajectoryRecord>& records) {
    if (records.empty()) throw std::invalid_argument("ensemble_statistics: no records");
    EnsembleStatistics st;
    st.times = records.front().times;
    st.count = records.size();
    for (const auto& r : records) {
        r.validate();
        if (r.times.size() != st.times.size()) throw std::invalid_argument("ensemble_statistics: time grid mismatch");
        for (std::size_t k = 0; k < st.times.size(); ++k)
            if (std::abs(r.times[k] - st.times[k]) > 1e-12 * std::max(1.0, std::abs(st.times[k])))
                throw std::invalid_argument("ensemble_statistics: time grid mismatch");
    }
    const std::size_t m = st.times.size();
    auto fill = [&](SeriesStats& s, auto member) {
        s.mean.assign(m, 0.0);
        s.variance.assign(m, 0.0);
        for (const auto& r : records)
            for (std::size_t k = 0; k < m; ++k) s.mean[k] += (r.*member)[k];
        for (auto& v : s.mean) v /= static_cast<double>(records.size());
        for (const auto& r : records)
            for (std::size_t k = 0; k < m; ++k) s.variance[k] += std::pow((r.*member)[k] - s.mean[k], 2);
        for (auto& v : s.variance) v /= static_cast<double>(records.size());
    };
    fill(st.q, &TrajectoryRecord::q_mean);
    fill(st.n, &TrajectoryRecord::n_mean);
    fill(st.entropy, &TrajectoryRecord::entropy_osc);
    fill(st.parity, &TrajectoryRecord::parity);
    const bool have_rho = std::all_of(records.begin(), records.end(),
                                      [&](const TrajectoryRecord& r) { return r.rho_osc.size() == m; });
    if (have_rho) {
        for (std::size_t k = 0; k < m; ++k) {
            MatrixXc avg = MatrixXc::Zero(records.front().rho_osc[k].rows(), records.front().rho_osc[k].cols());
            for (const auto& r : records) avg += r.rho_osc[k];
            avg /= static_cast<double>(records.size());
            st.entropy_of_mean_state.push_back(von_neumann_entropy(avg));
        }
    }
    return st;
}

inline constexpr int kTrajectoryFormatVersion = 1;

/// Tab-separated trajectory file: '#' header lines, a column line, one row
/// per recorded time, and a final "# end" line marking a complete record.
inline void write_trajectory(std::ostream& os, const TrajectoryRecord& rec, const std::string& config_hash = "",
                             const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    os << "# dicke-mps trajectory format " << kTrajectoryFormatVersion << "\n";
    if (!config_hash.empty()) os << "# config_hash " << config_hash << "\n";
    os << "# seed " << rec.seed << "\n";
    os << "# params " << rec.params.describe() << "\n";
    os << std::setprecision(17);
    os << "# kappa " << rec.kappa << "\n# dt " << rec.dt << "\n";
    for (const auto& [k, v] : extra) os << "# " << k << " " << v << "\n";
    if (!rec.complete) os << "# failure " << rec.failure << "\n";
    os << "t\tdy\tq\tn\tS\tP\tnorm_drift\n";
    for (std::size_t k = 0; k < rec.points(); ++k) {
        os << rec.times[k] << '\t' << rec.dy[k] << '\t' << rec.q_mean[k] << '\t' << rec.n_mean[k] << '\t'
           << rec.entropy_osc[k] << '\t' << rec.parity[k] << '\t' << rec.norm_drift[k] << '\n';
    }
    os << (rec.complete ? "# end\n" : "# partial\n");
}

}  // namespace dmps
