#pragma once

/**
 * @file dynamics.hpp
 * @brief Propagation of the bilinear consensus control system x' = (sum_i u_i A_i) x and
 *        of its adjoint lambda' = -(sum_i u_i A_i)' lambda.
 *
 * Piecewise-constant controls are propagated exactly, one matrix exponential per segment.
 * The generic overloads take a plain list of generators so the reduced (n-1)-dimensional
 * system reuses the same machinery.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "core.hpp"
#include "expm.hpp"

namespace consensus_opt {

inline constexpr double kSimplexTolerance = 1e-12;
inline constexpr double kAdjointSumTolerance = 1e-9;
inline constexpr int kDefaultSamplesPerSegment = 32;

/// Checks u_i >= 0 and sum u_i = 1 (within 1e-12); returns the cleaned point.
inline Vector checked_simplex_point(const Vector& u) {
    if (u.size() == 0 || !u.allFinite()) throw Error(ErrorCode::SimplexViolation, "empty or non-finite control value");
    if (u.minCoeff() < -kSimplexTolerance || std::abs(u.sum() - 1.0) > kSimplexTolerance) {
        throw Error(ErrorCode::SimplexViolation, "control value is not in the probability simplex");
    }
    Vector clean = u.cwiseMax(0.0);
    return clean / clean.sum();
}

inline Vector simplex_vertex(std::size_t r, std::size_t i) {
    Vector e = Vector::Zero(static_cast<Eigen::Index>(r));
    e(static_cast<Eigen::Index>(i)) = 1.0;
    return e;
}

/**
 * @brief Simplex-valued piecewise-constant control on [0, T].
 *
 * values[j] is active on [breakpoints[j], breakpoints[j+1]). Bang-bang controls are the
 * special case where every value is a simplex vertex.
 */
class PiecewiseControl {
public:
    PiecewiseControl() = default;

    PiecewiseControl(std::vector<double> breakpoints, std::vector<Vector> values)
        : breakpoints_(std::move(breakpoints)), values_(std::move(values)) {
        if (breakpoints_.size() < 2 || values_.size() + 1 != breakpoints_.size()) {
            throw Error(ErrorCode::InvalidControl, "need k+1 breakpoints for k control values");
        }
        if (breakpoints_.front() != 0.0) throw Error(ErrorCode::InvalidControl, "control must start at t = 0");
        for (std::size_t j = 0; j + 1 < breakpoints_.size(); ++j) {
            if (!(breakpoints_[j + 1] > breakpoints_[j]) || !std::isfinite(breakpoints_[j + 1])) {
                throw Error(ErrorCode::InvalidControl, "breakpoints must be finite and strictly increasing");
            }
        }
        const Eigen::Index r = values_.front().size();
        for (auto& v : values_) {
            if (v.size() != r) throw Error(ErrorCode::DimensionMismatch, "control values differ in length");
            v = checked_simplex_point(v);
        }
    }

    static PiecewiseControl constant(const Vector& u, double horizon) {
        return PiecewiseControl({0.0, horizon}, {u});
    }

    /**
     * Bang-bang control from a vertex sequence (0-based subsystem indices) and the
     * switching instants between consecutive arcs. Switch times are clamped to [0, T] and
     * sorted; zero-length arcs are dropped and equal neighbours merged.
     */
    static PiecewiseControl bang_bang(std::size_t r, std::span<const int> sequence,
                                      std::span<const double> switch_times, double horizon) {
        if (sequence.empty() || switch_times.size() + 1 != sequence.size()) {
            throw Error(ErrorCode::InvalidControl, "bang-bang control needs one more arc than switch times");
        }
        if (!(horizon > 0.0)) throw Error(ErrorCode::InvalidControl, "horizon must be positive");
        std::vector<double> taus(switch_times.begin(), switch_times.end());
        for (auto& t : taus) t = std::clamp(t, 0.0, horizon);
        std::sort(taus.begin(), taus.end());

        std::vector<double> bps{0.0};
        std::vector<Vector> vals;
        for (std::size_t j = 0; j < sequence.size(); ++j) {
            const double end = j < taus.size() ? taus[j] : horizon;
            if (sequence[j] < 0 || static_cast<std::size_t>(sequence[j]) >= r) {
                throw Error(ErrorCode::InvalidControl, "subsystem index out of range");
            }
            if (!(end > bps.back())) continue;
            const Vector v = simplex_vertex(r, static_cast<std::size_t>(sequence[j]));
            if (!vals.empty() && vals.back() == v) {
                bps.back() = end;
            } else {
                vals.push_back(v);
                bps.push_back(end);
            }
        }
        return PiecewiseControl(std::move(bps), std::move(vals));
    }

    double horizon() const noexcept { return breakpoints_.back(); }
    std::size_t segment_count() const noexcept { return values_.size(); }
    std::size_t inputs() const noexcept { return values_.empty() ? 0 : static_cast<std::size_t>(values_.front().size()); }
    const std::vector<double>& breakpoints() const noexcept { return breakpoints_; }
    const std::vector<Vector>& values() const noexcept { return values_; }
    double segment_length(std::size_t j) const { return breakpoints_.at(j + 1) - breakpoints_.at(j); }

    /// Value active at t (right-continuous; t = T returns the last value).
    const Vector& value_at(double t) const {
        const auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t);
        auto j = static_cast<std::size_t>(std::distance(breakpoints_.begin(), it));
        j = j == 0 ? 0 : j - 1;
        return values_[std::min(j, values_.size() - 1)];
    }

    bool is_bang_bang() const {
        return std::all_of(values_.begin(), values_.end(), [](const Vector& v) { return v.maxCoeff() == 1.0; });
    }

    /// Copy with neighbouring segments of identical value fused.
    PiecewiseControl merged() const {
        std::vector<double> bps{0.0};
        std::vector<Vector> vals;
        for (std::size_t j = 0; j < values_.size(); ++j) {
            if (!vals.empty() && vals.back() == values_[j]) {
                bps.back() = breakpoints_[j + 1];
            } else {
                vals.push_back(values_[j]);
                bps.push_back(breakpoints_[j + 1]);
            }
        }
        return PiecewiseControl(std::move(bps), std::move(vals));
    }

    /// Number of discontinuities after merging equal neighbours.
    std::size_t switch_count() const { return merged().segment_count() - 1; }

    /// Instants where the (merged) control changes value.
    std::vector<double> switch_times() const {
        const auto m = merged();
        return {m.breakpoints_.begin() + 1, m.breakpoints_.end() - 1};
    }

private:
    std::vector<double> breakpoints_;
    std::vector<Vector> values_;
};

/// Sampled solution x(t, u). Every control breakpoint is a sample; `breakpoint_index[j]`
/// is the sample index of breakpoint j.
struct Trajectory {
    std::vector<double> times;
    std::vector<Vector> states;
    std::vector<std::size_t> breakpoint_index;

    const Vector& final_state() const { return states.back(); }
};

/// Costate lambda(t) sampled on the same grid as the matching Trajectory.
struct AdjointPath {
    std::vector<double> times;
    std::vector<Vector> costates;
};

/// sum_i u_i A_i for a simplex point u.
inline Matrix system_matrix(std::span<const Matrix> generators, const Vector& u) {
    if (static_cast<std::size_t>(u.size()) != generators.size()) {
        throw Error(ErrorCode::DimensionMismatch, "control length differs from the number of subsystems");
    }
    const Vector w = checked_simplex_point(u);
    Matrix m = Matrix::Zero(generators.front().rows(), generators.front().cols());
    for (std::size_t i = 0; i < generators.size(); ++i) {
        if (w(static_cast<Eigen::Index>(i)) != 0.0) m += w(static_cast<Eigen::Index>(i)) * generators[i];
    }
    return m;
}

inline Matrix system_matrix(const SwitchedSystem& sys, const Vector& u) {
    return system_matrix(std::span<const Matrix>(sys.matrices()), u);
}

namespace detail {

struct SegmentFlow {
    Matrix full; // exp(M_j h_j)
    Matrix sub;  // exp(M_j h_j / samples)
};

inline std::vector<SegmentFlow> segment_flows(std::span<const Matrix> generators, const PiecewiseControl& u,
                                              int samples) {
    std::vector<SegmentFlow> flows;
    flows.reserve(u.segment_count());
    for (std::size_t j = 0; j < u.segment_count(); ++j) {
        const Matrix m = system_matrix(generators, u.values()[j]);
        const double h = u.segment_length(j);
        flows.push_back({matrix_exponential(m, h), matrix_exponential(m, h / samples)});
    }
    return flows;
}

inline void check_inputs(std::span<const Matrix> generators, const PiecewiseControl& u) {
    if (generators.empty()) throw Error(ErrorCode::EmptySystem, "no subsystems");
    if (u.inputs() != generators.size()) {
        throw Error(ErrorCode::DimensionMismatch, "control length differs from the number of subsystems");
    }
}

inline Trajectory forward(const Vector& x0, const PiecewiseControl& u, const std::vector<SegmentFlow>& flows,
                          int samples) {
    Trajectory traj;
    const auto& bps = u.breakpoints();
    traj.times.push_back(0.0);
    traj.states.push_back(x0);
    traj.breakpoint_index.push_back(0);
    for (std::size_t j = 0; j < flows.size(); ++j) {
        const Vector start = traj.states.back();
        const double h = bps[j + 1] - bps[j];
        Vector x = start;
        for (int k = 1; k < samples; ++k) {
            x = flows[j].sub * x;
            traj.times.push_back(bps[j] + h * k / samples);
            traj.states.push_back(x);
        }
        traj.times.push_back(bps[j + 1]);
        traj.states.push_back(flows[j].full * start);
        traj.breakpoint_index.push_back(traj.times.size() - 1);
    }
    return traj;
}

inline AdjointPath backward(const Vector& terminal, const PiecewiseControl& u,
                            const std::vector<SegmentFlow>& flows, int samples) {
    const auto& bps = u.breakpoints();
    const std::size_t total = flows.size() * static_cast<std::size_t>(samples) + 1;
    AdjointPath path;
    path.times.resize(total);
    path.costates.resize(total);
    std::size_t idx = total - 1;
    path.times[idx] = bps.back();
    path.costates[idx] = terminal;
    for (std::size_t jj = flows.size(); jj-- > 0;) {
        const Vector end = path.costates[idx];
        const double h = bps[jj + 1] - bps[jj];
        Vector lam = end;
        for (int k = samples - 1; k >= 1; --k) {
            lam = flows[jj].sub.transpose() * lam;
            --idx;
            path.times[idx] = bps[jj] + h * k / samples;
            path.costates[idx] = lam;
        }
        --idx;
        path.times[idx] = bps[jj];
        path.costates[idx] = flows[jj].full.transpose() * end;
    }
    return path;
}

} // namespace detail

/// Exact sampled solution; `samples_per_segment` uniform substeps inside each control segment.
inline Trajectory propagate(std::span<const Matrix> generators, const Vector& x0, const PiecewiseControl& u,
                            int samples_per_segment = kDefaultSamplesPerSegment) {
    detail::check_inputs(generators, u);
    if (x0.size() != generators.front().rows()) throw Error(ErrorCode::DimensionMismatch, "x0 length differs from n");
    if (samples_per_segment < 1) throw Error(ErrorCode::InvalidArgument, "samples_per_segment must be >= 1");
    const auto flows = detail::segment_flows(generators, u, samples_per_segment);
    return detail::forward(x0, u, flows, samples_per_segment);
}

inline Trajectory propagate(const SwitchedSystem& sys, const StateVector& x0, const PiecewiseControl& u,
                            int samples_per_segment = kDefaultSamplesPerSegment) {
    return propagate(std::span<const Matrix>(sys.matrices()), x0, u, samples_per_segment);
}

/// x(T, u) only: one exponential per segment, no sampling.
inline Vector final_state(std::span<const Matrix> generators, const Vector& x0, const PiecewiseControl& u) {
    detail::check_inputs(generators, u);
    if (x0.size() != generators.front().rows()) throw Error(ErrorCode::DimensionMismatch, "x0 length differs from n");
    Vector x = x0;
    for (std::size_t j = 0; j < u.segment_count(); ++j) {
        x = matrix_exponential(system_matrix(generators, u.values()[j]), u.segment_length(j)) * x;
    }
    return x;
}

inline Vector final_state(const SwitchedSystem& sys, const StateVector& x0, const PiecewiseControl& u) {
    return final_state(std::span<const Matrix>(sys.matrices()), x0, u);
}

/// Backward costate for an arbitrary family (no first-integral check).
inline AdjointPath propagate_costate(std::span<const Matrix> generators, const PiecewiseControl& u,
                                     const Vector& terminal,
                                     int samples_per_segment = kDefaultSamplesPerSegment) {
    detail::check_inputs(generators, u);
    if (terminal.size() != generators.front().rows()) throw Error(ErrorCode::DimensionMismatch, "terminal costate length");
    const auto flows = detail::segment_flows(generators, u, samples_per_segment);
    return detail::backward(terminal, u, flows, samples_per_segment);
}

/**
 * @brief Adjoint lambda(t) of a consensus system from lambda(T) = lambda_T.
 *
 * Requires 1' lambda_T = 0 (within 1e-9 relative); the zero column sums of -A_i' then keep
 * 1' lambda(t) = 0 along the whole path, which is verified on every sample.
 */
inline AdjointPath propagate_adjoint(const SwitchedSystem& sys, const PiecewiseControl& u, const Vector& lambda_T,
                                     int samples_per_segment = kDefaultSamplesPerSegment) {
    const double scale = std::max(1.0, lambda_T.cwiseAbs().maxCoeff());
    if (std::abs(lambda_T.sum()) > kAdjointSumTolerance * scale) {
        throw Error(ErrorCode::TerminalNotZeroSum, "terminal costate must have zero entry sum");
    }
    auto path = propagate_costate(std::span<const Matrix>(sys.matrices()), u, lambda_T, samples_per_segment);
    for (const auto& lam : path.costates) {
        const double s = std::max(1.0, lam.cwiseAbs().maxCoeff());
        if (std::abs(lam.sum()) > kAdjointSumTolerance * s) {
            throw Error(ErrorCode::TerminalNotZeroSum, "costate entry sum drifted away from zero");
        }
    }
    return path;
}

/// Time-varying generator t -> M(t) for the fixed-step fallback integrator.
using MatrixSource = std::function<Matrix(double)>;

/// Classical fixed-step RK4 for x' = M(t) x on [0, T]; the last step is shortened to land on T.
inline Trajectory propagate_general(const MatrixSource& m_of_t, const Vector& x0, double horizon, double step) {
    if (!(step > 0.0)) throw Error(ErrorCode::InvalidArgument, "step must be positive");
    if (!(horizon > 0.0)) throw Error(ErrorCode::InvalidArgument, "horizon must be positive");
    Trajectory traj;
    traj.times.push_back(0.0);
    traj.states.push_back(x0);
    traj.breakpoint_index.push_back(0);
    const auto steps = static_cast<std::size_t>(std::ceil(horizon / step - 1e-12));
    Vector x = x0;
    double t = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
        const double t_next = k + 1 == steps ? horizon : (static_cast<double>(k) + 1.0) * step;
        const double h = t_next - t;
        const Matrix m0 = m_of_t(t);
        const Matrix mh = m_of_t(t + 0.5 * h);
        const Matrix m1 = m_of_t(t_next);
        const Vector k1 = m0 * x;
        const Vector k2 = mh * (x + 0.5 * h * k1);
        const Vector k3 = mh * (x + 0.5 * h * k2);
        const Vector k4 = m1 * (x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t = t_next;
        traj.times.push_back(t);
        traj.states.push_back(x);
    }
    traj.breakpoint_index.push_back(traj.times.size() - 1);
    return traj;
}

} // namespace consensus_opt
