#pragma once

#include <cmath>

namespace consensus_opt {

/// Numerical thresholds shared by every accept/reject decision in the library.
struct Tolerances {
    /// Row-sum / Metzler slack, scaled by max(1, max|a_ij|).
    double row = 1e-12;
    /// Positive-definiteness margin for metrics and Lyapunov residuals.
    double pd = 1e-10;
    /// Numerical rank threshold, relative to the largest singular value.
    double rank = 1e-9;
    /// Multiplier on the reference-case comparison tolerances (0 makes every check exact).
    double regression_scale = 1.0;
};

inline const Tolerances& default_tolerances() {
    static const Tolerances tol{};
    return tol;
}

} // namespace consensus_opt
