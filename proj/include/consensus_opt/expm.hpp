#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>

#include "error.hpp"

namespace consensus_opt {

namespace detail {

// Backward-error bounds theta_m for the [m/m] Pade approximants (double precision).
inline constexpr std::array<double, 5> kPadeOrders{3, 5, 7, 9, 13};
inline constexpr std::array<double, 5> kPadeTheta{1.495585217958292e-2, 2.539398330063230e-1,
                                                  9.504178996162932e-1, 2.097847961257068e0,
                                                  5.371920351148152e0};

// Numerator/denominator split: exp(A) ~ (V - U)^{-1} (V + U).
inline void pade_low_order(const Eigen::MatrixXd& a, int m, Eigen::MatrixXd& u, Eigen::MatrixXd& v) {
    const Eigen::Index n = a.rows();
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd a2 = a * a;
    switch (m) {
    case 3: {
        constexpr double b[] = {120.0, 60.0, 12.0, 1.0};
        u = a * (b[3] * a2 + b[1] * id);
        v = b[2] * a2 + b[0] * id;
        break;
    }
    case 5: {
        constexpr double b[] = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
        const Eigen::MatrixXd a4 = a2 * a2;
        u = a * (b[5] * a4 + b[3] * a2 + b[1] * id);
        v = b[4] * a4 + b[2] * a2 + b[0] * id;
        break;
    }
    case 7: {
        constexpr double b[] = {17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0};
        const Eigen::MatrixXd a4 = a2 * a2;
        const Eigen::MatrixXd a6 = a4 * a2;
        u = a * (b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
        v = b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
        break;
    }
    default: {
        constexpr double b[] = {17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
                                2162160.0,     110880.0,     3960.0,       90.0,        1.0};
        const Eigen::MatrixXd a4 = a2 * a2;
        const Eigen::MatrixXd a6 = a4 * a2;
        const Eigen::MatrixXd a8 = a6 * a2;
        u = a * (b[9] * a8 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
        v = b[8] * a8 + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
        break;
    }
    }
}

inline void pade13(const Eigen::MatrixXd& a, Eigen::MatrixXd& u, Eigen::MatrixXd& v) {
    constexpr double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                            1187353796428800.0,  129060195264000.0,   10559470521600.0,
                            670442572800.0,      33522128640.0,       1323241920.0,
                            40840800.0,          960960.0,            16380.0,
                            182.0,               1.0};
    const Eigen::Index n = a.rows();
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd a2 = a * a;
    const Eigen::MatrixXd a4 = a2 * a2;
    const Eigen::MatrixXd a6 = a4 * a2;
    u = a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
    v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
}

} // namespace detail

/**
 * @brief exp(M t) by scaling and squaring with a diagonal Pade approximant.
 *
 * Chooses the lowest order among {3, 5, 7, 9, 13} whose backward-error bound covers
 * ||M t||_1; above the order-13 bound the argument is scaled by 2^-s and the result squared
 * s times. Deterministic for a given input.
 *
 * Throws Error(Overflow) when the input norm is not finite or the result overflows.
 */
inline Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& m, double t = 1.0) {
    if (m.rows() != m.cols()) throw Error(ErrorCode::NotSquare, "matrix exponential needs a square matrix");
    if (!m.allFinite() || !std::isfinite(t)) throw Error(ErrorCode::NonFinite, "non-finite matrix exponential input");
    const Eigen::Index n = m.rows();
    if (n == 0) return m;

    const Eigen::MatrixXd a = m * t;
    const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
    if (!std::isfinite(norm1)) throw Error(ErrorCode::Overflow, "matrix norm overflows");
    if (norm1 == 0.0) return Eigen::MatrixXd::Identity(n, n);

    Eigen::MatrixXd u;
    Eigen::MatrixXd v;
    int squarings = 0;
    bool done = false;
    for (std::size_t k = 0; k + 1 < detail::kPadeOrders.size(); ++k) {
        if (norm1 <= detail::kPadeTheta[k]) {
            detail::pade_low_order(a, static_cast<int>(detail::kPadeOrders[k]), u, v);
            done = true;
            break;
        }
    }
    if (!done) {
        const double ratio = norm1 / detail::kPadeTheta.back();
        squarings = std::max(0, static_cast<int>(std::ceil(std::log2(ratio))));
        if (squarings > 1023) throw Error(ErrorCode::Overflow, "matrix norm too large for scaling and squaring");
        detail::pade13(std::ldexp(1.0, -squarings) * a, u, v);
    }

    Eigen::MatrixXd result = (v - u).partialPivLu().solve(v + u);
    for (int i = 0; i < squarings; ++i) result = result * result;
    if (!result.allFinite()) throw Error(ErrorCode::Overflow, "matrix exponential overflowed");
    return result;
}

} // namespace consensus_opt
