#pragma once

/**
 * @file reduction.hpp
 * @brief Quotient of a consensus system by the consensus line span{1_n}.
 *
 * With a basis S whose first row is 1_n' and whose remaining rows sum to zero, y = S x
 * evolves by S A_i S^{-1}, whose first column vanishes. Dropping y_1 leaves the
 * (n-1)-dimensional system z' = (sum_i u_i Abar_i) z with V(x) = z' M z.
 */

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <span>
#include <vector>

#include "core.hpp"

namespace consensus_opt {

/// Change of coordinates y = S x; rows of S are s^1', ..., s^n' with s^1 = 1_n.
class ReductionBasis {
public:
    ReductionBasis() = default;

    /// Custom basis. Row 0 must be a nonzero multiple of 1_n; the other rows must sum to zero.
    static ReductionBasis from_rows(const Matrix& s) {
        const Eigen::Index n = s.rows();
        if (n < 2 || s.cols() != n) throw Error(ErrorCode::InvalidArgument, "basis must be n x n with n >= 2");
        const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
        for (Eigen::Index k = 1; k < n; ++k) {
            if (std::abs(s.row(k).sum()) > 1e-12 * scale * n) {
                throw Error(ErrorCode::BasisNotAdapted, "basis rows 2..n must be orthogonal to 1_n");
            }
        }
        ReductionBasis b;
        b.s_ = s;
        Eigen::PartialPivLU<Matrix> lu(s);
        b.s_inv_ = lu.inverse();
        if (!b.s_inv_.allFinite() || (s * b.s_inv_ - Matrix::Identity(n, n)).norm() > 1e-10) {
            throw Error(ErrorCode::BasisNotAdapted, "basis matrix is singular");
        }
        return b;
    }

    Eigen::Index dim() const noexcept { return s_.rows(); }
    const Matrix& s() const noexcept { return s_; }
    const Matrix& s_inv() const noexcept { return s_inv_; }

    /// R: (n-1) x n selector dropping the first coordinate.
    Matrix selector() const {
        const Eigen::Index n = dim();
        Matrix r = Matrix::Zero(n - 1, n);
        r.rightCols(n - 1).setIdentity();
        return r;
    }

    /// S^{-1} without its first column (maps z back to the disagreement part of x).
    Matrix lift() const { return s_inv_.rightCols(dim() - 1); }

private:
    Matrix s_;
    Matrix s_inv_;
};

/// s^1 = 1_n, s^k = e^{k-1} - e^k for k = 2..n.
inline ReductionBasis default_basis(Eigen::Index n) {
    if (n < 2) throw Error(ErrorCode::InvalidArgument, "reduction needs n >= 2");
    Matrix s = Matrix::Zero(n, n);
    s.row(0).setOnes();
    for (Eigen::Index k = 1; k < n; ++k) {
        s(k, k - 1) = 1.0;
        s(k, k) = -1.0;
    }
    return ReductionBasis::from_rows(s);
}

struct ReducedSystem {
    std::vector<Matrix> bar_matrices;
    Matrix metric; // M, symmetric positive definite
    ReductionBasis basis;

    Eigen::Index dim() const noexcept { return metric.rows(); }
    Matrix selector() const { return basis.selector(); }
};

/// M = R (S^{-1})' P S^{-1} R'.
inline Matrix reduction_metric(const ReductionBasis& basis) {
    const Eigen::Index n = basis.dim();
    const Matrix full = basis.s_inv().transpose() * projection_matrix(n) * basis.s_inv();
    const Matrix m = full.bottomRightCorner(n - 1, n - 1);
    return 0.5 * (m + m.transpose());
}

inline ReducedSystem reduce(const SwitchedSystem& sys, const ReductionBasis& basis,
                            const Tolerances& tol = default_tolerances()) {
    const Eigen::Index n = sys.dim();
    if (basis.dim() != n) throw Error(ErrorCode::DimensionMismatch, "basis dimension differs from system dimension");
    ReducedSystem out;
    out.basis = basis;
    for (const auto& a : sys.matrices()) {
        const Matrix conj = basis.s() * a * basis.s_inv();
        const double scale = std::max(1.0, a.norm()) * std::max(1.0, basis.s().norm() * basis.s_inv().norm());
        if (conj.col(0).cwiseAbs().maxCoeff() > 1e-10 * scale) {
            throw Error(ErrorCode::BasisNotAdapted, "first column of S A S^-1 is not zero");
        }
        out.bar_matrices.push_back(conj.bottomRightCorner(n - 1, n - 1));
    }
    out.metric = reduction_metric(basis);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(out.metric, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues().minCoeff() > tol.pd)) {
        throw Error(ErrorCode::BasisNotAdapted, "reduction metric is not positive definite");
    }
    return out;
}

inline ReducedSystem reduce(const SwitchedSystem& sys, const Tolerances& tol = default_tolerances()) {
    return reduce(sys, default_basis(sys.dim()), tol);
}

/// z = R S x.
inline Vector reduce_state(const StateVector& x, const ReductionBasis& basis) {
    if (x.size() != basis.dim()) throw Error(ErrorCode::DimensionMismatch, "state length differs from basis");
    return (basis.s() * x).tail(basis.dim() - 1);
}

/// |z|_M^2 = z' M z.
inline double metric_norm_sq(const Vector& z, const Matrix& metric) {
    return z.dot(metric * z);
}

/// W(z) = max_i (Q z)_i - min_i (Q z)_i with Q = S^{-1} minus its first column; equals diameter(x).
inline double lifted_diameter(const Vector& z, const ReductionBasis& basis) {
    return diameter(basis.lift() * z);
}

} // namespace consensus_opt
