#pragma once

/**
 * @file core.hpp
 * @brief Consensus matrices, switched families and the distance-to-consensus functionals.
 *
 * A consensus matrix is a Metzler matrix (nonnegative off-diagonal entries) whose rows
 * sum to zero. Its flow fixes every point of span{1_n}. Everything downstream works with
 * dense double-precision Eigen matrices; the intended dimensions are small (n <= 10).
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "config.hpp"
#include "error.hpp"

namespace consensus_opt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
/// Agent states x in R^n.
using StateVector = Eigen::VectorXd;

/**
 * @brief Validated consensus matrix.
 *
 * Construction checks the Metzler property and the zero row sums, then clamps tiny negative
 * off-diagonal noise to zero and resets each diagonal entry to minus the off-diagonal row
 * sum, so that A * 1_n == 0 holds exactly in floating point.
 */
class ConsensusMatrix {
public:
    ConsensusMatrix() = default;

    explicit ConsensusMatrix(const Matrix& raw, const Tolerances& tol = default_tolerances()) {
        if (raw.rows() != raw.cols() || raw.rows() == 0) {
            throw Error(ErrorCode::NotSquare, "consensus matrix must be square and non-empty");
        }
        if (!raw.allFinite()) {
            throw Error(ErrorCode::NonFinite, "consensus matrix has non-finite entries");
        }
        const Eigen::Index n = raw.rows();
        const double scale = std::max(1.0, raw.cwiseAbs().maxCoeff());
        const double slack = tol.row * scale;

        entries_ = raw;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                if (i == j) continue;
                if (raw(i, j) < -slack) {
                    std::ostringstream os;
                    os << "entry (" << i + 1 << "," << j + 1 << ") = " << raw(i, j) << " is negative";
                    throw Error(ErrorCode::NegativeOffDiagonal, os.str(), i, j);
                }
            }
            const double row_sum = raw.row(i).sum();
            if (std::abs(row_sum) > slack) {
                std::ostringstream os;
                os << "row " << i + 1 << " sums to " << row_sum;
                throw Error(ErrorCode::RowSumViolation, os.str(), i, -1);
            }
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            double off = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (i == j) continue;
                entries_(i, j) = std::max(0.0, entries_(i, j));
                off += entries_(i, j);
            }
            entries_(i, i) = -off;
        }
    }

    Eigen::Index dim() const noexcept { return entries_.rows(); }
    const Matrix& matrix() const noexcept { return entries_; }
    double operator()(Eigen::Index i, Eigen::Index j) const { return entries_(i, j); }

private:
    Matrix entries_;
};

inline ConsensusMatrix validate_consensus_matrix(const Matrix& raw,
                                                 const Tolerances& tol = default_tolerances()) {
    return ConsensusMatrix(raw, tol);
}

/// Ordered family {A_1, ..., A_r} of consensus matrices of common dimension n.
class SwitchedSystem {
public:
    SwitchedSystem() = default;

    explicit SwitchedSystem(std::vector<ConsensusMatrix> subsystems) {
        if (subsystems.empty()) {
            throw Error(ErrorCode::EmptySystem, "a switched system needs at least one subsystem");
        }
        const Eigen::Index n = subsystems.front().dim();
        generators_.reserve(subsystems.size());
        for (const auto& a : subsystems) {
            if (a.dim() != n) {
                throw Error(ErrorCode::DimensionMismatch, "subsystems must share the same dimension");
            }
            generators_.push_back(a.matrix());
        }
    }

    /// Validates every raw matrix and assembles the family.
    static SwitchedSystem from_raw(std::span<const Matrix> raws, const Tolerances& tol = default_tolerances()) {
        std::vector<ConsensusMatrix> mats;
        mats.reserve(raws.size());
        for (const auto& m : raws) mats.emplace_back(m, tol);
        return SwitchedSystem(std::move(mats));
    }

    Eigen::Index dim() const noexcept { return generators_.empty() ? 0 : generators_.front().rows(); }
    std::size_t size() const noexcept { return generators_.size(); }
    const Matrix& matrix(std::size_t i) const { return generators_.at(i); }
    const std::vector<Matrix>& matrices() const noexcept { return generators_; }

private:
    std::vector<Matrix> generators_;
};

/// P = I - (1/n) 1 1'.
inline Matrix projection_matrix(Eigen::Index n) {
    return Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
}

inline double average(const StateVector& x) { return x.mean(); }

/// delta(x) = x - Ave(x) 1_n = P x.
inline StateVector disagreement_vector(const StateVector& x) {
    return (x.array() - x.mean()).matrix();
}

/// V(x) = sum_i (x_i - Ave(x))^2 = x' P x.
inline double consensus_distance(const StateVector& x) {
    return disagreement_vector(x).squaredNorm();
}

/// max_i x_i - min_i x_i; non-increasing along any consensus flow.
inline double diameter(const StateVector& x) {
    if (x.size() == 0) return 0.0;
    return x.maxCoeff() - x.minCoeff();
}

/// Permutation given as a 0-based image list: agent i is relabelled perm[i].
inline Matrix permutation_matrix(std::span<const int> perm) {
    const auto n = static_cast<Eigen::Index>(perm.size());
    std::vector<bool> seen(perm.size(), false);
    for (int p : perm) {
        if (p < 0 || p >= n || seen[static_cast<std::size_t>(p)]) {
            throw Error(ErrorCode::InvalidPermutation, "not a permutation of 0..n-1");
        }
        seen[static_cast<std::size_t>(p)] = true;
    }
    Matrix g = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) g(perm[static_cast<std::size_t>(i)], i) = 1.0;
    return g;
}

/// Relabels the agents: every A_i becomes G A_i G' where G is the permutation matrix of `perm`.
inline SwitchedSystem permute_system(const SwitchedSystem& sys, std::span<const int> perm) {
    if (static_cast<Eigen::Index>(perm.size()) != sys.dim()) {
        throw Error(ErrorCode::InvalidPermutation, "permutation length differs from system dimension");
    }
    const Matrix g = permutation_matrix(perm);
    std::vector<ConsensusMatrix> out;
    out.reserve(sys.size());
    for (const auto& a : sys.matrices()) out.emplace_back(g * a * g.transpose());
    return SwitchedSystem(std::move(out));
}

} // namespace consensus_opt
