#pragma once

/**
 * @file stability.hpp
 * @brief Uniform convergence to consensus (UCC) tests.
 *
 * Graph convention: the digraph of a consensus matrix A has an edge i -> j (i != j) with
 * weight a_ji whenever a_ji is above the threshold. A has a rooted-out branching iff
 * rank(A) = n - 1.
 *
 * For n = 3, r = 2 the decision is exact: the system is UCC iff every matrix in the
 * segment co[A1, A2] has rank 2, i.e. det(alpha Abar1 + (1 - alpha) Abar2) > 0 on [0, 1]
 * for the reduced 2x2 matrices. That determinant is a quadratic in alpha and is checked
 * at the endpoints and at the vertex of the parabola.
 */

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "core.hpp"
#include "reduction.hpp"

namespace consensus_opt {

// ---------------------------------------------------------------------------------------
// Digraphs

struct DigraphEdge {
    Eigen::Index from = 0;
    Eigen::Index to = 0;
    double weight = 0.0;
};

class WeightedDigraph {
public:
    WeightedDigraph() = default;
    WeightedDigraph(Eigen::Index n, std::vector<DigraphEdge> edges) : n_(n), edges_(std::move(edges)) {}

    Eigen::Index size() const noexcept { return n_; }
    const std::vector<DigraphEdge>& edges() const noexcept { return edges_; }

    bool has_edge(Eigen::Index from, Eigen::Index to) const {
        return std::any_of(edges_.begin(), edges_.end(),
                           [&](const DigraphEdge& e) { return e.from == from && e.to == to; });
    }

    /// Nodes reachable from `root` along directed edges (root included).
    std::vector<bool> reachable_from(Eigen::Index root) const {
        std::vector<bool> seen(static_cast<std::size_t>(n_), false);
        std::vector<Eigen::Index> stack{root};
        seen[static_cast<std::size_t>(root)] = true;
        while (!stack.empty()) {
            const Eigen::Index v = stack.back();
            stack.pop_back();
            for (const auto& e : edges_) {
                if (e.from == v && !seen[static_cast<std::size_t>(e.to)]) {
                    seen[static_cast<std::size_t>(e.to)] = true;
                    stack.push_back(e.to);
                }
            }
        }
        return seen;
    }

    /// Some node reaches every other node (graph-search version of the rank test).
    bool has_root() const {
        for (Eigen::Index v = 0; v < n_; ++v) {
            const auto seen = reachable_from(v);
            if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) return true;
        }
        return n_ == 0;
    }

    /// Connected components of the underlying undirected graph, as node lists.
    std::vector<std::vector<Eigen::Index>> weak_components() const {
        std::vector<int> comp(static_cast<std::size_t>(n_), -1);
        std::vector<std::vector<Eigen::Index>> out;
        for (Eigen::Index s = 0; s < n_; ++s) {
            if (comp[static_cast<std::size_t>(s)] >= 0) continue;
            const int id = static_cast<int>(out.size());
            out.emplace_back();
            std::vector<Eigen::Index> stack{s};
            comp[static_cast<std::size_t>(s)] = id;
            while (!stack.empty()) {
                const Eigen::Index v = stack.back();
                stack.pop_back();
                out.back().push_back(v);
                for (const auto& e : edges_) {
                    Eigen::Index w = -1;
                    if (e.from == v) w = e.to;
                    if (e.to == v) w = e.from;
                    if (w >= 0 && comp[static_cast<std::size_t>(w)] < 0) {
                        comp[static_cast<std::size_t>(w)] = id;
                        stack.push_back(w);
                    }
                }
            }
            std::sort(out.back().begin(), out.back().end());
        }
        return out;
    }

private:
    Eigen::Index n_ = 0;
    std::vector<DigraphEdge> edges_;
};

inline WeightedDigraph digraph_of(const Matrix& a, double threshold = 0.0) {
    if (threshold < 0.0) throw Error(ErrorCode::InvalidArgument, "threshold must be nonnegative");
    const Eigen::Index n = a.rows();
    std::vector<DigraphEdge> edges;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i != j && a(j, i) > threshold) edges.push_back({i, j, a(j, i)});
        }
    }
    return {n, std::move(edges)};
}

inline WeightedDigraph digraph_of(const ConsensusMatrix& a, double threshold = 0.0) {
    return digraph_of(a.matrix(), threshold);
}

// ---------------------------------------------------------------------------------------
// Rank test

struct RankTest {
    Eigen::Index rank = 0;
    bool branching = false;
    bool marginal = false; // some singular value within 10x of the threshold
    Vector singular_values;
};

/// Numerical rank with threshold tol.rank * sigma_max; branching iff rank = n - 1.
inline RankTest rank_test(const Matrix& a, const Tolerances& tol = default_tolerances()) {
    RankTest out;
    const Eigen::Index n = a.rows();
    Eigen::JacobiSVD<Matrix> svd(a);
    out.singular_values = svd.singularValues();
    const double smax = n > 0 ? out.singular_values(0) : 0.0;
    if (smax > 0.0) {
        const double cut = tol.rank * smax;
        for (Eigen::Index k = 0; k < n; ++k) {
            const double s = out.singular_values(k);
            if (s > cut) ++out.rank;
            if (s > 0.1 * cut && s < 10.0 * cut) out.marginal = true;
        }
    }
    out.branching = n >= 1 && out.rank == n - 1;
    return out;
}

inline bool has_rooted_out_branching(const ConsensusMatrix& a, const Tolerances& tol = default_tolerances()) {
    return rank_test(a.matrix(), tol).branching;
}

// ---------------------------------------------------------------------------------------
// Quadratics on [0, 1]

/// c0 + c1 a + c2 a^2.
struct Quadratic {
    double c0 = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;

    double operator()(double a) const { return c0 + a * (c1 + a * c2); }

    /// Minimizer over [0, 1]: endpoints and, for an upward parabola, its vertex.
    double argmin_unit() const {
        double best = 0.0;
        double val = (*this)(0.0);
        if ((*this)(1.0) < val) {
            best = 1.0;
            val = (*this)(1.0);
        }
        if (c2 > 0.0) {
            const double v = -c1 / (2.0 * c2);
            if (v > 0.0 && v < 1.0 && (*this)(v) < val) best = v;
        }
        return best;
    }

    double min_unit() const { return (*this)(argmin_unit()); }
};

/// det(X + a Y) for 2x2 X, Y: det X + a tr(adj(X) Y) + a^2 det Y.
inline Quadratic det_quadratic_2x2(const Matrix& x, const Matrix& y) {
    if (x.rows() != 2 || x.cols() != 2 || y.rows() != 2 || y.cols() != 2) {
        throw Error(ErrorCode::DimensionNotTwo, "determinant quadratic needs 2x2 matrices");
    }
    Matrix adj(2, 2);
    adj << x(1, 1), -x(0, 1), -x(1, 0), x(0, 0);
    return {x.determinant(), (adj * y).trace(), y.determinant()};
}

/// det(a Z1 + (1 - a) Z2) as a quadratic in a.
inline Quadratic segment_det(const Matrix& z1, const Matrix& z2) { return det_quadratic_2x2(z2, z1 - z2); }

// ---------------------------------------------------------------------------------------
// n = 3 hull branching

struct HullBranching {
    bool all_branching = false;
    double failure_alpha = 0.0; // argmin of d on [0, 1] when the check fails
    double min_value = 0.0;
    double threshold = 0.0;
    Quadratic det_poly;        // d(a) = det(a Abar1 + (1 - a) Abar2)
    Matrix bar1, bar2;
};

/**
 * @brief Exact check that every matrix in co[A1, A2] has a rooted-out branching (n = 3).
 *
 * Passes iff min_{[0,1]} d > tol.rank * max(||Abar1||, ||Abar2||)^2, the scaled analogue of
 * the relative rank threshold.
 */
inline HullBranching hull_branching_check_n3(const ConsensusMatrix& a1, const ConsensusMatrix& a2,
                                             const Tolerances& tol = default_tolerances()) {
    if (a1.dim() != 3 || a2.dim() != 3) throw Error(ErrorCode::DimensionNotThree, "hull check needs n = 3");
    const auto red = reduce(SwitchedSystem({a1, a2}), tol);
    HullBranching out;
    out.bar1 = red.bar_matrices[0];
    out.bar2 = red.bar_matrices[1];
    out.det_poly = segment_det(out.bar1, out.bar2);
    const double scale = std::max(out.bar1.norm(), out.bar2.norm());
    out.threshold = tol.rank * scale * scale;
    out.failure_alpha = out.det_poly.argmin_unit();
    out.min_value = out.det_poly(out.failure_alpha);
    out.all_branching = out.min_value > out.threshold;
    return out;
}

// ---------------------------------------------------------------------------------------
// 2x2 Hurwitz segments and common quadratic Lyapunov functions

struct SegmentCheck {
    bool hurwitz = false;
    double failing_alpha = 0.0; // meaningful when !hurwitz
    Quadratic det_poly;
    double trace_at_0 = 0.0; // tr Z2
    double trace_at_1 = 0.0; // tr Z1
};

/// Every a Z1 + (1 - a) Z2, a in [0, 1], is Hurwitz (trace < 0 and det > 0).
inline SegmentCheck check_hurwitz_segment_2x2(const Matrix& z1, const Matrix& z2) {
    SegmentCheck out;
    out.det_poly = segment_det(z1, z2);
    out.trace_at_0 = z2.trace();
    out.trace_at_1 = z1.trace();
    if (!(out.trace_at_0 < 0.0)) {
        out.failing_alpha = 0.0;
        return out;
    }
    if (!(out.trace_at_1 < 0.0)) {
        out.failing_alpha = 1.0;
        return out;
    }
    out.failing_alpha = out.det_poly.argmin_unit();
    out.hurwitz = out.det_poly(out.failing_alpha) > 0.0;
    return out;
}

inline bool hurwitz_segment_2x2(const Matrix& z1, const Matrix& z2) {
    return check_hurwitz_segment_2x2(z1, z2).hurwitz;
}

inline bool is_hurwitz_2x2(const Matrix& z) { return z.trace() < 0.0 && z.determinant() > 0.0; }

/// Y with Lyapunov residuals lambda_min(-(Y Z_i + Z_i' Y)), one per subsystem.
struct QuadraticCertificate {
    Matrix y;
    std::vector<double> residuals;
    std::vector<Matrix> q;

    bool valid(double tol_pd) const {
        if (y.size() == 0) return false;
        Eigen::SelfAdjointEigenSolver<Matrix> eig(y, Eigen::EigenvaluesOnly);
        if (!(eig.eigenvalues().minCoeff() > 0.0)) return false;
        return std::all_of(residuals.begin(), residuals.end(), [&](double r) { return r > tol_pd; });
    }

    double min_residual() const {
        return residuals.empty() ? -std::numeric_limits<double>::infinity()
                                 : *std::min_element(residuals.begin(), residuals.end());
    }
};

inline QuadraticCertificate evaluate_certificate(const Matrix& y, const std::vector<Matrix>& zs) {
    QuadraticCertificate c;
    c.y = y;
    for (const auto& z : zs) {
        Matrix q = -(y * z + z.transpose() * y);
        q = 0.5 * (q + q.transpose());
        Eigen::SelfAdjointEigenSolver<Matrix> eig(q, Eigen::EigenvaluesOnly);
        c.residuals.push_back(eig.eigenvalues().minCoeff());
        c.q.push_back(std::move(q));
    }
    return c;
}

struct CqlfResult {
    bool found = false;
    QuadraticCertificate certificate;
    SegmentCheck direct;                 // co[Z1, Z2]
    std::optional<SegmentCheck> inverse; // co[Z1, Z2^-1]; empty when Z2 is numerically singular
    double failing_alpha = 0.0;          // set when a segment condition fails
    bool segment_conditions_hold = false;
};

namespace detail {

inline double cqlf_score(const Matrix& y, const Matrix& z1, const Matrix& z2) {
    const auto c = evaluate_certificate(y, {z1, z2});
    return c.min_residual() / y.trace();
}

/// Y = L L' with L = [[1, 0], [a, b]].
inline Matrix cholesky_param(double a, double log_b) {
    const double b = std::exp(log_b);
    Matrix y(2, 2);
    y << 1.0, a, a, a * a + b * b;
    return y;
}

template <class F>
double golden_max(F f, double lo, double hi, int iters = 80) {
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = hi - g * (hi - lo);
    double b = lo + g * (hi - lo);
    double fa = f(a);
    double fb = f(b);
    for (int k = 0; k < iters; ++k) {
        if (fa > fb) {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    return fa > fb ? a : b;
}

/// Grid scan followed by golden-section refinement around the best grid point.
template <class F>
double scan_max(F f, double lo, double hi, int points) {
    double best = lo;
    double best_val = f(lo);
    const double step = (hi - lo) / (points - 1);
    for (int k = 1; k < points; ++k) {
        const double x = lo + step * k;
        const double v = f(x);
        if (v > best_val) {
            best_val = v;
            best = x;
        }
    }
    const double x = golden_max(f, std::max(lo, best - step), std::min(hi, best + step));
    return f(x) > best_val ? x : best;
}

} // namespace detail

/**
 * @brief Common quadratic Lyapunov function for two Hurwitz 2x2 matrices.
 *
 * Existence is decided by the segment conditions: co[Z1, Z2] and co[Z1, Z2^-1] Hurwitz.
 * When they hold, Y = [[1, y3], [y3, y2]] is searched, diagonal first (log grid in y2),
 * then by coordinate descent over the Cholesky factor, maximizing
 * min_i lambda_min(-(Y Z_i + Z_i' Y)) / tr(Y). The first Y whose residuals all exceed
 * tol.pd is returned.
 */
inline CqlfResult cqlf_search(const Matrix& z1, const Matrix& z2, const Tolerances& tol = default_tolerances()) {
    if (z1.rows() != 2 || z1.cols() != 2 || z2.rows() != 2 || z2.cols() != 2) {
        throw Error(ErrorCode::DimensionNotTwo, "CQLF search needs 2x2 matrices");
    }
    if (!is_hurwitz_2x2(z1) || !is_hurwitz_2x2(z2)) throw Error(ErrorCode::NotHurwitz, "input matrix is not Hurwitz");

    CqlfResult out;
    out.direct = check_hurwitz_segment_2x2(z1, z2);
    if (!out.direct.hurwitz) {
        out.failing_alpha = out.direct.failing_alpha;
        return out;
    }
    if (std::abs(z2.determinant()) >= tol.pd * std::max(1.0, z2.squaredNorm())) {
        out.inverse = check_hurwitz_segment_2x2(z1, z2.inverse());
        if (!out.inverse->hurwitz) {
            out.failing_alpha = out.inverse->failing_alpha;
            return out;
        }
    }
    out.segment_conditions_hold = true;

    auto accept = [&](const Matrix& y) {
        auto cert = evaluate_certificate(y, {z1, z2});
        if (cert.valid(tol.pd)) {
            out.found = true;
            out.certificate = std::move(cert);
            return true;
        }
        return false;
    };

    // diagonal Y = diag(1, 10^s)
    auto diag_score = [&](double s) {
        Matrix y = Matrix::Identity(2, 2);
        y(1, 1) = std::pow(10.0, s);
        return detail::cqlf_score(y, z1, z2);
    };
    const double s_best = detail::scan_max(diag_score, -8.0, 8.0, 161);
    Matrix y_diag = Matrix::Identity(2, 2);
    y_diag(1, 1) = std::pow(10.0, s_best);
    if (accept(y_diag)) return out;

    // general Y by coordinate descent on (a, log b)
    double a = 0.0;
    double lb = 0.5 * std::log(y_diag(1, 1));
    double width_a = 10.0 * std::sqrt(y_diag(1, 1)) + 1.0;
    double width_b = 10.0;
    for (int round = 0; round < 60; ++round) {
        a = detail::scan_max([&](double v) { return detail::cqlf_score(detail::cholesky_param(v, lb), z1, z2); },
                             a - width_a, a + width_a, 41);
        lb = detail::scan_max([&](double v) { return detail::cqlf_score(detail::cholesky_param(a, v), z1, z2); },
                              lb - width_b, lb + width_b, 41);
        if (accept(detail::cholesky_param(a, lb))) return out;
        width_a *= 0.7;
        width_b *= 0.7;
    }
    out.certificate = evaluate_certificate(detail::cholesky_param(a, lb), {z1, z2});
    return out;
}

// ---------------------------------------------------------------------------------------
// UCC decision (n = 3, r = 2)

enum class UCCDecision { UCC, NotUCC };

inline const char* to_string(UCCDecision d) { return d == UCCDecision::UCC ? "UCC" : "NotUCC"; }

struct UCCCertificate {
    CqlfResult cqlf;
    Quadratic hull_det;
};

struct UCCCounterexample {
    double alpha = 0.0;
    Vector control;       // constant control [alpha, 1 - alpha]
    Vector witness_state; // x0 whose disagreement never decays under the constant control
};

struct UCCVerdict {
    UCCDecision decision = UCCDecision::NotUCC;
    HullBranching hull;
    bool marginal = false;
    std::optional<UCCCertificate> certificate;
    std::optional<UCCCounterexample> counterexample;
};

/// Nonzero vector orthogonal to 1_n in the (numerical) null space of `h`, unit length.
inline Vector disagreement_null_vector(const Matrix& h, const Tolerances& tol = default_tolerances()) {
    const Eigen::Index n = h.rows();
    Eigen::JacobiSVD<Matrix> svd(h, Eigen::ComputeFullV);
    const Vector& s = svd.singularValues();
    const double cut = std::max(tol.rank * (n > 0 ? s(0) : 0.0), std::numeric_limits<double>::min());
    const Matrix p = projection_matrix(n);
    Vector best = Vector::Zero(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        if (s(k) > cut && s(0) > 0.0) continue;
        const Vector w = p * svd.matrixV().col(k);
        if (w.norm() > best.norm()) best = w;
    }
    if (best.norm() > 0.0) best /= best.norm();
    return best;
}

/**
 * @brief Exact UCC decision for n = 3, r = 2.
 *
 * UCC iff every matrix in co[A1, A2] has a rooted-out branching. On success the
 * certificate carries a CQLF of the reduced pair; otherwise the counterexample is the
 * constant control at the worst hull weight and a state it cannot drive to consensus.
 */
inline UCCVerdict ucc_decide_n3_r2(const ConsensusMatrix& a1, const ConsensusMatrix& a2,
                                   const Tolerances& tol = default_tolerances()) {
    UCCVerdict v;
    v.hull = hull_branching_check_n3(a1, a2, tol);
    v.marginal = std::abs(v.hull.min_value - v.hull.threshold) < 9.0 * v.hull.threshold ||
                 rank_test(v.hull.failure_alpha * a1.matrix() + (1.0 - v.hull.failure_alpha) * a2.matrix(), tol).marginal;
    if (v.hull.all_branching) {
        v.decision = UCCDecision::UCC;
        v.certificate = UCCCertificate{cqlf_search(v.hull.bar1, v.hull.bar2, tol), v.hull.det_poly};
        return v;
    }
    v.decision = UCCDecision::NotUCC;
    UCCCounterexample cx;
    cx.alpha = v.hull.failure_alpha;
    cx.control = Vector(2);
    cx.control << cx.alpha, 1.0 - cx.alpha;
    cx.witness_state = disagreement_null_vector(cx.alpha * a1.matrix() + (1.0 - cx.alpha) * a2.matrix(), tol);
    v.counterexample = cx;
    return v;
}

inline UCCVerdict ucc_decide_n3_r2(const SwitchedSystem& sys, const Tolerances& tol = default_tolerances()) {
    if (sys.dim() != 3) throw Error(ErrorCode::DimensionNotThree, "exact UCC decision needs n = 3");
    if (sys.size() != 2) throw Error(ErrorCode::RequiresTwoSubsystems, "exact UCC decision needs r = 2");
    return ucc_decide_n3_r2(ConsensusMatrix(sys.matrix(0), tol), ConsensusMatrix(sys.matrix(1), tol), tol);
}

// ---------------------------------------------------------------------------------------
// Sampling screen for general n, r

inline constexpr const char* kScreenDisclaimer =
    "necessary condition only: no rank-deficient hull matrix was sampled, which does not prove UCC";

struct SampleScreen {
    bool obstruction = false;
    Vector weights; // first failing hull weights
    std::size_t checked = 0;
    bool marginal = false;
    std::string disclaimer = kScreenDisclaimer;
};

/**
 * @brief Rank test over hull weights on the simplex lattice {k / (samples - 1)}.
 *
 * Vertices are checked first, then the remaining lattice points in lexicographic order.
 * The lattice resolution is reduced for large r so that at most ~20000 points are visited.
 */
inline SampleScreen ucc_sample_check(const SwitchedSystem& sys, int hull_samples,
                                     const Tolerances& tol = default_tolerances()) {
    if (hull_samples < 2) throw Error(ErrorCode::InvalidArgument, "hull_samples must be >= 2");
    const std::size_t r = sys.size();
    SampleScreen out;
    auto check = [&](const Vector& w) {
        ++out.checked;
        Matrix h = Matrix::Zero(sys.dim(), sys.dim());
        for (std::size_t i = 0; i < r; ++i) h += w(static_cast<Eigen::Index>(i)) * sys.matrix(i);
        const auto rt = rank_test(h, tol);
        out.marginal = out.marginal || rt.marginal;
        if (!rt.branching) {
            out.obstruction = true;
            out.weights = w;
            return true;
        }
        return false;
    };
    for (std::size_t i = 0; i < r; ++i) {
        Vector w = Vector::Zero(static_cast<Eigen::Index>(r));
        w(static_cast<Eigen::Index>(i)) = 1.0;
        if (check(w)) return out;
    }

    int m = hull_samples - 1;
    auto lattice_size = [&](int res) {
        double c = 1.0;
        for (std::size_t k = 1; k < r; ++k) c *= static_cast<double>(res + static_cast<int>(k)) / static_cast<double>(k);
        return c;
    };
    while (m > 1 && lattice_size(m) > 20000.0) --m;

    std::vector<int> parts(r, 0);
    bool stop = false;
    auto rec = [&](auto&& self, std::size_t idx, int remaining) -> void {
        if (stop) return;
        if (idx + 1 == r) {
            parts[idx] = remaining;
            if (std::count(parts.begin(), parts.end(), m) == 1) return; // vertex, already checked
            Vector w(static_cast<Eigen::Index>(r));
            for (std::size_t k = 0; k < r; ++k) w(static_cast<Eigen::Index>(k)) = static_cast<double>(parts[k]) / m;
            stop = check(w);
            return;
        }
        for (int k = remaining; k >= 0 && !stop; --k) {
            parts[idx] = k;
            self(self, idx + 1, remaining - k);
        }
    };
    if (r > 1) rec(rec, 0, m);
    return out;
}

} // namespace consensus_opt
