#pragma once

/**
 * @file optimal_control.hpp
 * @brief Best-case (min V(x(T))) and worst-case (max V(x(T))) switching laws.
 *
 * Both senses are handled as minimization of J = s V(x(T)) with s = +1 (Minimize) or
 * s = -1 (Maximize). The adjoint then ends at lambda(T) = s P x(T), the switching functions
 * are m_i(t) = lambda(t)' A_i x(t), and a necessary condition for optimality is that
 * u_i(t) = 0 wherever m_i(t) is strictly larger than every other m_j(t).
 *
 * Solvers:
 *  - solve_analytic_n2: closed form for two agents.
 *  - solve_bang_bang: vertex sequences x coarse switch-time grid, Nelder-Mead refinement.
 *  - solve_relaxed: conditional-gradient sweep over bin-wise simplex-valued controls.
 *  - constant_control_scan: best constant mixture for r = 2 (diagnostic for singular arcs).
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "dynamics.hpp"
#include "expm.hpp"
#include "nelder_mead.hpp"
#include "reduction.hpp"

namespace consensus_opt {

enum class Sense { Minimize, Maximize };
enum class Method { BangBangGrid, RelaxedSweep, AnalyticN2, ConstantScan };

inline const char* to_string(Sense s) { return s == Sense::Minimize ? "min" : "max"; }

inline const char* to_string(Method m) {
    switch (m) {
    case Method::BangBangGrid: return "BangBangGrid";
    case Method::RelaxedSweep: return "RelaxedSweep";
    case Method::AnalyticN2: return "AnalyticN2";
    case Method::ConstantScan: return "ConstantScan";
    }
    return "Unknown";
}

/// +1 for Minimize, -1 for Maximize.
inline double objective_sign(Sense s) { return s == Sense::Minimize ? 1.0 : -1.0; }

struct OCProblem {
    SwitchedSystem sys;
    StateVector x0;
    double horizon = 1.0;
    Sense sense = Sense::Minimize;

    OCProblem() = default;
    OCProblem(SwitchedSystem system, StateVector initial, double t_final, Sense s)
        : sys(std::move(system)), x0(std::move(initial)), horizon(t_final), sense(s) {
        if (!(horizon > 0.0) || !std::isfinite(horizon)) throw Error(ErrorCode::InvalidArgument, "horizon must be positive");
        if (x0.size() != sys.dim()) throw Error(ErrorCode::DimensionMismatch, "x0 length differs from n");
        if (!x0.allFinite()) throw Error(ErrorCode::NonFinite, "x0 has non-finite entries");
    }

    Eigen::Index dim() const { return sys.dim(); }
    std::size_t inputs() const { return sys.size(); }
    /// J = s V(x(T)) for a terminal state.
    double objective(const Vector& x_final) const { return objective_sign(sense) * consensus_distance(x_final); }
};

/// m_i(t) sampled on the trajectory grid; computed with the sense-adjusted adjoint.
struct SwitchingFunctionPath {
    std::vector<double> times;
    std::vector<Vector> values;
    Sense sense = Sense::Minimize;

    double max_abs() const {
        double m = 0.0;
        for (const auto& v : values) m = std::max(m, v.cwiseAbs().maxCoeff());
        return m;
    }

    /// m_i(t) - m_j(t) at every sample (0-based indices).
    std::vector<double> difference(std::size_t i, std::size_t j) const {
        std::vector<double> out;
        out.reserve(values.size());
        for (const auto& v : values) out.push_back(v(static_cast<Eigen::Index>(i)) - v(static_cast<Eigen::Index>(j)));
        return out;
    }
};

/// Forward state, backward costate and switching functions for one control.
struct ExtremalData {
    Trajectory trajectory;
    AdjointPath adjoint;
    SwitchingFunctionPath switching;
};

struct PeriodicCandidate {
    PiecewiseControl control;
    double cost = 0.0;
};

struct OptimizationReport {
    PiecewiseControl control;
    double cost = 0.0; // V(x(T))
    Trajectory trajectory;
    AdjointPath adjoint;
    SwitchingFunctionPath switching;
    double mp_residual = 0.0;
    Method method = Method::BangBangGrid;
    Sense sense = Sense::Minimize;
    bool non_unique = false;
    bool every_control_optimal = false;
    std::size_t evaluations = 0;
    std::optional<PeriodicCandidate> periodic;
};

// ---------------------------------------------------------------------------------------
// Necessary-condition machinery

inline ExtremalData compute_switching_functions(const OCProblem& prob, const PiecewiseControl& control,
                                                int samples_per_segment = kDefaultSamplesPerSegment) {
    if (std::abs(control.horizon() - prob.horizon) > 1e-12 * std::max(1.0, prob.horizon)) {
        throw Error(ErrorCode::InvalidControl, "control does not span [0, T]");
    }
    const std::span<const Matrix> gens(prob.sys.matrices());
    detail::check_inputs(gens, control);
    const auto flows = detail::segment_flows(gens, control, samples_per_segment);
    ExtremalData out;
    out.trajectory = detail::forward(prob.x0, control, flows, samples_per_segment);
    const Vector terminal = objective_sign(prob.sense) * disagreement_vector(out.trajectory.final_state());
    out.adjoint = detail::backward(terminal, control, flows, samples_per_segment);

    out.switching.times = out.trajectory.times;
    out.switching.sense = prob.sense;
    out.switching.values.reserve(out.trajectory.times.size());
    const auto r = static_cast<Eigen::Index>(prob.inputs());
    for (std::size_t k = 0; k < out.trajectory.times.size(); ++k) {
        Vector m(r);
        for (Eigen::Index i = 0; i < r; ++i) {
            m(i) = out.adjoint.costates[k].dot(prob.sys.matrix(static_cast<std::size_t>(i)) * out.trajectory.states[k]);
        }
        out.switching.values.push_back(std::move(m));
    }
    return out;
}

/**
 * @brief Integrated violation of the switching-function condition.
 *
 * residual = int_0^T sum_i u_i(t) max(0, m_i(t) - min_j m_j(t) - gap) dt with
 * gap = 1e-9 ||m||_inf, by the trapezoid rule inside each control segment. The path must have
 * been computed for `sense` (its adjoint already carries the sign of the objective).
 */
inline double evaluate_mp_residual(const PiecewiseControl& control, const SwitchingFunctionPath& sw, Sense sense) {
    if (sw.sense != sense) throw Error(ErrorCode::InvalidArgument, "switching functions were computed for the other sense");
    if (sw.times.empty()) return 0.0;
    const double gap = 1e-9 * sw.max_abs();
    const auto& bps = control.breakpoints();
    double total = 0.0;
    for (std::size_t j = 0; j < control.segment_count(); ++j) {
        const Vector& u = control.values()[j];
        auto integrand = [&](std::size_t k) {
            const Vector& m = sw.values[k];
            const double lo = m.minCoeff();
            double acc = 0.0;
            for (Eigen::Index i = 0; i < m.size(); ++i) acc += u(i) * std::max(0.0, m(i) - lo - gap);
            return acc;
        };
        const auto first = static_cast<std::size_t>(
            std::distance(sw.times.begin(), std::lower_bound(sw.times.begin(), sw.times.end(), bps[j])));
        const auto last = static_cast<std::size_t>(
            std::distance(sw.times.begin(), std::upper_bound(sw.times.begin(), sw.times.end(), bps[j + 1])));
        for (std::size_t k = first; k + 1 < last; ++k) {
            total += 0.5 * (sw.times[k + 1] - sw.times[k]) * (integrand(k) + integrand(k + 1));
        }
    }
    return total;
}

struct ReducedExtremalData {
    Trajectory trajectory; // z(t)
    AdjointPath adjoint;   // mu(t)
    SwitchingFunctionPath switching;
};

/// Same necessary condition expressed in the reduced coordinates: mu(T) = s M z(T),
/// mu' = -(sum u_i Abar_i)' mu, mbar_i = mu' Abar_i z. Agrees with m_i(t) sample by sample.
inline ReducedExtremalData compute_reduced_mp(const OCProblem& prob, const PiecewiseControl& control,
                                              const ReducedSystem& reduced,
                                              int samples_per_segment = kDefaultSamplesPerSegment) {
    if (reduced.basis.dim() != prob.dim() || reduced.bar_matrices.size() != prob.inputs()) {
        throw Error(ErrorCode::DimensionMismatch, "reduced system does not match the problem");
    }
    const std::span<const Matrix> gens(reduced.bar_matrices);
    detail::check_inputs(gens, control);
    const auto flows = detail::segment_flows(gens, control, samples_per_segment);
    ReducedExtremalData out;
    out.trajectory = detail::forward(reduce_state(prob.x0, reduced.basis), control, flows, samples_per_segment);
    const Vector terminal = objective_sign(prob.sense) * (reduced.metric * out.trajectory.final_state());
    out.adjoint = detail::backward(terminal, control, flows, samples_per_segment);
    out.switching.times = out.trajectory.times;
    out.switching.sense = prob.sense;
    const auto r = static_cast<Eigen::Index>(prob.inputs());
    for (std::size_t k = 0; k < out.trajectory.times.size(); ++k) {
        Vector m(r);
        for (Eigen::Index i = 0; i < r; ++i) {
            m(i) = out.adjoint.costates[k].dot(reduced.bar_matrices[static_cast<std::size_t>(i)] * out.trajectory.states[k]);
        }
        out.switching.values.push_back(std::move(m));
    }
    return out;
}

namespace detail {

inline OptimizationReport assemble_report(const OCProblem& prob, PiecewiseControl control, Method method,
                                          int samples_per_segment) {
    OptimizationReport rep;
    auto ext = compute_switching_functions(prob, control, samples_per_segment);
    rep.cost = consensus_distance(ext.trajectory.final_state());
    rep.mp_residual = evaluate_mp_residual(control, ext.switching, prob.sense);
    rep.control = std::move(control);
    rep.trajectory = std::move(ext.trajectory);
    rep.adjoint = std::move(ext.adjoint);
    rep.switching = std::move(ext.switching);
    rep.method = method;
    rep.sense = prob.sense;
    return rep;
}

inline bool is_consensus_state(const Vector& x) {
    return diameter(x) <= 1e-300 || diameter(x) <= 1e-15 * std::max(1.0, x.cwiseAbs().maxCoeff());
}

} // namespace detail

// ---------------------------------------------------------------------------------------
// n = 2: V(x(T)) = V(x0) exp(2 sum_i tr(A_i) int u_i)

inline OptimizationReport solve_analytic_n2(const OCProblem& prob,
                                            int samples_per_segment = kDefaultSamplesPerSegment) {
    if (prob.dim() != 2) throw Error(ErrorCode::DimensionNotTwo, "closed-form solution needs n = 2");
    const std::size_t r = prob.inputs();
    std::vector<double> traces(r);
    for (std::size_t i = 0; i < r; ++i) traces[i] = prob.sys.matrix(i).trace();

    std::size_t best = 0;
    for (std::size_t i = 1; i < r; ++i) {
        const bool better = prob.sense == Sense::Minimize ? traces[i] < traces[best] : traces[i] > traces[best];
        if (better) best = i;
    }
    bool tie = false;
    for (std::size_t i = 0; i < r; ++i) {
        if (i != best && traces[i] == traces[best]) tie = true;
    }

    auto rep = detail::assemble_report(prob, PiecewiseControl::constant(simplex_vertex(r, best), prob.horizon),
                                       Method::AnalyticN2, samples_per_segment);
    const double v0 = consensus_distance(prob.x0);
    rep.cost = v0 * std::exp(2.0 * traces[best] * prob.horizon);
    rep.every_control_optimal = detail::is_consensus_state(prob.x0) || (r > 1 && [&] {
        return std::all_of(traces.begin(), traces.end(), [&](double t) { return t == traces[0]; });
    }());
    rep.non_unique = tie || rep.every_control_optimal;
    if (detail::is_consensus_state(prob.x0)) rep.cost = 0.0;
    rep.evaluations = 1;
    return rep;
}

// ---------------------------------------------------------------------------------------
// Bang-bang search

/// Switch cap used when the caller does not pick one.
inline int default_max_switches(Eigen::Index n, std::size_t r) { return (n <= 3 && r == 2) ? 4 : 6; }

struct BangBangOptions {
    int max_switches = 4;
    int grid = 32;
    int refine_iters = 200;
    int candidates_per_sequence = 3;
    int refine_restarts = 3;
    bool periodic_search = true;
    int samples_per_segment = kDefaultSamplesPerSegment;
    unsigned long long seed = 0;
};

namespace detail {

struct GridCandidate {
    double objective = std::numeric_limits<double>::infinity();
    std::vector<int> steps; // arc durations in grid steps
};

/// All vertex sequences of length `len` without immediate repeats, lexicographic order.
inline std::vector<std::vector<int>> vertex_sequences(std::size_t r, std::size_t len) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    auto rec = [&](auto&& self) -> void {
        if (cur.size() == len) {
            out.push_back(cur);
            return;
        }
        for (int i = 0; i < static_cast<int>(r); ++i) {
            if (!cur.empty() && cur.back() == i) continue;
            cur.push_back(i);
            self(self);
            cur.pop_back();
        }
    };
    rec(rec);
    return out;
}

/// Best `keep` arc-length compositions of the grid for one vertex sequence.
inline std::vector<GridCandidate> grid_search(const OCProblem& prob, const std::vector<std::vector<Matrix>>& step_exp,
                                              const std::vector<int>& seq, int grid, int keep, std::size_t& evals) {
    const std::size_t len = seq.size();
    std::vector<GridCandidate> best;
    if (static_cast<int>(len) > grid) return best;
    std::vector<Vector> states(len + 1);
    std::vector<int> steps(len, 0);
    states[0] = prob.x0;

    auto offer = [&](double obj) {
        if (static_cast<int>(best.size()) == keep && !(obj < best.back().objective)) return;
        GridCandidate c{obj, steps};
        auto pos = std::upper_bound(best.begin(), best.end(), obj,
                                    [](double v, const GridCandidate& g) { return v < g.objective; });
        best.insert(pos, std::move(c));
        if (static_cast<int>(best.size()) > keep) best.pop_back();
    };

    auto rec = [&](auto&& self, std::size_t depth, int remaining) -> void {
        const auto i = static_cast<std::size_t>(seq[depth]);
        if (depth + 1 == len) {
            steps[depth] = remaining;
            states[depth + 1] = step_exp[i][static_cast<std::size_t>(remaining)] * states[depth];
            ++evals;
            offer(prob.objective(states[depth + 1]));
            return;
        }
        const int arcs_left = static_cast<int>(len - depth - 1);
        for (int m = 1; m <= remaining - arcs_left; ++m) {
            steps[depth] = m;
            states[depth + 1] = step_exp[i][static_cast<std::size_t>(m)] * states[depth];
            self(self, depth + 1, remaining - m);
        }
    };
    rec(rec, 0, grid);
    return best;
}

inline double bang_bang_objective(const OCProblem& prob, const std::vector<int>& seq, const std::vector<double>& taus) {
    const auto u = PiecewiseControl::bang_bang(prob.inputs(), seq, taus, prob.horizon);
    return prob.objective(final_state(prob.sys, prob.x0, u));
}

struct RefinedCandidate {
    double objective = std::numeric_limits<double>::infinity();
    std::vector<int> sequence;
    std::vector<double> switch_times;
};

inline RefinedCandidate refine_switch_times(const OCProblem& prob, const std::vector<int>& seq, std::vector<double> taus,
                                            double initial_step, const BangBangOptions& opt, std::mt19937_64& rng,
                                            std::size_t& evals) {
    RefinedCandidate out{bang_bang_objective(prob, seq, taus), seq, taus};
    ++evals;
    if (taus.empty()) return out;
    const double T = prob.horizon;
    auto f = [&](const std::vector<double>& p) {
        ++evals;
        return bang_bang_objective(prob, seq, p);
    };
    std::uniform_real_distribution<double> jitter(0.5, 1.0);
    NelderMeadOptions nm;
    nm.max_iters = opt.refine_iters;
    nm.diameter_tol = 1e-8 * T;
    double step = initial_step;
    for (int attempt = 0; attempt <= opt.refine_restarts; ++attempt) {
        nm.initial_step = step;
        auto res = nelder_mead(f, out.switch_times, nm);
        std::vector<double> repaired = res.x;
        for (auto& t : repaired) t = std::clamp(t, 0.0, T);
        std::sort(repaired.begin(), repaired.end());
        const double val = f(repaired);
        const bool improved = val < out.objective - 1e-15 * std::max(1.0, std::abs(out.objective));
        if (val <= out.objective) {
            out.objective = val;
            out.switch_times = repaired;
        }
        if (!improved && attempt > 0) break;
        step = initial_step * 0.25 * jitter(rng);
    }
    return out;
}

/// Drops arcs shorter than `min_len` when doing so does not worsen the objective; the
/// removed arc's time is split between its neighbours.
inline RefinedCandidate prune_short_arcs(const OCProblem& prob, RefinedCandidate c, double min_len) {
    bool changed = true;
    while (changed && c.sequence.size() > 1) {
        changed = false;
        std::vector<double> edges{0.0};
        edges.insert(edges.end(), c.switch_times.begin(), c.switch_times.end());
        edges.push_back(prob.horizon);
        for (std::size_t j = 0; j < c.sequence.size() && !changed; ++j) {
            if (edges[j + 1] - edges[j] >= min_len) continue;
            // arcs as (vertex, end time) with arc j removed
            std::vector<std::pair<int, double>> arcs;
            for (std::size_t k = 0; k < c.sequence.size(); ++k) {
                if (k == j) continue;
                double end = edges[k + 1];
                if (k + 1 == j) end = j + 1 == c.sequence.size() ? prob.horizon : 0.5 * (edges[j] + edges[j + 1]);
                if (!arcs.empty() && arcs.back().first == c.sequence[k]) {
                    arcs.back().second = end;
                } else {
                    arcs.emplace_back(c.sequence[k], end);
                }
            }
            std::vector<int> seq;
            std::vector<double> taus;
            for (std::size_t k = 0; k < arcs.size(); ++k) {
                seq.push_back(arcs[k].first);
                if (k + 1 < arcs.size()) taus.push_back(arcs[k].second);
            }
            const double val = bang_bang_objective(prob, seq, taus);
            if (val <= c.objective + 1e-14 * std::max(1.0, std::abs(c.objective))) {
                c = {std::min(val, c.objective), seq, taus};
                changed = true;
            }
        }
    }
    return c;
}

/**
 * Control that starts with vertex v on [0, T1), then alternates 1-v and v with arc lengths
 * T21, T32, T21, T32, ... up to Tf, followed by a final bang arc `last` on [Tf, T].
 */
inline PiecewiseControl periodic_control(int v, int last, double t1, double t21, double t32, double tf, double horizon,
                                         int max_arcs = 64) {
    tf = std::clamp(tf, 0.0, horizon);
    t1 = std::clamp(t1, 0.0, tf);
    const double period = std::max(std::abs(t21) + std::abs(t32), 2.0 * (tf - t1) / max_arcs + 1e-12);
    const double scale = period / std::max(std::abs(t21) + std::abs(t32), 1e-300);
    const double a = std::max(std::abs(t21) * scale, 1e-300);
    const double b = std::max(std::abs(t32) * scale, 1e-300);
    std::vector<int> seq{v};
    std::vector<double> taus;
    double t = t1;
    int cur = v;
    bool use_a = true;
    while (t < tf) {
        taus.push_back(t);
        cur = 1 - cur;
        seq.push_back(cur);
        t += use_a ? a : b;
        use_a = !use_a;
    }
    taus.push_back(tf);
    seq.push_back(last);
    return PiecewiseControl::bang_bang(2, seq, taus, horizon);
}

inline std::optional<PeriodicCandidate> periodic_search(const OCProblem& prob, double incumbent, std::size_t& evals) {
    const double T = prob.horizon;
    std::optional<PeriodicCandidate> best;
    double best_obj = incumbent;
    NelderMeadOptions nm;
    nm.max_iters = 300;
    nm.diameter_tol = 1e-8 * T;
    nm.initial_step = 0.05 * T;
    for (int v = 0; v < 2; ++v) {
        for (int last = 0; last < 2; ++last) {
            for (double frac : {0.125, 0.0625, 0.03125}) {
                auto f = [&](const std::vector<double>& p) {
                    ++evals;
                    const auto u = periodic_control(v, last, p[0], p[1], p[2], p[3], T);
                    return prob.objective(final_state(prob.sys, prob.x0, u));
                };
                const auto res = nelder_mead(f, {0.1 * T, 0.5 * frac * T, 0.5 * frac * T, 0.9 * T}, nm);
                if (res.value < best_obj) {
                    best_obj = res.value;
                    const auto u = periodic_control(v, last, res.x[0], res.x[1], res.x[2], res.x[3], T);
                    best = PeriodicCandidate{u.merged(), consensus_distance(final_state(prob.sys, prob.x0, u))};
                }
            }
        }
    }
    return best;
}

} // namespace detail

/**
 * @brief Best bang-bang control with at most `max_switches` switches.
 *
 * For every vertex sequence (no immediate repeats, length <= max_switches + 1) the switch
 * instants are first searched on the grid {0, T/grid, ..., T} with strictly positive arcs;
 * the best few grid points of each sequence are then refined by Nelder-Mead on the switch
 * instants, with the cost evaluated by exact exponential products. Candidate selection is
 * per sequence, so raising max_switches never yields a worse result.
 *
 * When n = 3, r = 2 and the winner uses every allowed switch, a periodic-after-three-switches
 * family is also searched; its result is attached as `periodic` and does not replace the
 * capped answer.
 */
inline OptimizationReport solve_bang_bang(const OCProblem& prob, const BangBangOptions& opt = {}) {
    if (opt.max_switches < 0) throw Error(ErrorCode::InvalidArgument, "max_switches must be >= 0");
    if (opt.grid < 8) throw Error(ErrorCode::InvalidArgument, "grid must be >= 8");
    const std::size_t r = prob.inputs();
    const double T = prob.horizon;
    std::size_t evals = 0;

    if (detail::is_consensus_state(prob.x0)) {
        auto rep = detail::assemble_report(prob, PiecewiseControl::constant(simplex_vertex(r, 0), T),
                                           Method::BangBangGrid, opt.samples_per_segment);
        rep.every_control_optimal = true;
        rep.cost = 0.0;
        rep.evaluations = 1;
        return rep;
    }

    const double h = T / opt.grid;
    std::vector<std::vector<Matrix>> step_exp(r);
    for (std::size_t i = 0; i < r; ++i) {
        step_exp[i].resize(static_cast<std::size_t>(opt.grid) + 1);
        step_exp[i][0] = Matrix::Identity(prob.dim(), prob.dim());
        for (int m = 1; m <= opt.grid; ++m) {
            step_exp[i][static_cast<std::size_t>(m)] = matrix_exponential(prob.sys.matrix(i), h * m);
        }
    }

    std::mt19937_64 rng(opt.seed);
    detail::RefinedCandidate best;
    const std::size_t max_len = static_cast<std::size_t>(opt.max_switches) + 1;
    for (std::size_t len = 1; len <= max_len; ++len) {
        for (const auto& seq : detail::vertex_sequences(r, len)) {
            const auto grid_best = detail::grid_search(prob, step_exp, seq, opt.grid, opt.candidates_per_sequence, evals);
            for (const auto& cand : grid_best) {
                std::vector<double> taus;
                int acc = 0;
                for (std::size_t k = 0; k + 1 < cand.steps.size(); ++k) {
                    acc += cand.steps[k];
                    taus.push_back(acc * h);
                }
                auto refined = detail::refine_switch_times(prob, seq, taus, 0.5 * h, opt, rng, evals);
                if (refined.objective < best.objective - 1e-14 * std::max(1.0, std::abs(best.objective)) ||
                    best.sequence.empty()) {
                    best = std::move(refined);
                }
            }
        }
    }

    best = detail::prune_short_arcs(prob, best, 1e-9 * T);
    auto control = PiecewiseControl::bang_bang(r, best.sequence, best.switch_times, T);
    auto rep = detail::assemble_report(prob, control, Method::BangBangGrid, opt.samples_per_segment);

    if (opt.periodic_search && prob.dim() == 3 && r == 2 &&
        static_cast<int>(rep.control.switch_count()) >= opt.max_switches && opt.max_switches > 0) {
        rep.periodic = detail::periodic_search(prob, best.objective, evals);
    }
    rep.evaluations = evals;
    return rep;
}

// ---------------------------------------------------------------------------------------
// Relaxed (simplex-valued) controls

struct RelaxedOptions {
    int time_bins = 64;
    int max_iters = 200;
    double tol = 1e-12;
    double armijo = 1e-4;
    int samples_per_segment = 8;
};

/// Bin-wise constant relaxed control on a uniform grid of `values.size()` bins.
inline PiecewiseControl bins_to_control(const std::vector<Vector>& values, double horizon) {
    std::vector<double> bps(values.size() + 1);
    for (std::size_t b = 0; b <= values.size(); ++b) bps[b] = horizon * static_cast<double>(b) / values.size();
    bps.back() = horizon;
    return PiecewiseControl(std::move(bps), values).merged();
}

namespace detail {

inline double relaxed_objective(const OCProblem& prob, const std::vector<Vector>& bins) {
    const double h = prob.horizon / bins.size();
    Vector x = prob.x0;
    for (const auto& u : bins) x = matrix_exponential(system_matrix(prob.sys, u), h) * x;
    return prob.objective(x);
}

} // namespace detail

/**
 * @brief Gradient of J = s V(x(T)) with respect to every bin value u_{b,i}.
 *
 * g_{b,i} = 2 int_{bin b} m_i(t) dt, evaluated exactly: the integral of
 * exp(M (h - s)) A_i exp(M s) over the bin is the upper-right block of the exponential of
 * [[M, A_i], [0, M]] h. The directional derivative for moving bin b towards a is
 * sum_i (a_i - u_{b,i}) g_{b,i}.
 */
inline std::vector<Vector> relaxed_gradient(const OCProblem& prob, const std::vector<Vector>& bins) {
    const std::size_t nb = bins.size();
    const double h = prob.horizon / nb;
    const Eigen::Index n = prob.dim();
    const std::size_t r = prob.inputs();
    std::vector<Matrix> mats(nb);
    std::vector<Matrix> flows(nb);
    std::vector<Vector> xs(nb + 1);
    xs[0] = prob.x0;
    for (std::size_t b = 0; b < nb; ++b) {
        mats[b] = system_matrix(prob.sys, bins[b]);
        flows[b] = matrix_exponential(mats[b], h);
        xs[b + 1] = flows[b] * xs[b];
    }
    Vector lam = objective_sign(prob.sense) * disagreement_vector(xs[nb]);
    std::vector<Vector> grad(nb, Vector::Zero(static_cast<Eigen::Index>(r)));
    Matrix block = Matrix::Zero(2 * n, 2 * n);
    for (std::size_t b = nb; b-- > 0;) {
        block.topLeftCorner(n, n) = mats[b];
        block.bottomRightCorner(n, n) = mats[b];
        for (std::size_t i = 0; i < r; ++i) {
            block.topRightCorner(n, n) = prob.sys.matrix(i);
            const Matrix big = matrix_exponential(block, h);
            grad[b](static_cast<Eigen::Index>(i)) = 2.0 * lam.dot(big.topRightCorner(n, n) * xs[b]);
        }
        lam = flows[b].transpose() * lam;
    }
    return grad;
}

/**
 * @brief Conditional-gradient sweep over bin-wise simplex-valued controls.
 *
 * Starts from the barycenter of the simplex in every bin. Each iteration computes the
 * exact bin gradient, picks the best vertex per bin (argmin_i g_{b,i}), and takes an Armijo
 * step from the current control towards that vertex control. Stops when the predicted
 * decrease or the realized improvement falls below `tol` (relative).
 */
inline OptimizationReport solve_relaxed(const OCProblem& prob, const RelaxedOptions& opt = {}) {
    if (opt.time_bins < 16) throw Error(ErrorCode::InvalidArgument, "time_bins must be >= 16");
    const std::size_t r = prob.inputs();
    const auto nb = static_cast<std::size_t>(opt.time_bins);
    std::vector<Vector> bins(nb, Vector::Constant(static_cast<Eigen::Index>(r), 1.0 / static_cast<double>(r)));
    std::size_t evals = 0;

    double obj = detail::relaxed_objective(prob, bins);
    ++evals;
    if (!detail::is_consensus_state(prob.x0)) {
        for (int it = 0; it < opt.max_iters; ++it) {
            const auto grad = relaxed_gradient(prob, bins);
            std::vector<Vector> dir(nb);
            double slope = 0.0;
            for (std::size_t b = 0; b < nb; ++b) {
                Eigen::Index k = 0;
                grad[b].minCoeff(&k);
                dir[b] = simplex_vertex(r, static_cast<std::size_t>(k)) - bins[b];
                slope += grad[b].dot(dir[b]);
            }
            const double scale = std::max(std::abs(obj), 1e-300);
            if (!(slope < -opt.tol * scale)) break;

            double step = 1.0;
            bool accepted = false;
            std::vector<Vector> trial(nb);
            double trial_obj = obj;
            for (int ls = 0; ls < 40; ++ls) {
                for (std::size_t b = 0; b < nb; ++b) {
                    Vector v = bins[b] + step * dir[b];
                    v = v.cwiseMax(0.0);
                    trial[b] = v / v.sum();
                }
                trial_obj = detail::relaxed_objective(prob, trial);
                ++evals;
                if (trial_obj <= obj + opt.armijo * step * slope) {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) break;
            const double improvement = obj - trial_obj;
            bins = trial;
            obj = trial_obj;
            if (improvement < opt.tol * scale) break;
        }
    }

    auto rep = detail::assemble_report(prob, bins_to_control(bins, prob.horizon), Method::RelaxedSweep,
                                       opt.samples_per_segment);
    rep.evaluations = evals;
    if (detail::is_consensus_state(prob.x0)) {
        rep.cost = 0.0;
        rep.every_control_optimal = true;
    }
    return rep;
}

// ---------------------------------------------------------------------------------------
// Constant mixtures (r = 2)

inline OptimizationReport constant_control_scan(const OCProblem& prob, int grid = 64,
                                                int samples_per_segment = kDefaultSamplesPerSegment) {
    if (prob.inputs() != 2) throw Error(ErrorCode::RequiresTwoSubsystems, "constant scan needs exactly two subsystems");
    if (grid < 2) throw Error(ErrorCode::InvalidArgument, "grid must be >= 2");
    std::size_t evals = 0;
    auto cost_at = [&](double alpha) {
        ++evals;
        const Matrix m = alpha * prob.sys.matrix(0) + (1.0 - alpha) * prob.sys.matrix(1);
        return prob.objective(matrix_exponential(m, prob.horizon) * prob.x0);
    };
    int best_k = 0;
    double best_val = cost_at(0.0);
    for (int k = 1; k <= grid; ++k) {
        const double v = cost_at(static_cast<double>(k) / grid);
        if (v < best_val) {
            best_val = v;
            best_k = k;
        }
    }
    // golden-section refinement on the bracketing cells
    double lo = std::max(0, best_k - 1) / static_cast<double>(grid);
    double hi = std::min(grid, best_k + 1) / static_cast<double>(grid);
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = hi - g * (hi - lo);
    double b = lo + g * (hi - lo);
    double fa = cost_at(a);
    double fb = cost_at(b);
    while (hi - lo > 1e-10) {
        if (fa < fb) {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = cost_at(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = cost_at(b);
        }
    }
    double alpha = 0.5 * (lo + hi);
    if (cost_at(alpha) > best_val) alpha = static_cast<double>(best_k) / grid;

    Vector u(2);
    u << alpha, 1.0 - alpha;
    auto rep = detail::assemble_report(prob, PiecewiseControl::constant(u, prob.horizon), Method::ConstantScan,
                                       samples_per_segment);
    rep.evaluations = evals;
    return rep;
}

// ---------------------------------------------------------------------------------------
// Cross-validation of the two solvers

struct CrossValidation {
    OptimizationReport bang_bang;
    OptimizationReport relaxed;
    /// Relaxed beats the capped bang-bang optimum by more than 1e-4 relative.
    bool singular = false;
    double relative_gap = 0.0;
};

inline CrossValidation solve_both(const OCProblem& prob, const BangBangOptions& bb = {}, const RelaxedOptions& rx = {}) {
    CrossValidation cv;
    cv.bang_bang = solve_bang_bang(prob, bb);
    cv.relaxed = solve_relaxed(prob, rx);
    const double s = objective_sign(prob.sense);
    const double j_bb = s * cv.bang_bang.cost;
    const double j_rx = s * cv.relaxed.cost;
    cv.relative_gap = (j_bb - j_rx) / std::max(std::abs(j_bb), 1e-300);
    cv.singular = cv.relative_gap > 1e-4;
    return cv;
}

} // namespace consensus_opt
