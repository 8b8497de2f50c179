#pragma once

/**
 * @file reference_cases.hpp
 * @brief Published reference problems and the regression harness that replays them.
 *
 * Each fixture returns a list of scalar checks (expected, actual, tolerance). Tolerances are
 * multiplied by Tolerances::regression_scale, so a scale of 0 turns every inexact check
 * into a failure.
 */

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "core.hpp"
#include "dynamics.hpp"
#include "optimal_control.hpp"
#include "reduction.hpp"
#include "stability.hpp"

namespace consensus_opt::reference {

inline Matrix mat(Eigen::Index n, std::initializer_list<double> rows) {
    Matrix m(n, n);
    auto it = rows.begin();
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) m(i, j) = *it++;
    }
    return m;
}

inline Vector vec(std::initializer_list<double> v) {
    Vector x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double e : v) x(i++) = e;
    return x;
}

inline SwitchedSystem system_of(std::initializer_list<Matrix> ms) {
    std::vector<ConsensusMatrix> v;
    for (const auto& m : ms) v.emplace_back(m);
    return SwitchedSystem(std::move(v));
}

// Two agents, tr(A1) = -3 < tr(A2) = -2.
inline SwitchedSystem two_agent_system() {
    return system_of({mat(2, {-2, 2, 1, -1}), mat(2, {-1, 1, 1, -1})});
}
inline OCProblem two_agent_problem() { return {two_agent_system(), vec({1, 3}), 1.0, Sense::Minimize}; }

inline SwitchedSystem three_agent_system() {
    return system_of({mat(3, {-3, 3, 0, 2, -2, 0, 0, 0.01, -0.01}), mat(3, {-2, 2, 0, 1, -1, 0, 0, 0.1, -0.1})});
}
inline OCProblem three_agent_best_case() { return {three_agent_system(), vec({1, 2, 2}), 0.5, Sense::Minimize}; }
inline OCProblem three_agent_worst_case() { return {three_agent_system(), vec({1, 2, 1}), 1.0, Sense::Maximize}; }

inline SwitchedSystem four_agent_system() {
    return system_of({mat(4, {-1, 1, 0, 0, 1, -1, 0, 0, 0, 0, -2, 2, 0, 0, 1, -1}),
                      mat(4, {-1, 0, 0, 1, 0, -1, 1, 0, 0, 2, -2, 0, 1, 0, 0, -1})});
}
inline OCProblem four_agent_best_case() { return {four_agent_system(), vec({1, -1.9, 0.9, -2}), 2.0, Sense::Minimize}; }

inline SwitchedSystem chain_system() {
    return system_of({mat(3, {-1, 1, 0, 0, -1, 1, 0, 0, 0}), mat(3, {0, 0, 0, 1, -1, 0, 0, 1, -1})});
}
inline OCProblem chain_worst_case() { return {chain_system(), vec({2, 1, 0}), 1.0, Sense::Maximize}; }

// ---------------------------------------------------------------------------------------

enum class CheckKind { Near, AtLeast, AtMost };

struct Check {
    std::string label;
    double expected = 0.0;
    double actual = 0.0;
    double tolerance = 0.0;
    CheckKind kind = CheckKind::Near;
    bool passed = false;
};

struct FixtureResult {
    std::string name;
    std::vector<Check> checks;
    double seconds = 0.0;
    std::string error; // exception text if the fixture threw

    bool passed() const {
        if (!error.empty()) return false;
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
    }
};

class CheckList {
public:
    explicit CheckList(double scale) : scale_(scale) {}

    void near(std::string label, double expected, double actual, double tol) {
        add(std::move(label), expected, actual, tol, CheckKind::Near);
    }
    void at_least(std::string label, double bound, double actual, double slack = 0.0) {
        add(std::move(label), bound, actual, slack, CheckKind::AtLeast);
    }
    void at_most(std::string label, double bound, double actual, double slack = 0.0) {
        add(std::move(label), bound, actual, slack, CheckKind::AtMost);
    }
    /// Boolean condition; not affected by the tolerance scale.
    void holds(std::string label, bool value) {
        Check c{std::move(label), 1.0, value ? 1.0 : 0.0, 0.0, CheckKind::Near, value};
        checks_.push_back(std::move(c));
    }

    std::vector<Check> take() { return std::move(checks_); }

private:
    void add(std::string label, double expected, double actual, double tol, CheckKind kind) {
        const double t = tol * scale_;
        bool ok = false;
        switch (kind) {
        case CheckKind::Near: ok = std::abs(actual - expected) <= t; break;
        case CheckKind::AtLeast: ok = actual >= expected - t; break;
        case CheckKind::AtMost: ok = actual <= expected + t; break;
        }
        if (!std::isfinite(actual)) ok = false;
        checks_.push_back({std::move(label), expected, actual, tol * scale_, kind, ok});
    }

    double scale_;
    std::vector<Check> checks_;
};

/// Number of interior samples of segment j where the sign of `m` differs from `sign[j]`.
inline int sign_violations(const std::vector<double>& times, const std::vector<double>& m,
                           const std::vector<double>& breakpoints, const std::vector<int>& sign) {
    int bad = 0;
    for (std::size_t k = 0; k < times.size(); ++k) {
        const double t = times[k];
        for (std::size_t j = 0; j + 1 < breakpoints.size(); ++j) {
            if (t > breakpoints[j] && t < breakpoints[j + 1]) {
                if (m[k] * sign[j] <= 0.0) ++bad;
                break;
            }
        }
    }
    return bad;
}

inline double relative_mp_residual(const OptimizationReport& rep, double horizon) {
    const double scale = horizon * rep.switching.max_abs();
    return scale > 0.0 ? rep.mp_residual / scale : rep.mp_residual;
}

inline FixtureResult fixture_two_agents(const Tolerances& tol) {
    CheckList c(tol.regression_scale);
    const auto prob = two_agent_problem();
    const auto rep = solve_analytic_n2(prob);
    c.holds("constant control e1", rep.control.segment_count() == 1 && rep.control.values()[0](0) == 1.0);
    const double closed = consensus_distance(prob.x0) * std::exp(2.0 * -3.0 * prob.horizon);
    c.near("closed-form cost", closed, rep.cost, 1e-12 * closed);
    c.near("propagated cost", closed, consensus_distance(rep.trajectory.final_state()), 1e-9 * closed);
    const Vector xt = rep.trajectory.final_state();
    const double d2 = (xt(0) - xt(1)) * (xt(0) - xt(1));
    for (std::size_t i = 0; i < 2; ++i) {
        const double expected = prob.sys.matrix(i).trace() * d2 / 2.0;
        double worst = 0.0;
        for (const auto& m : rep.switching.values) worst = std::max(worst, std::abs(m(static_cast<Eigen::Index>(i)) - expected));
        c.near("m" + std::to_string(i + 1) + " constant at tr(A)(x1-x2)^2/2", 0.0, worst, 1e-9 * std::abs(expected));
    }
    c.near("mp residual", 0.0, rep.mp_residual, 1e-15);
    const auto consensus = solve_analytic_n2({two_agent_system(), vec({4, 4}), 1.0, Sense::Minimize});
    c.holds("consensus start: every control optimal", consensus.every_control_optimal && consensus.cost == 0.0);
    const auto tied = solve_analytic_n2(
        {system_of({mat(2, {-1, 1, 1, -1}), mat(2, {-2, 2, 0, 0})}), vec({0, 1}), 1.0, Sense::Minimize});
    c.holds("equal traces: non-unique", tied.non_unique);
    const auto worst = solve_analytic_n2({two_agent_system(), vec({1, 3}), 1.0, Sense::Maximize});
    c.holds("worst case picks larger trace", worst.control.values()[0](1) == 1.0);
    return {"example1", c.take(), 0.0, {}};
}

inline FixtureResult fixture_three_agents_best(const Tolerances& tol) {
    CheckList c(tol.regression_scale);
    const auto prob = three_agent_best_case();
    const double tau = 0.264834;
    const std::vector<int> seq{1, 0};
    const std::vector<double> taus{tau};
    const auto paper_u = PiecewiseControl::bang_bang(2, seq, taus, prob.horizon);
    const Vector x = final_state(prob.sys, prob.x0, paper_u);
    const Vector expected = vec({1.552900, 1.692310, 1.996691});
    for (Eigen::Index i = 0; i < 3; ++i) c.near("x(T)[" + std::to_string(i + 1) + "]", expected(i), x(i), 1e-5);
    c.near("V(x(T)) at published switch", 0.103011, consensus_distance(x), 1e-5);
    c.near("baseline A1 only", 0.113772, consensus_distance(matrix_exponential(prob.sys.matrix(0), prob.horizon) * prob.x0), 1e-5);
    c.near("baseline A2 only", 0.112562, consensus_distance(matrix_exponential(prob.sys.matrix(1), prob.horizon) * prob.x0), 1e-5);

    const auto ext = compute_switching_functions(prob, paper_u);
    c.at_most("published control mp residual / (T |m|)", 1e-6,
              evaluate_mp_residual(paper_u, ext.switching, prob.sense) / (prob.horizon * ext.switching.max_abs()));

    BangBangOptions opt;
    opt.max_switches = default_max_switches(prob.dim(), prob.inputs());
    const auto rep = solve_bang_bang(prob, opt);
    c.near("solver switch count", 1.0, static_cast<double>(rep.control.switch_count()), 0.0);
    const auto sw = rep.control.switch_times();
    c.near("solver tau", tau, sw.empty() ? 0.0 : sw[0], 1e-3);
    c.holds("solver starts with A2", rep.control.values()[0](1) == 1.0);
    c.near("solver cost", 0.103011, rep.cost, 1e-4);
    c.at_most("solver mp residual / (T |m|)", 1e-4, relative_mp_residual(rep, prob.horizon));

    const auto red = reduce(prob.sys);
    const auto rmp = compute_reduced_mp(prob, rep.control, red);
    double diff = 0.0;
    for (std::size_t k = 0; k < rmp.switching.values.size(); ++k) {
        diff = std::max(diff, (rmp.switching.values[k] - rep.switching.values[k]).cwiseAbs().maxCoeff());
    }
    c.at_most("reduced switching functions match / |m|", 1e-8, diff / rep.switching.max_abs());
    return {"example2", c.take(), 0.0, {}};
}

inline FixtureResult fixture_four_agents(const Tolerances& tol) {
    CheckList c(tol.regression_scale);
    const auto prob = four_agent_best_case();
    const std::vector<int> seq{1, 0, 1};
    const std::vector<double> taus{0.102230, 1.116872};
    const auto paper_u = PiecewiseControl::bang_bang(2, seq, taus, prob.horizon);
    const Vector x = final_state(prob.sys, prob.x0, paper_u);
    const Vector expected = vec({-0.614905, -0.721797, -0.744670, -0.740963});
    for (Eigen::Index i = 0; i < 4; ++i) c.near("x(T)[" + std::to_string(i + 1) + "]", expected(i), x(i), 1e-5);
    c.near("V(x(T)) at published switches", 0.011265, consensus_distance(x), 1e-5);

    // m = m1 - m2 must be positive where A2 is used and negative where A1 is used
    const auto ext = compute_switching_functions(prob, paper_u);
    const auto m = ext.switching.difference(0, 1);
    c.near("sign pattern violations of m1-m2 (+,-,+)", 0.0,
           sign_violations(ext.switching.times, m, paper_u.breakpoints(), {+1, -1, +1}), 0.0);

    BangBangOptions opt;
    opt.max_switches = default_max_switches(prob.dim(), prob.inputs());
    const auto rep = solve_bang_bang(prob, opt);
    const auto sw = rep.control.switch_times();
    c.near("solver switch count", 2.0, static_cast<double>(sw.size()), 0.0);
    c.near("solver tau1", taus[0], sw.size() > 0 ? sw[0] : 0.0, 2e-3);
    c.near("solver tau2", taus[1], sw.size() > 1 ? sw[1] : 0.0, 2e-3);
    c.near("solver cost", 0.011265, rep.cost, 1e-4);
    c.at_most("solver mp residual / (T |m|)", 1e-4, relative_mp_residual(rep, prob.horizon));
    return {"example3", c.take(), 0.0, {}};
}

inline FixtureResult fixture_cqlf(const Tolerances& tol) {
    CheckList c(tol.regression_scale);
    const double exact = 1e-12;
    c.near("M (n=2)", 0.5, reduction_metric(default_basis(2))(0, 0), exact);
    const Matrix m3 = reduction_metric(default_basis(3));
    const Matrix m3_expected = mat(2, {2.0 / 3, 1.0 / 3, 1.0 / 3, 2.0 / 3});
    for (Eigen::Index i = 0; i < 2; ++i) {
        for (Eigen::Index j = 0; j < 2; ++j) {
            c.near("M (n=3)(" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")", m3_expected(i, j), m3(i, j), exact);
        }
    }
    const auto sys = three_agent_system();
    const auto red = reduce(sys);
    const Matrix bar1 = mat(2, {-5, 0, 2, -0.01});
    const Matrix bar2 = mat(2, {-3, 0, 1, -0.1});
    for (Eigen::Index i = 0; i < 2; ++i) {
        for (Eigen::Index j = 0; j < 2; ++j) {
            const std::string at = "(" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")";
            c.near("bar-A1" + at, bar1(i, j), red.bar_matrices[0](i, j), exact);
            c.near("bar-A2" + at, bar2(i, j), red.bar_matrices[1](i, j), exact);
        }
    }

    const Matrix y = mat(2, {100, 0, 0, 4});
    const auto cert = evaluate_certificate(y, red.bar_matrices);
    const Matrix q1 = mat(2, {1000, -8, -8, 0.08});
    const Matrix q2 = mat(2, {600, -4, -4, 0.8});
    for (Eigen::Index i = 0; i < 2; ++i) {
        for (Eigen::Index j = 0; j < 2; ++j) {
            const std::string at = "(" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")";
            c.near("Q1" + at, q1(i, j), cert.q[0](i, j), 1e-10);
            c.near("Q2" + at, q2(i, j), cert.q[1](i, j), 1e-10);
        }
    }
    c.at_least("lambda_min(Q1)", tol.pd, cert.residuals[0]);
    c.at_least("lambda_min(Q2)", tol.pd, cert.residuals[1]);
    c.holds("diag(100,4) is a valid certificate", cert.valid(tol.pd));

    const auto verdict = ucc_decide_n3_r2(sys, tol);
    c.holds("hull has rooted-out branching everywhere", verdict.hull.all_branching);
    c.holds("verdict UCC", verdict.decision == UCCDecision::UCC);
    c.holds("CQLF search succeeds", verdict.certificate && verdict.certificate->cqlf.found);
    return {"cqlf", c.take(), 0.0, {}};
}

inline FixtureResult fixture_three_agents_worst(const Tolerances& tol) {
    CheckList c(tol.regression_scale);
    const auto prob = three_agent_worst_case();
    const double tau = 0.346429;
    const std::vector<int> seq{1, 0};
    const std::vector<double> taus{tau};
    const auto paper_u = PiecewiseControl::bang_bang(2, seq, taus, prob.horizon);
    const Vector x = final_state(prob.sys, prob.x0, paper_u);
    const Vector expected = vec({1.635003, 1.648475, 1.034004});
    for (Eigen::Index i = 0; i < 3; ++i) c.near("x(T)[" + std::to_string(i + 1) + "]", expected(i), x(i), 1e-5);
    c.near("V(x(T)) at published switch", 0.246319, consensus_distance(x), 1e-4);
    c.near("baseline A1 only", 0.234114, consensus_distance(matrix_exponential(prob.sys.matrix(0), prob.horizon) * prob.x0), 1e-5);
    c.near("baseline A2 only", 0.229467, consensus_distance(matrix_exponential(prob.sys.matrix(1), prob.horizon) * prob.x0), 1e-5);

    const auto ext = compute_switching_functions(prob, paper_u);
    const auto m = ext.switching.difference(0, 1);
    c.near("sign pattern violations of m1-m2 (+,-)", 0.0,
           sign_violations(ext.switching.times, m, paper_u.breakpoints(), {+1, -1}), 0.0);

    BangBangOptions opt;
    opt.max_switches = default_max_switches(prob.dim(), prob.inputs());
    const auto rep = solve_bang_bang(prob, opt);
    const auto sw = rep.control.switch_times();
    c.near("solver switch count", 1.0, static_cast<double>(sw.size()), 0.0);
    c.near("solver tau", tau, sw.empty() ? 0.0 : sw[0], 1e-3);
    c.holds("solver starts with A2", rep.control.values()[0](1) == 1.0);
    c.near("solver cost", 0.246319, rep.cost, 1e-4);
    c.at_most("solver mp residual / (T |m|)", 1e-4, relative_mp_residual(rep, prob.horizon));
    return {"example7", c.take(), 0.0, {}};
}

inline FixtureResult fixture_singular(const Tolerances& tol) {
    CheckList c(tol.regression_scale);
    const auto prob = chain_worst_case();
    BangBangOptions opt;
    opt.max_switches = 2;
    opt.periodic_search = false;
    const auto cv = solve_both(prob, opt, RelaxedOptions{});
    const auto& bb = cv.bang_bang;
    c.near("best bang-bang cost (<= 2 switches)", 0.72918, bb.cost, 1e-4);
    const auto sw = bb.control.switch_times();
    c.near("bang-bang t1", 0.2570, sw.size() > 0 ? sw[0] : 0.0, 5e-3);
    c.near("bang-bang middle arc t2", 0.4615, sw.size() > 1 ? sw[1] - sw[0] : 0.0, 5e-3);

    const auto& rx = cv.relaxed;
    const double two_over_e = 2.0 * std::exp(-1.0);
    c.at_least("relaxed cost", two_over_e, rx.cost, 1e-3);

    const auto scan = constant_control_scan(prob);
    c.near("constant scan alpha", 0.5, scan.control.values()[0](0), 1e-3);
    c.near("constant scan cost", two_over_e, scan.cost, 1e-5);

    c.holds("singular flag (relaxed beats bang-bang by > 1e-4)", cv.singular);
    return {"example8", c.take(), 0.0, {}};
}

struct Fixture {
    std::string name;
    std::function<FixtureResult(const Tolerances&)> run;
};

inline const std::vector<Fixture>& fixtures() {
    static const std::vector<Fixture> all{
        {"example1", fixture_two_agents},         {"example2", fixture_three_agents_best},
        {"example3", fixture_four_agents},        {"cqlf", fixture_cqlf},
        {"example7", fixture_three_agents_worst}, {"example8", fixture_singular},
    };
    return all;
}

inline FixtureResult run_fixture(const Fixture& f, const Tolerances& tol) {
    const auto start = std::chrono::steady_clock::now();
    FixtureResult res;
    try {
        res = f.run(tol);
    } catch (const std::exception& e) {
        res.name = f.name;
        res.error = e.what();
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

} // namespace consensus_opt::reference
