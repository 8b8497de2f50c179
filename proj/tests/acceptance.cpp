// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <random>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "consensus_opt/consensus_opt.hpp"
#include "consensus_opt/reference_cases.hpp"
#include "test_support.hpp"

using namespace consensus_opt;
using reference::mat;
using reference::vec;

namespace {

struct Criterion {
    std::vector<std::string> failures;
    void near(const std::string& what, double expected, double actual, double tol) {
        if (!(std::abs(actual - expected) <= tol)) {
            std::ostringstream os;
            os.precision(10);
            os << what << ": expected " << expected << " +- " << tol << ", got " << actual;
            failures.push_back(os.str());
        }
    }
    void holds(const std::string& what, bool ok) {
        if (!ok) failures.push_back(what);
    }
};

int report(int id, const std::string& title, const std::function<void(Criterion&)>& body) {
    Criterion c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(c);
    } catch (const std::exception& e) {
        c.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %d %s (%.2f s)\n", c.failures.empty() ? "PASS" : "FAIL", id, title.c_str(), secs);
    for (const auto& f : c.failures) std::printf("     %s\n", f.c_str());
    std::fflush(stdout);
    return c.failures.empty() ? 0 : 1;
}

double baseline(const OCProblem& p, std::size_t i) {
    return consensus_distance(matrix_exponential(p.sys.matrix(i), p.horizon) * p.x0);
}

// m1 - m2 must have sign[j] at every sample strictly inside segment j.
void sign_pattern(Criterion& c, const OCProblem& prob, const PiecewiseControl& u, const std::vector<int>& sign) {
    const auto ext = compute_switching_functions(prob, u);
    const auto m = ext.switching.difference(0, 1);
    c.holds("sign pattern of m1 - m2",
            reference::sign_violations(ext.switching.times, m, u.breakpoints(), sign) == 0);
}

BangBangOptions default_options(const OCProblem& p) {
    BangBangOptions o;
    o.max_switches = default_max_switches(p.dim(), p.inputs());
    return o;
}

void criterion1(Criterion& c) {
    const auto prob = reference::three_agent_best_case();
    const std::vector<int> seq{1, 0};
    const std::vector<double> taus{0.264834};
    const auto u = PiecewiseControl::bang_bang(2, seq, taus, prob.horizon);
    const Vector x = final_state(prob.sys, prob.x0, u);
    const Vector expected = vec({1.552900, 1.692310, 1.996691});
    for (Eigen::Index i = 0; i < 3; ++i) c.near("x(0.5)[" + std::to_string(i + 1) + "]", expected(i), x(i), 1e-5);
    c.near("V(x(0.5))", 0.103011, consensus_distance(x), 1e-5);
    const auto rep = solve_bang_bang(prob, default_options(prob));
    const auto sw = rep.control.switch_times();
    c.holds("solver finds one switch", sw.size() == 1);
    c.near("solver tau", 0.264834, sw.empty() ? -1.0 : sw[0], 1e-3);
    c.near("solver cost", 0.103011, rep.cost, 1e-4);
    c.near("baseline A1", 0.113772, baseline(prob, 0), 1e-5);
    c.near("baseline A2", 0.112562, baseline(prob, 1), 1e-5);
}

void criterion2(Criterion& c) {
    const auto prob = reference::four_agent_best_case();
    const std::vector<int> seq{1, 0, 1};
    const std::vector<double> taus{0.102230, 1.116872};
    const auto u = PiecewiseControl::bang_bang(2, seq, taus, prob.horizon);
    const Vector x = final_state(prob.sys, prob.x0, u);
    const Vector expected = vec({-0.614905, -0.721797, -0.744670, -0.740963});
    for (Eigen::Index i = 0; i < 4; ++i) c.near("x(2)[" + std::to_string(i + 1) + "]", expected(i), x(i), 1e-5);
    c.near("V(x(2))", 0.011265, consensus_distance(x), 1e-5);
    sign_pattern(c, prob, u, {+1, -1, +1});
    const auto rep = solve_bang_bang(prob, default_options(prob));
    const auto sw = rep.control.switch_times();
    c.holds("solver finds two switches", sw.size() == 2);
    c.near("solver tau1", taus[0], sw.size() > 0 ? sw[0] : -1.0, 2e-3);
    c.near("solver tau2", taus[1], sw.size() > 1 ? sw[1] : -1.0, 2e-3);
}

void criterion3(Criterion& c) {
    const auto prob = reference::three_agent_worst_case();
    const std::vector<int> seq{1, 0};
    const std::vector<double> taus{0.346429};
    const auto u = PiecewiseControl::bang_bang(2, seq, taus, prob.horizon);
    sign_pattern(c, prob, u, {+1, -1});
    const auto rep = solve_bang_bang(prob, default_options(prob));
    const auto sw = rep.control.switch_times();
    c.holds("solver finds one switch", sw.size() == 1);
    c.near("solver tau", 0.346429, sw.empty() ? -1.0 : sw[0], 1e-3);
    c.near("solver V", 0.246319, rep.cost, 1e-4);
    c.near("V at published tau", 0.246319, consensus_distance(final_state(prob.sys, prob.x0, u)), 1e-4);
    c.near("baseline A1", 0.234114, baseline(prob, 0), 1e-5);
    c.near("baseline A2", 0.229467, baseline(prob, 1), 1e-5);
}

void criterion4(Criterion& c) {
    const auto prob = reference::chain_worst_case();
    BangBangOptions bb;
    bb.max_switches = 2;
    bb.periodic_search = false;
    const auto cv = solve_both(prob, bb, RelaxedOptions{});
    c.near("bang-bang cost", 0.72918, cv.bang_bang.cost, 1e-4);
    const auto sw = cv.bang_bang.control.switch_times();
    c.holds("bang-bang uses two switches", sw.size() == 2);
    c.near("t1", 0.2570, sw.size() > 0 ? sw[0] : -1.0, 5e-3);
    c.near("t2 (second arc length)", 0.4615, sw.size() > 1 ? sw[1] - sw[0] : -1.0, 5e-3);
    c.holds("relaxed cost >= 0.73576 - 1e-3", cv.relaxed.cost >= 0.73576 - 1e-3);
    const auto scan = constant_control_scan(prob);
    c.near("constant alpha", 0.5, scan.control.values()[0](0), 1e-3);
    c.near("constant cost", 2.0 * std::exp(-1.0), scan.cost, 1e-5);
    c.holds("singular flag", cv.singular);
}

void criterion5(Criterion& c) {
    const double exact = 1e-12;
    c.near("M (n=2)", 0.5, reduction_metric(default_basis(2))(0, 0), exact);
    const Matrix m3 = reduction_metric(default_basis(3));
    c.holds("M (n=3) = [[2,1],[1,2]]/3", (m3 - mat(2, {2, 1, 1, 2}) / 3.0).cwiseAbs().maxCoeff() <= exact);
    const auto red = reduce(reference::three_agent_system());
    c.holds("bar-A1", (red.bar_matrices[0] - mat(2, {-5, 0, 2, -0.01})).cwiseAbs().maxCoeff() <= exact);
    c.holds("bar-A2", (red.bar_matrices[1] - mat(2, {-3, 0, 1, -0.1})).cwiseAbs().maxCoeff() <= exact);

    std::mt19937_64 rng(501);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const Eigen::Index n = 2 + k % 7;
        const auto sys = testing_support::random_system(rng, n, 2 + k % 2);
        const auto rs = reduce(sys);
        const Vector x0 = testing_support::random_state(rng, n);
        const auto u = testing_support::random_control(rng, sys.size(), testing_support::moderate_horizon(rng, sys));
        const auto full = propagate(sys, x0, u, 8);
        const auto part = propagate(std::span<const Matrix>(rs.bar_matrices), reduce_state(x0, rs.basis), u, 8);
        for (std::size_t s = 0; s < full.states.size(); ++s) {
            const double v = consensus_distance(full.states[s]);
            worst = std::max(worst, std::abs(metric_norm_sq(part.states[s], rs.metric) - v) / v);
        }
    }
    c.holds("V = z'Mz within 1e-9 relative", worst <= 1e-9);
}

void criterion6(Criterion& c) {
    const auto red = reduce(reference::three_agent_system());
    const auto cert = evaluate_certificate(mat(2, {100, 0, 0, 4}), red.bar_matrices);
    c.holds("Q1", (cert.q[0] - mat(2, {1000, -8, -8, 0.08})).cwiseAbs().maxCoeff() <= 1e-10);
    c.holds("Q2", (cert.q[1] - mat(2, {600, -4, -4, 0.8})).cwiseAbs().maxCoeff() <= 1e-10);
    c.holds("Q1 positive definite", cert.residuals[0] > 1e-10);
    c.holds("Q2 positive definite", cert.residuals[1] > 1e-10);
    c.holds("certificate valid", cert.valid(1e-10));
}

std::vector<Vector> random_bins(std::mt19937_64& rng, std::size_t count, std::size_t r) {
    std::vector<Vector> bins(count);
    for (auto& b : bins) b = testing_support::random_simplex(rng, r);
    return bins;
}

void criterion7(Criterion& c) {
    std::mt19937_64 rng(701);

    // (a) adjoint sums
    double adj = 0.0;
    for (int k = 0; k < 200; ++k) {
        const Eigen::Index n = 2 + k % 8;
        const auto sys = testing_support::random_system(rng, n, 2 + k % 2);
        const Vector lam = disagreement_vector(testing_support::random_state(rng, n));
        const auto u = testing_support::random_control(rng, sys.size(), 1.0 + 0.01 * k);
        for (const auto& l : propagate_costate(std::span<const Matrix>(sys.matrices()), u, lam, 8).costates) {
            adj = std::max(adj, std::abs(l.sum()));
        }
    }
    c.holds("(a) 1'lambda = 0 within 1e-9", adj <= 1e-9);

    // (b) diameter
    bool diam_ok = true;
    for (int k = 0; k < 200; ++k) {
        const Eigen::Index n = 2 + k % 7;
        const auto sys = testing_support::random_system(rng, n, 1 + k % 3, k % 4 == 0 ? 0.3 : 0.7);
        const auto u = testing_support::random_control(rng, sys.size(), 0.5 + 0.02 * k, 6, k % 2 == 0);
        const auto traj = propagate(sys, testing_support::random_state(rng, n), u, 8);
        for (std::size_t s = 1; s < traj.states.size(); ++s) {
            diam_ok = diam_ok && diameter(traj.states[s]) <= diameter(traj.states[s - 1]) + 1e-10;
        }
    }
    c.holds("(b) diameter non-increasing", diam_ok);

    // (c) n = 2 closed form
    double closed = 0.0;
    for (int k = 0; k < 100; ++k) {
        const auto sys = testing_support::random_system(rng, 2, 1 + k % 3, 1.0);
        const Vector x0 = testing_support::random_state(rng, 2);
        const auto u = testing_support::random_control(rng, sys.size(), testing_support::moderate_horizon(rng, sys));
        double e = 0.0;
        for (std::size_t j = 0; j < u.segment_count(); ++j) {
            for (std::size_t i = 0; i < sys.size(); ++i) {
                e += sys.matrix(i).trace() * u.values()[j](static_cast<Eigen::Index>(i)) * u.segment_length(j);
            }
        }
        const double v = consensus_distance(x0) * std::exp(2.0 * e);
        closed = std::max(closed, std::abs(consensus_distance(final_state(sys, x0, u)) - v) / v);
    }
    c.holds("(c) n=2 closed form within 1e-9 relative", closed <= 1e-9);

    // (d) relaxed gradient against central differences
    double grad_err = 0.0;
    for (int k = 0; k < 20; ++k) {
        const Eigen::Index n = 2 + k % 4;
        const std::size_t r = 2 + k % 2;
        const OCProblem prob(testing_support::random_system(rng, n, r), testing_support::random_state(rng, n), 0.7,
                             k % 2 ? Sense::Maximize : Sense::Minimize);
        const auto bins = random_bins(rng, 16, r);
        const auto g = relaxed_gradient(prob, bins);
        auto objective = [&](const std::vector<Vector>& bs) {
            const double h = prob.horizon / static_cast<double>(bs.size());
            Vector x = prob.x0;
            for (const auto& w : bs) {
                Matrix m = Matrix::Zero(n, n);
                for (std::size_t i = 0; i < r; ++i) m += w(static_cast<Eigen::Index>(i)) * prob.sys.matrix(i);
                x = matrix_exponential(m, h) * x;
            }
            return prob.objective(x);
        };
        double worst = 0.0;
        double scale = 0.0;
        for (std::size_t b = 0; b < bins.size(); ++b) {
            for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(r); ++i) {
                auto p = bins;
                auto m = bins;
                p[b](i) += 1e-5;
                m[b](i) -= 1e-5;
                const double fd = (objective(p) - objective(m)) / 2e-5;
                worst = std::max(worst, std::abs(fd - g[b](i)));
                scale = std::max(scale, std::abs(g[b](i)));
            }
        }
        grad_err = std::max(grad_err, worst / scale);
    }
    c.holds("(d) gradient vs finite differences within 1e-4 relative", grad_err <= 1e-4);

    // (e) rank vs reduced determinant
    int disagree = 0;
    for (int k = 0; k < 500; ++k) {
        const Matrix a = testing_support::random_consensus(rng, 3, k % 2 ? 0.35 : 0.6);
        const Matrix bar = reduce(reference::system_of({a})).bar_matrices[0];
        const bool by_det = bar.determinant() > default_tolerances().rank * bar.squaredNorm();
        if (by_det != has_rooted_out_branching(ConsensusMatrix(a))) ++disagree;
    }
    c.holds("(e) rank <=> det(bar-A) > 0 on 500 matrices (" + std::to_string(disagree) + " disagreements)", disagree == 0);

    // (f) UCC verdicts against simulation
    int certified = 0;
    int refuted = 0;
    bool sound = true;
    for (int k = 0; k < 2000 && (certified < 100 || refuted < 100); ++k) {
        const ConsensusMatrix a1(testing_support::random_consensus(rng, 3, k % 2 ? 0.3 : 0.6));
        const ConsensusMatrix a2(testing_support::random_consensus(rng, 3, k % 2 ? 0.3 : 0.6));
        const SwitchedSystem sys({a1, a2});
        const auto v = ucc_decide_n3_r2(a1, a2);
        if (v.decision == UCCDecision::UCC) {
            if (certified >= 100) continue;
            ++certified;
            const auto& cq = v.certificate->cqlf;
            if (!cq.found || !cq.certificate.valid(1e-10)) {
                sound = false;
                continue;
            }
            const auto red = reduce(sys);
            const auto u = testing_support::random_control(rng, 2, 3.0, 8, true);
            const auto traj = propagate(std::span<const Matrix>(red.bar_matrices),
                                        reduce_state(testing_support::random_state(rng, 3), red.basis), u, 16);
            double prev = std::numeric_limits<double>::infinity();
            for (const auto& z : traj.states) {
                const double nz = z.dot(cq.certificate.y * z);
                sound = sound && nz <= prev * (1.0 + 1e-12);
                prev = nz;
            }
        } else {
            if (refuted >= 100) continue;
            ++refuted;
            const auto& cx = *v.counterexample;
            const double norm = std::max({a1.matrix().norm(), a2.matrix().norm(), 1e-300});
            const Vector x0 = cx.witness_state + 0.01 * testing_support::random_state(rng, 3);
            const Vector xt = final_state(sys, x0, PiecewiseControl::constant(cx.control, 50.0 / norm));
            sound = sound && consensus_distance(xt) > 0.1 * consensus_distance(x0);
        }
    }
    c.holds("(f) 100 UCC and 100 NotUCC verdicts confirmed by simulation (" + std::to_string(certified) + "/" +
                std::to_string(refuted) + ")",
            sound && certified == 100 && refuted == 100);
}

void criterion8(Criterion& c) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string cmd = std::string("\"") + CONSENSUS_OPT_CLI + "\" paper-examples > /dev/null";
    const int status = std::system(cmd.c_str());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    c.holds("paper-examples exit code " + std::to_string(code), code == 0);
    c.holds("paper-examples wall time " + std::to_string(secs) + " s < 60 s", secs < 60.0);
}

} // namespace

int main() {
    int failed = 0;
    failed += report(1, "three-agent best case", criterion1);
    failed += report(2, "four-agent best case", criterion2);
    failed += report(3, "three-agent worst case", criterion3);
    failed += report(4, "singular chain optimum", criterion4);
    failed += report(5, "reduction identities", criterion5);
    failed += report(6, "CQLF exhibit", criterion6);
    failed += report(7, "property suites", criterion7);
    failed += report(8, "paper-examples harness", criterion8);
    std::printf("%d/8 criteria passed\n", 8 - failed);
    return failed == 0 ? 0 : 1;
}
