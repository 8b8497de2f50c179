// consensus_opt command-line front end.
//
// Exit codes: 0 ok, 1 parse/usage error, 2 validation error, 3 regression failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "consensus_opt/consensus_opt.hpp"
#include "consensus_opt/problem_io.hpp"
#include "consensus_opt/reference_cases.hpp"

namespace co = consensus_opt;
using co::io::json;

namespace {

constexpr const char* kToolName = "consensus_opt";
constexpr const char* kToolVersion = "1.0.0";

enum Exit { kOk = 0, kParse = 1, kValidation = 2, kRegression = 3 };

struct Common {
    std::string problem;
    std::string out;
    std::string csv;
};

struct OptimizeArgs {
    std::string mode = "both";
    std::optional<std::string> sense;
    std::optional<int> max_switches;
    std::optional<int> grid;
    std::optional<int> time_bins;
    std::optional<unsigned long long> seed;
};

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        co::io::write_file_atomic(path, text);
    }
}

json run_report(const std::string& command, const co::io::ProblemFile& pf, json result, double seconds) {
    json j;
    j["tool"] = kToolName;
    j["version"] = kToolVersion;
    j["command"] = command;
    j["input"] = co::io::to_json(pf);
    j["result"] = std::move(result);
    j["timing_seconds"] = seconds;
    return j;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_validate(const Common& c, const co::Tolerances& tol) {
    const auto pf = co::io::load_problem(c.problem);
    int bad = 0;
    for (std::size_t i = 0; i < pf.matrices.size(); ++i) {
        try {
            co::ConsensusMatrix m(pf.matrices[i], tol);
            std::cout << "matrix " << i + 1 << ": ok (Metzler, zero row sums)\n";
        } catch (const co::Error& e) {
            ++bad;
            std::cerr << "matrix " << i + 1 << ": " << e.what() << "\n";
        }
    }
    if (!std::isfinite(pf.horizon) || !(pf.horizon > 0.0)) {
        ++bad;
        std::cerr << "T: must be positive and finite\n";
    }
    if (!pf.x0.allFinite()) {
        ++bad;
        std::cerr << "x0: non-finite entries\n";
    }
    std::cout << (bad == 0 ? "valid" : "invalid") << "\n";
    return bad == 0 ? kOk : kValidation;
}

int cmd_simulate(const Common& c, const std::string& control, int samples, const co::Tolerances& tol) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto pf = co::io::load_problem(c.problem);
    const auto prob = co::io::to_problem(pf, tol);
    const auto u = co::io::parse_control_spec(control, prob.inputs(), prob.horizon);
    const auto traj = co::propagate(prob.sys, prob.x0, u, samples);
    if (prob.dim() < 2) throw co::Error(co::ErrorCode::InvalidArgument, "simulation output needs n >= 2");
    const auto basis = co::default_basis(prob.dim());
    const std::string csv = co::io::trajectory_csv(traj, basis);
    if (!c.csv.empty()) co::io::write_file_atomic(c.csv, csv);

    json result;
    result["control"] = co::io::to_json(u);
    result["final_state"] = std::vector<double>(traj.final_state().data(), traj.final_state().data() + prob.dim());
    result["V_final"] = co::consensus_distance(traj.final_state());
    result["diameter_final"] = co::diameter(traj.final_state());
    if (c.csv.empty() && c.out.empty()) {
        std::cout << csv;
        return kOk;
    }
    emit(c.out, run_report("simulate", pf, result, seconds_since(t0)).dump(2) + "\n");
    return kOk;
}

int cmd_reduce(const Common& c, const co::Tolerances& tol) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto pf = co::io::load_problem(c.problem);
    const auto sys = co::io::to_system(pf, tol);
    const auto red = co::reduce(sys, tol);
    json result;
    json bars = json::array();
    for (const auto& b : red.bar_matrices) bars.push_back(co::io::detail::matrix_json(b));
    result["bar_matrices"] = bars;
    result["metric"] = co::io::detail::matrix_json(red.metric);
    result["basis"] = co::io::detail::matrix_json(red.basis.s());
    result["z0"] = co::io::detail::vector_json(co::reduce_state(pf.x0, red.basis));
    emit(c.out, run_report("reduce", pf, result, seconds_since(t0)).dump(2) + "\n");
    return kOk;
}

int cmd_optimize(const Common& c, const OptimizeArgs& a, const std::string& command, const co::Tolerances& tol) {
    const auto t0 = std::chrono::steady_clock::now();
    auto pf = co::io::load_problem(c.problem);
    if (a.sense) pf.sense = co::io::parse_sense(*a.sense);
    if (a.max_switches) pf.options.max_switches = *a.max_switches;
    if (a.grid) pf.options.grid = *a.grid;
    if (a.time_bins) pf.options.time_bins = *a.time_bins;
    if (a.seed) pf.options.seed = *a.seed;
    if (a.mode == "bangbang" && a.time_bins) throw co::io::ParseError("--time-bins has no effect with --mode bangbang");
    if (a.mode == "relaxed" && (a.max_switches || a.grid)) {
        throw co::io::ParseError("--max-switches/--grid have no effect with --mode relaxed");
    }
    if (pf.options.max_switches && *pf.options.max_switches < 0) throw co::io::ParseError("max_switches must be >= 0");
    if (pf.options.grid < 8) throw co::io::ParseError("grid must be >= 8");
    if (pf.options.time_bins < 16) throw co::io::ParseError("time_bins must be >= 16");

    const auto prob = co::io::to_problem(pf, tol);
    co::BangBangOptions bb;
    bb.max_switches = pf.options.max_switches.value_or(co::default_max_switches(prob.dim(), prob.inputs()));
    bb.grid = pf.options.grid;
    bb.seed = pf.options.seed;
    co::RelaxedOptions rx;
    rx.time_bins = pf.options.time_bins;

    json result;
    const co::OptimizationReport* primary = nullptr;
    co::OptimizationReport analytic;
    co::CrossValidation cv;
    if (prob.dim() == 2) {
        analytic = co::solve_analytic_n2(prob);
        primary = &analytic;
        result["mode"] = "analytic";
        result["report"] = co::io::to_json(analytic);
    } else if (a.mode == "bangbang") {
        cv.bang_bang = co::solve_bang_bang(prob, bb);
        primary = &cv.bang_bang;
        result["mode"] = a.mode;
        result["report"] = co::io::to_json(cv.bang_bang);
    } else if (a.mode == "relaxed") {
        cv.relaxed = co::solve_relaxed(prob, rx);
        primary = &cv.relaxed;
        result["mode"] = a.mode;
        result["report"] = co::io::to_json(cv.relaxed);
    } else {
        cv = co::solve_both(prob, bb, rx);
        const bool relaxed_better = co::objective_sign(prob.sense) * (cv.relaxed.cost - cv.bang_bang.cost) < 0.0;
        primary = cv.singular && relaxed_better ? &cv.relaxed : &cv.bang_bang;
        result["mode"] = "both";
        result["singular"] = cv.singular;
        result["relative_gap"] = cv.relative_gap;
        result["bang_bang"] = co::io::to_json(cv.bang_bang);
        result["relaxed"] = co::io::to_json(cv.relaxed);
    }
    result["max_switches"] = bb.max_switches;
    result["cost"] = primary->cost;
    if (!c.csv.empty()) {
        co::io::write_file_atomic(c.csv, co::io::trajectory_csv(primary->trajectory, co::default_basis(prob.dim())));
    }
    emit(c.out, run_report(command, pf, result, seconds_since(t0)).dump(2) + "\n");
    return kOk;
}

json certificate_json(const co::QuadraticCertificate& cert) {
    json q = json::array();
    for (const auto& m : cert.q) q.push_back(co::io::detail::matrix_json(m));
    return {{"Y", co::io::detail::matrix_json(cert.y)}, {"residuals", cert.residuals}, {"Q", q}};
}

json quadratic_json(const co::Quadratic& q) { return {q.c0, q.c1, q.c2}; }

int cmd_ucc(const Common& c, int samples, const co::Tolerances& tol) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto pf = co::io::load_problem(c.problem);
    const auto sys = co::io::to_system(pf, tol);
    json result;
    if (sys.dim() == 3 && sys.size() == 2) {
        const auto v = co::ucc_decide_n3_r2(sys, tol);
        result["procedure"] = "exact (n = 3, r = 2)";
        result["decision"] = co::to_string(v.decision);
        result["marginal"] = v.marginal;
        result["hull_det_coefficients"] = quadratic_json(v.hull.det_poly);
        result["hull_det_min"] = v.hull.min_value;
        if (v.certificate) {
            const auto& cq = v.certificate->cqlf;
            result["certificate"] = {{"cqlf_found", cq.found},
                                     {"segment_conditions_hold", cq.segment_conditions_hold},
                                     {"inverse_segment_checked", cq.inverse.has_value()},
                                     {"cqlf", certificate_json(cq.certificate)}};
        }
        if (v.counterexample) {
            result["counterexample"] = {{"alpha", v.counterexample->alpha},
                                        {"control", co::io::detail::vector_json(v.counterexample->control)},
                                        {"witness_state", co::io::detail::vector_json(v.counterexample->witness_state)}};
        }
    } else {
        const auto s = co::ucc_sample_check(sys, samples, tol);
        result["procedure"] = "sampling screen";
        result["decision"] = s.obstruction ? "FailureAt" : "NoObstruction";
        if (s.obstruction) result["weights"] = co::io::detail::vector_json(s.weights);
        result["points_checked"] = s.checked;
        result["marginal"] = s.marginal;
        result["disclaimer"] = s.disclaimer;
    }
    emit(c.out, run_report("ucc", pf, result, seconds_since(t0)).dump(2) + "\n");
    return kOk;
}

int cmd_mp_verify(const Common& c, const std::string& control, const std::optional<std::string>& sense,
                  const co::Tolerances& tol) {
    const auto t0 = std::chrono::steady_clock::now();
    auto pf = co::io::load_problem(c.problem);
    if (sense) pf.sense = co::io::parse_sense(*sense);
    const auto prob = co::io::to_problem(pf, tol);
    const auto u = co::io::parse_control_spec(control, prob.inputs(), prob.horizon);
    const auto ext = co::compute_switching_functions(prob, u);
    const double residual = co::evaluate_mp_residual(u, ext.switching, prob.sense);
    const double scale = prob.horizon * ext.switching.max_abs();
    json result;
    result["control"] = co::io::to_json(u);
    result["cost"] = co::consensus_distance(ext.trajectory.final_state());
    result["mp_residual"] = residual;
    result["relative_residual"] = scale > 0.0 ? residual / scale : residual;
    result["consistent"] = residual <= 1e-4 * scale;
    result["switching_functions"] = co::io::samples_json(ext.switching.times, ext.switching.values, "values");
    emit(c.out, run_report("mp-verify", pf, result, seconds_since(t0)).dump(2) + "\n");
    return kOk;
}

int cmd_paper_examples(const std::string& only, const co::Tolerances& tol) {
    const auto t0 = std::chrono::steady_clock::now();
    int failed = 0;
    int ran = 0;
    for (const auto& f : co::reference::fixtures()) {
        if (!only.empty() && only != f.name) continue;
        ++ran;
        const auto res = co::reference::run_fixture(f, tol);
        std::cout << (res.passed() ? "PASS " : "FAIL ") << std::left << std::setw(10) << res.name << std::right
                  << std::fixed << std::setprecision(3) << res.seconds << " s\n";
        std::cout.unsetf(std::ios::fixed);
        if (!res.error.empty()) std::cout << "    error: " << res.error << "\n";
        for (const auto& chk : res.checks) {
            std::cout << "    " << (chk.passed ? "ok   " : "DIFF ") << chk.label << ": expected "
                      << co::io::format_double(chk.expected) << ", got " << co::io::format_double(chk.actual);
            if (!chk.passed) std::cout << " (diff " << co::io::format_double(chk.actual - chk.expected) << ", tol "
                                       << co::io::format_double(chk.tolerance) << ")";
            std::cout << "\n";
        }
        if (!res.passed()) ++failed;
    }
    if (ran == 0) {
        std::cerr << "no fixture named '" << only << "'\n";
        return kParse;
    }
    std::cout << ran - failed << "/" << ran << " fixtures passed in " << std::fixed << std::setprecision(3)
              << seconds_since(t0) << " s\n";
    return failed == 0 ? kOk : kRegression;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimal switching and consensus analysis for switched linear consensus systems"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    Common common;
    OptimizeArgs opt;
    std::string control;
    std::string only;
    std::optional<std::string> sense;
    int samples = 32;
    int hull_samples = 21;

    auto add_problem = [&](CLI::App* sub) {
        sub->add_option("problem", common.problem, "Problem file (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", common.out, "Write the JSON report here instead of stdout");
    };
    auto add_solver = [&](CLI::App* sub, bool with_sense) {
        sub->add_option("--mode", opt.mode, "bangbang, relaxed or both")
            ->check(CLI::IsMember({"bangbang", "relaxed", "both"}));
        if (with_sense) sub->add_option("--sense", opt.sense, "min or max (overrides the file)");
        sub->add_option("--max-switches", opt.max_switches, "Switch cap for the bang-bang search");
        sub->add_option("--grid", opt.grid, "Switch-time grid resolution (>= 8)");
        sub->add_option("--time-bins", opt.time_bins, "Bins of the relaxed solver (>= 16)");
        sub->add_option("--seed", opt.seed, "Seed for randomized restarts");
        sub->add_option("--csv", common.csv, "Write the optimal trajectory as CSV");
    };

    auto* validate = app.add_subcommand("validate", "Check the matrices of a problem file");
    validate->add_option("problem", common.problem, "Problem file (JSON)")->required()->check(CLI::ExistingFile);

    auto* simulate = app.add_subcommand("simulate", "Propagate a given control and emit CSV");
    add_problem(simulate);
    simulate->add_option("--control", control, "Segments 'k@t' or 'w1:w2@t', comma separated")->required();
    simulate->add_option("--csv", common.csv, "CSV output path (stdout when neither --csv nor --out)");
    simulate->add_option("--samples", samples, "Samples per control segment")->check(CLI::PositiveNumber);

    auto* reduce = app.add_subcommand("reduce", "Reduced (n-1)-dimensional system");
    add_problem(reduce);

    auto* optimize = app.add_subcommand("optimize", "Best (or, with --sense max, worst) switching law");
    add_problem(optimize);
    add_solver(optimize, true);

    auto* worst = app.add_subcommand("worst-case", "Alias of optimize --sense max");
    add_problem(worst);
    add_solver(worst, false);

    auto* ucc = app.add_subcommand("ucc", "Uniform convergence to consensus");
    add_problem(ucc);
    ucc->add_option("--samples", hull_samples, "Hull lattice resolution for the sampling screen (>= 2)")
        ->check(CLI::Range(2, 100000));

    auto* mp = app.add_subcommand("mp-verify", "Check a control against the switching-function conditions");
    add_problem(mp);
    mp->add_option("--control", control, "Segments 'k@t' or 'w1:w2@t', comma separated")->required();
    mp->add_option("--sense", sense, "min or max (overrides the file)");

    auto* paper = app.add_subcommand("paper-examples", "Replay the published reference cases");
    paper->add_option("--only", only, "Run a single fixture (example1, example2, example3, cqlf, example7, example8)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kParse;
    }

    try {
        const co::Tolerances tol = co::io::tolerances_from_environment();
        if (validate->parsed()) return cmd_validate(common, tol);
        if (simulate->parsed()) return cmd_simulate(common, control, samples, tol);
        if (reduce->parsed()) return cmd_reduce(common, tol);
        if (optimize->parsed()) return cmd_optimize(common, opt, "optimize", tol);
        if (worst->parsed()) {
            opt.sense = "max";
            return cmd_optimize(common, opt, "worst-case", tol);
        }
        if (ucc->parsed()) return cmd_ucc(common, hull_samples, tol);
        if (mp->parsed()) return cmd_mp_verify(common, control, sense, tol);
        if (paper->parsed()) return cmd_paper_examples(only, tol);
    } catch (const co::io::ParseError& e) {
        std::cerr << "parse error";
        if (!e.path().empty()) std::cerr << " at " << e.path();
        std::cerr << ": " << e.what() << "\n";
        return kParse;
    } catch (const co::Error& e) {
        std::cerr << "validation error (" << co::to_string(e.code()) << "): " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kParse;
    }
    return kOk;
}
