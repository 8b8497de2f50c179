#pragma once

/**
 * @file problem_io.hpp
 * @brief Problem files, run reports, trajectory CSV and the tolerance override file.
 *
 * Problem file layout (JSON):
 *
 *   {
 *     "version": 1,
 *     "n": 3,
 *     "matrices": [[[-3, 3, 0], [2, -2, 0], [0, 0.01, -0.01]], ...],
 *     "x0": [1, 2, 2],
 *     "T": 0.5,
 *     "sense": "min",                       // or "max"
 *     "options": {"max_switches": 4, "grid": 32, "time_bins": 64, "seed": 0}
 *   }
 *
 * "sense" and "options" (and every key inside it) are optional. Any other key is rejected.
 */

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "config.hpp"
#include "core.hpp"
#include "dynamics.hpp"
#include "optimal_control.hpp"
#include "reduction.hpp"

namespace consensus_opt::io {

using json = nlohmann::json;

inline constexpr int kProblemFileVersion = 1;

/// Malformed or schema-violating input text. `path` is a JSON pointer, line/column are 1-based
/// (0 when unknown).
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::string path = {}, std::size_t line = 0, std::size_t column = 0)
        : std::runtime_error(what), path_(std::move(path)), line_(line), column_(column) {}

    const std::string& path() const noexcept { return path_; }
    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::string path_;
    std::size_t line_;
    std::size_t column_;
};

struct SolverOptions {
    std::optional<int> max_switches;
    int grid = 32;
    int time_bins = 64;
    unsigned long long seed = 0;
};

struct ProblemFile {
    int version = kProblemFileVersion;
    Eigen::Index n = 0;
    std::vector<Matrix> matrices;
    Vector x0;
    double horizon = 1.0;
    Sense sense = Sense::Minimize;
    SolverOptions options;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i < text.size() && i + 1 < byte; ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

inline void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ParseError("unknown field '" + it.key() + "'", where + "/" + it.key());
    }
}

inline double number_at(const json& j, const std::string& path) {
    if (!j.is_number()) throw ParseError("expected a number", path);
    return j.get<double>();
}

inline long long integer_at(const json& j, const std::string& path) {
    if (!j.is_number_integer()) throw ParseError("expected an integer", path);
    return j.get<long long>();
}

inline Vector vector_at(const json& j, const std::string& path) {
    if (!j.is_array()) throw ParseError("expected an array of numbers", path);
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number_at(j[i], path + "/" + std::to_string(i));
    return v;
}

inline Matrix matrix_at(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) throw ParseError("expected a non-empty array of rows", path);
    const auto rows = static_cast<Eigen::Index>(j.size());
    Matrix m;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string rp = path + "/" + std::to_string(i);
        const Vector row = vector_at(j[i], rp);
        if (i == 0) m.resize(rows, row.size());
        if (row.size() != m.cols()) throw ParseError("rows differ in length", rp);
        m.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    return m;
}

inline json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json vector_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline json parse_text(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = line_column(text, e.byte);
        throw ParseError("malformed JSON at line " + std::to_string(line) + ", column " + std::to_string(col), "", line,
                         col);
    }
}

} // namespace detail

inline Sense parse_sense(const std::string& s) {
    if (s == "min" || s == "minimize") return Sense::Minimize;
    if (s == "max" || s == "maximize") return Sense::Maximize;
    throw ParseError("sense must be \"min\" or \"max\"", "/sense");
}

/// Parses the JSON text of a problem file. Shape errors throw ParseError; matrix contents are
/// not validated here (see to_problem).
inline ProblemFile parse_problem(const std::string& text) {
    const json doc = detail::parse_text(text);
    if (!doc.is_object()) throw ParseError("problem file must be a JSON object", "");
    detail::reject_unknown(doc, "", {"version", "n", "matrices", "x0", "T", "sense", "options"});
    for (const char* key : {"version", "n", "matrices", "x0", "T"}) {
        if (!doc.contains(key)) throw ParseError(std::string("missing field '") + key + "'", std::string("/") + key);
    }
    ProblemFile pf;
    pf.version = static_cast<int>(detail::integer_at(doc["version"], "/version"));
    if (pf.version != kProblemFileVersion) {
        throw ParseError("unsupported version " + std::to_string(pf.version), "/version");
    }
    pf.n = static_cast<Eigen::Index>(detail::integer_at(doc["n"], "/n"));
    if (pf.n < 1) throw ParseError("n must be positive", "/n");
    if (!doc["matrices"].is_array() || doc["matrices"].empty()) throw ParseError("expected a non-empty array", "/matrices");
    for (std::size_t i = 0; i < doc["matrices"].size(); ++i) {
        const std::string path = "/matrices/" + std::to_string(i);
        Matrix m = detail::matrix_at(doc["matrices"][i], path);
        if (m.rows() != pf.n || m.cols() != pf.n) throw ParseError("matrix is not n x n", path);
        pf.matrices.push_back(std::move(m));
    }
    pf.x0 = detail::vector_at(doc["x0"], "/x0");
    if (pf.x0.size() != pf.n) throw ParseError("x0 must have n entries", "/x0");
    pf.horizon = detail::number_at(doc["T"], "/T");
    if (doc.contains("sense")) {
        if (!doc["sense"].is_string()) throw ParseError("expected a string", "/sense");
        pf.sense = parse_sense(doc["sense"].get<std::string>());
    }
    if (doc.contains("options")) {
        const json& o = doc["options"];
        if (!o.is_object()) throw ParseError("expected an object", "/options");
        detail::reject_unknown(o, "/options", {"max_switches", "grid", "time_bins", "seed"});
        if (o.contains("max_switches")) {
            pf.options.max_switches = static_cast<int>(detail::integer_at(o["max_switches"], "/options/max_switches"));
        }
        if (o.contains("grid")) pf.options.grid = static_cast<int>(detail::integer_at(o["grid"], "/options/grid"));
        if (o.contains("time_bins")) {
            pf.options.time_bins = static_cast<int>(detail::integer_at(o["time_bins"], "/options/time_bins"));
        }
        if (o.contains("seed")) {
            const long long s = detail::integer_at(o["seed"], "/options/seed");
            if (s < 0) throw ParseError("seed must be nonnegative", "/options/seed");
            pf.options.seed = static_cast<unsigned long long>(s);
        }
    }
    return pf;
}

inline json to_json(const ProblemFile& pf) {
    json doc;
    doc["version"] = pf.version;
    doc["n"] = pf.n;
    json ms = json::array();
    for (const auto& m : pf.matrices) ms.push_back(detail::matrix_json(m));
    doc["matrices"] = ms;
    doc["x0"] = detail::vector_json(pf.x0);
    doc["T"] = pf.horizon;
    doc["sense"] = to_string(pf.sense);
    json o;
    if (pf.options.max_switches) o["max_switches"] = *pf.options.max_switches;
    o["grid"] = pf.options.grid;
    o["time_bins"] = pf.options.time_bins;
    o["seed"] = pf.options.seed;
    doc["options"] = o;
    return doc;
}

inline std::string serialize(const ProblemFile& pf) { return to_json(pf).dump(2) + "\n"; }

/// Validated system (Error on Metzler / row-sum / finiteness violations).
inline SwitchedSystem to_system(const ProblemFile& pf, const Tolerances& tol = default_tolerances()) {
    return SwitchedSystem::from_raw(pf.matrices, tol);
}

inline OCProblem to_problem(const ProblemFile& pf, const Tolerances& tol = default_tolerances()) {
    return OCProblem(to_system(pf, tol), pf.x0, pf.horizon, pf.sense);
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline ProblemFile load_problem(const std::string& path) { return parse_problem(read_text(path)); }

/// Writes to a temporary sibling file and renames it over `path`.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out << content;
        out.flush();
        if (!out) throw std::runtime_error("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw std::runtime_error("cannot rename onto '" + path + "': " + ec.message());
    }
}

// ---------------------------------------------------------------------------------------
// Tolerance override file

/// JSON object with any of "row", "pd", "rank", "regression_scale".
inline Tolerances parse_tolerances(const std::string& text, Tolerances base = default_tolerances()) {
    const json doc = detail::parse_text(text);
    if (!doc.is_object()) throw ParseError("tolerance file must be a JSON object", "");
    detail::reject_unknown(doc, "", {"row", "pd", "rank", "regression_scale"});
    auto read = [&](const char* key, double& field) {
        if (!doc.contains(key)) return;
        const double v = detail::number_at(doc[key], std::string("/") + key);
        if (!(v >= 0.0) || !std::isfinite(v)) throw ParseError("tolerance must be finite and >= 0", std::string("/") + key);
        field = v;
    };
    read("row", base.row);
    read("pd", base.pd);
    read("rank", base.rank);
    read("regression_scale", base.regression_scale);
    return base;
}

/// Defaults, overridden by the file named in CONSENSUS_OPT_TOL_FILE when it is set.
inline Tolerances tolerances_from_environment() {
    const char* path = std::getenv("CONSENSUS_OPT_TOL_FILE");
    if (path == nullptr || *path == '\0') return default_tolerances();
    return parse_tolerances(read_text(path));
}

// ---------------------------------------------------------------------------------------
// Controls

/**
 * @brief Control spec "seg,seg,..." where each seg is "k@t" (vertex k, 1-based) or
 *        "w1:w2:...:wr@t" (simplex weights), active until time t. The last t must be T.
 */
inline PiecewiseControl parse_control_spec(const std::string& spec, std::size_t r, double horizon) {
    std::vector<double> bps{0.0};
    std::vector<Vector> vals;
    std::stringstream ss(spec);
    std::string seg;
    auto to_double = [&](const std::string& s) {
        double v = 0.0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError("bad number '" + s + "' in control spec");
        return v;
    };
    while (std::getline(ss, seg, ',')) {
        const auto at = seg.find('@');
        if (at == std::string::npos) throw ParseError("control segment '" + seg + "' lacks '@t'");
        const std::string head = seg.substr(0, at);
        const double t = to_double(seg.substr(at + 1));
        Vector u;
        if (head.find(':') == std::string::npos) {
            const double k = to_double(head);
            if (k != std::floor(k) || k < 1 || k > static_cast<double>(r)) {
                throw Error(ErrorCode::InvalidControl, "subsystem index '" + head + "' out of range");
            }
            u = simplex_vertex(r, static_cast<std::size_t>(k) - 1);
        } else {
            std::vector<double> w;
            std::stringstream ws(head);
            std::string item;
            while (std::getline(ws, item, ':')) w.push_back(to_double(item));
            if (w.size() != r) throw Error(ErrorCode::DimensionMismatch, "control weights must have r entries");
            u = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
        }
        if (!(t > bps.back()) || t > horizon * (1.0 + 1e-12)) {
            throw Error(ErrorCode::InvalidControl, "control times must increase within (0, T]");
        }
        bps.push_back(std::min(t, horizon));
        vals.push_back(u);
    }
    if (vals.empty()) throw ParseError("empty control spec");
    if (std::abs(bps.back() - horizon) > 1e-12 * std::max(1.0, horizon)) {
        throw Error(ErrorCode::InvalidControl, "control must end at T");
    }
    bps.back() = horizon;
    return PiecewiseControl(std::move(bps), std::move(vals));
}

// ---------------------------------------------------------------------------------------
// Reports

inline json to_json(const PiecewiseControl& u) {
    json vals = json::array();
    for (const auto& v : u.values()) vals.push_back(detail::vector_json(v));
    return {{"breakpoints", u.breakpoints()}, {"values", vals}};
}

inline PiecewiseControl control_from_json(const json& j) {
    std::vector<Vector> vals;
    for (std::size_t i = 0; i < j.at("values").size(); ++i) vals.push_back(detail::vector_at(j["values"][i], "/values"));
    return PiecewiseControl(j.at("breakpoints").get<std::vector<double>>(), std::move(vals));
}

inline json samples_json(const std::vector<double>& times, const std::vector<Vector>& values, const char* key) {
    json vals = json::array();
    for (const auto& v : values) vals.push_back(detail::vector_json(v));
    return {{"times", times}, {key, vals}};
}

inline std::vector<Vector> samples_from_json(const json& j, const char* key) {
    std::vector<Vector> out;
    for (const auto& v : j.at(key)) out.push_back(detail::vector_at(v, std::string("/") + key));
    return out;
}

inline json to_json(const OptimizationReport& rep) {
    json j;
    j["method"] = to_string(rep.method);
    j["sense"] = to_string(rep.sense);
    j["cost"] = rep.cost;
    j["mp_residual"] = rep.mp_residual;
    j["switching_scale"] = rep.switching.max_abs();
    j["switch_times"] = rep.control.switch_times();
    j["switch_count"] = rep.control.switch_count();
    j["non_unique"] = rep.non_unique;
    j["every_control_optimal"] = rep.every_control_optimal;
    j["evaluations"] = rep.evaluations;
    j["control"] = to_json(rep.control);
    j["trajectory"] = samples_json(rep.trajectory.times, rep.trajectory.states, "states");
    j["adjoint"] = samples_json(rep.adjoint.times, rep.adjoint.costates, "costates");
    j["switching_functions"] = samples_json(rep.switching.times, rep.switching.values, "values");
    if (rep.periodic) j["periodic_candidate"] = {{"cost", rep.periodic->cost}, {"control", to_json(rep.periodic->control)}};
    return j;
}

inline Method parse_method(const std::string& s) {
    for (Method m : {Method::BangBangGrid, Method::RelaxedSweep, Method::AnalyticN2, Method::ConstantScan}) {
        if (s == to_string(m)) return m;
    }
    throw ParseError("unknown method '" + s + "'", "/method");
}

inline OptimizationReport report_from_json(const json& j) {
    OptimizationReport rep;
    rep.method = parse_method(j.at("method").get<std::string>());
    rep.sense = parse_sense(j.at("sense").get<std::string>());
    rep.cost = j.at("cost").get<double>();
    rep.mp_residual = j.at("mp_residual").get<double>();
    rep.non_unique = j.at("non_unique").get<bool>();
    rep.every_control_optimal = j.at("every_control_optimal").get<bool>();
    rep.evaluations = j.at("evaluations").get<std::size_t>();
    rep.control = control_from_json(j.at("control"));
    rep.trajectory.times = j.at("trajectory").at("times").get<std::vector<double>>();
    rep.trajectory.states = samples_from_json(j["trajectory"], "states");
    rep.adjoint.times = j.at("adjoint").at("times").get<std::vector<double>>();
    rep.adjoint.costates = samples_from_json(j["adjoint"], "costates");
    rep.switching.times = j.at("switching_functions").at("times").get<std::vector<double>>();
    rep.switching.values = samples_from_json(j["switching_functions"], "values");
    rep.switching.sense = rep.sense;
    if (j.contains("periodic_candidate")) {
        rep.periodic = PeriodicCandidate{control_from_json(j["periodic_candidate"]["control"]),
                                         j["periodic_candidate"]["cost"].get<double>()};
    }
    return rep;
}

// ---------------------------------------------------------------------------------------
// CSV

/// Shortest text of `v` with 17 significant digits ('.' decimal point, locale independent).
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

/// Columns: t, x1..xn, V, diameter, z1..z_{n-1}, W (W = diameter recomputed from z).
inline std::string trajectory_csv(const Trajectory& traj, const ReductionBasis& basis) {
    const Eigen::Index n = traj.states.empty() ? basis.dim() : traj.states.front().size();
    std::string out = "t";
    for (Eigen::Index i = 1; i <= n; ++i) out += ",x" + std::to_string(i);
    out += ",V,diameter";
    for (Eigen::Index i = 1; i < n; ++i) out += ",z" + std::to_string(i);
    out += ",W\n";
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        const Vector& x = traj.states[k];
        out += format_double(traj.times[k]);
        for (Eigen::Index i = 0; i < n; ++i) out += "," + format_double(x(i));
        out += "," + format_double(consensus_distance(x)) + "," + format_double(diameter(x));
        const Vector z = reduce_state(x, basis);
        for (Eigen::Index i = 0; i < z.size(); ++i) out += "," + format_double(z(i));
        out += "," + format_double(lifted_diameter(z, basis)) + "\n";
    }
    return out;
}

} // namespace consensus_opt::io
