#pragma once

// Batch front-end: JSON run configurations, task dispatch and artifact
// writing. CSV and JSON column layouts are documented in README.md.

#include "tosc/barrier.hpp"
#include "tosc/pmp.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace tosc::cli {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Formatting

[[nodiscard]] inline std::string fmt17(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// JSON value for a double; non-finite values become the strings "inf", "-inf", "nan".
[[nodiscard]] inline json num(double v) { return std::isfinite(v) ? json(v) : json(fmt17(v)); }

[[nodiscard]] inline json num(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v[i]));
    return a;
}

[[nodiscard]] inline json num(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(num(x));
    return a;
}

[[nodiscard]] inline std::string hex64(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& file, const std::vector<std::string>& header) : out_(file) {
        if (!out_) fail(ErrorKind::ConfigError, "cli", "cannot open " + file.string() + " for writing");
        row_text(header);
    }

    void row(const std::vector<double>& values) {
        std::vector<std::string> s;
        s.reserve(values.size());
        for (double v : values) s.push_back(fmt17(v));
        row_text(s);
    }

    void row_text(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

inline void write_json(const std::filesystem::path& file, const json& j) {
    std::ofstream out(file);
    if (!out) fail(ErrorKind::ConfigError, "cli", "cannot open " + file.string() + " for writing");
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Schema reader: every access records the key so unknown keys are rejected
// with their full path.

class Node {
public:
    Node(const json& j, std::string path) : j_(&j), path_(std::move(path)) {}

    [[nodiscard]] const std::string& path() const noexcept { return path_; }
    [[nodiscard]] const json& raw() const noexcept { return *j_; }
    [[nodiscard]] bool has(const std::string& key) const { return j_->is_object() && j_->contains(key); }

    [[noreturn]] void error(const std::string& msg) const { fail(ErrorKind::ConfigError, "cli", (path_.empty() ? "<root>" : path_) + ": " + msg); }

    [[nodiscard]] Node child(const std::string& key) {
        expect_object();
        used_.insert(key);
        if (!j_->contains(key)) Node(*j_, sub(key)).error("missing required field");
        return Node((*j_)[key], sub(key));
    }

    [[nodiscard]] std::optional<Node> optional_child(const std::string& key) {
        expect_object();
        used_.insert(key);
        if (!j_->contains(key) || (*j_)[key].is_null()) return std::nullopt;
        return Node((*j_)[key], sub(key));
    }

    [[nodiscard]] double number() const {
        if (j_->is_number()) return j_->get<double>();
        if (j_->is_string()) {
            const auto s = j_->get<std::string>();
            if (s == "inf") return kInf;
            if (s == "-inf") return -kInf;
        }
        error("expected a number");
    }

    [[nodiscard]] double number(const std::string& key) { return child(key).number(); }
    [[nodiscard]] double number(const std::string& key, double def) {
        auto c = optional_child(key);
        return c ? c->number() : def;
    }

    [[nodiscard]] long long integer() const {
        if (!j_->is_number_integer() && !j_->is_number_unsigned()) error("expected an integer");
        return j_->get<long long>();
    }
    [[nodiscard]] long long integer(const std::string& key) { return child(key).integer(); }
    [[nodiscard]] long long integer(const std::string& key, long long def) {
        auto c = optional_child(key);
        return c ? c->integer() : def;
    }

    [[nodiscard]] bool boolean(const std::string& key, bool def) {
        auto c = optional_child(key);
        if (!c) return def;
        if (!c->raw().is_boolean()) c->error("expected true or false");
        return c->raw().get<bool>();
    }

    [[nodiscard]] std::string string() const {
        if (!j_->is_string()) error("expected a string");
        return j_->get<std::string>();
    }
    [[nodiscard]] std::string string(const std::string& key) { return child(key).string(); }
    [[nodiscard]] std::string string(const std::string& key, const std::string& def) {
        auto c = optional_child(key);
        return c ? c->string() : def;
    }

    [[nodiscard]] std::vector<Node> items() const {
        if (!j_->is_array()) error("expected an array");
        std::vector<Node> out;
        for (std::size_t i = 0; i < j_->size(); ++i) out.emplace_back((*j_)[i], path_ + "[" + std::to_string(i) + "]");
        return out;
    }

    [[nodiscard]] std::vector<double> numbers() const {
        std::vector<double> out;
        for (const auto& c : items()) out.push_back(c.number());
        return out;
    }

    [[nodiscard]] Vec vector(int expected = -1) const {
        const auto v = numbers();
        if (expected >= 0 && static_cast<int>(v.size()) != expected)
            error("expected " + std::to_string(expected) + " entries, got " + std::to_string(v.size()));
        Vec out(static_cast<Eigen::Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
        return out;
    }

    /// Row-major nested arrays.
    [[nodiscard]] Mat matrix(int rows, int cols) const {
        const auto r = items();
        if (static_cast<int>(r.size()) != rows) error("expected " + std::to_string(rows) + " rows");
        Mat m(rows, cols);
        for (int i = 0; i < rows; ++i) m.row(i) = r[static_cast<std::size_t>(i)].vector(cols).transpose();
        return m;
    }

    /// Rejects keys that were never read.
    void finish() const {
        if (!j_->is_object()) return;
        for (auto it = j_->begin(); it != j_->end(); ++it)
            if (!used_.count(it.key())) Node(it.value(), sub(it.key())).error("unknown field");
    }

private:
    void expect_object() const {
        if (!j_->is_object()) error("expected an object");
    }
    [[nodiscard]] std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* j_;
    std::string path_;
    std::set<std::string> used_;
};

/// Piecewise data: either a single value or {"breaks": [...], "values": [...]}.
template <class T, class Parse>
[[nodiscard]] Piecewise<T> piecewise(Node n, Parse parse) {
    if (n.raw().is_object()) {
        const auto breaks = n.child("breaks").numbers();
        std::vector<T> values;
        for (const auto& v : n.child("values").items()) values.push_back(parse(v));
        n.finish();
        if (values.size() != breaks.size() + 1) n.error("needs exactly one more value than breaks");
        for (std::size_t i = 1; i < breaks.size(); ++i)
            if (!(breaks[i] > breaks[i - 1])) n.error("breaks must be strictly increasing");
        return Piecewise<T>(breaks, std::move(values));
    }
    return Piecewise<T>(parse(n));
}

// ---------------------------------------------------------------------------
// Run configuration

enum class Task { Solve, Ladder, Verify, BarrierSweep, MonotonicitySweep };

[[nodiscard]] inline std::string_view to_string(Task t) {
    switch (t) {
        case Task::Solve: return "solve";
        case Task::Ladder: return "ladder";
        case Task::Verify: return "verify";
        case Task::BarrierSweep: return "barrier_sweep";
        case Task::MonotonicitySweep: return "monotonicity_sweep";
    }
    return "unknown";
}

struct MonotonicityInstance {
    PiecewiseVector g;
    PiecewiseScalar h;
    Vec y0;
    double T = 0.5;
};

struct TaskSpec {
    Task type = Task::Solve;
    std::string sweep = "envelope";  // barrier_sweep: envelope | lower_bound
    int count = 0;
    int which = 0;  // monotonicity case, 0 runs both
    int pieces = 0;
    int cells = 8;
    double p = 2.0;
    double M = 0.5;
    std::vector<MonotonicityInstance> instances;
};

struct Checks {
    std::optional<double> w_value, w_tol;
    std::optional<double> w_plus_alpha, w_plus_alpha_tol;  // ladder rungs: |w + alpha - value| <= tol
    std::optional<double> classical_hit_tol;
    double hamiltonian_rel = 1e-3;
    std::optional<double> support_mass_max;
    std::optional<double> transversality_max;
    std::optional<double> bang_bang_min;
    bool quenching_conclusions = false;
};

struct RunConfig {
    int schema_version = kSchemaVersion;
    std::string name;
    std::uint64_t seed = 1;
    std::string example;
    ControlSystem system;
    json system_echo;
    Vec y0;
    std::optional<TargetSet> base;
    double alpha = 0.0;
    SolveOptions solver;
    LadderOptions ladder;
    VerifyOptions verify;
    TaskSpec task;
    Checks checks;
    std::string out_dir;
};

struct ExampleInfo {
    std::string name;
    std::string description;
};

/// Built-in systems, in stable order.
[[nodiscard]] inline std::vector<ExampleInfo> list_examples() {
    return {
        {"quenching-ex1", "y1' = y2/(1-y1) + (Bu)_1 + g1 + h, y2' = y1 + y2 + (Bu)_2 + g2 on |u| <= rho0; target y1 = 1"},
        {"blowup-ex2", "y' = |y|^(p-1) y + Bu + g - h y on |u| <= rho0; target |y| = inf, stated as G(y) = 0"},
        {"toy-integrator", "y' = u on a box, ball or finite control set; target given explicitly"},
    };
}

namespace detail {

[[nodiscard]] inline ControlSet parse_control_set(Node n, int dim) {
    const auto type = n.string("type");
    ControlSet U = ControlSet::ball(1, 1.0);
    if (type == "box") {
        const Vec lo = n.child("lower").vector(dim), hi = n.child("upper").vector(dim);
        for (int i = 0; i < dim; ++i)
            if (!(lo[i] <= hi[i])) n.error("box needs lower <= upper");
        U = ControlSet::box(lo, hi);
    } else if (type == "ball") {
        const double r = n.number("radius");
        if (!(r > 0.0)) n.error("ball radius must be positive");
        U = ControlSet::ball(dim, r);
    } else if (type == "atoms") {
        std::vector<Vec> pts;
        for (const auto& p : n.child("points").items()) pts.push_back(p.vector(dim));
        if (pts.empty()) n.error("atom list must be nonempty");
        U = ControlSet::atoms(pts);
    } else {
        n.error("control_set.type must be box, ball or atoms");
    }
    n.finish();
    return U;
}

[[nodiscard]] inline TargetSet parse_target(Node n, int dim, double& alpha) {
    const auto type = n.string("type");
    alpha = n.number("alpha", 0.0);
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) n.error("alpha must be finite and >= 0");
    std::optional<TargetSet> t;
    if (type == "hyperplane") {
        const auto axis = n.integer("axis");
        if (axis < 0 || axis >= dim) n.error("axis out of range");
        t = TargetSet::hyperplane(static_cast<int>(axis), n.number("level"));
    } else if (type == "half_space") {
        const Vec nrm = n.child("normal").vector(dim);
        if (!(nrm.norm() > 0.0)) n.error("normal must be nonzero");
        t = TargetSet::half_space(nrm, n.number("offset"));
    } else if (type == "ball") {
        const Vec c = n.child("center").vector(dim);
        const double r = n.number("radius");
        if (!(r >= 0.0)) n.error("radius must be >= 0");
        t = TargetSet::ball(c, r);
    } else if (type == "point") {
        t = TargetSet::point(n.child("location").vector(dim));
    } else {
        n.error("target.type must be hyperplane, half_space, ball or point");
    }
    n.finish();
    return *t;
}

[[nodiscard]] inline std::vector<MonotonicityInstance> parse_instances(Node n, int which) {
    std::vector<MonotonicityInstance> out;
    for (auto item : n.items()) {
        MonotonicityInstance m;
        m.y0 = item.child("y0").vector(2);
        if (m.y0[0] == 1.0) item.child("y0").error("y0 lies on the singular line y1 = 1");
        const int c = m.y0[0] < 1.0 ? 1 : 2;
        if (which != 0 && c != which) item.child("y0").error("y0 does not match the requested case");
        m.T = item.number("T", 0.5);
        if (!(m.T > 0.0)) item.error("T must be positive");
        m.g = item.optional_child("g") ? piecewise<Vec>(item.child("g"), [](const Node& v) { return v.vector(2); })
                                       : PiecewiseVector(Vec(Vec::Zero(2)));
        auto hn = item.child("h");
        m.h = piecewise<double>(hn, [](const Node& v) { return v.number(); });
        for (std::size_t k = 0; k < m.h.values().size(); ++k) {
            const double v = m.h.values()[k];
            if ((c == 1 && v > 0.0) || (c == 2 && v < 0.0))
                Node(hn.raw().is_object() ? hn.raw()["values"][k] : hn.raw(),
                     hn.path() + (hn.raw().is_object() ? ".values[" + std::to_string(k) + "]" : ""))
                    .error(c == 1 ? "case y0_1 < 1 needs h <= 0" : "case y0_1 > 1 needs h >= 0");
        }
        item.finish();
        out.push_back(std::move(m));
    }
    return out;
}

[[nodiscard]] inline ControlSystem parse_system(Node n, const std::string& example, Vec& y0) {
    if (example == "quenching-ex1") {
        QuenchModel md;
        md.rho0 = n.number("rho0", 1.0);
        if (!(md.rho0 > 0.0)) n.error("rho0 must be positive");
        const int m = static_cast<int>(n.integer("m", 2));
        if (m < 1) n.error("m must be >= 1");
        md.B = n.optional_child("B") ? piecewise<Mat>(n.child("B"), [m](const Node& v) { return v.matrix(2, m); })
                                     : PiecewiseMatrix(Mat(Mat::Identity(2, m)));
        if (n.optional_child("g")) md.g = piecewise<Vec>(n.child("g"), [](const Node& v) { return v.vector(2); });
        if (n.optional_child("h")) md.h = piecewise<double>(n.child("h"), [](const Node& v) { return v.number(); });
        y0 = n.child("y0").vector(2);
        if (y0[0] == 1.0) n.child("y0").error("y0 lies on the singular line y1 = 1");
        n.finish();
        return build_quench_system(std::move(md));
    }
    if (example == "blowup-ex2") {
        BlowupModel md;
        md.n = static_cast<int>(n.integer("n", 2));
        if (md.n < 1) n.error("n must be >= 1");
        const int m = static_cast<int>(n.integer("m", md.n));
        if (m < 1) n.error("m must be >= 1");
        md.p = n.number("p", 2.0);
        if (!(md.p > 1.0)) n.error("p must exceed 1");
        md.gamma = n.number("gamma", 0.0);
        if (!(md.gamma >= 0.0)) n.error("gamma must be >= 0 (0 selects gamma = p)");
        md.rho0 = n.number("rho0", 1.0);
        if (!(md.rho0 > 0.0)) n.error("rho0 must be positive");
        const int dim = md.n;
        md.B = n.optional_child("B") ? piecewise<Mat>(n.child("B"), [dim, m](const Node& v) { return v.matrix(dim, m); })
                                     : PiecewiseMatrix(Mat(Mat::Identity(dim, m)));
        if (n.optional_child("g")) md.g = piecewise<Vec>(n.child("g"), [dim](const Node& v) { return v.vector(dim); });
        if (n.optional_child("h")) md.h = piecewise<double>(n.child("h"), [](const Node& v) { return v.number(); });
        md.r1 = n.number("r1", 0.0);
        y0 = n.child("y0").vector(dim);
        if (!(y0.norm() > 0.0)) n.child("y0").error("y0 must be nonzero");
        n.finish();
        return build_blowup_system(std::move(md));
    }
    if (example == "toy-integrator") {
        const int dim = static_cast<int>(n.integer("n", 1));
        if (dim < 1) n.error("n must be >= 1");
        auto U = n.optional_child("control_set")
                     ? parse_control_set(n.child("control_set"), dim)
                     : ControlSet::box(Vec::Constant(dim, -1.0), Vec::Constant(dim, 1.0));
        y0 = n.child("y0").vector(dim);
        n.finish();
        return make_toy_system(std::move(U));
    }
    Node(n.raw(), n.path() + ".example").error("unknown example '" + example + "'");
}

}  // namespace detail

/// Parses and validates a configuration document. Overrides from the command
/// line are applied by the caller afterwards.
[[nodiscard]] inline RunConfig parse_config(const json& doc) {
    Node root(doc, "");
    if (!doc.is_object()) root.error("configuration must be a JSON object");
    RunConfig c;
    c.schema_version = static_cast<int>(root.integer("schema_version"));
    if (c.schema_version != kSchemaVersion)
        root.child("schema_version").error("unsupported schema version " + std::to_string(c.schema_version));
    c.name = root.string("name", "run");
    const auto seed = root.integer("seed", 1);
    if (seed < 0) root.child("seed").error("seed must be >= 0");
    c.seed = static_cast<std::uint64_t>(seed);
    c.out_dir = root.string("output_dir", "");

    auto sys = root.child("system");
    c.example = sys.string("example");
    c.system_echo = sys.raw();
    c.system = detail::parse_system(sys, c.example, c.y0);

    if (auto t = root.optional_child("target")) {
        c.base = detail::parse_target(*t, c.system.n, c.alpha);
    } else if (c.example == "quenching-ex1") {
        c.base = TargetSet::hyperplane(0, 1.0);
    } else if (c.example == "blowup-ex2") {
        c.base = TargetSet::point(Vec::Zero(c.system.n));
    }

    if (auto s = root.optional_child("solver")) {
        auto& so = c.solver;
        so.cells = static_cast<int>(s->integer("cells", so.cells));
        so.atoms = static_cast<int>(s->integer("atoms", so.atoms));
        so.multistarts = static_cast<int>(s->integer("multistarts", so.multistarts));
        so.max_iterations = static_cast<int>(s->integer("max_iterations", so.max_iterations));
        so.stationarity_tol = s->number("stationarity_tol", so.stationarity_tol);
        so.t_max = s->number("t_max", so.t_max);
        so.w_min = s->number("w_min", so.w_min);
        so.adjoint_rtol = s->number("adjoint_rtol", so.adjoint_rtol);
        so.integrate.rtol = s->number("rtol", so.integrate.rtol);
        so.integrate.atol = s->number("atol", so.integrate.atol);
        so.integrate.hit_tol = s->number("hit_tol", so.integrate.hit_tol);
        if (auto p = s->optional_child("penalties")) so.penalties = p->numbers();
        if (so.cells < 1) s->child("cells").error("must be >= 1");
        if (so.atoms < 0) s->child("atoms").error("must be >= 0");
        if (so.multistarts < 1) s->child("multistarts").error("must be >= 1");
        if (so.max_iterations < 1) s->child("max_iterations").error("must be >= 1");
        if (!(so.t_max > 0.0)) s->child("t_max").error("must be positive");
        if (so.penalties.empty()) s->child("penalties").error("must be nonempty");
        for (double p : so.penalties)
            if (!(p > 0.0)) s->child("penalties").error("entries must be positive");
        for (const char* k : {"rtol", "atol", "hit_tol", "adjoint_rtol"})
            if (s->has(k) && !(s->number(k) > 0.0)) s->child(k).error("must be positive");
        s->finish();
    }
    c.solver.seed = c.seed;

    if (auto l = root.optional_child("ladder")) {
        c.ladder.alpha0 = l->number("alpha0", c.ladder.alpha0);
        c.ladder.ratio = l->number("ratio", c.ladder.ratio);
        c.ladder.k_max = static_cast<int>(l->integer("rungs", c.ladder.k_max));
        if (!(c.ladder.alpha0 >= 0.0)) l->child("alpha0").error("must be >= 0 (0 selects half the initial distance)");
        if (!(c.ladder.ratio > 0.0 && c.ladder.ratio < 1.0)) l->child("ratio").error("must lie in (0, 1)");
        if (c.ladder.k_max < 1) l->child("rungs").error("must be >= 1");
        l->finish();
    }

    if (auto v = root.optional_child("verify")) {
        if (auto d = v->optional_child("deltas")) c.verify.deltas = d->numbers();
        c.verify.samples_per_cell = static_cast<int>(v->integer("samples_per_cell", c.verify.samples_per_cell));
        c.verify.h_rel_tol = v->number("h_rel_tol", c.verify.h_rel_tol);
        c.verify.bang_tol = v->number("bang_tol", c.verify.bang_tol);
        c.verify.adjoint_rtol = v->number("adjoint_rtol", c.verify.adjoint_rtol);
        if (auto s = v->optional_child("seed")) c.verify.seed = s->vector(c.system.n);
        for (double d : c.verify.deltas)
            if (!(d > 0.0 && d < 1.0)) v->child("deltas").error("entries must lie in (0, 1)");
        if (c.verify.samples_per_cell < 1) v->child("samples_per_cell").error("must be >= 1");
        v->finish();
    }

    auto t = root.child("task");
    const auto type = t.string("type");
    auto& ts = c.task;
    if (type == "solve") {
        ts.type = Task::Solve;
    } else if (type == "ladder") {
        ts.type = Task::Ladder;
    } else if (type == "verify") {
        ts.type = Task::Verify;
    } else if (type == "barrier_sweep") {
        ts.type = Task::BarrierSweep;
        ts.sweep = t.string("sweep", "envelope");
        if (ts.sweep != "envelope" && ts.sweep != "lower_bound") t.child("sweep").error("must be envelope or lower_bound");
        ts.count = static_cast<int>(t.integer("count", ts.sweep == "envelope" ? 100 : 50));
        ts.cells = static_cast<int>(t.integer("cells", 8));
        ts.pieces = static_cast<int>(t.integer("pieces", 6));
        ts.p = t.number("p", 2.0);
        ts.M = t.number("M", 0.5);
        if (ts.count < 1) t.child("count").error("must be >= 1");
        if (ts.cells < 1) t.child("cells").error("must be >= 1");
        if (ts.pieces < 1) t.child("pieces").error("must be >= 1");
        if (!(ts.p > 1.0)) t.child("p").error("must exceed 1");
        if (!(ts.M >= 0.0)) t.child("M").error("must be >= 0");
    } else if (type == "monotonicity_sweep") {
        ts.type = Task::MonotonicitySweep;
        ts.which = static_cast<int>(t.integer("case", 0));
        if (ts.which < 0 || ts.which > 2) t.child("case").error("must be 1, 2 or 0 for both");
        ts.count = static_cast<int>(t.integer("count", 50));
        ts.pieces = static_cast<int>(t.integer("pieces", 4));
        if (ts.count < 0) t.child("count").error("must be >= 0");
        if (ts.pieces < 1) t.child("pieces").error("must be >= 1");
        if (auto in = t.optional_child("instances")) ts.instances = detail::parse_instances(*in, ts.which);
    } else {
        t.child("type").error("must be solve, ladder, verify, barrier_sweep or monotonicity_sweep");
    }
    t.finish();

    const bool needs_target = ts.type == Task::Solve || ts.type == Task::Ladder || ts.type == Task::Verify;
    if (needs_target && !c.base) root.error("a target is required for the toy system");
    if (!c.system.control_set.is_convex() && needs_target)
        root.child("system").error("solve tasks need a convex control set");

    if (auto k = root.optional_child("checks")) {
        auto& ch = c.checks;
        if (auto w = k->optional_child("w")) {
            ch.w_value = w->number("value");
            ch.w_tol = w->number("tol");
            w->finish();
        }
        if (auto w = k->optional_child("w_plus_alpha")) {
            ch.w_plus_alpha = w->number("value");
            ch.w_plus_alpha_tol = w->number("tol");
            w->finish();
        }
        if (auto v = k->optional_child("classical_hit_tol")) ch.classical_hit_tol = v->number();
        ch.hamiltonian_rel = k->number("hamiltonian_rel", ch.hamiltonian_rel);
        if (auto v = k->optional_child("support_mass_max")) ch.support_mass_max = v->number();
        if (auto v = k->optional_child("transversality_max")) ch.transversality_max = v->number();
        if (auto v = k->optional_child("bang_bang_min")) ch.bang_bang_min = v->number();
        ch.quenching_conclusions = k->boolean("quenching_conclusions", false);
        if (ch.quenching_conclusions && c.system.kind != SystemKind::Quenching)
            k->child("quenching_conclusions").error("only applies to quenching-ex1");
        k->finish();
    }
    root.finish();
    return c;
}

[[nodiscard]] inline json read_json_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) fail(ErrorKind::ConfigError, "cli", file.string() + ": cannot open");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::ConfigError, "cli", file.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Default configurations, one per example. configs/*.json ship the same
// documents.

[[nodiscard]] inline json example_config(const std::string& name) {
    if (name == "quenching-ex1")
        return json::parse(R"({
  "schema_version": 1,
  "name": "quenching-ex1",
  "seed": 1,
  "system": {"example": "quenching-ex1", "rho0": 1.0, "B": [[1, 0], [0, 1]], "y0": [0.0, 0.5]},
  "target": {"type": "hyperplane", "axis": 0, "level": 1.0, "alpha": 0.1},
  "solver": {"cells": 32, "multistarts": 8},
  "ladder": {"alpha0": 0.1, "ratio": 0.5, "rungs": 4},
  "task": {"type": "verify"},
  "checks": {"hamiltonian_rel": 1e-3, "classical_hit_tol": 1e-6, "quenching_conclusions": true}
})");
    if (name == "blowup-ex2")
        return json::parse(R"({
  "schema_version": 1,
  "name": "blowup-ex2",
  "seed": 1,
  "system": {"example": "blowup-ex2", "n": 2, "p": 2.0, "rho0": 1.0, "B": [[1, 0], [0, 1]], "y0": [1.0, 0.0]},
  "target": {"type": "point", "location": [0.0, 0.0], "alpha": 0.05},
  "solver": {"cells": 32, "multistarts": 8},
  "task": {"type": "verify"},
  "checks": {"w": {"value": 0.56541018599, "tol": 1e-3}, "hamiltonian_rel": 1e-6, "bang_bang_min": 0.999,
             "classical_hit_tol": 1e-6}
})");
    if (name == "toy-integrator")
        return json::parse(R"({
  "schema_version": 1,
  "name": "toy-integrator",
  "seed": 1,
  "system": {"example": "toy-integrator", "n": 1,
             "control_set": {"type": "box", "lower": [-1.0], "upper": [1.0]}, "y0": [0.0]},
  "target": {"type": "point", "location": [1.0], "alpha": 0.0},
  "task": {"type": "solve"},
  "checks": {"w": {"value": 1.0, "tol": 1e-3}, "classical_hit_tol": 1e-6}
})");
    fail(ErrorKind::ConfigError, "cli", "unknown example '" + name + "'");
}

// ---------------------------------------------------------------------------
// Execution

struct CheckResult {
    std::string name;
    bool pass = false;
    double value = 0.0;
    double threshold = 0.0;
};

struct RunOutcome {
    json result;
    std::vector<CheckResult> checks;
    std::vector<std::string> files;

    [[nodiscard]] bool pass() const {
        return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
    }
    [[nodiscard]] int exit_code() const { return pass() ? 0 : 1; }
};

namespace detail {

inline void add_check(RunOutcome& o, std::string name, bool pass, double value, double threshold) {
    o.checks.push_back({std::move(name), pass, value, threshold});
}

[[nodiscard]] inline json integrate_echo(const IntegrateOptions& o) {
    return json{{"rtol", num(o.rtol)}, {"atol", num(o.atol)}, {"hit_tol", num(o.hit_tol)}};
}

inline void write_trajectory(const std::filesystem::path& file, const ControlSystem& sys, const TargetSet& tgt,
                             const Trajectory& tr) {
    std::vector<std::string> h{"t"};
    for (int i = 0; i < sys.n; ++i) h.push_back("y" + std::to_string(i + 1));
    h.push_back("target_distance");
    CsvWriter w(file, h);
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
        std::vector<double> row{tr.times[k]};
        for (int i = 0; i < sys.n; ++i) row.push_back(tr.states[k][i]);
        row.push_back(tgt.distance(sys.to_target(tr.states[k])));
        w.row(row);
    }
}

inline void write_schedule(const std::filesystem::path& file, const RelaxedSchedule& s, int m) {
    std::vector<std::string> h{"cell", "t0", "t1", "atom", "weight"};
    for (int j = 0; j < m; ++j) h.push_back("u" + std::to_string(j + 1));
    CsvWriter w(file, h);
    for (std::size_t c = 0; c < s.num_cells(); ++c) {
        const auto& cell = s.cells()[c];
        for (std::size_t a = 0; a < cell.size(); ++a) {
            std::vector<double> row{static_cast<double>(c), s.grid()[c], s.grid()[c + 1], static_cast<double>(a),
                                    cell.weights[a]};
            for (int j = 0; j < m; ++j) row.push_back(cell.atoms[a][j]);
            w.row(row);
        }
    }
}

inline void write_adjoint(const std::filesystem::path& file, const AdjointTrajectory& adj, int n) {
    std::vector<std::string> h{"t"};
    for (int i = 0; i < n; ++i) h.push_back("psi" + std::to_string(i + 1));
    CsvWriter w(file, h);
    for (std::size_t k = 0; k < adj.times.size(); ++k) {
        std::vector<double> row{adj.times[k]};
        for (int i = 0; i < n; ++i) row.push_back(adj.covectors[k][i]);
        w.row(row);
    }
}

[[nodiscard]] inline json solve_json(const SolveResult& r) {
    return json{{"w", num(r.w)},
                {"alpha", num(r.alpha)},
                {"hit", std::string(to_string(r.trajectory.hit.status))},
                {"terminal_distance", num(r.terminal_distance)},
                {"objective", num(r.objective)},
                {"converged", r.converged},
                {"reason", r.reason},
                {"iterations", r.iterations},
                {"start_index", r.start_index},
                {"feasible_starts", r.feasible_starts},
                {"cells", r.schedule.num_cells()},
                {"hash", hex64(r.hash)}};
}

[[nodiscard]] inline json pmp_json(const PmpReport& p) {
    return json{{"hamiltonian_residual", num(p.hamiltonian_residual)},
                {"hamiltonian_scale", num(p.hamiltonian_scale)},
                {"support_violation_mass", num(p.support_violation_mass)},
                {"transversality_residual", num(p.transversality_residual)},
                {"terminal_adjoint_norm", num(p.terminal_adjoint_norm)},
                {"nontriviality", num(p.nontriviality)},
                {"bang_bang_agreement", num(p.bang_bang_agreement)},
                {"degenerate_fraction", num(p.degenerate_fraction)},
                {"singular_target", p.singular_target},
                {"terminal_time", num(p.terminal_time)},
                {"seed_times", num(p.seed_times)},
                {"terminal_norms", num(p.terminal_norms)},
                {"samples", p.samples}};
}

[[nodiscard]] inline json sweep_json(const SweepSummary& s) {
    return json{{"name", s.name},
                {"seed", s.seed},
                {"instances", s.instances},
                {"passes", s.passes},
                {"violations", s.violations},
                {"min_margin", num(s.min_margin)},
                {"pass", s.pass()},
                {"margins", num(s.margins)}};
}

/// Classicalized schedule re-integrated against the relaxed hit time.
inline void classical_check(RunOutcome& o, const RunConfig& c, const TargetSet& tgt, const SolveResult& r, json& out) {
    if (!c.checks.classical_hit_tol) return;
    if (!r.classical) {
        add_check(o, "classical_hit", false, kInf, *c.checks.classical_hit_tol);
        out["classical"] = nullptr;
        return;
    }
    const auto hit = hit_with_schedule(c.system, tgt, c.y0, to_dirac(*r.classical), c.solver.t_max, c.solver.integrate);
    const double gap = hit.status == HitStatus::HitTarget ? std::abs(hit.time - r.w) : kInf;
    out["classical"] = json{{"hit", std::string(to_string(hit.status))}, {"hit_time", num(hit.time)}, {"gap", num(gap)}};
    add_check(o, "classical_hit", gap <= *c.checks.classical_hit_tol, gap, *c.checks.classical_hit_tol);
}

inline void pmp_checks(RunOutcome& o, const Checks& ch, const PmpReport& p) {
    const double hrel = p.hamiltonian_residual / p.hamiltonian_scale;
    add_check(o, "hamiltonian_residual_rel", hrel <= ch.hamiltonian_rel, hrel, ch.hamiltonian_rel);
    add_check(o, "nontriviality", std::abs(p.nontriviality - 1.0) <= 1e-12, p.nontriviality, 1.0);
    if (ch.support_mass_max)
        add_check(o, "support_violation_mass", p.support_violation_mass <= *ch.support_mass_max, p.support_violation_mass,
                  *ch.support_mass_max);
    if (ch.transversality_max)
        add_check(o, "transversality_residual", p.transversality_residual <= *ch.transversality_max, p.transversality_residual,
                  *ch.transversality_max);
    if (ch.bang_bang_min)
        add_check(o, "bang_bang_agreement", p.bang_bang_agreement >= *ch.bang_bang_min, p.bang_bang_agreement, *ch.bang_bang_min);
}

inline void w_check(RunOutcome& o, const Checks& ch, double w) {
    if (!ch.w_value) return;
    const double err = std::abs(w - *ch.w_value);
    add_check(o, "w", err <= *ch.w_tol, err, *ch.w_tol);
}

}  // namespace detail

/// Executes the task, writes artifacts into dir (created if needed) and
/// returns the verdicts. Errors from the numerical modules propagate.
[[nodiscard]] inline RunOutcome run(const RunConfig& c, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    RunOutcome o;
    json& res = o.result;
    res["schema_version"] = kSchemaVersion;
    res["name"] = c.name;
    res["task"] = std::string(to_string(c.task.type));
    res["seed"] = c.seed;
    res["system"] = c.system_echo;
    res["y0"] = num(c.y0);
    res["alpha"] = num(c.alpha);
    res["integrate"] = detail::integrate_echo(c.solver.integrate);
    const auto& sys = c.system;
    std::vector<SweepSummary> sweeps;
    auto file = [&](const std::string& name) {
        o.files.push_back(name);
        return dir / name;
    };

    switch (c.task.type) {
        case Task::Solve:
        case Task::Verify: {
            const auto r = solve_alpha(sys, *c.base, c.y0, c.alpha, std::nullopt, c.solver);
            const auto tgt = c.base->inflated(c.alpha);
            res["solve"] = detail::solve_json(r);
            detail::add_check(o, "hit", r.trajectory.hit.status == HitStatus::HitTarget, r.terminal_distance,
                              c.solver.integrate.hit_tol);
            detail::w_check(o, c.checks, r.w);
            detail::classical_check(o, c, tgt, r, res["solve"]);
            detail::write_trajectory(file("trajectory.csv"), sys, tgt, r.trajectory);
            detail::write_schedule(file("schedule.csv"), r.schedule, sys.m);
            if (c.task.type == Task::Verify) {
                const auto rep = verify(sys, tgt, candidate_of(r), c.verify);
                res["pmp"] = detail::pmp_json(rep);
                detail::pmp_checks(o, c.checks, rep);
                detail::write_adjoint(file("adjoint.csv"), rep.adjoint, sys.n);
                write_json(file("pmp_report.json"), res["pmp"]);
                if (c.checks.quenching_conclusions) {
                    // second refinement level: the next rung of the ladder
                    const double a2 = c.alpha * c.ladder.ratio;
                    if (!(c.alpha > 0.0)) fail(ErrorKind::ConfigError, "cli", "target.alpha: quenching conclusions need alpha > 0");
                    const auto r2 = solve_alpha(sys, *c.base, c.y0, a2, std::nullopt, c.solver);
                    const auto rep2 = verify(sys, c.base->inflated(a2), candidate_of(r2), c.verify);
                    const auto q = quenching_conclusions(sys, r2.trajectory,
                                                         std::vector<double>{rep.terminal_adjoint_norm, rep2.terminal_adjoint_norm});
                    res["quenching"] = json{{"alphas", num(std::vector<double>{c.alpha, a2})},
                                            {"w", num(std::vector<double>{r.w, r2.w})},
                                            {"terminal_norms", num(std::vector<double>{rep.terminal_adjoint_norm, rep2.terminal_adjoint_norm})},
                                            {"y2_terminal", num(q.y2_terminal)},
                                            {"sign_ok", q.sign_ok},
                                            {"decay_checked", q.decay_checked},
                                            {"decay_ratio", num(q.decay_ratio)},
                                            {"pass", q.pass}};
                    detail::add_check(o, "quenching_y2_sign", q.sign_ok, q.y2_terminal, -1e-6);
                    if (q.decay_checked) detail::add_check(o, "quenching_adjoint_decay", q.decay_ok, q.decay_ratio, 0.7);
                }
            }
            break;
        }
        case Task::Ladder: {
            const auto tr = alpha_ladder(sys, *c.base, c.y0, c.ladder, c.solver);
            json rungs = json::array();
            CsvWriter w(file("ladder.csv"), {"k", "alpha", "w", "solved_w", "converged", "backfilled"});
            for (const auto& r : tr.rungs) {
                rungs.push_back(json{{"k", r.k}, {"alpha", num(r.alpha)}, {"w", num(r.w)}, {"solved_w", num(r.solved_w)},
                                     {"converged", r.converged}, {"backfilled", r.backfilled}});
                w.row({static_cast<double>(r.k), r.alpha, r.w, r.solved_w, r.converged ? 1.0 : 0.0, r.backfilled ? 1.0 : 0.0});
            }
            res["ladder"] = json{{"rungs", rungs},
                                 {"limit", num(tr.limit)},
                                 {"raw_violations", tr.raw_violations},
                                 {"violations", tr.violations},
                                 {"backfills", tr.backfills},
                                 {"monotone", tr.monotone()},
                                 {"final", detail::solve_json(tr.final)}};
            detail::add_check(o, "ladder_monotone", tr.monotone() && tr.violations == 0, static_cast<double>(tr.violations), 0.0);
            if (c.checks.w_plus_alpha) {
                double worst = 0.0;
                for (const auto& r : tr.rungs) worst = std::max(worst, std::abs(r.w + r.alpha - *c.checks.w_plus_alpha));
                detail::add_check(o, "w_plus_alpha", worst <= *c.checks.w_plus_alpha_tol, worst, *c.checks.w_plus_alpha_tol);
            }
            detail::w_check(o, c.checks, tr.final.w);
            const auto tgt = c.base->inflated(tr.final.alpha);
            detail::write_trajectory(file("trajectory.csv"), sys, tgt, tr.final.trajectory);
            detail::write_schedule(file("schedule.csv"), tr.final.schedule, sys.m);
            break;
        }
        case Task::BarrierSweep: {
            const auto s = c.task.sweep == "envelope" ? envelope_sweep(c.seed, c.task.count, c.task.cells)
                                                      : lower_bound_sweep(c.seed, c.task.count, c.task.p, c.task.M, c.task.pieces);
            res["sweeps"] = json::array({detail::sweep_json(s)});
            detail::add_check(o, s.name, s.pass(), static_cast<double>(s.violations), 0.0);
            sweeps.push_back(s);
            break;
        }
        case Task::MonotonicitySweep: {
            auto& sums = sweeps;
            if (c.task.count > 0) {
                if (c.task.which != 2) sums.push_back(monotonicity_sweep(c.seed, c.task.count, 1, c.task.pieces));
                if (c.task.which != 1) sums.push_back(monotonicity_sweep(c.seed + 1, c.task.count, 2, c.task.pieces));
            }
            if (!c.task.instances.empty()) {
                SweepSummary s;
                s.name = "monotonicity_instances";
                s.seed = c.seed;
                std::vector<double> margins;
                std::vector<char> ok;
                IntegrateOptions opt;
                opt.rtol = 1e-11;
                opt.atol = 1e-13;
                for (const auto& in : c.task.instances) {
                    const auto r = quench_monotonicity_check(in.g, in.h, in.y0, in.T, opt);
                    margins.push_back(r.margin);
                    ok.push_back(r.pass && (r.degenerate || r.margin > 0.0));
                }
                tosc::detail::tally(s, margins, ok);
                sums.push_back(s);
            }
            json arr = json::array();
            for (const auto& s : sums) {
                arr.push_back(detail::sweep_json(s));
                detail::add_check(o, s.name, s.pass(), static_cast<double>(s.violations), 0.0);
            }
            res["sweeps"] = arr;
            break;
        }
    }
    if (c.task.type == Task::BarrierSweep || c.task.type == Task::MonotonicitySweep) {
        CsvWriter w(file("sweep.csv"), {"sweep", "index", "margin", "pass"});
        for (const auto& s : sweeps)
            for (std::size_t i = 0; i < s.margins.size(); ++i)
                w.row_text({s.name, std::to_string(i), fmt17(s.margins[i]), s.ok[i] ? "1" : "0"});
    }

    json checks = json::array();
    for (const auto& ch : o.checks)
        checks.push_back(json{{"name", ch.name}, {"pass", ch.pass}, {"value", num(ch.value)}, {"threshold", num(ch.threshold)}});
    res["checks"] = checks;
    res["pass"] = o.pass();
    res["files"] = o.files;
    write_json(dir / "result.json", res);
    return o;
}

}  // namespace tosc::cli
