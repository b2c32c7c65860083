// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Every tolerance below is fixed here.

#include "tosc/cli.hpp"

#include "support/oracles.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

using namespace tosc;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

Vec v1(double a) { return Vec::Constant(1, a); }
using testing_support::vec2;

ControlSystem scalar_blowup() { return make_blowup_system(1, 2.0, PiecewiseMatrix(Mat::Zero(1, 1)), 1.0, 1.0); }
ControlSystem toy() { return make_toy_system(ControlSet::box(v1(-1.0), v1(1.0))); }
ControlSystem quench() { return make_quenching_system(PiecewiseMatrix(Mat::Identity(2, 2)), 1.0); }
ControlSystem radial_blowup() { return make_blowup_system(2, 2.0, PiecewiseMatrix(Mat::Identity(2, 2)), 1.0); }

Candidate candidate_for(const ControlSystem& sys, const TargetSet& tgt, const Vec& y0, const RelaxedSchedule& s, double t_max) {
    auto tr = integrate_forward(sys, s.truncated(t_max), y0, tgt, t_max);
    if (tr.hit.status != HitStatus::HitTarget) fail(ErrorKind::NotHit, "acceptance", "rung schedule does not reach its target");
    const double w = tr.hit.time;
    return Candidate{w, std::move(tr), s.truncated(w)};
}

// 1
Verdict closed_form_blowup_time() {
    const auto sys = scalar_blowup();
    const auto ctl = RelaxedSchedule::constant(0, 5, v1(0));
    const auto tr = integrate_forward(sys, ctl, v1(1), TargetSet::point(v1(0)), 5.0);
    const double err = tr.hit.status == HitStatus::HitTarget ? std::abs(tr.hit.time - 1.0) : kInf;
    bool ok = err <= 1e-6;
    double worst = 0.0;
    for (double tol : {1e-6, 1e-7, 1e-8, 1e-9, 1e-10}) {
        IntegrateOptions opt;
        opt.rtol = tol;
        opt.atol = tol * 1e-2;
        opt.hit_tol = tol;
        const auto t2 = integrate_forward(sys, ctl, v1(1), TargetSet::point(v1(0)), 5.0, opt);
        const double e = t2.hit.status == HitStatus::HitTarget ? std::abs(t2.hit.time - 1.0) : kInf;
        worst = std::max(worst, e / tol);
        ok = ok && e <= 10.0 * tol;
    }
    return {ok, fmt("|t_hit - 1| = %.3e (tol 1e-6); max |t_hit - 1|/tol over tol in 1e-6..1e-10 = %.3f (limit 10)", err, worst)};
}

// 2
Verdict adjoint_decay() {
    const auto sys = scalar_blowup();
    bool ok = true;
    std::string d;
    for (double delta : {1e-2, 1e-3}) {
        const auto ctl = RelaxedSchedule::constant(0, 1, v1(0));
        IntegrateOptions opt;
        opt.rtol = 1e-12;
        opt.atol = 1e-14;
        const auto tr = integrate_forward(sys, ctl, v1(1), nullptr, 1.0 - delta, opt);
        AdjointOptions ao;
        ao.rtol = 1e-12;
        const auto adj = integrate_adjoint(sys, tr, ctl, v1(1.0), true, ao);
        const double ratio = adj.covector_at(1.0 - delta).norm() / adj.covector_at(0.0).norm();
        const double rel = std::abs(ratio / (delta * delta) - 1.0);
        ok = ok && tr.hit.status == HitStatus::MaxTimeReached && rel <= 1e-5;
        d += fmt("delta=%.0e: |psi|/|psi0| = %.6e, rel err %.2e; ", delta, ratio, rel);
    }
    return {ok, d + "(tol 1e-5)"};
}

// 3
Verdict toy_solve() {
    const auto sys = toy();
    const auto tgt = TargetSet::point(v1(1.0));
    const auto r = solve_alpha(sys, tgt, v1(0.0), 0.0);
    const auto rep = verify(sys, tgt, candidate_of(r));
    const double res = std::max({rep.hamiltonian_residual, rep.support_violation_mass, rep.transversality_residual,
                                 std::abs(rep.nontriviality - 1.0)});
    const bool ok = std::abs(r.w - 1.0) <= 1e-3 && rep.bang_bang_agreement >= 0.999 && res <= 1e-6;
    return {ok, fmt("w = %.9f (1 +- 1e-3); bang-bang %.6f (>= 0.999); max residual %.3e (<= 1e-6)", r.w, rep.bang_bang_agreement, res)};
}

// 4
Verdict toy_ladder() {
    LadderOptions lo;
    lo.alpha0 = 0.5;
    lo.ratio = 0.5;
    lo.k_max = 12;
    const auto tr = alpha_ladder(toy(), TargetSet::point(v1(1.0)), v1(0.0), lo);
    double worst = 0.0;
    bool nondecreasing = true;
    for (std::size_t k = 0; k < tr.rungs.size(); ++k) {
        worst = std::max(worst, std::abs(tr.rungs[k].w - (1.0 - tr.rungs[k].alpha)));
        if (k > 0 && tr.rungs[k].w < tr.rungs[k - 1].w) nondecreasing = false;
    }
    const bool ok = tr.rungs.size() == 12 && worst <= 1e-3 && nondecreasing && tr.violations == 0 && tr.raw_violations == 0;
    return {ok, fmt("%g rungs; max |w - (1 - alpha)| = %.3e (<= 1e-3); violations raw %g final %g", static_cast<double>(tr.rungs.size()),
                    worst, static_cast<double>(tr.raw_violations), static_cast<double>(tr.violations)) +
                    (nondecreasing ? "; nondecreasing" : "; NOT nondecreasing")};
}

// 5
Verdict monotonicity() {
    const auto a = monotonicity_sweep(5001, 50, 1);
    const auto b = monotonicity_sweep(5002, 50, 2);
    const bool ok = a.passes == 50 && b.passes == 50 && a.min_margin > 0.0 && b.min_margin > 0.0;
    return {ok, fmt("case (i): %g/50 strict, min margin %.3e; case (ii): %g/50 strict, min margin %.3e", static_cast<double>(a.passes),
                    a.min_margin, static_cast<double>(b.passes), b.min_margin)};
}

// 6
Verdict envelope() {
    const auto s = envelope_sweep(6001, 100);
    return {s.instances == 100 && s.violations == 0,
            fmt("%g instances, %g violations, min relative margin %.3e", static_cast<double>(s.instances),
                static_cast<double>(s.violations), s.min_margin)};
}

// 7
Verdict lower_bound() {
    const auto s = lower_bound_sweep(7001, 50);
    return {s.instances == 50 && s.violations == 0 && s.min_margin >= 0.0,
            fmt("%g instances, %g violations, min slack %.3e (>= 0)", static_cast<double>(s.instances), static_cast<double>(s.violations),
                s.min_margin)};
}

// 8
Verdict quadrature() {
    const BarrierTable tab(2.0, 0.0);
    const double eu = std::abs(tab.xi_upper_time(1.0) - std::log(2.0));
    const double el = std::abs(tab.xi_lower_time(2.0) - std::log(2.0));
    double trip = 0.0;
    const BarrierTable t2(2.5, 0.7);
    for (const auto* t : {&tab, &t2})
        for (double f : {1.0, 1.1, 1.5, 2.0, 5.0, 20.0, 100.0}) {
            const double r = f * t->r0();
            trip = std::max(trip, std::abs(t->invert(t->xi_upper_time(r), Branch::Upper) - r) / r);
            trip = std::max(trip, std::abs(t->invert(t->xi_lower_time(r), Branch::Lower) - r) / r);
        }
    return {eu <= 1e-9 && el <= 1e-8 && trip <= 1e-7,
            fmt("|Xi^*(1) - ln2| = %.2e (1e-9); |Xi_*(2) - ln2| = %.2e (1e-8); max relative round-trip error %.2e (1e-7)", eu, el, trip)};
}

// 9
Verdict gradient() {
    ObjectiveOptions oo;
    oo.penalty = 3.0;
    oo.integrate.rtol = 1e-13;
    oo.integrate.atol = 1e-15;
    oo.adjoint_rtol = 1e-12;
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) worst = std::max(worst, testing_support::gradient_relative_error(testing_support::random_instance(k), oo));
    return {worst <= 1e-4, fmt("20 instances, max relative error %.3e (<= 1e-4)", worst)};
}

// 10
Verdict quenching_end_to_end() {
    const auto sys = quench();
    const auto base = TargetSet::hyperplane(0, 1.0);
    const Vec y0 = vec2(0.0, 0.5);
    const auto r = solve_alpha(sys, base, y0, 0.1);
    const double oracle = testing_support::oracle_one_switch(0.5);
    const bool beats = r.w <= oracle + 2e-2;

    LadderOptions lo;
    lo.alpha0 = 0.1;
    lo.ratio = 0.5;
    lo.k_max = 3;
    const auto tr = alpha_ladder(sys, base, y0, lo);
    std::vector<double> norms;
    double hrel = 0.0;
    Trajectory last;
    for (std::size_t k = tr.rungs.size() - 2; k < tr.rungs.size(); ++k) {
        const auto tgt = base.inflated(tr.rungs[k].alpha);
        const auto cand = candidate_for(sys, tgt, y0, tr.rungs[k].schedule, 10.0);
        const auto rep = verify(sys, tgt, cand);
        hrel = std::max(hrel, rep.hamiltonian_residual / rep.hamiltonian_scale);
        norms.push_back(rep.terminal_adjoint_norm);
        last = cand.trajectory;
    }
    const auto q = quenching_conclusions(sys, last, norms);
    const bool ok = beats && q.sign_ok && hrel <= 1e-3 && (!q.decay_checked || q.decay_ratio < 0.7) && tr.violations == 0;
    return {ok, fmt("w = %.6f vs one-switch oracle %.6f (w <= oracle + 2e-2); y2(t) = %.4f (>= -1e-6); ", r.w, oracle, q.y2_terminal) +
                    fmt("Hamiltonian residual/scale %.3e (<= 1e-3); adjoint decay ratio %.3f (< 0.7)", hrel, q.decay_ratio)};
}

// 11
Verdict filippov() {
    struct Case {
        const char* name;
        ControlSystem sys;
        TargetSet base;
        Vec y0;
        double alpha;
    };
    const std::vector<Case> cases{{"toy", toy(), TargetSet::point(v1(1.0)), v1(0.0), 0.25},
                                  {"quenching", quench(), TargetSet::hyperplane(0, 1.0), vec2(0.0, 0.5), 0.1},
                                  {"blowup", radial_blowup(), TargetSet::point(Vec::Zero(2)), vec2(1.0, 0.0), 0.05}};
    bool ok = true;
    std::string d;
    for (const auto& c : cases) {
        const auto r = solve_alpha(c.sys, c.base, c.y0, c.alpha);
        const auto cs = classicalize(c.sys, r);
        const auto hit = hit_with_schedule(c.sys, c.base.inflated(c.alpha), c.y0, to_dirac(cs), 10.0);
        const double gap = hit.status == HitStatus::HitTarget ? std::abs(hit.time - r.w) : kInf;
        ok = ok && gap <= 1e-6;
        d += std::string(c.name) + fmt(" gap %.2e; ", gap);
    }
    return {ok, d + "(tol 1e-6)"};
}

std::string slurp(const fs::path& f) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// 12
Verdict determinism() {
    const char* env = std::getenv("TOSC_CONFIG_DIR");
    const fs::path dir = env ? fs::path(env) : fs::path("configs");
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir))
        if (f.path().extension() == ".json") files.push_back(f.path());
    std::sort(files.begin(), files.end());
    const auto root = fs::temp_directory_path() / "tosc_acceptance_determinism";
    fs::remove_all(root);
    std::size_t compared = 0, mismatches = 0;
    std::string bad;
    for (const auto& f : files) {
        auto cfg = cli::parse_config(cli::read_json_file(f));
        const auto a = root / (f.stem().string() + "_a"), b = root / (f.stem().string() + "_b");
        const auto oa = cli::run(cfg, a);
        cfg.solver.workers = 1;
        (void)cli::run(cfg, b);
        std::vector<std::string> names = oa.files;
        names.push_back("result.json");
        for (const auto& n : names) {
            ++compared;
            if (slurp(a / n) != slurp(b / n)) {
                ++mismatches;
                bad += " " + f.stem().string() + "/" + n;
            }
        }
    }
    return {files.size() >= 3 && mismatches == 0,
            fmt("%g configs, %g artifacts byte-compared across reruns (default vs 1 worker), %g mismatches", static_cast<double>(files.size()),
                static_cast<double>(compared), static_cast<double>(mismatches)) +
                bad};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
        {"closed-form blowup time", closed_form_blowup_time},
        {"adjoint transversality decay", adjoint_decay},
        {"toy time-optimal solve", toy_solve},
        {"alpha-ladder exactness on the toy", toy_ladder},
        {"quenching monotonicity sweep", monotonicity},
        {"blowup envelope bracket", envelope},
        {"blowup lower bound", lower_bound},
        {"barrier quadrature oracles", quadrature},
        {"adjoint gradient check", gradient},
        {"quenching end-to-end", quenching_end_to_end},
        {"Filippov classicalization", filippov},
        {"determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        if (!v.pass) ++failed;
        std::printf("C%zu %s %s: %s\n", i + 1, v.pass ? "PASS" : "FAIL", criteria[i].first, v.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
