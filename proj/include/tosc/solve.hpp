#pragma once

// Minimum-time relaxed controls by direct transcription on the unit-time
// rescaling. The decision variables are the horizon w and per-cell atoms and
// weights; J = w + mu d(T(y(w)), Q_alpha)^2 is minimized by a spectral
// projected gradient method with adjoint gradients, for increasing mu.

#include "tosc/integrate.hpp"

#include <numeric>

namespace tosc {

/// Unit-time transcription: cells on a nondecreasing grid over [0, 1].
/// Zero-length cells are allowed and carry no control.
struct Design {
    double w = 1.0;
    std::vector<double> grid;
    std::vector<Cell> cells;
};

namespace detail {

/// Real-time schedule on [0, w] with zero-length cells dropped; `map` sends
/// schedule cells back to design cells.
struct RealSchedule {
    RelaxedSchedule schedule;
    std::vector<std::size_t> map;
};

inline RealSchedule real_schedule(const Design& d) {
    if (d.grid.size() != d.cells.size() + 1 || d.cells.empty())
        fail(ErrorKind::InvalidArgument, "solve", "design grid must have one more node than cells");
    if (!(d.w > 0.0) || !std::isfinite(d.w)) fail(ErrorKind::InvalidArgument, "solve", "horizon w must be finite and positive");
    RealSchedule out;
    std::vector<double> grid{d.w * d.grid.front()};
    std::vector<Cell> cells;
    for (std::size_t c = 0; c < d.cells.size(); ++c) {
        if (d.grid[c + 1] < d.grid[c]) fail(ErrorKind::InvalidArgument, "solve", "design grid must be nondecreasing");
        if (d.grid[c + 1] == d.grid[c]) continue;
        grid.push_back(d.w * d.grid[c + 1]);
        cells.push_back(d.cells[c]);
        out.map.push_back(c);
    }
    if (cells.empty()) fail(ErrorKind::InvalidArgument, "solve", "design has no cell of positive length");
    out.schedule = RelaxedSchedule::unnormalized(std::move(grid), std::move(cells));
    return out;
}

/// Euclidean projection onto the probability simplex.
inline void project_simplex(std::vector<double>& v) {
    std::vector<double> s = v;
    std::sort(s.begin(), s.end(), std::greater<>());
    double acc = 0.0, theta = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        acc += s[k];
        const double t = (acc - 1.0) / static_cast<double>(k + 1);
        if (k + 1 == s.size() || s[k + 1] <= t) {
            theta = t;
            break;
        }
    }
    for (double& x : v) x = std::max(x - theta, 0.0);
}

}  // namespace detail

/// Uniform unit grid with `cells` cells.
[[nodiscard]] inline std::vector<double> unit_grid(int cells) {
    if (cells < 1) fail(ErrorKind::InvalidArgument, "solve", "need at least one cell");
    std::vector<double> g(static_cast<std::size_t>(cells) + 1);
    for (int c = 0; c <= cells; ++c) g[static_cast<std::size_t>(c)] = static_cast<double>(c) / cells;
    g.back() = 1.0;
    return g;
}

// ---------------------------------------------------------------------------
// Objective and gradient

struct ObjectiveOptions {
    double penalty = 1.0;
    double time_weight = 1.0;
    IntegrateOptions integrate;
    double adjoint_rtol = 1e-10;
    bool gradient = true;
};

struct ObjectiveGradient {
    double value = 0.0;
    double distance = 0.0;  // d(T(y(w)), Q_alpha), 0 once the target is reached
    HitStatus status = HitStatus::MaxTimeReached;
    double hit_time = 0.0;
    double dw = 0.0;
    double speed = 0.0;  // |d/dt d(T(y(t)))| at t = w from the terminal field
    std::vector<std::vector<Vec>> datoms;
    std::vector<std::vector<double>> dweights;
};

/// J = time_weight w + penalty d(T(y(w)), Q_alpha)^2 and its gradient with
/// respect to (w, atoms, weights). A trajectory that reaches Q_alpha before w
/// has d = 0 and J = time_weight w.
[[nodiscard]] inline ObjectiveGradient objective_gradient(const ControlSystem& sys, const TargetSet& tgt, const Design& design,
                                                          const Vec& y0, const ObjectiveOptions& opt = {}) {
    const auto rs = detail::real_schedule(design);
    const RelaxedSchedule& sched = rs.schedule;
    const double w = design.w;
    IntegrateOptions io = opt.integrate;
    io.stop_at_target = true;
    const Trajectory tr = integrate_forward(sys, sched, y0, &tgt, w, io);

    ObjectiveGradient out;
    out.status = tr.hit.status;
    out.hit_time = tr.end_time();
    if (tr.hit.status == HitStatus::SingularStall || tr.hit.status == HitStatus::Diverged)
        fail(ErrorKind::SingularState, "solve", std::string("forward integration ended with ") + std::string(to_string(tr.hit.status)));
    out.datoms.resize(design.cells.size());
    out.dweights.resize(design.cells.size());
    for (std::size_t c = 0; c < design.cells.size(); ++c) {
        out.datoms[c].assign(design.cells[c].size(), Vec::Zero(sys.m));
        out.dweights[c].assign(design.cells[c].size(), 0.0);
    }
    out.dw = opt.time_weight;
    out.value = opt.time_weight * w;
    if (tr.hit.status == HitStatus::HitTarget) return out;

    const Vec yT = tr.final_state();
    const Vec Y = sys.to_target(yT);
    const Vec r = Y - tgt.project(Y);
    out.distance = r.norm();
    out.value += opt.penalty * out.distance * out.distance;
    if (!opt.gradient || !(out.distance > 0.0) || opt.penalty == 0.0) return out;

    const Mat JT = sys.target_jacobian_at(yT);
    {
        const Vec F = relaxed_field(sys, w, yT, sched.cell_at(w));
        out.speed = std::abs((JT * (r / out.distance)).dot(F));
    }
    const Vec pT = JT * (2.0 * opt.penalty * r);
    std::size_t kmax = 0;
    for (const auto& c : sched.cells()) kmax = std::max(kmax, c.size());
    const int m = sys.m;
    const int stride = m + 1;
    const int last = static_cast<int>(kmax) * stride;
    double pF = 0.0;

    AdjointQuadrature quad;
    quad.dim = last + 1;
    quad.integrand = [&](std::size_t cell, double t, const Vec& y, const Vec& psi, Eigen::Ref<Vec> g) {
        const Cell& cc = sched.cells()[cell];
        double hf = 0.0;
        for (std::size_t i = 0; i < cc.size(); ++i) {
            const int off = static_cast<int>(i) * stride;
            const Vec f = eval_field(sys, t, y, cc.atoms[i]);
            const double pf = psi.dot(f);
            g.segment(off, m) = cc.weights[i] * (sys.input_jacobian(t, y, cc.atoms[i]).transpose() * psi);
            g[off + m] = pf;
            hf += cc.weights[i] * pf;
        }
        g[last] = hf;
    };
    quad.accumulate = [&](std::size_t cell, double, double, const Vec& integral) {
        const std::size_t dc = rs.map[cell];
        for (std::size_t i = 0; i < design.cells[dc].size(); ++i) {
            const int off = static_cast<int>(i) * stride;
            out.datoms[dc][i] += integral.segment(off, m);
            out.dweights[dc][i] += integral[off + m];
        }
        pF += integral[last];
    };
    AdjointOptions ao;
    ao.rtol = opt.adjoint_rtol;
    ao.quadrature = &quad;
    bool jumps = false;
    for (double b : sys.breakpoints) jumps = jumps || (b > 0.0 && b < w);
    ao.record = jumps;
    const AdjointTrajectory adj = integrate_adjoint(sys, tr, sched, pT, false, ao);

    // explicit time dependence enters through the jumps of B, g, h at breakpoints
    double jump = 0.0;
    for (double b : sys.breakpoints) {
        if (!(b > 0.0 && b < w)) continue;
        const Vec yb = tr.state_at(b);
        const Cell& cc = sched.cell_at(b);
        const Vec fm = relaxed_field(sys, b, yb, cc);
        const Vec fp = relaxed_field(sys, std::nextafter(b, kInf), yb, cc);
        jump += b * adj.covector_at(b).dot(fp - fm);
    }
    out.dw = opt.time_weight + (pF + jump) / w;
    return out;
}

// ---------------------------------------------------------------------------
// Solver

struct SolveOptions {
    int cells = 32;
    int atoms = 0;  // 0 selects n + 2
    int multistarts = 8;
    std::vector<double> penalties{10.0, 100.0, 1e3, 1e4};
    int max_iterations = 300;  // per penalty round
    double stationarity_tol = 1e-9;
    double t_max = 10.0;
    double w_min = 1e-6;
    std::uint64_t seed = 1;
    IntegrateOptions integrate;
    double adjoint_rtol = 1e-10;
    unsigned workers = 0;  // 0 selects worker_count()
};

struct SolveResult {
    double w = kInf;
    double alpha = 0.0;
    RelaxedSchedule schedule;  // real time on [0, w]
    Design design;             // unit-time form of `schedule`
    std::optional<ClassicalSchedule> classical;
    Trajectory trajectory;
    double terminal_distance = kInf;
    double objective = kInf;
    bool converged = false;
    std::string reason;
    int iterations = 0;
    std::size_t start_index = 0;
    std::size_t feasible_starts = 0;
    std::uint64_t hash = 0;
};

namespace detail {

struct Layout {
    int m = 0;
    std::vector<std::size_t> offset;  // start of cell c in the flat vector
    std::vector<std::size_t> atoms;
    std::size_t size = 1;
};

inline Layout make_layout(const Design& d, int m) {
    Layout L;
    L.m = m;
    for (const auto& c : d.cells) {
        L.offset.push_back(L.size);
        L.atoms.push_back(c.size());
        L.size += c.size() * static_cast<std::size_t>(m + 1);
    }
    return L;
}

inline Vec pack(const Design& d, const Layout& L) {
    Vec x(static_cast<Eigen::Index>(L.size));
    x[0] = d.w;
    for (std::size_t c = 0; c < d.cells.size(); ++c) {
        auto o = static_cast<Eigen::Index>(L.offset[c]);
        for (const auto& a : d.cells[c].atoms) {
            x.segment(o, L.m) = a;
            o += L.m;
        }
        for (double v : d.cells[c].weights) x[o++] = v;
    }
    return x;
}

inline Design unpack(const Vec& x, const Design& like, const Layout& L) {
    Design d = like;
    d.w = x[0];
    for (std::size_t c = 0; c < d.cells.size(); ++c) {
        auto o = static_cast<Eigen::Index>(L.offset[c]);
        for (auto& a : d.cells[c].atoms) {
            a = x.segment(o, L.m);
            o += L.m;
        }
        for (double& v : d.cells[c].weights) v = x[o++];
    }
    return d;
}

inline Vec pack_gradient(const ObjectiveGradient& g, const Layout& L) {
    Vec x(static_cast<Eigen::Index>(L.size));
    x[0] = g.dw;
    for (std::size_t c = 0; c < L.offset.size(); ++c) {
        auto o = static_cast<Eigen::Index>(L.offset[c]);
        for (const auto& a : g.datoms[c]) {
            x.segment(o, L.m) = a;
            o += L.m;
        }
        for (double v : g.dweights[c]) x[o++] = v;
    }
    return x;
}

inline Vec project_flat(const ControlSystem& sys, const Vec& x, const Layout& L, double w_min, double w_max) {
    Vec y = x;
    y[0] = std::clamp(x[0], w_min, w_max);
    for (std::size_t c = 0; c < L.offset.size(); ++c) {
        auto o = static_cast<Eigen::Index>(L.offset[c]);
        for (std::size_t i = 0; i < L.atoms[c]; ++i) {
            y.segment(o, L.m) = sys.control_set.project(Vec(x.segment(o, L.m)));
            o += L.m;
        }
        std::vector<double> wts(L.atoms[c]);
        for (std::size_t i = 0; i < L.atoms[c]; ++i) wts[i] = x[o + static_cast<Eigen::Index>(i)];
        project_simplex(wts);
        for (std::size_t i = 0; i < L.atoms[c]; ++i) y[o + static_cast<Eigen::Index>(i)] = wts[i];
    }
    return y;
}

// Diagonal metric: control entries scaled by the inverse real cell length;
// the horizon entry balances the penalty curvature 2 mu v^2 in w against the
// controls' 2 mu (cell length) s^2, taking the sensitivity s as 1.
inline Vec metric(const Design& d, const Layout& L, double w, double speed) {
    Vec D = Vec::Ones(static_cast<Eigen::Index>(L.size));
    D[0] = w / static_cast<double>(std::max<std::size_t>(L.offset.size(), 1)) / std::max(speed * speed, 1e-2);
    for (std::size_t c = 0; c < L.offset.size(); ++c) {
        const double len = w * (d.grid[c + 1] - d.grid[c]);
        const double s = len > 0.0 ? 1.0 / len : 0.0;
        const auto n = static_cast<Eigen::Index>(L.atoms[c] * static_cast<std::size_t>(L.m + 1));
        D.segment(static_cast<Eigen::Index>(L.offset[c]), n).setConstant(s);
    }
    return D;
}

struct SpgResult {
    Design design;
    double value = kInf;
    int iterations = 0;
    bool converged = false;
    std::string reason;
};

/// Nonmonotone spectral projected gradient for one penalty value.
inline SpgResult spg(const ControlSystem& sys, const TargetSet& tgt, const Vec& y0, const Design& start, double penalty,
                     const SolveOptions& so) {
    const Layout L = make_layout(start, sys.m);
    ObjectiveOptions oo;
    oo.penalty = penalty;
    oo.integrate = so.integrate;
    oo.adjoint_rtol = so.adjoint_rtol;
    auto value = [&](const Vec& x) {
        ObjectiveOptions v = oo;
        v.gradient = false;
        try {
            return objective_gradient(sys, tgt, unpack(x, start, L), y0, v).value;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::SingularState) throw;
            return kInf;
        }
    };
    double speed = 1.0, speed_t = 1.0;
    auto gradient = [&](const Vec& x, double& v) {
        const auto og = objective_gradient(sys, tgt, unpack(x, start, L), y0, oo);
        if (og.speed > 0.0) v = og.speed;
        return pack_gradient(og, L);
    };

    Vec x = project_flat(sys, pack(start, L), L, so.w_min, so.t_max);
    double f = value(x);
    SpgResult out;
    if (!std::isfinite(f)) {
        out.design = unpack(x, start, L);
        out.reason = "start point cannot be evaluated";
        return out;
    }
    Vec g = gradient(x, speed);
    constexpr int kMemory = 8;
    std::vector<double> hist{f};
    auto stationarity = [&](const Vec& xx, const Vec& gg) {
        const Vec D = metric(start, L, xx[0], speed);
        return (project_flat(sys, xx - D.cwiseProduct(gg), L, so.w_min, so.t_max) - xx).cwiseAbs().maxCoeff();
    };
    double lam = 1.0 / std::max(1e-12, (metric(start, L, x[0], speed).cwiseProduct(g)).cwiseAbs().maxCoeff()) * 0.1;
    int stall = 0;
    for (int it = 0; it < so.max_iterations; ++it) {
        out.iterations = it + 1;
        const double st = stationarity(x, g);
        if (st <= so.stationarity_tol) {
            out.converged = true;
            out.reason = "stationary";
            break;
        }
        const Vec D = metric(start, L, x[0], speed);
        const Vec dir = project_flat(sys, x - lam * D.cwiseProduct(g), L, so.w_min, so.t_max) - x;
        const double gd = g.dot(dir);
        if (!(gd < 0.0)) {
            out.converged = st <= 1e-6;
            out.reason = out.converged ? "no descent direction at the noise floor" : "NoDescent";
            break;
        }
        const double fmax = *std::max_element(hist.begin(), hist.end());
        double t = 1.0, ft = kInf;
        Vec xt;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            xt = x + t * dir;
            ft = value(xt);
            if (std::isfinite(ft) && ft <= fmax + 1e-4 * t * gd) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            out.converged = st <= 1e-6;
            out.reason = out.converged ? "line search at the noise floor" : "NoDescent";
            break;
        }
        Vec gt;
        try {
            speed_t = speed;
            gt = gradient(xt, speed_t);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::SingularState) throw;
            out.reason = "NoDescent";
            break;
        }
        const Vec s = xt - x;
        const Vec yv = gt - g;
        const Vec Dinv = D.unaryExpr([](double v) { return v > 0.0 ? 1.0 / v : 0.0; });
        const double sts = s.dot(Dinv.cwiseProduct(s));
        const double sty = s.dot(yv);
        lam = sty > 0.0 ? std::clamp(sts / sty, 1e-12, 1e12) : 1e6 * lam;
        lam = std::min(lam, 1e12);
        const double rel = std::abs(f - ft) / (1.0 + std::abs(f));
        stall = rel < 1e-15 ? stall + 1 : 0;
        x = xt;
        f = ft;
        g = gt;
        speed = speed_t;
        hist.push_back(f);
        if (hist.size() > kMemory) hist.erase(hist.begin());
        if (stall >= 5) {
            out.converged = true;
            out.reason = "objective stalled";
            break;
        }
    }
    if (out.reason.empty()) out.reason = "iteration limit";
    out.design = unpack(x, start, L);
    out.value = f;
    return out;
}

/// Re-integrates the design with its last cell continued up to t_max and
/// cuts the schedule at the first hit of tgt.
inline std::optional<SolveResult> finalize(const ControlSystem& sys, const TargetSet& tgt, const Vec& y0, const Design& d,
                                           const SolveOptions& so) {
    const auto rs = real_schedule(d);
    const double horizon = so.t_max;
    const RelaxedSchedule ext = rs.schedule.truncated(horizon);
    Trajectory tr = integrate_forward(sys, ext, y0, &tgt, horizon, so.integrate);
    if (tr.hit.status != HitStatus::HitTarget) return std::nullopt;
    SolveResult r;
    r.w = tr.hit.time;
    r.alpha = tgt.alpha();
    r.schedule = ext.truncated(r.w);
    r.design.w = r.w;
    for (double t : r.schedule.grid()) r.design.grid.push_back(t / r.w);
    r.design.grid.back() = 1.0;
    r.design.cells = r.schedule.cells();
    r.trajectory = std::move(tr);
    r.terminal_distance = r.trajectory.hit.terminal_distance;
    std::vector<double> flat = r.schedule.flatten();
    flat.push_back(r.w);
    r.hash = hash_doubles(flat);
    return r;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t k) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Design random_design(const ControlSystem& sys, const TargetSet& tgt, const Vec& y0, const SolveOptions& so, Rng& rng) {
    const int K = so.atoms > 0 ? so.atoms : sys.n + 2;
    Design d;
    d.grid = unit_grid(so.cells);
    for (int c = 0; c < so.cells; ++c) {
        Cell cell;
        double sum = 0.0;
        for (int k = 0; k < K; ++k) {
            cell.atoms.push_back(sys.control_set.sample_boundary(rng));
            cell.weights.push_back(rng.uniform(0.05, 1.0));
            sum += cell.weights.back();
        }
        for (double& v : cell.weights) v /= sum;
        d.cells.push_back(std::move(cell));
    }
    // initial horizon: hit time of the schedule stretched over t_max
    d.w = so.t_max;
    const auto tr = integrate_forward(sys, real_schedule(d).schedule, y0, &tgt, so.t_max, so.integrate);
    if (tr.hit.status == HitStatus::HitTarget) d.w = tr.hit.time;
    else if (tr.hit.status != HitStatus::MaxTimeReached) d.w = std::max(tr.end_time(), so.w_min);
    return d;
}

inline bool better(const SolveResult& a, const SolveResult& b) {
    if (a.w != b.w) return a.w < b.w;
    if (a.terminal_distance != b.terminal_distance) return a.terminal_distance < b.terminal_distance;
    return a.hash < b.hash;
}

}  // namespace detail

/// Minimum hit time of Q_alpha from y0. Without `init`, `multistarts`
/// random schedules with atoms on the boundary of U are optimized; with it,
/// only `init` is.
[[nodiscard]] inline SolveResult solve_alpha(const ControlSystem& sys, const TargetSet& base, const Vec& y0, double alpha,
                                             const std::optional<Design>& init = std::nullopt, const SolveOptions& so = {}) {
    if (!(alpha >= 0.0)) fail(ErrorKind::InvalidArgument, "solve", "alpha must be >= 0");
    const TargetSet tgt = base.inflated(alpha);
    const double d0 = base.base_distance(sys.to_target(y0));
    if (!(alpha < d0)) fail(ErrorKind::InvalidArgument, "solve", "y0 already lies in the inflated target");

    std::vector<Design> starts;
    if (init) {
        starts.push_back(*init);
    } else {
        for (int k = 0; k < so.multistarts; ++k) {
            Rng rng(detail::mix_seed(so.seed, static_cast<std::uint64_t>(k)));
            starts.push_back(detail::random_design(sys, tgt, y0, so, rng));
        }
    }
    std::vector<std::optional<SolveResult>> results(starts.size());
    parallel_for(
        starts.size(),
        [&](std::size_t i) {
            Design d = starts[i];
            int iters = 0;
            bool conv = true;
            std::string reason;
            double value = kInf;
            for (double mu : so.penalties) {
                const auto r = detail::spg(sys, tgt, y0, d, mu, so);
                d = r.design;
                iters += r.iterations;
                value = r.value;
                conv = r.converged;
                reason = r.reason;
                if (!std::isfinite(r.value)) break;
            }
            auto fin = detail::finalize(sys, tgt, y0, d, so);
            if (!fin) return;
            fin->converged = conv;
            fin->reason = reason;
            fin->iterations = iters;
            fin->objective = value;
            fin->start_index = i;
            results[i] = std::move(fin);
        },
        so.workers > 0 ? so.workers : worker_count());

    std::optional<SolveResult> best;
    std::size_t feasible = 0;
    for (auto& r : results) {
        if (!r) continue;
        ++feasible;
        if (!best || detail::better(*r, *best)) best = std::move(r);
    }
    if (!best) fail(ErrorKind::Infeasible, "solve", "no start reaches the inflated target within t_max");
    best->feasible_starts = feasible;
    if (sys.affine && sys.control_set.is_convex()) best->classical = filippov_schedule(sys, best->schedule);
    return std::move(*best);
}

/// Per-cell Filippov selection of a relaxed result.
[[nodiscard]] inline ClassicalSchedule classicalize(const ControlSystem& sys, const SolveResult& result) {
    return filippov_schedule(sys, result.schedule);
}

/// Hit time of Q_alpha under a schedule whose last cell is continued to t_max.
[[nodiscard]] inline HitInfo hit_with_schedule(const ControlSystem& sys, const TargetSet& tgt, const Vec& y0,
                                               const RelaxedSchedule& s, double t_max, const IntegrateOptions& opt = {}) {
    const double horizon = std::max(t_max, s.end());
    return integrate_forward(sys, s.truncated(horizon), y0, &tgt, horizon, opt).hit;
}

// ---------------------------------------------------------------------------
// Inflation ladder

struct LadderOptions {
    double alpha0 = 0.0;  // 0 selects d(y0, Q) / 2
    double ratio = 0.5;
    int k_max = 12;       // number of rungs
    double monotone_tol = 1e-9;
};

struct LadderRung {
    int k = 0;
    double alpha = 0.0;
    double w = 0.0;
    double solved_w = 0.0;  // before backfilling
    bool converged = false;
    bool backfilled = false;
    RelaxedSchedule schedule;
};

struct LadderTrace {
    std::vector<LadderRung> rungs;
    double limit = kInf;
    std::size_t raw_violations = 0;  // decreases of the solved w across rungs
    std::size_t violations = 0;      // after backfilling
    std::size_t backfills = 0;
    SolveResult final;

    [[nodiscard]] bool monotone() const { return violations == 0; }
};

/// Aitken extrapolation of the last three values, falling back to the last.
[[nodiscard]] inline double extrapolate_limit(const std::vector<double>& w) {
    if (w.empty()) return kInf;
    const std::size_t n = w.size();
    if (n < 3) return w.back();
    const double d1 = w[n - 1] - w[n - 2], d0 = w[n - 2] - w[n - 3];
    const double dd = d1 - d0;
    if (!(std::abs(dd) > 1e-14 * (1.0 + std::abs(w.back())))) return w.back();
    const double est = w[n - 1] - d1 * d1 / dd;
    // only trust a correction in the direction of travel and of bounded size
    const bool same_dir = (est - w.back()) * d1 >= 0.0;
    if (!same_dir || std::abs(est - w.back()) > 10.0 * std::abs(d1) + 1e-12) return w.back();
    return est;
}

/// Counts decreases of w across rungs, then replaces every rung beaten by its
/// successor with the successor's schedule (which also hits the larger
/// target), scanning from the last rung down.
inline void backfill_ladder(LadderTrace& tr, const ControlSystem& sys, const TargetSet& base, const Vec& y0, const LadderOptions& lo,
                            const SolveOptions& so) {
    tr.raw_violations = tr.violations = tr.backfills = 0;
    for (std::size_t k = 0; k + 1 < tr.rungs.size(); ++k)
        if (tr.rungs[k].w > tr.rungs[k + 1].w + lo.monotone_tol) ++tr.raw_violations;
    for (std::size_t k = tr.rungs.size() - 1; k-- > 0;) {
        auto& cur = tr.rungs[k];
        const auto& nxt = tr.rungs[k + 1];
        if (!(cur.w > nxt.w + lo.monotone_tol)) continue;
        const auto hit = hit_with_schedule(sys, base.inflated(cur.alpha), y0, nxt.schedule, so.t_max, so.integrate);
        if (hit.status == HitStatus::HitTarget && hit.time < cur.w) {
            cur.w = hit.time;
            cur.schedule = nxt.schedule.truncated(hit.time);
            cur.backfilled = true;
            ++tr.backfills;
        }
    }
    std::vector<double> ws;
    for (std::size_t k = 0; k < tr.rungs.size(); ++k) {
        ws.push_back(tr.rungs[k].w);
        if (k + 1 < tr.rungs.size() && tr.rungs[k].w > tr.rungs[k + 1].w + lo.monotone_tol) ++tr.violations;
    }
    tr.limit = extrapolate_limit(ws);
}

/// Solves the rungs alpha_k = alpha0 ratio^k, warm-starting each from the
/// previous schedule. A later rung's schedule also hits every earlier, larger
/// target, so a rung beaten by its successor is backfilled with it.
[[nodiscard]] inline LadderTrace alpha_ladder(const ControlSystem& sys, const TargetSet& base, const Vec& y0,
                                              const LadderOptions& lo = {}, const SolveOptions& so = {}) {
    if (!(lo.ratio > 0.0 && lo.ratio < 1.0)) fail(ErrorKind::InvalidArgument, "solve", "ladder ratio must lie in (0, 1)");
    if (lo.k_max < 1) fail(ErrorKind::InvalidArgument, "solve", "ladder needs at least one rung");
    const double d0 = base.base_distance(sys.to_target(y0));
    const double a0 = lo.alpha0 > 0.0 ? lo.alpha0 : 0.5 * d0;
    if (!(a0 < d0)) fail(ErrorKind::InvalidArgument, "solve", "alpha0 must be below d(y0, Q)");
    LadderTrace out;
    std::optional<Design> warm;
    std::vector<SolveResult> results;
    for (int k = 0; k < lo.k_max; ++k) {
        const double alpha = a0 * std::pow(lo.ratio, k);
        if (warm) {
            // horizon from the previous schedule continued into the smaller target
            const auto& prev = results.back();
            const auto hit = hit_with_schedule(sys, base.inflated(alpha), y0, prev.schedule, so.t_max, so.integrate);
            if (hit.status == HitStatus::HitTarget) {
                Design d = prev.design;
                d.w = hit.time;
                // keep the grid uniform in unit time
                d.grid = unit_grid(static_cast<int>(d.cells.size()));
                warm = d;
            }
        }
        SolveResult r = solve_alpha(sys, base, y0, alpha, warm, so);
        LadderRung rung;
        rung.k = k;
        rung.alpha = alpha;
        rung.w = rung.solved_w = r.w;
        rung.converged = r.converged;
        rung.schedule = r.schedule;
        Design next = r.design;
        next.grid = unit_grid(static_cast<int>(next.cells.size()));
        warm = next;
        out.rungs.push_back(rung);
        results.push_back(std::move(r));
    }
    backfill_ladder(out, sys, base, y0, lo, so);
    out.final = std::move(results.back());
    return out;
}

}  // namespace tosc
