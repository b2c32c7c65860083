#pragma once

// Adaptive Dormand-Prince 5(4) integration of relaxed dynamics with target
// events, and backward integration of the adjoint psi' = -f_y psi.

#include "tosc/relaxed.hpp"
#include "tosc/target.hpp"

#include <array>
#include <memory>

namespace tosc {

struct IntegrateOptions {
    double rtol = 1e-9;
    double atol = 1e-11;
    double hit_tol = 1e-8;
    double h_min = 1e-14;
    double h_init = 0.0;  // 0 selects an automatic initial step
    std::size_t max_steps = 2'000'000;
    bool use_charts = true;
    bool stop_at_target = true;
    double divergence_norm = 1e150;
};

enum class HitStatus { HitTarget, MaxTimeReached, SingularStall, Diverged };

[[nodiscard]] constexpr std::string_view to_string(HitStatus s) noexcept {
    switch (s) {
        case HitStatus::HitTarget: return "HitTarget";
        case HitStatus::MaxTimeReached: return "MaxTimeReached";
        case HitStatus::SingularStall: return "SingularStall";
        case HitStatus::Diverged: return "Diverged";
    }
    return "Unknown";
}

struct HitInfo {
    HitStatus status = HitStatus::MaxTimeReached;
    double time = 0.0;
    double terminal_distance = kInf;
};

/// One accepted step with its continuous extension x(t0 + theta h), valid
/// for t in [t0, t1] (t1 < t0 + h when the step was cut by an event).
struct DenseSegment {
    double t0 = 0.0;
    double h = 0.0;
    double t1 = 0.0;
    int chart = -1;  // index into Trajectory::charts, -1 for original coordinates
    std::size_t cell = 0;
    Mat r;  // dim x 5 interpolation coefficients

    [[nodiscard]] Vec eval(double t) const {
        const double th = h != 0.0 ? (t - t0) / h : 0.0;
        const double th1 = 1.0 - th;
        return r.col(0) + th * (r.col(1) + th1 * (r.col(2) + th * (r.col(3) + th1 * r.col(4))));
    }
};

class Trajectory {
public:
    std::vector<double> times;
    std::vector<Vec> states;  // original coordinates
    HitInfo hit;
    std::vector<DenseSegment> segments;
    std::vector<Chart> charts;

    [[nodiscard]] double start_time() const { return times.front(); }
    [[nodiscard]] double end_time() const { return times.back(); }
    [[nodiscard]] const Vec& final_state() const { return states.back(); }

    [[nodiscard]] Vec segment_state(const DenseSegment& s, double t) const {
        const Vec x = s.eval(t);
        return s.chart >= 0 ? charts[static_cast<std::size_t>(s.chart)].from_chart(x) : x;
    }

    /// State at time t by dense output (clamped to the covered interval).
    [[nodiscard]] Vec state_at(double t) const {
        if (segments.empty() || t <= times.front()) return states.front();
        if (t >= times.back()) return states.back();
        const auto it = std::upper_bound(segments.begin(), segments.end(), t,
                                         [](double v, const DenseSegment& s) { return v < s.t1; });
        const auto& s = it == segments.end() ? segments.back() : *it;
        return segment_state(s, std::clamp(t, s.t0, s.t1));
    }
};

namespace detail {

struct Dp5 {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784, a76 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525,
                            e7 = -1.0 / 40;
    static constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                            d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                            d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;
};

struct Dp5Step {
    Vec x_new;
    Vec err;
    std::array<Vec, 7> k;  // k[0] = f(t, x) ... k[6] = f(t + h, x_new)
};

/// One trial step; throws whatever rhs throws.
template <class Rhs>
Dp5Step dp5_attempt(Rhs&& rhs, double t, const Vec& x, const Vec& k1, double h) {
    using D = Dp5;
    Dp5Step s;
    s.k[0] = k1;
    s.k[1] = rhs(t + D::c2 * h, Vec(x + h * D::a21 * k1));
    s.k[2] = rhs(t + D::c3 * h, Vec(x + h * (D::a31 * k1 + D::a32 * s.k[1])));
    s.k[3] = rhs(t + D::c4 * h, Vec(x + h * (D::a41 * k1 + D::a42 * s.k[1] + D::a43 * s.k[2])));
    s.k[4] = rhs(t + D::c5 * h, Vec(x + h * (D::a51 * k1 + D::a52 * s.k[1] + D::a53 * s.k[2] + D::a54 * s.k[3])));
    s.k[5] = rhs(t + h, Vec(x + h * (D::a61 * k1 + D::a62 * s.k[1] + D::a63 * s.k[2] + D::a64 * s.k[3] + D::a65 * s.k[4])));
    s.x_new = x + h * (D::a71 * k1 + D::a73 * s.k[2] + D::a74 * s.k[3] + D::a75 * s.k[4] + D::a76 * s.k[5]);
    s.k[6] = rhs(t + h, s.x_new);
    s.err = h * (D::e1 * k1 + D::e3 * s.k[2] + D::e4 * s.k[3] + D::e5 * s.k[4] + D::e6 * s.k[5] + D::e7 * s.k[6]);
    return s;
}

inline Mat dp5_dense(const Vec& x, const Dp5Step& s, double h) {
    using D = Dp5;
    const auto n = x.size();
    Mat r(n, 5);
    const Vec ydiff = s.x_new - x;
    const Vec bspl = h * s.k[0] - ydiff;
    r.col(0) = x;
    r.col(1) = ydiff;
    r.col(2) = bspl;
    r.col(3) = ydiff - h * s.k[6] - bspl;
    r.col(4) = h * (D::d1 * s.k[0] + D::d3 * s.k[2] + D::d4 * s.k[3] + D::d5 * s.k[4] + D::d6 * s.k[5] + D::d7 * s.k[6]);
    return r;
}

inline double mixed_error_norm(const Vec& err, const Vec& x, const Vec& x_new, double rtol, double atol) {
    double acc = 0.0;
    for (int i = 0; i < err.size(); ++i) {
        const double sc = atol + rtol * std::max(std::abs(x[i]), std::abs(x_new[i]));
        const double e = err[i] / sc;
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(std::max<Eigen::Index>(err.size(), 1)));
}

/// Norm-relative error; homogeneous of degree zero in (x, err).
inline double relative_error_norm(const Vec& err, const Vec& x, const Vec& x_new, double rtol) {
    const double sc = rtol * std::max(x.cwiseAbs().maxCoeff(), x_new.cwiseAbs().maxCoeff());
    if (!(sc > 0.0)) return err.cwiseAbs().maxCoeff() > 0.0 ? kInf : 0.0;
    return err.cwiseAbs().maxCoeff() / sc;
}

inline double step_factor(double err) {
    if (!(err > 0.0)) return 5.0;
    return std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
}

template <class Rhs>
double initial_step(Rhs&& rhs, double t, const Vec& x, const Vec& f0, double rtol, double atol, double span) {
    Vec sc = (atol + rtol * x.cwiseAbs().array()).matrix();
    const double d0 = (x.array() / sc.array()).matrix().norm() / std::sqrt(static_cast<double>(x.size()));
    const double d1 = (f0.array() / sc.array()).matrix().norm() / std::sqrt(static_cast<double>(x.size()));
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    double h1 = h0;
    try {
        const Vec f1 = rhs(t + h0, Vec(x + h0 * f0));
        const double d2 = ((f1 - f0).array() / sc.array()).matrix().norm() / std::sqrt(static_cast<double>(x.size())) / h0;
        const double dm = std::max(d1, d2);
        h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
    } catch (const Error&) {
        h1 = h0;
    }
    return std::min({100.0 * h0, h1, span});
}

inline std::vector<double> forward_breaks(const ControlSystem& sys, const RelaxedSchedule& sched, double t0, double t_max) {
    std::vector<double> b;
    for (double g : sched.grid())
        if (g > t0 && g < t_max) b.push_back(g);
    for (double g : sys.breakpoints)
        if (g > t0 && g < t_max) b.push_back(g);
    b.push_back(t_max);
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    return b;
}

}  // namespace detail

/// Integrates y' = sum_i lambda_i f(t, y, u_i) from t0 until the first time
/// d(T(y), Q_alpha) <= hit_tol (if `tgt` is given and stop_at_target), or t_max.
[[nodiscard]] inline Trajectory integrate_forward(const ControlSystem& sys, const RelaxedSchedule& control, const Vec& y0,
                                                  const TargetSet* tgt, double t_max, const IntegrateOptions& opt = {},
                                                  double t0 = 0.0) {
    if (control.empty()) fail(ErrorKind::InvalidArgument, "integrate", "control schedule is empty");
    if (!(t_max > t0)) fail(ErrorKind::InvalidArgument, "integrate", "t_max must exceed the start time");
    if (y0.size() != sys.n || !y0.allFinite()) fail(ErrorKind::InvalidArgument, "integrate", "initial state must be finite of dimension n");
    const bool events = tgt != nullptr && opt.stop_at_target;

    Trajectory tr;
    tr.times.push_back(t0);
    tr.states.push_back(y0);
    tr.hit = HitInfo{HitStatus::MaxTimeReached, t0, tgt ? tgt->distance(sys.to_target(y0)) : kInf};
    if (events && !(tr.hit.terminal_distance > opt.hit_tol))
        fail(ErrorKind::InvalidArgument, "integrate", "initial state already lies in the inflated target");

    int frame = -1;
    Vec x = y0;
    auto try_enter_chart = [&](const Vec& y) {
        if (!opt.use_charts || !sys.chart_at) return false;
        auto c = sys.chart_at(y, y0);
        if (!c) return false;
        tr.charts.push_back(std::move(*c));
        frame = static_cast<int>(tr.charts.size()) - 1;
        x = tr.charts.back().to_chart(y);
        return true;
    };
    try_enter_chart(y0);

    auto to_y = [&](const Vec& xx) { return frame >= 0 ? tr.charts[static_cast<std::size_t>(frame)].from_chart(xx) : xx; };
    auto dist = [&](const Vec& xx) -> double {
        if (!tgt) return kInf;
        const Vec q = frame >= 0 ? tr.charts[static_cast<std::size_t>(frame)].target_point(xx) : sys.to_target(xx);
        return tgt->distance(q);
    };

    const auto breaks = detail::forward_breaks(sys, control, t0, t_max);
    double t = t0;
    double h = opt.h_init;
    std::size_t steps = 0;

    auto finish = [&](HitStatus st) {
        tr.hit.status = st;
        tr.hit.time = tr.times.back();
        tr.hit.terminal_distance = tgt ? tgt->distance(sys.to_target(tr.states.back())) : kInf;
        return tr;
    };

    for (double b : breaks) {
        const double a = t;
        if (!(b > a)) continue;
        const std::size_t cell_idx = control.cell_index(0.5 * (a + b));
        const Cell& cell = control.cells()[cell_idx];
        auto rhs = [&](double tt, const Vec& xx) -> Vec {
            const double tc = clamp_open(tt, a, b);
            if (frame < 0) return relaxed_field(sys, tc, xx, cell);
            const auto& ch = tr.charts[static_cast<std::size_t>(frame)];
            Vec f = Vec::Zero(xx.size());
            for (std::size_t i = 0; i < cell.size(); ++i)
                if (cell.weights[i] != 0.0) f += cell.weights[i] * ch.field(tc, xx, cell.atoms[i]);
            if (!f.allFinite()) fail(ErrorKind::SingularState, "integrate", "chart field is not finite");
            return f;
        };

        bool have_k1 = false;
        Vec k1;
        bool last_rejected = false;
        while (t < b) {
            if (++steps > opt.max_steps) return finish(HitStatus::SingularStall);
            if (!have_k1) {
                try {
                    k1 = rhs(t, x);
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::SingularState) throw;
                    return finish(HitStatus::SingularStall);
                }
                have_k1 = true;
                if (!(h > 0.0)) h = detail::initial_step(rhs, t, x, k1, opt.rtol, opt.atol, b - t);
            }
            const bool to_break = h >= (b - t) * (1.0 - 1e-13);
            const double hs = to_break ? b - t : h;
            if (hs < opt.h_min && !to_break) return finish(HitStatus::SingularStall);

            detail::Dp5Step st;
            bool ok = true;
            try {
                st = detail::dp5_attempt(rhs, t, x, k1, hs);
                ok = st.x_new.allFinite() && st.err.allFinite();
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::SingularState) throw;
                ok = false;
            }
            double err = ok ? detail::mixed_error_norm(st.err, x, st.x_new, opt.rtol, opt.atol) : kInf;
            if (ok && err <= 1.0 && frame < 0 && sys.singular_margin) {
                // reject steps that jump across the singular set
                const double m0 = sys.singular_margin(x);
                const double m1 = sys.singular_margin(st.x_new);
                if ((m0 > 0.0) != (m1 > 0.0)) ok = false;
            }
            if (!ok) {
                h = hs / 4.0;
                last_rejected = true;
                if (h < opt.h_min) return finish(HitStatus::SingularStall);
                continue;
            }
            if (err > 1.0) {
                h = hs * std::max(0.2, 0.9 * std::pow(err, -0.2));
                last_rejected = true;
                if (h < opt.h_min) return finish(HitStatus::SingularStall);
                continue;
            }

            DenseSegment seg;
            seg.t0 = t;
            seg.h = hs;
            seg.t1 = to_break ? b : t + hs;
            seg.chart = frame;
            seg.cell = cell_idx;
            seg.r = detail::dp5_dense(x, st, hs);

            if (events) {
                // sample the continuous extension for the first entry into Q_alpha
                constexpr int kSamples = 8;
                std::array<double, kSamples + 1> th{};
                std::array<double, kSamples + 1> dv{};
                th[0] = 0.0;
                dv[0] = dist(x) - opt.hit_tol;
                int hit_j = -1;
                for (int j = 1; j <= kSamples; ++j) {
                    th[j] = static_cast<double>(j) / kSamples;
                    dv[j] = (j == kSamples ? dist(st.x_new) : dist(seg.eval(t + th[j] * hs))) - opt.hit_tol;
                    if (dv[j] <= 0.0) {
                        hit_j = j;
                        break;
                    }
                }
                double lo = 0.0, hi = -1.0;
                if (hit_j > 0) {
                    lo = th[hit_j - 1];
                    hi = th[hit_j];
                } else {
                    for (int j = 1; j < kSamples && hi < 0.0; ++j) {
                        if (!(dv[j] <= dv[j - 1] && dv[j] <= dv[j + 1])) continue;
                        double ga = th[j - 1], gb = th[j + 1];
                        const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
                        double c = gb - gr * (gb - ga), dd = ga + gr * (gb - ga);
                        double fc = dist(seg.eval(t + c * hs)) - opt.hit_tol, fd = dist(seg.eval(t + dd * hs)) - opt.hit_tol;
                        for (int it = 0; it < 60 && fc > 0.0 && fd > 0.0; ++it) {
                            if (fc < fd) {
                                gb = dd;
                                dd = c;
                                fd = fc;
                                c = gb - gr * (gb - ga);
                                fc = dist(seg.eval(t + c * hs)) - opt.hit_tol;
                            } else {
                                ga = c;
                                c = dd;
                                fc = fd;
                                dd = ga + gr * (gb - ga);
                                fd = dist(seg.eval(t + dd * hs)) - opt.hit_tol;
                            }
                        }
                        if (fc <= 0.0) {
                            lo = th[j - 1];
                            hi = c;
                        } else if (fd <= 0.0) {
                            lo = th[j - 1];
                            hi = dd;
                        }
                    }
                }
                if (hi > 0.0) {
                    for (int it = 0; it < 200; ++it) {
                        const double mid = 0.5 * (lo + hi);
                        if (!(mid > lo && mid < hi)) break;
                        if ((hi - lo) * hs <= 1e-15 * std::max(1.0, std::abs(t))) break;
                        if (dist(seg.eval(t + mid * hs)) - opt.hit_tol <= 0.0)
                            hi = mid;
                        else
                            lo = mid;
                    }
                    const double th_hit = hi;
                    const double t_hit = th_hit >= 1.0 ? t + hs : t + th_hit * hs;
                    seg.t1 = std::min(t_hit, seg.t1);
                    const Vec x_hit = th_hit >= 1.0 ? st.x_new : seg.eval(t_hit);
                    tr.segments.push_back(seg);
                    tr.times.push_back(seg.t1);
                    tr.states.push_back(to_y(x_hit));
                    tr.hit.status = HitStatus::HitTarget;
                    tr.hit.time = seg.t1;
                    tr.hit.terminal_distance = dist(x_hit);
                    return tr;
                }
            }

            tr.segments.push_back(std::move(seg));
            t = to_break ? b : t + hs;
            x = st.x_new;
            const Vec y = to_y(x);
            tr.times.push_back(t);
            tr.states.push_back(y);
            if (!(y.norm() < opt.divergence_norm)) return finish(HitStatus::Diverged);

            k1 = st.k[6];
            double fac = detail::step_factor(err);
            if (last_rejected) fac = std::min(fac, 1.0);
            last_rejected = false;
            h = hs * fac;

            // chart switching, with hysteresis provided by the chart itself
            if (frame >= 0) {
                if (!tr.charts[static_cast<std::size_t>(frame)].stay(x)) {
                    x = y;
                    frame = -1;
                    have_k1 = false;
                    h = 0.0;
                }
            } else if (try_enter_chart(y)) {
                have_k1 = false;
                h = 0.0;
            }
        }
        t = b;
    }
    return finish(HitStatus::MaxTimeReached);
}

[[nodiscard]] inline Trajectory integrate_forward(const ControlSystem& sys, const RelaxedSchedule& control, const Vec& y0,
                                                  const TargetSet& tgt, double t_max, const IntegrateOptions& opt = {}) {
    return integrate_forward(sys, control, y0, &tgt, t_max, opt);
}

[[nodiscard]] inline Trajectory integrate_forward(const ControlSystem& sys, const ClassicalSchedule& control, const Vec& y0,
                                                  const TargetSet& tgt, double t_max, const IntegrateOptions& opt = {}) {
    return integrate_forward(sys, to_dirac(control), y0, &tgt, t_max, opt);
}

// ---------------------------------------------------------------------------
// Adjoint

struct AdjointSegment {
    double t0 = 0.0;  // start of the backward step (the later time)
    double h = 0.0;   // negative
    double t1 = 0.0;  // end of the backward step (the earlier time)
    Mat r;

    [[nodiscard]] Vec eval(double t) const {
        const double th = (t - t0) / h;
        const double th1 = 1.0 - th;
        return r.col(0) + th * (r.col(1) + th1 * (r.col(2) + th * (r.col(3) + th1 * r.col(4))));
    }
};

class AdjointTrajectory {
public:
    std::vector<double> times;     // increasing
    std::vector<Vec> covectors;    // normalized by `scale`
    double scale = 1.0;            // factor applied to the raw solution
    double terminal_time = 0.0;
    Vec terminal_psi;              // raw terminal covector
    std::vector<AdjointSegment> segments;  // in backward order

    [[nodiscard]] Vec covector_at(double t) const {
        if (t <= times.front()) return covectors.front();
        if (t >= times.back()) return covectors.back();
        // segments are stored latest first
        for (const auto& s : segments)
            if (t >= s.t1 && t <= s.t0) return scale * s.eval(t);
        return covectors.back();
    }
};

/// Quadrature evaluated alongside the adjoint: for every forward segment
/// [a, b] the integral of `integrand` over [a, b] is passed to `accumulate`.
struct AdjointQuadrature {
    int dim = 0;
    std::function<void(std::size_t cell, double t, const Vec& y, const Vec& psi, Eigen::Ref<Vec> out)> integrand;
    std::function<void(std::size_t cell, double a, double b, const Vec& integral)> accumulate;
};

struct AdjointOptions {
    double rtol = 1e-10;
    double h_min = 1e-16;
    std::optional<double> terminal_time;
    const AdjointQuadrature* quadrature = nullptr;
    bool record = true;
};

[[nodiscard]] inline AdjointTrajectory integrate_adjoint(const ControlSystem& sys, const Trajectory& traj,
                                                         const RelaxedSchedule& control, const Vec& terminal_psi,
                                                         bool normalize_at_zero, const AdjointOptions& opt = {}) {
    if (terminal_psi.size() != sys.n) fail(ErrorKind::InvalidArgument, "integrate", "terminal covector dimension mismatch");
    if (!terminal_psi.allFinite() || !(terminal_psi.norm() > 0.0))
        fail(ErrorKind::ZeroTerminalCovector, "integrate", "terminal covector must be nonzero and finite");
    if (traj.segments.empty()) fail(ErrorKind::InvalidArgument, "integrate", "trajectory has no steps");
    const double t_end = opt.terminal_time ? std::min(*opt.terminal_time, traj.end_time()) : traj.end_time();
    if (!(t_end > traj.start_time())) fail(ErrorKind::InvalidArgument, "integrate", "terminal time precedes the start");

    const int n = sys.n;
    const int q = opt.quadrature ? opt.quadrature->dim : 0;
    AdjointTrajectory out;
    out.terminal_time = t_end;
    out.terminal_psi = terminal_psi;
    out.times.push_back(t_end);
    out.covectors.push_back(terminal_psi);

    // Integrate the unit seed and scale back, so that the accepted step
    // sequence depends only on the direction of terminal_psi.
    const double seed_norm = terminal_psi.norm();
    Vec psi = terminal_psi / seed_norm;
    long substeps = 1;
    for (auto it = traj.segments.rbegin(); it != traj.segments.rend(); ++it) {
        const DenseSegment& seg = *it;
        if (seg.t0 >= t_end) continue;
        const double b = std::min(seg.t1, t_end);
        const double a = seg.t0;
        if (!(b > a)) continue;
        const Cell& cell = control.cells()[seg.cell];
        auto rhs = [&](double tt, const Vec& xx) -> Vec {
            const double tc = clamp_open(tt, a, b);
            const Vec y = traj.segment_state(seg, std::clamp(tt, a, b));
            const Vec p = xx.head(n);
            Vec d(n + q);
            d.head(n) = -(relaxed_jacobian(sys, tc, y, cell) * p);
            if (q > 0) {
                Vec g(q);
                g.setZero();
                opt.quadrature->integrand(seg.cell, tc, y, Vec(seed_norm * p), g);
                d.tail(q) = -g / seed_norm;
            }
            return d;
        };
        // Equal substeps per forward segment; the count doubles on rejection
        // and may halve for the next segment. Keeping the step sequence a
        // discrete choice makes the result exactly linear in terminal_psi.
        Vec x0(n + q);
        x0.head(n) = psi;
        if (q > 0) x0.tail(q).setZero();
        Vec x;
        std::vector<AdjointSegment> local;
        std::vector<Vec> local_psi;
        double max_err = 0.0;
        for (;;) {
            const double hs = -(b - a) / static_cast<double>(substeps);
            if (-hs < opt.h_min * std::max(1.0, std::abs(b)))
                fail(ErrorKind::SingularState, "integrate", "adjoint step size underflow");
            x = x0;
            local.clear();
            local_psi.clear();
            max_err = 0.0;
            bool ok = true;
            Vec k1 = rhs(b, x);
            for (long j = 0; j < substeps && ok; ++j) {
                const double t = j == 0 ? b : b + static_cast<double>(j) * hs;
                const double t_next = j + 1 == substeps ? a : b + static_cast<double>(j + 1) * hs;
                const double hj = t_next - t;
                detail::Dp5Step st;
                try {
                    st = detail::dp5_attempt(rhs, t, x, k1, hj);
                    ok = st.x_new.allFinite() && st.err.allFinite();
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::SingularState) throw;
                    ok = false;
                }
                const double err = ok ? detail::relative_error_norm(st.err, x, st.x_new, opt.rtol) : kInf;
                if (!(err <= 1.0)) {
                    ok = false;
                    break;
                }
                max_err = std::max(max_err, err);
                if (opt.record) {
                    AdjointSegment as;
                    as.t0 = t;
                    as.h = hj;
                    as.t1 = t_next;
                    as.r = seed_norm * detail::dp5_dense(x, st, hj).topRows(n);
                    local.push_back(std::move(as));
                    local_psi.push_back(seed_norm * st.x_new.head(n));
                }
                x = st.x_new;
                k1 = st.k[6];
            }
            if (ok) break;
            substeps *= 2;
        }
        for (std::size_t j = 0; j < local.size(); ++j) {
            out.times.push_back(local[j].t1);
            out.covectors.push_back(local_psi[j]);
            out.segments.push_back(std::move(local[j]));
        }
        if (max_err < 1e-2 && substeps > 1) substeps /= 2;
        psi = x.head(n);
        if (q > 0 && opt.quadrature->accumulate) opt.quadrature->accumulate(seg.cell, a, b, Vec(seed_norm * x.tail(q)));
    }
    if (!opt.record) {
        out.times.push_back(traj.start_time());
        out.covectors.push_back(seed_norm * psi);
    }
    std::reverse(out.times.begin(), out.times.end());
    std::reverse(out.covectors.begin(), out.covectors.end());
    if (normalize_at_zero) {
        const double n0 = out.covectors.front().norm();
        if (!(n0 > 0.0) || !std::isfinite(n0)) fail(ErrorKind::NonFinite, "integrate", "adjoint vanished or overflowed at t = 0");
        out.scale = 1.0 / n0;
        for (auto& c : out.covectors) c *= out.scale;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Time rescaling and continuity probes

/// z(s) = y(w s) on s in [0, 1], w the trajectory's end time.
[[nodiscard]] inline Trajectory rescale_to_unit_time(const Trajectory& traj) {
    const double w = traj.end_time();
    if (!(w > 0.0) || !std::isfinite(w)) fail(ErrorKind::InvalidArgument, "integrate", "rescaling needs a finite end time w > 0");
    Trajectory out = traj;
    for (auto& t : out.times) t /= w;
    for (auto& s : out.segments) {
        s.t0 /= w;
        s.h /= w;
        s.t1 /= w;
    }
    out.hit.time = traj.hit.time / w;
    return out;
}

/// sup-norm gap between two trajectories on the union of their samples plus
/// a uniform grid of `extra` points, restricted to [t_from, t_to].
[[nodiscard]] inline double sup_gap(const Trajectory& a, const Trajectory& b, double t_from, double t_to, int extra = 2000) {
    std::vector<double> ts;
    for (double t : a.times)
        if (t >= t_from && t <= t_to) ts.push_back(t);
    for (double t : b.times)
        if (t >= t_from && t <= t_to) ts.push_back(t);
    for (int i = 0; i <= extra; ++i) ts.push_back(t_from + (t_to - t_from) * i / extra);
    double g = 0.0;
    for (double t : ts) g = std::max(g, (a.state_at(t) - b.state_at(t)).cwiseAbs().maxCoeff());
    return g;
}

/// Trajectory gaps of each schedule against the reference on [0, horizon],
/// integrated without target events.
[[nodiscard]] inline std::vector<double> continuity_probe(const ControlSystem& sys, const std::vector<RelaxedSchedule>& schedules,
                                                          const RelaxedSchedule& reference, const Vec& y0, double horizon,
                                                          IntegrateOptions opt = {}) {
    opt.stop_at_target = false;
    const Trajectory ref = integrate_forward(sys, reference, y0, nullptr, horizon, opt);
    if (ref.hit.status != HitStatus::MaxTimeReached)
        fail(ErrorKind::SingularState, "integrate", "reference trajectory does not reach the horizon");
    std::vector<double> gaps;
    gaps.reserve(schedules.size());
    for (const auto& s : schedules) {
        const Trajectory tr = integrate_forward(sys, s, y0, nullptr, horizon, opt);
        if (tr.hit.status != HitStatus::MaxTimeReached) {
            gaps.push_back(kInf);
            continue;
        }
        gaps.push_back(sup_gap(ref, tr, 0.0, horizon));
    }
    return gaps;
}

}  // namespace tosc
