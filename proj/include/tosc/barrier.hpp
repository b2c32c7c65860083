#pragma once

// Scalar comparison functions for the blowup example and the monotonicity
// check for the quenching example.
//
// Xi^*(r) = int_r^inf dth / (th^p + th + M) and Xi_*(r) = int_r^inf dth /
// (th^p - th - M) are the blowup times of the envelopes started at r. With
// th = r v^{-1/(p-1)} both become integrals over v in [0, 1] with smooth
// integrands, which are evaluated by adaptive Gauss-Kronrod.

#include "tosc/integrate.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/tools/roots.hpp>

namespace tosc {

enum class Branch { Upper, Lower };

class BarrierTable {
public:
    static constexpr int kDefaultNodes = 512;
    static constexpr double kTableMax = 1e8;
    static constexpr double kGuard = 1e-6;  // table starts at r0 (1 + kGuard)
    static constexpr double kUpperMin = 1e-12;

    BarrierTable(double p, double M, int nodes = kDefaultNodes) : p_(p), M_(M) {
        if (!(p > 1.0) || !std::isfinite(p)) fail(ErrorKind::NonFinite, "barrier", "exponent p must be finite and > 1");
        if (!(M >= 0.0) || !std::isfinite(M)) fail(ErrorKind::InvalidArgument, "barrier", "drift bound M must be finite and >= 0");
        if (nodes < 4) fail(ErrorKind::InvalidArgument, "barrier", "table needs at least 4 nodes");
        r0_ = (p + M) / (p - 1.0);
        const double lo = std::log(r0_ * (1.0 + kGuard)), hi = std::log(kTableMax);
        r_.resize(static_cast<std::size_t>(nodes));
        up_.resize(r_.size());
        low_.resize(r_.size());
        for (std::size_t i = 0; i < r_.size(); ++i) {
            r_[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(nodes - 1));
            up_[i] = xi_upper_time(r_[i]);
            low_[i] = xi_lower_time(r_[i]);
        }
        upper_max_ = xi_upper_time(kUpperMin);
        lower_max_ = xi_lower_time(r0_);
        upper_guess_ = make_guess(up_);
        lower_guess_ = make_guess(low_);
    }

    [[nodiscard]] double p() const noexcept { return p_; }
    [[nodiscard]] double M() const noexcept { return M_; }
    [[nodiscard]] double r0() const noexcept { return r0_; }
    [[nodiscard]] const std::vector<double>& nodes() const noexcept { return r_; }
    [[nodiscard]] const std::vector<double>& upper_values() const noexcept { return up_; }
    [[nodiscard]] const std::vector<double>& lower_values() const noexcept { return low_; }

    /// Xi^*(r), defined for every r > 0.
    [[nodiscard]] double xi_upper_time(double r) const {
        if (!(r > 0.0)) fail(ErrorKind::InvalidArgument, "barrier", "Xi^* needs r > 0");
        if (std::isinf(r)) return 0.0;
        return quad([&](double v) { return den_upper(r, v); }, r);
    }

    /// Xi_*(r), defined for r >= r0.
    [[nodiscard]] double xi_lower_time(double r) const {
        if (!(r >= r0_)) fail(ErrorKind::BelowThreshold, "barrier", "Xi_* needs r >= r0");
        if (std::isinf(r)) return 0.0;
        return quad([&](double v) { return den_lower(r, v); }, r);
    }

    [[nodiscard]] double time(double r, Branch b) const { return b == Branch::Upper ? xi_upper_time(r) : xi_lower_time(r); }

    /// Inverse of the chosen blowup-time function: the r with Xi(r) = tau.
    [[nodiscard]] double invert(double tau, Branch b) const {
        if (!(tau > 0.0) || !std::isfinite(tau)) fail(ErrorKind::OutOfRange, "barrier", "inversion needs a finite tau > 0");
        const double r_lo = b == Branch::Upper ? kUpperMin : r0_;
        const double tau_max = b == Branch::Upper ? upper_max_ : lower_max_;
        if (!(tau <= tau_max)) fail(ErrorKind::OutOfRange, "barrier", "tau exceeds the blowup time at the lower end of the domain");
        if (tau == tau_max) return r_lo;
        // f(rho) = Xi(e^rho) - tau is strictly decreasing with derivative
        // -e^rho / den(e^rho); Newton in rho, safeguarded by the bracket.
        auto f = [&](double rho) {
            const double r = std::exp(rho);
            const double den = b == Branch::Upper ? std::pow(r, p_) + r + M_ : std::pow(r, p_) - r - M_;
            return std::make_pair(time(r, b) - tau, -r / den);
        };
        double rho_hi = std::log(std::max(guess(tau, b) * 4.0, r_lo * 2.0));
        while (time(std::exp(rho_hi), b) > tau) rho_hi += 2.0;
        const double rho_lo = std::log(r_lo);
        const double g = std::clamp(std::log(guess(tau, b)), rho_lo, rho_hi);
        std::uintmax_t it = 100;
        const double rho = boost::math::tools::newton_raphson_iterate(f, g, rho_lo, rho_hi, 48, it);
        return std::exp(rho);
    }

    /// Upper envelope at elapsed time dt from radius r: xi^*(Xi^*(r) - dt),
    /// +inf once the envelope has blown up.
    [[nodiscard]] double upper_envelope(double r, double dt) const {
        const double tau = xi_upper_time(r) - dt;
        return tau > 0.0 ? invert(tau, Branch::Upper) : kInf;
    }

    /// Lower envelope xi_*(Xi_*(r) - dt).
    [[nodiscard]] double lower_envelope(double r, double dt) const {
        const double tau = xi_lower_time(r) - dt;
        return tau > 0.0 ? invert(tau, Branch::Lower) : kInf;
    }

private:
    [[nodiscard]] double den_upper(double r, double v) const {
        return std::pow(r, p_) + r * v + M_ * std::pow(v, p_ / (p_ - 1.0));
    }
    [[nodiscard]] double den_lower(double r, double v) const {
        return std::pow(r, p_) - r * v - M_ * std::pow(v, p_ / (p_ - 1.0));
    }

    template <class Den>
    [[nodiscard]] double quad(Den&& den, double r) const {
        const double a = 1.0 / (p_ - 1.0);
        auto integrand = [&](double v) { return a * r / den(v); };
        // endpoint clustering copes with v^{p/(p-1)} at 0 and the narrow peak at small r
        static boost::math::quadrature::tanh_sinh<double> rule;  // integrate() is non-const in Boost 1.74
        const double val = rule.integrate(integrand, 0.0, 1.0, 1e-13);
        if (!std::isfinite(val)) fail(ErrorKind::NonFinite, "barrier", "blowup-time quadrature is not finite");
        return val;
    }

    // log r against log tau on the table, increasing in log tau
    [[nodiscard]] std::pair<std::vector<double>, std::vector<double>> make_guess(const std::vector<double>& tau) const {
        std::vector<double> x, y;
        for (std::size_t i = r_.size(); i-- > 0;) {
            x.push_back(std::log(tau[i]));
            y.push_back(std::log(r_[i]));
        }
        return {std::move(x), std::move(y)};
    }

    [[nodiscard]] double guess(double tau, Branch b) const {
        const auto& tab = b == Branch::Upper ? up_ : low_;
        if (tau <= tab.back()) return std::pow((p_ - 1.0) * tau, -1.0 / (p_ - 1.0));
        if (tau >= tab.front()) return b == Branch::Upper ? 0.5 * r_.front() : r_.front();
        const auto& [x, y] = b == Branch::Upper ? upper_guess_ : lower_guess_;
        const double lt = std::log(tau);
        const auto k = static_cast<std::size_t>(std::upper_bound(x.begin(), x.end(), lt) - x.begin());
        if (k == 0) return std::exp(y.front());
        if (k >= x.size()) return std::exp(y.back());
        const double w = (lt - x[k - 1]) / (x[k] - x[k - 1]);
        return std::exp(y[k - 1] + w * (y[k] - y[k - 1]));
    }

    double p_;
    double M_;
    double r0_;
    double upper_max_ = 0.0, lower_max_ = 0.0;
    std::vector<double> r_, up_, low_;
    std::pair<std::vector<double>, std::vector<double>> upper_guess_, lower_guess_;
};

// ---------------------------------------------------------------------------
// Envelope bracket

struct EnvelopeCheck {
    bool pass = true;
    double r = 0.0;
    double upper_margin = kInf;  // min (upper - |y|) / upper
    double lower_margin = kInf;  // min (|y| - lower) / |y|
    std::size_t samples = 0;
    std::size_t violations = 0;
};

/// Checks lower(t) <= |y(t)| <= upper(t) at every sample after s, relative
/// equality tolerance eq_tol.
[[nodiscard]] inline EnvelopeCheck envelope_bracket_check(const BarrierTable& tab, const Trajectory& traj, double s,
                                                          double eq_tol = 1e-8) {
    EnvelopeCheck out;
    out.r = traj.state_at(s).norm();
    if (!(out.r >= tab.r0())) fail(ErrorKind::BelowThreshold, "barrier", "envelope check needs |y(s)| >= r0");
    const double xu = tab.xi_upper_time(out.r), xl = tab.xi_lower_time(out.r);
    for (std::size_t i = 0; i < traj.times.size(); ++i) {
        const double t = traj.times[i];
        if (!(t > s)) continue;
        const double ny = traj.states[i].norm();
        const double tu = xu - (t - s), tl = xl - (t - s);
        const double up = tu > 0.0 ? tab.invert(tu, Branch::Upper) : kInf;
        const double lo = tl > 0.0 ? tab.invert(tl, Branch::Lower) : kInf;
        const double mu = std::isinf(up) ? 1.0 : (up - ny) / up;
        const double ml = std::isinf(lo) ? -kInf : (ny - lo) / ny;
        out.upper_margin = std::min(out.upper_margin, mu);
        out.lower_margin = std::min(out.lower_margin, ml);
        ++out.samples;
        if (mu < -eq_tol || ml < -eq_tol) ++out.violations;
    }
    out.pass = out.violations == 0;
    return out;
}

// ---------------------------------------------------------------------------
// Threshold for the lower bound

struct MtildeTerms {
    double r0 = 0.0;
    double power_term = 0.0;
    double exp_term = 0.0;
    double drift_term = 0.0;
    double value = 0.0;
    double xi_at_r0 = 0.0;  // the blowup time used in the exponentials
};

/// Components of the threshold. The exponentials use Xi_* just above r0
/// unless `upper_in_exp_term` selects Xi^*(r0) for the third term.
[[nodiscard]] inline MtildeTerms mtilde_terms(const BarrierTable& tab, double alpha, bool upper_in_exp_term = false) {
    const double p = tab.p();
    if (!(alpha > 0.0) || !(alpha < p - 1.0)) fail(ErrorKind::AlphaOutOfRange, "barrier", "alpha must lie in (0, p - 1)");
    MtildeTerms m;
    m.r0 = tab.r0();
    m.xi_at_r0 = tab.xi_lower_time(tab.r0() * (1.0 + BarrierTable::kGuard));
    const double e_low = std::exp(m.xi_at_r0);
    const double e_third = upper_in_exp_term ? std::exp(tab.xi_upper_time(tab.r0())) : e_low;
    m.power_term = std::pow(4.0 * alpha / (p - 1.0 - alpha), 1.0 / (p - 1.0));
    m.exp_term = std::pow(2.0 * e_third / (p - 1.0 - alpha), 1.0 / p);
    m.drift_term = 2.0 * e_low * tab.M();
    m.value = std::max({m.r0, m.power_term, m.exp_term, m.drift_term});
    return m;
}

[[nodiscard]] inline double mtilde(const BarrierTable& tab, double alpha, bool upper_in_exp_term = false) {
    return mtilde_terms(tab, alpha, upper_in_exp_term).value;
}

// ---------------------------------------------------------------------------
// Lower bound for the damped system

struct LowerBoundCheck {
    bool pass = false;
    double lhs = 0.0;  // |y(T)|^{-alpha}
    double rhs = 0.0;  // int_s^T alpha xi_*(T - t)^{-alpha} h(t) dt
    double slack = 0.0;
    double mtilde = 0.0;
    double y_T_norm = 0.0;
};

/// Integrates y' = |y|^{p-1} y + g - h y from y_s at time s and checks
/// |y(T)|^{-alpha} >= int_s^T alpha xi_*(T - t)^{-alpha} h(t) dt.
[[nodiscard]] inline LowerBoundCheck blowup_lower_bound_check(const BarrierTable& tab, double alpha, double s, double T,
                                                              const PiecewiseScalar& h, const PiecewiseVector& g,
                                                              const Vec& y_s, IntegrateOptions opt = {}) {
    const int n = static_cast<int>(y_s.size());
    if (n < 1 || !y_s.allFinite()) fail(ErrorKind::InvalidArgument, "barrier", "y_s must be a finite vector");
    if (!(T > s)) fail(ErrorKind::InvalidArgument, "barrier", "need T > s");
    for (double v : h.values())
        if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::InvalidArgument, "barrier", "damping must satisfy 0 <= h <= 1");
    for (const auto& v : g.values())
        if (v.size() != n || v.norm() > tab.M() * (1.0 + 1e-12)) fail(ErrorKind::InvalidArgument, "barrier", "forcing must satisfy |g| <= M");
    LowerBoundCheck out;
    out.mtilde = mtilde(tab, alpha);
    if (y_s.norm() < out.mtilde) fail(ErrorKind::BelowMtilde, "barrier", "|y_s| is below the threshold");
    const double xl_r0 = tab.xi_lower_time(tab.r0());
    if (!(T - s < xl_r0)) fail(ErrorKind::OutOfRange, "barrier", "T - s must be below Xi_*(r0) for xi_*(T - t) to exist");

    BlowupModel md;
    md.n = n;
    md.p = tab.p();
    md.B = PiecewiseMatrix(Mat::Zero(n, 1));
    md.g = g;
    md.h = h;
    const auto sys = build_blowup_system(md);
    const auto tgt = TargetSet::point(Vec::Zero(n));
    const auto tr = integrate_forward(sys, RelaxedSchedule::constant(s, T, Vec::Zero(1)), y_s, &tgt, T, opt, s);
    if (tr.hit.status != HitStatus::MaxTimeReached)
        fail(ErrorKind::OutOfRange, "barrier", "the damped solution does not exist on [s, T]");
    out.y_T_norm = tr.final_state().norm();
    out.lhs = std::pow(out.y_T_norm, -alpha);

    // piecewise-constant h: integrate alpha xi_*(T - t)^{-alpha} on each piece
    std::vector<double> cuts{s};
    for (double b : h.breaks())
        if (b > s && b < T) cuts.push_back(b);
    cuts.push_back(T);
    auto kernel = [&](double t) {
        const double tau = T - t;
        if (!(tau > 0.0)) return 0.0;
        return alpha * std::pow(tab.invert(tau, Branch::Lower), -alpha);
    };
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double a = cuts[i], b = cuts[i + 1];
        const double hv = h.empty() ? 0.0 : h.at(0.5 * (a + b));
        if (hv == 0.0) continue;
        out.rhs += hv * boost::math::quadrature::gauss_kronrod<double, 15>::integrate(kernel, a, b, 12, 1e-10);
    }
    out.slack = out.lhs - out.rhs;
    out.pass = out.slack >= 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Monotonicity for the quenching example

struct MonotonicityCheck {
    int which = 1;  // 1: y0_1 < 1 and h <= 0; 2: y0_1 > 1 and h >= 0
    bool pass = false;
    bool degenerate = false;  // h == 0: equality expected
    double margin = 0.0;      // y1(T) - yhat1(T) in case 1, reversed in case 2
    double y1 = 0.0;
    double yhat1 = 0.0;
};

/// Compares y' = F(y) + g with yhat' = F(y) + g + (h, 0) at time T.
[[nodiscard]] inline MonotonicityCheck quench_monotonicity_check(const PiecewiseVector& g, const PiecewiseScalar& h, const Vec& y0,
                                                                 double T, IntegrateOptions opt = {}) {
    if (y0.size() != 2 || !y0.allFinite()) fail(ErrorKind::InvalidArgument, "barrier", "y0 must be a finite 2-vector");
    if (!(T > 0.0)) fail(ErrorKind::InvalidArgument, "barrier", "T must be positive");
    if (y0[0] == 1.0) fail(ErrorKind::InvalidArgument, "barrier", "y0 lies on the singular line");
    MonotonicityCheck out;
    out.which = y0[0] < 1.0 ? 1 : 2;
    bool any = false;
    for (double v : h.values()) {
        if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, "barrier", "h must be finite");
        if ((out.which == 1 && v > 0.0) || (out.which == 2 && v < 0.0))
            fail(ErrorKind::InvalidArgument, "barrier", out.which == 1 ? "case y0_1 < 1 needs h <= 0" : "case y0_1 > 1 needs h >= 0");
        any = any || v != 0.0;
    }
    out.degenerate = !any;

    QuenchModel base;
    base.B = PiecewiseMatrix(Mat::Zero(2, 1));
    base.g = g;
    QuenchModel pert = base;
    pert.h = h;
    const auto tgt = TargetSet::hyperplane(0, 1.0);
    const auto ctl = RelaxedSchedule::constant(0.0, T, Vec::Zero(1));
    const auto yb = integrate_forward(build_quench_system(base), ctl, y0, &tgt, T, opt);
    if (yb.hit.status != HitStatus::MaxTimeReached)
        fail(ErrorKind::BaselineQuenchedEarly, "barrier", "the baseline solution reaches y1 = 1 before T");
    out.y1 = yb.final_state()[0];
    if (out.degenerate) {
        out.yhat1 = out.y1;
        out.margin = 0.0;
        out.pass = true;
        return out;
    }
    const auto yp = integrate_forward(build_quench_system(pert), ctl, y0, &tgt, T, opt);
    if (yp.hit.status != HitStatus::MaxTimeReached) {
        out.pass = false;
        out.yhat1 = yp.final_state()[0];
        out.margin = -kInf;
        return out;
    }
    out.yhat1 = yp.final_state()[0];
    out.margin = out.which == 1 ? out.y1 - out.yhat1 : out.yhat1 - out.y1;
    out.pass = out.margin > 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Seeded sweeps

struct SweepSummary {
    std::string name;
    std::uint64_t seed = 0;
    std::size_t instances = 0;
    std::size_t passes = 0;
    std::size_t violations = 0;
    double min_margin = kInf;
    std::vector<double> margins;
    std::vector<char> ok;  // per instance

    [[nodiscard]] bool pass() const { return instances > 0 && violations == 0; }
};

namespace detail {

inline std::vector<double> uniform_breaks(double t0, double t1, int pieces) {
    std::vector<double> b;
    for (int k = 1; k < pieces; ++k) b.push_back(t0 + (t1 - t0) * k / pieces);
    return b;
}

inline void tally(SweepSummary& s, const std::vector<double>& margins, const std::vector<char>& ok) {
    s.instances = margins.size();
    s.margins = margins;
    s.ok = ok;
    for (std::size_t i = 0; i < margins.size(); ++i) {
        s.min_margin = std::min(s.min_margin, margins[i]);
        if (ok[i])
            ++s.passes;
        else
            ++s.violations;
    }
}

}  // namespace detail

/// Random (g, h) instances for one case of the quenching monotonicity check.
/// T starts at 0.5 and is halved toward the baseline quench time if needed.
[[nodiscard]] inline SweepSummary monotonicity_sweep(std::uint64_t seed, int count, int which, int pieces = 4) {
    if (which != 1 && which != 2) fail(ErrorKind::InvalidArgument, "barrier", "case must be 1 or 2");
    Rng rng(seed);
    struct Instance {
        PiecewiseVector g;
        PiecewiseScalar h;
        Vec y0;
    };
    std::vector<Instance> inst;
    for (int i = 0; i < count; ++i) {
        const double T0 = 0.5;
        std::vector<Vec> gv;
        std::vector<double> hv;
        for (int k = 0; k < pieces; ++k) {
            gv.push_back(Vec(Vec::NullaryExpr(2, [&](Eigen::Index) { return rng.uniform(-1.0, 1.0); })));
            hv.push_back((which == 1 ? -1.0 : 1.0) * rng.uniform(0.05, 1.0));
        }
        Vec y0(2);
        y0[0] = which == 1 ? rng.uniform(-1.0, 0.5) : rng.uniform(1.5, 3.0);
        y0[1] = rng.uniform(-1.0, 1.0);
        const auto br = detail::uniform_breaks(0.0, T0, pieces);
        inst.push_back({PiecewiseVector(br, gv), PiecewiseScalar(br, hv), y0});
    }
    std::vector<double> margins(inst.size());
    std::vector<char> ok(inst.size());
    IntegrateOptions opt;
    opt.rtol = 1e-11;
    opt.atol = 1e-13;
    parallel_for(inst.size(), [&](std::size_t i) {
        double T = 0.5;
        for (int attempt = 0;; ++attempt) {
            try {
                const auto r = quench_monotonicity_check(inst[i].g, inst[i].h, inst[i].y0, T, opt);
                margins[i] = r.margin;
                ok[i] = r.pass && r.margin > 0.0;
                return;
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::BaselineQuenchedEarly || attempt > 20) throw;
                T *= 0.5;
            }
        }
    });
    SweepSummary s;
    s.name = which == 1 ? "monotonicity_case_i" : "monotonicity_case_ii";
    s.seed = seed;
    detail::tally(s, margins, ok);
    return s;
}

/// Random controls and dampings on the two-dimensional p = 2 blowup system,
/// |y0| = r0 U(1.5, 3); the bracket is checked along the whole trajectory.
[[nodiscard]] inline SweepSummary envelope_sweep(std::uint64_t seed, int count, int cells = 8) {
    Rng rng(seed);
    struct Instance {
        BlowupModel md;
        RelaxedSchedule ctl;
        Vec y0;
    };
    std::vector<Instance> inst;
    for (int i = 0; i < count; ++i) {
        BlowupModel md;
        md.n = 2;
        md.p = 2.0;
        md.rho0 = 1.0;
        Mat B(2, 2);
        for (int k = 0; k < 4; ++k) B(k / 2, k % 2) = rng.uniform(-1.0, 1.0);
        md.B = PiecewiseMatrix(B);
        const double r0 = md.r0();
        const Vec y0 = r0 * rng.uniform(1.5, 3.0) * rng.unit_vector(2);
        // horizon well past the latest possible blowup
        const double horizon = 2.0;
        const auto br = detail::uniform_breaks(0.0, horizon, cells);
        std::vector<double> hv;
        std::vector<Cell> cs;
        std::vector<double> grid{0.0};
        for (int k = 0; k < cells; ++k) {
            hv.push_back(rng.uniform(-1.0, 1.0));
            Vec u = rng.unit_vector(2) * std::sqrt(rng.uniform());
            cs.push_back(dirac_cell(u));
            grid.push_back(horizon * (k + 1) / cells);
        }
        md.h = PiecewiseScalar(br, hv);
        inst.push_back({md, RelaxedSchedule(grid, cs), y0});
    }
    std::vector<double> margins(inst.size());
    std::vector<char> ok(inst.size());
    parallel_for(inst.size(), [&](std::size_t i) {
        const auto sys = build_blowup_system(inst[i].md);
        const BarrierTable tab(2.0, inst[i].md.drift_bound(), 128);
        const auto tgt = TargetSet::point(Vec::Zero(2));
        const auto tr = integrate_forward(sys, inst[i].ctl, inst[i].y0, &tgt, inst[i].ctl.end());
        const auto r = envelope_bracket_check(tab, tr, 0.0);
        margins[i] = std::min(r.upper_margin, r.lower_margin);
        ok[i] = r.pass && tr.hit.status == HitStatus::HitTarget;
    });
    SweepSummary s;
    s.name = "envelope_bracket";
    s.seed = seed;
    detail::tally(s, margins, ok);
    return s;
}

/// Random dampings h in [0, 1] and forcings |g| <= M with |y_s| >= Mtilde,
/// checked at T = s + Xi^*(|y_s|) / 2.
[[nodiscard]] inline SweepSummary lower_bound_sweep(std::uint64_t seed, int count, double p = 2.0, double M = 0.5, int pieces = 6) {
    Rng rng(seed);
    const BarrierTable tab(p, M, 128);
    struct Instance {
        double alpha;
        PiecewiseScalar h;
        PiecewiseVector g;
        Vec ys;
        double T;
    };
    std::vector<Instance> inst;
    for (int i = 0; i < count; ++i) {
        const double alpha = (p - 1.0) * rng.uniform(0.1, 0.9);
        const double mt = mtilde(tab, alpha);
        const Vec ys = mt * rng.uniform(1.0, 2.0) * rng.unit_vector(2);
        const double T = 0.5 * tab.xi_upper_time(ys.norm());
        const auto br = detail::uniform_breaks(0.0, T, pieces);
        std::vector<double> hv;
        std::vector<Vec> gv;
        for (int k = 0; k < pieces; ++k) {
            hv.push_back(rng.uniform());
            gv.push_back(Vec(M * std::sqrt(rng.uniform()) * rng.unit_vector(2)));
        }
        inst.push_back({alpha, PiecewiseScalar(br, hv), PiecewiseVector(br, gv), ys, T});
    }
    std::vector<double> margins(inst.size());
    std::vector<char> ok(inst.size());
    parallel_for(inst.size(), [&](std::size_t i) {
        const auto& c = inst[i];
        const auto r = blowup_lower_bound_check(tab, c.alpha, 0.0, c.T, c.h, c.g, c.ys);
        margins[i] = r.slack;
        ok[i] = r.pass;
    });
    SweepSummary s;
    s.name = "blowup_lower_bound";
    s.seed = seed;
    detail::tally(s, margins, ok);
    return s;
}

}  // namespace tosc
