#include "tosc/barrier.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <gtest/gtest.h>

using namespace tosc;

namespace {

// int_r^inf dth / (th^2 + th + M) for M > 1/4
double upper_p2_closed(double r, double M) {
    const double k = std::sqrt(M - 0.25);
    return (M_PI / 2.0 - std::atan((r + 0.5) / k)) / k;
}

// int_r^inf dth / ((th - a)(th - b)) with th^2 - th - M = (th - a)(th - b), a > b
double lower_p2_closed(double r, double M) {
    const double d = std::sqrt(1.0 + 4.0 * M);
    const double a = 0.5 * (1.0 + d), b = 0.5 * (1.0 - d);
    return std::log((r - b) / (r - a)) / (a - b);
}

// sigma = r / theta maps [r, inf) onto (0, 1]; composite 20-point Gauss-Legendre
double upper_by_gauss(double p, double M, double r) {
    auto f = [&](double s) {
        if (s <= 0.0) return 0.0;
        const double th = r / s;
        return r / (s * s) / (std::pow(th, p) + th + M);
    };
    double acc = 0.0;
    const int pieces = 200;
    for (int i = 0; i < pieces; ++i)
        acc += boost::math::quadrature::gauss<double, 20>::integrate(f, double(i) / pieces, double(i + 1) / pieces);
    return acc;
}

PiecewiseScalar constant_h(double v) { return PiecewiseScalar(v); }

}  // namespace

TEST(Barrier, QuadratureOracles) {
    const BarrierTable t20(2.0, 0.0);
    EXPECT_NEAR(t20.xi_upper_time(1.0), std::log(2.0), 1e-9);
    EXPECT_NEAR(t20.xi_lower_time(2.0), std::log(2.0), 1e-8);
    EXPECT_DOUBLE_EQ(t20.r0(), 2.0);
    const BarrierTable t31(3.0, 1.0);
    EXPECT_NEAR(t31.xi_upper_time(2.0), upper_by_gauss(3.0, 1.0, 2.0), 1e-9);
    const BarrierTable t21(2.0, 1.0);
    for (double r : {3.0, 5.0, 40.0, 1e4}) {
        EXPECT_NEAR(t21.xi_upper_time(r), upper_p2_closed(r, 1.0), 1e-10);
        EXPECT_NEAR(t21.xi_lower_time(r), lower_p2_closed(r, 1.0), 1e-10);
    }
}

TEST(Barrier, VanishingTail) {
    const BarrierTable t(2.0, 0.0);
    double prev = kInf;
    for (double r = 1.0; r < 1e9; r *= 10.0) {
        const double v = t.xi_upper_time(r);
        EXPECT_LT(v, prev);
        prev = v;
    }
    EXPECT_LT(prev, 1e-8);
}

TEST(Barrier, Errors) {
    EXPECT_THROW(BarrierTable(1.0, 0.0), Error);
    try {
        BarrierTable(0.5, 0.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NonFinite);
    }
    const BarrierTable t(2.0, 1.0);
    try {
        (void)t.xi_lower_time(2.9);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::BelowThreshold);
    }
    try {
        (void)t.invert(t.xi_lower_time(t.r0()) * 1.01, Branch::Lower);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::OutOfRange);
    }
}

TEST(Barrier, LowerDominatesUpper) {
    const BarrierTable t(2.5, 0.7);
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
        const double r = t.r0() * std::exp(rng.uniform(1e-3, 8.0));
        EXPECT_LT(t.xi_upper_time(r), t.xi_lower_time(r));
    }
}

TEST(Barrier, StrictlyDecreasing) {
    const BarrierTable t(2.0, 1.0);
    double pu = kInf, pl = kInf;
    for (int i = 0; i < 100; ++i) {
        const double r = t.r0() * (1.0 + 1e-3) * std::pow(1e5, i / 99.0);
        const double u = t.xi_upper_time(r), l = t.xi_lower_time(r);
        EXPECT_LT(u, pu);
        EXPECT_LT(l, pl);
        pu = u;
        pl = l;
    }
    double pr = 0.0;
    for (double tau = 0.3; tau > 1e-6; tau *= 0.5) {
        const double r = t.invert(tau, Branch::Upper);
        EXPECT_GT(r, pr);
        pr = r;
    }
}

TEST(Barrier, InversionRoundTrip) {
    const BarrierTable t(2.0, 1.0);
    for (double r : {3.0, 10.0, 100.0}) {
        EXPECT_NEAR(t.invert(t.xi_upper_time(r), Branch::Upper), r, 1e-7 * r);
        EXPECT_NEAR(t.invert(t.xi_lower_time(r), Branch::Lower), r, 1e-7 * r);
        const double tau = t.xi_upper_time(r);
        EXPECT_LE(std::abs(t.xi_upper_time(t.invert(tau, Branch::Upper)) - tau), 1e-9);
    }
    const BarrierTable t0(2.0, 0.0);
    EXPECT_NEAR(t0.invert(std::log(2.0), Branch::Upper), 1.0, 1e-9);
    EXPECT_NEAR(t0.invert(std::log(2.0) * 0.999, Branch::Lower), 1.0 / (1.0 - std::exp(-std::log(2.0) * 0.999)), 1e-8);
}

TEST(Barrier, ComparisonIdentity) {
    const double p = 2.0, M = 1.0;
    const BarrierTable t(p, M);
    auto f = [&](double th) { return std::pow(th, p) + th + M; };
    for (double r : {t.r0() + 1.0, 10.0, 100.0}) {
        const double X = t.xi_upper_time(r);
        const int N = 100000;
        const double h = 0.9 * X / N;
        double th = r, worst = 0.0;
        for (int k = 1; k <= N; ++k) {
            const double k1 = f(th), k2 = f(th + 0.5 * h * k1), k3 = f(th + 0.5 * h * k2), k4 = f(th + h * k3);
            th += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
            if (k % 1000 == 0) worst = std::max(worst, std::abs(t.upper_envelope(r, k * h) - th) / th);
        }
        EXPECT_LE(worst, 1e-6) << r;
    }
}

TEST(Barrier, EnvelopeControlFreeStrictlyInside) {
    BlowupModel md;
    md.n = 2;
    md.p = 2.0;
    md.B = PiecewiseMatrix(Mat::Identity(2, 2));
    const auto sys = build_blowup_system(md);
    const BarrierTable tab(2.0, md.drift_bound());
    const Vec y0 = Vec::Constant(2, tab.r0());  // |y0| = r0 sqrt 2
    const auto tr = integrate_forward(sys, RelaxedSchedule::constant(0, 2, Vec::Zero(2)), y0, TargetSet::point(Vec::Zero(2)), 2.0);
    ASSERT_EQ(tr.hit.status, HitStatus::HitTarget);
    const auto r = envelope_bracket_check(tab, tr, 0.0);
    EXPECT_TRUE(r.pass);
    EXPECT_GT(r.upper_margin, 0.0);
    EXPECT_GT(r.lower_margin, 0.0);
    EXPECT_GT(r.samples, 10u);
}

TEST(Barrier, EnvelopeUpperSolutionIsBoundary) {
    // theta' = theta^2 + theta + M realized as the scalar system with g = M, h = -1
    const double M = 0.75;
    BlowupModel md;
    md.n = 1;
    md.p = 2.0;
    md.B = PiecewiseMatrix(Mat::Zero(1, 1));
    md.g = PiecewiseVector(Vec::Constant(1, M));
    md.h = constant_h(-1.0);
    const auto sys = build_blowup_system(md);
    const BarrierTable tab(2.0, M);
    IntegrateOptions opt;
    opt.rtol = 1e-12;
    opt.atol = 1e-14;
    const auto tr = integrate_forward(sys, RelaxedSchedule::constant(0, 1, Vec::Zero(1)), Vec::Constant(1, 2.0 * tab.r0()),
                                      TargetSet::point(Vec::Zero(1)), 1.0, opt);
    ASSERT_EQ(tr.hit.status, HitStatus::HitTarget);
    const auto r = envelope_bracket_check(tab, tr, 0.0);
    EXPECT_TRUE(r.pass);
    EXPECT_NEAR(r.upper_margin, 0.0, 1e-8);
    EXPECT_GT(r.lower_margin, 0.0);
}

TEST(Barrier, EnvelopeSweep) {
    const auto s = envelope_sweep(2024, 20);
    EXPECT_EQ(s.instances, 20u);
    EXPECT_EQ(s.violations, 0u);
    EXPECT_GT(s.min_margin, 0.0);
}

TEST(Barrier, MtildeTerms) {
    const BarrierTable t(2.0, 0.0);
    const auto m = mtilde_terms(t, 0.5);
    const double r = 2.0 * (1.0 + 1e-6);
    const double xl = std::log(r / (r - 1.0));
    EXPECT_DOUBLE_EQ(m.r0, 2.0);
    EXPECT_NEAR(m.power_term, 4.0, 1e-14);
    EXPECT_NEAR(m.exp_term, std::sqrt(2.0 * std::exp(xl) / 0.5), 1e-9);
    EXPECT_EQ(m.drift_term, 0.0);
    EXPECT_NEAR(m.value, 4.0, 1e-14);

    const BarrierTable t1(2.0, 1.0);
    double prev = 0.0;
    for (double a : {0.9, 0.99, 0.999, 0.9999}) {
        const double v = mtilde(t1, a);
        EXPECT_GT(v, prev);
        prev = v;
    }
    EXPECT_GT(prev, 1e3);
    const auto small = mtilde_terms(t1, 1e-6);
    EXPECT_LT(small.power_term, 1e-4);
    EXPECT_EQ(small.value, std::max({small.r0, small.exp_term, small.drift_term}));
    EXPECT_THROW((void)mtilde(t1, 1.0), Error);
    EXPECT_THROW((void)mtilde(t1, 0.0), Error);
    // alternative reading of the exponential term
    EXPECT_LT(mtilde_terms(t1, 0.5, true).exp_term, mtilde_terms(t1, 0.5).exp_term);
}

TEST(Barrier, LowerBoundZeroDamping) {
    const BarrierTable t(2.0, 0.0);
    const auto r = blowup_lower_bound_check(t, 0.5, 0.0, 0.05, constant_h(0.0), {}, Vec::Constant(1, 10.0));
    EXPECT_EQ(r.rhs, 0.0);
    EXPECT_TRUE(r.pass);
}

TEST(Barrier, LowerBoundScalarClosedForm) {
    const BarrierTable t(2.0, 0.0);
    const double ys = 10.0, alpha = 0.5, T = 0.05;
    const auto r = blowup_lower_bound_check(t, alpha, 0.0, T, constant_h(1.0), {}, Vec::Constant(1, ys));
    // y' = y^2 - y: 1/y(t) = 1 + (1/ys - 1) e^t
    const double yT = 1.0 / (1.0 + (1.0 / ys - 1.0) * std::exp(T));
    EXPECT_NEAR(r.y_T_norm, yT, 1e-7 * yT);
    // xi_*(tau) = 1 / (1 - e^{-tau}); Simpson on the kernel
    const int N = 20000;
    double rhs = 0.0;
    for (int k = 0; k <= N; ++k) {
        const double tt = T * k / N;
        const double w = (k == 0 || k == N) ? 1.0 : (k % 2 ? 4.0 : 2.0);
        rhs += w * alpha * std::pow(1.0 - std::exp(-(T - tt)), alpha);
    }
    rhs *= T / (3.0 * N);
    EXPECT_NEAR(r.rhs, rhs, 1e-6);
    EXPECT_TRUE(r.pass);
    EXPECT_GT(r.slack, 0.0);
}

TEST(Barrier, LowerBoundErrors) {
    const BarrierTable t(2.0, 0.0);
    try {
        (void)blowup_lower_bound_check(t, 0.5, 0.0, 0.05, constant_h(1.0), {}, Vec::Constant(1, 3.0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::BelowMtilde);
    }
    EXPECT_THROW((void)blowup_lower_bound_check(t, 0.5, 0.0, 0.05, constant_h(1.5), {}, Vec::Constant(1, 10.0)), Error);
}

TEST(Barrier, LowerBoundSweep) {
    const auto s = lower_bound_sweep(99, 10);
    EXPECT_EQ(s.violations, 0u);
    EXPECT_GE(s.min_margin, 0.0);
}

TEST(Barrier, MonotonicityDegenerate) {
    const auto r = quench_monotonicity_check({}, constant_h(0.0), Vec::Constant(2, 0.0), 0.3);
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.margin, 0.0);
    EXPECT_EQ(r.y1, r.yhat1);
}

TEST(Barrier, MonotonicityAgainstRk4) {
    Vec y0(2);
    y0 << 0.0, 1.0;
    const double T = 0.3;
    const auto r = quench_monotonicity_check({}, constant_h(-0.1), y0, T);
    auto run = [&](double hh) {
        auto f = [&](const Vec& y) {
            Vec d(2);
            d << y[1] / (1.0 - y[0]) + hh, y[0] + y[1];
            return d;
        };
        Vec y = y0;
        const int N = 30000;
        const double h = T / N;
        for (int k = 0; k < N; ++k) {
            const Vec k1 = f(y), k2 = f(y + 0.5 * h * k1), k3 = f(y + 0.5 * h * k2), k4 = f(y + h * k3);
            y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        }
        return y[0];
    };
    EXPECT_NEAR(r.y1, run(0.0), 1e-8);
    EXPECT_NEAR(r.yhat1, run(-0.1), 1e-8);
    EXPECT_TRUE(r.pass);
    EXPECT_GT(r.margin, 0.0);
}

TEST(Barrier, MonotonicityErrors) {
    Vec y0(2);
    y0 << 0.0, 1.0;
    EXPECT_THROW((void)quench_monotonicity_check({}, constant_h(0.1), y0, 0.3), Error);
    try {
        (void)quench_monotonicity_check({}, constant_h(-0.1), y0, 5.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::BaselineQuenchedEarly);
    }
    Vec y2(2);
    y2 << 2.0, 0.0;
    EXPECT_THROW((void)quench_monotonicity_check({}, constant_h(-0.1), y2, 0.3), Error);
}

TEST(Barrier, MonotonicitySweeps) {
    for (int which : {1, 2}) {
        const auto s = monotonicity_sweep(7 + which, 10, which);
        EXPECT_EQ(s.violations, 0u) << which;
        EXPECT_GT(s.min_margin, 0.0);
    }
}
