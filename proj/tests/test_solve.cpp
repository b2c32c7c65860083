#include "tosc/solve.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>

using namespace tosc;

namespace {

Vec v2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

ControlSystem toy1() { return make_toy_system(ControlSet::box(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0))); }

Design constant_design(int cells, const Vec& u, double w) {
    Design d;
    d.w = w;
    d.grid = unit_grid(cells);
    for (int c = 0; c < cells; ++c) d.cells.push_back(dirac_cell(u));
    return d;
}

}  // namespace

TEST(Solve, SimplexProjection) {
    std::vector<double> v{0.2, 0.2, 0.2};
    detail::project_simplex(v);
    for (double x : v) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
    v = {2.0, 0.0, -1.0};
    detail::project_simplex(v);
    EXPECT_EQ(v, (std::vector<double>{1.0, 0.0, 0.0}));
    v = {0.6, 0.6};
    detail::project_simplex(v);
    EXPECT_NEAR(v[0], 0.5, 1e-15);
}

TEST(Solve, ToyGradientClosedForm) {
    const auto sys = toy1();
    const auto tgt = TargetSet::point(Vec::Constant(1, 1.0));
    const Design d = constant_design(4, Vec::Constant(1, 0.2), 1.0);
    ObjectiveOptions oo;
    oo.penalty = 1.0;
    const auto g = objective_gradient(sys, tgt, d, Vec::Zero(1), oo);
    EXPECT_NEAR(g.distance, 0.8, 1e-12);
    EXPECT_NEAR(g.value, 1.0 + 0.64, 1e-12);
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(g.datoms[static_cast<std::size_t>(c)][0][0], -2.0 * 0.8 * 0.25, 1e-10);
    // d/dw of w + (1 - 0.2 w)^2 at w = 1
    EXPECT_NEAR(g.dw, 1.0 - 2.0 * 0.8 * 0.2, 1e-10);
}

TEST(Solve, ZeroLengthCellHasZeroGradient) {
    const auto sys = toy1();
    Design d = constant_design(3, Vec::Constant(1, 0.3), 1.0);
    d.grid = {0.0, 0.5, 0.5, 1.0};
    const auto g = objective_gradient(sys, TargetSet::point(Vec::Constant(1, 1.0)), d, Vec::Zero(1));
    EXPECT_EQ(g.datoms[1][0][0], 0.0);
    EXPECT_EQ(g.dweights[1][0], 0.0);
    EXPECT_NE(g.datoms[0][0][0], 0.0);
}

TEST(Solve, HitBeforeHorizonIsPureTime) {
    const auto sys = toy1();
    const auto g = objective_gradient(sys, TargetSet::point(Vec::Constant(1, 1.0), 0.1), constant_design(2, Vec::Constant(1, 1.0), 2.0),
                                      Vec::Zero(1));
    EXPECT_EQ(g.status, HitStatus::HitTarget);
    EXPECT_EQ(g.value, 2.0);
    EXPECT_EQ(g.dw, 1.0);
}

TEST(Solve, GradientMatchesCentralDifferences) {
    ObjectiveOptions oo;
    oo.penalty = 3.0;
    oo.integrate.rtol = 1e-13;
    oo.integrate.atol = 1e-15;
    oo.adjoint_rtol = 1e-12;
    int with_breaks = 0;
    for (int k = 0; k < 20; ++k) {
        const auto in = testing_support::random_instance(k);
        if (!in.sys.breakpoints.empty() && in.sys.breakpoints.front() < in.d.w) ++with_breaks;
        EXPECT_LE(testing_support::gradient_relative_error(in, oo), 1e-4) << "instance " << k;
    }
    EXPECT_GE(with_breaks, 15);
}

TEST(Solve, ToyInflated) {
    const auto sys = toy1();
    const auto r = solve_alpha(sys, TargetSet::point(Vec::Constant(1, 1.0)), Vec::Zero(1), 0.25);
    EXPECT_NEAR(r.w, 0.75, 1e-3);
    EXPECT_EQ(r.trajectory.hit.status, HitStatus::HitTarget);
    EXPECT_EQ(r.w, r.trajectory.hit.time);
    ASSERT_TRUE(r.classical.has_value());
    for (const auto& u : r.classical->values) EXPECT_NEAR(u[0], 1.0, 1e-3);
    EXPECT_TRUE(r.converged) << r.reason;
}

TEST(Solve, HalfSpaceStraightLine) {
    const auto sys = make_toy_system(ControlSet::ball(2, 1.0));
    const auto r = solve_alpha(sys, TargetSet::half_space(v2(1, 0), 2.0), Vec::Zero(2), 0.0);
    EXPECT_NEAR(r.w, 2.0, 1e-3);
    ASSERT_TRUE(r.classical.has_value());
    for (const auto& u : r.classical->values) EXPECT_LE((u - v2(1, 0)).norm(), 5e-2);
}

TEST(Solve, QuenchingBeatsOneSwitchOracle) {
    const auto sys = make_quenching_system(PiecewiseMatrix(Mat::Identity(2, 2)), 1.0);
    const auto r = solve_alpha(sys, TargetSet::hyperplane(0, 1.0), v2(0.0, 0.5), 0.1);
    const double oracle = testing_support::oracle_one_switch(0.5);
    ASSERT_TRUE(std::isfinite(oracle));
    EXPECT_LE(r.w, oracle + 2e-2);
    EXPECT_GE(r.w, oracle - 2e-2);
    EXPECT_EQ(r.trajectory.hit.status, HitStatus::HitTarget);

    // Filippov selection reproduces the relaxed hit time
    const auto cs = classicalize(sys, r);
    auto tgt = TargetSet::hyperplane(0, 1.0, 0.1);
    const auto hit = hit_with_schedule(sys, tgt, v2(0.0, 0.5), to_dirac(cs), 2.0 * r.w);
    ASSERT_EQ(hit.status, HitStatus::HitTarget);
    EXPECT_NEAR(hit.time, r.w, 1e-6);

    // feasibility at a 10x tighter tolerance
    IntegrateOptions tight;
    tight.rtol = 1e-10;
    tight.atol = 1e-12;
    tight.hit_tol = 1e-9;
    const auto h2 = hit_with_schedule(sys, tgt, v2(0.0, 0.5), r.schedule, 2.0 * r.w, tight);
    EXPECT_EQ(h2.status, HitStatus::HitTarget);
    EXPECT_NEAR(h2.time, r.w, 1e-6);
}

TEST(Solve, ClassicalizeDiracUnchanged) {
    const auto sys = toy1();
    SolveResult r;
    r.schedule = RelaxedSchedule({0.0, 0.5, 1.0}, {dirac_cell(Vec::Constant(1, 0.3)), dirac_cell(Vec::Constant(1, -1.0))});
    const auto c = classicalize(sys, r);
    EXPECT_EQ(c.values[0][0], 0.3);
    EXPECT_EQ(c.values[1][0], -1.0);
    r.schedule = RelaxedSchedule({0.0, 1.0}, {Cell{{Vec::Constant(1, 1.0), Vec::Constant(1, -1.0)}, {0.5, 0.5}}});
    EXPECT_EQ(classicalize(sys, r).values[0][0], 0.0);
    const auto nc = make_toy_system(ControlSet::atoms({Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)}));
    EXPECT_THROW((void)classicalize(nc, r), Error);
}

TEST(Solve, Infeasible) {
    SolveOptions so;
    so.t_max = 1.0;
    so.multistarts = 2;
    try {
        (void)solve_alpha(toy1(), TargetSet::point(Vec::Constant(1, 5.0)), Vec::Zero(1), 0.0, std::nullopt, so);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Infeasible);
    }
    EXPECT_THROW((void)solve_alpha(toy1(), TargetSet::point(Vec::Constant(1, 1.0)), Vec::Zero(1), 1.0), Error);
}

TEST(Solve, DeterministicAcrossWorkerCounts) {
    const auto sys = make_quenching_system(PiecewiseMatrix(Mat::Identity(2, 2)), 1.0);
    SolveOptions a, b;
    a.workers = 1;
    b.workers = 3;
    a.multistarts = b.multistarts = 3;
    const auto ra = solve_alpha(sys, TargetSet::hyperplane(0, 1.0), v2(0.0, 0.5), 0.2, std::nullopt, a);
    const auto rb = solve_alpha(sys, TargetSet::hyperplane(0, 1.0), v2(0.0, 0.5), 0.2, std::nullopt, b);
    EXPECT_EQ(ra.w, rb.w);
    EXPECT_EQ(ra.hash, rb.hash);
    EXPECT_EQ(ra.start_index, rb.start_index);
}

TEST(Solve, AitkenExtrapolation) {
    std::vector<double> w;
    for (int k = 0; k < 5; ++k) w.push_back(1.0 - 0.3 * std::pow(0.5, k));
    EXPECT_NEAR(extrapolate_limit(w), 1.0, 1e-12);
    EXPECT_EQ(extrapolate_limit({0.5, 0.5, 0.5}), 0.5);
    EXPECT_EQ(extrapolate_limit({0.25}), 0.25);
}

TEST(Solve, ToyLadder) {
    const auto sys = toy1();
    const auto tr = alpha_ladder(sys, TargetSet::point(Vec::Constant(1, 1.0)), Vec::Zero(1));
    ASSERT_EQ(tr.rungs.size(), 12u);
    for (const auto& r : tr.rungs) EXPECT_NEAR(r.w, 1.0 - r.alpha, 1e-3) << r.k;
    for (std::size_t k = 1; k < tr.rungs.size(); ++k) EXPECT_LT(tr.rungs[k].alpha, tr.rungs[k - 1].alpha);
    EXPECT_EQ(tr.raw_violations, 0u);
    EXPECT_EQ(tr.violations, 0u);
    EXPECT_NEAR(tr.limit, 1.0, 1e-3);
}

TEST(Solve, ControlFreeBlowupLadder) {
    BlowupModel md;
    md.n = 1;
    md.p = 2.0;
    md.gamma = 1.0;
    md.B = PiecewiseMatrix(Mat::Zero(1, 1));
    const auto sys = build_blowup_system(md);
    const auto tr = alpha_ladder(sys, TargetSet::point(Vec::Zero(1)), Vec::Constant(1, 1.0));
    for (const auto& r : tr.rungs) EXPECT_NEAR(r.w, 1.0 - r.alpha, 1e-6) << r.k;
    EXPECT_EQ(tr.violations, 0u);
    EXPECT_NEAR(tr.limit, 1.0, 1e-4);
}

TEST(Solve, LadderBackfillRepairsRegression) {
    const auto sys = toy1();
    const auto base = TargetSet::point(Vec::Constant(1, 1.0));
    LadderTrace tr;
    LadderRung bad, good;
    bad.alpha = 0.5;
    bad.w = bad.solved_w = 0.9;
    bad.schedule = RelaxedSchedule::constant(0.0, 0.9, Vec::Constant(1, 0.5 / 0.9));
    good.k = 1;
    good.alpha = 0.25;
    good.w = good.solved_w = 0.75;
    good.schedule = RelaxedSchedule::constant(0.0, 0.75, Vec::Constant(1, 1.0));
    tr.rungs = {bad, good};
    backfill_ladder(tr, sys, base, Vec::Zero(1), {}, {});
    EXPECT_EQ(tr.raw_violations, 1u);
    EXPECT_EQ(tr.backfills, 1u);
    EXPECT_EQ(tr.violations, 0u);
    EXPECT_TRUE(tr.rungs[0].backfilled);
    EXPECT_NEAR(tr.rungs[0].w, 0.5, 1e-7);
    EXPECT_EQ(tr.rungs[0].solved_w, 0.9);
}

TEST(Solve, RadialBlowupClosedForm) {
    // B = I on the unit ball: the radial control gives r' = r^2 + 1, and
    // |G(y)| = |y|^-2 <= alpha means r >= alpha^(-1/2)
    const auto sys = make_blowup_system(2, 2.0, PiecewiseMatrix(Mat::Identity(2, 2)), 1.0);
    const auto base = TargetSet::point(Vec::Zero(2));
    for (double a : {0.05, 0.01}) {
        const auto r = solve_alpha(sys, base, v2(1.0, 0.0), a);
        const double oracle = std::atan(1.0 / std::sqrt(a)) - std::atan(1.0);
        EXPECT_NEAR(r.w, oracle, 1e-6) << a;
        ASSERT_TRUE(r.classical.has_value());
        for (const auto& u : r.classical->values) EXPECT_LE((u - v2(1, 0)).norm(), 1e-3);
    }
}
