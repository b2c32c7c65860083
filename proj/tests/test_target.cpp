#include "tosc/target.hpp"

#include <gtest/gtest.h>

using namespace tosc;

namespace {

Vec v2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

std::vector<TargetSet> sample_targets(double alpha) {
    Vec n(2);
    n << 1.0, 2.0;
    return {TargetSet::hyperplane(0, 1.0, alpha), TargetSet::half_space(n, 0.5, alpha), TargetSet::ball(v2(0.3, -0.2), 1.5, alpha),
            TargetSet::point(v2(-1.0, 2.0), alpha)};
}

}  // namespace

TEST(Target, HyperplaneDistance) {
    EXPECT_DOUBLE_EQ(TargetSet::hyperplane(0, 1.0).distance(v2(3, 5)), 2.0);
    EXPECT_DOUBLE_EQ(TargetSet::hyperplane(0, 1.0, 0.5).distance(v2(3, 5)), 1.5);
}

TEST(Target, PointDistance) {
    Vec x(3);
    x << 2.0, 3.0, 6.0;  // |x| = 7
    EXPECT_DOUBLE_EQ(TargetSet::point(Vec::Zero(3)).distance(x), 7.0);
}

TEST(Target, Projections) {
    EXPECT_TRUE(TargetSet::hyperplane(0, 1.0).project(v2(3, 5)).isApprox(v2(1, 5)));
    const Vec inside = v2(1.2, 7.0);
    EXPECT_EQ(TargetSet::hyperplane(0, 1.0, 0.5).project(inside), inside);
    EXPECT_TRUE(TargetSet::ball(Vec::Zero(2), 1.0).project(v2(0, 2)).isApprox(v2(0, 1)));
}

TEST(Target, DistanceProjectionDuality) {
    Rng rng(11);
    for (double alpha : {0.0, 0.3}) {
        for (const auto& tgt : sample_targets(alpha)) {
            for (int i = 0; i < 500; ++i) {
                const Vec x = 4.0 * rng.normal_vector(2);
                const Vec p = tgt.project(x);
                EXPECT_NEAR((x - p).norm(), tgt.distance(x), 1e-12);
                EXPECT_LE((tgt.project(p) - p).norm(), 1e-12);
                EXPECT_LE(tgt.distance(p), 1e-12);
            }
        }
    }
}

TEST(Target, InflationMonotone) {
    Rng rng(12);
    const auto small = sample_targets(0.1);
    const auto big = sample_targets(0.4);
    for (std::size_t k = 0; k < small.size(); ++k)
        for (int i = 0; i < 200; ++i) {
            const Vec x = 3.0 * rng.normal_vector(2);
            EXPECT_LE(big[k].distance(x), small[k].distance(x));
        }
}

TEST(Target, HyperplaneTransversality) {
    const auto tgt = TargetSet::hyperplane(0, 1.0);
    EXPECT_EQ(tgt.transversality_residual(v2(1, 0), v2(-1, 0)), 0.0);
    EXPECT_EQ(tgt.transversality_residual(v2(1, 0), v2(0, 1)), kInf);
    // characterization: finite and zero iff tangential part vanishes
    EXPECT_EQ(tgt.transversality_residual(v2(1, 0), v2(1, 1e-12)), 0.0);
    EXPECT_EQ(tgt.transversality_residual(v2(1, 0), v2(1, 1e-8)), kInf);
}

TEST(Target, InflatedHyperplaneSign) {
    // approach from below: Q_alpha boundary at x1 = 1 - alpha, inner normal +e1
    const auto tgt = TargetSet::hyperplane(0, 1.0, 0.25);
    EXPECT_EQ(tgt.transversality_residual(v2(0.75, 3), v2(2, 0)), 0.0);
    EXPECT_NEAR(tgt.transversality_residual(v2(0.75, 3), v2(-2, 0)), 1.0, 1e-15);
}

TEST(Target, PointTransversalityAlwaysZero) {
    Rng rng(3);
    const auto tgt = TargetSet::point(v2(0.5, 0.5));
    for (int i = 0; i < 50; ++i) EXPECT_EQ(tgt.transversality_residual(v2(0.5, 0.5), rng.normal_vector(2)), 0.0);
}

TEST(Target, BallAndHalfSpaceTransversality) {
    const auto ball = TargetSet::ball(Vec::Zero(2), 1.0, 0.5);
    const Vec q = v2(1.5, 0.0);
    EXPECT_NEAR(ball.transversality_residual(q, v2(-3, 0)), 0.0, 1e-14);
    EXPECT_GT(ball.transversality_residual(q, v2(-3, 1)), 0.0);
    const auto hs = TargetSet::half_space(v2(2, 0), 4.0);  // x1 >= 2
    EXPECT_EQ(hs.transversality_residual(v2(2, 7), v2(5, 0)), 0.0);
    EXPECT_EQ(hs.transversality_residual(v2(2, 7), v2(-5, 0)), kInf);
}

TEST(Target, NotOnBoundary) {
    const auto tgt = TargetSet::ball(Vec::Zero(2), 1.0);
    try {
        (void)tgt.transversality_residual(v2(0.2, 0), v2(1, 0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotOnBoundary);
    }
}

TEST(Target, TransformedResidual) {
    const auto tgt = TargetSet::hyperplane(0, 1.0);
    const Vec q = v2(1, 0);
    EXPECT_EQ(tgt.transformed_transversality_residual(Mat::Identity(2, 2), q, v2(-1, 0)),
              tgt.transversality_residual(q, v2(-1, 0)));
    Mat g = Mat::Zero(2, 2);
    g(0, 0) = 2.0;
    g(1, 1) = 1.0;
    EXPECT_EQ(tgt.transformed_transversality_residual(g, q, v2(-2, 0)), tgt.transversality_residual(q, v2(-1, 0)));

    const auto inflated = TargetSet::hyperplane(0, 1.0, 0.2);
    const Vec qa = v2(0.8, 0.3);
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        Mat j = rng.normal_vector(4).reshaped(2, 2);
        if (std::abs(j.determinant()) < 1e-2) continue;
        const Vec psi = j * v2(rng.uniform(0.1, 3.0), 0.0);
        EXPECT_NEAR(inflated.transformed_transversality_residual(j, qa, psi), 0.0, 1e-12);
    }
    try {
        (void)tgt.transformed_transversality_residual(Mat::Zero(2, 2), q, v2(1, 0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SingularJacobian);
    }
}
