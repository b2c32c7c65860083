#pragma once

// Convex closed targets Q, their inflations Q_alpha = {x : d(x, Q) <= alpha},
// and normal-cone residuals for terminal transversality.

#include "tosc/core.hpp"

#include <algorithm>
#include <variant>

namespace tosc {

/// {x : x[axis] = level}; axis is 0-based.
struct Hyperplane {
    int axis = 0;
    double level = 0.0;
};

/// {x : <normal, x> >= offset}.
struct HalfSpace {
    Vec normal;
    double offset = 0.0;
};

struct Ball {
    Vec center;
    double radius = 0.0;
};

struct Point {
    Vec location;
};

using TargetShape = std::variant<Hyperplane, HalfSpace, Ball, Point>;

class TargetSet {
public:
    static constexpr double kTangentialTol = 1e-10;

    explicit TargetSet(TargetShape shape, double alpha = 0.0) : shape_(std::move(shape)), alpha_(alpha) {
        if (!(alpha_ >= 0.0) || !std::isfinite(alpha_)) fail(ErrorKind::InvalidArgument, "target", "inflation must be finite and >= 0");
        if (auto* h = std::get_if<HalfSpace>(&shape_)) {
            const double nn = h->normal.norm();
            if (!(nn > 0.0)) fail(ErrorKind::InvalidArgument, "target", "half-space normal must be nonzero");
            // store the unit normal so distances are Euclidean
            h->offset /= nn;
            h->normal /= nn;
        }
        if (auto* b = std::get_if<Ball>(&shape_)) {
            if (!(b->radius >= 0.0)) fail(ErrorKind::InvalidArgument, "target", "ball radius must be >= 0");
        }
        if (auto* hp = std::get_if<Hyperplane>(&shape_)) {
            if (hp->axis < 0) fail(ErrorKind::InvalidArgument, "target", "hyperplane axis must be >= 0");
        }
    }

    static TargetSet hyperplane(int axis, double level, double alpha = 0.0) { return TargetSet(Hyperplane{axis, level}, alpha); }
    static TargetSet half_space(Vec normal, double offset, double alpha = 0.0) {
        return TargetSet(HalfSpace{std::move(normal), offset}, alpha);
    }
    static TargetSet ball(Vec center, double radius, double alpha = 0.0) { return TargetSet(Ball{std::move(center), radius}, alpha); }
    static TargetSet point(Vec location, double alpha = 0.0) { return TargetSet(Point{std::move(location)}, alpha); }

    [[nodiscard]] const TargetShape& shape() const noexcept { return shape_; }
    [[nodiscard]] double alpha() const noexcept { return alpha_; }

    [[nodiscard]] TargetSet inflated(double alpha) const { return TargetSet(shape_, alpha); }

    /// Distance to the uninflated set Q.
    [[nodiscard]] double base_distance(const Vec& x) const {
        if (!x.allFinite()) return kInf;
        return std::visit(
            [&](const auto& s) -> double {
                using S = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<S, Hyperplane>) {
                    check_axis(s, x);
                    return std::abs(x[s.axis] - s.level);
                } else if constexpr (std::is_same_v<S, HalfSpace>) {
                    return std::max(0.0, s.offset - s.normal.dot(x));
                } else if constexpr (std::is_same_v<S, Ball>) {
                    return std::max(0.0, (x - s.center).norm() - s.radius);
                } else {
                    return (x - s.location).norm();
                }
            },
            shape_);
    }

    /// d(x, Q_alpha) = max(d(x, Q) - alpha, 0).
    [[nodiscard]] double distance(const Vec& x) const { return std::max(base_distance(x) - alpha_, 0.0); }

    /// Nearest point of Q_alpha.
    [[nodiscard]] Vec project(const Vec& x) const { return project_inflated(x, alpha_); }

    /// Nearest point of the uninflated Q.
    [[nodiscard]] Vec project_base(const Vec& x) const { return project_inflated(x, 0.0); }

    /// Signed depth of x inside Q_alpha: positive in the interior, zero on the
    /// boundary, negative outside (then equal to minus the distance).
    [[nodiscard]] double interior_depth(const Vec& x) const {
        return std::visit(
            [&](const auto& s) -> double {
                using S = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<S, Hyperplane>) {
                    check_axis(s, x);
                    return alpha_ - std::abs(x[s.axis] - s.level);
                } else if constexpr (std::is_same_v<S, HalfSpace>) {
                    return s.normal.dot(x) - (s.offset - alpha_);
                } else if constexpr (std::is_same_v<S, Ball>) {
                    return s.radius + alpha_ - (x - s.center).norm();
                } else {
                    return alpha_ - (x - s.location).norm();
                }
            },
            shape_);
    }

    /// max(0, -inf_{q in Q_alpha} <psi, q - q_star>) in closed form. Unbounded
    /// violations are reported as +infinity.
    [[nodiscard]] double transversality_residual(const Vec& q_star, const Vec& psi, double tol = 1e-8) const {
        if (q_star.size() != psi.size()) fail(ErrorKind::InvalidArgument, "target", "covector dimension mismatch");
        const double depth = interior_depth(q_star);
        if (depth > tol) fail(ErrorKind::NotOnBoundary, "target", "point lies in the interior of the inflated target");
        if (-depth > tol) fail(ErrorKind::NotOnBoundary, "target", "point lies outside the inflated target");
        const double pn = psi.norm();
        return std::visit(
            [&](const auto& s) -> double {
                using S = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<S, Hyperplane>) {
                    check_axis(s, q_star);
                    Vec tangential = psi;
                    tangential[s.axis] = 0.0;
                    if (tangential.norm() > kTangentialTol * pn) return kInf;
                    const double pi = psi[s.axis];
                    return std::max(0.0, pi * (q_star[s.axis] - s.level) + alpha_ * std::abs(pi));
                } else if constexpr (std::is_same_v<S, HalfSpace>) {
                    const double c = psi.dot(s.normal);
                    if ((psi - c * s.normal).norm() > kTangentialTol * pn) return kInf;
                    if (c < -kTangentialTol * pn) return kInf;
                    return std::max(0.0, c * (s.normal.dot(q_star) - (s.offset - alpha_)));
                } else if constexpr (std::is_same_v<S, Ball>) {
                    return std::max(0.0, psi.dot(q_star - s.center) + (s.radius + alpha_) * pn);
                } else {
                    return std::max(0.0, psi.dot(q_star - s.location) + alpha_ * pn);
                }
            },
            shape_);
    }

    /// Residual after pulling psi back through a coordinate change whose
    /// Jacobian (in the same convention the covector transforms with) is given.
    [[nodiscard]] double transformed_transversality_residual(const Mat& g_jacobian, const Vec& q_star, const Vec& psi,
                                                             double tol = 1e-8) const {
        if (g_jacobian.rows() != psi.size() || g_jacobian.cols() != psi.size())
            fail(ErrorKind::InvalidArgument, "target", "Jacobian dimension mismatch");
        Eigen::FullPivLU<Mat> lu(g_jacobian);
        const double scale = g_jacobian.cwiseAbs().maxCoeff();
        lu.setThreshold(1e-13);
        if (!(scale > 0.0) || !lu.isInvertible()) fail(ErrorKind::SingularJacobian, "target", "coordinate-change Jacobian is singular");
        const Vec pulled = lu.solve(psi);
        if (!pulled.allFinite()) fail(ErrorKind::SingularJacobian, "target", "coordinate-change Jacobian is singular");
        return transversality_residual(q_star, pulled, tol);
    }

    /// Unit inner normal of Q at the projection of x (points from x toward Q).
    /// Returns an empty vector when x lies in Q.
    [[nodiscard]] Vec inner_normal(const Vec& x) const {
        const Vec p = project_base(x);
        const Vec d = p - x;
        const double nd = d.norm();
        if (!(nd > 0.0)) return Vec();
        return d / nd;
    }

private:
    static void check_axis(const Hyperplane& s, const Vec& x) {
        if (s.axis >= x.size()) fail(ErrorKind::InvalidArgument, "target", "hyperplane axis out of range");
    }

    [[nodiscard]] Vec project_inflated(const Vec& x, double a) const {
        return std::visit(
            [&](const auto& s) -> Vec {
                using S = std::decay_t<decltype(s)>;
                Vec out = x;
                if constexpr (std::is_same_v<S, Hyperplane>) {
                    check_axis(s, x);
                    const double off = x[s.axis] - s.level;
                    if (std::abs(off) > a) out[s.axis] = s.level + (off > 0 ? a : -a);
                } else if constexpr (std::is_same_v<S, HalfSpace>) {
                    const double gap = (s.offset - a) - s.normal.dot(x);
                    if (gap > 0.0) out += gap * s.normal;
                } else if constexpr (std::is_same_v<S, Ball>) {
                    const Vec d = x - s.center;
                    const double nd = d.norm();
                    const double r = s.radius + a;
                    if (nd > r) out = s.center + d * (r / nd);
                } else {
                    const Vec d = x - s.location;
                    const double nd = d.norm();
                    if (nd > a) out = s.location + d * (a / nd);
                }
                return out;
            },
            shape_);
    }

    TargetShape shape_;
    double alpha_ = 0.0;
};

}  // namespace tosc
