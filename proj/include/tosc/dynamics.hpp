#pragma once

// Controlled vector fields y' = f(t, y, u).
//
// Jacobian convention: entry (i, j) of `jacobian` is d f^j / d y_i, i.e. the
// transpose of the usual Df. With it the adjoint equation reads
// psi' = -jacobian * psi with no further transpose. `input_jacobian` uses the
// ordinary orientation, entry (j, k) = d f^j / d u_k.

#include "tosc/core.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace tosc {

// ---------------------------------------------------------------------------
// Control sets

struct BallSet {
    int m = 1;
    double radius = 1.0;
};

struct BoxSet {
    Vec lower;
    Vec upper;
};

struct FiniteAtomsSet {
    std::vector<Vec> points;
};

class ControlSet {
public:
    using Variant = std::variant<BallSet, BoxSet, FiniteAtomsSet>;

    explicit ControlSet(Variant v) : v_(std::move(v)) { validate(); }

    static ControlSet ball(int m, double radius) { return ControlSet(BallSet{m, radius}); }
    static ControlSet box(Vec lower, Vec upper) { return ControlSet(BoxSet{std::move(lower), std::move(upper)}); }
    static ControlSet atoms(std::vector<Vec> points) { return ControlSet(FiniteAtomsSet{std::move(points)}); }

    [[nodiscard]] const Variant& variant() const noexcept { return v_; }
    [[nodiscard]] bool is_ball() const noexcept { return std::holds_alternative<BallSet>(v_); }
    [[nodiscard]] bool is_box() const noexcept { return std::holds_alternative<BoxSet>(v_); }
    [[nodiscard]] bool is_finite() const noexcept { return std::holds_alternative<FiniteAtomsSet>(v_); }
    [[nodiscard]] bool is_convex() const noexcept { return !is_finite() || std::get<FiniteAtomsSet>(v_).points.size() == 1; }

    [[nodiscard]] int dim() const {
        if (auto* b = std::get_if<BallSet>(&v_)) return b->m;
        if (auto* b = std::get_if<BoxSet>(&v_)) return static_cast<int>(b->lower.size());
        return static_cast<int>(std::get<FiniteAtomsSet>(v_).points.front().size());
    }

    [[nodiscard]] bool contains(const Vec& u, double tol = 1e-12) const {
        if (u.size() != dim()) return false;
        if (auto* b = std::get_if<BallSet>(&v_)) return u.norm() <= b->radius * (1.0 + tol) + tol;
        if (auto* b = std::get_if<BoxSet>(&v_)) {
            for (int i = 0; i < u.size(); ++i)
                if (u[i] < b->lower[i] - tol || u[i] > b->upper[i] + tol) return false;
            return true;
        }
        for (const auto& p : std::get<FiniteAtomsSet>(v_).points)
            if ((p - u).norm() <= tol * (1.0 + p.norm())) return true;
        return false;
    }

    /// Euclidean projection (nearest atom for finite sets).
    [[nodiscard]] Vec project(const Vec& u) const {
        if (auto* b = std::get_if<BallSet>(&v_)) {
            const double nu = u.norm();
            return nu > b->radius ? Vec(u * (b->radius / nu)) : u;
        }
        if (auto* b = std::get_if<BoxSet>(&v_)) return u.cwiseMax(b->lower).cwiseMin(b->upper);
        const auto& pts = std::get<FiniteAtomsSet>(v_).points;
        std::size_t best = 0;
        double bd = kInf;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const double d = (pts[i] - u).squaredNorm();
            if (d < bd) {
                bd = d;
                best = i;
            }
        }
        return pts[best];
    }

    /// A random point of the boundary (a random atom for finite sets).
    [[nodiscard]] Vec sample_boundary(Rng& rng) const {
        if (auto* b = std::get_if<BallSet>(&v_)) return b->radius * rng.unit_vector(b->m);
        if (auto* b = std::get_if<BoxSet>(&v_)) {
            Vec u(b->lower.size());
            for (int i = 0; i < u.size(); ++i) u[i] = rng.uniform(b->lower[i], b->upper[i]);
            const auto k = static_cast<int>(rng.index(static_cast<std::size_t>(u.size())));
            u[k] = rng.uniform() < 0.5 ? b->lower[k] : b->upper[k];
            return u;
        }
        const auto& pts = std::get<FiniteAtomsSet>(v_).points;
        return pts[rng.index(pts.size())];
    }

    /// A random point of the set, uniform for balls and boxes.
    [[nodiscard]] Vec sample(Rng& rng) const {
        if (auto* b = std::get_if<BallSet>(&v_))
            return b->radius * std::pow(rng.uniform(), 1.0 / b->m) * rng.unit_vector(b->m);
        if (auto* b = std::get_if<BoxSet>(&v_)) {
            Vec u(b->lower.size());
            for (int i = 0; i < u.size(); ++i) u[i] = rng.uniform(b->lower[i], b->upper[i]);
            return u;
        }
        return sample_boundary(rng);
    }

    /// sup over U of |u|.
    [[nodiscard]] double max_norm() const {
        if (auto* b = std::get_if<BallSet>(&v_)) return b->radius;
        if (auto* b = std::get_if<BoxSet>(&v_)) return b->lower.cwiseAbs().cwiseMax(b->upper.cwiseAbs()).norm();
        double r = 0.0;
        for (const auto& p : std::get<FiniteAtomsSet>(v_).points) r = std::max(r, p.norm());
        return r;
    }

    [[nodiscard]] double diameter() const {
        if (auto* b = std::get_if<BallSet>(&v_)) return 2.0 * b->radius;
        if (auto* b = std::get_if<BoxSet>(&v_)) return (b->upper - b->lower).norm();
        const auto& pts = std::get<FiniteAtomsSet>(v_).points;
        double d = 0.0;
        for (const auto& a : pts)
            for (const auto& b : pts) d = std::max(d, (a - b).norm());
        return d;
    }

private:
    void validate() const {
        if (auto* b = std::get_if<BallSet>(&v_)) {
            if (b->m < 1 || !(b->radius > 0.0) || !std::isfinite(b->radius))
                fail(ErrorKind::InvalidArgument, "dynamics", "ball control set needs m >= 1 and a finite radius > 0");
        } else if (auto* b = std::get_if<BoxSet>(&v_)) {
            if (b->lower.size() == 0 || b->lower.size() != b->upper.size())
                fail(ErrorKind::InvalidArgument, "dynamics", "box bounds must be non-empty and of equal size");
            for (int i = 0; i < b->lower.size(); ++i)
                if (!(b->lower[i] <= b->upper[i]) || !std::isfinite(b->lower[i]) || !std::isfinite(b->upper[i]))
                    fail(ErrorKind::InvalidArgument, "dynamics", "box bounds must be finite with lower <= upper");
        } else {
            const auto& pts = std::get<FiniteAtomsSet>(v_).points;
            if (pts.empty()) fail(ErrorKind::InvalidArgument, "dynamics", "finite control set must be non-empty");
            for (const auto& p : pts)
                if (p.size() != pts.front().size() || p.size() == 0 || !p.allFinite())
                    fail(ErrorKind::InvalidArgument, "dynamics", "finite control atoms must be finite and of equal size");
        }
    }

    Variant v_;
};

// ---------------------------------------------------------------------------
// Piecewise-constant data in time, evaluated left-continuously: values[0] on
// (-inf, b_1], values[k] on (b_k, b_{k+1}], values.back() on (b_last, inf).

template <class T>
class Piecewise {
public:
    Piecewise() = default;
    explicit Piecewise(T constant) : values_{std::move(constant)} {}
    Piecewise(std::vector<double> breaks, std::vector<T> values) : breaks_(std::move(breaks)), values_(std::move(values)) {
        if (values_.size() != breaks_.size() + 1)
            fail(ErrorKind::InvalidArgument, "dynamics", "piecewise data needs exactly one more value than breaks");
        for (std::size_t i = 1; i < breaks_.size(); ++i)
            if (!(breaks_[i] > breaks_[i - 1])) fail(ErrorKind::InvalidArgument, "dynamics", "breaks must be strictly increasing");
    }

    [[nodiscard]] bool empty() const noexcept { return values_.empty(); }
    [[nodiscard]] const std::vector<double>& breaks() const noexcept { return breaks_; }
    [[nodiscard]] const std::vector<T>& values() const noexcept { return values_; }

    [[nodiscard]] const T& at(double t) const {
        const auto k = static_cast<std::size_t>(std::lower_bound(breaks_.begin(), breaks_.end(), t) - breaks_.begin());
        return values_[k];
    }

private:
    std::vector<double> breaks_;
    std::vector<T> values_;
};

using PiecewiseMatrix = Piecewise<Mat>;
using PiecewiseVector = Piecewise<Vec>;
using PiecewiseScalar = Piecewise<double>;

[[nodiscard]] inline double max_operator_norm(const PiecewiseMatrix& b) {
    double r = 0.0;
    for (const auto& m : b.values()) {
        if (m.size() == 0) continue;
        Eigen::JacobiSVD<Mat> svd(m);
        r = std::max(r, svd.singularValues()(0));
    }
    return r;
}

// ---------------------------------------------------------------------------
// System description

enum class SystemKind { Generic, Quenching, Blowup };

using FieldFn = std::function<Vec(double, const Vec&, const Vec&)>;
using MatFn = std::function<Mat(double, const Vec&, const Vec&)>;

struct AffineStructure {
    std::function<Vec(double, const Vec&)> drift;
    std::function<Mat(double)> input_matrix;
};

/// Alternative coordinates x = phi(y) in which the dynamics stay regular near
/// the singular target. The integrator switches into a chart when the system
/// offers one and leaves it once `stay` turns false.
struct Chart {
    std::function<Vec(const Vec&)> to_chart;
    std::function<Vec(const Vec&)> from_chart;
    FieldFn field;
    /// Chart state to the coordinates the target set is expressed in.
    std::function<Vec(const Vec&)> target_point;
    std::function<bool(const Vec&)> stay;
};

/// Example 1 data: f = (y2/(1-y1), y1+y2) + B(t)u + g(t) + (h(t), 0), with an
/// optional penalty (|u - ubar(t)|^2, 0) subtracted.
struct QuenchModel {
    PiecewiseMatrix B;
    double rho0 = 1.0;
    PiecewiseVector g;   // empty means zero
    PiecewiseScalar h;   // empty means zero
    std::function<Vec(double)> ubar;  // set iff penalized
    std::vector<double> extra_breaks;
};

/// Example 2 data: f = |y|^{p-1} y + B(t)u + g(t) - c(t,u) y with
/// c = h(t) + |u - ubar(t)|^2 / (4 rho0^2) (the penalty term only when ubar is set).
struct BlowupModel {
    int n = 1;
    double p = 2.0;
    double gamma = 0.0;  // 0 selects the default gamma = p
    PiecewiseMatrix B;
    double rho0 = 1.0;
    PiecewiseVector g;
    PiecewiseScalar h;
    std::function<Vec(double)> ubar;
    double r1 = 0.0;  // chart radius; 0 selects 10 max(r0, |y0|)
    std::vector<double> extra_breaks;

    [[nodiscard]] double effective_gamma() const { return gamma > 0.0 ? gamma : p; }
    /// M = sup |B(t)u| over time and the ball of radius rho0.
    [[nodiscard]] double drift_bound() const { return rho0 * max_operator_norm(B); }
    [[nodiscard]] double r0() const { return (p + drift_bound()) / (p - 1.0); }
    [[nodiscard]] double chart_radius(const Vec& y0) const { return r1 > 0.0 ? r1 : 10.0 * std::max(r0(), y0.norm()); }
};

using SystemModel = std::variant<std::monostate, QuenchModel, BlowupModel>;

struct ControlSystem {
    std::string name;
    SystemKind kind = SystemKind::Generic;
    int n = 0;
    int m = 0;
    FieldFn field;
    MatFn jacobian;        // paper convention, see file header
    MatFn input_jacobian;  // ordinary orientation
    ControlSet control_set = ControlSet::ball(1, 1.0);
    std::string singular_description;
    /// Signed margin to the singular set (kInf when there is none at finite y).
    std::function<double(const Vec&)> singular_margin;
    std::optional<AffineStructure> affine;
    /// Chart offered at y for a run started at y0 (empty optional if none).
    std::function<std::optional<Chart>(const Vec& y, const Vec& y0)> chart_at;
    /// Coordinates in which the target set is stated; identity when empty.
    std::function<Vec(const Vec&)> target_map;
    /// Paper-convention Jacobian of target_map; identity when empty.
    std::function<Mat(const Vec&)> target_jacobian;
    std::vector<double> breakpoints;
    SystemModel model;

    [[nodiscard]] Vec to_target(const Vec& y) const { return target_map ? target_map(y) : y; }
    [[nodiscard]] Mat target_jacobian_at(const Vec& y) const {
        return target_jacobian ? target_jacobian(y) : Mat(Mat::Identity(n, n));
    }
};

inline constexpr double kSingularGuard = 1e-12;

inline void check_state(const ControlSystem& sys, const Vec& y) {
    if (y.size() != sys.n) fail(ErrorKind::InvalidArgument, "dynamics", "state dimension mismatch");
    if (!y.allFinite()) fail(ErrorKind::SingularState, "dynamics", "state is not finite");
    if (sys.singular_margin && std::abs(sys.singular_margin(y)) < kSingularGuard)
        fail(ErrorKind::SingularState, "dynamics", "state lies on the singular set");
}

[[nodiscard]] inline Vec eval_field(const ControlSystem& sys, double t, const Vec& y, const Vec& u) {
    check_state(sys, y);
    if (u.size() != sys.m) fail(ErrorKind::InvalidArgument, "dynamics", "control dimension mismatch");
    Vec f = sys.field(t, y, u);
    if (!f.allFinite()) fail(ErrorKind::SingularState, "dynamics", "field is not finite");
    return f;
}

[[nodiscard]] inline Mat eval_jacobian(const ControlSystem& sys, double t, const Vec& y, const Vec& u) {
    check_state(sys, y);
    if (u.size() != sys.m) fail(ErrorKind::InvalidArgument, "dynamics", "control dimension mismatch");
    Mat j = sys.jacobian(t, y, u);
    if (!j.allFinite()) fail(ErrorKind::SingularState, "dynamics", "Jacobian is not finite");
    return j;
}

[[nodiscard]] inline Mat eval_input_jacobian(const ControlSystem& sys, double t, const Vec& y, const Vec& u) {
    check_state(sys, y);
    Mat j = sys.input_jacobian(t, y, u);
    if (!j.allFinite()) fail(ErrorKind::SingularState, "dynamics", "input Jacobian is not finite");
    return j;
}

// ---------------------------------------------------------------------------
// State transforms

/// x = ((1 - y1)^2, y2).
[[nodiscard]] inline Vec transform_quenching(const Vec& y) {
    if (y.size() != 2) fail(ErrorKind::InvalidArgument, "dynamics", "quenching transform needs n = 2");
    Vec x(2);
    x << (1.0 - y[0]) * (1.0 - y[0]), y[1];
    return x;
}

/// Inverse on the branch sign(1 - y1) = branch (+1 below the target).
[[nodiscard]] inline Vec inverse_transform_quenching(const Vec& x, int branch = 1) {
    if (x.size() != 2) fail(ErrorKind::InvalidArgument, "dynamics", "quenching transform needs n = 2");
    if (x[0] < 0.0) fail(ErrorKind::NegativeTransformCoordinate, "dynamics", "first transformed coordinate is negative");
    Vec y(2);
    y << 1.0 - (branch >= 0 ? 1.0 : -1.0) * std::sqrt(x[0]), x[1];
    return y;
}

/// z = |y|^{-gamma-1} y on the outer region |y| >= r1.
[[nodiscard]] inline Vec transform_blowup(const Vec& y, double gamma, double r1 = 0.0) {
    if (!(gamma > 0.0)) fail(ErrorKind::InvalidArgument, "dynamics", "gamma must be positive");
    const double ny = y.norm();
    if (ny < r1 || !(ny > 0.0)) fail(ErrorKind::InnerRegion, "dynamics", "state lies inside the chart radius");
    return y * std::pow(ny, -gamma - 1.0);
}

/// y = |z|^{-(gamma+1)/gamma} z; the result must lie in |y| >= r1.
[[nodiscard]] inline Vec inverse_transform_blowup(const Vec& z, double gamma, double r1 = 0.0) {
    if (!(gamma > 0.0)) fail(ErrorKind::InvalidArgument, "dynamics", "gamma must be positive");
    const double nz = z.norm();
    if (!(nz > 0.0)) fail(ErrorKind::InvalidArgument, "dynamics", "z = 0 is the point at infinity");
    Vec y = z * std::pow(nz, -(gamma + 1.0) / gamma);
    if (y.norm() < r1) fail(ErrorKind::InnerRegion, "dynamics", "preimage lies inside the chart radius");
    return y;
}

/// Paper-convention Jacobian of G(y) = |y|^{-gamma-1} y (symmetric).
[[nodiscard]] inline Mat blowup_map_jacobian(const Vec& y, double gamma) {
    const auto n = y.size();
    const double ny = y.norm();
    if (!(ny > 0.0)) return Mat::Constant(n, n, kInf);
    const Vec yh = y / ny;
    return std::pow(ny, -gamma - 1.0) * (Mat::Identity(n, n) - (gamma + 1.0) * yh * yh.transpose());
}

// ---------------------------------------------------------------------------
// Builders

namespace detail {

inline std::vector<double> merged_breaks(std::initializer_list<const std::vector<double>*> lists) {
    std::vector<double> out;
    for (const auto* l : lists) out.insert(out.end(), l->begin(), l->end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline void check_matrix_data(const PiecewiseMatrix& b, int rows, const char* what) {
    if (b.empty()) fail(ErrorKind::InvalidArgument, "dynamics", std::string(what) + ": input matrix is required");
    const auto cols = b.values().front().cols();
    for (const auto& m : b.values())
        if (m.rows() != rows || m.cols() != cols || !m.allFinite())
            fail(ErrorKind::InvalidArgument, "dynamics", std::string(what) + ": input matrix samples must be finite and of equal shape");
}

}  // namespace detail

[[nodiscard]] inline ControlSystem build_quench_system(QuenchModel model) {
    detail::check_matrix_data(model.B, 2, "quenching system");
    if (!(model.rho0 > 0.0)) fail(ErrorKind::InvalidArgument, "dynamics", "rho0 must be positive");
    auto md = std::make_shared<const QuenchModel>(model);
    const int m = static_cast<int>(md->B.values().front().cols());
    const bool penalized = static_cast<bool>(md->ubar);

    // Non-singular remainder r(t, u) = B u + g + h e1 - penalty e1.
    auto remainder = [md, penalized](double t, const Vec& u) {
        Vec r = md->B.at(t) * u;
        if (!md->g.empty()) r += md->g.at(t);
        if (!md->h.empty()) r[0] += md->h.at(t);
        if (penalized) r[0] -= (u - md->ubar(t)).squaredNorm();
        return r;
    };

    ControlSystem s;
    s.name = penalized ? "quenching-ex1-penalized" : "quenching-ex1";
    s.kind = SystemKind::Quenching;
    s.n = 2;
    s.m = m;
    s.field = [remainder](double t, const Vec& y, const Vec& u) {
        Vec f(2);
        f << y[1] / (1.0 - y[0]), y[0] + y[1];
        return Vec(f + remainder(t, u));
    };
    s.jacobian = [](double, const Vec& y, const Vec&) {
        const double d = 1.0 - y[0];
        Mat j(2, 2);
        j << y[1] / (d * d), 1.0, 1.0 / d, 1.0;
        return j;
    };
    s.input_jacobian = [md, penalized](double t, const Vec&, const Vec& u) {
        Mat d = md->B.at(t);
        if (penalized) d.row(0) -= 2.0 * (u - md->ubar(t)).transpose();
        return d;
    };
    s.control_set = ControlSet::ball(m, md->rho0);
    s.singular_description = "hyperplane y1 = 1";
    s.singular_margin = [](const Vec& y) { return 1.0 - y[0]; };
    if (!penalized) {
        s.affine = AffineStructure{
            [md](double t, const Vec& y) {
                Vec g(2);
                g << y[1] / (1.0 - y[0]), y[0] + y[1];
                if (!md->g.empty()) g += md->g.at(t);
                if (!md->h.empty()) g[0] += md->h.at(t);
                return g;
            },
            [md](double t) { return md->B.at(t); }};
    }
    // Chart x = ((1 - y1)^2, y2), entered within 0.1 of the target and kept
    // while within 0.2; branch = sign(1 - y1) at entry.
    s.chart_at = [remainder](const Vec& y, const Vec&) -> std::optional<Chart> {
        const double d = 1.0 - y[0];
        if (std::abs(d) > 0.1) return std::nullopt;
        const double sg = d >= 0.0 ? 1.0 : -1.0;
        Chart c;
        c.to_chart = [](const Vec& yy) { return transform_quenching(yy); };
        c.from_chart = [sg](const Vec& x) {
            Vec yy(2);
            yy << 1.0 - sg * std::sqrt(std::max(x[0], 0.0)), x[1];
            return yy;
        };
        c.field = [remainder, sg](double t, const Vec& x, const Vec& u) {
            const double sq = std::sqrt(std::max(x[0], 0.0));
            const Vec r = remainder(t, u);
            Vec dx(2);
            dx << -2.0 * x[1] - 2.0 * sg * sq * r[0], 1.0 - sg * sq + x[1] + r[1];
            return dx;
        };
        c.target_point = c.from_chart;
        c.stay = [](const Vec& x) { return x[0] < 0.04; };
        return c;
    };
    s.breakpoints = detail::merged_breaks({&md->B.breaks(), &md->g.breaks(), &md->h.breaks(), &md->extra_breaks});
    s.model = model;
    return s;
}

[[nodiscard]] inline ControlSystem build_blowup_system(BlowupModel model) {
    if (model.n < 1) fail(ErrorKind::InvalidArgument, "dynamics", "blowup system needs n >= 1");
    if (!(model.p > 1.0)) fail(ErrorKind::InvalidArgument, "dynamics", "blowup system needs p > 1");
    if (!(model.rho0 > 0.0)) fail(ErrorKind::InvalidArgument, "dynamics", "rho0 must be positive");
    detail::check_matrix_data(model.B, model.n, "blowup system");
    const double gamma = model.effective_gamma();
    if (!(gamma >= model.p - 1.0) || !(gamma > 0.0))
        fail(ErrorKind::InvalidArgument, "dynamics", "gamma must satisfy gamma >= p - 1 and gamma > 0");
    auto md = std::make_shared<const BlowupModel>(model);
    const int n = md->n;
    const int m = static_cast<int>(md->B.values().front().cols());
    const double p = md->p;
    const bool penalized = static_cast<bool>(md->ubar);

    // Linear damping coefficient c(t, u) in f = |y|^{p-1} y + B u + g - c y.
    auto damping = [md, penalized](double t, const Vec& u) {
        double c = md->h.empty() ? 0.0 : md->h.at(t);
        if (penalized) c += (u - md->ubar(t)).squaredNorm() / (4.0 * md->rho0 * md->rho0);
        return c;
    };
    auto forcing = [md](double t, const Vec& u) {
        Vec r = md->B.at(t) * u;
        if (!md->g.empty()) r += md->g.at(t);
        return r;
    };

    ControlSystem s;
    s.name = penalized ? "blowup-ex2-penalized" : "blowup-ex2";
    s.kind = SystemKind::Blowup;
    s.n = n;
    s.m = m;
    s.field = [p, damping, forcing](double t, const Vec& y, const Vec& u) {
        const double ny = y.norm();
        return Vec(std::pow(ny, p - 1.0) * y + forcing(t, u) - damping(t, u) * y);
    };
    s.jacobian = [p, n, damping](double t, const Vec& y, const Vec& u) {
        const double ny = y.norm();
        Mat j = -damping(t, u) * Mat::Identity(n, n);
        if (ny > 0.0) {
            const Vec yh = y / ny;
            j += std::pow(ny, p - 1.0) * (Mat::Identity(n, n) + (p - 1.0) * yh * yh.transpose());
        }
        return j;
    };
    s.input_jacobian = [md, penalized](double t, const Vec& y, const Vec& u) {
        Mat d = md->B.at(t);
        if (penalized) d -= y * (u - md->ubar(t)).transpose() / (2.0 * md->rho0 * md->rho0);
        return d;
    };
    s.control_set = ControlSet::ball(m, md->rho0);
    s.singular_description = "point at infinity";
    if (!penalized) {
        s.affine = AffineStructure{
            [md, p](double t, const Vec& y) {
                Vec g = std::pow(y.norm(), p - 1.0) * y;
                if (!md->g.empty()) g += md->g.at(t);
                if (!md->h.empty()) g -= md->h.at(t) * y;
                return g;
            },
            [md](double t) { return md->B.at(t); }};
    }
    s.chart_at = [md, gamma, p, damping, forcing](const Vec& y, const Vec& y0) -> std::optional<Chart> {
        const double r1 = md->chart_radius(y0);
        if (y.norm() < 2.0 * r1) return std::nullopt;
        const double zmax = std::pow(r1, -gamma);
        Chart c;
        c.to_chart = [gamma](const Vec& yy) { return transform_blowup(yy, gamma); };
        c.from_chart = [gamma](const Vec& z) { return inverse_transform_blowup(z, gamma); };
        c.field = [gamma, p, damping, forcing](double t, const Vec& z, const Vec& u) {
            const double nz = z.norm();
            const auto nn = z.size();
            if (!(nz > 0.0)) return Vec(Vec::Zero(nn));
            const Vec zh = z / nz;
            const Vec b = forcing(t, u);
            Vec dz = -gamma * std::pow(nz, (1.0 - p) / gamma) * z;
            dz += std::pow(nz, (gamma + 1.0) / gamma) * (b - (gamma + 1.0) * zh * zh.dot(b));
            dz += gamma * damping(t, u) * z;
            return dz;
        };
        c.target_point = [](const Vec& z) { return z; };
        c.stay = [zmax](const Vec& z) { return z.norm() <= zmax; };
        return c;
    };
    s.target_map = [gamma, n](const Vec& y) {
        const double ny = y.norm();
        if (!(ny > 0.0)) return Vec(Vec::Constant(n, kInf));
        return Vec(y * std::pow(ny, -gamma - 1.0));
    };
    s.target_jacobian = [gamma](const Vec& y) { return blowup_map_jacobian(y, gamma); };
    s.breakpoints = detail::merged_breaks({&md->B.breaks(), &md->g.breaks(), &md->h.breaks(), &md->extra_breaks});
    s.model = model;
    return s;
}

[[nodiscard]] inline ControlSystem make_quenching_system(PiecewiseMatrix B, double rho0) {
    QuenchModel md;
    md.B = std::move(B);
    md.rho0 = rho0;
    return build_quench_system(std::move(md));
}

[[nodiscard]] inline ControlSystem make_blowup_system(int n, double p, PiecewiseMatrix B, double rho0, double gamma = 0.0,
                                                      double r1 = 0.0) {
    BlowupModel md;
    md.n = n;
    md.p = p;
    md.B = std::move(B);
    md.rho0 = rho0;
    md.gamma = gamma;
    md.r1 = r1;
    return build_blowup_system(std::move(md));
}

/// y' = u on R^n with the given control set (dimension n).
[[nodiscard]] inline ControlSystem make_toy_system(ControlSet U) {
    const int n = U.dim();
    ControlSystem s;
    s.name = "toy-integrator";
    s.kind = SystemKind::Generic;
    s.n = n;
    s.m = n;
    s.field = [](double, const Vec&, const Vec& u) { return u; };
    s.jacobian = [n](double, const Vec&, const Vec&) { return Mat(Mat::Zero(n, n)); };
    s.input_jacobian = [n](double, const Vec&, const Vec&) { return Mat(Mat::Identity(n, n)); };
    s.control_set = std::move(U);
    s.singular_description = "none";
    s.affine = AffineStructure{[n](double, const Vec&) { return Vec(Vec::Zero(n)); },
                               [n](double) { return Mat(Mat::Identity(n, n)); }};
    return s;
}

enum class PenaltyVariant { Quench, Blowup };

/// Auxiliary system whose field agrees with the original one along u = ubar(t)
/// and is penalized away from it.
[[nodiscard]] inline ControlSystem make_penalized_system(const ControlSystem& sys, std::function<Vec(double)> ubar,
                                                         PenaltyVariant variant, std::vector<double> candidate_breaks = {}) {
    if (!ubar) fail(ErrorKind::InvalidArgument, "dynamics", "penalized system needs a candidate control");
    if (variant == PenaltyVariant::Quench) {
        const auto* md = std::get_if<QuenchModel>(&sys.model);
        if (md == nullptr) fail(ErrorKind::InvalidArgument, "dynamics", "quench penalty needs a quenching system");
        QuenchModel copy = *md;
        copy.ubar = std::move(ubar);
        copy.extra_breaks.insert(copy.extra_breaks.end(), candidate_breaks.begin(), candidate_breaks.end());
        return build_quench_system(std::move(copy));
    }
    const auto* md = std::get_if<BlowupModel>(&sys.model);
    if (md == nullptr) fail(ErrorKind::InvalidArgument, "dynamics", "blowup penalty needs a blowup system");
    BlowupModel copy = *md;
    copy.ubar = std::move(ubar);
    copy.extra_breaks.insert(copy.extra_breaks.end(), candidate_breaks.begin(), candidate_breaks.end());
    return build_blowup_system(std::move(copy));
}

}  // namespace tosc
