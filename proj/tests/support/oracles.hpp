#pragma once

// Test-side oracles shared by the unit tests and the acceptance binary.

#include "tosc/solve.hpp"

#include <cmath>

namespace testing_support {

using namespace tosc;

inline Vec vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

// Flat (w, atoms, weights) in design order, and the matching adjoint gradient.
inline std::vector<double*> entries(Design& d) {
    std::vector<double*> e{&d.w};
    for (auto& c : d.cells) {
        for (auto& a : c.atoms)
            for (Eigen::Index j = 0; j < a.size(); ++j) e.push_back(&a[j]);
        for (double& v : c.weights) e.push_back(&v);
    }
    return e;
}

inline std::vector<double> flat_gradient(const ObjectiveGradient& g) {
    std::vector<double> out{g.dw};
    for (std::size_t c = 0; c < g.datoms.size(); ++c) {
        for (const auto& a : g.datoms[c])
            for (Eigen::Index j = 0; j < a.size(); ++j) out.push_back(a[j]);
        for (double v : g.dweights[c]) out.push_back(v);
    }
    return out;
}

// Random smooth instance: piecewise data with interior breaks, interior
// atoms, unnormalized weights, horizon short of the target.
struct Instance {
    ControlSystem sys;
    TargetSet tgt = TargetSet::point(Vec::Zero(1));
    Vec y0;
    Design d;
};

inline Instance random_instance(int k) {
    Rng rng(1000 + static_cast<std::uint64_t>(k));
    Instance in;
    Mat B1(2, 2), B2(2, 2);
    for (int i = 0; i < 4; ++i) {
        B1(i / 2, i % 2) = rng.uniform(-1.0, 1.0);
        B2(i / 2, i % 2) = rng.uniform(-1.0, 1.0);
    }
    const double brk = rng.uniform(0.05, 0.15);
    if (k % 2 == 0) {
        QuenchModel md;
        md.B = PiecewiseMatrix({brk}, {B1, B2});
        md.g = PiecewiseVector({0.5 * brk}, {vec2(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)), vec2(0.1, -0.2)});
        in.sys = build_quench_system(md);
        in.tgt = TargetSet::hyperplane(0, 1.0, 0.05);
        in.y0 = vec2(rng.uniform(-0.5, 0.3), rng.uniform(-0.5, 1.0));
    } else {
        BlowupModel md;
        md.n = 2;
        md.p = 2.0;
        md.B = PiecewiseMatrix({brk}, {B1, B2});
        md.h = PiecewiseScalar({0.7 * brk}, {rng.uniform(0.0, 1.0), rng.uniform(-0.5, 0.5)});
        in.sys = build_blowup_system(md);
        in.tgt = TargetSet::point(Vec::Zero(2), 0.01);
        in.y0 = rng.uniform(2.0, 4.0) * rng.unit_vector(2);
    }
    Design d;
    d.grid = unit_grid(6);
    for (int c = 0; c < 6; ++c) {
        Cell cell;
        for (int a = 0; a < 2; ++a) {
            cell.atoms.push_back(rng.unit_vector(2) * rng.uniform(0.2, 0.8));
            cell.weights.push_back(rng.uniform(0.2, 0.8));
        }
        d.cells.push_back(cell);
    }
    // shrink the horizon until the design stops short of the target
    ObjectiveOptions probe;
    probe.gradient = false;
    d.w = 1.0;
    while (objective_gradient(in.sys, in.tgt, d, in.y0, probe).status != HitStatus::MaxTimeReached) d.w *= 0.7;
    d.w *= 0.9;
    in.d = d;
    return in;
}

inline double oracle_one_switch(double y20) {
    // y' = F(y) + u on |u| <= 1, stop at y1 = 0.9; RK4 at h = 1e-3 with
    // linear interpolation of the crossing
    auto rhs = [](const Vec& y, const Vec& u) {
        Vec f(2);
        f << y[1] / (1.0 - y[0]) + u[0], y[0] + y[1] + u[1];
        return f;
    };
    auto hit = [&](double th1, double th2, double ts, double bound) {
        const Vec u1 = vec2(std::cos(th1), std::sin(th1)), u2 = vec2(std::cos(th2), std::sin(th2));
        Vec y = vec2(0.0, y20);
        const double h = 1e-3;
        double t = 0.0;
        while (t < bound) {
            const Vec& u = t < ts ? u1 : u2;
            const Vec k1 = rhs(y, u), k2 = rhs(y + 0.5 * h * k1, u), k3 = rhs(y + 0.5 * h * k2, u), k4 = rhs(y + h * k3, u);
            const Vec yn = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
            if (yn[0] >= 0.9) return t + h * (0.9 - y[0]) / (yn[0] - y[0]);
            if (yn[0] < -5.0) return kInf;
            y = yn;
            t += h;
        }
        return kInf;
    };
    double best = kInf;
    const int A = 24;
    for (int i = 0; i < A; ++i)
        for (int j = 0; j < A; ++j)
            for (int s = 0; s <= 8; ++s) {
                const double th1 = -M_PI / 2 + M_PI * i / (A - 1), th2 = -M_PI / 2 + M_PI * j / (A - 1);
                best = std::min(best, hit(th1, th2, 0.05 * s, std::min(best, 2.0)));
            }
    return best;
}

/// Relative 2-norm error of the adjoint gradient against central differences
/// with step 1e-5 max(1, |x|). The instance must stop short of the target.
inline double gradient_relative_error(const Instance& in, const ObjectiveOptions& oo) {
    const auto og = objective_gradient(in.sys, in.tgt, in.d, in.y0, oo);
    if (og.status != HitStatus::MaxTimeReached || !(og.distance > 0.0)) return kInf;
    const auto g = flat_gradient(og);
    Design d = in.d;
    auto e = entries(d);
    if (e.size() != g.size()) return kInf;
    ObjectiveOptions vo = oo;
    vo.gradient = false;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        const double x = *e[i];
        const double h = 1e-5 * std::max(1.0, std::abs(x));
        *e[i] = x + h;
        const double fp = objective_gradient(in.sys, in.tgt, d, in.y0, vo).value;
        *e[i] = x - h;
        const double fm = objective_gradient(in.sys, in.tgt, d, in.y0, vo).value;
        *e[i] = x;
        const double fd = (fp - fm) / (2.0 * h);
        num += (g[i] - fd) * (g[i] - fd);
        den += fd * fd;
    }
    return std::sqrt(num / den);
}

}  // namespace testing_support
