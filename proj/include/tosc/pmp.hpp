#pragma once

// Maximum-principle checks for a computed time-optimal candidate: pointwise
// Hamiltonian maximization, the support condition on relaxed atoms,
// transversality and nontriviality of the adjoint.

#include "tosc/integrate.hpp"
#include "tosc/solve.hpp"

namespace tosc {

/// H(t, y, psi, u) = <psi, f(t, y, u)>.
[[nodiscard]] inline double hamiltonian(const ControlSystem& sys, double t, const Vec& y, const Vec& psi, const Vec& u) {
    if (psi.size() != sys.n) fail(ErrorKind::InvalidArgument, "pmp", "covector dimension mismatch");
    return psi.dot(eval_field(sys, t, y, u));
}

struct HamiltonianMax {
    double value = 0.0;
    Vec argmax;
    /// True when the maximizer is not unique (B^T psi vanishes on a ball, a
    /// zero switching component on a box, tied atoms).
    bool degenerate = false;
};

/// sup over the control set of H, in closed form for affine systems on balls
/// and boxes and by enumeration on finite atom sets.
[[nodiscard]] inline HamiltonianMax max_hamiltonian(const ControlSystem& sys, double t, const Vec& y, const Vec& psi) {
    if (psi.size() != sys.n) fail(ErrorKind::InvalidArgument, "pmp", "covector dimension mismatch");
    const auto& U = sys.control_set;
    HamiltonianMax out;
    if (auto* f = std::get_if<FiniteAtomsSet>(&U.variant())) {
        out.value = -kInf;
        std::vector<double> h;
        for (const auto& u : f->points) h.push_back(hamiltonian(sys, t, y, psi, u));
        for (std::size_t i = 0; i < h.size(); ++i)
            if (h[i] > out.value) {
                out.value = h[i];
                out.argmax = f->points[i];
            }
        const double tie = 1e-14 * (1.0 + std::abs(out.value));
        out.degenerate = std::count_if(h.begin(), h.end(), [&](double v) { return v >= out.value - tie; }) > 1;
        return out;
    }
    if (!sys.affine) fail(ErrorKind::UnsupportedControlSet, "pmp", "closed-form maximization needs a control-affine system");
    check_state(sys, y);
    const Vec g = sys.affine->drift(t, y);
    const Mat B = sys.affine->input_matrix(t);
    const Vec c = B.transpose() * psi;
    const double floor = 1e-14 * (1.0 + psi.norm() * (B.size() ? B.cwiseAbs().maxCoeff() : 0.0));
    if (auto* b = std::get_if<BallSet>(&U.variant())) {
        const double nc = c.norm();
        if (nc <= floor) {
            out.degenerate = true;
            out.argmax = Vec::Zero(b->m);
        } else {
            out.argmax = c * (b->radius / nc);
        }
        out.value = psi.dot(g) + b->radius * nc;
        return out;
    }
    const auto& box = std::get<BoxSet>(U.variant());
    out.argmax.resize(c.size());
    for (int i = 0; i < c.size(); ++i) {
        if (c[i] > floor) {
            out.argmax[i] = box.upper[i];
        } else if (c[i] < -floor) {
            out.argmax[i] = box.lower[i];
        } else {
            out.argmax[i] = 0.5 * (box.lower[i] + box.upper[i]);
            if (box.upper[i] > box.lower[i]) out.degenerate = true;
        }
    }
    out.value = psi.dot(g) + c.dot(out.argmax);
    return out;
}

/// A candidate (w, y, u): the optimal time, the trajectory that hits at w
/// and the relaxed schedule on [0, w].
struct Candidate {
    double w = 0.0;
    Trajectory trajectory;
    RelaxedSchedule schedule;
};

[[nodiscard]] inline Candidate candidate_of(const SolveResult& r) { return Candidate{r.w, r.trajectory, r.schedule}; }

struct VerifyOptions {
    /// Terminal covector (in y coordinates) overriding the automatic seed.
    std::optional<Vec> seed;
    /// Relative offsets t_delta = w (1 - delta) used when the target is singular.
    std::vector<double> deltas{1e-2, 1e-3, 1e-4};
    int samples_per_cell = 8;
    double adjoint_rtol = 1e-10;
    /// Hamiltonian gap tolerance relative to 1 + sup |H|.
    double h_rel_tol = 1e-6;
    /// Agreement tolerance for atoms, relative to the control-set radius.
    double bang_tol = 1e-3;
};

struct PmpReport {
    double hamiltonian_residual = 0.0;
    double hamiltonian_scale = 1.0;  // 1 + sup |H| over the samples
    double support_violation_mass = 0.0;
    double transversality_residual = 0.0;
    double terminal_adjoint_norm = 0.0;
    double nontriviality = 0.0;
    double bang_bang_agreement = 0.0;
    double degenerate_fraction = 0.0;
    bool singular_target = false;
    double terminal_time = 0.0;  // where the adjoint was seeded
    std::vector<double> seed_times;
    std::vector<double> terminal_norms;  // |psi| at each seed time, |psi(0)| = 1
    std::size_t samples = 0;
    AdjointTrajectory adjoint;
};

namespace detail {

[[nodiscard]] inline double control_radius(const ControlSet& U) {
    if (auto* b = std::get_if<BallSet>(&U.variant())) return b->radius;
    if (auto* b = std::get_if<BoxSet>(&U.variant())) return std::max(1e-300, (b->upper - b->lower).cwiseAbs().maxCoeff());
    double r = 0.0;
    for (const auto& p : std::get<FiniteAtomsSet>(U.variant()).points) r = std::max(r, p.norm());
    return std::max(r, 1e-300);
}

/// Target singular for the dynamics: the uninflated target of the
/// quenching and blowup examples.
[[nodiscard]] inline bool singular_target(const ControlSystem& sys, const TargetSet& tgt) {
    return tgt.alpha() == 0.0 && sys.kind != SystemKind::Generic;
}

/// Terminal covector in y coordinates at time t: the inner normal of the
/// base target seen from the state, pulled through the target map.
[[nodiscard]] inline Vec normal_seed(const ControlSystem& sys, const TargetSet& tgt, const Vec& y) {
    const Vec Y = sys.to_target(y);
    Vec nrm = tgt.inner_normal(Y);
    if (nrm.size() == 0) fail(ErrorKind::ZeroTerminalCovector, "pmp", "state lies in the base target; no normal direction");
    return sys.target_jacobian_at(y) * nrm;
}

struct Sample {
    double t = 0.0;
    double dt = 0.0;
    std::size_t cell = 0;
};

[[nodiscard]] inline std::vector<Sample> samples(const RelaxedSchedule& s, double t_end, int per_cell) {
    std::vector<Sample> out;
    const auto& g = s.grid();
    for (std::size_t k = 0; k < s.num_cells(); ++k) {
        const double a = g[k];
        const double b = std::min(g[k + 1], t_end);
        if (!(b > a)) continue;
        const double h = (b - a) / per_cell;
        for (int j = 0; j < per_cell; ++j) out.push_back({a + (j + 0.5) * h, h, k});
    }
    return out;
}

}  // namespace detail

/// Time-weighted mass the relaxed control puts on atoms whose Hamiltonian
/// falls short of the maximum by more than tol_h, divided by the sampled time.
[[nodiscard]] inline double support_condition_mass(const ControlSystem& sys, const RelaxedSchedule& s, const Trajectory& traj,
                                                   const AdjointTrajectory& adj, double tol_h, int per_cell = 8) {
    const auto pts = detail::samples(s, std::min(traj.end_time(), adj.terminal_time), per_cell);
    double mass = 0.0, total = 0.0;
    for (const auto& p : pts) {
        const Vec y = traj.state_at(p.t);
        const Vec psi = adj.covector_at(p.t);
        const double hmax = max_hamiltonian(sys, p.t, y, psi).value;
        const auto& c = s.cells()[p.cell];
        const double wsum = std::accumulate(c.weights.begin(), c.weights.end(), 0.0);
        for (std::size_t i = 0; i < c.size(); ++i)
            if (hamiltonian(sys, p.t, y, psi, c.atoms[i]) < hmax - tol_h) mass += p.dt * c.weights[i] / wsum;
        total += p.dt;
    }
    return total > 0.0 ? mass / total : 0.0;
}

/// Integrate the adjoint backward from the terminal condition and evaluate
/// the maximum-principle conditions along the candidate. For targets that
/// are singular for the dynamics the adjoint is seeded at w (1 - delta) for
/// each delta and the smallest delta defines the reported fields; the
/// transversality residual is then |psi| at that time (the limit condition
/// is psi -> 0).
[[nodiscard]] inline PmpReport verify(const ControlSystem& sys, const TargetSet& tgt, const Candidate& cand,
                                      const VerifyOptions& opt = {}) {
    if (cand.trajectory.hit.status != HitStatus::HitTarget)
        fail(ErrorKind::NotHit, "pmp", "candidate trajectory does not reach the target");
    if (!(cand.w > 0.0)) fail(ErrorKind::InvalidArgument, "pmp", "candidate time must be positive");
    if (opt.samples_per_cell < 1) fail(ErrorKind::InvalidArgument, "pmp", "samples_per_cell must be >= 1");
    const double w = cand.w;
    PmpReport rep;
    rep.singular_target = !opt.seed && detail::singular_target(sys, tgt);

    AdjointOptions ao;
    ao.rtol = opt.adjoint_rtol;
    if (rep.singular_target) {
        if (opt.deltas.empty()) fail(ErrorKind::InvalidArgument, "pmp", "deltas must be nonempty");
        for (double d : opt.deltas) {
            if (!(d > 0.0 && d < 1.0)) fail(ErrorKind::InvalidArgument, "pmp", "deltas must lie in (0, 1)");
            const double ts = w * (1.0 - d);
            ao.terminal_time = ts;
            auto adj = integrate_adjoint(sys, cand.trajectory, cand.schedule,
                                         detail::normal_seed(sys, tgt, cand.trajectory.state_at(ts)), true, ao);
            rep.seed_times.push_back(ts);
            rep.terminal_norms.push_back(adj.covector_at(ts).norm());
            rep.adjoint = std::move(adj);
        }
        rep.terminal_time = rep.seed_times.back();
        rep.terminal_adjoint_norm = rep.terminal_norms.back();
        rep.transversality_residual = rep.terminal_adjoint_norm;
    } else {
        Vec seed;
        if (opt.seed) {
            seed = *opt.seed;
        } else if (tgt.alpha() > 0.0) {
            seed = detail::normal_seed(sys, tgt, cand.trajectory.final_state());
        } else {
            // The normal cone at a boundary point of the base target is
            // taken along the direction of approach.
            seed = detail::normal_seed(sys, tgt, cand.trajectory.state_at(w * (1.0 - 1e-3)));
        }
        ao.terminal_time = w;
        rep.adjoint = integrate_adjoint(sys, cand.trajectory, cand.schedule, seed, true, ao);
        rep.terminal_time = w;
        rep.seed_times = {w};
        const Vec psi_w = rep.adjoint.covector_at(w);
        rep.terminal_norms = {psi_w.norm()};
        rep.terminal_adjoint_norm = psi_w.norm();
        const Vec& yw = cand.trajectory.final_state();
        rep.transversality_residual = tgt.transformed_transversality_residual(
            sys.target_jacobian_at(yw), sys.to_target(yw), psi_w, 10.0 * std::max(cand.trajectory.hit.terminal_distance, 1e-8));
    }
    rep.nontriviality = rep.adjoint.covector_at(0.0).norm();

    const auto pts = detail::samples(cand.schedule, rep.terminal_time, opt.samples_per_cell);
    rep.samples = pts.size();
    struct Eval {
        double hmax, hcand;
        bool degenerate, agree;
        std::vector<double> atom_h;
    };
    std::vector<Eval> ev;
    ev.reserve(pts.size());
    const double utol = opt.bang_tol * detail::control_radius(sys.control_set);
    double hsup = 0.0;
    for (const auto& p : pts) {
        const Vec y = cand.trajectory.state_at(p.t);
        const Vec psi = rep.adjoint.covector_at(p.t);
        const auto mx = max_hamiltonian(sys, p.t, y, psi);
        const auto& c = cand.schedule.cells()[p.cell];
        const double wsum = std::accumulate(c.weights.begin(), c.weights.end(), 0.0);
        Eval e{mx.value, 0.0, mx.degenerate, true, {}};
        for (std::size_t i = 0; i < c.size(); ++i) {
            const double hi = hamiltonian(sys, p.t, y, psi, c.atoms[i]);
            e.atom_h.push_back(hi);
            e.hcand += hi * c.weights[i] / wsum;
            if (c.weights[i] > 1e-12 * wsum && (c.atoms[i] - mx.argmax).norm() > utol) e.agree = false;
        }
        hsup = std::max({hsup, std::abs(mx.value), std::abs(e.hcand)});
        ev.push_back(std::move(e));
    }
    rep.hamiltonian_scale = 1.0 + hsup;
    const double tol_h = opt.h_rel_tol * rep.hamiltonian_scale;
    double mass = 0.0, total = 0.0, agree = 0.0, nondeg = 0.0, deg = 0.0;
    for (std::size_t k = 0; k < pts.size(); ++k) {
        const auto& e = ev[k];
        const auto& c = cand.schedule.cells()[pts[k].cell];
        const double wsum = std::accumulate(c.weights.begin(), c.weights.end(), 0.0);
        const double dt = pts[k].dt;
        rep.hamiltonian_residual = std::max(rep.hamiltonian_residual, e.hmax - e.hcand);
        for (std::size_t i = 0; i < c.size(); ++i)
            if (e.atom_h[i] < e.hmax - tol_h) mass += dt * c.weights[i] / wsum;
        total += dt;
        if (e.degenerate) {
            deg += dt;
        } else {
            nondeg += dt;
            if (e.agree) agree += dt;
        }
    }
    rep.support_violation_mass = total > 0.0 ? mass / total : 0.0;
    rep.bang_bang_agreement = nondeg > 0.0 ? agree / nondeg : 1.0;
    rep.degenerate_fraction = total > 0.0 ? deg / total : 0.0;
    return rep;
}

struct QuenchingConclusions {
    double y2_terminal = 0.0;
    bool sign_ok = false;
    bool decay_checked = false;
    double decay_ratio = 0.0;  // largest ratio of consecutive terminal norms
    bool decay_ok = true;
    bool pass = false;
};

/// Quenching-specific conclusions: y2 at the optimal time is nonnegative, and
/// when it is positive the adjoint norm at the last resolvable time shrinks
/// under refinement (each consecutive ratio below 0.7).
[[nodiscard]] inline QuenchingConclusions quenching_conclusions(const ControlSystem& sys, const Trajectory& traj,
                                                                const std::vector<double>& terminal_norms, double tol = 1e-6) {
    if (sys.kind != SystemKind::Quenching) fail(ErrorKind::NotQuenchingSystem, "pmp", "system is not a quenching system");
    if (sys.n < 2) fail(ErrorKind::InvalidArgument, "pmp", "quenching state must have two components");
    QuenchingConclusions q;
    q.y2_terminal = traj.final_state()[1];
    q.sign_ok = q.y2_terminal >= -tol;
    if (q.y2_terminal > tol) {
        if (terminal_norms.size() < 2) fail(ErrorKind::InvalidArgument, "pmp", "decay check needs two refinement levels");
        q.decay_checked = true;
        for (std::size_t k = 1; k < terminal_norms.size(); ++k)
            q.decay_ratio = std::max(q.decay_ratio, terminal_norms[k] / terminal_norms[k - 1]);
        q.decay_ok = q.decay_ratio < 0.7;
    }
    q.pass = q.sign_ok && q.decay_ok;
    return q;
}

/// Same, reading |psi| from an adjoint at the given refinement times.
[[nodiscard]] inline QuenchingConclusions quenching_conclusions(const ControlSystem& sys, const Trajectory& traj,
                                                                const AdjointTrajectory& adj, const std::vector<double>& times,
                                                                double tol = 1e-6) {
    std::vector<double> norms;
    for (double t : times) norms.push_back(adj.covector_at(t).norm());
    return quenching_conclusions(sys, traj, norms, tol);
}

}  // namespace tosc
