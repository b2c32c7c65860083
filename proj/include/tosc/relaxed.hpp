#pragma once

// Piecewise-constant finitely-atomic relaxed controls. On each grid cell the
// control is the probability measure sum_i lambda_i delta_{u_i}.

#include "tosc/dynamics.hpp"

#include <numeric>

namespace tosc {

struct Cell {
    std::vector<Vec> atoms;
    std::vector<double> weights;

    [[nodiscard]] std::size_t size() const noexcept { return atoms.size(); }
};

[[nodiscard]] inline Cell dirac_cell(Vec u) { return Cell{{std::move(u)}, {1.0}}; }

namespace detail {

inline void check_grid(const std::vector<double>& grid, std::size_t cells) {
    if (grid.size() < 2 || cells + 1 != grid.size())
        fail(ErrorKind::InvalidArgument, "relaxed", "grid must have one more point than there are cells");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1]) || !std::isfinite(grid[i]))
            fail(ErrorKind::InvalidArgument, "relaxed", "grid must be finite and strictly increasing");
}

inline std::size_t locate_cell(const std::vector<double>& grid, double t) {
    const auto n = grid.size() - 1;
    const auto it = std::upper_bound(grid.begin(), grid.end(), t);
    if (it == grid.begin()) return 0;
    return std::min<std::size_t>(static_cast<std::size_t>(it - grid.begin()) - 1, n - 1);
}

}  // namespace detail

class RelaxedSchedule {
public:
    RelaxedSchedule() = default;

    /// Validates shapes and renormalizes every cell onto the simplex.
    RelaxedSchedule(std::vector<double> grid, std::vector<Cell> cells) : grid_(std::move(grid)), cells_(std::move(cells)) {
        check_shapes();
        for (auto& c : cells_) normalize(c);
    }

    /// Keeps the weights as given (used for sensitivities with respect to
    /// unconstrained weights). Shapes are still validated.
    static RelaxedSchedule unnormalized(std::vector<double> grid, std::vector<Cell> cells) {
        RelaxedSchedule s;
        s.grid_ = std::move(grid);
        s.cells_ = std::move(cells);
        s.check_shapes();
        return s;
    }

    static RelaxedSchedule constant(double t0, double t1, const Vec& u) { return RelaxedSchedule({t0, t1}, {dirac_cell(u)}); }

    [[nodiscard]] const std::vector<double>& grid() const noexcept { return grid_; }
    [[nodiscard]] const std::vector<Cell>& cells() const noexcept { return cells_; }
    [[nodiscard]] std::size_t num_cells() const noexcept { return cells_.size(); }
    [[nodiscard]] bool empty() const noexcept { return cells_.empty(); }
    [[nodiscard]] double start() const { return grid_.front(); }
    [[nodiscard]] double end() const { return grid_.back(); }

    /// Cell index for time t: cells are [t_c, t_{c+1}); times outside the grid
    /// use the first or last cell.
    [[nodiscard]] std::size_t cell_index(double t) const { return detail::locate_cell(grid_, t); }
    [[nodiscard]] const Cell& cell_at(double t) const { return cells_[cell_index(t)]; }

    [[nodiscard]] std::size_t max_atoms() const {
        std::size_t k = 0;
        for (const auto& c : cells_) k = std::max(k, c.size());
        return k;
    }

    /// Grid multiplied by w (unit-time schedule to physical time).
    [[nodiscard]] RelaxedSchedule scaled(double w) const {
        RelaxedSchedule s = *this;
        for (auto& t : s.grid_) t *= w;
        return s;
    }

    /// Restriction to [start, t_end]; the last cell is extended when t_end lies
    /// beyond the grid.
    [[nodiscard]] RelaxedSchedule truncated(double t_end) const {
        if (!(t_end > grid_.front())) fail(ErrorKind::InvalidArgument, "relaxed", "truncation time must exceed the grid start");
        RelaxedSchedule s;
        s.grid_.push_back(grid_.front());
        for (std::size_t c = 0; c < cells_.size(); ++c) {
            const double b = grid_[c + 1];
            const bool last = c + 1 == cells_.size();
            if (b >= t_end || last) {
                s.grid_.push_back(t_end);
                s.cells_.push_back(cells_[c]);
                break;
            }
            s.grid_.push_back(b);
            s.cells_.push_back(cells_[c]);
        }
        return s;
    }

    /// Throws unless every atom lies in U and K <= n + 2 on every cell.
    void validate_for(const ControlSystem& sys, double tol = 1e-9) const {
        for (const auto& c : cells_) {
            if (c.size() > static_cast<std::size_t>(sys.n + 2))
                fail(ErrorKind::InvalidArgument, "relaxed", "cell carries more than n + 2 atoms");
            for (const auto& a : c.atoms)
                if (!sys.control_set.contains(a, tol)) fail(ErrorKind::InvalidArgument, "relaxed", "atom lies outside the control set");
        }
    }

    /// Flattened atoms and weights, for hashing and tie-breaking.
    [[nodiscard]] std::vector<double> flatten() const {
        std::vector<double> out(grid_.begin(), grid_.end());
        for (const auto& c : cells_) {
            for (const auto& a : c.atoms) out.insert(out.end(), a.data(), a.data() + a.size());
            out.insert(out.end(), c.weights.begin(), c.weights.end());
        }
        return out;
    }

private:
    void check_shapes() const {
        detail::check_grid(grid_, cells_.size());
        int m = -1;
        for (const auto& c : cells_) {
            if (c.atoms.empty() || c.atoms.size() != c.weights.size())
                fail(ErrorKind::InvalidArgument, "relaxed", "each cell needs as many weights as atoms, at least one");
            for (const auto& a : c.atoms) {
                if (m < 0) m = static_cast<int>(a.size());
                if (a.size() != m || !a.allFinite()) fail(ErrorKind::InvalidArgument, "relaxed", "atoms must be finite and of equal size");
            }
            for (double w : c.weights)
                if (!std::isfinite(w)) fail(ErrorKind::InvalidArgument, "relaxed", "weights must be finite");
        }
    }

    static void normalize(Cell& c) {
        double s = 0.0;
        for (auto& w : c.weights) {
            if (w < 0.0) {
                if (w < -1e-12) fail(ErrorKind::InvalidArgument, "relaxed", "weights must be nonnegative");
                w = 0.0;
            }
            s += w;
        }
        if (!(s > 0.0)) fail(ErrorKind::InvalidArgument, "relaxed", "cell weights sum to zero");
        for (auto& w : c.weights) w /= s;
    }

    std::vector<double> grid_;
    std::vector<Cell> cells_;
};

struct ClassicalSchedule {
    std::vector<double> grid;
    std::vector<Vec> values;

    [[nodiscard]] const Vec& at(double t) const { return values[detail::locate_cell(grid, t)]; }
};

[[nodiscard]] inline RelaxedSchedule to_dirac(const ClassicalSchedule& u) {
    std::vector<Cell> cells;
    cells.reserve(u.values.size());
    for (const auto& v : u.values) cells.push_back(dirac_cell(v));
    return RelaxedSchedule(u.grid, std::move(cells));
}

/// sum_i lambda_i f(t, y, u_i).
[[nodiscard]] inline Vec relaxed_field(const ControlSystem& sys, double t, const Vec& y, const Cell& cell) {
    Vec f = Vec::Zero(sys.n);
    for (std::size_t i = 0; i < cell.size(); ++i)
        if (cell.weights[i] != 0.0) f += cell.weights[i] * eval_field(sys, t, y, cell.atoms[i]);
    return f;
}

/// sum_i lambda_i f_y(t, y, u_i) in the paper convention.
[[nodiscard]] inline Mat relaxed_jacobian(const ControlSystem& sys, double t, const Vec& y, const Cell& cell) {
    Mat j = Mat::Zero(sys.n, sys.n);
    for (std::size_t i = 0; i < cell.size(); ++i)
        if (cell.weights[i] != 0.0) j += cell.weights[i] * eval_jacobian(sys, t, y, cell.atoms[i]);
    return j;
}

[[nodiscard]] inline Vec cell_mean(const Cell& cell) {
    Vec u = Vec::Zero(cell.atoms.front().size());
    for (std::size_t i = 0; i < cell.size(); ++i) u += cell.weights[i] * cell.atoms[i];
    return u;
}

/// Classical control realizing the relaxed velocity of an affine system with
/// convex U: u* = sum_i lambda_i u_i, so B u* = sum_i lambda_i B u_i.
[[nodiscard]] inline Vec filippov_select(const ControlSystem& sys, double /*t*/, const Cell& cell) {
    if (!sys.control_set.is_convex()) fail(ErrorKind::NonConvexControlSet, "relaxed", "Filippov selection needs a convex control set");
    if (!sys.affine) fail(ErrorKind::NonAffineSystem, "relaxed", "Filippov selection needs a control-affine system");
    Vec u = cell_mean(cell);
    // the mean of points of a convex set lies in the set; clip roundoff only
    if (!sys.control_set.contains(u, 0.0)) u = sys.control_set.project(u);
    return u;
}

/// Splits [t0, t1] into `subdivisions` equal slices and each slice into
/// consecutive pieces occupied by atom i for a fraction lambda_i of the slice.
[[nodiscard]] inline ClassicalSchedule chattering_realization(const Cell& cell, double t0, double t1, int subdivisions) {
    if (subdivisions < 1) fail(ErrorKind::InvalidArgument, "relaxed", "subdivisions must be >= 1");
    if (!(t1 > t0)) fail(ErrorKind::InvalidArgument, "relaxed", "cell must have positive length");
    ClassicalSchedule out;
    out.grid.push_back(t0);
    const double slice = (t1 - t0) / subdivisions;
    for (int k = 0; k < subdivisions; ++k) {
        const double a = t0 + k * slice;
        double acc = 0.0;
        for (std::size_t i = 0; i < cell.size(); ++i) {
            if (!(cell.weights[i] > 0.0)) continue;
            acc += cell.weights[i];
            double b = (k + 1 == subdivisions && acc >= 1.0 - 1e-15) ? t1 : a + acc * slice;
            b = std::min(b, t1);
            if (!(b > out.grid.back())) continue;
            if (!out.values.empty() && out.values.back() == cell.atoms[i]) {
                out.grid.back() = b;
            } else {
                out.grid.push_back(b);
                out.values.push_back(cell.atoms[i]);
            }
        }
    }
    if (out.grid.back() < t1) out.grid.back() = t1;
    return out;
}

/// Chattering realization of a whole schedule.
[[nodiscard]] inline ClassicalSchedule chattering_realization(const RelaxedSchedule& s, int subdivisions) {
    ClassicalSchedule out;
    for (std::size_t c = 0; c < s.num_cells(); ++c) {
        const auto frag = chattering_realization(s.cells()[c], s.grid()[c], s.grid()[c + 1], subdivisions);
        if (out.grid.empty()) out.grid.push_back(frag.grid.front());
        for (std::size_t i = 0; i < frag.values.size(); ++i) {
            out.grid.push_back(frag.grid[i + 1]);
            out.values.push_back(frag.values[i]);
        }
    }
    return out;
}

/// Both schedules on the union of their grids (cells duplicated, not mixed).
[[nodiscard]] inline std::pair<RelaxedSchedule, RelaxedSchedule> common_refinement(const RelaxedSchedule& a,
                                                                                  const RelaxedSchedule& b) {
    std::vector<double> g = a.grid();
    g.insert(g.end(), b.grid().begin(), b.grid().end());
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    auto refine = [&](const RelaxedSchedule& s) {
        std::vector<Cell> cells;
        for (std::size_t i = 0; i + 1 < g.size(); ++i) cells.push_back(s.cell_at(0.5 * (g[i] + g[i + 1])));
        return RelaxedSchedule::unnormalized(g, std::move(cells));
    };
    return {refine(a), refine(b)};
}

/// Per-cell Filippov selection of a whole schedule.
[[nodiscard]] inline ClassicalSchedule filippov_schedule(const ControlSystem& sys, const RelaxedSchedule& s) {
    ClassicalSchedule out;
    out.grid = s.grid();
    for (std::size_t c = 0; c < s.num_cells(); ++c) out.values.push_back(filippov_select(sys, s.grid()[c], s.cells()[c]));
    return out;
}

/// Penalized auxiliary system for a classical candidate.
[[nodiscard]] inline ControlSystem make_penalized_system(const ControlSystem& sys, const ClassicalSchedule& candidate,
                                                         PenaltyVariant variant) {
    auto cand = std::make_shared<const ClassicalSchedule>(candidate);
    return make_penalized_system(
        sys, [cand](double t) { return cand->at(t); }, variant, candidate.grid);
}

}  // namespace tosc
