#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "assembly.hpp"
#include "linalg.hpp"
#include "mapping.hpp"
#include "splines.hpp"

namespace harmap {

struct GmresSettings {
    double rtol = 1e-3;
    int restart = 50;
    int max_iter = 200;
};

struct LineSearchSettings {
    double backtrack = 0.5;
    double sufficient_decrease = 1e-4;
    double min_step = 1e-4;
};

struct SolverConfig {
    /// Stop when the Newton step norm drops below newton_tol times the first
    /// step norm, or below abs_tol.
    double newton_tol = 1e-8;
    double abs_tol = 1e-12;
    int max_newton = 50;
    double fd_norm_floor = 1e-14;
    GmresSettings gmres;
    LineSearchSettings line_search;
    int coarse_levels = 0;
    /// On coupled (multipatch) systems, apply A^{-1} exactly inside the Schur
    /// operator; when false, the patchwise projections merged by the
    /// restriction operator are used instead.
    bool exact_coupled_schur = true;
    /// Keep the auxiliary coefficients in the report.
    bool keep_aux = false;
    /// One JSON object per Newton iteration when set.
    std::ostream* log = nullptr;

    void validate() const {
        if (!(newton_tol > 0) || !(abs_tol > 0) || !(fd_norm_floor > 0) || !(gmres.rtol > 0))
            throw InputError("solver tolerances must be positive");
        if (max_newton < 1 || gmres.restart < 1 || gmres.max_iter < 1) throw InputError("iteration limits must be >= 1");
        if (!(line_search.backtrack > 0 && line_search.backtrack < 1)) throw InputError("backtracking factor must lie in (0, 1)");
        if (!(line_search.min_step > 0 && line_search.min_step <= 1)) throw InputError("minimum step must lie in (0, 1]");
        if (coarse_levels < 0) throw InputError("coarse_levels must be >= 0");
    }
};

enum class SolveStatus { converged, max_iterations, stagnated };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::converged: return "converged";
        case SolveStatus::max_iterations: return "max_iterations";
        case SolveStatus::stagnated: return "stagnated";
    }
    return "unknown";
}

struct IterationRecord {
    int iteration = 0;
    double residual_norm = 0;  // before the step
    double step_norm = 0;      // ||n||
    double step_length = 0;    // nu
    double new_residual_norm = 0;
    int gmres_iterations = 0;
    bool gmres_converged = false;
    int rn_evaluations = 0;    // during this iteration
    int line_search_probes = 0;
};

struct SolverReport {
    SolveStatus status = SolveStatus::max_iterations;
    bool converged = false;
    int iterations = 0;
    double initial_residual = 0;
    double final_residual = 0;
    int rn_evaluations = 0;
    int matvecs = 0;
    int line_search_probes = 0;
    double wall_seconds = 0;
    std::vector<IterationRecord> history;
    Vector aux;  // only with keep_aux
};

inline nlohmann::json to_json(const IterationRecord& r) {
    return {{"iteration", r.iteration},         {"residual", r.residual_norm},
            {"step_norm", r.step_norm},         {"nu", r.step_length},
            {"new_residual", r.new_residual_norm}, {"gmres_iterations", r.gmres_iterations},
            {"gmres_converged", r.gmres_converged}, {"rn_evaluations", r.rn_evaluations},
            {"line_search_probes", r.line_search_probes}};
}

inline nlohmann::json to_json(const SolverReport& r, bool with_time = true) {
    nlohmann::json j = {{"status", to_string(r.status)},
                        {"converged", r.converged},
                        {"iterations", r.iterations},
                        {"initial_residual", r.initial_residual},
                        {"final_residual", r.final_residual},
                        {"rn_evaluations", r.rn_evaluations},
                        {"matvecs", r.matvecs},
                        {"line_search_probes", r.line_search_probes}};
    nlohmann::json h = nlohmann::json::array();
    for (const auto& it : r.history) h.push_back(to_json(it));
    j["history"] = h;
    if (with_time) j["wall_seconds"] = r.wall_seconds;
    return j;
}

/// Finite-difference step sqrt(eps) (1 + ||state||) / ||s||.
inline double fd_epsilon(double state_norm, double dir_norm, double floor = 1e-14) {
    return std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + state_norm) / std::max(dir_norm, floor);
}

/// Linearization point of the Schur-complement system.
struct SchurState {
    const MixedSystem* sys = nullptr;
    Vector d, c;
    Vector RN;  // R_N(d, c)
    double state_norm = 0;
    double fd_floor = 1e-14;
    bool exact = false;
    mutable int rn_evaluations = 0;

    SchurState(const MixedSystem& s, Vector d_, Vector c_, double floor = 1e-14, bool exact_solve = false)
        : sys(&s), d(std::move(d_)), c(std::move(c_)), fd_floor(floor), exact(exact_solve && s.coupled()) {
        RN = s.residual_nonlinear(d, c);
        rn_evaluations = 1;
        state_norm = std::sqrt(d.squaredNorm() + c.squaredNorm());
    }

    Vector rn(const Vector& dd, const Vector& cc) const {
        ++rn_evaluations;
        return sys->residual_nonlinear(dd, cc);
    }
};

/// Initial auxiliary coefficients: d = A^{-1}(B c + B_bnd c_bnd).
inline Vector initial_d_from_c(const MixedSystem& sys, const Vector& c) {
    if (!sys.coupled()) return sys.project(c, true);
    return sys.solve_aux(sys.primal_derivative_rhs(c, true));
}

/// (D + C A^{-1} B) s by one forward difference of R_N along (A^{-1} B s, s).
inline Vector schur_matvec(const SchurState& st, const Vector& s) {
    const double eps = fd_epsilon(st.state_norm, s.norm(), st.fd_floor);
    Vector q = st.exact ? st.sys->solve_aux(st.sys->apply_B(s)) : st.sys->ainv_b(s);
    return (st.rn(st.d + eps * q, st.c + eps * s) - st.RN) / eps;
}

/// b - C A^{-1} a with a = -R_L, b = -R_N.
inline Vector schur_rhs(const SchurState& st) {
    Vector b = -st.RN;
    Vector RL = st.sys->residual_linear(st.d, st.c);
    if (RL.isZero(0.0)) return b;
    // A^{-1} a = A^{-1}(B c + B_bnd c_bnd) - d.
    Vector ainv_a = st.exact ? st.sys->solve_aux(-RL) : Vector(st.sys->project(st.c, true) - st.d);
    const double nrm = ainv_a.norm();
    if (nrm == 0.0) return b;
    const double eps = fd_epsilon(st.state_norm, nrm, st.fd_floor);
    return b - (st.rn(st.d + eps * ainv_a, st.c) - st.RN) / eps;
}

inline double residual_norm(const MixedSystem& sys, const Vector& d, const Vector& c, Vector* rn_out = nullptr) {
    Vector RL = sys.residual_linear(d, c);
    Vector RN = sys.residual_nonlinear(d, c);
    if (rn_out) *rn_out = RN;
    return std::sqrt(RL.squaredNorm() + RN.squaredNorm());
}

struct NewtonResult {
    Vector c;
    Vector d;
    SolverReport report;
};

/// Line-searched Newton iteration on the Schur complement, starting from the
/// inner coefficients `c0` (bijectivity not required). `ref_step` replaces the
/// first step norm as the reference of the relative stopping test when > 0.
inline NewtonResult newton_solve(const MixedSystem& sys, const Vector& c0, const SolverConfig& cfg,
                                 double ref_step = 0.0) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    NewtonResult out;
    SolverReport& rep = out.report;
    Vector c = c0;
    Vector d = initial_d_from_c(sys, c);
    double rnorm = residual_norm(sys, d, c);
    ++rep.rn_evaluations;
    rep.initial_residual = rnorm;
    double reference = ref_step;

    for (int it = 1; it <= cfg.max_newton; ++it) {
        IterationRecord rec;
        rec.iteration = it;
        rec.residual_norm = rnorm;
        if (rnorm == 0.0) {
            rep.status = SolveStatus::converged;
            break;
        }
        SchurState st(sys, d, c, cfg.fd_norm_floor, cfg.exact_coupled_schur);
        Vector a = -sys.residual_linear(d, c);
        Vector rhs = schur_rhs(st);
        auto matvec = [&](const Vector& s) { return schur_matvec(st, s); };
        GmresResult gm = gmres(matvec, rhs, cfg.gmres.rtol, cfg.gmres.restart, cfg.gmres.max_iter);
        const Vector& dc = gm.solution;
        Vector dd = sys.solve_aux(a + sys.apply_B(dc));
        rec.gmres_iterations = gm.iterations;
        rec.gmres_converged = gm.converged;
        rep.matvecs += gm.matvecs;
        const double step = std::sqrt(dd.squaredNorm() + dc.squaredNorm());
        rec.step_norm = step;
        if (reference <= 0.0) reference = step;
        const bool small = step <= cfg.newton_tol * reference || step <= cfg.abs_tol;

        double nu = 1.0;
        Vector d_new, c_new;
        double new_norm = 0.0;
        bool accepted = false;
        while (true) {
            d_new = d + nu * dd;
            c_new = c + nu * dc;
            new_norm = residual_norm(sys, d_new, c_new);
            ++st.rn_evaluations;
            ++rec.line_search_probes;
            if (small || new_norm <= (1.0 - cfg.line_search.sufficient_decrease * nu) * rnorm) {
                accepted = true;
                break;
            }
            if (nu * cfg.line_search.backtrack < cfg.line_search.min_step) break;
            nu *= cfg.line_search.backtrack;
        }
        rec.step_length = accepted ? nu : 0.0;
        rec.new_residual_norm = accepted ? new_norm : rnorm;
        rec.rn_evaluations = st.rn_evaluations;
        rep.rn_evaluations += st.rn_evaluations;
        rep.line_search_probes += rec.line_search_probes;
        rep.iterations = it;
        rep.history.push_back(rec);
        if (cfg.log) *cfg.log << to_json(rec).dump() << '\n';
        if (!accepted) {
            rep.status = SolveStatus::stagnated;
            break;
        }
        d = std::move(d_new);
        c = std::move(c_new);
        rnorm = new_norm;
        if (small) {
            rep.status = SolveStatus::converged;
            break;
        }
    }
    rep.converged = rep.status == SolveStatus::converged;
    rep.final_residual = rnorm;
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg.keep_aux) rep.aux = d;
    out.c = std::move(c);
    out.d = std::move(d);
    return out;
}

/// Solves on a single-patch map, writing the inner control points back on success.
inline NewtonResult newton_solve(SplineMap& map, const SystemOptions& opts, const SolverConfig& cfg) {
    MixedSystem sys = make_system(map, opts);
    auto res = newton_solve(sys, map.inner_coefficients(), cfg);
    if (res.report.converged) map.set_inner_coefficients(res.c);
    return res;
}

/// Interpolates a boundary curve onto a coarser nested knot vector at the
/// coarse Greville abscissae (endpoints are reproduced exactly).
inline std::vector<Point> restrict_curve(const KnotVector& fine, const std::vector<Point>& coeffs,
                                         const KnotVector& coarse) {
    auto out = interpolate_curve(coarse, [&](double x) { return eval_curve<Point>(fine, coeffs, x); });
    out.front() = coeffs.front();
    out.back() = coeffs.back();
    return out;
}

/// Prolongs a full control net from `coarse` to its refinement `fine`.
inline std::vector<Point> prolong_net(const TensorBasis& coarse, const std::vector<Point>& net) {
    auto [kx, px] = h_refine(coarse.kv_xi);
    auto [ke, pe] = h_refine(coarse.kv_eta);
    Eigen::MatrixXd X(coarse.n_xi(), coarse.n_eta()), Y(coarse.n_xi(), coarse.n_eta());
    for (int i = 0; i < coarse.n_xi(); ++i)
        for (int j = 0; j < coarse.n_eta(); ++j) {
            X(i, j) = net[static_cast<std::size_t>(coarse.index(i, j))].x();
            Y(i, j) = net[static_cast<std::size_t>(coarse.index(i, j))].y();
        }
    Eigen::MatrixXd FX = px.matrix * X * pe.matrix.transpose();
    Eigen::MatrixXd FY = px.matrix * Y * pe.matrix.transpose();
    TensorBasis fine{kx, ke};
    std::vector<Point> out(static_cast<std::size_t>(fine.size()));
    for (int i = 0; i < fine.n_xi(); ++i)
        for (int j = 0; j < fine.n_eta(); ++j) out[static_cast<std::size_t>(fine.index(i, j))] = Point(FX(i, j), FY(i, j));
    return out;
}

struct CoarseToFineResult {
    Vector c;
    SolverReport report;                // finest level
    std::vector<SolverReport> levels;   // coarsest first, finest last
};

/// Solves on `levels` successively coarsened bases first (transfinite start on
/// the coarsest), prolonging only the primal coefficients between levels.
/// The fine map's inner control points are the starting guess only when
/// levels == 0.
inline CoarseToFineResult coarse_to_fine_solve(SplineMap& map, int levels, const SystemOptions& opts,
                                               const SolverConfig& cfg) {
    CoarseToFineResult out;
    if (levels <= 0) {
        auto r = newton_solve(map, opts, cfg);
        out.c = r.c;
        out.report = r.report;
        out.levels.push_back(r.report);
        return out;
    }
    std::vector<TensorBasis> bases{map.basis};
    for (int l = 0; l < levels; ++l)
        bases.push_back({h_coarsen(bases.back().kv_xi), h_coarsen(bases.back().kv_eta)});
    std::reverse(bases.begin(), bases.end());

    BoundaryCurves fine_curves = boundary_curves(map);
    std::vector<Point> net;
    for (std::size_t l = 0; l < bases.size(); ++l) {
        const TensorBasis& b = bases[l];
        SplineMap level_map;
        if (l + 1 == bases.size()) {
            level_map = map;
        } else {
            BoundaryCurves bc{restrict_curve(map.basis.kv_xi, fine_curves.south, b.kv_xi),
                              restrict_curve(map.basis.kv_xi, fine_curves.north, b.kv_xi),
                              restrict_curve(map.basis.kv_eta, fine_curves.west, b.kv_eta),
                              restrict_curve(map.basis.kv_eta, fine_curves.east, b.kv_eta)};
            level_map = make_map(b, bc);
        }
        if (l == 0) {
            level_map.set_inner_coefficients(transfinite_initial_guess(level_map));
        } else {
            auto fine_net = prolong_net(bases[l - 1], net);
            for (int i : level_map.inner_indices)
                level_map.control_points[static_cast<std::size_t>(i)] = fine_net[static_cast<std::size_t>(i)];
        }
        MixedSystem sys = make_system(level_map, opts);
        auto r = newton_solve(sys, level_map.inner_coefficients(), cfg);
        out.levels.push_back(r.report);
        level_map.set_inner_coefficients(r.c);
        net = level_map.control_points;
        if (l + 1 == bases.size()) {
            out.c = r.c;
            out.report = r.report;
            if (r.report.converged) map.set_inner_coefficients(r.c);
        } else if (!r.report.converged) {
            out.report = r.report;
        }
    }
    return out;
}

}  // namespace harmap
