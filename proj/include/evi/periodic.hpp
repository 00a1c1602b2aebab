#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "evi/cauchy.hpp"
#include "evi/grid.hpp"
#include "evi/monotone.hpp"
#include "evi/multimap.hpp"
#include "evi/relaxation.hpp"

namespace evi {

// ---------------------------------------------------------------------------
// Reports and plumbing for the periodic workflows.
// ---------------------------------------------------------------------------

struct PeriodicReport {
    double periodicity_residual = 0.0;           // |u(b) - u(0)| at convergence
    std::vector<double> contraction_estimates;   // successive period-map ratios
    double rate_bound = 1.0;                     // e^{-c b}: one-period distance contraction
    double rate_bound_energy = 1.0;              // e^{-2 c b}: squared-distance version
    double apriori_margin = 0.0;                 // slack of the integral growth envelope
    double ball_margin = 0.0;                    // slack of the invariant-ball radius
    long outer_iterations = 0;
    double forcing_fixpoint_gap = 0.0;           // last undamped selection gap
    std::vector<double> forcing_gap_history;
    double inclusion_residual = 0.0;             // a posteriori step defect
    double membership_residual = 0.0;            // forcing distance to the admissible set
    std::vector<double> stage_sup_distances;     // consecutive gaps along an eps path
    StepStats stepping;
};

struct PeriodicSolution {
    Trajectory trajectory;
    ForcingPath forcing;
    PeriodicReport report;
};

// Combined strong-monotonicity modulus of the operator plus proximal part.
inline double combined_strong_monotonicity(const OperatorSpec& op, const PhiSpec& phi) {
    return op.strong_monotonicity_c0 + phi.strong_monotonicity_c0;
}

// ---------------------------------------------------------------------------
// Period map: march one period and return the final state.
// ---------------------------------------------------------------------------
inline StateVector poincare(const OperatorSpec& op, const PhiSpec& phi, const StepConfig& cfg,
                            const TimeGrid& grid, const StateVector& x0, const ForcingPath& h,
                            StepStats* stats = nullptr) {
    return solve_cauchy(op, phi, cfg, grid, x0, h, stats).state(grid.n_steps);
}

// ---------------------------------------------------------------------------
// Banach iteration of the period map.  Requires a strictly positive combined
// strong-monotonicity modulus, which makes the map a contraction with factor
// e^{-c b} over one period.
// ---------------------------------------------------------------------------
inline std::pair<Trajectory, PeriodicReport> find_periodic(
    const OperatorSpec& op, const PhiSpec& phi, const StepConfig& cfg, const TimeGrid& grid,
    const ForcingPath& h, const StateVector& x_init, double outer_tol = 1e-8,
    long outer_max = 200) {
    if (!(outer_tol > 0.0)) throw ParameterError("find_periodic: outer_tol must be > 0");
    if (outer_max < 1) throw ParameterError("find_periodic: outer_max must be >= 1");
    const double c = combined_strong_monotonicity(op, phi);
    if (!(c > 0.0))
        throw ParameterError("find_periodic: the period map contracts only under strong "
                             "monotonicity; declared modulus is 0 — wrap the operator with "
                             "regularize(op, eps) or add a proximal modulus");

    PeriodicReport rep;
    rep.rate_bound = std::exp(-c * grid.b);
    rep.rate_bound_energy = std::exp(-2.0 * c * grid.b);

    StateVector x = x_init;
    double prev_residual = -1.0;
    for (long j = 0; j < outer_max; ++j) {
        Trajectory traj = solve_cauchy(op, phi, cfg, grid, x, h, &rep.stepping);
        const StateVector& kx = traj.state(grid.n_steps);
        const double res = h_norm(sub(kx, x), traj.space);
        if (prev_residual > 100.0 * cfg.inner_tol)
            rep.contraction_estimates.push_back(res / prev_residual);
        rep.outer_iterations = j + 1;
        if (res <= outer_tol) {
            rep.periodicity_residual = res;
            return {std::move(traj), std::move(rep)};
        }
        prev_residual = res;
        x = kx;
    }
    throw ConvergenceError("find_periodic: period-map iteration did not reach tolerance " +
                               detail::fmt_g15(outer_tol) + " within " +
                               std::to_string(outer_max) + " iterations",
                           prev_residual, -1, outer_max);
}

// ---------------------------------------------------------------------------
// Growth envelope check for a periodic trajectory:
//   |u(t)| <= c_hat + int_0^t |h(s)| ds,
//   c_hat = e^{c4 b}/(e^{c4 b} - 1) (|dphi(0)| b + ||h||_L1) + |dphi(0)| b.
// Returns the minimum slack over grid times (nonnegative means the bound holds).
// ---------------------------------------------------------------------------
inline double apriori_check(const Trajectory& traj, const ForcingPath& h, const PhiSpec& phi,
                            double c4) {
    if (!(c4 > 0.0)) throw ParameterError("apriori_check: c4 must be > 0");
    const double b = traj.grid.b;
    const double beta0 = phi.subgradient_norm_at_zero(traj.space);
    const double ecb = std::exp(c4 * b);
    const double c_hat = ecb / (ecb - 1.0) * (beta0 * b + l1_norm(h)) + beta0 * b;

    const double tau = traj.grid.tau();
    double margin = std::numeric_limits<double>::infinity();
    double running_l1 = 0.0;
    margin = std::min(margin, c_hat - h_norm(traj.state(0), traj.space));
    for (long k = 0; k < traj.grid.n_steps; ++k) {
        running_l1 += tau * h_norm(h.value(k), h.space);
        margin = std::min(margin,
                          c_hat + running_l1 - h_norm(traj.state(k + 1), traj.space));
    }
    return margin;
}

// Slack of the invariant ball: M - max_t |u(t)|.
inline double ball_invariance_check(const Trajectory& traj, double M) {
    if (!(M > 0.0)) throw ParameterError("ball_invariance_check: M must be > 0");
    double peak = 0.0;
    for (const auto& s : traj.states) peak = std::max(peak, h_norm(s, traj.space));
    return M - peak;
}

// Explicit growth-closure radius for scenarios declared via a linear growth
// envelope |F(t,x)| <= k (1 + |x|):  the envelope bound c_hat (with ||h||_L1
// frozen at ||k||_L1) closes under the Gronwall inequality to
// (c_hat + ||k||_L1) e^{||k||_L1}; a 10% margin over-covers the closure.
inline double gronwall_truncation_radius(const PhiSpec& phi, const SpaceGrid& g, double b,
                                         double c4, double k_l1) {
    if (!(c4 > 0.0)) throw ParameterError("gronwall_truncation_radius: c4 must be > 0");
    if (!(k_l1 >= 0.0)) throw ParameterError("gronwall_truncation_radius: k_l1 must be >= 0");
    const double beta0 = phi.subgradient_norm_at_zero(g);
    const double ecb = std::exp(c4 * b);
    const double c_hat = ecb / (ecb - 1.0) * (beta0 * b + k_l1) + beta0 * b;
    return 1.1 * (c_hat + k_l1) * std::exp(k_l1);
}

// ---------------------------------------------------------------------------
// Convex workflow: damped fixed-point iteration on the forcing,
//   h_{j+1} = (1-theta) h_j + theta select(F, sel, xi(h_j)),
// where xi(h) is the periodic solution for forcing h.  Converged forcing is
// re-selected undamped so it is an exact member of F along the trajectory.
// ---------------------------------------------------------------------------
inline PeriodicSolution solve_convex(const OperatorSpec& op, const PhiSpec& phi,
                                     const StepConfig& cfg, const TimeGrid& grid,
                                     const MultimapSpec& F, const SpaceGrid& space,
                                     const Selection& sel, double theta = 0.5,
                                     double outer_tol = 1e-8, long outer_max = 200,
                                     const ForcingPath* h_init = nullptr,
                                     const StateVector* x_init = nullptr) {
    if (!(theta > 0.0 && theta <= 1.0))
        throw ParameterError("solve_convex: damping must lie in (0, 1]");
    validate_multimap(F, space);

    const double dual_q = op.p / (op.p - 1.0);
    ForcingPath h = h_init ? *h_init : ForcingPath(grid, space);
    StateVector x0 = x_init ? *x_init : StateVector(space.size(), 0.0);

    PeriodicSolution out;
    for (long j = 0; j < outer_max; ++j) {
        auto [traj, rep] = find_periodic(op, phi, cfg, grid, h, x0, outer_tol, outer_max);
        ForcingPath selected = select_path(F, sel, traj);
        const double gap = lq_norm(sub(selected, h), dual_q);
        out.report.forcing_gap_history.push_back(gap);
        out.report.outer_iterations = j + 1;

        if (theta * gap <= outer_tol) {
            // Final pass: adopt the undamped selection so membership is exact,
            // and re-solve so trajectory and forcing agree.
            auto [traj_f, rep_f] = find_periodic(op, phi, cfg, grid, selected, traj.state(0),
                                                 outer_tol, outer_max);
            out.report.forcing_fixpoint_gap = gap;
            out.report.periodicity_residual = rep_f.periodicity_residual;
            out.report.contraction_estimates = std::move(rep_f.contraction_estimates);
            out.report.rate_bound = rep_f.rate_bound;
            out.report.rate_bound_energy = rep_f.rate_bound_energy;
            out.report.stepping = rep_f.stepping;
            out.report.inclusion_residual = inclusion_defect(op, phi, traj_f, selected);
            double membership = 0.0;
            for (long k = 0; k < grid.n_steps; ++k)
                membership = std::max(
                    membership, f_distance(F, space, grid.time(k + 1), traj_f.state(k + 1),
                                           selected.value(k)));
            out.report.membership_residual = membership;
            out.trajectory = std::move(traj_f);
            out.forcing = std::move(selected);
            return out;
        }
        // Damped update toward the selection.
        for (long k = 0; k < grid.n_steps; ++k) {
            StateVector upd = sub(selected.value(k), h.value(k));
            axpy(h.value(k), theta, upd);
        }
        x0 = traj.state(0);
    }
    throw ConvergenceError("solve_convex: forcing loop did not reach tolerance " +
                               detail::fmt_g15(outer_tol) + " within " +
                               std::to_string(outer_max) + " iterations",
                           out.report.forcing_gap_history.empty()
                               ? 0.0
                               : out.report.forcing_gap_history.back(),
                           -1, outer_max);
}

// ---------------------------------------------------------------------------
// Vanishing-regularization path: solve the convex workflow for each eps in a
// decreasing schedule with the operator regularized by eps * identity, warm
// starting every stage from the previous one.  Records the consecutive
// sup-distances between stage solutions.
// ---------------------------------------------------------------------------
inline PeriodicSolution solve_regularized_path(const OperatorSpec& op, const PhiSpec& phi,
                                               const StepConfig& cfg, const TimeGrid& grid,
                                               const MultimapSpec& F, const SpaceGrid& space,
                                               const Selection& sel,
                                               const std::vector<double>& eps_schedule,
                                               double theta = 0.5, double outer_tol = 1e-8,
                                               long outer_max = 200) {
    if (eps_schedule.empty())
        throw ParameterError("solve_regularized_path: empty regularization schedule");
    for (size_t i = 0; i < eps_schedule.size(); ++i) {
        if (!(eps_schedule[i] > 0.0))
            throw ParameterError("solve_regularized_path: eps values must be > 0");
        if (i > 0 && !(eps_schedule[i] < eps_schedule[i - 1]))
            throw ParameterError("solve_regularized_path: schedule must be strictly decreasing");
    }
    if (!(eps_schedule.back() >= 1e-6))
        throw ParameterError("solve_regularized_path: final eps below 1e-6 is numerically "
                             "indistinguishable from the unregularized problem");

    PeriodicSolution out;
    std::vector<double> stage_gaps;
    bool have_prev = false;
    Trajectory prev_traj;
    ForcingPath h_warm(grid, space);
    StateVector x_warm(space.size(), 0.0);

    for (size_t i = 0; i < eps_schedule.size(); ++i) {
        const double eps = eps_schedule[i];
        OperatorSpec reg = regularize(op, eps);
        PeriodicSolution stage;
        try {
            stage = solve_convex(reg, phi, cfg, grid, F, space, sel, theta, outer_tol, outer_max,
                                 have_prev ? &h_warm : nullptr, have_prev ? &x_warm : nullptr);
        } catch (const Error& e) {
            throw ConvergenceError("solve_regularized_path: stage eps=" + detail::fmt_g15(eps) +
                                       " failed: " + e.what(),
                                   0.0, static_cast<long>(i), 0);
        }
        if (have_prev) stage_gaps.push_back(sup_distance(stage.trajectory, prev_traj));
        prev_traj = stage.trajectory;
        h_warm = stage.forcing;
        x_warm = stage.trajectory.state(0);
        have_prev = true;
        out = std::move(stage);
    }
    out.report.stage_sup_distances = std::move(stage_gaps);
    return out;
}

// ---------------------------------------------------------------------------
// Extreme-point workflow: the forcing loop targets the minimal-norm selection
// but emits chattered vertex values.  Once the vertex pattern stops changing,
// it is frozen and the remaining drift feedback is iterated to a tight
// tolerance so the final forcing is exactly vertex-valued along its own
// trajectory.
// ---------------------------------------------------------------------------
inline PeriodicSolution solve_extremal(const OperatorSpec& op, const PhiSpec& phi,
                                       const StepConfig& cfg, const TimeGrid& grid,
                                       const MultimapSpec& F, const SpaceGrid& space,
                                       double delta, double outer_tol = 1e-8,
                                       long outer_max = 200) {
    validate_multimap(F, space);

    PeriodicSolution out;

    if (F.shape.kind == ControlShape::Kind::None) {
        // Singleton control: the set of extreme points is the set itself.
        out = solve_convex(op, phi, cfg, grid, F, space, Selection::minimal_norm(), 1.0,
                           outer_tol, outer_max);
        return out;
    }

    if (F.shape.kind == ControlShape::Kind::FiniteSet) {
        // Finite sets are their own extreme points: the nearest-member
        // selection already emits vertex values, so the convex loop applies.
        Selection sel = Selection::minimal_norm();
        out = solve_convex(op, phi, cfg, grid, F, space, sel, 1.0, outer_tol, outer_max);
        return out;
    }

    // Interval/box geometry: chatter toward the minimal-norm selection.
    ForcingPath h(grid, space);
    StateVector x0(space.size(), 0.0);
    std::vector<std::vector<double>> prev_pattern;
    const long channels = F.shape.channels();

    auto extract_pattern = [&](const ForcingPath& beta, const Trajectory& traj) {
        std::vector<std::vector<double>> pat(static_cast<size_t>(channels),
                                             std::vector<double>(static_cast<size_t>(grid.n_steps)));
        for (long k = 0; k < grid.n_steps; ++k) {
            const StateVector drift =
                drift_state(F, space, grid.time(k + 1), traj.state(k + 1));
            const StateVector r = sub(beta.value(k), drift);
            const std::vector<double> c = detail::channel_coefficients(F, space, r, nullptr);
            for (long j = 0; j < channels; ++j)
                pat[static_cast<size_t>(j)][static_cast<size_t>(k)] = c[static_cast<size_t>(j)];
        }
        return pat;
    };

    for (long j = 0; j < outer_max; ++j) {
        auto [traj, rep] = find_periodic(op, phi, cfg, grid, h, x0, outer_tol, outer_max);
        ForcingPath target = select_path(F, Selection::minimal_norm(), traj);
        ForcingPath beta = chatter(F, traj, target, delta);
        const double gap = lq_norm(sub(beta, h), op.p / (op.p - 1.0));
        out.report.forcing_gap_history.push_back(gap);
        out.report.outer_iterations = j + 1;

        std::vector<std::vector<double>> pattern = extract_pattern(beta, traj);
        const bool stable = (pattern == prev_pattern);
        prev_pattern = std::move(pattern);
        h = std::move(beta);
        x0 = traj.state(0);

        if (stable) {
            // Vertex pattern is frozen; iterate the drift feedback to a tight
            // fixed point so the emitted values sit exactly on vertices of
            // F(t, u(t)) for the trajectory u actually returned.
            Trajectory cur = traj;
            PeriodicReport last_rep = std::move(rep);
            ForcingPath frozen = h;
            for (int refine = 0; refine < 60; ++refine) {
                ForcingPath next(grid, space);
                for (long k = 0; k < grid.n_steps; ++k) {
                    StateVector val =
                        drift_state(F, space, grid.time(k + 1), cur.state(k + 1));
                    for (long ch = 0; ch < channels; ++ch)
                        axpy(val,
                             prev_pattern[static_cast<size_t>(ch)][static_cast<size_t>(k)],
                             F.gains[static_cast<size_t>(ch)]);
                    next.value(k) = std::move(val);
                }
                auto [traj_n, rep_n] = find_periodic(op, phi, cfg, grid, next, cur.state(0),
                                                     outer_tol, outer_max);
                const double drift_shift = sup_distance(traj_n, cur);
                cur = std::move(traj_n);
                frozen = std::move(next);
                last_rep = std::move(rep_n);
                if (drift_shift <= 1e-13 || F.drift.lipschitz_l0 == 0.0) break;
            }
            out.report.forcing_fixpoint_gap = out.report.forcing_gap_history.back();
            out.report.periodicity_residual = last_rep.periodicity_residual;
            out.report.contraction_estimates = std::move(last_rep.contraction_estimates);
            out.report.rate_bound = last_rep.rate_bound;
            out.report.rate_bound_energy = last_rep.rate_bound_energy;
            out.report.stepping = last_rep.stepping;
            out.report.inclusion_residual = inclusion_defect(op, phi, cur, frozen);
            double membership = 0.0;
            for (long k = 0; k < grid.n_steps; ++k) {
                // Distance to the nearest vertex of F(t, u(t)), channelwise.
                const StateVector drift =
                    drift_state(F, space, grid.time(k + 1), cur.state(k + 1));
                const StateVector r = sub(frozen.value(k), drift);
                double rest2 = 0.0;
                const std::vector<double> c =
                    detail::channel_coefficients(F, space, r, &rest2);
                double d2 = rest2;
                for (long ch = 0; ch < channels; ++ch) {
                    const double lo = F.shape.channel_lo(ch), hi = F.shape.channel_hi(ch);
                    const double cc = c[static_cast<size_t>(ch)];
                    const double dv = std::min(std::abs(cc - lo), std::abs(cc - hi));
                    const double gg =
                        dot_h(F.gains[static_cast<size_t>(ch)], F.gains[static_cast<size_t>(ch)],
                              space);
                    d2 += dv * dv * gg;
                }
                membership = std::max(membership, std::sqrt(d2));
            }
            out.report.membership_residual = membership;
            out.trajectory = std::move(cur);
            out.forcing = std::move(frozen);
            return out;
        }
    }
    throw ConvergenceError("solve_extremal: vertex pattern did not stabilize within " +
                               std::to_string(outer_max) + " iterations",
                           out.report.forcing_gap_history.empty()
                               ? 0.0
                               : out.report.forcing_gap_history.back(),
                           -1, outer_max);
}

}  // namespace evi
