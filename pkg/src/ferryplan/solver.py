"""Dense nonlinear programming by sequential quadratic programming.

Problem form:  minimize f(z)  s.t.  c_E(z) = 0,  c_I(z) <= 0.

Each outer iteration solves a convex QP built from the objective
Hessian (Gauss-Newton style: constraint curvature is not modelled) via
a Mehrotra predictor-corrector interior-point method, then line-searches
an L1 exact-penalty merit function.  If the linearized constraints are
inconsistent the QP is re-solved in elastic (slack-relaxed) form, which
doubles as the infeasibility detector.

Sign convention used throughout (and by `kkt_residuals`):

    L(z, y, lam) = f(z) + y' c_E(z) + lam' c_I(z),   lam >= 0,

so stationarity is grad f + J_E' y + J_I' lam = 0, and the multiplier of
an active `c <= 0` constraint is non-negative.

Everything is deterministic: same problem, start and config give
bitwise-identical iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import SolverInputError
from .l1qp import solve_l1_qp


@dataclass(frozen=True)
class SolverConfig:
    kkt_tolerance: float = 1e-6
    constraint_tolerance: float = 1e-6
    max_iterations: int = 500
    hessian_floor: float = 1e-10      # added to the objective Hessian diagonal
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-12
    penalty_initial: float = 1.0
    penalty_margin: float = 1.5
    penalty_max: float = 1e12         # escalation ceiling; reaching it with a
                                      # stationary violation flags infeasibility
    qp_tolerance: float = 1e-9        # scaled KKT residual of the QP subsolver
    qp_max_iterations: int = 100
    initial_trust_radius: float = 50.0
    max_trust_radius: float = 1e8
    min_trust_radius: float = 1e-4

    def __post_init__(self):
        for name in ("kkt_tolerance", "constraint_tolerance", "qp_tolerance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class NlpSolution:
    z: np.ndarray
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    status: str                      # converged | max_iterations | infeasible_detected | numerical_failure
    kkt_residual: float
    constraint_violation: float
    complementarity: float
    iterations: int
    objective: float
    merit_trace: list = field(default_factory=list)
    message: str = ""

    def diagnostics(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "constraint_violation": self.constraint_violation,
            "complementarity": self.complementarity,
            "objective": self.objective,
        }


class DenseNlp:
    """Callback-defined NLP; the minimal interface `solve` needs."""

    def __init__(self, n, objective, gradient, hessian=None,
                 eq_constraints=None, eq_jacobian=None,
                 ineq_constraints=None, ineq_jacobian=None):
        self.n = n
        self._f = objective
        self._g = gradient
        self._h = hessian
        self._ce = eq_constraints
        self._je = eq_jacobian
        self._ci = ineq_constraints
        self._ji = ineq_jacobian

    def objective(self, z):
        return float(self._f(z))

    def gradient(self, z):
        return np.asarray(self._g(z), dtype=float)

    def hessian(self, z):
        if self._h is None:
            return np.eye(self.n)
        return np.asarray(self._h(z), dtype=float)

    def eq_constraints(self, z):
        if self._ce is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self._ce(z), dtype=float))

    def eq_jacobian(self, z):
        if self._je is None:
            return np.zeros((0, self.n))
        return np.atleast_2d(np.asarray(self._je(z), dtype=float))

    def ineq_constraints(self, z):
        if self._ci is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self._ci(z), dtype=float))

    def ineq_jacobian(self, z):
        if self._ji is None:
            return np.zeros((0, self.n))
        return np.atleast_2d(np.asarray(self._ji(z), dtype=float))


# ---------------------------------------------------------------------------
# Convex QP subproblem:  min 1/2 x'Px + q'x  s.t.  Ax = b,  Gx <= h
# ---------------------------------------------------------------------------

class QpResult:
    def __init__(self, x, y, lam, status, iterations, residual=np.inf):
        self.x = x
        self.y = y
        self.lam = lam
        self.status = status      # optimal | max_iterations | failed
        self.iterations = iterations
        self.residual = residual  # scaled max of the KKT residuals at exit

    @property
    def usable(self) -> bool:
        """True when the direction can drive a merit line search, even if
        the subproblem was not polished to full accuracy."""
        return self.status == "optimal" or (
            self.status == "max_iterations" and self.residual <= 1e-3)


def _kkt_solve_factory(P, A, delta_p, delta_d):
    """LU factorization of the regularized saddle matrix [P A'; A -dI]."""
    n = P.shape[0]
    me = A.shape[0]
    K = np.zeros((n + me, n + me))
    K[:n, :n] = P + delta_p * np.eye(n)
    if me:
        K[:n, n:] = A.T
        K[n:, :n] = A
        K[n:, n:] = -delta_d * np.eye(me)
    if not np.all(np.isfinite(K)):
        return None
    try:
        lu = lu_factor(K)
    except (np.linalg.LinAlgError, ValueError):
        return None
    def solve(r1, r2):
        rhs = np.concatenate([r1, r2]) if me else r1
        sol = lu_solve(lu, rhs)
        return sol[:n], sol[n:]
    return solve


def _equality_solve(P, q, A, b, delta_p, delta_d):
    """Solve the equality-constrained QP with one refinement pass."""
    n, me = q.size, A.shape[0]
    solve = _kkt_solve_factory(P, A, delta_p, delta_d)
    if solve is None:
        return None
    x, y = solve(-q, b)
    rd = -(P @ x + q + (A.T @ y if me else 0.0))
    rp = b - A @ x if me else np.zeros(0)
    dx, dy = solve(rd, rp)
    return x + dx, y + dy


def solve_qp(P, q, A=None, b=None, G=None, h=None,
             tol: float = 1e-10, max_iterations: int = 200) -> QpResult:
    """Convex QP solver: active-set crossover around a Mehrotra predictor-
    corrector interior-point core.

    Constraint rows are equilibrated to unit norm internally (multipliers
    are mapped back).  An equality-constrained subproblem with a guessed
    active set pinned is solved directly whenever the guess verifies,
    which yields exact solutions in one factorization for the common
    few-active-rows case; interior-point iterations only refine the
    active-set guess.  P must be positive semi-definite on the null
    space of A; small primal/dual regularization keeps the KKT systems
    solvable even for rank-deficient A.
    """
    q = np.asarray(q, dtype=float)
    n = q.size
    P = np.asarray(P, dtype=float)
    A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    me, mi = A.shape[0], G.shape[0]

    # row equilibration: slacks and multipliers become comparably scaled
    if me:
        ra = np.maximum(np.linalg.norm(A, axis=1), 1e-12)
        A = A / ra[:, None]
        b = b / ra
    else:
        ra = np.zeros(0)
    if mi:
        rg = np.maximum(np.linalg.norm(G, axis=1), 1e-12)
        G = G / rg[:, None]
        h = h / rg
    else:
        rg = np.zeros(0)

    scale_d = max(1.0, float(np.abs(q).max(initial=0.0)))
    scale_p = max(1.0, float(np.abs(b).max(initial=0.0)), float(np.abs(h).max(initial=0.0)))
    delta_p = 1e-11 * max(1.0, float(np.abs(P).max(initial=0.0)))
    delta_d = 1e-11

    def finish(x, y, lam, status, iterations, residual=0.0):
        return QpResult(x, (y / ra if me else y), (lam / rg if mi else lam),
                        status, iterations, residual)

    def crossover(active, iterations):
        """Pin `active` rows as equalities; verify primal and dual feasibility."""
        A_aug = np.vstack([A, G[active]]) if active.size else A
        b_aug = np.concatenate([b, h[active]]) if active.size else b
        out = _equality_solve(P, q, A_aug, b_aug, delta_p, delta_d)
        if out is None:
            return None
        x_c, w = out
        y_c = w[:me]
        lam_c = np.zeros(mi)
        if active.size:
            lam_act = w[me:]
            if lam_act.size and lam_act.min(initial=0.0) < -1e-7 * scale_d:
                return None
            lam_c[active] = np.maximum(lam_act, 0.0)
        if me and np.abs(A @ x_c - b).max() > 1e-7 * scale_p:
            return None
        if active.size and np.abs(G[active] @ x_c - h[active]).max() > 1e-7 * scale_p:
            return None
        inactive = np.setdiff1d(np.arange(mi), active, assume_unique=True)
        if inactive.size and (G[inactive] @ x_c - h[inactive]).max() > 1e-8 * scale_p:
            return None
        return finish(x_c, y_c, lam_c, "optimal", iterations)

    if mi == 0:
        out = _equality_solve(P, q, A, b, delta_p, delta_d)
        if out is None:
            return finish(np.zeros(n), np.zeros(me), np.zeros(0), "failed", 0, np.inf)
        x, y = out
        if me and np.abs(A @ x - b).max() > 1e-7 * scale_p:
            # inconsistent equality rows: leave restoration to the caller
            return finish(x, y, np.zeros(0), "failed", 1, np.inf)
        return finish(x, y, np.zeros(0), "optimal", 1)

    # cheapest hypothesis first: no active inequalities at the optimum
    res = crossover(np.zeros(0, dtype=int), 1)
    if res is not None:
        return res

    # interior-point iterations with normalized rows
    solve = _kkt_solve_factory(P + G.T @ G, A, delta_p, delta_d)
    if solve is None:
        return finish(np.zeros(n), np.zeros(me), np.zeros(mi), "failed", 0, np.inf)
    x, y = solve(-q + G.T @ h, b)
    s = np.maximum(h - G @ x, 1.0)
    lam = np.ones(mi)

    status = "max_iterations"
    it = 0
    best_res = np.inf
    stall = 0
    last_active = None
    for it in range(1, max_iterations + 1):
        rd = P @ x + q + (A.T @ y if me else 0.0) + G.T @ lam
        rp = A @ x - b if me else np.zeros(0)
        rg_res = G @ x + s - h
        mu = float(s @ lam) / mi

        res_now = max(
            float(np.abs(rd).max(initial=0.0)) / scale_d,
            float(np.abs(rp).max(initial=0.0)) / scale_p,
            float(np.abs(rg_res).max(initial=0.0)) / scale_p,
            mu / scale_d,
        )
        if res_now <= tol:
            status = "optimal"
            break

        # crossover attempt whenever the active-set guess changes
        active = np.flatnonzero(lam > s)
        if last_active is None or not np.array_equal(active, last_active):
            last_active = active
            out = crossover(active, it)
            if out is not None:
                return out

        if res_now >= 0.999 * best_res:
            stall += 1
            if stall >= 10:
                break  # no further progress at this conditioning
        else:
            stall = 0
            best_res = res_now

        s_safe = np.maximum(s, 1e-250)
        W = np.clip(lam / s_safe, 0.0, 1e16)
        solve = _kkt_solve_factory(P + (G.T * W) @ G, A, delta_p, delta_d)
        if solve is None:
            return finish(x, y, lam, "failed", it, np.inf)

        def newton(r_c_over_s):
            rhs_x = -rd + G.T @ (r_c_over_s - W * rg_res)
            dx, dy = solve(rhs_x, -rp)
            ds = -rg_res - G @ dx
            dlam = -r_c_over_s - W * ds
            return dx, dy, ds, dlam

        # affine scaling (predictor) direction
        dx_a, dy_a, ds_a, dlam_a = newton(lam.copy())
        alpha_p = _max_step(s, ds_a)
        alpha_d = _max_step(lam, dlam_a)
        mu_aff = float((s + alpha_p * ds_a) @ (lam + alpha_d * dlam_a)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # corrector
        r_c_over_s = np.clip(lam - sigma * mu / s_safe + ds_a * dlam_a / s_safe,
                             -1e18, 1e18)
        dx, dy, ds, dlam = newton(r_c_over_s)
        alpha_p = min(1.0, 0.99 * _max_step(s, ds))
        alpha_d = min(1.0, 0.99 * _max_step(lam, dlam))
        x = x + alpha_p * dx
        s = s + alpha_p * ds
        y = y + alpha_d * dy if me else y
        lam = lam + alpha_d * dlam
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(lam))):
            return finish(x, y, lam, "failed", it, np.inf)

    lam = np.maximum(lam, 0.0)
    # final crossover from the best active-set guess
    out = crossover(np.flatnonzero(lam > s), it)
    if out is not None:
        return out
    rd = P @ x + q + (A.T @ y if me else 0.0) + G.T @ lam
    rp = A @ x - b if me else np.zeros(0)
    rg_res = G @ x + s - h
    final_res = max(
        float(np.abs(rd).max(initial=0.0)) / scale_d,
        float(np.abs(rp).max(initial=0.0)) / scale_p,
        float(np.abs(rg_res).max(initial=0.0)) / scale_p,
        float(s @ lam) / mi / scale_d,
    )
    return finish(x, y, lam, status, it,
                  0.0 if status == "optimal" else final_res)
def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


# ---------------------------------------------------------------------------
# SQP outer loop
# ---------------------------------------------------------------------------

def kkt_residuals(problem, z, eq_multipliers, ineq_multipliers):
    """(stationarity, primal, dual, complementarity) infinity norms."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(eq_multipliers, dtype=float)
    lam = np.asarray(ineq_multipliers, dtype=float)
    g = problem.gradient(z)
    ce = problem.eq_constraints(z)
    ci = problem.ineq_constraints(z)
    if y.size != ce.size or lam.size != ci.size:
        raise SolverInputError(
            f"multiplier sizes ({y.size}, {lam.size}) do not match constraint "
            f"counts ({ce.size}, {ci.size})"
        )
    stat = g.copy()
    if y.size:
        stat = stat + problem.eq_jacobian(z).T @ y
    if lam.size:
        stat = stat + problem.ineq_jacobian(z).T @ lam
    stationarity = float(np.abs(stat).max(initial=0.0))
    primal = max(
        float(np.abs(ce).max(initial=0.0)),
        float(np.maximum(ci, 0.0).max(initial=0.0)),
    )
    dual = float(np.maximum(-lam, 0.0).max(initial=0.0))
    complementarity = float(np.abs(lam * ci).max(initial=0.0)) if lam.size else 0.0
    return stationarity, primal, dual, complementarity


def _violation(ce, ci):
    return float(np.abs(ce).sum() + np.maximum(ci, 0.0).sum())


def _refined_multipliers(g, Je, Ji, ci, lam, active_tol):
    """Least-squares multiplier estimate over equalities + active inequalities.

    QP multipliers lag the iterate by one linearization; near a solution
    the LS estimate certifies the KKT point much more sharply.
    """
    me = Je.shape[0]
    active = np.flatnonzero((ci >= -active_tol) | (lam > active_tol)) if ci.size else np.array([], dtype=int)
    Jact = np.vstack([Je, Ji[active]]) if (me or active.size) else None
    if Jact is None or Jact.size == 0:
        return np.zeros(me), np.zeros(ci.size)
    w, *_ = np.linalg.lstsq(Jact.T, -g, rcond=None)
    y_ref = w[:me]
    lam_ref = np.zeros(ci.size)
    if active.size:
        lam_ref[active] = np.maximum(w[me:], 0.0)
    return y_ref, lam_ref


def solve(problem, init, config: SolverConfig | None = None,
          iteration_callback=None) -> NlpSolution:
    """SQP solve of `problem` from the starting point `init`.

    Each iteration solves Fletcher's L1-penalty trust-region QP (always
    feasible, so one subproblem form serves optimization and restoration
    alike), line-searches the matching L1 exact-penalty merit function,
    and adapts the trust radius from the accepted step length.  The
    penalty weight escalates whenever the subproblem prefers violating a
    linearized constraint; hitting the escalation ceiling with a
    stationary violation is the infeasibility signal.

    `iteration_callback(info)` receives one dict per accepted iterate
    (iteration, objective, violation, step, penalty, kkt residual).
    """
    config = config or SolverConfig()
    z = np.asarray(init, dtype=float).copy()
    if z.size != problem.n:
        raise SolverInputError(f"init has dimension {z.size}, problem expects {problem.n}")
    f = problem.objective(z)
    ce = problem.eq_constraints(z)
    ci = problem.ineq_constraints(z)
    if not (np.isfinite(f) and np.all(np.isfinite(ce)) and np.all(np.isfinite(ci))):
        raise SolverInputError("objective or constraints are non-finite at the start point")

    me, mi = ce.size, ci.size
    y = np.zeros(me)
    lam = np.zeros(mi)
    rho = config.penalty_initial
    levenberg = 0.0
    trace = []
    status = "max_iterations"
    message = ""
    it = 0
    # quasi-Newton estimate of the constraint-curvature part of the
    # Lagrangian Hessian (the objective part is exact); kept PSD by
    # skipping non-positive curvature pairs
    B = np.zeros((problem.n, problem.n))
    pending = None  # (z_old, Je_old, Ji_old) of the last accepted iterate
    rho_high_count = 0
    infeasible_rounds = 0
    best_stat = np.inf
    plateau = 0
    # the QP is posed in step_scale units (column equilibration; the
    # multipliers are invariant under that change of variables)
    step_scale = np.asarray(getattr(problem, "step_scale", np.ones(problem.n)), dtype=float)
    radius = config.initial_trust_radius
    qp_sets = None

    def _passes(stat, primal, dual, comp):
        return (stat <= config.kkt_tolerance and primal <= config.constraint_tolerance
                and dual <= config.kkt_tolerance and comp <= config.kkt_tolerance)

    for it in range(1, config.max_iterations + 1):
        g = problem.gradient(z)
        Je = problem.eq_jacobian(z)
        Ji = problem.ineq_jacobian(z)
        stat, primal, dual, comp = kkt_residuals(problem, z, y, lam)
        if _passes(stat, primal, dual, comp):
            status = "converged"
            it -= 1  # the accepted iterate was produced by the previous loop
            break
        y_ref, lam_ref = _refined_multipliers(
            g, Je, Ji, ci, lam, 10.0 * config.constraint_tolerance)
        ref = kkt_residuals(problem, z, y_ref, lam_ref)
        if _passes(*ref):
            y, lam = y_ref, lam_ref
            status = "converged"
            it -= 1
            break
        stat = min(stat, ref[0])

        # plateau exit: the Gauss-Newton tail is linear at best, so once
        # the stationarity stops improving there is nothing left to gain
        if stat < 0.98 * best_stat:
            best_stat = stat
            plateau = 0
        else:
            plateau += 1
            if plateau >= 30 and primal <= config.constraint_tolerance:
                message = f"stationarity plateaued at {stat:.3g}"
                break

        H = problem.hessian(z)
        hscale = max(1.0, float(np.abs(H).max(initial=0.0)))

        if pending is not None:
            # curvature pair built with the bounded LS multipliers; raw QP
            # multipliers can be wild under heavy regularization
            z_old, Je_old, Ji_old = pending
            s_qn = z - z_old
            yv = np.zeros(problem.n)
            if me:
                yv += (Je - Je_old).T @ y_ref
            if mi:
                yv += (Ji - Ji_old).T @ lam_ref
            sy = float(s_qn @ yv)
            if sy > 1e-10 * float(np.linalg.norm(s_qn) * np.linalg.norm(yv) + 1e-300):
                Bs = B @ s_qn
                sBs = float(s_qn @ Bs)
                if sBs > 1e-14:
                    B = B - np.outer(Bs, Bs) / sBs
                # cap the rank-one growth so a single noisy pair cannot
                # dominate the exact objective curvature
                update_norm = float(yv @ yv) / sy
                B = B + min(1.0, 1e3 * hscale / update_norm) * np.outer(yv, yv) / sy
            pending = None

        if float(np.abs(B).max(initial=0.0)) > 1e6 * hscale:
            B = np.zeros((problem.n, problem.n))  # safeguard reset
        H = H + B + (config.hessian_floor * hscale + levenberg) * np.eye(problem.n)

        Ssc = step_scale
        H_s = H * np.outer(Ssc, Ssc)
        g_s = g * Ssc
        Je_s = Je * Ssc if me else Je
        Ji_s = Ji * Ssc if mi else Ji
        # proximal trust bounding: sigma ~ |g|/radius caps the step along
        # flat directions at about the trust radius (in scaled units) while
        # barely perturbing directions with real curvature
        sigma = max(1.0, float(np.abs(g_s).max(initial=0.0))) / radius
        H_s = H_s + sigma * np.eye(problem.n)

        # seed the penalty from the multiplier scale so the first
        # subproblems are not wildly under-weighted
        rho = max(rho, config.penalty_margin
                  * max(float(np.abs(y_ref).max(initial=0.0)),
                        float(np.abs(lam_ref).max(initial=0.0))) + 1.0)

        theta0 = _violation(ce, ci)
        qp = None
        pred_prev = np.inf
        for _ in range(14):  # penalty escalation loop
            qp = solve_l1_qp(H_s, g_s, Je_s if me else None, ce if me else None,
                             Ji_s if mi else None, ci if mi else None,
                             rho, hint=qp_sets, max_passes=150)
            if qp is not None:
                qp_sets = qp.sets  # keep refining the same hypothesis next time
            if qp is None or not qp.converged:
                break
            # escalate while the subproblem still prefers violating the
            # linearization AND escalation actually helps (the trust box
            # itself can make full restoration unreachable in one step);
            # tolerance-level violations are left to the merit function,
            # where an inflated penalty would only amplify noise
            if theta0 <= 10.0 * config.constraint_tolerance:
                break
            if qp.predicted_violation <= 0.1 * theta0:
                break
            if qp.predicted_violation > 0.95 * pred_prev or rho >= config.penalty_max:
                break
            pred_prev = qp.predicted_violation
            rho *= 10.0
            qp_sets = qp.sets
        if qp is None:
            status = "numerical_failure"
            message = "L1 subproblem factorization failed"
            break
        if not qp.converged:
            # hypothesis loop did not settle; retry (the hypothesis carries
            # over, so work accumulates), shrinking if it keeps failing
            radius = max(0.5 * radius, config.min_trust_radius)
            levenberg = max(10.0 * levenberg, 1e-6 * hscale)
            if radius <= config.min_trust_radius and levenberg > 1e10 * hscale:
                status = "numerical_failure"
                message = "active-set hypothesis failed to settle"
                break
            continue
        d = qp.d * Ssc
        y_new, lam_new = qp.y, qp.lam

        # restoration stationarity: even the linearization cannot reduce the
        # violation and the step has collapsed
        if (theta0 > config.constraint_tolerance
                and qp.predicted_violation >= 0.999 * theta0
                and float(np.abs(qp.d).max(initial=0.0)) <= 1e-10 * (1.0 + float(np.abs(z / step_scale).max()))):
            infeasible_rounds += 1
            if infeasible_rounds >= 3:
                status = "infeasible_detected"
                message = f"stationary infeasibility {theta0:.3e}"
                break
        else:
            infeasible_rounds = 0

        # penalty bookkeeping: decay once the multiplier scale settles far
        # below a previously escalated weight
        mult_scale = max(
            float(np.abs(y_ref).max(initial=0.0)),
            float(np.abs(lam_ref).max(initial=0.0)),
        )
        rho_req = config.penalty_margin * mult_scale + 1.0
        if rho > 100.0 * rho_req:
            rho_high_count += 1
            if rho_high_count >= 5:
                rho = 10.0 * rho_req
                rho_high_count = 0
        else:
            rho_high_count = 0


        merit0 = f + rho * theta0
        # model reduction predicted by the QP; non-negative by construction
        pred_red = max(rho * theta0 - qp.model_value, 1e-16)
        # merit comparisons below this are floating-point noise: objective
        # round-off plus penalty-amplified constraint evaluation jitter
        noise = 2.2e-14 * (abs(f) + rho * max(theta0, 1e-6) + 1.0)

        # factor J J' once; the second-order correction reuses it at every
        # backtracking level (curvature of the equalities otherwise blocks
        # damped steps near the solution)
        soc_solve = _soc_factor(Je) if me else None

        alpha = 1.0
        accepted = False
        f_trial = f
        for _ in range(60):
            z_trial = z + alpha * d
            f_trial = problem.objective(z_trial)
            ce_t = problem.eq_constraints(z_trial)
            ci_t = problem.ineq_constraints(z_trial)
            if np.isfinite(f_trial) and np.all(np.isfinite(ce_t)) and np.all(np.isfinite(ci_t)):
                merit_t = f_trial + rho * _violation(ce_t, ci_t)
                if merit_t <= merit0 - config.armijo * alpha * pred_red + noise:
                    accepted = True
                    break
                if soc_solve is not None:
                    z_soc = z_trial - Je.T @ soc_solve(ce_t)
                    f_soc = problem.objective(z_soc)
                    ce_s = problem.eq_constraints(z_soc)
                    ci_s = problem.ineq_constraints(z_soc)
                    if (np.isfinite(f_soc) and np.all(np.isfinite(ce_s))
                            and np.all(np.isfinite(ci_s))):
                        merit_s = f_soc + rho * _violation(ce_s, ci_s)
                        if merit_s <= merit0 - config.armijo * alpha * pred_red + noise:
                            z_trial, f_trial = z_soc, f_soc
                            ce_t, ci_t = ce_s, ci_s
                            accepted = True
                            break
            alpha *= config.backtrack
            if alpha < config.min_step:
                break

        if not accepted:
            # shrink the trust region relative to the attempted step; drop
            # learned curvature if it keeps failing at the smallest radius
            if radius <= config.min_trust_radius:
                B = np.zeros((problem.n, problem.n))
                levenberg = max(10.0 * levenberg, 1e-4 * hscale)
                if levenberg > 1e10 * hscale:
                    status = "numerical_failure"
                    message = "line search failed at maximum regularization"
                    break
            attempted = float(np.abs(qp.d).max(initial=0.0))
            radius = max(0.25 * min(radius, attempted), config.min_trust_radius)
            continue

        # radius update: expand on full steps, contract when the line
        # search had to cut the step
        if alpha >= 0.99:
            levenberg = 0.0
            radius = min(2.0 * radius, config.max_trust_radius)
        elif alpha < 0.25:
            radius = max(0.35 * radius, config.min_trust_radius)
        pending = (z.copy(), Je, Ji)
        z, f, ce, ci = z_trial, f_trial, ce_t, ci_t
        y, lam = y_new, lam_new
        step_norm = float(np.abs(alpha * d).max(initial=0.0))
        entry = {
            "iteration": it,
            "objective": f,
            "violation": _violation(ce, ci),
            "step": step_norm,
            "alpha": alpha,
            "penalty": rho,
            "merit": f + rho * _violation(ce, ci),
            "elastic": False,
            "kkt": stat,
            "multiplier_norm": mult_scale,
            "regularization": levenberg,
            "trust_radius": radius,
        }
        trace.append(entry)
        if iteration_callback is not None:
            iteration_callback(entry)

    stat, primal, dual, comp = kkt_residuals(problem, z, y, lam)
    if status == "max_iterations":
        y_ref, lam_ref = _refined_multipliers(
            problem.gradient(z), problem.eq_jacobian(z), problem.ineq_jacobian(z),
            ci, lam, 10.0 * config.constraint_tolerance)
        ref = kkt_residuals(problem, z, y_ref, lam_ref)
        if ref[0] <= stat:
            y, lam = y_ref, lam_ref
            stat, primal, dual, comp = ref
        if _passes(stat, primal, dual, comp):
            status = "converged"
    return NlpSolution(
        z=z, eq_multipliers=y, ineq_multipliers=lam, status=status,
        kkt_residual=stat, constraint_violation=primal, complementarity=comp,
        iterations=it, objective=problem.objective(z), merit_trace=trace,
        message=message,
    )

def _soc_factor(Je):
    """Factorized least-squares feasibility correction: returns a callable
    w(ce) with Je' w approximating the shift cancelling the residual ce."""
    me = Je.shape[0]
    JJt = Je @ Je.T + 1e-10 * np.eye(me)
    try:
        lu = lu_factor(JJt)
    except (np.linalg.LinAlgError, ValueError):
        return None
    return lambda ce: lu_solve(lu, ce)
