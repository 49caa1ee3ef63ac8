"""Active-set solver for the L1-penalty trust-region QP.

Subproblem (Fletcher's SL1QP form), in already column-scaled variables:

    minimize_d   1/2 d'Hd + g'd + rho * (sum_i |t_i| + sum_j w_j)
    subject to   Je d + ce = t
                 Ji d + ci <= w,   w >= 0
                 -radius <= d <= radius   (componentwise)

Always feasible, so one subproblem form serves both optimization and
feasibility restoration.  Solved by hypothesizing which rows sit where
(equality rows: pinned / violated up / violated down; inequality rows:
inactive / active / violated; variables: free / at a bound), solving the
resulting equality-constrained QP directly, then repairing the
hypothesis from primal and dual violations until it verifies.  Each
pass costs one dense factorization; with a warm-started hypothesis most
solves take one or two passes.

Multipliers follow the convention L = f + y'c_E + lam'c_I, so
|y| <= rho and 0 <= lam <= rho at a solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

# row / variable classifications
PINNED, VIO_UP, VIO_DOWN = 0, 1, 2          # equality rows
INACTIVE, ACTIVE, VIOLATED = 0, 1, 2        # inequality rows
FREE, AT_LOWER, AT_UPPER = 0, 1, 2          # variables


@dataclass
class L1QpSets:
    """Active-set hypothesis; reusable as a warm start."""

    eq_state: np.ndarray
    ineq_state: np.ndarray
    var_state: np.ndarray

    @classmethod
    def cold(cls, me: int, mi: int, n: int) -> "L1QpSets":
        return cls(np.zeros(me, dtype=int), np.zeros(mi, dtype=int),
                   np.zeros(n, dtype=int))

    def copy(self) -> "L1QpSets":
        return L1QpSets(self.eq_state.copy(), self.ineq_state.copy(),
                        self.var_state.copy())


@dataclass
class L1QpResult:
    d: np.ndarray
    y: np.ndarray               # equality multipliers, |y| <= rho
    lam: np.ndarray             # inequality multipliers, 0 <= lam <= rho
    predicted_violation: float  # L1 violation remaining at the step
    model_value: float          # QP objective value at d
    sets: L1QpSets
    passes: int
    converged: bool


def _eqp_solve(H, grad, rows, rhs, free, d_fixed):
    """Equality-constrained QP on the free variables; returns (d, nu).

    The factorization carries a tiny dual regularization for rank-deficient
    row sets, but refinement runs against the exact saddle matrix: with
    multipliers of order 1e6 even a 1e-11 shift would otherwise leave
    constraint residuals large enough for an L1 penalty to see.
    """
    nf = int(free.sum())
    mr = rows.shape[0]
    Hff = H[np.ix_(free, free)]
    K = np.zeros((nf + mr, nf + mr))
    K[:nf, :nf] = Hff
    rhs_top = -(grad[free] + H[np.ix_(free, ~free)] @ d_fixed[~free])
    if mr:
        Rf = rows[:, free]
        K[:nf, nf:] = Rf.T
        K[nf:, :nf] = Rf
        rhs_bot = rhs - rows[:, ~free] @ d_fixed[~free]
        full_rhs = np.concatenate([rhs_top, rhs_bot])
    else:
        full_rhs = rhs_top
    if not np.all(np.isfinite(K)):
        return None
    K_reg = K.copy()
    if mr:
        K_reg[nf:, nf:] -= 1e-11 * np.eye(mr)
    try:
        lu = lu_factor(K_reg)
        sol = lu_solve(lu, full_rhs)
        best = None
        for _ in range(3):
            resid = full_rhs - K @ sol
            err = float(np.abs(resid).max(initial=0.0))
            if best is not None and err >= best[0]:
                sol = best[1]
                break
            best = (err, sol.copy())
            sol = sol + lu_solve(lu, resid)
    except (np.linalg.LinAlgError, ValueError):
        return None
    d = d_fixed.copy()
    d[free] = sol[:nf]
    nu = sol[nf:]
    return d, nu


def solve_l1_qp(H, g, Je, ce, Ji, ci, rho, radius=None,
                hint: L1QpSets | None = None, max_passes: int = 100) -> L1QpResult | None:
    """Solve the L1-penalty QP; None only on factorization failure.

    radius=None disables the trust box (callers bounding the step with a
    proximal term in H pass None)."""
    g = np.asarray(g, dtype=float)
    n = g.size
    H = np.asarray(H, dtype=float)
    Je = np.zeros((0, n)) if Je is None else np.asarray(Je, dtype=float)
    ce = np.zeros(0) if ce is None else np.asarray(ce, dtype=float)
    Ji = np.zeros((0, n)) if Ji is None else np.asarray(Ji, dtype=float)
    ci = np.zeros(0) if ci is None else np.asarray(ci, dtype=float)
    me, mi = ce.size, ci.size

    sets = hint.copy() if hint is not None else L1QpSets.cold(me, mi, n)
    if sets.eq_state.size != me or sets.ineq_state.size != mi or sets.var_state.size != n:
        sets = L1QpSets.cold(me, mi, n)

    gscale = max(1.0, float(np.abs(g).max(initial=0.0)), rho)
    cscale = max(1.0, float(np.abs(ce).max(initial=0.0)), float(np.abs(ci).max(initial=0.0)))
    dual_tol = 1e-9 * gscale
    prim_tol = 1e-9 * cscale
    box_tol = 1e-9 * max(1.0, radius) if radius is not None else 0.0

    best = None
    for it in range(1, max_passes + 1):
        eq_pin = sets.eq_state == PINNED
        ineq_act = sets.ineq_state == ACTIVE
        free = sets.var_state == FREE

        grad = g.copy()
        if me:
            grad += rho * (Je[sets.eq_state == VIO_UP].sum(axis=0)
                           - Je[sets.eq_state == VIO_DOWN].sum(axis=0))
        if mi:
            grad += rho * Ji[sets.ineq_state == VIOLATED].sum(axis=0)

        rows = np.vstack([Je[eq_pin], Ji[ineq_act]]) if (eq_pin.any() or ineq_act.any()) \
            else np.zeros((0, n))
        rhs = np.concatenate([-ce[eq_pin], -ci[ineq_act]])

        d_fixed = np.zeros(n)
        if radius is not None:
            d_fixed[sets.var_state == AT_LOWER] = -radius
            d_fixed[sets.var_state == AT_UPPER] = radius

        if not free.any() and rows.shape[0] == 0:
            d, nu = d_fixed, np.zeros(0)
        else:
            out = _eqp_solve(H, grad, rows, rhs, free, d_fixed)
            if out is None:
                return None
            d, nu = out

        n_pin = int(eq_pin.sum())
        y_pin = nu[:n_pin]
        lam_act = nu[n_pin:]

        # reduced gradient for the bound multipliers
        red_grad = H @ d + grad
        if rows.shape[0]:
            red_grad = red_grad + rows.T @ nu

        r_eq = Je @ d + ce if me else np.zeros(0)
        s_in = Ji @ d + ci if mi else np.zeros(0)

        # --- verify the hypothesis -----------------------------------------
        # primal repairs (pins, sign corrections) apply in bulk; dual-driven
        # releases move one row per pass, worst first, which avoids the
        # mass pin/release flapping that cycles bulk active-set updates
        moves = 0
        severity = 0.0
        release = (0.0, None)  # (severity, fix) for dual-driven moves

        def consider_release(sev, fix):
            nonlocal release
            if sev > release[0]:
                release = (sev, fix)

        # primal: trust bounds hit by free variables
        if radius is not None:
            hit_up = np.flatnonzero(free & (d > radius + box_tol))
            hit_lo = np.flatnonzero(free & (d < -radius - box_tol))
        else:
            hit_up = hit_lo = np.zeros(0, dtype=int)
        if hit_up.size:
            sets.var_state[hit_up] = AT_UPPER
            moves += hit_up.size
            severity = max(severity, float((d[hit_up] - radius).max()) / max(radius, 1e-12))
        if hit_lo.size:
            sets.var_state[hit_lo] = AT_LOWER
            moves += hit_lo.size
            severity = max(severity, float((-d[hit_lo] - radius).max()) / max(radius, 1e-12))
        # primal: violated equality rows must keep their violation sign
        wrong_up = np.flatnonzero((sets.eq_state == VIO_UP) & (r_eq < -prim_tol))
        wrong_dn = np.flatnonzero((sets.eq_state == VIO_DOWN) & (r_eq > prim_tol))
        if wrong_up.size:
            sets.eq_state[wrong_up] = PINNED
            moves += wrong_up.size
            severity = max(severity, float(-r_eq[wrong_up].min()) / cscale)
        if wrong_dn.size:
            sets.eq_state[wrong_dn] = PINNED
            moves += wrong_dn.size
            severity = max(severity, float(r_eq[wrong_dn].max()) / cscale)
        # primal: violated inequality rows whose slack w hit zero
        w_zero = np.flatnonzero((sets.ineq_state == VIOLATED) & (s_in < -prim_tol))
        if w_zero.size:
            sets.ineq_state[w_zero] = ACTIVE
            moves += w_zero.size
            severity = max(severity, float(-s_in[w_zero].min()) / cscale)
        # primal: single worst inactive inequality violation
        cand = np.flatnonzero((sets.ineq_state == INACTIVE) & (s_in > prim_tol))
        if cand.size:
            worst_i = cand[int(np.argmax(s_in[cand]))]
            sets.ineq_state[worst_i] = ACTIVE
            moves += 1
            severity = max(severity, float(s_in[worst_i]) / cscale)

        if moves == 0:
            # dual: trust-bound releases are orthogonal rows, safe in bulk
            rel_lo = np.flatnonzero((sets.var_state == AT_LOWER) & (red_grad < -dual_tol))
            rel_up = np.flatnonzero((sets.var_state == AT_UPPER) & (red_grad > dual_tol))
            if rel_lo.size:
                sets.var_state[rel_lo] = FREE
                moves += rel_lo.size
                severity = max(severity, float(-red_grad[rel_lo].min()) / gscale)
            if rel_up.size:
                sets.var_state[rel_up] = FREE
                moves += rel_up.size
                severity = max(severity, float(red_grad[rel_up].max()) / gscale)

        if moves == 0:
            # dual checks on general rows, one move per pass: pinned
            # equality rows need |y| <= rho; beyond +rho it is cheaper to
            # pay the penalty for a positive residual (y = rho*sign(t) at
            # an L1 optimum)
            idx_pin = np.flatnonzero(eq_pin)
            for k, i in enumerate(idx_pin):
                if y_pin[k] > rho + dual_tol:
                    consider_release((y_pin[k] - rho) / gscale, ("eq", i, VIO_UP))
                elif y_pin[k] < -rho - dual_tol:
                    consider_release((-y_pin[k] - rho) / gscale, ("eq", i, VIO_DOWN))
            idx_act = np.flatnonzero(ineq_act)
            for k, i in enumerate(idx_act):
                if lam_act[k] < -dual_tol:
                    consider_release(-lam_act[k] / gscale, ("ineq", i, INACTIVE))
                elif lam_act[k] > rho + dual_tol:
                    consider_release((lam_act[k] - rho) / gscale, ("ineq", i, VIOLATED))
            if release[1] is not None:
                kind, idx, new_state = release[1]
                if kind == "eq":
                    sets.eq_state[idx] = new_state
                else:
                    sets.ineq_state[idx] = new_state
                moves = 1
                severity = release[0]

        if moves == 0:
            # consistent hypothesis: assemble multipliers and return
            y = np.zeros(me)
            y[idx_pin] = np.clip(y_pin, -rho, rho)
            y[sets.eq_state == VIO_UP] = rho
            y[sets.eq_state == VIO_DOWN] = -rho
            lam = np.zeros(mi)
            lam[idx_act] = np.clip(lam_act, 0.0, rho)
            lam[sets.ineq_state == VIOLATED] = rho
            pred_v = float(np.abs(r_eq).sum() + np.maximum(s_in, 0.0).sum())
            model = float(0.5 * d @ H @ d + g @ d + rho * pred_v)
            return L1QpResult(d, y, lam, pred_v, model, sets, it, True)

        if best is None or severity < best[0]:
            best = (severity, d, sets.copy(), it)

    # hypothesis loop did not settle: return the least-inconsistent pass
    _, d, sets, it = best
    r_eq = Je @ d + ce if me else np.zeros(0)
    s_in = Ji @ d + ci if mi else np.zeros(0)
    pred_v = float(np.abs(r_eq).sum() + np.maximum(s_in, 0.0).sum())
    model = float(0.5 * d @ H @ d + g @ d + rho * pred_v)
    return L1QpResult(d, np.zeros(me), np.zeros(mi), pred_v, model, sets,
                      max_passes, False)
