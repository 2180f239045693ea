"""Sparse convex QP solver.

Solves   min 1/2 x' P x + q' x   s.t.  lower <= A x <= upper
with P positive semidefinite, by operator splitting: Ruiz-scaled data, one
sparse factorization of the condensed system P + sigma I + A' diag(rho) A,
a step size per constraint row, and an optional active-set polish for
high-accuracy solutions.  Equality rows are expressed as lower == upper.
Everything is deterministic: no randomized pivoting, no time-based stopping.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_DIV_GUARD = 1e-30


@dataclass(frozen=True)
class QpOptions:
    sigma: float = 1e-6
    rho: float = 0.1
    rho_eq_scale: float = 1e3
    relaxation: float = 1.6
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_infeasible: float = 1e-9
    max_iterations: int = 20000
    check_interval: int = 25
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 100
    adaptive_rho_tolerance: float = 5.0
    max_refactorizations: int = 4
    scaling_iterations: int = 10
    polish: bool = True
    # Attempt the active-set polish once the scaled residuals reach this level;
    # a successful polish ends the solve at machine accuracy long before the
    # first-order iteration would grind down to eps_abs on its own.
    polish_at: float = 3e-5
    polish_reg: float = 1e-9
    polish_refine_steps: int = 3


@dataclass
class QpResult:
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    polished: bool = False
    scaling: tuple | None = None
    rho_final: float = 0.1
    z: np.ndarray | None = None

    @property
    def solved(self) -> bool:
        return self.status == "solved"


def _column_max(abs_data: np.ndarray, indices: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size)
    np.maximum.at(out, indices, abs_data)
    return out


def _ruiz_scale(P: sp.csc_matrix, q: np.ndarray, A: sp.csc_matrix, iterations: int):
    """Modified Ruiz equilibration of the stacked KKT data plus cost scaling.

    Operates in place on copies of the nonzero data, which keeps the cost
    linear in nnz per sweep.
    """
    n, m = q.size, A.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    c = 1.0
    Ps = P.tocsc(copy=True)
    As = A.tocsc(copy=True)
    qs = q.copy()
    p_col = np.repeat(np.arange(n), np.diff(Ps.indptr))
    p_row = Ps.indices
    a_col = np.repeat(np.arange(n), np.diff(As.indptr))
    a_row = As.indices
    for _ in range(iterations):
        abs_p = np.abs(Ps.data)
        abs_a = np.abs(As.data)
        norm_x = _column_max(abs_p, p_col, n)
        if m:
            np.maximum.at(norm_x, a_col, abs_a)
        delta_x = 1.0 / np.sqrt(np.where(norm_x > _DIV_GUARD, norm_x, 1.0))
        if m:
            row_a = _column_max(abs_a, a_row, m)
            delta_e = 1.0 / np.sqrt(np.where(row_a > _DIV_GUARD, row_a, 1.0))
            As.data *= delta_e[a_row] * delta_x[a_col]
            e *= delta_e
        Ps.data *= delta_x[p_row] * delta_x[p_col]
        qs *= delta_x
        d *= delta_x
        col_p = _column_max(np.abs(Ps.data), p_col, n)
        denom = max(float(col_p.mean()) if n else 0.0, float(np.abs(qs).max(initial=0.0)))
        gamma = 1.0 / denom if denom > _DIV_GUARD else 1.0
        Ps.data *= gamma
        qs *= gamma
        c *= gamma
    return Ps, qs, As, d, e, c


def _factor_kkt(P: sp.csc_matrix, A: sp.csc_matrix, sigma: float, rho_vec: np.ndarray):
    """Factor the condensed system P + sigma I + A' diag(rho) A.

    Much smaller and fills far less than the equivalent 2x2 saddle form; the
    consensus iterate follows as z_tilde = A x_tilde.
    """
    n, m = P.shape[0], A.shape[0]
    M = P + sigma * sp.eye(n, format="csc")
    if m:
        M = (M + A.T @ sp.diags(rho_vec) @ A).tocsc()
    return spla.splu(M, permc_spec="MMD_ATA")


def solve_qp(
    P,
    q,
    A=None,
    lower=None,
    upper=None,
    options: QpOptions | None = None,
    x0=None,
    y0=None,
    z0=None,
    scaling: tuple | None = None,
    workspace: dict | None = None,
    rho0: float | None = None,
) -> QpResult:
    """Solve the interval-constrained convex QP; see module docstring.

    `scaling` may carry (d, e, c) equilibration vectors from a previous solve
    of a structurally identical problem, saving the Ruiz sweeps; `rho0`
    similarly seeds the step size with the value a previous related solve
    adapted to.  A caller that re-solves with byte-identical P and A may pass
    a `workspace` dict; the KKT factorization is then reused.
    """
    opts = options or QpOptions()
    q = np.asarray(q, dtype=float).reshape(-1)
    n = q.size
    P = sp.csc_matrix(P, shape=(n, n), dtype=float)
    if A is None or (hasattr(A, "shape") and A.shape[0] == 0):
        A = sp.csc_matrix((0, n))
        lower = np.zeros(0)
        upper = np.zeros(0)
    else:
        A = sp.csc_matrix(A, dtype=float)
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    m = A.shape[0]
    if lower.size != m or upper.size != m:
        raise ValueError("constraint bounds do not match the number of rows")
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound on some row")

    if scaling is not None and scaling[0].size == n and scaling[1].size == m:
        d, e, c = scaling[0].copy(), scaling[1].copy(), float(scaling[2])
        Ps = P.tocsc(copy=True)
        Ps.data *= c * d[Ps.indices] * d[np.repeat(np.arange(n), np.diff(Ps.indptr))]
        As = A.tocsc(copy=True)
        if m:
            As.data *= e[As.indices] * d[np.repeat(np.arange(n), np.diff(As.indptr))]
        qs = c * d * q
    else:
        Ps, qs, As, d, e, c = _ruiz_scale(P, q, A, opts.scaling_iterations)
    ls = e * lower
    us = e * upper
    eq_mask = np.isfinite(lower) & np.isfinite(upper) & (lower == upper)
    rho_base = float(rho0) if rho0 is not None else opts.rho
    rho_vec = np.where(eq_mask, rho_base * opts.rho_eq_scale, rho_base)

    if x0 is not None and np.asarray(x0).size == n:
        x = np.asarray(x0, dtype=float) / d
    else:
        x = np.zeros(n)
    if y0 is not None and np.asarray(y0).size == m:
        y = c * np.asarray(y0, dtype=float) / np.where(e > 0, e, 1.0)
    else:
        y = np.zeros(m)
    if z0 is not None and np.asarray(z0).size == m:
        z = np.clip(e * np.asarray(z0, dtype=float), ls, us)
    else:
        z = np.clip(As @ x, ls, us) if m else np.zeros(0)

    lu = None
    if workspace is not None and workspace.get("lu") is not None:
        same = (
            np.array_equal(workspace.get("rho_vec"), rho_vec)
            and np.array_equal(workspace.get("a_data"), A.data)
            and np.array_equal(workspace.get("p_data"), P.data)
            and workspace.get("scaling_id") == id(scaling)
        )
        if same:
            lu = workspace["lu"]
    if lu is None:
        lu = _factor_kkt(Ps, As, opts.sigma, rho_vec)
        if workspace is not None:
            workspace.update(
                lu=lu,
                rho_vec=rho_vec.copy(),
                a_data=A.data.copy(),
                p_data=P.data.copy(),
                scaling_id=id(scaling),
            )
    refactorizations = 0
    status = "max_iterations"
    iterations = opts.max_iterations
    pri_res = np.inf
    dua_res = np.inf
    x_prev_chk = x.copy()
    y_prev_chk = y.copy()

    def residuals(xv, yv, zv):
        ax = (As @ xv) / e if m else np.zeros(0)
        pri = float(np.max(np.abs(ax - zv / e), initial=0.0)) if m else 0.0
        grad = Ps @ xv + qs + (As.T @ yv if m else 0.0)
        dua = float(np.max(np.abs(grad / (c * d)), initial=0.0))
        pri_ref = max(
            float(np.max(np.abs(ax), initial=0.0)),
            float(np.max(np.abs(zv / e), initial=0.0)) if m else 0.0,
        )
        dua_ref = max(
            float(np.max(np.abs((Ps @ xv) / (c * d)), initial=0.0)),
            float(np.max(np.abs((As.T @ yv) / (c * d)), initial=0.0)) if m else 0.0,
            float(np.max(np.abs(qs / (c * d)), initial=0.0)),
        )
        return pri, dua, pri_ref, dua_ref

    polish_target = opts.polish_at if (opts.polish and m) else None
    for it in range(1, opts.max_iterations + 1):
        if m:
            rhs = opts.sigma * x - qs + As.T @ (rho_vec * z - y)
        else:
            rhs = opts.sigma * x - qs
        x_tilde = lu.solve(rhs)
        x = opts.relaxation * x_tilde + (1.0 - opts.relaxation) * x
        if m:
            z_tilde = As @ x_tilde
            w = opts.relaxation * z_tilde + (1.0 - opts.relaxation) * z + y / rho_vec
            z_new = np.clip(w, ls, us)
            y = rho_vec * (w - z_new)
            z = z_new

        if it % opts.check_interval and it != opts.max_iterations:
            continue
        pri_res, dua_res, pri_ref, dua_ref = residuals(x, y, z)
        eps_pri = opts.eps_abs + opts.eps_rel * pri_ref
        eps_dua = opts.eps_abs + opts.eps_rel * dua_ref
        if pri_res <= eps_pri and dua_res <= eps_dua:
            status = "solved"
            iterations = it
            break
        if (
            polish_target is not None
            and pri_res <= polish_target * (1.0 + pri_ref)
            and dua_res <= polish_target * (1.0 + dua_ref)
        ):
            early = _polish_point(P, q, A, lower, upper, d * x, (e * y) / c, opts)
            if early is not None and max(early.primal_residual, early.dual_residual) <= opts.eps_abs:
                return QpResult(
                    early.x, early.y, "solved", it,
                    early.primal_residual, early.dual_residual, polished=True,
                    scaling=(d, e, c), rho_final=rho_base,
                    z=np.clip(A @ early.x, lower, upper),
                )
            polish_target *= 1e-2
            if polish_target <= min(opts.eps_abs, opts.eps_rel):
                polish_target = None

        dy = (e * (y - y_prev_chk)) / c if m else np.zeros(0)
        dx = d * (x - x_prev_chk)
        if m and float(np.max(np.abs(dy), initial=0.0)) > _DIV_GUARD:
            norm_dy = float(np.max(np.abs(dy)))
            at_dy = float(np.max(np.abs((A.T @ dy) / d), initial=0.0))
            up_term = np.where(np.isfinite(upper) & (dy > 0), upper, 0.0) * np.maximum(dy, 0.0)
            lo_term = np.where(np.isfinite(lower) & (dy < 0), lower, 0.0) * np.minimum(dy, 0.0)
            support = float(np.sum(up_term) + np.sum(lo_term))
            unbounded_push = bool(
                np.any((dy > opts.eps_infeasible * norm_dy) & ~np.isfinite(upper))
                or np.any((dy < -opts.eps_infeasible * norm_dy) & ~np.isfinite(lower))
            )
            if (
                not unbounded_push
                and at_dy <= opts.eps_infeasible * norm_dy
                and support <= -opts.eps_infeasible * norm_dy
            ):
                status = "primal_infeasible"
                iterations = it
                break
        norm_dx = float(np.max(np.abs(dx), initial=0.0))
        if norm_dx > _DIV_GUARD:
            p_dx = float(np.max(np.abs(P @ dx), initial=0.0))
            q_dx = float(q @ dx)
            tol = opts.eps_infeasible * norm_dx
            if m:
                adx = A @ dx
                directions_ok = bool(
                    np.all(adx[np.isfinite(lower)] >= -tol)
                    and np.all(adx[np.isfinite(upper)] <= tol)
                )
            else:
                directions_ok = True
            if p_dx <= tol and q_dx < -tol and directions_ok:
                status = "dual_infeasible"
                iterations = it
                break
        x_prev_chk = x.copy()
        y_prev_chk = y.copy()

        if (
            opts.adaptive_rho
            and m
            and it % opts.adaptive_rho_interval == 0
            and refactorizations < opts.max_refactorizations
            and it < opts.max_iterations
        ):
            scale = np.sqrt(
                max(pri_res / max(pri_ref, _DIV_GUARD), _DIV_GUARD)
                / max(dua_res / max(dua_ref, _DIV_GUARD), _DIV_GUARD)
            )
            if scale > opts.adaptive_rho_tolerance or scale < 1.0 / opts.adaptive_rho_tolerance:
                rho_base = float(np.clip(rho_base * scale, 1e-6, 1e5))
                rho_vec = np.where(eq_mask, rho_base * opts.rho_eq_scale, rho_base)
                lu = _factor_kkt(Ps, As, opts.sigma, rho_vec)
                refactorizations += 1
                if workspace is not None:
                    workspace.update(lu=lu, rho_vec=rho_vec.copy())

    x_out = d * x
    y_out = (e * y) / c if m else np.zeros(0)
    z_out = z / e if m else np.zeros(0)
    result = QpResult(x_out, y_out, status, iterations, pri_res, dua_res,
                      scaling=(d, e, c), rho_final=rho_base, z=z_out)

    if opts.polish and status == "max_iterations" and m:
        # Salvage an iteration-capped run: the active-set guess is often
        # already right, and the polished point is then essentially exact.
        salvage = _polish_point(P, q, A, lower, upper, x_out, y_out, opts)
        if salvage is not None:
            worst = max(salvage.primal_residual, salvage.dual_residual)
            if worst <= opts.eps_abs:
                return QpResult(
                    salvage.x, salvage.y, "solved", iterations,
                    salvage.primal_residual, salvage.dual_residual,
                    polished=True, scaling=(d, e, c), rho_final=rho_base,
                    z=np.clip(A @ salvage.x, lower, upper),
                )
            if worst < max(pri_res, dua_res):
                result = QpResult(
                    salvage.x, salvage.y, status, iterations,
                    salvage.primal_residual, salvage.dual_residual,
                    polished=True, scaling=(d, e, c), rho_final=rho_base,
                )
    elif opts.polish and status == "solved" and m:
        polished = _polish_point(P, q, A, lower, upper, x_out, y_out, opts)
        if polished is not None and max(
            polished.primal_residual, polished.dual_residual
        ) <= max(pri_res, dua_res, opts.eps_abs):
            result = QpResult(
                polished.x, polished.y, "solved", iterations,
                polished.primal_residual, polished.dual_residual, polished=True,
                scaling=(d, e, c), rho_final=rho_base,
            )
    elif opts.polish and status == "solved":
        # Unconstrained: refine P x = -q directly.
        lu0 = spla.splu(sp.csc_matrix(P + opts.polish_reg * sp.eye(n)))
        xh = lu0.solve(-q)
        for _ in range(opts.polish_refine_steps):
            xh += lu0.solve(-q - P @ xh)
        if np.max(np.abs(P @ xh + q), initial=0.0) <= max(result.dual_residual, opts.eps_abs):
            result = replace(result, x=xh, polished=True)
    return result


def _polish_point(P, q, A, lower, upper, x_est, y_est, opts: QpOptions) -> QpResult | None:
    """Solve the equality-constrained problem on the active set guessed from y.

    The multiplier signs only suggest the active set; a guessed row whose
    solution does not actually sit on the targeted bound (for example because
    a true equality row already fixes those variables) is dropped and the
    reduced system re-solved.  Without this refinement a phantom multiplier
    on a slack row survives warm start after warm start and permanently
    blocks the complementarity test downstream.

    Returns the candidate with its unscaled residuals, or None when the
    reduced system cannot be factored, produces non-finite values, or the
    active-set guess keeps disagreeing with its own solution.
    """
    n, m = q.size, A.shape[0]
    eq_rows = np.isfinite(lower) & np.isfinite(upper) & (lower == upper)
    guess_low = (~eq_rows) & (y_est < 0.0)
    guess_upp = (~eq_rows) & (y_est > 0.0)
    for _ in range(3):
        active = np.where(eq_rows | guess_low | guess_upp)[0]
        targets = np.where(eq_rows | guess_upp, upper, lower)[active]
        A_act = A[active]
        k = active.size
        kkt_reg = sp.bmat(
            [
                [P + opts.polish_reg * sp.eye(n, format="csc"), A_act.T if k else None],
                [A_act if k else None, -opts.polish_reg * sp.eye(k, format="csc") if k else None],
            ],
            format="csc",
        )
        try:
            lu = spla.splu(kkt_reg, permc_spec="MMD_ATA")
        except RuntimeError:
            return None
        rhs = np.concatenate([-q, targets])
        t = lu.solve(rhs)
        kkt0 = sp.bmat(
            [[P, A_act.T if k else None], [A_act if k else None, None]], format="csc"
        ) if k else sp.csc_matrix(P)
        for _ in range(opts.polish_refine_steps):
            t += lu.solve(rhs - kkt0 @ t)
        xh = t[:n]
        if not np.all(np.isfinite(xh)):
            return None
        achieved = A_act @ xh if k else np.zeros(0)
        guessed = ~eq_rows[active]
        wrong = guessed & (
            np.abs(achieved - targets) > 1e-6 * (1.0 + np.abs(targets))
        )
        if not np.any(wrong):
            break
        drop = active[wrong]
        guess_low[drop] = False
        guess_upp[drop] = False
    else:
        return None
    yh = np.zeros(m)
    yh[active] = t[n:]
    if not np.all(np.isfinite(yh)):
        return None
    ax = A @ xh
    pri = float(np.max(np.maximum(lower - ax, 0.0), initial=0.0))
    pri = max(pri, float(np.max(np.maximum(ax - upper, 0.0), initial=0.0)))
    dua = float(np.max(np.abs(P @ xh + q + A.T @ yh), initial=0.0))
    return QpResult(xh, yh, "candidate", 0, pri, dua, polished=True)


def qp_solve(
    hessian,
    gradient,
    eq_matrix=None,
    eq_rhs=None,
    ineq_matrix=None,
    ineq_lower=None,
    ineq_upper=None,
    x_lower=None,
    x_upper=None,
    options: QpOptions | None = None,
    x0=None,
):
    """Convenience front end with equality rows, interval rows and variable bounds.

    Returns (x, eq_multipliers, ineq_multipliers, QpResult); bound multipliers
    are folded into the result's trailing rows.
    """
    gradient = np.asarray(gradient, dtype=float).reshape(-1)
    n = gradient.size
    blocks, lows, highs = [], [], []
    m_eq = m_in = 0
    if eq_matrix is not None:
        eq_rhs = np.asarray(eq_rhs, dtype=float).reshape(-1)
        blocks.append(sp.csc_matrix(eq_matrix))
        lows.append(eq_rhs)
        highs.append(eq_rhs)
        m_eq = eq_rhs.size
    if ineq_matrix is not None:
        blocks.append(sp.csc_matrix(ineq_matrix))
        lo = -np.inf * np.ones(blocks[-1].shape[0]) if ineq_lower is None else ineq_lower
        hi = np.inf * np.ones(blocks[-1].shape[0]) if ineq_upper is None else ineq_upper
        lows.append(np.asarray(lo, dtype=float))
        highs.append(np.asarray(hi, dtype=float))
        m_in = blocks[-1].shape[0]
    if x_lower is not None or x_upper is not None:
        lo = -np.inf * np.ones(n) if x_lower is None else np.asarray(x_lower, dtype=float)
        hi = np.inf * np.ones(n) if x_upper is None else np.asarray(x_upper, dtype=float)
        finite = np.isfinite(lo) | np.isfinite(hi)
        if np.any(finite):
            idx = np.where(finite)[0]
            eye = sp.eye(n, format="csr")[idx]
            blocks.append(sp.csc_matrix(eye))
            lows.append(lo[idx])
            highs.append(hi[idx])
    if blocks:
        A = sp.vstack(blocks, format="csc")
        lower = np.concatenate(lows)
        upper = np.concatenate(highs)
    else:
        A = lower = upper = None
    result = solve_qp(hessian, gradient, A, lower, upper, options=options, x0=x0)
    y_eq = result.y[:m_eq]
    y_in = result.y[m_eq : m_eq + m_in]
    return result.x, y_eq, y_in, result
