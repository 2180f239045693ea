"""Gauss-Newton SQP over the transcribed problem.

Each iteration solves a convex QP built from the (constant) quadratic cost
Hessian and the current constraint linearizations, then backtracks on an l1
merit function.  The quadratic costs make the Gauss-Newton model exact in the
objective; a small diagonal floor keeps the subproblems strictly convex.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .qp import QpOptions, qp_solve, solve_qp  # noqa: F401  (qp_solve re-exported)


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 100
    kkt_tolerance: float = 1e-6
    constraint_tolerance: float = 1e-7
    armijo_factor: float = 1e-4
    backtrack_ratio: float = 0.5
    max_backtracks: int = 30
    hessian_regularization: float = 1e-9
    elastic_weight: float = 1e6
    qp: QpOptions = field(default_factory=QpOptions)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("kkt_tolerance", "constraint_tolerance", "hessian_regularization"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Solution:
    """Solver outcome.

    kkt_residual is the stationarity/complementarity residual scaled by
    max(1, |multipliers|_inf / 100): the same primal point must pass the test
    regardless of a positive rescaling of the cost.
    """

    x: np.ndarray
    status: str
    iterations: int
    kkt_residual: float
    constraint_violation: float
    solve_time_ms: float
    cost: float
    multipliers: np.ndarray
    merit_history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _kkt_scale(y: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(y), initial=0.0)) / 100.0)


def _interval_violation(values, lower, upper) -> np.ndarray:
    return np.maximum(lower - values, 0.0) + np.maximum(values - upper, 0.0)


def _evaluate(problem, x):
    f = problem.cost(x)
    g = problem.cost_grad(x)
    if problem.n_eq:
        c_eq = problem.eq(x)
        j_eq = problem.eq_jac(x)
    else:
        c_eq = np.zeros(0)
        j_eq = sp.csr_matrix((0, problem.dimension))
    if problem.n_ineq:
        v_in = problem.ineq(x)
        j_in = problem.ineq_jac(x)
    else:
        v_in = np.zeros(0)
        j_in = sp.csr_matrix((0, problem.dimension))
    return f, g, c_eq, j_eq, v_in, j_in


def _l1_infeasibility(problem, x) -> float:
    total = 0.0
    if problem.n_eq:
        total += float(np.sum(np.abs(problem.eq(x))))
    if problem.n_ineq:
        total += float(
            np.sum(_interval_violation(problem.ineq(x), problem.ineq_lower, problem.ineq_upper))
        )
    return total


def _elastic_qp(P, g, j_eq, c_eq, j_in, lo, hi, weight, options, n):
    """Relax the inequality rows with l1-penalized slacks and re-solve."""
    m_in = j_in.shape[0]
    if m_in == 0:
        return None
    eye = sp.eye(m_in, format="csc")
    A = sp.bmat(
        [
            [j_eq, None],
            [j_in, -eye],
            [j_in, eye],
            [None, eye],
        ],
        format="csc",
    )
    inf = np.inf * np.ones(m_in)
    lower = np.concatenate([-c_eq, -inf, lo, np.zeros(m_in)])
    upper = np.concatenate([-c_eq, hi, inf, inf])
    P_aug = sp.block_diag([P, 1e-8 * sp.eye(m_in)], format="csc")
    g_aug = np.concatenate([g, weight * np.ones(m_in)])
    res = solve_qp(P_aug, g_aug, A, lower, upper, options=options)
    if res.status != "solved":
        return None
    m_eq = c_eq.size
    y_eq = res.y[:m_eq]
    y_in = res.y[m_eq : m_eq + m_in] + res.y[m_eq + m_in : m_eq + 2 * m_in]
    return res.x[:n], np.concatenate([y_eq, y_in])


def solve(problem, warm_start, options: SolverOptions | None = None, y0=None) -> Solution:
    """Run the SQP iteration from the given starting point.

    y0 optionally seeds the multipliers (e.g. from the previous solve of a
    structurally identical problem); they only shape the first subproblem.
    """
    opts = options or SolverOptions()
    x = np.array(warm_start, dtype=float).reshape(-1)
    if x.size != problem.dimension:
        raise ValueError(
            f"warm start has {x.size} entries, problem has {problem.dimension}"
        )
    t_start = time.perf_counter()
    m_eq = problem.n_eq
    m_in = problem.n_ineq
    if y0 is not None and np.asarray(y0).size == m_eq + m_in:
        y = np.array(y0, dtype=float).reshape(-1)
    else:
        y = np.zeros(m_eq + m_in)
    hess = sp.csc_matrix(problem.cost_hess())
    P = hess + opts.hessian_regularization * sp.eye(problem.dimension, format="csc")
    lo = problem.ineq_lower if m_in else np.zeros(0)
    hi = problem.ineq_upper if m_in else np.zeros(0)

    status = "max_iterations"
    iterations = 0
    kkt = np.inf
    viol = np.inf
    cost_value = np.inf
    nu = 1.0
    merit_history: list = []
    best = None  # (phase, merit, x, y, kkt, viol, cost)
    qp_x0 = None
    qp_scaling = None
    # Subproblems solved while far from the optimum only need a direction;
    # tight tolerances and the active-set polish are reserved for the tail.
    # One subproblem never deserves a long first-order grind: a capped,
    # slightly inexact step still makes progress under the merit test.
    qp_fine = replace(opts.qp, max_iterations=min(opts.qp.max_iterations, 500))
    qp_coarse = replace(qp_fine, eps_abs=3e-4, eps_rel=3e-4, polish=False)
    near_tail = False
    last_step = np.inf
    retried_exact = False
    qp_rho = None
    elastic_stall = 0
    viol_at_elastic = None

    for it in range(opts.max_iterations + 1):
        f, g, c_eq, j_eq, v_in, j_in = _evaluate(problem, x)
        finite = (
            np.isfinite(f)
            and np.all(np.isfinite(g))
            and np.all(np.isfinite(c_eq))
            and np.all(np.isfinite(v_in))
        )
        if not finite:
            status = "numerical_failure"
            break
        viol_eq = float(np.max(np.abs(c_eq), initial=0.0))
        in_gap = _interval_violation(v_in, lo, hi) if m_in else np.zeros(0)
        viol = max(viol_eq, float(np.max(in_gap, initial=0.0)))
        cost_value = f
        grad_lagrangian = g + j_eq.T @ y[:m_eq] + j_in.T @ y[m_eq:]
        stationarity = float(np.max(np.abs(grad_lagrangian), initial=0.0))
        if m_in:
            y_in = y[m_eq:]
            slack_hi = np.where(np.isfinite(hi), hi - v_in, np.inf)
            slack_lo = np.where(np.isfinite(lo), v_in - lo, np.inf)
            slack = np.where(y_in > 0, slack_hi, np.where(y_in < 0, slack_lo, 0.0))
            comp = float(np.max(np.minimum(np.abs(y_in), np.maximum(slack, 0.0)), initial=0.0))
        else:
            comp = 0.0
        kkt = max(stationarity, comp) / _kkt_scale(y)
        iterations = it

        phase = 0 if viol <= opts.constraint_tolerance else 1
        key = (phase, viol if phase else f)
        if best is None or key < best[0]:
            best = (key, x.copy(), y.copy(), kkt, viol, f)

        if kkt <= opts.kkt_tolerance and viol <= opts.constraint_tolerance:
            status = "converged"
            break
        if it == opts.max_iterations:
            break

        near_tail = near_tail or last_step <= 3e-2 or kkt <= 1e2 * opts.kkt_tolerance
        if m_eq or m_in:
            rows = ([j_eq] if m_eq else []) + ([j_in] if m_in else [])
            A = sp.vstack(rows, format="csc") if len(rows) > 1 else rows[0].tocsc()
            lower = np.concatenate(
                ([-c_eq] if m_eq else []) + ([lo - v_in] if m_in else [])
            )
            upper = np.concatenate(
                ([-c_eq] if m_eq else []) + ([hi - v_in] if m_in else [])
            )
        else:
            A = lower = upper = None
        qp_res = solve_qp(
            P, g, A, lower, upper,
            options=qp_fine if near_tail else qp_coarse,
            x0=qp_x0, y0=y, scaling=qp_scaling, rho0=qp_rho,
        )
        if qp_scaling is None:
            qp_scaling = qp_res.scaling
        qp_rho = qp_res.rho_final
        if qp_res.status == "primal_infeasible":
            elastic = _elastic_qp(
                P, g, j_eq, c_eq, j_in, lo - v_in, hi - v_in,
                opts.elastic_weight, opts.qp, problem.dimension,
            )
            if elastic is None:
                status = "infeasible"
                break
            # Repeated elastic activations without feasibility progress mean
            # the constraints themselves are inconsistent.
            if viol_at_elastic is not None and viol >= 0.9 * viol_at_elastic:
                elastic_stall += 1
                if elastic_stall >= 2:
                    status = "infeasible"
                    break
            else:
                elastic_stall = 0
            viol_at_elastic = viol
            d, y_new = elastic
        elif qp_res.status == "dual_infeasible":
            status = "numerical_failure"
            break
        else:
            d = qp_res.x
            y_new = qp_res.y
        if not np.all(np.isfinite(d)):
            status = "numerical_failure"
            break

        step_norm = float(np.max(np.abs(d), initial=0.0))
        if step_norm <= 1e-14:
            y = y_new
            qp_x0 = d
            continue

        nu = max(nu, 1.5 * float(np.max(np.abs(y_new), initial=0.0)) + 1e-6)
        infeas0 = float(np.sum(np.abs(c_eq))) + float(np.sum(in_gap))
        merit0 = f + nu * infeas0
        descent = float(g @ d) - nu * infeas0
        alpha = 1.0
        accepted = False
        merit_try = merit0
        for _ in range(opts.max_backtracks):
            x_try = x + alpha * d
            f_try = problem.cost(x_try)
            infeas_try = _l1_infeasibility(problem, x_try)
            merit_try = f_try + nu * infeas_try
            if np.isfinite(merit_try) and merit_try <= merit0 + opts.armijo_factor * alpha * min(
                descent, 0.0
            ):
                accepted = True
                break
            alpha *= opts.backtrack_ratio
        merit_history.append((merit0, merit_try if accepted else merit0, nu))
        if not accepted and qp_res.status != "solved" and not retried_exact:
            # The rejected direction came from an iteration-capped subproblem;
            # pay for one exact solve before giving up on this iterate.
            retried_exact = True
            qp_res = solve_qp(
                P, g, A, lower, upper,
                options=replace(opts.qp, max_iterations=20000),
                y0=y, scaling=qp_scaling,
            )
            if qp_res.solved and np.all(np.isfinite(qp_res.x)):
                d = qp_res.x
                y_new = qp_res.y
                step_norm = float(np.max(np.abs(d), initial=0.0))
                nu = max(nu, 1.5 * float(np.max(np.abs(y_new), initial=0.0)) + 1e-6)
                merit0 = f + nu * infeas0
                descent = float(g @ d) - nu * infeas0
                alpha = 1.0
                for _ in range(opts.max_backtracks):
                    x_try = x + alpha * d
                    merit_try = problem.cost(x_try) + nu * _l1_infeasibility(problem, x_try)
                    if np.isfinite(merit_try) and merit_try <= merit0 + opts.armijo_factor * alpha * min(descent, 0.0):
                        accepted = True
                        break
                    alpha *= opts.backtrack_ratio
        if not accepted:
            # No merit progress along the QP direction; adopt the multipliers
            # and let the final KKT test decide.
            y = y_new
            f, g, c_eq, j_eq, v_in, j_in = _evaluate(problem, x)
            grad_lagrangian = g + j_eq.T @ y[:m_eq] + j_in.T @ y[m_eq:]
            kkt = float(np.max(np.abs(grad_lagrangian), initial=0.0)) / _kkt_scale(y)
            iterations = it + 1
            if kkt <= opts.kkt_tolerance and viol <= opts.constraint_tolerance:
                status = "converged"
            break
        x_old = x
        x = x + alpha * d
        y = y_new
        qp_x0 = None if alpha == 1.0 else d * (1.0 - alpha)
        # A small step that stopped shrinking marks a period-2 cycle between
        # two active-set candidates; their midpoint cancels the alternating
        # component.  Jump only when it strictly improves stationarity.
        if (
            alpha == 1.0
            and step_norm <= 1e-3
            and step_norm > 0.5 * last_step
            and viol <= opts.constraint_tolerance
        ):
            x_mid = 0.5 * (x + x_old)
            g_mid = problem.cost_grad(x_mid)
            stat_mid = g_mid + problem.eq_jac(x_mid).T @ y[:m_eq] if m_eq else g_mid
            if m_in:
                stat_mid = stat_mid + problem.ineq_jac(x_mid).T @ y[m_eq:]
            g_new = problem.cost_grad(x)
            stat_new = g_new + problem.eq_jac(x).T @ y[:m_eq] if m_eq else g_new
            if m_in:
                stat_new = stat_new + problem.ineq_jac(x).T @ y[m_eq:]
            if float(np.max(np.abs(stat_mid))) < float(np.max(np.abs(stat_new))):
                x = x_mid
        last_step = alpha * step_norm

    if status != "converged" and best is not None:
        _, x_best, y_best, kkt_best, viol_best, f_best = best
        x, y, kkt, viol, cost_value = x_best, y_best, kkt_best, viol_best, f_best
    elapsed_ms = (time.perf_counter() - t_start) * 1e3
    return Solution(
        x=x,
        status=status,
        iterations=iterations,
        kkt_residual=kkt,
        constraint_violation=viol,
        solve_time_ms=elapsed_ms,
        cost=cost_value,
        multipliers=y,
        merit_history=merit_history,
    )


@dataclass
class DerivativeReport:
    max_relative_error: float
    worst_block: str
    worst_row: int
    worst_col: int
    gradient_error: float
    eq_error: float
    ineq_error: float

    def __str__(self):
        return (
            f"max rel error {self.max_relative_error:.3e} in {self.worst_block}"
            f"[{self.worst_row}, {self.worst_col}] "
            f"(grad {self.gradient_error:.2e}, eq {self.eq_error:.2e}, "
            f"ineq {self.ineq_error:.2e})"
        )


def _rel_err(analytic, estimate) -> float:
    return abs(analytic - estimate) / max(1.0, abs(analytic), abs(estimate))


def _color_columns(pattern_rows, pattern_cols, n_cols):
    """Greedy column grouping: columns in one group share no constraint row."""
    order = np.argsort(pattern_cols, kind="stable")
    sorted_cols = pattern_cols[order]
    sorted_rows = pattern_rows[order]
    boundaries = np.searchsorted(sorted_cols, np.arange(n_cols + 1))
    col_rows = [sorted_rows[boundaries[c] : boundaries[c + 1]] for c in range(n_cols)]
    groups = []
    group_masks = []
    n_rows = int(pattern_rows.max()) + 1 if pattern_rows.size else 1
    for c in range(n_cols):
        rows = col_rows[c]
        placed = False
        for g, mask in enumerate(group_masks):
            if not mask[rows].any():
                groups[g].append(c)
                mask[rows] = True
                placed = True
                break
        if not placed:
            mask = np.zeros(n_rows, dtype=bool)
            mask[rows] = True
            groups.append([c])
            group_masks.append(mask)
    return groups, col_rows


def _fd_jacobian_check(fun, jac_matrix, pattern, x, h, m_rows):
    """Compare an analytic sparse Jacobian against grouped central differences.

    Within each probe, rows claimed by exactly one perturbed column estimate
    that column's entries; rows claimed by no column must stay zero, which
    catches entries missing from the declared sparsity.
    """
    rows_pat, cols_pat = pattern
    n = x.size
    dense_cols = jac_matrix.tocsc()
    groups, col_rows = _color_columns(np.asarray(rows_pat), np.asarray(cols_pat), n)
    worst = (0.0, -1, -1)
    for group in groups:
        direction = np.zeros(n)
        direction[group] = 1.0
        delta = (fun(x + h * direction) - fun(x - h * direction)) / (2.0 * h)
        claimed = np.zeros(m_rows, dtype=bool)
        for c in group:
            rows = col_rows[c]
            claimed[rows] = True
            col = dense_cols[:, c].toarray().ravel()
            for r in rows:
                err = _rel_err(col[r], delta[r])
                if err > worst[0]:
                    worst = (err, int(r), int(c))
        stray = np.abs(np.where(claimed, 0.0, delta))
        r = int(np.argmax(stray)) if stray.size else 0
        if stray.size and stray[r] > worst[0]:
            # A nonzero outside the declared pattern of every probed column.
            worst = (float(stray[r]), r, int(group[0]))
    return worst


def check_derivatives(problem, point, fd_step: float = 1e-6) -> DerivativeReport:
    """Central-difference audit of the gradient and both constraint Jacobians."""
    if not fd_step > 0.0:
        raise ValueError("fd_step must be positive")
    x = np.array(point, dtype=float).reshape(-1)
    h = fd_step
    g = problem.cost_grad(x)
    worst = (0.0, "cost_grad", -1, -1)
    grad_worst = 0.0
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = 1.0
        fd = (problem.cost(x + h * e) - problem.cost(x - h * e)) / (2.0 * h)
        err = _rel_err(g[i], fd)
        grad_worst = max(grad_worst, err)
        if err > worst[0]:
            worst = (err, "cost_grad", 0, i)

    eq_worst = 0.0
    if problem.n_eq:
        pattern = problem.eq_pattern
        if pattern is None:
            coo = problem.eq_jac(x).tocoo()
            pattern = (coo.row, coo.col)
        err, r, c = _fd_jacobian_check(
            problem.eq, problem.eq_jac(x), pattern, x, h, problem.n_eq
        )
        eq_worst = err
        if err > worst[0]:
            worst = (err, "eq_jac", r, c)

    ineq_worst = 0.0
    if problem.n_ineq:
        pattern = problem.ineq_pattern
        if pattern is None:
            coo = problem.ineq_jac(x).tocoo()
            pattern = (coo.row, coo.col)
        err, r, c = _fd_jacobian_check(
            problem.ineq, problem.ineq_jac(x), pattern, x, h, problem.n_ineq
        )
        ineq_worst = err
        if err > worst[0]:
            worst = (err, "ineq_jac", r, c)

    return DerivativeReport(
        max_relative_error=worst[0],
        worst_block=worst[1],
        worst_row=worst[2],
        worst_col=worst[3],
        gradient_error=grad_worst,
        eq_error=eq_worst,
        ineq_error=ineq_worst,
    )
