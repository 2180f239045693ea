"""Multiple-shooting transcription of the centroidal control problem.

Decision variables per knot k in [0, N]: CoM position, 6-vector momentum and
one location per contact; per knot k in [0, N-1]: corner forces and one
sliding velocity per contact.  Equality constraints are the explicit-Euler
defects between consecutive knots plus a pin of knot 0 to the measured state.
Inequalities are friction-pyramid rows on every corner force and box rows
keeping each contact near its nominal location.  All first derivatives are
analytic and sparse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .model import (
    CentroidalState,
    PhysicalParams,
    _as_vector,
    check_rotation,
    euler_step_batch,
    skew_batch,
)
from .plan import ContactPlan


def _as_diag3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size == 1:
        arr = np.full(3, arr[0])
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a scalar or 3 diagonal entries")
    if np.any(arr <= 0.0):
        raise ValueError(f"{name} diagonal entries must be positive, got {arr}")
    return arr


@dataclass(frozen=True)
class Weights:
    """Diagonal weights of the four cost terms (positive definite)."""

    force_reg: np.ndarray = 0.1
    force_rate: np.ndarray = 0.01
    ang_momentum: np.ndarray = 10.0
    com_tracking: np.ndarray = 100.0
    contact_reg: np.ndarray = 1000.0

    def __post_init__(self):
        for name in ("force_reg", "force_rate", "ang_momentum", "com_tracking", "contact_reg"):
            object.__setattr__(self, name, _as_diag3(getattr(self, name), name))


@dataclass(frozen=True)
class FrictionPyramid:
    """Half-space rows A (R^T f) <= b: four tangential faces plus normal bounds."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape != (6, 3) or b.shape != (6,):
            raise ValueError("pyramid must have a 6x3 matrix and a 6-vector of bounds")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    def violation(self, force_world, rotation) -> float:
        f_local = np.asarray(rotation, dtype=float).T @ _as_vector(force_world, 3, "force")
        return float(np.max(self.A @ f_local - self.b))

    def satisfied(self, force_world, rotation, tol: float = 0.0) -> bool:
        return self.violation(force_world, rotation) <= tol


def friction_pyramid(mu: float, f_min: float, f_max: float) -> FrictionPyramid:
    """Inner pyramid approximation of the friction cone with normal-force bounds.

    Tangential faces use the conservative mu/sqrt(2) factor; the normal
    component is confined to [f_min, f_max].
    """
    if not mu > 0.0:
        raise ValueError(f"friction coefficient must be positive, got {mu}")
    if not (0.0 <= f_min < f_max):
        raise ValueError(f"need 0 <= f_min < f_max, got [{f_min}, {f_max}]")
    c = mu / np.sqrt(2.0)
    A = np.array(
        [
            [1.0, 0.0, -c],
            [-1.0, 0.0, -c],
            [0.0, 1.0, -c],
            [0.0, -1.0, -c],
            [0.0, 0.0, -1.0],
            [0.0, 0.0, 1.0],
        ]
    )
    b = np.array([0.0, 0.0, 0.0, 0.0, -f_min, f_max])
    return FrictionPyramid(A, b)


@dataclass(frozen=True)
class ContactBox:
    """Rectangular feasibility region around the nominal contact, contact frame."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = _as_vector(self.lower, 3, "lower")
        upper = _as_vector(self.upper, 3, "upper")
        if np.any(lower > upper):
            raise ValueError(f"box lower {lower} exceeds upper {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @staticmethod
    def planar(half_x: float, half_y: float) -> "ContactBox":
        """Symmetric x/y bounds with the z offset pinned to the contact plane."""
        return ContactBox((-half_x, -half_y, 0.0), (half_x, half_y, 0.0))

    def contains(self, residual, tol: float = 0.0) -> bool:
        r = _as_vector(residual, 3, "residual")
        return bool(np.all(r >= self.lower - tol) and np.all(r <= self.upper + tol))

    def clamp_position(self, position, nominal, rotation) -> np.ndarray:
        """Nearest position (in the contact frame) whose offset lies in the box."""
        R = np.asarray(rotation, dtype=float)
        residual = R.T @ (_as_vector(nominal, 3, "nominal") - _as_vector(position, 3, "position"))
        clipped = np.clip(residual, self.lower, self.upper)
        return np.asarray(nominal, dtype=float) - R @ clipped


def contact_box_violation(position, nominal, rotation, box: ContactBox) -> np.ndarray:
    """Offset R^T (nominal - position); feasible iff within [box.lower, box.upper]."""
    R = check_rotation(rotation)
    return R.T @ (_as_vector(nominal, 3, "nominal") - _as_vector(position, 3, "position"))


def force_regularization_cost(corner_forces, weight) -> float:
    """Weighted squared deviation of each corner force from the corner average."""
    forces = np.asarray(corner_forces, dtype=float).reshape(-1, 3)
    lam = _as_diag3(weight, "weight")
    deviation = forces.mean(axis=0) - forces
    return float(0.5 * np.sum(deviation * deviation * lam))


def force_rate_cost(force_k, force_next, period: float, weight) -> float:
    """Forward-difference force-rate penalty over one sampling period."""
    if not period > 0.0:
        raise ValueError(f"period must be positive, got {period}")
    lam = _as_diag3(weight, "weight")
    rate = (_as_vector(force_next, 3, "force_next") - _as_vector(force_k, 3, "force_k")) / period
    return float(0.5 * np.sum(rate * rate * lam))


def centroidal_tracking_cost(
    state: CentroidalState, nominal_ang_momentum, nominal_com, ang_weight, com_weight
) -> float:
    """Tracking error of angular momentum and CoM position against the references."""
    lam_h = _as_diag3(ang_weight, "ang_weight")
    lam_c = _as_diag3(com_weight, "com_weight")
    e_h = _as_vector(nominal_ang_momentum, 3, "nominal_ang_momentum") - state.h_ang
    e_c = _as_vector(nominal_com, 3, "nominal_com") - state.p_com
    return float(0.5 * np.sum(e_h * e_h * lam_h) + 0.5 * np.sum(e_c * e_c * lam_c))


def contact_regularization_cost(position, nominal, weight) -> float:
    """Weighted squared distance of a contact location from its nominal spot."""
    lam = _as_diag3(weight, "weight")
    e = _as_vector(nominal, 3, "nominal") - _as_vector(position, 3, "position")
    return float(0.5 * np.sum(e * e * lam))


class DecisionLayout:
    """Flat index map of the decision vector.

    States knot-major first ([com, momentum, contact positions] per knot),
    then controls knot-major ([corner forces per contact, contact
    velocities] per knot).
    """

    def __init__(self, n_knots: int, corner_counts: Sequence[int]):
        if n_knots < 1:
            raise ValueError(f"need at least one step, got N={n_knots}")
        if not corner_counts:
            raise ValueError("need at least one contact")
        self.n_knots = int(n_knots)
        self.corner_counts = tuple(int(c) for c in corner_counts)
        if any(c < 1 for c in self.corner_counts):
            raise ValueError(f"corner counts must be >= 1, got {self.corner_counts}")
        self.n_contacts = len(self.corner_counts)
        self.state_dim = 9 + 3 * self.n_contacts
        self.control_dim = 3 * sum(self.corner_counts) + 3 * self.n_contacts
        self.n_state_vars = (self.n_knots + 1) * self.state_dim
        self.size = self.n_state_vars + self.n_knots * self.control_dim
        self._force_offsets = np.concatenate([[0], 3 * np.cumsum(self.corner_counts)])
        self._vel_offset = int(self._force_offsets[-1])

    def state_base(self, k: int) -> int:
        return k * self.state_dim

    def control_base(self, k: int) -> int:
        return self.n_state_vars + k * self.control_dim

    def com_slice(self, k: int) -> slice:
        base = self.state_base(k)
        return slice(base, base + 3)

    def momentum_slice(self, k: int) -> slice:
        base = self.state_base(k) + 3
        return slice(base, base + 6)

    def contact_position_slice(self, k: int, i: int) -> slice:
        base = self.state_base(k) + 9 + 3 * i
        return slice(base, base + 3)

    def force_slice(self, k: int, i: int, j: int) -> slice:
        base = self.control_base(k) + int(self._force_offsets[i]) + 3 * j
        return slice(base, base + 3)

    def contact_velocity_slice(self, k: int, i: int) -> slice:
        base = self.control_base(k) + self._vel_offset + 3 * i
        return slice(base, base + 3)

    def state_arrays(self, x: np.ndarray):
        """(com (N+1,3), momentum (N+1,6), contact positions (N+1,n_c,3))."""
        states = x[: self.n_state_vars].reshape(self.n_knots + 1, self.state_dim)
        com = states[:, 0:3]
        momentum = states[:, 3:9]
        contacts = np.ascontiguousarray(states[:, 9:]).reshape(
            self.n_knots + 1, self.n_contacts, 3
        )
        return com, momentum, contacts

    def control_arrays(self, x: np.ndarray):
        """(forces: list of (N, n_v_i, 3), velocities (N, n_c, 3))."""
        controls = x[self.n_state_vars :].reshape(self.n_knots, self.control_dim)
        forces = []
        for i in range(self.n_contacts):
            lo, hi = int(self._force_offsets[i]), int(self._force_offsets[i + 1])
            forces.append(
                np.ascontiguousarray(controls[:, lo:hi]).reshape(
                    self.n_knots, self.corner_counts[i], 3
                )
            )
        velocities = np.ascontiguousarray(controls[:, self._vel_offset :]).reshape(
            self.n_knots, self.n_contacts, 3
        )
        return forces, velocities


@dataclass
class NlpProblem:
    """Callbacks and bounds of one transcribed problem.

    Inequalities are interval constraints lower <= ineq(x) <= upper; equality
    constraints are eq(x) = 0.  Jacobian callbacks return scipy CSR matrices
    whose sparsity never changes between evaluations; the (row, col) patterns
    are exposed for structure-aware finite differencing.
    """

    dimension: int
    cost: Callable[[np.ndarray], float]
    cost_grad: Callable[[np.ndarray], np.ndarray]
    cost_hess: Callable[[], sp.spmatrix]
    n_eq: int = 0
    eq: Callable[[np.ndarray], np.ndarray] | None = None
    eq_jac: Callable[[np.ndarray], sp.spmatrix] | None = None
    eq_pattern: tuple | None = None
    n_ineq: int = 0
    ineq: Callable[[np.ndarray], np.ndarray] | None = None
    ineq_jac: Callable[[np.ndarray], sp.spmatrix] | None = None
    ineq_pattern: tuple | None = None
    ineq_lower: np.ndarray | None = None
    ineq_upper: np.ndarray | None = None
    x_lower: np.ndarray | None = None
    x_upper: np.ndarray | None = None

    def constraint_violation(self, x: np.ndarray) -> float:
        """Max-norm violation of equalities, inequality intervals and bounds."""
        worst = 0.0
        if self.n_eq:
            worst = max(worst, float(np.max(np.abs(self.eq(x)))))
        if self.n_ineq:
            v = self.ineq(x)
            worst = max(worst, float(np.max(np.maximum(self.ineq_lower - v, 0.0))))
            worst = max(worst, float(np.max(np.maximum(v - self.ineq_upper, 0.0))))
        if self.x_lower is not None:
            worst = max(worst, float(np.max(np.maximum(self.x_lower - x, 0.0))))
        if self.x_upper is not None:
            worst = max(worst, float(np.max(np.maximum(x - self.x_upper, 0.0))))
        return worst


def _quadratic_cost_terms(
    layout: DecisionLayout,
    weights: Weights,
    nominal_com_samples: np.ndarray,
    nominal_contacts: np.ndarray,
    nominal_ang_momentum: np.ndarray,
    period: float,
):
    """Sparse Hessian, linear term and constant of the summed quadratic costs."""
    rows, cols, vals = [], [], []
    n = layout.size
    c = np.zeros(n)
    constant = 0.0
    n_knots = layout.n_knots

    def add_diag(sl: slice, diag: np.ndarray):
        idx = np.arange(sl.start, sl.stop)
        rows.append(idx)
        cols.append(idx)
        vals.append(diag)

    for k in range(n_knots + 1):
        sl = layout.com_slice(k)
        add_diag(sl, weights.com_tracking)
        c[sl] -= weights.com_tracking * nominal_com_samples[k]
        constant += 0.5 * float(np.sum(weights.com_tracking * nominal_com_samples[k] ** 2))
        mom = layout.momentum_slice(k)
        ang = slice(mom.start + 3, mom.stop)
        add_diag(ang, weights.ang_momentum)
        c[ang] -= weights.ang_momentum * nominal_ang_momentum
        constant += 0.5 * float(np.sum(weights.ang_momentum * nominal_ang_momentum**2))
        for i in range(layout.n_contacts):
            sl = layout.contact_position_slice(k, i)
            add_diag(sl, weights.contact_reg)
            c[sl] -= weights.contact_reg * nominal_contacts[i]
            constant += 0.5 * float(np.sum(weights.contact_reg * nominal_contacts[i] ** 2))

    # Corner-force deviation from the per-contact average: (I - 1/nv 11^T) x Lambda.
    for i, nv in enumerate(layout.corner_counts):
        if nv < 2:
            continue
        centering = np.eye(nv) - np.full((nv, nv), 1.0 / nv)
        for k in range(n_knots):
            base = layout.force_slice(k, i, 0).start
            for j in range(nv):
                for w in range(nv):
                    if centering[j, w] == 0.0:
                        continue
                    idx_r = base + 3 * j + np.arange(3)
                    idx_c = base + 3 * w + np.arange(3)
                    rows.append(idx_r)
                    cols.append(idx_c)
                    vals.append(centering[j, w] * weights.force_reg)

    rate = weights.force_rate / period**2
    for i, nv in enumerate(layout.corner_counts):
        for j in range(nv):
            for k in range(n_knots - 1):
                a = layout.force_slice(k, i, j)
                b = layout.force_slice(k + 1, i, j)
                ia = np.arange(a.start, a.stop)
                ib = np.arange(b.start, b.stop)
                add_diag(a, rate)
                add_diag(b, rate)
                rows.append(ia)
                cols.append(ib)
                vals.append(-rate)
                rows.append(ib)
                cols.append(ia)
                vals.append(-rate)

    hess = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    return hess, c, constant


def build_nlp(
    plan: ContactPlan,
    initial_state: CentroidalState,
    initial_contact_positions,
    schedule: np.ndarray,
    nominal_com_samples: np.ndarray,
    weights: Weights,
    pyramid: FrictionPyramid,
    box: ContactBox,
    n_knots: int,
    period: float,
    params: PhysicalParams,
    disturbance_profile: np.ndarray | None = None,
    nominal_ang_momentum=(0.0, 0.0, 0.0),
    friction_at_inactive: bool = True,
) -> NlpProblem:
    """Assemble the horizon problem for one control instant.

    schedule holds the gate per step (n_knots rows); nominal_com_samples
    covers all n_knots + 1 state knots.  The disturbance profile (one wrench
    per step) enters the momentum defects as a known input.  With
    friction_at_inactive False, pyramid rows are built only for steps whose
    contact bears load (their forces are gated out of the dynamics anyway).
    """
    n_c = plan.n_contacts
    layout = DecisionLayout(n_knots, [c.geometry.n_corners for c in plan.contacts])
    schedule = np.asarray(schedule)
    if schedule.shape != (n_knots, n_c):
        raise ValueError(
            f"schedule shape {schedule.shape} does not match ({n_knots}, {n_c})"
        )
    nominal_com_samples = np.asarray(nominal_com_samples, dtype=float)
    if nominal_com_samples.shape != (n_knots + 1, 3):
        raise ValueError(
            f"nominal CoM samples shape {nominal_com_samples.shape} does not match "
            f"({n_knots + 1}, 3)"
        )
    initial_contacts = np.asarray(initial_contact_positions, dtype=float)
    if initial_contacts.shape != (n_c, 3):
        raise ValueError(
            f"initial contact positions shape {initial_contacts.shape} != ({n_c}, 3)"
        )
    if disturbance_profile is None:
        wrench_profile = np.zeros((n_knots, 6))
    else:
        wrench_profile = np.asarray(disturbance_profile, dtype=float)
        if wrench_profile.shape != (n_knots, 6):
            raise ValueError(
                f"disturbance profile shape {wrench_profile.shape} != ({n_knots}, 6)"
            )

    gamma = schedule.astype(float)
    rotations = np.array([c.orientation for c in plan.contacts])
    corner_offsets = [c.geometry.offsets_matrix() for c in plan.contacts]
    nominal_contacts = np.array([c.nominal_position for c in plan.contacts])
    mass, gravity = params.mass, params.gravity
    sd = layout.state_dim
    m_eq = sd + n_knots * sd
    pin_target = np.concatenate(
        [initial_state.p_com, initial_state.momentum, initial_contacts.ravel()]
    )

    hess, c_lin, c0 = _quadratic_cost_terms(
        layout,
        weights,
        nominal_com_samples,
        nominal_contacts,
        _as_vector(nominal_ang_momentum, 3, "nominal_ang_momentum"),
        period,
    )

    def cost(x: np.ndarray) -> float:
        return float(0.5 * x @ (hess @ x) + c_lin @ x + c0)

    def cost_grad(x: np.ndarray) -> np.ndarray:
        return hess @ x + c_lin

    def eq(x: np.ndarray) -> np.ndarray:
        com, momentum, contacts = layout.state_arrays(x)
        forces, velocities = layout.control_arrays(x)
        p_next, h_next, pc_next = euler_step_batch(
            com[:n_knots],
            momentum[:n_knots],
            contacts[:n_knots],
            forces,
            velocities,
            gamma,
            rotations,
            corner_offsets,
            mass,
            gravity,
            wrench_profile,
            period,
        )
        stepped = np.concatenate(
            [p_next, h_next, pc_next.reshape(n_knots, 3 * n_c)], axis=1
        )
        states = x[: layout.n_state_vars].reshape(n_knots + 1, sd)
        out = np.empty(m_eq)
        out[:sd] = states[0] - pin_target
        out[sd:] = (states[1:] - stepped).ravel()
        return out

    # Constant Jacobian entries (identity chains, gated velocity columns, the
    # gated linear-force columns) are laid out first; the bilinear entries of
    # the angular-momentum rows are appended and refreshed on every call.
    const_rows, const_cols, const_vals = [], [], []

    def put_diag(row0: int, col0: int, count: int, value):
        r = row0 + np.arange(count)
        cval = col0 + np.arange(count)
        const_rows.append(r)
        const_cols.append(cval)
        const_vals.append(np.full(count, value) if np.isscalar(value) else value)

    put_diag(0, 0, sd, 1.0)
    ks = np.arange(n_knots)
    for k in range(n_knots):
        rb = sd + k * sd
        put_diag(rb, layout.com_slice(k + 1).start, 3, 1.0)
        put_diag(rb, layout.com_slice(k).start, 3, -1.0)
        put_diag(rb, layout.momentum_slice(k).start, 3, -period / mass)
        put_diag(rb + 3, layout.momentum_slice(k + 1).start, 6, 1.0)
        put_diag(rb + 3, layout.momentum_slice(k).start, 6, -1.0)
        for i in range(n_c):
            row = rb + 9 + 3 * i
            put_diag(row, layout.contact_position_slice(k + 1, i).start, 3, 1.0)
            put_diag(row, layout.contact_position_slice(k, i).start, 3, -1.0)
            put_diag(
                row,
                layout.contact_velocity_slice(k, i).start,
                3,
                -period * (1.0 - gamma[k, i]),
            )
            for j in range(layout.corner_counts[i]):
                put_diag(
                    rb + 3, layout.force_slice(k, i, j).start, 3, -period * gamma[k, i]
                )

    var_rows, var_cols = [], []
    grid = np.indices((3, 3))
    for i in range(n_c):
        nv = layout.corner_counts[i]
        # d(ang defect)/d f_{i,j}: 9 entries per (k, j), C-ordered (k, j, a, b).
        row_base = sd + ks * sd + 6
        col_base = (
            layout.n_state_vars
            + ks * layout.control_dim
            + int(layout._force_offsets[i])
        )
        r = row_base[:, None, None, None] + np.zeros((1, nv, 1, 1), dtype=int) + grid[0]
        cmat = col_base[:, None, None, None] + 3 * np.arange(nv)[None, :, None, None] + grid[1]
        var_rows.append(r.ravel())
        var_cols.append(cmat.ravel())
    for i in range(n_c):
        # d(ang defect)/d p_{C_i}: 9 entries per k.
        row_base = sd + ks * sd + 6
        col_base = ks * sd + 9 + 3 * i
        r = row_base[:, None, None] + grid[0]
        cmat = col_base[:, None, None] + grid[1]
        var_rows.append(r.ravel())
        var_cols.append(cmat.ravel())
    # d(ang defect)/d p_com: 9 entries per k.
    row_base = sd + ks * sd + 6
    col_base = ks * sd
    var_rows.append((row_base[:, None, None] + grid[0]).ravel())
    var_cols.append((col_base[:, None, None] + grid[1]).ravel())

    jac_rows = np.concatenate(const_rows + var_rows)
    jac_cols = np.concatenate(const_cols + var_cols)
    const_data = np.concatenate(const_vals)
    n_var_entries = sum(seg.size for seg in var_rows)
    eq_pattern = (jac_rows, jac_cols)

    def eq_jac(x: np.ndarray) -> sp.spmatrix:
        com, _, contacts = layout.state_arrays(x)
        forces, _ = layout.control_arrays(x)
        segments = []
        total = np.zeros((n_knots, 3))
        for i in range(n_c):
            arms = (
                contacts[:n_knots, i, None, :]
                + (corner_offsets[i] @ rotations[i].T)[None, :, :]
                - com[:n_knots, None, :]
            )
            scale = (-period * gamma[:, i])[:, None, None, None]
            segments.append((scale * skew_batch(arms)).ravel())
        for i in range(n_c):
            fsum = forces[i].sum(axis=1)
            total += gamma[:, i : i + 1] * fsum
            scale = (period * gamma[:, i])[:, None, None]
            segments.append((scale * skew_batch(fsum)).ravel())
        segments.append((-period * skew_batch(total)).ravel())
        var_data = np.concatenate(segments)
        assert var_data.size == n_var_entries
        data = np.concatenate([const_data, var_data])
        return sp.coo_matrix((data, (jac_rows, jac_cols)), shape=(m_eq, layout.size)).tocsr()

    # Inequalities: friction rows per (step, contact, corner), then box rows
    # per (knot, contact).  The matrix and interval bounds are constant.
    in_rows, in_cols, in_vals = [], [], []
    lower_parts, upper_parts = [], []
    row = 0
    pyr_local = [pyramid.A @ rotations[i].T for i in range(n_c)]
    # A contact gated out over the entire horizon leaves its forces with no
    # dynamic or cost anchor: a flat optimal manifold whose boundary is the
    # cone apex.  Pin those dead variables to their exact optimum (zero) and
    # drop their vacuous pyramid rows.
    dead_contact = [not schedule[:, i].any() for i in range(n_c)]
    for k in range(n_knots):
        for i in range(n_c):
            if dead_contact[i] or not (friction_at_inactive or schedule[k, i]):
                continue
            for j in range(layout.corner_counts[i]):
                base = layout.force_slice(k, i, j).start
                in_rows.append(row + np.repeat(np.arange(6), 3))
                in_cols.append(base + np.tile(np.arange(3), 6))
                in_vals.append(pyr_local[i].ravel())
                lower_parts.append(np.full(6, -np.inf))
                upper_parts.append(pyramid.b)
                row += 6
    for i in range(n_c):
        if not dead_contact[i]:
            continue
        for k in range(n_knots):
            for j in range(layout.corner_counts[i]):
                base = layout.force_slice(k, i, j).start
                in_rows.append(row + np.arange(3))
                in_cols.append(base + np.arange(3))
                in_vals.append(np.ones(3))
                lower_parts.append(np.zeros(3))
                upper_parts.append(np.zeros(3))
                row += 3
    # While a contact has been gated on since knot 0, the defect chain pins
    # its whole position trajectory to the measured (already box-checked)
    # value; box rows there would only duplicate equalities, and the
    # redundant pairs admit arbitrary multiplier splits that first-order
    # methods never shake off.  Impose the box only from the first knot the
    # position can actually move to.
    movable = np.zeros(n_c, dtype=bool)
    for k in range(1, n_knots + 1):
        movable = movable | ~schedule[k - 1]
        for i in range(n_c):
            if not movable[i]:
                continue
            base = layout.contact_position_slice(k, i).start
            in_rows.append(row + np.repeat(np.arange(3), 3))
            in_cols.append(base + np.tile(np.arange(3), 3))
            in_vals.append(rotations[i].T.ravel())
            anchor = rotations[i].T @ nominal_contacts[i]
            lower_parts.append(anchor - box.upper)
            upper_parts.append(anchor - box.lower)
            row += 3
    m_ineq = row
    ineq_matrix = sp.coo_matrix(
        (np.concatenate(in_vals), (np.concatenate(in_rows), np.concatenate(in_cols))),
        shape=(m_ineq, layout.size),
    ).tocsr()
    ineq_lower = np.concatenate(lower_parts)
    ineq_upper = np.concatenate(upper_parts)
    in_coo = ineq_matrix.tocoo()

    def ineq(x: np.ndarray) -> np.ndarray:
        return ineq_matrix @ x

    def ineq_jac(x: np.ndarray) -> sp.spmatrix:
        return ineq_matrix

    return NlpProblem(
        dimension=layout.size,
        cost=cost,
        cost_grad=cost_grad,
        cost_hess=lambda: hess,
        n_eq=m_eq,
        eq=eq,
        eq_jac=eq_jac,
        eq_pattern=eq_pattern,
        n_ineq=m_ineq,
        ineq=ineq,
        ineq_jac=ineq_jac,
        ineq_pattern=(in_coo.row.copy(), in_coo.col.copy()),
        ineq_lower=ineq_lower,
        ineq_upper=ineq_upper,
    )
