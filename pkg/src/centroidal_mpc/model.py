"""Contact-gated centroidal dynamics and explicit Euler integration.

The state is the CoM position plus the aggregate linear/angular momentum taken
about the CoM in an inertially-oriented frame.  Contact wrenches are
represented by pure forces at the corners of each contact surface; a binary
gate per contact switches its forces in and out of the dynamics and freezes
the contact location while the contact bears load.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_GRAVITY = (0.0, 0.0, -9.81)

_ORTHONORMAL_TOL = 1e-9


def _as_vector(value, size: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have {size} components, got shape {np.shape(value)}")
    return arr


def _require_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def skew(v) -> np.ndarray:
    """Matrix S such that S @ u == np.cross(v, u)."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def skew_batch(v: np.ndarray) -> np.ndarray:
    """Skew matrices for a (K, 3) stack of vectors, returned as (K, 3, 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


@dataclass(frozen=True)
class PhysicalParams:
    """Plant constants: total mass, gravity vector, nominal CoM height."""

    mass: float
    gravity: np.ndarray = field(default=DEFAULT_GRAVITY)
    com_height_nominal: float = 0.6

    def __post_init__(self):
        object.__setattr__(self, "gravity", _as_vector(self.gravity, 3, "gravity"))
        if not (self.mass > 0.0):
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not np.linalg.norm(self.gravity) > 0.0:
            raise ValueError("gravity must be non-zero")
        _require_finite(self.gravity, "gravity")


@dataclass(frozen=True)
class CentroidalState:
    """CoM position, linear momentum and angular momentum about the CoM."""

    p_com: np.ndarray
    h_lin: np.ndarray
    h_ang: np.ndarray

    def __post_init__(self):
        for name in ("p_com", "h_lin", "h_ang"):
            vec = _as_vector(getattr(self, name), 3, name)
            _require_finite(vec, name)
            object.__setattr__(self, name, vec)

    @property
    def momentum(self) -> np.ndarray:
        """Stacked 6-vector (h_lin, h_ang)."""
        return np.concatenate([self.h_lin, self.h_ang])

    @staticmethod
    def zero(p_com=(0.0, 0.0, 0.0)) -> "CentroidalState":
        return CentroidalState(np.asarray(p_com, dtype=float), np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class ContactGeometry:
    """Corner offsets of one contact surface, expressed in the contact frame."""

    corner_offsets: tuple

    def __post_init__(self):
        offsets = tuple(_as_vector(c, 3, "corner offset") for c in self.corner_offsets)
        if len(offsets) < 1:
            raise ValueError("a contact needs at least one corner")
        object.__setattr__(self, "corner_offsets", offsets)

    @property
    def n_corners(self) -> int:
        return len(self.corner_offsets)

    def offsets_matrix(self) -> np.ndarray:
        return np.array(self.corner_offsets)

    @staticmethod
    def point() -> "ContactGeometry":
        return ContactGeometry((np.zeros(3),))

    @staticmethod
    def rectangle(length: float, width: float) -> "ContactGeometry":
        hx, hy = 0.5 * length, 0.5 * width
        return ContactGeometry(
            (
                np.array([hx, hy, 0.0]),
                np.array([hx, -hy, 0.0]),
                np.array([-hx, -hy, 0.0]),
                np.array([-hx, hy, 0.0]),
            )
        )


def check_rotation(matrix, name: str = "orientation") -> np.ndarray:
    R = np.asarray(matrix, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3, got {R.shape}")
    if np.abs(R.T @ R - np.eye(3)).max() > _ORTHONORMAL_TOL:
        raise ValueError(f"{name} is not orthonormal within {_ORTHONORMAL_TOL}")
    if abs(np.linalg.det(R) - 1.0) > _ORTHONORMAL_TOL:
        raise ValueError(f"{name} must have determinant +1")
    return R


@dataclass(frozen=True)
class ContactInstant:
    """Snapshot of one contact: pose, gate, corner forces and sliding velocity."""

    position: np.ndarray
    orientation: np.ndarray
    active: bool
    corner_forces: tuple
    corner_velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vector(self.position, 3, "position"))
        object.__setattr__(self, "orientation", check_rotation(self.orientation))
        forces = tuple(_as_vector(f, 3, "corner force") for f in self.corner_forces)
        object.__setattr__(self, "corner_forces", forces)
        object.__setattr__(
            self, "corner_velocity", _as_vector(self.corner_velocity, 3, "corner_velocity")
        )

    def forces_matrix(self) -> np.ndarray:
        return np.array(self.corner_forces)


@dataclass(frozen=True)
class ExternalWrench:
    """Measured disturbance: force plus torque taken about the CoM."""

    force: np.ndarray = field(default=(0.0, 0.0, 0.0))
    torque_about_com: np.ndarray = field(default=(0.0, 0.0, 0.0))

    def __post_init__(self):
        f = _require_finite(_as_vector(self.force, 3, "force"), "force")
        t = _require_finite(
            _as_vector(self.torque_about_com, 3, "torque_about_com"), "torque_about_com"
        )
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque_about_com", t)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque_about_com])

    @staticmethod
    def zero() -> "ExternalWrench":
        return ExternalWrench(np.zeros(3), np.zeros(3))


def momentum_rate_batch(
    p_com: np.ndarray,
    p_contacts: np.ndarray,
    forces: Sequence[np.ndarray],
    gamma: np.ndarray,
    rotations: np.ndarray,
    corner_offsets: Sequence[np.ndarray],
    mass: float,
    gravity: np.ndarray,
    wrench: np.ndarray,
) -> np.ndarray:
    """Gated momentum rate, batched over a leading knot axis.

    p_com (K, 3), p_contacts (K, n_c, 3), forces[i] (K, n_v_i, 3),
    gamma (K, n_c), rotations (n_c, 3, 3), corner_offsets[i] (n_v_i, 3),
    wrench (K, 6).  Returns (K, 6) stacked (linear, angular) rates.

    Accumulation is an explicit loop over contacts and corners so that the
    summation order is identical for any K; this keeps single-step rollouts
    bit-identical to batched evaluations of the same quantities.
    """
    k = p_com.shape[0]
    rate_lin = np.broadcast_to(mass * gravity, (k, 3)) + wrench[:, 0:3]
    rate_lin = np.ascontiguousarray(rate_lin)
    rate_ang = wrench[:, 3:6].copy()
    for i, force_i in enumerate(forces):
        offsets_world = corner_offsets[i] @ rotations[i].T
        gate = gamma[:, i : i + 1]
        for j in range(force_i.shape[1]):
            f = gate * force_i[:, j, :]
            arm = p_contacts[:, i, :] + offsets_world[j] - p_com
            rate_lin += f
            rate_ang += np.cross(arm, f)
    return np.concatenate([rate_lin, rate_ang], axis=1)


def euler_step_batch(
    p_com: np.ndarray,
    momentum: np.ndarray,
    p_contacts: np.ndarray,
    forces: Sequence[np.ndarray],
    contact_velocities: np.ndarray,
    gamma: np.ndarray,
    rotations: np.ndarray,
    corner_offsets: Sequence[np.ndarray],
    mass: float,
    gravity: np.ndarray,
    wrench: np.ndarray,
    dt: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One explicit Euler step of the gated dynamics, batched over knots.

    Returns (p_com_next (K,3), momentum_next (K,6), p_contacts_next (K,n_c,3)).
    Active contact positions are carried over bit-exactly.
    """
    rate = momentum_rate_batch(
        p_com, p_contacts, forces, gamma, rotations, corner_offsets, mass, gravity, wrench
    )
    momentum_next = momentum + dt * rate
    p_com_next = p_com + (dt / mass) * momentum[:, 0:3]
    moved = p_contacts + dt * ((1.0 - gamma)[..., None] * contact_velocities)
    p_contacts_next = np.where((gamma > 0.5)[..., None], p_contacts, moved)
    return p_com_next, momentum_next, p_contacts_next


def _batch_inputs(
    state: CentroidalState,
    contacts: Sequence[ContactInstant],
    geometries: Sequence[ContactGeometry],
):
    if len(contacts) != len(geometries):
        raise ValueError(
            f"got {len(contacts)} contacts but {len(geometries)} geometries"
        )
    forces = []
    for idx, (contact, geometry) in enumerate(zip(contacts, geometries)):
        if len(contact.corner_forces) != geometry.n_corners:
            raise ValueError(
                f"contact {idx}: {len(contact.corner_forces)} corner forces for "
                f"{geometry.n_corners} corners"
            )
        forces.append(contact.forces_matrix()[None, :, :])
    n_c = len(contacts)
    p_com = state.p_com[None, :]
    momentum = state.momentum[None, :]
    p_contacts = np.array([c.position for c in contacts]).reshape(1, n_c, 3)
    velocities = np.array([c.corner_velocity for c in contacts]).reshape(1, n_c, 3)
    gamma = np.array([[1.0 if c.active else 0.0 for c in contacts]])
    rotations = np.array([c.orientation for c in contacts]).reshape(n_c, 3, 3)
    offsets = [g.offsets_matrix() for g in geometries]
    return p_com, momentum, p_contacts, forces, velocities, gamma, rotations, offsets


def momentum_derivative(
    state: CentroidalState,
    contacts: Sequence[ContactInstant],
    geometries: Sequence[ContactGeometry],
    params: PhysicalParams,
    disturbance: ExternalWrench | None = None,
) -> np.ndarray:
    """Rate of change of the 6-vector momentum under gated contact forces.

    Forces of inactive contacts have exactly zero effect.  The disturbance
    wrench is added unchanged (its torque is taken about the CoM).
    """
    wrench = (disturbance or ExternalWrench.zero()).stacked()[None, :]
    p_com, _, p_contacts, forces, _, gamma, rotations, offsets = _batch_inputs(
        state, contacts, geometries
    )
    for idx, f in enumerate(forces):
        _require_finite(f, f"contact {idx} corner forces")
    rate = momentum_rate_batch(
        p_com, p_contacts, forces, gamma, rotations, offsets, params.mass, params.gravity, wrench
    )
    return rate[0]


def com_velocity(h_lin, params: PhysicalParams) -> np.ndarray:
    """CoM velocity from linear momentum: v = h_lin / m."""
    return _as_vector(h_lin, 3, "h_lin") / params.mass


def contact_position_derivative(active: bool, corner_velocity) -> np.ndarray:
    """Contact location rate (1 - gate) * v: frozen while the contact is active."""
    v = _as_vector(corner_velocity, 3, "corner_velocity")
    return np.zeros(3) if active else v.copy()


def integrate_step(
    state: CentroidalState,
    contacts: Sequence[ContactInstant],
    geometries: Sequence[ContactGeometry],
    params: PhysicalParams,
    disturbance: ExternalWrench | None = None,
    dt: float = 0.1,
) -> tuple[CentroidalState, list[np.ndarray]]:
    """One explicit Euler step; returns the new state and contact positions.

    The CoM moves with the pre-step linear momentum.  Positions of active
    contacts are returned bit-exactly unchanged.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    wrench = (disturbance or ExternalWrench.zero()).stacked()[None, :]
    p_com, momentum, p_contacts, forces, velocities, gamma, rotations, offsets = _batch_inputs(
        state, contacts, geometries
    )
    p_next, h_next, pc_next = euler_step_batch(
        p_com,
        momentum,
        p_contacts,
        forces,
        velocities,
        gamma,
        rotations,
        offsets,
        params.mass,
        params.gravity,
        wrench,
        dt,
    )
    if not (np.all(np.isfinite(p_next)) and np.all(np.isfinite(h_next))):
        raise ValueError("integration produced non-finite state")
    new_state = CentroidalState(p_next[0], h_next[0, 0:3], h_next[0, 3:6])
    return new_state, [pc_next[0, i].copy() for i in range(len(contacts))]
