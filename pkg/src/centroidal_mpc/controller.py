"""Receding-horizon controller around the transcribed problem.

Each control instant builds the horizon problem from the measured state and
the plan, solves it warm-started from the shifted previous solution, and
extracts the first control plus the optimized landing positions of upcoming
touchdowns.  The predicted trajectory is reconstructed by rolling the solved
controls through the same Euler step the plant uses, so prediction and plant
agree exactly when their inputs match.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import CentroidalState, ExternalWrench, PhysicalParams, euler_step_batch
from .plan import ContactPlan, horizon_schedule, nominal_com_trajectory
from .solver import Solution, SolverOptions, solve
from .transcription import (
    ContactBox,
    DecisionLayout,
    FrictionPyramid,
    Weights,
    build_nlp,
    friction_pyramid,
)

log = logging.getLogger("centroidal_mpc")


@dataclass(frozen=True)
class MpcOptions:
    """Horizon length and sampling period plus all weights and constraint bounds."""

    horizon_knots: int = 30
    period: float = 0.1
    weights: Weights = field(default_factory=Weights)
    friction_mu: float = 0.8
    normal_force_min: float = 0.0
    normal_force_max: float = 29.43
    box: ContactBox = field(default_factory=lambda: ContactBox.planar(0.15, 0.15))
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.horizon_knots < 2:
            raise ValueError("horizon needs at least 2 knots")
        if not self.period > 0.0:
            raise ValueError("period must be positive")

    def pyramid(self) -> FrictionPyramid:
        return friction_pyramid(self.friction_mu, self.normal_force_min, self.normal_force_max)


@dataclass
class MpcOutput:
    """First control and landing adjustments extracted from one solve."""

    forces: dict
    adjusted_contacts: dict
    predicted_com: np.ndarray
    predicted_momentum: np.ndarray
    predicted_contacts: np.ndarray
    schedule: np.ndarray
    solution: Solution
    degraded: bool


def layout_for(plan: ContactPlan, options: MpcOptions) -> DecisionLayout:
    return DecisionLayout(
        options.horizon_knots, [c.geometry.n_corners for c in plan.contacts]
    )


def cold_start(
    plan: ContactPlan,
    initial_state: CentroidalState,
    layout: DecisionLayout,
    options: MpcOptions,
    params: PhysicalParams,
    t0: float = 0.0,
) -> np.ndarray:
    """Nominal-CoM initialization: spline samples for the CoM knots, nominal
    positions for the contacts, zeros for momenta, forces and velocities."""
    spline = nominal_com_trajectory(plan, params)
    x = np.zeros(layout.size)
    for k in range(layout.n_knots + 1):
        x[layout.com_slice(k)] = spline.position(t0 + k * options.period)
        for i, contact in enumerate(plan.contacts):
            x[layout.contact_position_slice(k, i)] = contact.nominal_position
    return x


def shift_warm_start(previous, layout: DecisionLayout, steps: int = 1) -> np.ndarray:
    """Advance a solution by one knot; the final knot duplicates its predecessor."""
    x_prev = previous.x if isinstance(previous, Solution) else np.asarray(previous, dtype=float)
    if x_prev.size != layout.size:
        raise ValueError(
            f"warm start has {x_prev.size} entries, layout expects {layout.size}"
        )
    if steps != 1:
        raise ValueError("only single-knot shifts are supported")
    out = x_prev.copy()
    n_states = layout.n_state_vars
    states = out[:n_states].reshape(layout.n_knots + 1, layout.state_dim)
    states[:-1] = states[1:]
    controls = out[n_states:].reshape(layout.n_knots, layout.control_dim)
    controls[:-1] = controls[1:]
    return out


def _sanitize_forces(forces, schedule, pyramid: FrictionPyramid, rotations):
    """Zero gated-out forces and clamp the rest into the pyramid.

    Componentwise clamping in the contact frame: the normal force first, then
    each tangential component against the pyramid faces.  Feasible output for
    any input; solutions within tolerance move by at most their violation.
    """
    mu_eff = -pyramid.A[0, 2]
    f_min = -pyramid.b[4]
    f_max = pyramid.b[5]
    cleaned = []
    for i, f_i in enumerate(forces):
        local = np.einsum("ba,kjb->kja", rotations[i], f_i)
        local[:, :, 2] = np.clip(local[:, :, 2], f_min, f_max)
        cap = mu_eff * local[:, :, 2]
        local[:, :, 0] = np.clip(local[:, :, 0], -cap, cap)
        local[:, :, 1] = np.clip(local[:, :, 1], -cap, cap)
        world = np.einsum("ab,kjb->kja", rotations[i], local)
        world *= schedule[:, i, None, None]
        cleaned.append(world)
    return cleaned


def mpc_step(
    current_state: CentroidalState,
    current_contact_positions: dict,
    plan: ContactPlan,
    t: float,
    disturbance_estimate: ExternalWrench,
    previous: Solution | None,
    options: MpcOptions,
    params: PhysicalParams,
    nominal_spline=None,
    reset_multipliers: bool = False,
) -> MpcOutput:
    """One receding-horizon solve at time t.

    The measured disturbance is held constant over the prediction horizon.
    Contact positions at knot 0 are pinned to their measured values, so
    adjustment applies only to touchdowns ahead of the current instant.
    reset_multipliers drops the dual warm start; set it when the problem
    changed qualitatively since the previous cycle (a push appeared or
    vanished), where stale duals mislead more than they help.
    """
    n_knots = options.horizon_knots
    period = options.period
    layout = layout_for(plan, options)
    schedule = horizon_schedule(plan, t, n_knots, period, clamp_to_duration=True)
    spline = nominal_spline or nominal_com_trajectory(plan, params)
    nominal_samples = spline.sample(t + period * np.arange(n_knots + 1))
    wrench = disturbance_estimate.stacked()
    profile = np.tile(wrench, (n_knots, 1))
    measured = np.array(
        [current_contact_positions[c.contact_id] for c in plan.contacts], dtype=float
    )
    problem = build_nlp(
        plan,
        current_state,
        measured,
        schedule,
        nominal_samples,
        options.weights,
        options.pyramid(),
        options.box,
        n_knots,
        period,
        params,
        profile,
    )
    if previous is not None and previous.x.size == layout.size:
        warm = shift_warm_start(previous, layout)
        # duals from a solve that never converged mislead more than they help
        inherit = previous.converged and not reset_multipliers
        y0 = previous.multipliers if inherit else None
    else:
        warm = cold_start(plan, current_state, layout, options, params, t0=t)
        y0 = None
    solution = solve(problem, warm, options.solver, y0=y0)

    degraded = not solution.converged
    x_sol = solution.x
    if solution.status in ("infeasible", "numerical_failure") and previous is not None:
        # Hard failure: fall back to the previous solution advanced one knot.
        log.warning("solver returned %s at t=%.3f; reusing shifted solution",
                    solution.status, t)
        x_sol = shift_warm_start(previous, layout)

    rotations = np.array([c.orientation for c in plan.contacts])
    corner_offsets = [c.geometry.offsets_matrix() for c in plan.contacts]
    forces_raw, velocities = layout.control_arrays(x_sol)
    gamma = schedule.astype(float)
    forces = _sanitize_forces(forces_raw, gamma, options.pyramid(), rotations)

    p = current_state.p_com[None, :]
    h = current_state.momentum[None, :]
    pc = measured[None, :, :]
    predicted_com = np.empty((n_knots + 1, 3))
    predicted_momentum = np.empty((n_knots + 1, 6))
    predicted_contacts = np.empty((n_knots + 1, plan.n_contacts, 3))
    predicted_com[0] = p[0]
    predicted_momentum[0] = h[0]
    predicted_contacts[0] = pc[0]
    for k in range(n_knots):
        p, h, pc = euler_step_batch(
            p,
            h,
            pc,
            [f[k : k + 1] for f in forces],
            velocities[k : k + 1],
            gamma[k : k + 1],
            rotations,
            corner_offsets,
            params.mass,
            params.gravity,
            profile[k : k + 1],
            period,
        )
        predicted_com[k + 1] = p[0]
        predicted_momentum[k + 1] = h[0]
        predicted_contacts[k + 1] = pc[0]

    force_out = {
        c.contact_id: forces[i][0].copy() for i, c in enumerate(plan.contacts)
    }
    adjusted = {}
    _, _, contacts_sol = layout.state_arrays(x_sol)
    for i, contact in enumerate(plan.contacts):
        onsets = np.where(schedule[1:, i] & ~schedule[:-1, i])[0]
        if onsets.size == 0:
            continue
        k_land = int(onsets[0]) + 1
        landing = options.box.clamp_position(
            contacts_sol[k_land, i], contact.nominal_position, contact.orientation
        )
        adjusted[contact.contact_id] = landing
    return MpcOutput(
        forces=force_out,
        adjusted_contacts=adjusted,
        predicted_com=predicted_com,
        predicted_momentum=predicted_momentum,
        predicted_contacts=predicted_contacts,
        schedule=schedule,
        solution=solution,
        degraded=degraded,
    )
