"""Closed-loop plant, logging, metrics and CSV export.

The plant is the same gated centroidal model the controller predicts with,
integrated at a finer substep.  Gates are held constant over each control
period (sampled at its start); the true disturbance is applied per substep.
Adjusted touchdown positions are committed at contact onset, clamped into the
feasibility box as a hard guarantee.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .controller import MpcOutput, mpc_step
from .model import CentroidalState, ContactInstant, ExternalWrench, integrate_step
from .plan import nominal_com_trajectory
from .scenario import ScenarioConfig, parse_scenario  # noqa: F401  (re-export)

log = logging.getLogger("centroidal_mpc")


class SimulationDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class Touchdown:
    time: float
    contact_id: str
    committed: np.ndarray
    nominal: np.ndarray

    @property
    def adjustment(self) -> float:
        """Committed-to-nominal distance in the ground plane."""
        delta = self.committed[:2] - self.nominal[:2]
        return float(np.linalg.norm(delta))


@dataclass
class TrajectoryLog:
    """Uniformly timestamped run record: one row per control step plus one."""

    times: np.ndarray
    com: np.ndarray
    momentum: np.ndarray
    contact_positions: np.ndarray
    gamma: np.ndarray
    forces: list
    nominal_com: np.ndarray
    nominal_contacts: np.ndarray
    contact_ids: list
    corner_counts: list
    touchdowns: list
    statuses: list
    iterations: np.ndarray
    kkt_residuals: np.ndarray
    violations: np.ndarray
    degraded: np.ndarray
    solve_times_ms: np.ndarray
    predicted_ang: np.ndarray
    predicted_schedules: np.ndarray
    predicted_next: np.ndarray
    config_hash: str
    scenario_name: str

    @property
    def n_steps(self) -> int:
        return len(self.statuses)


@dataclass
class Metrics:
    """Run summary; adjustment stats are None when no touchdown occurred."""

    touchdown_count: int
    mean_adjustment_m: float | None
    max_adjustment_m: float | None
    solve_time_mean_ms: float
    solve_time_max_ms: float
    solve_time_p95_ms: float
    convergence_rate: float
    max_constraint_violation: float

    def as_dict(self) -> dict:
        return {
            "touchdown_count": self.touchdown_count,
            "mean_adjustment_m": self.mean_adjustment_m,
            "max_adjustment_m": self.max_adjustment_m,
            "solve_time_mean_ms": self.solve_time_mean_ms,
            "solve_time_max_ms": self.solve_time_max_ms,
            "solve_time_p95_ms": self.solve_time_p95_ms,
            "convergence_rate": self.convergence_rate,
            "max_constraint_violation": self.max_constraint_violation,
        }


def _wrench_sum(events, t: float, estimated: bool) -> ExternalWrench:
    total = np.zeros(3)
    for event in events:
        if event.active(t):
            total = total + (event.estimated_force if estimated else event.force)
    return ExternalWrench(total, np.zeros(3))


def simulate(config: ScenarioConfig) -> tuple[TrajectoryLog, Metrics]:
    """Run the receding-horizon loop over the whole scenario."""
    params = config.params
    plan = config.plan
    options = config.mpc
    period = options.period
    n_steps = int(round(config.duration / period))
    substeps = config.substeps
    dt_sub = period / substeps
    spline = nominal_com_trajectory(plan, params)
    events = config.active_events()
    n_c = plan.n_contacts
    ids = plan.contact_ids
    geometries = [c.geometry for c in plan.contacts]
    corner_counts = [g.n_corners for g in geometries]
    nominal_contacts = np.array([c.nominal_position for c in plan.contacts])

    state = CentroidalState(spline.position(0.0), np.zeros(3), np.zeros(3))
    positions = {c.contact_id: c.nominal_position.copy() for c in plan.contacts}
    pending: dict = {}
    previous = None
    prev_gamma = np.array([c.active_at(0.0) for c in plan.contacts])

    times = np.arange(n_steps + 1) * period
    com_log = np.zeros((n_steps + 1, 3))
    momentum_log = np.zeros((n_steps + 1, 6))
    position_log = np.zeros((n_steps + 1, n_c, 3))
    gamma_log = np.zeros((n_steps + 1, n_c), dtype=bool)
    force_log = [np.zeros((n_steps + 1, nv, 3)) for nv in corner_counts]
    nominal_log = np.zeros((n_steps + 1, 3))
    touchdowns: list = []
    statuses: list = []
    iterations = np.zeros(n_steps, dtype=int)
    kkts = np.zeros(n_steps)
    viols = np.zeros(n_steps)
    degraded = np.zeros(n_steps, dtype=bool)
    solve_times = np.zeros(n_steps)
    predicted_ang = np.zeros((n_steps, options.horizon_knots + 1, 3))
    predicted_schedules = np.zeros((n_steps, options.horizon_knots, n_c), dtype=bool)
    predicted_next = np.zeros((n_steps, 9))

    for k in range(n_steps):
        t = float(times[k])
        gamma_now = np.array([c.active_at(t) for c in plan.contacts])
        if k > 0:
            for i, contact in enumerate(plan.contacts):
                if gamma_now[i] and not prev_gamma[i]:
                    wanted = pending.get(contact.contact_id, contact.nominal_position)
                    committed = options.box.clamp_position(
                        wanted, contact.nominal_position, contact.orientation
                    )
                    positions[contact.contact_id] = committed
                    touchdowns.append(
                        Touchdown(t, contact.contact_id, committed, contact.nominal_position)
                    )
                    log.info(
                        "t=%.2f touchdown %s at %s (nominal %s)",
                        t, contact.contact_id, committed, contact.nominal_position,
                    )
        prev_gamma = gamma_now

        estimate = _wrench_sum(events, t, estimated=True)
        out: MpcOutput = mpc_step(
            state, positions, plan, t, estimate, previous, options, params, spline
        )
        previous = out.solution
        pending = out.adjusted_contacts

        com_log[k] = state.p_com
        momentum_log[k] = state.momentum
        for i, cid in enumerate(ids):
            position_log[k, i] = positions[cid]
            force_log[i][k] = out.forces[cid]
        gamma_log[k] = gamma_now
        nominal_log[k] = spline.position(t)
        statuses.append(out.solution.status)
        iterations[k] = out.solution.iterations
        kkts[k] = out.solution.kkt_residual
        viols[k] = out.solution.constraint_violation
        degraded[k] = out.degraded
        solve_times[k] = out.solution.solve_time_ms
        predicted_ang[k] = out.predicted_momentum[:, 3:6]
        predicted_schedules[k] = out.schedule
        predicted_next[k] = np.concatenate([out.predicted_com[1], out.predicted_momentum[1]])

        contacts_now = [
            ContactInstant(
                positions[cid],
                plan.contacts[i].orientation,
                bool(gamma_now[i]),
                tuple(out.forces[cid]),
                np.zeros(3),
            )
            for i, cid in enumerate(ids)
        ]
        for s in range(substeps):
            tau = t + s * dt_sub
            truth = _wrench_sum(events, tau, estimated=False)
            state, _ = integrate_step(state, contacts_now, geometries, params, truth, dt_sub)
        if float(np.max(np.abs(state.p_com))) > 1e3:
            raise SimulationDiverged(
                f"CoM left the sane region at t={t + period:.3f}: {state.p_com}"
            )

    com_log[n_steps] = state.p_com
    momentum_log[n_steps] = state.momentum
    t_end = float(times[n_steps])
    gamma_log[n_steps] = [c.active_at(t_end) for c in plan.contacts]
    for i, cid in enumerate(ids):
        position_log[n_steps, i] = positions[cid]
    nominal_log[n_steps] = spline.position(t_end)

    traj = TrajectoryLog(
        times=times,
        com=com_log,
        momentum=momentum_log,
        contact_positions=position_log,
        gamma=gamma_log,
        forces=force_log,
        nominal_com=nominal_log,
        nominal_contacts=nominal_contacts,
        contact_ids=ids,
        corner_counts=corner_counts,
        touchdowns=touchdowns,
        statuses=statuses,
        iterations=iterations,
        kkt_residuals=kkts,
        violations=viols,
        degraded=degraded,
        solve_times_ms=solve_times,
        predicted_ang=predicted_ang,
        predicted_schedules=predicted_schedules,
        predicted_next=predicted_next,
        config_hash=config.config_hash,
        scenario_name=config.name,
    )
    return traj, compute_metrics(traj, config)


def compute_metrics(traj: TrajectoryLog, config: ScenarioConfig | None = None) -> Metrics:
    """Summarize a run; adjustment statistics cover only touchdowns that occurred."""
    adjustments = [td.adjustment for td in traj.touchdowns]
    mean_adj = float(np.mean(adjustments)) if adjustments else None
    max_adj = float(np.max(adjustments)) if adjustments else None
    solve = traj.solve_times_ms
    converged = np.array([s == "converged" for s in traj.statuses])
    worst = 0.0
    if config is not None:
        pyramid = config.mpc.pyramid()
        rotations = {c.contact_id: c.orientation for c in config.plan.contacts}
        for i, cid in enumerate(traj.contact_ids):
            active = traj.gamma[: traj.n_steps, i]
            forces = traj.forces[i][: traj.n_steps]
            for k in np.where(active)[0]:
                for j in range(forces.shape[1]):
                    worst = max(worst, pyramid.violation(forces[k, j], rotations[cid]))
        for td in traj.touchdowns:
            contact = config.plan.contact(td.contact_id)
            residual = contact.orientation.T @ (contact.nominal_position - td.committed)
            gap = np.maximum(config.mpc.box.lower - residual, 0.0)
            gap = np.maximum(gap, residual - config.mpc.box.upper)
            worst = max(worst, float(np.max(gap)))
    return Metrics(
        touchdown_count=len(traj.touchdowns),
        mean_adjustment_m=mean_adj,
        max_adjustment_m=max_adj,
        solve_time_mean_ms=float(solve.mean()) if solve.size else 0.0,
        solve_time_max_ms=float(solve.max()) if solve.size else 0.0,
        solve_time_p95_ms=float(np.percentile(solve, 95)) if solve.size else 0.0,
        convergence_rate=float(converged.mean()) if converged.size else 1.0,
        max_constraint_violation=worst,
    )


def _fmt(value: float) -> str:
    return f"{value:.9g}"


def export_csv(traj: TrajectoryLog, out_dir) -> list:
    """Write states/contacts/forces/solver CSVs; returns the file paths.

    Values carry 9 significant digits; re-exporting the same log yields
    byte-identical files.  Wall-clock times stay out of the CSVs so repeated
    runs of one scenario compare equal.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    states = out / "states.csv"
    with states.open("w", newline="\n") as fh:
        fh.write(
            "time_s,com_x_m,com_y_m,com_z_m,h_lin_x,h_lin_y,h_lin_z,"
            "h_ang_x,h_ang_y,h_ang_z,nominal_com_x_m,nominal_com_y_m,nominal_com_z_m\n"
        )
        for r in range(traj.times.size):
            row = (
                [traj.times[r]]
                + list(traj.com[r])
                + list(traj.momentum[r])
                + list(traj.nominal_com[r])
            )
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    written.append(states)

    contacts = out / "contacts.csv"
    with contacts.open("w", newline="\n") as fh:
        cols = ["time_s"]
        for cid in traj.contact_ids:
            cols += [
                f"{cid}_x_m",
                f"{cid}_y_m",
                f"{cid}_z_m",
                f"{cid}_active",
                f"{cid}_offset_x_m",
                f"{cid}_offset_y_m",
            ]
        fh.write(",".join(cols) + "\n")
        for r in range(traj.times.size):
            row = [_fmt(traj.times[r])]
            for i in range(len(traj.contact_ids)):
                pos = traj.contact_positions[r, i]
                off = pos[:2] - traj.nominal_contacts[i, :2]
                row += [_fmt(pos[0]), _fmt(pos[1]), _fmt(pos[2])]
                row.append("1" if traj.gamma[r, i] else "0")
                row += [_fmt(off[0]), _fmt(off[1])]
            fh.write(",".join(row) + "\n")
    written.append(contacts)

    forces = out / "forces.csv"
    with forces.open("w", newline="\n") as fh:
        cols = ["time_s"]
        for i, cid in enumerate(traj.contact_ids):
            for j in range(traj.corner_counts[i]):
                cols += [f"{cid}_c{j}_fx_n", f"{cid}_c{j}_fy_n", f"{cid}_c{j}_fz_n"]
        fh.write(",".join(cols) + "\n")
        for r in range(traj.times.size):
            row = [_fmt(traj.times[r])]
            for i in range(len(traj.contact_ids)):
                for j in range(traj.corner_counts[i]):
                    row += [_fmt(v) for v in traj.forces[i][r, j]]
            fh.write(",".join(row) + "\n")
    written.append(forces)

    solver = out / "solver.csv"
    with solver.open("w", newline="\n") as fh:
        fh.write("step,time_s,status,iterations,kkt_residual,constraint_violation,degraded\n")
        for k in range(traj.n_steps):
            fh.write(
                ",".join(
                    [
                        str(k),
                        _fmt(traj.times[k]),
                        traj.statuses[k],
                        str(int(traj.iterations[k])),
                        _fmt(traj.kkt_residuals[k]),
                        _fmt(traj.violations[k]),
                        "1" if traj.degraded[k] else "0",
                    ]
                )
                + "\n"
            )
    written.append(solver)
    return written


def write_manifest(traj: TrajectoryLog, metrics: Metrics, out_dir) -> Path:
    """Run manifest: config hash plus the metrics (includes wall-clock stats)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "run_manifest.json"
    payload = {
        "scenario": traj.scenario_name,
        "config_sha256": traj.config_hash,
        "steps": traj.n_steps,
        "metrics": metrics.as_dict(),
        "touchdowns": [
            {
                "time_s": td.time,
                "contact": td.contact_id,
                "committed_m": [float(v) for v in td.committed],
                "nominal_m": [float(v) for v in td.nominal],
                "adjustment_m": td.adjustment,
            }
            for td in traj.touchdowns
        ],
        "degraded_steps": int(traj.degraded.sum()),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
