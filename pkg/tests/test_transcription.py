import numpy as np
import pytest

from centroidal_mpc.model import (
    CentroidalState,
    ContactGeometry,
    PhysicalParams,
    euler_step_batch,
)
from centroidal_mpc.plan import ContactPlan, NominalContact
from centroidal_mpc.solver import check_derivatives
from centroidal_mpc.transcription import (
    ContactBox,
    DecisionLayout,
    Weights,
    build_nlp,
    centroidal_tracking_cost,
    contact_box_violation,
    contact_regularization_cost,
    force_rate_cost,
    force_regularization_cost,
    friction_pyramid,
)


def yaw(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


class TestCostTerms:
    def test_force_reg_equal_corners(self):
        forces = np.tile([1.0, 2.0, 3.0], (4, 1))
        assert force_regularization_cost(forces, 1.0) == 0.0

    def test_force_reg_single_corner(self):
        assert force_regularization_cost([[5.0, -2.0, 7.0]], 1.0) == 0.0

    def test_force_reg_two_corners(self):
        # mean (0,0,1); each corner deviates by 1 -> 1/2 + 1/2
        assert force_regularization_cost([[0, 0, 2.0], [0, 0, 0.0]], 1.0) == pytest.approx(1.0)

    def test_force_rate_zero(self):
        assert force_rate_cost([1, 2, 3], [1, 2, 3], 0.1, 1.0) == 0.0

    def test_force_rate_unit(self):
        assert force_rate_cost([0, 0, 0], [0, 0, 1], 1.0, 1.0) == pytest.approx(0.5)

    def test_force_rate_scaling_with_period(self):
        slow = force_rate_cost([0, 0, 0], [0, 0, 1], 2.0, 1.0)
        fast = force_rate_cost([0, 0, 0], [0, 0, 1], 1.0, 1.0)
        assert slow == pytest.approx(fast / 4.0)

    def test_tracking_zero_at_nominal(self):
        state = CentroidalState([1, 2, 3], [0, 0, 0], [0, 0, 0])
        assert centroidal_tracking_cost(state, [0, 0, 0], [1, 2, 3], 1.0, 1.0) == 0.0

    def test_tracking_ang_momentum(self):
        state = CentroidalState([0, 0, 0], [0, 0, 0], [0, 0, 1.0])
        assert centroidal_tracking_cost(state, [0, 0, 0], [0, 0, 0], 1.0, 1.0) == pytest.approx(0.5)

    def test_tracking_com_weighted(self):
        state = CentroidalState([0.1, 0, 0], [0, 0, 0], [0, 0, 0])
        cost = centroidal_tracking_cost(state, [0, 0, 0], [0, 0, 0], 1.0, 100.0)
        assert cost == pytest.approx(0.5)

    def test_contact_reg(self):
        assert contact_regularization_cost([0, 0, 0], [0, 0, 0], 1.0) == 0.0
        assert contact_regularization_cost([0.1, 0, 0], [0, 0, 0], 1.0) == pytest.approx(0.005)

    def test_contact_reg_axis_permutation(self):
        vals = [
            contact_regularization_cost(np.roll([0.1, 0, 0], i), [0, 0, 0], 1.0)
            for i in range(3)
        ]
        assert vals[0] == vals[1] == vals[2]


class TestFrictionPyramid:
    def test_pure_normal_inside(self):
        pyr = friction_pyramid(1.0, 0.0, 30.0)
        assert pyr.violation([0, 0, 1.0], np.eye(3)) <= 0.0

    def test_tangential_violation(self):
        pyr = friction_pyramid(0.7, 0.0, 30.0)
        # 2 > 0.7/sqrt(2) * 1
        assert pyr.violation([2.0, 0, 1.0], np.eye(3)) > 0.0

    def test_pulling_force_forbidden(self):
        pyr = friction_pyramid(0.7, 0.0, 30.0)
        assert pyr.violation([0, 0, -1.0], np.eye(3)) > 0.0

    def test_rotation_invariance(self):
        pyr = friction_pyramid(0.8, 0.0, 30.0)
        rng = np.random.RandomState(7)
        for _ in range(20):
            angle = rng.uniform(-np.pi, np.pi)
            world_rot = yaw(angle)
            f = rng.randn(3) * 4
            base = pyr.violation(f, np.eye(3))
            rotated = pyr.violation(world_rot @ f, world_rot @ np.eye(3))
            assert base == pytest.approx(rotated, abs=1e-10)

    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            friction_pyramid(0.0, 0.0, 30.0)
        with pytest.raises(ValueError):
            friction_pyramid(0.5, 5.0, 5.0)


class TestContactBox:
    def test_zero_residual_feasible(self):
        box = ContactBox.planar(0.1, 0.1)
        residual = contact_box_violation([1, 2, 0], [1, 2, 0], np.eye(3), box)
        np.testing.assert_allclose(residual, np.zeros(3))
        assert box.contains(residual)

    def test_x_overflow(self):
        box = ContactBox((-0.1, -0.1, 0), (0.1, 0.1, 0))
        residual = contact_box_violation([0, 0, 0], [0.15, 0, 0], np.eye(3), box)
        assert not box.contains(residual)

    def test_yaw_maps_axes(self):
        # a 90-degree yaw maps an x offset into the y component of the check
        box = ContactBox((-0.2, -0.01, 0), (0.2, 0.01, 0))
        R = yaw(np.pi / 2)
        residual = contact_box_violation([0, 0, 0], [0.05, 0, 0], R, box)
        np.testing.assert_allclose(residual, [0, -0.05, 0], atol=1e-12)
        assert not box.contains(residual)

    def test_clamp_position(self):
        box = ContactBox.planar(0.1, 0.1)
        clamped = box.clamp_position([0.5, 0, 0.2], [0, 0, 0], np.eye(3))
        residual = contact_box_violation(clamped, [0, 0, 0], np.eye(3), box)
        assert box.contains(residual, tol=1e-12)

    def test_invalid_bounds(self):
        with pytest.raises(ValueError):
            ContactBox((0.1, 0, 0), (-0.1, 0, 0))


class TestDecisionLayout:
    def test_smallest_problem_dimension(self):
        # N=1, one contact, one corner: 2*(9+3) + (3+3) = 30
        assert DecisionLayout(1, [1]).size == 30

    def test_index_map_is_bijection(self):
        layout = DecisionLayout(3, [4, 1])
        seen = np.zeros(layout.size, dtype=int)
        for k in range(layout.n_knots + 1):
            seen[layout.com_slice(k)] += 1
            seen[layout.momentum_slice(k)] += 1
            for i in range(layout.n_contacts):
                seen[layout.contact_position_slice(k, i)] += 1
        for k in range(layout.n_knots):
            for i, nv in enumerate(layout.corner_counts):
                for j in range(nv):
                    seen[layout.force_slice(k, i, j)] += 1
                seen[layout.contact_velocity_slice(k, i)] += 1
        assert np.all(seen == 1)

    def test_views_round_trip(self):
        layout = DecisionLayout(2, [2])
        rng = np.random.RandomState(0)
        x = rng.randn(layout.size)
        com, momentum, contacts = layout.state_arrays(x)
        forces, velocities = layout.control_arrays(x)
        np.testing.assert_array_equal(com[1], x[layout.com_slice(1)])
        np.testing.assert_array_equal(momentum[2], x[layout.momentum_slice(2)])
        np.testing.assert_array_equal(contacts[0, 0], x[layout.contact_position_slice(0, 0)])
        np.testing.assert_array_equal(forces[0][1, 1], x[layout.force_slice(1, 0, 1)])
        np.testing.assert_array_equal(velocities[1, 0], x[layout.contact_velocity_slice(1, 0)])


def two_contact_problem(n_knots=4, period=0.1, disturbance=True, seed=0):
    left = NominalContact(
        "l", [0, 0.1, 0], np.eye(3), ContactGeometry.rectangle(0.2, 0.1), ((0.0, 0.2),)
    )
    right = NominalContact("r", [0, -0.1, 0], yaw(0.4), ContactGeometry.point(), ((0.1, 0.4),))
    plan = ContactPlan((left, right), 0.4)
    params = PhysicalParams(mass=2.0, com_height_nominal=0.8)
    rng = np.random.RandomState(seed)
    schedule = np.array(
        [[k * period < 0.2, 0.1 <= k * period < 0.4] for k in range(n_knots)]
    )
    nominal = np.array([[0.0, 0.0, 0.8]]) + 0.05 * rng.randn(n_knots + 1, 3)
    state = CentroidalState([0.02, 0.01, 0.8], [0.1, 0, 0], [0, 0.02, 0])
    measured = np.array([[0, 0.1, 0], [0, -0.1, 0.0]])
    profile = 0.3 * rng.randn(n_knots, 6) if disturbance else None
    problem = build_nlp(
        plan,
        state,
        measured,
        schedule,
        nominal,
        Weights(),
        friction_pyramid(0.8, 0.0, 60.0),
        ContactBox.planar(0.15, 0.15),
        n_knots,
        period,
        params,
        profile,
    )
    return problem, plan, params, schedule, state, measured, profile


class TestBuildNlp:
    def test_dimensions(self):
        problem, plan, *_ = two_contact_problem()
        layout = DecisionLayout(4, [4, 1])
        assert problem.dimension == layout.size
        assert problem.n_eq == layout.state_dim * 5

    def test_warm_start_cost_finite(self):
        problem, plan, params, schedule, state, measured, _ = two_contact_problem()
        x = np.zeros(problem.dimension)
        assert np.isfinite(problem.cost(x))

    def test_defects_zero_on_rollout(self):
        problem, plan, params, schedule, state, measured, profile = two_contact_problem()
        layout = DecisionLayout(4, [4, 1])
        rng = np.random.RandomState(5)
        x = np.zeros(layout.size)
        x[layout.n_state_vars:] = 2.0 * rng.randn(layout.n_knots * layout.control_dim)
        forces, velocities = layout.control_arrays(x)
        rotations = np.array([c.orientation for c in plan.contacts])
        offsets = [c.geometry.offsets_matrix() for c in plan.contacts]
        p = state.p_com[None]
        h = state.momentum[None]
        pc = measured[None]
        states = np.empty((5, layout.state_dim))
        states[0] = np.concatenate([p[0], h[0], pc[0].ravel()])
        gamma = schedule.astype(float)
        for k in range(4):
            p, h, pc = euler_step_batch(
                p, h, pc, [f[k : k + 1] for f in forces], velocities[k : k + 1],
                gamma[k : k + 1], rotations, offsets, params.mass, params.gravity,
                profile[k : k + 1], 0.1,
            )
            states[k + 1] = np.concatenate([p[0], h[0], pc[0].ravel()])
        x[: layout.n_state_vars] = states.ravel()
        assert np.abs(problem.eq(x)).max() == 0.0

    def test_gated_forces_absent_from_defects(self):
        problem, *_ = two_contact_problem()
        layout = DecisionLayout(4, [4, 1])
        rng = np.random.RandomState(2)
        x = rng.randn(problem.dimension)
        base = problem.eq(x)
        # contact r is inactive at step 0: its force there is dynamics-irrelevant
        x2 = x.copy()
        x2[layout.force_slice(0, 1, 0)] += 37.0
        assert np.array_equal(problem.eq(x2), base)

    def test_derivatives_match_finite_differences(self):
        problem, *_ = two_contact_problem()
        rng = np.random.RandomState(11)
        worst = 0.0
        for _ in range(3):
            point = rng.randn(problem.dimension)
            report = check_derivatives(problem, point, fd_step=1e-6)
            worst = max(worst, report.max_relative_error)
        assert worst < 1e-5

    def test_dense_fd_validates_declared_sparsity(self):
        # small problem: full dense FD of the equality Jacobian, entry by entry
        problem, *_ = two_contact_problem(n_knots=2)
        rng = np.random.RandomState(4)
        x = rng.randn(problem.dimension)
        J = problem.eq_jac(x).toarray()
        h = 1e-6
        dense = np.zeros_like(J)
        for c in range(problem.dimension):
            e = np.zeros(problem.dimension)
            e[c] = 1.0
            dense[:, c] = (problem.eq(x + h * e) - problem.eq(x - h * e)) / (2 * h)
        assert np.abs(J - dense).max() < 1e-6

    def test_cost_zero_iff_perfect_tracking(self):
        problem, plan, params, schedule, state, measured, _ = two_contact_problem(
            disturbance=False
        )
        layout = DecisionLayout(4, [4, 1])
        # zero cost requires: forces uniform (zero works), com on nominal,
        # h_ang zero, contacts at nominal -- build such a vector
        x = np.zeros(layout.size)
        nominal = np.array([[0.0, 0.0, 0.8]])
        problem2 = build_nlp(
            plan, state, measured, schedule, np.tile(nominal, (5, 1)), Weights(),
            friction_pyramid(0.8, 0, 60.0), ContactBox.planar(0.15, 0.15),
            4, 0.1, params,
        )
        for k in range(5):
            x[layout.com_slice(k)] = nominal[0]
            x[layout.contact_position_slice(k, 0)] = [0, 0.1, 0]
            x[layout.contact_position_slice(k, 1)] = [0, -0.1, 0]
        assert problem2.cost(x) == pytest.approx(0.0, abs=1e-10)
        x[layout.momentum_slice(2)] = [0, 0, 0, 0.1, 0, 0]
        assert problem2.cost(x) > 1e-3

    def test_structural_errors(self):
        problem, plan, params, schedule, state, measured, _ = two_contact_problem()
        with pytest.raises(ValueError, match="schedule"):
            build_nlp(
                plan, state, measured, schedule[:2], np.zeros((5, 3)), Weights(),
                friction_pyramid(0.8, 0, 60.0), ContactBox.planar(0.15, 0.15),
                4, 0.1, params,
            )
        with pytest.raises(ValueError, match="samples"):
            build_nlp(
                plan, state, measured, schedule, np.zeros((3, 3)), Weights(),
                friction_pyramid(0.8, 0, 60.0), ContactBox.planar(0.15, 0.15),
                4, 0.1, params,
            )


class TestWeights:
    def test_scalar_expansion(self):
        w = Weights(force_reg=2.0)
        np.testing.assert_allclose(w.force_reg, [2, 2, 2])

    def test_positive_definite_required(self):
        with pytest.raises(ValueError):
            Weights(com_tracking=0.0)
        with pytest.raises(ValueError):
            Weights(ang_momentum=[1.0, -1.0, 1.0])
