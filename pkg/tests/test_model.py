import numpy as np
import pytest

from centroidal_mpc.model import (
    CentroidalState,
    ContactGeometry,
    ContactInstant,
    ExternalWrench,
    PhysicalParams,
    com_velocity,
    contact_position_derivative,
    integrate_step,
    momentum_derivative,
)

POINT = ContactGeometry.point()


def contact(position, force, active=True, velocity=(0, 0, 0)):
    return ContactInstant(position, np.eye(3), active, (np.asarray(force, float),), velocity)


class TestMomentumDerivative:
    def test_static_equilibrium(self):
        params = PhysicalParams(mass=1.0)
        state = CentroidalState([0, 0, 1.0], [0, 0, 0], [0, 0, 0])
        rate = momentum_derivative(state, [contact([0, 0, 0], [0, 0, 9.81])], [POINT], params)
        np.testing.assert_allclose(rate, np.zeros(6), atol=1e-12)

    def test_offset_com_produces_torque(self):
        # hand cross-product oracle: (-0.1, 0, -1) x (0, 0, 9.81) = (0, 0.981, 0)
        params = PhysicalParams(mass=1.0)
        state = CentroidalState([0.1, 0, 1.0], [0, 0, 0], [0, 0, 0])
        rate = momentum_derivative(state, [contact([0, 0, 0], [0, 0, 9.81])], [POINT], params)
        np.testing.assert_allclose(rate[:3], [0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(rate[3:], [0, 0.981, 0], atol=1e-12)

    def test_inactive_forces_have_exactly_zero_effect(self):
        params = PhysicalParams(mass=2.5)
        state = CentroidalState([0, 0, 1.0], [1, 2, 3], [0.1, 0, 0])
        loud = momentum_derivative(
            state, [contact([3, 1, 0], [55, 3, 14], active=False)], [POINT], params
        )
        quiet = momentum_derivative(
            state, [contact([3, 1, 0], [0, 0, 0], active=False)], [POINT], params
        )
        assert np.array_equal(loud, quiet)
        np.testing.assert_allclose(loud, [0, 0, -9.81 * 2.5, 0, 0, 0], atol=1e-12)

    def test_superposition_in_forces(self):
        params = PhysicalParams(mass=1.0)
        state = CentroidalState([0.2, -0.1, 0.9], [0, 0, 0], [0, 0, 0])
        rng = np.random.RandomState(1)
        f1, f2 = rng.randn(3), rng.randn(3)
        base = momentum_derivative(state, [contact([0, 0, 0], f1)], [POINT], params)
        plus = momentum_derivative(state, [contact([0, 0, 0], f1 + f2)], [POINT], params)
        only = momentum_derivative(state, [contact([0, 0, 0], f2)], [POINT], params)
        grav = momentum_derivative(state, [contact([0, 0, 0], [0, 0, 0])], [POINT], params)
        np.testing.assert_allclose(plus - base, only - grav, atol=1e-12)

    def test_disturbance_additivity(self):
        params = PhysicalParams(mass=1.0)
        state = CentroidalState([0, 0, 1.0], [0.5, 0, 0], [0, 0, 0])
        wrench = ExternalWrench([5, -1, 2], [0.3, 0, -0.1])
        contacts = [contact([0.1, 0, 0], [1, 2, 3])]
        with_d = momentum_derivative(state, contacts, [POINT], params, wrench)
        without = momentum_derivative(state, contacts, [POINT], params)
        np.testing.assert_allclose(with_d - without, wrench.stacked(), atol=1e-14)

    def test_corner_count_mismatch_rejected(self):
        params = PhysicalParams(mass=1.0)
        state = CentroidalState.zero()
        rect = ContactGeometry.rectangle(0.2, 0.1)
        with pytest.raises(ValueError, match="corner"):
            momentum_derivative(state, [contact([0, 0, 0], [0, 0, 1])], [rect], params)

    def test_non_finite_force_rejected(self):
        params = PhysicalParams(mass=1.0)
        state = CentroidalState.zero()
        with pytest.raises(ValueError):
            momentum_derivative(state, [contact([0, 0, 0], [np.nan, 0, 0])], [POINT], params)


class TestComVelocity:
    def test_zero(self):
        assert np.array_equal(com_velocity([0, 0, 0], PhysicalParams(mass=1.0)), np.zeros(3))

    def test_unit_mass_identity(self):
        np.testing.assert_allclose(com_velocity([2, 0, 0], PhysicalParams(mass=1.0)), [2, 0, 0])

    def test_scalar_division(self):
        np.testing.assert_allclose(
            com_velocity([3, -1.5, 0.6], PhysicalParams(mass=3.0)), [1, -0.5, 0.2]
        )


class TestContactPositionDerivative:
    def test_active_contact_frozen(self):
        assert np.array_equal(contact_position_derivative(True, [1, 2, 3]), np.zeros(3))

    def test_inactive_moves(self):
        np.testing.assert_allclose(contact_position_derivative(False, [1, 2, 3]), [1, 2, 3])

    def test_zero_velocity(self):
        assert np.array_equal(contact_position_derivative(False, [0, 0, 0]), np.zeros(3))


class TestIntegrateStep:
    def test_flight_single_step(self):
        params = PhysicalParams(mass=1.0)
        state = CentroidalState([0, 0, 1.0], [0, 0, 0], [0, 0, 0])
        nxt, _ = integrate_step(state, [contact([0, 0, 0], [9, 9, 9], active=False)],
                                [POINT], params, None, 0.1)
        np.testing.assert_allclose(nxt.h_lin, [0, 0, -0.981], atol=1e-15)

    def test_static_fixed_point(self):
        params = PhysicalParams(mass=1.0)
        state = CentroidalState([0, 0, 1.0], [0, 0, 0], [0, 0, 0])
        nxt, pos = integrate_step(state, [contact([0, 0, 0], [0, 0, 9.81])],
                                  [POINT], params, None, 0.37)
        assert np.array_equal(nxt.p_com, state.p_com)
        assert np.array_equal(nxt.momentum, state.momentum)

    def test_active_contact_position_bit_exact(self):
        params = PhysicalParams(mass=1.0)
        state = CentroidalState([0, 0, 1.0], [0, 0, 0], [0, 0, 0])
        start = np.array([1.0, 2.0, 3.0])
        _, pos = integrate_step(
            state, [contact(start, [0, 0, 0], velocity=[5, 5, 5])], [POINT], params, None, 0.1
        )
        assert np.array_equal(pos[0], start)

    def test_ballistic_parabola_and_momentum_conservation(self):
        params = PhysicalParams(mass=2.0)
        state = CentroidalState([0, 0, 1.0], [2.0, 0, 1.0], [0.1, -0.2, 0.3])
        dt, steps = 1e-3, 500
        h_ang0 = state.h_ang.copy()
        for _ in range(steps):
            state, _ = integrate_step(
                state, [contact([0, 0, 0], [3, 3, 3], active=False)], [POINT], params, None, dt
            )
        t = dt * steps
        v0 = np.array([1.0, 0, 0.5])
        expected = np.array([0, 0, 1.0]) + v0 * t + 0.5 * np.array([0, 0, -9.81]) * t * t
        np.testing.assert_allclose(state.p_com, expected, atol=5e-3)
        assert np.array_equal(state.h_ang, h_ang0)

    def test_invalid_dt(self):
        params = PhysicalParams(mass=1.0)
        with pytest.raises(ValueError, match="dt"):
            integrate_step(CentroidalState.zero(), [], [], params, None, 0.0)


class TestTypes:
    def test_params_validation(self):
        with pytest.raises(ValueError, match="mass"):
            PhysicalParams(mass=-1.0)
        with pytest.raises(ValueError, match="gravity"):
            PhysicalParams(mass=1.0, gravity=[0, 0, 0])

    def test_state_requires_finite(self):
        with pytest.raises(ValueError):
            CentroidalState([np.inf, 0, 0], [0, 0, 0], [0, 0, 0])

    def test_orientation_checked(self):
        with pytest.raises(ValueError, match="orthonormal"):
            ContactInstant([0, 0, 0], np.eye(3) * 2.0, True, ((0, 0, 0),), (0, 0, 0))
        # determinant -1 (reflection) rejected
        flip = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError, match="determinant"):
            ContactInstant([0, 0, 0], flip, True, ((0, 0, 0),), (0, 0, 0))

    def test_geometry_needs_corner(self):
        with pytest.raises(ValueError):
            ContactGeometry(())

    def test_rectangle_corners(self):
        rect = ContactGeometry.rectangle(0.2, 0.1)
        assert rect.n_corners == 4
        corners = rect.offsets_matrix()
        assert np.allclose(np.abs(corners[:, 0]), 0.1)
        assert np.allclose(np.abs(corners[:, 1]), 0.05)
