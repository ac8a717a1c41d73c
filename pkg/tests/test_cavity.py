import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ccqsim.cavity import (ConditionalCavityState, adiabatic_amplitudes, generator_matrix,
                           output_fields, propagate, step_amplitudes)
from ccqsim.params import DriveSet, Envelope


def test_state_vector_round_trip():
    s = ConditionalCavityState(1, 2j, 3, 4, 5, 6j, time=0.5)
    assert ConditionalCavityState.from_vector(s.as_vector(), 0.5) == s


def test_propagate_matches_ode_solver(lossy_params):
    p = lossy_params
    m = generator_matrix(p)
    u = np.array([1, 1, 0, 0, 0, 0]) * 3.0 + np.array([0, 0, 1, 1, 1, 1]) * (1 - 2j)
    x0 = np.arange(6) * (0.1 + 0.2j)
    sol = solve_ivp(lambda t, x: m @ x + u, (0, 0.05), x0, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(propagate(x0, p, 0.05, 3.0, 1 - 2j), sol.y[:, -1], atol=1e-9)


def test_linearity_in_drives_and_initial_state(lossy_params, rng):
    p = lossy_params
    x1, x2 = rng.normal(size=(2, 6)) + 1j * rng.normal(size=(2, 6))
    a1, a2, b1, b2 = rng.normal(size=4) + 1j * rng.normal(size=4)
    lhs = propagate(2 * x1 - 3 * x2, p, 0.01, 2 * a1 - 3 * a2, 2 * b1 - 3 * b2)
    rhs = 2 * propagate(x1, p, 0.01, a1, b1) - 3 * propagate(x2, p, 0.01, a2, b2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_no_backaction_of_second_cavity(lossy_params, rng):
    p = lossy_params
    x = rng.normal(size=6) + 1j * rng.normal(size=6)
    y = x.copy()
    y[2:] = rng.normal(size=4)
    q = p.with_(chi2=3 * p.chi2, kappa2=2 * p.kappa2, delta2=5.0)
    a = propagate(x, p, 0.02, 1.0, 0.0)
    b = propagate(y, q, 0.02, 1.0, 7.0)
    np.testing.assert_allclose(a[:2], b[:2], atol=1e-13)


def test_stationary_limit(lossy_params):
    p = lossy_params
    st = adiabatic_amplitudes(p, 2.0, 0.5 + 1j).as_vector()
    np.testing.assert_allclose(propagate(st, p, 0.3, 2.0, 0.5 + 1j), st, atol=1e-12)


def test_step_amplitudes_empty_without_drive(ideal_params):
    s = step_amplitudes(ConditionalCavityState(), ideal_params, DriveSet(), 0.01)
    assert s.max_abs() == 0 and s.time == pytest.approx(0.01)
    with pytest.raises(ValueError):
        step_amplitudes(s, ideal_params, DriveSet(), 0.0)


def test_output_fields_shape(ideal_params):
    c = output_fields(np.zeros((3, 6)), ideal_params)
    assert c.shape == (3, 4)
