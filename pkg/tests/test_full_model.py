import numpy as np
import pytest

from ccqsim.compensation import compensation_law
from ccqsim.errors import TruncationError
from ccqsim.full_model import FockLayout, FullModel, FullState, step_full_oracle
from ccqsim.params import DriveSet, Envelope, mhz
from ccqsim.rng import wiener_increments
from ccqsim.sme import build_schedule, initial_state, integrate_batch


def _schedule(p, amp, hold, dt_factor=0.05, tail=0.5):
    d = DriveSet(direct_a=Envelope(amplitude=mhz(amp), ramp=0.2, hold=hold))
    dt = dt_factor / p.kappa_max
    return build_schedule(p, d, compensation_law("ideal", p, d), dt,
                          int(np.ceil((d.end + tail) / dt)))


def test_state_helpers():
    lay = FockLayout(4, 3)
    st = FullState.from_qubits(initial_state(), lay)
    assert st.trace() == pytest.approx(1)
    np.testing.assert_allclose(st.qubit_marginal(), initial_state())
    assert st.mean_fields() == (0, 0)
    assert st.top_population() == 0


def test_weak_drive_matches_reduced_model(ideal_params):
    s = _schedule(ideal_params, 0.15, 0.3)
    dW = wiener_increments(1, 0, s.n_steps, s.dt)
    idx, marg, _ = FullModel(s, FockLayout(6, 6)).run(initial_state(), dW, stride=10)
    red = integrate_batch(s, "lab-reduced", initial_state(), dW[None], stride=10)
    assert np.max(np.abs(marg - red.snapshots[0][: len(idx)])) < 1e-4


def test_truncation_guard_fires(ideal_params):
    s = _schedule(ideal_params, 2.0, 0.5, tail=0.0)
    dW = np.zeros(s.n_steps)
    with pytest.raises(TruncationError):
        FullModel(s, FockLayout(3, 3)).run(initial_state(), dW, guard_every=5)


def test_step_oracle_guards_first(ideal_params):
    s = _schedule(ideal_params, 0.1, 0.1)
    lay = FockLayout(3, 3)
    st = FullState.from_qubits(initial_state(), lay)
    st.varrho[:] = 0
    st.varrho[0, 2, 2, 0, 2, 2] = 1
    with pytest.raises(TruncationError):
        step_full_oracle(st, FullModel(s, lay), 0, 0.0)
