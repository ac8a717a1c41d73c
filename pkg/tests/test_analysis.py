import numpy as np
import pytest
from scipy.stats import unitary_group

from ccqsim.analysis import (OutcomeLabel, classify_outcome, classify_state,
                             coherence_loss, coherence_ratio, coherence_trace, concurrence,
                             normalize_voltage, outcome_populations, summarize_outcomes,
                             voltage_histogram)
from ccqsim.errors import PositivityError
from ccqsim.sme import initial_state


def _pure(v):
    v = np.asarray(v, dtype=complex)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def test_concurrence_reference_values():
    assert concurrence(_pure([0, 1, 1, 0])) == pytest.approx(1)
    assert concurrence(_pure([1, 0, 0, 1])) == pytest.approx(1)
    assert concurrence(initial_state()) == pytest.approx(0, abs=1e-12)
    assert concurrence(np.eye(4) / 4) == pytest.approx(0, abs=1e-12)
    # Werner state with singlet weight p has C = max(0, (3p-1)/2)
    psi = _pure([0, 1, -1, 0])
    for p in (0.2, 0.5, 0.9):
        w = p * psi + (1 - p) * np.eye(4) / 4
        assert concurrence(w) == pytest.approx(max(0, (3 * p - 1) / 2), abs=1e-10)


def test_concurrence_vectorized_and_unnormalized():
    stack = np.array([2 * _pure([0, 1, 1, 0]), np.eye(4)])
    np.testing.assert_allclose(concurrence(stack), [1, 0], atol=1e-12)


def test_concurrence_rejects_non_positive():
    with pytest.raises(PositivityError):
        concurrence(np.diag([0.7, 0.5, -0.2, 0]))


def test_concurrence_local_unitary_invariance(rng):
    g = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
    rho = g @ g.conj().T
    rho /= np.trace(rho)
    c0 = concurrence(rho)
    for k in range(20):
        u = np.kron(unitary_group.rvs(2, random_state=k), unitary_group.rvs(2, random_state=100 + k))
        assert abs(concurrence(u @ rho @ u.conj().T) - c0) < 1e-10


def test_classification():
    assert classify_state(_pure([0, 1, 1, 0])) is OutcomeLabel.ONE_SYM
    assert classify_state(_pure([0, 1, -1, 0])) is OutcomeLabel.ONE_ANTISYM
    assert classify_state(initial_state("11")) is OutcomeLabel.TWO
    assert classify_state(initial_state()) is OutcomeLabel.UNRESOLVED
    labels = classify_state(np.array([initial_state("00"), initial_state()]))
    assert list(labels) == ["zero", "unresolved"]
    np.testing.assert_allclose(outcome_populations(initial_state()), [0.25, 0.5, 0, 0.25])
    assert classify_outcome(initial_state("00")) is OutcomeLabel.ZERO


def test_normalize_voltage():
    np.testing.assert_allclose(normalize_voltage([2.0, 6.0, 4.0], 2.0, 6.0), [-1, 1, 0])


def test_histogram_marginal_equals_counts(rng):
    v = [rng.normal(size=500) * 3, rng.normal(size=300)]
    labs = [rng.choice(["zero", "two", "one_sym"], size=500),
            rng.choice(["unresolved", "two"], size=300)]
    h = voltage_histogram(v, labs, 11, [0.5, 1.0], (-2, 2))
    for w in range(2):
        for l in ("zero", "two", "one_sym", "unresolved"):
            assert h.counts[l][w].sum() == np.count_nonzero(labs[w] == l)
    tot = h.total()
    cond = h.conditional()
    np.testing.assert_allclose(sum(cond.values())[tot > 0], 1)


def test_histogram_errors():
    with pytest.raises(ValueError, match="empty"):
        voltage_histogram([np.array([])], [np.array([])], 5, [1.0])
    with pytest.raises(ValueError):
        voltage_histogram([np.zeros(3)], [np.array(["zero"] * 3)], 5, [1.0, 2.0])


def test_coherence_trace_and_loss():
    snaps = np.array([[initial_state(), _pure([0, 1, 1, 0])]] * 3)
    np.testing.assert_allclose(coherence_trace(snaps, "0110"), [0.25, 0.5])
    with pytest.raises(ValueError):
        coherence_trace(snaps, select=[False] * 3)
    mixed = np.diag([0, 0.5, 0.5, 0]).astype(complex)
    finals = np.array([_pure([0, 1, 1, 0]), mixed, initial_state("00")])
    loss, n = coherence_loss(finals)
    assert n == 2 and loss == pytest.approx(0.5)
    assert coherence_ratio(initial_state("00")) == 0


def test_summarize_outcomes():
    counts, means = summarize_outcomes(["zero", "two", "zero"], [1.0, 2.0, 3.0])
    assert counts["zero"] == 2 and means["zero"] == 2.0 and means["one_sym"] is None
