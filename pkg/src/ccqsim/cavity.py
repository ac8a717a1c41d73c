"""Conditional coherent amplitudes of the two cavities.

Cavity 1 holds ``A^(r)`` conditioned on qubit 1, cavity 2 holds ``B^(rs)``
conditioned on both qubits.  The six amplitudes obey a linear ODE driven by
the effective drives, which is stepped exactly for drives held constant over
a step.  The two-qubit basis is ordered ``|00>, |01>, |10>, |11>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .params import DriveSet, SystemParams

# sigma_z eigenvalues of qubit 1 / qubit 2 over |00>,|01>,|10>,|11>
SZ1 = np.array([1.0, 1.0, -1.0, -1.0])
SZ2 = np.array([1.0, -1.0, 1.0, -1.0])
# Xi = |01><01| - |10><10| as a diagonal
XI = np.array([0.0, 1.0, -1.0, 0.0])
# which A^(r) each basis state sees
A_INDEX = np.array([0, 0, 1, 1])

_INPUT_A = np.array([1, 1, 0, 0, 0, 0], dtype=complex)
_INPUT_B = np.array([0, 0, 1, 1, 1, 1], dtype=complex)


@dataclass(frozen=True)
class ConditionalCavityState:
    A0: complex = 0j
    A1: complex = 0j
    B00: complex = 0j
    B01: complex = 0j
    B10: complex = 0j
    B11: complex = 0j
    time: float = 0.0

    def as_vector(self) -> np.ndarray:
        return np.array([self.A0, self.A1, self.B00, self.B01, self.B10, self.B11],
                        dtype=complex)

    @classmethod
    def from_vector(cls, x, time: float = 0.0) -> "ConditionalCavityState":
        x = np.asarray(x, dtype=complex)
        return cls(*(complex(v) for v in x[:6]), time=float(time))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.as_vector())))


def generator_matrix(params: SystemParams) -> np.ndarray:
    """Homogeneous part ``M`` of ``x' = M x + (A_d, B_d)`` inputs."""
    k1, k2 = params.kappa_tilde1, params.kappa_tilde2
    c1, c2 = params.chi1, params.chi2
    m = np.zeros((6, 6), dtype=complex)
    m[0, 0] = -(k1 + 1j * c1)
    m[1, 1] = -(k1 - 1j * c1)
    for q in range(4):
        r, s = divmod(q, 2)
        m[2 + q, 2 + q] = -(k2 + (1 if s == 0 else -1) * 1j * c2)
        m[2 + q, r] = params.kappa12
    return m


@dataclass(frozen=True)
class Feedback:
    """Linear law ``B_d = gains . x + a_gain * A_d`` for the second cavity drive."""

    gains: tuple = (0j,) * 6
    a_gain: complex = 0j

    def b_drive(self, x, a_d):
        x = np.asarray(x, dtype=complex)
        return x @ np.asarray(self.gains, dtype=complex) + self.a_gain * a_d


@lru_cache(maxsize=64)
def _propagator(params: SystemParams, dt: float, feedback: Optional[Feedback]):
    m = generator_matrix(params)
    u_a = _INPUT_A.copy()
    if feedback is not None:
        m = m + np.outer(_INPUT_B, np.asarray(feedback.gains, dtype=complex))
        u_a = u_a + feedback.a_gain * _INPUT_B
    z = np.zeros((8, 8), dtype=complex)
    z[:6, :6] = m
    z[:6, 6] = u_a
    z[:6, 7] = _INPUT_B
    e = expm(z * dt)
    return e[:6, :6].copy(), e[:6, 6:].copy()


def propagate(x, params: SystemParams, dt: float, a_d: complex, b_d: complex = 0j,
              feedback: Optional[Feedback] = None) -> np.ndarray:
    """Exact step of the amplitude vector for constant ``a_d`` and external ``b_d``.

    With ``feedback`` the total second-cavity drive is ``b_d`` plus the
    feedback law, evaluated continuously within the step.
    """
    phi, psi = _propagator(params, float(dt), feedback)
    return phi @ np.asarray(x, dtype=complex) + psi @ np.array([a_d, b_d])


def step_amplitudes(state: ConditionalCavityState, params: SystemParams,
                    drives: DriveSet, dt: float,
                    feedback: Optional[Feedback] = None) -> ConditionalCavityState:
    """Advance the conditional amplitudes by ``dt``.

    Drives are sampled at the step midpoint and held constant.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    tm = state.time + dt / 2
    a_d = complex(drives.a_d(params, tm))
    b_d = 0j if feedback is not None else complex(drives.b_d(params, tm))
    x = propagate(state.as_vector(), params, dt, a_d, b_d, feedback)
    return ConditionalCavityState.from_vector(x, state.time + dt)


def adiabatic_amplitudes(params: SystemParams, a_d: complex,
                         b_d: complex) -> ConditionalCavityState:
    """Stationary amplitudes for constant drives."""
    k1, k2 = params.kappa_tilde1, params.kappa_tilde2
    d1 = k1 ** 2 + params.chi1 ** 2
    d2 = k2 ** 2 + params.chi2 ** 2
    if abs(d1) < 1e-300 or abs(d2) < 1e-300:
        raise ZeroDivisionError("degenerate adiabatic denominator")
    a = [a_d * (k1 - 1j * params.chi1 * s) / d1 for s in (1, -1)]
    b = []
    for q in range(4):
        r, s = divmod(q, 2)
        sz = 1 if s == 0 else -1
        b.append((params.kappa12 * a[r] + b_d) * (k2 - 1j * params.chi2 * sz) / d2)
    return ConditionalCavityState(a[0], a[1], *b)


def pi_diagonals(x) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals of ``Pi_a`` and ``Pi_b`` from amplitude vector(s) ``x[..., 6]``."""
    x = np.asarray(x, dtype=complex)
    pa = x[..., A_INDEX]
    pb = x[..., 2:6]
    return pa, pb


def pi_operators(state: ConditionalCavityState) -> tuple[np.ndarray, np.ndarray]:
    """``Pi_a`` and ``Pi_b`` as 4-entry diagonals."""
    return pi_diagonals(state.as_vector())


def pi_derivatives(state: ConditionalCavityState, params: SystemParams,
                   drives: Optional[DriveSet] = None, order: int = 1, *,
                   a_d=None, b_d=None, a_d_dot=None, b_d_dot=None):
    """Time derivatives of ``Pi_a`` and ``Pi_b`` (diagonals).

    Drive values default to ``drives`` evaluated at ``state.time``; explicit
    values override them.  ``order=2`` additionally needs the drive
    derivatives, taken analytically from the envelopes.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    t = state.time
    if a_d is None or b_d is None:
        if drives is None:
            raise ValueError("drive values or a DriveSet are required")
        a_d = drives.a_d(params, t) if a_d is None else a_d
        b_d = drives.b_d(params, t) if b_d is None else b_d
    pa, pb = pi_operators(state)
    k1 = params.kappa_tilde1 + 1j * params.chi1 * SZ1
    k2 = params.kappa_tilde2 + 1j * params.chi2 * SZ2
    dpa = -k1 * pa + a_d
    dpb = -k2 * pb + params.kappa12 * pa + b_d
    if order == 1:
        return dpa, dpb
    if a_d_dot is None or b_d_dot is None:
        if drives is None:
            raise ValueError("second derivatives need drive derivatives")
        a_d_dot = drives.a_d(params, t, 1) if a_d_dot is None else a_d_dot
        b_d_dot = drives.b_d(params, t, 1) if b_d_dot is None else b_d_dot
    ddpa = -k1 * dpa + a_d_dot
    ddpb = -k2 * dpb + params.kappa12 * dpa + b_d_dot
    return ddpa, ddpb


def output_fields(x, params: SystemParams) -> np.ndarray:
    """Conditional output fields ``B~^(ij)`` for amplitude vector(s) ``x``."""
    pa, pb = pi_diagonals(x)
    s1 = math.sqrt(params.kappa1 * params.eta_l)
    s2 = math.sqrt(params.kappa2)
    return np.exp(1j * params.phi) * (-s1 * pa + s2 * pb)


def conditional_output_fields(state: ConditionalCavityState,
                              params: SystemParams) -> np.ndarray:
    return output_fields(state.as_vector(), params)
