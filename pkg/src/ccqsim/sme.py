"""Conditioned qubit dynamics under continuous homodyne monitoring.

Because every operator in the reduced models is diagonal in the two-qubit
basis, each density-matrix element evolves by a scalar rate:
``d rho_jk = g_jk rho_jk dt + sqrt(eta_m) (c_j + c_k^*) rho_jk dY`` in the
unnormalized (linear) unraveling, with ``c`` the conditional output fields
and ``dY`` the homodyne record.  The frames differ only in ``g``:

* polaron: Stark shift from the drives, cavity losses and dephasing;
* lab (reduced): the ``chi`` cross terms and dephasing.

The two are linked by ``rho_lab = r o exp(Upsilon)`` with
``dUpsilon/dt = g_lab - g_polaron``.

Two steppers are provided.  The literal Euler-Maruyama steps
(:func:`step_polaron`, :func:`step_reduced_lab`) follow the normalized
nonlinear SME.  The production path integrates ``g`` exactly over each step
(Simpson rule on the piecewise-smooth amplitudes) and applies the
measurement as ``rho -> F rho F^dagger`` with ``F`` diagonal, which keeps
the polaron state positive by construction.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .cavity import (SZ1, SZ2, ConditionalCavityState, Feedback, output_fields,
                     pi_diagonals, propagate)
from .compensation import DriveLaw
from .errors import NumericalError, PositivityError
from .params import DriveSet, SystemParams

_I = np.array([0, 0, 1, 1])
_J = np.array([0, 1, 0, 1])
# (1 - delta_ik)(-1)^i and (1 - delta_jl)(-1)^j as 4x4 masks
_CROSS1 = (_I[:, None] != _I[None, :]) * ((-1.0) ** _I)[:, None]
_CROSS2 = (_J[:, None] != _J[None, :]) * ((-1.0) ** _J)[:, None]

CLIP_TOL = 1e-8
HERMITIAN_TOL = 1e-10


class Frame(str, enum.Enum):
    POLARON = "polaron"
    LAB_COMPENSATED = "lab-compensated"
    LAB_REDUCED = "lab-reduced"
    FULL = "full"

    @classmethod
    def parse(cls, value) -> "Frame":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown frame {value!r}") from None


@dataclass
class QubitState:
    """Two-qubit density matrix tagged with the frame it lives in."""

    rho: np.ndarray
    frame: str = "polaron"
    normalized: bool = True

    def __post_init__(self):
        self.rho = np.array(self.rho, dtype=complex)
        if self.rho.shape != (4, 4):
            raise ValueError("qubit state must be 4x4")

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.rho)))

    def normalized_copy(self) -> "QubitState":
        return QubitState(self.rho / self.trace, self.frame, True)

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.rho)).copy()

    def check(self, tol: float = HERMITIAN_TOL) -> None:
        herm = np.max(np.abs(self.rho - self.rho.conj().T))
        if herm > tol:
            raise NumericalError(f"density matrix not Hermitian ({herm:.2e})")
        lam = np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T))
        if lam.min() < -CLIP_TOL * max(self.trace, 1.0):
            raise PositivityError(f"negative eigenvalue {lam.min():.3e}")


def initial_state(kind: str = "plus") -> np.ndarray:
    """``plus``: ``|Psi0> = (|0>+|1>)(|0>+|1>)/2``; or a basis label like ``"01"``."""
    if kind == "plus":
        v = np.full(4, 0.5, dtype=complex)
    elif kind in ("psi+", "psi-"):
        v = np.zeros(4, dtype=complex)
        v[1] = 1 / math.sqrt(2)
        v[2] = v[1] if kind == "psi+" else -v[1]
    elif len(kind) == 2 and set(kind) <= {"0", "1"}:
        v = np.zeros(4, dtype=complex)
        v[int(kind, 2)] = 1
    else:
        raise ValueError(f"unknown initial state {kind!r}")
    return np.outer(v, v.conj())


# ---------------------------------------------------------------- rate kernels

def dissipator_kernel(d) -> np.ndarray:
    """``D[diag(d)]`` acting elementwise: ``d_j d_k^* - |d_j|^2/2 - |d_k|^2/2``."""
    d = np.asarray(d, dtype=complex)
    dj = d[..., :, None]
    dk = d[..., None, :]
    return dj * np.conj(dk) - 0.5 * np.abs(dj) ** 2 - 0.5 * np.abs(dk) ** 2


def dephasing_kernel(params: SystemParams) -> np.ndarray:
    """``sum_i gamma_d^i D[sigma_z^i]``: ``gamma_d^i (s_j s_k - 1)``."""
    return (params.gamma_d1 * (np.outer(SZ1, SZ1) - 1)
            + params.gamma_d2 * (np.outer(SZ2, SZ2) - 1)).astype(complex)


def stark_shifts(pa, pb, a_d, b_d) -> np.ndarray:
    """Diagonal of the polaron-frame qubit Hamiltonian.

    ``h_j = Im(A_d^* Pi_a,j) + Im(B_d^* Pi_b,j)``.
    """
    a_d = np.asarray(a_d)[..., None]
    b_d = np.asarray(b_d)[..., None]
    return np.imag(np.conj(a_d) * pa) + np.imag(np.conj(b_d) * pb)


def polaron_rates(params: SystemParams, x, a_d, b_d) -> np.ndarray:
    """Elementwise generator ``g^P`` of the polaron-frame reduced equation."""
    pa, pb = pi_diagonals(x)
    h = stark_shifts(pa, pb, a_d, b_d)
    s1 = math.sqrt(params.kappa1 * params.eta_l)
    s2 = math.sqrt(params.kappa2)
    g = -1j * (h[..., :, None] - h[..., None, :])
    g = g + params.gamma2 * dissipator_kernel(pb)
    g = g + (params.kappa1 * (1 - params.eta_l) + params.gamma1) * dissipator_kernel(pa)
    g = g + dissipator_kernel(-s1 * pa + s2 * pb)
    return g + dephasing_kernel(params)


def lab_rates(params: SystemParams, x) -> np.ndarray:
    """Elementwise generator ``g^L`` of the reduced lab-frame equation.

    ``a_ijkl = -2i chi1 (1-delta_ik)(-1)^i A^(k)* A^(i)
    - 2i chi2 (1-delta_jl)(-1)^j B^(kl)* B^(ij)`` plus dephasing.
    """
    pa, pb = pi_diagonals(x)
    cross_a = pa[..., :, None] * np.conj(pa[..., None, :])
    cross_b = pb[..., :, None] * np.conj(pb[..., None, :])
    g = -2j * params.chi1 * _CROSS1 * cross_a - 2j * params.chi2 * _CROSS2 * cross_b
    return g + dephasing_kernel(params)


def upsilon(x) -> np.ndarray:
    """Compensation exponent ``Upsilon_jk`` with ``rho = r o exp(Upsilon)``."""
    pa, pb = pi_diagonals(x)

    def part(p):
        pj = p[..., :, None]
        pk = p[..., None, :]
        return 1j * np.imag(np.conj(pk) * pj) - 0.5 * np.abs(pj - pk) ** 2

    return part(pa) + part(pb)


def measurement_kernel(c, eta_m: float) -> np.ndarray:
    """``eta_m c_j c_k^*``, the Ito correction removed from the deterministic exponent."""
    c = np.asarray(c)
    return eta_m * c[..., :, None] * np.conj(c[..., None, :])


# ------------------------------------------------------------- single steps

def _hcal(rho, c, eta_m):
    """Normalized measurement superoperator ``H[c] rho`` for diagonal ``c``."""
    m = np.sum(2 * np.real(c) * np.real(np.diag(rho)))
    return (c[:, None] + np.conj(c)[None, :]) * rho - m * rho


def _euler(rho, g, c, params, dW, dt):
    out = rho + g * rho * dt + math.sqrt(params.eta_m) * dW * _hcal(rho, c, params.eta_m)
    out = 0.5 * (out + out.conj().T)
    tr = np.real(np.trace(out))
    if not np.isfinite(tr) or tr <= 0:
        raise NumericalError("trace collapsed; reduce dt")
    return out / tr


def step_polaron(state: QubitState, fields: ConditionalCavityState,
                 params: SystemParams, dW: float, dt: float,
                 a_d: complex = 0j, b_d: complex = 0j) -> QubitState:
    """One Euler-Maruyama step of the normalized polaron-frame SME.

    ``fields`` and the drive values are taken at the start of the step.
    """
    if state.frame != "polaron":
        raise ValueError("step_polaron expects a polaron-frame state")
    x = fields.as_vector()
    g = polaron_rates(params, x, a_d, b_d)
    c = output_fields(x, params)
    return QubitState(_euler(state.rho, g, c, params, dW, dt), "polaron", True)


def step_reduced_lab(state: QubitState, fields: ConditionalCavityState,
                     params: SystemParams, dW: float, dt: float) -> QubitState:
    """One Euler-Maruyama step of the normalized reduced lab-frame SME."""
    if state.frame != "lab":
        raise ValueError("step_reduced_lab expects a lab-frame state")
    x = fields.as_vector()
    g = lab_rates(params, x)
    c = output_fields(x, params)
    return QubitState(_euler(state.rho, g, c, params, dW, dt), "lab", True)


def step_linear(rho: np.ndarray, g: np.ndarray, c: np.ndarray, eta_m: float,
                dY: float, dt: float) -> np.ndarray:
    """Unnormalized linear step driven by the record increment ``dY``.

    The trace is not preserved; it carries the likelihood of the record.
    """
    return rho + (g * dt + math.sqrt(eta_m) * (c[:, None] + np.conj(c)[None, :]) * dY) * rho


def record_increment(rho: np.ndarray, c: np.ndarray, eta_m: float, dW: float,
                     dt: float) -> float:
    """Physical record ``dY = dW + sqrt(eta_m) <c + c^dagger> dt``."""
    p = np.real(np.diag(rho)) / np.real(np.trace(rho))
    return dW + math.sqrt(eta_m) * float(np.sum(2 * np.real(c) * p)) * dt


def polaron_to_lab(state: QubitState, fields) -> QubitState:
    """Map a polaron-frame state to the lab frame; populations are unchanged."""
    if state.frame != "polaron":
        raise ValueError("polaron_to_lab expects a polaron-frame state")
    x = fields.as_vector() if isinstance(fields, ConditionalCavityState) else fields
    return QubitState(state.rho * np.exp(upsilon(x)), "lab", state.normalized)


def reduced_expectation(rho: np.ndarray, x, params: SystemParams) -> complex:
    """``<z>`` with ``z = -sqrt(kappa1 eta_l) Pi_a + sqrt(kappa2) Pi_b``."""
    pa, pb = pi_diagonals(x)
    z = -math.sqrt(params.kappa1 * params.eta_l) * pa + math.sqrt(params.kappa2) * pb
    p = np.real(np.diag(rho)) / np.real(np.trace(rho))
    return complex(np.sum(z * p))


def homodyne_increment(expectation: complex, params: SystemParams, dW: float,
                       dt: float) -> float:
    """Voltage increment ``V dt = sqrt(eta_m) Re(e^{i phi} <z>) dt + dW``."""
    return (math.sqrt(params.eta_m) * float(np.real(np.exp(1j * params.phi) * expectation))
            * dt + dW)


# ------------------------------------------------------------ optional terms

def _pauli(i: int, which: str) -> np.ndarray:
    s = {"x": np.array([[0, 1], [1, 0]], dtype=complex),
         "z": np.diag([1.0, -1.0]).astype(complex)}[which]
    eye = np.eye(2, dtype=complex)
    return np.kron(s, eye) if i == 1 else np.kron(eye, s)


def drive_guard_ratio(params: SystemParams, a_d: complex) -> float:
    """``max_i Omega_i |A_d| chi_i / kappa_i^3``; the dressed form needs it << 1."""
    r = 0.0
    for om, chi, kap in ((params.omega1, params.chi1, params.kappa1),
                         (params.omega2, params.chi2, params.kappa2)):
        if om == 0:
            continue
        if kap == 0:
            return math.inf
        r = max(r, abs(om) * abs(a_d) * abs(chi) / kap ** 3)
    return r


@dataclass
class DressedHamiltonian:
    H: np.ndarray
    anti_hermitian_norm: float
    guard_ratio: float


def dressed_drive_hamiltonian(params: SystemParams, a_d: complex, b_d: complex,
                              warn: float = 0.1, limit: float = 1.0) -> DressedHamiltonian:
    """Perturbative polaron-frame qubit drive for weak resonant Rabi drives.

    Returns the Hermitian part of the dressed Hamiltonian together with the
    norm of the discarded anti-Hermitian remainder.

    Raises
    ------
    NumericalError
        If the validity ratio ``Omega |A_d| chi / kappa^3`` exceeds ``limit``.
    """
    ratio = drive_guard_ratio(params, a_d)
    if ratio > limit:
        raise NumericalError(f"dressed drive outside validity (ratio {ratio:.3g})")
    if ratio > warn:
        warnings.warn(f"dressed drive near validity limit (ratio {ratio:.3g})",
                      RuntimeWarning, stacklevel=2)
    k1 = params.kappa1 / 2 + 1j * params.delta1
    k2 = params.kappa2 / 2 + 1j * params.delta2
    c1, c2, o1, o2 = params.chi1, params.chi2, params.omega1, params.omega2

    def ratio_(num, den):
        return num / den if den != 0 else 0j

    mu1 = ratio_(2 * c1, k1 ** 2 + c1 ** 2)
    mu2 = ratio_(2 * c2, k2 ** 2 + c2 ** 2)
    zeta1 = ratio_(params.kappa12 * k1, k1 ** 2 + c1 ** 2)
    zeta2 = ratio_(params.kappa12 * k2, k2 ** 2 + c2 ** 2)
    lam = b_d * mu2 + a_d * mu2 * zeta1
    x1, z1, x2, z2 = _pauli(1, "x"), _pauli(1, "z"), _pauli(2, "x"), _pauli(2, "z")
    q1 = 2 * o1 ** 2 * x1 + o1 * c1 * z1
    q2 = 2 * o2 ** 2 * x2 + o2 * c2 * z2
    h = o1 * x1 + o2 * x2
    if o1 != 0:
        h = h - a_d ** 2 * mu1 ** 2 * ratio_(1, k1 ** 2 - c1 ** 2 - 4 * o1 ** 2) * q1
        h = h + (a_d ** 2 * mu1 ** 2 * zeta2 ** 2
                 * ratio_(1, k2 ** 2 - c1 ** 2 - 4 * o1 ** 2)) * q1
    if o2 != 0:
        h = h - 2 * lam ** 2 * ratio_(1, k2 ** 2 - c2 ** 2 - 4 * o2 ** 2) * q2
    herm = 0.5 * (h + h.conj().T)
    anti = 0.5 * (h - h.conj().T)
    return DressedHamiltonian(herm, float(np.max(np.abs(anti))), ratio)


def sigma_minus(i: int) -> np.ndarray:
    """Qubit lowering ``|0><1|`` on qubit ``i`` (ground state ``|0>``)."""
    sm = np.array([[0, 1], [0, 0]], dtype=complex)
    eye = np.eye(2, dtype=complex)
    return np.kron(sm, eye) if i == 1 else np.kron(eye, sm)


def relaxation_superoperator(params: SystemParams) -> np.ndarray:
    """``sum_i gamma_r^i D[sigma_-^i]`` on row-major ``vec(rho)`` (16x16)."""
    eye = np.eye(4)
    out = np.zeros((16, 16), dtype=complex)
    for i, rate in ((1, params.gamma_r1), (2, params.gamma_r2)):
        if rate == 0:
            continue
        l = sigma_minus(i)
        ll = l.conj().T @ l
        out += rate * (np.kron(l, l.conj()) - 0.5 * np.kron(ll, eye)
                       - 0.5 * np.kron(eye, ll.T))
    return out


def add_relaxation(state: QubitState, params: SystemParams, dt: float) -> QubitState:
    """Euler step of qubit relaxation in the lab frame."""
    if state.frame != "lab":
        raise ValueError("relaxation is only valid in the lab frame")
    rho = state.rho + dt * (relaxation_superoperator(params) @ state.rho.ravel()).reshape(4, 4)
    return QubitState(rho, "lab", state.normalized)


# ------------------------------------------------------------ field schedule

@dataclass
class FieldSchedule:
    """Deterministic amplitudes and drives on a uniform time grid.

    The effective cavity-1 drive is held at its step-midpoint value.  The
    cavity-2 drive is sampled at the three Simpson nodes of every step (it
    varies within a step only under dynamic compensation).
    """

    params: SystemParams
    dt: float
    times: np.ndarray      # (K+1,)
    x: np.ndarray          # (K+1, 6) amplitudes at grid points
    xm: np.ndarray         # (K, 6) amplitudes at step midpoints
    a_step: np.ndarray     # (K,) held A_d
    b_nodes: np.ndarray    # (K, 3) B_d at t_n, midpoint, t_{n+1}

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def c(self) -> np.ndarray:
        return output_fields(self.x, self.params)

    @property
    def cm(self) -> np.ndarray:
        return output_fields(self.xm, self.params)

    def state(self, n: int) -> ConditionalCavityState:
        return ConditionalCavityState.from_vector(self.x[n], self.times[n])

    def _simpson(self, f0, fm, f1):
        return self.dt / 6.0 * (f0 + 4 * fm + f1)

    def rate_integrals(self, frame: Frame) -> np.ndarray:
        """``int (g - eta_m c c^*) dt`` over each step, shape (K, 4, 4)."""
        p = self.params
        frame = Frame.parse(frame)
        c, cm = self.c, self.cm
        if frame is Frame.LAB_REDUCED:
            g0 = lab_rates(p, self.x[:-1])
            gm = lab_rates(p, self.xm)
            g1 = lab_rates(p, self.x[1:])
        elif frame in (Frame.POLARON, Frame.LAB_COMPENSATED):
            g0 = polaron_rates(p, self.x[:-1], self.a_step, self.b_nodes[:, 0])
            gm = polaron_rates(p, self.xm, self.a_step, self.b_nodes[:, 1])
            g1 = polaron_rates(p, self.x[1:], self.a_step, self.b_nodes[:, 2])
        else:
            raise ValueError(f"no reduced rates for frame {frame.value}")
        g0 = g0 - measurement_kernel(c[:-1], p.eta_m)
        gm = gm - measurement_kernel(cm, p.eta_m)
        g1 = g1 - measurement_kernel(c[1:], p.eta_m)
        return self._simpson(g0, gm, g1)

    def upsilon(self, n=None) -> np.ndarray:
        return upsilon(self.x if n is None else self.x[n])

    def conditional_signal(self) -> np.ndarray:
        """Deterministic integrated voltage per basis state, shape (4,)."""
        c = self.c[1:]
        return math.sqrt(self.params.eta_m) * np.sum(np.real(c), axis=0) * self.dt


def build_schedule(params: SystemParams, drives: DriveSet, law: DriveLaw,
                   dt: float, n_steps: int, t0: float = 0.0,
                   x0=None) -> FieldSchedule:
    """Integrate the conditional amplitudes exactly for piecewise-constant ``A_d``."""
    if dt <= 0 or n_steps < 1:
        raise ValueError("need dt > 0 and at least one step")
    times = t0 + dt * np.arange(n_steps + 1)
    tm = times[:-1] + dt / 2
    a_step = np.asarray(drives.a_d(params, tm), dtype=complex) * np.ones(n_steps)
    fb: Optional[Feedback] = law.feedback
    if fb is None:
        b_ext = np.asarray(law.open_loop(tm), dtype=complex) * np.ones(n_steps)
    else:
        b_ext = np.zeros(n_steps, dtype=complex)
    x = np.zeros((n_steps + 1, 6), dtype=complex)
    xm = np.zeros((n_steps, 6), dtype=complex)
    if x0 is not None:
        x[0] = np.asarray(x0, dtype=complex)
    phi, psi = _pair(params, dt, fb)
    phih, psih = _pair(params, dt / 2, fb)
    u = np.stack([a_step, b_ext], axis=1)
    for n in range(n_steps):
        xm[n] = phih @ x[n] + psih @ u[n]
        x[n + 1] = phi @ x[n] + psi @ u[n]
    if fb is None:
        b_nodes = np.repeat(b_ext[:, None], 3, axis=1)
    else:
        b_nodes = np.stack([fb.b_drive(x[:-1], a_step), fb.b_drive(xm, a_step),
                            fb.b_drive(x[1:], a_step)], axis=1)
    return FieldSchedule(params, float(dt), times, x, xm, a_step, b_nodes)


def _pair(params, dt, fb):
    from .cavity import _propagator
    return _propagator(params, float(dt), fb)


# ------------------------------------------------------------ batch kernel

@njit(cache=True)
def _batch_kernel(rho0, gexp, cnext, dw, sqrt_eta, eta, dt, stride, hd, relax,
                  snaps, finals, vint, vtrace):
    ntraj = dw.shape[0]
    nsteps = dw.shape[1]
    use_hd = hd.shape[0] > 0
    use_relax = relax.shape[0] > 0
    rec_v = vtrace.shape[0] > 0
    rho = np.empty((4, 4), dtype=np.complex128)
    tmp = np.empty((4, 4), dtype=np.complex128)
    f = np.empty(4, dtype=np.complex128)
    for t in range(ntraj):
        for j in range(4):
            for k in range(4):
                rho[j, k] = rho0[j, k]
        snaps[t, 0] = rho
        acc = 0.0
        for n in range(nsteps):
            if use_hd:
                for j in range(4):
                    for k in range(4):
                        s = 0j
                        for m in range(4):
                            s += hd[n, j, m] * rho[m, k] - rho[j, m] * hd[n, m, k]
                        tmp[j, k] = s
                for j in range(4):
                    for k in range(4):
                        rho[j, k] += -1j * dt * tmp[j, k]
            if use_relax:
                for p in range(16):
                    s = 0j
                    for q in range(16):
                        s += relax[p, q] * rho[q // 4, q % 4]
                    tmp[p // 4, p % 4] = s
                for j in range(4):
                    for k in range(4):
                        rho[j, k] += dt * tmp[j, k]
            for j in range(4):
                for k in range(4):
                    rho[j, k] *= gexp[n, j, k]
            tr = 0.0
            for j in range(4):
                tr += rho[j, j].real
            m2 = 0.0
            for j in range(4):
                m2 += 2.0 * cnext[n, j].real * rho[j, j].real / tr
            dy = dw[t, n] + sqrt_eta * m2 * dt
            for j in range(4):
                u = sqrt_eta * cnext[n, j] * dy
                f[j] = 1.0 + u + 0.5 * u * u - 0.5 * eta * cnext[n, j] * cnext[n, j] * dt
            tr = 0.0
            for j in range(4):
                for k in range(4):
                    rho[j, k] *= f[j] * np.conj(f[k])
                tr += rho[j, j].real
            for j in range(4):
                rho[j, j] = rho[j, j].real / tr
                for k in range(j + 1, 4):
                    v = 0.5 * (rho[j, k] + np.conj(rho[k, j])) / tr
                    rho[j, k] = v
                    rho[k, j] = np.conj(v)
            inc = 0.5 * sqrt_eta * m2 * dt + dw[t, n]
            acc += inc
            if rec_v:
                vtrace[t, n] = inc / dt
            if (n + 1) % stride == 0:
                snaps[t, (n + 1) // stride] = rho
        finals[t] = rho
        vint[t] = acc


@dataclass
class BatchResult:
    """Per-trajectory outputs of :func:`integrate_batch`."""

    frame: Frame
    snapshot_times: np.ndarray
    snapshots: np.ndarray          # (n, S, 4, 4)
    final: np.ndarray              # (n, 4, 4)
    integrated_voltage: np.ndarray  # (n,) raw integral of V dt
    voltage: Optional[np.ndarray] = None  # (n, K) if recorded
    clipped: int = 0


@dataclass
class Extras:
    """Optional qubit drive (polaron frame) and relaxation (lab frame)."""

    dressed: Optional[np.ndarray] = None   # (K, 4, 4)
    relax: Optional[np.ndarray] = None     # (16, 16)
    anti_hermitian_max: float = 0.0


def build_extras(schedule: FieldSchedule, frame: Frame) -> Extras:
    p = schedule.params
    frame = Frame.parse(frame)
    ex = Extras()
    if p.omega1 != 0 or p.omega2 != 0:
        if frame not in (Frame.POLARON, Frame.LAB_COMPENSATED):
            raise ValueError("qubit drives are supported in the polaron frame only")
        hs = np.empty((schedule.n_steps, 4, 4), dtype=complex)
        worst = 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for n in range(schedule.n_steps):
                d = dressed_drive_hamiltonian(p, schedule.a_step[n], schedule.b_nodes[n, 1])
                hs[n] = d.H
                worst = max(worst, d.anti_hermitian_norm)
        ratio = max(drive_guard_ratio(p, a) for a in (np.max(np.abs(schedule.a_step)),))
        if ratio > 0.1:
            warnings.warn(f"dressed drive near validity limit (ratio {ratio:.3g})",
                          RuntimeWarning, stacklevel=2)
        ex.dressed = hs
        ex.anti_hermitian_max = worst
    if p.gamma_r1 != 0 or p.gamma_r2 != 0:
        if frame is not Frame.LAB_REDUCED:
            raise ValueError("qubit relaxation is supported in the lab-reduced frame only")
        ex.relax = relaxation_superoperator(p)
    return ex


def check_positivity(rhos: np.ndarray, tol: float = CLIP_TOL) -> tuple[np.ndarray, int]:
    """Clip eigenvalues in ``[-tol, 0)`` to zero and renormalize.

    Returns the repaired stack and the number of matrices that needed it.

    Raises
    ------
    PositivityError
        If any eigenvalue is below ``-tol``.
    """
    flat = rhos.reshape(-1, 4, 4)
    herm = 0.5 * (flat + np.conj(np.swapaxes(flat, -1, -2)))
    lam, vec = np.linalg.eigh(herm)
    if lam.min(initial=0.0) < -tol:
        raise PositivityError(f"negative eigenvalue {lam.min():.3e} beyond clip tolerance")
    bad = np.any(lam < 0, axis=-1)
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        lam_c = np.clip(lam[bad], 0.0, None)
        lam_c /= lam_c.sum(axis=-1, keepdims=True)
        fixed = np.einsum("nij,nj,nkj->nik", vec[bad], lam_c, np.conj(vec[bad]))
        flat = flat.copy()
        flat[bad] = fixed
    return flat.reshape(rhos.shape), n_bad


def integrate_batch(schedule: FieldSchedule, frame, rho0: np.ndarray, dW: np.ndarray,
                    stride: int = 1, record_voltage: bool = False,
                    extras: Optional[Extras] = None,
                    gexp: Optional[np.ndarray] = None) -> BatchResult:
    """Integrate a batch of trajectories sharing one field schedule.

    Parameters
    ----------
    schedule : FieldSchedule
    frame : Frame or str
        ``polaron``, ``lab-compensated`` (polaron run mapped by ``Upsilon``)
        or ``lab-reduced``.
    rho0 : ndarray (4, 4)
        Initial state; cavities start empty so it is the same in all frames.
    dW : ndarray (n, K)
        Wiener increments.
    stride : int
        Snapshot every ``stride`` steps; snapshot 0 is the initial state.
    gexp : ndarray (K, 4, 4), optional
        Precomputed ``exp`` of :meth:`FieldSchedule.rate_integrals`.
    """
    frame = Frame.parse(frame)
    if frame is Frame.FULL:
        raise ValueError("the full model is integrated by ccqsim.full_model")
    dW = np.ascontiguousarray(np.atleast_2d(dW), dtype=float)
    K = schedule.n_steps
    if dW.shape[1] != K:
        raise ValueError(f"expected {K} increments per trajectory, got {dW.shape[1]}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    run_frame = Frame.POLARON if frame is Frame.LAB_COMPENSATED else frame
    if gexp is None:
        gexp = np.exp(schedule.rate_integrals(run_frame))
    extras = extras if extras is not None else build_extras(schedule, frame)
    hd = extras.dressed if extras.dressed is not None else np.zeros((0, 4, 4), complex)
    relax = extras.relax if extras.relax is not None else np.zeros((0, 16), complex)
    n = dW.shape[0]
    n_snap = K // stride + 1
    snaps = np.zeros((n, n_snap, 4, 4), dtype=complex)
    finals = np.zeros((n, 4, 4), dtype=complex)
    vint = np.zeros(n)
    vtrace = np.zeros((n, K)) if record_voltage else np.zeros((0, 0))
    cnext = np.ascontiguousarray(schedule.c[1:])
    p = schedule.params
    _batch_kernel(np.asarray(rho0, dtype=complex), np.ascontiguousarray(gexp), cnext, dW,
                  math.sqrt(p.eta_m), p.eta_m, schedule.dt, int(stride),
                  np.ascontiguousarray(hd), np.ascontiguousarray(relax),
                  snaps, finals, vint, vtrace)
    if not (np.all(np.isfinite(finals)) and np.all(np.isfinite(snaps))):
        raise NumericalError("non-finite density matrix; reduce dt")
    idx = np.arange(n_snap) * stride
    if frame is Frame.LAB_COMPENSATED:
        snaps = snaps * np.exp(schedule.upsilon(idx))[None]
        finals = finals * np.exp(schedule.upsilon(K))[None]
    snaps, c1 = check_positivity(snaps)
    finals, c2 = check_positivity(finals)
    return BatchResult(frame, schedule.times[idx], snaps, finals, vint,
                       vtrace if record_voltage else None, c1 + c2)


def integrate_reference(schedule: FieldSchedule, frame, rho0: np.ndarray,
                        dW: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Pure-numpy version of the production scheme for one trajectory.

    With ``normalize=False`` the linear (unnormalized) unraveling is
    followed, driven by the same physical record; the returned states then
    carry the record likelihood in their trace.
    """
    frame = Frame.parse(frame)
    run_frame = Frame.POLARON if frame is Frame.LAB_COMPENSATED else frame
    gexp = np.exp(schedule.rate_integrals(run_frame))
    cn = schedule.c[1:]
    p = schedule.params
    se = math.sqrt(p.eta_m)
    out = np.empty((schedule.n_steps + 1, 4, 4), dtype=complex)
    rho = np.array(rho0, dtype=complex)
    out[0] = rho
    for n in range(schedule.n_steps):
        rho = rho * gexp[n]
        dy = record_increment(rho, cn[n], p.eta_m, dW[n], schedule.dt)
        u = se * cn[n] * dy
        f = 1 + u + 0.5 * u * u - 0.5 * p.eta_m * cn[n] ** 2 * schedule.dt
        rho = rho * f[:, None] * np.conj(f)[None, :]
        if normalize:
            rho = rho / np.real(np.trace(rho))
        out[n + 1] = rho
    if frame is Frame.LAB_COMPENSATED:
        out = out * np.exp(schedule.upsilon())
    return out


def integrate_euler(schedule: FieldSchedule, frame, rho0: np.ndarray,
                    dW: np.ndarray) -> np.ndarray:
    """Literal Euler-Maruyama integration with :func:`step_polaron` / :func:`step_reduced_lab`."""
    frame = Frame.parse(frame)
    lab = frame is Frame.LAB_REDUCED
    st = QubitState(rho0, "lab" if lab else "polaron")
    out = [st.rho]
    for n in range(schedule.n_steps):
        f = schedule.state(n)
        if lab:
            st = step_reduced_lab(st, f, schedule.params, dW[n], schedule.dt)
        else:
            st = step_polaron(st, f, schedule.params, dW[n], schedule.dt,
                              schedule.a_step[n], schedule.b_nodes[n, 0])
        out.append(st.rho)
    return np.array(out)


@dataclass
class TrajectoryRecord:
    """Everything recorded for one trajectory."""

    index: int
    times: np.ndarray
    dW: np.ndarray
    voltage: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray
    integrated_voltage: float
    normalized_voltage: float
    outcome: str = "unresolved"
    frame: str = "polaron"
    clipped: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]


__all__ = [
    "Frame", "QubitState", "initial_state", "polaron_rates", "lab_rates", "upsilon",
    "step_polaron", "step_reduced_lab", "step_linear", "polaron_to_lab",
    "homodyne_increment", "reduced_expectation", "record_increment",
    "dressed_drive_hamiltonian", "add_relaxation", "relaxation_superoperator",
    "FieldSchedule", "build_schedule", "integrate_batch", "integrate_reference",
    "integrate_euler", "check_positivity", "TrajectoryRecord", "BatchResult",
    "Extras", "build_extras",
]
