"""Truncated-Fock reference model of the two qubits and both cavity modes.

This is the oracle the reduced equations are checked against.  The state is
the full density matrix on ``q1 x q2 x a x b``, stored as a tensor
``rho[q, na, nb, q', na', nb']``.  All operators of the model are diagonal in
the qubit basis and act on the Fock indices as ladder shifts, so the
generator is applied by a fused loop instead of matrix products.

The deterministic part of the conditioned master equation is stepped with
classical RK4 and the measurement with the same second-order diagonal factor
``1 + sqrt(eta) z dY + eta z^2 (dY^2 - dt)/2`` the reduced models use, so both
discretize the same record-driven dynamics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .cavity import SZ1, SZ2
from .errors import NumericalError, TruncationError
from .params import SystemParams
from .sme import FieldSchedule

GUARD = 1e-6


@njit(cache=True)
def _generator(rho, dk, cab, cba, ca_up, ca_dn, cb_up, cb_dn,
               ja, jb, jab, jd, out):
    """``out = -i K rho + i rho K^dagger + sum_j L_j rho L_j^dagger``.

    ``K`` is the non-Hermitian effective Hamiltonian written in ladder form;
    ``ja, jb, jab`` weight ``a rho a^dag``, ``b rho b^dag`` and the two cross
    jumps, ``jd`` the qubit dephasing jumps.
    """
    nq, na, nb = rho.shape[0], rho.shape[1], rho.shape[2]
    sa = np.sqrt(np.arange(na + 1).astype(np.float64))
    sb = np.sqrt(np.arange(nb + 1).astype(np.float64))
    use_a = ja != 0
    use_b = jb != 0
    use_ab = jab != 0
    ccab, ccba = np.conj(cab), np.conj(cba)
    cca_up, cca_dn = np.conj(ca_up), np.conj(ca_dn)
    ccb_up, ccb_dn = np.conj(cb_up), np.conj(cb_dn)
    for q in range(nq):
        for n in range(na):
            for m in range(nb):
                d = dk[q, n, m]
                for q2 in range(nq):
                    jdq = jd[q, q2]
                    for n2 in range(na):
                        for m2 in range(nb):
                            r = rho[q, n, m, q2, n2, m2]
                            # left action of K
                            v = d * r
                            if n > 0:
                                v += ca_up * sa[n] * rho[q, n - 1, m, q2, n2, m2]
                                if m < nb - 1:
                                    v += cab * sa[n] * sb[m + 1] * rho[q, n - 1, m + 1, q2, n2, m2]
                            if n < na - 1:
                                v += ca_dn * sa[n + 1] * rho[q, n + 1, m, q2, n2, m2]
                                if m > 0:
                                    v += cba * sa[n + 1] * sb[m] * rho[q, n + 1, m - 1, q2, n2, m2]
                            if m > 0:
                                v += cb_up * sb[m] * rho[q, n, m - 1, q2, n2, m2]
                            if m < nb - 1:
                                v += cb_dn * sb[m + 1] * rho[q, n, m + 1, q2, n2, m2]
                            # right action of K^dagger
                            w = np.conj(dk[q2, n2, m2]) * r
                            if n2 > 0:
                                w += cca_up * sa[n2] * rho[q, n, m, q2, n2 - 1, m2]
                                if m2 < nb - 1:
                                    w += ccab * sa[n2] * sb[m2 + 1] * rho[q, n, m, q2, n2 - 1, m2 + 1]
                            if n2 < na - 1:
                                w += cca_dn * sa[n2 + 1] * rho[q, n, m, q2, n2 + 1, m2]
                                if m2 > 0:
                                    w += ccba * sa[n2 + 1] * sb[m2] * rho[q, n, m, q2, n2 + 1, m2 - 1]
                            if m2 > 0:
                                w += ccb_up * sb[m2] * rho[q, n, m, q2, n2, m2 - 1]
                            if m2 < nb - 1:
                                w += ccb_dn * sb[m2 + 1] * rho[q, n, m, q2, n2, m2 + 1]
                            j = jdq * r
                            if use_a and n < na - 1 and n2 < na - 1:
                                j += ja * sa[n + 1] * sa[n2 + 1] * rho[q, n + 1, m, q2, n2 + 1, m2]
                            if use_b and m < nb - 1 and m2 < nb - 1:
                                j += jb * sb[m + 1] * sb[m2 + 1] * rho[q, n, m + 1, q2, n2, m2 + 1]
                            if use_ab:
                                if n < na - 1 and m2 < nb - 1:
                                    j += jab * sa[n + 1] * sb[m2 + 1] * rho[q, n + 1, m, q2, n2, m2 + 1]
                                if m < nb - 1 and n2 < na - 1:
                                    j += jab * sb[m + 1] * sa[n2 + 1] * rho[q, n, m + 1, q2, n2 + 1, m2]
                            out[q, n, m, q2, n2, m2] = -1j * v + 1j * w + j


@njit(cache=True)
def _measure(rho, za, zb, al, be, right, out):
    """One side of ``M rho M^dagger`` with ``M = 1 + al z + be z^2``.

    ``right=False`` applies ``M`` to the row indices, ``right=True`` applies
    ``M^dagger`` to the column indices.
    """
    nq, na, nb = rho.shape[0], rho.shape[1], rho.shape[2]
    sa = np.sqrt(np.arange(na + 2).astype(np.float64))
    sb = np.sqrt(np.arange(nb + 2).astype(np.float64))
    c_a, c_b = al * za, al * zb
    c_aa, c_bb, c_ab = be * za * za, be * zb * zb, 2 * be * za * zb
    if right:
        c_a, c_b, c_aa, c_bb, c_ab = (np.conj(c_a), np.conj(c_b), np.conj(c_aa),
                                      np.conj(c_bb), np.conj(c_ab))
    for q in range(nq):
        for n in range(na):
            for m in range(nb):
                for q2 in range(nq):
                    for n2 in range(na):
                        for m2 in range(nb):
                            v = rho[q, n, m, q2, n2, m2]
                            if not right:
                                i, k = n, m
                            else:
                                i, k = n2, m2
                            if i < na - 1:
                                f = c_a * sa[i + 1]
                                v += f * (rho[q, n + 1, m, q2, n2, m2] if not right
                                          else rho[q, n, m, q2, n2 + 1, m2])
                                if k < nb - 1:
                                    f = c_ab * sa[i + 1] * sb[k + 1]
                                    v += f * (rho[q, n + 1, m + 1, q2, n2, m2] if not right
                                              else rho[q, n, m, q2, n2 + 1, m2 + 1])
                            if i < na - 2:
                                f = c_aa * sa[i + 1] * sa[i + 2]
                                v += f * (rho[q, n + 2, m, q2, n2, m2] if not right
                                          else rho[q, n, m, q2, n2 + 2, m2])
                            if k < nb - 1:
                                f = c_b * sb[k + 1]
                                v += f * (rho[q, n, m + 1, q2, n2, m2] if not right
                                          else rho[q, n, m, q2, n2, m2 + 1])
                            if k < nb - 2:
                                f = c_bb * sb[k + 1] * sb[k + 2]
                                v += f * (rho[q, n, m + 2, q2, n2, m2] if not right
                                          else rho[q, n, m, q2, n2, m2 + 2])
                            out[q, n, m, q2, n2, m2] = v


@njit(cache=True)
def _z_trace(rho, za, zb):
    """``tr(z rho)``."""
    nq, na, nb = rho.shape[0], rho.shape[1], rho.shape[2]
    s = 0j
    for q in range(nq):
        for n in range(na):
            for m in range(nb):
                if n < na - 1:
                    s += za * math.sqrt(n + 1) * rho[q, n + 1, m, q, n, m]
                if m < nb - 1:
                    s += zb * math.sqrt(m + 1) * rho[q, n, m + 1, q, n, m]
    return s


def _dag(x: np.ndarray) -> np.ndarray:
    return np.conj(x.transpose(3, 4, 5, 0, 1, 2))


@dataclass(frozen=True)
class FockLayout:
    """Fock cutoffs of the two modes (photon numbers ``0 .. n-1``)."""

    na: int = 16
    nb: int = 16

    def __post_init__(self):
        if self.na < 3 or self.nb < 3:
            raise ValueError("Fock cutoffs must be at least 3")

    @property
    def shape(self) -> tuple:
        return (4, self.na, self.nb, 4, self.na, self.nb)

    @property
    def dim(self) -> int:
        return 4 * self.na * self.nb


@dataclass
class FullState:
    varrho: np.ndarray  # (4, na, nb, 4, na, nb)
    layout: FockLayout

    @classmethod
    def from_qubits(cls, rho4: np.ndarray, layout: FockLayout) -> "FullState":
        r = np.zeros(layout.shape, dtype=complex)
        r[:, 0, 0, :, 0, 0] = np.asarray(rho4, dtype=complex)
        return cls(r, layout)

    def matrix(self) -> np.ndarray:
        d = self.layout.dim
        return self.varrho.reshape(d, d)

    def trace(self) -> float:
        return float(np.real(np.einsum("qnmqnm->", self.varrho)))

    def qubit_marginal(self) -> np.ndarray:
        return np.einsum("inmjnm->ij", self.varrho)

    def mean_fields(self) -> tuple[complex, complex]:
        """``(<a>, <b>)``."""
        r = self.varrho
        na, nb = self.layout.na, self.layout.nb
        sa = np.sqrt(np.arange(1, na))
        sb = np.sqrt(np.arange(1, nb))
        ea = np.einsum("qnmqnm,n->", r[:, 1:, :, :, :-1, :], sa)
        eb = np.einsum("qnmqnm,m->", r[:, :, 1:, :, :, :-1], sb)
        return complex(ea), complex(eb)

    def top_population(self) -> float:
        pops = np.real(np.einsum("qnmqnm->nm", self.varrho))
        na, nb = self.layout.na, self.layout.nb
        return float(pops[na - 2:, :].sum() + pops[:na - 2, nb - 2:].sum())

    def guard(self, limit: float = GUARD) -> None:
        pop = self.top_population()
        if not np.isfinite(pop) or not np.all(np.isfinite(self.varrho)):
            raise NumericalError("full model state is not finite")
        if pop >= limit:
            raise TruncationError(
                f"population {pop:.2e} in the top two Fock levels; increase the cutoff")


class FullModel:
    """Conditioned master equation of the full cascade for one field schedule.

    The drives come from ``schedule`` so that the oracle sees exactly the
    drive sequence of the reduced run: ``A_d`` held per step and ``B_d`` at
    the RK4 stage times.
    """

    def __init__(self, schedule: FieldSchedule, layout: Optional[FockLayout] = None):
        self.s = schedule
        self.p: SystemParams = schedule.params
        self.L = layout or FockLayout()
        p, L = self.p, self.L
        s1 = math.sqrt(p.kappa1 * p.eta_l)
        s2 = math.sqrt(p.kappa2)
        self.s1, self.s2 = s1, s2
        n = np.arange(L.na)[None, :, None]
        m = np.arange(L.nb)[None, None, :]
        sz1 = SZ1[:, None, None]
        sz2 = SZ2[:, None, None]
        decay_a = p.kappa1 * (1 - p.eta_l) + p.gamma1 + s1 * s1
        decay_b = p.gamma2 + s2 * s2
        self.dk = ((p.delta1 + p.chi1 * sz1) * n + (p.delta2 + p.chi2 * sz2) * m
                   - 0.5j * (decay_a * n + decay_b * m + p.gamma_d1 + p.gamma_d2)
                   ).astype(complex)
        # H: -(i k12/2)(a^dag b - b^dag a); decay: -(i/2)(-s1 s2)(a^dag b + b^dag a)
        self.cab = -0.5j * p.kappa12 + 0.5j * s1 * s2
        self.cba = 0.5j * p.kappa12 + 0.5j * s1 * s2
        wm = 1 - p.eta_m
        self.ja = p.kappa1 * (1 - p.eta_l) + p.gamma1 + wm * s1 * s1
        self.jb = p.gamma2 + wm * s2 * s2
        self.jab = -wm * s1 * s2
        self.jd = (p.gamma_d1 * np.outer(SZ1, SZ1) + p.gamma_d2 * np.outer(SZ2, SZ2)
                   ).astype(complex)
        ph = np.exp(1j * p.phi)
        self.za, self.zb = -s1 * ph, s2 * ph

    def _rhs(self, rho, a_d, b_d):
        out = np.empty_like(rho)
        # drive part of K: i(A a^dag - A^* a + B b^dag - B^* b)
        _generator(rho, self.dk, self.cab, self.cba,
                   1j * a_d, -1j * np.conj(a_d), 1j * b_d, -1j * np.conj(b_d),
                   self.ja, self.jb, self.jab, self.jd, out)
        return out

    def step(self, state: FullState, n: int, dW: float) -> FullState:
        """Advance ``state`` over step ``n`` of the schedule."""
        s, dt, p = self.s, self.s.dt, self.p
        a_d = s.a_step[n]
        b0, bm, b1 = s.b_nodes[n]
        rho = state.varrho
        r1 = self._rhs(rho, a_d, b0)
        r2 = self._rhs(rho + 0.5 * dt * r1, a_d, bm)
        r3 = self._rhs(rho + 0.5 * dt * r2, a_d, bm)
        r4 = self._rhs(rho + dt * r3, a_d, b1)
        rho = rho + dt / 6.0 * (r1 + 2 * r2 + 2 * r3 + r4)
        tr = float(np.real(np.einsum("qnmqnm->", rho)))
        mean = complex(_z_trace(rho, self.za, self.zb)) / tr
        dy = dW + math.sqrt(p.eta_m) * 2 * mean.real * dt
        self.last_increment = 0.5 * math.sqrt(p.eta_m) * 2 * mean.real * dt + dW
        al = math.sqrt(p.eta_m) * dy
        be = 0.5 * p.eta_m * (dy * dy - dt)
        y = np.empty_like(rho)
        _measure(rho, self.za, self.zb, al, be, False, y)
        _measure(y, self.za, self.zb, al, be, True, rho)
        tr = float(np.real(np.einsum("qnmqnm->", rho)))
        if not np.isfinite(tr) or tr <= 0:
            raise NumericalError("full model trace collapsed")
        rho /= tr
        return FullState(rho, state.layout)

    def run(self, rho4: np.ndarray, dW: np.ndarray, stride: int = 1,
            guard_every: int = 50):
        """Integrate one trajectory from empty cavities.

        Returns
        -------
        idx : ndarray
            Step indices of the snapshots (0 is the initial state).
        marginals : ndarray (S, 4, 4)
            Qubit marginals.
        fields : ndarray (S, 2)
            ``<a>`` and ``<b>``.

        The integrated voltage of the run is left in ``integrated_voltage``.
        """
        st = FullState.from_qubits(rho4, self.L)
        self.integrated_voltage = 0.0
        idx, marg, fields = [0], [st.qubit_marginal()], [(0j, 0j)]
        for n in range(self.s.n_steps):
            st = self.step(st, n, dW[n])
            self.integrated_voltage += self.last_increment
            if (n + 1) % guard_every == 0 or n + 1 == self.s.n_steps:
                st.guard()
            if (n + 1) % stride == 0:
                idx.append(n + 1)
                marg.append(st.qubit_marginal())
                fields.append(st.mean_fields())
        return np.array(idx), np.array(marg), np.array(fields)


def step_full_oracle(state: FullState, model: FullModel, n: int, dW: float) -> FullState:
    """Guarded single step of the full conditioned master equation."""
    state.guard()
    return model.step(state, n, dW)
