"""SLH triples on a truncated qubit-qubit-cavity-cavity Hilbert space.

Operators are dense complex matrices.  A triple with ``n`` ports stores ``S``
as an ``(n, n, d, d)`` array (scalars as multiples of the identity), ``L`` as
``(n, d, d)`` and ``H`` as ``(d, d)``.  Tensor order is qubit 1, qubit 2,
cavity a, cavity b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, reduce
from typing import Callable, Optional, Sequence

import numpy as np

from .params import DriveSet, SystemParams

TOL = 1e-10


def _destroy(n: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)


@dataclass(frozen=True)
class HilbertLayout:
    """Subsystem dimensions: two qubits followed by two Fock modes."""

    qubit_dims: tuple = (2, 2)
    fock_dims: tuple = (16, 16)

    def __post_init__(self):
        object.__setattr__(self, "qubit_dims", tuple(int(d) for d in self.qubit_dims))
        object.__setattr__(self, "fock_dims", tuple(int(d) for d in self.fock_dims))
        if any(d < 1 for d in self.dims):
            raise ValueError("subsystem dimensions must be >= 1")
        if any(d != 2 for d in self.qubit_dims):
            raise ValueError("qubit subsystems must have dimension 2")

    @property
    def dims(self) -> tuple:
        return self.qubit_dims + self.fock_dims

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def embed(self, index: int, op: np.ndarray) -> np.ndarray:
        mats = [np.eye(d, dtype=complex) for d in self.dims]
        mats[index] = np.asarray(op, dtype=complex)
        return reduce(np.kron, mats)

    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    def _mode(self, k: int) -> int:
        return len(self.qubit_dims) + k

    @cached_property
    def a(self) -> np.ndarray:
        return self.embed(self._mode(0), _destroy(self.fock_dims[0]))

    @cached_property
    def b(self) -> np.ndarray:
        return self.embed(self._mode(1), _destroy(self.fock_dims[1]))

    def sigma_z(self, i: int) -> np.ndarray:
        """``sigma_z`` of qubit ``i`` (1-based); ``|0>`` has eigenvalue +1."""
        return self.embed(i - 1, np.diag([1.0, -1.0]))

    def sigma_x(self, i: int) -> np.ndarray:
        return self.embed(i - 1, np.array([[0, 1], [1, 0]]))

    def sigma_minus(self, i: int) -> np.ndarray:
        """Lowering ``|0><1|`` toward the ground state ``|0>``."""
        return self.embed(i - 1, np.array([[0, 1], [0, 0]]))

    def projector(self, i: int, j: int) -> np.ndarray:
        p = np.zeros((4, 4), dtype=complex)
        p[2 * i + j, 2 * i + j] = 1
        return np.kron(p, np.eye(int(np.prod(self.fock_dims)), dtype=complex))

    def low_fock_mask(self) -> np.ndarray:
        """Basis states with every Fock number below its top level."""
        grids = np.meshgrid(*[np.arange(d) for d in self.dims], indexing="ij")
        ok = np.ones(self.dims, dtype=bool)
        for k, n in enumerate(self.fock_dims):
            ok &= grids[len(self.qubit_dims) + k] < n - 1
        return ok.ravel()

    def xi(self) -> np.ndarray:
        return self.projector(0, 1) - self.projector(1, 0)


def dag(x: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(x, -1, -2))


@dataclass(frozen=True, eq=False)
class SLHTriple:
    S: np.ndarray
    L: np.ndarray
    H: np.ndarray
    layout: HilbertLayout

    def __post_init__(self):
        d = self.layout.dim
        n = self.L.shape[0]
        if self.S.shape != (n, n, d, d) or self.L.shape != (n, d, d) or self.H.shape != (d, d):
            raise ValueError("inconsistent SLH shapes for the layout")

    @property
    def ports(self) -> int:
        return self.L.shape[0]

    @classmethod
    def from_parts(cls, S, L, H, layout: HilbertLayout) -> "SLHTriple":
        """Build a triple, promoting scalar entries to multiples of the identity."""
        d = layout.dim
        eye = np.eye(d, dtype=complex)

        def lift(x):
            x = np.asarray(x, dtype=complex)
            return x * eye if x.ndim == 0 else x

        S = np.asarray(S, dtype=object)
        if S.ndim == 0:
            S = S.reshape(1, 1)
        n = S.shape[0]
        s = np.stack([np.stack([lift(S[i, j]) for j in range(n)]) for i in range(n)])
        if np.isscalar(L) or np.asarray(L, dtype=object).ndim == 0:
            L = [L]
        l = np.stack([lift(x) for x in L])
        return cls(s, l, lift(H), layout)

    @classmethod
    def passthrough(cls, layout: HilbertLayout, n: int = 1) -> "SLHTriple":
        return cls.from_parts(np.eye(n).astype(object), [0.0] * n, 0.0, layout)

    def unitarity_error(self) -> float:
        n, d = self.ports, self.layout.dim
        sd = dag(np.swapaxes(self.S, 0, 1))
        prod = _block_matmul(sd, self.S)
        for i in range(n):
            prod[i, i] -= np.eye(d)
        return float(np.max(np.abs(prod)))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.H - dag(self.H))))

    def check(self, tol: float = TOL):
        if self.unitarity_error() > tol:
            raise ValueError("scattering matrix is not unitary")
        if self.hermiticity_error() > tol:
            raise ValueError("Hamiltonian is not Hermitian")
        return self

    def difference(self, other: "SLHTriple") -> dict:
        """Max-norm differences of ``S``, ``L`` and ``H`` to another triple."""
        if self.ports != other.ports:
            raise ValueError("port-count mismatch")
        return {"S": float(np.max(np.abs(self.S - other.S))),
                "L": float(np.max(np.abs(self.L - other.L))),
                "H": float(np.max(np.abs(self.H - other.H)))}


def _block_matmul(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Operator-valued block product ``sum_k x[i, k] @ y[k, j]``."""
    out = np.zeros((x.shape[0], y.shape[1]) + x.shape[2:], dtype=complex)
    for i in range(x.shape[0]):
        for j in range(y.shape[1]):
            for k in range(x.shape[1]):
                if np.any(x[i, k]) and np.any(y[k, j]):
                    out[i, j] += x[i, k] @ y[k, j]
    return out


def _im(x: np.ndarray) -> np.ndarray:
    return (x - dag(x)) / 2j


def series(g2: SLHTriple, g1: SLHTriple) -> SLHTriple:
    """Feed the outputs of ``g1`` into the inputs of ``g2``."""
    if g1.layout != g2.layout:
        raise ValueError("layout mismatch")
    if g1.ports != g2.ports:
        raise ValueError(f"port-count mismatch: {g2.ports} vs {g1.ports}")
    s = _block_matmul(g2.S, g1.S)
    s2l1 = _block_matmul(g2.S, g1.L[:, None])[:, 0]
    x = sum(dag(g2.L[i]) @ s2l1[i] for i in range(g2.ports))
    l = s2l1 + g2.L
    h = g1.H + g2.H + _im(x)
    return SLHTriple(s, l, h, g1.layout)


def concat(*gs: SLHTriple) -> SLHTriple:
    """Parallel composition; ports of the first argument come first."""
    layout = gs[0].layout
    if any(g.layout != layout for g in gs):
        raise ValueError("layout mismatch")
    n = sum(g.ports for g in gs)
    d = layout.dim
    s = np.zeros((n, n, d, d), dtype=complex)
    k = 0
    for g in gs:
        s[k:k + g.ports, k:k + g.ports] = g.S
        k += g.ports
    l = np.concatenate([g.L for g in gs])
    h = sum(g.H for g in gs)
    return SLHTriple(s, l, h, layout)


def shift_coherent(g: SLHTriple, port: int, alpha: complex) -> SLHTriple:
    """``L_k -> L_k + alpha`` with the compensating Hamiltonian change."""
    if not 0 <= port < g.ports:
        raise IndexError(f"invalid port {port} for a {g.ports}-port triple")
    lk = g.L[port]
    l = g.L.copy()
    l[port] = lk + alpha * np.eye(g.layout.dim)
    h = g.H - 0.5j * (lk * np.conj(alpha) - dag(lk) * alpha)
    return SLHTriple(g.S, l, h, g.layout)


def identity_component(op: np.ndarray) -> complex:
    return complex(np.trace(op) / op.shape[0])


def remove_identity_terms(g: SLHTriple) -> SLHTriple:
    """Shift every port so that its coupling operator is traceless."""
    for k in range(g.ports):
        c = identity_component(g.L[k])
        if c != 0:
            g = shift_coherent(g, k, -c)
    return g


def dissipator(c: np.ndarray, rho: np.ndarray) -> np.ndarray:
    cd = dag(c)
    cdc = cd @ c
    return c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)


def lindblad_rhs(h: np.ndarray, ls: Sequence[np.ndarray], rho: np.ndarray) -> np.ndarray:
    out = -1j * (h @ rho - rho @ h)
    for c in ls:
        out = out + dissipator(c, rho)
    return out


def to_lindblad_generator(g: SLHTriple,
                          extra: Sequence[np.ndarray] = ()) -> Callable[[np.ndarray], np.ndarray]:
    """Deterministic generator of the triple; ``extra`` adds further jump operators."""
    ls = list(g.L) + list(extra)
    h = g.H

    def generator(rho):
        return lindblad_rhs(h, ls, rho)

    return generator


def heisenberg_adjoint(h: np.ndarray, ls: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    """Adjoint generator acting on an observable."""
    out = 1j * (h @ x - x @ h)
    for c in ls:
        cd = dag(c)
        cdc = cd @ c
        out = out + cd @ x @ c - 0.5 * (cdc @ x + x @ cdc)
    return out


def hs_coefficient(op: np.ndarray, basis: np.ndarray,
                   layout: Optional[HilbertLayout] = None) -> complex:
    """Hilbert-Schmidt projection coefficient of ``op`` on ``basis``.

    With ``layout`` both operators are first restricted to Fock levels below
    the top one, where the truncated ladder operators obey exact commutators.
    """
    if layout is not None:
        keep = layout.low_fock_mask()
        op = op[np.ix_(keep, keep)]
        basis = basis[np.ix_(keep, keep)]
    return complex(np.vdot(basis, op) / np.vdot(basis, basis))


# cascade network

def drive_scalars(params: SystemParams, drives: DriveSet, t: float) -> dict:
    """Port drives and effective drives at time ``t``."""
    from .params import _env

    out = {name: complex(_env(getattr(drives, name), t))
           for name in ("probe", "bar_a", "bar_b", "direct_a", "direct_b")}
    out["A_d"] = complex(drives.a_d(params, t))
    out["B_d"] = complex(drives.b_d(params, t))
    return out


def build_cascade_network(params: SystemParams, drives: Optional[DriveSet] = None,
                          t: float = 0.0,
                          layout: Optional[HilbertLayout] = None) -> SLHTriple:
    """Compose the raw two-cavity network at time ``t``.

    Ports: 0 circulator loss, 1 monitored output, 2 and 3 the weak ports of
    cavities 1 and 2.  Drives given directly in the effective slots
    (``direct_a``/``direct_b``) are appended as Hamiltonian drive terms.
    """
    layout = layout or HilbertLayout()
    drives = drives or DriveSet()
    dv = drive_scalars(params, drives, t)
    a, b = layout.a, layout.b
    sz1, sz2 = layout.sigma_z(1), layout.sigma_z(2)
    eta = params.eta_l
    g0 = SLHTriple.passthrough(layout)
    g1 = SLHTriple.from_parts(1.0, [dv["probe"]], 0.0, layout)
    g2 = SLHTriple.from_parts(1.0, [dv["bar_a"]], 0.0, layout)
    g3 = SLHTriple.from_parts(1.0, [dv["bar_b"]], 0.0, layout)
    ha = params.delta1 * dag(a) @ a + params.chi1 * dag(a) @ a @ sz1
    hb = params.delta2 * dag(b) @ b + params.chi2 * dag(b) @ b @ sz2
    g4 = SLHTriple.from_parts(-np.eye(2).astype(object),
                              [math.sqrt(params.kappa1) * a,
                               math.sqrt(params.gamma1) * a], ha, layout)
    r, s = math.sqrt(eta), 1j * math.sqrt(1 - eta)
    g5 = SLHTriple.from_parts(np.array([[r, s], [s, r]], dtype=object), [0.0, 0.0],
                              0.0, layout)
    g61 = SLHTriple.from_parts(-1.0, [math.sqrt(params.kappa2) * b], hb, layout)
    g62 = SLHTriple.from_parts(-1.0, [math.sqrt(params.gamma2) * b], 0.0, layout)
    net = series(concat(g0, g61, g0, g62),
                 series(concat(g5, g0, g0),
                        series(concat(g0, g4, g0), concat(g0, g1, g2, g3))))
    extra = (1j * (dv["direct_a"] * dag(a) - np.conj(dv["direct_a"]) * a)
             + 1j * (dv["direct_b"] * dag(b) - np.conj(dv["direct_b"]) * b))
    return SLHTriple(net.S, net.L, net.H + extra, layout)


def expected_network_triple(params: SystemParams, drives: Optional[DriveSet] = None,
                            t: float = 0.0, layout: Optional[HilbertLayout] = None,
                            printed_loss_port: bool = False) -> SLHTriple:
    """Closed-form triple of the cascade after removing identity terms from ``L``.

    The loss port is ``i sqrt(kappa1 (1 - eta_l)) a``.  ``printed_loss_port``
    substitutes ``sqrt(kappa1) a`` instead, for comparison with a common
    misprint of this entry.
    """
    layout = layout or HilbertLayout()
    drives = drives or DriveSet()
    dv = drive_scalars(params, drives, t)
    a, b = layout.a, layout.b
    eta = params.eta_l
    r, s = math.sqrt(eta), -1j * math.sqrt(1 - eta)
    S = np.array([[r, s, 0, 0], [s, r, 0, 0], [0, 0, -1, 0], [0, 0, 0, -1]], dtype=object)
    l0 = (math.sqrt(params.kappa1) * a if printed_loss_port
          else 1j * math.sqrt(params.kappa1 * (1 - eta)) * a)
    L = [l0,
         -math.sqrt(params.kappa1 * eta) * a + math.sqrt(params.kappa2) * b,
         math.sqrt(params.gamma1) * a,
         math.sqrt(params.gamma2) * b]
    ad, bd = dv["A_d"], dv["B_d"]
    H = (params.delta1 * dag(a) @ a + params.chi1 * dag(a) @ a @ layout.sigma_z(1)
         + params.delta2 * dag(b) @ b + params.chi2 * dag(b) @ b @ layout.sigma_z(2)
         + 1j * (dag(a) * ad - a * np.conj(ad)) + 1j * (dag(b) * bd - b * np.conj(bd))
         - 0.5j * params.kappa12 * (dag(a) @ b - dag(b) @ a))
    return SLHTriple.from_parts(S, L, H, layout)


def master_equation_terms(params: SystemParams, a_d: complex, b_d: complex,
                          layout: HilbertLayout):
    """Hamiltonian and jump operators of the full cascaded master equation.

    Built directly from the physical model, independent of SLH composition.
    Dephasing is included as ``sqrt(gamma_d) sigma_z`` jumps.
    """
    a, b = layout.a, layout.b
    h = (params.delta1 * dag(a) @ a + params.chi1 * dag(a) @ a @ layout.sigma_z(1)
         + params.delta2 * dag(b) @ b + params.chi2 * dag(b) @ b @ layout.sigma_z(2)
         - 0.5j * params.kappa12 * (dag(a) @ b - dag(b) @ a)
         + 1j * (a_d * dag(a) - np.conj(a_d) * a + b_d * dag(b) - np.conj(b_d) * b))
    ls = [math.sqrt(params.kappa1 * (1 - params.eta_l)) * a,
          math.sqrt(params.gamma1) * a,
          math.sqrt(params.gamma2) * b,
          -math.sqrt(params.kappa1 * params.eta_l) * a + math.sqrt(params.kappa2) * b,
          math.sqrt(params.gamma_d1) * layout.sigma_z(1),
          math.sqrt(params.gamma_d2) * layout.sigma_z(2)]
    return h, ls


def dephasing_operators(params: SystemParams, layout: HilbertLayout):
    return [math.sqrt(params.gamma_d1) * layout.sigma_z(1),
            math.sqrt(params.gamma_d2) * layout.sigma_z(2)]


def random_density_matrix(dim: int, rng: np.random.Generator, rank: Optional[int] = None):
    rank = rank or dim
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ dag(g)
    return rho / np.trace(rho)


@dataclass
class VerificationClause:
    name: str
    passed: bool
    value: float
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value:.3e} {self.detail}".rstrip()


def verify_cascade(params: SystemParams, drives: Optional[DriveSet] = None,
                   t: float = 0.0, layout: Optional[HilbertLayout] = None,
                   n_states: int = 10, seed: int = 0,
                   tol: float = TOL) -> list[VerificationClause]:
    """Run the network checks and return one clause per property."""
    layout = layout or HilbertLayout(fock_dims=(8, 8))
    drives = drives or DriveSet()
    rng = np.random.default_rng(seed)
    raw = build_cascade_network(params, drives, t, layout)
    shifted = remove_identity_terms(raw)
    ref = expected_network_triple(params, drives, t, layout)
    out = []

    def add(name, value, detail=""):
        out.append(VerificationClause(name, bool(value < tol), float(value), detail))

    add("S unitary", raw.unitarity_error())
    add("H Hermitian", raw.hermiticity_error())
    diff = shifted.difference(ref)
    add("composed triple matches closed form", max(diff.values()),
        f"(S {diff['S']:.1e}, L {diff['L']:.1e}, H {diff['H']:.1e})")

    gen_raw = to_lindblad_generator(raw)
    gen_shift = to_lindblad_generator(shifted)
    dv = drive_scalars(params, drives, t)
    h_me, l_me = master_equation_terms(params, dv["A_d"], dv["B_d"], layout)
    deph = dephasing_operators(params, layout)
    gen_full = to_lindblad_generator(shifted, deph)
    err_shift = err_me = err_tr = 0.0
    for _ in range(n_states):
        rho = random_density_matrix(layout.dim, rng, rank=3)
        err_shift = max(err_shift, np.max(np.abs(gen_raw(rho) - gen_shift(rho))))
        drho = gen_full(rho)
        err_me = max(err_me, np.max(np.abs(drho - lindblad_rhs(h_me, l_me, rho))))
        err_tr = max(err_tr, abs(np.trace(drho)))
    add("L-shift leaves generator invariant", err_shift, f"({n_states} states)")
    add("generator matches cascaded master equation", err_me)
    add("generator annihilates trace", err_tr)

    ls = list(shifted.L)
    da = heisenberg_adjoint(shifted.H, ls, layout.a)
    db = heisenberg_adjoint(shifted.H, ls, layout.b)
    add("d<a>/dt has no <b> term", abs(hs_coefficient(da, layout.b, layout)))
    add("d<b>/dt has +kappa12 <a> term",
        abs(hs_coefficient(db, layout.a, layout) - params.kappa12))
    return out
