"""System parameters, pulse envelopes and effective cavity drives.

All rates are angular frequencies in rad/us and all times are in us.  Values
quoted as ``x/2pi = 1.2 MHz`` convert with :data:`TWO_PI` exactly once, at
config load time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

TWO_PI = 2.0 * math.pi


def mhz(value: float) -> float:
    """Convert a ``value/2pi`` in MHz to rad/us."""
    return TWO_PI * value


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters of the two cascaded cavity-qubit systems.

    Qubit index convention: basis state ``|0>`` is the ``sigma_z = +1``
    eigenstate, so the cavity pull for qubit state ``r`` is ``(-1)**r * chi``.
    """

    chi1: float
    chi2: float
    kappa1: float
    kappa2: float
    gamma1: float = 0.0
    gamma2: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    eta_l: float = 1.0
    eta_m: float = 1.0
    phi: float = math.pi / 2
    gamma_d1: float = 0.0
    gamma_d2: float = 0.0
    gamma_r1: float = 0.0
    gamma_r2: float = 0.0
    omega1: float = 0.0
    omega2: float = 0.0

    _RATES = ("kappa1", "kappa2", "gamma1", "gamma2", "gamma_d1", "gamma_d2",
              "gamma_r1", "gamma_r2")

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v!r}")
        for name in self._RATES:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        for name in ("eta_l", "eta_m"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v!r}")

    @property
    def kappa12(self) -> float:
        return math.sqrt(self.kappa1 * self.kappa2 * self.eta_l)

    @property
    def kappa_tilde1(self) -> complex:
        return self.kappa1 / 2 + self.gamma1 / 2 + 1j * self.delta1

    @property
    def kappa_tilde2(self) -> complex:
        return self.kappa2 / 2 + self.gamma2 / 2 + 1j * self.delta2

    @property
    def total_decay1(self) -> float:
        return self.gamma1 + self.kappa1

    @property
    def total_decay2(self) -> float:
        return self.gamma2 + self.kappa2

    @property
    def kappa_max(self) -> float:
        return max(self.kappa1, self.kappa2)

    def default_dt(self) -> float:
        return 1.0 / (100.0 * self.kappa_max)

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class Envelope:
    """Parametric pulse envelope.

    ``flat_top_sin2`` rises as ``sin^2`` over ``ramp``, holds for ``hold`` and
    falls symmetrically; ``square`` is on for ``hold`` only.  ``amplitude`` is
    in internal units (rad/us for effective cavity drives).
    """

    shape: str = "flat_top_sin2"
    amplitude: float = 0.0
    ramp: float = 0.0
    hold: float = 0.0
    start: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.shape not in ("square", "flat_top_sin2"):
            raise ValueError(f"unknown envelope shape {self.shape!r}")
        if self.ramp < 0 or self.hold < 0:
            raise ValueError("ramp and hold must be >= 0")
        if self.shape == "flat_top_sin2" and self.ramp == 0 and self.hold > 0:
            object.__setattr__(self, "shape", "square")

    @property
    def peak(self) -> complex:
        return self.amplitude * np.exp(1j * self.phase)

    @property
    def end(self) -> float:
        if self.shape == "square":
            return self.start + self.hold
        return self.start + 2 * self.ramp + self.hold

    @property
    def width(self) -> float:
        return self.end - self.start

    def with_width(self, width: float) -> "Envelope":
        """Same pulse family with total duration ``width``.

        The ramp is kept unless the width cannot hold two ramps, in which case
        the pulse becomes a pure ``sin^2`` bump of the requested width.
        """
        if self.shape == "square":
            return replace(self, hold=width)
        ramp = min(self.ramp, width / 2)
        return replace(self, ramp=ramp, hold=max(width - 2 * ramp, 0.0))

    def _profile(self, t, order: int):
        t = np.asarray(t, dtype=float)
        s = t - self.start
        out = np.zeros_like(s)
        if self.shape == "square":
            if order == 0:
                out = np.where((s >= 0) & (s < self.hold), 1.0, 0.0)
            return out
        r, h = self.ramp, self.hold
        w = np.pi / (2 * r) if r > 0 else 0.0
        up = (s >= 0) & (s < r)
        flat = (s >= r) & (s < r + h)
        down = (s >= r + h) & (s < 2 * r + h)
        sd = 2 * r + h - s
        if order == 0:
            out = np.where(up, np.sin(w * s) ** 2, out)
            out = np.where(flat, 1.0, out)
            out = np.where(down, np.sin(w * sd) ** 2, out)
        elif order == 1:
            out = np.where(up, w * np.sin(2 * w * s), out)
            out = np.where(down, -w * np.sin(2 * w * sd), out)
        elif order == 2:
            out = np.where(up, 2 * w * w * np.cos(2 * w * s), out)
            out = np.where(down, 2 * w * w * np.cos(2 * w * sd), out)
        else:
            raise ValueError("order must be 0, 1 or 2")
        return out

    def __call__(self, t):
        return self.peak * self._profile(t, 0)

    def derivative(self, t, order: int = 1):
        return self.peak * self._profile(t, order)


def _env(e: Optional[Envelope], t, order: int = 0):
    if e is None:
        return np.zeros_like(np.asarray(t, dtype=float), dtype=complex)
    return e(t) if order == 0 else e.derivative(t, order)


@dataclass(frozen=True)
class DriveSet:
    """Probe and port drives, combined lazily into the effective cavity drives.

    ``A_d = sqrt(gamma1) bar_a + sqrt(kappa1) probe + direct_a`` and
    ``B_d = sqrt(gamma2) bar_b - sqrt(kappa2 eta_l) probe + direct_b``.
    ``direct_a``/``direct_b`` address the effective-drive slot directly, which
    is how configs quoting ``A_d`` itself are expressed.
    """

    probe: Optional[Envelope] = None
    bar_a: Optional[Envelope] = None
    bar_b: Optional[Envelope] = None
    direct_a: Optional[Envelope] = None
    direct_b: Optional[Envelope] = None

    def envelopes(self):
        return [e for e in (self.probe, self.bar_a, self.bar_b, self.direct_a,
                            self.direct_b) if e is not None]

    @property
    def end(self) -> float:
        ends = [e.end for e in self.envelopes()]
        return max(ends) if ends else 0.0

    def a_d(self, params: SystemParams, t, order: int = 0):
        return (math.sqrt(params.gamma1) * _env(self.bar_a, t, order)
                + math.sqrt(params.kappa1) * _env(self.probe, t, order)
                + _env(self.direct_a, t, order))

    def b_d(self, params: SystemParams, t, order: int = 0):
        return (math.sqrt(params.gamma2) * _env(self.bar_b, t, order)
                - math.sqrt(params.kappa2 * params.eta_l) * _env(self.probe, t, order)
                + _env(self.direct_b, t, order))

    def with_width(self, width: float) -> "DriveSet":
        """Rescale every envelope to total duration ``width``."""
        kw = {}
        for name in ("probe", "bar_a", "bar_b", "direct_a", "direct_b"):
            e = getattr(self, name)
            kw[name] = None if e is None else e.with_width(width)
        return DriveSet(**kw)
