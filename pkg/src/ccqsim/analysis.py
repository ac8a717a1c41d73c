"""Outcome classification, voltage histograms, coherence traces and concurrence."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import PositivityError


class OutcomeLabel(str, enum.Enum):
    ZERO = "zero"
    ONE_SYM = "one_sym"
    ONE_ANTISYM = "one_antisym"
    TWO = "two"
    UNRESOLVED = "unresolved"


RESOLVED = (OutcomeLabel.ZERO, OutcomeLabel.ONE_SYM, OutcomeLabel.ONE_ANTISYM,
            OutcomeLabel.TWO)
ALL_LABELS = RESOLVED + (OutcomeLabel.UNRESOLVED,)

_S = 1 / math.sqrt(2)
# rows: |00>, |psi+>, |psi->, |11>
OUTCOME_BASIS = np.array([[1, 0, 0, 0], [0, _S, _S, 0], [0, _S, -_S, 0], [0, 0, 0, 1]],
                         dtype=complex)
_SYSY = np.fliplr(np.diag([-1.0, 1.0, 1.0, -1.0])).astype(complex)


def _as_stack(rho) -> np.ndarray:
    r = np.asarray(rho, dtype=complex)
    if r.shape[-2:] != (4, 4):
        raise ValueError("expected 4x4 density matrices")
    return r


def concurrence(rho, clip_tol: float = 1e-8):
    """Wootters concurrence of one or more two-qubit states.

    Parameters
    ----------
    rho : array_like, shape (..., 4, 4)
        Density matrices; they are normalized before use.
    clip_tol : float
        Eigenvalues down to ``-clip_tol`` are treated as rounding.

    Returns
    -------
    float or ndarray
        Values in ``[0, 1]``.
    """
    r = _as_stack(rho)
    r = r / np.real(np.trace(r, axis1=-2, axis2=-1))[..., None, None]
    r = 0.5 * (r + np.conj(np.swapaxes(r, -1, -2)))
    lam, vec = np.linalg.eigh(r)
    if lam.min(initial=0.0) < -clip_tol:
        raise PositivityError(f"state not positive (eigenvalue {lam.min():.2e})")
    # with rho = W W^dag the square roots of eig(rho rho~) are the singular
    # values of W^dag (sy x sy) W^*, which keeps small values accurate
    w = vec * np.sqrt(np.clip(lam, 0.0, None))[..., None, :]
    n = np.conj(np.swapaxes(w, -1, -2)) @ _SYSY @ np.conj(w)
    s = np.linalg.svd(n, compute_uv=False)
    c = np.clip(s[..., 0] - s[..., 1] - s[..., 2] - s[..., 3], 0.0, 1.0)
    return float(c) if np.ndim(c) == 0 else c


def outcome_populations(rho) -> np.ndarray:
    """Populations of ``|00>, |psi+>, |psi->, |11>`` in normalized ``rho``."""
    r = _as_stack(rho)
    r = r / np.real(np.trace(r, axis1=-2, axis2=-1))[..., None, None]
    return np.real(np.einsum("ki,...ij,kj->...k", np.conj(OUTCOME_BASIS), r, OUTCOME_BASIS))


def classify_state(rho, threshold: float = 0.9):
    """Label(s) of the dominant outcome, or ``unresolved`` below ``threshold``."""
    pops = outcome_populations(rho)
    best = np.argmax(pops, axis=-1)
    ok = np.take_along_axis(pops, best[..., None], axis=-1)[..., 0] >= threshold
    labels = np.array([l.value for l in RESOLVED], dtype=object)[best]
    labels = np.where(ok, labels, OutcomeLabel.UNRESOLVED.value)
    if np.ndim(labels) == 0:
        return OutcomeLabel(str(labels))
    return labels


def classify_outcome(record, threshold: float = 0.9) -> OutcomeLabel:
    """Classify a trajectory by its final state.

    ``record`` is a :class:`ccqsim.sme.TrajectoryRecord` or a 4x4 matrix.
    """
    rho = getattr(record, "final", record)
    if rho is None:
        raise ValueError("record has no final state")
    return classify_state(np.asarray(rho), threshold)


def normalize_voltage(s, signal00: float, signal11: float):
    """Affine map placing the ``|00>`` mean at -1 and the ``|11>`` mean at +1."""
    span = signal11 - signal00
    if abs(span) < 1e-300:
        return np.asarray(s, dtype=float)
    return (2 * np.asarray(s, dtype=float) - signal00 - signal11) / span


@dataclass
class VoltageHistogram:
    """Outcome counts over (pulse width x voltage bin)."""

    edges: np.ndarray                 # (B+1,)
    widths: np.ndarray                # (W,)
    counts: dict                      # label -> (W, B) int array

    def total(self) -> np.ndarray:
        return sum(self.counts.values())

    def conditional(self) -> dict:
        """Populations normalized per voltage bin (zero where the bin is empty)."""
        tot = self.total().astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            return {k: np.where(tot > 0, v / tot, 0.0) for k, v in self.counts.items()}


def voltage_histogram(voltages: Sequence[np.ndarray], labels: Sequence[np.ndarray],
                      bins, widths: Sequence[float],
                      value_range: tuple = (-3.0, 3.0)) -> VoltageHistogram:
    """Histogram normalized voltages by outcome, one row per pulse width.

    Values outside ``value_range`` are clamped into the edge bins so the
    marginal over voltage equals the outcome counts exactly.
    """
    if len(voltages) == 0 or any(len(v) == 0 for v in voltages):
        raise ValueError("empty ensemble")
    if len(voltages) != len(widths) or len(labels) != len(widths):
        raise ValueError("one voltage and label array per pulse width is required")
    edges = (np.asarray(bins, dtype=float) if np.ndim(bins) == 1
             else np.linspace(value_range[0], value_range[1], int(bins) + 1))
    nb = len(edges) - 1
    counts = {l.value: np.zeros((len(widths), nb), dtype=np.int64) for l in ALL_LABELS}
    for w, (v, lab) in enumerate(zip(voltages, labels)):
        v = np.asarray(v, dtype=float)
        lab = np.asarray(lab, dtype=object)
        idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, nb - 1)
        for l in ALL_LABELS:
            sel = lab == l.value
            counts[l.value][w] += np.bincount(idx[sel], minlength=nb)
    return VoltageHistogram(edges, np.asarray(widths, dtype=float), counts)


def coherence_trace(snapshots: np.ndarray, element=(1, 2), select=None) -> np.ndarray:
    """Mean of ``|rho_jk(t)|`` over the selected trajectories.

    Parameters
    ----------
    snapshots : ndarray (n, S, 4, 4)
    element : (int, int) or str
        Matrix indices, or a label like ``"0110"``.
    select : bool array (n,), optional
    """
    if isinstance(element, str):
        element = (int(element[:2], 2), int(element[2:], 2))
    j, k = element
    s = np.asarray(snapshots)
    if select is not None:
        s = s[np.asarray(select, dtype=bool)]
    if s.shape[0] == 0:
        raise ValueError("empty selection")
    return np.mean(np.abs(s[:, :, j, k]), axis=0)


def single_excitation_population(rho) -> np.ndarray:
    r = _as_stack(rho)
    return np.real(r[..., 1, 1] + r[..., 2, 2]) / np.real(np.trace(r, axis1=-2, axis2=-1))


def coherence_ratio(rho) -> np.ndarray:
    """``2|rho_0110| / (rho_0101 + rho_1010)``: 1 for a pure single-excitation superposition."""
    r = _as_stack(rho)
    den = np.real(r[..., 1, 1] + r[..., 2, 2])
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, 2 * np.abs(r[..., 1, 2]) / den, 0.0)


def coherence_loss(final_states: np.ndarray, reference: float = 1.0,
                   select_threshold: float = 0.9):
    """Post-selected relative loss of the ``01/10`` coherence at the end of a run.

    Trajectories whose single-excitation population reaches
    ``select_threshold`` are kept; the loss is ``1 - mean(ratio)/reference``.

    Returns
    -------
    loss : float
    n_selected : int
    """
    sel = single_excitation_population(final_states) >= select_threshold
    n = int(np.count_nonzero(sel))
    if n == 0:
        raise ValueError("no trajectory passed post-selection")
    return float(1 - np.mean(coherence_ratio(final_states[sel])) / reference), n


@dataclass
class EnsembleSummary:
    """Aggregated ensemble statistics; every field is plain data."""

    outcome_counts: dict = field(default_factory=dict)
    mean_voltage_by_outcome: dict = field(default_factory=dict)
    histogram: Optional[VoltageHistogram] = None
    coherence_traces: dict = field(default_factory=dict)   # name -> (times, values)
    concurrence_grid: Optional[np.ndarray] = None
    grid_axes: dict = field(default_factory=dict)
    mean_final_state: Optional[np.ndarray] = None
    mean_concurrence: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(sum(self.outcome_counts.values()))


def summarize_outcomes(labels: Iterable, voltages: np.ndarray) -> tuple[dict, dict]:
    labels = np.asarray(list(labels), dtype=object)
    voltages = np.asarray(voltages, dtype=float)
    counts, means = {}, {}
    for l in ALL_LABELS:
        sel = labels == l.value
        counts[l.value] = int(np.count_nonzero(sel))
        means[l.value] = float(np.mean(voltages[sel])) if np.any(sel) else None
    return counts, means


__all__ = [
    "OutcomeLabel", "concurrence", "outcome_populations", "classify_state",
    "classify_outcome", "normalize_voltage", "VoltageHistogram", "voltage_histogram",
    "coherence_trace", "coherence_ratio", "coherence_loss",
    "single_excitation_population", "EnsembleSummary", "summarize_outcomes",
]
