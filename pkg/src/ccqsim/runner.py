"""Configuration, deterministic parallel execution and result files.

Trajectories are processed in fixed global chunks of :data:`CHUNK`
consecutive indices.  Every aggregate is a sum over chunks taken in chunk
order, and each trajectory draws its noise from its own counter-based
stream, so results are bit-identical for any number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib
import tomli_w

from . import __version__
from .analysis import (ALL_LABELS, EnsembleSummary, OutcomeLabel, VoltageHistogram,
                       classify_state, coherence_ratio, concurrence, normalize_voltage,
                       single_excitation_population, summarize_outcomes,
                       voltage_histogram)
from .cavity import adiabatic_amplitudes
from .compensation import (CompensationMode, compensation_law, detuning_compensation)
from .errors import ConfigError, NumericalError
from .full_model import FockLayout, FullModel
from .params import TWO_PI, DriveSet, Envelope, SystemParams, mhz
from .rng import wiener_block, wiener_increments
from .sme import (FieldSchedule, Frame, TrajectoryRecord, build_extras, build_schedule,
                  initial_state, integrate_batch)

log = logging.getLogger("ccqsim")

SCHEMA_VERSION = 1
CHUNK = 256
DT_LIMIT = 0.05
RINGDOWN_TOL = 1e-6

# SystemParams fields quoted as nu/2pi in MHz in config files
RATE_FIELDS = ("chi1", "chi2", "kappa1", "kappa2", "gamma1", "gamma2", "delta1", "delta2",
               "gamma_d1", "gamma_d2", "gamma_r1", "gamma_r2", "omega1", "omega2")
PLAIN_FIELDS = ("eta_l", "eta_m", "phi")
DRIVE_SLOTS = ("probe", "bar_a", "bar_b", "direct_a", "direct_b")
ENVELOPE_KEYS = ("shape", "amplitude_MHz_over_2pi", "ramp_us", "hold_us", "start_us",
                 "phase_rad")


# ------------------------------------------------------------------ config

def _envelope(spec: dict, where: str) -> Envelope:
    unknown = set(spec) - set(ENVELOPE_KEYS)
    if unknown:
        raise ConfigError(f"{where}: unknown envelope keys {sorted(unknown)}")
    try:
        return Envelope(shape=spec.get("shape", "flat_top_sin2"),
                        amplitude=mhz(float(spec.get("amplitude_MHz_over_2pi", 0.0))),
                        ramp=float(spec.get("ramp_us", 0.0)),
                        hold=float(spec.get("hold_us", 0.0)),
                        start=float(spec.get("start_us", 0.0)),
                        phase=float(spec.get("phase_rad", 0.0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class SimulationConfig:
    """Validated run configuration.

    Raw values are kept as written (rates as ``nu/2pi`` in MHz); the
    physical objects are derived once, in ``__post_init__``.
    """

    params_mhz: dict
    drives_spec: dict
    compensation: str = "adiabatic"
    frame: str = "polaron"
    trajectories: int = 100
    seed: int = 0
    dt_us: float = 0.0
    ringdown_us: float = 0.0
    snapshot_stride: int = 50
    initial_state: str = "plus"
    classify_threshold: float = 0.9
    post_select: float = 0.9
    write_trajectories: int = 1
    oracle_fock: int = 16
    detune_compensation: bool = False
    histogram: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    output_dir: str = "ccqsim-out"

    def __post_init__(self):
        unknown = set(self.params_mhz) - set(RATE_FIELDS) - set(PLAIN_FIELDS)
        if unknown:
            raise ConfigError(f"params: unknown keys {sorted(unknown)}")
        for k in ("chi1", "chi2", "kappa1", "kappa2"):
            if k not in self.params_mhz:
                raise ConfigError(f"params.{k} is required")
        kw = {}
        for k, v in self.params_mhz.items():
            try:
                v = float(v)
            except (TypeError, ValueError):
                raise ConfigError(f"params.{k} must be a number") from None
            kw[k] = mhz(v) if k in RATE_FIELDS else v
        try:
            self._params = SystemParams(**kw)
        except ValueError as exc:
            raise ConfigError(f"params: {exc}") from None
        unknown = set(self.drives_spec) - set(DRIVE_SLOTS)
        if unknown:
            raise ConfigError(f"drives: unknown slots {sorted(unknown)}")
        self._drives = DriveSet(**{k: _envelope(v, f"drives.{k}")
                                   for k, v in self.drives_spec.items()})
        try:
            self._mode = CompensationMode.parse(self.compensation)
            self._frame = Frame.parse(self.frame)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if int(self.trajectories) < 1:
            raise ConfigError("run.trajectories must be >= 1")
        if int(self.snapshot_stride) < 1:
            raise ConfigError("run.snapshot_stride must be >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("run.seed must be a 64-bit unsigned integer")
        if self.dt_us < 0 or self.ringdown_us < 0:
            raise ConfigError("run.dt_us and run.ringdown_us must be >= 0")
        if self.dt_us * self._params.kappa_max > DT_LIMIT:
            raise ConfigError(f"run.dt_us too large: dt*max(kappa) = "
                              f"{self.dt_us * self._params.kappa_max:.3g} > {DT_LIMIT}")
        try:
            initial_state(self.initial_state)
        except ValueError as exc:
            raise ConfigError(f"run.initial_state: {exc}") from None
        if self._mode is not CompensationMode.NONE and self._params.chi2 == 0:
            raise ConfigError("compensation requires params.chi2 != 0")

    @property
    def params(self) -> SystemParams:
        return self._params

    @property
    def drives(self) -> DriveSet:
        return self._drives

    @property
    def mode(self) -> CompensationMode:
        return self._mode

    @property
    def frame_enum(self) -> Frame:
        return self._frame

    @property
    def dt(self) -> float:
        return self.dt_us if self.dt_us > 0 else self.params.default_dt()

    def with_(self, **changes) -> "SimulationConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        run = {k: getattr(self, k) for k in (
            "compensation", "frame", "trajectories", "seed", "dt_us", "ringdown_us",
            "snapshot_stride", "initial_state", "classify_threshold", "post_select",
            "write_trajectories", "oracle_fock", "detune_compensation", "output_dir")}
        out = {"schema": SCHEMA_VERSION, "run": run, "params": dict(self.params_mhz),
               "drives": {k: dict(v) for k, v in self.drives_spec.items()}}
        if self.histogram:
            out["histogram"] = dict(self.histogram)
        if self.sweep:
            out["sweep"] = dict(self.sweep)
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def __eq__(self, other):
        return isinstance(other, SimulationConfig) and self.to_dict() == other.to_dict()


def config_from_dict(data: dict) -> SimulationConfig:
    data = dict(data)
    schema = data.pop("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema {schema!r}")
    unknown = set(data) - {"run", "params", "drives", "histogram", "sweep"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    run = dict(data.get("run", {}))
    if "compensation" not in run:
        log.info("no compensation mode given; defaulting to adiabatic")
        run["compensation"] = "adiabatic"
    allowed = {f.name for f in fields(SimulationConfig)} - {
        "params_mhz", "drives_spec", "histogram", "sweep"}
    bad = set(run) - allowed
    if bad:
        raise ConfigError(f"run: unknown keys {sorted(bad)}")
    for k in ("trajectories", "seed", "snapshot_stride", "write_trajectories", "oracle_fock"):
        if k in run and not isinstance(run[k], int):
            raise ConfigError(f"run.{k} must be an integer")
    for k in ("dt_us", "ringdown_us", "classify_threshold", "post_select"):
        if k in run:
            run[k] = float(run[k])
    return SimulationConfig(params_mhz=dict(data.get("params", {})),
                            drives_spec={k: dict(v) for k, v in data.get("drives", {}).items()},
                            histogram=dict(data.get("histogram", {})),
                            sweep=dict(data.get("sweep", {})), **run)


def load_config(path) -> SimulationConfig:
    """Read and validate a TOML configuration file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)


def dump_config(config: SimulationConfig) -> str:
    return tomli_w.dumps(config.to_dict())


# ------------------------------------------------------------------ planning

@dataclass
class RunPlan:
    """Everything trajectories of one (config, width) cell share."""

    config: SimulationConfig
    params: SystemParams
    drives: DriveSet
    schedule: FieldSchedule
    width: Optional[float]
    signal00: float
    signal11: float
    residual_max: float
    final_amplitude: float

    @property
    def n_steps(self) -> int:
        return self.schedule.n_steps


def _ringdown(params: SystemParams, drives: DriveSet, mode: CompensationMode) -> float:
    peak = max((abs(e.peak) for e in drives.envelopes()), default=0.0)
    if peak == 0:
        return 0.0
    try:
        amp = adiabatic_amplitudes(params, peak, peak).max_abs()
    except ZeroDivisionError:
        amp = peak
    rate = min(params.kappa_tilde1.real, params.kappa_tilde2.real)
    if rate <= 0:
        raise ConfigError("cavities without decay never ring down")
    return 1.5 * math.log(max(amp, 1.0) / RINGDOWN_TOL) / rate


def make_plan(config: SimulationConfig, width: Optional[float] = None,
              params: Optional[SystemParams] = None) -> RunPlan:
    p = params or config.params
    drives = config.drives if width is None else config.drives.with_width(width)
    if config.detune_compensation:
        tgrid = np.linspace(0.0, drives.end, 201)
        a = drives.a_d(p, tgrid)
        peak = complex(a[np.argmax(np.abs(a))]) if np.any(a) else 1.0
        try:
            p = p.with_(delta1=detuning_compensation(p, a_d=peak))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    law = compensation_law(config.mode, p, drives)
    ring = config.ringdown_us if config.ringdown_us > 0 else _ringdown(p, drives, config.mode)
    dt = config.dt_us if config.dt_us > 0 else p.default_dt()
    if dt * p.kappa_max > DT_LIMIT:
        raise ConfigError("dt too large for these parameters")
    t_end = drives.end + ring
    n_steps = max(1, int(math.ceil(t_end / dt - 1e-9)))
    stride = int(config.snapshot_stride)
    n_steps = stride * int(math.ceil(n_steps / stride))
    sched = build_schedule(p, drives, law, dt, n_steps)
    from .compensation import indistinguishability_residual
    res = float(np.max(np.abs(indistinguishability_residual(sched.x, p))))
    sig = sched.conditional_signal()
    return RunPlan(config, p, drives, sched, width, float(sig[0]), float(sig[3]), res,
                   float(np.max(np.abs(sched.x[-1]))))


# ------------------------------------------------------------------ execution

@dataclass
class ChunkResult:
    start: int
    stop: int
    final: np.ndarray            # (n, 4, 4)
    voltage: np.ndarray          # (n,) raw integrated voltage
    labels: np.ndarray           # (n,) object
    snap_sum: np.ndarray         # (S, 4, 4) sum of snapshots
    abs0110_sum: np.ndarray      # (S,) sum of |rho_0110|
    abs0110_sel: np.ndarray      # (S,) same over post-selected
    ratio_sum: np.ndarray        # (S,) sum of the coherence ratio
    ratio_sel: np.ndarray        # (S,) same over post-selected
    n_sel: int
    clipped: int
    records: list = field(default_factory=list)


def _run_chunk(plan: RunPlan, start: int, stop: int, keep_records: int = 0) -> ChunkResult:
    cfg = plan.config
    sched = plan.schedule
    K = sched.n_steps
    stride = min(cfg.snapshot_stride, K)
    rho0 = initial_state(cfg.initial_state)
    dW = wiener_block(cfg.seed, start, stop, K, sched.dt)
    frame = cfg.frame_enum
    record_v = keep_records > 0
    if frame is Frame.FULL:
        res = _run_full(plan, rho0, dW, stride)
        vtrace = None
    else:
        res = integrate_batch(sched, frame, rho0, dW, stride=stride,
                              record_voltage=record_v, extras=_extras(plan, frame),
                              gexp=_gexp(plan, frame))
        vtrace = res.voltage
    snaps = res.snapshots
    final = res.final
    labels = classify_state(final, cfg.classify_threshold)
    labels = np.atleast_1d(np.asarray(labels, dtype=object))
    sel = single_excitation_population(final) >= cfg.post_select
    a = np.abs(snaps[:, :, 1, 2])
    ratio = coherence_ratio(snaps)
    out = ChunkResult(start, stop, final, res.integrated_voltage, labels,
                      snaps.sum(axis=0), a.sum(axis=0), a[sel].sum(axis=0),
                      ratio.sum(axis=0), ratio[sel].sum(axis=0), int(sel.sum()),
                      res.clipped)
    for i in range(min(keep_records, stop - start)):
        raw = float(res.integrated_voltage[i])
        out.records.append(TrajectoryRecord(
            index=start + i, times=sched.times, dW=dW[i],
            voltage=vtrace[i] if vtrace is not None else np.zeros(0),
            snapshot_times=res.snapshot_times, snapshots=snaps[i],
            integrated_voltage=raw,
            normalized_voltage=float(normalize_voltage(raw, plan.signal00, plan.signal11)),
            outcome=str(labels[i]), frame=frame.value, clipped=0))
    return out


_GEXP_CACHE: dict = {}


def _gexp(plan: RunPlan, frame: Frame):
    key = (id(plan), frame)
    if key not in _GEXP_CACHE:
        _GEXP_CACHE.clear()
        run_frame = Frame.POLARON if frame is Frame.LAB_COMPENSATED else frame
        _GEXP_CACHE[key] = np.exp(plan.schedule.rate_integrals(run_frame))
    return _GEXP_CACHE[key]


def _extras(plan: RunPlan, frame: Frame):
    try:
        return build_extras(plan.schedule, frame)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class _FullResult:
    snapshots: np.ndarray
    final: np.ndarray
    integrated_voltage: np.ndarray
    snapshot_times: np.ndarray
    clipped: int = 0


def _run_full(plan: RunPlan, rho0, dW, stride) -> _FullResult:
    if plan.n_steps % stride:
        raise ConfigError("the full frame needs a step count divisible by snapshot_stride")
    model = FullModel(plan.schedule, FockLayout(plan.config.oracle_fock,
                                                plan.config.oracle_fock))
    snaps, vint = [], []
    for row in dW:
        idx, marg, _ = model.run(rho0, row, stride=stride)
        snaps.append(marg)
        vint.append(model.integrated_voltage)
    snaps = np.array(snaps)
    return _FullResult(snaps, snaps[:, -1].copy(), np.array(vint),
                       plan.schedule.times[idx])


def _chunks(n: int) -> list[tuple[int, int]]:
    return [(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]


def _partition(chunks: list, workers: int) -> list[list]:
    """Split chunk list into ``workers`` contiguous groups."""
    workers = max(1, min(workers, len(chunks)))
    base, extra = divmod(len(chunks), workers)
    out, i = [], 0
    for w in range(workers):
        k = base + (1 if w < extra else 0)
        out.append(chunks[i:i + k])
        i += k
    return out


def _worker(config_dict: dict, width, params, chunk_list, keep_records):
    cfg = config_from_dict(config_dict)
    plan = make_plan(cfg, width, params)
    out = []
    for s, e in chunk_list:
        out.append(_run_chunk(plan, s, e, keep_records if s == 0 else 0))
    return out


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    wall_time_s: float
    worker_ranges: list
    positivity_clips: int = 0
    truncation_failures: int = 0
    residual_max: float = 0.0
    final_amplitude: float = 0.0
    n_steps: int = 0
    dt_us: float = 0.0
    failed: bool = False
    message: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EnsembleResult:
    """Merged output of one ensemble run."""

    plan: RunPlan
    final: np.ndarray
    voltage: np.ndarray            # raw integrated
    normalized_voltage: np.ndarray
    labels: np.ndarray
    snapshot_times: np.ndarray
    mean_snapshot: np.ndarray
    mean_abs0110: np.ndarray
    mean_abs0110_selected: Optional[np.ndarray]
    mean_ratio: np.ndarray
    mean_ratio_selected: Optional[np.ndarray]
    n_selected: int
    records: list
    manifest: RunManifest

    def summary(self) -> EnsembleSummary:
        counts, means = summarize_outcomes(self.labels, self.normalized_voltage)
        traces = {"abs_rho0110_all": (self.snapshot_times, self.mean_abs0110),
                  "coherence_ratio_all": (self.snapshot_times, self.mean_ratio)}
        if self.mean_abs0110_selected is not None:
            traces["abs_rho0110_selected"] = (self.snapshot_times, self.mean_abs0110_selected)
            traces["coherence_ratio_selected"] = (self.snapshot_times,
                                                  self.mean_ratio_selected)
        cfg = self.plan.config
        return EnsembleSummary(
            outcome_counts=counts, mean_voltage_by_outcome=means, coherence_traces=traces,
            mean_final_state=self.final.mean(axis=0),
            mean_concurrence=float(np.mean(concurrence(self.final))),
            metadata={"n": int(len(self.labels)), "seed": int(cfg.seed),
                      "frame": cfg.frame_enum.value, "compensation": cfg.mode.value,
                      "width_us": self.plan.width, "n_selected": self.n_selected,
                      "config_hash": cfg.digest()})


def default_workers() -> int:
    env = os.environ.get("CCQSIM_WORKERS")
    if env:
        try:
            w = int(env)
        except ValueError:
            raise ConfigError("CCQSIM_WORKERS must be an integer") from None
        if w < 1:
            raise ConfigError("CCQSIM_WORKERS must be >= 1")
        return w
    return 1


def run_ensemble(config: SimulationConfig, workers: Optional[int] = None,
                 width: Optional[float] = None, params: Optional[SystemParams] = None,
                 keep_records: Optional[int] = None) -> EnsembleResult:
    """Run ``config.trajectories`` trajectories, optionally in parallel."""
    t0 = time.perf_counter()
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    keep = config.write_trajectories if keep_records is None else keep_records
    plan = make_plan(config, width, params)
    chunks = _chunks(int(config.trajectories))
    groups = _partition(chunks, workers)
    ranges = [[g[0][0], g[-1][1]] for g in groups if g]
    manifest = RunManifest(config.digest(), __version__, 0.0, ranges,
                           residual_max=plan.residual_max,
                           final_amplitude=plan.final_amplitude,
                           n_steps=plan.n_steps, dt_us=plan.schedule.dt)
    try:
        if len(groups) == 1:
            results = [_run_chunk(plan, s, e, keep if s == 0 else 0) for s, e in chunks]
        else:
            with ProcessPoolExecutor(max_workers=len(groups)) as ex:
                futs = [ex.submit(_worker, config.to_dict(), width, params, g, keep)
                        for g in groups]
                results = [c for f in futs for c in f.result()]
    except NumericalError as exc:
        manifest.failed = True
        manifest.message = str(exc)
        if "Fock" in str(exc):
            manifest.truncation_failures += 1
        raise
    manifest.wall_time_s = time.perf_counter() - t0
    return _merge(plan, results, manifest)


def _merge(plan: RunPlan, results: Sequence[ChunkResult], manifest: RunManifest):
    results = sorted(results, key=lambda r: r.start)
    n = results[-1].stop
    final = np.concatenate([r.final for r in results])
    volt = np.concatenate([r.voltage for r in results])
    labels = np.concatenate([r.labels for r in results])
    snap = sum_in_order([r.snap_sum for r in results])
    a = sum_in_order([r.abs0110_sum for r in results])
    a_sel = sum_in_order([r.abs0110_sel for r in results])
    rat = sum_in_order([r.ratio_sum for r in results])
    rat_sel = sum_in_order([r.ratio_sel for r in results])
    n_sel = sum(r.n_sel for r in results)
    manifest.positivity_clips = sum(r.clipped for r in results)
    stride = min(plan.config.snapshot_stride, plan.n_steps)
    times = plan.schedule.times[np.arange(snap.shape[0]) * stride]
    records = [rec for r in results for rec in r.records]
    return EnsembleResult(
        plan, final, volt, normalize_voltage(volt, plan.signal00, plan.signal11), labels,
        times, snap / n, a / n, a_sel / n_sel if n_sel else None, rat / n,
        rat_sel / n_sel if n_sel else None, n_sel, records, manifest)


def sum_in_order(arrays):
    total = np.zeros_like(arrays[0])
    for x in arrays:
        total = total + x
    return total


def simulate_trajectory(config: SimulationConfig, index: int) -> TrajectoryRecord:
    """Run trajectory ``index`` alone, with its voltage record."""
    plan = make_plan(config)
    res = _run_chunk(plan, index, index + 1, keep_records=1)
    return res.records[0]


# ------------------------------------------------------------------ experiments

def histogram_widths(config: SimulationConfig) -> list:
    w = config.histogram.get("widths_us")
    if not w:
        raise ConfigError("histogram.widths_us is required")
    return [float(x) for x in w]


def run_histogram(config: SimulationConfig, workers: Optional[int] = None):
    widths = histogram_widths(config)
    bins = int(config.histogram.get("bins", 41))
    rng = tuple(float(x) for x in config.histogram.get("range", (-3.0, 3.0)))
    volts, labels, manifests = [], [], []
    for w in widths:
        r = run_ensemble(config, workers, width=w, keep_records=0)
        volts.append(r.normalized_voltage)
        labels.append(r.labels)
        manifests.append(r.manifest)
    return voltage_histogram(volts, labels, bins, widths, rng), manifests


def max_concurrence_sweep(config: SimulationConfig, eta_l_db: Sequence[float],
                          eta_m: Sequence[float], widths: Sequence[float],
                          trajectories: Optional[int] = None,
                          workers: Optional[int] = None):
    """Trajectory-averaged end-of-run concurrence maximized over pulse widths.

    Returns
    -------
    grid : ndarray (len(eta_l_db), len(eta_m))
    per_width : ndarray (len(eta_l_db), len(eta_m), len(widths))
    """
    if not len(eta_l_db) or not len(eta_m) or not len(widths):
        raise ConfigError("sweep grids must be non-empty")
    cfg = config if trajectories is None else config.with_(trajectories=int(trajectories))
    per = np.zeros((len(eta_l_db), len(eta_m), len(widths)))
    for i, db in enumerate(eta_l_db):
        for j, em in enumerate(eta_m):
            p = cfg.params.with_(eta_l=10 ** (-float(db) / 10), eta_m=float(em))
            for k, w in enumerate(widths):
                r = run_ensemble(cfg, workers, width=float(w), params=p, keep_records=0)
                per[i, j, k] = float(np.mean(concurrence(r.final)))
    return per.max(axis=2), per


# ------------------------------------------------------------------ output

def _fmt(x) -> str:
    return repr(float(x))


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def summary_json(summary: EnsembleSummary) -> str:
    data = {"schema_version": SCHEMA_VERSION,
            "outcome_counts": summary.outcome_counts,
            "mean_voltage_by_outcome": summary.mean_voltage_by_outcome,
            "mean_concurrence": summary.mean_concurrence,
            "metadata": summary.metadata}
    if summary.concurrence_grid is not None:
        data["concurrence_grid"] = np.asarray(summary.concurrence_grid).tolist()
        data["grid_axes"] = summary.grid_axes
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def histogram_csv(h: Optional[VoltageHistogram]) -> str:
    labels = [l.value for l in ALL_LABELS]
    header = (["width_us", "v_lo", "v_hi"] + [f"count_{l}" for l in labels]
              + [f"frac_{l}" for l in labels])
    if h is None:
        return _csv(header, [])
    cond = h.conditional()
    rows = []
    for w in range(len(h.widths)):
        for b in range(len(h.edges) - 1):
            rows.append([_fmt(h.widths[w]), _fmt(h.edges[b]), _fmt(h.edges[b + 1])]
                        + [int(h.counts[l][w, b]) for l in labels]
                        + [_fmt(cond[l][w, b]) for l in labels])
    return _csv(header, rows)


def grid_csv(grid, eta_l_db, eta_m) -> str:
    header = ["eta_l_dB"] + [f"eta_m={_fmt(x)}" for x in eta_m]
    rows = [[_fmt(db)] + [_fmt(v) for v in grid[i]] for i, db in enumerate(eta_l_db)]
    return _csv(header, rows)


def traces_csv(traces: dict) -> str:
    names = sorted(traces)
    header = ["t_us"] + names
    if not names:
        return _csv(header, [])
    t = traces[names[0]][0]
    rows = [[_fmt(t[i])] + [_fmt(traces[k][1][i]) for k in names] for i in range(len(t))]
    return _csv(header, rows)


def trajectory_csv(rec: TrajectoryRecord) -> str:
    elems = [(j, k) for j in range(4) for k in range(j, 4)]
    names = []
    for j, k in elems:
        tag = f"{j:02b}{k:02b}"
        names += [f"re_rho{tag}"] + ([f"im_rho{tag}"] if j != k else [])
    header = ["t_us", "V"] + names
    step = max(1, int(round((rec.snapshot_times[1] - rec.snapshot_times[0])
                            / (rec.times[1] - rec.times[0])))) if len(rec.snapshot_times) > 1 else 1
    rows = []
    for s, t in enumerate(rec.snapshot_times):
        n = s * step
        v = rec.voltage[n - 1] if (n > 0 and len(rec.voltage)) else 0.0
        r = rec.snapshots[s]
        vals = []
        for j, k in elems:
            vals.append(_fmt(r[j, k].real))
            if j != k:
                vals.append(_fmt(r[j, k].imag))
        rows.append([_fmt(t), _fmt(v)] + vals)
    return _csv(header, rows)


def emit_results(summary: EnsembleSummary, manifest, out_dir, histogram=None,
                 grid=None, records=(), prefix: str = "") -> list:
    """Write CSV/JSON outputs; identical inputs give identical bytes (except the manifest)."""
    out = Path(out_dir)
    written = []

    def put(name, text):
        p = out / f"{prefix}{name}"
        _write(p, text)
        written.append(p)

    put("summary.json", summary_json(summary))
    put("coherence.csv", traces_csv(summary.coherence_traces))
    if histogram is not None:
        put("histogram.csv", histogram_csv(histogram))
    if grid is not None:
        g, l_db, em = grid
        put("concurrence_grid.csv", grid_csv(g, l_db, em))
    for rec in records:
        put(f"trajectory_{rec.index:06d}.csv", trajectory_csv(rec))
    if manifest is not None:
        ms = manifest if isinstance(manifest, list) else [manifest]
        put("manifest.json", json.dumps([m.to_dict() for m in ms], indent=2,
                                        sort_keys=True) + "\n")
    return written


__all__ = [
    "SimulationConfig", "load_config", "dump_config", "config_from_dict", "make_plan",
    "run_ensemble", "simulate_trajectory", "run_histogram", "max_concurrence_sweep",
    "emit_results", "RunManifest", "EnsembleResult", "default_workers",
]
