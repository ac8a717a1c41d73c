"""Command-line entry point ``ccqsim``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import CcqsimError, ConfigError
from .params import TWO_PI

log = logging.getLogger("ccqsim")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ccqsim",
                                 description="Cascaded cavity joint-measurement simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="TOML configuration")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--workers", type=int, help="worker processes (default CCQSIM_WORKERS or 1)")
        p.add_argument("--out", help="output directory (default run.output_dir)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = common(sub.add_parser("simulate", help="run one ensemble"))
    p.add_argument("--trajectories", type=int, help="override run.trajectories")
    p.add_argument("--frame", help="override run.frame")
    p = common(sub.add_parser("sweep", help="maximal concurrence over the efficiency grid"))
    p.add_argument("--trajectories", type=int, help="trajectories per grid cell")
    p = common(sub.add_parser("histogram", help="voltage histograms over pulse widths"))
    p.add_argument("--trajectories", type=int, help="trajectories per width")
    p = common(sub.add_parser("compensate", help="tabulate the compensation drive"))
    p.add_argument("--mode", help="override run.compensation")
    common(sub.add_parser("verify-slh", help="check the cascade network algebra"),
           config_required=False)
    return ap


def _load(args):
    from .runner import load_config
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        changes["seed"] = args.seed
    if getattr(args, "trajectories", None) is not None:
        changes["trajectories"] = args.trajectories
    if getattr(args, "frame", None) is not None:
        changes["frame"] = args.frame
    if getattr(args, "mode", None) is not None:
        changes["compensation"] = args.mode
    return cfg.with_(**changes) if changes else cfg


def _out(args, cfg=None) -> Path:
    if args.out:
        return Path(args.out)
    return Path(cfg.output_dir if cfg is not None else "ccqsim-out")


def cmd_simulate(args) -> int:
    from .runner import emit_results, run_ensemble
    cfg = _load(args)
    res = run_ensemble(cfg, args.workers)
    files = emit_results(res.summary(), res.manifest, _out(args, cfg), records=res.records)
    s = res.summary()
    print(json.dumps({"outcome_counts": s.outcome_counts,
                      "mean_concurrence": s.mean_concurrence}, sort_keys=True))
    log.info("wrote %d files", len(files))
    return EXIT_OK


def cmd_histogram(args) -> int:
    from .analysis import EnsembleSummary
    from .runner import emit_results, run_histogram
    cfg = _load(args)
    h, manifests = run_histogram(cfg, args.workers)
    counts = {k: int(v.sum()) for k, v in h.counts.items()}
    summary = EnsembleSummary(outcome_counts=counts, histogram=h,
                              metadata={"widths_us": [float(w) for w in h.widths],
                                        "seed": int(cfg.seed),
                                        "config_hash": cfg.digest()})
    emit_results(summary, manifests, _out(args, cfg), histogram=h)
    print(json.dumps({"outcome_counts": counts}, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .analysis import EnsembleSummary
    from .runner import emit_results, max_concurrence_sweep
    cfg = _load(args)
    sw = cfg.sweep
    try:
        l_db = [float(x) for x in sw["eta_l_dB"]]
        em = [float(x) for x in sw["eta_m"]]
        widths = [float(x) for x in sw["widths_us"]]
    except KeyError as exc:
        raise ConfigError(f"sweep.{exc.args[0]} is required") from None
    n = args.trajectories if args.trajectories is not None else sw.get("trajectories")
    grid, per = max_concurrence_sweep(cfg, l_db, em, widths, n, args.workers)
    summary = EnsembleSummary(concurrence_grid=grid,
                              grid_axes={"eta_l_dB": l_db, "eta_m": em, "widths_us": widths},
                              metadata={"seed": int(cfg.seed), "config_hash": cfg.digest(),
                                        "per_width": per.tolist()})
    emit_results(summary, None, _out(args, cfg), grid=(grid, l_db, em))
    print(json.dumps({"max_concurrence": grid.tolist()}))
    return EXIT_OK


def cmd_compensate(args) -> int:
    from .compensation import indistinguishability_residual
    from .runner import _csv, _fmt, _write, make_plan
    cfg = _load(args)
    plan = make_plan(cfg)
    s = plan.schedule
    a = s.a_step
    b = s.b_nodes[:, 1]
    r = indistinguishability_residual(s.xm, plan.params)
    tm = s.times[:-1] + s.dt / 2
    rows = [[_fmt(tm[i]), _fmt(a[i].real / TWO_PI), _fmt(a[i].imag / TWO_PI),
             _fmt(b[i].real / TWO_PI), _fmt(b[i].imag / TWO_PI),
             _fmt(r[i].real), _fmt(r[i].imag)] for i in range(len(tm))]
    header = ["t_us", "re_A_d_MHz", "im_A_d_MHz", "re_B_d_MHz", "im_B_d_MHz",
              "re_residual", "im_residual"]
    out = _out(args, cfg) / "compensation.csv"
    _write(out, _csv(header, rows))
    print(json.dumps({"mode": cfg.mode.value, "max_abs_residual": float(np.max(np.abs(r))),
                      "file": str(out)}))
    return EXIT_OK


def cmd_verify_slh(args) -> int:
    from .params import SystemParams, mhz
    from .slh import verify_cascade
    if args.config:
        cfg = _load(args)
        params, drives = cfg.params, cfg.drives
        t = 0.5 * drives.end
    else:
        params = SystemParams(chi1=mhz(1.2), chi2=mhz(0.5), kappa1=mhz(1.5),
                              kappa2=mhz(4.0), gamma1=mhz(0.05), gamma2=mhz(0.05),
                              delta1=mhz(0.3), delta2=mhz(-0.2), eta_l=0.8)
        drives, t = None, 0.0
    report = verify_cascade(params, drives, t, seed=args.seed or 0)
    for c in report:
        print(c.line())
    return EXIT_OK if all(c.passed for c in report) else EXIT_NUMERICAL


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "histogram": cmd_histogram,
            "compensate": cmd_compensate, "verify-slh": cmd_verify_slh}


def main(argv=None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except CcqsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
