"""Command line interface.

    ibrelay <command> --spec FILE --out DIR [--seed N] [--parallelism N]

Commands: ib-curve, dispersion, bounds, simulate-lossy, simulate-relay, sweep.
Exit codes: 0 success, 1 spec error, 2 runtime error. The default parallelism
comes from the IBRELAY_PARALLELISM environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bounds
from .experiments import (
    ExperimentSpec,
    SpecError,
    _instance,
    default_parallelism,
    emit_plot,
    run_experiment,
    summaries_json,
    write_results,
    write_trials,
)
from .ib import dispersion_quantities, ib_curve, induced_rd, solve_ib
from .schemes import ConfigError

COMMANDS = ("ib-curve", "dispersion", "bounds", "simulate-lossy", "simulate-relay", "sweep")


def _load_json(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as e:
        raise SpecError(f"cannot read spec {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SpecError(f"spec {path} is not valid JSON: {e}") from e
    if not isinstance(d, dict):
        raise SpecError("spec must be a JSON object")
    return d


def _p_xy(raw: dict):
    return _instance(json.dumps(raw, sort_keys=True))[0]


def _c_values(raw: dict) -> list[float]:
    c = raw.get("c_grid", raw.get("C"))
    if c is None:
        raise SpecError("spec needs 'C' or 'c_grid'")
    return [float(v) for v in (c if isinstance(c, list) else [c])]


def cmd_ib_curve(raw: dict, out: Path, args) -> dict:
    p_xy = _p_xy(raw)
    sols = ib_curve(p_xy, _c_values(raw), raw.get("u_size"))
    path = out / "ib_curve.csv"
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["c_bits", "ib_bits", "achieved_c_bits", "lambda_star", "converged"])
        for s in sols:
            w.writerow([repr(s.requested_c_bits), repr(s.ib_bits), repr(s.achieved_c_bits),
                        repr(s.lambda_star), int(s.converged)])
    return {"csv": str(path), "points": len(sols)}


def cmd_dispersion(raw: dict, out: Path, args) -> dict:
    p_xy = _p_xy(raw)
    rows = []
    for c in _c_values(raw):
        ib = solve_ib(p_xy, c, raw.get("u_size"))
        disp = dispersion_quantities(ib)
        rows.append({"c_bits": c, "ib_bits": ib.ib_bits, "lambda_star": ib.lambda_star,
                     **disp.to_dict()})
    path = out / "dispersion.json"
    path.write_text(json.dumps(rows, indent=2))
    return {"json": str(path), "points": len(rows)}


def cmd_bounds(raw: dict, out: Path, args) -> dict:
    p_xy = _p_xy(raw)
    c = _c_values(raw)[0]
    ib = solve_ib(p_xy, c, raw.get("u_size"))
    rd = induced_rd(ib)
    disp = dispersion_quantities(ib, rd)
    n_grid = raw.get("n_grid") or [int(v) for v in np.unique(np.logspace(1, 6, 26).astype(int))]
    eps_grid = raw.get("eps_grid") or [0.1]
    threshold = raw.get("thm3_threshold", "D")
    if threshold not in bounds.THM3_THRESHOLDS:
        raise SpecError(f"thm3_threshold must be one of {bounds.THM3_THRESHOLDS}")
    curve = bounds.SecondOrderCurve.evaluate(ib, disp, rd, n_grid, eps_grid, threshold)
    path = out / "second_order.csv"
    curve.write_csv(path)
    return {"csv": str(path), "rows": len(curve.rows), "residuals": curve.residuals,
            "thm3_threshold": threshold}


def _simulate(raw: dict, out: Path, args, kind: str | None) -> dict:
    if kind is not None and raw.get("kind", kind) != kind:
        raise SpecError(f"this command needs a spec of kind {kind!r}")
    if kind is not None:
        raw = dict(raw, kind=kind)
    if args.seed is not None:
        raw = dict(raw, master_seed=args.seed)
    spec = ExperimentSpec.from_dict(raw)
    log: list = []
    summaries = run_experiment(spec, args.parallelism, trial_log=log)
    outputs = spec.outputs
    csv_path = out / outputs.get("csv", f"{spec.name}.csv")
    write_results(summaries, csv_path)
    result = {"csv": str(csv_path), "cells": len(summaries),
              "skipped": sum(1 for s in summaries if s.skipped)}
    if outputs.get("trials_csv"):
        p = out / outputs["trials_csv"]
        write_trials(log, p)
        result["trials_csv"] = str(p)
    if outputs.get("svg") and any(s.rate is not None for s in summaries):
        curve = None
        if spec.kind == "relay" and "ib_c_bits" in raw:
            p_xy = _p_xy(raw)
            ib = solve_ib(p_xy, float(raw["ib_c_bits"]))
            rd = induced_rd(ib)
            eps = raw.get("plot_eps", [0.1])
            curve = bounds.SecondOrderCurve.evaluate(ib, dispersion_quantities(ib, rd), rd,
                                                     sorted({s.n for s in summaries if s.n >= 2}),
                                                     eps)
        p = out / outputs["svg"]
        emit_plot(summaries, curve, p)
        result["svg"] = str(p)
    summary_path = out / outputs.get("json", f"{spec.name}.summary.json")
    summary_path.write_text(summaries_json(summaries))
    result["json"] = str(summary_path)
    return result


HANDLERS = {
    "ib-curve": cmd_ib_curve,
    "dispersion": cmd_dispersion,
    "bounds": cmd_bounds,
    "simulate-lossy": lambda raw, out, args: _simulate(raw, out, args, "lossy"),
    "simulate-relay": lambda raw, out, args: _simulate(raw, out, args, "relay"),
    "sweep": lambda raw, out, args: _simulate(raw, out, args, None),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ibrelay", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--spec", required=True, help="JSON spec file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--parallelism", type=int, default=None,
                       help="worker processes (default: $IBRELAY_PARALLELISM or 1)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = _load_json(args.spec)
        if args.parallelism is None:
            args.parallelism = default_parallelism()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        result = HANDLERS[args.command](raw, out, args)
    except (SpecError, ConfigError, KeyError, TypeError) as e:
        print(f"spec error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
