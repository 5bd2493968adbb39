"""Experiment specs, seeded Monte-Carlo sweeps, summaries, CSV tables and SVG plots.

A spec is a JSON object::

    {
      "name": "relay-demo",
      "kind": "relay",                      # "lossy" or "relay"
      "instance": {"p_x": [0.5, 0.5], "channel": [[0.99, 0.01], [0.01, 0.99]]},
      "ib_c_bits": 0.28,                    # relay: IB constraint that fixes P_{U|Y}
      "variant": "vl-lossy",                # relay: vl-lossy | vl-chansim | fl-truncated
      "eps_prime": 0.05,
      "beta": {"kind": "feasible", "value": 0.0},
      "grid": {"n": [8, 16], "C": [0.05], "K": [64]},
      "trials": 1000,
      "master_seed": 0,
      "outputs": {"csv": "cells.csv", "trials_csv": "trials.csv", "svg": "rates.svg"}
    }

Lossy specs take ``instance`` as ``{"p_xy": [[...]]}`` or ``{"dsbs": p}``, a
``distortion`` ("hamming" or a matrix) and grid axes ``n``, ``D``, ``eps_prime``
and ``eps`` (the latter for the typical-set β rule, whose ε comes from the cell).

Each trial's seed is ``derive_substream(master_seed, cell_key + "|" + index)``
so a cell's results do not depend on which other cells or workers exist.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import xml.etree.ElementTree as ET
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import bounds
from .ib import DistortionMeasure, solve_ib, solve_noisy_rd
from .poisson import derive_substream
from .prob import JointPmf, Kernel, Pmf, bern, bsc, dsbs
from .schemes import (
    VARIANTS,
    BetaRule,
    ConfigError,
    NoisyVLConfig,
    RelayConfig,
    TrialResult,
    block_params,
    merge_equivalent_outputs,
    message_count,
    run_noisy_vl_trial,
    run_relay_trial,
)

PARALLELISM_ENV = "IBRELAY_PARALLELISM"
Z95 = 1.959963984540054
AXES = ("n", "C", "L", "K", "D", "eps_prime", "eps")


class SpecError(ValueError):
    pass


def default_parallelism() -> int:
    raw = os.environ.get(PARALLELISM_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise SpecError(f"{PARALLELISM_ENV} must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------------------
# spec


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    kind: str
    raw: dict
    grid: dict
    trials: int
    master_seed: int
    outputs: dict

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        if not isinstance(d, dict):
            raise SpecError("spec must be a JSON object")
        kind = d.get("kind")
        if kind not in ("lossy", "relay"):
            raise SpecError("spec kind must be 'lossy' or 'relay'")
        grid = d.get("grid") or {}
        unknown = set(grid) - set(AXES)
        if unknown:
            raise SpecError(f"unknown grid axes {sorted(unknown)}")
        if not grid or any(not isinstance(v, list) or not v for v in grid.values()):
            raise SpecError("grid must map axes to nonempty lists")
        if "n" not in grid:
            raise SpecError("grid needs an 'n' axis")
        trials = d.get("trials")
        if not isinstance(trials, int) or trials < 1:
            raise SpecError("trials must be a positive integer")
        if kind == "relay":
            if d.get("variant", "vl-lossy") not in VARIANTS:
                raise SpecError(f"variant must be one of {VARIANTS}")
            if "C" not in grid:
                raise SpecError("relay grid needs a 'C' axis")
        spec = cls(str(d.get("name", "experiment")), kind, d, grid, trials,
                   int(d.get("master_seed", 0)), dict(d.get("outputs") or {}))
        # fail early on malformed instances
        _instance(spec.raw_json())
        return spec

    @classmethod
    def load(cls, path) -> ExperimentSpec:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise SpecError(f"cannot read spec {path}: {e}") from e
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise SpecError(f"spec {path} is not valid JSON: {e}") from e

    def with_seed(self, seed: int) -> ExperimentSpec:
        raw = dict(self.raw, master_seed=int(seed))
        return ExperimentSpec.from_dict(raw)

    def raw_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True)

    def cells(self) -> list[dict]:
        axes = [a for a in AXES if a in self.grid]
        return [dict(zip(axes, combo)) for combo in itertools.product(*(self.grid[a] for a in axes))]


def cell_key(cell: dict) -> str:
    return json.dumps(cell, sort_keys=True)


# ---------------------------------------------------------------------------
# building configs


def _pmf(v) -> Pmf:
    if isinstance(v, dict):
        return Pmf.from_dict(v)
    if isinstance(v, (int, float)):
        return bern(float(v))
    return Pmf.from_probs(v)


def _kernel(v) -> Kernel:
    if isinstance(v, dict):
        return Kernel.from_dict(v)
    if isinstance(v, (int, float)):
        return bsc(float(v))
    return Kernel.from_rows(v)


@lru_cache(maxsize=32)
def _instance(raw_json: str):
    raw = json.loads(raw_json)
    inst = raw.get("instance")
    if not isinstance(inst, dict):
        raise SpecError("instance must be an object")
    try:
        if "dsbs" in inst:
            p_xy = dsbs(float(inst["dsbs"]))
            p_x = p_xy.row_marginal()
            channel = None
        elif "p_xy" in inst:
            v = inst["p_xy"]
            p_xy = JointPmf.from_dict(v) if isinstance(v, dict) else JointPmf.from_probs(v)
            p_x, channel = p_xy.row_marginal(), p_xy.col_given_row()
        elif "p_x" in inst and "channel" in inst:
            p_x, channel = _pmf(inst["p_x"]), _kernel(inst["channel"])
            p_xy = JointPmf.from_kernel(p_x, channel)
        else:
            raise SpecError("instance needs 'dsbs', 'p_xy' or 'p_x' + 'channel'")
    except (ValueError, TypeError, KeyError) as e:
        if isinstance(e, SpecError):
            raise
        raise SpecError(f"malformed instance: {e}") from e
    if channel is None:
        channel = p_xy.col_given_row()
    return p_xy, p_x, channel


@lru_cache(maxsize=32)
def _relay_kernel(raw_json: str) -> Kernel:
    raw = json.loads(raw_json)
    p_xy, _, _ = _instance(raw_json)
    if "kernel_u_given_y" in raw:
        return _kernel(raw["kernel_u_given_y"])
    if "ib_c_bits" not in raw:
        raise SpecError("relay spec needs ib_c_bits or kernel_u_given_y")
    ib = solve_ib(p_xy, float(raw["ib_c_bits"]))
    return merge_equivalent_outputs(p_xy, ib.kernel_u_given_y)


def _distortion(raw: dict, p_xy: JointPmf) -> DistortionMeasure:
    d = raw.get("distortion", "hamming")
    if d == "hamming":
        if p_xy.shape[0] < 1:
            raise SpecError("empty alphabet")
        return DistortionMeasure.hamming(p_xy.shape[0])
    try:
        return DistortionMeasure.from_values(d)
    except (ValueError, TypeError) as e:
        raise SpecError(f"malformed distortion: {e}") from e


def _beta(raw: dict, cell: dict) -> BetaRule:
    b = dict(raw.get("beta") or {"kind": "constant", "value": 0.0})
    if b.get("kind") == "typical" and "eps" in cell:
        b["eps"] = cell["eps"]
    return BetaRule.parse(b)


def _eps_prime(raw: dict, cell: dict, n: int, y_size: int) -> float:
    if "eps_prime" in cell:
        return float(cell["eps_prime"])
    if raw.get("eps_prime") == "eps1":
        eps = cell.get("eps", raw.get("eps"))
        return block_params(n, y_size, float(eps)).eps1
    return float(raw.get("eps_prime", 0.05))


@lru_cache(maxsize=256)
def build_config(raw_json: str, cell_json: str):
    raw, cell = json.loads(raw_json), json.loads(cell_json)
    p_xy, p_x, channel = _instance(raw_json)
    n = int(cell["n"])
    seed = int(raw.get("master_seed", 0))
    beta = _beta(raw, cell)
    if beta.kind == "typical":
        block_params(n, p_xy.shape[1], beta.eps)  # raises for infeasible cells
    if raw["kind"] == "lossy":
        d = _distortion(raw, p_xy)
        big_d = float(cell.get("D", raw.get("D", 0.0)))
        rd = solve_noisy_rd(p_xy, d, big_d)
        eps_p = _eps_prime(raw, cell, n, p_xy.shape[1])
        return NoisyVLConfig(p_xy, d, big_d, eps_p, rd.output_pmf, n, beta, seed)
    c_bits = float(cell["C"])
    big_l = int(cell["L"]) if "L" in cell else message_count(n, c_bits)
    variant = raw.get("variant", "vl-lossy")
    fl = int(cell.get("K", raw.get("K", 0))) if variant == "fl-truncated" else None
    eps_p = _eps_prime(raw, cell, n, p_xy.shape[1])
    return RelayConfig(p_x, channel, n, big_l, c_bits, _relay_kernel(raw_json), variant,
                       eps_p, beta, fl, seed, strengthen=bool(raw.get("strengthen", True)))


def _run_one(cfg, seed: int) -> TrialResult:
    if isinstance(cfg, NoisyVLConfig):
        return run_noisy_vl_trial(cfg, seed)
    return run_relay_trial(cfg, seed)


def trial_seed(master_seed: int, cell: dict, index: int) -> int:
    return derive_substream(master_seed, f"{cell_key(cell)}|{index}")


def _run_chunk(raw_json: str, cell_json: str, start: int, stop: int) -> list[TrialResult]:
    cfg = build_config(raw_json, cell_json)
    master = int(json.loads(raw_json).get("master_seed", 0))
    cell = json.loads(cell_json)
    return [_run_one(cfg, trial_seed(master, cell, i)) for i in range(start, stop)]


# ---------------------------------------------------------------------------
# summaries


def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("need at least one trial")
    p = k / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, min(centre - half, p)), min(1.0, max(centre + half, p))


def normal_interval(values, z: float = Z95) -> tuple[float, float, float]:
    v = np.asarray(values, dtype=np.float64)
    m = float(v.mean())
    half = z * float(v.std(ddof=1)) / math.sqrt(v.size) if v.size > 1 else 0.0
    return m, m - half, m + half


@dataclass(frozen=True)
class CellSummary:
    experiment: str
    cell: str  # canonical JSON of the coordinates
    n: int
    trials: int
    errors: int | None = None
    pe: float | None = None
    pe_lo: float | None = None
    pe_hi: float | None = None
    mean_bits: float | None = None
    rate: float | None = None
    rate_lo: float | None = None
    rate_hi: float | None = None
    pe_bound: float | None = None
    len_bound: float | None = None
    codec_constant: float | None = None
    skipped: str = ""

    @property
    def coords(self) -> dict:
        return json.loads(self.cell)


SUMMARY_FIELDS = tuple(f.name for f in fields(CellSummary))
_INT_FIELDS = {"n", "trials", "errors"}
_STR_FIELDS = {"experiment", "cell", "skipped"}


def summarize(name: str, cell: dict, results: list[TrialResult], bnd=None) -> CellSummary:
    n = int(cell["n"])
    k = sum(int(r.error) for r in results)
    t = len(results)
    lo, hi = wilson_interval(k, t)
    bits = [r.description_bits for r in results]
    m, mlo, mhi = normal_interval(bits)
    return CellSummary(name, cell_key(cell), n, t, k, k / t, lo, hi, m, m / n, mlo / n, mhi / n,
                       None if bnd is None else bnd.pe_bound,
                       None if bnd is None else bnd.len_bound,
                       None if bnd is None else bnd.codec_constant)


def _cell_bounds(raw_json: str, cell_json: str):
    cfg = build_config(raw_json, cell_json)
    try:
        return bounds.oneshot_scheme_bounds(cfg)
    except (ValueError, MemoryError):
        return None


def run_experiment(spec: ExperimentSpec, parallelism: int | None = None,
                   with_bounds: bool = True, trial_log: list | None = None) -> list[CellSummary]:
    """Run every cell; infeasible cells are reported as skipped, not raised."""
    par = default_parallelism() if parallelism is None else max(1, int(parallelism))
    raw_json = spec.raw_json()
    chunk = max(1, math.ceil(spec.trials / (4 * par)))
    plan = []
    summaries: dict[int, CellSummary] = {}
    for ci, cell in enumerate(spec.cells()):
        cj = cell_key(cell)
        try:
            build_config(raw_json, cj)
        except (ConfigError, SpecError, ValueError) as e:
            summaries[ci] = CellSummary(spec.name, cj, int(cell["n"]), spec.trials,
                                        skipped=str(e) or type(e).__name__)
            continue
        for start in range(0, spec.trials, chunk):
            plan.append((ci, cj, start, min(start + chunk, spec.trials)))
    results: dict[int, list] = {}
    if par == 1:
        outs = [_run_chunk(raw_json, cj, a, b) for _, cj, a, b in plan]
    else:
        with ProcessPoolExecutor(max_workers=par) as ex:
            futs = [ex.submit(_run_chunk, raw_json, cj, a, b) for _, cj, a, b in plan]
            outs = [f.result() for f in futs]
    for (ci, _, a, _), out in zip(plan, outs):
        results.setdefault(ci, []).append((a, out))
    cells = spec.cells()
    for ci, parts in results.items():
        rs = [r for _, out in sorted(parts, key=lambda p: p[0]) for r in out]
        cj = cell_key(cells[ci])
        bnd = _cell_bounds(raw_json, cj) if with_bounds else None
        summaries[ci] = summarize(spec.name, cells[ci], rs, bnd)
        if trial_log is not None:
            trial_log.extend((cj, r) for r in rs)
    return [summaries[i] for i in sorted(summaries)]


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results(summaries, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(SUMMARY_FIELDS)
            for s in summaries:
                w.writerow([_fmt(getattr(s, k)) for k in SUMMARY_FIELDS])
    except OSError as e:
        raise OSError(f"cannot write results to {path}: {e}") from e


def read_results(path) -> list[CellSummary]:
    path = Path(path)
    try:
        with path.open(newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise OSError(f"cannot read results from {path}: {e}") from e
    out = []
    for row in rows:
        kw = {}
        for k in SUMMARY_FIELDS:
            v = row[k]
            if k in _STR_FIELDS:
                kw[k] = v
            elif v == "":
                kw[k] = None
            elif k in _INT_FIELDS:
                kw[k] = int(v)
            else:
                kw[k] = float(v)
        out.append(CellSummary(**kw))
    return out


TRIAL_FIELDS = ("cell",) + TrialResult.FIELDS


def write_trials(log, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(TRIAL_FIELDS)
            for cj, r in log:
                w.writerow([cj] + r.row())
    except OSError as e:
        raise OSError(f"cannot write trial log to {path}: {e}") from e


def summaries_json(summaries) -> str:
    return json.dumps([asdict(s) for s in summaries], indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# SVG


def emit_plot(summaries, curve: bounds.SecondOrderCurve | None, path, *,
              title: str = "description rate vs blocklength") -> None:
    """Empirical rate (bits/symbol) with 95% bars against the second-order curves.

    Every summary becomes one ``<circle class="point">``; skipped cells are
    drawn hollow on the x axis.
    """
    summaries = list(summaries)
    if not summaries:
        raise ValueError("emit_plot needs at least one summary")
    w, h, pad = 640, 420, 60
    pts = [(s.n, s.rate, s.rate_lo, s.rate_hi) for s in summaries]
    curves: dict[str, list[tuple[float, float]]] = {}
    if curve is not None:
        for row in curve.rows:
            for key in ("eq3", "eq5"):
                curves.setdefault(f"{key} eps={row['eps']:g}", []).append((row["n"], row[key]))
    xs = [p[0] for p in pts] + [x for c in curves.values() for x, _ in c]
    ys = [v for p in pts for v in p[1:] if v is not None] + [y for c in curves.values() for _, y in c]
    ys = [y for y in ys if math.isfinite(y)] or [0.0, 1.0]
    log_x = min(xs) > 0 and max(xs) / min(xs) > 20
    fx = (lambda v: math.log10(v)) if log_x else float
    x0, x1 = fx(min(xs)), fx(max(xs))
    y0, y1 = min(0.0, min(ys)), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y1 = y0 + 1

    def sx(v):
        return pad + (fx(v) - x0) / (x1 - x0) * (w - 2 * pad)

    def sy(v):
        return h - pad - (v - y0) / (y1 - y0) * (h - 2 * pad)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(w), height=str(h),
                     viewBox=f"0 0 {w} {h}")
    ET.SubElement(svg, "title").text = title
    ET.SubElement(svg, "line", x1=str(pad), y1=str(h - pad), x2=str(w - pad), y2=str(h - pad),
                  stroke="black")
    ET.SubElement(svg, "line", x1=str(pad), y1=str(pad), x2=str(pad), y2=str(h - pad),
                  stroke="black")
    xl = ET.SubElement(svg, "text", x=str(w / 2), y=str(h - 15), **{"text-anchor": "middle"})
    xl.text = "blocklength n" + (" (log scale)" if log_x else "")
    yl = ET.SubElement(svg, "text", x="15", y=str(h / 2),
                       transform=f"rotate(-90 15 {h / 2})", **{"text-anchor": "middle"})
    yl.text = "rate (bits/symbol)"
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    for i, (label, cpts) in enumerate(sorted(curves.items())):
        cpts = sorted(cpts)
        d = " ".join(f"{'M' if j == 0 else 'L'}{sx(x):.3f},{sy(y):.3f}"
                     for j, (x, y) in enumerate(cpts))
        ET.SubElement(svg, "path", d=d, fill="none", stroke=palette[i % len(palette)],
                      **{"class": "curve", "data-label": label})
    for n, r, lo, hi in pts:
        if r is None:
            ET.SubElement(svg, "circle", cx=f"{sx(n):.3f}", cy=f"{sy(y0):.3f}", r="4",
                          fill="none", stroke="gray", **{"class": "point skipped"})
            continue
        if lo is not None and hi is not None:
            ET.SubElement(svg, "line", x1=f"{sx(n):.3f}", x2=f"{sx(n):.3f}", y1=f"{sy(lo):.3f}",
                          y2=f"{sy(hi):.3f}", stroke="black", **{"class": "errorbar"})
        ET.SubElement(svg, "circle", cx=f"{sx(n):.3f}", cy=f"{sy(r):.3f}", r="3", fill="black",
                      **{"class": "point"})
    path = Path(path)
    try:
        ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
    except OSError as e:
        raise OSError(f"cannot write plot to {path}: {e}") from e
