"""Exact excess-distortion probabilities for blocks, organized by joint type.

For a memoryless source, P(sum_i d(X_i, z_i) > nD | Y^n = y^n) depends on
(y^n, z^n) only through the counts of each (y, z) pair, so every quantity here
is computed per joint type and cached. Distortion values are mapped to an
integer grid: the exact rational grid 1/q when all finite values are multiples
of some 1/q with q <= 1000, otherwise a 1e-9 grid (summed rounding error at most
n * 5e-10).
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterator

import numpy as np
from scipy.special import gammaln

from .ib import DistortionMeasure
from .prob import JointPmf, Pmf

FALLBACK_GRID = 1e-9
INF_KEY = None


def _grid_for(values: np.ndarray) -> tuple[float, bool]:
    vals = [float(v) for v in np.unique(values)]
    if not vals:
        return 1.0, True
    for q in range(1, 1001):
        if all(abs(v * q - round(v * q)) <= 1e-9 * max(1.0, abs(v * q)) for v in vals):
            return 1.0 / q, True
    return FALLBACK_GRID, False


def _convolve(a: dict, b: dict) -> dict:
    out: dict = {}
    for ka, pa in a.items():
        for kb, pb in b.items():
            k = INF_KEY if ka is INF_KEY or kb is INF_KEY else ka + kb
            out[k] = out.get(k, 0.0) + pa * pb
    return out


def _power(law: dict, c: int) -> dict:
    result = {0: 1.0}
    base = law
    while c:
        if c & 1:
            result = _convolve(result, base)
        c >>= 1
        if c:
            base = _convolve(base, base)
    return result


class _DenseLaw:
    """Law of an integer-valued sum: mass ``arr[i]`` at key ``lo + i`` plus mass ``inf`` at +inf."""

    __slots__ = ("arr", "inf", "lo")

    def __init__(self, lo: int, arr: np.ndarray, inf: float):
        self.lo, self.arr, self.inf = lo, arr, inf

    @classmethod
    def from_dict(cls, law: dict) -> _DenseLaw:
        keys = [k for k in law if k is not INF_KEY]
        if not keys:
            return cls(0, np.zeros(1), law.get(INF_KEY, 0.0))
        lo = min(keys)
        arr = np.zeros(max(keys) - lo + 1)
        for k in keys:
            arr[k - lo] += law[k]
        return cls(lo, arr, law.get(INF_KEY, 0.0))

    def __mul__(self, other: _DenseLaw) -> _DenseLaw:
        fin_a, fin_b = self.arr.sum(), other.arr.sum()
        inf = self.inf * (fin_b + other.inf) + fin_a * other.inf
        return _DenseLaw(self.lo + other.lo, np.convolve(self.arr, other.arr), inf)

    def tail(self, thr: float) -> float:
        first = max(math.floor(thr) + 1 - self.lo, 0)
        return math.fsum(self.arr[first:]) + self.inf


def _dense_power(law: _DenseLaw, c: int) -> _DenseLaw:
    result = _DenseLaw(0, np.ones(1), 0.0)
    base = law
    while c:
        if c & 1:
            result = result * base
        c >>= 1
        if c:
            base = base * base
    return result


# dense arrays are used when the integer key range per letter stays below this
DENSE_SPAN = 4096


class ExcessModel:
    """φ(y^n, z^n, D) = P(d(X^n, z^n) > D | Y^n = y^n) with per-letter average distortion."""

    def __init__(self, p_xy: JointPmf, d: DistortionMeasure):
        self.p_xy = p_xy
        self.d = d
        post = p_xy.row_given_col().rows  # [y, x]
        self.post = post
        self.ny, self.nz = post.shape[0], d.z_alphabet.size
        used = post > 0
        finite_vals = d.values[:, :][(used.any(axis=0)[:, None]) & ~d.infinite]
        self.grid, self.exact_grid = _grid_for(finite_vals)
        self._letter: dict[tuple[int, int], dict] = {}
        for y in range(self.ny):
            for z in range(self.nz):
                law: dict = {}
                for x in np.flatnonzero(post[y] > 0):
                    k = INF_KEY if d.infinite[x, z] else int(round(d.values[x, z] / self.grid))
                    law[k] = law.get(k, 0.0) + float(post[y, x])
                self._letter[(y, z)] = law
        spans = []
        for law in self._letter.values():
            keys = [k for k in law if k is not INF_KEY]
            if keys:
                spans.append(max(keys) - min(keys))
        self.dense = self.exact_grid and max(spans, default=0) <= DENSE_SPAN
        self._powers: dict[tuple[int, int, int], object] = {}
        self._phi: dict[tuple, float] = {}

    def threshold_key(self, n: int, big_d: float) -> float:
        thr = n * big_d / self.grid
        near = round(thr)
        if self.exact_grid and abs(thr - near) <= 1e-9 * max(1.0, abs(thr)):
            return float(near)
        return thr

    def _pair_power(self, y: int, z: int, c: int):
        key = (y, z, c)
        law = self._powers.get(key)
        if law is None:
            if self.dense:
                law = _dense_power(_DenseLaw.from_dict(self._letter[(y, z)]), c)
            else:
                law = _power(self._letter[(y, z)], c)
            self._powers[key] = law
        return law

    def phi_counts(self, counts, big_d: float) -> float:
        """φ for a joint type given as a |Y| x |Z| count matrix."""
        counts = np.asarray(counts, dtype=np.int64).reshape(self.ny, self.nz)
        key = (float(big_d), counts.tobytes())
        hit = self._phi.get(key)
        if hit is not None:
            return hit
        n = int(counts.sum())
        thr = self.threshold_key(n, big_d)
        pairs = [(int(y), int(z), int(counts[y, z])) for y, z in zip(*np.nonzero(counts))]
        if self.dense:
            law = _DenseLaw(0, np.ones(1), 0.0)
            for y, z, c in pairs:
                law = law * self._pair_power(y, z, c)
            p = law.tail(thr)
        else:
            law = {0: 1.0}
            for y, z, c in pairs:
                law = _convolve(law, self._pair_power(y, z, c))
            p = math.fsum(pr for k, pr in law.items() if k is INF_KEY or k > thr)
        p = min(max(p, 0.0), 1.0)
        self._phi[key] = p
        return p

    def joint_counts(self, y_seq, z_seqs) -> np.ndarray:
        """Joint-type count matrices, shape (k, |Y|*|Z|), for each row of ``z_seqs``."""
        y_seq = np.asarray(y_seq, dtype=np.int64)
        z_seqs = np.atleast_2d(np.asarray(z_seqs, dtype=np.int64))
        m = self.ny * self.nz
        k = z_seqs.shape[0]
        cells = y_seq[None, :] * self.nz + z_seqs + m * np.arange(k)[:, None]
        return np.bincount(cells.ravel(), minlength=k * m).reshape(k, m)

    def phi(self, y_seq, z_seqs, big_d: float) -> np.ndarray:
        counts = self.joint_counts(y_seq, z_seqs)
        # mixed-radix key per joint type; n + 1 values per cell
        radix = (np.asarray(y_seq).size + 1) ** np.arange(counts.shape[1], dtype=np.float64)
        if radix[-1] * np.asarray(y_seq).size < 2.0 ** 52:
            keys = counts @ radix.astype(np.int64)
            uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
            vals = np.array([self.phi_counts(counts[i], big_d) for i in first])
        else:
            uniq, inv = np.unique(counts, axis=0, return_inverse=True)
            vals = np.array([self.phi_counts(u, big_d) for u in uniq])
        return vals[np.asarray(inv).ravel()]


def phi_excess(y_seq, z_seq, big_d: float, p_xy: JointPmf, d: DistortionMeasure) -> float:
    """P(sum_i d(X_i, z_i) > n D | Y^n = y^n) for one pair of sequences."""
    y_seq = np.atleast_1d(np.asarray(y_seq))
    z_seq = np.atleast_1d(np.asarray(z_seq))
    if y_seq.shape != z_seq.shape or y_seq.size < 1:
        raise ValueError("sequences must be nonempty and of equal length")
    return float(ExcessModel(p_xy, d).phi(y_seq, z_seq[None, :], big_d)[0])


# ---------------------------------------------------------------------------
# type enumeration


def compositions(n: int, k: int) -> Iterator[tuple[int, ...]]:
    """All k-tuples of nonnegative integers summing to n (stars and bars)."""
    for bars in itertools.combinations(range(n + k - 1), k - 1):
        prev = -1
        parts = []
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(n + k - 1 - prev - 1)
        yield tuple(parts)


def log_multinomial(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    return float(gammaln(counts.sum() + 1) - gammaln(counts + 1).sum())


def log_type_prob(counts, pmf: np.ndarray) -> float:
    """Natural-log probability that n iid draws from ``pmf`` have these counts."""
    counts = np.asarray(counts)
    if np.any((counts > 0) & (pmf <= 0)):
        return -math.inf
    pos = counts > 0
    return log_multinomial(counts) + float(np.sum(counts[pos] * np.log(pmf[pos])))


def representative(counts) -> np.ndarray:
    """The sorted sequence with the given symbol counts."""
    return np.repeat(np.arange(len(counts)), counts)


def conditional_types(model: ExcessModel, y_counts, reference: Pmf, big_d: float):
    """(φ, reference mass) for every conditional z-type given a y-type.

    The mass is the probability that an iid reference block, paired with a
    fixed y^n of this type, lands in the joint type.
    """
    per_y = []
    for y, ny in enumerate(y_counts):
        opts = []
        for comp in compositions(int(ny), model.nz):
            lp = log_type_prob(comp, reference.probs)
            if lp > -math.inf:
                opts.append((comp, lp))
        per_y.append(opts)
    phis, logm = [], []
    for combo in itertools.product(*per_y):
        counts = np.array([c for c, _ in combo], dtype=np.int64)
        phis.append(model.phi_counts(counts, big_d))
        logm.append(sum(lp for _, lp in combo))
    return np.array(phis), np.exp(np.array(logm))
