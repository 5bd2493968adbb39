"""Shared randomness and Poisson functional representation selection.

Streams are counter-based: a Philox4x64-10 generator keyed directly by the
64-bit seed (counter starting at zero). Uniforms are numpy's 53-bit doubles
taken one 64-bit word at a time, exponentials are ``-log1p(-u)`` and categorical
draws invert the CDF. Drawing in chunks of any size therefore reproduces the
same sequence, which is what lets the encoder and decoder agree bit for bit.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .prob import Kernel, Pmf

CHUNK = 16
MAX_CHUNK = 4096
MAX_SCAN = 1 << 22


def derive_substream(master_seed: int, label: str) -> int:
    """64-bit child seed for ``label``; a keyed BLAKE2b hash, so labels give independent streams."""
    h = hashlib.blake2b(label.encode("utf-8"), digest_size=8,
                        key=str(int(master_seed)).encode("ascii"))
    return int.from_bytes(h.digest(), "little")


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & ((1 << 64) - 1)))


class PoissonStream:
    """Arrival times T_1 < T_2 < ... of a unit-rate Poisson process, cached lazily."""

    def __init__(self, seed: int, chunk: int = CHUNK):
        self.seed = int(seed)
        self._gen = generator(self.seed)
        self._chunk = chunk
        self._t = np.empty(0)

    def _extend(self, k: int) -> None:
        if k <= self._t.size:
            return
        need = max(k - self._t.size, self._chunk)
        self._chunk = min(2 * self._chunk, MAX_CHUNK)
        gaps = -np.log1p(-self._gen.random(need))
        last = self._t[-1] if self._t.size else 0.0
        # accumulate sequentially from the last cached value so chunking never changes the sums
        new = np.cumsum(np.concatenate(([last], gaps)))[1:]
        self._t = np.concatenate((self._t, new))

    def first(self, k: int) -> np.ndarray:
        """T_1, ..., T_k (a read-only view)."""
        self._extend(k)
        out = self._t[:k]
        out.flags.writeable = False
        return out

    def nth_arrival(self, k: int) -> float:
        if k < 1:
            raise ValueError("arrival index starts at 1")
        self._extend(k)
        return float(self._t[k - 1])

    def clone(self) -> PoissonStream:
        return PoissonStream(self.seed)


def nth_arrival(s: PoissonStream, k: int) -> float:
    return s.nth_arrival(k)


class ProposalStream:
    """iid draws Z̄_1, Z̄_2, ... from ``proposal``.

    With ``n=None`` each draw is one symbol; with an integer ``n`` each draw is a
    length-n sequence of iid symbols (the product proposal).
    """

    def __init__(self, seed: int, proposal: Pmf, n: int | None = None, chunk: int = CHUNK):
        self.seed = int(seed)
        self.proposal = proposal
        self.n = n
        self._width = 1 if n is None else int(n)
        self._gen = generator(self.seed)
        self._chunk = chunk
        self._cdf = np.cumsum(proposal.probs)
        self._last = int(np.flatnonzero(proposal.probs > 0)[-1])
        dtype = np.uint8 if proposal.size <= 256 else np.int64
        self._draws = np.empty((0, self._width), dtype=dtype)

    def _extend(self, k: int) -> None:
        if k <= self._draws.shape[0]:
            return
        need = max(k - self._draws.shape[0], self._chunk)
        self._chunk = min(2 * self._chunk, MAX_CHUNK)
        u = self._gen.random(need * self._width).reshape(need, self._width)
        sym = np.minimum(np.searchsorted(self._cdf, u, side="right"), self._last)
        self._draws = np.concatenate((self._draws, sym.astype(self._draws.dtype)))

    def first(self, k: int) -> np.ndarray:
        """Draws 1..k: shape (k,) for single symbols, (k, n) for blocks."""
        self._extend(k)
        out = self._draws[:k]
        return out[:, 0] if self.n is None else out

    def draw(self, k: int):
        if k < 1:
            raise ValueError("draw index starts at 1")
        self._extend(k)
        row = self._draws[k - 1]
        return int(row[0]) if self.n is None else row.astype(np.int64)

    def clone(self) -> ProposalStream:
        return ProposalStream(self.seed, self.proposal, self.n)


# ---------------------------------------------------------------------------
# Pmf-like targets and proposals


@dataclass(frozen=True, eq=False)
class ProductPmf:
    """iid product of ``pmf`` over ``n`` letters."""

    pmf: Pmf
    n: int

    def log2prob(self, seqs) -> np.ndarray:
        seqs = np.atleast_2d(seqs)
        with np.errstate(divide="ignore"):
            return np.log2(self.pmf.probs)[seqs].sum(axis=-1)


@dataclass(frozen=True, eq=False)
class ConditionalProduct:
    """Product of kernel rows: P(x^n | c^n) = prod_i kernel[c_i, x_i]."""

    kernel: Kernel
    cond: np.ndarray

    def log2prob(self, seqs) -> np.ndarray:
        seqs = np.atleast_2d(seqs)
        with np.errstate(divide="ignore"):
            logk = np.log2(self.kernel.rows)
        return logk[np.asarray(self.cond)[None, :], seqs].sum(axis=-1)


@dataclass(frozen=True, eq=False)
class Conditioned:
    """The proposal restricted to ``feasible`` and renormalized.

    The density ratio to the proposal is constant on the feasible set, so PFR
    selection reduces to picking the first feasible draw and needs no bound.
    """

    feasible: Callable[[np.ndarray], np.ndarray]


class NotDominated(ValueError):
    """Target puts mass where the proposal has none."""


class UnknownRatioBound(ValueError):
    """No upper bound on the density ratio is available for early stopping."""


def max_log2_ratio(target, proposal) -> float:
    """log2 of sup target/proposal over the target's support."""
    if isinstance(target, Pmf) and isinstance(proposal, Pmf):
        return _pmf_max(target.probs.tobytes(), proposal.probs.tobytes())
    if isinstance(target, ProductPmf) and isinstance(proposal, ProductPmf):
        if target.n != proposal.n:
            raise ValueError("block lengths differ")
        return target.n * _single_max(target.pmf.probs[None, :], proposal.pmf.probs)[0]
    if isinstance(target, ConditionalProduct) and isinstance(proposal, ProductPmf):
        per_row = _single_max(target.kernel.rows, proposal.pmf.probs)
        return float(per_row[np.asarray(target.cond)].sum())
    raise UnknownRatioBound(
        f"cannot bound the ratio of {type(target).__name__} to {type(proposal).__name__}")


@lru_cache(maxsize=256)
def _pmf_max(target: bytes, proposal: bytes) -> float:
    # keyed by the raw probabilities; repeated selections reuse the bound
    p, q = np.frombuffer(target), np.frombuffer(proposal)
    if p.size != q.size:
        raise ValueError("target and proposal alphabets differ")
    return float(_single_max(p[None, :], q)[0])


def _single_max(rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    if np.any((rows > 0) & (q[None, :] <= 0)):
        raise NotDominated("target is not absolutely continuous w.r.t. the proposal")
    with np.errstate(divide="ignore"):
        r = np.where(rows > 0, np.log2(rows) - np.log2(np.where(q > 0, q, 1.0))[None, :], -np.inf)
    return r.max(axis=1)


def _log2_ratio(target, proposal, draws) -> np.ndarray:
    if isinstance(target, Conditioned):
        ok = np.asarray(target.feasible(draws), dtype=bool)
        return np.where(ok, 0.0, -np.inf)
    with np.errstate(invalid="ignore"):
        lr = target.log2prob(draws) - proposal.log2prob(draws)
    return np.where(np.isnan(lr), -np.inf, lr)


class SelectionResult(NamedTuple):
    index: int
    value: object
    scanned: int


def pfr_select(target, proposal, arrivals: PoissonStream, proposals: ProposalStream,
               *, max_scan: int = MAX_SCAN) -> SelectionResult:
    """K = argmin_k T_k / r(Z̄_k) with r = target/proposal; Z̄_K is an exact target sample.

    Scanning stops once T_k / r_max exceeds the best objective so far, after which
    no later index can win. Ties go to the smaller index.
    """
    if isinstance(target, Conditioned):
        log_rmax = 0.0
    else:
        log_rmax = max_log2_ratio(target, proposal)
    best, best_k = math.inf, 0
    scanned = 0
    step = CHUNK
    while True:
        hi = scanned + step
        step = min(2 * step, MAX_CHUNK)
        if hi > max_scan:
            raise RuntimeError(f"PFR selection scanned {max_scan} proposals without stopping; "
                               "is the feasible set empty?")
        t = arrivals.first(hi)[scanned:]
        draws = proposals.first(hi)[scanned:]
        log_t = np.log2(t)
        obj = log_t - _log2_ratio(target, proposal, draws)
        i = int(np.argmin(obj))
        if obj[i] < best:
            best, best_k = float(obj[i]), scanned + i + 1
        # first index at which no later candidate can beat the best
        stop = np.flatnonzero(log_t - log_rmax >= best)
        if stop.size:
            scanned += int(stop[0]) + 1
            break
        scanned = hi
    return SelectionResult(best_k, proposals.draw(best_k), max(scanned, best_k))


def exhaustive_argmin(target, proposal, arrivals: PoissonStream, proposals: ProposalStream,
                      upto: int) -> int:
    """Plain argmin over the first ``upto`` indices (no early stop); 1-based, 0 if all infinite."""
    t = arrivals.first(upto)
    draws = proposals.first(upto)
    obj = np.log2(t) - _log2_ratio(target, proposal, draws)
    i = int(np.argmin(obj))
    return i + 1 if np.isfinite(obj[i]) else 0


class MatchResult(NamedTuple):
    index: int
    ok: bool


def pml_argmin(l: int, codebook, target, proposal, arrivals: PoissonStream) -> MatchResult:
    """Decoder side of the Poisson matching lemma: argmin over k in [l] of T_k / r(X̄_k).

    Zero-ratio entries get an infinite objective. When every entry has ratio
    zero the smallest index is returned with ``ok=False``.
    """
    codebook = np.asarray(codebook)
    if codebook.shape[0] != l:
        raise ValueError("codebook length must equal l")
    if l == 1:
        return MatchResult(1, True)
    t = arrivals.first(l)
    obj = np.log2(t) - _log2_ratio(target, proposal, codebook)
    i = int(np.argmin(obj))
    if not np.isfinite(obj[i]):
        return MatchResult(1, False)
    return MatchResult(i + 1, True)
