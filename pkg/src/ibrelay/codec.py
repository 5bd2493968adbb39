"""Prefix-free integer codes for selection indices.

Codewords are plain strings of '0'/'1'. Two code families are provided: Elias
delta (universal over all positive integers) and Huffman, optionally with an
escape codeword that falls back to Elias delta for indices outside the table.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .prob import Pmf

Codeword = str


class DecodeError(ValueError):
    pass


def elias_gamma(k: int) -> Codeword:
    if k < 1:
        raise ValueError("Elias codes are defined for positive integers")
    b = bin(k)[2:]
    return "0" * (len(b) - 1) + b


def elias_delta(k: int) -> Codeword:
    """Elias delta: gamma code of the bit length, then the binary digits after the leading 1."""
    if k < 1:
        raise ValueError("Elias codes are defined for positive integers")
    b = bin(k)[2:]
    return elias_gamma(len(b)) + b[1:]


def elias_delta_length(k: int) -> int:
    n = k.bit_length()
    return n - 1 + 2 * (n.bit_length() - 1) + 1


def elias_delta_decode(bits: str, pos: int = 0) -> tuple[int, int]:
    """Decode one codeword starting at ``pos``; returns (value, next position)."""
    zeros = 0
    while pos + zeros < len(bits) and bits[pos + zeros] == "0":
        zeros += 1
    start = pos + zeros
    end = start + zeros + 1
    if end > len(bits):
        raise DecodeError("truncated Elias delta length prefix")
    if bits[start] != "1":
        raise DecodeError("malformed Elias delta codeword")
    nbits = int(bits[start:end], 2)
    tail_end = end + nbits - 1
    if tail_end > len(bits):
        raise DecodeError("truncated Elias delta payload")
    if any(c not in "01" for c in bits[end:tail_end]):
        raise DecodeError("codeword contains characters other than 0/1")
    return int("1" + bits[end:tail_end], 2), tail_end


def elias_delta_slack(t: float) -> float:
    """Elias delta overhead above ℓ(t) when E[log2 K] <= t + 1.

    len(k) <= log2 k + 2 log2(log2 k + 1) + 1 is concave in log2 k, so by Jensen
    E[len] <= t + 2 log2(t + 2) + 2 = ℓ(t) + log2(t + 2) - 2.
    """
    if not math.isfinite(t):
        return math.inf
    return max(0.0, math.log2(t + 2.0) - 2.0)


@dataclass(frozen=True)
class PrefixCode:
    """A table of codewords, or the universal Elias delta code when ``universal``."""

    codewords: Mapping[int, Codeword]
    universal: bool = False

    def encode(self, k: int) -> Codeword:
        if self.universal:
            return elias_delta(k)
        try:
            return self.codewords[k]
        except KeyError:
            raise ValueError(f"index {k} outside the code's domain") from None

    def length(self, k: int) -> int:
        return elias_delta_length(k) if self.universal else len(self.encode(k))

    def decode(self, bits: str, pos: int = 0) -> tuple[int, int]:
        if self.universal:
            return elias_delta_decode(bits, pos)
        table = self._inverse()
        if "" in table:
            return table[""], pos
        for end in range(pos + 1, len(bits) + 1):
            k = table.get(bits[pos:end])
            if k is not None:
                return k, end
        raise DecodeError("bit string is not a codeword prefix of this code")

    def decode_exact(self, bits: str) -> int:
        k, end = self.decode(bits)
        if end != len(bits):
            raise DecodeError("trailing bits after codeword")
        return k

    def _inverse(self) -> dict[str, int]:
        inv = self.__dict__.get("_inv")
        if inv is None:
            inv = {w: k for k, w in self.codewords.items()}
            object.__setattr__(self, "_inv", inv)
        return inv

    def kraft_sum(self) -> float:
        if self.universal:
            return 1.0
        return math.fsum(2.0 ** -len(w) for w in self.codewords.values())

    def is_prefix_free(self) -> bool:
        return is_prefix_free(self.codewords.values())

    def expected_length(self, pmf: Pmf) -> float:
        return math.fsum(float(p) * self.length(i + 1) for i, p in enumerate(pmf.probs))


UNIVERSAL = PrefixCode({}, universal=True)


def is_prefix_free(words: Iterable[Codeword]) -> bool:
    # after sorting, any prefix relation shows up between neighbours
    ws = sorted(words)
    return all(not b.startswith(a) for a, b in itertools.pairwise(ws))


def huffman_lengths(weights) -> list[int]:
    w = [float(x) for x in weights]
    if len(w) == 1:
        return [0]
    heap = [(x, i, (i,)) for i, x in enumerate(w)]
    heapq.heapify(heap)
    lengths = [0] * len(w)
    tie = len(w)
    while len(heap) > 1:
        a, _, sa = heapq.heappop(heap)
        b, _, sb = heapq.heappop(heap)
        for s in sa + sb:
            lengths[s] += 1
        heapq.heappush(heap, (a + b, tie, sa + sb))
        tie += 1
    return lengths


def canonical_code(lengths: list[int], keys: list[int]) -> dict[int, Codeword]:
    """Canonical prefix code for the given lengths (which must satisfy Kraft)."""
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], keys[i]))
    out: dict[int, Codeword] = {}
    code = 0
    prev = 0
    for i in order:
        ln = lengths[i]
        code <<= ln - prev
        prev = ln
        out[keys[i]] = format(code, f"0{ln}b") if ln else ""
        code += 1
    return out


def build_huffman(pmf: Pmf) -> PrefixCode:
    """Huffman code keyed 1..m: pmf entry i gets key i + 1."""
    keys = list(range(1, pmf.size + 1))
    return PrefixCode(canonical_code(huffman_lengths(pmf.probs), keys))


class EscapedHuffman:
    """Huffman over indices 1..m plus an escape word followed by Elias delta.

    Built from pilot counts of the index; unseen indices cost the escape word
    plus their Elias delta codeword.
    """

    ESCAPE = 0

    def __init__(self, counts: Mapping[int, int], escape_weight: float = 1.0):
        keys = sorted(k for k, c in counts.items() if c > 0)
        weights = [float(counts[k]) for k in keys] + [escape_weight]
        table = canonical_code(huffman_lengths(weights), keys + [self.ESCAPE])
        self.code = PrefixCode(table)

    def encode(self, k: int) -> Codeword:
        w = self.code.codewords.get(k)
        if w is not None:
            return w
        return self.code.codewords[self.ESCAPE] + elias_delta(k)

    def length(self, k: int) -> int:
        return len(self.encode(k))

    def decode(self, bits: str, pos: int = 0) -> tuple[int, int]:
        k, pos = self.code.decode(bits, pos)
        if k == self.ESCAPE:
            return elias_delta_decode(bits, pos)
        return k, pos

    def decode_exact(self, bits: str) -> int:
        k, end = self.decode(bits)
        if end != len(bits):
            raise DecodeError("trailing bits after codeword")
        return k


def max_entropy_length_bound(t: float) -> float:
    """ℓ(t) = t + log2(t + 2) + 4."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return t + math.log2(t + 2.0) + 4.0


class Derandomized(NamedTuple):
    i: int
    j: int
    weight: float
    ok: bool


def derandomize(points, tol: float = 1e-12) -> Derandomized:
    """Two per-seed (length, error) points whose mixture is dominated by the mean.

    Returns indices i, j and weight λ₀ with λ₀·p_i + (1-λ₀)·p_j <= mean
    componentwise. Among all admissible pairs and weights the mixture closest to
    the mean is chosen, so the derandomized code keeps the averaged statistics
    as far as possible; ties go to the lexicographically smallest pair.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    m = pts.mean(axis=0)
    n = pts.shape[0]
    ii, jj = np.triu_indices(n)
    a, b = pts[ii], pts[jj]
    # mixture lam*a + (1-lam)*b <= m  <=>  lam*(a-b) <= m-b per coordinate
    lo = np.zeros(ii.size)
    hi = np.ones(ii.size)
    for c in range(2):
        diff = a[:, c] - b[:, c]
        rhs = m[c] - b[:, c] + tol
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            bound = rhs / diff
        pos, neg, zero = diff > 0, diff < 0, diff == 0
        hi = np.where(pos, np.minimum(hi, bound), hi)
        lo = np.where(neg, np.maximum(lo, bound), lo)
        bad = zero & (rhs < 0)
        lo = np.where(bad, 2.0, lo)
    feasible = lo <= hi
    if not np.any(feasible):
        best = int(np.argmin(np.abs(pts - m).sum(axis=1)))
        return Derandomized(best, best, 1.0, False)
    # closest point to m on each admissible segment piece
    d = a - b
    dd = (d * d).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(dd > 0, ((m - b) * d).sum(axis=1) / dd, 1.0)
    lam = np.clip(lam, lo, hi)
    mix = lam[:, None] * a + (1 - lam[:, None]) * b
    dist = np.where(feasible, ((mix - m) ** 2).sum(axis=1), np.inf)
    k = int(np.argmin(dist))
    return Derandomized(int(ii[k]), int(jj[k]), float(lam[k]), True)
