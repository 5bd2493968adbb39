"""Finite-alphabet probability objects and information measures.

Everything is in bits. Arrays held by the types below are made read-only at
construction, so instances can be shared freely between threads and processes.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-12


class AlphabetMismatch(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def xlog2x(p: np.ndarray) -> np.ndarray:
    """Elementwise p*log2(p) with 0*log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log2(p[pos])
    return out


@dataclass(frozen=True)
class Alphabet:
    size: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise ValueError(f"alphabet size must be a positive integer, got {self.size!r}")
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != self.size:
                raise ValueError("label count does not match alphabet size")
            if len(set(labels)) != len(labels):
                raise ValueError("alphabet labels must be distinct")
            object.__setattr__(self, "labels", labels)

    @classmethod
    def of(cls, labels: Sequence[str]) -> Alphabet:
        return cls(len(labels), tuple(labels))

    def label(self, i: int) -> str:
        return self.labels[i] if self.labels is not None else str(i)

    def index(self, label: str) -> int:
        if self.labels is None:
            return int(label)
        return self.labels.index(label)

    def compatible(self, other: Alphabet) -> bool:
        return self.size == other.size

    def to_json(self) -> list[str]:
        return [self.label(i) for i in range(self.size)]


def _check_simplex(probs: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(probs)):
        raise ValueError(f"{what}: non-finite probability")
    if np.any(probs < 0):
        raise ValueError(f"{what}: negative probability")
    total = probs.sum()
    if abs(total - 1.0) > NORM_TOL:
        raise ValueError(f"{what}: probabilities sum to {total!r}, not 1")


@dataclass(frozen=True, eq=False)
class Pmf:
    alphabet: Alphabet
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.shape != (self.alphabet.size,):
            raise ValueError(f"pmf has shape {probs.shape}, alphabet size {self.alphabet.size}")
        _check_simplex(probs, "Pmf")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_probs(cls, probs, labels: Sequence[str] | None = None) -> Pmf:
        probs = np.asarray(probs, dtype=np.float64)
        alph = Alphabet(len(probs), tuple(labels) if labels is not None else None)
        return cls(alph, probs)

    @classmethod
    def normalized(cls, weights, labels: Sequence[str] | None = None) -> Pmf:
        """Explicit renormalization of nonnegative weights."""
        w = np.asarray(weights, dtype=np.float64)
        return cls.from_probs(w / w.sum(), labels)

    @property
    def size(self) -> int:
        return self.alphabet.size

    @property
    def support(self) -> np.ndarray:
        return self.probs > 0

    def __len__(self) -> int:
        return self.alphabet.size

    def __getitem__(self, i):
        return self.probs[i]

    def log2prob(self, symbols) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log2(self.probs)[np.asarray(symbols)]

    def allclose(self, other: Pmf, tol: float = 1e-10) -> bool:
        return self.alphabet.compatible(other.alphabet) and bool(
            np.max(np.abs(self.probs - other.probs)) <= tol)

    def to_dict(self) -> dict:
        return {"alphabet": self.alphabet.to_json(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Pmf:
        return cls(Alphabet.of(d["alphabet"]), np.asarray(d["probs"], dtype=np.float64))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> Pmf:
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True, eq=False)
class JointPmf:
    row_alphabet: Alphabet
    col_alphabet: Alphabet
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.shape != (self.row_alphabet.size, self.col_alphabet.size):
            raise ValueError(f"joint has shape {probs.shape}, expected "
                             f"({self.row_alphabet.size}, {self.col_alphabet.size})")
        _check_simplex(probs, "JointPmf")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_probs(cls, probs) -> JointPmf:
        probs = np.asarray(probs, dtype=np.float64)
        return cls(Alphabet(probs.shape[0]), Alphabet(probs.shape[1]), probs)

    @classmethod
    def from_kernel(cls, p: Pmf, k: Kernel) -> JointPmf:
        """Joint of (input, output) with the input drawn from ``p``."""
        if not p.alphabet.compatible(k.input_alphabet):
            raise AlphabetMismatch("pmf alphabet does not match kernel input")
        return cls(p.alphabet, k.output_alphabet, p.probs[:, None] * k.rows)

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    def row_marginal(self) -> Pmf:
        return Pmf(self.row_alphabet, self.probs.sum(axis=1))

    def col_marginal(self) -> Pmf:
        return Pmf(self.col_alphabet, self.probs.sum(axis=0))

    def transpose(self) -> JointPmf:
        return JointPmf(self.col_alphabet, self.row_alphabet, self.probs.T)

    def product_of_marginals(self) -> JointPmf:
        return JointPmf(self.row_alphabet, self.col_alphabet,
                        np.outer(self.probs.sum(axis=1), self.probs.sum(axis=0)))

    def row_given_col(self) -> Kernel:
        """P(row | col) as a kernel from columns to rows; unused columns get uniform rows."""
        return _conditional(self.probs.T, self.col_alphabet, self.row_alphabet)

    def col_given_row(self) -> Kernel:
        return _conditional(self.probs, self.row_alphabet, self.col_alphabet)

    def to_dict(self) -> dict:
        return {"rows": self.row_alphabet.to_json(), "cols": self.col_alphabet.to_json(),
                "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> JointPmf:
        probs = np.asarray(d["probs"], dtype=np.float64)
        rows = Alphabet.of(d["rows"]) if "rows" in d else Alphabet(probs.shape[0])
        cols = Alphabet.of(d["cols"]) if "cols" in d else Alphabet(probs.shape[1])
        return cls(rows, cols, probs)


@dataclass(frozen=True, eq=False)
class Kernel:
    input_alphabet: Alphabet
    output_alphabet: Alphabet
    rows: np.ndarray

    def __post_init__(self):
        rows = _frozen(self.rows)
        if rows.shape != (self.input_alphabet.size, self.output_alphabet.size):
            raise ValueError(f"kernel has shape {rows.shape}")
        if not np.all(np.isfinite(rows)) or np.any(rows < 0):
            raise ValueError("kernel entries must be finite and nonnegative")
        bad = np.abs(rows.sum(axis=1) - 1.0) > NORM_TOL
        if np.any(bad):
            raise ValueError(f"kernel rows {np.flatnonzero(bad).tolist()} do not sum to 1")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_rows(cls, rows) -> Kernel:
        rows = np.asarray(rows, dtype=np.float64)
        return cls(Alphabet(rows.shape[0]), Alphabet(rows.shape[1]), rows)

    @classmethod
    def normalized(cls, weights, input_alphabet: Alphabet | None = None,
                   output_alphabet: Alphabet | None = None) -> Kernel:
        w = np.asarray(weights, dtype=np.float64)
        rows = w / w.sum(axis=1, keepdims=True)
        return cls(input_alphabet or Alphabet(w.shape[0]),
                   output_alphabet or Alphabet(w.shape[1]), rows)

    @classmethod
    def identity(cls, a: Alphabet) -> Kernel:
        return cls(a, a, np.eye(a.size))

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows.shape

    def output_pmf(self, p: Pmf) -> Pmf:
        if not p.alphabet.compatible(self.input_alphabet):
            raise AlphabetMismatch("pmf alphabet does not match kernel input")
        return Pmf(self.output_alphabet, p.probs @ self.rows)

    def to_dict(self) -> dict:
        return {"inputs": self.input_alphabet.to_json(),
                "outputs": self.output_alphabet.to_json(), "rows": self.rows.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Kernel:
        rows = np.asarray(d["rows"], dtype=np.float64)
        ins = Alphabet.of(d["inputs"]) if "inputs" in d else Alphabet(rows.shape[0])
        outs = Alphabet.of(d["outputs"]) if "outputs" in d else Alphabet(rows.shape[1])
        return cls(ins, outs, rows)


def _conditional(probs: np.ndarray, given: Alphabet, out: Alphabet) -> Kernel:
    mass = probs.sum(axis=1, keepdims=True)
    rows = np.full(probs.shape, 1.0 / probs.shape[1])
    used = mass[:, 0] > 0
    rows[used] = probs[used] / mass[used]
    # pin row sums exactly; the division can leave ~1 ulp of drift
    rows[used] /= rows[used].sum(axis=1, keepdims=True)
    return Kernel(given, out, rows)


@dataclass(frozen=True, eq=False)
class InfoDensityTable:
    joint: JointPmf
    values: np.ndarray
    defined_mask: np.ndarray = field(repr=False)

    def expectation(self) -> float:
        p = self.joint.probs
        return float(np.sum(p[self.defined_mask] * self.values[self.defined_mask]))


# ---------------------------------------------------------------------------
# information measures


def entropy(p: Pmf) -> float:
    return float(-xlog2x(p.probs).sum())


def binary_entropy(q: float) -> float:
    return float(-xlog2x(np.array([q, 1.0 - q])).sum())


def kl(p: Pmf, q: Pmf) -> float:
    """Relative entropy D(p||q) in bits; +inf when p is not dominated by q."""
    if not p.alphabet.compatible(q.alphabet):
        raise AlphabetMismatch(f"alphabet sizes {p.size} and {q.size} differ")
    return _kl_arrays(p.probs, q.probs)


def _kl_arrays(p: np.ndarray, q: np.ndarray) -> float:
    pos = p > 0
    if np.any(q[pos] <= 0):
        return float("inf")
    return float(np.sum(p[pos] * (np.log2(p[pos]) - np.log2(q[pos]))))


def mutual_information(j: JointPmf) -> float:
    # clamp tiny negative round-off; I >= 0 holds exactly in theory
    return max(_kl_arrays(j.probs.ravel(), j.product_of_marginals().probs.ravel()), 0.0)


def information_density(j: JointPmf) -> InfoDensityTable:
    p = j.probs
    prod = np.outer(p.sum(axis=1), p.sum(axis=0))
    mask = p > 0
    values = np.zeros_like(p)
    with np.errstate(divide="ignore"):  # marginal products can underflow for subnormal cells
        values[mask] = np.log2(p[mask]) - np.log2(prod[mask])
    mask.setflags(write=False)
    values.setflags(write=False)
    return InfoDensityTable(j, values, mask)


def compose_markov(p_xy: JointPmf, k_u_given_y: Kernel) -> tuple[JointPmf, JointPmf]:
    """Joints of (X,U) and (Y,U) for the chain X -> Y -> U."""
    if not p_xy.col_alphabet.compatible(k_u_given_y.input_alphabet):
        raise AlphabetMismatch("kernel input alphabet must be the Y alphabet")
    k = k_u_given_y.rows
    p_xu = p_xy.probs @ k
    p_yu = p_xy.probs.sum(axis=0)[:, None] * k
    return (JointPmf(p_xy.row_alphabet, k_u_given_y.output_alphabet, p_xu),
            JointPmf(p_xy.col_alphabet, k_u_given_y.output_alphabet, p_yu))


def triple_joint(p_xy: JointPmf, k_u_given_y: Kernel) -> np.ndarray:
    """P(x, y, u) as an array indexed [x, y, u]."""
    return p_xy.probs[:, :, None] * k_u_given_y.rows[None, :, :]


def empirical_pmf(seq, a: Alphabet) -> Pmf:
    seq = np.asarray(seq, dtype=np.int64).ravel()
    if seq.size == 0:
        raise ValueError("empirical pmf of an empty sequence")
    if seq.min() < 0 or seq.max() >= a.size:
        raise ValueError("sequence contains symbols outside the alphabet")
    counts = np.bincount(seq, minlength=a.size)
    return Pmf(a, counts / seq.size)


# ---------------------------------------------------------------------------
# standard instances


def bern(p: float) -> Pmf:
    """Bernoulli(p) on {0, 1}: P(1) = p."""
    return Pmf.from_probs([1.0 - p, p])


def bsc(p: float) -> Kernel:
    return Kernel.from_rows([[1.0 - p, p], [p, 1.0 - p]])


def dsbs(p: float) -> JointPmf:
    """Doubly symmetric binary source: Y uniform, X = Y through BSC(p). Rows X, cols Y."""
    return JointPmf.from_probs([[0.5 * (1 - p), 0.5 * p], [0.5 * p, 0.5 * (1 - p)]])


def binary_conv(a: float, b: float) -> float:
    """a * b = a(1-b) + b(1-a)."""
    return a * (1 - b) + b * (1 - a)
