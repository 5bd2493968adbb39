"""Information bottleneck and noisy rate-distortion solvers, plus second-order quantities.

Both solvers are Blahut-Arimoto style alternating minimizations of a Lagrangian
with the multiplier searched by a safeguarded secant (Illinois) method until the
constraint is met with equality. The converged multiplier is the slope of the
curve at the solved point, which is what the dispersion quantities need.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .prob import (
    Alphabet,
    JointPmf,
    Kernel,
    Pmf,
    compose_markov,
    information_density,
    mutual_information,
    triple_joint,
)

log = logging.getLogger(__name__)

KERNEL_TOL = 1e-10
MAX_ITER = 100_000
CONSTRAINT_TOL = 1e-10
BETA_MAX = 1e7
SENTINEL = 1e30


class InfeasibleDistortion(ValueError):
    """The requested distortion level is below the minimum achievable one."""


class TiltedInformationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DistortionMeasure:
    """Distortion d(x, z); entries flagged in ``infinite`` are +inf.

    Infinite entries are stored as a large finite sentinel so ``values`` stays
    finite; use :meth:`as_float` when arithmetic with real infinities is wanted.
    """

    x_alphabet: Alphabet
    z_alphabet: Alphabet
    values: np.ndarray
    infinite: np.ndarray | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.shape != (self.x_alphabet.size, self.z_alphabet.size):
            raise ValueError(f"distortion table has shape {vals.shape}")
        inf = np.isinf(vals) & (vals > 0)
        if self.infinite is not None:
            inf |= np.asarray(self.infinite, dtype=bool)
        vals[inf] = SENTINEL
        if not np.all(np.isfinite(vals)):
            raise ValueError("distortion entries must be finite or +inf")
        vals.setflags(write=False)
        inf.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "infinite", inf)

    @classmethod
    def from_values(cls, values) -> DistortionMeasure:
        values = np.asarray(values, dtype=np.float64)
        return cls(Alphabet(values.shape[0]), Alphabet(values.shape[1]), values)

    @classmethod
    def hamming(cls, size: int) -> DistortionMeasure:
        return cls.from_values(1.0 - np.eye(size))

    def as_float(self) -> np.ndarray:
        out = self.values.copy()
        out[self.infinite] = np.inf
        return out

    def to_dict(self) -> dict:
        vals = [[None if inf else v for v, inf in zip(row, irow)]
                for row, irow in zip(self.values.tolist(), self.infinite.tolist())]
        return {"x": self.x_alphabet.to_json(), "z": self.z_alphabet.to_json(), "values": vals}

    @classmethod
    def from_dict(cls, d: dict) -> DistortionMeasure:
        vals = np.array([[np.inf if v is None else v for v in row] for row in d["values"]])
        xa = Alphabet.of(d["x"]) if "x" in d else Alphabet(vals.shape[0])
        za = Alphabet.of(d["z"]) if "z" in d else Alphabet(vals.shape[1])
        return cls(xa, za, vals)


@dataclass(frozen=True, eq=False)
class SurrogateDistortion:
    """d̄(y, z) = E[d(X, z) | Y = y]; rows for P_Y(y) = 0 are flagged unused."""

    measure: DistortionMeasure
    unused_rows: np.ndarray


@dataclass(frozen=True, eq=False)
class IBSolution:
    p_xy: JointPmf
    kernel_u_given_y: Kernel
    ib_bits: float
    lambda_star: float
    achieved_c_bits: float
    u_size: int
    converged: bool
    iterations: int
    requested_c_bits: float = float("nan")
    beta_bracket: tuple[float, float] = (float("nan"), float("nan"))

    def to_dict(self) -> dict:
        return {
            "kernel_u_given_y": self.kernel_u_given_y.rows.tolist(),
            "ib_bits": self.ib_bits,
            "lambda_star": self.lambda_star,
            "achieved_c_bits": self.achieved_c_bits,
            "requested_c_bits": self.requested_c_bits,
            "u_size": self.u_size,
            "converged": self.converged,
            "iterations": self.iterations,
            "beta_bracket": list(self.beta_bracket),
        }


@dataclass(frozen=True, eq=False)
class RDSolution:
    p_xy: JointPmf
    d: DistortionMeasure
    kernel_z_given_y: Kernel
    rate_bits: float
    distortion_level: float
    lambda_star: float
    achieved_distortion: float = float("nan")
    converged: bool = True
    iterations: int = 0
    kink: bool = False
    slope_bracket: tuple[float, float] = (float("nan"), float("nan"))

    @property
    def output_pmf(self) -> Pmf:
        return self.kernel_z_given_y.output_pmf(self.p_xy.col_marginal())

    def to_dict(self) -> dict:
        return {
            "kernel_z_given_y": self.kernel_z_given_y.rows.tolist(),
            "rate_bits": self.rate_bits,
            "distortion_level": self.distortion_level,
            "achieved_distortion": self.achieved_distortion,
            "lambda_star": self.lambda_star,
            "converged": self.converged,
            "iterations": self.iterations,
            "kink": self.kink,
            "slope_bracket": list(self.slope_bracket),
        }


@dataclass(frozen=True)
class DispersionSet:
    vib: float
    cvib: float
    v_tilde: float
    cv_tilde: float

    def to_dict(self) -> dict:
        return {"vib": self.vib, "cvib": self.cvib, "v_tilde": self.v_tilde,
                "cv_tilde": self.cv_tilde}


# ---------------------------------------------------------------------------
# shared helpers


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """D(p_i || q_j) in bits for every row pair, shape (len(p), len(q))."""
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(p > 0, np.log2(np.where(p > 0, p, 1.0)), 0.0)
        logq = np.log2(q)
        cross = np.where(p[:, None, :] > 0, p[:, None, :] * logq[None, :, :], 0.0).sum(axis=2)
    neg = (p * logp).sum(axis=1)[:, None]
    out = neg - cross
    return np.where(np.isnan(out), np.inf, out)


def _normalize_log_rows(logw: np.ndarray) -> np.ndarray:
    m = np.max(logw, axis=1, keepdims=True)
    w = np.exp2(logw - m)
    return w / w.sum(axis=1, keepdims=True)


def _exact_kernel(rows: np.ndarray, y_alph: Alphabet, u_alph: Alphabet | None = None) -> Kernel:
    rows = np.clip(rows, 0.0, None)
    rows = rows / rows.sum(axis=1, keepdims=True)
    return Kernel(y_alph, u_alph or Alphabet(rows.shape[1]), rows)


def cond_var_info_density(p_xy: JointPmf, k_u_given_y: Kernel) -> float:
    """E[Var[ι_{X;U}(X;U) | Y, U]] in bits²."""
    p_xu, _ = compose_markov(p_xy, k_u_given_y)
    dens = information_density(p_xu)
    return _cond_var_given_yu(p_xy, k_u_given_y, dens.values, dens.defined_mask)


def _cond_var_given_yu(p_xy: JointPmf, k: Kernel, f: np.ndarray, mask: np.ndarray) -> float:
    """E[Var[f(X,U) | Y,U]] for X -> Y -> U, with f given on (x,u)."""
    joint = triple_joint(p_xy, k)
    total = 0.0
    for y in range(joint.shape[1]):
        for u in range(joint.shape[2]):
            w = joint[:, y, u]
            m = w.sum()
            if m <= 0:
                continue
            sel = w > 0
            if np.any(~mask[sel, u]):
                return float("inf")
            vals = f[sel, u]
            pw = w[sel] / m
            mean = pw @ vals
            total += m * float(pw @ (vals - mean) ** 2)
    return total


# ---------------------------------------------------------------------------
# information bottleneck


def _ib_iterate(p_xy: np.ndarray, q: np.ndarray, beta: float, tol: float, max_iter: int):
    """Self-consistent IB updates at fixed beta. Returns (kernel, iterations, converged)."""
    p_y = p_xy.sum(axis=0)
    p_x_given_y = np.where(p_y > 0, p_xy / np.where(p_y > 0, p_y, 1.0), 0.0).T  # [y, x]
    for it in range(1, max_iter + 1):
        p_u = p_y @ q
        live = p_u > 0
        p_x_given_u = np.zeros((q.shape[1], p_xy.shape[0]))
        p_x_given_u[live] = (p_xy @ q)[:, live].T / p_u[live, None]
        div = _kl_rows(p_x_given_y, p_x_given_u)
        with np.errstate(divide="ignore"):
            logw = np.log2(p_u)[None, :] - beta * div
        new = _normalize_log_rows(logw)
        delta = np.max(np.abs(new - q))
        q = new
        if delta < tol:
            return q, it, True
    return q, max_iter, False


def _ib_eval(p_xy: JointPmf, q: np.ndarray) -> tuple[float, float]:
    k = _exact_kernel(q, p_xy.col_alphabet)
    p_xu, p_yu = compose_markov(p_xy, k)
    return mutual_information(p_xu), mutual_information(p_yu)


def _ib_init(p_xy: JointPmf, u_size: int, rng: np.random.Generator, mix: float = 0.3) -> np.ndarray:
    """Near-deterministic start: y -> u = y mod u_size, mixed with a random row."""
    ny = p_xy.shape[1]
    base = np.zeros((ny, u_size))
    base[np.arange(ny), np.arange(ny) % u_size] = 1.0
    noise = rng.dirichlet(np.ones(u_size), size=ny)
    return (1 - mix) * base + mix * noise


def minimal_sufficient_kernel(p_xy: JointPmf, u_size: int | None = None) -> Kernel:
    """U = class of P_{X|Y=y}: the smallest-I(Y;U) kernel with I(X;U) = I(X;Y)."""
    post = p_xy.row_given_col().rows  # [y, x]
    p_y = p_xy.probs.sum(axis=0)
    classes: list[np.ndarray] = []
    assign = []
    for y in range(post.shape[0]):
        for i, c in enumerate(classes):
            if np.max(np.abs(c - post[y])) < 1e-12 or p_y[y] == 0:
                assign.append(i)
                break
        else:
            classes.append(post[y])
            assign.append(len(classes) - 1)
    size = max(u_size or 0, len(classes))
    rows = np.zeros((post.shape[0], size))
    rows[np.arange(post.shape[0]), assign] = 1.0
    return Kernel(p_xy.col_alphabet, Alphabet(size), rows)


def solve_ib(p_xy: JointPmf, c_bits: float, u_size: int | None = None, *,
             tol: float = KERNEL_TOL, max_iter: int = MAX_ITER, restarts: int = 2,
             seed: int = 0) -> IBSolution:
    """Minimize I(Y;U) subject to I(X;U) >= c_bits over kernels P_{U|Y}.

    ``u_size`` defaults to |Y| + 1. ``restarts`` perturb-and-reconverge runs at the
    final multiplier break ties among minimizers toward the smallest
    E[Var[ι_{X;U} | Y, U]].
    """
    if u_size is None:
        u_size = p_xy.shape[1] + 1
    if u_size < 2:
        raise ValueError("u_size must be at least 2")
    i_xy = mutual_information(p_xy)
    if c_bits < 0:
        raise ValueError("c_bits must be nonnegative")
    if c_bits > i_xy + 1e-12:
        raise ValueError(f"c_bits={c_bits} exceeds I(X;Y)={i_xy}")
    u_alph = Alphabet(u_size)

    if c_bits == 0:
        # constraint inactive: the multiplier is zero
        rows = np.zeros((p_xy.shape[1], u_size))
        rows[:, 0] = 1.0
        return IBSolution(p_xy, Kernel(p_xy.col_alphabet, u_alph, rows), 0.0, 0.0, 0.0,
                          u_size, True, 0, c_bits, (0.0, 1.0))
    if c_bits >= i_xy - 1e-12:
        k = minimal_sufficient_kernel(p_xy, u_size)
        p_xu, p_yu = compose_markov(p_xy, k)
        return IBSolution(p_xy, k, mutual_information(p_yu), float("inf"),
                          mutual_information(p_xu), k.shape[1], True, 0, c_bits,
                          (float("inf"), float("inf")))

    rng = np.random.default_rng(seed)
    q0 = _ib_init(p_xy, u_size, rng)
    p = p_xy.probs
    total_iter = 0
    all_converged = True

    def run(beta, start):
        nonlocal total_iter, all_converged
        q, it, ok = _ib_iterate(p, start, beta, tol, max_iter)
        total_iter += it
        all_converged &= ok
        ixu, iyu = _ib_eval(p_xy, q)
        return q, ixu, iyu

    # below beta = 1 the trivial kernel is optimal
    lo_beta, lo_val = 1.0, -c_bits
    hi_beta = 2.0
    hi_q, hi_ixu, hi_iyu = run(hi_beta, q0)
    while hi_ixu < c_bits:
        lo_beta, lo_val = hi_beta, hi_ixu - c_bits
        hi_beta *= 2.0
        if hi_beta > BETA_MAX:
            raise RuntimeError("multiplier search diverged; c_bits too close to I(X;Y)")
        hi_q, hi_ixu, hi_iyu = run(hi_beta, q0)
    hi_val = hi_ixu - c_bits

    # Illinois regula falsi on beta; always warm-start from the feasible side
    side = 0
    for _ in range(200):
        if hi_val <= CONSTRAINT_TOL or hi_beta - lo_beta <= 1e-13 * hi_beta:
            break
        beta = (lo_beta * hi_val - hi_beta * lo_val) / (hi_val - lo_val)
        if not lo_beta < beta < hi_beta:
            beta = 0.5 * (lo_beta + hi_beta)
        q, ixu, iyu = run(beta, hi_q)
        val = ixu - c_bits
        if val >= 0:
            hi_beta, hi_val, hi_q, hi_ixu, hi_iyu = beta, val, q, ixu, iyu
            if side == 1:
                lo_val *= 0.5
            side = 1
        else:
            lo_beta, lo_val = beta, val
            if side == -1:
                hi_val *= 0.5
            side = -1
    beta = hi_beta
    best_q, best_ixu, best_iyu = hi_q, hi_ixu, hi_iyu
    best_cv = cond_var_info_density(p_xy, _exact_kernel(best_q, p_xy.col_alphabet, u_alph))
    for _ in range(restarts):
        start = 0.9 * best_q + 0.1 * rng.dirichlet(np.ones(u_size), size=p.shape[1])
        q, ixu, iyu = run(beta, start)
        if abs(ixu - best_ixu) > 1e-8 or abs(iyu - best_iyu) > 1e-8:
            continue
        cv = cond_var_info_density(p_xy, _exact_kernel(q, p_xy.col_alphabet, u_alph))
        if cv < best_cv - 1e-12:
            best_q, best_ixu, best_iyu, best_cv = q, ixu, iyu, cv

    kernel = _exact_kernel(best_q, p_xy.col_alphabet, u_alph)
    p_xu, p_yu = compose_markov(p_xy, kernel)
    if not all_converged:
        log.warning("IB iteration hit max_iter=%d before converging", max_iter)
    return IBSolution(p_xy, kernel, mutual_information(p_yu), float(beta),
                      mutual_information(p_xu), u_size, all_converged, total_iter,
                      c_bits, (float(lo_beta), float(hi_beta)))


def ib_curve(p_xy: JointPmf, c_grid, u_size: int | None = None, **kw) -> list[IBSolution]:
    return [solve_ib(p_xy, float(c), u_size, **kw) for c in c_grid]


# ---------------------------------------------------------------------------
# noisy rate-distortion


def surrogate_distortion(p_xy: JointPmf, d: DistortionMeasure) -> SurrogateDistortion:
    """Conditional expected distortion given the observation."""
    if not p_xy.row_alphabet.compatible(d.x_alphabet):
        raise ValueError("distortion x alphabet does not match the source")
    post = p_xy.row_given_col().rows  # [y, x]
    p_y = p_xy.probs.sum(axis=0)
    vals = d.as_float()
    dbar = np.zeros((post.shape[0], vals.shape[1]))
    inf = np.zeros_like(dbar, dtype=bool)
    for y in range(post.shape[0]):
        sel = post[y] > 0
        inf[y] = np.any(d.infinite[sel], axis=0)
        dbar[y] = np.where(inf[y], 0.0, post[y, sel] @ np.where(d.infinite[sel], 0.0, vals[sel]))
    unused = p_y == 0
    dbar[unused] = 0.0
    inf[unused] = False
    return SurrogateDistortion(DistortionMeasure(p_xy.col_alphabet, d.z_alphabet, dbar, inf), unused)


def _rd_iterate(p_y: np.ndarray, dbar: np.ndarray, inf: np.ndarray, lam: float,
                q: np.ndarray, tol: float, max_iter: int):
    for it in range(1, max_iter + 1):
        r = p_y @ q
        with np.errstate(divide="ignore"):
            logw = np.log2(r)[None, :] - lam * dbar
        logw[inf] = -np.inf
        new = _normalize_log_rows(logw)
        delta = np.max(np.abs(new - q))
        q = new
        if delta < tol:
            return q, it, True
    return q, max_iter, False


def _rd_eval(p_xy: JointPmf, dbar: np.ndarray, inf: np.ndarray, q: np.ndarray):
    p_y = p_xy.probs.sum(axis=0)
    k = _exact_kernel(q, p_xy.col_alphabet)
    _, p_yz = compose_markov(p_xy, k)
    w = p_y[:, None] * k.rows
    if np.any(w[inf] > 0):
        return float("inf"), mutual_information(p_yz), k
    return float(np.sum(w[~inf] * dbar[~inf])), mutual_information(p_yz), k


def solve_noisy_rd(p_xy: JointPmf, d: DistortionMeasure, big_d: float, z_size: int | None = None,
                   *, tol: float = KERNEL_TOL, max_iter: int = MAX_ITER) -> RDSolution:
    """R(D) = min I(Y;Z) s.t. E[d(X,Z)] <= D, via the surrogate distortion on (Y, Z).

    ``z_size`` must equal the reconstruction alphabet size of ``d`` when given.
    """
    if z_size is not None and z_size != d.z_alphabet.size:
        raise ValueError("z_size must match the distortion measure's reconstruction alphabet")
    sur = surrogate_distortion(p_xy, d)
    dbar = sur.measure.values.copy()
    inf = sur.measure.infinite
    p_y = p_xy.probs.sum(axis=0)
    nz = d.z_alphabet.size
    z_alph = d.z_alphabet

    # E[d(X,z)] for each constant reconstruction
    const = np.array([np.inf if np.any(inf[p_y > 0, z]) else float(p_y @ np.where(inf[:, z], 0, dbar[:, z]))
                      for z in range(nz)])
    if big_d >= const.min():
        z0 = int(np.argmin(const))
        rows = np.zeros((p_y.size, nz))
        rows[:, z0] = 1.0
        return RDSolution(p_xy, d, Kernel(p_xy.col_alphabet, z_alph, rows), 0.0, big_d, 0.0,
                          float(const[z0]), True, 0, False, (0.0, 0.0))

    masked = np.where(inf, np.inf, dbar)
    d_min = float(np.sum(p_y * np.min(masked, axis=1)))
    if not math.isfinite(d_min) or big_d < d_min - 1e-12:
        raise InfeasibleDistortion(f"D={big_d} is below the minimum achievable distortion {d_min}")
    if big_d <= d_min + 1e-12:
        # only the per-y minimizers are admissible; slope is unbounded here
        rows = np.zeros((p_y.size, nz))
        rows[np.arange(p_y.size), np.argmin(masked, axis=1)] = 1.0
        k = Kernel(p_xy.col_alphabet, z_alph, rows)
        _, p_yz = compose_markov(p_xy, k)
        return RDSolution(p_xy, d, k, mutual_information(p_yz), big_d, float("inf"), d_min,
                          True, 0, True, (float("inf"), float("inf")))

    q0 = np.where(inf, 0.0, 1.0)
    q0 /= q0.sum(axis=1, keepdims=True)
    total_iter = 0
    all_ok = True

    def run(lam, start):
        nonlocal total_iter, all_ok
        q, it, ok = _rd_iterate(p_y, dbar, inf, lam, start, tol, max_iter)
        total_iter += it
        all_ok &= ok
        dist, rate, k = _rd_eval(p_xy, dbar, inf, q)
        return q, dist, rate

    lo_lam, lo_val = 0.0, float(const.min()) - big_d  # E[d] - D > 0 on this side
    hi_lam = 1.0
    hi_q, hi_d, _ = run(hi_lam, q0)
    while hi_d > big_d:
        lo_lam, lo_val = hi_lam, hi_d - big_d
        hi_lam *= 2.0
        if hi_lam > BETA_MAX:
            raise RuntimeError("slope search diverged; D too close to the minimum distortion")
        hi_q, hi_d, _ = run(hi_lam, q0)
    hi_val = hi_d - big_d
    side = 0
    for _ in range(200):
        if -hi_val <= CONSTRAINT_TOL or hi_lam - lo_lam <= 1e-13 * hi_lam:
            break
        lam = (lo_lam * hi_val - hi_lam * lo_val) / (hi_val - lo_val)
        if not lo_lam < lam < hi_lam:
            lam = 0.5 * (lo_lam + hi_lam)
        q, dist, _ = run(lam, hi_q)
        val = dist - big_d
        if val <= 0:
            hi_lam, hi_val, hi_q, hi_d = lam, val, q, dist
            if side == 1:
                lo_val *= 0.5
            side = 1
        else:
            lo_lam, lo_val = lam, val
            if side == -1:
                hi_val *= 0.5
            side = -1
    kernel = _exact_kernel(hi_q, p_xy.col_alphabet, z_alph)
    _, p_yz = compose_markov(p_xy, kernel)
    # a bracket that stays wide while the constraint gap closes signals a kink in R(D)
    kink = (hi_lam - lo_lam) > 1e-3 * max(hi_lam, 1.0) and -hi_val <= CONSTRAINT_TOL
    if kink:
        log.warning("R(D) appears to have a kink at D=%g; slope bracket [%g, %g]", big_d, lo_lam, hi_lam)
    return RDSolution(p_xy, d, kernel, mutual_information(p_yz), big_d, float(hi_lam), hi_d,
                      all_ok, total_iter, kink, (float(lo_lam), float(hi_lam)))


def neg_info_density_distortion(p_xy: JointPmf, k: Kernel) -> DistortionMeasure:
    """d(x, u) = -ι_{X;U}(x; u) for the chain X -> Y -> U; +inf where P(x, u) = 0."""
    p_xu, _ = compose_markov(p_xy, k)
    dens = information_density(p_xu)
    vals = np.where(dens.defined_mask, -dens.values, 0.0)
    return DistortionMeasure(p_xy.row_alphabet, k.output_alphabet, vals, ~dens.defined_mask)


# ---------------------------------------------------------------------------
# second-order quantities


def _moments(w: np.ndarray, f: np.ndarray) -> float:
    sel = w > 0
    if not np.all(np.isfinite(f[sel])):
        return float("inf")
    m = float(w[sel] @ f[sel])
    return float(w[sel] @ (f[sel] - m) ** 2)


def ib_dispersions(ib: IBSolution) -> tuple[float, float]:
    """(VIB, CVIB) of a solved bottleneck point."""
    lam = ib.lambda_star
    p_xy, k = ib.p_xy, ib.kernel_u_given_y
    p_xu, p_yu = compose_markov(p_xy, k)
    i_xu = information_density(p_xu)
    i_yu = information_density(p_yu)
    joint = triple_joint(p_xy, k)
    f = i_yu.values[None, :, :] - lam * i_xu.values[:, None, :] if lam > 0 else \
        np.broadcast_to(i_yu.values[None, :, :], joint.shape)
    vib = _moments(joint.ravel(), np.asarray(f, dtype=float).ravel())
    if lam == 0:
        cvib = 0.0
    elif math.isinf(lam):
        cvib = float("inf") if cond_var_info_density(p_xy, k) > 0 else 0.0
    else:
        cvib = lam ** 2 * _cond_var_given_yu(p_xy, k, i_xu.values, i_xu.defined_mask)
    return vib, cvib


def rd_dispersions(rd: RDSolution) -> tuple[float, float]:
    """(Ṽ, C̃V) of a solved noisy rate-distortion point."""
    lam = rd.lambda_star
    p_xy, k = rd.p_xy, rd.kernel_z_given_y
    _, p_yz = compose_markov(p_xy, k)
    i_yz = information_density(p_yz)
    dvals = rd.d.as_float()
    joint = triple_joint(p_xy, k)
    with np.errstate(invalid="ignore"):
        f = i_yz.values[None, :, :] + (lam * dvals[:, None, :] if lam > 0 else 0.0)
    f = np.broadcast_to(f, joint.shape)
    v_tilde = _moments(joint.ravel(), np.asarray(f, dtype=float).ravel())
    if lam == 0:
        return v_tilde, 0.0
    cv = _cond_var_given_yu(p_xy, k, np.where(rd.d.infinite, 0.0, dvals), ~rd.d.infinite)
    return v_tilde, lam ** 2 * cv if cv > 0 else 0.0


def dispersion_quantities(ib: IBSolution, rd: RDSolution | None = None) -> DispersionSet:
    """VIB, CVIB, Ṽ, C̃V by exact enumeration of the finite joints.

    When ``rd`` is omitted the noisy rate-distortion problem induced by the
    bottleneck point (distortion -ι_{X;U} at level -C) is solved and used.
    """
    if rd is None:
        rd = induced_rd(ib)
    vib, cvib = ib_dispersions(ib)
    v_tilde, cv_tilde = rd_dispersions(rd)
    return DispersionSet(vib, cvib, v_tilde, cv_tilde)


def induced_rd(ib: IBSolution, **kw) -> RDSolution:
    d = neg_info_density_distortion(ib.p_xy, ib.kernel_u_given_y)
    return solve_noisy_rd(ib.p_xy, d, -ib.achieved_c_bits, **kw)


def tilted_information(rd: RDSolution, y: int, tol: float = 1e-6) -> float:
    """d-tilted information ȷ(y, D) = ι_{Y;Z*}(y;z) + λ*(E[d(X,z)|Y=y] - D), z in supp(Z*)."""
    k = rd.kernel_z_given_y.rows
    p_z = rd.output_pmf.probs
    sur = surrogate_distortion(rd.p_xy, rd.d).measure
    lam = rd.lambda_star
    if not math.isfinite(lam):
        raise TiltedInformationError("tilted information undefined at an unbounded slope")
    zs = np.flatnonzero((p_z > 0) & (k[y] > 0) & ~sur.infinite[y])
    if zs.size == 0:
        raise TiltedInformationError(f"no reconstruction in the support for y={y}")
    vals = np.log2(k[y, zs]) - np.log2(p_z[zs]) + lam * (sur.values[y, zs] - rd.distortion_level)
    if np.ptp(vals) > tol:
        raise TiltedInformationError(
            f"tilted information varies by {np.ptp(vals):.3g} across the support; "
            "the rate-distortion solution is not converged")
    return float(vals.mean())


def psi(feasible_mask, reference: Pmf) -> float:
    """-log2 of the reference mass of the feasible reconstructions.

    This is the closed form of the minimum of D(P || reference) over P supported
    on the feasible set: the minimizer is the reference conditioned on that set.
    An empty feasible set gives +inf.
    """
    if callable(feasible_mask):
        mask = np.array([bool(feasible_mask(z)) for z in range(reference.size)])
    else:
        mask = np.asarray(feasible_mask, dtype=bool)
    if mask.shape != reference.probs.shape:
        raise ValueError("feasible mask must cover the reference alphabet")
    mass = float(reference.probs[mask].sum())
    if mass <= 0:
        return float("inf")
    return max(-math.log2(mass), 0.0)


def psi_from_masses(masses) -> float:
    mass = float(np.sum(masses))
    return float("inf") if mass <= 0 else max(-math.log2(mass), 0.0)


# ---------------------------------------------------------------------------
# serialization


def solution_json(sol: IBSolution | RDSolution) -> str:
    return json.dumps(sol.to_dict())


def solve_ib_from_config(cfg: dict) -> IBSolution:
    p_xy = JointPmf.from_dict(cfg["p_xy"])
    return solve_ib(p_xy, float(cfg["c_bits"]), cfg.get("u_size"),
                    tol=cfg.get("tol", KERNEL_TOL), max_iter=cfg.get("max_iter", MAX_ITER))
