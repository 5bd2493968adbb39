"""Independent reference computations used as test oracles.

These deliberately avoid the package's solvers: closed forms, plain loops over
finite joints, grid searches and Monte Carlo.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import brentq


def h2(p: float) -> float:
    if p <= 0 or p >= 1:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def conv(a: float, b: float) -> float:
    return a * (1 - b) + b * (1 - a)


def gerber_point(p: float, q: float) -> tuple[float, float]:
    """(I(X;U), I(Y;U)) for DSBS(p) with U = BSC(q) of Y."""
    return 1 - h2(conv(p, q)), 1 - h2(q)


def gerber_ib(p: float, c: float) -> float:
    """IB(C) for DSBS(p): sweep q until I(X;U) = C."""
    if c <= 0:
        return 0.0
    q = brentq(lambda q: 1 - h2(conv(p, q)) - c, 0.0, 0.5 - 1e-15, xtol=1e-15)
    return 1 - h2(q)


def joint_xyu(p_xy: np.ndarray, k: np.ndarray) -> dict:
    """{(x, y, u): prob} built with plain loops."""
    out = {}
    nx, ny = p_xy.shape
    for x, y, u in itertools.product(range(nx), range(ny), range(k.shape[1])):
        pr = p_xy[x, y] * k[y, u]
        if pr > 0:
            out[(x, y, u)] = pr
    return out


def marginal(j: dict, idx) -> dict:
    out: dict = {}
    for key, pr in j.items():
        sub = tuple(key[i] for i in idx)
        out[sub] = out.get(sub, 0.0) + pr
    return out


def dispersions_bruteforce(p_xy: np.ndarray, k: np.ndarray, lam: float, d=None, lam_d=None,
                           k_d=None):
    """VIB, CVIB for the kernel and (when d is given) Ṽ, C̃V, all by explicit enumeration.

    VIB = Var[ι_{Y;U} - λ ι_{X;U}], CVIB = E[Var[λ ι_{X;U} | Y, U]],
    Ṽ = Var[ι_{Y;Z} + λ_d d(X, Z)], C̃V = λ_d² E[Var[d(X, Z) | Y, Z]].
    ``k_d`` is the rate-distortion kernel P_{Z|Y}; it defaults to ``k``.
    """
    if d is not None and k_d is not None:
        vib, cvib = dispersions_bruteforce(p_xy, k, lam)
        _, _, v_t, cv_t = dispersions_bruteforce(p_xy, k_d, lam, d, lam_d)
        return vib, cvib, v_t, cv_t
    j = joint_xyu(p_xy, k)
    px, py, pu = marginal(j, (0,)), marginal(j, (1,)), marginal(j, (2,))
    pxu, pyu = marginal(j, (0, 2)), marginal(j, (1, 2))

    def i_xu(x, u):
        return math.log2(pxu[(x, u)] / (px[(x,)] * pu[(u,)]))

    def i_yu(y, u):
        return math.log2(pyu[(y, u)] / (py[(y,)] * pu[(u,)]))

    def var(f):
        m = sum(pr * f(*key) for key, pr in j.items())
        return sum(pr * (f(*key) - m) ** 2 for key, pr in j.items())

    def cond_var(g):
        tot = 0.0
        for (y, u), pyu_ in pyu.items():
            cell = {x: j[(x, y, u)] / pyu_ for x in range(p_xy.shape[0]) if (x, y, u) in j}
            m = sum(w * g(x, u) for x, w in cell.items())
            tot += pyu_ * sum(w * (g(x, u) - m) ** 2 for x, w in cell.items())
        return tot

    vib = var(lambda x, y, u: i_yu(y, u) - lam * i_xu(x, u))
    cvib = lam ** 2 * cond_var(i_xu)
    if d is None:
        return vib, cvib
    v_t = var(lambda x, y, u: i_yu(y, u) + lam_d * d[x][u])
    cv_t = lam_d ** 2 * cond_var(lambda x, u: d[x][u])
    return vib, cvib, v_t, cv_t


def grid_kl_min(feasible: np.ndarray, ref: np.ndarray, steps: int = 400) -> float:
    """min D(P || ref) over P on a simplex grid supported on the feasible symbols."""
    idx = np.flatnonzero(feasible)
    if idx.size == 0:
        return math.inf
    best = math.inf
    for comp in itertools.product(range(steps + 1), repeat=idx.size - 1):
        last = steps - sum(comp)
        if last < 0:
            continue
        w = np.array(list(comp) + [last], dtype=float) / steps
        pos = w > 0
        val = float(np.sum(w[pos] * np.log2(w[pos] / ref[idx][pos])))
        best = min(best, val)
    return best


def phi_monte_carlo(post: np.ndarray, dvals: np.ndarray, y, z, big_d: float, samples: int,
                    seed: int) -> tuple[float, float]:
    """MC estimate of P(mean d(X_i, z_i) > D | y) and its standard error."""
    rng = np.random.default_rng(seed)
    y, z = np.asarray(y), np.asarray(z)
    cdf = np.cumsum(post[y], axis=1)
    hits = 0
    done = 0
    while done < samples:
        m = min(100_000, samples - done)
        u = rng.random((m, y.size))
        x = (u[:, :, None] >= cdf[None, :, :]).sum(axis=2)
        x = np.minimum(x, post.shape[1] - 1)
        hits += int((dvals[x, z[None, :]].mean(axis=1) > big_d).sum())
        done += m
    p = hits / samples
    return p, math.sqrt(max(p * (1 - p), 1e-12) / samples)


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)
