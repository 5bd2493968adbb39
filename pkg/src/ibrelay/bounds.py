"""Closed-form evaluators of the achievability bounds and second-order rates.

Block quantities are evaluated exactly by enumerating types: ψ(y^n, D, t) only
depends on the y-type (the reference is iid), and the information density of a
block only depends on the joint (x, u) type.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import bisect
from scipy.special import erfc

from .codec import elias_delta_slack, max_entropy_length_bound
from .excess import compositions, conditional_types, log_type_prob
from .ib import (
    DispersionSet,
    IBSolution,
    InfeasibleDistortion,
    RDSolution,
    solve_noisy_rd,
)
from .prob import (
    InfoDensityTable,
    JointPmf,
    compose_markov,
    information_density,
    mutual_information,
)
from .schemes import NoisyVLConfig, RelayConfig, beta_of_counts

Q_TOL = 1e-12


def q_func(t: float) -> float:
    """Gaussian tail Q(t) = P(N(0,1) >= t)."""
    return 0.5 * float(erfc(t / math.sqrt(2.0)))


def q_inv(eps: float) -> float:
    if not 0.0 < eps < 1.0:
        raise ValueError("q_inv needs eps in (0, 1)")
    if eps == 0.5:
        return 0.0
    # Q is decreasing; Q(±40) is outside double range of interest
    return float(bisect(lambda t: q_func(t) - eps, -40.0, 40.0, xtol=Q_TOL, maxiter=500))


# ---------------------------------------------------------------------------
# ψ by type


@dataclass(frozen=True)
class TypeProfile:
    """Per y-type data for a noisy lossy code: P(type), β and the φ/mass step function."""

    counts: tuple[int, ...]
    prob: float
    beta: float
    phis: np.ndarray  # sorted distinct φ values
    cum_mass: np.ndarray  # reference mass with φ <= phis[i]

    def feasible_mass(self, t: float) -> float:
        i = np.searchsorted(self.phis, t, side="right")
        return float(self.cum_mass[i - 1]) if i else 0.0

    def psi(self, t: float) -> float:
        m = self.feasible_mass(t)
        return math.inf if m <= 0 else max(-math.log2(m), 0.0)

    def prob_psi_at_least(self, log2_gamma: float) -> float:
        """P_T(ψ(y, D, T) >= log2 γ) for T ~ Unif(0, 1).

        ψ(y, ·) is a right-continuous nonincreasing step function, so the event
        is T < t*, with t* the first breakpoint where the mass exceeds 1/γ.
        """
        over = np.flatnonzero(-np.log2(np.maximum(self.cum_mass, 1e-300)) < log2_gamma)
        if over.size == 0:
            return 1.0
        return float(min(max(self.phis[over[0]], 0.0), 1.0))


def type_profiles(cfg: NoisyVLConfig) -> list[TypeProfile]:
    cache = cfg.__dict__.get("_profiles")
    if cache is not None:
        return cache
    p_y = cfg.p_xy.col_marginal().probs
    out = []
    for counts in compositions(cfg.n, p_y.size):
        lp = log_type_prob(counts, p_y)
        if lp == -math.inf:
            continue
        phis, masses = conditional_types(cfg.model, counts, cfg.reference, cfg.big_d)
        keep = masses > 0
        phis, masses = phis[keep], masses[keep]
        order = np.argsort(phis, kind="stable")
        phis, masses = phis[order], masses[order]
        uniq, start = np.unique(phis, return_index=True)
        cum = np.cumsum(masses)[np.append(start[1:] - 1, phis.size - 1)]
        out.append(TypeProfile(counts, math.exp(lp), beta_of_counts(cfg, counts), uniq,
                               np.minimum(cum, 1.0)))
    cfg.__dict__["_profiles"] = out
    return out


@dataclass(frozen=True)
class SchemeBounds:
    pe_bound: float
    len_bound: float
    expected_beta: float
    expected_psi: float  # E[(1-β)ψ]
    codec_constant: float = 0.0
    diagnostic: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"pe_bound": self.pe_bound, "len_bound": self.len_bound,
                "expected_beta": self.expected_beta, "expected_psi": self.expected_psi,
                "codec_constant": self.codec_constant, "diagnostic": self.diagnostic, **self.extra}


def noisy_vl_bounds(cfg: NoisyVLConfig) -> SchemeBounds:
    """P(d > D) <= E[β] + ε', E|W| <= ℓ(E[(1-β)ψ(Y, D, ε')]).

    ``codec_constant`` is the extra length the Elias delta code may need above ℓ.
    """
    e_beta = 0.0
    e_psi = 0.0
    diag = ""
    for prof in type_profiles(cfg):
        e_beta += prof.prob * prof.beta
        if prof.beta < 1.0:
            ps = prof.psi(cfg.eps_prime)
            if math.isinf(ps):
                diag = f"psi is infinite for y-type {prof.counts} where beta < 1"
                e_psi = math.inf
            else:
                e_psi += prof.prob * (1.0 - prof.beta) * ps
    e_beta = min(e_beta, 1.0)
    if math.isinf(e_psi):
        return SchemeBounds(e_beta + cfg.eps_prime, math.inf, e_beta, math.inf, math.inf, diag)
    return SchemeBounds(e_beta + cfg.eps_prime, max_entropy_length_bound(e_psi), e_beta, e_psi,
                        elias_delta_slack(e_psi))


def thm1_fl_bound(cfg: NoisyVLConfig, gamma: float, big_l: int) -> float:
    """P(ψ(Y, D, T) >= log γ) + e^{-L/γ}, T ~ Unif(0, 1) independent of Y."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    lg = math.log2(gamma)
    first = math.fsum(p.prob * p.prob_psi_at_least(lg) for p in type_profiles(cfg))
    return min(first, 1.0) + math.exp(-big_l / gamma)


# ---------------------------------------------------------------------------
# Poisson matching


def eq9_pml_pe_bound(ident: InfoDensityTable, big_l: int) -> float:
    """E[1 - (1 - min(2^{-ι}, 1))^{(L+1)/2}] over the (X, U) joint."""
    if big_l < 1:
        raise ValueError("L must be at least 1")
    p = ident.joint.probs
    mask = p > 0
    iota = np.where(mask, ident.values, 0.0)
    m = np.minimum(np.exp2(-iota), 1.0)
    terms = 1.0 - (1.0 - m) ** ((big_l + 1) / 2.0)
    return float(np.sum(p[mask] * terms[mask]))


def eq9_block_bound(p_xu: JointPmf, n: int, big_l: int) -> float:
    """The Poisson matching error bound for the n-fold memoryless joint, by enumeration of joint types."""
    dens = information_density(p_xu)
    flat_p = p_xu.probs.ravel()
    flat_i = np.where(flat_p > 0, dens.values.ravel(), 0.0)
    cells = np.flatnonzero(flat_p > 0)
    total = 0.0
    for counts in compositions(n, cells.size):
        c = np.asarray(counts)
        lp = log_type_prob(c, flat_p[cells])
        iota = float(np.dot(c, flat_i[cells]))
        m = min(2.0 ** -iota, 1.0)
        total += math.exp(lp) * (1.0 - (1.0 - m) ** ((big_l + 1) / 2.0))
    return total


# ---------------------------------------------------------------------------
# relay bounds


def pml_threshold_term(threshold_bits: float, big_l: int) -> float:
    """2^{-C'} (L+1)/2."""
    return 2.0 ** -threshold_bits * (big_l + 1) / 2.0


def oneshot_scheme_bounds(cfg, gamma: float | None = None) -> SchemeBounds:
    """Bounds for the scheme a config describes.

    NoisyVLConfig -> noisy VL lossy code. RelayConfig: "vl-chansim" -> channel
    simulation + the Poisson matching bound; "vl-lossy" -> E[β] + 2^{-C'}(L+1)/2 + ε' with ψ_U;
    "fl-truncated" -> P(ψ_U >= log γ) + 2^{-C'}(L+1)/2 + e^{-K/γ}, with γ
    minimized over a grid when not given.
    C' is the relay's information-density threshold (nC + log2 n when strengthened).
    """
    if isinstance(cfg, NoisyVLConfig):
        return noisy_vl_bounds(cfg)
    if not isinstance(cfg, RelayConfig):
        raise TypeError("expected a NoisyVLConfig or RelayConfig")
    if cfg.variant == "vl-chansim":
        p_xu, p_yu = compose_markov(cfg.p_xy, cfg.kernel_u_given_y)
        i_yu = mutual_information(p_yu)
        pe = eq9_block_bound(p_xu, cfg.n, cfg.big_l) + cfg.eps_prime
        t = (1.0 - cfg.eps_prime) * cfg.n * i_yu
        return SchemeBounds(pe, max_entropy_length_bound(t), cfg.eps_prime, t,
                            elias_delta_slack(t), extra={"i_yu_bits": cfg.n * i_yu})
    lossy = cfg.lossy
    pml = pml_threshold_term(cfg.threshold_bits, cfg.big_l)
    if cfg.variant == "vl-lossy":
        b = noisy_vl_bounds(lossy)
        return SchemeBounds(b.expected_beta + pml + cfg.eps_prime, b.len_bound, b.expected_beta,
                            b.expected_psi, b.codec_constant, b.diagnostic,
                            extra={"pml_term": pml})
    big_k = cfg.fl_size
    if gamma is None:
        gamma = best_gamma(lossy, big_k)
    first = thm1_fl_bound(lossy, gamma, big_k) - math.exp(-big_k / gamma)
    pe = first + pml + math.exp(-big_k / gamma)
    return SchemeBounds(pe, math.ceil(math.log2(big_k)), math.nan, math.nan,
                        extra={"gamma": gamma, "pml_term": pml})


def best_gamma(cfg: NoisyVLConfig, big_l: int, grid: int = 200) -> float:
    """γ minimizing the fixed-length threshold bound over a log grid around L."""
    gs = big_l * np.logspace(-4, 1, grid)
    vals = [thm1_fl_bound(cfg, float(g), big_l) for g in gs]
    return float(gs[int(np.argmin(vals))])


# ---------------------------------------------------------------------------
# second-order rates


THM3_THRESHOLDS = ("D", "D-log n/n")


def shifted_rate(rd: RDSolution, n: int) -> float:
    """R(D - log2(n)/n) for the strengthened fixed-length threshold; inf when infeasible."""
    try:
        return solve_noisy_rd(rd.p_xy, rd.d, rd.distortion_level - math.log2(n) / n).rate_bits
    except InfeasibleDistortion:
        return math.inf


def second_order_rates(ib: IBSolution, disp: DispersionSet, rd: RDSolution | None, n: int,
                       eps: float, thm3_threshold: str = "D") -> dict[str, float]:
    """Leading terms; the O(·) residuals of each expansion are not included.

    eq3 = IB + sqrt(VIB/n) Q^{-1}(ε)
    eq5 = (1-ε)(IB + sqrt(ln n / n · CVIB))
    thm3_len = nR + sqrt(n Ṽ) Q^{-1}(ε)
    thm4_len = (1-ε)(nR + sqrt(n ln n · C̃V))
    R is the noisy RD rate when ``rd`` is given, else IB (equal at D = -C).
    With ``thm3_threshold="D-log n/n"`` the thm3 leading term uses R(D - log2(n)/n)
    instead of R(D); the dispersion term is left at D.
    """
    if n < 2:
        raise ValueError("second-order rates need n >= 2")
    if thm3_threshold not in THM3_THRESHOLDS:
        raise ValueError(f"thm3_threshold must be one of {THM3_THRESHOLDS}")
    qi = q_inv(eps)
    r = rd.rate_bits if rd is not None else ib.ib_bits
    r3 = r
    if thm3_threshold != "D":
        if rd is None:
            raise ValueError("the shifted threshold needs a rate-distortion solution")
        r3 = shifted_rate(rd, n)
    ln = math.log(n)
    return {
        "eq3_rate": ib.ib_bits + math.sqrt(disp.vib / n) * qi,
        "eq5_rate": (1.0 - eps) * (ib.ib_bits + math.sqrt(ln / n * disp.cvib)),
        "thm3_len": n * r3 + math.sqrt(n * disp.v_tilde) * qi,
        "thm4_len": (1.0 - eps) * (n * r + math.sqrt(n * ln * disp.cv_tilde)),
    }


CURVE_FIELDS = ("n", "eps", "eq3", "eq5", "thm3_len", "thm4_len", "ib", "vib", "cvib")


@dataclass
class SecondOrderCurve:
    ib_bits: float
    vib: float
    cvib: float
    lambda_star: float
    rows: list[dict] = field(default_factory=list)
    residuals: str = "eq3 +O(log n/n), eq5 +O(1/sqrt n), thm3 +O(log n), thm4 +O(sqrt n)"
    thm3_threshold: str = "D"

    @classmethod
    def evaluate(cls, ib: IBSolution, disp: DispersionSet, rd: RDSolution | None,
                 n_grid, eps_grid, thm3_threshold: str = "D") -> SecondOrderCurve:
        curve = cls(ib.ib_bits, disp.vib, disp.cvib, ib.lambda_star,
                    thm3_threshold=thm3_threshold)
        for n in n_grid:
            for eps in eps_grid:
                r = second_order_rates(ib, disp, rd, int(n), float(eps), thm3_threshold)
                curve.rows.append({"n": int(n), "eps": float(eps), "eq3": r["eq3_rate"],
                                   "eq5": r["eq5_rate"], "thm3_len": r["thm3_len"],
                                   "thm4_len": r["thm4_len"], "ib": ib.ib_bits,
                                   "vib": disp.vib, "cvib": disp.cvib})
        return curve

    def write_csv(self, path) -> None:
        path = Path(path)
        try:
            with path.open("w", newline="") as f:
                w = csv.writer(f)
                w.writerow(CURVE_FIELDS)
                for row in self.rows:
                    w.writerow([row["n"], repr(row["eps"])] +
                               [repr(float(row[k])) for k in CURVE_FIELDS[2:]])
        except OSError as e:
            raise OSError(f"cannot write curve to {path}: {e}") from e

    @staticmethod
    def read_csv(path) -> list[dict]:
        with Path(path).open(newline="") as f:
            return [{k: (int(v) if k == "n" else float(v)) for k, v in row.items()}
                    for row in csv.DictReader(f)]
