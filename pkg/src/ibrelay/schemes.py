"""Executable coding schemes.

* Variable-length noisy lossy source coding: the encoder picks the first
  proposal block whose conditional excess-distortion probability is at most
  eps', optionally replaces the index by 1 with probability β(y), and sends the
  index with a prefix code.
* Oblivious relaying: an iid random codebook, a memoryless channel, a relay that
  either runs the lossy code above with distortion -ι_{X;U} ("vl-lossy") or
  simulates P_{U|Y} exactly ("vl-chansim"), and a Poisson-matching decoder.
  "fl-truncated" sends the lossy index in a fixed-size field with an erasure.

Every trial is a pure function of (config, trial seed). Randomness is split
into named substreams: "source"/"message"/"channel" for nature, "codebook" and
"pml-arrivals" for the encoder/decoder pair, "common" for the relay/decoder
pair and "relay-coin" for the relay's local coin. The relay never touches the
codebook substream.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import codec
from .excess import ExcessModel, conditional_types, representative
from .ib import DistortionMeasure, neg_info_density_distortion
from .poisson import (
    ConditionalProduct,
    Conditioned,
    PoissonStream,
    ProductPmf,
    ProposalStream,
    derive_substream,
    generator,
    pfr_select,
    pml_argmin,
)
from .prob import (
    Alphabet,
    JointPmf,
    Kernel,
    Pmf,
    compose_markov,
    empirical_pmf,
    information_density,
)

VARIANTS = ("vl-lossy", "vl-chansim", "fl-truncated")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# block parameters and typicality


@dataclass(frozen=True)
class BlockParams:
    eps1: float
    eps2: float
    eps3: float

    @property
    def eps(self) -> float:
        return self.eps1 + self.eps2 + self.eps3


def block_params(n: int, y_size: int, eps: float) -> BlockParams:
    """ε₁ = 1/(2√n), ε₂ = (2|Y|+1)/√n, ε₃ = ε - ε₁ - ε₂."""
    if n < 1:
        raise ValueError("n must be positive")
    e1 = 1.0 / (2.0 * math.sqrt(n))
    e2 = (2 * y_size + 1) / math.sqrt(n)
    e3 = eps - e1 - e2
    if e3 < 0:
        raise ConfigError(f"n={n} is below n0 for eps={eps}: eps1 + eps2 = {e1 + e2:.4g} > eps")
    return BlockParams(e1, e2, e3)


def smallest_feasible_n(y_size: int, eps: float) -> int:
    # eps1 + eps2 = (2|Y| + 1.5)/sqrt(n)
    n = max(1, math.ceil(((2 * y_size + 1.5) / eps) ** 2) - 2)
    while True:
        try:
            block_params(n, y_size, eps)
            return n
        except ConfigError:
            n += 1


def is_typical(y_seq, p_y: Pmf) -> bool:
    """||empirical(y^n) - P_Y||² <= |Y| log2(n) / n."""
    y_seq = np.asarray(y_seq)
    n = y_seq.size
    if n < 2:
        raise ValueError("typicality needs n >= 2")
    emp = empirical_pmf(y_seq, p_y.alphabet).probs
    return bool(np.sum((emp - p_y.probs) ** 2) <= p_y.size * math.log2(n) / n)


def is_typical_counts(counts, p_y: Pmf) -> bool:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    return bool(np.sum((counts / n - p_y.probs) ** 2) <= p_y.size * math.log2(n) / n)


# ---------------------------------------------------------------------------
# β rules


@dataclass(frozen=True)
class BetaRule:
    """How the encoder chooses β(y^n).

    kind:
      "constant"  β ≡ value
      "typical"   β = 1 off the typical set, ε₃ on it (ε₃ from block_params with ``eps``)
      "feasible"  β = 1 where no reconstruction meets the eps' target, ``value`` elsewhere
      "custom"    β = func(y^n); must depend on y^n only through its type for exact bounds
    """

    kind: str = "constant"
    value: float = 0.0
    eps: float | None = None
    func: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("constant", "typical", "feasible", "custom"):
            raise ConfigError(f"unknown beta rule {self.kind!r}")
        if not 0.0 <= self.value <= 1.0:
            raise ConfigError("beta values must lie in [0, 1]")
        if self.kind == "typical" and self.eps is None:
            raise ConfigError("typical beta rule needs eps")
        if self.kind == "custom" and self.func is None:
            raise ConfigError("custom beta rule needs func")

    @classmethod
    def parse(cls, spec) -> BetaRule:
        if isinstance(spec, BetaRule):
            return spec
        if spec is None:
            return cls()
        if isinstance(spec, (int, float)):
            return cls("constant", float(spec))
        if callable(spec):
            return cls("custom", func=spec)
        if isinstance(spec, dict):
            return cls(spec.get("kind", "constant"), float(spec.get("value", 0.0)), spec.get("eps"))
        raise ConfigError(f"cannot interpret beta rule {spec!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "eps": self.eps}


# ---------------------------------------------------------------------------
# noisy lossy source coding


@dataclass(frozen=True, eq=False)
class NoisyVLConfig:
    p_xy: JointPmf
    d: DistortionMeasure
    big_d: float
    eps_prime: float
    reference: Pmf
    n: int = 1
    beta: BetaRule = field(default_factory=BetaRule)
    master_seed: int = 0
    code: object = codec.UNIVERSAL
    common_seeds: tuple[int, int] | None = None
    j_weight: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.eps_prime < 1.0:
            raise ConfigError("eps_prime must lie in (0, 1)")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.reference.size != self.d.z_alphabet.size:
            raise ConfigError("reference alphabet must be the reconstruction alphabet")
        object.__setattr__(self, "beta", BetaRule.parse(self.beta))

    @cached_property
    def model(self) -> ExcessModel:
        return ExcessModel(self.p_xy, self.d)

    @property
    def derandomized(self) -> bool:
        return self.common_seeds is not None

    def with_(self, **kw) -> NoisyVLConfig:
        return replace(self, **kw)


def _y_counts(y_seq, ny: int) -> tuple[int, ...]:
    return tuple(np.bincount(np.asarray(y_seq, dtype=np.int64), minlength=ny).tolist())


def feasible_exists(cfg: NoisyVLConfig, y_counts) -> bool:
    cache = cfg.__dict__.setdefault("_feasible_cache", {})
    key = tuple(int(c) for c in y_counts)
    hit = cache.get(key)
    if hit is None:
        phis, masses = conditional_types(cfg.model, key, cfg.reference, cfg.big_d)
        hit = bool(np.any((phis <= cfg.eps_prime) & (masses > 0)))
        cache[key] = hit
    return hit


def beta_of(cfg: NoisyVLConfig, y_seq) -> float:
    rule = cfg.beta
    if rule.kind == "constant":
        return rule.value
    y_seq = np.asarray(y_seq)
    if rule.kind == "custom":
        return float(rule.func(y_seq))
    counts = _y_counts(y_seq, cfg.p_xy.shape[1])
    return beta_of_counts(cfg, counts)


def beta_of_counts(cfg: NoisyVLConfig, counts) -> float:
    rule = cfg.beta
    if rule.kind == "constant":
        return rule.value
    if rule.kind == "typical":
        bp = block_params(cfg.n, cfg.p_xy.shape[1], rule.eps)
        return bp.eps3 if is_typical_counts(counts, cfg.p_xy.col_marginal()) else 1.0
    if rule.kind == "feasible":
        return rule.value if feasible_exists(cfg, counts) else 1.0
    return float(rule.func(representative(counts)))


def _feasibility(cfg: NoisyVLConfig, y_seq):
    model, big_d, eps = cfg.model, cfg.big_d, cfg.eps_prime

    def feasible(draws):
        return model.phi(y_seq, draws, big_d) <= eps
    return feasible


def _encode_index(cfg, k: int) -> str:
    return cfg.code.encode(k)


def _decode_index(cfg, bits: str, pos: int = 0) -> int:
    k, end = cfg.code.decode(bits, pos)
    if end != len(bits):
        raise codec.DecodeError("trailing bits after codeword")
    return k


def _common_seed(cfg: NoisyVLConfig, common_seed: int | None, j: int | None) -> int:
    if cfg.derandomized:
        return cfg.common_seeds[j]
    return cfg.master_seed if common_seed is None else common_seed


def select_index(cfg: NoisyVLConfig, y_seq, common_seed: int) -> int:
    """K: index of the first proposal block meeting the excess-distortion target."""
    arrivals = PoissonStream(derive_substream(common_seed, "arrivals"))
    proposals = ProposalStream(derive_substream(common_seed, "proposals"), cfg.reference, cfg.n)
    res = pfr_select(Conditioned(_feasibility(cfg, y_seq)), ProductPmf(cfg.reference, cfg.n),
                     arrivals, proposals)
    return res.index


def noisy_vl_encode(y_seq, cfg: NoisyVLConfig, common_seed: int | None = None,
                    local_seed: int | None = None) -> tuple[str, int]:
    """Relay/encoder side. Returns (codeword, k̃)."""
    y_seq = np.atleast_1d(np.asarray(y_seq, dtype=np.int64))
    if y_seq.size != cfg.n:
        raise ConfigError(f"expected a length-{cfg.n} observation")
    if local_seed is None:
        local_seed = derive_substream(cfg.master_seed, "local")
    coin = generator(derive_substream(local_seed, "relay-coin"))
    prefix = ""
    j = None
    if cfg.derandomized:
        # J ~ Bern(1 - λ₀) picks which fixed common randomness to use; sent as one bit
        j = int(coin.random() >= cfg.j_weight)
        prefix = str(j)
    b = beta_of(cfg, y_seq)
    if coin.random() < b:
        k = 1
    else:
        if cfg.beta.kind != "feasible" and not feasible_exists_fast(cfg, y_seq):
            raise ConfigError("no reconstruction meets the eps' target for this observation "
                              "and beta(y) < 1")
        k = select_index(cfg, y_seq, _common_seed(cfg, common_seed, j))
    return prefix + _encode_index(cfg, k), k


def feasible_exists_fast(cfg: NoisyVLConfig, y_seq) -> bool:
    """Feasibility check that skips enumeration when it would be expensive."""
    ny = cfg.p_xy.shape[1]
    if cfg.n <= 64 and ny <= 3 and cfg.d.z_alphabet.size <= 3:
        return feasible_exists(cfg, _y_counts(y_seq, ny))
    return True


def noisy_vl_decode(w: str, cfg: NoisyVLConfig, common_seed: int | None = None) -> np.ndarray:
    """Decoder side: recover k̃ and replay the proposal stream."""
    j = None
    pos = 0
    if cfg.derandomized:
        if not w or w[0] not in "01":
            raise codec.DecodeError("missing common-randomness selector bit")
        j, pos = int(w[0]), 1
    k = _decode_index(cfg, w, pos)
    seed = _common_seed(cfg, common_seed, j)
    proposals = ProposalStream(derive_substream(seed, "proposals"), cfg.reference, cfg.n)
    return proposals.draw(k)


@dataclass(frozen=True)
class TrialResult:
    seed: int
    variant: str
    n: int
    big_l: int
    description_bits: int
    index: int
    error: bool
    achieved_info_density: float
    distortion: float
    truncated: bool = False

    FIELDS = ("seed", "variant", "n", "L", "description_bits", "index", "error",
              "achieved_info_density", "distortion", "truncated")

    def row(self) -> list:
        return [self.seed, self.variant, self.n, self.big_l, self.description_bits, self.index,
                int(self.error), repr(self.achieved_info_density), repr(self.distortion),
                int(self.truncated)]


def draw_source(p_xy: JointPmf, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    g = generator(derive_substream(seed, "source"))
    flat = p_xy.probs.ravel()
    cells = np.minimum(np.searchsorted(np.cumsum(flat), g.random(n), side="right"),
                       int(np.flatnonzero(flat > 0)[-1]))
    return cells // p_xy.shape[1], cells % p_xy.shape[1]


def block_distortion(d: DistortionMeasure, x, z) -> float:
    x, z = np.asarray(x), np.asarray(z)
    if np.any(d.infinite[x, z]):
        return math.inf
    return float(d.values[x, z].mean())


def run_noisy_vl_trial(cfg: NoisyVLConfig, trial_seed: int) -> TrialResult:
    x, y = draw_source(cfg.p_xy, cfg.n, trial_seed)
    common = derive_substream(trial_seed, "common")
    w, k = noisy_vl_encode(y, cfg, common, trial_seed)
    z = noisy_vl_decode(w, cfg, common)
    dist = block_distortion(cfg.d, x, np.atleast_1d(z))
    return TrialResult(trial_seed, "noisy-vl", cfg.n, 0, len(w), k, dist > cfg.big_d,
                       math.nan, dist)


def derandomize_common_randomness(cfg: NoisyVLConfig, candidates, trials_per_seed: int):
    """Fix the common randomness to two candidate values and a mixing weight.

    Each candidate seed is evaluated with its common randomness held fixed and
    fresh source/local randomness; the per-seed (mean length, error rate) points
    go through :func:`codec.derandomize`. Returns (new config, points, choice).
    """
    cands = [int(s) for s in candidates]
    points = []
    for s in cands:
        lens, errs = [], []
        for t in range(trials_per_seed):
            ts = derive_substream(s, f"derand-trial-{t}")
            x, y = draw_source(cfg.p_xy, cfg.n, ts)
            w, _ = noisy_vl_encode(y, cfg, s, ts)
            z = noisy_vl_decode(w, cfg, s)
            lens.append(len(w))
            errs.append(block_distortion(cfg.d, x, np.atleast_1d(z)) > cfg.big_d)
        points.append((float(np.mean(lens)), float(np.mean(errs))))
    choice = codec.derandomize(points)
    new = cfg.with_(common_seeds=(cands[choice.i], cands[choice.j]), j_weight=choice.weight)
    return new, points, choice


def pilot_huffman(cfg: NoisyVLConfig, trials: int, escape_weight: float = 1.0) -> NoisyVLConfig:
    """Replace the index code by a Huffman code fitted to pilot runs of K̃.

    Pilot trials use their own seeds, so evaluation trials stay independent of
    the fitted code. Indices never seen in the pilot go through an escape word
    plus Elias delta.
    """
    counts: dict[int, int] = {}
    for t in range(trials):
        ts = derive_substream(cfg.master_seed, f"pilot-{t}")
        _, y = draw_source(cfg.p_xy, cfg.n, ts)
        _, k = noisy_vl_encode(y, cfg, derive_substream(ts, "common"), ts)
        counts[k] = counts.get(k, 0) + 1
    return cfg.with_(code=codec.EscapedHuffman(counts, escape_weight))


# ---------------------------------------------------------------------------
# oblivious relay


@dataclass(frozen=True, eq=False)
class RelayConfig:
    p_x: Pmf
    channel: Kernel
    n: int
    big_l: int
    c_bits: float
    kernel_u_given_y: Kernel
    variant: str = "vl-lossy"
    eps_prime: float = 0.05
    beta: BetaRule = field(default_factory=BetaRule)
    fl_size: int | None = None
    master_seed: int = 0
    code: object = codec.UNIVERSAL
    strengthen: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.big_l < 1:
            raise ConfigError("message count L must be at least 1")
        if self.variant == "fl-truncated" and (self.fl_size is None or self.fl_size < 2):
            raise ConfigError("fl-truncated needs a description size K >= 2")
        if self.channel.input_alphabet.size != self.p_x.size:
            raise ConfigError("channel input alphabet must match p_x")
        if self.kernel_u_given_y.input_alphabet.size != self.channel.output_alphabet.size:
            raise ConfigError("kernel input alphabet must be the channel output alphabet")
        if not 0.0 <= self.eps_prime < 1.0:
            raise ConfigError("eps_prime must lie in [0, 1)")
        object.__setattr__(self, "beta", BetaRule.parse(self.beta))

    @cached_property
    def p_xy(self) -> JointPmf:
        return JointPmf.from_kernel(self.p_x, self.channel)

    @cached_property
    def p_u(self) -> Pmf:
        return self.kernel_u_given_y.output_pmf(self.p_xy.col_marginal())

    @cached_property
    def x_given_u(self) -> Kernel:
        p_xu, _ = compose_markov(self.p_xy, self.kernel_u_given_y)
        return p_xu.row_given_col()

    @property
    def threshold_bits(self) -> float:
        """Information-density target: nC + log2 n (strengthened) or nC."""
        return self.n * self.c_bits + (math.log2(self.n) if self.strengthen else 0.0)

    @cached_property
    def lossy(self) -> NoisyVLConfig:
        """The noisy lossy code the relay runs: d = -ι_{X;U}, D = -threshold/n."""
        d = neg_info_density_distortion(self.p_xy, self.kernel_u_given_y)
        return NoisyVLConfig(self.p_xy, d, -self.threshold_bits / self.n,
                             self.eps_prime if self.eps_prime > 0 else 1e-12,
                             self.p_u, self.n, self.beta, self.master_seed, self.code)

    def with_(self, **kw) -> RelayConfig:
        return replace(self, **kw)


def message_count(n: int, c_bits: float) -> int:
    """L = ⌈2^{nC}⌉."""
    return math.ceil(2.0 ** (n * c_bits) - 1e-9)


def _channel_output(cfg: RelayConfig, x: np.ndarray, seed: int) -> np.ndarray:
    g = generator(derive_substream(seed, "channel"))
    cdf = np.cumsum(cfg.channel.rows, axis=1)
    u = g.random(x.size)
    y = (u[:, None] >= cdf[x]).sum(axis=1)
    last = cfg.channel.rows.shape[1] - 1
    return np.minimum(y, last)


def _codebook(cfg: RelayConfig, seed: int) -> np.ndarray:
    g = generator(derive_substream(seed, "codebook"))
    cdf = np.cumsum(cfg.p_x.probs)
    last = int(np.flatnonzero(cfg.p_x.probs > 0)[-1])
    u = g.random(cfg.big_l * cfg.n).reshape(cfg.big_l, cfg.n)
    return np.minimum(np.searchsorted(cdf, u, side="right"), last)


def _relay_index(cfg: RelayConfig, y: np.ndarray, seed: int) -> int:
    """Relay: K̃ from the observation only (no codebook access)."""
    common = derive_substream(seed, "common")
    if cfg.variant == "vl-chansim":
        coin = generator(derive_substream(seed, "relay-coin"))
        if coin.random() < cfg.eps_prime:
            return 1
        arrivals = PoissonStream(derive_substream(common, "arrivals"))
        proposals = ProposalStream(derive_substream(common, "proposals"), cfg.p_u, cfg.n)
        target = ConditionalProduct(cfg.kernel_u_given_y, y)
        return pfr_select(target, ProductPmf(cfg.p_u, cfg.n), arrivals, proposals).index
    _, k = noisy_vl_encode(y, cfg.lossy, common, seed)
    return k


def _decode_message(cfg: RelayConfig, k: int, codebook: np.ndarray, seed: int):
    common = derive_substream(seed, "common")
    u_hat = ProposalStream(derive_substream(common, "proposals"), cfg.p_u, cfg.n).draw(k)
    target = ConditionalProduct(cfg.x_given_u, u_hat)
    arrivals = PoissonStream(derive_substream(seed, "pml-arrivals"))
    m_hat = pml_argmin(cfg.big_l, codebook, target, ProductPmf(cfg.p_x, cfg.n), arrivals)
    return u_hat, m_hat


def _info_density(cfg: RelayConfig, x: np.ndarray, u: np.ndarray) -> float:
    p_xu, _ = compose_markov(cfg.p_xy, cfg.kernel_u_given_y)
    dens = information_density(p_xu)
    if not np.all(dens.defined_mask[x, u]):
        return -math.inf
    return float(dens.values[x, u].sum())


def _relay_trial(cfg: RelayConfig, trial_seed: int):
    codebook = _codebook(cfg, trial_seed)
    m = int(generator(derive_substream(trial_seed, "message")).integers(cfg.big_l)) + 1
    x = codebook[m - 1]
    y = _channel_output(cfg, x, trial_seed)
    k = _relay_index(cfg, y, trial_seed)
    return codebook, m, x, k


def run_relay_vl_trial(cfg: RelayConfig, trial_seed: int) -> TrialResult:
    if cfg.variant not in ("vl-lossy", "vl-chansim"):
        raise ConfigError("run_relay_vl_trial needs a variable-length variant")
    codebook, m, x, k = _relay_trial(cfg, trial_seed)
    w = _encode_index(cfg, k)
    u_hat, m_hat = _decode_message(cfg, _decode_index(cfg, w), codebook, trial_seed)
    iota = _info_density(cfg, x, u_hat)
    return TrialResult(trial_seed, cfg.variant, cfg.n, cfg.big_l, len(w), k,
                       m_hat.index != m, iota, -iota / cfg.n)


def run_relay_fl_trial(cfg: RelayConfig, trial_seed: int) -> TrialResult:
    """Fixed-length field of ⌈log2 K⌉ bits; value K-1 is the erasure."""
    if cfg.variant != "fl-truncated":
        raise ConfigError("run_relay_fl_trial needs the fl-truncated variant")
    big_k = cfg.fl_size
    lossy = cfg.with_(variant="vl-lossy")
    codebook, m, x, k = _relay_trial(lossy, trial_seed)
    bits = max(1, math.ceil(math.log2(big_k)))
    truncated = k > big_k - 1
    if truncated:
        return TrialResult(trial_seed, cfg.variant, cfg.n, cfg.big_l, bits, k, True,
                           math.nan, math.nan, True)
    field_value = k - 1
    u_hat, m_hat = _decode_message(lossy, field_value + 1, codebook, trial_seed)
    iota = _info_density(cfg, x, u_hat)
    return TrialResult(trial_seed, cfg.variant, cfg.n, cfg.big_l, bits, k,
                       m_hat.index != m, iota, -iota / cfg.n, False)


def run_relay_trial(cfg: RelayConfig, trial_seed: int) -> TrialResult:
    if cfg.variant == "fl-truncated":
        return run_relay_fl_trial(cfg, trial_seed)
    return run_relay_vl_trial(cfg, trial_seed)


def merge_equivalent_outputs(p_xy: JointPmf, k: Kernel, tol: float = 1e-9) -> Kernel:
    """Merge U symbols with identical P_{X|U} and drop unused ones.

    The merged kernel has the same ι_{X;U} values and information quantities,
    with a smaller reconstruction alphabet.
    """
    p_xu, _ = compose_markov(p_xy, k)
    p_u = p_xu.probs.sum(axis=0)
    post = p_xu.row_given_col().rows
    groups: list[list[int]] = []
    for u in np.flatnonzero(p_u > 0):
        for g in groups:
            if np.max(np.abs(post[g[0]] - post[u])) <= tol:
                g.append(int(u))
                break
        else:
            groups.append([int(u)])
    rows = np.stack([k.rows[:, g].sum(axis=1) for g in groups], axis=1)
    rows = rows / rows.sum(axis=1, keepdims=True)
    return Kernel(k.input_alphabet, Alphabet(len(groups)), rows)
