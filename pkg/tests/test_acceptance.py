"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v -s`` to see the lines as they happen;
they are also repeated in the "acceptance criteria" terminal summary section.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest
from oracles import binomial_sigma, dispersions_bruteforce, gerber_ib, grid_kl_min
from scipy.stats import chisquare

from ibrelay import codec
from ibrelay.bounds import (
    SecondOrderCurve,
    eq9_pml_pe_bound,
    noisy_vl_bounds,
    oneshot_scheme_bounds,
)
from ibrelay.excess import phi_excess
from ibrelay.experiments import (
    ExperimentSpec,
    run_experiment,
    write_results,
    write_trials,
)
from ibrelay.ib import (
    DistortionMeasure,
    dispersion_quantities,
    induced_rd,
    neg_info_density_distortion,
    psi,
    solve_ib,
    solve_noisy_rd,
)
from ibrelay.poisson import (
    PoissonStream,
    ProposalStream,
    derive_substream,
    pfr_select,
    pml_argmin,
)
from ibrelay.prob import (
    JointPmf,
    Pmf,
    bern,
    bsc,
    compose_markov,
    dsbs,
    entropy,
    information_density,
    kl,
    mutual_information,
)
from ibrelay.schemes import (
    BetaRule,
    NoisyVLConfig,
    RelayConfig,
    block_params,
    merge_equivalent_outputs,
    message_count,
    run_noisy_vl_trial,
    run_relay_trial,
    smallest_feasible_n,
)

DSBS = dsbs(0.1)
HAM = DistortionMeasure.hamming(2)


def mc_limit(bound, trials):
    return bound + 3 * binomial_sigma(bound, trials)


# --- 1 -----------------------------------------------------------------------


def test_criterion_01_ib_solver_matches_parametric_dsbs_curve(criterion):
    t0 = time.perf_counter()
    i_xy = 1 - (-(0.1 * math.log2(0.1) + 0.9 * math.log2(0.9)))
    worst = 0.0
    for c in np.linspace(0, i_xy, 12)[1:-1]:
        sol = solve_ib(DSBS, float(c))
        p_xu, p_yu = compose_markov(DSBS, sol.kernel_u_given_y)
        worst = max(worst, abs(sol.ib_bits - gerber_ib(0.1, c)),
                    abs(mutual_information(p_yu) - gerber_ib(0.1, c)),
                    abs(mutual_information(p_xu) - c))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-4 and dt < 30
    assert criterion(1, "IB solver vs parametric DSBS(0.1) curve, 10 constraints", ok,
                     f"max rate error {worst:.2e}, {dt:.1f}s")


# --- 2 -----------------------------------------------------------------------


def test_criterion_02_psi_matches_grid_search_and_feasible_mass(criterion):
    t0 = time.perf_counter()
    instances = [
        (DSBS, HAM, [bern(0.5), bern(0.2)]),
        (JointPmf.from_probs([[0.30, 0.05, 0.02], [0.03, 0.25, 0.05], [0.02, 0.08, 0.20]]),
         DistortionMeasure.hamming(3),
         [Pmf.from_probs([1 / 3] * 3), Pmf.from_probs([0.1, 0.3, 0.6])]),
    ]
    worst, exact, checked = 0.0, True, 0
    for p_xy, d, refs in instances:
        k = p_xy.shape[1]
        for ref, y, big_d in itertools.product(refs, range(k), (0.0, 0.5)):
            phis = np.array([phi_excess([y], [z], big_d, p_xy, d) for z in range(k)])
            for t in sorted(set(phis.tolist())) + [-1.0]:
                mask = phis <= t
                got = psi(mask, ref)
                mass = float(ref.probs[mask].sum())
                exact &= got == (math.inf if mass == 0 else -math.log2(mass))
                oracle = grid_kl_min(mask, ref.probs, 200)
                worst = max(worst, 0.0 if got == oracle == math.inf else abs(got - oracle))
                checked += 1
        for mask in itertools.product([False, True], repeat=k):
            for ref in refs:
                m = np.array(mask)
                got = psi(m, ref)
                oracle = grid_kl_min(m, ref.probs, 200)
                worst = max(worst, 0.0 if got == oracle == math.inf else abs(got - oracle))
                checked += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-4 and exact and dt < 10
    assert criterion(2, "psi vs grid-search KL oracle and -log2 feasible mass", ok,
                     f"{checked} cases, max error {worst:.1e}, exact={exact}, {dt:.1f}s")


# --- 3 -----------------------------------------------------------------------

PFR_PAIRS = [
    (bern(0.9), bern(0.5)),
    (bern(0.3), bern(0.6)),
    (Pmf.from_probs([0.6, 0.3, 0.1]), Pmf.from_probs([1 / 3] * 3)),
    (Pmf.from_probs([0.05, 0.15, 0.8]), Pmf.from_probs([0.5, 0.3, 0.2])),
    (Pmf.from_probs([0.4, 0.1, 0.1, 0.4]), Pmf.from_probs([0.1, 0.4, 0.4, 0.1])),
]


def test_criterion_03_pfr_exact_law_and_index_length(criterion):
    t0 = time.perf_counter()
    n = 100_000
    details, ok = [], True
    for j, (target, proposal) in enumerate(PFR_PAIRS):
        vals = np.empty(n, int)
        logk = np.empty(n)
        for s in range(n):
            seed = derive_substream(3, f"pair{j}|{s}")
            a = PoissonStream(derive_substream(seed, "arrivals"))
            z = ProposalStream(derive_substream(seed, "proposals"), proposal)
            r = pfr_select(target, proposal, a, z)
            vals[s], logk[s] = r.value, math.log2(r.index)
        pv = chisquare(np.bincount(vals, minlength=target.size), n * target.probs).pvalue
        bound = kl(target, proposal) + 1
        slack = bound + 3 * logk.std() / math.sqrt(n) - logk.mean()
        ok &= pv > 0.01 and slack >= 0
        details.append(f"p={pv:.3f} E[log2K]={logk.mean():.3f}<={bound:.3f}")
    dt = time.perf_counter() - t0
    ok &= dt < 120
    assert criterion(3, "PFR exact law (chi-square) and E[log2 K] <= D+1", ok,
                     "; ".join(details) + f"; {dt:.0f}s")


# --- 4 -----------------------------------------------------------------------


def test_criterion_04_pml_error_below_matching_bound(criterion):
    t0 = time.perf_counter()
    p_xu, _ = compose_markov(DSBS, bsc(0.2))
    p_x = Pmf.from_probs(p_xu.probs.sum(1))
    k_ux = p_xu.probs / p_xu.probs.sum(1, keepdims=True)  # P_{U|X}
    post = p_xu.probs / p_xu.probs.sum(0, keepdims=True)  # P_{X|U}, columns
    dens = information_density(p_xu)
    n = 100_000
    ok, details = True, []
    for big_l in (2, 4, 16):
        rng = np.random.default_rng(big_l)
        cbs = (rng.random((n, big_l)) >= p_x.probs[0]).astype(int)
        ms = rng.integers(0, big_l, n)
        xs = cbs[np.arange(n), ms]
        us = (rng.random(n) >= k_ux[xs, 0]).astype(int)
        targets = [Pmf.from_probs(post[:, u]) for u in (0, 1)]
        errors = 0
        for s in range(n):
            res = pml_argmin(big_l, cbs[s], targets[us[s]], p_x,
                             PoissonStream(derive_substream(s, f"pml-L{big_l}")))
            errors += res.index != ms[s] + 1
        bound = eq9_pml_pe_bound(dens, big_l)
        ok &= errors / n <= mc_limit(bound, n)
        details.append(f"L={big_l}: {errors / n:.4f}<={bound:.4f}")
    dt = time.perf_counter() - t0
    ok &= dt < 120
    assert criterion(4, "PML error probability vs matching bound", ok,
                     "; ".join(details) + f"; {dt:.0f}s")


# --- 5 -----------------------------------------------------------------------


def test_criterion_05_noisy_vl_lossy_coding_end_to_end(criterion):
    t0 = time.perf_counter()
    rd = solve_noisy_rd(DSBS, HAM, 0.4)
    trials = 10_000
    ok, details = True, []
    for n in (8, 16, 32):
        cfg = NoisyVLConfig(DSBS, HAM, 0.4, 0.05, rd.output_pmf, n, BetaRule("feasible", 0.0))
        b = noisy_vl_bounds(cfg)
        res = [run_noisy_vl_trial(cfg, derive_substream(5, f"n{n}|{i}")) for i in range(trials)]
        pe = np.mean([r.error for r in res])
        bits = np.array([r.description_bits for r in res], dtype=float)
        pe_ok = pe <= mc_limit(b.expected_beta + cfg.eps_prime, trials)
        len_lim = b.len_bound + b.codec_constant + 3 * bits.std() / math.sqrt(trials)
        ok &= pe_ok and bits.mean() <= len_lim
        details.append(f"n={n}: Pe {pe:.4f}<={b.pe_bound:.4f}, bits {bits.mean():.2f}"
                       f"<={b.len_bound:.2f}+{b.codec_constant:.2f}")
    dt = time.perf_counter() - t0
    ok &= dt < 300
    assert criterion(5, "noisy VL lossy coding: excess distortion and mean length", ok,
                     "; ".join(details) + f"; {dt:.0f}s")


# --- 6 -----------------------------------------------------------------------


def test_criterion_06_relay_variable_length_end_to_end(criterion):
    t0 = time.perf_counter()
    p_x, channel = bern(0.5), bsc(0.01)
    p_xy = JointPmf.from_kernel(p_x, channel)
    kern = merge_equivalent_outputs(p_xy, solve_ib(p_xy, 0.28).kernel_u_given_y)
    c_bits, trials = 0.05, 10_000
    ok, details = True, []
    for n in (8, 16, 32):
        big_l = message_count(n, c_bits)
        assert big_l == math.ceil(2 ** (n * c_bits))
        cfg = RelayConfig(p_x, channel, n, big_l, c_bits, kern, "vl-lossy", 0.05,
                          BetaRule("feasible", 0.0))
        b = oneshot_scheme_bounds(cfg)
        bound = (b.expected_beta + 2 ** -(n * c_bits + math.log2(n)) * (big_l + 1) / 2
                 + cfg.eps_prime)
        res = [run_relay_trial(cfg, derive_substream(6, f"n{n}|{i}")) for i in range(trials)]
        pe = np.mean([r.error for r in res])
        ok &= pe <= mc_limit(bound, trials) and b.pe_bound == pytest.approx(bound, abs=1e-12)
        details.append(f"n={n} L={big_l}: Pe {pe:.4f}<={bound:.4f}")
    dt = time.perf_counter() - t0
    ok &= dt < 600
    assert criterion(6, "relay variable-length error probability", ok,
                     "; ".join(details) + f"; {dt:.0f}s")


# --- 7 -----------------------------------------------------------------------


def test_criterion_07_typical_set_budget_at_smallest_blocklength(criterion):
    t0 = time.perf_counter()
    eps = 0.2
    n = smallest_feasible_n(2, eps)
    bp = block_params(n, 2, eps)
    split_exact = bp.eps1 + bp.eps2 + bp.eps3 == eps
    rd = solve_noisy_rd(DSBS, HAM, 0.49)
    cfg = NoisyVLConfig(DSBS, HAM, 0.49, bp.eps1, rd.output_pmf, n,
                        BetaRule("typical", eps=eps))
    trials = 2000
    pe = np.mean([run_noisy_vl_trial(cfg, derive_substream(7, str(i))).error
                  for i in range(trials)])
    ok = split_exact and pe <= mc_limit(eps, trials)
    dt = time.perf_counter() - t0
    assert criterion(7, "typical-set budget at the smallest feasible n", ok,
                     f"n={n}, eps1+eps2+eps3={bp.eps1 + bp.eps2 + bp.eps3!r}, "
                     f"Pe {pe:.4f}<={eps}, {trials} trials, {dt:.0f}s")


# --- 8 -----------------------------------------------------------------------

DISPERSION_INSTANCES = [
    (DSBS, [0.05, 0.1733, 0.4]),
    (JointPmf.from_probs([[0.30, 0.05, 0.02], [0.03, 0.25, 0.05], [0.02, 0.08, 0.20]]),
     [0.2, 0.5]),
    (JointPmf.from_probs(np.array([[8, 1, 1, 0], [1, 7, 1, 1], [0, 1, 6, 2], [1, 1, 1, 8]]) / 40),
     [0.3, 0.6]),
]


def test_criterion_08_dispersion_identities(criterion):
    worst, order_ok, checked = 0.0, True, 0
    for p_xy, cs in DISPERSION_INSTANCES:
        for c in cs:
            sol = solve_ib(p_xy, c)
            rd = induced_rd(sol)
            disp = dispersion_quantities(sol, rd)
            d = neg_info_density_distortion(p_xy, sol.kernel_u_given_y).values
            ref = dispersions_bruteforce(p_xy.probs, sol.kernel_u_given_y.rows, sol.lambda_star,
                                         d, rd.lambda_star, rd.kernel_z_given_y.rows)
            got = (disp.vib, disp.cvib, disp.v_tilde, disp.cv_tilde)
            worst = max(worst, float(np.max(np.abs(np.subtract(got, ref)))))
            # CVIB = VIB exactly on symmetric instances, so allow rounding in the last digits
            order_ok &= (disp.cvib <= disp.vib * (1 + 1e-12)
                         and disp.cv_tilde <= disp.v_tilde * (1 + 1e-12))
            checked += 1
    noiseless_zero = True
    for k, c in ((2, 0.3), (3, 0.7)):
        p = JointPmf.from_probs(np.diag(np.arange(1, k + 1) / (k * (k + 1) / 2)))
        disp = dispersion_quantities(solve_ib(p, c))
        noiseless_zero &= disp.cv_tilde == 0.0
    ok = worst <= 1e-10 and order_ok and noiseless_zero
    assert criterion(8, "dispersion identities and enumeration oracles", ok,
                     f"{checked} solved instances, max error {worst:.1e}, "
                     f"CV<=V {order_ok}, X=Y gives 0 {noiseless_zero}")


# --- 9 -----------------------------------------------------------------------


@pytest.mark.xfail(strict=True, reason="the n=1e8 limit tolerance is below the "
                   "sqrt(V/n) and sqrt(ln n/n) terms for any instance with nonzero dispersion")
def test_criterion_09_second_order_curve_properties(criterion):
    c = 1 - entropy(bern(0.1 * 0.8 + 0.9 * 0.2))  # I(X;U) with U = BSC(0.2) of Y
    sol = solve_ib(DSBS, c)
    rd = induced_rd(sol)
    disp = dispersion_quantities(sol, rd)
    ns = sorted({int(v) for v in np.logspace(1, 8, 50)} | {10 ** 8})
    epss = [0.01, 0.1, 0.2]
    curve = SecondOrderCurve.evaluate(sol, disp, rd, ns, epss)
    above = all(row["thm4_len"] / row["n"] >= (1 - row["eps"]) * rd.rate_bits
                for row in curve.rows)
    last = [row for row in curve.rows if row["n"] == 10 ** 8]
    gap3 = max(abs(row["eq3"] - sol.ib_bits) for row in last)
    gap5 = max(abs(row["eq5"] - (1 - row["eps"]) * sol.ib_bits) for row in last)
    ok = above and gap3 <= 1e-6 and gap5 <= 1e-6
    assert criterion(9, "second-order curves: approach from above and n=1e8 limits", ok,
                     f"thm4 above {above}, |eq3-IB|={gap3:.2e}, |eq5-(1-eps)IB|={gap5:.2e} "
                     f"at n=1e8 (VIB={disp.vib:.3f}, CVIB={disp.cvib:.3f})")


# --- 10 ----------------------------------------------------------------------


def test_criterion_10_codec_contracts(criterion):
    rng = np.random.default_rng(10)
    huff_ok = kraft_ok = True
    for _ in range(1000):
        p = Pmf.from_probs(rng.dirichlet(np.full(rng.integers(2, 20), rng.uniform(0.2, 3))))
        code = codec.build_huffman(p)
        h = entropy(p)
        huff_ok &= h - 1e-9 <= code.expected_length(p) <= h + 1 + 1e-9
        kraft_ok &= code.kraft_sum() <= 1 + 1e-12
    elias_ok = all(codec.elias_delta_decode(codec.elias_delta(k)) == (k, codec.elias_delta_length(k))
                   for k in range(1, 10_001))
    elias_ok &= codec.is_prefix_free([codec.elias_delta(k) for k in range(1, 2049)])
    derand_ok = True
    for _ in range(1000):
        m = rng.integers(1, 40)
        pts = np.column_stack([rng.uniform(0, 30, m), rng.uniform(0, 1, m)])
        r = codec.derandomize(pts)
        mix = r.weight * pts[r.i] + (1 - r.weight) * pts[r.j]
        derand_ok &= r.ok and 0 <= r.weight <= 1 and bool(np.all(mix <= pts.mean(0) + 1e-9))
    ok = huff_ok and kraft_ok and elias_ok and derand_ok
    assert criterion(10, "codec contracts", ok,
                     f"Huffman [H,H+1] {huff_ok}, Kraft {kraft_ok}, Elias delta {elias_ok}, "
                     f"derandomize {derand_ok}")


# --- 11 ----------------------------------------------------------------------

SPECS = [
    {"name": "det-lossy", "kind": "lossy", "instance": {"dsbs": 0.1},
     "beta": {"kind": "feasible", "value": 0.0},
     "grid": {"n": [4, 8], "D": [0.3, 0.4], "eps_prime": [0.05]}, "trials": 50, "master_seed": 4},
    {"name": "det-relay", "kind": "relay",
     "instance": {"p_x": [0.5, 0.5], "channel": [[0.99, 0.01], [0.01, 0.99]]},
     "ib_c_bits": 0.28, "variant": "vl-lossy", "eps_prime": 0.05,
     "beta": {"kind": "feasible", "value": 0.0},
     "grid": {"n": [8, 12], "C": [0.05]}, "trials": 40, "master_seed": 5},
    {"name": "det-fl", "kind": "relay", "instance": {"p_x": 0.5, "channel": 0.01},
     "ib_c_bits": 0.28, "variant": "fl-truncated", "eps_prime": 0.05,
     "beta": {"kind": "feasible", "value": 0.0},
     "grid": {"n": [8], "C": [0.05], "K": [16, 64]}, "trials": 40, "master_seed": 6},
    {"name": "det-chansim", "kind": "relay", "instance": {"p_xy": [[0.45, 0.05], [0.05, 0.45]]},
     "kernel_u_given_y": [[0.8, 0.2], [0.2, 0.8]], "variant": "vl-chansim",
     "grid": {"n": [6], "C": [0.1]}, "trials": 40, "master_seed": 7},
]


def test_criterion_11_repeated_runs_are_byte_identical(criterion, tmp_path):
    same = True
    for raw in SPECS:
        spec = ExperimentSpec.from_dict(json.loads(json.dumps(raw)))
        blobs = []
        for rep, par in enumerate((1, 2)):
            log = []
            out = run_experiment(spec, par, trial_log=log)
            write_results(out, tmp_path / f"{spec.name}-{rep}.csv")
            write_trials(log, tmp_path / f"{spec.name}-{rep}.trials.csv")
            blobs.append(((tmp_path / f"{spec.name}-{rep}.csv").read_bytes(),
                          (tmp_path / f"{spec.name}-{rep}.trials.csv").read_bytes()))
        same &= blobs[0] == blobs[1]
    assert criterion(11, "repeated runs with a fixed master seed give identical CSV", same,
                     f"{len(SPECS)} specs, lossy and three relay variants")
