import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import phi_monte_carlo
from scipy.stats import binom

from ibrelay.excess import (
    ExcessModel,
    compositions,
    conditional_types,
    log_type_prob,
    phi_excess,
    representative,
)
from ibrelay.ib import DistortionMeasure, neg_info_density_distortion
from ibrelay.prob import JointPmf, Pmf, bsc, dsbs

HAM = DistortionMeasure.hamming(2)
DSBS = dsbs(0.1)


def dsbs_hamming_oracle(y, z, big_d, p=0.1):
    """Exact tail for DSBS Hamming: two independent binomials, one per agree/disagree group."""
    y, z = np.asarray(y), np.asarray(z)
    agree = int(np.sum(y == z))
    dis = y.size - agree
    a = binom.pmf(np.arange(agree + 1), agree, p)
    b = binom.pmf(np.arange(dis + 1), dis, 1 - p)
    law = np.convolve(a, b)
    return float(law[np.arange(law.size) > y.size * big_d + 1e-12].sum())


def test_single_letter_is_posterior_mismatch_probability():
    assert phi_excess([0], [0], 0.5, DSBS, HAM) == pytest.approx(0.1, abs=1e-15)
    assert phi_excess([0], [1], 0.5, DSBS, HAM) == pytest.approx(0.9, abs=1e-15)


def test_level_at_or_above_max_distortion_gives_zero():
    rng = np.random.default_rng(0)
    y, z = rng.integers(0, 2, 30), rng.integers(0, 2, 30)
    assert phi_excess(y, z, 1.0, DSBS, HAM) == 0.0
    assert phi_excess(y, z, 1.5, DSBS, HAM) == 0.0


def test_boundary_is_strict_inequality():
    # n = 4, D = 0.5: excess means more than 2 mismatches
    y = z = np.zeros(4, int)
    assert phi_excess(y, z, 0.5, DSBS, HAM) == pytest.approx(
        1 - binom.cdf(2, 4, 0.1), abs=1e-15)


def test_block_of_twenty_matches_exact_binomials_and_monte_carlo():
    rng = np.random.default_rng(20)
    y, z = rng.integers(0, 2, 20), rng.integers(0, 2, 20)
    got = phi_excess(y, z, 0.45, DSBS, HAM)
    assert got == pytest.approx(dsbs_hamming_oracle(y, z, 0.45), abs=1e-13)
    post = DSBS.row_given_col().rows
    mc, se = phi_monte_carlo(post, HAM.values, y, z, 0.45, 1_000_000, 5)
    assert abs(got - mc) <= 3 * se


def test_irrational_distortion_uses_fine_grid_and_matches_monte_carlo():
    d = neg_info_density_distortion(DSBS, bsc(0.2))
    model = ExcessModel(DSBS, d)
    assert not model.exact_grid and model.grid == 1e-9
    rng = np.random.default_rng(3)
    y, z = rng.integers(0, 2, 12), rng.integers(0, 2, 12)
    big_d = -0.15
    got = float(model.phi(y, z[None, :], big_d)[0])
    # brute force over all 2^12 source blocks
    post = DSBS.row_given_col().rows
    tot = 0.0
    for bits in range(1 << 12):
        x = (bits >> np.arange(12)) & 1
        if d.values[x, z].mean() > big_d:
            tot += float(np.prod(post[y, x]))
    assert got == pytest.approx(tot, abs=1e-12)


def test_rational_grid_detected_for_multiples_of_a_third():
    d = DistortionMeasure.from_values([[0, 1 / 3, 2 / 3], [1, 0, 1 / 3]])
    p = JointPmf.from_probs([[0.4, 0.1], [0.1, 0.4]])
    model = ExcessModel(p, d)
    assert model.exact_grid and model.grid == pytest.approx(1 / 3)


def test_phi_counts_depends_only_on_joint_type():
    rng = np.random.default_rng(9)
    model = ExcessModel(DSBS, HAM)
    y, z = rng.integers(0, 2, 40), rng.integers(0, 2, 40)
    perm = rng.permutation(40)
    a = model.phi(y, z[None, :], 0.3)[0]
    b = model.phi(y[perm], z[perm][None, :], 0.3)[0]
    assert a == b
    c = model.phi_counts(model.joint_counts(y, z[None, :])[0], 0.3)
    assert a == c


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 25).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n))),
    st.floats(0, 1), st.floats(0, 1))
def test_phi_is_a_nonincreasing_probability(yz, d1, d2):
    y, z = map(np.asarray, yz)
    lo, hi = min(d1, d2), max(d1, d2)
    a, b = phi_excess(y, z, lo, DSBS, HAM), phi_excess(y, z, hi, DSBS, HAM)
    assert 0 <= b <= a <= 1
    assert a == pytest.approx(dsbs_hamming_oracle(y, z, lo), abs=1e-12)


# --- type enumeration --------------------------------------------------------


def test_compositions_count_and_sum():
    comps = list(compositions(6, 3))
    assert len(comps) == math.comb(8, 2)
    assert len(set(comps)) == len(comps) and all(sum(c) == 6 for c in comps)
    assert list(compositions(0, 2)) == [(0, 0)]


def test_type_probabilities_sum_to_one():
    pmf = np.array([0.2, 0.5, 0.3])
    tot = sum(math.exp(log_type_prob(c, pmf)) for c in compositions(9, 3))
    assert tot == pytest.approx(1.0, abs=1e-12)
    assert log_type_prob([1, 0], np.array([0.0, 1.0])) == -math.inf
    np.testing.assert_array_equal(representative([2, 0, 1]), [0, 0, 2])


def test_conditional_types_cover_the_reference_law():
    model = ExcessModel(DSBS, HAM)
    ref = Pmf.from_probs([0.4, 0.6])
    phis, masses = conditional_types(model, [3, 5], ref, 0.3)
    assert masses.sum() == pytest.approx(1.0, abs=1e-12)
    # brute force: every z^8 against a fixed y of the same type
    y = representative([3, 5])
    direct = {}
    for bits in range(1 << 8):
        z = (bits >> np.arange(8)) & 1
        pz = float(np.prod(ref.probs[z]))
        key = round(phi_excess(y, z, 0.3, DSBS, HAM), 14)
        direct[key] = direct.get(key, 0.0) + pz
    mine = {}
    for p, m in zip(phis, masses):
        key = round(float(p), 14)
        mine[key] = mine.get(key, 0.0) + float(m)
    assert mine.keys() == direct.keys()
    for k in mine:
        assert mine[k] == pytest.approx(direct[k], abs=1e-12)
