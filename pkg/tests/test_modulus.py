import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cablesoup.errors import EmptyOverlap, InsufficientScales, InvalidParams, OutOfDomain
from cablesoup.modulus import (
    box_counts, brute_force_scan, default_j_min, dimension_estimate, fast_points, lemma1_pair, lemma1_test,
    modulus_scan, quick_points, quick_ratio, top_k, u_of_h, warmup_pair, warmup_test,
)
from cablesoup.rng import RngStream
from cablesoup.stoch_core import DyadicPath, besq_path, brownian_path

# P(max of 2^20 |N(0,1)| / sqrt(2 * 20 log 2) lies in [0.8, 1.1]), from the Gaussian tail
FINEST_PASS_PROB = 0.99273729794


def test_u_of_h_values():
    assert u_of_h(math.exp(-1)) == pytest.approx(math.sqrt(2 / math.e), rel=1e-15)
    assert u_of_h(0.25) == pytest.approx(0.83255461115770, rel=1e-12)
    h = np.geomspace(1e-9, math.exp(-1), 200)
    assert np.all(np.diff(u_of_h(h)) > 0)
    for bad in (0.0, -1.0, 0.5):
        with pytest.raises(OutOfDomain):
            u_of_h(bad)


def test_default_j_min():
    assert default_j_min(20) == 14
    assert default_j_min(12) == 6
    assert default_j_min(6) == 2
    assert default_j_min(9, 2.0**5) == 7  # span 32: the coarsest scale must fall below 1/e


def test_finest_max_oracle():
    n = 2**20
    s = math.sqrt(2 * 20 * math.log(2))
    cdf = lambda t: math.exp(n * math.log1p(-2 * stats.norm.sf(t)))  # noqa: E731
    assert cdf(1.1 * s) - cdf(0.8 * s) == pytest.approx(FINEST_PASS_PROB, abs=1e-10)


def test_finest_max_is_scaled_gaussian_max():
    B = brownian_path(1.0, 12, RngStream(3))
    rep = modulus_scan(B)
    h = 2.0**-12
    assert rep.finest_max == pytest.approx(np.abs(np.diff(B.values)).max() / u_of_h(h), rel=1e-14)
    assert rep.max_ratio >= rep.finest_max


def test_linear_path_is_slow():
    x = np.linspace(0, 1, 2**20 + 1)
    rep = modulus_scan(DyadicPath(0.0, 1.0, 20, x))
    assert rep.max_ratio <= 0.05
    assert fast_points(rep, 0.2).size == 0


def test_constant_path_has_no_quick_points():
    F = DyadicPath(0.0, 1.0, 12, np.full(2**12 + 1, 2.0), "nonnegative")
    assert quick_points(F, 0.1).size == 0
    assert np.all(quick_ratio(F) == 0)


@pytest.mark.parametrize("J", [6, 8, 10])
def test_brute_force_equality(J):
    for s in range(6):
        B = brownian_path(1.0, J, RngStream(s, ("bf", J)))
        j_min = 2
        np.testing.assert_array_equal(modulus_scan(B, j_min).ratio, brute_force_scan(B, j_min))


def test_power_of_two_scaling_is_exact():
    B = brownian_path(1.0, 12, RngStream(5))
    r = modulus_scan(B).ratio
    for lam in (0.25, 2.0, -8.0):
        np.testing.assert_array_equal(modulus_scan(B.scaled(lam)).ratio, abs(lam) * r)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5).filter(lambda v: abs(v) > 1e-3), st.floats(-10, 10), st.integers(0, 10**6))
def test_affine_equivariance(lam, shift, seed):
    B = brownian_path(1.0, 10, RngStream(seed))
    r = modulus_scan(B, 4).ratio
    r2 = modulus_scan(B.scaled(lam, shift), 4).ratio
    # a shift perturbs differences by rounding only; scale that by the path size
    tol = 8 * np.finfo(float).eps * (abs(shift) + abs(lam) * np.abs(B.values).max()) / u_of_h(2.0**-10)
    np.testing.assert_allclose(r2, abs(lam) * r, rtol=1e-12, atol=tol)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 1.5), st.floats(0.1, 1.5))
def test_fast_sets_nest(seed, a1, a2):
    rep = modulus_scan(brownian_path(1.0, 10, RngStream(seed)))
    lo, hi = sorted((a1, a2))
    assert set(fast_points(rep, hi)) <= set(fast_points(rep, lo))


def test_low_threshold_flags_plenty():
    rep = modulus_scan(brownian_path(1.0, 16, RngStream(2)))
    assert fast_points(rep, 0.2).size > 0.01 * rep.n_points


def test_besq_quick_points_exist():
    F = besq_path(1.0, 2.0, 1.0, 16, RngStream(4))
    assert quick_points(F, 1.0).size > 0


def test_scan_errors():
    B = brownian_path(1.0, 6, RngStream(0))
    with pytest.raises(InsufficientScales):
        modulus_scan(B, 4)
    with pytest.raises(OutOfDomain):
        modulus_scan(B, 0)
    with pytest.raises(InvalidParams):
        quick_points(B, 1.0)


def test_box_counts():
    flags = np.zeros(17, bool)
    flags[[0, 3, 16]] = True
    # level 2 boxes hold 4 points each; index 16 (right end) joins box 3
    assert box_counts(flags, 4, [1, 2, 4]).tolist() == [2, 2, 3]


def test_dimension_monotone_in_a():
    B = brownian_path(1.0, 18, RngStream(6))
    slopes = [dimension_estimate(B, a).slope for a in (0.3, 0.6, 0.8)]
    assert slopes[0] > slopes[1] > slopes[2]
    with pytest.raises(InvalidParams):
        dimension_estimate(B, 1.2)


def test_quick_pair_symmetric_star():
    F1 = besq_path(1.0, 1.0, 1.0, 12, RngStream(1))
    F2 = besq_path(1.0, 1.0, 1.0, 12, RngStream(2))
    a = lemma1_pair(F1, F2, np.random.default_rng(0))
    b = lemma1_pair(F2, F1, np.random.default_rng(0))
    assert a["star"] == b["star"] and a["sum_ratio_at_star"] == b["sum_ratio_at_star"]
    # the modulus ratio is subadditive
    assert a["triangle_slack"] <= 1e-12


def test_quick_pair_empty_overlap():
    z = DyadicPath(0.0, 1.0, 10, np.zeros(2**10 + 1), "nonnegative")
    with pytest.raises(EmptyOverlap):
        lemma1_pair(z, z, np.random.default_rng(0))


def test_quick_dominance_small_run():
    pairs = [(besq_path(1.0, 1.0, 1.0, 14, RngStream(s, "F1")), besq_path(1.0, 1.0, 1.0, 14, RngStream(s, "F2")))
             for s in range(30)]
    rep = lemma1_test(pairs, RngStream(0), )
    assert rep.passed(0.01)
    assert np.median(rep.selected) > np.median(rep.random)


def test_top_k_ties_and_shift():
    r = np.array([1.0, 3.0, 3.0, 2.0, 3.0])
    assert top_k(r, 2).tolist() == [1, 2]
    B = brownian_path(1.0, 12, RngStream(7))
    r1 = modulus_scan(B).ratio
    r2 = modulus_scan(B.scaled(1.0, 4.0)).ratio
    assert set(top_k(r1, 10)) == set(top_k(r2, 10))


def test_warmup_identical_copies():
    B = brownian_path(1.0, 12, RngStream(8))
    out = warmup_pair(B, B, np.random.default_rng(0), k=10)
    # Z = sqrt(2) B has the same ordering as B
    np.testing.assert_array_equal(out["top"], top_k(modulus_scan(B).ratio, 10))


def test_warmup_small_run():
    pairs = [(brownian_path(1.0, 14, RngStream(s, "B")), brownian_path(1.0, 14, RngStream(s, "Bp")))
             for s in range(20)]
    rep = warmup_test(pairs, rng=RngStream(1))
    assert rep.selected.mean() > rep.random.mean()
    assert rep.passed(0.01)


def test_besq2_quick_set_nonempty_across_seeds():
    hits = sum(quick_points(besq_path(1.0, 2.0, 1.0, 20, RngStream(s, ("q1",))), 1.0, 0.1).size > 0
               for s in range(100))
    assert hits >= 95
