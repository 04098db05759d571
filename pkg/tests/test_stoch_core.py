import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from cablesoup.errors import InvalidParams, StepTooCoarse
from cablesoup.rng import RngStream
from cablesoup.stoch_core import (
    BesqParams, DyadicPath, StopRule, besq_bridge, besq_bridge_midpoints, besq_path, besq_transition,
    besq_transition_logpdf, besq_zero_mass, bessel_variates, bridge_midpoint_atom, bridge_midpoint_cdf,
    brownian_bridge, brownian_path, crossing_counts, euler_besq, reflected_bm_with_local_time, refine_brownian,
)


def transition_cdf(y, x0, t, delta):
    """Oracle: atom plus quadrature of the transition density."""
    f = lambda u: math.exp(besq_transition_logpdf(x0, u, t, delta))  # noqa: E731
    atom = float(besq_zero_mass(x0, t, delta))
    return atom + integrate.quad(f, 0, y, limit=200)[0] if y > 0 else atom


def test_dyadic_path_validation():
    with pytest.raises(InvalidParams):
        DyadicPath(0.0, 1.0, 2, np.zeros(4))
    with pytest.raises(InvalidParams):
        DyadicPath(0.0, 1.0, 1, np.array([0.0, -1.0, 0.0]), "nonnegative")
    with pytest.raises(InvalidParams):
        DyadicPath(0.0, 0.0, 1, np.zeros(3))
    p = DyadicPath(1.0, 2.0, 2, np.arange(5.0))
    np.testing.assert_array_equal(p.positions, [1.0, 1.5, 2.0, 2.5, 3.0])
    assert p.coarsen(1).values.tolist() == [0.0, 2.0, 4.0]
    assert (p + p).values.tolist() == [0, 2, 4, 6, 8]


def test_brownian_bridge_pins_and_midpoint_law():
    mids = []
    for s in range(3000):
        b = brownian_bridge(1.0, -2.0, 4.0, 3, RngStream(s, ("bb",)))
        assert b.values[0] == 1.0 and b.values[-1] == -2.0
        mids.append(b.values[4])
    # midpoint of a bridge over length L is N((a+b)/2, L/4)
    assert stats.kstest(mids, stats.norm(-0.5, 1.0).cdf).pvalue > 0.01


def test_brownian_path_increments():
    p = brownian_path(2.0, 14, RngStream(3))
    inc = np.diff(p.values)
    assert stats.kstest(inc / math.sqrt(p.mesh), "norm").pvalue > 0.01


def test_refine_keeps_coarse_values():
    p = brownian_path(1.0, 6, RngStream(5))
    q = refine_brownian(p, RngStream(6))
    assert q.level == 7
    np.testing.assert_array_equal(q.values[::2], p.values)


def test_besq_transition_matches_density():
    for x0, t, delta in [(1.0, 0.5, 0.0), (0.5, 1.0, 1.0), (2.0, 0.3, 2.5), (0.0, 1.0, 3.0)]:
        x = besq_transition(BesqParams(delta, x0, t), RngStream(1, (x0, t)), size=4000)
        if delta == 0:
            assert abs(np.mean(x == 0) - besq_zero_mass(x0, t)) < 4 * math.sqrt(0.25 / 4000)
        assert abs(x.mean() - (x0 + delta * t)) < 5 * x.std() / math.sqrt(x.size)
        pos = np.sort(x[x > 0])
        atom = float(besq_zero_mass(x0, t, delta))
        cdf = lambda v: (np.array([transition_cdf(u, x0, t, delta) for u in np.atleast_1d(v)]) - atom) / (1 - atom)  # noqa: E731
        grid = np.quantile(pos, np.linspace(0.05, 0.95, 19))
        emp = np.searchsorted(pos, grid, side="right") / pos.size
        assert np.max(np.abs(emp - cdf(grid))) < 1.63 / math.sqrt(pos.size) + 0.005


def test_transition_density_integrates_to_one():
    for x0, t, delta in [(1.0, 0.5, 0.0), (0.3, 2.0, 0.5), (1.0, 1.0, 2.0)]:
        assert transition_cdf(400.0, x0, t, delta) == pytest.approx(1.0, abs=1e-8)


def bessel_pmf(nu, z, kmax):
    k = np.arange(kmax)
    lq = 2 * k * np.log(z / 2) - special.gammaln(k + 1) - special.gammaln(k + nu + 1)
    p = np.exp(lq - lq.max())
    return p / p.sum()


@pytest.mark.parametrize("nu,z", [(-0.5, 1.41420823), (-0.5, 0.3), (0.0, 2.0), (1.0, 7.0), (0.5, 60.0), (-0.9, 1e-3)])
def test_bessel_variates_chi_square(nu, z):
    x = bessel_variates(nu, np.full(20000, z), RngStream(2, (nu, z)))
    p = bessel_pmf(nu, z, int(x.max()) + 60)
    obs = np.bincount(x, minlength=p.size)[: p.size]
    exp = p * x.size
    keep = exp > 5
    if keep.sum() < 2:
        assert np.mean(x == np.argmax(p)) > 0.99
        return
    chi = np.sum((obs[keep] - exp[keep]) ** 2 / exp[keep])
    assert stats.chi2.sf(chi, keep.sum() - 1) > 1e-3


def test_bessel_tiny_and_zero_z():
    out = bessel_variates(-0.5, np.array([0.0, 5e-324, 1e-300]), RngStream(0))
    assert out.tolist() == [0, 0, 0]


@pytest.mark.parametrize("a,b,delta,s", [(1.0, 2.0, 1.0, 0.25), (0.5, 0.0, 0.0, 0.5), (0.0, 0.0, 2.0, 0.5),
                                         (3.0, 0.2, 0.7, 0.1), (2.0, 1.0, 0.0, 0.5)])
def test_bridge_midpoint_against_quadrature(a, b, delta, s):
    x = besq_bridge_midpoints(np.full(5000, a), np.full(5000, b), delta, s, RngStream(9, (a, b, delta)))
    atom = bridge_midpoint_atom(a, b, delta, s)
    if atom > 0:
        assert abs(np.mean(x == 0) - atom) < 4 * math.sqrt(atom * (1 - atom) / x.size)
    pos = x[x > 0]
    cdf = lambda v: (bridge_midpoint_cdf(v, a, b, delta, s) - atom) / (1 - atom)  # noqa: E731
    assert stats.kstest(pos, cdf).pvalue > 0.01


def test_bridge_atom_frozen():
    assert bridge_midpoint_atom(1.0, 0.0, 0.0, 0.5) == pytest.approx(math.exp(-0.5))
    assert bridge_midpoint_atom(1.0, 1.0, 0.0, 0.5) == 0.0
    assert bridge_midpoint_atom(1.0, 0.0, 1.0, 0.5) == 0.0


def test_bridge_exact_vs_inversion():
    # inversion costs a root search over a quadrature per point, so keep this one level deep
    ex = [besq_bridge(1.0, 0.5, 1.5, 1.0, 1, RngStream(s, ("e",))).values[1] for s in range(1000)]
    inv = [besq_bridge(1.0, 0.5, 1.5, 1.0, 1, RngStream(s, ("i",)), method="inversion").values[1] for s in range(200)]
    assert stats.ks_2samp(ex, inv).pvalue > 0.01


def test_bridge_validation_and_pinning():
    with pytest.raises(InvalidParams):
        besq_bridge(0.0, 1.0, 0.0, 1.0, 3, RngStream(0))
    with pytest.raises(InvalidParams):
        besq_bridge(-1.0, 1.0, 1.0, 1.0, 3, RngStream(0))
    p = besq_bridge(1.5, 0.0, 0.0, 2.0, 8, RngStream(1))
    assert p.values[0] == 1.5 and p.values[-1] == 0.0 and p.values.min() >= 0
    # dimension 0 is absorbed: once zero, zero to the right
    z = np.flatnonzero(p.values == 0)
    assert np.all(p.values[z[0]:] == 0)
    q = besq_bridge(0.0, 0.0, 2.0, 1.0, 8, RngStream(2))
    assert q.values[0] == q.values[-1] == 0 and np.all(q.values[1:-1] > 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 5), st.floats(0.01, 5), st.floats(0.0, 4.0), st.integers(0, 10**6))
def test_bridge_endpoints_exact(a, b, delta, seed):
    if delta == 0:
        b = 0.0 if a == 0 else b
    p = besq_bridge(a, b, delta, 1.3, 6, RngStream(seed))
    assert p.values[0] == a and p.values[-1] == b
    assert np.all(np.isfinite(p.values)) and p.values.min() >= 0


def test_besq_path_end_law_both_routes():
    for delta, method in [(2.0, "gaussian"), (2.0, "bridge"), (0.5, "auto")]:
        ends = [besq_path(1.0, delta, 1.0, 4, RngStream(s, (delta, method)), method=method).values[-1]
                for s in range(2000)]
        assert stats.kstest(ends, lambda v: np.array([transition_cdf(u, 1.0, 1.0, delta) for u in np.atleast_1d(v)])).pvalue > 0.01


def test_euler_mean():
    x = euler_besq(1.0, 2.0, 0.5, 1e-3, RngStream(4), 4000)
    assert abs(x.mean() - 2.0) < 5 * x.std() / math.sqrt(x.size)


def test_reflected_horizon_conservation():
    run = reflected_bm_with_local_time(1e-4, StopRule.horizon(0.7), RngStream(8))
    assert run.local_time @ run.cell_widths == pytest.approx(run.elapsed, rel=1e-12)
    assert run.elapsed == pytest.approx(0.7)
    assert np.all(run.path >= 0)


@pytest.mark.parametrize("explicit", [False, True])
def test_reflected_tau_local_time_at_zero(explicit):
    for s in range(5):
        run = reflected_bm_with_local_time(1e-4, StopRule.inverse_local_time(0.3), RngStream(s),
                                           record_path=explicit)
        assert abs(run.local_time[0] - 0.3) <= 2 * run.mesh
        assert run.local_time @ run.cell_widths == pytest.approx(run.elapsed, rel=1e-12)


def test_reflected_explicit_and_crossing_routes_agree():
    # two excursions on a coarse lattice keep the explicit walks short
    rule = StopRule.inverse_local_time(0.4)
    k = 3
    va = [reflected_bm_with_local_time(1e-2, rule, RngStream(s, ("c",))).local_time for s in range(800)]
    vb = [reflected_bm_with_local_time(1e-2, rule, RngStream(s, ("w",)), record_path=True).local_time
          for s in range(800)]
    va = [x[k] if x.size > k else 0.0 for x in va]
    vb = [x[k] if x.size > k else 0.0 for x in vb]
    assert stats.ks_2samp(va, vb).pvalue > 0.01


def test_reflected_step_limit():
    with pytest.raises(StepTooCoarse):
        reflected_bm_with_local_time(0.05, StopRule.horizon(1.0), RngStream(0))


def test_crossing_counts_martingale():
    M = 40
    _, level, count = crossing_counts(np.full(4000, M), RngStream(3))
    for k in (1, 5, 20):
        tot = count[level == k].sum() / 4000
        # E U_k = M for the critical geometric branching chain
        assert abs(tot - M) < 0.1 * M


def test_crossing_counts_truncation_is_a_prefix():
    full = crossing_counts(np.full(50, 3), RngStream(5))
    cut = crossing_counts(np.full(50, 3), RngStream(5), max_level=4)
    keep = full[1] <= 4
    for a, b in zip(full, cut):
        np.testing.assert_array_equal(a[keep], b)
