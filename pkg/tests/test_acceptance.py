"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion n] PASS/FAIL`` line to the terminal
and then asserts the criterion at its stated tolerance.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from cablesoup import experiments
from cablesoup.cable_graph import build_graph, green_matrix
from cablesoup.cli import main
from cablesoup.errors import EmptySoup
from cablesoup.modulus import brute_force_scan, dimension_estimate, fast_points, modulus_scan
from cablesoup.occupation_field import decompose_against_loop, sample_field
from cablesoup.rng import RngStream
from cablesoup.stoch_core import brownian_path

ROOT_SEED = 20240611


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


def cfg(name, **over):
    c = dict(experiments.DEFAULTS[name])
    c.update(seed=ROOT_SEED, **over)
    return c


@pytest.fixture(scope="module")
def brownian_reports():
    """Modulus scans of 100 independent J=20 Brownian paths, shared by criteria 5 and 6."""
    t0 = time.perf_counter()
    reps = [modulus_scan(brownian_path(1.0, 20, RngStream(ROOT_SEED, ("levy", i)))) for i in range(100)]
    return reps, time.perf_counter() - t0


def test_criterion_01_green_oracle(report):
    t0 = time.perf_counter()
    errs = []
    for L in (0.1, 1.0, 1.7, 12.5):
        g = build_graph([("x", "z", L)], ["z"])
        errs.append(abs(green_matrix(g).G[0, 0] - 2 * L) / (2 * L))
    for L1, L2 in ((0.3, 2.2), (1.0, 1.0), (5.0, 0.01)):
        g = build_graph([("z1", "x", L1), ("x", "z2", L2)], ["z1", "z2"])
        exact = 2 * L1 * L2 / (L1 + L2)
        errs.append(abs(green_matrix(g).G[0, 0] - exact) / exact)
    dt = time.perf_counter() - t0
    ok = max(errs) <= 1e-10 and dt < 1.0
    report(1, ok, f"max rel err {max(errs):.2e}, {dt:.3f}s")
    assert ok


def test_criterion_02_ray_knight(report, tmp_path):
    t0 = time.perf_counter()
    res, _ = experiments.run_rayknight(cfg("rayknight"), tmp_path, 1)
    dt = time.perf_counter() - t0
    ok = res["p_value"] > 0.01 and res["replicas"] == 10_000 and res["step"] == 1e-4 and dt < 300
    report(2, ok, f"KS p={res['p_value']:.3f} (D={res['ks_statistic']:.4f}), {dt:.1f}s")
    assert ok


def test_criterion_03_isomorphism(report, tmp_path):
    t0 = time.perf_counter()
    res, _ = experiments.run_isomorphism(cfg("isomorphism"), tmp_path, 1)
    dt = time.perf_counter() - t0
    checked = [t for t in res["tests"] if t["checked"]]
    ps = {t["c"]: t["p_value"] for t in checked}
    ok = sorted(ps) == [1.0, 2.0, 3.0] and min(ps.values()) > 0.01 and dt < 120
    shown = ", ".join(f"c={c:g}: {p:.3f}" for c, p in ps.items())
    report(3, ok, f"vertex {res['vertex']}: KS p {shown}, {dt:.1f}s")
    assert ok


def test_criterion_04_additivity(five, report):
    n = 10_000
    vertex = five.index["c"]
    edge = 2  # c - d
    one, two = [], []
    for i in range(n):
        f1 = sample_field(five, 1.0, 1, RngStream(ROOT_SEED, ("add", "one", i)))
        f2 = sample_field(five, 1.0, 1, RngStream(ROOT_SEED, ("add", "two", i)))
        f = sample_field(five, 2.0, 1, RngStream(ROOT_SEED, ("add", "sum", i)))
        one.append((f1.vertex.values[vertex] + f2.vertex.values[vertex], f1.midpoint(edge) + f2.midpoint(edge)))
        two.append((f.vertex.values[vertex], f.midpoint(edge)))
    one, two = np.array(one), np.array(two)
    p_vertex = stats.ks_2samp(one[:, 0], two[:, 0]).pvalue
    p_edge = stats.ks_2samp(one[:, 1], two[:, 1]).pvalue
    ok = p_vertex > 0.01 and p_edge > 0.01
    report(4, ok, f"two-sample KS p vertex={p_vertex:.3f}, edge midpoint={p_edge:.3f}")
    assert ok


def test_criterion_05_modulus_window(brownian_reports, report):
    reps, dt = brownian_reports
    stat = np.array([r.finest_max for r in reps])
    inside = int(np.sum((stat >= 0.8) & (stat <= 1.1)))
    ok = inside >= 95 and dt < 120
    report(5, ok, f"{inside}/100 seeds in [0.8, 1.1] (range {stat.min():.3f}-{stat.max():.3f}), {dt:.1f}s")
    assert ok


def test_criterion_06_fast_set_empty(brownian_reports, report):
    reps, _ = brownian_reports
    empty = sum(fast_points(r, 1.5, 0.1).size == 0 for r in reps)
    ok = empty >= 99
    report(6, ok, f"a=1.5 fast set empty in {empty}/100 seeds")
    assert ok


def test_criterion_07_dimension(report):
    t0 = time.perf_counter()
    slopes = [dimension_estimate(brownian_path(1.0, 20, RngStream(ROOT_SEED, ("dim", i))), 0.6, 0.1).slope
              for i in range(20)]
    dt = time.perf_counter() - t0
    mean = float(np.mean(slopes))
    ok = abs(mean - 0.64) <= 0.12 and dt < 300
    report(7, ok, f"mean slope {mean:.3f} (sd {np.std(slopes, ddof=1):.3f}) vs 0.64 +- 0.12, {dt:.1f}s")
    assert ok


def test_criterion_08_quick_point_dominance(report, tmp_path):
    t0 = time.perf_counter()
    res, _ = experiments.run_lemma1(cfg("lemma1"), tmp_path, 1)
    dt = time.perf_counter() - t0
    ok = res["p_value"] < 1e-3 and dt < 300
    report(8, ok, f"Mann-Whitney p={res['p_value']:.2e}, medians {res['median_at_star']:.3f} vs "
                  f"{res['median_at_random']:.3f}, {dt:.1f}s")
    assert ok


def test_criterion_09_warmup(report, tmp_path):
    res, _ = experiments.run_warmup(cfg("warmup"), tmp_path, 1)
    ok = res["p_value"] < 0.01
    report(9, ok, f"Mann-Whitney p={res['p_value']:.2e}, rates {res['mean_top_rate']:.3f} vs "
                  f"{res['mean_random_rate']:.3f}")
    assert ok


def test_criterion_10_conditioned_profile(report, tmp_path):
    t0 = time.perf_counter()
    res, _ = experiments.run_burglar(cfg("burglar"), tmp_path, 1)
    dt = time.perf_counter() - t0
    ok = res["p_value"] < 1e-3 and res["n"] == 200 and dt < 600
    report(10, ok, f"Mann-Whitney p={res['p_value']:.2e}, means {res['selected_mean']:.3f} vs "
                   f"{res['random_mean']:.3f}, {dt:.1f}s")
    assert ok


def test_criterion_11_decomposition(five, report):
    worst, used, i = 0.0, 0, 0
    while used < 40:
        try:
            d = decompose_against_loop(five, 1.0, 10, RngStream(ROOT_SEED, ("dec", i)))
        except EmptySoup:
            # no loop to single out in this soup; draw the next seed
            continue
        finally:
            i += 1
        used += 1
        worst = max(worst, float(d.residuals().max()))
    ok = worst <= 1e-12
    report(11, ok, f"max relative residual {worst:.2e} over {used} non-empty soups ({i} seeds drawn)")
    assert ok


def test_criterion_12_brute_force(report):
    mismatches = 0
    for i in range(50):
        J = 6 + i % 5
        B = brownian_path(1.0, J, RngStream(ROOT_SEED, ("bf", i)))
        j_min = 2 + i % (J - 5)  # coarsest level from 2 up to J - 4
        if not np.array_equal(modulus_scan(B, j_min).ratio, brute_force_scan(B, j_min)):
            mismatches += 1
    ok = mismatches == 0
    report(12, ok, f"{50 - mismatches}/50 paths identical (J 6-10)")
    assert ok


RERUNS = [
    ["sample-field", "--J", "8"],
    ["sample-soup", "--c", "2.5"],
    ["modulus-scan", "--J", "14"],
    ["dimension", "--J", "14", "--replicas", "3"],
    ["lemma1", "--J", "12", "--replicas", "6"],
    ["warmup", "--J", "12", "--replicas", "6"],
    ["rayknight", "--replicas", "300"],
    ["isomorphism", "--replicas", "200"],
    ["burglar", "--J", "7", "--replicas", "8"],
]


def test_criterion_13_determinism(report, tmp_path):
    diffs = []
    for argv in RERUNS:
        outs = []
        for run in ("a", "b"):
            out = tmp_path / run
            code = main([*argv, "--seed", "11", "--out", str(out), "--workers", "1"])
            assert code in (0, 1), argv
            d = out / argv[0]
            files = {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
                     if p.is_file() and p.name != "report.json"}
            # the report differs only by its timestamp line
            files["report.json"] = b"\n".join(line for line in (d / "report.json").read_bytes().splitlines()
                                               if b'"timestamp"' not in line)
            outs.append(files)
        if outs[0] != outs[1] or not outs[0]:
            diffs.append(argv[0])
    ok = not diffs
    report(13, ok, f"{len(RERUNS) - len(diffs)}/{len(RERUNS)} experiments byte-identical on rerun"
                   + (f" (differ: {diffs})" if diffs else ""))
    assert ok
