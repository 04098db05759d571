"""Experiment runners behind the command line.

Each runner takes a resolved config dict, an output directory and a worker
count, writes its data files, and returns ``(results, passed)``. Replica ``i``
always draws from ``RngStream(seed, (experiment, i, ...))``, so results do not
depend on the number of workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from importlib.resources import files
from pathlib import Path

import numpy as np
from scipy import stats

from . import burglar, io, modulus
from .cable_graph import green_matrix, read_graph
from .errors import UsageError
from .loop_soup import SoupConfig, sample_soup, sample_vertex_field
from .occupation_field import sample_field
from .rng import RngStream
from .stoch_core import besq_path, brownian_path

__all__ = ["RUNNERS", "DEFAULTS", "load_graph", "pmap"]

DEFAULT_GRAPH = "five_vertex.graph"

DEFAULTS = {
    "sample-field": {"graph": None, "c": 1.0, "J": 16, "route": "bridges"},
    "sample-soup": {"graph": None, "c": 1.0},
    "modulus-scan": {"J": 20, "j_min": None, "input": None, "a": 1.0, "eta": 0.1},
    "dimension": {"J": 20, "a": 0.6, "eta": 0.1, "replicas": 20, "tolerance": 0.12},
    "lemma1": {"J": 20, "replicas": 200, "delta": 1.0, "x0": 1.0, "eta": 0.1, "alpha": 1e-3},
    "warmup": {"J": 20, "replicas": 100, "k": 10, "tau0": 0.5, "alpha": 0.01},
    "rayknight": {"h": 1.0, "x": 0.5, "step": 1e-4, "replicas": 10000, "alpha": 0.01},
    "isomorphism": {"graph": None, "cs": "1,2,3", "replicas": 10000, "vertex": None, "alpha": 0.01},
    "burglar": {"h": 0.5, "l": 1.0, "step": 1e-4, "J": 9, "replicas": 200, "alpha": 1e-3},
}


def load_graph(path):
    if path is None:
        return read_graph(files("cablesoup") / "data" / DEFAULT_GRAPH)
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"graph file not found: {path}")
    return read_graph(p)


def pmap(fn, tasks, workers: int):
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _stream(cfg, *labels) -> RngStream:
    return RngStream(int(cfg["seed"]), labels)


# ---------------------------------------------------------------------------


def run_sample_field(cfg, out: Path, workers: int):
    g = load_graph(cfg["graph"])
    stream = _stream(cfg, "sample-field")
    field = sample_field(g, cfg["c"], cfg["J"], stream, route=cfg["route"])
    io.write_field(out / "field", field, cfg["seed"], stream.key_string())
    results = {
        "graph_sha256": g.digest,
        "vertex_values": {str(x): float(v) for x, v in zip(g.interior, field.vertex.values)},
        "edge_max": [float(p.values.max()) for p in field.edges],
        "min_value": field.min_value,
    }
    return results, field.min_value >= 0


def run_sample_soup(cfg, out: Path, workers: int):
    g = load_graph(cfg["graph"])
    soup = sample_soup(g, SoupConfig(cfg["c"]), _stream(cfg, "sample-soup"))
    io.write_soup(out / "soup.jsonl", soup)
    vf = soup.field()
    results = {
        "graph_sha256": g.digest,
        "loops": len(soup.loops),
        "mass": soup.mass,
        "vertex_field": {str(x): float(v) for x, v in zip(g.interior, vf.values)},
    }
    return results, True


def run_modulus_scan(cfg, out: Path, workers: int):
    if cfg["input"]:
        p = Path(cfg["input"])
        if not p.is_file():
            raise UsageError(f"input path not found: {p}")
        F = io.read_path_csv(p)
    else:
        F = brownian_path(1.0, cfg["J"], _stream(cfg, "modulus-scan"))
    rep = modulus.modulus_scan(F, cfg["j_min"])
    io.write_rows(out / "ratios.csv", ["position", "ratio"], zip(F.positions, rep.ratio))
    results = rep.summary(eta=cfg["eta"])
    results["fast_points"] = int(modulus.fast_points(rep, cfg["a"], cfg["eta"]).size)
    return results, True


def _dimension_one(args):
    cfg, i = args
    B = brownian_path(1.0, cfg["J"], _stream(cfg, "dimension", i))
    return modulus.dimension_estimate(B, cfg["a"], cfg["eta"]).as_dict()


def run_dimension(cfg, out: Path, workers: int):
    rows = pmap(_dimension_one, [(cfg, i) for i in range(cfg["replicas"])], workers)
    slopes = np.array([r["slope"] for r in rows])
    io.write_rows(out / "slopes.csv", ["replica", "slope", "stderr"],
                  [(i, r["slope"], r["stderr"]) for i, r in enumerate(rows)])
    target = 1.0 - cfg["a"] ** 2
    mean = float(np.mean(slopes))
    results = {
        "mean_slope": mean,
        "slope_sd": float(np.std(slopes, ddof=1)) if slopes.size > 1 else 0.0,
        "target": target,
        "levels": rows[0]["levels"],
        "mean_counts": np.mean([r["counts"] for r in rows], axis=0),
    }
    return results, bool(abs(mean - target) <= cfg["tolerance"])


def _lemma1_one(args):
    cfg, i = args
    s = _stream(cfg, "lemma1", i)
    F1 = besq_path(cfg["x0"], cfg["delta"], 1.0, cfg["J"], s.child("F1"))
    F2 = besq_path(cfg["x0"], cfg["delta"], 1.0, cfg["J"], s.child("F2"))
    return modulus.lemma1_pair(F1, F2, s.child("pick").generator)


def run_lemma1(cfg, out: Path, workers: int):
    rows = pmap(_lemma1_one, [(cfg, i) for i in range(cfg["replicas"])], workers)
    at_star = np.array([r["at_star"] for r in rows])
    at_rand = np.array([r["at_random"] for r in rows])
    res = stats.mannwhitneyu(at_star, at_rand, alternative="greater")
    io.write_rows(out / "replicas.csv", ["replica", "star", "at_star", "random", "at_random", "sum_ratio_at_star"],
                  [(i, r["star"], r["at_star"], r["random"], r["at_random"], r["sum_ratio_at_star"])
                   for i, r in enumerate(rows)])
    results = {
        "u_statistic": float(res.statistic),
        "p_value": float(res.pvalue),
        "median_at_star": float(np.median(at_star)),
        "median_at_random": float(np.median(at_rand)),
        "max_triangle_slack": max(r["triangle_slack"] for r in rows),
    }
    return results, bool(res.pvalue < cfg["alpha"])


def _warmup_one(args):
    cfg, i = args
    s = _stream(cfg, "warmup", i)
    B = brownian_path(1.0, cfg["J"], s.child("B"))
    Bp = brownian_path(1.0, cfg["J"], s.child("Bp"))
    r = modulus.warmup_pair(B, Bp, s.child("pick").generator, cfg["k"], cfg["tau0"])
    return {"top_rate": r["top_rate"], "random_rate": r["random_rate"]}


def run_warmup(cfg, out: Path, workers: int):
    rows = pmap(_warmup_one, [(cfg, i) for i in range(cfg["replicas"])], workers)
    top = np.array([r["top_rate"] for r in rows])
    rand = np.array([r["random_rate"] for r in rows])
    res = stats.mannwhitneyu(top, rand, alternative="greater")
    io.write_rows(out / "rates.csv", ["replica", "top_rate", "random_rate"],
                  [(i, r["top_rate"], r["random_rate"]) for i, r in enumerate(rows)])
    results = {
        "u_statistic": float(res.statistic),
        "p_value": float(res.pvalue),
        "mean_top_rate": float(top.mean()),
        "mean_random_rate": float(rand.mean()),
    }
    return results, bool(res.pvalue < cfg["alpha"])


def run_rayknight(cfg, out: Path, workers: int):
    res = burglar.ray_knight_test(cfg["h"], cfg["x"], cfg["step"], cfg["replicas"], _stream(cfg, "rayknight"))
    io.write_rows(out / "summary.csv", ["key", "value"], sorted((k, v) for k, v in res.items()))
    return res, bool(res["p_value"] > cfg["alpha"])


def _iso_one(args):
    cfg, c, i = args
    g = load_graph(cfg["graph"])
    return sample_vertex_field(g, c, _stream(cfg, "isomorphism", str(c), i), route="loops").values


def run_isomorphism(cfg, out: Path, workers: int):
    g = load_graph(cfg["graph"])
    G = green_matrix(g).diagonal
    try:
        cs = [float(t) for t in str(cfg["cs"]).split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad intensity list {cfg['cs']!r}") from None
    vertex = cfg["vertex"] if cfg["vertex"] is not None else str(g.interior[0])
    names = [str(x) for x in g.interior]
    if vertex not in names:
        raise UsageError(f"vertex {vertex!r} is not an interior vertex")
    vi = names.index(vertex)
    tests, passed = [], True
    sample_rows = []
    for c in cs:
        vals = np.array(pmap(_iso_one, [(cfg, c, i) for i in range(cfg["replicas"])], workers))
        for j, name in enumerate(names):
            ks = stats.kstest(vals[:, j], stats.gamma(c / 2.0, scale=G[j]).cdf)
            tests.append({"c": c, "vertex": name, "green": float(G[j]), "ks_statistic": float(ks.statistic),
                          "p_value": float(ks.pvalue), "mean": float(vals[:, j].mean()),
                          "target_mean": c / 2.0 * float(G[j]), "checked": j == vi})
        passed &= tests[-len(names) + vi]["p_value"] > cfg["alpha"]
        sample_rows += [(c, i, *row) for i, row in enumerate(vals)]
    io.write_rows(out / "samples.csv", ["c", "replica", *names], sample_rows)
    return {"vertex": vertex, "tests": tests}, bool(passed)


def run_burglar(cfg, out: Path, workers: int):
    rep = burglar.proposition2_statistic(cfg["h"], cfg["l"], cfg["step"], cfg["J"], cfg["replicas"],
                                         _stream(cfg, "burglar"))
    io.write_rows(out / "replicas.csv", ["replica", "star", "at_star", "at_random"],
                  [(i, s, a, b) for i, (s, a, b) in enumerate(zip(rep.details["stars"], rep.selected, rep.random))])
    d = rep.as_dict()
    d.pop("selected")
    d.pop("random")
    return d, rep.passed(cfg["alpha"])


RUNNERS = {
    "sample-field": run_sample_field,
    "sample-soup": run_sample_soup,
    "modulus-scan": run_modulus_scan,
    "dimension": run_dimension,
    "lemma1": run_lemma1,
    "warmup": run_warmup,
    "rayknight": run_rayknight,
    "isomorphism": run_isomorphism,
    "burglar": run_burglar,
}


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover
        return max(1, os.cpu_count() or 1)
