"""Multiscale modulus ratios, fast and quick points, box-counting dimension,
and the two dominance tests built on them.

All limsups are replaced by maxima over dyadic offsets 2^(J-j) grid steps,
j in [j_min, J], so every ratio is an exact function of the grid values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import EmptyOverlap, InsufficientScales, InvalidParams, OutOfDomain
from .rng import as_generator
from .stoch_core import DyadicPath

__all__ = [
    "u_of_h",
    "default_j_min",
    "ModulusReport",
    "DimensionEstimate",
    "DominanceReport",
    "modulus_scan",
    "brute_force_scan",
    "fast_points",
    "quick_ratio",
    "quick_points",
    "box_counts",
    "pair_ratios",
    "scale_ratio",
    "top_k",
    "dimension_estimate",
    "lemma1_test",
    "warmup_test",
]

DEFAULT_ETA = 0.1
# The default scan uses the FINE_BAND + 1 finest dyadic levels. Suprema over
# overlapping windows approach U(h) only slowly as h shrinks (Brownian
# per-level maxima average about 1.3 at level 2 and 1.1 at level 10), so
# coarse levels would flag spurious 1.5-fast points.
FINE_BAND = 6
BOX_J_LO = 8
BOX_J_OFFSET = 4


def u_of_h(h):
    """U(h) = sqrt(2 h log(1/h)) on 0 < h <= 1/e, where it is increasing."""
    arr = np.asarray(h, dtype=float)
    if not (np.all(arr > 0) and np.all(arr <= math.exp(-1))):
        raise OutOfDomain(f"U(h) needs 0 < h <= 1/e, got {h!r}")
    out = np.sqrt(2.0 * arr * np.log(1.0 / arr))
    return float(out) if np.ndim(out) == 0 else out


def default_j_min(J: int, length: float = 1.0) -> int:
    """Coarsest level: J - FINE_BAND, raised until the scale is below 1/e."""
    j = J - FINE_BAND
    while length * 2.0**-j >= math.exp(-1):
        j += 1
    if j > J:
        raise InsufficientScales(f"no dyadic scale of a span-{length} path at level {J} lies below 1/e")
    return max(j, 0)


@dataclass(frozen=True, eq=False)
class ModulusReport:
    """Per-point modulus ratio R(x) of a grid path over dyadic scales j_min..J."""

    ratio: np.ndarray
    scales: np.ndarray
    levels: np.ndarray
    J: int
    j_min: int
    length: float
    scale_max: np.ndarray  # max over x of the single-scale ratio, per level

    @property
    def finest_max(self) -> float:
        """Largest ratio of one grid step, max |F(x + mesh) - F(x)| / U(mesh)."""
        return float(self.scale_max[-1])

    @property
    def n_points(self) -> int:
        return self.ratio.size

    @property
    def max_ratio(self) -> float:
        return float(self.ratio.max())

    def flags(self, a: float, eta: float = DEFAULT_ETA) -> np.ndarray:
        return self.ratio >= a * (1.0 - eta)

    def quantiles(self, qs=(0.5, 0.9, 0.99, 1.0)) -> dict:
        return {f"q{q:g}": float(np.quantile(self.ratio, q)) for q in qs}

    def summary(self, thresholds=(0.2, 0.5, 1.0, 1.5), eta: float = DEFAULT_ETA) -> dict:
        return {
            "J": self.J,
            "j_min": self.j_min,
            "length": self.length,
            "scales": [float(h) for h in self.scales],
            "max_ratio": self.max_ratio,
            "finest_max": self.finest_max,
            "scale_max": [float(r) for r in self.scale_max],
            "quantiles": self.quantiles(),
            "eta": eta,
            "flagged": {f"{a:g}": int(self.flags(a, eta).sum()) for a in thresholds},
        }


def pair_ratios(values: np.ndarray, J: int, length: float, j: int) -> np.ndarray:
    """|F(x_i + h) - F(x_i)| / U(h) for h = length 2^-j, indexed by the left point i."""
    k = 1 << (J - int(j))
    return np.abs(values[k:] - values[:-k]) / u_of_h(length * 2.0**-j)


def scale_ratio(values: np.ndarray, J: int, length: float, j: int) -> np.ndarray:
    """Per-point ratio at the single scale length 2^-j, max over both directions."""
    k = 1 << (J - int(j))
    r = pair_ratios(values, J, length, j)
    out = np.zeros(values.size)
    out[:-k] = r
    np.maximum(out[k:], r, out=out[k:])
    return out


def _scan_arrays(values: np.ndarray, J: int, length: float, j_min: int):
    if J < j_min + 4:
        raise InsufficientScales(f"level {J} needs at least 4 scales above j_min={j_min}")
    levels = np.arange(j_min, J + 1)
    scales = length * np.exp2(-levels.astype(float))
    R = np.zeros(values.size)
    smax = np.zeros(levels.size)
    for i, j in enumerate(levels):
        k = 1 << (J - int(j))
        r = pair_ratios(values, J, length, j)
        smax[i] = r.max()
        np.maximum(R[:-k], r, out=R[:-k])
        np.maximum(R[k:], r, out=R[k:])
    return R, scales, levels, smax


def modulus_scan(F: DyadicPath, j_min: int | None = None) -> ModulusReport:
    """R(x) = max over j in [j_min, J] and both directions of |F(x +- h) - F(x)| / U(h)."""
    j_min = default_j_min(F.level, F.length) if j_min is None else int(j_min)
    if F.length * 2.0**-j_min >= math.exp(-1):
        raise OutOfDomain(f"coarsest scale {F.length * 2.0**-j_min} is not below 1/e")
    R, scales, levels, smax = _scan_arrays(np.asarray(F.values, float), F.level, F.length, j_min)
    return ModulusReport(R, scales, levels, F.level, j_min, F.length, smax)


def brute_force_scan(F: DyadicPath, j_min: int) -> np.ndarray:
    """Reference double loop over grid points and dyadic offsets."""
    v = [float(x) for x in F.values]
    n = len(v) - 1
    out = [0.0] * (n + 1)
    for x in range(n + 1):
        best = 0.0
        for j in range(j_min, F.level + 1):
            k = 1 << (F.level - j)
            u = u_of_h(F.length * 2.0**-j)
            for y in (x - k, x + k):
                if 0 <= y <= n:
                    best = max(best, abs(v[y] - v[x]) / u)
        out[x] = best
    return np.array(out)


def fast_points(report: ModulusReport, a: float, eta: float = DEFAULT_ETA) -> np.ndarray:
    """Grid indices with R(x) >= a (1 - eta)."""
    if not a > 0:
        raise InvalidParams("threshold a must be positive")
    return np.flatnonzero(report.flags(a, eta))


def quick_ratio(F: DyadicPath, report: ModulusReport | None = None, j_min: int | None = None) -> np.ndarray:
    """R_F(x) / (2 sqrt(F(x))) where F > 0, and 0 elsewhere."""
    if report is None:
        report = modulus_scan(F, j_min)
    v = np.asarray(F.values, float)
    out = np.zeros(v.size)
    pos = v > 0
    out[pos] = report.ratio[pos] / (2.0 * np.sqrt(v[pos]))
    return out


def quick_points(F: DyadicPath, a: float, eta: float = DEFAULT_ETA, j_min: int | None = None) -> np.ndarray:
    """Grid indices with F(x) > 0 and R_F(x) >= 2 a (1 - eta) sqrt(F(x))."""
    if np.any(np.asarray(F.values) < 0):
        raise InvalidParams("quick points need a nonnegative path")
    report = modulus_scan(F, j_min)
    v = np.asarray(F.values, float)
    mask = (v > 0) & (report.ratio >= 2.0 * a * (1.0 - eta) * np.sqrt(v))
    return np.flatnonzero(mask)


# ---------------------------------------------------------------------------
# Box counting


@dataclass(frozen=True)
class DimensionEstimate:
    a: float
    eta: float
    levels: np.ndarray
    counts: np.ndarray
    slope: float
    stderr: float

    def as_dict(self) -> dict:
        return {
            "a": self.a,
            "eta": self.eta,
            "levels": [int(j) for j in self.levels],
            "counts": [int(c) for c in self.counts],
            "slope": self.slope,
            "stderr": self.stderr,
        }


def box_counts(flags: np.ndarray, J: int, levels) -> np.ndarray:
    """Number of level-j dyadic boxes containing a flagged grid point.

    Grid point i lies in box floor(i / 2^(J-j)); the right endpoint joins the last box.
    """
    idx = np.flatnonzero(flags)
    n = flags.size - 1
    idx = np.minimum(idx, n - 1)
    return np.array([np.unique(idx >> (J - int(j))).size for j in levels])


def dimension_estimate(F: DyadicPath, a: float, eta: float = DEFAULT_ETA, box_levels=None) -> DimensionEstimate:
    """Log-log slope of box counts of the a-fast set over levels [8, J - 4].

    At level j a box of width length 2^-j is counted when it holds a grid point
    whose ratio at that same scale reaches a (1 - eta). Matching the box to the
    scale keeps finer-scale fast points from filling every coarse box.
    """
    if not 0 < a < 1:
        raise InvalidParams("dimension estimates need 0 < a < 1")
    J = F.level
    levels = np.arange(BOX_J_LO, J - BOX_J_OFFSET + 1) if box_levels is None else np.asarray(box_levels)
    if levels.size < 3:
        raise InsufficientScales(f"level {J} leaves {levels.size} box-counting scales, need 3")
    values = np.asarray(F.values, float)
    thr = a * (1.0 - eta)
    counts = np.array([box_counts(scale_ratio(values, J, F.length, j) >= thr, J, [j])[0] for j in levels])
    if np.any(counts == 0):
        return DimensionEstimate(a, eta, levels, counts, float("nan"), float("nan"))
    fit = stats.linregress(levels * math.log(2.0), np.log(counts))
    return DimensionEstimate(a, eta, levels, counts, float(fit.slope), float(fit.stderr))


# ---------------------------------------------------------------------------
# Dominance tests


@dataclass(frozen=True, eq=False)
class DominanceReport:
    """One-sided Mann-Whitney comparison of a statistic at selected vs random points."""

    name: str
    selected: np.ndarray
    random: np.ndarray
    u_statistic: float
    p_value: float
    details: dict = field(default_factory=dict)

    def passed(self, alpha: float) -> bool:
        return bool(self.p_value < alpha)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "n": int(self.selected.size),
            "u_statistic": self.u_statistic,
            "p_value": self.p_value,
            "selected_mean": float(np.mean(self.selected)),
            "random_mean": float(np.mean(self.random)),
            "selected": [float(x) for x in self.selected],
            "random": [float(x) for x in self.random],
            **self.details,
        }


def _mann_whitney(x, y):
    res = stats.mannwhitneyu(x, y, alternative="greater")
    return float(res.statistic), float(res.pvalue)


def lemma1_pair(F1: DyadicPath, F2: DyadicPath, gen, j_min: int | None = None) -> dict:
    """Quick-ratio of F2 at the quick-ratio maximiser of F1 + F2 and at a random overlap point."""
    v1 = np.asarray(F1.values, float)
    v2 = np.asarray(F2.values, float)
    if v1.shape != v2.shape:
        raise InvalidParams("paths must share a grid")
    overlap = np.flatnonzero((v1 > 0) & (v2 > 0))
    if overlap.size == 0:
        raise EmptyOverlap("no grid point where both paths are positive")
    F = F1 + F2
    rF = modulus_scan(F, j_min)
    r1 = modulus_scan(F1, j_min)
    r2 = modulus_scan(F2, j_min)
    qF = quick_ratio(F, rF)
    q2 = quick_ratio(F2, r2)
    star = int(overlap[np.argmax(qF[overlap])])  # argmax returns the first maximiser
    rand = int(overlap[gen.integers(overlap.size)])
    slack = np.max(rF.ratio - r1.ratio - r2.ratio)
    return {
        "star": star,
        "random": rand,
        "at_star": float(q2[star]),
        "at_random": float(q2[rand]),
        "sum_ratio_at_star": float(qF[star]),
        "triangle_slack": float(slack),
    }


def lemma1_test(pairs, rng=None, j_min: int | None = None) -> DominanceReport:
    """Does F2's quick-ratio at quick points of F1 + F2 dominate its value at random points?

    ``pairs`` is an iterable of independent (F1, F2) nonnegative paths.
    """
    gen = as_generator(rng)
    rows = [lemma1_pair(F1, F2, gen, j_min) for F1, F2 in pairs]
    if not rows:
        raise InvalidParams("no replicas")
    at_star = np.array([r["at_star"] for r in rows])
    at_random = np.array([r["at_random"] for r in rows])
    u, p = _mann_whitney(at_star, at_random)
    details = {
        "stars": [r["star"] for r in rows],
        "max_triangle_slack": max(r["triangle_slack"] for r in rows),
    }
    return DominanceReport("lemma1", at_star, at_random, u, p, details)


def top_k(ratio: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest ratios; ties go to the smaller index."""
    order = np.lexsort((np.arange(ratio.size), -ratio))
    return order[:k]


def warmup_pair(B: DyadicPath, Bp: DyadicPath, gen, k: int = 10, tau0: float = 0.5,
                j_min: int | None = None) -> dict:
    Z = (B + Bp).scaled(1.0 / math.sqrt(2.0))
    rZ = modulus_scan(Z, j_min).ratio
    rB = modulus_scan(B, j_min).ratio
    rBp = modulus_scan(Bp, j_min).ratio
    top = top_k(rZ, k)
    rand = gen.integers(rZ.size, size=k)
    both = (rB >= tau0) & (rBp >= tau0)
    return {"top": top, "top_rate": float(both[top].mean()), "random_rate": float(both[rand].mean())}


def warmup_test(pairs, k: int = 10, tau0: float = 0.5, rng=None, j_min: int | None = None) -> DominanceReport:
    """At the top-k modulus points of Z = (B + B')/sqrt(2), are both B and B' fast more often than at random points?"""
    gen = as_generator(rng)
    rows = [warmup_pair(B, Bp, gen, k, tau0, j_min) for B, Bp in pairs]
    if not rows:
        raise InvalidParams("no replicas")
    top = np.array([r["top_rate"] for r in rows])
    rand = np.array([r["random_rate"] for r in rows])
    u, p = _mann_whitney(top, rand)
    return DominanceReport("warmup", top, rand, u, p, {"k": k, "tau0": tau0})
