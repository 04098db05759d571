"""Local-time profiles of reflected Brownian motion at inverse local times.

Profiles come from the reflected simple random walk of ``stoch_core`` (mesh
sqrt(step), time step ``step``), so comparisons with BESQ^0 laws are genuine
checks of the Ray-Knight identity rather than restatements of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .errors import EmptyOverlap, InvalidParams, StepTooCoarse
from .modulus import DominanceReport, default_j_min, lemma1_test
from .rng import RngStream, as_generator
from .stoch_core import (
    StopRule,
    DyadicPath,
    besq_transition_logpdf,
    besq_zero_mass,
    crossing_counts,
    reflected_bm_with_local_time,
)

__all__ = [
    "LocalTimeProfile",
    "ExcursionField",
    "profile_at_inverse_local_time",
    "layered_profiles",
    "layered_profile_batch",
    "excursion_field",
    "excursion_counts",
    "proposition2_statistic",
    "besq0_cdf",
    "randomized_pit",
    "ray_knight_test",
]

MAX_STEP = 1e-3


def _check_step(step):
    if not step > 0:
        raise InvalidParams("step must be positive")
    if step > MAX_STEP:
        raise StepTooCoarse(f"step {step} exceeds {MAX_STEP}")


@dataclass(frozen=True, eq=False)
class LocalTimeProfile:
    """Occupation density x -> l_tau(h)(x) on the grid k * mesh."""

    mesh: float
    values: np.ndarray
    h: float
    tau: float

    @property
    def grid(self) -> np.ndarray:
        return self.mesh * np.arange(self.values.size)

    @property
    def cell_widths(self) -> np.ndarray:
        w = np.full(self.values.size, self.mesh)
        w[0] = self.mesh / 2.0
        return w

    def integral(self) -> float:
        return float(self.values @ self.cell_widths)

    def value_at(self, x: float) -> float:
        k = x / self.mesh
        i = int(math.floor(k))
        if i + 1 >= self.values.size:
            return float(self.values[i]) if i < self.values.size and k == i else 0.0
        w = k - i
        return float((1.0 - w) * self.values[i] + w * self.values[i + 1])

    def padded(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        m = min(n, self.values.size)
        out[:m] = self.values[:m]
        return out

    def to_path(self, J: int) -> DyadicPath:
        """First 2^J + 1 grid values as a nonnegative path on [0, 2^J mesh]."""
        return DyadicPath(0.0, 2**J * self.mesh, J, self.padded(2**J + 1), "nonnegative")


@dataclass(frozen=True, eq=False)
class ExcursionField:
    """Excursion profiles indexed by the local time at 0 when they start.

    ``profiles[i]`` is the increment of l_tau over local times
    [coords[i], coords[i] + width): one excursion of the walk when the width
    is a single excursion's share 2 * mesh.
    """

    mesh: float
    coords: np.ndarray
    profiles: list
    width: float
    h_max: float

    def heights(self) -> np.ndarray:
        """Largest grid position where each profile is positive."""
        return np.array([self.mesh * (np.flatnonzero(p)[-1] if p.any() else 0) for p in self.profiles])

    def count_reaching(self, m: float) -> int:
        return int(np.sum(self.heights() >= m - 1e-12))


def _levels_to_excursions(levels, mesh) -> np.ndarray:
    M = np.rint(np.asarray(levels, float) / (2.0 * mesh)).astype(np.int64)
    return M


def _departures(entry, level, count, n_entries, M_layers, n_nodes=None):
    """Departure counts per node from COO upcrossing counts, plus total steps.

    Nodes beyond ``n_nodes`` are dropped from the dense array (profiles of
    rare runs reach very far) but still enter the step totals.
    """
    top = int(level.max()) + 2 if level.size else 2
    width = top if n_nodes is None else n_nodes
    keep = level <= width
    U = np.zeros((n_entries, width + 1), dtype=np.int64)
    U[entry[keep], level[keep]] = count[keep]
    dep = np.zeros((n_entries, width), dtype=np.int64)
    dep[:, 0] = M_layers
    dep[:, 1:] = U[:, 1:width] + U[:, 2:width + 1]
    # each upcrossing of edge (k-1, k) is matched by one downcrossing; U_1 counts the departures from 0
    totals = 2 * np.bincount(entry, weights=count, minlength=n_entries).astype(np.int64)
    return dep, totals


def _to_local_time(dep, mesh, step):
    lt = dep * (step / mesh)
    lt[..., 0] *= 2.0
    return lt


def profile_at_inverse_local_time(h: float, step: float, rng) -> LocalTimeProfile:
    """l_tau(h) for reflected Brownian motion from 0, via the random walk."""
    _check_step(step)
    if h < 0:
        raise InvalidParams("h must be non-negative")
    run = reflected_bm_with_local_time(step, StopRule.inverse_local_time(h), rng)
    return LocalTimeProfile(run.mesh, run.local_time, float(h), run.elapsed)


def layered_profile_batch(h_levels, step: float, replicas: int, rng, n_nodes: int | None = None):
    """Cumulative profiles of many independent runs at several inverse local times.

    Returns ``(mesh, profiles, taus)`` with ``profiles[r, j]`` the profile of
    run ``r`` at tau(h_j) on its first ``n_nodes`` grid nodes and
    ``taus[r, j]`` the matching elapsed times.
    """
    _check_step(step)
    h_levels = np.asarray(h_levels, float)
    if h_levels.ndim != 1 or h_levels.size == 0 or np.any(h_levels <= 0) or np.any(np.diff(h_levels) <= 0):
        raise InvalidParams("levels must be positive and strictly increasing")
    mesh = math.sqrt(step)
    M = _levels_to_excursions(h_levels, mesh)
    if M[0] < 1 or np.any(np.diff(M) < 1):
        raise StepTooCoarse(f"mesh {mesh} cannot separate levels {h_levels.tolist()}")
    layers = np.diff(np.concatenate(([0], M)))
    gen = as_generator(rng)
    L = layers.size
    starts = np.tile(layers, replicas)  # entry r * L + j is layer j of run r
    entry, level, count = crossing_counts(starts, gen)
    dep, totals = _departures(entry, level, count, replicas * L, starts, n_nodes)
    dep = dep.reshape(replicas, L, -1).cumsum(axis=1)
    taus = totals.reshape(replicas, L).cumsum(axis=1) * step
    return mesh, _to_local_time(dep.astype(float), mesh, step), taus


def layered_profiles(h_levels, step: float, rng) -> list:
    """One run snapshotted at tau(h_1) < tau(h_2) < ...; increments are independent BESQ^0."""
    mesh, prof, taus = layered_profile_batch(h_levels, step, 1, rng)
    return [LocalTimeProfile(mesh, prof[0, j], float(h), float(taus[0, j])) for j, h in enumerate(h_levels)]


def excursion_field(h_max: float, delta_h: float | None, step: float, rng, min_height: float = 0.0) -> ExcursionField:
    """Increments of l_tau over local-time windows of width about ``delta_h`` on [0, h_max].

    Windows hold ``max(1, round(delta_h / (2 mesh)))`` whole excursions. Only
    windows whose profile reaches ``min_height`` are kept.
    """
    _check_step(step)
    if not h_max > 0:
        raise InvalidParams("h_max must be positive")
    delta_h = 1e-3 * h_max if delta_h is None else float(delta_h)
    if not delta_h > 0:
        raise InvalidParams("delta_h must be positive")
    mesh = math.sqrt(step)
    M = int(_levels_to_excursions([h_max], mesh)[0])
    per = max(1, int(round(delta_h / (2.0 * mesh))))
    n_win = -(-M // per)
    starts = np.full(n_win, per, dtype=np.int64)
    starts[-1] = M - per * (n_win - 1)
    gen = as_generator(rng)
    entry, level, count = crossing_counts(starts, gen)
    dep, _ = _departures(entry, level, count, n_win, starts)
    lt = _to_local_time(dep.astype(float), mesh, step)
    coords = 2.0 * mesh * per * np.arange(n_win)
    keep = [i for i in range(n_win) if mesh * (np.flatnonzero(lt[i])[-1]) >= min_height - 1e-12]
    return ExcursionField(mesh, coords[keep], [lt[i] for i in keep], 2.0 * mesh * per, float(h_max))


def excursion_counts(h_max: float, m: float, step: float, runs: int, rng) -> np.ndarray:
    """Number of single excursions reaching height m before tau(h_max), for many runs."""
    _check_step(step)
    mesh = math.sqrt(step)
    M = int(_levels_to_excursions([h_max], mesh)[0])
    k = int(round(m / mesh))
    gen = as_generator(rng)
    entry, level, _ = crossing_counts(np.ones(runs * M, dtype=np.int64), gen, max_level=k)
    top = np.zeros(runs * M, dtype=np.int64)
    np.maximum.at(top, entry, level)
    return (top >= k).reshape(runs, M).sum(axis=1)


# ---------------------------------------------------------------------------
# Law checks


def besq0_cdf(y, x0: float, t: float):
    """CDF of BESQ^0 at time t from x0, atom at 0 included."""
    atom = besq_zero_mass(x0, t)
    y = np.atleast_1d(np.asarray(y, float))
    out = np.empty(y.size)
    f = lambda u: math.exp(besq_transition_logpdf(x0, u, t, 0.0))  # noqa: E731
    # integrate the continuous part on a sorted sweep
    order = np.argsort(y)
    acc, prev = atom, 0.0
    for i in order:
        yi = y[i]
        if yi < 0:
            out[i] = 0.0
            continue
        if yi > prev:
            acc += integrate.quad(f, prev, yi, limit=200, epsabs=1e-13)[0]
            prev = yi
        out[i] = min(acc, 1.0)
    return out


def randomized_pit(samples, cdf, lattice: float, rng) -> np.ndarray:
    """Uniform variates from lattice-valued samples of a mixed law.

    A sample value v stands for the cell (v - lattice/2, v + lattice/2]; the
    cell at 0 also holds the atom. U = F(lo) + V (F(hi) - F(lo)) is uniform
    when the continuous law is discretized by rounding to the lattice.
    """
    gen = as_generator(rng)
    x = np.asarray(samples, float)
    lo = np.where(x > 0, x - lattice / 2.0, -1.0)
    hi = np.where(x > 0, x + lattice / 2.0, lattice / 2.0)
    Flo = np.where(lo < 0, 0.0, cdf(np.maximum(lo, 0.0)))
    Fhi = cdf(hi)
    return Flo + gen.random(x.size) * (Fhi - Flo)


def ray_knight_test(h: float, x: float, step: float, replicas: int, rng) -> dict:
    """KS test of l_tau(h)(x) from the walk against the BESQ^0 law at time x from h."""
    stream = rng if isinstance(rng, RngStream) else None
    gen = as_generator(stream.child("walk") if stream else rng)
    k = int(round(x / math.sqrt(step)))
    mesh, prof, _ = layered_profile_batch([h], step, replicas, gen, n_nodes=k + 1)
    vals = prof[:, 0, k]
    # local time at an interior node is mesh * (number of departures); node k
    # is the midpoint of its cell, so the lattice is mesh wide
    ugen = as_generator(stream.child("pit") if stream else rng)
    u = randomized_pit(vals, lambda y: besq0_cdf(y, h, k * mesh), mesh, ugen)
    res = stats.kstest(u, "uniform")
    return {
        "h": h,
        "x": k * mesh,
        "step": step,
        "replicas": replicas,
        "ks_statistic": float(res.statistic),
        "p_value": float(res.pvalue),
        "mean": float(vals.mean()),
        "zero_fraction": float(np.mean(vals == 0)),
        "zero_mass_exact": besq_zero_mass(h, k * mesh),
    }


# ---------------------------------------------------------------------------
# Conditioned-profile statistic


def proposition2_statistic(h: float, l: float, step: float, J: int, replicas: int, rng,
                           j_min: int | None = None) -> DominanceReport:
    """Quick-ratio of X1 = l_tau(h) at near-quick points of l_tau(l) vs at random points.

    X2 = l_tau(l) - l_tau(h). Each replica is one walk run; profiles are read
    on the first 2^J + 1 nodes of the spatial grid.
    """
    if not 0 < h <= l:
        raise InvalidParams("need 0 < h <= l")
    if h == l:
        raise EmptyOverlap("h = l leaves X2 identically zero")
    stream = rng if isinstance(rng, RngStream) else None
    gen = as_generator(stream.child("walks") if stream else rng)
    n = 2**J + 1
    mesh, prof, _ = layered_profile_batch([h, l], step, replicas, gen, n_nodes=n)
    span = 2**J * mesh
    j_min = default_j_min(J, span) if j_min is None else j_min
    pairs = []
    for r in range(replicas):
        x1 = prof[r, 0]
        x2 = prof[r, 1] - prof[r, 0]
        pairs.append((DyadicPath(0.0, span, J, x2, "nonnegative"), DyadicPath(0.0, span, J, x1, "nonnegative")))
    tgen = as_generator(stream.child("test") if stream else rng)
    rep = lemma1_test(pairs, tgen, j_min=j_min)
    rep.details.update({"h": h, "l": l, "step": step, "J": J, "span": span, "j_min": j_min})
    return rep
