"""Discrete skeleton of the cable-graph loop soup and its vertex occupation field.

Intensity ``c`` multiplies the loop measure; Poisson means use ``c / 2``.
Every visit of a loop to vertex ``x`` contributes an exponential holding time
of mean ``2 / D(x)``, with ``D(x)`` the total conductance at ``x``. Loops that
never jump between vertices contribute an independent
``Gamma(c / 2, scale = 2 / D(x))`` at each vertex. With these constants the
field's vertex marginals are ``Gamma(c / 2, scale = G(x, x))``.

Soups are sampled in unit-intensity layers, each with its own keyed stream,
so the soup of intensity ``c`` is a sub-collection of the soup of any larger
intensity drawn from the same root stream.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np

from .cable_graph import CableGraph, JumpChain, green_matrix, jump_chain
from .errors import InvalidIntensity, SingularSystem, TruncationTooTight
from .rng import RngStream, as_generator

__all__ = [
    "SoupConfig",
    "DiscreteLoop",
    "VertexField",
    "Soup",
    "loop_measure_mass",
    "sample_loops",
    "sample_soup",
    "loop_vertex_local_times",
    "sample_vertex_field",
    "canonical_rotation",
    "loop_tables",
]

TAIL_REL = 1e-9
RHO_POWER = 1e-12


def _check_intensity(c):
    c = float(c)
    if not (math.isfinite(c) and c >= 0):
        raise InvalidIntensity(f"intensity must be a non-negative finite number, got {c!r}")
    return c


@dataclass(frozen=True)
class SoupConfig:
    c: float
    window: tuple | None = None  # interior vertex ids; None means all
    eps: float = 0.0
    n_max: int | None = None

    def __post_init__(self):
        c = _check_intensity(self.c)
        if c == 0:
            raise InvalidIntensity("soup intensity must be positive")
        if self.eps < 0:
            raise InvalidIntensity("diameter floor must be non-negative")


def canonical_rotation(seq: Iterable[int]) -> tuple:
    seq = tuple(seq)
    return min(seq[i:] + seq[:i] for i in range(len(seq)))


@dataclass(frozen=True)
class DiscreteLoop:
    """Unrooted loop as the lexicographically minimal rotation of its vertex indices."""

    vertices: tuple
    origin: tuple = field(default=(), compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", canonical_rotation(self.vertices))

    def __len__(self):
        return len(self.vertices)

    @property
    def multiplicity(self) -> int:
        n = len(self.vertices)
        for p in range(1, n + 1):
            if n % p == 0 and self.vertices == self.vertices[p:] + self.vertices[:p]:
                return n // p
        return 1

    def labels(self, g: CableGraph) -> tuple:
        return tuple(g.interior[i] for i in self.vertices)

    def jumps(self):
        v = self.vertices
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]

    def crossings(self) -> Counter:
        """Number of traversals of each unordered vertex pair."""
        return Counter(tuple(sorted(p)) for p in self.jumps())

    def support(self) -> frozenset:
        return frozenset(self.vertices)

    def diameter(self, g: CableGraph) -> float:
        idx = sorted(self.support())
        return float(g.distances[np.ix_(idx, idx)].max())

    def is_valid(self, g: CableGraph) -> bool:
        W = g.conductance
        return all(W[u, w] > 0 for u, w in self.jumps())


@dataclass(frozen=True, eq=False)
class VertexField:
    ids: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, float)
        object.__setattr__(self, "values", v)
        if v.shape != (len(self.ids),):
            raise ValueError("one value per vertex required")
        if (v < 0).any():
            raise ValueError("occupation values must be non-negative")

    def __getitem__(self, vertex):
        return self.values[self.ids.index(vertex)]

    def __add__(self, other: "VertexField") -> "VertexField":
        if self.ids != other.ids:
            raise ValueError("fields live on different vertex sets")
        return VertexField(self.ids, self.values + other.values)

    def as_dict(self) -> dict:
        return dict(zip(self.ids, self.values.tolist()))

    @classmethod
    def zeros(cls, g: CableGraph) -> "VertexField":
        return cls(g.interior, np.zeros(g.n))


def loop_measure_mass(P) -> float:
    """Total mass -log det(I - P) of the discrete unrooted loop measure."""
    P = P.P if isinstance(P, JumpChain) else np.asarray(P, float)
    n = P.shape[0]
    if n == 0 or not P.any():
        return 0.0
    sign, logdet = np.linalg.slogdet(np.eye(n) - P)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularSystem("I - P is singular or not positive")
    return float(-logdet)


@dataclass(frozen=True, eq=False)
class _Tables:
    P: np.ndarray
    rho: float
    mass: float
    n_max: int
    length_pmf: np.ndarray  # index n -> probability, n = 0..n_max
    root_pmf: np.ndarray  # (n_max + 1, |V|)


@lru_cache(maxsize=32)
def loop_tables(g: CableGraph, n_max: int | None = None) -> _Tables:
    chain = jump_chain(g)
    P = chain.P
    D = g.total_conductance
    mass = loop_measure_mass(P)
    r = np.sqrt(D)
    S = (r[:, None] * P) / r[None, :]
    lam, U = np.linalg.eigh(0.5 * (S + S.T))
    rho = float(np.abs(lam).max()) if lam.size else 0.0
    if n_max is None:
        n_max = 2 if rho <= 0 else max(2, math.ceil(math.log(RHO_POWER) / math.log(rho)))
    powers = lam[None, :] ** np.arange(n_max + 1)[:, None]  # (n_max+1, k)
    diag = np.clip(powers @ (U**2).T, 0.0, None)  # (P^n)_xx
    diag[0] = 0.0
    diag[1] = 0.0  # no self-loop edges, so no one-step loops
    traces = diag.sum(axis=1)
    weights = np.zeros(n_max + 1)
    weights[1:] = traces[1:] / np.arange(1, n_max + 1)
    if mass > 0:
        a = np.abs(lam)
        tail = float(np.sum(a ** (n_max + 1) / ((n_max + 1) * (1 - a))))
        if tail > TAIL_REL * mass:
            raise TruncationTooTight(f"tail mass {tail:.3e} above n_max={n_max} exceeds {TAIL_REL} of {mass:.3e}")
    total = weights.sum()
    length_pmf = weights / total if total > 0 else weights
    with np.errstate(invalid="ignore", divide="ignore"):
        root_pmf = np.where(traces[:, None] > 0, diag / traces[:, None], 0.0)
    return _Tables(P, rho, mass, n_max, length_pmf, root_pmf)


def _draw_rooted_loop(tables: _Tables, gen: np.random.Generator) -> tuple:
    P = tables.P
    n = int(gen.choice(tables.length_pmf.size, p=tables.length_pmf))
    x = int(gen.choice(P.shape[0], p=tables.root_pmf[n]))
    # cols[m] = P^m e_x, the probability of reaching x in exactly m steps
    cols = np.empty((n, P.shape[0]))
    cols[0] = 0.0
    cols[0, x] = 1.0
    for m in range(1, n):
        cols[m] = P @ cols[m - 1]
    seq = [x]
    u = x
    for k in range(n - 1):
        w = P[u] * cols[n - k - 1]
        u = int(gen.choice(w.size, p=w / w.sum()))
        seq.append(u)
    return tuple(seq)


def _as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(int(as_generator(rng).integers(2**63)))


def sample_loops(g: CableGraph, cfg: SoupConfig, rng) -> list[DiscreteLoop]:
    """Poisson collection of discrete loops with mean count (c/2) * mass."""
    stream = _as_stream(rng)
    tables = loop_tables(g, cfg.n_max)
    loops = []
    if tables.mass == 0:
        return loops
    for layer in range(math.ceil(cfg.c)):
        layer_stream = stream.child("layer", layer)
        gen = layer_stream.child("count").generator
        count = int(gen.poisson(tables.mass / 2.0))
        labels = gen.random(count)
        keep_below = min(1.0, cfg.c - layer)
        for i in range(count):
            if labels[i] >= keep_below:
                continue
            seq = _draw_rooted_loop(tables, layer_stream.child("loop", i).generator)
            loops.append(DiscreteLoop(seq, origin=(layer, i)))
    return loops


def loop_vertex_local_times(loop: DiscreteLoop, g: CableGraph, rng) -> VertexField:
    """Sum of independent exponential holding contributions, one per visit."""
    gen = as_generator(rng)
    D = g.total_conductance
    visits = np.asarray(loop.vertices)
    holds = gen.standard_exponential(visits.size) * (2.0 / D[visits])
    values = np.bincount(visits, weights=holds, minlength=g.n)
    return VertexField(g.interior, values)


def _times_stream(stream: RngStream, loop: DiscreteLoop) -> RngStream:
    return stream.child("times", *loop.origin)


def _trivial_field(g: CableGraph, c: float, stream: RngStream) -> np.ndarray:
    D = g.total_conductance
    out = np.zeros(g.n)
    for layer in range(math.ceil(c)):
        shape = min(1.0, c - layer) / 2.0
        out += stream.child("layer", layer, "trivial").generator.gamma(shape, 2.0 / D)
    return out


@dataclass(frozen=True, eq=False)
class Soup:
    graph: CableGraph
    config: SoupConfig
    loops: list
    local_times: list  # VertexField per loop
    trivial: VertexField
    mass: float
    seed: int | None = None
    stream: str = ""

    def field(self) -> VertexField:
        total = self.trivial.values.copy()
        for lt in self.local_times:
            total += lt.values
        return VertexField(self.graph.interior, total)

    def in_window(self, loop: DiscreteLoop) -> bool:
        window = self.config.window
        if window is None:
            return True
        idx = {self.graph.index[x] for x in window}
        return bool(idx & loop.support())

    def ordered(self) -> list[int]:
        """Indices of window-meeting loops above the diameter floor, by decreasing diameter."""
        keyed = []
        for k, loop in enumerate(self.loops):
            if not self.in_window(loop):
                continue
            diam = loop.diameter(self.graph)
            if diam > self.config.eps:
                keyed.append((-diam, loop.vertices, k))
        keyed.sort()
        return [k for _, _, k in keyed]

    def count_above(self, eps: float) -> int:
        return sum(1 for loop in self.loops if self.in_window(loop) and loop.diameter(self.graph) > eps)

    def to_jsonl(self) -> str:
        header = {
            "config": {"c": self.config.c, "window": list(self.config.window) if self.config.window else None,
                       "eps": self.config.eps, "n_max": loop_tables(self.graph, self.config.n_max).n_max},
            "seed": self.seed,
            "stream": self.stream,
            "mass": self.mass,
            "graph_sha256": self.graph.digest,
            "trivial": [float(v) for v in self.trivial.values],
        }
        lines = [json.dumps(header, sort_keys=True)]
        for loop, lt in zip(self.loops, self.local_times):
            lines.append(json.dumps({
                "cycle": [_jsonable(x) for x in loop.labels(self.graph)],
                "local_times": {str(self.graph.interior[i]): float(lt.values[i]) for i in sorted(loop.support())},
                "origin": list(loop.origin),
            }, sort_keys=True))
        return "\n".join(lines) + "\n"


def _jsonable(x):
    return x if isinstance(x, (int, str)) else str(x)


def sample_soup(g: CableGraph, cfg: SoupConfig, rng) -> Soup:
    stream = _as_stream(rng)
    loops = sample_loops(g, cfg, stream)
    times = [loop_vertex_local_times(loop, g, _times_stream(stream, loop)) for loop in loops]
    trivial = VertexField(g.interior, _trivial_field(g, cfg.c, stream))
    mass = loop_tables(g, cfg.n_max).mass
    return Soup(g, cfg, loops, times, trivial, mass, stream.seed, stream.key_string())


def sample_vertex_field(g: CableGraph, c: float, rng, route: str = "auto") -> VertexField:
    """Occupation field at the vertices.

    ``route="gff"`` (integer ``c`` only) sums ``c`` independent squared Gaussian
    fields of covariance ``G`` halved; ``route="loops"`` builds the soup.
    ``"auto"`` picks the Gaussian route whenever ``c`` is an integer.
    """
    c = _check_intensity(c)
    if c == 0:
        return VertexField.zeros(g)
    integer = float(c).is_integer()
    if route == "auto":
        route = "gff" if integer else "loops"
    if route == "gff":
        if not integer:
            raise InvalidIntensity("the Gaussian route needs an integer intensity")
        gen = as_generator(rng)
        L = np.linalg.cholesky(green_matrix(g).G)
        phi = L @ gen.standard_normal((g.n, int(c)))
        return VertexField(g.interior, 0.5 * (phi**2).sum(axis=1))
    if route == "loops":
        return sample_soup(g, SoupConfig(c), rng).field()
    raise ValueError(f"unknown route {route!r}")
