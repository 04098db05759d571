"""Transient cable graphs, their vertex jump chain and vertex Green matrix.

Lengths are in natural-scale units: Brownian motion on an edge has generator
one half times the second derivative, and local time is the occupation density
with respect to length. With that convention the Green matrix is twice the
inverse of the Dirichlet conductance Laplacian (conductance = 1/length).
"""

from __future__ import annotations

import hashlib
import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import dijkstra

from .errors import GraphError, NotTransient, SelfLoop, SingularSystem, ZeroLength

__all__ = [
    "Edge",
    "CableGraph",
    "JumpChain",
    "GreenMatrix",
    "build_graph",
    "parse_graph_text",
    "read_graph",
    "graph_to_text",
    "jump_chain",
    "green_matrix",
    "spectral_radius",
]

POWER_TOL = 1e-10
POWER_MAX_ITER = 100_000


@dataclass(frozen=True)
class Edge:
    u: Hashable
    v: Hashable
    length: float

    def other(self, x):
        return self.v if x == self.u else self.u


@dataclass(frozen=True, eq=False)
class CableGraph:
    """Validated cable graph. Construct with :func:`build_graph`."""

    interior: tuple
    boundary: frozenset
    edges: tuple[Edge, ...]
    index: dict = field(repr=False)
    incident: dict = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.interior)

    def degree(self, x) -> int:
        return len(self.incident.get(x, ()))

    def is_boundary(self, x) -> bool:
        return x in self.boundary

    @cached_property
    def conductance(self) -> np.ndarray:
        """Interior-to-interior conductance matrix (parallel edges summed)."""
        W = np.zeros((self.n, self.n))
        for e in self.edges:
            if e.u in self.index and e.v in self.index:
                i, j = self.index[e.u], self.index[e.v]
                W[i, j] += 1.0 / e.length
                W[j, i] += 1.0 / e.length
        return W

    @cached_property
    def total_conductance(self) -> np.ndarray:
        """Sum of 1/length over all edges at each interior vertex, boundary edges included."""
        D = np.zeros(self.n)
        for e in self.edges:
            for x in (e.u, e.v):
                if x in self.index:
                    D[self.index[x]] += 1.0 / e.length
        return D

    @cached_property
    def laplacian(self) -> np.ndarray:
        return np.diag(self.total_conductance) - self.conductance

    @cached_property
    def distances(self) -> np.ndarray:
        """Shortest-path (cable metric) distances between interior vertices."""
        ids = list(self.interior) + sorted(self.boundary - set(self.interior), key=str)
        pos = {x: i for i, x in enumerate(ids)}
        A = np.full((len(ids), len(ids)), np.inf)
        for e in self.edges:
            i, j = pos[e.u], pos[e.v]
            A[i, j] = A[j, i] = min(A[i, j], e.length)
        A[np.isinf(A)] = 0.0
        d = dijkstra(A, directed=False)
        return d[: self.n, : self.n]

    def edges_between(self, x, y) -> list[int]:
        return [k for k in self.incident.get(x, ()) if self.edges[k].other(x) == y]

    @cached_property
    def text(self) -> str:
        return graph_to_text(self)

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class JumpChain:
    P: np.ndarray
    rho: float

    @property
    def killing(self) -> np.ndarray:
        return 1.0 - self.P.sum(axis=1)


@dataclass(frozen=True)
class GreenMatrix:
    G: np.ndarray
    normalization: str = "local-time density w.r.t. length, generator (1/2) d^2/dx^2"

    def __getitem__(self, item):
        return self.G[item]

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.G).copy()


def build_graph(edges: Iterable[Sequence], boundary: Iterable[Hashable] = ()) -> CableGraph:
    """Validate an edge list and boundary set into a :class:`CableGraph`.

    ``edges`` holds ``(u, v, length)`` triples. Interior vertices are all edge
    endpoints not listed in ``boundary``, in order of first appearance.
    """
    boundary = frozenset(boundary)
    edge_list = []
    interior = []
    seen = set()
    for item in edges:
        try:
            u, v, length = item
        except (TypeError, ValueError):
            raise GraphError(f"malformed edge {item!r}; expected (u, v, length)") from None
        length = float(length)
        if u == v:
            raise SelfLoop(f"edge {u!r}-{v!r} is a self-loop")
        if not (length > 0.0) or not np.isfinite(length):
            raise ZeroLength(f"edge {u!r}-{v!r} has length {length!r}")
        edge_list.append(Edge(u, v, length))
        for x in (u, v):
            if x not in boundary and x not in seen:
                seen.add(x)
                interior.append(x)
    if not interior:
        raise GraphError("graph has no interior vertex")

    index = {x: i for i, x in enumerate(interior)}
    incident: dict = {}
    for k, e in enumerate(edge_list):
        incident.setdefault(e.u, []).append(k)
        incident.setdefault(e.v, []).append(k)
    incident = {x: tuple(ks) for x, ks in incident.items()}

    # Transience: every interior vertex must reach the boundary.
    reached = set()
    queue = deque(x for x in boundary if x in incident)
    reached.update(queue)
    while queue:
        x = queue.popleft()
        for k in incident.get(x, ()):
            y = edge_list[k].other(x)
            if y not in reached:
                reached.add(y)
                queue.append(y)
    stranded = [x for x in interior if x not in reached]
    if stranded:
        raise NotTransient(f"no boundary reachable from {stranded[:5]!r}")

    return CableGraph(tuple(interior), boundary, tuple(edge_list), index, incident)


_TOKEN = re.compile(r"\S+")


def _coerce_id(tok: str):
    return int(tok) if re.fullmatch(r"-?\d+", tok) else tok


def parse_graph_text(text: str) -> CableGraph:
    """Parse the line format ``u v length`` with a ``boundary ...`` header line.

    ``#`` starts a comment. Integer-looking ids become ints.
    """
    boundary: list = []
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = _TOKEN.findall(line)
        if toks[0].lower().rstrip(":") == "boundary":
            boundary.extend(_coerce_id(t) for t in toks[1:])
            continue
        if len(toks) != 3:
            raise GraphError(f"line {lineno}: expected 'u v length', got {line!r}")
        try:
            length = float(toks[2])
        except ValueError:
            raise GraphError(f"line {lineno}: bad length {toks[2]!r}") from None
        edges.append((_coerce_id(toks[0]), _coerce_id(toks[1]), length))
    return build_graph(edges, boundary)


def read_graph(path) -> CableGraph:
    return parse_graph_text(Path(path).read_text(encoding="utf-8"))


def graph_to_text(g: CableGraph) -> str:
    lines = ["boundary " + " ".join(str(b) for b in sorted(g.boundary, key=str))]
    lines += [f"{e.u} {e.v} {e.length!r}" for e in g.edges]
    return "\n".join(lines) + "\n"


def spectral_radius(P: np.ndarray, D: np.ndarray | None = None) -> float:
    """Spectral radius of a reversible substochastic matrix by power iteration.

    Iterates the lazy symmetrized matrix (I + S)/2, S = D^1/2 P D^-1/2, whose top
    eigenvalue is (1 + rho)/2, and reads it off a Rayleigh quotient.
    """
    n = P.shape[0]
    if n == 0 or not P.any():
        return 0.0
    if D is None:
        S = P
    else:
        r = np.sqrt(D)
        S = (r[:, None] * P) / r[None, :]
        S = 0.5 * (S + S.T)
    x = np.ones(n) / np.sqrt(n)
    mu = 0.0
    for _ in range(POWER_MAX_ITER):
        y = 0.5 * (x + S @ x)
        mu_new = float(x @ y)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
        if abs(mu_new - mu) <= POWER_TOL * abs(mu_new):
            mu = mu_new
            break
        mu = mu_new
    return max(0.0, 2.0 * mu - 1.0)


def jump_chain(g: CableGraph) -> JumpChain:
    D = g.total_conductance
    P = g.conductance / D[:, None]
    rho = spectral_radius(P, D)
    if not rho < 1.0:
        raise SingularSystem(f"jump chain spectral radius {rho} is not < 1")
    return JumpChain(P, rho)


def green_matrix(g: CableGraph) -> GreenMatrix:
    L = g.laplacian
    try:
        factor = scipy.linalg.cho_factor(L, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"Dirichlet Laplacian is not positive definite: {exc}") from None
    G = scipy.linalg.cho_solve(factor, 2.0 * np.eye(g.n))
    G = 0.5 * (G + G.T)
    resid = np.linalg.norm(L @ G - 2.0 * np.eye(g.n)) / (2.0 * np.sqrt(g.n))
    if not resid <= 1e-10:
        raise SingularSystem(f"Green solve residual {resid:.3e} too large")
    return GreenMatrix(G)
