"""Occupation field on the whole cable graph, loop decomposition, and a
random-walk simulator of cable Brownian motion for cross-checks.

Edge profiles run from ``edge.u`` (position 0) to ``edge.v`` (position
``edge.length``); killed endpoints carry the value 0.

Per-loop edge profiles come from excursion theory. On an edge from x to y a
loop with local times a, b at the ends and k crossings of the edge leaves

    BESQ^0 bridge a -> 0  (excursions from x that turn back)
  + BESQ^0 bridge b -> 0  read from y
  + BESQ^(2k) bridge 0 -> 0  (the crossing strands)

and loops living inside edge interiors add a BESQ^c bridge 0 -> 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cable_graph import CableGraph
from .errors import EmptySoup, InvalidParams, StepTooCoarse
from .loop_soup import Soup, SoupConfig, VertexField, sample_soup, sample_vertex_field, _as_stream
from .rng import RngStream, as_generator
from .stoch_core import DyadicPath, besq_bridge

__all__ = [
    "OccupationField",
    "LoopDecomposition",
    "CableRun",
    "extend_to_edges",
    "resample_edge",
    "sample_field",
    "decorate_edges",
    "field_from_soup",
    "decompose_against_loop",
    "simulate_cable_bm",
]

DEFAULT_J = 16


@dataclass(frozen=True, eq=False)
class OccupationField:
    graph: CableGraph
    vertex: VertexField
    edges: tuple  # DyadicPath per graph edge, same order as graph.edges
    c: float
    J: int

    def __post_init__(self):
        if len(self.edges) != len(self.graph.edges):
            raise InvalidParams("one profile per edge required")
        for e, prof in zip(self.graph.edges, self.edges):
            if prof.values[0] != self.value_at(e.u) or prof.values[-1] != self.value_at(e.v):
                raise InvalidParams(f"edge {e.u}-{e.v} profile does not match its vertex values")
            if prof.values.min() < 0:
                raise InvalidParams("occupation profiles must be non-negative")

    def value_at(self, x) -> float:
        if x in self.graph.index:
            return float(self.vertex.values[self.graph.index[x]])
        return 0.0

    def edge_profile(self, u, v) -> DyadicPath:
        for k, e in enumerate(self.graph.edges):
            if (e.u, e.v) == (u, v):
                return self.edges[k]
            if (e.v, e.u) == (u, v):
                p = self.edges[k]
                return p.with_values(p.values[::-1])
        raise KeyError((u, v))

    def midpoint(self, k: int) -> float:
        p = self.edges[k]
        return float(p.values[p.n // 2])

    @property
    def min_value(self) -> float:
        return min(float(self.vertex.values.min(initial=0.0)), min(float(p.values.min()) for p in self.edges))


@dataclass(frozen=True, eq=False)
class LoopDecomposition:
    whole: OccupationField
    part: OccupationField
    rest: OccupationField
    loop: object
    soup: Soup

    def residuals(self) -> np.ndarray:
        """Per-grid-point |whole - part - rest| relative to max(|whole|, tiny)."""
        out = []
        w, p, r = self.whole, self.part, self.rest
        diff = np.abs(w.vertex.values - p.vertex.values - r.vertex.values)
        out.append(diff / np.maximum(np.abs(w.vertex.values), 1e-300))
        for pw, pp, pr in zip(w.edges, p.edges, r.edges):
            diff = np.abs(pw.values - pp.values - pr.values)
            out.append(diff / np.maximum(np.abs(pw.values), 1e-300))
        return np.concatenate(out)


def _stream(rng) -> RngStream:
    return _as_stream(rng)


def _edge_bridge(g, k, a, b, c, J, stream):
    e = g.edges[k]
    return besq_bridge(a, b, c, e.length, J, stream.child("edge", k))


def extend_to_edges(vf: VertexField, g: CableGraph, c: float, J: int, rng) -> OccupationField:
    """Fill every edge with an independent BESQ^c bridge between its end values."""
    if not c > 0:
        raise InvalidParams("intensity must be positive")
    stream = _stream(rng)
    vals = lambda x: float(vf.values[g.index[x]]) if x in g.index else 0.0  # noqa: E731
    profiles = tuple(_edge_bridge(g, k, vals(e.u), vals(e.v), c, J, stream) for k, e in enumerate(g.edges))
    return OccupationField(g, vf, profiles, float(c), J)


def resample_edge(field: OccupationField, k: int, rng) -> OccupationField:
    """Redraw the bridge on edge ``k`` only; all other profiles are kept as is."""
    g = field.graph
    e = g.edges[k]
    new = _edge_bridge(g, k, field.value_at(e.u), field.value_at(e.v), field.c, field.J, _stream(rng))
    edges = list(field.edges)
    edges[k] = new
    return OccupationField(g, field.vertex, tuple(edges), field.c, field.J)


def sample_field(g: CableGraph, c: float, J: int = DEFAULT_J, rng=None, route: str = "bridges",
                 vertex_route: str = "auto") -> OccupationField:
    """Occupation field Lambda_c on the whole cable graph.

    ``route="bridges"`` draws the vertex field and fills edges with BESQ^c
    bridges. ``route="loops"`` samples the soup and decorates every loop.
    """
    stream = _stream(rng)
    if route == "bridges":
        vf = sample_vertex_field(g, c, stream.child("vertices"), route=vertex_route)
        return extend_to_edges(vf, g, c, J, stream.child("edges"))
    if route == "loops":
        soup = sample_soup(g, SoupConfig(c), stream.child("soup"))
        return field_from_soup(soup, J, stream.child("decorate"))
    raise InvalidParams(f"unknown field route {route!r}")


def _crossings_by_edge(g: CableGraph, loops, gen) -> np.ndarray:
    counts = np.zeros(len(g.edges), dtype=np.int64)
    for loop in loops:
        for (i, j), n in sorted(loop.crossings().items()):
            ks = g.edges_between(g.interior[i], g.interior[j])
            if len(ks) == 1:
                counts[ks[0]] += n
            else:
                w = np.array([1.0 / g.edges[k].length for k in ks])
                counts[ks] += gen.multinomial(n, w / w.sum())
    return counts


def decorate_edges(g: CableGraph, vertex_values: np.ndarray, crossings: np.ndarray, c_interior: float,
                   J: int, rng) -> tuple:
    """Edge profiles of a collection of loops from end local times and crossing counts."""
    stream = _stream(rng)
    out = []
    for k, e in enumerate(g.edges):
        a = float(vertex_values[g.index[e.u]]) if e.u in g.index else 0.0
        b = float(vertex_values[g.index[e.v]]) if e.v in g.index else 0.0
        es = stream.child("edge", k)
        total = np.zeros(2**J + 1)
        if a > 0:
            total += besq_bridge(a, 0.0, 0.0, e.length, J, es.child("from_u")).values
        if b > 0:
            total += besq_bridge(b, 0.0, 0.0, e.length, J, es.child("from_v")).values[::-1]
        dim = c_interior + 2 * int(crossings[k])
        if dim > 0:
            total += besq_bridge(0.0, 0.0, dim, e.length, J, es.child("strands")).values
        total[0], total[-1] = a, b
        out.append(DyadicPath(0.0, e.length, J, total, "nonnegative"))
    return tuple(out)


def field_from_soup(soup: Soup, J: int, rng) -> OccupationField:
    g = soup.graph
    stream = _stream(rng)
    vf = soup.field()
    crossings = _crossings_by_edge(g, soup.loops, stream.child("assign").generator)
    edges = decorate_edges(g, vf.values, crossings, soup.config.c, J, stream)
    return OccupationField(g, vf, edges, soup.config.c, J)


def decompose_against_loop(g: CableGraph, c: float, J: int = DEFAULT_J, rng=None, window=None,
                           rank: int = 0) -> LoopDecomposition:
    """Split Lambda into one distinguished loop's profile and the rest.

    The distinguished loop is the ``rank``-th largest-diameter loop meeting the
    window (rank 0 is the largest). ``whole`` is assembled as ``part + rest``.
    """
    stream = _stream(rng)
    soup = sample_soup(g, SoupConfig(c, window=window), stream.child("soup"))
    order = soup.ordered()
    if len(order) <= rank:
        raise EmptySoup(f"only {len(order)} loops meet the window")
    chosen = order[rank]
    loop = soup.loops[chosen]
    gen = stream.child("assign").generator
    part_lt = soup.local_times[chosen].values
    rest_lt = soup.trivial.values.copy()
    for k, lt in enumerate(soup.local_times):
        if k != chosen:
            rest_lt = rest_lt + lt.values
    part_cross = _crossings_by_edge(g, [loop], gen)
    rest_cross = _crossings_by_edge(g, [lp for k, lp in enumerate(soup.loops) if k != chosen], gen)
    part_edges = decorate_edges(g, part_lt, part_cross, 0.0, J, stream.child("part"))
    rest_edges = decorate_edges(g, rest_lt, rest_cross, c, J, stream.child("rest"))
    part = OccupationField(g, VertexField(g.interior, part_lt), part_edges, 0.0, J)
    rest = OccupationField(g, VertexField(g.interior, rest_lt), rest_edges, c, J)
    whole_edges = tuple(p.with_values(p.values + r.values) for p, r in zip(part_edges, rest_edges))
    whole = OccupationField(g, VertexField(g.interior, part_lt + rest_lt), whole_edges, c, J)
    return LoopDecomposition(whole, part, rest, loop, soup)


# ---------------------------------------------------------------------------
# Random-walk simulation of cable Brownian motion


@dataclass(frozen=True, eq=False)
class _Mesh:
    n_nodes: int
    nbr: np.ndarray  # (nodes, dmax)
    cum: np.ndarray  # (nodes, dmax) cumulative transition probabilities
    dt: np.ndarray  # holding time per visit
    cell: np.ndarray  # length measure owned by each node
    absorbing: np.ndarray
    node_edge: np.ndarray  # -1 for graph vertices
    node_offset: np.ndarray
    vertex_node: dict


def _build_mesh(g: CableGraph, dx: float) -> _Mesh:
    ids = list(g.interior) + sorted(g.boundary, key=str)
    vertex_node = {x: i for i, x in enumerate(ids)}
    nbrs = [[] for _ in ids]
    weights = [[] for _ in ids]
    node_edge = [-1] * len(ids)
    node_offset = [0.0] * len(ids)
    dt = [0.0] * len(ids)
    cell = [0.0] * len(ids)
    for k, e in enumerate(g.edges):
        m = max(2, math.ceil(e.length / dx - 1e-9))
        h = e.length / m
        first = len(nbrs)
        inner = list(range(first, first + m - 1))
        for j, node in enumerate(inner):
            nbrs.append([])
            weights.append([])
            node_edge.append(k)
            node_offset.append((j + 1) * h)
            dt.append(h * h)
            cell.append(h)
        chain = [vertex_node[e.u]] + inner + [vertex_node[e.v]]
        for j in range(1, len(chain) - 1):
            nbrs[chain[j]] += [chain[j - 1], chain[j + 1]]
            weights[chain[j]] += [1.0, 1.0]
        for end, nxt in ((chain[0], chain[1]), (chain[-1], chain[-2])):
            nbrs[end].append(nxt)
            weights[end].append(1.0 / h)
            cell[end] += h / 2.0
    for x, i in vertex_node.items():
        w = np.array(weights[i])
        if w.size:
            # expected exit time of a star with arm lengths 1/w
            dt[i] = float(np.sum(1.0 / w) / np.sum(w))
    n = len(nbrs)
    dmax = max(len(r) for r in nbrs)
    nbr = np.zeros((n, dmax), dtype=np.int64)
    cum = np.ones((n, dmax))
    for i, (r, w) in enumerate(zip(nbrs, weights)):
        if not r:
            continue
        nbr[i, : len(r)] = r
        nbr[i, len(r):] = r[-1]
        cum[i, : len(r)] = np.cumsum(w) / np.sum(w)
    absorbing = np.zeros(n, bool)
    for b in g.boundary:
        if b in vertex_node:
            absorbing[vertex_node[b]] = True
    return _Mesh(n, nbr, cum, np.array(dt), np.array(cell), absorbing,
                 np.array(node_edge), np.array(node_offset), vertex_node)


@dataclass(frozen=True, eq=False)
class CableRun:
    """Random-walk runs of cable Brownian motion.

    ``occupation[r, i]`` is run ``r``'s time at mesh node ``i`` divided by the
    node's cell length. ``path`` (single runs only) lists visited nodes and
    ``times`` the cumulative elapsed time after each visit.
    """

    mesh: _Mesh
    graph: CableGraph
    occupation: np.ndarray
    elapsed: np.ndarray
    killed: np.ndarray
    path: np.ndarray | None = None
    times: np.ndarray | None = None

    def vertex_occupation(self, x) -> np.ndarray:
        return self.occupation[:, self.mesh.vertex_node[x]]

    def conserved_time(self) -> np.ndarray:
        return self.occupation @ self.mesh.cell

    def positions(self):
        """(edge index or -1, offset from edge.u, vertex id or None) for each path node."""
        if self.path is None:
            raise InvalidParams("path not recorded")
        inv = {i: x for x, i in self.mesh.vertex_node.items()}
        return [(int(self.mesh.node_edge[i]), float(self.mesh.node_offset[i]), inv.get(int(i))) for i in self.path]


def simulate_cable_bm(g: CableGraph, start, step: float, horizon: float | None, rng, runs: int = 1,
                      record_path: bool | None = None) -> CableRun:
    """Simulate cable Brownian motion from ``start`` by a nearest-neighbour walk.

    Edges are cut into cells of length about ``sqrt(step)``. Interior nodes
    step left/right with probability 1/2 and hold ``cell**2``; a vertex picks
    an adjacent edge with probability proportional to 1/cell and holds for
    the expected exit time of the corresponding star. Runs end when killed at
    a boundary vertex or when their clock passes ``horizon``.
    """
    min_len = min(e.length for e in g.edges)
    if step > 1e-3 * min_len:
        raise StepTooCoarse(f"step {step} exceeds 1e-3 times the shortest edge ({min_len})")
    if start not in g.index:
        raise InvalidParams(f"start {start!r} is not an interior vertex")
    gen = as_generator(rng)
    mesh = _build_mesh(g, math.sqrt(step))
    record = runs == 1 if record_path is None else record_path
    horizon = math.inf if horizon is None else float(horizon)

    cur = np.full(runs, mesh.vertex_node[start], dtype=np.int64)
    alive = np.arange(runs)
    clock = np.zeros(runs)
    visits = np.zeros((runs, mesh.n_nodes))
    killed = np.zeros(runs, bool)
    path, times = ([int(cur[0])], [0.0]) if record else (None, None)
    while alive.size:
        node = cur[alive]
        np.add.at(visits, (alive, node), 1.0)
        clock[alive] += mesh.dt[node]
        u = gen.random(alive.size)
        choice = (u[:, None] >= mesh.cum[node]).sum(axis=1)
        choice = np.minimum(choice, mesh.nbr.shape[1] - 1)
        nxt = mesh.nbr[node, choice]
        cur[alive] = nxt
        if record:
            path.append(int(nxt[0]))
            times.append(float(clock[0]))
        dead = mesh.absorbing[nxt]
        killed[alive[dead]] = True
        done = dead | (clock[alive] >= horizon)
        alive = alive[~done]
    occupation = visits * mesh.dt[None, :] / mesh.cell[None, :]
    return CableRun(mesh, g, occupation, clock, killed,
                    np.array(path) if record else None, np.array(times) if record else None)
