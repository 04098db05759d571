"""Samplers for Brownian paths/bridges, squared Bessel processes and bridges,
and reflected random-walk local times, all on dyadic grids.

Squared Bessel processes of dimension ``delta`` solve
``dX = 2 sqrt(X) dB + delta dt``; dimension 0 is absorbed at 0 and positive
dimensions are reflected there.

Bridge midpoints are drawn exactly from the decomposition

    midpoint ~ Gamma(delta/2 + N + M + 2K, scale=s)

where ``s`` is half the span, ``N ~ Poisson(a/4s)``, ``M ~ Poisson(b/4s)`` and
``K`` is Bessel distributed with index ``delta/2 - 1`` and argument
``sqrt(ab)/2s``. The three pieces are the 0->0 bridge, the two dimension-0
bridges towards 0 from each end, and the crossing strands (Pitman-Yor).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize, special

from .errors import InvalidParams, InversionFailure, StepTooCoarse
from .rng import RngStream, as_generator

__all__ = [
    "DyadicPath",
    "BesqParams",
    "StopRule",
    "ReflectedRun",
    "brownian_bridge",
    "brownian_path",
    "refine_brownian",
    "besq_transition",
    "besq_transition_logpdf",
    "besq_zero_mass",
    "bessel_variates",
    "besq_bridge_midpoints",
    "besq_bridge",
    "besq_path",
    "bridge_midpoint_logpdf",
    "bridge_midpoint_cdf",
    "bridge_midpoint_atom",
    "euler_besq",
    "reflected_bm_with_local_time",
    "crossing_counts",
]

KINDS = ("free", "bridge", "nonnegative")


# ---------------------------------------------------------------------------
# Paths


@dataclass(frozen=True, eq=False)
class DyadicPath:
    """Function sampled at ``start + length * k / 2**level``, k = 0..2**level."""

    start: float
    length: float
    level: int
    values: np.ndarray
    kind: str = "free"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (2**self.level + 1,):
            raise InvalidParams(
                f"level {self.level} needs {2**self.level + 1} values, got {values.shape}"
            )
        if self.kind not in KINDS:
            raise InvalidParams(f"unknown path kind {self.kind!r}")
        if not self.length > 0:
            raise InvalidParams("path length must be positive")
        if self.kind == "nonnegative" and values.min() < 0:
            raise InvalidParams("nonnegative path has negative values")

    @property
    def n(self) -> int:
        return 2**self.level

    @property
    def mesh(self) -> float:
        return self.length / self.n

    @property
    def positions(self) -> np.ndarray:
        return self.start + self.length * np.arange(self.n + 1) / self.n

    def with_values(self, values, kind=None, **meta) -> "DyadicPath":
        return replace(self, values=np.asarray(values, float), kind=kind or self.kind,
                       meta={**self.meta, **meta})

    def coarsen(self, level: int) -> "DyadicPath":
        if level > self.level:
            raise InvalidParams("cannot coarsen to a finer level")
        stride = 2 ** (self.level - level)
        return replace(self, level=level, values=self.values[::stride].copy())

    def __add__(self, other: "DyadicPath") -> "DyadicPath":
        _check_same_grid(self, other)
        kind = "nonnegative" if self.kind == other.kind == "nonnegative" else "free"
        return replace(self, values=self.values + other.values, kind=kind, meta={})

    def __sub__(self, other: "DyadicPath") -> "DyadicPath":
        _check_same_grid(self, other)
        return replace(self, values=self.values - other.values, kind="free", meta={})

    def scaled(self, factor: float, shift: float = 0.0) -> "DyadicPath":
        kind = self.kind if (factor >= 0 and shift >= 0) else "free"
        return replace(self, values=factor * self.values + shift, kind=kind, meta={})


def _check_same_grid(p: DyadicPath, q: DyadicPath):
    if p.level != q.level or p.start != q.start or p.length != q.length:
        raise InvalidParams("paths live on different grids")


def _check_level(J):
    if int(J) != J or J < 0:
        raise InvalidParams(f"level must be a non-negative integer, got {J!r}")
    return int(J)


def _meta(rng) -> dict:
    if isinstance(rng, RngStream):
        return {"seed": rng.seed, "stream": rng.key_string()}
    return {}


# ---------------------------------------------------------------------------
# Brownian motion


def brownian_bridge(a: float, b: float, length: float, J: int, rng, start: float = 0.0) -> DyadicPath:
    """Exact Brownian bridge from ``a`` to ``b`` by midpoint refinement."""
    J = _check_level(J)
    if not length > 0:
        raise InvalidParams("length must be positive")
    gen = as_generator(rng)
    values = np.empty(2**J + 1)
    values[0], values[-1] = a, b
    _fill_gaussian_midpoints(values, length, J, gen)
    return DyadicPath(start, length, J, values, "bridge", _meta(rng))


def _fill_gaussian_midpoints(values, length, J, gen, top=0):
    n = 2**J
    for j in range(top + 1, J + 1):
        stride = n >> j
        parent = length * 2.0 ** -(j - 1)
        mid = np.arange(stride, n, 2 * stride)
        mean = 0.5 * (values[mid - stride] + values[mid + stride])
        values[mid] = mean + math.sqrt(parent / 4.0) * gen.standard_normal(mid.size)


def refine_brownian(path: DyadicPath, rng) -> DyadicPath:
    """Add one level of Brownian midpoints to an existing Gaussian path."""
    gen = as_generator(rng)
    J = path.level + 1
    values = np.empty(2**J + 1)
    values[::2] = path.values
    mean = 0.5 * (values[:-2:2] + values[2::2])
    values[1::2] = mean + math.sqrt(path.mesh / 4.0) * gen.standard_normal(2 ** path.level)
    return replace(path, level=J, values=values)


def brownian_path(length: float, J: int, rng, x0: float = 0.0, start: float = 0.0) -> DyadicPath:
    """Brownian motion from ``x0`` on a dyadic grid (independent increments)."""
    J = _check_level(J)
    if not length > 0:
        raise InvalidParams("length must be positive")
    gen = as_generator(rng)
    steps = gen.standard_normal(2**J) * math.sqrt(length / 2**J)
    values = np.concatenate(([x0], x0 + np.cumsum(steps)))
    return DyadicPath(start, length, J, values, "free", _meta(rng))


# ---------------------------------------------------------------------------
# Squared Bessel transitions


@dataclass(frozen=True)
class BesqParams:
    delta: float
    x0: float
    t: float

    def __post_init__(self):
        if not (self.delta >= 0 and self.x0 >= 0 and self.t > 0):
            raise InvalidParams(f"need delta >= 0, x0 >= 0, t > 0; got {self}")
        if not all(map(math.isfinite, (self.delta, self.x0, self.t))):
            raise InvalidParams("parameters must be finite")


def besq_transition(p: BesqParams, rng, size=None):
    """Exact draw(s) of X_t given X_0 = x0 via the Poisson-Gamma mixture."""
    gen = as_generator(rng)
    N = gen.poisson(p.x0 / (2.0 * p.t), size=size)
    return gen.gamma(N + p.delta / 2.0, 2.0 * p.t)


def besq_zero_mass(x0, t, delta=0.0):
    """P(X_t = 0); only dimension 0 has an atom."""
    if delta > 0:
        return np.zeros_like(np.asarray(x0, float))
    return np.exp(-np.asarray(x0, float) / (2.0 * t))


def besq_transition_logpdf(x, y, t, delta):
    """Log density (continuous part) of the BESQ transition from x to y > 0."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    nu = delta / 2.0 - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.sqrt(x * y) / t
        if delta > 0:
            from_zero = special.xlogy(nu, y) - y / (2 * t) - (nu + 1) * np.log(2 * t) - special.gammaln(nu + 1)
        else:
            from_zero = np.full(np.broadcast(x, y).shape, -np.inf)
        order = nu if delta > 0 else 1.0
        general = (-np.log(2 * t) + 0.5 * nu * np.log(y / x) - (x + y) / (2 * t)
                   + np.log(special.ive(order, z)) + z)
    out = np.where(x > 0, general, from_zero)
    return np.where(y > 0, out, -np.inf)


# ---------------------------------------------------------------------------
# Bessel distribution


def _bessel_logq(j, nu, logz2):
    return 2.0 * j * logz2 - special.gammaln(j + 1.0) - special.gammaln(j + nu + 1.0)


def bessel_variates(nu, z, rng) -> np.ndarray:
    """Draws from the Bessel distribution P(k) ∝ (z/2)^(2k+nu) / (k! Γ(k+nu+1)).

    Vectorized rejection from a flat-plus-geometric hat, valid because the
    pmf is log-concave in k. Requires nu > -1.
    """
    gen = as_generator(rng)
    nu = float(nu)
    if not nu > -1:
        raise InvalidParams("Bessel index must exceed -1")
    z = np.atleast_1d(np.asarray(z, float))
    out = np.zeros(z.shape, dtype=np.int64)
    pos = np.nonzero(z > 0)[0]
    if pos.size == 0:
        return out
    zz = z[pos]
    logz2 = np.log(zz) - np.log(2.0)
    m = np.floor((np.sqrt(nu * nu + zz * zz) - nu) / 2.0)
    m = np.maximum(m, 0.0)
    # tails start two or more steps from the mode, where chord slopes are bounded away from 0
    d = np.maximum(2.0, np.ceil(np.sqrt(m / 2.0 + 1.0)))

    def lq(j):
        return _bessel_logq(j, nu, logz2)

    lqmax = np.maximum.reduce([lq(m), lq(m + 1), np.where(m >= 1, lq(np.maximum(m - 1, 0)), -np.inf)])
    lo = np.maximum(0.0, m - d + 1)
    hi = m + d - 1
    width = hi - lo + 1
    jr = m + d
    lq_r = lq(jr)
    s_r = lq_r - lq(jr - 1)
    jl = m - d
    has_left = jl >= 0
    jl_safe = np.maximum(jl, 0.0)
    lq_l = np.where(has_left, lq(jl_safe), -np.inf)
    s_l = np.where(has_left, lq_l - lq(jl_safe + 1), -1.0)
    # flat fallback for a left chord that is numerically level
    flat_left = has_left & (s_l > -1e-12)
    w_c = width
    w_r = np.exp(lq_r - lqmax) / -np.expm1(s_r)
    w_l = np.where(has_left & ~flat_left, np.exp(lq_l - lqmax) / -np.expm1(np.minimum(s_l, -1e-12)), 0.0)
    w_l = np.where(flat_left, jl_safe + 1.0, w_l)
    total = w_c + w_r + w_l

    pending = np.arange(pos.size)
    result = np.zeros(pos.size, dtype=np.int64)
    for _ in range(10_000):
        if pending.size == 0:
            break
        k = pending.size
        u = gen.random(k) * total[pending]
        e = gen.standard_exponential(k)
        logv = np.log(gen.random(k))
        wc, wl = w_c[pending], w_l[pending]
        in_c = u < wc
        in_l = (~in_c) & (u < wc + wl)
        in_r = ~(in_c | in_l)
        j = np.empty(k)
        loghat = np.empty(k)
        # centre
        ic = np.nonzero(in_c)[0]
        j[ic] = lo[pending[ic]] + np.floor(gen.random(ic.size) * width[pending[ic]])
        loghat[ic] = lqmax[pending[ic]]
        # right tail
        ir = np.nonzero(in_r)[0]
        pr = pending[ir]
        step = np.floor(e[ir] / -s_r[pr])
        j[ir] = jr[pr] + step
        loghat[ir] = lq_r[pr] + step * s_r[pr]
        # left tail
        il = np.nonzero(in_l)[0]
        pl = pending[il]
        fl = flat_left[pl]
        step_l = np.where(fl, np.floor(gen.random(il.size) * (jl_safe[pl] + 1.0)),
                          np.floor(e[il] / -np.minimum(s_l[pl], -1e-12)))
        j[il] = np.where(fl, step_l, jl_safe[pl] - step_l)
        loghat[il] = np.where(fl, lqmax[pl], lq_l[pl] + step_l * s_l[pl])

        valid = j >= 0
        target = np.full(k, -np.inf)
        target[valid] = _bessel_logq(j[valid], nu, logz2[pending[valid]])
        accept = valid & (logv <= target - loghat + 1e-12)
        result[pending[accept]] = j[accept].astype(np.int64)
        pending = pending[~accept]
    else:  # pragma: no cover - acceptance is bounded away from 0
        raise RuntimeError("Bessel rejection sampler did not terminate")
    out[pos] = result
    return out


# ---------------------------------------------------------------------------
# Squared Bessel bridges


def besq_bridge_midpoints(a, b, delta: float, s, rng) -> np.ndarray:
    """Exact midpoints of BESQ^delta bridges of span 2s between a and b (arrays)."""
    gen = as_generator(rng)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    s = np.broadcast_to(np.asarray(s, float), a.shape)
    n = gen.poisson(a / (4.0 * s))
    m = gen.poisson(b / (4.0 * s))
    z = np.sqrt(a * b) / (2.0 * s)
    # a dimension so small that delta/2 - 1 rounds to -1 takes the nu -> -1 limit below
    if delta / 2.0 - 1.0 > -1.0:
        k = bessel_variates(delta / 2.0 - 1.0, z, gen).reshape(a.shape)
    else:
        k = np.where(z > 0, 1 + bessel_variates(1.0, z, gen).reshape(a.shape), 0)
    return gen.gamma(delta / 2.0 + n + m + 2 * k, s)


def _validate_bridge(a, b, delta, length):
    if not (a >= 0 and b >= 0 and delta >= 0 and length > 0):
        raise InvalidParams(f"bad bridge parameters a={a}, b={b}, delta={delta}, length={length}")
    if delta == 0 and a == 0 and b > 0:
        raise InvalidParams("a dimension-0 bridge cannot leave 0 (absorbed)")


def besq_bridge(a: float, b: float, delta: float, length: float, J: int, rng,
                start: float = 0.0, method: str = "exact") -> DyadicPath:
    """BESQ^delta bridge from ``a`` to ``b`` over ``[start, start + length]``.

    ``method="exact"`` uses the latent Poisson/Bessel/Gamma midpoint law, fully
    vectorized per level. ``method="inversion"`` inverts the numerically
    integrated midpoint CDF one point at a time; it is slow and meant for
    coarse levels and cross-checks.
    """
    J = _check_level(J)
    _validate_bridge(a, b, delta, length)
    gen = as_generator(rng)
    n = 2**J
    values = np.empty(n + 1)
    values[0], values[-1] = a, b
    for j in range(1, J + 1):
        stride = n >> j
        s = length * 2.0**-j
        mid = np.arange(stride, n, 2 * stride)
        left, right = values[mid - stride], values[mid + stride]
        if method == "exact":
            values[mid] = besq_bridge_midpoints(left, right, delta, s, gen)
        elif method == "inversion":
            u = gen.random(mid.size)
            values[mid] = [_invert_midpoint(ui, l, r, delta, s) for ui, l, r in zip(u, left, right)]
        else:
            raise InvalidParams(f"unknown bridge method {method!r}")
    values[0], values[-1] = a, b
    return DyadicPath(start, length, J, values, "nonnegative", _meta(rng))


def bridge_midpoint_atom(a: float, b: float, delta: float, s: float) -> float:
    """Probability that the bridge midpoint is exactly 0 (dimension 0, b = 0 only)."""
    if delta > 0 or b > 0:
        return 0.0
    return math.exp(-a / (4.0 * s))


def bridge_midpoint_logpdf(y, a: float, b: float, delta: float, s: float):
    """Unnormalized log density of the midpoint's continuous part.

    Product of the two half-span transition densities; when ``b == 0`` the
    second factor is the (limiting) density or absorption probability at 0.
    """
    y = np.asarray(y, float)
    first = besq_transition_logpdf(a, y, s, delta)
    if b > 0:
        second = besq_transition_logpdf(y, b, s, delta)
    else:
        second = -y / (2.0 * s)
    return first + second


def _midpoint_normalizer(a, b, delta, s):
    f, lo, hi = _midpoint_integrand(a, b, delta, s)
    total, _ = integrate.quad(f, lo, hi, limit=400, epsabs=0, epsrel=1e-12)
    return f, lo, hi, total


def _midpoint_integrand(a, b, delta, s):
    # Integrate over a window holding essentially all mass.
    mean = (a + b) / 2.0 + delta * s
    sd = math.sqrt(2.0 * s * (a + b + 2 * s) + 1e-300) + s
    hi = mean + 40.0 * sd + 40.0 * s * (1 + delta)
    grid = np.linspace(0, hi, 2001)[1:]
    shift = float(np.max(bridge_midpoint_logpdf(grid, a, b, delta, s)))

    def f(y):
        if y <= 0:
            return 0.0
        return float(np.exp(bridge_midpoint_logpdf(y, a, b, delta, s) - shift))

    return f, 0.0, hi


def bridge_midpoint_cdf(y, a: float, b: float, delta: float, s: float):
    """CDF of the bridge midpoint by direct numerical integration (oracle)."""
    atom = bridge_midpoint_atom(a, b, delta, s)
    f, lo, hi, total = _midpoint_normalizer(a, b, delta, s)
    ys = np.atleast_1d(np.asarray(y, float))
    order = np.argsort(ys)
    out = np.empty_like(ys)
    acc, prev = 0.0, 0.0
    for i in order:
        yi = min(max(ys[i], 0.0), hi)
        if yi > prev:
            acc += integrate.quad(f, prev, yi, limit=400, epsabs=0, epsrel=1e-12)[0]
            prev = yi
        out[i] = atom + (1.0 - atom) * min(acc / total, 1.0) if ys[i] >= 0 else 0.0
    return out if np.ndim(y) else float(out[0])


def _invert_midpoint(u, a, b, delta, s, tol=1e-10):
    atom = bridge_midpoint_atom(a, b, delta, s)
    if atom >= 1.0 or u < atom:
        return 0.0
    target = (u - atom) / (1.0 - atom)
    f, lo, hi, total = _midpoint_normalizer(a, b, delta, s)
    if not (total > 0 and math.isfinite(total)):
        raise InversionFailure(f"midpoint density does not normalize (a={a}, b={b}, s={s})")

    def g(y):
        return integrate.quad(f, 0.0, y, limit=400, epsabs=0, epsrel=1e-12)[0] / total - target

    try:
        root, info = optimize.brentq(g, 0.0, hi, xtol=tol, maxiter=200, full_output=True)
    except (ValueError, RuntimeError) as exc:
        raise InversionFailure(str(exc)) from None
    if not info.converged:
        raise InversionFailure(f"CDF inversion did not converge: {info.flag}")
    return root


def besq_path(x0: float, delta: float, length: float, J: int, rng, start: float = 0.0,
              method: str = "auto") -> DyadicPath:
    """BESQ^delta process from ``x0`` on a dyadic grid.

    Integer dimensions use the squared norm of a Brownian motion in R^delta
    (``method="gaussian"``); otherwise the endpoint is drawn exactly and
    filled in with a bridge.
    """
    J = _check_level(J)
    if not (x0 >= 0 and delta >= 0 and length > 0):
        raise InvalidParams("need x0 >= 0, delta >= 0, length > 0")
    gen = as_generator(rng)
    if method == "auto":
        method = "gaussian" if delta >= 1 and float(delta).is_integer() else "bridge"
    if method == "gaussian":
        k = int(delta)
        if k != delta or k < 1:
            raise InvalidParams("gaussian route needs a positive integer dimension")
        total = np.zeros(2**J + 1)
        for comp in range(k):
            w = brownian_path(length, J, gen, x0=math.sqrt(x0) if comp == 0 else 0.0)
            total += w.values**2
        return DyadicPath(start, length, J, total, "nonnegative", _meta(rng))
    end = float(besq_transition(BesqParams(delta, x0, length), gen))
    if delta == 0 and x0 == 0:
        end = 0.0
    path = besq_bridge(x0, end, delta, length, J, gen, start=start)
    return replace(path, meta=_meta(rng))


def euler_besq(x0: float, delta: float, t: float, dt: float, rng, size: int) -> np.ndarray:
    """Full-truncation Euler scheme for the BESQ SDE (cross-check oracle only)."""
    gen = as_generator(rng)
    steps = int(round(t / dt))
    x = np.full(size, float(x0))
    alive = np.ones(size, bool)
    sq = math.sqrt(dt)
    for _ in range(steps):
        xp = np.maximum(x, 0.0)
        x = x + delta * dt + 2.0 * np.sqrt(xp) * sq * gen.standard_normal(size)
        if delta == 0:
            alive &= x > 0
            x = np.where(alive, x, 0.0)
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# Reflected Brownian motion via a simple random walk


@dataclass(frozen=True)
class StopRule:
    kind: str
    value: float

    @classmethod
    def horizon(cls, T: float) -> "StopRule":
        return cls("horizon", float(T))

    @classmethod
    def inverse_local_time(cls, h: float) -> "StopRule":
        return cls("tau", float(h))

    def __post_init__(self):
        if self.kind not in ("horizon", "tau"):
            raise InvalidParams(f"unknown stop rule {self.kind!r}")
        if not self.value >= 0:
            raise InvalidParams("stop value must be non-negative")


@dataclass(frozen=True, eq=False)
class ReflectedRun:
    """Output of :func:`reflected_bm_with_local_time`.

    ``local_time[k]`` is the occupation density at ``x = k * mesh``. The node at
    0 owns half a cell, all others a full cell. ``path`` holds walk positions
    at times ``k * dt`` when the path was generated.
    """

    mesh: float
    dt: float
    local_time: np.ndarray
    elapsed: float
    path: np.ndarray | None = None

    @property
    def grid(self) -> np.ndarray:
        return self.mesh * np.arange(self.local_time.size)

    @property
    def cell_widths(self) -> np.ndarray:
        w = np.full(self.local_time.size, self.mesh)
        w[0] = self.mesh / 2.0
        return w

    def dyadic_path(self, start: float = 0.0) -> DyadicPath:
        if self.path is None:
            raise InvalidParams("no path recorded for this run")
        n = self.path.size - 1
        J = int(round(math.log2(n))) if n > 0 else 0
        if 2**J != n:
            raise InvalidParams("recorded path is not on a dyadic grid")
        return DyadicPath(start, n * self.dt, J, self.path, "nonnegative")


def _local_time_from_departures(departures, mesh, dt):
    lt = departures * (dt / mesh)
    lt[0] *= 2.0
    return lt


def crossing_counts(starts, rng, max_level: int | None = None):
    """Upcrossing counts of the reflected simple random walk above level 0.

    ``starts[i]`` excursions leave 0; at each level every arrival from below
    spawns a Geometric(1/2) number of upcrossings of the next edge. Returns
    COO arrays ``(entry, level, count)`` for levels k >= 1 with count > 0,
    stopping after ``max_level`` when given.
    """
    gen = as_generator(rng)
    starts = np.asarray(starts, dtype=np.int64)
    idx = np.nonzero(starts > 0)[0]
    U = starts[idx]
    entries, levels, counts = [], [], []
    k = 1
    while idx.size and (max_level is None or k <= max_level):
        entries.append(idx)
        levels.append(np.full(idx.size, k, dtype=np.int64))
        counts.append(U)
        nxt = gen.negative_binomial(U, 0.5)
        keep = nxt > 0
        idx, U = idx[keep], nxt[keep]
        k += 1
    if not entries:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    return np.concatenate(entries), np.concatenate(levels), np.concatenate(counts)


def departures_from_crossings(n_excursions: int, levels, counts) -> np.ndarray:
    """Per-node departure counts given upcrossing counts U_k (k >= 1) of one run."""
    top = int(levels.max()) if levels.size else 0
    U = np.zeros(top + 2, dtype=np.int64)
    U[levels] = counts
    dep = np.zeros(top + 2, dtype=np.int64)
    dep[0] = n_excursions
    dep[1:] = U[1:] + np.concatenate((U[2:], [0]))
    return dep


def reflected_bm_with_local_time(step: float, stop: StopRule, rng, *, record_path: bool | None = None,
                                 max_steps: int = 50_000_000) -> ReflectedRun:
    """Reflected Brownian motion from 0 approximated by a reflected simple random walk.

    Mesh is ``sqrt(step)`` in space and ``step`` in time. A horizon rule walks
    ``2**J`` steps with ``J = ceil(log2(T / step))`` (the step is shrunk to fit).
    The inverse-local-time rule stops after ``round(h / (2 mesh))`` excursions
    from 0; the local time at 0 then equals ``h`` to within one increment. By
    default its profile is computed from exact upcrossing counts, which has
    the same law as walking the path but does not suffer from the heavy
    tail of the excursion lengths; ``record_path=True`` walks explicitly.
    """
    if not step > 0:
        raise InvalidParams("step must be positive")
    if step > 1e-2:
        raise StepTooCoarse(f"step {step} exceeds 1e-2")
    gen = as_generator(rng)
    if stop.kind == "horizon":
        if stop.value <= 0:
            return ReflectedRun(math.sqrt(step), step, np.zeros(1), 0.0, np.zeros(1))
        J = max(0, math.ceil(math.log2(stop.value / step) - 1e-12))
        dt = stop.value / 2**J
        mesh = math.sqrt(dt)
        signs = gen.integers(0, 2, size=2**J, dtype=np.int8) * 2 - 1
        walk = np.abs(np.concatenate(([0], np.cumsum(signs, dtype=np.int64))))
        dep = np.bincount(walk[:-1])
        lt = _local_time_from_departures(dep.astype(float), mesh, dt)
        return ReflectedRun(mesh, dt, np.append(lt, 0.0), 2**J * dt, walk * mesh)

    mesh = math.sqrt(step)
    M = int(round(stop.value / (2.0 * mesh)))
    if M == 0:
        return ReflectedRun(mesh, step, np.zeros(1), 0.0, np.zeros(1) if record_path else None)
    if record_path:
        walk = _walk_until_excursions(M, gen, max_steps)
        dep = np.bincount(walk[:-1])
        lt = _local_time_from_departures(dep.astype(float), mesh, step)
        return ReflectedRun(mesh, step, np.append(lt, 0.0), (walk.size - 1) * step, walk * mesh)
    _, levels, counts = crossing_counts([M], gen)
    dep = departures_from_crossings(M, levels, counts)
    lt = _local_time_from_departures(dep.astype(float), mesh, step)
    return ReflectedRun(mesh, step, lt, float(dep.sum()) * step)


def _walk_until_excursions(M, gen, max_steps, chunk=1 << 16):
    pieces = [np.zeros(1, dtype=np.int64)]
    pos = 0
    done = 0
    total = 0
    while done < M:
        if total > max_steps:
            raise InvalidParams(f"walk exceeded {max_steps} steps before tau; use the crossing route")
        signs = gen.integers(0, 2, size=chunk, dtype=np.int8) * 2 - 1
        seg = _reflect_from(pos, signs)
        prev = np.concatenate(([pos], seg[:-1]))
        zero_departs = np.nonzero(prev == 0)[0]
        if done + zero_departs.size >= M:
            # stop at the first return to 0 after the M-th departure
            last = zero_departs[M - done - 1]
            back = np.nonzero(seg[last:] == 0)[0]
            if back.size:
                pieces.append(seg[: last + back[0] + 1])
                done = M
                break
            pieces.append(seg)
            pos = int(seg[-1])
            done = M  # the remaining walk just has to come home
            pieces.append(_walk_home(pos, gen, chunk))
            break
        done += zero_departs.size
        pieces.append(seg)
        pos = int(seg[-1])
        total += chunk
    return np.concatenate(pieces)


def _reflect_from(pos, signs):
    # |pos + S| for an unreflected walk S is a reflected walk started at pos.
    return np.abs(pos + np.cumsum(signs, dtype=np.int64))


def _walk_home(pos, gen, chunk):
    out = []
    while True:
        seg = _reflect_from(pos, gen.integers(0, 2, size=chunk, dtype=np.int8) * 2 - 1)
        hit = np.nonzero(seg == 0)[0]
        if hit.size:
            out.append(seg[: hit[0] + 1])
            return np.concatenate(out)
        out.append(seg)
        pos = int(seg[-1])
