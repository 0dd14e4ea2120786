"""Gaussian sample paths and their level-2 rough-path lifts.

Second-level tensor convention
------------------------------
Chen's relation is used in the form

    X[s,t] - X[s,u] - X[u,t] = x[u,t] (x) x[s,u],

so that entry ``X[s,t][a, b]`` is the iterated integral of ``x^b[s,r]``
against ``dx^a_r``.  Every contraction in the package (rough integrals,
the RDE scheme, translations) is written against this ordering: a
Gubinelli derivative ``y'[..., j, k]`` pairs with ``X[j, k]``, and
``y'`` acts on ``x`` through its last index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, KernelNotPSDError, StructuralError

# The dense factor has one row per increment; x_0 = 0 needs no row.
MAX_CHOLESKY_INCREMENTS = 8192


def stream(seed: int, index: Optional[int] = None) -> np.random.Generator:
    """Counter-based random stream for ``seed`` (and optional sub-stream).

    Each ``(seed, index)`` pair yields an independent Philox stream, so
    Monte-Carlo workers can draw path ``index`` without coordination.
    """
    spawn_key = () if index is None else (int(index),)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time points."""

    points: np.ndarray

    def __post_init__(self):
        pts = _frozen(np.ravel(self.points))
        if pts.size < 2:
            raise StructuralError("a time grid needs at least 2 points")
        if not np.all(np.diff(pts) > 0):
            raise StructuralError("time grid must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, t0: float, t1: float, n: int) -> "TimeGrid":
        return cls(np.linspace(t0, t1, n))

    @property
    def n(self) -> int:
        return self.points.size

    @property
    def span(self) -> float:
        return float(self.points[-1] - self.points[0])

    @cached_property
    def uniform_spacing(self) -> bool:
        d = np.diff(self.points)
        return bool(np.all(np.abs(d - d[0]) < 1e-12))

    def coarsen(self, stride: int) -> "TimeGrid":
        if (self.n - 1) % stride:
            raise StructuralError(f"stride {stride} does not divide {self.n - 1} steps")
        return TimeGrid(self.points[::stride])

    def index_of(self, t: float, atol: float = 1e-12) -> int:
        i = int(np.argmin(np.abs(self.points - t)))
        if abs(self.points[i] - t) > atol:
            raise StructuralError(f"time {t} is not a grid point")
        return i

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class FbmSpec:
    """Fractional Brownian motion with Hurst index ``hurst`` in ``dims`` dimensions."""

    hurst: float
    dims: int = 1
    horizon: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.hurst < 1.0:
            raise DomainError(f"hurst must lie in (0, 1), got {self.hurst}")
        if int(self.dims) != self.dims or self.dims < 1:
            raise DomainError(f"dims must be a positive integer, got {self.dims}")
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")

    def require_rough_regime(self):
        """Stability experiments are stated for hurst in (1/3, 1/2)."""
        if not 1.0 / 3.0 < self.hurst < 0.5:
            raise DomainError(f"hurst {self.hurst} outside (1/3, 1/2)")


@dataclass(frozen=True)
class SamplePath:
    """Path values on a grid, ``values[k]`` is ``x`` at ``grid.points[k]``."""

    grid: TimeGrid
    values: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n:
            raise StructuralError(
                f"values shape {v.shape} does not match grid of {self.grid.n} points")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def dims(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.points

    @cached_property
    def increments(self) -> np.ndarray:
        return _frozen(np.diff(self.values, axis=0))

    def increment(self, i: int, j: int) -> np.ndarray:
        return self.values[j] - self.values[i]

    def coarsen(self, stride: int) -> "SamplePath":
        return SamplePath(self.grid.coarsen(stride), self.values[::stride], self.seed)

    def restrict(self, i0: int, i1: int) -> "SamplePath":
        return SamplePath(TimeGrid(self.grid.points[i0:i1 + 1]),
                          self.values[i0:i1 + 1], self.seed)

    def __add__(self, other: "SamplePath") -> "SamplePath":
        if other.n != self.n or not np.array_equal(other.times, self.times):
            raise StructuralError("paths live on different grids")
        return SamplePath(self.grid, self.values + other.values, self.seed)

    def __neg__(self) -> "SamplePath":
        return SamplePath(self.grid, -self.values, self.seed)


@dataclass(frozen=True)
class RoughPath:
    """A path together with its second level.

    The second level is held as per-step tensors ``steps[k] = X[t_k, t_{k+1}]``;
    the tensor between any two grid points is assembled through Chen's
    relation.  Passing ``full`` (shape ``(n, n, m, m)``, upper triangle
    used) overrides assembly with an explicit table, which is how
    deliberately inconsistent objects are built for testing.
    """

    path: SamplePath
    steps: np.ndarray
    geometric: bool = False
    full: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        n, m = self.path.n, self.path.dims
        st = np.asarray(self.steps, dtype=float)
        if st.shape != (n - 1, m, m):
            raise StructuralError(f"per-step tensors must have shape {(n - 1, m, m)}, got {st.shape}")
        object.__setattr__(self, "steps", _frozen(st))
        if self.full is not None:
            f = np.asarray(self.full, dtype=float)
            if f.shape != (n, n, m, m):
                raise StructuralError(f"full table must have shape {(n, n, m, m)}")
            object.__setattr__(self, "full", _frozen(f))

    @property
    def n(self) -> int:
        return self.path.n

    @property
    def dims(self) -> int:
        return self.path.dims

    @property
    def x(self) -> np.ndarray:
        return self.path.values

    @property
    def times(self) -> np.ndarray:
        return self.path.times

    @cached_property
    def _cumulative(self) -> np.ndarray:
        # X[t_0, t_k] built left to right by Chen.
        x0 = self.x - self.x[0]
        d = self.path.increments
        inc = self.steps + d[:, :, None] * x0[:-1, None, :]
        c = np.zeros((self.n, self.dims, self.dims))
        np.cumsum(inc, axis=0, out=c[1:])
        return _frozen(c)

    def area(self, i: int, j: int) -> np.ndarray:
        """Second level between grid indices ``i <= j``."""
        if i > j:
            raise StructuralError("area needs i <= j")
        if self.full is not None:
            return self.full[i, j]
        if j == i + 1:
            return self.steps[i].copy()
        c = self._cumulative
        xs = self.x
        return c[j] - c[i] - np.outer(xs[j] - xs[i], xs[i] - xs[0])

    def step_areas(self, i0: int = 0, i1: Optional[int] = None) -> np.ndarray:
        """Per-step tensors ``X[t_k, t_{k+1}]`` for ``i0 <= k < i1``."""
        i1 = self.n - 1 if i1 is None else i1
        if self.full is None:
            return self.steps[i0:i1]
        ks = np.arange(i0, i1)
        return self.full[ks, ks + 1]

    def area_pairs(self, iis, js) -> np.ndarray:
        """Second level for paired index arrays ``iis[k] <= js[k]``."""
        iis, js = np.asarray(iis), np.asarray(js)
        if self.full is not None:
            return self.full[iis, js]
        c = self._cumulative
        xs = self.x
        return c[js] - c[iis] - (xs[js] - xs[iis])[:, :, None] * (xs[iis] - xs[0])[:, None, :]

    def area_from(self, i: int, js) -> np.ndarray:
        """Second level from ``i`` to each index in ``js`` (vectorized)."""
        js = np.asarray(js)
        if self.full is not None:
            return self.full[i, js]
        c = self._cumulative
        xs = self.x
        return c[js] - c[i] - (xs[js] - xs[i])[:, :, None] * (xs[i] - xs[0])[None, None, :]

    def area_to(self, iis, j: int) -> np.ndarray:
        """Second level from each index in ``iis`` to ``j`` (vectorized)."""
        iis = np.asarray(iis)
        if self.full is not None:
            return self.full[iis, j]
        c = self._cumulative
        xs = self.x
        return c[j] - c[iis] - (xs[j] - xs[iis])[:, :, None] * (xs[iis] - xs[0])[:, None, :]

    def area_table(self) -> np.ndarray:
        """All pair tensors, shape ``(n, n, m, m)``; lower triangle is zero."""
        if self.full is not None:
            return _upper(self.full)
        c = self._cumulative
        xs = self.x
        x0 = xs - xs[0]
        dx = xs[None, :, :] - xs[:, None, :]
        tab = c[None, :] - c[:, None] - dx[:, :, :, None] * x0[:, None, None, :]
        return _upper(tab)

    def area_norms(self) -> np.ndarray:
        """Frobenius norms of all pair tensors, shape ``(n, n)``."""
        tab = self.area_table()
        return np.sqrt(np.einsum("ijab,ijab->ij", tab, tab))

    def coarsen(self, stride: int) -> "RoughPath":
        """Sub-sample every ``stride`` points; step tensors re-aggregated by Chen."""
        coarse = self.path.coarsen(stride)
        idx = np.arange(0, self.n, stride)
        steps = np.stack([self.area(a, b) for a, b in zip(idx[:-1], idx[1:])])
        return RoughPath(coarse, steps, self.geometric)

    def restrict(self, i0: int, i1: int) -> "RoughPath":
        full = None if self.full is None else self.full[i0:i1 + 1, i0:i1 + 1]
        return RoughPath(self.path.restrict(i0, i1), self.steps[i0:i1], self.geometric, full)


def _upper(tab):
    n = tab.shape[0]
    mask = np.triu(np.ones((n, n), dtype=bool))
    return np.where(mask[:, :, None, None], tab, 0.0)


@dataclass(frozen=True)
class CovKernel:
    """Matrix-valued covariance ``(s, t) -> E[X_s (x) X_t]``."""

    evaluator: Callable[[float, float], np.ndarray]
    name: str = "kernel"
    dims: int = 1

    def __call__(self, s, t) -> np.ndarray:
        return np.atleast_2d(self.evaluator(s, t))


def fbm_covariance(hurst, s, t):
    """Scalar fBm covariance; broadcasts over arrays."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(s) ** h2 + np.abs(t) ** h2 - np.abs(t - s) ** h2)


def fbm_kernel(hurst: float, dims: int = 1) -> CovKernel:
    eye = np.eye(dims)
    return CovKernel(lambda s, t: fbm_covariance(hurst, s, t) * eye,
                     name=f"fbm(H={hurst})", dims=dims)


def brownian_kernel(dims: int = 1) -> CovKernel:
    return fbm_kernel(0.5, dims)


def rect_cov(kernel: CovKernel, s, t, s2, t2) -> np.ndarray:
    """Rectangular increment ``E[X_{s,t} (x) X_{s2,t2}]``."""
    return kernel(t, t2) - kernel(t, s2) - kernel(s, t2) + kernel(s, s2)


def gram_matrix(kernel: CovKernel, times) -> np.ndarray:
    """Block Gram matrix of ``kernel`` on ``times``, shape ``(n*m, n*m)``."""
    times = np.asarray(times, dtype=float)
    n, m = times.size, kernel.dims
    g = np.empty((n, m, n, m))
    for i, s in enumerate(times):
        for j, t in enumerate(times):
            g[i, :, j, :] = kernel(s, t)
    return g.reshape(n * m, n * m)


def check_kernel(kernel: CovKernel, times) -> tuple[float, float]:
    """Return (max symmetry defect, smallest Gram eigenvalue) on ``times``."""
    times = np.asarray(times, dtype=float)
    sym = 0.0
    for s in times:
        for t in times:
            sym = max(sym, float(np.max(np.abs(kernel(s, t) - kernel(t, s).T))))
    g = gram_matrix(kernel, times)
    return sym, float(np.linalg.eigvalsh(0.5 * (g + g.T))[0])


def fbm_increment_covariance(hurst: float, times) -> np.ndarray:
    """Covariance of consecutive increments of scalar fBm on ``times``."""
    t = np.asarray(times, dtype=float)
    a, b = t[:-1], t[1:]
    return (fbm_covariance(hurst, b[:, None], b[None, :])
            - fbm_covariance(hurst, b[:, None], a[None, :])
            - fbm_covariance(hurst, a[:, None], b[None, :])
            + fbm_covariance(hurst, a[:, None], a[None, :]))


@lru_cache(maxsize=16)
def _increment_factor(hurst: float, key: bytes) -> np.ndarray:
    times = np.frombuffer(key, dtype=float)
    cov = fbm_increment_covariance(hurst, times)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.trace(cov)
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            raise KernelNotPSDError("kernel not PSD on grid") from None
    chol.setflags(write=False)
    return chol


def _check_grid(spec: FbmSpec, grid: TimeGrid):
    if grid.n - 1 > MAX_CHOLESKY_INCREMENTS:
        raise DomainError(f"grid has {grid.n - 1} increments; dense Cholesky is limited to "
                          f"{MAX_CHOLESKY_INCREMENTS}")
    if grid.points[0] < -1e-12 or grid.points[-1] > spec.horizon + 1e-12:
        raise DomainError("grid must lie within [0, horizon]")


def sample_fbm(spec: FbmSpec, grid: TimeGrid, seed: int) -> SamplePath:
    """Exact-in-law fBm sample on ``grid``, started at the origin.

    Increments are drawn from their joint Gaussian law through a dense
    Cholesky factor (cached per grid); the ``dims`` coordinates are
    independent.  The result depends only on ``(spec, grid, seed)``.
    """
    _check_grid(spec, grid)
    chol = _increment_factor(spec.hurst, grid.points.tobytes())
    z = stream(seed).standard_normal((grid.n - 1, spec.dims))
    vals = np.zeros((grid.n, spec.dims))
    np.cumsum(chol @ z, axis=0, out=vals[1:])
    return SamplePath(grid, vals, seed)


def sample_fbm_batch(spec: FbmSpec, grid: TimeGrid, seed: int, count: int) -> np.ndarray:
    """``count`` independent fBm paths, shape ``(count, n, dims)``.

    Path ``i`` uses sub-stream ``(seed, i)``, so any subset of the batch
    can be regenerated in isolation with :func:`sample_fbm_indexed`.
    """
    _check_grid(spec, grid)
    chol = _increment_factor(spec.hurst, grid.points.tobytes())
    z = np.stack([stream(seed, i).standard_normal((grid.n - 1, spec.dims))
                  for i in range(count)])
    out = np.zeros((count, grid.n, spec.dims))
    np.cumsum(np.matmul(chol, z), axis=1, out=out[:, 1:])
    return out


def sample_fbm_indexed(spec: FbmSpec, grid: TimeGrid, seed: int, index: int) -> SamplePath:
    _check_grid(spec, grid)
    chol = _increment_factor(spec.hurst, grid.points.tobytes())
    z = stream(seed, index).standard_normal((grid.n - 1, spec.dims))
    vals = np.zeros((grid.n, spec.dims))
    np.cumsum(chol @ z, axis=0, out=vals[1:])
    return SamplePath(grid, vals, seed)


def lift_piecewise_linear(path: SamplePath) -> RoughPath:
    """Geometric lift: exact iterated integrals of the linear interpolant."""
    d = path.increments
    return RoughPath(path, 0.5 * d[:, :, None] * d[:, None, :], geometric=True)


def ito_lift(path: SamplePath) -> RoughPath:
    """Non-geometric fixture: geometric lift minus ``(t - s)/2`` times the identity.

    For Brownian motion this is the Ito lift; it exists here to exercise
    the bracket.
    """
    geo = lift_piecewise_linear(path)
    dt = np.diff(path.times)
    eye = np.eye(path.dims)
    return RoughPath(path, geo.steps - 0.5 * dt[:, None, None] * eye, geometric=False)


def zero_rough_path(grid: TimeGrid, dims: int = 1) -> RoughPath:
    return lift_piecewise_linear(SamplePath(grid, np.zeros((grid.n, dims))))


def chen_defect(rp: RoughPath, max_triples: int = 10_000, exhaustive_up_to: int = 64,
                seed: int = 0) -> float:
    """Largest Chen-relation defect over grid triples ``s <= u <= t``.

    All triples are scanned when ``n <= exhaustive_up_to``; otherwise
    ``max_triples`` triples are drawn at random (deterministically from
    ``seed``).
    """
    n, x = rp.n, rp.x
    if n <= exhaustive_up_to:
        tab = rp.area_table()
        worst = 0.0
        for u in range(n):
            s = np.arange(0, u + 1)
            t = np.arange(u, n)
            lhs = tab[s][:, t] - tab[s, u][:, None] - tab[u, t][None, :]
            corr = (x[t] - x[u])[None, :, :, None] * (x[u] - x[s])[:, None, None, :]
            d = lhs - corr
            worst = max(worst, float(np.sqrt(np.einsum("stab,stab->st", d, d)).max()))
        return worst
    rng = stream(seed)
    trip = np.sort(rng.integers(0, n, size=(max_triples, 3)), axis=1)
    s, u, t = trip.T
    d = (rp.area_pairs(s, t) - rp.area_pairs(s, u) - rp.area_pairs(u, t)
         - (x[t] - x[u])[:, :, None] * (x[u] - x[s])[:, None, :])
    return float(np.sqrt(np.einsum("kab,kab->k", d, d)).max())


def bracket(rp: RoughPath, i: int, j: int) -> np.ndarray:
    """``x[s,t] (x) x[s,t] - 2 Sym(X[s,t])`` between grid indices ``i <= j``."""
    d = rp.x[j] - rp.x[i]
    a = rp.area(i, j)
    return np.outer(d, d) - (a + a.T)


def bracket_path(rp: RoughPath) -> np.ndarray:
    """``t -> [x]_{t_0, t}`` on the grid, shape ``(n, m, m)``."""
    if rp.geometric:
        return np.zeros((rp.n, rp.dims, rp.dims))
    return np.stack([bracket(rp, 0, j) for j in range(rp.n)])


def symmetry_defect(rp: RoughPath) -> float:
    """max over pairs of ``|| Sym(X[s,t]) - x[s,t] (x) x[s,t] / 2 ||``."""
    tab = rp.area_table()
    dx = rp.x[None, :, :] - rp.x[:, None, :]
    half = 0.5 * dx[:, :, :, None] * dx[:, :, None, :]
    sym = 0.5 * (tab + np.swapaxes(tab, 2, 3))
    d = _upper(sym - half)
    return float(np.sqrt(np.einsum("ijab,ijab->ij", d, d)).max())
