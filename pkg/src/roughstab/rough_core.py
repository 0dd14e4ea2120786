"""Young and rough integration on grid paths.

Integrands are arrays whose last axis pairs with the driver: an
integrand of shape ``(n, *S, m)`` against an ``m``-dimensional path gives
a value of shape ``S``.  A Gubinelli derivative carries one more trailing
axis, ``y_prime[..., j, k]``, and multiplies the second level entry
``X[j, k]`` (the iterated integral of ``x^k`` against ``dx^j``).

All sums run over grid steps in ascending order, so results are
bit-reproducible and additive over adjacent intervals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import zeta

from .errors import DomainError, StructuralError
from .gaussian_paths import RoughPath, SamplePath
from .norms import (
    _interval,
    p_sigma_var,
    p_var,
    rough_path_norm,
    two_param_var,
)
from .reports import InequalityReport, jsonable


def young_constant(p: float, q: float) -> float:
    """``K(p, q) = (1 - 2^{1 - 1/p - 1/q})^{-1}``; ``inf`` when ``1/p + 1/q <= 1``."""
    theta = 1.0 / p + 1.0 / q
    if theta <= 1:
        return np.inf
    return 1.0 / (1.0 - 2.0 ** (1.0 - theta))


def sewing_constant(beta: float) -> float:
    """``C_beta = 2^{3 beta} zeta(3 beta)``, defined for ``3 beta > 1``."""
    if 3 * beta <= 1:
        raise DomainError(f"sewing constant needs 3*beta > 1, got beta={beta}")
    return float(2.0 ** (3 * beta) * zeta(3 * beta))


def translation_constant(p: float) -> float:
    """``1 + 2 sqrt(K)`` with ``K = (1 - 2^{1 - 3/p})^{-1}``; requires ``p < 3``."""
    if not 1 <= p < 3:
        raise DomainError(f"translation estimate needs 1 <= p < 3, got {p}")
    k = 1.0 / (1.0 - 2.0 ** (1.0 - 3.0 / p))
    return 1.0 + 2.0 * np.sqrt(k)


@dataclass
class IntegralResult:
    value: np.ndarray
    local_error_bound: float = np.nan
    compensated_terms: int = 0
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return jsonable({"value": np.atleast_1d(self.value), "bound": self.local_error_bound,
                         "terms": self.compensated_terms})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _driver(x):
    if isinstance(x, RoughPath):
        return x.x
    if isinstance(x, SamplePath):
        return x.values
    v = np.asarray(x, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def _integrand(y, m):
    y = np.asarray(y.values if isinstance(y, SamplePath) else y, dtype=float)
    if y.ndim == 1 or y.shape[-1] != m:
        if m != 1:
            raise StructuralError(f"integrand's last axis must have length {m}")
        y = y[..., None]
    return y


def _frob(a):
    a = np.asarray(a, dtype=float)
    return np.sqrt(np.sum(a * a))


def young_integral(y, x, p: Optional[float] = None, q: Optional[float] = None,
                   interval=None) -> IntegralResult:
    """Left-point Riemann sum of ``y`` against ``x`` over an index interval.

    With ``p`` (for ``x``) and ``q`` (for ``y``) given, the bound
    ``K(p,q) ||y||_{q-var} ||x||_{p-var}`` on ``|int - y_s x_{s,t}|`` is
    attached; it is ``nan`` when ``1/p + 1/q <= 1``.
    """
    xv = _driver(x)
    yv = _integrand(y, xv.shape[1])
    if yv.shape[0] != xv.shape[0]:
        raise StructuralError("integrand and driver live on different grids")
    i0, i1 = _interval(xv.shape[0], interval)
    dx = np.diff(xv[i0:i1 + 1], axis=0)
    val = np.einsum("k...j,kj->...", yv[i0:i1], dx)
    bound = np.nan
    details = {"first_order": np.einsum("...j,j->...", yv[i0], xv[i1] - xv[i0])}
    if p is not None and q is not None:
        k = young_constant(p, q)
        if np.isfinite(k):
            flat = yv[i0:i1 + 1].reshape(i1 - i0 + 1, -1)
            bound = k * p_var(flat, q).value * p_var(xv[i0:i1 + 1], p).value
        details["K"] = k
    return IntegralResult(val, bound, i1 - i0, details)


def young_integral_path(y, x) -> np.ndarray:
    """Cumulative left-point sums ``t_k -> int_{t_0}^{t_k} y dx``."""
    xv = _driver(x)
    yv = _integrand(y, xv.shape[1])
    terms = np.einsum("k...j,kj->k...", yv[:-1], np.diff(xv, axis=0))
    out = np.zeros((xv.shape[0],) + terms.shape[1:])
    np.cumsum(terms, axis=0, out=out[1:])
    return out


@dataclass(frozen=True)
class ControlledPath:
    """A path ``y`` controlled by a rough path, with Gubinelli derivative.

    ``y`` has shape ``(n, *S)`` and ``y_prime`` shape ``(n, *S, m)``.
    """

    base: RoughPath
    y: np.ndarray
    y_prime: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        yp = np.asarray(self.y_prime, dtype=float)
        n, m = self.base.n, self.base.dims
        if y.shape[0] != n:
            raise StructuralError("y must have one row per grid point")
        if m == 1 and yp.size == y.size:
            yp = yp.reshape(y.shape + (1,))
        if yp.shape != y.shape + (m,):
            raise StructuralError(f"y_prime must have shape {y.shape + (m,)}, got {yp.shape}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "y_prime", yp)

    @property
    def n(self) -> int:
        return self.base.n

    def remainder(self, i: int, j: int) -> np.ndarray:
        """``R_{s,t} = y_{s,t} - y'_s x_{s,t}``."""
        dx = self.base.x[j] - self.base.x[i]
        return self.y[j] - self.y[i] - self.y_prime[i] @ dx

    def remainder_table(self) -> np.ndarray:
        """All ``R_{t_i,t_j}`` for ``i <= j``, shape ``(n, n, *S)``; zero below."""
        x = self.base.x
        dx = x[None, :, :] - x[:, None, :]
        dy = self.y[None, :] - self.y[:, None]
        r = dy - np.einsum("i...k,ijk->ij...", self.y_prime, dx)
        mask = np.triu(np.ones((self.n, self.n), dtype=bool))
        return r * mask.reshape(mask.shape + (1,) * (r.ndim - 2))

    def remainder_norms(self) -> np.ndarray:
        r = self.remainder_table()
        flat = r.reshape(self.n, self.n, -1)
        return np.sqrt(np.einsum("ijk,ijk->ij", flat, flat))


def _step_terms(cp: ControlledPath, i0: int, i1: int) -> np.ndarray:
    rp = cp.base
    ks = np.arange(i0, i1)
    y = cp.y
    if y.shape[-1] != rp.dims:
        raise StructuralError(
            f"integrand's last axis ({y.shape[-1]}) must match the driver dimension ({rp.dims})")
    dx = rp.x[ks + 1] - rp.x[ks]
    area = rp.step_areas(i0, i1)
    return (np.einsum("k...j,kj->k...", y[ks], dx)
            + np.einsum("k...jl,kjl->k...", cp.y_prime[ks], area))


def rough_integral(cp: ControlledPath, interval=None, p: Optional[float] = None) -> IntegralResult:
    """Compensated sum ``sum_k y_k x_{k,k+1} + y'_k X_{k,k+1}`` over an index interval.

    With ``p`` given the sewing bound

        C_beta (||x||_{p-var} ||R^y||_{p/2-var} + ||y'||_{p-var} ||X||_{p/2-var})

    with ``beta = 1/p`` is attached as ``local_error_bound``.  It bounds
    ``|int - y_s x_{s,t} - y'_s X_{s,t}|`` (``details['first_order']`` holds
    the subtracted germ).
    """
    i0, i1 = _interval(cp.n, interval)
    val = _step_terms(cp, i0, i1).sum(axis=0)
    rp = cp.base
    germ = (np.einsum("...j,j->...", cp.y[i0], rp.x[i1] - rp.x[i0])
            + np.einsum("...jl,jl->...", cp.y_prime[i0], rp.area(i0, i1)))
    bound = np.nan
    if p is not None:
        bound = sewing_rhs(cp, p, i0, i1)
    return IntegralResult(val, bound, i1 - i0, {"first_order": germ})


def rough_integral_path(cp: ControlledPath) -> np.ndarray:
    """Cumulative compensated sums ``t_k -> int_{t_0}^{t_k} y dx``."""
    terms = _step_terms(cp, 0, cp.n - 1)
    out = np.zeros((cp.n,) + terms.shape[1:])
    np.cumsum(terms, axis=0, out=out[1:])
    return out


def sewing_rhs(cp: ControlledPath, p: float, i0: int, i1: int,
               remainder_norms: Optional[np.ndarray] = None,
               area_norms: Optional[np.ndarray] = None) -> float:
    """Right-hand side of the p-variation sewing estimate on ``[t_i0, t_i1]``."""
    rp = cp.base
    rn = cp.remainder_norms() if remainder_norms is None else remainder_norms
    an = rp.area_norms() if area_norms is None else area_norms
    q = p / 2.0
    sub = slice(i0, i1 + 1)
    xv = p_var(rp.x[sub], p).value
    rv = two_param_var(rn[sub, sub], q).value
    ypv = p_var(cp.y_prime[sub].reshape(i1 - i0 + 1, -1), p).value
    av = two_param_var(an[sub, sub], q).value
    return sewing_constant(1.0 / p) * (xv * rv + ypv * av)


def sewing_check(cp: ControlledPath, p: float, pairs=None, slack: float = 1e-12) -> InequalityReport:
    """Compare the compensated-sum defect with the sewing bound on index pairs.

    ``pairs`` defaults to all dyadic pairs ``(k 2^l, (k+1) 2^l)`` of the grid.
    The report carries the pair with the largest defect-to-bound ratio.
    """
    n = cp.n
    if pairs is None:
        pairs = []
        step = 1
        while step < n:
            pairs += [(a, a + step) for a in range(0, n - step, step)]
            step *= 2
        pairs.append((0, n - 1))
    cum = rough_integral_path(cp)
    rn, an = cp.remainder_norms(), cp.base.area_norms()
    rp = cp.base
    worst = (-np.inf, 0.0, 0.0, None)
    violations = 0
    for a, b in pairs:
        if b - a < 2:
            continue
        germ = (np.einsum("...j,j->...", cp.y[a], rp.x[b] - rp.x[a])
                + np.einsum("...jl,jl->...", cp.y_prime[a], rp.area(a, b)))
        lhs = _frob(cum[b] - cum[a] - germ)
        rhs = sewing_rhs(cp, p, a, b, rn, an)
        if lhs > rhs + slack:
            violations += 1
        ratio = lhs / rhs if rhs > 0 else (np.inf if lhs > slack else 0.0)
        if ratio > worst[0]:
            worst = (ratio, lhs, rhs, (a, b))
    ratio, lhs, rhs, pair = worst
    return InequalityReport("sewing", lhs, rhs, violations == 0, slack,
                            {"pair": pair, "ratio": ratio, "violations": violations,
                             "C_beta": sewing_constant(1.0 / p)})


def remainder(cp: ControlledPath, i: int, j: int) -> np.ndarray:
    return cp.remainder(i, j)


def translate(rp: RoughPath, h) -> RoughPath:
    """Translated rough path ``(x + h, X + int h dx + int x dh + int h dh)``.

    The cross integrals are exact for the linear interpolants on each
    step; multi-step values follow from Chen's relation.
    """
    hv = _driver(h)
    if hv.shape != rp.x.shape:
        raise StructuralError(f"shift must have shape {rp.x.shape}, got {hv.shape}")
    dx = rp.path.increments
    dh = np.diff(hv, axis=0)
    cross = 0.5 * (dx[:, :, None] * dh[:, None, :] + dh[:, :, None] * dx[:, None, :]
                   + dh[:, :, None] * dh[:, None, :])
    steps = rp.steps + cross
    new_path = SamplePath(rp.path.grid, rp.x + hv, rp.path.seed)
    return RoughPath(new_path, steps, rp.geometric)


def translation_check(rp: RoughPath, h, p: float, sigma: float, interval=None,
                      slack: float = 1e-10) -> InequalityReport:
    """Check ``||T_h x|| <= K(p,sigma) (||x|| + |t-s|^{sigma/2} ||h||_{(q,sigma)})``.

    Norms are the (p, sigma) rough-path norm and, for ``h``, the
    (p/2, sigma) path variation.
    """
    k = translation_constant(p)
    i0, i1 = _interval(rp.n, interval)
    hv = _driver(h)
    t = rp.times
    shifted = translate(rp, hv)
    lhs = rough_path_norm(shifted, p, sigma, (i0, i1))
    xn = rough_path_norm(rp, p, sigma, (i0, i1))
    hn = p_sigma_var(hv, p / 2.0, sigma, t, (i0, i1)).value
    rhs = k * (xn + (t[i1] - t[i0]) ** (sigma / 2.0) * hn)
    return InequalityReport.compare("translated path estimate", lhs, rhs, slack,
                                    K=k, x_norm=xn, h_norm=hn)


def young_loeve_check(y, x, p: float, q: float, slack: float = 1e-12) -> InequalityReport:
    """``|int y dx - y_s x_{s,t}| <= K(p,q) ||y||_{q-var} ||x||_{p-var}`` over the grid."""
    res = young_integral(y, x, p, q)
    lhs = _frob(res.value - res.details["first_order"])
    return InequalityReport.compare("Young-Loeve", lhs, res.local_error_bound, slack, K=res.details["K"])


@dataclass
class ResidualReport:
    residual: float
    residual_path: np.ndarray = field(repr=False)
    terms: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return jsonable({"residual": self.residual})


def _gubinelli_of_dv_g(DV, D2V, Dg, y, gy):
    """Integrand ``DV(y) g(y)`` and its Gubinelli derivative along the solution.

    Shapes: ``DV`` (n, *R, d), ``D2V`` (n, *R, d, d), ``Dg`` (n, d, m, d),
    ``gy`` (n, d, m).  Returns integrand (n, *R, m) and derivative
    (n, *R, m, m) with entry ``[..., j, k] = DV (Dg_j g_k) + D2V[g_j, g_k]``.
    """
    z = np.einsum("n...i,nij->n...j", DV, gy)
    dg_g = np.einsum("nijl,nlk->nijk", Dg, gy)
    zp = (np.einsum("n...i,nijk->n...jk", DV, dg_g)
          + np.einsum("n...il,nij,nlk->n...jk", D2V, gy, gy))
    return z, zp


def change_of_variables_check(V: Callable, DV: Callable, D2V: Callable, traj, drift, diff,
                              rp: RoughPath, valid=None) -> ResidualReport:
    """Residual of the change-of-variables formula along a solution.

    Compares ``V(y_t) - V(y_0)`` with the time integral of
    ``DV(y)(Ay + f(y))`` (trapezoid), the compensated rough integral of
    ``DV(y) g(y)`` with Gubinelli derivative
    ``DV (Dg g) + D2V[g, g]``, and half the Young integral of
    ``D2V[g, g]`` against the bracket (skipped for geometric lifts).

    ``V`` maps a state (d,) to an array of shape R; ``DV`` adds one
    trailing axis of length d, ``D2V`` two.  ``valid`` optionally restricts
    the comparison to a contiguous index block (used where ``V`` is
    singular at the origin).
    """
    y = np.asarray(traj.y, dtype=float)
    n, d = y.shape
    if rp.n != n:
        raise StructuralError("trajectory and rough path live on different grids")
    lo, hi = (0, n - 1) if valid is None else valid
    ys = y[lo:hi + 1]
    t = rp.times[lo:hi + 1]
    vals = np.stack([np.asarray(V(v), dtype=float) for v in ys])
    dv = np.stack([np.asarray(DV(v), dtype=float) for v in ys])
    d2v = np.stack([np.asarray(D2V(v), dtype=float) for v in ys])
    if dv.shape[-1] != d or d2v.shape[-2:] != (d, d):
        raise StructuralError("derivative evaluators do not match the state dimension")
    gy = np.stack([diff.g(v) for v in ys])
    dg = np.stack([diff.Dg(v) for v in ys])
    fy = np.stack([drift.A @ v + drift.f(v) for v in ys])
    drift_rate = np.einsum("n...i,ni->n...", dv, fy)
    dt = np.diff(t)
    time_int = np.zeros_like(vals)
    steps = 0.5 * (drift_rate[1:] + drift_rate[:-1]) * dt.reshape((-1,) + (1,) * (vals.ndim - 1))
    np.cumsum(steps, axis=0, out=time_int[1:])
    z, zp = _gubinelli_of_dv_g(dv, d2v, dg, ys, gy)
    sub = rp.restrict(lo, hi)
    rough_int = rough_integral_path(ControlledPath(sub, z, zp))
    terms = {"time": time_int, "rough": rough_int}
    rhs = time_int + rough_int
    if not rp.geometric:
        br = np.stack([np.outer(sub.x[j] - sub.x[0], sub.x[j] - sub.x[0])
                       - (sub.area(0, j) + sub.area(0, j).T) for j in range(sub.n)])
        hess = np.einsum("n...il,nij,nlk->n...jk", d2v, gy, gy)
        dbr = np.diff(br, axis=0)
        bterm = np.zeros_like(vals)
        np.cumsum(0.5 * np.einsum("n...jk,njk->n...", hess[:-1], dbr), axis=0, out=bterm[1:])
        terms["bracket"] = bterm
        rhs = rhs + bterm
    resid = vals - vals[0] - rhs
    flat = resid.reshape(resid.shape[0], -1)
    path = np.sqrt(np.einsum("ij,ij->i", flat, flat))
    return ResidualReport(float(path.max()), path, terms)
