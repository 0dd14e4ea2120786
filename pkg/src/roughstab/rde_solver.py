"""Second-order one-step solver for ``dy = [A y + f(y)] dt + g(y) dx``.

One step over ``[t_k, t_{k+1}]`` reads

    y_{k+1} = y_k + (A y_k + f(y_k)) dt + g(y_k) x_{k,k+1} + sum_{j,l} (Dg_j g_l)(y_k) X_{k,k+1}[j, l]

where ``g_j`` is the j-th column of ``g`` and ``Dg_j g_l`` its derivative in
the direction ``g_l``.  The drift is integrated by a left-point rule.

Conventions: ``g(y)`` has shape ``(d, m)``; ``Dg(y)[i, j, l]`` is
``d g_ij / d y_l`` (shape ``(d, m, d)``); ``D2g(y)[i, j, l, r]`` is the
second derivative (shape ``(d, m, d, d)``).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, DomainError, StructuralError
from .gaussian_paths import RoughPath, TimeGrid, stream
from .greedy import greedy_count
from .norms import _interval, p_var, two_param_var
from .reports import InequalityReport, jsonable
from .rough_core import ControlledPath, sewing_constant

DIVERGENCE_LIMIT = 1e12


def _zero_f(y):
    return np.zeros_like(y)


@dataclass(frozen=True)
class DriftSpec:
    """Linear part ``A`` plus nonlinearity ``f`` with ``f(0) = 0``.

    ``lambda_A`` defaults to minus the largest eigenvalue of the symmetric
    part of ``A``.  ``h_fn`` bounds ``||f(y)|| <= ||y|| h(||y||)`` and is
    probed at construction when given.
    """

    A: np.ndarray
    f: Callable = _zero_f
    lambda_A: Optional[float] = None
    C_f: float = 0.0
    h_fn: Optional[Callable] = None
    name: str = "drift"
    probes: int = 200

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise StructuralError("A must be square")
        object.__setattr__(self, "A", A)
        top = float(np.linalg.eigvalsh(0.5 * (A + A.T)).max())
        lam = -top if self.lambda_A is None else float(self.lambda_A)
        if lam <= 0:
            raise DomainError("A must be negative definite (lambda_A > 0)")
        if top > -lam + 1e-10:
            raise DomainError(f"symmetric part of A has eigenvalue {top:g} > -lambda_A = {-lam:g}")
        object.__setattr__(self, "lambda_A", lam)
        d = A.shape[0]
        if np.linalg.norm(self.f(np.zeros(d))) > 1e-12:
            raise DomainError("f(0) must vanish")
        if self.h_fn is not None:
            rng = stream(12345)
            for y in rng.standard_normal((self.probes, d)) * rng.exponential(2.0, (self.probes, 1)):
                r = np.linalg.norm(y)
                if np.linalg.norm(self.f(y)) > r * self.h_fn(r) * (1 + 1e-9) + 1e-12:
                    raise DomainError(f"||f(y)|| exceeds ||y|| h(||y||) at y = {y}")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def __call__(self, y):
        return self.A @ y + self.f(y)


@dataclass(frozen=True)
class DiffusionSpec:
    """Diffusion coefficient ``g`` with its derivatives and declared bound ``C_g``."""

    g: Callable
    Dg: Callable
    D2g: Optional[Callable] = None
    C_g: float = 0.0
    vanishing_at_zero: bool = True
    dim: int = 1
    noise_dim: int = 1
    name: str = "diffusion"
    check_eps: float = 1e-6

    def __post_init__(self):
        d, m = self.dim, self.noise_dim
        z = np.zeros(d)
        if np.asarray(self.g(z)).shape != (d, m):
            raise StructuralError(f"g must return shape {(d, m)}")
        if np.asarray(self.Dg(z)).shape != (d, m, d):
            raise StructuralError(f"Dg must return shape {(d, m, d)}")
        if self.vanishing_at_zero and np.linalg.norm(self.g(z)) >= 1e-12:
            raise DomainError("g(0) must vanish")
        err = self.derivative_defect()
        if err > 1e-4:
            raise DomainError(f"Dg is inconsistent with g (finite-difference defect {err:g})")

    def derivative_defect(self, probes: int = 8) -> float:
        """Largest finite-difference mismatch of ``Dg`` (and ``D2g``) on random probes."""
        rng = stream(777)
        eps = self.check_eps
        worst = 0.0
        for _ in range(probes):
            y = rng.standard_normal(self.dim)
            e = rng.standard_normal(self.dim)
            e /= np.linalg.norm(e)
            fd = (np.asarray(self.g(y + eps * e)) - np.asarray(self.g(y - eps * e))) / (2 * eps)
            worst = max(worst, float(np.linalg.norm(fd - np.asarray(self.Dg(y)) @ e)))
            if self.D2g is not None:
                fd2 = (np.asarray(self.Dg(y + eps * e)) - np.asarray(self.Dg(y - eps * e))) / (2 * eps)
                worst = max(worst, float(np.linalg.norm(fd2 - np.asarray(self.D2g(y)) @ e)))
        return worst


@dataclass
class Trajectory:
    grid: TimeGrid
    y: np.ndarray
    y_prime: np.ndarray
    scheme: str = "second-order"
    step_stats: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.grid.points

    def controlled(self, rp: RoughPath) -> ControlledPath:
        return ControlledPath(rp, self.y, self.y_prime)

    def to_csv(self) -> str:
        d = self.y.shape[1]
        lines = ["t," + ",".join(f"y{i + 1}" for i in range(d))]
        for t, row in zip(self.grid.points, self.y):
            lines.append(",".join(f"{v:.17g}" for v in (t, *row)))
        return "\n".join(lines) + "\n"


def _step(drift, diff, y, dt, dx, area):
    gy = np.asarray(diff.g(y))
    out = y + gy @ dx
    if drift is not None:
        out = out + drift(y) * dt
    if np.any(area):
        dg = np.asarray(diff.Dg(y))
        out = out + np.einsum("ijl,lk,jk->i", dg, gy, area)
    return out


def solve(drift: Optional[DriftSpec], diff: DiffusionSpec, rp: RoughPath, y0, interval=None) -> Trajectory:
    """Integrate the equation on an index interval of the rough path's grid.

    ``drift=None`` gives the pure-diffusion equation.

    Raises
    ------
    DivergenceError
        When the state leaves ``||y|| <= 1e12`` or becomes non-finite.
    """
    if not rp.geometric:
        raise StructuralError("the solver expects a geometric rough path")
    i0, i1 = _interval(rp.n, interval)
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if y0.shape != (diff.dim,) or not np.all(np.isfinite(y0)):
        raise StructuralError(f"y0 must be a finite vector of length {diff.dim}")
    if rp.dims != diff.noise_dim:
        raise StructuralError("rough path and diffusion have different noise dimensions")
    if drift is not None and drift.dim != diff.dim:
        raise StructuralError("drift and diffusion have different state dimensions")
    t = rp.times
    x = rp.x
    areas = rp.step_areas(i0, i1)
    ys = np.empty((i1 - i0 + 1, diff.dim))
    ys[0] = y0
    y = y0
    for k in range(i0, i1):
        y = _step(drift, diff, y, t[k + 1] - t[k], x[k + 1] - x[k], areas[k - i0])
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"solution diverged at step {k + 1}", k)
        ys[k + 1 - i0] = y
    grid = TimeGrid(t[i0:i1 + 1])
    yp = np.stack([diff.g(v) for v in ys])
    dts = np.diff(grid.points)
    return Trajectory(grid, ys, yp, "second-order",
                      {"max_step": float(dts.max()), "steps": int(dts.size), "interval": (i0, i1)})


def solve_pure_diffusion(diff: DiffusionSpec, rp: RoughPath, z0, interval=None) -> Trajectory:
    return solve(None, diff, rp, z0, interval)


def solve_batch(A: np.ndarray, f: Callable, g: Callable, Dg: Callable, times: np.ndarray,
                x: np.ndarray, y0) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized solver over a batch of geometric piecewise-linear drivers.

    ``x`` has shape ``(B, n, m)``; ``f``, ``g`` and ``Dg`` act on state
    arrays of shape ``(B, d)`` returning ``(B, d)``, ``(B, d, m)`` and
    ``(B, d, m, d)``.  Returns ``(log_norms, diverged_at)``: log ``||y||``
    of shape ``(B, n)`` (``-inf`` where the state is exactly 0) and the step
    index at which each member diverged (``-1`` otherwise).  Diverged
    members are frozen at their last finite state.
    """
    B, n, m = x.shape
    d = A.shape[0]
    y = np.broadcast_to(np.asarray(y0, dtype=float), (B, d)).copy()
    logn = np.empty((B, n))
    with np.errstate(divide="ignore"):
        logn[:, 0] = np.log(np.linalg.norm(y, axis=1))
    alive = np.ones(B, dtype=bool)
    div = np.full(B, -1)
    dxs = np.diff(x, axis=1)
    dts = np.diff(times)
    for k in range(n - 1):
        dx = dxs[:, k]
        area = 0.5 * dx[:, :, None] * dx[:, None, :]
        gy = g(y)
        new = (y + (y @ A.T + f(y)) * dts[k] + np.einsum("bij,bj->bi", gy, dx)
               + np.einsum("bijl,blk,bjk->bi", Dg(y), gy, area))
        norm = np.linalg.norm(new, axis=1)
        bad = alive & (~np.isfinite(norm) | (norm > DIVERGENCE_LIMIT))
        div[bad] = k
        alive &= ~bad
        y = np.where(alive[:, None], new, y)
        with np.errstate(divide="ignore"):
            logn[:, k + 1] = np.log(np.linalg.norm(y, axis=1))
    return logn, div


def linearized_flow(diff: DiffusionSpec, rp: RoughPath, base: Trajectory, xi0, interval=None) -> Trajectory:
    """Derivative of the discrete pure-diffusion flow along ``base``.

    ``xi0`` is a vector (one direction) or a ``(d, r)`` matrix of
    directions.  The update is the exact derivative of the scheme's step
    with respect to the state, so finite differences of the flow agree
    with it to first order in the perturbation.
    """
    if diff.D2g is None:
        raise StructuralError("linearized flow needs D2g")
    i0, i1 = _interval(rp.n, interval)
    if base.y.shape[0] != i1 - i0 + 1:
        raise StructuralError("base trajectory does not match the interval")
    xi = np.asarray(xi0, dtype=float)
    vec = xi.ndim == 1
    xi = xi[:, None] if vec else xi
    areas = rp.step_areas(i0, i1)
    out = np.empty((i1 - i0 + 1,) + xi.shape)
    out[0] = xi
    x = rp.x
    for k in range(i1 - i0):
        z = base.y[k]
        dx = x[i0 + k + 1] - x[i0 + k]
        a = areas[k]
        gz, dg, d2g = np.asarray(diff.g(z)), np.asarray(diff.Dg(z)), np.asarray(diff.D2g(z))
        lin = np.einsum("ijl,j,lr->ir", dg, dx, xi)
        # d/dz of (Dg_j g_k)(z) applied to xi: D2g_j[g_k, xi] + Dg_j (Dg_k xi)
        t1 = np.einsum("ijls,lk,sr,jk->ir", d2g, gz, xi, a)
        t2 = np.einsum("ijl,lks,sr,jk->ir", dg, dg, xi, a)
        xi = xi + lin + t1 + t2
        out[k + 1] = xi
    vals = out[:, :, 0] if vec else out
    return Trajectory(base.grid, vals.reshape(vals.shape[0], -1), np.zeros((vals.shape[0], 0)),
                      "linearized", {"directions": xi.shape[1]})


def scalar_flow(c: float, rp: RoughPath, z0: float, interval=None) -> np.ndarray:
    """Closed-form flow ``z0 exp(c x_{a,t})`` of ``dz = c z dx`` (scalar, geometric lift)."""
    i0, i1 = _interval(rp.n, interval)
    x = rp.x[i0:i1 + 1, 0]
    return float(z0) * np.exp(c * (x - x[0]))


def transformed_solve(drift: DriftSpec, c: float, rp: RoughPath, y0: float, interval=None,
                      rtol: float = 1e-10, atol: float = 1e-12) -> np.ndarray:
    """Scalar ``dy = F(y) dt + c y dx`` through the pathwise transformation.

    With ``y_t = u_t exp(c x_{a,t})`` the equation becomes the random ODE
    ``u' = exp(-c x_{a,t}) F(u exp(c x_{a,t}))`` driven by the piecewise-linear
    interpolant of ``x``; it is integrated by an adaptive Runge-Kutta method
    that restarts at every grid point (where the driver has a kink).
    This is an independent route to the solution used to cross-check
    :func:`solve`.
    """
    from scipy.integrate import solve_ivp

    if drift.dim != 1 or rp.dims != 1:
        raise StructuralError("the transformation oracle is scalar only")
    i0, i1 = _interval(rp.n, interval)
    t = rp.times[i0:i1 + 1]
    x = rp.x[i0:i1 + 1, 0] - rp.x[i0, 0]
    u = float(y0)
    out = np.empty(t.size)
    out[0] = u
    for k in range(t.size - 1):
        slope = (x[k + 1] - x[k]) / (t[k + 1] - t[k])

        def rhs(s, v, k=k, slope=slope):
            e = np.exp(c * (x[k] + slope * (s - t[k])))
            return np.atleast_1d(drift(np.array([v[0] * e]))) / e

        sol = solve_ivp(rhs, (t[k], t[k + 1]), [u], method="RK45", rtol=rtol, atol=atol)
        if not sol.success:
            raise DivergenceError(f"transformed ODE failed on step {k}: {sol.message}", k)
        u = float(sol.y[0, -1])
        out[k + 1] = u
    return out * np.exp(c * x)


def lipschitz_probe(drift: DriftSpec, radius: float = 1.0, pairs: int = 1000, seed: int = 0) -> float:
    """``||A||_2`` plus the largest difference quotient of ``f`` over random pairs."""
    rng = stream(seed)
    d = drift.dim
    u = rng.uniform(-radius, radius, (pairs, d))
    v = rng.uniform(-radius, radius, (pairs, d))
    num = np.linalg.norm(np.stack([drift.f(a) - drift.f(b) for a, b in zip(u, v)]), axis=1)
    den = np.linalg.norm(u - v, axis=1)
    return float(np.linalg.norm(drift.A, 2) + np.max(num / den))


def solution_bound_constant(C_g: float, L_f: float, p: float) -> float:
    """``M = max{C_a C_g (1 + C_g^2), L_f (C_g + 1), 1/3}`` with ``C_a`` the sewing constant."""
    c_alpha = sewing_constant(1.0 / p)
    return max(c_alpha * C_g * (1 + C_g ** 2), L_f * (C_g + 1), 1.0 / 3.0)


def controlled_norm(traj: Trajectory, rp: RoughPath, p: float, sigma: float, interval=None) -> float:
    """``||y'||_{p-var} + ||R^y||_{(p/2,sigma)}`` on an index interval of ``rp``.

    ``traj`` must cover exactly that interval.
    """
    i0, i1 = _interval(rp.n, interval)
    sub = rp.restrict(i0, i1)
    cp = ControlledPath(sub, traj.y, traj.y_prime)
    t = sub.times
    yp = cp.y_prime.reshape(sub.n, -1)
    first = p_var(yp, p).value
    second = two_param_var(cp.remainder_norms(), p / 2.0, sigma, t).value
    return first + second


def solution_bound_check(traj: Trajectory, rp: RoughPath, drift: DriftSpec, diff: DiffusionSpec,
                         mu: float, p: float, sigma: float, interval=None,
                         nbar_override: Optional[int] = None, L_f: Optional[float] = None) -> dict:
    """Check the controlled-norm and sup-norm bounds driven by the greedy count.

    With ``Nbar`` the time-term greedy count at ``gamma = mu / (3 M)``,
    ``r = (1 + mu) / (1 - mu)`` and ``P = Nbar + 1`` the number of greedy
    pieces, the two checks are

        ||y, y'||_{x,(p,sigma)} <= 1/2 ||y_a|| P r^P
        ||y||_inf               <= ||y_a|| r^P

    The same bounds with ``Nbar`` in place of ``P`` are reported under
    ``details['crossing_form']``.  Both right-hand sides increase with the
    count, so a grid-limited count (every step crossing, flagged as
    ``grid_limited``) can only make the check stricter.
    ``nbar_override`` replaces the computed count (negative controls).
    """
    if not 0 < mu < 1:
        raise DomainError("mu must lie in (0, 1)")
    i0, i1 = _interval(rp.n, interval)
    t = rp.times
    if t[i1] - t[i0] > 1 + 1e-12:
        raise DomainError("the solution bounds are stated on intervals of length <= 1")
    if traj.y.shape[0] != i1 - i0 + 1:
        raise StructuralError("trajectory does not cover the interval")
    lf = lipschitz_probe(drift, radius=max(1.0, float(np.abs(traj.y).max()))) if L_f is None else L_f
    M = solution_bound_constant(diff.C_g, lf, p)
    gamma = mu / (3.0 * M)
    sub = rp.restrict(i0, i1)
    nbar = greedy_count(sub, gamma, p, sigma, None, "timeterm")
    nbar_2m = greedy_count(sub, mu / (2.0 * M), p, sigma, None, "timeterm")
    used = nbar if nbar_override is None else int(nbar_override)
    log_r = math.log((1 + mu) / (1 - mu))
    ya = float(np.linalg.norm(traj.y[0]))
    lhs_c = controlled_norm(traj, rp, p, sigma, (i0, i1))
    lhs_s = float(np.linalg.norm(traj.y, axis=1).max())

    def bounds(k):
        # (controlled, sup) right-hand sides with k in the exponent; inf on overflow
        with np.errstate(over="ignore"):
            grow = float(np.exp(k * log_r))
        return 0.5 * ya * k * grow, ya * grow

    pieces = used + 1
    rc, rs = bounds(pieces)
    cc, cs = bounds(used)
    common = {"M": M, "L_f": lf, "gamma": gamma, "nbar": nbar, "nbar_mu_over_2M": nbar_2m,
              "nbar_used": used, "pieces": pieces,
              "grid_limited": nbar >= i1 - i0 - 1,
              "crossing_form": {"controlled": lhs_c <= cc + 1e-12, "sup": lhs_s <= cs + 1e-12}}
    return {
        "controlled": InequalityReport.compare("controlled norm bound", lhs_c, rc, 1e-12, **common),
        "sup": InequalityReport.compare("sup norm bound", lhs_s, rs, 1e-12, **common),
    }


def run_manifest(**fields) -> dict:
    """JSON-ready manifest with a sha256 hash of its canonical content."""
    body = jsonable(fields)
    blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
    body["content_hash"] = hashlib.sha256(blob).hexdigest()
    return body
