"""Numerical checks of exponential stability for small diffusion.

Covers the polar decomposition ``y = exp(log||y||) theta``, residuals of
the change-of-variables equations satisfied by ``||y||^2``, ``||y||``,
``log||y||`` and ``theta``, the angular seminorm bound, exponent sweeps
over the diffusion scale, and the discrete Gronwall chain for
``exp(2 lam t) ||y_t||^2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, StructuralError
from .gaussian_paths import FbmSpec, RoughPath, TimeGrid, sample_fbm_indexed
from .norms import _interval, holder_seminorm, p_var, two_param_holder, two_param_var
from .rde_solver import DiffusionSpec, DriftSpec, Trajectory, controlled_norm, solve_batch
from .reports import InequalityReport, jsonable
from .rough_core import (
    ControlledPath,
    change_of_variables_check,
    rough_integral_path,
    sewing_constant,
    young_constant,
)

NORM_FLOOR = 1e-30
BURN_IN = 0.2


@dataclass
class PolarSeries:
    grid: TimeGrid
    lognorm: np.ndarray
    theta: np.ndarray
    valid_mask: np.ndarray
    floor: float = NORM_FLOOR

    @property
    def first_invalid(self) -> Optional[int]:
        bad = np.flatnonzero(~self.valid_mask)
        return int(bad[0]) if bad.size else None


def polar_decompose(traj, floor: float = NORM_FLOOR) -> PolarSeries:
    """Log-norm and direction of each state; states below ``floor`` are masked."""
    y = np.asarray(traj.y, dtype=float)
    r = np.linalg.norm(y, axis=1)
    valid = r >= floor
    if not valid.any():
        raise DomainError("every state lies below the norm floor: empty polar series")
    with np.errstate(divide="ignore", invalid="ignore"):
        logn = np.where(valid, np.log(np.where(valid, r, 1.0)), -np.inf)
        theta = np.where(valid[:, None], y / np.where(valid, r, 1.0)[:, None], np.nan)
    return PolarSeries(traj.grid, logn, theta, valid, floor)


def lyapunov_estimate(polar: PolarSeries) -> float:
    """``(log||y_T|| - log||y_0||) / (T - t_0)``.

    When the state falls below the floor the exponent is computed from
    the first crossing time, with ``log(floor)`` as terminal value.
    """
    t = polar.grid.points
    k = polar.first_invalid
    if k is None:
        return float((polar.lognorm[-1] - polar.lognorm[0]) / (t[-1] - t[0]))
    return float((math.log(polar.floor) - polar.lognorm[0]) / (t[k] - t[0]))


def exponent_from_lognorms(logn: np.ndarray, times: np.ndarray, burn_in: float = BURN_IN,
                           floor: float = NORM_FLOOR) -> np.ndarray:
    """Endpoint quotients of log-norm paths over the last ``1 - burn_in`` of the horizon.

    ``logn`` has shape ``(B, n)``.  A path that falls below ``floor`` gets
    the exponent implied by its crossing time, measured from the start of
    the averaging window (or from ``t_0`` if it crosses before that).
    """
    logn = np.atleast_2d(logn)
    t = np.asarray(times)
    k0 = int(np.searchsorted(t, t[0] + burn_in * (t[-1] - t[0])))
    lf = math.log(floor)
    out = np.empty(logn.shape[0])
    for b, row in enumerate(logn):
        below = np.flatnonzero(row < lf)
        if below.size == 0:
            out[b] = (row[-1] - row[k0]) / (t[-1] - t[k0])
        else:
            k = below[0]
            start = k0 if k > k0 else 0
            out[b] = (lf - row[start]) / (t[k] - t[start])
    return out


# ---------------------------------------------------------------------------
# Functionals of the state with first and second derivatives.


def _sq_norm():
    return (lambda y: np.array(y @ y),
            lambda y: 2.0 * y,
            lambda y: 2.0 * np.eye(y.size))


def _norm():
    def dv(y):
        return y / np.linalg.norm(y)

    def d2v(y):
        r = np.linalg.norm(y)
        th = y / r
        return (np.eye(y.size) - np.outer(th, th)) / r

    return (lambda y: np.array(np.linalg.norm(y)), dv, d2v)


def _log_norm():
    def dv(y):
        return y / (y @ y)

    def d2v(y):
        r2 = y @ y
        return np.eye(y.size) / r2 - 2.0 * np.outer(y, y) / r2 ** 2

    return (lambda y: np.array(0.5 * math.log(y @ y)), dv, d2v)


def _direction():
    def v(y):
        return y / np.linalg.norm(y)

    def dv(y):
        r = np.linalg.norm(y)
        th = y / r
        return (np.eye(y.size) - np.outer(th, th)) / r

    def d2v(y):
        r = np.linalg.norm(y)
        th = y / r
        eye = np.eye(y.size)
        t = (-np.einsum("il,k->ilk", eye, th) - np.einsum("ik,l->ilk", eye, th)
             - np.einsum("i,lk->ilk", th, eye) + 3.0 * np.einsum("i,l,k->ilk", th, th, th))
        return t / r ** 2

    return (v, dv, d2v)


FUNCTIONALS = {"norm_sq": _sq_norm, "norm": _norm, "log_norm": _log_norm, "theta": _direction}


def step1_rde_residuals(traj, drift: DriftSpec, diff: DiffusionSpec, rp: RoughPath,
                        floor: float = NORM_FLOOR) -> dict:
    """Max residuals of the change-of-variables equations for four functionals.

    The three functionals singular at the origin are checked only up to
    the first state below ``floor``.  For ``d = 1`` the direction is
    frozen and its residual is identically zero.
    """
    polar = polar_decompose(traj, floor)
    k = polar.first_invalid
    last = traj.y.shape[0] - 1 if k is None else k - 1
    out = {}
    for name, make in FUNCTIONALS.items():
        V, DV, D2V = make()
        valid = None if name == "norm_sq" else (0, last)
        if valid is not None and last < 1:
            out[name] = math.nan
            continue
        out[name] = change_of_variables_check(V, DV, D2V, traj, drift, diff, rp, valid).residual
    return out


# ---------------------------------------------------------------------------
# Angular bound.


def angular_constant(drift: DriftSpec, C_g: float, p: float) -> float:
    """``M = max{2 (C_f + ||A||), 96 K_a (1 + C_a) C_g^2 (1 + C_g), 1/2}``.

    ``K_a = K(p, p/2)`` is the Young constant and ``C_a`` the sewing
    constant at exponent ``1/p``.
    """
    k_a = young_constant(p, p / 2.0)
    c_a = sewing_constant(1.0 / p)
    return max(2.0 * (drift.C_f + np.linalg.norm(drift.A, 2)),
               96.0 * k_a * (1.0 + c_a) * C_g ** 2 * (1.0 + C_g), 0.5)


def direction_derivative(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """``Q(y, theta) = G - <theta, G> theta`` with ``G = g(y) / ||y||``, per state."""
    r = np.linalg.norm(y, axis=1)
    th = y / r[:, None]
    G = gy / r[:, None, None]
    return G - np.einsum("ni,nij->nj", th, G)[:, None, :] * th[:, :, None]


def angular_rhs(span: float, M: float, mu: float, nu: float, yy: float, xnorm: float) -> float:
    """Right-hand side of the angular seminorm bound."""
    a = 2.0 / nu
    pre = span ** 2 * (8.0 * M) ** a / (4.0 * (1.0 - mu) * mu ** (a - 1.0))
    return pre * (1.0 + yy ** a + xnorm ** a + 0.5 * yy ** (2 * a) + 0.5 * xnorm ** (2 * a))


def angular_bound_check(traj: Trajectory, drift: DriftSpec, diff: DiffusionSpec, rp: RoughPath,
                        mu: float, p: float = 2.5, nu: float = 0.42, interval=None,
                        floor: float = NORM_FLOOR) -> InequalityReport:
    """Check the seminorm bound on ``(theta, theta')`` over an interval of length <= 1.

    LHS: ``||theta'||_{p-var} + ||R^theta||_{p/2-var}``.  RHS: the bound
    with ``M`` from :func:`angular_constant`, ``||y, y'||_{x,p}`` the
    controlled seminorm of the solution, and ``nu``-Hölder norms of
    ``x`` and ``X`` (the bracket term vanishes for geometric lifts).
    """
    if not 0 < mu < 1:
        raise DomainError("mu must lie in (0, 1)")
    if not 1.0 / p < nu <= 0.5:
        raise DomainError("need 1/p < nu <= 1/2")
    i0, i1 = _interval(rp.n, interval)
    t = rp.times
    span = t[i1] - t[i0]
    if span > 1 + 1e-12:
        raise DomainError("the angular bound is stated on intervals of length <= 1")
    y = traj.y
    if y.shape[0] != i1 - i0 + 1:
        raise StructuralError("trajectory does not cover the interval")
    if np.linalg.norm(y, axis=1).min() < floor:
        return InequalityReport("angular bound", math.nan, math.nan, False, 0.0,
                                {"applicable": False})
    sub = rp.restrict(i0, i1)
    theta = y / np.linalg.norm(y, axis=1)[:, None]
    gy = np.stack([diff.g(v) for v in y])
    thp = direction_derivative(y, gy)
    cp = ControlledPath(sub, theta, thp)
    lhs = (p_var(thp.reshape(sub.n, -1), p).value
           + two_param_var(cp.remainder_norms(), p / 2.0).value)
    yy = controlled_norm(traj, rp, p, 0.0, (i0, i1))
    ts = sub.times
    xh = holder_seminorm(sub.x, nu, ts).value
    Xh = two_param_holder(sub.area_norms(), 2 * nu, ts)
    M = angular_constant(drift, diff.C_g, p)
    rhs = angular_rhs(span, M, mu, nu, yy, xh + Xh)
    return InequalityReport.compare("angular bound", lhs, rhs, 1e-12, applicable=True, M=M,
                                    K_alpha=young_constant(p, p / 2.0),
                                    C_alpha=sewing_constant(1.0 / p), yy=yy, x_holder=xh,
                                    X_holder=Xh, nu=nu)


# ---------------------------------------------------------------------------
# Exponent sweeps.


@dataclass
class StabilityReport:
    lyapunov_estimate: float
    window_rates: list
    threshold_scan: list
    gronwall_chain: Optional[dict] = None
    rows: list = field(default_factory=list, repr=False)
    threshold: Optional[float] = None
    h_at_zero: Optional[float] = None
    h_realized_sup: Optional[float] = None

    def to_csv(self) -> str:
        lines = ["cg,seed,exponent,stable"]
        for cg, seed, ex, st in self.rows:
            lines.append(f"{cg:.17g},{seed},{ex:.17g},{int(st)}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return jsonable({"lyapunov_estimate": self.lyapunov_estimate,
                         "threshold_scan": [{"cg": c, "mean_exponent": m, "fraction_stable": f}
                                            for c, m, f in self.threshold_scan],
                         "window_rates": self.window_rates,
                         "threshold": self.threshold, "h_at_zero": self.h_at_zero,
                         "h_realized_sup": self.h_realized_sup,
                         "gronwall_chain": self.gronwall_chain})

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


WINDOWS = 5


@dataclass
class Ensemble:
    """Per-member results of one system over sub-streams ``start, start+1, ...``."""

    exponents: np.ndarray
    full_horizon: np.ndarray
    diverged: np.ndarray
    window_rates: np.ndarray
    max_norm: float

    @classmethod
    def merge(cls, parts: Sequence["Ensemble"]) -> "Ensemble":
        return cls(np.concatenate([q.exponents for q in parts]),
                   np.concatenate([q.full_horizon for q in parts]),
                   np.concatenate([q.diverged for q in parts]),
                   np.concatenate([q.window_rates for q in parts]),
                   max(q.max_norm for q in parts))


def ensemble_exponents(system, spec: FbmSpec, n_steps: int, seeds: int, seed: int = 0,
                       y0=None, burn_in: float = BURN_IN, chunk: int = 50,
                       start: int = 0) -> Ensemble:
    """Exponent estimates for ``seeds`` independent drivers of one system.

    Member ``k`` is driven by sub-stream ``start + k`` of ``seed``.
    Divergent members get exponent ``+inf``.  ``max_norm`` is the largest
    state norm seen (for probing the nonlinearity on the realized range).
    """
    d, m = system.dim, system.noise_dim
    if spec.dims != m:
        raise StructuralError("fBm dimension must match the noise dimension")
    if seeds <= 0:
        raise DomainError("need at least one seed")
    grid = TimeGrid.uniform(0.0, spec.horizon, n_steps + 1)
    t = grid.points
    y0 = np.ones(d) / math.sqrt(d) if y0 is None else np.asarray(y0, dtype=float)
    edges = np.searchsorted(t, np.linspace(t[0], t[-1], WINDOWS + 1) - 1e-12)
    parts = []
    for lo in range(start, start + seeds, chunk):
        hi = min(lo + chunk, start + seeds)
        x = np.stack([sample_fbm_indexed(spec, grid, seed, i).values for i in range(lo, hi)])
        logn, dv = solve_batch(system.drift.A, system.drift.f, system.diff.g, system.diff.Dg,
                               t, x, y0)
        bad = dv >= 0
        e = exponent_from_lognorms(logn, t, burn_in)
        f = exponent_from_lognorms(logn, t, 0.0)
        e[bad] = np.inf
        f[bad] = np.inf
        with np.errstate(invalid="ignore"):
            w = (logn[:, edges[1:]] - logn[:, edges[:-1]]) / (t[edges[1:]] - t[edges[:-1]])
        finite = logn[np.isfinite(logn)]
        parts.append(Ensemble(e, f, bad, w, float(np.exp(finite.max())) if finite.size else 0.0))
    return Ensemble.merge(parts)


def sweep_report(scales: Sequence[float], ensembles: Sequence[Ensemble],
                 h_fn: Optional[Callable] = None) -> StabilityReport:
    """Aggregate per-scale ensembles.

    The threshold is the largest scanned scale below which every scale
    (itself included) had 100% negative exponents.  When ``h_fn`` is
    given, ``h(0)`` and the sup of ``h`` over the realized norm range
    ``[0, max ||y||]`` are reported side by side.
    """
    scan, rows, rates = [], [], []
    threshold = None
    broken = False
    for c, ens in zip(scales, ensembles):
        ex = ens.exponents
        stable = ex < 0
        fin = np.isfinite(ex)
        scan.append((float(c), float(np.mean(ex[fin])) if fin.any() else math.inf,
                     float(np.mean(stable))))
        rows += [(float(c), s, float(e), bool(st)) for s, (e, st) in enumerate(zip(ex, stable))]
        with np.errstate(invalid="ignore"):
            rates.append([float(v) for v in np.nanmean(np.where(np.isfinite(ens.window_rates),
                                                                ens.window_rates, np.nan), axis=0)])
        if stable.all() and not broken:
            threshold = float(c)
        else:
            broken = True
    h0 = hsup = None
    if h_fn is not None:
        top = max(e.max_norm for e in ensembles)
        h0 = float(h_fn(0.0))
        hsup = float(max(h_fn(r) for r in np.linspace(0.0, top, 257)))
    full = ensembles[0].full_horizon
    est = float(np.mean(full[np.isfinite(full)])) if np.isfinite(full).any() else math.inf
    return StabilityReport(est, rates, scan, None, rows, threshold, h0, hsup)


def lyapunov_sweep(factory: Callable, scales: Sequence[float], spec: FbmSpec, n_steps: int,
                   seeds: int, seed: int = 0, y0=None) -> StabilityReport:
    """Exponents over a grid of diffusion scales ``C_g``.

    ``factory(c)`` returns a system whose diffusion bound is ``c``.  The
    same drivers (sub-streams of ``seed``) are reused for every scale.
    """
    systems = [factory(c) for c in scales]
    ensembles = [ensemble_exponents(s, spec, n_steps, seeds, seed, y0) for s in systems]
    return sweep_report(scales, ensembles, systems[0].drift.h_fn)


def is_nonincreasing(values: Sequence[float]) -> bool:
    return all(b <= a for a, b in zip(values[:-1], values[1:]))


# ---------------------------------------------------------------------------
# Gronwall chain.


def _unit_windows(times, windows):
    idx = []
    for k in range(windows + 1):
        j = int(np.argmin(np.abs(times - (times[0] + k))))
        if abs(times[j] - (times[0] + k)) > 1e-9:
            raise StructuralError(f"time {times[0] + k} is not a grid point")
        idx.append(j)
    return idx


def gronwall_chain_check(traj: Trajectory, drift: DriftSpec, diff: DiffusionSpec, rp: RoughPath,
                         lam: float, windows: int, slack: float = 1e-12) -> dict:
    """Chain inequality for ``a_k = exp(2 lam k) ||y_k||^2`` on unit windows.

    (i) ``a_n <= a_0 + sum_{k<n} 2 |I_k|`` for every ``n <= windows``, where
    ``I_k`` is the rough integral of ``exp(2 lam s) <y_s, g(y_s)>`` over
    ``[k, k+1]`` (the bracket integral vanishes for geometric lifts).
    (ii) ``kappa_k = |I_k| / (C_g a_k)`` and the rate bound
    ``-lam + (1/2n) sum log(1 + 2 C_g kappa_k)``, which is an upper bound
    on the measured exponent whenever (i) holds.
    """
    if lam <= 0:
        raise DomainError("lam must be positive")
    if not rp.geometric:
        raise StructuralError("the chain check drops bracket terms and needs a geometric lift")
    t = traj.times
    y = traj.y
    idx = _unit_windows(t, windows)
    drift_term = np.einsum("ni,ni->n", y, (y @ drift.A.T) + lam * y
                           + np.stack([drift.f(v) for v in y]))
    scale = np.einsum("ni,ni->n", y, y)
    dissipative = drift_term <= 1e-12 * np.maximum(scale, 1e-300)
    bad_windows = sorted({k for k in range(windows)
                          if not dissipative[idx[k]:idx[k + 1] + 1].all()})
    e2 = np.exp(2.0 * lam * (t - t[0]))
    gy = np.stack([diff.g(v) for v in y])
    dg = np.stack([diff.Dg(v) for v in y])
    z = e2[:, None] * np.einsum("ni,nij->nj", y, gy)
    zp = e2[:, None, None] * (np.einsum("nij,nik->njk", gy, gy)
                              + np.einsum("ni,nijl,nlk->njk", y, dg, gy))
    i0, i1 = traj.step_stats.get("interval", (0, rp.n - 1))
    sub = rp.restrict(i0, i1)
    if sub.n != y.shape[0]:
        raise StructuralError("trajectory does not match the rough path interval")
    cum = rough_integral_path(ControlledPath(sub, z, zp))
    integrals = np.array([float(cum[idx[k + 1]] - cum[idx[k]]) for k in range(windows)])
    a = e2[idx] * scale[idx]
    rhs = a[0] + 2.0 * np.cumsum(np.abs(integrals))
    margins = rhs - a[1:]
    holds = bool(np.all(margins >= -slack * np.maximum(1.0, rhs)))
    cg = diff.C_g
    kappa = np.abs(integrals) / (cg * a[:-1]) if cg > 0 else np.zeros(windows)
    correction = float(np.mean(np.log1p(2.0 * cg * kappa)))
    rate_bound = -lam + 0.5 * correction
    measured = float((0.5 * math.log(scale[idx[-1]]) - 0.5 * math.log(scale[idx[0]]))
                     / (t[idx[-1]] - t[idx[0]]))
    return jsonable({
        "holds": holds, "margins": margins, "integrals": integrals, "a": a,
        "dissipative": not bad_windows, "non_dissipative_windows": bad_windows,
        "kappa": kappa, "correction": correction, "rate_bound": rate_bound,
        "measured_exponent": measured, "rate_dominates": measured <= rate_bound + 1e-12,
    })
