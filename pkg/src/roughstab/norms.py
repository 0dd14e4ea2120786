"""Variation and Hölder seminorms on grid paths.

All suprema run over partitions made of grid points.  One-parameter
variations (``p_var``, ``p_sigma_var`` and the one-axis two-parameter
case) are exact and computed by the O(n^2) recursion

    best[j] = max_{i<j} best[i] + w(i, j),

where ``w(i, j) = ||x_{t_i,t_j}||^p |t_j - t_i|^{-sigma p}``.  Ties go to
the partition with fewer points, then to the smallest predecessor index.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateSpacingError, DomainError, StructuralError
from .gaussian_paths import CovKernel, RoughPath, SamplePath
from .reports import InequalityReport, jsonable

KINDS = ("p_var", "holder", "p_sigma_var", "q_var_2param", "q_sigma_var_2param")


@dataclass
class SeminormReport:
    value: float
    kind: str
    p: float
    sigma: float
    interval: tuple
    partition: list
    warning: Optional[str] = None
    lower_bound: bool = False

    def to_dict(self) -> dict:
        return jsonable({"kind": self.kind, "p": self.p, "sigma": self.sigma,
                         "value": self.value, "partition": list(self.partition),
                         "interval": list(self.interval), "warning": self.warning,
                         "lower_bound": self.lower_bound})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _values_and_times(x, times=None):
    """Accept a SamplePath, RoughPath or raw array; return ``(values, times)``."""
    if isinstance(x, RoughPath):
        x = x.path
    if isinstance(x, SamplePath):
        return x.values, x.times if times is None else np.asarray(times, dtype=float)
    v = np.asarray(x, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    elif v.ndim > 2:
        v = v.reshape(v.shape[0], -1)
    t = None if times is None else np.asarray(times, dtype=float)
    if t is not None and t.shape[0] != v.shape[0]:
        raise StructuralError("times and values have different lengths")
    return v, t


def _interval(n, interval):
    i0, i1 = (0, n - 1) if interval is None else (int(interval[0]), int(interval[1]))
    if not 0 <= i0 < i1 <= n - 1:
        raise StructuralError(f"interval {interval} needs at least 2 points within [0, {n - 1}]")
    return i0, i1


def _spacing_weights(t, exponent):
    """``|t_j - t_i|^{-exponent}`` on the upper triangle, zero elsewhere."""
    dt = t[None, :] - t[:, None]
    iu = np.triu_indices(t.size, 1)
    if np.any(dt[iu] <= 0):
        raise DegenerateSpacingError("zero-length subinterval in the grid")
    out = np.zeros_like(dt)
    out[iu] = dt[iu] ** (-exponent)
    return out


def pair_norms(values) -> np.ndarray:
    """``||x_j - x_i||`` for all pairs, shape ``(n, n)``."""
    d = values[None, :, :] - values[:, None, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", d, d))


def increment_weights(values, p, sigma=0.0, times=None) -> np.ndarray:
    """Upper-triangular ``||x_{ij}||^p |t_j - t_i|^{-sigma p}``."""
    w = np.triu(pair_norms(values) ** p, 1)
    if sigma:
        w = w * _spacing_weights(times, sigma * p)
    return w


def best_partition(w) -> tuple[float, list]:
    """Maximize the sum of ``w[a_k, a_{k+1}]`` over chains ``0 = a_0 < ... = n-1``.

    Returns the maximal sum and the maximizing chain.
    """
    k = w.shape[0]
    best = np.zeros(k)
    cnt = np.zeros(k, dtype=int)
    prev = np.full(k, -1)
    for j in range(1, k):
        cand = best[:j] + w[:j, j]
        top = cand.max()
        ties = np.flatnonzero(cand == top)
        i = ties[np.argmin(cnt[ties])] if ties.size > 1 else ties[0]
        best[j] = top
        cnt[j] = cnt[i] + 1
        prev[j] = i
    chain = [k - 1]
    while chain[-1] != 0:
        chain.append(int(prev[chain[-1]]))
    return float(best[-1]), chain[::-1]


def partition_sum(w, partition) -> float:
    """Left-to-right sum of ``w`` along a chain (same float order as the DP)."""
    s = 0.0
    for a, b in zip(partition[:-1], partition[1:]):
        s = s + w[a, b]
    return float(s)


def _report_from_weights(w, p, sigma, kind, i0, i1, warning=None):
    total, chain = best_partition(w)
    return SeminormReport(total ** (1.0 / p), kind, p, sigma, (i0, i1),
                          [i0 + c for c in chain], warning)


def _sigma_warning(p, sigma):
    if sigma * p >= 1:
        msg = f"sigma*p = {sigma * p:g} >= 1: the weighted sum diverges under grid refinement"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return msg
    return None


def p_var(x, p: float, interval=None) -> SeminormReport:
    """Grid p-variation ``(sup_Pi sum ||x_{u,v}||^p)^{1/p}``."""
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    v, _ = _values_and_times(x)
    i0, i1 = _interval(v.shape[0], interval)
    w = increment_weights(v[i0:i1 + 1], p)
    return _report_from_weights(w, p, 0.0, "p_var", i0, i1)


def p_sigma_var(x, p: float, sigma: float, times=None, interval=None) -> SeminormReport:
    """Weighted variation with each term scaled by ``|v - u|^{-sigma p}``."""
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    v, t = _values_and_times(x, times)
    i0, i1 = _interval(v.shape[0], interval)
    if sigma and t is None:
        raise StructuralError("times are required when sigma > 0")
    warn = _sigma_warning(p, sigma)
    w = increment_weights(v[i0:i1 + 1], p, sigma, None if t is None else t[i0:i1 + 1])
    return _report_from_weights(w, p, sigma, "p_sigma_var" if sigma else "p_var", i0, i1, warn)


def holder_seminorm(x, beta: float, times=None, interval=None) -> SeminormReport:
    """``max_{s<t} ||x_{s,t}|| / (t - s)^beta`` over grid pairs."""
    if not 0 < beta <= 1:
        raise DomainError(f"beta must lie in (0, 1], got {beta}")
    v, t = _values_and_times(x, times)
    if t is None:
        raise StructuralError("times are required for a Hölder seminorm")
    i0, i1 = _interval(v.shape[0], interval)
    r = pair_norms(v[i0:i1 + 1]) * _spacing_weights(t[i0:i1 + 1], beta)
    a, b = np.unravel_index(int(np.argmax(r)), r.shape)
    return SeminormReport(float(r[a, b]), "holder", 1.0 / beta, 0.0, (i0, i1),
                          [i0 + int(a), i0 + int(b)])


def two_param_holder(norms_table, beta: float, times) -> float:
    """``max_{s<t} F(s,t) / (t - s)^beta`` for a table of pair norms."""
    t = np.asarray(times, dtype=float)
    return float(np.max(np.triu(norms_table, 1) * _spacing_weights(t, beta)))


def _pair_norm_table(obj, n_expected=None):
    if isinstance(obj, RoughPath):
        return obj.area_norms()
    a = np.asarray(obj, dtype=float)
    if a.ndim == 2:
        return np.abs(a)
    flat = a.reshape(a.shape[0], a.shape[1], -1)
    return np.sqrt(np.einsum("ijk,ijk->ij", flat, flat))


def two_param_var(obj, q: float, sigma: float = 0.0, times=None, interval=None,
                  exhaustive_max: int = 8, max_sweeps: int = 50) -> SeminormReport:
    """Variation of a two-parameter object.

    ``obj`` may be a RoughPath (its second level), an ``(n, n, ...)`` table
    of pair values or pair norms, or a CovKernel.  The first two reduce
    to a one-axis recursion with terms ``||F_{u,v}||^q |v-u|^{-sigma q}``.
    A kernel gives the double-partition variation of its rectangular
    increments, see :func:`cov_var`.
    """
    if q < 1:
        raise DomainError(f"q must be >= 1, got {q}")
    kind = "q_sigma_var_2param" if sigma else "q_var_2param"
    if isinstance(obj, CovKernel):
        if times is None:
            raise StructuralError("a kernel needs explicit times")
        return cov_var(obj, times, q, sigma, interval, exhaustive_max, max_sweeps)
    if isinstance(obj, RoughPath) and times is None:
        times = obj.times
    tab = _pair_norm_table(obj)
    i0, i1 = _interval(tab.shape[0], interval)
    warn = _sigma_warning(q, sigma)
    w = np.triu(tab[i0:i1 + 1, i0:i1 + 1] ** q, 1)
    if sigma:
        if times is None:
            raise StructuralError("times are required when sigma > 0")
        w = w * _spacing_weights(np.asarray(times, dtype=float)[i0:i1 + 1], sigma * q)
    return _report_from_weights(w, q, sigma, kind, i0, i1, warn)


def rect_cov_table(kernel: CovKernel, times) -> np.ndarray:
    """``|R(t_a, t_b; t_c, t_d)|`` (Frobenius) for all a<b, c<d; shape (n,n,n,n)."""
    t = np.asarray(times, dtype=float)
    n = t.size
    k = np.empty((n, n, kernel.dims, kernel.dims))
    for i in range(n):
        for j in range(n):
            k[i, j] = kernel(t[i], t[j])
    # R(a,b;c,d) = K(b,d) - K(b,c) - K(a,d) + K(a,c)
    r = (k[None, :, None, :] - k[None, :, :, None] - k[:, None, None, :] + k[:, None, :, None])
    return np.sqrt(np.einsum("abcdkl,abcdkl->abcd", r, r))


def _cov_weights(absr, t, q, sigma):
    n = t.size
    w = absr ** q
    if sigma:
        s = _spacing_weights(t, sigma * q)
        w = w * s[:, :, None, None] * s[None, None, :, :]
    mask = np.triu(np.ones((n, n), dtype=bool), 1)
    return w * mask[:, :, None, None] * mask[None, None, :, :]


def _double_sum(w, pa, pb):
    s = 0.0
    for a, b in zip(pa[:-1], pa[1:]):
        for c, d in zip(pb[:-1], pb[1:]):
            s += w[a, b, c, d]
    return s


def _all_chains(n):
    inner = range(1, n - 1)
    for r in range(n - 1):
        for sub in itertools.combinations(inner, r):
            yield [0, *sub, n - 1]


def cov_var(kernel: CovKernel, times, q: float, sigma: float = 0.0, interval=None,
            exhaustive_max: int = 8, max_sweeps: int = 50) -> SeminormReport:
    """Double-partition variation of the rectangular covariance increments.

    Exhaustive over both partition axes when the interval has at most
    ``exhaustive_max`` points; otherwise alternating maximization (fix one
    axis, solve the other exactly by the recursion) until a fixpoint.  The
    latter is a lower bound and is flagged as such.  ``partition`` holds
    the first axis; the second is recorded in ``warning`` when it differs.
    """
    t_all = np.asarray(times, dtype=float)
    i0, i1 = _interval(t_all.size, interval)
    t = t_all[i0:i1 + 1]
    n = t.size
    w = _cov_weights(rect_cov_table(kernel, t), t, q, sigma)
    kind = "q_sigma_var_2param" if sigma else "q_var_2param"
    if n <= exhaustive_max:
        chains = list(_all_chains(n))
        best, arg = -1.0, None
        for pa in chains:
            for pb in chains:
                s = _double_sum(w, pa, pb)
                if s > best:
                    best, arg = s, (pa, pb)
        pa, pb = arg
        note = None if pa == pb else f"second axis partition {[i0 + c for c in pb]}"
        return SeminormReport(float(best ** (1.0 / q)), kind, q, sigma, (i0, i1), [i0 + c for c in pa], note)
    pb = list(range(n))
    prev = -1.0
    for _ in range(max_sweeps):
        wa = np.zeros((n, n))
        for c, d in zip(pb[:-1], pb[1:]):
            wa += w[:, :, c, d]
        _, pa = best_partition(wa)
        wb = np.zeros((n, n))
        for a, b in zip(pa[:-1], pa[1:]):
            wb += w[a, b, :, :]
        val, pb = best_partition(wb)
        if val <= prev:
            break
        prev = val
    val = _double_sum(w, pa, pb)
    note = "alternating maximization: lower bound"
    return SeminormReport(float(val ** (1.0 / q)), kind, q, sigma, (i0, i1), [i0 + c for c in pa],
                          note, lower_bound=True)


def reevaluate(report: SeminormReport, obj, times=None) -> float:
    """Value of the report's functional on its own ``partition``."""
    i0, i1 = report.interval
    part = [c - i0 for c in report.partition]
    if report.kind == "holder":
        v, t = _values_and_times(obj, times)
        a, b = report.partition
        return float(np.linalg.norm(v[b] - v[a]) / (t[b] - t[a]) ** (1.0 / report.p))
    if report.kind in ("p_var", "p_sigma_var"):
        v, t = _values_and_times(obj, times)
        w = increment_weights(v[i0:i1 + 1], report.p, report.sigma,
                              None if t is None else t[i0:i1 + 1])
    else:
        if isinstance(obj, RoughPath) and times is None:
            times = obj.times
        tab = _pair_norm_table(obj)[i0:i1 + 1, i0:i1 + 1]
        w = np.triu(tab ** report.p, 1)
        if report.sigma:
            w = w * _spacing_weights(np.asarray(times)[i0:i1 + 1], report.sigma * report.p)
    return partition_sum(w, part) ** (1.0 / report.p)


def variation_matrix(x, p: float, sigma: float = 0.0, times=None) -> np.ndarray:
    """``V[i, j]`` = p-th power of the (p, sigma)-variation over ``[t_i, t_j]``.

    O(n^3); intended for control-function checks on short grids.
    """
    v, t = _values_and_times(x, times)
    w = increment_weights(v, p, sigma, t)
    return _all_interval_optima(w)


def two_param_variation_matrix(obj, q: float, sigma: float = 0.0, times=None) -> np.ndarray:
    if isinstance(obj, RoughPath) and times is None:
        times = obj.times
    w = np.triu(_pair_norm_table(obj) ** q, 1)
    if sigma:
        w = w * _spacing_weights(np.asarray(times, dtype=float), sigma * q)
    return _all_interval_optima(w)


def _all_interval_optima(w):
    n = w.shape[0]
    out = np.zeros((n, n))
    for i in range(n - 1):
        best = np.zeros(n - i)
        for j in range(1, n - i):
            best[j] = np.max(best[:j] + w[i:i + j, i + j])
        out[i, i:] = best
    return out


@dataclass
class ControlReport:
    max_violation: float
    triple: Optional[tuple]
    diagonal_max: float = 0.0

    @property
    def is_control(self) -> bool:
        return self.max_violation == 0.0 and self.diagonal_max == 0.0


def check_control(omega, n: Optional[int] = None, tol: float = 0.0) -> ControlReport:
    """Superadditivity defect ``max (w_su + w_ut - w_st)_+`` over grid triples.

    ``omega`` is an ``(n, n)`` array or a callable ``(i, j) -> float``.
    Violations not exceeding ``tol`` are reported as zero.
    """
    if callable(omega):
        if n is None:
            raise StructuralError("n is required with a callable omega")
        w = np.array([[omega(i, j) if i <= j else 0.0 for j in range(n)] for i in range(n)])
    else:
        w = np.asarray(omega, dtype=float)
    n = w.shape[0]
    worst, arg = 0.0, None
    for u in range(n):
        d = w[:u + 1, u][:, None] + w[u, u:][None, :] - w[:u + 1, u:]
        k = int(np.argmax(d))
        val = float(d.flat[k])
        if val > worst:
            a, b = np.unravel_index(k, d.shape)
            worst, arg = val, (int(a), u, u + int(b))
    if worst <= tol:
        worst, arg = 0.0, None
    return ControlReport(worst, arg, float(np.max(np.abs(np.diag(w)))))


def sandwich_check(x, p: float, sigma: float, times=None, interval=None,
                   slack: float = 1e-10) -> dict:
    """Check ``|I|^-sigma ||x||_{p-var} <= ||x||_{p,sigma} <= |I|^{1/p} ||x||_{1/p+sigma}``.

    For a RoughPath the same pair of inequalities is also checked for
    the second level with ``q = p/2`` and Hölder exponent ``1/q + sigma``.
    """
    v, t = _values_and_times(x, times)
    i0, i1 = _interval(v.shape[0], interval)
    span = t[i1] - t[i0]
    pv = p_var(v, p, (i0, i1)).value
    mid = p_sigma_var(v, p, sigma, t, (i0, i1)).value
    beta = 1.0 / p + sigma
    hol = holder_seminorm(v, min(beta, 1.0), t, (i0, i1)).value if beta <= 1 else np.inf
    out = {
        "path_left": InequalityReport.compare("|I|^-s pvar <= (p,s)", span ** (-sigma) * pv, mid, slack),
        "path_right": InequalityReport.compare("(p,s) <= |I|^(1/p) Hol", mid, span ** (1.0 / p) * hol, slack),
    }
    if isinstance(x, RoughPath):
        q = p / 2.0
        tab = x.area_norms()
        qv = two_param_var(tab, q, 0.0, t, (i0, i1)).value
        qmid = two_param_var(tab, q, sigma, t, (i0, i1)).value
        qbeta = 1.0 / q + sigma
        sub = tab[i0:i1 + 1, i0:i1 + 1]
        qhol = two_param_holder(sub, qbeta, t[i0:i1 + 1])
        out["area_left"] = InequalityReport.compare("|I|^-s qvar <= (q,s)", span ** (-sigma) * qv, qmid, slack)
        out["area_right"] = InequalityReport.compare("(q,s) <= |I|^(1/q) Hol", qmid, span ** (1.0 / q) * qhol, slack)
    return out


def additive_partition_bound(x, p: float, sigma: float, taus: Sequence[int], times=None,
                             slack: float = 1e-10) -> dict:
    """Check ``||x||_{[a,b]} <= N^{(p-1)/p} sum_i ||x||_{[tau_i, tau_{i+1}]}``.

    ``taus`` are grid indices ``tau_0 < ... < tau_N`` spanning the interval.
    Reported for the plain p-variation and for the (p, sigma) version.
    """
    v, t = _values_and_times(x, times)
    taus = [int(k) for k in taus]
    if any(b <= a for a, b in zip(taus[:-1], taus[1:])):
        raise StructuralError("taus must be strictly increasing")
    nparts = len(taus) - 1
    factor = nparts ** ((p - 1.0) / p)
    ab = (taus[0], taus[-1])
    out = {}
    for label, s in (("p_var", 0.0), ("p_sigma_var", sigma)):
        lhs = p_sigma_var(v, p, s, t, ab).value
        pieces = [p_sigma_var(v, p, s, t, (a, b)).value for a, b in zip(taus[:-1], taus[1:])]
        out[label] = InequalityReport.compare(label, lhs, factor * sum(pieces), slack,
                                              pieces=pieces, n_pieces=nparts)
    return out


def rough_path_norm(rp: RoughPath, p: float, sigma: float, interval=None) -> float:
    """``||x||_{(p,sigma)} + ||X||_{(p/2,sigma)}^{1/2}`` on an index interval."""
    i0, i1 = _interval(rp.n, interval)
    first = p_sigma_var(rp.x, p, sigma, rp.times, (i0, i1)).value
    second = two_param_var(rp.area_norms(), p / 2.0, sigma, rp.times, (i0, i1)).value
    return first + np.sqrt(second)
