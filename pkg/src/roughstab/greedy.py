"""Greedy-time partitions and Monte-Carlo studies of their counts.

Starting from ``tau_0 = min I`` each next time is the first grid point at
which a functional of the window ``[tau_i, t]`` reaches ``gamma``:

* ``plain``: the rough-path norm ``||x||_{(p,s)} + ||X||_{(p/2,s)}^{1/2}``;
* ``timeterm``: ``(t - tau_i)^sigma`` plus the same rough-path norm.

The window variations are extended one grid point at a time by the same
recursion the norms module uses, so every crossing decision is exact on
the grid.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DomainError
from .gaussian_paths import (
    FbmSpec,
    RoughPath,
    SamplePath,
    TimeGrid,
    lift_piecewise_linear,
    sample_fbm_batch,
    sample_fbm_indexed,
)
from .norms import _interval
from .reports import InequalityReport, jsonable
from .rough_core import translation_constant

VARIANTS = ("plain", "timeterm")
ALIASES = {"with_time_term": "timeterm"}


@dataclass
class GreedyPartition:
    """Greedy times (as grid indices and times) with the crossing count.

    ``count`` is the number of crossings strictly inside the interval, so
    a path that never reaches ``gamma`` has ``count == 0`` and a single
    piece.  ``pieces == count + 1``.
    """

    indices: list
    times: list
    gamma: float
    variant: str
    p: float
    sigma: float
    attained: list
    count: int
    coarse_steps: list = field(default_factory=list)

    @property
    def pieces(self) -> int:
        return len(self.indices) - 1

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "tau_i", "attained_norm"])
        att = [math.nan] + list(self.attained)
        for k, (i, t) in enumerate(zip(self.indices, self.times)):
            w.writerow([i, repr(float(t)), repr(float(att[k]))])
        return buf.getvalue()


class _Window:
    """Running (p, sigma) variations of ``x`` and ``X`` over ``[t_a, t_b]``."""

    def __init__(self, rp: RoughPath, a: int, p: float, sigma: float):
        self.rp, self.a, self.p, self.sigma = rp, a, p, sigma
        self.q = p / 2.0
        n = rp.n
        self.bx = np.zeros(n - a)
        self.bX = np.zeros(n - a)

    def extend(self, b: int) -> float:
        """Fold in end point ``b`` (call for b = a+1, a+2, ...); return the norm."""
        rp, a, p, s = self.rp, self.a, self.p, self.sigma
        idx = np.arange(a, b)
        t = rp.times
        dt = t[b] - t[idx]
        dx = rp.x[b] - rp.x[idx]
        wx = np.sqrt(np.einsum("ij,ij->i", dx, dx)) ** p
        if s:
            wx = wx * dt ** (-s * p)
        k = b - a
        self.bx[k] = np.max(self.bx[:k] + wx)
        ar = rp.area_to(idx, b)
        wX = np.sqrt(np.einsum("ijk,ijk->i", ar, ar)) ** self.q
        if s:
            wX = wX * dt ** (-s * self.q)
        self.bX[k] = np.max(self.bX[:k] + wX)
        return self.bx[k] ** (1.0 / p) + self.bX[k] ** (0.5 / self.q)


def greedy_times(rp: RoughPath, gamma: float, p: float, sigma: float, interval=None,
                 variant: str = "plain", warn: bool = True) -> GreedyPartition:
    """First-crossing greedy partition of an index interval.

    Raises
    ------
    DomainError
        If ``gamma <= 0``, ``p < 1``, ``sigma < 0`` or the variant is unknown.
    """
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    if p < 1 or sigma < 0:
        raise DomainError("need p >= 1 and sigma >= 0")
    variant = ALIASES.get(variant, variant)
    if variant not in VARIANTS:
        raise DomainError(f"variant must be one of {VARIANTS}")
    i0, i1 = _interval(rp.n, interval)
    t = rp.times
    taus, attained, coarse = [i0], [], []
    a = i0
    while True:
        win = _Window(rp, a, p, sigma)
        hit = None
        val = 0.0
        for b in range(a + 1, i1 + 1):
            val = win.extend(b)
            if variant == "timeterm":
                val += (t[b] - t[a]) ** sigma
            if val >= gamma:
                hit = b
                break
        if hit is None or hit == i1:
            taus.append(i1)
            attained.append(val)
            break
        if hit == a + 1:
            coarse.append(a)
        taus.append(hit)
        attained.append(val)
        a = hit
    if coarse and warn:
        warnings.warn(f"grid too coarse for gamma={gamma}: single steps starting at "
                      f"indices {coarse[:5]} already reach it", RuntimeWarning, stacklevel=2)
    return GreedyPartition(taus, [float(t[k]) for k in taus], gamma, variant, p, sigma,
                           [float(v) for v in attained], len(taus) - 2, coarse)


def greedy_count(rp: RoughPath, gamma: float, p: float, sigma: float, interval=None,
                 variant: str = "plain") -> int:
    return greedy_times(rp, gamma, p, sigma, interval, variant, warn=False).count


def subdivision_blocks(times, i0: int, i1: int, length: float) -> list:
    """Grid-aligned blocks covering ``[t_i0, t_i1]``, each no longer than ``length``.

    Each block ends at the last grid point within ``length`` of its start.
    Returns ``None`` if a single grid step is already longer.
    """
    t = np.asarray(times)
    blocks = []
    a = i0
    while a < i1:
        b = int(np.searchsorted(t, t[a] + length * (1 + 1e-12), side="right")) - 1
        b = min(b, i1)
        if b <= a:
            return None
        blocks.append((a, b))
        a = b
    return blocks


def subdivision_inequality(rp: RoughPath, gamma: float, p: float, sigma: float,
                           interval=None) -> InequalityReport:
    """Compare the time-term count at ``gamma`` with plain counts at ``gamma/2``.

    The interval is cut into grid-aligned blocks ``J_k`` of length at most
    ``(gamma/2)^{1/sigma}``.  ``holds`` compares piece counts,
    ``Nbar + 1 <= sum_k (N_k + 1)``; the crossing-count form
    ``Nbar <= sum_k N_k`` is reported in ``details['crossing_form']``.
    ``details['inconclusive']`` is set when a block would be shorter than
    a grid step.
    """
    if sigma <= 0:
        raise DomainError("the block length needs sigma > 0")
    i0, i1 = _interval(rp.n, interval)
    length = (gamma / 2.0) ** (1.0 / sigma)
    blocks = subdivision_blocks(rp.times, i0, i1, length)
    nbar = greedy_count(rp, gamma, p, sigma, (i0, i1), "timeterm")
    if blocks is None:
        return InequalityReport(
            "subdivision", nbar, math.nan, False, 0.0,
            {"inconclusive": True, "block_length": length, "nbar": nbar})
    counts = [greedy_count(rp, gamma / 2.0, p, sigma, blk, "plain") for blk in blocks]
    lhs, rhs = nbar + 1, sum(c + 1 for c in counts)
    return InequalityReport(
        "subdivision", lhs, rhs, lhs <= rhs, 0.0,
        {"inconclusive": False, "block_length": length, "blocks": blocks, "nbar": nbar,
         "block_counts": counts, "crossing_form": nbar <= sum(counts)})


@dataclass
class TailTable:
    counts: np.ndarray
    threshold: float
    q: float
    rows: list
    slope: float
    intercept: float
    r2: float
    degenerate: bool

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "count", "prob"])
        for n, c, pr in self.rows:
            w.writerow([n, c, repr(float(pr))])
        return buf.getvalue()

    def summary(self) -> dict:
        return jsonable({"threshold": self.threshold, "q": self.q, "slope": self.slope,
                         "intercept": self.intercept, "r2": self.r2,
                         "degenerate": self.degenerate, "samples": int(self.counts.size)})


def tail_regression(counts, q: float) -> tuple:
    """Table of ``P(N > n)`` and least-squares fit of its log against ``n^{2/q}``.

    Returns ``(rows, slope, intercept, r2, degenerate)``; rows are
    ``(n, #{N > n}, P(N > n))`` for ``n = 0 .. max N``.  The fit uses the
    rows with positive probability and needs at least three of them.
    """
    counts = np.asarray(counts, dtype=int)
    top = int(counts.max()) if counts.size else 0
    rows = [(n, int(np.sum(counts > n)), float(np.mean(counts > n))) for n in range(top + 1)]
    pos = [(n, pr) for n, _, pr in rows if pr > 0]
    if len(pos) < 3:
        return rows, math.nan, math.nan, math.nan, True
    xs = np.array([n ** (2.0 / q) for n, _ in pos])
    ys = np.log([pr for _, pr in pos])
    fit = stats.linregress(xs, ys)
    return rows, float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2), False


def sample_rough_paths(spec: FbmSpec, grid: TimeGrid, seed: int, count: int):
    """Geometric lifts of ``count`` fBm paths drawn from sub-streams of ``seed``."""
    batch = sample_fbm_batch(spec, grid, seed, count)
    for vals in batch:
        yield lift_piecewise_linear(SamplePath(grid, vals, seed))


def count_samples(spec: FbmSpec, grid: TimeGrid, gamma: float, p: float, sigma: float,
                  samples: int, seed: int, variant: str = "plain", interval=None) -> np.ndarray:
    return np.array([greedy_count(rp, gamma, p, sigma, interval, variant)
                     for rp in sample_rough_paths(spec, grid, seed, samples)])


def tail_threshold(p: float, gamma: float) -> float:
    """Greedy threshold ``2 K(p) gamma`` used in the tail study."""
    return 2.0 * translation_constant(p) * gamma


def tail_counts(spec: FbmSpec, gamma: float, p: float, sigma: float, seed: int, indices,
                n_points: int = 257, variant: str = "plain") -> np.ndarray:
    """Greedy counts at ``2 K(p) gamma`` for the sub-streams ``indices`` of ``seed``.

    Each sample depends only on its own index, so disjoint index sets can
    be evaluated by separate workers and concatenated.
    """
    if spec.horizon > 1:
        raise DomainError("the tail estimate is stated for intervals of length <= 1")
    grid = TimeGrid.uniform(0.0, spec.horizon, n_points)
    threshold = tail_threshold(p, gamma)
    return np.array([greedy_count(lift_piecewise_linear(sample_fbm_indexed(spec, grid, seed, i)),
                                  threshold, p, sigma, None, variant) for i in indices], dtype=int)


def tail_table(counts, threshold: float, p: float) -> TailTable:
    counts = np.asarray(counts, dtype=int)
    if counts.size == 0:
        raise DomainError("need at least one sample")
    q = p / 2.0
    rows, slope, icpt, r2, degen = tail_regression(counts, q)
    return TailTable(counts, threshold, q, rows, slope, icpt, r2, degen)


def tail_estimate(spec: FbmSpec, gamma: float, p: float, sigma: float, samples: int,
                  seed: int, n_points: int = 257) -> TailTable:
    """Empirical tail of ``N`` at threshold ``2 K(p,sigma) gamma`` over ``[0, horizon]``."""
    if samples <= 0:
        raise DomainError("need at least one sample")
    counts = tail_counts(spec, gamma, p, sigma, seed, range(samples), n_points)
    return tail_table(counts, tail_threshold(p, gamma), p)


def exp_moment(counts) -> float:
    """Empirical mean of ``exp(N)``."""
    return float(np.mean(np.exp(np.asarray(counts, dtype=float))))


@dataclass
class ShiftReport:
    windows: list
    statistics: list
    pvalues: list
    critical: float
    counts: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return jsonable({"windows": self.windows, "statistics": self.statistics,
                         "pvalues": self.pvalues, "critical": self.critical})


def ks_critical(n1: int, n2: int, alpha: float = 0.01) -> float:
    """Asymptotic two-sample Kolmogorov-Smirnov critical value."""
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c * math.sqrt((n1 + n2) / (n1 * n2))


def window_counts(spec: FbmSpec, gamma: float, p: float, sigma: float, windows: int,
                  samples: int, seed: int, per_unit: int = 64, time_scale: float = 1.0,
                  variant: str = "timeterm") -> np.ndarray:
    """Counts on unit windows ``[k, k+1]``, shape ``(samples, windows)``.

    With ``time_scale != 1`` the process is ``t -> x_{c t}``: fBm is drawn
    on the stretched grid and relabelled with the original times.
    """
    grid = TimeGrid.uniform(0.0, float(windows), windows * per_unit + 1)
    draw = TimeGrid(grid.points * time_scale)
    need = FbmSpec(spec.hurst, spec.dims, max(spec.horizon, draw.points[-1]))
    out = np.zeros((samples, windows), dtype=int)
    batch = sample_fbm_batch(need, draw, seed, samples)
    for s, vals in enumerate(batch):
        rp = lift_piecewise_linear(SamplePath(grid, vals, seed))
        for k in range(windows):
            out[s, k] = greedy_count(rp, gamma, p, sigma, (k * per_unit, (k + 1) * per_unit), variant)
    return out


def shift_covariance_check(spec: FbmSpec, gamma: float, p: float, sigma: float,
                           windows: int = 5, samples: int = 1000, seed: int = 0,
                           per_unit: int = 64, alpha: float = 0.01,
                           variant: str = "timeterm") -> ShiftReport:
    """KS statistics between the count on ``[0,1]`` and on each ``[k,k+1]``."""
    counts = window_counts(spec, gamma, p, sigma, windows, samples, seed, per_unit, 1.0, variant)
    st, pv = [], []
    for k in range(windows):
        res = stats.ks_2samp(counts[:, 0], counts[:, k], method="asymp")
        st.append(float(res.statistic))
        pv.append(float(res.pvalue))
    return ShiftReport([(k, k + 1) for k in range(windows)], st, pv,
                       ks_critical(samples, samples, alpha), counts)
