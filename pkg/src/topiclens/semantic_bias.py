"""Within-topic semantic-bias measurement.

For each topic, the two groups' embeddings are projected onto the Fisher
discriminant axis, each group's projected values are density-estimated with a
cross-validated Gaussian KDE, and the 95% highest-density regions are
intersected to quantify how much of the discussion range is shared versus
exclusive to one group.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .stats import WelchResult, pearson_r, welch_t  # noqa: F401  (re-exported API)

__all__ = [
    "IntervalSet",
    "DensityTable",
    "ProjectedTopic",
    "OverlapRatios",
    "BiasResult",
    "InsufficientTopic",
    "StratumStats",
    "StrataReport",
    "lda_direction",
    "fisher_criterion",
    "project_topic",
    "kde_bandwidth_cv",
    "kde_density",
    "hdi_region",
    "region_mass",
    "region_overlap",
    "region_overlap_mass",
    "compute_topic_bias",
    "stratified_compare",
    "volume_breadth_correlations",
    "welch_t",
    "pearson_r",
]


# ---------------------------------------------------------------------------
# Interval sets


@dataclass(frozen=True)
class IntervalSet:
    """Disjoint closed intervals on the real line, ascending."""

    intervals: tuple[tuple[float, float], ...]

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> "IntervalSet":
        """Normalize arbitrary (lo, hi) pairs: sort, validate, merge overlaps."""
        items = sorted((float(lo), float(hi)) for lo, hi in pairs)
        merged: list[tuple[float, float]] = []
        for lo, hi in items:
            if hi < lo:
                raise ValueError(f"interval ({lo}, {hi}) has negative width")
            if merged and lo <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
            else:
                merged.append((lo, hi))
        return cls(intervals=tuple(merged))

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def total_length(self) -> float:
        return math.fsum(hi - lo for lo, hi in self.intervals)

    def intersection(self, other: "IntervalSet") -> "IntervalSet":
        out: list[tuple[float, float]] = []
        i = j = 0
        a, b = self.intervals, other.intervals
        while i < len(a) and j < len(b):
            lo = max(a[i][0], b[j][0])
            hi = min(a[i][1], b[j][1])
            if lo < hi:
                out.append((lo, hi))
            if a[i][1] <= b[j][1]:
                i += 1
            else:
                j += 1
        return IntervalSet(intervals=tuple(out))

    def union(self, other: "IntervalSet") -> "IntervalSet":
        return IntervalSet.from_pairs(list(self.intervals) + list(other.intervals))

    def difference(self, other: "IntervalSet") -> "IntervalSet":
        out: list[tuple[float, float]] = []
        j = 0
        b = other.intervals
        for lo, hi in self.intervals:
            cur = lo
            while j < len(b) and b[j][1] <= cur:
                j += 1
            k = j
            while k < len(b) and b[k][0] < hi:
                if b[k][0] > cur:
                    out.append((cur, b[k][0]))
                cur = max(cur, b[k][1])
                if cur >= hi:
                    break
                k += 1
            if cur < hi:
                out.append((cur, hi))
        return IntervalSet(intervals=tuple(out))

    def contains(self, other: "IntervalSet") -> bool:
        """True when ``other`` minus self has zero measure."""
        return other.difference(self).total_length == 0.0


# ---------------------------------------------------------------------------
# Fisher discriminant projection


@dataclass(frozen=True)
class ProjectedTopic:
    """One topic's documents mapped onto the group-separating axis."""

    topic_id: int
    direction: np.ndarray  # unit vector in embedding space
    values_early: np.ndarray
    values_late: np.ndarray
    criterion: float
    low_separation: bool


def _scatter(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = X.mean(axis=0)
    centered = X - mu
    return mu, centered.T @ centered


def _regularized_within(
    X_early: np.ndarray, X_late: np.ndarray, ridge: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu_e, S_e = _scatter(X_early)
    mu_l, S_l = _scatter(X_late)
    S_w = S_e + S_l
    d = X_early.shape[1]
    trace = float(np.trace(S_w))
    S_reg = S_w + (ridge * trace / d) * np.eye(d)
    return mu_l - mu_e, S_w, S_reg


def lda_direction(
    X_early: np.ndarray,
    X_late: np.ndarray,
    ridge: float = 1e-3,
    low_sep_tol: float = 1e-6,
) -> tuple[np.ndarray, float, bool]:
    """Fisher discriminant axis between the two groups.

    Solves (S_w + ridge*trace(S_w)/d * I) w = mu_late - mu_early and
    normalizes; the sign puts the late group's mean projection above the
    early group's. Returns (unit direction, criterion value, low-separation
    flag). Identical means with zero scatter leave the axis undefined.
    """
    X_early = np.asarray(X_early, dtype=float)
    X_late = np.asarray(X_late, dtype=float)
    if X_early.ndim != 2 or X_late.ndim != 2 or X_early.shape[1] != X_late.shape[1]:
        raise ValueError("groups must be 2-D with matching dimension")
    if X_early.shape[0] < 2 or X_late.shape[0] < 2:
        raise ValueError("each group needs at least 2 rows")
    mean_diff, S_w, S_reg = _regularized_within(X_early, X_late, ridge)
    trace = float(np.trace(S_w))
    sep = float(mean_diff @ mean_diff)
    if trace == 0.0 and sep == 0.0:
        raise ValueError("identical group means with zero scatter: direction undefined")
    if sep == 0.0:
        # Equal means: criterion is zero along every axis; return a
        # deterministic placeholder flagged as low separation.
        w = np.zeros(X_early.shape[1])
        w[int(np.argmax(np.diag(S_w)))] = 1.0
        return w, 0.0, True
    if trace == 0.0:
        w = mean_diff.copy()
    else:
        w = np.linalg.solve(S_reg, mean_diff)
    w /= np.linalg.norm(w)
    if float(w @ mean_diff) < 0.0:
        w = -w
    crit = fisher_criterion(w, X_early, X_late, ridge)
    n = X_early.shape[0] + X_late.shape[0]
    return w, crit, bool(crit * n < low_sep_tol)


def fisher_criterion(
    w: np.ndarray, X_early: np.ndarray, X_late: np.ndarray, ridge: float = 1e-3
) -> float:
    """Between-group separation over (regularized) within-group scatter along w."""
    w = np.asarray(w, dtype=float)
    mean_diff, _, S_reg = _regularized_within(
        np.asarray(X_early, dtype=float), np.asarray(X_late, dtype=float), ridge
    )
    between = float(w @ mean_diff) ** 2
    within = float(w @ S_reg @ w)
    if within == 0.0:
        return math.inf if between > 0.0 else 0.0
    return between / within


def project_topic(
    topic_id: int,
    X_early: np.ndarray,
    X_late: np.ndarray,
    ridge: float = 1e-3,
) -> ProjectedTopic:
    """Project one topic's two groups onto the discriminant axis.

    Projected values are standardized over the pooled topic (zero mean, unit
    variance) so a single bandwidth grid serves every topic downstream.
    """
    w, crit, low_sep = lda_direction(X_early, X_late, ridge=ridge)
    vals_e = np.asarray(X_early, dtype=float) @ w
    vals_l = np.asarray(X_late, dtype=float) @ w
    pooled = np.concatenate([vals_e, vals_l])
    mu = pooled.mean()
    sd = pooled.std()
    if sd == 0.0:
        sd = 1.0
    return ProjectedTopic(
        topic_id=topic_id,
        direction=w,
        values_early=(vals_e - mu) / sd,
        values_late=(vals_l - mu) / sd,
        criterion=crit,
        low_separation=low_sep,
    )


# ---------------------------------------------------------------------------
# Kernel density estimation and highest-density regions

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class DensityTable:
    """Gaussian-kernel KDE evaluated on a uniform grid."""

    x: np.ndarray
    density: np.ndarray
    bandwidth: float

    @property
    def step(self) -> float:
        return float(self.x[1] - self.x[0]) if len(self.x) > 1 else 0.0

    @property
    def total_mass(self) -> float:
        return float(np.trapezoid(self.density, self.x))


def kde_bandwidth_cv(
    samples: Sequence[float],
    grid: Sequence[float] | None = None,
    folds: int = 5,
) -> float:
    """Bandwidth maximizing mean held-out log-likelihood under k-fold CV.

    Folds are assigned by index modulo ``folds`` so the search is
    deterministic. The default grid is 20 log-spaced values spanning
    [0.01, 2] times the sample standard deviation.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim != 1 or s.size < folds:
        raise ValueError("need at least `folds` samples")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if grid is None:
        scale = float(np.std(s, ddof=1))
        if scale == 0.0:
            scale = 1.0
        grid = np.logspace(math.log10(0.01 * scale), math.log10(2.0 * scale), 20)
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0 or np.any(grid <= 0.0):
        raise ValueError("bandwidth grid must contain positive values")
    fold_of = np.arange(s.size) % folds
    best_h = None
    best_ll = -math.inf
    for h in grid:
        total = 0.0
        ok = True
        for f in range(folds):
            test = s[fold_of == f]
            train = s[fold_of != f]
            if test.size == 0 or train.size == 0:
                continue
            z = (test[:, None] - train[None, :]) / h
            log_k = -0.5 * z * z
            ll = logsumexp(log_k, axis=1) - math.log(train.size * h * _SQRT_2PI)
            if not np.all(np.isfinite(ll)):
                ok = False
                break
            total += float(ll.sum())
        if not ok:
            continue
        mean_ll = total / s.size
        if mean_ll > best_ll:
            best_ll = mean_ll
            best_h = float(h)
    if best_h is None:
        raise ValueError("no bandwidth produced a finite held-out likelihood")
    return best_h


def kde_density(
    samples: Sequence[float], bandwidth: float, grid_points: int = 2048
) -> DensityTable:
    """Gaussian KDE on a uniform grid spanning the samples plus 4 bandwidths."""
    s = np.asarray(samples, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("need at least one sample")
    if bandwidth <= 0.0:
        raise ValueError("bandwidth must be positive")
    if grid_points < 8:
        raise ValueError("grid too coarse")
    lo = float(s.min()) - 4.0 * bandwidth
    hi = float(s.max()) + 4.0 * bandwidth
    x = np.linspace(lo, hi, grid_points)
    density = np.zeros(grid_points)
    # Chunk over samples to bound the (samples x grid) temporary.
    chunk = max(1, int(2_000_000 // grid_points))
    for start in range(0, s.size, chunk):
        block = s[start : start + chunk]
        z = (x[None, :] - block[:, None]) / bandwidth
        density += np.exp(-0.5 * z * z).sum(axis=0)
    density /= s.size * bandwidth * _SQRT_2PI
    return DensityTable(x=x, density=density, bandwidth=float(bandwidth))


def _level_region(table: DensityTable, t: float) -> tuple[float, list[tuple[float, float]]]:
    """Mass and intervals of {x : density(x) >= t}, crossings interpolated."""
    x, y = table.x, table.density
    n = len(x)
    mass = 0.0
    intervals: list[tuple[float, float]] = []
    i = 0
    while i < n:
        if y[i] < t:
            i += 1
            continue
        j = i
        while j + 1 < n and y[j + 1] >= t:
            j += 1
        seg_mass = 0.0
        if j > i:
            seg_mass += float(np.trapezoid(y[i : j + 1], x[i : j + 1]))
        left = x[i]
        if i > 0 and y[i] > t:
            frac = (y[i] - t) / (y[i] - y[i - 1])
            left = x[i] - frac * (x[i] - x[i - 1])
            seg_mass += 0.5 * (t + y[i]) * (x[i] - left)
        right = x[j]
        if j + 1 < n and y[j] > t:
            frac = (y[j] - t) / (y[j] - y[j + 1])
            right = x[j] + frac * (x[j + 1] - x[j])
            seg_mass += 0.5 * (t + y[j]) * (right - x[j])
        mass += seg_mass
        intervals.append((float(left), float(right)))
        i = j + 1
    return mass, intervals


def hdi_region(table: DensityTable, mass: float = 0.95) -> IntervalSet:
    """Highest-density region holding ``mass`` probability.

    The density threshold is found by bisection; the region may be several
    intervals for multimodal densities.
    """
    if not (0.0 < mass < 1.0):
        raise ValueError("mass must lie strictly between 0 and 1")
    total = table.total_mass
    if total <= 0.0:
        raise ValueError("density table has no mass")
    target = mass * total if total < mass else mass
    lo_t, hi_t = 0.0, float(table.density.max())
    intervals = [(float(table.x[0]), float(table.x[-1]))]
    for _ in range(100):
        mid = 0.5 * (lo_t + hi_t)
        m, ivals = _level_region(table, mid)
        if ivals:
            intervals = ivals
        if abs(m - target) <= 1e-6:
            return IntervalSet.from_pairs(ivals)
        if m > target:
            lo_t = mid
        else:
            hi_t = mid
    return IntervalSet.from_pairs(intervals)


def region_mass(table: DensityTable, region: IntervalSet) -> float:
    """Trapezoidal probability mass of ``region`` under the density table."""
    x, y = table.x, table.density
    total = 0.0
    for lo, hi in region.intervals:
        lo_c = max(lo, float(x[0]))
        hi_c = min(hi, float(x[-1]))
        if hi_c <= lo_c:
            continue
        grid = x[(x > lo_c) & (x < hi_c)]
        pts = np.concatenate(([lo_c], grid, [hi_c]))
        vals = np.interp(pts, x, y)
        total += float(np.trapezoid(vals, pts))
    return total


# ---------------------------------------------------------------------------
# Overlap ratios


@dataclass(frozen=True)
class OverlapRatios:
    ratio_early: float
    ratio_late: float
    shared: float
    only_early: float
    only_late: float


def _ratios_from_pieces(a: float, b: float, c: float) -> OverlapRatios:
    """Ratios from the measures of E-only (a), L-only (b), and the overlap (c).

    The shared component is derived as 1 - only_E - only_L so that the three
    parts sum to exactly 1.0 in floating point.
    """
    denom = a + b + c
    if denom <= 0.0:
        raise ValueError("both regions have zero measure")
    if c == 0.0:
        shared = 0.0
        if a == 0.0:
            only_e, only_l = 0.0, 1.0
        elif b == 0.0:
            only_e, only_l = 1.0, 0.0
        else:
            only_e = a / denom
            only_l = 1.0 - only_e
    elif a == 0.0 and b == 0.0:
        only_e = only_l = 0.0
        shared = 1.0
    elif a == 0.0:
        only_e = 0.0
        only_l = b / denom
        shared = 1.0 - only_l
    elif b == 0.0:
        only_l = 0.0
        only_e = a / denom
        shared = 1.0 - only_e
    else:
        only_e = a / denom
        only_l = b / denom
        # parenthesized so (only_e + only_l) + shared == 1.0 bitwise
        shared = 1.0 - (only_e + only_l)
        if shared <= 0.0:
            # c is vanishingly small relative to a + b; fold the rounding
            # slack into only_l to keep the parts summing to 1 exactly.
            shared = 0.0
            only_l = 1.0 - only_e
    return OverlapRatios(
        ratio_early=only_e + shared,
        ratio_late=only_l + shared,
        shared=shared,
        only_early=only_e,
        only_late=only_l,
    )


def region_overlap(region_early: IntervalSet, region_late: IntervalSet) -> OverlapRatios:
    """Shared/exclusive ratios of the two density regions by interval length."""
    if region_early.is_empty and region_late.is_empty:
        raise ValueError("both regions are empty")
    a = region_early.difference(region_late).total_length
    b = region_late.difference(region_early).total_length
    c = region_early.intersection(region_late).total_length
    return _ratios_from_pieces(a, b, c)


def region_overlap_mass(
    region_early: IntervalSet, region_late: IntervalSet, pooled: DensityTable
) -> OverlapRatios:
    """Overlap ratios weighted by probability mass under a pooled density."""
    if region_early.is_empty and region_late.is_empty:
        raise ValueError("both regions are empty")
    a = region_mass(pooled, region_early.difference(region_late))
    b = region_mass(pooled, region_late.difference(region_early))
    c = region_mass(pooled, region_early.intersection(region_late))
    return _ratios_from_pieces(a, b, c)


# ---------------------------------------------------------------------------
# Per-topic pipeline and stratified comparison


@dataclass(frozen=True)
class BiasResult:
    topic_id: int
    n_early: int
    n_late: int
    volume_ratio_early: float
    ratio_early: float
    ratio_late: float
    shared: float
    only_early: float
    only_late: float
    region_early: IntervalSet
    region_late: IntervalSet
    low_separation: bool = False


@dataclass(frozen=True)
class InsufficientTopic:
    """Topic skipped because one group has too few documents."""

    topic_id: int
    n_early: int
    n_late: int


def compute_topic_bias(
    topic_id: int,
    X_early: np.ndarray,
    X_late: np.ndarray,
    *,
    mass: float = 0.95,
    min_group: int = 5,
    ridge: float = 1e-3,
    folds: int = 5,
    grid_points: int = 2048,
    overlap_mode: str = "measure",
) -> BiasResult | InsufficientTopic:
    """Run the four-step bias measurement for one topic.

    ``overlap_mode`` selects how regions are measured: "measure" uses total
    interval length, "mass" weighs intervals by a pooled-sample KDE.
    """
    n_e, n_l = len(X_early), len(X_late)
    if n_e < min_group or n_l < min_group:
        return InsufficientTopic(topic_id=topic_id, n_early=n_e, n_late=n_l)
    if overlap_mode not in ("measure", "mass"):
        raise ValueError("overlap_mode must be 'measure' or 'mass'")
    proj = project_topic(topic_id, X_early, X_late, ridge=ridge)
    h_e = kde_bandwidth_cv(proj.values_early, folds=min(folds, n_e))
    h_l = kde_bandwidth_cv(proj.values_late, folds=min(folds, n_l))
    table_e = kde_density(proj.values_early, h_e, grid_points)
    table_l = kde_density(proj.values_late, h_l, grid_points)
    region_e = hdi_region(table_e, mass)
    region_l = hdi_region(table_l, mass)
    if overlap_mode == "mass":
        pooled_vals = np.concatenate([proj.values_early, proj.values_late])
        h_p = kde_bandwidth_cv(pooled_vals, folds=folds)
        ratios = region_overlap_mass(region_e, region_l, kde_density(pooled_vals, h_p, grid_points))
    else:
        ratios = region_overlap(region_e, region_l)
    return BiasResult(
        topic_id=topic_id,
        n_early=n_e,
        n_late=n_l,
        volume_ratio_early=n_e / (n_e + n_l),
        ratio_early=ratios.ratio_early,
        ratio_late=ratios.ratio_late,
        shared=ratios.shared,
        only_early=ratios.only_early,
        only_late=ratios.only_late,
        region_early=region_e,
        region_late=region_l,
        low_separation=proj.low_separation,
    )


@dataclass(frozen=True)
class StratumStats:
    index: int
    label: str
    size: int
    mean_ratio_early: float | None
    mean_ratio_late: float | None
    welch: WelchResult | None
    note: str = ""


@dataclass(frozen=True)
class StrataReport:
    bounds: tuple[float, float]
    strata: tuple[StratumStats, ...]


def stratum_of(volume_ratio_early: float, bounds: tuple[float, float] = (1 / 3, 2 / 3)) -> int:
    """Stratum index by tweet-volume share: [0,b0), [b0,b1), [b1,1]."""
    if volume_ratio_early < bounds[0]:
        return 0
    if volume_ratio_early < bounds[1]:
        return 1
    return 2


def stratified_compare(
    results: Sequence[BiasResult], bounds: tuple[float, float] = (1 / 3, 2 / 3)
) -> StrataReport:
    """Compare ratio_E vs ratio_L distributions within volume-share strata.

    Empty strata are reported with size 0 and no test; Welch's test is also
    skipped when a stratum's values are degenerate.
    """
    labels = (
        f"volume share < {bounds[0]:.4g}",
        f"{bounds[0]:.4g} <= volume share < {bounds[1]:.4g}",
        f"volume share >= {bounds[1]:.4g}",
    )
    buckets: list[list[BiasResult]] = [[], [], []]
    for r in results:
        buckets[stratum_of(r.volume_ratio_early, bounds)].append(r)
    strata = []
    for idx, bucket in enumerate(buckets):
        if not bucket:
            strata.append(
                StratumStats(idx, labels[idx], 0, None, None, None, note="empty stratum")
            )
            continue
        ratio_e = [r.ratio_early for r in bucket]
        ratio_l = [r.ratio_late for r in bucket]
        note = ""
        test: WelchResult | None = None
        if len(bucket) >= 2:
            try:
                test = welch_t(ratio_e, ratio_l)
            except ValueError as exc:
                note = f"test skipped: {exc}"
        else:
            note = "test skipped: stratum too small"
        strata.append(
            StratumStats(
                index=idx,
                label=labels[idx],
                size=len(bucket),
                mean_ratio_early=float(np.mean(ratio_e)),
                mean_ratio_late=float(np.mean(ratio_l)),
                welch=test,
                note=note,
            )
        )
    return StrataReport(bounds=bounds, strata=tuple(strata))


def volume_breadth_correlations(results: Sequence[BiasResult]) -> tuple[float, float]:
    """Pearson r between each group's tweet-volume share and its region share."""
    vol = [r.volume_ratio_early for r in results]
    r_e = pearson_r(vol, [r.ratio_early for r in results])
    r_l = pearson_r([1.0 - v for v in vol], [r.ratio_late for r in results])
    return r_e, r_l
