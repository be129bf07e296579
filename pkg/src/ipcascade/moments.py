"""Method-of-moments structure-function estimation with singleton filtering.

The two-level estimator at prefix length l is the log2 ratio of partition
sums between levels l and l+1, where the level-l sum runs over prefixes with
at least two addresses and the level-(l+1) sum over the children of exactly
those prefixes.  Single-address prefixes cannot split further and are
excluded as parents, but single-address children still count; the filtered
mass is therefore conserved between the two levels and the estimator is
exactly zero at q = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .masstree import PrefixMassTree

__all__ = [
    "DimensionsReport",
    "LinearityResult",
    "PartitionTable",
    "StructureEstimate",
    "UnusableLevelError",
    "generalized_dimensions",
    "linearity_test",
    "partition_function",
    "singleton_fraction",
    "tau_tilde_avg",
    "tau_tilde_level",
]

CI_FACTOR = 1.96


class UnusableLevelError(ValueError):
    """No prefix with two or more addresses at the requested level."""


@dataclass
class PartitionTable:
    """log2 of the unfiltered partition sums Z(l, q) over nonempty prefixes."""

    q_grid: np.ndarray
    levels: list
    log2_z: np.ndarray  # shape (len(levels), len(q_grid))

    def rows(self):
        for i, level in enumerate(self.levels):
            for j, q in enumerate(self.q_grid):
                yield float(q), level, float(self.log2_z[i, j])


@dataclass
class StructureEstimate:
    """Averaged two-level estimates with a per-q variance and 95% CI."""

    q_grid: np.ndarray
    tau: np.ndarray
    variance: np.ndarray
    levels_used: list
    per_level: np.ndarray  # shape (len(levels_used), len(q_grid))
    critical_ranges: object = None
    variance_kind: str = "empirical"

    @property
    def ci95(self):
        half = CI_FACTOR * np.sqrt(self.variance)
        return self.tau - half, self.tau + half

    def value_at(self, q):
        idx = _grid_index(self.q_grid, q)
        return float(self.tau[idx]), float(self.variance[idx])

    def rows(self):
        lo, hi = self.ci95
        for j, q in enumerate(self.q_grid):
            yield float(q), float(self.tau[j]), float(self.variance[j]), float(lo[j]), float(hi[j])


@dataclass
class DimensionsReport:
    """Box-counting, information, and correlation dimensions."""

    d0: float
    d0_std: float
    d1: float
    d2: float
    d2_std: float
    tau1: float
    tau1_is_zero: bool
    ordering_ok: bool = True

    def as_dict(self):
        return {
            "d0": {"value": self.d0, "std": self.d0_std},
            "d1": {"value": self.d1},
            "d2": {"value": self.d2, "std": self.d2_std},
            "tau1_zero": self.tau1_is_zero,
            "ordering_d2_le_d1_le_d0": self.ordering_ok,
        }


@dataclass
class LinearityResult:
    is_linear: bool
    max_residual: float
    slope: float
    intercept: float
    q_window: tuple = field(default=None)


def _grid_index(q_grid, q):
    idx = int(np.argmin(np.abs(np.asarray(q_grid) - q)))
    if abs(float(q_grid[idx]) - q) > 1e-9:
        raise KeyError(f"q = {q} not on the estimate's grid")
    return idx


def _powers(counts, q_grid):
    # counts are integers < 2^53: sums at q = 0 and 1 are exact in float64.
    return np.power(counts.astype(np.float64)[:, None], np.asarray(q_grid)[None, :]).sum(axis=0)


def partition_function(tree: PrefixMassTree, q_grid, levels) -> PartitionTable:
    """Unfiltered log2 Z(l, q) over nonempty prefixes; 0^q never evaluated."""
    q_grid = np.asarray(q_grid, dtype=np.float64)
    levels = list(levels)
    table = np.empty((len(levels), q_grid.size))
    for i, level in enumerate(levels):
        _, counts = tree.counts(level)
        if counts.size == 0:
            raise UnusableLevelError(f"level {level} is empty")
        table[i] = np.log2(_powers(counts, q_grid))
    return PartitionTable(q_grid, levels, table)


def _filtered_sums(tree, level, q_grid):
    """(Z' at level over counts >= 2, Z' at level+1 over their children)."""
    pkeys, pcounts = tree.counts(level)
    retain = pcounts >= 2
    if not retain.any():
        raise UnusableLevelError(f"no prefix with >= 2 addresses at level {level}")
    rkeys = pkeys[retain]
    ckeys, ccounts = tree.counts(level + 1)
    parents = ckeys >> np.uint64(1)
    child_sel = np.isin(parents, rkeys)
    zp = _powers(pcounts[retain], q_grid)
    zc = _powers(ccounts[child_sel], q_grid)
    return zp, zc


def tau_tilde_level(tree: PrefixMassTree, level, q):
    """Two-level estimate at one prefix length (scalar q)."""
    zp, zc = _filtered_sums(tree, level, np.array([float(q)]))
    return float(np.log2(zp[0]) - np.log2(zc[0]))


def tau_tilde_avg(tree: PrefixMassTree, q_grid, levels, variance_estimator=None) -> StructureEstimate:
    """Average the per-level estimates over all usable levels in ``levels``.

    The default variance is the between-level sample variance divided by the
    number of usable levels (an empirical stand-in for the estimator's CLT
    variance; substitute ``variance_estimator(per_level_matrix)`` to change
    it).  Levels without any splittable prefix are skipped.
    """
    q_grid = np.asarray(q_grid, dtype=np.float64)
    per_level, used = [], []
    for level in levels:
        try:
            zp, zc = _filtered_sums(tree, level, q_grid)
        except UnusableLevelError:
            continue
        per_level.append(np.log2(zp) - np.log2(zc))
        used.append(level)
    if len(used) < 2:
        raise UnusableLevelError(
            f"estimation needs at least 2 usable levels, found {len(used)}"
        )
    matrix = np.array(per_level)
    tau = matrix.mean(axis=0)
    if variance_estimator is None:
        variance = matrix.var(axis=0, ddof=1) / len(used)
        kind = "empirical"
    else:
        variance = np.asarray(variance_estimator(matrix), dtype=np.float64)
        kind = getattr(variance_estimator, "__name__", "custom")
    return StructureEstimate(q_grid, tau, variance, used, matrix, variance_kind=kind)


def generalized_dimensions(estimate: StructureEstimate) -> DimensionsReport:
    """D0 = -tau(0), D1 = tau'(1-), D2 = tau(2), with stds where defined.

    D1 is the left-sided derivative at q = 1, taken from a quadratic
    least-squares fit over the grid points in [0.5, 1.0] and evaluated at 1
    (a straight secant over that window overshoots the derivative for
    concave structure functions).  Ordering violations are reported, never
    clamped.
    """
    tau0, var0 = estimate.value_at(0.0)
    tau1, var1 = estimate.value_at(1.0)
    tau2, var2 = estimate.value_at(2.0)
    window = [
        (float(q), float(t))
        for q, t in zip(estimate.q_grid, estimate.tau)
        if 0.5 - 1e-9 <= q <= 1.0 + 1e-9
    ]
    if len(window) < 3:
        raise KeyError("D1 needs at least three grid points in [0.5, 1.0]")
    qs = np.array([q for q, _ in window])
    ts = np.array([t for _, t in window])
    coeffs = np.polyfit(qs, ts, deg=2)
    d1 = float(2 * coeffs[0] * 1.0 + coeffs[1])

    d0 = -tau0
    d2 = tau2
    tau1_zero = abs(tau1) <= CI_FACTOR * np.sqrt(var1) + 1e-9
    return DimensionsReport(
        d0=d0,
        d0_std=float(np.sqrt(var0)),
        d1=d1,
        d2=d2,
        d2_std=float(np.sqrt(var2)),
        tau1=tau1,
        tau1_is_zero=bool(tau1_zero),
        ordering_ok=bool(d2 <= d1 + 1e-12 and d1 <= d0 + 1e-12),
    )


def linearity_test(estimate: StructureEstimate, q_window=None, threshold=0.05) -> LinearityResult:
    """Least-squares line over the window; linear iff max |residual| <= threshold."""
    if q_window is None:
        if estimate.critical_ranges is not None:
            q_window = estimate.critical_ranges.gaussianity
        else:
            q_window = (float(estimate.q_grid[0]), float(estimate.q_grid[-1]))
    lo, hi = q_window
    sel = (estimate.q_grid >= lo - 1e-9) & (estimate.q_grid <= hi + 1e-9)
    if int(sel.sum()) < 3:
        raise ValueError("linearity test needs at least 3 grid points in the window")
    qs = estimate.q_grid[sel]
    ts = estimate.tau[sel]
    slope, intercept = np.polyfit(qs, ts, deg=1)
    residuals = ts - (slope * qs + intercept)
    max_resid = float(np.max(np.abs(residuals)))
    return LinearityResult(max_resid <= threshold, max_resid, float(slope), float(intercept), (lo, hi))


def singleton_fraction(tree: PrefixMassTree, level) -> float:
    """Share of nonempty prefixes holding exactly one address."""
    _, counts = tree.counts(level)
    if counts.size == 0:
        raise UnusableLevelError(f"level {level} is empty")
    return float(np.count_nonzero(counts == 1)) / float(counts.size)
