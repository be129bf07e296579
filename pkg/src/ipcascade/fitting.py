"""Estimate the cascade generator from observed split weights.

Weights are left-child mass fractions, one per nonempty parent.  The
pre-processing pipeline drops single-address parents (their splits carry no
information), replaces boundary weights 0 and 1 by 1/(2n) and 1 - 1/(2n),
and keeps only a band of child levels where the weights are well resolved.

Two sigma estimators are provided.  "moment" is the plain RMS of the logit-
transformed weights.  Because observed weights are integer ratios k/n, the
RMS is biased low whenever parent counts are small; the default "interval"
estimator removes that bias by treating each weight as the rounding interval
((k-1/2)/n, (k+1/2)/n) and iterating the interval-censored normal-scale MLE
(an EM fixed point).  Both reduce to the same answer for large parents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .masstree import PrefixMassTree

__all__ = [
    "FitResult",
    "InsufficientDataError",
    "SplitWeight",
    "compute_weights",
    "default_fit_levels",
    "fit_sigma",
    "preprocess",
    "weight_histogram",
]

DEFAULT_FIT_LEVELS_V4 = (8, 16)
DEFAULT_FIT_LEVELS_V6 = (20, 44)


class InsufficientDataError(ValueError):
    """No usable weights survived filtering."""


@dataclass(frozen=True)
class SplitWeight:
    """Left-child fraction of one parent split at child level ``level``."""

    level: int
    parent_count: int
    w: float

    def __post_init__(self):
        if self.parent_count < 1:
            raise ValueError("parent_count must be >= 1")
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("w must lie in [0, 1]")


@dataclass(frozen=True)
class FitResult:
    sigma_hat: float
    samples: int
    level_min: int
    level_max: int
    method: str = "interval"


def default_fit_levels(universe):
    return DEFAULT_FIT_LEVELS_V4 if universe.family == "v4" else DEFAULT_FIT_LEVELS_V6


def compute_weights(tree: PrefixMassTree, level_range) -> list[SplitWeight]:
    """One weight per nonempty parent, for child levels in ``level_range``.

    The tree must cover [level_range[0] - 1, level_range[1]].
    """
    lo, hi = level_range
    if lo - 1 < tree.level_min or hi > tree.level_max:
        raise KeyError(
            f"weights for child levels [{lo}, {hi}] need tree levels "
            f"[{lo - 1}, {hi}], tree has [{tree.level_min}, {tree.level_max}]"
        )
    out = []
    for level in range(lo, hi + 1):
        pkeys, pcounts = tree.counts(level - 1)
        ckeys, ccounts = tree.counts(level)
        left_keys = pkeys << np.uint64(1)
        idx = np.searchsorted(ckeys, left_keys)
        left = np.zeros(pkeys.size, dtype=np.int64)
        in_bounds = idx < ckeys.size
        hit = in_bounds.copy()
        hit[in_bounds] = ckeys[idx[in_bounds]] == left_keys[in_bounds]
        left[hit] = ccounts[idx[hit]]
        for n, k in zip(pcounts, left):
            out.append(SplitWeight(level, int(n), float(k) / float(n)))
    return out


def preprocess(weights, fit_levels=DEFAULT_FIT_LEVELS_V4):
    """Filter and de-degenerate raw weights ahead of the sigma fit.

    Drops single-address parents, keeps only child levels inside
    ``fit_levels``, and replaces w = 0 with 1/(2n) and w = 1 with 1 - 1/(2n)
    so the logit transform stays finite.
    """
    lo, hi = fit_levels
    cleaned = []
    for sw in weights:
        if sw.parent_count == 1 or not lo <= sw.level <= hi:
            continue
        w = sw.w
        if w == 0.0:
            w = 1.0 / (2 * sw.parent_count)
        elif w == 1.0:
            w = 1.0 - 1.0 / (2 * sw.parent_count)
        cleaned.append(SplitWeight(sw.level, sw.parent_count, w))
    if not cleaned:
        raise InsufficientDataError("no weights left after pre-processing")
    return cleaned


def _rms_sigma(w):
    y = np.log(w / (1.0 - w))
    return float(np.sqrt(np.mean(y * y)))


def _interval_bounds(n, w):
    """Logit-space censoring interval for an observed weight k/n.

    Boundary replacements 1/(2n) and 1-1/(2n) are mapped back to the k = 0
    and k = n tail intervals.
    """
    k = np.floor(w * n + 0.5)
    k[np.isclose(w * 2.0 * n, 1.0)] = 0
    k[np.isclose((1.0 - w) * 2.0 * n, 1.0)] = n[np.isclose((1.0 - w) * 2.0 * n, 1.0)]
    lo_w = (k - 0.5) / n
    hi_w = (k + 0.5) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(k == 0, -np.inf, np.log(lo_w / (1.0 - lo_w)))
        b = np.where(k == n, np.inf, np.log(hi_w / (1.0 - hi_w)))
    return a, b


def _phi(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def _censored_second_moment(a, b, s):
    """E[y^2 | a < y < b] for y ~ N(0, s^2), robust in the far tails."""
    alpha = a / s
    beta = b / s
    m2 = np.empty_like(alpha)

    left = np.isneginf(alpha)
    right = np.isposinf(beta)
    inner = ~(left | right)

    # One-sided tails: single-ndtr forms in log space, no cancellation.
    log_sqrt_2pi = 0.5 * math.log(2 * math.pi)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        bl = beta[left]
        m2[left] = 1.0 - bl * np.exp(-0.5 * bl * bl - log_sqrt_2pi - log_ndtr(bl))
        ar = alpha[right]
        m2[right] = 1.0 + ar * np.exp(-0.5 * ar * ar - log_sqrt_2pi - log_ndtr(-ar))

        ai, bi = alpha[inner], beta[inner]
        denom = ndtr(bi) - ndtr(ai)
        raw = 1.0 + (ai * _phi(ai) - bi * _phi(bi)) / np.where(denom > 0, denom, np.nan)
    # Hard bounds for interior intervals keep tail cancellation harmless.
    lo_bound = np.where((ai < 0) & (bi > 0), 0.0, np.minimum(ai * ai, bi * bi))
    hi_bound = np.maximum(ai * ai, bi * bi)
    raw = np.where(np.isfinite(raw), raw, 0.5 * (lo_bound + hi_bound))
    m2[inner] = np.clip(raw, lo_bound, hi_bound)
    return m2 * s * s


def _interval_sigma(n, w, max_iter=200, rtol=1e-12):
    a, b = _interval_bounds(n, w)
    s2 = max(_rms_sigma(w) ** 2, 1e-8)
    for _ in range(max_iter):
        s2_new = float(np.mean(_censored_second_moment(a, b, math.sqrt(s2))))
        if abs(s2_new - s2) <= rtol * s2:
            s2 = s2_new
            break
        s2 = s2_new
    return math.sqrt(s2)


def fit_sigma(cleaned_weights, method="interval") -> FitResult:
    """Fit the logit-normal scale from pre-processed weights.

    method="moment": sigma = sqrt(mean(logit(w)^2)), the zero-mean RMS (the
    generator is symmetric, so the logits have mean zero).
    method="interval" (default): rounding-interval EM refinement of the same
    statistic; unbiased under the integer quantization of observed weights.
    """
    if not cleaned_weights:
        raise InsufficientDataError("cannot fit sigma from zero weights")
    n = np.fromiter((sw.parent_count for sw in cleaned_weights), dtype=np.float64)
    w = np.fromiter((sw.w for sw in cleaned_weights), dtype=np.float64)
    levels = [sw.level for sw in cleaned_weights]
    if method == "moment":
        sigma = _rms_sigma(w)
    elif method == "interval":
        sigma = _interval_sigma(n, w)
    else:
        raise ValueError(f"unknown fit method {method!r}")
    return FitResult(sigma, len(cleaned_weights), min(levels), max(levels), method)


def weight_histogram(weights, bins=21, mirror=True):
    """Per-level histograms of the weights over [0, 1].

    With ``mirror`` both w and 1 - w are counted (each parent's split defines
    the sibling weight too), which is how distribution plots are usually
    drawn; the sigma fit itself uses one weight per parent.
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    if not weights:
        raise InsufficientDataError("no weights to histogram")
    edges = np.linspace(0.0, 1.0, bins + 1)
    by_level = {}
    for sw in weights:
        by_level.setdefault(sw.level, []).append(sw.w)
    out = {}
    for level in sorted(by_level):
        vals = np.array(by_level[level])
        if mirror:
            vals = np.concatenate([vals, 1.0 - vals])
        counts, _ = np.histogram(vals, bins=edges)
        out[level] = counts.astype(np.int64)
    return out, edges
