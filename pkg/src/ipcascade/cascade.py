"""Finite discrete conservative cascade: sampling, splitting, synthesis.

The generator W is a symmetric logit-normal on (0,1) with scale sigma (the
degenerate point mass at 1/2 is sigma = 0).  Mass is split level by level:
the left child receives round(w * n) (half away from zero) and the right
child the remainder, with any excess over a child's capacity spilled to its
sibling.  Mass is conserved exactly at every split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import expit, log_expit

from .addrspace import AddressSet, CapacityMap

__all__ = [
    "CascadeSpec",
    "CriticalRanges",
    "DegenerateGeneratorError",
    "GeneratorModel",
    "InfeasibleSplitError",
    "QuadratureError",
    "SpilloverLog",
    "critical_q_range",
    "generate",
    "sample_weight",
    "split_mass",
    "theoretical_tau",
]

LOG2 = math.log(2.0)


class InfeasibleSplitError(ValueError):
    """Parent mass exceeds the combined capacity of its children."""


class DegenerateGeneratorError(ValueError):
    """Operation undefined for the point-mass generator (sigma = 0)."""


class QuadratureError(RuntimeError):
    """Numerical integration failed to reach the requested tolerance."""

    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved relative error {achieved:.2e})")
        self.achieved = achieved


@dataclass(frozen=True)
class GeneratorModel:
    """Cascade generator: symmetric logit-normal, or the point mass at 1/2."""

    sigma: float = 0.0
    kind: str = "logit-normal"

    def __post_init__(self):
        if self.kind not in ("logit-normal", "deterministic-half"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise ValueError("sigma must be finite and >= 0")
        if self.kind == "deterministic-half" and self.sigma != 0:
            raise ValueError("deterministic-half requires sigma = 0")

    @classmethod
    def deterministic_half(cls):
        return cls(0.0, "deterministic-half")

    @property
    def degenerate(self):
        return self.sigma == 0.0


@dataclass(frozen=True)
class CascadeSpec:
    """Everything needed to synthesize one cascade realization."""

    generator: GeneratorModel
    total_mass: int
    universe: object
    capacity: CapacityMap
    seed: int = 0

    def __post_init__(self):
        if self.total_mass < 1:
            raise ValueError("total_mass must be positive")
        if self.capacity.universe != self.universe:
            raise ValueError("capacity map universe mismatch")


@dataclass
class SpilloverLog:
    """Per level: how many parent splits hit a capacity bound, of how many."""

    spilled: dict = field(default_factory=dict)
    totals: dict = field(default_factory=dict)

    def record(self, level, spilled, total):
        self.spilled[level] = int(spilled)
        self.totals[level] = int(total)

    def fraction(self, level):
        total = self.totals.get(level, 0)
        return self.spilled.get(level, 0) / total if total else 0.0

    def first_spill_level(self, min_level=0):
        hits = [l for l, s in self.spilled.items() if s > 0 and l >= min_level]
        return min(hits) if hits else None

    def rows(self):
        return [(l, self.spilled[l], self.totals[l]) for l in sorted(self.totals)]


def sample_weight(generator: GeneratorModel, rng):
    """One draw of W.  Deterministic given the rng state."""
    return float(sample_weights(generator, rng, 1)[0])


def sample_weights(generator: GeneratorModel, rng, size):
    if generator.degenerate:
        return np.full(size, 0.5)
    return expit(generator.sigma * rng.standard_normal(size))


def _round_half_up(x):
    # Half away from zero; all masses are nonnegative here.
    return np.floor(x + 0.5)


def split_mass(n_parent, w, cap_left, cap_right):
    """Split ``n_parent`` into (left, right) by weight ``w`` under capacities.

    Left gets round(w * n) half-away-from-zero, right the remainder; mass
    above a child's capacity spills to the sibling.  Conservation is exact.
    """
    if not 0.0 < w < 1.0:
        raise ValueError("w must lie strictly inside (0, 1)")
    if n_parent > cap_left + cap_right:
        raise InfeasibleSplitError(
            f"cannot place {n_parent} addresses into capacity {cap_left} + {cap_right}"
        )
    left = int(_round_half_up(w * n_parent))
    if left > cap_left:
        left = cap_left
    right = n_parent - left
    if right > cap_right:
        right = cap_right
        left = n_parent - right
    return left, right


def _child_capacities(keys, level, bits, triples):
    """Capacity per key (prefix ints at ``level``), honoring overrides."""
    caps = np.full(keys.shape, float(1 << (bits - level)))
    for okey, olen, ocap in triples:
        if olen <= level:
            inside = (keys >> np.uint64(level - olen)) == okey
            if inside.any():
                caps[inside] = np.minimum(caps[inside], float(ocap))
        else:
            holder = okey >> (olen - level)
            caps[keys == np.uint64(holder)] -= float((1 << (bits - olen)) - ocap)
    return caps


def generate(spec: CascadeSpec):
    """Synthesize one cascade realization: (AddressSet, SpilloverLog).

    Splits mass level by level from the root; one weight is drawn per parent
    in ascending key order (numpy PCG64 seeded from ``spec.seed``), the
    sibling weight being its mirror.  Reserved (capacity-0) prefixes receive
    no addresses.
    """
    bits = spec.universe.effective_bits
    if bits > 64:
        raise ValueError("generation supports effective depths up to 64 bits")
    total_cap = spec.capacity.total_capacity()
    if spec.total_mass > total_cap:
        raise InfeasibleSplitError(
            f"requested {spec.total_mass} addresses but universe capacity is {total_cap}"
        )
    triples = spec.capacity.override_triples()
    rng = np.random.default_rng(spec.seed)
    keys = np.zeros(1, dtype=np.uint64)
    mass = np.array([spec.total_mass], dtype=np.int64)
    log = SpilloverLog()
    for level in range(1, bits + 1):
        w = sample_weights(spec.generator, rng, keys.size)
        left_keys = keys << np.uint64(1)
        right_keys = left_keys | np.uint64(1)
        cap_left = _child_capacities(left_keys, level, bits, triples)
        cap_right = _child_capacities(right_keys, level, bits, triples)
        if np.any(mass > cap_left + cap_right):
            raise InfeasibleSplitError(f"infeasible split at level {level}")
        wanted = _round_half_up(w * mass).astype(np.int64)
        left = np.minimum(wanted, cap_left.astype(np.int64))
        right = mass - left
        over = right > cap_right
        if over.any():
            right[over] = cap_right.astype(np.int64)[over]
            left = mass - right
        log.record(level, int(np.count_nonzero(left != wanted)), keys.size)
        child_keys = np.concatenate([left_keys, right_keys])
        child_mass = np.concatenate([left, right])
        nonzero = child_mass > 0
        order = np.argsort(child_keys[nonzero], kind="stable")
        keys = child_keys[nonzero][order]
        mass = child_mass[nonzero][order]
    assert int(mass.sum()) == spec.total_mass
    return AddressSet(spec.universe, keys), log


def _log_mean_wq(sigma, q, epsrel=1e-9):
    """log E[W^q] for the logit-normal via peak-shifted quadrature."""

    def g(z):
        return -0.5 * z * z + q * log_expit(sigma * z)

    half_width = 12.0 + abs(q) * sigma
    grid = np.linspace(-half_width, half_width, 513)
    shift = float(np.max(g(grid)))
    val, abserr = integrate.quad(
        lambda z: math.exp(g(z) - shift), -np.inf, np.inf, epsabs=0.0, epsrel=epsrel, limit=300
    )
    if val <= 0 or abserr > 100 * epsrel * val:
        raise QuadratureError(f"E[W^q] quadrature did not converge for q={q}", abserr / max(val, 1e-300))
    return shift + math.log(val) - 0.5 * math.log(2 * math.pi)


def theoretical_tau(generator: GeneratorModel, q, epsrel=1e-9):
    """Structure function of the generator, estimator convention.

    tau(q) = -log2 E[W^q] - 1, so tau(1) = 0 and tau(0) = -1 for any
    full-support symmetric generator; the point mass at 1/2 gives q - 1.
    """
    if generator.degenerate:
        return float(q) - 1.0
    return -_log_mean_wq(generator.sigma, q, epsrel) / LOG2 - 1.0


@dataclass(frozen=True)
class CriticalRanges:
    """q-ranges where the two-level estimator is consistent / Gaussian."""

    consistency: tuple
    gaussianity: tuple


def critical_q_range(generator: GeneratorModel, q_limit=64.0, tol=1e-4):
    """Roots of q * tau'(q) - tau(q) = 0 bracketing the usable q-range.

    The Gaussianity range is the consistency range halved.  Derivatives use
    central differences; roots are found by bisection to ``tol``.
    """
    if generator.degenerate:
        raise DegenerateGeneratorError("the point-mass generator has a linear tau; no critical range")

    def h(q, dq=1e-5):
        slope = (theoretical_tau(generator, q + dq) - theoretical_tau(generator, q - dq)) / (2 * dq)
        return q * slope - theoretical_tau(generator, q)

    def bisect(lo, hi, f_lo, f_hi):
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            f_mid = h(mid)
            if (f_lo <= 0) != (f_mid <= 0):
                hi, f_hi = mid, f_mid
            else:
                lo, f_lo = mid, f_mid
        return 0.5 * (lo + hi)

    def find_root(direction):
        # h(0) = -tau(0) = 1 > 0; walk outward doubling |q| until h flips sign.
        prev_q = direction / 64.0
        prev_h = h(prev_q)
        if prev_h <= 0:
            raise RuntimeError("h must be positive near q = 0")
        q = prev_q * 2
        while abs(q) <= q_limit:
            cur = h(q)
            if cur <= 0:
                if direction > 0:
                    return bisect(prev_q, q, prev_h, cur)
                return bisect(q, prev_q, cur, prev_h)
            prev_q, prev_h = q, cur
            q *= 2
        raise DegenerateGeneratorError(
            f"no critical-range root found for |q| <= {q_limit}; generator too close to degenerate"
        )

    q_neg = find_root(-1.0)
    q_pos = find_root(+1.0)
    return CriticalRanges((q_neg, q_pos), (q_neg / 2.0, q_pos / 2.0))


def default_q_grid(generator: GeneratorModel, step=0.25):
    """q-grid spanning the generator's Gaussianity range."""
    lo, hi = critical_q_range(generator).gaussianity
    return np.arange(lo, hi, step)
