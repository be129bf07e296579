"""Streaming address-structure anomaly detection.

A fixed-size hash-slot table holds the most recent distinct addresses.  Each
accepted address updates filtered partition sums incrementally along its
path (and the evicted occupant's), a fresh structure-function snapshot is
pushed, and the current snapshot is compared against the one from ``lag``
events ago with a diagonal two-sample t^2 statistic referred to a
chi-squared distribution.  The anomalous score is one minus the p-value.

Snapshot variances here must resolve single-event structural changes, so
instead of the between-level spread used for batch analysis they use a
delta-method estimate of how much the averaged estimator moves when one
uniformly random table address is relocated (per-prefix unit count jumps
plus prefix birth terms, summed over levels).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .addrspace import AddressSet
from .cascade import GeneratorModel, default_q_grid

__all__ = [
    "AnomalyScore",
    "DegenerateTestError",
    "DetectorConfig",
    "DetectorState",
    "Snapshot",
    "delta_tau_report",
    "detector_init",
    "hotelling_score",
    "lag_sweep",
    "observe",
    "preload",
    "synth_anomalous",
]

LOG2 = math.log(2.0)
MASK64 = (1 << 64) - 1
DEFAULT_LEVELS_V4 = (8, 16)
DEFAULT_LEVELS_V6 = (20, 44)


class DegenerateTestError(ValueError):
    """Zero pooled variance at some q; the t^2 statistic is undefined."""


def _hash64(value, seed):
    """Seeded splitmix64 finalizer; uniform and deterministic."""
    x = (value + seed + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class DetectorConfig:
    universe: object
    slots: int
    lag: int = 10
    q_grid: np.ndarray = None
    levels: tuple = None
    seed: int = 0
    generator: GeneratorModel = None

    def __post_init__(self):
        if self.slots <= 0:
            raise ValueError("slot count must be positive")
        if self.lag < 1:
            raise ValueError("lag must be >= 1")
        if self.q_grid is None:
            gen = self.generator or GeneratorModel(1.61)
            object.__setattr__(self, "q_grid", default_q_grid(gen))
        else:
            object.__setattr__(self, "q_grid", np.asarray(self.q_grid, dtype=np.float64))
        if self.q_grid.size < 1:
            raise ValueError("q-grid must not be empty")
        if self.levels is None:
            band = DEFAULT_LEVELS_V4 if self.universe.family == "v4" else DEFAULT_LEVELS_V6
            object.__setattr__(self, "levels", band)
        lo, hi = self.levels
        if not 0 <= lo <= hi or hi + 1 > self.universe.effective_bits:
            raise ValueError(f"level band {self.levels} does not fit the universe")


@dataclass(frozen=True)
class Snapshot:
    tau: np.ndarray  # None when fewer than 2 levels were usable
    variance: np.ndarray
    usable_levels: int

    @property
    def valid(self):
        return self.tau is not None


@dataclass(frozen=True)
class AnomalyScore:
    score: float
    p_value: float
    t2: float
    warming: bool


class DetectorState:
    """Slot table plus incrementally maintained filtered partition sums."""

    def __init__(self, config: DetectorConfig):
        self.config = config
        self.slots = [None] * config.slots
        self.occupancy = 0
        self.insertions = 0
        lo, hi = config.levels
        self.band = range(lo, hi + 1)
        self.counts = {level: {} for level in range(lo, hi + 2)}
        p = config.q_grid.size
        self.zp = {l: np.zeros(p) for l in self.band}
        self.zc = {l: np.zeros(p) for l in self.band}
        self.jp = {l: np.zeros(p) for l in self.band}
        self.jc = {l: np.zeros(p) for l in self.band}
        self.retained = {l: 0 for l in self.band}
        self.children = {l: 0 for l in self.band}
        self.ring = deque(maxlen=config.lag + 1)
        self.last = AnomalyScore(0.0, 1.0, 0.0, True)
        self._pow_cache = {}

    # -- power helpers ----------------------------------------------------

    def _pow(self, c):
        vec = self._pow_cache.get(c)
        if vec is None:
            vec = np.power(float(c), self.config.q_grid)
            self._pow_cache[c] = vec
        return vec

    def _jump2(self, c):
        step = self._pow(c + 1) - self._pow(c)
        return c * step * step

    # -- incremental maintenance ------------------------------------------

    def _apply(self, address, delta):
        """Add (+1) or remove (-1) one address from all counts and sums."""
        bits = self.config.universe.effective_bits
        counts = self.counts
        for level in self.band:
            pkey = address >> (bits - level)
            ckey = address >> (bits - level - 1)
            skey = ckey ^ 1
            c_par = counts[level].get(pkey, 0)
            c_child = counts[level + 1].get(ckey, 0)
            c_sib = counts[level + 1].get(skey, 0)
            if delta > 0:
                if c_par >= 2:
                    self.zp[level] += self._pow(c_par + 1) - self._pow(c_par)
                    self.jp[level] += self._jump2(c_par + 1) - self._jump2(c_par)
                    self.zc[level] += self._pow(c_child + 1) - (self._pow(c_child) if c_child else 0.0)
                    self.jc[level] += self._jump2(c_child + 1) - (self._jump2(c_child) if c_child else 0.0)
                    if c_child == 0:
                        self.children[level] += 1
                elif c_par == 1:
                    # Parent crosses the splittable threshold: it and both
                    # children (with post-event counts) enter the sums.
                    self.zp[level] += self._pow(2)
                    self.jp[level] += self._jump2(2)
                    self.retained[level] += 1
                    self.zc[level] += self._pow(c_child + 1)
                    self.jc[level] += self._jump2(c_child + 1)
                    self.children[level] += 1
                    if c_sib:
                        self.zc[level] += self._pow(c_sib)
                        self.jc[level] += self._jump2(c_sib)
                        self.children[level] += 1
            else:
                if c_par >= 3:
                    self.zp[level] += self._pow(c_par - 1) - self._pow(c_par)
                    self.jp[level] += self._jump2(c_par - 1) - self._jump2(c_par)
                    self.zc[level] += (self._pow(c_child - 1) if c_child > 1 else 0.0) - self._pow(c_child)
                    self.jc[level] += (self._jump2(c_child - 1) if c_child > 1 else 0.0) - self._jump2(c_child)
                    if c_child == 1:
                        self.children[level] -= 1
                elif c_par == 2:
                    # Parent drops below the threshold: it and its children
                    # (with pre-event counts) leave the sums.
                    self.zp[level] -= self._pow(2)
                    self.jp[level] -= self._jump2(2)
                    self.retained[level] -= 1
                    self.zc[level] -= self._pow(c_child)
                    self.jc[level] -= self._jump2(c_child)
                    self.children[level] -= 1
                    if c_sib:
                        self.zc[level] -= self._pow(c_sib)
                        self.jc[level] -= self._jump2(c_sib)
                        self.children[level] -= 1
        lo, hi = self.config.levels
        for level in range(lo, hi + 2):
            key = address >> (bits - level)
            new = counts[level].get(key, 0) + delta
            if new:
                counts[level][key] = new
            else:
                counts[level].pop(key, None)
        self.occupancy += delta

    def snapshot(self) -> Snapshot:
        taus, variances = [], []
        total = max(self.occupancy, 1)
        four_q = self._pow(2) ** 2
        for level in self.band:
            if self.retained[level] < 1:
                continue
            zp, zc = self.zp[level], self.zc[level]
            if np.any(zp <= 0) or np.any(zc <= 0):
                continue
            taus.append(np.log2(zp) - np.log2(zc))
            w2c = (self.jc[level] + self.children[level]) / total
            w2p = (self.jp[level] + self.retained[level] * four_q) / total
            variances.append(w2c / (zc * LOG2) ** 2 + w2p / (zp * LOG2) ** 2)
        if len(taus) < 2:
            p = self.config.q_grid.size
            return Snapshot(None, np.zeros(p), len(taus))
        n = len(taus)
        tau = np.mean(taus, axis=0)
        variance = np.sum(variances, axis=0) / n ** 2
        return Snapshot(tau, variance, n)

    def batch_recompute(self):
        """Filtered sums rebuilt from scratch over the current table (oracle)."""
        addrs = np.array(sorted(a for a in self.slots if a is not None), dtype=np.uint64)
        return _bulk_sums(self.config, addrs)

    def table_addresses(self):
        return sorted(a for a in self.slots if a is not None)

    def clone(self):
        other = DetectorState(self.config)
        other.slots = list(self.slots)
        other.occupancy = self.occupancy
        other.insertions = self.insertions
        other.counts = {l: dict(m) for l, m in self.counts.items()}
        for l in self.band:
            other.zp[l] = self.zp[l].copy()
            other.zc[l] = self.zc[l].copy()
            other.jp[l] = self.jp[l].copy()
            other.jc[l] = self.jc[l].copy()
        other.retained = dict(self.retained)
        other.children = dict(self.children)
        other.ring = deque(self.ring, maxlen=self.ring.maxlen)
        other.last = self.last
        other._pow_cache = self._pow_cache  # shared read-mostly cache
        return other


def _bulk_sums(config, addrs):
    """Counts and filtered sums computed directly from an address array."""
    bits = config.universe.effective_bits
    lo, hi = config.levels
    qg = config.q_grid
    counts = {}
    for level in range(lo, hi + 2):
        keys = addrs >> np.uint64(bits - level) if level < bits else addrs
        uniq, cnt = np.unique(keys, return_counts=True)
        counts[level] = (uniq, cnt.astype(np.int64))
    out = {"counts": counts, "zp": {}, "zc": {}, "jp": {}, "jc": {}, "retained": {}, "children": {}}

    def powers(c):
        return np.power(c.astype(np.float64)[:, None], qg[None, :])

    def jump2(c):
        cf = c.astype(np.float64)[:, None]
        step = np.power(cf + 1.0, qg[None, :]) - np.power(cf, qg[None, :])
        return cf * step * step

    for level in range(lo, hi + 1):
        pkeys, pcounts = counts[level]
        keep = pcounts >= 2
        rkeys, rcounts = pkeys[keep], pcounts[keep]
        ckeys, ccounts = counts[level + 1]
        sel = np.isin(ckeys >> np.uint64(1), rkeys)
        scounts = ccounts[sel]
        out["zp"][level] = powers(rcounts).sum(axis=0) if rcounts.size else np.zeros(qg.size)
        out["zc"][level] = powers(scounts).sum(axis=0) if scounts.size else np.zeros(qg.size)
        out["jp"][level] = jump2(rcounts).sum(axis=0) if rcounts.size else np.zeros(qg.size)
        out["jc"][level] = jump2(scounts).sum(axis=0) if scounts.size else np.zeros(qg.size)
        out["retained"][level] = int(keep.sum())
        out["children"][level] = int(sel.sum())
    return out


def detector_init(config: DetectorConfig) -> DetectorState:
    """Fresh detector: empty slots, empty snapshot ring, warming."""
    return DetectorState(config)


def preload(state: DetectorState, addresses) -> None:
    """Install a baseline set before scoring starts.

    Addresses are hashed into slots (later entries evict earlier on
    collision), the sums are rebuilt in bulk over the surviving table, and
    the snapshot ring is seeded with the post-preload snapshot so the first
    ``lag`` scored events are each compared against this baseline.
    """
    cfg = state.config
    for addr in addresses:
        addr = int(addr)
        slot = _hash64(addr, cfg.seed) % cfg.slots
        state.slots[slot] = addr
        state.insertions += 1
    addrs = np.array(sorted(a for a in state.slots if a is not None), dtype=np.uint64)
    bulk = _bulk_sums(cfg, addrs)
    lo, hi = cfg.levels
    state.counts = {
        level: {int(k): int(c) for k, c in zip(*bulk["counts"][level])}
        for level in range(lo, hi + 2)
    }
    state.zp = {l: bulk["zp"][l] for l in state.band}
    state.zc = {l: bulk["zc"][l] for l in state.band}
    state.jp = {l: bulk["jp"][l] for l in state.band}
    state.jc = {l: bulk["jc"][l] for l in state.band}
    state.retained = dict(bulk["retained"])
    state.children = dict(bulk["children"])
    state.occupancy = int(addrs.size)
    snap = state.snapshot()
    state.ring.clear()
    for _ in range(cfg.lag + 1):
        state.ring.append(snap)


def hotelling_score(current, lagged):
    """Diagonal two-sample t^2 between (tau, variance) snapshot pairs.

    Per-q variances are pooled as known (CLT) variances, so the statistic is
    referred to a chi-squared distribution with one degree of freedom per
    grid point.  Returns (t2, p_value).
    """
    tau_now, var_now = current
    tau_lag, var_lag = lagged
    tau_now = np.asarray(tau_now, dtype=np.float64)
    tau_lag = np.asarray(tau_lag, dtype=np.float64)
    if tau_now.shape != tau_lag.shape:
        raise ValueError("snapshot vectors differ in length")
    pooled = np.asarray(var_now, dtype=np.float64) + np.asarray(var_lag, dtype=np.float64)
    if np.any(pooled <= 0):
        raise DegenerateTestError("zero pooled variance; t^2 undefined")
    delta = tau_now - tau_lag
    t2 = float(np.sum(delta * delta / pooled))
    return t2, float(chi2.sf(t2, tau_now.size))


def observe(state: DetectorState, address) -> AnomalyScore:
    """Process one incoming distinct address and return its anomalous score.

    A duplicate of the current slot occupant is a no-op (the previous score
    is repeated).  Scores stay at zero with ``warming`` set until the table
    has seen ``slots`` insertions and the snapshot ring is full.
    """
    address = int(address)
    if not state.config.universe.contains(address):
        raise ValueError("address outside the detector's universe")
    slot = _hash64(address, state.config.seed) % state.config.slots
    occupant = state.slots[slot]
    if occupant == address:
        return state.last
    if occupant is not None:
        state._apply(occupant, -1)
    state._apply(address, +1)
    state.slots[slot] = address
    state.insertions += 1

    state.ring.append(state.snapshot())
    warming = (
        state.insertions < state.config.slots
        or len(state.ring) < state.config.lag + 1
        or not state.ring[-1].valid
        or not state.ring[0].valid
    )
    if warming:
        state.last = AnomalyScore(0.0, 1.0, 0.0, True)
        return state.last
    now, lag = state.ring[-1], state.ring[0]
    t2, p_value = hotelling_score((now.tau, now.variance), (lag.tau, lag.variance))
    state.last = AnomalyScore(1.0 - p_value, p_value, t2, False)
    return state.last


def delta_tau_report(state: DetectorState, k=None):
    """Current tau vector minus the one from ``k`` events ago."""
    if k is None:
        k = state.config.lag
    if not 1 <= k <= state.config.lag:
        raise ValueError(f"lag {k} outside [1, {state.config.lag}]")
    if len(state.ring) < state.config.lag + 1:
        raise ValueError("detector still warming; no lagged snapshot available")
    now = state.ring[-1]
    lag = state.ring[-1 - k]
    if not (now.valid and lag.valid):
        raise ValueError("detector still warming; snapshots incomplete")
    return now.tau - lag.tau


def synth_anomalous(baseline: AddressSet, count, seed):
    """Addresses inside previously-observed /8s with uniform low 24 bits.

    Outputs are distinct from each other and from ``baseline``.  IPv4 only.
    """
    if baseline.universe.family != "v4":
        raise ValueError("anomalous-address synthesis is defined for IPv4")
    if len(baseline) == 0:
        raise ValueError("baseline must be nonempty")
    top8 = np.unique(baseline.addresses >> np.uint64(24))
    available = int(top8.size) * (1 << 24) - len(baseline)
    if count > available:
        raise ValueError(f"requested {count} addresses but only {available} are available")
    rng = np.random.default_rng(seed)
    seen = set()
    out = []
    while len(out) < count:
        addr = (int(rng.choice(top8)) << 24) | int(rng.integers(0, 1 << 24))
        if addr in seen or addr in baseline:
            continue
        seen.add(addr)
        out.append(addr)
    return out


def _consistent_continuation(state: DetectorState, pool, count):
    """Pick held-out addresses that extend occupied deepest-band prefixes.

    Such insertions never open a new prefix or flip a retention threshold
    inside the band; they are the synthetic stand-in for distinct control
    traffic that keeps arriving from already-established regions.  Falls
    back to arbitrary held-out addresses if the pool runs dry.
    """
    bits = state.config.universe.effective_bits
    deepest = state.config.levels[1] + 1
    deep_counts = state.counts[deepest]
    table = set(a for a in state.slots if a is not None)
    picked, rest = [], []
    for addr in pool:
        if addr in table:
            continue
        if deep_counts.get(addr >> (bits - deepest), 0) >= 2:
            picked.append(addr)
        else:
            rest.append(addr)
        if len(picked) == count:
            return picked
    return (picked + rest)[:count]


def _percentiles(values):
    arr = np.asarray(values, dtype=np.float64)
    return {
        "p5": float(np.percentile(arr, 5)),
        "median": float(np.percentile(arr, 50)),
        "p95": float(np.percentile(arr, 95)),
    }


def lag_sweep(
    baseline: AddressSet,
    k_list,
    seeds,
    anomaly_source=None,
    slots=None,
    q_grid=None,
    levels=None,
    generator=None,
):
    """Score anomalous vs control injection streams across lags and seeds.

    Per seed, the shuffled baseline minus a small holdout pool is preloaded.
    The control stream takes held-out members whose deepest-band prefix is
    already multiply occupied in the table, so each control insertion only
    increments existing counts (a structure-preserving continuation with no
    in-band novelty); ``anomaly_source(table_set, count, seed)`` generates
    the anomalous stream (default: uniform low bits inside the detector's
    observed /8s).  The lag-k score of a stream is the score of its k-th
    event: at that point the whole lag window consists of injected
    addresses and the lagged snapshot is the pristine baseline.

    Returns one row per k: {"k", "anomalous": {p5, median, p95},
    "control": {p5, median, p95}}.
    """
    k_list = sorted(set(int(k) for k in k_list))
    if not k_list or k_list[0] < 1:
        raise ValueError("lags must be >= 1")
    k_max = k_list[-1]
    if len(baseline) <= k_max:
        raise ValueError("baseline too small for the requested lags")
    if anomaly_source is None:
        anomaly_source = synth_anomalous
    if q_grid is None:
        q_grid = default_q_grid(generator or GeneratorModel(1.61))

    pool_size = max(8 * k_max, 64)
    if len(baseline) <= pool_size:
        raise ValueError("baseline too small for the requested lags")

    ctrl_scores = {k: [] for k in k_list}
    anom_scores = {k: [] for k in k_list}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        shuffled = rng.permutation(baseline.addresses)
        pool = [int(a) for a in shuffled[-pool_size:]]
        preload_addrs = shuffled[:-pool_size]
        n_slots = slots or preload_addrs.size
        if n_slots > len(baseline):
            raise ValueError("slot count exceeds baseline size")
        config = DetectorConfig(
            universe=baseline.universe,
            slots=int(n_slots),
            lag=k_max,
            q_grid=q_grid,
            levels=levels,
            seed=int(seed),
        )
        detector = detector_init(config)
        preload(detector, preload_addrs)
        table_set = AddressSet(baseline.universe, np.array(detector.table_addresses(), dtype=np.uint64))
        anomalous = anomaly_source(table_set, k_max, int(seed) + 0x5EED)
        holdout = _consistent_continuation(detector, pool, k_max)

        ctrl_run = detector.clone()
        ctrl_seq = [observe(ctrl_run, a).score for a in holdout]
        anom_seq = [observe(detector, a).score for a in anomalous]
        for k in k_list:
            ctrl_scores[k].append(ctrl_seq[k - 1])
            anom_scores[k].append(anom_seq[k - 1])

    return [
        {"k": k, "anomalous": _percentiles(anom_scores[k]), "control": _percentiles(ctrl_scores[k])}
        for k in k_list
    ]
