"""Per-level prefix mass maps: the discrete measure behind all estimators.

A PrefixMassTree stores, for each prefix length in a range, the count of set
addresses inside every nonempty prefix.  Levels are kept as parallel sorted
arrays (key, count); real data occupies a vanishing fraction of deep levels,
so sparse storage is essential.
"""

from __future__ import annotations

import numpy as np

from .addrspace import AddressSet, Prefix

__all__ = ["PrefixMassTree", "build_mass_tree", "zoom_path"]


class PrefixMassTree:
    """Counts of addresses per prefix, for every level in [level_min, level_max]."""

    def __init__(self, universe, levels):
        self.universe = universe
        self._levels = {}
        for level, (keys, counts) in levels.items():
            keys = np.asarray(keys, dtype=np.uint64)
            counts = np.asarray(counts, dtype=np.int64)
            order = np.argsort(keys)
            self._levels[int(level)] = (keys[order], counts[order])
        if not self._levels:
            raise ValueError("mass tree needs at least one level")
        self.level_min = min(self._levels)
        self.level_max = max(self._levels)

    @classmethod
    def from_level_counts(cls, universe, level_counts):
        """Build directly from {level: {key: count}} maps (testing/scaling hook)."""
        levels = {}
        for level, mapping in level_counts.items():
            keys = np.fromiter(mapping.keys(), dtype=np.uint64, count=len(mapping))
            counts = np.fromiter(mapping.values(), dtype=np.int64, count=len(mapping))
            levels[level] = (keys, counts)
        return cls(universe, levels)

    @property
    def levels(self):
        return range(self.level_min, self.level_max + 1)

    @property
    def total(self) -> int:
        _, counts = self.counts(self.level_min)
        return int(counts.sum())

    def counts(self, level):
        """(sorted keys, counts) arrays for one level."""
        if level not in self._levels:
            raise KeyError(f"level {level} not in tree range [{self.level_min}, {self.level_max}]")
        return self._levels[level]

    def as_dict(self, level):
        keys, counts = self.counts(level)
        return {int(k): int(c) for k, c in zip(keys, counts)}

    def count_of(self, prefix: Prefix) -> int:
        keys, counts = self.counts(prefix.length)
        idx = np.searchsorted(keys, np.uint64(prefix.key))
        if idx < keys.size and int(keys[idx]) == prefix.key:
            return int(counts[idx])
        return 0

    def scaled(self, factor: int):
        """Same tree with every count multiplied by a positive integer."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return PrefixMassTree(
            self.universe,
            {l: (k.copy(), c * factor) for l, (k, c) in self._levels.items()},
        )


def build_mass_tree(address_set: AddressSet, level_range=None) -> PrefixMassTree:
    """Count addresses per prefix at every level of the requested range."""
    if len(address_set) == 0:
        raise ValueError("cannot build a mass tree from an empty address set")
    bits = address_set.universe.effective_bits
    if level_range is None:
        level_range = (0, bits)
    lo, hi = level_range
    if not 0 <= lo <= hi <= bits:
        raise ValueError(f"level range ({lo}, {hi}) outside [0, {bits}]")
    addrs = address_set.addresses
    levels = {}
    for level in range(lo, hi + 1):
        keys = addrs >> np.uint64(bits - level) if level < bits else addrs
        uniq, counts = np.unique(keys, return_counts=True)
        levels[level] = (uniq, counts.astype(np.int64))
    return PrefixMassTree(address_set.universe, levels)


def zoom_path(tree: PrefixMassTree, target: int, levels, sub_bits=4):
    """Sibling histograms along the zoom-in path toward ``target``.

    For each requested level l, returns the dense count histogram over all
    2^sub_bits sub-prefixes (at level l + sub_bits) of the ancestor of
    ``target`` at level l.  Rows: (level, Prefix at l + sub_bits, count),
    zero bins included.
    """
    bits = tree.universe.effective_bits
    if not tree.universe.contains(target):
        raise ValueError("target outside universe")
    if sub_bits < 1:
        raise ValueError("sub_bits must be >= 1")
    rows = []
    for level in levels:
        sub_level = level + sub_bits
        if level < tree.level_min or sub_level > tree.level_max:
            raise KeyError(f"zoom at level {level} needs tree levels up to {sub_level}")
        ancestor = target >> (bits - level) if level < bits else target
        keys, counts = tree.counts(sub_level)
        lo = np.searchsorted(keys, np.uint64(ancestor << sub_bits))
        hi = np.searchsorted(keys, np.uint64(((ancestor + 1) << sub_bits) - 1), side="right")
        bins = np.zeros(1 << sub_bits, dtype=np.int64)
        sel_keys = keys[lo:hi]
        bins[(sel_keys & np.uint64((1 << sub_bits) - 1)).astype(np.int64)] = counts[lo:hi]
        for offset, count in enumerate(bins):
            key = (ancestor << sub_bits) | offset
            rows.append((level, Prefix.from_key(tree.universe, key, sub_level), int(count)))
    return rows
