"""Prefix-allocation record analytics: inclusion trees, coverage, aggregates.

Records are (prefix, label) pairs.  The inclusion tree links each record to
its closest containing record; coverage and approximate-max-aggregate walks
then quantify how record mass clusters inside parent prefixes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .addrspace import Prefix

__all__ = [
    "InclusionNode",
    "InclusionTree",
    "PrefixRecord",
    "approx_max_aggregates",
    "build_inclusion_tree",
    "max_aggregation_runs",
    "percent_covered",
    "width_depth_stats",
]


@dataclass(frozen=True)
class PrefixRecord:
    prefix: Prefix
    label: str
    attributes: dict = field(default_factory=dict, compare=False)


@dataclass
class InclusionNode:
    record: PrefixRecord
    parent: "InclusionNode" = None
    children: list = field(default_factory=list)

    @property
    def depth(self):
        depth, node = 0, self
        while node.parent is not None:
            depth += 1
            node = node.parent
        return depth

    @property
    def is_leaf(self):
        return not self.children


class InclusionTree:
    """Forest over records; parent = closest strictly containing record."""

    def __init__(self, roots, nodes, duplicates):
        self.roots = roots
        self.nodes = nodes
        self.duplicates = duplicates  # (prefix, kept_label, dropped_label)

    def __len__(self):
        return len(self.nodes)

    def node_for(self, prefix: Prefix):
        return self.nodes.get((prefix.value, prefix.length))

    def walk(self):
        stack = list(reversed(self.roots))
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


def build_inclusion_tree(records) -> InclusionTree:
    """Link records by direct prefix containment (no record in between).

    Duplicate prefixes collapse to the last record seen; collisions are
    reported on the tree.
    """
    latest = {}
    duplicates = []
    for rec in records:
        key = (rec.prefix.value, rec.prefix.length)
        if key in latest:
            duplicates.append((rec.prefix, rec.label, latest[key].label))
        latest[key] = rec
    # Ancestors sort before descendants: by start address, shorter first.
    ordered = sorted(latest.values(), key=lambda r: (r.prefix.value, r.prefix.length))
    roots, nodes = [], {}
    stack = []
    for rec in ordered:
        node = InclusionNode(rec)
        nodes[(rec.prefix.value, rec.prefix.length)] = node
        while stack and not stack[-1].record.prefix.contains(rec.prefix):
            stack.pop()
        if stack:
            node.parent = stack[-1]
            stack[-1].children.append(node)
        else:
            roots.append(node)
        stack.append(node)
    return InclusionTree(roots, nodes, duplicates)


def width_depth_stats(tree: InclusionTree):
    """Degree distribution over parents and depth distribution over nodes."""
    if not len(tree):
        raise ValueError("empty inclusion tree")
    degree_counts = {}
    depth_counts = {}
    for node in tree.walk():
        if node.children:
            d = len(node.children)
            degree_counts[d] = degree_counts.get(d, 0) + 1
        depth = node.depth
        depth_counts[depth] = depth_counts.get(depth, 0) + 1
    return degree_counts, depth_counts


def _merged_span(intervals):
    """Total length of the union of half-open integer intervals."""
    total = 0
    end = None
    for lo, hi in sorted(intervals):
        if end is None or lo > end:
            total += hi - lo
            end = hi
        elif hi > end:
            total += hi - end
            end = hi
    return total


def percent_covered(tree: InclusionTree, ancestor: Prefix) -> float:
    """Fraction of ``ancestor`` covered by strictly longer record prefixes."""
    intervals = []
    for node in tree.walk():
        p = node.record.prefix
        if p.length > ancestor.length and ancestor.contains(p):
            intervals.append((p.value, p.value + p.span))
    if not intervals:
        return 0.0
    return _merged_span(intervals) / ancestor.span


def approx_max_aggregates(tree: InclusionTree, parent: PrefixRecord, threshold=0.51):
    """First prefixes crossing the coverage threshold toward the leaves.

    Walks the (non-record) common-ancestor prefixes between ``parent`` and
    its leaf records top-down and emits each prefix whose covered fraction
    first reaches ``threshold`` on its path; emitted prefixes are mutually
    non-nested.  Returns [(prefix, coverage), ...].
    """
    node = tree.node_for(parent.prefix)
    if node is None:
        raise KeyError(f"record {parent.prefix} not in tree")
    descendants = []
    stack = list(node.children)
    leaves = []
    while stack:
        child = stack.pop()
        descendants.append(child.record.prefix)
        if child.is_leaf:
            leaves.append(child.record.prefix)
        stack.extend(child.children)
    if not leaves:
        raise ValueError(f"record {parent.prefix} has no leaf descendants")
    desc_intervals = [(p.value, p.value + p.span) for p in descendants]
    universe = parent.prefix.universe

    def coverage(candidate: Prefix):
        inside = [
            (max(lo, candidate.value), min(hi, candidate.value + candidate.span))
            for (lo, hi), p in zip(desc_intervals, descendants)
            if p.length > candidate.length and candidate.contains(p)
        ]
        if not inside:
            return 0.0
        return _merged_span(inside) / candidate.span

    out = []

    def visit(candidate: Prefix):
        # Only strict ancestors of at least one leaf record are candidates.
        if not any(candidate.contains(l) and l.length > candidate.length for l in leaves):
            return
        cov = coverage(candidate)
        if cov >= threshold:
            out.append((candidate, cov))
            return
        half = candidate.length + 1
        if half > universe.effective_bits:
            return
        visit(Prefix(universe, candidate.value, half))
        visit(Prefix(universe, candidate.value + (candidate.span >> 1), half))

    visit(parent.prefix)
    return out


def max_aggregation_runs(blocks):
    """Per contiguous same-label run, the largest aligned block inside it.

    ``blocks`` is a sequence of (Prefix, label) with equal prefix lengths and
    consecutive keys.  Returns [(run_start_prefix, label, run_blocks,
    aggregate_prefix), ...] where the aggregate is the largest power-of-two
    aligned block fully inside the run (i.e. the shortest reachable prefix).
    """
    blocks = list(blocks)
    if not blocks:
        return []
    length = blocks[0][0].length
    universe = blocks[0][0].universe
    prev_key = None
    for prefix, _ in blocks:
        if prefix.length != length:
            raise ValueError("blocks must share one prefix length")
        if prev_key is not None and prefix.key != prev_key + 1:
            raise ValueError("blocks must be consecutive")
        prev_key = prefix.key

    runs = []
    start = 0
    for i in range(1, len(blocks) + 1):
        if i == len(blocks) or blocks[i][1] != blocks[start][1]:
            runs.append((start, i))
            start = i

    out = []
    for lo_idx, hi_idx in runs:
        lo_key = blocks[lo_idx][0].key
        hi_key = blocks[hi_idx - 1][0].key + 1
        best = None
        for a in range(length + 1):  # shortest aggregate first
            size = 1 << (length - a)
            aligned = -(-lo_key // size) * size
            if aligned + size <= hi_key:
                best = Prefix.from_key(universe, aligned >> (length - a), a)
                break
        out.append((blocks[lo_idx][0], blocks[lo_idx][1], hi_idx - lo_idx, best))
    return out
