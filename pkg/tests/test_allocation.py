import numpy as np
import pytest

from ipcascade import (
    PrefixRecord,
    approx_max_aggregates,
    build_inclusion_tree,
    max_aggregation_runs,
    parse_prefix,
    percent_covered,
    width_depth_stats,
)

from conftest import V4


def R(text, label="x"):
    return PrefixRecord(parse_prefix(text, V4), label)


def P(text):
    return parse_prefix(text, V4)


def brute_force_edges(records):
    """O(n^2) direct-containment oracle: parent = smallest strict container."""
    edges = {}
    for rec in records:
        best = None
        for other in records:
            if other.prefix == rec.prefix:
                continue
            if other.prefix.contains(rec.prefix):
                if best is None or other.prefix.length > best.prefix.length:
                    best = other
        edges[str(rec.prefix)] = str(best.prefix) if best else None
    return edges


class TestInclusionTree:
    def test_chain(self):
        tree = build_inclusion_tree([R("10.0.0.0/8"), R("10.1.0.0/16"), R("10.1.2.0/24")])
        depths = sorted(node.depth for node in tree.walk())
        assert depths == [0, 1, 2]

    def test_two_roots(self):
        tree = build_inclusion_tree([R("10.0.0.0/8"), R("11.0.0.0/8")])
        assert len(tree.roots) == 2

    def test_interposed_prefix(self):
        tree = build_inclusion_tree([R("10.0.0.0/8"), R("10.0.0.0/10"), R("10.0.0.0/9")])
        node10 = tree.node_for(P("10.0.0.0/10"))
        assert str(node10.parent.record.prefix) == "10.0.0.0/9"
        assert str(node10.parent.parent.record.prefix) == "10.0.0.0/8"

    def test_duplicates_collapse_last_wins(self):
        tree = build_inclusion_tree([R("10.0.0.0/8", "first"), R("10.0.0.0/8", "second")])
        assert len(tree) == 1
        assert tree.roots[0].record.label == "second"
        assert len(tree.duplicates) == 1

    def test_edges_match_bruteforce_oracle(self):
        rng = np.random.default_rng(123)
        records = []
        seen = set()
        for _ in range(1000):
            length = int(rng.integers(4, 28))
            key = int(rng.integers(0, 1 << length))
            if (key, length) in seen:
                continue
            seen.add((key, length))
            records.append(
                PrefixRecord(
                    parse_prefix(f"{(key << (32 - length)) >> 24 & 255}."
                                 f"{(key << (32 - length)) >> 16 & 255}."
                                 f"{(key << (32 - length)) >> 8 & 255}."
                                 f"{(key << (32 - length)) & 255}/{length}", V4),
                    f"r{len(records)}",
                )
            )
        tree = build_inclusion_tree(records)
        expected = brute_force_edges(records)
        for node in tree.walk():
            parent = str(node.parent.record.prefix) if node.parent else None
            assert parent == expected[str(node.record.prefix)]


class TestWidthDepthStats:
    def test_chain_of_three(self):
        tree = build_inclusion_tree([R("10.0.0.0/8"), R("10.1.0.0/16"), R("10.1.2.0/24")])
        degrees, depths = width_depth_stats(tree)
        assert degrees == {1: 2}
        assert depths == {0: 1, 1: 1, 2: 1}

    def test_star(self):
        records = [R("10.0.0.0/8")] + [R(f"10.{i}.0.0/16") for i in range(5)]
        degrees, depths = width_depth_stats(tree := build_inclusion_tree(records))
        assert degrees == {5: 1}
        assert depths == {0: 1, 1: 5}

    def test_random_fixture_against_oracle(self):
        rng = np.random.default_rng(7)
        records = []
        for i in range(100):
            length = int(rng.integers(8, 24))
            key = int(rng.integers(0, 1 << length))
            value = key << (32 - length)
            records.append(
                PrefixRecord(
                    parse_prefix(
                        f"{value >> 24 & 255}.{value >> 16 & 255}.{value >> 8 & 255}.{value & 255}/{length}",
                        V4,
                    ),
                    f"r{i}",
                )
            )
        tree = build_inclusion_tree(records)
        expected = brute_force_edges(list({(r.prefix.value, r.prefix.length): r for r in records}.values()))
        child_counts = {}
        for prefix, parent in expected.items():
            if parent is not None:
                child_counts[parent] = child_counts.get(parent, 0) + 1
        degrees, _ = width_depth_stats(tree)
        expected_degrees = {}
        for count in child_counts.values():
            expected_degrees[count] = expected_degrees.get(count, 0) + 1
        assert degrees == expected_degrees


class TestPercentCovered:
    def test_half_covered_slash8(self):
        tree = build_inclusion_tree([R("10.0.0.0/9")])
        assert percent_covered(tree, P("10.0.0.0/8")) == 0.5

    def test_exact_tiling(self):
        tree = build_inclusion_tree([R("10.0.0.0/9"), R("10.128.0.0/9")])
        assert percent_covered(tree, P("10.0.0.0/8")) == 1.0

    def test_slash22_in_slash18(self):
        leaves = [R(f"10.0.{12 + i}.0/24") for i in range(4)]
        tree = build_inclusion_tree(leaves)
        assert percent_covered(tree, P("10.0.0.0/18")) == 1024 / 16384

    def test_no_descendants(self):
        tree = build_inclusion_tree([R("10.0.0.0/8")])
        assert percent_covered(tree, P("11.0.0.0/8")) == 0.0

    def test_monotone_toward_leaves(self):
        leaves = [R(f"10.0.{12 + i}.0/24") for i in range(4)]
        tree = build_inclusion_tree([R("10.0.0.0/18", "parent")] + leaves)
        path = ["10.0.0.0/18", "10.0.0.0/19", "10.0.0.0/20", "10.0.8.0/21", "10.0.12.0/22"]
        coverages = [percent_covered(tree, P(p)) for p in path]
        assert coverages == sorted(coverages)


class TestApproxMaxAggregates:
    def fixture_tree(self, cluster_octets=(12,)):
        records = [R("10.0.0.0/18", "isp")]
        for base in cluster_octets:
            records += [R(f"10.0.{base + i}.0/24", "leaf") for i in range(4)]
        return build_inclusion_tree(records), records[0]

    def test_single_cluster_emits_the_slash22(self):
        tree, parent = self.fixture_tree()
        out = approx_max_aggregates(tree, parent, threshold=0.51)
        assert [(str(p), cov) for p, cov in out] == [("10.0.12.0/22", 1.0)]

    def test_coverage_path_values(self):
        tree, parent = self.fixture_tree()
        assert percent_covered(tree, P("10.0.0.0/19")) == pytest.approx(0.125)
        assert percent_covered(tree, P("10.0.0.0/20")) == pytest.approx(0.25)
        assert percent_covered(tree, P("10.0.8.0/21")) == pytest.approx(0.5)
        assert percent_covered(tree, P("10.0.12.0/22")) == pytest.approx(1.0)

    def test_full_tiling_emits_parent(self):
        records = [R("10.0.0.0/18", "isp")] + [R(f"10.0.{i}.0/24", "leaf") for i in range(64)]
        tree = build_inclusion_tree(records)
        out = approx_max_aggregates(tree, records[0], threshold=0.51)
        assert [(str(p), cov) for p, cov in out] == [("10.0.0.0/18", 1.0)]

    def test_two_clusters_both_emitted(self):
        tree, parent = self.fixture_tree(cluster_octets=(12, 32))
        out = approx_max_aggregates(tree, parent, threshold=0.51)
        assert sorted(str(p) for p, _ in out) == ["10.0.12.0/22", "10.0.32.0/22"]

    def test_outputs_non_nested_and_above_threshold(self):
        tree, parent = self.fixture_tree(cluster_octets=(12, 32))
        out = approx_max_aggregates(tree, parent, threshold=0.51)
        for prefix, cov in out:
            assert cov >= 0.51
        for p1, _ in out:
            for p2, _ in out:
                if p1 != p2:
                    assert not p1.contains(p2)


class TestMaxAggregationRuns:
    def run_blocks(self, start, count, label="ripe", fill="other"):
        blocks = []
        for key in range(0, 256):
            lab = label if start <= key < start + count else fill
            blocks.append((parse_prefix(f"{key}.0.0.0/8", V4), lab))
        return blocks

    def test_sixteen_blocks_at_80(self):
        runs = max_aggregation_runs(self.run_blocks(80, 16))
        match = [r for r in runs if r[1] == "ripe"]
        assert len(match) == 1
        assert str(match[0][3]) == "80.0.0.0/4"

    def test_single_isolated_block(self):
        runs = max_aggregation_runs(self.run_blocks(7, 1))
        match = [r for r in runs if r[1] == "ripe"]
        assert str(match[0][3]) == "7.0.0.0/8"

    def test_sixteen_blocks_at_81(self):
        runs = max_aggregation_runs(self.run_blocks(81, 16))
        match = [r for r in runs if r[1] == "ripe"]
        assert str(match[0][3]) == "88.0.0.0/5"

    def test_nonconsecutive_rejected(self):
        blocks = [(P("0.0.0.0/8"), "a"), (P("2.0.0.0/8"), "a")]
        with pytest.raises(ValueError):
            max_aggregation_runs(blocks)
