import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipcascade import AddressSet, PrefixMassTree, build_mass_tree, parse_addresses, zoom_path

from conftest import V4


def brute_counts(addresses, level, bits=32):
    out = {}
    for a in addresses:
        key = a >> (bits - level) if level < bits else a
        out[key] = out.get(key, 0) + 1
    return out


class TestBuildMassTree:
    def test_single_address_chain(self):
        aset = AddressSet(V4, [0x01020304])
        tree = build_mass_tree(aset, (0, 32))
        for level in tree.levels:
            keys, counts = tree.counts(level)
            assert keys.size == 1 and counts[0] == 1

    def test_two_extremes_level1(self):
        aset = AddressSet(V4, [0x00000000, 0x80000000])
        tree = build_mass_tree(aset, (0, 1))
        assert tree.as_dict(1) == {0: 1, 1: 1}

    def test_four_address_level2(self, four_addresses):
        tree = build_mass_tree(four_addresses, (0, 2))
        assert tree.as_dict(2) == {0: 2, 1: 1, 3: 1}

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            build_mass_tree(AddressSet(V4, []), (0, 4))

    def test_total_mass(self, four_addresses):
        tree = build_mass_tree(four_addresses, (0, 8))
        assert tree.total == 4

    @settings(max_examples=40, derandomize=True)
    @given(st.lists(st.integers(0, (1 << 32) - 1), min_size=1, max_size=200))
    def test_parent_child_conservation(self, values):
        aset = AddressSet(V4, values)
        tree = build_mass_tree(aset, (0, 12))
        for level in range(0, 12):
            parents = tree.as_dict(level)
            children = tree.as_dict(level + 1)
            for key, count in parents.items():
                assert count == children.get(key << 1, 0) + children.get(key << 1 | 1, 0)
        assert tree.as_dict(0) == {0: len(aset)}

    def test_parse_format_idempotence(self, cascade_50k):
        tree = build_mass_tree(cascade_50k, (0, 16))
        again = parse_addresses(cascade_50k.format().splitlines(), V4)
        tree2 = build_mass_tree(again, (0, 16))
        for level in tree.levels:
            assert tree.as_dict(level) == tree2.as_dict(level)


class TestZoomPath:
    def test_single_address_one_bin(self):
        aset = AddressSet(V4, [0x01020304])
        tree = build_mass_tree(aset, (0, 32))
        rows = zoom_path(tree, 0x01020304, [4], sub_bits=4)
        nonzero = [r for r in rows if r[2] > 0]
        assert len(rows) == 16 and len(nonzero) == 1 and nonzero[0][2] == 1

    def test_uniform_full_tree_flat(self, toy8):
        aset = AddressSet(toy8, range(256))
        tree = build_mass_tree(aset, (0, 8))
        rows = zoom_path(tree, 0, [0, 2, 4], sub_bits=2)
        for level in (0, 2, 4):
            bins = [count for l, _, count in rows if l == level]
            assert len(set(bins)) == 1  # flat by symmetry

    def test_four_address_bins(self, four_addresses):
        # enumeration oracle: top-2-bit bins of the 4 addresses are (2,1,0,1)
        expected = brute_counts(list(four_addresses), 2)
        assert [expected.get(i, 0) for i in range(4)] == [2, 1, 0, 1]
        tree = build_mass_tree(four_addresses, (0, 4))
        rows = zoom_path(tree, 0, [0], sub_bits=2)
        assert [count for _, _, count in rows] == [2, 1, 0, 1]

    def test_level_outside_tree(self, four_addresses):
        tree = build_mass_tree(four_addresses, (0, 4))
        with pytest.raises(KeyError):
            zoom_path(tree, 0, [4], sub_bits=4)


class TestScaledTrees:
    def test_from_level_counts_and_scaling(self):
        tree = PrefixMassTree.from_level_counts(V4, {3: {0: 2, 5: 3}})
        scaled = tree.scaled(7)
        assert scaled.as_dict(3) == {0: 14, 5: 21}
        with pytest.raises(ValueError):
            tree.scaled(0)
