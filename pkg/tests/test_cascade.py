import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from ipcascade import (
    CapacityMap,
    CascadeSpec,
    GeneratorModel,
    InfeasibleSplitError,
    critical_q_range,
    generate,
    parse_prefix,
    sample_weight,
    split_mass,
    theoretical_tau,
)
from ipcascade.cascade import DegenerateGeneratorError, sample_weights

from conftest import V4, make_cascade


class TestGeneratorModel:
    def test_sigma_zero_is_half(self):
        gen = GeneratorModel(0.0)
        rng = np.random.default_rng(0)
        assert sample_weight(gen, rng) == 0.5

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            GeneratorModel(-1.0)

    def test_deterministic_kind_requires_zero(self):
        with pytest.raises(ValueError):
            GeneratorModel(1.0, "deterministic-half")


class TestSampleWeight:
    def test_mean_half(self):
        gen = GeneratorModel(1.61)
        rng = np.random.default_rng(7)
        w = sample_weights(gen, rng, 1_000_000)
        assert abs(w.mean() - 0.5) < 0.005
        assert np.all((w > 0) & (w < 1))

    def test_mirror_symmetry_ks(self):
        gen = GeneratorModel(1.61)
        rng = np.random.default_rng(11)
        w = sample_weights(gen, rng, 100_000)
        stat = ks_2samp(w, 1.0 - w).statistic
        critical = 1.63 * math.sqrt(2.0 / 100_000)  # alpha = 0.01
        assert stat < critical

    def test_seed_determinism(self):
        gen = GeneratorModel(2.0)
        a = sample_weights(gen, np.random.default_rng(5), 64)
        b = sample_weights(gen, np.random.default_rng(5), 64)
        assert np.array_equal(a, b)


class TestSplitMass:
    def test_spillover_worked_example(self):
        assert split_mass(100, 0.8, 64, 256) == (64, 36)

    def test_half_away_from_zero(self):
        assert split_mass(3, 0.5, 8, 8) == (2, 1)

    def test_left_clamp_spills_right(self):
        assert split_mass(10, 0.999, 4, 16) == (4, 6)

    def test_infeasible(self):
        with pytest.raises(InfeasibleSplitError):
            split_mass(10, 0.5, 4, 4)

    def test_w_bounds(self):
        with pytest.raises(ValueError):
            split_mass(10, 0.0, 8, 8)

    @settings(max_examples=150, derandomize=True)
    @given(
        st.integers(1, 10_000),
        st.floats(1e-6, 1 - 1e-6),
        st.integers(0, 8_192),
        st.integers(0, 8_192),
    )
    def test_conservation_and_caps(self, n, w, cl, cr):
        if n > cl + cr:
            with pytest.raises(InfeasibleSplitError):
                split_mass(n, w, cl, cr)
            return
        left, right = split_mass(n, w, cl, cr)
        assert left + right == n
        assert 0 <= left <= cl and 0 <= right <= cr
        wanted = math.floor(w * n + 0.5)
        if wanted <= cl and n - wanted <= cr:
            assert left == wanted


class TestGenerate:
    def test_single_address_outside_reserved(self):
        aset, _ = make_cascade(1.61, 1, seed=3)
        assert len(aset) == 1
        cap = CapacityMap.default_v4_reserved()
        addr = next(iter(aset))
        for text in ("0.0.0.0/8", "10.0.0.0/8", "224.0.0.0/4", "240.0.0.0/4"):
            assert not parse_prefix(text, V4).contains(addr)

    def test_saturated_toy_universe(self, toy8):
        # top quarter of the 8-bit space reserved; saturation fills the rest
        reserved = CapacityMap(toy8, [(parse_prefix("c000::/2", toy8), 0)])
        spec = CascadeSpec(GeneratorModel(1.61), 192, toy8, reserved, seed=9)
        aset, _ = generate(spec)
        assert len(aset) == 192
        assert list(aset) == list(range(192))

    def test_over_capacity_rejected(self, toy8):
        spec = CascadeSpec(GeneratorModel(1.0), 300, toy8, CapacityMap.empty(toy8), seed=0)
        with pytest.raises(InfeasibleSplitError):
            generate(spec)

    def test_exact_count_and_determinism(self):
        a1, log1 = make_cascade(2.5, 20_000, seed=77)
        a2, log2 = make_cascade(2.5, 20_000, seed=77)
        assert len(a1) == 20_000
        assert a1 == a2
        assert log1.rows() == log2.rows()

    def test_reserved_prefixes_empty(self, cascade_50k):
        addrs = cascade_50k.addresses
        for text in ("0.0.0.0/8", "10.0.0.0/8", "100.64.0.0/10", "127.0.0.0/8",
                     "169.254.0.0/16", "172.16.0.0/12", "192.168.0.0/16",
                     "224.0.0.0/4", "240.0.0.0/4"):
            p = parse_prefix(text, V4)
            inside = (addrs >= p.value) & (addrs <= p.last)
            assert not inside.any(), f"addresses generated inside {text}"

    def test_spillover_log_totals(self, cascade_50k):
        _, log = make_cascade(1.61, 5_000, seed=5)
        for level, spilled, total in log.rows():
            assert 0 <= spilled <= total

    def test_spillover_moves_up_with_sigma(self):
        _, low = make_cascade(1.0, 100_000, seed=21)
        _, high = make_cascade(3.16, 100_000, seed=21)
        assert high.first_spill_level(17) < low.first_spill_level(17)


class TestTheoreticalTau:
    def test_degenerate_is_linear(self):
        gen = GeneratorModel(0.0)
        for q in (-2.0, 0.0, 1.0, 2.0, 3.5):
            assert theoretical_tau(gen, q) == pytest.approx(q - 1.0, abs=1e-12)

    def test_tau1_zero(self):
        assert abs(theoretical_tau(GeneratorModel(1.61), 1.0)) < 1e-8

    def test_tau0_minus_one(self):
        assert theoretical_tau(GeneratorModel(1.61), 0.0) == pytest.approx(-1.0, abs=1e-9)

    def test_monte_carlo_cross_check(self):
        # independent sampling oracle for q = 2 at sigma = 1.61
        gen = GeneratorModel(1.61)
        rng = np.random.default_rng(123)
        w = sample_weights(gen, rng, 10_000_000)
        w2 = w * w
        mean = w2.mean()
        se = w2.std(ddof=1) / math.sqrt(w2.size)
        mc_tau = -math.log2(mean) - 1.0
        mc_se = 3.0 * se / (mean * math.log(2))
        assert abs(theoretical_tau(gen, 2.0) - mc_tau) < mc_se

    def test_concave_and_nondecreasing_on_consistency_range(self):
        gen = GeneratorModel(1.61)
        lo, hi = critical_q_range(gen).consistency
        qs = np.linspace(lo, hi, 25)
        taus = np.array([theoretical_tau(gen, q) for q in qs])
        diffs = np.diff(taus)
        assert np.all(diffs > -1e-9)  # non-decreasing
        assert np.all(np.diff(diffs) < 1e-6)  # concave down


class TestCriticalRange:
    def test_sigma_161_matches_reference(self):
        ranges = critical_q_range(GeneratorModel(1.61))
        lo, hi = ranges.consistency
        assert abs(lo - (-1.0)) <= 0.1
        assert abs(hi - 3.4) <= 0.1
        glo, ghi = ranges.gaussianity
        assert abs(glo - (-0.5)) <= 0.05
        assert abs(ghi - 1.7) <= 0.05
        assert glo == pytest.approx(lo / 2) and ghi == pytest.approx(hi / 2)

    def test_degenerate_rejected(self):
        with pytest.raises(DegenerateGeneratorError):
            critical_q_range(GeneratorModel(0.0))
