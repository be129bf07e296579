import numpy as np
import pytest

from ipcascade import (
    AddressSet,
    AddressUniverse,
    CapacityMap,
    CascadeSpec,
    GeneratorModel,
    generate,
    v6_universe,
)

V4 = AddressUniverse("v4", 32)


@pytest.fixture(scope="session")
def v4():
    return V4


@pytest.fixture(scope="session")
def toy8():
    """Tiny 8-bit universe for saturation and exhaustive checks."""
    return v6_universe(8)


@pytest.fixture(scope="session")
def toy16():
    return v6_universe(16)


def make_cascade(sigma, n, seed, reserved=True, universe=V4):
    capacity = CapacityMap.default_v4_reserved() if reserved and universe.family == "v4" else CapacityMap.empty(universe)
    spec = CascadeSpec(GeneratorModel(sigma), n, universe, capacity, seed=seed)
    return generate(spec)


def uniform_v4_set(n, seed):
    rng = np.random.default_rng(seed)
    addrs = np.unique(rng.integers(0, 1 << 32, size=int(n * 1.02) + 16, dtype=np.uint64))
    rng.shuffle(addrs)
    return AddressSet(V4, addrs[:n])


@pytest.fixture(scope="session")
def four_addresses(v4):
    """The canonical 4-address worked example."""
    return AddressSet(v4, [0x00000000, 0x00000001, 0x40000000, 0xC0000000])


@pytest.fixture(scope="session")
def cascade_50k():
    aset, _ = make_cascade(1.61, 50_000, seed=42)
    return aset
