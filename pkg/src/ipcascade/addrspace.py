"""Address universes, prefixes, dyadic intervals, range decomposition, capacities.

Addresses are stored as fixed-width unsigned integers.  IPv4 always uses 32
bits; IPv6 addresses are truncated at parse time to the universe's effective
bit depth (64 by default, low bits zeroed), so everything downstream is
family-agnostic integer arithmetic.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator

import numpy as np

__all__ = [
    "AddressParseError",
    "AddressSet",
    "AddressUniverse",
    "CapacityMap",
    "DEFAULT_RESERVED_V4",
    "Prefix",
    "dyadic_interval",
    "parse_addresses",
    "parse_prefix",
    "range_to_prefixes",
]

# Special-purpose IPv4 ranges shipped as the default zero-capacity map.
DEFAULT_RESERVED_V4 = (
    "0.0.0.0/8",
    "10.0.0.0/8",
    "100.64.0.0/10",
    "127.0.0.0/8",
    "169.254.0.0/16",
    "172.16.0.0/12",
    "192.168.0.0/16",
    "224.0.0.0/4",
    "240.0.0.0/4",
)


class AddressParseError(ValueError):
    """Malformed address/prefix text, with the offending line number."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


@dataclass(frozen=True)
class AddressUniverse:
    """Address family plus the bit depth actually analyzed."""

    family: str = "v4"
    effective_bits: int = 32

    def __post_init__(self):
        if self.family not in ("v4", "v6"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "v4" and self.effective_bits != 32:
            raise ValueError("IPv4 universes are fixed at 32 bits")
        if not 1 <= self.effective_bits <= 128:
            raise ValueError("effective_bits must be in [1, 128]")

    @property
    def bits(self):
        return self.effective_bits

    @property
    def size(self):
        return 1 << self.effective_bits

    def contains(self, value):
        return 0 <= value < self.size

    def format_address(self, value):
        """Integer address back to canonical text."""
        if self.family == "v4":
            return str(ipaddress.IPv4Address(value))
        return str(ipaddress.IPv6Address(value << (128 - self.effective_bits)))


V4 = AddressUniverse("v4", 32)


def v6_universe(effective_bits=64):
    return AddressUniverse("v6", effective_bits)


@dataclass(frozen=True, order=True)
class Prefix:
    """A length-``length`` prefix, value left-aligned in the universe width.

    The prefix covers addresses [value, value + 2^(bits - length)) and maps to
    the dyadic interval [key/2^length, (key+1)/2^length) of [0, 1).
    """

    universe: AddressUniverse = field(compare=False)
    value: int = 0
    length: int = 0

    def __post_init__(self):
        if not 0 <= self.length <= self.universe.effective_bits:
            raise ValueError(f"prefix length {self.length} out of range")
        if not self.universe.contains(self.value):
            raise ValueError("prefix value outside universe")
        if self.value & (self.span - 1):
            raise ValueError("bits set beyond the prefix length")

    @classmethod
    def from_key(cls, universe, key, length):
        """Build from the packed top-``length``-bit integer."""
        return cls(universe, key << (universe.effective_bits - length), length)

    @property
    def key(self):
        """The prefix as a bare ``length``-bit integer."""
        return self.value >> (self.universe.effective_bits - self.length)

    @property
    def span(self):
        """Number of addresses covered."""
        return 1 << (self.universe.effective_bits - self.length)

    @property
    def last(self):
        return self.value + self.span - 1

    def contains(self, other):
        """True if ``other`` (Prefix or int address) lies inside this prefix."""
        if isinstance(other, Prefix):
            return other.length >= self.length and self.value <= other.value <= self.last
        return self.value <= other <= self.last

    def __str__(self):
        return f"{self.universe.format_address(self.value)}/{self.length}"


def parse_prefix(text, universe, line_no=None):
    """Parse CIDR text (bare addresses are full-length prefixes)."""
    text = text.strip()
    body, _, len_part = text.partition("/")
    try:
        addr = ipaddress.ip_address(body)
    except ValueError as exc:
        raise AddressParseError(str(exc), line_no) from None
    value = _to_universe_value(addr, universe, line_no)
    bits = universe.effective_bits
    if len_part:
        try:
            length = int(len_part)
        except ValueError:
            raise AddressParseError(f"bad prefix length {len_part!r}", line_no) from None
    else:
        length = bits
    if not 0 <= length <= bits:
        raise AddressParseError(f"prefix length {length} out of range", line_no)
    mask_span = 1 << (bits - length)
    value &= ~(mask_span - 1)
    return Prefix(universe, value, length)


def _to_universe_value(addr, universe, line_no=None):
    if addr.version == 4:
        if universe.family != "v4":
            raise AddressParseError(f"IPv4 address {addr} in a v6 universe", line_no)
        return int(addr)
    if universe.family != "v6":
        raise AddressParseError(f"IPv6 address {addr} in a v4 universe", line_no)
    # Truncate to the analyzed depth; low bits are zeroed by the shift.
    return int(addr) >> (128 - universe.effective_bits)


class AddressSet:
    """A deduplicated set of fixed-width addresses over one universe.

    Internally a sorted unique ``uint64`` array (effective depths beyond 64
    bits are not supported by this container).
    """

    def __init__(self, universe, addresses=()):
        if universe.effective_bits > 64:
            raise ValueError("AddressSet supports effective depths up to 64 bits")
        self.universe = universe
        arr = np.asarray(
            addresses if not isinstance(addresses, np.ndarray) else addresses,
            dtype=np.uint64,
        )
        if arr.size and int(arr.max()) >= universe.size:
            raise ValueError("address outside universe")
        self.addresses = np.unique(arr)

    def __len__(self):
        return int(self.addresses.size)

    def __iter__(self) -> Iterator[int]:
        return iter(int(a) for a in self.addresses)

    def __contains__(self, value):
        idx = np.searchsorted(self.addresses, np.uint64(value))
        return idx < self.addresses.size and int(self.addresses[idx]) == int(value)

    def __eq__(self, other):
        return (
            isinstance(other, AddressSet)
            and self.universe == other.universe
            and self.addresses.shape == other.addresses.shape
            and bool(np.all(self.addresses == other.addresses))
        )

    def format(self):
        """One canonical address per line."""
        fmt = self.universe.format_address
        return "\n".join(fmt(int(a)) for a in self.addresses) + ("\n" if len(self) else "")


def parse_addresses(lines: Iterable[str], universe) -> AddressSet:
    """Parse an address-list stream: one address per line, '#' comments.

    IPv6 addresses are truncated to the universe depth.  Raises
    AddressParseError with the 1-based line number on malformed input or a
    family mismatch.
    """
    values = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            addr = ipaddress.ip_address(line)
        except ValueError as exc:
            raise AddressParseError(str(exc), line_no) from None
        values.append(_to_universe_value(addr, universe, line_no))
    return AddressSet(universe, values)


def dyadic_interval(prefix: Prefix):
    """Exact dyadic subinterval of [0, 1) covered by the prefix."""
    lo = Fraction(prefix.key, 1 << prefix.length)
    return lo, lo + Fraction(1, 1 << prefix.length)


def range_to_prefixes(lo, hi, universe) -> list[Prefix]:
    """Minimal ascending list of aligned prefixes exactly covering [lo, hi]."""
    if lo > hi:
        raise ValueError(f"range start {lo} above end {hi}")
    if lo < 0 or not universe.contains(hi):
        raise ValueError("range outside universe")
    bits = universe.effective_bits
    out = []
    cur = lo
    while cur <= hi:
        # Largest block aligned at cur that still fits in the remaining range.
        align = cur & -cur if cur else 1 << bits
        while align > hi - cur + 1:
            align >>= 1
        length = bits - align.bit_length() + 1
        out.append(Prefix(universe, cur, length))
        cur += align
    return out


class CapacityMap:
    """Per-prefix address capacities with reserved-range overrides.

    The default capacity of a length-l prefix is 2^(bits-l).  Overrides are
    non-overlapping prefixes with a reduced capacity (0 for reserved space).
    Queries account for overridden space nested inside the queried prefix, so
    the root capacity equals the total non-reserved address count.
    """

    def __init__(self, universe, overrides=()):
        self.universe = universe
        self.overrides = []
        for prefix, cap in overrides:
            if prefix.universe != universe:
                raise ValueError("override universe mismatch")
            if not 0 <= cap <= prefix.span:
                raise ValueError(f"override capacity {cap} above default for {prefix}")
            self.overrides.append((prefix, int(cap)))
        self.overrides.sort(key=lambda pc: pc[0].value)
        for (a, _), (b, _) in zip(self.overrides, self.overrides[1:]):
            if a.contains(b) or b.contains(a):
                raise ValueError(f"overlapping overrides {a} and {b}")

    @classmethod
    def empty(cls, universe):
        return cls(universe, ())

    @classmethod
    def default_v4_reserved(cls):
        uni = V4
        return cls(uni, [(parse_prefix(p, uni), 0) for p in DEFAULT_RESERVED_V4])

    @classmethod
    def from_lines(cls, lines, universe):
        """Reserved-range file: one CIDR per line, '#' comments, capacity 0."""
        prefixes = []
        for line_no, raw in enumerate(lines, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            prefixes.append((parse_prefix(line, universe, line_no), 0))
        return cls(universe, prefixes)

    def capacity(self, prefix: Prefix) -> int:
        default = prefix.span
        for ov, cap in self.overrides:
            if ov.contains(prefix):
                return min(cap, default)
        reserved = 0
        for ov, cap in self.overrides:
            if prefix.contains(ov) and ov.length > prefix.length:
                reserved += ov.span - cap
        return default - reserved

    def total_capacity(self) -> int:
        return self.capacity(Prefix(self.universe, 0, 0))

    def override_triples(self):
        """(key, length, capacity) tuples for vectorized cascade math."""
        return [(p.key, p.length, cap) for p, cap in self.overrides]
