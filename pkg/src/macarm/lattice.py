"""Masks over N discrete variables and navigation of the subset lattice.

A mask is stored as a Python int bitset: bit ``v`` is set iff variable ``v``
is in the mask. Variables are 0-indexed. Batches of masks are represented
as boolean matrices of shape ``(batch, n_vars)`` or as int64 code vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import CapacityError, EmptyMaskError, InvalidArgumentError

#: Largest N for which operations enumerating all 2^N masks are allowed.
EXACT_CUTOFF = 20
#: Bitset word width; larger lattices are rejected.
MAX_VARS = 64


@dataclass(frozen=True)
class LatticeSpec:
    n_vars: int
    alphabet_size: int = 2

    def __post_init__(self):
        if not isinstance(self.n_vars, (int, np.integer)) or self.n_vars < 1:
            raise InvalidArgumentError(f"n_vars must be a positive integer, got {self.n_vars!r}")
        if self.n_vars > MAX_VARS:
            raise InvalidArgumentError(f"n_vars={self.n_vars} exceeds the {MAX_VARS}-bit mask width")
        if not isinstance(self.alphabet_size, (int, np.integer)) or self.alphabet_size < 2:
            raise InvalidArgumentError(f"alphabet_size must be >= 2, got {self.alphabet_size!r}")

    @property
    def n_masks(self) -> int:
        return 1 << self.n_vars

    @property
    def full_bits(self) -> int:
        return (1 << self.n_vars) - 1

    def require_exact(self) -> None:
        if self.n_vars > EXACT_CUTOFF:
            raise CapacityError(
                f"exact lattice enumeration needs n_vars <= {EXACT_CUTOFF}, got {self.n_vars}"
            )


@dataclass(frozen=True, order=True)
class Mask:
    """A subset of variable indices."""

    bits: int
    n_vars: int

    def __post_init__(self):
        if self.bits < 0 or self.bits >> self.n_vars:
            raise InvalidArgumentError(f"bits {self.bits:#x} out of range for n_vars={self.n_vars}")

    def __contains__(self, index) -> bool:
        return 0 <= index < self.n_vars and bool(self.bits >> index & 1)

    def __len__(self) -> int:
        return self.bits.bit_count()

    def __iter__(self):
        return iter(sorted_elements(self))

    def __repr__(self):
        return f"Mask({{{', '.join(map(str, sorted_elements(self)))}}}, n_vars={self.n_vars})"

    def remove(self, index: int) -> "Mask":
        if index not in self:
            raise InvalidArgumentError(f"{index} is not in {self!r}")
        return Mask(self.bits & ~(1 << index), self.n_vars)

    def add(self, index: int) -> "Mask":
        if not 0 <= index < self.n_vars:
            raise InvalidArgumentError(f"index {index} out of range")
        return Mask(self.bits | (1 << index), self.n_vars)

    def complement(self) -> "Mask":
        return Mask(~self.bits & ((1 << self.n_vars) - 1), self.n_vars)

    def issubset(self, other: "Mask") -> bool:
        return self.bits & ~other.bits == 0

    def to_bitstring(self) -> str:
        """Index 0 is the rightmost character."""
        return format(self.bits, f"0{self.n_vars}b")

    @classmethod
    def from_bitstring(cls, text: str) -> "Mask":
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise InvalidArgumentError(f"not a mask bitstring: {text!r}")
        return cls(int(text, 2), len(text))

    def to_bool(self) -> np.ndarray:
        return np.array([self.bits >> v & 1 for v in range(self.n_vars)], dtype=bool)


@dataclass(frozen=True)
class Edge:
    """Univariate conditional slot p(x_target | x_source)."""

    target: int
    source: Mask

    def __post_init__(self):
        if self.target in self.source:
            raise InvalidArgumentError(f"target {self.target} must not be in the source mask")
        if not 0 <= self.target < self.source.n_vars:
            raise InvalidArgumentError(f"target {self.target} out of range")


def make_mask(indices: Iterable[int], spec: LatticeSpec) -> Mask:
    bits = 0
    for i in indices:
        i = int(i)
        if not 0 <= i < spec.n_vars:
            raise InvalidArgumentError(f"index {i} out of range [0, {spec.n_vars})")
        if bits >> i & 1:
            raise InvalidArgumentError(f"duplicate index {i}")
        bits |= 1 << i
    return Mask(bits, spec.n_vars)


def empty_mask(spec: LatticeSpec) -> Mask:
    return Mask(0, spec.n_vars)


def full_mask(spec: LatticeSpec) -> Mask:
    return Mask(spec.full_bits, spec.n_vars)


def cardinality(e: Mask) -> int:
    return e.bits.bit_count()


def max_element(e: Mask, order: Sequence[int] | None = None) -> int:
    """Largest element of ``e``.

    ``order`` optionally lists the variables from smallest to largest; the
    default is ascending index.
    """
    if e.bits == 0:
        raise EmptyMaskError("max_element of the empty mask")
    if order is None:
        return e.bits.bit_length() - 1
    for v in reversed(order):
        if v in e:
            return v
    raise InvalidArgumentError("order does not cover the mask")


def sorted_elements(e: Mask) -> list[int]:
    out = []
    bits = e.bits
    while bits:
        low = bits & -bits
        out.append(low.bit_length() - 1)
        bits ^= low
    return out


def prefix(e: Mask, k: int) -> Mask:
    """Mask of the ``k`` smallest-indexed elements of ``e``."""
    if k < 0 or k > cardinality(e):
        raise InvalidArgumentError(f"prefix length {k} not in [0, {cardinality(e)}]")
    bits = 0
    rest = e.bits
    for _ in range(k):
        low = rest & -rest
        bits |= low
        rest ^= low
    return Mask(bits, e.n_vars)


def all_masks(spec: LatticeSpec) -> Iterable[Mask]:
    spec.require_exact()
    for bits in range(spec.n_masks):
        yield Mask(bits, spec.n_vars)


# ---------------------------------------------------------------------------
# vectorised helpers over int codes / boolean matrices

def popcount_table(n_vars: int) -> np.ndarray:
    """Cardinality of every mask code in ``range(2**n_vars)``."""
    counts = np.zeros(1 << n_vars, dtype=np.int64)
    for v in range(n_vars):
        counts[1 << v: 2 << v] = counts[: 1 << v] + 1
    return counts


def bool_to_codes(masks: np.ndarray) -> np.ndarray:
    masks = np.asarray(masks, dtype=bool)
    weights = np.left_shift(np.int64(1), np.arange(masks.shape[-1], dtype=np.int64))
    return masks.astype(np.int64) @ weights


def codes_to_bool(codes: np.ndarray, n_vars: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    return (codes[..., None] >> np.arange(n_vars, dtype=np.int64)) & 1 == 1


def as_bool_matrix(masks, spec: LatticeSpec) -> np.ndarray:
    """Coerce a Mask, sequence of Masks, or boolean array to a boolean matrix."""
    if isinstance(masks, Mask):
        masks = [masks]
    if isinstance(masks, (list, tuple)) and masks and isinstance(masks[0], Mask):
        return codes_to_bool(np.array([m.bits for m in masks], dtype=np.int64), spec.n_vars)
    arr = np.asarray(masks, dtype=bool)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[-1] != spec.n_vars:
        raise InvalidArgumentError(f"mask width {arr.shape[-1]} != n_vars {spec.n_vars}")
    return arr


def masks_from_bool(masks: np.ndarray) -> list[Mask]:
    masks = np.asarray(masks, dtype=bool)
    n = masks.shape[-1]
    return [Mask(int(c), n) for c in bool_to_codes(masks)]
