"""Decomposition protocols and path simulation on the subset lattice.

A protocol assigns, to every non-empty mask, a distribution over which of
its elements is removed next. Repeatedly applying it walks a path from a
mask down to the empty mask; each step is one univariate conditional.

Randomness: every stochastic function takes an explicit
``numpy.random.Generator``. :func:`make_rng` builds one on the PCG64 bit
generator; independent child streams come from :func:`split_rng`.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import EmptyMaskError, InvalidArgumentError
from .lattice import Edge, LatticeSpec, Mask, all_masks, as_bool_matrix, max_element, sorted_elements


def make_rng(seed=None) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return rng.spawn(n)


class Protocol(abc.ABC):
    """Rule choosing which element to remove from a non-empty mask.

    Subclasses implement :meth:`weights`. Construction runs a normalization
    check over every non-empty mask of a small probe lattice.
    """

    name: str = "custom"
    deterministic: bool = False
    _probe_vars = 5

    def __init__(self):
        self._self_check()

    @abc.abstractmethod
    def weights(self, e: Mask) -> dict[int, float]:
        """Removal probability of each element of non-empty ``e``."""

    def _self_check(self):
        for e in all_masks(LatticeSpec(self._probe_vars)):
            if e.bits == 0:
                continue
            w = self.weights(e)
            if any(j not in e for j in w) or any(p < 0 for p in w.values()):
                raise InvalidArgumentError(f"{type(self).__name__}: invalid weights at {e!r}")
            if abs(sum(w.values()) - 1.0) > 1e-9:
                raise InvalidArgumentError(f"{type(self).__name__}: weights at {e!r} do not sum to 1")

    def choose(self, e: Mask, rng: np.random.Generator) -> int:
        if e.bits == 0:
            raise EmptyMaskError("cannot choose an element of the empty mask")
        items = sorted(self.weights(e).items())
        cdf = np.cumsum([p for _, p in items])
        k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        return items[min(k, len(items) - 1)][0]

    def weight_matrix(self, codes: np.ndarray, n_vars: int) -> np.ndarray:
        """Dense ``(len(codes), n_vars)`` matrix of removal weights."""
        out = np.zeros((len(codes), n_vars))
        for r, code in enumerate(codes):
            if code:
                for j, p in self.weights(Mask(int(code), n_vars)).items():
                    out[r, j] = p
        return out

    def removal_ranks(self, masks: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Step (0-based) at which each member variable is removed, per row.

        Non-members get rank ``n_vars``. Generic fallback simulates per row;
        shipped protocols override with vectorised versions.
        """
        masks = np.asarray(masks, dtype=bool)
        n = masks.shape[1]
        ranks = np.full(masks.shape, n, dtype=np.int64)
        for r, row in enumerate(masks):
            e = Mask(int(sum(1 << int(v) for v in np.flatnonzero(row))), n)
            for step, edge in enumerate(simulate_path(self, e, rng).edges):
                ranks[r, edge.target] = step
        return ranks

    def __repr__(self):
        return f"{type(self).__name__}()"


class RandomProtocol(Protocol):
    """Remove a uniformly random element (the classic any-order rule)."""

    name = "rnd"

    def weights(self, e):
        elems = sorted_elements(e)
        return {j: 1.0 / len(elems) for j in elems}

    def weight_matrix(self, codes, n_vars):
        member = (np.asarray(codes, dtype=np.int64)[:, None] >> np.arange(n_vars)) & 1
        card = member.sum(axis=1, keepdims=True)
        return np.divide(member, card, out=np.zeros(member.shape), where=card > 0)

    def choose(self, e, rng):
        if e.bits == 0:
            raise EmptyMaskError("cannot choose an element of the empty mask")
        elems = sorted_elements(e)
        return elems[int(rng.integers(len(elems)))]

    def removal_ranks(self, masks, rng):
        masks = np.asarray(masks, dtype=bool)
        n = masks.shape[1]
        keys = np.where(masks, rng.random(masks.shape), 2.0)
        ranks = np.argsort(np.argsort(keys, axis=1, kind="stable"), axis=1, kind="stable")
        return np.where(masks, ranks, n)


class MACProtocol(Protocol):
    """Always remove the largest element.

    ``order`` lists variables from smallest to largest; default is
    ascending index.
    """

    name = "mac"
    deterministic = True

    def __init__(self, order: Sequence[int] | None = None):
        self.order = None if order is None else tuple(int(v) for v in order)
        if self.order is not None and sorted(self.order) != list(range(len(self.order))):
            raise InvalidArgumentError("order must be a permutation of 0..n-1")
        if self.order is None:
            super().__init__()

    def weights(self, e):
        if e.bits == 0:
            raise EmptyMaskError("empty mask has no elements")
        return {max_element(e, self.order): 1.0}

    def choose(self, e, rng=None):
        return max_element(e, self.order)

    def weight_matrix(self, codes, n_vars):
        if self.order is not None:
            return super().weight_matrix(codes, n_vars)
        codes = np.asarray(codes, dtype=np.int64)
        out = np.zeros((len(codes), n_vars))
        nz = codes > 0
        top = np.floor(np.log2(np.where(nz, codes, 1))).astype(np.int64)
        out[np.flatnonzero(nz), top[nz]] = 1.0
        return out

    def removal_ranks(self, masks, rng=None):
        masks = np.asarray(masks, dtype=bool)
        n = masks.shape[1]
        position = np.arange(n) if self.order is None else np.argsort(self.order)
        # rank among members, counted from the largest
        ordered = masks[:, np.argsort(position)]
        from_top = np.cumsum(ordered[:, ::-1], axis=1)[:, ::-1] - 1
        ranks = np.empty_like(from_top)
        ranks[:, np.argsort(position)] = from_top
        return np.where(masks, ranks, n)

    def __repr__(self):
        return "MACProtocol()" if self.order is None else f"MACProtocol(order={self.order})"


W_MAC = MACProtocol()
W_RND = RandomProtocol()

_BY_NAME = {"mac": W_MAC, "rnd": W_RND}


def get_protocol(name) -> Protocol:
    if isinstance(name, Protocol):
        return name
    try:
        return _BY_NAME[str(name).lower()]
    except KeyError:
        raise InvalidArgumentError(f"unknown protocol {name!r}; expected one of {sorted(_BY_NAME)}") from None


@dataclass(frozen=True)
class Path:
    origin: Mask
    edges: tuple[Edge, ...]

    def __len__(self):
        return len(self.edges)

    def targets(self) -> list[int]:
        return [edge.target for edge in self.edges]

    def ordering(self) -> list[int]:
        """Generation order compatible with the origin (reversed removals)."""
        return self.targets()[::-1]


def choose(w: Protocol, e: Mask, rng: np.random.Generator | None = None) -> int:
    return w.choose(e, rng)


def simulate_path(w: Protocol, e: Mask, rng: np.random.Generator | None = None) -> Path:
    edges = []
    cur = e
    while cur.bits:
        j = w.choose(cur, rng)
        cur = cur.remove(j)
        edges.append(Edge(j, cur))
    return Path(e, tuple(edges))


def path_sources(p: Path) -> list[Mask]:
    return [edge.source for edge in p.edges]


def path_nodes_batch(w: Protocol, masks, spec: LatticeSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised path simulation for a batch of masks.

    Returns ``(ranks, cards)``: removal ranks per variable and the origin
    cardinalities. The source node after ``k`` removals from row ``r`` is
    ``masks[r] & (ranks[r] >= k)``.
    """
    masks = as_bool_matrix(masks, spec)
    return w.removal_ranks(masks, rng), masks.sum(axis=1)
