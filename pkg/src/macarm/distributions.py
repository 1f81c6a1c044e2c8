"""Mask and edge distributions on the subset lattice.

Covers the test mask distribution that picks a cardinality uniformly and
then a mask of that cardinality uniformly, the edge/node distributions a
decomposition protocol induces from it (exactly, by dynamic programming
over the lattice, and by Monte Carlo), cardinality reweighting, and the
batch samplers used for training.

Batches of masks are boolean matrices of shape ``(batch, n_vars)``.
Exact tables are dense arrays indexed by mask code; Monte-Carlo tables
for ``n_vars > EXACT_CUTOFF`` fall back to sparse dicts.
"""

from __future__ import annotations

import abc
import io
from math import comb
from typing import Iterator, NamedTuple

import numpy as np

from .exceptions import DegenerateDistributionError, InvalidArgumentError
from .lattice import (
    EXACT_CUTOFF,
    Edge,
    LatticeSpec,
    Mask,
    bool_to_codes,
    cardinality,
    codes_to_bool,
    popcount_table,
)
from .protocols import W_MAC, MACProtocol, Protocol

DEFAULT_OUTER_FACTOR = 100


# ---------------------------------------------------------------------------
# tables

def _fmt_prob(p: float) -> str:
    return f"{p:.9g}"


class ProbTable:
    """Probability table over masks.

    ``probs`` is either a dense array of length ``2**n_vars`` indexed by mask
    code, or (for large lattices) a dict mapping codes to probabilities.
    """

    def __init__(self, spec: LatticeSpec, probs):
        self.spec = spec
        if isinstance(probs, dict):
            self._sparse = {int(k): float(v) for k, v in probs.items() if v != 0}
            self._dense = None
        else:
            probs = np.asarray(probs, dtype=float)
            if probs.shape != (spec.n_masks,):
                raise InvalidArgumentError(f"dense table must have shape ({spec.n_masks},)")
            self._dense = probs
            self._sparse = None
        if any(v < 0 for _, v in self._raw_items()):
            raise InvalidArgumentError("probabilities must be non-negative")

    @property
    def is_dense(self) -> bool:
        return self._dense is not None

    def _raw_items(self) -> Iterator[tuple[int, float]]:
        if self._dense is not None:
            nz = np.flatnonzero(self._dense)
            return zip(nz.tolist(), self._dense[nz].tolist())
        return iter(self._sparse.items())

    def __getitem__(self, e) -> float:
        code = e.bits if isinstance(e, Mask) else int(e)
        if self._dense is not None:
            return float(self._dense[code])
        return self._sparse.get(code, 0.0)

    def items(self) -> Iterator[tuple[Mask, float]]:
        n = self.spec.n_vars
        for code, p in self._raw_items():
            yield Mask(code, n), p

    def as_dict(self) -> dict[Mask, float]:
        return dict(self.items())

    def to_dense(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense.copy()
        self.spec.require_exact()
        out = np.zeros(self.spec.n_masks)
        for code, p in self._sparse.items():
            out[code] = p
        return out

    def total(self) -> float:
        if self._dense is not None:
            return float(self._dense.sum())
        return float(sum(self._sparse.values()))

    def normalized(self) -> "ProbTable":
        z = self.total()
        if z <= 0:
            raise DegenerateDistributionError("table has no mass")
        if self._dense is not None:
            return ProbTable(self.spec, self._dense / z)
        return ProbTable(self.spec, {k: v / z for k, v in self._sparse.items()})

    def to_tsv(self, fh=None) -> str:
        """Rows sorted by descending probability, then bitstring."""
        rows = sorted(((p, m.to_bitstring()) for m, p in self.items()), key=lambda r: (-r[0], r[1]))
        text = "mask\tprobability\n" + "".join(f"{b}\t{_fmt_prob(p)}\n" for p, b in rows)
        if fh is not None:
            fh.write(text)
        return text

    @classmethod
    def from_tsv(cls, text: str, spec: LatticeSpec | None = None) -> "ProbTable":
        lines = [ln for ln in io.StringIO(text).read().splitlines() if ln.strip()]
        if not lines or lines[0].split("\t")[:2] != ["mask", "probability"]:
            raise InvalidArgumentError("expected header 'mask\\tprobability'")
        entries = {}
        for ln in lines[1:]:
            bitstring, prob = ln.split("\t")[:2]
            m = Mask.from_bitstring(bitstring)
            if spec is None:
                spec = LatticeSpec(m.n_vars)
            entries[m.bits] = float(prob)
        if spec is None:
            raise InvalidArgumentError("empty table needs an explicit spec")
        if spec.n_vars <= EXACT_CUTOFF:
            dense = np.zeros(spec.n_masks)
            for k, v in entries.items():
                dense[k] = v
            return cls(spec, dense)
        return cls(spec, entries)

    def __repr__(self):
        return f"ProbTable(n_vars={self.spec.n_vars}, support={sum(1 for _ in self._raw_items())})"


class EdgeTable:
    """Distribution over univariate-conditional slots (target, source mask).

    Stores expected traversal counts ``counts[source_code, target]``;
    probabilities are counts over their total. The total (expected path
    length) is the constant separating the marginal objective from the
    edge expectation.
    """

    def __init__(self, spec: LatticeSpec, counts: np.ndarray):
        counts = np.asarray(counts, dtype=float)
        if counts.shape != (spec.n_masks, spec.n_vars):
            raise InvalidArgumentError("edge counts must have shape (2**n_vars, n_vars)")
        if np.any(counts < 0):
            raise InvalidArgumentError("edge counts must be non-negative")
        member = codes_to_bool(np.arange(spec.n_masks), spec.n_vars)
        if np.any(counts[member] != 0):
            raise InvalidArgumentError("edge target must not belong to its source mask")
        self.spec = spec
        self.counts = counts

    @property
    def normalizer(self) -> float:
        return float(self.counts.sum())

    @property
    def probs(self) -> np.ndarray:
        z = self.normalizer
        if z <= 0:
            raise DegenerateDistributionError("edge table has no mass")
        return self.counts / z

    def __getitem__(self, edge: Edge) -> float:
        return float(self.probs[edge.source.bits, edge.target])

    def items(self) -> Iterator[tuple[Edge, float]]:
        probs = self.probs
        n = self.spec.n_vars
        for code, target in zip(*np.nonzero(probs)):
            yield Edge(int(target), Mask(int(code), n)), float(probs[code, target])

    def as_dict(self) -> dict[Edge, float]:
        return dict(self.items())

    def to_tsv(self, fh=None) -> str:
        rows = sorted(
            ((p, e.source.to_bitstring(), e.target) for e, p in self.items()),
            key=lambda r: (-r[0], r[1], r[2]),
        )
        text = "mask\ttarget\tprobability\n" + "".join(f"{b}\t{t}\t{_fmt_prob(p)}\n" for p, b, t in rows)
        if fh is not None:
            fh.write(text)
        return text

    @classmethod
    def from_items(cls, spec: LatticeSpec, entries: dict[Edge, float]) -> "EdgeTable":
        counts = np.zeros((spec.n_masks, spec.n_vars))
        for edge, p in entries.items():
            counts[edge.source.bits, edge.target] += p
        return cls(spec, counts)


# ---------------------------------------------------------------------------
# test mask distributions

class MaskDistribution(abc.ABC):
    spec: LatticeSpec

    @abc.abstractmethod
    def pmf(self, e: Mask) -> float: ...

    @abc.abstractmethod
    def dense_pmf(self) -> np.ndarray:
        """Probability of every mask code (exact; needs a small lattice)."""

    @abc.abstractmethod
    def sample(self, batch: int, rng: np.random.Generator) -> np.ndarray: ...

    @abc.abstractmethod
    def sample_size_biased(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        """Draw masks with probability proportional to ``|e| * pmf(e)``."""

    def expected_cardinality(self) -> float:
        self.spec.require_exact()
        return float(self.dense_pmf() @ popcount_table(self.spec.n_vars))

    def table(self) -> ProbTable:
        return ProbTable(self.spec, self.dense_pmf())


def _uniform_masks_of_size(sizes: np.ndarray, n_vars: int, rng) -> np.ndarray:
    # argsort of uniform keys is a uniform permutation; keep its first t ranks
    sigma = rng.random((len(sizes), n_vars)).argsort(axis=1)
    return sigma < np.asarray(sizes)[:, None]


class CardMaskDistribution(MaskDistribution):
    """Uniform cardinality in ``[min_card, n_vars]``, then a uniform mask of it.

    The default ``min_card=1`` excludes the empty mask.
    """

    kind = "card-mask"

    def __init__(self, spec: LatticeSpec, min_card: int = 1):
        if not 0 <= min_card <= spec.n_vars:
            raise InvalidArgumentError("min_card must lie in [0, n_vars]")
        self.spec = spec
        self.min_card = min_card

    def cardinality_pmf(self) -> np.ndarray:
        n = self.spec.n_vars
        p = np.zeros(n + 1)
        p[self.min_card:] = 1.0 / (n + 1 - self.min_card)
        return p

    def pmf(self, e: Mask) -> float:
        c = cardinality(e)
        return float(self.cardinality_pmf()[c] / comb(self.spec.n_vars, c))

    def dense_pmf(self):
        self.spec.require_exact()
        n = self.spec.n_vars
        per_size = self.cardinality_pmf() / np.array([comb(n, c) for c in range(n + 1)], dtype=float)
        return per_size[popcount_table(n)]

    def expected_cardinality(self):
        return float(self.cardinality_pmf() @ np.arange(self.spec.n_vars + 1))

    def sample(self, batch, rng):
        t = rng.integers(self.min_card, self.spec.n_vars + 1, size=batch)
        return _uniform_masks_of_size(t, self.spec.n_vars, rng)

    def sample_size_biased(self, batch, rng):
        sizes = np.arange(self.spec.n_vars + 1)
        w = self.cardinality_pmf() * sizes
        t = rng.choice(sizes, size=batch, p=w / w.sum())
        return _uniform_masks_of_size(t, self.spec.n_vars, rng)

    def __repr__(self):
        return f"CardMaskDistribution(n_vars={self.spec.n_vars}, min_card={self.min_card})"


class TableMaskDistribution(MaskDistribution):
    """Explicit pmf over all masks."""

    kind = "table"

    def __init__(self, table: ProbTable):
        table.spec.require_exact()
        dense = table.to_dense()
        if abs(dense.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError(f"mask pmf sums to {dense.sum()!r}, not 1")
        self.spec = table.spec
        self._pmf = dense

    def pmf(self, e):
        return float(self._pmf[e.bits])

    def dense_pmf(self):
        return self._pmf.copy()

    def _draw(self, batch, rng, weights):
        codes = rng.choice(self.spec.n_masks, size=batch, p=weights / weights.sum())
        return codes_to_bool(codes, self.spec.n_vars)

    def sample(self, batch, rng):
        return self._draw(batch, rng, self._pmf)

    def sample_size_biased(self, batch, rng):
        w = self._pmf * popcount_table(self.spec.n_vars)
        if w.sum() <= 0:
            raise DegenerateDistributionError("distribution puts all mass on the empty mask")
        return self._draw(batch, rng, w)


def card_mask(spec: LatticeSpec) -> CardMaskDistribution:
    return CardMaskDistribution(spec)


def pmf_card_mask(e: Mask, spec: LatticeSpec) -> float:
    return CardMaskDistribution(spec).pmf(e)


def sample_test_masks(batch: int, spec: LatticeSpec, rng) -> np.ndarray:
    if batch < 1:
        raise InvalidArgumentError("batch must be >= 1")
    return CardMaskDistribution(spec).sample(batch, rng)


# ---------------------------------------------------------------------------
# induced distributions

def induced_edge_exact(M: MaskDistribution, w: Protocol, spec: LatticeSpec) -> EdgeTable:
    """Exact edge traversal frequencies when masks ``e ~ M`` are decomposed by ``w``.

    Mass flows down the lattice one cardinality layer at a time: each
    node's inflow is split over its outgoing edges by the protocol weights.
    """
    spec.require_exact()
    n = spec.n_vars
    flow = M.dense_pmf().astype(float)
    counts = np.zeros((spec.n_masks, n))
    popcount = popcount_table(n)
    codes = np.arange(spec.n_masks, dtype=np.int64)
    for c in range(n, 0, -1):
        layer = codes[popcount == c]
        mass = flow[layer]
        live = mass > 0
        layer, mass = layer[live], mass[live]
        if not len(layer):
            continue
        weights = w.weight_matrix(layer, n)
        for j in range(n):
            moved = mass * weights[:, j]
            sel = moved > 0
            if not sel.any():
                continue
            dst = layer[sel] ^ (1 << j)
            counts[dst, j] += moved[sel]
            flow[dst] += moved[sel]
    return EdgeTable(spec, counts)


def induced_node_table(edges: EdgeTable) -> ProbTable:
    """Node distribution proportional to total outgoing edge probability."""
    node = edges.counts.sum(axis=1)
    if node.sum() <= 0:
        raise DegenerateDistributionError("edge table has no mass")
    return ProbTable(edges.spec, node / node.sum())


def induced_node_exact(M: MaskDistribution, w: Protocol, spec: LatticeSpec) -> ProbTable:
    return induced_node_table(induced_edge_exact(M, w, spec))


def _path_node_codes(masks: np.ndarray, ranks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All source-node codes along the simulated paths, flattened."""
    n = masks.shape[1]
    card = masks.sum(axis=1)
    out = []
    for k in range(1, n + 1):
        rows = card >= k
        if not rows.any():
            break
        nodes = masks[rows] & (ranks[rows] >= k)
        out.append(bool_to_codes(nodes))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def induced_node_mc(
    M: MaskDistribution,
    w: Protocol,
    spec: LatticeSpec,
    samples: int,
    rng,
    chunk: int = 200_000,
) -> ProbTable:
    """Monte-Carlo estimate of the induced node table by simulating ``w``."""
    if samples < 1:
        raise InvalidArgumentError("samples must be >= 1")
    dense = spec.n_vars <= EXACT_CUTOFF
    counts = np.zeros(spec.n_masks) if dense else {}
    done = 0
    while done < samples:
        size = min(chunk, samples - done)
        masks = M.sample(size, rng)
        codes = _path_node_codes(masks, w.removal_ranks(masks, rng))
        if dense:
            counts += np.bincount(codes, minlength=spec.n_masks)
        else:
            uniq, cnt = np.unique(codes, return_counts=True)
            for k, v in zip(uniq.tolist(), cnt.tolist()):
                counts[k] = counts.get(k, 0) + v
        done += size
    return ProbTable(spec, counts).normalized()


def reweight_cardinality(t: ProbTable) -> ProbTable:
    """Scale each entry by ``1 + |e|`` and renormalize."""
    if t.is_dense:
        out = ProbTable(t.spec, t.to_dense() * (1 + popcount_table(t.spec.n_vars)))
    else:
        out = ProbTable(t.spec, {m.bits: p * (1 + cardinality(m)) for m, p in t.items()})
    if out.total() <= 0:
        raise DegenerateDistributionError("cannot reweight an all-zero table")
    return out.normalized()


# ---------------------------------------------------------------------------
# batch samplers

def _prefix_masks(masks: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Keep the ``t`` smallest-indexed members of each row."""
    return masks & (np.cumsum(masks, axis=1) <= np.asarray(t)[:, None])


def _node_sizes(batch: int, M: "CardMaskDistribution", rng, method: str):
    """Origin cardinalities and kept-element counts for card-mask origins."""
    sizes = np.arange(M.spec.n_vars + 1)
    weights = M.cardinality_pmf() * (sizes if method == "exact" else sizes > 0)
    card = rng.choice(sizes, size=batch, p=weights / weights.sum())
    kept = np.floor(rng.random(batch) * card).astype(np.int64)
    return card, kept


def _nodes_on_paths(origins: np.ndarray, kept: np.ndarray, protocol: Protocol, rng) -> np.ndarray:
    """Node reached on each origin's path once only ``kept`` elements remain."""
    if isinstance(protocol, MACProtocol) and protocol.order is None:
        return _prefix_masks(origins, kept)
    card = origins.sum(axis=1)
    ranks = protocol.removal_ranks(origins, rng)
    return origins & (ranks >= (card - kept)[:, None])


def _check_method(method):
    if method not in ("exact", "reference"):
        raise InvalidArgumentError(f"unknown method {method!r}")


def sample_induced_nodes(
    batch: int,
    spec: LatticeSpec,
    rng,
    protocol: Protocol = W_MAC,
    M: MaskDistribution | None = None,
    method: str = "exact",
) -> np.ndarray:
    """Draw training nodes from the node table induced by ``protocol`` on ``M``.

    A path from ``e`` visits ``|e|`` source nodes, so drawing ``e`` with
    probability proportional to ``|e| M(e)`` and then a uniformly chosen
    node on its path reproduces the induced node table exactly.
    ``method="reference"`` draws ``e ~ M`` unweighted instead, which
    favours nodes on short paths.
    """
    if batch < 1:
        raise InvalidArgumentError("batch must be >= 1")
    _check_method(method)
    M = M if M is not None else CardMaskDistribution(spec)
    if isinstance(M, CardMaskDistribution):
        card, kept = _node_sizes(batch, M, rng, method)
        origins = _uniform_masks_of_size(card, spec.n_vars, rng)
    else:
        origins = M.sample_size_biased(batch, rng) if method == "exact" else M.sample(batch, rng)
        card = origins.sum(axis=1)
        if np.any(card == 0):
            raise DegenerateDistributionError("origin mask is empty; it has no path nodes")
        kept = np.floor(rng.random(batch) * card).astype(np.int64)
    return _nodes_on_paths(origins, kept, protocol, rng)


def sample_train_masks(
    batch: int,
    spec: LatticeSpec,
    rng,
    M: MaskDistribution | None = None,
    method: str = "exact",
) -> np.ndarray:
    """Batch sampler for the MAC training node distribution.

    Uses the prefix trick: the largest-first path from ``e`` visits exactly
    the prefixes of its sorted elements, so no path simulation is needed.
    """
    return sample_induced_nodes(batch, spec, rng, W_MAC, M, method)


def weighted_subsample(weights: np.ndarray, k: int, rng, replace: bool = False) -> np.ndarray:
    """Indices of ``k`` draws proportional to ``weights``.

    Without replacement this is successive weighted sampling, realised
    with exponential keys (Efraimidis-Spirakis).
    """
    weights = np.asarray(weights, dtype=float)
    if replace:
        return rng.choice(len(weights), size=k, p=weights / weights.sum())
    if k > np.count_nonzero(weights):
        raise InvalidArgumentError("not enough positive-weight items to subsample")
    keys = np.full(len(weights), np.inf)
    pos = weights > 0
    keys[pos] = rng.exponential(size=pos.sum()) / weights[pos]
    idx = np.argpartition(keys, k - 1)[:k]
    return idx[np.argsort(keys[idx], kind="stable")]


def sample_reweighted_batch(
    batch: int,
    spec: LatticeSpec,
    outer_factor: int = DEFAULT_OUTER_FACTOR,
    rng=None,
    protocol: Protocol = W_MAC,
    M: MaskDistribution | None = None,
    replace: bool = False,
    method: str = "exact",
) -> np.ndarray:
    """Sampling-importance-resampling towards the ``(1 + |e|)``-reweighted node table.

    Draws ``outer_factor * batch`` candidate nodes and keeps ``batch`` of
    them with probability proportional to ``1 + |e|``. For card-mask test
    distributions the candidate pool is drawn as (origin size, node size)
    pairs, which is all the weights depend on; only the kept candidates
    are turned into masks.
    """
    if outer_factor < 1:
        raise InvalidArgumentError("outer_factor must be >= 1")
    if batch < 1:
        raise InvalidArgumentError("batch must be >= 1")
    _check_method(method)
    M = M if M is not None else CardMaskDistribution(spec)
    pool = outer_factor * batch
    if isinstance(M, CardMaskDistribution):
        card, kept = _node_sizes(pool, M, rng, method)
        idx = weighted_subsample(1.0 + kept, batch, rng, replace=replace)
        origins = _uniform_masks_of_size(card[idx], spec.n_vars, rng)
        return _nodes_on_paths(origins, kept[idx], protocol, rng)
    nodes = sample_induced_nodes(pool, spec, rng, protocol, M, method)
    idx = weighted_subsample(1.0 + nodes.sum(axis=1), batch, rng, replace=replace)
    return nodes[idx]


def baseline_edge_sampler(batch: int, spec: LatticeSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draws ``(sigma(t), sigma(<t))`` for a uniform order and uniform ``t``.

    Returns ``(targets, sources)`` with sources as a boolean matrix.
    """
    if batch < 1:
        raise InvalidArgumentError("batch must be >= 1")
    n = spec.n_vars
    sigma = rng.random((batch, n)).argsort(axis=1)
    t = rng.integers(1, n + 1, size=batch)
    targets = sigma[np.arange(batch), t - 1]
    position = sigma.argsort(axis=1)
    sources = position < (t - 1)[:, None]
    return targets, sources


# ---------------------------------------------------------------------------
# statistics

def entropy(t: ProbTable) -> float:
    p = np.array([v for _, v in t._raw_items()], dtype=float)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum()) + 0.0


def tv_distance(a: ProbTable, b: ProbTable) -> float:
    if a.spec.n_vars != b.spec.n_vars:
        raise InvalidArgumentError("tables live on different lattices")
    if a.is_dense and b.is_dense:
        return float(0.5 * np.abs(a.to_dense() - b.to_dense()).sum())
    da, db = dict(a._raw_items()), dict(b._raw_items())
    return 0.5 * sum(abs(da.get(k, 0.0) - db.get(k, 0.0)) for k in set(da) | set(db))


class CardinalityStats(NamedTuple):
    edge_mean: float
    path_length: float


def expected_cardinality(edges: EdgeTable) -> CardinalityStats:
    """Mean source cardinality under the edge table, and the expected path length.

    For a table built by :func:`induced_edge_exact` the path length is
    ``E|e'|`` under the test distribution, the constant relating the
    summed-path objective to the edge expectation.
    """
    sizes = popcount_table(edges.spec.n_vars)
    edge_mean = float(edges.probs.sum(axis=1) @ sizes)
    return CardinalityStats(edge_mean, edges.normalizer)


def empirical_table(masks: np.ndarray, spec: LatticeSpec) -> ProbTable:
    codes = bool_to_codes(masks)
    if spec.n_vars <= EXACT_CUTOFF:
        return ProbTable(spec, np.bincount(codes, minlength=spec.n_masks)).normalized()
    uniq, cnt = np.unique(codes, return_counts=True)
    return ProbTable(spec, dict(zip(uniq.tolist(), cnt.tolist()))).normalized()
