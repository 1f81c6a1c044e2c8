import itertools
from collections import Counter

import numpy as np
import pytest

from macarm.exceptions import EmptyMaskError, InvalidArgumentError
from macarm.lattice import LatticeSpec, Mask, all_masks, cardinality, make_mask, prefix
from macarm.protocols import (
    W_MAC,
    W_RND,
    MACProtocol,
    Protocol,
    choose,
    get_protocol,
    make_rng,
    path_sources,
    simulate_path,
)

N4 = LatticeSpec(4)


def test_choose_mac_is_max():
    assert choose(W_MAC, make_mask([0, 2, 3], N4)) == 3
    with pytest.raises(EmptyMaskError):
        choose(W_MAC, make_mask([], N4))


def test_choose_rnd_frequency():
    rng = make_rng(0)
    e = make_mask([0, 2], N4)
    draws = Counter(choose(W_RND, e, rng) for _ in range(100_000))
    assert set(draws) == {0, 2}
    assert abs(draws[0] / 100_000 - 0.5) < 0.01


def test_simulate_path_examples():
    e = make_mask([0, 2, 3], N4)
    p = simulate_path(W_MAC, e)
    assert [(ed.target, ed.source) for ed in p.edges] == [
        (3, make_mask([0, 2], N4)), (2, make_mask([0], N4)), (0, make_mask([], N4))
    ]
    assert path_sources(p) == [make_mask([0, 2], N4), make_mask([0], N4), make_mask([], N4)]
    assert len(simulate_path(W_RND, make_mask([], N4), make_rng(0))) == 0
    assert path_sources(simulate_path(W_RND, make_mask([], N4), make_rng(0))) == []
    single = simulate_path(W_MAC, make_mask([1], N4))
    assert [(ed.target, ed.source.bits) for ed in single.edges] == [(1, 0)]
    assert path_sources(simulate_path(W_MAC, make_mask([5], LatticeSpec(6)))) == [Mask(0, 6)]


def test_mac_path_sources_are_prefixes_exhaustive():
    spec = LatticeSpec(12)
    for e in all_masks(spec):
        c = cardinality(e)
        assert path_sources(simulate_path(W_MAC, e)) == [prefix(e, k) for k in range(c - 1, -1, -1)]


def test_path_reversal_is_compatible_ordering():
    rng = make_rng(1)
    spec = LatticeSpec(7)
    for e in all_masks(spec):
        p = simulate_path(W_RND, e, rng)
        order = p.ordering()
        assert len(p) == cardinality(e)
        assert set(order) == set(e)
        # generating in this order reaches each intermediate source as a prefix
        seen = 0
        for t, v in enumerate(order):
            assert Mask(seen, 7) == p.edges[len(order) - 1 - t].source
            seen |= 1 << v
        assert seen == e.bits


def test_rnd_paths_uniform_over_orders():
    rng = make_rng(2)
    e = make_mask([0, 1, 3], N4)
    n = 100_000
    counts = Counter(tuple(simulate_path(W_RND, e, rng).targets()) for _ in range(n))
    assert set(counts) == set(itertools.permutations([0, 1, 3]))
    for c in counts.values():
        assert abs(c / n - 1 / 6) < 0.01


def test_removal_ranks_match_paths():
    rng = make_rng(3)
    spec = LatticeSpec(6)
    masks = np.array([[bool(c >> v & 1) for v in range(6)] for c in range(64)])
    ranks = W_MAC.removal_ranks(masks)
    for c in range(64):
        targets = simulate_path(W_MAC, Mask(c, 6)).targets()
        for step, v in enumerate(targets):
            assert ranks[c, v] == step
    rr = W_RND.removal_ranks(masks, rng)
    for c in range(64):
        members = sorted(rr[c][masks[c]].tolist())
        assert members == list(range(masks[c].sum()))
        assert np.all(rr[c][~masks[c]] == 6)


def test_weight_matrices_match_weights():
    codes = np.arange(32)
    for w in (W_MAC, W_RND):
        mat = w.weight_matrix(codes, 5)
        for c in range(1, 32):
            expected = np.zeros(5)
            for j, p in w.weights(Mask(c, 5)).items():
                expected[j] = p
            np.testing.assert_allclose(mat[c], expected)
        np.testing.assert_allclose(mat[1:].sum(axis=1), 1.0)


def test_custom_protocol_self_check():
    class Smallest(Protocol):
        def weights(self, e):
            return {min(e): 1.0}

    w = Smallest()
    assert choose(w, make_mask([1, 3], N4), make_rng(0)) == 1

    class Broken(Protocol):
        def weights(self, e):
            return {max(e): 0.5}

    with pytest.raises(InvalidArgumentError):
        Broken()


def test_get_protocol_names():
    assert get_protocol("mac").name == "mac"
    assert get_protocol("RND").name == "rnd"
    with pytest.raises(InvalidArgumentError):
        get_protocol("lifo")


def test_mac_custom_order():
    w = MACProtocol(order=[3, 2, 1, 0])
    assert w.choose(make_mask([0, 2], N4)) == 0
    masks = np.array([[True, False, True, True]])
    ranks = w.removal_ranks(masks)
    assert ranks[0].tolist() == [0, 4, 1, 2]
