import pytest
from hypothesis import given, strategies as st

from macarm.exceptions import CapacityError, EmptyMaskError, InvalidArgumentError
from macarm.lattice import (
    Edge,
    LatticeSpec,
    Mask,
    all_masks,
    bool_to_codes,
    cardinality,
    codes_to_bool,
    make_mask,
    max_element,
    popcount_table,
    prefix,
    sorted_elements,
)

N4 = LatticeSpec(4)


def test_lattice_spec_validation():
    with pytest.raises(InvalidArgumentError):
        LatticeSpec(0)
    with pytest.raises(InvalidArgumentError):
        LatticeSpec(3, 1)
    with pytest.raises(InvalidArgumentError):
        LatticeSpec(65)
    LatticeSpec(64)
    with pytest.raises(CapacityError):
        LatticeSpec(21).require_exact()


def test_make_mask_examples():
    assert make_mask([], N4) == Mask(0, 4)
    assert make_mask([0, 2], N4).bits == 0b0101
    with pytest.raises(InvalidArgumentError):
        make_mask([4], N4)
    with pytest.raises(InvalidArgumentError):
        make_mask([1, 1], N4)


def test_cardinality_examples():
    assert cardinality(make_mask([], N4)) == 0
    assert cardinality(make_mask([0, 2], N4)) == 2
    assert cardinality(make_mask(range(4), N4)) == 4


def test_max_element_examples():
    assert max_element(make_mask([0, 2], N4)) == 2
    assert max_element(make_mask([3], N4)) == 3
    with pytest.raises(EmptyMaskError):
        max_element(make_mask([], N4))


def test_max_element_custom_order():
    e = make_mask([0, 2, 3], N4)
    assert max_element(e, order=[3, 2, 1, 0]) == 0


def test_sorted_elements_examples():
    assert sorted_elements(make_mask([2, 0, 3], N4)) == [0, 2, 3]
    assert sorted_elements(make_mask([], N4)) == []
    assert sorted_elements(make_mask([1], N4)) == [1]


def test_prefix_examples():
    spec = LatticeSpec(6)
    e = make_mask([1, 4, 5], spec)
    assert prefix(e, 2) == make_mask([1, 4], spec)
    assert prefix(e, 0) == make_mask([], spec)
    assert prefix(e, 3) == e
    with pytest.raises(InvalidArgumentError):
        prefix(e, 4)


def test_bitstring_index0_rightmost():
    e = make_mask([0, 2], N4)
    assert e.to_bitstring() == "0101"
    assert Mask.from_bitstring("0101") == e
    assert make_mask([3], N4).to_bitstring() == "1000"


def test_edge_rejects_target_in_source():
    with pytest.raises(InvalidArgumentError):
        Edge(1, make_mask([1], N4))
    assert Edge(0, make_mask([1], N4)).target == 0


def test_vectorised_helpers_roundtrip():
    codes = list(range(16))
    assert bool_to_codes(codes_to_bool(codes, 4)).tolist() == codes
    assert popcount_table(4).tolist() == [cardinality(Mask(c, 4)) for c in codes]


masks8 = st.integers(min_value=0, max_value=255).map(lambda b: Mask(b, 8))


@given(masks8)
def test_max_element_is_last_sorted(e):
    if e.bits:
        assert max_element(e) == sorted_elements(e)[-1]


@given(masks8, st.data())
def test_prefix_chain(e, data):
    k = data.draw(st.integers(0, max(cardinality(e) - 1, 0)))
    if cardinality(e) == 0:
        assert prefix(e, 0) == e
        return
    small, big = prefix(e, k), prefix(e, k + 1)
    assert small.issubset(big) and big.issubset(e)
    assert cardinality(small) == k


@given(masks8)
def test_make_mask_roundtrip(e):
    assert make_mask(sorted_elements(e), LatticeSpec(8)) == e


def test_all_masks_count():
    assert sum(1 for _ in all_masks(LatticeSpec(5))) == 32
