import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from streamkmeans.core import (
    Centers,
    DegenerateCentersError,
    InputError,
    in_support_ball,
    is_degenerate,
    make_rng,
    min_separation,
    nearest_center,
    require_nondegenerate,
)

finite = st.floats(-100, 100, allow_nan=False)


def test_nearest_center_examples():
    assert nearest_center([[0.0], [1.0]], [0.4]) == 0
    assert nearest_center([[0.0], [1.0]], [0.5]) == 0
    assert nearest_center([[0.0, 0.0], [3.0, 4.0]], [3.0, 3.9]) == 1


def test_nearest_center_dimension_mismatch():
    with pytest.raises(InputError):
        nearest_center([[0.0], [1.0]], [0.1, 0.2])


def test_min_separation_examples():
    assert min_separation([[0.0], [1.0]]).distance == 1.0
    assert min_separation([[0, 0], [3, 4], [0, 1]]).distance == 1.0
    sep = min_separation([[0.0], [0.0]])
    assert sep.distance == 0.0 and sep.degenerate
    with pytest.raises(InputError):
        min_separation([[0.5]])


def test_support_ball_examples():
    assert in_support_ball([[0.5], [-0.5]], 1.0)
    assert not in_support_ball([[1.5]], 1.0)
    assert in_support_ball([[1.0]], 1.0)


def test_degeneracy_guard():
    assert is_degenerate([[0.3], [0.3]])
    with pytest.raises(DegenerateCentersError):
        require_nondegenerate([[0.3], [0.3 + 1e-12]])
    require_nondegenerate([[0.3]])


def test_centers_validation_and_immutability():
    w = Centers([[0.1], [0.2]])
    assert (w.k, w.d) == (2, 1)
    with pytest.raises(ValueError):
        w.points[0, 0] = 1.0
    with pytest.raises(InputError):
        Centers([[np.nan]])
    with pytest.raises(InputError):
        Centers.from_row("2 1 0.5")


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 3)), elements=finite))
def test_row_roundtrip(pts):
    w = Centers(pts)
    assert Centers.from_row(w.to_row()) == w


@given(
    hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.just(2)), elements=finite),
    hnp.arrays(np.float64, 2, elements=finite),
)
def test_nearest_is_a_minimizer(pts, x):
    i = nearest_center(pts, x)
    d2 = np.sum((pts - x) ** 2, axis=1)
    assert d2[i] == d2.min()
    # lowest index among exact ties
    assert i == int(np.flatnonzero(d2 == d2.min())[0])


def test_rng_streams_are_reproducible_and_distinct():
    a = make_rng(42, 0).random(5)
    assert np.array_equal(a, make_rng(42, 0).random(5))
    assert not np.array_equal(a, make_rng(42, 1).random(5))
    with pytest.raises(InputError):
        make_rng(-1)
