import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import STEP, batch_lloyd, quad_cost
from streamkmeans.core import CapabilityError, DegenerateCentersError
from streamkmeans.distributions import MomentOracle, distribution_from_spec
from streamkmeans.objective import cost, fd_gradient, gradient, quadratic_bound, surrogate_cost

# Frozen values, worked out by hand from piecewise polynomial integrals.
COST_K1_HALF = 1 / 24
COST_K1_ZERO = 1 / 6
COST_FIXED_POINT = 1 / 96
COST_03_075 = 0.0109010416666666667  # 1/2[(0.225^3 + 0.3^3) + (0.25^3 + 0.225^3)]/3
SURROGATE_03_075 = 1 / 96 + 0.5 * 0.5 * 0.05**2


def test_cost_examples(unif, exact):
    assert cost(unif, [[0.5]], exact).value == pytest.approx(COST_K1_HALF, abs=1e-15)
    assert cost(unif, [[0.0]], exact).value == pytest.approx(COST_K1_ZERO, abs=1e-15)
    assert cost(unif, [[0.25], [0.75]], exact).value == pytest.approx(COST_FIXED_POINT, abs=1e-15)
    assert cost(unif, [[0.3], [0.75]], exact).value == pytest.approx(COST_03_075, abs=1e-15)


def test_gradient_examples(unif, exact):
    np.testing.assert_allclose(gradient(unif, [[0.7]], exact).vectors, [[0.2]], atol=1e-15)
    np.testing.assert_allclose(gradient(unif, [[0.25], [0.75]], exact).vectors, [[0.0], [0.0]], atol=1e-15)
    np.testing.assert_allclose(gradient(unif, [[0.2], [0.4]], exact).vectors, [[0.015], [-0.175]], atol=1e-15)


def test_fd_gradient_examples(unif, exact):
    np.testing.assert_allclose(fd_gradient(unif, [[0.7]], exact).vectors, [[0.2]], atol=1e-8)
    np.testing.assert_allclose(fd_gradient(unif, [[0.25], [0.75]], exact).vectors, 0.0, atol=1e-8)
    np.testing.assert_allclose(
        fd_gradient(unif, [[0.2], [0.4]], exact).vectors, gradient(unif, [[0.2], [0.4]], exact).vectors, atol=1e-6
    )


def test_fd_gradient_needs_exact_oracle(unif):
    with pytest.raises(CapabilityError):
        fd_gradient(unif, [[0.2], [0.4]], MomentOracle("mc", samples=1000))


def test_fd_gradient_degenerate_step(unif, exact):
    with pytest.raises(DegenerateCentersError):
        fd_gradient(unif, [[0.2], [0.2 + 2e-10]], exact, h=1e-10)


def test_surrogate_examples(unif, exact):
    w = [[0.3], [0.75]]
    assert surrogate_cost(unif, w, w, exact).value == pytest.approx(cost(unif, w, exact).value, abs=1e-16)
    g = surrogate_cost(unif, w, [[0.25], [0.75]], exact).value
    assert g == pytest.approx(SURROGATE_03_075, abs=1e-15)


def test_quadratic_bound_examples(unif, exact):
    w = [[0.25], [0.75]]
    qb = quadratic_bound(unif, w, w, exact)
    assert qb.hessian == cost(unif, w, exact).value == qb.identity
    qb = quadratic_bound(unif, [[0.3], [0.75]], w, exact)
    assert qb.hessian == pytest.approx(SURROGATE_03_075, abs=1e-15)
    assert COST_03_075 <= qb.hessian <= qb.identity


def test_empty_cell_gradient_is_zero(exact):
    dist = distribution_from_spec({"type": "piecewise1d", "breakpoints": [0.0, 1.0], "densities": [1.0], "radius": 5})
    g = gradient(dist, [[0.5], [4.0]], exact).vectors
    assert g[1, 0] == 0.0


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=4, unique=True))
def test_cost_matches_quadrature(ws):
    dist = distribution_from_spec(STEP)
    if len(ws) > 1 and np.min(np.diff(np.sort(ws))) < 1e-6:
        return
    w = np.array(ws)[:, None]
    assert cost(dist, w, MomentOracle("exact")).value == pytest.approx(quad_cost(dist, w), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-0.2, 1.2), min_size=2, max_size=4, unique=True),
       st.lists(st.floats(-0.2, 1.2), min_size=4, max_size=4, unique=True))
def test_surrogate_majorizes(ws, refs):
    dist = distribution_from_spec({**STEP, "radius": 1.5})
    k = len(ws)
    w = np.array(ws)[:, None]
    ref = np.array(refs[:k])[:, None]
    if np.min(np.diff(np.sort(ws))) < 1e-9 or np.min(np.diff(np.sort(refs[:k]))) < 1e-9:
        return
    o = MomentOracle("exact")
    assert cost(dist, w, o).value <= surrogate_cost(dist, w, ref, o).value + 1e-12
    assert cost(dist, w, o).value <= quadratic_bound(dist, w, ref, o).hessian + 1e-12


def test_batch_lloyd_fixed_points_are_stationary(unif, step_density, exact):
    w = batch_lloyd(unif, [[0.1], [0.4], [0.9]])
    np.testing.assert_allclose(np.sort(w.ravel()), [1 / 6, 1 / 2, 5 / 6], atol=1e-12)
    w = batch_lloyd(step_density, [[0.2], [0.8]])
    assert gradient(step_density, w, exact).total_norm < 1e-12
    # symmetric density: the fixed point is symmetric about 1/2
    assert np.sort(w.ravel()).sum() == pytest.approx(1.0, abs=1e-12)
