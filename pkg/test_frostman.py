import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from content_measures import GridSet, cube_set, full_set, net_content, percolation_set
from exceptions import MeasureError, ParameterError
from frostman import TreeMeasure, build_frostman, frostman_a_constant, frostman_diam_bound_check
from parabolic_geometry import ParabolicCube, ParabolicRectangle


def test_single_leaf():
    root = ParabolicCube.unit(3, 1)
    E = GridSet(root, 2, frozenset({(4, 40)}))
    mu = build_frostman(E, 1.5)
    assert mu.total == pytest.approx(3.0 ** (-2 * 1.5))


def test_full_cube_is_uniform():
    root = ParabolicCube.unit(3, 1)
    mu = build_frostman(full_set(root, 2), 2.0)
    assert mu.total == pytest.approx(1.0)
    for depth in (1, 2):
        values = list(mu.masses[depth].values())
        assert len(values) == 27**depth
        assert max(values) == pytest.approx(min(values))
        assert max(values) == pytest.approx(27.0 ** (-depth))


def test_two_leaves_match_net_content():
    root = ParabolicCube.unit(3, 1)
    E = cube_set(root, 2, [root.child((0, 0)), root.child((2, 5))])
    mu = build_frostman(E, 1.0)
    assert mu.total == pytest.approx(2 / 3)
    assert mu.total == pytest.approx(net_content(E, 1.0).value)


@given(st.integers(0, 10_000), st.sampled_from([0.5, 1.0, 2.0, 3.0]), st.floats(0.2, 0.9))
@settings(max_examples=40, deadline=None)
def test_total_equals_net_content_and_growth_bound(seed, rho, p):
    E = percolation_set(ParabolicCube.unit(3, 1), 2, p, seed)
    if E.is_empty():
        return
    mu = build_frostman(E, rho)
    mu.check()
    assert mu.total == pytest.approx(net_content(E, rho).value, rel=1e-12)
    assert mu.total >= 2.0 ** (-(E.n + 1)) * net_content(E, rho).value
    for Q, value in mu.iter_cubes():
        assert 0 <= value <= Q.side**rho * (1 + 1e-12)


def test_rectangle_bound_on_random_rectangles():
    E = percolation_set(ParabolicCube.unit(3, 1), 3, 0.5, seed=5)
    mu = build_frostman(E, 2.0)
    rng = np.random.default_rng(1)
    for _ in range(1000):
        side = rng.uniform(0.005, 1.0)
        A = ParabolicRectangle((rng.uniform(-side, 1.0),), (side,), rng.uniform(-side * side, 1.0), side)
        assert frostman_diam_bound_check(mu, A)


def test_rectangle_containing_root_gets_total():
    E = percolation_set(ParabolicCube.unit(3, 1), 2, 0.6, seed=2)
    mu = build_frostman(E, 1.0)
    A = ParabolicRectangle((-0.5,), (2.0,), -0.5, 2.0)
    assert mu.measure_rectangle(A) == pytest.approx(mu.total)
    assert frostman_diam_bound_check(mu, A)


def test_leaf_rectangle_bound():
    E = full_set(ParabolicCube.unit(3, 1), 2)
    mu = build_frostman(E, 2.0)
    leaf = E.leaves()[10]
    assert mu.measure_rectangle(leaf.rectangle()) <= leaf.side**2.0 * (1 + 1e-12)


def test_mass_below_resolution_splits_by_volume():
    E = full_set(ParabolicCube.unit(3, 1), 1)
    mu = build_frostman(E, 2.0)
    leaf = E.leaves()[0]
    grandchild = next(leaf.iter_children())
    assert mu.mass(grandchild) == pytest.approx(mu.mass(leaf) / 27)


def test_errors():
    with pytest.raises(MeasureError):
        build_frostman(GridSet(ParabolicCube.unit(3, 1), 2), 1.0)
    with pytest.raises(ParameterError):
        build_frostman(full_set(ParabolicCube.unit(3, 1), 1), 3.5)


def test_a_constant():
    assert frostman_a_constant(1, 3, 1.0) == 27.0


def test_serialization_round_trip(tmp_path):
    E = percolation_set(ParabolicCube.unit(3, 1), 2, 0.5, seed=9)
    mu = build_frostman(E, 1.5)
    path = tmp_path / "mu.json"
    mu.save(str(path))
    loaded = TreeMeasure.load(str(path))
    assert loaded.total == pytest.approx(mu.total, rel=1e-12)
    assert math.isclose(loaded.mass(E.leaves()[0]), mu.mass(E.leaves()[0]), rel_tol=1e-12)
