import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from content_measures import (
    ContentTable,
    GridSet,
    comparison_bounds,
    cover_cost,
    cube_set,
    full_set,
    net_content,
    percolation_set,
    product_set,
    random_rectangle_cover,
    slab_set,
)
from exceptions import GeometryError, ParameterError, ResolutionError
from parabolic_geometry import ParabolicCube, ancestor


def all_covers(E, Q, delta):
    """Every antichain cover of E inside Q by descendants of side <= delta."""
    if not E.meets(Q):
        return [[]]
    options = []
    if Q.side <= delta * (1 + 1e-12):
        options.append([Q])
    if E.depth_of(Q) < E.K:
        parts = [all_covers(E, c, delta) for c in E.occupied_children(Q)]
        for combo in itertools.product(*parts):
            options.append([W for part in combo for W in part])
    return options


def brute_force(E, rho, delta=math.inf):
    return min(math.fsum(W.side**rho for W in cover) for cover in all_covers(E, E.root, delta))


@st.composite
def small_gridsets(draw, m=2):
    K = draw(st.integers(1, 3))
    root = ParabolicCube.unit(m, 1)
    limit = 5 if K == 3 else 7
    leaves = draw(
        st.sets(st.tuples(st.integers(0, m**K - 1), st.integers(0, m ** (2 * K) - 1)), min_size=1, max_size=limit)
    )
    return GridSet(root, K, frozenset(leaves))


@given(small_gridsets(), st.sampled_from([0.5, 1.0, 2.0, 3.0]), st.sampled_from([math.inf, 1.0, 0.5]))
@settings(max_examples=200, deadline=None)
def test_dp_matches_exhaustive_covers_m2(E, rho, delta):
    assert net_content(E, rho, delta).value == pytest.approx(brute_force(E, rho, delta), rel=1e-12)


@given(st.sets(st.tuples(st.integers(0, 2), st.integers(0, 8)), min_size=1, max_size=9), st.sampled_from([0.5, 1.0, 2.0]))
@settings(max_examples=100, deadline=None)
def test_dp_matches_exhaustive_covers_m3(leaves, rho):
    E = GridSet(ParabolicCube.unit(3, 1), 1, frozenset(leaves))
    assert net_content(E, rho).value == pytest.approx(brute_force(E, rho), rel=1e-12)


@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0, 3.0])
def test_full_set_costs_one(rho):
    E = full_set(ParabolicCube.unit(3, 1), 2)
    assert net_content(E, rho).value == pytest.approx(1.0)


def test_full_set_at_top_exponent_every_cover_costs_one():
    E = full_set(ParabolicCube.unit(2, 1), 2)
    costs = {round(math.fsum(W.side**3 for W in cover), 12) for cover in all_covers(E, E.root, math.inf)}
    assert costs == {1.0}


def test_two_children():
    Q = ParabolicCube.unit(3, 1)
    E = cube_set(Q, 2, [Q.child((0, 0)), Q.child((2, 5))])
    value = net_content(E, 1.0)
    assert value.value == pytest.approx(2 / 3)
    assert len(value.witness) == 2


def test_witness_is_a_valid_cover():
    E = percolation_set(ParabolicCube.unit(3, 1), 3, 0.4, seed=7)
    value = net_content(E, 1.5, 1 / 3)
    assert math.fsum(W.side**1.5 for W in value.witness) == pytest.approx(value.value)
    assert all(W.side <= 1 / 3 + 1e-12 for W in value.witness)
    for leaf in E.leaves():
        assert sum(1 for W in value.witness if W.contains_cube(leaf)) == 1


def test_comparison_bounds():
    assert comparison_bounds(1, 2, 1.0) == (1.0, 18.0)


def test_contents_vanish_above_top_exponent():
    root = ParabolicCube.unit(2, 1)
    values = [ContentTable(full_set(root, K), 3.5).value(root) for K in range(1, 5)]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_delta_is_rounded_down_to_a_power():
    E = full_set(ParabolicCube.unit(3, 1), 2)
    assert net_content(E, 1.0, 0.5).delta == pytest.approx(1 / 3)
    assert net_content(E, 1.0, 0.5).value == net_content(E, 1.0, 1 / 3).value


def test_errors():
    E = full_set(ParabolicCube.unit(3, 1), 1)
    with pytest.raises(ResolutionError):
        net_content(E, 1.0, 0.01)
    with pytest.raises(ParameterError):
        net_content(E, 3.5)
    with pytest.raises(ParameterError):
        net_content(E, 0.0)


@given(small_gridsets(), small_gridsets(), st.sampled_from([0.5, 1.0, 2.0]))
@settings(max_examples=100, deadline=None)
def test_monotone_and_subadditive(E1, E2, rho):
    if E1.K != E2.K:
        return
    union = E1.union(E2)
    a, b, u = net_content(E1, rho).value, net_content(E2, rho).value, net_content(union, rho).value
    assert u <= a + b + 1e-12
    assert a <= u + 1e-12
    assert net_content(union, rho).value <= net_content(union, rho, 0.5).value + 1e-12


@given(small_gridsets(), st.sampled_from([0.5, 1.0, 2.0, 3.0]))
@settings(max_examples=100, deadline=None)
def test_dilation_scales_by_m_to_minus_rho(E, rho):
    assert net_content(E.dilate(), rho).value == pytest.approx(2.0 ** (-rho) * net_content(E, rho).value, rel=1e-12)


def test_random_rectangle_covers_bound_net_content():
    E = percolation_set(ParabolicCube.unit(3, 1), 2, 0.5, seed=3)
    rng = np.random.default_rng(0)
    rho = 2.0
    _, upper = comparison_bounds(E.n, E.m, rho)
    value = net_content(E, rho).value
    for _ in range(20):
        assert value <= upper * cover_cost(random_rectangle_cover(E, rng), rho) * (1 + 1e-12)


def test_gridset_queries():
    root = ParabolicCube.unit(3, 1)
    E = slab_set(root, 2, time_row=0)
    assert len(E.occupied) == 9
    assert E.meets(root.child((0, 0)))
    assert not E.meets(root.child((0, 1)))
    assert E.count(root.child((1, 0))) == 3
    assert E.restrict(root.child((1, 0))).K == 1
    assert len(E.occupied_children(root)) == 3


def test_maximal_cubes():
    root = ParabolicCube.unit(3, 1)
    Q = root.child((1, 4))
    E = cube_set(root, 2, [Q])
    assert E.maximal_cubes() == [Q]
    assert full_set(root, 2).maximal_cubes() == [root]


def test_product_set():
    root = ParabolicCube.unit(2, 1)
    E = product_set(root, 1, [[0, 1], [3]])
    assert E.occupied == frozenset({(0, 3), (1, 3)})
    with pytest.raises(ParameterError):
        product_set(root, 1, [[0, 2], [0]])


def test_gridset_rejects_foreign_leaves():
    with pytest.raises(GeometryError):
        GridSet(ParabolicCube.unit(2, 1), 1, frozenset({(2, 0)}))


def test_gridset_file_round_trip(tmp_path):
    E = percolation_set(ParabolicCube(3, 1, (1, 4)), 2, 0.5, seed=11)
    path = tmp_path / "set.txt"
    E.save(str(path))
    loaded = GridSet.load(str(path))
    assert loaded == E
    assert all(ancestor(leaf, 2) == E.root for leaf in loaded.leaves())
