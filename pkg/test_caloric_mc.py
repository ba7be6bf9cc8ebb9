import math

import numpy as np
import pytest

from caloric_mc import (
    BOTTOM,
    LATERAL,
    ArcSet,
    BallContainer,
    Bottom,
    BoxContainer,
    Complement,
    CrossSection,
    CylinderTarget,
    Everything,
    HalfSpaceSet,
    Lateral,
    MCEstimate,
    Nothing,
    ObstacleTarget,
    RegionTarget,
    SpaceTimeDomain,
    WalkConfig,
    check_ball_estimate,
    check_cylinder_estimate,
    check_cylinder_projection,
    check_interval_survival,
    domain_from_spec,
    estimate_caloric,
    interval_survival_series,
    nested_rectangle_bound,
    simulate_exit,
    simulate_exits,
    strong_markov_residual,
    target_from_spec,
    walk_on_spheres,
)
from exceptions import GeometryError, ParameterError, WalkBudgetExceeded
from parabolic_geometry import ParabolicCube, ParabolicRectangle, SpaceTimePoint
from schemas import ContainerSpec, DomainSpec, RectangleSpec, TargetSpec, WalkSpec


@pytest.fixture
def unit_slab():
    return SpaceTimeDomain(BoxContainer((-1.0,), (1.0,), 0.0, 1.0))


@pytest.fixture
def shelf():
    """(-1, 1) x (0, 2) with an obstacle spanning the whole width over [0.5, 0.75]."""
    return SpaceTimeDomain(BoxContainer((-1.0,), (1.0,), 0.0, 2.0), (ParabolicRectangle((-1.5,), (3.0,), 0.5, 0.25),))


def test_exits_are_strictly_in_the_past(unit_slab):
    batch = simulate_exits(unit_slab, SpaceTimePoint((0.3,), 0.5), 300, WalkConfig(seed=1))
    assert np.all(batch.s < batch.t0)
    assert set(np.unique(batch.tag)) <= {BOTTOM, LATERAL}
    assert np.all(batch.steps >= 1)


def test_bottom_exits_land_on_the_bottom(unit_slab):
    batch = simulate_exits(unit_slab, SpaceTimePoint((0.0,), 0.2), 300, WalkConfig(seed=2))
    bottom = batch.tag == BOTTOM
    assert bottom.any()
    assert np.all(batch.s[bottom] <= 1e-6)
    lateral = batch.tag == LATERAL
    assert np.all(np.abs(np.abs(batch.Y[lateral, 0]) - 1.0) <= 1e-5)


def test_results_do_not_depend_on_thread_count(unit_slab):
    pole = SpaceTimePoint((0.1,), 0.8)
    one = simulate_exits(unit_slab, pole, 230, WalkConfig(seed=7, batch_size=50, threads=1))
    four = simulate_exits(unit_slab, pole, 230, WalkConfig(seed=7, batch_size=50, threads=4))
    np.testing.assert_array_equal(one.Y, four.Y)
    np.testing.assert_array_equal(one.s, four.s)
    np.testing.assert_array_equal(one.tag, four.tag)


def test_seed_and_stream_change_the_walks(unit_slab):
    pole = SpaceTimePoint((0.1,), 0.8)
    a = simulate_exits(unit_slab, pole, 100, WalkConfig(seed=7))
    b = simulate_exits(unit_slab, pole, 100, WalkConfig(seed=8))
    c = simulate_exits(unit_slab, pole, 100, WalkConfig(seed=7), stream=1)
    assert not np.array_equal(a.s, b.s)
    assert not np.array_equal(a.s, c.s)


def test_simulate_exit(unit_slab):
    pole = SpaceTimePoint((0.0,), 0.5)
    first = simulate_exit(unit_slab, pole, WalkConfig(seed=4), walk_index=3)
    again = simulate_exit(unit_slab, pole, WalkConfig(seed=4), walk_index=3)
    assert first == again
    assert first.s < pole.t
    assert first.tag in {"bottom", "lateral"}


def test_pole_errors(unit_slab):
    with pytest.raises(ParameterError):
        simulate_exits(unit_slab, SpaceTimePoint((2.0,), 0.5), 10)
    with pytest.raises(ParameterError):
        simulate_exits(unit_slab, SpaceTimePoint((0.0,), 0.0), 10)
    with pytest.raises(ParameterError):
        simulate_exits(unit_slab, SpaceTimePoint((0.0,), 0.5))
    with pytest.raises(GeometryError):
        simulate_exits(unit_slab, SpaceTimePoint((0.0, 0.0), 0.5), 10)


def test_walk_budget():
    endless = SpaceTimeDomain(BoxContainer((-1.0,), (1.0,)))
    with pytest.raises(WalkBudgetExceeded):
        simulate_exits(endless, SpaceTimePoint((0.0,), 0.0), 20, WalkConfig(dt=1e-6, max_steps=5))


@pytest.mark.parametrize("kwargs", [{"dt": 0.0}, {"variance_rate": 0.0}, {"seed": -1}, {"batch_size": 0}, {"bisection_tol": 0.0}])
def test_walk_config_rejects_bad_values(kwargs):
    with pytest.raises(ParameterError):
        WalkConfig(**kwargs)


def test_walk_config_from_spec():
    cfg = WalkConfig.from_spec(WalkSpec(max_steps=1000), seed=3, threads=2)
    assert (cfg.seed, cfg.threads, cfg.max_steps, cfg.variance_rate) == (3, 2, 1000, 2.0)


def test_exit_targets_partition_the_walks(unit_slab):
    batch = simulate_exits(unit_slab, SpaceTimePoint((0.2,), 0.6), 400, WalkConfig(seed=5))
    parts = [Bottom()(batch), Lateral(0)(batch), Lateral(1)(batch)]
    assert np.array_equal(np.sum(parts, axis=0), np.ones(batch.N))
    assert np.array_equal(Everything()(batch), ~Nothing()(batch))
    for target in (Bottom(), Lateral(), Lateral(1)):
        assert np.array_equal(Complement(target)(batch), ~target(batch))


def test_estimate_and_complement_sum_to_one(unit_slab):
    pole, cfg = SpaceTimePoint((0.2,), 0.6), WalkConfig(seed=6)
    hit = estimate_caloric(unit_slab, pole, Lateral(), 500, cfg)
    miss = estimate_caloric(unit_slab, pole, Complement(Lateral()), 500, cfg)
    assert hit.mean + miss.mean == pytest.approx(1.0)
    assert estimate_caloric(unit_slab, pole, Everything(), 50, cfg).mean == 1.0


def test_obstacle_shields_the_bottom(shelf):
    pole = SpaceTimePoint((0.0,), 1.0)
    batch = simulate_exits(shelf, pole, 500, WalkConfig(seed=9))
    assert set(np.unique(batch.tag)) == {0, LATERAL}
    np.testing.assert_allclose(batch.s[batch.tag == 0], 0.75, atol=1e-9)
    assert estimate_caloric(shelf, pole, Bottom(), 200, WalkConfig(seed=9)).mean == 0.0
    on_top = estimate_caloric(shelf, pole, RegionTarget(shelf.obstacles[0]), 500, WalkConfig(seed=9))
    blocked = estimate_caloric(shelf, pole, ObstacleTarget(shelf.obstacles), 500, WalkConfig(seed=9))
    assert on_top.mean == pytest.approx(blocked.mean)


def test_domain_geometry(shelf):
    assert shelf.contains(SpaceTimePoint((0.0,), 1.0))
    assert not shelf.contains(SpaceTimePoint((0.0,), 0.6))
    assert shelf.on_essential_boundary(SpaceTimePoint((0.0,), 0.75))
    assert not shelf.on_essential_boundary(SpaceTimePoint((0.0,), 0.6))
    assert shelf.on_essential_boundary(SpaceTimePoint((1.0,), 1.5))
    assert shelf.default_dt() == pytest.approx(0.5**2 / 400)
    assert shelf.essential_distance(SpaceTimePoint((0.0,), 1.0)) == pytest.approx(0.5)
    bare = SpaceTimeDomain(shelf.container)
    assert shelf.is_subdomain_of(bare)
    assert not bare.is_subdomain_of(shelf)
    assert bare.with_obstacles(shelf.obstacles) == shelf


def test_default_dt_reads_time_sides_as_parabolic_lengths():
    thin = SpaceTimeDomain(BoxContainer((-1.0,), (1.0,), 0.0, 1.0), (ParabolicRectangle((-0.5,), (1.0,), 0.5, 0.01),))
    assert thin.default_dt() == pytest.approx(0.01 / 400)
    target_cube = SpaceTimeDomain(BoxContainer.from_cube(ParabolicCube.unit(7, 1)), (ParabolicCube(7, 1, (3, 46)).rectangle(),))
    assert target_cube.default_dt() == pytest.approx((1 / 7) ** 2 / 400)


def test_ball_container():
    D = BallContainer((0.0, 0.0), 1.0, 0.0, 1.0)
    inside = D.inside(np.array([[0.5, 0.0], [0.9, 0.9]]), np.array([0.5, 0.5]))
    assert inside.tolist() == [True, False]
    assert D.essential_distance(SpaceTimePoint((0.0, 0.0), 0.25)) == pytest.approx(0.5)
    with pytest.raises(GeometryError):
        BallContainer((0.0,), -1.0)


def test_interval_survival_series():
    assert interval_survival_series(1.0, 1.0, 1.0) == pytest.approx(0.37080, abs=1e-4)
    assert interval_survival_series(2.0, 4.0, 1.0) == pytest.approx(interval_survival_series(1.0, 1.0, 1.0))
    assert interval_survival_series(1.0, 1.0, 2.0) == pytest.approx(interval_survival_series(1.0, 2.0, 1.0))


def test_interval_survival_estimate():
    record = check_interval_survival(4000, WalkConfig(seed=3, variance_rate=1.0))
    assert record.passed, record


@pytest.mark.slow
def test_interval_survival_estimate_at_full_size():
    record = check_interval_survival(100_000, WalkConfig(seed=11))
    assert record.passed, record


def test_cylinder_and_ball_bounds(unit_slab):
    cfg = WalkConfig(seed=12)
    cylinder = check_cylinder_estimate(unit_slab, SpaceTimePoint((0.0,), 0.9), SpaceTimePoint((1.0,), 0.5), 0.2, 0.04, 2000, cfg)
    assert cylinder.passed, cylinder
    ball = check_ball_estimate(unit_slab, SpaceTimePoint((0.0,), 0.99), SpaceTimePoint((1.0,), 0.5), 0.2, 2000, cfg)
    assert ball.passed, ball
    assert ball.details["dist"] == pytest.approx(math.sqrt(0.99))


def test_ball_estimate_preconditions(unit_slab):
    pole = SpaceTimePoint((0.0,), 0.99)
    with pytest.raises(ParameterError):
        check_ball_estimate(unit_slab, pole, SpaceTimePoint((0.0,), 0.5), 0.2, 10)
    with pytest.raises(ParameterError):
        check_ball_estimate(unit_slab, pole, SpaceTimePoint((1.0,), 0.5), 1.5, 10)
    with pytest.raises(ParameterError):
        check_cylinder_estimate(unit_slab, pole, SpaceTimePoint((0.5,), 0.5), 0.2, 0.04, 10)


def test_cylinder_target_membership(unit_slab):
    batch = simulate_exits(unit_slab, SpaceTimePoint((0.0,), 0.9), 300, WalkConfig(seed=13))
    target = CylinderTarget(SpaceTimePoint((1.0,), 0.5), 0.2, 0.04)
    hit = target(batch)
    assert np.all(np.abs(batch.Y[hit, 0] - 1.0) < 0.2)
    assert np.all(np.abs(batch.s[hit] - 0.5) < 0.04)


def _strong_markov_fixtures():
    shelf = ParabolicRectangle((-1.5,), (3.0,), 0.5, 0.25)
    return {
        "interval": (
            SpaceTimeDomain(BoxContainer((-0.5,), (0.5,), 0.0, 1.0)),
            SpaceTimeDomain(BoxContainer((-1.0,), (1.0,), 0.0, 1.0)),
            SpaceTimePoint((0.0,), 0.9),
            Bottom(),
        ),
        "shelf": (
            SpaceTimeDomain(BoxContainer((-0.6,), (0.6,), 0.0, 2.0), (shelf,)),
            SpaceTimeDomain(BoxContainer((-1.0,), (1.0,), 0.0, 2.0), (shelf,)),
            SpaceTimePoint((0.0,), 1.5),
            ObstacleTarget((shelf,)),
        ),
        "square": (
            SpaceTimeDomain(BoxContainer((-0.5, -0.5), (0.5, 0.5), 0.0, 1.0)),
            SpaceTimeDomain(BoxContainer((-1.0, -1.0), (1.0, 1.0), 0.0, 1.0)),
            SpaceTimePoint((0.0, 0.0), 0.9),
            Bottom(),
        ),
    }


@pytest.mark.parametrize("name", ["interval", "shelf", "square"])
def test_strong_markov(name):
    inner, outer, pole, target = _strong_markov_fixtures()[name]
    record = strong_markov_residual(inner, outer, pole, target, 1000, WalkConfig(seed=14))
    assert record.passed, record
    assert record.details["continued"] > 0
    assert record.details["term1"] + record.details["term2"] == pytest.approx(record.details["direct"] - record.estimate)


def test_strong_markov_needs_nested_domains():
    inner, outer, pole, target = _strong_markov_fixtures()["interval"]
    with pytest.raises(ParameterError):
        strong_markov_residual(outer, inner, pole, target, 10)


NESTED = [
    ParabolicRectangle((1.0,), (2.0,), 0.5, 1.0),
    ParabolicRectangle((1.5,), (1.0,), 0.75, 0.25),
    ParabolicRectangle((1.75,), (0.5,), 0.8, 0.15),
]


@pytest.mark.parametrize("k, grid_sizes", [(1, []), (2, [3]), (3, [3, 3])])
def test_nested_rectangles_across_the_lateral_face(k, grid_sizes):
    domain = SpaceTimeDomain(BoxContainer((-2.0,), (2.0,), 0.0, 4.0))
    record = nested_rectangle_bound(domain, NESTED[:k], SpaceTimePoint((0.0,), 2.0), 300, WalkConfig(seed=15), grid_per_axis=2)
    assert record.passed, record
    assert record.details["k"] == k
    assert record.details["grid_sizes"] == grid_sizes
    assert len(record.details["factors"]) == k
    assert record.bound <= record.details["factors"][0] + 1e-12
    if k < 3:
        assert record.estimate > 0.0


def test_nested_rectangle_preconditions():
    domain = SpaceTimeDomain(BoxContainer((-2.0,), (2.0,), 0.0, 4.0))
    outer = ParabolicRectangle((-1.0,), (2.0,), 0.5, 1.0)
    inner = ParabolicRectangle((-0.5,), (1.0,), 0.75, 0.25)
    with pytest.raises(ParameterError):
        nested_rectangle_bound(domain, [inner, outer], SpaceTimePoint((0.0,), 2.0), 10)
    with pytest.raises(ParameterError):
        nested_rectangle_bound(domain, [outer, inner], SpaceTimePoint((0.0,), 1.0), 10)
    with pytest.raises(ParameterError):
        nested_rectangle_bound(domain, [], SpaceTimePoint((0.0,), 2.0), 10)


def test_walk_on_spheres_interval():
    est = walk_on_spheres(BoxContainer((-1.0,), (1.0,)), (0.5,), HalfSpaceSet(0, 1.0), 4000, seed=1)
    assert abs(est.mean - 0.75) <= 4 * est.stderr


def test_walk_on_spheres_disk_quadrant():
    est = walk_on_spheres(BallContainer((0.0, 0.0), 1.0), (0.0, 0.0), ArcSet((0.0, 0.0), 0.0, math.pi / 2), 4000, seed=2)
    assert abs(est.mean - 0.25) <= 4 * est.stderr
    with pytest.raises(ParameterError):
        walk_on_spheres(BallContainer((0.0, 0.0), 1.0), (2.0, 0.0), ArcSet((0.0, 0.0), 0.0, 1.0), 10, seed=2)


@pytest.mark.parametrize("x, exact", [(0.3, 0.3), (0.7, 0.7)])
def test_cylinder_projection_on_an_interval(x, exact):
    record = check_cylinder_projection(BoxContainer((0.0,), (1.0,)), (x,), HalfSpaceSet(0, 1.0), 2000, WalkConfig(seed=16), exact=exact)
    assert record.passed, record
    assert record.details["exact"] == exact
    assert abs(record.estimate - exact) <= 4 * record.stderr
    assert abs(record.details["harmonic"] - exact) <= 4 * record.stderr


def test_cylinder_projection_on_a_disk_quarter_arc():
    disk = BallContainer((0.0, 0.0), 1.0)
    record = check_cylinder_projection(disk, (0.0, 0.0), ArcSet((0.0, 0.0), 0.0, math.pi / 2), 2000, WalkConfig(seed=18), exact=0.25)
    assert record.passed, record
    assert abs(record.estimate - 0.25) <= 4 * record.stderr
    assert abs(record.details["harmonic"] - 0.25) <= 4 * record.stderr


def test_cross_section_counts_only_lateral_exits(unit_slab):
    batch = simulate_exits(unit_slab, SpaceTimePoint((0.0,), 0.5), 300, WalkConfig(seed=17))
    hit = CrossSection(HalfSpaceSet(0, 1.0))(batch)
    assert np.all(batch.tag[hit] == LATERAL)
    assert np.all(batch.Y[hit, 0] > 0)


def test_estimate_from_counts():
    est = MCEstimate.from_counts(3, 4, seed=0)
    assert est.mean == 0.75
    assert est.stderr == pytest.approx(math.sqrt(0.75 * 0.25 / 4))
    with pytest.raises(ParameterError):
        MCEstimate.from_counts(0, 0, seed=0)


def test_domain_and_targets_from_spec():
    spec = DomainSpec(
        container=ContainerSpec(kind="box", lower=[-1.0], upper=[1.0], t_lo=0.0, t_hi=2.0),
        obstacles=[RectangleSpec(lower=[-1.5], sides=[3.0], t0=0.5, time_side=0.25)],
    )
    domain = domain_from_spec(spec)
    assert domain.container == BoxContainer((-1.0,), (1.0,), 0.0, 2.0)
    assert domain.obstacles == (ParabolicRectangle((-1.5,), (3.0,), 0.5, 0.25),)
    assert target_from_spec(TargetSpec(kind="obstacles"), domain) == ObstacleTarget(domain.obstacles)
    ball = target_from_spec(TargetSpec(kind="ball", center={"X": [1.0], "t": 1.0}, r=0.5), domain)
    assert ball == CylinderTarget(SpaceTimePoint((1.0,), 1.0), 0.5, 0.25)
    complement = target_from_spec(TargetSpec(kind="complement", of=TargetSpec(kind="bottom")), domain)
    assert complement == Complement(Bottom())
    with pytest.raises(ParameterError):
        target_from_spec(TargetSpec(kind="obstacles", obstacles=[3]), domain)
    with pytest.raises(ParameterError):
        target_from_spec(TargetSpec(kind="complement"), domain)
    with pytest.raises(ParameterError):
        target_from_spec(TargetSpec(kind="cross-section"), domain)


def test_cube_container_from_spec():
    domain = domain_from_spec(DomainSpec(container=ContainerSpec(kind="cube", cube="3:1:1,4")))
    assert domain.container == BoxContainer.from_cube(ParabolicCube(3, 1, (1, 4)))
    assert domain.container.lo == pytest.approx((1 / 3,))
    assert (domain.container.t_lo, domain.container.t_hi) == pytest.approx((4 / 9, 5 / 9))
