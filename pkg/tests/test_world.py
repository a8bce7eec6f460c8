import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from huauv.dynamics import VehicleState
from huauv.world import (
    DEFAULT_BOUNDS,
    Obstacle,
    ScenarioGenerationError,
    World,
    generate_scenario,
    in_transition_zone,
    is_free,
    sense,
    trajectory_free,
)

coord = st.floats(-9.5, 9.5, allow_nan=False)


def known_world(*obstacles, **kw):
    return World(obstacles_all=tuple(obstacles), obstacles_known=frozenset(range(len(obstacles))), **kw)


def test_default_geometry():
    w = World()
    assert w.bounds == DEFAULT_BOUNDS
    b = w.bounds_array
    np.testing.assert_array_equal(b[:, 1] - b[:, 0], (20, 20, 15))
    assert b[2, 0] == -5.0 and w.mu == 0.8 and w.sense_radius == 3.0


def test_world_validation():
    with pytest.raises(ValueError):
        World(mu=0.0)
    with pytest.raises(ValueError):
        World(sense_radius=0.3, vehicle_radius=0.4)
    with pytest.raises(ValueError):
        World(obstacles_all=(Obstacle((20, 0, 0), 1.0),))
    with pytest.raises(ValueError):
        World(obstacles_known=frozenset({0}))
    with pytest.raises(ValueError):
        Obstacle((0, 0, 0), 0.0)


# -- generation ------------------------------------------------------------------


def test_generate_examples():
    assert generate_scenario(1, 0) == []
    assert generate_scenario(7, 20) == generate_scenario(7, 20)
    assert generate_scenario(7, 20) != generate_scenario(8, 20)


def test_generated_spheres_avoid_start_and_goal():
    keep = [(-9, -9, 8), (9, 9, -3)]
    for seed in range(30):
        obs = generate_scenario(seed, 20, keep_clear=keep)
        assert len(obs) == 20
        b = np.array(DEFAULT_BOUNDS)
        for o in obs:
            assert 0.5 <= o.radius <= 1.5
            assert np.all(np.array(o.center) >= b[:, 0]) and np.all(np.array(o.center) <= b[:, 1])
            for p in keep:
                assert o.surface_distance(p) > 0.4 + 0.5


def test_generation_gives_up():
    with pytest.raises(ScenarioGenerationError):
        generate_scenario(0, 5, bounds=((-1, 1), (-1, 1), (-1, 1)), keep_clear=[(0, 0, 0)])
    with pytest.raises(ValueError):
        generate_scenario(0, -1)


# -- point and trajectory queries ------------------------------------------------


def test_is_free_examples():
    w = known_world(Obstacle((0, 0, 0), 1.0))
    assert is_free((0, 0, 2), w)
    assert not is_free((0, 0, 1.2), w)
    assert not is_free((0, 0, 11), w)


def test_only_known_obstacles_block():
    w = World(obstacles_all=(Obstacle((0, 0, 0), 1.0),))
    assert is_free((0, 0, 0.5), w)
    assert not is_free((0, 0, 0.5), w.with_all_known())


def test_trajectory_free_examples():
    w = known_world(Obstacle((0, 0, 5), 0.3))
    assert trajectory_free([(5, 5, 5), (5, 6, 5)], w)
    # endpoints straddle the sphere; only the midpoint lands inside
    assert not trajectory_free([(-0.8, 0, 5), (0.8, 0, 5)], w)
    assert trajectory_free([(-8, 0, 5), (8, 0, 5)], World())
    states = [VehicleState.at((3, 3, 3)), VehicleState.at((3, 3, 3.1))]
    assert trajectory_free(states, w)
    assert trajectory_free(np.array([[3, 3, 3] + [0] * 9]), w)
    with pytest.raises(ValueError):
        trajectory_free([], w)


@given(coord, coord, coord)
def test_soundness(x, y, z):
    z = float(np.clip(z, -4.5, 9.5))
    w = known_world(Obstacle((0, 0, 2), 1.2))
    inside = np.linalg.norm(np.array([x, y, z]) - (0, 0, 2)) <= 1.6
    pts = [(x, y, z), (9, 9, 9)]
    if inside:
        assert not trajectory_free(pts, w)
        assert not is_free((x, y, z), w)
    else:
        assert is_free((x, y, z), w)


# -- sensing ------------------------------------------------------------------------


def test_sense_examples():
    w = World(obstacles_all=(Obstacle((3.5, 0, 5), 1.0), Obstacle((-5.5, 0, 5), 1.0)))
    seen = sense((0, 0, 5), w)
    assert seen.obstacles_known == {0}  # surface at 2.5 m, the other at 4.5 m
    assert sense((0, 0, 5), seen) is seen


def test_sense_boundary_of_radius():
    w = World(obstacles_all=(Obstacle((4.5, 0, 5), 1.0),))
    assert sense((0, 0, 5), w).obstacles_known == frozenset()
    w = World(obstacles_all=(Obstacle((4.0, 0, 5), 1.0),))
    assert sense((0, 0, 5), w).obstacles_known == {0}


@given(st.lists(st.tuples(coord, coord, coord), min_size=1, max_size=15))
def test_knowledge_is_monotone(path):
    w = World(obstacles_all=tuple(generate_scenario(3, 20)))
    count = 0
    for p in path:
        nxt = sense(p, w)
        assert w.obstacles_known <= nxt.obstacles_known
        assert nxt.obstacles_known <= set(range(20))
        assert len(nxt.obstacles_known) >= count
        count = len(nxt.obstacles_known)
        w = nxt


def test_transition_zone():
    assert in_transition_zone(0.0, 0.8)
    assert in_transition_zone(-0.8, 0.8)
    assert not in_transition_zone(0.81, 0.8)
    with pytest.raises(ValueError):
        in_transition_zone(0.0, -1.0)

