from dataclasses import replace

import numpy as np
import pytest

from huauv.control import MEM_SIZE, GainSet, ReferenceCommand, underwater_surge_law
from huauv.dynamics import VehicleState
from huauv.executor import (
    EVENTS,
    ExecutorConfig,
    prune,
    run_mission,
    safety_action,
    select_best,
    validate_path,
)
from huauv.planner import Planner, Tree, band_smooth
from huauv.scenario import ObstacleSpec, Scenario, StartSpec
from huauv.world import Obstacle, World, trajectory_free

MU = 0.8


def hover(x, y, z, yaw=0.0):
    return VehicleState.at((x, y, z), yaw).to_array()


def scenario(start, goal, obstacles=(), **kw):
    return Scenario(
        name="t",
        start_spec=StartSpec(tuple(start)),
        goal=ReferenceCommand(*goal),
        obstacles=ObstacleSpec(explicit=tuple(obstacles)),
        **kw,
    )


def _leaf(tree, parent, p, safe=True, goal=None):
    states = np.tile(hover(*p), (3, 1))
    return tree.add_node(parent, np.tile([*p, 0.0], (2, 1)), states, np.zeros(MEM_SIZE), goal=goal, safe=safe)


# -- best path ---------------------------------------------------------------------


def test_select_best_examples():
    goal = ReferenceCommand(0, 0, 5)
    tree = Tree(hover(0, 0, 9), goal=goal)
    far = _leaf(tree, 0, (5, 0, 5), goal=goal)
    near = _leaf(tree, 0, (2, 0, 5), goal=goal)
    assert [n.id for n in select_best(tree, goal)] == [0, near]
    tree.nodes[near].safe = False
    assert [n.id for n in select_best(tree, goal)] == [0, far]
    tree.nodes[far].safe = False
    assert select_best(tree, goal) is None
    assert select_best(Tree(hover(0, 0, 5)), goal) is None


def test_select_best_tie_goes_to_lower_id():
    goal = ReferenceCommand(0, 0, 5)
    tree = Tree(hover(0, 0, 9), goal=goal)
    a = _leaf(tree, 0, (2, 0, 5), goal=goal)
    _leaf(tree, 0, (-2, 0, 5), goal=goal)
    assert select_best(tree, goal)[-1].id == a


# -- safety action ---------------------------------------------------------------


def test_safety_action_examples():
    x = hover(1, 2, 5, yaw=0.3)
    assert safety_action(x, MU) == ReferenceCommand(1, 2, 5, 0.3)
    water = hover(1, 2, -3, yaw=-0.5)
    ref = safety_action(water, MU)
    assert ref == ReferenceCommand(1, 2, -3, -0.5)
    # station keeping: zero distance leaves only the heading term of the surge law
    g = GainSet()
    assert underwater_surge_law(water, ref, g) == pytest.approx(g.surge_alpha * 0.0)
    descending = hover(0, 0, 0.3)
    descending[8] = -0.2
    assert safety_action(descending, MU).z == pytest.approx(-1.25 * MU)
    rising = hover(0, 0, -0.3)
    rising[8] = 0.1
    assert safety_action(rising, MU).z == pytest.approx(1.25 * MU)
    assert safety_action(hover(0, 0, 0.2), MU).z == pytest.approx(1.25 * MU)


# -- validation and pruning ------------------------------------------------------


def _crossing_path():
    planner = Planner()
    goal = ReferenceCommand(0, 0, -2.5)
    tree = Tree(hover(0, 0, 1.5), goal=goal)
    planner.expand(tree, World(), goal, np.random.default_rng(0), 40)
    leaf = min((n for n in tree.nodes.values() if n.end_array[2] < -MU), key=lambda n: n.id)
    path = tree.path_to(leaf.id)
    assert any(n.transition for n in path)
    return tree, path


def test_validate_path_examples():
    tree, path = _crossing_path()
    x0 = tree.root.end_array
    assert validate_path(path, x0, World())
    # an obstacle sensed since planning blocks the crossing
    states = np.vstack([n.predicted_states for n in path[1:]])
    surface = states[np.argmin(np.abs(states[:, 2])), :3]
    blocked = World(obstacles_all=(Obstacle(surface, 0.3),), obstacles_known=frozenset({0}))
    assert not validate_path(path, x0, blocked)
    # from the node just before the vertical phase, a sliding committed state
    # carries lateral speed into the band
    k = next(i for i, n in enumerate(path) if n.transition) - 1
    assert validate_path(path[k:], path[k].end_array, World(), memory=path[k].memory)
    sliding = path[k].end_array.copy()
    sliding[6] = 1.0
    assert not validate_path(path[k:], sliding, World(), memory=path[k].memory)
    with pytest.raises(ValueError):
        validate_path([], x0, World())


def test_prune_examples():
    goal = ReferenceCommand(6, 0, 5)
    tree = Tree(hover(0, 0, 5), goal=goal)
    a = _leaf(tree, 0, (2, 0, 5), goal=goal)
    b = _leaf(tree, a, (4, 0, 5), goal=goal)
    c = _leaf(tree, 0, (0, 3, 5), goal=goal)
    assert prune(tree, World()) == [] and len(tree) == 4
    over_a = World(obstacles_all=(Obstacle((2, 0, 5), 0.5), Obstacle((0, 0, 5), 0.5)), obstacles_known=frozenset({0, 1}))
    removed = prune(tree, over_a)
    assert sorted(removed) == sorted([a, b])
    assert set(tree.nodes) == {0, c}


# -- missions ----------------------------------------------------------------------


def _check_log_invariants(log, s):
    ticks = [r.t for r in log.records]
    assert np.allclose(np.diff(ticks), s.executor.period)
    assert log.count("goal") == (1 if log.summary.success else 0)
    for r in log.records[:-1]:
        assert {"plan", "replan", "safety"} & set(r.events)
        assert set(r.events) <= set(EVENTS)
    assert np.all(np.diff(log.times) > 0)
    assert len(log.times) == len(log.states) == len(log.references) == len(log.planned)
    assert trajectory_free(log.states, s.world.with_all_known())
    assert band_smooth(log.states, MU, 0.05, np.radians(2.0))
    if log.summary.success:
        assert np.linalg.norm(log.states[-1, :3] - s.goal.position) <= s.executor.goal_radius


def test_goal_equal_to_start():
    s = scenario((1, 1, 5), (1, 1, 5))
    log = run_mission(s)
    assert log.summary.success and log.summary.elapsed_time == 0.0 and log.summary.path_length == 0.0
    assert log.events() == [(0.0, "goal")]


def test_air_to_air_in_empty_world():
    s = scenario((0, 0, 5), (5, 0, 5))
    log = run_mission(s)
    assert log.summary.success
    assert log.summary.path_length >= 5.0
    assert log.summary.transition_count == 0 and log.summary.time_in_water == 0.0
    _check_log_invariants(log, s)


def test_crossing_mission_logs_transition():
    s = scenario((0, 0, 3), (2, 1, -2.5))
    log = run_mission(s)
    assert log.summary.success and log.summary.transition_count == 1
    assert log.transitions[0]["from"] == "air" and log.transitions[0]["to"] == "water"
    assert log.count("transition-enter") == log.count("transition-exit") == 1
    assert log.summary.time_in_air > 0 and log.summary.time_in_water > 0
    _check_log_invariants(log, s)


def test_mission_is_deterministic():
    s = scenario((0, 0, 3), (3, -2, 6))
    a, b = run_mission(s), run_mission(s)
    assert a.states.tobytes() == b.states.tobytes()
    assert a.events() == b.events()


def test_unreachable_goal_times_out():
    s = scenario((0, 0, 5), (4, 0, 5), obstacles=[Obstacle((4, 0, 5), 1.0)],
                 executor=ExecutorConfig(max_time=8.0))
    log = run_mission(s)
    assert not log.summary.success
    assert log.summary.elapsed_time == pytest.approx(8.0)
    _check_log_invariants(log, s)


def test_hidden_obstacle_is_sensed_and_avoided():
    wall = Obstacle((3, 0, 5), 1.0)
    s = scenario((0, 0, 5), (6, 0, 5), obstacles=[wall])
    log = run_mission(s)
    assert log.summary.success
    assert 0 in log.world.obstacles_known
    _check_log_invariants(log, s)


def test_perturbed_vehicle_still_arrives():
    s = scenario((0, 0, 5), (4, 3, 6))
    s = replace(s, executor=replace(s.executor, perturb=True))
    log = run_mission(s)
    assert log.summary.success
    _check_log_invariants(log, s)


def test_executor_config_validation():
    with pytest.raises(ValueError):
        ExecutorConfig(budget=0)
    with pytest.raises(ValueError):
        ExecutorConfig(goal_radius=0.0)
