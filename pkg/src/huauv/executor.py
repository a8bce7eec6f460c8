"""Receding-horizon execution loop around the closed-loop RRT.

Each tick the vehicle senses, predicts where the committed chunk will leave
it, grows the tree from that predicted state, picks the best safe branch,
re-checks it by propagation and commits its first chunk.  Without a usable
branch it falls back to a hold (or to leaving the band when inside it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control import DT, MEM_SIZE, GainSet, ReferenceCommand, Rollout
from .dynamics import Medium, VehicleState, medium_of
from .params import VehicleModel
from .planner import Planner, PlannerConfig, PropagationError, Tree, TreeNode
from .world import World, positions_free, sense

EVENTS = ("plan", "replan", "safety", "transition-enter", "transition-exit", "goal")


@dataclass(frozen=True)
class ExecutorConfig:
    period: float = 1.0  # [s]
    budget: int = 200  # expansion attempts per tick
    goal_radius: float = 0.5  # [m]
    max_time: float = 300.0  # [s]
    perturb: bool = False
    perturb_mass: float = 1.05
    perturb_drag: float = 0.95

    def __post_init__(self):
        for name in ("period", "goal_radius", "max_time", "perturb_mass", "perturb_drag"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.budget < 1:
            raise ValueError("budget must be positive")


@dataclass(frozen=True)
class TickRecord:
    t: float
    state: np.ndarray
    reference: np.ndarray  # reference committed for the next period
    medium: Medium
    events: tuple[str, ...]


@dataclass(frozen=True)
class MissionSummary:
    success: bool
    elapsed_time: float
    path_length: float
    transition_count: int
    time_in_air: float
    time_in_water: float
    ticks: int
    replans: int
    safety_actions: int


@dataclass
class MissionLog:
    records: list[TickRecord] = field(default_factory=list)
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    states: np.ndarray = field(default_factory=lambda: np.empty((0, 12)))
    references: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))
    planned: np.ndarray = field(default_factory=lambda: np.empty((0, 12)))
    transitions: list[dict] = field(default_factory=list)
    summary: MissionSummary | None = None
    world: World | None = None
    tree: Tree | None = None

    def events(self) -> list[tuple[float, str]]:
        return [(r.t, e) for r in self.records for e in r.events]

    def count(self, event: str) -> int:
        return sum(e == event for _, e in self.events())


def _goal_distance(x, goal: ReferenceCommand) -> float:
    return float(np.linalg.norm(np.asarray(x)[:3] - goal.position))


def safety_action(state, mu: float, overshoot: float = 1.25) -> ReferenceCommand:
    """Hold the current pose; inside the band, finish the crossing instead."""
    x = state.to_array() if isinstance(state, VehicleState) else np.asarray(state, dtype=float)
    if abs(x[2]) > mu:
        return ReferenceCommand(x[0], x[1], x[2], x[5])
    if x[8] < 0.0:
        side = -1.0
    elif x[8] > 0.0:
        side = 1.0
    else:
        side = 1.0 if x[2] >= 0.0 else -1.0
    return ReferenceCommand(x[0], x[1], side * overshoot * mu, x[5])


def select_best(tree: Tree, goal: ReferenceCommand) -> list[TreeNode] | None:
    """Root-to-node chain of the safe non-root node closest to the goal."""
    best = None
    for nid in sorted(tree.nodes):
        node = tree.nodes[nid]
        if nid == tree.root_id or not node.safe:
            continue
        if best is None or node.cost_to_go < best.cost_to_go:
            best = node
    return None if best is None else tree.path_to(best.id)


def _validate(planner: Planner, path, x0, mem0, world: World):
    """Re-propagate ``path[1:]``; returns (index of the first bad node or None, chunks)."""
    obstacles = world.known_array()
    x = np.asarray(x0, dtype=float)
    mem = np.zeros(MEM_SIZE) if mem0 is None else np.asarray(mem0, dtype=float)
    chunks = []
    for i, node in enumerate(path[1:], start=1):
        try:
            states, mem = planner.propagate_segment(x, node.ref_segment, mem)
        except PropagationError:
            return i, chunks
        if not planner.chunk_ok(states, world, obstacles):
            return i, chunks
        chunks.append((states, mem))
        x = states[-1]
    return None, chunks


def validate_path(path, committed_state, world: World, memory=None, planner: Planner | None = None) -> bool:
    """Closed-loop re-propagation of the path's references from ``committed_state``.

    True iff every chunk stays free of known obstacles and satisfies the
    in-band speed and tilt bounds.
    """
    if not path:
        raise ValueError("path must be non-empty")
    x0 = committed_state.to_array() if isinstance(committed_state, VehicleState) else committed_state
    bad, _ = _validate(planner or Planner(), path, x0, memory, world)
    return bad is None


def prune(tree: Tree, world: World) -> list[int]:
    """Drop every node whose predicted states hit a known obstacle, with its subtree."""
    obstacles = world.known_array()
    bounds = world.bounds_array
    doomed = []
    for nid in sorted(tree.nodes):
        if nid == tree.root_id:
            continue
        states = tree.nodes[nid].predicted_states
        if not positions_free(np.ascontiguousarray(states[:, :3]), obstacles, world.vehicle_radius, bounds):
            doomed.append(nid)
    removed = []
    for nid in doomed:
        if nid in tree.nodes:
            removed += tree.descendants(nid)
            tree.remove_subtree(nid)
    return removed


def _band_events(states: np.ndarray, mu: float, inside: bool):
    """Band entries and exits along ``states`` as ``(name, index, side)``, plus the final inside flag."""
    events = []
    for k in range(1, states.shape[0]):
        now = abs(states[k, 2]) <= mu
        if now and not inside:
            events.append(("transition-enter", k, math.copysign(1.0, states[k - 1, 2])))
        elif inside and not now:
            events.append(("transition-exit", k, math.copysign(1.0, states[k, 2])))
        inside = now
    return events, inside


def run_mission(scenario) -> MissionLog:
    """Execute one mission.

    ``scenario`` needs ``world``, ``start`` (VehicleState), ``goal``
    (ReferenceCommand), ``gains``, ``model``, ``executor``, ``planner`` and
    ``seed`` attributes, as provided by :class:`huauv.scenario.Scenario`.
    """
    cfg: ExecutorConfig = scenario.executor
    pcfg: PlannerConfig = scenario.planner
    if abs(cfg.period - pcfg.period) > 1e-12:
        raise ValueError("executor and planner periods must agree")
    gains: GainSet = scenario.gains
    model: VehicleModel = scenario.model
    goal: ReferenceCommand = scenario.goal
    world: World = scenario.world
    mu = world.mu
    dt = pcfg.dt
    steps = pcfg.steps

    planner = Planner(gains, model, pcfg)
    truth_model = model.perturbed(cfg.perturb_mass, cfg.perturb_drag) if cfg.perturb else model
    vehicle = Rollout(gains, truth_model, dt)
    rng = np.random.default_rng(scenario.seed)

    x = scenario.start.to_array()
    mem = np.zeros(MEM_SIZE)
    hold = safety_action(x, mu, pcfg.overshoot)
    committed = np.tile(hold.to_array(), (steps, 1))
    tree = Tree(x, hold, memory=mem, goal=goal)

    log = MissionLog()
    times, states, refs, planned = [0.0], [x.copy()], [hold.to_array()], [x.copy()]
    t = 0.0
    tick = 0
    inside = abs(x[2]) <= mu
    entry_side = math.copysign(1.0, x[2])
    entry_time = 0.0
    expected_next: int | None = None
    success = False
    replans = safety_count = 0
    pending: list[str] = []

    while True:
        world = sense(x[:3], world)
        if _goal_distance(x, goal) <= cfg.goal_radius:
            success = True
            log.records.append(TickRecord(t, x.copy(), committed[0].copy(), medium_of(x[2], mu), tuple(pending + ["goal"])))
            break
        if t >= cfg.max_time - 1e-9:
            log.records.append(TickRecord(t, x.copy(), committed[0].copy(), medium_of(x[2], mu), tuple(pending)))
            break

        # where the committed chunk leaves the vehicle, under the planning model
        pred, mem_pred = planner.propagate_segment(x, committed, mem)
        x_pred = pred[-1]
        tree.update_root(pred, mem_pred, goal, mu)

        prune(tree, world)
        planner.expand(tree, world, goal, rng, cfg.budget)

        events = pending
        pending = []
        replanned = False
        path = select_best(tree, goal)
        while path is not None:
            bad, chunks = _validate(planner, path, x_pred, mem_pred, world)
            if bad is None:
                for node, (st, mm) in zip(path[1:], chunks):
                    node.predicted_states, node.memory = st, mm
                break
            tree.remove_subtree(path[bad].id)
            replanned = True
            path = select_best(tree, goal)

        if path is not None:
            nxt = path[1]
            next_refs = nxt.ref_segment
            if replanned or (expected_next is not None and nxt.id != expected_next):
                events.append("replan")
                replans += 1
            else:
                events.append("plan")
            expected_next = path[2].id if len(path) > 2 else None
            tree.reroot(nxt.id)
        else:
            ref = safety_action(x_pred, mu, pcfg.overshoot)
            next_refs = np.tile(ref.to_array(), (steps, 1))
            tree.set_root_reference(ref)
            events.append("safety")
            safety_count += 1
            expected_next = None

        # the real vehicle flies the chunk committed on the previous tick
        executed, _, mem, ok = vehicle(x, mem, committed)
        if not ok:
            log.records.append(TickRecord(t, x.copy(), committed[0].copy(), medium_of(x[2], mu), tuple(events)))
            break
        band, inside_now = _band_events(executed, mu, inside)
        for name, k, side in band:
            if name == "transition-enter":
                entry_side, entry_time = side, t + k * dt
            elif side != entry_side:
                log.transitions.append(
                    {"enter": entry_time, "exit": t + k * dt, "from": _side_name(entry_side), "to": _side_name(side)}
                )
            events.append(name)
        inside = inside_now
        for k in range(1, steps + 1):
            times.append((tick * steps + k) * dt)
        states.extend(executed[1:])
        refs.extend(committed)
        planned.extend(pred[1:])

        log.records.append(TickRecord(t, x.copy(), next_refs[-1].copy(), medium_of(x[2], mu), tuple(events)))
        x = executed[-1]
        committed = next_refs
        tick += 1
        t = tick * cfg.period

    log.times = np.array(times)
    log.states = np.array(states)
    log.references = np.array(refs)
    log.planned = np.array(planned)
    log.world = world
    log.tree = tree
    z = log.states[:, 2]
    steps_xyz = np.linalg.norm(np.diff(log.states[:, :3], axis=0), axis=1)
    log.summary = MissionSummary(
        success=success,
        elapsed_time=t,
        path_length=float(steps_xyz.sum()),
        transition_count=len(log.transitions),
        time_in_air=float(np.count_nonzero(z[1:] > 0) * dt),
        time_in_water=float(np.count_nonzero(z[1:] <= 0) * dt),
        ticks=tick,
        replans=replans,
        safety_actions=safety_count,
    )
    return log


def _side_name(side: float) -> str:
    return "air" if side > 0 else "water"
