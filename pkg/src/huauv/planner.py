"""Closed-loop RRT over both media.

Every tree edge is a reference chunk of one period ``T`` together with the
states the closed loop produces when it tracks that chunk.  Crossing the
water surface goes through a dedicated manoeuvre: settle above (or below) the
crossing point, move vertically through the band, then carry on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .control import DT, MEM_SIZE, GainSet, ReferenceCommand, Rollout
from .dynamics import Medium, VehicleState, wrap_angle
from .params import VehicleModel
from .world import World, positions_free


@dataclass(frozen=True)
class PlannerConfig:
    period: float = 1.0  # [s], one node per period
    dt: float = DT
    v_ref_air: float = 1.0  # [m/s]
    v_ref_water: float = 0.4  # [m/s]
    v_vertical: float = 0.4  # [m/s] while crossing the band
    goal_bias: float = 0.1
    k_nearest: int = 5
    v_lat_max: float = 0.05  # [m/s] inside the band
    tilt_max_band: float = math.radians(2.0)
    overshoot: float = 1.25  # crossing references end at overshoot * mu
    stop_horizon: float = 2.0  # [s] hold used to certify a node as safe
    settle_speed: float = 0.01  # [m/s] lateral speed before the vertical phase
    settle_tilt: float = math.radians(0.5)
    settle_max: float = 15.0  # [s]

    def __post_init__(self):
        for name in ("period", "dt", "v_ref_air", "v_ref_water", "v_vertical", "stop_horizon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must lie in [0, 1]")
        if self.k_nearest < 1:
            raise ValueError("k_nearest must be at least 1")
        if self.overshoot <= 1.0:
            raise ValueError("overshoot must exceed 1 so crossings end outside the band")

    @property
    def steps(self) -> int:
        return int(round(self.period / self.dt))

    def v_ref(self, z: float) -> float:
        return self.v_ref_air if z > 0 else self.v_ref_water


class PropagationError(RuntimeError):
    pass


@dataclass
class TreeNode:
    id: int
    parent: int | None
    ref_end: ReferenceCommand
    ref_segment: np.ndarray  # (steps, 4)
    predicted_states: np.ndarray  # (steps + 1, 12), first row is the parent's end state
    memory: np.ndarray
    medium_tag: Medium
    safe: bool
    cost_to_go: float
    path_cost: float
    transition: bool = False  # chunk belongs to a band crossing
    expandable: bool = True

    @property
    def end_state(self) -> VehicleState:
        return VehicleState.from_array(self.predicted_states[-1])

    @property
    def end_array(self) -> np.ndarray:
        return self.predicted_states[-1]


def _tag(z: float) -> Medium:
    return Medium.AIR if z > 0 else Medium.WATER


class Tree:
    """Node store with a brute-force nearest-neighbour index on reference ends."""

    def __init__(self, root_state, root_ref: ReferenceCommand | None = None, memory=None, goal=None):
        x = np.asarray(root_state.to_array() if isinstance(root_state, VehicleState) else root_state, dtype=float)
        ref = root_ref or ReferenceCommand(x[0], x[1], x[2], x[5])
        self.nodes: dict[int, TreeNode] = {}
        self.children: dict[int, list[int]] = {}
        self._next_id = 0
        self._ids: list[int] = []
        self._buf = np.empty((64, 3))
        self.root_id = self._insert(
            parent=None,
            ref_segment=np.empty((0, 4)),
            states=x.reshape(1, 12),
            memory=np.zeros(MEM_SIZE) if memory is None else np.asarray(memory, dtype=float),
            ref_end=ref,
            goal=goal,
            safe=True,
        )

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.nodes

    @property
    def root(self) -> TreeNode:
        return self.nodes[self.root_id]

    def _insert(self, parent, ref_segment, states, memory, ref_end, goal, safe, transition=False, expandable=True):
        nid = self._next_id
        self._next_id += 1
        end = states[-1]
        path_cost = 0.0
        if parent is not None:
            steps = np.linalg.norm(np.diff(states[:, :3], axis=0), axis=1).sum()
            path_cost = self.nodes[parent].path_cost + float(steps)
        node = TreeNode(
            id=nid,
            parent=parent,
            ref_end=ref_end,
            ref_segment=ref_segment,
            predicted_states=states,
            memory=memory,
            medium_tag=_tag(end[2]),
            safe=safe,
            cost_to_go=0.0 if goal is None else float(np.linalg.norm(end[:3] - goal.position)),
            path_cost=path_cost,
            transition=transition,
            expandable=expandable,
        )
        self.nodes[nid] = node
        self.children[nid] = []
        if parent is not None:
            self.children[parent].append(nid)
        self._ids.append(nid)
        if len(self._ids) > self._buf.shape[0]:
            self._buf = np.concatenate([self._buf, np.empty_like(self._buf)])
        self._buf[len(self._ids) - 1] = ref_end.position
        return nid

    def add_node(self, parent: int, ref_segment, states, memory, goal=None, safe=True, transition=False, expandable=True) -> int:
        if parent not in self.nodes:
            raise KeyError(f"unknown parent {parent}")
        ref_end = ReferenceCommand.from_array(ref_segment[-1])
        return self._insert(parent, ref_segment, states, memory, ref_end, goal, safe, transition, expandable)

    def path_to(self, node_id: int) -> list[TreeNode]:
        chain = []
        nid: int | None = node_id
        while nid is not None:
            node = self.nodes[nid]
            chain.append(node)
            nid = node.parent
        return chain[::-1]

    def descendants(self, node_id: int) -> list[int]:
        out, stack = [], [node_id]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(self.children[nid])
        return out

    def remove_subtree(self, node_id: int) -> None:
        if node_id == self.root_id:
            raise ValueError("the root cannot be removed")
        doomed = self.descendants(node_id)
        parent = self.nodes[node_id].parent
        self.children[parent].remove(node_id)
        for nid in doomed:
            del self.nodes[nid]
            del self.children[nid]
        self._reindex()

    def reroot(self, node_id: int) -> None:
        """Keep only the subtree under ``node_id``, which becomes the root."""
        keep = set(self.descendants(node_id))
        for nid in [n for n in self.nodes if n not in keep]:
            del self.nodes[nid]
            del self.children[nid]
        root = self.nodes[node_id]
        root.parent = None
        root.transition = False
        self.root_id = node_id
        self._reindex()

    def update_root(self, states, memory, goal: ReferenceCommand | None, mu: float) -> None:
        """Replace the root's predicted chunk, e.g. with a fresh prediction."""
        root = self.root
        root.predicted_states = np.asarray(states, dtype=float).reshape(-1, 12)
        root.memory = np.asarray(memory, dtype=float)
        end = root.end_array
        root.medium_tag = _tag(end[2])
        root.cost_to_go = 0.0 if goal is None else float(np.linalg.norm(end[:3] - goal.position))
        root.expandable = bool(abs(end[2]) > mu and abs(root.ref_end.z) > mu)

    def set_root_reference(self, ref: ReferenceCommand) -> None:
        self.root.ref_end = ref
        self._reindex()

    def _reindex(self) -> None:
        self._ids = sorted(self.nodes)
        self._buf = np.empty((max(64, 2 * len(self._ids)), 3))
        for k, i in enumerate(self._ids):
            self._buf[k] = self.nodes[i].ref_end.position

    def sorted_by_distance(self, point) -> list[int]:
        d = np.linalg.norm(self._buf[: len(self._ids)] - np.asarray(point, dtype=float), axis=1)
        order = np.lexsort((np.array(self._ids), d))
        return [self._ids[i] for i in order]

    def dump(self, trajectories: bool = True) -> dict:
        """Plain data for plotting: nodes, edges, media tags and safety flags.

        With ``trajectories`` each node also carries every tenth predicted position.
        """
        nodes = []
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            entry = {
                "id": nid,
                "parent": n.parent,
                "ref_end": [float(v) for v in n.ref_end.to_array()],
                "end_position": n.end_array[:3].tolist(),
                "medium": n.medium_tag.value,
                "safe": bool(n.safe),
                "transition": bool(n.transition),
                "cost_to_go": float(n.cost_to_go),
                "path_cost": float(n.path_cost),
            }
            if trajectories:
                entry["trajectory"] = n.predicted_states[::10, :3].tolist()
            nodes.append(entry)
        edges = [[n.parent, n.id] for n in self.nodes.values() if n.parent is not None]
        return {"root": self.root_id, "nodes": nodes, "edges": sorted(edges)}


# ---------------------------------------------------------------------------
# Sampling and steering
# ---------------------------------------------------------------------------


def sample_reference(world: World, goal: ReferenceCommand, bias: float, rng: np.random.Generator) -> ReferenceCommand:
    if not 0.0 <= bias <= 1.0:
        raise ValueError("bias must lie in [0, 1]")
    if rng.random() < bias:
        return goal
    b = world.bounds_array
    x, y = rng.uniform(b[:2, 0], b[:2, 1])
    z = rng.uniform(b[2, 0], b[2, 1])
    while abs(z) <= world.mu:
        z = rng.uniform(b[2, 0], b[2, 1])
    psi = math.pi - rng.uniform(0.0, 2.0 * math.pi)
    return ReferenceCommand(float(x), float(y), float(z), psi)


def sort_candidate_nodes(tree: Tree, sample: ReferenceCommand) -> list[TreeNode]:
    return [tree.nodes[i] for i in tree.sorted_by_distance(sample.position)]


def connect_reference(frm: ReferenceCommand, to: ReferenceCommand, T: float, v_ref: float = 1.0, dt: float = DT) -> np.ndarray:
    """Straight-line reference chunk of duration ``T`` sampled at ``dt``.

    The position advances at ``v_ref`` and stops after ``v_ref * T`` or at
    ``to``, whichever comes first.  Yaw turns toward the bearing of travel;
    when the chunk reaches ``to`` it turns to ``to``'s yaw instead.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if not v_ref > 0:
        raise ValueError("v_ref must be positive")
    n = int(round(T / dt))
    a, b = frm.position, to.position
    delta = b - a
    length = float(np.linalg.norm(delta))
    reach = v_ref * T
    if length <= reach:
        travel = length
        psi_end = to.psi
    else:
        travel = reach
        psi_end = math.atan2(delta[1], delta[0]) if math.hypot(delta[0], delta[1]) > 1e-9 else frm.psi
    direction = delta / length if length > 0 else np.zeros(3)
    t = np.arange(1, n + 1) * dt
    s = np.minimum(v_ref * t, travel)
    refs = np.empty((n, 4))
    refs[:, :3] = a + np.outer(s, direction)
    frac = np.minimum(t / T, 1.0)
    turn = wrap_angle(psi_end - frm.psi)
    refs[:, 3] = [wrap_angle(frm.psi + turn * f) for f in frac]
    if travel == length:
        refs[-1, :3] = b
    return refs


@njit(cache=True)
def band_smooth(states, mu, v_lat_max, tilt_max):
    """Lateral speed and tilt bounds for every state inside the band."""
    for k in range(states.shape[0]):
        if abs(states[k, 2]) <= mu:
            if abs(states[k, 6]) > v_lat_max or abs(states[k, 7]) > v_lat_max:
                return False
            if abs(states[k, 3]) > tilt_max or abs(states[k, 4]) > tilt_max:
                return False
    return True


def cost_to_go(node, goal: ReferenceCommand) -> float:
    x = node.end_array if isinstance(node, TreeNode) else np.asarray(node.to_array() if isinstance(node, VehicleState) else node)
    return float(np.linalg.norm(x[:3] - goal.position))


# ---------------------------------------------------------------------------
# Planner
# ---------------------------------------------------------------------------


@dataclass
class Chunk:
    refs: np.ndarray
    states: np.ndarray
    memory: np.ndarray
    transition: bool = False


class Planner:
    """Holds the fixed ingredients of expansion: closed loop, world checks, config."""

    def __init__(self, gains: GainSet | None = None, model: VehicleModel | None = None, config: PlannerConfig | None = None):
        self.config = config or PlannerConfig()
        self.rollout = Rollout(gains or GainSet(), model or VehicleModel(), self.config.dt)

    # -- propagation -----------------------------------------------------

    def propagate_segment(self, start_state, ref_segment, memory=None) -> tuple[np.ndarray, np.ndarray]:
        """Closed-loop states over the chunk (first row is the start) and the final memory."""
        x0 = start_state.to_array() if isinstance(start_state, VehicleState) else np.asarray(start_state, dtype=float)
        if not np.all(np.isfinite(x0)):
            raise PropagationError("start state is not finite")
        mem = np.zeros(MEM_SIZE) if memory is None else np.asarray(memory, dtype=float)
        states, _, mem_out, ok = self.rollout(x0, mem, ref_segment)
        if not ok:
            raise PropagationError("closed-loop propagation diverged")
        return states, mem_out

    def _try(self, x0, mem, refs):
        try:
            return self.propagate_segment(x0, refs, mem)
        except PropagationError:
            return None

    def chunk_ok(self, states: np.ndarray, world: World, obstacles: np.ndarray) -> bool:
        c = self.config
        if not positions_free(np.ascontiguousarray(states[:, :3]), obstacles, world.vehicle_radius, world.bounds_array):
            return False
        return bool(band_smooth(states, world.mu, c.v_lat_max, c.tilt_max_band))

    def stoppable(self, x_end, mem, ref_end: np.ndarray, world: World, obstacles: np.ndarray) -> bool:
        """A hold on ``ref_end`` stays free (and out of the band) for the stop horizon."""
        if abs(x_end[2]) <= world.mu or abs(ref_end[2]) <= world.mu:
            return False
        n = int(round(self.config.stop_horizon / self.config.dt))
        out = self._try(x_end, mem, np.tile(ref_end, (n, 1)))
        return out is not None and self.chunk_ok(out[0], world, obstacles)

    # -- steering --------------------------------------------------------

    def steer(self, node: TreeNode, target: ReferenceCommand, world: World, obstacles: np.ndarray) -> list[Chunk] | None:
        """Chunks leading from ``node`` toward ``target``; ``None`` if infeasible."""
        mu = world.mu
        frm = node.ref_end
        side_from = 1.0 if frm.z > 0 else -1.0
        side_to = 1.0 if target.z > 0 else -1.0
        if side_from == side_to:
            refs = connect_reference(frm, target, self.config.period, self.config.v_ref(frm.z), self.config.dt)
            out = self._try(node.end_array, node.memory, refs)
            if out is None or not self.chunk_ok(out[0], world, obstacles):
                return None
            return [Chunk(refs, out[0], out[1])]
        approach = crossing_point(frm, target, side_from * self.config.overshoot * mu)
        if np.linalg.norm(approach.position - frm.position) > self.config.v_ref(frm.z) * self.config.period + 1e-9:
            # not yet next to the crossing point: an ordinary step toward it
            return self.steer(node, approach, world, obstacles)
        return self.enforce_vertical_transition(frm, target, node.end_array, node.memory, world, obstacles)

    def enforce_vertical_transition(
        self,
        node_ref: ReferenceCommand,
        target_ref: ReferenceCommand,
        start_state,
        memory,
        world: World,
        obstacles: np.ndarray | None = None,
    ) -> list[Chunk] | None:
        """Approach and settle at the crossing point, cross vertically, resume.

        Returns the chunks of the manoeuvre or ``None`` when any chunk collides
        or violates the in-band lateral speed and tilt bounds.
        """
        c = self.config
        mu = world.mu
        if obstacles is None:
            obstacles = world.known_array()
        side = 1.0 if node_ref.z > 0 else -1.0
        if (1.0 if target_ref.z > 0 else -1.0) == side and abs(target_ref.z) > mu:
            raise ValueError("target lies on the same side of the band as the start")
        x = start_state.to_array() if isinstance(start_state, VehicleState) else np.asarray(start_state, dtype=float)
        mem = np.zeros(MEM_SIZE) if memory is None else np.asarray(memory, dtype=float)
        entry = crossing_point(node_ref, target_ref, side * c.overshoot * mu)
        entry = ReferenceCommand(entry.x, entry.y, entry.z, node_ref.psi)
        chunks: list[Chunk] = []

        def run(refs, transition=False):
            nonlocal x, mem
            out = self._try(x, mem, refs)
            if out is None or not self.chunk_ok(out[0], world, obstacles):
                return False
            chunks.append(Chunk(refs, out[0], out[1], transition))
            x, mem = out[0][-1], out[1]
            return True

        # (i) approach and settle
        if not run(connect_reference(node_ref, entry, c.period, c.v_ref(node_ref.z), c.dt)):
            return None
        hold = np.tile(entry.to_array(), (c.steps, 1))
        waited = 0.0
        while not self._settled(x) and waited < c.settle_max:
            if not run(hold):
                return None
            waited += c.period
        # (ii) vertical crossing
        exit_z = -side * c.overshoot * mu
        exit_ref = ReferenceCommand(entry.x, entry.y, exit_z, entry.psi)
        span = abs(exit_z - entry.z)
        n_cross = int(math.ceil(span / (c.v_vertical * c.period) - 1e-9))
        for k in range(n_cross):
            frm = ReferenceCommand(entry.x, entry.y, entry.z - side * min(k * c.v_vertical * c.period, span), entry.psi)
            if not run(connect_reference(frm, exit_ref, c.period, c.v_vertical, c.dt), transition=True):
                return None
        # hold until the vehicle has left the band with margin
        waited = 0.0
        hold = np.tile(exit_ref.to_array(), (c.steps, 1))
        while abs(x[2]) <= mu or abs(x[8]) > 0.05:
            if waited >= c.settle_max or not run(hold, transition=bool(abs(x[2]) <= mu)):
                return None
            waited += c.period
        # (iii) resume toward the target
        if np.linalg.norm(target_ref.position - exit_ref.position) > 1e-9:
            refs = connect_reference(exit_ref, target_ref, c.period, c.v_ref(exit_z), c.dt)
            out = self._try(x, mem, refs)
            if out is not None and self.chunk_ok(out[0], world, obstacles):
                chunks.append(Chunk(refs, out[0], out[1]))
        return chunks

    def _settled(self, x) -> bool:
        c = self.config
        return (
            abs(x[6]) < c.settle_speed
            and abs(x[7]) < c.settle_speed
            and abs(x[3]) < c.settle_tilt
            and abs(x[4]) < c.settle_tilt
        )

    # -- expansion -------------------------------------------------------

    def add_chunks(self, tree: Tree, parent: int, chunks: list[Chunk], world: World, goal: ReferenceCommand, obstacles) -> list[int]:
        added = []
        for ch in chunks:
            x_end = ch.states[-1]
            ref_end = ch.refs[-1]
            in_band = abs(x_end[2]) <= world.mu or abs(ref_end[2]) <= world.mu
            safe = (not in_band) and self.stoppable(x_end, ch.memory, ref_end, world, obstacles)
            parent = tree.add_node(
                parent, ch.refs, ch.states, ch.memory, goal=goal, safe=safe,
                transition=ch.transition, expandable=not in_band,
            )
            added.append(parent)
        return added

    def expand(self, tree: Tree, world: World, goal: ReferenceCommand, rng: np.random.Generator, budget: int) -> list[int]:
        """Run ``budget`` sample-and-connect attempts; returns the ids of new nodes."""
        if budget <= 0:
            raise ValueError("budget must be positive")
        obstacles = world.known_array()
        added: list[int] = []
        for _ in range(budget):
            sample = sample_reference(world, goal, self.config.goal_bias, rng)
            tried = 0
            for node in sort_candidate_nodes(tree, sample):
                if not node.expandable:
                    continue
                tried += 1
                chunks = self.steer(node, sample, world, obstacles)
                if chunks:
                    added += self.add_chunks(tree, node.id, chunks, world, goal, obstacles)
                    break
                if tried >= self.config.k_nearest:
                    break
        return added


def crossing_point(frm: ReferenceCommand, to: ReferenceCommand, z_level: float) -> ReferenceCommand:
    """Point of the segment ``frm -> to`` at height ``z_level`` (clamped to the segment)."""
    dz = to.z - frm.z
    t = 0.0 if abs(dz) < 1e-12 else min(max((z_level - frm.z) / dz, 0.0), 1.0)
    p = frm.position + t * (to.position - frm.position)
    return ReferenceCommand(float(p[0]), float(p[1]), float(z_level), frm.psi)
