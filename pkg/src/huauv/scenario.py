"""Scenario files: world, obstacles, start/goal, gains, vehicle constants, loop settings.

Scenarios are YAML documents with nested sections.  Every value that is
left out falls back to its default, so an almost empty file describes the
reference vehicle in the reference world.  Errors carry the offending
field's path and, when it came from a file, its line number.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import params as P
from .control import PID, GainSet, ReferenceCommand
from .dynamics import VehicleState
from .executor import ExecutorConfig
from .params import MediumParams, VehicleModel
from .planner import PlannerConfig
from .world import (
    DEFAULT_BOUNDS,
    DEFAULT_MU,
    DEFAULT_RADIUS_RANGE,
    DEFAULT_SENSE_RADIUS,
    DEFAULT_VEHICLE_RADIUS,
    Obstacle,
    World,
    generate_scenario,
)

PACKAGED = ("exp1", "exp2")


class ScenarioError(ValueError):
    """Invalid scenario content; ``path`` names the field, ``line`` is 1-based."""

    def __init__(self, message: str, path: str = "", line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if line is not None:
            where = f"line {line}: "
        if path:
            where += f"{path}: "
        super().__init__(where + message)


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------


def _tuple3x3(m) -> tuple:
    return tuple(tuple(float(v) for v in row) for row in m)


@dataclass(frozen=True)
class MediumSpec:
    density: float
    effective_mass: float
    effective_inertia: tuple
    thrust_coeff: float
    torque_coeff: float


AIR_DEFAULTS = MediumSpec(
    P.AIR_DENSITY, P.AIR_EFFECTIVE_MASS, _tuple3x3(P.AIR_EFFECTIVE_INERTIA), P.AIR_THRUST_COEFF, P.AIR_TORQUE_COEFF
)
WATER_DEFAULTS = MediumSpec(
    P.WATER_DENSITY, P.WATER_EFFECTIVE_MASS, _tuple3x3(P.WATER_EFFECTIVE_INERTIA), P.WATER_THRUST_COEFF, P.WATER_TORQUE_COEFF
)


@dataclass(frozen=True)
class VehicleSpec:
    mass: float = P.MASS
    gravity: tuple = P.GRAVITY
    arm_length: float = P.ARM_LENGTH
    metacentric_offset: float = P.METACENTRIC_OFFSET
    hull_volume: float = P.HULL_VOLUME
    inertia: tuple = _tuple3x3(P.INERTIA)
    drag_translational: tuple = P.DRAG_TRANSLATIONAL
    drag_rotational: tuple = P.DRAG_ROTATIONAL
    drag_frame: str = "body"
    air: MediumSpec = AIR_DEFAULTS
    water: MediumSpec = WATER_DEFAULTS

    def _medium(self, name: str, m: MediumSpec) -> MediumParams:
        return MediumParams(
            name=name,
            rho=m.density,
            m=self.mass,
            m_rho=m.effective_mass,
            J=np.array(self.inertia),
            J_rho=np.array(m.effective_inertia),
            zeta=m.thrust_coeff,
            eta=m.torque_coeff,
            drag_translational=np.array(self.drag_translational),
            drag_rotational=np.array(self.drag_rotational),
            l=self.arm_length,
            c=self.metacentric_offset,
            V=self.hull_volume,
            g=np.array(self.gravity),
            drag_frame=self.drag_frame,
        )

    def model(self) -> VehicleModel:
        water = self._medium("water", self.water)
        if water.rho * water.V <= water.m:
            raise ValueError("the vehicle must be positively buoyant (rho V > m)")
        return VehicleModel(self._medium("air", self.air), water)


@dataclass(frozen=True)
class ObstacleSpec:
    """Either an explicit list or a generator seed with count and radius range."""

    explicit: tuple[Obstacle, ...] | None = None
    seed: int = 0
    count: int = 20
    radius_range: tuple[float, float] = DEFAULT_RADIUS_RANGE

    def build(self, bounds, keep_clear, vehicle_radius) -> list[Obstacle]:
        if self.explicit is not None:
            return list(self.explicit)
        return generate_scenario(self.seed, self.count, bounds, self.radius_range, keep_clear, vehicle_radius)


@dataclass(frozen=True)
class StartSpec:
    position: tuple
    euler: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    angular_velocity: tuple = (0.0, 0.0, 0.0)

    def state(self) -> VehicleState:
        return VehicleState(
            np.array(self.position, dtype=float),
            np.array(self.euler, dtype=float),
            np.array(self.velocity, dtype=float),
            np.array(self.angular_velocity, dtype=float),
        )


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    start_spec: StartSpec
    goal: ReferenceCommand
    seed: int = 0
    bounds: tuple = DEFAULT_BOUNDS
    mu: float = DEFAULT_MU
    sense_radius: float = DEFAULT_SENSE_RADIUS
    vehicle_radius: float = DEFAULT_VEHICLE_RADIUS
    obstacles: ObstacleSpec = field(default_factory=ObstacleSpec)
    gains: GainSet = field(default_factory=GainSet)
    vehicle: VehicleSpec = field(default_factory=VehicleSpec)
    executor: ExecutorConfig = field(default_factory=ExecutorConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        for label, p in (("start.position", np.asarray(self.start_spec.position, float)), ("goal.position", self.goal.position)):
            if p.shape != (3,) or not np.all(np.isfinite(p)):
                raise ScenarioError("needs three finite coordinates", label)
            if np.any(p < b[:, 0]) or np.any(p > b[:, 1]):
                raise ScenarioError(f"{p.tolist()} lies outside the world bounds", label)
            if abs(p[2]) <= self.mu:
                raise ScenarioError(f"z = {p[2]} lies inside the transition band |z| <= {self.mu}", label)
        if abs(self.executor.period - self.planner.period) > 1e-12:
            raise ScenarioError("executor.period and planner.period must agree", "executor.period")

    def __eq__(self, other) -> bool:
        return isinstance(other, Scenario) and self.to_dict() == other.to_dict()

    @property
    def start(self) -> VehicleState:
        return self.start_spec.state()

    @cached_property
    def model(self) -> VehicleModel:
        return self.vehicle.model()

    @cached_property
    def world(self) -> World:
        keep = [self.start_spec.position, self.goal.position]
        obstacles = self.obstacles.build(self.bounds, keep, self.vehicle_radius)
        return World(
            bounds=self.bounds,
            mu=self.mu,
            obstacles_all=tuple(obstacles),
            sense_radius=self.sense_radius,
            vehicle_radius=self.vehicle_radius,
        )

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return _to_dict(self)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _plain(v):
    if isinstance(v, (tuple, list)):
        return [_plain(i) for i in v]
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _section(obj) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}


def _to_dict(s: Scenario) -> dict:
    ob = s.obstacles
    if ob.explicit is not None:
        obstacles = {"list": [{"center": list(o.center), "radius": o.radius} for o in ob.explicit]}
    else:
        obstacles = {"generator": {"seed": ob.seed, "count": ob.count, "radius_range": list(ob.radius_range)}}
    veh = {f.name: _plain(getattr(s.vehicle, f.name)) for f in fields(VehicleSpec) if f.name not in ("air", "water")}
    veh["air"] = _section(s.vehicle.air)
    veh["water"] = _section(s.vehicle.water)
    gains = {k: (dict(v) if isinstance(v, dict) else v) for k, v in asdict(s.gains).items()}
    return {
        "name": s.name,
        "seed": s.seed,
        "world": {
            "bounds": {"x": list(s.bounds[0]), "y": list(s.bounds[1]), "z": list(s.bounds[2])},
            "mu": s.mu,
            "sense_radius": s.sense_radius,
            "vehicle_radius": s.vehicle_radius,
        },
        "obstacles": obstacles,
        "start": _section(s.start_spec),
        "goal": {"position": [s.goal.x, s.goal.y, s.goal.z], "yaw": s.goal.psi},
        "gains": gains,
        "vehicle": veh,
        "executor": _section(s.executor),
        "planner": _section(s.planner),
    }


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(s.to_dict(), sort_keys=False, default_flow_style=None, width=100)


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dump_scenario(s))


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class _Lines:
    """Maps dotted field paths to source lines using the composed YAML tree."""

    def __init__(self, node):
        self.node = node

    def line(self, path: str) -> int | None:
        node = self.node
        best = node.start_mark.line + 1 if node is not None else None
        for part in path.split(".") if path else []:
            if isinstance(node, yaml.MappingNode):
                for k, v in node.value:
                    if k.value == part:
                        best = k.start_mark.line + 1
                        node = v
                        break
                else:
                    return best
            elif isinstance(node, yaml.SequenceNode) and part.isdigit() and int(part) < len(node.value):
                node = node.value[int(part)]
                best = node.start_mark.line + 1
            else:
                return best
        return best


class _Reader:
    def __init__(self, lines: _Lines):
        self.lines = lines

    def fail(self, message: str, path: str):
        raise ScenarioError(message, path, self.lines.line(path))

    def mapping(self, value, path: str, allowed) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail("expected a mapping", path)
        for key in value:
            if key not in allowed:
                self.fail(f"unknown field {key!r}", f"{path}.{key}" if path else str(key))
        return value

    def number(self, value, path: str, positive=False, nonneg=False) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(f"expected a number, got {value!r}", path)
        v = float(value)
        if not math.isfinite(v):
            self.fail("must be finite", path)
        if positive and not v > 0:
            self.fail(f"must be positive, got {v}", path)
        if nonneg and v < 0:
            self.fail(f"must be non-negative, got {v}", path)
        return v

    def integer(self, value, path: str) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(f"expected an integer, got {value!r}", path)
        return int(value)

    def vector(self, value, path: str, n: int) -> tuple:
        if not isinstance(value, (list, tuple)) or len(value) != n:
            self.fail(f"expected a list of {n} numbers", path)
        return tuple(self.number(v, f"{path}.{i}") for i, v in enumerate(value))

    def matrix(self, value, path: str) -> tuple:
        if not isinstance(value, (list, tuple)) or len(value) != 3:
            self.fail("expected a 3x3 matrix (three rows of three numbers)", path)
        return tuple(self.vector(row, f"{path}.{i}", 3) for i, row in enumerate(value))

    def dataclass_section(self, cls, value, path: str, base):
        """Override fields of ``base`` (a dataclass instance) from a mapping."""
        names = {f.name: f for f in fields(cls)}
        data = self.mapping(value, path, names)
        kwargs = {}
        for key, raw in data.items():
            p = f"{path}.{key}"
            current = getattr(base, key)
            if isinstance(current, bool):
                if not isinstance(raw, bool):
                    self.fail(f"expected true or false, got {raw!r}", p)
                kwargs[key] = raw
            elif isinstance(current, int) and not isinstance(current, bool):
                kwargs[key] = self.integer(raw, p)
            elif isinstance(current, float):
                kwargs[key] = self.number(raw, p)
            elif isinstance(current, str):
                if not isinstance(raw, str):
                    self.fail(f"expected a string, got {raw!r}", p)
                kwargs[key] = raw
            elif isinstance(current, PID):
                pid = self.mapping(raw, p, ("p", "d", "i"))
                kwargs[key] = PID(**{k: self.number(v, f"{p}.{k}", nonneg=True) for k, v in {**asdict(current), **pid}.items()})
            elif isinstance(current, tuple) and current and isinstance(current[0], tuple):
                kwargs[key] = self.matrix(raw, p)
            elif isinstance(current, tuple):
                kwargs[key] = self.vector(raw, p, len(current))
            else:  # pragma: no cover - every section field is one of the above
                self.fail("unsupported field", p)
        try:
            return replace(base, **kwargs)
        except (ValueError, TypeError) as exc:
            self.fail(str(exc), path)


_TOP = ("name", "seed", "world", "obstacles", "start", "goal", "gains", "vehicle", "executor", "planner")


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else None
        raise ScenarioError(f"{source}: malformed YAML: {exc.problem}", "", line) from exc
    r = _Reader(_Lines(node))
    data = r.mapping(data, "", _TOP)

    name = data.get("name", Path(source).stem if source != "<string>" else "scenario")
    if not isinstance(name, str):
        r.fail("expected a string", "name")
    seed = r.integer(data.get("seed", 0), "seed")

    world = r.mapping(data.get("world"), "world", ("bounds", "mu", "sense_radius", "vehicle_radius"))
    bounds = list(DEFAULT_BOUNDS)
    if "bounds" in world:
        b = r.mapping(world["bounds"], "world.bounds", ("x", "y", "z"))
        for i, axis in enumerate("xyz"):
            if axis in b:
                lo, hi = r.vector(b[axis], f"world.bounds.{axis}", 2)
                if not lo < hi:
                    r.fail("low bound must be below high bound", f"world.bounds.{axis}")
                bounds[i] = (lo, hi)
    mu = r.number(world.get("mu", DEFAULT_MU), "world.mu", positive=True)
    sense_radius = r.number(world.get("sense_radius", DEFAULT_SENSE_RADIUS), "world.sense_radius", positive=True)
    vehicle_radius = r.number(world.get("vehicle_radius", DEFAULT_VEHICLE_RADIUS), "world.vehicle_radius", nonneg=True)
    if not sense_radius > vehicle_radius:
        r.fail("must exceed world.vehicle_radius", "world.sense_radius")

    obstacles = _parse_obstacles(r, data.get("obstacles"), bounds)

    if "start" not in data:
        r.fail("missing start section", "start")
    st = r.mapping(data["start"], "start", ("position", "euler", "velocity", "angular_velocity"))
    if "position" not in st:
        r.fail("missing position", "start")
    start = StartSpec(**{k: r.vector(v, f"start.{k}", 3) for k, v in st.items()})

    if "goal" not in data:
        r.fail("missing goal section", "goal")
    g = r.mapping(data["goal"], "goal", ("position", "yaw"))
    if "position" not in g:
        r.fail("missing position", "goal")
    gp = r.vector(g["position"], "goal.position", 3)
    goal = ReferenceCommand(*gp, r.number(g.get("yaw", 0.0), "goal.yaw"))

    gains = r.dataclass_section(GainSet, data.get("gains"), "gains", GainSet())
    vehicle = _parse_vehicle(r, data.get("vehicle"))
    executor = r.dataclass_section(ExecutorConfig, data.get("executor"), "executor", ExecutorConfig())
    planner = r.dataclass_section(PlannerConfig, data.get("planner"), "planner", PlannerConfig())

    try:
        vehicle.model()
    except ValueError as exc:
        r.fail(str(exc), "vehicle")
    try:
        return Scenario(
            name=name,
            start_spec=start,
            goal=goal,
            seed=seed,
            bounds=tuple(bounds),
            mu=mu,
            sense_radius=sense_radius,
            vehicle_radius=vehicle_radius,
            obstacles=obstacles,
            gains=gains,
            vehicle=vehicle,
            executor=executor,
            planner=planner,
        )
    except ScenarioError as exc:
        raise ScenarioError(str(exc).split(": ", 1)[-1], exc.path, r.lines.line(exc.path)) from None


def _parse_obstacles(r: _Reader, value, bounds) -> ObstacleSpec:
    ob = r.mapping(value, "obstacles", ("generator", "list"))
    if "generator" in ob and "list" in ob:
        r.fail("give either a generator or a list, not both", "obstacles")
    if "list" in ob:
        items = ob["list"] or []
        if not isinstance(items, list):
            r.fail("expected a list of obstacles", "obstacles.list")
        out = []
        b = np.asarray(bounds)
        for i, item in enumerate(items):
            p = f"obstacles.list.{i}"
            d = r.mapping(item, p, ("center", "radius"))
            if "center" not in d or "radius" not in d:
                r.fail("needs center and radius", p)
            center = r.vector(d["center"], f"{p}.center", 3)
            if np.any(np.array(center) < b[:, 0]) or np.any(np.array(center) > b[:, 1]):
                r.fail("center lies outside the world bounds", f"{p}.center")
            out.append(Obstacle(center, r.number(d["radius"], f"{p}.radius", positive=True)))
        return ObstacleSpec(explicit=tuple(out))
    gen = r.mapping(ob.get("generator"), "obstacles.generator", ("seed", "count", "radius_range"))
    count = r.integer(gen.get("count", 20), "obstacles.generator.count")
    if count < 0:
        r.fail("must be non-negative", "obstacles.generator.count")
    rr = r.vector(gen.get("radius_range", list(DEFAULT_RADIUS_RANGE)), "obstacles.generator.radius_range", 2)
    if not 0 < rr[0] <= rr[1]:
        r.fail("must satisfy 0 < low <= high", "obstacles.generator.radius_range")
    return ObstacleSpec(seed=r.integer(gen.get("seed", 0), "obstacles.generator.seed"), count=count, radius_range=rr)


def _parse_vehicle(r: _Reader, value) -> VehicleSpec:
    allowed = [f.name for f in fields(VehicleSpec)]
    data = r.mapping(value, "vehicle", allowed)
    base = VehicleSpec()
    top = {k: v for k, v in data.items() if k not in ("air", "water")}
    spec = r.dataclass_section(VehicleSpec, top, "vehicle", base)
    if spec.drag_frame not in P.DRAG_FRAMES:
        r.fail(f"must be one of {P.DRAG_FRAMES}", "vehicle.drag_frame")
    for key in ("mass", "arm_length", "hull_volume"):
        if not getattr(spec, key) > 0:
            r.fail("must be positive", f"vehicle.{key}")
    air = r.dataclass_section(MediumSpec, data.get("air"), "vehicle.air", base.air)
    water = r.dataclass_section(MediumSpec, data.get("water"), "vehicle.water", base.water)
    for label, m in (("vehicle.air", air), ("vehicle.water", water)):
        for key in ("density", "effective_mass", "thrust_coeff"):
            if not getattr(m, key) > 0:
                r.fail("must be positive", f"{label}.{key}")
    spec = replace(spec, air=air, water=water)
    try:
        spec._medium("air", air)
        spec._medium("water", water)
    except ValueError as exc:
        r.fail(str(exc), "vehicle")
    return spec


def load_scenario(path) -> Scenario:
    """Load a scenario file, or one of the packaged scenarios by name."""
    p = Path(path)
    if not p.exists() and str(path) in PACKAGED:
        text = resources.files("huauv").joinpath("scenarios", f"{path}.yaml").read_text()
        return parse_scenario(text, f"{path}.yaml")
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {p}: {exc.strerror}") from exc
    return parse_scenario(text, str(p))


def random_scenario(seed: int, count: int = 20, crossing: bool = True) -> Scenario:
    """Random start and goal, on opposite sides of the surface when ``crossing``.

    Even seeds fly from air to water, odd seeds the other way.
    """
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-9.0, 9.0, size=(2, 2))
    z_air = rng.uniform(2.0, 9.0, size=2)
    z_water = rng.uniform(-4.5, -1.5, size=2)
    if crossing:
        z0, z1 = (z_air[0], z_water[0]) if seed % 2 == 0 else (z_water[0], z_air[0])
    else:
        z0, z1 = z_air
    return Scenario(
        name=f"random-{seed}",
        start_spec=StartSpec((float(xy[0, 0]), float(xy[0, 1]), float(z0))),
        goal=ReferenceCommand(float(xy[1, 0]), float(xy[1, 1]), float(z1), 0.0),
        seed=int(seed),
        obstacles=ObstacleSpec(seed=int(seed), count=count),
    )
