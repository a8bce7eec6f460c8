"""World geometry, spherical obstacles, sensing and collision queries.

The water surface is the plane ``z = 0``; the transition band is
``|z| <= mu``.  Collision checks inflate every obstacle by the vehicle
radius and only look at obstacles the vehicle has sensed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

DEFAULT_BOUNDS = ((-10.0, 10.0), (-10.0, 10.0), (-5.0, 10.0))
DEFAULT_MU = 0.8  # [m]
DEFAULT_SENSE_RADIUS = 3.0  # [m], to the obstacle surface
DEFAULT_VEHICLE_RADIUS = 0.4  # [m]
DEFAULT_RADIUS_RANGE = (0.5, 1.5)
PLACEMENT_CLEARANCE = 0.5  # [m] kept between generated obstacles and start/goal


class ScenarioGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if len(self.center) != 3:
            raise ValueError("obstacle center must have three coordinates")
        if not self.radius > 0:
            raise ValueError(f"obstacle radius must be positive, got {self.radius}")

    def surface_distance(self, point) -> float:
        return float(np.linalg.norm(np.asarray(point, dtype=float) - self.center)) - self.radius


def _bounds_array(bounds) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    if b.shape != (3, 2) or np.any(b[:, 0] >= b[:, 1]):
        raise ValueError("bounds must be three (low, high) pairs with low < high")
    return b


def _inside(point, bounds: np.ndarray) -> bool:
    return bool(np.all(point >= bounds[:, 0]) and np.all(point <= bounds[:, 1]))


@dataclass(frozen=True)
class World:
    """Immutable world snapshot; :func:`sense` returns an updated copy."""

    bounds: tuple = DEFAULT_BOUNDS
    mu: float = DEFAULT_MU
    obstacles_all: tuple[Obstacle, ...] = ()
    obstacles_known: frozenset[int] = field(default_factory=frozenset)
    sense_radius: float = DEFAULT_SENSE_RADIUS
    vehicle_radius: float = DEFAULT_VEHICLE_RADIUS
    water_level: float = 0.0

    def __post_init__(self):
        b = _bounds_array(self.bounds)
        object.__setattr__(self, "bounds", tuple(tuple(row) for row in b.tolist()))
        object.__setattr__(self, "obstacles_all", tuple(self.obstacles_all))
        object.__setattr__(self, "obstacles_known", frozenset(self.obstacles_known))
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.vehicle_radius < 0:
            raise ValueError("vehicle_radius must be non-negative")
        if not self.sense_radius > self.vehicle_radius:
            raise ValueError("sense_radius must exceed vehicle_radius")
        if self.water_level != 0.0:
            raise ValueError("the water surface is fixed at z = 0")
        for ob in self.obstacles_all:
            if not _inside(np.array(ob.center), b):
                raise ValueError(f"obstacle center {ob.center} lies outside the bounds")
        if any(i < 0 or i >= len(self.obstacles_all) for i in self.obstacles_known):
            raise ValueError("known obstacle index out of range")

    @property
    def bounds_array(self) -> np.ndarray:
        return np.array(self.bounds)

    @property
    def known(self) -> list[Obstacle]:
        return [self.obstacles_all[i] for i in sorted(self.obstacles_known)]

    def known_array(self) -> np.ndarray:
        """Known obstacles as an ``(n, 4)`` array of ``(x, y, z, radius)``."""
        rows = [(*ob.center, ob.radius) for ob in self.known]
        return np.array(rows, dtype=float).reshape(-1, 4)

    def all_array(self) -> np.ndarray:
        rows = [(*ob.center, ob.radius) for ob in self.obstacles_all]
        return np.array(rows, dtype=float).reshape(-1, 4)

    def with_all_known(self) -> "World":
        """The same world with full knowledge, used for ground-truth checks."""
        return replace(self, obstacles_known=frozenset(range(len(self.obstacles_all))))


def generate_scenario(
    seed: int,
    count: int,
    bounds=DEFAULT_BOUNDS,
    radius_range=DEFAULT_RADIUS_RANGE,
    keep_clear=(),
    vehicle_radius: float = DEFAULT_VEHICLE_RADIUS,
    clearance: float = PLACEMENT_CLEARANCE,
) -> list[Obstacle]:
    """Uniformly placed spheres, resampling any that would swallow a point of ``keep_clear``."""
    if count < 0:
        raise ValueError("count must be non-negative")
    lo, hi = radius_range
    if not 0 < lo <= hi:
        raise ValueError("radius range must satisfy 0 < low <= high")
    b = _bounds_array(bounds)
    keep = np.asarray(keep_clear, dtype=float).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    out: list[Obstacle] = []
    attempts = 0
    while len(out) < count:
        if attempts >= 10 * count:
            raise ScenarioGenerationError(f"could not place {count} obstacles in {attempts} attempts")
        attempts += 1
        center = rng.uniform(b[:, 0], b[:, 1])
        radius = rng.uniform(lo, hi)
        if keep.size and np.any(np.linalg.norm(keep - center, axis=1) <= radius + vehicle_radius + clearance):
            continue
        out.append(Obstacle(tuple(center), radius))
    return out


@njit(cache=True)
def _point_free(px, py, pz, obs, inflate, bounds):
    if px < bounds[0, 0] or px > bounds[0, 1]:
        return False
    if py < bounds[1, 0] or py > bounds[1, 1]:
        return False
    if pz < bounds[2, 0] or pz > bounds[2, 1]:
        return False
    for i in range(obs.shape[0]):
        dx = px - obs[i, 0]
        dy = py - obs[i, 1]
        dz = pz - obs[i, 2]
        r = obs[i, 3] + inflate
        if dx * dx + dy * dy + dz * dz <= r * r:
            return False
    return True


@njit(cache=True)
def positions_free(pos, obs, inflate, bounds):
    """Samples plus midpoints of gaps longer than ``inflate / 2``."""
    n = pos.shape[0]
    gap = 0.5 * inflate
    for k in range(n):
        if not _point_free(pos[k, 0], pos[k, 1], pos[k, 2], obs, inflate, bounds):
            return False
        if k + 1 < n:
            dx = pos[k + 1, 0] - pos[k, 0]
            dy = pos[k + 1, 1] - pos[k, 1]
            dz = pos[k + 1, 2] - pos[k, 2]
            if dx * dx + dy * dy + dz * dz > gap * gap:
                mx = 0.5 * (pos[k + 1, 0] + pos[k, 0])
                my = 0.5 * (pos[k + 1, 1] + pos[k, 1])
                mz = 0.5 * (pos[k + 1, 2] + pos[k, 2])
                if not _point_free(mx, my, mz, obs, inflate, bounds):
                    return False
    return True


def is_free(point, world: World) -> bool:
    p = np.asarray(point, dtype=float)
    return bool(_point_free(p[0], p[1], p[2], world.known_array(), world.vehicle_radius, world.bounds_array))


def _positions(states) -> np.ndarray:
    if isinstance(states, np.ndarray):
        arr = np.asarray(states, dtype=float)
        return np.ascontiguousarray(arr[:, :3] if arr.ndim == 2 else arr.reshape(1, -1)[:, :3])
    return np.array([np.asarray(s.p if hasattr(s, "p") else s, dtype=float)[:3] for s in states])


def trajectory_free(states, world: World) -> bool:
    """Accepts ``VehicleState`` objects, points, or an ``(n, >=3)`` array."""
    pos = _positions(states)
    if pos.shape[0] == 0:
        raise ValueError("trajectory must contain at least one state")
    return bool(positions_free(pos, world.known_array(), world.vehicle_radius, world.bounds_array))


def sense(position, world: World) -> World:
    p = np.asarray(position, dtype=float)
    seen = {
        i for i, ob in enumerate(world.obstacles_all) if ob.surface_distance(p) <= world.sense_radius
    }
    if seen <= world.obstacles_known:
        return world
    return replace(world, obstacles_known=world.obstacles_known | seen)


def in_transition_zone(z: float, mu: float) -> bool:
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    return abs(z) <= mu
