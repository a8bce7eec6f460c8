"""Medium-specific mixing and PID laws closing the loop around the model.

All rotor speeds and control channels are in rpm.  In air the rotors are
unidirectional; underwater the thrusters are reversible and the force
follows ``omega * |omega|``.

Controller memory is threaded explicitly.  It is packed in a flat array for
the compiled kernels:

    0..3   integrals (z, roll, pitch, yaw)
    4..7   previous errors (z, roll, pitch, yaw)
    8..9   previous planar position errors (x, y), world frame
    10     medium the memory belongs to (1 air, -1 water, 0 fresh)
    11     time [s]
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .dynamics import (
    OMEGA_MAX,
    IntegrationError,
    Medium,
    VehicleState,
    _check_state,
    rk4_step,
    wrap_angle,
)
from .params import P_G, P_M, P_RHO, P_V, P_ZETA, MediumParams, VehicleModel, air_params, water_params

DT = 0.01  # [s]
MEM_SIZE = 12

AIR_MIX = np.array(
    [
        [1.0, 0.0, -1.0, 1.0],
        [1.0, 1.0, 0.0, -1.0],
        [1.0, 0.0, 1.0, 1.0],
        [1.0, -1.0, 0.0, -1.0],
    ]
)
WATER_MIX = np.array(
    [
        [1.0, 0.0, -1.0, 0.0],
        [0.0, 1.0, 0.0, 1.0],
        [1.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, -1.0],
    ]
)


class ControlError(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceCommand:
    x: float
    y: float
    z: float
    psi: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.psi], dtype=float)

    @classmethod
    def from_array(cls, r) -> "ReferenceCommand":
        return cls(float(r[0]), float(r[1]), float(r[2]), float(r[3]))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class ControlInput:
    """``(dT, ch2, dTheta, dPsi)``; ``ch2`` is roll in air, surge underwater."""

    mode: Medium
    dT: float
    ch2: float
    dTheta: float
    dPsi: float

    def to_array(self) -> np.ndarray:
        return np.array([self.dT, self.ch2, self.dTheta, self.dPsi])


@dataclass(frozen=True)
class PID:
    p: float
    d: float
    i: float = 0.0


@dataclass(frozen=True)
class GainSet:
    """Controller gains; units are rpm per unit of error."""

    altitude: PID = PID(700.0, 600.0, 150.0)
    attitude: PID = PID(1500.0, 450.0, 0.0)
    position: PID = PID(0.35, 0.5)
    depth: PID = PID(1200.0, 700.0, 200.0)
    water_attitude: PID = PID(10000.0, 1000.0, 0.0)
    surge_v: float = 600.0
    surge_alpha: float = 5.0
    integral_limit: float = 50.0
    tilt_max: float = 0.35  # [rad]
    bearing_radius: float = 0.25  # [m], below this the command's yaw is held

    def __post_init__(self):
        for name in ("altitude", "attitude", "position", "depth", "water_attitude"):
            pid = getattr(self, name)
            if isinstance(pid, dict):
                pid = PID(**pid)
                object.__setattr__(self, name, pid)
            if min(pid.p, pid.d, pid.i) < 0:
                raise ValueError(f"{name} gains must be non-negative")
        if self.surge_v < 0 or self.surge_alpha < 0:
            raise ValueError("surge gains must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def pack(self) -> np.ndarray:
        a, t, p, d, w = self.altitude, self.attitude, self.position, self.depth, self.water_attitude
        return np.array(
            [
                a.p, a.d, a.i,
                t.p, t.d, t.i,
                p.p, p.d,
                d.p, d.d, d.i,
                w.p, w.d, w.i,
                self.surge_v, self.surge_alpha,
                self.integral_limit, self.tilt_max, self.bearing_radius,
            ]
        )


@dataclass(frozen=True)
class ControllerMemory:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(4))
    prev_error: np.ndarray = field(default_factory=lambda: np.zeros(6))
    mode: int = 0
    t: float = 0.0

    def to_array(self) -> np.ndarray:
        m = np.zeros(MEM_SIZE)
        m[0:4] = self.integral
        m[4:10] = self.prev_error
        m[10] = self.mode
        m[11] = self.t
        return m

    @classmethod
    def from_array(cls, m) -> "ControllerMemory":
        m = np.asarray(m, dtype=float)
        return cls(m[0:4].copy(), m[4:10].copy(), int(m[10]), float(m[11]))


# ---------------------------------------------------------------------------
# Compiled laws
# ---------------------------------------------------------------------------


@njit(cache=True)
def _clip(a, lo, hi):
    return min(max(a, lo), hi)


@njit(cache=True)
def _pid(e, prev, integral, kp, kd, ki, dt, fresh, limit):
    de = 0.0 if fresh else (e - prev) / dt
    integral = _clip(integral + e * dt, -limit, limit)
    return kp * e + kd * de + ki * integral, integral


@njit(cache=True)
def _hover_bias(P):
    g = P[P_G:P_G + 3]
    gnorm = math.sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
    return math.sqrt(P[P_M] * gnorm / (4.0 * P[P_RHO] * P[P_ZETA]))


@njit(cache=True)
def _buoyancy_bias(P):
    g = P[P_G:P_G + 3]
    gnorm = math.sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
    net = abs(P[P_M] - P[P_RHO] * P[P_V]) * gnorm
    return math.sqrt(net / (2.0 * P[P_RHO] * P[P_ZETA]))


@njit(cache=True)
def _position_law(x, ref, mem, G, dt, fresh):
    """Planar PD rotated into the yaw frame -> (roll_ref, pitch_ref)."""
    ex = ref[0] - x[0]
    ey = ref[1] - x[1]
    dex = 0.0 if fresh else (ex - mem[8]) / dt
    dey = 0.0 if fresh else (ey - mem[9]) / dt
    c, s = math.cos(x[5]), math.sin(x[5])
    bx = G[6] * (c * ex + s * ey) + G[7] * (c * dex + s * dey)
    by = G[6] * (-s * ex + c * ey) + G[7] * (-s * dex + c * dey)
    tilt = G[17]
    # positive pitch accelerates along body +x, positive roll along body -y
    return _clip(-by, -tilt, tilt), _clip(bx, -tilt, tilt), ex, ey


@njit(cache=True)
def _air_control(x, ref, mem, G, P, dt):
    """Returns (u, memory, ok)."""
    out = mem.copy()
    fresh = mem[10] != 1.0
    if fresh:
        out[0:4] = 0.0
    u = np.zeros(4)
    cc = math.cos(x[3]) * math.cos(x[4])
    if cc <= 1e-6:
        return u, out, False
    lim = G[16]
    phi_ref, theta_ref, ex, ey = _position_law(x, ref, mem, G, dt, fresh)
    ez = ref[2] - x[2]
    pz, out[0] = _pid(ez, mem[4], out[0], G[0], G[1], G[2], dt, fresh, lim)
    u[0] = pz / cc + _hover_bias(P)
    e_phi = phi_ref - x[3]
    e_theta = theta_ref - x[4]
    e_psi = wrap_angle(ref[3] - x[5])
    u[1], out[1] = _pid(e_phi, mem[5], out[1], G[3], G[4], G[5], dt, fresh, lim)
    u[2], out[2] = _pid(e_theta, mem[6], out[2], G[3], G[4], G[5], dt, fresh, lim)
    # yaw derivative uses the wrapped difference
    prev_psi = e_psi if fresh else e_psi - wrap_angle(e_psi - mem[7])
    u[3], out[3] = _pid(e_psi, prev_psi, out[3], G[3], G[4], G[5], dt, fresh, lim)
    out[4] = ez
    out[5] = e_phi
    out[6] = e_theta
    out[7] = e_psi
    out[8] = ex
    out[9] = ey
    out[10] = 1.0
    out[11] = mem[11] + dt
    return u, out, True


@njit(cache=True)
def _surge_heading(x, ref, G):
    """Distance term of the surge law and the yaw it steers to.

    The planar distance is projected on the current heading, so a vehicle
    pointing away from its target does not accelerate away from it, and
    the reversible thrusters back up when the target is behind.  Inside the
    bearing radius the bearing is ill-conditioned and the command's yaw is
    held instead.
    """
    dx = ref[0] - x[0]
    dy = ref[1] - x[1]
    along = dx * math.cos(x[5]) + dy * math.sin(x[5])
    if dx * dx + dy * dy > G[18] * G[18]:
        return along, math.atan2(dy, dx)
    return along, ref[3]


@njit(cache=True)
def _yaw_rate(x):
    return math.sin(x[4]) * x[9] + math.cos(x[3]) * math.cos(x[4]) * x[11]


@njit(cache=True)
def _surge_allocation(surge, yaw):
    """Common-mode speed giving the forward force of ``surge`` on both rotors.

    Thrust is quadratic in speed, so with a yaw differential ``yaw`` the pair
    ``surge +/- yaw`` pushes ``4 surge |yaw|`` instead of ``2 surge |surge|``.
    Solving for the common mode keeps steering from leaking into surge.
    """
    target = 2.0 * surge * abs(surge)
    a = abs(yaw)
    if abs(target) <= 4.0 * a * a:
        return target / (4.0 * a) if a > 0.0 else 0.0
    return math.copysign(math.sqrt(0.5 * abs(target) - a * a), surge)


@njit(cache=True)
def _water_control(x, ref, mem, G, P, dt):
    out = mem.copy()
    fresh = mem[10] != -1.0
    if fresh:
        out[0:4] = 0.0
    u = np.zeros(4)
    cc = math.cos(x[3]) * math.cos(x[4])
    if cc <= 1e-6:
        return u, out, False
    lim = G[16]
    ez = ref[2] - x[2]
    pz, out[0] = _pid(ez, mem[4], out[0], G[8], G[9], G[10], dt, fresh, lim)
    u[0] = pz / cc - _buoyancy_bias(P)
    d, heading = _surge_heading(x, ref, G)
    e_psi = wrap_angle(heading - x[5])
    u[1] = G[14] * d + G[15] * e_psi * e_psi
    e_theta = -x[4]
    u[2], out[2] = _pid(e_theta, mem[6], out[2], G[11], G[12], G[13], dt, fresh, lim)
    # derivative on the measured yaw rate: the steering target jumps when
    # the vehicle enters the bearing radius
    out[3] = _clip(out[3] + e_psi * dt, -lim, lim)
    u[3] = G[11] * e_psi - G[12] * _yaw_rate(x) + G[13] * out[3]
    u[3] = _clip(u[3], -0.5 * OMEGA_MAX, 0.5 * OMEGA_MAX)
    u[1] = _surge_allocation(u[1], u[3])
    out[1] = 0.0
    out[4] = ez
    out[5] = 0.0
    out[6] = e_theta
    out[7] = e_psi
    out[8] = ref[0] - x[0]
    out[9] = ref[1] - x[1]
    out[10] = -1.0
    out[11] = mem[11] + dt
    return u, out, True


@njit(cache=True)
def _mix(M, u, lo, hi):
    w = M @ u
    for i in range(4):
        w[i] = _clip(w[i], lo, hi)
    return w


@njit(cache=True)
def control_kernel(x, ref, mem, G, P_air, P_water, dt, air_mix, water_mix):
    """Law selection by the sign of z, then mixing.  Returns (rotors, mem, ok)."""
    if x[2] > 0.0:
        u, out, ok = _air_control(x, ref, mem, G, P_air, dt)
        return _mix(air_mix, u, 0.0, OMEGA_MAX), out, ok
    u, out, ok = _water_control(x, ref, mem, G, P_water, dt)
    return _mix(water_mix, u, -OMEGA_MAX, OMEGA_MAX), out, ok


@njit(cache=True)
def rollout_kernel(x0, mem0, refs, G, P_air, P_water, dt, air_mix, water_mix):
    """Closed-loop propagation under a per-step reference sequence.

    Returns ``(states, rotors, mem, n_ok)``: ``states`` has ``len(refs) + 1``
    rows starting with ``x0``; ``n_ok < len(refs)`` flags a failure at that
    step (divergence or attitude singularity).
    """
    n = refs.shape[0]
    states = np.empty((n + 1, 12))
    rotors = np.zeros((n, 4))
    states[0] = x0
    x = x0.copy()
    mem = mem0.copy()
    for k in range(n):
        w, mem, ok = control_kernel(x, refs[k], mem, G, P_air, P_water, dt, air_mix, water_mix)
        if not ok:
            return states[: k + 1], rotors[:k], mem, k
        x, ok = rk4_step(x, w, dt, P_air, P_water, 0)
        if not ok:
            return states[: k + 1], rotors[:k], mem, k
        rotors[k] = w
        states[k + 1] = x
    return states, rotors, mem, n


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def _ref_array(ref) -> np.ndarray:
    return ref.to_array() if isinstance(ref, ReferenceCommand) else np.asarray(ref, dtype=float)


def _mem_array(memory) -> np.ndarray:
    if memory is None:
        return np.zeros(MEM_SIZE)
    return memory.to_array() if isinstance(memory, ControllerMemory) else np.asarray(memory, dtype=float)


def aerial_mix(u: ControlInput, clamp: bool = True) -> np.ndarray:
    if u.mode != Medium.AIR:
        raise ControlError("aerial mixing needs an air-mode input")
    w = AIR_MIX @ u.to_array()
    return np.clip(w, 0.0, OMEGA_MAX) if clamp else w


def underwater_mix(u: ControlInput, clamp: bool = True) -> np.ndarray:
    if u.mode != Medium.WATER:
        raise ControlError("underwater mixing needs a water-mode input")
    w = WATER_MIX @ u.to_array()
    return np.clip(w, -OMEGA_MAX, OMEGA_MAX) if clamp else w


def _fresh_for(memory, mode: int) -> bool:
    return memory is None or int(_mem_array(memory)[10]) != mode


def _tilt_factor(x) -> float:
    cc = math.cos(x[3]) * math.cos(x[4])
    if cc <= 1e-6:
        raise ControlError("roll or pitch at +-pi/2: thrust compensation is singular")
    return cc


def aerial_altitude_law(state, ref, gains: GainSet, memory=None, params: MediumParams | None = None, dt: float = DT) -> float:
    """Collective channel: tilt-compensated PID on altitude plus hover bias."""
    x = _check_state(state)
    r = _ref_array(ref)
    mem = _mem_array(memory)
    fresh = _fresh_for(memory, 1)
    integral = 0.0 if fresh else mem[0]
    g = gains.altitude
    cc = _tilt_factor(x)
    pz, _ = _pid(r[2] - x[2], mem[4], integral, g.p, g.d, g.i, dt, fresh, gains.integral_limit)
    return pz / cc + (params or air_params()).hover_speed()


def aerial_attitude_law(state, refs, gains: GainSet, memory=None, dt: float = DT) -> tuple[float, float, float]:
    """Independent PID channels on roll, pitch and yaw.

    ``refs`` is ``(roll_ref, pitch_ref, yaw_ref)``.
    """
    x = _check_state(state)
    mem = _mem_array(memory)
    fresh = _fresh_for(memory, 1)
    g = gains.attitude
    errors = (refs[0] - x[3], refs[1] - x[4], wrap_angle(refs[2] - x[5]))
    out = []
    for k, e in enumerate(errors):
        prev = mem[5 + k]
        if k == 2 and not fresh:
            prev = e - wrap_angle(e - prev)
        integral = 0.0 if fresh else mem[1 + k]
        val, _ = _pid(e, prev, integral, g.p, g.d, g.i, dt, fresh, gains.integral_limit)
        out.append(val)
    return tuple(out)


def aerial_position_law(state, ref, gains: GainSet, memory=None, dt: float = DT) -> tuple[float, float]:
    """Planar error to ``(roll_ref, pitch_ref)``, clamped to the tilt limit."""
    x = _check_state(state)
    fresh = _fresh_for(memory, 1)
    phi_ref, theta_ref, _, _ = _position_law(x, _ref_array(ref), _mem_array(memory), gains.pack(), dt, fresh)
    return phi_ref, theta_ref


def underwater_depth_law(state, ref, gains: GainSet, memory=None, params: MediumParams | None = None, dt: float = DT) -> float:
    """Tilt-compensated depth PID minus the buoyancy-cancelling bias."""
    x = _check_state(state)
    r = _ref_array(ref)
    mem = _mem_array(memory)
    fresh = _fresh_for(memory, -1)
    integral = 0.0 if fresh else mem[0]
    g = gains.depth
    cc = _tilt_factor(x)
    pz, _ = _pid(r[2] - x[2], mem[4], integral, g.p, g.d, g.i, dt, fresh, gains.integral_limit)
    return pz / cc - (params or water_params()).buoyancy_bias_speed()


def underwater_attitude_law(state, refs, gains: GainSet, memory=None, dt: float = DT) -> tuple[float, float]:
    """Pitch and yaw PID; roll is left to the passive restoring moment.

    ``refs`` is ``(pitch_ref, yaw_ref)``.  The yaw derivative acts on the
    measured yaw rate and the yaw output is limited to half the rotor range.
    """
    x = _check_state(state)
    mem = _mem_array(memory)
    fresh = _fresh_for(memory, -1)
    g = gains.water_attitude
    e_theta = refs[0] - x[4]
    e_psi = wrap_angle(refs[1] - x[5])
    lim = gains.integral_limit
    d_theta, _ = _pid(e_theta, mem[6], 0.0 if fresh else mem[2], g.p, g.d, g.i, dt, fresh, lim)
    integral = min(max((0.0 if fresh else mem[3]) + e_psi * dt, -lim), lim)
    d_psi = g.p * e_psi - g.d * _yaw_rate(x) + g.i * integral
    return d_theta, float(np.clip(d_psi, -0.5 * OMEGA_MAX, 0.5 * OMEGA_MAX))


def underwater_surge_law(state, ref, gains: GainSet) -> float:
    """Forward thrust from planar distance and squared heading error."""
    x = _check_state(state)
    d, heading = _surge_heading(x, _ref_array(ref), gains.pack())
    e_psi = wrap_angle(heading - x[5])
    return gains.surge_v * d + gains.surge_alpha * e_psi**2


def closed_loop_step(
    state,
    ref,
    gains: GainSet,
    memory: ControllerMemory | None,
    dt: float = DT,
    model: VehicleModel | None = None,
) -> tuple[VehicleState, ControllerMemory]:
    """One control period: controller output mixed to rotors, then integrated.

    The laws and the model are both picked from the sign of z, so the
    medium never needs to be passed in.  Planning and execution go through
    the same kernel.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    model = model or VehicleModel()
    x = _check_state(state)
    states, _, mem, n_ok = rollout_kernel(
        x,
        _mem_array(memory),
        _ref_array(ref).reshape(1, 4),
        gains.pack(),
        model.air.pack(),
        model.water.pack(),
        float(dt),
        AIR_MIX,
        WATER_MIX,
    )
    if n_ok < 1:
        raise IntegrationError("closed-loop step failed (divergence or attitude singularity)")
    return VehicleState.from_array(states[-1]), ControllerMemory.from_array(mem)


class Rollout:
    """Pre-packed closed-loop propagator for one (gains, model) pair."""

    def __init__(self, gains: GainSet | None = None, model: VehicleModel | None = None, dt: float = DT):
        self.gains = gains or GainSet()
        self.model = model or VehicleModel()
        self.dt = dt
        self._G = self.gains.pack()
        self._Pa = self.model.air.pack()
        self._Pw = self.model.water.pack()

    def __call__(self, x0: np.ndarray, mem0: np.ndarray, refs: np.ndarray):
        """Returns ``(states, rotors, memory, ok)``."""
        refs = np.ascontiguousarray(refs, dtype=float)
        states, rotors, mem, n_ok = rollout_kernel(
            np.asarray(x0, dtype=float), np.asarray(mem0, dtype=float), refs,
            self._G, self._Pa, self._Pw, self.dt, AIR_MIX, WATER_MIX,
        )
        return states, rotors, mem, n_ok == refs.shape[0]
